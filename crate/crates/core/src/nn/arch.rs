//! Generator backbones and the patch discriminator.

use std::fmt;
use std::str::FromStr;

use super::graph::{GraphBuilder, NetRole, NetworkDescription, NodeId};
use crate::error::{Error, Result};

pub const IMAGE_CHANNELS: usize = 3;
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    ShallowUnet,
    Unet,
    DeepUnet,
    ResidualUnet,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::ShallowUnet,
        Variant::Unet,
        Variant::DeepUnet,
        Variant::ResidualUnet,
    ];

    /// Number of downsampling stages.
    pub fn depth(self) -> usize {
        match self {
            Variant::ShallowUnet => 3,
            Variant::Unet | Variant::ResidualUnet => 4,
            Variant::DeepUnet => 5,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::ShallowUnet => "shallow_unet",
            Variant::Unet => "unet",
            Variant::DeepUnet => "deep_unet",
            Variant::ResidualUnet => "residual_unet",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Spec(format!("unknown variant {s:?}")))
    }
}

/// Generator configuration shared by `G` and `F`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ArchitectureSpec {
    pub variant: Variant,
    pub base_channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ArchitectureSpec {
    pub fn new(variant: Variant, base_channels: usize, height: usize, width: usize) -> Self {
        Self {
            variant,
            base_channels,
            height,
            width,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 {
            return Err(Error::Spec("base_channels must be positive".into()));
        }
        let m = 1usize << self.variant.depth();
        if self.height == 0 || self.width == 0 || self.height % m != 0 || self.width % m != 0 {
            return Err(Error::Spec(format!(
                "{} needs input sides divisible by {m}, got {}x{}",
                self.variant, self.height, self.width
            )));
        }
        Ok(())
    }

    /// Channel width at resolution level `level`, capped at 8x base.
    pub fn channels_at(&self, level: usize) -> usize {
        (self.base_channels << level.min(3)).min(8 * self.base_channels)
    }
}

/// Patch discriminator configuration shared by `D_R` and `D_V`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DiscriminatorSpec {
    pub base_channels: usize,
    pub height: usize,
    pub width: usize,
}

impl DiscriminatorSpec {
    pub const DEFAULT_BASE: usize = 64;
    /// Smallest side for which every normalized layer sees more than one cell.
    pub const MIN_SIDE: usize = 32;

    pub fn new(height: usize, width: usize) -> Self {
        Self {
            base_channels: Self::DEFAULT_BASE,
            height,
            width,
        }
    }

    pub fn with_base(mut self, base: usize) -> Self {
        self.base_channels = base;
        self
    }
}

fn conv_norm_relu(b: &mut GraphBuilder, prefix: &str, x: NodeId, out_ch: usize, k: usize, s: usize, p: usize) -> Result<NodeId> {
    let c = b.conv(&format!("{prefix}/conv"), x, out_ch, k, s, p)?;
    let n = b.instance_norm(&format!("{prefix}/norm"), c);
    Ok(b.relu(&format!("{prefix}/relu"), n))
}

/// Two 3x3 convolutions with an identity (or 1x1 projection) shortcut:
/// conv, norm, relu, conv, norm, add, relu.
pub fn residual_unit(b: &mut GraphBuilder, prefix: &str, x: NodeId, out_ch: usize) -> Result<NodeId> {
    let in_ch = b.shape(x)[0];
    let c1 = b.conv(&format!("{prefix}/conv1"), x, out_ch, 3, 1, 1)?;
    let n1 = b.instance_norm(&format!("{prefix}/norm1"), c1);
    let r1 = b.relu(&format!("{prefix}/relu1"), n1);
    let c2 = b.conv(&format!("{prefix}/conv2"), r1, out_ch, 3, 1, 1)?;
    let n2 = b.instance_norm(&format!("{prefix}/norm2"), c2);
    let shortcut = if in_ch == out_ch {
        x
    } else {
        b.conv(&format!("{prefix}/proj"), x, out_ch, 1, 1, 0)?
    };
    let sum = b.residual_add(&format!("{prefix}/add"), n2, shortcut)?;
    Ok(b.relu(&format!("{prefix}/relu"), sum))
}

fn stage_block(b: &mut GraphBuilder, residual: bool, prefix: &str, x: NodeId, out_ch: usize) -> Result<NodeId> {
    if residual {
        residual_unit(b, prefix, x, out_ch)
    } else {
        conv_norm_relu(b, prefix, x, out_ch, 3, 1, 1)
    }
}

/// Builds a U-Net-family generator.
///
/// Level `k` runs at `1/2^k` resolution. Each encoder level applies its
/// stage block, records a skip, then downsamples with a stride-2 4x4
/// convolution. The bottleneck is a plain block. Each decoder level upsamples
/// with a stride-2 transposed convolution, concatenates the matching skip and
/// applies its stage block. A 1x1 convolution and tanh produce the image.
pub fn build_translator(spec: &ArchitectureSpec) -> Result<NetworkDescription> {
    spec.validate()?;
    let depth = spec.variant.depth();
    let residual = spec.variant == Variant::ResidualUnet;
    let mut b = GraphBuilder::new(IMAGE_CHANNELS, spec.height, spec.width);
    let mut x = b.input();
    let mut skips = Vec::with_capacity(depth);
    for level in 0..depth {
        x = stage_block(&mut b, residual, &format!("enc{level}"), x, spec.channels_at(level))?;
        skips.push(x);
        x = conv_norm_relu(&mut b, &format!("enc{level}/down"), x, spec.channels_at(level + 1), 4, 2, 1)?;
    }
    x = conv_norm_relu(&mut b, "bottleneck", x, spec.channels_at(depth), 3, 1, 1)?;
    for level in (0..depth).rev() {
        let prefix = format!("dec{level}");
        let up = b.conv_transpose(&format!("{prefix}/up/conv"), x, spec.channels_at(level), 4, 2, 1)?;
        let up = b.instance_norm(&format!("{prefix}/up/norm"), up);
        let up = b.relu(&format!("{prefix}/up/relu"), up);
        let joined = b.skip_concat(&format!("{prefix}/skip"), up, skips[level])?;
        x = stage_block(&mut b, residual, &prefix, joined, spec.channels_at(level))?;
    }
    let out = b.conv("out/conv", x, IMAGE_CHANNELS, 1, 1, 0)?;
    let out = b.tanh("out/tanh", out);
    Ok(b.finish(NetRole::Generator, out))
}

/// Patch discriminator emitting a grid of real/fake probabilities.
///
/// Three stride-2 and one stride-1 4x4 convolutions (base, 2x, 4x, 8x
/// channels) with leaky ReLU and instance norm after all but the first, then
/// a 3x3 single-channel head and a sigmoid. A 256x256 input yields a 31x31
/// grid; the grid side is `side / 8 - 1`.
pub fn build_discriminator(spec: &DiscriminatorSpec) -> Result<NetworkDescription> {
    if spec.height < DiscriminatorSpec::MIN_SIDE || spec.width < DiscriminatorSpec::MIN_SIDE {
        return Err(Error::Spec(format!(
            "discriminator input {}x{} below minimum side {}",
            spec.height,
            spec.width,
            DiscriminatorSpec::MIN_SIDE
        )));
    }
    if spec.base_channels == 0 {
        return Err(Error::Spec("discriminator base_channels must be positive".into()));
    }
    let base = spec.base_channels;
    let mut b = GraphBuilder::new(IMAGE_CHANNELS, spec.height, spec.width);
    let mut x = b.conv("layer0/conv", b.input(), base, 4, 2, 1)?;
    x = b.leaky_relu("layer0/lrelu", x, LEAKY_SLOPE);
    for (i, (mult, stride)) in [(2, 2), (4, 2), (8, 1)].into_iter().enumerate() {
        let prefix = format!("layer{}", i + 1);
        x = b.conv(&format!("{prefix}/conv"), x, base * mult, 4, stride, 1)?;
        x = b.instance_norm(&format!("{prefix}/norm"), x);
        x = b.leaky_relu(&format!("{prefix}/lrelu"), x, LEAKY_SLOPE);
    }
    let head = b.conv("head/conv", x, 1, 3, 1, 1)?;
    let out = b.sigmoid("head/sigmoid", head);
    Ok(b.finish(NetRole::Discriminator, out))
}
