//! Synthetic two-domain dataset: rendered tube-phantom frames as the
//! virtual domain and restyled renders as the "real" domain.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cleansing::rgb_to_hsv;
use crate::dataset::{export_frames, Domain};
use crate::error::Result;
use crate::image::ImageTensor;
use crate::path::{fly_through, FlyThroughPath, Intrinsics, Keyframe};
use crate::render::{render_view, Camera, RenderParams, TransferFunction};
use crate::volume::{make_phantom, Phantom, PhantomKind, PhantomParams};

pub const TOY_SIZE: usize = 64;
pub const TOY_COUNT: usize = 200;
const TUBE_DIMS: [usize; 3] = [40, 40, 220];
const MARGIN: f64 = 14.0;
const REAL_SEED_OFFSET: u64 = 0x5245_414c;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ToyConfig {
    pub size: usize,
    pub count: usize,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            size: TOY_SIZE,
            count: TOY_COUNT,
            seed: 7,
        }
    }
}

/// Folded hollow tube, 1 mm voxels, axis along z.
pub fn toy_phantom() -> Result<Phantom> {
    make_phantom(
        PhantomKind::Tube,
        TUBE_DIMS,
        PhantomParams {
            radius: 13.0,
            fold_amplitude: 0.3,
            fold_period: 18.0,
            ..Default::default()
        },
    )
}

fn random_camera(ph: &Phantom, size: usize, rng: &mut ChaCha8Rng) -> Result<Camera> {
    let c = ph.center_world();
    let z_len = (TUBE_DIMS[2] - 1) as f64 * ph.params.spacing_mm;
    let z = ph.volume.origin[2] + rng.gen_range(MARGIN..z_len - MARGIN);
    let (dx, dy) = (rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0));
    let pos = [c[0] + dx, c[1] + dy, z];
    let dir = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let target = [
        c[0] + rng.gen_range(-5.0..5.0),
        c[1] + rng.gen_range(-5.0..5.0),
        z + dir * rng.gen_range(8.0..20.0),
    ];
    let roll = rng.gen_range(0.0..std::f64::consts::TAU);
    Camera::look_at(pos, target, [roll.cos(), roll.sin(), 0.0], Camera::DEFAULT_FOV, size, size)
}

fn render_frames(cfg: &ToyConfig, seed: u64) -> Result<Vec<ImageTensor>> {
    let ph = toy_phantom()?;
    let tf = TransferFunction::colon();
    let rp = RenderParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..cfg.count)
        .map(|_| render_view(&ph.volume, &random_camera(&ph, cfg.size, &mut rng)?, &tf, &rp))
        .collect()
}

/// Domain V: plain renders from random poses inside the lumen.
pub fn toy_virtual_frames(cfg: &ToyConfig) -> Result<Vec<ImageTensor>> {
    render_frames(cfg, cfg.seed)
}

/// Domain R: renders from independent poses, restyled by [`restyle`].
pub fn toy_real_frames(cfg: &ToyConfig) -> Result<Vec<ImageTensor>> {
    let seed = cfg.seed ^ REAL_SEED_OFFSET;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.rotate_left(7));
    Ok(render_frames(cfg, seed)?.iter().map(|im| restyle(im, &mut rng)).collect())
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let c = v * s;
    let hp = h.rem_euclid(360.0) / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// Bilinear upsampling of a coarse random lattice, values in [-1, 1].
fn smooth_noise(size: usize, cells: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = cells + 1;
    let lattice: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut out = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let fy = y as f64 / size as f64 * cells as f64;
            let fx = x as f64 / size as f64 * cells as f64;
            let (iy, ix) = (fy as usize, fx as usize);
            let (ty, tx) = (fy - iy as f64, fx - ix as f64);
            let at = |j: usize, i: usize| lattice[j * n + i];
            let top = at(iy, ix) * (1.0 - tx) + at(iy, ix + 1) * tx;
            let bottom = at(iy + 1, ix) * (1.0 - tx) + at(iy + 1, ix + 1) * tx;
            out.push(top * (1.0 - ty) + bottom * ty);
        }
    }
    out
}

/// Warmer hue, stronger saturation, a mucosa-like low-frequency texture and
/// fine sensor grain.
pub fn restyle(img: &ImageTensor, rng: &mut ChaCha8Rng) -> ImageTensor {
    let size = img.width.max(img.height);
    let texture = smooth_noise(size, 6, rng);
    let hue_shift = rng.gen_range(14.0..22.0);
    let gain = rng.gen_range(0.85..1.0);
    ImageTensor::from_fn(img.height, img.width, |y, x| {
        let p = img.pixel(y, x);
        let (h, s, v) = rgb_to_hsv(p[0] as f64, p[1] as f64, p[2] as f64);
        let tex = 1.0 + 0.18 * texture[y * size + x];
        let grain = 1.0 + 0.04 * rng.gen_range(-1.0..1.0);
        let v = (v * gain * tex * grain).clamp(0.0, 1.0);
        let rgb = hsv_to_rgb(h + hue_shift, (s * 1.6 + 0.1).min(1.0), v);
        rgb.map(|c| c.clamp(0.0, 1.0) as f32)
    })
}

/// Writes `virtual/` and `real/` frame folders with manifests; returns the
/// two manifest paths.
pub fn write_toy_dataset(dir: &Path, cfg: &ToyConfig) -> Result<(PathBuf, PathBuf)> {
    let v = export_frames(&toy_virtual_frames(cfg)?, &dir.join("virtual"), Domain::Virtual, "toy_render")?;
    let r = export_frames(&toy_real_frames(cfg)?, &dir.join("real"), Domain::Real, "toy_restyle")?;
    Ok((v, r))
}

/// A straight fly-through down the tube axis with `frames` samples.
pub fn toy_flythrough(size: usize, frames: usize) -> Result<Vec<ImageTensor>> {
    let ph = toy_phantom()?;
    let c = ph.center_world();
    let z0 = ph.volume.origin[2] + 40.0;
    let kf = |z: f64, dx: f64| Keyframe {
        position: [c[0] + dx, c[1], z],
        target: [c[0], c[1], z + 15.0],
    };
    let path = FlyThroughPath::new(vec![kf(z0, 0.0), kf(z0 + 15.0, 2.0), kf(z0 + 30.0, 0.0)], frames.div_ceil(2).max(1))?;
    let intr = Intrinsics {
        width: size,
        height: size,
        ..Default::default()
    };
    let mut out = fly_through(&ph.volume, &path, &intr, &TransferFunction::colon(), &RenderParams::default())?;
    out.truncate(frames);
    Ok(out)
}
