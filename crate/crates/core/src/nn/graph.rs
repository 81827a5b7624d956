//! Declarative layer graphs.

use std::fmt;

use crate::error::{Error, Result};

pub type NodeId = usize;

#[derive(Clone, Debug, PartialEq)]
pub enum NodeKind {
    Input,
    Conv { kernel: usize, stride: usize, padding: usize },
    TransposedConv { kernel: usize, stride: usize, padding: usize },
    InstanceNorm,
    Relu,
    LeakyRelu { slope: f64 },
    Tanh,
    Sigmoid,
    SkipConcat,
    ResidualAdd,
}

impl NodeKind {
    pub fn label(&self) -> &'static str {
        match self {
            NodeKind::Input => "input",
            NodeKind::Conv { .. } => "conv",
            NodeKind::TransposedConv { .. } => "transposed_conv",
            NodeKind::InstanceNorm => "instance_norm",
            NodeKind::Relu => "relu",
            NodeKind::LeakyRelu { .. } => "leaky_relu",
            NodeKind::Tanh => "tanh",
            NodeKind::Sigmoid => "sigmoid",
            NodeKind::SkipConcat => "skip_concat",
            NodeKind::ResidualAdd => "residual_add",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    /// Layer path, also the prefix of this node's parameter names.
    pub name: String,
    pub kind: NodeKind,
    pub inputs: Vec<NodeId>,
    /// Output `[channels, height, width]`.
    pub shape: [usize; 3],
    /// Index of the node's first parameter in [`NetworkDescription::params`].
    pub first_param: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamRole {
    Weight,
    Bias,
    Scale,
    Offset,
}

impl ParamRole {
    pub fn as_str(self) -> &'static str {
        match self {
            ParamRole::Weight => "weight",
            ParamRole::Bias => "bias",
            ParamRole::Scale => "scale",
            ParamRole::Offset => "offset",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    /// `<layer_path>/<weight|bias|scale|offset>`
    pub name: String,
    pub shape: Vec<usize>,
    pub role: ParamRole,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NetRole {
    Generator,
    Discriminator,
}

/// Ordered layer graph with shape annotations; nodes are topologically
/// sorted by construction.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkDescription {
    pub role: NetRole,
    pub nodes: Vec<Node>,
    pub params: Vec<ParamSpec>,
    pub output: NodeId,
}

impl NetworkDescription {
    pub fn input_shape(&self) -> [usize; 3] {
        self.nodes[0].shape
    }

    pub fn output_shape(&self) -> [usize; 3] {
        self.nodes[self.output].shape
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(ParamSpec::len).sum()
    }

    pub fn count_kind(&self, label: &str) -> usize {
        self.nodes.iter().filter(|n| n.kind.label() == label).count()
    }
}

impl fmt::Display for NetworkDescription {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, n) in self.nodes.iter().enumerate() {
            writeln!(
                f,
                "{i:4} {:<16} {:<40} {:?} <- {:?}",
                n.kind.label(),
                n.name,
                n.shape,
                n.inputs
            )?;
        }
        write!(f, "parameters: {}", self.parameter_count())
    }
}

/// Incremental builder performing shape inference as nodes are added.
#[derive(Debug, Default)]
pub struct GraphBuilder {
    nodes: Vec<Node>,
    params: Vec<ParamSpec>,
}

impl GraphBuilder {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        let mut b = Self::default();
        b.nodes.push(Node {
            name: "input".into(),
            kind: NodeKind::Input,
            inputs: vec![],
            shape: [channels, height, width],
            first_param: None,
        });
        b
    }

    pub fn input(&self) -> NodeId {
        0
    }

    pub fn shape(&self, id: NodeId) -> [usize; 3] {
        self.nodes[id].shape
    }

    fn push(&mut self, name: String, kind: NodeKind, inputs: Vec<NodeId>, shape: [usize; 3], params: Vec<(ParamRole, Vec<usize>)>) -> NodeId {
        let first_param = if params.is_empty() {
            None
        } else {
            Some(self.params.len())
        };
        for (role, shape) in params {
            self.params.push(ParamSpec {
                name: format!("{name}/{}", role.as_str()),
                shape,
                role,
            });
        }
        self.nodes.push(Node {
            name,
            kind,
            inputs,
            shape,
            first_param,
        });
        self.nodes.len() - 1
    }

    pub fn conv(&mut self, name: &str, x: NodeId, out_ch: usize, kernel: usize, stride: usize, padding: usize) -> Result<NodeId> {
        let [c, h, w] = self.shape(x);
        if h + 2 * padding < kernel || w + 2 * padding < kernel {
            return Err(Error::Spec(format!(
                "{name}: {h}x{w} input too small for kernel {kernel}"
            )));
        }
        let oh = (h + 2 * padding - kernel) / stride + 1;
        let ow = (w + 2 * padding - kernel) / stride + 1;
        Ok(self.push(
            name.into(),
            NodeKind::Conv { kernel, stride, padding },
            vec![x],
            [out_ch, oh, ow],
            vec![
                (ParamRole::Weight, vec![out_ch, c, kernel, kernel]),
                (ParamRole::Bias, vec![out_ch]),
            ],
        ))
    }

    pub fn conv_transpose(&mut self, name: &str, x: NodeId, out_ch: usize, kernel: usize, stride: usize, padding: usize) -> Result<NodeId> {
        let [c, h, w] = self.shape(x);
        let grow = |n: usize| ((n - 1) * stride + kernel).checked_sub(2 * padding);
        let (Some(oh), Some(ow)) = (grow(h), grow(w)) else {
            return Err(Error::Spec(format!("{name}: padding exceeds output size")));
        };
        Ok(self.push(
            name.into(),
            NodeKind::TransposedConv { kernel, stride, padding },
            vec![x],
            [out_ch, oh, ow],
            vec![
                (ParamRole::Weight, vec![c, out_ch, kernel, kernel]),
                (ParamRole::Bias, vec![out_ch]),
            ],
        ))
    }

    pub fn instance_norm(&mut self, name: &str, x: NodeId) -> NodeId {
        let shape = self.shape(x);
        self.push(
            name.into(),
            NodeKind::InstanceNorm,
            vec![x],
            shape,
            vec![
                (ParamRole::Scale, vec![shape[0]]),
                (ParamRole::Offset, vec![shape[0]]),
            ],
        )
    }

    fn pointwise(&mut self, name: &str, kind: NodeKind, x: NodeId) -> NodeId {
        let shape = self.shape(x);
        self.push(name.into(), kind, vec![x], shape, vec![])
    }

    pub fn relu(&mut self, name: &str, x: NodeId) -> NodeId {
        self.pointwise(name, NodeKind::Relu, x)
    }

    pub fn leaky_relu(&mut self, name: &str, x: NodeId, slope: f64) -> NodeId {
        self.pointwise(name, NodeKind::LeakyRelu { slope }, x)
    }

    pub fn tanh(&mut self, name: &str, x: NodeId) -> NodeId {
        self.pointwise(name, NodeKind::Tanh, x)
    }

    pub fn sigmoid(&mut self, name: &str, x: NodeId) -> NodeId {
        self.pointwise(name, NodeKind::Sigmoid, x)
    }

    /// Channel concatenation of a decoder feature `a` with the encoder skip `b`.
    pub fn skip_concat(&mut self, name: &str, a: NodeId, b: NodeId) -> Result<NodeId> {
        let [ca, ha, wa] = self.shape(a);
        let [cb, hb, wb] = self.shape(b);
        if (ha, wa) != (hb, wb) {
            return Err(Error::Spec(format!(
                "{name}: skip connection joins {ha}x{wa} with {hb}x{wb}"
            )));
        }
        Ok(self.push(name.into(), NodeKind::SkipConcat, vec![a, b], [ca + cb, ha, wa], vec![]))
    }

    pub fn residual_add(&mut self, name: &str, a: NodeId, b: NodeId) -> Result<NodeId> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa != sb {
            return Err(Error::Spec(format!("{name}: residual add of {sa:?} and {sb:?}")));
        }
        Ok(self.push(name.into(), NodeKind::ResidualAdd, vec![a, b], sa, vec![]))
    }

    pub fn finish(self, role: NetRole, output: NodeId) -> NetworkDescription {
        NetworkDescription {
            role,
            nodes: self.nodes,
            params: self.params,
            output,
        }
    }
}
