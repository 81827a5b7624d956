//! Forward and reverse-mode evaluation of a [`NetworkDescription`].

use std::sync::Arc;

use super::graph::{NetworkDescription, Node, NodeKind};
use super::ops::{self, Geometry, NormCache};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Flat parameter (or gradient) storage, one vector per [`ParamSpec`](super::graph::ParamSpec).
pub type ParamVec<T> = Vec<Vec<T>>;

/// A description paired with concrete parameter values.
#[derive(Clone, Debug)]
pub struct Network<T> {
    desc: Arc<NetworkDescription>,
    params: ParamVec<T>,
}

/// Activations retained for a backward pass.
#[derive(Debug)]
pub struct Tape<T> {
    acts: Vec<Tensor<T>>,
    norms: Vec<Option<Vec<NormCache<T>>>>,
    output: usize,
}

impl<T: Scalar> Tape<T> {
    pub fn output(&self) -> &Tensor<T> {
        &self.acts[self.output]
    }
}

fn conv_geometry(kind: &NodeKind, large: [usize; 3], small: [usize; 3]) -> Geometry {
    let (kernel, stride, padding) = match *kind {
        NodeKind::Conv { kernel, stride, padding } | NodeKind::TransposedConv { kernel, stride, padding } => {
            (kernel, stride, padding)
        }
        _ => unreachable!("geometry of a non-convolution node"),
    };
    Geometry {
        channels: large[0],
        large_h: large[1],
        large_w: large[2],
        small_h: small[1],
        small_w: small[2],
        kernel,
        stride,
        pad: padding,
    }
}

impl<T: Scalar> Network<T> {
    /// All parameters zero; see [`super::init`] for random initialization.
    pub fn zeros(desc: Arc<NetworkDescription>) -> Self {
        let params = desc.params.iter().map(|p| vec![T::zero(); p.len()]).collect();
        Self { desc, params }
    }

    pub fn from_params(desc: Arc<NetworkDescription>, params: ParamVec<T>) -> Result<Self> {
        if params.len() != desc.params.len() {
            return Err(Error::shape("parameter arrays", desc.params.len(), params.len()));
        }
        for (spec, p) in desc.params.iter().zip(&params) {
            if spec.len() != p.len() {
                return Err(Error::shape(spec.name.clone(), spec.len(), p.len()));
            }
        }
        Ok(Self { desc, params })
    }

    pub fn desc(&self) -> &NetworkDescription {
        &self.desc
    }

    pub fn desc_arc(&self) -> &Arc<NetworkDescription> {
        &self.desc
    }

    pub fn params(&self) -> &ParamVec<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVec<T> {
        &mut self.params
    }

    pub fn zero_grads(&self) -> ParamVec<T> {
        self.params.iter().map(|p| vec![T::zero(); p.len()]).collect()
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            desc: self.desc.clone(),
            params: self
                .params
                .iter()
                .map(|p| p.iter().map(|v| U::from_f64(v.as_f64())).collect())
                .collect(),
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let [c, h, w] = self.desc.input_shape();
        let [_, xc, xh, xw] = x.shape();
        if xc != c {
            return Err(Error::shape("input channels", c, xc));
        }
        if xh != h {
            return Err(Error::shape("input height", h, xh));
        }
        if xw != w {
            return Err(Error::shape("input width", w, xw));
        }
        Ok(())
    }

    fn node_params(&self, node: &Node) -> (&[T], &[T]) {
        let i = node.first_param.expect("parameterized node");
        (&self.params[i], &self.params[i + 1])
    }

    fn eval_node(&self, node: &Node, inputs: &[&Tensor<T>], mut norm: Option<&mut Vec<NormCache<T>>>) -> Tensor<T> {
        let n = inputs[0].batch();
        let [c, h, w] = node.shape;
        let mut out = Tensor::zeros([n, c, h, w]);
        match &node.kind {
            NodeKind::Input => unreachable!(),
            NodeKind::Conv { .. } => {
                let x = inputs[0];
                let in_shape = [x.channels(), x.height(), x.width()];
                let g = conv_geometry(&node.kind, in_shape, node.shape);
                let (wt, b) = self.node_params(node);
                for i in 0..n {
                    ops::conv_forward(&g, c, x.item(i), wt, b, out.item_mut(i));
                }
            }
            NodeKind::TransposedConv { .. } => {
                let x = inputs[0];
                let in_shape = [x.channels(), x.height(), x.width()];
                let g = conv_geometry(&node.kind, node.shape, in_shape);
                let (wt, b) = self.node_params(node);
                for i in 0..n {
                    ops::conv_transpose_forward(&g, x.channels(), x.item(i), wt, b, out.item_mut(i));
                }
            }
            NodeKind::InstanceNorm => {
                let (scale, offset) = self.node_params(node);
                for i in 0..n {
                    let cache = ops::instance_norm_forward(c, inputs[0].item(i), scale, offset, out.item_mut(i));
                    if let Some(caches) = norm.as_deref_mut() {
                        caches.push(cache);
                    }
                }
            }
            NodeKind::Relu => pointwise(inputs[0], &mut out, |v| v.max(T::zero())),
            NodeKind::LeakyRelu { slope } => {
                let s = T::from_f64(*slope);
                pointwise(inputs[0], &mut out, |v| if v > T::zero() { v } else { v * s })
            }
            NodeKind::Tanh => pointwise(inputs[0], &mut out, |v| v.tanh()),
            NodeKind::Sigmoid => pointwise(inputs[0], &mut out, |v| T::one() / (T::one() + (-v).exp())),
            NodeKind::SkipConcat => {
                let (a, b) = (inputs[0], inputs[1]);
                let la = a.item_len();
                for i in 0..n {
                    let o = out.item_mut(i);
                    o[..la].copy_from_slice(a.item(i));
                    o[la..].copy_from_slice(b.item(i));
                }
            }
            NodeKind::ResidualAdd => {
                for ((o, &a), &b) in out.data_mut().iter_mut().zip(inputs[0].data()).zip(inputs[1].data()) {
                    *o = a + b;
                }
            }
        }
        out
    }

    /// Inference pass; intermediate activations are released after their
    /// last consumer runs.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let nodes = &self.desc.nodes;
        let mut last_use = vec![0usize; nodes.len()];
        for (i, node) in nodes.iter().enumerate() {
            for &j in &node.inputs {
                last_use[j] = i;
            }
        }
        last_use[self.desc.output] = usize::MAX;
        let mut acts: Vec<Option<Tensor<T>>> = vec![None; nodes.len()];
        acts[0] = Some(x.clone());
        for (i, node) in nodes.iter().enumerate().skip(1) {
            let out = {
                let inputs: Vec<&Tensor<T>> = node
                    .inputs
                    .iter()
                    .map(|&j| acts[j].as_ref().expect("activation released early"))
                    .collect();
                self.eval_node(node, &inputs, None)
            };
            acts[i] = Some(out);
            for &j in &node.inputs {
                if last_use[j] == i {
                    acts[j] = None;
                }
            }
        }
        Ok(acts[self.desc.output].take().expect("output computed"))
    }

    /// Forward pass retaining everything needed by [`Network::backward`].
    pub fn forward_tape(&self, x: &Tensor<T>) -> Result<Tape<T>> {
        self.check_input(x)?;
        let nodes = &self.desc.nodes;
        let mut acts = Vec::with_capacity(nodes.len());
        let mut norms = Vec::with_capacity(nodes.len());
        acts.push(x.clone());
        norms.push(None);
        for node in nodes.iter().skip(1) {
            let mut cache = matches!(node.kind, NodeKind::InstanceNorm).then(Vec::new);
            let out = {
                let inputs: Vec<&Tensor<T>> = node.inputs.iter().map(|&j| &acts[j]).collect();
                self.eval_node(node, &inputs, cache.as_mut())
            };
            acts.push(out);
            norms.push(cache);
        }
        Ok(Tape {
            acts,
            norms,
            output: self.desc.output,
        })
    }

    /// Reverse pass. Parameter gradients are accumulated into `grads`; the
    /// gradient with respect to the network input is returned when requested.
    pub fn backward(&self, tape: &Tape<T>, dy: &Tensor<T>, grads: &mut ParamVec<T>, input_grad: bool) -> Result<Option<Tensor<T>>> {
        let out_shape = tape.output().shape();
        if dy.shape() != out_shape {
            return Err(Error::shape("output gradient elements", out_shape.iter().product(), dy.data().len()));
        }
        let nodes = &self.desc.nodes;
        let mut node_grads: Vec<Option<Tensor<T>>> = vec![None; nodes.len()];
        node_grads[tape.output] = Some(dy.clone());
        for (idx, node) in nodes.iter().enumerate().skip(1).rev() {
            let Some(g) = node_grads[idx].take() else {
                continue;
            };
            let needs = |j: usize| j != 0 || input_grad;
            let n = g.batch();
            match &node.kind {
                NodeKind::Input => unreachable!(),
                NodeKind::Conv { .. } | NodeKind::TransposedConv { .. } => {
                    let src = node.inputs[0];
                    let x = &tape.acts[src];
                    let p = node.first_param.expect("conv params");
                    let (head, tail) = grads.split_at_mut(p + 1);
                    let (dw, db) = (&mut head[p], &mut tail[0]);
                    let wt = &self.params[p];
                    let mut dx = needs(src).then(|| Tensor::zeros(x.shape()));
                    let transposed = matches!(node.kind, NodeKind::TransposedConv { .. });
                    let x_shape = [x.channels(), x.height(), x.width()];
                    for i in 0..n {
                        let dxi = dx.as_mut().map(|t| t.item_mut(i));
                        if transposed {
                            let geo = conv_geometry(&node.kind, node.shape, x_shape);
                            ops::conv_transpose_backward(&geo, x.channels(), x.item(i), wt, g.item(i), dxi, dw, db);
                        } else {
                            let geo = conv_geometry(&node.kind, x_shape, node.shape);
                            ops::conv_backward(&geo, node.shape[0], x.item(i), wt, g.item(i), dxi, dw, db);
                        }
                    }
                    if let Some(dx) = dx {
                        accumulate(&mut node_grads, src, dx);
                    }
                }
                NodeKind::InstanceNorm => {
                    let src = node.inputs[0];
                    let p = node.first_param.expect("norm params");
                    let caches = tape.norms[idx].as_ref().expect("norm cache");
                    let (head, tail) = grads.split_at_mut(p + 1);
                    let (ds, doff) = (&mut head[p], &mut tail[0]);
                    let mut dx = Tensor::zeros(tape.acts[src].shape());
                    for i in 0..n {
                        ops::instance_norm_backward(node.shape[0], &caches[i], &self.params[p], g.item(i), dx.item_mut(i), ds, doff);
                    }
                    if needs(src) {
                        accumulate(&mut node_grads, src, dx);
                    }
                }
                NodeKind::Relu | NodeKind::LeakyRelu { .. } | NodeKind::Tanh | NodeKind::Sigmoid => {
                    let src = node.inputs[0];
                    if !needs(src) {
                        continue;
                    }
                    let x = &tape.acts[src];
                    let y = &tape.acts[idx];
                    let mut dx = Tensor::zeros(x.shape());
                    let it = dx.data_mut().iter_mut().zip(g.data()).zip(x.data().iter().zip(y.data()));
                    match &node.kind {
                        NodeKind::Relu => it.for_each(|((d, &gi), (&xi, _))| {
                            *d = if xi > T::zero() { gi } else { T::zero() }
                        }),
                        NodeKind::LeakyRelu { slope } => {
                            let s = T::from_f64(*slope);
                            it.for_each(|((d, &gi), (&xi, _))| *d = if xi > T::zero() { gi } else { gi * s })
                        }
                        NodeKind::Tanh => it.for_each(|((d, &gi), (_, &yi))| *d = gi * (T::one() - yi * yi)),
                        NodeKind::Sigmoid => it.for_each(|((d, &gi), (_, &yi))| *d = gi * yi * (T::one() - yi)),
                        _ => unreachable!(),
                    }
                    accumulate(&mut node_grads, src, dx);
                }
                NodeKind::SkipConcat => {
                    let (a, b) = (node.inputs[0], node.inputs[1]);
                    let sa = tape.acts[a].shape();
                    let sb = tape.acts[b].shape();
                    let mut ga = Tensor::zeros(sa);
                    let mut gb = Tensor::zeros(sb);
                    let la = ga.item_len();
                    for i in 0..n {
                        let gi = g.item(i);
                        ga.item_mut(i).copy_from_slice(&gi[..la]);
                        gb.item_mut(i).copy_from_slice(&gi[la..]);
                    }
                    if needs(a) {
                        accumulate(&mut node_grads, a, ga);
                    }
                    if needs(b) {
                        accumulate(&mut node_grads, b, gb);
                    }
                }
                NodeKind::ResidualAdd => {
                    let (a, b) = (node.inputs[0], node.inputs[1]);
                    if needs(a) {
                        accumulate(&mut node_grads, a, g.clone());
                    }
                    if needs(b) {
                        accumulate(&mut node_grads, b, g);
                    }
                }
            }
        }
        Ok(if input_grad { node_grads[0].take() } else { None })
    }
}

fn pointwise<T: Scalar>(x: &Tensor<T>, out: &mut Tensor<T>, f: impl Fn(T) -> T) {
    for (o, &v) in out.data_mut().iter_mut().zip(x.data()) {
        *o = f(v);
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], id: usize, g: Tensor<T>) {
    match &mut grads[id] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
