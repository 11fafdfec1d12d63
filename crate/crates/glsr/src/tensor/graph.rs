//! Wengert tape: eager forward evaluation with recorded ops, replayed in
//! reverse for gradients.
//!
//! Node ids are append-ordered, so every input id precedes its consumer and
//! a single reverse sweep visits the graph in valid topological order. Grad
//! accumulation walks nodes in that fixed order, keeping backward bitwise
//! reproducible.

use super::ops::{self, LayerNormCtx};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::signal::{self, ComplexPlane};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

enum OpKind<T: Scalar> {
    Leaf,
    Conv2d {
        stride: usize,
        pad: usize,
        groups: usize,
        has_bias: bool,
    },
    LayerNorm {
        ctx: LayerNormCtx<T>,
    },
    GlobalAvgPool,
    MaxPool {
        argmax: Vec<usize>,
    },
    NearestUpsample {
        r: usize,
    },
    PixelShuffle {
        r: usize,
    },
    PixelUnshuffle {
        r: usize,
    },
    NarrowChannels {
        start: usize,
    },
    ConcatChannels,
    Mul,
    Add,
    Sub,
    Scale {
        s: f64,
    },
    Abs,
    MeanAll,
    ReflectPad {
        pb: usize,
        pr: usize,
    },
    Crop,
    /// Mean complex modulus of the DFT of each (n, c) plane of the input.
    /// Spectra are saved at forward time and reused for the exact backward.
    FreqL1 {
        spectra: Vec<ComplexPlane>,
    },
}

struct Node<T: Scalar> {
    op: OpKind<T>,
    inputs: Vec<Var>,
    value: Tensor<T>,
    needs_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

#[derive(Default)]
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Insert an input node; gradient flows into it iff the tensor's
    /// requires_grad flag is set.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        let needs = t.requires_grad();
        self.push(OpKind::Leaf, vec![], t, needs)
    }

    /// Insert an input node that never receives gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(OpKind::Leaf, vec![], t, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: OpKind<T>, inputs: Vec<Var>, value: Tensor<T>, needs: bool) -> Var {
        self.nodes.push(Node { op, inputs, value, needs_grad: needs });
        Var(self.nodes.len() - 1)
    }

    fn any_needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
        groups: usize,
    ) -> Result<Var> {
        let y = ops::conv2d(
            &self.nodes[x.0].value,
            &self.nodes[w.0].value,
            b.map(|v| &self.nodes[v.0].value),
            stride,
            pad,
            groups,
        )?;
        let mut inputs = vec![x, w];
        if let Some(bv) = b {
            inputs.push(bv);
        }
        let needs = self.any_needs(&inputs);
        Ok(self.push(
            OpKind::Conv2d { stride, pad, groups, has_bias: b.is_some() },
            inputs,
            y,
            needs,
        ))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (y, ctx) = ops::layer_norm_fwd(
            &self.nodes[x.0].value,
            &self.nodes[gamma.0].value,
            &self.nodes[beta.0].value,
            eps,
        )?;
        let inputs = vec![x, gamma, beta];
        let needs = self.any_needs(&inputs);
        Ok(self.push(OpKind::LayerNorm { ctx }, inputs, y, needs))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let y = ops::global_avg_pool(&self.nodes[x.0].value);
        let needs = self.nodes[x.0].needs_grad;
        self.push(OpKind::GlobalAvgPool, vec![x], y, needs)
    }

    pub fn max_pool(&mut self, x: Var, k: usize) -> Result<Var> {
        let (y, argmax) = ops::max_pool_fwd(&self.nodes[x.0].value, k)?;
        let needs = self.nodes[x.0].needs_grad;
        Ok(self.push(OpKind::MaxPool { argmax }, vec![x], y, needs))
    }

    pub fn nearest_upsample(&mut self, x: Var, r: usize) -> Result<Var> {
        let y = ops::nearest_upsample(&self.nodes[x.0].value, r)?;
        let needs = self.nodes[x.0].needs_grad;
        Ok(self.push(OpKind::NearestUpsample { r }, vec![x], y, needs))
    }

    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let y = ops::pixel_shuffle(&self.nodes[x.0].value, r)?;
        let needs = self.nodes[x.0].needs_grad;
        Ok(self.push(OpKind::PixelShuffle { r }, vec![x], y, needs))
    }

    pub fn pixel_unshuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let y = ops::pixel_unshuffle(&self.nodes[x.0].value, r)?;
        let needs = self.nodes[x.0].needs_grad;
        Ok(self.push(OpKind::PixelUnshuffle { r }, vec![x], y, needs))
    }

    pub fn narrow_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let y = ops::narrow_channels(&self.nodes[x.0].value, start, len)?;
        let needs = self.nodes[x.0].needs_grad;
        Ok(self.push(OpKind::NarrowChannels { start }, vec![x], y, needs))
    }

    pub fn channel_split(&mut self, x: Var, parts: usize) -> Result<Vec<Var>> {
        let c = self.nodes[x.0].value.shape().c();
        if parts == 0 || c % parts != 0 {
            return Err(Error::dim(format!(
                "channel_split needs parts ({parts}) dividing C ({c})"
            )));
        }
        let len = c / parts;
        (0..parts)
            .map(|p| self.narrow_channels(x, p * len, len))
            .collect()
    }

    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor<T>> = xs.iter().map(|v| &self.nodes[v.0].value).collect();
        let y = ops::concat_channels(&tensors)?;
        let inputs = xs.to_vec();
        let needs = self.any_needs(&inputs);
        Ok(self.push(OpKind::ConcatChannels, inputs, y, needs))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::mul(&self.nodes[a.0].value, &self.nodes[b.0].value)?;
        let needs = self.any_needs(&[a, b]);
        Ok(self.push(OpKind::Mul, vec![a, b], y, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::add(&self.nodes[a.0].value, &self.nodes[b.0].value)?;
        let needs = self.any_needs(&[a, b]);
        Ok(self.push(OpKind::Add, vec![a, b], y, needs))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::sub(&self.nodes[a.0].value, &self.nodes[b.0].value)?;
        let needs = self.any_needs(&[a, b]);
        Ok(self.push(OpKind::Sub, vec![a, b], y, needs))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let y = ops::scale(&self.nodes[a.0].value, s);
        let needs = self.nodes[a.0].needs_grad;
        self.push(OpKind::Scale { s }, vec![a], y, needs)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let y = ops::abs(&self.nodes[a.0].value);
        let needs = self.nodes[a.0].needs_grad;
        self.push(OpKind::Abs, vec![a], y, needs)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let y = ops::mean_all(&self.nodes[a.0].value);
        let needs = self.nodes[a.0].needs_grad;
        self.push(OpKind::MeanAll, vec![a], y, needs)
    }

    pub fn reflect_pad_br(&mut self, x: Var, pb: usize, pr: usize) -> Var {
        let y = ops::reflect_pad_br(&self.nodes[x.0].value, pb, pr);
        let needs = self.nodes[x.0].needs_grad;
        self.push(OpKind::ReflectPad { pb, pr }, vec![x], y, needs)
    }

    pub fn crop_tl(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let y = ops::crop_tl(&self.nodes[x.0].value, h, w)?;
        let needs = self.nodes[x.0].needs_grad;
        Ok(self.push(OpKind::Crop, vec![x], y, needs))
    }

    /// Mean over (n, c, u, v) of the smoothed complex modulus of the DFT of
    /// each input plane; scalar output.
    pub fn freq_l1(&mut self, x: Var) -> Var {
        let (loss, spectra) = signal::freq_l1_fwd(&self.nodes[x.0].value);
        let needs = self.nodes[x.0].needs_grad;
        self.push(
            OpKind::FreqL1 { spectra },
            vec![x],
            Tensor::scalar(T::from_f64(loss)),
            needs,
        )
    }

    /// Reverse sweep from `out`. A scalar output seeds with 1; any other
    /// shape requires an explicit seed gradient of matching shape. Each leaf
    /// with requires_grad also receives its derivative in its grad slot.
    pub fn backward(&mut self, out: Var, seed: Option<&Tensor<T>>) -> Result<Gradients<T>> {
        if out.0 >= self.nodes.len() {
            return Err(Error::Usage("backward target is not in this graph".into()));
        }
        let out_shape = self.nodes[out.0].value.shape();
        let seed_tensor = match seed {
            Some(s) => {
                if s.shape() != out_shape {
                    return Err(Error::dim(format!(
                        "seed shape {} does not match output {}",
                        s.shape(),
                        out_shape
                    )));
                }
                s.clone()
            }
            None => {
                if out_shape.numel() != 1 {
                    return Err(Error::Usage(
                        "backward on a non-scalar output requires an explicit seed".into(),
                    ));
                }
                Tensor::ones(out_shape)
            }
        };

        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(seed_tensor);

        for i in (0..=out.0).rev() {
            if !self.nodes[i].needs_grad {
                grads[i] = None;
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                OpKind::Leaf => {
                    grads[i] = Some(dy);
                }
                OpKind::Conv2d { stride, pad, groups, has_bias } => {
                    let x = &self.nodes[node.inputs[0].0].value;
                    let w = &self.nodes[node.inputs[1].0].value;
                    let (dx, dw, db) =
                        ops::conv2d_backward(x, w, *has_bias, *stride, *pad, *groups, &dy)?;
                    self.accum(&mut grads, node.inputs[0], dx);
                    self.accum(&mut grads, node.inputs[1], dw);
                    if let Some(db) = db {
                        self.accum(&mut grads, node.inputs[2], db);
                    }
                }
                OpKind::LayerNorm { ctx, .. } => {
                    let x = &self.nodes[node.inputs[0].0].value;
                    let gamma = &self.nodes[node.inputs[1].0].value;
                    let (dx, dgamma, dbeta) = ops::layer_norm_backward(x, gamma, ctx, &dy)?;
                    self.accum(&mut grads, node.inputs[0], dx);
                    self.accum(&mut grads, node.inputs[1], dgamma);
                    self.accum(&mut grads, node.inputs[2], dbeta);
                }
                OpKind::GlobalAvgPool => {
                    let xs = self.nodes[node.inputs[0].0].value.shape();
                    self.accum(&mut grads, node.inputs[0], ops::global_avg_pool_backward(xs, &dy)?);
                }
                OpKind::MaxPool { argmax } => {
                    let xs = self.nodes[node.inputs[0].0].value.shape();
                    self.accum(&mut grads, node.inputs[0], ops::max_pool_backward(xs, argmax, &dy)?);
                }
                OpKind::NearestUpsample { r } => {
                    let xs = self.nodes[node.inputs[0].0].value.shape();
                    self.accum(
                        &mut grads,
                        node.inputs[0],
                        ops::nearest_upsample_backward(xs, *r, &dy)?,
                    );
                }
                OpKind::PixelShuffle { r } => {
                    self.accum(&mut grads, node.inputs[0], ops::pixel_unshuffle(&dy, *r)?);
                }
                OpKind::PixelUnshuffle { r } => {
                    self.accum(&mut grads, node.inputs[0], ops::pixel_shuffle(&dy, *r)?);
                }
                OpKind::NarrowChannels { start } => {
                    let xs = self.nodes[node.inputs[0].0].value.shape();
                    self.accum(
                        &mut grads,
                        node.inputs[0],
                        ops::narrow_channels_backward(xs, *start, &dy)?,
                    );
                }
                OpKind::ConcatChannels => {
                    let mut start = 0;
                    for &inp in &node.inputs {
                        let c = self.nodes[inp.0].value.shape().c();
                        let part = ops::narrow_channels(&dy, start, c)?;
                        self.accum(&mut grads, inp, part);
                        start += c;
                    }
                }
                OpKind::Mul => {
                    let a = &self.nodes[node.inputs[0].0].value;
                    let b = &self.nodes[node.inputs[1].0].value;
                    let (da, db) = ops::mul_backward(a, b, &dy)?;
                    self.accum(&mut grads, node.inputs[0], da);
                    self.accum(&mut grads, node.inputs[1], db);
                }
                OpKind::Add => {
                    self.accum(&mut grads, node.inputs[0], dy.clone());
                    self.accum(&mut grads, node.inputs[1], dy);
                }
                OpKind::Sub => {
                    self.accum(&mut grads, node.inputs[0], dy.clone());
                    self.accum(&mut grads, node.inputs[1], ops::scale(&dy, -1.0));
                }
                OpKind::Scale { s } => {
                    self.accum(&mut grads, node.inputs[0], ops::scale(&dy, *s));
                }
                OpKind::Abs => {
                    let a = &self.nodes[node.inputs[0].0].value;
                    self.accum(&mut grads, node.inputs[0], ops::abs_backward(a, &dy)?);
                }
                OpKind::MeanAll => {
                    let xs = self.nodes[node.inputs[0].0].value.shape();
                    let g = dy.data()[0].to_f64() / xs.numel() as f64;
                    self.accum(&mut grads, node.inputs[0], Tensor::full(xs, T::from_f64(g)));
                }
                OpKind::ReflectPad { pb, pr } => {
                    let xs = self.nodes[node.inputs[0].0].value.shape();
                    self.accum(
                        &mut grads,
                        node.inputs[0],
                        ops::reflect_pad_br_backward(xs, *pb, *pr, &dy)?,
                    );
                }
                OpKind::Crop => {
                    let xs = self.nodes[node.inputs[0].0].value.shape();
                    self.accum(&mut grads, node.inputs[0], ops::crop_tl_backward(xs, &dy)?);
                }
                OpKind::FreqL1 { spectra } => {
                    let xs = self.nodes[node.inputs[0].0].value.shape();
                    let g = dy.data()[0].to_f64();
                    self.accum(&mut grads, node.inputs[0], signal::freq_l1_backward(xs, spectra, g)?);
                }
            }
        }

        // Only leaf gradients survive; mirror them into the tensors' slots.
        for (i, node) in self.nodes.iter_mut().enumerate() {
            match node.op {
                OpKind::Leaf => {
                    if let Some(g) = &grads[i] {
                        node.value.set_grad(g.data().to_vec());
                    }
                }
                _ => grads[i] = None,
            }
        }
        Ok(Gradients { grads })
    }

    fn accum(&self, grads: &mut [Option<Tensor<T>>], v: Var, delta: Tensor<T>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => {
                debug_assert_eq!(g.shape(), delta.shape());
                for (a, b) in g.data_mut().iter_mut().zip(delta.data()) {
                    *a = *a + *b;
                }
            }
            slot => *slot = Some(delta),
        }
    }
}
