use std::collections::BTreeMap;

use super::kernels::{self, ConvGeom, PoolGeom};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Primitive operations the tape knows how to differentiate.
#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    /// Zeros shaped like the stride-adjusted input. Inputs: `x`.
    Zero {
        stride: usize,
    },
    /// Grouped 2-D convolution, no bias. Inputs: `x`, `w`.
    Conv2d(ConvGeom),
    /// Average pool excluding padding from the divisor. Inputs: `x`.
    AvgPool(PoolGeom),
    /// Inputs: `x`.
    MaxPool(PoolGeom),
    Relu,
    /// Affine per-channel normalization. Inputs: `x`, `gamma`, `beta`.
    ChannelNorm {
        batch_stats: bool,
        eps: f64,
    },
    /// Inputs: `x (N, D)`, `w (O, D)`, `b (O)`.
    Linear,
    /// Softmax over the last axis.
    Softmax,
    /// Mean negative log-likelihood of row-wise softmax. Inputs: logits `(N, K)`.
    CrossEntropy {
        labels: Vec<usize>,
    },
    /// Elementwise sum of any number of same-shaped inputs.
    Add,
    /// Elementwise product of two same-shaped inputs.
    Mul,
    /// `w[index] * o`. Inputs: `o`, weight vector `w`.
    ScaleBy {
        index: usize,
    },
    /// Channel concatenation of any number of inputs.
    Concat,
    Scale {
        factor: f64,
    },
    ChannelSelect {
        channels: Vec<usize>,
    },
    ChannelShuffle {
        groups: usize,
    },
    /// Channel shuffle of `concat(a, b[take])`. Inputs: `a`, `b`.
    ChannelMerge {
        groups: usize,
        take: Vec<usize>,
    },
    GlobalAvgPool,
    Flatten,
    /// Pick entries of a vector.
    Gather {
        indices: Vec<usize>,
    },
    /// `log(sum(exp(v)))` of a vector.
    LogSumExp,
    /// Sum of all elements.
    Sum,
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::Zero { .. } => "zero",
            Primitive::Conv2d(_) => "conv2d",
            Primitive::AvgPool(_) => "avg_pool",
            Primitive::MaxPool(_) => "max_pool",
            Primitive::Relu => "relu",
            Primitive::ChannelNorm { .. } => "channel_norm",
            Primitive::Linear => "linear",
            Primitive::Softmax => "softmax",
            Primitive::CrossEntropy { .. } => "cross_entropy",
            Primitive::Add => "add",
            Primitive::Mul => "mul",
            Primitive::ScaleBy { .. } => "scale_by",
            Primitive::Concat => "concat",
            Primitive::Scale { .. } => "scale",
            Primitive::ChannelSelect { .. } => "channel_select",
            Primitive::ChannelShuffle { .. } => "channel_shuffle",
            Primitive::ChannelMerge { .. } => "channel_merge",
            Primitive::GlobalAvgPool => "global_avg_pool",
            Primitive::Flatten => "flatten",
            Primitive::Gather { .. } => "gather",
            Primitive::LogSumExp => "log_sum_exp",
            Primitive::Sum => "sum",
        }
    }
}

#[derive(Debug)]
enum Saved {
    Nothing,
    Argmax(Vec<usize>),
    Norm { xhat: Vec<f64>, inv_std: Vec<f64> },
    Probs(Vec<f64>),
}

impl Saved {
    fn elements(&self) -> usize {
        match self {
            Saved::Nothing => 0,
            Saved::Argmax(a) => a.len(),
            Saved::Norm { xhat, .. } => xhat.len(),
            Saved::Probs(p) => p.len(),
        }
    }
}

#[derive(Debug)]
struct Record {
    prim: Primitive,
    inputs: Vec<Var>,
    saved: Saved,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Origin {
    Constant,
    Variable,
    Param(usize),
    Op,
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    origin: Origin,
    requires_grad: bool,
    record: Option<Record>,
}

/// Append-only record of primitive evaluations.
///
/// Nodes are stored in evaluation order, so every input precedes its
/// consumer and the backward pass is a single reverse sweep.
#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    grad_enabled: bool,
    params: BTreeMap<usize, Var>,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

/// Gradients of a scalar loss with respect to the leaves of a tape.
#[derive(Debug)]
pub struct Gradients {
    leaves: BTreeMap<usize, Tensor>,
    params: BTreeMap<usize, Var>,
    peak_live_elements: usize,
}

impl Gradients {
    /// Gradient of a leaf; `None` for constants and op nodes.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.leaves.get(&v.0)
    }

    /// Gradient of a registered parameter, by parameter id.
    pub fn param(&self, id: usize) -> Option<&Tensor> {
        self.params.get(&id).and_then(|v| self.leaves.get(&v.0))
    }

    pub fn param_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.params.keys().copied()
    }

    /// Largest number of gradient elements alive at once during the sweep.
    pub fn peak_live_elements(&self) -> usize {
        self.peak_live_elements
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grad_enabled: true,
            params: BTreeMap::new(),
        }
    }

    /// A tape that evaluates values only; nothing is recorded for backward.
    pub fn no_grad() -> Self {
        Tape {
            grad_enabled: false,
            ..Tape::new()
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    fn push_leaf(&mut self, value: Tensor, origin: Origin) -> Var {
        let requires_grad = self.grad_enabled && origin != Origin::Constant;
        self.nodes.push(Node {
            value,
            origin,
            requires_grad,
            record: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, Origin::Constant)
    }

    /// A leaf whose gradient is wanted.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, Origin::Variable)
    }

    /// A leaf tied to an external parameter id. Registering the same id
    /// twice returns the existing node.
    pub fn param(&mut self, id: usize, value: &Tensor) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push_leaf(value.clone(), Origin::Param(id));
        self.params.insert(id, v);
        v
    }

    pub fn param_var(&self, id: usize) -> Option<Var> {
        self.params.get(&id).copied()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of nodes produced by primitives (leaves excluded).
    pub fn op_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.origin == Origin::Op).count()
    }

    /// Elements held by op outputs plus whatever they saved for backward.
    pub fn activation_elements(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| n.origin == Origin::Op)
            .map(|n| n.value.numel() + n.record.as_ref().map_or(0, |r| r.saved.elements()))
            .sum()
    }

    /// Elements of constant leaves (input batches).
    pub fn constant_elements(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| n.origin == Origin::Constant)
            .map(|n| n.value.numel())
            .sum()
    }

    /// Evaluate a primitive and record it.
    pub fn apply(&mut self, prim: Primitive, inputs: &[Var]) -> Result<Var> {
        let (value, saved) = self.forward(&prim, inputs)?;
        if !value.is_finite() {
            return Err(Error::NumericOverflow {
                op: prim.name().to_string(),
            });
        }
        let requires_grad = self.grad_enabled && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let record = if self.grad_enabled {
            Some(Record {
                prim,
                inputs: inputs.to_vec(),
                saved,
            })
        } else {
            None
        };
        self.nodes.push(Node {
            value,
            origin: Origin::Op,
            requires_grad,
            record,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn arity(prim: &Primitive, inputs: &[Var]) -> Result<()> {
        let expected = match prim {
            Primitive::Conv2d(_) | Primitive::Mul | Primitive::ChannelMerge { .. } | Primitive::ScaleBy { .. } => {
                Some(2)
            }
            Primitive::ChannelNorm { .. } | Primitive::Linear => Some(3),
            Primitive::Add | Primitive::Concat => None,
            _ => Some(1),
        };
        match expected {
            Some(k) if k != inputs.len() => Err(Error::Contract(format!(
                "{} takes {k} inputs, got {}",
                prim.name(),
                inputs.len()
            ))),
            None if inputs.is_empty() => Err(Error::Contract(format!("{} needs inputs", prim.name()))),
            _ => Ok(()),
        }
    }

    fn forward(&self, prim: &Primitive, inputs: &[Var]) -> Result<(Tensor, Saved)> {
        Self::arity(prim, inputs)?;
        let val = |i: usize| &self.nodes[inputs[i].0].value;
        let same_shape = |op: &'static str, a: &Tensor, b: &Tensor| -> Result<()> {
            if a.shape() != b.shape() {
                Err(Error::Shape {
                    op,
                    lhs: a.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                })
            } else {
                Ok(())
            }
        };
        let out = match prim {
            Primitive::Zero { stride } => {
                let (n, c, h, w) = val(0).dims4("zero")?;
                (
                    Tensor::zeros(&[n, c, h.div_ceil(*stride), w.div_ceil(*stride)]),
                    Saved::Nothing,
                )
            }
            Primitive::Conv2d(g) => (kernels::conv2d(val(0), val(1), *g)?, Saved::Nothing),
            Primitive::AvgPool(p) => (kernels::avg_pool(val(0), *p)?, Saved::Nothing),
            Primitive::MaxPool(p) => {
                let (y, arg) = kernels::max_pool(val(0), *p)?;
                (y, Saved::Argmax(arg))
            }
            Primitive::Relu => (val(0).map(|v| v.max(0.0)), Saved::Nothing),
            Primitive::ChannelNorm { batch_stats, eps } => {
                let r = kernels::channel_norm(val(0), val(1), val(2), *batch_stats, *eps)?;
                let saved = if self.grad_enabled {
                    Saved::Norm {
                        xhat: r.xhat,
                        inv_std: r.inv_std,
                    }
                } else {
                    Saved::Nothing
                };
                (r.y, saved)
            }
            Primitive::Linear => {
                let (x, w, b) = (val(0), val(1), val(2));
                let (n, d) = match x.shape() {
                    [n, d] => (*n, *d),
                    _ => {
                        return Err(Error::Shape {
                            op: "linear",
                            lhs: x.shape().to_vec(),
                            rhs: w.shape().to_vec(),
                        })
                    }
                };
                let o = match w.shape() {
                    [o, wd] if *wd == d && b.numel() == *o => *o,
                    _ => {
                        return Err(Error::Shape {
                            op: "linear",
                            lhs: x.shape().to_vec(),
                            rhs: w.shape().to_vec(),
                        })
                    }
                };
                let mut out = vec![0.0; n * o];
                for i in 0..n {
                    let row = &x.data()[i * d..(i + 1) * d];
                    for j in 0..o {
                        let wr = &w.data()[j * d..(j + 1) * d];
                        out[i * o + j] = b.data()[j] + row.iter().zip(wr).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
                (Tensor::new(vec![n, o], out)?, Saved::Nothing)
            }
            Primitive::Softmax => (kernels::softmax_rows(val(0)), Saved::Nothing),
            Primitive::CrossEntropy { labels } => {
                let z = val(0);
                let (n, k) = match z.shape() {
                    [n, k] if *n == labels.len() => (*n, *k),
                    _ => {
                        return Err(Error::Shape {
                            op: "cross_entropy",
                            lhs: z.shape().to_vec(),
                            rhs: vec![labels.len()],
                        })
                    }
                };
                if let Some(bad) = labels.iter().find(|&&l| l >= k) {
                    return Err(Error::Contract(format!("label {bad} out of range for {k} classes")));
                }
                let p = kernels::softmax_rows(z);
                let mut loss = 0.0;
                for (i, &l) in labels.iter().enumerate() {
                    let row = &z.data()[i * k..(i + 1) * k];
                    loss += kernels::log_sum_exp(row) - row[l];
                }
                (Tensor::scalar(loss / n as f64), Saved::Probs(p.into_data()))
            }
            Primitive::Add => {
                let mut acc = val(0).clone();
                for i in 1..inputs.len() {
                    same_shape("add", val(0), val(i))?;
                    acc.add_assign(val(i));
                }
                (acc, Saved::Nothing)
            }
            Primitive::Mul => {
                same_shape("mul", val(0), val(1))?;
                let d: Vec<f64> = val(0).data().iter().zip(val(1).data()).map(|(a, b)| a * b).collect();
                (Tensor::new(val(0).shape().to_vec(), d)?, Saved::Nothing)
            }
            Primitive::ScaleBy { index } => {
                let w = val(1);
                if w.rank() != 1 || *index >= w.numel() {
                    return Err(Error::Shape {
                        op: "scale_by",
                        lhs: vec![*index],
                        rhs: w.shape().to_vec(),
                    });
                }
                let f = w.data()[*index];
                (val(0).map(|v| f * v), Saved::Nothing)
            }
            Primitive::Concat => {
                let parts: Vec<&Tensor> = (0..inputs.len()).map(val).collect();
                (kernels::concat_channels(&parts)?, Saved::Nothing)
            }
            Primitive::Scale { factor } => (val(0).map(|v| v * factor), Saved::Nothing),
            Primitive::ChannelSelect { channels } => (val(0).select_channels(channels)?, Saved::Nothing),
            Primitive::ChannelShuffle { groups } => {
                let c = val(0).dims4("channel_shuffle")?.1;
                if *groups == 0 || c % groups != 0 {
                    return Err(Error::Config(format!(
                        "{groups} shuffle groups do not divide {c} channels"
                    )));
                }
                let src = kernels::shuffle_permutation(c, *groups);
                (kernels::permute_channels(val(0), &src)?, Saved::Nothing)
            }
            Primitive::ChannelMerge { groups, take } => {
                let cat = kernels::concat_channels(&[val(0), &val(1).select_channels(take)?])?;
                let c = cat.dim(1);
                if *groups == 0 || c % groups != 0 {
                    return Err(Error::Config(format!(
                        "{groups} shuffle groups do not divide {c} channels"
                    )));
                }
                let src = kernels::shuffle_permutation(c, *groups);
                (kernels::permute_channels(&cat, &src)?, Saved::Nothing)
            }
            Primitive::GlobalAvgPool => {
                let (n, c, h, w) = val(0).dims4("global_avg_pool")?;
                let plane = h * w;
                let d: Vec<f64> = val(0)
                    .data()
                    .chunks(plane)
                    .map(|p| p.iter().sum::<f64>() / plane as f64)
                    .collect();
                (Tensor::new(vec![n, c], d)?, Saved::Nothing)
            }
            Primitive::Flatten => {
                let x = val(0);
                let n = x.dim(0);
                let rest = x.numel() / n.max(1);
                (x.clone().reshape(vec![n, rest])?, Saved::Nothing)
            }
            Primitive::Gather { indices } => {
                let v = val(0);
                if v.rank() != 1 || indices.iter().any(|&i| i >= v.numel()) {
                    return Err(Error::Shape {
                        op: "gather",
                        lhs: v.shape().to_vec(),
                        rhs: indices.clone(),
                    });
                }
                (
                    Tensor::from_vec(indices.iter().map(|&i| v.data()[i]).collect()),
                    Saved::Nothing,
                )
            }
            Primitive::LogSumExp => (Tensor::scalar(kernels::log_sum_exp(val(0).data())), Saved::Nothing),
            Primitive::Sum => (Tensor::scalar(val(0).sum()), Saved::Nothing),
        };
        Ok(out)
    }

    /// Reverse sweep from a scalar loss. Every leaf that requires a gradient
    /// gets one; leaves the loss does not depend on get zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.grad_enabled {
            return Err(Error::Contract("backward on a no-grad tape".into()));
        }
        let lv = &self.nodes[loss.0].value;
        if lv.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));
        let mut live = 1usize;
        let mut peak = live;
        let mut leaves = BTreeMap::new();

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                if let Some(g) = grads[idx].take() {
                    live -= g.numel();
                }
                continue;
            }
            let Some(record) = &node.record else {
                let g = grads[idx].take().unwrap_or_else(|| Tensor::zeros(node.value.shape()));
                leaves.insert(idx, g);
                continue;
            };
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let input_grads = self.backward_node(record, &node.value, &g)?;
            live -= g.numel();
            for (inp, ig) in record.inputs.iter().zip(input_grads) {
                let Some(ig) = ig else { continue };
                if !self.nodes[inp.0].requires_grad {
                    continue;
                }
                match &mut grads[inp.0] {
                    Some(acc) => acc.add_assign(&ig),
                    slot @ None => {
                        live += ig.numel();
                        *slot = Some(ig);
                    }
                }
            }
            peak = peak.max(live);
        }
        // leaves appearing after the loss never reach it
        for (idx, node) in self.nodes.iter().enumerate().skip(loss.0 + 1) {
            if node.requires_grad && node.record.is_none() {
                leaves.insert(idx, Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients {
            leaves,
            params: self.params.clone(),
            peak_live_elements: peak,
        })
    }

    fn backward_node(&self, rec: &Record, out: &Tensor, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let val = |i: usize| &self.nodes[rec.inputs[i].0].value;
        let needs = |i: usize| self.nodes[rec.inputs[i].0].requires_grad;
        let grads = match &rec.prim {
            Primitive::Zero { .. } => vec![None],
            Primitive::Conv2d(geom) => {
                let (dx, dw) = kernels::conv2d_backward(val(0), val(1), g, *geom, needs(0))?;
                vec![dx, Some(dw)]
            }
            Primitive::AvgPool(p) => vec![Some(kernels::avg_pool_backward(val(0).shape(), g, *p)?)],
            Primitive::MaxPool(_) => {
                let Saved::Argmax(arg) = &rec.saved else {
                    unreachable!("max_pool saves argmax")
                };
                vec![Some(kernels::max_pool_backward(val(0).shape(), g, arg)?)]
            }
            Primitive::Relu => {
                let d: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(out.data())
                    .map(|(g, y)| if *y > 0.0 { *g } else { 0.0 })
                    .collect();
                vec![Some(Tensor::new(g.shape().to_vec(), d)?)]
            }
            Primitive::ChannelNorm { batch_stats, .. } => {
                let Saved::Norm { xhat, inv_std } = &rec.saved else {
                    unreachable!("channel_norm saves statistics")
                };
                let (dx, dg, db) =
                    kernels::channel_norm_backward(val(0).shape(), val(1), xhat, inv_std, g, *batch_stats)?;
                vec![Some(dx), Some(dg), Some(db)]
            }
            Primitive::Linear => {
                let (x, w) = (val(0), val(1));
                let (n, d) = (x.dim(0), x.dim(1));
                let o = w.dim(0);
                let gd = g.data();
                let mut dx = vec![0.0; n * d];
                let mut dw = vec![0.0; o * d];
                let mut db = vec![0.0; o];
                for i in 0..n {
                    for j in 0..o {
                        let gv = gd[i * o + j];
                        db[j] += gv;
                        for k in 0..d {
                            dx[i * d + k] += gv * w.data()[j * d + k];
                            dw[j * d + k] += gv * x.data()[i * d + k];
                        }
                    }
                }
                vec![
                    Some(Tensor::new(vec![n, d], dx)?),
                    Some(Tensor::new(vec![o, d], dw)?),
                    Some(Tensor::new(vec![o], db)?),
                ]
            }
            Primitive::Softmax => {
                let k = *out.shape().last().unwrap_or(&1);
                let mut d = vec![0.0; out.numel()];
                for ((dr, yr), gr) in d.chunks_mut(k).zip(out.data().chunks(k)).zip(g.data().chunks(k)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                    for i in 0..k {
                        dr[i] = yr[i] * (gr[i] - dot);
                    }
                }
                vec![Some(Tensor::new(out.shape().to_vec(), d)?)]
            }
            Primitive::CrossEntropy { labels } => {
                let Saved::Probs(p) = &rec.saved else {
                    unreachable!("cross_entropy saves probabilities")
                };
                let z = val(0);
                let (n, k) = (z.dim(0), z.dim(1));
                let scale = g.item() / n as f64;
                let mut d = p.clone();
                for (i, &l) in labels.iter().enumerate() {
                    d[i * k + l] -= 1.0;
                }
                d.iter_mut().for_each(|v| *v *= scale);
                vec![Some(Tensor::new(vec![n, k], d)?)]
            }
            Primitive::Add => rec.inputs.iter().map(|_| Some(g.clone())).collect(),
            Primitive::Mul => {
                let a: Vec<f64> = g.data().iter().zip(val(1).data()).map(|(g, b)| g * b).collect();
                let b: Vec<f64> = g.data().iter().zip(val(0).data()).map(|(g, a)| g * a).collect();
                vec![
                    Some(Tensor::new(g.shape().to_vec(), a)?),
                    Some(Tensor::new(g.shape().to_vec(), b)?),
                ]
            }
            Primitive::ScaleBy { index } => {
                let w = val(1);
                let dx = needs(0).then(|| g.map(|v| v * w.data()[*index]));
                let mut dw = vec![0.0; w.numel()];
                dw[*index] = g.dot(val(0));
                vec![dx, Some(Tensor::from_vec(dw))]
            }
            Primitive::Concat => {
                let sizes: Vec<usize> = (0..rec.inputs.len()).map(|i| val(i).dim(1)).collect();
                kernels::split_channels(g, &sizes)?.into_iter().map(Some).collect()
            }
            Primitive::Scale { factor } => vec![Some(g.map(|v| v * factor))],
            Primitive::ChannelSelect { channels } => {
                let x = val(0);
                let (n, c, h, w) = x.dims4("channel_select")?;
                let plane = h * w;
                let mut d = vec![0.0; x.numel()];
                for b in 0..n {
                    for (k, &ch) in channels.iter().enumerate() {
                        let from = (b * channels.len() + k) * plane;
                        let to = (b * c + ch) * plane;
                        for i in 0..plane {
                            d[to + i] += g.data()[from + i];
                        }
                    }
                }
                vec![Some(Tensor::new(x.shape().to_vec(), d)?)]
            }
            Primitive::ChannelShuffle { groups } => {
                let src = kernels::shuffle_permutation(out.dim(1), *groups);
                vec![Some(kernels::unpermute_channels(g, &src)?)]
            }
            Primitive::ChannelMerge { groups, take } => {
                let src = kernels::shuffle_permutation(out.dim(1), *groups);
                let cat = kernels::unpermute_channels(g, &src)?;
                let mut parts = kernels::split_channels(&cat, &[val(0).dim(1), take.len()])?;
                let taken = parts.pop().expect("two parts");
                let (n, c, h, w) = val(1).dims4("channel_merge")?;
                let plane = h * w;
                let mut db = vec![0.0; val(1).numel()];
                for b in 0..n {
                    for (k, &ch) in take.iter().enumerate() {
                        let from = (b * take.len() + k) * plane;
                        let to = (b * c + ch) * plane;
                        for i in 0..plane {
                            db[to + i] += taken.data()[from + i];
                        }
                    }
                }
                vec![
                    parts.pop().map(Some).expect("mixed part"),
                    Some(Tensor::new(val(1).shape().to_vec(), db)?),
                ]
            }
            Primitive::GlobalAvgPool => {
                let x = val(0);
                let (_, _, h, w) = x.dims4("global_avg_pool")?;
                let plane = h * w;
                let mut d = Vec::with_capacity(x.numel());
                for &gv in g.data() {
                    d.extend(std::iter::repeat_n(gv / plane as f64, plane));
                }
                vec![Some(Tensor::new(x.shape().to_vec(), d)?)]
            }
            Primitive::Flatten => vec![Some(g.clone().reshape(val(0).shape().to_vec())?)],
            Primitive::Gather { indices } => {
                let mut d = vec![0.0; val(0).numel()];
                for (k, &i) in indices.iter().enumerate() {
                    d[i] += g.data()[k];
                }
                vec![Some(Tensor::from_vec(d))]
            }
            Primitive::LogSumExp => {
                let p = kernels::softmax_rows(val(0));
                vec![Some(p.map(|v| v * g.item()))]
            }
            Primitive::Sum => vec![Some(Tensor::full(val(0).shape(), g.item()))],
        };
        Ok(grads)
    }

    // Convenience wrappers used throughout the crate.

    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        stride: usize,
        padding: usize,
        dilation: usize,
        groups: usize,
    ) -> Result<Var> {
        self.apply(
            Primitive::Conv2d(ConvGeom {
                stride,
                padding,
                dilation,
                groups,
            }),
            &[x, w],
        )
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.apply(Primitive::Relu, &[x])
    }

    pub fn add(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.len() == 1 {
            return Ok(xs[0]);
        }
        self.apply(Primitive::Add, xs)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.apply(Primitive::Sum, &[x])
    }
}
