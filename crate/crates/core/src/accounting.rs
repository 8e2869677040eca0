//! Analytic memory (element counts) and compute (multiply-accumulates) of
//! one weight step of a masked supernetwork.
//!
//! Retention rules, per tape node (output elements plus saved state):
//!
//! | node                         | retained                         |
//! |------------------------------|----------------------------------|
//! | conv, relu, avg pool, zero   | output                           |
//! | max pool                     | output + one argmax per output   |
//! | channel norm                 | output + normalized input        |
//! | linear, pools, flatten, add  | output                           |
//! | scale-by-weight (per branch) | output                           |
//! | gather, softmax (per edge)   | one element per unmasked op      |
//! | cross-entropy                | one + class probabilities        |
//! | identity (skip, stride 1)    | nothing                          |
//!
//! Parameters are counted for unmasked candidates only; optimizer state is
//! one momentum buffer per weight plus two Adam moments per unmasked alpha;
//! gradients are one per weight and per unmasked alpha.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::kernels::conv_out_len;
use crate::error::Result;
use crate::search_space::{CellKind, OpKind, SearchSpace, Topology};
use crate::supernet::{Readout, SupernetConfig};

/// Costs of one candidate operation, summed over every cell that uses its
/// edge.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OpCost {
    pub edge_id: usize,
    pub op_index: usize,
    pub op: Option<OpKind>,
    pub activation_elements: u64,
    pub parameter_elements: u64,
    pub forward_macs: u64,
}

impl OpCost {
    /// Memory across all categories: activations, weights, momentum,
    /// gradients, and the alpha's two Adam moments and gradient.
    pub fn total_elements(&self) -> u64 {
        self.activation_elements + 3 * self.parameter_elements + 3
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EdgeCost {
    pub edge_id: usize,
    /// Mixing plumbing that exists while the edge has any unmasked op.
    pub fixed_activation_elements: u64,
    pub ops: Vec<OpCost>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MemoryReport {
    pub parameter_elements: u64,
    pub optimizer_state_elements: u64,
    pub retained_activation_elements: u64,
    pub gradient_elements: u64,
    pub total_elements: u64,
    pub edges: Vec<EdgeCost>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ComputeReport {
    pub forward_macs: u64,
    pub backward_macs: u64,
    /// Forward MACs per edge.
    pub edges: Vec<u64>,
}

/// Expected values of a report under a random mask.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExpectedMemory {
    pub parameter_elements: f64,
    pub optimizer_state_elements: f64,
    pub retained_activation_elements: f64,
    pub gradient_elements: f64,
    pub total_elements: f64,
}

#[derive(Default)]
struct Tally {
    act: u64,
    params: u64,
    macs: u64,
}

/// Walks the network and charges every node to either the shared tally or
/// an `(edge, op)` slot.
struct Walker<'a> {
    cfg: &'a SupernetConfig,
    n: u64,
    shared: Tally,
    fixed: BTreeMap<usize, u64>,
    ops: BTreeMap<(usize, usize), Tally>,
    /// Current charge target.
    slot: Option<(usize, usize)>,
}

impl Walker<'_> {
    fn tally(&mut self) -> &mut Tally {
        match self.slot {
            Some(k) => self.ops.entry(k).or_default(),
            None => &mut self.shared,
        }
    }

    fn act(&mut self, c: usize, h: usize, w: usize) {
        let e = self.n * (c * h * w) as u64;
        self.tally().act += e;
    }

    #[allow(clippy::too_many_arguments)]
    fn conv(&mut self, c_in: usize, c_out: usize, k: usize, s: usize, p: usize, d: usize, g: usize, h: usize) -> usize {
        let ho = conv_out_len(h, k, s, p, d);
        let per_out = (c_in / g * k * k) as u64;
        let n = self.n;
        let t = self.tally();
        t.act += n * (c_out * ho * ho) as u64;
        t.params += c_out as u64 * per_out;
        t.macs += n * (c_out * ho * ho) as u64 * per_out;
        ho
    }

    fn norm(&mut self, c: usize, h: usize) {
        self.act(c, h, h);
        self.act(c, h, h);
        self.tally().params += 2 * c as u64;
    }

    fn relu_conv_norm(&mut self, c_in: usize, c_out: usize, k: usize, s: usize, h: usize) -> usize {
        self.act(c_in, h, h);
        let ho = self.conv(c_in, c_out, k, s, k / 2, 1, 1, h);
        self.norm(c_out, ho);
        ho
    }

    fn dil_conv(&mut self, c: usize, k: usize, s: usize, d: usize, h: usize) -> usize {
        self.act(c, h, h);
        let ho = self.conv(c, c, k, s, d * (k - 1) / 2, d, c, h);
        let ho = self.conv(c, c, 1, 1, 0, 1, 1, ho);
        self.norm(c, ho);
        ho
    }

    fn candidate(&mut self, op: OpKind, c: usize, s: usize, h: usize) -> usize {
        let pooled = conv_out_len(h, 3, s, 1, 1);
        match op {
            OpKind::Zero | OpKind::AvgPool3x3 => {
                self.act(c, pooled, pooled);
                pooled
            }
            OpKind::MaxPool3x3 => {
                self.act(c, pooled, pooled);
                self.act(c, pooled, pooled);
                pooled
            }
            OpKind::SkipConnect if s == 1 => h,
            OpKind::SkipConnect => self.relu_conv_norm(c, c, 1, s, h),
            OpKind::SepConv3x3 | OpKind::SepConv5x5 => {
                let k = if op == OpKind::SepConv3x3 { 3 } else { 5 };
                let ho = self.dil_conv(c, k, s, 1, h);
                self.dil_conv(c, k, 1, 1, ho)
            }
            OpKind::DilConv3x3 => self.dil_conv(c, 3, s, 2, h),
            OpKind::DilConv5x5 => self.dil_conv(c, 5, s, 2, h),
        }
    }

    /// One mixing site on a `(c, h, h)` input.
    fn site(&mut self, space: &SearchSpace, pos: usize, c: usize, s: usize, h: usize) -> usize {
        let set = &space.edges[pos];
        let k = self.cfg.partial_channel_divisor;
        let c_op = c / k;
        let m = set.unmasked_count() as u64;
        let mut fixed = 0u64;
        if k > 1 {
            fixed += self.n * (c_op * h * h) as u64;
        }
        let mut out_h = h;
        for o in set.unmasked() {
            self.slot = Some((set.edge_id, o));
            out_h = self.candidate(set.candidates[o], c_op, s, h);
            self.act(c_op, out_h, out_h);
            // One gather entry and one softmax entry per unmasked op.
            self.tally().act += 2;
        }
        self.slot = None;
        let _ = m;
        fixed += self.n * (c_op * out_h * out_h) as u64;
        if k > 1 {
            if s > 1 {
                let hp = conv_out_len(h, s, s, 0, 1);
                fixed += 2 * self.n * (c * hp * hp) as u64;
            }
            fixed += self.n * (c * out_h * out_h) as u64;
        }
        *self.fixed.entry(set.edge_id).or_default() += fixed;
        out_h
    }

    fn readout(&mut self, c: usize, h: usize) {
        let classes = self.cfg.classes;
        let d = match self.cfg.readout {
            Readout::GlobalPool => {
                self.act(c, 1, 1);
                c
            }
            Readout::Flatten => {
                self.act(c, h, h);
                c * h * h
            }
        };
        let n = self.n;
        let t = self.tally();
        t.act += n * classes as u64;
        t.params += (d * classes + classes) as u64;
        t.macs += n * (d * classes) as u64;
        // Cross-entropy: scalar loss plus saved probabilities.
        t.act += 1 + n * classes as u64;
    }

    fn network(&mut self, space: &SearchSpace) {
        let cfg = self.cfg;
        let size = cfg.image_size;
        match space.topology {
            Topology::Chain => {
                let c = cfg.init_channels;
                self.conv(cfg.input_channels, c, 3, 1, 1, 1, 1, size);
                self.norm(c, size);
                let mut h = size;
                for pos in 0..space.edges.len() {
                    h = self.site(space, pos, c, 1, h);
                }
                self.readout(c, h);
            }
            Topology::Darts { steps } => {
                let mut c_cur = cfg.stem_multiplier * cfg.init_channels;
                self.conv(cfg.input_channels, c_cur, 3, 1, 1, 1, 1, size);
                self.norm(c_cur, size);
                let (mut c_pp, mut c_p) = (c_cur, c_cur);
                let (mut h_pp, mut h_p) = (size, size);
                c_cur = cfg.init_channels;
                let mut red_prev = false;
                for i in 0..cfg.cells {
                    let red = cfg.is_reduction(i);
                    if red {
                        c_cur *= 2;
                    }
                    let kind = if red { CellKind::Reduction } else { CellKind::Normal };
                    let h0 = self.relu_conv_norm(c_pp, c_cur, 1, if red_prev { 2 } else { 1 }, h_pp);
                    let h1 = self.relu_conv_norm(c_p, c_cur, 1, 1, h_p);
                    let mut hs = vec![h0, h1];
                    for node in 0..steps {
                        let dst = node + 2;
                        let mut h_out = 0;
                        let edges: Vec<usize> = (0..space.edges.len())
                            .filter(|&p| space.edges[p].cell == kind && space.edges[p].dst == dst)
                            .collect();
                        for &pos in &edges {
                            let src = space.edges[pos].src;
                            let s = if red && src < 2 { 2 } else { 1 };
                            h_out = self.site(space, pos, c_cur, s, hs[src]);
                        }
                        if edges.len() > 1 {
                            self.act(c_cur, h_out, h_out);
                        }
                        hs.push(h_out);
                    }
                    let h_cell = hs[2];
                    self.act(steps * c_cur, h_cell, h_cell);
                    c_pp = c_p;
                    h_pp = h_p;
                    c_p = steps * c_cur;
                    h_p = h_cell;
                    red_prev = red;
                }
                self.readout(c_p, h_p);
            }
        }
    }
}

fn walk<'a>(space: &SearchSpace, cfg: &'a SupernetConfig, batch: usize) -> Walker<'a> {
    let mut w = Walker {
        cfg,
        n: batch as u64,
        shared: Tally::default(),
        fixed: BTreeMap::new(),
        ops: BTreeMap::new(),
        slot: None,
    };
    w.network(space);
    w
}

/// Memory of one weight step (forward plus backward) at `batch` examples.
pub fn estimate_memory(space: &SearchSpace, cfg: &SupernetConfig, batch: usize) -> Result<MemoryReport> {
    space.validate()?;
    cfg.validate(space)?;
    let w = walk(space, cfg, batch);
    let alphas = space.unmasked_total() as u64;
    let mut params = w.shared.params;
    let mut act = w.shared.act;
    let mut edges = Vec::with_capacity(space.edges.len());
    for set in &space.edges {
        let fixed = w.fixed.get(&set.edge_id).copied().unwrap_or(0);
        act += fixed;
        let ops = set
            .unmasked()
            .map(|o| {
                let t = w.ops.get(&(set.edge_id, o));
                let (a, p, m) = t.map_or((0, 0, 0), |t| (t.act, t.params, t.macs));
                act += a;
                params += p;
                OpCost {
                    edge_id: set.edge_id,
                    op_index: o,
                    op: Some(set.candidates[o]),
                    activation_elements: a,
                    parameter_elements: p,
                    forward_macs: m,
                }
            })
            .collect();
        edges.push(EdgeCost {
            edge_id: set.edge_id,
            fixed_activation_elements: fixed,
            ops,
        });
    }
    let optimizer = params + 2 * alphas;
    let grads = params + alphas;
    Ok(MemoryReport {
        parameter_elements: params,
        optimizer_state_elements: optimizer,
        retained_activation_elements: act,
        gradient_elements: grads,
        total_elements: params + optimizer + act + grads,
        edges,
    })
}

pub fn estimate_compute(space: &SearchSpace, cfg: &SupernetConfig, batch: usize) -> Result<ComputeReport> {
    space.validate()?;
    cfg.validate(space)?;
    let w = walk(space, cfg, batch);
    let edges: Vec<u64> = space
        .edges
        .iter()
        .map(|set| {
            set.unmasked()
                .map(|o| w.ops.get(&(set.edge_id, o)).map_or(0, |t| t.macs))
                .sum()
        })
        .collect();
    let forward = w.shared.macs + edges.iter().sum::<u64>();
    Ok(ComputeReport {
        forward_macs: forward,
        backward_macs: 2 * forward,
        edges,
    })
}

/// Probability that a given op of an edge with `k` unmasked candidates is
/// kept by random masking at keep probability `xi`, repair included.
pub fn keep_probability(k: usize, xi: f64) -> f64 {
    xi + (1.0 - xi).powi(k as i32) / k as f64
}

/// Exact expectation of [`estimate_memory`] over random masks of `space`
/// at keep probability `xi`. Every field is linear in the mask bits.
pub fn expected_memory_random(
    space: &SearchSpace,
    cfg: &SupernetConfig,
    batch: usize,
    xi: f64,
) -> Result<ExpectedMemory> {
    let full = estimate_memory(space, cfg, batch)?;
    let mut act = full.retained_activation_elements as f64;
    let mut params = full.parameter_elements as f64;
    let mut alphas = space.unmasked_total() as f64;
    for (set, edge) in space.edges.iter().zip(&full.edges) {
        let p = keep_probability(set.unmasked_count(), xi);
        for op in &edge.ops {
            act -= (1.0 - p) * op.activation_elements as f64;
            params -= (1.0 - p) * op.parameter_elements as f64;
            alphas -= 1.0 - p;
        }
    }
    let optimizer = params + 2.0 * alphas;
    let grads = params + alphas;
    Ok(ExpectedMemory {
        parameter_elements: params,
        optimizer_state_elements: optimizer,
        retained_activation_elements: act,
        gradient_elements: grads,
        total_elements: params + optimizer + act + grads,
    })
}

/// One CSV row per `(edge, op)` with the op's standalone costs.
pub fn memory_csv(report: &MemoryReport, compute: &ComputeReport) -> String {
    let mut out = String::from("edge_id,op_index,op,activation_elements,parameter_elements,forward_macs,edge_fixed_activation,edge_forward_macs\n");
    for (edge, macs) in report.edges.iter().zip(&compute.edges) {
        for op in &edge.ops {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                op.edge_id,
                op.op_index,
                op.op.map_or("", |o| o.name()),
                op.activation_elements,
                op.parameter_elements,
                op.forward_macs,
                edge.fixed_activation_elements,
                macs
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Primitive, Tape};
    use crate::supernet::{ForwardOptions, Supernet};
    use crate::tensor::Tensor;

    fn tape_elements(space: &SearchSpace, cfg: &SupernetConfig, batch: usize) -> usize {
        let net = Supernet::new(space.clone(), cfg.clone(), 1).unwrap();
        let x = Tensor::full(&[batch, cfg.input_channels, cfg.image_size, cfg.image_size], 0.5);
        let mut tape = Tape::new();
        let opts = ForwardOptions {
            train_weights: true,
            channel_seed: 3,
            ..Default::default()
        };
        let y = net.forward(&mut tape, &x, &opts).unwrap();
        tape.apply(Primitive::CrossEntropy { labels: vec![0; batch] }, &[y])
            .unwrap();
        tape.activation_elements()
    }

    fn small() -> (SearchSpace, SupernetConfig) {
        let space = SearchSpace::darts_with(2, &OpKind::DARTS);
        let cfg = SupernetConfig {
            init_channels: 4,
            image_size: 8,
            classes: 3,
            ..SupernetConfig::darts_cells(3)
        };
        (space, cfg)
    }

    #[test]
    fn model_matches_tape_exactly() {
        let (space, cfg) = small();
        for k in [1, 2, 4] {
            let cfg = cfg.clone().with_divisor(k);
            let r = estimate_memory(&space, &cfg, 2).unwrap();
            assert_eq!(
                r.retained_activation_elements as usize,
                tape_elements(&space, &cfg, 2),
                "K={k}"
            );
            let net = Supernet::new(space.clone(), cfg.clone(), 1).unwrap();
            assert_eq!(r.parameter_elements as usize, net.weight_count(), "K={k}");
        }
        let masked = crate::pruning::random_mask(&space, 0.5, 4).unwrap();
        let r = estimate_memory(&masked, &cfg, 3).unwrap();
        assert_eq!(r.retained_activation_elements as usize, tape_elements(&masked, &cfg, 3));
        let chain = SearchSpace::toy(3, 4);
        let ccfg = SupernetConfig::chain(2, 1, 6, 3);
        let r = estimate_memory(&chain, &ccfg, 4).unwrap();
        assert_eq!(r.retained_activation_elements as usize, tape_elements(&chain, &ccfg, 4));
    }

    #[test]
    fn masking_subtracts_standalone_cost() {
        let (space, cfg) = small();
        let full = estimate_memory(&space, &cfg, 2).unwrap();
        let op = &full.edges[3].ops[5];
        let less = estimate_memory(&space.without(3, 5).unwrap(), &cfg, 2).unwrap();
        assert_eq!(full.total_elements - less.total_elements, op.total_elements());
        assert_eq!(
            full.retained_activation_elements - less.retained_activation_elements,
            op.activation_elements
        );
    }

    #[test]
    fn free_ops_cost_no_macs() {
        let space = SearchSpace::toy(3, 4);
        let cfg = SupernetConfig::chain(2, 1, 6, 3);
        let c = estimate_compute(&space, &cfg, 4).unwrap();
        assert!(c.edges.iter().all(|&m| m == 0));
        assert_eq!(c.backward_macs, 2 * c.forward_macs);
    }

    #[test]
    fn keep_probability_closed_form() {
        assert_eq!(keep_probability(1, 0.3), 1.0);
        assert!((keep_probability(2, 0.5) - 0.625).abs() < 1e-15);
    }
}
