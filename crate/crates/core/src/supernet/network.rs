use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::config::{ChannelSampling, Readout, SupernetConfig};
use super::mixing::{channel_selection, masked_mix_partial};
use super::ops::Builder;
use super::params::{Access, ParamStore};
use crate::autodiff::{Primitive, Tape, Var};
use crate::container::Container;
use crate::error::{Error, Result};
use crate::search_space::{CellKind, SearchSpace, Topology};
use crate::tensor::Tensor;

/// Tape parameter ids at or above this value are alphas (`BASE + edge`).
pub const ALPHA_ID_BASE: usize = 1 << 30;

/// Architecture weights, one vector per edge with one entry per candidate.
/// Masked entries are kept but never read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchParams {
    pub alpha: Vec<Vec<f64>>,
}

impl ArchParams {
    pub fn zeros(space: &SearchSpace) -> Self {
        ArchParams {
            alpha: space.edges.iter().map(|e| vec![0.0; e.len()]).collect(),
        }
    }

    /// `scale * N(0, 1)` entries from a seeded stream.
    pub fn init(space: &SearchSpace, seed: u64, scale: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa1fa_a1fa);
        ArchParams {
            alpha: space
                .edges
                .iter()
                .map(|e| {
                    (0..e.len())
                        .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
                        .collect()
                })
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.alpha.iter().flatten().all(|a| a.is_finite())
    }

    pub fn tensor(&self, edge: usize) -> Tensor {
        Tensor::from_vec(self.alpha[edge].clone())
    }
}

/// Per-forward options.
#[derive(Debug, Clone, Copy)]
pub struct ForwardOptions<'a> {
    /// Mask to use instead of the network's own; it may only mask more.
    pub mask: Option<&'a SearchSpace>,
    /// Normalize with batch statistics (otherwise unit statistics).
    pub batch_stats: bool,
    /// Seed of the partial-channel subset.
    pub channel_seed: u64,
    pub train_weights: bool,
    pub train_alphas: bool,
}

impl Default for ForwardOptions<'_> {
    fn default() -> Self {
        ForwardOptions {
            mask: None,
            batch_stats: true,
            channel_seed: 0,
            train_weights: false,
            train_alphas: false,
        }
    }
}

/// A masked supernetwork: structure, weights for every unmasked candidate,
/// and architecture parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Supernet {
    pub space: SearchSpace,
    pub config: SupernetConfig,
    pub params: ParamStore,
    pub alphas: ArchParams,
    pub seed: u64,
}

impl Supernet {
    /// Builds the network and initializes weights for every unmasked
    /// candidate. Weight values depend only on `(seed, parameter name)`, so
    /// networks over different masks of one space share their weights.
    pub fn new(space: SearchSpace, config: SupernetConfig, seed: u64) -> Result<Self> {
        space.validate()?;
        config.validate(&space)?;
        let alphas = ArchParams::init(&space, seed, config.alpha_init_scale);
        let mut params = ParamStore::new();
        {
            let mut b = Builder {
                access: Access::Build {
                    store: &mut params,
                    seed,
                },
                batch_stats: true,
                eps: config.norm_eps,
            };
            let mut tape = Tape::no_grad();
            let x = tape.constant(Tensor::zeros(&[
                1,
                config.input_channels,
                config.image_size,
                config.image_size,
            ]));
            let a: Vec<Var> = (0..space.edges.len())
                .map(|e| tape.constant(alphas.tensor(e)))
                .collect();
            graph(&space, &config, &mut b, &mut tape, x, &a, 0)?;
        }
        Ok(Supernet {
            space,
            config,
            params,
            alphas,
            seed,
        })
    }

    /// Seed of the partial-channel subset for the given batch counter.
    pub fn channel_seed(&self, batch_counter: u64) -> u64 {
        match self.config.channel_sampling {
            ChannelSampling::Fixed => self.seed,
            ChannelSampling::PerBatch => self.seed ^ batch_counter.wrapping_add(1).wrapping_mul(0xd134_2543_de82_ef95),
        }
    }

    /// Records a forward pass of `batch` on `tape` and returns the logits.
    pub fn forward(&self, tape: &mut Tape, batch: &Tensor, opts: &ForwardOptions) -> Result<Var> {
        let (_, c, h, w) = batch.dims4("forward")?;
        if c != self.config.input_channels || h != self.config.image_size || w != self.config.image_size {
            return Err(Error::Shape {
                op: "forward",
                lhs: vec![
                    self.config.input_channels,
                    self.config.image_size,
                    self.config.image_size,
                ],
                rhs: vec![c, h, w],
            });
        }
        let space = match opts.mask {
            Some(m) => {
                self.check_submask(m)?;
                m
            }
            None => &self.space,
        };
        let x = tape.constant(batch.clone());
        let a: Vec<Var> = (0..space.edges.len())
            .map(|e| {
                let t = self.alphas.tensor(e);
                if opts.train_alphas {
                    tape.param(ALPHA_ID_BASE + e, &t)
                } else {
                    tape.constant(t)
                }
            })
            .collect();
        let mut b = Builder {
            access: Access::Use {
                store: &self.params,
                trainable: opts.train_weights,
            },
            batch_stats: opts.batch_stats,
            eps: self.config.norm_eps,
        };
        graph(space, &self.config, &mut b, tape, x, &a, opts.channel_seed)
    }

    /// Logits on a fresh no-grad tape.
    pub fn predict(&self, batch: &Tensor, opts: &ForwardOptions) -> Result<Tensor> {
        let mut tape = Tape::no_grad();
        let y = self.forward(&mut tape, batch, opts)?;
        Ok(tape.value(y).clone())
    }

    fn check_submask(&self, m: &SearchSpace) -> Result<()> {
        if !self.space.same_structure(m) {
            return Err(Error::Contract("mask override has a different structure".into()));
        }
        for (own, other) in self.space.edges.iter().zip(&m.edges) {
            if other.mask.iter().zip(&own.mask).any(|(&o, &s)| o && !s) {
                return Err(Error::Contract(format!(
                    "mask override unmasks a candidate on edge {} that has no weights",
                    own.edge_id
                )));
            }
        }
        Ok(())
    }

    /// Number of scalar weights (unmasked candidates, stem, preprocessing,
    /// classifier).
    pub fn weight_count(&self) -> usize {
        self.params.numel()
    }

    /// Serializes weights, alphas, structure and config.
    pub fn to_container(&self) -> Container {
        let meta = serde_json::json!({
            "space": self.space,
            "config": self.config,
            "seed": self.seed,
        });
        let mut c = Container::new("supernet", meta);
        for (name, t) in self.params.iter() {
            c.push(format!("param/{name}"), t.clone());
        }
        for e in 0..self.alphas.alpha.len() {
            c.push(format!("alpha/{e}"), self.alphas.tensor(e));
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.kind != "supernet" {
            return Err(Error::Format {
                what: "supernet checkpoint".into(),
                expected: "supernet".into(),
                actual: c.kind.clone(),
            });
        }
        let space: SearchSpace = serde_json::from_value(c.metadata["space"].clone())?;
        let config: SupernetConfig = serde_json::from_value(c.metadata["config"].clone())?;
        let seed = c.metadata["seed"].as_u64().ok_or_else(|| Error::Malformed {
            what: "supernet checkpoint".into(),
            reason: "missing seed".into(),
        })?;
        let mut net = Supernet::new(space, config, seed)?;
        let mut seen = 0;
        for (name, t) in &c.tensors {
            if let Some(p) = name.strip_prefix("param/") {
                let id = net.params.id(p).ok_or_else(|| Error::Malformed {
                    what: "supernet checkpoint".into(),
                    reason: format!("unknown parameter {p}"),
                })?;
                if net.params.tensor(id).shape() != t.shape() {
                    return Err(Error::Shape {
                        op: "checkpoint",
                        lhs: net.params.tensor(id).shape().to_vec(),
                        rhs: t.shape().to_vec(),
                    });
                }
                *net.params.tensor_mut(id) = t.clone();
                seen += 1;
            } else if let Some(e) = name.strip_prefix("alpha/") {
                let e: usize = e.parse().map_err(|_| Error::Malformed {
                    what: "supernet checkpoint".into(),
                    reason: format!("bad alpha name {name}"),
                })?;
                let slot = net.alphas.alpha.get_mut(e).filter(|a| a.len() == t.numel());
                let slot = slot.ok_or_else(|| Error::Malformed {
                    what: "supernet checkpoint".into(),
                    reason: format!("alpha {e} does not fit the space"),
                })?;
                slot.copy_from_slice(t.data());
            }
        }
        if seen != net.params.len() {
            return Err(Error::Malformed {
                what: "supernet checkpoint".into(),
                reason: format!("{} of {} parameters present", seen, net.params.len()),
            });
        }
        Ok(net)
    }
}

/// The whole network on `tape`. `alphas[e]` holds the alpha vector of
/// edge position `e`.
fn graph(
    space: &SearchSpace,
    cfg: &SupernetConfig,
    b: &mut Builder,
    tape: &mut Tape,
    x: Var,
    alphas: &[Var],
    channel_seed: u64,
) -> Result<Var> {
    let k = cfg.partial_channel_divisor;
    let mix = |b: &mut Builder, tape: &mut Tape, prefix: &str, pos: usize, h: Var, c: usize, stride: usize| {
        let set = &space.edges[pos];
        let sel = if k > 1 {
            channel_selection(c, k, channel_seed)?
        } else {
            Vec::new()
        };
        let c_op = c / k;
        masked_mix_partial(tape, h, set, alphas[pos], k, &sel, stride, |tape, op, h| {
            b.candidate(tape, &format!("{prefix}.op{op}"), set.candidates[op], h, c_op, stride)
        })
    };

    let (features, c_last) = match space.topology {
        Topology::Chain => {
            let c = cfg.init_channels;
            let h = b.conv(tape, "stem.conv", x, cfg.input_channels, c, 3, 1, 1, 1, 1)?;
            let mut h = b.norm(tape, "stem.norm", h, c)?;
            for pos in 0..space.edges.len() {
                h = mix(b, tape, &format!("edge{pos}"), pos, h, c, 1).map_err(|e| e.context(format!("edge {pos}")))?;
            }
            (h, c)
        }
        Topology::Darts { steps } => {
            let mut by_dst: HashMap<(CellKind, usize), Vec<usize>> = HashMap::new();
            for (pos, e) in space.edges.iter().enumerate() {
                by_dst.entry((e.cell, e.dst)).or_default().push(pos);
            }
            let mut c_cur = cfg.stem_multiplier * cfg.init_channels;
            let h = b.conv(tape, "stem.conv", x, cfg.input_channels, c_cur, 3, 1, 1, 1, 1)?;
            let stem = b.norm(tape, "stem.norm", h, c_cur)?;
            let (mut s0, mut s1) = (stem, stem);
            let (mut c_pp, mut c_p) = (c_cur, c_cur);
            c_cur = cfg.init_channels;
            let mut red_prev = false;
            for i in 0..cfg.cells {
                let red = cfg.is_reduction(i);
                if red {
                    c_cur *= 2;
                }
                let kind = if red { CellKind::Reduction } else { CellKind::Normal };
                let cell = |b: &mut Builder, tape: &mut Tape| -> Result<Var> {
                    let name = format!("cell{i}");
                    let p0 = b.relu_conv_norm(
                        tape,
                        &format!("{name}.pre0"),
                        s0,
                        c_pp,
                        c_cur,
                        1,
                        if red_prev { 2 } else { 1 },
                    )?;
                    let p1 = b.relu_conv_norm(tape, &format!("{name}.pre1"), s1, c_p, c_cur, 1, 1)?;
                    let mut states = vec![p0, p1];
                    for node in 0..steps {
                        let dst = node + 2;
                        let edges = by_dst
                            .get(&(kind, dst))
                            .ok_or_else(|| Error::Invariant(format!("no {kind:?} edges into node {dst}")))?;
                        let mut terms = Vec::with_capacity(edges.len());
                        for &pos in edges {
                            let src = space.edges[pos].src;
                            let stride = if red && src < 2 { 2 } else { 1 };
                            let y = mix(b, tape, &format!("{name}.edge{pos}"), pos, states[src], c_cur, stride)
                                .map_err(|e| e.context(format!("edge {}", space.edges[pos].edge_id)))?;
                            terms.push(y);
                        }
                        states.push(tape.add(&terms)?);
                    }
                    tape.apply(Primitive::Concat, &states[2..])
                };
                let out = cell(b, tape).map_err(|e| e.context(format!("cell {i}")))?;
                s0 = s1;
                s1 = out;
                c_pp = c_p;
                c_p = steps * c_cur;
                red_prev = red;
            }
            (s1, c_p)
        }
    };

    match cfg.readout {
        Readout::GlobalPool => {
            let g = tape.apply(Primitive::GlobalAvgPool, &[features])?;
            b.linear(tape, "classifier", g, c_last, cfg.classes)
        }
        Readout::Flatten => {
            let f = tape.apply(Primitive::Flatten, &[features])?;
            let d = tape.value(f).dim(1);
            b.linear(tape, "classifier", f, d, cfg.classes)
        }
    }
}
