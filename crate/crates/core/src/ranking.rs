//! Training-free ranking functions `r: space -> score` for pruning.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;

use crate::error::{Error, Result};
use crate::oracle::{enumerate_space, FitnessTable, DEFAULT_CAP};
use crate::search_space::{assignment_key, SearchSpace};
use crate::supernet::{ForwardOptions, Supernet, SupernetConfig};
use crate::tensor::Tensor;

/// A ranking function over (masked) search spaces.
pub trait Ranker: Send + Sync {
    fn kind(&self) -> &'static str;
    fn score(&self, space: &SearchSpace) -> Result<f64>;
}

/// Scores every space the same.
#[derive(Debug, Clone, Copy)]
pub struct ConstantRanker(pub f64);

impl Ranker for ConstantRanker {
    fn kind(&self) -> &'static str {
        "constant"
    }

    fn score(&self, _space: &SearchSpace) -> Result<f64> {
        Ok(self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregate {
    Mean,
    #[default]
    Max,
}

/// Aggregate of exact fitness values over every architecture left in the
/// space.
#[derive(Debug, Clone)]
pub struct TabularRanker {
    pub table: FitnessTable,
    pub aggregate: Aggregate,
}

impl Ranker for TabularRanker {
    fn kind(&self) -> &'static str {
        "tabular"
    }

    fn score(&self, space: &SearchSpace) -> Result<f64> {
        let archs = enumerate_space(space, DEFAULT_CAP)?;
        let mut best = f64::NEG_INFINITY;
        let mut total = 0.0;
        for a in &archs {
            let f = self.table.get(&assignment_key(a))?;
            best = best.max(f);
            total += f;
        }
        Ok(match self.aggregate {
            Aggregate::Max => best,
            Aggregate::Mean => total / archs.len() as f64,
        })
    }
}

/// Gram matrix of network outputs over `m` datapoints.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelEstimate {
    /// Row-major `m x m`.
    pub gram: Vec<f64>,
    pub m: usize,
}

impl KernelEstimate {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.gram[i * self.m + j]
    }

    pub fn frobenius(&self) -> f64 {
        self.gram.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.m {
            for j in 0..i {
                worst = worst.max((self.at(i, j) - self.at(j, i)).abs());
            }
        }
        worst
    }
}

/// `G_ij = <z_i, z_j> / classes` over the rows of every logit batch.
pub fn nngp_kernel(logits: &[Tensor]) -> Result<KernelEstimate> {
    let classes = logits.first().map_or(0, |t| t.dim(1));
    let mut rows: Vec<&[f64]> = Vec::new();
    for t in logits {
        if t.rank() != 2 || t.dim(1) != classes {
            return Err(Error::Shape {
                op: "nngp_kernel",
                lhs: vec![classes],
                rhs: t.shape().to_vec(),
            });
        }
        rows.extend(t.data().chunks(classes));
    }
    let m = rows.len();
    let mut gram = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..=i {
            let g = rows[i].iter().zip(rows[j]).map(|(a, b)| a * b).sum::<f64>() / classes as f64;
            gram[i * m + j] = g;
            gram[j * m + i] = g;
        }
    }
    Ok(KernelEstimate { gram, m })
}

/// Frobenius norm of the NNGP kernel of `net` (restricted to `mask`) over
/// the datapoints in `batches`. Forward only, with unit normalization
/// statistics so that every datapoint is processed independently.
pub fn nngp_frobenius(net: &Supernet, batches: &[Tensor], mask: Option<&SearchSpace>) -> Result<f64> {
    let opts = ForwardOptions {
        mask,
        batch_stats: false,
        ..Default::default()
    };
    let mut logits = Vec::with_capacity(batches.len());
    for (i, b) in batches.iter().enumerate() {
        let y = net
            .predict(b, &opts)
            .map_err(|e| e.context(format!("nngp batch {i}")))?;
        if !y.is_finite() {
            return Err(Error::NumericOverflow {
                op: format!("nngp logits of batch {i}"),
            }
            .context(format!("nngp batch {i}")));
        }
        logits.push(y);
    }
    Ok(nngp_kernel(&logits)?.frobenius())
}

/// NNGP-Frobenius ranker: a supernet frozen at initialization plus a fixed
/// set of input batches.
#[derive(Debug, Clone)]
pub struct NngpRanker {
    pub net: Supernet,
    pub batches: Vec<Tensor>,
}

impl NngpRanker {
    /// Builds the network over `space` with weights drawn from `seed`.
    pub fn new(space: &SearchSpace, config: SupernetConfig, batches: Vec<Tensor>, seed: u64) -> Result<Self> {
        let points: usize = batches.iter().map(|b| b.dim(0)).sum();
        if points < 2 {
            return Err(Error::Config("the nngp ranker needs at least two datapoints".into()));
        }
        Ok(NngpRanker {
            net: Supernet::new(space.clone(), config, seed)?,
            batches,
        })
    }
}

impl Ranker for NngpRanker {
    fn kind(&self) -> &'static str {
        "nngp_frobenius"
    }

    fn score(&self, space: &SearchSpace) -> Result<f64> {
        nngp_frobenius(&self.net, &self.batches, Some(space))
    }
}

/// Serializable ranker description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RankerSpec {
    NngpFrobenius {
        datapoints: usize,
        batch_size: usize,
        seed: u64,
    },
    Tabular {
        table: String,
        #[serde(default)]
        aggregate: Aggregate,
    },
    Constant {
        value: f64,
    },
}

impl RankerSpec {
    pub fn name(&self) -> String {
        match self {
            RankerSpec::NngpFrobenius { datapoints, seed, .. } => format!("nngp_frobenius(m={datapoints},seed={seed})"),
            RankerSpec::Tabular { table, aggregate } => format!("tabular({table},{aggregate:?})"),
            RankerSpec::Constant { value } => format!("constant({value})"),
        }
    }

    /// Instantiates the ranker. NNGP draws its datapoints from `data` in a
    /// seeded order.
    pub fn build(&self, space: &SearchSpace, cfg: &SupernetConfig, data: &Dataset) -> Result<Box<dyn Ranker>> {
        Ok(match self {
            RankerSpec::NngpFrobenius {
                datapoints,
                batch_size,
                seed,
            } => {
                if *datapoints > data.len() || *batch_size == 0 {
                    return Err(Error::Config(format!(
                        "nngp ranker wants {datapoints} datapoints in batches of {batch_size}; the data holds {}",
                        data.len()
                    )));
                }
                let mut idx: Vec<usize> = (0..data.len()).collect();
                idx.shuffle(&mut ChaCha8Rng::seed_from_u64(*seed));
                let batches = idx[..*datapoints]
                    .chunks(*batch_size)
                    .map(|c| data.batch(c).0)
                    .collect();
                Box::new(NngpRanker::new(&space.unmasked_copy(), cfg.clone(), batches, *seed)?)
            }
            RankerSpec::Tabular { table, aggregate } => Box::new(TabularRanker {
                table: FitnessTable::load(Path::new(table))?,
                aggregate: *aggregate,
            }),
            RankerSpec::Constant { value } => Box::new(ConstantRanker(*value)),
        })
    }
}
