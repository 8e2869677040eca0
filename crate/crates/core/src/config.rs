//! Run configuration: one JSON document binding space, supernet, pruning,
//! search schedule, data source, oracle budget and seeds.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{load_cifar10, planted_generate, synth_generate, Dataset, Difficulty, Normalization, PlantedSpec};
use crate::error::{Error, Result};
use crate::oneshot::SearchSchedule;
use crate::oracle::{SurvivalMethod, DEFAULT_CAP, DEFAULT_TOP_Q};
use crate::pruning::PruneConfig;
use crate::ranking::{Aggregate, RankerSpec};
use crate::search_space::{OpKind, SearchSpace};
use crate::supernet::SupernetConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpaceSpec {
    Darts {
        steps: usize,
        #[serde(default = "darts_ops")]
        ops: Vec<OpKind>,
    },
    Chain {
        edges: usize,
        ops: Vec<OpKind>,
    },
}

fn darts_ops() -> Vec<OpKind> {
    OpKind::DARTS.to_vec()
}

impl SpaceSpec {
    pub fn build(&self) -> Result<SearchSpace> {
        let space = match self {
            SpaceSpec::Darts { steps, ops } => SearchSpace::darts_with(*steps, ops),
            SpaceSpec::Chain { edges, ops } => SearchSpace::chain(*edges, ops),
        };
        space.validate()?;
        Ok(space)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSpec {
    Planted(PlantedSpec),
    Synthetic {
        classes: usize,
        per_class: usize,
        size: usize,
        channels: usize,
        difficulty: Difficulty,
    },
    /// Directory holding the CIFAR-10 binary batches; the training files
    /// are the search data.
    Cifar10 {
        path: PathBuf,
    },
}

impl DataSpec {
    pub fn load(&self, seed: u64) -> Result<Dataset> {
        match self {
            DataSpec::Planted(spec) => planted_generate(spec, seed),
            DataSpec::Synthetic {
                classes,
                per_class,
                size,
                channels,
                difficulty,
            } => synth_generate(*classes, *per_class, *size, *channels, *difficulty, seed),
            DataSpec::Cifar10 { path } => Ok(load_cifar10(path, &Normalization::cifar10())?.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    /// Data generation and the weight/alpha split.
    pub data: u64,
    /// Weight and alpha initialization.
    pub init: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    /// Training epochs per architecture.
    pub epochs: usize,
    pub cap: usize,
    pub top_q: f64,
    pub survival_seeds: usize,
    pub methods: Vec<SurvivalMethod>,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            epochs: 5,
            cap: DEFAULT_CAP,
            top_q: DEFAULT_TOP_Q,
            survival_seeds: 100,
            methods: vec![
                SurvivalMethod::Algorithmic {
                    xi: 0.5,
                    aggregate: Aggregate::Max,
                },
                SurvivalMethod::Random { xi: 0.5 },
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub space: SpaceSpec,
    pub supernet: SupernetConfig,
    pub prune: PruneConfig,
    pub schedule: SearchSchedule,
    pub data: DataSpec,
    pub seeds: Seeds,
    #[serde(default)]
    pub oracle: OracleConfig,
}

impl RunConfig {
    /// Planted-signal chain task: 3 edges of {zero, skip, avg pool, max pool}.
    pub fn toy() -> Self {
        let planted = PlantedSpec::default();
        RunConfig {
            space: SpaceSpec::Chain {
                edges: 3,
                ops: OpKind::TOY.to_vec(),
            },
            supernet: SupernetConfig::chain(4, 1, planted.size, crate::data::PLANTED_CLASSES),
            prune: PruneConfig::algorithmic(
                0.5,
                vec![RankerSpec::NngpFrobenius {
                    datapoints: 64,
                    batch_size: 32,
                    seed: 0,
                }],
            ),
            schedule: SearchSchedule::toy(),
            data: DataSpec::Planted(planted),
            seeds: Seeds { data: 0, init: 0 },
            oracle: OracleConfig::default(),
        }
    }

    /// Full DARTS cell space on CIFAR-10 found under `path`.
    pub fn darts(path: PathBuf) -> Self {
        RunConfig {
            space: SpaceSpec::Darts {
                steps: 4,
                ops: darts_ops(),
            },
            supernet: SupernetConfig::darts(),
            prune: PruneConfig::algorithmic(
                0.5,
                vec![RankerSpec::NngpFrobenius {
                    datapoints: 64,
                    batch_size: 32,
                    seed: 0,
                }],
            ),
            schedule: SearchSchedule::default(),
            data: DataSpec::Cifar10 { path },
            seeds: Seeds { data: 0, init: 0 },
            oracle: OracleConfig::default(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(e).context(path.display().to_string()))?;
        serde_json::from_str(&text).map_err(|e| Error::Json(e).context(path.display().to_string()))
    }

    /// Checks every part against the others before any compute.
    pub fn validate(&self) -> Result<SearchSpace> {
        let space = self.space.build()?;
        self.supernet.validate(&space)?;
        self.prune.validate()?;
        self.schedule.validate()?;
        if let DataSpec::Planted(p) = &self.data {
            if self.supernet.classes != crate::data::PLANTED_CLASSES
                || self.supernet.image_size != p.size
                || self.supernet.input_channels != 1
            {
                return Err(Error::Config(format!(
                    "planted data is {} classes of 1x{s}x{s} images; the supernet expects {} classes of {}x{}x{}",
                    crate::data::PLANTED_CLASSES,
                    self.supernet.classes,
                    self.supernet.input_channels,
                    self.supernet.image_size,
                    self.supernet.image_size,
                    s = p.size
                )));
            }
        }
        if !(self.oracle.top_q > 0.0 && self.oracle.top_q <= 1.0) {
            return Err(Error::Config(format!(
                "top_q must lie in (0, 1], got {}",
                self.oracle.top_q
            )));
        }
        for m in &self.oracle.methods {
            let xi = match m {
                SurvivalMethod::Random { xi } | SurvivalMethod::Algorithmic { xi, .. } => *xi,
            };
            if !(xi > 0.0 && xi < 1.0) {
                return Err(Error::Config(format!(
                    "survival method xi must lie strictly inside (0, 1), got {xi}"
                )));
            }
        }
        Ok(space)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}
