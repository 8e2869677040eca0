use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::search_space::{SearchSpace, Topology};

/// When the partial-channel subset is redrawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelSampling {
    /// A new subset for every batch.
    #[default]
    PerBatch,
    /// One subset for the whole run.
    Fixed,
}

/// How the final feature map becomes logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    /// Global average pool, then a linear layer.
    #[default]
    GlobalPool,
    /// Flatten the whole map, then a linear layer.
    Flatten,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupernetConfig {
    pub init_channels: usize,
    /// Number of stacked cells (DARTS topology only).
    pub cells: usize,
    /// Cell indices that are reduction cells.
    pub reduction_cells: Vec<usize>,
    pub stem_multiplier: usize,
    pub input_channels: usize,
    pub image_size: usize,
    pub classes: usize,
    /// `K`: only `1/K` of the channels enter each mixing operation.
    pub partial_channel_divisor: usize,
    #[serde(default)]
    pub channel_sampling: ChannelSampling,
    #[serde(default)]
    pub readout: Readout,
    pub norm_eps: f64,
    /// Standard deviation of the initial alphas.
    pub alpha_init_scale: f64,
}

impl SupernetConfig {
    /// Eight cells at 16 channels, reductions at one and two thirds depth,
    /// 32x32 RGB input, ten classes.
    pub fn darts() -> Self {
        SupernetConfig {
            init_channels: 16,
            cells: 8,
            reduction_cells: vec![8 / 3, 2 * 8 / 3],
            stem_multiplier: 3,
            input_channels: 3,
            image_size: 32,
            classes: 10,
            partial_channel_divisor: 1,
            channel_sampling: ChannelSampling::PerBatch,
            readout: Readout::GlobalPool,
            norm_eps: 1e-5,
            alpha_init_scale: 1e-3,
        }
    }

    /// [`SupernetConfig::darts`] with `cells` cells.
    pub fn darts_cells(cells: usize) -> Self {
        let reduction_cells = match cells {
            0 | 1 => vec![],
            2 => vec![1],
            n => vec![n / 3, 2 * n / 3],
        };
        SupernetConfig {
            cells,
            reduction_cells,
            ..Self::darts()
        }
    }

    /// A chain network with a flatten readout.
    pub fn chain(channels: usize, input_channels: usize, image_size: usize, classes: usize) -> Self {
        SupernetConfig {
            init_channels: channels,
            cells: 0,
            reduction_cells: vec![],
            stem_multiplier: 1,
            input_channels,
            image_size,
            classes,
            readout: Readout::Flatten,
            ..Self::darts()
        }
    }

    pub fn with_divisor(mut self, k: usize) -> Self {
        self.partial_channel_divisor = k;
        self
    }

    pub fn is_reduction(&self, cell: usize) -> bool {
        self.reduction_cells.contains(&cell)
    }

    /// Channel count and input spatial size at every mixing site, one entry
    /// per (cell, edge) visit, in forward order. Chain spaces have one
    /// entry per edge.
    pub fn mixing_sites(&self, space: &SearchSpace) -> Vec<(usize, usize)> {
        match space.topology {
            Topology::Chain => vec![(self.init_channels, self.image_size); space.edges.len()],
            Topology::Darts { steps } => {
                let mut out = Vec::new();
                let mut c = self.init_channels;
                let mut size = self.image_size;
                for i in 0..self.cells {
                    let red = self.is_reduction(i);
                    if red {
                        c *= 2;
                    }
                    let edges = steps * (steps + 3) / 2;
                    out.extend(std::iter::repeat_n((c, size), edges));
                    if red {
                        size = size.div_ceil(2);
                    }
                }
                out
            }
        }
    }

    pub fn validate(&self, space: &SearchSpace) -> Result<()> {
        let k = self.partial_channel_divisor;
        if k == 0 {
            return Err(Error::Config("partial_channel_divisor must be at least 1".into()));
        }
        if self.init_channels == 0 || self.classes == 0 || self.image_size == 0 || self.input_channels == 0 {
            return Err(Error::Config("channel, class and image counts must be positive".into()));
        }
        if self.norm_eps <= 0.0 || !self.alpha_init_scale.is_finite() || self.alpha_init_scale < 0.0 {
            return Err(Error::Config(
                "norm_eps must be positive and alpha_init_scale finite".into(),
            ));
        }
        if let Some(&bad) = self.reduction_cells.iter().find(|&&r| r >= self.cells) {
            return Err(Error::Config(format!(
                "reduction cell {bad} out of {} cells",
                self.cells
            )));
        }
        if matches!(space.topology, Topology::Darts { .. }) && self.cells == 0 {
            return Err(Error::Config("a cell space needs at least one cell".into()));
        }
        for (c, size) in self.mixing_sites(space) {
            if c % k != 0 {
                return Err(Error::Config(format!(
                    "partial-channel divisor {k} does not divide {c} channels"
                )));
            }
            if k > 1
                && size % 2 == 1
                && !self.reduction_cells.is_empty()
                && matches!(space.topology, Topology::Darts { .. })
            {
                return Err(Error::Config(format!(
                    "partial channels need even spatial sizes at reductions, found {size}"
                )));
            }
        }
        Ok(())
    }
}
