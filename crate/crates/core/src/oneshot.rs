//! Bilevel one-shot search on a masked supernetwork: SGD on weights, Adam
//! on alphas, a warmup phase, and a log-sum-exp alpha regularizer.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{kernels, Gradients, Primitive, Tape, Var};
use crate::container::Container;
use crate::data::{split_and_batch, Dataset, SplitSpec, Stream};
use crate::error::{Error, Result};
use crate::search_space::{derive_genotype, Genotype, SearchSpace};
use crate::supernet::{mix_weights, ForwardOptions, ParamStore, Supernet, ALPHA_ID_BASE};
use crate::tensor::Tensor;

/// Linear schedule of the regularizer coefficient over the search epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaSchedule {
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSchedule {
    pub warmup_epochs: usize,
    /// Total epochs, warmup included.
    pub search_epochs: usize,
    pub batch_size: usize,
    pub weight_fraction: f64,
    pub weight_lr: f64,
    pub weight_lr_min: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub alpha_lr: f64,
    pub alpha_beta1: f64,
    pub alpha_beta2: f64,
    pub alpha_weight_decay: f64,
    pub grad_clip: f64,
    pub beta: BetaSchedule,
    #[serde(default)]
    pub flip: bool,
}

impl Default for SearchSchedule {
    fn default() -> Self {
        SearchSchedule {
            warmup_epochs: 15,
            search_epochs: 50,
            batch_size: 64,
            weight_fraction: 0.5,
            weight_lr: 0.1,
            weight_lr_min: 0.0,
            momentum: 0.9,
            weight_decay: 3e-4,
            alpha_lr: 6e-4,
            alpha_beta1: 0.5,
            alpha_beta2: 0.999,
            alpha_weight_decay: 1e-3,
            grad_clip: 5.0,
            beta: BetaSchedule { start: 0.0, end: 1.0 },
            flip: false,
        }
    }
}

impl SearchSchedule {
    /// Short schedule for the planted toy task: 3 warmup and 10 search
    /// epochs at batch 32.
    pub fn toy() -> Self {
        SearchSchedule {
            warmup_epochs: 3,
            search_epochs: 13,
            batch_size: 32,
            weight_lr: 0.05,
            alpha_lr: 0.1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.warmup_epochs > self.search_epochs {
            return Err(Error::Config(format!(
                "warmup_epochs {} exceeds search_epochs {}",
                self.warmup_epochs, self.search_epochs
            )));
        }
        let rates = [self.weight_lr, self.alpha_lr, self.grad_clip];
        if rates.iter().any(|&r| !(r > 0.0 && r.is_finite())) || self.batch_size == 0 {
            return Err(Error::Config(
                "learning rates, clip norm and batch size must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum)
            || !(0.0..1.0).contains(&self.alpha_beta1)
            || !(0.0..1.0).contains(&self.alpha_beta2)
        {
            return Err(Error::Config("momentum and Adam betas must lie in [0, 1)".into()));
        }
        if self.weight_decay < 0.0 || self.alpha_weight_decay < 0.0 || self.weight_lr_min < 0.0 {
            return Err(Error::Config(
                "weight decays and minimum rate must be non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Regularizer coefficient of `epoch`: zero during warmup, then linear
    /// from `beta.start` at the first search epoch to `beta.end` at the last.
    pub fn lambda(&self, epoch: usize) -> f64 {
        if epoch < self.warmup_epochs {
            return 0.0;
        }
        let span = self.search_epochs.saturating_sub(self.warmup_epochs + 1);
        if span == 0 {
            return self.beta.end;
        }
        let t = (epoch - self.warmup_epochs).min(span) as f64 / span as f64;
        self.beta.start + (self.beta.end - self.beta.start) * t
    }
}

/// Cosine annealing from `lr0` at step 0 to `lr_min` at step `total - 1`.
pub fn cosine_lr(lr0: f64, lr_min: f64, step: usize, total: usize) -> f64 {
    if total <= 1 {
        return lr0;
    }
    let t = step.min(total - 1) as f64 / (total - 1) as f64;
    lr_min + 0.5 * (lr0 - lr_min) * (1.0 + (std::f64::consts::PI * t).cos())
}

/// Scales `grads` so their joint L2 norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Tensor::norm_sq).sum::<f64>().sqrt();
    if norm > max_norm {
        let f = max_norm / (norm + 1e-12);
        for g in grads.iter_mut() {
            *g = g.map(|v| v * f);
        }
    }
    norm
}

/// SGD with momentum and coupled L2 weight decay.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    pub buffers: BTreeMap<usize, Tensor>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            momentum,
            weight_decay,
            buffers: BTreeMap::new(),
        }
    }

    /// Updates the parameters listed in `grads` only.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[(usize, Tensor)], lr: f64) {
        for (id, g) in grads {
            let w = params.tensor_mut(*id);
            let buf = self.buffers.entry(*id).or_insert_with(|| Tensor::zeros(g.shape()));
            for ((b, &gv), wv) in buf.data_mut().iter_mut().zip(g.data()).zip(w.data_mut().iter_mut()) {
                let d = gv + self.weight_decay * *wv;
                *b = self.momentum * *b + d;
                *wv -= lr * *b;
            }
        }
    }
}

/// Adam with coupled L2 weight decay over the unmasked alpha entries.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(space: &SearchSpace, beta1: f64, beta2: f64, weight_decay: f64) -> Self {
        let zeros: Vec<Vec<f64>> = space.edges.iter().map(|e| vec![0.0; e.len()]).collect();
        Adam {
            beta1,
            beta2,
            weight_decay,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn update(&mut self, alphas: &mut [Vec<f64>], grads: &[Vec<f64>], space: &SearchSpace, lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (e, set) in space.edges.iter().enumerate() {
            for o in set.unmasked() {
                let g = grads[e][o] + self.weight_decay * alphas[e][o];
                let m = &mut self.m[e][o];
                let v = &mut self.v[e][o];
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                alphas[e][o] -= lr * (*m / bc1) / ((*v / bc2).sqrt() + 1e-8);
            }
        }
    }
}

/// `sum_e logsumexp(alpha_e[unmasked])` on the tape.
pub fn beta_regularizer(tape: &mut Tape, alphas: &[Var], space: &SearchSpace) -> Result<Var> {
    let mut terms = Vec::with_capacity(space.edges.len());
    for (e, set) in space.edges.iter().enumerate() {
        let kept = set.unmasked_indices();
        if kept.is_empty() {
            return Err(Error::EmptyEdge { edge: set.edge_id });
        }
        let g = tape.apply(Primitive::Gather { indices: kept }, &[alphas[e]])?;
        terms.push(tape.apply(Primitive::LogSumExp, &[g])?);
    }
    tape.add(&terms)
}

/// Plain evaluation of [`beta_regularizer`].
pub fn beta_regularizer_value(alphas: &[Vec<f64>], space: &SearchSpace) -> Result<f64> {
    let mut total = 0.0;
    for (a, set) in alphas.iter().zip(&space.edges) {
        let kept: Vec<f64> = set.unmasked().map(|o| a[o]).collect();
        if kept.is_empty() {
            return Err(Error::EmptyEdge { edge: set.edge_id });
        }
        total += kernels::log_sum_exp(&kept);
    }
    Ok(total)
}

/// Entropy of the unmasked softmax of every edge.
pub fn alpha_entropies(alphas: &[Vec<f64>], space: &SearchSpace) -> Result<Vec<f64>> {
    space
        .edges
        .iter()
        .zip(alphas)
        .map(|(set, a)| {
            let w = mix_weights(a, &set.mask)?;
            Ok(-w.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>())
        })
        .collect()
}

fn accuracy(logits: &Tensor, labels: &[usize]) -> usize {
    let k = logits.dim(1);
    logits
        .data()
        .chunks(k)
        .zip(labels)
        .filter(|(row, &y)| {
            let arg = row
                .iter()
                .enumerate()
                .fold(0, |best, (i, &v)| if v > row[best] { i } else { best });
            arg == y
        })
        .count()
}

/// Mean cross-entropy and accuracy of `net` (restricted to `mask`) on the
/// examples at `indices`, evaluated in consecutive batches.
pub fn evaluate(
    net: &Supernet,
    data: &Dataset,
    indices: &[usize],
    batch_size: usize,
    mask: Option<&SearchSpace>,
) -> Result<(f64, f64)> {
    let opts = ForwardOptions {
        mask,
        channel_seed: net.channel_seed(0),
        ..Default::default()
    };
    let mut loss = 0.0;
    let mut correct = 0;
    for chunk in indices.chunks(batch_size.max(1)) {
        let (x, y) = data.batch(chunk);
        let mut tape = Tape::no_grad();
        let logits = net.forward(&mut tape, &x, &opts)?;
        correct += accuracy(tape.value(logits), &y);
        let l = tape.apply(Primitive::CrossEntropy { labels: y }, &[logits])?;
        loss += tape.value(l).item() * chunk.len() as f64;
    }
    let n = indices.len().max(1) as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Per-epoch record. Contains no wall-clock values, so identical runs log
/// identical records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub warmup: bool,
    pub lr_first: f64,
    pub lr_last: f64,
    pub lambda: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub alpha_loss: Option<f64>,
    pub val_loss: f64,
    pub val_acc: f64,
    pub alpha_entropy: Vec<f64>,
    pub mean_alpha_entropy: f64,
    pub max_grad_norm: f64,
}

/// Everything a search carries between epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchState {
    pub net: Supernet,
    pub sgd: Sgd,
    pub adam: Adam,
    /// Epochs completed.
    pub epoch: usize,
    /// Weight steps taken.
    pub step: usize,
    pub metrics: Vec<EpochMetrics>,
}

impl SearchState {
    pub fn new(net: Supernet, schedule: &SearchSchedule) -> Self {
        let adam = Adam::new(
            &net.space,
            schedule.alpha_beta1,
            schedule.alpha_beta2,
            schedule.alpha_weight_decay,
        );
        SearchState {
            net,
            sgd: Sgd::new(schedule.momentum, schedule.weight_decay),
            adam,
            epoch: 0,
            step: 0,
            metrics: Vec::new(),
        }
    }

    /// Checkpoint: network container plus optimizer state and counters.
    pub fn to_container(&self) -> Container {
        let mut c = self.net.to_container();
        c.kind = "search_state".into();
        c.metadata["epoch"] = self.epoch.into();
        c.metadata["step"] = self.step.into();
        c.metadata["adam_step"] = self.adam.step.into();
        c.metadata["metrics"] = serde_json::to_value(&self.metrics).expect("metrics serialize");
        for (id, b) in &self.sgd.buffers {
            c.push(format!("momentum/{}", self.net.params.name(*id)), b.clone());
        }
        for (e, (m, v)) in self.adam.m.iter().zip(&self.adam.v).enumerate() {
            c.push(format!("adam_m/{e}"), Tensor::from_vec(m.clone()));
            c.push(format!("adam_v/{e}"), Tensor::from_vec(v.clone()));
        }
        c
    }

    pub fn from_container(c: &Container, schedule: &SearchSchedule) -> Result<Self> {
        let mut net_c = c.clone();
        net_c.kind = "supernet".into();
        net_c
            .tensors
            .retain(|(n, _)| n.starts_with("param/") || n.starts_with("alpha/"));
        let net = Supernet::from_container(&net_c)?;
        let mut state = SearchState::new(net, schedule);
        let field = |k: &str| {
            c.metadata[k].as_u64().ok_or_else(|| Error::Malformed {
                what: "search checkpoint".into(),
                reason: format!("missing {k}"),
            })
        };
        state.epoch = field("epoch")? as usize;
        state.step = field("step")? as usize;
        state.adam.step = field("adam_step")?;
        state.metrics = serde_json::from_value(c.metadata["metrics"].clone())?;
        for (name, t) in &c.tensors {
            if let Some(p) = name.strip_prefix("momentum/") {
                let id = state.net.params.id(p).ok_or_else(|| Error::Malformed {
                    what: "search checkpoint".into(),
                    reason: format!("momentum for unknown parameter {p}"),
                })?;
                state.sgd.buffers.insert(id, t.clone());
            } else if let Some(e) = name.strip_prefix("adam_m/") {
                let e: usize = e.parse().map_err(|_| Error::Malformed {
                    what: "search checkpoint".into(),
                    reason: name.clone(),
                })?;
                state.adam.m[e] = t.data().to_vec();
            } else if let Some(e) = name.strip_prefix("adam_v/") {
                let e: usize = e.parse().map_err(|_| Error::Malformed {
                    what: "search checkpoint".into(),
                    reason: name.clone(),
                })?;
                state.adam.v[e] = t.data().to_vec();
            }
        }
        Ok(state)
    }
}

fn weight_grads(net: &Supernet, grads: &Gradients) -> Vec<(usize, Tensor)> {
    grads
        .param_ids()
        .filter(|&id| id < ALPHA_ID_BASE && id < net.params.len())
        .filter_map(|id| grads.param(id).map(|g| (id, g.clone())))
        .collect()
}

fn diverged(epoch: usize, batch: usize, checkpoint: &str) -> Error {
    Error::Diverged {
        epoch,
        batch,
        checkpoint: checkpoint.to_string(),
    }
}

/// One weight step on `(x, y)`; returns loss, correct count and the
/// gradient norm before clipping.
pub fn weight_step(
    state: &mut SearchState,
    x: &Tensor,
    y: &[usize],
    lr: f64,
    clip: f64,
    channel_seed: u64,
) -> Result<(f64, usize, f64)> {
    let mut tape = Tape::new();
    let opts = ForwardOptions {
        train_weights: true,
        channel_seed,
        ..Default::default()
    };
    let logits = state.net.forward(&mut tape, x, &opts)?;
    let correct = accuracy(tape.value(logits), y);
    let loss = tape.apply(Primitive::CrossEntropy { labels: y.to_vec() }, &[logits])?;
    let value = tape.value(loss).item();
    let grads = tape.backward(loss)?;
    let (ids, mut gs): (Vec<usize>, Vec<Tensor>) = weight_grads(&state.net, &grads).into_iter().unzip();
    let norm = clip_global_norm(&mut gs, clip);
    if !norm.is_finite() {
        return Err(Error::NumericOverflow {
            op: "weight gradient".into(),
        });
    }
    let pairs: Vec<(usize, Tensor)> = ids.into_iter().zip(gs).collect();
    state.sgd.step(&mut state.net.params, &pairs, lr);
    Ok((value, correct, norm))
}

/// One alpha step on `(x, y)` with regularizer weight `lambda`; returns
/// the total loss.
pub fn alpha_step(
    state: &mut SearchState,
    x: &Tensor,
    y: &[usize],
    lambda: f64,
    lr: f64,
    channel_seed: u64,
) -> Result<f64> {
    let mut tape = Tape::new();
    let opts = ForwardOptions {
        train_alphas: true,
        channel_seed,
        ..Default::default()
    };
    let logits = state.net.forward(&mut tape, x, &opts)?;
    let mut loss = tape.apply(Primitive::CrossEntropy { labels: y.to_vec() }, &[logits])?;
    if lambda != 0.0 {
        let alphas: Vec<Var> = (0..state.net.space.edges.len())
            .map(|e| tape.param(ALPHA_ID_BASE + e, &state.net.alphas.tensor(e)))
            .collect();
        let reg = beta_regularizer(&mut tape, &alphas, &state.net.space)?;
        let reg = tape.apply(Primitive::Scale { factor: lambda }, &[reg])?;
        loss = tape.apply(Primitive::Add, &[loss, reg])?;
    }
    let value = tape.value(loss).item();
    let grads = tape.backward(loss)?;
    let g: Vec<Vec<f64>> = (0..state.net.space.edges.len())
        .map(|e| {
            grads
                .param(ALPHA_ID_BASE + e)
                .map_or_else(|| vec![0.0; state.net.alphas.alpha[e].len()], |t| t.data().to_vec())
        })
        .collect();
    if g.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NumericOverflow {
            op: "alpha gradient".into(),
        });
    }
    let space = state.net.space.clone();
    state.adam.update(&mut state.net.alphas.alpha, &g, &space, lr);
    Ok(value)
}

/// Training data wiring for a search.
#[derive(Debug, Clone)]
pub struct SearchData<'a> {
    pub data: &'a Dataset,
    pub weight: Stream,
    pub alpha: Stream,
}

impl<'a> SearchData<'a> {
    pub fn split(data: &'a Dataset, schedule: &SearchSchedule, seed: u64) -> Result<Self> {
        let spec = SplitSpec {
            weight_fraction: schedule.weight_fraction,
            seed,
            batch_size: schedule.batch_size,
        };
        let (weight, alpha) = split_and_batch(data.len(), &spec)?;
        Ok(SearchData { data, weight, alpha })
    }

    fn fetch(&self, idx: &[usize], flip: bool, seed: u64) -> (Tensor, Vec<usize>) {
        if flip {
            self.data.batch_flipped(idx, &mut ChaCha8Rng::seed_from_u64(seed))
        } else {
            self.data.batch(idx)
        }
    }
}

/// Runs epoch `state.epoch`: per batch a weight step, then (after warmup)
/// an alpha step on the matching alpha batch.
pub fn search_epoch(
    state: &mut SearchState,
    data: &SearchData,
    schedule: &SearchSchedule,
    checkpoint: &str,
) -> Result<EpochMetrics> {
    let epoch = state.epoch;
    let warmup = epoch < schedule.warmup_epochs;
    let lambda = schedule.lambda(epoch);
    let total_steps = schedule.search_epochs * data.weight.batch_count();
    let wb = data.weight.batches(epoch);
    let ab = data.alpha.batches(epoch);
    let (mut loss_sum, mut correct, mut seen) = (0.0, 0, 0);
    let (mut alpha_sum, mut max_norm) = (0.0, 0.0f64);
    let lr_first = cosine_lr(schedule.weight_lr, schedule.weight_lr_min, state.step, total_steps);
    let mut lr = lr_first;
    for (i, idx) in wb.iter().enumerate() {
        let cs = state.net.channel_seed(state.step as u64);
        lr = cosine_lr(schedule.weight_lr, schedule.weight_lr_min, state.step, total_steps);
        let (x, y) = data.fetch(idx, schedule.flip, cs);
        let (l, c, n) = weight_step(state, &x, &y, lr, schedule.grad_clip, cs).map_err(|e| {
            if e.is_numeric() {
                diverged(epoch, i, checkpoint)
            } else {
                e.context(format!("epoch {epoch} batch {i}"))
            }
        })?;
        if !l.is_finite() {
            return Err(diverged(epoch, i, checkpoint));
        }
        loss_sum += l * idx.len() as f64;
        correct += c;
        seen += idx.len();
        max_norm = max_norm.max(n);
        if !warmup {
            let aidx = &ab[i % ab.len()];
            let (ax, ay) = data.fetch(aidx, schedule.flip, cs ^ 1);
            let al = alpha_step(state, &ax, &ay, lambda, schedule.alpha_lr, cs).map_err(|e| {
                if e.is_numeric() {
                    diverged(epoch, i, checkpoint)
                } else {
                    e.context(format!("epoch {epoch} batch {i}"))
                }
            })?;
            if !al.is_finite() || !state.net.alphas.is_finite() {
                return Err(diverged(epoch, i, checkpoint));
            }
            alpha_sum += al;
        }
        state.step += 1;
    }
    if !state.net.params.is_finite() {
        return Err(diverged(epoch, wb.len(), checkpoint));
    }
    let (val_loss, val_acc) = evaluate(&state.net, data.data, &data.alpha.indices, schedule.batch_size, None)?;
    let alpha_entropy = alpha_entropies(&state.net.alphas.alpha, &state.net.space)?;
    let mean_alpha_entropy = alpha_entropy.iter().sum::<f64>() / alpha_entropy.len().max(1) as f64;
    let m = EpochMetrics {
        epoch,
        warmup,
        lr_first,
        lr_last: lr,
        lambda,
        train_loss: loss_sum / seen.max(1) as f64,
        train_acc: correct as f64 / seen.max(1) as f64,
        alpha_loss: (!warmup).then(|| alpha_sum / wb.len().max(1) as f64),
        val_loss,
        val_acc,
        alpha_entropy,
        mean_alpha_entropy,
        max_grad_norm: max_norm,
    };
    state.epoch += 1;
    state.metrics.push(m.clone());
    Ok(m)
}

/// Result of a completed search.
#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub genotype: Genotype,
    pub state: SearchState,
}

/// Called after every epoch with the state, the epoch record and the
/// epoch's wall-clock seconds.
pub type EpochHook<'h> = dyn FnMut(&SearchState, &EpochMetrics, f64) -> Result<()> + 'h;

/// Warmup plus search epochs on `net`, then genotype derivation.
pub fn run_search(
    net: Supernet,
    data: &Dataset,
    schedule: &SearchSchedule,
    data_seed: u64,
    hook: &mut EpochHook,
) -> Result<SearchOutcome> {
    let state = SearchState::new(net, schedule);
    resume_search(state, data, schedule, data_seed, hook)
}

/// Continues a search from a saved state.
pub fn resume_search(
    mut state: SearchState,
    data: &Dataset,
    schedule: &SearchSchedule,
    data_seed: u64,
    hook: &mut EpochHook,
) -> Result<SearchOutcome> {
    schedule.validate()?;
    let split = SearchData::split(data, schedule, data_seed)?;
    let mut last_checkpoint = String::from("none");
    while state.epoch < schedule.search_epochs {
        let t0 = std::time::Instant::now();
        let m = search_epoch(&mut state, &split, schedule, &last_checkpoint)?;
        hook(&state, &m, t0.elapsed().as_secs_f64())?;
        last_checkpoint = format!("epoch {}", m.epoch);
    }
    let genotype = derive_genotype(&state.net.space, &state.net.alphas.alpha)?;
    Ok(SearchOutcome { genotype, state })
}

/// Trains only the weights of `net` restricted to `mask` for `epochs`
/// passes over `train`, with the same SGD settings as the search.
pub fn train_weights(
    net: &mut Supernet,
    mask: &SearchSpace,
    data: &Dataset,
    train: &Stream,
    epochs: usize,
    schedule: &SearchSchedule,
) -> Result<()> {
    let mut sgd = Sgd::new(schedule.momentum, schedule.weight_decay);
    let total = epochs * train.batch_count();
    let mut step = 0;
    for epoch in 0..epochs {
        for idx in train.batches(epoch) {
            let (x, y) = data.batch(&idx);
            let mut tape = Tape::new();
            let opts = ForwardOptions {
                mask: Some(mask),
                train_weights: true,
                channel_seed: net.channel_seed(step as u64),
                ..Default::default()
            };
            let logits = net.forward(&mut tape, &x, &opts)?;
            let loss = tape.apply(Primitive::CrossEntropy { labels: y }, &[logits])?;
            let grads = tape.backward(loss)?;
            let (ids, mut gs): (Vec<usize>, Vec<Tensor>) = weight_grads(net, &grads).into_iter().unzip();
            clip_global_norm(&mut gs, schedule.grad_clip);
            let pairs: Vec<(usize, Tensor)> = ids.into_iter().zip(gs).collect();
            let lr = cosine_lr(schedule.weight_lr, schedule.weight_lr_min, step, total);
            sgd.step(&mut net.params, &pairs, lr);
            step += 1;
        }
        if !net.params.is_finite() {
            return Err(diverged(epoch, 0, "none"));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn beta_regularizer_examples() {
        let space = SearchSpace::toy(1, 2);
        assert!((beta_regularizer_value(&[vec![0.0, 0.0]], &space).unwrap() - 2f64.ln()).abs() < 1e-15);
        let single = space.without(0, 1).unwrap();
        assert_eq!(beta_regularizer_value(&[vec![0.0, 5.0]], &single).unwrap(), 0.0);
        let a = beta_regularizer_value(&[vec![0.3, -1.2]], &space).unwrap();
        let b = beta_regularizer_value(&[vec![2.3, 0.8]], &space).unwrap();
        assert!((b - a - 2.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_endpoints_and_monotone() {
        let lrs: Vec<f64> = (0..10).map(|s| cosine_lr(0.1, 0.0, s, 10)).collect();
        assert_eq!(lrs[0], 0.1);
        assert!(lrs[9] <= 1e-7);
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut g = vec![Tensor::from_vec(vec![3.0, 4.0]), Tensor::from_vec(vec![12.0])];
        let pre = clip_global_norm(&mut g, 5.0);
        assert_eq!(pre, 13.0);
        let post = g.iter().map(Tensor::norm_sq).sum::<f64>().sqrt();
        assert!(post <= 5.0 + 1e-9);
    }

    #[test]
    fn lambda_schedule() {
        let s = SearchSchedule {
            warmup_epochs: 2,
            search_epochs: 5,
            ..Default::default()
        };
        let l: Vec<f64> = (0..5).map(|e| s.lambda(e)).collect();
        assert_eq!(l, vec![0.0, 0.0, 0.0, 0.5, 1.0]);
    }

    #[test]
    fn adam_touches_only_unmasked_entries() {
        let space = SearchSpace::toy(1, 3).without(0, 1).unwrap();
        let mut adam = Adam::new(&space, 0.5, 0.999, 1e-3);
        let mut a = vec![vec![0.1, 0.2, 0.3]];
        adam.update(&mut a, &[vec![1.0, 1.0, -1.0]], &space, 0.01);
        assert_eq!(a[0][1], 0.2);
        assert!(a[0][0] < 0.1 && a[0][2] > 0.3);
    }
}
