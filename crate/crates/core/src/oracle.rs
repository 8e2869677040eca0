//! Ground truth for enumerable spaces: exhaustive enumeration, fitness
//! tables from training every architecture, and pruning-survival studies.

use std::collections::BTreeMap;
use std::path::Path;

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::oneshot::{evaluate, train_weights, SearchData, SearchSchedule};
use crate::pruning::{partial_prune, random_mask, Semantics};
use crate::ranking::{Aggregate, Ranker, TabularRanker};
use crate::search_space::{assignment_key, count_architectures, SearchSpace};
use crate::supernet::{Supernet, SupernetConfig};

pub const DEFAULT_CAP: usize = 4096;
pub const DEFAULT_TOP_Q: f64 = 0.05;
pub const HISTOGRAM_BINS: usize = 10;

/// Every unmasked architecture as one op index per edge, in lexicographic
/// order of the assignment.
pub fn enumerate_space(space: &SearchSpace, cap: usize) -> Result<Vec<Vec<usize>>> {
    let count = count_architectures(space);
    if count > BigUint::from(cap) {
        return Err(Error::CapExceeded {
            count: count.to_string(),
            cap,
        });
    }
    let live: Vec<Vec<usize>> = space.edges.iter().map(|e| e.unmasked_indices()).collect();
    if live.iter().any(Vec::is_empty) {
        let edge = live.iter().position(Vec::is_empty).expect("checked");
        return Err(Error::EmptyEdge {
            edge: space.edges[edge].edge_id,
        });
    }
    let mut out = Vec::new();
    let mut digits = vec![0usize; live.len()];
    loop {
        out.push(digits.iter().zip(&live).map(|(&d, l)| l[d]).collect());
        let mut pos = live.len();
        loop {
            if pos == 0 {
                return Ok(out);
            }
            pos -= 1;
            digits[pos] += 1;
            if digits[pos] < live[pos].len() {
                break;
            }
            digits[pos] = 0;
        }
    }
}

/// Parses a canonical `edge:op|...` key back into an assignment.
pub fn parse_key(key: &str, edges: usize) -> Result<Vec<usize>> {
    let bad = || Error::Format {
        what: "genotype key".into(),
        expected: format!("{edges} `edge:op` pairs in edge order"),
        actual: key.to_string(),
    };
    let mut out = Vec::with_capacity(edges);
    for (i, pair) in key.split('|').enumerate() {
        let (e, o) = pair.split_once(':').ok_or_else(bad)?;
        if e.parse::<usize>().map_err(|_| bad())? != i {
            return Err(bad());
        }
        out.push(o.parse::<usize>().map_err(|_| bad())?);
    }
    if out.len() != edges {
        return Err(bad());
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TableProvenance {
    pub task: String,
    pub data_seed: u64,
    pub init_seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_lr: f64,
}

/// Validation accuracy of every architecture of a space.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitnessTable {
    pub entries: BTreeMap<String, f64>,
    /// Architectures whose training failed, with the error; their fitness
    /// is recorded as 0.
    #[serde(default)]
    pub failures: BTreeMap<String, String>,
    #[serde(default)]
    pub provenance: TableProvenance,
}

impl FitnessTable {
    pub fn from_entries(entries: BTreeMap<String, f64>) -> Self {
        FitnessTable {
            entries,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &str) -> Result<f64> {
        self.entries
            .get(key)
            .copied()
            .ok_or_else(|| Error::MissingFitness { key: key.to_string() })
    }

    /// Entries by descending fitness, ascending key on ties.
    pub fn ranked(&self) -> Vec<(&str, f64)> {
        let mut v: Vec<(&str, f64)> = self.entries.iter().map(|(k, &f)| (k.as_str(), f)).collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(b.0)));
        v
    }

    pub fn argmax(&self) -> Option<(&str, f64)> {
        self.ranked().first().copied()
    }

    /// Size of the top-`q` set: `ceil(q * n)`, at least one.
    pub fn top_count(&self, q: f64) -> usize {
        ((q * self.len() as f64).ceil() as usize).clamp(1, self.len().max(1))
    }

    pub fn top_q_keys(&self, q: f64) -> Vec<String> {
        self.ranked()
            .into_iter()
            .take(self.top_count(q))
            .map(|(k, _)| k.to_string())
            .collect()
    }

    /// Number of entries with strictly higher fitness.
    pub fn rank_of(&self, key: &str) -> Result<usize> {
        let f = self.get(key)?;
        Ok(self.entries.values().filter(|&&g| g > f).count())
    }

    /// Whether `key` scores at least as well as the weakest member of the
    /// top-`q` set.
    pub fn in_top_q(&self, key: &str, q: f64) -> Result<bool> {
        Ok(self.rank_of(key)? < self.top_count(q))
    }

    /// Whether the table holds exactly the architectures of `space`.
    pub fn covers(&self, space: &SearchSpace) -> Result<()> {
        let archs = enumerate_space(space, DEFAULT_CAP.max(self.len()))?;
        for a in &archs {
            self.get(&assignment_key(a))?;
        }
        if archs.len() != self.len() {
            return Err(Error::Contract(format!(
                "fitness table holds {} entries, space has {} architectures",
                self.len(),
                archs.len()
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")
            .map_err(|e| Error::Io(e).context(path.display().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(e).context(path.display().to_string()))?;
        let t: FitnessTable =
            serde_json::from_str(&text).map_err(|e| Error::Json(e).context(path.display().to_string()))?;
        if let Some((k, f)) = t.entries.iter().find(|(_, f)| !(0.0..=1.0).contains(*f)) {
            return Err(Error::Format {
                what: format!("fitness of {k}"),
                expected: "a value in [0, 1]".into(),
                actual: f.to_string(),
            });
        }
        Ok(t)
    }
}

/// Training budget of one architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleBudget {
    pub epochs: usize,
    pub schedule: SearchSchedule,
    pub cap: usize,
}

/// Trains every architecture of `space` from the same initialization on
/// the same data order and records its validation accuracy. The weight
/// split trains, the alpha split validates.
pub fn build_fitness_table(
    space: &SearchSpace,
    data: &Dataset,
    cfg: &SupernetConfig,
    budget: &OracleBudget,
    data_seed: u64,
    init_seed: u64,
    workers: usize,
) -> Result<FitnessTable> {
    let archs = enumerate_space(space, budget.cap)?;
    let split = SearchData::split(data, &budget.schedule, data_seed)?;
    let base = Supernet::new(space.unmasked_copy(), cfg.clone(), init_seed)?;
    let fit = |a: &Vec<usize>| -> (String, Result<f64>) {
        let key = assignment_key(a);
        let run = || -> Result<f64> {
            let mask = space.restrict_to(a)?;
            let mut net = base.clone();
            train_weights(&mut net, &mask, data, &split.weight, budget.epochs, &budget.schedule)?;
            let (_, acc) = evaluate(
                &net,
                data,
                &split.alpha.indices,
                budget.schedule.batch_size,
                Some(&mask),
            )?;
            Ok(acc)
        };
        (key, run())
    };
    let workers = workers.max(1).min(archs.len().max(1));
    let results: Vec<(String, Result<f64>)> = if workers == 1 {
        archs.iter().map(fit).collect()
    } else {
        let fit = &fit;
        let archs = &archs;
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..workers)
                .map(|w| s.spawn(move || archs.iter().skip(w).step_by(workers).map(fit).collect::<Vec<_>>()))
                .collect();
            let mut parts: Vec<Vec<(String, Result<f64>)>> = handles
                .into_iter()
                .map(|h| h.join().expect("oracle worker panicked"))
                .collect();
            let mut out = Vec::with_capacity(archs.len());
            for i in 0..archs.len() {
                let part = &mut parts[i % workers];
                out.push(part.remove(0));
            }
            out
        })
    };
    let mut table = FitnessTable {
        provenance: TableProvenance {
            task: String::new(),
            data_seed,
            init_seed,
            epochs: budget.epochs,
            batch_size: budget.schedule.batch_size,
            weight_lr: budget.schedule.weight_lr,
        },
        ..Default::default()
    };
    for (key, r) in results {
        match r {
            Ok(acc) => {
                table.entries.insert(key, acc);
            }
            Err(e) => {
                table.entries.insert(key.clone(), 0.0);
                table.failures.insert(key, e.to_string());
            }
        }
    }
    Ok(table)
}

/// Probability that random masking at `xi` keeps every op of one
/// architecture on an edge, given the set `ops` of ops it needs there out
/// of `k` unmasked ones.
fn keep_all(ops: usize, k: usize, xi: f64) -> f64 {
    match ops {
        0 => 1.0,
        1 => xi + (1.0 - xi).powi(k as i32) / k as f64,
        n => xi.powi(n as i32),
    }
}

/// Exact probability that at least one of `top` survives
/// [`random_mask`] at `xi`, by inclusion-exclusion over subsets of `top`.
pub fn survival_probability(space: &SearchSpace, top: &[Vec<usize>], xi: f64) -> Result<f64> {
    if top.is_empty() {
        return Ok(0.0);
    }
    if top.len() > 24 {
        return Err(Error::Config(format!(
            "closed-form survival enumerates 2^{} subsets; use at most 24 architectures",
            top.len()
        )));
    }
    let k: Vec<usize> = space.edges.iter().map(|e| e.unmasked_count()).collect();
    for a in top {
        if a.len() != k.len() || a.iter().zip(&space.edges).any(|(&o, e)| o >= e.len() || !e.mask[o]) {
            return Err(Error::Contract(format!(
                "architecture {} is not in the space",
                assignment_key(a)
            )));
        }
    }
    let mut total = 0.0;
    for subset in 1u32..(1 << top.len()) {
        let mut p = 1.0;
        for (e, &ke) in k.iter().enumerate() {
            let mut ops: Vec<usize> = (0..top.len())
                .filter(|i| subset & (1 << i) != 0)
                .map(|i| top[i][e])
                .collect();
            ops.sort_unstable();
            ops.dedup();
            p *= keep_all(ops.len(), ke, xi);
        }
        total += if subset.count_ones() % 2 == 1 { p } else { -p };
    }
    Ok(total)
}

fn survives(mask: &SearchSpace, a: &[usize]) -> bool {
    a.iter().zip(&mask.edges).all(|(&o, e)| e.mask[o])
}

/// Share of `draws` random masks (seeds `seed..seed + draws`) that keep at
/// least one of `top`.
pub fn survival_monte_carlo(space: &SearchSpace, top: &[Vec<usize>], xi: f64, draws: usize, seed: u64) -> Result<f64> {
    let mut hits = 0usize;
    for i in 0..draws as u64 {
        let m = random_mask(space, xi, seed.wrapping_add(i))?;
        if top.iter().any(|a| survives(&m, a)) {
            hits += 1;
        }
    }
    Ok(hits as f64 / draws.max(1) as f64)
}

/// Linear-interpolation quantile of unsorted values.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, var.sqrt())
}

/// Share of `values` in each of [`HISTOGRAM_BINS`] equal bins over [0, 1].
pub fn histogram(values: &[f64]) -> Vec<f64> {
    let mut h = vec![0.0; HISTOGRAM_BINS];
    for &v in values {
        let b = ((v.clamp(0.0, 1.0) * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1);
        h[b] += 1.0;
    }
    let n = values.len().max(1) as f64;
    h.iter_mut().for_each(|x| *x /= n);
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SurvivalMethod {
    Random {
        xi: f64,
    },
    /// Partial pruning with the exact tabular ranker.
    Algorithmic {
        xi: f64,
        #[serde(default)]
        aggregate: Aggregate,
    },
}

impl SurvivalMethod {
    pub fn name(&self) -> String {
        match self {
            SurvivalMethod::Random { xi } => format!("random_xi{xi}"),
            SurvivalMethod::Algorithmic { xi, aggregate } => {
                let agg = match aggregate {
                    Aggregate::Max => "max",
                    Aggregate::Mean => "mean",
                };
                format!("algorithmic_{agg}_xi{xi}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSurvival {
    pub method: SurvivalMethod,
    pub name: String,
    pub seeds: usize,
    /// Share of seeds keeping at least one top-q architecture.
    pub top_q_survival: f64,
    /// Closed form of `top_q_survival` (random masking only).
    pub predicted_top_q_survival: Option<f64>,
    pub top1_survival: f64,
    pub predicted_top1_survival: Option<f64>,
    pub surviving_max_mean: f64,
    pub median_after_mean: f64,
    pub median_after_std: f64,
    pub p90_after_mean: f64,
    pub p90_after_std: f64,
    /// `|median_after_mean - median_before|`.
    pub median_shift: f64,
    pub p90_shift: f64,
    pub kept_fraction_mean: f64,
    /// Pooled over seeds.
    pub histogram_after: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalReport {
    pub top_q: f64,
    pub top_keys: Vec<String>,
    /// Fitness of the weakest top-q architecture.
    pub threshold: f64,
    pub architectures: usize,
    pub median_before: f64,
    pub p90_before: f64,
    pub histogram_before: Vec<f64>,
    pub methods: Vec<MethodSurvival>,
}

impl SurvivalReport {
    /// One row per histogram bin: bounds, then the share before pruning
    /// and after each method.
    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,before");
        for m in &self.methods {
            out.push(',');
            out.push_str(&m.name);
        }
        out.push('\n');
        for b in 0..HISTOGRAM_BINS {
            let lo = b as f64 / HISTOGRAM_BINS as f64;
            let hi = (b + 1) as f64 / HISTOGRAM_BINS as f64;
            out.push_str(&format!("{lo},{hi},{}", self.histogram_before[b]));
            for m in &self.methods {
                out.push_str(&format!(",{}", m.histogram_after[b]));
            }
            out.push('\n');
        }
        out
    }
}

/// Applies every method under `seeds` seeds and checks which top-`q`
/// architectures survive, by exhaustive membership over the masked space.
pub fn survival_study(
    table: &FitnessTable,
    space: &SearchSpace,
    methods: &[SurvivalMethod],
    seeds: usize,
    top_q: f64,
    workers: usize,
) -> Result<SurvivalReport> {
    table.covers(space)?;
    if seeds == 0 {
        return Err(Error::Config("survival study needs at least one seed".into()));
    }
    let edges = space.edges.len();
    let top_keys = table.top_q_keys(top_q);
    let top: Vec<Vec<usize>> = top_keys.iter().map(|k| parse_key(k, edges)).collect::<Result<_>>()?;
    let all: Vec<f64> = table.entries.values().copied().collect();
    let median_before = quantile(&all, 0.5);
    let p90_before = quantile(&all, 0.9);
    let threshold = table.get(top_keys.last().expect("top set is never empty"))?;
    let mut out = Vec::with_capacity(methods.len());
    for &method in methods {
        let mut top_hits = 0usize;
        let mut top1_hits = 0usize;
        let mut maxima = Vec::with_capacity(seeds);
        let mut medians = Vec::with_capacity(seeds);
        let mut p90s = Vec::with_capacity(seeds);
        let mut kept = Vec::with_capacity(seeds);
        let mut pooled = Vec::new();
        let mut predicted = None;
        let mut predicted_top1 = None;
        let deterministic = match method {
            SurvivalMethod::Algorithmic { xi, aggregate } => {
                let ranker = TabularRanker {
                    table: table.clone(),
                    aggregate,
                };
                let rankers: [&dyn Ranker; 1] = [&ranker];
                Some(partial_prune(space, xi, Semantics::ArchitectureFraction, &rankers, workers)?.0)
            }
            SurvivalMethod::Random { xi } => {
                predicted = Some(survival_probability(space, &top, xi)?);
                predicted_top1 = Some(survival_probability(space, &top[..1], xi)?);
                None
            }
        };
        for seed in 0..seeds as u64 {
            let mask = match (&deterministic, method) {
                (Some(m), _) => m.clone(),
                (None, SurvivalMethod::Random { xi }) => random_mask(space, xi, seed)?,
                _ => unreachable!("algorithmic masks are computed once"),
            };
            if top.iter().any(|a| survives(&mask, a)) {
                top_hits += 1;
            }
            if survives(&mask, &top[0]) {
                top1_hits += 1;
            }
            let fit: Vec<f64> = enumerate_space(&mask, all.len().max(DEFAULT_CAP))?
                .iter()
                .map(|a| table.get(&assignment_key(a)))
                .collect::<Result<_>>()?;
            maxima.push(fit.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
            medians.push(quantile(&fit, 0.5));
            p90s.push(quantile(&fit, 0.9));
            kept.push(fit.len() as f64 / all.len() as f64);
            pooled.extend(fit);
        }
        let n = seeds as f64;
        let (median_after_mean, median_after_std) = mean_std(&medians);
        let (p90_after_mean, p90_after_std) = mean_std(&p90s);
        out.push(MethodSurvival {
            method,
            name: method.name(),
            seeds,
            top_q_survival: top_hits as f64 / n,
            predicted_top_q_survival: predicted,
            top1_survival: top1_hits as f64 / n,
            predicted_top1_survival: predicted_top1,
            surviving_max_mean: mean_std(&maxima).0,
            median_after_mean,
            median_after_std,
            p90_after_mean,
            p90_after_std,
            median_shift: (median_after_mean - median_before).abs(),
            p90_shift: (p90_after_mean - p90_before).abs(),
            kept_fraction_mean: mean_std(&kept).0,
            histogram_after: histogram(&pooled),
        });
    }
    Ok(SurvivalReport {
        top_q,
        top_keys,
        threshold,
        architectures: all.len(),
        median_before,
        p90_before,
        histogram_before: histogram(&all),
        methods: out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search_space::OpKind;

    fn toy_table(space: &SearchSpace, f: impl Fn(&[usize]) -> f64) -> FitnessTable {
        let entries = enumerate_space(space, DEFAULT_CAP)
            .unwrap()
            .iter()
            .map(|a| (assignment_key(a), f(a)))
            .collect();
        FitnessTable::from_entries(entries)
    }

    #[test]
    fn enumeration_counts_and_order() {
        let space = SearchSpace::toy(3, 4);
        let all = enumerate_space(&space, DEFAULT_CAP).unwrap();
        assert_eq!(all.len(), 64);
        assert_eq!(all[0], [0, 0, 0]);
        assert_eq!(all[1], [0, 0, 1]);
        let keys: std::collections::BTreeSet<String> = all.iter().map(|a| assignment_key(a)).collect();
        assert_eq!(keys.len(), 64);
        let masked = space.without(0, 1).unwrap().without(2, 3).unwrap();
        let some = enumerate_space(&masked, DEFAULT_CAP).unwrap();
        assert_eq!(some.len(), 36);
        assert!(some.iter().all(|a| a[0] != 1 && a[2] != 3));
    }

    #[test]
    fn cap_is_enforced() {
        let space = SearchSpace::chain(7, &OpKind::TOY);
        match enumerate_space(&space, DEFAULT_CAP) {
            Err(Error::CapExceeded { count, cap }) => {
                assert_eq!(count, "16384");
                assert_eq!(cap, 4096);
            }
            other => panic!("expected refusal, got {other:?}"),
        }
    }

    #[test]
    fn keys_round_trip() {
        assert_eq!(parse_key("0:3|1:0|2:2", 3).unwrap(), [3, 0, 2]);
        assert!(parse_key("1:3|0:0", 2).is_err());
        assert!(parse_key("0:1", 2).is_err());
    }

    #[test]
    fn single_architecture_survival() {
        let space = SearchSpace::toy(3, 4);
        let a = vec![vec![1, 2, 3]];
        let p = survival_probability(&space, &a, 0.5).unwrap();
        let per_edge: f64 = 0.5 + 0.5f64.powi(4) / 4.0;
        assert!((p - per_edge.powi(3)).abs() < 1e-15);
        let mc = survival_monte_carlo(&space, &a, 0.5, 10_000, 0).unwrap();
        assert!((mc - p).abs() < 0.02, "{mc} vs {p}");
    }

    #[test]
    fn union_survival_matches_sampling() {
        let space = SearchSpace::toy(3, 4);
        let top = vec![vec![1, 1, 1], vec![1, 1, 2], vec![0, 3, 2]];
        let p = survival_probability(&space, &top, 0.5).unwrap();
        let mc = survival_monte_carlo(&space, &top, 0.5, 20_000, 11).unwrap();
        assert!((mc - p).abs() < 0.015, "{mc} vs {p}");
    }

    #[test]
    fn keep_everything_survives() {
        let space = SearchSpace::toy(2, 3);
        let table = toy_table(&space, |a| (a[0] * 3 + a[1]) as f64 / 10.0);
        let rep = survival_study(&table, &space, &[SurvivalMethod::Random { xi: 0.999_999 }], 5, 0.05, 1).unwrap();
        assert_eq!(rep.methods[0].top_q_survival, 1.0);
        assert_eq!(rep.methods[0].median_shift, 0.0);
    }

    #[test]
    fn exact_max_ranker_keeps_unique_optimum() {
        let space = SearchSpace::toy(3, 4);
        let table = toy_table(&space, |a| {
            if a == [1, 1, 1] {
                0.95
            } else {
                0.2 + 0.01 * (a[0] + a[2]) as f64
            }
        });
        let rep = survival_study(
            &table,
            &space,
            &[SurvivalMethod::Algorithmic {
                xi: 0.1,
                aggregate: Aggregate::Max,
            }],
            3,
            0.05,
            1,
        )
        .unwrap();
        assert_eq!(rep.top_keys[0], "0:1|1:1|2:1");
        assert_eq!(rep.methods[0].top1_survival, 1.0);
        assert!((rep.methods[0].surviving_max_mean - 0.95).abs() < 1e-12);
    }

    #[test]
    fn top_set_ranking() {
        let t = FitnessTable::from_entries(BTreeMap::from([
            ("0:0".to_string(), 0.5),
            ("0:1".to_string(), 0.9),
            ("0:2".to_string(), 0.9),
        ]));
        assert_eq!(t.argmax().unwrap().0, "0:1");
        assert_eq!(t.top_q_keys(0.05), ["0:1"]);
        assert!(t.in_top_q("0:2", 0.05).unwrap());
        assert!(!t.in_top_q("0:0", 0.05).unwrap());
    }

    #[test]
    fn quantiles_and_histogram() {
        assert_eq!(quantile(&[3.0, 1.0, 2.0], 0.5), 2.0);
        assert!((quantile(&[0.0, 1.0], 0.9) - 0.9).abs() < 1e-15);
        let h = histogram(&[0.0, 0.05, 0.55, 1.0]);
        assert_eq!(h[0], 0.5);
        assert_eq!(h[5], 0.25);
        assert_eq!(h[9], 0.25);
    }
}
