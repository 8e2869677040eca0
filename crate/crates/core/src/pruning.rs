//! Search-space reduction: iterative partial pruning driven by ranking
//! functions, and random Bernoulli masking.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ranking::{Ranker, RankerSpec};
use crate::search_space::{architecture_fraction, OpKind, SearchSpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneMode {
    Algorithmic,
    Random,
}

/// What the pruning level measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Semantics {
    /// Product over edges of kept/initial candidate counts.
    ArchitectureFraction,
    /// Fraction of candidate operations kept.
    OperationKeepProbability,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneConfig {
    pub xi: f64,
    pub mode: PruneMode,
    /// Defaults to architecture fraction for algorithmic pruning and to
    /// keep probability for random masking.
    #[serde(default)]
    pub semantics: Option<Semantics>,
    #[serde(default)]
    pub rankers: Vec<RankerSpec>,
    pub seed: u64,
}

impl PruneConfig {
    pub fn algorithmic(xi: f64, rankers: Vec<RankerSpec>) -> Self {
        PruneConfig {
            xi,
            mode: PruneMode::Algorithmic,
            semantics: None,
            rankers,
            seed: 0,
        }
    }

    pub fn random(xi: f64, seed: u64) -> Self {
        PruneConfig {
            xi,
            mode: PruneMode::Random,
            semantics: None,
            rankers: Vec::new(),
            seed,
        }
    }

    pub fn semantics(&self) -> Semantics {
        self.semantics.unwrap_or(match self.mode {
            PruneMode::Algorithmic => Semantics::ArchitectureFraction,
            PruneMode::Random => Semantics::OperationKeepProbability,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.xi > 0.0 && self.xi < 1.0) {
            return Err(Error::Config(format!(
                "pruning level xi must lie strictly inside (0, 1), got {}",
                self.xi
            )));
        }
        if self.mode == PruneMode::Random && self.semantics() != Semantics::OperationKeepProbability {
            return Err(Error::Config(
                "random masking draws each operation with probability xi; only operation_keep_probability applies"
                    .into(),
            ));
        }
        if self.mode == PruneMode::Algorithmic && self.rankers.is_empty() {
            return Err(Error::Config(
                "algorithmic pruning needs at least one ranking function".into(),
            ));
        }
        Ok(())
    }
}

/// Importance of one candidate in one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRecord {
    pub round: usize,
    pub edge_id: usize,
    pub op_index: usize,
    pub score: f64,
}

/// `s_j = sum_r (r(N) - r(N \ e_j)) / r(N)` for every unmasked candidate of
/// every edge that still has at least two unmasked candidates. `N \ e_j`
/// masks `e_j` temporarily. With `workers > 1` candidates are scored on
/// that many threads.
pub fn importance_scores(
    space: &SearchSpace,
    rankers: &[&dyn Ranker],
    workers: usize,
) -> Result<Vec<ImportanceRecord>> {
    let mut base = Vec::with_capacity(rankers.len());
    for r in rankers {
        let s = r.score(space)?;
        if s == 0.0 {
            return Err(Error::ZeroRanking {
                ranker: r.kind().into(),
            });
        }
        if !s.is_finite() {
            return Err(Error::NumericOverflow {
                op: format!("ranking function {}", r.kind()),
            });
        }
        base.push(s);
    }
    let jobs: Vec<(usize, usize)> = space
        .edges
        .iter()
        .filter(|e| e.unmasked_count() >= 2)
        .flat_map(|e| e.unmasked().map(move |o| (e.edge_id, o)))
        .collect();
    let score = |&(edge, op): &(usize, usize)| -> Result<ImportanceRecord> {
        let reduced = space.without(edge, op)?;
        let mut s = 0.0;
        for (r, &b) in rankers.iter().zip(&base) {
            s += (b - r.score(&reduced)?) / b;
        }
        Ok(ImportanceRecord {
            round: 0,
            edge_id: edge,
            op_index: op,
            score: s,
        })
    };
    if workers <= 1 || jobs.len() < 2 {
        return jobs.iter().map(score).collect();
    }
    let chunk = jobs.len().div_ceil(workers);
    std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(score).collect::<Result<Vec<_>>>()))
            .collect();
        let mut out = Vec::with_capacity(jobs.len());
        for h in handles {
            out.extend(h.join().expect("scoring thread panicked")?);
        }
        Ok(out)
    })
}

/// One pruning round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneRound {
    pub round: usize,
    pub fraction_before: f64,
    pub fraction_after: f64,
    pub records: Vec<ImportanceRecord>,
    /// `(edge_id, op_index)` masked this round.
    pub pruned: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PruneAudit {
    pub rounds: Vec<PruneRound>,
}

impl PruneAudit {
    /// Fractions after each round, starting with the initial one.
    pub fn trajectory(&self, initial: f64) -> Vec<f64> {
        std::iter::once(initial)
            .chain(self.rounds.iter().map(|r| r.fraction_after))
            .collect()
    }

    /// One JSON record per importance score, then one per round.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.rounds {
            for rec in &r.records {
                out.push_str(&serde_json::json!({"type": "importance", "round": rec.round, "edge_id": rec.edge_id, "op_index": rec.op_index, "score": rec.score}).to_string());
                out.push('\n');
            }
            out.push_str(
                &serde_json::json!({"type": "round", "round": r.round, "fraction_before": r.fraction_before, "fraction_after": r.fraction_after, "pruned": r.pruned})
                    .to_string(),
            );
            out.push('\n');
        }
        out
    }
}

/// Current pruning level of `space` relative to `baseline`.
pub fn level(space: &SearchSpace, baseline: &SearchSpace, semantics: Semantics) -> Result<f64> {
    match semantics {
        Semantics::ArchitectureFraction => architecture_fraction(space, baseline),
        Semantics::OperationKeepProbability => Ok(space.unmasked_total() as f64 / baseline.unmasked_total() as f64),
    }
}

/// Iterative partial pruning. Each round scores every candidate, then masks
/// the least important candidate (lowest index on ties) of every edge that
/// still has two or more, until the level drops to `xi` or no edge can
/// lose another candidate.
pub fn partial_prune(
    space: &SearchSpace,
    xi: f64,
    semantics: Semantics,
    rankers: &[&dyn Ranker],
    workers: usize,
) -> Result<(SearchSpace, PruneAudit)> {
    if !(xi > 0.0 && xi < 1.0) {
        return Err(Error::Config(format!(
            "pruning level xi must lie strictly inside (0, 1), got {xi}"
        )));
    }
    if rankers.is_empty() {
        return Err(Error::Config(
            "partial pruning needs at least one ranking function".into(),
        ));
    }
    let mut current = space.clone();
    let mut audit = PruneAudit::default();
    let mut fraction = level(&current, space, semantics)?;
    while fraction > xi {
        let round = audit.rounds.len() + 1;
        let mut records =
            importance_scores(&current, rankers, workers).map_err(|e| e.context(format!("round {round}")))?;
        if records.is_empty() {
            break;
        }
        records.iter_mut().for_each(|r| r.round = round);
        let mut pruned = Vec::new();
        for e in &space.edges {
            let worst = records
                .iter()
                .filter(|r| r.edge_id == e.edge_id)
                .fold(None::<&ImportanceRecord>, |best, r| match best {
                    Some(b) if b.score < r.score || (b.score == r.score && b.op_index < r.op_index) => Some(b),
                    _ => Some(r),
                });
            if let Some(w) = worst {
                pruned.push((w.edge_id, w.op_index));
            }
        }
        for &(edge, op) in &pruned {
            current = current.without(edge, op)?;
        }
        let after = level(&current, space, semantics)?;
        audit.rounds.push(PruneRound {
            round,
            fraction_before: fraction,
            fraction_after: after,
            records,
            pruned,
        });
        fraction = after;
    }
    Ok((current, audit))
}

/// Keeps each unmasked candidate independently with probability `xi`. An
/// edge left empty gets one of its candidates back, chosen uniformly.
pub fn random_mask(space: &SearchSpace, xi: f64, seed: u64) -> Result<SearchSpace> {
    if !(xi > 0.0 && xi < 1.0) {
        return Err(Error::Config(format!(
            "keep probability xi must lie strictly inside (0, 1), got {xi}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = space.clone();
    for e in &mut out.edges {
        let live = e.unmasked_indices();
        for &o in &live {
            e.mask[o] = rng.random_bool(xi);
        }
        if e.unmasked_count() == 0 {
            e.mask[live[rng.random_range(0..live.len())]] = true;
        }
    }
    Ok(out)
}

/// Provenance of a mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskProvenance {
    pub mode: PruneMode,
    pub xi: f64,
    pub semantics: Semantics,
    pub seed: u64,
    pub rankers: Vec<String>,
    pub fractions: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskEntry {
    pub edge_id: usize,
    pub op_index: usize,
    pub op: OpKind,
    pub kept: bool,
}

/// On-disk mask: one entry per candidate plus the structure digest of the
/// space it belongs to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskFile {
    pub space: String,
    pub space_digest: String,
    pub entries: Vec<MaskEntry>,
    pub provenance: MaskProvenance,
}

impl MaskFile {
    pub fn new(space: &SearchSpace, provenance: MaskProvenance) -> Self {
        let entries = space
            .edges
            .iter()
            .flat_map(|e| {
                e.candidates.iter().enumerate().map(move |(i, &op)| MaskEntry {
                    edge_id: e.edge_id,
                    op_index: i,
                    op,
                    kept: e.mask[i],
                })
            })
            .collect();
        MaskFile {
            space: space.name.clone(),
            space_digest: space.structure_digest(),
            entries,
            provenance,
        }
    }

    pub fn kept_count(&self) -> usize {
        self.entries.iter().filter(|e| e.kept).count()
    }

    /// Applies the mask to `space`; the structure digests must agree.
    pub fn apply(&self, space: &SearchSpace) -> Result<SearchSpace> {
        let digest = space.structure_digest();
        if digest != self.space_digest {
            return Err(Error::Format {
                what: "mask file".into(),
                expected: format!("space digest {digest}"),
                actual: self.space_digest.clone(),
            });
        }
        let mut bits = vec![true; space.total_candidates()];
        let mut offsets = Vec::with_capacity(space.edges.len());
        let mut acc = 0;
        for e in &space.edges {
            offsets.push(acc);
            acc += e.len();
        }
        for m in &self.entries {
            let slot = offsets
                .get(m.edge_id)
                .map(|o| o + m.op_index)
                .filter(|&i| m.op_index < space.edges[m.edge_id].len() && i < bits.len());
            let slot = slot.ok_or_else(|| Error::Malformed {
                what: "mask file".into(),
                reason: format!("entry ({}, {}) is outside the space", m.edge_id, m.op_index),
            })?;
            bits[slot] = m.kept;
        }
        space.apply_mask(&bits)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::from(e).context(format!("reading {}", path.display())))
    }
}
