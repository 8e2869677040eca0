//! Structural model of the search hypergraph: mixing sets, masks, counting
//! and genotype extraction.

use std::fmt;

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Candidate operation kinds of the DARTS cell space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Zero,
    MaxPool3x3,
    AvgPool3x3,
    SkipConnect,
    SepConv3x3,
    SepConv5x5,
    DilConv3x3,
    DilConv5x5,
}

impl OpKind {
    /// The eight DARTS candidates in their conventional order.
    pub const DARTS: [OpKind; 8] = [
        OpKind::Zero,
        OpKind::MaxPool3x3,
        OpKind::AvgPool3x3,
        OpKind::SkipConnect,
        OpKind::SepConv3x3,
        OpKind::SepConv5x5,
        OpKind::DilConv3x3,
        OpKind::DilConv5x5,
    ];

    /// Parameter-free candidates used by the small oracle spaces.
    pub const TOY: [OpKind; 4] = [
        OpKind::Zero,
        OpKind::SkipConnect,
        OpKind::AvgPool3x3,
        OpKind::MaxPool3x3,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Zero => "zero",
            OpKind::MaxPool3x3 => "max_pool_3x3",
            OpKind::AvgPool3x3 => "avg_pool_3x3",
            OpKind::SkipConnect => "skip_connect",
            OpKind::SepConv3x3 => "sep_conv_3x3",
            OpKind::SepConv5x5 => "sep_conv_5x5",
            OpKind::DilConv3x3 => "dil_conv_3x3",
            OpKind::DilConv5x5 => "dil_conv_5x5",
        }
    }

    pub fn from_name(name: &str) -> Option<OpKind> {
        OpKind::DARTS.into_iter().find(|op| op.name() == name)
    }

    pub fn has_params(self) -> bool {
        matches!(
            self,
            OpKind::SepConv3x3 | OpKind::SepConv5x5 | OpKind::DilConv3x3 | OpKind::DilConv5x5
        )
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    Normal,
    Reduction,
    /// Edges of a chain space, which has no cells.
    Chain,
}

/// How mixing sets are wired into a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Topology {
    /// Two cell templates (normal, reduction); node `i` of a cell receives
    /// one edge from each of the two cell inputs and the `i` earlier nodes.
    Darts { steps: usize },
    /// `stem -> edge 0 -> edge 1 -> ... -> classifier`.
    Chain,
}

/// One mixing operation: the candidate set of an edge and its mask.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixingSet {
    pub edge_id: usize,
    pub cell: CellKind,
    /// Source state within the cell (0 and 1 are the cell inputs).
    pub src: usize,
    /// Destination state within the cell.
    pub dst: usize,
    pub candidates: Vec<OpKind>,
    pub mask: Vec<bool>,
}

impl MixingSet {
    pub fn unmasked(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i)
    }

    pub fn unmasked_indices(&self) -> Vec<usize> {
        self.unmasked().collect()
    }

    pub fn unmasked_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub name: String,
    pub topology: Topology,
    pub edges: Vec<MixingSet>,
}

#[derive(Serialize)]
struct StructureView<'a> {
    topology: &'a Topology,
    edges: Vec<(usize, CellKind, usize, usize, &'a [OpKind])>,
}

impl SearchSpace {
    /// The DARTS space: two templates of 14 edges, 8 candidates each.
    pub fn darts() -> Self {
        Self::darts_with(4, &OpKind::DARTS)
    }

    pub fn darts_with(steps: usize, ops: &[OpKind]) -> Self {
        let mut edges = Vec::new();
        for cell in [CellKind::Normal, CellKind::Reduction] {
            for node in 0..steps {
                for src in 0..node + 2 {
                    edges.push(MixingSet {
                        edge_id: edges.len(),
                        cell,
                        src,
                        dst: node + 2,
                        candidates: ops.to_vec(),
                        mask: vec![true; ops.len()],
                    });
                }
            }
        }
        SearchSpace {
            name: format!("darts-{steps}step-{}op", ops.len()),
            topology: Topology::Darts { steps },
            edges,
        }
    }

    pub fn chain(edges: usize, ops: &[OpKind]) -> Self {
        SearchSpace {
            name: format!("chain-{edges}x{}", ops.len()),
            topology: Topology::Chain,
            edges: (0..edges)
                .map(|e| MixingSet {
                    edge_id: e,
                    cell: CellKind::Chain,
                    src: e,
                    dst: e + 1,
                    candidates: ops.to_vec(),
                    mask: vec![true; ops.len()],
                })
                .collect(),
        }
    }

    /// Chain of `edges` edges over the first `ops` toy candidates
    /// (cycling through the DARTS list when more than four are requested).
    pub fn toy(edges: usize, ops: usize) -> Self {
        let kinds: Vec<OpKind> = if ops <= OpKind::TOY.len() {
            OpKind::TOY[..ops].to_vec()
        } else {
            OpKind::DARTS.iter().cycle().take(ops).copied().collect()
        };
        Self::chain(edges, &kinds)
    }

    /// Validate internal consistency (ids, mask lengths, floor rule).
    pub fn validate(&self) -> Result<()> {
        for (i, e) in self.edges.iter().enumerate() {
            if e.edge_id != i {
                return Err(Error::Invariant(format!("edge at position {i} has id {}", e.edge_id)));
            }
            if e.candidates.is_empty() || e.mask.len() != e.candidates.len() {
                return Err(Error::Invariant(format!(
                    "edge {i}: {} candidates, {} mask entries",
                    e.candidates.len(),
                    e.mask.len()
                )));
            }
            if e.unmasked_count() == 0 {
                return Err(Error::EmptyEdge { edge: i });
            }
        }
        if let Topology::Darts { steps } = self.topology {
            let per_cell: usize = (0..steps).map(|n| n + 2).sum();
            let normal = self.edges.iter().filter(|e| e.cell == CellKind::Normal).count();
            let reduce = self.edges.iter().filter(|e| e.cell == CellKind::Reduction).count();
            if normal != per_cell || reduce != per_cell {
                return Err(Error::Invariant(format!(
                    "darts topology with {steps} steps needs {per_cell} edges per template"
                )));
            }
        }
        Ok(())
    }

    pub fn edges_of(&self, cell: CellKind) -> impl Iterator<Item = &MixingSet> {
        self.edges.iter().filter(move |e| e.cell == cell)
    }

    pub fn total_candidates(&self) -> usize {
        self.edges.iter().map(|e| e.len()).sum()
    }

    pub fn unmasked_total(&self) -> usize {
        self.edges.iter().map(|e| e.unmasked_count()).sum()
    }

    /// Fraction of candidate operations still unmasked.
    pub fn kept_op_fraction(&self) -> f64 {
        self.unmasked_total() as f64 / self.total_candidates() as f64
    }

    /// Flat mask over all `(edge, candidate)` pairs in edge order.
    pub fn mask_bits(&self) -> Vec<bool> {
        self.edges.iter().flat_map(|e| e.mask.iter().copied()).collect()
    }

    pub fn mask_rows(&self) -> Vec<Vec<bool>> {
        self.edges.iter().map(|e| e.mask.clone()).collect()
    }

    /// The same structure with every candidate unmasked.
    pub fn unmasked_copy(&self) -> SearchSpace {
        let mut s = self.clone();
        for e in &mut s.edges {
            e.mask.iter_mut().for_each(|m| *m = true);
        }
        s
    }

    /// Whether two spaces share edges and candidate lists.
    pub fn same_structure(&self, other: &SearchSpace) -> bool {
        self.topology == other.topology
            && self.edges.len() == other.edges.len()
            && self
                .edges
                .iter()
                .zip(&other.edges)
                .all(|(a, b)| a.candidates == b.candidates && a.cell == b.cell && a.src == b.src && a.dst == b.dst)
    }

    /// SHA-256 over the mask-independent structure.
    pub fn structure_digest(&self) -> String {
        let view = StructureView {
            topology: &self.topology,
            edges: self
                .edges
                .iter()
                .map(|e| (e.edge_id, e.cell, e.src, e.dst, e.candidates.as_slice()))
                .collect(),
        };
        let bytes = serde_json::to_vec(&view).expect("structure serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// Conjunction of the current mask with `mask` (flat, in edge order).
    /// The original space is left untouched.
    pub fn apply_mask(&self, mask: &[bool]) -> Result<SearchSpace> {
        if mask.len() != self.total_candidates() {
            return Err(Error::Contract(format!(
                "mask has {} entries, space has {} candidates",
                mask.len(),
                self.total_candidates()
            )));
        }
        let mut out = self.clone();
        let mut bits = mask.iter();
        for e in &mut out.edges {
            for m in e.mask.iter_mut() {
                *m &= *bits.next().expect("length checked");
            }
            if e.unmasked_count() == 0 {
                return Err(Error::EmptyEdge { edge: e.edge_id });
            }
        }
        Ok(out)
    }

    /// Mask exactly one more candidate.
    pub fn without(&self, edge: usize, op: usize) -> Result<SearchSpace> {
        let mut out = self.clone();
        out.edges[edge].mask[op] = false;
        if out.edges[edge].unmasked_count() == 0 {
            return Err(Error::EmptyEdge { edge });
        }
        Ok(out)
    }

    /// Restrict every edge to exactly the given candidate.
    pub fn restrict_to(&self, assignment: &[usize]) -> Result<SearchSpace> {
        if assignment.len() != self.edges.len() {
            return Err(Error::Contract(format!(
                "assignment covers {} edges, space has {}",
                assignment.len(),
                self.edges.len()
            )));
        }
        let mut out = self.clone();
        for (e, &op) in out.edges.iter_mut().zip(assignment) {
            if op >= e.len() || !e.mask[op] {
                return Err(Error::Contract(format!(
                    "edge {}: candidate {op} is not available",
                    e.edge_id
                )));
            }
            e.mask.iter_mut().enumerate().for_each(|(i, m)| *m = i == op);
        }
        Ok(out)
    }
}

/// Product of per-edge unmasked-count ratios of `space` against `baseline`.
///
/// Each factor is at most one, so the running product never overflows
/// however large the architecture counts get.
pub fn architecture_fraction(space: &SearchSpace, baseline: &SearchSpace) -> Result<f64> {
    if !space.same_structure(baseline) {
        return Err(Error::Contract(
            "architecture_fraction needs spaces with the same edges".into(),
        ));
    }
    let mut fraction = 1.0;
    for (e, b) in space.edges.iter().zip(&baseline.edges) {
        let (k, k0) = (e.unmasked_count(), b.unmasked_count());
        if k == 0 {
            return Err(Error::EmptyEdge { edge: e.edge_id });
        }
        if k0 == 0 {
            return Err(Error::EmptyEdge { edge: b.edge_id });
        }
        fraction *= k as f64 / k0 as f64;
    }
    Ok(fraction)
}

/// Exact number of architectures: product of unmasked counts.
pub fn count_architectures(space: &SearchSpace) -> BigUint {
    space
        .edges
        .iter()
        .fold(BigUint::from(1u32), |acc, e| acc * BigUint::from(e.unmasked_count()))
}

/// One chosen candidate of a genotype.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenotypeEntry {
    pub edge: usize,
    pub cell: CellKind,
    pub src: usize,
    pub dst: usize,
    pub op_index: usize,
    pub op: OpKind,
}

/// Discretized architecture: one candidate per retained edge.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Genotype {
    pub entries: Vec<GenotypeEntry>,
}

impl Genotype {
    /// Canonical key `edge:op|edge:op|...` in ascending edge order.
    pub fn key(&self) -> String {
        let mut pairs: Vec<(usize, usize)> = self.entries.iter().map(|e| (e.edge, e.op_index)).collect();
        pairs.sort();
        pairs
            .iter()
            .map(|(e, o)| format!("{e}:{o}"))
            .collect::<Vec<_>>()
            .join("|")
    }

    pub fn cell(&self, cell: CellKind) -> impl Iterator<Item = &GenotypeEntry> {
        self.entries.iter().filter(move |e| e.cell == cell)
    }

    /// Op index per edge when every edge is retained (chain spaces).
    pub fn assignment(&self, edges: usize) -> Option<Vec<usize>> {
        let mut a = vec![usize::MAX; edges];
        for e in &self.entries {
            *a.get_mut(e.edge)? = e.op_index;
        }
        a.iter().all(|&o| o != usize::MAX).then_some(a)
    }
}

/// Canonical key of a full assignment (one op index per edge).
pub fn assignment_key(assignment: &[usize]) -> String {
    assignment
        .iter()
        .enumerate()
        .map(|(e, o)| format!("{e}:{o}"))
        .collect::<Vec<_>>()
        .join("|")
}

/// Index of the largest unmasked alpha; ties go to the lowest index.
pub fn masked_argmax(alpha: &[f64], mask: &[bool]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, (&a, &m)) in alpha.iter().zip(mask).enumerate() {
        if m && best.is_none_or(|b| a > alpha[b]) {
            best = Some(i);
        }
    }
    best
}

fn masked_softmax_max(alpha: &[f64], mask: &[bool]) -> f64 {
    let live: Vec<f64> = alpha.iter().zip(mask).filter(|(_, &m)| m).map(|(&a, _)| a).collect();
    let top = live.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = live.iter().map(|a| (a - top).exp()).sum();
    1.0 / z
}

/// Discretize architecture weights.
///
/// Each edge picks its best unmasked candidate. In DARTS cells every
/// intermediate node then keeps its two incoming edges whose best
/// unmasked softmax weight is largest (lower edge id on ties); chain
/// spaces keep every edge.
pub fn derive_genotype(space: &SearchSpace, alphas: &[Vec<f64>]) -> Result<Genotype> {
    if alphas.len() != space.edges.len() {
        return Err(Error::Contract(format!(
            "{} alpha vectors for {} edges",
            alphas.len(),
            space.edges.len()
        )));
    }
    let mut chosen = Vec::with_capacity(space.edges.len());
    for (e, a) in space.edges.iter().zip(alphas) {
        if a.len() != e.len() {
            return Err(Error::Contract(format!(
                "edge {}: {} alphas for {} candidates",
                e.edge_id,
                a.len(),
                e.len()
            )));
        }
        let op = masked_argmax(a, &e.mask).ok_or(Error::EmptyEdge { edge: e.edge_id })?;
        chosen.push((op, masked_softmax_max(a, &e.mask)));
    }
    let entry = |e: &MixingSet, op: usize| GenotypeEntry {
        edge: e.edge_id,
        cell: e.cell,
        src: e.src,
        dst: e.dst,
        op_index: op,
        op: e.candidates[op],
    };
    let mut entries = Vec::new();
    match space.topology {
        Topology::Chain => {
            for e in &space.edges {
                entries.push(entry(e, chosen[e.edge_id].0));
            }
        }
        Topology::Darts { steps } => {
            for cell in [CellKind::Normal, CellKind::Reduction] {
                for node in 0..steps {
                    let mut incoming: Vec<&MixingSet> = space.edges_of(cell).filter(|e| e.dst == node + 2).collect();
                    incoming.sort_by(|a, b| {
                        chosen[b.edge_id]
                            .1
                            .partial_cmp(&chosen[a.edge_id].1)
                            .unwrap_or(std::cmp::Ordering::Equal)
                            .then(a.edge_id.cmp(&b.edge_id))
                    });
                    let mut keep: Vec<&MixingSet> = incoming.into_iter().take(2).collect();
                    keep.sort_by_key(|e| e.edge_id);
                    for e in keep {
                        entries.push(entry(e, chosen[e.edge_id].0));
                    }
                }
            }
        }
    }
    Ok(Genotype { entries })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn darts_default_shape() {
        let s = SearchSpace::darts();
        s.validate().unwrap();
        assert_eq!(s.edges_of(CellKind::Normal).count(), 14);
        assert_eq!(s.edges_of(CellKind::Reduction).count(), 14);
        assert!(s.edges.iter().all(|e| e.len() == 8));
    }

    #[test]
    fn fraction_of_identical_spaces_is_one() {
        let s = SearchSpace::toy(3, 4);
        assert_eq!(architecture_fraction(&s, &s).unwrap(), 1.0);
    }

    #[test]
    fn fraction_two_edges_one_masked_each() {
        let base = SearchSpace::toy(2, 4);
        let pruned = base.without(0, 3).unwrap().without(1, 0).unwrap();
        assert_eq!(architecture_fraction(&pruned, &base).unwrap(), 0.5625);
    }

    #[test]
    fn fraction_28_edges() {
        let base = SearchSpace::darts();
        let mut pruned = base.clone();
        for e in &mut pruned.edges {
            e.mask[0] = false;
        }
        let f = architecture_fraction(&pruned, &base).unwrap();
        let expected = (28.0 * (7.0f64 / 8.0).ln()).exp();
        assert!((f - expected).abs() < 1e-15);
        assert!((f - 0.023781).abs() < 1e-6);
    }

    #[test]
    fn fraction_rejects_empty_edge() {
        let base = SearchSpace::toy(2, 2);
        let mut broken = base.clone();
        broken.edges[1].mask = vec![false, false];
        assert!(matches!(
            architecture_fraction(&broken, &base),
            Err(Error::EmptyEdge { edge: 1 })
        ));
    }

    #[test]
    fn counts() {
        assert_eq!(count_architectures(&SearchSpace::toy(3, 4)), BigUint::from(64u32));
        let darts = count_architectures(&SearchSpace::darts());
        assert_eq!(darts, BigUint::from(8u32).pow(28));
        assert!(darts > BigUint::from(10u32).pow(18));
        let single = SearchSpace::toy(3, 4).apply_mask(&[
            true, false, false, false, true, true, true, true, true, true, true, true,
        ]);
        assert_eq!(count_architectures(&single.unwrap()), BigUint::from(16u32));
    }

    #[test]
    fn apply_mask_identity_and_errors() {
        let s = SearchSpace::toy(3, 4);
        assert_eq!(s.apply_mask(&[true; 12]).unwrap(), s);
        let mut bits = vec![true; 12];
        bits[..4].iter_mut().for_each(|b| *b = false);
        match s.apply_mask(&bits) {
            Err(Error::EmptyEdge { edge }) => assert_eq!(edge, 0),
            other => panic!("expected empty-edge error, got {other:?}"),
        }
        assert!(s.apply_mask(&[true; 5]).is_err());
    }

    #[test]
    fn masking_one_op_scales_count() {
        let s = SearchSpace::toy(3, 4);
        let m = s.without(1, 2).unwrap();
        assert_eq!(count_architectures(&m) * 4u32, count_architectures(&s) * 3u32);
    }

    fn one_edge(alpha: Vec<f64>, mask: Vec<bool>) -> usize {
        let mut s = SearchSpace::toy(1, alpha.len());
        s.edges[0].mask = mask;
        derive_genotype(&s, &[alpha]).unwrap().entries[0].op_index
    }

    #[test]
    fn genotype_argmax_rules() {
        assert_eq!(one_edge(vec![1.0, 2.0, 3.0], vec![true; 3]), 2);
        assert_eq!(one_edge(vec![1.0, 2.0, 3.0], vec![true, false, true]), 2);
        assert_eq!(one_edge(vec![1.0, 9.0, 3.0], vec![true, false, true]), 2);
        assert_eq!(one_edge(vec![5.0, 5.0], vec![true, true]), 0);
    }

    #[test]
    fn darts_genotype_keeps_two_edges_per_node() {
        let s = SearchSpace::darts();
        let alphas: Vec<Vec<f64>> = s
            .edges
            .iter()
            .map(|e| (0..8).map(|i| ((e.edge_id * 7 + i * 3) % 11) as f64 * 0.1).collect())
            .collect();
        let g = derive_genotype(&s, &alphas).unwrap();
        assert_eq!(g.cell(CellKind::Normal).count(), 8);
        assert_eq!(g.cell(CellKind::Reduction).count(), 8);
        for node in 2..6 {
            assert_eq!(g.cell(CellKind::Normal).filter(|e| e.dst == node).count(), 2);
        }
    }

    #[test]
    fn digest_ignores_mask() {
        let s = SearchSpace::toy(3, 4);
        let m = s.without(0, 1).unwrap();
        assert_eq!(s.structure_digest(), m.structure_digest());
        assert_ne!(s.structure_digest(), SearchSpace::toy(3, 3).structure_digest());
    }
}
