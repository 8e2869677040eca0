use proptest::prelude::*;

use zosnas::accounting::keep_probability;
use zosnas::container::Container;
use zosnas::oracle::{enumerate_space, parse_key, survival_monte_carlo, survival_probability};
use zosnas::pruning::random_mask;
use zosnas::search_space::{architecture_fraction, assignment_key, count_architectures, derive_genotype};
use zosnas::supernet::mix_weights;
use zosnas::{SearchSpace, Tensor};

fn masked_space() -> impl Strategy<Value = SearchSpace> {
    (1usize..=4, 1usize..=4)
        .prop_flat_map(|(edges, ops)| {
            (
                Just(edges),
                Just(ops),
                prop::collection::vec(any::<bool>(), edges * ops),
                0..ops,
            )
        })
        .prop_map(|(edges, ops, mut bits, keep)| {
            for e in 0..edges {
                bits[e * ops + keep] = true;
            }
            SearchSpace::toy(edges, ops).apply_mask(&bits).unwrap()
        })
}

/// Brute-force survival over every mask pattern, weighting each by its
/// probability under "keep with prob xi, refill an empty edge uniformly".
fn survival_by_enumeration(space: &SearchSpace, top: &[Vec<usize>], xi: f64) -> f64 {
    let k: Vec<usize> = space.edges.iter().map(|e| e.len()).collect();
    let mut per_edge: Vec<Vec<(Vec<bool>, f64)>> = Vec::new();
    for &n in &k {
        let mut outcomes = Vec::new();
        for bits in 0u32..(1 << n) {
            let kept = bits.count_ones() as i32;
            let m: Vec<bool> = (0..n).map(|i| bits >> i & 1 == 1).collect();
            let p = if kept == 0 {
                0.0
            } else if kept == 1 {
                xi * (1.0 - xi).powi(n as i32 - 1) + (1.0 - xi).powi(n as i32) / n as f64
            } else {
                xi.powi(kept) * (1.0 - xi).powi(n as i32 - kept)
            };
            outcomes.push((m, p));
        }
        per_edge.push(outcomes);
    }
    let mut total = 0.0;
    let mut idx = vec![0usize; k.len()];
    loop {
        let p: f64 = idx.iter().zip(&per_edge).map(|(&i, o)| o[i].1).product();
        if p > 0.0
            && top.iter().any(|a| {
                a.iter()
                    .zip(&idx)
                    .enumerate()
                    .all(|(e, (&op, &i))| per_edge[e][i].0[op])
            })
        {
            total += p;
        }
        let mut e = 0;
        loop {
            if e == k.len() {
                return total;
            }
            idx[e] += 1;
            if idx[e] < per_edge[e].len() {
                break;
            }
            idx[e] = 0;
            e += 1;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn mix_weights_respect_mask(alpha in prop::collection::vec(-30.0f64..30.0, 1..10), seed in any::<u64>()) {
        let n = alpha.len();
        let mask: Vec<bool> = (0..n).map(|i| (seed >> (i % 64)) & 1 == 1 || i == (seed as usize) % n).collect();
        let w = mix_weights(&alpha, &mask).unwrap();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        for i in 0..n {
            prop_assert!(w[i] >= 0.0);
            prop_assert!(mask[i] || w[i] == 0.0);
        }
    }

    #[test]
    fn random_masks_never_empty_an_edge(space in masked_space(), xi in 0.05f64..0.95, seed in any::<u64>()) {
        let m = random_mask(&space.unmasked_copy(), xi, seed).unwrap();
        prop_assert!(m.same_structure(&space));
        prop_assert!(m.edges.iter().all(|e| e.unmasked_count() >= 1));
        prop_assert_eq!(random_mask(&space.unmasked_copy(), xi, seed).unwrap(), m);
    }

    #[test]
    fn enumeration_matches_count_and_keys_round_trip(space in masked_space()) {
        let archs = enumerate_space(&space, 1 << 16).unwrap();
        prop_assert_eq!(num_bigint::BigUint::from(archs.len()), count_architectures(&space));
        let product: usize = space.edges.iter().map(|e| e.unmasked_count()).product();
        prop_assert_eq!(archs.len(), product);
        for a in &archs {
            prop_assert!(a.iter().zip(&space.edges).all(|(&o, e)| e.mask[o]));
            prop_assert_eq!(&parse_key(&assignment_key(a), space.edges.len()).unwrap(), a);
        }
        let full = space.unmasked_copy();
        let frac = architecture_fraction(&space, &full).unwrap();
        let total: usize = full.edges.iter().map(|e| e.len()).product();
        prop_assert!((frac - archs.len() as f64 / total as f64).abs() <= 1e-15);
    }

    #[test]
    fn derived_genotype_uses_unmasked_ops(space in masked_space(), seed in any::<u64>()) {
        let alphas: Vec<Vec<f64>> = space
            .edges
            .iter()
            .enumerate()
            .map(|(e, s)| (0..s.len()).map(|o| ((seed ^ (e * 31 + o) as u64).wrapping_mul(0x9e37_79b9) % 1000) as f64).collect())
            .collect();
        let g = derive_genotype(&space, &alphas).unwrap();
        let a = g.assignment(space.edges.len()).unwrap();
        for (e, &o) in a.iter().enumerate() {
            prop_assert!(space.edges[e].mask[o]);
            let best = space.edges[e].unmasked().map(|i| alphas[e][i]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(alphas[e][o], best);
        }
    }

    #[test]
    fn container_round_trips(values in prop::collection::vec(-1e6f64..1e6, 1..40), meta in "[a-z]{0,12}") {
        let mut c = Container::new("probe", serde_json::json!({ "note": meta }));
        let n = values.len();
        c.push("v", Tensor::new(vec![n], values).unwrap());
        c.push("s", Tensor::scalar(3.5));
        let bytes = c.to_bytes();
        prop_assert_eq!(&Container::from_bytes(&bytes, Some("probe")).unwrap(), &c);
        prop_assert!(Container::from_bytes(&bytes, Some("other")).is_err());
        let mut flipped = bytes.clone();
        let at = 12 + (n * 7) % (bytes.len() - 12);
        flipped[at] ^= 0x40;
        prop_assert!(Container::from_bytes(&flipped, Some("probe")).is_err());
        prop_assert!(Container::from_bytes(&bytes[..bytes.len() - 1], Some("probe")).is_err());
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn survival_closed_form_matches_enumeration(edges in 1usize..=3, ops in 1usize..=3, xi in 0.1f64..0.9, pick in prop::collection::vec(any::<u32>(), 1..5)) {
        let space = SearchSpace::toy(edges, ops);
        let archs = enumerate_space(&space, 1 << 12).unwrap();
        let mut top: Vec<Vec<usize>> = pick.iter().map(|&p| archs[p as usize % archs.len()].clone()).collect();
        top.sort();
        top.dedup();
        let closed = survival_probability(&space, &top, xi).unwrap();
        let brute = survival_by_enumeration(&space, &top, xi);
        prop_assert!((closed - brute).abs() <= 1e-12, "closed {} brute {}", closed, brute);
        if top.len() == 1 {
            let single: f64 = (0..edges).map(|_| keep_probability(ops, xi)).product();
            prop_assert!((closed - single).abs() <= 1e-12);
        }
    }
}

#[test]
fn survival_monte_carlo_converges() {
    let space = SearchSpace::toy(3, 4);
    let archs = enumerate_space(&space, 4096).unwrap();
    let top: Vec<Vec<usize>> = archs.iter().step_by(13).cloned().collect();
    let closed = survival_probability(&space, &top, 0.5).unwrap();
    let mc = survival_monte_carlo(&space, &top, 0.5, 20_000, 4).unwrap();
    assert!((closed - mc).abs() <= 0.015, "closed {closed} mc {mc}");
}
