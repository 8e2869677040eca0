//! Acceptance criteria as plain functions, shared by the acceptance
//! binary and the integration tests. Every check computes its expected
//! values independently of the code under test.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use zosnas::accounting::{estimate_memory, expected_memory_random};
use zosnas::autodiff::{finite_difference_check, ConvGeom, PoolGeom, Primitive, Tape, Var};
use zosnas::config::RunConfig;
use zosnas::data::{planted_generate, CifarRecords, PlantedSpec, CIFAR_FILE_RECORDS, CIFAR_RECORD, CIFAR_TRAIN_FILES};
use zosnas::oneshot::{run_search, SearchSchedule};
use zosnas::oracle::{
    build_fitness_table, enumerate_space, parse_key, survival_study, FitnessTable, OracleBudget, SurvivalMethod,
};
use zosnas::pruning::{partial_prune, random_mask, Semantics};
use zosnas::ranking::{nngp_frobenius, nngp_kernel, Aggregate, Ranker, TabularRanker};
use zosnas::search_space::assignment_key;
use zosnas::supernet::{candidate_op, masked_mix, masked_mix_partial, mix_weights, Supernet, SupernetConfig};
use zosnas::{MixingSet, OpKind, SearchSpace, Tensor};

pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome {
            pass,
            detail: detail.into(),
        }
    }
}

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

// ---------------------------------------------------------------------------
// 1. masked mixing

fn reference_softmax(a: &[f64]) -> Vec<f64> {
    let m = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = a.iter().map(|x| (x - m).exp()).collect();
    let mut s = 0.0;
    for v in &e {
        s += v;
    }
    e.iter().map(|v| v / s).collect()
}

fn op_alone(op: OpKind, x: &Tensor, seed: u64) -> (Tensor, usize) {
    let mut t = Tape::no_grad();
    let v = t.constant(x.clone());
    let y = candidate_op(&mut t, op, v, x.dim(1), 1, seed, true).unwrap();
    (t.value(y).clone(), t.op_count())
}

fn mixing_set(n: usize, mask: Vec<bool>) -> MixingSet {
    MixingSet {
        edge_id: 0,
        cell: zosnas::CellKind::Chain,
        src: 0,
        dst: 1,
        candidates: OpKind::DARTS[..n].to_vec(),
        mask,
    }
}

pub fn masked_mixing(cases: u32) -> Outcome {
    let mut runner = TestRunner::new(PropConfig {
        cases,
        failure_persistence: None,
        ..PropConfig::default()
    });
    let strategy = (1usize..=8).prop_flat_map(|n| {
        (
            prop::collection::vec(any::<bool>(), n),
            prop::collection::vec(-8.0f64..8.0, n),
            any::<u64>(),
        )
    });
    let worst_sum = std::cell::Cell::new(0.0f64);
    let result = runner.run(&strategy, |(mut mask, alpha, seed)| {
        let n = mask.len();
        mask[(seed % n as u64) as usize] = true;
        let w = mix_weights(&alpha, &mask).unwrap();
        let total: f64 = w.iter().sum();
        worst_sum.set(worst_sum.get().max((total - 1.0).abs()));
        prop_assert!((total - 1.0).abs() <= 1e-12);
        for (wi, &m) in w.iter().zip(&mask) {
            prop_assert!(m || *wi == 0.0);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_tensor(&[2, 4, 6, 6], &mut rng);
        let set = mixing_set(n, mask.clone());
        let mut tape = Tape::no_grad();
        let xv = tape.constant(x.clone());
        let av = tape.constant(Tensor::from_vec(alpha.clone()));
        let nodes0 = tape.op_count();
        let mut called = Vec::new();
        let y = masked_mix(&mut tape, xv, &set, av, |t, k, v| {
            called.push(k);
            candidate_op(t, set.candidates[k], v, 4, 1, seed, true)
        })
        .unwrap();
        let kept: Vec<usize> = (0..n).filter(|&i| mask[i]).collect();
        prop_assert_eq!(&called, &kept);
        let mut nodes = 2 + kept.len() + 1;
        for &k in &kept {
            nodes += op_alone(set.candidates[k], &x, seed).1;
        }
        prop_assert_eq!(tape.op_count() - nodes0, nodes);
        prop_assert!(tape.value(y).shape() == x.shape());

        // All-true mask against a plain softmax-weighted sum.
        let full = mixing_set(n, vec![true; n]);
        let mut tape = Tape::no_grad();
        let xv = tape.constant(x.clone());
        let av = tape.constant(Tensor::from_vec(alpha.clone()));
        let y = masked_mix(&mut tape, xv, &full, av, |t, k, v| {
            candidate_op(t, full.candidates[k], v, 4, 1, seed, true)
        })
        .unwrap();
        let ws = reference_softmax(&alpha);
        let mut acc: Option<Vec<f64>> = None;
        for (k, &wk) in ws.iter().enumerate() {
            let (o, _) = op_alone(full.candidates[k], &x, seed);
            let term: Vec<f64> = o.data().iter().map(|v| wk * v).collect();
            acc = Some(match acc {
                None => term,
                Some(a) => a.iter().zip(&term).map(|(p, q)| p + q).collect(),
            });
        }
        let got = tape.value(y).data();
        let want = acc.unwrap();
        prop_assert!(got.iter().zip(&want).all(|(a, b)| a.to_bits() == b.to_bits()));
        Ok(())
    });
    match result {
        Ok(()) => Outcome::new(
            true,
            format!(
                "{cases} random edges; worst |sum w - 1| = {:.1e}; masked ops absent; full mask bitwise equal",
                worst_sum.get()
            ),
        ),
        Err(e) => Outcome::new(false, format!("{e}")),
    }
}

// ---------------------------------------------------------------------------
// 2. finite differences

/// Loss `sum(r * y)` with a fixed random projection `r`, so that ops whose
/// plain sum is constant (normalization, softmax) still get informative
/// gradients.
fn projected_sum(t: &mut Tape, y: Var, seed: u64) -> zosnas::Result<Var> {
    let shape = t.value(y).shape().to_vec();
    let r = random_tensor(&shape, &mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed));
    let rv = t.constant(r);
    let p = t.apply(Primitive::Mul, &[y, rv])?;
    t.sum(p)
}

type Build = Box<dyn Fn(&mut Tape, &[Var]) -> zosnas::Result<Var>>;

pub struct GradCase {
    pub name: String,
    pub shapes: Vec<Vec<usize>>,
    pub build: Build,
    /// Central-difference step. Piecewise-linear ops with dense kinks use
    /// a smaller one so that probes rarely cross a tie.
    pub step: f64,
}

fn prim(name: &str, shapes: Vec<Vec<usize>>, p: Primitive) -> GradCase {
    GradCase {
        name: name.into(),
        shapes,
        build: Box::new(move |t, v| t.apply(p.clone(), v)),
        step: FD_STEP,
    }
}

pub fn gradient_cases() -> Vec<GradCase> {
    let x = vec![2, 3, 6, 6];
    let conv = |stride, padding, dilation, groups| ConvGeom {
        stride,
        padding,
        dilation,
        groups,
    };
    let pool = |kernel, stride, padding| PoolGeom {
        kernel,
        stride,
        padding,
    };
    let mut cases = vec![
        prim("zero_s1", vec![x.clone()], Primitive::Zero { stride: 1 }),
        prim("zero_s2", vec![x.clone()], Primitive::Zero { stride: 2 }),
        prim(
            "conv3x3",
            vec![x.clone(), vec![4, 3, 3, 3]],
            Primitive::Conv2d(conv(1, 1, 1, 1)),
        ),
        prim(
            "conv3x3_s2_depthwise",
            vec![x.clone(), vec![3, 1, 3, 3]],
            Primitive::Conv2d(conv(2, 1, 1, 3)),
        ),
        prim(
            "conv3x3_dilated",
            vec![x.clone(), vec![3, 1, 3, 3]],
            Primitive::Conv2d(conv(1, 2, 2, 3)),
        ),
        prim(
            "conv1x1",
            vec![x.clone(), vec![5, 3, 1, 1]],
            Primitive::Conv2d(conv(1, 0, 1, 1)),
        ),
        prim("avg_pool_s1", vec![x.clone()], Primitive::AvgPool(pool(3, 1, 1))),
        prim("avg_pool_s2", vec![x.clone()], Primitive::AvgPool(pool(3, 2, 1))),
        GradCase {
            step: 1e-6,
            ..prim("max_pool_s1", vec![x.clone()], Primitive::MaxPool(pool(3, 1, 1)))
        },
        GradCase {
            step: 1e-6,
            ..prim("max_pool_2x2", vec![x.clone()], Primitive::MaxPool(pool(2, 2, 0)))
        },
        prim("relu", vec![x.clone()], Primitive::Relu),
        prim(
            "channel_norm_batch",
            vec![x.clone(), vec![3], vec![3]],
            Primitive::ChannelNorm {
                batch_stats: true,
                eps: 1e-5,
            },
        ),
        prim(
            "channel_norm_unit",
            vec![x.clone(), vec![3], vec![3]],
            Primitive::ChannelNorm {
                batch_stats: false,
                eps: 1e-5,
            },
        ),
        prim("linear", vec![vec![2, 7], vec![4, 7], vec![4]], Primitive::Linear),
        prim("softmax", vec![vec![3, 5]], Primitive::Softmax),
        prim(
            "cross_entropy",
            vec![vec![3, 5]],
            Primitive::CrossEntropy { labels: vec![0, 4, 2] },
        ),
        prim("add", vec![x.clone(), x.clone(), x.clone()], Primitive::Add),
        prim("mul", vec![x.clone(), x.clone()], Primitive::Mul),
        prim("scale_by", vec![x.clone(), vec![4]], Primitive::ScaleBy { index: 2 }),
        prim("concat", vec![x.clone(), vec![2, 2, 6, 6]], Primitive::Concat),
        prim("scale", vec![x.clone()], Primitive::Scale { factor: -1.7 }),
        prim(
            "channel_select",
            vec![x.clone()],
            Primitive::ChannelSelect { channels: vec![2, 0] },
        ),
        prim(
            "channel_shuffle",
            vec![vec![2, 6, 3, 3]],
            Primitive::ChannelShuffle { groups: 2 },
        ),
        prim(
            "channel_merge",
            vec![vec![2, 2, 3, 3], vec![2, 4, 3, 3]],
            Primitive::ChannelMerge {
                groups: 2,
                take: vec![1, 3],
            },
        ),
        prim("global_avg_pool", vec![x.clone()], Primitive::GlobalAvgPool),
        prim("flatten", vec![x.clone()], Primitive::Flatten),
        prim("gather", vec![vec![6]], Primitive::Gather { indices: vec![4, 1, 5] }),
        prim("log_sum_exp", vec![vec![6]], Primitive::LogSumExp),
        prim("sum", vec![x.clone()], Primitive::Sum),
    ];
    for op in OpKind::DARTS {
        for stride in [1, 2] {
            cases.push(GradCase {
                name: format!("{}_s{stride}", op.name()),
                shapes: vec![x.clone()],
                build: Box::new(move |t, v| candidate_op(t, op, v[0], 3, stride, 11, true)),
                step: FD_STEP,
            });
        }
    }
    cases.push(GradCase {
        name: "masked_mix".into(),
        shapes: vec![x.clone(), vec![8]],
        build: Box::new(|t, v| {
            let set = mixing_set(8, vec![true, false, true, true, false, true, false, true]);
            masked_mix(t, v[0], &set, v[1], |t, k, x| {
                candidate_op(t, OpKind::DARTS[k], x, 3, 1, 5, true)
            })
        }),
        step: FD_STEP,
    });
    cases.push(GradCase {
        name: "masked_mix_partial_s2".into(),
        shapes: vec![vec![2, 4, 6, 6], vec![8]],
        build: Box::new(|t, v| {
            let set = mixing_set(8, vec![false, true, true, true, false, true, false, true]);
            masked_mix_partial(t, v[0], &set, v[1], 2, &[1, 2], 2, |t, k, x| {
                candidate_op(t, OpKind::DARTS[k], x, 2, 2, 5, true)
            })
        }),
        step: FD_STEP,
    });
    cases
}

/// Worst relative error over every input of `case` at `trials` random
/// points.
pub fn check_case(case: &GradCase, trials: u64) -> f64 {
    let mut worst = 0.0f64;
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(trial * 7919 + case.name.len() as u64);
        let inputs: Vec<Tensor> = case.shapes.iter().map(|s| random_tensor(s, &mut rng)).collect();
        for wrt in 0..inputs.len() {
            let err = finite_difference_check(
                |t, v| {
                    let vars: Vec<Var> = inputs
                        .iter()
                        .enumerate()
                        .map(|(i, x)| if i == wrt { v } else { t.constant(x.clone()) })
                        .collect();
                    let y = (case.build)(t, &vars)?;
                    if t.value(y).numel() == 1 {
                        Ok(y)
                    } else {
                        projected_sum(t, y, trial)
                    }
                },
                &inputs[wrt],
                case.step,
            )
            .unwrap_or(f64::INFINITY);
            worst = worst.max(err);
        }
    }
    worst
}

pub const FD_STEP: f64 = 1e-5;

pub fn autodiff_soundness(trials: u64) -> Outcome {
    let mut worst = (String::new(), 0.0f64);
    let mut failures = Vec::new();
    let cases = gradient_cases();
    for case in &cases {
        let err = check_case(case, trials);
        if err > worst.1 {
            worst = (case.name.clone(), err);
        }
        if err.is_nan() || err > 1e-4 {
            failures.push(format!("{}={err:.2e}", case.name));
        }
    }
    Outcome::new(
        failures.is_empty(),
        format!(
            "{} cases x {trials} inputs; worst {} at {:.2e}{}",
            cases.len(),
            worst.0,
            worst.1,
            if failures.is_empty() {
                String::new()
            } else {
                format!("; failing: {}", failures.join(", "))
            }
        ),
    )
}

// ---------------------------------------------------------------------------
// 3. partial pruning

/// Fixed fitness of the 16 architectures of the 2-edge x 4-op space.
pub fn two_edge_table() -> FitnessTable {
    let mut entries = BTreeMap::new();
    for i in 0..4 {
        for j in 0..4 {
            let f = ((3 * i + 5 * j) % 7 + 1) as f64 / 10.0 + 0.01 * i as f64;
            entries.insert(format!("0:{i}|1:{j}"), f);
        }
    }
    FitnessTable::from_entries(entries)
}

fn direct_score(table: &FitnessTable, space: &SearchSpace, agg: Aggregate) -> f64 {
    let mut vals = Vec::new();
    for i in space.edges[0].unmasked() {
        for j in space.edges[1].unmasked() {
            vals.push(table.entries[&format!("0:{i}|1:{j}")]);
        }
    }
    match agg {
        Aggregate::Max => vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        Aggregate::Mean => vals.iter().sum::<f64>() / vals.len() as f64,
    }
}

pub fn pruning_fidelity() -> Outcome {
    let space = SearchSpace::toy(2, 4);
    let table = two_edge_table();
    let aggs = [Aggregate::Max, Aggregate::Mean];
    let rankers: Vec<TabularRanker> = aggs
        .iter()
        .map(|&aggregate| TabularRanker {
            table: table.clone(),
            aggregate,
        })
        .collect();
    let refs: Vec<&dyn Ranker> = rankers.iter().map(|r| r as &dyn Ranker).collect();
    let (_, audit) = partial_prune(&space, 0.5, Semantics::ArchitectureFraction, &refs, 1).unwrap();
    let trajectory = audit.trajectory(1.0);
    let want = [1.0, 0.5625, 0.25];
    let traj_ok = trajectory.len() == 3 && trajectory.iter().zip(&want).all(|(a, b)| a == b);
    let mut worst = 0.0f64;
    let mut current = space.clone();
    for round in &audit.rounds {
        for rec in &round.records {
            let less = current.without(rec.edge_id, rec.op_index).unwrap();
            let s: f64 = aggs
                .iter()
                .map(|&a| {
                    let full = direct_score(&table, &current, a);
                    (full - direct_score(&table, &less, a)) / full
                })
                .sum();
            worst = worst.max((s - rec.score).abs());
        }
        for &(e, o) in &round.pruned {
            current = current.without(e, o).unwrap();
        }
    }
    let scores_ok = worst <= 1e-12;
    Outcome::new(
        traj_ok && scores_ok,
        format!("trajectory {trajectory:?}; worst score error {worst:.1e}"),
    )
}

// ---------------------------------------------------------------------------
// 4. memory ratios

pub fn memory_ratios() -> Outcome {
    let t0 = Instant::now();
    let space = SearchSpace::darts();
    let plain_cfg = SupernetConfig::darts();
    let pc_cfg = SupernetConfig::darts().with_divisor(4);
    let batch = 64;
    let plain = estimate_memory(&space, &plain_cfg, batch).unwrap();
    let pc = estimate_memory(&space, &pc_cfg, batch).unwrap();
    let a = pc.total_elements as f64 / plain.total_elements as f64;
    let masked = expected_memory_random(&space, &plain_cfg, batch, 0.5).unwrap();
    let b = masked.retained_activation_elements / plain.retained_activation_elements as f64;
    let both = expected_memory_random(&space, &pc_cfg, batch, 0.5).unwrap();
    let c = both.total_elements / plain.total_elements as f64;
    let elapsed = t0.elapsed().as_secs_f64();
    // Sampled masks agree with the expectation.
    let draws = 50;
    let mut mean_b = 0.0;
    for s in 0..draws {
        let m = random_mask(&space, 0.5, s).unwrap();
        mean_b += estimate_memory(&m, &plain_cfg, batch)
            .unwrap()
            .retained_activation_elements as f64
            / plain.retained_activation_elements as f64;
    }
    mean_b /= draws as f64;
    let pass = (0.25..=0.40).contains(&a) && (0.45..=0.60).contains(&b) && c <= 0.25 && elapsed < 1.0;
    Outcome::new(
        pass,
        format!(
            "K=4 total {a:.3}; xi=0.5 activations {b:.3} (mean of {draws} masks {mean_b:.3}); both total {c:.3}; model {:.0} ms",
            elapsed * 1e3
        ),
    )
}

// ---------------------------------------------------------------------------
// 5 and 6. oracle studies on the planted task

pub fn planted_table() -> (FitnessTable, f64) {
    let t0 = Instant::now();
    let cfg = RunConfig::toy();
    let space = cfg.validate().unwrap();
    let data = planted_generate(&PlantedSpec::default(), 0).unwrap();
    let budget = OracleBudget {
        epochs: cfg.oracle.epochs,
        schedule: cfg.schedule.clone(),
        cap: cfg.oracle.cap,
    };
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(8);
    let table = build_fitness_table(&space, &data, &cfg.supernet, &budget, 0, 0, workers).unwrap();
    (table, t0.elapsed().as_secs_f64())
}

/// Random table on `space` whose best architecture is unique.
fn unique_optimum_table(space: &SearchSpace, seed: u64) -> (FitnessTable, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let archs = enumerate_space(space, 4096).unwrap();
    let best = rng.random_range(0..archs.len());
    let entries: BTreeMap<String, f64> = archs
        .iter()
        .enumerate()
        .map(|(i, a)| {
            (
                assignment_key(a),
                if i == best { 1.0 } else { rng.random_range(0.0..0.99) },
            )
        })
        .collect();
    (FitnessTable::from_entries(entries), assignment_key(&archs[best]))
}

pub fn pruning_safety(table: &FitnessTable, build_secs: f64) -> Outcome {
    let t0 = Instant::now();
    let space = RunConfig::toy().validate().unwrap();
    let ranked = table.ranked();
    let unique = ranked.len() > 1 && ranked[0].1 > ranked[1].1;
    let rep = survival_study(
        table,
        &space,
        &[
            SurvivalMethod::Algorithmic {
                xi: 0.5,
                aggregate: Aggregate::Max,
            },
            SurvivalMethod::Random { xi: 0.5 },
        ],
        10_000,
        0.05,
        1,
    )
    .unwrap();
    let alg = &rep.methods[0];
    let rnd = &rep.methods[1];
    // (a) on the planted table and on 100 seeded synthetic tables
    let mut synthetic_kept = 0;
    for seed in 0..100 {
        let (t, best) = unique_optimum_table(&space, seed);
        let ranker = TabularRanker {
            table: t,
            aggregate: Aggregate::Max,
        };
        let (m, _) = partial_prune(
            &space,
            0.5,
            Semantics::ArchitectureFraction,
            &[&ranker as &dyn Ranker],
            1,
        )
        .unwrap();
        let a = parse_key(&best, space.edges.len()).unwrap();
        if a.iter().zip(&m.edges).all(|(&o, e)| e.mask[o]) {
            synthetic_kept += 1;
        }
    }
    let a_ok = unique && alg.top1_survival == 1.0 && synthetic_kept == 100;
    // (b)
    let predicted = rnd.predicted_top_q_survival.unwrap();
    let b_ok = (rnd.top_q_survival - predicted).abs() <= 0.03;
    // (c)
    let c_ok = rnd.median_shift < rnd.median_after_std;
    let secs = build_secs + t0.elapsed().as_secs_f64();
    Outcome::new(
        a_ok && b_ok && c_ok && secs < 3600.0,
        format!(
            "(a) unique optimum {unique}, kept by deterministic pruning in {:.0}% of seeds, and in {synthetic_kept}/100 synthetic tables; (b) top-5% survival {:.4} vs closed form {predicted:.4}; (c) median shift {:.4} vs inter-seed std {:.4}; {secs:.0} s",
            alg.top1_survival * 100.0,
            rnd.top_q_survival,
            rnd.median_shift,
            rnd.median_after_std
        ),
    )
}

pub const PLANTED_KEY: &str = "0:1|1:1|2:1";

pub fn planted_search(table: &FitnessTable) -> Outcome {
    let t0 = Instant::now();
    let cfg = RunConfig::toy();
    let space = cfg.validate().unwrap();
    let schedule = SearchSchedule::toy();
    let mut found = Vec::new();
    for seed in 0..5u64 {
        let data = planted_generate(&PlantedSpec::default(), seed).unwrap();
        let net = Supernet::new(space.clone(), cfg.supernet.clone(), seed).unwrap();
        let out = run_search(net, &data, &schedule, seed, &mut |_, _, _| Ok(())).unwrap();
        found.push(out.genotype.key());
    }
    let hits = found.iter().filter(|k| *k == PLANTED_KEY).count();
    let top = found
        .iter()
        .filter(|k| *k == PLANTED_KEY)
        .all(|k| table.in_top_q(k, 0.05).unwrap());
    let secs = t0.elapsed().as_secs_f64();
    Outcome::new(
        hits >= 4 && top && secs < 1800.0,
        format!(
            "recovered {hits}/5 ({}); planted fitness {:.4}, rank {} of {}; {secs:.0} s",
            found.join(", "),
            table.get(PLANTED_KEY).unwrap(),
            table.rank_of(PLANTED_KEY).unwrap() + 1,
            table.len()
        ),
    )
}

// ---------------------------------------------------------------------------
// 7. NNGP ranker

pub fn nngp_ranker() -> Outcome {
    let cfg = RunConfig::toy();
    let space = cfg.validate().unwrap();
    let data = planted_generate(&PlantedSpec::default(), 3).unwrap();
    let idx: Vec<usize> = (0..48).collect();
    let batches: Vec<Tensor> = idx.chunks(16).map(|c| data.batch(c).0).collect();
    let net = Supernet::new(space.clone(), cfg.supernet.clone(), 7).unwrap();
    let a = nngp_frobenius(&net, &batches, None).unwrap();
    let again = nngp_frobenius(
        &Supernet::new(space.clone(), cfg.supernet.clone(), 7).unwrap(),
        &batches,
        None,
    )
    .unwrap();
    let mut perm = idx.clone();
    perm.reverse();
    perm.swap(3, 40);
    let shuffled: Vec<Tensor> = perm.chunks(12).map(|c| data.batch(c).0).collect();
    let b = nngp_frobenius(&net, &shuffled, None).unwrap();
    let zero_space = SearchSpace::chain(3, &[OpKind::Zero]);
    let zero_net = Supernet::new(zero_space, cfg.supernet.clone(), 7).unwrap();
    let z = nngp_frobenius(&zero_net, &batches, None).unwrap();
    let zk = nngp_kernel(&[Tensor::zeros(&[16, 3])]).unwrap().frobenius();
    let pass = a == again && (a - b).abs() <= 1e-9 && z == 0.0 && zk == 0.0 && a > 0.0;
    Outcome::new(
        pass,
        format!(
            "score {a:.6}; rerun identical {}; permuted delta {:.1e}; all-zero network score {z}; zero-logit kernel {zk}",
            a == again,
            (a - b).abs()
        ),
    )
}

// ---------------------------------------------------------------------------
// 8. replay

pub fn replay_search(bin: Option<&Path>) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("search");
    let run_s = run.display().to_string();
    let code = match bin {
        Some(b) => std::process::Command::new(b)
            .args(["search", "--out", &run_s, "--workers", "1"])
            .output()
            .map(|o| o.status.code().unwrap_or(-1))
            .unwrap_or(-1),
        None => zosnas::cli::run(["zosnas", "search", "--out", &run_s, "--workers", "1"]),
    };
    if code != 0 {
        return Outcome::new(false, format!("search exited with {code}"));
    }
    let replay = dir.path().join("again");
    let replay_s = replay.display().to_string();
    let code = zosnas::cli::run(["zosnas", "replay", &run_s, "--out", &replay_s]);
    let same = |f: &str| {
        std::fs::read(run.join(f))
            .ok()
            .is_some_and(|a| Some(a) == std::fs::read(replay.join(f)).ok())
    };
    let pass = code == 0 && same("genotype.json") && same("metrics.jsonl");
    Outcome::new(
        pass,
        format!(
            "replay exit {code}; genotype.json identical {}; metrics.jsonl identical {}",
            same("genotype.json"),
            same("metrics.jsonl")
        ),
    )
}

// ---------------------------------------------------------------------------
// 9. CIFAR-10 binary format

/// Writes five training files of 10000 records with random pixels and
/// labels 0..=9 into `dir`.
pub fn write_synthetic_cifar(dir: &Path, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for name in CIFAR_TRAIN_FILES.iter().chain([&"test_batch.bin"]) {
        let mut bytes = vec![0u8; CIFAR_FILE_RECORDS * CIFAR_RECORD];
        rng.fill(&mut bytes[..]);
        for r in 0..CIFAR_FILE_RECORDS {
            bytes[r * CIFAR_RECORD] = rng.random_range(0..10);
        }
        std::fs::write(dir.join(name), bytes).unwrap();
    }
}

fn check_cifar_dir(dir: &Path) -> Result<usize, String> {
    let mut all = CifarRecords {
        labels: vec![],
        pixels: vec![],
    };
    for (i, name) in CIFAR_TRAIN_FILES.iter().enumerate() {
        let bytes = std::fs::read(dir.join(name)).map_err(|e| e.to_string())?;
        let recs = CifarRecords::parse(&bytes, CIFAR_FILE_RECORDS, name).map_err(|e| e.to_string())?;
        if recs.to_bytes(0..recs.len()) != bytes {
            return Err(format!("{name} does not round-trip"));
        }
        all.append(recs);
        let _ = i;
    }
    let (train, _) = zosnas::data::load_cifar10_raw(dir).map_err(|e| e.to_string())?;
    if train.len() != 50_000 || train.labels.iter().any(|&l| l > 9) || train != all {
        return Err("train set is not 50000 records with labels 0..=9".into());
    }
    for (i, name) in CIFAR_TRAIN_FILES.iter().enumerate() {
        let r = i * CIFAR_FILE_RECORDS..(i + 1) * CIFAR_FILE_RECORDS;
        if train.to_bytes(r) != std::fs::read(dir.join(name)).map_err(|e| e.to_string())? {
            return Err(format!("re-serialized {name} differs"));
        }
    }
    Ok(train.len())
}

pub const CIFAR_ENV: &str = "ZOSNAS_CIFAR10_DIR";

pub fn cifar_loader() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    write_synthetic_cifar(dir.path(), 9);
    let synthetic = check_cifar_dir(dir.path());
    let real_dir = std::env::var_os(CIFAR_ENV).map(PathBuf::from);
    let real = real_dir.as_deref().map(check_cifar_dir);
    let pass = synthetic.is_ok() && real.as_ref().is_none_or(|r| r.is_ok());
    Outcome::new(
        pass,
        format!(
            "synthetic files: {}; real dataset: {}",
            match &synthetic {
                Ok(n) => format!("{n} records, byte-identical"),
                Err(e) => e.clone(),
            },
            match (&real_dir, &real) {
                (Some(d), Some(Ok(n))) => format!("{n} records, byte-identical ({})", d.display()),
                (Some(d), Some(Err(e))) => format!("{e} ({})", d.display()),
                _ => format!("absent (set {CIFAR_ENV})"),
            }
        ),
    )
}
