mod common;

use std::time::Instant;

use common::Outcome;

fn report(n: usize, title: &str, f: impl FnOnce() -> Outcome) -> bool {
    let t0 = Instant::now();
    let o = f();
    println!(
        "[{}] {n} {title}: {} ({:.1} s)",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail,
        t0.elapsed().as_secs_f64()
    );
    o.pass
}

fn main() {
    let mut ok = true;
    ok &= report(1, "masked mixing", || common::masked_mixing(256));
    ok &= report(2, "autodiff against finite differences", || {
        common::autodiff_soundness(20)
    });
    ok &= report(3, "partial pruning on a tabular space", common::pruning_fidelity);
    ok &= report(4, "memory model ratios", common::memory_ratios);
    let (table, secs) = common::planted_table();
    ok &= report(5, "pruning safety on the planted oracle", || {
        common::pruning_safety(&table, secs)
    });
    ok &= report(6, "masked search recovers the planted genotype", || {
        common::planted_search(&table)
    });
    ok &= report(7, "nngp ranker", common::nngp_ranker);
    ok &= report(8, "search replay", || {
        common::replay_search(Some(env!("CARGO_BIN_EXE_zosnas").as_ref()))
    });
    ok &= report(9, "cifar-10 binary format", common::cifar_loader);
    if !ok {
        std::process::exit(1);
    }
}
