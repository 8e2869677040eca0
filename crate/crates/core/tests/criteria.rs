mod common;

#[test]
fn tabular_pruning_trajectory_and_scores() {
    let o = common::pruning_fidelity();
    assert!(o.pass, "{}", o.detail);
}

#[test]
fn memory_ratios_in_range() {
    let o = common::memory_ratios();
    assert!(o.pass, "{}", o.detail);
}

#[test]
fn nngp_ranker_properties() {
    let o = common::nngp_ranker();
    assert!(o.pass, "{}", o.detail);
}

#[test]
fn replay_in_process() {
    let o = common::replay_search(None);
    assert!(o.pass, "{}", o.detail);
}
