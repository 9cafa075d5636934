//! Analytic models against the seeded simulator.

use bftprob::exec::Execution;
use bftprob::protocols::evaluate;
use bftprob::sim::{run_campaign, validate_model, SimConfig};
use bftprob::{FailureParams, Protocol, ProtocolConfig, QuorumTable};

const SEED: u64 = 20240601;
const TRIALS: u64 = 1_000_000;

fn within_three_se(model: f64, empirical: f64, trials: u64) -> bool {
    let se = (model * (1.0 - model) / trials as f64).sqrt();
    if se == 0.0 {
        (empirical - model).abs() <= 1e-12
    } else {
        (empirical - model).abs() <= 3.0 * se
    }
}

fn check_paths(cfg: ProtocolConfig, p_l: f64, p_c: f64, paths: &[&str]) {
    let fp = FailureParams::new(p_l, p_c).unwrap();
    let trace = evaluate(&cfg, &fp).unwrap();
    let stats = run_campaign(&SimConfig::new(cfg, fp, TRIALS, SEED), Execution::Parallel).unwrap();
    for path in paths {
        let model = trace.path_prob(path).unwrap();
        let empirical = stats.path(path).unwrap().frequency;
        assert!(
            within_three_se(model, empirical, TRIALS),
            "{} {path}: model {model} simulator {empirical}",
            cfg.protocol
        );
    }
}

#[test]
fn pbft_success_matches_simulation() {
    check_paths(
        ProtocolConfig::minimal(Protocol::Pbft, 1, 0),
        0.1,
        0.05,
        &["happy", "liveness"],
    );
}

#[test]
fn zyzzyva_paths_match_simulation() {
    check_paths(
        ProtocolConfig::minimal(Protocol::Zyzzyva, 1, 0),
        0.05,
        0.02,
        &["fast", "slow"],
    );
}

#[test]
fn sbft_paths_match_simulation() {
    check_paths(
        ProtocolConfig::minimal(Protocol::Sbft, 2, 1),
        0.05,
        0.02,
        &["fast", "slow", "slow_exclusive"],
    );
}

#[test]
fn smart_final_distribution_matches_per_bin() {
    let cfg = ProtocolConfig::new(Protocol::BftSmart, 10, 3, 0).unwrap();
    let fp = FailureParams::new(0.05, 0.05).unwrap();
    let model = evaluate(&cfg, &fp).unwrap();
    let stats = run_campaign(&SimConfig::new(cfg, fp, TRIALS, SEED), Execution::Parallel).unwrap();
    let empirical = stats.stage("N3").unwrap().pmf(TRIALS);
    let predicted = model.stage("N3").unwrap();
    assert_eq!(empirical.len(), predicted.support_max() + 1);
    for (k, &e) in empirical.iter().enumerate() {
        assert!(
            within_three_se(predicted.prob(k), e, TRIALS),
            "bin {k}: model {} simulator {e}",
            predicted.prob(k)
        );
    }
}

#[test]
fn pbft_reach_within_campaign_interval() {
    let cfg = ProtocolConfig::minimal(Protocol::Pbft, 3, 0);
    let sim = SimConfig::new(cfg, FailureParams::new(0.1, 0.0).unwrap(), 5000, SEED);
    let report = validate_model(&sim, None, Execution::Parallel).unwrap();
    assert!(report.entry("N3").unwrap().covered);
}

#[test]
fn loss_grid_coverage_and_negative_control() {
    let cfg = ProtocolConfig::minimal(Protocol::Pbft, 3, 0);
    let wrong = QuorumTable::for_config(&cfg).shifted(1);
    let (mut good, mut bad, mut total) = (0, 0, 0);
    for i in 0..=6 {
        let sim = SimConfig::new(
            cfg,
            FailureParams::new(i as f64 * 0.05, 0.0).unwrap(),
            5000,
            SEED,
        );
        let report = validate_model(&sim, None, Execution::Parallel).unwrap();
        let broken = validate_model(&sim, Some(&wrong), Execution::Parallel).unwrap();
        good += report.covered();
        bad += broken.covered();
        total += report.entries.len();
    }
    let (good, bad) = (good as f64 / total as f64, bad as f64 / total as f64);
    assert!(good >= 0.95, "coverage {good}");
    assert!(bad < 0.5, "mismatched model still covered {bad}");
}
