//! Statistical checks of the tree estimator against closed forms.

use std::f64::consts::FRAC_PI_2;
use std::sync::Arc;

use branchpde_core::codes::{Code, MechanismOptions};
use branchpde_core::flows::{cos_terminal, ExactFlow};
use branchpde_core::model::{navier_stokes_model, semilinear_model, SemilinearF};
use branchpde_core::sampler::{sample_rng, BranchOrdering, SamplerConfig, TreeSampler};
use branchpde_core::MultiIndex;

#[test]
fn semilinear_linear_is_unbiased() {
    let (a, nu, horizon) = (0.5, 0.5, 0.5);
    let model = Arc::new(semilinear_model(SemilinearF::linear(a), nu, horizon, cos_terminal()));
    let exact = ExactFlow::semilinear_linear(a, nu, horizon);
    let sampler = TreeSampler::new(model, MechanismOptions::default(), SamplerConfig::new(horizon, nu, 3)).unwrap();
    let mut hits = 0;
    for p in 0..10 {
        let t = horizon * (p as f64 * 0.73).fract();
        let x = -3.0 + 6.0 * (p as f64 * 0.41).fract();
        let est = sampler.estimate_code(t, &[x], &Code::identity(1), 10_000, p * 10_000).unwrap();
        let target = exact.eval(1, &MultiIndex::zeros(1), t, &[x]);
        let se = est.stderr.unwrap();
        if (est.mean - target).abs() <= 4.0 * se {
            hits += 1;
        }
        assert_eq!(est.aborted, 0);
    }
    assert!(hits >= 9, "{hits} of 10 within 4 stderr");
}

#[test]
fn taylor_green_velocity_is_unbiased() {
    let flow = ExactFlow::taylor_green(1.0, 0.25);
    let model = Arc::new(navier_stokes_model(2, 1.0, 0.25, flow.terminal()).unwrap());
    let sampler = TreeSampler::new(model, MechanismOptions::default(), SamplerConfig::new(0.25, 1.0, 5)).unwrap();
    let est = sampler.mc_estimate(0.125, &[0.0, FRAC_PI_2], 1, 10_000).unwrap();
    let target = -(-0.25f64).exp();
    let se = est.stderr.unwrap();
    eprintln!("tg mean {} se {} aborted {}", est.mean, se, est.aborted);
    assert!((est.mean - target).abs() <= 4.0 * se, "mean {} target {target} se {se}", est.mean);
    assert!(est.aborted < 2);
}

#[test]
fn survival_fraction_matches_default_rate() {
    let flow = ExactFlow::taylor_green(1.0, 0.25);
    let model = Arc::new(navier_stokes_model(2, 1.0, 0.25, flow.terminal()).unwrap());
    let sampler = TreeSampler::new(model, MechanismOptions::default(), SamplerConfig::new(0.25, 1.0, 9)).unwrap();
    let draws = 100_000;
    let mut terminal = 0;
    for k in 0..draws {
        let mut rng = sample_rng(9, k);
        // a Poisson-free code that terminates immediately when it survives
        let (_, trace) = sampler
            .sample_traced(0.0, &[0.1, 0.2], &Code::identity(1), &mut rng)
            .unwrap();
        terminal += trace.root_terminal as usize;
    }
    let frac = terminal as f64 / draws as f64;
    assert!((frac - 0.95).abs() <= 0.01, "survival {frac}");
}

#[test]
fn paper_literal_ordering_runs() {
    let flow = ExactFlow::taylor_green(1.0, 0.25);
    let model = Arc::new(navier_stokes_model(2, 1.0, 0.25, flow.terminal()).unwrap());
    let mut cfg = SamplerConfig::new(0.25, 1.0, 5);
    cfg.ordering = BranchOrdering::PaperLiteral;
    let sampler = TreeSampler::new(model, MechanismOptions::default(), cfg).unwrap();
    let est = sampler.mc_estimate(0.125, &[0.0, FRAC_PI_2], 2, 2_000).unwrap();
    assert!(est.mean.is_finite());
}

#[test]
fn pruning_preserves_the_estimate_target() {
    let flow = ExactFlow::taylor_green(1.0, 0.25);
    let model = Arc::new(navier_stokes_model(2, 1.0, 0.25, flow.terminal()).unwrap());
    let opts = MechanismOptions { prune_vanishing: true };
    let sampler = TreeSampler::new(model, opts, SamplerConfig::new(0.25, 1.0, 21)).unwrap();
    let est = sampler.mc_estimate(0.05, &[0.7, 2.0], 2, 10_000).unwrap();
    let target = flow.eval(2, &MultiIndex::zeros(2), 0.05, &[0.7, 2.0]);
    assert!((est.mean - target).abs() <= 4.0 * est.stderr.unwrap());
}
