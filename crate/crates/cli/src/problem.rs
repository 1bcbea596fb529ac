//! Models, oracles and terminal data for the built-in problems.

use std::sync::Arc;

use branchpde_core::codes::MechanismOptions;
use branchpde_core::flows::{cos_terminal, rotating_case_one, rotating_case_two, rotating_terminal, ExactFlow};
use branchpde_core::model::{navier_stokes_model, semilinear_model, PdeSystem, SemilinearF, TerminalCondition};
use branchpde_core::network::Network;
use branchpde_core::regression::with_network_pressure;
use branchpde_core::sampler::TreeSampler;
use branchpde_core::{Error, Result};

use crate::config::{Phi0Mode, ProblemKind, RunConfig};

/// Closed-form solution, when the problem has one.
pub fn exact_flow(cfg: &RunConfig) -> Option<ExactFlow> {
    match cfg.problem {
        ProblemKind::TaylorGreen => Some(ExactFlow::taylor_green(cfg.nu, cfg.horizon)),
        ProblemKind::Abc => {
            let [a, b, c] = cfg.abc;
            Some(ExactFlow::abc(cfg.nu, a, b, c, cfg.horizon))
        }
        ProblemKind::SemilinearLinear => Some(ExactFlow::semilinear_linear(cfg.a, cfg.nu, cfg.horizon)),
        ProblemKind::Rotating => None,
    }
}

/// Terminal data with closed-form pressure where available.
fn base_terminal(cfg: &RunConfig) -> TerminalCondition {
    match cfg.problem {
        ProblemKind::Rotating => {
            let (f, g) = if cfg.rotating_case == 1 {
                rotating_case_one()
            } else {
                rotating_case_two()
            };
            rotating_terminal(f, g)
        }
        ProblemKind::SemilinearLinear => cos_terminal(),
        _ => exact_flow(cfg).expect("closed form").terminal(),
    }
}

/// Model whose terminal pressure, if any, is closed form. Pressure
/// pre-training only needs the velocity terminal data.
pub fn velocity_model(cfg: &RunConfig) -> Result<PdeSystem> {
    build(cfg, base_terminal(cfg))
}

/// Model used inside the trees; `phi0` must be given when the run uses a
/// network pressure.
pub fn model(cfg: &RunConfig, phi0: Option<&Network>) -> Result<PdeSystem> {
    let terminal = base_terminal(cfg);
    let terminal = match (cfg.phi0, phi0) {
        (Phi0Mode::Network, Some(net)) => with_network_pressure(terminal, net.clone())?,
        (Phi0Mode::Network, None) => {
            return Err(Error::InvalidConfig(
                "phi0=network needs a pre-trained pressure network (run pretrain-phi0 first)".into(),
            ))
        }
        _ => terminal,
    };
    build(cfg, terminal)
}

fn build(cfg: &RunConfig, terminal: TerminalCondition) -> Result<PdeSystem> {
    let system = if cfg.problem.is_navier_stokes() {
        navier_stokes_model(cfg.problem.dim(), cfg.nu, cfg.horizon, terminal)?
    } else {
        semilinear_model(SemilinearF::linear(cfg.a), cfg.nu, cfg.horizon, terminal)
    };
    system.validate()?;
    Ok(system)
}

pub fn sampler(cfg: &RunConfig, model: PdeSystem) -> Result<TreeSampler> {
    TreeSampler::new(
        Arc::new(model),
        MechanismOptions {
            prune_vanishing: cfg.prune,
        },
        cfg.sampler.clone(),
    )
}
