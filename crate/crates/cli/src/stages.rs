//! The pipeline stages behind each subcommand. Every stage reads and
//! writes its artifacts in the output directory.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::time::Instant;

use branchpde_core::codes::Code;
use branchpde_core::metrics::{
    error_report, pressure_error, pressure_slice, time_slices, velocity_slice, write_slice_csv, ErrorReport,
    PressureEstimator, VelocityEstimator,
};
use branchpde_core::network::Network;
use branchpde_core::regression::{
    build_training_set, pretrain_phi0, train_network, write_loss_csv, Trained, TrainingSet,
};
use branchpde_core::sampler::EstimateStats;
use ndarray::Array2;
use serde::Serialize;

use crate::config::{Phi0Mode, RunConfig};
use crate::manifest::Manifest;
use crate::problem::{exact_flow, model, sampler, velocity_model};
use crate::{CliResult, ExitKind, Failure, Stage};

pub const CONFIG_FILE: &str = "config.txt";
pub const PHI0_DATA: &str = "phi0_data.csv";
pub const PHI0_NET: &str = "phi0.ckpt";
pub const PHI0_LOSS: &str = "phi0_loss.csv";
pub const PHI0_REPORT: &str = "phi0_report.json";
pub const PHI0_SLICE: &str = "phi0_slice.csv";
pub const DATA: &str = "data.csv";
pub const NET: &str = "net.ckpt";
pub const LOSS: &str = "loss.csv";
pub const ERRORS_CSV: &str = "errors.csv";
pub const ERRORS_JSON: &str = "errors.json";
pub const FIELD: &str = "field.csv";

/// Output directory bound to one configuration.
pub struct Workspace {
    pub cfg: RunConfig,
    pub dir: PathBuf,
    manifest: Manifest,
}

fn create(path: &Path, stage: &str) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::new(ExitKind::Validation, stage, format!("cannot write {}: {e}", path.display())))
}

fn open(path: &Path, stage: &str, hint: &str) -> CliResult<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| {
        Failure::new(
            ExitKind::Validation,
            stage,
            format!("cannot read {}: {e} ({hint})", path.display()),
        )
    })
}

impl Workspace {
    pub fn create(cfg: RunConfig) -> CliResult<Self> {
        let dir = cfg.out.clone();
        std::fs::create_dir_all(&dir).stage("setup")?;
        std::fs::write(dir.join(CONFIG_FILE), cfg.to_flat()).stage("setup")?;
        let manifest = Manifest::open(&dir, &cfg);
        let ws = Workspace { cfg, dir, manifest };
        ws.manifest.save(&ws.dir)?;
        Ok(ws)
    }

    /// Binds to an existing directory without writing to it.
    pub fn attach(cfg: RunConfig) -> Self {
        let dir = cfg.out.clone();
        let manifest = Manifest::open(&dir, &cfg);
        Workspace { cfg, dir, manifest }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn timed<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> CliResult<T>) -> CliResult<T> {
        let start = Instant::now();
        let out = f(self)?;
        self.manifest.record(name, start.elapsed().as_secs_f64());
        self.manifest.save(&self.dir)?;
        Ok(out)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Phi0Report {
    pub points: usize,
    pub inner_samples: usize,
    pub aborted: usize,
    pub final_loss: f64,
    /// Against the closed-form pressure, when there is one.
    pub errp: Option<f64>,
}

fn final_loss(trained: &Trained) -> f64 {
    trained.trace.last().map(|r| r.loss).unwrap_or(f64::NAN)
}

/// Pre-trains the terminal pressure network and scores it when the problem
/// has a closed-form pressure.
pub fn pretrain(ws: &mut Workspace) -> CliResult<Phi0Report> {
    ws.timed("pretrain-phi0", |ws| {
        const S: &str = "pretrain-phi0";
        let cfg = &ws.cfg;
        if !cfg.problem.is_navier_stokes() {
            return Err(Failure::new(ExitKind::Validation, S, "problem has no pressure"));
        }
        let system = velocity_model(cfg).stage(S)?;
        let (data, trained) = pretrain_phi0(&system, &cfg.phi0_train, &cfg.phi0_sampler()).stage(S)?;
        data.write_csv(create(&ws.path(PHI0_DATA), S)?).stage(S)?;
        trained.net.write_checkpoint(create(&ws.path(PHI0_NET), S)?).stage(S)?;
        write_loss_csv(&trained.trace, create(&ws.path(PHI0_LOSS), S)?).stage(S)?;
        let errp = match exact_flow(cfg).filter(|f| f.has_pressure()) {
            Some(flow) => {
                let grid = cfg.grid().stage(S)?;
                let x = grid.points();
                let est = PressureEstimator::values(&trained.net, x.view()).stage(S)?;
                let exact = PressureEstimator::values(&flow, x.view()).stage(S)?;
                let rows = pressure_slice(&trained.net, &flow, &grid).stage(S)?;
                write_slice_csv(&rows, create(&ws.path(PHI0_SLICE), S)?).stage(S)?;
                Some(pressure_error(&exact, &est))
            }
            None => None,
        };
        let report = Phi0Report {
            points: data.len(),
            inner_samples: cfg.phi0_train.m_inner,
            aborted: data.aborted,
            final_loss: final_loss(&trained),
            errp,
        };
        let json = serde_json::to_string_pretty(&report).expect("plain struct");
        std::fs::write(ws.path(PHI0_REPORT), json + "\n").stage(S)?;
        Ok(report)
    })
}

/// The pressure network when the run uses one.
pub fn load_phi0(ws: &Workspace, stage: &str) -> CliResult<Option<Network>> {
    if ws.cfg.phi0 != Phi0Mode::Network {
        return Ok(None);
    }
    let r = open(&ws.path(PHI0_NET), stage, "run pretrain-phi0 first")?;
    Network::read_checkpoint(r).stage(stage).map(Some)
}

pub fn build_data(ws: &mut Workspace) -> CliResult<TrainingSet> {
    ws.timed("build-data", |ws| {
        const S: &str = "build-data";
        let phi0 = load_phi0(ws, S)?;
        let system = model(&ws.cfg, phi0.as_ref()).stage(S)?;
        let tree = sampler(&ws.cfg, system).stage(S)?;
        let data = build_training_set(&tree, &ws.cfg.train).stage(S)?;
        data.write_csv(create(&ws.path(DATA), S)?).stage(S)?;
        Ok(data)
    })
}

pub fn train(ws: &mut Workspace) -> CliResult<Trained> {
    ws.timed("train", |ws| {
        const S: &str = "train";
        let data = TrainingSet::read_csv(open(&ws.path(DATA), S, "run build-data first")?).stage(S)?;
        let trained = train_network(&data, &ws.cfg.train).stage(S)?;
        trained.net.write_checkpoint(create(&ws.path(NET), S)?).stage(S)?;
        write_loss_csv(&trained.trace, create(&ws.path(LOSS), S)?).stage(S)?;
        Ok(trained)
    })
}

/// Scores the trained network against the closed form, or writes the
/// estimated velocity field on the grid when there is none.
pub fn evaluate(ws: &mut Workspace) -> CliResult<Option<ErrorReport>> {
    ws.timed("evaluate", |ws| {
        const S: &str = "evaluate";
        let net = Network::read_checkpoint(open(&ws.path(NET), S, "run train first")?).stage(S)?;
        let phi0 = load_phi0(ws, S)?;
        let grid = ws.cfg.grid().stage(S)?;
        let Some(flow) = exact_flow(&ws.cfg) else {
            write_field(&net, &grid.points(), ws.cfg.horizon, &ws.path(FIELD))?;
            return Ok(None);
        };
        let pressure = phi0.as_ref().map(|p| p as &dyn PressureEstimator);
        let report = error_report(&net, pressure, &flow, &grid).stage(S)?;
        report.write_csv(create(&ws.path(ERRORS_CSV), S)?).stage(S)?;
        std::fs::write(ws.path(ERRORS_JSON), report.to_json().stage(S)? + "\n").stage(S)?;
        let times = time_slices(ws.cfg.horizon);
        for i in 1..=flow.dim() {
            for (k, t) in [(0, times[0]), (9, times[9])] {
                let rows = velocity_slice(&net, &flow, &grid, i, t).stage(S)?;
                write_slice_csv(&rows, create(&ws.path(&format!("slice_u{i}_k{k}.csv")), S)?).stage(S)?;
            }
        }
        if let Some(p) = &phi0 {
            let rows = pressure_slice(p, &flow, &grid).stage(S)?;
            write_slice_csv(&rows, create(&ws.path("slice_p.csv"), S)?).stage(S)?;
        }
        Ok(Some(report))
    })
}

/// `(t, x, v)` rows at every time slice, for quiver plots.
fn write_field(net: &Network, x: &Array2<f64>, horizon: f64, path: &Path) -> CliResult<()> {
    const S: &str = "evaluate";
    let d = x.ncols();
    let mut out = csv::Writer::from_writer(create(path, S)?);
    let io = |e: csv::Error| Failure::new(ExitKind::Validation, S, e.to_string());
    let mut header = vec!["t".to_string()];
    header.extend((1..=d).map(|i| format!("x{i}")));
    header.extend((1..=d).map(|i| format!("v{i}")));
    out.write_record(&header).map_err(io)?;
    for t in time_slices(horizon) {
        let mut tx = Array2::zeros((x.nrows(), d + 1));
        tx.column_mut(0).fill(t);
        tx.slice_mut(ndarray::s![.., 1..]).assign(x);
        let v = VelocityEstimator::values(net, tx.view()).stage(S)?;
        for r in 0..x.nrows() {
            let (a, b) = (tx.row(r), v.row(r));
            out.write_record(a.iter().chain(b.iter()).map(|z| z.to_string())).map_err(io)?;
        }
    }
    out.flush().stage(S)
}

/// Exit status 3 when any configured threshold is exceeded.
pub fn check_thresholds(cfg: &RunConfig, report: Option<&ErrorReport>, phi0_errp: Option<f64>) -> CliResult<()> {
    let th = &cfg.thresholds;
    let mut misses = Vec::new();
    let mut check = |name: &str, value: Option<f64>, max: Option<f64>| {
        if let (Some(v), Some(m)) = (value, max) {
            if !(v <= m) {
                misses.push(format!("{name} = {v:e} > {m:e}"));
            }
        }
    };
    if let Some(r) = report {
        check("erru", Some(r.max_over_slices(|s| s.erru)), th.max_erru);
        check("errgu", Some(r.max_over_slices(|s| s.errgu)), th.max_errgu);
        check("errdivu", Some(r.max_over_slices(|s| s.errdivu)), th.max_errdivu);
        check("errp", r.errp, th.max_errp);
    }
    check("phi0 errp", phi0_errp, th.max_errp);
    if misses.is_empty() {
        Ok(())
    } else {
        Err(Failure::new(ExitKind::Threshold, "thresholds", misses.join("; ")))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SampleOutput {
    pub mean: f64,
    pub stderr: Option<f64>,
    pub samples: usize,
    pub aborted: usize,
    /// Closed-form value, when known.
    pub exact: Option<f64>,
}

/// Monte Carlo estimate of `u_i(t, x)`; `i = 0` is the pressure.
pub fn sample(ws: &Workspace, t: f64, x: &[f64], i: usize, samples: usize) -> CliResult<SampleOutput> {
    const S: &str = "sample";
    let cfg = &ws.cfg;
    let d = cfg.problem.dim();
    let bad = |m: String| Failure::new(ExitKind::Validation, S, m);
    if x.len() != d {
        return Err(bad(format!("x has {} coordinates, problem has {d}", x.len())));
    }
    if !(0.0..=cfg.horizon).contains(&t) {
        return Err(bad(format!("t = {t} outside [0, {}]", cfg.horizon)));
    }
    if i > d || (i == 0 && !cfg.problem.is_navier_stokes()) {
        return Err(bad(format!("component {i} not available")));
    }
    if samples == 0 {
        return Err(bad("samples must be positive".into()));
    }
    let phi0 = load_phi0(ws, S)?;
    let system = model(cfg, phi0.as_ref()).stage(S)?;
    let tree = sampler(cfg, system).stage(S)?;
    let stats: EstimateStats = tree.estimate_code(t, x, &Code::identity(i), samples, 0).stage(S)?;
    let exact = exact_flow(cfg).map(|f| f.eval(i, &branchpde_core::MultiIndex::zeros(d), t, x));
    Ok(SampleOutput {
        mean: stats.mean,
        stderr: stats.stderr,
        samples: stats.samples,
        aborted: stats.aborted,
        exact,
    })
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub phi0: Option<Phi0Report>,
    pub data_aborted: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub report: Option<ErrorReport>,
}

/// Pressure pre-training (when used) → training set → fit → evaluation.
/// Thresholds are left to the caller.
pub fn run(ws: &mut Workspace) -> CliResult<RunOutcome> {
    let phi0 = match ws.cfg.phi0 {
        Phi0Mode::Network => Some(pretrain(ws)?),
        _ => None,
    };
    let data = build_data(ws)?;
    let trained = train(ws)?;
    let report = evaluate(ws)?;
    let outcome = RunOutcome {
        phi0,
        data_aborted: data.aborted,
        initial_loss: trained.trace.first().map(|r| r.loss).unwrap_or(f64::NAN),
        final_loss: final_loss(&trained),
        report,
    };
    Ok(outcome)
}
