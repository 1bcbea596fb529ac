use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use branchpde_cli::config::{parse_pair, read_flat, RunConfig};
use branchpde_cli::stages::{self, Workspace};
use branchpde_cli::{CliResult, ExitKind, Failure, Stage};
use branchpde_core::selftest::{run_selftest, FdbPerturbation};
use branchpde_core::MultiIndex;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "branchpde", version, about = "Branching-tree Monte Carlo and deep regression for nonlinear PDEs")]
struct Cli {
    /// Worker threads (default: logical cores). `1` makes every output
    /// bit-reproducible.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Flat key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// taylor-green, abc, rotating, semilinear-linear.
    #[arg(long)]
    problem: Option<String>,
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long = "T")]
    horizon: Option<f64>,
    /// desk or paper.
    #[arg(long)]
    scale: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    max_erru: Option<f64>,
    #[arg(long)]
    max_errgu: Option<f64>,
    #[arg(long)]
    max_errdivu: Option<f64>,
    #[arg(long)]
    max_errp: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the built-in identity and oracle checks.
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Perturb one expansion coefficient, e.g. `1,1:2:1.01` for
        /// μ=(1,1), n=2, factor 1.01.
        #[arg(long, value_name = "MU:N:FACTOR")]
        perturb_fdb: Option<String>,
    },
    /// Pre-train the terminal pressure network.
    PretrainPhi0(Common),
    /// Sample the deep branching training set.
    BuildData(Common),
    /// Fit the network to the training set.
    Train(Common),
    /// Score the fitted network on the evaluation grid.
    Evaluate(Common),
    /// Monte Carlo estimate of one component at one point.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        t: f64,
        /// Comma-separated coordinates.
        #[arg(long, allow_hyphen_values = true, value_delimiter = ',')]
        x: Vec<f64>,
        /// Component, 0 for the pressure.
        #[arg(long, default_value_t = 1)]
        i: usize,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
    },
    /// All stages end to end.
    Run(Common),
}

fn config(common: &Common) -> CliResult<RunConfig> {
    let mut map = match &common.config {
        Some(p) => read_flat(p).stage("config")?,
        None => BTreeMap::new(),
    };
    let mut put = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            map.insert(k.to_string(), v);
        }
    };
    put("problem", common.problem.clone());
    put("nu", common.nu.map(|v| v.to_string()));
    put("T", common.horizon.map(|v| v.to_string()));
    put("scale", common.scale.clone());
    put("seed", common.seed.map(|v| v.to_string()));
    put("out", common.out.as_ref().map(|p| p.display().to_string()));
    put("max_erru", common.max_erru.map(|v| v.to_string()));
    put("max_errgu", common.max_errgu.map(|v| v.to_string()));
    put("max_errdivu", common.max_errdivu.map(|v| v.to_string()));
    put("max_errp", common.max_errp.map(|v| v.to_string()));
    for s in &common.set {
        let (k, v) = parse_pair(s).stage("config")?;
        map.insert(k, v);
    }
    RunConfig::resolve(&map).stage("config")
}

fn parse_perturbation(s: &str) -> CliResult<FdbPerturbation> {
    let bad = || Failure::new(ExitKind::Validation, "selftest", format!("bad perturbation '{s}', expected MU:N:FACTOR"));
    let parts: Vec<&str> = s.split(':').collect();
    let [mu, n, factor] = parts[..] else {
        return Err(bad());
    };
    let entries = mu
        .split(',')
        .map(|e| e.trim().parse::<u16>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| bad())?;
    Ok(FdbPerturbation {
        mu: MultiIndex::from_slice(&entries),
        n: n.parse().map_err(|_| bad())?,
        factor: factor.parse().map_err(|_| bad())?,
    })
}

fn print_json<T: serde::Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn execute(command: Command) -> CliResult<()> {
    match command {
        Command::Selftest { seed, perturb_fdb } => {
            let perturb = perturb_fdb.as_deref().map(parse_perturbation).transpose()?;
            let report = run_selftest(seed, perturb.as_ref()).stage("selftest")?;
            for c in &report.checks {
                let status = if c.passed { "PASS" } else { "FAIL" };
                println!("{status} {:<16} worst {:.3e} tol {:.0e}  {}", c.name, c.worst, c.tolerance, c.detail);
            }
            for k in &report.kernel_values {
                println!("kernel d={} r={} quadrature {:.10} closed form {:.10}", k.d, k.r, k.quadrature, k.closed_form);
            }
            if report.passed() {
                Ok(())
            } else {
                Err(Failure::new(ExitKind::Threshold, "selftest", "one or more checks failed"))
            }
        }
        Command::PretrainPhi0(c) => {
            let mut ws = Workspace::create(config(&c)?)?;
            let report = stages::pretrain(&mut ws)?;
            print_json(&report);
            stages::check_thresholds(&ws.cfg, None, report.errp)
        }
        Command::BuildData(c) => {
            let mut ws = Workspace::create(config(&c)?)?;
            let data = stages::build_data(&mut ws)?;
            println!("{} points, {} aborted samples", data.len(), data.aborted);
            Ok(())
        }
        Command::Train(c) => {
            let mut ws = Workspace::create(config(&c)?)?;
            let trained = stages::train(&mut ws)?;
            if let (Some(first), Some(last)) = (trained.trace.first(), trained.trace.last()) {
                println!("loss {:e} -> {:e} over {} epochs", first.loss, last.loss, trained.trace.len());
            }
            Ok(())
        }
        Command::Evaluate(c) => {
            let mut ws = Workspace::create(config(&c)?)?;
            let report = stages::evaluate(&mut ws)?;
            if let Some(r) = &report {
                println!("{}", r.to_json().stage("evaluate")?);
            }
            stages::check_thresholds(&ws.cfg, report.as_ref(), None)
        }
        Command::Sample {
            common,
            t,
            x,
            i,
            samples,
        } => {
            let ws = Workspace::attach(config(&common)?);
            print_json(&stages::sample(&ws, t, &x, i, samples)?);
            Ok(())
        }
        Command::Run(c) => {
            let mut ws = Workspace::create(config(&c)?)?;
            let o = stages::run(&mut ws)?;
            if let Some(r) = &o.report {
                println!("{}", r.to_json().stage("run")?);
            }
            stages::check_thresholds(&ws.cfg, o.report.as_ref(), o.phi0.as_ref().and_then(|p| p.errp))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(ExitKind::Validation as u8)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: workers: {e}");
            return ExitCode::from(ExitKind::Validation as u8);
        }
    }
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code() as u8)
        }
    }
}
