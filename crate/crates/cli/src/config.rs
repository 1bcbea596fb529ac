//! Flat `key=value` run configuration with scale presets.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use branchpde_core::metrics::Grid;
use branchpde_core::regression::TrainConfig;
use branchpde_core::sampler::{BranchOrdering, SamplerConfig};
use branchpde_core::{Error, Result};
use sha2::{Digest, Sha256};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProblemKind {
    TaylorGreen,
    Abc,
    Rotating,
    SemilinearLinear,
}

impl ProblemKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "taylor-green" => Ok(ProblemKind::TaylorGreen),
            "abc" => Ok(ProblemKind::Abc),
            "rotating" => Ok(ProblemKind::Rotating),
            "semilinear-linear" | "semilinear" => Ok(ProblemKind::SemilinearLinear),
            other => Err(Error::InvalidConfig(format!(
                "unknown problem '{other}' (taylor-green, abc, rotating, semilinear-linear)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::TaylorGreen => "taylor-green",
            ProblemKind::Abc => "abc",
            ProblemKind::Rotating => "rotating",
            ProblemKind::SemilinearLinear => "semilinear-linear",
        }
    }

    pub fn dim(self) -> usize {
        match self {
            ProblemKind::TaylorGreen | ProblemKind::Rotating => 2,
            ProblemKind::Abc => 3,
            ProblemKind::SemilinearLinear => 1,
        }
    }

    pub fn is_navier_stokes(self) -> bool {
        self != ProblemKind::SemilinearLinear
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scale {
    Desk,
    Paper,
}

/// Source of the terminal pressure inside the trees.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phi0Mode {
    Exact,
    Network,
    None,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Thresholds {
    pub max_erru: Option<f64>,
    pub max_errgu: Option<f64>,
    pub max_errdivu: Option<f64>,
    pub max_errp: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub problem: ProblemKind,
    pub scale: Scale,
    pub nu: f64,
    pub horizon: f64,
    pub abc: [f64; 3],
    pub a: f64,
    pub rotating_case: u8,
    pub seed: u64,
    pub sampler: SamplerConfig,
    pub prune: bool,
    pub train: TrainConfig,
    pub phi0: Phi0Mode,
    pub phi0_train: TrainConfig,
    pub phi0_rho_tilde_hi: f64,
    pub delta: f64,
    pub thresholds: Thresholds,
    pub out: PathBuf,
    /// Every key with its resolved value.
    pub resolved: BTreeMap<String, String>,
}

/// Keys accepted in config files and `--set`.
pub const KEYS: &[&str] = &[
    "problem",
    "scale",
    "nu",
    "T",
    "A",
    "B",
    "C",
    "a",
    "case",
    "seed",
    "out",
    "x_min",
    "x_max",
    "N",
    "M",
    "P",
    "lr",
    "lr_drops",
    "lr_factor",
    "batch_size",
    "layers",
    "width",
    "delta",
    "survival",
    "rho_tilde_lo",
    "rho_tilde_hi",
    "max_depth",
    "ordering",
    "prune",
    "phi0",
    "phi0_N",
    "phi0_M",
    "phi0_P",
    "phi0_lr",
    "phi0_layers",
    "phi0_width",
    "phi0_rho_tilde_hi",
    "max_erru",
    "max_errgu",
    "max_errdivu",
    "max_errp",
];

fn invalid(msg: String) -> Error {
    Error::InvalidConfig(msg)
}

/// Parses `key=value` lines; `#` starts a comment.
pub fn parse_flat(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = parse_pair(line).map_err(|_| invalid(format!("line {}: expected key=value, got '{raw}'", n + 1)))?;
        map.insert(k, v);
    }
    Ok(map)
}

pub fn parse_pair(s: &str) -> Result<(String, String)> {
    match s.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.trim().to_string())),
        _ => Err(invalid(format!("expected key=value, got '{s}'"))),
    }
}

pub fn read_flat(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| invalid(format!("cannot read config {}: {e}", path.display())))?;
    parse_flat(&text)
}

/// Defaults for `problem` at `scale`, before user overrides.
fn defaults(problem: ProblemKind, scale: Scale) -> BTreeMap<String, String> {
    let d = problem.dim();
    let two_pi = (2.0 * PI).to_string();
    let mut m: BTreeMap<String, String> = BTreeMap::new();
    let mut put = |k: &str, v: String| {
        m.insert(k.to_string(), v);
    };
    let (nu, horizon, lo, hi) = match problem {
        ProblemKind::TaylorGreen => ("1", "0.25", "0".to_string(), two_pi.clone()),
        ProblemKind::Abc => ("0.01", "0.7", "0".to_string(), two_pi.clone()),
        ProblemKind::Rotating => ("0.01", "100", "-2".to_string(), "2".to_string()),
        ProblemKind::SemilinearLinear => ("0.5", "0.5", "0".to_string(), two_pi.clone()),
    };
    put("nu", nu.into());
    put("T", horizon.into());
    put("x_min", lo);
    put("x_max", hi);
    put("A", "0.5".into());
    put("B", "0.5".into());
    put("C", "0.5".into());
    put("a", "0.5".into());
    put("case", "1".into());
    put("seed", "0".into());
    put("out", "out".into());
    put("lr", "0.01".into());
    put("lr_drops", "1000,2000".into());
    put("lr_factor", "10".into());
    put("batch_size", "full".into());
    put("layers", "3".into());
    put("width", "100".into());
    put("survival", "0.95".into());
    put("rho_tilde_lo", "1e-5".into());
    put("rho_tilde_hi", "6".into());
    put("max_depth", "1000".into());
    put("ordering", "auto".into());
    put("prune", "false".into());
    let phi0 = match problem {
        ProblemKind::TaylorGreen | ProblemKind::Abc => "exact",
        ProblemKind::Rotating => "network",
        ProblemKind::SemilinearLinear => "none",
    };
    put("phi0", phi0.into());
    put("phi0_lr", "0.01".into());
    match scale {
        Scale::Desk => {
            put("N", "2000".into());
            put("M", "200".into());
            put("P", "2000".into());
            put("delta", (PI / 10.0).to_string());
            put("phi0_N", "4000".into());
            put("phi0_M", "100000".into());
            put("phi0_P", "2000".into());
            put("phi0_layers", "2".into());
            put("phi0_width", "32".into());
            put("phi0_rho_tilde_hi", "8".into());
        }
        Scale::Paper => {
            put("N", "100000".into());
            put("M", "1000".into());
            put("P", "10000".into());
            put("delta", Grid::default_delta(d).to_string());
            put("phi0_N", "100000".into());
            put("phi0_M", "1000".into());
            put("phi0_P", "10000".into());
            put("phi0_layers", "3".into());
            put("phi0_width", "100".into());
            put("phi0_rho_tilde_hi", "6".into());
        }
    }
    m
}

struct Reader<'a>(&'a BTreeMap<String, String>);

impl Reader<'_> {
    fn raw(&self, k: &str) -> Result<&str> {
        self.0
            .get(k)
            .map(|s| s.as_str())
            .ok_or_else(|| invalid(format!("missing key '{k}'")))
    }

    fn parse<T: std::str::FromStr>(&self, k: &str) -> Result<T> {
        let v = self.raw(k)?;
        v.parse()
            .map_err(|_| invalid(format!("cannot parse {k} = '{v}'")))
    }

    fn f64(&self, k: &str) -> Result<f64> {
        let v: f64 = self.parse(k)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(invalid(format!("{k} must be finite")))
        }
    }

    fn positive(&self, k: &str) -> Result<f64> {
        let v = self.f64(k)?;
        if v > 0.0 {
            Ok(v)
        } else {
            Err(invalid(format!("{k} = {v} must be positive")))
        }
    }

    fn opt_f64(&self, k: &str) -> Result<Option<f64>> {
        match self.0.get(k) {
            None => Ok(None),
            Some(s) if s == "none" || s.is_empty() => Ok(None),
            Some(_) => self.positive(k).map(Some),
        }
    }
}

impl RunConfig {
    /// Resolves user `overrides` on top of the problem and scale defaults.
    pub fn resolve(overrides: &BTreeMap<String, String>) -> Result<Self> {
        if let Some(k) = overrides.keys().find(|k| !KEYS.contains(&k.as_str())) {
            return Err(invalid(format!("unknown key '{k}'")));
        }
        let problem = ProblemKind::parse(overrides.get("problem").map(|s| s.as_str()).unwrap_or("taylor-green"))?;
        let scale = match overrides.get("scale").map(|s| s.as_str()).unwrap_or("desk") {
            "desk" => Scale::Desk,
            "paper" => Scale::Paper,
            other => return Err(invalid(format!("unknown scale '{other}' (desk, paper)"))),
        };
        let mut map = defaults(problem, scale);
        map.insert("problem".into(), problem.name().into());
        map.insert("scale".into(), if scale == Scale::Desk { "desk" } else { "paper" }.into());
        for (k, v) in overrides {
            map.insert(k.clone(), v.clone());
        }
        let r = Reader(&map);

        let nu = r.positive("nu")?;
        let horizon = r.positive("T")?;
        let seed: u64 = r.parse("seed")?;
        let rotating_case: u8 = r.parse("case")?;
        if problem == ProblemKind::Rotating && !(1..=2).contains(&rotating_case) {
            return Err(invalid(format!("case = {rotating_case} must be 1 or 2")));
        }

        let survival = r.f64("survival")?;
        if !(survival > 0.0 && survival < 1.0) {
            return Err(invalid(format!("survival = {survival} must lie in (0, 1)")));
        }
        let mut sampler = SamplerConfig::new(horizon, nu, seed);
        sampler.rho_rate = -survival.ln() / horizon;
        sampler.rho_tilde_lo = r.positive("rho_tilde_lo")?;
        sampler.rho_tilde_hi = r.positive("rho_tilde_hi")?;
        sampler.max_depth = r.parse("max_depth")?;
        let prune: bool = r.parse("prune")?;

        let lr_drops = r
            .raw("lr_drops")?
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<usize>().map_err(|_| invalid(format!("bad lr_drops entry '{s}'"))))
            .collect::<Result<Vec<_>>>()?;
        let batch_size = match r.raw("batch_size")? {
            "full" => None,
            _ => Some(r.parse("batch_size")?),
        };
        let train = TrainConfig {
            n_points: r.parse("N")?,
            m_inner: r.parse("M")?,
            epochs: r.parse("P")?,
            lr: r.positive("lr")?,
            lr_drops,
            lr_factor: r.positive("lr_factor")?,
            x_min: r.f64("x_min")?,
            x_max: r.f64("x_max")?,
            horizon,
            seed,
            batch_size,
            hidden_layers: r.parse("layers")?,
            width: r.parse("width")?,
        };
        train.validate()?;

        let phi0 = match r.raw("phi0")? {
            "exact" => Phi0Mode::Exact,
            "network" => Phi0Mode::Network,
            "none" => Phi0Mode::None,
            other => return Err(invalid(format!("unknown phi0 mode '{other}' (exact, network, none)"))),
        };
        match (problem, phi0) {
            (ProblemKind::SemilinearLinear, Phi0Mode::None) => {}
            (ProblemKind::SemilinearLinear, _) => {
                return Err(invalid("semilinear-linear has no pressure; use phi0=none".into()))
            }
            (_, Phi0Mode::None) => return Err(invalid("Navier-Stokes problems need phi0=exact or network".into())),
            (ProblemKind::Rotating, Phi0Mode::Exact) => {
                return Err(invalid("rotating flows have no closed-form pressure; use phi0=network".into()))
            }
            _ => {}
        }
        // terminating Poisson codes need the closed-form heat pressure
        sampler.ordering = match (r.raw("ordering")?, phi0) {
            ("auto", Phi0Mode::Exact) | ("paper", _) => BranchOrdering::PaperLiteral,
            ("auto", _) | ("proof", _) => BranchOrdering::Proof,
            (other, _) => return Err(invalid(format!("unknown ordering '{other}' (auto, proof, paper)"))),
        };
        sampler.validate()?;
        let phi0_train = TrainConfig {
            n_points: r.parse("phi0_N")?,
            m_inner: r.parse("phi0_M")?,
            epochs: r.parse("phi0_P")?,
            lr: r.positive("phi0_lr")?,
            hidden_layers: r.parse("phi0_layers")?,
            width: r.parse("phi0_width")?,
            ..train.clone()
        };
        phi0_train.validate()?;
        let phi0_rho_tilde_hi = r.positive("phi0_rho_tilde_hi")?;
        if phi0_rho_tilde_hi <= sampler.rho_tilde_lo {
            return Err(invalid("phi0_rho_tilde_hi must exceed rho_tilde_lo".into()));
        }

        let delta = r.positive("delta")?;
        Grid::new(problem.dim(), train.x_min, train.x_max, delta)?;
        let thresholds = Thresholds {
            max_erru: r.opt_f64("max_erru")?,
            max_errgu: r.opt_f64("max_errgu")?,
            max_errdivu: r.opt_f64("max_errdivu")?,
            max_errp: r.opt_f64("max_errp")?,
        };
        let out = PathBuf::from(r.raw("out")?);

        Ok(RunConfig {
            problem,
            scale,
            nu,
            horizon,
            abc: [r.f64("A")?, r.f64("B")?, r.f64("C")?],
            a: r.f64("a")?,
            rotating_case,
            seed,
            sampler,
            prune,
            train,
            phi0,
            phi0_train,
            phi0_rho_tilde_hi,
            delta,
            thresholds,
            out,
            resolved: map,
        })
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.problem.dim(), self.train.x_min, self.train.x_max, self.delta)
    }

    /// Sampler settings for the pressure pre-training draws.
    pub fn phi0_sampler(&self) -> SamplerConfig {
        let mut s = self.sampler.clone();
        s.rho_tilde_hi = self.phi0_rho_tilde_hi;
        s
    }

    /// Resolved configuration as `key=value` lines; reloading it reproduces
    /// the run. `out` is excluded so artifacts can be moved.
    pub fn to_flat(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.resolved {
            if k != "out" {
                let _ = writeln!(s, "{k}={v}");
            }
        }
        s
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_flat().as_bytes()))
    }
}
