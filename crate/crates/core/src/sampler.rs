//! The coding-tree Monte Carlo estimator and batched point estimates.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use smallvec::SmallVec;

use crate::codes::{eval_code, Code, Mechanism, MechanismOptions};
use crate::error::{Error, Result};
use crate::model::PdeSystem;

pub type SampleRng = ChaCha8Rng;

/// Per-sample stream: the same `(seed, stream)` always yields the same draws.
pub fn sample_rng(seed: u64, stream: u64) -> SampleRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Which branch Poisson codes take when their branching time overshoots `T`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BranchOrdering {
    /// Poisson codes always take the Poisson branch.
    #[default]
    Proof,
    /// The terminal test comes first for every code.
    PaperLiteral,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SamplerConfig {
    pub horizon: f64,
    pub nu: f64,
    /// Rate of the exponential branching-time density.
    pub rho_rate: f64,
    pub rho_tilde_lo: f64,
    pub rho_tilde_hi: f64,
    pub max_depth: usize,
    pub seed: u64,
    pub ordering: BranchOrdering,
}

impl SamplerConfig {
    /// Defaults: survival probability 0.95 over the horizon and
    /// `τ̃ ~ U[1e-5, 6]`.
    pub fn new(horizon: f64, nu: f64, seed: u64) -> Self {
        SamplerConfig {
            horizon,
            nu,
            rho_rate: -(0.95f64.ln()) / horizon,
            rho_tilde_lo: 1e-5,
            rho_tilde_hi: 6.0,
            max_depth: 1000,
            seed,
            ordering: BranchOrdering::Proof,
        }
    }

    pub fn for_model(model: &PdeSystem, seed: u64) -> Self {
        Self::new(model.horizon, model.nu, seed)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad(format!("T = {} must be positive", self.horizon));
        }
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return bad(format!("nu = {} must be positive", self.nu));
        }
        if !(self.rho_rate > 0.0 && self.rho_rate.is_finite()) {
            return bad(format!("rho_rate = {} must be positive", self.rho_rate));
        }
        if !(self.rho_tilde_lo > 0.0 && self.rho_tilde_lo < self.rho_tilde_hi && self.rho_tilde_hi.is_finite()) {
            return bad(format!(
                "need 0 < rho_tilde_lo < rho_tilde_hi, got {} and {}",
                self.rho_tilde_lo, self.rho_tilde_hi
            ));
        }
        if self.max_depth == 0 {
            return bad("max_depth must be positive".into());
        }
        Ok(())
    }

    /// `F̄(s) = P(τ > s)`.
    pub fn survival(&self, s: f64) -> f64 {
        (-self.rho_rate * s).exp()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EstimateStats {
    pub mean: f64,
    /// `None` with fewer than two samples.
    pub stderr: Option<f64>,
    pub samples: usize,
    pub aborted: usize,
}

impl EstimateStats {
    pub fn from_values(values: &[f64], aborted: usize) -> Result<Self> {
        let n = values.len();
        if n == 0 {
            return Err(Error::AllSamplesAborted(aborted));
        }
        let mean = neumaier_sum(values.iter().copied()) / n as f64;
        let stderr = (n >= 2).then(|| {
            let ss = neumaier_sum(values.iter().map(|v| (v - mean) * (v - mean)));
            (ss / (n - 1) as f64).sqrt() / (n as f64).sqrt()
        });
        Ok(EstimateStats {
            mean,
            stderr,
            samples: n,
            aborted,
        })
    }
}

/// Compensated summation; the order of `values` fixes the result.
pub fn neumaier_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// `N(y)`: `|y|² log|y|` for `d = 2`, `|y|²/(2 - d)` for `d >= 3`, with the
/// Euclidean norm and value 0 at the origin.
pub fn poisson_kernel(y: &[f64], d: usize) -> f64 {
    let r2: f64 = y.iter().map(|v| v * v).sum();
    if r2 == 0.0 {
        return 0.0;
    }
    match d {
        2 => 0.5 * r2 * r2.ln(),
        _ => r2 / (2.0 - d as f64),
    }
}

/// Why a single tree draw was discarded.
#[derive(Clone, Debug, PartialEq)]
pub enum Abort {
    Depth,
    NonFinite,
}

#[derive(Debug)]
enum SampleError {
    Abort(Abort),
    Fatal(Error),
}

impl From<Error> for SampleError {
    fn from(e: Error) -> Self {
        SampleError::Fatal(e)
    }
}

/// Shape statistics of one tree draw.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SampleTrace {
    pub nodes: usize,
    pub terminal_leaves: usize,
    pub poisson_nodes: usize,
    pub max_depth: usize,
    /// Whether the root itself took the terminal branch.
    pub root_terminal: bool,
    pub abort: Option<Abort>,
}

type Point = SmallVec<[f64; 4]>;

/// A model, its memoized mechanism and sampling parameters.
pub struct TreeSampler {
    model: Arc<PdeSystem>,
    mechanism: Arc<Mechanism>,
    cfg: SamplerConfig,
    branch_time: Exp<f64>,
}

impl TreeSampler {
    pub fn new(model: Arc<PdeSystem>, options: MechanismOptions, cfg: SamplerConfig) -> Result<Self> {
        let mechanism = Arc::new(Mechanism::new(&model, options));
        Self::with_mechanism(model, mechanism, cfg)
    }

    pub fn with_mechanism(model: Arc<PdeSystem>, mechanism: Arc<Mechanism>, cfg: SamplerConfig) -> Result<Self> {
        cfg.validate()?;
        model.validate()?;
        if (cfg.nu - model.nu).abs() > 0.0 || (cfg.horizon - model.horizon).abs() > 0.0 {
            return Err(Error::InvalidConfig("sampler nu/T differ from the model".into()));
        }
        let branch_time = Exp::new(cfg.rho_rate).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        Ok(TreeSampler {
            model,
            mechanism,
            cfg,
            branch_time,
        })
    }

    pub fn model(&self) -> &Arc<PdeSystem> {
        &self.model
    }

    pub fn mechanism(&self) -> &Arc<Mechanism> {
        &self.mechanism
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.cfg
    }

    /// One draw of `𝓗(t, x, c)`. `Ok(None)` marks an aborted draw.
    pub fn sample<R: Rng>(&self, t: f64, x: &[f64], c: &Code, rng: &mut R) -> Result<Option<f64>> {
        self.sample_traced(t, x, c, rng).map(|(v, _)| v)
    }

    pub fn sample_traced<R: Rng>(
        &self,
        t: f64,
        x: &[f64],
        c: &Code,
        rng: &mut R,
    ) -> Result<(Option<f64>, SampleTrace)> {
        if !(0.0..=self.cfg.horizon).contains(&t) {
            return Err(Error::InvalidConfig(format!("t = {t} outside [0, {}]", self.cfg.horizon)));
        }
        if x.len() != self.model.d() {
            return Err(Error::DimensionMismatch {
                expected: self.model.d(),
                got: x.len(),
            });
        }
        let mut trace = SampleTrace::default();
        match self.node(t, x, c, 0, rng, &mut trace) {
            Ok(v) => Ok((Some(v), trace)),
            Err(SampleError::Abort(a)) => {
                trace.abort = Some(a);
                Ok((None, trace))
            }
            Err(SampleError::Fatal(e)) => Err(e),
        }
    }

    fn gaussian_step<R: Rng>(&self, x: &[f64], var: f64, rng: &mut R) -> Point {
        let sd = var.sqrt();
        x.iter()
            .map(|&xi| {
                let z: f64 = StandardNormal.sample(rng);
                xi + sd * z
            })
            .collect()
    }

    fn node<R: Rng>(
        &self,
        t: f64,
        x: &[f64],
        c: &Code,
        depth: usize,
        rng: &mut R,
        trace: &mut SampleTrace,
    ) -> Result<f64, SampleError> {
        if depth > self.cfg.max_depth {
            return Err(SampleError::Abort(Abort::Depth));
        }
        trace.nodes += 1;
        trace.max_depth = trace.max_depth.max(depth);
        let horizon = self.cfg.horizon;

        let poisson = c.is_poisson();
        let tau = if poisson && self.cfg.ordering == BranchOrdering::Proof {
            None
        } else {
            Some(self.branch_time.sample(rng))
        };

        if let Some(tau) = tau {
            if t + tau > horizon || t >= horizon {
                if depth == 0 {
                    trace.root_terminal = true;
                }
                trace.terminal_leaves += 1;
                let s = horizon - t;
                let xt = self.gaussian_step(x, 2.0 * self.cfg.nu * s, rng);
                let v = eval_code(c, &self.model, &self.model.terminal, horizon, &xt)? / self.cfg.survival(s);
                return finite(v);
            }
        }

        let set = self.mechanism.unit_set(c)?;
        if set.is_empty() {
            return Ok(0.0);
        }
        let r = set.len();
        let seq = &set[rng.random_range(0..r)];

        let (weight, t_child, x_child) = if poisson {
            trace.poisson_nodes += 1;
            let (lo, hi) = (self.cfg.rho_tilde_lo, self.cfg.rho_tilde_hi);
            let s = rng.random_range(lo..hi);
            let w = self.gaussian_step(&vec![0.0; x.len()], s, rng);
            let kernel = poisson_kernel(&w, x.len());
            let xc: Point = x.iter().zip(&w).map(|(a, b)| a + b).collect();
            (c.coef() * kernel * r as f64 * (hi - lo) / (2.0 * s), t, xc)
        } else {
            let tau = tau.expect("diffusive nodes draw a branching time");
            let density = self.cfg.rho_rate * (-self.cfg.rho_rate * tau).exp();
            let xc = self.gaussian_step(x, 2.0 * self.cfg.nu * tau, rng);
            (c.coef() * r as f64 / density, t + tau, xc)
        };
        if weight == 0.0 {
            return Ok(0.0);
        }
        let mut acc = finite(weight)?;
        for child in seq.iter() {
            if let Code::FDeriv { lambda, fidx, .. } = child {
                if self.model.nonlinearity.vanishes(*fidx, lambda) {
                    return Ok(0.0);
                }
            }
        }
        for child in seq.iter() {
            let v = self.node(t_child, &x_child, child, depth + 1, rng, trace)?;
            if v == 0.0 {
                return Ok(0.0);
            }
            acc = finite(acc * v)?;
        }
        Ok(acc)
    }

    /// Mean and standard error of `m` draws of `𝓗(t, x, c)` on streams
    /// `stream0 .. stream0 + m`; identical for any worker count.
    pub fn estimate_code(&self, t: f64, x: &[f64], c: &Code, m: usize, stream0: u64) -> Result<EstimateStats> {
        if m == 0 {
            return Err(Error::InvalidConfig("sample count must be at least 1".into()));
        }
        let draws: Vec<Option<f64>> = (0..m)
            .into_par_iter()
            .map(|k| {
                let mut rng = sample_rng(self.cfg.seed, stream0 + k as u64);
                self.sample(t, x, c, &mut rng)
            })
            .collect::<Result<_>>()?;
        let values: Vec<f64> = draws.iter().flatten().copied().collect();
        EstimateStats::from_values(&values, m - values.len())
    }

    /// Estimate of `u_i(t, x)` from `m` draws with code `Id_i`.
    pub fn mc_estimate(&self, t: f64, x: &[f64], i: usize, m: usize) -> Result<EstimateStats> {
        self.estimate_code(t, x, &Code::identity(i), m, 0)
    }
}

fn finite(v: f64) -> Result<f64, SampleError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(SampleError::Abort(Abort::NonFinite))
    }
}

/// Free-function form of [`TreeSampler::mc_estimate`].
pub fn mc_estimate(
    model: Arc<PdeSystem>,
    cfg: SamplerConfig,
    t: f64,
    x: &[f64],
    i: usize,
    m: usize,
) -> Result<EstimateStats> {
    TreeSampler::new(model, MechanismOptions::default(), cfg)?.mc_estimate(t, x, i, m)
}
