//! Self-checks against independent oracles: the Faà di Bruno expansion
//! against Taylor-jet composition, the Poisson-kernel integral against its
//! Gamma-function closed form, divergence of the benchmark velocities and
//! network input gradients against finite differences.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::Rng;
use serde::Serialize;
use statrs::function::gamma::gamma;

use crate::codes::{fdb_enumerate, Code, CodeSeq};
use crate::error::Result;
use crate::flows::{rotating_case_one, rotating_case_two, rotating_terminal, ExactFlow};
use crate::model::{Slots, TerminalCondition};
use crate::multiindex::MultiIndex;
use crate::network::Network;
use crate::sampler::sample_rng;
use crate::taylor::Jet;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    /// Largest observed error in the check's own measure.
    pub worst: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &str, worst: f64, tolerance: f64, detail: String) -> Self {
        CheckOutcome {
            name: name.to_string(),
            passed: worst <= tolerance,
            worst,
            tolerance,
            detail,
        }
    }
}

/// Scales the coefficient of the first expansion term of one `(μ, n)` case,
/// to confirm that the oracle comparison notices.
#[derive(Clone, Debug, PartialEq)]
pub struct FdbPerturbation {
    pub mu: MultiIndex,
    pub n: usize,
    pub factor: f64,
}

/// `f(y) = exp(c·y) + sin(e·y) + g ∏ y_r^{p_r}`.
struct TestF {
    c: Vec<f64>,
    e: Vec<f64>,
    g: f64,
    p: Vec<u32>,
}

impl TestF {
    fn derivative(&self, lambda: &MultiIndex, y: &[f64]) -> f64 {
        let lin = |w: &[f64]| w.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
        let pow = |w: &[f64]| {
            w.iter()
                .zip(lambda.entries())
                .map(|(a, &k)| a.powi(k as i32))
                .product::<f64>()
        };
        let order = lambda.norm() as f64;
        let mut mono = self.g;
        for (r, &p) in self.p.iter().enumerate() {
            let k = lambda.get(r) as u32;
            if k > p {
                mono = 0.0;
                break;
            }
            let falling: f64 = (p - k + 1..=p).map(|v| v as f64).product();
            mono *= falling * y[r].powi((p - k) as i32);
        }
        pow(&self.c) * lin(&self.c).exp() + pow(&self.e) * (lin(&self.e) + order * PI / 2.0).sin() + mono
    }

    fn compose(&self, v: &[Jet]) -> Jet {
        let lin = |w: &[f64]| {
            v.iter()
                .zip(w)
                .map(|(j, &a)| j.scale(a))
                .reduce(|a, b| &a + &b)
                .expect("n >= 1")
        };
        let mut mono = Jet::constant(v[0].dim(), v[0].order(), self.g);
        for (j, &p) in v.iter().zip(&self.p) {
            mono = &mono * &j.powi(p);
        }
        &(&lin(&self.c).exp() + &lin(&self.e).sin()) + &mono
    }
}

/// A random cubic polynomial in `d` variables as a jet at `x0`.
fn random_poly<R: Rng>(rng: &mut R, x0: &[f64], order: usize) -> Jet {
    let d = x0.len();
    let vars: Vec<Jet> = (0..d).map(|k| Jet::variable(d, order, k, x0[k])).collect();
    let mut out = Jet::constant(d, order, rng.random_range(-1.0..1.0));
    for deg in 1..=3u32 {
        for alpha in MultiIndex::with_norm(d, deg) {
            let mut term = Jet::constant(d, order, rng.random_range(-1.0..1.0));
            for (k, &a) in alpha.entries().iter().enumerate() {
                term = &term * &vars[k].powi(a as u32);
            }
            out = &out + &term;
        }
    }
    out
}

fn random_mu<R: Rng>(rng: &mut R, d: usize) -> MultiIndex {
    loop {
        let entries: Vec<u16> = (0..d).map(|_| rng.random_range(0..=3)).collect();
        let mu = MultiIndex::from_slice(&entries);
        if (1..=3).contains(&mu.norm()) {
            return mu;
        }
    }
}

/// `∂_μ f(v(x_0))` assembled from `fdb_enumerate` against the same
/// derivative read off the composed Taylor jet, over `cases` random
/// `(f, v, μ)` with `d, n <= 2`, `|μ| <= 3`; relative error with a floor of 1
/// on the denominator.
pub fn fdb_oracle_suite(cases: usize, seed: u64, perturb: Option<&FdbPerturbation>) -> Result<CheckOutcome> {
    let mut rng = sample_rng(seed, 0);
    let mut worst = 0.0f64;
    let mut worst_case = String::new();
    let mut failures = Vec::new();
    for _ in 0..cases {
        let d = rng.random_range(1..=2usize);
        let n = rng.random_range(1..=2usize);
        let mu = random_mu(&mut rng, d);
        let order = mu.norm() as usize;
        let x0: Vec<f64> = (0..d).map(|_| rng.random_range(-0.5..0.5)).collect();
        let v: Vec<Jet> = (0..n).map(|_| random_poly(&mut rng, &x0, order)).collect();
        let f = TestF {
            c: (0..n).map(|_| rng.random_range(-0.8..0.8)).collect(),
            e: (0..n).map(|_| rng.random_range(-1.5..1.5)).collect(),
            g: rng.random_range(-1.0..1.0),
            p: (0..n).map(|_| rng.random_range(0..=3)).collect(),
        };
        // slot r carries v_r itself, reported as component r + 1
        let slots = Slots {
            d,
            n,
            q: 0,
            alpha: vec![MultiIndex::zeros(d); n],
            beta: (1..=n).collect(),
        };
        let mut seqs = fdb_enumerate(&mu, 1, &[], &slots)?;
        if let Some(p) = perturb.filter(|p| p.mu == mu && p.n == n) {
            let mut codes = seqs[0].to_vec();
            if let Code::FDeriv { coef, .. } = &mut codes[0] {
                *coef *= p.factor;
            }
            seqs[0] = CodeSeq::new(codes);
        }
        let y0: Vec<f64> = v.iter().map(Jet::value).collect();
        let mut assembled = 0.0;
        for seq in &seqs {
            let mut term = 1.0;
            for c in seq.iter() {
                term *= match c {
                    Code::FDeriv { coef, lambda, .. } => coef * f.derivative(lambda, &y0),
                    Code::UDeriv { coef, mu, i } => coef * v[i - 1].derivative(mu),
                    other => unreachable!("fdb produced {other:?}"),
                };
            }
            assembled += term;
        }
        let oracle = f.compose(&v).derivative(&mu);
        let rel = (assembled - oracle).abs() / oracle.abs().max(1.0);
        let case = format!("(mu={mu}, n={n}, d={d})");
        if rel > worst {
            worst = rel;
            worst_case = case.clone();
        }
        if rel > 1e-6 {
            failures.push(format!("{case}: fdb {assembled} vs oracle {oracle}"));
        }
    }
    let detail = if failures.is_empty() {
        format!("{cases} cases, worst {worst:.3e} at {worst_case}")
    } else {
        format!("{} of {cases} cases failed; first {}", failures.len(), failures[0])
    };
    Ok(CheckOutcome::new("fdb-oracle", worst, 1e-6, detail))
}

/// Adaptive Simpson quadrature of `g` on `[a, b]`.
pub fn adaptive_simpson(g: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(g: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (g(lm), g(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        rec(g, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(g, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let (fa, fb, fm) = (g(a), g(b), g(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(g, a, b, fa, fm, fb, whole, tol, 50)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KernelValue {
    pub d: usize,
    pub r: f64,
    pub quadrature: f64,
    pub closed_form: f64,
    pub rel_error: f64,
}

/// `∫_0^∞ (2πs)^{-d/2} e^{-r²/(2s)} (2s)⁻¹ ds` by quadrature in `v = ln s`,
/// against `Γ(d/2) / (2π^{d/2} r^d)`.
pub fn kernel_identity(d: usize, r: f64) -> KernelValue {
    let df = d as f64;
    let integrand = |v: f64| 0.5 * (2.0 * PI).powf(-df / 2.0) * (-df * v / 2.0 - r * r * (-v).exp() / 2.0).exp();
    let peak = (r * r / df).ln();
    let quadrature = adaptive_simpson(&integrand, peak - 8.0, peak + 80.0, 1e-15);
    let closed_form = gamma(df / 2.0) / (2.0 * PI.powf(df / 2.0) * r.powi(d as i32));
    KernelValue {
        d,
        r,
        quadrature,
        closed_form,
        rel_error: (quadrature - closed_form).abs() / closed_form,
    }
}

pub fn kernel_suite() -> (CheckOutcome, Vec<KernelValue>) {
    let values: Vec<KernelValue> = [2, 3]
        .iter()
        .flat_map(|&d| [0.5, 1.0, 2.0].map(|r| kernel_identity(d, r)))
        .collect();
    let worst = values.iter().map(|v| v.rel_error).fold(0.0, f64::max);
    let unit = values.iter().find(|v| v.d == 2 && v.r == 1.0).expect("d=2, r=1 case");
    let detail = format!("d=2 r=1 kernel {:.7} (closed form {:.7})", unit.quadrature, unit.closed_form);
    (CheckOutcome::new("poisson-kernel", worst, 1e-6, detail), values)
}

fn terminal_divergence(tc: &TerminalCondition, x: &[f64]) -> Result<f64> {
    let d = tc.dim();
    (0..d).try_fold(0.0, |acc, k| Ok(acc + tc.velocity(k + 1).derivative(&MultiIndex::unit(d, k), x)?))
}

/// Largest `|Σ_i ∂_i u_i|` for Taylor-Green and ABC at random space-time
/// points and for both rotating terminal fields on a 50 × 50 grid of
/// `[-2, 2]²`.
pub fn divergence_suite(seed: u64) -> Result<CheckOutcome> {
    let mut rng = sample_rng(seed, 0);
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for flow in [ExactFlow::taylor_green(1.0, 0.25), ExactFlow::abc(0.01, 0.5, 0.5, 0.5, 0.7)] {
        let d = flow.dim();
        let mut w = 0.0f64;
        for _ in 0..100 {
            let t = rng.random_range(0.0..flow.horizon);
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
            w = w.max(crate::flows::divergence(&flow, t, &x)?.abs());
        }
        parts.push(format!("{:?} {w:.1e}", flow.kind));
        worst = worst.max(w);
    }
    for (name, (f, g)) in [("rotating-1", rotating_case_one()), ("rotating-2", rotating_case_two())] {
        let tc = rotating_terminal(f, g);
        let mut w = 0.0f64;
        for a in 0..50 {
            for b in 0..50 {
                let x = [-2.0 + 4.0 * a as f64 / 49.0, -2.0 + 4.0 * b as f64 / 49.0];
                w = w.max(terminal_divergence(&tc, &x)?.abs());
            }
        }
        parts.push(format!("{name} {w:.1e}"));
        worst = worst.max(w);
    }
    Ok(CheckOutcome::new("divergence-free", worst, 1e-8, parts.join(", ")))
}

/// Input Jacobians of a randomized `3 → 2`, `l = 3`, `m = 100` network
/// against central differences with step `1e-4` at 100 random inputs;
/// relative Frobenius error per input.
pub fn gradient_suite(seed: u64) -> Result<CheckOutcome> {
    let mut rng = sample_rng(seed, 0);
    let mut net = Network::new(3, 2, 3, 100, &mut rng)?;
    for bn in &mut net.norms {
        bn.gamma.mapv_inplace(|_| rng.random_range(0.5..1.5));
        bn.beta.mapv_inplace(|_| rng.random_range(-0.3..0.3));
        bn.running_mean.mapv_inplace(|_| rng.random_range(-0.3..0.3));
        bn.running_var.mapv_inplace(|_| rng.random_range(0.5..2.0));
    }
    let x = Array2::from_shape_fn((100, 3), |_| rng.random_range(-2.0..2.0));
    let jac = net.input_jacobian(x.view())?;
    let h = 1e-4;
    let mut worst = 0.0f64;
    for r in 0..100 {
        let (mut num, mut den) = (0.0, 0.0);
        for j in 0..3 {
            let mut plus = x.row(r).to_vec();
            let mut minus = plus.clone();
            plus[j] += h;
            minus[j] -= h;
            let (fp, fm) = (net.forward_point(&plus)?, net.forward_point(&minus)?);
            for i in 0..2 {
                let fd = (fp[i] - fm[i]) / (2.0 * h);
                num += (jac[[r, i, j]] - fd).powi(2);
                den += fd * fd;
            }
        }
        worst = worst.max((num / den).sqrt());
    }
    Ok(CheckOutcome::new("input-gradient", worst, 1e-4, "100 inputs, 3 -> 2, l=3, m=100".into()))
}

#[derive(Clone, Debug, Serialize)]
pub struct SelfTestReport {
    pub checks: Vec<CheckOutcome>,
    pub kernel_values: Vec<KernelValue>,
}

impl SelfTestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

pub fn run_selftest(seed: u64, perturb: Option<&FdbPerturbation>) -> Result<SelfTestReport> {
    let (kernel, kernel_values) = kernel_suite();
    Ok(SelfTestReport {
        checks: vec![
            fdb_oracle_suite(200, seed, perturb)?,
            kernel,
            divergence_suite(seed)?,
            gradient_suite(seed)?,
        ],
        kernel_values,
    })
}
