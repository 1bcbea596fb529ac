//! Every mechanism set must satisfy the differential identity it encodes:
//! `(∂_t + νΔ) c(u) = -Σ_seq ∏ c'(u)` for parabolic codes and
//! `Δ c(u) = Σ_seq ∏ c'(u)` for Poisson codes, on any exact solution.
//! Derivatives of `c(u)` are taken by central differences.
//!
//! Taylor-Green and ABC have `f_i(u) = 0` identically (the pressure gradient
//! balances advection), so the steady Kovasznay flow carries the weight.

use std::collections::HashSet;
use std::sync::Arc;

use branchpde_core::codes::{eval_code, Code, Mechanism, MechanismOptions};
use branchpde_core::flows::ExactFlow;
use branchpde_core::model::{navier_stokes_model, Nonlinearity, PdeSystem, Slots};
use branchpde_core::oracle::DerivativeOracle;
use branchpde_core::{MultiIndex, Result};

/// `c e^{a x_1} T(b x_2)` with `T` one of 1, cos, sin.
#[derive(Clone, Copy)]
struct ExpTrig {
    c: f64,
    a: f64,
    b: f64,
    kind: u8,
}

impl ExpTrig {
    fn deriv(&self, mu: &MultiIndex, x: &[f64]) -> f64 {
        let (m, n) = (mu.get(0) as i32, mu.get(1));
        let trig = match self.kind {
            0 => (n == 0) as u8 as f64,
            1 => self.b.powi(n as i32) * (self.b * x[1] + n as f64 * std::f64::consts::FRAC_PI_2).cos(),
            _ => self.b.powi(n as i32) * (self.b * x[1] + n as f64 * std::f64::consts::FRAC_PI_2).sin(),
        };
        self.c * self.a.powi(m) * (self.a * x[0]).exp() * trig
    }
}

/// Steady Kovasznay flow with wavenumber `k`.
struct Kovasznay {
    nu: f64,
    comps: Vec<Vec<ExpTrig>>,
}

impl Kovasznay {
    fn new(nu: f64, k: f64) -> Self {
        let lam = 0.5 / nu - (0.25 / (nu * nu) + k * k).sqrt();
        let t = |c, a, b, kind| ExpTrig { c, a, b, kind };
        Kovasznay {
            nu,
            comps: vec![
                vec![t(0.5, 0.0, 0.0, 0), t(-0.5, 2.0 * lam, 0.0, 0)],
                vec![t(1.0, 0.0, 0.0, 0), t(-1.0, lam, k, 1)],
                vec![t(lam / k, lam, k, 2)],
            ],
        }
    }
}

impl DerivativeOracle for Kovasznay {
    fn dim(&self) -> usize {
        2
    }

    fn derivative(&self, i: usize, mu: &MultiIndex, _t: f64, x: &[f64]) -> Result<f64> {
        Ok(self.comps[i].iter().map(|term| term.deriv(mu, x)).sum())
    }

    fn heat_pressure(&self, mu: &MultiIndex, t: f64, x: &[f64]) -> Result<f64> {
        let lap = self.derivative(0, &mu.bump(0).bump(0), t, x)? + self.derivative(0, &mu.bump(1).bump(1), t, x)?;
        Ok(self.nu * lap)
    }
}

fn code_value(c: &Code, model: &PdeSystem, flow: &dyn DerivativeOracle, t: f64, x: &[f64]) -> f64 {
    eval_code(c, model, flow, t, x).unwrap()
}

fn generator(c: &Code, model: &PdeSystem, flow: &dyn DerivativeOracle, t: f64, x: &[f64]) -> f64 {
    let h = 2e-3;
    let f = |t: f64, x: &[f64]| code_value(c, model, flow, t, x);
    let mut lap = 0.0;
    for k in 0..x.len() {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[k] += h;
        xm[k] -= h;
        lap += (f(t, &xp) - 2.0 * f(t, x) + f(t, &xm)) / (h * h);
    }
    if c.is_poisson() {
        lap
    } else {
        let dt = (f(t + h, x) - f(t - h, x)) / (2.0 * h);
        -(dt + model.nu * lap)
    }
}

fn check(model: &PdeSystem, flow: &dyn DerivativeOracle, roots: Vec<Code>, depth: usize, points: &[(f64, Vec<f64>)]) -> usize {
    let mech = Mechanism::new(model, MechanismOptions::default());
    let mut seen = HashSet::new();
    let mut frontier = roots;
    let mut checked = 0;
    for _ in 0..depth {
        let mut next = Vec::new();
        for c in frontier {
            let unit = match &c {
                Code::FDeriv { lambda, fidx, .. } => Code::f(1.0, lambda.clone(), *fidx),
                Code::UDeriv { mu, i, .. } => Code::u(1.0, mu.clone(), *i),
                other => other.clone(),
            };
            if !seen.insert(format!("{unit:?}")) {
                continue;
            }
            let set = mech.mechanism(&unit).unwrap();
            for (t, x) in points {
                let mut total = 0.0;
                let mut scale = 1.0f64;
                for seq in &set {
                    let prod: f64 = seq.iter().map(|child| code_value(child, model, flow, *t, x)).product();
                    total += prod;
                    scale = scale.max(prod.abs());
                }
                let fd = generator(&unit, model, flow, *t, x);
                assert!(
                    (fd - total).abs() <= 2e-4 * scale,
                    "identity fails for {unit:?} at t={t} x={x:?}: fd={fd} mechanism={total}"
                );
            }
            checked += 1;
            for seq in set.iter() {
                for child in seq.iter() {
                    child.validate(&model.slots).unwrap();
                    next.push(child.clone());
                }
            }
        }
        frontier = next;
    }
    checked
}

#[test]
fn kovasznay_mechanism_identities() {
    let flow = Kovasznay::new(1.0, 1.0);
    let model = navier_stokes_model(2, 1.0, 1.0, ExactFlow::taylor_green(1.0, 1.0).terminal()).unwrap();
    // the flow is an exact solution with nonvanishing nonlinearities
    let zero = MultiIndex::zeros(8);
    for x in [[0.2, 0.4], [-0.3, 1.7]] {
        for i in 1..=2 {
            let fi = code_value(&Code::f(1.0, zero.clone(), i), &model, &flow, 0.0, &x);
            let lap: f64 = (0..2)
                .map(|k| flow.derivative(i, &MultiIndex::unit(2, k).bump(k), 0.0, &x).unwrap())
                .sum();
            assert!((lap + fi).abs() < 1e-12);
            assert!(fi.abs() > 1e-2);
        }
        let f0 = code_value(&Code::f(1.0, zero.clone(), 0), &model, &flow, 0.0, &x);
        let lap0: f64 = (0..2)
            .map(|k| flow.derivative(0, &MultiIndex::unit(2, k).bump(k), 0.0, &x).unwrap())
            .sum();
        assert!((lap0 - f0).abs() < 1e-12);
    }
    let points = vec![(0.5, vec![0.2, 0.4]), (0.5, vec![-0.3, 1.7])];
    let roots = (0..=2).map(Code::identity).collect();
    let n = check(&model, &flow, roots, 3, &points);
    assert!(n > 50, "only {n} codes visited");
    let heat = (0..2).map(|k| Code::heat(MultiIndex::unit(2, k))).collect();
    check(&model, &flow, heat, 2, &points[..1]);
    // second order exercises the inner Leibniz binomials
    let heat2 = vec![
        Code::heat(MultiIndex::from_slice(&[1, 1])),
        Code::heat(MultiIndex::from_slice(&[0, 2])),
    ];
    check(&model, &flow, heat2, 1, &points);
}

#[test]
fn taylor_green_mechanism_identities() {
    let flow = ExactFlow::taylor_green(1.0, 0.25);
    let model = navier_stokes_model(2, 1.0, 0.25, flow.terminal()).unwrap();
    let points = vec![(0.1, vec![0.3, 1.2]), (0.2, vec![-1.1, 2.5])];
    let roots = (0..=2).map(Code::identity).collect();
    let n = check(&model, &flow, roots, 3, &points);
    assert!(n > 20, "only {n} codes visited");
}

#[test]
fn abc_mechanism_identities() {
    let flow = ExactFlow::abc(0.3, 0.5, 0.7, 0.9, 1.0);
    let model = navier_stokes_model(3, 0.3, 1.0, flow.terminal()).unwrap();
    let points = vec![(0.4, vec![0.3, 1.2, -0.7])];
    let roots = (0..=3).map(Code::identity).collect();
    check(&model, &flow, roots, 2, &points);
}

#[test]
fn heat_operator_on_pressure_derivatives() {
    // HeatOp(μ) with |μ| = 1 is where both Leibniz and Faà di Bruno meet
    let flow = ExactFlow::abc(0.3, 0.5, 0.7, 0.9, 1.0);
    let model = Arc::new(navier_stokes_model(3, 0.3, 1.0, flow.terminal()).unwrap());
    let roots = (0..3).map(|k| Code::heat(MultiIndex::unit(3, k))).collect();
    check(&model, &flow, roots, 1, &[(0.2, vec![1.0, -0.4, 2.2])]);
}

#[test]
fn navier_stokes_residuals_vanish_on_exact_flows() {
    let cases = [
        ExactFlow::taylor_green(1.0, 0.25),
        ExactFlow::abc(0.01, 0.5, 0.5, 0.5, 0.7),
    ];
    for flow in cases {
        let d = flow.dim();
        let model = navier_stokes_model(d, flow.nu, flow.horizon, flow.terminal()).unwrap();
        let zero = MultiIndex::zeros(d);
        for p in 0..100 {
            let t = flow.horizon * ((p as f64 * 0.618).fract());
            let x: Vec<f64> = (0..d).map(|k| 6.0 * ((p * (k + 3)) as f64 * 0.377).fract()).collect();
            for i in 1..=d {
                let fi = code_value(&Code::f(1.0, MultiIndex::zeros(model.slots.n), i), &model, &flow, t, &x);
                let adv: f64 = (1..=d)
                    .map(|j| flow.eval(j, &zero, t, &x) * flow.eval(i, &MultiIndex::unit(d, j - 1), t, &x))
                    .sum();
                let expect = -flow.eval(0, &MultiIndex::unit(d, i - 1), t, &x) - adv;
                assert!((fi - expect).abs() < 1e-10);
                // ∂_t u_i = 2ν or ν times u_i by construction of the decay
                let h = 1e-5;
                let dt = (flow.eval(i, &zero, t + h, &x) - flow.eval(i, &zero, t - h, &x)) / (2.0 * h);
                let lap: f64 = (0..d).map(|k| flow.eval(i, &MultiIndex::unit(d, k).bump(k), t, &x)).sum();
                assert!((dt + flow.nu * lap + fi).abs() < 1e-8, "momentum residual");
            }
            let f0 = code_value(&Code::f(1.0, MultiIndex::zeros(model.slots.n), 0), &model, &flow, t, &x);
            let mut grads = 0.0;
            for i in 1..=d {
                for j in 1..=d {
                    grads += flow.eval(i, &MultiIndex::unit(d, j - 1), t, &x) * flow.eval(j, &MultiIndex::unit(d, i - 1), t, &x);
                }
            }
            assert!((f0 + grads).abs() < 1e-10);
            let lap0: f64 = (0..d).map(|k| flow.eval(0, &MultiIndex::unit(d, k).bump(k), t, &x)).sum();
            assert!((lap0 - f0).abs() < 1e-10, "pressure Poisson residual");
        }
    }
}

/// `d = 1`, slots `(∂u_0, u_1)`, `f_0 = y³`, `f_1 = (a + ν) y`, solved by
/// `u_1 = cos x e^{a(T-t)}` and `u_0 = -(3 cos x + cos 3x / 9) e^{3a(T-t)} / 4`.
struct Cubic {
    rate: f64,
}

impl Nonlinearity for Cubic {
    fn eval(&self, fidx: usize, lambda: &MultiIndex, args: &[f64]) -> f64 {
        let (l0, l1) = (lambda.get(0), lambda.get(1));
        let y = args[1];
        match (fidx, l0, l1) {
            (_, 1.., _) => 0.0,
            (0, 0, 0) => y * y * y,
            (0, 0, 1) => 3.0 * y * y,
            (0, 0, 2) => 6.0 * y,
            (0, 0, 3) => 6.0,
            (1, 0, 0) => self.rate * y,
            (1, 0, 1) => self.rate,
            _ => 0.0,
        }
    }

    fn vanishes(&self, fidx: usize, lambda: &MultiIndex) -> bool {
        lambda.get(0) > 0 || lambda.get(1) > if fidx == 0 { 3 } else { 1 }
    }
}

/// `Σ c cos(k x + phase) e^{r(T-t)}` per component.
struct CubicSolution {
    nu: f64,
    horizon: f64,
    comps: Vec<Vec<(f64, f64, f64)>>,
    rates: Vec<f64>,
}

impl DerivativeOracle for CubicSolution {
    fn dim(&self) -> usize {
        1
    }

    fn derivative(&self, i: usize, mu: &MultiIndex, t: f64, x: &[f64]) -> Result<f64> {
        let m = mu.get(0) as i32;
        let decay = (self.rates[i] * (self.horizon - t)).exp();
        Ok(decay
            * self.comps[i]
                .iter()
                .map(|&(c, k, ph)| c * k.powi(m) * (k * x[0] + ph + m as f64 * std::f64::consts::FRAC_PI_2).cos())
                .sum::<f64>())
    }

    fn heat_pressure(&self, mu: &MultiIndex, t: f64, x: &[f64]) -> Result<f64> {
        Ok(-self.rates[0] * self.derivative(0, mu, t, x)? + self.nu * self.derivative(0, &mu.bump(0).bump(0), t, x)?)
    }
}

#[test]
fn non_quadratic_poisson_source() {
    let (a, nu, horizon) = (0.3, 0.7, 1.0);
    let slots = Slots {
        d: 1,
        n: 2,
        q: 1,
        alpha: vec![MultiIndex::unit(1, 0), MultiIndex::zeros(1)],
        beta: vec![0, 1],
    };
    let model = PdeSystem {
        name: "cubic".into(),
        slots,
        nu,
        horizon,
        nonlinearity: Arc::new(Cubic { rate: a + nu }),
        terminal: branchpde_core::flows::cos_terminal(),
    };
    model.validate().unwrap();
    let flow = CubicSolution {
        nu,
        horizon,
        comps: vec![vec![(-0.75, 1.0, 0.0), (-1.0 / 36.0, 3.0, 0.0)], vec![(1.0, 1.0, 0.0)]],
        rates: vec![3.0 * a, a],
    };
    let points = vec![(0.3, vec![0.4]), (0.8, vec![2.1])];
    let roots = vec![
        Code::identity(0),
        Code::identity(1),
        Code::heat(MultiIndex::from_slice(&[2])),
        Code::heat(MultiIndex::from_slice(&[3])),
    ];
    let n = check(&model, &flow, roots, 3, &points);
    assert!(n > 10);
}
