//! Closed-form benchmark flows with derivative oracles of every order, and
//! the rotating terminal conditions.

use std::f64::consts::FRAC_PI_2;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::{PressureKind, TerminalCondition};
use crate::multiindex::MultiIndex;
use crate::oracle::{DerivativeOracle, SpatialField};
use crate::taylor::Jet;

#[derive(Clone, Copy, Debug, PartialEq)]
enum Trig {
    One,
    Sin(f64),
    Cos(f64),
}

impl Trig {
    fn deriv(self, k: u16, x: f64) -> f64 {
        let phase = k as f64 * FRAC_PI_2;
        match self {
            Trig::One => (k == 0) as u8 as f64,
            Trig::Sin(w) => w.powi(k as i32) * (w * x + phase).sin(),
            Trig::Cos(w) => w.powi(k as i32) * (w * x + phase).cos(),
        }
    }
}

/// `coef · ∏_k trig_k(x_k)`.
#[derive(Clone, Debug, PartialEq)]
struct TrigTerm {
    coef: f64,
    factors: Vec<Trig>,
}

impl TrigTerm {
    fn new(d: usize, coef: f64, factors: &[(usize, Trig)]) -> Self {
        let mut f = vec![Trig::One; d];
        for &(k, t) in factors {
            f[k] = t;
        }
        TrigTerm { coef, factors: f }
    }

    fn deriv(&self, mu: &MultiIndex, x: &[f64]) -> f64 {
        let mut v = self.coef;
        for (k, t) in self.factors.iter().enumerate() {
            v *= t.deriv(mu.get(k), x[k]);
            if v == 0.0 {
                break;
            }
        }
        v
    }
}

/// `e^{-rate (T - t)} Σ terms`.
#[derive(Clone, Debug, PartialEq)]
struct Component {
    rate: f64,
    terms: Vec<TrigTerm>,
}

impl Component {
    fn deriv(&self, horizon: f64, mu: &MultiIndex, t: f64, x: &[f64]) -> f64 {
        let decay = (-self.rate * (horizon - t)).exp();
        decay * self.terms.iter().map(|term| term.deriv(mu, x)).sum::<f64>()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum FlowKind {
    TaylorGreen,
    Abc { a: f64, b: f64, c: f64 },
    SemilinearLinear { a: f64 },
}

/// An exact solution with its pressure (constant fixed at 0).
#[derive(Clone, Debug, PartialEq)]
pub struct ExactFlow {
    pub kind: FlowKind,
    pub nu: f64,
    pub horizon: f64,
    d: usize,
    /// Index 0 is the pressure; empty terms when there is none.
    components: Vec<Component>,
}

impl ExactFlow {
    /// `u_1 = -cos x_1 sin x_2 e^{-2ν(T-t)}`, `u_2 = sin x_1 cos x_2 e^{-2ν(T-t)}`,
    /// `u_0 = -¼(cos 2x_1 + cos 2x_2) e^{-4ν(T-t)}`.
    pub fn taylor_green(nu: f64, horizon: f64) -> Self {
        let d = 2;
        let p = Component {
            rate: 4.0 * nu,
            terms: vec![
                TrigTerm::new(d, -0.25, &[(0, Trig::Cos(2.0))]),
                TrigTerm::new(d, -0.25, &[(1, Trig::Cos(2.0))]),
            ],
        };
        let u1 = Component {
            rate: 2.0 * nu,
            terms: vec![TrigTerm::new(d, -1.0, &[(0, Trig::Cos(1.0)), (1, Trig::Sin(1.0))])],
        };
        let u2 = Component {
            rate: 2.0 * nu,
            terms: vec![TrigTerm::new(d, 1.0, &[(0, Trig::Sin(1.0)), (1, Trig::Cos(1.0))])],
        };
        ExactFlow {
            kind: FlowKind::TaylorGreen,
            nu,
            horizon,
            d,
            components: vec![p, u1, u2],
        }
    }

    /// The Arnold-Beltrami-Childress flow with decay `e^{-ν(T-t)}`.
    pub fn abc(nu: f64, a: f64, b: f64, c: f64, horizon: f64) -> Self {
        let d = 3;
        let (s, co) = (Trig::Sin(1.0), Trig::Cos(1.0));
        let p = Component {
            rate: 2.0 * nu,
            terms: vec![
                TrigTerm::new(d, -a * c, &[(2, s), (1, co)]),
                TrigTerm::new(d, -b * a, &[(0, s), (2, co)]),
                TrigTerm::new(d, -c * b, &[(1, s), (0, co)]),
            ],
        };
        let u = |t1: (f64, usize, Trig), t2: (f64, usize, Trig)| Component {
            rate: nu,
            terms: vec![
                TrigTerm::new(d, t1.0, &[(t1.1, t1.2)]),
                TrigTerm::new(d, t2.0, &[(t2.1, t2.2)]),
            ],
        };
        ExactFlow {
            kind: FlowKind::Abc { a, b, c },
            nu,
            horizon,
            d,
            components: vec![
                p,
                u((a, 2, s), (c, 1, co)),
                u((b, 0, s), (a, 2, co)),
                u((c, 1, s), (b, 0, co)),
            ],
        }
    }

    /// `u(t, x) = e^{(a-ν)(T-t)} cos x`, the solution of the scalar
    /// equation with `f(u) = a u` and `φ = cos`.
    pub fn semilinear_linear(a: f64, nu: f64, horizon: f64) -> Self {
        ExactFlow {
            kind: FlowKind::SemilinearLinear { a },
            nu,
            horizon,
            d: 1,
            components: vec![
                Component {
                    rate: 0.0,
                    terms: Vec::new(),
                },
                Component {
                    rate: nu - a,
                    terms: vec![TrigTerm::new(1, 1.0, &[(0, Trig::Cos(1.0))])],
                },
            ],
        }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn has_pressure(&self) -> bool {
        !self.components[0].terms.is_empty()
    }

    pub fn eval(&self, i: usize, mu: &MultiIndex, t: f64, x: &[f64]) -> f64 {
        self.components[i].deriv(self.horizon, mu, t, x)
    }

    /// `∂_μ(∂_t + νΔ)u_0`.
    pub fn heat_pressure_at(&self, mu: &MultiIndex, t: f64, x: &[f64]) -> f64 {
        let p = &self.components[0];
        let lap: f64 = (0..self.d).map(|k| self.eval(0, &mu.bump(k).bump(k), t, x)).sum();
        p.rate * self.eval(0, mu, t, x) + self.nu * lap
    }

    pub fn velocity(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let zero = MultiIndex::zeros(self.d);
        (1..=self.d.max(1)).map(|i| self.eval(i, &zero, t, x)).collect()
    }

    /// Terminal data `u(T, ·)` with closed-form pressure.
    pub fn terminal(&self) -> TerminalCondition {
        let flow = Arc::new(self.clone());
        let slice = |i| -> Arc<dyn SpatialField> {
            Arc::new(FlowSlice {
                flow: flow.clone(),
                component: Some(i),
            })
        };
        let count = self.components.len() - 1;
        let mut tc = TerminalCondition::new((1..=count).map(slice).collect()).expect("flow dimensions");
        if self.has_pressure() {
            tc = tc.with_pressure(slice(0), PressureKind::ClosedForm).with_heat_pressure(Arc::new(FlowSlice {
                flow: flow.clone(),
                component: None,
            }));
        }
        tc
    }
}

impl DerivativeOracle for ExactFlow {
    fn dim(&self) -> usize {
        self.d
    }

    fn derivative(&self, i: usize, mu: &MultiIndex, t: f64, x: &[f64]) -> Result<f64> {
        if i >= self.components.len() || (i == 0 && !self.has_pressure()) {
            return Err(Error::DerivativeUnavailable(format!("component {i}")));
        }
        Ok(self.eval(i, mu, t, x))
    }

    fn heat_pressure(&self, mu: &MultiIndex, t: f64, x: &[f64]) -> Result<f64> {
        Ok(self.heat_pressure_at(mu, t, x))
    }
}

/// One component of a flow frozen at `t = T`; `None` selects the heat
/// operator of the pressure.
struct FlowSlice {
    flow: Arc<ExactFlow>,
    component: Option<usize>,
}

impl SpatialField for FlowSlice {
    fn dim(&self) -> usize {
        self.flow.d
    }

    fn derivative(&self, mu: &MultiIndex, x: &[f64]) -> Result<f64> {
        let t = self.flow.horizon;
        Ok(match self.component {
            Some(i) => self.flow.eval(i, mu, t, x),
            None => self.flow.heat_pressure_at(mu, t, x),
        })
    }
}

/// `Σ_i ∂_i u_i(t, x)`.
pub fn divergence(oracle: &dyn DerivativeOracle, t: f64, x: &[f64]) -> Result<f64> {
    let d = oracle.dim();
    (0..d).try_fold(0.0, |acc, k| Ok(acc + oracle.derivative(k + 1, &MultiIndex::unit(d, k), t, x)?))
}

/// `φ = cos` on the line.
pub fn cos_terminal() -> TerminalCondition {
    let flow = ExactFlow::semilinear_linear(0.0, 0.0, 0.0);
    flow.terminal()
}

/// A scalar profile applied to a jet.
pub type Profile = Arc<dyn Fn(&Jet) -> Jet + Send + Sync>;

/// `f(x_2) = 1 + x_2²`, `g(x_1) = 1 / (1 + x_1²)`.
pub fn rotating_case_one() -> (Profile, Profile) {
    let f: Profile = Arc::new(|x: &Jet| (x * x).add_const(1.0));
    let g: Profile = Arc::new(|x: &Jet| (x * x).add_const(1.0).recip());
    (f, g)
}

/// `f(x_2) = (2 + sin x_2) / (1 + x_2²)`, `g(x_1) = e^{x_1²} / (2 + x_1³ + x_1⁴)`.
pub fn rotating_case_two() -> (Profile, Profile) {
    let f: Profile = Arc::new(|x: &Jet| x.sin().add_const(2.0).div(&(x * x).add_const(1.0)));
    let g: Profile = Arc::new(|x: &Jet| {
        let den = (&x.powi(3) + &x.powi(4)).add_const(2.0);
        (x * x).exp().div(&den)
    });
    (f, g)
}

/// Terminal velocity `φ_1 = (f'(x_2)/f(x_2)) E`, `φ_2 = (g'(x_1)/g(x_1)) E`,
/// `E = exp(-g(x_1)/f(x_2))`.
pub fn rotating_terminal(f: Profile, g: Profile) -> TerminalCondition {
    let field = |component| -> Arc<dyn SpatialField> {
        Arc::new(RotatingField {
            f: f.clone(),
            g: g.clone(),
            component,
        })
    };
    TerminalCondition::new(vec![field(1), field(2)]).expect("two components")
}

struct RotatingField {
    f: Profile,
    g: Profile,
    component: usize,
}

impl RotatingField {
    fn jet(&self, order: usize, x: &[f64]) -> Result<Jet> {
        let x1 = Jet::variable(2, order + 1, 0, x[0]);
        let x2 = Jet::variable(2, order + 1, 1, x[1]);
        let fj = (self.f)(&x2);
        let gj = (self.g)(&x1);
        // overflow far out propagates as a non-finite value
        if fj.value() == 0.0 || gj.value() == 0.0 {
            return Err(Error::DerivativeUnavailable(format!(
                "rotating profile vanishes at ({}, {})",
                x[0], x[1]
            )));
        }
        let (fj0, gj0) = (fj.truncate(order), gj.truncate(order));
        let e = gj0.div(&fj0).scale(-1.0).exp();
        let ratio = match self.component {
            1 => fj.differentiate(1).div(&fj0),
            _ => gj.differentiate(0).div(&gj0),
        };
        Ok(&ratio * &e)
    }
}

impl SpatialField for RotatingField {
    fn dim(&self) -> usize {
        2
    }

    fn derivative(&self, mu: &MultiIndex, x: &[f64]) -> Result<f64> {
        Ok(self.jet(mu.norm() as usize, x)?.derivative(mu))
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let j = self.jet(1, x)?;
        out[0] = j.derivative(&MultiIndex::unit(2, 0));
        out[1] = j.derivative(&MultiIndex::unit(2, 1));
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::eval_terminal_derivative;

    fn mi(v: &[u16]) -> MultiIndex {
        MultiIndex::from_slice(v)
    }

    #[test]
    fn taylor_green_values() {
        let tg = ExactFlow::taylor_green(1.0, 0.25);
        let v = tg.eval(1, &mi(&[0, 0]), 0.125, &[0.0, FRAC_PI_2]);
        assert!((v + (-0.25f64).exp()).abs() < 1e-15);
        let tc = tg.terminal();
        assert!((eval_terminal_derivative(&tc, 1, &mi(&[0, 0]), &[0.0, FRAC_PI_2]).unwrap() + 1.0).abs() < 1e-15);
        assert!(eval_terminal_derivative(&tc, 1, &mi(&[1, 0]), &[0.0, FRAC_PI_2]).unwrap().abs() < 1e-15);
    }

    #[test]
    fn abc_values() {
        let abc = ExactFlow::abc(0.01, 0.5, 0.7, 0.9, 0.7);
        assert_eq!(abc.velocity(0.7, &[0.0; 3]), vec![0.9, 0.5, 0.7]);
        let tc = abc.terminal();
        assert!((eval_terminal_derivative(&tc, 1, &mi(&[0, 0, 1]), &[0.0; 3]).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn phase_shift_derivatives_match_differences() {
        let abc = ExactFlow::abc(0.3, 0.5, 0.7, 0.9, 1.0);
        let x = [0.3, -1.2, 2.1];
        let h = 1e-5;
        for i in 0..=3 {
            for k in 0..3 {
                let mu = mi(&[1, 0, 1]);
                let mut xp = x;
                let mut xm = x;
                xp[k] += h;
                xm[k] -= h;
                let fd = (abc.eval(i, &mu, 0.4, &xp) - abc.eval(i, &mu, 0.4, &xm)) / (2.0 * h);
                assert!((fd - abc.eval(i, &mu.bump(k), 0.4, &x)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn heat_pressure_vanishes_for_benchmarks() {
        let tg = ExactFlow::taylor_green(1.0, 0.25);
        let abc = ExactFlow::abc(0.01, 0.5, 0.5, 0.5, 0.7);
        for mu in [mi(&[0, 0]), mi(&[1, 2])] {
            assert!(tg.heat_pressure_at(&mu, 0.1, &[0.4, 1.3]).abs() < 1e-12);
        }
        assert!(abc.heat_pressure_at(&mi(&[1, 0, 1]), 0.1, &[0.4, 1.3, -0.2]).abs() < 1e-12);
    }

    #[test]
    fn rotating_divergence_free() {
        for (f, g) in [rotating_case_one(), rotating_case_two()] {
            let tc = rotating_terminal(f, g);
            for a in 0..10 {
                for b in 0..10 {
                    let x = [-2.0 + 0.41 * a as f64, -2.0 + 0.43 * b as f64];
                    let div = eval_terminal_derivative(&tc, 1, &mi(&[1, 0]), &x).unwrap()
                        + eval_terminal_derivative(&tc, 2, &mi(&[0, 1]), &x).unwrap();
                    assert!(div.abs() < 1e-10, "div {div} at {x:?}");
                }
            }
        }
    }

    #[test]
    fn rotating_matches_closed_form_case_one() {
        let (f, g) = rotating_case_one();
        let tc = rotating_terminal(f, g);
        let x = [0.4f64, -0.8];
        let fx = 1.0 + x[1] * x[1];
        let gx = 1.0 / (1.0 + x[0] * x[0]);
        let e = (-gx / fx).exp();
        let phi1 = 2.0 * x[1] / fx * e;
        let phi2 = -2.0 * x[0] / (1.0 + x[0] * x[0]) * e;
        assert!((eval_terminal_derivative(&tc, 1, &mi(&[0, 0]), &x).unwrap() - phi1).abs() < 1e-14);
        assert!((eval_terminal_derivative(&tc, 2, &mi(&[0, 0]), &x).unwrap() - phi2).abs() < 1e-14);
        // gradient agrees with differences
        let h = 1e-6;
        let d1 = (eval_terminal_derivative(&tc, 2, &mi(&[0, 0]), &[x[0] + h, x[1]]).unwrap()
            - eval_terminal_derivative(&tc, 2, &mi(&[0, 0]), &[x[0] - h, x[1]]).unwrap())
            / (2.0 * h);
        assert!((d1 - eval_terminal_derivative(&tc, 2, &mi(&[1, 0]), &x).unwrap()).abs() < 1e-8);
    }
}
