//! Problem definitions: the generic system, the Navier-Stokes instance and
//! the one-dimensional semilinear verification model.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::multiindex::MultiIndex;
use crate::oracle::{DerivativeOracle, SpatialField};

/// Argument layout of the nonlinearities: slot `j` carries
/// `∂_{alpha[j]} u_{beta[j]}`. Slots `0..q` are pressure gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct Slots {
    pub d: usize,
    pub n: usize,
    pub q: usize,
    pub alpha: Vec<MultiIndex>,
    pub beta: Vec<usize>,
}

impl Slots {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidModel(m));
        if self.d == 0 {
            return bad("d must be positive".into());
        }
        if self.q > self.n {
            return bad(format!("q = {} exceeds n = {}", self.q, self.n));
        }
        if self.alpha.len() != self.n || self.beta.len() != self.n {
            return bad("alpha/beta tables must have n entries".into());
        }
        for (j, (a, &b)) in self.alpha.iter().zip(&self.beta).enumerate() {
            if a.len() != self.d {
                return bad(format!("alpha[{j}] has length {} != d", a.len()));
            }
            if j < self.q && b != 0 {
                return bad(format!("beta[{j}] = {b} but pressure slots need 0"));
            }
            if j >= self.q && !(1..=self.d).contains(&b) {
                return bad(format!("beta[{j}] = {b} out of range 1..={}", self.d));
            }
        }
        Ok(())
    }
}

/// The derivatives `∂_λ f_i` of the nonlinearities `f_0, ..., f_d`.
pub trait Nonlinearity: Send + Sync {
    fn eval(&self, fidx: usize, lambda: &MultiIndex, args: &[f64]) -> f64;

    /// True when `∂_λ f_fidx` is identically zero.
    fn vanishes(&self, _fidx: usize, _lambda: &MultiIndex) -> bool {
        false
    }
}

/// `c + Σ l_j z_j + Σ w z_a z_b`, with exact derivatives.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct QuadraticForm {
    pub constant: f64,
    pub linear: Vec<(usize, f64)>,
    /// `(a, b, w)` with `a <= b`; `a == b` means `w z_a^2`.
    pub quadratic: Vec<(usize, usize, f64)>,
}

impl QuadraticForm {
    pub fn eval(&self, lambda: &MultiIndex, z: &[f64]) -> f64 {
        let order = lambda.norm();
        match order {
            0 => {
                self.constant
                    + self.linear.iter().map(|&(j, c)| c * z[j]).sum::<f64>()
                    + self.quadratic.iter().map(|&(a, b, w)| w * z[a] * z[b]).sum::<f64>()
            }
            1 => {
                let p = lambda.first_nonzero().unwrap();
                let lin: f64 = self.linear.iter().filter(|&&(j, _)| j == p).map(|&(_, c)| c).sum();
                let quad: f64 = self
                    .quadratic
                    .iter()
                    .map(|&(a, b, w)| match (a == p, b == p) {
                        (true, true) => 2.0 * w * z[p],
                        (true, false) => w * z[b],
                        (false, true) => w * z[a],
                        _ => 0.0,
                    })
                    .sum();
                lin + quad
            }
            2 => {
                let (p, q) = pair(lambda);
                self.quadratic
                    .iter()
                    .filter(|&&(a, b, _)| (a, b) == (p, q))
                    .map(|&(a, b, w)| if a == b { 2.0 * w } else { w })
                    .sum()
            }
            _ => 0.0,
        }
    }

    pub fn vanishes(&self, lambda: &MultiIndex) -> bool {
        match lambda.norm() {
            0 => false,
            1 => {
                let p = lambda.first_nonzero().unwrap();
                !self.linear.iter().any(|&(j, c)| j == p && c != 0.0)
                    && !self.quadratic.iter().any(|&(a, b, w)| (a == p || b == p) && w != 0.0)
            }
            2 => {
                let (p, q) = pair(lambda);
                !self.quadratic.iter().any(|&(a, b, w)| (a, b) == (p, q) && w != 0.0)
            }
            _ => true,
        }
    }
}

/// The ordered slot pair `(p, q)`, `p <= q`, of a norm-2 index.
fn pair(lambda: &MultiIndex) -> (usize, usize) {
    let mut it = lambda
        .entries()
        .iter()
        .enumerate()
        .flat_map(|(j, &e)| std::iter::repeat_n(j, e as usize));
    let p = it.next().unwrap();
    (p, it.next().unwrap())
}

/// Nonlinearities that are all quadratic forms.
#[derive(Clone, Debug)]
pub struct QuadraticSystem(pub Vec<QuadraticForm>);

impl Nonlinearity for QuadraticSystem {
    fn eval(&self, fidx: usize, lambda: &MultiIndex, args: &[f64]) -> f64 {
        self.0[fidx].eval(lambda, args)
    }

    fn vanishes(&self, fidx: usize, lambda: &MultiIndex) -> bool {
        self.0[fidx].vanishes(lambda)
    }
}

/// `f(u)` of the scalar semilinear equation, given through `f^{(k)}(u)`.
#[derive(Clone)]
pub struct SemilinearF {
    deriv: Arc<dyn Fn(u32, f64) -> f64 + Send + Sync>,
    /// Derivatives of order `>= degree_bound` vanish identically.
    degree_bound: Option<u32>,
}

impl SemilinearF {
    pub fn new(deriv: impl Fn(u32, f64) -> f64 + Send + Sync + 'static, degree_bound: Option<u32>) -> Self {
        SemilinearF {
            deriv: Arc::new(deriv),
            degree_bound,
        }
    }

    /// `f(u) = a u`.
    pub fn linear(a: f64) -> Self {
        Self::new(
            move |k, u| match k {
                0 => a * u,
                1 => a,
                _ => 0.0,
            },
            Some(2),
        )
    }

    /// `f(u) = c`.
    pub fn constant(c: f64) -> Self {
        Self::new(move |k, _| if k == 0 { c } else { 0.0 }, Some(1))
    }
}

impl fmt::Debug for SemilinearF {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SemilinearF").field("degree_bound", &self.degree_bound).finish()
    }
}

impl Nonlinearity for SemilinearF {
    fn eval(&self, _fidx: usize, lambda: &MultiIndex, args: &[f64]) -> f64 {
        (self.deriv)(lambda.norm(), args[0])
    }

    fn vanishes(&self, fidx: usize, lambda: &MultiIndex) -> bool {
        // f_0 is absent in the scalar model
        fidx == 0 || self.degree_bound.is_some_and(|b| lambda.norm() >= b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PressureKind {
    ClosedForm,
    Network,
}

/// Terminal data `φ_i = u_i(T, ·)`.
#[derive(Clone)]
pub struct TerminalCondition {
    d: usize,
    velocity: Vec<Arc<dyn SpatialField>>,
    pressure: Option<(Arc<dyn SpatialField>, PressureKind)>,
    heat: Option<Arc<dyn SpatialField>>,
}

impl TerminalCondition {
    /// Terminal data for components `1..=velocity.len()`.
    pub fn new(velocity: Vec<Arc<dyn SpatialField>>) -> Result<Self> {
        let d = velocity.first().map(|v| v.dim()).unwrap_or(0);
        if d == 0 || velocity.iter().any(|v| v.dim() != d) {
            return Err(Error::InvalidModel("terminal fields must share a positive dimension".into()));
        }
        Ok(TerminalCondition {
            d,
            velocity,
            pressure: None,
            heat: None,
        })
    }

    pub fn with_pressure(mut self, phi0: Arc<dyn SpatialField>, kind: PressureKind) -> Self {
        self.pressure = Some((phi0, kind));
        self
    }

    /// Supplies `∂_μ(∂_t + νΔ)u_0(T, ·)`, only consulted when Poisson codes
    /// are allowed to terminate.
    pub fn with_heat_pressure(mut self, heat: Arc<dyn SpatialField>) -> Self {
        self.heat = Some(heat);
        self
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn components(&self) -> usize {
        self.velocity.len()
    }

    pub fn pressure_kind(&self) -> Option<PressureKind> {
        self.pressure.as_ref().map(|p| p.1)
    }

    pub fn velocity(&self, i: usize) -> &Arc<dyn SpatialField> {
        &self.velocity[i - 1]
    }

    pub fn pressure(&self) -> Option<&Arc<dyn SpatialField>> {
        self.pressure.as_ref().map(|p| &p.0)
    }
}

impl fmt::Debug for TerminalCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TerminalCondition")
            .field("d", &self.d)
            .field("components", &self.velocity.len())
            .field("pressure", &self.pressure_kind())
            .finish()
    }
}

/// `∂_μ φ_i(x)`.
pub fn eval_terminal_derivative(
    terminal: &TerminalCondition,
    i: usize,
    mu: &MultiIndex,
    x: &[f64],
) -> Result<f64> {
    if mu.len() != terminal.d || x.len() != terminal.d {
        return Err(Error::DimensionMismatch {
            expected: terminal.d,
            got: if mu.len() != terminal.d { mu.len() } else { x.len() },
        });
    }
    let field = match i {
        0 => terminal
            .pressure()
            .ok_or_else(|| Error::DerivativeUnavailable("no terminal pressure supplied".into()))?,
        i if i <= terminal.velocity.len() => terminal.velocity(i),
        _ => return Err(Error::DerivativeUnavailable(format!("component {i}"))),
    };
    if let Some(max) = field.max_order() {
        if mu.norm() > max {
            return Err(Error::DerivativeUnavailable(format!(
                "order {} of component {i} exceeds {max}",
                mu.norm()
            )));
        }
    }
    field.derivative(mu, x)
}

impl DerivativeOracle for TerminalCondition {
    fn dim(&self) -> usize {
        self.d
    }

    fn derivative(&self, i: usize, mu: &MultiIndex, _t: f64, x: &[f64]) -> Result<f64> {
        eval_terminal_derivative(self, i, mu, x)
    }

    fn heat_pressure(&self, mu: &MultiIndex, _t: f64, x: &[f64]) -> Result<f64> {
        match &self.heat {
            Some(h) => h.derivative(mu, x),
            None => Err(Error::DerivativeUnavailable(
                "heat operator of the pressure at the terminal time".into(),
            )),
        }
    }

    fn gather(&self, slots: &Slots, skip: usize, _t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        let first_order_pressure = (0..slots.q).all(|j| slots.alpha[j].norm() == 1);
        let mut start = skip;
        if skip < slots.q && first_order_pressure {
            // one gradient evaluation serves every pressure slot
            let phi0 = self
                .pressure()
                .ok_or_else(|| Error::DerivativeUnavailable("no terminal pressure supplied".into()))?;
            let mut grad = vec![0.0; self.d];
            phi0.gradient(x, &mut grad)?;
            for j in skip..slots.q {
                out[j] = grad[slots.alpha[j].first_nonzero().unwrap()];
            }
            start = slots.q;
        }
        for j in start..slots.n {
            out[j] = eval_terminal_derivative(self, slots.beta[j], &slots.alpha[j], x)?;
        }
        Ok(())
    }
}

/// A complete problem: `∂_t u_i + ν Δ u_i + f_i(∂ᾱ u) = 0` for `i >= 1`,
/// `Δ u_0 = f_0`, with terminal data at `T`.
#[derive(Clone)]
pub struct PdeSystem {
    pub name: String,
    pub slots: Slots,
    pub nu: f64,
    pub horizon: f64,
    pub nonlinearity: Arc<dyn Nonlinearity>,
    pub terminal: TerminalCondition,
}

impl fmt::Debug for PdeSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PdeSystem")
            .field("name", &self.name)
            .field("slots", &self.slots)
            .field("nu", &self.nu)
            .field("horizon", &self.horizon)
            .field("terminal", &self.terminal)
            .finish()
    }
}

impl PdeSystem {
    pub fn d(&self) -> usize {
        self.slots.d
    }

    pub fn validate(&self) -> Result<()> {
        self.slots.validate()?;
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return Err(Error::InvalidModel(format!("nu = {} must be positive", self.nu)));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidModel(format!("T = {} must be positive", self.horizon)));
        }
        if self.terminal.dim() != self.slots.d {
            return Err(Error::DimensionMismatch {
                expected: self.slots.d,
                got: self.terminal.dim(),
            });
        }
        for j in 0..self.slots.q {
            if !self.nonlinearity.vanishes(0, &MultiIndex::unit(self.slots.n, j)) {
                return Err(Error::InvalidModel("f_0 must not depend on pressure gradients".into()));
            }
        }
        Ok(())
    }
}

/// Slot index of `z_i^{(j)} = ∂_j u_i` (both 1-based).
pub fn ns_z_slot(d: usize, i: usize, j: usize) -> usize {
    i - 1 + (j + 1) * d
}

/// The Navier-Stokes argument layout: `x_i = ∂_i u_0`, `y_j = u_j`,
/// `z_i^{(j)} = ∂_j u_i`.
pub fn navier_stokes_structure(d: usize) -> Result<Slots> {
    if d < 2 {
        return Err(Error::InvalidModel(format!("Navier-Stokes needs d >= 2, got {d}")));
    }
    let n = d * (d + 2);
    let mut alpha = vec![MultiIndex::zeros(d); n];
    let mut beta = vec![0; n];
    for i in 1..=d {
        alpha[i - 1] = MultiIndex::unit(d, i - 1);
        beta[d + i - 1] = i;
        for j in 1..=d {
            let s = ns_z_slot(d, i, j);
            alpha[s] = MultiIndex::unit(d, j - 1);
            beta[s] = i;
        }
    }
    Ok(Slots { d, n, q: d, alpha, beta })
}

/// `f_0 = -Σ z_i^{(j)} z_j^{(i)}` and `f_i = -x_i - Σ_j y_j z_i^{(j)}`.
pub fn navier_stokes_forms(d: usize) -> Vec<QuadraticForm> {
    let mut f0 = QuadraticForm::default();
    for i in 1..=d {
        f0.quadratic.push((ns_z_slot(d, i, i), ns_z_slot(d, i, i), -1.0));
        for j in i + 1..=d {
            let (a, b) = (ns_z_slot(d, i, j), ns_z_slot(d, j, i));
            f0.quadratic.push((a.min(b), a.max(b), -2.0));
        }
    }
    let mut forms = vec![f0];
    for i in 1..=d {
        let mut fi = QuadraticForm {
            linear: vec![(i - 1, -1.0)],
            ..Default::default()
        };
        for j in 1..=d {
            fi.quadratic.push((d + j - 1, ns_z_slot(d, i, j), -1.0));
        }
        forms.push(fi);
    }
    forms
}

pub fn navier_stokes_model(d: usize, nu: f64, horizon: f64, terminal: TerminalCondition) -> Result<PdeSystem> {
    let model = PdeSystem {
        name: format!("navier-stokes-{d}d"),
        slots: navier_stokes_structure(d)?,
        nu,
        horizon,
        nonlinearity: Arc::new(QuadraticSystem(navier_stokes_forms(d))),
        terminal,
    };
    model.validate()?;
    Ok(model)
}

/// `∂_t u + ν ∂²_x u + f(u) = 0` on the line.
pub fn semilinear_model(f: SemilinearF, nu: f64, horizon: f64, terminal: TerminalCondition) -> PdeSystem {
    PdeSystem {
        name: "semilinear".into(),
        slots: Slots {
            d: 1,
            n: 1,
            q: 0,
            alpha: vec![MultiIndex::zeros(1)],
            beta: vec![1],
        },
        nu,
        horizon,
        nonlinearity: Arc::new(f),
        terminal,
    }
}
