//! Codes, the Faà di Bruno code-sequence enumerator and the branching
//! mechanism.
//!
//! A code is an operator mapping the solution tuple `u = (u_0, ..., u_d)` to
//! a scalar field. Solution index `0` is the pressure-like component solved
//! by a Poisson equation, `1..=d` are the parabolic components.

use std::collections::HashMap;
use std::ops::Deref;
use std::sync::{Arc, RwLock};

use serde::Serialize;
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::model::{Nonlinearity, PdeSystem, Slots};
use crate::multiindex::MultiIndex;
use crate::oracle::DerivativeOracle;

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind")]
pub enum Code {
    /// `Id_i`: the solution component itself.
    Identity { i: usize },
    /// `(a ∂_λ f_fidx)*`: a scaled derivative of a nonlinearity evaluated
    /// at the derivative arguments of the solution.
    FDeriv {
        coef: f64,
        lambda: MultiIndex,
        fidx: usize,
    },
    /// `(a ∂_μ, i)`: a scaled spatial derivative of a solution component.
    UDeriv { coef: f64, mu: MultiIndex, i: usize },
    /// `(∂_μ, -1)`: `∂_μ (∂_t + ν Δ) u_0`.
    HeatOp { mu: MultiIndex },
}

impl Code {
    pub fn identity(i: usize) -> Self {
        Code::Identity { i }
    }

    pub fn f(coef: f64, lambda: MultiIndex, fidx: usize) -> Self {
        Code::FDeriv { coef, lambda, fidx }
    }

    pub fn u(coef: f64, mu: MultiIndex, i: usize) -> Self {
        Code::UDeriv { coef, mu, i }
    }

    pub fn heat(mu: MultiIndex) -> Self {
        Code::HeatOp { mu }
    }

    pub fn coef(&self) -> f64 {
        match self {
            Code::FDeriv { coef, .. } | Code::UDeriv { coef, .. } => *coef,
            _ => 1.0,
        }
    }

    /// Codes resolved through the Poisson kernel rather than the heat
    /// semigroup: pressure derivatives and the heat operator on pressure.
    pub fn is_poisson(&self) -> bool {
        matches!(
            self,
            Code::Identity { i: 0 } | Code::UDeriv { i: 0, .. } | Code::HeatOp { .. }
        )
    }

    pub fn validate(&self, slots: &Slots) -> Result<()> {
        let bad = |msg: String| Err(Error::MalformedCode(msg));
        match self {
            Code::Identity { i } if *i > slots.d => bad(format!("Id_{i} with d = {}", slots.d)),
            Code::FDeriv { coef, lambda, fidx } => {
                if !coef.is_finite() || *coef == 0.0 {
                    return bad(format!("coefficient {coef}"));
                }
                if lambda.len() != slots.n {
                    return bad(format!("lambda {lambda} has length != n = {}", slots.n));
                }
                if *fidx > slots.d {
                    return bad(format!("function index {fidx}"));
                }
                Ok(())
            }
            Code::UDeriv { coef, mu, i } => {
                if !coef.is_finite() || *coef == 0.0 {
                    return bad(format!("coefficient {coef}"));
                }
                if mu.len() != slots.d {
                    return bad(format!("mu {mu} has length != d = {}", slots.d));
                }
                if *i > slots.d {
                    return bad(format!("solution index {i}"));
                }
                Ok(())
            }
            Code::HeatOp { mu } if mu.len() != slots.d => {
                bad(format!("mu {mu} has length != d = {}", slots.d))
            }
            _ => Ok(()),
        }
    }

    fn key(&self) -> CodeKey {
        match self {
            Code::Identity { i } => CodeKey::Identity(*i),
            Code::FDeriv { lambda, fidx, .. } => CodeKey::F(lambda.clone(), *fidx),
            Code::UDeriv { mu, i, .. } => CodeKey::U(mu.clone(), *i),
            Code::HeatOp { mu } => CodeKey::Heat(mu.clone()),
        }
    }

    fn with_coef(&self, factor: f64) -> Code {
        match self {
            Code::FDeriv { coef, lambda, fidx } => Code::f(coef * factor, lambda.clone(), *fidx),
            Code::UDeriv { coef, mu, i } => Code::u(coef * factor, mu.clone(), *i),
            other => other.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
enum CodeKey {
    Identity(usize),
    F(MultiIndex, usize),
    U(MultiIndex, usize),
    Heat(MultiIndex),
}

/// An ordered tuple of codes; one element of a mechanism set.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(transparent)]
pub struct CodeSeq(Vec<Code>);

impl CodeSeq {
    pub fn new(codes: Vec<Code>) -> Self {
        CodeSeq(codes)
    }

    pub fn into_inner(self) -> Vec<Code> {
        self.0
    }
}

impl Deref for CodeSeq {
    type Target = [Code];

    fn deref(&self) -> &[Code] {
        &self.0
    }
}

/// One term `(s, λ, {k_r}, {l^r})` of the multivariate Faà di Bruno formula
/// for `∂_μ f(v)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FdbTerm {
    /// Derivative multi-index applied to `f`, `λ = Σ_r k_r`.
    pub lambda: MultiIndex,
    /// `μ! / ∏_{i,r} k_r^i! (l^r!)^{k_r^i}`.
    pub coef: f64,
    /// Blocks `(l^r, k_r)` with `l^1 ≺ ... ≺ l^s`; `l^r` has length `d`,
    /// `k_r` has length `n`. Each block contributes `(∂_{l^r} v_i)^{k_r^i}`.
    pub blocks: Vec<(MultiIndex, MultiIndex)>,
}

/// Enumerate the Faà di Bruno terms of `∂_μ f(v)` for `f: R^n -> R`.
pub fn fdb_terms(mu: &MultiIndex, n: usize) -> Result<Vec<FdbTerm>> {
    if mu.is_zero() {
        return Err(Error::ZeroOrderExpansion);
    }
    fdb_terms_with_zero(mu, n)
}

/// As [`fdb_terms`], but a zero multi-index yields the single term `f(v)`.
pub(crate) fn fdb_terms_with_zero(mu: &MultiIndex, n: usize) -> Result<Vec<FdbTerm>> {
    if mu.is_zero() {
        return Ok(vec![FdbTerm {
            lambda: MultiIndex::zeros(n),
            coef: 1.0,
            blocks: Vec::new(),
        }]);
    }
    let candidates: Vec<MultiIndex> = mu.lower_set().into_iter().filter(|l| !l.is_zero()).collect();
    let mut raw: Vec<Vec<(MultiIndex, MultiIndex)>> = Vec::new();
    let mut blocks = Vec::new();
    partition_rec(&candidates, 0, mu.clone(), n, &mut blocks, &mut raw);

    let numerator = mu.factorial()? as u128;
    raw.into_iter()
        .map(|blocks| {
            let mut lambda = MultiIndex::zeros(n);
            let mut denom: u128 = 1;
            for (l, k) in &blocks {
                lambda = lambda.add(k);
                let lf = l.factorial()? as u128;
                for &ki in k.entries() {
                    let kf = crate::multiindex::factorial(ki as u64).ok_or(Error::Overflow)? as u128;
                    denom = denom
                        .checked_mul(kf)
                        .and_then(|acc| lf.checked_pow(ki as u32).and_then(|p| acc.checked_mul(p)))
                        .ok_or(Error::Overflow)?;
                }
            }
            debug_assert_eq!(numerator % denom, 0);
            Ok(FdbTerm {
                lambda,
                coef: (numerator / denom) as f64,
                blocks,
            })
        })
        .collect()
}

fn partition_rec(
    candidates: &[MultiIndex],
    pos: usize,
    rem: MultiIndex,
    n: usize,
    blocks: &mut Vec<(MultiIndex, MultiIndex)>,
    out: &mut Vec<Vec<(MultiIndex, MultiIndex)>>,
) {
    if rem.is_zero() {
        out.push(blocks.clone());
        return;
    }
    if pos == candidates.len() {
        return;
    }
    let l = &candidates[pos];
    let mut mult = 1u16;
    loop {
        let taken = l.scale(mult);
        if !taken.le(&rem) {
            break;
        }
        let next_rem = rem.sub(&taken);
        for k in MultiIndex::with_norm(n, mult as u32) {
            blocks.push((l.clone(), k));
            partition_rec(candidates, pos + 1, next_rem.clone(), n, blocks, out);
            blocks.pop();
        }
        mult += 1;
    }
    partition_rec(candidates, pos + 1, rem, n, blocks, out);
}

/// Options that change the shape of mechanism sets.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MechanismOptions {
    /// Drop sequences containing a nonlinearity derivative that vanishes
    /// identically. The dropped terms contribute exactly zero, so the
    /// estimator stays unbiased, but `r_c` shrinks.
    pub prune_vanishing: bool,
}

/// Appends the expansion `fdb(μ, ∂_base f_fidx, prefix)` to `out`.
#[allow(clippy::too_many_arguments)]
fn push_fdb(
    mu: &MultiIndex,
    fidx: usize,
    base: &MultiIndex,
    prefix: &[Code],
    slots: &Slots,
    prune: Option<&dyn Nonlinearity>,
    allow_zero: bool,
    out: &mut Vec<CodeSeq>,
) -> Result<()> {
    let terms = if allow_zero {
        fdb_terms_with_zero(mu, slots.n)?
    } else {
        fdb_terms(mu, slots.n)?
    };
    for term in terms {
        let lambda = base.add(&term.lambda);
        if prune.is_some_and(|f| f.vanishes(fidx, &lambda)) {
            continue;
        }
        let mut seq = Vec::with_capacity(prefix.len() + 1 + term.lambda.norm() as usize);
        seq.extend_from_slice(prefix);
        seq.push(Code::f(term.coef, lambda, fidx));
        for (l, k) in &term.blocks {
            for (slot, &count) in k.entries().iter().enumerate() {
                for _ in 0..count {
                    seq.push(Code::u(1.0, l.add(&slots.alpha[slot]), slots.beta[slot]));
                }
            }
        }
        out.push(CodeSeq(seq));
    }
    Ok(())
}

/// `fdb(μ, f_fidx, prefix)` as code sequences. Requires `|μ| >= 1`.
pub fn fdb_enumerate(
    mu: &MultiIndex,
    fidx: usize,
    prefix: &[Code],
    slots: &Slots,
) -> Result<Vec<CodeSeq>> {
    if mu.len() != slots.d {
        return Err(Error::LengthMismatch(mu.len(), slots.d));
    }
    let mut out = Vec::new();
    push_fdb(mu, fidx, &MultiIndex::zeros(slots.n), prefix, slots, None, false, &mut out)?;
    Ok(out)
}

/// The branching mechanism `ℳ`, memoized per code.
///
/// Sets are stored for unit-coefficient codes; since `ℳ((a∂_μ, i))` and
/// `ℳ((a∂_λ f)*)` are `ℳ` of the unit code with the leading coefficient
/// scaled by `a`, the sampler multiplies the coefficient into its weight
/// instead of materializing a new set.
pub struct Mechanism {
    slots: Slots,
    nu: f64,
    nonlinearity: Arc<dyn Nonlinearity>,
    options: MechanismOptions,
    memo: RwLock<HashMap<CodeKey, Arc<[CodeSeq]>>>,
}

impl Mechanism {
    pub fn new(model: &PdeSystem, options: MechanismOptions) -> Self {
        Mechanism {
            slots: model.slots.clone(),
            nu: model.nu,
            nonlinearity: model.nonlinearity.clone(),
            options,
            memo: RwLock::new(HashMap::new()),
        }
    }

    pub fn options(&self) -> MechanismOptions {
        self.options
    }

    pub fn slots(&self) -> &Slots {
        &self.slots
    }

    /// `ℳ(c)` with the coefficient of `c` folded into each sequence.
    pub fn mechanism(&self, c: &Code) -> Result<Vec<CodeSeq>> {
        let set = self.unit_set(c)?;
        let a = c.coef();
        Ok(set
            .iter()
            .map(|seq| {
                let mut codes = seq.0.clone();
                if a != 1.0 {
                    codes[0] = codes[0].with_coef(a);
                }
                CodeSeq(codes)
            })
            .collect())
    }

    /// `ℳ` of `c` with its coefficient replaced by 1, shared from the memo.
    pub fn unit_set(&self, c: &Code) -> Result<Arc<[CodeSeq]>> {
        let key = c.key();
        if let Some(set) = self.memo.read().expect("mechanism memo poisoned").get(&key) {
            return Ok(set.clone());
        }
        c.validate(&self.slots)?;
        let set: Arc<[CodeSeq]> = self.build(c)?.into();
        let mut memo = self.memo.write().expect("mechanism memo poisoned");
        Ok(memo.entry(key).or_insert(set).clone())
    }

    /// Number of distinct codes whose mechanism has been built.
    pub fn memo_len(&self) -> usize {
        self.memo.read().expect("mechanism memo poisoned").len()
    }

    fn prune(&self) -> Option<&dyn Nonlinearity> {
        self.options.prune_vanishing.then_some(&*self.nonlinearity)
    }

    fn vanishes(&self, fidx: usize, lambda: &MultiIndex) -> bool {
        self.options.prune_vanishing && self.nonlinearity.vanishes(fidx, lambda)
    }

    fn build(&self, c: &Code) -> Result<Vec<CodeSeq>> {
        let s = &self.slots;
        let zero_n = MultiIndex::zeros(s.n);
        let mut out = Vec::new();
        match c {
            Code::Identity { i } => {
                if !self.vanishes(*i, &zero_n) {
                    out.push(CodeSeq(vec![Code::f(1.0, zero_n, *i)]));
                }
            }
            Code::UDeriv { mu, i, .. } => {
                push_fdb(mu, *i, &zero_n, &[], s, self.prune(), true, &mut out)?;
            }
            Code::FDeriv { lambda, fidx, .. } => self.build_f(lambda, *fidx, &mut out)?,
            Code::HeatOp { mu } => self.build_heat(mu, &mut out)?,
        }
        Ok(out)
    }

    fn build_f(&self, lambda: &MultiIndex, fidx: usize, out: &mut Vec<CodeSeq>) -> Result<()> {
        let s = &self.slots;
        // transport through the nonlinear arguments
        for r in s.q..s.n {
            let dg = lambda.bump(r);
            if self.vanishes(fidx, &dg) {
                continue;
            }
            let prefix = [Code::f(1.0, dg, fidx)];
            push_fdb(&s.alpha[r], s.beta[r], &MultiIndex::zeros(s.n), &prefix, s, self.prune(), true, out)?;
        }
        // second-order (carré du champ) terms
        for i in 0..s.n {
            for j in 0..s.n {
                let d2g = lambda.bump(i).bump(j);
                if self.vanishes(fidx, &d2g) {
                    continue;
                }
                for k in 0..s.d {
                    out.push(CodeSeq(vec![
                        Code::f(-self.nu, d2g.clone(), fidx),
                        Code::u(1.0, s.alpha[i].bump(k), s.beta[i]),
                        Code::u(1.0, s.alpha[j].bump(k), s.beta[j]),
                    ]));
                }
            }
        }
        // pressure-gradient arguments
        for r in 0..s.q {
            let dg = lambda.bump(r);
            if self.vanishes(fidx, &dg) {
                continue;
            }
            out.push(CodeSeq(vec![Code::f(-1.0, dg, fidx), Code::heat(s.alpha[r].clone())]));
        }
        Ok(())
    }

    fn build_heat(&self, mu: &MultiIndex, out: &mut Vec<CodeSeq>) -> Result<()> {
        let s = &self.slots;
        let lower = mu.lower_set();
        // ν Σ ∂_μ[(∂_{ᾱ^i+1_k} u)(∂_{ᾱ^j+1_k} u)(∂_{1_i+1_j} f_0)*] by Leibniz
        for i in s.q..s.n {
            for j in s.q..s.n {
                let base = MultiIndex::zeros(s.n).bump(i).bump(j);
                if self.vanishes(0, &base) {
                    continue;
                }
                for k in 0..s.d {
                    for ell in &lower {
                        for gamma in ell.lower_set() {
                            let weight = mu.binomial(ell)? as f64 * ell.binomial(&gamma)? as f64;
                            let prefix = [
                                Code::u(self.nu * weight, mu.sub(ell).add(&s.alpha[i]).bump(k), s.beta[i]),
                                Code::u(1.0, ell.sub(&gamma).add(&s.alpha[j]).bump(k), s.beta[j]),
                            ];
                            push_fdb(&gamma, 0, &base, &prefix, s, self.prune(), true, out)?;
                        }
                    }
                }
            }
        }
        // -Σ C(μ,ℓ) ∂_ℓ(∂_{1_i} f_0)* ∂_{μ-ℓ+ᾱ^i} f_{β_i}*
        for i in s.q..s.n {
            for ell in &lower {
                let binom = mu.binomial(ell)? as f64;
                for term in fdb_terms_with_zero(ell, s.n)? {
                    let lambda = term.lambda.bump(i);
                    if self.vanishes(0, &lambda) {
                        continue;
                    }
                    let mut prefix = vec![Code::f(-binom * term.coef, lambda, 0)];
                    for (l, kk) in &term.blocks {
                        for (slot, &count) in kk.entries().iter().enumerate() {
                            for _ in 0..count {
                                prefix.push(Code::u(1.0, l.add(&s.alpha[slot]), s.beta[slot]));
                            }
                        }
                    }
                    let order = mu.sub(ell).add(&s.alpha[i]);
                    push_fdb(&order, s.beta[i], &MultiIndex::zeros(s.n), &prefix, s, self.prune(), true, out)?;
                }
            }
        }
        Ok(())
    }

    /// JSON dump of `ℳ(c)` for inspection.
    pub fn dump_json(&self, c: &Code) -> Result<String> {
        let set = self.mechanism(c)?;
        serde_json::to_string_pretty(&serde_json::json!({
            "code": c,
            "size": set.len(),
            "sequences": set,
        }))
        .map_err(|e| Error::Parse(e.to_string()))
    }
}

/// `c(u)(t, x)` against a derivative oracle.
pub fn eval_code(
    c: &Code,
    model: &PdeSystem,
    oracle: &dyn DerivativeOracle,
    t: f64,
    x: &[f64],
) -> Result<f64> {
    let s = &model.slots;
    match c {
        Code::Identity { i } => oracle.derivative(*i, &MultiIndex::zeros(s.d), t, x),
        Code::UDeriv { coef, mu, i } => Ok(coef * oracle.derivative(*i, mu, t, x)?),
        Code::HeatOp { mu } => oracle.heat_pressure(mu, t, x),
        Code::FDeriv { coef, lambda, fidx } => {
            if model.nonlinearity.vanishes(*fidx, lambda) {
                return Ok(0.0);
            }
            let mut args: SmallVec<[f64; 16]> = SmallVec::from_elem(0.0, s.n);
            // f_0 never reads the pressure-gradient slots
            let skip = if *fidx == 0 { s.q } else { 0 };
            oracle.gather(s, skip, t, x, &mut args)?;
            Ok(coef * model.nonlinearity.eval(*fidx, lambda, &args))
        }
    }
}
