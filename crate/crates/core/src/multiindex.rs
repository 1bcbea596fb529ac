//! Multi-indices of derivative orders and the graded order used by the
//! Faà di Bruno enumeration.

use std::cmp::Ordering;
use std::fmt;

use smallvec::SmallVec;

use crate::error::{Error, Result};

/// A vector of derivative orders.
///
/// Spatial indices (derivative orders in `x`) have length `d`; indices over
/// the arguments of a nonlinearity have length `n`. The length is a runtime
/// value so one build serves every dimension.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct MultiIndex(SmallVec<[u16; 16]>);

impl MultiIndex {
    pub fn zeros(len: usize) -> Self {
        MultiIndex(SmallVec::from_elem(0, len))
    }

    /// The indicator vector `1_p`.
    pub fn unit(len: usize, p: usize) -> Self {
        let mut m = Self::zeros(len);
        m.0[p] = 1;
        m
    }

    pub fn from_slice(entries: &[u16]) -> Self {
        MultiIndex(SmallVec::from_slice(entries))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn entries(&self) -> &[u16] {
        &self.0
    }

    pub fn get(&self, i: usize) -> u16 {
        self.0[i]
    }

    /// `|k| = k_1 + ... + k_d`.
    pub fn norm(&self) -> u32 {
        self.0.iter().map(|&e| e as u32).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&e| e == 0)
    }

    /// Componentwise `self <= other`.
    pub fn le(&self, other: &Self) -> bool {
        self.len() == other.len() && self.0.iter().zip(&other.0).all(|(a, b)| a <= b)
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.len(), other.len(), "multi-index length mismatch");
        MultiIndex(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| a.checked_add(*b).expect("derivative order overflow"))
                .collect(),
        )
    }

    /// Componentwise difference; panics if `other` is not `<= self`.
    pub fn sub(&self, other: &Self) -> Self {
        assert!(other.le(self), "multi-index subtraction underflow");
        MultiIndex(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    /// `self + 1_p`.
    pub fn bump(&self, p: usize) -> Self {
        let mut m = self.clone();
        m.0[p] = m.0[p].checked_add(1).expect("derivative order overflow");
        m
    }

    pub fn scale(&self, k: u16) -> Self {
        MultiIndex(
            self.0
                .iter()
                .map(|&a| a.checked_mul(k).expect("derivative order overflow"))
                .collect(),
        )
    }

    /// Position of the first nonzero entry, if any.
    pub fn first_nonzero(&self) -> Option<usize> {
        self.0.iter().position(|&e| e != 0)
    }

    /// Comparison in the graded order: first by norm, then lexicographically
    /// by the first differing entry.
    pub fn graded_cmp(&self, other: &Self) -> Ordering {
        self.norm()
            .cmp(&other.norm())
            .then_with(|| self.0.iter().cmp(other.0.iter()))
    }

    /// `self ≺ other`.
    pub fn precedes(&self, other: &Self) -> Result<bool> {
        if self.len() != other.len() {
            return Err(Error::LengthMismatch(self.len(), other.len()));
        }
        Ok(self.graded_cmp(other) == Ordering::Less)
    }

    /// `∏ μ_r!`.
    pub fn factorial(&self) -> Result<u64> {
        self.0.iter().try_fold(1u64, |acc, &e| {
            factorial(e as u64).and_then(|f| acc.checked_mul(f)).ok_or(Error::Overflow)
        })
    }

    /// `∏ C(μ_r, ℓ_r)`.
    pub fn binomial(&self, lower: &Self) -> Result<u64> {
        if self.len() != lower.len() {
            return Err(Error::LengthMismatch(self.len(), lower.len()));
        }
        if !lower.le(self) {
            return Err(Error::IndexNotDominated(lower.clone(), self.clone()));
        }
        self.0.iter().zip(&lower.0).try_fold(1u64, |acc, (&m, &l)| {
            binomial(m as u64, l as u64)
                .and_then(|b| acc.checked_mul(b))
                .ok_or(Error::Overflow)
        })
    }

    /// All multi-indices `ℓ` with `0 <= ℓ <= self`, in graded order.
    pub fn lower_set(&self) -> Vec<MultiIndex> {
        let mut out = vec![MultiIndex::zeros(0)];
        for &bound in &self.0 {
            let mut next = Vec::with_capacity(out.len() * (bound as usize + 1));
            for prefix in &out {
                for v in 0..=bound {
                    let mut m = prefix.clone();
                    m.0.push(v);
                    next.push(m);
                }
            }
            out = next;
        }
        out.sort_by(|a, b| a.graded_cmp(b));
        out
    }

    /// All multi-indices of the given length and norm, in graded order.
    pub fn with_norm(len: usize, norm: u32) -> Vec<MultiIndex> {
        fn rec(len: usize, left: u32, cur: &mut Vec<u16>, out: &mut Vec<MultiIndex>) {
            if cur.len() + 1 == len {
                cur.push(left as u16);
                out.push(MultiIndex::from_slice(cur));
                cur.pop();
                return;
            }
            for v in 0..=left {
                cur.push(v as u16);
                rec(len, left - v, cur, out);
                cur.pop();
            }
        }
        let mut out = Vec::new();
        if len == 0 {
            if norm == 0 {
                out.push(MultiIndex::zeros(0));
            }
            return out;
        }
        rec(len, norm, &mut Vec::with_capacity(len), &mut out);
        out.sort_by(|a, b| a.graded_cmp(b));
        out
    }
}

impl fmt::Debug for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0.as_slice())
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{e}")?;
        }
        write!(f, ")")
    }
}

impl serde::Serialize for MultiIndex {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(self.0.iter())
    }
}

impl From<Vec<u16>> for MultiIndex {
    fn from(v: Vec<u16>) -> Self {
        MultiIndex(SmallVec::from_vec(v))
    }
}

pub fn factorial(n: u64) -> Option<u64> {
    (1..=n).try_fold(1u64, |acc, k| acc.checked_mul(k))
}

pub fn binomial(n: u64, k: u64) -> Option<u64> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    u64::try_from(acc).ok()
}

/// `∏ μ_r!` for a multi-index.
pub fn multi_factorial(mu: &MultiIndex) -> Result<u64> {
    mu.factorial()
}

/// `∏ C(μ_r, ℓ_r)`.
pub fn multi_binomial(mu: &MultiIndex, ell: &MultiIndex) -> Result<u64> {
    mu.binomial(ell)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mi(v: &[u16]) -> MultiIndex {
        MultiIndex::from_slice(v)
    }

    #[test]
    fn precedes_rules() {
        assert!(mi(&[0, 1]).precedes(&mi(&[1, 0])).unwrap());
        assert!(mi(&[1, 0, 0]).precedes(&mi(&[0, 0, 2])).unwrap());
        assert!(!mi(&[2, 1]).precedes(&mi(&[2, 1])).unwrap());
        // rule iii: equal first entry, decided by the second
        assert!(mi(&[1, 0, 2]).precedes(&mi(&[1, 1, 1])).unwrap());
        assert!(matches!(
            mi(&[1]).precedes(&mi(&[1, 0])),
            Err(Error::LengthMismatch(1, 2))
        ));
    }

    #[test]
    fn strict_total_order_exhaustive() {
        for d in 1..=3usize {
            let all: Vec<MultiIndex> = (0..=3 * d as u32)
                .flat_map(|n| MultiIndex::with_norm(d, n))
                .filter(|m| m.entries().iter().all(|&e| e <= 3))
                .collect();
            for a in &all {
                assert!(!a.precedes(a).unwrap());
                for b in &all {
                    let ab = a.precedes(b).unwrap();
                    let ba = b.precedes(a).unwrap();
                    if a == b {
                        continue;
                    }
                    assert!(ab ^ ba, "totality/antisymmetry failed for {a} {b}");
                    if ab {
                        for c in &all {
                            if b.precedes(c).unwrap() {
                                assert!(a.precedes(c).unwrap(), "transitivity {a} {b} {c}");
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn binomials() {
        assert_eq!(multi_binomial(&mi(&[2, 1]), &mi(&[1, 0])).unwrap(), 2);
        assert_eq!(multi_binomial(&mi(&[0, 0]), &mi(&[0, 0])).unwrap(), 1);
        assert_eq!(multi_binomial(&mi(&[3, 2]), &mi(&[2, 1])).unwrap(), 6);
        assert!(matches!(
            multi_binomial(&mi(&[1, 1]), &mi(&[2, 0])),
            Err(Error::IndexNotDominated(..))
        ));
        assert_eq!(multi_factorial(&mi(&[3, 2])).unwrap(), 12);
        assert!(matches!(mi(&[30]).factorial(), Err(Error::Overflow)));
    }

    #[test]
    fn binomial_edges_for_all_small_indices() {
        for n in 0..=6 {
            for mu in MultiIndex::with_norm(3, n) {
                assert_eq!(mu.binomial(&mu).unwrap(), 1);
                assert_eq!(mu.binomial(&MultiIndex::zeros(3)).unwrap(), 1);
            }
        }
    }

    #[test]
    fn enumeration_is_sorted_and_stable() {
        let a = MultiIndex::with_norm(3, 4);
        let b = MultiIndex::with_norm(3, 4);
        assert_eq!(a, b);
        assert_eq!(a.len(), 15);
        assert!(a.windows(2).all(|w| w[0].precedes(&w[1]).unwrap()));
        let lower = mi(&[2, 1]).lower_set();
        assert_eq!(lower.len(), 6);
        assert!(lower[0].is_zero());
        assert!(lower.windows(2).all(|w| w[0].precedes(&w[1]).unwrap()));
    }
}
