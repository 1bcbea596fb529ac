//! Truncated multivariate Taylor jets for arbitrary-order derivatives of
//! smooth closed-form expressions.

use std::ops::{Add, Mul, Neg, Sub};

use crate::multiindex::MultiIndex;

/// Taylor coefficients `∂^α f(x_0) / α!` for `|α| <= order`, stored densely
/// with stride `order + 1` per coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct Jet {
    d: usize,
    order: usize,
    c: Vec<f64>,
}

impl Jet {
    pub fn constant(d: usize, order: usize, value: f64) -> Self {
        let mut c = vec![0.0; (order + 1).pow(d as u32)];
        c[0] = value;
        Jet { d, order, c }
    }

    /// The coordinate function `x_k` expanded at `x0`.
    pub fn variable(d: usize, order: usize, k: usize, x0: f64) -> Self {
        let mut j = Self::constant(d, order, x0);
        if order >= 1 {
            j.c[(order + 1).pow(k as u32)] = 1.0;
        }
        j
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn value(&self) -> f64 {
        self.c[0]
    }

    fn flat(&self, alpha: &[u16]) -> usize {
        alpha
            .iter()
            .rev()
            .fold(0, |acc, &a| acc * (self.order + 1) + a as usize)
    }

    fn digits(&self, mut flat: usize) -> impl Iterator<Item = usize> {
        let base = self.order + 1;
        (0..self.d).map(move |_| {
            let v = flat % base;
            flat /= base;
            v
        })
    }

    fn degree(&self, flat: usize) -> usize {
        self.digits(flat).sum()
    }

    /// `∂^μ f(x_0)`; zero beyond the truncation order.
    pub fn derivative(&self, mu: &MultiIndex) -> f64 {
        if mu.norm() as usize > self.order {
            return 0.0;
        }
        let fact: f64 = mu
            .entries()
            .iter()
            .map(|&m| (1..=m as u64).product::<u64>() as f64)
            .product();
        self.c[self.flat(mu.entries())] * fact
    }

    /// The jet of `∂f/∂x_k`, one order lower.
    pub fn differentiate(&self, k: usize) -> Jet {
        assert!(self.order >= 1, "cannot differentiate a zeroth-order jet");
        let mut out = Jet::constant(self.d, self.order - 1, 0.0);
        for flat in 0..out.c.len() {
            let alpha: Vec<u16> = out.digits(flat).map(|v| v as u16).collect();
            if alpha.iter().map(|&a| a as usize).sum::<usize>() > out.order {
                continue;
            }
            let mut up = alpha.clone();
            up[k] += 1;
            out.c[flat] = (up[k] as f64) * self.c[self.flat(&up)];
        }
        out
    }

    /// Drop terms above `order`.
    pub fn truncate(&self, order: usize) -> Jet {
        assert!(order <= self.order);
        let mut out = Jet::constant(self.d, order, 0.0);
        for flat in 0..out.c.len() {
            let alpha: Vec<u16> = out.digits(flat).map(|v| v as u16).collect();
            if alpha.iter().map(|&a| a as usize).sum::<usize>() <= order {
                out.c[flat] = self.c[self.flat(&alpha)];
            }
        }
        out
    }

    fn check(&self, other: &Jet) {
        assert!(self.d == other.d && self.order == other.order, "jet shape mismatch");
    }

    pub fn scale(&self, s: f64) -> Jet {
        Jet {
            d: self.d,
            order: self.order,
            c: self.c.iter().map(|v| v * s).collect(),
        }
    }

    pub fn add_const(&self, s: f64) -> Jet {
        let mut out = self.clone();
        out.c[0] += s;
        out
    }

    fn mul_jet(&self, other: &Jet) -> Jet {
        self.check(other);
        let live: Vec<(usize, usize)> = (0..self.c.len())
            .map(|f| (f, self.degree(f)))
            .filter(|&(_, deg)| deg <= self.order)
            .collect();
        let mut out = Jet::constant(self.d, self.order, 0.0);
        for &(i, di) in &live {
            let a = self.c[i];
            if a == 0.0 {
                continue;
            }
            for &(j, dj) in &live {
                // digit sums stay below the base, so flat indices add without carry
                if di + dj <= self.order {
                    out.c[i + j] += a * other.c[j];
                }
            }
        }
        out
    }

    /// `g(self)` from the derivatives `g^{(k)}(self(x_0))`, `k = 0..=order`.
    pub fn compose(&self, derivs: &[f64]) -> Jet {
        assert!(derivs.len() > self.order);
        let mut h = self.clone();
        h.c[0] = 0.0;
        let mut out = Jet::constant(self.d, self.order, derivs[0]);
        let mut power = Jet::constant(self.d, self.order, 1.0);
        let mut kfact = 1.0;
        for (k, &dk) in derivs.iter().enumerate().take(self.order + 1).skip(1) {
            power = power.mul_jet(&h);
            kfact *= k as f64;
            if dk != 0.0 {
                for (o, p) in out.c.iter_mut().zip(&power.c) {
                    *o += dk / kfact * p;
                }
            }
        }
        out
    }

    pub fn exp(&self) -> Jet {
        let e = self.value().exp();
        self.compose(&vec![e; self.order + 1])
    }

    pub fn sin(&self) -> Jet {
        let (s, c) = self.value().sin_cos();
        let cycle = [s, c, -s, -c];
        self.compose(&(0..=self.order).map(|k| cycle[k % 4]).collect::<Vec<_>>())
    }

    pub fn cos(&self) -> Jet {
        let (s, c) = self.value().sin_cos();
        let cycle = [c, -s, -c, s];
        self.compose(&(0..=self.order).map(|k| cycle[k % 4]).collect::<Vec<_>>())
    }

    pub fn recip(&self) -> Jet {
        let v = self.value();
        let mut derivs = Vec::with_capacity(self.order + 1);
        let mut dk = 1.0 / v;
        for k in 0..=self.order {
            derivs.push(dk);
            dk *= -((k + 1) as f64) / v;
        }
        self.compose(&derivs)
    }

    pub fn div(&self, other: &Jet) -> Jet {
        self * &other.recip()
    }

    pub fn powi(&self, p: u32) -> Jet {
        (0..p).fold(Jet::constant(self.d, self.order, 1.0), |acc, _| &acc * self)
    }
}

impl Add for &Jet {
    type Output = Jet;

    fn add(self, rhs: &Jet) -> Jet {
        self.check(rhs);
        Jet {
            d: self.d,
            order: self.order,
            c: self.c.iter().zip(&rhs.c).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &Jet {
    type Output = Jet;

    fn sub(self, rhs: &Jet) -> Jet {
        self.check(rhs);
        Jet {
            d: self.d,
            order: self.order,
            c: self.c.iter().zip(&rhs.c).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Mul for &Jet {
    type Output = Jet;

    fn mul(self, rhs: &Jet) -> Jet {
        self.mul_jet(rhs)
    }
}

impl Neg for &Jet {
    type Output = Jet;

    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mi(v: &[u16]) -> MultiIndex {
        MultiIndex::from_slice(v)
    }

    #[test]
    fn product_of_coordinates() {
        let x = Jet::variable(2, 3, 0, 1.5);
        let y = Jet::variable(2, 3, 1, -0.5);
        let f = &(&x * &x) * &y;
        assert_eq!(f.derivative(&mi(&[0, 0])), 1.5 * 1.5 * -0.5);
        assert_eq!(f.derivative(&mi(&[1, 0])), 2.0 * 1.5 * -0.5);
        assert_eq!(f.derivative(&mi(&[2, 1])), 2.0);
        assert_eq!(f.derivative(&mi(&[1, 1])), 3.0);
        assert_eq!(f.derivative(&mi(&[0, 2])), 0.0);
    }

    #[test]
    fn elementary_functions() {
        let x0 = 0.7;
        let x = Jet::variable(1, 6, 0, x0);
        let s = x.sin();
        let e = x.exp();
        let r = x.recip();
        for k in 0..=6u16 {
            let m = mi(&[k]);
            assert!((s.derivative(&m) - (x0 + k as f64 * std::f64::consts::FRAC_PI_2).sin()).abs() < 1e-12);
            assert!((e.derivative(&m) - x0.exp()).abs() < 1e-12);
            let fact: f64 = (1..=k as u64).product::<u64>() as f64;
            let expect = (-1f64).powi(k as i32) * fact / x0.powi(k as i32 + 1);
            assert!((r.derivative(&m) - expect).abs() < 1e-9 * expect.abs().max(1.0));
        }
    }

    #[test]
    fn mixed_exponential() {
        // f = exp(x*y): ∂x∂y f = (1 + xy) exp(xy)
        let x = Jet::variable(2, 2, 0, 0.3);
        let y = Jet::variable(2, 2, 1, -1.1);
        let f = (&x * &y).exp();
        let xy = 0.3 * -1.1f64;
        assert!((f.derivative(&mi(&[1, 1])) - (1.0 + xy) * xy.exp()).abs() < 1e-14);
    }

    #[test]
    fn differentiate_and_truncate() {
        let x = Jet::variable(2, 4, 1, 0.4);
        let f = x.cos();
        let df = f.differentiate(1);
        assert_eq!(df.order(), 3);
        for k in 0..=3u16 {
            assert!((df.derivative(&mi(&[0, k])) - f.derivative(&mi(&[0, k + 1]))).abs() < 1e-14);
        }
        assert_eq!(f.truncate(2).derivative(&mi(&[0, 2])), f.derivative(&mi(&[0, 2])));
    }
}
