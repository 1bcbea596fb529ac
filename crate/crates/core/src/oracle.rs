//! Derivative oracles: anything that can report `∂_μ u_i(t, x)`.

use crate::error::Result;
use crate::model::Slots;
use crate::multiindex::MultiIndex;

/// Space-time derivatives of the solution tuple `(u_0, ..., u_d)`.
pub trait DerivativeOracle: Send + Sync {
    fn dim(&self) -> usize;

    /// `∂_μ u_i(t, x)`.
    fn derivative(&self, i: usize, mu: &MultiIndex, t: f64, x: &[f64]) -> Result<f64>;

    /// `∂_μ (∂_t + ν Δ) u_0(t, x)`.
    fn heat_pressure(&self, mu: &MultiIndex, t: f64, x: &[f64]) -> Result<f64>;

    /// Fill `out[j] = ∂_{ᾱ^j} u_{β_j}(t, x)` for `j >= skip`.
    fn gather(&self, slots: &Slots, skip: usize, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        for j in skip..slots.n {
            out[j] = self.derivative(slots.beta[j], &slots.alpha[j], t, x)?;
        }
        Ok(())
    }
}

/// A scalar function of space with derivatives of some order.
pub trait SpatialField: Send + Sync {
    fn dim(&self) -> usize;

    fn derivative(&self, mu: &MultiIndex, x: &[f64]) -> Result<f64>;

    /// Highest derivative order supported, `None` if unbounded.
    fn max_order(&self) -> Option<u32> {
        None
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let d = self.dim();
        for (k, o) in out.iter_mut().enumerate().take(d) {
            *o = self.derivative(&MultiIndex::unit(d, k), x)?;
        }
        Ok(())
    }
}

impl<F: SpatialField + ?Sized> SpatialField for std::sync::Arc<F> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn derivative(&self, mu: &MultiIndex, x: &[f64]) -> Result<f64> {
        (**self).derivative(mu, x)
    }

    fn max_order(&self) -> Option<u32> {
        (**self).max_order()
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        (**self).gradient(x, out)
    }
}
