//! Grid error metrics of a velocity/pressure estimate against an exact flow.

use std::io::Write;

use ndarray::{Array1, Array2, Array3, ArrayView2};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flows::ExactFlow;
use crate::multiindex::MultiIndex;
use crate::network::Network;

/// Anything that reports velocity values and spatial Jacobians on `(t, x)`
/// rows.
pub trait VelocityEstimator: Sync {
    fn dim(&self) -> usize;

    /// `rows × d`.
    fn values(&self, tx: ArrayView2<f64>) -> Result<Array2<f64>>;

    /// `∂v_i/∂x_j`, `rows × d × d`.
    fn jacobian(&self, tx: ArrayView2<f64>) -> Result<Array3<f64>>;
}

/// Terminal pressure on `x` rows.
pub trait PressureEstimator: Sync {
    fn values(&self, x: ArrayView2<f64>) -> Result<Array1<f64>>;
}

impl VelocityEstimator for Network {
    fn dim(&self) -> usize {
        self.output_dim
    }

    fn values(&self, tx: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.forward(tx)
    }

    fn jacobian(&self, tx: ArrayView2<f64>) -> Result<Array3<f64>> {
        let full = self.input_jacobian(tx)?;
        Ok(full.slice(ndarray::s![.., .., 1..]).to_owned())
    }
}

impl PressureEstimator for Network {
    fn values(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        Ok(self.forward(x)?.column(0).to_owned())
    }
}

impl VelocityEstimator for ExactFlow {
    fn dim(&self) -> usize {
        ExactFlow::dim(self)
    }

    fn values(&self, tx: ArrayView2<f64>) -> Result<Array2<f64>> {
        let d = ExactFlow::dim(self);
        let zero = MultiIndex::zeros(d);
        Ok(Array2::from_shape_fn((tx.nrows(), d), |(r, i)| {
            let row = tx.row(r).to_vec();
            self.eval(i + 1, &zero, row[0], &row[1..])
        }))
    }

    fn jacobian(&self, tx: ArrayView2<f64>) -> Result<Array3<f64>> {
        let d = ExactFlow::dim(self);
        Ok(Array3::from_shape_fn((tx.nrows(), d, d), |(r, i, j)| {
            let row = tx.row(r).to_vec();
            self.eval(i + 1, &MultiIndex::unit(d, j), row[0], &row[1..])
        }))
    }
}

impl PressureEstimator for ExactFlow {
    fn values(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        let zero = MultiIndex::zeros(ExactFlow::dim(self));
        Ok(Array1::from_shape_fn(x.nrows(), |r| {
            self.eval(0, &zero, self.horizon, &x.row(r).to_vec())
        }))
    }
}

/// `Ω ∩ δℤ^d` with `Ω = [x_min, x_max]^d`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Grid {
    pub d: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub delta: f64,
}

impl Grid {
    pub fn new(d: usize, x_min: f64, x_max: f64, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) || d == 0 || !(x_min <= x_max) {
            return Err(Error::InvalidConfig(format!(
                "grid needs d >= 1, delta > 0, x_min <= x_max; got {d}, {delta}, [{x_min}, {x_max}]"
            )));
        }
        Ok(Grid { d, x_min, x_max, delta })
    }

    /// `π/126` in two dimensions, `π/45` otherwise.
    pub fn default_delta(d: usize) -> f64 {
        if d == 2 {
            std::f64::consts::PI / 126.0
        } else {
            std::f64::consts::PI / 45.0
        }
    }

    /// Multiples of `δ` in `[x_min, x_max]`, with a relative slack of `1e-9`
    /// so that endpoints on the lattice are kept.
    pub fn axis(&self) -> Vec<f64> {
        let slack = 1e-9 * self.delta;
        let lo = ((self.x_min - slack) / self.delta).ceil() as i64;
        let hi = ((self.x_max + slack) / self.delta).floor() as i64;
        (lo..=hi).map(|k| k as f64 * self.delta).collect()
    }

    /// All grid points, last coordinate fastest, as `count × d`.
    pub fn points(&self) -> Array2<f64> {
        let axis = self.axis();
        let n = axis.len();
        let count = n.pow(self.d as u32);
        Array2::from_shape_fn((count, self.d), |(r, c)| {
            let stride = n.pow((self.d - 1 - c) as u32);
            axis[(r / stride) % n]
        })
    }
}

/// `t_k = kT/10` for `k = 0..9`.
pub fn time_slices(horizon: f64) -> Vec<f64> {
    (0..10).map(|k| k as f64 * horizon / 10.0).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SliceErrors {
    pub k: usize,
    pub t: f64,
    /// `sup_x |u_i - v_i|²` per component.
    pub e_i: Vec<f64>,
    pub e: f64,
    pub erru: f64,
    pub errgu: f64,
    pub errdivu: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ErrorReport {
    pub grid: Grid,
    pub grid_points: usize,
    pub slices: Vec<SliceErrors>,
    pub errp: Option<f64>,
}

fn with_time(t: f64, x: &Array2<f64>) -> Array2<f64> {
    let mut tx = Array2::zeros((x.nrows(), x.ncols() + 1));
    tx.column_mut(0).fill(t);
    tx.slice_mut(ndarray::s![.., 1..]).assign(x);
    tx
}

/// Velocity metrics at `t_k` and, when a pressure estimate is given, the
/// mean-centred pressure error at `T`.
pub fn error_report(
    velocity: &dyn VelocityEstimator,
    pressure: Option<&dyn PressureEstimator>,
    exact: &ExactFlow,
    grid: &Grid,
) -> Result<ErrorReport> {
    let d = exact.dim();
    if velocity.dim() != d || grid.d != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: if velocity.dim() != d { velocity.dim() } else { grid.d },
        });
    }
    let x = grid.points();
    let count = x.nrows();
    if count == 0 {
        return Err(Error::EmptyGrid);
    }
    let volume = (grid.x_max - grid.x_min).powi(d as i32);
    let slices = time_slices(exact.horizon)
        .into_par_iter()
        .enumerate()
        .map(|(k, t)| {
            let tx = with_time(t, &x);
            let (u, v) = (VelocityEstimator::values(exact, tx.view())?, velocity.values(tx.view())?);
            let (gu, gv) = (exact.jacobian(tx.view())?, velocity.jacobian(tx.view())?);
            let mut e_i = vec![0.0f64; d];
            let (mut e, mut num_u, mut den_u, mut num_g, mut den_g, mut div) = (0.0f64, 0.0, 0.0, 0.0, 0.0, 0.0);
            for r in 0..count {
                let mut row_sum = 0.0;
                let mut dv = 0.0;
                for i in 0..d {
                    let diff = (u[[r, i]] - v[[r, i]]).powi(2);
                    e_i[i] = e_i[i].max(diff);
                    row_sum += diff;
                    num_u += diff;
                    den_u += u[[r, i]].powi(2);
                    for j in 0..d {
                        num_g += (gu[[r, i, j]] - gv[[r, i, j]]).powi(2);
                        den_g += gu[[r, i, j]].powi(2);
                    }
                    dv += gv[[r, i, i]];
                }
                e = e.max(row_sum);
                div += dv * dv;
            }
            Ok(SliceErrors {
                k,
                t,
                e_i,
                e,
                erru: (num_u / den_u).sqrt(),
                errgu: (num_g / den_g).sqrt(),
                errdivu: (volume / count as f64 * div).sqrt(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let errp = match pressure {
        Some(p) => Some(pressure_error(&PressureEstimator::values(exact, x.view())?, &p.values(x.view())?)),
        None => None,
    };
    Ok(ErrorReport {
        grid: grid.clone(),
        grid_points: count,
        slices,
        errp,
    })
}

/// `‖(p - p̄) - (v - v̄)‖ / ‖p - p̄‖` over the grid.
pub fn pressure_error(exact: &Array1<f64>, est: &Array1<f64>) -> f64 {
    let n = exact.len() as f64;
    let (pm, vm) = (exact.sum() / n, est.sum() / n);
    let num: f64 = exact.iter().zip(est).map(|(p, v)| ((p - pm) - (v - vm)).powi(2)).sum();
    let den: f64 = exact.iter().map(|p| (p - pm).powi(2)).sum();
    (num / den).sqrt()
}

impl ErrorReport {
    /// Rows `metric,k,value`; `errp` is reported at `k = 10`, i.e. `t = T`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let io = |e: csv::Error| Error::Parse(e.to_string());
        out.write_record(["metric", "k", "value"]).map_err(io)?;
        for s in &self.slices {
            let k = s.k.to_string();
            for (i, v) in s.e_i.iter().enumerate() {
                out.write_record([format!("e{}", i + 1), k.clone(), format!("{v:e}")])
                    .map_err(io)?;
            }
            for (name, v) in [("e", s.e), ("erru", s.erru), ("errgu", s.errgu), ("errdivu", s.errdivu)] {
                out.write_record([name.to_string(), k.clone(), format!("{v:e}")]).map_err(io)?;
            }
        }
        if let Some(p) = self.errp {
            out.write_record(["errp".to_string(), "10".to_string(), format!("{p:e}")])
                .map_err(io)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Largest value of a velocity metric over the time slices.
    pub fn max_over_slices(&self, metric: fn(&SliceErrors) -> f64) -> f64 {
        self.slices.iter().map(metric).fold(0.0, f64::max)
    }
}

/// `(x, exact, estimated)` for `u_i(t, ·)` along the first axis with the
/// remaining coordinates at the centre of the box.
pub fn velocity_slice(
    velocity: &dyn VelocityEstimator,
    exact: &ExactFlow,
    grid: &Grid,
    i: usize,
    t: f64,
) -> Result<Vec<(f64, f64, f64)>> {
    let d = exact.dim();
    if i == 0 || i > d {
        return Err(Error::InvalidConfig(format!("velocity component {i} outside 1..={d}")));
    }
    let axis = grid.axis();
    let mid = 0.5 * (grid.x_min + grid.x_max);
    let x = Array2::from_shape_fn((axis.len(), d), |(r, c)| if c == 0 { axis[r] } else { mid });
    let tx = with_time(t, &x);
    let (u, v) = (VelocityEstimator::values(exact, tx.view())?, velocity.values(tx.view())?);
    Ok((0..axis.len()).map(|r| (axis[r], u[[r, i - 1]], v[[r, i - 1]])).collect())
}

/// Terminal pressure along the first axis; both curves mean-centred.
pub fn pressure_slice(pressure: &dyn PressureEstimator, exact: &ExactFlow, grid: &Grid) -> Result<Vec<(f64, f64, f64)>> {
    let d = exact.dim();
    let axis = grid.axis();
    let mid = 0.5 * (grid.x_min + grid.x_max);
    let x = Array2::from_shape_fn((axis.len(), d), |(r, c)| if c == 0 { axis[r] } else { mid });
    let (p, v) = (PressureEstimator::values(exact, x.view())?, pressure.values(x.view())?);
    let n = axis.len() as f64;
    let (pm, vm) = (p.sum() / n, v.sum() / n);
    Ok((0..axis.len()).map(|r| (axis[r], p[r] - pm, v[r] - vm)).collect())
}

pub fn write_slice_csv<W: Write>(rows: &[(f64, f64, f64)], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let io = |e: csv::Error| Error::Parse(e.to_string());
    out.write_record(["x", "exact", "estimated"]).map_err(io)?;
    for (x, a, b) in rows {
        out.write_record([x.to_string(), a.to_string(), b.to_string()]).map_err(io)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    /// The exact flow scaled by `λ`, with an optional pressure shift.
    #[derive(Clone)]
    struct Scaled {
        flow: ExactFlow,
        lambda: f64,
        shift: f64,
    }

    impl VelocityEstimator for Scaled {
        fn dim(&self) -> usize {
            self.flow.dim()
        }

        fn values(&self, tx: ArrayView2<f64>) -> Result<Array2<f64>> {
            Ok(VelocityEstimator::values(&self.flow, tx)? * self.lambda)
        }

        fn jacobian(&self, tx: ArrayView2<f64>) -> Result<Array3<f64>> {
            Ok(self.flow.jacobian(tx)? * self.lambda)
        }
    }

    impl PressureEstimator for Scaled {
        fn values(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
            Ok(PressureEstimator::values(&self.flow, x)? * self.lambda + self.shift)
        }
    }

    #[test]
    fn grid_keeps_both_endpoints() {
        let g = Grid::new(2, 0.0, 2.0 * PI, PI / 10.0).unwrap();
        let axis = g.axis();
        assert_eq!(axis.len(), 21);
        assert_eq!(g.points().nrows(), 441);
        assert!((axis[20] - 2.0 * PI).abs() < 1e-12);
        assert!(Grid::new(2, 0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn exact_estimator_scores_zero() {
        for flow in [ExactFlow::taylor_green(1.0, 0.25), ExactFlow::abc(0.01, 0.5, 0.5, 0.5, 0.7)] {
            let grid = Grid::new(flow.dim(), 0.0, 2.0 * PI, PI / 4.0).unwrap();
            let r = error_report(&flow, Some(&flow), &flow, &grid).unwrap();
            assert_eq!(r.slices.len(), 10);
            for s in &r.slices {
                assert_eq!((s.e, s.erru, s.errgu), (0.0, 0.0, 0.0));
                assert!(s.errdivu < 1e-12);
            }
            assert_eq!(r.errp, Some(0.0));
        }
    }

    #[test]
    fn pressure_shift_leaves_errp_unchanged() {
        let flow = ExactFlow::taylor_green(1.0, 0.25);
        let grid = Grid::new(2, 0.0, 2.0 * PI, PI / 10.0).unwrap();
        let a = Scaled {
            flow: flow.clone(),
            lambda: 1.1,
            shift: 0.0,
        };
        let b = Scaled { shift: 3.7, ..a.clone() };
        let ra = error_report(&a, Some(&a), &flow, &grid).unwrap();
        let rb = error_report(&b, Some(&b), &flow, &grid).unwrap();
        let (pa, pb) = (ra.errp.unwrap(), rb.errp.unwrap());
        assert!((pa - 0.1).abs() < 1e-12);
        assert!((pa - pb).abs() <= 1e-14, "{pa} vs {pb}");
    }

    #[test]
    fn relative_errors_of_a_scaled_estimate() {
        let flow = ExactFlow::taylor_green(1.0, 0.25);
        let grid = Grid::new(2, 0.0, 2.0 * PI, PI / 10.0).unwrap();
        let est = Scaled {
            flow: flow.clone(),
            lambda: 0.9,
            shift: 0.0,
        };
        let r = error_report(&est, None, &flow, &grid).unwrap();
        for s in &r.slices {
            assert!((s.erru - 0.1).abs() < 1e-12);
            assert!((s.errgu - 0.1).abs() < 1e-12);
            assert!(s.e <= s.e_i.iter().sum::<f64>() + 1e-15);
        }
        assert_eq!(r.errp, None);
    }

    #[test]
    fn csv_has_every_slice_and_errp() {
        let flow = ExactFlow::taylor_green(1.0, 0.25);
        let grid = Grid::new(2, 0.0, 2.0 * PI, PI / 5.0).unwrap();
        let r = error_report(&flow, Some(&flow), &flow, &grid).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        for k in 0..10 {
            assert!(text.contains(&format!("erru,{k},")));
        }
        assert!(text.contains("errp,10,0e0"));
        assert!(r.to_json().unwrap().contains("\"errdivu\""));
    }

    #[test]
    fn network_jacobian_drops_the_time_column() {
        let mut rng = crate::sampler::sample_rng(2, 0);
        let net = Network::new(3, 2, 2, 5, &mut rng).unwrap();
        let tx = Array2::from_shape_vec((2, 3), vec![0.1, 0.2, 0.3, 0.0, -1.0, 0.5]).unwrap();
        let j = VelocityEstimator::jacobian(&net, tx.view()).unwrap();
        let full = net.input_jacobian(tx.view()).unwrap();
        assert_eq!(j.shape(), &[2, 2, 2]);
        assert_eq!(j[[1, 0, 1]], full[[1, 0, 2]]);
    }
}
