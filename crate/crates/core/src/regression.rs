//! Deep branching regression: tree-sample training sets, Adam training of the
//! residual network, and pre-training of the terminal pressure.

use std::io::{Read, Write};
use std::sync::Arc;

use ndarray::{s, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::codes::{eval_code, Code};
use crate::error::{Error, Result};
use crate::model::{PdeSystem, PressureKind, TerminalCondition};
use crate::multiindex::MultiIndex;
use crate::network::{Adam, Network};
use crate::oracle::SpatialField;
use crate::sampler::{neumaier_sum, poisson_kernel, sample_rng, SamplerConfig, TreeSampler};

/// Stream offset separating pressure pre-training draws from tree draws.
const PHI0_STREAM_BASE: u64 = 1 << 62;
/// Stream used for mini-batch shuffling.
const SHUFFLE_STREAM: u64 = 1 << 61;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainConfig {
    /// Training points `N`.
    pub n_points: usize,
    /// Inner Monte Carlo samples per point `M`.
    pub m_inner: usize,
    /// Epochs `P`.
    pub epochs: usize,
    pub lr: f64,
    pub lr_drops: Vec<usize>,
    pub lr_factor: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub horizon: f64,
    pub seed: u64,
    /// Full batch when `None`.
    pub batch_size: Option<usize>,
    pub hidden_layers: usize,
    pub width: usize,
}

impl TrainConfig {
    /// `N = 100 000`, `M = 1000`, `P = 10 000`, `η = 0.01`, `l = 3`,
    /// `m = 100` on `[0, 2π]^d`.
    pub fn paper(horizon: f64, seed: u64) -> Self {
        TrainConfig {
            n_points: 100_000,
            m_inner: 1000,
            epochs: 10_000,
            lr: 0.01,
            lr_drops: vec![1000, 2000],
            lr_factor: 10.0,
            x_min: 0.0,
            x_max: 2.0 * std::f64::consts::PI,
            horizon,
            seed,
            batch_size: None,
            hidden_layers: 3,
            width: 100,
        }
    }

    /// `N = 2000`, `M = 200`, `P = 2000`.
    pub fn desk(horizon: f64, seed: u64) -> Self {
        TrainConfig {
            n_points: 2000,
            m_inner: 200,
            epochs: 2000,
            ..Self::paper(horizon, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_points == 0 || self.m_inner == 0 || self.epochs == 0 {
            return bad(format!(
                "N, M, P must be at least 1, got {}, {}, {}",
                self.n_points, self.m_inner, self.epochs
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.lr));
        }
        if !(self.lr_factor > 0.0 && self.lr_factor.is_finite()) {
            return bad(format!("learning-rate factor {} must be positive", self.lr_factor));
        }
        if !(self.x_min < self.x_max && self.x_min.is_finite() && self.x_max.is_finite()) {
            return bad(format!("empty box [{}, {}]", self.x_min, self.x_max));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad(format!("T = {} must be positive", self.horizon));
        }
        if self.batch_size == Some(0) {
            return bad("batch size must be positive".into());
        }
        if self.hidden_layers == 0 || self.width == 0 {
            return bad("network needs l >= 1 and m >= 1".into());
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let drops = self.lr_drops.iter().filter(|&&e| epoch >= e).count();
        self.lr / self.lr_factor.powi(drops as i32)
    }

    /// `[x_min - (x_max - x_min)/2, x_max + (x_max - x_min)/2]`.
    pub fn enlarged_box(&self) -> (f64, f64) {
        let half = (self.x_max - self.x_min) / 2.0;
        (self.x_min - half, self.x_max + half)
    }
}

/// Regression data: `inputs` are `(t, x)` rows for deep branching or `x`
/// rows for pressure pre-training.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSet {
    pub space_time: bool,
    pub inputs: Array2<f64>,
    pub targets: Array2<f64>,
    /// Sample variance of the inner draws behind each target.
    pub variances: Array2<f64>,
    /// Total aborted tree draws.
    pub aborted: usize,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }

    fn header(&self) -> Vec<String> {
        let d = if self.space_time {
            self.inputs.ncols() - 1
        } else {
            self.inputs.ncols()
        };
        let mut h = Vec::new();
        if self.space_time {
            h.push("t".to_string());
        }
        h.extend((1..=d).map(|k| format!("x{k}")));
        let first = if self.space_time { 1 } else { 0 };
        let outs = first..first + self.targets.ncols();
        h.extend(outs.clone().map(|i| format!("target{i}")));
        h.extend(outs.map(|i| format!("var{i}")));
        h
    }

    /// CSV with shortest round-trip decimal floats.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(self.header()).map_err(csv_err)?;
        for j in 0..self.len() {
            let row = self
                .inputs
                .row(j)
                .iter()
                .chain(self.targets.row(j).iter())
                .chain(self.variances.row(j).iter())
                .map(|v| v.to_string())
                .collect::<Vec<_>>();
            out.write_record(row).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let header = rd.headers().map_err(csv_err)?.clone();
        let space_time = header.get(0) == Some("t");
        let n_in = header.iter().filter(|h| *h == "t" || h.starts_with('x')).count();
        let n_out = header.iter().filter(|h| h.starts_with("target")).count();
        if n_out == 0 || header.len() != n_in + 2 * n_out {
            return Err(Error::Parse("unrecognised training-set header".into()));
        }
        let mut rows = Vec::new();
        for rec in rd.records() {
            let rec = rec.map_err(csv_err)?;
            for f in rec.iter() {
                rows.push(f.trim().parse::<f64>().map_err(|e| Error::Parse(format!("{f}: {e}")))?);
            }
        }
        let n = rows.len() / header.len();
        let all = Array2::from_shape_vec((n, header.len()), rows).map_err(|e| Error::Parse(e.to_string()))?;
        Ok(TrainingSet {
            space_time,
            inputs: all.slice(s![.., ..n_in]).to_owned(),
            targets: all.slice(s![.., n_in..n_in + n_out]).to_owned(),
            variances: all.slice(s![.., n_in + n_out..]).to_owned(),
            aborted: 0,
        })
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

fn uniform_rows<R: Rng>(rng: &mut R, n: usize, ranges: &[(f64, f64)]) -> Array2<f64> {
    let mut a = Array2::zeros((n, ranges.len()));
    for mut row in a.rows_mut() {
        for (v, &(lo, hi)) in row.iter_mut().zip(ranges) {
            *v = lo + (hi - lo) * rng.random::<f64>();
        }
    }
    a
}

/// `N` points uniform on `[0, T] × [x_min, x_max]^d`, each with the mean of
/// `M` tree draws of `Id_i` for `i = 1..=d`. Draw `k` of component `i` at
/// point `j` uses stream `1 + (j d + i - 1) M + k`.
pub fn build_training_set(sampler: &TreeSampler, cfg: &TrainConfig) -> Result<TrainingSet> {
    cfg.validate()?;
    let d = sampler.model().d();
    let horizon = sampler.config().horizon;
    let mut ranges = vec![(0.0, horizon)];
    ranges.extend(std::iter::repeat_n((cfg.x_min, cfg.x_max), d));
    let inputs = uniform_rows(&mut sample_rng(cfg.seed, 0), cfg.n_points, &ranges);
    let m = cfg.m_inner;

    let per_point: Vec<Vec<(f64, f64, usize)>> = (0..cfg.n_points)
        .into_par_iter()
        .map(|j| {
            let row = inputs.row(j);
            let (t, x) = (row[0], row.slice(s![1..]).to_vec());
            (1..=d)
                .map(|i| {
                    let stream0 = 1 + ((j * d + i - 1) * m) as u64;
                    let est = sampler.estimate_code(t, &x, &Code::identity(i), m, stream0)?;
                    if est.aborted * 100 > m {
                        return Err(Error::ExcessiveAborts {
                            point: j,
                            aborted: est.aborted,
                            total: m,
                        });
                    }
                    let var = est.stderr.map_or(0.0, |se| se * se * est.samples as f64);
                    Ok((est.mean, var, est.aborted))
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut targets = Array2::zeros((cfg.n_points, d));
    let mut variances = Array2::zeros((cfg.n_points, d));
    let mut aborted = 0;
    for (j, comps) in per_point.iter().enumerate() {
        for (i, &(mean, var, ab)) in comps.iter().enumerate() {
            targets[[j, i]] = mean;
            variances[[j, i]] = var;
            aborted += ab;
        }
    }
    Ok(TrainingSet {
        space_time: true,
        inputs,
        targets,
        variances,
        aborted,
    })
}

/// One draw of the pressure target `N(Y) (2τ̃ρ̃(τ̃))⁻¹ f_0(∂ᾱφ(x + Y))`.
fn phi0_target<R: Rng>(model: &PdeSystem, lo: f64, hi: f64, f0: &Code, x: &[f64], rng: &mut R) -> Result<f64> {
    let s = rng.random_range(lo..hi);
    let sd = s.sqrt();
    let y: Vec<f64> = x
        .iter()
        .map(|_| sd * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect();
    let kernel = poisson_kernel(&y, x.len());
    if kernel == 0.0 {
        return Ok(0.0);
    }
    let shifted: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
    let f = eval_code(f0, model, &model.terminal, model.horizon, &shifted)?;
    Ok(kernel * (hi - lo) / (2.0 * s) * f)
}

/// Pressure targets on the enlarged box, averaging `M` draws per point with
/// `τ̃` uniform on `[rho_tilde_lo, rho_tilde_hi]`. Non-finite draws count as
/// aborted; more than 1% at any point fails the build.
pub fn build_phi0_set(model: &PdeSystem, cfg: &TrainConfig, sampler_cfg: &SamplerConfig) -> Result<TrainingSet> {
    cfg.validate()?;
    sampler_cfg.validate()?;
    model.validate()?;
    let d = model.d();
    let (lo_box, hi_box) = cfg.enlarged_box();
    let inputs = uniform_rows(
        &mut sample_rng(cfg.seed, PHI0_STREAM_BASE),
        cfg.n_points,
        &vec![(lo_box, hi_box); d],
    );
    let f0 = Code::f(1.0, MultiIndex::zeros(model.slots.n), 0);
    let (lo, hi) = (sampler_cfg.rho_tilde_lo, sampler_cfg.rho_tilde_hi);
    let m = cfg.m_inner;
    let stats: Vec<(f64, f64, usize)> = (0..cfg.n_points)
        .into_par_iter()
        .map(|j| {
            let x = inputs.row(j).to_vec();
            let mut rng = sample_rng(sampler_cfg.seed, PHI0_STREAM_BASE + 1 + j as u64);
            let mut draws = Vec::with_capacity(m);
            for _ in 0..m {
                let v = phi0_target(model, lo, hi, &f0, &x, &mut rng)?;
                if v.is_finite() {
                    draws.push(v);
                }
            }
            let aborted = m - draws.len();
            if aborted * 100 > m {
                return Err(Error::ExcessiveAborts {
                    point: j,
                    aborted,
                    total: m,
                });
            }
            let k = draws.len();
            let mean = neumaier_sum(draws.iter().copied()) / k as f64;
            let var = if k > 1 {
                neumaier_sum(draws.iter().map(|v| (v - mean) * (v - mean))) / (k - 1) as f64
            } else {
                0.0
            };
            Ok((mean, var, aborted))
        })
        .collect::<Result<_>>()?;
    let targets = Array2::from_shape_fn((cfg.n_points, 1), |(j, _)| stats[j].0);
    let variances = Array2::from_shape_fn((cfg.n_points, 1), |(j, _)| stats[j].1);
    Ok(TrainingSet {
        space_time: false,
        inputs,
        targets,
        variances,
        aborted: stats.iter().map(|s| s.2).sum(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
}

pub struct Trained {
    pub net: Network,
    pub trace: Vec<LossRecord>,
}

/// Writes `epoch,loss,lr` rows.
pub fn write_loss_csv<W: Write>(trace: &[LossRecord], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["epoch", "loss", "lr"]).map_err(csv_err)?;
    for r in trace {
        out.write_record([r.epoch.to_string(), r.loss.to_string(), r.lr.to_string()])
            .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// Adam on `Σ_i N⁻¹ Σ_j (H̄_ij - v_i(x_j))²`, one record per epoch holding the
/// loss before that epoch's update.
pub fn train_network(data: &TrainingSet, cfg: &TrainConfig) -> Result<Trained> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidConfig("empty training set".into()));
    }
    if data.targets.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig("training targets must be finite".into()));
    }
    let mut init_rng = sample_rng(cfg.seed, SHUFFLE_STREAM + 1);
    let mut net = Network::new(
        data.inputs.ncols(),
        data.targets.ncols(),
        cfg.hidden_layers,
        cfg.width,
        &mut init_rng,
    )?;
    let mut params = net.params();
    let mut adam = Adam::new(params.len());
    let mut shuffle_rng = sample_rng(cfg.seed, SHUFFLE_STREAM);
    let n = data.len();
    let batch = cfg.batch_size.unwrap_or(n).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let loss = if batch == n {
            let (loss, grad) = net.loss_and_gradient(data.inputs.view(), data.targets.view())?;
            check_loss(epoch, loss)?;
            adam.update(&mut params, &grad, lr);
            net.set_params(&params);
            loss
        } else {
            order.shuffle(&mut shuffle_rng);
            let mut losses = Vec::new();
            for chunk in order.chunks(batch) {
                // a lone row has no batch variance
                if chunk.len() < 2 && !losses.is_empty() {
                    continue;
                }
                let x = data.inputs.select(Axis(0), chunk);
                let y = data.targets.select(Axis(0), chunk);
                let (loss, grad) = net.loss_and_gradient(x.view(), y.view())?;
                check_loss(epoch, loss)?;
                adam.update(&mut params, &grad, lr);
                net.set_params(&params);
                losses.push(loss * chunk.len() as f64);
            }
            neumaier_sum(losses) / n as f64
        };
        trace.push(LossRecord { epoch, loss, lr });
    }
    Ok(Trained { net, trace })
}

fn check_loss(epoch: usize, loss: f64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteLoss { epoch, loss })
    }
}

/// Builds the deep branching training set and fits `v(t, x; θ)`.
pub fn train_deep_branching(sampler: &TreeSampler, cfg: &TrainConfig) -> Result<(TrainingSet, Trained)> {
    let data = build_training_set(sampler, cfg)?;
    let trained = train_network(&data, cfg)?;
    Ok((data, trained))
}

/// Fits a `d`-input scalar network to pressure targets on the enlarged box.
pub fn pretrain_phi0(
    model: &PdeSystem,
    cfg: &TrainConfig,
    sampler_cfg: &SamplerConfig,
) -> Result<(TrainingSet, Trained)> {
    let data = build_phi0_set(model, cfg, sampler_cfg)?;
    let trained = train_network(&data, cfg)?;
    Ok((data, trained))
}

/// A scalar network of `x` as a terminal field, derivatives up to order 2.
#[derive(Clone, Debug)]
pub struct NetworkField {
    net: Network,
    output: usize,
}

impl NetworkField {
    pub fn new(net: Network, output: usize) -> Result<Self> {
        if output >= net.output_dim {
            return Err(Error::DimensionMismatch {
                expected: net.output_dim,
                got: output,
            });
        }
        Ok(NetworkField { net, output })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }
}

impl SpatialField for NetworkField {
    fn dim(&self) -> usize {
        self.net.input_dim
    }

    fn derivative(&self, mu: &MultiIndex, x: &[f64]) -> Result<f64> {
        let order = mu.norm();
        if order == 0 {
            return Ok(self.net.forward_point(x)?[self.output]);
        }
        if order > 2 {
            return Err(Error::DerivativeUnavailable(format!(
                "order {order} of a network-backed field"
            )));
        }
        let (_, grad, hess) = self.net.jet2(x, self.output)?;
        let idx: Vec<usize> = (0..mu.len())
            .flat_map(|k| std::iter::repeat_n(k, mu.get(k) as usize))
            .collect();
        Ok(match idx[..] {
            [a] => grad[a],
            [a, b] => hess[[a, b]],
            _ => unreachable!(),
        })
    }

    fn max_order(&self) -> Option<u32> {
        Some(2)
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let view = ndarray::ArrayView2::from_shape((1, x.len()), x).map_err(|e| Error::Parse(e.to_string()))?;
        let jac = self.net.input_jacobian(view)?;
        for (k, o) in out.iter_mut().enumerate().take(self.dim()) {
            *o = jac[[0, self.output, k]];
        }
        Ok(())
    }
}

/// `terminal` with its pressure replaced by a pre-trained network.
pub fn with_network_pressure(terminal: TerminalCondition, net: Network) -> Result<TerminalCondition> {
    if net.input_dim != terminal.dim() || net.output_dim != 1 {
        return Err(Error::DimensionMismatch {
            expected: terminal.dim(),
            got: net.input_dim,
        });
    }
    Ok(terminal.with_pressure(Arc::new(NetworkField::new(net, 0)?), PressureKind::Network))
}
