//! Residual tanh perceptron with batch normalization before every affine
//! layer, with training-mode backpropagation, input derivatives and a
//! binary checkpoint format.

use std::io::{Read, Write};

use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis, Zip};
use rand::Rng;

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"BPDENET1";

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    /// `out × in`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    fn new(dim: usize) -> Self {
        BatchNorm {
            gamma: Array1::ones(dim),
            beta: Array1::zeros(dim),
            running_mean: Array1::zeros(dim),
            running_var: Array1::ones(dim),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    /// Inference-mode map `h ↦ h s + c`.
    fn affine(&self) -> (Array1<f64>, Array1<f64>) {
        let scale = &self.gamma / &self.running_var.mapv(|v| (v + self.eps).sqrt());
        let shift = &self.beta - &(&self.running_mean * &scale);
        (scale, shift)
    }
}

/// `v = W_l BN(h_l) + b_l` with `h_1 = tanh(W_0 BN(x) + b_0)` and
/// `h_{k+1} = h_k + tanh(W_k BN(h_k) + b_k)` for `1 <= k < l`.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden_layers: usize,
    pub width: usize,
    pub dense: Vec<Dense>,
    pub norms: Vec<BatchNorm>,
}

struct LayerCache {
    xhat: Array2<f64>,
    invstd: Array1<f64>,
    a: Array2<f64>,
    /// `tanh` output of hidden layers.
    act: Option<Array2<f64>>,
}

/// Per-parameter gradients in [`Network::params`] order.
pub type Gradient = Vec<f64>;

impl Network {
    fn layer_dims(input_dim: usize, output_dim: usize, l: usize, m: usize) -> Vec<(usize, usize)> {
        let mut dims = vec![(input_dim, m)];
        dims.extend(std::iter::repeat_n((m, m), l - 1));
        dims.push((m, output_dim));
        dims
    }

    /// Weights uniform in `±1/√fan_in`, identity normalization.
    pub fn new<R: Rng>(input_dim: usize, output_dim: usize, l: usize, m: usize, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(input_dim, output_dim, l, m)?;
        for layer in &mut net.dense {
            let bound = 1.0 / (layer.w.ncols() as f64).sqrt();
            layer.w.mapv_inplace(|_| rng.random_range(-bound..bound));
            layer.b.mapv_inplace(|_| rng.random_range(-bound..bound));
        }
        Ok(net)
    }

    pub fn zeros(input_dim: usize, output_dim: usize, l: usize, m: usize) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 || l == 0 || m == 0 {
            return Err(Error::InvalidConfig(format!(
                "network dims must be positive: in {input_dim}, out {output_dim}, l {l}, m {m}"
            )));
        }
        let dims = Self::layer_dims(input_dim, output_dim, l, m);
        Ok(Network {
            input_dim,
            output_dim,
            hidden_layers: l,
            width: m,
            dense: dims
                .iter()
                .map(|&(i, o)| Dense {
                    w: Array2::zeros((o, i)),
                    b: Array1::zeros(o),
                })
                .collect(),
            norms: dims.iter().map(|&(i, _)| BatchNorm::new(i)).collect(),
        })
    }

    /// `(in + 1) m + (l - 1)(m + 1) m + (m + 1) out`: weights and biases.
    pub fn param_count_formula(input_dim: usize, output_dim: usize, l: usize, m: usize) -> usize {
        (input_dim + 1) * m + (l - 1) * (m + 1) * m + (m + 1) * output_dim
    }

    pub fn param_count(&self) -> usize {
        self.dense.iter().map(|d| d.w.len() + d.b.len()).sum()
    }

    /// All trainable values: per layer `γ, β, W (row-major), b`.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.trainable_len());
        for (bn, d) in self.norms.iter().zip(&self.dense) {
            out.extend(bn.gamma.iter());
            out.extend(bn.beta.iter());
            out.extend(d.w.iter());
            out.extend(d.b.iter());
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.trainable_len());
        let mut it = flat.iter().copied();
        for (bn, d) in self.norms.iter_mut().zip(&mut self.dense) {
            for arr in [bn.gamma.view_mut(), bn.beta.view_mut()] {
                let mut arr = arr;
                arr.iter_mut().for_each(|v| *v = it.next().unwrap());
            }
            d.w.iter_mut().for_each(|v| *v = it.next().unwrap());
            d.b.iter_mut().for_each(|v| *v = it.next().unwrap());
        }
    }

    pub fn trainable_len(&self) -> usize {
        self.param_count() + self.norms.iter().map(|bn| 2 * bn.gamma.len()).sum::<usize>()
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                got: cols,
            });
        }
        Ok(())
    }

    /// Inference-mode forward pass on a batch (`rows × input_dim`).
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(x.ncols())?;
        Ok(self.forward_inference(x).0)
    }

    pub fn forward_point(&self, x: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, x.len()), x).map_err(|e| Error::Parse(e.to_string()))?;
        Ok(self.forward(view)?.row(0).to_vec())
    }

    /// Output and the hidden `tanh` activations.
    fn forward_inference(&self, x: ArrayView2<f64>) -> (Array2<f64>, Vec<Array2<f64>>) {
        let l = self.hidden_layers;
        let mut acts = Vec::with_capacity(l);
        let mut h = x.to_owned();
        for k in 0..=l {
            let (scale, shift) = self.norms[k].affine();
            let a = &h * &scale + &shift;
            let z = a.dot(&self.dense[k].w.t()) + &self.dense[k].b;
            if k == l {
                return (z, acts);
            }
            let t = z.mapv(f64::tanh);
            h = if k == 0 { t.clone() } else { &h + &t };
            acts.push(t);
        }
        unreachable!()
    }

    /// Training-mode forward pass: batch statistics, running averages
    /// updated in place.
    fn forward_train(&mut self, x: ArrayView2<f64>) -> (Array2<f64>, Vec<LayerCache>) {
        let l = self.hidden_layers;
        let rows = x.nrows() as f64;
        let mut caches = Vec::with_capacity(l + 1);
        let mut h = x.to_owned();
        for k in 0..=l {
            let bn = &mut self.norms[k];
            let mean = h.mean_axis(Axis(0)).unwrap();
            let centered = &h - &mean;
            let var = centered.mapv(|v| v * v).mean_axis(Axis(0)).unwrap();
            let invstd = var.mapv(|v| 1.0 / (v + bn.eps).sqrt());
            let xhat = &centered * &invstd;
            let a = &xhat * &bn.gamma + &bn.beta;
            let unbiased = if rows > 1.0 { rows / (rows - 1.0) } else { 1.0 };
            let mom = bn.momentum;
            bn.running_mean = &bn.running_mean * (1.0 - mom) + &mean * mom;
            bn.running_var = &bn.running_var * (1.0 - mom) + &var * (mom * unbiased);

            let z = a.dot(&self.dense[k].w.t()) + &self.dense[k].b;
            if k == l {
                caches.push(LayerCache {
                    xhat,
                    invstd,
                    a,
                    act: None,
                });
                return (z, caches);
            }
            let t = z.mapv(f64::tanh);
            h = if k == 0 { t.clone() } else { &h + &t };
            caches.push(LayerCache {
                xhat,
                invstd,
                a,
                act: Some(t),
            });
        }
        unreachable!()
    }

    /// Gradient of `L` from `dL/dv` through the training-mode graph.
    fn backward(&self, caches: &[LayerCache], dout: Array2<f64>) -> Gradient {
        let l = self.hidden_layers;
        let rows = dout.nrows() as f64;
        let mut layer_grads: Vec<(Array1<f64>, Array1<f64>, Array2<f64>, Array1<f64>)> = Vec::with_capacity(l + 1);
        // dL/dh_{k+1} flowing into layer k's output
        let mut dh_next: Option<Array2<f64>> = None;
        for k in (0..=l).rev() {
            let c = &caches[k];
            let dz = match k {
                k if k == l => dout.clone(),
                _ => {
                    let t = c.act.as_ref().unwrap();
                    dh_next.as_ref().unwrap() * &t.mapv(|v| 1.0 - v * v)
                }
            };
            let dw = dz.t().dot(&c.a);
            let db = dz.sum_axis(Axis(0));
            let da = dz.dot(&self.dense[k].w);
            let bn = &self.norms[k];
            let dgamma = (&da * &c.xhat).sum_axis(Axis(0));
            let dbeta = da.sum_axis(Axis(0));
            let dxhat = &da * &bn.gamma;
            let sum_dxhat = dxhat.sum_axis(Axis(0));
            let sum_dxhat_xhat = (&dxhat * &c.xhat).sum_axis(Axis(0));
            let mut dh = &dxhat * rows - &sum_dxhat - &(&c.xhat * &sum_dxhat_xhat);
            dh *= &(&c.invstd / rows);
            layer_grads.push((dgamma, dbeta, dw, db));
            if k > 0 {
                // residual skip for blocks 1..l-1
                dh_next = Some(if k < l && k >= 1 {
                    dh + dh_next.as_ref().unwrap()
                } else {
                    dh
                });
            }
        }
        layer_grads.reverse();
        let mut flat = Vec::with_capacity(self.trainable_len());
        for (g, b, w, bb) in layer_grads {
            flat.extend(g.iter());
            flat.extend(b.iter());
            flat.extend(w.iter());
            flat.extend(bb.iter());
        }
        flat
    }

    /// Training-mode loss `Σ_i mean_j (y_ji - v_i(x_j))²` and its gradient.
    pub fn loss_and_gradient(&mut self, x: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<(f64, Gradient)> {
        self.check_input(x.ncols())?;
        if y.ncols() != self.output_dim || y.nrows() != x.nrows() {
            return Err(Error::DimensionMismatch {
                expected: self.output_dim,
                got: y.ncols(),
            });
        }
        let (out, caches) = self.forward_train(x);
        let diff = &out - &y;
        let rows = x.nrows() as f64;
        let loss = diff.iter().map(|v| v * v).sum::<f64>() / rows;
        let dout = diff * (2.0 / rows);
        Ok((loss, self.backward(&caches, dout)))
    }

    /// Inference-mode mean squared loss.
    pub fn loss(&self, x: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<f64> {
        let out = self.forward(x)?;
        Ok((&out - &y).iter().map(|v| v * v).sum::<f64>() / x.nrows() as f64)
    }

    /// `∂v_i/∂x_j` for every row, shape `rows × output_dim × input_dim`,
    /// by reverse accumulation through the inference-mode graph.
    pub fn input_jacobian(&self, x: ArrayView2<f64>) -> Result<Array3<f64>> {
        self.check_input(x.ncols())?;
        let l = self.hidden_layers;
        let (_, acts) = self.forward_inference(x);
        let affines: Vec<_> = self.norms.iter().map(|bn| bn.affine().0).collect();
        let derivs: Vec<Array2<f64>> = acts.iter().map(|t| t.mapv(|v| 1.0 - v * v)).collect();
        let rows = x.nrows();
        let mut jac = Array3::zeros((rows, self.output_dim, self.input_dim));
        for i in 0..self.output_dim {
            let w_row = self.dense[l].w.row(i);
            let g = &w_row * &affines[l];
            let mut dh = Array2::from_shape_fn((rows, self.width), |(_, c)| g[c]);
            for k in (1..l).rev() {
                let dz = &dh * &derivs[k];
                let da = dz.dot(&self.dense[k].w);
                dh = dh + da * &affines[k];
            }
            let dz = &dh * &derivs[0];
            let dx = dz.dot(&self.dense[0].w) * &affines[0];
            jac.slice_mut(s![.., i, ..]).assign(&dx);
        }
        Ok(jac)
    }

    /// Value, gradient and Hessian of output `i` at one point, by forward
    /// propagation of second-order jets.
    pub fn jet2(&self, x: &[f64], i: usize) -> Result<(f64, Vec<f64>, Array2<f64>)> {
        self.check_input(x.len())?;
        let d = self.input_dim;
        let l = self.hidden_layers;
        // value, gradient (dim × d), Hessian (dim × d × d)
        let mut v = Array1::from(x.to_vec());
        let mut g = Array2::<f64>::eye(d);
        let mut h = Array3::<f64>::zeros((d, d, d));
        for k in 0..=l {
            let (scale, shift) = self.norms[k].affine();
            let w = &self.dense[k].w;
            let av = &v * &scale + &shift;
            let ag = &g * &scale.view().insert_axis(Axis(1));
            let ah = &h * &scale.view().insert_axis(Axis(1)).insert_axis(Axis(2));
            let zv = w.dot(&av) + &self.dense[k].b;
            let zg = w.dot(&ag);
            let zh = {
                let flat = ah.into_shape_with_order((av.len(), d * d)).expect("contiguous");
                w.dot(&flat).into_shape_with_order((zv.len(), d, d)).expect("contiguous")
            };
            if k == l {
                return Ok((zv[i], zg.row(i).to_vec(), zh.slice(s![i, .., ..]).to_owned()));
            }
            let t = zv.mapv(f64::tanh);
            let t1 = t.mapv(|y| 1.0 - y * y);
            let t2 = Zip::from(&t).and(&t1).map_collect(|&y, &dy| -2.0 * y * dy);
            let tg = &zg * &t1.view().insert_axis(Axis(1));
            let mut th = &zh * &t1.view().insert_axis(Axis(1)).insert_axis(Axis(2));
            for r in 0..zv.len() {
                for a in 0..d {
                    for b in 0..d {
                        th[[r, a, b]] += t2[r] * zg[[r, a]] * zg[[r, b]];
                    }
                }
            }
            if k == 0 {
                v = t;
                g = tg;
                h = th;
            } else {
                v = v + t;
                g = g + tg;
                h = h + th;
            }
        }
        unreachable!()
    }

    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        for dim in [self.input_dim, self.output_dim, self.hidden_layers, self.width] {
            w.write_all(&(dim as u64).to_le_bytes())?;
        }
        let mut put = |vals: &mut dyn Iterator<Item = f64>| -> Result<()> {
            for v in vals {
                w.write_all(&v.to_le_bytes())?;
            }
            Ok(())
        };
        for d in &self.dense {
            put(&mut d.w.iter().copied())?;
            put(&mut d.b.iter().copied())?;
        }
        for bn in &self.norms {
            put(&mut bn.gamma.iter().copied())?;
            put(&mut bn.beta.iter().copied())?;
            put(&mut bn.running_mean.iter().copied())?;
            put(&mut bn.running_var.iter().copied())?;
            put(&mut [bn.momentum, bn.eps].into_iter())?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() < 40 || &bytes[..8] != MAGIC {
            return Err(Error::BadCheckpoint("missing header".into()));
        }
        let word = |i: usize| u64::from_le_bytes(bytes[8 + 8 * i..16 + 8 * i].try_into().unwrap()) as usize;
        let (input_dim, output_dim, l, m) = (word(0), word(1), word(2), word(3));
        if [input_dim, output_dim, l, m].iter().any(|&v| v == 0 || v > 1 << 20) {
            return Err(Error::BadCheckpoint("implausible dimensions".into()));
        }
        let mut net = Network::zeros(input_dim, output_dim, l, m)?;
        let body = &bytes[40..];
        let expected: usize = net.param_count() + net.norms.iter().map(|bn| 4 * bn.gamma.len() + 2).sum::<usize>();
        if body.len() != 8 * expected {
            return Err(Error::BadCheckpoint(format!(
                "expected {} payload bytes, found {}",
                8 * expected,
                body.len()
            )));
        }
        let mut vals = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let mut fill = |it: &mut dyn Iterator<Item = &mut f64>| it.for_each(|v| *v = vals.next().unwrap());
        for d in &mut net.dense {
            fill(&mut d.w.iter_mut());
            fill(&mut d.b.iter_mut());
        }
        for bn in &mut net.norms {
            fill(&mut bn.gamma.iter_mut());
            fill(&mut bn.beta.iter_mut());
            fill(&mut bn.running_mean.iter_mut());
            fill(&mut bn.running_var.iter_mut());
            let mut tail = [0.0; 2];
            fill(&mut tail.iter_mut());
            bn.momentum = tail[0];
            bn.eps = tail[1];
        }
        Ok(net)
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_net(seed: u64) -> Network {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Network::new(3, 2, 3, 7, &mut rng).unwrap();
        // non-trivial normalization state
        for bn in &mut net.norms {
            bn.gamma.mapv_inplace(|_| rng.random_range(0.5..1.5));
            bn.beta.mapv_inplace(|_| rng.random_range(-0.3..0.3));
            bn.running_mean.mapv_inplace(|_| rng.random_range(-0.3..0.3));
            bn.running_var.mapv_inplace(|_| rng.random_range(0.5..2.0));
        }
        net
    }

    #[test]
    fn parameter_count() {
        assert_eq!(Network::param_count_formula(3, 2, 3, 100), 20_802);
        for (i, o, l, m) in [(3, 2, 3, 100), (2, 1, 1, 5), (4, 3, 5, 11)] {
            let net = Network::zeros(i, o, l, m).unwrap();
            assert_eq!(net.param_count(), Network::param_count_formula(i, o, l, m));
        }
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = Network::zeros(3, 2, 3, 10).unwrap();
        assert_eq!(net.forward_point(&[0.3, -1.0, 2.0]).unwrap(), vec![0.0, 0.0]);
        assert!(net.forward_point(&[0.3]).is_err());
    }

    #[test]
    fn constant_network_has_zero_gradient() {
        let mut net = random_net(1);
        for d in &mut net.dense[..3] {
            d.w.fill(0.0);
        }
        let jac = net.input_jacobian(ArrayView2::from_shape((1, 3), &[0.1, 0.2, 0.3]).unwrap()).unwrap();
        assert!(jac.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn jacobian_matches_differences() {
        let net = random_net(2);
        let x = [0.2, -0.7, 1.1];
        let jac = net.input_jacobian(ArrayView2::from_shape((1, 3), &x).unwrap()).unwrap();
        for j in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[j] += 1e-6;
            xm[j] -= 1e-6;
            let (p, m) = (net.forward_point(&xp).unwrap(), net.forward_point(&xm).unwrap());
            for i in 0..2 {
                let fd = (p[i] - m[i]) / 2e-6;
                assert!((fd - jac[[0, i, j]]).abs() < 1e-7, "{fd} vs {}", jac[[0, i, j]]);
            }
        }
    }

    #[test]
    fn jet_matches_jacobian_and_differences() {
        let net = random_net(3);
        let x = [0.4, 0.1, -0.5];
        let jac = net.input_jacobian(ArrayView2::from_shape((1, 3), &x).unwrap()).unwrap();
        for i in 0..2 {
            let (v, g, h) = net.jet2(&x, i).unwrap();
            assert!((v - net.forward_point(&x).unwrap()[i]).abs() < 1e-13);
            for j in 0..3 {
                assert!((g[j] - jac[[0, i, j]]).abs() < 1e-12);
                let mut xp = x;
                let mut xm = x;
                xp[j] += 1e-5;
                xm[j] -= 1e-5;
                let gp = net.jet2(&xp, i).unwrap().1;
                let gm = net.jet2(&xm, i).unwrap().1;
                for k in 0..3 {
                    let fd = (gp[k] - gm[k]) / 2e-5;
                    assert!((fd - h[[j, k]]).abs() < 1e-7);
                }
            }
        }
    }

    #[test]
    fn training_gradient_matches_differences() {
        let mut net = random_net(4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Array2::from_shape_fn((6, 3), |_| rng.random_range(-1.0..1.0));
        let y = Array2::from_shape_fn((6, 2), |_| rng.random_range(-1.0..1.0));
        let (_, grad) = net.clone().loss_and_gradient(x.view(), y.view()).unwrap();
        let theta = net.params();
        for idx in (0..theta.len()).step_by(7) {
            let eval = |delta: f64| {
                let mut n = net.clone();
                let mut p = theta.clone();
                p[idx] += delta;
                n.set_params(&p);
                n.loss_and_gradient(x.view(), y.view()).unwrap().0
            };
            let fd = (eval(1e-6) - eval(-1e-6)) / 2e-6;
            assert!((fd - grad[idx]).abs() < 1e-6 * (1.0 + fd.abs()), "param {idx}: {fd} vs {}", grad[idx]);
        }
        net.set_params(&theta);
        assert_eq!(net.params(), theta);
    }

    #[test]
    fn checkpoint_round_trip() {
        let net = random_net(6);
        let mut buf = Vec::new();
        net.write_checkpoint(&mut buf).unwrap();
        assert_eq!(&buf[..8], b"BPDENET1");
        let back = Network::read_checkpoint(&buf[..]).unwrap();
        assert_eq!(back, net);
        assert!(Network::read_checkpoint(&buf[..buf.len() - 8]).is_err());
        assert!(Network::read_checkpoint(&b"NOTANET!"[..]).is_err());
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut p = vec![3.0, -2.0];
        let mut adam = Adam::new(2);
        for _ in 0..2000 {
            let g = vec![2.0 * p[0], 4.0 * p[1]];
            adam.update(&mut p, &g, 0.05);
        }
        assert!(p[0].abs() < 1e-3 && p[1].abs() < 1e-3);
    }
}
