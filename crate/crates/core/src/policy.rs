//! Fixed-architecture MLPs with ELU hidden activations, hand-written reverse
//! mode, a state-independent diagonal Gaussian head and Adam.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::mathcore::RngStream;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

#[inline]
fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

#[inline]
fn elu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

/// Affine layer `y = x·W + b` with `W` stored `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Dense {
            w: Array2::zeros((n_in, n_out)),
            b: Array1::zeros(n_out),
        }
    }

    pub fn n_in(&self) -> usize {
        self.w.nrows()
    }

    pub fn n_out(&self) -> usize {
        self.w.ncols()
    }
}

/// Layer sizes `in → hidden... → out`; ELU on hidden layers, linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Activations saved by [`Mlp::forward_cached`] for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
}

impl Mlp {
    /// Uniform `±sqrt(1/fan_in)` weights, zero biases; the output layer is
    /// multiplied by `out_scale`.
    pub fn new(sizes: &[usize], rng: &mut RngStream, out_scale: f64) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output sizes");
        let n = sizes.len() - 1;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(l, io)| {
                let bound = (1.0 / io[0] as f64).sqrt();
                let scale = if l + 1 == n { out_scale } else { 1.0 };
                let w = Array2::from_shape_fn((io[0], io[1]), |_| {
                    scale * bound * (2.0 * rng.unit() - 1.0)
                });
                Dense {
                    w,
                    b: Array1::zeros(io[1]),
                }
            })
            .collect();
        Mlp { layers }
    }

    /// Builds from explicit layers, checking that consecutive sizes agree.
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("an MLP needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].n_out() != pair[1].n_in() {
                return Err(Error::Shape {
                    what: "layer input",
                    expected: pair[0].n_out(),
                    got: pair[1].n_in(),
                });
            }
        }
        for l in &layers {
            if l.b.len() != l.n_out() {
                return Err(Error::Shape {
                    what: "bias",
                    expected: l.n_out(),
                    got: l.b.len(),
                });
            }
        }
        Ok(Mlp { layers })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].n_in()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].n_out()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.in_dim()];
        s.extend(self.layers.iter().map(|l| l.n_out()));
        s
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.in_dim() {
            return Err(Error::Shape {
                what: "mlp input",
                expected: self.in_dim(),
                got: x.ncols(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let mut h = x.dot(&self.layers[0].w) + &self.layers[0].b;
        for layer in &self.layers[1..] {
            h.mapv_inplace(elu);
            h = h.dot(&layer.w) + &layer.b;
        }
        Ok(h)
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, MlpCache)> {
        self.check_input(&x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len() - 1);
        let mut a = x.to_owned();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let z = a.dot(&layer.w) + &layer.b;
            inputs.push(a);
            if l == last {
                return Ok((z, MlpCache { inputs, pre }));
            }
            a = z.mapv(elu);
            pre.push(z);
        }
        unreachable!("loop returns at the output layer")
    }

    /// Parameter gradients of `Σ grad_out ⊙ f(x)`.
    pub fn backward(&self, cache: &MlpCache, grad_out: ArrayView2<f64>) -> Vec<Dense> {
        let n = self.layers.len();
        let mut grads: Vec<Dense> = Vec::with_capacity(n);
        let mut g = grad_out.to_owned();
        for l in (0..n).rev() {
            let dw = cache.inputs[l].t().dot(&g).as_standard_layout().into_owned();
            let db = g.sum_axis(Axis(0));
            if l > 0 {
                let mut gi = g.dot(&self.layers[l].w.t());
                gi.zip_mut_with(&cache.pre[l - 1], |v, z| *v *= elu_grad(*z));
                g = gi;
            }
            grads.push(Dense { w: dw, b: db });
        }
        grads.reverse();
        grads
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.w.as_slice().unwrap(), l.b.as_slice().unwrap()])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.w.as_slice_mut().unwrap(), l.b.as_slice_mut().unwrap()])
            .collect()
    }
}

/// Flattens layer gradients in the same order as [`Mlp::tensors`].
pub fn grad_tensors(grads: &[Dense]) -> Vec<&[f64]> {
    grads
        .iter()
        .flat_map(|l| [l.w.as_slice().unwrap(), l.b.as_slice().unwrap()])
        .collect()
}

/// Log-density of a diagonal Gaussian.
#[inline]
pub fn gaussian_log_prob(a: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    let mut lp = 0.0;
    for i in 0..a.len() {
        let z = (a[i] - mean[i]) * (-log_std[i]).exp();
        lp += -0.5 * z * z - log_std[i] - HALF_LN_2PI;
    }
    lp
}

/// Draws `a = μ + σ⊙ε` row by row, row `i` using `rngs[i]`.
pub fn sample_and_logprob(
    mean: ArrayView2<f64>,
    log_std: &[f64],
    rngs: &mut [RngStream],
) -> Result<(Array2<f64>, Vec<f64>)> {
    if mean.ncols() != log_std.len() {
        return Err(Error::Shape {
            what: "log_std",
            expected: mean.ncols(),
            got: log_std.len(),
        });
    }
    if rngs.len() != mean.nrows() {
        return Err(Error::Shape {
            what: "rng streams",
            expected: mean.nrows(),
            got: rngs.len(),
        });
    }
    let std: Vec<f64> = log_std.iter().map(|v| v.exp()).collect();
    let mut actions = Array2::zeros(mean.raw_dim());
    let mut logp = Vec::with_capacity(mean.nrows());
    for ((mut row, mu), rng) in actions.rows_mut().into_iter().zip(mean.rows()).zip(rngs.iter_mut()) {
        let mut lp = 0.0;
        for i in 0..row.len() {
            let eps = rng.standard_normal();
            row[i] = mu[i] + std[i] * eps;
            lp += -0.5 * eps * eps - log_std[i] - HALF_LN_2PI;
        }
        logp.push(lp);
    }
    Ok((actions, logp))
}

/// Actor (Gaussian mean network plus free log-std) and critic.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorCritic {
    pub actor: Mlp,
    pub log_std: Array1<f64>,
    pub critic: Mlp,
}

impl ActorCritic {
    pub fn new(
        obs_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        critic_hidden: &[usize],
        init_std: f64,
        rng: &mut RngStream,
    ) -> Self {
        let mut a = vec![obs_dim];
        a.extend_from_slice(hidden);
        a.push(action_dim);
        let mut c = vec![obs_dim];
        c.extend_from_slice(critic_hidden);
        c.push(1);
        ActorCritic {
            actor: Mlp::new(&a, rng, 0.01),
            log_std: Array1::from_elem(action_dim, init_std.ln()),
            critic: Mlp::new(&c, rng, 1.0),
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.actor.in_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.actor.out_dim()
    }

    pub fn values(&self, obs: ArrayView2<f64>) -> Result<Vec<f64>> {
        Ok(self.critic.forward(obs)?.column(0).to_vec())
    }

    /// Actor tensors in optimizer order: layers, then log-std.
    pub fn actor_tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.actor.tensors_mut();
        t.push(self.log_std.as_slice_mut().unwrap());
        t
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Shape {
                what: "adam tensors",
                expected: params.len(),
                got: grads.len(),
            });
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        for (k, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() || self.m[k].len() != p.len() {
                return Err(Error::Shape {
                    what: "adam tensor",
                    expected: p.len(),
                    got: g.len(),
                });
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn zero_net_outputs_zero() {
        let mut rng = RngStream::new(0, 0);
        let mut net = Mlp::new(&[3, 4, 2], &mut rng, 1.0);
        for t in net.tensors_mut() {
            t.iter_mut().for_each(|v| *v = 0.0);
        }
        let y = net.forward(array![[1.0, -2.0, 3.0]].view()).unwrap();
        assert_eq!(y, array![[0.0, 0.0]]);
    }

    #[test]
    fn elu_through_unit_net() {
        // 1 → 1 → 1 with unit weights: output = ELU(x).
        let net = Mlp::from_layers(vec![
            Dense { w: array![[1.0]], b: array![0.0] },
            Dense { w: array![[1.0]], b: array![0.0] },
        ])
        .unwrap();
        let y = net.forward(array![[-1.0]].view()).unwrap();
        assert_abs_diff_eq!(y[[0, 0]], (-1.0f64).exp() - 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(y[[0, 0]], -0.63212, epsilon = 1e-5);
    }

    #[test]
    fn identical_rows_identical_outputs() {
        let mut rng = RngStream::new(1, 0);
        let net = Mlp::new(&[5, 8, 3], &mut rng, 1.0);
        let x = array![[0.1, 0.2, -0.3, 0.4, 0.5], [0.1, 0.2, -0.3, 0.4, 0.5]];
        let y = net.forward(x.view()).unwrap();
        assert_eq!(y.row(0), y.row(1));
        assert!(net.forward(array![[1.0, 2.0]].view()).is_err());
    }

    #[test]
    fn mismatched_layers_rejected() {
        assert!(Mlp::from_layers(vec![Dense::zeros(2, 3), Dense::zeros(4, 1)]).is_err());
    }

    #[test]
    fn zero_upstream_zero_grads() {
        let mut rng = RngStream::new(2, 0);
        let net = Mlp::new(&[4, 8, 8, 2], &mut rng, 1.0);
        let x = Array2::from_shape_fn((3, 4), |(i, j)| (i as f64 - j as f64) * 0.3);
        let (_, cache) = net.forward_cached(x.view()).unwrap();
        let g = net.backward(&cache, Array2::zeros((3, 2)).view());
        assert!(grad_tensors(&g).iter().all(|t| t.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn batch_gradient_is_sum_of_sample_gradients() {
        let mut rng = RngStream::new(3, 0);
        let net = Mlp::new(&[4, 8, 8, 2], &mut rng, 1.0);
        let x = Array2::from_shape_fn((3, 4), |(i, j)| ((i * 4 + j) as f64 * 0.37).sin());
        let up = Array2::from_shape_fn((3, 2), |(i, j)| ((i + 2 * j) as f64 * 0.91).cos());
        let (_, cache) = net.forward_cached(x.view()).unwrap();
        let full = net.backward(&cache, up.view());
        let mut summed: Vec<Vec<f64>> = grad_tensors(&full).iter().map(|t| vec![0.0; t.len()]).collect();
        for r in 0..3 {
            let xr = x.slice(ndarray::s![r..r + 1, ..]);
            let ur = up.slice(ndarray::s![r..r + 1, ..]);
            let (_, c) = net.forward_cached(xr).unwrap();
            let g = net.backward(&c, ur);
            for (acc, t) in summed.iter_mut().zip(grad_tensors(&g)) {
                acc.iter_mut().zip(t).for_each(|(a, v)| *a += v);
            }
        }
        for (a, b) in summed.iter().zip(grad_tensors(&full)) {
            for (x, y) in a.iter().zip(b) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-12);
            }
        }
    }

    /// Max relative error of backward against central differences of
    /// `L = Σ u ⊙ f(x)`.
    fn fd_max_rel_error(sizes: &[usize], rows: usize, seed: u64) -> f64 {
        let mut rng = RngStream::new(seed, 0);
        let mut net = Mlp::new(sizes, &mut rng, 1.0);
        for t in net.tensors_mut() {
            t.iter_mut().for_each(|v| *v += 0.1 * rng.standard_normal());
        }
        let x = Array2::from_shape_fn((rows, sizes[0]), |_| rng.standard_normal());
        let u = Array2::from_shape_fn((rows, *sizes.last().unwrap()), |_| rng.standard_normal());
        let (_, cache) = net.forward_cached(x.view()).unwrap();
        let grads = net.backward(&cache, u.view());
        let analytic: Vec<Vec<f64>> = grad_tensors(&grads).iter().map(|t| t.to_vec()).collect();
        let loss = |n: &Mlp| (n.forward(x.view()).unwrap() * &u).sum();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for (ti, g) in analytic.iter().enumerate() {
            for k in 0..g.len() {
                let mut p = net.clone();
                p.tensors_mut()[ti][k] += h;
                let mut m = net.clone();
                m.tensors_mut()[ti][k] -= h;
                let fd = (loss(&p) - loss(&m)) / (2.0 * h);
                let rel = (fd - g[k]).abs() / fd.abs().max(g[k].abs()).max(1e-6);
                worst = worst.max(rel);
            }
        }
        worst
    }

    #[test]
    fn backward_matches_finite_differences() {
        let e = fd_max_rel_error(&[4, 8, 8, 2], 5, 21);
        assert!(e < 1e-4, "relative error {e}");
    }

    #[test]
    fn log_prob_closed_forms() {
        let d = 4;
        let mean = vec![0.3; d];
        let lp = gaussian_log_prob(&mean, &mean, &vec![0.0; d]);
        assert_abs_diff_eq!(lp, -(d as f64) / 2.0 * (2.0 * std::f64::consts::PI).ln(), epsilon = 1e-12);
        let lp2 = gaussian_log_prob(&mean, &mean, &vec![2f64.ln(); d]);
        assert_abs_diff_eq!(lp - lp2, d as f64 * 2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn sampled_logprob_matches_density() {
        let mean = array![[0.5, -1.0, 2.0]];
        let log_std = [0.1, -0.3, 0.7];
        let mut rngs = vec![RngStream::new(4, 0)];
        let (a, lp) = sample_and_logprob(mean.view(), &log_std, &mut rngs).unwrap();
        let direct = gaussian_log_prob(a.row(0).as_slice().unwrap(), mean.row(0).as_slice().unwrap(), &log_std);
        assert_abs_diff_eq!(lp[0], direct, epsilon = 1e-12);
    }

    #[test]
    fn sample_mean_converges() {
        let n = 1_000_000;
        let mean = Array2::from_elem((1, 1), 1.5);
        let log_std = [0.5f64.ln()];
        let mut rngs = vec![RngStream::new(5, 9)];
        let mut acc = 0.0;
        for _ in 0..n {
            let (a, _) = sample_and_logprob(mean.view(), &log_std, &mut rngs).unwrap();
            acc += a[[0, 0]];
        }
        let m = acc / n as f64;
        assert!((m - 1.5).abs() < 3.0 * 0.5 / 1000.0, "mean {m}");
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut p = vec![0.5, -1.0];
        let mut opt = Adam::new(1e-3);
        opt.step(&mut [&mut p[..]], &[&[0.0, 0.0][..]]).unwrap();
        assert_eq!(p, vec![0.5, -1.0]);
    }

    #[test]
    fn adam_first_step() {
        let mut p = vec![1.0];
        let mut opt = Adam::new(1e-4);
        let g = 0.37;
        opt.step(&mut [&mut p[..]], &[&[g][..]]).unwrap();
        assert_abs_diff_eq!(p[0], 1.0 - 1e-4 * g / (g + 1e-8), epsilon = 1e-15);
    }

    #[test]
    fn adam_second_identical_step_follows_recurrence() {
        // Scalar recurrence written out by hand.
        let (b1, b2, eps, lr, g) = (0.9f64, 0.999f64, 1e-8, 1e-3, -0.2f64);
        let m1 = (1.0 - b1) * g;
        let v1 = (1.0 - b2) * g * g;
        let s1 = lr * (m1 / (1.0 - b1)) / ((v1 / (1.0 - b2)).sqrt() + eps);
        let m2 = b1 * m1 + (1.0 - b1) * g;
        let v2 = b2 * v1 + (1.0 - b2) * g * g;
        let s2 = lr * (m2 / (1.0 - b1 * b1)) / ((v2 / (1.0 - b2 * b2)).sqrt() + eps);

        let mut p = vec![0.0];
        let mut opt = Adam::new(lr);
        opt.step(&mut [&mut p[..]], &[&[g][..]]).unwrap();
        assert_abs_diff_eq!(p[0], -s1, epsilon = 1e-16);
        opt.step(&mut [&mut p[..]], &[&[g][..]]).unwrap();
        assert_abs_diff_eq!(p[0], -s1 - s2, epsilon = 1e-16);
        // With a constant gradient the bias-corrected step stays ≈ lr.
        assert_abs_diff_eq!(s2 / s1, 1.0, epsilon = 1e-6);
    }
}
