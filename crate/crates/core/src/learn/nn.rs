//! Dense networks with manual backprop over row-major batches.

use rand::Rng;
use rand_distr::{Bernoulli, Distribution, Uniform};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputActivation {
    Identity,
    Tanh,
}

/// Fully connected network: ReLU hidden layers, optional tanh output,
/// optional inverted dropout after each hidden activation.
///
/// Parameters live in one flat vector, layer by layer, each layer storing
/// its `out × in` weights row-major followed by `out` biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    sizes: Vec<usize>,
    pub params: Vec<f64>,
    output: OutputActivation,
    dropout: f64,
}

/// Intermediate values kept by a training forward pass.
#[derive(Debug, Clone)]
pub struct Cache {
    batch: usize,
    /// Input to each layer (after activation and dropout of the previous).
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each hidden layer.
    pre: Vec<Vec<f64>>,
    /// Dropout scale per hidden unit (0 or 1/(1-p)); empty without dropout.
    masks: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl Cache {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

/// `C = alpha * op(A) op(B) + beta * C` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], rsa: usize, csa: usize, b: &[f64], rsb: usize, csb: usize, beta: f64, c: &mut [f64], rsc: usize) {
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: callers pass slices at least as long as the strided extents.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

impl DenseNet {
    /// Uniform `±1/sqrt(fan_in)` initialization. With `zero_last` the output
    /// layer starts at exactly zero.
    pub fn new<R: Rng>(sizes: &[usize], output: OutputActivation, dropout: f64, zero_last: bool, rng: &mut R) -> DenseNet {
        assert!(sizes.len() >= 2, "network needs input and output sizes");
        assert!((0.0..1.0).contains(&dropout));
        let mut params = Vec::new();
        let layers = sizes.len() - 1;
        for l in 0..layers {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let count = fan_out * fan_in + fan_out;
            if zero_last && l == layers - 1 {
                params.extend(std::iter::repeat_n(0.0, count));
            } else {
                let bound = 1.0 / (fan_in as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                params.extend((0..count).map(|_| dist.sample(rng)));
            }
        }
        DenseNet {
            sizes: sizes.to_vec(),
            params,
            output,
            dropout,
        }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn dropout(&self) -> f64 {
        self.dropout
    }

    fn layer_offsets(&self, l: usize) -> (usize, usize, usize) {
        let mut off = 0;
        for i in 0..l {
            off += self.sizes[i + 1] * self.sizes[i] + self.sizes[i + 1];
        }
        let w = self.sizes[l + 1] * self.sizes[l];
        (off, off + w, off + w + self.sizes[l + 1])
    }

    fn affine(&self, l: usize, x: &[f64], batch: usize) -> Vec<f64> {
        let (fi, fo) = (self.sizes[l], self.sizes[l + 1]);
        let (w0, b0, _) = self.layer_offsets(l);
        let w = &self.params[w0..b0];
        let b = &self.params[b0..b0 + fo];
        let mut y = Vec::with_capacity(batch * fo);
        for _ in 0..batch {
            y.extend_from_slice(b);
        }
        gemm(batch, fi, fo, x, fi, 1, w, 1, fi, 1.0, &mut y, fo);
        y
    }

    /// Inference without dropout.
    pub fn predict(&self, x: &[f64], batch: usize) -> Vec<f64> {
        debug_assert_eq!(x.len(), batch * self.input_dim());
        let layers = self.sizes.len() - 1;
        let mut h = x.to_vec();
        for l in 0..layers {
            let mut y = self.affine(l, &h, batch);
            if l + 1 < layers {
                y.iter_mut().for_each(|v| *v = v.max(0.0));
            } else if self.output == OutputActivation::Tanh {
                y.iter_mut().for_each(|v| *v = v.tanh());
            }
            h = y;
        }
        h
    }

    /// Training forward pass. Dropout masks are drawn from `rng` when given
    /// and the net has a nonzero rate; otherwise dropout is off.
    pub fn forward<R: Rng>(&self, x: &[f64], batch: usize, rng: Option<&mut R>) -> Cache {
        debug_assert_eq!(x.len(), batch * self.input_dim());
        let layers = self.sizes.len() - 1;
        let mut inputs = Vec::with_capacity(layers);
        let mut pre = Vec::with_capacity(layers - 1);
        let mut masks = Vec::new();
        let mut rng = rng.filter(|_| self.dropout > 0.0);
        let keep = 1.0 - self.dropout;
        let mut h = x.to_vec();
        for l in 0..layers {
            let mut y = self.affine(l, &h, batch);
            inputs.push(h);
            if l + 1 < layers {
                pre.push(y.clone());
                y.iter_mut().for_each(|v| *v = v.max(0.0));
                if let Some(r) = rng.as_deref_mut() {
                    let bern = Bernoulli::new(keep).expect("valid rate");
                    let mask: Vec<f64> = (0..y.len()).map(|_| if bern.sample(r) { 1.0 / keep } else { 0.0 }).collect();
                    y.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
                    masks.push(mask);
                }
            } else if self.output == OutputActivation::Tanh {
                y.iter_mut().for_each(|v| *v = v.tanh());
            }
            h = y;
        }
        Cache {
            batch,
            inputs,
            pre,
            masks,
            output: h,
        }
    }

    /// Gradients of `sum(dout · output)` with respect to the parameters and
    /// the input, given upstream gradient `dout` (same shape as the output).
    pub fn backward(&self, cache: &Cache, dout: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let batch = cache.batch;
        let layers = self.sizes.len() - 1;
        let mut grad = vec![0.0; self.params.len()];
        let mut d = dout.to_vec();
        if self.output == OutputActivation::Tanh {
            d.iter_mut().zip(&cache.output).for_each(|(g, y)| *g *= 1.0 - y * y);
        }
        for l in (0..layers).rev() {
            let (fi, fo) = (self.sizes[l], self.sizes[l + 1]);
            let (w0, b0, end) = self.layer_offsets(l);
            let x = &cache.inputs[l];
            {
                let (gw, gb) = grad[w0..end].split_at_mut(b0 - w0);
                // dW = dᵀ X
                gemm(fo, batch, fi, &d, 1, fo, x, fi, 1, 0.0, gw, fi);
                for row in d.chunks_exact(fo) {
                    gb.iter_mut().zip(row).for_each(|(g, v)| *g += v);
                }
            }
            // dX = d W
            let mut dx = vec![0.0; batch * fi];
            gemm(batch, fo, fi, &d, fo, 1, &self.params[w0..b0], fi, 1, 0.0, &mut dx, fi);
            if l > 0 {
                if let Some(mask) = cache.masks.get(l - 1) {
                    dx.iter_mut().zip(mask).for_each(|(g, m)| *g *= m);
                }
                dx.iter_mut().zip(&cache.pre[l - 1]).for_each(|(g, p)| {
                    if *p <= 0.0 {
                        *g = 0.0;
                    }
                });
            }
            d = dx;
        }
        (grad, d)
    }

    /// `self ← tau·other + (1 − tau)·self`.
    pub fn polyak_from(&mut self, other: &DenseNet, tau: f64) {
        debug_assert_eq!(self.params.len(), other.params.len());
        for (t, s) in self.params.iter_mut().zip(&other.params) {
            *t = tau * s + (1.0 - tau) * *t;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }
}

/// Adam over a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Descends along `grad`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / b1t;
            let vh = self.v[i] / b2t;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Rescales `grad` in place so its L2 norm is at most `max_norm`.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    type NoRng = ChaCha8Rng;

    fn loss(net: &DenseNet, x: &[f64], batch: usize, w: &[f64]) -> f64 {
        net.predict(x, batch).iter().zip(w).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn linear_layer_gradient_is_exact() {
        let mut net = DenseNet::new(&[2, 1], OutputActivation::Identity, 0.0, false, &mut ChaCha8Rng::seed_from_u64(0));
        net.params = vec![0.5, -2.0, 0.25];
        let x = [3.0, 4.0];
        let cache = net.forward::<NoRng>(&x, 1, None);
        assert_eq!(cache.output(), &[0.5 * 3.0 - 2.0 * 4.0 + 0.25]);
        let (g, dx) = net.backward(&cache, &[1.0]);
        assert_eq!(g, vec![3.0, 4.0, 1.0]);
        assert_eq!(dx, vec![0.5, -2.0]);
    }

    #[test]
    fn deep_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for output in [OutputActivation::Identity, OutputActivation::Tanh] {
            let net = DenseNet::new(&[5, 8, 7, 3], output, 0.0, false, &mut rng);
            let batch = 4;
            let x: Vec<f64> = (0..batch * 5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let w: Vec<f64> = (0..batch * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let cache = net.forward::<NoRng>(&x, batch, None);
            let (g, dx) = net.backward(&cache, &w);
            let h = 1e-5;
            let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-6);
            for i in 0..net.num_params() {
                let mut p = net.clone();
                p.params[i] += h;
                let up = loss(&p, &x, batch, &w);
                p.params[i] -= 2.0 * h;
                let down = loss(&p, &x, batch, &w);
                let fd = (up - down) / (2.0 * h);
                assert!(rel(fd, g[i]) < 1e-4 || (fd - g[i]).abs() < 1e-9, "param {i}: {fd} vs {}", g[i]);
            }
            for i in 0..x.len() {
                let mut xp = x.clone();
                xp[i] += h;
                let up = loss(&net, &xp, batch, &w);
                xp[i] -= 2.0 * h;
                let down = loss(&net, &xp, batch, &w);
                let fd = (up - down) / (2.0 * h);
                assert!(rel(fd, dx[i]) < 1e-4 || (fd - dx[i]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn dropout_gradients_match_with_fixed_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = DenseNet::new(&[4, 16, 16, 1], OutputActivation::Identity, 0.5, false, &mut rng);
        let x: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a = net.forward(&x, 2, Some(&mut ChaCha8Rng::seed_from_u64(11)));
        let b = net.forward(&x, 2, Some(&mut ChaCha8Rng::seed_from_u64(11)));
        assert_eq!(a.output(), b.output());
        let (g, _) = net.backward(&a, &[1.0, 1.0]);
        let h = 1e-6;
        for i in (0..net.num_params()).step_by(7) {
            let mut p = net.clone();
            p.params[i] += h;
            let up: f64 = p.forward(&x, 2, Some(&mut ChaCha8Rng::seed_from_u64(11))).output().iter().sum();
            p.params[i] -= 2.0 * h;
            let down: f64 = p.forward(&x, 2, Some(&mut ChaCha8Rng::seed_from_u64(11))).output().iter().sum();
            let fd = (up - down) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6, "param {i}");
        }
    }

    #[test]
    fn predict_matches_forward_without_dropout() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = DenseNet::new(&[3, 5, 2], OutputActivation::Tanh, 0.5, false, &mut rng);
        let x = [0.1, -0.2, 0.3, 1.0, 2.0, -3.0];
        assert_eq!(net.predict(&x, 2), net.forward::<NoRng>(&x, 2, None).output());
    }

    #[test]
    fn zero_last_layer_outputs_zero() {
        let net = DenseNet::new(&[3, 5, 2], OutputActivation::Tanh, 0.0, true, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(net.predict(&[1.0, 2.0, 3.0], 1), vec![0.0, 0.0]);
    }

    #[test]
    fn polyak_with_unit_tau_copies() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = DenseNet::new(&[3, 4, 2], OutputActivation::Identity, 0.0, false, &mut rng);
        let mut b = DenseNet::new(&[3, 4, 2], OutputActivation::Identity, 0.0, false, &mut rng);
        b.polyak_from(&a, 1.0);
        assert_eq!(a, b);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut p = vec![3.0, -2.0];
        let mut opt = Adam::new(2, 0.1);
        for _ in 0..500 {
            let g: Vec<f64> = p.iter().map(|x| 2.0 * x).collect();
            opt.step(&mut p, &g);
        }
        assert!(p.iter().all(|x| x.abs() < 1e-3));
    }
}
