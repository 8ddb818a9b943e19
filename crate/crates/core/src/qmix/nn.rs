//! Dense layers over a flat f64 parameter vector, with hand-written
//! backpropagation. Matrices are row-major; a batch is `rows × dim`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// `c = a · b (+ c if accumulate)`, with `a` given as `m × k` and `b` as
/// `k × n` through explicit row/column strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() >= m * n);
    if k > 0 {
        assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
        assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    }
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above keep every strided access inside the slices.
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
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Linear,
}

/// Layout of a multilayer perceptron inside a flat parameter vector. Hidden
/// layers use rectifiers; the output layer is linear.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpShape {
    dims: Vec<usize>,
    offset: usize,
    len: usize,
}

/// Post-activation values of every layer, input first.
#[derive(Debug, Clone)]
pub struct MlpCache {
    pub rows: usize,
    pub acts: Vec<Vec<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("cache has at least the input")
    }
}

impl MlpShape {
    pub fn new(dims: &[usize], offset: usize) -> Self {
        assert!(
            dims.len() >= 2 && dims.iter().all(|&d| d > 0),
            "bad layer dims {dims:?}"
        );
        let len = dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Self {
            dims: dims.to_vec(),
            offset,
            len,
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn end(&self) -> usize {
        self.offset + self.len
    }

    fn n_layers(&self) -> usize {
        self.dims.len() - 1
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.n_layers() {
            Activation::Linear
        } else {
            Activation::Relu
        }
    }

    /// (weight start, bias start) of `layer` in the flat vector.
    fn layer_offsets(&self, layer: usize) -> (usize, usize) {
        let mut off = self.offset;
        for w in self.dims.windows(2).take(layer) {
            off += w[0] * w[1] + w[1];
        }
        (off, off + self.dims[layer] * self.dims[layer + 1])
    }

    /// Uniform(±1/√fan_in) weights and biases.
    pub fn init(&self, params: &mut [f64], rng: &mut ChaCha8Rng) {
        for l in 0..self.n_layers() {
            let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let (w, _) = self.layer_offsets(l);
            for p in &mut params[w..w + fan_in * fan_out + fan_out] {
                *p = rng.random_range(-bound..bound);
            }
        }
    }

    pub fn forward(&self, params: &[f64], input: &[f64], rows: usize) -> MlpCache {
        assert_eq!(input.len(), rows * self.input_dim(), "mlp input size");
        let mut acts = Vec::with_capacity(self.dims.len());
        acts.push(input.to_vec());
        for l in 0..self.n_layers() {
            let (din, dout) = (self.dims[l], self.dims[l + 1]);
            let (w, b) = self.layer_offsets(l);
            let mut out = vec![0.0; rows * dout];
            gemm(
                rows,
                din,
                dout,
                &acts[l],
                (din, 1),
                &params[w..b],
                (dout, 1),
                &mut out,
                false,
            );
            let bias = &params[b..b + dout];
            let relu = self.activation(l) == Activation::Relu;
            for row in out.chunks_exact_mut(dout) {
                for (v, bb) in row.iter_mut().zip(bias) {
                    *v += bb;
                    if relu && *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            acts.push(out);
        }
        MlpCache { rows, acts }
    }

    /// Accumulates parameter gradients for upstream gradient `d_out` into
    /// `grad` and returns the gradient with respect to the input when asked.
    pub fn backward(
        &self,
        params: &[f64],
        cache: &MlpCache,
        d_out: &[f64],
        grad: &mut [f64],
        want_input_grad: bool,
    ) -> Option<Vec<f64>> {
        let rows = cache.rows;
        assert_eq!(d_out.len(), rows * self.output_dim(), "mlp upstream gradient size");
        let mut delta = d_out.to_vec();
        for l in (0..self.n_layers()).rev() {
            let (din, dout) = (self.dims[l], self.dims[l + 1]);
            if self.activation(l) == Activation::Relu {
                for (d, &a) in delta.iter_mut().zip(&cache.acts[l + 1]) {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let (w, b) = self.layer_offsets(l);
            let x = &cache.acts[l];
            // dW += xᵀ · δ
            gemm(din, rows, dout, x, (1, din), &delta, (dout, 1), &mut grad[w..b], true);
            let gb = &mut grad[b..b + dout];
            for row in delta.chunks_exact(dout) {
                for (g, d) in gb.iter_mut().zip(row) {
                    *g += d;
                }
            }
            if l == 0 && !want_input_grad {
                return None;
            }
            // δ_prev = δ · Wᵀ
            let mut prev = vec![0.0; rows * din];
            gemm(
                rows,
                dout,
                din,
                &delta,
                (dout, 1),
                &params[w..b],
                (1, dout),
                &mut prev,
                false,
            );
            delta = prev;
        }
        Some(delta)
    }
}

/// Adaptive-moment optimizer over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), grad.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t.min(i32::MAX as u64) as i32);
        let c2 = 1.0 - self.beta2.powi(self.t.min(i32::MAX as u64) as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Rescales `grad` so its Euclidean norm is at most `max_norm`; returns the
/// norm before clipping.
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

    fn naive_forward(shape: &MlpShape, p: &[f64], x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        let d = shape.dims();
        for l in 0..d.len() - 1 {
            let (w, b) = shape.layer_offsets(l);
            let mut out = vec![0.0; d[l + 1]];
            for j in 0..d[l + 1] {
                let mut s = p[b + j];
                for i in 0..d[l] {
                    s += a[i] * p[w + i * d[l + 1] + j];
                }
                out[j] = if l + 2 < d.len() { s.max(0.0) } else { s };
            }
            a = out;
        }
        a
    }

    #[test]
    fn forward_matches_naive_loops() {
        let shape = MlpShape::new(&[5, 7, 6, 3], 4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = vec![0.0; shape.end()];
        shape.init(&mut p, &mut rng);
        let x: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
        let out = shape.forward(&p, &x, 2);
        for r in 0..2 {
            let want = naive_forward(&shape, &p, &x[r * 5..r * 5 + 5]);
            for (a, b) in out.output()[r * 3..r * 3 + 3].iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert!(p[..4].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let shape = MlpShape::new(&[4, 6, 2], 0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = vec![0.0; shape.len()];
        shape.init(&mut p, &mut rng);
        let x: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let up: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |p: &[f64], x: &[f64]| -> f64 {
            shape
                .forward(p, x, 3)
                .output()
                .iter()
                .zip(&up)
                .map(|(a, b)| a * b)
                .sum()
        };
        let cache = shape.forward(&p, &x, 3);
        let mut g = vec![0.0; p.len()];
        let dx = shape.backward(&p, &cache, &up, &mut g, true).unwrap();
        let h = 1e-6;
        for i in 0..p.len() {
            let (mut a, mut b) = (p.clone(), p.clone());
            a[i] += h;
            b[i] -= h;
            let fd = (loss(&a, &x) - loss(&b, &x)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-7, "param {i}: {fd} vs {}", g[i]);
        }
        for i in 0..x.len() {
            let (mut a, mut b) = (x.clone(), x.clone());
            a[i] += h;
            b[i] -= h;
            let fd = (loss(&p, &a) - loss(&p, &b)) / (2.0 * h);
            assert!((fd - dx[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut p = vec![3.0, -2.0];
        let mut opt = Adam::new(2, 0.05);
        for _ in 0..2000 {
            let g = vec![2.0 * p[0], 2.0 * p[1]];
            opt.step(&mut p, &g);
        }
        assert!(p[0].abs() < 1e-3 && p[1].abs() < 1e-3, "{p:?}");
    }

    #[test]
    fn clipping_caps_norm() {
        let mut g = vec![30.0, 40.0];
        assert_eq!(clip_grad_norm(&mut g, 10.0), 50.0);
        assert!((g[0] - 6.0).abs() < 1e-12 && (g[1] - 8.0).abs() < 1e-12);
        let mut small = vec![1.0, 1.0];
        clip_grad_norm(&mut small, 10.0);
        assert_eq!(small, vec![1.0, 1.0]);
    }
}
