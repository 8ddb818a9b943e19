//! Shared per-agent Q-network and the hypernetwork mixer.
//!
//! All trainable parameters live in one flat vector laid out as
//! `[agent | hyper_w1 | hyper_b1 | hyper_w2 | hyper_v]`, which keeps the
//! optimizer, target copies and checkpoints trivial.

use std::ops::Range;

use rand_chacha::ChaCha8Rng;

use super::nn::{MlpCache, MlpShape};
use crate::dynamics::Action;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetDims {
    pub n_agents: usize,
    pub obs_dim: usize,
    pub state_dim: usize,
    pub hidden: usize,
    pub hidden_layers: usize,
    pub embed: usize,
    pub hyper_hidden: usize,
}

impl NetDims {
    pub fn new(n_agents: usize, obs_dim: usize, state_dim: usize) -> Self {
        Self {
            n_agents,
            obs_dim,
            state_dim,
            hidden: 256,
            hidden_layers: 3,
            embed: 64,
            hyper_hidden: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QmixNet {
    dims: NetDims,
    agent: MlpShape,
    hyper_w1: MlpShape,
    hyper_b1: MlpShape,
    hyper_w2: MlpShape,
    hyper_v: MlpShape,
}

#[derive(Debug, Clone)]
pub struct MixCache {
    rows: usize,
    qs: Vec<f64>,
    w1: MlpCache,
    b1: MlpCache,
    w2: MlpCache,
    v: MlpCache,
    hidden_pre: Vec<f64>,
    hidden: Vec<f64>,
    q_tot: Vec<f64>,
}

impl MixCache {
    pub fn q_tot(&self) -> &[f64] {
        &self.q_tot
    }
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

fn elu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

/// Derivative of `|x|`, taken as 0 at the kink.
fn abs_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl QmixNet {
    pub fn new(dims: NetDims) -> Self {
        assert!(
            dims.n_agents > 0 && dims.hidden_layers > 0,
            "invalid network dims {dims:?}"
        );
        let mut agent_dims = vec![dims.obs_dim];
        agent_dims.extend(std::iter::repeat_n(dims.hidden, dims.hidden_layers));
        agent_dims.push(Action::COUNT);
        let agent = MlpShape::new(&agent_dims, 0);
        let (s, e, hh) = (dims.state_dim, dims.embed, dims.hyper_hidden);
        let hyper_w1 = MlpShape::new(&[s, hh, dims.n_agents * e], agent.end());
        let hyper_b1 = MlpShape::new(&[s, e], hyper_w1.end());
        let hyper_w2 = MlpShape::new(&[s, hh, e], hyper_b1.end());
        let hyper_v = MlpShape::new(&[s, hh, 1], hyper_w2.end());
        Self {
            dims,
            agent,
            hyper_w1,
            hyper_b1,
            hyper_w2,
            hyper_v,
        }
    }

    pub fn dims(&self) -> &NetDims {
        &self.dims
    }

    pub fn n_params(&self) -> usize {
        self.hyper_v.end()
    }

    pub fn agent_params(&self) -> Range<usize> {
        0..self.agent.end()
    }

    pub fn mixer_params(&self) -> Range<usize> {
        self.agent.end()..self.n_params()
    }

    pub fn init_params(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut p = vec![0.0; self.n_params()];
        for shape in [
            &self.agent,
            &self.hyper_w1,
            &self.hyper_b1,
            &self.hyper_w2,
            &self.hyper_v,
        ] {
            shape.init(&mut p, rng);
        }
        p
    }

    pub fn agent_forward(&self, params: &[f64], obs: &[f64], rows: usize) -> MlpCache {
        self.agent.forward(params, obs, rows)
    }

    /// Q-values (`rows × 3`) for a batch of observations.
    pub fn agent_q(&self, params: &[f64], obs: &[f64], rows: usize) -> Vec<f64> {
        self.agent_forward(params, obs, rows).acts.pop().unwrap()
    }

    pub fn agent_backward(&self, params: &[f64], cache: &MlpCache, d_q: &[f64], grad: &mut [f64]) {
        self.agent.backward(params, cache, d_q, grad, false);
    }

    pub fn mix_forward(&self, params: &[f64], qs: &[f64], states: &[f64], rows: usize) -> MixCache {
        let (n, e) = (self.dims.n_agents, self.dims.embed);
        assert_eq!(qs.len(), rows * n, "mixer q batch size");
        let w1 = self.hyper_w1.forward(params, states, rows);
        let b1 = self.hyper_b1.forward(params, states, rows);
        let w2 = self.hyper_w2.forward(params, states, rows);
        let v = self.hyper_v.forward(params, states, rows);
        let mut hidden_pre = vec![0.0; rows * e];
        let mut hidden = vec![0.0; rows * e];
        let mut q_tot = vec![0.0; rows];
        for r in 0..rows {
            let w1r = &w1.output()[r * n * e..(r + 1) * n * e];
            let b1r = &b1.output()[r * e..(r + 1) * e];
            let w2r = &w2.output()[r * e..(r + 1) * e];
            let qr = &qs[r * n..(r + 1) * n];
            let mut total = v.output()[r];
            for j in 0..e {
                let mut h = b1r[j];
                for i in 0..n {
                    h += qr[i] * w1r[i * e + j].abs();
                }
                hidden_pre[r * e + j] = h;
                let z = elu(h);
                hidden[r * e + j] = z;
                total += z * w2r[j].abs();
            }
            q_tot[r] = total;
        }
        MixCache {
            rows,
            qs: qs.to_vec(),
            w1,
            b1,
            w2,
            v,
            hidden_pre,
            hidden,
            q_tot,
        }
    }

    /// Q_tot for each row of per-agent chosen-action values and states.
    pub fn mix(&self, params: &[f64], qs: &[f64], states: &[f64], rows: usize) -> Vec<f64> {
        self.mix_forward(params, qs, states, rows).q_tot
    }

    /// Accumulates mixer and hypernetwork gradients for `d_q_tot` and returns
    /// the gradient with respect to the per-agent inputs (`rows × n_agents`).
    pub fn mix_backward(&self, params: &[f64], cache: &MixCache, d_q_tot: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let (n, e, rows) = (self.dims.n_agents, self.dims.embed, cache.rows);
        assert_eq!(d_q_tot.len(), rows);
        let mut d_w1 = vec![0.0; rows * n * e];
        let mut d_b1 = vec![0.0; rows * e];
        let mut d_w2 = vec![0.0; rows * e];
        let mut d_qs = vec![0.0; rows * n];
        for r in 0..rows {
            let g = d_q_tot[r];
            let w1r = &cache.w1.output()[r * n * e..(r + 1) * n * e];
            let w2r = &cache.w2.output()[r * e..(r + 1) * e];
            let qr = &cache.qs[r * n..(r + 1) * n];
            for j in 0..e {
                let idx = r * e + j;
                d_w2[idx] = g * cache.hidden[idx] * abs_grad(w2r[j]);
                let dh = g * w2r[j].abs() * elu_grad(cache.hidden_pre[idx]);
                d_b1[idx] = dh;
                for i in 0..n {
                    let raw = w1r[i * e + j];
                    d_w1[r * n * e + i * e + j] = qr[i] * dh * abs_grad(raw);
                    d_qs[r * n + i] += raw.abs() * dh;
                }
            }
        }
        self.hyper_w1.backward(params, &cache.w1, &d_w1, grad, false);
        self.hyper_b1.backward(params, &cache.b1, &d_b1, grad, false);
        self.hyper_w2.backward(params, &cache.w2, &d_w2, grad, false);
        self.hyper_v.backward(params, &cache.v, d_q_tot, grad, false);
        d_qs
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn small(n: usize) -> NetDims {
        NetDims {
            hidden: 16,
            hidden_layers: 3,
            embed: 8,
            hyper_hidden: 8,
            ..NetDims::new(n, 6, 10)
        }
    }

    #[test]
    fn parameter_layout_is_contiguous() {
        let net = QmixNet::new(NetDims::new(3, 49, 121));
        let agent = 49 * 256 + 256 + 2 * (256 * 256 + 256) + 256 * 3 + 3;
        assert_eq!(net.agent_params(), 0..agent);
        let w1 = 121 * 64 + 64 + 64 * 192 + 192;
        let b1 = 121 * 64 + 64;
        let w2 = 121 * 64 + 64 + 64 * 64 + 64;
        let v = 121 * 64 + 64 + 64 + 1;
        assert_eq!(net.n_params(), agent + w1 + b1 + w2 + v);
    }

    #[test]
    fn mix_matches_direct_formula() {
        let net = QmixNet::new(small(2));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = net.init_params(&mut rng);
        let s: Vec<f64> = (0..10).map(|_| rng.random::<f64>()).collect();
        let q = [0.3, -1.2];
        let got = net.mix(&p, &q, &s, 1)[0];
        let w1 = net.hyper_w1.forward(&p, &s, 1).acts.pop().unwrap();
        let b1 = net.hyper_b1.forward(&p, &s, 1).acts.pop().unwrap();
        let w2 = net.hyper_w2.forward(&p, &s, 1).acts.pop().unwrap();
        let v = net.hyper_v.forward(&p, &s, 1).acts.pop().unwrap()[0];
        let mut want = v;
        for j in 0..8 {
            let h = b1[j] + q[0] * w1[j].abs() + q[1] * w1[8 + j].abs();
            let z = if h > 0.0 { h } else { h.exp() - 1.0 };
            want += w2[j].abs() * z;
        }
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn zeroed_hypernetworks_give_zero() {
        let net = QmixNet::new(small(3));
        let mut p = net.init_params(&mut ChaCha8Rng::seed_from_u64(5));
        for i in net.mixer_params() {
            p[i] = 0.0;
        }
        let s = vec![0.5; 10];
        for q in [[1.0, 2.0, 3.0], [-5.0, 0.0, 40.0]] {
            assert_eq!(net.mix(&p, &q, &s, 1)[0], 0.0);
        }
    }

    #[test]
    fn raising_one_q_never_lowers_total() {
        let net = QmixNet::new(small(3));
        let p = net.init_params(&mut ChaCha8Rng::seed_from_u64(6));
        let s = vec![0.2; 10];
        let a = net.mix(&p, &[1.0, 1.0, 1.0], &s, 1)[0];
        let b = net.mix(&p, &[1.0, 1.0, 2.0], &s, 1)[0];
        assert!(b >= a);
    }

    #[test]
    fn abs_grad_is_zero_at_kink() {
        assert_eq!(abs_grad(0.0), 0.0);
        assert_eq!(abs_grad(-0.0), 0.0);
        assert_eq!(abs_grad(2.0), 1.0);
        assert_eq!(abs_grad(-2.0), -1.0);
    }
}
