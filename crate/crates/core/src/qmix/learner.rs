//! Action selection and the TD update.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::buffer::{Batch, ReplayBuffer};
use super::network::QmixNet;
use super::nn::{clip_grad_norm, Adam};
use crate::dynamics::Action;
use crate::{Error, Result};

/// Index of the largest value; ties go to the lowest index.
pub fn greedy_index(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = i;
        }
    }
    best
}

/// ε-greedy over one agent's Q-values.
pub fn select_from_q(q: &[f64], epsilon: f64, rng: &mut ChaCha8Rng) -> Action {
    let idx = if rng.random::<f64>() < epsilon {
        rng.random_range(0..Action::COUNT)
    } else {
        greedy_index(q)
    };
    Action::from_index(idx).expect("index below action count")
}

/// Decentralized selection: each agent acts on its own observation only.
pub fn select_actions(
    net: &QmixNet,
    params: &[f64],
    observations: &[Vec<f64>],
    epsilon: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Action>> {
    let obs_dim = net.dims().obs_dim;
    if let Some(bad) = observations.iter().find(|o| o.len() != obs_dim) {
        return Err(Error::DimensionMismatch {
            what: "observation".into(),
            expected: obs_dim,
            found: bad.len(),
        });
    }
    let flat: Vec<f64> = observations.iter().flatten().copied().collect();
    let q = net.agent_q(params, &flat, observations.len());
    Ok(q.chunks_exact(Action::COUNT)
        .map(|qi| select_from_q(qi, epsilon, rng))
        .collect())
}

/// `y = scale·r + γ·(1 − terminal)·Q_tot_target(s′, per-agent greedy a′)`.
pub fn td_targets(net: &QmixNet, target_params: &[f64], batch: &Batch, gamma: f64, reward_scale: f64) -> Vec<f64> {
    let n = net.dims().n_agents;
    let q_next = net.agent_q(target_params, &batch.next_obs, batch.rows * n);
    let best: Vec<f64> = q_next
        .chunks_exact(Action::COUNT)
        .map(|q| q.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let q_tot_next = net.mix(target_params, &best, &batch.next_states, batch.rows);
    (0..batch.rows)
        .map(|r| {
            let cont = if batch.terminals[r] { 0.0 } else { 1.0 };
            reward_scale * batch.rewards[r] + gamma * cont * q_tot_next[r]
        })
        .collect()
}

fn chosen_q(q: &[f64], actions: &[usize]) -> Vec<f64> {
    q.chunks_exact(Action::COUNT)
        .zip(actions)
        .map(|(qi, &a)| qi[a])
        .collect()
}

/// Mean squared TD error of Q_tot at the taken joint actions.
pub fn td_loss(net: &QmixNet, params: &[f64], batch: &Batch, targets: &[f64]) -> f64 {
    let n = net.dims().n_agents;
    let q = net.agent_q(params, &batch.obs, batch.rows * n);
    let qs = chosen_q(&q, &batch.actions);
    let q_tot = net.mix(params, &qs, &batch.states, batch.rows);
    q_tot.iter().zip(targets).map(|(a, y)| (a - y).powi(2)).sum::<f64>() / batch.rows as f64
}

/// Loss and its gradient with respect to every online parameter, targets
/// held fixed.
pub fn loss_and_grad(net: &QmixNet, params: &[f64], batch: &Batch, targets: &[f64]) -> (f64, Vec<f64>) {
    let n = net.dims().n_agents;
    let rows = batch.rows;
    let agent_cache = net.agent_forward(params, &batch.obs, rows * n);
    let qs = chosen_q(agent_cache.output(), &batch.actions);
    let mix_cache = net.mix_forward(params, &qs, &batch.states, rows);
    let err: Vec<f64> = mix_cache.q_tot().iter().zip(targets).map(|(a, y)| a - y).collect();
    let loss = err.iter().map(|e| e * e).sum::<f64>() / rows as f64;
    let d_q_tot: Vec<f64> = err.iter().map(|e| 2.0 * e / rows as f64).collect();

    let mut grad = vec![0.0; net.n_params()];
    let d_qs = net.mix_backward(params, &mix_cache, &d_q_tot, &mut grad);
    let mut d_q = vec![0.0; rows * n * Action::COUNT];
    for (k, (&a, &g)) in batch.actions.iter().zip(&d_qs).enumerate() {
        d_q[k * Action::COUNT + a] = g;
    }
    net.agent_backward(params, &agent_cache, &d_q, &mut grad);
    (loss, grad)
}

#[derive(Debug, Clone)]
pub struct Learner {
    pub net: QmixNet,
    pub params: Vec<f64>,
    pub target_params: Vec<f64>,
    pub optimizer: Adam,
    pub gamma: f64,
    pub reward_scale: f64,
    pub grad_clip: f64,
    pub target_update_interval: u64,
    pub grad_steps: u64,
}

impl Learner {
    pub fn new(net: QmixNet, params: Vec<f64>, learning_rate: f64, gamma: f64) -> Self {
        assert_eq!(params.len(), net.n_params());
        Self {
            optimizer: Adam::new(params.len(), learning_rate),
            target_params: params.clone(),
            net,
            params,
            gamma,
            reward_scale: 1.0,
            grad_clip: 10.0,
            target_update_interval: 2000,
            grad_steps: 0,
        }
    }

    pub fn sync_target(&mut self) {
        self.target_params.clone_from(&self.params);
    }

    /// One gradient step on `batch`; returns the loss before the step.
    pub fn update(&mut self, batch: &Batch) -> f64 {
        let targets = td_targets(&self.net, &self.target_params, batch, self.gamma, self.reward_scale);
        let (loss, mut grad) = loss_and_grad(&self.net, &self.params, batch, &targets);
        clip_grad_norm(&mut grad, self.grad_clip);
        self.optimizer.step(&mut self.params, &grad);
        self.grad_steps += 1;
        if self.target_update_interval > 0 && self.grad_steps.is_multiple_of(self.target_update_interval) {
            self.sync_target();
        }
        loss
    }

    pub fn td_update(&mut self, buffer: &ReplayBuffer, batch_size: usize, rng: &mut ChaCha8Rng) -> Result<f64> {
        let batch = buffer.sample(batch_size, rng)?;
        Ok(self.update(&batch))
    }
}
