//! Step-level replay memory. Vectors are stored as f32 to halve memory;
//! storage grows with use and stops at capacity, after which the oldest
//! record is overwritten.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::dynamics::Action;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    /// Per-agent observations concatenated (`n_agents × obs_dim`).
    pub obs: Vec<f64>,
    pub actions: Vec<Action>,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub state: Vec<f64>,
    pub next_state: Vec<f64>,
    /// True environment terminal. Time-limit ends are not terminal.
    pub terminal: bool,
}

/// A sampled minibatch in flat row-major layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub rows: usize,
    pub obs: Vec<f64>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub next_obs: Vec<f64>,
    pub states: Vec<f64>,
    pub next_states: Vec<f64>,
    pub terminals: Vec<bool>,
}

impl Batch {
    pub fn from_transitions(ts: &[Transition]) -> Self {
        Self {
            rows: ts.len(),
            obs: ts.iter().flat_map(|t| t.obs.iter().copied()).collect(),
            actions: ts.iter().flat_map(|t| t.actions.iter().map(|a| a.index())).collect(),
            rewards: ts.iter().map(|t| t.reward).collect(),
            next_obs: ts.iter().flat_map(|t| t.next_obs.iter().copied()).collect(),
            states: ts.iter().flat_map(|t| t.state.iter().copied()).collect(),
            next_states: ts.iter().flat_map(|t| t.next_state.iter().copied()).collect(),
            terminals: ts.iter().map(|t| t.terminal).collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    n_agents: usize,
    obs_dim: usize,
    state_dim: usize,
    obs: Vec<f32>,
    next_obs: Vec<f32>,
    states: Vec<f32>,
    next_states: Vec<f32>,
    actions: Vec<u8>,
    rewards: Vec<f64>,
    terminals: Vec<bool>,
    len: usize,
    head: usize,
}

fn write(dst: &mut Vec<f32>, slot: usize, width: usize, src: &[f64], grow: bool) {
    if grow {
        dst.extend(src.iter().map(|&v| v as f32));
    } else {
        for (d, &s) in dst[slot * width..(slot + 1) * width].iter_mut().zip(src) {
            *d = s as f32;
        }
    }
}

fn read(src: &[f32], slot: usize, width: usize, out: &mut Vec<f64>) {
    out.extend(src[slot * width..(slot + 1) * width].iter().map(|&v| v as f64));
}

impl ReplayBuffer {
    pub fn new(capacity: usize, n_agents: usize, obs_dim: usize, state_dim: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            n_agents,
            obs_dim,
            state_dim,
            obs: Vec::new(),
            next_obs: Vec::new(),
            states: Vec::new(),
            next_states: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            terminals: Vec::new(),
            len: 0,
            head: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn check(&self, what: &str, expected: usize, found: usize) -> Result<()> {
        if expected == found {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                what: what.into(),
                expected,
                found,
            })
        }
    }

    pub fn push(&mut self, t: &Transition) -> Result<()> {
        let ow = self.n_agents * self.obs_dim;
        self.check("transition observations", ow, t.obs.len())?;
        self.check("transition next observations", ow, t.next_obs.len())?;
        self.check("transition state", self.state_dim, t.state.len())?;
        self.check("transition next state", self.state_dim, t.next_state.len())?;
        self.check("transition actions", self.n_agents, t.actions.len())?;
        let grow = self.len < self.capacity;
        let slot = self.head;
        write(&mut self.obs, slot, ow, &t.obs, grow);
        write(&mut self.next_obs, slot, ow, &t.next_obs, grow);
        write(&mut self.states, slot, self.state_dim, &t.state, grow);
        write(&mut self.next_states, slot, self.state_dim, &t.next_state, grow);
        if grow {
            self.actions.extend(t.actions.iter().map(|a| a.index() as u8));
            self.rewards.push(t.reward);
            self.terminals.push(t.terminal);
            self.len += 1;
        } else {
            for (d, a) in self.actions[slot * self.n_agents..(slot + 1) * self.n_agents]
                .iter_mut()
                .zip(&t.actions)
            {
                *d = a.index() as u8;
            }
            self.rewards[slot] = t.reward;
            self.terminals[slot] = t.terminal;
        }
        self.head = (self.head + 1) % self.capacity;
        Ok(())
    }

    /// The `i`-th stored record, oldest first.
    pub fn get(&self, i: usize) -> Option<Transition> {
        if i >= self.len {
            return None;
        }
        let start = if self.len < self.capacity { 0 } else { self.head };
        let slot = (start + i) % self.capacity;
        let mut b = self.gather(&[slot]);
        Some(Transition {
            obs: std::mem::take(&mut b.obs),
            actions: b.actions.iter().map(|&a| Action::from_index(a).unwrap()).collect(),
            reward: b.rewards[0],
            next_obs: std::mem::take(&mut b.next_obs),
            state: std::mem::take(&mut b.states),
            next_state: std::mem::take(&mut b.next_states),
            terminal: b.terminals[0],
        })
    }

    fn gather(&self, slots: &[usize]) -> Batch {
        let ow = self.n_agents * self.obs_dim;
        let rows = slots.len();
        let mut b = Batch {
            rows,
            obs: Vec::with_capacity(rows * ow),
            actions: Vec::with_capacity(rows * self.n_agents),
            rewards: Vec::with_capacity(rows),
            next_obs: Vec::with_capacity(rows * ow),
            states: Vec::with_capacity(rows * self.state_dim),
            next_states: Vec::with_capacity(rows * self.state_dim),
            terminals: Vec::with_capacity(rows),
        };
        for &s in slots {
            read(&self.obs, s, ow, &mut b.obs);
            read(&self.next_obs, s, ow, &mut b.next_obs);
            read(&self.states, s, self.state_dim, &mut b.states);
            read(&self.next_states, s, self.state_dim, &mut b.next_states);
            b.actions.extend(
                self.actions[s * self.n_agents..(s + 1) * self.n_agents]
                    .iter()
                    .map(|&a| a as usize),
            );
            b.rewards.push(self.rewards[s]);
            b.terminals.push(self.terminals[s]);
        }
        b
    }

    /// Uniform sample with replacement.
    pub fn sample(&self, batch_size: usize, rng: &mut ChaCha8Rng) -> Result<Batch> {
        if self.len < batch_size || batch_size == 0 {
            return Err(Error::Usage(format!(
                "replay buffer holds {} records, batch needs {batch_size}",
                self.len
            )));
        }
        let slots: Vec<usize> = (0..batch_size).map(|_| rng.random_range(0..self.len)).collect();
        Ok(self.gather(&slots))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn transition(id: usize) -> Transition {
        let v = id as f64;
        Transition {
            obs: vec![v; 4],
            actions: vec![Action::from_index(id % 3).unwrap(), Action::Maintain],
            reward: v,
            next_obs: vec![v + 0.5; 4],
            state: vec![-v; 3],
            next_state: vec![v; 3],
            terminal: id.is_multiple_of(2),
        }
    }

    #[test]
    fn ring_evicts_oldest() {
        let (cap, k) = (10, 4);
        let mut b = ReplayBuffer::new(cap, 2, 2, 3);
        for id in 0..cap + k {
            b.push(&transition(id)).unwrap();
            assert!(b.len() <= cap);
        }
        assert_eq!(b.len(), cap);
        let ids: Vec<usize> = (0..cap).map(|i| b.get(i).unwrap().reward as usize).collect();
        assert_eq!(ids, (k..cap + k).collect::<Vec<_>>());
        assert_eq!(b.get(3).unwrap(), transition(k + 3));
        assert!(b.get(cap).is_none());
    }

    #[test]
    fn sample_is_uniform_and_seeded() {
        let mut b = ReplayBuffer::new(100, 2, 2, 3);
        for id in 0..5 {
            b.push(&transition(id)).unwrap();
        }
        let mut counts = [0usize; 5];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..2000 {
            let batch = b.sample(5, &mut rng).unwrap();
            for r in batch.rewards {
                counts[r as usize] += 1;
            }
        }
        // χ² with 4 dof, 0.999 quantile 18.47
        let expect = 10_000.0 / 5.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expect).powi(2) / expect).sum();
        assert!(chi2 < 18.47, "{counts:?}");
        let a = b.sample(5, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let c = b.sample(5, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn batch_rows_line_up() {
        let mut b = ReplayBuffer::new(8, 2, 2, 3);
        for id in 0..3 {
            b.push(&transition(id)).unwrap();
        }
        let batch = b.sample(3, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        for r in 0..3 {
            let id = batch.rewards[r];
            assert_eq!(&batch.obs[r * 4..r * 4 + 4], &[id; 4]);
            assert_eq!(&batch.states[r * 3..r * 3 + 3], &[-id; 3]);
            assert_eq!(batch.actions[r * 2], id as usize % 3);
        }
    }

    #[test]
    fn undersized_buffer_and_bad_dims_are_errors() {
        let mut b = ReplayBuffer::new(8, 2, 2, 3);
        b.push(&transition(0)).unwrap();
        assert!(matches!(
            b.sample(2, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(Error::Usage(_))
        ));
        let mut bad = transition(1);
        bad.state.pop();
        assert!(matches!(b.push(&bad), Err(Error::DimensionMismatch { .. })));
    }
}
