//! Episode loop: ε-greedy rollouts into replay, periodic TD updates, hard
//! target copies and greedy held-out evaluation.

use rand_chacha::ChaCha8Rng;

use super::buffer::{ReplayBuffer, Transition};
use super::checkpoint::Checkpoint;
use super::learner::{greedy_index, select_actions, Learner};
use super::network::{NetDims, QmixNet};
use super::schedule::EpsilonSchedule;
use crate::controller::{run_episode, Controller};
use crate::dynamics::Action;
use crate::environment::{EnvConfig, GlobalStateVector, MultiAgentEnv, ObservationVector};
use crate::metrics::{compute_separation, compute_twr, SeparationNorm};
use crate::rng::{self, purpose};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epsilon: EpsilonSchedule,
    pub gamma: f64,
    pub target_update_interval: u64,
    pub total_steps: u64,
    pub warmup_steps: u64,
    /// Environment steps per gradient step.
    pub train_interval: u64,
    pub buffer_capacity: usize,
    pub eval_interval_episodes: u64,
    pub eval_episodes: usize,
    pub grad_clip: f64,
    /// Multiplier applied to rewards inside the TD target.
    pub reward_scale: f64,
    pub seed: u64,
    pub hidden: usize,
    pub hidden_layers: usize,
    pub embed: usize,
    pub hyper_hidden: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-6,
            batch_size: 128,
            epsilon: EpsilonSchedule::default(),
            gamma: 0.99,
            target_update_interval: 2000,
            total_steps: 20_000_000,
            warmup_steps: 10_000,
            train_interval: 1,
            buffer_capacity: 1_000_000,
            eval_interval_episodes: 50,
            eval_episodes: 5,
            grad_clip: 10.0,
            reward_scale: 1.0,
            seed: 0,
            hidden: 256,
            hidden_layers: 3,
            embed: 64,
            hyper_hidden: 64,
        }
    }
}

fn parse_field<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

impl TrainConfig {
    pub const KEYS: [&'static str; 20] = [
        "learning_rate",
        "batch_size",
        "epsilon_start",
        "epsilon_end",
        "epsilon_decay_steps",
        "gamma",
        "target_update_interval",
        "total_steps",
        "warmup_steps",
        "train_interval",
        "buffer_capacity",
        "eval_interval_episodes",
        "eval_episodes",
        "grad_clip",
        "reward_scale",
        "seed",
        "hidden",
        "hidden_layers",
        "embed",
        "hyper_hidden",
    ];

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return fail("gamma must lie in (0, 1)");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be positive");
        }
        let e = &self.epsilon;
        if !((0.0..=1.0).contains(&e.start) && (0.0..=1.0).contains(&e.end)) {
            return fail("epsilon_start and epsilon_end must lie in [0, 1]");
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return fail("batch_size must be positive and no larger than buffer_capacity");
        }
        if self.train_interval == 0 {
            return fail("train_interval must be positive");
        }
        if self.hidden == 0 || self.hidden_layers == 0 || self.embed == 0 || self.hyper_hidden == 0 {
            return fail("network sizes must be positive");
        }
        // NaN fails too
        let positive = |v: f64| v > 0.0;
        if !positive(self.grad_clip) || !positive(self.reward_scale) {
            return fail("grad_clip and reward_scale must be positive");
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "learning_rate" => self.learning_rate = parse_field(key, value)?,
            "batch_size" => self.batch_size = parse_field(key, value)?,
            "epsilon_start" => self.epsilon.start = parse_field(key, value)?,
            "epsilon_end" => self.epsilon.end = parse_field(key, value)?,
            "epsilon_decay_steps" => self.epsilon.decay_steps = parse_field(key, value)?,
            "gamma" => self.gamma = parse_field(key, value)?,
            "target_update_interval" => self.target_update_interval = parse_field(key, value)?,
            "total_steps" => self.total_steps = parse_field(key, value)?,
            "warmup_steps" => self.warmup_steps = parse_field(key, value)?,
            "train_interval" => self.train_interval = parse_field(key, value)?,
            "buffer_capacity" => self.buffer_capacity = parse_field(key, value)?,
            "eval_interval_episodes" => self.eval_interval_episodes = parse_field(key, value)?,
            "eval_episodes" => self.eval_episodes = parse_field(key, value)?,
            "grad_clip" => self.grad_clip = parse_field(key, value)?,
            "reward_scale" => self.reward_scale = parse_field(key, value)?,
            "seed" => self.seed = parse_field(key, value)?,
            "hidden" => self.hidden = parse_field(key, value)?,
            "hidden_layers" => self.hidden_layers = parse_field(key, value)?,
            "embed" => self.embed = parse_field(key, value)?,
            "hyper_hidden" => self.hyper_hidden = parse_field(key, value)?,
            _ => return Err(Error::Config(format!("unknown key train.{key}"))),
        }
        Ok(())
    }

    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        let values = [
            self.learning_rate.to_string(),
            self.batch_size.to_string(),
            self.epsilon.start.to_string(),
            self.epsilon.end.to_string(),
            self.epsilon.decay_steps.to_string(),
            self.gamma.to_string(),
            self.target_update_interval.to_string(),
            self.total_steps.to_string(),
            self.warmup_steps.to_string(),
            self.train_interval.to_string(),
            self.buffer_capacity.to_string(),
            self.eval_interval_episodes.to_string(),
            self.eval_episodes.to_string(),
            self.grad_clip.to_string(),
            self.reward_scale.to_string(),
            self.seed.to_string(),
            self.hidden.to_string(),
            self.hidden_layers.to_string(),
            self.embed.to_string(),
            self.hyper_hidden.to_string(),
        ];
        Self::KEYS.iter().copied().zip(values).collect()
    }

    pub fn net_dims(&self, env: &EnvConfig) -> NetDims {
        NetDims {
            hidden: self.hidden,
            hidden_layers: self.hidden_layers,
            embed: self.embed,
            hyper_hidden: self.hyper_hidden,
            ..NetDims::new(env.n_agents, env.obs_dim(), env.state_dim())
        }
    }
}

/// Seeds of the held-out evaluation episodes, disjoint from training seeds
/// by construction of the derivation path.
pub fn eval_seeds(master_seed: u64, count: usize) -> Vec<u64> {
    (0..count as u64)
        .map(|j| rng::derive_seed(master_seed, &[purpose::EVAL_EPISODE, j]))
        .collect()
}

pub fn train_episode_seed(master_seed: u64, episode: u64) -> u64 {
    rng::derive_seed(master_seed, &[purpose::TRAIN_EPISODE, episode])
}

/// One row of the learning curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveRecord {
    pub step: u64,
    pub episodes: u64,
    pub mean_reward: f64,
    pub mean_group_twr: f64,
    pub mean_separation_ratio: f64,
    /// Mean TD loss since the previous record; NaN before the first update.
    pub loss: f64,
    pub epsilon: f64,
}

impl CurveRecord {
    pub const CSV_HEADER: &'static str = "step,episodes,mean_reward,mean_group_twr,mean_separation_ratio,loss,epsilon";

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.step,
            self.episodes,
            self.mean_reward,
            self.mean_group_twr,
            self.mean_separation_ratio,
            self.loss,
            self.epsilon
        )
    }

    pub fn from_csv_row(line: &str) -> std::result::Result<Self, String> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 7 {
            return Err(format!("expected 7 fields, found {}", f.len()));
        }
        let float = |s: &str| s.parse::<f64>().map_err(|e| format!("{s:?}: {e}"));
        let int = |s: &str| s.parse::<u64>().map_err(|e| format!("{s:?}: {e}"));
        Ok(Self {
            step: int(f[0])?,
            episodes: int(f[1])?,
            mean_reward: float(f[2])?,
            mean_group_twr: float(f[3])?,
            mean_separation_ratio: float(f[4])?,
            loss: float(f[5])?,
            epsilon: float(f[6])?,
        })
    }
}

pub fn curve_csv(records: &[CurveRecord]) -> String {
    let mut out = String::from(CurveRecord::CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.to_csv_row());
        out.push('\n');
    }
    out
}

/// Greedy decentralized execution of a trained agent network.
#[derive(Debug, Clone)]
pub struct GreedyPolicy {
    net: QmixNet,
    params: Vec<f64>,
}

impl GreedyPolicy {
    pub fn new(net: QmixNet, params: Vec<f64>) -> Self {
        assert_eq!(params.len(), net.n_params());
        Self { net, params }
    }

    pub fn net(&self) -> &QmixNet {
        &self.net
    }

    pub fn actions(&self, observations: &[ObservationVector]) -> Result<Vec<Action>> {
        let obs_dim = self.net.dims().obs_dim;
        if let Some(bad) = observations.iter().find(|o| o.len() != obs_dim) {
            return Err(Error::DimensionMismatch {
                what: "observation".into(),
                expected: obs_dim,
                found: bad.len(),
            });
        }
        let flat: Vec<f64> = observations.iter().flatten().copied().collect();
        let q = self.net.agent_q(&self.params, &flat, observations.len());
        Ok(q.chunks_exact(Action::COUNT)
            .map(|qi| Action::from_index(greedy_index(qi)).unwrap())
            .collect())
    }
}

impl Controller for GreedyPolicy {
    fn act(&mut self, _env: &MultiAgentEnv, observations: &[ObservationVector]) -> Result<Vec<Action>> {
        self.actions(observations)
    }
}

/// Mean reward, group TWR and separation over greedy episodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSummary {
    pub mean_reward: f64,
    pub mean_group_twr: f64,
    pub mean_separation_ratio: f64,
}

pub fn evaluate_policy(env_config: &EnvConfig, policy: &GreedyPolicy, seeds: &[u64]) -> Result<EvalSummary> {
    let mut env = MultiAgentEnv::new(env_config.clone())?;
    let mut controller = policy.clone();
    let (mut reward, mut twr, mut sep) = (0.0, 0.0, 0.0);
    for &seed in seeds {
        let trace = run_episode(&mut env, seed, &mut controller)?;
        reward += trace.episode_return();
        twr += compute_twr(&trace, env_config.r_coverage_km)?.group;
        sep += compute_separation(&trace, env_config.r_coverage_km, SeparationNorm::Eval)?;
    }
    let n = seeds.len().max(1) as f64;
    Ok(EvalSummary {
        mean_reward: reward / n,
        mean_group_twr: twr / n,
        mean_separation_ratio: sep / n,
    })
}

struct Rollout {
    env: MultiAgentEnv,
    obs: Vec<ObservationVector>,
    state: GlobalStateVector,
}

pub struct Trainer {
    env_config: EnvConfig,
    config: TrainConfig,
    learner: Learner,
    buffer: ReplayBuffer,
    env_steps: u64,
    episodes: u64,
    explore_rng: ChaCha8Rng,
    replay_rng: ChaCha8Rng,
    rollout: Option<Rollout>,
    loss_sum: f64,
    loss_count: u64,
}

impl Trainer {
    pub fn new(env_config: EnvConfig, config: TrainConfig) -> Result<Self> {
        env_config.validate()?;
        config.validate()?;
        let net = QmixNet::new(config.net_dims(&env_config));
        let params = net.init_params(&mut rng::stream(config.seed, &[purpose::PARAMS]));
        let learner = Self::make_learner(net, params, &config);
        Ok(Self {
            buffer: ReplayBuffer::new(
                config.buffer_capacity,
                env_config.n_agents,
                env_config.obs_dim(),
                env_config.state_dim(),
            ),
            explore_rng: rng::stream(config.seed, &[purpose::EXPLORATION]),
            replay_rng: rng::stream(config.seed, &[purpose::REPLAY]),
            env_config,
            config,
            learner,
            env_steps: 0,
            episodes: 0,
            rollout: None,
            loss_sum: 0.0,
            loss_count: 0,
        })
    }

    fn make_learner(net: QmixNet, params: Vec<f64>, config: &TrainConfig) -> Learner {
        let mut l = Learner::new(net, params, config.learning_rate, config.gamma);
        l.grad_clip = config.grad_clip;
        l.reward_scale = config.reward_scale;
        l.target_update_interval = config.target_update_interval;
        l
    }

    /// Restores learner state, counters and random streams. The replay
    /// buffer starts empty; updates resume once it holds a full batch.
    pub fn from_checkpoint(env_config: EnvConfig, ckpt: Checkpoint) -> Result<Self> {
        ckpt.check_env(&env_config)?;
        let mut t = Self::new(env_config, ckpt.config)?;
        let expected = t.learner.net.n_params();
        for (what, v) in [("parameters", &ckpt.params), ("target parameters", &ckpt.target_params)] {
            if v.len() != expected {
                return Err(Error::DimensionMismatch {
                    what: format!("checkpoint {what}"),
                    expected,
                    found: v.len(),
                });
            }
        }
        t.learner.params = ckpt.params;
        t.learner.target_params = ckpt.target_params;
        t.learner.optimizer.m = ckpt.adam_m;
        t.learner.optimizer.v = ckpt.adam_v;
        t.learner.optimizer.t = ckpt.adam_t;
        t.learner.grad_steps = ckpt.grad_steps;
        t.env_steps = ckpt.env_steps;
        t.episodes = ckpt.episodes;
        t.explore_rng = ckpt.explore_rng;
        t.replay_rng = ckpt.replay_rng;
        Ok(t)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Extends or shortens the run, e.g. when resuming.
    pub fn set_total_steps(&mut self, total: u64) {
        self.config.total_steps = total;
    }

    pub fn env_config(&self) -> &EnvConfig {
        &self.env_config
    }

    pub fn learner(&self) -> &Learner {
        &self.learner
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn episodes(&self) -> u64 {
        self.episodes
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn policy(&self) -> GreedyPolicy {
        GreedyPolicy::new(self.learner.net.clone(), self.learner.params.clone())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            dims: *self.learner.net.dims(),
            n_levels: self.env_config.n_levels,
            config: self.config,
            env_steps: self.env_steps,
            episodes: self.episodes,
            grad_steps: self.learner.grad_steps,
            adam_t: self.learner.optimizer.t,
            params: self.learner.params.clone(),
            target_params: self.learner.target_params.clone(),
            adam_m: self.learner.optimizer.m.clone(),
            adam_v: self.learner.optimizer.v.clone(),
            explore_rng: self.explore_rng.clone(),
            replay_rng: self.replay_rng.clone(),
        }
    }

    pub fn evaluate(&self) -> Result<EvalSummary> {
        evaluate_policy(
            &self.env_config,
            &self.policy(),
            &eval_seeds(self.config.seed, self.config.eval_episodes),
        )
    }

    fn record(&mut self) -> Result<CurveRecord> {
        let summary = self.evaluate()?;
        let loss = if self.loss_count > 0 {
            self.loss_sum / self.loss_count as f64
        } else {
            f64::NAN
        };
        self.loss_sum = 0.0;
        self.loss_count = 0;
        Ok(CurveRecord {
            step: self.env_steps,
            episodes: self.episodes,
            mean_reward: summary.mean_reward,
            mean_group_twr: summary.mean_group_twr,
            mean_separation_ratio: summary.mean_separation_ratio,
            loss,
            epsilon: self.config.epsilon.value(self.env_steps),
        })
    }

    fn start_episode(&mut self) -> Result<()> {
        let mut env = MultiAgentEnv::new(self.env_config.clone())?;
        let (obs, state) = env.reset(train_episode_seed(self.config.seed, self.episodes))?;
        self.rollout = Some(Rollout { env, obs, state });
        Ok(())
    }

    /// Runs one environment step with its update, if due. Returns true when
    /// the step finished an episode.
    fn step(&mut self) -> Result<bool> {
        if self.rollout.is_none() {
            self.start_episode()?;
        }
        let eps = self.config.epsilon.value(self.env_steps);
        let ro = self.rollout.as_mut().expect("started above");
        let actions = select_actions(
            &self.learner.net,
            &self.learner.params,
            &ro.obs,
            eps,
            &mut self.explore_rng,
        )?;
        let out = ro.env.step(&actions)?;
        let transition = Transition {
            obs: ro.obs.iter().flatten().copied().collect(),
            actions,
            reward: out.reward.team_reward,
            next_obs: out.observations.iter().flatten().copied().collect(),
            state: std::mem::take(&mut ro.state),
            next_state: out.state.clone(),
            // both episode ends are time limits, never absorbing
            terminal: false,
        };
        self.buffer.push(&transition)?;
        ro.obs = out.observations;
        ro.state = out.state;
        let finished = out.done || out.truncated;
        self.env_steps += 1;

        let c = &self.config;
        if self.env_steps >= c.warmup_steps
            && self.buffer.len() >= c.batch_size
            && self.env_steps.is_multiple_of(c.train_interval)
        {
            let loss = self
                .learner
                .td_update(&self.buffer, c.batch_size, &mut self.replay_rng)?;
            self.loss_sum += loss;
            self.loss_count += 1;
        }
        if finished {
            self.rollout = None;
            self.episodes += 1;
        }
        Ok(finished)
    }

    /// Trains until `total_steps` environment steps. Each learning-curve row
    /// is handed to `on_record` with a checkpoint taken at that moment. An
    /// episode cut off by the step budget is discarded from the episode count.
    pub fn run(
        &mut self,
        on_record: &mut dyn FnMut(&CurveRecord, &Checkpoint) -> Result<()>,
    ) -> Result<Vec<CurveRecord>> {
        let mut curve = Vec::new();
        let start = self.env_steps;
        while self.env_steps < self.config.total_steps {
            let finished = self.step()?;
            let interval = self.config.eval_interval_episodes;
            if finished && interval > 0 && self.episodes.is_multiple_of(interval) {
                let rec = self.record()?;
                on_record(&rec, &self.checkpoint())?;
                curve.push(rec);
            }
        }
        self.rollout = None;
        let last_step = curve.last().map(|r: &CurveRecord| r.step);
        if self.env_steps > start && last_step != Some(self.env_steps) {
            let rec = self.record()?;
            on_record(&rec, &self.checkpoint())?;
            curve.push(rec);
        }
        Ok(curve)
    }
}
