//! Parallel multi-agent episode engine.
//!
//! Agents move under the truth wind model and observe the forecast model.
//!
//! Local observation layout for agent `i` (length `6 + 3L + 5(N - 1)`):
//!
//! | offset | entries |
//! |---|---|
//! | 0 | altitude |
//! | 1, 2 | position x, y |
//! | 3 | coverage membership flag |
//! | 4 | distance to centre / R (clamped to `[0, 2]`) |
//! | 5 | bearing to centre / 2π |
//! | 6.. | wind column, per level `(altitude, bearing / 2π, speed / v_max)` |
//! | then | per teammate (ascending id, skipping `i`): `(x, y, distance to i, altitude, distance to centre)` |
//!
//! Global state layout (length `N(6 + 3L) + 4`): per agent
//! `[altitude, x, y, distance to centre, membership, bearing, wind column]`,
//! then `[goal x, goal y, coverage ratio, separation score]`.

use std::f64::consts::TAU;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::dynamics::{self, within_coverage, Action, AgentState};
use crate::rng::{self, purpose};
use crate::windfield::{sample_column, ForecastModel, ForecastNoise, WindColumn, WindModel, ALT_MIN_M, ALT_SPAN_M};
use crate::{Error, Result};

pub type ObservationVector = Vec<f64>;
pub type GlobalStateVector = Vec<f64>;

#[derive(Debug, Clone)]
pub struct EnvConfig {
    pub n_agents: usize,
    pub n_levels: usize,
    pub r_coverage_km: f64,
    pub episode_steps: usize,
    pub coverage_weight: f64,
    pub dispersion_weight: f64,
    /// Normalization constant for observed wind speeds.
    pub v_max: f64,
    pub truth: Arc<dyn WindModel>,
    /// Forecast error parameters; the forecast field is re-seeded per episode.
    pub forecast_noise: ForecastNoise,
}

impl EnvConfig {
    pub fn new(n_agents: usize, truth: Arc<dyn WindModel>) -> Self {
        Self {
            n_agents,
            n_levels: 37,
            r_coverage_km: 150.0,
            episode_steps: 2880,
            coverage_weight: 10.0,
            dispersion_weight: 3.0,
            v_max: crate::windfield::DEFAULT_V_MAX,
            truth,
            forecast_noise: ForecastNoise::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_agents == 0 {
            return bad("n_agents must be at least 1".into());
        }
        if self.n_levels < 2 {
            return bad(format!("n_levels must be at least 2, got {}", self.n_levels));
        }
        if !(self.r_coverage_km > 0.0 && self.r_coverage_km.is_finite()) {
            return bad(format!("r_coverage_km must be positive, got {}", self.r_coverage_km));
        }
        if self.episode_steps == 0 {
            return bad("episode_steps must be at least 1".into());
        }
        if !(self.v_max > 0.0 && self.v_max.is_finite()) {
            return bad(format!("v_max must be positive, got {}", self.v_max));
        }
        if !(self.coverage_weight.is_finite() && self.dispersion_weight.is_finite())
            || self.coverage_weight < 0.0
            || self.dispersion_weight < 0.0
        {
            return bad("reward weights must be finite and non-negative".into());
        }
        Ok(())
    }

    pub fn obs_dim(&self) -> usize {
        observation_dim(self.n_agents, self.n_levels)
    }

    pub fn state_dim(&self) -> usize {
        global_state_dim(self.n_agents, self.n_levels)
    }

    /// Target mean separation `R / sqrt(N)`.
    pub fn d_target(&self) -> f64 {
        self.r_coverage_km / (self.n_agents as f64).sqrt()
    }

    pub fn max_reward(&self) -> f64 {
        self.coverage_weight + self.dispersion_weight
    }
}

pub fn observation_dim(n_agents: usize, n_levels: usize) -> usize {
    6 + 3 * n_levels + 5 * (n_agents - 1)
}

pub fn global_state_dim(n_agents: usize, n_levels: usize) -> usize {
    n_agents * (6 + 3 * n_levels) + 4
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardBreakdown {
    pub team_reward: f64,
    pub coverage_ratio: f64,
    pub dispersion: f64,
}

/// Mean pairwise distance among agents inside the disc, with the number of
/// inside agents. `None` when fewer than two agents are inside.
pub fn mean_inside_separation(states: &[AgentState], r_coverage_km: f64) -> (usize, Option<f64>) {
    let inside: Vec<&AgentState> = states.iter().filter(|s| within_coverage(s, r_coverage_km)).collect();
    let n = inside.len();
    if n < 2 {
        return (n, None);
    }
    let mut total = 0.0;
    for (i, a) in inside.iter().enumerate() {
        for b in &inside[i + 1..] {
            total += a.distance_to(b);
        }
    }
    (n, Some(total / (n * (n - 1) / 2) as f64))
}

pub fn compute_reward(states: &[AgentState], config: &EnvConfig) -> RewardBreakdown {
    let (n_within, mean_sep) = mean_inside_separation(states, config.r_coverage_km);
    let coverage_ratio = n_within as f64 / config.n_agents as f64;
    let dispersion = mean_sep.map_or(0.0, |d| (d / config.d_target()).min(1.0));
    RewardBreakdown {
        team_reward: config.coverage_weight * coverage_ratio + config.dispersion_weight * dispersion,
        coverage_ratio,
        dispersion,
    }
}

/// Bearing from `(x, y)` to the origin, clockwise from north, in `[0, 2π)`.
/// Zero at the origin.
pub fn bearing_to_center(x: f64, y: f64) -> f64 {
    if x == 0.0 && y == 0.0 {
        return 0.0;
    }
    crate::windfield::wrap_bearing((-x).atan2(-y))
}

struct Normalizer<'a> {
    config: &'a EnvConfig,
}

impl Normalizer<'_> {
    fn altitude(&self, alt: f64) -> f64 {
        ((alt - ALT_MIN_M) / ALT_SPAN_M).clamp(0.0, 1.0)
    }

    fn coord(&self, c: f64) -> f64 {
        let r = self.config.r_coverage_km;
        ((c + r) / (2.0 * r)).clamp(0.0, 1.0)
    }

    fn goal_distance(&self, s: &AgentState) -> f64 {
        (s.distance_to_center() / self.config.r_coverage_km).clamp(0.0, 2.0)
    }

    fn membership(&self, s: &AgentState) -> f64 {
        if within_coverage(s, self.config.r_coverage_km) {
            1.0
        } else {
            0.0
        }
    }

    fn bearing(&self, s: &AgentState) -> f64 {
        bearing_to_center(s.x, s.y) / TAU
    }

    fn teammate_distance(&self, a: &AgentState, b: &AgentState) -> f64 {
        (a.distance_to(b) / (2.0 * self.config.r_coverage_km)).clamp(0.0, 1.0)
    }

    fn push_column(&self, out: &mut Vec<f64>, column: &WindColumn) {
        for (alt, w) in &column.levels {
            out.push(self.altitude(*alt));
            out.push(w.bearing / TAU);
            out.push((w.speed / self.config.v_max).clamp(0.0, 1.0));
        }
    }
}

fn check_states(states: &[AgentState], config: &EnvConfig) -> Result<()> {
    if states.len() != config.n_agents {
        return Err(Error::DimensionMismatch {
            what: "agent states".into(),
            expected: config.n_agents,
            found: states.len(),
        });
    }
    Ok(())
}

fn observation_from_column(
    agent_id: usize,
    states: &[AgentState],
    column: &WindColumn,
    config: &EnvConfig,
) -> ObservationVector {
    let norm = Normalizer { config };
    let me = &states[agent_id];
    let mut out = Vec::with_capacity(config.obs_dim());
    out.push(norm.altitude(me.altitude));
    out.push(norm.coord(me.x));
    out.push(norm.coord(me.y));
    out.push(norm.membership(me));
    out.push(norm.goal_distance(me));
    out.push(norm.bearing(me));
    norm.push_column(&mut out, column);
    for (j, other) in states.iter().enumerate() {
        if j == agent_id {
            continue;
        }
        out.push(norm.coord(other.x));
        out.push(norm.coord(other.y));
        out.push(norm.teammate_distance(me, other));
        out.push(norm.altitude(other.altitude));
        out.push(norm.goal_distance(other));
    }
    debug_assert_eq!(out.len(), config.obs_dim());
    out
}

fn global_state_from_columns(states: &[AgentState], columns: &[WindColumn], config: &EnvConfig) -> GlobalStateVector {
    let norm = Normalizer { config };
    let mut out = Vec::with_capacity(config.state_dim());
    for (s, column) in states.iter().zip(columns) {
        out.push(norm.altitude(s.altitude));
        out.push(norm.coord(s.x));
        out.push(norm.coord(s.y));
        out.push(norm.goal_distance(s));
        out.push(norm.membership(s));
        out.push(norm.bearing(s));
        norm.push_column(&mut out, column);
    }
    let reward = compute_reward(states, config);
    out.push(norm.coord(0.0));
    out.push(norm.coord(0.0));
    out.push(reward.coverage_ratio);
    out.push(reward.dispersion);
    debug_assert_eq!(out.len(), config.state_dim());
    out
}

/// Local observation of `agent_id`. Only that agent's own wind column is
/// queried from the forecast.
pub fn build_observation(
    agent_id: usize,
    states: &[AgentState],
    forecast: &dyn WindModel,
    t_min: f64,
    config: &EnvConfig,
) -> Result<ObservationVector> {
    check_states(states, config)?;
    let me = states
        .get(agent_id)
        .ok_or_else(|| Error::Usage(format!("agent id {agent_id} out of range")))?;
    let column = sample_column(forecast, me.x, me.y, t_min, config.n_levels)?;
    Ok(observation_from_column(agent_id, states, &column, config))
}

pub fn build_global_state(
    states: &[AgentState],
    forecast: &dyn WindModel,
    t_min: f64,
    config: &EnvConfig,
) -> Result<GlobalStateVector> {
    check_states(states, config)?;
    let columns = states
        .iter()
        .map(|s| sample_column(forecast, s.x, s.y, t_min, config.n_levels))
        .collect::<Result<Vec<_>>>()?;
    Ok(global_state_from_columns(states, &columns, config))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observations: Vec<ObservationVector>,
    pub state: GlobalStateVector,
    pub reward: RewardBreakdown,
    /// Time limit reached.
    pub done: bool,
    /// Episode cut short because the wind data ran out.
    pub truncated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Idle,
    Running,
    Finished,
}

/// One episode at a time; `step` is single-writer.
#[derive(Debug)]
pub struct MultiAgentEnv {
    config: EnvConfig,
    episode_seed: u64,
    forecast: ForecastModel,
    states: Vec<AgentState>,
    dynamics_rngs: Vec<ChaCha8Rng>,
    step_index: usize,
    phase: Phase,
}

impl MultiAgentEnv {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        let forecast = ForecastModel::new(config.truth.clone(), config.forecast_noise, 0);
        Ok(Self {
            config,
            episode_seed: 0,
            forecast,
            states: Vec::new(),
            dynamics_rngs: Vec::new(),
            step_index: 0,
            phase: Phase::Idle,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn states(&self) -> &[AgentState] {
        &self.states
    }

    pub fn forecast(&self) -> &ForecastModel {
        &self.forecast
    }

    pub fn truth(&self) -> &dyn WindModel {
        self.config.truth.as_ref()
    }

    pub fn episode_seed(&self) -> u64 {
        self.episode_seed
    }

    /// Elapsed minutes (one per step).
    pub fn time(&self) -> f64 {
        self.step_index as f64
    }

    pub fn step_index(&self) -> usize {
        self.step_index
    }

    pub fn is_finished(&self) -> bool {
        self.phase == Phase::Finished
    }

    pub fn reset(&mut self, episode_seed: u64) -> Result<(Vec<ObservationVector>, GlobalStateVector)> {
        let n = self.config.n_agents;
        let r = self.config.r_coverage_km;
        self.episode_seed = episode_seed;
        self.forecast = ForecastModel::new(
            self.config.truth.clone(),
            self.config.forecast_noise,
            rng::derive_seed(episode_seed, &[purpose::FORECAST]),
        );
        self.states = (0..n)
            .map(|agent_id| {
                let mut init = rng::stream(episode_seed, &[agent_id as u64, purpose::INIT]);
                let (x, y) = loop {
                    let x = init.random_range(-r..=r);
                    let y = init.random_range(-r..=r);
                    if x.hypot(y) <= r {
                        break (x, y);
                    }
                };
                let altitude = init.random_range(ALT_MIN_M..=ALT_MIN_M + ALT_SPAN_M);
                AgentState {
                    agent_id,
                    x,
                    y,
                    altitude,
                }
            })
            .collect();
        self.dynamics_rngs = (0..n)
            .map(|agent_id| rng::stream(episode_seed, &[agent_id as u64, purpose::DYNAMICS]))
            .collect();
        self.step_index = 0;
        self.phase = Phase::Running;
        let (obs, state) = self.observe()?;
        Ok((obs, state))
    }

    /// Current observations and global state from the forecast model.
    pub fn observe(&self) -> Result<(Vec<ObservationVector>, GlobalStateVector)> {
        if self.phase == Phase::Idle {
            return Err(Error::Usage("observe before reset".into()));
        }
        let t = self.time();
        let columns = self
            .states
            .iter()
            .map(|s| sample_column(&self.forecast, s.x, s.y, t, self.config.n_levels))
            .collect::<Result<Vec<_>>>()?;
        let obs = (0..self.config.n_agents)
            .map(|i| observation_from_column(i, &self.states, &columns[i], &self.config))
            .collect();
        Ok((obs, global_state_from_columns(&self.states, &columns, &self.config)))
    }

    pub fn step(&mut self, joint_action: &[Action]) -> Result<StepOutcome> {
        match self.phase {
            Phase::Idle => return Err(Error::Usage("step before reset".into())),
            Phase::Finished => return Err(Error::Usage("step after episode end".into())),
            Phase::Running => {}
        }
        if joint_action.len() != self.config.n_agents {
            return Err(Error::DimensionMismatch {
                what: "joint action".into(),
                expected: self.config.n_agents,
                found: joint_action.len(),
            });
        }
        let t = self.time();
        let truth = self.config.truth.as_ref();
        let next = self
            .states
            .iter()
            .zip(joint_action)
            .zip(self.dynamics_rngs.iter_mut())
            .map(|((s, &a), r)| dynamics::step_agent(s, a, truth, t, r))
            .collect::<Result<Vec<_>>>()?;
        self.states = next;
        self.step_index += 1;
        let reward = compute_reward(&self.states, &self.config);
        let done = self.step_index >= self.config.episode_steps;
        let truncated = !done && truth.time_horizon().is_some_and(|h| self.time() >= h);
        if done || truncated {
            self.phase = Phase::Finished;
        }
        let (observations, state) = self.observe()?;
        Ok(StepOutcome {
            observations,
            state,
            reward,
            done,
            truncated,
        })
    }
}
