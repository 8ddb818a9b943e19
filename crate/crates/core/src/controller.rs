//! Controllers and episode rollout.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::dynamics::Action;
use crate::environment::{EnvConfig, MultiAgentEnv, ObservationVector};
use crate::trace::{AgentRecord, EpisodeTrace, StepRecord};
use crate::{Error, Result};

/// Decides a joint action from the environment's public view.
pub trait Controller {
    fn begin_episode(&mut self, _env: &MultiAgentEnv) -> Result<()> {
        Ok(())
    }

    fn act(&mut self, env: &MultiAgentEnv, observations: &[ObservationVector]) -> Result<Vec<Action>>;
}

/// Uniformly random actions, independently per agent.
#[derive(Debug, Clone)]
pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(rng: ChaCha8Rng) -> Self {
        Self { rng }
    }
}

impl Controller for RandomPolicy {
    fn act(&mut self, env: &MultiAgentEnv, _observations: &[ObservationVector]) -> Result<Vec<Action>> {
        Ok((0..env.config().n_agents)
            .map(|_| Action::ALL[self.rng.random_range(0..Action::COUNT)])
            .collect())
    }
}

/// Replays a fixed action sequence.
struct Scripted<'a> {
    trace: &'a EpisodeTrace,
    cursor: usize,
}

impl Controller for Scripted<'_> {
    fn act(&mut self, _env: &MultiAgentEnv, _observations: &[ObservationVector]) -> Result<Vec<Action>> {
        let record = self
            .trace
            .records
            .get(self.cursor)
            .ok_or_else(|| Error::Usage("trace has fewer steps than the episode".into()))?;
        self.cursor += 1;
        Ok(record.agents.iter().map(|a| a.action).collect())
    }
}

/// Runs one episode from `reset(seed)` until done or truncated, or until
/// `max_steps` steps.
pub fn run_episode_limited(
    env: &mut MultiAgentEnv,
    seed: u64,
    controller: &mut dyn Controller,
    max_steps: usize,
) -> Result<EpisodeTrace> {
    let (mut obs, _) = env.reset(seed)?;
    controller.begin_episode(env)?;
    let mut trace = EpisodeTrace::new(seed, env.config().n_agents);
    while trace.records.len() < max_steps {
        let actions = controller.act(env, &obs)?;
        let out = env.step(&actions)?;
        trace.records.push(StepRecord {
            t: env.step_index(),
            agents: env
                .states()
                .iter()
                .zip(&actions)
                .map(|(s, &action)| AgentRecord {
                    x: s.x,
                    y: s.y,
                    altitude: s.altitude,
                    action,
                })
                .collect(),
            reward: out.reward.team_reward,
            coverage_ratio: out.reward.coverage_ratio,
            separation: out.reward.dispersion,
        });
        obs = out.observations;
        if out.done || out.truncated {
            break;
        }
    }
    Ok(trace)
}

pub fn run_episode(env: &mut MultiAgentEnv, seed: u64, controller: &mut dyn Controller) -> Result<EpisodeTrace> {
    run_episode_limited(env, seed, controller, usize::MAX)
}

/// Re-simulates a trace from its seed and recorded actions.
pub fn replay_trace(config: &EnvConfig, trace: &EpisodeTrace) -> Result<EpisodeTrace> {
    if trace.n_agents != config.n_agents {
        return Err(Error::DimensionMismatch {
            what: "trace agent count".into(),
            expected: config.n_agents,
            found: trace.n_agents,
        });
    }
    let mut env = MultiAgentEnv::new(config.clone())?;
    let mut script = Scripted { trace, cursor: 0 };
    let mut replayed = run_episode_limited(&mut env, trace.seed, &mut script, trace.records.len())?;
    replayed.config = trace.config.clone();
    Ok(replayed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceMismatch {
    /// Index into the record list.
    pub record: usize,
    pub t: usize,
    pub field: String,
    pub expected: String,
    pub found: String,
}

/// First bitwise difference between two traces, if any.
pub fn first_mismatch(expected: &EpisodeTrace, found: &EpisodeTrace) -> Option<TraceMismatch> {
    let mismatch = |record: usize, t: usize, field: String, e: String, f: String| {
        Some(TraceMismatch {
            record,
            t,
            field,
            expected: e,
            found: f,
        })
    };
    if expected.seed != found.seed {
        return mismatch(0, 0, "seed".into(), expected.seed.to_string(), found.seed.to_string());
    }
    for (i, (a, b)) in expected.records.iter().zip(&found.records).enumerate() {
        let mut fields: Vec<(String, f64, f64)> = vec![
            ("reward".into(), a.reward, b.reward),
            ("coverage_ratio".into(), a.coverage_ratio, b.coverage_ratio),
            ("separation".into(), a.separation, b.separation),
        ];
        if a.t != b.t || a.agents.len() != b.agents.len() {
            return mismatch(i, a.t, "t".into(), a.t.to_string(), b.t.to_string());
        }
        for (j, (ra, rb)) in a.agents.iter().zip(&b.agents).enumerate() {
            if ra.action != rb.action {
                return mismatch(
                    i,
                    a.t,
                    format!("agent {j} action"),
                    ra.action.to_string(),
                    rb.action.to_string(),
                );
            }
            fields.push((format!("agent {j} x"), ra.x, rb.x));
            fields.push((format!("agent {j} y"), ra.y, rb.y));
            fields.push((format!("agent {j} altitude"), ra.altitude, rb.altitude));
        }
        if let Some((name, x, y)) = fields.into_iter().find(|(_, x, y)| x.to_bits() != y.to_bits()) {
            return mismatch(i, a.t, name, x.to_string(), y.to_string());
        }
    }
    if expected.records.len() != found.records.len() {
        let n = expected.records.len().min(found.records.len());
        return mismatch(
            n,
            n + 1,
            "length".into(),
            expected.records.len().to_string(),
            found.records.len().to_string(),
        );
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::windfield::LayeredWindModel;
    use std::sync::Arc;

    fn config() -> EnvConfig {
        let mut c = EnvConfig::new(3, Arc::new(LayeredWindModel::random(1, 5, 50.0)));
        c.episode_steps = 60;
        c.n_levels = 6;
        c
    }

    fn random_trace(seed: u64) -> EpisodeTrace {
        let mut env = MultiAgentEnv::new(config()).unwrap();
        let mut policy = RandomPolicy::new(rng::stream(seed, &[rng::purpose::EXPLORATION]));
        run_episode(&mut env, seed, &mut policy).unwrap()
    }

    #[test]
    fn rollout_has_one_record_per_step() {
        let t = random_trace(5);
        assert_eq!(t.len(), 60);
        assert_eq!(t.records.first().unwrap().t, 1);
        assert_eq!(t.records.last().unwrap().t, 60);
    }

    #[test]
    fn replay_reproduces_bit_exactly() {
        let t = random_trace(9);
        let r = replay_trace(&config(), &t).unwrap();
        assert_eq!(first_mismatch(&t, &r), None);
        assert_eq!(r, t);
    }

    #[test]
    fn perturbed_trace_reports_step() {
        let t = random_trace(9);
        let mut tampered = t.clone();
        tampered.records[17].agents[2].y += 1e-9;
        let r = replay_trace(&config(), &tampered).unwrap();
        let m = first_mismatch(&tampered, &r).unwrap();
        assert_eq!(m.record, 17);
        assert_eq!(m.t, 18);
        assert_eq!(m.field, "agent 2 y");
    }
}
