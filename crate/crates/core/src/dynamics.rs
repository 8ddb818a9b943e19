//! Balloon kinematics at 1-minute resolution.

use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::windfield::{WindModel, WindSample, ALT_MAX_M, ALT_MIN_M};
use crate::Result;

pub const STEP_SECONDS: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentState {
    pub agent_id: usize,
    /// km east of the coverage centre
    pub x: f64,
    /// km north of the coverage centre
    pub y: f64,
    /// metres
    pub altitude: f64,
}

impl AgentState {
    pub fn distance_to_center(&self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance_to(&self, other: &AgentState) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    Ascend = 0,
    Maintain = 1,
    Descend = 2,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::Ascend, Action::Maintain, Action::Descend];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }

    /// Mean and standard deviation (m/s) of the vertical rate.
    pub fn rate_distribution(self) -> (f64, f64) {
        match self {
            Action::Ascend => (1.80, 0.14),
            Action::Maintain => (0.00, 1.25),
            Action::Descend => (-2.80, 0.30),
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.index())
    }
}

pub fn draw_vertical_rate(action: Action, rng: &mut impl Rng) -> f64 {
    let (mean, sd) = action.rate_distribution();
    let z: f64 = rng.sample(StandardNormal);
    mean + sd * z
}

/// Applies one step with a given vertical rate and the wind at the pre-step
/// position (explicit Euler).
pub fn advance(state: &AgentState, vertical_rate_mps: f64, wind: WindSample) -> AgentState {
    let (east, north) = wind.components();
    let km_per_step = STEP_SECONDS / 1000.0;
    AgentState {
        agent_id: state.agent_id,
        x: state.x + east * km_per_step,
        y: state.y + north * km_per_step,
        altitude: (state.altitude + vertical_rate_mps * STEP_SECONDS).clamp(ALT_MIN_M, ALT_MAX_M),
    }
}

pub fn step_agent(
    state: &AgentState,
    action: Action,
    truth: &dyn WindModel,
    t_min: f64,
    rng: &mut impl Rng,
) -> Result<AgentState> {
    let wind = truth.sample(state.x, state.y, state.altitude, t_min)?;
    let rate = draw_vertical_rate(action, rng);
    Ok(advance(state, rate, wind))
}

/// Inside the coverage disc, boundary inclusive.
pub fn within_coverage(state: &AgentState, r_coverage_km: f64) -> bool {
    state.distance_to_center() <= r_coverage_km
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::windfield::LayeredWindModel;
    use proptest::prelude::*;

    fn at(x: f64, y: f64, altitude: f64) -> AgentState {
        AgentState {
            agent_id: 0,
            x,
            y,
            altitude,
        }
    }

    #[test]
    fn maintain_at_mean_rate_moves_with_wind() {
        let wind = LayeredWindModel::uniform(0.0, 10.0);
        let w = wind.sample(0.0, 0.0, 20_000.0, 0.0).unwrap();
        let next = advance(&at(0.0, 0.0, 20_000.0), Action::Maintain.rate_distribution().0, w);
        assert!(next.x.abs() < 1e-12);
        assert!((next.y - 0.6).abs() < 1e-12);
        assert_eq!(next.altitude, 20_000.0);
    }

    #[test]
    fn ascend_clamps_at_ceiling() {
        let calm = WindSample::new(0.0, 0.0);
        let next = advance(&at(0.0, 0.0, 24_990.0), Action::Ascend.rate_distribution().0, calm);
        assert_eq!(next.altitude, 25_000.0);
        let next = advance(&at(0.0, 0.0, 15_050.0), Action::Descend.rate_distribution().0, calm);
        assert_eq!(next.altitude, 15_000.0);
    }

    #[test]
    fn descend_at_mean_rate() {
        let next = advance(
            &at(0.0, 0.0, 20_000.0),
            Action::Descend.rate_distribution().0,
            WindSample::new(0.0, 0.0),
        );
        assert!((next.altitude - 19_832.0).abs() < 1e-9);
    }

    #[test]
    fn coverage_boundary_is_inclusive() {
        assert!(within_coverage(&at(0.0, 0.0, 20_000.0), 150.0));
        assert!(within_coverage(&at(150.0, 0.0, 20_000.0), 150.0));
        assert!(!within_coverage(&at(120.0, 95.0, 20_000.0), 150.0));
    }

    #[test]
    fn action_encoding() {
        for a in Action::ALL {
            assert_eq!(Action::from_index(a.index()), Some(a));
        }
        assert_eq!(Action::from_index(3), None);
        assert_eq!(Action::Descend.to_string(), "2");
    }

    #[test]
    fn same_stream_same_trajectory() {
        let wind = LayeredWindModel::random(2, 5, 50.0);
        let run = || {
            let mut r = rng::stream(9, &[0, rng::purpose::DYNAMICS]);
            let mut s = at(0.0, 0.0, 20_000.0);
            for k in 0..200 {
                s = step_agent(&s, Action::ALL[k % 3], &wind, k as f64, &mut r).unwrap();
            }
            s
        };
        assert_eq!(run(), run());
    }

    proptest! {
        #[test]
        fn altitude_stays_in_band_and_displacement_bounded(
            seed in any::<u64>(), wseed in 0u64..100, actions in prop::collection::vec(0usize..3, 1..300),
        ) {
            let wind = LayeredWindModel::random(wseed, 6, 50.0);
            let mut r = rng::stream(seed, &[rng::purpose::DYNAMICS]);
            let mut s = at(0.0, 0.0, 20_000.0);
            for (k, &a) in actions.iter().enumerate() {
                let next = step_agent(&s, Action::ALL[a], &wind, k as f64, &mut r).unwrap();
                prop_assert!((ALT_MIN_M..=ALT_MAX_M).contains(&next.altitude));
                prop_assert!(next.distance_to(&s) <= 50.0 * STEP_SECONDS / 1000.0 + 1e-9);
                s = next;
            }
        }
    }
}
