//! Voronoi/Lloyd's coverage baseline.
//!
//! Waypoints are the centroids of a disc-clipped Voronoi partition relaxed
//! with Lloyd's iterations from the agents' current positions. The partition
//! is rasterized: cells are sets of grid points inside the disc. Each agent
//! then steers greedily toward its waypoint by picking the forecast level
//! whose wind best points at it.

use std::fmt::Write as _;

use crate::controller::{run_episode, Controller};
use crate::dynamics::{Action, AgentState};
use crate::environment::{EnvConfig, MultiAgentEnv, ObservationVector};
use crate::trace::EpisodeTrace;
use crate::windfield::{sample_column, WindModel};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineParams {
    pub refresh_minutes: usize,
    pub lloyd_iterations: usize,
    pub grid_km: f64,
    /// Speed at which a level's alignment score saturates.
    pub v_cap: f64,
    pub deadband_m: f64,
    pub arrival_km: f64,
}

impl Default for BaselineParams {
    fn default() -> Self {
        Self {
            refresh_minutes: 15,
            lloyd_iterations: 20,
            grid_km: 2.0,
            v_cap: 20.0,
            deadband_m: 250.0,
            arrival_km: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscPartition {
    /// Seeds after projection into the disc.
    pub seeds: Vec<(f64, f64)>,
    pub centroids: Vec<(f64, f64)>,
    pub iterations: usize,
    pub disc_radius: f64,
    /// Quantization energy of the seeds before each iteration and after the
    /// last one (`iterations + 1` entries).
    pub energies: Vec<f64>,
}

/// Grid points at multiples of `spacing` inside the closed disc. The lattice
/// contains the origin and is mirror symmetric about both axes.
pub fn disc_points(radius: f64, spacing: f64) -> Vec<(f64, f64)> {
    let n = (radius / spacing).floor() as i64;
    let mut pts = Vec::new();
    for j in -n..=n {
        for i in -n..=n {
            let (x, y) = (i as f64 * spacing, j as f64 * spacing);
            if x.hypot(y) <= radius {
                pts.push((x, y));
            }
        }
    }
    pts
}

fn nearest(p: (f64, f64), seeds: &[(f64, f64)]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, s) in seeds.iter().enumerate() {
        let d2 = (p.0 - s.0).powi(2) + (p.1 - s.1).powi(2);
        if d2 < best.1 {
            best = (k, d2);
        }
    }
    best
}

/// Sum over points of the squared distance to the nearest seed.
pub fn quantization_energy(points: &[(f64, f64)], seeds: &[(f64, f64)]) -> f64 {
    points.iter().map(|&p| nearest(p, seeds).1).sum()
}

fn project_to_boundary(p: (f64, f64), radius: f64) -> (f64, f64) {
    let r = p.0.hypot(p.1);
    if r == 0.0 {
        (0.0, radius)
    } else {
        (p.0 * radius / r, p.1 * radius / r)
    }
}

pub fn lloyd_relax(seeds: &[(f64, f64)], disc_radius: f64, iterations: usize, grid_km: f64) -> Result<DiscPartition> {
    if seeds.is_empty() {
        return Err(Error::Usage("Lloyd's relaxation needs at least one seed".into()));
    }
    if !(disc_radius > 0.0 && grid_km > 0.0) {
        return Err(Error::Usage("disc radius and grid spacing must be positive".into()));
    }
    let points = disc_points(disc_radius, grid_km);
    let projected: Vec<(f64, f64)> = seeds
        .iter()
        .map(|&p| {
            if p.0.hypot(p.1) > disc_radius {
                project_to_boundary(p, disc_radius)
            } else {
                p
            }
        })
        .collect();

    let mut current = projected.clone();
    let mut energies = Vec::with_capacity(iterations + 1);
    let mut sums = vec![(0.0, 0.0, 0usize); current.len()];
    for _ in 0..iterations {
        sums.iter_mut().for_each(|s| *s = (0.0, 0.0, 0));
        let mut energy = 0.0;
        for &p in &points {
            let (k, d2) = nearest(p, &current);
            energy += d2;
            sums[k].0 += p.0;
            sums[k].1 += p.1;
            sums[k].2 += 1;
        }
        energies.push(energy);
        for (seed, &(sx, sy, count)) in current.iter_mut().zip(&sums) {
            *seed = if count > 0 {
                (sx / count as f64, sy / count as f64)
            } else {
                project_to_boundary(*seed, disc_radius)
            };
        }
    }
    energies.push(quantization_energy(&points, &current));
    Ok(DiscPartition {
        seeds: projected,
        centroids: current,
        iterations,
        disc_radius,
        energies,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaypointAssignment {
    pub targets: Vec<(f64, f64)>,
    pub refreshed_at: f64,
}

/// Each agent's waypoint is the relaxed centroid of the cell its own
/// position seeded.
pub fn assign_waypoints(
    states: &[AgentState],
    disc_radius: f64,
    t_min: f64,
    params: &BaselineParams,
) -> Result<WaypointAssignment> {
    let seeds: Vec<(f64, f64)> = states.iter().map(|s| (s.x, s.y)).collect();
    let partition = lloyd_relax(&seeds, disc_radius, params.lloyd_iterations, params.grid_km)?;
    Ok(WaypointAssignment {
        targets: partition.centroids,
        refreshed_at: t_min,
    })
}

/// Alignment score of each forecast level toward the waypoint.
fn level_scores(
    state: &AgentState,
    waypoint: (f64, f64),
    forecast: &dyn WindModel,
    t_min: f64,
    n_levels: usize,
    v_cap: f64,
) -> Result<Vec<(f64, f64)>> {
    let (dx, dy) = (waypoint.0 - state.x, waypoint.1 - state.y);
    let dist = dx.hypot(dy);
    let column = sample_column(forecast, state.x, state.y, t_min, n_levels)?;
    Ok(column
        .levels
        .iter()
        .map(|(alt, w)| {
            let score = if w.speed > 0.0 && dist > 0.0 {
                let (e, n) = w.components();
                let cos = (e * dx + n * dy) / (w.speed * dist);
                cos * w.speed.min(v_cap) / v_cap
            } else {
                0.0
            };
            (*alt, score)
        })
        .collect())
}

pub fn greedy_altitude_action(
    state: &AgentState,
    waypoint: (f64, f64),
    forecast: &dyn WindModel,
    t_min: f64,
    n_levels: usize,
    params: &BaselineParams,
) -> Result<Action> {
    if (waypoint.0 - state.x).hypot(waypoint.1 - state.y) < params.arrival_km {
        return Ok(Action::Maintain);
    }
    let scores = level_scores(state, waypoint, forecast, t_min, n_levels, params.v_cap)?;
    let closer = |a: f64, b: f64| {
        let (da, db) = ((a - state.altitude).abs(), (b - state.altitude).abs());
        da < db || (da == db && a < b)
    };
    let (best_alt, _) = scores
        .iter()
        .copied()
        .reduce(|best, cand| {
            let tie = (cand.1 - best.1).abs() <= SCORE_TIE_TOL;
            if (!tie && cand.1 > best.1) || (tie && closer(cand.0, best.0)) {
                cand
            } else {
                best
            }
        })
        .expect("columns have at least two levels");
    Ok(if best_alt > state.altitude + params.deadband_m {
        Action::Ascend
    } else if best_alt < state.altitude - params.deadband_m {
        Action::Descend
    } else {
        Action::Maintain
    })
}

/// Scores closer than this count as tied; blended layers reproduce the same
/// wind only up to rounding.
const SCORE_TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct WaypointRecord {
    pub t: f64,
    pub agent_id: usize,
    pub waypoint: (f64, f64),
}

pub fn partition_csv(records: &[WaypointRecord]) -> String {
    let mut out = String::from("t,agent_id,waypoint_x,waypoint_y\n");
    for r in records {
        let _ = writeln!(out, "{},{},{},{}", r.t, r.agent_id, r.waypoint.0, r.waypoint.1);
    }
    out
}

/// The baseline as a [`Controller`]. Decisions read only the forecast.
#[derive(Debug, Clone, Default)]
pub struct VoronoiBaseline {
    params: BaselineParams,
    assignment: Option<WaypointAssignment>,
    log: Vec<WaypointRecord>,
}

impl VoronoiBaseline {
    pub fn new(params: BaselineParams) -> Self {
        Self {
            params,
            assignment: None,
            log: Vec::new(),
        }
    }

    pub fn waypoint_log(&self) -> &[WaypointRecord] {
        &self.log
    }

    pub fn assignment(&self) -> Option<&WaypointAssignment> {
        self.assignment.as_ref()
    }
}

impl Controller for VoronoiBaseline {
    fn begin_episode(&mut self, _env: &MultiAgentEnv) -> Result<()> {
        self.assignment = None;
        self.log.clear();
        Ok(())
    }

    fn act(&mut self, env: &MultiAgentEnv, _observations: &[ObservationVector]) -> Result<Vec<Action>> {
        let config = env.config();
        let t = env.time();
        let refresh = self.params.refresh_minutes.max(1);
        if self.assignment.is_none() || env.step_index().is_multiple_of(refresh) {
            let a = assign_waypoints(env.states(), config.r_coverage_km, t, &self.params)?;
            self.log.extend(
                a.targets
                    .iter()
                    .enumerate()
                    .map(|(agent_id, &waypoint)| WaypointRecord { t, agent_id, waypoint }),
            );
            self.assignment = Some(a);
        }
        let targets = &self.assignment.as_ref().expect("assigned above").targets;
        env.states()
            .iter()
            .zip(targets)
            .map(|(s, &wp)| greedy_altitude_action(s, wp, env.forecast(), t, config.n_levels, &self.params))
            .collect()
    }
}

pub fn run_baseline_episode(
    config: &EnvConfig,
    seed: u64,
    params: &BaselineParams,
) -> Result<(EpisodeTrace, Vec<WaypointRecord>)> {
    let mut env = MultiAgentEnv::new(config.clone())?;
    let mut controller = VoronoiBaseline::new(*params);
    let trace = run_episode(&mut env, seed, &mut controller)?;
    Ok((trace, controller.log))
}
