use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;

use habcov_core::baseline::{partition_csv, VoronoiBaseline};
use habcov_core::controller::{first_mismatch, replay_trace, run_episode};
use habcov_core::environment::MultiAgentEnv;
use habcov_core::metrics::{
    accumulate_heatmap, evaluate_episode, metrics_csv, parse_metrics_csv, EpisodeMetrics, MetricsConfig,
};
use habcov_core::qmix::{Checkpoint, CurveRecord, Trainer};
use habcov_core::trace::EpisodeTrace;

use crate::config::RunConfig;

/// A check that ran to completion but did not hold.
#[derive(Debug)]
pub struct VerificationFailure(pub String);

impl fmt::Display for VerificationFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for VerificationFailure {}

pub const CONFIG_FILE: &str = "config.txt";
pub const SEEDS_FILE: &str = "seeds.txt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CURVE_FILE: &str = "curve.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.txt";

/// Trace header keys under this prefix describe the run, not the config.
const META_PREFIX: &str = "meta.";

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn seed_manifest(seeds: &[u64]) -> String {
    seeds.iter().map(|s| format!("{s}\n")).collect()
}

fn write_run_header(cfg: &RunConfig, out: &Path, seeds: &[u64]) -> Result<()> {
    write(&out.join(CONFIG_FILE), &cfg.to_text())?;
    write(&out.join(SEEDS_FILE), &seed_manifest(seeds))
}

pub fn trace_path(out: &Path, seed: u64) -> PathBuf {
    out.join("traces").join(format!("seed_{seed}.trace"))
}

fn metrics_config(cfg: &RunConfig) -> MetricsConfig {
    MetricsConfig {
        r_coverage_km: cfg.r_coverage_km,
        ground_radius_km: cfg.ground_radius_km,
        episode_steps: cfg.episode_steps,
    }
}

fn stamp(trace: &mut EpisodeTrace, cfg: &RunConfig, controller: &str) {
    trace.config = cfg.pairs();
    trace
        .config
        .push((format!("{META_PREFIX}controller"), controller.to_string()));
}

/// Runs one episode per seed in parallel and writes traces, heatmaps, any
/// per-episode side output and the metrics table. Rows keep seed-list order.
fn run_batch<F>(cfg: &RunConfig, out: &Path, controller: &str, episode: F) -> Result<Vec<EpisodeMetrics>>
where
    F: Fn(u64) -> Result<(EpisodeTrace, Option<String>)> + Sync,
{
    let seeds = cfg.episode_seeds();
    write_run_header(cfg, out, &seeds)?;
    let outputs: Vec<(EpisodeTrace, Option<String>)> = seeds.par_iter().map(|&s| episode(s)).collect::<Result<_>>()?;
    let mcfg = metrics_config(cfg);
    let mut rows = Vec::with_capacity(outputs.len());
    for (mut trace, extra) in outputs {
        stamp(&mut trace, cfg, controller);
        let seed = trace.seed;
        write(&trace_path(out, seed), &trace.to_text())?;
        let heat = accumulate_heatmap(&trace, cfg.ground_radius_km, cfg.episode_steps as u32);
        write(&out.join("heatmaps").join(format!("seed_{seed}.pgm")), &heat.to_pgm())?;
        if let Some(extra) = extra {
            write(&out.join("partitions").join(format!("seed_{seed}.csv")), &extra)?;
        }
        rows.push(evaluate_episode(&trace, &mcfg)?);
    }
    write(&out.join(METRICS_FILE), &metrics_csv(&rows))?;
    Ok(rows)
}

pub fn cmd_baseline(cfg: &RunConfig, out: &Path) -> Result<Vec<EpisodeMetrics>> {
    cfg.validate()?;
    let env = cfg.env_config()?;
    run_batch(cfg, out, "baseline", |seed| {
        let mut e = MultiAgentEnv::new(env.clone())?;
        let mut c = VoronoiBaseline::new(cfg.baseline);
        let trace = run_episode(&mut e, seed, &mut c)?;
        Ok((trace, Some(partition_csv(c.waypoint_log()))))
    })
}

pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, out: &Path) -> Result<Vec<EpisodeMetrics>> {
    cfg.validate()?;
    let env = cfg.env_config()?;
    let ckpt = Checkpoint::load(checkpoint)?;
    ckpt.check_env(&env)?;
    let policy = ckpt.policy();
    run_batch(cfg, out, "qmix", |seed| {
        let mut e = MultiAgentEnv::new(env.clone())?;
        let mut c = policy.clone();
        Ok((run_episode(&mut e, seed, &mut c)?, None))
    })
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub curve: Vec<CurveRecord>,
    pub env_steps: u64,
    pub episodes: u64,
}

/// Trains (or resumes) into `out`: resolved config, seed manifest, the
/// learning curve and a checkpoint refreshed at every curve row.
pub fn cmd_train(
    cfg: &RunConfig,
    out: &Path,
    resume: Option<&Path>,
    log: &mut dyn FnMut(&str),
) -> Result<TrainSummary> {
    cfg.validate()?;
    let env = cfg.env_config()?;
    let tcfg = cfg.train_config();
    let mut trainer = match resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            let mut t = Trainer::from_checkpoint(env, ckpt)?;
            t.set_total_steps(tcfg.total_steps);
            t
        }
        None => Trainer::new(env, tcfg)?,
    };
    let eval = habcov_core::qmix::eval_seeds(trainer.config().seed, trainer.config().eval_episodes);
    let mut manifest = format!("# train {}\n", trainer.config().seed);
    manifest.push_str("# held-out evaluation\n");
    manifest.push_str(&seed_manifest(&eval));
    write(&out.join(CONFIG_FILE), &cfg.to_text())?;
    write(&out.join(SEEDS_FILE), &manifest)?;

    let curve_path = out.join(CURVE_FILE);
    let mut curve_text = match resume {
        Some(_) if curve_path.exists() => {
            fs::read_to_string(&curve_path).with_context(|| format!("reading {}", curve_path.display()))?
        }
        _ => format!("{}\n", CurveRecord::CSV_HEADER),
    };
    write(&curve_path, &curve_text)?;
    let ckpt_path = out.join(CHECKPOINT_FILE);
    trainer.checkpoint().save(&ckpt_path)?;

    let curve = trainer.run(&mut |rec, ckpt| {
        curve_text.push_str(&rec.to_csv_row());
        curve_text.push('\n');
        fs::write(&curve_path, &curve_text).map_err(|e| habcov_core::Error::Io {
            path: curve_path.clone(),
            source: e,
        })?;
        ckpt.save(&ckpt_path)?;
        log(&format!(
            "step {} episodes {} reward {:.1} twr {:.3} loss {:.4} eps {:.3}",
            rec.step, rec.episodes, rec.mean_reward, rec.mean_group_twr, rec.loss, rec.epsilon
        ));
        Ok(())
    })?;
    trainer.checkpoint().save(&ckpt_path)?;
    Ok(TrainSummary {
        curve,
        env_steps: trainer.env_steps(),
        episodes: trainer.episodes(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub max: f64,
}

/// Mean, sample standard deviation (0 for a single value), min and max.
pub fn summarize(values: &[f64]) -> Summary {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Summary {
        mean,
        sd,
        min: values.iter().copied().fold(f64::INFINITY, f64::min),
        max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldComparison {
    pub field: &'static str,
    pub a: Summary,
    pub b: Summary,
    /// Per-seed `b − a`.
    pub delta: Summary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareReport {
    pub paired: usize,
    pub only_a: usize,
    pub only_b: usize,
    pub fields: Vec<FieldComparison>,
}

impl CompareReport {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "paired seeds: {} (only in A: {}, only in B: {})",
            self.paired, self.only_a, self.only_b
        );
        let _ = writeln!(
            out,
            "{:<34} {:>5} {:>11} {:>11} {:>11} {:>11}",
            "field", "", "mean", "sd", "min", "max"
        );
        for f in &self.fields {
            for (label, s) in [("A", &f.a), ("B", &f.b), ("B-A", &f.delta)] {
                let name = if label == "A" { f.field } else { "" };
                let _ = writeln!(
                    out,
                    "{name:<34} {label:>5} {:>11.5} {:>11.5} {:>11.5} {:>11.5}",
                    s.mean, s.sd, s.min, s.max
                );
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "field,mean_a,sd_a,min_a,max_a,mean_b,sd_b,min_b,max_b,delta_mean,delta_sd,delta_min,delta_max\n",
        );
        for f in &self.fields {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                f.field,
                f.a.mean,
                f.a.sd,
                f.a.min,
                f.a.max,
                f.b.mean,
                f.b.sd,
                f.b.min,
                f.b.max,
                f.delta.mean,
                f.delta.sd,
                f.delta.min,
                f.delta.max
            );
        }
        out
    }
}

fn metrics_file(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(METRICS_FILE)
    } else {
        path.to_path_buf()
    }
}

fn load_metrics(path: &Path) -> Result<Vec<EpisodeMetrics>> {
    let file = metrics_file(path);
    let text = fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
    Ok(parse_metrics_csv(&text, &file.display().to_string())?)
}

pub fn compare_rows(a: &[EpisodeMetrics], b: &[EpisodeMetrics]) -> Result<CompareReport> {
    let index = |rows: &[EpisodeMetrics]| -> Result<BTreeMap<u64, [f64; 7]>> {
        let mut m = BTreeMap::new();
        for r in rows {
            if m.insert(r.seed, r.values()).is_some() {
                bail!("seed {} appears twice in one metrics table", r.seed);
            }
        }
        Ok(m)
    };
    let (ma, mb) = (index(a)?, index(b)?);
    let common: Vec<u64> = ma.keys().filter(|s| mb.contains_key(s)).copied().collect();
    if common.is_empty() {
        bail!("the two runs share no seeds; comparison needs paired episodes");
    }
    let fields = EpisodeMetrics::FIELDS
        .iter()
        .enumerate()
        .map(|(k, &field)| {
            let va: Vec<f64> = common.iter().map(|s| ma[s][k]).collect();
            let vb: Vec<f64> = common.iter().map(|s| mb[s][k]).collect();
            let d: Vec<f64> = va.iter().zip(&vb).map(|(x, y)| y - x).collect();
            FieldComparison {
                field,
                a: summarize(&va),
                b: summarize(&vb),
                delta: summarize(&d),
            }
        })
        .collect();
    Ok(CompareReport {
        paired: common.len(),
        only_a: ma.len() - common.len(),
        only_b: mb.len() - common.len(),
        fields,
    })
}

/// Pairs two run directories (or metrics files) by seed.
pub fn cmd_compare(a: &Path, b: &Path, out: Option<&Path>) -> Result<CompareReport> {
    let report = compare_rows(&load_metrics(a)?, &load_metrics(b)?)?;
    if let Some(out) = out {
        write(&out.join("compare.csv"), &report.to_csv())?;
    }
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct ReplayReport {
    pub steps: usize,
    pub metrics: EpisodeMetrics,
}

/// Rebuilds the run configuration stored in a trace header.
pub fn config_from_trace(trace: &EpisodeTrace) -> Result<RunConfig> {
    let pairs = trace
        .config
        .iter()
        .filter(|(k, _)| !k.starts_with(META_PREFIX))
        .map(|(k, v)| (k.as_str(), v.as_str()));
    RunConfig::from_pairs(pairs).context("trace header holds an invalid configuration")
}

/// Re-simulates a trace from its seed, configuration and recorded actions
/// and requires every recorded value to match bit for bit.
pub fn cmd_replay(path: &Path) -> Result<ReplayReport> {
    let trace = EpisodeTrace::load(path)?;
    if trace.config.is_empty() {
        bail!("{} has no configuration header to replay from", path.display());
    }
    let cfg = config_from_trace(&trace)?;
    let env = cfg.env_config()?;
    let replayed = replay_trace(&env, &trace)?;
    if let Some(m) = first_mismatch(&trace, &replayed) {
        return Err(VerificationFailure(format!(
            "replay diverges at step {} (record {}): {} recorded {} but re-simulation gives {}",
            m.t, m.record, m.field, m.expected, m.found
        ))
        .into());
    }
    let metrics = evaluate_episode(&replayed, &metrics_config(&cfg))?;
    Ok(ReplayReport {
        steps: replayed.len(),
        metrics,
    })
}
