//! Episode traces.
//!
//! Text layout, one step per line after a `#` header:
//!
//! ```text
//! # habcov-trace v1
//! # seed = 42
//! # agents = 2
//! # steps = 2880
//! # config env.n_agents = 2
//! 1 0 x y alt action 1 1 x y alt action | reward coverage_ratio separation
//! ```
//!
//! `t` is the minute at which the recorded position holds; `action` is the
//! action that produced it. Floats use shortest round-trip formatting, so a
//! written trace reads back bit-exactly.

use std::fmt::Write as _;
use std::path::Path;

use crate::dynamics::{Action, AgentState};
use crate::{Error, Result};

pub const TRACE_VERSION: u32 = 1;
const MAGIC: &str = "habcov-trace";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentRecord {
    pub x: f64,
    pub y: f64,
    pub altitude: f64,
    pub action: Action,
}

impl AgentRecord {
    pub fn state(&self, agent_id: usize) -> AgentState {
        AgentState {
            agent_id,
            x: self.x,
            y: self.y,
            altitude: self.altitude,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    pub agents: Vec<AgentRecord>,
    pub reward: f64,
    pub coverage_ratio: f64,
    /// Dispersion term of the team reward.
    pub separation: f64,
}

impl StepRecord {
    pub fn states(&self) -> Vec<AgentState> {
        self.agents.iter().enumerate().map(|(i, a)| a.state(i)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub seed: u64,
    pub n_agents: usize,
    /// Flattened `section.key = value` snapshot of the run configuration.
    pub config: Vec<(String, String)>,
    pub records: Vec<StepRecord>,
}

impl EpisodeTrace {
    pub fn new(seed: u64, n_agents: usize) -> Self {
        Self {
            seed,
            n_agents,
            config: Vec::new(),
            records: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn episode_return(&self) -> f64 {
        self.records.iter().map(|r| r.reward).sum()
    }

    pub fn config_value(&self, key: &str) -> Option<&str> {
        self.config.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# {MAGIC} v{TRACE_VERSION}");
        let _ = writeln!(out, "# seed = {}", self.seed);
        let _ = writeln!(out, "# agents = {}", self.n_agents);
        let _ = writeln!(out, "# steps = {}", self.records.len());
        for (k, v) in &self.config {
            let _ = writeln!(out, "# config {k} = {v}");
        }
        for r in &self.records {
            for (i, a) in r.agents.iter().enumerate() {
                let _ = write!(out, "{} {} {} {} {} {} ", r.t, i, a.x, a.y, a.altitude, a.action);
            }
            let _ = writeln!(out, "| {} {} {}", r.reward, r.coverage_ratio, r.separation);
        }
        out
    }

    pub fn from_text(text: &str, context: &str) -> Result<Self> {
        let perr = |line: usize, msg: String| Error::parse(context, line, msg);
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));

        let (n, first) = lines.next().ok_or_else(|| perr(1, "empty trace".into()))?;
        let version = first
            .strip_prefix("# ")
            .and_then(|s| s.strip_prefix(MAGIC))
            .and_then(|s| s.trim().strip_prefix('v'))
            .ok_or_else(|| perr(n, format!("not a trace file (expected `# {MAGIC} v{TRACE_VERSION}`)")))?;
        if version != TRACE_VERSION.to_string() {
            return Err(perr(
                n,
                format!("unsupported trace version v{version}, expected v{TRACE_VERSION}"),
            ));
        }

        let mut seed = None;
        let mut agents = None;
        let mut steps = None;
        let mut config = Vec::new();
        let mut records = Vec::new();
        let mut last = n;
        for (n, line) in lines {
            last = n;
            if let Some(h) = line.strip_prefix('#') {
                let h = h.trim();
                if let Some(kv) = h.strip_prefix("config ") {
                    let (k, v) = kv
                        .split_once('=')
                        .ok_or_else(|| perr(n, "config line needs `key = value`".into()))?;
                    config.push((k.trim().to_string(), v.trim().to_string()));
                    continue;
                }
                let (k, v) = h
                    .split_once(" = ")
                    .ok_or_else(|| perr(n, format!("malformed header `{h}`")))?;
                let num: u64 = v
                    .trim()
                    .parse()
                    .map_err(|_| perr(n, format!("`{}` is not an integer", v.trim())))?;
                match k.trim() {
                    "seed" => seed = Some(num),
                    "agents" => agents = Some(num as usize),
                    "steps" => steps = Some(num as usize),
                    other => return Err(perr(n, format!("unknown header `{other}`"))),
                }
                continue;
            }
            let n_agents = agents.ok_or_else(|| perr(n, "record before `# agents` header".into()))?;
            records.push(parse_record(line, n_agents).map_err(|m| perr(n, m))?);
        }
        let seed = seed.ok_or_else(|| perr(last, "missing `# seed` header".into()))?;
        let n_agents = agents.ok_or_else(|| perr(last, "missing `# agents` header".into()))?;
        let steps = steps.ok_or_else(|| perr(last, "missing `# steps` header".into()))?;
        if records.len() != steps {
            return Err(perr(
                last,
                format!(
                    "truncated trace: header declares {steps} steps, found {}",
                    records.len()
                ),
            ));
        }
        Ok(Self {
            seed,
            n_agents,
            config,
            records,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, &path.display().to_string())
    }

    /// One row per agent per step.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,agent_id,x,y,alt,action,reward,coverage_ratio,separation\n");
        for r in &self.records {
            for (i, a) in r.agents.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{}",
                    r.t, i, a.x, a.y, a.altitude, a.action, r.reward, r.coverage_ratio, r.separation
                );
            }
        }
        out
    }
}

fn parse_record(line: &str, n_agents: usize) -> std::result::Result<StepRecord, String> {
    let (agents_part, tail) = line.split_once('|').ok_or("missing `|` reward block")?;
    let toks: Vec<&str> = agents_part.split_whitespace().collect();
    if toks.len() != 6 * n_agents {
        return Err(format!("expected {} agent fields, found {}", 6 * n_agents, toks.len()));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|_| format!("`{s}` is not a number"));
    let int = |s: &str| s.parse::<usize>().map_err(|_| format!("`{s}` is not an integer"));
    let mut t = None;
    let mut agents = Vec::with_capacity(n_agents);
    for (i, f) in toks.chunks(6).enumerate() {
        let ti = int(f[0])?;
        if *t.get_or_insert(ti) != ti {
            return Err(format!("inconsistent time stamps {} and {ti}", t.unwrap_or_default()));
        }
        if int(f[1])? != i {
            return Err(format!("expected agent id {i}, found {}", f[1]));
        }
        let action = Action::from_index(int(f[5])?).ok_or_else(|| format!("invalid action `{}`", f[5]))?;
        agents.push(AgentRecord {
            x: num(f[2])?,
            y: num(f[3])?,
            altitude: num(f[4])?,
            action,
        });
    }
    let tail: Vec<&str> = tail.split_whitespace().collect();
    if tail.len() != 3 {
        return Err(format!(
            "expected `| reward coverage_ratio separation`, found {} fields",
            tail.len()
        ));
    }
    Ok(StepRecord {
        t: t.unwrap_or(0),
        agents,
        reward: num(tail[0])?,
        coverage_ratio: num(tail[1])?,
        separation: num(tail[2])?,
    })
}
