//! Run configuration: a sectioned `key = value` file plus flag overrides.
//!
//! The same settings flatten to `section.key` pairs, which are echoed into
//! every run directory and every trace header so a run can be rebuilt from
//! its artifacts alone.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use habcov_core::baseline::BaselineParams;
use habcov_core::environment::EnvConfig;
use habcov_core::qmix::{eval_seeds, TrainConfig};
use habcov_core::windfield::{ForecastNoise, GriddedWindModel, LayeredWindModel, WindLayer, WindModel};
use habcov_core::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum WindSpec {
    Uniform {
        bearing_deg: f64,
        speed: f64,
    },
    Opposing {
        speed: f64,
    },
    Random {
        seed: u64,
        layers: usize,
    },
    /// Steady layers given as `center_m:bearing_deg:speed:extent_m`, `;`-separated.
    Layered {
        spec: String,
    },
    Gridded {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq)]
struct WindSettings {
    model: String,
    speed: f64,
    bearing_deg: f64,
    layers: usize,
    seed: u64,
    spec: String,
    path: String,
}

impl Default for WindSettings {
    fn default() -> Self {
        Self {
            model: "opposing".into(),
            speed: 10.0,
            bearing_deg: 90.0,
            layers: 6,
            seed: 0,
            spec: String::new(),
            path: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub agents: usize,
    pub levels: usize,
    pub r_coverage_km: f64,
    pub episode_steps: usize,
    pub coverage_weight: f64,
    pub dispersion_weight: f64,
    pub v_max: f64,
    pub ground_radius_km: f64,
    wind: WindSettings,
    pub forecast: ForecastNoise,
    pub train: TrainConfig,
    pub baseline: BaselineParams,
    pub seed: u64,
    /// Number of derived evaluation seeds when no explicit list is given.
    pub eval_seed_count: usize,
    pub seeds: Option<Vec<u64>>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            agents: 3,
            levels: 37,
            r_coverage_km: 150.0,
            episode_steps: 2880,
            coverage_weight: 10.0,
            dispersion_weight: 3.0,
            v_max: habcov_core::windfield::DEFAULT_V_MAX,
            ground_radius_km: habcov_core::metrics::DEFAULT_GROUND_RADIUS_KM,
            wind: WindSettings::default(),
            forecast: ForecastNoise::default(),
            train: TrainConfig::default(),
            baseline: BaselineParams::default(),
            seed: 0,
            eval_seed_count: 20,
            seeds: None,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_seed_list(key: &str, value: &str) -> Result<Vec<u64>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn parse_layers(spec: &str) -> Result<Vec<WindLayer>> {
    spec.split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|layer| {
            let f: Vec<&str> = layer.split(':').collect();
            if f.len() != 4 {
                return Err(Error::Config(format!(
                    "wind.spec layer {layer:?} needs center_m:bearing_deg:speed:extent_m"
                )));
            }
            let v: Vec<f64> = f.iter().map(|x| parse("wind.spec", x)).collect::<Result<_>>()?;
            Ok(WindLayer::steady(v[0], v[1].to_radians(), v[2], v[3]))
        })
        .collect()
}

impl RunConfig {
    pub fn wind_spec(&self) -> Result<WindSpec> {
        let w = &self.wind;
        Ok(match w.model.as_str() {
            "uniform" => WindSpec::Uniform {
                bearing_deg: w.bearing_deg,
                speed: w.speed,
            },
            "opposing" => WindSpec::Opposing { speed: w.speed },
            "random" => WindSpec::Random {
                seed: w.seed,
                layers: w.layers,
            },
            "layered" => WindSpec::Layered { spec: w.spec.clone() },
            "gridded" => {
                if w.path.is_empty() {
                    return Err(Error::Config("wind.path is required for the gridded model".into()));
                }
                WindSpec::Gridded {
                    path: PathBuf::from(&w.path),
                }
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown wind.model {other:?} (expected uniform, opposing, random, layered or gridded)"
                )))
            }
        })
    }

    pub fn set_wind(&mut self, spec: &WindSpec) {
        let w = &mut self.wind;
        match spec {
            WindSpec::Uniform { bearing_deg, speed } => {
                w.model = "uniform".into();
                w.bearing_deg = *bearing_deg;
                w.speed = *speed;
            }
            WindSpec::Opposing { speed } => {
                w.model = "opposing".into();
                w.speed = *speed;
            }
            WindSpec::Random { seed, layers } => {
                w.model = "random".into();
                w.seed = *seed;
                w.layers = *layers;
            }
            WindSpec::Layered { spec } => {
                w.model = "layered".into();
                w.spec = spec.clone();
            }
            WindSpec::Gridded { path } => {
                w.model = "gridded".into();
                w.path = path.display().to_string();
            }
        }
    }

    pub fn build_wind(&self) -> Result<Arc<dyn WindModel>> {
        Ok(match self.wind_spec()? {
            WindSpec::Uniform { bearing_deg, speed } => {
                Arc::new(LayeredWindModel::uniform(bearing_deg.to_radians(), speed))
            }
            WindSpec::Opposing { speed } => Arc::new(LayeredWindModel::opposing_layers(speed, self.v_max)),
            WindSpec::Random { seed, layers } => Arc::new(LayeredWindModel::random(seed, layers, self.v_max)),
            WindSpec::Layered { spec } => Arc::new(LayeredWindModel::new(parse_layers(&spec)?, 0, self.v_max)?),
            WindSpec::Gridded { path } => Arc::new(GriddedWindModel::load(&path, self.v_max)?),
        })
    }

    pub fn env_config(&self) -> Result<EnvConfig> {
        let mut env = EnvConfig::new(self.agents, self.build_wind()?);
        env.n_levels = self.levels;
        env.r_coverage_km = self.r_coverage_km;
        env.episode_steps = self.episode_steps;
        env.coverage_weight = self.coverage_weight;
        env.dispersion_weight = self.dispersion_weight;
        env.v_max = self.v_max;
        env.forecast_noise = self.forecast;
        env.validate()?;
        Ok(env)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train
        }
    }

    /// Explicit seeds if given, otherwise seeds derived from the master seed.
    pub fn episode_seeds(&self) -> Vec<u64> {
        self.seeds
            .clone()
            .unwrap_or_else(|| eval_seeds(self.seed, self.eval_seed_count))
    }

    pub fn validate(&self) -> Result<()> {
        self.wind_spec()?;
        if self.ground_radius_km <= 0.0 {
            return Err(Error::Config("env.ground_radius_km must be positive".into()));
        }
        if self.baseline.refresh_minutes == 0 || self.baseline.grid_km <= 0.0 || self.baseline.v_cap <= 0.0 {
            return Err(Error::Config(
                "baseline.refresh_minutes, baseline.grid_km and baseline.v_cap must be positive".into(),
            ));
        }
        if matches!(&self.seeds, Some(s) if s.is_empty()) {
            return Err(Error::Config("run.seeds is empty".into()));
        }
        self.train_config().validate()
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (section, name) = key
            .split_once('.')
            .ok_or_else(|| Error::Config(format!("config key {key:?} needs a section")))?;
        let v = value.trim();
        match (section, name) {
            ("env", "agents") => self.agents = parse(key, v)?,
            ("env", "levels") => self.levels = parse(key, v)?,
            ("env", "r_coverage_km") => self.r_coverage_km = parse(key, v)?,
            ("env", "steps") => self.episode_steps = parse(key, v)?,
            ("env", "coverage_weight") => self.coverage_weight = parse(key, v)?,
            ("env", "dispersion_weight") => self.dispersion_weight = parse(key, v)?,
            ("env", "v_max") => self.v_max = parse(key, v)?,
            ("env", "ground_radius_km") => self.ground_radius_km = parse(key, v)?,
            ("wind", "model") => self.wind.model = v.to_string(),
            ("wind", "speed") => self.wind.speed = parse(key, v)?,
            ("wind", "bearing_deg") => self.wind.bearing_deg = parse(key, v)?,
            ("wind", "layers") => self.wind.layers = parse(key, v)?,
            ("wind", "seed") => self.wind.seed = parse(key, v)?,
            ("wind", "spec") => self.wind.spec = v.to_string(),
            ("wind", "path") => self.wind.path = v.to_string(),
            ("forecast", "bearing_sd_rad") => self.forecast.bearing_sd = parse(key, v)?,
            ("forecast", "speed_sd_mps") => self.forecast.speed_sd = parse(key, v)?,
            ("forecast", "correlation_m") => self.forecast.correlation_m = parse(key, v)?,
            ("train", "seed") => return Err(Error::Config("unknown config key train.seed (use run.seed)".into())),
            ("train", k) => self.train.set(k, v)?,
            ("baseline", "refresh_minutes") => self.baseline.refresh_minutes = parse(key, v)?,
            ("baseline", "lloyd_iterations") => self.baseline.lloyd_iterations = parse(key, v)?,
            ("baseline", "grid_km") => self.baseline.grid_km = parse(key, v)?,
            ("baseline", "v_cap") => self.baseline.v_cap = parse(key, v)?,
            ("baseline", "deadband_m") => self.baseline.deadband_m = parse(key, v)?,
            ("baseline", "arrival_km") => self.baseline.arrival_km = parse(key, v)?,
            ("run", "seed") => self.seed = parse(key, v)?,
            ("run", "eval_seeds") => self.eval_seed_count = parse(key, v)?,
            ("run", "seeds") => {
                self.seeds = if v.is_empty() {
                    None
                } else {
                    Some(parse_seed_list(key, v)?)
                }
            }
            _ => return Err(Error::Config(format!("unknown config key {key}"))),
        }
        Ok(())
    }

    /// Every setting as `section.key` / value, in dump order.
    pub fn pairs(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = Vec::new();
        let mut push = |k: &str, v: String| out.push((k.to_string(), v));
        push("env.agents", self.agents.to_string());
        push("env.levels", self.levels.to_string());
        push("env.r_coverage_km", self.r_coverage_km.to_string());
        push("env.steps", self.episode_steps.to_string());
        push("env.coverage_weight", self.coverage_weight.to_string());
        push("env.dispersion_weight", self.dispersion_weight.to_string());
        push("env.v_max", self.v_max.to_string());
        push("env.ground_radius_km", self.ground_radius_km.to_string());
        let w = &self.wind;
        push("wind.model", w.model.clone());
        push("wind.speed", w.speed.to_string());
        push("wind.bearing_deg", w.bearing_deg.to_string());
        push("wind.layers", w.layers.to_string());
        push("wind.seed", w.seed.to_string());
        push("wind.spec", w.spec.clone());
        push("wind.path", w.path.clone());
        push("forecast.bearing_sd_rad", self.forecast.bearing_sd.to_string());
        push("forecast.speed_sd_mps", self.forecast.speed_sd.to_string());
        push("forecast.correlation_m", self.forecast.correlation_m.to_string());
        for (k, v) in self.train.pairs() {
            if k != "seed" {
                push(&format!("train.{k}"), v);
            }
        }
        let b = &self.baseline;
        push("baseline.refresh_minutes", b.refresh_minutes.to_string());
        push("baseline.lloyd_iterations", b.lloyd_iterations.to_string());
        push("baseline.grid_km", b.grid_km.to_string());
        push("baseline.v_cap", b.v_cap.to_string());
        push("baseline.deadband_m", b.deadband_m.to_string());
        push("baseline.arrival_km", b.arrival_km.to_string());
        push("run.seed", self.seed.to_string());
        push("run.eval_seeds", self.eval_seed_count.to_string());
        let seeds = self
            .seeds
            .as_ref()
            .map(|s| s.iter().map(u64::to_string).collect::<Vec<_>>().join(","))
            .unwrap_or_default();
        push("run.seeds", seeds);
        out
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut c = Self::default();
        for (k, v) in pairs {
            c.set(k, v)?;
        }
        Ok(c)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut section = String::new();
        for (k, v) in self.pairs() {
            let (s, name) = k.split_once('.').expect("pairs are sectioned");
            if s != section {
                if !section.is_empty() {
                    out.push('\n');
                }
                out.push_str(&format!("[{s}]\n"));
                section = s.to_string();
            }
            out.push_str(&format!("{name} = {v}\n"));
        }
        out
    }

    /// Applies a config file on top of `self`.
    pub fn apply_text(&mut self, text: &str, context: &str) -> Result<()> {
        let mut section: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim();
                if !["env", "wind", "forecast", "train", "baseline", "run"].contains(&name) {
                    return Err(Error::parse(context, i + 1, format!("unknown config section [{name}]")));
                }
                section = Some(name.to_string());
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(context, i + 1, "expected `key = value`"))?;
            let key = match &section {
                Some(s) => format!("{s}.{}", k.trim()),
                None => k.trim().to_string(),
            };
            self.set(&key, v)
                .map_err(|e| Error::parse(context, i + 1, e.to_string()))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut c = Self::default();
        c.apply_text(&text, &path.display().to_string())?;
        Ok(c)
    }
}

/// Seeds file: one integer per line, `#` comments allowed.
pub fn parse_seed_file(text: &str, context: &str) -> Result<Vec<u64>> {
    let mut seeds = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        seeds.push(
            line.parse()
                .map_err(|_| Error::parse(context, i + 1, format!("invalid seed {line:?}")))?,
        );
    }
    if seeds.is_empty() {
        return Err(Error::Config(format!("{context}: no seeds listed")));
    }
    Ok(seeds)
}
