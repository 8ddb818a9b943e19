//! Versioned text checkpoint. Floats are written as the hex of their bit
//! patterns so a load restores them exactly.

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::network::{NetDims, QmixNet};
use super::train::{GreedyPolicy, TrainConfig};
use crate::environment::EnvConfig;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &str = "# habcov-qmix-checkpoint v1";

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub dims: NetDims,
    pub n_levels: usize,
    pub config: TrainConfig,
    pub env_steps: u64,
    pub episodes: u64,
    pub grad_steps: u64,
    pub adam_t: u64,
    pub params: Vec<f64>,
    pub target_params: Vec<f64>,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
    pub explore_rng: ChaCha8Rng,
    pub replay_rng: ChaCha8Rng,
}

fn write_rng(out: &mut String, name: &str, r: &ChaCha8Rng) {
    let seed: String = r.get_seed().iter().map(|b| format!("{b:02x}")).collect();
    let _ = writeln!(out, "rng {name} {seed} {} {}", r.get_stream(), r.get_word_pos());
}

fn write_tensor(out: &mut String, name: &str, v: &[f64]) {
    let _ = writeln!(out, "tensor {name} {}", v.len());
    for chunk in v.chunks(8) {
        let line: Vec<String> = chunk.iter().map(|x| format!("{:016x}", x.to_bits())).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
}

struct Reader<'a> {
    lines: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
    context: &'a str,
}

impl<'a> Reader<'a> {
    fn err(&self, line: usize, msg: impl Into<String>) -> Error {
        Error::parse(self.context, line, msg)
    }

    fn next_line(&mut self, what: &str) -> Result<(usize, &'a str)> {
        loop {
            match self.lines.next() {
                Some((_, l)) if l.trim().is_empty() => continue,
                Some((i, l)) => return Ok((i + 1, l.trim())),
                None => {
                    return Err(Error::parse(
                        self.context,
                        0,
                        format!("unexpected end of file, expected {what}"),
                    ))
                }
            }
        }
    }

    fn keyed(&mut self, key: &str) -> Result<(usize, Vec<&'a str>)> {
        let (n, line) = self.next_line(key)?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some(key) {
            return Err(self.err(n, format!("expected `{key}` line")));
        }
        Ok((n, parts.collect()))
    }

    fn numbers(&mut self, key: &str, count: usize) -> Result<Vec<u64>> {
        let (n, parts) = self.keyed(key)?;
        if parts.len() != count {
            return Err(self.err(n, format!("`{key}` needs {count} values")));
        }
        parts
            .iter()
            .map(|p| p.parse().map_err(|_| self.err(n, format!("bad integer {p:?}"))))
            .collect()
    }

    fn rng(&mut self, name: &str) -> Result<ChaCha8Rng> {
        let (n, parts) = self.keyed("rng")?;
        if parts.len() != 4 || parts[0] != name || parts[1].len() != 64 {
            return Err(self.err(n, format!("malformed rng `{name}` line")));
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&parts[1][2 * i..2 * i + 2], 16).map_err(|_| self.err(n, "bad rng seed hex"))?;
        }
        let stream: u64 = parts[2].parse().map_err(|_| self.err(n, "bad rng stream"))?;
        let pos: u128 = parts[3].parse().map_err(|_| self.err(n, "bad rng position"))?;
        let mut r = ChaCha8Rng::from_seed(seed);
        r.set_stream(stream);
        r.set_word_pos(pos);
        Ok(r)
    }

    fn tensor(&mut self, name: &str) -> Result<Vec<f64>> {
        let (n, parts) = self.keyed("tensor")?;
        if parts.len() != 2 || parts[0] != name {
            return Err(self.err(n, format!("expected tensor `{name}`")));
        }
        let len: usize = parts[1].parse().map_err(|_| self.err(n, "bad tensor length"))?;
        let mut v = Vec::with_capacity(len);
        while v.len() < len {
            let (n, line) = self.next_line(name)?;
            for word in line.split_whitespace() {
                let bits =
                    u64::from_str_radix(word, 16).map_err(|_| self.err(n, format!("bad value {word:?} in {name}")))?;
                v.push(f64::from_bits(bits));
            }
        }
        if v.len() != len {
            return Err(Error::parse(
                self.context,
                0,
                format!("tensor `{name}` overruns its length {len}"),
            ));
        }
        Ok(v)
    }
}

impl Checkpoint {
    pub fn net(&self) -> QmixNet {
        QmixNet::new(self.dims)
    }

    pub fn policy(&self) -> GreedyPolicy {
        GreedyPolicy::new(self.net(), self.params.clone())
    }

    /// Errors unless the environment produces the vector lengths this
    /// network was built for.
    pub fn check_env(&self, env: &EnvConfig) -> Result<()> {
        let checks = [
            ("agent count", self.dims.n_agents, env.n_agents),
            ("wind levels", self.n_levels, env.n_levels),
            ("observation length", self.dims.obs_dim, env.obs_dim()),
            ("global state length", self.dims.state_dim, env.state_dim()),
        ];
        for (what, expected, found) in checks {
            if expected != found {
                return Err(Error::DimensionMismatch {
                    what: format!("checkpoint {what}"),
                    expected,
                    found,
                });
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let d = &self.dims;
        let mut out = String::new();
        let _ = writeln!(out, "{CHECKPOINT_MAGIC}");
        let _ = writeln!(
            out,
            "dims {} {} {} {} {} {} {}",
            d.n_agents, d.obs_dim, d.state_dim, d.hidden, d.hidden_layers, d.embed, d.hyper_hidden
        );
        let _ = writeln!(out, "levels {}", self.n_levels);
        let _ = writeln!(
            out,
            "counters {} {} {} {}",
            self.env_steps, self.episodes, self.grad_steps, self.adam_t
        );
        for (k, v) in self.config.pairs() {
            let _ = writeln!(out, "config {k} = {v}");
        }
        write_rng(&mut out, "explore", &self.explore_rng);
        write_rng(&mut out, "replay", &self.replay_rng);
        write_tensor(&mut out, "params", &self.params);
        write_tensor(&mut out, "target", &self.target_params);
        write_tensor(&mut out, "adam_m", &self.adam_m);
        write_tensor(&mut out, "adam_v", &self.adam_v);
        out
    }

    pub fn from_text(text: &str, context: &str) -> Result<Self> {
        let mut r = Reader {
            lines: text.lines().enumerate().peekable(),
            context,
        };
        let (n, first) = r.next_line("header")?;
        if first != CHECKPOINT_MAGIC {
            return Err(r.err(n, "not a habcov checkpoint (bad header)"));
        }
        let d = r.numbers("dims", 7)?;
        let to_usize = |v: u64| v as usize;
        let dims = NetDims {
            n_agents: to_usize(d[0]),
            obs_dim: to_usize(d[1]),
            state_dim: to_usize(d[2]),
            hidden: to_usize(d[3]),
            hidden_layers: to_usize(d[4]),
            embed: to_usize(d[5]),
            hyper_hidden: to_usize(d[6]),
        };
        let n_levels = r.numbers("levels", 1)?[0] as usize;
        let c = r.numbers("counters", 4)?;
        let mut config = TrainConfig::default();
        while let Some((_, line)) = r.lines.peek() {
            let line = line.trim();
            let Some(rest) = line.strip_prefix("config ") else {
                break;
            };
            let (n, _) = r.next_line("config")?;
            let (k, v) = rest
                .split_once('=')
                .ok_or_else(|| r.err(n, "config line needs `key = value`"))?;
            config.set(k.trim(), v.trim()).map_err(|e| r.err(n, e.to_string()))?;
        }
        let explore_rng = r.rng("explore")?;
        let replay_rng = r.rng("replay")?;
        let params = r.tensor("params")?;
        let target_params = r.tensor("target")?;
        let adam_m = r.tensor("adam_m")?;
        let adam_v = r.tensor("adam_v")?;
        let expected = QmixNet::new(dims).n_params();
        for (what, v) in [
            ("params", &params),
            ("target", &target_params),
            ("adam_m", &adam_m),
            ("adam_v", &adam_v),
        ] {
            if v.len() != expected {
                return Err(Error::DimensionMismatch {
                    what: format!("checkpoint tensor {what}"),
                    expected,
                    found: v.len(),
                });
            }
        }
        Ok(Self {
            dims,
            n_levels,
            config,
            env_steps: c[0],
            episodes: c[1],
            grad_steps: c[2],
            adam_t: c[3],
            params,
            target_params,
            adam_m,
            adam_v,
            explore_rng,
            replay_rng,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, &path.display().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qmix::train::Trainer;
    use crate::windfield::{LayeredWindModel, DEFAULT_V_MAX};
    use rand::Rng;
    use std::sync::Arc;

    fn trained() -> (EnvConfig, Trainer) {
        let mut env = EnvConfig::new(2, Arc::new(LayeredWindModel::opposing_layers(8.0, DEFAULT_V_MAX)));
        env.n_levels = 4;
        env.episode_steps = 20;
        let cfg = TrainConfig {
            learning_rate: 1e-3,
            batch_size: 4,
            total_steps: 45,
            warmup_steps: 10,
            buffer_capacity: 100,
            eval_interval_episodes: 0,
            eval_episodes: 1,
            hidden: 8,
            embed: 4,
            hyper_hidden: 4,
            seed: 7,
            ..TrainConfig::default()
        };
        let mut t = Trainer::new(env.clone(), cfg).unwrap();
        t.run(&mut |_, _| Ok(())).unwrap();
        (env, t)
    }

    #[test]
    fn round_trip_preserves_everything() {
        let (env, t) = trained();
        let ck = t.checkpoint();
        let back = Checkpoint::from_text(&ck.to_text(), "mem").unwrap();
        assert_eq!(back.to_text(), ck.to_text());
        assert_eq!(back.config, ck.config);
        let mut a = ck.explore_rng.clone();
        let mut b = back.explore_rng.clone();
        assert_eq!(a.random::<u64>(), b.random::<u64>());
        back.check_env(&env).unwrap();

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let obs: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..env.obs_dim()).map(|_| rng.random::<f64>()).collect())
            .collect();
        let (p, q) = (ck.policy(), back.policy());
        for pair in obs.chunks(2) {
            assert_eq!(p.actions(pair).unwrap(), q.actions(pair).unwrap());
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let (mut env, t) = trained();
        env.n_agents = 3;
        let err = t.checkpoint().check_env(&env).unwrap_err();
        assert!(
            matches!(
                err,
                Error::DimensionMismatch {
                    expected: 2,
                    found: 3,
                    ..
                }
            ),
            "{err}"
        );
    }

    #[test]
    fn truncated_or_foreign_text_is_rejected() {
        let (_, t) = trained();
        let text = t.checkpoint().to_text();
        let cut = &text[..text.len() / 2];
        assert!(Checkpoint::from_text(cut, "cut").is_err());
        assert!(Checkpoint::from_text("hello\n", "junk").is_err());
    }

    #[test]
    fn resumed_trainer_continues_counters() {
        let (env, t) = trained();
        let ck = t.checkpoint();
        let mut resumed = Trainer::from_checkpoint(env, ck).unwrap();
        assert_eq!(resumed.env_steps(), 45);
        resumed.set_total_steps(70);
        let curve = resumed.run(&mut |_, _| Ok(())).unwrap();
        assert_eq!(curve.last().unwrap().step, 70);
        assert!(resumed.learner().grad_steps > t.learner().grad_steps);
    }
}
