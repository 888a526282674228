//! Experiment configuration: a TOML file layered over profile defaults.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use relaygen::agent::{AgentConfig, Algorithm};
use relaygen::env::{EnvConfig, CARTPOLE_ID};
use relaygen::relay::{FailureMode, RelayConfig};
use relaygen::rng::Stream;
use relaygen::sta::{NaiveConfig, StaConfig};

use crate::HarnessError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Desk,
    Paper,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Ordinary,
    Sta,
    Naive,
    InfiniteBuffer,
    RandomHparams,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Ordinary => "ordinary",
            Variant::Sta => "sta",
            Variant::Naive => "naive",
            Variant::InfiniteBuffer => "infinite-buffer",
            Variant::RandomHparams => "random-hparams",
        }
    }
}

/// Ranges for the randomized-hyperparameter fleet.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomHparams {
    /// Log-uniform bounds.
    pub lr: [f64; 2],
    pub batch_sizes: Vec<usize>,
    pub hidden_sizes: Vec<Vec<usize>>,
    pub update_every: Vec<u64>,
    /// Fixed temperature, log-uniform bounds.
    pub alpha: [f64; 2],
}

impl Default for RandomHparams {
    fn default() -> Self {
        Self {
            lr: [1e-4, 1e-3],
            batch_sizes: vec![64, 128, 256],
            hidden_sizes: vec![vec![32, 32], vec![64, 64], vec![128, 128]],
            update_every: vec![1, 2, 4],
            alpha: [0.02, 0.5],
        }
    }
}

impl RandomHparams {
    pub fn sample(&self, base: &AgentConfig, rng: &mut Stream) -> AgentConfig {
        let log_uniform = |r: &mut Stream, [lo, hi]: [f64; 2]| {
            (lo.ln() + r.uniform() * (hi.ln() - lo.ln())).exp()
        };
        let lr = log_uniform(rng, self.lr);
        let batch_size = self.batch_sizes[rng.below(self.batch_sizes.len())];
        let hidden_sizes = self.hidden_sizes[rng.below(self.hidden_sizes.len())].clone();
        let update_every = self.update_every[rng.below(self.update_every.len())];
        let alpha = log_uniform(rng, self.alpha);
        AgentConfig {
            lr,
            batch_size,
            hidden_sizes,
            update_every,
            initial_alpha: alpha,
            learn_alpha: false,
            ..base.clone()
        }
    }

    fn validate(&self) -> Result<(), String> {
        let ok_range = |[lo, hi]: [f64; 2]| lo > 0.0 && hi >= lo;
        if !ok_range(self.lr) || !ok_range(self.alpha) {
            return Err("random_hparams ranges must be positive and ordered".into());
        }
        if self.batch_sizes.is_empty()
            || self.hidden_sizes.is_empty()
            || self.update_every.is_empty()
        {
            return Err("random_hparams choice lists must be non-empty".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelaySection {
    #[serde(flatten)]
    pub base: RelayConfig,
    /// Horizons evaluated by `relay`, one matrix each. Empty means just
    /// `horizon`.
    pub horizons: Vec<u64>,
    /// Extra return-threshold matrices, one per value.
    pub return_thresholds: Vec<f64>,
    /// Number of parallel workers for matrix cells.
    pub jobs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub profile: Profile,
    pub master_seed: u64,
    pub variant: Variant,
    pub total_steps: u64,
    pub n_seeds: usize,
    /// Explicit seeds; when empty, `0..n_seeds`.
    pub seeds: Vec<u64>,
    /// Ordinary-evaluation episodes recorded per trained agent.
    pub eval_episodes: usize,
    pub out_dir: String,
    pub env: EnvConfig,
    pub agent: AgentConfig,
    pub sta: StaConfig,
    pub naive: NaiveConfig,
    pub relay: RelaySection,
    pub random_hparams: RandomHparams,
}

/// Profile defaults for the given env as a TOML table.
pub fn profile_defaults(profile: Profile, env_id: &str) -> Result<Table, HarnessError> {
    let env = EnvConfig::by_id(env_id).map_err(|e| HarnessError::Config(e.to_string()))?;
    let cartpole = env_id == CARTPOLE_ID;
    let (hidden, total_steps, n_seeds, m, horizon, start_steps) = match profile {
        Profile::Desk => (
            vec![64, 64],
            if cartpole { 100_000 } else { 300_000 },
            5,
            50,
            200,
            1_000,
        ),
        Profile::Paper => (vec![256, 256], 3_000_000, 10, 200, 500, 10_000),
    };
    let cfg = ExperimentConfig {
        name: "experiment".into(),
        profile,
        master_seed: 0,
        variant: Variant::Ordinary,
        total_steps,
        n_seeds,
        seeds: Vec::new(),
        eval_episodes: 10,
        out_dir: "out".into(),
        env,
        agent: AgentConfig {
            hidden_sizes: hidden,
            start_steps,
            ..AgentConfig::default()
        },
        sta: StaConfig::default(),
        naive: NaiveConfig::default(),
        relay: RelaySection {
            base: RelayConfig {
                m_trajs: m,
                horizon,
                ..RelayConfig::default()
            },
            horizons: Vec::new(),
            return_thresholds: Vec::new(),
            jobs: 1,
        },
        random_hparams: RandomHparams::default(),
    };
    match Value::try_from(&cfg).map_err(|e| HarnessError::Config(e.to_string()))? {
        Value::Table(t) => Ok(t),
        _ => unreachable!("config serializes to a table"),
    }
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) if k != "env" => merge(b, o),
            (Some(Value::Table(b)), Value::Table(o)) => {
                // switching env id replaces the whole env section
                if o.get("id").is_some() && o.get("id") != b.get("id") {
                    *b = o;
                } else {
                    merge(b, o);
                }
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

impl ExperimentConfig {
    /// Parses `text` over the defaults of its profile (or `profile_override`).
    pub fn from_toml(text: &str, profile_override: Option<Profile>) -> Result<Self, HarnessError> {
        let mut file: Table =
            toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        let profile = match profile_override {
            Some(p) => p,
            None => match file.get("profile") {
                Some(v) => v
                    .clone()
                    .try_into()
                    .map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?,
                None => Profile::Desk,
            },
        };
        file.insert(
            "profile".into(),
            Value::try_from(profile).expect("profile serializes"),
        );
        let env_id = file
            .get("env")
            .and_then(|e| e.get("id"))
            .and_then(Value::as_str)
            .unwrap_or(relaygen::env::HOPPER_ID)
            .to_string();
        let mut base = profile_defaults(profile, &env_id)?;
        merge(&mut base, file);
        let cfg: Self = Value::Table(base)
            .try_into()
            .map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(
        path: &std::path::Path,
        profile_override: Option<Profile>,
    ) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml(&text, profile_override)
    }

    /// The fully resolved config, as written next to results.
    pub fn effective_text(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of [`Self::effective_text`].
    pub fn hash(&self) -> String {
        hash_text(&self.effective_text())
    }

    pub fn seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            (0..self.n_seeds as u64).collect()
        } else {
            self.seeds.clone()
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        self.env.validate().or_else(bad)?;
        self.agent
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        self.sta
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        self.relay
            .base
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        self.random_hparams.validate().or_else(bad)?;
        let mut seeds = self.seeds();
        seeds.sort_unstable();
        if seeds.windows(2).any(|w| w[0] == w[1]) {
            return bad("seeds must be distinct".into());
        }
        if self.relay.horizons.contains(&0) {
            return bad("relay horizons must be positive".into());
        }
        if self.variant == Variant::Naive
            && self.naive.p0 > 0.0
            && self.naive.n_pretrained == 0
            && self.naive.pool_path.is_none()
        {
            return bad("naive variant needs pretrained agents or a pool file".into());
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return bad("name must be a non-empty file-name-safe string".into());
        }
        Ok(())
    }

    /// Agent hyperparameters for one run of the fleet.
    pub fn agent_config_for(&self, seed: u64) -> AgentConfig {
        match self.variant {
            Variant::InfiniteBuffer => AgentConfig {
                replay_capacity: None,
                ..self.agent.clone()
            },
            Variant::RandomHparams => {
                let mut rng = Stream::derive(self.master_seed, seed, "hparams");
                self.random_hparams.sample(&self.agent, &mut rng)
            }
            _ => self.agent.clone(),
        }
    }

    pub fn algorithm(&self) -> Algorithm {
        self.agent.algorithm
    }

    /// Relay configs for every requested (horizon, failure mode) pair.
    pub fn relay_configs(&self) -> Vec<RelayConfig> {
        let mut modes = vec![FailureMode::SimulatorTermination];
        modes.extend(
            self.relay
                .return_thresholds
                .iter()
                .map(|t| FailureMode::ReturnBelow { threshold: *t }),
        );
        let mut out = Vec::new();
        let horizons = if self.relay.horizons.is_empty() {
            vec![self.relay.base.horizon]
        } else {
            self.relay.horizons.clone()
        };
        for h in &horizons {
            for m in &modes {
                out.push(RelayConfig {
                    horizon: *h,
                    failure_mode: *m,
                    ..self.relay.base.clone()
                });
            }
        }
        out
    }
}

pub fn hash_text(text: &str) -> String {
    hash_bytes(text.as_bytes())
}

pub fn hash_bytes(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
