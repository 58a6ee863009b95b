use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::env::EnvConfig;
use crate::error::{Error, Result};

/// One phase of training at a fixed qubit count.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stage {
    pub n: usize,
    /// Environment steps to spend at this qubit count.
    pub steps: u64,
}

/// Every knob of a training run. Serializes to `key=value` lines.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub hidden: usize,
    pub rounds: usize,
    pub stages: Vec<Stage>,
    pub num_envs: usize,
    pub rollout_length: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs_per_update: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub policy_clip: f64,
    pub value_clip: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    pub d_start: f64,
    pub d_max: f64,
    pub advance_threshold: f64,
    pub success_window: usize,
    pub single_qubit_cost: f64,
    pub two_qubit_cost: f64,
    pub success_bonus: f64,
    pub shaping_scale: f64,
    /// Wall-clock limit per stage; zero means none.
    pub stage_seconds: u64,
    /// Updates between periodic checkpoints; zero disables them.
    pub checkpoint_every: usize,
    pub out_dir: PathBuf,
    pub init_weights: Option<PathBuf>,
}

impl Default for TrainConfig {
    /// Large-scale settings: 2048 environments, 256-step rollouts, `h = 128`,
    /// three message rounds, six then ten qubits.
    fn default() -> Self {
        Self {
            seed: 0,
            hidden: 128,
            rounds: 3,
            stages: vec![
                Stage { n: 6, steps: 500_000_000 },
                Stage { n: 10, steps: 1_000_000_000 },
            ],
            num_envs: 2048,
            rollout_length: 256,
            learning_rate: 2.5e-4,
            batch_size: 8192,
            epochs_per_update: 5,
            gamma: 0.99,
            lambda: 0.95,
            policy_clip: 0.15,
            value_clip: 0.2,
            entropy_coef: 0.01,
            value_coef: 0.5,
            max_grad_norm: 0.5,
            d_start: 1.0,
            d_max: 1000.0,
            advance_threshold: 1.0,
            success_window: 512,
            single_qubit_cost: 0.01,
            two_qubit_cost: 1.0,
            success_bonus: 25.0,
            shaping_scale: 1.0,
            stage_seconds: 0,
            checkpoint_every: 50,
            out_dir: PathBuf::from("train_out"),
            init_weights: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Format(format!("bad value `{v}` for `{key}`")))
}

impl TrainConfig {
    /// Single-CPU settings: two then three qubits.
    pub fn desk() -> Self {
        Self {
            hidden: 32,
            rounds: 2,
            stages: vec![Stage { n: 2, steps: 600_000 }, Stage { n: 3, steps: 1_500_000 }],
            num_envs: 64,
            rollout_length: 64,
            learning_rate: 1e-3,
            batch_size: 1024,
            epochs_per_update: 3,
            stage_seconds: 0,
            checkpoint_every: 20,
            ..Self::default()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "default" => Ok(Self::default()),
            "desk" => Ok(Self::desk()),
            _ => Err(Error::Argument(format!("unknown training preset `{name}`"))),
        }
    }

    pub fn env_config(&self) -> EnvConfig {
        EnvConfig {
            single_qubit_cost: self.single_qubit_cost,
            two_qubit_cost: self.two_qubit_cost,
            success_bonus: self.success_bonus,
            shaping_scale: self.shaping_scale,
            step_cap: EnvConfig::default().step_cap,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Argument(m.into()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad("lambda must lie in [0, 1]");
        }
        if !(self.policy_clip > 0.0 && self.value_clip > 0.0) {
            return bad("clip coefficients must be positive");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if self.hidden == 0 || self.num_envs == 0 || self.rollout_length == 0 {
            return bad("hidden, num_envs and rollout_length must be positive");
        }
        if self.batch_size == 0 || self.epochs_per_update == 0 {
            return bad("batch_size and epochs_per_update must be positive");
        }
        if self.stages.is_empty() || self.stages.iter().any(|s| s.n == 0) {
            return bad("at least one stage with a positive qubit count is required");
        }
        if !(1.0 <= self.d_start && self.d_start <= self.d_max && self.d_max <= 1000.0) {
            return bad("difficulties must satisfy 1 <= d_start <= d_max <= 1000");
        }
        if self.success_window == 0 || !(0.0..=1.0).contains(&self.advance_threshold) {
            return bad("success window must be positive and threshold in [0, 1]");
        }
        self.env_config().validate()
    }

    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "preset" => {
                let out_dir = self.out_dir.clone();
                *self = Self::preset(v)?;
                self.out_dir = out_dir;
            }
            "seed" => self.seed = parse(key, v)?,
            "hidden" => self.hidden = parse(key, v)?,
            "rounds" => self.rounds = parse(key, v)?,
            "stages" => {
                self.stages = v
                    .split(',')
                    .map(|s| {
                        let (n, steps) = s
                            .trim()
                            .split_once(':')
                            .ok_or_else(|| Error::Format(format!("stage `{s}` is not `n:steps`")))?;
                        Ok(Stage {
                            n: parse(key, n)?,
                            steps: parse(key, steps)?,
                        })
                    })
                    .collect::<Result<_>>()?
            }
            "num_envs" => self.num_envs = parse(key, v)?,
            "rollout_length" => self.rollout_length = parse(key, v)?,
            "learning_rate" => self.learning_rate = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "epochs_per_update" => self.epochs_per_update = parse(key, v)?,
            "gamma" => self.gamma = parse(key, v)?,
            "lambda" => self.lambda = parse(key, v)?,
            "policy_clip" => self.policy_clip = parse(key, v)?,
            "value_clip" => self.value_clip = parse(key, v)?,
            "entropy_coef" => self.entropy_coef = parse(key, v)?,
            "value_coef" => self.value_coef = parse(key, v)?,
            "max_grad_norm" => self.max_grad_norm = parse(key, v)?,
            "d_start" => self.d_start = parse(key, v)?,
            "d_max" => self.d_max = parse(key, v)?,
            "advance_threshold" => self.advance_threshold = parse(key, v)?,
            "success_window" => self.success_window = parse(key, v)?,
            "single_qubit_cost" => self.single_qubit_cost = parse(key, v)?,
            "two_qubit_cost" => self.two_qubit_cost = parse(key, v)?,
            "success_bonus" => self.success_bonus = parse(key, v)?,
            "shaping_scale" => self.shaping_scale = parse(key, v)?,
            "stage_seconds" => self.stage_seconds = parse(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            "init_weights" => {
                self.init_weights = if v.is_empty() { None } else { Some(PathBuf::from(v)) }
            }
            _ => return Err(Error::Format(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Parses `key=value` lines; `#` starts a comment. A `preset` line resets
    /// every field to that preset, so it should come first.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("line {}: expected key=value", lineno + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let stages: Vec<String> = self.stages.iter().map(|st| format!("{}:{}", st.n, st.steps)).collect();
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "hidden={}", self.hidden);
        let _ = writeln!(s, "rounds={}", self.rounds);
        let _ = writeln!(s, "stages={}", stages.join(","));
        let _ = writeln!(s, "num_envs={}", self.num_envs);
        let _ = writeln!(s, "rollout_length={}", self.rollout_length);
        let _ = writeln!(s, "learning_rate={}", self.learning_rate);
        let _ = writeln!(s, "batch_size={}", self.batch_size);
        let _ = writeln!(s, "epochs_per_update={}", self.epochs_per_update);
        let _ = writeln!(s, "gamma={}", self.gamma);
        let _ = writeln!(s, "lambda={}", self.lambda);
        let _ = writeln!(s, "policy_clip={}", self.policy_clip);
        let _ = writeln!(s, "value_clip={}", self.value_clip);
        let _ = writeln!(s, "entropy_coef={}", self.entropy_coef);
        let _ = writeln!(s, "value_coef={}", self.value_coef);
        let _ = writeln!(s, "max_grad_norm={}", self.max_grad_norm);
        let _ = writeln!(s, "d_start={}", self.d_start);
        let _ = writeln!(s, "d_max={}", self.d_max);
        let _ = writeln!(s, "advance_threshold={}", self.advance_threshold);
        let _ = writeln!(s, "success_window={}", self.success_window);
        let _ = writeln!(s, "single_qubit_cost={}", self.single_qubit_cost);
        let _ = writeln!(s, "two_qubit_cost={}", self.two_qubit_cost);
        let _ = writeln!(s, "success_bonus={}", self.success_bonus);
        let _ = writeln!(s, "shaping_scale={}", self.shaping_scale);
        let _ = writeln!(s, "stage_seconds={}", self.stage_seconds);
        let _ = writeln!(s, "checkpoint_every={}", self.checkpoint_every);
        let _ = writeln!(s, "out_dir={}", self.out_dir.display());
        if let Some(p) = &self.init_weights {
            let _ = writeln!(s, "init_weights={}", p.display());
        }
        s
    }
}
