//! Policy training with clipped policy gradients over a random-walk
//! curriculum in difficulty `d` and qubit count `n`.

mod config;
mod curriculum;
mod ppo;

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

pub use config::{Stage, TrainConfig};
pub use curriculum::{curriculum_advance, CurriculumState};
pub use ppo::{clipped_surrogate, gae, log_softmax, ppo_update, Adam, Buffer, LossStats, PpoHyper, StepKind};

use crate::env::{action_table, EnvConfig, VecEnv};
use crate::error::Result;
use crate::policy::{forward_batch, load_weights, save_weights, PolicyWeights};
use crate::rng::{self, SynthRng};
use crate::search::sample_action;
use crate::tableau::Tableau;

/// One rollout, stored time-major: entry `t * num_envs + k` is environment
/// `k` at step `t`.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub num_envs: usize,
    pub length: usize,
    pub states: Vec<Tableau>,
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    pub kinds: Vec<StepKind>,
    pub next_values: Vec<f64>,
    pub episodes: usize,
    pub solved: usize,
    pub episode_returns: Vec<f64>,
}

impl Trajectory {
    /// Runs advantage estimation per environment and flattens.
    pub fn into_buffer(self, gamma: f64, lambda: f64) -> Buffer {
        let (e, len) = (self.num_envs, self.length);
        let mut advantages = vec![0.0; e * len];
        let mut returns = vec![0.0; e * len];
        for k in 0..e {
            let pick = |v: &[f64]| (0..len).map(|t| v[t * e + k]).collect::<Vec<_>>();
            let kinds: Vec<StepKind> = (0..len).map(|t| self.kinds[t * e + k]).collect();
            let (adv, ret) = gae(
                &pick(&self.rewards),
                &pick(&self.values),
                &pick(&self.next_values),
                &kinds,
                gamma,
                lambda,
            );
            for t in 0..len {
                advantages[t * e + k] = adv[t];
                returns[t * e + k] = ret[t];
            }
        }
        Buffer {
            states: self.states,
            actions: self.actions,
            log_probs: self.log_probs,
            values: self.values,
            advantages,
            returns,
        }
    }
}

/// Steps every environment `length` times under the sampled policy, resetting
/// finished episodes from the curriculum and advancing it when a window of
/// episodes is fully solved.
pub fn collect_rollouts(
    w: &PolicyWeights<f32>,
    envs: &mut VecEnv,
    env_cfg: &EnvConfig,
    curriculum: &mut CurriculumState,
    length: usize,
    episode_returns: &mut [f64],
) -> Result<Trajectory> {
    let e = envs.len();
    let n = envs.n();
    let actions_table = action_table(n);
    let mut traj = Trajectory {
        num_envs: e,
        length,
        states: Vec::with_capacity(e * length),
        actions: Vec::with_capacity(e * length),
        log_probs: Vec::with_capacity(e * length),
        values: Vec::with_capacity(e * length),
        rewards: Vec::with_capacity(e * length),
        kinds: Vec::with_capacity(e * length),
        next_values: vec![0.0; e * length],
        episodes: 0,
        solved: 0,
        episode_returns: Vec::new(),
    };
    let mut cfg = *env_cfg;
    let mut truncated_at: Vec<(usize, Tableau)> = Vec::new();
    for t in 0..length {
        cfg.step_cap = EnvConfig::training_cap(curriculum.current_d);
        let states: Vec<Tableau> = envs.states().map(|s| s.tableau.clone()).collect();
        let refs: Vec<&Tableau> = states.iter().collect();
        let out = forward_batch(w, &refs)?;
        let mut gates = Vec::with_capacity(e);
        for k in 0..e {
            let logits = out.logits_of(k);
            let a = sample_action(logits, 1.0, None, envs.rng_mut(k));
            traj.actions.push(a);
            traj.log_probs.push(log_softmax(logits)[a]);
            traj.values.push(out.values[k] as f64);
            gates.push(actions_table[a]);
        }
        traj.states.extend(states);
        let outcomes = envs.batch_step(&gates, &cfg)?;
        for (k, o) in outcomes.iter().enumerate() {
            traj.rewards.push(o.reward);
            episode_returns[k] += o.reward;
            let kind = if o.solved {
                StepKind::Terminal
            } else if o.truncated {
                truncated_at.push((t * e + k, envs.state(k).tableau.clone()));
                StepKind::Truncated
            } else {
                StepKind::Continue
            };
            traj.kinds.push(kind);
            if o.done {
                traj.episodes += 1;
                traj.solved += o.solved as usize;
                traj.episode_returns.push(episode_returns[k]);
                episode_returns[k] = 0.0;
                curriculum.record(o.solved);
                curriculum_advance(curriculum);
                envs.reset_one(k, curriculum.difficulty());
            }
        }
    }
    // bootstrap values: the next step's value, or the final states' values
    let finals: Vec<Tableau> = envs.states().map(|s| s.tableau.clone()).collect();
    let out = forward_batch(w, &finals.iter().collect::<Vec<_>>())?;
    for t in 0..length {
        for k in 0..e {
            let i = t * e + k;
            traj.next_values[i] = if t + 1 < length {
                traj.values[i + e]
            } else {
                out.values[k] as f64
            };
        }
    }
    if !truncated_at.is_empty() {
        let refs: Vec<&Tableau> = truncated_at.iter().map(|(_, s)| s).collect();
        let out = forward_batch(w, &refs)?;
        for (j, (i, _)) in truncated_at.iter().enumerate() {
            traj.next_values[*i] = out.values[j] as f64;
        }
    }
    Ok(traj)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateStats {
    pub update: usize,
    pub steps: u64,
    pub n: usize,
    pub d: f64,
    /// Solved fraction of the episodes that ended during this rollout.
    pub success_rate: f64,
    pub mean_return: f64,
    pub losses: LossStats,
    pub seconds: f64,
}

pub const METRICS_HEADER: &str =
    "update,step,n,d,success_rate,mean_return,policy_loss,value_loss,entropy,approx_kl,clip_fraction,seconds";

impl UpdateStats {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.4},{:.4},{:.4},{:.6},{:.6},{:.6},{:.6},{:.4},{:.2}",
            self.update,
            self.steps,
            self.n,
            self.d,
            self.success_rate,
            self.mean_return,
            self.losses.policy_loss,
            self.losses.value_loss,
            self.losses.entropy,
            self.losses.approx_kl,
            self.losses.clip_fraction,
            self.seconds
        )
    }
}

/// Owns the weights, optimizer, environments and curriculum of a run.
pub struct Trainer {
    cfg: TrainConfig,
    env_cfg: EnvConfig,
    weights: PolicyWeights<f32>,
    adam: Adam,
    curriculum: CurriculumState,
    envs: VecEnv,
    episode_returns: Vec<f64>,
    rng: SynthRng,
    stage: usize,
    stage_steps: u64,
    steps: u64,
    updates: usize,
    started: Instant,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let weights = match &cfg.init_weights {
            Some(path) => load_weights(path)?,
            None => PolicyWeights::init(cfg.hidden, cfg.rounds, &mut rng::stream(cfg.seed, 1 << 40)),
        };
        Self::with_weights(cfg, weights)
    }

    pub fn with_weights(cfg: TrainConfig, weights: PolicyWeights<f32>) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.stages[0].n;
        let curriculum = CurriculumState::new(
            n,
            cfg.d_start,
            cfg.d_max,
            cfg.advance_threshold,
            cfg.success_window,
        );
        let mut envs = VecEnv::new(n, cfg.num_envs, cfg.seed);
        envs.batch_reset(curriculum.difficulty());
        Ok(Self {
            env_cfg: cfg.env_config(),
            adam: Adam::new(weights.num_params()),
            episode_returns: vec![0.0; cfg.num_envs],
            rng: rng::stream(cfg.seed, 1 << 41),
            curriculum,
            envs,
            weights,
            stage: 0,
            stage_steps: 0,
            steps: 0,
            updates: 0,
            started: Instant::now(),
            cfg,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn weights(&self) -> &PolicyWeights<f32> {
        &self.weights
    }

    pub fn into_weights(self) -> PolicyWeights<f32> {
        self.weights
    }

    pub fn curriculum(&self) -> &CurriculumState {
        &self.curriculum
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn stage(&self) -> usize {
        self.stage
    }

    fn hyper(&self) -> PpoHyper {
        PpoHyper {
            learning_rate: self.cfg.learning_rate,
            batch_size: self.cfg.batch_size,
            epochs: self.cfg.epochs_per_update,
            policy_clip: self.cfg.policy_clip,
            value_clip: self.cfg.value_clip,
            entropy_coef: self.cfg.entropy_coef,
            value_coef: self.cfg.value_coef,
            max_grad_norm: self.cfg.max_grad_norm,
        }
    }

    /// One collect-then-optimize cycle.
    pub fn update(&mut self) -> Result<UpdateStats> {
        let traj = collect_rollouts(
            &self.weights,
            &mut self.envs,
            &self.env_cfg,
            &mut self.curriculum,
            self.cfg.rollout_length,
            &mut self.episode_returns,
        )?;
        let (episodes, solved) = (traj.episodes, traj.solved);
        let mean_return = if traj.episode_returns.is_empty() {
            0.0
        } else {
            traj.episode_returns.iter().sum::<f64>() / traj.episode_returns.len() as f64
        };
        let buf = traj.into_buffer(self.cfg.gamma, self.cfg.lambda);
        let steps = buf.len() as u64;
        let hp = self.hyper();
        let losses = ppo_update(&mut self.weights, &mut self.adam, &buf, &hp, &mut self.rng)?;
        self.steps += steps;
        self.stage_steps += steps;
        self.updates += 1;
        Ok(UpdateStats {
            update: self.updates,
            steps: self.steps,
            n: self.envs.n(),
            d: self.curriculum.current_d,
            success_rate: if episodes == 0 { 0.0 } else { solved as f64 / episodes as f64 },
            mean_return,
            losses,
            seconds: self.started.elapsed().as_secs_f64(),
        })
    }

    /// Moves to the next stage's qubit count. Returns false after the last.
    pub fn next_stage(&mut self) -> bool {
        if self.stage + 1 >= self.cfg.stages.len() {
            return false;
        }
        self.stage += 1;
        self.stage_steps = 0;
        let n = self.cfg.stages[self.stage].n;
        self.curriculum.set_n(n, self.cfg.d_start);
        self.envs = VecEnv::new(n, self.cfg.num_envs, self.cfg.seed ^ (self.stage as u64) << 32);
        self.envs.batch_reset(self.curriculum.difficulty());
        self.episode_returns.fill(0.0);
        true
    }

    /// Runs every stage, writing metrics rows and checkpoints under
    /// `out_dir`. Returns the checkpoint path of each finished stage.
    pub fn run(&mut self, metrics: &mut dyn Write) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(&self.cfg.out_dir)?;
        std::fs::write(self.cfg.out_dir.join("config.txt"), self.cfg.to_text())?;
        writeln!(metrics, "{METRICS_HEADER}")?;
        let mut finished = Vec::new();
        loop {
            let stage = self.cfg.stages[self.stage];
            let stage_start = Instant::now();
            while self.stage_steps < stage.steps
                && (self.cfg.stage_seconds == 0 || stage_start.elapsed().as_secs() < self.cfg.stage_seconds)
            {
                let stats = self.update()?;
                writeln!(metrics, "{}", stats.csv_row())?;
                metrics.flush()?;
                if self.cfg.checkpoint_every > 0 && stats.update % self.cfg.checkpoint_every == 0 {
                    save_weights(&self.weights, &self.cfg.out_dir.join("latest.weights"))?;
                }
            }
            let path = self
                .cfg
                .out_dir
                .join(format!("stage{}_n{}.weights", self.stage, stage.n));
            save_weights(&self.weights, &path)?;
            finished.push(path);
            if !self.next_stage() {
                break;
            }
        }
        Ok(finished)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> TrainConfig {
        TrainConfig {
            hidden: 8,
            rounds: 1,
            stages: vec![Stage { n: 2, steps: 256 }],
            num_envs: 8,
            rollout_length: 16,
            batch_size: 64,
            epochs_per_update: 2,
            success_window: 16,
            ..TrainConfig::desk()
        }
    }

    #[test]
    fn buffer_shape() {
        let cfg = tiny();
        let w = PolicyWeights::init(8, 1, &mut rng::from_seed(0));
        let mut envs = VecEnv::new(2, 8, 1);
        let mut cur = CurriculumState::new(2, 1.0, 1000.0, 1.0, 16);
        envs.batch_reset(cur.difficulty());
        let mut returns = vec![0.0; 8];
        let traj = collect_rollouts(&w, &mut envs, &cfg.env_config(), &mut cur, 16, &mut returns).unwrap();
        let buf = traj.into_buffer(0.99, 0.95);
        assert_eq!(buf.len(), 8 * 16);
        assert_eq!(buf.advantages.len(), 8 * 16);
    }

    #[test]
    fn deterministic_given_seed() {
        let run = || {
            let mut t = Trainer::new(tiny()).unwrap();
            t.update().unwrap();
            t.update().unwrap();
            t.into_weights()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn curriculum_never_decreases() {
        let mut t = Trainer::new(tiny()).unwrap();
        let mut last = t.curriculum().current_d;
        for _ in 0..4 {
            t.update().unwrap();
            assert!(t.curriculum().current_d >= last);
            last = t.curriculum().current_d;
        }
    }

    #[test]
    fn run_writes_checkpoints_and_metrics() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig {
            stages: vec![Stage { n: 2, steps: 128 }, Stage { n: 3, steps: 128 }],
            out_dir: dir.path().to_path_buf(),
            checkpoint_every: 1,
            ..tiny()
        };
        let mut t = Trainer::new(cfg).unwrap();
        let mut metrics = Vec::new();
        let paths = t.run(&mut metrics).unwrap();
        assert_eq!(paths.len(), 2);
        assert!(paths.iter().all(|p| p.exists()));
        assert!(dir.path().join("latest.weights").exists());
        let text = String::from_utf8(metrics).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], METRICS_HEADER);
        assert!(lines.len() >= 3);
        assert!(lines.last().unwrap().split(',').nth(2) == Some("3"));
    }
}
