//! Inference-time synthesis: greedy and sampled rollouts under the policy,
//! the inverse-tableau trick, the no-loop safeguard, and cost accounting.

use std::collections::{HashMap, HashSet};
use std::time::{Duration, Instant};

use rand::Rng;

use crate::env::action_table;
use crate::error::{Error, Result};
use crate::policy::{forward_batch, PolicyWeights};
use crate::rng::{self, SynthRng};
use crate::tableau::{Circuit, Gate, Tableau};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Schedule {
    Fixed(f64),
    /// Linear in the step index, from `start` at step 0 to `end` at the last
    /// step of the budget.
    Linear { start: f64, end: f64 },
}

impl Schedule {
    pub fn temperature(&self, step: usize, budget: usize) -> f64 {
        match *self {
            Schedule::Fixed(t) => t,
            Schedule::Linear { start, end } => {
                if budget <= 1 {
                    start
                } else {
                    start + (end - start) * step as f64 / (budget - 1) as f64
                }
            }
        }
    }

    fn min_temperature(&self) -> f64 {
        match *self {
            Schedule::Fixed(t) => t,
            Schedule::Linear { start, end } => start.min(end),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeConfig {
    pub step_budget: usize,
    /// Rollouts per schedule arm.
    pub num_samples: usize,
    pub schedules: Vec<Schedule>,
    /// Also run one greedy rollout.
    pub greedy: bool,
    pub no_loop: bool,
    pub inverse_trick: bool,
}

impl DecodeConfig {
    pub fn greedy(step_budget: usize) -> Self {
        Self {
            step_budget,
            num_samples: 0,
            schedules: Vec::new(),
            greedy: true,
            no_loop: false,
            inverse_trick: false,
        }
    }

    /// Budget 512, inverse trick, four arms of 4096 samples.
    pub fn bench6() -> Self {
        Self {
            step_budget: 512,
            num_samples: 4096,
            schedules: vec![
                Schedule::Fixed(4.0),
                Schedule::Linear { start: 4.0, end: 0.05 },
                Schedule::Linear { start: 4.0, end: 2.5 },
                Schedule::Linear { start: 4.0, end: 1.2 },
            ],
            greedy: false,
            no_loop: false,
            inverse_trick: true,
        }
    }

    /// Greedy with the no-loop safeguard and inverse trick, budget `6 n^2`.
    pub fn sweep(n: usize) -> Self {
        Self {
            step_budget: 6 * n * n,
            num_samples: 0,
            schedules: Vec::new(),
            greedy: true,
            no_loop: true,
            inverse_trick: true,
        }
    }

    pub fn preset(name: &str, n: usize) -> Result<Self> {
        match name {
            "bench6" => Ok(Self::bench6()),
            "sweep" => Ok(Self::sweep(n)),
            "greedy" => Ok(Self::greedy(512)),
            _ => Err(Error::Argument(format!("unknown decode preset `{name}`"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.step_budget == 0 {
            return Err(Error::Argument("step budget must be at least 1".into()));
        }
        if let Some(s) = self.schedules.iter().find(|s| !(s.min_temperature() > 0.0)) {
            return Err(Error::Argument(format!("temperatures must be positive: {s:?}")));
        }
        if !self.greedy && (self.schedules.is_empty() || self.num_samples == 0) {
            return Err(Error::Argument("decoder has nothing to run".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthResult {
    pub solved: bool,
    /// Empty when unsolved.
    pub circuit: Circuit,
    pub cz_count: usize,
    pub single_count: usize,
    pub samples_used: usize,
    pub wall_time: Duration,
}

impl SynthResult {
    fn unsolved(n: usize) -> Self {
        Self {
            solved: false,
            circuit: Circuit::new(n),
            cz_count: 0,
            single_count: 0,
            samples_used: 0,
            wall_time: Duration::ZERO,
        }
    }
}

/// True iff the circuit's product is exactly `target`.
pub fn verify_circuit(c: &Circuit, target: &Tableau) -> Result<bool> {
    if c.n() != target.n() {
        return Err(Error::Argument(format!(
            "circuit has n={}, target has n={}",
            c.n(),
            target.n()
        )));
    }
    let mut t = Tableau::identity(target.n());
    t.apply_circuit(c)?;
    Ok(&t == target)
}

/// Masks successors already in `visited`, unless every successor is.
pub fn no_loop_filter(visited: &HashSet<Tableau>, current: &Tableau, actions: &[Gate]) -> Vec<bool> {
    let mask: Vec<bool> = actions
        .iter()
        .map(|&g| !visited.contains(&current.applied(g).expect("action fits tableau")))
        .collect();
    if mask.iter().any(|&ok| ok) {
        mask
    } else {
        vec![true; actions.len()]
    }
}

/// Index of the largest allowed logit; ties go to the lowest index.
pub fn argmax(logits: &[f32], allowed: Option<&[bool]>) -> usize {
    let mut best = usize::MAX;
    for (k, &v) in logits.iter().enumerate() {
        if allowed.is_some_and(|m| !m[k]) {
            continue;
        }
        if best == usize::MAX || v > logits[best] {
            best = k;
        }
    }
    best
}

/// Draws from `softmax(logits / temperature)` restricted to allowed actions.
pub fn sample_action<R: Rng + ?Sized>(
    logits: &[f32],
    temperature: f64,
    allowed: Option<&[bool]>,
    rng: &mut R,
) -> usize {
    let ok = |k: usize| allowed.is_none_or(|m| m[k]);
    let inv_t = 1.0 / temperature;
    let max = (0..logits.len())
        .filter(|&k| ok(k))
        .map(|k| logits[k] as f64 * inv_t)
        .fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = (0..logits.len())
        .map(|k| if ok(k) { (logits[k] as f64 * inv_t - max).exp() } else { 0.0 })
        .collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (k, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            last = k;
            if u < w {
                return k;
            }
            u -= w;
        }
    }
    last
}

const CACHE_LIMIT: usize = 1 << 20;

/// Memoized policy logits. The network is a pure function of the tableau, so
/// revisited states are not re-evaluated.
pub struct PolicyCache<'w> {
    weights: &'w PolicyWeights<f32>,
    logits: HashMap<Tableau, Vec<f32>>,
    evaluations: usize,
}

impl<'w> PolicyCache<'w> {
    pub fn new(weights: &'w PolicyWeights<f32>) -> Self {
        Self {
            weights,
            logits: HashMap::new(),
            evaluations: 0,
        }
    }

    /// Network evaluations performed so far.
    pub fn evaluations(&self) -> usize {
        self.evaluations
    }

    /// Ensures every tableau in `states` is cached, batching the misses.
    pub fn prefetch<'a>(&mut self, states: impl IntoIterator<Item = &'a Tableau>) -> Result<()> {
        let mut seen = HashSet::new();
        let missing: Vec<&Tableau> = states
            .into_iter()
            .filter(|t| !self.logits.contains_key(*t) && seen.insert(*t))
            .collect();
        if missing.is_empty() {
            return Ok(());
        }
        if self.logits.len() + missing.len() > CACHE_LIMIT {
            self.logits.clear();
        }
        for chunk in missing.chunks(256) {
            let out = forward_batch(self.weights, chunk)?;
            self.evaluations += chunk.len();
            for (b, t) in chunk.iter().enumerate() {
                self.logits.insert((*t).clone(), out.logits_of(b).to_vec());
            }
        }
        Ok(())
    }

    pub fn get(&mut self, t: &Tableau) -> Result<&[f32]> {
        if !self.logits.contains_key(t) {
            self.prefetch(std::iter::once(t))?;
        }
        Ok(&self.logits[t])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct Rank {
    cz: usize,
    total: usize,
    order: usize,
}

struct Best {
    rank: Option<Rank>,
    circuit: Option<Circuit>,
}

impl Best {
    fn offer(&mut self, rank: Rank, circuit: Circuit) {
        if self.rank.is_none_or(|r| rank < r) {
            self.rank = Some(rank);
            self.circuit = Some(circuit);
        }
    }

    /// A trajectory with these counts can no longer beat the incumbent.
    fn dominated(&self, cz: usize, total: usize) -> bool {
        self.rank
            .is_some_and(|r| cz > r.cz || (cz == r.cz && total >= r.total))
    }
}

struct Rollout {
    state: Tableau,
    history: Vec<Gate>,
    cz: usize,
    visited: Option<HashSet<Tableau>>,
    rng: Option<SynthRng>,
    schedule: Option<Schedule>,
    order: usize,
    live: bool,
}

/// Reduces `start` with a batch of lockstep rollouts and offers each solved
/// one to `best`. `orient` maps the reduction sequence to a circuit for the
/// original target.
fn run_rollouts(
    cache: &mut PolicyCache<'_>,
    start: &Tableau,
    mut rollouts: Vec<Rollout>,
    cfg: &DecodeConfig,
    best: &mut Best,
    orient: &dyn Fn(&[Gate]) -> Vec<Gate>,
) -> Result<()> {
    let n = start.n();
    let actions = action_table(n);
    if start.is_identity() {
        for r in &rollouts {
            best.offer(Rank { cz: 0, total: 0, order: r.order }, Circuit::new(n));
        }
        return Ok(());
    }
    for step in 0..cfg.step_budget {
        for r in rollouts.iter_mut().filter(|r| r.live) {
            if best.dominated(r.cz, r.history.len()) {
                r.live = false;
            }
        }
        if !rollouts.iter().any(|r| r.live) {
            break;
        }
        cache.prefetch(rollouts.iter().filter(|r| r.live).map(|r| &r.state))?;
        for r in rollouts.iter_mut().filter(|r| r.live) {
            let mask = r
                .visited
                .as_ref()
                .map(|v| no_loop_filter(v, &r.state, &actions));
            let logits = cache.get(&r.state)?;
            let a = match (r.schedule, r.rng.as_mut()) {
                (Some(s), Some(rng)) => {
                    sample_action(logits, s.temperature(step, cfg.step_budget), mask.as_deref(), rng)
                }
                _ => argmax(logits, mask.as_deref()),
            };
            let g = actions[a];
            r.state.apply_unchecked(g);
            r.history.push(g);
            r.cz += g.is_two_qubit() as usize;
            if let Some(v) = r.visited.as_mut() {
                v.insert(r.state.clone());
            }
            if r.state.is_identity() {
                r.live = false;
                let gates = orient(&r.history);
                let rank = Rank {
                    cz: r.cz,
                    total: gates.len(),
                    order: r.order,
                };
                best.offer(rank, Circuit::from_gates(n, gates)?);
            }
        }
    }
    Ok(())
}

fn new_rollout(start: &Tableau, cfg: &DecodeConfig, schedule: Option<Schedule>, rng: Option<SynthRng>, order: usize) -> Rollout {
    Rollout {
        state: start.clone(),
        history: Vec::new(),
        cz: 0,
        visited: cfg.no_loop.then(|| HashSet::from([start.clone()])),
        rng,
        schedule,
        order,
        live: true,
    }
}

/// Runs every rollout `cfg` asks for on `target` (and on its inverse with the
/// inverse trick) and keeps the best verified circuit by CZ count, then total
/// gates, then discovery order.
pub fn decode(
    cache: &mut PolicyCache<'_>,
    target: &Tableau,
    cfg: &DecodeConfig,
    rng: &mut SynthRng,
) -> Result<SynthResult> {
    cfg.validate()?;
    let started = Instant::now();
    let n = target.n();
    let seed: u64 = rng.random();
    let mut best = Best { rank: None, circuit: None };
    let mut samples = 0;

    let mut directions = vec![(target.clone(), false)];
    if cfg.inverse_trick {
        directions.push((target.inverse()?, true));
    }
    let per_direction = cfg.greedy as usize + cfg.schedules.len() * cfg.num_samples;
    for (dir, (start, inverted)) in directions.iter().enumerate() {
        // reducing M by g1..gk gives M = gk..g1; reducing M^-1 gives M = g1..gk
        let orient = |h: &[Gate]| -> Vec<Gate> {
            if *inverted {
                h.to_vec()
            } else {
                h.iter().rev().copied().collect()
            }
        };
        let base = dir * per_direction;
        let mut rollouts = Vec::with_capacity(per_direction);
        if cfg.greedy {
            rollouts.push(new_rollout(start, cfg, None, None, base));
        }
        for (arm, &s) in cfg.schedules.iter().enumerate() {
            for k in 0..cfg.num_samples {
                let order = base + cfg.greedy as usize + arm * cfg.num_samples + k;
                // each sample owns its stream, so adding samples never changes earlier ones
                let stream = rng::stream(seed, ((dir as u64) << 48) | ((arm as u64) << 32) | k as u64);
                rollouts.push(new_rollout(start, cfg, Some(s), Some(stream), order));
            }
        }
        samples += rollouts.len();
        run_rollouts(cache, start, rollouts, cfg, &mut best, &orient)?;
    }

    let mut result = SynthResult::unsolved(n);
    result.samples_used = samples;
    if let Some(circuit) = best.circuit {
        if !verify_circuit(&circuit, target)? {
            return Err(Error::Invariant("decoded circuit does not reproduce the target".into()));
        }
        result.solved = true;
        result.cz_count = circuit.cz_count();
        result.single_count = circuit.single_count();
        result.circuit = circuit;
    }
    result.wall_time = started.elapsed();
    Ok(result)
}

/// Follows the most probable action at each step.
pub fn greedy_decode(w: &PolicyWeights<f32>, target: &Tableau, cfg: &DecodeConfig) -> Result<SynthResult> {
    let cfg = DecodeConfig {
        greedy: true,
        num_samples: 0,
        schedules: Vec::new(),
        ..cfg.clone()
    };
    let mut cache = PolicyCache::new(w);
    decode(&mut cache, target, &cfg, &mut rng::from_seed(0))
}

/// Sampled rollouts per schedule arm, plus greedy if configured.
pub fn rollout_decode(
    w: &PolicyWeights<f32>,
    target: &Tableau,
    cfg: &DecodeConfig,
    rng: &mut SynthRng,
) -> Result<SynthResult> {
    let mut cache = PolicyCache::new(w);
    decode(&mut cache, target, cfg, rng)
}

/// Gates of an externally produced circuit, for cost comparison only.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImportedGate {
    H(usize),
    S(usize),
    Sdg(usize),
    X(usize),
    Y(usize),
    Z(usize),
    Cz(usize, usize),
    Cx(usize, usize),
    Swap(usize, usize),
}

impl ImportedGate {
    pub fn cz_equivalent(&self) -> usize {
        match self {
            ImportedGate::Cz(..) | ImportedGate::Cx(..) => 1,
            ImportedGate::Swap(..) => 3,
            _ => 0,
        }
    }
}

impl From<Gate> for ImportedGate {
    fn from(g: Gate) -> Self {
        match g {
            Gate::H(i) => ImportedGate::H(i),
            Gate::S(i) => ImportedGate::S(i),
            Gate::Cz(i, j) => ImportedGate::Cz(i, j),
        }
    }
}

/// Entangling cost with CZ and CX at one, SWAP at three, single-qubit gates free.
pub fn cz_equivalent_cost(gates: &[ImportedGate]) -> usize {
    gates.iter().map(ImportedGate::cz_equivalent).sum()
}
