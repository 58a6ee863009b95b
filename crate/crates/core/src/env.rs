//! The synthesis MDP: state is a tableau, actions are generators applied on
//! the right, and an episode ends at the identity or at the step cap.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{self, SynthRng};
use crate::tableau::{Gate, Tableau};
use crate::targets::{random_walk_target, Difficulty};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnvConfig {
    pub single_qubit_cost: f64,
    pub two_qubit_cost: f64,
    pub success_bonus: f64,
    /// Multiplies `||MG - I||_0 / (8 n^2)`, which is at most 0.5.
    pub shaping_scale: f64,
    pub step_cap: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            single_qubit_cost: 0.01,
            two_qubit_cost: 1.0,
            success_bonus: 25.0,
            shaping_scale: 1.0,
            step_cap: 512,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.single_qubit_cost < 0.0 || self.two_qubit_cost < 0.0 {
            return Err(Error::Argument("gate costs must be non-negative".into()));
        }
        if self.step_cap == 0 {
            return Err(Error::Argument("step cap must be at least 1".into()));
        }
        Ok(())
    }

    /// Training cap tied to curriculum difficulty: `min(512, 16 + 4 ceil(d))`.
    pub fn training_cap(d: f64) -> usize {
        (16 + 4 * d.ceil() as usize).min(512)
    }
}

pub fn num_actions(n: usize) -> usize {
    n * (n + 3) / 2
}

/// `H(i) -> i`, `S(i) -> n + i`, then CZ pairs `i < j` lexicographically.
pub fn action_index(g: Gate, n: usize) -> Result<usize> {
    g.validate(n)?;
    Ok(match g {
        Gate::H(i) => i,
        Gate::S(i) => n + i,
        Gate::Cz(i, j) => 2 * n + cz_offset(i, n) + (j - i - 1),
    })
}

pub fn index_action(k: usize, n: usize) -> Result<Gate> {
    if k >= num_actions(n) {
        return Err(Error::Argument(format!(
            "action {k} out of range for {n} qubits ({} actions)",
            num_actions(n)
        )));
    }
    if k < n {
        return Ok(Gate::H(k));
    }
    if k < 2 * n {
        return Ok(Gate::S(k - n));
    }
    let mut rem = k - 2 * n;
    for i in 0..n {
        let row = n - i - 1;
        if rem < row {
            return Ok(Gate::Cz(i, i + 1 + rem));
        }
        rem -= row;
    }
    unreachable!("index bounds checked above")
}

/// Number of CZ pairs `(a, b)` with `a < i`.
#[inline]
fn cz_offset(i: usize, n: usize) -> usize {
    i * (2 * n - i - 1) / 2
}

/// All actions for `n` qubits as a lookup table.
pub fn action_table(n: usize) -> Vec<Gate> {
    Gate::all(n)
}

fn gate_cost(g: Gate, cfg: &EnvConfig) -> f64 {
    if g.is_two_qubit() {
        cfg.two_qubit_cost
    } else {
        cfg.single_qubit_cost
    }
}

/// Reward for a transition that has already produced `next = M G`.
pub fn reward_for_next(next: &Tableau, g: Gate, cfg: &EnvConfig) -> f64 {
    let n = next.n() as f64;
    let dist = next.hamming_to_identity();
    let bonus = if dist == 0 { cfg.success_bonus } else { 0.0 };
    -gate_cost(g, cfg) + bonus - cfg.shaping_scale * dist as f64 / (8.0 * n * n)
}

pub fn reward(m: &Tableau, g: Gate, cfg: &EnvConfig) -> Result<f64> {
    let next = m.applied(g)?;
    Ok(reward_for_next(&next, g, cfg))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub done: bool,
    /// Reached the identity.
    pub solved: bool,
    /// Hit the step cap without solving; the episode is cut, not terminal.
    pub truncated: bool,
}

#[derive(Clone, Debug)]
pub struct EnvState {
    pub tableau: Tableau,
    pub steps_taken: usize,
    pub done: bool,
    pub history: Vec<Gate>,
}

impl EnvState {
    pub fn new(target: Tableau) -> Self {
        let done = target.is_identity();
        Self {
            tableau: target,
            steps_taken: 0,
            done,
            history: Vec::new(),
        }
    }

    pub fn step(&mut self, g: Gate, cfg: &EnvConfig) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::State("step on a finished episode".into()));
        }
        self.tableau.apply_gate(g)?;
        self.steps_taken += 1;
        self.history.push(g);
        let reward = reward_for_next(&self.tableau, g, cfg);
        let solved = self.tableau.is_identity();
        let truncated = !solved && self.steps_taken >= cfg.step_cap;
        self.done = solved || truncated;
        Ok(StepOutcome {
            reward,
            done: self.done,
            solved,
            truncated,
        })
    }
}

struct Slot {
    state: EnvState,
    rng: SynthRng,
}

/// A set of independent environments with per-environment random streams.
pub struct VecEnv {
    n: usize,
    slots: Vec<Slot>,
}

impl VecEnv {
    /// Environment `k` draws its targets from stream `k` of `seed`.
    pub fn new(n: usize, count: usize, seed: u64) -> Self {
        let slots = (0..count)
            .map(|k| Slot {
                state: EnvState::new(Tableau::identity(n)),
                rng: rng::stream(seed, k as u64),
            })
            .collect();
        Self { n, slots }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn state(&self, k: usize) -> &EnvState {
        &self.slots[k].state
    }

    pub fn states(&self) -> impl Iterator<Item = &EnvState> {
        self.slots.iter().map(|s| &s.state)
    }

    /// Changes the qubit count for subsequent resets.
    pub fn set_n(&mut self, n: usize) {
        self.n = n;
    }

    /// Resets environment `k` to a fresh walk target at difficulty `d`,
    /// redrawing if the walk lands on the identity.
    pub fn reset_one(&mut self, k: usize, d: Difficulty) {
        let slot = &mut self.slots[k];
        let mut attempts = 0;
        let target = loop {
            let (t, _) = random_walk_target(self.n, d, &mut slot.rng);
            attempts += 1;
            if !t.is_identity() || attempts >= 64 {
                break t;
            }
        };
        slot.state = EnvState::new(target);
    }

    pub fn batch_reset(&mut self, d: Difficulty) {
        for k in 0..self.slots.len() {
            self.reset_one(k, d);
        }
    }

    /// Resets every environment to the given targets.
    pub fn reset_to(&mut self, targets: Vec<Tableau>) -> Result<()> {
        if targets.len() != self.slots.len() {
            return Err(Error::Shape(format!(
                "{} targets for {} environments",
                targets.len(),
                self.slots.len()
            )));
        }
        for (slot, t) in self.slots.iter_mut().zip(targets) {
            slot.state = EnvState::new(t);
        }
        Ok(())
    }

    pub fn batch_step(&mut self, actions: &[Gate], cfg: &EnvConfig) -> Result<Vec<StepOutcome>> {
        if actions.len() != self.slots.len() {
            return Err(Error::Shape(format!(
                "{} actions for {} environments",
                actions.len(),
                self.slots.len()
            )));
        }
        self.slots
            .iter_mut()
            .zip(actions)
            .map(|(slot, &g)| slot.state.step(g, cfg))
            .collect()
    }

    /// Random number stream of environment `k`, for action sampling.
    pub fn rng_mut(&mut self, k: usize) -> &mut SynthRng {
        &mut self.slots[k].rng
    }

    pub fn random_action(&mut self, k: usize) -> Gate {
        let n = self.n;
        let a = self.slots[k].rng.random_range(0..num_actions(n));
        index_action(a, n).expect("in range")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tableau::generator_matrix;

    #[test]
    fn action_layout() {
        assert_eq!(action_index(Gate::Cz(0, 1), 3).unwrap(), 6);
        assert_eq!(action_index(Gate::Cz(0, 2), 3).unwrap(), 7);
        assert_eq!(action_index(Gate::Cz(1, 2), 3).unwrap(), 8);
        assert_eq!(num_actions(6), 27);
        assert!(index_action(27, 6).is_err());
        for n in 1..=10 {
            let table = action_table(n);
            assert_eq!(table.len(), num_actions(n));
            for (k, &g) in table.iter().enumerate() {
                assert_eq!(action_index(g, n).unwrap(), k);
                assert_eq!(index_action(k, n).unwrap(), g);
            }
        }
    }

    #[test]
    fn reward_examples() {
        let cfg = EnvConfig::default();
        let cz = generator_matrix(Gate::Cz(0, 1), 2).unwrap();
        assert!((reward(&cz, Gate::Cz(0, 1), &cfg).unwrap() - 24.0).abs() < 1e-12);
        let h = generator_matrix(Gate::H(0), 1).unwrap();
        assert!((reward(&h, Gate::H(0), &cfg).unwrap() - 24.99).abs() < 1e-12);
        assert!((reward(&h, Gate::S(0), &cfg).unwrap() - (-0.385)).abs() < 1e-12);
    }

    #[test]
    fn shaping_is_bounded() {
        let cfg = EnvConfig::default();
        let mut r = rng::from_seed(8);
        for n in 1..6 {
            for _ in 0..50 {
                let t = crate::targets::uniform_target(n, &mut r);
                for g in Gate::all(n) {
                    let next = t.applied(g).unwrap();
                    let shaping = next.hamming_to_identity() as f64 / (8.0 * (n * n) as f64);
                    assert!((0.0..=0.5).contains(&shaping));
                    let _ = reward(&t, g, &cfg).unwrap();
                }
            }
        }
    }

    #[test]
    fn step_to_identity() {
        let cfg = EnvConfig::default();
        let mut s = EnvState::new(generator_matrix(Gate::H(0), 1).unwrap());
        let out = s.step(Gate::H(0), &cfg).unwrap();
        assert!(out.done && out.solved && !out.truncated);
        assert!((out.reward - 24.99).abs() < 1e-12);
        assert!(matches!(s.step(Gate::H(0), &cfg), Err(Error::State(_))));
    }

    #[test]
    fn step_cap_truncates_without_bonus() {
        let cfg = EnvConfig {
            step_cap: 3,
            ..EnvConfig::default()
        };
        let mut s = EnvState::new(generator_matrix(Gate::Cz(0, 1), 2).unwrap());
        let mut last = None;
        for g in [Gate::H(0), Gate::H(1), Gate::S(0)] {
            last = Some(s.step(g, &cfg).unwrap());
        }
        let last = last.unwrap();
        assert!(last.done && last.truncated && !last.solved);
        assert!(last.reward < 0.0);
    }

    #[test]
    fn reversed_history_rebuilds_target() {
        let cfg = EnvConfig::default();
        let mut r = rng::from_seed(10);
        let (target, walk) = random_walk_target(3, Difficulty::new(12.0).unwrap(), &mut r);
        let mut s = EnvState::new(target.clone());
        for &g in walk.gates().iter().rev() {
            if s.done {
                break;
            }
            s.step(g, &cfg).unwrap();
        }
        assert!(s.tableau.is_identity());
        let mut rebuilt = Tableau::identity(3);
        for &g in s.history.iter().rev() {
            rebuilt.apply_gate(g).unwrap();
        }
        assert_eq!(rebuilt, target);
    }

    #[test]
    fn batch_matches_single_and_permutes() {
        let cfg = EnvConfig::default();
        let mut r = rng::from_seed(12);
        let targets: Vec<Tableau> = (0..4)
            .map(|_| random_walk_target(3, Difficulty::new(5.0).unwrap(), &mut r).0)
            .collect();
        let actions = [Gate::H(0), Gate::Cz(1, 2), Gate::S(2), Gate::Cz(0, 2)];

        let mut batch = VecEnv::new(3, 4, 0);
        batch.reset_to(targets.clone()).unwrap();
        let out = batch.batch_step(&actions, &cfg).unwrap();

        let mut rev = VecEnv::new(3, 4, 0);
        rev.reset_to(targets.iter().rev().cloned().collect()).unwrap();
        let rev_actions: Vec<Gate> = actions.iter().rev().copied().collect();
        let rev_out = rev.batch_step(&rev_actions, &cfg).unwrap();

        for k in 0..4 {
            let mut single = EnvState::new(targets[k].clone());
            let expected = single.step(actions[k], &cfg).unwrap();
            assert_eq!(out[k], expected);
            assert_eq!(rev_out[3 - k], expected);
        }
        assert!(batch.batch_step(&actions[..2], &cfg).is_err());
    }

    #[test]
    fn reward_is_relabeling_invariant() {
        use rand::seq::SliceRandom;
        let cfg = EnvConfig::default();
        let mut r = rng::from_seed(13);
        for _ in 0..200 {
            let n = r.random_range(2..7);
            let t = crate::targets::uniform_target(n, &mut r);
            let mut sigma: Vec<usize> = (0..n).collect();
            sigma.shuffle(&mut r);
            let pt = t.permute(&sigma).unwrap();
            for g in Gate::all(n) {
                assert_eq!(
                    reward(&pt, g.permuted(&sigma), &cfg).unwrap(),
                    reward(&t, g, &cfg).unwrap()
                );
            }
        }
    }
}
