use std::collections::VecDeque;

use crate::targets::Difficulty;

/// Current `(n, d)` and the outcomes of recent episodes at that level.
#[derive(Clone, Debug, PartialEq)]
pub struct CurriculumState {
    pub current_n: usize,
    pub current_d: f64,
    pub d_max: f64,
    pub threshold: f64,
    window: VecDeque<bool>,
    window_size: usize,
}

impl CurriculumState {
    pub fn new(n: usize, d_start: f64, d_max: f64, threshold: f64, window_size: usize) -> Self {
        Self {
            current_n: n,
            current_d: d_start,
            d_max,
            threshold,
            window: VecDeque::with_capacity(window_size),
            window_size,
        }
    }

    pub fn difficulty(&self) -> Difficulty {
        Difficulty::new(self.current_d).expect("curriculum difficulty is finite and positive")
    }

    pub fn record(&mut self, solved: bool) {
        if self.window.len() == self.window_size {
            self.window.pop_front();
        }
        self.window.push_back(solved);
    }

    pub fn window_full(&self) -> bool {
        self.window.len() == self.window_size
    }

    pub fn success_rate(&self) -> f64 {
        if self.window.is_empty() {
            return 0.0;
        }
        self.window.iter().filter(|&&s| s).count() as f64 / self.window.len() as f64
    }

    /// Moves to a new qubit count, restarting difficulty at `d_start`.
    pub fn set_n(&mut self, n: usize, d_start: f64) {
        self.current_n = n;
        self.current_d = d_start;
        self.window.clear();
    }
}

/// `d <- min(d_max, d + max(0.25, 0.1 d))` once a full window meets the
/// threshold; the window then restarts at the new difficulty.
pub fn curriculum_advance(state: &mut CurriculumState) -> bool {
    if !state.window_full() || state.success_rate() < state.threshold || state.current_d >= state.d_max {
        return false;
    }
    let d = state.current_d;
    state.current_d = (d + (0.1 * d).max(0.25)).min(state.d_max);
    state.window.clear();
    true
}
