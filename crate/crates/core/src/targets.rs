//! Target tableaus: curriculum random walks and exact uniform samples.

use rand::Rng;

use crate::error::{Error, Result};
use crate::f2linalg::BitMatrix;
use crate::tableau::{Circuit, Gate, Tableau};

/// Expected random-walk length. Fractional values add one extra step with
/// probability equal to the fractional part.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct Difficulty(f64);

impl Difficulty {
    pub fn new(d: f64) -> Result<Self> {
        if d.is_finite() && d >= 0.0 {
            Ok(Self(d))
        } else {
            Err(Error::Argument(format!("difficulty must be finite and >= 0, got {d}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Draws `floor(d) + Bernoulli(d - floor(d))`.
    pub fn sample_length<R: Rng + ?Sized>(self, rng: &mut R) -> usize {
        let base = self.0.floor();
        let frac = self.0 - base;
        let extra = frac > 0.0 && rng.random::<f64>() < frac;
        base as usize + extra as usize
    }
}

/// Random walk from the identity with uniformly drawn generators. Returns the
/// endpoint and the walk; the walk is itself a circuit for the endpoint.
pub fn random_walk_target<R: Rng + ?Sized>(
    n: usize,
    d: Difficulty,
    rng: &mut R,
) -> (Tableau, Circuit) {
    let gates = Gate::all(n);
    let len = d.sample_length(rng);
    let mut t = Tableau::identity(n);
    let mut walk = Vec::with_capacity(len);
    for _ in 0..len {
        let g = gates[rng.random_range(0..gates.len())];
        t.apply_unchecked(g);
        walk.push(g);
    }
    let walk = Circuit::from_gates(n, walk).expect("generators are valid");
    (t, walk)
}

/// Uniform sample from `Sp(2n, F2)`.
///
/// Rows are filled one symplectic pair `(X_i, Z_i)` at a time. Both rows of a
/// pair are drawn uniformly from the symplectic complement of the pairs already
/// placed, the X row nonzero and the Z row having symplectic product 1 with it.
/// The number of choices at every stage is independent of earlier choices, so
/// the product distribution is uniform over the group.
pub fn uniform_target<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Tableau {
    assert!(n >= 1);
    let dim = 2 * n;
    let words = dim.div_ceil(64);
    let mut x_rows: Vec<Vec<u64>> = Vec::with_capacity(n);
    let mut z_rows: Vec<Vec<u64>> = Vec::with_capacity(n);

    for _ in 0..n {
        let basis = if x_rows.is_empty() {
            (0..dim)
                .map(|k| {
                    let mut v = vec![0u64; words];
                    v[k / 64] |= 1 << (k % 64);
                    v
                })
                .collect()
        } else {
            // v is in the complement iff <v, u> = v . (Omega u) = 0 for each placed u.
            let mut constraints = BitMatrix::zeros(2 * x_rows.len(), dim);
            for (k, u) in x_rows.iter().chain(z_rows.iter()).enumerate() {
                for c in 0..dim {
                    if bit(u, swap_half(c, n)) {
                        constraints.set(k, c, true);
                    }
                }
            }
            constraints.nullspace()
        };

        let x = loop {
            let v = random_combination(&basis, words, rng);
            if v.iter().any(|&w| w != 0) {
                break v;
            }
        };
        let z = loop {
            let w = random_combination(&basis, words, rng);
            if symplectic_product(&x, &w, n) {
                break w;
            }
        };
        x_rows.push(x);
        z_rows.push(z);
    }

    let mut m = BitMatrix::zeros(dim, dim);
    for (r, row) in x_rows.iter().chain(z_rows.iter()).enumerate() {
        for c in 0..dim {
            if bit(row, c) {
                m.set(r, c, true);
            }
        }
    }
    Tableau::from_matrix_unchecked(m).expect("square by construction")
}

fn bit(v: &[u64], k: usize) -> bool {
    (v[k / 64] >> (k % 64)) & 1 == 1
}

fn swap_half(c: usize, n: usize) -> usize {
    if c < n {
        c + n
    } else {
        c - n
    }
}

fn symplectic_product(u: &[u64], v: &[u64], n: usize) -> bool {
    (0..n).fold(false, |acc, k| {
        acc ^ (bit(u, k) & bit(v, k + n)) ^ (bit(u, k + n) & bit(v, k))
    })
}

fn random_combination<R: Rng + ?Sized>(basis: &[Vec<u64>], words: usize, rng: &mut R) -> Vec<u64> {
    let mut v = vec![0u64; words];
    for b in basis {
        if rng.random::<bool>() {
            for (o, &x) in v.iter_mut().zip(b) {
                *o ^= x;
            }
        }
    }
    v
}
