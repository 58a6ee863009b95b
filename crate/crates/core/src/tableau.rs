//! Phase-free Clifford tableaus and the `{H, S, CZ}` generator set.
//!
//! A tableau on `n` qubits is a `2n x 2n` binary symplectic matrix. Row `r` is
//! the image of the `r`-th basis Pauli (`X_0..X_{n-1}, Z_0..Z_{n-1}`); columns
//! `0..n` hold X-support and `n..2n` hold Z-support. Qubit indices are 0-based.
//!
//! Appending a generator multiplies on the right, which only touches the
//! columns of the qubits it acts on:
//!
//! * `H(i)`: swap columns `i` and `n+i`
//! * `S(i)`: column `n+i ^= column i`
//! * `CZ(i,j)`: column `n+i ^= column j`, column `n+j ^= column i`

use std::fmt;

use crate::error::{Error, Result};
use crate::f2linalg::BitMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Gate {
    H(usize),
    S(usize),
    /// Always stored with the smaller index first; build with [`Gate::cz`].
    Cz(usize, usize),
}

impl Gate {
    /// Controlled-Z with its pair normalized to `i < j`.
    pub fn cz(i: usize, j: usize) -> Result<Gate> {
        match i.cmp(&j) {
            std::cmp::Ordering::Less => Ok(Gate::Cz(i, j)),
            std::cmp::Ordering::Greater => Ok(Gate::Cz(j, i)),
            std::cmp::Ordering::Equal => {
                Err(Error::Argument(format!("cz needs two distinct qubits, got {i},{j}")))
            }
        }
    }

    #[inline]
    pub fn is_two_qubit(&self) -> bool {
        matches!(self, Gate::Cz(..))
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let ok = match *self {
            Gate::H(i) | Gate::S(i) => i < n,
            Gate::Cz(i, j) => i < j && j < n,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Argument(format!("gate {self} is not valid on {n} qubits")))
        }
    }

    /// Relabels qubits: `sigma . H(i) = H(sigma[i])`.
    pub fn permuted(&self, sigma: &[usize]) -> Gate {
        match *self {
            Gate::H(i) => Gate::H(sigma[i]),
            Gate::S(i) => Gate::S(sigma[i]),
            Gate::Cz(i, j) => {
                let (a, b) = (sigma[i], sigma[j]);
                Gate::Cz(a.min(b), a.max(b))
            }
        }
    }

    /// Every generator on `n` qubits, in action-index order.
    pub fn all(n: usize) -> Vec<Gate> {
        let mut out = Vec::with_capacity(n * (n + 3) / 2);
        out.extend((0..n).map(Gate::H));
        out.extend((0..n).map(Gate::S));
        for i in 0..n {
            for j in i + 1..n {
                out.push(Gate::Cz(i, j));
            }
        }
        out
    }
}

impl fmt::Display for Gate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Gate::H(i) => write!(f, "h {i}"),
            Gate::S(i) => write!(f, "s {i}"),
            Gate::Cz(i, j) => write!(f, "cz {i} {j}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Circuit {
    n: usize,
    gates: Vec<Gate>,
}

impl Circuit {
    pub fn new(n: usize) -> Self {
        Self { n, gates: Vec::new() }
    }

    pub fn from_gates(n: usize, gates: Vec<Gate>) -> Result<Self> {
        for g in &gates {
            g.validate(n)?;
        }
        Ok(Self { n, gates })
    }

    pub fn push(&mut self, g: Gate) -> Result<()> {
        g.validate(self.n)?;
        self.gates.push(g);
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn gates(&self) -> &[Gate] {
        &self.gates
    }

    pub fn len(&self) -> usize {
        self.gates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gates.is_empty()
    }

    pub fn cz_count(&self) -> usize {
        self.gates.iter().filter(|g| g.is_two_qubit()).count()
    }

    pub fn single_count(&self) -> usize {
        self.gates.len() - self.cz_count()
    }

    pub fn reversed(&self) -> Circuit {
        Circuit {
            n: self.n,
            gates: self.gates.iter().rev().copied().collect(),
        }
    }
}

/// 4-bit block codes of a tableau, `code = 8*XX + 4*XZ + 2*ZX + ZZ`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockGrid {
    n: usize,
    codes: Vec<u8>,
}

impl BlockGrid {
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn code(&self, i: usize, j: usize) -> u8 {
        self.codes[i * self.n + j]
    }

    /// Bits in channel order `(XX, XZ, ZX, ZZ)`.
    pub fn bits(&self, i: usize, j: usize) -> [u8; 4] {
        let c = self.code(i, j);
        [(c >> 3) & 1, (c >> 2) & 1, (c >> 1) & 1, c & 1]
    }

    /// F2 rank of the 2x2 block.
    pub fn rank(&self, i: usize, j: usize) -> usize {
        block_rank(self.code(i, j))
    }
}

/// Rank of the 2x2 block `[[XX, XZ], [ZX, ZZ]]` encoded as a 4-bit code.
pub fn block_rank(code: u8) -> usize {
    if code == 0 {
        0
    } else {
        let det = ((code >> 3) & (code & 1)) ^ ((code >> 2) & (code >> 1) & 1);
        if det & 1 == 1 {
            2
        } else {
            1
        }
    }
}

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Tableau {
    n: usize,
    m: BitMatrix,
}

impl Tableau {
    pub fn identity(n: usize) -> Self {
        assert!(n >= 1, "a tableau needs at least one qubit");
        Self {
            n,
            m: BitMatrix::identity(2 * n),
        }
    }

    /// Wraps a matrix after checking its shape and the symplectic condition.
    pub fn from_matrix(m: BitMatrix) -> Result<Self> {
        let t = Self::with_shape(m)?;
        if !t.is_symplectic() {
            return Err(Error::Invariant("matrix is not symplectic".into()));
        }
        Ok(t)
    }

    /// Shape check only; symplecticity is asserted in debug builds.
    pub fn from_matrix_unchecked(m: BitMatrix) -> Result<Self> {
        let t = Self::with_shape(m)?;
        debug_assert!(t.is_symplectic(), "non-symplectic tableau");
        Ok(t)
    }

    fn with_shape(m: BitMatrix) -> Result<Self> {
        if !m.is_square() || m.rows() % 2 != 0 {
            return Err(Error::Shape(format!(
                "tableau must be 2n x 2n, got {}x{}",
                m.rows(),
                m.cols()
            )));
        }
        Ok(Self { n: m.rows() / 2, m })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn matrix(&self) -> &BitMatrix {
        &self.m
    }

    pub fn into_matrix(self) -> BitMatrix {
        self.m
    }

    pub fn is_identity(&self) -> bool {
        self.m.is_identity()
    }

    pub fn hamming_to_identity(&self) -> usize {
        self.m.hamming_to_identity().expect("tableaus are square")
    }

    /// `M^T Omega M == Omega`.
    pub fn is_symplectic(&self) -> bool {
        let omega = omega(self.n);
        let lhs = self
            .m
            .transpose()
            .matmul(&omega.matmul(&self.m).expect("square"))
            .expect("square");
        lhs == omega
    }

    /// Right-multiplies by a generator, in place.
    pub fn apply_gate(&mut self, g: Gate) -> Result<()> {
        g.validate(self.n)?;
        self.apply_unchecked(g);
        Ok(())
    }

    #[inline]
    pub(crate) fn apply_unchecked(&mut self, g: Gate) {
        let n = self.n;
        match g {
            Gate::H(i) => self.m.swap_cols(i, n + i),
            Gate::S(i) => self.m.xor_col_into(i, n + i),
            Gate::Cz(i, j) => {
                self.m.xor_col_into(j, n + i);
                self.m.xor_col_into(i, n + j);
            }
        }
    }

    pub fn applied(&self, g: Gate) -> Result<Tableau> {
        let mut t = self.clone();
        t.apply_gate(g)?;
        Ok(t)
    }

    /// Applies the gates left to right.
    pub fn apply_circuit(&mut self, c: &Circuit) -> Result<()> {
        if c.n() != self.n {
            return Err(Error::Argument(format!(
                "circuit on {} qubits applied to a {}-qubit tableau",
                c.n(),
                self.n
            )));
        }
        for &g in c.gates() {
            self.apply_unchecked(g);
        }
        Ok(())
    }

    /// `Omega M^T Omega`, the group inverse of a symplectic matrix.
    pub fn inverse(&self) -> Result<Tableau> {
        if !self.is_symplectic() {
            return Err(Error::Invariant("cannot invert a non-symplectic tableau".into()));
        }
        let n2 = 2 * self.n;
        let swap = |k: usize| if k < self.n { k + self.n } else { k - self.n };
        let mut out = BitMatrix::zeros(n2, n2);
        for i in 0..n2 {
            for j in 0..n2 {
                if self.m.get(swap(j), swap(i)) {
                    out.set(i, j, true);
                }
            }
        }
        Ok(Tableau { n: self.n, m: out })
    }

    /// Qubit relabeling `Pi M Pi^T`, moving qubit `i` to `sigma[i]`.
    pub fn permute(&self, sigma: &[usize]) -> Result<Tableau> {
        check_permutation(sigma, self.n)?;
        let n = self.n;
        let mut out = BitMatrix::zeros(2 * n, 2 * n);
        for r in 0..2 * n {
            let pr = if r < n { sigma[r] } else { n + sigma[r - n] };
            for c in 0..2 * n {
                if self.m.get(r, c) {
                    let pc = if c < n { sigma[c] } else { n + sigma[c - n] };
                    out.set(pr, pc, true);
                }
            }
        }
        Ok(Tableau { n, m: out })
    }

    pub fn block_view(&self) -> BlockGrid {
        let n = self.n;
        let mut codes = vec![0u8; n * n];
        for i in 0..n {
            for j in 0..n {
                let b = |r: usize, c: usize| self.m.get(r, c) as u8;
                codes[i * n + j] =
                    (b(i, j) << 3) | (b(i, j + n) << 2) | (b(i + n, j) << 1) | b(i + n, j + n);
            }
        }
        BlockGrid { n, codes }
    }
}

impl fmt::Debug for Tableau {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tableau(n={}) {:?}", self.n, self.m)
    }
}

/// `[[0, I], [I, 0]]` of size `2n`.
pub fn omega(n: usize) -> BitMatrix {
    let mut m = BitMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        m.set(i, n + i, true);
        m.set(n + i, i, true);
    }
    m
}

/// The tableau of a single generator on `n` qubits.
pub fn generator_matrix(g: Gate, n: usize) -> Result<Tableau> {
    let mut t = Tableau::identity(n);
    t.apply_gate(g)?;
    Ok(t)
}

pub fn check_permutation(sigma: &[usize], n: usize) -> Result<()> {
    if sigma.len() != n {
        return Err(Error::Argument(format!(
            "permutation has {} entries for {n} qubits",
            sigma.len()
        )));
    }
    let mut seen = vec![false; n];
    for &s in sigma {
        if s >= n || std::mem::replace(&mut seen[s], true) {
            return Err(Error::Argument(format!("{sigma:?} is not a permutation")));
        }
    }
    Ok(())
}

pub fn invert_permutation(sigma: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; sigma.len()];
    for (i, &s) in sigma.iter().enumerate() {
        inv[s] = i;
    }
    inv
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn m(rows: &[&[u8]]) -> BitMatrix {
        BitMatrix::from_rows(rows).unwrap()
    }

    fn random_tableau(n: usize, steps: usize, rng: &mut ChaCha8Rng) -> Tableau {
        let gates = Gate::all(n);
        let mut t = Tableau::identity(n);
        for _ in 0..steps {
            t.apply_gate(gates[rng.random_range(0..gates.len())]).unwrap();
        }
        t
    }

    #[test]
    fn generator_goldens() {
        assert_eq!(
            generator_matrix(Gate::H(0), 1).unwrap().matrix(),
            &m(&[&[0, 1], &[1, 0]])
        );
        assert_eq!(
            generator_matrix(Gate::S(0), 1).unwrap().matrix(),
            &m(&[&[1, 1], &[0, 1]])
        );
        assert_eq!(
            generator_matrix(Gate::Cz(0, 1), 2).unwrap().matrix(),
            &m(&[&[1, 0, 0, 1], &[0, 1, 1, 0], &[0, 0, 1, 0], &[0, 0, 0, 1]])
        );
    }

    #[test]
    fn cz_constructor_normalizes() {
        assert_eq!(Gate::cz(3, 1).unwrap(), Gate::Cz(1, 3));
        assert!(Gate::cz(2, 2).is_err());
        assert!(Gate::Cz(2, 1).validate(3).is_err());
    }

    #[test]
    fn index_errors() {
        let mut t = Tableau::identity(2);
        assert!(matches!(t.apply_gate(Gate::H(2)), Err(Error::Argument(_))));
        assert!(t.apply_gate(Gate::Cz(0, 2)).is_err());
        assert!(generator_matrix(Gate::Cz(0, 1), 1).is_err());
    }

    #[test]
    fn circuit_application() {
        let mut t = Tableau::identity(1);
        t.apply_circuit(&Circuit::new(1)).unwrap();
        assert!(t.is_identity());
        t.apply_circuit(&Circuit::from_gates(1, vec![Gate::H(0), Gate::H(0)]).unwrap())
            .unwrap();
        assert!(t.is_identity());

        let word = vec![
            Gate::H(0),
            Gate::Cz(0, 1),
            Gate::H(0),
            Gate::Cz(0, 2),
            Gate::H(0),
            Gate::Cz(1, 2),
            Gate::Cz(0, 1),
            Gate::H(0),
            Gate::Cz(0, 2),
        ];
        let mut t = Tableau::identity(3);
        t.apply_circuit(&Circuit::from_gates(3, word).unwrap()).unwrap();
        assert!(t.is_identity());

        assert!(Tableau::identity(2).apply_circuit(&Circuit::new(3)).is_err());
    }

    #[test]
    fn inverse_examples() {
        assert!(Tableau::identity(3).inverse().unwrap().is_identity());
        let h = generator_matrix(Gate::H(0), 1).unwrap();
        assert_eq!(h.inverse().unwrap(), h);
        let bad = Tableau {
            n: 1,
            m: BitMatrix::zeros(2, 2),
        };
        assert!(matches!(bad.inverse(), Err(Error::Invariant(_))));
        assert!(Tableau::from_matrix(BitMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn inverse_of_random_walks() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for k in 0..1000 {
            let n = 2 + k % 5;
            let t = random_tableau(n, 40, &mut rng);
            let inv = t.inverse().unwrap();
            assert!(inv.matrix().matmul(t.matrix()).unwrap().is_identity());
        }
    }

    #[test]
    fn permute_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = random_tableau(4, 30, &mut rng);
        assert_eq!(t.permute(&[0, 1, 2, 3]).unwrap(), t);
        let sigma = vec![2, 0, 3, 1];
        let back = t.permute(&sigma).unwrap().permute(&invert_permutation(&sigma)).unwrap();
        assert_eq!(back, t);

        let cz01 = generator_matrix(Gate::Cz(0, 1), 3).unwrap();
        assert_eq!(
            cz01.permute(&[2, 1, 0]).unwrap(),
            generator_matrix(Gate::Cz(1, 2), 3).unwrap()
        );
        assert!(t.permute(&[0, 0, 1, 2]).is_err());
        assert!(t.permute(&[0, 1, 2]).is_err());
    }

    #[test]
    fn block_view_examples() {
        let id = Tableau::identity(3).block_view();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(id.bits(i, j), if i == j { [1, 0, 0, 1] } else { [0; 4] });
            }
        }
        let cz = generator_matrix(Gate::Cz(0, 1), 2).unwrap().block_view();
        assert_eq!(cz.bits(0, 1), [0, 1, 0, 0]);
        assert_eq!(cz.bits(1, 0), [0, 1, 0, 0]);
        let h = generator_matrix(Gate::H(0), 1).unwrap().block_view();
        assert_eq!(h.bits(0, 0), [0, 1, 1, 0]);
    }

    #[test]
    fn block_rank_matches_bit_matrix_rank() {
        for code in 0u8..16 {
            let b = m(&[&[(code >> 3) & 1, (code >> 2) & 1], &[(code >> 1) & 1, code & 1]]);
            assert_eq!(block_rank(code), b.rank());
        }
    }

    #[test]
    fn action_count() {
        for n in 1..12 {
            let all = Gate::all(n);
            let distinct: std::collections::HashSet<_> = all.iter().collect();
            assert_eq!(distinct.len(), n * (n + 3) / 2);
        }
        assert_eq!(Gate::all(6).len(), 27);
    }

    #[test]
    fn generators_preserve_symplecticity_and_are_involutions() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for k in 0..2000 {
            let n = 1 + k % 8;
            let t = random_tableau(n, 3 * n, &mut rng);
            let gates = Gate::all(n);
            let g = gates[rng.random_range(0..gates.len())];
            let once = t.applied(g).unwrap();
            assert!(once.is_symplectic());
            assert_eq!(once.applied(g).unwrap(), t);
            let slow = t.matrix().matmul(generator_matrix(g, n).unwrap().matrix()).unwrap();
            assert_eq!(once.matrix(), &slow);
        }
    }

    #[test]
    fn transition_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..300 {
            let n = rng.random_range(2..7);
            let t = random_tableau(n, 20, &mut rng);
            let mut sigma: Vec<usize> = (0..n).collect();
            sigma.shuffle(&mut rng);
            for g in Gate::all(n) {
                let lhs = t.permute(&sigma).unwrap().applied(g.permuted(&sigma)).unwrap();
                let rhs = t.applied(g).unwrap().permute(&sigma).unwrap();
                assert_eq!(lhs, rhs);
            }
        }
    }
}
