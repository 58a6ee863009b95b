//! Exact answers for `n <= 3` by exhaustive search of the Cayley graph of
//! `Sp(2n, F2)` under `{H, S, CZ}`.
//!
//! A tableau with `2n <= 6` is packed into a `u64`: bit `r * 2n + c` holds
//! entry `(r, c)`. At `n = 3` that is 36 bits per state and 1,451,520 states.
//! A full table at `n = 3` takes roughly 40 MB and a few seconds.

use std::collections::VecDeque;
use std::io::Write;

use rustc_hash::FxHashMap;

use crate::error::{Error, Result};
use crate::f2linalg::BitMatrix;
use crate::tableau::{Circuit, Gate, Tableau};

pub const MAX_N: usize = 3;

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Argument("qubit count must be positive".into()));
    }
    if n > MAX_N {
        return Err(Error::Capacity(format!(
            "exhaustive search supports n <= {MAX_N}, got {n}"
        )));
    }
    Ok(())
}

pub fn pack(t: &Tableau) -> Result<u64> {
    let n = t.n();
    check_n(n)?;
    let d = 2 * n;
    let mut key = 0u64;
    for r in 0..d {
        key |= t.matrix().row_words(r)[0] << (r * d);
    }
    Ok(key)
}

pub fn unpack(key: u64, n: usize) -> Result<Tableau> {
    check_n(n)?;
    let d = 2 * n;
    let mut m = BitMatrix::zeros(d, d);
    for r in 0..d {
        for c in 0..d {
            if key >> (r * d + c) & 1 == 1 {
                m.set(r, c, true);
            }
        }
    }
    Tableau::from_matrix(m)
}

/// Generator actions on packed keys.
#[derive(Clone, Debug)]
struct PackedGates {
    n: usize,
    gates: Vec<Gate>,
    col: Vec<u64>,
}

impl PackedGates {
    fn new(n: usize) -> Self {
        let d = 2 * n;
        let col = (0..d)
            .map(|c| (0..d).fold(0u64, |m, r| m | 1 << (r * d + c)))
            .collect();
        Self {
            n,
            gates: Gate::all(n),
            col,
        }
    }

    #[inline]
    fn shift(x: u64, from: usize, to: usize) -> u64 {
        if to >= from {
            x << (to - from)
        } else {
            x >> (from - to)
        }
    }

    #[inline]
    fn apply(&self, key: u64, g: Gate) -> u64 {
        let n = self.n;
        match g {
            Gate::H(i) => {
                let (x, z) = (self.col[i], self.col[n + i]);
                key & !(x | z) | (key & x) << n | (key & z) >> n
            }
            Gate::S(i) => key ^ (key & self.col[i]) << n,
            Gate::Cz(i, j) => {
                key ^ Self::shift(key & self.col[j], j, n + i)
                    ^ Self::shift(key & self.col[i], i, n + j)
            }
        }
    }
}

fn identity_key(n: usize) -> u64 {
    let d = 2 * n;
    (0..d).fold(0, |k, r| k | 1 << (r * d + r))
}

/// Every element of the group as a packed key, in breadth-first order.
pub fn enumerate_group(n: usize) -> Result<Vec<u64>> {
    check_n(n)?;
    let gates = PackedGates::new(n);
    let start = identity_key(n);
    let mut seen = rustc_hash::FxHashSet::default();
    seen.insert(start);
    let mut order = vec![start];
    let mut head = 0;
    while head < order.len() {
        let key = order[head];
        head += 1;
        for &g in &gates.gates {
            let next = gates.apply(key, g);
            if seen.insert(next) {
                order.push(next);
            }
        }
    }
    Ok(order)
}

/// `|Sp(2n, F2)| = 2^(n^2) * prod_{i=1..n} (4^i - 1)`.
pub fn group_order(n: u32) -> u128 {
    (1..=n).fold(1u128 << (n * n), |acc, i| acc * ((1u128 << (2 * i)) - 1))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    /// Two-qubit gates cost one, single-qubit gates are free.
    CzCount,
    /// Every gate costs one.
    GateCount,
}

#[derive(Clone, Copy, Debug)]
struct Entry {
    dist: u16,
    /// Index into the action table of the last gate on a shortest word;
    /// `u8::MAX` for the identity.
    parent: u8,
}

/// Shortest-word table over the whole group for one qubit count and metric.
#[derive(Clone, Debug)]
pub struct DistanceTable {
    gates: PackedGates,
    metric: Metric,
    table: FxHashMap<u64, Entry>,
}

impl DistanceTable {
    pub fn build(n: usize, metric: Metric) -> Result<Self> {
        check_n(n)?;
        let gates = PackedGates::new(n);
        let start = identity_key(n);
        let mut table = FxHashMap::default();
        table.reserve(group_order(n as u32) as usize);
        table.insert(
            start,
            Entry {
                dist: 0,
                parent: u8::MAX,
            },
        );
        let mut queue = VecDeque::from([(start, 0u16)]);
        while let Some((key, dist)) = queue.pop_front() {
            if table[&key].dist < dist {
                continue;
            }
            for (a, &g) in gates.gates.iter().enumerate() {
                let w = match metric {
                    Metric::CzCount => g.is_two_qubit() as u16,
                    Metric::GateCount => 1,
                };
                let next = gates.apply(key, g);
                let nd = dist + w;
                let better = table.get(&next).is_none_or(|e| nd < e.dist);
                if better {
                    table.insert(
                        next,
                        Entry {
                            dist: nd,
                            parent: a as u8,
                        },
                    );
                    if w == 0 {
                        queue.push_front((next, nd));
                    } else {
                        queue.push_back((next, nd));
                    }
                }
            }
        }
        Ok(Self {
            gates,
            metric,
            table,
        })
    }

    pub fn n(&self) -> usize {
        self.gates.n
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    fn key_of(&self, t: &Tableau) -> Result<u64> {
        if t.n() != self.n() {
            return Err(Error::Argument(format!(
                "table is for n={}, target has n={}",
                self.n(),
                t.n()
            )));
        }
        pack(t)
    }

    pub fn distance(&self, t: &Tableau) -> Result<usize> {
        let key = self.key_of(t)?;
        self.table
            .get(&key)
            .map(|e| e.dist as usize)
            .ok_or_else(|| Error::Invariant("target is not a group element".into()))
    }

    /// A word of minimal cost whose product is `t`.
    pub fn witness(&self, t: &Tableau) -> Result<Circuit> {
        let mut key = self.key_of(t)?;
        let mut rev = Vec::new();
        loop {
            let e = self
                .table
                .get(&key)
                .ok_or_else(|| Error::Invariant("target is not a group element".into()))?;
            if e.parent == u8::MAX {
                break;
            }
            let g = self.gates.gates[e.parent as usize];
            rev.push(g);
            // generators are involutions, so stepping back applies the same gate
            key = self.gates.apply(key, g);
        }
        rev.reverse();
        Circuit::from_gates(self.n(), rev)
    }

    /// Rows `tableau-hex,distance` sorted by key.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let mut rows: Vec<(u64, u16)> = self.table.iter().map(|(&k, e)| (k, e.dist)).collect();
        rows.sort_unstable();
        let header = match self.metric {
            Metric::CzCount => "tableau_hex,cz_distance",
            Metric::GateCount => "tableau_hex,gate_distance",
        };
        writeln!(out, "{header}")?;
        let width = (4 * self.n() * self.n()).div_ceil(4);
        for (k, d) in rows {
            writeln!(out, "{k:0width$x},{d}")?;
        }
        Ok(())
    }
}

/// Minimal CZ count over all generator words equal to `target`, with a
/// witness. Builds a fresh table; use [`DistanceTable`] for many queries.
pub fn optimal_cz_count(target: &Tableau) -> Result<(usize, Circuit)> {
    let table = DistanceTable::build(target.n(), Metric::CzCount)?;
    Ok((table.distance(target)?, table.witness(target)?))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Parity {
    /// Walk parity two-colors the Cayley graph.
    Bipartite {
        even: Vec<Tableau>,
        odd: Vec<Tableau>,
    },
    /// An odd-length word whose product is the identity.
    OddCycle(Circuit),
}

/// Two-colors the Cayley graph by walk parity from the identity.
pub fn parity_classes(n: usize) -> Result<Parity> {
    check_n(n)?;
    let gates = PackedGates::new(n);
    let start = identity_key(n);
    // parity and BFS parent for each state
    let mut info: FxHashMap<u64, (bool, u8)> = FxHashMap::default();
    info.insert(start, (false, u8::MAX));
    let mut queue = VecDeque::from([start]);
    let path = |info: &FxHashMap<u64, (bool, u8)>, mut key: u64| {
        let mut rev = Vec::new();
        while info[&key].1 != u8::MAX {
            let g = gates.gates[info[&key].1 as usize];
            rev.push(g);
            key = gates.apply(key, g);
        }
        rev.reverse();
        rev
    };
    while let Some(key) = queue.pop_front() {
        let parity = info[&key].0;
        for (a, &g) in gates.gates.iter().enumerate() {
            let next = gates.apply(key, g);
            match info.get(&next) {
                None => {
                    info.insert(next, (!parity, a as u8));
                    queue.push_back(next);
                }
                Some(&(p, _)) if p == parity => {
                    // identity -> key, g, then back from next to identity
                    let mut word = path(&info, key);
                    word.push(g);
                    let mut back = path(&info, next);
                    back.reverse();
                    word.extend(back);
                    return Ok(Parity::OddCycle(Circuit::from_gates(n, word)?));
                }
                Some(_) => {}
            }
        }
    }
    let mut even = Vec::new();
    let mut odd = Vec::new();
    let mut keys: Vec<_> = info.into_iter().collect();
    keys.sort_unstable_by_key(|&(k, _)| k);
    for (k, (p, _)) in keys {
        let t = unpack(k, n)?;
        if p {
            odd.push(t);
        } else {
            even.push(t);
        }
    }
    Ok(Parity::Bipartite { even, odd })
}

/// `H0 CZ01 H0 CZ02 H0 CZ12 CZ01 H0 CZ02`, embedded on the first three qubits.
pub fn odd_identity_word(n: usize) -> Result<Circuit> {
    if n < 3 {
        return Err(Error::Argument(format!("the odd identity word needs n >= 3, got {n}")));
    }
    use Gate::{Cz, H};
    Circuit::from_gates(
        n,
        vec![H(0), Cz(0, 1), H(0), Cz(0, 2), H(0), Cz(1, 2), Cz(0, 1), H(0), Cz(0, 2)],
    )
}

pub fn odd_identity_check(n: usize) -> Result<bool> {
    let word = odd_identity_word(n)?;
    let mut t = Tableau::identity(n);
    t.apply_circuit(&word)?;
    Ok(t.is_identity())
}
