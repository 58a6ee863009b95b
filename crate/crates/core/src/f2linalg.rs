//! Dense bit matrices over F2.
//!
//! Rows are packed into `u64` words, least significant bit first. Bits past
//! `cols` in the last word of a row are always zero, so whole-word equality,
//! hashing and popcounts are exact.

use std::fmt;

use crate::error::{Error, Result};

const WORD: usize = 64;

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BitMatrix {
    rows: usize,
    cols: usize,
    stride: usize,
    words: Vec<u64>,
}

impl BitMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "bit matrix dimensions must be positive");
        let stride = cols.div_ceil(WORD);
        Self {
            rows,
            cols,
            stride,
            words: vec![0; rows * stride],
        }
    }

    pub fn identity(size: usize) -> Self {
        let mut m = Self::zeros(size, size);
        for i in 0..size {
            m.set(i, i, true);
        }
        m
    }

    /// Builds a matrix from nested 0/1 rows.
    pub fn from_rows<R: AsRef<[u8]>>(rows: &[R]) -> Result<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        if nrows == 0 || ncols == 0 {
            return Err(Error::Shape("empty matrix".into()));
        }
        let mut m = Self::zeros(nrows, ncols);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != ncols {
                return Err(Error::Shape(format!(
                    "row {i} has {} entries, expected {ncols}",
                    row.len()
                )));
            }
            for (j, &b) in row.iter().enumerate() {
                match b {
                    0 => {}
                    1 => m.set(i, j, true),
                    other => {
                        return Err(Error::Argument(format!("entry {other} is not a bit")));
                    }
                }
            }
        }
        Ok(m)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        debug_assert!(i < self.rows && j < self.cols);
        (self.words[i * self.stride + j / WORD] >> (j % WORD)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: bool) {
        debug_assert!(i < self.rows && j < self.cols);
        let w = &mut self.words[i * self.stride + j / WORD];
        let mask = 1u64 << (j % WORD);
        if value {
            *w |= mask;
        } else {
            *w &= !mask;
        }
    }

    #[inline]
    pub fn flip(&mut self, i: usize, j: usize) {
        self.words[i * self.stride + j / WORD] ^= 1u64 << (j % WORD);
    }

    #[inline]
    pub fn row_words(&self, i: usize) -> &[u64] {
        &self.words[i * self.stride..(i + 1) * self.stride]
    }

    /// All packed words, row by row.
    pub fn words(&self) -> &[u64] {
        &self.words
    }

    /// `dst ^= src` on column bits, for every row.
    pub fn xor_col_into(&mut self, src: usize, dst: usize) {
        debug_assert!(src < self.cols && dst < self.cols);
        let (sw, sb) = (src / WORD, src % WORD);
        let (dw, db) = (dst / WORD, dst % WORD);
        for r in 0..self.rows {
            let base = r * self.stride;
            let bit = (self.words[base + sw] >> sb) & 1;
            self.words[base + dw] ^= bit << db;
        }
    }

    pub fn swap_cols(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        let (aw, ab) = (a / WORD, a % WORD);
        let (bw, bb) = (b / WORD, b % WORD);
        for r in 0..self.rows {
            let base = r * self.stride;
            let x = ((self.words[base + aw] >> ab) ^ (self.words[base + bw] >> bb)) & 1;
            self.words[base + aw] ^= x << ab;
            self.words[base + bw] ^= x << bb;
        }
    }

    /// Row `dst ^= row src`.
    pub fn xor_row_into(&mut self, src: usize, dst: usize) {
        if src == dst {
            self.words[dst * self.stride..(dst + 1) * self.stride].fill(0);
            return;
        }
        for w in 0..self.stride {
            let v = self.words[src * self.stride + w];
            self.words[dst * self.stride + w] ^= v;
        }
    }

    pub fn swap_rows(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        for w in 0..self.stride {
            self.words.swap(a * self.stride + w, b * self.stride + w);
        }
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_identity(&self) -> bool {
        if !self.is_square() {
            return false;
        }
        (0..self.rows).all(|i| {
            self.row_words(i).iter().enumerate().all(|(w, &word)| {
                let expected = if i / WORD == w { 1u64 << (i % WORD) } else { 0 };
                word == expected
            })
        })
    }

    /// Product over F2. For each set bit k of row i of `self`, row k of `rhs`
    /// is XOR-ed into row i of the result.
    pub fn matmul(&self, rhs: &BitMatrix) -> Result<BitMatrix> {
        if self.cols != rhs.rows {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = BitMatrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let dst = i * out.stride;
            for (w, &word) in self.row_words(i).iter().enumerate() {
                let mut bits = word;
                while bits != 0 {
                    let k = w * WORD + bits.trailing_zeros() as usize;
                    bits &= bits - 1;
                    for (o, &v) in out.words[dst..dst + out.stride]
                        .iter_mut()
                        .zip(rhs.row_words(k))
                    {
                        *o ^= v;
                    }
                }
            }
        }
        debug_assert!(out.is_canonical());
        Ok(out)
    }

    pub fn transpose(&self) -> BitMatrix {
        let mut out = BitMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for (w, &word) in self.row_words(i).iter().enumerate() {
                let mut bits = word;
                while bits != 0 {
                    let j = w * WORD + bits.trailing_zeros() as usize;
                    bits &= bits - 1;
                    out.set(j, i, true);
                }
            }
        }
        out
    }

    /// Row rank over F2. Works on a private copy.
    pub fn rank(&self) -> usize {
        let mut work = self.clone();
        let mut rank = 0;
        for col in 0..self.cols {
            let Some(pivot) = (rank..work.rows).find(|&r| work.get(r, col)) else {
                continue;
            };
            work.swap_rows(rank, pivot);
            for r in 0..work.rows {
                if r != rank && work.get(r, col) {
                    work.xor_row_into(rank, r);
                }
            }
            rank += 1;
            if rank == work.rows {
                break;
            }
        }
        rank
    }

    /// Basis of `{v : self * v = 0}`, each vector packed like a row of
    /// `self` (`cols` bits).
    pub fn nullspace(&self) -> Vec<Vec<u64>> {
        let mut work = self.clone();
        let mut pivots: Vec<usize> = Vec::new();
        let mut rank = 0;
        for col in 0..self.cols {
            if rank == work.rows {
                break;
            }
            let Some(pivot) = (rank..work.rows).find(|&r| work.get(r, col)) else {
                continue;
            };
            work.swap_rows(rank, pivot);
            for r in 0..work.rows {
                if r != rank && work.get(r, col) {
                    work.xor_row_into(rank, r);
                }
            }
            pivots.push(col);
            rank += 1;
        }
        let mut is_pivot = vec![false; self.cols];
        for &p in &pivots {
            is_pivot[p] = true;
        }
        let mut basis = Vec::with_capacity(self.cols - rank);
        for free in (0..self.cols).filter(|&c| !is_pivot[c]) {
            let mut v = vec![0u64; self.stride];
            v[free / WORD] |= 1 << (free % WORD);
            for (row, &p) in pivots.iter().enumerate() {
                if work.get(row, free) {
                    v[p / WORD] |= 1 << (p % WORD);
                }
            }
            basis.push(v);
        }
        basis
    }

    /// Number of entries that differ from the identity of the same size.
    pub fn hamming_to_identity(&self) -> Result<usize> {
        if !self.is_square() {
            return Err(Error::Shape(format!(
                "hamming distance to identity needs a square matrix, got {}x{}",
                self.rows, self.cols
            )));
        }
        let mut count = 0usize;
        for i in 0..self.rows {
            for (w, &word) in self.row_words(i).iter().enumerate() {
                let diag = if i / WORD == w { 1u64 << (i % WORD) } else { 0 };
                count += (word ^ diag).count_ones() as usize;
            }
        }
        Ok(count)
    }

    /// True if every padding bit is zero.
    pub fn is_canonical(&self) -> bool {
        let tail = self.cols % WORD;
        if tail == 0 {
            return true;
        }
        let mask = !0u64 << tail;
        (0..self.rows).all(|r| self.words[r * self.stride + self.stride - 1] & mask == 0)
    }
}

impl fmt::Debug for BitMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "BitMatrix {}x{}", self.rows, self.cols)?;
        for i in 0..self.rows {
            for j in 0..self.cols {
                f.write_str(if self.get(i, j) { "1" } else { "0" })?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}
