//! Inputs derived from the block view: embedding keys and per-qubit counts.

use crate::tableau::{BlockGrid, Tableau};

use super::nn::Scalar;
use super::params::{PolicyWeights, ETA, ETA1};

/// Identity block `(XX, XZ, ZX, ZZ) = (1, 0, 0, 1)`.
const IDENTITY_BLOCK: u8 = 0b1001;

/// Embedding key of block `(i, j)`: `16 * [i == j] + 8 XX + 4 XZ + 2 ZX + ZZ`.
#[inline]
pub fn edge_key(view: &BlockGrid, i: usize, j: usize) -> u8 {
    ((i == j) as u8) << 4 | view.code(i, j)
}

pub fn edge_keys(view: &BlockGrid) -> Vec<u8> {
    let n = view.n();
    let mut keys = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            keys.push(edge_key(view, i, j));
        }
    }
    keys
}

/// Edge embeddings `e_ij`, laid out `(i, j, channel)`.
pub fn embed_blocks<T: Scalar>(w: &PolicyWeights<T>, view: &BlockGrid) -> Vec<T> {
    let h = w.h();
    let embed = w.tensor("embed").expect("embedding table");
    let mut out = Vec::with_capacity(view.n() * view.n() * h);
    for key in edge_keys(view) {
        let k = key as usize;
        out.extend_from_slice(&embed[k * h..(k + 1) * h]);
    }
    out
}

/// Per-qubit count features.
///
/// `eta1 = [d, row, col, row1, row2, col1, col2, offrow, offcol]`: `d` flags an
/// identity diagonal block; `row`/`col` are nonzero-block fractions of block
/// row/column `i`; the `1`/`2` variants count rank-one and rank-two blocks; the
/// `off` variants count nonzero off-diagonal blocks over `n - 1`. `eta2` is
/// the one-hot rank of the diagonal block (rank zero gives all zeros).
#[derive(Clone, Debug, PartialEq)]
pub struct CountFeatures {
    pub eta1: Vec<[f64; ETA1]>,
    pub eta2: Vec<[f64; 2]>,
}

impl CountFeatures {
    /// `[eta1, eta2]` for qubit `i`.
    pub fn row(&self, i: usize) -> [f64; ETA] {
        let mut out = [0.0; ETA];
        out[..ETA1].copy_from_slice(&self.eta1[i]);
        out[ETA1..].copy_from_slice(&self.eta2[i]);
        out
    }
}

pub fn count_features(view: &BlockGrid) -> CountFeatures {
    let n = view.n();
    let nf = n as f64;
    let off_norm = if n > 1 { 1.0 / (n - 1) as f64 } else { 0.0 };
    let mut eta1 = Vec::with_capacity(n);
    let mut eta2 = Vec::with_capacity(n);
    for i in 0..n {
        let mut row = [0usize; 3];
        let mut col = [0usize; 3];
        let mut off_row = 0usize;
        let mut off_col = 0usize;
        for j in 0..n {
            let rr = view.rank(i, j);
            let rc = view.rank(j, i);
            row[rr] += 1;
            col[rc] += 1;
            if j != i {
                off_row += (rr > 0) as usize;
                off_col += (rc > 0) as usize;
            }
        }
        let diag = view.code(i, i);
        eta1.push([
            (diag == IDENTITY_BLOCK) as u8 as f64,
            (row[1] + row[2]) as f64 / nf,
            (col[1] + col[2]) as f64 / nf,
            row[1] as f64 / nf,
            row[2] as f64 / nf,
            col[1] as f64 / nf,
            col[2] as f64 / nf,
            off_row as f64 * off_norm,
            off_col as f64 * off_norm,
        ]);
        let r = view.rank(i, i);
        eta2.push([(r == 1) as u8 as f64, (r == 2) as u8 as f64]);
    }
    CountFeatures { eta1, eta2 }
}

pub fn tableau_count_features(t: &Tableau) -> CountFeatures {
    count_features(&t.block_view())
}
