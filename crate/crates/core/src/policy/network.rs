//! Forward and backward passes of the equivariant policy/value network.
//!
//! Pipeline: edge embeddings from the block view, pooled into per-qubit
//! tokens, `L` rounds of message passing over ordered qubit pairs (edges stay
//! fixed), then equivariant action heads and an invariant value head.
//!
//! A batch holds tableaus of one qubit count `n`. Edge `(b, i, j)` lives at row
//! `(b n + i) n + j`, node `(b, i)` at row `b n + i`.

use crate::error::{Error, Result};
use crate::env::num_actions;
use crate::tableau::Tableau;

use super::features::{count_features, edge_keys};
use super::nn::{
    layer_norm, layer_norm_backward, mlp_back_to_pre, mlp_backward, mlp_finish, mlp_forward,
    LayerNormCache, MlpCache, Scalar,
};
use super::params::{PolicyWeights, CBAR, ETA, ETA1};

/// Logits over the action layout of [`crate::env::action_index`] and a value.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyOutput<T = f32> {
    pub logits: Vec<T>,
    pub value: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchOutput<T = f32> {
    pub batch: usize,
    pub num_actions: usize,
    /// `batch x num_actions`, row-major.
    pub logits: Vec<T>,
    pub values: Vec<T>,
}

impl<T: Scalar> BatchOutput<T> {
    pub fn logits_of(&self, b: usize) -> &[T] {
        &self.logits[b * self.num_actions..(b + 1) * self.num_actions]
    }

    pub fn get(&self, b: usize) -> PolicyOutput<T> {
        PolicyOutput {
            logits: self.logits_of(b).to_vec(),
            value: self.values[b],
        }
    }
}

/// Network inputs for a batch of same-size tableaus.
#[derive(Clone, Debug)]
pub struct Inputs<T> {
    pub batch: usize,
    pub n: usize,
    pub keys: Vec<u8>,
    /// `E x h`.
    pub e: Vec<T>,
    /// `N x 11`, `[eta1, eta2]` per qubit.
    pub eta: Vec<T>,
}

impl<T: Scalar> Inputs<T> {
    pub fn from_tableaus(w: &PolicyWeights<T>, ts: &[&Tableau]) -> Result<Self> {
        let n = ts
            .first()
            .map(|t| t.n())
            .ok_or_else(|| Error::Argument("empty batch".into()))?;
        if ts.iter().any(|t| t.n() != n) {
            return Err(Error::Shape("batch mixes qubit counts".into()));
        }
        let h = w.h();
        let embed = w.tensor("embed").expect("embedding table");
        let mut keys = Vec::with_capacity(ts.len() * n * n);
        let mut eta = Vec::with_capacity(ts.len() * n * ETA);
        for t in ts {
            let view = t.block_view();
            keys.extend(edge_keys(&view));
            let f = count_features(&view);
            for i in 0..n {
                eta.extend(f.row(i).iter().map(|&v| T::from_f64(v)));
            }
        }
        let mut e = Vec::with_capacity(keys.len() * h);
        for &k in &keys {
            let k = k as usize;
            e.extend_from_slice(&embed[k * h..(k + 1) * h]);
        }
        Ok(Self {
            batch: ts.len(),
            n,
            keys,
            e,
            eta,
        })
    }

    #[inline]
    fn edge(&self, b: usize, i: usize, j: usize) -> usize {
        (b * self.n + i) * self.n + j
    }
}

#[derive(Clone, Debug)]
pub struct AggregateCache<T> {
    x0: Vec<T>,
    row_max: Vec<u32>,
    col_max: Vec<u32>,
    node: MlpCache<T>,
}

#[derive(Clone, Debug)]
pub struct RoundCache<T> {
    q_in: Vec<T>,
    msg: MlpCache<T>,
    msg_max: Vec<u32>,
    xu: Vec<T>,
    upd: MlpCache<T>,
    ln: LayerNormCache<T>,
}

#[derive(Clone, Debug)]
pub struct ReadoutCache<T> {
    q: Vec<T>,
    s: Vec<T>,
    q_mean: Vec<T>,
    q_max: Vec<u32>,
    /// `sqrt(var + eps)` per batch and channel.
    q_sigma: Vec<T>,
    global: MlpCache<T>,
    value: MlpCache<T>,
    xl: Vec<T>,
    local: MlpCache<T>,
    xc: Vec<T>,
    cz: MlpCache<T>,
}

/// Everything the backward pass needs.
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    inputs: Inputs<T>,
    agg: AggregateCache<T>,
    rounds: Vec<RoundCache<T>>,
    readout: ReadoutCache<T>,
}

const STD_EPS: f64 = 1e-6;

fn check_finite<T: Scalar>(v: &[T], stage: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric { stage })
    }
}

/// Initial tokens from row/column mean and max pooling of the edge
/// embeddings, the diagonal embedding and the count features.
pub fn aggregate<T: Scalar>(w: &PolicyWeights<T>, x: &Inputs<T>) -> (Vec<T>, AggregateCache<T>) {
    let h = w.h();
    let n = x.n;
    let nodes = x.batch * n;
    let d_in = 5 * h + ETA;
    let inv_n = T::one() / T::from_f64(n as f64);
    let mut x0 = vec![T::zero(); nodes * d_in];
    let mut row_max = vec![0u32; nodes * h];
    let mut col_max = vec![0u32; nodes * h];
    for b in 0..x.batch {
        for i in 0..n {
            let node = b * n + i;
            let out = &mut x0[node * d_in..(node + 1) * d_in];
            for c in 0..h {
                let mut rs = T::zero();
                let mut cs = T::zero();
                let mut rm = T::neg_infinity();
                let mut cm = T::neg_infinity();
                let (mut ri, mut ci) = (0u32, 0u32);
                for j in 0..n {
                    let vr = x.e[x.edge(b, i, j) * h + c];
                    let vc = x.e[x.edge(b, j, i) * h + c];
                    rs += vr;
                    cs += vc;
                    if vr > rm {
                        rm = vr;
                        ri = j as u32;
                    }
                    if vc > cm {
                        cm = vc;
                        ci = j as u32;
                    }
                }
                out[c] = rs * inv_n;
                out[h + c] = rm;
                out[2 * h + c] = cs * inv_n;
                out[3 * h + c] = cm;
                out[4 * h + c] = x.e[x.edge(b, i, i) * h + c];
                row_max[node * h + c] = ri;
                col_max[node * h + c] = ci;
            }
            out[5 * h..].copy_from_slice(&x.eta[node * ETA..(node + 1) * ETA]);
        }
    }
    let (q0, node) = mlp_forward(&w.layout().node, w.params(), &x0, nodes);
    (
        q0,
        AggregateCache {
            x0,
            row_max,
            col_max,
            node,
        },
    )
}

/// First-layer projections of the edge embeddings through the message
/// network. Edges never change, so these are shared by every round.
pub fn edge_projections<T: Scalar>(w: &PolicyWeights<T>, x: &Inputs<T>) -> (Vec<T>, Vec<T>) {
    let h = w.h();
    let spec = w.layout().msg;
    let hid = spec.d_hid;
    let w1 = spec.w1(w.params());
    let edges = x.keys.len();
    let mut pa = vec![T::zero(); edges * hid];
    let mut pb = vec![T::zero(); edges * hid];
    T::gemm(edges, h, hid, &x.e, false, &w1[2 * h * hid..3 * h * hid], false, T::zero(), &mut pa);
    T::gemm(edges, h, hid, &x.e, false, &w1[3 * h * hid..4 * h * hid], false, T::zero(), &mut pb);
    (pa, pb)
}

/// One message-passing round with shared message/update networks and the
/// round's own layer norm. `pa`/`pb` come from [`edge_projections`].
pub fn message_round<T: Scalar>(
    w: &PolicyWeights<T>,
    round: usize,
    x: &Inputs<T>,
    q: &[T],
    pa: &[T],
    pb: &[T],
) -> (Vec<T>, RoundCache<T>) {
    let h = w.h();
    let n = x.n;
    let nodes = x.batch * n;
    let edges = nodes * n;
    let p = w.params();
    let spec = w.layout().msg;
    let hid = spec.d_hid;
    let w1 = spec.w1(p);
    let b1 = spec.b1(p);
    let w_ind = &w1[4 * h * hid..(4 * h + 1) * hid];

    let mut qa = vec![T::zero(); nodes * hid];
    let mut qb = vec![T::zero(); nodes * hid];
    T::gemm(nodes, h, hid, q, false, &w1[..h * hid], false, T::zero(), &mut qa);
    T::gemm(nodes, h, hid, q, false, &w1[h * hid..2 * h * hid], false, T::zero(), &mut qb);

    let mut pre = vec![T::zero(); edges * hid];
    for b in 0..x.batch {
        for i in 0..n {
            for j in 0..n {
                let ij = x.edge(b, i, j);
                let ji = x.edge(b, j, i);
                let row = &mut pre[ij * hid..(ij + 1) * hid];
                let a = &qa[(b * n + i) * hid..(b * n + i + 1) * hid];
                let bq = &qb[(b * n + j) * hid..(b * n + j + 1) * hid];
                let ea = &pa[ij * hid..(ij + 1) * hid];
                let eb = &pb[ji * hid..(ji + 1) * hid];
                for c in 0..hid {
                    row[c] = a[c] + bq[c] + ea[c] + eb[c] + b1[c];
                }
                if i != j {
                    for c in 0..hid {
                        row[c] += w_ind[c];
                    }
                }
            }
        }
    }
    let (m, msg) = mlp_finish(&spec, p, pre, edges);

    let d_upd = 3 * h + ETA1;
    let inv_n = T::one() / T::from_f64(n as f64);
    let mut xu = vec![T::zero(); nodes * d_upd];
    let mut msg_max = vec![0u32; nodes * h];
    for node in 0..nodes {
        let out = &mut xu[node * d_upd..(node + 1) * d_upd];
        out[..h].copy_from_slice(&q[node * h..(node + 1) * h]);
        for c in 0..h {
            let mut sum = T::zero();
            let mut best = T::neg_infinity();
            let mut arg = 0u32;
            for j in 0..n {
                let v = m[(node * n + j) * h + c];
                sum += v;
                if v > best {
                    best = v;
                    arg = j as u32;
                }
            }
            out[h + c] = sum * inv_n;
            out[2 * h + c] = best;
            msg_max[node * h + c] = arg;
        }
        out[3 * h..].copy_from_slice(&x.eta[node * ETA..node * ETA + ETA1]);
    }
    let (mut r, upd) = mlp_forward(&w.layout().upd, p, &xu, nodes);
    for (rv, &qv) in r.iter_mut().zip(q) {
        *rv += qv;
    }
    let (gain, bias) = w.layout().ln[round];
    let (q_next, ln) = layer_norm(&r, &p[gain..gain + h], &p[bias..bias + h]);
    (
        q_next,
        RoundCache {
            q_in: q.to_vec(),
            msg,
            msg_max,
            xu,
            upd,
            ln,
        },
    )
}

/// Readout: invariant statistics, global summary, action logits and value.
pub fn readout<T: Scalar>(
    w: &PolicyWeights<T>,
    x: &Inputs<T>,
    q: &[T],
) -> (BatchOutput<T>, ReadoutCache<T>) {
    let h = w.h();
    let n = x.n;
    let batch = x.batch;
    let p = w.params();
    let layout = w.layout();
    let nf = T::from_f64(n as f64);
    let eps_sqrt = T::from_f64(STD_EPS.sqrt());

    let d_s = 3 * h + CBAR;
    let mut s = vec![T::zero(); batch * d_s];
    let mut q_mean = vec![T::zero(); batch * h];
    let mut q_max = vec![0u32; batch * h];
    let mut q_sigma = vec![T::zero(); batch * h];
    for b in 0..batch {
        let out = &mut s[b * d_s..(b + 1) * d_s];
        for c in 0..h {
            let mut sum = T::zero();
            let mut best = T::neg_infinity();
            let mut arg = 0u32;
            for i in 0..n {
                let v = q[(b * n + i) * h + c];
                sum += v;
                if v > best {
                    best = v;
                    arg = i as u32;
                }
            }
            let mean = sum / nf;
            let var = (0..n)
                .map(|i| {
                    let d = q[(b * n + i) * h + c] - mean;
                    d * d
                })
                .fold(T::zero(), |a, v| a + v)
                / nf;
            let sigma = (var + T::from_f64(STD_EPS)).sqrt();
            out[c] = mean;
            out[h + c] = best;
            out[2 * h + c] = sigma - eps_sqrt;
            q_mean[b * h + c] = mean;
            q_max[b * h + c] = arg;
            q_sigma[b * h + c] = sigma;
        }
        // mean d, row, col, offrow, offcol, rank-1 diag, rank-2 diag
        let picks = [0usize, 1, 2, 7, 8, 9, 10];
        for (slot, &f) in picks.iter().enumerate() {
            let sum = (0..n)
                .map(|i| x.eta[(b * n + i) * ETA + f])
                .fold(T::zero(), |a, v| a + v);
            out[3 * h + slot] = sum / nf;
        }
    }

    let (g, global) = mlp_forward(&layout.global, p, &s, batch);
    let (values, value) = mlp_forward(&layout.value, p, &s, batch);

    let d_l = 3 * h + ETA + 2;
    let local_rows = batch * n * 2;
    let mut xl = vec![T::zero(); local_rows * d_l];
    for b in 0..batch {
        for i in 0..n {
            let node = b * n + i;
            let diag = x.edge(b, i, i);
            for t in 0..2 {
                let row = &mut xl[(node * 2 + t) * d_l..(node * 2 + t + 1) * d_l];
                row[..h].copy_from_slice(&q[node * h..(node + 1) * h]);
                row[h..2 * h].copy_from_slice(&x.e[diag * h..(diag + 1) * h]);
                row[2 * h..3 * h].copy_from_slice(&g[b * h..(b + 1) * h]);
                row[3 * h..3 * h + ETA].copy_from_slice(&x.eta[node * ETA..(node + 1) * ETA]);
                row[3 * h + ETA + t] = T::one();
            }
        }
    }
    let (local_out, local) = mlp_forward(&layout.local, p, &xl, local_rows);

    let pairs = n * (n - 1) / 2;
    let d_c = 6 * h;
    let mut xc = vec![T::zero(); batch * pairs * d_c];
    let mut k = 0;
    for b in 0..batch {
        for i in 0..n {
            for j in i + 1..n {
                let row = &mut xc[k * d_c..(k + 1) * d_c];
                cz_features(
                    &q[(b * n + i) * h..(b * n + i + 1) * h],
                    &q[(b * n + j) * h..(b * n + j + 1) * h],
                    &x.e[x.edge(b, i, j) * h..(x.edge(b, i, j) + 1) * h],
                    &x.e[x.edge(b, j, i) * h..(x.edge(b, j, i) + 1) * h],
                    &g[b * h..(b + 1) * h],
                    row,
                );
                k += 1;
            }
        }
    }
    let (cz_out, cz) = mlp_forward(&layout.cz, p, &xc, batch * pairs);

    let a = num_actions(n);
    let mut logits = vec![T::zero(); batch * a];
    for b in 0..batch {
        let row = &mut logits[b * a..(b + 1) * a];
        for i in 0..n {
            row[i] = local_out[(b * n + i) * 2];
            row[n + i] = local_out[(b * n + i) * 2 + 1];
        }
        row[2 * n..].copy_from_slice(&cz_out[b * pairs..(b + 1) * pairs]);
    }
    (
        BatchOutput {
            batch,
            num_actions: a,
            logits,
            values,
        },
        ReadoutCache {
            q: q.to_vec(),
            s,
            q_mean,
            q_max,
            q_sigma,
            global,
            value,
            xl,
            local,
            xc,
            cz,
        },
    )
}

/// Symmetric pair context `(qi + qj, qi * qj, |qi - qj|, eij + eji, eij * eji, g)`.
pub fn cz_features<T: Scalar>(qi: &[T], qj: &[T], eij: &[T], eji: &[T], g: &[T], out: &mut [T]) {
    let h = qi.len();
    for c in 0..h {
        out[c] = qi[c] + qj[c];
        out[h + c] = qi[c] * qj[c];
        out[2 * h + c] = (qi[c] - qj[c]).abs();
        out[3 * h + c] = eij[c] + eji[c];
        out[4 * h + c] = eij[c] * eji[c];
    }
    out[5 * h..6 * h].copy_from_slice(g);
}

/// CZ logit for one pair, from the same head the batched readout uses.
pub fn cz_logit<T: Scalar>(w: &PolicyWeights<T>, qi: &[T], qj: &[T], eij: &[T], eji: &[T], g: &[T]) -> T {
    let mut xc = vec![T::zero(); 6 * w.h()];
    cz_features(qi, qj, eij, eji, g, &mut xc);
    mlp_forward(&w.layout().cz, w.params(), &xc, 1).0[0]
}

/// Forward pass over a batch of same-size tableaus, keeping what the
/// backward pass needs.
pub fn forward_train<T: Scalar>(
    w: &PolicyWeights<T>,
    ts: &[&Tableau],
) -> Result<(BatchOutput<T>, ForwardCache<T>)> {
    let inputs = Inputs::from_tableaus(w, ts)?;
    check_finite(&inputs.e, "embed")?;
    let (mut q, agg) = aggregate(w, &inputs);
    check_finite(&q, "aggregate")?;
    let (pa, pb) = edge_projections(w, &inputs);
    let mut rounds = Vec::with_capacity(w.rounds());
    for k in 0..w.rounds() {
        let (next, cache) = message_round(w, k, &inputs, &q, &pa, &pb);
        check_finite(&next, "message passing")?;
        rounds.push(cache);
        q = next;
    }
    let (out, readout) = readout(w, &inputs, &q);
    check_finite(&out.logits, "readout")?;
    check_finite(&out.values, "readout")?;
    Ok((
        out,
        ForwardCache {
            inputs,
            agg,
            rounds,
            readout,
        },
    ))
}

pub fn forward_batch<T: Scalar>(w: &PolicyWeights<T>, ts: &[&Tableau]) -> Result<BatchOutput<T>> {
    forward_train(w, ts).map(|(out, _)| out)
}

pub fn forward<T: Scalar>(w: &PolicyWeights<T>, t: &Tableau) -> Result<PolicyOutput<T>> {
    Ok(forward_batch(w, &[t])?.get(0))
}

/// Accumulates into `grad` the gradient of `sum(dlogits * logits) +
/// sum(dvalues * values)` with respect to every parameter.
pub fn backward<T: Scalar>(
    w: &PolicyWeights<T>,
    cache: &ForwardCache<T>,
    dlogits: &[T],
    dvalues: &[T],
    grad: &mut [T],
) {
    let h = w.h();
    let p = w.params();
    let layout = w.layout();
    let x = &cache.inputs;
    let n = x.n;
    let batch = x.batch;
    let nodes = batch * n;
    let edges = nodes * n;
    let a = num_actions(n);
    assert_eq!(dlogits.len(), batch * a);
    assert_eq!(dvalues.len(), batch);
    assert_eq!(grad.len(), p.len());
    let rc = &cache.readout;

    let mut dq = vec![T::zero(); nodes * h];
    let mut de = vec![T::zero(); edges * h];
    let mut dg = vec![T::zero(); batch * h];

    // value head
    let mut ds = mlp_backward(&layout.value, p, grad, &rc.value, &rc.s, dvalues);

    // one-qubit heads
    let mut dlocal = vec![T::zero(); nodes * 2];
    for b in 0..batch {
        for i in 0..n {
            dlocal[(b * n + i) * 2] = dlogits[b * a + i];
            dlocal[(b * n + i) * 2 + 1] = dlogits[b * a + n + i];
        }
    }
    let d_l = 3 * h + ETA + 2;
    let dxl = mlp_backward(&layout.local, p, grad, &rc.local, &rc.xl, &dlocal);
    for b in 0..batch {
        for i in 0..n {
            let node = b * n + i;
            let diag = x.edge(b, i, i);
            for t in 0..2 {
                let row = &dxl[(node * 2 + t) * d_l..(node * 2 + t + 1) * d_l];
                for c in 0..h {
                    dq[node * h + c] += row[c];
                    de[diag * h + c] += row[h + c];
                    dg[b * h + c] += row[2 * h + c];
                }
            }
        }
    }

    // CZ head
    let pairs = n * (n - 1) / 2;
    if pairs > 0 {
        let mut dcz = vec![T::zero(); batch * pairs];
        for b in 0..batch {
            dcz[b * pairs..(b + 1) * pairs].copy_from_slice(&dlogits[b * a + 2 * n..(b + 1) * a]);
        }
        let d_c = 6 * h;
        let dxc = mlp_backward(&layout.cz, p, grad, &rc.cz, &rc.xc, &dcz);
        let q = &rc.q;
        let mut k = 0;
        for b in 0..batch {
            for i in 0..n {
                for j in i + 1..n {
                    let row = &dxc[k * d_c..(k + 1) * d_c];
                    let (ni, nj) = (b * n + i, b * n + j);
                    let (ij, ji) = (x.edge(b, i, j), x.edge(b, j, i));
                    for c in 0..h {
                        let qi = q[ni * h + c];
                        let qj = q[nj * h + c];
                        let diff = qi - qj;
                        let sgn = if diff > T::zero() {
                            T::one()
                        } else if diff < T::zero() {
                            -T::one()
                        } else {
                            T::zero()
                        };
                        dq[ni * h + c] += row[c] + row[h + c] * qj + row[2 * h + c] * sgn;
                        dq[nj * h + c] += row[c] + row[h + c] * qi - row[2 * h + c] * sgn;
                        let eij = x.e[ij * h + c];
                        let eji = x.e[ji * h + c];
                        de[ij * h + c] += row[3 * h + c] + row[4 * h + c] * eji;
                        de[ji * h + c] += row[3 * h + c] + row[4 * h + c] * eij;
                        dg[b * h + c] += row[5 * h + c];
                    }
                    k += 1;
                }
            }
        }
    }

    // global summary
    let ds_g = mlp_backward(&layout.global, p, grad, &rc.global, &rc.s, &dg);
    for (d, v) in ds.iter_mut().zip(ds_g) {
        *d += v;
    }

    // invariant statistics back to the final tokens
    let d_s = 3 * h + CBAR;
    let nf = T::from_f64(n as f64);
    for b in 0..batch {
        let row = &ds[b * d_s..(b + 1) * d_s];
        for c in 0..h {
            let mean = rc.q_mean[b * h + c];
            let sigma = rc.q_sigma[b * h + c];
            for i in 0..n {
                let node = b * n + i;
                let qi = rc.q[node * h + c];
                dq[node * h + c] += row[c] / nf + row[2 * h + c] * (qi - mean) / (nf * sigma);
            }
            let arg = rc.q_max[b * h + c] as usize;
            dq[(b * n + arg) * h + c] += row[h + c];
        }
    }

    // message rounds, last to first
    let msg = layout.msg;
    let hid = msg.d_hid;
    let w1 = msg.w1(p);
    let inv_n = T::one() / nf;
    let mut dpa = vec![T::zero(); edges * hid];
    let mut dpb = vec![T::zero(); edges * hid];
    let d_upd = 3 * h + ETA1;
    for k in (0..w.rounds()).rev() {
        let round = &cache.rounds[k];
        let (gain, bias) = layout.ln[k];
        let (dgain, dbias) = {
            let (lo, hi) = grad.split_at_mut(bias);
            (&mut lo[gain..gain + h], &mut hi[..h])
        };
        let dr = layer_norm_backward(&round.ln, &p[gain..gain + h], dgain, dbias, &dq);
        let mut dq_in = dr.clone();
        let dxu = mlp_backward(&layout.upd, p, grad, &round.upd, &round.xu, &dr);
        let mut dm = vec![T::zero(); edges * h];
        for node in 0..nodes {
            let row = &dxu[node * d_upd..(node + 1) * d_upd];
            for c in 0..h {
                dq_in[node * h + c] += row[c];
                let dmean = row[h + c] * inv_n;
                for j in 0..n {
                    dm[(node * n + j) * h + c] += dmean;
                }
                let arg = round.msg_max[node * h + c] as usize;
                dm[(node * n + arg) * h + c] += row[2 * h + c];
            }
        }
        let dpre = mlp_back_to_pre(&msg, p, grad, &round.msg, &dm);

        let mut dqa = vec![T::zero(); nodes * hid];
        let mut dqb = vec![T::zero(); nodes * hid];
        let mut dind = vec![T::zero(); hid];
        for b in 0..batch {
            for i in 0..n {
                for j in 0..n {
                    let ij = x.edge(b, i, j);
                    let ji = x.edge(b, j, i);
                    let row = &dpre[ij * hid..(ij + 1) * hid];
                    for c in 0..hid {
                        let v = row[c];
                        dqa[(b * n + i) * hid + c] += v;
                        dqb[(b * n + j) * hid + c] += v;
                        dpa[ij * hid + c] += v;
                        dpb[ji * hid + c] += v;
                        if i != j {
                            dind[c] += v;
                        }
                    }
                }
            }
        }
        let gw1 = &mut grad[msg.w1..msg.w1 + msg.d_in * hid];
        T::gemm(h, nodes, hid, &round.q_in, true, &dqa, false, T::one(), &mut gw1[..h * hid]);
        T::gemm(h, nodes, hid, &round.q_in, true, &dqb, false, T::one(), &mut gw1[h * hid..2 * h * hid]);
        for (gv, dv) in gw1[4 * h * hid..(4 * h + 1) * hid].iter_mut().zip(&dind) {
            *gv += *dv;
        }
        T::gemm(nodes, hid, h, &dqa, false, &w1[..h * hid], true, T::one(), &mut dq_in);
        T::gemm(nodes, hid, h, &dqb, false, &w1[h * hid..2 * h * hid], true, T::one(), &mut dq_in);
        dq = dq_in;
    }
    if w.rounds() > 0 {
        let gw1 = &mut grad[msg.w1..msg.w1 + msg.d_in * hid];
        T::gemm(h, edges, hid, &x.e, true, &dpa, false, T::one(), &mut gw1[2 * h * hid..3 * h * hid]);
        T::gemm(h, edges, hid, &x.e, true, &dpb, false, T::one(), &mut gw1[3 * h * hid..4 * h * hid]);
        T::gemm(edges, hid, h, &dpa, false, &w1[2 * h * hid..3 * h * hid], true, T::one(), &mut de);
        T::gemm(edges, hid, h, &dpb, false, &w1[3 * h * hid..4 * h * hid], true, T::one(), &mut de);
    }

    // aggregation
    let d_in = 5 * h + ETA;
    let dx0 = mlp_backward(&layout.node, p, grad, &cache.agg.node, &cache.agg.x0, &dq);
    for b in 0..batch {
        for i in 0..n {
            let node = b * n + i;
            let row = &dx0[node * d_in..(node + 1) * d_in];
            for c in 0..h {
                let dr_mean = row[c] * inv_n;
                let dc_mean = row[2 * h + c] * inv_n;
                for j in 0..n {
                    de[x.edge(b, i, j) * h + c] += dr_mean;
                    de[x.edge(b, j, i) * h + c] += dc_mean;
                }
                let rj = cache.agg.row_max[node * h + c] as usize;
                let cj = cache.agg.col_max[node * h + c] as usize;
                de[x.edge(b, i, rj) * h + c] += row[h + c];
                de[x.edge(b, cj, i) * h + c] += row[3 * h + c];
                de[x.edge(b, i, i) * h + c] += row[4 * h + c];
            }
        }
    }

    // embedding table
    let embed = layout.embed;
    for (edge, &key) in x.keys.iter().enumerate() {
        let dst = &mut grad[embed + key as usize * h..embed + (key as usize + 1) * h];
        for (g, &d) in dst.iter_mut().zip(&de[edge * h..(edge + 1) * h]) {
            *g += d;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::targets::{random_walk_target, uniform_target, Difficulty};
    use rand::seq::SliceRandom;

    fn weights(h: usize, rounds: usize, seed: u64) -> PolicyWeights<f32> {
        PolicyWeights::init(h, rounds, &mut rng::from_seed(seed))
    }

    #[test]
    fn output_shapes() {
        let w = weights(8, 2, 0);
        for n in 1..=5 {
            let out = forward(&w, &Tableau::identity(n)).unwrap();
            assert_eq!(out.logits.len(), num_actions(n));
            assert!(out.value.is_finite());
        }
    }

    #[test]
    fn identity_tokens_are_equal() {
        let w = weights(8, 1, 1);
        let t = Tableau::identity(4);
        let x = Inputs::from_tableaus(&w, &[&t]).unwrap();
        let (q0, _) = aggregate(&w, &x);
        for i in 1..4 {
            for c in 0..8 {
                assert!((q0[c] - q0[i * 8 + c]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn pooling_matches_naive_loops() {
        let w = weights(6, 1, 2);
        let t = uniform_target(4, &mut rng::from_seed(3));
        let x = Inputs::from_tableaus(&w, &[&t]).unwrap();
        let (_, cache) = aggregate(&w, &x);
        let h = 6;
        let d_in = 5 * h + ETA;
        for i in 0..4 {
            for c in 0..h {
                let row: Vec<f32> = (0..4).map(|j| x.e[(i * 4 + j) * h + c]).collect();
                let col: Vec<f32> = (0..4).map(|j| x.e[(j * 4 + i) * h + c]).collect();
                let got = &cache.x0[i * d_in..(i + 1) * d_in];
                let mean = |v: &[f32]| v.iter().sum::<f32>() / v.len() as f32;
                let max = |v: &[f32]| v.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
                assert!((got[c] - mean(&row)).abs() < 1e-6);
                assert_eq!(got[h + c], max(&row));
                assert!((got[2 * h + c] - mean(&col)).abs() < 1e-6);
                assert_eq!(got[3 * h + c], max(&col));
                assert_eq!(got[4 * h + c], x.e[(i * 4 + i) * h + c]);
            }
        }
    }

    #[test]
    fn message_round_is_equivariant() {
        let w = weights(8, 1, 4);
        let mut r = rng::from_seed(5);
        for _ in 0..20 {
            let t = uniform_target(4, &mut r);
            let mut sigma: Vec<usize> = (0..4).collect();
            sigma.shuffle(&mut r);
            let pt = t.permute(&sigma).unwrap();
            let run = |t: &Tableau| {
                let x = Inputs::from_tableaus(&w, &[t]).unwrap();
                let (q0, _) = aggregate(&w, &x);
                let (pa, pb) = edge_projections(&w, &x);
                message_round(&w, 0, &x, &q0, &pa, &pb).0
            };
            let a = run(&t);
            let b = run(&pt);
            for i in 0..4 {
                for c in 0..8 {
                    assert!((a[i * 8 + c] - b[sigma[i] * 8 + c]).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn single_qubit_round_uses_self_message() {
        let w = weights(8, 1, 6);
        let t = uniform_target(1, &mut rng::from_seed(7));
        let x = Inputs::from_tableaus(&w, &[&t]).unwrap();
        let (q0, _) = aggregate(&w, &x);
        let (pa, pb) = edge_projections(&w, &x);
        let (_, cache) = message_round(&w, 0, &x, &q0, &pa, &pb);
        // mean and max over one message coincide
        assert_eq!(&cache.xu[8..16], &cache.xu[16..24]);
        assert_eq!(forward(&w, &t).unwrap().logits.len(), 2);
    }

    #[test]
    fn layer_norm_output_statistics() {
        let w = weights(16, 1, 8);
        let t = uniform_target(3, &mut rng::from_seed(9));
        let x = Inputs::from_tableaus(&w, &[&t]).unwrap();
        let (q0, _) = aggregate(&w, &x);
        let (pa, pb) = edge_projections(&w, &x);
        let (q1, cache) = message_round(&w, 0, &x, &q0, &pa, &pb);
        for i in 0..3 {
            let row = &q1[i * 16..(i + 1) * 16];
            let mean = row.iter().sum::<f32>() / 16.0;
            assert!(mean.abs() < 1e-5);
            let xh = &cache.ln.xhat[i * 16..(i + 1) * 16];
            let var = xh.iter().map(|v| v * v).sum::<f32>() / 16.0;
            // the epsilon pulls the normalized variance slightly below one
            assert!(var > 0.95 && var <= 1.0 + 1e-5, "{var}");
        }
    }

    #[test]
    fn cz_head_is_symmetric() {
        let w = weights(8, 1, 10);
        let mut r = rng::from_seed(11);
        use rand::Rng;
        let v = |r: &mut crate::rng::SynthRng| (0..8).map(|_| r.random_range(-1.0f32..1.0)).collect::<Vec<_>>();
        for _ in 0..50 {
            let (qi, qj, eij, eji, g) = (v(&mut r), v(&mut r), v(&mut r), v(&mut r), v(&mut r));
            let a = cz_logit(&w, &qi, &qj, &eij, &eji, &g);
            let b = cz_logit(&w, &qj, &qi, &eji, &eij, &g);
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn batched_equals_single() {
        let w = weights(8, 2, 12);
        let mut r = rng::from_seed(13);
        let ts: Vec<Tableau> = (0..7)
            .map(|_| random_walk_target(3, Difficulty::new(9.0).unwrap(), &mut r).0)
            .collect();
        let refs: Vec<&Tableau> = ts.iter().collect();
        let batch = forward_batch(&w, &refs).unwrap();
        for (b, t) in ts.iter().enumerate() {
            let single = forward(&w, t).unwrap();
            for (x, y) in single.logits.iter().zip(batch.logits_of(b)) {
                assert!((x - y).abs() < 1e-6);
            }
            assert!((single.value - batch.values[b]).abs() < 1e-6);
        }
        assert!(forward_batch(&w, &[&Tableau::identity(2), &Tableau::identity(3)]).is_err());
    }

    #[test]
    fn non_finite_weights_report_stage() {
        let mut w = weights(8, 1, 14);
        let off = w.layout().embed;
        w.params_mut()[off] = f32::NAN;
        let err = forward(&w, &Tableau::identity(2)).unwrap_err();
        assert!(matches!(err, Error::Numeric { stage: "embed" }));
    }

    fn loss(w: &PolicyWeights<f64>, ts: &[&Tableau], cl: &[f64], cv: &[f64]) -> f64 {
        let out = forward_batch(w, ts).unwrap();
        out.logits.iter().zip(cl).map(|(a, b)| a * b).sum::<f64>()
            + out.values.iter().zip(cv).map(|(a, b)| a * b).sum::<f64>()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        use rand::Rng;
        let w32 = weights(8, 2, 17);
        let mut w: PolicyWeights<f64> = w32.cast();
        let mut r = rng::from_seed(18);
        // break ties so max pooling is differentiable at the sample point
        for v in w.params_mut() {
            *v += r.random_range(-1e-3..1e-3);
        }
        let ts: Vec<Tableau> = (0..2)
            .map(|_| loop {
                let t = uniform_target(3, &mut r);
                if !t.is_identity() {
                    break t;
                }
            })
            .collect();
        let refs: Vec<&Tableau> = ts.iter().collect();
        let a = num_actions(3);
        let cl: Vec<f64> = (0..2 * a).map(|_| r.random_range(-1.0..1.0)).collect();
        let cv: Vec<f64> = (0..2).map(|_| r.random_range(-1.0..1.0)).collect();
        let (_, cache) = forward_train(&w, &refs).unwrap();
        let mut grad = vec![0.0; w.num_params()];
        backward(&w, &cache, &cl, &cv, &mut grad);

        let eps = 1e-6;
        let layout = w.layout().clone();
        for spec in &layout.tensors {
            let range = spec.range();
            let mut num = Vec::new();
            let mut ana = Vec::new();
            for k in range.clone().step_by((spec.len() / 24).max(1)) {
                let orig = w.params()[k];
                w.params_mut()[k] = orig + eps;
                let up = loss(&w, &refs, &cl, &cv);
                w.params_mut()[k] = orig - eps;
                let down = loss(&w, &refs, &cl, &cv);
                w.params_mut()[k] = orig;
                num.push((up - down) / (2.0 * eps));
                ana.push(grad[k]);
            }
            let diff: f64 = num.iter().zip(&ana).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            let scale: f64 = num.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-8);
            assert!(diff / scale < 1e-3 || diff < 1e-7, "{}: {diff} vs {scale}", spec.name);
        }
    }

    #[test]
    fn deterministic() {
        let w = weights(8, 2, 15);
        let t = uniform_target(5, &mut rng::from_seed(16));
        assert_eq!(forward(&w, &t).unwrap(), forward(&w, &t).unwrap());
    }
}
