//! Advantage estimation and the clipped policy-gradient update.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::policy::{backward, forward_train, PolicyWeights};
use crate::tableau::Tableau;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepKind {
    Continue,
    /// Reached the identity; nothing to bootstrap.
    Terminal,
    /// Cut by the step cap; bootstraps from the value of the state reached.
    Truncated,
}

/// Generalized advantage estimation over one environment's steps.
///
/// `next_values[t]` is the value of the state reached by step `t` (ignored for
/// terminal steps). Episodes never leak advantage across their boundary.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    next_values: &[f64],
    kinds: &[StepKind],
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let len = rewards.len();
    assert!(values.len() == len && next_values.len() == len && kinds.len() == len);
    let mut adv = vec![0.0; len];
    let mut carry = 0.0;
    for t in (0..len).rev() {
        let (bootstrap, cont) = match kinds[t] {
            StepKind::Continue => (next_values[t], 1.0),
            StepKind::Terminal => (0.0, 0.0),
            StepKind::Truncated => (next_values[t], 0.0),
        };
        let delta = rewards[t] + gamma * bootstrap - values[t];
        carry = delta + gamma * lambda * cont * carry;
        adv[t] = carry;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// Transitions from one rollout, all at the same qubit count.
#[derive(Clone, Debug, Default)]
pub struct Buffer {
    pub states: Vec<Tableau>,
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl Buffer {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PpoHyper {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub policy_clip: f64,
    pub value_clip: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f32>,
    v: Vec<f32>,
    t: u64,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-5,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f32], grad: &[f32], lr: f64) {
        self.t += 1;
        let b1 = self.beta1 as f32;
        let b2 = self.beta2 as f32;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let step = (lr * c2.sqrt() / c1) as f32;
        let eps = (self.eps * c2.sqrt()) as f32;
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= step * *m / (v.sqrt() + eps);
        }
    }
}

/// Log-softmax in f64.
pub fn log_softmax(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
    let lse = max + logits.iter().map(|&v| (v as f64 - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&v| v as f64 - lse).collect()
}

/// The clipped surrogate `min(r A, clip(r, 1-eps, 1+eps) A)`.
pub fn clipped_surrogate(ratio: f64, adv: f64, clip: f64) -> f64 {
    (ratio * adv).min(ratio.clamp(1.0 - clip, 1.0 + clip) * adv)
}

/// One sample's loss terms; `dvalue` and the logit gradient written by
/// [`sample_terms`] are already multiplied by `scale`.
struct SampleGrad {
    policy: f64,
    value: f64,
    entropy: f64,
    kl: f64,
    clipped: bool,
    dvalue: f64,
}

#[allow(clippy::too_many_arguments)]
fn sample_terms(
    logits: &[f32],
    value: f64,
    action: usize,
    old_log_prob: f64,
    old_value: f64,
    adv: f64,
    ret: f64,
    hp: &PpoHyper,
    dlogits: &mut [f32],
    scale: f64,
) -> SampleGrad {
    let logp = log_softmax(logits);
    let p: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
    let log_ratio = logp[action] - old_log_prob;
    let ratio = log_ratio.exp();
    let surrogate = clipped_surrogate(ratio, adv, hp.policy_clip);
    // the unclipped branch carries gradient whenever it is the minimum
    let active = ratio * adv <= ratio.clamp(1.0 - hp.policy_clip, 1.0 + hp.policy_clip) * adv;
    let clipped = (ratio - 1.0).abs() > hp.policy_clip;
    let entropy: f64 = -p.iter().zip(&logp).map(|(p, l)| p * l).sum::<f64>();
    for (k, d) in dlogits.iter_mut().enumerate() {
        let onehot = (k == action) as u8 as f64;
        let mut g = 0.0;
        if active {
            g -= adv * ratio * (onehot - p[k]);
        }
        g += hp.entropy_coef * p[k] * (logp[k] + entropy);
        *d = (g * scale) as f32;
    }

    let v_clipped = old_value + (value - old_value).clamp(-hp.value_clip, hp.value_clip);
    let lu = (value - ret).powi(2);
    let lc = (v_clipped - ret).powi(2);
    let dvalue = if lu >= lc {
        value - ret
    } else if (value - old_value).abs() < hp.value_clip {
        v_clipped - ret
    } else {
        0.0
    };
    SampleGrad {
        policy: -surrogate,
        value: 0.5 * lu.max(lc),
        entropy,
        kl: (ratio - 1.0) - log_ratio,
        clipped,
        dvalue: hp.value_coef * dvalue * scale,
    }
}

/// `epochs` passes of shuffled minibatches; advantages are normalized per
/// minibatch.
pub fn ppo_update<R: Rng + ?Sized>(
    w: &mut PolicyWeights<f32>,
    adam: &mut Adam,
    buf: &Buffer,
    hp: &PpoHyper,
    rng: &mut R,
) -> Result<LossStats> {
    let len = buf.len();
    if len == 0 {
        return Ok(LossStats::default());
    }
    let bs = hp.batch_size.min(len);
    let mut order: Vec<usize> = (0..len).collect();
    let mut stats = LossStats::default();
    let mut batches = 0usize;
    let mut grad = vec![0.0f32; w.num_params()];
    for _ in 0..hp.epochs {
        order.shuffle(rng);
        for idx in order.chunks(bs) {
            let states: Vec<&Tableau> = idx.iter().map(|&i| &buf.states[i]).collect();
            let (out, cache) = forward_train(w, &states)?;
            let a = out.num_actions;
            let m = idx.len() as f64;
            let mean = idx.iter().map(|&i| buf.advantages[i]).sum::<f64>() / m;
            let var = idx.iter().map(|&i| (buf.advantages[i] - mean).powi(2)).sum::<f64>() / m;
            let std = var.sqrt() + 1e-8;

            let mut dlogits = vec![0.0f32; idx.len() * a];
            let mut dvalues = vec![0.0f32; idx.len()];
            let mut batch = LossStats::default();
            for (b, &i) in idx.iter().enumerate() {
                let s = sample_terms(
                    out.logits_of(b),
                    out.values[b] as f64,
                    buf.actions[i],
                    buf.log_probs[i],
                    buf.values[i],
                    (buf.advantages[i] - mean) / std,
                    buf.returns[i],
                    hp,
                    &mut dlogits[b * a..(b + 1) * a],
                    1.0 / m,
                );
                dvalues[b] = s.dvalue as f32;
                batch.policy_loss += s.policy / m;
                batch.value_loss += s.value / m;
                batch.entropy += s.entropy / m;
                batch.approx_kl += s.kl / m;
                batch.clip_fraction += s.clipped as u8 as f64 / m;
            }
            let total = batch.policy_loss + hp.value_coef * batch.value_loss - hp.entropy_coef * batch.entropy;
            if !total.is_finite() {
                return Err(Error::Numeric { stage: "loss" });
            }
            grad.fill(0.0);
            backward(w, &cache, &dlogits, &dvalues, &mut grad);
            let norm = grad.iter().map(|&g| (g as f64).powi(2)).sum::<f64>().sqrt();
            if !norm.is_finite() {
                return Err(Error::Numeric { stage: "gradient" });
            }
            if hp.max_grad_norm > 0.0 && norm > hp.max_grad_norm {
                let k = (hp.max_grad_norm / norm) as f32;
                grad.iter_mut().for_each(|g| *g *= k);
            }
            adam.step(w.params_mut(), &grad, hp.learning_rate);
            stats.policy_loss += batch.policy_loss;
            stats.value_loss += batch.value_loss;
            stats.entropy += batch.entropy;
            stats.approx_kl += batch.approx_kl;
            stats.clip_fraction += batch.clip_fraction;
            batches += 1;
        }
    }
    let k = batches as f64;
    stats.policy_loss /= k;
    stats.value_loss /= k;
    stats.entropy /= k;
    stats.approx_kl /= k;
    stats.clip_fraction /= k;
    Ok(stats)
}
