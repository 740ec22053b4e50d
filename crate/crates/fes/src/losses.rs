//! The six training loss terms and their closed-form gradients with respect
//! to the model outputs. Pseudo-labels are constants: no gradient ever flows
//! through the label store.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::FesError;
use crate::gim::PseudoLabelStore;
use crate::types::ClassId;

const LOG_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Weight on the temporal smoothness term (lambda_1).
    pub lambda_smooth: f64,
    /// Weight on the L1 sparsity term (lambda_2).
    pub lambda_norm: f64,
    /// Weight on the intensity-aware contrastive term (lambda_3).
    pub lambda_iac: f64,
    /// Contrastive temperature.
    pub tau: f64,
    /// Focal loss positive weight.
    pub alpha: f64,
    /// Focal loss focusing exponent.
    pub gamma: f64,
    /// Use the textbook symmetric focal form on negatives instead of the
    /// s*log(1-s) modulating factor.
    pub symmetric_focal: bool,
}

impl Default for LossWeights {
    /// SAMM-LV weights: lambda = (0.1, 0.3, 2.0e-5).
    fn default() -> Self {
        LossWeights {
            lambda_smooth: 0.1,
            lambda_norm: 0.3,
            lambda_iac: 2.0e-5,
            tau: 0.1,
            alpha: 0.75,
            gamma: 2.0,
            symmetric_focal: false,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), FesError> {
        if self.tau <= 0.0 {
            return Err(FesError::InvalidConfig("loss.tau must be > 0".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(FesError::InvalidConfig("loss.alpha must be in (0,1)".into()));
        }
        if self.gamma < 0.0 {
            return Err(FesError::InvalidConfig("loss.gamma must be >= 0".into()));
        }
        if self.lambda_smooth < 0.0 || self.lambda_norm < 0.0 || self.lambda_iac < 0.0 {
            return Err(FesError::InvalidConfig("loss weights must be >= 0".into()));
        }
        Ok(())
    }
}

/// MSE between intensity scores and soft pseudo-labels over all labeled
/// frames. Neutral frames target 0; frames labeled by both classes average
/// the two squared errors.
pub fn loss_gim(a: &[f64], store: &PseudoLabelStore) -> Result<(f64, Vec<f64>), FesError> {
    let n = store.n_exp + store.n_neut;
    if n == 0 {
        return Err(FesError::InvalidData("loss_gim: empty pseudo-label set".into()));
    }
    let norm = 1.0 / n as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; a.len()];
    for t in 0..store.t_len {
        let labels = store.labels_at(t);
        if !labels.is_empty() {
            let k = labels.len() as f64;
            for (_, target, _) in &labels {
                let err = a[t] - target;
                value += err * err / k * norm;
                grad[t] += 2.0 * err / k * norm;
            }
        } else if store.neutral[t] {
            value += a[t] * a[t] * norm;
            grad[t] += 2.0 * a[t] * norm;
        }
    }
    Ok((value, grad))
}

/// L1 sparsity on intensity scores.
pub fn loss_norm(a: &[f64]) -> (f64, Vec<f64>) {
    let value = a.iter().map(|v| v.abs()).sum();
    let grad = a.iter().map(|v| if *v != 0.0 { v.signum() } else { 0.0 }).collect();
    (value, grad)
}

/// Mean negative intensity over reliable pseudo-expression frames
/// (soft label > 0.5 in any class). Empty set contributes 0.
pub fn loss_reward(a: &[f64], store: &PseudoLabelStore) -> (f64, Vec<f64>) {
    let reliable: Vec<usize> = (0..store.t_len)
        .filter(|&t| store.labels_at(t).iter().any(|&(_, l, _)| l > 0.5))
        .collect();
    let mut grad = vec![0.0; a.len()];
    if reliable.is_empty() {
        return (0.0, grad);
    }
    let norm = 1.0 / reliable.len() as f64;
    let mut value = 0.0;
    for &t in &reliable {
        value -= a[t].abs() * norm;
        grad[t] = -a[t].signum() * norm;
    }
    (value, grad)
}

/// Mean absolute difference between consecutive intensity scores.
pub fn loss_smooth(a: &[f64]) -> (f64, Vec<f64>) {
    let t_len = a.len();
    let mut grad = vec![0.0; t_len];
    if t_len < 2 {
        return (0.0, grad);
    }
    let norm = 1.0 / (t_len - 1) as f64;
    let mut value = 0.0;
    for t in 0..t_len - 1 {
        let d = a[t + 1] - a[t];
        value += d.abs() * norm;
        let sign = if d != 0.0 { d.signum() } else { 0.0 };
        grad[t + 1] += sign * norm;
        grad[t] -= sign * norm;
    }
    (value, grad)
}

/// Pseudo-class of a contrastive sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PseudoClass {
    Expr(ClassId),
    Neutral,
}

/// Intensity-aware pair weight: 1 - |da| for same pseudo-class, |da| for
/// different pseudo-classes.
pub fn iac_weight(same_class: bool, a_i: f64, a_j: f64) -> f64 {
    let gap = (a_i - a_j).abs();
    if same_class {
        1.0 - gap
    } else {
        gap
    }
}

/// Intensity-aware contrastive loss over reliable pseudo-expression frames
/// (label > 0.5) and pseudo-neutral frames. Embeddings are L2-normalized
/// inside the loss; gradients flow back through the normalization. Anchors
/// without a same-class partner are skipped.
pub fn loss_iac(
    f: &[Vec<f64>],
    store: &PseudoLabelStore,
    tau: f64,
) -> (f64, Vec<Vec<f64>>) {
    let t_len = store.t_len;
    let d = f.first().map_or(0, |r| r.len());
    let mut grad = vec![vec![0.0; d]; f.len()];

    // sample set: frame index, pseudo-class, pseudo-intensity
    let mut samples: Vec<(usize, PseudoClass, f64)> = Vec::new();
    for t in 0..t_len {
        let labels = store.labels_at(t);
        let reliable: Vec<&(ClassId, f64, bool)> =
            labels.iter().filter(|&&(_, l, _)| l > 0.5).collect();
        if let Some(best) = reliable.iter().max_by(|x, y| {
            x.1.partial_cmp(&y.1).unwrap().then(y.0.index().cmp(&x.0.index()))
        }) {
            samples.push((t, PseudoClass::Expr(best.0), best.1));
        } else if store.neutral[t] {
            samples.push((t, PseudoClass::Neutral, 0.0));
        }
    }
    let n = samples.len();
    if n < 2 {
        return (0.0, grad);
    }

    // normalized embeddings and norms
    let mut unit = Vec::with_capacity(n);
    let mut norms = Vec::with_capacity(n);
    for &(t, _, _) in &samples {
        let norm = f[t].iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        unit.push(f[t].iter().map(|v| v / norm).collect::<Vec<f64>>());
        norms.push(norm);
    }
    let dot = |i: usize, j: usize| unit[i].iter().zip(&unit[j]).map(|(a, b)| a * b).sum::<f64>();

    let mut value = 0.0;
    // gradient on the normalized embeddings, chained through normalization
    // at the end
    let mut g_unit = vec![vec![0.0; d]; n];

    for i in 0..n {
        let partners: Vec<usize> =
            (0..n).filter(|&q| q != i && samples[q].1 == samples[i].1).collect();
        if partners.is_empty() {
            continue;
        }
        // pair weights and logits against every other sample
        let mut w = vec![0.0; n];
        let mut z = vec![0.0; n];
        let mut z_max = f64::NEG_INFINITY;
        for e in 0..n {
            if e == i {
                continue;
            }
            w[e] = iac_weight(samples[e].1 == samples[i].1, samples[i].2, samples[e].2);
            z[e] = dot(i, e) / tau;
            if w[e] > 0.0 {
                z_max = z_max.max(z[e]);
            }
        }
        let denom: f64 =
            (0..n).filter(|&e| e != i && w[e] > 0.0).map(|e| w[e] * (z[e] - z_max).exp()).sum();
        let log_denom = z_max + denom.ln();

        let inv_q = 1.0 / partners.len() as f64;
        for &q in &partners {
            value -= inv_q * (w[q].max(LOG_EPS).ln() + z[q] - log_denom);
        }

        // d value / d z: softmax term for every e, minus 1/|Q| on partners
        for e in 0..n {
            if e == i {
                continue;
            }
            let mut coeff = if w[e] > 0.0 { w[e] * (z[e] - z_max).exp() / denom } else { 0.0 };
            if partners.contains(&e) {
                coeff -= inv_q;
            }
            if coeff == 0.0 {
                continue;
            }
            let c = coeff / tau;
            for k in 0..d {
                g_unit[i][k] += c * unit[e][k];
                g_unit[e][k] += c * unit[i][k];
            }
        }
    }

    // chain through u = f / |f|: df = (g - (g.u) u) / |f|
    for (idx, &(t, _, _)) in samples.iter().enumerate() {
        let g = &g_unit[idx];
        let proj: f64 = g.iter().zip(&unit[idx]).map(|(a, b)| a * b).sum();
        for k in 0..d {
            grad[t][k] += (g[k] - proj * unit[idx][k]) / norms[idx];
        }
    }
    (value, grad)
}

/// Positive/negative frame index sets per class for apex classification.
#[derive(Debug, Clone, PartialEq)]
pub struct ApexSampleSets {
    pub pos: [Vec<usize>; ClassId::COUNT],
    pub neg: [Vec<usize>; ClassId::COUNT],
}

/// Positives: apex frames (label exactly 1) expanded by +-m_c. Negatives:
/// pseudo-neutral frames and reliable expression frames of any class,
/// expanded by +-m_neut, minus that class's positives.
pub fn mine_apex_samples(
    store: &PseudoLabelStore,
    m_c: [usize; ClassId::COUNT],
    m_neut: usize,
) -> ApexSampleSets {
    let t_len = store.t_len;
    let expand = |seeds: &BTreeSet<usize>, half: usize| -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        for &s in seeds {
            let lo = s.saturating_sub(half);
            let hi = (s + half).min(t_len.saturating_sub(1));
            out.extend(lo..=hi);
        }
        out
    };

    let mut pos_sets: Vec<BTreeSet<usize>> = Vec::new();
    for c in 0..ClassId::COUNT {
        let seeds: BTreeSet<usize> = (0..t_len).filter(|&t| store.apex[c][t]).collect();
        pos_sets.push(expand(&seeds, m_c[c]));
    }

    let mut neg_seeds: BTreeSet<usize> = (0..t_len).filter(|&t| store.neutral[t]).collect();
    neg_seeds.extend(
        (0..t_len).filter(|&t| store.labels_at(t).iter().any(|&(_, l, _)| l > 0.5)),
    );
    let neg_expanded = expand(&neg_seeds, m_neut);

    let mut sets = ApexSampleSets { pos: [Vec::new(), Vec::new()], neg: [Vec::new(), Vec::new()] };
    for c in 0..ClassId::COUNT {
        sets.pos[c] = pos_sets[c].iter().copied().collect();
        sets.neg[c] = neg_expanded.difference(&pos_sets[c]).copied().collect();
    }
    sets
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(LOG_EPS, 1.0 - LOG_EPS)
}

/// Focal apex-classification loss, normalized per class then summed over
/// classes. The negative branch uses the asymmetric `s * log(1-s)`
/// modulating factor by default; `symmetric` switches to `s^gamma`.
pub fn loss_apex_focal(
    s: &[Vec<f64>],
    sets: &ApexSampleSets,
    alpha: f64,
    gamma: f64,
    symmetric: bool,
) -> (f64, Vec<Vec<f64>>) {
    let n_classes = s.first().map_or(ClassId::COUNT, |r| r.len());
    let mut value = 0.0;
    let mut grad = vec![vec![0.0; n_classes]; s.len()];
    for c in 0..n_classes {
        if !sets.pos[c].is_empty() {
            let norm = 1.0 / sets.pos[c].len() as f64;
            for &i in &sets.pos[c] {
                let p = clamp_prob(s[i][c]);
                value -= alpha * (1.0 - p).powf(gamma) * p.ln() * norm;
                let mut dv = -alpha * (1.0 - p).powf(gamma) / p;
                if gamma > 0.0 {
                    dv += alpha * gamma * (1.0 - p).powf(gamma - 1.0) * p.ln();
                }
                grad[i][c] += dv * norm;
            }
        }
        if !sets.neg[c].is_empty() {
            let norm = 1.0 / sets.neg[c].len() as f64;
            for &i in &sets.neg[c] {
                let p = clamp_prob(s[i][c]);
                if symmetric {
                    value -= (1.0 - alpha) * p.powf(gamma) * (1.0 - p).ln() * norm;
                    let mut dv = (1.0 - alpha) * p.powf(gamma) / (1.0 - p);
                    if gamma > 0.0 {
                        dv -= (1.0 - alpha) * gamma * p.powf(gamma - 1.0) * (1.0 - p).ln();
                    }
                    grad[i][c] += dv * norm;
                } else {
                    value -= (1.0 - alpha) * p * (1.0 - p).ln() * norm;
                    let dv = -(1.0 - alpha) * (1.0 - p).ln() + (1.0 - alpha) * p / (1.0 - p);
                    grad[i][c] += dv * norm;
                }
            }
        }
    }
    (value, grad)
}

/// Per-term loss values for one video, as logged to the training CSV.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub gim: f64,
    pub apex: f64,
    pub reward: f64,
    pub smooth: f64,
    pub norm: f64,
    pub iac: f64,
    pub total: f64,
}

/// Weighted total loss and the accumulated upstream gradients on (a, S, f).
/// Label-dependent terms are skipped when the store is empty (videos without
/// point annotations).
pub fn total_loss(
    a: &[f64],
    s: &[Vec<f64>],
    f: &[Vec<f64>],
    store: &PseudoLabelStore,
    sets: &ApexSampleSets,
    weights: &LossWeights,
) -> Result<(LossBreakdown, Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>), FesError> {
    let n_classes = s.first().map_or(ClassId::COUNT, |r| r.len());
    let mut da = vec![0.0; a.len()];
    let mut ds = vec![vec![0.0; n_classes]; s.len()];
    let mut df = vec![vec![0.0; f.first().map_or(0, |r| r.len())]; f.len()];
    let mut bd = LossBreakdown::default();

    let labeled = store.n_exp + store.n_neut > 0;
    if labeled {
        let (v, g) = loss_gim(a, store)?;
        bd.gim = v;
        for t in 0..a.len() {
            da[t] += g[t];
        }
        let (v, g) = loss_reward(a, store);
        bd.reward = v;
        for t in 0..a.len() {
            da[t] += g[t];
        }
        let (v, g) = loss_apex_focal(s, sets, weights.alpha, weights.gamma, weights.symmetric_focal);
        bd.apex = v;
        for t in 0..s.len() {
            for c in 0..n_classes {
                ds[t][c] += g[t][c];
            }
        }
        if weights.lambda_iac > 0.0 {
            let (v, g) = loss_iac(f, store, weights.tau);
            bd.iac = v;
            for t in 0..f.len() {
                for k in 0..df[t].len() {
                    df[t][k] += weights.lambda_iac * g[t][k];
                }
            }
        }
    }
    let (v, g) = loss_smooth(a);
    bd.smooth = v;
    for t in 0..a.len() {
        da[t] += weights.lambda_smooth * g[t];
    }
    // the sparsity term enters per frame: a raw sum would scale with T and
    // let video length set the balance against the length-normalized terms
    let norm_scale = weights.lambda_norm / a.len().max(1) as f64;
    let (v, g) = loss_norm(a);
    bd.norm = v / a.len().max(1) as f64;
    for t in 0..a.len() {
        da[t] += norm_scale * g[t];
    }

    bd.total = bd.gim
        + bd.apex
        + bd.reward
        + weights.lambda_smooth * bd.smooth
        + weights.lambda_norm * bd.norm
        + weights.lambda_iac * bd.iac;
    if !bd.total.is_finite() {
        return Err(FesError::Numeric(format!("non-finite total loss: {:?}", bd)));
    }
    Ok((bd, da, ds, df))
}
