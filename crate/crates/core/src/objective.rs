//! Similarity matrix with shuffled-negative rows and the composite training
//! loss, each with its exact gradient.
//!
//! The matrix is laid out as `(N + K) x N`: rows are texts (the `N` paired
//! texts first, then `K` shuffled negatives), columns are motions. Negatives
//! only ever appear in the motion-to-text softmax.

use ndarray::{s, Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityBlock {
    pub s: Array2<f64>,
    /// Origin sample of each negative row, indexed from row `N`.
    pub neg_origin: Vec<usize>,
}

impl SimilarityBlock {
    pub fn n_pairs(&self) -> usize {
        self.s.ncols()
    }

    pub fn n_negatives(&self) -> usize {
        self.s.nrows() - self.s.ncols()
    }
}

fn unit(v: &Array1<f64>, what: &str, i: usize) -> Result<(Array1<f64>, f64)> {
    let n = v.dot(v).sqrt();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::ZeroNorm(format!("{what} {i}")));
    }
    Ok((v / n, n))
}

/// Cosine similarity of every text (rows) against every motion (columns).
pub fn similarity_block(texts: &[Array1<f64>], motions: &[Array1<f64>], neg_origin: Vec<usize>) -> Result<SimilarityBlock> {
    let n = motions.len();
    if n == 0 {
        return Err(Error::EmptyInput("motion embeddings"));
    }
    if texts.len() < n || texts.len() - n != neg_origin.len() {
        return Err(Error::shape("text rows", n + neg_origin.len(), texts.len()));
    }
    let d = motions[0].len();
    if let Some(bad) = texts.iter().chain(motions).find(|v| v.len() != d) {
        return Err(Error::shape("embedding dim", d, bad.len()));
    }
    let t: Vec<Array1<f64>> = texts.iter().enumerate().map(|(i, v)| unit(v, "text", i).map(|x| x.0)).collect::<Result<_>>()?;
    let m: Vec<Array1<f64>> = motions.iter().enumerate().map(|(i, v)| unit(v, "motion", i).map(|x| x.0)).collect::<Result<_>>()?;
    let s = Array2::from_shape_fn((t.len(), n), |(i, j)| t[i].dot(&m[j]));
    Ok(SimilarityBlock { s, neg_origin })
}

/// Pulls `dL/dS` back to the raw (un-normalised) embeddings.
pub fn similarity_backward(
    texts: &[Array1<f64>],
    motions: &[Array1<f64>],
    ds: &Array2<f64>,
) -> Result<(Vec<Array1<f64>>, Vec<Array1<f64>>)> {
    let t: Vec<(Array1<f64>, f64)> = texts.iter().enumerate().map(|(i, v)| unit(v, "text", i)).collect::<Result<_>>()?;
    let m: Vec<(Array1<f64>, f64)> = motions.iter().enumerate().map(|(i, v)| unit(v, "motion", i)).collect::<Result<_>>()?;
    let d = motions[0].len();
    let through_norm = |(u, n): &(Array1<f64>, f64), du: Array1<f64>| {
        let proj = u.dot(&du);
        (&du - &(u * proj)) / *n
    };
    let dt = t
        .iter()
        .enumerate()
        .map(|(i, ti)| {
            let mut du = Array1::zeros(d);
            for (j, (mj, _)) in m.iter().enumerate() {
                du.scaled_add(ds[[i, j]], mj);
            }
            through_norm(ti, du)
        })
        .collect();
    let dm = m
        .iter()
        .enumerate()
        .map(|(j, mj)| {
            let mut du = Array1::zeros(d);
            for (i, (ti, _)) in t.iter().enumerate() {
                du.scaled_add(ds[[i, j]], ti);
            }
            through_norm(mj, du)
        })
        .collect();
    Ok((dt, dm))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveTerms {
    pub t2m: f64,
    pub m2t: f64,
    /// `d(t2m + m2t) / dS`.
    pub grad: Array2<f64>,
}

/// Softmax cross-entropy of `logits` at `target`, with the softmax itself.
fn log_softmax_at(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = -(logits[target] - max - sum.ln());
    (loss, exps.into_iter().map(|e| e / sum).collect())
}

/// Text-to-motion term over the `N` paired texts only; motion-to-text term
/// over all `N + K` texts.
pub fn contrastive_loss(s: &Array2<f64>, tau: f64) -> Result<ContrastiveTerms> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::config("temperature", "must be positive and finite"));
    }
    let (rows, n) = s.dim();
    if n == 0 || rows < n {
        return Err(Error::shape("similarity block", "(N + K) x N with N >= 1".to_string(), format!("{rows} x {n}")));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("similarity block".into()));
    }
    let scale = 1.0 / (n as f64 * tau);
    let mut grad = Array2::zeros((rows, n));
    let mut t2m = 0.0;
    for i in 0..n {
        let logits: Vec<f64> = (0..n).map(|j| s[[i, j]] / tau).collect();
        let (l, p) = log_softmax_at(&logits, i);
        t2m += l;
        for j in 0..n {
            grad[[i, j]] += scale * (p[j] - if i == j { 1.0 } else { 0.0 });
        }
    }
    let mut m2t = 0.0;
    for i in 0..n {
        let logits: Vec<f64> = (0..rows).map(|j| s[[j, i]] / tau).collect();
        let (l, p) = log_softmax_at(&logits, i);
        m2t += l;
        for j in 0..rows {
            grad[[j, i]] += scale * (p[j] - if i == j { 1.0 } else { 0.0 });
        }
    }
    Ok(ContrastiveTerms {
        t2m: t2m / n as f64,
        m2t: m2t / n as f64,
        grad,
    })
}

/// `0.5 * sum(exp(lv) + mu^2 - 1 - lv)` averaged over the items. Returns the
/// value and per-item gradients `(dmu, dlogvar)`.
pub fn kl_loss(stats: &[(&Array1<f64>, &Array1<f64>)]) -> Result<(f64, Vec<(Array1<f64>, Array1<f64>)>)> {
    if stats.is_empty() {
        return Err(Error::EmptyInput("variational stats"));
    }
    let n = stats.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(stats.len());
    for (mu, lv) in stats {
        if mu.len() != lv.len() {
            return Err(Error::shape("logvar", mu.len(), lv.len()));
        }
        total += 0.5 * mu.iter().zip(lv.iter()).map(|(&m, &l)| l.exp() + m * m - 1.0 - l).sum::<f64>();
        grads.push((mu.mapv(|m| m / n), lv.mapv(|l| 0.5 * (l.exp() - 1.0) / n)));
    }
    Ok((total / n, grads))
}

/// Element-mean squared error and its gradient w.r.t. `decoded`.
pub fn reconstruction_loss(decoded: &Array2<f64>, target: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
    if decoded.dim() != target.dim() {
        return Err(Error::shape("reconstruction", format!("{:?}", target.dim()), format!("{:?}", decoded.dim())));
    }
    let diff = decoded - target;
    let count = diff.len() as f64;
    let value = diff.iter().map(|d| d * d).sum::<f64>() / count;
    Ok((value, diff * (2.0 / count)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedLossKind {
    #[default]
    SmoothL1,
    Mse,
}

/// Mean over pairs of the coordinate-mean distance between paired latents.
pub fn embedding_similarity_loss(
    text: &[Array1<f64>],
    motion: &[Array1<f64>],
    kind: EmbedLossKind,
) -> Result<(f64, Vec<Array1<f64>>, Vec<Array1<f64>>)> {
    if text.len() != motion.len() {
        return Err(Error::shape("embedding pairs", text.len(), motion.len()));
    }
    if text.is_empty() {
        return Err(Error::EmptyInput("embedding pairs"));
    }
    let n = text.len() as f64;
    let mut total = 0.0;
    let mut dt = Vec::with_capacity(text.len());
    for (t, m) in text.iter().zip(motion) {
        if t.len() != m.len() {
            return Err(Error::shape("latent dim", t.len(), m.len()));
        }
        let d = t.len() as f64;
        let diff = t - m;
        let (v, g): (f64, Array1<f64>) = match kind {
            EmbedLossKind::SmoothL1 => (
                diff.iter().map(|&x| if x.abs() < 1.0 { 0.5 * x * x } else { x.abs() - 0.5 }).sum(),
                diff.mapv(|x| if x.abs() < 1.0 { x } else { x.signum() }),
            ),
            EmbedLossKind::Mse => (diff.iter().map(|x| x * x).sum(), diff.mapv(|x| 2.0 * x)),
        };
        total += v / d;
        dt.push(g / (d * n));
    }
    let dm = dt.iter().map(|g| -g).collect();
    Ok((total / n, dt, dm))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub reconstruction: f64,
    pub kl: f64,
    pub embedding: f64,
    pub contrastive: f64,
    pub temperature: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::for_flags(true, true)
    }
}

impl LossWeights {
    /// `(1, 1e-5, 1e-5, 0.1)` with reconstruction; without it the contrastive
    /// weight rises to 1 and the reconstruction term is dropped. The KL term
    /// only exists with variational heads.
    pub fn for_flags(use_vae: bool, use_reconstruction: bool) -> Self {
        Self {
            reconstruction: if use_reconstruction { 1.0 } else { 0.0 },
            kl: if use_vae { 1e-5 } else { 0.0 },
            embedding: 1e-5,
            contrastive: if use_reconstruction { 0.1 } else { 1.0 },
            temperature: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::config("temperature", "must be positive and finite"));
        }
        for (name, w) in [
            ("reconstruction", self.reconstruction),
            ("kl", self.kl),
            ("embedding", self.embedding),
            ("contrastive", self.contrastive),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::config(name, "weights must be finite and non-negative"));
            }
        }
        Ok(())
    }
}

/// Weights together with the functional form of the embedding term.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub weights: LossWeights,
    pub embedding_kind: EmbedLossKind,
}

impl LossConfig {
    pub fn for_flags(use_vae: bool, use_reconstruction: bool) -> Self {
        Self {
            weights: LossWeights::for_flags(use_vae, use_reconstruction),
            embedding_kind: EmbedLossKind::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossComponents {
    pub t2m: f64,
    pub m2t: f64,
    pub kl: Option<f64>,
    pub reconstruction: Option<f64>,
    pub embedding: Option<f64>,
}

pub fn total_loss(c: &LossComponents, w: &LossWeights) -> Result<f64> {
    let term = |name: &'static str, v: Option<f64>, weight: f64| match v {
        Some(v) => Ok(weight * v),
        None if weight != 0.0 => Err(Error::AbsentComponent(name)),
        None => Ok(0.0),
    };
    let total = w.contrastive * (c.t2m + c.m2t)
        + term("reconstruction", c.reconstruction, w.reconstruction)?
        + term("kl", c.kl, w.kl)?
        + term("embedding", c.embedding, w.embedding)?;
    Ok(total)
}

/// Rows `N..` of a block, i.e. the negative texts against every motion.
pub fn negative_rows(block: &SimilarityBlock) -> ndarray::ArrayView2<'_, f64> {
    block.s.slice(s![block.n_pairs().., ..])
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng as _;

    fn eq1_direct(s: &Array2<f64>, tau: f64) -> f64 {
        let n = s.ncols();
        let mut acc = 0.0;
        for i in 0..n {
            let row: f64 = (0..n).map(|j| (s[[i, j]] / tau).exp()).sum();
            let col: f64 = (0..n).map(|j| (s[[j, i]] / tau).exp()).sum();
            let e = (s[[i, i]] / tau).exp();
            acc += (e / row).ln() + (e / col).ln();
        }
        -acc / (2.0 * n as f64)
    }

    #[test]
    fn identity_spot_value() {
        let c = contrastive_loss(&array![[1.0, 0.0], [0.0, 1.0]], 1.0).unwrap();
        let expected = (1.0 + (-1.0f64).exp()).ln();
        assert!((c.t2m - expected).abs() < 1e-12);
        assert!((c.m2t - expected).abs() < 1e-12);
        assert!((c.t2m + c.m2t - 0.626523).abs() < 1e-6);
    }

    #[test]
    fn zero_negatives_match_symmetric_form() {
        let mut r = crate::rng::seeded(1, &[]);
        for n in 1..8 {
            let s = Array2::from_shape_simple_fn((n, n), || r.random_range(-1.0..1.0));
            let c = contrastive_loss(&s, 0.3).unwrap();
            assert!(((c.t2m + c.m2t) / 2.0 - eq1_direct(&s, 0.3)).abs() < 1e-12);
        }
    }

    #[test]
    fn single_pair_single_negative_closed_form() {
        let tau = 0.5;
        let mut prev = f64::INFINITY;
        for gap in [-1.0, -0.5, 0.0, 0.5, 1.0] {
            let (sv, cv) = (0.2 + gap / 2.0, 0.2 - gap / 2.0);
            let t = contrastive_loss(&array![[sv], [cv]], tau).unwrap();
            assert_eq!(t.t2m, 0.0);
            let closed = (1.0 + ((cv - sv) / tau).exp()).ln();
            assert!((t.m2t - closed).abs() < 1e-12);
            assert!(t.m2t < prev);
            prev = t.m2t;
        }
    }

    #[test]
    fn negative_rows_never_touch_t2m() {
        let s = array![[0.9, 0.1], [0.2, 0.8], [0.5, -0.3]];
        let base = contrastive_loss(&s, 0.1).unwrap();
        let mut bumped = s.clone();
        bumped[[2, 0]] += 0.3;
        let b = contrastive_loss(&bumped, 0.1).unwrap();
        assert_eq!(base.t2m, b.t2m);
        assert!(b.m2t > base.m2t);
    }

    #[test]
    fn temperature_scaling_invariance() {
        let s = array![[0.9, 0.1], [0.2, 0.8], [0.5, -0.3]];
        let a = contrastive_loss(&s, 0.1).unwrap();
        let b = contrastive_loss(&(&s * 3.0), 0.3).unwrap();
        assert!((a.t2m - b.t2m).abs() < 1e-12 && (a.m2t - b.m2t).abs() < 1e-12);
    }

    #[test]
    fn stable_at_low_temperature() {
        let s = array![[1.0, -1.0], [-1.0, 1.0], [1.0, 1.0]];
        let c = contrastive_loss(&s, 1e-3).unwrap();
        assert!(c.t2m.is_finite() && c.m2t.is_finite() && c.grad.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(contrastive_loss(&array![[f64::NAN]], 1.0).is_err());
        assert!(contrastive_loss(&array![[1.0, 0.0]], 1.0).is_err());
        assert!(contrastive_loss(&array![[1.0]], 0.0).is_err());
    }

    #[test]
    fn similarity_shapes_and_bounds() {
        let t = vec![array![1.0, 0.0], array![0.0, 2.0], array![3.0, 3.0]];
        let m = vec![array![1.0, 0.0], array![0.0, 1.0]];
        let b = similarity_block(&t, &m, vec![0]).unwrap();
        assert_eq!(b.s.dim(), (3, 2));
        assert_eq!(b.s[[0, 0]], 1.0);
        assert_eq!(b.s[[1, 1]], 1.0);
        assert_eq!(b.s[[0, 1]], 0.0);
        assert!(b.s.iter().all(|v| v.abs() <= 1.0 + 1e-12));
        assert!(matches!(similarity_block(&[array![0.0, 0.0]], &[array![1.0, 0.0]], vec![]), Err(Error::ZeroNorm(_))));
    }

    #[test]
    fn kl_spot_values() {
        let zero = array![0.0];
        let (v, _) = kl_loss(&[(&zero, &zero)]).unwrap();
        assert_eq!(v, 0.0);
        let one = array![1.0];
        let (v, _) = kl_loss(&[(&one, &zero)]).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
    }

    #[test]
    fn reconstruction_spot_values() {
        let t = Array2::from_shape_fn((3, 4), |(i, j)| (i * 4 + j) as f64);
        assert_eq!(reconstruction_loss(&t, &t).unwrap().0, 0.0);
        assert!((reconstruction_loss(&(&t + 1.0), &t).unwrap().0 - 1.0).abs() < 1e-15);
        let mut r = crate::rng::seeded(2, &[]);
        let a = Array2::from_shape_simple_fn((5, 3), || r.random_range(-1.0..1.0));
        let b = Array2::from_shape_simple_fn((5, 3), || r.random_range(-1.0..1.0));
        let brute: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / 15.0;
        assert!((reconstruction_loss(&a, &b).unwrap().0 - brute).abs() < 1e-15);
        assert!(reconstruction_loss(&a, &t).is_err());
    }

    #[test]
    fn embedding_loss_spot_values() {
        let a = array![0.1, 0.2, 0.3, 0.4];
        let (v, _, _) = embedding_similarity_loss(std::slice::from_ref(&a), std::slice::from_ref(&a), EmbedLossKind::SmoothL1).unwrap();
        assert_eq!(v, 0.0);
        let mut b = a.clone();
        b[2] += 0.5;
        let (v, _, _) = embedding_similarity_loss(std::slice::from_ref(&a), &[b], EmbedLossKind::SmoothL1).unwrap();
        assert!((v - 0.125 / 4.0).abs() < 1e-15);
        assert!(embedding_similarity_loss(std::slice::from_ref(&a), &[], EmbedLossKind::Mse).is_err());
    }

    #[test]
    fn weights_and_total() {
        let w = LossWeights::for_flags(true, true);
        assert_eq!((w.reconstruction, w.kl, w.embedding, w.contrastive), (1.0, 1e-5, 1e-5, 0.1));
        let w = LossWeights::for_flags(false, false);
        assert_eq!((w.reconstruction, w.kl, w.embedding, w.contrastive), (0.0, 0.0, 1e-5, 1.0));
        let c = LossComponents { t2m: 0.4, m2t: 0.6, embedding: Some(2.0), ..Default::default() };
        assert!((total_loss(&c, &w).unwrap() - (1.0 + 2e-5)).abs() < 1e-15);
        assert_eq!(total_loss(&LossComponents { embedding: Some(0.0), ..Default::default() }, &w).unwrap(), 0.0);
        let full = LossWeights::for_flags(true, true);
        assert!(matches!(total_loss(&c, &full), Err(Error::AbsentComponent("reconstruction"))));
    }
}
