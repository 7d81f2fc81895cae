//! Meta-comparer: patch anomaly scores, the image-level classification loss,
//! and the co-attention-guided patch ranking loss.

use ndarray::Array1;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::attention::LOG_EPS;
use crate::autograd::{Graph, Scalar, Var};
use crate::error::{Error, Result};
use crate::model::{Model, PatchSetVar};

/// Pairs with a smaller Eq.-style weight are skipped outright; the hinge
/// factor is bounded, so they cannot contribute.
pub const RANK_WEIGHT_SKIP: f64 = 1e-12;

/// Pooled reference patches at one scale (possibly from several images).
#[derive(Debug, Clone, Copy)]
pub struct PooledPatchesVar {
    pub var: Var,
    pub scale_index: usize,
    pub count: usize,
}

/// Per-scale patch anomaly scores of one query image.
#[derive(Debug, Clone)]
pub struct AnomalyScores {
    /// s_i^j in (0, 1), one vector per scale.
    pub per_scale: Vec<Array1<f32>>,
    /// Grid coordinates mirrored from the query patch sets.
    pub coords: Vec<Vec<(usize, usize)>>,
    pub strides: Vec<usize>,
    pub grids: Vec<(usize, usize)>,
}

impl AnomalyScores {
    /// Image-level prediction: the maximum over all scales and patches.
    pub fn image_score(&self) -> f32 {
        self.per_scale
            .iter()
            .flat_map(|s| s.iter().copied())
            .fold(f32::NEG_INFINITY, f32::max)
    }
}

/// One sampled query patch pair for the ranking loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankPair {
    pub scale: usize,
    pub u: usize,
    pub v: usize,
}

#[derive(Debug, Clone)]
pub struct RankPairBatch {
    pub pairs: Vec<RankPair>,
    pub lambda: f64,
}

/// Uniformly sample (scale, u, v) triples with u != v.
pub fn sample_rank_pairs(
    patch_counts: &[usize],
    n_pairs: usize,
    lambda: f64,
    rng: &mut ChaCha8Rng,
) -> Result<RankPairBatch> {
    if n_pairs == 0 {
        return Err(Error::Config("rank pair budget must be positive".into()));
    }
    if lambda <= 0.0 {
        return Err(Error::Config("rank loss lambda must be positive".into()));
    }
    if patch_counts.is_empty() || patch_counts.iter().any(|&n| n < 2) {
        return Err(Error::Config(format!(
            "rank pair sampling needs >= 2 patches per scale, got {patch_counts:?}"
        )));
    }
    let mut pairs = Vec::with_capacity(n_pairs);
    for _ in 0..n_pairs {
        let scale = rng.gen_range(0..patch_counts.len());
        let n = patch_counts[scale];
        let u = rng.gen_range(0..n);
        let mut v = rng.gen_range(0..n - 1);
        if v >= u {
            v += 1;
        }
        pairs.push(RankPair { scale, u, v });
    }
    Ok(RankPairBatch { pairs, lambda })
}

/// s_i^j = max_k MLP([q_i^j, r_i^k]) for every query patch at one scale.
pub fn patch_scores_var<F: Scalar>(
    g: &mut Graph<F>,
    model: &Model<F>,
    query: &PatchSetVar,
    reference: &PooledPatchesVar,
) -> Result<Var> {
    if query.scale_index != reference.scale_index {
        return Err(Error::Shape(format!(
            "patch scores need matching scales, got {} vs {}",
            query.scale_index, reference.scale_index
        )));
    }
    if reference.count == 0 {
        return Err(Error::Internal("patch scores against an empty reference set".into()));
    }
    let n_q = g.value(query.var).shape()[0];
    let pairs = g.pair_concat(query.var, reference.var);
    let out = model.comparer_forward(g, pairs);
    let grid = g.reshape(out, &[n_q, reference.count]);
    Ok(g.row_max(grid))
}

/// Image-level classification loss over all scales (label `y`).
pub fn classification_loss_var<F: Scalar>(
    g: &mut Graph<F>,
    per_scale_scores: &[Var],
    label: u8,
) -> Result<Var> {
    if per_scale_scores.is_empty() {
        return Err(Error::Internal("classification loss needs at least one scale".into()));
    }
    let lo = F::from_f64(LOG_EPS);
    let hi = F::from_f64(1.0 - LOG_EPS);
    let mut terms = Vec::with_capacity(per_scale_scores.len());
    for &s in per_scale_scores {
        if g.value(s).len() == 0 {
            return Err(Error::Internal("classification loss on empty score vector".into()));
        }
        let m = g.vec_max(s);
        let m = g.clamp(m, lo, hi);
        let inner = if label == 1 { m } else { g.one_minus(m) };
        let ln = g.ln(inner);
        terms.push(g.mul_scalar(ln, -F::one()));
    }
    Ok(g.add_n(&terms))
}

/// Pair weight and sign from guidance scores: w = λ(e^{|a_u−a_v|}−1),
/// σ = −sgn(a_u−a_v).
pub fn rank_weight(a_u: f64, a_v: f64, lambda: f64) -> (f64, i8) {
    let w = lambda * ((a_u - a_v).abs().exp() - 1.0);
    let sigma = if a_u > a_v {
        -1
    } else if a_u < a_v {
        1
    } else {
        0
    };
    (w, sigma)
}

/// Ranking loss: Σ w · max(0, 1 − σ(s_u − s_v)) over the sampled pairs.
///
/// Gradients flow through both the scores and (via the weight) the guidance;
/// σ is a locally constant sign. Pairs whose weight underflows
/// [`RANK_WEIGHT_SKIP`] are skipped without touching the tape.
pub fn ranking_loss_var<F: Scalar>(
    g: &mut Graph<F>,
    per_scale_scores: &[Var],
    guidance: &[Var],
    batch: &RankPairBatch,
) -> Result<Var> {
    if per_scale_scores.len() != guidance.len() {
        return Err(Error::Internal(
            "ranking loss: scores and guidance scale counts differ".into(),
        ));
    }
    let mut terms = Vec::new();
    for pair in &batch.pairs {
        if pair.scale >= per_scale_scores.len() {
            return Err(Error::Internal(format!(
                "rank pair scale {} out of range",
                pair.scale
            )));
        }
        let s_var = per_scale_scores[pair.scale];
        let a_var = guidance[pair.scale];
        let n = g.value(s_var).len();
        if g.value(a_var).len() != n {
            return Err(Error::Internal(
                "ranking loss: guidance not aligned with scores".into(),
            ));
        }
        if pair.u >= n || pair.v >= n || pair.u == pair.v {
            return Err(Error::Internal(format!(
                "rank pair ({}, {}) invalid for {} patches",
                pair.u, pair.v, n
            )));
        }
        let a_u = g.value(a_var)[[pair.u]].as_f64();
        let a_v = g.value(a_var)[[pair.v]].as_f64();
        let (w, sigma) = rank_weight(a_u, a_v, batch.lambda);
        if w < RANK_WEIGHT_SKIP {
            continue;
        }
        let au = g.select(a_var, pair.u);
        let av = g.select(a_var, pair.v);
        let da = g.sub(au, av);
        let ada = g.abs(da);
        let ea = g.exp(ada);
        let em1 = g.add_scalar(ea, -F::one());
        let weight = g.mul_scalar(em1, F::from_f64(batch.lambda));
        let su = g.select(s_var, pair.u);
        let sv = g.select(s_var, pair.v);
        let ds = g.sub(su, sv);
        let sds = g.mul_scalar(ds, F::from_f64(sigma as f64));
        let harg = g.one_minus(sds);
        let hinge = g.relu(harg);
        terms.push(g.mul(weight, hinge));
    }
    if terms.is_empty() {
        return Ok(g.scalar_input(F::zero()));
    }
    Ok(g.add_n(&terms))
}

/// Value-level classification loss on explicit per-scale score vectors.
pub fn classification_loss(per_scale: &[Vec<f64>], label: u8) -> Result<f64> {
    let mut g = Graph::<f64>::new();
    let vars: Vec<Var> = per_scale
        .iter()
        .map(|s| g.input(Array1::from_vec(s.clone()).into_dyn()))
        .collect();
    let loss = classification_loss_var(&mut g, &vars, label)?;
    Ok(g.scalar(loss))
}

/// Value-level ranking loss on explicit scores and guidance.
pub fn ranking_loss(
    per_scale_scores: &[Vec<f64>],
    guidance: &[Vec<f64>],
    batch: &RankPairBatch,
) -> Result<f64> {
    let mut g = Graph::<f64>::new();
    let s: Vec<Var> = per_scale_scores
        .iter()
        .map(|v| g.input(Array1::from_vec(v.clone()).into_dyn()))
        .collect();
    let a: Vec<Var> = guidance
        .iter()
        .map(|v| g.input(Array1::from_vec(v.clone()).into_dyn()))
        .collect();
    let loss = ranking_loss_var(&mut g, &s, &a, batch)?;
    Ok(g.scalar(loss))
}
