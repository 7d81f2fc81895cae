//! Query-reference co-attention.
//!
//! Both patch sets pass through the shared projection head, are L2-normalized,
//! and their pairwise cosine similarities are mapped affinely from [-1, 1]
//! onto [0, 1]. The per-query guidance score is each row's best match; the
//! attention loss supervises the single worst pair per scale with the
//! image-level label.

use ndarray::{Array1, Array2};

use crate::autograd::{Graph, Scalar, Var};
use crate::error::{Error, Result};
use crate::model::{Model, PatchSetVar};

/// Clamp bound for logarithms in the losses.
pub const LOG_EPS: f64 = 1e-7;
/// Guard inside the row norm so zero embeddings stay finite.
pub const NORM_EPS: f64 = 1e-12;

/// Per-scale co-attention matrices and derived guidance scores.
#[derive(Debug, Clone)]
pub struct AttentionMaps {
    /// A_i with entries in [0, 1], one N_Q × N_R matrix per scale.
    pub matrices: Vec<Array2<f32>>,
    /// Row-wise maxima of each A_i: the per-patch guidance a_i^j.
    pub guidance: Vec<Array1<f32>>,
}

/// Co-attention matrix node for one scale.
pub fn attention_matrix_var<F: Scalar>(
    g: &mut Graph<F>,
    model: &Model<F>,
    query: &PatchSetVar,
    reference_patches: Var,
    reference_scale: usize,
) -> Result<Var> {
    if query.scale_index != reference_scale {
        return Err(Error::Shape(format!(
            "attention matrix needs matching scales, got query scale {} vs reference scale {}",
            query.scale_index, reference_scale
        )));
    }
    let pq = model.project(g, query.var);
    let pr = model.project(g, reference_patches);
    let eps = F::from_f64(NORM_EPS);
    let nq = g.row_l2norm(pq, eps);
    let nr = g.row_l2norm(pr, eps);
    let cos = g.matmul_nt(nq, nr);
    let half = F::from_f64(0.5);
    let scaled = g.mul_scalar(cos, half);
    let shifted = g.add_scalar(scaled, half);
    // Rounding can push the affine image of cos slightly past the ends.
    Ok(g.clamp(shifted, F::zero(), F::one()))
}

/// Guidance scores: row-wise maximum of the co-attention matrix.
pub fn guidance_scores_var<F: Scalar>(g: &mut Graph<F>, attention: Var) -> Var {
    g.row_max(attention)
}

/// Attention loss over all scales for one query with label `y`.
pub fn attention_loss_var<F: Scalar>(
    g: &mut Graph<F>,
    matrices: &[Var],
    label: u8,
) -> Result<Var> {
    if matrices.is_empty() {
        return Err(Error::Internal("attention loss needs at least one scale".into()));
    }
    let lo = F::from_f64(LOG_EPS);
    let hi = F::from_f64(1.0 - LOG_EPS);
    let mut terms = Vec::with_capacity(matrices.len());
    for &a in matrices {
        if g.value(a).len() == 0 {
            return Err(Error::Internal("attention loss on empty matrix".into()));
        }
        let min = g.global_min(a);
        let min = g.clamp(min, lo, hi);
        let inner = if label == 1 { g.one_minus(min) } else { min };
        let ln = g.ln(inner);
        terms.push(g.mul_scalar(ln, -F::one()));
    }
    Ok(g.add_n(&terms))
}

/// Value-level co-attention matrix between two patch sets.
pub fn attention_matrix(
    model: &Model<f32>,
    query: &crate::pyramid::PatchSet,
    reference: &crate::pyramid::PatchSet,
) -> Result<Array2<f32>> {
    if query.scale_index != reference.scale_index {
        return Err(Error::Shape(format!(
            "attention matrix needs matching scales, got {} vs {}",
            query.scale_index, reference.scale_index
        )));
    }
    let mut g = Graph::<f32>::new();
    let qv = g.input(query.patches.clone().into_dyn());
    let rv = g.input(reference.patches.clone().into_dyn());
    let q = PatchSetVar {
        var: qv,
        coords: query.coords.clone(),
        scale_index: query.scale_index,
        stride: query.stride,
        grid: (0, 0),
    };
    let a = attention_matrix_var(&mut g, model, &q, rv, reference.scale_index)?;
    Ok(g.value(a)
        .view()
        .into_dimensionality::<ndarray::Ix2>()
        .unwrap()
        .to_owned())
}

/// Row-wise maxima of a [0,1] attention matrix.
pub fn guidance_scores(attention: &Array2<f32>) -> Array1<f32> {
    Array1::from_iter(
        attention
            .rows()
            .into_iter()
            .map(|r| r.iter().copied().fold(f32::NEG_INFINITY, f32::max)),
    )
}

/// Value-level attention loss on explicit matrices.
pub fn attention_loss(matrices: &[Array2<f64>], label: u8) -> Result<f64> {
    let mut g = Graph::<f64>::new();
    let vars: Vec<Var> = matrices.iter().map(|m| g.input(m.clone().into_dyn())).collect();
    let loss = attention_loss_var(&mut g, &vars, label)?;
    Ok(g.scalar(loss))
}
