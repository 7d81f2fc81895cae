//! Reverse-mode automatic differentiation on a flat tape.
//!
//! Every forward op appends one node holding its value and enough context to
//! run the backward step. Node ids grow monotonically, so a reverse sweep from
//! the loss node is already a topological order. The tape is generic over the
//! float width: training runs in `f32`, the finite-difference gradient checks
//! run the identical code in `f64`.
//!
//! Hard max/min selections (patch-score maxima, attention minima, pooling)
//! propagate through the selected argument only, the usual subgradient.

use ndarray::{Array1, Array2, ArrayD, Axis, Ix1, Ix2, Ix3, Ix4, IxDyn, LinalgScalar, ScalarOperand};
use num_traits::{Float, NumAssignOps};

use crate::kernels;
use crate::params::{Gradients, ParamId, ParamSet};

pub trait Scalar:
    Float
    + NumAssignOps
    + LinalgScalar
    + ScalarOperand
    + std::fmt::Debug
    + std::fmt::Display
    + std::iter::Sum
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    const DTYPE: Dtype;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    const DTYPE: Dtype = Dtype::F32;
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    const DTYPE: Dtype = Dtype::F64;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

/// Handle to a node on a [`Graph`] tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Default for Var {
    /// Sentinel for pre-sized buffers; using it as a real node is a bug.
    fn default() -> Self {
        Var(usize::MAX)
    }
}

enum Op<F: Scalar> {
    Leaf { param: Option<ParamId> },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddScalar(usize, F),
    MulScalar(usize, F),
    MulByScalarVar { x: usize, s: usize },
    DivByScalarVar { x: usize, s: usize },
    Relu(usize),
    Sigmoid(usize),
    Exp(usize),
    Ln(usize),
    Abs(usize),
    Clamp { x: usize, lo: F, hi: F },
    Linear { x: usize, w: usize, b: usize },
    MatMulNT(usize, usize),
    Conv2d { x: usize, w: usize, b: usize, stride: usize, pad: usize },
    MaxPool2d { x: usize, argmax: Vec<usize> },
    UpsampleNearest2(usize),
    BatchNormFrozen { x: usize, gamma: usize, beta: usize, mean: Array1<F>, var: Array1<F>, eps: F },
    RowL2Norm { x: usize, norms: Vec<F> },
    RowMax { x: usize, argmax: Vec<usize> },
    VecMax { x: usize, argmax: usize },
    GlobalMin { x: usize, argmin: (usize, usize) },
    Select { x: usize, index: usize },
    PairConcat { q: usize, r: usize },
    ConcatRows { parts: Vec<usize> },
    Reshape { x: usize },
    Transpose2(usize),
    SumAll(usize),
    AddN(Vec<usize>),
}

struct Node<F: Scalar> {
    value: ArrayD<F>,
    op: Op<F>,
}

pub struct Graph<F: Scalar> {
    nodes: Vec<Node<F>>,
    param_cache: Vec<Option<Var>>,
}

impl<F: Scalar> Graph<F> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            param_cache: Vec::new(),
        }
    }

    fn push(&mut self, value: ArrayD<F>, op: Op<F>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &ArrayD<F> {
        &self.nodes[v.0].value
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> F {
        debug_assert_eq!(self.nodes[v.0].value.len(), 1);
        *self.nodes[v.0].value.iter().next().unwrap()
    }

    pub fn input(&mut self, value: ArrayD<F>) -> Var {
        self.push(value, Op::Leaf { param: None })
    }

    pub fn scalar_input(&mut self, value: F) -> Var {
        self.input(ArrayD::from_elem(IxDyn(&[1]), value))
    }

    /// Insert a parameter as a leaf, caching so repeated lookups share a node
    /// and gradients accumulate per parameter.
    pub fn param(&mut self, params: &ParamSet<F>, id: ParamId) -> Var {
        if self.param_cache.len() < params.len() {
            self.param_cache.resize(params.len(), None);
        }
        if let Some(v) = self.param_cache[id.0] {
            return v;
        }
        let v = self.push(params.value(id).clone(), Op::Leaf { param: Some(id) });
        self.param_cache[id.0] = v.into();
        v
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = &self.nodes[a.0].value + &self.nodes[b.0].value;
        self.push(value, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = &self.nodes[a.0].value - &self.nodes[b.0].value;
        self.push(value, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = &self.nodes[a.0].value * &self.nodes[b.0].value;
        self.push(value, Op::Mul(a.0, b.0))
    }

    pub fn add_scalar(&mut self, x: Var, c: F) -> Var {
        let value = self.nodes[x.0].value.mapv(|v| v + c);
        self.push(value, Op::AddScalar(x.0, c))
    }

    pub fn mul_scalar(&mut self, x: Var, c: F) -> Var {
        let value = self.nodes[x.0].value.mapv(|v| v * c);
        self.push(value, Op::MulScalar(x.0, c))
    }

    /// `1 - x`, elementwise.
    pub fn one_minus(&mut self, x: Var) -> Var {
        let neg = self.mul_scalar(x, -F::one());
        self.add_scalar(neg, F::one())
    }

    /// Tensor times a single-element node.
    pub fn mul_by_scalar_var(&mut self, x: Var, s: Var) -> Var {
        let sv = self.scalar(s);
        let value = self.nodes[x.0].value.mapv(|v| v * sv);
        self.push(value, Op::MulByScalarVar { x: x.0, s: s.0 })
    }

    /// Tensor divided by a single-element node.
    pub fn div_by_scalar_var(&mut self, x: Var, s: Var) -> Var {
        let sv = self.scalar(s);
        let value = self.nodes[x.0].value.mapv(|v| v / sv);
        self.push(value, Op::DivByScalarVar { x: x.0, s: s.0 })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.nodes[x.0].value.mapv(|v| if v > F::zero() { v } else { F::zero() });
        self.push(value, Op::Relu(x.0))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let one = F::one();
        let value = self.nodes[x.0].value.mapv(|v| one / (one + (-v).exp()));
        self.push(value, Op::Sigmoid(x.0))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let value = self.nodes[x.0].value.mapv(|v| v.exp());
        self.push(value, Op::Exp(x.0))
    }

    pub fn ln(&mut self, x: Var) -> Var {
        let value = self.nodes[x.0].value.mapv(|v| v.ln());
        self.push(value, Op::Ln(x.0))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let value = self.nodes[x.0].value.mapv(|v| v.abs());
        self.push(value, Op::Abs(x.0))
    }

    pub fn clamp(&mut self, x: Var, lo: F, hi: F) -> Var {
        let value = self.nodes[x.0].value.mapv(|v| v.max(lo).min(hi));
        self.push(value, Op::Clamp { x: x.0, lo, hi })
    }

    /// y = x · wᵀ + b with x: [N, in], w: [out, in], b: [out].
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xv = self.as2(x);
        let wv = self.as2(w);
        let bv = self.as1(b);
        let y = kernels::linear_fwd(&xv, &wv, &bv);
        self.push(y.into_dyn(), Op::Linear { x: x.0, w: w.0, b: b.0 })
    }

    /// a · bᵀ with a: [N, d], b: [M, d] -> [N, M].
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let av = self.as2(a);
        let bv = self.as2(b);
        assert_eq!(av.ncols(), bv.ncols(), "matmul_nt inner dims");
        let y = kernels::matmul(&av, &bv.t());
        self.push(y.into_dyn(), Op::MatMulNT(a.0, b.0))
    }

    /// x: [C_in, H, W], w: [C_out, C_in, k, k], b: [C_out].
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Var {
        let xv = self.nodes[x.0]
            .value
            .view()
            .into_dimensionality::<Ix3>()
            .expect("conv input must be [C,H,W]");
        let wv = self.nodes[w.0]
            .value
            .view()
            .into_dimensionality::<Ix4>()
            .expect("conv weight must be [Co,Ci,k,k]");
        let bv = self.as1(b);
        let y = kernels::conv2d_fwd(&xv, &wv, &bv, stride, pad);
        self.push(y.into_dyn(), Op::Conv2d { x: x.0, w: w.0, b: b.0, stride, pad })
    }

    pub fn maxpool2d(&mut self, x: Var, k: usize, stride: usize, pad: usize) -> Var {
        let xv = self.nodes[x.0]
            .value
            .view()
            .into_dimensionality::<Ix3>()
            .expect("pool input must be [C,H,W]");
        let (y, argmax) = kernels::maxpool_fwd(&xv, k, stride, pad);
        self.push(y.into_dyn(), Op::MaxPool2d { x: x.0, argmax })
    }

    pub fn upsample_nearest2(&mut self, x: Var) -> Var {
        let xv = self.nodes[x.0]
            .value
            .view()
            .into_dimensionality::<Ix3>()
            .expect("upsample input must be [C,H,W]");
        let y = kernels::upsample2_fwd(&xv);
        self.push(y.into_dyn(), Op::UpsampleNearest2(x.0))
    }

    /// Batch norm with fixed running statistics; gamma/beta stay learnable.
    pub fn batchnorm_frozen(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Array1<F>,
        var: Array1<F>,
        eps: F,
    ) -> Var {
        let xv = self.nodes[x.0]
            .value
            .view()
            .into_dimensionality::<Ix3>()
            .expect("batchnorm input must be [C,H,W]");
        let g = self.as1(gamma);
        let bt = self.as1(beta);
        let mut y = xv.to_owned();
        for (c, mut plane) in y.outer_iter_mut().enumerate() {
            let inv = (var[c] + eps).sqrt().recip();
            let (m, gc, bc) = (mean[c], g[c], bt[c]);
            plane.mapv_inplace(|v| (v - m) * inv * gc + bc);
        }
        self.push(
            y.into_dyn(),
            Op::BatchNormFrozen { x: x.0, gamma: gamma.0, beta: beta.0, mean, var, eps },
        )
    }

    /// Row-wise x / sqrt(‖x‖² + eps); the epsilon keeps zero rows finite.
    pub fn row_l2norm(&mut self, x: Var, eps: F) -> Var {
        let xv = self.as2(x);
        let mut norms = Vec::with_capacity(xv.nrows());
        let mut y = xv.to_owned();
        for mut row in y.rows_mut() {
            let sq: F = row.iter().map(|v| *v * *v).sum();
            let n = (sq + eps).sqrt();
            norms.push(n);
            row.mapv_inplace(|v| v / n);
        }
        self.push(y.into_dyn(), Op::RowL2Norm { x: x.0, norms })
    }

    /// Row-wise maximum: [N, M] -> [N].
    pub fn row_max(&mut self, x: Var) -> Var {
        let xv = self.as2(x);
        assert!(xv.ncols() > 0, "row_max on empty matrix");
        let mut out = Array1::<F>::zeros(xv.nrows());
        let mut argmax = Vec::with_capacity(xv.nrows());
        for (i, row) in xv.rows().into_iter().enumerate() {
            let mut best = row[0];
            let mut bj = 0usize;
            for (j, v) in row.iter().enumerate() {
                if *v > best {
                    best = *v;
                    bj = j;
                }
            }
            out[i] = best;
            argmax.push(bj);
        }
        self.push(out.into_dyn(), Op::RowMax { x: x.0, argmax })
    }

    /// [N] -> [1]
    pub fn vec_max(&mut self, x: Var) -> Var {
        let xv = self.as1(x);
        assert!(!xv.is_empty(), "vec_max on empty vector");
        let mut best = xv[0];
        let mut bi = 0usize;
        for (i, v) in xv.iter().enumerate() {
            if *v > best {
                best = *v;
                bi = i;
            }
        }
        let out = ArrayD::from_elem(IxDyn(&[1]), best);
        self.push(out, Op::VecMax { x: x.0, argmax: bi })
    }

    /// Global minimum of a matrix: [N, M] -> [1].
    pub fn global_min(&mut self, x: Var) -> Var {
        let xv = self.as2(x);
        assert!(xv.len() > 0, "global_min on empty matrix");
        let mut best = xv[(0, 0)];
        let mut arg = (0usize, 0usize);
        for ((i, j), v) in xv.indexed_iter() {
            if *v < best {
                best = *v;
                arg = (i, j);
            }
        }
        let out = ArrayD::from_elem(IxDyn(&[1]), best);
        self.push(out, Op::GlobalMin { x: x.0, argmin: arg })
    }

    /// Pick one element of a vector: [N] -> [1].
    pub fn select(&mut self, x: Var, index: usize) -> Var {
        let xv = self.as1(x);
        let out = ArrayD::from_elem(IxDyn(&[1]), xv[index]);
        self.push(out, Op::Select { x: x.0, index })
    }

    /// All (query row j, reference row k) concatenations, row-major in j then
    /// k: q: [NQ, C], r: [NR, C] -> [NQ·NR, 2C].
    pub fn pair_concat(&mut self, q: Var, r: Var) -> Var {
        let qv = self.as2(q);
        let rv = self.as2(r);
        assert_eq!(qv.ncols(), rv.ncols(), "pair_concat feature dims");
        let (nq, c) = qv.dim();
        let nr = rv.nrows();
        let mut out = Array2::<F>::zeros((nq * nr, 2 * c));
        for j in 0..nq {
            for k in 0..nr {
                let mut row = out.row_mut(j * nr + k);
                row.slice_mut(ndarray::s![..c]).assign(&qv.row(j));
                row.slice_mut(ndarray::s![c..]).assign(&rv.row(k));
            }
        }
        self.push(out.into_dyn(), Op::PairConcat { q: q.0, r: r.0 })
    }

    /// Vertical concatenation of [Ni, C] matrices.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        if parts.len() == 1 {
            return parts[0];
        }
        let views: Vec<_> = parts.iter().map(|p| self.as2(*p)).collect();
        let c = views[0].ncols();
        let total: usize = views.iter().map(|v| v.nrows()).sum();
        let mut out = Array2::<F>::zeros((total, c));
        let mut at = 0usize;
        for v in &views {
            out.slice_mut(ndarray::s![at..at + v.nrows(), ..]).assign(v);
            at += v.nrows();
        }
        self.push(out.into_dyn(), Op::ConcatRows { parts: parts.iter().map(|p| p.0).collect() })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let value = self.nodes[x.0]
            .value
            .to_shape(IxDyn(shape))
            .expect("reshape size mismatch")
            .to_owned();
        self.push(value, Op::Reshape { x: x.0 })
    }

    pub fn transpose2(&mut self, x: Var) -> Var {
        let xv = self.as2(x);
        let value = xv.t().to_owned();
        self.push(value.into_dyn(), Op::Transpose2(x.0))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s: F = self.nodes[x.0].value.iter().copied().sum();
        let out = ArrayD::from_elem(IxDyn(&[1]), s);
        self.push(out, Op::SumAll(x.0))
    }

    /// Elementwise sum of same-shape nodes.
    pub fn add_n(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        if parts.len() == 1 {
            return parts[0];
        }
        let mut value = self.nodes[parts[0].0].value.clone();
        for p in &parts[1..] {
            value += &self.nodes[p.0].value;
        }
        self.push(value, Op::AddN(parts.iter().map(|p| p.0).collect()))
    }

    fn as1(&self, v: Var) -> ndarray::ArrayView1<'_, F> {
        self.nodes[v.0]
            .value
            .view()
            .into_dimensionality::<Ix1>()
            .expect("expected rank-1 value")
    }

    fn as2(&self, v: Var) -> ndarray::ArrayView2<'_, F> {
        self.nodes[v.0]
            .value
            .view()
            .into_dimensionality::<Ix2>()
            .expect("expected rank-2 value")
    }

    /// Reverse sweep from a scalar root; returns gradients per parameter id.
    pub fn backward(&self, root: Var, n_params: usize) -> Gradients<F> {
        assert_eq!(self.nodes[root.0].value.len(), 1, "backward root must be scalar");
        let mut grads: Vec<Option<ArrayD<F>>> = Vec::with_capacity(root.0 + 1);
        grads.resize_with(root.0 + 1, || None);
        let mut param_grads: Gradients<F> = vec![None; n_params];
        grads[root.0] = Some(ArrayD::from_elem(IxDyn(&[1]), F::one()));

        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            match &self.nodes[id].op {
                Op::Leaf { param } => {
                    if let Some(pid) = param {
                        acc(&mut param_grads[pid.0], g);
                    }
                }
                Op::Add(a, b) => {
                    acc(&mut grads[*a], g.clone());
                    acc(&mut grads[*b], g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads[*a], g.clone());
                    acc(&mut grads[*b], g.mapv(|v| -v));
                }
                Op::Mul(a, b) => {
                    let ga = &g * &self.nodes[*b].value;
                    let gb = &g * &self.nodes[*a].value;
                    acc(&mut grads[*a], ga);
                    acc(&mut grads[*b], gb);
                }
                Op::AddScalar(x, _) => acc(&mut grads[*x], g),
                Op::MulScalar(x, c) => acc(&mut grads[*x], g.mapv(|v| v * *c)),
                Op::MulByScalarVar { x, s } => {
                    let sv = *self.nodes[*s].value.iter().next().unwrap();
                    let gs: F = g.iter().zip(self.nodes[*x].value.iter()).map(|(a, b)| *a * *b).sum();
                    acc(&mut grads[*x], g.mapv(|v| v * sv));
                    acc(&mut grads[*s], ArrayD::from_elem(IxDyn(&[1]), gs));
                }
                Op::DivByScalarVar { x, s } => {
                    let sv = *self.nodes[*s].value.iter().next().unwrap();
                    let gs: F = g
                        .iter()
                        .zip(self.nodes[*x].value.iter())
                        .map(|(gv, xv)| -(*gv * *xv) / (sv * sv))
                        .sum();
                    acc(&mut grads[*x], g.mapv(|v| v / sv));
                    acc(&mut grads[*s], ArrayD::from_elem(IxDyn(&[1]), gs));
                }
                Op::Relu(x) => {
                    let mask = &self.nodes[*x].value;
                    let gx = ndarray::Zip::from(&g)
                        .and(mask)
                        .map_collect(|gv, xv| if *xv > F::zero() { *gv } else { F::zero() });
                    acc(&mut grads[*x], gx);
                }
                Op::Sigmoid(x) => {
                    let y = &self.nodes[id].value;
                    let gx = ndarray::Zip::from(&g)
                        .and(y)
                        .map_collect(|gv, yv| *gv * *yv * (F::one() - *yv));
                    acc(&mut grads[*x], gx);
                }
                Op::Exp(x) => {
                    let y = &self.nodes[id].value;
                    acc(&mut grads[*x], &g * y);
                }
                Op::Ln(x) => {
                    let xv = &self.nodes[*x].value;
                    let gx = ndarray::Zip::from(&g).and(xv).map_collect(|gv, v| *gv / *v);
                    acc(&mut grads[*x], gx);
                }
                Op::Abs(x) => {
                    let xv = &self.nodes[*x].value;
                    let gx = ndarray::Zip::from(&g).and(xv).map_collect(|gv, v| {
                        if *v > F::zero() {
                            *gv
                        } else if *v < F::zero() {
                            -*gv
                        } else {
                            F::zero()
                        }
                    });
                    acc(&mut grads[*x], gx);
                }
                Op::Clamp { x, lo, hi } => {
                    let xv = &self.nodes[*x].value;
                    let gx = ndarray::Zip::from(&g)
                        .and(xv)
                        .map_collect(|gv, v| if *v > *lo && *v < *hi { *gv } else { F::zero() });
                    acc(&mut grads[*x], gx);
                }
                Op::Linear { x, w, b } => {
                    let xv = self.as2(Var(*x));
                    let wv = self.as2(Var(*w));
                    let gy = g.view().into_dimensionality::<Ix2>().unwrap();
                    let (dx, dw, db) = kernels::linear_bwd(&xv, &wv, &gy);
                    acc(&mut grads[*x], dx.into_dyn());
                    acc(&mut grads[*w], dw.into_dyn());
                    acc(&mut grads[*b], db.into_dyn());
                }
                Op::MatMulNT(a, b) => {
                    let av = self.as2(Var(*a));
                    let bv = self.as2(Var(*b));
                    let gy = g.view().into_dimensionality::<Ix2>().unwrap();
                    let da = kernels::matmul(&gy, &bv);
                    let db = kernels::matmul(&gy.t(), &av);
                    acc(&mut grads[*a], da.into_dyn());
                    acc(&mut grads[*b], db.into_dyn());
                }
                Op::Conv2d { x, w, b, stride, pad } => {
                    let xv = self.nodes[*x].value.view().into_dimensionality::<Ix3>().unwrap();
                    let wv = self.nodes[*w].value.view().into_dimensionality::<Ix4>().unwrap();
                    let gy = g.view().into_dimensionality::<Ix3>().unwrap();
                    let (dx, dw, db) = kernels::conv2d_bwd(&xv, &wv, &gy, *stride, *pad);
                    acc(&mut grads[*x], dx.into_dyn());
                    acc(&mut grads[*w], dw.into_dyn());
                    acc(&mut grads[*b], db.into_dyn());
                }
                Op::MaxPool2d { x, argmax, .. } => {
                    let xd = self.nodes[*x].value.view().into_dimensionality::<Ix3>().unwrap().dim();
                    let gy = g.view().into_dimensionality::<Ix3>().unwrap();
                    let dx = kernels::maxpool_bwd(xd, &gy, argmax);
                    acc(&mut grads[*x], dx.into_dyn());
                }
                Op::UpsampleNearest2(x) => {
                    let gy = g.view().into_dimensionality::<Ix3>().unwrap();
                    acc(&mut grads[*x], kernels::upsample2_bwd(&gy).into_dyn());
                }
                Op::BatchNormFrozen { x, gamma, beta, mean, var, eps } => {
                    let xv = self.nodes[*x].value.view().into_dimensionality::<Ix3>().unwrap();
                    let gm = self.as1(Var(*gamma)).to_owned();
                    let gy = g.view().into_dimensionality::<Ix3>().unwrap();
                    let c = xv.dim().0;
                    let mut dgamma = Array1::<F>::zeros(c);
                    let mut dbeta = Array1::<F>::zeros(c);
                    let mut dx = xv.to_owned();
                    for ci in 0..c {
                        let inv = (var[ci] + *eps).sqrt().recip();
                        let m = mean[ci];
                        let scale = gm[ci] * inv;
                        let gplane = gy.index_axis(Axis(0), ci);
                        let xplane = xv.index_axis(Axis(0), ci);
                        let mut dplane = dx.index_axis_mut(Axis(0), ci);
                        let mut sg = F::zero();
                        let mut sgx = F::zero();
                        ndarray::Zip::from(&mut dplane)
                            .and(&gplane)
                            .and(&xplane)
                            .for_each(|d, gv, xvv| {
                                sg = sg + *gv;
                                sgx = sgx + *gv * (*xvv - m) * inv;
                                *d = *gv * scale;
                            });
                        dbeta[ci] = sg;
                        dgamma[ci] = sgx;
                    }
                    acc(&mut grads[*x], dx.into_dyn());
                    acc(&mut grads[*gamma], dgamma.into_dyn());
                    acc(&mut grads[*beta], dbeta.into_dyn());
                }
                Op::RowL2Norm { x, norms } => {
                    let xv = self.as2(Var(*x));
                    let gy = g.view().into_dimensionality::<Ix2>().unwrap();
                    let mut dx = Array2::<F>::zeros(xv.raw_dim());
                    for i in 0..xv.nrows() {
                        let n = norms[i];
                        let xrow = xv.row(i);
                        let grow = gy.row(i);
                        let dot: F = xrow.iter().zip(grow.iter()).map(|(a, b)| *a * *b).sum();
                        let n3 = n * n * n;
                        let mut drow = dx.row_mut(i);
                        for j in 0..xrow.len() {
                            drow[j] = grow[j] / n - xrow[j] * dot / n3;
                        }
                    }
                    acc(&mut grads[*x], dx.into_dyn());
                }
                Op::RowMax { x, argmax } => {
                    let xd = self.as2(Var(*x)).raw_dim();
                    let gy = g.view().into_dimensionality::<Ix1>().unwrap();
                    let mut dx = Array2::<F>::zeros(xd);
                    for (i, &j) in argmax.iter().enumerate() {
                        dx[(i, j)] = dx[(i, j)] + gy[i];
                    }
                    acc(&mut grads[*x], dx.into_dyn());
                }
                Op::VecMax { x, argmax } => {
                    let n = self.as1(Var(*x)).len();
                    let gv = *g.iter().next().unwrap();
                    let mut dx = Array1::<F>::zeros(n);
                    dx[*argmax] = gv;
                    acc(&mut grads[*x], dx.into_dyn());
                }
                Op::GlobalMin { x, argmin } => {
                    let xd = self.as2(Var(*x)).raw_dim();
                    let gv = *g.iter().next().unwrap();
                    let mut dx = Array2::<F>::zeros(xd);
                    dx[*argmin] = gv;
                    acc(&mut grads[*x], dx.into_dyn());
                }
                Op::Select { x, index } => {
                    let n = self.as1(Var(*x)).len();
                    let gv = *g.iter().next().unwrap();
                    let mut dx = Array1::<F>::zeros(n);
                    dx[*index] = gv;
                    acc(&mut grads[*x], dx.into_dyn());
                }
                Op::PairConcat { q, r } => {
                    let qd = self.as2(Var(*q)).raw_dim();
                    let rd = self.as2(Var(*r)).raw_dim();
                    let (nq, c) = (qd[0], qd[1]);
                    let nr = rd[0];
                    let gy = g.view().into_dimensionality::<Ix2>().unwrap();
                    let mut dq = Array2::<F>::zeros(qd);
                    let mut dr = Array2::<F>::zeros(rd);
                    for j in 0..nq {
                        for k in 0..nr {
                            let row = gy.row(j * nr + k);
                            for t in 0..c {
                                dq[(j, t)] = dq[(j, t)] + row[t];
                                dr[(k, t)] = dr[(k, t)] + row[c + t];
                            }
                        }
                    }
                    acc(&mut grads[*q], dq.into_dyn());
                    acc(&mut grads[*r], dr.into_dyn());
                }
                Op::ConcatRows { parts } => {
                    let gy = g.view().into_dimensionality::<Ix2>().unwrap();
                    let mut at = 0usize;
                    for p in parts {
                        let rows = self.as2(Var(*p)).nrows();
                        let slice = gy.slice(ndarray::s![at..at + rows, ..]).to_owned();
                        acc(&mut grads[*p], slice.into_dyn());
                        at += rows;
                    }
                }
                Op::Reshape { x } => {
                    let shape = self.nodes[*x].value.raw_dim();
                    let gx = g.to_shape(shape).unwrap().to_owned();
                    acc(&mut grads[*x], gx);
                }
                Op::Transpose2(x) => {
                    let gy = g.view().into_dimensionality::<Ix2>().unwrap();
                    acc(&mut grads[*x], gy.t().to_owned().into_dyn());
                }
                Op::SumAll(x) => {
                    let gv = *g.iter().next().unwrap();
                    let gx = ArrayD::from_elem(self.nodes[*x].value.raw_dim(), gv);
                    acc(&mut grads[*x], gx);
                }
                Op::AddN(parts) => {
                    for p in parts {
                        acc(&mut grads[*p], g.clone());
                    }
                }
            }
        }
        param_grads
    }
}

impl<F: Scalar> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn acc<F: Scalar>(slot: &mut Option<ArrayD<F>>, delta: ArrayD<F>) {
    match slot {
        Some(a) => *a += &delta,
        None => *slot = Some(delta),
    }
}
