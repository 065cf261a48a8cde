//! Pure array kernels. The tape in [`super::Graph`] calls these for its
//! forward pass, and they are usable directly on plain arrays.

use crate::error::{Error, Result};

use super::{Array, Scalar};

/// `out[m×n] += a[m×k] · b[k×n]`
pub(crate) fn gemm_nn<T: Scalar>(out: &mut [T], a: &[T], b: &[T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o = *o + aip * bv;
            }
        }
    }
}

/// `out[m×n] += a[m×k] · b[n×k]ᵀ`
pub(crate) fn gemm_nt<T: Scalar>(out: &mut [T], a: &[T], b: &[T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = T::zero();
            for (&x, &y) in arow.iter().zip(brow) {
                acc = acc + x * y;
            }
            out[i * n + j] = out[i * n + j] + acc;
        }
    }
}

/// `out[m×n] += a[k×m]ᵀ · b[k×n]`
pub(crate) fn gemm_tn<T: Scalar>(out: &mut [T], a: &[T], b: &[T], m: usize, k: usize, n: usize) {
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let api = a[p * m + i];
            if api == T::zero() {
                continue;
            }
            let row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o = *o + api * bv;
            }
        }
    }
}

/// Matrix product of two rank-2 arrays.
pub fn matmul<T: Scalar>(a: &Array<T>, b: &Array<T>) -> Result<Array<T>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
        return Err(Error::Dimension {
            op: "matmul",
            lhs: sa.to_vec(),
            rhs: sb.to_vec(),
        });
    }
    let (m, k, n) = (sa[0], sa[1], sb[1]);
    let mut out = vec![T::zero(); m * n];
    gemm_nn(&mut out, a.data(), b.data(), m, k, n);
    Ok(Array::from_parts(vec![m, n], out))
}

/// Batched product of rank-3 arrays: `[n×p×q] · [n×q×r]`, or `[n×p×q] · [n×r×q]ᵀ`
/// when `transpose_rhs` is set.
pub fn batch_matmul<T: Scalar>(
    a: &Array<T>,
    b: &Array<T>,
    transpose_rhs: bool,
) -> Result<Array<T>> {
    let (sa, sb) = (a.shape(), b.shape());
    let inner_b = if transpose_rhs { 2 } else { 1 };
    if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[inner_b] {
        return Err(Error::Dimension {
            op: "batch_matmul",
            lhs: sa.to_vec(),
            rhs: sb.to_vec(),
        });
    }
    let (batch, m, k) = (sa[0], sa[1], sa[2]);
    let n = if transpose_rhs { sb[1] } else { sb[2] };
    let mut out = vec![T::zero(); batch * m * n];
    for i in 0..batch {
        let o = &mut out[i * m * n..(i + 1) * m * n];
        let x = &a.data()[i * m * k..(i + 1) * m * k];
        let y = &b.data()[i * k * n..(i + 1) * k * n];
        if transpose_rhs {
            gemm_nt(o, x, y, m, k, n);
        } else {
            gemm_nn(o, x, y, m, k, n);
        }
    }
    Ok(Array::from_parts(vec![batch, m, n], out))
}

/// Softmax over the last axis, max-subtracted.
pub fn softmax<T: Scalar>(x: &Array<T>) -> Array<T> {
    let n = *x.shape().last().expect("rank ≥ 1");
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(n) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total = total + *v;
        }
        for v in row.iter_mut() {
            *v = *v / total;
        }
    }
    Array::from_parts(x.shape().to_vec(), out)
}

/// Layer normalization statistics kept for the backward pass.
pub(crate) struct LayerNormParts<T> {
    pub out: Vec<T>,
    pub xhat: Vec<T>,
    pub rstd: Vec<T>,
}

pub(crate) fn layer_norm_parts<T: Scalar>(
    x: &[T],
    gain: &[T],
    bias: &[T],
    eps: T,
) -> LayerNormParts<T> {
    let d = gain.len();
    let rows = x.len() / d;
    let inv_d = T::one() / T::of(d as f64);
    let mut out = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = vec![T::zero(); rows];
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().copied().sum::<T>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let rs = T::one() / (var + eps).sqrt();
        rstd[r] = rs;
        for j in 0..d {
            let h = (row[j] - mean) * rs;
            xhat[r * d + j] = h;
            out[r * d + j] = h * gain[j] + bias[j];
        }
    }
    LayerNormParts { out, xhat, rstd }
}

/// Per-row standardization over the last axis followed by an affine map.
pub fn layer_norm<T: Scalar>(
    x: &Array<T>,
    gain: &Array<T>,
    bias: &Array<T>,
    eps: f64,
) -> Result<Array<T>> {
    let d = *x.shape().last().expect("rank ≥ 1");
    if gain.shape() != [d] || bias.shape() != [d] {
        return Err(Error::Dimension {
            op: "layer_norm",
            lhs: x.shape().to_vec(),
            rhs: gain.shape().to_vec(),
        });
    }
    let parts = layer_norm_parts(x.data(), gain.data(), bias.data(), T::of(eps));
    Ok(Array::from_parts(x.shape().to_vec(), parts.out))
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// GELU, tanh form.
pub(crate) fn gelu_scalar<T: Scalar>(x: T) -> T {
    let half = T::of(0.5);
    let inner = T::of(GELU_C) * (x + T::of(GELU_A) * x * x * x);
    half * x * (T::one() + inner.tanh())
}

pub(crate) fn gelu_grad_scalar<T: Scalar>(x: T) -> T {
    let half = T::of(0.5);
    let inner = T::of(GELU_C) * (x + T::of(GELU_A) * x * x * x);
    let t = inner.tanh();
    let dinner = T::of(GELU_C) * (T::one() + T::of(3.0 * GELU_A) * x * x);
    half * (T::one() + t) + half * x * (T::one() - t * t) * dinner
}

pub fn gelu<T: Scalar>(x: &Array<T>) -> Array<T> {
    x.map(gelu_scalar)
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Walks every output multi-index in row-major order, yielding the source
/// offset computed from `src_strides` (one stride per output axis).
fn for_each_offset(out_shape: &[usize], src_strides: &[usize], mut f: impl FnMut(usize, usize)) {
    let rank = out_shape.len();
    let numel: usize = out_shape.iter().product();
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for dst in 0..numel {
        f(dst, src);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            src += src_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            src -= src_strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
}

/// Axis permutation: output axis `i` is input axis `axes[i]`.
pub fn permute<T: Scalar>(x: &Array<T>, axes: &[usize]) -> Result<Array<T>> {
    let shape = x.shape();
    let mut seen = vec![false; shape.len()];
    if axes.len() != shape.len() || axes.iter().any(|&a| a >= shape.len() || std::mem::replace(&mut seen[a], true)) {
        return Err(Error::Dimension {
            op: "permute",
            lhs: shape.to_vec(),
            rhs: axes.to_vec(),
        });
    }
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let src = x.data();
    let mut out = vec![T::zero(); x.numel()];
    for_each_offset(&out_shape, &src_strides, |d, s| out[d] = src[s]);
    Ok(Array::from_parts(out_shape, out))
}

/// Broadcasts size-1 axes of `x` up to `shape` (same rank required).
pub fn broadcast_to<T: Scalar>(x: &Array<T>, shape: &[usize]) -> Result<Array<T>> {
    let src_strides = broadcast_strides(x.shape(), shape)?;
    let src = x.data();
    let mut out = vec![T::zero(); shape.iter().product()];
    for_each_offset(shape, &src_strides, |d, s| out[d] = src[s]);
    Ok(Array::from_parts(shape.to_vec(), out))
}

pub(crate) fn broadcast_strides(from: &[usize], to: &[usize]) -> Result<Vec<usize>> {
    if from.len() != to.len() || from.iter().zip(to).any(|(&f, &t)| f != t && f != 1) {
        return Err(Error::Dimension {
            op: "broadcast_to",
            lhs: from.to_vec(),
            rhs: to.to_vec(),
        });
    }
    let s = strides(from);
    Ok(from
        .iter()
        .zip(s)
        .map(|(&f, st)| if f == 1 { 0 } else { st })
        .collect())
}

/// Sums `grad` (shaped `to`) back down onto the broadcast source shape `from`.
pub(crate) fn unbroadcast<T: Scalar>(grad: &[T], from: &[usize], to: &[usize]) -> Vec<T> {
    let src_strides = broadcast_strides(from, to).expect("validated in forward");
    let mut out = vec![T::zero(); from.iter().product()];
    for_each_offset(to, &src_strides, |d, s| out[s] = out[s] + grad[d]);
    out
}

/// Inverse of an axis permutation.
pub(crate) fn inverse_axes(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

/// `softmax(Q Kᵀ / √d) V` for a single head: `Q[q×d]`, `K[k×d]`, `V[k×d]`.
pub fn scaled_dot_attention<T: Scalar>(
    q: &Array<T>,
    k: &Array<T>,
    v: &Array<T>,
) -> Result<Array<T>> {
    let (sq, sk, sv) = (q.shape(), k.shape(), v.shape());
    if sq.len() != 2 || sk.len() != 2 || sv.len() != 2 || sq[1] != sk[1] || sk[0] != sv[0] {
        return Err(Error::Dimension {
            op: "scaled_dot_attention",
            lhs: sq.to_vec(),
            rhs: sk.to_vec(),
        });
    }
    let d = sq[1];
    let (nq, nk) = (sq[0], sk[0]);
    let mut scores = vec![T::zero(); nq * nk];
    gemm_nt(&mut scores, q.data(), k.data(), nq, d, nk);
    let scale = T::one() / T::of(d as f64).sqrt();
    let weights = softmax(&Array::from_parts(
        vec![nq, nk],
        scores.into_iter().map(|s| s * scale).collect(),
    ));
    matmul(&weights, v)
}
