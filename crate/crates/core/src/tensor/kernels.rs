//! Forward kernels. Each is a pure function of its inputs; the autodiff
//! [`Graph`](super::Graph) wraps these and adds the matching backward rules.

use super::{gemm, Element, Tensor};
use crate::error::{Error, Result};

/// `sqrt(2/pi)` for the tanh form of GELU.
const GELU_C: f64 = 0.797_884_560_802_865_4;
const GELU_A: f64 = 0.044_715;

/// How two operands of a batched matmul line up.
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct MatmulPlan {
    pub batch: usize,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub a_batched: bool,
    pub b_batched: bool,
    pub out_shape: Vec<usize>,
}

/// Leading dimensions must be equal, or one side must be a plain matrix
/// shared across the other side's batch.
pub(crate) fn matmul_plan(a: &[usize], b: &[usize]) -> Result<MatmulPlan> {
    let mismatch = || Error::Shape(format!("matmul: cannot multiply {a:?} by {b:?}"));
    if a.len() < 2 || b.len() < 2 {
        return Err(mismatch());
    }
    let (a_lead, a_mat) = a.split_at(a.len() - 2);
    let (b_lead, b_mat) = b.split_at(b.len() - 2);
    let (m, k) = (a_mat[0], a_mat[1]);
    let (k2, n) = (b_mat[0], b_mat[1]);
    if k != k2 {
        return Err(mismatch());
    }
    let lead: &[usize] = if a_lead == b_lead || b_lead.is_empty() {
        a_lead
    } else if a_lead.is_empty() {
        b_lead
    } else {
        return Err(mismatch());
    };
    let mut out_shape = lead.to_vec();
    out_shape.extend([m, n]);
    Ok(MatmulPlan {
        batch: lead.iter().product(),
        m,
        k,
        n,
        a_batched: !a_lead.is_empty(),
        b_batched: !b_lead.is_empty(),
        out_shape,
    })
}

pub fn matmul<F: Element>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    let plan = matmul_plan(a.shape(), b.shape())?;
    let MatmulPlan { batch, m, k, n, .. } = plan;
    let mut out = vec![F::zero(); batch * m * n];
    match (plan.a_batched, plan.b_batched) {
        // A single shared rhs: fold the batch into the row dimension.
        (_, false) => gemm(batch * m, k, n, a.data(), false, b.data(), false, &mut out, false),
        (a_batched, true) => {
            for i in 0..batch {
                let a_slice = if a_batched {
                    &a.data()[i * m * k..(i + 1) * m * k]
                } else {
                    a.data()
                };
                gemm(
                    m,
                    k,
                    n,
                    a_slice,
                    false,
                    &b.data()[i * k * n..(i + 1) * k * n],
                    false,
                    &mut out[i * m * n..(i + 1) * m * n],
                    false,
                );
            }
        }
    }
    Tensor::new(plan.out_shape, out)
}

/// Row-wise softmax. With `causal`, the tensor is read as a stack of square
/// `L×L` score matrices and entry `(i, j)` with `j > i` is masked out.
pub(crate) fn softmax_rows<F: Element>(x: &[F], cols: usize, causal: bool) -> Vec<F> {
    let mut out = vec![F::zero(); x.len()];
    if cols == 0 {
        return out;
    }
    for (r, (row, dst)) in x.chunks(cols).zip(out.chunks_mut(cols)).enumerate() {
        let visible = if causal { (r % cols) + 1 } else { cols };
        let max = row[..visible]
            .iter()
            .fold(F::neg_infinity(), |acc, &v| acc.max(v));
        let mut sum = F::zero();
        for (d, &v) in dst[..visible].iter_mut().zip(&row[..visible]) {
            *d = (v - max).exp();
            sum = sum + *d;
        }
        let inv = F::one() / sum;
        for d in &mut dst[..visible] {
            *d = *d * inv;
        }
    }
    out
}

pub fn softmax_lastdim<F: Element>(t: &Tensor<F>) -> Result<Tensor<F>> {
    if t.rank() == 0 || t.last_dim() == 0 {
        return Err(Error::Shape(format!(
            "softmax needs a non-empty last dimension, got {:?}",
            t.shape()
        )));
    }
    Tensor::new(t.shape().to_vec(), softmax_rows(t.data(), t.last_dim(), false))
}

pub fn softmax_causal<F: Element>(t: &Tensor<F>) -> Result<Tensor<F>> {
    let r = t.rank();
    if r < 2 || t.shape()[r - 1] != t.shape()[r - 2] || t.last_dim() == 0 {
        return Err(Error::Shape(format!(
            "causal softmax needs square trailing dims, got {:?}",
            t.shape()
        )));
    }
    Tensor::new(t.shape().to_vec(), softmax_rows(t.data(), t.last_dim(), true))
}

/// Normalized values and per-row inverse standard deviations.
pub(crate) struct NormStats<F> {
    pub xhat: Vec<F>,
    pub inv_std: Vec<F>,
}

pub(crate) fn normalize_rows<F: Element>(x: &[F], cols: usize, eps: F) -> NormStats<F> {
    let mut xhat = vec![F::zero(); x.len()];
    let mut inv_std = Vec::with_capacity(x.len() / cols.max(1));
    let nf = F::of(cols as f64);
    for (row, dst) in x.chunks(cols).zip(xhat.chunks_mut(cols)) {
        let mean = row.iter().copied().sum::<F>() / nf;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / nf;
        let is = F::one() / (var + eps).sqrt();
        for (d, &v) in dst.iter_mut().zip(row) {
            *d = (v - mean) * is;
        }
        inv_std.push(is);
    }
    NormStats { xhat, inv_std }
}

pub(crate) fn check_norm_params<F: Element>(
    x: &[usize],
    gain: &Tensor<F>,
    bias: &Tensor<F>,
) -> Result<usize> {
    let cols = x.last().copied().unwrap_or(0);
    if cols == 0 || gain.len() != cols || bias.len() != cols {
        return Err(Error::Shape(format!(
            "layer_norm: input {:?} with gain {:?} and bias {:?}",
            x,
            gain.shape(),
            bias.shape()
        )));
    }
    Ok(cols)
}

pub fn layer_norm<F: Element>(
    t: &Tensor<F>,
    gain: &Tensor<F>,
    bias: &Tensor<F>,
    eps: F,
) -> Result<Tensor<F>> {
    let cols = check_norm_params(t.shape(), gain, bias)?;
    if eps <= F::zero() {
        return Err(Error::Input("layer_norm eps must be positive".into()));
    }
    let stats = normalize_rows(t.data(), cols, eps);
    Tensor::new(t.shape().to_vec(), affine_rows(&stats.xhat, gain.data(), bias.data()))
}

pub(crate) fn affine_rows<F: Element>(xhat: &[F], gain: &[F], bias: &[F]) -> Vec<F> {
    let cols = gain.len();
    let mut out = Vec::with_capacity(xhat.len());
    for row in xhat.chunks(cols) {
        out.extend(row.iter().zip(gain).zip(bias).map(|((&x, &g), &b)| x * g + b));
    }
    out
}

/// `1 − 2/(e^{2u} + 1)`; saturates cleanly at ±1 and is several times
/// cheaper than libm `tanh`. Absolute error stays at the unit roundoff.
#[inline]
fn tanh<F: Element>(u: F) -> F {
    F::one() - F::of(2.0) / ((u + u).exp() + F::one())
}

#[inline]
pub(crate) fn gelu_scalar<F: Element>(x: F) -> F {
    let u = F::of(GELU_C) * (x + F::of(GELU_A) * x * x * x);
    F::of(0.5) * x * (F::one() + tanh(u))
}

#[inline]
pub(crate) fn gelu_grad_scalar<F: Element>(x: F) -> F {
    let u = F::of(GELU_C) * (x + F::of(GELU_A) * x * x * x);
    let th = tanh(u);
    let du = F::of(GELU_C) * (F::one() + F::of(3.0 * GELU_A) * x * x);
    F::of(0.5) * (F::one() + th) + F::of(0.5) * x * (F::one() - th * th) * du
}

pub fn gelu<F: Element>(t: &Tensor<F>) -> Tensor<F> {
    let data = t.data().iter().map(|&x| gelu_scalar(x)).collect();
    Tensor::new(t.shape().to_vec(), data).expect("same shape")
}

/// Source range `[floor(i·n/t), ceil((i+1)·n/t))` of output position `i`.
///
/// Consecutive bins may share a frame when `t` does not divide `n`, and
/// repeat frames when `n < t`; every bin is non-empty.
#[inline]
pub fn pool_bin(i: usize, n: usize, t: usize) -> (usize, usize) {
    let start = i * n / t;
    let end = ((i + 1) * n).div_ceil(t);
    (start, end)
}

/// Mean-pool a `[B, N, H]` tensor along `N` to `[B, T, H]`.
pub fn adaptive_pool<F: Element>(x: &Tensor<F>, target: usize) -> Result<Tensor<F>> {
    let &[b, n, h] = x.shape() else {
        return Err(Error::Shape(format!(
            "adaptive_pool expects [B, N, H], got {:?}",
            x.shape()
        )));
    };
    if n == 0 || target == 0 {
        return Err(Error::Input(format!(
            "adaptive_pool needs N >= 1 and T >= 1 (N={n}, T={target})"
        )));
    }
    let src = x.data();
    let mut out = vec![F::zero(); b * target * h];
    for bi in 0..b {
        for i in 0..target {
            let (s, e) = pool_bin(i, n, target);
            let inv = F::one() / F::of((e - s) as f64);
            let dst = &mut out[(bi * target + i) * h..(bi * target + i + 1) * h];
            for j in s..e {
                let row = &src[(bi * n + j) * h..(bi * n + j + 1) * h];
                for (d, &v) in dst.iter_mut().zip(row) {
                    *d = *d + v;
                }
            }
            for d in dst.iter_mut() {
                *d = *d * inv;
            }
        }
    }
    Tensor::new(vec![b, target, h], out)
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

pub(crate) fn check_perm(rank: usize, perm: &[usize]) -> Result<()> {
    let mut seen = vec![false; rank];
    if perm.len() != rank {
        return Err(Error::Shape(format!("permutation {perm:?} for rank {rank}")));
    }
    for &p in perm {
        if p >= rank || seen[p] {
            return Err(Error::Shape(format!("invalid permutation {perm:?}")));
        }
        seen[p] = true;
    }
    Ok(())
}

/// Output axis `i` is input axis `perm[i]`.
pub fn permute<F: Element>(x: &Tensor<F>, perm: &[usize]) -> Result<Tensor<F>> {
    check_perm(x.rank(), perm)?;
    let in_strides = strides(x.shape());
    let out_shape: Vec<usize> = perm.iter().map(|&p| x.shape()[p]).collect();
    if x.is_empty() || x.rank() == 0 {
        return Tensor::new(out_shape, x.data().to_vec());
    }
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let rank = out_shape.len();
    let (inner, inner_stride) = (out_shape[rank - 1], src_strides[rank - 1]);
    let outer = &out_shape[..rank - 1];
    let mut out = Vec::with_capacity(x.len());
    let mut idx = vec![0usize; rank - 1];
    let src = x.data();
    loop {
        let base: usize = idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum();
        if inner_stride == 1 {
            out.extend_from_slice(&src[base..base + inner]);
        } else {
            out.extend((0..inner).map(|j| src[base + j * inner_stride]));
        }
        // odometer over the outer axes
        let mut axis = outer.len();
        loop {
            if axis == 0 {
                return Tensor::new(out_shape, out);
            }
            axis -= 1;
            idx[axis] += 1;
            if idx[axis] < outer[axis] {
                break;
            }
            idx[axis] = 0;
        }
    }
}

pub(crate) fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// (outer, inner) block sizes around `axis`.
fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, inner)
}

pub fn concat<F: Element>(a: &Tensor<F>, b: &Tensor<F>, axis: usize) -> Result<Tensor<F>> {
    let ok = a.rank() == b.rank()
        && axis < a.rank()
        && a
            .shape()
            .iter()
            .zip(b.shape())
            .enumerate()
            .all(|(i, (x, y))| i == axis || x == y);
    if !ok {
        return Err(Error::Shape(format!(
            "concat along axis {axis}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (outer, inner) = split_at_axis(a.shape(), axis);
    let (na, nb) = (a.shape()[axis] * inner, b.shape()[axis] * inner);
    let mut out = Vec::with_capacity(a.len() + b.len());
    for o in 0..outer {
        out.extend_from_slice(&a.data()[o * na..(o + 1) * na]);
        out.extend_from_slice(&b.data()[o * nb..(o + 1) * nb]);
    }
    let mut shape = a.shape().to_vec();
    shape[axis] += b.shape()[axis];
    Tensor::new(shape, out)
}

pub fn narrow<F: Element>(x: &Tensor<F>, axis: usize, start: usize, len: usize) -> Result<Tensor<F>> {
    if axis >= x.rank() || start + len > x.shape()[axis] {
        return Err(Error::Shape(format!(
            "narrow axis {axis} range {start}..{} of {:?}",
            start + len,
            x.shape()
        )));
    }
    let (outer, inner) = split_at_axis(x.shape(), axis);
    let full = x.shape()[axis] * inner;
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = o * full + start * inner;
        out.extend_from_slice(&x.data()[base..base + len * inner]);
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = len;
    Tensor::new(shape, out)
}

pub(crate) fn narrow_backward<F: Element>(
    g: &[F],
    in_shape: &[usize],
    axis: usize,
    start: usize,
    len: usize,
) -> Vec<F> {
    let (outer, inner) = split_at_axis(in_shape, axis);
    let full = in_shape[axis] * inner;
    let mut out = vec![F::zero(); outer * full];
    for o in 0..outer {
        let base = o * full + start * inner;
        out[base..base + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape.to_vec(), v).unwrap()
    }

    /// Naive triple loop over row-major 2-D operands.
    fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn matmul_identity() {
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let eye = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(matmul(&a, &eye).unwrap().data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_column_vector() {
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = t(&[2, 1], &[5.0, 6.0]);
        let expected = naive_matmul(a.data(), b.data(), 2, 2, 1);
        assert_eq!(expected, vec![17.0, 39.0]);
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 1]);
        assert_eq!(c.data(), expected.as_slice());
    }

    #[test]
    fn matmul_zero_lhs() {
        let a = Tensor::<f64>::zeros(vec![2, 3]);
        let b = t(&[3, 4], &(0..12).map(|x| x as f64 + 0.5).collect::<Vec<_>>());
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 4]);
        assert!(c.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::<f32>::zeros(vec![2, 3]);
        let b = Tensor::<f32>::zeros(vec![2, 3]);
        let msg = matmul(&a, &b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn matmul_batched_against_naive() {
        let a: Vec<f64> = (0..2 * 3 * 4).map(|x| (x as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..2 * 4 * 5).map(|x| (x as f64 * 0.11).cos()).collect();
        let at = t(&[2, 3, 4], &a);
        let bt = t(&[2, 4, 5], &b);
        let c = matmul(&at, &bt).unwrap();
        for i in 0..2 {
            let want = naive_matmul(&a[i * 12..(i + 1) * 12], &b[i * 20..(i + 1) * 20], 3, 4, 5);
            for (x, y) in c.data()[i * 15..(i + 1) * 15].iter().zip(&want) {
                assert!((x - y).abs() < 1e-12);
            }
        }
        // Shared rhs.
        let shared = t(&[4, 5], &b[..20]);
        let c2 = matmul(&at, &shared).unwrap();
        assert_eq!(c2.shape(), &[2, 3, 5]);
        let want = naive_matmul(&a[12..24], &b[..20], 3, 4, 5);
        for (x, y) in c2.data()[15..].iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_uniform_and_ratio() {
        let s = softmax_lastdim(&t(&[4], &[0.0; 4])).unwrap();
        assert!(s.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
        let s = softmax_lastdim(&t(&[2], &[1f64.ln(), 3f64.ln()])).unwrap();
        assert!((s.data()[0] - 0.25).abs() < 1e-12);
        assert!((s.data()[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn softmax_shift_invariant() {
        let x = [0.3, -1.2, 2.5, 0.0];
        let a = softmax_lastdim(&t(&[4], &x)).unwrap();
        let shifted: Vec<f64> = x.iter().map(|v| v + 123.4).collect();
        let b = softmax_lastdim(&t(&[4], &shifted)).unwrap();
        for (p, q) in a.data().iter().zip(b.data()) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_causal_masks_future() {
        let s = softmax_causal(&t(&[3, 3], &[0.0; 9])).unwrap();
        let d = s.data();
        assert_eq!(&d[0..3], &[1.0, 0.0, 0.0]);
        assert!((d[3] - 0.5).abs() < 1e-15 && d[5] == 0.0);
        assert!((d[8] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn layer_norm_cases() {
        let ones = t(&[3], &[1.0; 3]);
        let zeros = t(&[3], &[0.0; 3]);
        let y = layer_norm(&t(&[3], &[5.0; 3]), &ones, &zeros, 1e-5).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));

        let y = layer_norm(&t(&[2], &[1.0, -1.0]), &t(&[2], &[1.0; 2]), &t(&[2], &[0.0; 2]), 1e-12)
            .unwrap();
        assert!((y.data()[0] - 1.0).abs() < 1e-9 && (y.data()[1] + 1.0).abs() < 1e-9);

        let b = t(&[3], &[0.5, -2.0, 7.0]);
        let y = layer_norm(&t(&[2, 3], &[1.0, 9.0, -3.0, 4.0, 4.5, 0.1]), &zeros, &b, 1e-5).unwrap();
        assert_eq!(y.data(), &[0.5, -2.0, 7.0, 0.5, -2.0, 7.0]);
    }

    #[test]
    fn layer_norm_rejects_mismatched_gain() {
        let x = Tensor::<f64>::zeros(vec![2, 3]);
        let g = Tensor::<f64>::zeros(vec![2]);
        assert!(layer_norm(&x, &g, &g, 1e-5).is_err());
    }

    #[test]
    fn pool_bins_follow_floor_ceil_rule() {
        assert_eq!(pool_bin(0, 3, 2), (0, 2));
        assert_eq!(pool_bin(1, 3, 2), (1, 3));
        for n in 1..20 {
            for tt in 1..20 {
                for i in 0..tt {
                    let (s, e) = pool_bin(i, n, tt);
                    assert!(s < e && e <= n);
                }
            }
        }
    }

    #[test]
    fn adaptive_pool_examples() {
        let p = adaptive_pool(&t(&[1, 4, 1], &[1.0, 2.0, 3.0, 4.0]), 2).unwrap();
        assert_eq!(p.data(), &[1.5, 3.5]);
        let p = adaptive_pool(&t(&[1, 3, 1], &[1.0, 2.0, 3.0]), 2).unwrap();
        assert_eq!(p.data(), &[1.5, 2.5]);
        let x = t(&[1, 3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(adaptive_pool(&x, 3).unwrap(), x);
        let one = adaptive_pool(&t(&[1, 1, 2], &[7.0, 8.0]), 4).unwrap();
        assert_eq!(one.data(), &[7.0, 8.0, 7.0, 8.0, 7.0, 8.0, 7.0, 8.0]);
    }

    #[test]
    fn permute_roundtrip() {
        let x = t(&[2, 3, 4], &(0..24).map(|v| v as f64).collect::<Vec<_>>());
        let p = permute(&x, &[2, 0, 1]).unwrap();
        assert_eq!(p.shape(), &[4, 2, 3]);
        // p[c, a, b] == x[a, b, c]
        assert_eq!(p.data()[1 * 6 + 1 * 3 + 2], x.data()[1 * 12 + 2 * 4 + 1]);
        let back = permute(&p, &inverse_perm(&[2, 0, 1])).unwrap();
        assert_eq!(back, x);
        assert!(permute(&x, &[0, 0, 1]).is_err());
    }

    #[test]
    fn concat_and_narrow() {
        let a = t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = t(&[1, 1, 2], &[5.0, 6.0]);
        let c = concat(&a, &b, 1).unwrap();
        assert_eq!(c.shape(), &[1, 3, 2]);
        assert_eq!(c.data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(narrow(&c, 1, 2, 1).unwrap(), b);
        assert_eq!(narrow(&c, 1, 0, 2).unwrap(), a);
        assert!(concat(&a, &t(&[1, 1, 3], &[0.0; 3]), 1).is_err());
    }

    #[test]
    fn gelu_reference_points() {
        assert_eq!(gelu_scalar(0.0f64), 0.0);
        // tanh-form GELU(1) = 0.5·(1 + tanh(sqrt(2/pi)·1.044715))
        let want = 0.5 * (1.0 + (GELU_C * 1.044715f64).tanh());
        assert!((gelu_scalar(1.0f64) - want).abs() < 1e-15);
        assert!(gelu_scalar(-10.0f64).abs() < 1e-12);
    }
}
