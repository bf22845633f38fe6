//! Elementary numeric kernels on [`Tensor`] values.
//!
//! Reductions accumulate sequentially in index order, so every kernel is
//! bit-reproducible for identical inputs.

use super::{numel, strides, Element, Tensor};
use crate::error::{Error, Result};

/// Epsilon used by every layer norm in the model.
pub const LAYER_NORM_EPS: f64 = 1e-5;

fn mismatch<T: Element>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn finish<T: Element>(op: &'static str, t: Tensor<T>) -> Result<Tensor<T>> {
    t.check_finite(op)?;
    Ok(t)
}

/// Row-major `out[i,j] += a[i,k] * b[k,j]` with `k` ascending.
fn gemm_into<T: Element>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for kk in 0..k {
            let aik = a[i * k + kk];
            let brow = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o = *o + aik * bv;
            }
        }
    }
}

/// Matrix product of `[m, k]` and `[k, n]`.
pub fn matmul<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(mismatch("matmul", a, b));
    }
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = vec![T::zero(); m * n];
    gemm_into(a.data(), b.data(), &mut out, m, k, n);
    finish("matmul", Tensor::from_parts(vec![m, n], out))
}

/// Batched matrix product of `[batch, m, k]` and `[batch, k, n]`.
pub fn bmm<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() != 3 || b.rank() != 3 || a.shape()[0] != b.shape()[0] || a.shape()[2] != b.shape()[1]
    {
        return Err(mismatch("bmm", a, b));
    }
    let (batch, m, k, n) = (a.shape()[0], a.shape()[1], a.shape()[2], b.shape()[2]);
    let mut out = vec![T::zero(); batch * m * n];
    for bi in 0..batch {
        gemm_into(
            &a.data()[bi * m * k..(bi + 1) * m * k],
            &b.data()[bi * k * n..(bi + 1) * k * n],
            &mut out[bi * m * n..(bi + 1) * m * n],
            m,
            k,
            n,
        );
    }
    finish("bmm", Tensor::from_parts(vec![batch, m, n], out))
}

/// True when `small` broadcasts onto `big`: equal rank, each dim equal or 1.
pub fn broadcasts_onto(small: &[usize], big: &[usize]) -> bool {
    small.len() == big.len() && small.iter().zip(big).all(|(&s, &b)| s == b || s == 1)
}

/// Flat index into a broadcast operand for every element of the output.
fn broadcast_offsets(small: &[usize], big: &[usize]) -> Vec<usize> {
    let small_strides = strides(small);
    let eff: Vec<usize> = small
        .iter()
        .zip(&small_strides)
        .map(|(&d, &s)| if d == 1 { 0 } else { s })
        .collect();
    let rank = big.len();
    let mut offsets = Vec::with_capacity(numel(big));
    let mut index = vec![0usize; rank];
    let mut offset = 0usize;
    for _ in 0..numel(big) {
        offsets.push(offset);
        for d in (0..rank).rev() {
            index[d] += 1;
            offset += eff[d];
            if index[d] < big[d] {
                break;
            }
            offset -= eff[d] * big[d];
            index[d] = 0;
        }
    }
    offsets
}

fn broadcast_binary<T: Element>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return finish(op, Tensor::from_parts(a.shape().to_vec(), data));
    }
    if !broadcasts_onto(b.shape(), a.shape()) {
        return Err(mismatch(op, a, b));
    }
    // trailing-block fast path: b repeats every b.len() elements of a
    let lead_ones = b.shape().iter().take_while(|&&d| d == 1).count();
    if b.shape()[lead_ones..] == a.shape()[lead_ones..] {
        let bl = b.len();
        let data = a
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, b.data()[i % bl]))
            .collect();
        return finish(op, Tensor::from_parts(a.shape().to_vec(), data));
    }
    let offsets = broadcast_offsets(b.shape(), a.shape());
    let data = a
        .data()
        .iter()
        .zip(offsets)
        .map(|(&x, o)| f(x, b.data()[o]))
        .collect();
    finish(op, Tensor::from_parts(a.shape().to_vec(), data))
}

/// `a + b`, with `b` broadcast onto `a`'s shape.
pub fn add<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    broadcast_binary("add", a, b, |x, y| x + y)
}

/// `a - b`, with `b` broadcast onto `a`'s shape.
pub fn sub<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    broadcast_binary("sub", a, b, |x, y| x - y)
}

/// `a * b` elementwise, with `b` broadcast onto `a`'s shape.
pub fn mul<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    broadcast_binary("mul", a, b, |x, y| x * y)
}

pub fn scale<T: Element>(a: &Tensor<T>, s: T) -> Result<Tensor<T>> {
    finish("scale", a.map(|v| v * s))
}

/// Sums `g` down to `shape` over the axes where `shape` has extent 1.
pub fn sum_to_shape<T: Element>(g: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
    if g.shape() == shape {
        return Ok(g.clone());
    }
    if !broadcasts_onto(shape, g.shape()) {
        return Err(Error::ShapeMismatch {
            op: "sum_to_shape",
            lhs: g.shape().to_vec(),
            rhs: shape.to_vec(),
        });
    }
    let offsets = broadcast_offsets(shape, g.shape());
    let mut out = vec![T::zero(); numel(shape)];
    for (&v, o) in g.data().iter().zip(offsets) {
        out[o] = out[o] + v;
    }
    finish("sum_to_shape", Tensor::from_parts(shape.to_vec(), out))
}

/// Sum of all elements as a one-element tensor.
pub fn sum<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let total = x.data().iter().fold(T::zero(), |acc, &v| acc + v);
    finish("sum", Tensor::scalar(total))
}

fn outer_inner(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (numel(&shape[..axis]), shape[axis], numel(&shape[axis + 1..]))
}

/// Max-shifted softmax along `axis`.
pub fn softmax<T: Element>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    if axis >= x.rank() {
        return Err(Error::InvalidAxis {
            op: "softmax",
            axis,
            rank: x.rank(),
        });
    }
    let (outer, extent, inner) = outer_inner(x.shape(), axis);
    let src = x.data();
    let mut out = vec![T::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |e: usize| (o * extent + e) * inner + i;
            let max = (0..extent).fold(T::neg_infinity(), |m, e| m.max(src[at(e)]));
            let mut total = T::zero();
            for e in 0..extent {
                let v = (src[at(e)] - max).exp();
                out[at(e)] = v;
                total = total + v;
            }
            for e in 0..extent {
                out[at(e)] = out[at(e)] / total;
            }
        }
    }
    finish("softmax", Tensor::from_parts(x.shape().to_vec(), out))
}

/// Layer norm over the last axis; also returns the normalized input and the
/// per-row reciprocal standard deviation for reuse in the backward pass.
pub(crate) fn layer_norm_parts<T: Element>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Result<(Tensor<T>, Tensor<T>, Vec<T>)> {
    let c = *x.shape().last().expect("rank >= 1");
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(mismatch("layer_norm", x, gamma));
    }
    let rows = x.len() / c;
    let inv_c = T::one() / T::of(c as f64);
    let mut xhat = vec![T::zero(); x.len()];
    let mut out = vec![T::zero(); x.len()];
    let mut rstds = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = &x.data()[r * c..(r + 1) * c];
        let mean = row.iter().fold(T::zero(), |acc, &v| acc + v) * inv_c;
        let var = row.iter().fold(T::zero(), |acc, &v| acc + (v - mean) * (v - mean)) * inv_c;
        let rstd = T::one() / (var + eps).sqrt();
        rstds.push(rstd);
        for j in 0..c {
            let h = (row[j] - mean) * rstd;
            xhat[r * c + j] = h;
            out[r * c + j] = h * gamma.data()[j] + beta.data()[j];
        }
    }
    let shape = x.shape().to_vec();
    Ok((
        finish("layer_norm", Tensor::from_parts(shape.clone(), out))?,
        Tensor::from_parts(shape, xhat),
        rstds,
    ))
}

pub fn layer_norm<T: Element>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Result<Tensor<T>> {
    layer_norm_parts(x, gamma, beta, eps).map(|(y, _, _)| y)
}

/// Exact GELU, `x * Phi(x)` with the error-function form of the normal CDF.
pub fn gelu<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    finish("gelu", x.map(gelu_scalar))
}

pub(crate) fn gelu_scalar<T: Element>(x: T) -> T {
    let half = T::of(0.5);
    x * half * (T::one() + (x * T::of(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

/// d/dx of [`gelu_scalar`]: `Phi(x) + x * phi(x)`.
pub(crate) fn gelu_grad_scalar<T: Element>(x: T) -> T {
    let half = T::of(0.5);
    let cdf = half * (T::one() + (x * T::of(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-(x * x) * half).exp() * T::of(0.398_942_280_401_432_7);
    cdf + x * pdf
}

/// Affine map over the trailing axis: `x[..., Cin] @ w[Cin, Cout] + b[Cout]`.
pub fn linear<T: Element>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let cin = *x.shape().last().expect("rank >= 1");
    if w.rank() != 2 || w.shape()[0] != cin {
        return Err(mismatch("linear", x, w));
    }
    let cout = w.shape()[1];
    let rows = x.len() / cin;
    let flat = x.reshape([rows, cin])?;
    let mut y = matmul(&flat, w)?;
    if let Some(b) = b {
        if b.shape() != [cout] {
            return Err(mismatch("linear", &y, b));
        }
        y = add(&y, &b.reshape([1, cout])?)?;
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().expect("rank >= 1") = cout;
    y.into_reshape(shape)
}

/// Channel-wise spatial mean of an `[H, W, C]` map, shaped `[1, 1, C]`.
pub fn global_avg_pool<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    if x.rank() != 3 {
        return Err(Error::InvalidShape {
            shape: x.shape().to_vec(),
            reason: "global_avg_pool expects [H, W, C]".into(),
        });
    }
    let c = x.shape()[2];
    let positions = x.shape()[0] * x.shape()[1];
    let mut acc = vec![T::zero(); c];
    for p in 0..positions {
        for (a, &v) in acc.iter_mut().zip(&x.data()[p * c..(p + 1) * c]) {
            *a = *a + v;
        }
    }
    let inv = T::one() / T::of(positions as f64);
    let data = acc.into_iter().map(|v| v * inv).collect();
    finish("global_avg_pool", Tensor::from_parts(vec![1, 1, c], data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_examples() {
        let a = t(&[3, 3], &[1.0, -2.0, 3.5, 0.0, 4.0, 1.0, 7.0, 2.0, -1.0]);
        assert_eq!(matmul(&Tensor::eye(3).unwrap(), &a).unwrap(), a);
        let p = matmul(&t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]), &t(&[2, 1], &[1.0, 1.0])).unwrap();
        assert_eq!(p, t(&[2, 1], &[3.0, 7.0]));
        let z = matmul(&Tensor::zeros([3, 3]).unwrap(), &a).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
        assert!(matches!(
            matmul(&a, &t(&[2, 1], &[1.0, 1.0])),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn softmax_examples() {
        let u = softmax(&t(&[3], &[0.0, 0.0, 0.0]), 0).unwrap();
        for &v in u.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let big = softmax(&Tensor::<f32>::new([2], vec![1000.0, 1000.0]).unwrap(), 0).unwrap();
        assert_eq!(big.data(), &[0.5, 0.5]);
        let logs = softmax(&t(&[3], &[1f64.ln(), 2f64.ln(), 3f64.ln()]), 0).unwrap();
        for (v, want) in logs.data().iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
            assert!((v - want).abs() < 1e-15);
        }
        assert!(softmax(&u, 1).is_err());
    }

    #[test]
    fn softmax_along_inner_axis() {
        let x = t(&[2, 3], &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        let y = softmax(&x, 0).unwrap();
        for col in 0..3 {
            let s = y.at(&[0, col]) + y.at(&[1, col]);
            assert!((s - 1.0).abs() < 1e-12);
            assert!((y.at(&[1, col]) - 1.0 / (1.0 + (-3f64).exp())).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_examples() {
        let ones = Tensor::ones([2]).unwrap();
        let zeros = Tensor::zeros([2]).unwrap();
        let y = layer_norm(&t(&[2], &[1.0, 3.0]), &ones, &zeros, 0.0).unwrap();
        assert_eq!(y, t(&[2], &[-1.0, 1.0]));
        let c = layer_norm(&t(&[1, 2], &[5.0, 5.0]), &ones, &zeros, 1e-5).unwrap();
        assert!(c.data().iter().all(|&v| v == 0.0));
        assert!(layer_norm(&t(&[3], &[1.0, 2.0, 3.0]), &ones, &zeros, 1e-5).is_err());
    }

    #[test]
    fn layer_norm_normalizes_random_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = 16;
        let x = Tensor::from_fn([8, c], |_| rng.gen_range(-5.0..5.0)).unwrap();
        let y = layer_norm(&x, &Tensor::ones([c]).unwrap(), &Tensor::zeros([c]).unwrap(), LAYER_NORM_EPS)
            .unwrap();
        for r in 0..8 {
            let row = &y.data()[r * c..(r + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn gelu_examples() {
        let y = gelu(&t(&[4], &[0.0, 30.0, -30.0, 1.0])).unwrap();
        assert_eq!(y.data()[0], 0.0);
        assert!((y.data()[1] - 30.0).abs() < 1e-12);
        assert!(y.data()[2].abs() < 1e-12);
        // x * Phi(x) at x = 1 via the statrs normal CDF
        let phi = statrs::distribution::ContinuousCDF::cdf(
            &statrs::distribution::Normal::new(0.0, 1.0).unwrap(),
            1.0,
        );
        assert!((y.data()[3] - phi).abs() < 1e-9);
        assert!((y.data()[3] - 0.841_344_7).abs() < 1e-7);
    }

    #[test]
    fn linear_examples() {
        let x = t(&[1, 2], &[1.0, 1.0]);
        let y = linear(&x, &Tensor::eye(2).unwrap(), Some(&t(&[2], &[1.0, 1.0]))).unwrap();
        assert_eq!(y, t(&[1, 2], &[2.0, 2.0]));
        let b = t(&[3], &[0.5, -1.0, 2.0]);
        let rows = linear(&Tensor::ones([2, 2, 2]).unwrap(), &Tensor::zeros([2, 3]).unwrap(), Some(&b))
            .unwrap();
        assert_eq!(rows.shape(), &[2, 2, 3]);
        for chunk in rows.data().chunks(3) {
            assert_eq!(chunk, b.data());
        }
        let x = t(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(linear(&x, &Tensor::eye(2).unwrap(), None).unwrap(), x);
        assert!(linear(&x, &Tensor::eye(3).unwrap(), None).is_err());
    }

    #[test]
    fn pool_examples() {
        let c = Tensor::<f64>::full([3, 2, 2], 1.5).unwrap();
        assert_eq!(global_avg_pool(&c).unwrap().data(), &[1.5, 1.5]);
        let one = t(&[1, 1, 3], &[1.0, 2.0, 3.0]);
        assert_eq!(global_avg_pool(&one).unwrap(), one);
        let sq = t(&[2, 2, 1], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(global_avg_pool(&sq).unwrap().data(), &[2.5]);
    }

    #[test]
    fn broadcast_middle_axis() {
        let a = Tensor::<f64>::zeros([2, 3, 2]).unwrap();
        let b = t(&[2, 1, 2], &[1.0, 2.0, 3.0, 4.0]);
        let y = add(&a, &b).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0, 3.0, 4.0, 3.0, 4.0, 3.0, 4.0]);
        let back = sum_to_shape(&y, &[2, 1, 2]).unwrap();
        assert_eq!(back.data(), &[3.0, 6.0, 9.0, 12.0]);
        assert!(add(&b, &a).is_err());
    }

    #[test]
    fn non_finite_is_an_error() {
        let x = t(&[1], &[1e300]);
        assert!(matches!(mul(&x, &x), Err(Error::NonFinite { op: "mul" })));
    }

    #[test]
    fn softmax_rows_sum_to_one_for_random_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let n = rng.gen_range(1..40);
            let spread: f64 = rng.gen_range(0.1..50.0);
            let row64 = Tensor::from_fn([n], |_| rng.gen_range(-spread..spread)).unwrap();
            let s64: f64 = softmax(&row64, 0).unwrap().data().iter().sum();
            assert!((s64 - 1.0).abs() < 1e-12);
            let s32: f32 = softmax(&row64.cast::<f32>(), 0).unwrap().data().iter().sum();
            assert!((s32 - 1.0).abs() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn matmul_is_bit_reproducible(m in 1usize..6, k in 1usize..6, n in 1usize..6, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = Tensor::<f32>::from_fn([m, k], |_| rng.gen_range(-1.0..1.0)).unwrap();
            let b = Tensor::<f32>::from_fn([k, n], |_| rng.gen_range(-1.0..1.0)).unwrap();
            let first = matmul(&a, &b).unwrap();
            let second = matmul(&a, &b).unwrap();
            prop_assert!(first.data().iter().zip(second.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }
}
