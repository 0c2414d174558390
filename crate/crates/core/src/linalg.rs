//! Dense kernels on flat column-major buffers plus a few matrix helpers.

use nalgebra::DMatrix;
use num_traits::Float;

use crate::error::{Error, Result};

/// Floating point type the hot loops are generic over (`f32` or `f64`).
pub trait Real: Float + Default + Send + Sync + std::fmt::Debug + std::iter::Sum + 'static {
    fn of(x: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Real for f64 {
    #[inline]
    fn of(x: f64) -> Self {
        x
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}

impl Real for f32 {
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc = acc + x * y;
    }
    acc
}

#[inline]
pub fn norm_sq<T: Real>(a: &[T]) -> T {
    dot(a, a)
}

/// `out = a * b` with `a` of shape `rows x inner` and `b` of shape
/// `inner x cols`, all column-major.
pub fn matmul_into<T: Real>(out: &mut [T], a: &[T], b: &[T], rows: usize, inner: usize, cols: usize) {
    debug_assert_eq!(a.len(), rows * inner);
    debug_assert_eq!(b.len(), inner * cols);
    debug_assert_eq!(out.len(), rows * cols);
    for j in 0..cols {
        let out_col = &mut out[j * rows..(j + 1) * rows];
        out_col.iter_mut().for_each(|x| *x = T::zero());
        for l in 0..inner {
            let s = b[l + j * inner];
            if s == T::zero() {
                continue;
            }
            let a_col = &a[l * rows..(l + 1) * rows];
            for (o, &x) in out_col.iter_mut().zip(a_col) {
                *o = *o + x * s;
            }
        }
    }
}

/// Frobenius inner product of two equally shaped matrices.
pub fn frob_inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    dot(a.as_slice(), b.as_slice())
}

pub fn check_shape(m: &DMatrix<f64>, shape: (usize, usize)) -> Result<()> {
    if m.shape() != shape {
        return Err(Error::shape(shape, m.shape()));
    }
    Ok(())
}

/// Modified Gram-Schmidt with one re-orthogonalization pass.
///
/// Returns, for every input vector, either its orthonormalized residual or
/// `None` when the residual norm falls below `drop_tol` times the input's
/// own norm.
pub fn gram_schmidt(vectors: &[Vec<f64>], drop_tol: f64) -> Vec<Option<Vec<f64>>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut out = Vec::with_capacity(vectors.len());
    for v in vectors {
        let scale = norm_sq(v).sqrt();
        if scale == 0.0 {
            out.push(None);
            continue;
        }
        let mut w = v.clone();
        for _pass in 0..2 {
            for q in &basis {
                let c = dot(q, &w);
                w.iter_mut().zip(q).for_each(|(x, &qi)| *x -= c * qi);
            }
        }
        let nrm = norm_sq(&w).sqrt();
        if nrm < drop_tol * scale {
            out.push(None);
            continue;
        }
        w.iter_mut().for_each(|x| *x /= nrm);
        basis.push(w.clone());
        out.push(Some(w));
    }
    out
}

/// Singular values in descending order.
pub fn singular_values(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::SvdFailed);
    }
    let svd = m.clone().try_svd(false, false, f64::EPSILON, 10_000).ok_or(Error::SvdFailed)?;
    let mut s: Vec<f64> = svd.singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    Ok(s)
}

/// Flattens a matrix in row-major order.
pub fn to_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

pub fn from_row_major(rows: usize, cols: usize, data: &[f64]) -> Result<DMatrix<f64>> {
    if data.len() != rows * cols {
        return Err(Error::Malformed(format!(
            "matrix {rows}x{cols} needs {} entries, found {}",
            rows * cols,
            data.len()
        )));
    }
    Ok(DMatrix::from_row_slice(rows, cols, data))
}
