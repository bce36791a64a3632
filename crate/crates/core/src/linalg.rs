//! Dense complex linear-algebra primitives shared by every beamformer design.
//!
//! All routines are pure and deterministic. Eigenvectors and singular vectors
//! are only defined up to a unit-modulus factor, so every vector returned here
//! is rotated until its first non-negligible component is real and positive.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// Singular values below this fraction of the largest one are treated as zero
/// when extracting nullspaces.
pub const NULLSPACE_RTOL: f64 = 1e-10;

/// Relative ridge added to near-singular covariances before `inv_sqrt`.
pub const RIDGE_RTOL: f64 = 1e-12;

/// Eigenvalues below `-INDEFINITE_RTOL * lambda_max` mean the input is not PSD.
const INDEFINITE_RTOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    pub value: f64,
    pub vector: CVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SingularTriple {
    pub sigma: f64,
    pub left: CVector,
    pub right: CVector,
}

/// Full eigendecomposition of a Hermitian matrix, eigenvalues sorted in
/// descending order. Columns of the returned matrix are the matching unit
/// eigenvectors (phase-normalized).
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    pub vectors: CMatrix,
}

pub(crate) fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

fn ensure_finite(a: &CMatrix, what: &str) -> Result<()> {
    if a.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{what} contains NaN or infinite entries")))
    }
}

fn ensure_square(a: &CMatrix, what: &str) -> Result<()> {
    if a.nrows() == a.ncols() && a.nrows() > 0 {
        Ok(())
    } else {
        Err(Error::dim(format!(
            "{what} must be square and non-empty, got {}x{}",
            a.nrows(),
            a.ncols()
        )))
    }
}

/// Unit-modulus factor that makes the first non-negligible entry of `v` real
/// and positive. Entries below `1e-12 * max|v_i|` count as zero.
pub(crate) fn canonical_phase(v: &CVector) -> Complex64 {
    let peak = v.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if peak == 0.0 {
        return c(1.0);
    }
    let first = v
        .iter()
        .find(|z| z.norm() > 1e-12 * peak)
        .copied()
        .unwrap_or(c(1.0));
    first.conj() / first.norm()
}

fn normalize_phase(mut v: CVector) -> CVector {
    let rot = canonical_phase(&v);
    v *= rot;
    v
}

/// Eigendecomposition of `(A + A^H) / 2`, eigenvalues descending.
pub fn hermitian_eigen(a: &CMatrix) -> Result<HermitianEigen> {
    ensure_square(a, "hermitian_eigen input")?;
    ensure_finite(a, "hermitian_eigen input")?;
    let sym = (a + a.adjoint()) * c(0.5);
    let eig = sym.symmetric_eigen();
    let n = a.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort keeps the original index order among exact ties.
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let mut vectors = CMatrix::zeros(n, n);
    let mut values = Vec::with_capacity(n);
    for (k, &idx) in order.iter().enumerate() {
        values.push(eig.eigenvalues[idx]);
        let v = normalize_phase(eig.eigenvectors.column(idx).into_owned());
        vectors.set_column(k, &v);
    }
    Ok(HermitianEigen { values, vectors })
}

/// Largest eigenvalue of a Hermitian matrix and its unit eigenvector.
pub fn top_eigpair(a: &CMatrix) -> Result<EigenPair> {
    let eig = hermitian_eigen(a)?;
    Ok(EigenPair {
        value: eig.values[0],
        vector: eig.vectors.column(0).into_owned(),
    })
}

/// Orthonormal basis of the right nullspace of a wide `r x n` matrix.
///
/// A matrix with zero rows imposes no constraint and yields the identity.
pub fn nullspace_basis(m: &CMatrix) -> Result<CMatrix> {
    let (r, n) = m.shape();
    if n == 0 {
        return Err(Error::dim("nullspace of a matrix with zero columns"));
    }
    if r >= n {
        return Err(Error::dim(format!(
            "nullspace requires fewer rows than columns, got {r}x{n}"
        )));
    }
    ensure_finite(m, "nullspace input")?;
    if r == 0 {
        return Ok(CMatrix::identity(n, n));
    }
    // Zero-padding to n x n makes the SVD return the complete right basis.
    let mut padded = CMatrix::zeros(n, n);
    padded.view_mut((0, 0), (r, n)).copy_from(m);
    let svd = padded.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Degenerate("SVD did not return right singular vectors".into()))?;
    let sigma_max = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let tol = NULLSPACE_RTOL * sigma_max;
    let null_idx: Vec<usize> = (0..n)
        .filter(|&k| svd.singular_values[k] <= tol)
        .collect();
    let mut basis = CMatrix::zeros(n, null_idx.len());
    for (col, &k) in null_idx.iter().enumerate() {
        let v = normalize_phase(v_t.row(k).adjoint());
        basis.set_column(col, &v);
    }
    Ok(basis)
}

/// Hermitian inverse square root `C^{-1/2}` of a positive-definite matrix.
///
/// Matrices whose smallest eigenvalue falls below `RIDGE_RTOL * lambda_max`
/// are repaired by adding that ridge to the spectrum before inversion.
pub fn inv_sqrt(cov: &CMatrix) -> Result<CMatrix> {
    let eig = hermitian_eigen(cov)?;
    let lmax = eig.values[0];
    let lmin = *eig.values.last().expect("non-empty spectrum");
    if lmax <= 0.0 {
        return Err(Error::Conditioning(format!(
            "covariance has no positive eigenvalue (lambda_max = {lmax:e})"
        )));
    }
    if lmin < -INDEFINITE_RTOL * lmax {
        return Err(Error::Conditioning(format!(
            "covariance is indefinite (lambda_min = {lmin:e}, lambda_max = {lmax:e})"
        )));
    }
    let ridge = RIDGE_RTOL * lmax;
    let needs_ridge = lmin < ridge;
    let scales: Vec<f64> = eig
        .values
        .iter()
        .map(|&l| {
            let l = if needs_ridge { l.max(0.0) + ridge } else { l };
            1.0 / l.sqrt()
        })
        .collect();
    let mut scaled = eig.vectors.clone();
    for (k, s) in scales.iter().enumerate() {
        scaled.column_mut(k).scale_mut(*s);
    }
    Ok(scaled * eig.vectors.adjoint())
}

/// Largest singular value with its left/right singular vectors, so that
/// `A * right = sigma * left`.
pub fn principal_singular_triple(a: &CMatrix) -> Result<SingularTriple> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Err(Error::dim("principal singular triple of an empty matrix"));
    }
    ensure_finite(a, "singular triple input")?;
    if a.iter().all(|z| *z == Complex64::new(0.0, 0.0)) {
        return Err(Error::Degenerate("all-zero matrix has no principal singular pair".into()));
    }
    let svd = a.clone().svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::Degenerate("SVD did not return singular vectors".into())),
    };
    let k = svd
        .singular_values
        .iter()
        .enumerate()
        .fold(0, |best, (i, s)| if *s > svd.singular_values[best] { i } else { best });
    let right: CVector = v_t.row(k).adjoint();
    let left: CVector = u.column(k).into_owned();
    let rot = canonical_phase(&right);
    Ok(SingularTriple {
        sigma: svd.singular_values[k],
        left: left * rot,
        right: right * rot,
    })
}

/// Horizontal concatenation `[A_1 A_2 ... A_k]`.
pub fn hstack(blocks: &[CMatrix]) -> Result<CMatrix> {
    let rows = blocks.first().map_or(0, |b| b.nrows());
    if blocks.iter().any(|b| b.nrows() != rows) {
        return Err(Error::dim("hstack blocks must share a row count"));
    }
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = CMatrix::zeros(rows, cols);
    let mut offset = 0;
    for b in blocks {
        out.view_mut((0, offset), b.shape()).copy_from(b);
        offset += b.ncols();
    }
    Ok(out)
}

/// Vertical concatenation of blocks sharing a column count.
pub fn vstack(blocks: &[CMatrix]) -> Result<CMatrix> {
    let cols = blocks.first().map_or(0, |b| b.ncols());
    if blocks.iter().any(|b| b.ncols() != cols) {
        return Err(Error::dim("vstack blocks must share a column count"));
    }
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = CMatrix::zeros(rows, cols);
    let mut offset = 0;
    for b in blocks {
        out.view_mut((offset, 0), b.shape()).copy_from(b);
        offset += b.nrows();
    }
    Ok(out)
}

pub fn block_diag(blocks: &[CMatrix]) -> CMatrix {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = CMatrix::zeros(rows, cols);
    let (mut r, mut k) = (0, 0);
    for b in blocks {
        out.view_mut((r, k), b.shape()).copy_from(b);
        r += b.nrows();
        k += b.ncols();
    }
    out
}

/// `v^H A v`, real part (the input is expected to be Hermitian).
pub fn quad_form(a: &CMatrix, v: &CVector) -> f64 {
    v.dotc(&(a * v)).re
}
