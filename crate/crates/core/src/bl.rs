//! Bayesian-learning decomposition of a fully-digital beamformer into a
//! dictionary-constrained RF factor and a row-sparse baseband factor.
//!
//! The target `F` (`N x U`) is modelled as `G X + E` with a dictionary `G` of
//! array responses, rows of `X` drawn from `CN(0, gamma_i)` and white error
//! of variance `sigma_e^2`. Expectation-maximization over the row variances
//! `gamma` drives all but a few of them to zero; the surviving rows pick the
//! RF columns and their posterior means form the baseband factor.

use std::f64::consts::PI;

use nalgebra::SymmetricEigen;

use crate::channel::ula_response;
use crate::downlink::{oshb_unicast, UnicastDesign};
use crate::error::{Error, Result};
use crate::linalg::{block_diag, c, hstack, CMatrix, CVector};
use crate::rf::EffectiveChannel;

/// Row variances below this are pruned to exactly zero.
pub const PRUNE_THRESHOLD: f64 = 1e-10;

/// Steering vectors on a uniform grid in `cos(phi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    /// `N x S`, unit-norm columns with unit-modulus (scaled) entries.
    pub matrix: CMatrix,
    /// `phi_s` in `[0, pi]`, with `cos(phi_s) = 2 s / S - 1` for `s = 0..S`.
    pub angles: Vec<f64>,
}

impl Dictionary {
    pub fn len(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.ncols() == 0
    }

    /// `max_{i != j} |g_i^H g_j|`.
    pub fn mutual_coherence(&self) -> f64 {
        let gram = self.matrix.adjoint() * &self.matrix;
        let mut best: f64 = 0.0;
        for i in 0..gram.nrows() {
            for j in 0..gram.ncols() {
                if i != j {
                    best = best.max(gram[(i, j)].norm());
                }
            }
        }
        best
    }
}

/// Half-wavelength ULA dictionary with `grid` columns.
pub fn build_dictionary(elements: usize, grid: usize) -> Result<Dictionary> {
    build_dictionary_with_spacing(elements, grid, 0.5)
}

/// ULA dictionary whose column `s` is the response towards the direction
/// with `cos(phi_s) = 2 s / S - 1`, so that the inter-element phase step is
/// `2 pi d cos(phi_s)`.
pub fn build_dictionary_with_spacing(elements: usize, grid: usize, spacing: f64) -> Result<Dictionary> {
    if elements == 0 {
        return Err(Error::config("N_T", "dictionary needs at least one antenna"));
    }
    if grid == 0 {
        return Err(Error::config("S", "dictionary needs at least one grid point"));
    }
    let angles: Vec<f64> = (0..grid)
        .map(|s| (2.0 * s as f64 / grid as f64 - 1.0).clamp(-1.0, 1.0).acos())
        .collect();
    let mut matrix = CMatrix::zeros(elements, grid);
    for (s, phi) in angles.iter().enumerate() {
        matrix.set_column(s, &ula_response(elements, spacing, PI / 2.0 - phi));
    }
    Ok(Dictionary { matrix, angles })
}

/// OSHB-U on unprocessed channels (identity RF stages on both ends).
pub fn fully_digital_oshb(channels: &[EffectiveChannel], p_t: f64, noise_var: f64) -> Result<UnicastDesign> {
    if channels.iter().any(|ch| ch.w_rf != CMatrix::identity(ch.rx_dim(), ch.rx_dim())) {
        return Err(Error::InvalidInput("fully-digital design expects raw channels".into()));
    }
    oshb_unicast(channels, p_t, noise_var)
}

/// Columns `[f_1 ... f_U]` of a unicast design.
pub fn precoder_matrix(design: &UnicastDesign) -> Result<CMatrix> {
    let cols: Vec<CMatrix> = design
        .precoders
        .iter()
        .map(|f| CMatrix::from_column_slice(f.len(), 1, f.as_slice()))
        .collect();
    hstack(&cols)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SblOptions {
    pub sigma_e_sq: f64,
    pub k_max: usize,
    pub epsilon: f64,
}

impl SblOptions {
    /// `sigma_e^2 = 1e-2 ||F||_F^2 / (rows * cols)`, one percent of the mean
    /// entry energy of the target.
    pub fn default_for(f_opt: &CMatrix) -> Self {
        let entries = (f_opt.nrows() * f_opt.ncols()).max(1) as f64;
        let energy = f_opt.norm_squared();
        let sigma_e_sq = if energy > 0.0 { 1e-2 * energy / entries } else { 1e-2 };
        SblOptions { sigma_e_sq, k_max: 50, epsilon: 1e-6 }
    }

    fn validate(&self) -> Result<()> {
        if !(self.sigma_e_sq > 0.0 && self.sigma_e_sq.is_finite()) {
            return Err(Error::config("sigma_e_sq", "approximation-error variance must be positive"));
        }
        if self.k_max == 0 {
            return Err(Error::config("k_max", "at least one EM iteration is required"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::config("epsilon", "stopping threshold must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SblState {
    pub gamma: Vec<f64>,
    /// `S x U` posterior mean of the row-sparse factor.
    pub phi: CMatrix,
    /// `S x S` posterior covariance of each column.
    pub pi: CMatrix,
    pub sigma_e_sq: f64,
    pub iterations: usize,
    /// `gamma` before the first iteration and after every iteration.
    pub history: Vec<Vec<f64>>,
}

/// Posterior `(Pi, Phi)` for fixed `gamma`, evaluated as
/// `Pi = D B^{-1} D` with `B = I + D G^H G D / s` and `D = diag(sqrt(gamma))`.
/// `B^{-1}` is applied through the eigendecomposition of `B`, so every
/// diagonal entry of `Pi` is a sum of non-negative terms and pruned rows
/// (`gamma_i = 0`) stay exactly zero.
fn posterior(gram: &CMatrix, proj: &CMatrix, gamma: &[f64], sigma_e_sq: f64, iteration: usize) -> Result<(CMatrix, CMatrix)> {
    let s = gamma.len();
    let d: Vec<f64> = gamma.iter().map(|g| g.sqrt()).collect();
    let mut b = CMatrix::from_fn(s, s, |i, j| gram[(i, j)] * (d[i] * d[j] / sigma_e_sq));
    for i in 0..s {
        b[(i, i)] += c(1.0);
    }
    let eig = SymmetricEigen::new(b);
    if eig.eigenvalues.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::Numerical {
            iteration,
            detail: "posterior precision is not positive definite".into(),
        });
    }
    let mut dv = eig.eigenvectors;
    for (i, mut row) in dv.row_iter_mut().enumerate() {
        row *= c(d[i]);
    }
    let mut scaled = dv.clone();
    for (k, mut col) in scaled.column_iter_mut().enumerate() {
        col *= c(1.0 / eig.eigenvalues[k]);
    }
    let pi = &scaled * dv.adjoint();
    let phi = &pi * proj * c(1.0 / sigma_e_sq);
    Ok((pi, phi))
}

/// EM iterations for the row variances, starting from `gamma = 1`.
pub fn em_sbl(f_opt: &CMatrix, dictionary: &Dictionary, options: &SblOptions) -> Result<SblState> {
    options.validate()?;
    let g = &dictionary.matrix;
    if g.nrows() != f_opt.nrows() {
        return Err(Error::dim("dictionary rows must match the target rows"));
    }
    if f_opt.ncols() == 0 {
        return Err(Error::dim("target has no columns"));
    }
    let users = f_opt.ncols() as f64;
    let gram = g.adjoint() * g;
    let proj = g.adjoint() * f_opt;
    let mut gamma = vec![1.0; g.ncols()];
    let mut history = vec![gamma.clone()];
    let mut k = 0;
    let (pi, phi) = loop {
        k += 1;
        let (pi, phi) = posterior(&gram, &proj, &gamma, options.sigma_e_sq, k)?;
        let next: Vec<f64> = (0..gamma.len())
            .map(|i| {
                let v = pi[(i, i)].re + phi.row(i).norm_squared() / users;
                if v < PRUNE_THRESHOLD { 0.0 } else { v }
            })
            .collect();
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical { iteration: k, detail: "row variance is not finite".into() });
        }
        let change: f64 = next.iter().zip(&gamma).map(|(a, b)| (a - b).powi(2)).sum();
        gamma = next;
        history.push(gamma.clone());
        if change <= options.epsilon || k >= options.k_max {
            break posterior(&gram, &proj, &gamma, options.sigma_e_sq, k)?;
        }
    };
    Ok(SblState { gamma, phi, pi, sigma_e_sq: options.sigma_e_sq, iterations: k, history })
}

#[derive(Debug, Clone)]
pub struct HybridFactorization {
    pub f_rf: CMatrix,
    pub f_bb: CMatrix,
    /// Selected dictionary columns (per block, in block order).
    pub support: Vec<usize>,
    /// `||F_opt - F_RF F_BB||_F`.
    pub residual: f64,
}

/// Indices of the `n` largest values, ties broken towards the lower index,
/// returned in increasing index order.
pub fn largest_indices(values: &[f64], n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(n);
    idx.sort_unstable();
    idx
}

/// Keeps the `n_rf` rows with the largest `gamma`.
pub fn extract_hybrid(state: &SblState, dictionary: &Dictionary, f_opt: &CMatrix, n_rf: usize) -> Result<HybridFactorization> {
    if n_rf > dictionary.len() {
        return Err(Error::config(
            "N_RF",
            format!("{n_rf} RF chains exceed the dictionary size {}", dictionary.len()),
        ));
    }
    if state.gamma.len() != dictionary.len() {
        return Err(Error::dim("SBL state does not match the dictionary"));
    }
    let support = largest_indices(&state.gamma, n_rf);
    let f_rf = dictionary.matrix.select_columns(&support);
    let f_bb = state.phi.select_rows(&support);
    let residual = (f_opt - &f_rf * &f_bb).norm();
    Ok(HybridFactorization { f_rf, f_bb, support, residual })
}

/// SBL followed by extraction.
pub fn bl_decompose(f_opt: &CMatrix, dictionary: &Dictionary, n_rf: usize, options: &SblOptions) -> Result<HybridFactorization> {
    let state = em_sbl(f_opt, dictionary, options)?;
    extract_hybrid(&state, dictionary, f_opt, n_rf)
}

/// Decomposes each `N`-row block of `f_opt` with its own chain budget, builds
/// the block-diagonal RF factor, and rescales the baseband factor so that
/// `||F_RF F_BB||_F = ||F_opt||_F`.
pub fn bl_block_diagonal(f_opt: &CMatrix, dictionary: &Dictionary, n_rf: &[usize], options: &SblOptions) -> Result<HybridFactorization> {
    let n = dictionary.matrix.nrows();
    if f_opt.nrows() != n * n_rf.len() {
        return Err(Error::dim("target rows must equal blocks times dictionary rows"));
    }
    let parts = n_rf
        .iter()
        .enumerate()
        .map(|(m, &chains)| bl_decompose(&f_opt.rows(m * n, n).into_owned(), dictionary, chains, options))
        .collect::<Result<Vec<_>>>()?;
    let f_rf = block_diag(&parts.iter().map(|p| p.f_rf.clone()).collect::<Vec<_>>());
    let blocks: Vec<CMatrix> = parts.iter().map(|p| p.f_bb.clone()).collect();
    let mut f_bb = crate::linalg::vstack(&blocks)?;
    let achieved = (&f_rf * &f_bb).norm();
    let target = f_opt.norm();
    if achieved > 0.0 {
        f_bb *= c(target / achieved);
    }
    let residual = (f_opt - &f_rf * &f_bb).norm();
    let support = parts.into_iter().flat_map(|p| p.support).collect();
    Ok(HybridFactorization { f_rf, f_bb, support, residual })
}

/// Hybrid approximation of a single combining vector.
pub fn bl_vector(w: &CVector, dictionary: &Dictionary, n_rf: usize, options: &SblOptions) -> Result<HybridFactorization> {
    let target = CMatrix::from_column_slice(w.len(), 1, w.as_slice());
    bl_block_diagonal(&target, dictionary, &[n_rf], options)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_grid() {
        let d = build_dictionary(4, 2).unwrap();
        assert!((d.angles[0] - PI).abs() < 1e-15);
        assert!((d.angles[1] - PI / 2.0).abs() < 1e-15);
        assert!((d.matrix[(1, 0)] - c(-0.5)).norm() < 1e-12);
        assert!((d.matrix[(1, 1)] - c(0.5)).norm() < 1e-12);
    }

    #[test]
    fn columns_are_unit_norm_constant_modulus() {
        let d = build_dictionary(8, 16).unwrap();
        for col in d.matrix.column_iter() {
            assert!((col.norm() - 1.0).abs() < 1e-12);
            assert!(col.iter().all(|z| (z.norm() - 1.0 / 8f64.sqrt()).abs() < 1e-12));
        }
        assert!(matches!(build_dictionary(8, 0), Err(Error::Config { .. })));
    }

    #[test]
    fn order_statistics() {
        assert_eq!(largest_indices(&[0.1, 9.0, 0.2, 5.0], 2), vec![1, 3]);
        assert_eq!(largest_indices(&[1.0, 1.0, 1.0], 2), vec![0, 1]);
    }

    #[test]
    fn zero_target_shrinks_everything() {
        let d = build_dictionary(4, 8).unwrap();
        let opts = SblOptions { sigma_e_sq: 0.1, k_max: 50, epsilon: 1e-12 };
        let state = em_sbl(&CMatrix::zeros(4, 2), &d, &opts).unwrap();
        assert!(state.phi.norm() == 0.0);
        for w in state.history.windows(2) {
            for (a, b) in w[1].iter().zip(&w[0]) {
                assert!(a <= b);
            }
        }
    }

    #[test]
    fn single_planted_column_wins() {
        let d = build_dictionary(16, 32).unwrap();
        let f = d.matrix.columns(11, 1).into_owned() * c(2.0);
        let opts = SblOptions { sigma_e_sq: 1e-4, k_max: 200, epsilon: 1e-12 };
        let state = em_sbl(&f, &d, &opts).unwrap();
        assert_eq!(largest_indices(&state.gamma, 1), vec![11]);
        let hybrid = extract_hybrid(&state, &d, &f, 1).unwrap();
        assert!(hybrid.residual < 1e-3 * f.norm());
    }

    #[test]
    fn extraction_rejects_oversized_budget() {
        let d = build_dictionary(4, 8).unwrap();
        let f = CMatrix::identity(4, 1);
        let state = em_sbl(&f, &d, &SblOptions::default_for(&f)).unwrap();
        assert!(matches!(extract_hybrid(&state, &d, &f, 9), Err(Error::Config { .. })));
    }

    #[test]
    fn block_diagonal_assembly() {
        let d = build_dictionary(4, 8).unwrap();
        let mut f = CMatrix::zeros(8, 2);
        f.view_mut((0, 0), (4, 1)).copy_from(&d.matrix.columns(2, 1));
        f.view_mut((4, 1), (4, 1)).copy_from(&d.matrix.columns(5, 1));
        let opts = SblOptions { sigma_e_sq: 1e-6, k_max: 100, epsilon: 1e-14 };
        let h = bl_block_diagonal(&f, &d, &[1, 2], &opts).unwrap();
        assert_eq!(h.f_rf.shape(), (8, 3));
        assert_eq!(h.f_bb.shape(), (3, 2));
        assert!(h.f_rf.view((4, 0), (4, 1)).norm() == 0.0);
        assert!(h.f_rf.view((0, 1), (4, 2)).norm() == 0.0);
        assert!(((&h.f_rf * &h.f_bb).norm() - f.norm()).abs() < 1e-12);
        assert_eq!(h.support[0], 2);
        assert!(h.support[1..].contains(&5));
    }
}
