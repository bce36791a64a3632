#![allow(dead_code)]

use cellfree_hbf::linalg::{CMatrix, CVector};
use cellfree_hbf::rf::EffectiveChannel;
use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn cn(rng: &mut ChaCha8Rng) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, r: usize, n: usize) -> CMatrix {
    CMatrix::from_fn(r, n, |_, _| cn(rng))
}

pub fn unit_vector(rng: &mut ChaCha8Rng, n: usize) -> CVector {
    let v = CVector::from_fn(n, |_, _| cn(rng));
    let norm = v.norm();
    v / Complex64::new(norm, 0.0)
}

pub fn identity_rf(blocks: Vec<CMatrix>) -> EffectiveChannel {
    let r = blocks[0].nrows();
    EffectiveChannel::from_blocks(blocks, CMatrix::identity(r, r)).unwrap()
}

/// Eigenvalues (ascending) and eigenvectors straight from nalgebra.
pub fn eig(a: &CMatrix) -> (Vec<f64>, CMatrix) {
    let sym = (a + a.adjoint()) * Complex64::new(0.5, 0.0);
    let e = SymmetricEigen::new(sym);
    let mut idx: Vec<usize> = (0..e.eigenvalues.len()).collect();
    idx.sort_by(|&i, &j| e.eigenvalues[i].partial_cmp(&e.eigenvalues[j]).unwrap());
    let values = idx.iter().map(|&i| e.eigenvalues[i]).collect();
    let vectors = CMatrix::from_fn(a.nrows(), a.nrows(), |r, k| e.eigenvectors[(r, idx[k])]);
    (values, vectors)
}

/// Euclidean projection onto `{x >= 0, sum x <= cap}`.
pub fn project_capped_simplex(x: &[f64], cap: f64) -> Vec<f64> {
    let clipped: Vec<f64> = x.iter().map(|v| v.max(0.0)).collect();
    if clipped.iter().sum::<f64>() <= cap {
        return clipped;
    }
    let mut sorted = x.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut acc = 0.0;
    let mut theta = 0.0;
    for (i, v) in sorted.iter().enumerate() {
        acc += v;
        let candidate = (acc - cap) / (i + 1) as f64;
        if v - candidate > 0.0 {
            theta = candidate;
        }
    }
    x.iter().map(|v| (v - theta).max(0.0)).collect()
}

/// Projection of a Hermitian matrix onto `{F >= 0, Tr F <= cap}`.
pub fn project_trace_capped_psd(f: &CMatrix, cap: f64) -> CMatrix {
    let (values, vectors) = eig(f);
    let projected = project_capped_simplex(&values, cap);
    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        projected.len(),
        projected.iter().map(|&v| Complex64::new(v, 0.0)),
    ));
    &vectors * d * vectors.adjoint()
}

/// Projected gradient ascent for `max Tr(Q F)` over `F >= 0, Tr F <= cap`,
/// run until successive iterates differ by less than `tol * cap`.
pub fn sdp_projected_gradient(q: &CMatrix, cap: f64, tol: f64, max_iter: usize) -> (CMatrix, f64) {
    let n = q.nrows();
    let (values, _) = eig(q);
    let step = 1.0 / values.last().copied().unwrap_or(1.0).max(1e-300);
    let mut f = CMatrix::identity(n, n) * Complex64::new(cap / n as f64, 0.0);
    for _ in 0..max_iter {
        let next = project_trace_capped_psd(&(&f + q * Complex64::new(step * cap, 0.0)), cap);
        let moved = (&next - &f).norm();
        f = next;
        if moved <= tol * cap {
            break;
        }
    }
    let objective = (q * &f).trace().re;
    (f, objective)
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Counter-clockwise convex hull (Andrew's monotone chain).
pub fn convex_hull(mut pts: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<(f64, f64)> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(f64, f64)> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// `max min(x, y)` over a convex polygon given by its vertices.
pub fn max_min_on_polygon(poly: &[(f64, f64)]) -> f64 {
    let mut best = poly.iter().map(|p| p.0.min(p.1)).fold(f64::NEG_INFINITY, f64::max);
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        let da = a.0 - a.1;
        let db = b.0 - b.1;
        if da * db < 0.0 {
            let s = da / (da - db);
            best = best.max(a.0 + s * (b.0 - a.0));
        }
    }
    best
}

/// Grid-search optimum of the two-user max-min problem with 2×2 per-AP
/// grams. Each AP's covariance is swept through rank-one directions
/// `(cos a, e^{i b} sin a)`; higher-rank covariances are convex combinations
/// of those, so the achievable power region of an AP is the convex hull of the
/// sampled points and the network region is the Minkowski sum over APs.
pub fn maxmin_grid_oracle(grams: &[Vec<CMatrix>], cap: f64, steps: usize) -> f64 {
    assert_eq!(grams.len(), 2);
    let aps = grams[0].len();
    let mut region: Vec<(f64, f64)> = vec![(0.0, 0.0)];
    for m in 0..aps {
        assert_eq!(grams[0][m].nrows(), 2);
        let mut pts = Vec::with_capacity(steps * steps);
        for i in 0..=steps {
            let a = std::f64::consts::FRAC_PI_2 * i as f64 / steps as f64;
            for j in 0..steps {
                let b = 2.0 * std::f64::consts::PI * j as f64 / steps as f64;
                let v = CVector::from_vec(vec![
                    Complex64::new(a.cos(), 0.0),
                    Complex64::from_polar(a.sin(), b),
                ]);
                let p = |q: &CMatrix| cap * v.dotc(&(q * &v)).re;
                pts.push((p(&grams[0][m]), p(&grams[1][m])));
            }
        }
        let hull = convex_hull(pts);
        let mut sums = Vec::with_capacity(region.len() * hull.len());
        for r in &region {
            for h in &hull {
                sums.push((r.0 + h.0, r.1 + h.1));
            }
        }
        region = convex_hull(sums);
    }
    max_min_on_polygon(&region)
}
