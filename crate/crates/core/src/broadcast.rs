//! Broadcast (single common stream) hybrid beamformers: pooled-power sum-SNR
//! design, per-AP power constrained sum-SNR design, and max-min fairness.
//!
//! Per-AP designs work on the relaxed covariance form: each AP `m` chooses a
//! PSD matrix `F_m` with `Tr(F_m) <= P_T / M`, user `u` collects
//! `sum_m Tr(Q_{u,m} F_m)` with `Q_{u,m} = H_eff,u,m^H H_eff,u,m`, and the
//! transmitted baseband vector is the rank-one extraction of each `F_m`.

use std::ops::Range;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::linalg::{c, hermitian_eigen, inv_sqrt, quad_form, top_eigpair, CMatrix, CVector};
use crate::rf::EffectiveChannel;

#[derive(Debug, Clone)]
pub struct BroadcastDesign {
    /// Stacked baseband precoder `[f_1; ...; f_M]`.
    pub precoder: CVector,
    /// Row range of each AP's segment inside `precoder`.
    pub segments: Vec<Range<usize>>,
    /// Relaxed per-AP covariances, when the design came from the relaxation.
    pub covariances: Option<Vec<CMatrix>>,
    pub power_budget: f64,
    /// Objective of the relaxed problem (sum of received powers for the sum
    /// designs, min-user received power for max-min).
    pub relaxed_objective: f64,
    /// The same objective evaluated at the rank-one precoder actually sent.
    pub extracted_objective: f64,
}

impl BroadcastDesign {
    pub fn segment(&self, ap: usize) -> CVector {
        self.precoder.rows_range(self.segments[ap].clone()).into_owned()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BroadcastCapacity {
    pub snr: Vec<f64>,
    pub capacity: f64,
}

fn check_users(channels: &[EffectiveChannel], p_t: f64) -> Result<()> {
    if channels.is_empty() {
        return Err(Error::config("U", "broadcast design needs at least one user"));
    }
    if !(p_t > 0.0 && p_t.is_finite()) {
        return Err(Error::config("p_t", format!("power budget must be positive, got {p_t}")));
    }
    let width = channels[0].tx_dim();
    let aps = channels[0].blocks.len();
    for ch in channels {
        if ch.tx_dim() != width || ch.blocks.len() != aps {
            return Err(Error::dim("all users must see the same AP-side RF dimensions"));
        }
    }
    Ok(())
}

fn segments_of(ch: &EffectiveChannel) -> Vec<Range<usize>> {
    let mut start = 0;
    ch.blocks
        .iter()
        .map(|b| {
            let r = start..start + b.ncols();
            start = r.end;
            r
        })
        .collect()
}

/// `Q_{u,m} = H_eff,u,m^H H_eff,u,m`, indexed `[user][ap]`.
pub fn block_grams(channels: &[EffectiveChannel]) -> Vec<Vec<CMatrix>> {
    channels
        .iter()
        .map(|ch| ch.blocks.iter().map(|b| b.adjoint() * b).collect())
        .collect()
}

/// Received power `sum_m Tr(Q_{u,m} F_m)` of every user.
pub fn user_received_power(grams: &[Vec<CMatrix>], covariances: &[CMatrix]) -> Vec<f64> {
    grams
        .iter()
        .map(|per_ap| {
            per_ap
                .iter()
                .zip(covariances)
                .map(|(q, f)| (q * f).trace().re)
                .sum()
        })
        .collect()
}

/// `sqrt(lambda_max) * v_max` of a PSD covariance.
pub fn rank_one_extract(cov: &CMatrix) -> Result<CVector> {
    let top = top_eigpair(cov)?;
    Ok(top.vector * c(top.value.max(0.0).sqrt()))
}

fn stack(segments: &[CVector]) -> CVector {
    let n = segments.iter().map(|s| s.len()).sum();
    CVector::from_iterator(n, segments.iter().flat_map(|s| s.iter().copied()))
}

/// Pooled-power sum-SNR design: `f = sqrt(P_T) v_max(sum_u H_eff,u^H H_eff,u)`.
pub fn hbbf_total_power(channels: &[EffectiveChannel], p_t: f64) -> Result<BroadcastDesign> {
    check_users(channels, p_t)?;
    let n = channels[0].tx_dim();
    let gram = channels
        .iter()
        .fold(CMatrix::zeros(n, n), |acc, ch| acc + ch.matrix.adjoint() * &ch.matrix);
    let top = top_eigpair(&gram)?;
    let objective = p_t * top.value;
    Ok(BroadcastDesign {
        precoder: top.vector * c(p_t.sqrt()),
        segments: segments_of(&channels[0]),
        covariances: None,
        power_budget: p_t,
        relaxed_objective: objective,
        extracted_objective: objective,
    })
}

/// Unit-norm MRC combiner on the noise-whitened model:
/// `R^{-1/2} H_eff f / ||R^{-1/2} H_eff f||` with `R = sigma^2 W_RF^H W_RF`.
pub fn mrc_combiner(h_eff: &CMatrix, f_bb: &CVector, w_rf: &CMatrix, noise_var: f64) -> Result<CVector> {
    if h_eff.ncols() != f_bb.len() || w_rf.ncols() != h_eff.nrows() {
        return Err(Error::dim("combiner inputs are not conformable"));
    }
    let whiten = inv_sqrt(&(w_rf.adjoint() * w_rf * c(noise_var)))?;
    let matched = whiten * (h_eff * f_bb);
    let norm = matched.norm();
    if norm == 0.0 {
        return Err(Error::Degenerate("precoder delivers no signal to this user".into()));
    }
    Ok(matched / c(norm))
}

fn covariance_design(
    channels: &[EffectiveChannel],
    p_t: f64,
    covariances: Vec<CMatrix>,
    relaxed_objective: f64,
    extracted: impl Fn(&[Vec<CMatrix>], &[CMatrix]) -> f64,
) -> Result<BroadcastDesign> {
    let segments: Vec<CVector> = covariances
        .iter()
        .map(rank_one_extract)
        .collect::<Result<_>>()?;
    let outer: Vec<CMatrix> = segments.iter().map(|f| f * f.adjoint()).collect();
    let grams = block_grams(channels);
    Ok(BroadcastDesign {
        precoder: stack(&segments),
        segments: segments_of(&channels[0]),
        power_budget: p_t,
        relaxed_objective,
        extracted_objective: extracted(&grams, &outer),
        covariances: Some(covariances),
    })
}

/// Sum-SNR design under per-AP budgets `P_T / M`.
///
/// The relaxed problem separates over APs, and each piece maximizes a linear
/// functional over trace-capped PSD matrices, so the optimum is
/// `F_m = (P_T / M) v v^H` with `v` the top eigenvector of `sum_u Q_{u,m}`.
pub fn hbbf_per_ap(channels: &[EffectiveChannel], p_t: f64) -> Result<BroadcastDesign> {
    check_users(channels, p_t)?;
    let aps = channels[0].blocks.len();
    let budget = p_t / aps as f64;
    let grams = block_grams(channels);
    let mut covariances = Vec::with_capacity(aps);
    let mut objective = 0.0;
    for m in 0..aps {
        let n = grams[0][m].nrows();
        let q = grams.iter().fold(CMatrix::zeros(n, n), |acc, g| acc + &g[m]);
        let top = top_eigpair(&q)?;
        objective += budget * top.value;
        covariances.push(&top.vector * top.vector.adjoint() * c(budget));
    }
    covariance_design(channels, p_t, covariances, objective, |g, f| {
        user_received_power(g, f).iter().sum()
    })
}

/// Tuning of the max-min path-following solver.
#[derive(Debug, Clone, Copy)]
pub struct MaxMinOptions {
    /// Stop once the certified gap falls below this fraction of the dual bound.
    pub gap_tolerance: f64,
    /// Gap (same units) still accepted once rounding stalls the path
    /// before `gap_tolerance` is met.
    pub max_gap: f64,
    pub max_newton_steps: usize,
}

impl Default for MaxMinOptions {
    fn default() -> Self {
        MaxMinOptions { gap_tolerance: 1e-7, max_gap: 1e-4, max_newton_steps: 4000 }
    }
}

#[derive(Debug, Clone)]
pub struct MaxMinSolution {
    pub design: BroadcastDesign,
    /// Minimum received power over users at the returned covariances.
    pub gamma: f64,
    /// Certified upper bound on the optimal min-user power.
    pub upper_bound: f64,
    /// User weights of the dual certificate.
    pub weights: Vec<f64>,
    pub newton_steps: usize,
}

/// Dual of the normalized max-min problem,
/// `min sum_m y_m  s.t.  y_m I - A_m(mu) >= 0,  sum(mu) = 1,  mu >= 0`, with
/// `A_m(mu) = sum_u mu_u Q_{u,m}` and the log-det barrier
/// `sum_m [y_m / t - log det(y_m I - A_m)] - sum_u log mu_u`.
///
/// Each `y_m` is minimized out in closed form on the eigenvalues of `A_m`,
/// leaving a self-concordant function of `mu` alone. Working with eigenvalue
/// gaps `d_k = y_m - lambda_k` instead of forming `y_m I - A_m` keeps the
/// tiny slack of the top eigenvalue accurate as `t -> 0`.
struct MaxMinBarrier<'a> {
    /// Normalized grams, `[user][ap]`.
    grams: &'a [Vec<CMatrix>],
    users: usize,
    aps: usize,
}

/// Reduced barrier quantities at one `mu`.
struct BarrierPoint {
    gradient: DVector<f64>,
    hessian: DMatrix<f64>,
    /// `t (y_m I - A_m)^{-1}`: unit-trace PSD covariances on the central path.
    primal: Vec<CMatrix>,
    /// Per-user received power under `primal`.
    powers: Vec<f64>,
    /// `sum_m lambda_max(A_m)`, a dual bound for any `mu` on the simplex.
    dual_bound: f64,
}

/// Solves `sum_k 1 / (s + gaps_k) = 1 / t` for `s > 0`, given `gaps_0 = 0`.
fn top_slack(gaps: &[f64], t: f64) -> f64 {
    let f = |s: f64| gaps.iter().map(|g| 1.0 / (s + g)).sum::<f64>() - 1.0 / t;
    let (mut lo, mut hi) = (t, gaps.len() as f64 * t);
    if f(hi) >= 0.0 {
        return hi;
    }
    let mut s = lo;
    for _ in 0..200 {
        let value = f(s);
        if value > 0.0 {
            lo = s;
        } else {
            hi = s;
        }
        let slope: f64 = -gaps.iter().map(|g| (s + g).powi(-2)).sum::<f64>();
        let newton = s - value / slope;
        s = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if (hi - lo) <= 1e-15 * hi || value.abs() <= 1e-14 / t {
            break;
        }
    }
    s
}

impl MaxMinBarrier<'_> {
    fn point(&self, mu: &[f64], t: f64) -> Result<BarrierPoint> {
        let users = self.users;
        let mut gradient = DVector::zeros(users);
        let mut hessian = DMatrix::zeros(users, users);
        let mut powers = vec![0.0; users];
        let mut primal = Vec::with_capacity(self.aps);
        let mut dual_bound = 0.0;
        for m in 0..self.aps {
            let n = self.grams[0][m].nrows();
            let a = (0..users).fold(CMatrix::zeros(n, n), |acc, u| acc + &self.grams[u][m] * c(mu[u]));
            let eig = hermitian_eigen(&a)?;
            dual_bound += eig.values[0];
            let gaps: Vec<f64> = eig.values.iter().map(|l| eig.values[0] - l).collect();
            let s = top_slack(&gaps, t);
            let d: Vec<f64> = gaps.iter().map(|g| s + g).collect();
            let inv_sq: f64 = d.iter().map(|x| x.powi(-2)).sum();
            let w: Vec<f64> = d.iter().map(|x| x.powi(-2) / inv_sq).collect();
            let rotated: Vec<CMatrix> = (0..users)
                .map(|u| eig.vectors.adjoint() * &self.grams[u][m] * &eig.vectors)
                .collect();
            for u in 0..users {
                let g: f64 = (0..n).map(|k| rotated[u][(k, k)].re / d[k]).sum();
                gradient[u] += g;
                powers[u] += t * g;
            }
            for u in 0..users {
                for v in u..users {
                    let (ku, kv) = (&rotated[u], &rotated[v]);
                    let mut h = 0.0;
                    for k in 0..n {
                        for l in 0..n {
                            if k != l {
                                h += (ku[(k, l)] * kv[(l, k)]).re / (d[k] * d[l]);
                            }
                        }
                    }
                    // Diagonal part after eliminating y_m: a weighted covariance,
                    // written pairwise so the 1/d^2 terms never cancel.
                    let mut cov = 0.0;
                    for k in 0..n {
                        for l in (k + 1)..n {
                            cov += w[k] * w[l]
                                * (ku[(k, k)].re - ku[(l, l)].re)
                                * (kv[(k, k)].re - kv[(l, l)].re);
                        }
                    }
                    h += inv_sq * cov;
                    hessian[(u, v)] += h;
                    if u != v {
                        hessian[(v, u)] += h;
                    }
                }
            }
            let mut scaled = eig.vectors.clone();
            for (k, dk) in d.iter().enumerate() {
                let f = (t / dk).sqrt();
                scaled.column_mut(k).iter_mut().for_each(|z| *z *= f);
            }
            primal.push(&scaled * scaled.adjoint());
        }
        for u in 0..users {
            gradient[u] -= 1.0 / mu[u];
            hessian[(u, u)] += 1.0 / (mu[u] * mu[u]);
        }
        Ok(BarrierPoint { gradient, hessian, primal, powers, dual_bound })
    }
}

/// Newton step on the simplex's affine hull `sum(mu) = 1`.
///
/// Near tied top eigenvalues the Hessian grows like `1/t^2` along a few
/// directions, so it is inverted spectrally with a relative eigenvalue floor
/// instead of by Cholesky.
fn constrained_newton(point: &BarrierPoint) -> Option<DVector<f64>> {
    let n = point.gradient.len();
    let d = DVector::from_fn(n, |i, _| point.hessian[(i, i)].sqrt().recip());
    let scaled = DMatrix::from_fn(n, n, |i, j| point.hessian[(i, j)] * d[i] * d[j]);
    let eig = SymmetricEigen::new(scaled);
    let top = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    if !(top > 0.0) {
        return None;
    }
    let floor = 1e-8 * top;
    let solve = |b: &DVector<f64>| {
        let coeffs = eig.eigenvectors.transpose() * b;
        let coeffs = DVector::from_fn(n, |i, _| coeffs[i] / eig.eigenvalues[i].max(floor));
        &eig.eigenvectors * coeffs
    };
    let hg = solve(&point.gradient.component_mul(&d));
    let ha = solve(&d);
    let nu = d.dot(&hg) / d.dot(&ha);
    Some((-hg + ha * nu).component_mul(&d))
}

/// Max-min fairness design under per-AP budgets `P_T / M`.
///
/// Solves the relaxed problem through its dual `min_{mu in simplex}
/// sum_m (P_T/M) lambda_max(sum_u mu_u Q_{u,m})` by log-det barrier path
/// following with damped Newton steps. On the central path
/// `F_m = t (y_m I - A_m)^{-1}` is primal feasible, so each centering yields a
/// feasible design together with a dual bound, and the loop stops once the
/// two certify the requested gap.
pub fn hbbf_maxmin(channels: &[EffectiveChannel], p_t: f64) -> Result<MaxMinSolution> {
    hbbf_maxmin_with(channels, p_t, MaxMinOptions::default())
}

pub fn hbbf_maxmin_with(channels: &[EffectiveChannel], p_t: f64, opts: MaxMinOptions) -> Result<MaxMinSolution> {
    check_users(channels, p_t)?;
    let users = channels.len();
    let aps = channels[0].blocks.len();
    let budget = p_t / aps as f64;
    let raw = block_grams(channels);
    // Normalize so the best single-user received power is 1.
    let scale = raw
        .iter()
        .map(|per_ap| {
            per_ap
                .iter()
                .map(|q| top_eigpair(q).map(|e| budget * e.value.max(0.0)))
                .sum::<Result<f64>>()
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let min_min_objective = |g: &[Vec<CMatrix>], f: &[CMatrix]| {
        user_received_power(g, f).into_iter().fold(f64::INFINITY, f64::min)
    };
    if scale == 0.0 {
        let covariances: Vec<CMatrix> = raw[0]
            .iter()
            .map(|q| {
                let n = q.nrows();
                CMatrix::identity(n, n) * c(budget / n as f64)
            })
            .collect();
        let design = covariance_design(channels, p_t, covariances, 0.0, min_min_objective)?;
        return Ok(MaxMinSolution {
            design,
            gamma: 0.0,
            upper_bound: 0.0,
            weights: vec![1.0 / users as f64; users],
            newton_steps: 0,
        });
    }
    let normalized: Vec<Vec<CMatrix>> = raw
        .iter()
        .map(|per_ap| per_ap.iter().map(|q| q * c(budget / scale)).collect())
        .collect();
    let barrier = MaxMinBarrier { grams: &normalized, users, aps };
    let degree = (raw[0].iter().map(|q| q.nrows()).sum::<usize>() + users) as f64;

    let mut mu = vec![1.0 / users as f64; users];
    let mut t = 1.0 / degree;
    let mut steps = 0;
    let mut primal: Option<(f64, Vec<CMatrix>)> = None;
    let mut dual: Option<(f64, Vec<f64>)> = None;
    let mut best_gap = f64::INFINITY;
    let mut stalled = 0;
    loop {
        let mut point = barrier.point(&mu, t)?;
        let mut previous = f64::INFINITY;
        for _ in 0..100 {
            // Every iterate carries a feasible primal point and a dual bound.
            let lower = point.powers.iter().copied().fold(f64::INFINITY, f64::min);
            if primal.as_ref().is_none_or(|b| lower > b.0) {
                primal = Some((lower, point.primal.clone()));
            }
            if dual.as_ref().is_none_or(|b| point.dual_bound < b.0) {
                dual = Some((point.dual_bound, mu.clone()));
            }
            let Some(dir) = constrained_newton(&point) else {
                break;
            };
            let decrement = -dir.dot(&point.gradient);
            if !decrement.is_finite() {
                return Err(Error::Numerical {
                    iteration: steps,
                    detail: "max-min Newton decrement is not finite".into(),
                });
            }
            // Below 1e-3 Newton converges quadratically; a growing decrement
            // there means rounding noise dominates and centering is done.
            if decrement <= 1e-14 || (previous < 1e-3 && decrement >= previous) || steps >= opts.max_newton_steps {
                break;
            }
            previous = decrement;
            let lambda = decrement.max(0.0).sqrt();
            let mut step = if lambda <= 0.25 { 1.0 } else { 1.0 / (1.0 + lambda) };
            for (m, d) in mu.iter().zip(dir.iter()) {
                if *d < 0.0 {
                    step = step.min(-0.99 * m / d);
                }
            }
            let trial: Vec<f64> = mu.iter().zip(dir.iter()).map(|(m, d)| m + step * d).collect();
            let total: f64 = trial.iter().sum();
            mu = trial.into_iter().map(|m| m / total).collect();
            point = barrier.point(&mu, t)?;
            steps += 1;
        }
        let lower = primal.as_ref().map_or(0.0, |b| b.0);
        let upper = dual.as_ref().map_or(f64::INFINITY, |b| b.0);
        if upper - lower <= opts.gap_tolerance * upper + 1e-12 {
            break;
        }
        stalled = if upper - lower < 0.5 * best_gap { 0 } else { stalled + 1 };
        best_gap = best_gap.min(upper - lower);
        if steps >= opts.max_newton_steps || t < 1e-15 || stalled >= 2 {
            if upper - lower <= opts.max_gap * upper + 1e-12 {
                break;
            }
            return Err(Error::Solver {
                iterations: steps,
                gap: (upper - lower) * scale,
                tolerance: (opts.max_gap * upper + 1e-12) * scale,
            });
        }
        t *= 0.1;
    }
    let (_, densities) = primal.expect("evaluated at least once");
    let (upper, weights) = dual.expect("evaluated at least once");
    let covariances: Vec<CMatrix> = densities
        .iter()
        .map(|e| e * c(budget / e.trace().re.max(1.0)))
        .collect();
    let gamma = user_received_power(&raw, &covariances)
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    let design = covariance_design(channels, p_t, covariances, gamma, min_min_objective)?;
    Ok(MaxMinSolution {
        design,
        gamma,
        upper_bound: (upper * scale).max(gamma),
        weights,
        newton_steps: steps,
    })
}

/// Per-user SNR on the whitened model and the resulting sum capacity
/// `sum_u log2(1 + SNR_u)`.
pub fn broadcast_capacity(precoder: &CVector, channels: &[EffectiveChannel], noise_var: f64) -> Result<BroadcastCapacity> {
    let mut snr = Vec::with_capacity(channels.len());
    for ch in channels {
        if ch.tx_dim() != precoder.len() {
            return Err(Error::dim("precoder length does not match the effective channel"));
        }
        let received = &ch.matrix * precoder;
        let whiten = inv_sqrt(&(ch.noise_gram() * c(noise_var)))?;
        snr.push((whiten * received).norm_squared());
    }
    let capacity = snr.iter().map(|s| (1.0 + s).log2()).sum();
    Ok(BroadcastCapacity { snr, capacity })
}

/// Sum of received signal powers `f^H (sum_u H_eff,u^H H_eff,u) f`.
pub fn sum_received_power(precoder: &CVector, channels: &[EffectiveChannel]) -> f64 {
    channels
        .iter()
        .map(|ch| quad_form(&(ch.matrix.adjoint() * &ch.matrix), precoder))
        .sum()
}
