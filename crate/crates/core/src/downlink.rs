//! Successive MVDR hybrid beamforming for the downlink: one stream per user
//! (unicast) or one stream per group of users (multicast).
//!
//! Streams are designed in a fixed order. Stream `k` is confined to the
//! nullspace of every earlier receiver's combined channel, so it causes no
//! interference there, and is steered to maximize its own receiver's SINR
//! against noise plus the interference already created by streams `< k`.

use crate::error::{Error, Result};
use crate::linalg::{c, inv_sqrt, nullspace_basis, principal_singular_triple, CMatrix, CVector};
use crate::rf::EffectiveChannel;

/// One successive MVDR step.
#[derive(Debug, Clone)]
pub struct MvdrStep {
    /// Unit-norm precoder direction `M_perp * nu`.
    pub direction: CVector,
    /// `C^{-1} H f / sigma_max`, the MVDR combiner for the unit-norm direction.
    pub combiner: CVector,
    /// Largest singular value of `C^{-1/2} H M_perp`; its square is the SINR
    /// delivered per unit of transmit power.
    pub sigma: f64,
}

/// Maximizes `|w^H H f|^2 / (w^H C w)` over unit-norm `f` in the column span
/// of the orthonormal `basis` and over all `w`.
pub fn successive_mvdr(h: &CMatrix, basis: &CMatrix, cov: &CMatrix) -> Result<MvdrStep> {
    if h.ncols() != basis.nrows() || cov.nrows() != h.nrows() {
        return Err(Error::dim("MVDR inputs are not conformable"));
    }
    let whiten = inv_sqrt(cov)?;
    let triple = principal_singular_triple(&(&whiten * h * basis))
        .map_err(|_| Error::Degenerate("whitened projected channel is zero".into()))?;
    Ok(MvdrStep {
        direction: basis * &triple.right,
        combiner: whiten.adjoint() * &triple.left,
        sigma: triple.sigma,
    })
}

/// `sum_i H f_i f_i^H H^H + sigma^2 W_RF^H W_RF`.
pub fn interference_covariance(prior_precoders: &[CVector], h_eff: &CMatrix, w_rf: &CMatrix, noise_var: f64) -> Result<CMatrix> {
    if w_rf.ncols() != h_eff.nrows() {
        return Err(Error::dim("RF combiner columns must match effective channel rows"));
    }
    let mut cov = w_rf.adjoint() * w_rf * c(noise_var);
    for f in prior_precoders {
        if f.len() != h_eff.ncols() {
            return Err(Error::dim("prior precoder length does not match the effective channel"));
        }
        let g = h_eff * f;
        cov += &g * g.adjoint();
    }
    Ok(cov)
}

/// Stacks `w_i^H H_i` as rows.
fn constraint_rows(rows: &[CVector], width: usize) -> CMatrix {
    let mut m = CMatrix::zeros(rows.len(), width);
    for (i, r) in rows.iter().enumerate() {
        m.set_row(i, &r.adjoint());
    }
    m
}

fn check_power(p_t: f64) -> Result<()> {
    if !(p_t >= 0.0 && p_t.is_finite()) {
        return Err(Error::config("p_t", format!("power budget must be non-negative, got {p_t}")));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct UnicastDesign {
    /// `f_BB,u`, already scaled by `sqrt(P_T / U)`.
    pub precoders: Vec<CVector>,
    /// `w_BB,u`, the MVDR combiners.
    pub combiners: Vec<CVector>,
    /// `M_{u-1}`: rows `w_i^H H_eff,i` of the users scheduled before `u`.
    pub constraints: Vec<CMatrix>,
    /// `C_tau,u` used to design user `u`.
    pub covariances: Vec<CMatrix>,
    /// SINR each user was designed for.
    pub design_sinr: Vec<f64>,
}

/// OSHB-U: users served in index order, each with power `P_T / U`.
pub fn oshb_unicast(channels: &[EffectiveChannel], p_t: f64, noise_var: f64) -> Result<UnicastDesign> {
    check_power(p_t)?;
    let users = channels.len();
    if users == 0 {
        return Err(Error::config("U", "unicast design needs at least one user"));
    }
    let width = channels[0].tx_dim();
    if channels.iter().any(|ch| ch.tx_dim() != width) {
        return Err(Error::dim("all users must see the same AP-side RF dimensions"));
    }
    if users > width {
        return Err(Error::CapacityExceeded { requested: users, available: width });
    }
    let power = p_t / users as f64;
    let amp = c(power.sqrt());
    let mut design = UnicastDesign {
        precoders: Vec::with_capacity(users),
        combiners: Vec::with_capacity(users),
        constraints: Vec::with_capacity(users),
        covariances: Vec::with_capacity(users),
        design_sinr: Vec::with_capacity(users),
    };
    let mut rows: Vec<CVector> = Vec::with_capacity(users);
    for ch in channels {
        let m = constraint_rows(&rows, width);
        let basis = nullspace_basis(&m)?;
        let cov = interference_covariance(&design.precoders, &ch.matrix, &ch.w_rf, noise_var)?;
        let step = successive_mvdr(&ch.matrix, &basis, &cov)?;
        rows.push(ch.matrix.adjoint() * &step.combiner);
        design.precoders.push(&step.direction * amp);
        design.combiners.push(step.combiner);
        design.constraints.push(m);
        design.covariances.push(cov);
        design.design_sinr.push(power * step.sigma * step.sigma);
    }
    Ok(design)
}

/// Equal-power matched beamforming without interference management: each
/// user gets `sqrt(P_T/U)` times the dominant right singular vector of its
/// noise-whitened channel, and combines with the matching noise-whitened MRC.
pub fn baseline_wpa_mrc(channels: &[EffectiveChannel], p_t: f64, noise_var: f64) -> Result<UnicastDesign> {
    check_power(p_t)?;
    let users = channels.len();
    if users == 0 {
        return Err(Error::config("U", "unicast design needs at least one user"));
    }
    let power = p_t / users as f64;
    let amp = c(power.sqrt());
    let mut design = UnicastDesign {
        precoders: Vec::with_capacity(users),
        combiners: Vec::with_capacity(users),
        constraints: Vec::with_capacity(users),
        covariances: Vec::with_capacity(users),
        design_sinr: Vec::with_capacity(users),
    };
    for ch in channels {
        let width = ch.tx_dim();
        let cov = interference_covariance(&[], &ch.matrix, &ch.w_rf, noise_var)?;
        let step = successive_mvdr(&ch.matrix, &CMatrix::identity(width, width), &cov)?;
        design.precoders.push(&step.direction * amp);
        design.combiners.push(step.combiner);
        design.constraints.push(CMatrix::zeros(0, width));
        design.covariances.push(cov);
        design.design_sinr.push(power * step.sigma * step.sigma);
    }
    Ok(design)
}

#[derive(Debug, Clone)]
pub struct MulticastDesign {
    /// `f^(g)`, already scaled by `sqrt(P_T / G)`.
    pub precoders: Vec<CVector>,
    /// Stacked group combiner `w^(g)` (length `U_g * N_RF,u`).
    pub combiners: Vec<CVector>,
    /// Per-user segments `w_u^(g)` of each stacked combiner.
    pub segments: Vec<Vec<CVector>>,
    /// `G^(g)`: rows `w_u^(j)H H_u^(j)` for every user of every earlier group.
    pub constraints: Vec<CMatrix>,
    pub covariances: Vec<CMatrix>,
    pub design_sinr: Vec<f64>,
}

/// Vertical stack of a group's effective channels.
pub fn stack_group(group: &[EffectiveChannel]) -> Result<CMatrix> {
    let blocks: Vec<CMatrix> = group.iter().map(|ch| ch.matrix.clone()).collect();
    crate::linalg::vstack(&blocks)
}

/// OSHB-M: groups served in index order, each with power `P_T / G`. The
/// group covariance uses white noise `sigma^2 I` on the stacked model.
pub fn oshb_multicast(groups: &[Vec<EffectiveChannel>], p_t: f64, noise_var: f64) -> Result<MulticastDesign> {
    check_power(p_t)?;
    if groups.is_empty() || groups.iter().any(|g| g.is_empty()) {
        return Err(Error::config("G", "multicast design needs non-empty groups"));
    }
    let width = groups[0][0].tx_dim();
    if groups.iter().flatten().any(|ch| ch.tx_dim() != width) {
        return Err(Error::dim("all users must see the same AP-side RF dimensions"));
    }
    let n_groups = groups.len();
    let power = p_t / n_groups as f64;
    let amp = c(power.sqrt());
    let mut design = MulticastDesign {
        precoders: Vec::with_capacity(n_groups),
        combiners: Vec::with_capacity(n_groups),
        segments: Vec::with_capacity(n_groups),
        constraints: Vec::with_capacity(n_groups),
        covariances: Vec::with_capacity(n_groups),
        design_sinr: Vec::with_capacity(n_groups),
    };
    let mut rows: Vec<CVector> = Vec::new();
    for group in groups {
        if rows.len() >= width {
            return Err(Error::CapacityExceeded { requested: rows.len() + 1, available: width });
        }
        let h = stack_group(group)?;
        let m = constraint_rows(&rows, width);
        let basis = nullspace_basis(&m)?;
        let mut cov = CMatrix::identity(h.nrows(), h.nrows()) * c(noise_var);
        for f in &design.precoders {
            let g = &h * f;
            cov += &g * g.adjoint();
        }
        let step = successive_mvdr(&h, &basis, &cov)?;
        let mut offset = 0;
        let mut segments = Vec::with_capacity(group.len());
        for ch in group {
            let w = step.combiner.rows(offset, ch.rx_dim()).into_owned();
            offset += ch.rx_dim();
            rows.push(ch.matrix.adjoint() * &w);
            segments.push(w);
        }
        design.precoders.push(&step.direction * amp);
        design.combiners.push(step.combiner);
        design.segments.push(segments);
        design.constraints.push(m);
        design.covariances.push(cov);
        design.design_sinr.push(power * step.sigma * step.sigma);
    }
    Ok(design)
}

/// A receiver listening to one of the transmitted streams.
#[derive(Debug, Clone, Copy)]
pub struct Receiver<'a> {
    pub channel: &'a EffectiveChannel,
    pub combiner: &'a CVector,
    pub stream: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DownlinkCapacity {
    pub sinr: Vec<f64>,
    pub capacity: f64,
}

/// Post-combining SINR of one receiver:
/// `|w^H H f_s|^2 / (sum_{j != s} |w^H H f_j|^2 + sigma^2 w^H W_RF^H W_RF w)`.
pub fn receiver_sinr(precoders: &[CVector], rx: &Receiver<'_>, noise_var: f64) -> Result<f64> {
    let w = rx.combiner;
    let h = &rx.channel.matrix;
    if w.len() != h.nrows() || rx.stream >= precoders.len() {
        return Err(Error::dim("receiver does not match the designed streams"));
    }
    let wh = h.adjoint() * w;
    let mut signal = 0.0;
    let mut interference = 0.0;
    for (j, f) in precoders.iter().enumerate() {
        if f.len() != wh.len() {
            return Err(Error::dim("precoder length does not match the effective channel"));
        }
        let p = wh.dotc(f).norm_sqr();
        if j == rx.stream {
            signal = p;
        } else {
            interference += p;
        }
    }
    let noise = noise_var * (&rx.channel.w_rf * w).norm_squared();
    let denom = interference + noise;
    Ok(if denom > 0.0 { signal / denom } else if signal > 0.0 { f64::INFINITY } else { 0.0 })
}

/// Per-receiver SINR and the sum `sum log2(1 + SINR)`.
pub fn downlink_capacity(precoders: &[CVector], receivers: &[Receiver<'_>], noise_var: f64) -> Result<DownlinkCapacity> {
    let sinr = receivers
        .iter()
        .map(|rx| receiver_sinr(precoders, rx, noise_var))
        .collect::<Result<Vec<_>>>()?;
    let capacity = sinr.iter().map(|s| (1.0 + s).log2()).sum();
    Ok(DownlinkCapacity { sinr, capacity })
}

impl UnicastDesign {
    pub fn capacity(&self, channels: &[EffectiveChannel], noise_var: f64) -> Result<DownlinkCapacity> {
        if channels.len() != self.precoders.len() {
            return Err(Error::dim("one effective channel per designed user is required"));
        }
        let receivers: Vec<Receiver<'_>> = channels
            .iter()
            .zip(&self.combiners)
            .enumerate()
            .map(|(u, (channel, combiner))| Receiver { channel, combiner, stream: u })
            .collect();
        downlink_capacity(&self.precoders, &receivers, noise_var)
    }
}

impl MulticastDesign {
    /// SINR of every user (group-major order) measured on its own combiner segment.
    pub fn capacity(&self, groups: &[Vec<EffectiveChannel>], noise_var: f64) -> Result<DownlinkCapacity> {
        if groups.len() != self.precoders.len() {
            return Err(Error::dim("one channel group per designed stream is required"));
        }
        let mut receivers = Vec::new();
        for (g, (group, segments)) in groups.iter().zip(&self.segments).enumerate() {
            if group.len() != segments.len() {
                return Err(Error::dim("group size does not match its combiner segments"));
            }
            for (channel, combiner) in group.iter().zip(segments) {
                receivers.push(Receiver { channel, combiner, stream: g });
            }
        }
        downlink_capacity(&self.precoders, &receivers, noise_var)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{hermitian_eigen, quad_form};
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, n: usize) -> CMatrix {
        CMatrix::from_fn(r, n, |_, _| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
    }

    fn random_channels(rng: &mut ChaCha8Rng, users: usize, rx: usize, aps: usize, per_ap: usize) -> Vec<EffectiveChannel> {
        (0..users)
            .map(|_| {
                let blocks = (0..aps).map(|_| random_matrix(rng, rx, per_ap)).collect();
                EffectiveChannel::from_blocks(blocks, random_matrix(rng, 2 * rx, rx)).unwrap()
            })
            .collect()
    }

    #[test]
    fn covariance_without_priors_is_noise_gram() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = random_matrix(&mut rng, 6, 3);
        let h = random_matrix(&mut rng, 3, 4);
        let cov = interference_covariance(&[], &h, &w, 0.7).unwrap();
        assert!((cov - w.adjoint() * &w * c(0.7)).norm() < 1e-14);
        let eye = CMatrix::identity(3, 3);
        assert!((interference_covariance(&[], &h, &eye, 1.0).unwrap() - &eye).norm() < 1e-15);
    }

    #[test]
    fn covariance_matches_naive_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = random_matrix(&mut rng, 6, 3);
        let h = random_matrix(&mut rng, 3, 4);
        let f1 = random_matrix(&mut rng, 4, 1).column(0).into_owned();
        let f2 = random_matrix(&mut rng, 4, 1).column(0).into_owned();
        let got = interference_covariance(&[f1.clone(), f2.clone()], &h, &w, 0.5).unwrap();
        let mut expected = CMatrix::zeros(3, 3);
        for f in [&f1, &f2] {
            for i in 0..3 {
                for j in 0..3 {
                    let a: Complex64 = (0..4).map(|k| h[(i, k)] * f[k]).sum();
                    let b: Complex64 = (0..4).map(|k| h[(j, k)] * f[k]).sum();
                    expected[(i, j)] += a * b.conj();
                }
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                let n: Complex64 = (0..6).map(|k| w[(k, i)].conj() * w[(k, j)]).sum();
                expected[(i, j)] += n * 0.5;
            }
        }
        assert!((got - expected).norm() < 1e-12);
    }

    #[test]
    fn single_user_is_principal_whitened_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let chans = random_channels(&mut rng, 1, 3, 2, 2);
        let d = oshb_unicast(&chans, 2.0, 0.5).unwrap();
        let whiten = inv_sqrt(&(chans[0].noise_gram() * c(0.5))).unwrap();
        let triple = principal_singular_triple(&(whiten * &chans[0].matrix)).unwrap();
        assert!((&d.precoders[0] - &triple.right * c(2f64.sqrt())).norm() < 1e-10);
        let wpa = baseline_wpa_mrc(&chans, 2.0, 0.5).unwrap();
        assert!((&wpa.precoders[0] - &d.precoders[0]).norm() < 1e-10);
    }

    #[test]
    fn successive_zero_forcing_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let chans = random_channels(&mut rng, 5, 2, 3, 2);
            let d = oshb_unicast(&chans, 5.0, 1.0).unwrap();
            for u in 0..5 {
                for v in 0..u {
                    let leak = d.combiners[v].dotc(&(&chans[v].matrix * &d.precoders[u])).norm();
                    assert!(leak <= 1e-9, "user {u} leaks {leak} into {v}");
                }
            }
            let total: f64 = d.precoders.iter().map(|f| f.norm_squared()).sum();
            assert!((total - 5.0).abs() < 1e-9);
        }
    }

    #[test]
    fn design_sinr_is_the_top_eigenvalue_and_is_achieved() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let chans = random_channels(&mut rng, 4, 2, 2, 3);
        let d = oshb_unicast(&chans, 8.0, 0.3).unwrap();
        let cap = d.capacity(&chans, 0.3).unwrap();
        for u in 0..4 {
            let basis = nullspace_basis(&d.constraints[u]).unwrap();
            let cov_inv = d.covariances[u].clone().try_inverse().unwrap();
            let h = &chans[u].matrix;
            let k = basis.adjoint() * h.adjoint() * cov_inv * h * &basis;
            let lmax = hermitian_eigen(&k).unwrap().values[0] * 2.0;
            assert!((d.design_sinr[u] - lmax).abs() <= 1e-8 * lmax.max(1.0));
            assert!((cap.sinr[u] - lmax).abs() <= 1e-8 * lmax.max(1.0), "{} vs {}", cap.sinr[u], lmax);
        }
    }

    #[test]
    fn mvdr_beats_random_combiners() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..5 {
            let chans = random_channels(&mut rng, 3, 3, 2, 2);
            let d = oshb_unicast(&chans, 3.0, 1.0).unwrap();
            for u in 0..3 {
                let h = &chans[u].matrix;
                let sinr = |w: &CVector| {
                    let s = w.dotc(&(h * &d.precoders[u])).norm_sqr();
                    let i: f64 = (0..3)
                        .filter(|&j| j != u)
                        .map(|j| w.dotc(&(h * &d.precoders[j])).norm_sqr())
                        .sum();
                    s / (i + quad_form(&chans[u].noise_gram(), w))
                };
                let best = sinr(&d.combiners[u]);
                for _ in 0..1000 {
                    let w = random_matrix(&mut rng, 3, 1).column(0).normalize();
                    assert!(sinr(&w) <= best * (1.0 + 1e-9));
                }
            }
        }
    }

    #[test]
    fn user_bound_is_enforced() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let chans = random_channels(&mut rng, 5, 2, 2, 2);
        assert!(oshb_unicast(&chans[..4], 1.0, 1.0).is_ok());
        assert!(matches!(
            oshb_unicast(&chans, 1.0, 1.0),
            Err(Error::CapacityExceeded { requested: 5, available: 4 })
        ));
    }

    #[test]
    fn multicast_single_group_has_no_constraints() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let group = random_channels(&mut rng, 3, 2, 2, 2);
        let d = oshb_multicast(std::slice::from_ref(&group), 2.0, 1.0).unwrap();
        assert_eq!(d.constraints[0].nrows(), 0);
        let h = stack_group(&group).unwrap();
        let triple = principal_singular_triple(&h).unwrap();
        assert!((&d.precoders[0] - &triple.right * c(2f64.sqrt())).norm() < 1e-10);
        assert_eq!(d.segments[0].len(), 3);
    }

    #[test]
    fn multicast_zero_forces_earlier_groups() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let groups = vec![random_channels(&mut rng, 2, 2, 2, 3), random_channels(&mut rng, 2, 2, 2, 3)];
            let d = oshb_multicast(&groups, 4.0, 1.0).unwrap();
            let residual = (&d.constraints[1] * &d.precoders[1]).norm();
            assert!(residual <= 1e-9);
            for (ch, w) in groups[0].iter().zip(&d.segments[0]) {
                assert!(w.dotc(&(&ch.matrix * &d.precoders[1])).norm() <= 1e-9);
            }
            let cap = d.capacity(&groups, 1.0).unwrap();
            assert_eq!(cap.sinr.len(), 4);
        }
    }

    #[test]
    fn multicast_budget_is_enforced() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let groups = vec![random_channels(&mut rng, 3, 2, 1, 3), random_channels(&mut rng, 1, 2, 1, 3)];
        assert!(matches!(oshb_multicast(&groups, 1.0, 1.0), Err(Error::CapacityExceeded { .. })));
    }

    #[test]
    fn capacity_is_additive_and_scalar_case_matches() {
        let h = CMatrix::from_row_slice(1, 1, &[Complex64::new(2.0, 0.0)]);
        let ch = EffectiveChannel::from_blocks(vec![h], CMatrix::identity(1, 1)).unwrap();
        let f = CVector::from_vec(vec![c(3.0)]);
        let w = CVector::from_vec(vec![c(0.5)]);
        let rx = Receiver { channel: &ch, combiner: &w, stream: 0 };
        let got = downlink_capacity(std::slice::from_ref(&f), &[rx], 0.5).unwrap();
        let expected = (0.5f64 * 2.0 * 3.0).powi(2) / (0.5 * 0.25);
        assert!((got.sinr[0] - expected).abs() < 1e-12);
        let twice = downlink_capacity(
            &[f.clone(), CVector::zeros(1)],
            &[rx, Receiver { stream: 1, ..rx }],
            0.5,
        )
        .unwrap();
        assert!((twice.capacity - got.capacity).abs() < 1e-12);
    }
}
