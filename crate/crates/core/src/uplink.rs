//! Successive uplink hybrid beamforming (SCUHBF): every user's baseband
//! precoder maximizes its own received energy subject to being orthogonal,
//! after the channel, to the received signatures of the users before it.

use crate::channel::NetworkChannels;
use crate::error::{Error, Result};
use crate::linalg::{c, nullspace_basis, principal_singular_triple, vstack, CMatrix, CVector};
use crate::rf::{effective_channel, select_rf_combiner, select_rf_precoder, RfCombiner, RfPrecoder};

#[derive(Debug, Clone)]
pub struct UplinkDesign {
    /// `f_BB,u = sqrt(P) M_perp b_u`.
    pub precoders: Vec<CVector>,
    /// `w_BB,u = H_eff,u f_BB,u`.
    pub combiners: Vec<CVector>,
    /// `M_{u-1}`: rows `f_i^H H_eff,i^H H_eff,u` of the earlier users.
    pub constraints: Vec<CMatrix>,
    /// `||H_eff,u M_perp b_u||^2`.
    pub gains: Vec<f64>,
    pub power: f64,
}

/// SCUHBF with per-user transmit power `P`.
pub fn scuhbf(channels: &[CMatrix], power: f64) -> Result<UplinkDesign> {
    if !(power > 0.0 && power.is_finite()) {
        return Err(Error::config("P", format!("uplink power must be positive, got {power}")));
    }
    if channels.is_empty() {
        return Err(Error::config("U", "uplink design needs at least one user"));
    }
    let rows = channels[0].nrows();
    if channels.iter().any(|h| h.nrows() != rows) {
        return Err(Error::dim("all users must reach the same AP-side RF dimensions"));
    }
    let amp = c(power.sqrt());
    let users = channels.len();
    let mut design = UplinkDesign {
        precoders: Vec::with_capacity(users),
        combiners: Vec::with_capacity(users),
        constraints: Vec::with_capacity(users),
        gains: Vec::with_capacity(users),
        power,
    };
    for (u, h) in channels.iter().enumerate() {
        let width = h.ncols();
        if u >= width {
            return Err(Error::CapacityExceeded { requested: users, available: width });
        }
        let mut m = CMatrix::zeros(u, width);
        for (i, w) in design.combiners.iter().enumerate() {
            m.set_row(i, &(h.adjoint() * w).adjoint());
        }
        let basis = nullspace_basis(&m)?;
        if basis.ncols() == 0 {
            return Err(Error::CapacityExceeded { requested: users, available: width });
        }
        let projected = h * &basis;
        let (b, gain) = match principal_singular_triple(&projected) {
            Ok(t) => (t.right, t.sigma * t.sigma),
            Err(Error::Degenerate(_)) => (CVector::from_element(basis.ncols(), c(0.0)), 0.0),
            Err(e) => return Err(e),
        };
        let f = &basis * b * amp;
        design.combiners.push(h * &f);
        design.precoders.push(f);
        design.constraints.push(m);
        design.gains.push(gain);
    }
    Ok(design)
}

#[derive(Debug, Clone, PartialEq)]
pub struct UplinkCapacity {
    pub snr: Vec<f64>,
    pub rates: Vec<f64>,
    pub capacity: f64,
}

/// `R_u = log2(1 + P ||H_eff,u M_perp b_u||^2 / sigma^2)`.
pub fn uplink_capacity(design: &UplinkDesign, noise_var: f64) -> Result<UplinkCapacity> {
    if !(noise_var > 0.0) {
        return Err(Error::config("sigma_delta_sq", "noise variance must be positive"));
    }
    let snr: Vec<f64> = design.gains.iter().map(|g| design.power * g / noise_var).collect();
    let rates: Vec<f64> = snr.iter().map(|s| (1.0 + s).log2()).collect();
    let capacity = rates.iter().sum();
    Ok(UplinkCapacity { snr, rates, capacity })
}

/// Hybrid uplink front end. The network must be drawn with the AP array on
/// the receive side and the user array on the transmit side.
#[derive(Debug, Clone)]
pub struct UplinkFrontEnd {
    pub combiners: Vec<RfCombiner>,
    pub precoders: Vec<RfPrecoder>,
    /// `H_eff,u`: vertical stack over APs of `W_RF,m^H H_{u,m} F_RF,u`.
    pub channels: Vec<CMatrix>,
}

pub fn hybrid_uplink(net: &NetworkChannels, n_rf_ap: usize, n_rf_user: usize) -> Result<UplinkFrontEnd> {
    let combiners = (0..net.aps)
        .map(|m| select_rf_combiner(&net.from_ap(m), n_rf_ap))
        .collect::<Result<Vec<_>>>()?;
    let precoders = (0..net.users)
        .map(|u| select_rf_precoder(&net.to_user(u), n_rf_user))
        .collect::<Result<Vec<_>>>()?;
    let channels = (0..net.users)
        .map(|u| {
            let blocks = (0..net.aps)
                .map(|m| effective_channel(&combiners[m].matrix, &net.link(u, m).h, &precoders[u].matrix))
                .collect::<Result<Vec<_>>>()?;
            vstack(&blocks)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(UplinkFrontEnd { combiners, precoders, channels })
}

/// Raw uplink channels, each user's links stacked over APs.
pub fn digital_uplink(net: &NetworkChannels) -> Result<Vec<CMatrix>> {
    (0..net.users)
        .map(|u| {
            let blocks: Vec<CMatrix> = net.to_user(u).iter().map(|l| l.h.clone()).collect();
            vstack(&blocks)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    #[test]
    fn scalar_closed_form() {
        let h = CMatrix::from_element(1, 1, Complex64::new(0.6, 0.8) * 2.0);
        let d = scuhbf(&[h], 3.0).unwrap();
        let cap = uplink_capacity(&d, 0.5).unwrap();
        assert!((cap.capacity - (1.0 + 3.0 * 4.0 / 0.5f64).log2()).abs() < 1e-12);
        assert!((d.precoders[0].norm_squared() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_channel_gives_zero_rate() {
        let d = scuhbf(&[CMatrix::zeros(3, 2), CMatrix::zeros(3, 2)], 1.0).unwrap();
        assert_eq!(uplink_capacity(&d, 1.0).unwrap().capacity, 0.0);
    }

    #[test]
    fn too_many_users_for_the_rf_chains() {
        let h: Vec<CMatrix> = (0..3)
            .map(|k| CMatrix::from_fn(4, 2, |i, j| c((i + 2 * j + k) as f64 + 1.0) + Complex64::i() * (i * j) as f64))
            .collect();
        assert!(scuhbf(&h[..2], 1.0).is_ok());
        assert!(matches!(scuhbf(&h, 1.0), Err(Error::CapacityExceeded { requested: 3, available: 2 })));
        assert!(matches!(scuhbf(&h, 0.0), Err(Error::Config { .. })));
    }
}
