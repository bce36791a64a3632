//! Analog RF stages built from dominant array responses, and the effective
//! baseband channels they induce.

use crate::channel::{ChannelRealization, NetworkChannels};
use crate::error::{Error, Result};
use crate::linalg::{hstack, CMatrix};

/// Which end of a link an RF stage sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// Columns taken from the links' departure steering matrices `A_T`.
    Transmit,
    /// Columns taken from the links' arrival steering matrices `A_R`.
    Receive,
}

/// An analog beamforming matrix whose columns are array responses, plus the
/// `(link, path)` pair each column was taken from.
#[derive(Debug, Clone, PartialEq)]
pub struct RfStage {
    pub matrix: CMatrix,
    pub selected: Vec<(usize, usize)>,
}

pub type RfPrecoder = RfStage;
pub type RfCombiner = RfStage;

/// Picks one steering column per link from its strongest path.
///
/// With fewer RF chains than links, the links whose strongest path has the
/// largest gain magnitude win; the chosen links keep their original order.
pub fn select_steering(channels: &[&ChannelRealization], n_rf: usize, side: Side) -> Result<RfStage> {
    if n_rf == 0 {
        return Err(Error::config("n_rf", "at least one RF chain is required"));
    }
    if n_rf > channels.len() {
        return Err(Error::config(
            "n_rf",
            format!("{n_rf} RF chains requested but only {} links to steer toward", channels.len()),
        ));
    }
    let strongest: Vec<(usize, usize, f64)> = channels
        .iter()
        .enumerate()
        .map(|(k, ch)| {
            let l = ch.strongest_path();
            (k, l, ch.paths[l].gain.norm())
        })
        .collect();
    let mut chosen = strongest.clone();
    if n_rf < channels.len() {
        chosen.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
        chosen.truncate(n_rf);
        chosen.sort_by_key(|s| s.0);
    }
    let columns: Vec<CMatrix> = chosen
        .iter()
        .map(|&(k, l, _)| {
            let steering = match side {
                Side::Transmit => &channels[k].a_t,
                Side::Receive => &channels[k].a_r,
            };
            steering.columns(l, 1).into_owned()
        })
        .collect();
    Ok(RfStage {
        matrix: hstack(&columns)?,
        selected: chosen.iter().map(|&(k, l, _)| (k, l)).collect(),
    })
}

/// RF precoder of one AP: column `u` steers toward user `u`'s strongest path.
/// `channels` holds that AP's link to every user, in user order.
pub fn select_rf_precoder(channels: &[&ChannelRealization], n_rf: usize) -> Result<RfPrecoder> {
    select_steering(channels, n_rf, Side::Transmit)
}

/// RF combiner of one user: column `m` points at AP `m`'s strongest path.
/// `channels` holds the user's link from every AP, in AP order.
pub fn select_rf_combiner(channels: &[&ChannelRealization], n_rf: usize) -> Result<RfCombiner> {
    select_steering(channels, n_rf, Side::Receive)
}

/// `W_RF^H H F_RF`.
pub fn effective_channel(w_rf: &CMatrix, h: &CMatrix, f_rf: &CMatrix) -> Result<CMatrix> {
    if w_rf.nrows() != h.nrows() || h.ncols() != f_rf.nrows() {
        return Err(Error::dim(format!(
            "cannot form W^H H F with W {:?}, H {:?}, F {:?}",
            w_rf.shape(),
            h.shape(),
            f_rf.shape()
        )));
    }
    Ok(w_rf.adjoint() * h * f_rf)
}

/// One user's view of the network after analog processing: per-AP blocks
/// `W_RF,u^H H_{u,m} F_RF,m`, their horizontal concatenation in AP order, and
/// the user's RF combiner (needed for the combined-noise covariance).
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveChannel {
    pub blocks: Vec<CMatrix>,
    pub matrix: CMatrix,
    pub w_rf: CMatrix,
}

impl EffectiveChannel {
    pub fn from_blocks(blocks: Vec<CMatrix>, w_rf: CMatrix) -> Result<Self> {
        let matrix = hstack(&blocks)?;
        if matrix.nrows() != w_rf.ncols() {
            return Err(Error::dim("effective channel rows must match RF combiner columns"));
        }
        Ok(EffectiveChannel { blocks, matrix, w_rf })
    }

    /// Receive RF chains at this user.
    pub fn rx_dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Total AP-side RF chains (length of a stacked baseband precoder).
    pub fn tx_dim(&self) -> usize {
        self.matrix.ncols()
    }

    /// `W_RF^H W_RF`, the covariance of unit-variance antenna noise after RF combining.
    pub fn noise_gram(&self) -> CMatrix {
        self.w_rf.adjoint() * &self.w_rf
    }
}

/// Hybrid front end of a downlink realization.
#[derive(Debug, Clone)]
pub struct DownlinkFrontEnd {
    pub precoders: Vec<RfPrecoder>,
    pub combiners: Vec<RfCombiner>,
    pub channels: Vec<EffectiveChannel>,
}

/// Builds every AP's RF precoder, every user's RF combiner, and the resulting
/// effective channels.
pub fn hybrid_downlink(net: &NetworkChannels, n_rf_ap: usize, n_rf_user: usize) -> Result<DownlinkFrontEnd> {
    let precoders = (0..net.aps)
        .map(|m| select_rf_precoder(&net.from_ap(m), n_rf_ap))
        .collect::<Result<Vec<_>>>()?;
    let combiners = (0..net.users)
        .map(|u| select_rf_combiner(&net.to_user(u), n_rf_user))
        .collect::<Result<Vec<_>>>()?;
    let channels = (0..net.users)
        .map(|u| {
            let w = &combiners[u].matrix;
            let blocks = (0..net.aps)
                .map(|m| effective_channel(w, &net.link(u, m).h, &precoders[m].matrix))
                .collect::<Result<Vec<_>>>()?;
            EffectiveChannel::from_blocks(blocks, w.clone())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DownlinkFrontEnd { precoders, combiners, channels })
}

/// Fully-digital reference: identity RF stages, so the "effective" blocks are
/// the raw channel matrices.
pub fn digital_downlink(net: &NetworkChannels) -> Result<Vec<EffectiveChannel>> {
    (0..net.users)
        .map(|u| {
            let blocks: Vec<CMatrix> = net.to_user(u).iter().map(|ch| ch.h.clone()).collect();
            let n_r = blocks[0].nrows();
            EffectiveChannel::from_blocks(blocks, CMatrix::identity(n_r, n_r))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{ula_response, ArrayGeometry, Direction, PathParams};
    use crate::linalg::c;
    use num_complex::Complex64;

    fn link(user: usize, ap: usize, gains: &[f64], aods: &[f64], aoas: &[f64]) -> ChannelRealization {
        let (n_t, n_r) = (8, 4);
        let l = gains.len();
        let mut a_t = CMatrix::zeros(n_t, l);
        let mut a_r = CMatrix::zeros(n_r, l);
        let mut paths = Vec::new();
        for k in 0..l {
            a_t.set_column(k, &ula_response(n_t, 0.5, aods[k]));
            a_r.set_column(k, &ula_response(n_r, 0.5, aoas[k]));
            paths.push(PathParams {
                gain: Complex64::new(gains[k], 0.0),
                arrival: Direction { azimuth: aoas[k], elevation: 0.0 },
                departure: Direction { azimuth: aods[k], elevation: 0.0 },
            });
        }
        let g: Vec<Complex64> = gains.iter().map(|&x| c(x)).collect();
        let h = crate::channel::assemble_channel(&a_r, &g, &a_t).unwrap();
        ChannelRealization { h, a_r, a_t, paths, user, ap }
    }

    #[test]
    fn picks_strongest_path_column() {
        let ch = link(0, 0, &[0.1, 2.0, 0.5], &[0.1, 0.9, 1.7], &[0.2, 0.4, 0.6]);
        let f = select_rf_precoder(&[&ch], 1).unwrap();
        assert_eq!(f.selected, vec![(0, 1)]);
        assert_eq!(f.matrix.column(0), ch.a_t.column(1));
        assert!(f.matrix.iter().all(|z| (z.norm() - 1.0 / 8f64.sqrt()).abs() < 1e-15));
    }

    #[test]
    fn ties_go_to_lowest_path_index() {
        let ch = link(0, 0, &[1.0, 1.0], &[0.3, 0.8], &[0.2, 0.4]);
        assert_eq!(select_rf_precoder(&[&ch], 1).unwrap().selected, vec![(0, 0)]);
    }

    #[test]
    fn two_users_brute_force_argmax() {
        let a = link(0, 0, &[0.3, 1.5, 0.2], &[0.1, 0.5, 0.9], &[0.0; 3]);
        let b = link(1, 0, &[2.5, 0.4, 1.0], &[1.3, 1.9, 2.4], &[0.0; 3]);
        let f = select_rf_precoder(&[&a, &b], 2).unwrap();
        let oracle: Vec<(usize, usize)> = [&a, &b]
            .iter()
            .enumerate()
            .map(|(k, ch)| {
                let l = (0..ch.paths.len())
                    .max_by(|&i, &j| ch.paths[i].gain.norm().total_cmp(&ch.paths[j].gain.norm()))
                    .unwrap();
                (k, l)
            })
            .collect();
        assert_eq!(f.selected, oracle);
        assert_ne!(f.matrix.column(0), f.matrix.column(1));
    }

    #[test]
    fn argmax_is_invariant_to_path_permutation() {
        let a = link(0, 0, &[0.3, 1.5, 0.2], &[0.1, 0.5, 0.9], &[0.0; 3]);
        let b = link(0, 0, &[0.2, 0.3, 1.5], &[0.9, 0.1, 0.5], &[0.0; 3]);
        let fa = select_rf_precoder(&[&a], 1).unwrap();
        let fb = select_rf_precoder(&[&b], 1).unwrap();
        assert_eq!(fa.matrix, fb.matrix);
    }

    #[test]
    fn fewer_chains_than_users_serves_strongest() {
        let a = link(0, 0, &[0.3], &[0.1], &[0.0]);
        let b = link(1, 0, &[2.0], &[0.7], &[0.0]);
        let d = link(2, 0, &[1.0], &[1.4], &[0.0]);
        let f = select_rf_precoder(&[&a, &b, &d], 2).unwrap();
        assert_eq!(f.selected, vec![(1, 0), (2, 0)]);
    }

    #[test]
    fn too_many_chains_is_a_config_error() {
        let a = link(0, 0, &[0.3], &[0.1], &[0.0]);
        assert!(matches!(select_rf_precoder(&[&a], 2), Err(Error::Config { .. })));
    }

    #[test]
    fn combiner_uses_receive_steering() {
        let ch = link(0, 0, &[0.5], &[0.3], &[1.1]);
        let w = select_rf_combiner(&[&ch], 1).unwrap();
        assert_eq!(w.matrix.column(0), ch.a_r.column(0));
        assert!(w.matrix.iter().all(|z| (z.norm() - 0.5).abs() < 1e-15));
        let ch2 = link(0, 1, &[0.1, 0.9], &[0.3, 0.2], &[1.1, 2.2]);
        let w = select_rf_combiner(&[&ch, &ch2], 2).unwrap();
        assert_eq!(w.selected, vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn effective_channel_with_canonical_selectors_is_a_submatrix() {
        let h = CMatrix::from_fn(3, 4, |i, j| Complex64::new(i as f64, j as f64));
        let mut w = CMatrix::zeros(3, 2);
        w[(0, 0)] = c(1.0);
        w[(2, 1)] = c(1.0);
        let mut f = CMatrix::zeros(4, 2);
        f[(1, 0)] = c(1.0);
        f[(3, 1)] = c(1.0);
        let e = effective_channel(&w, &h, &f).unwrap();
        assert_eq!(e[(0, 0)], h[(0, 1)]);
        assert_eq!(e[(1, 1)], h[(2, 3)]);
        assert_eq!(effective_channel(&w, &CMatrix::zeros(3, 4), &f).unwrap().norm(), 0.0);
        assert!(effective_channel(&f, &h, &w).is_err());
    }

    #[test]
    fn effective_channel_matches_naive_product() {
        let net = NetworkChannels::draw(5, 1, 1, 6, &ArrayGeometry::ula(8), &ArrayGeometry::ula(4)).unwrap();
        let ch = net.link(0, 0);
        let w = CMatrix::from_fn(4, 2, |i, j| Complex64::new((i + j) as f64 * 0.1, 0.3));
        let f = CMatrix::from_fn(8, 3, |i, j| Complex64::new(0.2, (i * j) as f64 * 0.05));
        let e = effective_channel(&w, &ch.h, &f).unwrap();
        for a in 0..2 {
            for b in 0..3 {
                let mut acc = c(0.0);
                for i in 0..4 {
                    for j in 0..8 {
                        acc += w[(i, a)].conj() * ch.h[(i, j)] * f[(j, b)];
                    }
                }
                assert!((acc - e[(a, b)]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn downlink_blocks_follow_ap_order() {
        let net = NetworkChannels::draw(8, 3, 2, 6, &ArrayGeometry::ula(16), &ArrayGeometry::ula(8)).unwrap();
        let fe = hybrid_downlink(&net, 3, 2).unwrap();
        for (u, eff) in fe.channels.iter().enumerate() {
            assert_eq!(eff.matrix.shape(), (2, 6));
            for m in 0..2 {
                let direct = effective_channel(&fe.combiners[u].matrix, &net.link(u, m).h, &fe.precoders[m].matrix).unwrap();
                assert_eq!(eff.matrix.columns(3 * m, 3), direct.columns(0, 3));
            }
        }
        let dig = digital_downlink(&net).unwrap();
        assert_eq!(dig[0].matrix.shape(), (8, 32));
    }
}
