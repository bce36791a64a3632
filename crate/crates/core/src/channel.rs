//! Geometric multipath mmWave channels between access points and users.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{c, CMatrix, CVector};

pub const DEFAULT_SPACING: f64 = 0.5;

/// Antenna array layout. `spacing` is the element spacing in wavelengths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ArrayGeometry {
    Ula { elements: usize, spacing: f64 },
    Upa { horizontal: usize, vertical: usize, spacing: f64 },
}

impl ArrayGeometry {
    pub fn ula(elements: usize) -> Self {
        ArrayGeometry::Ula { elements, spacing: DEFAULT_SPACING }
    }

    pub fn upa(horizontal: usize, vertical: usize) -> Self {
        ArrayGeometry::Upa { horizontal, vertical, spacing: DEFAULT_SPACING }
    }

    pub fn with_spacing(self, spacing: f64) -> Self {
        match self {
            ArrayGeometry::Ula { elements, .. } => ArrayGeometry::Ula { elements, spacing },
            ArrayGeometry::Upa { horizontal, vertical, .. } => {
                ArrayGeometry::Upa { horizontal, vertical, spacing }
            }
        }
    }

    pub fn len(&self) -> usize {
        match *self {
            ArrayGeometry::Ula { elements, .. } => elements,
            ArrayGeometry::Upa { horizontal, vertical, .. } => horizontal * vertical,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self) -> f64 {
        match *self {
            ArrayGeometry::Ula { spacing, .. } | ArrayGeometry::Upa { spacing, .. } => spacing,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::config("array", "element counts must be at least 1"));
        }
        if !(self.spacing() > 0.0 && self.spacing().is_finite()) {
            return Err(Error::config("d_lambda", "element spacing must be positive"));
        }
        Ok(())
    }

    /// Array response toward azimuth `phi`; `theta` (elevation) only matters for planar arrays.
    pub fn response(&self, phi: f64, theta: f64) -> CVector {
        match *self {
            ArrayGeometry::Ula { elements, spacing } => ula_response(elements, spacing, phi),
            ArrayGeometry::Upa { horizontal, vertical, spacing } => {
                upa_response(horizontal, vertical, spacing, phi, theta)
            }
        }
    }
}

/// Unit-norm ULA response, entry `n` = `exp(j 2 pi d n sin(phi)) / sqrt(N)`.
pub fn ula_response(elements: usize, spacing: f64, phi: f64) -> CVector {
    let scale = 1.0 / (elements as f64).sqrt();
    let step = 2.0 * PI * spacing * phi.sin();
    CVector::from_iterator(
        elements,
        (0..elements).map(|n| Complex64::from_polar(scale, step * n as f64)),
    )
}

/// Unit-norm UPA response. Elements are enumerated horizontal-major: the entry
/// for `(h, v)` sits at index `h * vertical + v`.
pub fn upa_response(horizontal: usize, vertical: usize, spacing: f64, phi: f64, theta: f64) -> CVector {
    let n = horizontal * vertical;
    let scale = 1.0 / (n as f64).sqrt();
    let h_step = 2.0 * PI * spacing * phi.sin() * theta.sin();
    let v_step = 2.0 * PI * spacing * theta.cos();
    CVector::from_iterator(
        n,
        (0..n).map(|idx| {
            let (h, v) = (idx / vertical, idx % vertical);
            Complex64::from_polar(scale, h_step * h as f64 + v_step * v as f64)
        }),
    )
}

/// Departure/arrival direction of one path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Direction {
    /// Azimuth in `[0, 2 pi)`.
    pub azimuth: f64,
    /// Elevation in `[0, pi)`; ignored by linear arrays.
    pub elevation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathParams {
    pub gain: Complex64,
    pub arrival: Direction,
    pub departure: Direction,
}

/// One link's channel `H = sqrt(N_T N_R / L) A_R diag(gains) A_T^H`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub h: CMatrix,
    pub a_r: CMatrix,
    pub a_t: CMatrix,
    pub paths: Vec<PathParams>,
    pub user: usize,
    pub ap: usize,
}

impl ChannelRealization {
    pub fn gains(&self) -> Vec<Complex64> {
        self.paths.iter().map(|p| p.gain).collect()
    }

    /// Index of the path with the largest gain magnitude; ties go to the lowest index.
    pub fn strongest_path(&self) -> usize {
        let mut best = 0;
        for (l, p) in self.paths.iter().enumerate() {
            if p.gain.norm() > self.paths[best].gain.norm() {
                best = l;
            }
        }
        best
    }
}

/// `sqrt(N_T N_R / L) * A_R * diag(gains) * A_T^H`.
pub fn assemble_channel(a_r: &CMatrix, gains: &[Complex64], a_t: &CMatrix) -> Result<CMatrix> {
    let paths = gains.len();
    if paths == 0 || a_r.ncols() != paths || a_t.ncols() != paths {
        return Err(Error::dim(format!(
            "steering matrices have {} and {} columns but {} gains were given",
            a_r.ncols(),
            a_t.ncols(),
            paths
        )));
    }
    let scale = ((a_t.nrows() * a_r.nrows()) as f64 / paths as f64).sqrt();
    let mut weighted = a_r.clone();
    for (l, g) in gains.iter().enumerate() {
        weighted.column_mut(l).iter_mut().for_each(|z| *z *= *g);
    }
    Ok(weighted * a_t.adjoint() * c(scale))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for one Monte-Carlo realization under a master seed.
pub fn realization_seed(master: u64, realization: u64) -> u64 {
    splitmix64(splitmix64(master) ^ realization.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// Independent ChaCha stream for link `(user, ap)`: the key comes from `seed`
/// and the stream id from the link coordinates, so draws never depend on the
/// order links are generated in.
pub fn link_rng(seed: u64, user: usize, ap: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((user as u64) << 32) | (ap as u64 & 0xFFFF_FFFF));
    rng
}

fn standard_complex_normal<R: Rng>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Draws the channel from AP `ap` (transmit array `tx`) to user `user`
/// (receive array `rx`): CN(0,1) gains, azimuths uniform on `[0, 2 pi)`,
/// elevations uniform on `[0, pi)`.
pub fn draw_channel(
    seed: u64,
    user: usize,
    ap: usize,
    paths: usize,
    tx: &ArrayGeometry,
    rx: &ArrayGeometry,
) -> Result<ChannelRealization> {
    if paths == 0 {
        return Err(Error::config("L", "at least one multipath component is required"));
    }
    tx.validate()?;
    rx.validate()?;
    let mut rng = link_rng(seed, user, ap);
    let params: Vec<PathParams> = (0..paths)
        .map(|_| {
            let gain = standard_complex_normal(&mut rng);
            let arrival = Direction {
                azimuth: rng.random_range(0.0..2.0 * PI),
                elevation: rng.random_range(0.0..PI),
            };
            let departure = Direction {
                azimuth: rng.random_range(0.0..2.0 * PI),
                elevation: rng.random_range(0.0..PI),
            };
            PathParams { gain, arrival, departure }
        })
        .collect();
    let mut a_r = CMatrix::zeros(rx.len(), paths);
    let mut a_t = CMatrix::zeros(tx.len(), paths);
    for (l, p) in params.iter().enumerate() {
        a_r.set_column(l, &rx.response(p.arrival.azimuth, p.arrival.elevation));
        a_t.set_column(l, &tx.response(p.departure.azimuth, p.departure.elevation));
    }
    let gains: Vec<Complex64> = params.iter().map(|p| p.gain).collect();
    let h = assemble_channel(&a_r, &gains, &a_t)?;
    Ok(ChannelRealization { h, a_r, a_t, paths: params, user, ap })
}

/// Every user-AP link of one network realization, stored user-major.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkChannels {
    pub users: usize,
    pub aps: usize,
    links: Vec<ChannelRealization>,
}

impl NetworkChannels {
    pub fn draw(
        seed: u64,
        users: usize,
        aps: usize,
        paths: usize,
        tx: &ArrayGeometry,
        rx: &ArrayGeometry,
    ) -> Result<Self> {
        let mut links = Vec::with_capacity(users * aps);
        for u in 0..users {
            for m in 0..aps {
                links.push(draw_channel(seed, u, m, paths, tx, rx)?);
            }
        }
        Ok(NetworkChannels { users, aps, links })
    }

    pub fn link(&self, user: usize, ap: usize) -> &ChannelRealization {
        &self.links[user * self.aps + ap]
    }

    /// Channels from every AP to `user`, in AP order.
    pub fn to_user(&self, user: usize) -> Vec<&ChannelRealization> {
        (0..self.aps).map(|m| self.link(user, m)).collect()
    }

    /// Channels from `ap` to every user, in user order.
    pub fn from_ap(&self, ap: usize) -> Vec<&ChannelRealization> {
        (0..self.users).map(|u| self.link(u, ap)).collect()
    }
}
