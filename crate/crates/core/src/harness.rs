//! Monte-Carlo capacity-versus-power sweeps and their CSV persistence.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;

use crate::bl::{
    bl_block_diagonal, bl_vector, build_dictionary_with_spacing, fully_digital_oshb, precoder_matrix, SblOptions,
};
use crate::broadcast::{broadcast_capacity, hbbf_maxmin, hbbf_per_ap, hbbf_total_power};
use crate::channel::{realization_seed, NetworkChannels};
use crate::config::{Scenario, SystemConfig};
use crate::downlink::{baseline_wpa_mrc, oshb_multicast, oshb_unicast, receiver_sinr, Receiver};
use crate::error::{Error, Result};
use crate::linalg::{c, CMatrix, CVector};
use crate::rf::{digital_downlink, hybrid_downlink, EffectiveChannel};
use crate::uplink::{digital_uplink, hybrid_uplink, scuhbf, uplink_capacity};

pub const CSV_HEADER: [&str; 7] = [
    "scenario",
    "scheme",
    "pt_db",
    "realization",
    "capacity_bps_hz",
    "min_sinr_db",
    "wall_ms",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scheme {
    Hbbf,
    HbbfPerAp,
    HbbfMaxMin,
    OshbUnicast,
    Wpa,
    BlHbf,
    OshbMulticast,
    Scuhbf,
    FullyDigital,
}

impl Scheme {
    pub const ALL: [Scheme; 9] = [
        Scheme::Hbbf,
        Scheme::HbbfPerAp,
        Scheme::HbbfMaxMin,
        Scheme::OshbUnicast,
        Scheme::Wpa,
        Scheme::BlHbf,
        Scheme::OshbMulticast,
        Scheme::Scuhbf,
        Scheme::FullyDigital,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Scheme::Hbbf => "HBBF",
            Scheme::HbbfPerAp => "HBBF-P",
            Scheme::HbbfMaxMin => "HBBF-MaxMin",
            Scheme::OshbUnicast => "OSHB-U",
            Scheme::Wpa => "WPA",
            Scheme::BlHbf => "BL-HBF",
            Scheme::OshbMulticast => "OSHB-M",
            Scheme::Scuhbf => "SCUHBF",
            Scheme::FullyDigital => "FD",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Scheme::ALL
            .into_iter()
            .find(|sc| sc.label() == s)
            .ok_or_else(|| format!("unknown scheme `{s}`"))
    }
}

/// Schemes reported for a scenario, in output order.
pub fn schemes(scenario: Scenario) -> &'static [Scheme] {
    match scenario {
        Scenario::Broadcast => &[Scheme::Hbbf, Scheme::FullyDigital],
        Scenario::BroadcastPerAp => &[Scheme::HbbfPerAp, Scheme::Hbbf, Scheme::FullyDigital],
        Scenario::BroadcastMaxMin => &[Scheme::HbbfMaxMin, Scheme::Hbbf, Scheme::FullyDigital],
        Scenario::Unicast => &[Scheme::OshbUnicast, Scheme::FullyDigital, Scheme::Wpa],
        Scenario::UnicastBl => &[Scheme::BlHbf, Scheme::FullyDigital],
        Scenario::Multicast => &[Scheme::OshbMulticast, Scheme::FullyDigital],
        Scenario::Uplink => &[Scheme::Scuhbf, Scheme::FullyDigital],
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    pub scenario: Scenario,
    pub scheme: Scheme,
    pub pt_db: f64,
    pub realization: usize,
    pub capacity: f64,
    pub min_sinr_db: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SweepOptions {
    /// Worker threads; `None` uses every core.
    pub workers: Option<usize>,
    /// Record per-design wall time instead of zero.
    pub timing: bool,
}

fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

fn to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// Capacity and minimum per-user SINR (linear) of one design.
struct Outcome {
    capacity: f64,
    min_sinr: f64,
}

impl Outcome {
    fn new(capacity: f64, sinr: &[f64]) -> Self {
        Outcome { capacity, min_sinr: sinr.iter().copied().fold(f64::INFINITY, f64::min) }
    }
}

/// Evaluates one scheme at every power point, timing each evaluation.
fn sweep_scheme<'a>(
    powers: &[f64],
    timing: bool,
    setup: impl FnOnce() -> Result<Box<dyn Fn(f64) -> Result<Outcome> + 'a>>,
) -> Result<Vec<(Outcome, f64)>> {
    let start = Instant::now();
    let eval = setup()?;
    let setup_ms = start.elapsed().as_secs_f64() * 1e3;
    powers
        .iter()
        .map(|&p| {
            let t = Instant::now();
            let outcome = eval(p)?;
            let ms = if timing { setup_ms + t.elapsed().as_secs_f64() * 1e3 } else { 0.0 };
            Ok((outcome, ms))
        })
        .collect()
}

/// Fixed-direction broadcast design evaluated at every power by scaling.
fn broadcast_eval<'a>(
    channels: &'a [EffectiveChannel],
    noise: f64,
    design: impl FnOnce(&[EffectiveChannel]) -> Result<CVector>,
) -> Result<Box<dyn Fn(f64) -> Result<Outcome> + 'a>> {
    let unit = design(channels)?;
    Ok(Box::new(move |p| {
        let cap = broadcast_capacity(&(&unit * c(p.sqrt())), channels, noise)?;
        Ok(Outcome::new(cap.capacity, &cap.snr))
    }))
}

fn group_channels(channels: &[EffectiveChannel], per_group: usize) -> Vec<Vec<EffectiveChannel>> {
    channels.chunks(per_group).map(|g| g.to_vec()).collect()
}

/// Hybrid approximation of the fully-digital unicast design at one power.
fn bl_outcome(cfg: &SystemConfig, full: &[EffectiveChannel], p: f64) -> Result<Outcome> {
    let fd = fully_digital_oshb(full, p, cfg.noise_var)?;
    let f_opt = precoder_matrix(&fd)?;
    let mut opts = SblOptions::default_for(&f_opt);
    if let Some(s) = cfg.sigma_e_sq {
        opts.sigma_e_sq = s;
    }
    opts.k_max = cfg.k_max;
    opts.epsilon = cfg.epsilon;
    let tx_dict = build_dictionary_with_spacing(cfg.n_t, cfg.grid, cfg.spacing)?;
    let precoder = bl_block_diagonal(&f_opt, &tx_dict, &vec![cfg.n_rf_ap; cfg.aps], &opts)?;
    let hybrid = &precoder.f_rf * &precoder.f_bb;
    let precoders: Vec<CVector> = hybrid.column_iter().map(|col| col.into_owned()).collect();
    let rx_dict = build_dictionary_with_spacing(cfg.n_r, 2 * cfg.n_r, cfg.spacing)?;
    let mut sinr = Vec::with_capacity(full.len());
    for (u, ch) in full.iter().enumerate() {
        let w = &fd.combiners[u];
        let norm = w.norm();
        let unit = if norm > 0.0 { w / c(norm) } else { w.clone() };
        let target = CMatrix::from_column_slice(unit.len(), 1, unit.as_slice());
        let rx_opts = SblOptions { k_max: cfg.k_max, epsilon: cfg.epsilon, ..SblOptions::default_for(&target) };
        let combiner = bl_vector(&unit, &rx_dict, cfg.n_rf_user, &rx_opts)?;
        let w_hybrid: CVector = (&combiner.f_rf * &combiner.f_bb).column(0).into_owned();
        sinr.push(receiver_sinr(&precoders, &Receiver { channel: ch, combiner: &w_hybrid, stream: u }, cfg.noise_var)?);
    }
    let capacity = sinr.iter().map(|s| (1.0 + s).log2()).sum();
    Ok(Outcome::new(capacity, &sinr))
}

/// Every scheme of the scenario on one channel realization, scheme-major.
fn run_realization(cfg: &SystemConfig, r: usize, timing: bool) -> Result<Vec<Vec<(Outcome, f64)>>> {
    let seed = realization_seed(cfg.seed, r as u64);
    let powers: Vec<f64> = cfg.p_t_db.iter().map(|&db| db_to_linear(db)).collect();
    let noise = cfg.noise_var;
    let ap = cfg.ap_array();
    let user = cfg.user_array();
    let mut results = Vec::new();
    if cfg.scenario == Scenario::Uplink {
        let net = NetworkChannels::draw(seed, cfg.users, cfg.aps, cfg.paths, &user, &ap)?;
        let fe = hybrid_uplink(&net, cfg.n_rf_ap, cfg.n_rf_user)?;
        let raw = digital_uplink(&net)?;
        for channels in [&fe.channels, &raw] {
            results.push(sweep_scheme(&powers, timing, || {
                Ok(Box::new(move |p| {
                    let cap = uplink_capacity(&scuhbf(channels, p)?, noise)?;
                    Ok(Outcome::new(cap.capacity, &cap.snr))
                }))
            })?);
        }
        return Ok(results);
    }
    let net = NetworkChannels::draw(seed, cfg.users, cfg.aps, cfg.paths, &ap, &user)?;
    let full = digital_downlink(&net)?;
    let hybrid = if cfg.scenario == Scenario::UnicastBl {
        Vec::new()
    } else {
        hybrid_downlink(&net, cfg.n_rf_ap, cfg.n_rf_user)?.channels
    };
    for &scheme in schemes(cfg.scenario) {
        let hy = hybrid.as_slice();
        let fd = full.as_slice();
        let rows = match (cfg.scenario, scheme) {
            (s, Scheme::Hbbf) if s.is_broadcast() => sweep_scheme(&powers, timing, || {
                broadcast_eval(hy, noise, |ch| Ok(hbbf_total_power(ch, 1.0)?.precoder))
            })?,
            (_, Scheme::HbbfPerAp) => sweep_scheme(&powers, timing, || {
                broadcast_eval(hy, noise, |ch| Ok(hbbf_per_ap(ch, 1.0)?.precoder))
            })?,
            (_, Scheme::HbbfMaxMin) => sweep_scheme(&powers, timing, || {
                broadcast_eval(hy, noise, |ch| Ok(hbbf_maxmin(ch, 1.0)?.design.precoder))
            })?,
            (s, Scheme::FullyDigital) if s.is_broadcast() => sweep_scheme(&powers, timing, || {
                broadcast_eval(fd, noise, |ch| Ok(hbbf_total_power(ch, 1.0)?.precoder))
            })?,
            (Scenario::Unicast, Scheme::OshbUnicast | Scheme::FullyDigital | Scheme::Wpa) => {
                let channels = if scheme == Scheme::FullyDigital { fd } else { hy };
                let wpa = scheme == Scheme::Wpa;
                sweep_scheme(&powers, timing, || {
                    Ok(Box::new(move |p| {
                        let design =
                            if wpa { baseline_wpa_mrc(channels, p, noise)? } else { oshb_unicast(channels, p, noise)? };
                        let cap = design.capacity(channels, noise)?;
                        Ok(Outcome::new(cap.capacity, &cap.sinr))
                    }))
                })?
            }
            (Scenario::UnicastBl, Scheme::BlHbf) => {
                sweep_scheme(&powers, timing, || Ok(Box::new(move |p| bl_outcome(cfg, fd, p))))?
            }
            (Scenario::UnicastBl, Scheme::FullyDigital) => sweep_scheme(&powers, timing, || {
                Ok(Box::new(move |p| {
                    let cap = fully_digital_oshb(fd, p, noise)?.capacity(fd, noise)?;
                    Ok(Outcome::new(cap.capacity, &cap.sinr))
                }))
            })?,
            (Scenario::Multicast, Scheme::OshbMulticast | Scheme::FullyDigital) => {
                let groups = group_channels(if scheme == Scheme::FullyDigital { fd } else { hy }, cfg.users_per_group);
                sweep_scheme(&powers, timing, || {
                    let groups = &groups;
                    Ok(Box::new(move |p| {
                        let cap = oshb_multicast(groups, p, noise)?.capacity(groups, noise)?;
                        Ok(Outcome::new(cap.capacity, &cap.sinr))
                    }))
                })?
            }
            (scenario, scheme) => unreachable!("scheme {scheme} is not part of scenario {scenario}"),
        };
        results.push(rows);
    }
    Ok(results)
}

/// Runs every realization of the configured scenario. Records are ordered
/// by power point, then realization, then scheme, whatever the worker count.
pub fn run_sweep(cfg: &SystemConfig, opts: &SweepOptions) -> Result<Vec<SweepRecord>> {
    cfg.validate()?;
    if opts.workers == Some(0) {
        return Err(Error::config("workers", "must be at least 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidInput(format!("cannot start worker pool: {e}")))?;
    let per_realization: Vec<Result<Vec<Vec<(Outcome, f64)>>>> = pool.install(|| {
        (0..cfg.realizations)
            .into_par_iter()
            .map(|r| run_realization(cfg, r, opts.timing))
            .collect()
    });
    let mut results = Vec::with_capacity(per_realization.len());
    for (r, res) in per_realization.into_iter().enumerate() {
        results.push(res.map_err(|e| Error::Realization { realization: r, source: Box::new(e) })?);
    }
    let scheme_list = schemes(cfg.scenario);
    let mut records = Vec::with_capacity(cfg.p_t_db.len() * cfg.realizations * scheme_list.len());
    for (k, &pt_db) in cfg.p_t_db.iter().enumerate() {
        for (r, rows) in results.iter().enumerate() {
            for (s, &scheme) in scheme_list.iter().enumerate() {
                let (outcome, wall_ms) = &rows[s][k];
                records.push(SweepRecord {
                    scenario: cfg.scenario,
                    scheme,
                    pt_db,
                    realization: r,
                    capacity: outcome.capacity,
                    min_sinr_db: to_db(outcome.min_sinr),
                    wall_ms: *wall_ms,
                });
            }
        }
    }
    Ok(records)
}

fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes records as CSV (LF line endings, 17 significant digits).
pub fn write_csv_to<W: Write>(records: &[SweepRecord], out: W) -> std::result::Result<(), csv::Error> {
    let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    writer.write_record(CSV_HEADER)?;
    for rec in records {
        writer.write_record([
            rec.scenario.as_str().to_string(),
            rec.scheme.label().to_string(),
            fmt_float(rec.pt_db),
            rec.realization.to_string(),
            fmt_float(rec.capacity),
            fmt_float(rec.min_sinr_db),
            fmt_float(rec.wall_ms),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

pub fn write_csv(records: &[SweepRecord], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    write_csv_to(records, BufWriter::new(file)).map_err(|source| Error::Csv { path: path.to_path_buf(), source })
}

pub fn read_csv(path: &Path) -> Result<Vec<SweepRecord>> {
    let mut reader = csv::Reader::from_path(path).map_err(|source| Error::Csv { path: path.to_path_buf(), source })?;
    let header = reader.headers().map_err(|source| Error::Csv { path: path.to_path_buf(), source })?;
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::Parse { line: 1, reason: format!("unexpected header `{}`", header.iter().collect::<Vec<_>>().join(",")) });
    }
    let mut records = Vec::new();
    for (idx, row) in reader.records().enumerate() {
        let line = idx + 2;
        let row = row.map_err(|source| Error::Csv { path: path.to_path_buf(), source })?;
        let field = |i: usize| row.get(i).ok_or_else(|| Error::Parse { line, reason: format!("missing column {}", CSV_HEADER[i]) });
        let float = |i: usize| -> Result<f64> {
            field(i)?.parse::<f64>().map_err(|e| Error::Parse { line, reason: format!("{}: {e}", CSV_HEADER[i]) })
        };
        records.push(SweepRecord {
            scenario: field(0)?.parse().map_err(|reason| Error::Parse { line, reason })?,
            scheme: field(1)?.parse().map_err(|reason| Error::Parse { line, reason })?,
            pt_db: float(2)?,
            realization: field(3)?
                .parse()
                .map_err(|e| Error::Parse { line, reason: format!("realization: {e}") })?,
            capacity: float(4)?,
            min_sinr_db: float(5)?,
            wall_ms: float(6)?,
        });
    }
    Ok(records)
}

/// Mean capacity per scheme at each power point, schemes in scenario order.
pub fn mean_capacity(records: &[SweepRecord], scenario: Scenario, pt_db: &[f64]) -> Vec<(Scheme, Vec<f64>)> {
    schemes(scenario)
        .iter()
        .map(|&scheme| {
            let means = pt_db
                .iter()
                .map(|&pt| {
                    let (sum, n) = records
                        .iter()
                        .filter(|r| r.scheme == scheme && r.pt_db == pt)
                        .fold((0.0, 0usize), |(s, n), r| (s + r.capacity, n + 1));
                    if n == 0 { f64::NAN } else { sum / n as f64 }
                })
                .collect();
            (scheme, means)
        })
        .collect()
}
