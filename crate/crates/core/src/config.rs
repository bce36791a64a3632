//! Flat `key=value` experiment configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::channel::ArrayGeometry;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scenario {
    Broadcast,
    BroadcastPerAp,
    BroadcastMaxMin,
    Unicast,
    UnicastBl,
    Multicast,
    Uplink,
}

impl Scenario {
    pub const ALL: [Scenario; 7] = [
        Scenario::Broadcast,
        Scenario::BroadcastPerAp,
        Scenario::BroadcastMaxMin,
        Scenario::Unicast,
        Scenario::UnicastBl,
        Scenario::Multicast,
        Scenario::Uplink,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Broadcast => "broadcast",
            Scenario::BroadcastPerAp => "broadcast_per_ap",
            Scenario::BroadcastMaxMin => "broadcast_maxmin",
            Scenario::Unicast => "unicast",
            Scenario::UnicastBl => "unicast_bl",
            Scenario::Multicast => "multicast",
            Scenario::Uplink => "uplink",
        }
    }

    pub fn is_broadcast(self) -> bool {
        matches!(self, Scenario::Broadcast | Scenario::BroadcastPerAp | Scenario::BroadcastMaxMin)
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Scenario::ALL.iter().map(|sc| sc.as_str()).collect();
                format!("unknown scenario `{s}` (expected one of {})", names.join(", "))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArrayKind {
    Ula,
    /// Horizontal x vertical element counts at the APs and at the users.
    Upa { ap: (usize, usize), user: (usize, usize) },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    pub scenario: Scenario,
    /// `M`
    pub aps: usize,
    /// `U` (for multicast, `G * U_g`)
    pub users: usize,
    /// `G`
    pub groups: usize,
    /// `U_g`
    pub users_per_group: usize,
    /// `N_T`
    pub n_t: usize,
    /// `N_R`
    pub n_r: usize,
    pub n_rf_ap: usize,
    pub n_rf_user: usize,
    pub array: ArrayKind,
    /// Element spacing in wavelengths.
    pub spacing: f64,
    /// `L`
    pub paths: usize,
    pub noise_var: f64,
    pub p_t_db: Vec<f64>,
    pub realizations: usize,
    pub seed: u64,
    /// Transmit dictionary size `S`.
    pub grid: usize,
    /// Fixed SBL error variance; `None` picks one percent of the mean target entry energy.
    pub sigma_e_sq: Option<f64>,
    pub k_max: usize,
    pub epsilon: f64,
}

const KEYS: &[&str] = &[
    "scenario", "M", "U", "G", "U_g", "N_T", "N_R", "N_RF_ap", "N_RF_user", "array", "ap_upa", "user_upa", "d", "L",
    "sigma_delta_sq", "p_t_db", "realizations", "seed", "S", "sigma_e_sq", "k_max", "epsilon",
];

fn canonical_key(key: &str) -> Option<&'static str> {
    let key = match key {
        "p_t_dbm_grid" => "p_t_db",
        "master_seed" => "seed",
        other => other,
    };
    KEYS.iter().copied().find(|k| *k == key)
}

/// Raw `key -> (value, line)` pairs.
#[derive(Debug, Clone, Default)]
pub struct ConfigText {
    entries: BTreeMap<&'static str, (String, usize)>,
}

impl ConfigText {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::Parse {
                line,
                reason: format!("expected `key=value`, found `{content}`"),
            })?;
            let key = key.trim();
            let canonical = canonical_key(key).ok_or_else(|| Error::Parse {
                line,
                reason: format!("unknown key `{key}`"),
            })?;
            let value = value.trim();
            if value.is_empty() {
                return Err(Error::Parse { line, reason: format!("`{key}` has an empty value") });
            }
            if entries.insert(canonical, (value.to_string(), line)).is_some() {
                return Err(Error::Parse { line, reason: format!("`{key}` is set more than once") });
            }
        }
        Ok(ConfigText { entries })
    }

    /// Replaces (or adds) a value; overrides carry line 0.
    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        let canonical = canonical_key(key).ok_or_else(|| Error::config(key, "unknown key"))?;
        self.entries.insert(canonical, (value.into(), 0));
        Ok(())
    }

    fn get<T: FromStr>(&self, key: &'static str) -> Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        match self.entries.get(key) {
            None => Ok(None),
            Some((value, line)) => value.parse::<T>().map(Some).map_err(|e| parse_error(key, value, *line, e)),
        }
    }

    fn list(&self, key: &'static str) -> Result<Option<Vec<f64>>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some((value, line)) => value
                .split(',')
                .map(|item| item.trim().parse::<f64>().map_err(|e| parse_error(key, value, *line, e)))
                .collect::<Result<Vec<_>>>()
                .map(Some),
        }
    }

    fn pair(&self, key: &'static str) -> Result<Option<(usize, usize)>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some((value, line)) => {
                let bad = || parse_error(key, value, *line, "expected `HxV`");
                let (h, v) = value.split_once(['x', 'X']).ok_or_else(bad)?;
                let h = h.trim().parse::<usize>().map_err(|_| bad())?;
                let v = v.trim().parse::<usize>().map_err(|_| bad())?;
                Ok(Some((h, v)))
            }
        }
    }

    /// Fills defaults and checks every invariant.
    pub fn build(&self) -> Result<SystemConfig> {
        let scenario = match self.entries.get("scenario") {
            None => return Err(Error::config("scenario", "no scenario given")),
            Some((value, line)) => value.parse::<Scenario>().map_err(|reason| {
                if *line == 0 {
                    Error::config("scenario", reason)
                } else {
                    Error::Parse { line: *line, reason }
                }
            })?,
        };
        let aps = self.get("M")?.unwrap_or(4);
        let (users, groups, users_per_group) = if scenario == Scenario::Multicast {
            let groups: usize = self.get("G")?.unwrap_or(2);
            let given_u: Option<usize> = self.get("U")?;
            let per_group = match (self.get::<usize>("U_g")?, given_u) {
                (Some(ug), _) => ug,
                (None, Some(u)) if groups > 0 && u % groups == 0 => u / groups,
                (None, Some(u)) => {
                    return Err(Error::config("U", format!("{u} users cannot be split evenly into {groups} groups")))
                }
                (None, None) => 2,
            };
            let users = groups * per_group;
            if let Some(u) = given_u {
                if u != users {
                    return Err(Error::config("U", format!("U={u} but G * U_g = {users}")));
                }
            }
            (users, groups, per_group)
        } else {
            let users = self.get("U")?.unwrap_or(4);
            (users, 1, users)
        };
        let array_name: String = self.get("array")?.unwrap_or_else(|| "ula".to_string());
        let array = match array_name.to_ascii_lowercase().as_str() {
            "ula" => ArrayKind::Ula,
            "upa" => {
                let ap = self.pair("ap_upa")?.ok_or_else(|| Error::config("ap_upa", "UPA arrays need `ap_upa=HxV`"))?;
                let user = self
                    .pair("user_upa")?
                    .ok_or_else(|| Error::config("user_upa", "UPA arrays need `user_upa=HxV`"))?;
                ArrayKind::Upa { ap, user }
            }
            other => return Err(Error::config("array", format!("unknown array kind `{other}` (ula or upa)"))),
        };
        let (n_t, n_r) = match array {
            ArrayKind::Ula => (self.get("N_T")?.unwrap_or(16), self.get("N_R")?.unwrap_or(8)),
            ArrayKind::Upa { ap, user } => (ap.0 * ap.1, user.0 * user.1),
        };
        if let ArrayKind::Upa { .. } = array {
            if let Some(given) = self.get::<usize>("N_T")? {
                if given != n_t {
                    return Err(Error::config("N_T", format!("N_T={given} but ap_upa has {n_t} elements")));
                }
            }
            if let Some(given) = self.get::<usize>("N_R")? {
                if given != n_r {
                    return Err(Error::config("N_R", format!("N_R={given} but user_upa has {n_r} elements")));
                }
            }
        }
        let config = SystemConfig {
            scenario,
            aps,
            users,
            groups,
            users_per_group,
            n_t,
            n_r,
            n_rf_ap: self.get("N_RF_ap")?.unwrap_or(users),
            n_rf_user: self.get("N_RF_user")?.unwrap_or(aps),
            array,
            spacing: self.get("d")?.unwrap_or(0.5),
            paths: self.get("L")?.unwrap_or(6),
            noise_var: self.get("sigma_delta_sq")?.unwrap_or(1.0),
            p_t_db: self.list("p_t_db")?.unwrap_or_else(|| vec![0.0, 5.0, 10.0, 15.0, 20.0]),
            realizations: self.get("realizations")?.unwrap_or(3000),
            seed: self.get("seed")?.unwrap_or(0),
            grid: self.get("S")?.unwrap_or(2 * n_t),
            sigma_e_sq: self.get("sigma_e_sq")?,
            k_max: self.get("k_max")?.unwrap_or(50),
            epsilon: self.get("epsilon")?.unwrap_or(1e-6),
        };
        config.validate()?;
        Ok(config)
    }
}

fn parse_error(key: &str, value: &str, line: usize, err: impl fmt::Display) -> Error {
    if line == 0 {
        Error::config(key, format!("invalid value `{value}`: {err}"))
    } else {
        Error::Parse { line, reason: format!("invalid value `{value}` for `{key}`: {err}") }
    }
}

/// Parses and validates a configuration file.
pub fn parse_config(text: &str) -> Result<SystemConfig> {
    ConfigText::parse(text)?.build()
}

impl SystemConfig {
    pub fn ap_array(&self) -> ArrayGeometry {
        match self.array {
            ArrayKind::Ula => ArrayGeometry::ula(self.n_t),
            ArrayKind::Upa { ap, .. } => ArrayGeometry::upa(ap.0, ap.1),
        }
        .with_spacing(self.spacing)
    }

    pub fn user_array(&self) -> ArrayGeometry {
        match self.array {
            ArrayKind::Ula => ArrayGeometry::ula(self.n_r),
            ArrayKind::Upa { user, .. } => ArrayGeometry::upa(user.0, user.1),
        }
        .with_spacing(self.spacing)
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("M", self.aps),
            ("U", self.users),
            ("G", self.groups),
            ("U_g", self.users_per_group),
            ("N_T", self.n_t),
            ("N_R", self.n_r),
            ("N_RF_ap", self.n_rf_ap),
            ("N_RF_user", self.n_rf_user),
            ("L", self.paths),
            ("realizations", self.realizations),
            ("S", self.grid),
            ("k_max", self.k_max),
        ];
        for (field, value) in counts {
            if value == 0 {
                return Err(Error::config(field, "must be at least 1"));
            }
        }
        if !(self.noise_var > 0.0 && self.noise_var.is_finite()) {
            return Err(Error::config("sigma_delta_sq", "noise variance must be positive and finite"));
        }
        if !(self.spacing > 0.0 && self.spacing.is_finite()) {
            return Err(Error::config("d", "element spacing must be positive and finite"));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::config("epsilon", "must be positive and finite"));
        }
        if let Some(s) = self.sigma_e_sq {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::config("sigma_e_sq", "must be positive and finite"));
            }
        }
        if self.p_t_db.is_empty() || self.p_t_db.iter().any(|p| !p.is_finite()) {
            return Err(Error::config("p_t_db", "need at least one finite power point"));
        }
        let ap_chains = self.aps * self.n_rf_ap;
        if self.scenario == Scenario::UnicastBl {
            if self.array != ArrayKind::Ula {
                return Err(Error::config("array", "the dictionary decomposition supports ULAs only"));
            }
            if self.n_rf_ap > self.grid {
                return Err(Error::config("N_RF_ap", format!("exceeds the dictionary size S={}", self.grid)));
            }
            if self.n_rf_user > 2 * self.n_r {
                return Err(Error::config("N_RF_user", format!("exceeds the receive dictionary size {}", 2 * self.n_r)));
            }
        } else {
            if self.n_rf_ap > self.users {
                return Err(Error::config(
                    "N_RF_ap",
                    format!("{} AP RF chains but only {} users to steer toward", self.n_rf_ap, self.users),
                ));
            }
            if self.n_rf_user > self.aps {
                return Err(Error::config(
                    "N_RF_user",
                    format!("{} user RF chains but only {} APs to steer toward", self.n_rf_user, self.aps),
                ));
            }
        }
        match self.scenario {
            Scenario::Unicast | Scenario::UnicastBl if self.users > ap_chains => {
                Err(Error::CapacityExceeded { requested: self.users, available: ap_chains })
            }
            Scenario::Multicast if (self.groups - 1) * self.users_per_group >= ap_chains => Err(Error::CapacityExceeded {
                requested: (self.groups - 1) * self.users_per_group + 1,
                available: ap_chains,
            }),
            Scenario::Uplink if self.users > self.n_rf_user => {
                Err(Error::CapacityExceeded { requested: self.users, available: self.n_rf_user })
            }
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_needs_a_scenario() {
        match parse_config("") {
            Err(Error::Config { field, .. }) => assert_eq!(field, "scenario"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unicast_example() {
        let cfg = parse_config("scenario=unicast\nM=4\nU=4\nN_T=16\nN_R=8\nN_RF_ap=4").unwrap();
        assert_eq!(cfg.scenario, Scenario::Unicast);
        assert_eq!((cfg.aps, cfg.users, cfg.n_t, cfg.n_r, cfg.n_rf_ap, cfg.n_rf_user), (4, 4, 16, 8, 4, 4));
        assert_eq!((cfg.paths, cfg.realizations, cfg.seed), (6, 3000, 0));
        assert_eq!((cfg.noise_var, cfg.spacing, cfg.k_max, cfg.epsilon), (1.0, 0.5, 50, 1e-6));
        assert_eq!(cfg.grid, 32);
    }

    #[test]
    fn malformed_value_reports_its_line() {
        match parse_config("scenario=unicast\n# comment\nM=zero") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_config("scenario=unicast\nbogus=1"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_config("scenario=unicast\nM"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_config("scenario=unicast\nM=2\nM=3"), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn bounds_are_configuration_errors() {
        let err = parse_config("scenario=unicast\nM=1\nU=3\nN_RF_ap=2").unwrap_err();
        assert!(matches!(err, Error::CapacityExceeded { requested: 3, available: 2 }));
        assert!(err.is_configuration());
        assert!(parse_config("scenario=unicast\nM=1\nU=2\nN_RF_ap=2").is_ok());
        assert!(matches!(parse_config("scenario=unicast\nN_RF_ap=5"), Err(Error::Config { .. })));
        assert!(matches!(parse_config("scenario=unicast\nL=0"), Err(Error::Config { .. })));
    }

    #[test]
    fn multicast_groups() {
        let cfg = parse_config("scenario=multicast\nG=2\nU_g=4\nN_RF_ap=4").unwrap();
        assert_eq!(cfg.users, 8);
        assert!(matches!(parse_config("scenario=multicast\nG=2\nU_g=4\nU=7"), Err(Error::Config { .. })));
        assert!(matches!(
            parse_config("scenario=multicast\nM=1\nG=2\nU_g=2\nN_RF_ap=2"),
            Err(Error::CapacityExceeded { .. })
        ));
    }

    #[test]
    fn power_grid_and_overrides() {
        let mut text = ConfigText::parse("scenario=broadcast\np_t_db = 0, 10 ,20\nrealizations=300").unwrap();
        text.set("realizations", "7").unwrap();
        text.set("scenario", "uplink").unwrap();
        let cfg = text.build().unwrap();
        assert_eq!(cfg.p_t_db, vec![0.0, 10.0, 20.0]);
        assert_eq!(cfg.realizations, 7);
        assert_eq!(cfg.scenario, Scenario::Uplink);
        assert!(matches!(text.set("nope", "1"), Err(Error::Config { .. })));
    }

    #[test]
    fn upa_dimensions() {
        let cfg = parse_config("scenario=unicast\narray=upa\nap_upa=4x4\nuser_upa=4x2").unwrap();
        assert_eq!((cfg.n_t, cfg.n_r), (16, 8));
        assert_eq!(cfg.ap_array().len(), 16);
        assert!(matches!(parse_config("scenario=unicast\narray=upa\nap_upa=4x4\nuser_upa=4x2\nN_T=8"), Err(Error::Config { .. })));
        assert!(matches!(parse_config("scenario=unicast_bl\narray=upa\nap_upa=4x4\nuser_upa=4x2"), Err(Error::Config { .. })));
    }
}
