//! Experiment configuration.
//!
//! A scenario is one JSON object. Field names carry their unit; unknown keys
//! are rejected.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::battery::{mah_to_joules, states_for_capacity};
use crate::channel::{Area, BlockageField, BlockageMode, Deployment, PathlossModel};
use crate::energy::{ConsumptionModel, FramePlan, HarvesterModel};
use crate::geometry::{ArrayGeometry, Radio};
use crate::hris::{build_codebook_grid, grid_shape, Codebook, ProbeSettings, Threshold, Weighting};
use crate::{Error, Result, Vec3};

/// Default scenario shipped with the crate.
pub const REFERENCE_JSON: &str = include_str!("../configs/reference.json");

pub fn dbm_to_watts(dbm: f64) -> f64 {
    1e-3 * 10f64.powf(dbm / 10.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    /// Every reflection phase shifter at index 0.
    Idle,
    /// Perfect-CSI oracle with unit-gain paths.
    OAres,
    /// Perfect-CSI oracle with gain-weighted paths.
    OwAres,
    /// Codebook probing with soft combining and `Q`-bit phases.
    WAresQ(u32),
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheme::Idle => write!(f, "idle"),
            Scheme::OAres => write!(f, "O-ARES"),
            Scheme::OwAres => write!(f, "O-wARES"),
            Scheme::WAresQ(q) => write!(f, "wARES-Q{q}"),
        }
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "idle" => Ok(Scheme::Idle),
            "O-ARES" => Ok(Scheme::OAres),
            "O-wARES" => Ok(Scheme::OwAres),
            _ => s
                .strip_prefix("wARES-Q")
                .and_then(|q| q.parse::<u32>().ok())
                .filter(|q| (1..=16).contains(q))
                .map(Scheme::WAresQ)
                .ok_or_else(|| Error::UnknownScheme(s.to_string())),
        }
    }
}

impl Serialize for Scheme {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Scheme {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarvesterParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockageSampling {
    Analytic,
    Sampled,
}

/// Hardware and traffic sweep for the harvested/consumed power study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergySweep {
    /// `[N_x, N_z]` pairs.
    pub hris_sizes: Vec<[usize; 2]>,
    pub phase_bits: Vec<u32>,
    pub traffic_levels: Vec<f64>,
    pub pin_diode_powers_w: Vec<f64>,
    pub users: usize,
}

/// Battery sizing and trace settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatterySweep {
    pub capacities_mah: Vec<f64>,
    pub pin_diode_powers_w: Vec<f64>,
    /// Frames aggregated into one battery-chain period.
    pub epoch_frames: u64,
    /// Periods of each theory-vs-trace comparison.
    pub trace_periods: u64,
    pub trace_burn_in: u64,
    /// Traffic factors of the example SoC traces.
    pub soc_traffic_levels: Vec<f64>,
    pub soc_capacities_mah: Vec<f64>,
    pub soc_periods: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub tx_power_dbm: f64,
    pub bs_antennas: usize,
    pub hris_nx: usize,
    pub hris_nz: usize,
    pub carrier_hz: f64,
    pub element_spacing_wavelengths: f64,
    pub bs_position_m: [f64; 3],
    pub hris_position_m: [f64; 3],
    /// `[x_min, x_max, y_min, y_max]`.
    pub area_m: [f64; 4],
    pub ue_height_m: f64,
    pub traffic: f64,
    pub blocker_density_per_m2: f64,
    pub blocker_height_m: f64,
    pub blocker_diameter_m: f64,
    pub blockage: BlockageSampling,
    pub bs_hris_blockable: bool,
    pub dl_slots: u32,
    pub ul_slots: u32,
    pub probing_slots: u32,
    pub codebook_size: usize,
    pub phase_bits: u32,
    pub power_splitting: f64,
    pub probe_threshold_median_factor: f64,
    pub period_s: f64,
    pub pin_diode_power_w: f64,
    pub pathloss_exponent_los: f64,
    pub pathloss_exponent_nlos: f64,
    pub noise_power_dbm: f64,
    pub reference_distance_m: f64,
    pub reference_gain: f64,
    pub battery_capacity_mah: f64,
    pub battery_step_mah: f64,
    pub guard_fraction: f64,
    pub battery_voltage_v: f64,
    pub harvester: HarvesterParams,
    pub controller_run_w: f64,
    pub controller_idle_w: f64,
    pub users: Vec<usize>,
    pub drops: usize,
    pub seed: u64,
    pub schemes: Vec<Scheme>,
    pub energy: EnergySweep,
    pub battery: BatterySweep,
}

fn check(ok: bool, name: &'static str, reason: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!("{name}: {reason}")))
    }
}

fn positive(x: f64) -> bool {
    x > 0.0 && x.is_finite()
}

fn unit(x: f64) -> bool {
    (0.0..=1.0).contains(&x)
}

impl Scenario {
    /// The bundled reference scenario.
    pub fn reference() -> Self {
        Self::from_json(REFERENCE_JSON).expect("bundled scenario is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        check(self.tx_power_dbm.is_finite(), "tx_power_dbm", "must be finite")?;
        check(self.noise_power_dbm.is_finite(), "noise_power_dbm", "must be finite")?;
        check(self.bs_antennas >= 1, "bs_antennas", "must be at least 1")?;
        check(self.hris_nx >= 1 && self.hris_nz >= 1, "hris_nx/hris_nz", "must be at least 1")?;
        check(positive(self.carrier_hz), "carrier_hz", "must be positive")?;
        check(positive(self.element_spacing_wavelengths), "element_spacing_wavelengths", "must be positive")?;
        let [x0, x1, y0, y1] = self.area_m;
        check(x0 < x1 && y0 < y1, "area_m", "needs x_min < x_max and y_min < y_max")?;
        check(self.ue_height_m >= 0.0, "ue_height_m", "must be non-negative")?;
        check(unit(self.traffic), "traffic", "must lie in [0, 1]")?;
        check(self.blocker_density_per_m2 >= 0.0, "blocker_density_per_m2", "must be non-negative")?;
        check(positive(self.blocker_height_m), "blocker_height_m", "must be positive")?;
        check(positive(self.blocker_diameter_m), "blocker_diameter_m", "must be positive")?;
        check(self.probing_slots >= 1, "probing_slots", "must be at least 1")?;
        check(self.codebook_size >= 1, "codebook_size", "must be at least 1")?;
        check((1..=16).contains(&self.phase_bits), "phase_bits", "must lie in 1..=16")?;
        check(unit(self.power_splitting), "power_splitting", "must lie in [0, 1]")?;
        check(positive(self.probe_threshold_median_factor), "probe_threshold_median_factor", "must be positive")?;
        check(positive(self.period_s), "period_s", "must be positive")?;
        check(self.pin_diode_power_w >= 0.0, "pin_diode_power_w", "must be non-negative")?;
        check(positive(self.pathloss_exponent_los), "pathloss_exponent_los", "must be positive")?;
        check(positive(self.pathloss_exponent_nlos), "pathloss_exponent_nlos", "must be positive")?;
        check(positive(self.reference_distance_m), "reference_distance_m", "must be positive")?;
        check(positive(self.reference_gain), "reference_gain", "must be positive")?;
        check(positive(self.battery_capacity_mah), "battery_capacity_mah", "must be positive")?;
        check(positive(self.battery_step_mah), "battery_step_mah", "must be positive")?;
        states_for_capacity(self.battery_capacity_mah, self.battery_step_mah)
            .map_err(|e| Error::Config(format!("battery_capacity_mah: {e}")))?;
        check((0.0..1.0).contains(&self.guard_fraction), "guard_fraction", "must lie in [0, 1)")?;
        check(positive(self.battery_voltage_v), "battery_voltage_v", "must be positive")?;
        HarvesterModel::new(self.harvester.a, self.harvester.b, self.harvester.c)
            .map_err(|e| Error::Config(format!("harvester: {e}")))?;
        check(self.controller_run_w >= 0.0, "controller_run_w", "must be non-negative")?;
        check(self.controller_idle_w >= 0.0, "controller_idle_w", "must be non-negative")?;
        check(!self.users.is_empty() && self.users.iter().all(|&k| k >= 1), "users", "needs K >= 1")?;
        check(self.drops >= 1, "drops", "must be at least 1")?;
        check(!self.schemes.is_empty(), "schemes", "must not be empty")?;

        let e = &self.energy;
        check(!e.hris_sizes.is_empty() && e.hris_sizes.iter().all(|s| s[0] >= 1 && s[1] >= 1), "energy.hris_sizes", "needs positive sizes")?;
        check(!e.phase_bits.is_empty() && e.phase_bits.iter().all(|q| (1..=16).contains(q)), "energy.phase_bits", "must lie in 1..=16")?;
        check(!e.traffic_levels.is_empty() && e.traffic_levels.iter().all(|&x| unit(x)), "energy.traffic_levels", "must lie in [0, 1]")?;
        check(!e.pin_diode_powers_w.is_empty() && e.pin_diode_powers_w.iter().all(|&p| p >= 0.0), "energy.pin_diode_powers_w", "must be non-negative")?;
        check(e.users >= 1, "energy.users", "must be at least 1")?;

        let b = &self.battery;
        check(!b.capacities_mah.is_empty(), "battery.capacities_mah", "must not be empty")?;
        for &c in b.capacities_mah.iter().chain(&b.soc_capacities_mah) {
            states_for_capacity(c, self.battery_step_mah)
                .map_err(|e| Error::Config(format!("battery capacities: {e}")))?;
        }
        check(!b.pin_diode_powers_w.is_empty() && b.pin_diode_powers_w.iter().all(|&p| p >= 0.0), "battery.pin_diode_powers_w", "must be non-negative")?;
        check(b.epoch_frames >= 1, "battery.epoch_frames", "must be at least 1")?;
        check(b.trace_periods >= 1, "battery.trace_periods", "must be at least 1")?;
        check(b.soc_traffic_levels.iter().all(|&x| unit(x)), "battery.soc_traffic_levels", "must lie in [0, 1]")?;
        check(b.soc_periods >= 1, "battery.soc_periods", "must be at least 1")?;
        Ok(())
    }

    pub fn tx_power_w(&self) -> f64 {
        dbm_to_watts(self.tx_power_dbm)
    }

    pub fn noise_w(&self) -> f64 {
        dbm_to_watts(self.noise_power_dbm)
    }

    pub fn radio(&self) -> Result<Radio> {
        Radio::new(self.carrier_hz)
    }

    fn point(p: [f64; 3]) -> Vec3 {
        Vec3::new(p[0], p[1], p[2])
    }

    /// Deployment with an `nx x nz` HRIS.
    pub fn deployment_with(&self, nx: usize, nz: usize) -> Result<Deployment> {
        let radio = self.radio()?;
        let spacing = self.element_spacing_wavelengths * radio.wavelength();
        let mode = match self.blockage {
            BlockageSampling::Analytic => BlockageMode::Analytic,
            BlockageSampling::Sampled => BlockageMode::Sampled,
        };
        let [x_min, x_max, y_min, y_max] = self.area_m;
        Ok(Deployment {
            bs: ArrayGeometry::ula(Self::point(self.bs_position_m), self.bs_antennas, spacing)?,
            hris: ArrayGeometry::planar(Self::point(self.hris_position_m), nx, nz, spacing)?,
            radio,
            pathloss: PathlossModel::new(
                self.reference_gain,
                self.reference_distance_m,
                self.pathloss_exponent_los,
                self.pathloss_exponent_nlos,
            )?,
            blockage: if self.blocker_density_per_m2 > 0.0 {
                BlockageField::new(self.blocker_density_per_m2, self.blocker_height_m, self.blocker_diameter_m, mode)?
            } else {
                BlockageField::disabled()
            },
            area: Area {
                x_min,
                x_max,
                y_min,
                y_max,
            },
            ue_height: self.ue_height_m,
            bs_hris_blockable: self.bs_hris_blockable,
        })
    }

    pub fn deployment(&self) -> Result<Deployment> {
        self.deployment_with(self.hris_nx, self.hris_nz)
    }

    /// Codebook for `dep`, whose HRIS is `nx x nz`. The reference grid of
    /// `codebook_size` cells belongs to the reference array; other sizes scale
    /// it per axis so the beams keep tiling the grid.
    pub fn codebook(&self, dep: &Deployment, nx: usize, nz: usize, bits: u32) -> Result<Codebook> {
        let (n_az, n_el) = grid_shape(self.codebook_size)?;
        let scale = |cells: usize, n: usize, n_ref: usize| ((cells * n) as f64 / n_ref as f64).round().max(1.0) as usize;
        build_codebook_grid(
            &dep.hris,
            &dep.radio,
            scale(n_az, nx, self.hris_nx),
            scale(n_el, nz, self.hris_nz),
            bits,
        )
    }

    pub fn probe_settings(&self) -> ProbeSettings {
        ProbeSettings {
            tx_power: self.tx_power_w(),
            eta: self.power_splitting,
            noise_var: self.noise_w(),
            threshold: Threshold::MedianFactor(self.probe_threshold_median_factor),
            weighting: Weighting::Soft,
        }
    }

    pub fn harvester_model(&self) -> HarvesterModel {
        HarvesterModel::new(self.harvester.a, self.harvester.b, self.harvester.c).expect("validated")
    }

    pub fn consumption_model(&self, pin_diode_power_w: f64, bits: u32) -> Result<ConsumptionModel> {
        ConsumptionModel::new(pin_diode_power_w, bits, self.controller_run_w, self.controller_idle_w)
    }

    pub fn frame_plan(&self, traffic: f64) -> FramePlan {
        FramePlan {
            n_dl: self.dl_slots,
            n_ul: self.ul_slots,
            n_ce: self.probing_slots,
            period: self.period_s,
            traffic,
        }
    }

    pub fn step_joules(&self) -> f64 {
        mah_to_joules(self.battery_step_mah, self.battery_voltage_v)
    }
}

/// Reads and validates a scenario file.
pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)?;
    Scenario::from_json(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Writes a scenario as pretty-printed JSON.
pub fn save_scenario(scenario: &Scenario, path: &Path) -> Result<()> {
    std::fs::write(path, scenario.to_json()? + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn reference_values() {
        let s = Scenario::reference();
        assert_eq!(s.tx_power_dbm, 20.0);
        assert_relative_eq!(s.tx_power_w(), 0.1, max_relative = 1e-12);
        assert_eq!(s.bs_antennas, 4);
        assert_eq!((s.hris_nx, s.hris_nz), (8, 4));
        assert_eq!(s.carrier_hz, 28e9);
        assert_eq!(s.bs_position_m, [-25.0, 25.0, 6.0]);
        assert_eq!(s.hris_position_m, [0.0, 0.0, 6.0]);
        assert_eq!(s.area_m[1] - s.area_m[0], 50.0);
        assert_eq!(s.area_m[3] - s.area_m[2], 50.0);
        assert_eq!(s.traffic, 0.5);
        assert_eq!(s.blocker_density_per_m2, 0.3);
        assert_eq!(s.blocker_height_m, 1.8);
        assert_eq!(s.blocker_diameter_m, 0.6);
        assert_eq!((s.dl_slots, s.ul_slots), (8, 3));
        assert_eq!(s.codebook_size, 32);
        assert_eq!(s.phase_bits, 2);
        assert_eq!(s.power_splitting, 0.8);
        assert_eq!(s.period_s, 0.01);
        assert_eq!(s.pin_diode_power_w, 1e-4);
        assert_eq!((s.pathloss_exponent_los, s.pathloss_exponent_nlos), (2.0, 4.0));
        assert_eq!(s.noise_power_dbm, -80.0);
        assert_relative_eq!(s.noise_w(), 1e-11, max_relative = 1e-12);
        assert_eq!((s.reference_distance_m, s.reference_gain), (1.0, 1.0));
        assert_eq!((s.battery_capacity_mah, s.battery_step_mah), (400.0, 20.0));
        assert_eq!(s.guard_fraction, 0.1);
        assert_eq!(s.battery_voltage_v, 3.7);
        assert_eq!((s.controller_run_w, s.controller_idle_w), (4.9e-3, 1.8e-3));
        assert_eq!(s.drops, 100);
        assert_eq!(s.users, vec![10, 25, 50, 75]);
    }

    #[test]
    fn round_trip() {
        let s = Scenario::reference();
        let back = Scenario::from_json(&s.to_json().unwrap()).unwrap();
        assert_eq!(s, back);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        save_scenario(&s, &path).unwrap();
        assert_eq!(load_scenario(&path).unwrap(), s);
    }

    #[test]
    fn unknown_key_is_named() {
        let mut v: serde_json::Value = serde_json::from_str(REFERENCE_JSON).unwrap();
        v["warp_factor"] = serde_json::json!(9);
        let err = Scenario::from_json(&v.to_string()).unwrap_err().to_string();
        assert!(err.contains("warp_factor"), "{err}");
    }

    #[test]
    fn missing_field_is_named() {
        let mut v: serde_json::Value = serde_json::from_str(REFERENCE_JSON).unwrap();
        v.as_object_mut().unwrap().remove("power_splitting");
        let err = Scenario::from_json(&v.to_string()).unwrap_err().to_string();
        assert!(err.contains("power_splitting"), "{err}");
    }

    #[test]
    fn parse_errors_carry_position() {
        let err = Scenario::from_json("{\n  \"tx_power_dbm\": 20,\n  oops\n}").unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn out_of_range_values_rejected() {
        let mut s = Scenario::reference();
        s.power_splitting = 1.5;
        assert!(matches!(s.validate(), Err(Error::Config(m)) if m.contains("power_splitting")));
        let mut s = Scenario::reference();
        s.users = vec![0];
        assert!(s.validate().is_err());
        let mut s = Scenario::reference();
        s.battery_capacity_mah = 410.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn scheme_names() {
        for name in ["idle", "O-ARES", "O-wARES", "wARES-Q1", "wARES-Q2", "wARES-Q3"] {
            let s: Scheme = name.parse().unwrap();
            assert_eq!(s.to_string(), name);
        }
        assert!(matches!("SoA".parse::<Scheme>(), Err(Error::UnknownScheme(_))));
        assert!("wARES-Q0".parse::<Scheme>().is_err());
        let mut v: serde_json::Value = serde_json::from_str(REFERENCE_JSON).unwrap();
        v["schemes"] = serde_json::json!(["O-ARES", "magic"]);
        let err = Scenario::from_json(&v.to_string()).unwrap_err().to_string();
        assert!(err.contains("magic"), "{err}");
    }

    #[test]
    fn deployment_matches_table_geometry() {
        let s = Scenario::reference();
        let d = s.deployment().unwrap();
        assert_eq!(d.hris.len(), 32);
        assert_eq!(d.bs.len(), 4);
        assert_eq!(d.bs.center(), Vec3::new(-25.0, 25.0, 6.0));
        assert_relative_eq!(d.hris.spacing(), d.radio.wavelength() / 2.0);
        assert_relative_eq!(s.step_joules(), 266.4, max_relative = 1e-12);
    }

    #[test]
    fn dbm_conversion() {
        assert_relative_eq!(dbm_to_watts(0.0), 1e-3);
        assert_relative_eq!(dbm_to_watts(30.0), 1.0, max_relative = 1e-12);
    }
}
