//! RF harvesting, PIN-diode consumption and per-frame energy bookkeeping.

use std::f64::consts::PI;

use crate::hris::HrisConfig;
use crate::{Error, Result};

/// Rectifier in-out law `f(x) = (ax + b)/(x + c) − b/c`.
///
/// `f(0) = 0`, and `f` saturates at `a − b/c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarvesterModel {
    a: f64,
    b: f64,
    c: f64,
}

impl HarvesterModel {
    pub fn new(a: f64, b: f64, c: f64) -> Result<Self> {
        if !(c > 0.0) {
            return Err(Error::invalid("harvester c", "must be positive"));
        }
        // f'(x) = (ac − b)/(x + c)²
        if a * c < b {
            return Err(Error::invalid("harvester", format!("a·c = {} < b = {b}: law is decreasing", a * c)));
        }
        Ok(Self { a, b, c })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    /// Output power as the input grows without bound.
    pub fn saturation(&self) -> f64 {
        self.a - self.b / self.c
    }
}

/// Harvested DC power for an RF input `p_in` (Watts).
pub fn harvest(model: &HarvesterModel, p_in: f64) -> Result<f64> {
    if !(p_in >= 0.0) {
        return Err(Error::invalid("p_in", format!("{p_in} W is negative")));
    }
    if p_in.is_infinite() {
        return Ok(model.saturation());
    }
    let HarvesterModel { a, b, c } = *model;
    Ok((a * p_in + b) / (p_in + c) - b / c)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsumptionModel {
    /// Power drawn by one active PIN diode (W).
    pub p_on: f64,
    /// Diodes per meta-atom, equal to the phase resolution in bits.
    pub q_bits: u32,
    /// Controller draw while operating (W).
    pub controller_run: f64,
    /// Controller draw in idle mode (W).
    pub controller_idle: f64,
}

impl ConsumptionModel {
    pub fn new(p_on: f64, q_bits: u32, controller_run: f64, controller_idle: f64) -> Result<Self> {
        if !(p_on >= 0.0 && controller_run >= 0.0 && controller_idle >= 0.0) {
            return Err(Error::invalid("consumption", "powers must be non-negative"));
        }
        if q_bits == 0 || q_bits > 30 {
            return Err(Error::invalid("Q", format!("{q_bits} bits not in 1..=30")));
        }
        Ok(Self {
            p_on,
            q_bits,
            controller_run,
            controller_idle,
        })
    }
}

/// Power of one meta-atom in phase state `m`: `P_ON (m − Σ_{i=1..Q} ⌊m/2^i⌋)`,
/// i.e. one `P_ON` per set bit of `m`.
pub fn atom_consumption(m: u32, model: &ConsumptionModel) -> Result<f64> {
    let q = model.q_bits;
    if u64::from(m) >= 1u64 << q {
        return Err(Error::IndexOutOfRange { index: m, bits: q });
    }
    let m = u64::from(m);
    let carried: u64 = (1..=q).map(|i| m >> i).sum();
    Ok(model.p_on * (m - carried) as f64)
}

/// Diode power of a whole configuration, `Σ_n P_atom(κ_n)`.
pub fn config_consumption(config: &HrisConfig, model: &ConsumptionModel) -> Result<f64> {
    if config.bits() != Some(model.q_bits) {
        return Err(Error::NotQuantized { expected: model.q_bits });
    }
    config
        .phase_indices()?
        .into_iter()
        .map(|m| atom_consumption(m, model))
        .sum()
}

/// Idle-beam harvesting efficiency `ν = B_x B_y / π²` with
/// `B = 1/(n δ)` and `δ` the element spacing in wavelengths.
pub fn idle_efficiency(nx: usize, nz: usize, spacing_wavelengths: f64) -> Result<f64> {
    if nx == 0 || nz == 0 || !(spacing_wavelengths > 0.0) {
        return Err(Error::invalid("idle efficiency", "array dimensions and spacing must be positive"));
    }
    let bx = 1.0 / (nx as f64 * spacing_wavelengths);
    let by = 1.0 / (nz as f64 * spacing_wavelengths);
    Ok(bx * by / (PI * PI))
}

/// TDD frame layout and traffic level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FramePlan {
    pub n_dl: u32,
    pub n_ul: u32,
    pub n_ce: u32,
    /// Reconfiguration period `T` (s).
    pub period: f64,
    /// Share of slots actually used for transmission, in `[0, 1]`.
    pub traffic: f64,
}

impl FramePlan {
    pub fn validate(&self) -> Result<()> {
        if self.n_ce < 1 {
            return Err(Error::invalid("n_ce", "at least one probing slot is required"));
        }
        if !(0.0..=1.0).contains(&self.traffic) {
            return Err(Error::invalid("traffic", format!("{} not in [0, 1]", self.traffic)));
        }
        if !(self.period > 0.0) {
            return Err(Error::invalid("period", "must be positive"));
        }
        Ok(())
    }
}

/// Configurations held by the phase-shifter banks during one frame.
#[derive(Debug, Clone, Copy)]
pub struct FrameConfigs<'a> {
    pub reflection: &'a HrisConfig,
    /// Absorption bank during DL slots (pointed at the BS).
    pub absorption_dl: &'a HrisConfig,
    /// Absorption bank during UL slots (pointed at the UEs).
    pub absorption_ul: &'a HrisConfig,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameEnergy {
    /// `E_H` (J).
    pub harvested: f64,
    /// `E_C` (J).
    pub consumed: f64,
}

impl FrameEnergy {
    pub fn net(&self) -> f64 {
        self.harvested - self.consumed
    }
}

/// Harvested power `P_H = ξ (N_D f(P_B) + N_U f(P_U))`.
pub fn harvested_power(plan: &FramePlan, harvester: &HarvesterModel, p_abs_bs: f64, p_abs_ue: f64) -> Result<f64> {
    let from_bs = harvest(harvester, p_abs_bs)?;
    let from_ue = harvest(harvester, p_abs_ue)?;
    Ok(plan.traffic * (f64::from(plan.n_dl) * from_bs + f64::from(plan.n_ul) * from_ue))
}

/// Power drawn while operating: controller, the reflection bank for the whole
/// frame, and the absorption bank weighted by its DL/UL slot shares.
pub fn operating_power(consumption: &ConsumptionModel, plan: &FramePlan, cfg: &FrameConfigs<'_>) -> Result<f64> {
    let reflection = config_consumption(cfg.reflection, consumption)?;
    let dl = config_consumption(cfg.absorption_dl, consumption)?;
    let ul = config_consumption(cfg.absorption_ul, consumption)?;
    let slots = f64::from(plan.n_dl + plan.n_ul);
    let absorption = if slots > 0.0 {
        (f64::from(plan.n_dl) * dl + f64::from(plan.n_ul) * ul) / slots
    } else {
        0.0
    };
    Ok(consumption.controller_run + reflection + absorption)
}

/// Energy harvested and consumed over one reconfiguration period.
///
/// In idle mode the harvest is scaled by `nu`, every phase shifter is off and
/// only the idle controller draw remains.
#[allow(clippy::too_many_arguments)]
pub fn frame_energy(
    plan: &FramePlan,
    harvester: &HarvesterModel,
    consumption: &ConsumptionModel,
    p_abs_bs: f64,
    p_abs_ue: f64,
    configs: &FrameConfigs<'_>,
    idle: bool,
    nu: f64,
) -> Result<FrameEnergy> {
    plan.validate()?;
    if !(nu > 0.0 && nu <= 1.0) {
        return Err(Error::invalid("nu", format!("{nu} not in (0, 1]")));
    }
    let p_h = harvested_power(plan, harvester, p_abs_bs, p_abs_ue)?;
    let (p_h, p_c) = if idle {
        (nu * p_h, consumption.controller_idle)
    } else {
        (p_h, operating_power(consumption, plan, configs)?)
    };
    Ok(FrameEnergy {
        harvested: plan.period * p_h,
        consumed: plan.period * p_c,
    })
}
