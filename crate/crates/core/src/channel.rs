//! Propagation links: distance pathloss, PPP cylinder blockage and the
//! realisation of the BS-HRIS, HRIS-UE and BS-UE channels.

use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::geometry::{array_response, ArrayGeometry, Radio};
use crate::{CMatrix, CVector, Error, Result, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathlossModel {
    pub gamma0: f64,
    pub d0: f64,
    pub chi_los: f64,
    pub chi_nlos: f64,
}

impl PathlossModel {
    pub fn new(gamma0: f64, d0: f64, chi_los: f64, chi_nlos: f64) -> Result<Self> {
        if !(gamma0 > 0.0) {
            return Err(Error::invalid("gamma0", "must be positive"));
        }
        if !(d0 > 0.0) {
            return Err(Error::invalid("d0", "must be positive"));
        }
        if !(chi_los >= 0.0 && chi_nlos >= chi_los) {
            return Err(Error::invalid("chi", "require chi_nlos >= chi_los >= 0"));
        }
        Ok(Self {
            gamma0,
            d0,
            chi_los,
            chi_nlos,
        })
    }

    pub fn exponent(&self, los: bool) -> f64 {
        if los {
            self.chi_los
        } else {
            self.chi_nlos
        }
    }
}

/// Linear channel gain `γ0 (d0/‖p − q‖)^exponent`.
pub fn pathloss(p: &Vec3, q: &Vec3, model: &PathlossModel, exponent: f64) -> Result<f64> {
    let dist = (p - q).norm();
    if dist == 0.0 {
        return Err(Error::DegenerateLink);
    }
    Ok(model.gamma0 * (model.d0 / dist).powf(exponent))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockageMode {
    /// Closed-form LoS probability, one Bernoulli draw per link.
    Analytic,
    /// Explicit PPP blocker drop per link.
    Sampled,
}

/// Blockers are cylinders of height `blocker_height` and diameter
/// `blocker_diameter` whose ground positions follow a PPP of intensity
/// `density` (per m²).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockageField {
    pub density: f64,
    pub blocker_height: f64,
    pub blocker_diameter: f64,
    pub mode: BlockageMode,
}

impl BlockageField {
    pub fn new(
        density: f64,
        blocker_height: f64,
        blocker_diameter: f64,
        mode: BlockageMode,
    ) -> Result<Self> {
        if !(density >= 0.0) {
            return Err(Error::invalid("blocker density", "must be non-negative"));
        }
        if !(blocker_height > 0.0) {
            return Err(Error::invalid("blocker height", "must be positive"));
        }
        if !(blocker_diameter > 0.0) {
            return Err(Error::invalid("blocker diameter", "must be positive"));
        }
        Ok(Self {
            density,
            blocker_height,
            blocker_diameter,
            mode,
        })
    }

    /// No blockers at all: every link is LoS.
    pub fn disabled() -> Self {
        Self {
            density: 0.0,
            blocker_height: 1.0,
            blocker_diameter: 1.0,
            mode: BlockageMode::Analytic,
        }
    }
}

/// Fraction of the ground-plane link (measured from the lower endpoint) over
/// which the ray runs below the blocker height.
fn shadow_fraction(h_low: f64, h_high: f64, h_blocker: f64) -> f64 {
    if h_high == h_low {
        return if h_low < h_blocker { 1.0 } else { 0.0 };
    }
    ((h_blocker - h_low) / (h_high - h_low)).clamp(0.0, 1.0)
}

/// Probability that no blocker intersects the link between `tx` and `rx`:
/// `exp(−λ_B · r_B · d_2D · shadow)`, where the shadow fraction is the share
/// of the ground-plane distance along which the ray is lower than `h_B`.
pub fn los_probability(tx: &Vec3, rx: &Vec3, field: &BlockageField) -> f64 {
    let d2 = ((tx.x - rx.x).powi(2) + (tx.y - rx.y).powi(2)).sqrt();
    if d2 == 0.0 || field.density == 0.0 {
        return 1.0;
    }
    let (lo, hi) = if tx.z <= rx.z { (tx.z, rx.z) } else { (rx.z, tx.z) };
    let shadow = shadow_fraction(lo, hi, field.blocker_height);
    (-field.density * field.blocker_diameter * d2 * shadow)
        .exp()
        .clamp(0.0, 1.0)
}

/// Drops PPP blockers around the link and reports whether the link is clear.
///
/// Each blocker is seen by the ray as a screen of width `r_B` and height
/// `h_B` standing across the link at the blocker's centre. The ray is blocked
/// when it crosses such a screen below its top edge.
pub fn sample_los<R: Rng + ?Sized>(tx: &Vec3, rx: &Vec3, field: &BlockageField, rng: &mut R) -> bool {
    let (low, high) = if tx.z <= rx.z { (tx, rx) } else { (rx, tx) };
    let (lx, ly) = (low.x, low.y);
    let (dx, dy) = (high.x - lx, high.y - ly);
    let d2 = (dx * dx + dy * dy).sqrt();
    if d2 == 0.0 || field.density == 0.0 {
        return true;
    }
    let margin = field.blocker_diameter;
    let x0 = lx.min(high.x) - margin;
    let x1 = lx.max(high.x) + margin;
    let y0 = ly.min(high.y) - margin;
    let y1 = ly.max(high.y) + margin;
    let mean = field.density * (x1 - x0) * (y1 - y0);
    let count = Poisson::new(mean).map(|p| p.sample(rng) as u64).unwrap_or(0);
    let half_width = field.blocker_diameter / 2.0;
    for _ in 0..count {
        let cx = rng.random_range(x0..x1);
        let cy = rng.random_range(y0..y1);
        let (rx_, ry_) = (cx - lx, cy - ly);
        // position of the crossing along the ground track, in [0, 1]
        let t = (rx_ * dx + ry_ * dy) / (d2 * d2);
        if !(0.0..=1.0).contains(&t) {
            continue;
        }
        let perp = (rx_ * dy - ry_ * dx).abs() / d2;
        if perp > half_width {
            continue;
        }
        let ray_height = low.z + t * (high.z - low.z);
        if ray_height < field.blocker_height {
            return false;
        }
    }
    true
}

/// Rectangular service area in the ground plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Area {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

/// LoS flags for every realised link.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkStates {
    pub bs_hris: bool,
    pub hris_ue: Vec<bool>,
    pub bs_ue: Vec<bool>,
}

impl LinkStates {
    pub fn all_los(k: usize) -> Self {
        Self {
            bs_hris: true,
            hris_ue: vec![true; k],
            bs_ue: vec![true; k],
        }
    }
}

/// One channel realisation.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    /// BS-HRIS channel `√γ(b,r) a_R(b) a_BS(r)^H`, N x M.
    pub g: CMatrix,
    /// HRIS-UE channels `√γ(u_k,r) a_R(u_k)`, length N each.
    pub h: Vec<CVector>,
    /// Direct BS-UE channels `√γ(b,u_k) a_BS(u_k)`, length M each.
    pub h_d: Vec<CVector>,
    pub los: LinkStates,
    /// HRIS response toward the BS, `a_R(b)`.
    pub hris_to_bs: CVector,
    /// BS response toward the HRIS, `a_BS(r)`.
    pub bs_to_hris: CVector,
    /// `γ(b, r)`.
    pub bs_hris_gain: f64,
    pub ue_positions: Vec<Vec3>,
}

impl ChannelSet {
    pub fn num_ues(&self) -> usize {
        self.h.len()
    }

    pub fn hris_elements(&self) -> usize {
        self.g.nrows()
    }

    pub fn bs_antennas(&self) -> usize {
        self.g.ncols()
    }
}

/// Everything needed to realise channels for a set of UE positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Deployment {
    pub bs: ArrayGeometry,
    pub hris: ArrayGeometry,
    pub radio: Radio,
    pub pathloss: PathlossModel,
    pub blockage: BlockageField,
    pub area: Area,
    pub ue_height: f64,
    /// Whether the BS-HRIS link is subject to blockage draws.
    pub bs_hris_blockable: bool,
}

impl Deployment {
    /// UE positions uniform over the service area at the configured height.
    pub fn drop_ues<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Vec<Vec3> {
        (0..k)
            .map(|_| {
                Vec3::new(
                    rng.random_range(self.area.x_min..=self.area.x_max),
                    rng.random_range(self.area.y_min..=self.area.y_max),
                    self.ue_height,
                )
            })
            .collect()
    }

    fn link_is_los<R: Rng + ?Sized>(&self, a: &Vec3, b: &Vec3, rng: &mut R) -> bool {
        match self.blockage.mode {
            BlockageMode::Analytic => {
                let p = los_probability(a, b, &self.blockage);
                rng.random::<f64>() < p
            }
            BlockageMode::Sampled => sample_los(a, b, &self.blockage, rng),
        }
    }

    /// Draws LoS/NLoS for every link, then builds the channels.
    pub fn realize<R: Rng + ?Sized>(&self, ues: &[Vec3], rng: &mut R) -> Result<ChannelSet> {
        let b = self.bs.center();
        let r = self.hris.center();
        let bs_hris = if self.bs_hris_blockable {
            self.link_is_los(&b, &r, rng)
        } else {
            true
        };
        let mut hris_ue = Vec::with_capacity(ues.len());
        let mut bs_ue = Vec::with_capacity(ues.len());
        for u in ues {
            hris_ue.push(self.link_is_los(&r, u, rng));
            bs_ue.push(self.link_is_los(&b, u, rng));
        }
        let states = LinkStates {
            bs_hris,
            hris_ue,
            bs_ue,
        };
        self.realize_with_states(ues, states)
    }

    /// Builds the channels for fixed link states.
    pub fn realize_with_states(&self, ues: &[Vec3], los: LinkStates) -> Result<ChannelSet> {
        if los.hris_ue.len() != ues.len() || los.bs_ue.len() != ues.len() {
            return Err(Error::DimensionMismatch {
                expected: ues.len(),
                got: los.hris_ue.len().min(los.bs_ue.len()),
            });
        }
        let b = self.bs.center();
        let r = self.hris.center();
        let pl = &self.pathloss;

        let hris_to_bs = array_response(&self.hris, &b, &self.radio)?;
        let bs_to_hris = array_response(&self.bs, &r, &self.radio)?;
        let bs_hris_gain = pathloss(&b, &r, pl, pl.exponent(los.bs_hris))?;
        let g = (&hris_to_bs * bs_to_hris.adjoint()) * crate::Complex::from(bs_hris_gain.sqrt());

        let mut h = Vec::with_capacity(ues.len());
        let mut h_d = Vec::with_capacity(ues.len());
        for (k, u) in ues.iter().enumerate() {
            let gain = pathloss(u, &r, pl, pl.exponent(los.hris_ue[k]))?;
            h.push(array_response(&self.hris, u, &self.radio)? * crate::Complex::from(gain.sqrt()));
            let gain = pathloss(&b, u, pl, pl.exponent(los.bs_ue[k]))?;
            h_d.push(array_response(&self.bs, u, &self.radio)? * crate::Complex::from(gain.sqrt()));
        }
        Ok(ChannelSet {
            g,
            h,
            h_d,
            los,
            hris_to_bs,
            bs_to_hris,
            bs_hris_gain,
            ue_positions: ues.to_vec(),
        })
    }
}

/// Drops `k` UEs uniformly over the service area and realises all links.
pub fn realize_channels<R: Rng + ?Sized>(
    deployment: &Deployment,
    k: usize,
    rng: &mut R,
) -> Result<ChannelSet> {
    if k == 0 {
        return Err(Error::invalid("K", "at least one UE is required"));
    }
    let ues = deployment.drop_ues(k, rng);
    deployment.realize(&ues, rng)
}
