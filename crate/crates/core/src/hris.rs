//! HRIS configurations and the self-configuration pipeline.
//!
//! A configuration is stored as the complex vector that enters the signal
//! model directly. On the absorption branch it is `φ`, and the sensed power is
//! `(1−η)|φ^H v|² + σ²`. On the reflection branch it is `θ`, with
//! `Θ = diag(θ^*)`. Both branches are matched to an incident signal `v` by
//! `e^{j∠v}`, so codewords are quantized array responses in the same
//! convention.

use std::f64::consts::PI;

use crate::channel::ChannelSet;
use crate::geometry::{hris_direction, steering_vector, ArrayGeometry, Radio};
use crate::{CVector, Complex, Error, Result};

const MAX_BITS: u32 = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Reflection,
    Absorption,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HrisConfig {
    phases: CVector,
    branch: Branch,
    bits: Option<u32>,
}

impl HrisConfig {
    /// Wraps an arbitrary complex vector; every entry must satisfy `|x| <= 1`.
    pub fn new(phases: CVector, branch: Branch) -> Result<Self> {
        if let Some(bad) = phases.iter().find(|c| c.norm() > 1.0 + 1e-12) {
            return Err(Error::invalid(
                "configuration",
                format!("entry with modulus {} exceeds 1", bad.norm()),
            ));
        }
        Ok(Self {
            phases,
            branch,
            bits: None,
        })
    }

    /// Unit-modulus configuration with the given phase angles.
    pub fn from_angles(angles: &[f64], branch: Branch) -> Self {
        Self {
            phases: CVector::from_iterator(angles.len(), angles.iter().map(|&a| Complex::from_polar(1.0, a))),
            branch,
            bits: None,
        }
    }

    /// All phase shifters at index 0 (the idle configuration).
    pub fn idle(n: usize, branch: Branch) -> Self {
        Self {
            phases: CVector::from_element(n, Complex::new(1.0, 0.0)),
            branch,
            bits: None,
        }
    }

    /// `e^{j∠v}` element-wise. Zero entries map to phase 0.
    pub fn phase_aligned(v: &CVector, branch: Branch) -> Self {
        Self {
            phases: v.map(unit_phasor),
            branch,
            bits: None,
        }
    }

    pub fn phases(&self) -> &CVector {
        &self.phases
    }

    pub fn branch(&self) -> Branch {
        self.branch
    }

    pub fn bits(&self) -> Option<u32> {
        self.bits
    }

    pub fn len(&self) -> usize {
        self.phases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phases.is_empty()
    }

    pub fn with_branch(mut self, branch: Branch) -> Self {
        self.branch = branch;
        self
    }

    /// Phase angles wrapped to `[0, 2π)`.
    pub fn angles(&self) -> Vec<f64> {
        self.phases.iter().map(|c| wrap_angle(c.arg())).collect()
    }

    /// Grid index of every element. Only defined for quantized configurations.
    pub fn phase_indices(&self) -> Result<Vec<u32>> {
        let bits = self.bits.ok_or(Error::NotQuantized { expected: 0 })?;
        Ok(self.angles().into_iter().map(|a| nearest_index(a, bits)).collect())
    }
}

fn unit_phasor(c: Complex) -> Complex {
    let n = c.norm();
    if n == 0.0 {
        Complex::new(1.0, 0.0)
    } else {
        c / n
    }
}

fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(2.0 * PI);
    if w >= 2.0 * PI {
        0.0
    } else {
        w
    }
}

/// Nearest grid index for an angle in `[0, 2π)`; halfway cases go to the
/// smaller angle.
fn nearest_index(angle: f64, bits: u32) -> u32 {
    let levels = 1u64 << bits;
    let step = 2.0 * PI / levels as f64;
    let x = angle / step;
    let idx = (x - 0.5).ceil().max(0.0) as u64;
    (idx % levels) as u32
}

/// Phase value `2π m / 2^Q` of grid index `m`.
pub fn grid_angle(index: u32, bits: u32) -> f64 {
    2.0 * PI * index as f64 / (1u64 << bits) as f64
}

/// Snaps every phase to the nearest point of `{2πm/2^Q}` and forces unit
/// modulus.
pub fn quantize(config: &HrisConfig, bits: u32) -> Result<HrisConfig> {
    if bits == 0 || bits > MAX_BITS {
        return Err(Error::invalid("Q", format!("{bits} bits not in 1..={MAX_BITS}")));
    }
    let phases = config
        .phases
        .map(|c| Complex::from_polar(1.0, grid_angle(nearest_index(wrap_angle(c.arg()), bits), bits)));
    Ok(HrisConfig {
        phases,
        branch: config.branch,
        bits: Some(bits),
    })
}

/// Set of quantized absorption configurations, one per steering direction.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub codewords: Vec<HrisConfig>,
    /// (azimuth, elevation) in radians, same order as `codewords`.
    pub directions: Vec<(f64, f64)>,
    pub bit_depth: u32,
}

impl Codebook {
    pub fn len(&self) -> usize {
        self.codewords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codewords.is_empty()
    }
}

/// Splits `l` into `n_az x n_el` with `n_el` the largest divisor not above
/// `√l` (32 → 8 x 4).
pub fn grid_shape(l: usize) -> Result<(usize, usize)> {
    if l == 0 {
        return Err(Error::invalid("L", "codebook needs at least one codeword"));
    }
    let n_el = (1..=l).take_while(|d| d * d <= l).filter(|d| l % d == 0).last().unwrap_or(1);
    Ok((l / n_el, n_el))
}

/// Codebook of `l` codewords over a uniform (azimuth, elevation) grid covering
/// the HRIS front half-space.
pub fn build_codebook(geom: &ArrayGeometry, radio: &Radio, l: usize, bits: u32) -> Result<Codebook> {
    let (n_az, n_el) = grid_shape(l)?;
    build_codebook_grid(geom, radio, n_az, n_el, bits)
}

/// Grid cell centres: azimuth in `(−π/2, π/2)`, elevation in `(−π/4, π/4)`.
/// Codeword `j * n_az + i` points at azimuth cell `i`, elevation cell `j`.
pub fn build_codebook_grid(
    geom: &ArrayGeometry,
    radio: &Radio,
    n_az: usize,
    n_el: usize,
    bits: u32,
) -> Result<Codebook> {
    if n_az == 0 || n_el == 0 {
        return Err(Error::invalid("L", "codebook needs at least one codeword"));
    }
    let mut codewords = Vec::with_capacity(n_az * n_el);
    let mut directions = Vec::with_capacity(n_az * n_el);
    for j in 0..n_el {
        let el = -PI / 4.0 + (j as f64 + 0.5) * (PI / 2.0) / n_el as f64;
        for i in 0..n_az {
            let az = -PI / 2.0 + (i as f64 + 0.5) * PI / n_az as f64;
            let a = steering_vector(geom, &hris_direction(az, el), radio);
            codewords.push(quantize(&HrisConfig::phase_aligned(&a, Branch::Absorption), bits)?);
            directions.push((az, el));
        }
    }
    Ok(Codebook {
        codewords,
        directions,
        bit_depth: bits,
    })
}

/// Power reaching the detector/harvester: `(1−η)|φ^H v|² + σ²`.
pub fn sensed_power(config: &HrisConfig, incident: &CVector, eta: f64, noise_var: f64) -> Result<f64> {
    if config.branch != Branch::Absorption {
        return Err(Error::invalid("configuration", "sensed power needs an absorption configuration"));
    }
    if config.len() != incident.len() {
        return Err(Error::DimensionMismatch {
            expected: config.len(),
            got: incident.len(),
        });
    }
    Ok((1.0 - eta) * config.phases.dotc(incident).norm_sqr() + noise_var)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    /// Fixed detection threshold in Watts.
    Absolute(f64),
    /// Threshold at `factor x median(profile)`.
    MedianFactor(f64),
}

impl Default for Threshold {
    fn default() -> Self {
        Threshold::MedianFactor(2.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weighting {
    /// `δ_i = 1`.
    Hard,
    /// `δ_i = ρ_i`.
    Soft,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerProfile {
    pub powers: Vec<f64>,
    pub threshold: f64,
    pub peak_indices: Vec<usize>,
}

impl PowerProfile {
    pub fn argmax(&self) -> Option<usize> {
        self.powers
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeOutcome {
    pub profile: PowerProfile,
    /// Unit-modulus combination of the peak codewords before quantization.
    pub combined: Option<CVector>,
    /// Quantized absorption configuration (idle when nothing was detected).
    pub config: HrisConfig,
}

impl ProbeOutcome {
    pub fn detected(&self) -> bool {
        !self.profile.peak_indices.is_empty()
    }
}

/// Element-wise unit-modulus projection of `Σ_{i∈ℐ} δ_i c_i`.
pub fn combine_peaks(codebook: &Codebook, profile: &PowerProfile, weighting: Weighting) -> Option<CVector> {
    let first = profile.peak_indices.first()?;
    let n = codebook.codewords[*first].len();
    let mut sum = CVector::zeros(n);
    for &i in &profile.peak_indices {
        let w = match weighting {
            Weighting::Hard => 1.0,
            Weighting::Soft => profile.powers[i],
        };
        sum += codebook.codewords[i].phases() * Complex::from(w);
    }
    Some(sum.map(unit_phasor))
}

/// Beam sweep over the codebook followed by peak detection and combining.
pub fn probe(
    codebook: &Codebook,
    incident: &CVector,
    eta: f64,
    noise_var: f64,
    threshold: Threshold,
    weighting: Weighting,
) -> Result<ProbeOutcome> {
    if codebook.is_empty() {
        return Err(Error::invalid("codebook", "empty"));
    }
    let powers = codebook
        .codewords
        .iter()
        .map(|c| sensed_power(c, incident, eta, noise_var))
        .collect::<Result<Vec<_>>>()?;
    let tau = match threshold {
        Threshold::Absolute(t) => {
            if t < noise_var {
                return Err(Error::invalid("tau", format!("{t} W is below the noise floor {noise_var} W")));
            }
            t
        }
        Threshold::MedianFactor(f) => (f * median(&powers)).max(noise_var),
    };
    let peak_indices = powers
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > tau)
        .map(|(i, _)| i)
        .collect();
    let profile = PowerProfile {
        powers,
        threshold: tau,
        peak_indices,
    };
    let combined = combine_peaks(codebook, &profile, weighting);
    let config = match &combined {
        Some(v) => quantize(
            &HrisConfig {
                phases: v.clone(),
                branch: Branch::Absorption,
                bits: None,
            },
            codebook.bit_depth,
        )?,
        None => {
            log::debug!("probe: no source detected above {tau:e} W");
            quantize(&HrisConfig::idle(incident.len(), Branch::Absorption), codebook.bit_depth)?
        }
    };
    Ok(ProbeOutcome {
        profile,
        combined,
        config,
    })
}

/// Reflection configuration `φ_U^* ∘ φ_B`, optionally quantized to `bits`.
pub fn compose_reflection(phi_b: &HrisConfig, phi_u: &HrisConfig, bits: Option<u32>) -> Result<HrisConfig> {
    if phi_b.len() != phi_u.len() {
        return Err(Error::DimensionMismatch {
            expected: phi_b.len(),
            got: phi_u.len(),
        });
    }
    let phases = phi_u.phases.zip_map(&phi_b.phases, |u, b| u.conj() * b);
    let theta = HrisConfig {
        phases,
        branch: Branch::Reflection,
        bits: None,
    };
    match bits {
        Some(q) => quantize(&theta, q),
        None => Ok(theta),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleMode {
    /// O-ARES: `h_Σ = Σ h_k/‖h_k‖`.
    Unweighted,
    /// O-wARES: `h_Σ = Σ h_k`.
    Weighted,
}

/// Aggregate HRIS-UE channel for the given oracle mode.
pub fn aggregate_channel(channels: &ChannelSet, mode: OracleMode) -> CVector {
    let n = channels.hris_elements();
    channels.h.iter().fold(CVector::zeros(n), |acc, h| match mode {
        OracleMode::Weighted => acc + h,
        OracleMode::Unweighted => {
            let norm = h.norm();
            if norm == 0.0 {
                acc
            } else {
                acc + h / Complex::from(norm)
            }
        }
    })
}

/// Equivalent channel `ĥ = h_Σ^* ∘ a_R(b)`.
pub fn equivalent_channel(h_sum: &CVector, hris_to_bs: &CVector) -> CVector {
    h_sum.zip_map(hris_to_bs, |h, a| h.conj() * a)
}

/// Reflected-path gain `|θ^H ĥ|`.
pub fn reflected_path_gain(theta: &HrisConfig, h_hat: &CVector) -> f64 {
    theta.phases.dotc(h_hat).norm()
}

/// Perfect-CSI reflection configuration `e^{j∠(h_Σ^* ∘ a_R(b))}`.
pub fn oracle_config(channels: &ChannelSet, mode: OracleMode) -> HrisConfig {
    let h_sum = aggregate_channel(channels, mode);
    HrisConfig::phase_aligned(&equivalent_channel(&h_sum, &channels.hris_to_bs), Branch::Reflection)
}

/// Signal impinging on the HRIS while the BS sends its pilot with the
/// precoder matched to the BS-HRIS link: `G w_R`, `w_R = √P a_BS(r)/√M`.
pub fn bs_pilot_incident(channels: &ChannelSet, tx_power: f64) -> CVector {
    let m = channels.bs_antennas() as f64;
    let w = &channels.bs_to_hris * Complex::from((tx_power / m).sqrt());
    &channels.g * w
}

/// Superposition of the simultaneous UE pilots: `√P Σ_k h_k`.
pub fn ue_pilot_incident(channels: &ChannelSet, tx_power: f64) -> CVector {
    aggregate_channel(channels, OracleMode::Weighted) * Complex::from(tx_power.sqrt())
}

/// Output of one probing phase: BS sub-slot, UE sub-slot and the composed
/// reflection configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfConfiguration {
    pub bs: ProbeOutcome,
    pub ue: ProbeOutcome,
    pub reflection: HrisConfig,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeSettings {
    pub tx_power: f64,
    pub eta: f64,
    pub noise_var: f64,
    pub threshold: Threshold,
    pub weighting: Weighting,
}

/// Codebook-based self-configuration from power measurements only.
pub fn self_configure(codebook: &Codebook, channels: &ChannelSet, s: &ProbeSettings) -> Result<SelfConfiguration> {
    let v_b = bs_pilot_incident(channels, s.tx_power);
    let v_u = ue_pilot_incident(channels, s.tx_power);
    let bs = probe(codebook, &v_b, s.eta, s.noise_var, s.threshold, s.weighting)?;
    let ue = probe(codebook, &v_u, s.eta, s.noise_var, s.threshold, s.weighting)?;
    let reflection = compose_reflection(&bs.config, &ue.config, Some(codebook.bit_depth))?;
    Ok(SelfConfiguration { bs, ue, reflection })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{realize_channels, Area, BlockageField, BlockageMode, Deployment, PathlossModel};
    use crate::geometry::array_response;
    use crate::Vec3;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn radio() -> Radio {
        Radio::new(28e9).unwrap()
    }

    fn hris() -> ArrayGeometry {
        ArrayGeometry::planar(Vec3::new(0.0, 0.0, 6.0), 8, 4, radio().wavelength() / 2.0).unwrap()
    }

    fn deployment() -> Deployment {
        let radio = radio();
        Deployment {
            bs: ArrayGeometry::ula(Vec3::new(-25.0, 25.0, 6.0), 4, radio.wavelength() / 2.0).unwrap(),
            hris: hris(),
            radio,
            pathloss: PathlossModel::new(1.0, 1.0, 2.0, 4.0).unwrap(),
            blockage: BlockageField::new(0.3, 1.8, 0.6, BlockageMode::Analytic).unwrap(),
            area: Area {
                x_min: -25.0,
                x_max: 25.0,
                y_min: 0.0,
                y_max: 50.0,
            },
            ue_height: 1.5,
            bs_hris_blockable: false,
        }
    }

    fn random_angles(n: usize, rng: &mut impl Rng) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(0.0..2.0 * PI)).collect()
    }

    #[test]
    fn quantize_grid_points() {
        for q in 1..=6 {
            let c = quantize(&HrisConfig::from_angles(&[0.0], Branch::Reflection), q).unwrap();
            assert_eq!(c.phase_indices().unwrap(), vec![0]);
        }
        let c = quantize(&HrisConfig::from_angles(&[0.9 * PI / 2.0], Branch::Reflection), 2).unwrap();
        assert_eq!(c.phase_indices().unwrap(), vec![1]);
        assert_relative_eq!(c.angles()[0], PI / 2.0, epsilon = 1e-12);
        assert!(quantize(&c, 0).is_err());
    }

    #[test]
    fn quantize_ties_to_smaller_angle() {
        assert_eq!(nearest_index(PI / 4.0, 2), 0);
        assert_eq!(nearest_index(3.0 * PI / 4.0, 2), 1);
        assert_eq!(nearest_index(1.9 * PI, 2), 0);
    }

    #[test]
    fn quantize_sixteen_bits_error_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let angles = random_angles(4096, &mut rng);
        let cfg = HrisConfig::from_angles(&angles, Branch::Absorption);
        let q = quantize(&cfg, 16).unwrap();
        let bound = PI / 65536.0;
        for (a, c) in angles.iter().zip(q.phases().iter()) {
            assert_relative_eq!(c.norm(), 1.0, epsilon = 1e-12);
            let err = (Complex::from_polar(1.0, *a) * c.conj()).arg().abs();
            assert!(err <= bound * (1.0 + 1e-9), "error {err} > {bound}");
        }
    }

    #[test]
    fn config_rejects_modulus_above_one() {
        let v = CVector::from_vec(vec![Complex::new(1.5, 0.0)]);
        assert!(HrisConfig::new(v, Branch::Reflection).is_err());
    }

    #[test]
    fn grid_shape_factorisation() {
        assert_eq!(grid_shape(32).unwrap(), (8, 4));
        assert_eq!(grid_shape(9).unwrap(), (3, 3));
        assert_eq!(grid_shape(7).unwrap(), (7, 1));
        assert!(grid_shape(0).is_err());
    }

    #[test]
    fn table_codebook() {
        let cb = build_codebook(&hris(), &radio(), 32, 2).unwrap();
        assert_eq!(cb.len(), 32);
        assert_eq!(cb.directions.len(), 32);
        for c in &cb.codewords {
            assert_eq!(c.bits(), Some(2));
            assert!(c.phases().iter().all(|p| (p.norm() - 1.0).abs() < 1e-12));
        }
        let mut dirs = cb.directions.clone();
        dirs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        dirs.dedup();
        assert_eq!(dirs.len(), 32);
        assert!(cb.directions.iter().all(|(az, el)| az.abs() < PI / 2.0 && el.abs() < PI / 4.0));
        assert_eq!(cb, build_codebook(&hris(), &radio(), 32, 2).unwrap());
    }

    #[test]
    fn broadside_codeword_is_all_ones() {
        for q in [1, 2, 3] {
            let cb = build_codebook_grid(&hris(), &radio(), 3, 3, q).unwrap();
            let centre = cb.directions.iter().position(|d| d.0.abs() < 1e-12 && d.1.abs() < 1e-12).unwrap();
            assert_eq!(cb.codewords[centre].phase_indices().unwrap(), vec![0; 32]);
        }
    }

    #[test]
    fn codebook_beam_gain_peaks_on_own_direction() {
        let radio = radio();
        let geom = hris();
        let cb = build_codebook(&geom, &radio, 32, 2).unwrap();
        for (j, &(az, el)) in cb.directions.iter().enumerate() {
            let a = steering_vector(&geom, &hris_direction(az, el), &radio);
            let gains: Vec<f64> = cb.codewords.iter().map(|c| c.phases().dotc(&a).norm()).collect();
            let best = gains.iter().enumerate().max_by(|x, y| x.1.total_cmp(y.1)).unwrap().0;
            assert_eq!(best, j, "direction {j}: gains {gains:?}");
        }
    }

    #[test]
    fn sensed_power_closed_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v = CVector::from_iterator(
            16,
            (0..16).map(|_| Complex::from_polar(rng.random_range(0.1..2.0), rng.random_range(0.0..2.0 * PI))),
        );
        let matched = HrisConfig::phase_aligned(&v, Branch::Absorption);
        let coherent: f64 = v.iter().map(|c| c.norm()).sum();
        let p = sensed_power(&matched, &v, 0.8, 1e-3).unwrap();
        assert_relative_eq!(p, 0.2 * coherent * coherent + 1e-3, max_relative = 1e-12);
        assert_eq!(sensed_power(&matched, &CVector::zeros(16), 0.8, 1e-3).unwrap(), 1e-3);
        assert_eq!(sensed_power(&matched, &v, 1.0, 1e-3).unwrap(), 1e-3);
        let reflect = matched.clone().with_branch(Branch::Reflection);
        assert!(sensed_power(&reflect, &v, 0.8, 1e-3).is_err());
        assert!(sensed_power(&matched, &CVector::zeros(3), 0.8, 1e-3).is_err());
    }

    #[test]
    fn probe_single_on_grid_source() {
        let radio = radio();
        let geom = hris();
        let cb = build_codebook(&geom, &radio, 32, 2).unwrap();
        for i in [0, 5, 13, 31] {
            let (az, el) = cb.directions[i];
            let v = steering_vector(&geom, &hris_direction(az, el), &radio) * Complex::from(1e-3);
            let own = sensed_power(&cb.codewords[i], &v, 0.8, 1e-12).unwrap();
            let out = probe(&cb, &v, 0.8, 1e-12, Threshold::Absolute(0.6 * own), Weighting::Hard).unwrap();
            assert_eq!(out.profile.peak_indices, vec![i]);
            assert_eq!(out.config.phases(), cb.codewords[i].phases());
            assert_eq!(out.profile.argmax(), Some(i));
        }
    }

    #[test]
    fn probe_without_transmitter() {
        let cb = build_codebook(&hris(), &radio(), 32, 2).unwrap();
        let out = probe(&cb, &CVector::zeros(32), 0.8, 1e-11, Threshold::default(), Weighting::Soft).unwrap();
        assert!(!out.detected());
        assert!(out.combined.is_none());
        assert_eq!(out.config.phases(), HrisConfig::idle(32, Branch::Absorption).phases());
        assert_eq!(out.config.phase_indices().unwrap(), vec![0; 32]);
        assert!(probe(&cb, &CVector::zeros(32), 0.8, 1e-11, Threshold::Absolute(1e-12), Weighting::Soft).is_err());
    }

    #[test]
    fn probe_two_equal_sources_soft_combining() {
        let radio = radio();
        let geom = hris();
        let cb = build_codebook(&geom, &radio, 32, 2).unwrap();
        // mirrored azimuth cells 2 and 5 at elevation row 1: equal received power
        let (i, j) = (8 + 2, 8 + 5);
        let v: CVector = [i, j]
            .iter()
            .map(|&l| {
                let (az, el) = cb.directions[l];
                steering_vector(&geom, &hris_direction(az, el), &radio)
            })
            .fold(CVector::zeros(32), |acc, a| acc + a);
        let v = v * Complex::from(1e-3);
        let own = sensed_power(&cb.codewords[i], &v, 0.8, 1e-12).unwrap();
        let out = probe(&cb, &v, 0.8, 1e-12, Threshold::Absolute(0.6 * own), Weighting::Soft).unwrap();
        assert_eq!(out.profile.peak_indices, vec![i, j]);
        assert_relative_eq!(out.profile.powers[i], out.profile.powers[j], max_relative = 1e-9);
        // equal weights: the combination is the phase of the plain codeword sum
        let sum = cb.codewords[i].phases() + cb.codewords[j].phases();
        let got = out.combined.unwrap();
        for (g, s) in got.iter().zip(sum.iter()).filter(|(_, s)| s.norm() > 1e-9) {
            assert!((g - unit_phasor(*s)).norm() < 1e-9);
        }
    }

    #[test]
    fn probe_recovers_source_index_in_noise_free_trials() {
        let radio = radio();
        let geom = hris();
        let cb = build_codebook(&geom, &radio, 32, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let i = rng.random_range(0..32);
            let (az, el) = cb.directions[i];
            let amp = rng.random_range(1e-5..1e-2);
            let v = steering_vector(&geom, &hris_direction(az, el), &radio) * Complex::from_polar(amp, rng.random_range(0.0..6.0));
            let out = probe(&cb, &v, 0.8, 0.0, Threshold::default(), Weighting::Soft).unwrap();
            assert_eq!(out.profile.argmax(), Some(i));
            assert!(out.profile.peak_indices.contains(&i));
        }
    }

    #[test]
    fn compose_reflection_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let phi = HrisConfig::from_angles(&random_angles(32, &mut rng), Branch::Absorption);
        let theta = compose_reflection(&phi, &phi, None).unwrap();
        assert!(theta.phases().iter().all(|c| (c - Complex::new(1.0, 0.0)).norm() < 1e-12));
        assert_eq!(theta.branch(), Branch::Reflection);
        let ones = HrisConfig::idle(32, Branch::Absorption);
        let theta = compose_reflection(&ones, &phi, None).unwrap();
        assert!((theta.phases() - phi.phases().conjugate()).norm() < 1e-12);
        assert!(compose_reflection(&ones, &HrisConfig::idle(3, Branch::Absorption), None).is_err());
        let q = compose_reflection(&ones, &phi, Some(2)).unwrap();
        assert_eq!(q.bits(), Some(2));
    }

    #[test]
    fn compose_reflection_matches_channel_closed_form() {
        let dep = deployment();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let ch = realize_channels(&dep, 3, &mut rng).unwrap();
        let h_sum: CVector = ch.h.iter().fold(CVector::zeros(32), |a, h| a + h);
        let phi_b = HrisConfig::phase_aligned(&array_response(&dep.hris, &dep.bs.center(), &dep.radio).unwrap(), Branch::Absorption);
        let phi_u = HrisConfig::phase_aligned(&h_sum, Branch::Absorption);
        let theta = compose_reflection(&phi_b, &phi_u, None).unwrap();
        for n in 0..32 {
            let direct = (h_sum[n].conj() * ch.hris_to_bs[n]).arg();
            let err = (theta.phases()[n] * Complex::from_polar(1.0, -direct)).arg().abs();
            assert!(err < 1e-9);
        }
    }

    #[test]
    fn oracle_modes_single_ue_agree() {
        let dep = deployment();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ch = realize_channels(&dep, 1, &mut rng).unwrap();
        let a = oracle_config(&ch, OracleMode::Unweighted);
        let b = oracle_config(&ch, OracleMode::Weighted);
        assert!((a.phases() - b.phases()).norm() < 1e-12);
        assert_eq!(a.bits(), None);
    }

    #[test]
    fn oracle_modes_colocated_ues_agree() {
        let dep = deployment();
        let u = Vec3::new(4.0, 30.0, 1.5);
        let ch = dep
            .realize_with_states(&[u, u, u], crate::channel::LinkStates::all_los(3))
            .unwrap();
        let a = oracle_config(&ch, OracleMode::Unweighted);
        let b = oracle_config(&ch, OracleMode::Weighted);
        assert!((a.phases() - b.phases()).norm() < 1e-12);
    }

    #[test]
    fn weighted_oracle_leans_to_stronger_ue() {
        let dep = deployment();
        let near = Vec3::new(-5.0, 6.0, 1.5);
        let far = Vec3::new(20.0, 45.0, 1.5);
        let ch = dep
            .realize_with_states(&[near, far], crate::channel::LinkStates::all_los(2))
            .unwrap();
        let un = oracle_config(&ch, OracleMode::Unweighted);
        let w = oracle_config(&ch, OracleMode::Weighted);
        assert!((un.phases() - w.phases()).norm() > 1e-3);
        // matched config of the stronger (nearer) UE alone
        let strong = equivalent_channel(&ch.h[0], &ch.hris_to_bs);
        assert!(reflected_path_gain(&w, &strong) > reflected_path_gain(&un, &strong));
    }

    #[test]
    fn closed_form_beats_random_configs() {
        let dep = deployment();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..5 {
            let ch = realize_channels(&dep, 4, &mut rng).unwrap();
            let h_hat = equivalent_channel(&aggregate_channel(&ch, OracleMode::Weighted), &ch.hris_to_bs);
            let best = reflected_path_gain(&oracle_config(&ch, OracleMode::Weighted), &h_hat);
            let l1: f64 = h_hat.iter().map(|c| c.norm()).sum();
            assert_relative_eq!(best, l1, max_relative = 1e-12);
            for _ in 0..1000 {
                let cfg = HrisConfig::from_angles(&random_angles(32, &mut rng), Branch::Reflection);
                assert!(reflected_path_gain(&cfg, &h_hat) <= best);
            }
        }
    }

    #[test]
    fn quantization_bits_improve_mean_reflected_gain() {
        let dep = deployment();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (mut g1, mut g2) = (0.0, 0.0);
        for _ in 0..100 {
            let ch = realize_channels(&dep, 5, &mut rng).unwrap();
            let h_hat = equivalent_channel(&aggregate_channel(&ch, OracleMode::Weighted), &ch.hris_to_bs);
            let theta = oracle_config(&ch, OracleMode::Weighted);
            g1 += reflected_path_gain(&quantize(&theta, 1).unwrap(), &h_hat);
            g2 += reflected_path_gain(&quantize(&theta, 2).unwrap(), &h_hat);
        }
        assert!(g2 >= g1);
    }

    #[test]
    fn self_configuration_finds_the_bs() {
        let dep = deployment();
        let cb = build_codebook(&dep.hris, &dep.radio, 32, 2).unwrap();
        let ch = realize_channels(&dep, 10, &mut ChaCha8Rng::seed_from_u64(13)).unwrap();
        let s = ProbeSettings {
            tx_power: 0.1,
            eta: 0.8,
            noise_var: 1e-11,
            threshold: Threshold::default(),
            weighting: Weighting::Soft,
        };
        let sc = self_configure(&cb, &ch, &s).unwrap();
        assert!(sc.bs.detected() && sc.ue.detected());
        assert_eq!(sc.reflection.branch(), Branch::Reflection);
        assert_eq!(sc.reflection.bits(), Some(2));
        // the BS sits at azimuth -45°, elevation 0: the strongest beam must be adjacent
        let (az, el) = cb.directions[sc.bs.profile.argmax().unwrap()];
        assert!((az + PI / 4.0).abs() < PI / 8.0 + 1e-9);
        assert!(el.abs() < PI / 8.0);
    }

    proptest! {
        #[test]
        fn sensed_power_global_phase_invariant(seed in 0u64..1000, rot in 0.0..2.0 * PI) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cfg = HrisConfig::from_angles(&random_angles(16, &mut rng), Branch::Absorption);
            let v = CVector::from_iterator(16, (0..16).map(|_| Complex::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))));
            let rotated = HrisConfig::new(cfg.phases() * Complex::from_polar(1.0, rot), Branch::Absorption).unwrap();
            let a = sensed_power(&cfg, &v, 0.5, 1e-3).unwrap();
            let b = sensed_power(&rotated, &v, 0.5, 1e-3).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        }

        #[test]
        fn quantized_angles_on_grid(seed in 0u64..1000, bits in 1u32..9) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cfg = quantize(&HrisConfig::from_angles(&random_angles(32, &mut rng), Branch::Reflection), bits).unwrap();
            let step = 2.0 * PI / (1u32 << bits) as f64;
            for (a, idx) in cfg.angles().iter().zip(cfg.phase_indices().unwrap()) {
                prop_assert!(idx < (1 << bits));
                let d = (a - idx as f64 * step).abs();
                prop_assert!(d < 1e-9 || (2.0 * PI - d) < 1e-9);
            }
        }
    }
}
