//! BS precoding and per-UE link evaluation for a fixed HRIS reflection.

use crate::channel::ChannelSet;
use crate::hris::{Branch, HrisConfig};
use crate::{CMatrix, CVector, Complex, Error, Result};

/// Column `k` is `h_D,k + √η G^H Θ^H h_k`, the end-to-end MISO channel of UE
/// `k` seen from the BS (so that the received signal is `column^H w`).
pub fn effective_channels(channels: &ChannelSet, theta: &HrisConfig, eta: f64) -> Result<CMatrix> {
    if theta.branch() != Branch::Reflection {
        return Err(Error::invalid("theta", "expected a reflection configuration"));
    }
    let n = channels.hris_elements();
    if theta.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: theta.len(),
        });
    }
    let m = channels.bs_antennas();
    let k = channels.num_ues();
    let g_h = channels.g.adjoint();
    let scale = Complex::from(eta.sqrt());
    let mut h = CMatrix::zeros(m, k);
    for (col, (h_k, h_d)) in channels.h.iter().zip(&channels.h_d).enumerate() {
        // Θ^H = diag(θ)
        let reflected = h_k.component_mul(theta.phases());
        let column = h_d + &g_h * reflected * scale;
        h.set_column(col, &column);
    }
    Ok(h)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Precoder {
    /// M x K, column `k` serves UE `k`.
    pub w: CMatrix,
    pub total_power: f64,
    pub regularizer: f64,
}

/// Regularized zero-forcing `√P (HH^H + μI)^{-1} H / ‖(HH^H + μI)^{-1} H‖_F`
/// with `μ = K σ²/P`.
pub fn rzf_precoder(h: &CMatrix, total_power: f64, noise_var: f64) -> Result<Precoder> {
    if !(total_power > 0.0) {
        return Err(Error::invalid("P", "transmit power must be positive"));
    }
    let (m, k) = h.shape();
    let mu = k as f64 * noise_var / total_power;
    let gram = h * h.adjoint() + CMatrix::identity(m, m) * Complex::from(mu);
    let unnormalized = match gram.clone().cholesky() {
        Some(chol) => chol.solve(h),
        None => gram
            .lu()
            .solve(h)
            .ok_or_else(|| Error::Solve("regularized Gram matrix is singular".into()))?,
    };
    let fro = unnormalized.norm();
    let w = if fro > 0.0 {
        unnormalized * Complex::from(total_power.sqrt() / fro)
    } else {
        // all-zero channels: nothing to steer toward
        CMatrix::zeros(m, k)
    };
    Ok(Precoder {
        w,
        total_power,
        regularizer: mu,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkBudget {
    pub sinr: Vec<f64>,
    /// `Σ log2(1 + SINR_k)` in bit/s/Hz.
    pub sum_rate: f64,
    /// Share of each UE's useful received power carried by the direct path.
    pub direct_power_fraction: Vec<f64>,
}

/// SINR, sum-rate and direct-path power share for every UE.
pub fn evaluate(
    channels: &ChannelSet,
    theta: &HrisConfig,
    precoder: &Precoder,
    eta: f64,
    noise_var: f64,
) -> Result<LinkBudget> {
    let h = effective_channels(channels, theta, eta)?;
    evaluate_effective(&h, &channels.h_d, precoder, noise_var)
}

/// Same as [`evaluate`] for precomputed effective channels.
pub fn evaluate_effective(
    h: &CMatrix,
    direct: &[CVector],
    precoder: &Precoder,
    noise_var: f64,
) -> Result<LinkBudget> {
    let k = h.ncols();
    if precoder.w.shape() != h.shape() {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: precoder.w.ncols(),
        });
    }
    // gains[(k, j)] = h_k^H w_j
    let gains = h.adjoint() * &precoder.w;
    let mut sinr = Vec::with_capacity(k);
    let mut fraction = Vec::with_capacity(k);
    for ue in 0..k {
        let signal = gains[(ue, ue)].norm_sqr();
        let interference: f64 = (0..k).filter(|&j| j != ue).map(|j| gains[(ue, j)].norm_sqr()).sum();
        let denom = noise_var + interference;
        sinr.push(if signal == 0.0 { 0.0 } else { signal / denom });
        let direct_power = direct[ue].dotc(&precoder.w.column(ue)).norm_sqr();
        let share = if signal > 0.0 {
            direct_power / signal
        } else if direct_power > 0.0 {
            1.0
        } else {
            0.0
        };
        fraction.push(share.clamp(0.0, 1.0));
    }
    let sum_rate = sinr.iter().map(|s| (1.0 + s).log2()).sum();
    Ok(LinkBudget {
        sinr,
        sum_rate,
        direct_power_fraction: fraction,
    })
}

/// Effective channels, RZF precoder and link budget in one go.
pub fn evaluate_with_rzf(
    channels: &ChannelSet,
    theta: &HrisConfig,
    eta: f64,
    total_power: f64,
    noise_var: f64,
) -> Result<LinkBudget> {
    let h = effective_channels(channels, theta, eta)?;
    let precoder = rzf_precoder(&h, total_power, noise_var)?;
    evaluate_effective(&h, &channels.h_d, &precoder, noise_var)
}
