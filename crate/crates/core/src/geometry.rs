//! Array layouts, wave vectors and far-field array responses.
//!
//! Conventions: the BS is a ULA along the x axis; the HRIS is a planar array
//! in the x-z plane whose boresight is +y. Planar element offsets are stored
//! row-major with x varying fastest, so element `n` sits at column
//! `n % nx` and row `n / nx`.

use std::f64::consts::PI;

use crate::{Complex, CVector, Error, Result, Vec3, SPEED_OF_LIGHT};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArrayKind {
    Ula,
    Planar { nx: usize, nz: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArrayGeometry {
    center: Vec3,
    offsets: Vec<Vec3>,
    kind: ArrayKind,
    spacing: f64,
}

impl ArrayGeometry {
    /// Uniform linear array of `m` elements along x, centred on `center`.
    pub fn ula(center: Vec3, m: usize, spacing: f64) -> Result<Self> {
        check_layout(m, spacing)?;
        let half = (m as f64 - 1.0) / 2.0;
        let offsets = (0..m)
            .map(|i| Vec3::new((i as f64 - half) * spacing, 0.0, 0.0))
            .collect();
        Ok(Self {
            center,
            offsets,
            kind: ArrayKind::Ula,
            spacing,
        })
    }

    /// Planar `nx` x `nz` array in the x-z plane, centred on `center`.
    pub fn planar(center: Vec3, nx: usize, nz: usize, spacing: f64) -> Result<Self> {
        check_layout(nx, spacing)?;
        check_layout(nz, spacing)?;
        let hx = (nx as f64 - 1.0) / 2.0;
        let hz = (nz as f64 - 1.0) / 2.0;
        let mut offsets = Vec::with_capacity(nx * nz);
        for iz in 0..nz {
            for ix in 0..nx {
                offsets.push(Vec3::new(
                    (ix as f64 - hx) * spacing,
                    0.0,
                    (iz as f64 - hz) * spacing,
                ));
            }
        }
        Ok(Self {
            center,
            offsets,
            kind: ArrayKind::Planar { nx, nz },
            spacing,
        })
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn center(&self) -> Vec3 {
        self.center
    }

    pub fn offsets(&self) -> &[Vec3] {
        &self.offsets
    }

    pub fn kind(&self) -> ArrayKind {
        self.kind
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Same layout moved so that its centre is `center`.
    pub fn translated_to(&self, center: Vec3) -> Self {
        Self {
            center,
            ..self.clone()
        }
    }
}

fn check_layout(count: usize, spacing: f64) -> Result<()> {
    if count == 0 {
        return Err(Error::invalid("element count", "must be at least 1"));
    }
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(Error::invalid("spacing", format!("{spacing} is not positive")));
    }
    Ok(())
}

/// Carrier description. The wavelength is derived from the carrier frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Radio {
    carrier_hz: f64,
    wavelength: f64,
}

impl Radio {
    pub fn new(carrier_hz: f64) -> Result<Self> {
        if !(carrier_hz > 0.0 && carrier_hz.is_finite()) {
            return Err(Error::invalid("carrier_hz", format!("{carrier_hz} is not positive")));
        }
        Ok(Self {
            carrier_hz,
            wavelength: SPEED_OF_LIGHT / carrier_hz,
        })
    }

    pub fn carrier_hz(&self) -> f64 {
        self.carrier_hz
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * PI / self.wavelength
    }
}

/// Wave vector `(2π/λ)(p − q)/‖q − p‖`: magnitude `2π/λ`, pointing from `q`
/// toward `p`.
pub fn wave_vector(p: &Vec3, q: &Vec3, wavelength: f64) -> Result<Vec3> {
    let diff = p - q;
    let dist = diff.norm();
    if dist == 0.0 {
        return Err(Error::DegenerateLink);
    }
    Ok(diff * (2.0 * PI / wavelength / dist))
}

/// Response of `arr` toward the point `p`: entry `n` is `exp(j⟨k, offset_n⟩)`
/// where `k` is the wave vector from the array centre toward `p`.
///
/// `p` is assumed to lie in the far field, outside the array aperture.
pub fn array_response(arr: &ArrayGeometry, p: &Vec3, radio: &Radio) -> Result<CVector> {
    let k = wave_vector(p, &arr.center, radio.wavelength())?;
    Ok(response_for_wave_vector(arr, &k))
}

/// Response of `arr` toward the unit direction `dir` (far field).
pub fn steering_vector(arr: &ArrayGeometry, dir: &Vec3, radio: &Radio) -> CVector {
    let k = dir.normalize() * radio.wavenumber();
    response_for_wave_vector(arr, &k)
}

fn response_for_wave_vector(arr: &ArrayGeometry, k: &Vec3) -> CVector {
    CVector::from_iterator(
        arr.len(),
        arr.offsets.iter().map(|o| Complex::from_polar(1.0, k.dot(o))),
    )
}

/// Unit vector for an (azimuth, elevation) pair in the HRIS frame: azimuth is
/// measured from boresight (+y) toward +x, elevation from the x-y plane toward +z.
pub fn hris_direction(azimuth: f64, elevation: f64) -> Vec3 {
    let (se, ce) = elevation.sin_cos();
    let (sa, ca) = azimuth.sin_cos();
    Vec3::new(ce * sa, ce * ca, se)
}
