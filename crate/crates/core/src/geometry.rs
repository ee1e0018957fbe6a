//! Microphone array model and far-field propagation.
//!
//! Coordinates follow the DCASE convention: x points to the front, y to the
//! left and z up. Azimuth is measured counter-clockwise from +x in the
//! horizontal plane, elevation upwards from that plane.

use std::f64::consts::PI;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_SPEED_OF_SOUND: f64 = 343.0;
pub const DEFAULT_TETRA_RADIUS: f64 = 0.042;

/// Tolerance used when accepting a vector as a direction.
pub const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(self, other: Vec3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn cross(self, other: Vec3) -> Vec3 {
        Vec3::new(
            self.y * other.z - self.z * other.y,
            self.z * other.x - self.x * other.z,
            self.x * other.y - self.y * other.x,
        )
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn normalized(self) -> Result<Vec3> {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::ZeroVector);
        }
        Ok(self * (1.0 / n))
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, rhs: Vec3) -> Vec3 {
        Vec3::new(self.x + rhs.x, self.y + rhs.y, self.z + rhs.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, rhs: Vec3) {
        *self = *self + rhs;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, rhs: Vec3) -> Vec3 {
        Vec3::new(self.x - rhs.x, self.y - rhs.y, self.z - rhs.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// A direction of arrival: a Cartesian unit vector pointing from the array
/// towards the source.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitDirection(Vec3);

impl UnitDirection {
    /// Wraps `v` if its norm is within [`UNIT_TOLERANCE`] of one.
    pub fn new(v: Vec3) -> Result<Self> {
        let norm = v.norm();
        if !v.is_finite() || (norm - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::NonUnitDirection { norm });
        }
        Ok(Self(v))
    }

    /// Normalizes an arbitrary non-zero vector.
    pub fn from_vector(v: Vec3) -> Result<Self> {
        v.normalized().map(Self)
    }

    /// Builds a direction from azimuth and elevation in degrees, checking the
    /// dataset ranges: azimuth in [-180, 180), elevation in [-45, 45].
    pub fn from_degrees(azimuth: f64, elevation: f64) -> Result<Self> {
        if !(-180.0..180.0).contains(&azimuth) || !(-45.0..=45.0).contains(&elevation) {
            return Err(Error::AngleOutOfRange { azimuth, elevation });
        }
        Ok(Self::from_degrees_unchecked(azimuth, elevation))
    }

    /// Same conversion as [`from_degrees`](Self::from_degrees) without the
    /// range check.
    pub fn from_degrees_unchecked(azimuth: f64, elevation: f64) -> Self {
        let (az, el) = (azimuth.to_radians(), elevation.to_radians());
        Self(Vec3::new(
            el.cos() * az.cos(),
            el.cos() * az.sin(),
            el.sin(),
        ))
    }

    /// Returns (azimuth, elevation) in degrees, azimuth in [-180, 180).
    pub fn to_degrees(self) -> (f64, f64) {
        let v = self.0;
        let mut az = v.y.atan2(v.x).to_degrees();
        if az >= 180.0 {
            az -= 360.0;
        }
        let el = v.z.clamp(-1.0, 1.0).asin().to_degrees();
        (az, el)
    }

    pub fn vector(self) -> Vec3 {
        self.0
    }
}

impl Neg for UnitDirection {
    type Output = UnitDirection;
    fn neg(self) -> UnitDirection {
        UnitDirection(-self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArrayGeometry {
    mic_positions: Vec<Vec3>,
    reference_index: usize,
    speed_of_sound: f64,
}

impl ArrayGeometry {
    pub fn new(
        mic_positions: Vec<Vec3>,
        reference_index: usize,
        speed_of_sound: f64,
    ) -> Result<Self> {
        if mic_positions.len() < 2 {
            return Err(Error::InvalidGeometry(format!(
                "need at least 2 microphones, got {}",
                mic_positions.len()
            )));
        }
        if reference_index >= mic_positions.len() {
            return Err(Error::InvalidGeometry(format!(
                "reference index {reference_index} out of range for {} microphones",
                mic_positions.len()
            )));
        }
        if !(speed_of_sound > 0.0 && speed_of_sound.is_finite()) {
            return Err(Error::InvalidGeometry(format!(
                "speed of sound must be positive, got {speed_of_sound}"
            )));
        }
        for (i, p) in mic_positions.iter().enumerate() {
            if !p.is_finite() {
                return Err(Error::InvalidGeometry(format!(
                    "microphone {i} has a non-finite position"
                )));
            }
            for (j, q) in mic_positions.iter().enumerate().take(i) {
                if p == q {
                    return Err(Error::InvalidGeometry(format!(
                        "microphones {j} and {i} share a position"
                    )));
                }
            }
        }
        Ok(Self {
            mic_positions,
            reference_index,
            speed_of_sound,
        })
    }

    /// Four capsules on a sphere at (az, el) = (45, 35), (-45, -35),
    /// (135, -35), (-135, 35) degrees, the MIC-format layout of the
    /// TAU spatial sound event recordings. Mic 0 is the reference.
    pub fn tetrahedral(radius: f64, speed_of_sound: f64) -> Result<Self> {
        let angles = [(45.0, 35.0), (-45.0, -35.0), (135.0, -35.0), (-135.0, 35.0)];
        let positions = angles
            .iter()
            .map(|&(az, el)| UnitDirection::from_degrees_unchecked(az, el).vector() * radius)
            .collect();
        Self::new(positions, 0, speed_of_sound)
    }

    pub fn mic_positions(&self) -> &[Vec3] {
        &self.mic_positions
    }

    pub fn mic_count(&self) -> usize {
        self.mic_positions.len()
    }

    pub fn reference_index(&self) -> usize {
        self.reference_index
    }

    pub fn speed_of_sound(&self) -> f64 {
        self.speed_of_sound
    }

    /// Indices of the non-reference microphones, in the order used by
    /// [`rdoa`] and the NIPD channels.
    pub fn paired_mics(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.mic_count()).filter(move |&m| m != self.reference_index)
    }

    /// Largest distance between any two microphones.
    pub fn aperture(&self) -> f64 {
        let p = &self.mic_positions;
        let mut best = 0.0f64;
        for i in 0..p.len() {
            for j in i + 1..p.len() {
                best = best.max((p[i] - p[j]).norm());
            }
        }
        best
    }
}

impl Default for ArrayGeometry {
    fn default() -> Self {
        Self::tetrahedral(DEFAULT_TETRA_RADIUS, DEFAULT_SPEED_OF_SOUND)
            .expect("default geometry is valid")
    }
}

/// Relative distance of arrival of a far-field plane wave from `dir`, one
/// entry per non-reference microphone: `(p_m - p_ref) . dir`.
///
/// A positive value means the wavefront reaches mic `m` that many meters of
/// propagation before the reference, so the signal at mic `m` is the
/// reference signal advanced by `d / c` and its spectrum is scaled by
/// [`array_response`]`(f, d, c)`.
pub fn rdoa(geom: &ArrayGeometry, dir: Vec3) -> Result<Vec<f64>> {
    let norm = dir.norm();
    if !dir.is_finite() || (norm - 1.0).abs() > UNIT_TOLERANCE {
        return Err(Error::NonUnitDirection { norm });
    }
    let reference = geom.mic_positions[geom.reference_index];
    Ok(geom
        .paired_mics()
        .map(|m| (geom.mic_positions[m] - reference).dot(dir))
        .collect())
}

/// Far-field response `exp(j 2 pi f d / c)` of a microphone whose RDOA is `d`.
pub fn array_response(frequency_hz: f64, rdoa_m: f64, speed_of_sound: f64) -> Complex64 {
    let phase = 2.0 * PI * frequency_hz * rdoa_m / speed_of_sound;
    Complex64::from_polar(1.0, phase)
}
