//! Planar point configurations.

use nalgebra::Vector2;

use crate::error::{Error, Result};
use crate::measurements::{DistanceEstimateMatrix, MeasurementSet};
use crate::scalar::Real;

/// `n` points in the plane. Only relative geometry is meaningful.
#[derive(Debug, Clone, PartialEq)]
pub struct Configuration<T: Real> {
    points: Vec<Vector2<T>>,
}

impl<T: Real> Configuration<T> {
    pub fn new(points: Vec<Vector2<T>>) -> Result<Self> {
        if points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(Error::NonFinite("configuration coordinate"));
        }
        Ok(Self { points })
    }

    pub fn from_xy(xy: &[(T, T)]) -> Result<Self> {
        Self::new(xy.iter().map(|&(x, y)| Vector2::new(x, y)).collect())
    }

    pub fn n(&self) -> usize {
        self.points.len()
    }

    pub fn points(&self) -> &[Vector2<T>] {
        &self.points
    }

    pub fn points_mut(&mut self) -> &mut [Vector2<T>] {
        &mut self.points
    }

    pub fn into_points(self) -> Vec<Vector2<T>> {
        self.points
    }

    #[inline]
    pub fn distance(&self, i: usize, j: usize) -> T {
        (self.points[i] - self.points[j]).norm()
    }

    pub fn distance_matrix(&self) -> DistanceEstimateMatrix<T> {
        DistanceEstimateMatrix::from_fn(self.n(), |i, j| self.distance(i, j))
    }

    /// Uniform scaling about the origin.
    pub fn scaled(&self, factor: T) -> Self {
        Self {
            points: self.points.iter().map(|p| p * factor).collect(),
        }
    }

    /// Rigid rotation by `angle` followed by translation.
    pub fn transformed(&self, angle: T, shift: Vector2<T>) -> Self {
        let rot = nalgebra::Rotation2::new(angle);
        Self {
            points: self.points.iter().map(|p| rot * p + shift).collect(),
        }
    }

    /// Largest coordinate magnitude.
    pub fn max_abs_coordinate(&self) -> T {
        self.points
            .iter()
            .fold(T::zero(), |m, p| m.max(p.x.abs()).max(p.y.abs()))
    }

    pub(crate) fn check_matches(&self, measurements: &MeasurementSet<T>) -> Result<()> {
        if self.n() != measurements.n() {
            return Err(Error::DimensionMismatch {
                expected: measurements.n(),
                got: self.n(),
            });
        }
        Ok(())
    }
}

/// SplitMix64 finalizer; used to derive independent seeds from small integers.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for stream `purpose` of repeat `repeat` under a base seed.
pub fn derive_seed(seed: u64, repeat: u64, purpose: u64) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(repeat)) ^ purpose)
}

/// Independent seeded generator for one restart of a multi-start method.
pub(crate) fn restart_rng(seed: u64, restart: usize) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(restart as u64);
    rng
}

/// `n` points uniform in an axis-aligned square of the given side.
pub(crate) fn random_square<T: Real>(n: usize, side: T, rng: &mut impl rand::Rng) -> Configuration<T> {
    let side = side.f64();
    let points = (0..n)
        .map(|_| {
            Vector2::new(
                T::c(rng.random::<f64>() * side),
                T::c(rng.random::<f64>() * side),
            )
        })
        .collect();
    Configuration { points }
}
