//! Log-distance pathloss model with log-normal shadowing.
//!
//! Received power falls off linearly in `log10(d / d0)`:
//!
//! ```text
//! rssi(d) = p0 - 10 * eta * log10(d / d0) + N(0, sigma^2)
//! ```
//!
//! Inverting the mean gives a point estimate of distance; shifting the reading
//! by two shadowing standard deviations gives the (d_min, d_max) interval that
//! the spring model and the SDP weights use as their uncertainty measure.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Parameters of the log-distance model for one environment/device context.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathlossParams<T> {
    /// Mean received power at `d0_m`, in dBm.
    pub p0_dbm: T,
    /// Reference distance in meters.
    pub d0_m: T,
    /// Pathloss exponent.
    pub eta: T,
    /// Shadowing standard deviation in dB.
    pub sigma_db: T,
}

impl<T: Real> PathlossParams<T> {
    pub fn new(p0_dbm: T, d0_m: T, eta: T, sigma_db: T) -> Result<Self> {
        let params = Self {
            p0_dbm,
            d0_m,
            eta,
            sigma_db,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.p0_dbm, self.d0_m, self.eta, self.sigma_db]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidParams("all fields must be finite".into()));
        }
        if self.d0_m <= T::zero() {
            return Err(Error::InvalidParams(format!("d0_m = {} must be > 0", self.d0_m)));
        }
        if self.eta <= T::zero() {
            return Err(Error::InvalidParams(format!("eta = {} must be > 0", self.eta)));
        }
        if self.sigma_db < T::zero() {
            return Err(Error::InvalidParams(format!(
                "sigma_db = {} must be >= 0",
                self.sigma_db
            )));
        }
        Ok(())
    }

    /// Indoor environment (d0 = 1 m).
    pub fn indoors() -> Self {
        Self::from_f64(-62.919, 1.0, 2.316, 3.441)
    }

    /// Train carriage (d0 = 1 m).
    pub fn train() -> Self {
        Self::from_f64(-60.452, 1.0, 1.364, 5.054)
    }

    /// Open air outdoors (d0 = 1 m).
    pub fn outdoors() -> Self {
        Self::from_f64(-75.014, 1.0, 1.7919, 6.448)
    }

    /// Looks up one of the built-in parameter sets by name.
    pub fn named(name: &str) -> Option<Self> {
        match name {
            "indoors" | "indoor" => Some(Self::indoors()),
            "train" => Some(Self::train()),
            "outdoors" | "outdoor" => Some(Self::outdoors()),
            _ => None,
        }
    }

    fn from_f64(p0: f64, d0: f64, eta: f64, sigma: f64) -> Self {
        Self {
            p0_dbm: T::c(p0),
            d0_m: T::c(d0),
            eta: T::c(eta),
            sigma_db: T::c(sigma),
        }
    }

    /// Copy of these parameters with `p0_dbm` shifted by `offset_db`.
    pub fn with_p0_offset(&self, offset_db: T) -> Self {
        Self {
            p0_dbm: self.p0_dbm + offset_db,
            ..*self
        }
    }

    /// Same parameters without shadowing noise.
    pub fn noiseless(&self) -> Self {
        Self {
            sigma_db: T::zero(),
            ..*self
        }
    }

    #[inline]
    fn invert_shifted(&self, rssi: T, shift_db: T) -> T {
        let ten = T::c(10.0);
        self.d0_m * ten.powf(-(rssi - self.p0_dbm + shift_db) / (ten * self.eta))
    }

    /// Mean-model distance for a received power reading.
    pub fn distance_from_rssi(&self, rssi: T) -> Result<T> {
        if !rssi.is_finite() {
            return Err(Error::NonFinite("rssi"));
        }
        Ok(self.invert_shifted(rssi, T::zero()))
    }

    /// Expected received power at distance `d`.
    pub fn rssi_from_distance(&self, d: T) -> Result<T> {
        if !d.is_finite() || d <= T::zero() {
            return Err(Error::NonPositiveDistance(d.f64()));
        }
        Ok(self.p0_dbm - T::c(10.0) * self.eta * (d / self.d0_m).log10())
    }

    /// Two-sigma distance interval `(d_min, d_max)` for a reading.
    pub fn distance_bounds(&self, rssi: T) -> Result<(T, T)> {
        if !rssi.is_finite() {
            return Err(Error::NonFinite("rssi"));
        }
        let two_sigma = T::c(2.0) * self.sigma_db;
        Ok((
            self.invert_shifted(rssi, two_sigma),
            self.invert_shifted(rssi, -two_sigma),
        ))
    }
}

/// Adds an attenuation correction (dB) to a reading.
#[inline]
pub fn compensate_attenuation<T: Real>(rssi: T, offset_db: T) -> T {
    rssi + offset_db
}

/// Least-squares fit of `rssi = p0 - 10 eta log10(d)` with `d0 = 1 m`.
///
/// `sigma_db` is the residual standard deviation with `N - 2` degrees of
/// freedom (zero for an exact two-point fit).
pub fn fit_pathloss<T: Real>(samples: &[(T, T)]) -> Result<PathlossParams<T>> {
    if samples.len() < 2 {
        return Err(Error::DegenerateFit);
    }
    for &(d, r) in samples {
        if !d.is_finite() || d <= T::zero() {
            return Err(Error::NonPositiveDistance(d.f64()));
        }
        if !r.is_finite() {
            return Err(Error::NonFinite("rssi"));
        }
    }
    let n = T::from_count(samples.len());
    let xs: Vec<T> = samples.iter().map(|&(d, _)| d.log10()).collect();
    let mean_x = xs.iter().copied().fold(T::zero(), |a, b| a + b) / n;
    let mean_y = samples.iter().fold(T::zero(), |a, &(_, r)| a + r) / n;
    let mut sxx = T::zero();
    let mut sxy = T::zero();
    for (x, &(_, y)) in xs.iter().zip(samples) {
        sxx += (*x - mean_x) * (*x - mean_x);
        sxy += (*x - mean_x) * (y - mean_y);
    }
    let distinct = samples
        .iter()
        .any(|&(d, _)| d != samples[0].0);
    if !distinct || sxx <= T::zero() {
        return Err(Error::DegenerateFit);
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let sigma = if samples.len() > 2 {
        let ssr = xs
            .iter()
            .zip(samples)
            .map(|(x, &(_, y))| {
                let r = y - (intercept + slope * *x);
                r * r
            })
            .fold(T::zero(), |a, b| a + b);
        (ssr / (n - T::c(2.0))).sqrt()
    } else {
        T::zero()
    };
    PathlossParams::new(intercept, T::one(), -slope / T::c(10.0), sigma)
}

/// Per-device-model additive corrections to `p0_dbm`.
///
/// Unknown models map to an offset of zero.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CalibrationTable<T> {
    entries: BTreeMap<String, T>,
}

impl<T: Real> CalibrationTable<T> {
    pub fn new() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, model: impl Into<String>, offset_db: T) -> Result<()> {
        if !offset_db.is_finite() {
            return Err(Error::NonFinite("calibration offset"));
        }
        self.entries.insert(model.into(), offset_db);
        Ok(())
    }

    pub fn offset(&self, model: &str) -> T {
        self.entries.get(model).copied().unwrap_or_else(T::zero)
    }

    /// Offset applied to `p0` for a pair: the mean of both devices' offsets.
    pub fn pair_offset(&self, model_a: &str, model_b: &str) -> T {
        (self.offset(model_a) + self.offset(model_b)) / T::c(2.0)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, T)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), *v))
    }
}
