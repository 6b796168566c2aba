//! Baseline: every reading goes straight through the pathloss inverse.

use crate::error::Result;
use crate::measurements::{
    impute_noise_floor, symmetrize_post, symmetrize_pre, DistanceEstimateMatrix, RssiMatrix,
};
use crate::pathloss::PathlossParams;
use crate::scalar::Real;

/// How the two directional readings of a pair are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DirectVariant {
    /// Each direction inverted separately; the pair estimate is their mean.
    Raw,
    /// dBm readings averaged before inversion.
    PreAveraged,
    /// Distances averaged after inversion.
    PostAveraged,
}

/// Per-direction distance estimates `(receiver, transmitter, d)` after
/// noise-floor imputation, in row-major order.
pub fn directional_distances<T: Real>(
    rssi: &RssiMatrix<T>,
    params: &PathlossParams<T>,
    floor_dbm: T,
) -> Result<Vec<(usize, usize, T)>> {
    params.validate()?;
    let full = impute_noise_floor(rssi, floor_dbm)?;
    full.iter_observed()
        .map(|(i, j, r)| Ok((i, j, params.distance_from_rssi(r)?)))
        .collect()
}

/// Direct estimate of every pairwise distance.
///
/// Missing readings are imputed at `floor_dbm` first, so every pair gets an
/// estimate.
pub fn estimate_direct<T: Real>(
    rssi: &RssiMatrix<T>,
    params: &PathlossParams<T>,
    variant: DirectVariant,
    floor_dbm: T,
) -> Result<DistanceEstimateMatrix<T>> {
    params.validate()?;
    let n = rssi.n();
    match variant {
        DirectVariant::Raw => {
            let mut sum = DistanceEstimateMatrix::<T>::zeros(n);
            for (i, j, d) in directional_distances(rssi, params, floor_dbm)? {
                if i < j {
                    sum.set(i, j, sum.get(i, j) + d);
                } else {
                    sum.set(j, i, sum.get(j, i) + d);
                }
            }
            let half = T::c(0.5);
            Ok(DistanceEstimateMatrix::from_fn(n, |i, j| sum.get(i, j) * half))
        }
        DirectVariant::PreAveraged | DirectVariant::PostAveraged => {
            let full = impute_noise_floor(rssi, floor_dbm)?;
            let set = if variant == DirectVariant::PreAveraged {
                symmetrize_pre(&full, params)?
            } else {
                symmetrize_post(&full, params)?
            };
            let mut out = DistanceEstimateMatrix::zeros(n);
            for e in set.edges() {
                out.set(e.i, e.j, e.d);
            }
            Ok(out)
        }
    }
}
