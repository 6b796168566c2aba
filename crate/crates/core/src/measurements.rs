//! RSSI matrices, the symmetric measurement set derived from them, and the
//! symmetric distance-estimate matrix every estimator produces.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::pathloss::{compensate_attenuation, CalibrationTable, PathlossParams};
use crate::scalar::Real;

/// Square matrix of received-power readings in dBm.
///
/// Entry `(i, j)` is the signal received at device `i` transmitted by `j`.
/// Missing readings are `None`; the diagonal is always `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct RssiMatrix<T> {
    n: usize,
    entries: Vec<Option<T>>,
    /// Known (detected) per-device attenuation in dB, added back on
    /// compensation. Zero for devices in open air or undetected obstruction.
    detected_attenuation_db: Vec<T>,
}

impl<T: Real> RssiMatrix<T> {
    /// All-missing matrix for `n` devices.
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            entries: vec![None; n * n],
            detected_attenuation_db: vec![T::zero(); n],
        }
    }

    /// Builds from row-major rows; diagonal values are discarded.
    pub fn from_rows(rows: Vec<Vec<Option<T>>>) -> Result<Self> {
        let n = rows.len();
        let mut m = Self::empty(n);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: row.len(),
                });
            }
            for (j, v) in row.into_iter().enumerate() {
                if i != j {
                    m.set(i, j, v)?;
                }
            }
        }
        Ok(m)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Option<T> {
        self.entries[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: Option<T>) -> Result<()> {
        if i == j {
            return Ok(());
        }
        if let Some(v) = value {
            if !v.is_finite() {
                return Err(Error::NonFinite("rssi entry"));
            }
        }
        self.entries[i * self.n + j] = value;
        Ok(())
    }

    pub fn detected_attenuation_db(&self) -> &[T] {
        &self.detected_attenuation_db
    }

    /// Records a detected obstruction on device `i`.
    pub fn set_detected_attenuation(&mut self, i: usize, db: T) {
        self.detected_attenuation_db[i] = db;
    }

    /// Number of observed off-diagonal readings.
    pub fn observed(&self) -> usize {
        self.entries.iter().filter(|e| e.is_some()).count()
    }

    /// Off-diagonal `(i, j, reading)` triples in row-major order.
    pub fn iter_observed(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        self.entries
            .iter()
            .enumerate()
            .filter_map(move |(k, v)| v.map(|v| (k / self.n, k % self.n, v)))
    }

    /// Applies detected-obstruction compensation at both endpoints of every
    /// reading and clears the metadata.
    pub fn compensated(&self) -> Self {
        let mut out = Self::empty(self.n);
        for (i, j, r) in self.iter_observed() {
            let offset = self.detected_attenuation_db[i] + self.detected_attenuation_db[j];
            out.entries[i * self.n + j] = Some(compensate_attenuation(r, offset));
        }
        out
    }

    /// Folds per-device-model `p0` offsets into the readings.
    ///
    /// Shifting `p0` by the pair offset is equivalent to shifting the reading
    /// by its negation.
    pub fn with_calibration(&self, table: &CalibrationTable<T>, models: &[String]) -> Result<Self> {
        if models.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: models.len(),
            });
        }
        let mut out = self.clone();
        for (i, j, r) in self.iter_observed() {
            out.entries[i * self.n + j] = Some(r - table.pair_offset(&models[i], &models[j]));
        }
        Ok(out)
    }
}

/// Every missing off-diagonal entry set to `floor_dbm`.
pub fn impute_noise_floor<T: Real>(rssi: &RssiMatrix<T>, floor_dbm: T) -> Result<RssiMatrix<T>> {
    if !floor_dbm.is_finite() {
        return Err(Error::NonFinite("noise floor"));
    }
    let mut out = rssi.clone();
    for i in 0..rssi.n {
        for j in 0..rssi.n {
            if i != j && out.entries[i * rssi.n + j].is_none() {
                out.entries[i * rssi.n + j] = Some(floor_dbm);
            }
        }
    }
    Ok(out)
}

/// Removes each observed reading independently with probability `rate`.
pub fn drop_random<T: Real>(rssi: &RssiMatrix<T>, rate: f64, seed: u64) -> Result<RssiMatrix<T>> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::InvalidProbability(rate));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = rssi.clone();
    for e in out.entries.iter_mut().filter(|e| e.is_some()) {
        if rng.random::<f64>() < rate {
            *e = None;
        }
    }
    Ok(out)
}

/// One symmetric distance measurement with its two-sigma interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge<T> {
    pub i: usize,
    pub j: usize,
    pub d: T,
    pub d_min: T,
    pub d_max: T,
}

impl<T: Real> Edge<T> {
    /// Width of the uncertainty interval.
    #[inline]
    pub fn width(&self) -> T {
        self.d_max - self.d_min
    }
}

/// Symmetric set of pairwise distance measurements, at most one per pair,
/// stored with `i < j`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet<T> {
    n: usize,
    edges: Vec<Edge<T>>,
}

impl<T: Real> MeasurementSet<T> {
    /// Validates and normalizes edges (orientation `i < j`, sorted by pair).
    pub fn new(n: usize, edges: impl IntoIterator<Item = Edge<T>>) -> Result<Self> {
        let mut out: Vec<Edge<T>> = Vec::new();
        for mut e in edges {
            if e.i == e.j || e.i >= n || e.j >= n {
                return Err(Error::InvalidMeasurement {
                    i: e.i,
                    j: e.j,
                    reason: format!("pair out of range for n = {n}"),
                });
            }
            if e.i > e.j {
                std::mem::swap(&mut e.i, &mut e.j);
            }
            let ok = e.d_min.is_finite()
                && e.d_max.is_finite()
                && e.d_min > T::zero()
                && e.d_min <= e.d
                && e.d <= e.d_max;
            if !ok {
                return Err(Error::InvalidMeasurement {
                    i: e.i,
                    j: e.j,
                    reason: format!(
                        "need 0 < d_min <= d <= d_max, got ({}, {}, {})",
                        e.d_min, e.d, e.d_max
                    ),
                });
            }
            out.push(e);
        }
        out.sort_by_key(|e| (e.i, e.j));
        if let Some(w) = out.windows(2).find(|w| (w[0].i, w[0].j) == (w[1].i, w[1].j)) {
            return Err(Error::InvalidMeasurement {
                i: w[0].i,
                j: w[0].j,
                reason: "duplicate pair".into(),
            });
        }
        Ok(Self { n, edges: out })
    }

    /// Complete measurement set from a distance matrix with an interval of
    /// `d +- half_width` on every pair (floored at `d / 1000` from below).
    pub fn from_exact(dist: &DistanceEstimateMatrix<T>, half_width: T) -> Result<Self> {
        let n = dist.n();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                let d = dist.get(i, j);
                edges.push(Edge {
                    i,
                    j,
                    d,
                    d_min: (d - half_width).max(d * T::c(1e-3)),
                    d_max: d + half_width,
                });
            }
        }
        Self::new(n, edges)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn edges(&self) -> &[Edge<T>] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// True when every unordered pair has a measurement.
    pub fn is_complete(&self) -> bool {
        self.edges.len() == self.n * self.n.saturating_sub(1) / 2
    }

    pub fn get(&self, i: usize, j: usize) -> Option<&Edge<T>> {
        let key = (i.min(j), i.max(j));
        self.edges
            .binary_search_by_key(&key, |e| (e.i, e.j))
            .ok()
            .map(|k| &self.edges[k])
    }

    /// Per-node incident edge lists as `(neighbor, edge index)`.
    pub fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.n];
        for (k, e) in self.edges.iter().enumerate() {
            adj[e.i].push((e.j, k));
            adj[e.j].push((e.i, k));
        }
        adj
    }

    pub fn mean_distance(&self) -> Option<T> {
        crate::scalar::mean(self.edges.iter().map(|e| e.d))
    }

    /// Connected components of the measurement graph, each sorted.
    pub fn components(&self) -> Vec<Vec<usize>> {
        components(self.n, self.edges.iter().map(|e| (e.i, e.j)))
    }
}

pub(crate) fn components(n: usize, pairs: impl Iterator<Item = (usize, usize)>) -> Vec<Vec<usize>> {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for (a, b) in pairs {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut root_slot = vec![usize::MAX; n];
    for x in 0..n {
        let r = find(&mut parent, x);
        if root_slot[r] == usize::MAX {
            root_slot[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[root_slot[r]].push(x);
    }
    groups
}

/// Averages the available dBm readings of each pair, then inverts once.
pub fn symmetrize_pre<T: Real>(
    rssi: &RssiMatrix<T>,
    params: &PathlossParams<T>,
) -> Result<MeasurementSet<T>> {
    params.validate()?;
    let n = rssi.n();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let readings: Vec<T> = [rssi.get(i, j), rssi.get(j, i)].into_iter().flatten().collect();
            let Some(mean) = crate::scalar::mean(readings) else {
                continue;
            };
            let d = params.distance_from_rssi(mean)?;
            let (d_min, d_max) = params.distance_bounds(mean)?;
            edges.push(Edge { i, j, d, d_min, d_max });
        }
    }
    MeasurementSet::new(n, edges)
}

/// Inverts each reading, then averages distances and bounds per pair.
pub fn symmetrize_post<T: Real>(
    rssi: &RssiMatrix<T>,
    params: &PathlossParams<T>,
) -> Result<MeasurementSet<T>> {
    params.validate()?;
    let n = rssi.n();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let mut per_dir = Vec::with_capacity(2);
            for r in [rssi.get(i, j), rssi.get(j, i)].into_iter().flatten() {
                let d = params.distance_from_rssi(r)?;
                let (lo, hi) = params.distance_bounds(r)?;
                per_dir.push((d, lo, hi));
            }
            if per_dir.is_empty() {
                continue;
            }
            let k = T::from_count(per_dir.len());
            let (d, lo, hi) = per_dir
                .iter()
                .fold((T::zero(), T::zero(), T::zero()), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
            edges.push(Edge {
                i,
                j,
                d: d / k,
                d_min: (lo / k).min(d / k),
                d_max: (hi / k).max(d / k),
            });
        }
    }
    MeasurementSet::new(n, edges)
}

/// Symmetric `n x n` matrix of distances in meters with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceEstimateMatrix<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Real> DistanceEstimateMatrix<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![T::zero(); n * n],
        }
    }

    /// Builds from a pair function evaluated once per unordered pair.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in (i + 1)..n {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    /// Validates symmetry, non-negativity and the zero diagonal.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let n = rows.len();
        let mut m = Self::zeros(n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: row.len(),
                });
            }
            for (j, &v) in row.iter().enumerate() {
                let ok = v.is_finite() && v >= T::zero() && (i != j || v == T::zero());
                if !ok || (rows[j][i] - v).abs() > T::c(1e-9) * (T::one() + v.abs()) {
                    return Err(Error::InvalidMeasurement {
                        i,
                        j,
                        reason: "distance matrix must be symmetric, finite, non-negative with zero diagonal".into(),
                    });
                }
                m.data[i * n + j] = v;
            }
        }
        Ok(m)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.n + j]
    }

    /// Sets both `(i, j)` and `(j, i)`; writes to the diagonal are ignored.
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        if i != j {
            self.data[i * self.n + j] = v;
            self.data[j * self.n + i] = v;
        }
    }

    pub fn rows(&self) -> Vec<Vec<T>> {
        self.data.chunks(self.n.max(1)).map(|r| r.to_vec()).collect()
    }

    /// Upper-triangle `(i, j, d)` triples.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        (0..self.n).flat_map(move |i| ((i + 1)..self.n).map(move |j| (i, j, self.get(i, j))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn toy_params() -> PathlossParams<f64> {
        PathlossParams::new(-60.0, 1.0, 2.0, 2.0).unwrap()
    }

    fn pair(a: Option<f64>, b: Option<f64>) -> RssiMatrix<f64> {
        RssiMatrix::from_rows(vec![vec![None, a], vec![b, None]]).unwrap()
    }

    #[test]
    fn pre_and_post_hand_values() {
        let m = pair(Some(-60.0), Some(-70.0));
        let pre = symmetrize_pre(&m, &toy_params()).unwrap();
        let post = symmetrize_post(&m, &toy_params()).unwrap();
        assert_relative_eq!(pre.edges()[0].d, 1.7782794100389228, max_relative = 1e-12);
        assert_relative_eq!(post.edges()[0].d, 2.08113883008419, max_relative = 1e-12);
    }

    #[test]
    fn one_sided_reading_used_as_is() {
        let m = pair(None, Some(-66.0));
        let p = toy_params();
        let pre = symmetrize_pre(&m, &p).unwrap();
        assert_eq!(pre.len(), 1);
        assert_eq!(pre.edges()[0].d, p.distance_from_rssi(-66.0).unwrap());
        assert_eq!(symmetrize_post(&m, &p).unwrap(), pre);
    }

    #[test]
    fn equal_readings_agree() {
        let m = pair(Some(-64.0), Some(-64.0));
        let p = toy_params();
        let pre = symmetrize_pre(&m, &p).unwrap();
        let post = symmetrize_post(&m, &p).unwrap();
        assert_relative_eq!(pre.edges()[0].d, post.edges()[0].d, max_relative = 1e-12);
    }

    #[test]
    fn pre_never_exceeds_post() {
        let p = PathlossParams::<f64>::indoors();
        for a in (0..40).map(|k| -95.0 + k as f64) {
            for b in (0..40).map(|k| -94.5 + k as f64) {
                let m = pair(Some(a), Some(b));
                let pre = symmetrize_pre(&m, &p).unwrap().edges()[0].d;
                let post = symmetrize_post(&m, &p).unwrap().edges()[0].d;
                assert!(pre <= post * (1.0 + 1e-12), "{a} {b}: {pre} > {post}");
            }
        }
    }

    #[test]
    fn missing_pair_produces_no_edge() {
        let m = RssiMatrix::<f64>::empty(3);
        assert!(symmetrize_pre(&m, &toy_params()).unwrap().is_empty());
        assert!(symmetrize_post(&m, &toy_params()).unwrap().is_empty());
    }

    #[test]
    fn imputation_fills_only_missing() {
        let m = pair(Some(-60.0), None);
        let f = impute_noise_floor(&m, -95.0).unwrap();
        assert_eq!(f.get(0, 1), Some(-60.0));
        assert_eq!(f.get(1, 0), Some(-95.0));
        assert_eq!(f.get(0, 0), None);
        let all = impute_noise_floor(&RssiMatrix::<f64>::empty(4), -95.0).unwrap();
        assert_eq!(all.observed(), 12);
        assert!(all.iter_observed().all(|(_, _, r)| r == -95.0));
        let d = PathlossParams::indoors().distance_from_rssi(-95.0).unwrap();
        assert_relative_eq!(d, 24.276718512806465, max_relative = 1e-12);
        let full = impute_noise_floor(&f, -90.0).unwrap();
        assert_eq!(full, f);
    }

    #[test]
    fn dropping_is_seeded_and_bounded() {
        let full = impute_noise_floor(&RssiMatrix::<f64>::empty(101), -70.0).unwrap();
        assert_eq!(drop_random(&full, 0.0, 1).unwrap(), full);
        assert_eq!(drop_random(&full, 1.0, 1).unwrap().observed(), 0);
        let a = drop_random(&full, 0.1, 9).unwrap();
        let b = drop_random(&full, 0.1, 9).unwrap();
        assert_eq!(a, b);
        let frac = 1.0 - a.observed() as f64 / full.observed() as f64;
        assert!((frac - 0.1).abs() < 0.01, "dropped {frac}");
        assert!(drop_random(&full, 1.5, 0).is_err());
        assert!(drop_random(&full, -0.1, 0).is_err());
    }

    #[test]
    fn measurement_set_validation() {
        let e = |i, j, d: f64| Edge { i, j, d, d_min: d * 0.5, d_max: d * 2.0 };
        let s = MeasurementSet::<f64>::new(3, [e(2, 0, 1.0), e(0, 1, 2.0)]).unwrap();
        assert_eq!((s.edges()[0].i, s.edges()[0].j), (0, 1));
        assert_eq!((s.edges()[1].i, s.edges()[1].j), (0, 2));
        assert!(s.get(2, 0).is_some());
        assert!(s.get(1, 2).is_none());
        assert!(MeasurementSet::<f64>::new(3, [e(0, 1, 1.0), e(1, 0, 1.0)]).is_err());
        assert!(MeasurementSet::<f64>::new(3, [e(0, 0, 1.0)]).is_err());
        assert!(MeasurementSet::<f64>::new(2, [e(0, 2, 1.0)]).is_err());
        let bad = Edge { i: 0, j: 1, d: 1.0, d_min: 1.5, d_max: 2.0 };
        assert!(MeasurementSet::<f64>::new(2, [bad]).is_err());
    }

    #[test]
    fn compensation_and_calibration() {
        let mut m = pair(Some(-90.0), Some(-80.0));
        m.set_detected_attenuation(0, 20.0);
        let c = m.compensated();
        assert_eq!(c.get(0, 1), Some(-70.0));
        assert_eq!(c.get(1, 0), Some(-60.0));
        assert!(c.detected_attenuation_db().iter().all(|&a| a == 0.0));

        let mut table = CalibrationTable::new();
        table.insert("A", 4.0).unwrap();
        let models = vec!["A".to_string(), "B".to_string()];
        let cal = pair(Some(-70.0), None).with_calibration(&table, &models).unwrap();
        assert_eq!(cal.get(0, 1), Some(-72.0));
        assert!(m.with_calibration(&table, &models[..1]).is_err());
    }

    #[test]
    fn distance_matrix_symmetry() {
        let d = DistanceEstimateMatrix::from_fn(4, |i, j| (i + j) as f64);
        for i in 0..4 {
            assert_eq!(d.get(i, i), 0.0);
            for j in 0..4 {
                assert_eq!(d.get(i, j), d.get(j, i));
            }
        }
        assert!(DistanceEstimateMatrix::from_rows(&[vec![0.0, 1.0], vec![2.0, 0.0]]).is_err());
        assert!(DistanceEstimateMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 0.0]]).is_err());
        assert!(DistanceEstimateMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).is_ok());
    }
}
