//! Synthetic device networks and their RSSI matrices.

use nalgebra::Vector2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geometry::{restart_rng, Configuration};
use crate::measurements::{DistanceEstimateMatrix, RssiMatrix};
use crate::pathloss::PathlossParams;
use crate::scalar::Real;

/// Noise floor used to derive the radio range of the field presets.
pub const PRESET_FLOOR_DBM: f64 = -95.0;

/// Pocket attenuation of the pocket presets, in dB.
pub const POCKET_ATTENUATION_DB: f64 = 20.0;

pub const PRESET_NAMES: [&str; 9] = [
    "table",
    "pocket",
    "pocket-detected",
    "train",
    "grocery",
    "dense",
    "sparse",
    "large",
    "mixed",
];

/// Observed RSSI values grouped by the distance they were recorded at.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalRssiDataset<T> {
    bins: Vec<(T, Vec<T>)>,
}

impl<T: Real> EmpiricalRssiDataset<T> {
    pub fn new(mut bins: Vec<(T, Vec<T>)>) -> Result<Self> {
        bins.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
        if bins.len() < 2 {
            return Err(Error::InvalidArgument("empirical dataset needs at least two distance bins".into()));
        }
        for w in bins.windows(2) {
            if !(w[0].0 < w[1].0) {
                return Err(Error::InvalidArgument("empirical bin distances must be distinct".into()));
            }
        }
        for (d, vals) in &bins {
            if !(*d > T::zero()) || !d.is_finite() {
                return Err(Error::NonPositiveDistance(d.f64()));
            }
            if vals.is_empty() {
                return Err(Error::InvalidArgument(format!("empirical bin at {d} m is empty")));
            }
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("empirical RSSI"));
            }
        }
        Ok(Self { bins })
    }

    /// Groups `(distance_m, rssi_dbm)` samples by exact distance.
    pub fn from_samples(samples: &[(T, T)]) -> Result<Self> {
        let mut bins: Vec<(T, Vec<T>)> = Vec::new();
        let mut sorted = samples.to_vec();
        sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
        for (d, r) in sorted {
            match bins.last_mut() {
                Some((bd, vals)) if *bd == d => vals.push(r),
                _ => bins.push((d, vec![r])),
            }
        }
        Self::new(bins)
    }

    pub fn bins(&self) -> &[(T, Vec<T>)] {
        &self.bins
    }

    fn draw_bin(&self, k: usize, rng: &mut impl Rng) -> T {
        let vals = &self.bins[k].1;
        vals[rng.random_range(0..vals.len())]
    }

    /// Draws a reading at distance `d`, interpolating between adjacent bins
    /// and clamping outside the recorded range.
    pub fn sample(&self, d: T, rng: &mut impl Rng) -> T {
        let last = self.bins.len() - 1;
        if d <= self.bins[0].0 {
            return self.draw_bin(0, rng);
        }
        if d >= self.bins[last].0 {
            return self.draw_bin(last, rng);
        }
        let hi = self.bins.partition_point(|(bd, _)| *bd < d);
        if self.bins[hi].0 == d {
            return self.draw_bin(hi, rng);
        }
        let lo = hi - 1;
        let (a, b) = (self.draw_bin(lo, rng), self.draw_bin(hi, rng));
        let t = (d - self.bins[lo].0) / (self.bins[hi].0 - self.bins[lo].0);
        a + (b - a) * t
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RssiBackend<T> {
    Parametric(PathlossParams<T>),
    Empirical(EmpiricalRssiDataset<T>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeviceContext<T> {
    OpenAir,
    /// Device carried in a pocket; `detected` marks the obstruction as known
    /// to the receiver so it can be compensated.
    Pocket { attenuation_db: T, detected: bool },
}

impl<T: Real> DeviceContext<T> {
    fn attenuation(&self) -> T {
        match *self {
            DeviceContext::OpenAir => T::zero(),
            DeviceContext::Pocket { attenuation_db, .. } => attenuation_db,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec<T> {
    pub name: String,
    pub n_devices: usize,
    /// Field `(width, height)` in meters.
    pub area: (T, T),
    pub backend: RssiBackend<T>,
    /// Pathloss model the estimators invert with.
    pub params: PathlossParams<T>,
    pub miss_rate: f64,
    pub max_range_m: T,
    pub min_sample_distance_m: T,
    /// One per device; empty means every device is in open air.
    pub contexts: Vec<DeviceContext<T>>,
    pub seed: u64,
}

impl<T: Real> ScenarioSpec<T> {
    pub fn validate(&self) -> Result<()> {
        if self.n_devices < 2 {
            return Err(Error::InvalidArgument("scenario needs at least two devices".into()));
        }
        let (w, h) = self.area;
        if !(w >= T::zero()) || !(h >= T::zero()) || !w.is_finite() || !h.is_finite() {
            return Err(Error::InvalidArgument("scenario area must be finite and non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.miss_rate) {
            return Err(Error::InvalidProbability(self.miss_rate));
        }
        if !(self.min_sample_distance_m > T::zero()) || !(self.max_range_m > self.min_sample_distance_m) {
            return Err(Error::InvalidArgument(
                "scenario needs max_range_m > min_sample_distance_m > 0".into(),
            ));
        }
        if !self.contexts.is_empty() && self.contexts.len() != self.n_devices {
            return Err(Error::DimensionMismatch {
                expected: self.n_devices,
                got: self.contexts.len(),
            });
        }
        for c in &self.contexts {
            if let DeviceContext::Pocket { attenuation_db, .. } = c {
                if !attenuation_db.is_finite() {
                    return Err(Error::NonFinite("pocket attenuation"));
                }
            }
        }
        self.params.validate()?;
        if let RssiBackend::Parametric(p) = &self.backend {
            p.validate()?;
        }
        Ok(())
    }

    pub fn context(&self, i: usize) -> DeviceContext<T> {
        self.contexts.get(i).copied().unwrap_or(DeviceContext::OpenAir)
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth<T: Real> {
    pub positions: Configuration<T>,
    pub distances: DistanceEstimateMatrix<T>,
}

impl<T: Real> GroundTruth<T> {
    pub fn from_positions(positions: Configuration<T>) -> Self {
        let distances = positions.distance_matrix();
        Self { positions, distances }
    }
}

/// Positions i.i.d. uniform over the field.
pub fn generate_positions<T: Real>(spec: &ScenarioSpec<T>) -> Result<GroundTruth<T>> {
    spec.validate()?;
    let mut rng = restart_rng(spec.seed, 0);
    let (w, h) = (spec.area.0.f64(), spec.area.1.f64());
    let points = (0..spec.n_devices)
        .map(|_| {
            let x = rng.random::<f64>() * w;
            let y = rng.random::<f64>() * h;
            Vector2::new(T::c(x), T::c(y))
        })
        .collect();
    Ok(GroundTruth::from_positions(Configuration::new(points)?))
}

/// Draws one reading per ordered pair (row = receiver, column = transmitter).
///
/// Pairs beyond `max_range_m` are missing; the rest are dropped with
/// probability `miss_rate`. Distances below `min_sample_distance_m` are
/// sampled at that distance. Pocket attenuation is subtracted per endpoint
/// and recorded as metadata when detected.
pub fn synthesize_rssi<T: Real>(truth: &GroundTruth<T>, spec: &ScenarioSpec<T>) -> Result<RssiMatrix<T>> {
    spec.validate()?;
    let n = spec.n_devices;
    if truth.positions.n() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: truth.positions.n(),
        });
    }
    let mut rng = restart_rng(spec.seed, 1);
    let mut out = RssiMatrix::empty(n);
    for i in 0..n {
        if let DeviceContext::Pocket { attenuation_db, detected: true } = spec.context(i) {
            out.set_detected_attenuation(i, attenuation_db);
        }
    }
    let noise = match &spec.backend {
        RssiBackend::Parametric(p) => Some(
            Normal::new(0.0, p.sigma_db.f64()).map_err(|_| Error::InvalidParams("shadowing sigma".into()))?,
        ),
        RssiBackend::Empirical(_) => None,
    };
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let d = truth.distances.get(i, j);
            if d > spec.max_range_m {
                continue;
            }
            let d = d.max(spec.min_sample_distance_m);
            let reading = match &spec.backend {
                RssiBackend::Parametric(p) => {
                    let eps = noise.as_ref().map(|nd| nd.sample(&mut rng)).unwrap_or(0.0);
                    p.rssi_from_distance(d)? + T::c(eps)
                }
                RssiBackend::Empirical(data) => data.sample(d, &mut rng),
            };
            if rng.random::<f64>() < spec.miss_rate {
                continue;
            }
            let r = reading - spec.context(i).attenuation() - spec.context(j).attenuation();
            out.set(i, j, Some(r))?;
        }
    }
    Ok(out)
}

/// Named scenario with its environment parameters bound.
pub fn scenario_preset<T: Real>(name: &str) -> Result<ScenarioSpec<T>> {
    let pocket = |detected| DeviceContext::Pocket {
        attenuation_db: T::c(POCKET_ATTENUATION_DB),
        detected,
    };
    let near = |name: &str, n: usize, area: (f64, f64), params: PathlossParams<T>, contexts: Vec<DeviceContext<T>>| {
        ScenarioSpec {
            name: name.to_string(),
            n_devices: n,
            area: (T::c(area.0), T::c(area.1)),
            backend: RssiBackend::Parametric(params),
            params,
            miss_rate: 0.1,
            max_range_m: T::c(4.0),
            min_sample_distance_m: T::c(0.5),
            contexts,
            seed: 0,
        }
    };
    let field = |name: &str, n: usize, side: f64| {
        let params = PathlossParams::<T>::outdoors();
        let range = params
            .distance_from_rssi(T::c(PRESET_FLOOR_DBM))
            .expect("preset parameters are valid");
        ScenarioSpec {
            max_range_m: range,
            ..near(name, n, (side, side), params, Vec::new())
        }
    };
    let spec = match name {
        "table" => near(name, 4, (1.5, 1.5), PathlossParams::indoors(), Vec::new()),
        "pocket" => near(name, 4, (1.5, 1.5), PathlossParams::indoors(), vec![pocket(false); 4]),
        "pocket-detected" => near(name, 4, (1.5, 1.5), PathlossParams::indoors(), vec![pocket(true); 4]),
        "train" => near(name, 6, (3.0, 10.0), PathlossParams::train(), Vec::new()),
        "grocery" => near(name, 6, (1.0, 12.0), PathlossParams::outdoors(), Vec::new()),
        "dense" => field(name, 50, 10.0),
        "sparse" => field(name, 50, 20.0),
        "large" => field(name, 100, 20.0),
        // every fifth device pocketed undetected, every fifth detected
        "mixed" => near(
            name,
            20,
            (10.0, 10.0),
            PathlossParams::indoors(),
            (0..20)
                .map(|i| match i % 5 {
                    0 => pocket(false),
                    1 => pocket(true),
                    _ => DeviceContext::OpenAir,
                })
                .collect(),
        ),
        _ => {
            return Err(Error::UnknownPreset {
                name: name.to_string(),
                valid: PRESET_NAMES.join(", "),
            })
        }
    };
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_at(d: f64) -> GroundTruth<f64> {
        GroundTruth::from_positions(Configuration::from_xy(&[(0.0, 0.0), (d, 0.0)]).unwrap())
    }

    fn two_device(backend: RssiBackend<f64>, miss: f64) -> ScenarioSpec<f64> {
        ScenarioSpec {
            n_devices: 2,
            backend,
            miss_rate: miss,
            ..scenario_preset("table").unwrap()
        }
    }

    fn dataset() -> EmpiricalRssiDataset<f64> {
        EmpiricalRssiDataset::from_samples(&[
            (0.5, -50.0),
            (0.5, -52.0),
            (1.0, -60.0),
            (2.0, -70.0),
            (2.0, -71.0),
            (4.0, -80.0),
        ])
        .unwrap()
    }

    #[test]
    fn positions_inside_field_and_deterministic() {
        let spec = scenario_preset::<f64>("dense").unwrap().with_seed(3);
        let a = generate_positions(&spec).unwrap();
        assert_eq!(a.positions.n(), 50);
        for p in a.positions.points() {
            assert!((0.0..=10.0).contains(&p.x) && (0.0..=10.0).contains(&p.y));
        }
        assert_eq!(a, generate_positions(&spec).unwrap());
        let large = scenario_preset::<f64>("large").unwrap();
        let g = generate_positions(&large).unwrap();
        assert_eq!(g.positions.n(), 100);
        assert!(g.positions.points().iter().all(|p| p.x <= 20.0 && p.y <= 20.0));
        for (i, j, d) in g.distances.pairs() {
            assert!((g.positions.distance(i, j) - d).abs() < 1e-12);
        }
    }

    #[test]
    fn presets_bind_parameters() {
        let pocket = scenario_preset::<f64>("pocket").unwrap();
        assert_eq!(pocket.params, PathlossParams::indoors());
        assert!(pocket.contexts.iter().all(|c| *c == DeviceContext::Pocket { attenuation_db: 20.0, detected: false }));
        let det = scenario_preset::<f64>("pocket-detected").unwrap();
        assert!(det.contexts.iter().all(|c| matches!(c, DeviceContext::Pocket { detected: true, .. })));
        let dense = scenario_preset::<f64>("dense").unwrap();
        assert_eq!((dense.n_devices, dense.area), (50, (10.0, 10.0)));
        assert_eq!(scenario_preset::<f64>("sparse").unwrap().area, (20.0, 20.0));
        let train = scenario_preset::<f64>("train").unwrap();
        assert_eq!((train.params.p0_dbm, train.params.eta, train.params.sigma_db), (-60.452, 1.364, 5.054));
        assert_eq!(scenario_preset::<f64>("grocery").unwrap().params, PathlossParams::outdoors());
        assert!((dense.max_range_m - 13.042).abs() < 1e-3);
        match scenario_preset::<f64>("moon") {
            Err(Error::UnknownPreset { valid, .. }) => assert!(valid.contains("pocket-detected")),
            other => panic!("{other:?}"),
        }
        for name in PRESET_NAMES {
            scenario_preset::<f64>(name).unwrap().validate().unwrap();
        }
    }

    #[test]
    fn out_of_range_is_missing() {
        let spec = two_device(RssiBackend::Parametric(PathlossParams::indoors()), 0.0);
        let m = synthesize_rssi(&two_at(5.0), &spec).unwrap();
        assert_eq!(m.observed(), 0);
        let m = synthesize_rssi(&two_at(3.0), &spec).unwrap();
        assert_eq!(m.observed(), 2);
    }

    #[test]
    fn empirical_below_first_bin_uses_it() {
        let spec = two_device(RssiBackend::Empirical(dataset()), 0.0);
        for seed in 0..50 {
            let m = synthesize_rssi(&two_at(0.3), &spec.with_seed(seed)).unwrap();
            for (_, _, r) in m.iter_observed() {
                assert!(r == -50.0 || r == -52.0);
            }
        }
    }

    #[test]
    fn empirical_exact_interpolated_and_clamped() {
        let data = dataset();
        let mut rng = restart_rng(1, 0);
        for _ in 0..200 {
            let r = data.sample(2.0, &mut rng);
            assert!(r == -70.0 || r == -71.0);
            let mid = data.sample(1.5, &mut rng);
            assert!(mid == -65.0 || mid == -65.5, "{mid}");
            assert_eq!(data.sample(6.0, &mut rng), -80.0);
        }
        assert!(EmpiricalRssiDataset::<f64>::from_samples(&[(1.0, -60.0)]).is_err());
    }

    #[test]
    fn miss_rate_fraction() {
        let spec = ScenarioSpec {
            n_devices: 60,
            area: (2.0, 2.0),
            miss_rate: 0.1,
            ..scenario_preset::<f64>("table").unwrap()
        };
        let truth = generate_positions(&spec).unwrap();
        let m = synthesize_rssi(&truth, &spec).unwrap();
        let total = 60 * 59;
        let frac = 1.0 - m.observed() as f64 / total as f64;
        assert!((frac - 0.1).abs() < 0.02, "{frac}");
    }

    #[test]
    fn parametric_statistics() {
        let p = PathlossParams::<f64>::indoors();
        let spec = two_device(RssiBackend::Parametric(p), 0.0);
        let truth = two_at(2.0);
        let mut xs = Vec::new();
        for seed in 0..5000 {
            let m = synthesize_rssi(&truth, &spec.with_seed(seed)).unwrap();
            xs.extend(m.iter_observed().map(|t| t.2));
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let expect = p.rssi_from_distance(2.0).unwrap();
        assert!((mean - expect).abs() < 3.0 * p.sigma_db / n.sqrt(), "{mean} {expect}");
        assert!((sd - p.sigma_db).abs() < 0.05 * p.sigma_db);
    }

    #[test]
    fn pocket_attenuation_and_metadata() {
        let mut spec = scenario_preset::<f64>("pocket-detected").unwrap();
        spec.backend = RssiBackend::Parametric(PathlossParams::indoors().noiseless());
        spec.miss_rate = 0.0;
        let truth = generate_positions(&spec).unwrap();
        let m = synthesize_rssi(&truth, &spec).unwrap();
        assert!(m.detected_attenuation_db().iter().all(|&a| a == 20.0));
        for (i, j, r) in m.compensated().iter_observed() {
            let d = truth.distances.get(i, j).max(0.5);
            assert!((r - PathlossParams::indoors().rssi_from_distance(d).unwrap()).abs() < 1e-9);
        }
        spec.contexts = vec![DeviceContext::Pocket { attenuation_db: 20.0, detected: false }; 4];
        let m = synthesize_rssi(&truth, &spec).unwrap();
        assert!(m.detected_attenuation_db().iter().all(|&a| a == 0.0));
    }

    #[test]
    fn same_seed_same_matrix() {
        let spec = scenario_preset::<f64>("sparse").unwrap().with_seed(11);
        let truth = generate_positions(&spec).unwrap();
        assert_eq!(synthesize_rssi(&truth, &spec).unwrap(), synthesize_rssi(&truth, &spec).unwrap());
    }
}
