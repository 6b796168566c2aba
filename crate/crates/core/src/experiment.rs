//! Batch runner: builds inputs per repeat, runs the selected estimators,
//! evaluates them against ground truth and writes the result files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;

use crate::direct::{estimate_direct, DirectVariant};
use crate::error::{Error, Result};
use crate::geometry::{derive_seed, Configuration};
use crate::io::write_text;
use crate::manifold::{default_k, isomap, lle};
use crate::mds::{rescale_to_mean, smacof, SmacofOptions};
use crate::measurements::{
    drop_random, impute_noise_floor, symmetrize_post, symmetrize_pre, DistanceEstimateMatrix, MeasurementSet,
    RssiMatrix,
};
use crate::metrics::{error_density, ErrorDensity, EstimatorMetrics, MetricsReport};
use crate::pathloss::PathlossParams;
use crate::sdp::{refine_with_spring, solve_sdp, SdpOptions, SdpProblem};
use crate::simulator::{generate_positions, synthesize_rssi, ScenarioSpec};
use crate::spring::{spring_localize, SpringOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Estimator {
    Rss,
    RssPre,
    RssPost,
    MdsMetric,
    MdsNonMetric,
    Spring,
    Sdp,
    SdpSpring,
    Isomap,
    Lle,
}

impl Estimator {
    pub const ALL: [Estimator; 10] = [
        Estimator::Rss,
        Estimator::RssPre,
        Estimator::RssPost,
        Estimator::MdsMetric,
        Estimator::MdsNonMetric,
        Estimator::Spring,
        Estimator::Sdp,
        Estimator::SdpSpring,
        Estimator::Isomap,
        Estimator::Lle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::Rss => "rss",
            Estimator::RssPre => "rss-pre",
            Estimator::RssPost => "rss-post",
            Estimator::MdsMetric => "mds-metric",
            Estimator::MdsNonMetric => "mds-nonmetric",
            Estimator::Spring => "spring",
            Estimator::Sdp => "sdp",
            Estimator::SdpSpring => "sdp-spring",
            Estimator::Isomap => "isomap",
            Estimator::Lle => "lle",
        }
    }

    /// Parses a comma-separated list, keeping order and dropping repeats.
    pub fn parse_list(list: &str) -> Result<Vec<Estimator>> {
        let mut out = Vec::new();
        for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let e: Estimator = name.parse()?;
            if !out.contains(&e) {
                out.push(e);
            }
        }
        if out.is_empty() {
            return Err(Error::InvalidArgument("no estimators selected".into()));
        }
        Ok(out)
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Estimator::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::UnknownEstimator {
                name: s.to_string(),
                valid: Estimator::ALL.map(Estimator::name).join(", "),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Symmetrization {
    Pre,
    Post,
}

/// Tunables shared by every estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorSettings {
    pub floor_dbm: f64,
    pub symmetrization: Symmetrization,
    /// `None` uses `min(n - 1, 7)`.
    pub knn: Option<usize>,
    pub lle_reg: f64,
    pub smacof: SmacofOptions,
    pub spring: SpringOptions,
    pub sdp: SdpOptions,
}

impl Default for EstimatorSettings {
    fn default() -> Self {
        Self {
            floor_dbm: -95.0,
            symmetrization: Symmetrization::Pre,
            knn: None,
            lle_reg: 1e-3,
            smacof: SmacofOptions::default(),
            spring: SpringOptions::default(),
            sdp: SdpOptions::default(),
        }
    }
}

impl EstimatorSettings {
    /// Same settings with every estimator seed set to `seed`.
    fn seeded(&self, seed: u64) -> Self {
        let mut s = *self;
        s.smacof.seed = seed;
        s.spring.seed = seed;
        s.sdp.seed = seed;
        s
    }
}

fn measurement_set(
    rssi: &RssiMatrix<f64>,
    params: &PathlossParams<f64>,
    how: Symmetrization,
) -> Result<MeasurementSet<f64>> {
    match how {
        Symmetrization::Pre => symmetrize_pre(rssi, params),
        Symmetrization::Post => symmetrize_post(rssi, params),
    }
}

fn localize(config: Result<Configuration<f64>>) -> Result<DistanceEstimateMatrix<f64>> {
    config.map(|c| c.distance_matrix())
}

/// Distance estimate for every pair from one estimator.
pub fn estimate(
    estimator: Estimator,
    rssi: &RssiMatrix<f64>,
    params: &PathlossParams<f64>,
    settings: &EstimatorSettings,
) -> Result<DistanceEstimateMatrix<f64>> {
    let floor = settings.floor_dbm;
    let sparse = || measurement_set(rssi, params, settings.symmetrization);
    let k = |n: usize| settings.knn.unwrap_or_else(|| default_k(n));
    match estimator {
        Estimator::Rss => estimate_direct(rssi, params, DirectVariant::Raw, floor),
        Estimator::RssPre => estimate_direct(rssi, params, DirectVariant::PreAveraged, floor),
        Estimator::RssPost => estimate_direct(rssi, params, DirectVariant::PostAveraged, floor),
        Estimator::MdsMetric => {
            let full = impute_noise_floor(rssi, floor)?;
            let m = measurement_set(&full, params, settings.symmetrization)?;
            localize(smacof(&m, &SmacofOptions { metric: true, ..settings.smacof }))
        }
        Estimator::MdsNonMetric => {
            let m = sparse()?;
            let c = smacof(&m, &SmacofOptions { metric: false, ..settings.smacof })?;
            localize(rescale_to_mean(&c, &m))
        }
        Estimator::Spring => localize(spring_localize(&sparse()?, &settings.spring, None)),
        Estimator::Sdp | Estimator::SdpSpring => {
            let m = sparse()?;
            let sol = solve_sdp(&SdpProblem::from_measurements(&m, Vec::new())?, &settings.sdp)?;
            if estimator == Estimator::Sdp {
                Ok(sol.config.distance_matrix())
            } else {
                localize(refine_with_spring(&sol, &m, &settings.spring))
            }
        }
        Estimator::Isomap => {
            let m = sparse()?;
            localize(isomap(&m, k(m.n())))
        }
        Estimator::Lle => {
            let m = sparse()?;
            localize(lle(&m, k(m.n()), settings.lle_reg))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExperimentInput {
    Scenario(ScenarioSpec<f64>),
    Dataset {
        label: String,
        rssi: RssiMatrix<f64>,
        truth: Configuration<f64>,
    },
}

impl ExperimentInput {
    pub fn label(&self) -> &str {
        match self {
            ExperimentInput::Scenario(s) => &s.name,
            ExperimentInput::Dataset { label, .. } => label,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub input: ExperimentInput,
    /// Overrides the scenario's parameters; datasets default to indoors.
    pub params: Option<PathlossParams<f64>>,
    pub estimators: Vec<Estimator>,
    pub repeats: usize,
    pub seed: u64,
    pub drop_rate: f64,
    pub threshold_m: f64,
    pub settings: EstimatorSettings,
    /// Extra `key = value` lines for output headers (e.g. input file paths).
    pub notes: Vec<(String, String)>,
}

impl ExperimentConfig {
    pub fn new(input: ExperimentInput, estimators: Vec<Estimator>) -> Self {
        Self {
            input,
            params: None,
            estimators,
            repeats: 1,
            seed: 0,
            drop_rate: 0.0,
            threshold_m: 2.0,
            settings: EstimatorSettings::default(),
            notes: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::InvalidArgument("repeats must be at least 1".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::InvalidArgument("no estimators selected".into()));
        }
        if !(0.0..=1.0).contains(&self.drop_rate) {
            return Err(Error::InvalidProbability(self.drop_rate));
        }
        if !(self.threshold_m > 0.0) {
            return Err(Error::InvalidArgument("threshold must be positive".into()));
        }
        if let ExperimentInput::Dataset { rssi, truth, .. } = &self.input {
            if rssi.n() != truth.n() {
                return Err(Error::DimensionMismatch {
                    expected: truth.n(),
                    got: rssi.n(),
                });
            }
        }
        if let ExperimentInput::Scenario(s) = &self.input {
            s.validate()?;
        }
        Ok(())
    }

    fn params(&self) -> PathlossParams<f64> {
        self.params.unwrap_or(match &self.input {
            ExperimentInput::Scenario(s) => s.params,
            ExperimentInput::Dataset { .. } => PathlossParams::indoors(),
        })
    }

    /// Every setting that affects the outputs, as `key = value` lines.
    pub fn describe(&self) -> Vec<(String, String)> {
        let p = self.params();
        let s = &self.settings;
        let mut out = vec![
            ("input".to_string(), self.input.label().to_string()),
            ("estimators".into(), self.estimators.iter().map(|e| e.name()).collect::<Vec<_>>().join(",")),
            ("repeats".into(), self.repeats.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("drop_rate".into(), format!("{:?}", self.drop_rate)),
            ("threshold_m".into(), format!("{:?}", self.threshold_m)),
            ("params".into(), format!("p0_dbm={:?} d0_m={:?} eta={:?} sigma_db={:?}", p.p0_dbm, p.d0_m, p.eta, p.sigma_db)),
            ("floor_dbm".into(), format!("{:?}", s.floor_dbm)),
            ("symmetrization".into(), format!("{:?}", s.symmetrization).to_lowercase()),
            ("knn".into(), s.knn.map_or("min(n-1,7)".into(), |k| k.to_string())),
            ("lle_reg".into(), format!("{:?}", s.lle_reg)),
            ("n_init".into(), s.smacof.n_init.to_string()),
            ("smacof_max_iter".into(), s.smacof.max_iter.to_string()),
            ("smacof_tol".into(), format!("{:?}", s.smacof.tol)),
            ("spring_eps".into(), format!("{:?}", s.spring.epsilon)),
            ("spring_gamma".into(), s.spring.gamma.map_or("1/n".into(), |g| format!("{g:?}"))),
            ("spring_n_init".into(), s.spring.n_init.to_string()),
            ("spring_max_iter".into(), s.spring.max_iter.map_or("50n".into(), |m| m.to_string())),
            ("spring_adaptive".into(), s.spring.adaptive_step.to_string()),
            ("spring_momentum".into(), s.spring.momentum.to_string()),
            ("sdp_tol".into(), format!("{:?}", s.sdp.tol)),
            ("sdp_max_iter".into(), s.sdp.max_iter.to_string()),
            ("sdp_pin_first".into(), s.sdp.pin_first.to_string()),
        ];
        if let ExperimentInput::Scenario(sc) = &self.input {
            out.push((
                "scenario".into(),
                format!(
                    "n_devices={} area={:?}x{:?} miss_rate={:?} max_range_m={:?} min_sample_distance_m={:?} backend={} contexts={:?}",
                    sc.n_devices,
                    sc.area.0,
                    sc.area.1,
                    sc.miss_rate,
                    sc.max_range_m,
                    sc.min_sample_distance_m,
                    match sc.backend {
                        crate::simulator::RssiBackend::Parametric(_) => "parametric",
                        crate::simulator::RssiBackend::Empirical(_) => "empirical",
                    },
                    sc.contexts,
                ),
            ));
        }
        out.extend(self.notes.iter().cloned());
        out
    }
}

/// Result of one estimator on one repeat.
#[derive(Debug, Clone, PartialEq)]
pub struct RepeatResult {
    pub n: usize,
    pub outcomes: Vec<std::result::Result<EstimatorMetrics, String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub report: MetricsReport,
    /// Indexed `[repeat]`, outcomes in estimator order.
    pub repeats: Vec<RepeatResult>,
    pub estimators: Vec<Estimator>,
}

impl ExperimentOutcome {
    /// True when some estimator failed on every repeat.
    pub fn any_total_failure(&self) -> bool {
        !self.report.failures.is_empty()
    }
}

fn run_repeat(config: &ExperimentConfig, r: usize) -> Result<RepeatResult> {
    let params = config.params();
    let (rssi, truth) = match &config.input {
        ExperimentInput::Scenario(spec) => {
            let spec = spec.with_seed(derive_seed(config.seed, r as u64, 0));
            let truth = generate_positions(&spec)?;
            let rssi = synthesize_rssi(&truth, &spec)?;
            (rssi, truth.distances)
        }
        ExperimentInput::Dataset { rssi, truth, .. } => (rssi.clone(), truth.distance_matrix()),
    };
    let rssi = if config.drop_rate > 0.0 {
        drop_random(&rssi, config.drop_rate, derive_seed(config.seed, r as u64, 1))?
    } else {
        rssi
    };
    let rssi = rssi.compensated();
    let settings = config.settings.seeded(derive_seed(config.seed, r as u64, 2));
    let outcomes = config
        .estimators
        .iter()
        .map(|&e| {
            let start = Instant::now();
            let est = estimate(e, &rssi, &params, &settings);
            let elapsed = start.elapsed().as_secs_f64();
            est.and_then(|d| EstimatorMetrics::evaluate(e.name(), &truth, &d, config.threshold_m, elapsed))
                .map_err(|err| err.to_string())
        })
        .collect();
    Ok(RepeatResult { n: truth.n(), outcomes })
}

/// Runs every repeat (concurrently) and aggregates per estimator.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    config.validate()?;
    let repeats: Vec<RepeatResult> = (0..config.repeats)
        .into_par_iter()
        .map(|r| run_repeat(config, r))
        .collect::<Result<Vec<_>>>()?;
    let mut report = MetricsReport::default();
    for (k, e) in config.estimators.iter().enumerate() {
        let ok: Vec<EstimatorMetrics> = repeats.iter().filter_map(|r| r.outcomes[k].clone().ok()).collect();
        match EstimatorMetrics::aggregate(e.name(), &ok) {
            Some(m) => report.rows.push(m),
            None => {
                let last = repeats.iter().rev().find_map(|r| r.outcomes[k].clone().err()).unwrap_or_default();
                report.failures.push((e.name().to_string(), last));
            }
        }
    }
    Ok(ExperimentOutcome {
        report,
        repeats,
        estimators: config.estimators.clone(),
    })
}

fn header(config: &ExperimentConfig, what: &str) -> String {
    let mut s = format!("# proxiloc {what}\n");
    for (k, v) in config.describe() {
        let _ = writeln!(s, "# {k} = {v}");
    }
    s.push_str(
        "# aggregation = mean of per-repeat means, max of per-repeat maxes, mean of per-repeat TPR/FPR where defined\n",
    );
    s
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

/// Upper-triangle pair order used by the per-pair samples.
fn pair_index(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |i| ((i + 1)..n).map(move |j| (i, j)))
}

/// Writes `metrics.csv`, `errors.csv`, `density_<estimator>.csv` and, when
/// requested, `timings.csv`. Runtimes only go to the last file so the others
/// are reproducible byte for byte.
pub fn write_outputs(
    outcome: &ExperimentOutcome,
    config: &ExperimentConfig,
    dir: &Path,
    timings: bool,
) -> Result<Vec<PathBuf>> {
    let label = config.input.label();
    let mut written = Vec::new();
    let mut put = |name: String, body: String| -> Result<()> {
        let p = dir.join(name);
        write_text(&p, &body)?;
        written.push(p);
        Ok(())
    };

    let mut m = header(config, "metrics");
    m.push_str("scenario,estimator,repeats_ok,repeats_failed,mean_abs_m,max_abs_m,mean_pct,max_pct,tpr,fpr,error\n");
    for (k, e) in outcome.estimators.iter().enumerate() {
        let failed = outcome.repeats.iter().filter(|r| r.outcomes[k].is_err()).count();
        let ok = outcome.repeats.len() - failed;
        match outcome.report.row(e.name()) {
            Some(r) => {
                let _ = writeln!(
                    m,
                    "{label},{},{ok},{failed},{:?},{:?},{:?},{:?},{},{},",
                    e.name(),
                    r.mean_abs,
                    r.max_abs,
                    r.mean_pct,
                    r.max_pct,
                    opt(r.tpr),
                    opt(r.fpr)
                );
            }
            None => {
                let msg = outcome
                    .report
                    .failures
                    .iter()
                    .find(|f| f.0 == e.name())
                    .map(|f| f.1.replace([',', '\n'], ";"))
                    .unwrap_or_default();
                let _ = writeln!(m, "{label},{},0,{failed},,,,,,,{msg}", e.name());
            }
        }
    }
    put("metrics.csv".into(), m)?;

    let mut errs = header(config, "per-pair errors");
    errs.push_str("scenario,estimator,repeat,i,j,abs_m,pct\n");
    for (k, e) in outcome.estimators.iter().enumerate() {
        for (r, rep) in outcome.repeats.iter().enumerate() {
            if let Ok(met) = &rep.outcomes[k] {
                for ((i, j), (a, p)) in pair_index(rep.n).zip(met.samples.iter().zip(&met.percent_samples)) {
                    let _ = writeln!(errs, "{label},{},{r},{i},{j},{a:?},{p:?}", e.name());
                }
            }
        }
    }
    put("errors.csv".into(), errs)?;

    for row in &outcome.report.rows {
        let mut d = header(config, &format!("absolute error density ({})", row.estimator));
        d.push_str("x,pdf,cdf\n");
        match error_density(&row.samples, None) {
            Ok(ErrorDensity::Grid { x, pdf, cdf, .. }) => {
                for ((x, p), c) in x.iter().zip(&pdf).zip(&cdf) {
                    let _ = writeln!(d, "{x:?},{p:?},{c:?}");
                }
            }
            Ok(ErrorDensity::PointMass(v)) => {
                let _ = writeln!(d, "# point mass at {v:?}");
                let _ = writeln!(d, "{v:?},,1.0");
            }
            Err(e) => {
                let _ = writeln!(d, "# unavailable: {e}");
            }
        }
        put(format!("density_{}.csv", row.estimator), d)?;
    }

    if timings {
        let mut t = String::from("scenario,estimator,repeat,runtime_s\n");
        for (k, e) in outcome.estimators.iter().enumerate() {
            for (r, rep) in outcome.repeats.iter().enumerate() {
                if let Ok(met) = &rep.outcomes[k] {
                    let _ = writeln!(t, "{label},{},{r},{:?}", e.name(), met.runtime_s);
                }
            }
        }
        put("timings.csv".into(), t)?;
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::scenario_preset;

    #[test]
    fn estimator_names_round_trip() {
        for e in Estimator::ALL {
            assert_eq!(e.name().parse::<Estimator>().unwrap(), e);
        }
        assert_eq!(Estimator::parse_list("rss, spring,rss").unwrap(), [Estimator::Rss, Estimator::Spring]);
        match Estimator::parse_list("rss,magic") {
            Err(Error::UnknownEstimator { name, valid }) => {
                assert_eq!(name, "magic");
                assert!(valid.contains("sdp-spring"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn every_estimator_runs_on_a_small_scenario() {
        let mut spec = scenario_preset::<f64>("table").unwrap();
        spec.n_devices = 6;
        spec.area = (3.0, 3.0);
        spec.miss_rate = 0.0;
        let mut cfg = ExperimentConfig::new(ExperimentInput::Scenario(spec), Estimator::ALL.to_vec());
        cfg.repeats = 2;
        let out = run_experiment(&cfg).unwrap();
        assert!(out.report.failures.is_empty(), "{:?}", out.report.failures);
        assert_eq!(out.report.rows.len(), 10);
        for r in &out.report.rows {
            assert!(r.max_abs >= r.mean_abs && r.max_pct >= r.mean_pct);
            assert_eq!(r.samples.len(), 2 * 15);
        }
    }

    #[test]
    fn failures_are_isolated() {
        // two devices: the embedding methods reject, the direct ones cannot fail
        let mut spec = scenario_preset::<f64>("table").unwrap();
        spec.n_devices = 2;
        let mut cfg = ExperimentConfig::new(
            ExperimentInput::Scenario(spec),
            vec![Estimator::Rss, Estimator::MdsMetric, Estimator::Isomap],
        );
        cfg.repeats = 3;
        let out = run_experiment(&cfg).unwrap();
        assert!(out.report.row("rss").is_some());
        assert!(out.any_total_failure());
        assert!(out.report.failures.iter().any(|f| f.0 == "isomap"));
    }

    #[test]
    fn outputs_are_deterministic() {
        let spec = scenario_preset::<f64>("train").unwrap();
        let mut cfg = ExperimentConfig::new(
            ExperimentInput::Scenario(spec),
            vec![Estimator::Rss, Estimator::Spring, Estimator::Sdp],
        );
        cfg.repeats = 3;
        cfg.seed = 5;
        cfg.drop_rate = 0.2;
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let fa = write_outputs(&run_experiment(&cfg).unwrap(), &cfg, a.path(), false).unwrap();
        let fb = write_outputs(&run_experiment(&cfg).unwrap(), &cfg, b.path(), false).unwrap();
        assert_eq!(fa.len(), fb.len());
        for (x, y) in fa.iter().zip(&fb) {
            assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap(), "{}", x.display());
        }
        let metrics = std::fs::read_to_string(&fa[0]).unwrap();
        assert!(metrics.starts_with("# proxiloc metrics\n# input = train\n"));
    }

    #[test]
    fn dataset_dimension_mismatch_rejected() {
        let cfg = ExperimentConfig::new(
            ExperimentInput::Dataset {
                label: "x".into(),
                rssi: RssiMatrix::empty(3),
                truth: Configuration::from_xy(&[(0.0, 0.0), (1.0, 1.0)]).unwrap(),
            },
            vec![Estimator::Rss],
        );
        assert!(matches!(run_experiment(&cfg), Err(Error::DimensionMismatch { .. })));
    }
}
