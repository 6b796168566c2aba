use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use proxiloc::experiment::{EstimatorSettings, Symmetrization};
use proxiloc::io;
use proxiloc::pathloss::fit_pathloss;
use proxiloc::simulator::{generate_positions, synthesize_rssi};
use proxiloc::{run_experiment, write_outputs, Error, Estimator, ExperimentConfig, ExperimentInput};

/// Inter-device distance estimation from RSSI matrices.
#[derive(Parser, Debug)]
#[command(name = "proxiloc", version, args_conflicts_with_subcommands = true)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run estimators on a scenario or dataset and write metrics (default).
    Run(Box<RunArgs>),
    /// Write the RSSI matrix and ground truth of one simulated scenario.
    Simulate(SimulateArgs),
    /// Fit pathloss parameters to `distance_m,rssi_dbm` samples.
    Fit(FitArgs),
}

#[derive(Args, Debug, Clone)]
struct RunArgs {
    /// Preset name or scenario TOML file.
    #[arg(long, conflicts_with_all = ["rssi", "truth"])]
    scenario: Option<String>,
    /// RSSI matrix CSV (needs --truth).
    #[arg(long, requires = "truth")]
    rssi: Option<PathBuf>,
    /// Ground-truth positions CSV (`id,x_m,y_m`).
    #[arg(long, requires = "rssi")]
    truth: Option<PathBuf>,
    /// Preset name, params TOML file, or `file.toml#block`.
    #[arg(long, conflicts_with = "fit")]
    params: Option<String>,
    /// Fit pathloss parameters from a samples CSV instead.
    #[arg(long)]
    fit: Option<PathBuf>,
    /// Comma-separated estimator list.
    #[arg(long, default_value = "rss,rss-pre,rss-post,mds-metric,mds-nonmetric,spring,sdp,sdp-spring,isomap,lle")]
    estimators: String,
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fraction of observed RSSI entries removed before estimation.
    #[arg(long, default_value_t = 0.0)]
    drop_rate: f64,
    /// RSSI imputed for missing pairs by the complete-matrix estimators.
    #[arg(long, default_value_t = -95.0, allow_hyphen_values = true)]
    floor_dbm: f64,
    /// Proximity threshold in meters.
    #[arg(long, default_value_t = 2.0)]
    threshold_m: f64,
    /// Neighbours per node for isomap and LLE (default min(n-1, 7)).
    #[arg(long)]
    knn: Option<usize>,
    /// Random initializations for MDS and the spring model.
    #[arg(long, default_value_t = 5)]
    n_init: usize,
    /// SMACOF iteration cap.
    #[arg(long, default_value_t = 300)]
    max_iter: usize,
    /// Spring convergence threshold in meters.
    #[arg(long, default_value_t = 0.1)]
    spring_eps: f64,
    /// Spring step coefficient (default 1/n).
    #[arg(long)]
    spring_gamma: Option<f64>,
    #[arg(long)]
    spring_momentum: bool,
    #[arg(long)]
    spring_adaptive: bool,
    #[arg(long, default_value_t = 1e-6)]
    sdp_tol: f64,
    #[arg(long, default_value_t = 5000)]
    sdp_max_iter: usize,
    /// LLE regularization relative to the local Gram trace.
    #[arg(long, default_value_t = 1e-3)]
    lle_reg: f64,
    /// Average RSSI before (pre) or distances after (post) conversion.
    #[arg(long, value_parser = ["pre", "post"], default_value = "pre")]
    symmetrize: String,
    /// Also write per-repeat runtimes to timings.csv.
    #[arg(long)]
    timings: bool,
    /// Output directory.
    #[arg(long, env = "PROXILOC_OUT", default_value = "proxiloc-out")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Preset name or scenario TOML file.
    #[arg(long)]
    scenario: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, env = "PROXILOC_OUT", default_value = "proxiloc-out")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Samples CSV with `distance_m,rssi_dbm` rows.
    samples: PathBuf,
    /// Block name in the emitted TOML.
    #[arg(long, default_value = "fitted")]
    name: String,
    /// Write the TOML here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn settings(a: &RunArgs) -> EstimatorSettings {
    let mut s = EstimatorSettings {
        floor_dbm: a.floor_dbm,
        symmetrization: if a.symmetrize == "post" { Symmetrization::Post } else { Symmetrization::Pre },
        knn: a.knn,
        lle_reg: a.lle_reg,
        ..Default::default()
    };
    s.smacof.n_init = a.n_init;
    s.smacof.max_iter = a.max_iter;
    s.spring.n_init = a.n_init;
    s.spring.epsilon = a.spring_eps;
    s.spring.gamma = a.spring_gamma;
    s.spring.momentum = a.spring_momentum;
    s.spring.adaptive_step = a.spring_adaptive;
    s.sdp.tol = a.sdp_tol;
    s.sdp.max_iter = a.sdp_max_iter;
    s
}

fn label(path: &Path) -> String {
    path.file_stem().map_or_else(|| "dataset".into(), |s| s.to_string_lossy().into_owned())
}

fn build_config(a: &RunArgs) -> Result<ExperimentConfig, Error> {
    let mut notes = Vec::new();
    let input = match (&a.scenario, &a.rssi, &a.truth) {
        (Some(s), _, _) => ExperimentInput::Scenario(io::resolve_scenario(s)?),
        (None, Some(r), Some(t)) => {
            let rssi = io::read_rssi(r)?;
            let truth = io::read_truth(t)?;
            if rssi.n() != truth.positions.n() {
                return Err(Error::InvalidArgument(format!(
                    "{} has {} devices but {} has {}",
                    r.display(),
                    rssi.n(),
                    t.display(),
                    truth.positions.n()
                )));
            }
            notes.push(("rssi_file".into(), r.display().to_string()));
            notes.push(("truth_file".into(), t.display().to_string()));
            ExperimentInput::Dataset {
                label: label(r),
                rssi,
                truth: truth.positions,
            }
        }
        _ => return Err(Error::InvalidArgument("give --scenario or both --rssi and --truth".into())),
    };
    let params = match (&a.params, &a.fit) {
        (Some(p), _) => Some(io::resolve_params(p)?),
        (None, Some(f)) => {
            notes.push(("fit_file".into(), f.display().to_string()));
            Some(fit_pathloss(&io::read_samples(f)?)?)
        }
        (None, None) => None,
    };
    let mut cfg = ExperimentConfig::new(input, Estimator::parse_list(&a.estimators)?);
    cfg.params = params;
    cfg.repeats = a.repeats;
    cfg.seed = a.seed;
    cfg.drop_rate = a.drop_rate;
    cfg.threshold_m = a.threshold_m;
    cfg.settings = settings(a);
    cfg.notes = notes;
    Ok(cfg)
}

fn run(a: &RunArgs) -> Result<ExitCode, Error> {
    let cfg = build_config(a)?;
    let outcome = run_experiment(&cfg)?;
    let files = write_outputs(&outcome, &cfg, &a.out, a.timings)?;
    for row in &outcome.report.rows {
        println!(
            "{:<14} mean {:>8.3} m  max {:>8.3} m  mean {:>8.2} %  tpr {}  fpr {}",
            row.estimator,
            row.mean_abs,
            row.max_abs,
            row.mean_pct,
            row.tpr.map_or("-".into(), |v| format!("{v:.3}")),
            row.fpr.map_or("-".into(), |v| format!("{v:.3}")),
        );
    }
    for (name, err) in &outcome.report.failures {
        eprintln!("{name}: failed on every repeat: {err}");
    }
    eprintln!("wrote {} files to {}", files.len(), a.out.display());
    Ok(if outcome.any_total_failure() { ExitCode::FAILURE } else { ExitCode::SUCCESS })
}

fn simulate(a: &SimulateArgs) -> Result<ExitCode, Error> {
    let spec = io::resolve_scenario(&a.scenario)?.with_seed(a.seed);
    let truth = generate_positions(&spec)?;
    let rssi = synthesize_rssi(&truth, &spec)?;
    let rssi_path = a.out.join(format!("{}_rssi.csv", spec.name));
    let truth_path = a.out.join(format!("{}_truth.csv", spec.name));
    io::write_text(&rssi_path, &io::rssi_csv(&rssi))?;
    io::write_text(&truth_path, &io::truth_csv(&truth.positions))?;
    eprintln!("wrote {} and {}", rssi_path.display(), truth_path.display());
    Ok(ExitCode::SUCCESS)
}

fn fit(a: &FitArgs) -> Result<ExitCode, Error> {
    let params = fit_pathloss(&io::read_samples(&a.samples)?)?;
    let text = io::params_toml(&BTreeMap::from([(a.name.clone(), params)]));
    match &a.out {
        Some(p) => io::write_text(p, &text)?,
        None => print!("{text}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        None => run(&cli.run),
        Some(Command::Run(a)) => run(a),
        Some(Command::Simulate(a)) => simulate(a),
        Some(Command::Fit(a)) => fit(a),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::from(2)
    })
}
