//! Force-directed spring localization.
//!
//! Every measured pair is a spring of rest length `d_ij` whose stiffness is
//! inversely proportional to the width of its uncertainty interval, so tight
//! (usually short) measurements dominate. Nodes are relaxed one at a time in
//! index order until no node moves more than `epsilon` in a sweep.

use nalgebra::Vector2;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{random_square, restart_rng, splitmix64, Configuration};
use crate::mds::compute_stress;
use crate::measurements::{Edge, MeasurementSet};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpringOptions {
    /// Convergence threshold on per-node displacement (meters).
    pub epsilon: f64,
    /// Step coefficient; `None` uses `1 / n`.
    pub gamma: Option<f64>,
    pub n_init: usize,
    /// Sweep cap; `None` uses `50 n`.
    pub max_iter: Option<usize>,
    /// Shrink `gamma` by 1% after every sweep.
    pub adaptive_step: bool,
    /// Step along `F(t) + F(t-1)` instead of `F(t)`.
    pub momentum: bool,
    pub seed: u64,
}

impl Default for SpringOptions {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            gamma: None,
            n_init: 5,
            max_iter: None,
            adaptive_step: false,
            momentum: false,
            seed: 0,
        }
    }
}

impl SpringOptions {
    fn validate(&self) -> Result<()> {
        let gamma_ok = self.gamma.is_none_or(|g| g > 0.0 && g.is_finite());
        if !(self.epsilon > 0.0) || !gamma_ok || self.n_init == 0 || self.max_iter == Some(0) {
            return Err(Error::InvalidArgument(
                "spring model needs epsilon > 0, gamma > 0, n_init >= 1, max_iter >= 1".into(),
            ));
        }
        Ok(())
    }
}

const ADAPTIVE_DECAY: f64 = 0.99;
const COINCIDENT_OFFSET: f64 = 1e-6;
const DIVERGENCE_FACTOR: f64 = 1e6;

/// Unit vector for separating coincident nodes `lo < hi`, fixed per seed.
fn separation_direction<T: Real>(lo: usize, hi: usize, seed: u64) -> Vector2<T> {
    let h = splitmix64(seed ^ splitmix64((lo as u64) << 32 | hi as u64));
    let angle = (h >> 11) as f64 / (1u64 << 53) as f64 * std::f64::consts::TAU;
    Vector2::new(T::c(angle.cos()), T::c(angle.sin()))
}

/// Force exerted on node `edge.i`-or-`edge.j` at `x_i` by its partner at `x_j`:
/// `(||x_i - x_j|| - d) / (d_max - d_min)` along the unit vector towards `x_j`.
///
/// `i`/`j` identify which endpoint `x_i` belongs to; coincident points are
/// separated by a tiny seeded offset so the direction is defined.
pub fn spring_force<T: Real>(
    x_i: &Vector2<T>,
    x_j: &Vector2<T>,
    i: usize,
    j: usize,
    edge: &Edge<T>,
    seed: u64,
) -> Result<Vector2<T>> {
    let width = edge.width();
    if !(width > T::zero()) {
        return Err(Error::InvalidMeasurement {
            i: edge.i,
            j: edge.j,
            reason: "spring force needs d_max > d_min".into(),
        });
    }
    let delta = x_j - x_i;
    let dist = delta.norm();
    let (dist, unit) = if dist > T::zero() {
        (dist, delta / dist)
    } else {
        let u = separation_direction::<T>(i.min(j), i.max(j), seed);
        let u = if i < j { u } else { -u };
        (T::c(COINCIDENT_OFFSET), u)
    };
    Ok(unit * ((dist - edge.d) / width))
}

/// Outcome of one spring relaxation.
#[derive(Debug, Clone)]
pub struct SpringRun<T: Real> {
    pub config: Configuration<T>,
    pub iterations: usize,
    pub converged: bool,
    /// Largest per-node displacement in the final sweep.
    pub last_displacement: T,
    pub stress: T,
}

#[derive(Debug, Clone)]
pub struct SpringResult<T: Real> {
    pub best: usize,
    /// One entry per start; `None` marks a start aborted for divergence.
    pub runs: Vec<Option<SpringRun<T>>>,
}

impl<T: Real> SpringResult<T> {
    pub fn best_run(&self) -> &SpringRun<T> {
        self.runs[self.best].as_ref().expect("best run exists")
    }
}

/// Spring-model localization; with `init` a single run starts from it,
/// otherwise the lowest-stress of `n_init` random starts is returned.
pub fn spring_localize<T: Real>(
    measurements: &MeasurementSet<T>,
    options: &SpringOptions,
    init: Option<&Configuration<T>>,
) -> Result<Configuration<T>> {
    spring_localize_detailed(measurements, options, init).map(|r| r.best_run().config.clone())
}

pub fn spring_localize_detailed<T: Real>(
    measurements: &MeasurementSet<T>,
    options: &SpringOptions,
    init: Option<&Configuration<T>>,
) -> Result<SpringResult<T>> {
    options.validate()?;
    let n = measurements.n();
    let adjacency = measurements.adjacency();
    if let Some(isolated) = adjacency.iter().position(|a| a.is_empty()) {
        return Err(Error::IsolatedNode(isolated));
    }
    if let Some(e) = measurements.edges().iter().find(|e| !(e.width() > T::zero())) {
        return Err(Error::InvalidMeasurement {
            i: e.i,
            j: e.j,
            reason: "spring model needs d_max > d_min".into(),
        });
    }
    if let Some(c) = init {
        c.check_matches(measurements)?;
    }
    let mean_d = measurements.mean_distance().unwrap();
    let starts: Vec<Configuration<T>> = match init {
        Some(c) => vec![c.clone()],
        None => (0..options.n_init)
            .map(|k| random_square(n, mean_d * T::c(2.0), &mut restart_rng(options.seed, k)))
            .collect(),
    };
    let runs: Vec<Option<SpringRun<T>>> = starts
        .into_par_iter()
        .map(|start| relax(measurements, &adjacency, start, options, mean_d))
        .collect::<Result<Vec<_>>>()?;

    let mut best: Option<usize> = None;
    for (k, run) in runs.iter().enumerate() {
        if let Some(r) = run {
            if best.is_none_or(|b| r.stress < runs[b].as_ref().unwrap().stress) {
                best = Some(k);
            }
        }
    }
    let best = best.ok_or(Error::Diverged {
        iteration: options.max_iter.unwrap_or(50 * n),
    })?;
    Ok(SpringResult { best, runs })
}

/// One Gauss-Seidel relaxation; `Ok(None)` when the run diverges.
fn relax<T: Real>(
    measurements: &MeasurementSet<T>,
    adjacency: &[Vec<(usize, usize)>],
    start: Configuration<T>,
    options: &SpringOptions,
    mean_d: T,
) -> Result<Option<SpringRun<T>>> {
    let n = measurements.n();
    let edges = measurements.edges();
    let mut gamma = T::c(options.gamma.unwrap_or(1.0 / n as f64));
    let max_iter = options.max_iter.unwrap_or(50 * n);
    let eps = T::c(options.epsilon);
    let limit = T::c(DIVERGENCE_FACTOR) * mean_d;
    let mut x = start.into_points();
    let mut prev_force = vec![Vector2::zeros(); n];
    let mut iterations = 0;
    let mut converged = false;
    let mut last_displacement = T::zero();

    for t in 0..max_iter {
        iterations = t + 1;
        last_displacement = T::zero();
        for i in 0..n {
            let mut force = Vector2::zeros();
            for &(j, k) in &adjacency[i] {
                force += spring_force(&x[i], &x[j], i, j, &edges[k], options.seed)?;
            }
            let step = if options.momentum {
                (force + prev_force[i]) * gamma
            } else {
                force * gamma
            };
            prev_force[i] = force;
            x[i] += step;
            last_displacement = last_displacement.max(step.norm());
            if !(x[i].x.abs() <= limit && x[i].y.abs() <= limit) {
                return Ok(None);
            }
        }
        if last_displacement <= eps {
            converged = true;
            break;
        }
        if options.adaptive_step {
            gamma *= T::c(ADAPTIVE_DECAY);
        }
    }
    let config = Configuration::new(x)?;
    let stress = compute_stress(&config, measurements).unwrap_or_else(|_| T::c(f64::INFINITY));
    Ok(Some(SpringRun {
        config,
        iterations,
        converged,
        last_displacement,
        stress,
    }))
}
