//! Multidimensional scaling: classical (PCoA) and SMACOF stress majorization
//! in metric and non-metric flavours.

use nalgebra::{DMatrix, SymmetricEigen, Vector2};
use rayon::prelude::*;

use crate::error::{Error, Result};
pub use crate::geometry::Configuration;
use crate::geometry::{random_square, restart_rng};
use crate::measurements::{DistanceEstimateMatrix, MeasurementSet};
use crate::scalar::Real;

/// Normalized stress of a configuration against the measured distances:
/// `sqrt(sum (d - dhat)^2 / sum dhat^2)` over measured pairs.
pub fn compute_stress<T: Real>(config: &Configuration<T>, measurements: &MeasurementSet<T>) -> Result<T> {
    config.check_matches(measurements)?;
    if measurements.is_empty() {
        return Err(Error::InvalidArgument("stress needs at least one measurement".into()));
    }
    let (mut num, mut den) = (T::zero(), T::zero());
    for e in measurements.edges() {
        let dh = config.distance(e.i, e.j);
        num += (e.d - dh) * (e.d - dh);
        den += dh * dh;
    }
    if den <= T::zero() {
        return Err(Error::Degenerate("all measured pairs coincide".into()));
    }
    Ok((num / den).sqrt())
}

/// Classical MDS into the plane from a complete dissimilarity matrix.
pub fn classical_mds<T: Real>(dissimilarities: &DistanceEstimateMatrix<T>) -> Result<Configuration<T>> {
    let n = dissimilarities.n();
    if n < 3 {
        return Err(Error::InvalidArgument(format!(
            "classical MDS needs at least 3 points, got {n}"
        )));
    }
    let half = T::c(-0.5);
    let sq = DMatrix::from_fn(n, n, |i, j| {
        let d = dissimilarities.get(i, j);
        d * d
    });
    let row_means: Vec<T> = (0..n).map(|i| sq.row(i).sum() / T::from_count(n)).collect();
    let grand = row_means.iter().fold(T::zero(), |a, &b| a + b) / T::from_count(n);
    let b = DMatrix::from_fn(n, n, |i, j| half * (sq[(i, j)] - row_means[i] - row_means[j] + grand));
    let eig = SymmetricEigen::new(b);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let scale: Vec<T> = order[..2]
        .iter()
        .map(|&k| eig.eigenvalues[k].max(T::zero()).sqrt())
        .collect();
    let points = (0..n)
        .map(|i| {
            Vector2::new(
                eig.eigenvectors[(i, order[0])] * scale[0],
                eig.eigenvectors[(i, order[1])] * scale[1],
            )
        })
        .collect();
    Configuration::new(points)
}

/// Weighted least-squares projection onto non-decreasing sequences
/// (pool-adjacent-violators).
pub fn isotonic_regression<T: Real>(values: &[T], weights: &[T]) -> Result<Vec<T>> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("isotonic regression of an empty sequence".into()));
    }
    if values.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            expected: values.len(),
            got: weights.len(),
        });
    }
    if weights.iter().any(|&w| !(w > T::zero()) || !w.is_finite()) {
        return Err(Error::InvalidArgument("isotonic weights must be positive".into()));
    }
    // blocks of (weighted mean, total weight, length)
    let mut blocks: Vec<(T, T, usize)> = Vec::with_capacity(values.len());
    for (&v, &w) in values.iter().zip(weights) {
        blocks.push((v, w, 1));
        while blocks.len() > 1 {
            let (m1, w1, l1) = blocks[blocks.len() - 1];
            let (m0, w0, l0) = blocks[blocks.len() - 2];
            if m0 <= m1 {
                break;
            }
            blocks.pop();
            let wt = w0 + w1;
            *blocks.last_mut().unwrap() = ((m0 * w0 + m1 * w1) / wt, wt, l0 + l1);
        }
    }
    Ok(blocks
        .into_iter()
        .flat_map(|(m, _, l)| std::iter::repeat_n(m, l))
        .collect())
}

/// Uniformly scales a configuration so its mean distance over the measured
/// pairs equals the mean measured distance.
pub fn rescale_to_mean<T: Real>(
    config: &Configuration<T>,
    measurements: &MeasurementSet<T>,
) -> Result<Configuration<T>> {
    config.check_matches(measurements)?;
    let measured = measurements
        .mean_distance()
        .ok_or_else(|| Error::InvalidArgument("rescale needs at least one measurement".into()))?;
    let embedded = crate::scalar::mean(measurements.edges().iter().map(|e| config.distance(e.i, e.j)))
        .unwrap_or_else(T::zero);
    if embedded <= T::zero() {
        return Err(Error::Degenerate("all measured pairs embed at zero distance".into()));
    }
    Ok(config.scaled(measured / embedded))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmacofOptions {
    /// Metric (identity disparities) or non-metric (isotonic disparities).
    pub metric: bool,
    pub n_init: usize,
    pub max_iter: usize,
    /// Stop once the relative raw-stress decrease falls below this.
    pub tol: f64,
    pub seed: u64,
}

impl Default for SmacofOptions {
    fn default() -> Self {
        Self {
            metric: true,
            n_init: 5,
            max_iter: 300,
            tol: 1e-6,
            seed: 0,
        }
    }
}

impl SmacofOptions {
    fn validate(&self) -> Result<()> {
        if self.n_init == 0 || self.max_iter == 0 || !(self.tol > 0.0) {
            return Err(Error::InvalidArgument(
                "SMACOF needs n_init >= 1, max_iter >= 1 and tol > 0".into(),
            ));
        }
        Ok(())
    }
}

/// One SMACOF initialization.
#[derive(Debug, Clone)]
pub struct SmacofRun<T: Real> {
    pub config: Configuration<T>,
    /// Raw stress `sum (||x_i - x_j|| - disparity_ij)^2` after each Guttman step.
    pub stress_history: Vec<T>,
    /// Selection score (normalized stress against the measurements).
    pub score: T,
}

#[derive(Debug, Clone)]
pub struct SmacofResult<T: Real> {
    pub best: usize,
    pub runs: Vec<SmacofRun<T>>,
}

impl<T: Real> SmacofResult<T> {
    pub fn config(&self) -> &Configuration<T> {
        &self.runs[self.best].config
    }
}

/// SMACOF stress majorization into the plane; returns the best of
/// `options.n_init` random starts.
///
/// Non-metric output has arbitrary scale; apply [`rescale_to_mean`].
pub fn smacof<T: Real>(measurements: &MeasurementSet<T>, options: &SmacofOptions) -> Result<Configuration<T>> {
    smacof_detailed(measurements, options).map(|r| r.config().clone())
}

pub fn smacof_detailed<T: Real>(
    measurements: &MeasurementSet<T>,
    options: &SmacofOptions,
) -> Result<SmacofResult<T>> {
    options.validate()?;
    let n = measurements.n();
    if measurements.is_empty() || n < 2 {
        return Err(Error::InvalidArgument("SMACOF needs at least one measured pair".into()));
    }
    if options.metric && !measurements.is_complete() {
        return Err(Error::Incomplete(format!(
            "metric MDS needs all {} pairs, got {}; impute the noise floor first",
            n * (n - 1) / 2,
            measurements.len()
        )));
    }
    let comps = measurements.components();
    if comps.len() > 1 {
        return Err(Error::Disconnected { components: comps });
    }
    let vplus = guttman_pseudo_inverse(measurements)?;
    let side = measurements.mean_distance().unwrap() * T::c(2.0);

    let runs: Vec<Result<SmacofRun<T>>> = (0..options.n_init)
        .into_par_iter()
        .map(|k| {
            let mut rng = restart_rng(options.seed, k);
            let init = random_square(n, side, &mut rng);
            let (config, stress_history) = smacof_single(measurements, &vplus, init, options)?;
            let scored = if options.metric {
                config.clone()
            } else {
                rescale_to_mean(&config, measurements)?
            };
            let score = compute_stress(&scored, measurements).unwrap_or_else(|_| T::c(f64::INFINITY));
            Ok(SmacofRun {
                config,
                stress_history,
                score,
            })
        })
        .collect();
    let runs: Vec<SmacofRun<T>> = runs.into_iter().collect::<Result<_>>()?;
    let best = (0..runs.len())
        .min_by(|&a, &b| {
            runs[a]
                .score
                .partial_cmp(&runs[b].score)
                .unwrap_or(std::cmp::Ordering::Equal)
        })
        .unwrap();
    Ok(SmacofResult { best, runs })
}

/// Moore-Penrose inverse of `V = sum_{(i,j) measured} (e_i - e_j)(e_i - e_j)^T`.
fn guttman_pseudo_inverse<T: Real>(measurements: &MeasurementSet<T>) -> Result<DMatrix<T>> {
    let n = measurements.n();
    let inv_n = T::one() / T::from_count(n);
    let mut v = DMatrix::from_element(n, n, inv_n);
    for e in measurements.edges() {
        v[(e.i, e.i)] += T::one();
        v[(e.j, e.j)] += T::one();
        v[(e.i, e.j)] -= T::one();
        v[(e.j, e.i)] -= T::one();
    }
    let inv = v
        .try_inverse()
        .ok_or_else(|| Error::Singular("Guttman transform matrix".into()))?;
    Ok(inv.map(|x| x - inv_n))
}

fn smacof_single<T: Real>(
    measurements: &MeasurementSet<T>,
    vplus: &DMatrix<T>,
    init: Configuration<T>,
    options: &SmacofOptions,
) -> Result<(Configuration<T>, Vec<T>)> {
    let n = measurements.n();
    let edges = measurements.edges();
    let mut x = DMatrix::from_fn(n, 2, |i, c| init.points()[i][c]);
    let target: Vec<T> = edges.iter().map(|e| e.d).collect();
    // measured order, for the monotone regression
    let mut order: Vec<usize> = (0..edges.len()).collect();
    order.sort_by(|&a, &b| target[a].partial_cmp(&target[b]).unwrap());
    let unit = vec![T::one(); edges.len()];

    let dist = |x: &DMatrix<T>| -> Vec<T> {
        edges
            .iter()
            .map(|e| {
                let dx = x[(e.i, 0)] - x[(e.j, 0)];
                let dy = x[(e.i, 1)] - x[(e.j, 1)];
                (dx * dx + dy * dy).sqrt()
            })
            .collect()
    };
    let raw_stress = |dis: &[T], disp: &[T]| -> T {
        dis.iter()
            .zip(disp)
            .fold(T::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b))
    };
    let disparities = |dis: &[T]| -> Result<Vec<T>> {
        if options.metric {
            return Ok(target.clone());
        }
        let sorted: Vec<T> = order.iter().map(|&k| dis[k]).collect();
        let fitted = isotonic_regression(&sorted, &unit)?;
        let mut out = vec![T::zero(); dis.len()];
        for (pos, &k) in order.iter().enumerate() {
            out[k] = fitted[pos];
        }
        let ss_dis = dis.iter().fold(T::zero(), |a, &b| a + b * b);
        let ss_out = out.iter().fold(T::zero(), |a, &b| a + b * b);
        if ss_out > T::zero() {
            let s = (ss_dis / ss_out).sqrt();
            out.iter_mut().for_each(|v| *v *= s);
        }
        Ok(out)
    };

    let tol = T::c(options.tol);
    let mut history = Vec::new();
    let mut dis = dist(&x);
    let mut disp = disparities(&dis)?;
    let mut prev = raw_stress(&dis, &disp);
    for _ in 0..options.max_iter {
        // Guttman transform: X <- V+ B(X) X
        let mut b = DMatrix::zeros(n, n);
        for (k, e) in edges.iter().enumerate() {
            if dis[k] > T::zero() {
                let v = -disp[k] / dis[k];
                b[(e.i, e.j)] = v;
                b[(e.j, e.i)] = v;
                b[(e.i, e.i)] -= v;
                b[(e.j, e.j)] -= v;
            }
        }
        x = vplus * (b * &x);
        dis = dist(&x);
        let stress = raw_stress(&dis, &disp);
        history.push(stress);
        disp = disparities(&dis)?;
        let converged = prev - stress <= tol * prev || stress <= T::c(1e-30);
        prev = stress;
        if converged {
            break;
        }
    }
    let config = Configuration::new((0..n).map(|i| Vector2::new(x[(i, 0)], x[(i, 1)])).collect())?;
    Ok((config, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurements::Edge;
    use approx::assert_relative_eq;

    fn exact_set(points: &[(f64, f64)]) -> MeasurementSet<f64> {
        let c = Configuration::<f64>::from_xy(points).unwrap();
        MeasurementSet::from_exact(&c.distance_matrix(), 0.5).unwrap()
    }

    /// Cyclic Jacobi eigenvalue sweep: slow, obviously correct.
    #[allow(clippy::needless_range_loop)]
    fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
        let n = a.len();
        let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| (i == j) as u8 as f64).collect()).collect();
        for _ in 0..100 {
            for p in 0..n {
                for q in (p + 1)..n {
                    if a[p][q].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let (akp, akq) = (a[k][p], a[k][q]);
                        a[k][p] = c * akp - s * akq;
                        a[k][q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let (apk, aqk) = (a[p][k], a[q][k]);
                        a[p][k] = c * apk - s * aqk;
                        a[q][k] = s * apk + c * aqk;
                    }
                    for k in 0..n {
                        let (vkp, vkq) = (v[k][p], v[k][q]);
                        v[k][p] = c * vkp - s * vkq;
                        v[k][q] = s * vkp + c * vkq;
                    }
                }
            }
        }
        ((0..n).map(|i| a[i][i]).collect(), v)
    }

    #[test]
    fn stress_hand_values() {
        let c = Configuration::<f64>::from_xy(&[(0.0, 0.0), (2.0, 0.0)]).unwrap();
        let m = MeasurementSet::<f64>::new(2, [Edge { i: 0, j: 1, d: 1.0, d_min: 0.5, d_max: 1.5 }]).unwrap();
        assert_relative_eq!(compute_stress(&c, &m).unwrap(), 0.5, epsilon = 1e-15);
        let exact = exact_set(&[(0.0, 0.0), (3.0, 0.0), (0.0, 4.0)]);
        let c = Configuration::<f64>::from_xy(&[(0.0, 0.0), (3.0, 0.0), (0.0, 4.0)]).unwrap();
        assert!(compute_stress(&c, &exact).unwrap() < 1e-15);
        let moved = c.transformed(0.7, Vector2::new(5.0, -2.0));
        assert!(compute_stress(&moved, &exact).unwrap() < 1e-12);
        let coincident = Configuration::<f64>::from_xy(&[(1.0, 1.0); 3]).unwrap();
        assert!(compute_stress(&coincident, &exact).is_err());
    }

    #[test]
    fn classical_mds_three_four_five() {
        let pts: Vec<(f64, f64)> = vec![(0.0, 0.0), (3.0, 0.0), (0.0, 4.0)];
        let d = Configuration::<f64>::from_xy(&pts).unwrap().distance_matrix();
        let out = classical_mds(&d).unwrap().distance_matrix();
        for (i, j, v) in d.pairs() {
            assert!((out.get(i, j) - v).abs() < 1e-6);
        }
        // oracle: top-2 eigenvalues of the double-centred matrix via Jacobi
        let n = 3;
        let sq: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| d.get(i, j).powi(2)).collect()).collect();
        let rm: Vec<f64> = sq.iter().map(|r| r.iter().sum::<f64>() / 3.0).collect();
        let g = rm.iter().sum::<f64>() / 3.0;
        let b: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| -0.5 * (sq[i][j] - rm[i] - rm[j] + g)).collect())
            .collect();
        let (mut vals, _) = jacobi_eigen(b);
        vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let c = classical_mds(&d).unwrap();
        let spread: f64 = c.points().iter().map(|p| p.norm_squared()).sum();
        assert_relative_eq!(spread, vals[0] + vals[1], max_relative = 1e-9);
    }

    #[test]
    fn classical_mds_degenerate_inputs() {
        let zero = DistanceEstimateMatrix::<f64>::zeros(4);
        let c = classical_mds(&zero).unwrap();
        assert!(c.points().iter().all(|p| p.norm() < 1e-12));
        assert!(classical_mds(&DistanceEstimateMatrix::<f64>::zeros(2)).is_err());
    }

    #[test]
    fn classical_mds_relabeling_preserves_distances() {
        let pts: Vec<(f64, f64)> = vec![(0.0, 0.0), (2.0, 1.0), (-1.0, 3.0), (4.0, -2.0), (0.5, 0.5)];
        let perm = [3, 0, 4, 1, 2];
        let permuted: Vec<(f64, f64)> = perm.iter().map(|&k| pts[k]).collect();
        let a = classical_mds(&Configuration::<f64>::from_xy(&pts).unwrap().distance_matrix()).unwrap();
        let b = classical_mds(&Configuration::<f64>::from_xy(&permuted).unwrap().distance_matrix()).unwrap();
        let (da, db) = (a.distance_matrix(), b.distance_matrix());
        for i in 0..5 {
            for j in 0..5 {
                assert!((db.get(i, j) - da.get(perm[i], perm[j])).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn isotonic_hand_values() {
        let w = [1.0; 3];
        assert_eq!(isotonic_regression(&[1.0, 3.0, 2.0], &w).unwrap(), vec![1.0, 2.5, 2.5]);
        assert_eq!(isotonic_regression(&[3.0, 1.0, 2.0], &w).unwrap(), vec![2.0, 2.0, 2.0]);
        assert_eq!(isotonic_regression(&[1.0, 2.0, 3.0], &w).unwrap(), vec![1.0, 2.0, 3.0]);
        let weighted = isotonic_regression(&[2.0, 1.0], &[3.0, 1.0]).unwrap();
        assert_eq!(weighted, vec![1.75, 1.75]);
        assert!(isotonic_regression::<f64>(&[], &[]).is_err());
        assert!(isotonic_regression(&[1.0], &[0.0]).is_err());
        assert!(isotonic_regression(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn rescale_identities() {
        let m = exact_set(&[(0.0, 0.0), (1.0, 0.0), (0.0, 2.0)]);
        let c = Configuration::<f64>::from_xy(&[(0.0, 0.0), (1.0, 0.0), (0.0, 2.0)]).unwrap();
        assert_eq!(rescale_to_mean(&c, &m).unwrap(), c.scaled(1.0));
        let half = c.scaled(0.5);
        let back = rescale_to_mean(&half, &m).unwrap();
        for (a, b) in back.points().iter().zip(c.points()) {
            assert!((a - b).norm() < 1e-12);
        }
        let zero = Configuration::<f64>::from_xy(&[(0.0, 0.0); 3]).unwrap();
        assert!(rescale_to_mean(&zero, &m).is_err());
    }

    #[test]
    fn smacof_two_nodes() {
        let m = MeasurementSet::<f64>::new(2, [Edge { i: 0, j: 1, d: 2.0, d_min: 1.0, d_max: 3.0 }]).unwrap();
        let c = smacof(&m, &SmacofOptions::default()).unwrap();
        assert!((c.distance(0, 1) - 2.0).abs() < 1e-6);
    }

    #[test]
    fn smacof_equilateral() {
        let h = 3f64.sqrt() / 2.0;
        let m = exact_set(&[(0.0, 0.0), (1.0, 0.0), (0.5, h)]);
        let opts = SmacofOptions { tol: 1e-12, max_iter: 1000, ..Default::default() };
        let c = smacof(&m, &opts).unwrap();
        assert!(compute_stress(&c, &m).unwrap() < 1e-6);
        for e in m.edges() {
            assert!((c.distance(e.i, e.j) - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn metric_requires_complete_input() {
        let m = MeasurementSet::<f64>::new(
            3,
            [
                Edge { i: 0, j: 1, d: 1.0, d_min: 0.5, d_max: 1.5 },
                Edge { i: 1, j: 2, d: 1.0, d_min: 0.5, d_max: 1.5 },
            ],
        )
        .unwrap();
        assert!(matches!(smacof(&m, &SmacofOptions::default()), Err(Error::Incomplete(_))));
        let nm = SmacofOptions { metric: false, ..Default::default() };
        assert!(smacof(&m, &nm).is_ok());
    }

    #[test]
    fn nonmetric_preserves_order_on_path() {
        let m = exact_set(&[(0.0, 0.0), (1.0, 0.0), (3.0, 0.0)]);
        let opts = SmacofOptions { metric: false, ..Default::default() };
        let c = rescale_to_mean(&smacof(&m, &opts).unwrap(), &m).unwrap();
        let mut pairs: Vec<(f64, f64)> = m.edges().iter().map(|e| (e.d, c.distance(e.i, e.j))).collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        assert!(pairs.windows(2).all(|w| w[0].1 < w[1].1), "{pairs:?}");
    }

    #[test]
    fn best_run_has_lowest_score() {
        let m = exact_set(&[(0.0, 0.0), (4.0, 1.0), (2.0, 5.0), (-1.0, 3.0), (3.0, 3.0)]);
        let r = smacof_detailed(&m, &SmacofOptions { seed: 3, ..Default::default() }).unwrap();
        assert_eq!(r.runs.len(), 5);
        for run in &r.runs {
            assert!(r.runs[r.best].score <= run.score);
            assert!(run.stress_history.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12) + 1e-15));
        }
    }

    #[test]
    fn invalid_options_rejected() {
        let m = exact_set(&[(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]);
        for opts in [
            SmacofOptions { n_init: 0, ..Default::default() },
            SmacofOptions { max_iter: 0, ..Default::default() },
            SmacofOptions { tol: 0.0, ..Default::default() },
        ] {
            assert!(smacof(&m, &opts).is_err());
        }
    }
}
