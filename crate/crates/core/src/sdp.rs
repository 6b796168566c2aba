//! Semidefinite relaxation of maximum-likelihood network localization.
//!
//! The non-convex objective
//!
//! ```text
//! sum_{(i,j) in N} w_ij | ||x_i - x_j||^2 - d_ij^2 |  +  sum_{(i,k) in M} w_ik | ||x_i - a_k||^2 - d_ik^2 |
//! ```
//!
//! is relaxed by lifting positions into `Z = [[I2, X], [X^T, Y]] >= 0` so every
//! squared distance becomes a linear functional of `Z`. The relaxed problem is
//! solved with a two-block ADMM: block one is the PSD projection together with
//! soft-thresholding of the L1 slacks, block two is a least-squares step onto
//! the affine residual constraints (whose Hessian is factored once).

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen, Vector2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{restart_rng, Configuration};
use crate::measurements::{components, MeasurementSet};
use crate::scalar::Real;
use crate::spring::{spring_localize, SpringOptions};

/// Node-node term of the objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdpEdge<T> {
    pub i: usize,
    pub j: usize,
    pub d: T,
    /// `1 / sigma_ij^2`.
    pub weight: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpProblem<T: Real> {
    n: usize,
    edges: Vec<SdpEdge<T>>,
    anchors: Vec<(usize, Vector2<T>)>,
}

impl<T: Real> SdpProblem<T> {
    pub fn new(n: usize, edges: Vec<SdpEdge<T>>, anchors: Vec<(usize, Vector2<T>)>) -> Result<Self> {
        for e in &edges {
            if e.i == e.j || e.i >= n || e.j >= n {
                return Err(Error::InvalidMeasurement {
                    i: e.i,
                    j: e.j,
                    reason: format!("pair out of range for n = {n}"),
                });
            }
            if !(e.weight > T::zero()) || !e.weight.is_finite() || !(e.d > T::zero()) || !e.d.is_finite() {
                return Err(Error::InvalidMeasurement {
                    i: e.i,
                    j: e.j,
                    reason: "SDP edges need finite positive distance and weight".into(),
                });
            }
        }
        let mut seen = vec![false; n];
        for (k, a) in &anchors {
            if *k >= n || seen[*k] {
                return Err(Error::InvalidArgument(format!("anchor index {k} invalid or repeated")));
            }
            if !a.x.is_finite() || !a.y.is_finite() {
                return Err(Error::NonFinite("anchor position"));
            }
            seen[*k] = true;
        }
        Ok(Self { n, edges, anchors })
    }

    /// Weights `1 / sigma^2` with `sigma = (d_max - d_min) / 2`.
    pub fn from_measurements(measurements: &MeasurementSet<T>, anchors: Vec<(usize, Vector2<T>)>) -> Result<Self> {
        let two = T::c(2.0);
        let edges = measurements
            .edges()
            .iter()
            .map(|e| {
                let sigma = e.width() / two;
                SdpEdge {
                    i: e.i,
                    j: e.j,
                    d: e.d,
                    weight: T::one() / (sigma * sigma),
                }
            })
            .collect();
        Self::new(measurements.n(), edges, anchors)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[SdpEdge<T>] {
        &self.edges
    }

    pub fn anchors(&self) -> &[(usize, Vector2<T>)] {
        &self.anchors
    }

    /// Value of the (unrelaxed) maximum-likelihood objective at `config`.
    ///
    /// Edges touching an anchor are evaluated against the anchor position.
    pub fn mle_objective(&self, config: &Configuration<T>) -> T {
        let pos = |k: usize| -> Vector2<T> {
            self.anchors
                .iter()
                .find(|(a, _)| *a == k)
                .map(|(_, p)| *p)
                .unwrap_or(config.points()[k])
        };
        self.edges.iter().fold(T::zero(), |acc, e| {
            let sq = (pos(e.i) - pos(e.j)).norm_squared();
            acc + e.weight * (sq - e.d * e.d).abs()
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdpOptions {
    pub max_iter: usize,
    /// Threshold on the relative primal and dual residuals.
    pub tol: f64,
    pub seed: u64,
    /// Pin node 0 at the origin when there are no anchors.
    pub pin_first: bool,
}

impl Default for SdpOptions {
    fn default() -> Self {
        Self {
            max_iter: 5000,
            tol: 1e-6,
            seed: 0,
            pin_first: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SdpSolution<T: Real> {
    pub config: Configuration<T>,
    /// `(n + 2) x (n + 2)` lifted matrix `[[I, X], [X^T, Y]]`.
    pub gram: DMatrix<T>,
    /// Relative primal residual at return.
    pub residual: T,
    /// Relative primal residual after the first iteration.
    pub initial_residual: T,
    pub iterations: usize,
    pub converged: bool,
}

/// Nearest positive semidefinite matrix in Frobenius norm.
pub fn project_psd<T: Real>(m: &DMatrix<T>) -> Result<DMatrix<T>> {
    if !m.is_square() {
        return Err(Error::InvalidArgument("PSD projection needs a square matrix".into()));
    }
    let scale = m.iter().fold(T::zero(), |a, v| a.max(v.abs()));
    let tol = T::c(1e-10) * (T::one() + scale);
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            if (m[(i, j)] - m[(j, i)]).abs() > tol {
                return Err(Error::InvalidArgument(format!(
                    "PSD projection needs a symmetric matrix (entry ({i}, {j}))"
                )));
            }
        }
    }
    Ok(project_psd_unchecked(m.clone()))
}

fn project_psd_unchecked<T: Real>(m: DMatrix<T>) -> DMatrix<T> {
    let eig = SymmetricEigen::new(m);
    let mut vecs = eig.eigenvectors;
    let mut any_positive = false;
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        let s = lambda.max(T::zero()).sqrt();
        any_positive |= s > T::zero();
        vecs.column_mut(k).scale_mut(s);
    }
    if !any_positive {
        return DMatrix::zeros(vecs.nrows(), vecs.ncols());
    }
    &vecs * vecs.transpose()
}

enum Term<T> {
    /// Both endpoints free (lifted indices).
    Pair { p: usize, q: usize },
    /// Free endpoint `p` against a known point `a`.
    Anchor { p: usize, a: Vector2<T> },
}

/// Solves the relaxation with ADMM and reads positions from the `X` block.
pub fn solve_sdp<T: Real>(problem: &SdpProblem<T>, options: &SdpOptions) -> Result<SdpSolution<T>> {
    let n = problem.n;
    if n < 2 || problem.edges.is_empty() {
        return Err(Error::Degenerate("SDP needs at least two nodes and one measurement".into()));
    }
    if options.max_iter == 0 || !(options.tol > 0.0) {
        return Err(Error::InvalidArgument("SDP needs max_iter >= 1 and tol > 0".into()));
    }
    let comps = components(n, problem.edges.iter().map(|e| (e.i, e.j)));
    if comps.len() > 1 {
        return Err(Error::Disconnected { components: comps });
    }

    // normalize: unit mean distance, unit mean weight
    let n_edges = T::from_count(problem.edges.len());
    let mean_d = problem.edges.iter().fold(T::zero(), |a, e| a + e.d) / n_edges;
    let mean_w = problem.edges.iter().fold(T::zero(), |a, e| a + e.weight) / n_edges;
    let scale = T::one() / mean_d;

    let mut anchors: Vec<Option<Vector2<T>>> = vec![None; n];
    for (k, a) in &problem.anchors {
        anchors[*k] = Some(a * scale);
    }
    if problem.anchors.is_empty() && options.pin_first {
        anchors[0] = Some(Vector2::zeros());
    }
    let mut lifted = vec![usize::MAX; n];
    let mut free = 0;
    for k in 0..n {
        if anchors[k].is_none() {
            lifted[k] = free;
            free += 1;
        }
    }
    if free == 0 {
        return Err(Error::Degenerate("every node is an anchor".into()));
    }

    let mut terms = Vec::new();
    let mut target = Vec::new();
    let mut weight = Vec::new();
    for e in &problem.edges {
        let d2 = (e.d * scale) * (e.d * scale);
        let w = e.weight / mean_w;
        match (anchors[e.i], anchors[e.j]) {
            (None, None) => {
                terms.push(Term::Pair { p: lifted[e.i], q: lifted[e.j] });
                target.push(d2);
            }
            (Some(a), None) | (None, Some(a)) => {
                let p = if anchors[e.i].is_none() { lifted[e.i] } else { lifted[e.j] };
                terms.push(Term::Anchor { p, a });
                target.push(d2 - a.norm_squared());
            }
            (Some(_), Some(_)) => continue,
        }
        weight.push(w);
    }
    if terms.is_empty() {
        return Err(Error::Degenerate("no measurement involves a free node".into()));
    }
    let b = DVector::from_vec(target);
    let w = DVector::from_vec(weight);

    let solver = AffineStep::new(free, &terms)?;
    let m = free + 2;

    // start from a random planar configuration lifted exactly
    let mut rng = restart_rng(options.seed, 0);
    let mut v = DMatrix::<T>::zeros(m, m);
    v[(0, 0)] = T::one();
    v[(1, 1)] = T::one();
    let x0: Vec<Vector2<T>> = (0..free)
        .map(|_| Vector2::new(T::c(rng.random::<f64>()), T::c(rng.random::<f64>())))
        .collect();
    for p in 0..free {
        v[(0, 2 + p)] = x0[p].x;
        v[(1, 2 + p)] = x0[p].y;
        v[(2 + p, 0)] = x0[p].x;
        v[(2 + p, 1)] = x0[p].y;
        for q in 0..free {
            v[(2 + p, 2 + q)] = x0[p].dot(&x0[q]);
        }
    }
    let mut u = DMatrix::<T>::zeros(m, m);
    let mut s = apply(&terms, &v) - &b;
    let mut lambda = DVector::<T>::zeros(terms.len());
    let mut rho = T::one();
    let tol = T::c(options.tol);
    let b_norm = b.norm();

    let mut residual = T::c(f64::INFINITY);
    let mut initial_residual = residual;
    let mut iterations = 0;
    let mut converged = false;
    for it in 0..options.max_iter {
        iterations = it + 1;
        let z = solver.solve(&(&v - &u), &(&s + &b - &lambda), &terms);
        let v_prev = v;
        v = project_psd_unchecked(&z + &u);
        let az = apply(&terms, &z);
        let pre = &az - &b + &lambda;
        s = pre.zip_map(&w, |x, wk| soft_threshold(x, wk / rho));
        let r_cone = &z - &v;
        let r_aff = &az - &b - &s;
        u += &r_cone;
        lambda += &r_aff;

        let primal = (r_cone.norm_squared() + r_aff.norm_squared()).sqrt();
        let dual = rho * (&v - &v_prev).norm();
        let primal_rel = primal / (T::one() + z.norm().max(v.norm()).max(b_norm));
        let dual_rel = dual / (T::one() + rho * u.norm());
        residual = primal_rel;
        if it == 0 {
            initial_residual = primal_rel;
        }
        if primal_rel < tol && dual_rel < tol {
            converged = true;
            break;
        }
        // residual balancing
        if it % 10 == 9 {
            let ten = T::c(10.0);
            let two = T::c(2.0);
            if primal_rel > ten * dual_rel {
                rho *= two;
                u /= two;
                lambda /= two;
            } else if dual_rel > ten * primal_rel {
                rho /= two;
                u *= two;
                lambda *= two;
            }
        }
    }

    // expand to (n + 2) x (n + 2) with anchored columns, then undo scaling
    let mut t = DMatrix::<T>::zeros(m, n + 2);
    t[(0, 0)] = T::one();
    t[(1, 1)] = T::one();
    for k in 0..n {
        match anchors[k] {
            Some(a) => {
                t[(0, 2 + k)] = a.x;
                t[(1, 2 + k)] = a.y;
            }
            None => t[(2 + lifted[k], 2 + k)] = T::one(),
        }
    }
    let mut gram = t.transpose() * &v * &t;
    let inv = mean_d;
    for r in 0..n + 2 {
        for c in 0..n + 2 {
            let f = if r >= 2 { inv } else { T::one() } * if c >= 2 { inv } else { T::one() };
            gram[(r, c)] *= f;
        }
    }
    let points = if problem.anchors.len() <= 1 {
        // at most one known point: only distances to it are pinned
        let c = problem.anchors.first().map(|(_, a)| *a).unwrap_or_else(Vector2::zeros);
        let rel = DMatrix::from_fn(n, n, |k, l| {
            let xk = Vector2::new(gram[(0, 2 + k)], gram[(1, 2 + k)]);
            let xl = Vector2::new(gram[(0, 2 + l)], gram[(1, 2 + l)]);
            gram[(2 + k, 2 + l)] - c.dot(&xk) - c.dot(&xl) + c.norm_squared()
        });
        planar_factor(&rel).into_iter().map(|p| p + c).collect()
    } else {
        (0..n)
            .map(|k| match anchors[k] {
                Some(a) => a * inv,
                None => Vector2::new(gram[(0, 2 + k)], gram[(1, 2 + k)]),
            })
            .collect()
    };
    let points = problem_anchor_exact(points, problem, options);
    Ok(SdpSolution {
        config: Configuration::new(points)?,
        gram,
        residual,
        initial_residual,
        iterations,
        converged,
    })
}

/// Positions from the best rank-2 factor of a node Gram matrix.
///
/// With fewer than two anchors the relaxation only constrains `Y`; the `X` block may sit
/// strictly inside the cone and is not a reliable read-out.
fn planar_factor<T: Real>(y: &DMatrix<T>) -> Vec<Vector2<T>> {
    let eig = SymmetricEigen::new(y.clone());
    let mut order: Vec<usize> = (0..y.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap_or(std::cmp::Ordering::Equal));
    let axis = |r: usize| -> (usize, T) { (order[r], eig.eigenvalues[order[r]].max(T::zero()).sqrt()) };
    let (a, sa) = axis(0);
    let (b, sb) = if y.nrows() > 1 { axis(1) } else { (a, T::zero()) };
    (0..y.nrows())
        .map(|k| Vector2::new(eig.eigenvectors[(k, a)] * sa, eig.eigenvectors[(k, b)] * sb))
        .collect()
}

/// Anchored nodes report their given positions bit-exactly.
fn problem_anchor_exact<T: Real>(mut points: Vec<Vector2<T>>, problem: &SdpProblem<T>, options: &SdpOptions) -> Vec<Vector2<T>> {
    for (k, a) in &problem.anchors {
        points[*k] = *a;
    }
    if problem.anchors.is_empty() && options.pin_first {
        points[0] = Vector2::zeros();
    }
    points
}

#[inline]
fn soft_threshold<T: Real>(x: T, k: T) -> T {
    if x > k {
        x - k
    } else if x < -k {
        x + k
    } else {
        T::zero()
    }
}

/// Linear functionals `A(Z)` of every term.
fn apply<T: Real>(terms: &[Term<T>], z: &DMatrix<T>) -> DVector<T> {
    let two = T::c(2.0);
    DVector::from_iterator(
        terms.len(),
        terms.iter().map(|t| match *t {
            Term::Pair { p, q } => z[(2 + p, 2 + p)] + z[(2 + q, 2 + q)] - two * z[(2 + p, 2 + q)],
            Term::Anchor { p, a } => z[(2 + p, 2 + p)] - two * (a.x * z[(0, 2 + p)] + a.y * z[(1, 2 + p)]),
        }),
    )
}

/// Minimizer of `||Z - C||_F^2 + ||A(Z) - t||^2` with the top-left block fixed
/// to the identity.
///
/// Off-diagonal `Y_pq` entries of measured pairs appear in exactly one term
/// and are eliminated in closed form; what remains is a `3f x 3f` system in
/// the positions and the diagonal of `Y` whose matrix never changes.
struct AffineStep<T: Real> {
    free: usize,
    chol: Cholesky<T, Dyn>,
}

impl<T: Real> AffineStep<T> {
    fn new(free: usize, terms: &[Term<T>]) -> Result<Self> {
        let dim = 3 * free;
        let mut h = DMatrix::<T>::zeros(dim, dim);
        for p in 0..free {
            h[(2 * p, 2 * p)] = T::c(2.0);
            h[(2 * p + 1, 2 * p + 1)] = T::c(2.0);
            h[(2 * free + p, 2 * free + p)] = T::one();
        }
        let third = T::one() / T::c(3.0);
        for t in terms {
            let g = Self::gradient(free, t);
            let factor = if matches!(t, Term::Pair { .. }) { third } else { T::one() };
            for &(r, gr) in &g {
                for &(c, gc) in &g {
                    h[(r, c)] += factor * gr * gc;
                }
            }
        }
        let chol = Cholesky::new(h).ok_or_else(|| Error::Singular("SDP affine step".into()))?;
        Ok(Self { free, chol })
    }

    /// Sparse coefficient vector of a term in the reduced unknowns.
    fn gradient(free: usize, t: &Term<T>) -> Vec<(usize, T)> {
        match *t {
            Term::Pair { p, q } => vec![(2 * free + p, T::one()), (2 * free + q, T::one())],
            Term::Anchor { p, a } => vec![
                (2 * free + p, T::one()),
                (2 * p, T::c(-2.0) * a.x),
                (2 * p + 1, T::c(-2.0) * a.y),
            ],
        }
    }

    fn solve(&self, c: &DMatrix<T>, t: &DVector<T>, terms: &[Term<T>]) -> DMatrix<T> {
        let f = self.free;
        let two = T::c(2.0);
        let third = T::one() / T::c(3.0);
        let mut rhs = DVector::<T>::zeros(3 * f);
        for p in 0..f {
            rhs[2 * p] = two * c[(0, 2 + p)];
            rhs[2 * p + 1] = two * c[(1, 2 + p)];
            rhs[2 * f + p] = c[(2 + p, 2 + p)];
        }
        for (k, term) in terms.iter().enumerate() {
            let (factor, offset) = match *term {
                Term::Pair { p, q } => (third, t[k] + two * c[(2 + p, 2 + q)]),
                Term::Anchor { .. } => (T::one(), t[k]),
            };
            for (r, g) in Self::gradient(f, term) {
                rhs[r] += factor * g * offset;
            }
        }
        let sol = self.chol.solve(&rhs);
        let mut z = c.clone();
        z[(0, 0)] = T::one();
        z[(1, 1)] = T::one();
        z[(0, 1)] = T::zero();
        z[(1, 0)] = T::zero();
        for p in 0..f {
            for (row, val) in [(0, sol[2 * p]), (1, sol[2 * p + 1])] {
                z[(row, 2 + p)] = val;
                z[(2 + p, row)] = val;
            }
            z[(2 + p, 2 + p)] = sol[2 * f + p];
        }
        for (k, term) in terms.iter().enumerate() {
            if let Term::Pair { p, q } = *term {
                let y = (c[(2 + p, 2 + q)] + sol[2 * f + p] + sol[2 * f + q] - t[k]) * third;
                z[(2 + p, 2 + q)] = y;
                z[(2 + q, 2 + p)] = y;
            }
        }
        z
    }
}

/// Polishes a relaxed solution with a single spring-model run started from it.
///
/// The spring output is kept only if it does not raise the normalized stress.
pub fn refine_with_spring<T: Real>(
    solution: &SdpSolution<T>,
    measurements: &MeasurementSet<T>,
    options: &SpringOptions,
) -> Result<Configuration<T>> {
    let opts = SpringOptions { n_init: 1, ..*options };
    let refined = spring_localize(measurements, &opts, Some(&solution.config))?;
    let before = crate::mds::compute_stress(&solution.config, measurements);
    let after = crate::mds::compute_stress(&refined, measurements);
    match (before, after) {
        (Ok(b), Ok(a)) if a > b => Ok(solution.config.clone()),
        _ => Ok(refined),
    }
}
