//! Neighbourhood-graph embeddings: Isomap and locally linear embedding.
//!
//! Both work from the sparse measured distances only; nothing is imputed.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen, Vector2};

use crate::error::{Error, Result};
use crate::geometry::Configuration;
use crate::mds::{classical_mds, rescale_to_mean};
use crate::measurements::{components, DistanceEstimateMatrix, MeasurementSet};
use crate::scalar::Real;

/// Default neighbourhood size for `n` nodes.
pub fn default_k(n: usize) -> usize {
    n.saturating_sub(1).min(7)
}

/// Symmetric k-nearest-neighbour graph over measured edges.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborGraph<T> {
    n: usize,
    /// Sorted by distance, then by neighbour index.
    adjacency: Vec<Vec<(usize, T)>>,
}

impl<T: Real> NeighborGraph<T> {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, T)] {
        &self.adjacency[i]
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }
}

fn by_distance<T: Real>(a: &(usize, T), b: &(usize, T)) -> std::cmp::Ordering {
    a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal).then(a.0.cmp(&b.0))
}

/// Keeps each node's `k` shortest measured edges, symmetrized by union.
pub fn knn_graph<T: Real>(measurements: &MeasurementSet<T>, k: usize) -> Result<NeighborGraph<T>> {
    let n = measurements.n();
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if n < k + 1 {
        return Err(Error::InvalidArgument(format!("k = {k} needs at least {} nodes, got {n}", k + 1)));
    }
    let mut incident: Vec<Vec<(usize, T)>> = vec![Vec::new(); n];
    for e in measurements.edges() {
        incident[e.i].push((e.j, e.d));
        incident[e.j].push((e.i, e.d));
    }
    let mut keep = vec![vec![false; n]; n];
    for (i, list) in incident.iter_mut().enumerate() {
        list.sort_by(by_distance);
        for &(j, _) in list.iter().take(k) {
            keep[i][j] = true;
            keep[j][i] = true;
        }
    }
    let adjacency: Vec<Vec<(usize, T)>> = incident
        .into_iter()
        .enumerate()
        .map(|(i, list)| list.into_iter().filter(|&(j, _)| keep[i][j]).collect())
        .collect();
    let comps = components(n, adjacency.iter().enumerate().flat_map(|(i, l)| l.iter().map(move |&(j, _)| (i, j))));
    if comps.len() > 1 {
        return Err(Error::Disconnected { components: comps });
    }
    Ok(NeighborGraph { n, adjacency })
}

/// All-pairs shortest paths over the neighbour graph (Floyd-Warshall).
pub fn geodesic_distances<T: Real>(graph: &NeighborGraph<T>) -> Result<DistanceEstimateMatrix<T>> {
    let n = graph.n;
    let inf = T::c(f64::INFINITY);
    let mut d = vec![inf; n * n];
    for i in 0..n {
        d[i * n + i] = T::zero();
        for &(j, w) in &graph.adjacency[i] {
            d[i * n + j] = d[i * n + j].min(w);
        }
    }
    for m in 0..n {
        for i in 0..n {
            let dim = d[i * n + m];
            if !dim.is_finite() {
                continue;
            }
            for j in 0..n {
                let via = dim + d[m * n + j];
                if via < d[i * n + j] {
                    d[i * n + j] = via;
                }
            }
        }
    }
    if d.iter().any(|v| !v.is_finite()) {
        let comps = components(n, graph.adjacency.iter().enumerate().flat_map(|(i, l)| l.iter().map(move |&(j, _)| (i, j))));
        return Err(Error::Disconnected { components: comps });
    }
    // symmetric by construction up to summation order; take the smaller side
    Ok(DistanceEstimateMatrix::from_fn(n, |i, j| d[i * n + j].min(d[j * n + i])))
}

/// Classical MDS on geodesic distances, rescaled to the measured mean.
pub fn isomap<T: Real>(measurements: &MeasurementSet<T>, k: usize) -> Result<Configuration<T>> {
    let graph = knn_graph(measurements, k)?;
    let geo = geodesic_distances(&graph)?;
    let config = classical_mds(&geo)?;
    rescale_to_mean(&config, measurements)
}

/// Per-node reconstruction weights as a dense row-stochastic matrix.
///
/// The local Gram matrix of node `i` is the double-centred squared-distance
/// matrix of its neighbourhood, re-centred on `i`:
/// `C_ab = (D_ia^2 + D_ib^2 - D_ab^2) / 2`. Neighbour-neighbour distances
/// that were not measured are taken from the geodesics.
pub fn lle_weights<T: Real>(measurements: &MeasurementSet<T>, k: usize, reg: T) -> Result<DMatrix<T>> {
    if k < 2 {
        return Err(Error::InvalidArgument("LLE needs k >= 2".into()));
    }
    if !(reg > T::zero()) || !reg.is_finite() {
        return Err(Error::InvalidArgument("LLE regularization must be positive".into()));
    }
    let graph = knn_graph(measurements, k)?;
    let geo = geodesic_distances(&graph)?;
    let n = graph.n;
    let dist = |a: usize, b: usize| -> T { measurements.get(a, b).map(|e| e.d).unwrap_or_else(|| geo.get(a, b)) };
    let mut w = DMatrix::<T>::zeros(n, n);
    for i in 0..n {
        let nb: Vec<usize> = graph.adjacency[i].iter().take(k).map(|&(j, _)| j).collect();
        let m = nb.len();
        let mut c = DMatrix::from_fn(m, m, |a, b| {
            let (da, db, dab) = (dist(i, nb[a]), dist(i, nb[b]), if a == b { T::zero() } else { dist(nb[a], nb[b]) });
            (da * da + db * db - dab * dab) * T::c(0.5)
        });
        // noisy distances need not be Euclidean; clip the negative part
        let eig = SymmetricEigen::new(c.clone());
        if eig.eigenvalues.iter().any(|&v| v < T::zero()) {
            let clipped = eig.eigenvalues.map(|v| v.max(T::zero()));
            c = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
            c = (&c + c.transpose()) * T::c(0.5);
        }
        let trace = c.trace();
        let shift = if trace > T::zero() { reg * trace } else { reg };
        for a in 0..m {
            c[(a, a)] += shift;
        }
        let chol = Cholesky::new(c).ok_or_else(|| Error::Singular(format!("local Gram system of node {i}")))?;
        let sol = chol.solve(&DVector::from_element(m, T::one()));
        let total = sol.sum();
        if total == T::zero() || !total.is_finite() {
            return Err(Error::Singular(format!("reconstruction weights of node {i}")));
        }
        for (a, &j) in nb.iter().enumerate() {
            w[(i, j)] = sol[a] / total;
        }
    }
    Ok(w)
}

/// Locally linear embedding from distances, rescaled to the measured mean.
pub fn lle<T: Real>(measurements: &MeasurementSet<T>, k: usize, reg: T) -> Result<Configuration<T>> {
    let n = measurements.n();
    if n < 3 {
        return Err(Error::InvalidArgument(format!("LLE needs at least 3 nodes, got {n}")));
    }
    let w = lle_weights(measurements, k, reg)?;
    let iw = DMatrix::<T>::identity(n, n) - w;
    let m = iw.transpose() * &iw;
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap_or(std::cmp::Ordering::Equal));
    // skip the constant vector at eigenvalue zero
    let (a, b) = (order[1], order[2]);
    let points = (0..n)
        .map(|i| Vector2::new(eig.eigenvectors[(i, a)], eig.eigenvectors[(i, b)]))
        .collect();
    rescale_to_mean(&Configuration::new(points)?, measurements)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurements::Edge;
    use proptest::prelude::*;

    fn exact(xy: &[(f64, f64)]) -> (Configuration<f64>, MeasurementSet<f64>) {
        let c = Configuration::<f64>::from_xy(xy).unwrap();
        let m = MeasurementSet::from_exact(&c.distance_matrix(), 0.1).unwrap();
        (c, m)
    }

    fn edge(i: usize, j: usize, d: f64) -> Edge<f64> {
        Edge { i, j, d, d_min: d * 0.9, d_max: d * 1.1 }
    }

    #[test]
    fn knn_hand_cases() {
        let (_, tri) = exact(&[(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]);
        assert_eq!(knn_graph(&tri, 2).unwrap().edge_count(), 3);
        let (_, path) = exact(&[(0.0, 0.0), (1.0, 0.0), (2.5, 0.0), (4.5, 0.0)]);
        let g = knn_graph(&path, 1).unwrap();
        assert_eq!(g.edge_count(), 3);
        for i in 0..3 {
            assert!(g.neighbors(i).iter().any(|&(j, _)| j == i + 1));
        }
        let (_, sq) = exact(&[(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]);
        assert_eq!(knn_graph(&sq, 3).unwrap().edge_count(), 6);
        assert!(knn_graph(&sq, 4).is_err());
        assert!(knn_graph(&sq, 0).is_err());
        // two far clusters, k = 1
        let (_, split) = exact(&[(0.0, 0.0), (1.0, 0.0), (50.0, 0.0), (51.0, 0.0)]);
        assert!(matches!(knn_graph(&split, 1), Err(Error::Disconnected { .. })));
    }

    #[test]
    fn chain_geodesic() {
        let m = MeasurementSet::new(3, [edge(0, 1, 1.0), edge(1, 2, 1.0)]).unwrap();
        let geo = geodesic_distances(&knn_graph(&m, 2).unwrap()).unwrap();
        assert_eq!(geo.get(0, 2), 2.0);
        let (c, full) = exact(&[(0.0, 0.0), (3.0, 0.0), (1.0, 2.0), (2.0, 5.0)]);
        let geo = geodesic_distances(&knn_graph(&full, 3).unwrap()).unwrap();
        for (i, j, d) in c.distance_matrix().pairs() {
            assert!((geo.get(i, j) - d).abs() < 1e-12);
        }
    }

    #[test]
    fn isomap_hand_cases() {
        let m = MeasurementSet::new(3, [edge(0, 1, 1.0), edge(1, 2, 1.0)]).unwrap();
        let c = isomap(&m, 1).unwrap();
        assert!((c.distance(0, 1) - 1.0).abs() < 1e-3);
        assert!((c.distance(1, 2) - 1.0).abs() < 1e-3);
        assert!((c.distance(0, 2) - 2.0).abs() < 1e-3);
        let (truth, sq) = exact(&[(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]);
        let c = isomap(&sq, 3).unwrap();
        for (i, j, d) in truth.distance_matrix().pairs() {
            assert!((c.distance(i, j) - d).abs() < 1e-3);
        }
    }

    #[test]
    fn isomap_equals_classical_on_complete_euclidean() {
        let (truth, m) = exact(&[(0.0, 0.0), (4.0, 1.0), (2.0, 3.0), (5.0, 5.0), (1.0, 6.0)]);
        let iso = isomap(&m, 4).unwrap();
        let cl = classical_mds(&truth.distance_matrix()).unwrap();
        for (i, j, d) in cl.distance_matrix().pairs() {
            assert!((iso.distance(i, j) - d).abs() < 1e-9);
        }
    }

    #[test]
    fn lle_equilateral_and_weights() {
        let h = 3f64.sqrt() / 2.0;
        let (_, m) = exact(&[(0.0, 0.0), (1.0, 0.0), (0.5, h)]);
        let c = lle(&m, 2, 1e-3).unwrap();
        for (i, j) in [(0, 1), (1, 2), (0, 2)] {
            assert!((c.distance(i, j) - 1.0).abs() < 1e-3, "{c:?}");
        }
        let (_, m) = exact(&[(0.0, 0.0), (2.0, 0.5), (1.0, 3.0), (4.0, 4.0), (5.0, 1.0), (3.0, 2.0)]);
        let w = lle_weights(&m, 3, 1e-3).unwrap();
        for i in 0..6 {
            assert!((w.row(i).sum() - 1.0).abs() < 1e-10);
            assert_eq!(w[(i, i)], 0.0);
        }
    }

    #[test]
    fn lle_collinear_keeps_rank_order() {
        let (_, m) = exact(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0), (3.0, 0.0)]);
        let c = lle(&m, 2, 1e-3).unwrap();
        // the line lands on the leading embedding axis
        let x: Vec<f64> = c.points().iter().map(|p| p.x).collect();
        let up = x.windows(2).all(|w| w[0] < w[1]);
        let down = x.windows(2).all(|w| w[0] > w[1]);
        assert!(up || down, "{x:?}");
    }

    #[test]
    fn rescale_identity_for_both() {
        let (_, m) = exact(&[(0.0, 0.0), (2.0, 0.5), (1.0, 3.0), (4.0, 4.0), (5.0, 1.0), (3.0, 2.0)]);
        let mean = m.mean_distance().unwrap();
        for c in [isomap(&m, 3).unwrap(), lle(&m, 3, 1e-3).unwrap()] {
            let emb = m.edges().iter().map(|e| c.distance(e.i, e.j)).sum::<f64>() / m.len() as f64;
            assert!((emb - mean).abs() < 1e-9 * mean);
        }
    }

    proptest! {
        #[test]
        fn geodesics_are_metric(xy in prop::collection::vec((0.0..20.0f64, 0.0..20.0f64), 4..10), k in 1usize..4) {
            let (_, m) = exact(&xy);
            prop_assume!(m.len() == xy.len() * (xy.len() - 1) / 2);
            if let Ok(g) = knn_graph(&m, k) {
                let geo = geodesic_distances(&g).unwrap();
                let n = xy.len();
                for i in 0..n {
                    prop_assert_eq!(geo.get(i, i), 0.0);
                    for j in 0..n {
                        prop_assert_eq!(geo.get(i, j), geo.get(j, i));
                        for l in 0..n {
                            prop_assert!(geo.get(i, l) <= geo.get(i, j) + geo.get(j, l) + 1e-9);
                        }
                    }
                }
            }
        }

        #[test]
        fn lle_scales_with_input(xy in prop::collection::vec((0.0..20.0f64, 0.0..20.0f64), 5..9), c in 0.1..10.0f64) {
            let (truth, m) = exact(&xy);
            prop_assume!(m.len() == xy.len() * (xy.len() - 1) / 2);
            let scaled = MeasurementSet::from_exact(&truth.scaled(c).distance_matrix(), 0.1 * c).unwrap();
            if let (Ok(a), Ok(b)) = (lle(&m, 4, 1e-3), lle(&scaled, 4, 1e-3)) {
                for (i, j, d) in a.distance_matrix().pairs() {
                    prop_assert!((b.distance(i, j) - c * d).abs() <= 1e-6 * (1.0 + c * d));
                }
            }
        }
    }
}
