//! ε-neighborhood graphs with the indicator kernel and their unnormalized
//! Laplacians.

use std::fmt::Write as _;

use crate::cloud::PointCloud;
use crate::error::{invalid, Result};

/// Volume of the unit ball in `R^m`, `π^{m/2} / Γ(m/2 + 1)`.
pub fn unit_ball_volume(m: usize) -> f64 {
    let half = m as f64 / 2.0;
    std::f64::consts::PI.powf(half) / libm::tgamma(half + 1.0)
}

/// Common weight of every edge: `(m+2) / (n² α_m ε^{m+2})`.
pub fn edge_weight(n: usize, m: usize, eps: f64) -> f64 {
    let n = n as f64;
    (m as f64 + 2.0) / (n * n * unit_ball_volume(m) * eps.powi(m as i32 + 2))
}

/// Connectivity `multiplier · n^{-1/(m+2)}`; for surfaces (`m = 2`) this is
/// the `multiplier · n^{-1/4}` rule used in the sphere experiments.
pub fn default_eps(n: usize, m: usize, multiplier: f64) -> Result<f64> {
    if n < 2 {
        return Err(invalid("n", "need at least two points"));
    }
    if m == 0 {
        return Err(invalid("m", "intrinsic dimension must be positive"));
    }
    if !(multiplier.is_finite() && multiplier > 0.0) {
        return Err(invalid("multiplier", format!("must be positive, got {multiplier}")));
    }
    Ok(multiplier * (n as f64).powf(-1.0 / (m as f64 + 2.0)))
}

/// The weighted graph `(M_n, W_n)`. Self-pairs are not stored.
#[derive(Debug, Clone)]
pub struct GeometricGraph {
    n: usize,
    m: usize,
    eps: f64,
    weight: f64,
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
}

pub fn build_eps_graph(cloud: &PointCloud, eps: f64) -> Result<GeometricGraph> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(invalid("eps", format!("must be positive, got {eps}")));
    }
    let n = cloud.len();
    let lists = cloud.neighborhoods(eps)?;
    let mut offsets = Vec::with_capacity(n + 1);
    let mut neighbors = Vec::new();
    offsets.push(0);
    for (i, list) in lists.into_iter().enumerate() {
        neighbors.extend(list.into_iter().filter(|&j| j != i));
        offsets.push(neighbors.len());
    }
    let graph = GeometricGraph {
        n,
        m: cloud.intrinsic_dim(),
        eps,
        weight: edge_weight(n, cloud.intrinsic_dim(), eps),
        offsets,
        neighbors,
    };
    let components = graph.component_count();
    if components > 1 {
        log::warn!("ε-graph with eps={eps:.4} on {n} points has {components} connected components");
    }
    Ok(graph)
}

impl GeometricGraph {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn intrinsic_dim(&self) -> usize {
        self.m
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// The value `K_ε(r)` for `r <= ε`.
    pub fn edge_weight(&self) -> f64 {
        self.weight
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn degree_count(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.len() / 2
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        if i != j && self.neighbors(i).binary_search(&j).is_ok() {
            self.weight
        } else {
            0.0
        }
    }

    /// Component label for every node (labels are `0..count`, in order of
    /// first appearance).
    pub fn components(&self) -> Vec<usize> {
        let mut label = vec![usize::MAX; self.n];
        let mut next = 0;
        let mut stack = Vec::new();
        for start in 0..self.n {
            if label[start] != usize::MAX {
                continue;
            }
            label[start] = next;
            stack.push(start);
            while let Some(v) = stack.pop() {
                for &w in self.neighbors(v) {
                    if label[w] == usize::MAX {
                        label[w] = next;
                        stack.push(w);
                    }
                }
            }
            next += 1;
        }
        label
    }

    pub fn component_count(&self) -> usize {
        self.components().into_iter().max().map_or(0, |c| c + 1)
    }

    pub fn is_connected(&self) -> bool {
        self.component_count() == 1
    }

    /// Weight matrix in `i j value` coordinate format, one nonzero per line,
    /// both orientations of every edge listed.
    pub fn to_coordinate_text(&self) -> String {
        let mut out = String::new();
        for i in 0..self.n {
            for &j in self.neighbors(i) {
                let _ = writeln!(out, "{i} {j} {:.16e}", self.weight);
            }
        }
        out
    }
}

/// `c · (D − W)` stored in compressed rows, `c` being the spectral
/// calibration factor (1 by default).
#[derive(Debug, Clone)]
pub struct GraphLaplacian {
    n: usize,
    calibration: f64,
    offsets: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

pub fn laplacian(graph: &GeometricGraph) -> GraphLaplacian {
    calibrated_laplacian(graph, 1.0)
}

pub fn calibrated_laplacian(graph: &GeometricGraph, calibration: f64) -> GraphLaplacian {
    let n = graph.n();
    let w = graph.edge_weight() * calibration;
    let mut offsets = Vec::with_capacity(n + 1);
    let mut cols = Vec::with_capacity(graph.neighbors.len() + n);
    let mut vals = Vec::with_capacity(graph.neighbors.len() + n);
    offsets.push(0);
    for i in 0..n {
        let nbrs = graph.neighbors(i);
        let diag = w * nbrs.len() as f64;
        let mut placed = false;
        for &j in nbrs {
            if !placed && j > i {
                cols.push(i);
                vals.push(diag);
                placed = true;
            }
            cols.push(j);
            vals.push(-w);
        }
        if !placed {
            cols.push(i);
            vals.push(diag);
        }
        offsets.push(cols.len());
    }
    GraphLaplacian {
        n,
        calibration,
        offsets,
        cols,
        vals,
    }
}

/// Factor that puts `D − W` on the scale of the Laplace–Beltrami spectrum
/// for uniform samples of a manifold of total volume `volume`: `2 n · volume`.
///
/// The `n` converts the Euclidean quadratic form into the `L²(γ_n)` pairing,
/// the 2 undoes the double counting of ordered pairs, and the volume
/// removes the density `1/vol` of the uniform probability measure.
pub fn continuum_calibration(n: usize, volume: f64) -> f64 {
    2.0 * n as f64 * volume
}

/// Surface area of the unit sphere `S^2`.
pub const SPHERE_AREA: f64 = 4.0 * std::f64::consts::PI;

impl GraphLaplacian {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn calibration(&self) -> f64 {
        self.calibration
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.offsets[i]..self.offsets[i + 1];
        self.cols[range.clone()]
            .iter()
            .copied()
            .zip(self.vals[range].iter().copied())
    }

    pub fn diagonal(&self, i: usize) -> f64 {
        self.row(i).find(|&(j, _)| j == i).map_or(0.0, |(_, v)| v)
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.apply_into(u, &mut out);
        out
    }

    pub fn apply_into(&self, u: &[f64], out: &mut [f64]) {
        assert_eq!(u.len(), self.n);
        for (i, slot) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.offsets[i]..self.offsets[i + 1] {
                acc += self.vals[k] * u[self.cols[k]];
            }
            *slot = acc;
        }
    }

    /// Euclidean quadratic form `uᵀ L u`.
    pub fn quadratic_form(&self, u: &[f64]) -> f64 {
        self.apply(u).iter().zip(u).map(|(a, b)| a * b).sum()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).map(|(_, v)| v).sum()).collect()
    }

    /// Dense column-major copy.
    pub fn to_dense(&self) -> faer::Mat<f64> {
        let mut mat = faer::Mat::<f64>::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                mat[(i, j)] = v;
            }
        }
        mat
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line_cloud(xs: &[f64]) -> PointCloud {
        PointCloud::new(xs.to_vec(), 1, 1).unwrap()
    }

    #[test]
    fn ball_volumes() {
        assert!((unit_ball_volume(1) - 2.0).abs() < 1e-14);
        assert!((unit_ball_volume(2) - std::f64::consts::PI).abs() < 1e-14);
        assert!((unit_ball_volume(3) - 4.0 * std::f64::consts::PI / 3.0).abs() < 1e-13);
    }

    #[test]
    fn far_pair_has_no_edge() {
        let g = build_eps_graph(&line_cloud(&[0.0, 1.5]), 1.0).unwrap();
        assert_eq!(g.weight(0, 1), 0.0);
        assert_eq!(g.edge_count(), 0);
        assert!(!g.is_connected());
    }

    #[test]
    fn weight_formula_for_surfaces() {
        // hand evaluation of 4 / (n² π ε⁴) at n = 500, ε = 0.2
        let w = edge_weight(500, 2, 0.2);
        assert!((w - 3.183_098_861_837_907e-3).abs() < 1e-15, "{w}");
        let mut coords = vec![0.0; 3 * 500];
        for i in 0..500 {
            coords[3 * i] = 10.0 * i as f64;
        }
        coords[3] = 0.1;
        let cloud = PointCloud::new(coords, 3, 2).unwrap();
        let g = build_eps_graph(&cloud, 0.2).unwrap();
        assert!((g.weight(0, 1) - w).abs() < 1e-15);
        assert_eq!(g.weight(1, 0), g.weight(0, 1));
        assert_eq!(g.weight(0, 0), 0.0);
    }

    #[test]
    fn default_eps_rule() {
        assert!((default_eps(500, 2, 1.0).unwrap() - 0.211_474_252_688_113).abs() < 1e-12);
        assert!((default_eps(1000, 2, 2.0).unwrap() - 0.355_655_882_007_358).abs() < 1e-12);
        assert!(default_eps(1000, 2, 0.0).is_err());
        assert!(default_eps(1, 2, 1.0).is_err());
    }

    #[test]
    fn eps_must_be_positive() {
        let cloud = PointCloud::sample_sphere(10, 1).unwrap();
        assert!(build_eps_graph(&cloud, 0.0).is_err());
        assert!(build_eps_graph(&cloud, -1.0).is_err());
    }

    #[test]
    fn two_node_laplacian() {
        let g = build_eps_graph(&line_cloud(&[0.0, 0.5]), 1.0).unwrap();
        let w = g.edge_weight();
        let dense = laplacian(&g).to_dense();
        assert_eq!(dense[(0, 0)], w);
        assert_eq!(dense[(0, 1)], -w);
        assert_eq!(dense[(1, 0)], -w);
        assert_eq!(dense[(1, 1)], w);
    }

    #[test]
    fn laplacian_kills_constants() {
        let cloud = PointCloud::sample_sphere(200, 3).unwrap();
        let g = build_eps_graph(&cloud, 0.4).unwrap();
        let lap = laplacian(&g);
        let scale = (0..200).map(|i| lap.diagonal(i)).fold(0.0, f64::max);
        for v in lap.apply(&vec![1.0; 200]) {
            assert!(v.abs() <= 1e-12 * scale);
        }
        for s in lap.row_sums() {
            assert!(s.abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn two_cliques_have_two_components() {
        let g = build_eps_graph(&line_cloud(&[0.0, 0.1, 5.0, 5.1]), 0.5).unwrap();
        assert_eq!(g.component_count(), 2);
        assert_eq!(g.components(), vec![0, 0, 1, 1]);
    }

    #[test]
    fn self_loops_cancel() {
        let cloud = PointCloud::sample_sphere(60, 8).unwrap();
        let g = build_eps_graph(&cloud, 0.5).unwrap();
        let lap = laplacian(&g).to_dense();
        // rebuild D − W with K_ε(0) on the diagonal of W and inside D
        let n = 60;
        let w0 = g.edge_weight();
        let mut with_loops = faer::Mat::<f64>::zeros(n, n);
        for i in 0..n {
            let mut degree = w0;
            for j in 0..n {
                if j != i {
                    degree += g.weight(i, j);
                    with_loops[(i, j)] = -g.weight(i, j);
                }
            }
            with_loops[(i, i)] = degree - w0;
        }
        for i in 0..n {
            for j in 0..n {
                assert!((with_loops[(i, j)] - lap[(i, j)]).abs() <= 1e-15 * w0 * n as f64);
            }
        }
    }

    #[test]
    fn coordinate_export_lists_both_orientations() {
        let g = build_eps_graph(&line_cloud(&[0.0, 0.5, 3.0]), 1.0).unwrap();
        let text = g.to_coordinate_text();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].starts_with("0 1 "));
        assert!(lines[1].starts_with("1 0 "));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn dirichlet_form_identity(seed in 0u64..500, eps in 0.2f64..0.9) {
            let cloud = PointCloud::sample_sphere(80, seed).unwrap();
            let g = build_eps_graph(&cloud, eps).unwrap();
            let lap = laplacian(&g);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
            let u: Vec<f64> = (0..80).map(|_| rng.random::<f64>() - 0.5).collect();
            let lhs = lap.quadratic_form(&u);
            let mut rhs = 0.0;
            for i in 0..80 {
                for j in 0..80 {
                    rhs += 0.5 * g.weight(i, j) * (u[i] - u[j]).powi(2);
                }
            }
            prop_assert!(lhs >= -1e-12 * rhs.abs());
            prop_assert!((lhs - rhs).abs() <= 1e-10 * rhs.abs().max(1e-300));
        }

        #[test]
        fn larger_eps_keeps_edges(seed in 0u64..500, eps in 0.1f64..0.6, extra in 0.0f64..0.5) {
            let cloud = PointCloud::sample_sphere(50, seed).unwrap();
            let small = build_eps_graph(&cloud, eps).unwrap();
            let large = build_eps_graph(&cloud, eps + extra).unwrap();
            for i in 0..50 {
                for &j in small.neighbors(i) {
                    prop_assert!(large.neighbors(i).contains(&j));
                }
            }
        }

        #[test]
        fn weights_symmetric(seed in 0u64..500) {
            let cloud = PointCloud::sample_sphere(40, seed).unwrap();
            let g = build_eps_graph(&cloud, 0.5).unwrap();
            for i in 0..40 {
                prop_assert_eq!(g.weight(i, i), 0.0);
                for j in 0..40 {
                    prop_assert_eq!(g.weight(i, j), g.weight(j, i));
                }
            }
        }
    }
}
