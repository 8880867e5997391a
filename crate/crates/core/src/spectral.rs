//! Low-spectrum eigendecomposition of graph Laplacians and the reference
//! spectrum of the unit sphere.
//!
//! Graph eigenvectors are normalized in `L²(γ_n)`, i.e. `(1/n) Σ ψ_i² = 1`
//! (Euclidean norm `√n`), so that prior coefficient variances carry the same
//! meaning on the graph and on the sphere. Each eigenvector is oriented so
//! that its largest-magnitude entry is positive (lowest index on ties).

use std::fmt::Write as _;

use faer::{Mat, Side};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::graph::GraphLaplacian;

/// The `k` smallest eigenpairs `(λ_i^n, ψ_i^n)` of a graph Laplacian.
#[derive(Debug, Clone)]
pub struct SpectralBasis {
    n: usize,
    eigenvalues: Vec<f64>,
    // eigenvector i occupies vectors[i*n..(i+1)*n]
    vectors: Vec<f64>,
}

impl SpectralBasis {
    /// Assemble a basis from eigenvalues and `L²(γ_n)`-normalized vectors.
    pub fn from_parts(n: usize, eigenvalues: Vec<f64>, vectors: Vec<f64>) -> Result<Self> {
        if vectors.len() != n * eigenvalues.len() {
            return Err(Error::DimensionMismatch {
                expected: n * eigenvalues.len(),
                got: vectors.len(),
            });
        }
        Ok(Self {
            n,
            eigenvalues,
            vectors,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn count(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvalue(&self, i: usize) -> f64 {
        self.eigenvalues[i]
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.n..(i + 1) * self.n]
    }

    /// Values `ψ_i(x_node)` for the first `k` eigenvectors.
    pub fn node_features(&self, node: usize, k: usize) -> Vec<f64> {
        (0..k).map(|i| self.vectors[i * self.n + node]).collect()
    }

    /// Keep only the first `k` pairs.
    pub fn truncated(&self, k: usize) -> Result<Self> {
        if k > self.count() {
            return Err(invalid(
                "k",
                format!("basis holds {} pairs, asked for {k}", self.count()),
            ));
        }
        Ok(Self {
            n: self.n,
            eigenvalues: self.eigenvalues[..k].to_vec(),
            vectors: self.vectors[..k * self.n].to_vec(),
        })
    }

    /// Nodal values `Σ_i a_i ψ_i`.
    pub fn synthesize(&self, coeffs: &[f64]) -> Vec<f64> {
        assert!(coeffs.len() <= self.count());
        let mut out = vec![0.0; self.n];
        for (i, &a) in coeffs.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(self.vector(i)) {
                *o += a * v;
            }
        }
        out
    }

    /// Coefficients `⟨u, ψ_i⟩_{L²(γ_n)}` on the first `k` eigenvectors.
    pub fn project(&self, values: &[f64], k: usize) -> Vec<f64> {
        assert_eq!(values.len(), self.n);
        (0..k.min(self.count()))
            .map(|i| l2_inner(values, self.vector(i)))
            .collect()
    }

    /// `(index, eigenvalue)` rows, optionally followed by a reference column.
    pub fn spectrum_csv(&self, reference: Option<&[f64]>) -> String {
        let mut out = String::from(if reference.is_some() {
            "index,graph_eigenvalue,continuum_eigenvalue\n"
        } else {
            "index,eigenvalue\n"
        });
        for (i, lam) in self.eigenvalues.iter().enumerate() {
            match reference.and_then(|r| r.get(i)) {
                Some(c) => {
                    let _ = writeln!(out, "{},{lam:.12e},{c:.12e}", i + 1);
                }
                None if reference.is_some() => {
                    let _ = writeln!(out, "{},{lam:.12e},", i + 1);
                }
                None => {
                    let _ = writeln!(out, "{},{lam:.12e}", i + 1);
                }
            }
        }
        out
    }
}

/// `(1/n) Σ u_i v_i`.
pub fn l2_inner(u: &[f64], v: &[f64]) -> f64 {
    debug_assert_eq!(u.len(), v.len());
    u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / u.len() as f64
}

pub fn l2_norm(u: &[f64]) -> f64 {
    l2_inner(u, u).sqrt()
}

fn orient_and_scale(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = (v.len() as f64).sqrt() / norm * if v[best] < 0.0 { -1.0 } else { 1.0 };
    for x in v.iter_mut() {
        *x *= scale;
    }
}

/// Largest relative residual `‖Lψ − λψ‖ / ((1+λ)‖ψ‖)` over the basis.
pub fn max_relative_residual(lap: &GraphLaplacian, basis: &SpectralBasis) -> f64 {
    (0..basis.count())
        .map(|i| {
            let v = basis.vector(i);
            let lam = basis.eigenvalue(i);
            let lv = lap.apply(v);
            let res = lv
                .iter()
                .zip(v)
                .map(|(a, b)| (a - lam * b).powi(2))
                .sum::<f64>()
                .sqrt();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            res / ((1.0 + lam.abs()) * norm)
        })
        .fold(0.0, f64::max)
}

const RESIDUAL_TOL: f64 = 1e-8;

/// Dense symmetric eigendecomposition, keeping the `k` smallest pairs.
pub fn eigendecompose(lap: &GraphLaplacian, k: usize) -> Result<SpectralBasis> {
    let n = lap.n();
    if k == 0 || k > n {
        return Err(invalid("k", format!("need 1 <= k <= n={n}, got {k}")));
    }
    let dense = lap.to_dense();
    let evd = dense
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Factorization(format!("{e:?}")))?;
    let values = evd.S().column_vector();
    let u = evd.U();
    let mut eigenvalues = Vec::with_capacity(k);
    let mut vectors = Vec::with_capacity(n * k);
    for i in 0..k {
        eigenvalues.push(values[i].max(0.0));
        let mut v: Vec<f64> = (0..n).map(|r| u[(r, i)]).collect();
        orient_and_scale(&mut v);
        vectors.extend_from_slice(&v);
    }
    let basis = SpectralBasis {
        n,
        eigenvalues,
        vectors,
    };
    let residual = max_relative_residual(lap, &basis);
    if residual > RESIDUAL_TOL {
        return Err(Error::EigenNoConvergence { residual });
    }
    Ok(basis)
}

/// Options for [`eigendecompose_lanczos`].
#[derive(Debug, Clone)]
pub struct LanczosOptions {
    /// Block width; should exceed the largest eigenvalue multiplicity of
    /// interest (2l+1 on the sphere, or the number of graph components).
    pub block: usize,
    /// Cap on the Krylov dimension (clamped to `n`).
    pub max_dim: usize,
    pub seed: u64,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        Self {
            block: 8,
            max_dim: 600,
            seed: 0,
        }
    }
}

/// Block Lanczos with full reorthogonalization for the `k` smallest pairs.
///
/// Convergence is checked every block step with the same residual test used
/// by [`eigendecompose`]; once the Krylov space reaches dimension `n` the
/// Rayleigh–Ritz step is exact.
pub fn eigendecompose_lanczos(
    lap: &GraphLaplacian,
    k: usize,
    opts: &LanczosOptions,
) -> Result<SpectralBasis> {
    let n = lap.n();
    if k == 0 || k > n {
        return Err(invalid("k", format!("need 1 <= k <= n={n}, got {k}")));
    }
    let block = opts.block.clamp(1, n);
    let max_dim = opts.max_dim.max(k + block).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    // basis vectors and their images under L
    let mut q: Vec<Vec<f64>> = Vec::new();
    let mut lq: Vec<Vec<f64>> = Vec::new();

    let mut pending: Vec<Vec<f64>> = (0..block)
        .map(|_| (0..n).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    let mut best_residual = f64::INFINITY;

    loop {
        let mut added = 0;
        for mut v in pending.drain(..) {
            if q.len() >= max_dim {
                break;
            }
            let before = norm2(&v);
            for _ in 0..2 {
                for b in &q {
                    let c = dot(&v, b);
                    axpy(-c, b, &mut v);
                }
            }
            let after = norm2(&v);
            if after <= 1e-10 * before.max(f64::MIN_POSITIVE) || after == 0.0 {
                continue;
            }
            v.iter_mut().for_each(|x| *x /= after);
            lq.push(lap.apply(&v));
            q.push(v);
            added += 1;
        }
        let dim = q.len();
        if added == 0 && dim < n {
            // Krylov space became invariant; restart the block with fresh directions
            pending = (0..block)
                .map(|_| (0..n).map(|_| StandardNormal.sample(&mut rng)).collect())
                .collect();
            if dim >= max_dim {
                break;
            }
            continue;
        }

        if dim >= k {
            let mut t = Mat::<f64>::zeros(dim, dim);
            for i in 0..dim {
                for j in 0..=i {
                    let v = 0.5 * (dot(&q[i], &lq[j]) + dot(&q[j], &lq[i]));
                    t[(i, j)] = v;
                    t[(j, i)] = v;
                }
            }
            let evd = t
                .self_adjoint_eigen(Side::Lower)
                .map_err(|e| Error::Factorization(format!("{e:?}")))?;
            let s = evd.S().column_vector();
            let y = evd.U();
            let mut eigenvalues = Vec::with_capacity(k);
            let mut vectors = Vec::with_capacity(n * k);
            for i in 0..k {
                let mut v = vec![0.0; n];
                for (j, qj) in q.iter().enumerate() {
                    axpy(y[(j, i)], qj, &mut v);
                }
                orient_and_scale(&mut v);
                eigenvalues.push(s[i].max(0.0));
                vectors.extend_from_slice(&v);
            }
            let basis = SpectralBasis {
                n,
                eigenvalues,
                vectors,
            };
            let residual = max_relative_residual(lap, &basis);
            best_residual = best_residual.min(residual);
            if residual <= RESIDUAL_TOL || dim >= n {
                if residual > RESIDUAL_TOL {
                    return Err(Error::EigenNoConvergence { residual });
                }
                return Ok(basis);
            }
        }
        if dim >= max_dim {
            break;
        }
        // next block: L applied to the most recent block
        let start = dim.saturating_sub(block);
        pending = lq[start..dim].to_vec();
    }
    Err(Error::EigenNoConvergence {
        residual: best_residual,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `(l(l+1), 2l+1)`: eigenvalue of `−Δ` on `S^2` at degree `l` and its multiplicity.
pub fn sphere_eigenvalue(l: usize) -> (f64, usize) {
    ((l * (l + 1)) as f64, 2 * l + 1)
}

/// Real spherical harmonics on `S^2` up to degree `l_max`, normalized in
/// `L²(γ)` for the uniform probability measure γ (so `ψ_{0,0} ≡ 1`).
///
/// Functions are flattened by degree, then order `-l..=l`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuumBasis {
    l_max: usize,
}

impl ContinuumBasis {
    pub fn new(l_max: usize) -> Self {
        Self { l_max }
    }

    pub fn l_max(&self) -> usize {
        self.l_max
    }

    pub fn len(&self) -> usize {
        (self.l_max + 1) * (self.l_max + 1)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn labels(&self) -> Vec<(usize, i64)> {
        let mut out = Vec::with_capacity(self.len());
        for l in 0..=self.l_max {
            for order in -(l as i64)..=(l as i64) {
                out.push((l, order));
            }
        }
        out
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.labels().into_iter().map(|(l, _)| l).collect()
    }

    /// `l(l+1)` for every flattened function, ascending with multiplicity.
    pub fn eigenvalues(&self) -> Vec<f64> {
        self.labels()
            .into_iter()
            .map(|(l, _)| sphere_eigenvalue(l).0)
            .collect()
    }

    /// All harmonics at one point, in flattened order.
    pub fn evaluate(&self, point: &[f64]) -> Result<Vec<f64>> {
        check_on_sphere(point)?;
        Ok(real_harmonics(self.l_max, point))
    }

    /// `Σ_j c_j ψ_j(x)`.
    pub fn expand(&self, coeffs: &[f64], point: &[f64]) -> Result<f64> {
        if coeffs.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: coeffs.len(),
            });
        }
        let values = self.evaluate(point)?;
        Ok(values.iter().zip(coeffs).map(|(a, b)| a * b).sum())
    }
}

fn check_on_sphere(point: &[f64]) -> Result<()> {
    if point.len() != 3 {
        return Err(Error::DimensionMismatch {
            expected: 3,
            got: point.len(),
        });
    }
    let norm = (point[0] * point[0] + point[1] * point[1] + point[2] * point[2]).sqrt();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(invalid("point", format!("not on the unit sphere (norm {norm})")));
    }
    Ok(())
}

/// Single real harmonic of degree `l` and order `order` (`|order| <= l`).
pub fn sphere_harmonic(l: usize, order: i64, point: &[f64]) -> Result<f64> {
    if order.unsigned_abs() as usize > l {
        return Err(invalid("order", format!("|order| must not exceed l={l}")));
    }
    check_on_sphere(point)?;
    let all = real_harmonics(l, point);
    Ok(all[l * l + (order + l as i64) as usize])
}

fn real_harmonics(l_max: usize, p: &[f64]) -> Vec<f64> {
    let z = p[2].clamp(-1.0, 1.0);
    let rho = (p[0] * p[0] + p[1] * p[1]).sqrt();
    let sin_theta = rho.min(1.0);
    let phi = p[1].atan2(p[0]);

    // plm[l][m]: associated Legendre functions scaled by sqrt((2l+1)(l-m)!/(l+m)!)
    let size = l_max + 1;
    let mut plm = vec![0.0; size * size];
    let idx = |l: usize, m: usize| l * size + m;
    plm[idx(0, 0)] = 1.0;
    for m in 1..=l_max {
        let f = ((2 * m + 1) as f64 / (2 * m) as f64).sqrt();
        plm[idx(m, m)] = f * sin_theta * plm[idx(m - 1, m - 1)];
    }
    for m in 0..l_max {
        plm[idx(m + 1, m)] = ((2 * m + 3) as f64).sqrt() * z * plm[idx(m, m)];
    }
    for m in 0..=l_max {
        for l in (m + 2)..=l_max {
            let (lf, mf) = (l as f64, m as f64);
            let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
            let b = (((lf - 1.0) * (lf - 1.0) - mf * mf) / (4.0 * (lf - 1.0) * (lf - 1.0) - 1.0)).sqrt();
            plm[idx(l, m)] = a * (z * plm[idx(l - 1, m)] - b * plm[idx(l - 2, m)]);
        }
    }

    let mut out = Vec::with_capacity(size * size);
    let sqrt2 = std::f64::consts::SQRT_2;
    for l in 0..=l_max {
        for order in -(l as i64)..=(l as i64) {
            let m = order.unsigned_abs() as usize;
            let v = match order.signum() {
                0 => plm[idx(l, 0)],
                1 => sqrt2 * plm[idx(l, m)] * (m as f64 * phi).cos(),
                _ => sqrt2 * plm[idx(l, m)] * (m as f64 * phi).sin(),
            };
            out.push(v);
        }
    }
    out
}

/// `|1 − λ_i^n / λ_i|` for `i = 2..=count`; the shared zero eigenvalue is skipped.
pub fn relative_eigenvalue_errors(graph: &[f64], continuum: &[f64], count: usize) -> Result<Vec<f64>> {
    if count > graph.len() || count > continuum.len() {
        return Err(invalid(
            "count",
            format!(
                "{count} exceeds available eigenvalues ({} graph, {} continuum)",
                graph.len(),
                continuum.len()
            ),
        ));
    }
    Ok((1..count)
        .map(|i| (1.0 - graph[i] / continuum[i]).abs())
        .collect())
}

pub fn spectral_error(basis: &SpectralBasis, cont: &ContinuumBasis, count: usize) -> Result<Vec<f64>> {
    relative_eigenvalue_errors(basis.eigenvalues(), &cont.eigenvalues(), count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::PointCloud;
    use crate::graph::{
        build_eps_graph, calibrated_laplacian, continuum_calibration, default_eps, laplacian,
        SPHERE_AREA,
    };
    use proptest::prelude::*;
    use rand::Rng;

    fn sphere_laplacian(n: usize, seed: u64, mult: f64) -> GraphLaplacian {
        let cloud = PointCloud::sample_sphere(n, seed).unwrap();
        let eps = default_eps(n, 2, mult).unwrap();
        let g = build_eps_graph(&cloud, eps).unwrap();
        calibrated_laplacian(&g, continuum_calibration(n, SPHERE_AREA))
    }

    fn dense_full(lap: &GraphLaplacian) -> Vec<f64> {
        lap.to_dense()
            .self_adjoint_eigenvalues(Side::Lower)
            .unwrap()
    }

    #[test]
    fn constant_mode_comes_first() {
        let lap = sphere_laplacian(300, 1, 2.0);
        let basis = eigendecompose(&lap, 6).unwrap();
        let top = basis.eigenvalue(5);
        assert!(basis.eigenvalue(0).abs() <= 1e-10 * (top + 1.0));
        for v in basis.vector(0) {
            assert!((v - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn two_node_spectrum() {
        let cloud = PointCloud::new(vec![0.0, 0.3], 1, 1).unwrap();
        let g = build_eps_graph(&cloud, 1.0).unwrap();
        let w = g.edge_weight();
        let basis = eigendecompose(&laplacian(&g), 2).unwrap();
        assert!(basis.eigenvalue(0).abs() < 1e-14 * w);
        assert!((basis.eigenvalue(1) - 2.0 * w).abs() < 1e-12 * w);
        // the second eigenvector is ±1 with the leading entry positive
        assert!((basis.vector(1)[0] - 1.0).abs() < 1e-12);
        assert!((basis.vector(1)[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn disconnected_graph_has_repeated_zero() {
        let cloud = PointCloud::new(vec![0.0, 0.1, 5.0, 5.1], 1, 1).unwrap();
        let g = build_eps_graph(&cloud, 0.5).unwrap();
        let w = g.edge_weight();
        let basis = eigendecompose(&laplacian(&g), 4).unwrap();
        assert!(basis.eigenvalue(0).abs() < 1e-12 * w);
        assert!(basis.eigenvalue(1).abs() < 1e-12 * w);
        assert!(basis.eigenvalue(2) > 1.0 * w);
    }

    #[test]
    fn basis_is_orthonormal_and_accurate() {
        let lap = sphere_laplacian(400, 2, 2.0);
        let basis = eigendecompose(&lap, 20).unwrap();
        for i in 0..20 {
            for j in 0..20 {
                let g = l2_inner(basis.vector(i), basis.vector(j));
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((g - target).abs() < 1e-8, "gram[{i},{j}] = {g}");
            }
            let rq = l2_inner(&lap.apply(basis.vector(i)), basis.vector(i))
                / l2_inner(basis.vector(i), basis.vector(i));
            assert!((rq - basis.eigenvalue(i)).abs() <= 1e-8 * basis.eigenvalue(i).max(1.0));
        }
        assert!(max_relative_residual(&lap, &basis) <= 1e-8);
        for w in basis.eigenvalues().windows(2) {
            assert!(w[0] <= w[1]);
        }
    }

    #[test]
    fn dense_solver_agrees_with_full_spectrum() {
        let lap = sphere_laplacian(150, 4, 2.0);
        let full = dense_full(&lap);
        let basis = eigendecompose(&lap, 30).unwrap();
        for i in 0..30 {
            assert!((basis.eigenvalue(i) - full[i].max(0.0)).abs() <= 1e-8 * (1.0 + full[i].abs()));
        }
    }

    #[test]
    fn lanczos_matches_dense_on_small_graphs() {
        for (n, seed) in [(120usize, 3u64), (200, 5)] {
            let lap = sphere_laplacian(n, seed, 2.0);
            let dense = eigendecompose(&lap, 16).unwrap();
            let opts = LanczosOptions {
                block: 8,
                max_dim: n,
                seed: 1,
            };
            let iter = eigendecompose_lanczos(&lap, 16, &opts).unwrap();
            for i in 0..16 {
                let (a, b) = (dense.eigenvalue(i), iter.eigenvalue(i));
                assert!((a - b).abs() <= 1e-8 * (1.0 + a), "pair {i}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn lanczos_handles_disconnected_graph() {
        let cloud = PointCloud::new(vec![0.0, 0.1, 0.2, 5.0, 5.1, 5.2], 1, 1).unwrap();
        let g = build_eps_graph(&cloud, 0.15).unwrap();
        let lap = calibrated_laplacian(&g, 1.0 / g.edge_weight());
        let basis = eigendecompose_lanczos(&lap, 3, &LanczosOptions::default()).unwrap();
        assert!(basis.eigenvalue(0).abs() < 1e-10);
        assert!(basis.eigenvalue(1).abs() < 1e-10);
        assert!((basis.eigenvalue(2) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn eigenvalues_survive_relabeling() {
        let n = 250;
        let cloud = PointCloud::sample_sphere(n, 21).unwrap();
        let eps = default_eps(n, 2, 2.0).unwrap();
        let c = continuum_calibration(n, SPHERE_AREA);
        let a = eigendecompose(&calibrated_laplacian(&build_eps_graph(&cloud, eps).unwrap(), c), 12).unwrap();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let shuffled = cloud.permuted(&perm).unwrap();
        let b = eigendecompose(&calibrated_laplacian(&build_eps_graph(&shuffled, eps).unwrap(), c), 12).unwrap();
        for i in 0..12 {
            assert!((a.eigenvalue(i) - b.eigenvalue(i)).abs() <= 1e-8 * (1.0 + a.eigenvalue(i)));
        }
    }

    #[test]
    fn k_out_of_range_rejected() {
        let lap = sphere_laplacian(50, 1, 2.0);
        assert!(eigendecompose(&lap, 0).is_err());
        assert!(eigendecompose(&lap, 51).is_err());
    }

    #[test]
    fn sphere_spectrum_table() {
        assert_eq!(sphere_eigenvalue(0), (0.0, 1));
        assert_eq!(sphere_eigenvalue(1), (2.0, 3));
        assert_eq!(sphere_eigenvalue(3), (12.0, 7));
        let cont = ContinuumBasis::new(4);
        let eigs = cont.eigenvalues();
        assert_eq!(eigs.len(), 25);
        for l in 0..=4usize {
            let count = eigs.iter().filter(|&&e| e == (l * (l + 1)) as f64).count();
            assert_eq!(count, 2 * l + 1);
        }
    }

    #[test]
    fn degree_zero_harmonic_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let p = crate::cloud::random_unit_vector(&mut rng);
            assert!((sphere_harmonic(0, 0, &p).unwrap() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn addition_theorem() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cont = ContinuumBasis::new(8);
        for _ in 0..20 {
            let p = crate::cloud::random_unit_vector(&mut rng);
            let vals = cont.evaluate(&p).unwrap();
            for l in 0..=8usize {
                let sum: f64 = vals[l * l..(l + 1) * (l + 1)].iter().map(|v| v * v).sum();
                assert!((sum - (2 * l + 1) as f64).abs() < 1e-10, "l={l}: {sum}");
            }
        }
        // the north pole only sees the zonal harmonics
        let pole = cont.evaluate(&[0.0, 0.0, 1.0]).unwrap();
        for l in 0..=8usize {
            assert!((pole[l * l + l] - ((2 * l + 1) as f64).sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn known_low_degree_values() {
        // ψ_{1,0} = √3 z, ψ_{1,1} = √3 x, ψ_{1,-1} = √3 y
        let p = [0.48, -0.6, 0.64];
        let s3 = 3f64.sqrt();
        assert!((sphere_harmonic(1, 0, &p).unwrap() - s3 * 0.64).abs() < 1e-14);
        assert!((sphere_harmonic(1, 1, &p).unwrap() - s3 * 0.48).abs() < 1e-14);
        assert!((sphere_harmonic(1, -1, &p).unwrap() + s3 * 0.6).abs() < 1e-14);
        // ψ_{2,0} = √5 (3z² − 1)/2
        let expected = 5f64.sqrt() * (3.0 * 0.64f64 * 0.64 - 1.0) / 2.0;
        assert!((sphere_harmonic(2, 0, &p).unwrap() - expected).abs() < 1e-14);
    }

    #[test]
    fn off_sphere_points_rejected() {
        assert!(sphere_harmonic(1, 0, &[0.0, 0.0, 1.1]).is_err());
        assert!(sphere_harmonic(1, 2, &[0.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn harmonics_are_orthonormal_by_monte_carlo() {
        let n = 100_000;
        let cont = ContinuumBasis::new(3);
        let k = cont.len();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut sums = vec![0.0; k * k];
        let mut sq = vec![0.0; k * k];
        for _ in 0..n {
            let p = crate::cloud::random_unit_vector(&mut rng);
            let v = cont.evaluate(&p).unwrap();
            for a in 0..k {
                for b in 0..k {
                    let prod = v[a] * v[b];
                    sums[a * k + b] += prod;
                    sq[a * k + b] += prod * prod;
                }
            }
        }
        for a in 0..k {
            for b in 0..k {
                let mean = sums[a * k + b] / n as f64;
                let var = sq[a * k + b] / n as f64 - mean * mean;
                let se = (var / n as f64).sqrt();
                let target = if a == b { 1.0 } else { 0.0 };
                assert!((mean - target).abs() <= 5.0 * se + 1e-12, "pair ({a},{b}): {mean} (se {se})");
            }
        }
    }

    #[test]
    fn relative_errors() {
        let cont = [0.0, 2.0, 2.0, 2.0, 6.0];
        assert_eq!(relative_eigenvalue_errors(&cont, &cont, 5).unwrap(), vec![0.0; 4]);
        let scaled: Vec<f64> = cont.iter().map(|v| 1.1 * v).collect();
        for e in relative_eigenvalue_errors(&scaled, &cont, 5).unwrap() {
            assert!((e - 0.1).abs() < 1e-12);
        }
        assert!(relative_eigenvalue_errors(&cont, &cont, 6).is_err());
    }

    #[test]
    fn spectrum_csv_layout() {
        let basis = SpectralBasis::from_parts(2, vec![0.0, 1.5], vec![1.0, 1.0, 1.0, -1.0]).unwrap();
        let csv = basis.spectrum_csv(Some(&[0.0, 2.0]));
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "index,graph_eigenvalue,continuum_eigenvalue");
        assert!(lines[2].starts_with("2,1.5"));
        assert_eq!(lines.len(), 3);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn synthesize_then_project_round_trips(seed in 0u64..200) {
            let lap = sphere_laplacian(120, seed, 2.0);
            let basis = eigendecompose(&lap, 10).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let coeffs: Vec<f64> = (0..10).map(|_| rng.random::<f64>() - 0.5).collect();
            let back = basis.project(&basis.synthesize(&coeffs), 10);
            for (a, b) in coeffs.iter().zip(&back) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }
    }
}
