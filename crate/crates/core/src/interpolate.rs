//! k-nearest-neighbour extension of cloud functions to ambient points, and
//! Monte Carlo `L²` distances on the sphere.

use std::fmt::Write as _;

use crate::cloud::PointCloud;
use crate::error::{invalid, Error, Result};
use crate::oracle::PosteriorSummary;
use crate::sampler::ChainResult;
use crate::spectral::{ContinuumBasis, SpectralBasis};

/// Default size of the Monte Carlo sphere grid.
pub const DEFAULT_GRID_SIZE: usize = 10_000;

/// Precomputed neighbour sets for a fixed list of queries. The map
/// `u ↦ I_n^k u` is linear, so one instance serves any number of fields.
#[derive(Debug, Clone)]
pub struct KnnInterpolant {
    n: usize,
    k: usize,
    neighbors: Vec<Vec<usize>>,
}

impl KnnInterpolant {
    pub fn new(cloud: &PointCloud, k: usize, queries: &[Vec<f64>]) -> Result<Self> {
        let neighbors = queries
            .iter()
            .map(|q| cloud.knn(q, k))
            .collect::<Result<Vec<_>>>()?;
        if queries.is_empty() && (k == 0 || k > cloud.len()) {
            return Err(invalid("k", format!("need 1 <= k <= n={}, got {k}", cloud.len())));
        }
        Ok(Self {
            n: cloud.len(),
            k,
            neighbors,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn query_count(&self) -> usize {
        self.neighbors.len()
    }

    pub fn apply(&self, values: &[f64]) -> Result<Vec<f64>> {
        if values.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: values.len(),
            });
        }
        let inv = 1.0 / self.k as f64;
        Ok(self
            .neighbors
            .iter()
            .map(|nb| nb.iter().map(|&j| values[j]).sum::<f64>() * inv)
            .collect())
    }
}

/// `I_n^k u` at each query: the mean of `u` over the `k` nearest nodes.
pub fn knn_interpolate(values: &[f64], cloud: &PointCloud, k: usize, queries: &[Vec<f64>]) -> Result<Vec<f64>> {
    KnnInterpolant::new(cloud, k, queries)?.apply(values)
}

/// Interpolates the mean field of a nodal summary. Variances are carried by
/// the same averaging of nodal variances, which bounds the true pushed-forward
/// variance from above only when neighbours are perfectly correlated; use
/// [`pushforward_samples`] for exact second moments.
pub fn pushforward_summary(
    summary: &PosteriorSummary,
    cloud: &PointCloud,
    k: usize,
    queries: &[Vec<f64>],
) -> Result<PosteriorSummary> {
    if summary.locations.is_some() {
        return Err(invalid("summary", "pushforward needs a summary at the cloud nodes"));
    }
    let interp = KnnInterpolant::new(cloud, k, queries)?;
    Ok(PosteriorSummary {
        mean: interp.apply(&summary.mean)?,
        variance: interp.apply(&summary.variance)?,
        locations: Some(queries.to_vec()),
        source: summary.source,
        model: summary.model,
        truncation_tail: summary.truncation_tail,
    })
}

/// Pushes every retained chain sample through `I_n^k` and summarizes the
/// resulting fields at the queries (sample mean and sample variance).
pub fn pushforward_samples(
    chain: &ChainResult,
    basis: &SpectralBasis,
    cloud: &PointCloud,
    k: usize,
    queries: &[Vec<f64>],
    model: crate::oracle::ModelEcho,
) -> Result<PosteriorSummary> {
    if chain.is_empty() {
        return Err(Error::EmptyChain);
    }
    let interp = KnnInterpolant::new(cloud, k, queries)?;
    let q = queries.len();
    let mut sum = vec![0.0; q];
    let mut sum_sq = vec![0.0; q];
    for sample in chain.iter() {
        let field = interp.apply(&basis.synthesize(sample))?;
        for (i, v) in field.iter().enumerate() {
            sum[i] += v;
            sum_sq[i] += v * v;
        }
    }
    let count = chain.len() as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
    let variance = sum_sq
        .iter()
        .zip(&mean)
        .map(|(s, m)| (s / count - m * m).max(0.0))
        .collect();
    Ok(PosteriorSummary {
        mean,
        variance,
        locations: Some(queries.to_vec()),
        source: crate::oracle::SummarySource::Chain,
        model,
        truncation_tail: None,
    })
}

/// Uniform seeded points on the unit sphere.
pub fn sphere_grid(count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let cloud = PointCloud::sample_sphere(count, seed)?;
    Ok(cloud.points().map(<[f64]>::to_vec).collect())
}

/// Root-mean-square difference of two fields sampled on the same grid.
pub fn l2_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.is_empty() {
        return Err(invalid("grid", "empty"));
    }
    let ss: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((ss / a.len() as f64).sqrt())
}

/// RMS distance from `values` on `grid` to the span of the continuum
/// harmonics of the given degrees, with Monte Carlo inner products.
pub fn eigenspace_residual(values: &[f64], grid: &[Vec<f64>], degrees: &[usize]) -> Result<f64> {
    if values.len() != grid.len() {
        return Err(Error::DimensionMismatch {
            expected: grid.len(),
            got: values.len(),
        });
    }
    let l_max = degrees.iter().copied().max().unwrap_or(0);
    let cont = ContinuumBasis::new(l_max);
    let keep: Vec<usize> = cont
        .degrees()
        .iter()
        .enumerate()
        .filter(|(_, l)| degrees.contains(l))
        .map(|(i, _)| i)
        .collect();
    let feats = grid
        .iter()
        .map(|x| cont.evaluate(x).map(|f| keep.iter().map(|&i| f[i]).collect::<Vec<f64>>()))
        .collect::<Result<Vec<_>>>()?;
    // least squares on the grid, so the residual is orthogonal to the span
    let r = keep.len();
    let mut gram = faer::Mat::<f64>::zeros(r, r);
    let mut rhs = faer::Mat::<f64>::zeros(r, 1);
    for (f, v) in feats.iter().zip(values) {
        for a in 0..r {
            rhs[(a, 0)] += f[a] * v;
            for b in 0..r {
                gram[(a, b)] += f[a] * f[b];
            }
        }
    }
    let llt = gram
        .llt(faer::Side::Lower)
        .map_err(|e| Error::Factorization(format!("grid Gram matrix: {e:?}")))?;
    let coef = faer::linalg::solvers::Solve::solve(&llt, &rhs);
    let fitted: Vec<f64> = feats
        .iter()
        .map(|f| (0..r).map(|a| f[a] * coef[(a, 0)]).sum())
        .collect();
    l2_distance(values, &fitted)
}

/// Rows `x,y,z,value`.
pub fn field_csv(queries: &[Vec<f64>], values: &[f64]) -> String {
    let mut out = String::from("x,y,z,value\n");
    for (q, v) in queries.iter().zip(values) {
        let coords: Vec<String> = q.iter().map(|c| format!("{c:.12e}")).collect();
        let _ = writeln!(out, "{},{v:.12e}", coords.join(","));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_eps_graph, calibrated_laplacian, continuum_calibration, default_eps, SPHERE_AREA};
    use crate::oracle::{ModelEcho, SummarySource};
    use crate::sampler::{pcn, SamplerConfig};
    use crate::spectral::eigendecompose;
    use proptest::prelude::*;

    fn echo() -> ModelEcho {
        ModelEcho { alpha: 1.0, s: 5.0, t: 0.0, sigma: 0.1, p: 1 }
    }

    #[test]
    fn nearest_node_reproduces_values() {
        let cloud = PointCloud::sample_sphere(50, 1).unwrap();
        let u: Vec<f64> = (0..50).map(|i| (i as f64).sqrt()).collect();
        let queries: Vec<Vec<f64>> = cloud.points().map(<[f64]>::to_vec).collect();
        assert_eq!(knn_interpolate(&u, &cloud, 1, &queries).unwrap(), u);
    }

    #[test]
    fn constants_and_hand_means() {
        let cloud = PointCloud::sample_sphere(40, 2).unwrap();
        let q = sphere_grid(30, 3).unwrap();
        for v in knn_interpolate(&[2.5; 40], &cloud, 7, &q).unwrap() {
            assert!((v - 2.5).abs() < 1e-15);
        }
        let line = PointCloud::from_points(&[vec![-1.0, 0.0], vec![1.0, 0.0], vec![5.0, 0.0]], 1).unwrap();
        let v = knn_interpolate(&[0.0, 1.0, 9.0], &line, 2, &[vec![0.0, 0.0]]).unwrap();
        assert_eq!(v, vec![0.5]);
        assert!(knn_interpolate(&[0.0; 3], &line, 4, &[vec![0.0, 0.0]]).is_err());
    }

    #[test]
    fn distance_examples() {
        assert_eq!(l2_distance(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((l2_distance(&[1.0, 2.0, 3.0], &[1.5, 2.5, 3.5]).unwrap() - 0.5).abs() < 1e-15);
        assert!(l2_distance(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn pushforward_of_node_summary_is_identity_at_nodes() {
        let cloud = PointCloud::sample_sphere(30, 4).unwrap();
        let s = PosteriorSummary {
            mean: (0..30).map(|i| i as f64).collect(),
            variance: vec![0.2; 30],
            locations: None,
            source: SummarySource::Oracle,
            model: echo(),
            truncation_tail: None,
        };
        let q: Vec<Vec<f64>> = cloud.points().map(<[f64]>::to_vec).collect();
        let p = pushforward_summary(&s, &cloud, 1, &q).unwrap();
        assert_eq!(p.mean, s.mean);
        let grid = sphere_grid(17, 5).unwrap();
        assert_eq!(pushforward_summary(&s, &cloud, 4, &grid).unwrap().mean.len(), 17);
    }

    #[test]
    fn interpolation_commutes_with_chain_averaging() {
        let n = 120;
        let cloud = PointCloud::sample_sphere(n, 6).unwrap();
        let eps = default_eps(n, 2, 2.0).unwrap();
        let lap = calibrated_laplacian(&build_eps_graph(&cloud, eps).unwrap(), continuum_calibration(n, SPHERE_AREA));
        let basis = eigendecompose(&lap, 8).unwrap();
        let scales = vec![0.5; 8];
        let cfg = SamplerConfig {
            beta: 0.5,
            iterations: 4000,
            burn_in: 1000,
            thinning: 1,
            seed: 7,
            initial: None,
        };
        let chain = pcn(&scales, |_| 0.0, &cfg).unwrap();
        let grid = sphere_grid(40, 8).unwrap();
        let pushed = pushforward_samples(&chain, &basis, &cloud, 4, &grid, echo()).unwrap();
        let mean = crate::sampler::posterior_mean(&chain, &basis).unwrap();
        let direct = knn_interpolate(mean.values(), &cloud, 4, &grid).unwrap();
        for (a, b) in pushed.mean.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn eigenspace_residual_recognises_harmonics() {
        let grid = sphere_grid(2000, 9).unwrap();
        let cont = ContinuumBasis::new(2);
        let f: Vec<f64> = grid
            .iter()
            .map(|x| cont.expand(&[0.0, 0.3, -0.7, 0.2, 0.0, 0.0, 0.0, 0.0, 0.0], x).unwrap())
            .collect();
        assert!(eigenspace_residual(&f, &grid, &[1]).unwrap() < 1e-12);
        assert!(eigenspace_residual(&f, &grid, &[2]).unwrap() > 0.1);
    }

    #[test]
    fn first_eigenvector_approaches_degree_one_space() {
        let grid = sphere_grid(DEFAULT_GRID_SIZE, 11).unwrap();
        let residual = |n: usize| {
            let cloud = PointCloud::sample_sphere(n, 12).unwrap();
            let eps = default_eps(n, 2, 2.0).unwrap();
            let lap = calibrated_laplacian(&build_eps_graph(&cloud, eps).unwrap(), continuum_calibration(n, SPHERE_AREA));
            let basis = eigendecompose(&lap, 2).unwrap();
            let field = knn_interpolate(basis.vector(1), &cloud, 1, &grid).unwrap();
            eigenspace_residual(&field, &grid, &[1]).unwrap()
        };
        let r: Vec<f64> = [300, 1000, 2000].iter().map(|&n| residual(n)).collect();
        assert!(r[0] > r[1] && r[1] > r[2], "{r:?}");
    }

    #[test]
    fn csv_rows() {
        let q = sphere_grid(3, 1).unwrap();
        let s = field_csv(&q, &[1.0, 2.0, 3.0]);
        assert_eq!(s.lines().count(), 4);
        assert!(s.starts_with("x,y,z,value\n"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn interpolant_is_an_sup_contraction(seed in 0u64..1000, k in 1usize..10) {
            let cloud = PointCloud::sample_sphere(40, seed).unwrap();
            let u: Vec<f64> = (0..40).map(|i| ((i as u64 * 2654435761 + seed) % 97) as f64 - 48.0).collect();
            let q = sphere_grid(25, seed + 1).unwrap();
            let (lo, hi) = u.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
            for v in knn_interpolate(&u, &cloud, k, &q).unwrap() {
                prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }

        #[test]
        fn interpolant_is_linear(seed in 0u64..1000, c in -3.0f64..3.0) {
            let cloud = PointCloud::sample_sphere(30, seed).unwrap();
            let q = sphere_grid(10, seed + 2).unwrap();
            let interp = KnnInterpolant::new(&cloud, 3, &q).unwrap();
            let u: Vec<f64> = (0..30).map(|i| (i as f64 * 0.3).sin()).collect();
            let v: Vec<f64> = (0..30).map(|i| (i as f64 * 0.7).cos()).collect();
            let w: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a + c * b).collect();
            let (iu, iv, iw) = (interp.apply(&u).unwrap(), interp.apply(&v).unwrap(), interp.apply(&w).unwrap());
            for i in 0..10 {
                prop_assert!((iw[i] - iu[i] - c * iv[i]).abs() < 1e-12);
            }
        }
    }
}
