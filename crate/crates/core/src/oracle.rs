//! Closed-form Gaussian posteriors for the linear model `y = G u + η` with
//! Gaussian noise, on graphs and on the sphere.
//!
//! Both settings reduce to a diagonal Gaussian prior on KL coefficients,
//! `a ~ N(0, diag(d))` with `d_i = (α+λ_i)^{-s/2}`, observed through the
//! design matrix `M` (which already carries the heat factors). The data
//! covariance is `C = M diag(d) Mᵀ + σ² I = c_v(X,X) + σ² I`, and with
//! `C = L Lᵀ`, `Z = L^{-1} M diag(d)`:
//!
//! * posterior mean coefficients `Zᵀ L^{-1} y` (so the nodal mean is
//!   `c_w(·,X) C^{-1} y`);
//! * pointwise variance `c_u(x,x) − φ(x)ᵀ ZᵀZ φ(x)`, with `φ(x)` the basis
//!   values at `x`.

use std::fmt::Write as _;

use faer::linalg::triangular_solve::solve_lower_triangular_in_place;
use faer::{Mat, Par, Side};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::forward::ForwardModel;
use crate::likelihood::{NoiseKind, NoiseModel};
use crate::prior::{continuum_tail_variance, PriorSpec};
use crate::spectral::{ContinuumBasis, SpectralBasis};

/// Covariance kernels of the prior `u`, of `v = e^{-tΔ}u` and the cross
/// kernel `w` between them, as truncated eigen-series.
#[derive(Debug, Clone)]
pub struct CovarianceKernels {
    prior_var: Vec<f64>,
    damping: Vec<f64>,
}

impl CovarianceKernels {
    pub fn new(spec: &PriorSpec, eigenvalues: &[f64], t: f64) -> Result<Self> {
        if !(t.is_finite() && t >= 0.0) {
            return Err(invalid("t", format!("heat time must be finite and >= 0, got {t}")));
        }
        let scales = spec.scales(eigenvalues)?;
        Ok(Self {
            damping: eigenvalues[..scales.len()].iter().map(|l| (-l * t).exp()).collect(),
            prior_var: scales.iter().map(|s| s * s).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.prior_var.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prior_var.is_empty()
    }

    pub fn prior_variances(&self) -> &[f64] {
        &self.prior_var
    }

    fn series(&self, fx: &[f64], fy: &[f64], power: i32) -> f64 {
        self.prior_var
            .iter()
            .zip(&self.damping)
            .zip(fx.iter().zip(fy))
            .map(|((d, e), (a, b))| d * e.powi(power) * a * b)
            .sum()
    }

    /// `c_u(x, x̃) = Σ d_i ψ_i(x) ψ_i(x̃)` from basis values at both points.
    pub fn c_u(&self, fx: &[f64], fy: &[f64]) -> f64 {
        self.series(fx, fy, 0)
    }

    /// `c_v(x, x̃) = Σ e^{-2λ_i t} d_i ψ_i(x) ψ_i(x̃)`.
    pub fn c_v(&self, fx: &[f64], fy: &[f64]) -> f64 {
        self.series(fx, fy, 2)
    }

    /// `c_w(x, x̃) = Σ e^{-λ_i t} d_i ψ_i(x) ψ_i(x̃)`.
    pub fn c_w(&self, fx: &[f64], fy: &[f64]) -> f64 {
        self.series(fx, fy, 1)
    }
}

/// Where a summary came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SummarySource {
    Oracle,
    Chain,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelEcho {
    pub alpha: f64,
    pub s: f64,
    pub t: f64,
    pub sigma: f64,
    pub p: usize,
}

/// Posterior mean and pointwise variance at a set of locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    /// Query coordinates, when they are not simply the cloud nodes.
    pub locations: Option<Vec<Vec<f64>>>,
    pub source: SummarySource,
    pub model: ModelEcho,
    /// Prior variance mass beyond the retained series (continuum only).
    pub truncation_tail: Option<f64>,
}

impl PosteriorSummary {
    /// Rows `index,mean,variance`, or `x,y,z,mean,variance` with locations.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        match &self.locations {
            Some(locs) => {
                let dim = locs.first().map_or(0, Vec::len);
                let names = ["x", "y", "z"];
                let header: Vec<String> = (0..dim)
                    .map(|a| names.get(a).map_or(format!("x{a}"), |s| s.to_string()))
                    .collect();
                let _ = writeln!(out, "{},mean,variance", header.join(","));
                for ((loc, m), v) in locs.iter().zip(&self.mean).zip(&self.variance) {
                    let coords: Vec<String> = loc.iter().map(|c| format!("{c:.12e}")).collect();
                    let _ = writeln!(out, "{},{m:.12e},{v:.12e}", coords.join(","));
                }
            }
            None => {
                out.push_str("index,mean,variance\n");
                for (i, (m, v)) in self.mean.iter().zip(&self.variance).enumerate() {
                    let _ = writeln!(out, "{i},{m:.12e},{v:.12e}");
                }
            }
        }
        out
    }
}

/// Factorized linear-Gaussian posterior over coefficients.
#[derive(Debug, Clone)]
pub struct GaussianPosterior {
    prior_var: Vec<f64>,
    mean_coeffs: Vec<f64>,
    // ZᵀZ, k × k
    reduction: Mat<f64>,
    jitter: f64,
}

impl GaussianPosterior {
    /// Conditions `a ~ N(0, diag(prior_var))` on `y = M a + N(0, σ² I)`.
    pub fn new(forward: &ForwardModel, prior_var: &[f64], y: &[f64], sigma: f64) -> Result<Self> {
        let (p, k) = (forward.p(), prior_var.len());
        if y.len() != p {
            return Err(Error::DimensionMismatch { expected: p, got: y.len() });
        }
        if k > forward.k() {
            return Err(Error::DimensionMismatch {
                expected: forward.k(),
                got: k,
            });
        }
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(invalid("sigma", format!("must be finite and >= 0, got {sigma}")));
        }
        // A = M diag(d)
        let a = Mat::<f64>::from_fn(p, k, |j, i| forward.entry(j, i) * prior_var[i]);
        let mut c = Mat::<f64>::from_fn(p, p, |r, q| {
            (0..k).map(|i| a[(r, i)] * forward.entry(q, i)).sum::<f64>()
        });
        let trace: f64 = (0..p).map(|j| c[(j, j)]).sum();
        let jitter = if sigma < 1e-8 {
            1e-12 * (trace / p as f64).max(f64::MIN_POSITIVE)
        } else {
            0.0
        };
        for j in 0..p {
            c[(j, j)] += sigma * sigma + jitter;
        }
        let llt = c
            .llt(Side::Lower)
            .map_err(|e| Error::Factorization(format!("data covariance is not positive definite: {e:?}")))?;
        let l = llt.L();
        let mut z = a;
        solve_lower_triangular_in_place(l, z.as_mut(), Par::Seq);
        let mut w = Mat::<f64>::from_fn(p, 1, |j, _| y[j]);
        solve_lower_triangular_in_place(l, w.as_mut(), Par::Seq);
        let mean_coeffs = (0..k)
            .map(|i| (0..p).map(|j| z[(j, i)] * w[(j, 0)]).sum())
            .collect();
        let reduction = z.transpose() * &z;
        Ok(Self {
            prior_var: prior_var.to_vec(),
            mean_coeffs,
            reduction,
            jitter,
        })
    }

    pub fn mean_coefficients(&self) -> &[f64] {
        &self.mean_coeffs
    }

    /// Diagonal shift added to the data covariance (nonzero only for tiny σ).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn mean_at(&self, features: &[f64]) -> f64 {
        self.mean_coeffs.iter().zip(features).map(|(a, b)| a * b).sum()
    }

    pub fn prior_variance_at(&self, features: &[f64]) -> f64 {
        self.prior_var.iter().zip(features).map(|(d, f)| d * f * f).sum()
    }

    pub fn variance_at(&self, features: &[f64]) -> f64 {
        let k = self.prior_var.len();
        let mut reduce = 0.0;
        for a in 0..k {
            let row: f64 = (0..k).map(|b| self.reduction[(a, b)] * features[b]).sum();
            reduce += features[a] * row;
        }
        (self.prior_variance_at(features) - reduce).max(0.0)
    }

    /// Posterior covariance between two locations.
    pub fn covariance(&self, fx: &[f64], fy: &[f64]) -> f64 {
        let k = self.prior_var.len();
        let prior: f64 = (0..k).map(|i| self.prior_var[i] * fx[i] * fy[i]).sum();
        let mut reduce = 0.0;
        for a in 0..k {
            let row: f64 = (0..k).map(|b| self.reduction[(a, b)] * fy[b]).sum();
            reduce += fx[a] * row;
        }
        prior - reduce
    }
}

fn require_gaussian(noise: &NoiseModel) -> Result<()> {
    if noise.kind() != NoiseKind::Gaussian {
        return Err(Error::Unsupported(
            "closed-form posteriors exist only for Gaussian noise".into(),
        ));
    }
    Ok(())
}

/// Oracle posterior at every node of the cloud.
///
/// `forward` must be built on the same basis with at least `k_n` columns.
pub fn graph_posterior(
    y: &[f64],
    forward: &ForwardModel,
    basis: &SpectralBasis,
    spec: &PriorSpec,
    noise: &NoiseModel,
) -> Result<PosteriorSummary> {
    require_gaussian(noise)?;
    let kernels = CovarianceKernels::new(spec, basis.eigenvalues(), forward.t())?;
    let post = GaussianPosterior::new(forward, kernels.prior_variances(), y, noise.sigma())?;
    let k = kernels.len();
    let mut mean = Vec::with_capacity(basis.n());
    let mut variance = Vec::with_capacity(basis.n());
    for node in 0..basis.n() {
        let f = basis.node_features(node, k);
        mean.push(post.mean_at(&f));
        variance.push(post.variance_at(&f));
    }
    Ok(PosteriorSummary {
        mean,
        variance,
        locations: None,
        source: SummarySource::Oracle,
        model: ModelEcho {
            alpha: spec.alpha(),
            s: spec.s(),
            t: forward.t(),
            sigma: noise.sigma(),
            p: forward.p(),
        },
        truncation_tail: None,
    })
}

/// Oracle posterior on the sphere, truncated at the degree of `cont`, at
/// arbitrary query points.
pub fn continuum_posterior(
    y: &[f64],
    forward: &ForwardModel,
    cont: &ContinuumBasis,
    spec: &PriorSpec,
    noise: &NoiseModel,
    queries: &[Vec<f64>],
) -> Result<PosteriorSummary> {
    require_gaussian(noise)?;
    let eig = cont.eigenvalues();
    let spec_full = PriorSpec::new(spec.alpha(), spec.s(), 0, crate::prior::Truncation::Untruncated)?
        .excluding_constant(spec.excludes_constant());
    let kernels = CovarianceKernels::new(&spec_full, &eig, forward.t())?;
    let post = GaussianPosterior::new(forward, kernels.prior_variances(), y, noise.sigma())?;
    let mut mean = Vec::with_capacity(queries.len());
    let mut variance = Vec::with_capacity(queries.len());
    for q in queries {
        let f = cont.evaluate(q)?;
        mean.push(post.mean_at(&f));
        variance.push(post.variance_at(&f));
    }
    Ok(PosteriorSummary {
        mean,
        variance,
        locations: Some(queries.to_vec()),
        source: SummarySource::Oracle,
        model: ModelEcho {
            alpha: spec.alpha(),
            s: spec.s(),
            t: forward.t(),
            sigma: noise.sigma(),
            p: forward.p(),
        },
        truncation_tail: Some(continuum_tail_variance(spec.alpha(), spec.s(), cont.l_max())),
    })
}

/// Differences between two summaries at matched locations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    /// `‖m_a − m_b‖ / ‖m_b‖` in the weighted `L²` norm.
    pub relative_mean_error: f64,
    pub max_abs_mean_difference: f64,
    pub max_abs_variance_difference: f64,
    pub relative_variance_error: f64,
}

/// Compares `a` against the reference `b`; `weights` default to uniform
/// (the empirical measure on the nodes).
pub fn compare(a: &PosteriorSummary, b: &PosteriorSummary, weights: Option<&[f64]>) -> Result<ComparisonReport> {
    let n = b.mean.len();
    if a.mean.len() != n || a.variance.len() != b.variance.len() {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: a.mean.len(),
        });
    }
    if let (Some(la), Some(lb)) = (&a.locations, &b.locations) {
        let same = la.len() == lb.len()
            && la
                .iter()
                .zip(lb)
                .all(|(x, y)| x.iter().zip(y).all(|(p, q)| (p - q).abs() <= 1e-12));
        if !same {
            return Err(invalid("locations", "summaries are evaluated at different points"));
        }
    }
    let uniform = vec![1.0 / n.max(1) as f64; n];
    let w = weights.unwrap_or(&uniform);
    if w.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: w.len() });
    }
    let rel = |x: &[f64], y: &[f64]| -> f64 {
        let num: f64 = x.iter().zip(y).zip(w).map(|((p, q), w)| w * (p - q) * (p - q)).sum();
        let den: f64 = y.iter().zip(w).map(|(q, w)| w * q * q).sum();
        if den == 0.0 {
            if num == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (num / den).sqrt()
        }
    };
    let max_abs = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    Ok(ComparisonReport {
        relative_mean_error: rel(&a.mean, &b.mean),
        max_abs_mean_difference: max_abs(&a.mean, &b.mean),
        max_abs_variance_difference: max_abs(&a.variance, &b.variance),
        relative_variance_error: rel(&a.variance, &b.variance),
    })
}

/// Sample mean and pointwise variance of a chain mapped to the cloud nodes.
pub fn chain_summary(
    chain: &crate::sampler::ChainResult,
    basis: &SpectralBasis,
    model: ModelEcho,
) -> Result<PosteriorSummary> {
    let mean_coeffs = crate::sampler::posterior_mean_coefficients(chain)?;
    let k = chain.k;
    let count = chain.len() as f64;
    let mut cov = vec![0.0; k * k];
    for s in chain.iter() {
        for a in 0..k {
            let da = s[a] - mean_coeffs[a];
            for b in 0..k {
                cov[a * k + b] += da * (s[b] - mean_coeffs[b]);
            }
        }
    }
    cov.iter_mut().for_each(|c| *c /= count);
    let mut mean = Vec::with_capacity(basis.n());
    let mut variance = Vec::with_capacity(basis.n());
    for node in 0..basis.n() {
        let f = basis.node_features(node, k);
        mean.push(mean_coeffs.iter().zip(&f).map(|(a, b)| a * b).sum());
        let mut v = 0.0;
        for a in 0..k {
            for b in 0..k {
                v += f[a] * cov[a * k + b] * f[b];
            }
        }
        variance.push(v.max(0.0));
    }
    Ok(PosteriorSummary {
        mean,
        variance,
        locations: None,
        source: SummarySource::Chain,
        model,
        truncation_tail: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::PointCloud;
    use crate::forward::{CapQuadrature, ObservationDesign, ObservationMode};
    use crate::graph::{build_eps_graph, calibrated_laplacian, continuum_calibration, default_eps, SPHERE_AREA};
    use crate::likelihood::synthesize_labels;
    use crate::prior::{sample_graph_prior, Truncation};
    use crate::spectral::eigendecompose;
    use proptest::prelude::*;

    struct Fixture {
        basis: SpectralBasis,
        spec: PriorSpec,
        forward: ForwardModel,
        y: Vec<f64>,
    }

    fn fixture(n: usize, p: usize, k: usize, t: f64, sigma: f64, seed: u64) -> Fixture {
        let cloud = PointCloud::sample_sphere(n, seed).unwrap();
        let eps = default_eps(n, 2, 2.0).unwrap();
        let lap = calibrated_laplacian(&build_eps_graph(&cloud, eps).unwrap(), continuum_calibration(n, SPHERE_AREA));
        let basis = eigendecompose(&lap, k).unwrap();
        let spec = PriorSpec::new(1.0, 5.0, 2, Truncation::Fixed(k)).unwrap();
        let design = ObservationDesign::first(p, n, ObservationMode::Pointwise).unwrap();
        let forward = ForwardModel::graph(&basis, k, t, &design, &cloud).unwrap();
        let truth = sample_graph_prior(&basis, &spec, seed + 100).unwrap();
        let clean = forward.apply(truth.coefficients().unwrap());
        let y = synthesize_labels(&clean, &NoiseModel::gaussian(sigma.max(1e-300)).unwrap(), seed);
        Fixture { basis, spec, forward, y }
    }

    /// Dense Gaussian elimination with partial pivoting, for cross-checks.
    fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for col in 0..n {
            let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
            a.swap(col, piv);
            b.swap(col, piv);
            for row in col + 1..n {
                let f = a[row][col] / a[col][col];
                for c in col..n {
                    a[row][c] -= f * a[col][c];
                }
                b[row] -= f * b[col];
            }
        }
        let mut x = vec![0.0; n];
        for row in (0..n).rev() {
            let s: f64 = (row + 1..n).map(|c| a[row][c] * x[c]).sum();
            x[row] = (b[row] - s) / a[row][row];
        }
        x
    }

    #[test]
    fn kernel_form_matches_coefficient_form() {
        let (n, p, k, t, sigma) = (120, 15, 20, 0.1, 0.1);
        let fx = fixture(n, p, k, t, sigma, 1);
        let noise = NoiseModel::gaussian(sigma).unwrap();
        let summary = graph_posterior(&fx.y, &fx.forward, &fx.basis, &fx.spec, &noise).unwrap();
        let kernels = CovarianceKernels::new(&fx.spec, fx.basis.eigenvalues(), t).unwrap();
        let feat = |i: usize| fx.basis.node_features(i, k);
        let c: Vec<Vec<f64>> = (0..p)
            .map(|a| {
                (0..p)
                    .map(|b| kernels.c_v(&feat(a), &feat(b)) + if a == b { sigma * sigma } else { 0.0 })
                    .collect()
            })
            .collect();
        let alpha = solve_dense(c.clone(), fx.y.clone());
        for q in [0usize, 3, 50, 119] {
            let cw: Vec<f64> = (0..p).map(|j| kernels.c_w(&feat(q), &feat(j))).collect();
            let mean: f64 = cw.iter().zip(&alpha).map(|(a, b)| a * b).sum();
            assert!((mean - summary.mean[q]).abs() < 1e-10, "mean at {q}");
            let sol = solve_dense(c.clone(), cw.clone());
            let var = kernels.c_u(&feat(q), &feat(q)) - cw.iter().zip(&sol).map(|(a, b)| a * b).sum::<f64>();
            assert!((var - summary.variance[q]).abs() < 1e-10, "variance at {q}");
        }
    }

    #[test]
    fn zero_data_gives_zero_mean() {
        let fx = fixture(100, 10, 12, 0.1, 0.1, 2);
        let noise = NoiseModel::gaussian(0.1).unwrap();
        let s = graph_posterior(&vec![0.0; 10], &fx.forward, &fx.basis, &fx.spec, &noise).unwrap();
        assert!(s.mean.iter().all(|&m| m == 0.0));
    }

    #[test]
    fn huge_noise_returns_the_prior() {
        let fx = fixture(100, 10, 12, 0.1, 0.1, 3);
        let noise = NoiseModel::gaussian(1e8).unwrap();
        let s = graph_posterior(&fx.y, &fx.forward, &fx.basis, &fx.spec, &noise).unwrap();
        let kernels = CovarianceKernels::new(&fx.spec, fx.basis.eigenvalues(), 0.1).unwrap();
        for node in 0..100 {
            let f = fx.basis.node_features(node, 12);
            assert!(s.mean[node].abs() < 1e-10);
            assert!((s.variance[node] - kernels.c_u(&f, &f)).abs() < 1e-10);
        }
    }

    #[test]
    fn noiseless_observation_pins_labeled_nodes() {
        let fx = fixture(150, 10, 40, 0.0, 0.0, 4);
        let noise = NoiseModel::gaussian(1e-12).unwrap();
        let s = graph_posterior(&fx.y, &fx.forward, &fx.basis, &fx.spec, &noise).unwrap();
        for j in 0..10 {
            assert!(s.variance[j] < 1e-8, "node {j}: {}", s.variance[j]);
            assert!((s.mean[j] - fx.y[j]).abs() < 1e-5);
        }
    }

    #[test]
    fn variance_shrinks_and_ignores_data() {
        let fx = fixture(120, 12, 15, 0.1, 0.1, 5);
        let noise = NoiseModel::gaussian(0.1).unwrap();
        let a = graph_posterior(&fx.y, &fx.forward, &fx.basis, &fx.spec, &noise).unwrap();
        let other: Vec<f64> = fx.y.iter().map(|v| 3.0 * v - 1.0).collect();
        let b = graph_posterior(&other, &fx.forward, &fx.basis, &fx.spec, &noise).unwrap();
        assert_eq!(a.variance, b.variance);
        let kernels = CovarianceKernels::new(&fx.spec, fx.basis.eigenvalues(), 0.1).unwrap();
        for node in 0..120 {
            let f = fx.basis.node_features(node, 15);
            assert!(a.variance[node] >= 0.0);
            assert!(a.variance[node] <= kernels.c_u(&f, &f) + 1e-14);
        }
    }

    #[test]
    fn probit_is_rejected() {
        let fx = fixture(60, 5, 6, 0.1, 0.1, 6);
        let noise = NoiseModel::probit(0.1).unwrap();
        assert!(matches!(
            graph_posterior(&fx.y, &fx.forward, &fx.basis, &fx.spec, &noise),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn kernels_at_zero_time_coincide() {
        let fx = fixture(60, 5, 8, 0.0, 0.1, 7);
        let k0 = CovarianceKernels::new(&fx.spec, fx.basis.eigenvalues(), 0.0).unwrap();
        let kt = CovarianceKernels::new(&fx.spec, fx.basis.eigenvalues(), 0.3).unwrap();
        let (f, g) = (fx.basis.node_features(1, 8), fx.basis.node_features(2, 8));
        assert_eq!(k0.c_u(&f, &g), k0.c_v(&f, &g));
        assert_eq!(k0.c_u(&f, &g), k0.c_w(&f, &g));
        assert!(kt.c_v(&f, &f) <= kt.c_u(&f, &f));
        assert!((kt.c_v(&f, &g) - kt.c_v(&g, &f)).abs() < 1e-12);
    }

    #[test]
    fn empirical_prior_covariance_matches_c_u() {
        let fx = fixture(100, 5, 10, 0.1, 0.1, 8);
        let kernels = CovarianceKernels::new(&fx.spec, fx.basis.eigenvalues(), 0.1).unwrap();
        let (i, j) = (4usize, 9usize);
        let draws = 10_000;
        let mut acc = 0.0;
        for d in 0..draws {
            let u = sample_graph_prior(&fx.basis, &fx.spec, 5000 + d).unwrap();
            acc += u.values()[i] * u.values()[j];
        }
        let (fi, fj) = (fx.basis.node_features(i, 10), fx.basis.node_features(j, 10));
        let exact = kernels.c_u(&fi, &fj);
        let tol = 5.0 * (2.0 * kernels.c_u(&fi, &fi) * kernels.c_u(&fj, &fj) / draws as f64).sqrt();
        assert!((acc / draws as f64 - exact).abs() < tol);
    }

    #[test]
    fn continuum_posterior_properties() {
        let cont = ContinuumBasis::new(6);
        let cloud = PointCloud::sample_sphere(30, 9).unwrap();
        let design = ObservationDesign::first(30, 30, ObservationMode::Pointwise).unwrap();
        let fm = ForwardModel::continuum(&cont, 0.1, &design, &cloud, &CapQuadrature::default()).unwrap();
        let spec = PriorSpec::new(1.0, 5.0, 2, Truncation::Untruncated).unwrap();
        let noise = NoiseModel::gaussian(0.1).unwrap();
        let queries: Vec<Vec<f64>> = (0..5).map(|i| cloud.point(i).to_vec()).collect();
        let zero = continuum_posterior(&[0.0; 30], &fm, &cont, &spec, &noise, &queries).unwrap();
        assert!(zero.mean.iter().all(|&m| m == 0.0));
        let y: Vec<f64> = (0..30).map(|i| (i as f64 * 0.37).sin()).collect();
        let y2: Vec<f64> = y.iter().map(|v| 2.0 * v).collect();
        let a = continuum_posterior(&y, &fm, &cont, &spec, &noise, &queries).unwrap();
        let b = continuum_posterior(&y2, &fm, &cont, &spec, &noise, &queries).unwrap();
        for (x, z) in a.mean.iter().zip(&b.mean) {
            assert!((2.0 * x - z).abs() < 1e-12);
        }
        assert!(a.truncation_tail.unwrap() > 0.0);
    }

    #[test]
    fn continuum_mean_settles_as_degree_grows() {
        let cloud = PointCloud::sample_sphere(25, 10).unwrap();
        let design = ObservationDesign::first(25, 25, ObservationMode::Pointwise).unwrap();
        let spec = PriorSpec::new(1.0, 5.0, 2, Truncation::Untruncated).unwrap();
        let noise = NoiseModel::gaussian(0.1).unwrap();
        let y: Vec<f64> = (0..25).map(|i| cloud.point(i)[2] + 0.5 * cloud.point(i)[0]).collect();
        let queries: Vec<Vec<f64>> = (0..25).map(|i| cloud.point(i).to_vec()).collect();
        let means: Vec<Vec<f64>> = [8usize, 12, 16, 20]
            .iter()
            .map(|&l| {
                let cont = ContinuumBasis::new(l);
                let fm = ForwardModel::continuum(&cont, 0.05, &design, &cloud, &CapQuadrature::default()).unwrap();
                continuum_posterior(&y, &fm, &cont, &spec, &noise, &queries).unwrap().mean
            })
            .collect();
        let gaps: Vec<f64> = means
            .windows(2)
            .map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .collect();
        assert!(gaps[2] < gaps[0], "{gaps:?}");
        assert!(gaps[2] < 1e-2, "{gaps:?}");
    }

    #[test]
    fn comparison_reports() {
        let echo = ModelEcho { alpha: 1.0, s: 5.0, t: 0.1, sigma: 0.1, p: 3 };
        let a = PosteriorSummary {
            mean: vec![1.0, 2.0, 3.0],
            variance: vec![0.1; 3],
            locations: None,
            source: SummarySource::Oracle,
            model: echo,
            truncation_tail: None,
        };
        let r = compare(&a, &a, None).unwrap();
        assert_eq!(r.relative_mean_error, 0.0);
        assert_eq!(r.max_abs_mean_difference, 0.0);
        let mut b = a.clone();
        b.mean.iter_mut().for_each(|m| *m += 0.25);
        let r = compare(&b, &a, None).unwrap();
        assert!((r.max_abs_mean_difference - 0.25).abs() < 1e-15);
        let mut c = a.clone();
        c.mean.pop();
        assert!(compare(&c, &a, None).is_err());
        let csv = a.to_csv_string();
        assert_eq!(csv.lines().next().unwrap(), "index,mean,variance");
        assert_eq!(csv.lines().count(), 4);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn posterior_covariance_is_symmetric(seed in 0u64..300, i in 0usize..60, j in 0usize..60) {
            let fx = fixture(60, 8, 10, 0.1, 0.1, seed);
            let noise = NoiseModel::gaussian(0.1).unwrap();
            let kernels = CovarianceKernels::new(&fx.spec, fx.basis.eigenvalues(), 0.1).unwrap();
            let post = GaussianPosterior::new(&fx.forward, kernels.prior_variances(), &fx.y, noise.sigma()).unwrap();
            let (fi, fj) = (fx.basis.node_features(i, 10), fx.basis.node_features(j, 10));
            prop_assert!((post.covariance(&fi, &fj) - post.covariance(&fj, &fi)).abs() < 1e-12);
            prop_assert!((kernels.c_w(&fi, &fj) - kernels.c_w(&fj, &fi)).abs() < 1e-12);
        }
    }
}
