//! Parameter sweeps and studies built on [`crate::pipeline`]. Each returns
//! plain rows so callers can tabulate, plot or assert on them.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{invalid, Result};
use crate::forward::{CapQuadrature, ForwardModel, ObservationDesign};
use crate::graph::{build_eps_graph, calibrated_laplacian, continuum_calibration, default_eps, SPHERE_AREA};
use crate::interpolate::{knn_interpolate, l2_distance, sphere_grid};
use crate::oracle::{compare, ComparisonReport, CovarianceKernels, GaussianPosterior, PosteriorSummary};
use crate::pipeline::{extended_cloud, LabelRule, Problem, ProblemSpec};
use crate::prior::{regularity_experiment, PriorSpec, RegularityRow, RegularitySettings, Truncation};
use crate::sampler::{acceptance_rate, functional_trace, iact, merge, ChainResult, SamplerConfig};
use crate::spectral::{eigendecompose, spectral_error, ContinuumBasis, SpectralBasis};

/// Median of a non-empty slice (mean of the middle pair for even length).
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty slice");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

/// Graph spectrum on a sphere sample next to `l(l+1)`.
#[derive(Debug, Clone)]
pub struct SpectrumResult {
    pub n: usize,
    pub eps: f64,
    pub seed: u64,
    pub basis: SpectralBasis,
    pub continuum: Vec<f64>,
    /// Mean of `|1 − λ_i^n/λ_i|` over `i = 2..=count`.
    pub mean_relative_error: f64,
}

impl SpectrumResult {
    pub fn to_csv_string(&self) -> String {
        self.basis.spectrum_csv(Some(&self.continuum))
    }
}

/// Leading `count` eigenvalues of the calibrated graph Laplacian for
/// `ε = mult · n^{-1/4}`.
pub fn spectrum(n: usize, mult: f64, seed: u64, count: usize) -> Result<SpectrumResult> {
    let cloud = PointCloud::sample_sphere(n, seed)?;
    let eps = default_eps(n, 2, mult)?;
    let lap = calibrated_laplacian(&build_eps_graph(&cloud, eps)?, continuum_calibration(n, SPHERE_AREA));
    let basis = eigendecompose(&lap, count)?;
    let mut l_max = 0;
    while (l_max + 1) * (l_max + 1) < count {
        l_max += 1;
    }
    let continuum: Vec<f64> = ContinuumBasis::new(l_max).eigenvalues().into_iter().take(count).collect();
    let errors = spectral_error(&basis, &ContinuumBasis::new(l_max), count)?;
    let mean_relative_error = errors.iter().sum::<f64>() / errors.len().max(1) as f64;
    Ok(SpectrumResult {
        n,
        eps,
        seed,
        basis,
        continuum,
        mean_relative_error,
    })
}

/// Maximum oscillation of normalized prior draws for each `s`, on the
/// calibrated graph with its full spectrum.
pub fn regularity(n: usize, mult: f64, seed: u64, settings: &RegularitySettings) -> Result<Vec<RegularityRow>> {
    let cloud = PointCloud::sample_sphere(n, seed)?;
    let eps = default_eps(n, 2, mult)?;
    let lap = calibrated_laplacian(&build_eps_graph(&cloud, eps)?, continuum_calibration(n, SPHERE_AREA));
    let basis = eigendecompose(&lap, n)?;
    regularity_experiment(&basis, &cloud, eps, settings)
}

/// Settings for [`acceptance_sweep`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSettings {
    pub ns: Vec<usize>,
    /// Replicate seeds; replicate `r` uses cloud seed `r`, data seed `r + 1`
    /// and chain seed `sampler.seed + r`.
    pub seeds: Vec<u64>,
    /// Template problem; `n`, seeds and (for [`LabelRule::All`]) `p` are
    /// filled in per sweep point.
    pub problem: ProblemSpec,
    pub sampler: SamplerConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub p: usize,
    pub k: usize,
    pub seed: u64,
    pub acceptance_rate: f64,
    pub mean_acceptance_probability: f64,
    /// IACT of the nodal value at the first cloud point over retained
    /// samples, in iterations (thinning undone).
    pub iact_first_node: f64,
}

/// Problem for one sweep point.
pub fn sweep_problem(template: &ProblemSpec, n: usize, seed: u64) -> Result<ProblemSpec> {
    let mut spec = template.clone();
    spec.n = n;
    spec.cloud_seed = seed;
    spec.data_seed = seed.wrapping_add(1);
    if let LabelRule::First { p } = spec.labels {
        if p > n {
            return Err(invalid("p", format!("{p} labels exceed n={n}")));
        }
    }
    Ok(spec)
}

/// Runs one pCN chain per `(n, seed)` and records acceptance and IACT.
/// Semi-supervised (`p` fixed) and supervised (`p = n`) sweeps differ only
/// in the label rule of the template.
pub fn acceptance_sweep(settings: &SweepSettings) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(settings.ns.len() * settings.seeds.len());
    for &n in &settings.ns {
        for &seed in &settings.seeds {
            rows.push(sweep_point(settings, n, seed)?);
        }
    }
    Ok(rows)
}

pub fn sweep_point(settings: &SweepSettings, n: usize, seed: u64) -> Result<SweepRow> {
    let prob = Problem::build(&sweep_problem(&settings.problem, n, seed)?)?;
    let mut cfg = settings.sampler.clone();
    cfg.seed = cfg.seed.wrapping_add(seed);
    let chain = prob.run_pcn(&cfg)?;
    let first = prob.basis.node_features(0, prob.k());
    let trace = functional_trace(&chain, |a| a.iter().zip(&first).map(|(x, y)| x * y).sum());
    log::info!("sweep point n={n} seed={seed}: acceptance {:.4}", acceptance_rate(&chain));
    Ok(SweepRow {
        n,
        p: prob.design.p(),
        k: prob.k(),
        seed,
        acceptance_rate: acceptance_rate(&chain),
        mean_acceptance_probability: chain.mean_acceptance_probability,
        iact_first_node: iact(&trace)? * cfg.thinning as f64,
    })
}

/// Per-`n` medians over replicate seeds, in the order of first appearance.
pub fn sweep_medians(rows: &[SweepRow]) -> Vec<SweepRow> {
    let mut ns: Vec<usize> = Vec::new();
    for r in rows {
        if !ns.contains(&r.n) {
            ns.push(r.n);
        }
    }
    ns.into_iter()
        .map(|n| {
            let group: Vec<&SweepRow> = rows.iter().filter(|r| r.n == n).collect();
            let pick = |f: fn(&SweepRow) -> f64| median(&group.iter().map(|r| f(r)).collect::<Vec<_>>());
            SweepRow {
                n,
                p: group[0].p,
                k: group[0].k,
                seed: group[0].seed,
                acceptance_rate: pick(|r| r.acceptance_rate),
                mean_acceptance_probability: pick(|r| r.mean_acceptance_probability),
                iact_first_node: pick(|r| r.iact_first_node),
            }
        })
        .collect()
}

/// Columns `n,p,k_n,seed,acceptance_rate,mean_acceptance_probability,iact`.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("n,p,k_n,seed,acceptance_rate,mean_acceptance_probability,iact\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{:.6},{:.6},{:.6e}",
            r.n, r.p, r.k, r.seed, r.acceptance_rate, r.mean_acceptance_probability, r.iact_first_node
        );
    }
    out
}

/// Pools `chains` independent pCN runs (chain seeds `sampler.seed + c`) on
/// one problem and compares their summary with the closed-form posterior.
pub fn oracle_comparison(
    prob: &Problem,
    sampler: &SamplerConfig,
    chains: usize,
) -> Result<(ChainResult, PosteriorSummary, PosteriorSummary, ComparisonReport)> {
    if chains == 0 {
        return Err(invalid("chains", "need at least one chain"));
    }
    let runs = (0..chains as u64)
        .map(|c| {
            let mut cfg = sampler.clone();
            cfg.seed = cfg.seed.wrapping_add(c);
            prob.run_pcn(&cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let pooled = merge(&runs)?;
    let chain_summary = crate::oracle::chain_summary(&pooled, &prob.basis, prob.echo())?;
    let oracle = prob.oracle()?;
    let report = compare(&chain_summary, &oracle, None)?;
    Ok((pooled, chain_summary, oracle, report))
}

/// Settings for [`consistency_study`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencySettings {
    pub ns: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Template; `labels` must be [`LabelRule::First`].
    pub problem: ProblemSpec,
    pub l_max: usize,
    pub grid_size: usize,
    pub grid_seed: u64,
    /// Neighbours of the interpolant.
    pub knn: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRow {
    pub seed: u64,
    pub n: usize,
    pub distance: f64,
}

/// For each seed, fixes `p` labeled points and their data, grows the cloud
/// with unlabeled points, and measures the grid `L²` distance between the
/// interpolated graph posterior mean and the continuum posterior mean.
pub fn consistency_study(settings: &ConsistencySettings) -> Result<Vec<ConsistencyRow>> {
    let LabelRule::First { p } = settings.problem.labels else {
        return Err(invalid("labels", "the consistency study needs a fixed labeled set"));
    };
    let grid = sphere_grid(settings.grid_size, settings.grid_seed)?;
    let cont = ContinuumBasis::new(settings.l_max);
    let features = grid.iter().map(|x| cont.evaluate(x)).collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for &seed in &settings.seeds {
        let labeled = PointCloud::sample_sphere(p, seed)?;
        let mut spec = settings.problem.clone();
        spec.data_seed = seed.wrapping_add(1);
        let design = ObservationDesign::first(p, p, spec.mode)?;
        let fm = ForwardModel::continuum(&cont, spec.t, &design, &labeled, &CapQuadrature::default())?;
        let mut continuum_mean: Option<Vec<f64>> = None;
        for &n in &settings.ns {
            spec.n = n;
            let cloud = extended_cloud(&labeled, n, seed.wrapping_add(2))?;
            let prob = Problem::on_cloud(&spec, cloud)?;
            if continuum_mean.is_none() {
                let cspec = PriorSpec::new(spec.alpha, spec.s, 2, Truncation::Untruncated)?;
                let kernels = CovarianceKernels::new(&cspec, &cont.eigenvalues(), spec.t)?;
                let post = GaussianPosterior::new(&fm, kernels.prior_variances(), &prob.data.y, spec.noise.sigma())?;
                continuum_mean = Some(features.iter().map(|f| post.mean_at(f)).collect());
            }
            let graph_mean = prob.oracle()?.mean;
            let pushed = knn_interpolate(&graph_mean, &prob.cloud, settings.knn, &grid)?;
            let distance = l2_distance(&pushed, continuum_mean.as_deref().unwrap_or_default())?;
            rows.push(ConsistencyRow { seed, n, distance });
        }
    }
    Ok(rows)
}

pub fn consistency_csv(rows: &[ConsistencyRow]) -> String {
    let mut out = String::from("seed,n,distance\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{:.12e}", r.seed, r.n, r.distance);
    }
    out
}
