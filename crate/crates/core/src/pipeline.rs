//! End-to-end assembly of a graph learning problem on the unit sphere:
//! cloud, ε-graph, Laplacian, eigenbasis, labels, synthetic data and the
//! sampler potential.

use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{invalid, Result};
use crate::forward::{observe_continuum, heat_continuum, CapQuadrature, ForwardModel, ObservationDesign, ObservationMode};
use crate::graph::{build_eps_graph, calibrated_laplacian, continuum_calibration, laplacian, GeometricGraph, SPHERE_AREA};
use crate::likelihood::{synthesize_data, LabeledData, ModelPotential, NoiseModel};
use crate::oracle::{graph_posterior, ModelEcho, PosteriorSummary};
use crate::prior::{default_truncation, PriorSpec, Truncation};
use crate::sampler::{pcn, ChainResult, SamplerConfig};
use crate::spectral::{eigendecompose, ContinuumBasis, SpectralBasis};

/// Terms `(l, order, coefficient)` of the ground truth `u†`.
pub const GROUND_TRUTH_TERMS: [(usize, i64, f64); 4] = [(0, 0, 0.3), (1, 0, 0.8), (2, 1, 0.6), (3, -2, 0.4)];

/// `u†` as a flattened harmonic coefficient vector of degree `l_max >= 3`.
pub fn ground_truth_coefficients(l_max: usize) -> Result<Vec<f64>> {
    if l_max < 3 {
        return Err(invalid("l_max", "the ground truth needs degree 3"));
    }
    let mut c = vec![0.0; (l_max + 1) * (l_max + 1)];
    for (l, order, v) in GROUND_TRUTH_TERMS {
        c[l * l + (order + l as i64) as usize] = v;
    }
    Ok(c)
}

pub fn ground_truth(point: &[f64]) -> Result<f64> {
    ContinuumBasis::new(3).expand(&ground_truth_coefficients(3)?, point)
}

/// How the connectivity follows `n` on an `m`-dimensional manifold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum EpsRule {
    /// `ε = mult · n^{-1/(m+2)}`.
    Scaled { mult: f64 },
    Fixed { eps: f64 },
}

impl EpsRule {
    pub fn eps(&self, n: usize, m: usize) -> Result<f64> {
        match *self {
            EpsRule::Scaled { mult } => crate::graph::default_eps(n, m, mult),
            EpsRule::Fixed { eps } if eps.is_finite() && eps > 0.0 => Ok(eps),
            EpsRule::Fixed { eps } => Err(invalid("eps", format!("must be positive, got {eps}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum TruncationRule {
    Fixed { k: usize },
    /// `⌊ε^{-m} / ln n⌋`, at least 2.
    Weyl,
}

impl TruncationRule {
    pub fn k(&self, n: usize, eps: f64, m: usize) -> Result<usize> {
        match *self {
            TruncationRule::Fixed { k } if k >= 1 && k <= n => Ok(k),
            TruncationRule::Fixed { k } => Err(invalid("k_n", format!("need 1 <= k_n <= n={n}, got {k}"))),
            TruncationRule::Weyl => default_truncation(n, eps, m),
        }
    }
}

/// Which nodes carry labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum LabelRule {
    /// The first `p` nodes (a uniform subset, since nodes are i.i.d.).
    First { p: usize },
    /// Every node, `p = n`.
    All,
}

impl LabelRule {
    pub fn p(&self, n: usize) -> usize {
        match *self {
            LabelRule::First { p } => p,
            LabelRule::All => n,
        }
    }
}

/// Scaling of the graph Laplacian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorScaling {
    /// Multiplied by `2 n |S²|` so the spectrum approximates `l(l+1)`.
    Continuum,
    /// `D − W` with the rescaled kernel weights as they stand.
    Literal,
}

/// Everything needed to build one problem instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub n: usize,
    pub cloud_seed: u64,
    pub eps: EpsRule,
    pub scaling: OperatorScaling,
    pub alpha: f64,
    pub s: f64,
    pub truncation: TruncationRule,
    pub t: f64,
    pub noise: NoiseModel,
    pub labels: LabelRule,
    pub mode: ObservationMode,
    pub data_seed: u64,
    /// Quadrature for ball-average observations of the ground truth.
    pub quadrature: CapQuadrature,
}

impl ProblemSpec {
    /// The semi-supervised Gaussian setting used throughout the experiments:
    /// `α = 1`, `s = 5`, `ε = 2 n^{-1/4}`, `t = 0.1`, `σ = 0.1`, `p = 200`.
    pub fn standard(n: usize, seed: u64) -> Result<Self> {
        Ok(Self {
            n,
            cloud_seed: seed,
            eps: EpsRule::Scaled { mult: 2.0 },
            scaling: OperatorScaling::Continuum,
            alpha: 1.0,
            s: 5.0,
            truncation: TruncationRule::Fixed { k: 50 },
            t: 0.1,
            noise: NoiseModel::gaussian(0.1)?,
            labels: LabelRule::First { p: 200.min(n) },
            mode: ObservationMode::Pointwise,
            data_seed: seed.wrapping_add(1),
            quadrature: CapQuadrature::default(),
        })
    }
}

/// Assembled problem.
#[derive(Debug, Clone)]
pub struct Problem {
    pub spec: ProblemSpec,
    pub cloud: PointCloud,
    pub graph: GeometricGraph,
    pub eps: f64,
    pub basis: SpectralBasis,
    pub prior: PriorSpec,
    pub design: ObservationDesign,
    pub data: LabeledData,
    pub forward: ForwardModel,
    pub scales: Vec<f64>,
}

impl Problem {
    pub fn build(spec: &ProblemSpec) -> Result<Self> {
        let cloud = PointCloud::sample_sphere(spec.n, spec.cloud_seed)?;
        Self::on_cloud(spec, cloud)
    }

    pub fn on_cloud(spec: &ProblemSpec, cloud: PointCloud) -> Result<Self> {
        let n = cloud.len();
        let m = cloud.intrinsic_dim();
        let eps = spec.eps.eps(n, m)?;
        let k = spec.truncation.k(n, eps, m)?;
        let prior = PriorSpec::new(spec.alpha, spec.s, m, Truncation::Fixed(k))?;
        let p = spec.labels.p(n);
        if p == 0 || p > n {
            return Err(invalid("p", format!("need 1 <= p <= n={n}, got {p}")));
        }
        let graph = build_eps_graph(&cloud, eps)?;
        let lap = match spec.scaling {
            OperatorScaling::Continuum => calibrated_laplacian(&graph, continuum_calibration(n, SPHERE_AREA)),
            OperatorScaling::Literal => laplacian(&graph),
        };
        let basis = eigendecompose(&lap, k)?;
        let scales = prior.scales(basis.eigenvalues())?;
        let design = ObservationDesign::first(p, n, spec.mode)?;
        let forward = ForwardModel::graph(&basis, scales.len(), spec.t, &design, &cloud)?;
        let clean = clean_observations(&cloud, &design, spec.t, &spec.quadrature)?;
        let data = synthesize_data(&clean, design.indices(), spec.t, spec.mode, &spec.noise, spec.data_seed)?;
        Ok(Self {
            spec: spec.clone(),
            cloud,
            graph,
            eps,
            basis,
            prior,
            design,
            data,
            forward,
            scales,
        })
    }

    pub fn k(&self) -> usize {
        self.scales.len()
    }

    pub fn potential(&self) -> Result<ModelPotential> {
        ModelPotential::new(self.forward.clone(), self.data.y.clone(), self.spec.noise)
    }

    pub fn run_pcn(&self, config: &SamplerConfig) -> Result<ChainResult> {
        let pot = self.potential()?;
        pcn(&self.scales, |a| pot.evaluate(a), config)
    }

    pub fn echo(&self) -> ModelEcho {
        ModelEcho {
            alpha: self.spec.alpha,
            s: self.spec.s,
            t: self.spec.t,
            sigma: self.spec.noise.sigma(),
            p: self.design.p(),
        }
    }

    /// Closed-form posterior at the nodes (Gaussian noise only).
    pub fn oracle(&self) -> Result<PosteriorSummary> {
        graph_posterior(&self.data.y, &self.forward, &self.basis, &self.prior, &self.spec.noise)
    }
}

/// The points of `labeled` followed by `n − labeled.len()` fresh uniform
/// sphere points, so that labels and data stay fixed while `n` grows.
pub fn extended_cloud(labeled: &PointCloud, n: usize, seed: u64) -> Result<PointCloud> {
    let p = labeled.len();
    if n < p {
        return Err(invalid("n", format!("must be at least the {p} labeled points")));
    }
    let mut coords = labeled.coords().to_vec();
    if n > p {
        coords.extend_from_slice(PointCloud::sample_sphere(n - p, seed)?.coords());
    }
    PointCloud::new(coords, labeled.dim(), labeled.intrinsic_dim())
}

/// `G(u†)` at the labeled nodes, through the continuum heat semigroup.
pub fn clean_observations(
    cloud: &PointCloud,
    design: &ObservationDesign,
    t: f64,
    quad: &CapQuadrature,
) -> Result<Vec<f64>> {
    let cont = ContinuumBasis::new(3);
    let heated = heat_continuum(&ground_truth_coefficients(3)?, &cont, t)?;
    Ok(observe_continuum(&heated, &cont, design, cloud, quad)?.values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::sphere_harmonic;

    #[test]
    fn ground_truth_expansion() {
        let x = [0.6, 0.0, 0.8];
        let direct = 0.3 * sphere_harmonic(0, 0, &x).unwrap()
            + 0.8 * sphere_harmonic(1, 0, &x).unwrap()
            + 0.6 * sphere_harmonic(2, 1, &x).unwrap()
            + 0.4 * sphere_harmonic(3, -2, &x).unwrap();
        assert!((ground_truth(&x).unwrap() - direct).abs() < 1e-14);
        assert!(ground_truth_coefficients(2).is_err());
    }

    #[test]
    fn clean_data_at_time_zero_is_the_truth() {
        let cloud = PointCloud::sample_sphere(20, 1).unwrap();
        let design = ObservationDesign::first(5, 20, ObservationMode::Pointwise).unwrap();
        let y = clean_observations(&cloud, &design, 0.0, &CapQuadrature::default()).unwrap();
        for j in 0..5 {
            assert!((y[j] - ground_truth(cloud.point(j)).unwrap()).abs() < 1e-14);
        }
        let late = clean_observations(&cloud, &design, 50.0, &CapQuadrature::default()).unwrap();
        // only the constant survives
        for v in late {
            assert!((v - 0.3).abs() < 1e-12);
        }
    }

    #[test]
    fn extension_keeps_the_labeled_prefix() {
        let labeled = PointCloud::sample_sphere(5, 1).unwrap();
        let big = extended_cloud(&labeled, 12, 2).unwrap();
        assert_eq!(big.len(), 12);
        assert_eq!(&big.coords()[..15], labeled.coords());
        assert!(extended_cloud(&labeled, 4, 2).is_err());
        assert_eq!(extended_cloud(&labeled, 5, 2).unwrap().coords(), labeled.coords());
    }

    #[test]
    fn rules() {
        assert!((EpsRule::Scaled { mult: 2.0 }.eps(10_000, 2).unwrap() - 0.2).abs() < 1e-12);
        assert!(EpsRule::Fixed { eps: 0.0 }.eps(10, 2).is_err());
        assert_eq!(TruncationRule::Fixed { k: 5 }.k(10, 0.3, 2).unwrap(), 5);
        assert!(TruncationRule::Fixed { k: 11 }.k(10, 0.3, 2).is_err());
        assert_eq!(LabelRule::All.p(17), 17);
        assert_eq!(LabelRule::First { p: 3 }.p(17), 3);
    }

    #[test]
    fn small_problem_assembles() {
        let mut spec = ProblemSpec::standard(150, 3).unwrap();
        spec.truncation = TruncationRule::Fixed { k: 10 };
        spec.labels = LabelRule::First { p: 20 };
        let prob = Problem::build(&spec).unwrap();
        assert_eq!(prob.k(), 10);
        assert_eq!(prob.data.y.len(), 20);
        assert_eq!(prob.forward.p(), 20);
        let pot = prob.potential().unwrap();
        assert!(pot.evaluate(&vec![0.0; 10]) > 0.0);
        let oracle = prob.oracle().unwrap();
        assert_eq!(oracle.mean.len(), 150);
        let json = serde_json::to_string(&spec).unwrap();
        let back: ProblemSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn rebuilding_is_deterministic() {
        let mut spec = ProblemSpec::standard(100, 4).unwrap();
        spec.truncation = TruncationRule::Fixed { k: 6 };
        spec.labels = LabelRule::First { p: 10 };
        let a = Problem::build(&spec).unwrap();
        let b = Problem::build(&spec).unwrap();
        assert_eq!(a.data.y, b.data.y);
        assert_eq!(a.basis.eigenvalues(), b.basis.eigenvalues());
    }
}
