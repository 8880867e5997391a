//! Heat-semigroup forward maps and observation operators, on the graph and on
//! the sphere, and the precomputed design matrix of their composition.

use faer::{Mat, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{invalid, Error, Result};
use crate::prior::CloudFunction;
use crate::spectral::{l2_norm, ContinuumBasis, SpectralBasis};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ObservationMode {
    Pointwise,
    /// Average over the closed ambient ball of radius `delta`.
    BallAverage { delta: f64 },
}

/// Labeled inputs and how the unknown function is read at them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationDesign {
    indices: Vec<usize>,
    mode: ObservationMode,
}

impl ObservationDesign {
    pub fn new(indices: Vec<usize>, mode: ObservationMode, n: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(invalid("p", "need at least one labeled point"));
        }
        let mut seen = vec![false; n];
        for &i in &indices {
            if i >= n {
                return Err(Error::IndexOutOfRange { index: i, len: n });
            }
            if seen[i] {
                return Err(invalid("indices", format!("index {i} is repeated")));
            }
            seen[i] = true;
        }
        if let ObservationMode::BallAverage { delta } = mode {
            if !(delta.is_finite() && delta > 0.0) {
                return Err(invalid("delta", format!("radius must be positive, got {delta}")));
            }
        }
        Ok(Self { indices, mode })
    }

    /// The first `p` points of an `n`-point cloud.
    pub fn first(p: usize, n: usize, mode: ObservationMode) -> Result<Self> {
        if p > n {
            return Err(invalid("p", format!("cannot label {p} of {n} points")));
        }
        Self::new((0..p).collect(), mode, n)
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn mode(&self) -> ObservationMode {
        self.mode
    }

    pub fn p(&self) -> usize {
        self.indices.len()
    }
}

/// `O_n` as a list of index sets; row `j` averages the nodal values in
/// `rows[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationOperator {
    n: usize,
    rows: Vec<Vec<usize>>,
}

impl ObservationOperator {
    pub fn new(design: &ObservationDesign, cloud: &PointCloud) -> Result<Self> {
        let n = cloud.len();
        let rows = match design.mode {
            ObservationMode::Pointwise => design
                .indices
                .iter()
                .map(|&i| {
                    if i < n {
                        Ok(vec![i])
                    } else {
                        Err(Error::IndexOutOfRange { index: i, len: n })
                    }
                })
                .collect::<Result<_>>()?,
            ObservationMode::BallAverage { delta } => design
                .indices
                .iter()
                .map(|&i| cloud.neighbors_within(i, delta))
                .collect::<Result<_>>()?,
        };
        Ok(Self { n, rows })
    }

    pub fn rows(&self) -> &[Vec<usize>] {
        &self.rows
    }

    pub fn apply(&self, values: &[f64]) -> Result<Vec<f64>> {
        if values.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: values.len(),
            });
        }
        Ok(self
            .rows
            .iter()
            .map(|row| row.iter().map(|&k| values[k]).sum::<f64>() / row.len() as f64)
            .collect())
    }

    /// Operator norm from `L²(γ_n)` to Euclidean `R^p`.
    pub fn norm(&self) -> Result<f64> {
        let p = self.rows.len();
        // with A the p×n averaging matrix, ‖O‖² = n·λ_max(A Aᵀ)
        let mut gram = Mat::<f64>::zeros(p, p);
        let mut mark = vec![0.0; self.n];
        for a in 0..p {
            for &k in &self.rows[a] {
                mark[k] = 1.0;
            }
            for b in 0..p {
                let overlap: f64 = self.rows[b].iter().map(|&k| mark[k]).sum();
                gram[(a, b)] = overlap / (self.rows[a].len() * self.rows[b].len()) as f64;
            }
            for &k in &self.rows[a] {
                mark[k] = 0.0;
            }
        }
        let eig = gram
            .self_adjoint_eigenvalues(Side::Lower)
            .map_err(|e| Error::Factorization(format!("{e:?}")))?;
        let top = eig.iter().copied().fold(0.0, f64::max);
        Ok((self.n as f64 * top).sqrt())
    }
}

fn check_time(t: f64) -> Result<()> {
    if t.is_finite() && t >= 0.0 {
        Ok(())
    } else {
        Err(invalid("t", format!("heat time must be finite and >= 0, got {t}")))
    }
}

/// Result of the graph heat map; `projection_residual` is the `L²(γ_n)` norm
/// of the part of the input outside the basis span (zero for coefficient input).
#[derive(Debug, Clone, PartialEq)]
pub struct HeatOutput {
    pub function: CloudFunction,
    pub projection_residual: f64,
}

/// `e^{-tΔ}` on the span of `basis`: coefficients `a_i ↦ e^{-λ_i t} a_i`.
pub fn heat_graph(u: &CloudFunction, basis: &SpectralBasis, t: f64) -> Result<HeatOutput> {
    check_time(t)?;
    let (coeffs, residual) = match u.coefficients() {
        Some(c) => (c.to_vec(), 0.0),
        None => {
            let c = u.coefficients_in(basis)?;
            let back = basis.synthesize(&c);
            let diff: Vec<f64> = u.values().iter().zip(&back).map(|(a, b)| a - b).collect();
            (c, l2_norm(&diff))
        }
    };
    let damped = coeffs
        .iter()
        .zip(basis.eigenvalues())
        .map(|(a, lam)| a * (-lam * t).exp())
        .collect();
    Ok(HeatOutput {
        function: CloudFunction::from_coefficients(basis, damped)?,
        projection_residual: residual,
    })
}

/// Degree-`l` coefficients scaled by `e^{-l(l+1)t}`.
pub fn heat_continuum(coeffs: &[f64], cont: &ContinuumBasis, t: f64) -> Result<Vec<f64>> {
    check_time(t)?;
    if coeffs.len() != cont.len() {
        return Err(Error::DimensionMismatch {
            expected: cont.len(),
            got: coeffs.len(),
        });
    }
    Ok(coeffs
        .iter()
        .zip(cont.eigenvalues())
        .map(|(a, lam)| a * (-lam * t).exp())
        .collect())
}

/// `O_n u` for nodal values `u`.
pub fn observe(values: &[f64], design: &ObservationDesign, cloud: &PointCloud) -> Result<Vec<f64>> {
    ObservationOperator::new(design, cloud)?.apply(values)
}

/// Monte Carlo settings for continuum ball averages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapQuadrature {
    pub samples: usize,
    pub seed: u64,
}

impl Default for CapQuadrature {
    fn default() -> Self {
        Self {
            samples: 10_000,
            seed: 0,
        }
    }
}

/// Observed values with one standard error per entry (zero for pointwise).
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuumObservation {
    pub values: Vec<f64>,
    pub std_errors: Vec<f64>,
}

/// Uniform point on the part of the unit sphere within chord distance
/// `delta` of the unit vector `center`.
pub fn sample_cap(center: &[f64], delta: f64, rng: &mut impl Rng) -> [f64; 3] {
    // |x − c| <= δ on the sphere is the cap x·c >= 1 − δ²/2; the height of a
    // uniform cap point is uniform (Archimedes)
    let z_min = (1.0 - 0.5 * delta * delta).max(-1.0);
    let z = z_min + (1.0 - z_min) * rng.random::<f64>();
    let phi = std::f64::consts::TAU * rng.random::<f64>();
    let r = (1.0 - z * z).max(0.0).sqrt();
    let (e1, e2) = tangent_frame(center);
    let mut out = [0.0; 3];
    for a in 0..3 {
        out[a] = z * center[a] + r * (phi.cos() * e1[a] + phi.sin() * e2[a]);
    }
    let norm = (out[0] * out[0] + out[1] * out[1] + out[2] * out[2]).sqrt();
    out.map(|v| v / norm)
}

fn tangent_frame(c: &[f64]) -> ([f64; 3], [f64; 3]) {
    let helper = if c[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let dot = helper[0] * c[0] + helper[1] * c[1] + helper[2] * c[2];
    let mut e1 = [helper[0] - dot * c[0], helper[1] - dot * c[1], helper[2] - dot * c[2]];
    let n1 = (e1[0] * e1[0] + e1[1] * e1[1] + e1[2] * e1[2]).sqrt();
    e1 = e1.map(|v| v / n1);
    let e2 = [
        c[1] * e1[2] - c[2] * e1[1],
        c[2] * e1[0] - c[0] * e1[2],
        c[0] * e1[1] - c[1] * e1[0],
    ];
    (e1, e2)
}

/// Per-row observation functionals of every harmonic: `rows[j][i] ≈ (Oψ_i)_j`.
fn continuum_observation_rows(
    cont: &ContinuumBasis,
    design: &ObservationDesign,
    cloud: &PointCloud,
    quad: &CapQuadrature,
) -> Result<Vec<Vec<f64>>> {
    let n = cloud.len();
    let mut rng = ChaCha8Rng::seed_from_u64(quad.seed);
    design
        .indices
        .iter()
        .map(|&j| {
            if j >= n {
                return Err(Error::IndexOutOfRange { index: j, len: n });
            }
            let center = cloud.point(j);
            match design.mode {
                ObservationMode::Pointwise => cont.evaluate(center),
                ObservationMode::BallAverage { delta } => {
                    if quad.samples == 0 {
                        return Err(invalid("samples", "need at least one quadrature sample"));
                    }
                    let mut acc = vec![0.0; cont.len()];
                    for _ in 0..quad.samples {
                        let x = sample_cap(center, delta, &mut rng);
                        for (a, v) in acc.iter_mut().zip(cont.evaluate(&x)?) {
                            *a += v;
                        }
                    }
                    Ok(acc.into_iter().map(|a| a / quad.samples as f64).collect())
                }
            }
        })
        .collect()
}

/// `O` applied to a harmonic expansion at the labeled cloud points.
pub fn observe_continuum(
    coeffs: &[f64],
    cont: &ContinuumBasis,
    design: &ObservationDesign,
    cloud: &PointCloud,
    quad: &CapQuadrature,
) -> Result<ContinuumObservation> {
    if coeffs.len() != cont.len() {
        return Err(Error::DimensionMismatch {
            expected: cont.len(),
            got: coeffs.len(),
        });
    }
    let n = cloud.len();
    let mut rng = ChaCha8Rng::seed_from_u64(quad.seed);
    let mut values = Vec::with_capacity(design.p());
    let mut std_errors = Vec::with_capacity(design.p());
    for &j in &design.indices {
        if j >= n {
            return Err(Error::IndexOutOfRange { index: j, len: n });
        }
        match design.mode {
            ObservationMode::Pointwise => {
                values.push(cont.expand(coeffs, cloud.point(j))?);
                std_errors.push(0.0);
            }
            ObservationMode::BallAverage { delta } => {
                if quad.samples < 2 {
                    return Err(invalid("samples", "need at least two quadrature samples"));
                }
                let (mut sum, mut sq) = (0.0, 0.0);
                for _ in 0..quad.samples {
                    let x = sample_cap(cloud.point(j), delta, &mut rng);
                    let v = cont.expand(coeffs, &x)?;
                    sum += v;
                    sq += v * v;
                }
                let m = quad.samples as f64;
                let mean = sum / m;
                let var = ((sq - m * mean * mean) / (m - 1.0)).max(0.0);
                values.push(mean);
                std_errors.push((var / m).sqrt());
            }
        }
    }
    Ok(ContinuumObservation { values, std_errors })
}

/// The linear map `G = O ∘ e^{-tΔ}` on a coefficient space, stored as the
/// `p × k` matrix `M[j,i] = e^{-λ_i t}(O ψ_i)_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardModel {
    p: usize,
    k: usize,
    t: f64,
    matrix: Vec<f64>,
}

impl ForwardModel {
    /// Design matrix over the first `k` pairs of a graph basis.
    pub fn graph(
        basis: &SpectralBasis,
        k: usize,
        t: f64,
        design: &ObservationDesign,
        cloud: &PointCloud,
    ) -> Result<Self> {
        check_time(t)?;
        if k == 0 || k > basis.count() {
            return Err(invalid("k", format!("need 1 <= k <= {}, got {k}", basis.count())));
        }
        if basis.n() != cloud.len() {
            return Err(Error::DimensionMismatch {
                expected: cloud.len(),
                got: basis.n(),
            });
        }
        let op = ObservationOperator::new(design, cloud)?;
        let p = design.p();
        let mut matrix = vec![0.0; p * k];
        for i in 0..k {
            let damp = (-basis.eigenvalue(i) * t).exp();
            let obs = op.apply(basis.vector(i))?;
            for (j, o) in obs.iter().enumerate() {
                matrix[j * k + i] = damp * o;
            }
        }
        Ok(Self { p, k, t, matrix })
    }

    /// Design matrix over all harmonics of `cont`.
    pub fn continuum(
        cont: &ContinuumBasis,
        t: f64,
        design: &ObservationDesign,
        cloud: &PointCloud,
        quad: &CapQuadrature,
    ) -> Result<Self> {
        check_time(t)?;
        let rows = continuum_observation_rows(cont, design, cloud, quad)?;
        let k = cont.len();
        let damp: Vec<f64> = cont.eigenvalues().iter().map(|l| (-l * t).exp()).collect();
        let matrix = rows
            .iter()
            .flat_map(|row| row.iter().zip(&damp).map(|(v, d)| v * d).collect::<Vec<_>>())
            .collect();
        Ok(Self {
            p: design.p(),
            k,
            t,
            matrix,
        })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.matrix[j * self.k..(j + 1) * self.k]
    }

    pub fn entry(&self, j: usize, i: usize) -> f64 {
        self.matrix[j * self.k + i]
    }

    /// `M a`; `coeffs` may be shorter than `k` (missing entries are zero).
    pub fn apply(&self, coeffs: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.p];
        self.apply_into(coeffs, &mut out);
        out
    }

    pub fn apply_into(&self, coeffs: &[f64], out: &mut [f64]) {
        assert!(coeffs.len() <= self.k, "too many coefficients");
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.row(j)[..coeffs.len()]
                .iter()
                .zip(coeffs)
                .map(|(m, a)| m * a)
                .sum();
        }
    }
}

/// `G_n(u) = O_n(e^{-tΔ} u)` computed in two steps.
pub fn forward_observe(
    u: &CloudFunction,
    basis: &SpectralBasis,
    t: f64,
    design: &ObservationDesign,
    cloud: &PointCloud,
) -> Result<Vec<f64>> {
    let heated = heat_graph(u, basis, t)?;
    observe(heated.function.values(), design, cloud)
}
