//! Truncated Karhunen–Loève priors on graphs and on the sphere, and the
//! discrete-regularity statistics used to study them.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{invalid, Error, Result};
use crate::spectral::{ContinuumBasis, SpectralBasis};

/// Number of retained KL terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Truncation {
    Fixed(usize),
    /// Keep every available eigenpair (`k_n = n` on a full basis).
    Untruncated,
}

/// Gaussian prior `N(0, (αI + Δ)^{-s/2})`, truncated to `k_n` terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    alpha: f64,
    s: f64,
    truncation: Truncation,
    exclude_constant: bool,
}

/// Eigenvalues at or below this are treated as exact zeros.
const ZERO_EIGENVALUE: f64 = 1e-10;

impl PriorSpec {
    /// Builds a prior for an `m`-dimensional domain; requires `s > m` so that
    /// draws are square integrable in the continuum limit.
    pub fn new(alpha: f64, s: f64, m: usize, truncation: Truncation) -> Result<Self> {
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(invalid("alpha", format!("must be finite and >= 0, got {alpha}")));
        }
        if !(s.is_finite() && s > m as f64) {
            return Err(invalid(
                "s",
                format!("smoothness must exceed the intrinsic dimension m={m}, got s={s}"),
            ));
        }
        if truncation == Truncation::Fixed(0) {
            return Err(invalid("k_n", "truncation level must be at least 1"));
        }
        Ok(Self {
            alpha,
            s,
            truncation,
            exclude_constant: false,
        })
    }

    /// Drop zero-eigenvalue modes instead of rejecting them when `α = 0`.
    pub fn excluding_constant(mut self, exclude: bool) -> Self {
        self.exclude_constant = exclude;
        self
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn truncation(&self) -> Truncation {
        self.truncation
    }

    pub fn excludes_constant(&self) -> bool {
        self.exclude_constant
    }

    /// Number of KL terms against a basis holding `available` pairs.
    pub fn retained(&self, available: usize) -> Result<usize> {
        match self.truncation {
            Truncation::Untruncated => Ok(available),
            Truncation::Fixed(k) if k <= available => Ok(k),
            Truncation::Fixed(k) => Err(invalid(
                "k_n",
                format!("truncation {k} exceeds the {available} available eigenpairs"),
            )),
        }
    }

    /// Standard deviations `(α + λ_i)^{-s/4}` of the first `k_n` coefficients.
    pub fn scales(&self, eigenvalues: &[f64]) -> Result<Vec<f64>> {
        let k = self.retained(eigenvalues.len())?;
        kl_scales(&eigenvalues[..k], self.alpha, self.s, self.exclude_constant)
    }
}

/// `(α + λ)^{-s/4}` for each eigenvalue, with no constraint on `s`.
///
/// A zero eigenvalue with `α = 0` is an error unless `drop_null` is set, in
/// which case that mode gets scale 0.
pub fn kl_scales(eigenvalues: &[f64], alpha: f64, s: f64, drop_null: bool) -> Result<Vec<f64>> {
    eigenvalues
        .iter()
        .map(|&lam| {
            let base = alpha + lam.max(0.0);
            if alpha == 0.0 && lam <= ZERO_EIGENVALUE {
                if drop_null {
                    Ok(0.0)
                } else {
                    Err(invalid(
                        "alpha",
                        "alpha = 0 makes the zero-eigenvalue mode singular; exclude the constant mode or use alpha > 0",
                    ))
                }
            } else {
                Ok(base.powf(-s / 4.0))
            }
        })
        .collect()
}

/// `k_n = max(2, ⌊ε^{-m} / log n⌋)`, clamped to `n`.
pub fn default_truncation(n: usize, eps: f64, m: usize) -> Result<usize> {
    if n < 2 {
        return Err(invalid("n", "need at least two points"));
    }
    if !(eps.is_finite() && eps > 0.0) {
        return Err(invalid("eps", format!("must be positive, got {eps}")));
    }
    let raw = (eps.powi(-(m as i32)) / (n as f64).ln()).floor();
    let k = if raw >= n as f64 { n } else { raw as usize };
    Ok(k.max(2).min(n))
}

/// Nodal values on a cloud, optionally with their eigenbasis coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct CloudFunction {
    values: Vec<f64>,
    coeffs: Option<Vec<f64>>,
}

impl CloudFunction {
    pub fn from_values(values: Vec<f64>) -> Self {
        Self {
            values,
            coeffs: None,
        }
    }

    pub fn from_coefficients(basis: &SpectralBasis, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() > basis.count() {
            return Err(Error::DimensionMismatch {
                expected: basis.count(),
                got: coeffs.len(),
            });
        }
        Ok(Self {
            values: basis.synthesize(&coeffs),
            coeffs: Some(coeffs),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn coefficients(&self) -> Option<&[f64]> {
        self.coeffs.as_deref()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Coefficients if stored, otherwise the projection onto `basis`.
    pub fn coefficients_in(&self, basis: &SpectralBasis) -> Result<Vec<f64>> {
        if self.values.len() != basis.n() {
            return Err(Error::DimensionMismatch {
                expected: basis.n(),
                got: self.values.len(),
            });
        }
        Ok(match &self.coeffs {
            Some(c) => c.clone(),
            None => basis.project(&self.values, basis.count()),
        })
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * factor).collect(),
            coeffs: self
                .coeffs
                .as_ref()
                .map(|c| c.iter().map(|v| v * factor).collect()),
        }
    }
}

fn standard_normals(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    (0..k).map(|_| StandardNormal.sample(rng)).collect()
}

/// One draw `Σ_{i≤k_n} (α+λ_i)^{-s/4} ξ_i ψ_i`.
pub fn sample_graph_prior(basis: &SpectralBasis, spec: &PriorSpec, seed: u64) -> Result<CloudFunction> {
    let scales = spec.scales(basis.eigenvalues())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xi = standard_normals(&mut rng, scales.len());
    let coeffs = scales.iter().zip(&xi).map(|(a, b)| a * b).collect();
    CloudFunction::from_coefficients(basis, coeffs)
}

/// Harmonic coefficients of a continuum prior draw together with the prior
/// variance left out by stopping at `L_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuumPriorSample {
    pub coeffs: Vec<f64>,
    pub tail_variance: f64,
}

pub fn sample_continuum_prior(
    cont: &ContinuumBasis,
    spec: &PriorSpec,
    seed: u64,
) -> Result<ContinuumPriorSample> {
    let scales = kl_scales(&cont.eigenvalues(), spec.alpha, spec.s, spec.exclude_constant)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xi = standard_normals(&mut rng, scales.len());
    Ok(ContinuumPriorSample {
        coeffs: scales.iter().zip(&xi).map(|(a, b)| a * b).collect(),
        tail_variance: continuum_tail_variance(spec.alpha, spec.s, cont.l_max()),
    })
}

/// `Σ_{l > L_max} (2l+1)(α + l(l+1))^{-s/2}`; infinite when `s <= 2`.
pub fn continuum_tail_variance(alpha: f64, s: f64, l_max: usize) -> f64 {
    if s <= 2.0 {
        return f64::INFINITY;
    }
    let term = |l: f64| (2.0 * l + 1.0) * (alpha + l * (l + 1.0)).powf(-s / 2.0);
    let mut sum = 0.0;
    let stop = l_max + 20_000;
    for l in (l_max + 1)..=stop {
        sum += term(l as f64);
    }
    // remaining sum bounded by its integral, (2l+1)(l(l+1))^{-s/2} ≈ 2 l^{1-s}
    let x = stop as f64 + 0.5;
    sum + 2.0 * x.powf(2.0 - s) / (s - 2.0)
}

/// `‖u‖²_{H^s_n} = Σ_i (λ_i)^s ⟨u, ψ_i⟩²` over the stored coefficients (or
/// the full basis when none are stored).
pub fn hs_seminorm(u: &CloudFunction, basis: &SpectralBasis, s: f64) -> Result<f64> {
    let coeffs = u.coefficients_in(basis)?;
    Ok(coeffs
        .iter()
        .zip(basis.eigenvalues())
        .map(|(a, &lam)| weighted_power(lam, s) * a * a)
        .sum())
}

fn weighted_power(lam: f64, s: f64) -> f64 {
    if lam <= 0.0 {
        0.0
    } else {
        lam.powf(s)
    }
}

/// Per-point oscillation `max − min` of `u` over each closed `eps`-ball.
#[derive(Debug, Clone, PartialEq)]
pub struct Oscillation {
    pub per_point: Vec<f64>,
    pub max: f64,
}

pub fn oscillation(values: &[f64], cloud: &PointCloud, eps: f64) -> Result<Oscillation> {
    if values.len() != cloud.len() {
        return Err(Error::DimensionMismatch {
            expected: cloud.len(),
            got: values.len(),
        });
    }
    Ok(oscillation_on(values, &cloud.neighborhoods(eps)?))
}

fn oscillation_on(values: &[f64], neighborhoods: &[Vec<usize>]) -> Oscillation {
    let per_point: Vec<f64> = neighborhoods
        .iter()
        .map(|ball| {
            let (lo, hi) = ball.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &j| {
                (lo.min(values[j]), hi.max(values[j]))
            });
            hi - lo
        })
        .collect();
    let max = per_point.iter().copied().fold(0.0, f64::max);
    Oscillation { per_point, max }
}

/// `(1/(n² ε^p)) Σ_{i,j} 1{|x_i − x_j| ≤ ε} |u_i − u_j|^p` over ordered pairs.
pub fn p_laplacian_energy(values: &[f64], cloud: &PointCloud, eps: f64, p_exp: f64) -> Result<f64> {
    if values.len() != cloud.len() {
        return Err(Error::DimensionMismatch {
            expected: cloud.len(),
            got: values.len(),
        });
    }
    if !(p_exp.is_finite() && p_exp > 1.0) {
        return Err(invalid("p_exp", format!("exponent must exceed 1, got {p_exp}")));
    }
    let n = cloud.len() as f64;
    let total: f64 = cloud
        .neighborhoods(eps)?
        .iter()
        .enumerate()
        .map(|(i, ball)| {
            ball.iter()
                .map(|&j| (values[i] - values[j]).abs().powf(p_exp))
                .sum::<f64>()
        })
        .sum();
    Ok(total / (n * n * eps.powf(p_exp)))
}

/// Redraws allowed when a draw has (numerically) zero seminorm.
const MAX_REDRAWS: usize = 100;

/// Settings for [`regularity_experiment`].
#[derive(Debug, Clone, PartialEq)]
pub struct RegularitySettings {
    pub alpha: f64,
    pub s_grid: Vec<f64>,
    pub draws: usize,
    /// Draw `d` uses seed `root_seed + d`; every `s` reuses the same seeds.
    pub root_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularityRow {
    pub s: f64,
    pub max_osc: f64,
}

/// For each `s`, the largest oscillation over `draws` prior samples, each
/// rescaled to unit `H^s_n` seminorm.
///
/// Every term of `basis` is used; any `s > 0` is accepted so that the
/// low-smoothness end of the sweep can be explored.
pub fn regularity_experiment(
    basis: &SpectralBasis,
    cloud: &PointCloud,
    eps: f64,
    settings: &RegularitySettings,
) -> Result<Vec<RegularityRow>> {
    if settings.draws == 0 {
        return Err(invalid("draws", "need at least one draw"));
    }
    if basis.n() != cloud.len() {
        return Err(Error::DimensionMismatch {
            expected: cloud.len(),
            got: basis.n(),
        });
    }
    let neighborhoods = cloud.neighborhoods(eps)?;
    let k = basis.count();
    let mut rows = Vec::with_capacity(settings.s_grid.len());
    for &s in &settings.s_grid {
        if !(s.is_finite() && s > 0.0) {
            return Err(invalid("s", format!("smoothness must be positive, got {s}")));
        }
        let scales = kl_scales(basis.eigenvalues(), settings.alpha, s, true)?;
        let mut max_osc: f64 = 0.0;
        for d in 0..settings.draws {
            let mut rng = ChaCha8Rng::seed_from_u64(settings.root_seed.wrapping_add(d as u64));
            let mut attempt = 0;
            let (coeffs, norm2) = loop {
                let xi = standard_normals(&mut rng, k);
                let coeffs: Vec<f64> = scales.iter().zip(&xi).map(|(a, b)| a * b).collect();
                let norm2: f64 = coeffs
                    .iter()
                    .zip(basis.eigenvalues())
                    .map(|(a, &lam)| weighted_power(lam, s) * a * a)
                    .sum();
                if norm2 >= 1e-14 {
                    break (coeffs, norm2);
                }
                attempt += 1;
                if attempt == MAX_REDRAWS {
                    return Err(invalid("s", format!("prior draws vanish numerically at s={s}")));
                }
            };
            let scale = norm2.sqrt().recip();
            let normalized: Vec<f64> = coeffs.iter().map(|a| a * scale).collect();
            let values = basis.synthesize(&normalized);
            max_osc = max_osc.max(oscillation_on(&values, &neighborhoods).max);
        }
        rows.push(RegularityRow { s, max_osc });
    }
    Ok(rows)
}

/// Columns `s,max_osc,log_max_osc`.
pub fn regularity_csv(rows: &[RegularityRow]) -> String {
    let mut out = String::from("s,max_osc,log_max_osc\n");
    for r in rows {
        let _ = writeln!(out, "{},{:.12e},{:.12e}", r.s, r.max_osc, r.max_osc.ln());
    }
    out
}
