//! Gaussian and probit noise models, their potentials, synthetic data and
//! numeric checks of the growth and Lipschitz conditions used by pCN theory.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::forward::{ForwardModel, ObservationMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Gaussian,
    Probit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    kind: NoiseKind,
    sigma: f64,
}

impl NoiseModel {
    pub fn new(kind: NoiseKind, sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(invalid("sigma", format!("noise level must be positive, got {sigma}")));
        }
        Ok(Self { kind, sigma })
    }

    pub fn gaussian(sigma: f64) -> Result<Self> {
        Self::new(NoiseKind::Gaussian, sigma)
    }

    pub fn probit(sigma: f64) -> Result<Self> {
        Self::new(NoiseKind::Probit, sigma)
    }

    pub fn kind(&self) -> NoiseKind {
        self.kind
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn with_sigma(&self, sigma: f64) -> Result<Self> {
        Self::new(self.kind, sigma)
    }
}

/// Below this standardized argument the log-CDF switches to its asymptotic series.
const TAIL_SWITCH: f64 = -8.0;

/// `log Φ(x)` for the standard normal CDF, accurate far into the lower tail.
pub fn log_normal_cdf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x >= TAIL_SWITCH {
        (0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)).ln()
    } else {
        // Φ(x) = φ(x)/(-x) · (1 − 1/x² + 3/x⁴ − 15/x⁶ + 105/x⁸ − …)
        let x2 = x * x;
        let inv = 1.0 / x2;
        let series = 1.0 - inv * (1.0 - 3.0 * inv * (1.0 - 5.0 * inv * (1.0 - 7.0 * inv)));
        -0.5 * x2 - 0.5 * (2.0 * std::f64::consts::PI).ln() - (-x).ln() + series.ln()
    }
}

/// `φ^y(w)`: `|y − w|²/(2σ²)` or `−Σ log Ψ(y_i w_i / σ)`.
pub fn potential(w: &[f64], y: &[f64], model: &NoiseModel) -> Result<f64> {
    if w.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: y.len(),
            got: w.len(),
        });
    }
    Ok(potential_unchecked(w, y, model))
}

fn potential_unchecked(w: &[f64], y: &[f64], model: &NoiseModel) -> f64 {
    let sigma = model.sigma;
    match model.kind {
        NoiseKind::Gaussian => {
            w.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / (2.0 * sigma * sigma)
        }
        NoiseKind::Probit => -w
            .iter()
            .zip(y)
            .map(|(a, b)| log_normal_cdf(a * b / sigma))
            .sum::<f64>(),
    }
}

/// Observed labels together with how they were produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledData {
    pub indices: Vec<usize>,
    pub y: Vec<f64>,
    pub noise: NoiseModel,
    pub t: f64,
    pub mode: ObservationMode,
    pub seed: Option<u64>,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    noise: NoiseModel,
    t: f64,
    mode: ObservationMode,
    seed: Option<u64>,
}

impl LabeledData {
    pub fn new(
        indices: Vec<usize>,
        y: Vec<f64>,
        noise: NoiseModel,
        t: f64,
        mode: ObservationMode,
        seed: Option<u64>,
    ) -> Result<Self> {
        if indices.len() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: indices.len(),
                got: y.len(),
            });
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(invalid("y", "labels must be finite"));
        }
        if noise.kind == NoiseKind::Probit && y.iter().any(|&v| v != 1.0 && v != -1.0) {
            return Err(invalid("y", "probit labels must be exactly +1 or -1"));
        }
        Ok(Self {
            indices,
            y,
            noise,
            t,
            mode,
            seed,
        })
    }

    pub fn p(&self) -> usize {
        self.y.len()
    }

    /// Rows `index,y`.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("index,y\n");
        for (i, y) in self.indices.iter().zip(&self.y) {
            let _ = writeln!(out, "{i},{y:.17e}");
        }
        out
    }

    pub fn sidecar_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&Sidecar {
            noise: self.noise,
            t: self.t,
            mode: self.mode,
            seed: self.seed,
        })?)
    }

    pub fn save(&self, csv_path: impl AsRef<Path>, json_path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(csv_path, self.to_csv_string())?;
        std::fs::write(json_path, self.sidecar_json()?)?;
        Ok(())
    }

    pub fn load(csv_path: impl AsRef<Path>, json_path: impl AsRef<Path>) -> Result<Self> {
        let sidecar: Sidecar = serde_json::from_str(&std::fs::read_to_string(json_path)?)?;
        let reader = BufReader::new(std::fs::File::open(csv_path)?);
        let mut indices = Vec::new();
        let mut y = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let line_no = lineno + 1;
            if lineno == 0 {
                if line.trim() != "index,y" {
                    return Err(Error::Parse {
                        line: line_no,
                        reason: "expected header `index,y`".into(),
                    });
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::Parse {
                    line: line_no,
                    reason: "expected two fields".into(),
                });
            };
            let parse_err = |what: &str| Error::Parse {
                line: line_no,
                reason: format!("invalid {what}"),
            };
            indices.push(a.trim().parse().map_err(|_| parse_err("index"))?);
            y.push(b.trim().parse().map_err(|_| parse_err("label"))?);
        }
        Self::new(indices, y, sidecar.noise, sidecar.t, sidecar.mode, sidecar.seed)
    }
}

/// Labels from clean observations `G(u†)`: `G(u†) + η` for Gaussian noise,
/// `sign(G(u†) + η)` for probit with a zero sign mapped to `+1`.
pub fn synthesize_labels(clean: &[f64], noise: &NoiseModel, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    clean
        .iter()
        .map(|&g| {
            let eta: f64 = StandardNormal.sample(&mut rng);
            let v = g + noise.sigma * eta;
            match noise.kind {
                NoiseKind::Gaussian => v,
                NoiseKind::Probit => {
                    if v < 0.0 {
                        -1.0
                    } else {
                        1.0
                    }
                }
            }
        })
        .collect()
}

pub fn synthesize_data(
    clean: &[f64],
    indices: &[usize],
    t: f64,
    mode: ObservationMode,
    noise: &NoiseModel,
    seed: u64,
) -> Result<LabeledData> {
    LabeledData::new(
        indices.to_vec(),
        synthesize_labels(clean, noise, seed),
        *noise,
        t,
        mode,
        Some(seed),
    )
}

/// `Φ(a) = φ^y(M a)` for coefficient vectors `a`.
#[derive(Debug, Clone)]
pub struct ModelPotential {
    forward: ForwardModel,
    y: Vec<f64>,
    noise: NoiseModel,
}

impl ModelPotential {
    pub fn new(forward: ForwardModel, y: Vec<f64>, noise: NoiseModel) -> Result<Self> {
        if forward.p() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: forward.p(),
                got: y.len(),
            });
        }
        Ok(Self { forward, y, noise })
    }

    pub fn forward(&self) -> &ForwardModel {
        &self.forward
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn evaluate(&self, coeffs: &[f64]) -> f64 {
        potential_unchecked(&self.forward.apply(coeffs), &self.y, &self.noise)
    }
}

/// Outcome of [`check_assumptions`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport {
    /// `(K, c)`: smallest `φ(v) − φ(w)` seen with `|w − √(1−β²) v| ≤ K`.
    pub lower_bounds: Vec<(f64, f64)>,
    /// Largest `|φ(v₁) − φ(v₂)| / (max(|v₁|, |v₂|, 1) |v₁ − v₂|)` seen.
    pub lipschitz: f64,
    /// Probit only: whether each per-coordinate term decreased along the margin grid.
    pub probit_monotone: Option<bool>,
    pub violations: Vec<String>,
}

/// Randomized checks of the two potential conditions.
///
/// `v_radii` are the norms at which states `v` are drawn; each `(K, radius)`
/// combination is probed with `samples` random pairs.
pub fn check_assumptions(
    noise: &NoiseModel,
    y: &[f64],
    beta: f64,
    k_grid: &[f64],
    v_radii: &[f64],
    samples: usize,
    seed: u64,
) -> Result<AssumptionReport> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(invalid("beta", format!("must lie in (0, 1], got {beta}")));
    }
    let p = y.len();
    if p == 0 {
        return Err(invalid("y", "need at least one label"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let contraction = (1.0 - beta * beta).sqrt();
    let mut violations = Vec::new();

    let random_vector = |radius: f64, rng: &mut ChaCha8Rng| -> Vec<f64> {
        let g: Vec<f64> = (0..p).map(|_| StandardNormal.sample(rng)).collect();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
        let r = radius * rng.random::<f64>().powf(1.0 / p as f64);
        g.into_iter().map(|v| v * r / norm).collect()
    };

    let mut lower_bounds = Vec::with_capacity(k_grid.len());
    for &k in k_grid {
        let mut c = f64::INFINITY;
        for &radius in v_radii {
            for _ in 0..samples {
                let v = random_vector(radius, &mut rng);
                let step = random_vector(k, &mut rng);
                let w: Vec<f64> = v.iter().zip(&step).map(|(a, b)| contraction * a + b).collect();
                let diff = potential_unchecked(&v, y, noise) - potential_unchecked(&w, y, noise);
                c = c.min(diff);
            }
        }
        if !c.is_finite() {
            violations.push(format!("no finite lower bound found for K = {k}"));
        }
        lower_bounds.push((k, c));
    }

    let mut lipschitz: f64 = 0.0;
    for &radius in v_radii {
        for _ in 0..samples {
            let v1 = random_vector(radius, &mut rng);
            let v2 = random_vector(radius, &mut rng);
            let dist = v1.iter().zip(&v2).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            if dist == 0.0 {
                continue;
            }
            let n1 = v1.iter().map(|a| a * a).sum::<f64>().sqrt();
            let n2 = v2.iter().map(|a| a * a).sum::<f64>().sqrt();
            let ratio = (potential_unchecked(&v1, y, noise) - potential_unchecked(&v2, y, noise)).abs()
                / (n1.max(n2).max(1.0) * dist);
            if !ratio.is_finite() {
                violations.push(format!("non-finite Lipschitz ratio at radius {radius}"));
                continue;
            }
            lipschitz = lipschitz.max(ratio);
        }
    }

    let probit_monotone = (noise.kind == NoiseKind::Probit).then(|| {
        let grid: Vec<f64> = (0..=400).map(|i| -20.0 + 0.1 * i as f64).collect();
        let ok = grid
            .windows(2)
            .all(|w| -log_normal_cdf(w[1] / noise.sigma) <= -log_normal_cdf(w[0] / noise.sigma));
        if !ok {
            violations.push("probit term is not decreasing in the margin".into());
        }
        ok
    });

    Ok(AssumptionReport {
        lower_bounds,
        lipschitz,
        probit_monotone,
        violations,
    })
}
