//! pCN and random-walk Metropolis chains on KL coefficients, with chain
//! summaries and autocorrelation diagnostics.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::prior::CloudFunction;
use crate::spectral::SpectralBasis;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub beta: f64,
    pub iterations: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub seed: u64,
    /// Starting coefficients; the zero function when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<Vec<f64>>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            beta: 0.1,
            iterations: 100_000,
            burn_in: 90_000,
            thinning: 1,
            seed: 0,
            initial: None,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(invalid("beta", format!("must lie in (0, 1], got {}", self.beta)));
        }
        if self.iterations == 0 {
            return Err(invalid("iterations", "need at least one iteration"));
        }
        if self.burn_in >= self.iterations {
            return Err(invalid(
                "burn_in",
                format!("must be below the iteration count {}, got {}", self.iterations, self.burn_in),
            ));
        }
        if self.thinning == 0 {
            return Err(invalid("thinning", "must be at least 1"));
        }
        Ok(())
    }

    /// Number of samples kept: `⌊(J − burn_in) / thinning⌋`.
    pub fn retained(&self) -> usize {
        (self.iterations - self.burn_in) / self.thinning
    }
}

/// A finished chain. Iterate `j` (1-based) is retained when `j > burn_in` and
/// `j − burn_in` is a multiple of the thinning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainResult {
    pub k: usize,
    /// Retained states, `k` coefficients each, flattened.
    pub samples: Vec<f64>,
    pub accepted: usize,
    pub proposed: usize,
    /// Proposals rejected because the potential was not finite.
    pub nonfinite: usize,
    /// Potential of the current state after every iteration.
    pub potential_trace: Vec<f64>,
    /// Mean of `min(1, exp(Φ(u) − Φ(ũ)))` over all proposals.
    pub mean_acceptance_probability: f64,
    pub config: SamplerConfig,
}

impl ChainResult {
    pub fn len(&self) -> usize {
        self.samples.len().checked_div(self.k).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.samples[i * self.k..(i + 1) * self.k]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.samples.chunks_exact(self.k.max(1))
    }
}

/// Metropolis acceptance probability `min(1, exp(Φ(u) − Φ(ũ)))`.
pub fn acceptance_probability(phi_current: f64, phi_proposal: f64) -> f64 {
    (phi_current - phi_proposal).exp().min(1.0)
}

struct Recorder {
    samples: Vec<f64>,
    trace: Vec<f64>,
    accepted: usize,
    nonfinite: usize,
    prob_sum: f64,
}

impl Recorder {
    fn new(config: &SamplerConfig, k: usize) -> Self {
        Self {
            samples: Vec::with_capacity(config.retained() * k),
            trace: Vec::with_capacity(config.iterations),
            accepted: 0,
            nonfinite: 0,
            prob_sum: 0.0,
        }
    }

    fn record(&mut self, config: &SamplerConfig, j: usize, state: &[f64], phi: f64) {
        self.trace.push(phi);
        if j > config.burn_in && (j - config.burn_in).is_multiple_of(config.thinning) {
            self.samples.extend_from_slice(state);
        }
    }

    fn finish(self, config: &SamplerConfig, k: usize) -> ChainResult {
        ChainResult {
            k,
            samples: self.samples,
            accepted: self.accepted,
            proposed: config.iterations,
            nonfinite: self.nonfinite,
            potential_trace: self.trace,
            mean_acceptance_probability: self.prob_sum / config.iterations as f64,
            config: config.clone(),
        }
    }
}

fn initial_state(config: &SamplerConfig, k: usize) -> Result<Vec<f64>> {
    match &config.initial {
        Some(a) if a.len() != k => Err(Error::DimensionMismatch {
            expected: k,
            got: a.len(),
        }),
        Some(a) => Ok(a.clone()),
        None => Ok(vec![0.0; k]),
    }
}

/// Metropolis step shared by both samplers. `log_ratio` is the log of the
/// acceptance ratio; non-finite proposals are rejected and counted.
fn accept_step(rec: &mut Recorder, rng: &mut ChaCha8Rng, phi_proposal: f64, log_ratio: f64) -> bool {
    if !phi_proposal.is_finite() || log_ratio.is_nan() {
        if rec.nonfinite == 0 {
            log::warn!("non-finite potential at a proposal; rejecting");
        }
        rec.nonfinite += 1;
        return false;
    }
    rec.prob_sum += log_ratio.exp().min(1.0);
    let u: f64 = rng.random();
    if log_ratio >= 0.0 || u.ln() < log_ratio {
        rec.accepted += 1;
        true
    } else {
        false
    }
}

/// Preconditioned Crank–Nicolson on KL coefficients with prior standard
/// deviations `scales`: `a_i ↦ √(1−β²) a_i + β scales_i ξ_i`.
pub fn pcn(scales: &[f64], potential: impl Fn(&[f64]) -> f64, config: &SamplerConfig) -> Result<ChainResult> {
    config.validate()?;
    let k = scales.len();
    let mut state = initial_state(config, k)?;
    let mut phi = potential(&state);
    if !phi.is_finite() {
        return Err(invalid("initial", format!("potential at the initial state is {phi}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let keep = (1.0 - config.beta * config.beta).sqrt();
    let mut proposal = vec![0.0; k];
    let mut rec = Recorder::new(config, k);
    for j in 1..=config.iterations {
        for ((p, a), s) in proposal.iter_mut().zip(&state).zip(scales) {
            let xi: f64 = StandardNormal.sample(&mut rng);
            *p = keep * a + config.beta * s * xi;
        }
        let phi_new = potential(&proposal);
        if accept_step(&mut rec, &mut rng, phi_new, phi - phi_new) {
            std::mem::swap(&mut state, &mut proposal);
            phi = phi_new;
        }
        rec.record(config, j, &state, phi);
    }
    Ok(rec.finish(config, k))
}

/// Random-walk Metropolis with prior-shaped steps `a_i ↦ a_i + step·scales_i ξ_i`,
/// targeting `exp(−Φ)` times the Gaussian prior. `config.beta` is ignored.
pub fn rwm(
    scales: &[f64],
    potential: impl Fn(&[f64]) -> f64,
    config: &SamplerConfig,
    step: f64,
) -> Result<ChainResult> {
    let mut checked = config.clone();
    checked.beta = 1.0;
    checked.validate()?;
    if !(step.is_finite() && step >= 0.0) {
        return Err(invalid("step", format!("must be finite and >= 0, got {step}")));
    }
    let k = scales.len();
    let log_prior = |a: &[f64]| -> f64 {
        a.iter()
            .zip(scales)
            .filter(|(_, &s)| s > 0.0)
            .map(|(x, s)| -0.5 * (x / s) * (x / s))
            .sum()
    };
    let mut state = initial_state(config, k)?;
    let mut phi = potential(&state);
    if !phi.is_finite() {
        return Err(invalid("initial", format!("potential at the initial state is {phi}")));
    }
    let mut lp = log_prior(&state);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut proposal = vec![0.0; k];
    let mut rec = Recorder::new(config, k);
    for j in 1..=config.iterations {
        for ((p, a), s) in proposal.iter_mut().zip(&state).zip(scales) {
            let xi: f64 = StandardNormal.sample(&mut rng);
            *p = a + step * s * xi;
        }
        let phi_new = potential(&proposal);
        let lp_new = log_prior(&proposal);
        if accept_step(&mut rec, &mut rng, phi_new, phi - phi_new + lp_new - lp) {
            std::mem::swap(&mut state, &mut proposal);
            phi = phi_new;
            lp = lp_new;
        }
        rec.record(config, j, &state, phi);
    }
    Ok(rec.finish(config, k))
}

/// Pools independent chains of equal dimension into one result. Samples and
/// potential traces are concatenated in order; counts are summed; the
/// configuration of the first chain is kept.
pub fn merge(chains: &[ChainResult]) -> Result<ChainResult> {
    let first = chains.first().ok_or(Error::EmptyChain)?;
    let mut out = ChainResult {
        k: first.k,
        samples: Vec::new(),
        accepted: 0,
        proposed: 0,
        nonfinite: 0,
        potential_trace: Vec::new(),
        mean_acceptance_probability: 0.0,
        config: first.config.clone(),
    };
    let mut prob_sum = 0.0;
    for c in chains {
        if c.k != first.k {
            return Err(Error::DimensionMismatch {
                expected: first.k,
                got: c.k,
            });
        }
        out.samples.extend_from_slice(&c.samples);
        out.potential_trace.extend_from_slice(&c.potential_trace);
        out.accepted += c.accepted;
        out.proposed += c.proposed;
        out.nonfinite += c.nonfinite;
        prob_sum += c.mean_acceptance_probability * c.proposed as f64;
    }
    if out.proposed > 0 {
        out.mean_acceptance_probability = prob_sum / out.proposed as f64;
    }
    Ok(out)
}

/// Coefficient-wise mean of the retained samples.
pub fn posterior_mean_coefficients(chain: &ChainResult) -> Result<Vec<f64>> {
    if chain.is_empty() {
        return Err(Error::EmptyChain);
    }
    let mut mean = vec![0.0; chain.k];
    for s in chain.iter() {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    let count = chain.len() as f64;
    mean.iter_mut().for_each(|m| *m /= count);
    Ok(mean)
}

/// Posterior mean as a function on the cloud.
pub fn posterior_mean(chain: &ChainResult, basis: &SpectralBasis) -> Result<CloudFunction> {
    CloudFunction::from_coefficients(basis, posterior_mean_coefficients(chain)?)
}

/// `S^N(f) = (1/N) Σ f(u^{(j)})` over retained samples.
pub fn empirical_average(chain: &ChainResult, f: impl Fn(&[f64]) -> f64) -> Result<f64> {
    if chain.is_empty() {
        return Err(Error::EmptyChain);
    }
    Ok(chain.iter().map(f).sum::<f64>() / chain.len() as f64)
}

pub fn acceptance_rate(chain: &ChainResult) -> f64 {
    if chain.proposed == 0 {
        0.0
    } else {
        chain.accepted as f64 / chain.proposed as f64
    }
}

/// Integrated autocorrelation time by Geyer's initial monotone sequence.
pub fn iact(trace: &[f64]) -> Result<f64> {
    let n = trace.len();
    if n < 4 {
        return Err(invalid("trace", "need at least four values"));
    }
    let mean = trace.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = trace.iter().map(|v| v - mean).collect();
    let autocov = |lag: usize| -> f64 {
        centered[..n - lag]
            .iter()
            .zip(&centered[lag..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / n as f64
    };
    let gamma0 = autocov(0);
    if gamma0 <= 0.0 {
        // a constant trace carries no information; report the i.i.d. value
        return Ok(1.0);
    }
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut m = 0;
    while 2 * m + 1 < n {
        let pair = autocov(2 * m) + autocov(2 * m + 1);
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev);
        sum += pair;
        prev = pair;
        m += 1;
    }
    Ok(((2.0 * sum - gamma0) / gamma0).max(f64::MIN_POSITIVE))
}

/// Scalar trace `f(u^{(j)})` over retained samples.
pub fn functional_trace(chain: &ChainResult, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    chain.iter().map(f).collect()
}

/// Retained samples as `sample,iterate,potential,a_1,…,a_c` for the first
/// `coefficients` coordinates.
pub fn chain_csv(chain: &ChainResult, coefficients: usize) -> String {
    let c = coefficients.min(chain.k);
    let mut out = String::from("sample,iterate,potential");
    for i in 0..c {
        let _ = write!(out, ",a_{}", i + 1);
    }
    out.push('\n');
    let cfg = &chain.config;
    for (s, state) in chain.iter().enumerate() {
        let iterate = cfg.burn_in + (s + 1) * cfg.thinning;
        let _ = write!(out, "{},{},{:.12e}", s, iterate, chain.potential_trace[iterate - 1]);
        for v in &state[..c] {
            let _ = write!(out, ",{v:.12e}");
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub acceptance_rate: f64,
    pub mean_acceptance_probability: f64,
    pub accepted: usize,
    pub proposed: usize,
    pub nonfinite: usize,
    pub retained: usize,
    pub iact_potential: Option<f64>,
    pub mean_coefficients: Vec<f64>,
    pub config: SamplerConfig,
}

pub fn summarize(chain: &ChainResult) -> Result<ChainSummary> {
    let cfg = &chain.config;
    let retained_potential: Vec<f64> = (0..chain.len())
        .map(|s| chain.potential_trace[cfg.burn_in + (s + 1) * cfg.thinning - 1])
        .collect();
    Ok(ChainSummary {
        acceptance_rate: acceptance_rate(chain),
        mean_acceptance_probability: chain.mean_acceptance_probability,
        accepted: chain.accepted,
        proposed: chain.proposed,
        nonfinite: chain.nonfinite,
        retained: chain.len(),
        iact_potential: iact(&retained_potential).ok(),
        mean_coefficients: posterior_mean_coefficients(chain)?,
        config: cfg.clone(),
    })
}
