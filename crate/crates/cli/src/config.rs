//! Experiment configuration files.
//!
//! A config is a single JSON object. Only `schema_version` and `kind` are
//! required; every other field falls back to the standard semi-supervised
//! setting on the unit sphere.

use std::fmt;
use std::path::{Path, PathBuf};

use graph_bayes::forward::{CapQuadrature, ObservationMode};
use graph_bayes::likelihood::{NoiseKind, NoiseModel};
use graph_bayes::pipeline::{EpsRule, LabelRule, OperatorScaling, ProblemSpec, TruncationRule};
use graph_bayes::sampler::SamplerConfig;
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

/// Intrinsic dimension of the sphere the experiments run on.
pub const MANIFOLD_DIM: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Spectra,
    Regularity,
    Posterior,
    AcceptanceSweep,
    SupervisedSweep,
    OracleCompare,
    PriorSample,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        ExperimentKind::Spectra,
        ExperimentKind::Regularity,
        ExperimentKind::Posterior,
        ExperimentKind::AcceptanceSweep,
        ExperimentKind::SupervisedSweep,
        ExperimentKind::OracleCompare,
        ExperimentKind::PriorSample,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Spectra => "spectra",
            ExperimentKind::Regularity => "regularity",
            ExperimentKind::Posterior => "posterior",
            ExperimentKind::AcceptanceSweep => "acceptance-sweep",
            ExperimentKind::SupervisedSweep => "supervised-sweep",
            ExperimentKind::OracleCompare => "oracle-compare",
            ExperimentKind::PriorSample => "prior-sample",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            ExperimentKind::Spectra => "graph Laplacian eigenvalues against l(l+1), per eps multiplier",
            ExperimentKind::Regularity => "largest oscillation of normalized prior draws over a grid of s",
            ExperimentKind::Posterior => "pCN chain on one problem, with node and grid summaries",
            ExperimentKind::AcceptanceSweep => "pCN acceptance and IACT over n with p fixed",
            ExperimentKind::SupervisedSweep => "pCN acceptance and IACT over n with every node labeled",
            ExperimentKind::OracleCompare => "pooled pCN chains against the closed-form Gaussian posterior",
            ExperimentKind::PriorSample => "graph and continuum prior draws on a common grid",
        }
    }

    fn uses_sampler(self) -> bool {
        matches!(
            self,
            ExperimentKind::Posterior
                | ExperimentKind::AcceptanceSweep
                | ExperimentKind::SupervisedSweep
                | ExperimentKind::OracleCompare
        )
    }

    pub fn parse(name: &str) -> Result<Self, ConfigError> {
        if let Some(kind) = Self::ALL.into_iter().find(|k| k.name() == name) {
            return Ok(kind);
        }
        let closest = Self::ALL
            .into_iter()
            .map(|k| (strsim::levenshtein(name, k.name()), k))
            .min_by_key(|(d, _)| *d)
            .filter(|(d, _)| *d <= 4)
            .map(|(_, k)| k);
        let catalog: Vec<&str> = Self::ALL.iter().map(|k| k.name()).collect();
        let hint = match closest {
            Some(k) => format!("did you mean `{}`? ", k.name()),
            None => String::new(),
        };
        Err(ConfigError::field(
            "kind",
            format!("unknown experiment `{name}`; {hint}available: {}", catalog.join(", ")),
        ))
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A rejected config, naming the offending field.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn field(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config field `{}`: {}", self.field, self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub kind: String,
    /// Root seed. Replicate `i` uses `seed + i` as its cloud seed, one more
    /// for the labels and two more for the chain.
    pub seed: u64,
    pub replicates: usize,
    /// Cloud sizes; each is run for every replicate.
    pub n: Vec<usize>,
    /// Labeled points; ignored by `supervised-sweep`, which labels every node.
    pub p: usize,
    pub eps: EpsRule,
    /// Multipliers of `n^{-1/4}` for `spectra` and `regularity`.
    pub eps_multipliers: Vec<f64>,
    pub scaling: OperatorScaling,
    pub alpha: f64,
    pub s: f64,
    pub truncation: TruncationRule,
    pub t: f64,
    pub noise: NoiseKind,
    pub sigma: f64,
    pub observation: ObservationMode,
    pub beta: f64,
    pub iterations: usize,
    pub burn_in: usize,
    pub thinning: usize,
    /// Independent chains pooled by `oracle-compare`.
    pub chains: usize,
    /// Leading eigenpairs reported by `spectra`.
    pub eigen_count: usize,
    pub s_grid: Vec<f64>,
    pub draws: usize,
    pub l_max: usize,
    pub grid_size: usize,
    /// Neighbours of the interpolant used for grid outputs.
    pub knn: usize,
    /// Coefficients written per sample to chain CSVs.
    pub chain_columns: usize,
    pub output_dir: Option<PathBuf>,
    pub svg: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            kind: String::new(),
            seed: 0,
            replicates: 1,
            n: vec![1000],
            p: 200,
            eps: EpsRule::Scaled { mult: 2.0 },
            eps_multipliers: vec![1.0, 2.0, 3.0],
            scaling: OperatorScaling::Continuum,
            alpha: 1.0,
            s: 5.0,
            truncation: TruncationRule::Fixed { k: 50 },
            t: 0.1,
            noise: NoiseKind::Gaussian,
            sigma: 0.1,
            observation: ObservationMode::Pointwise,
            beta: 0.01,
            iterations: 100_000,
            burn_in: 90_000,
            thinning: 1,
            chains: 1,
            eigen_count: 9,
            s_grid: vec![2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0],
            draws: 100,
            l_max: 20,
            grid_size: 10_000,
            knn: 4,
            chain_columns: 10,
            output_dir: None,
            svg: false,
        }
    }
}

fn positive(field: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(ConfigError::field(field, format!("must be a positive finite number, got {v}")))
    }
}

fn at_least_one(field: &str, v: usize) -> Result<(), ConfigError> {
    if v >= 1 {
        Ok(())
    } else {
        Err(ConfigError::field(field, "must be at least 1"))
    }
}

impl ExperimentConfig {
    /// Parses a config, or the config echoed inside a run manifest.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let mut value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| ConfigError::field("<root>", e.to_string()))?;
        if value.get("tool").and_then(|t| t.as_str()) == Some("graph-bayes") {
            if let Some(config) = value.get_mut("config") {
                value = config.take();
            }
        }
        serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            let field = if path == "." { "<root>".to_string() } else { path };
            ConfigError::field(field, e.inner().to_string())
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::field("<file>", format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn experiment(&self) -> Result<ExperimentKind, ConfigError> {
        ExperimentKind::parse(&self.kind)
    }

    /// Replicate seeds `seed, seed+1, ..`.
    pub fn seeds(&self) -> Vec<u64> {
        (0..self.replicates as u64).map(|i| self.seed.wrapping_add(i)).collect()
    }

    /// Checks every field the chosen experiment reads.
    pub fn validate(&self) -> Result<ExperimentKind, ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::field(
                "schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version),
            ));
        }
        let kind = self.experiment()?;
        at_least_one("replicates", self.replicates)?;
        if self.n.is_empty() {
            return Err(ConfigError::field("n", "need at least one cloud size"));
        }
        for (i, &n) in self.n.iter().enumerate() {
            if n < 2 {
                return Err(ConfigError::field(format!("n[{i}]"), format!("need at least 2 points, got {n}")));
            }
        }
        let n_min = *self.n.iter().min().expect("non-empty");
        match kind {
            ExperimentKind::Spectra | ExperimentKind::Regularity => {
                if self.eps_multipliers.is_empty() {
                    return Err(ConfigError::field("eps_multipliers", "need at least one multiplier"));
                }
                for (i, &m) in self.eps_multipliers.iter().enumerate() {
                    positive(&format!("eps_multipliers[{i}]"), m)?;
                }
            }
            _ => self.validate_problem(kind, n_min)?,
        }
        match kind {
            ExperimentKind::Spectra => {
                at_least_one("eigen_count", self.eigen_count)?;
                if self.eigen_count > n_min {
                    return Err(ConfigError::field(
                        "eigen_count",
                        format!("cannot exceed the smallest n ({n_min}), got {}", self.eigen_count),
                    ));
                }
            }
            ExperimentKind::Regularity => {
                positive("alpha", self.alpha)?;
                at_least_one("draws", self.draws)?;
                if self.s_grid.is_empty() {
                    return Err(ConfigError::field("s_grid", "need at least one smoothness value"));
                }
                for (i, &s) in self.s_grid.iter().enumerate() {
                    positive(&format!("s_grid[{i}]"), s)?;
                }
            }
            _ => {}
        }
        if kind.uses_sampler() {
            self.sampler(0).validate().map_err(|e| match e {
                graph_bayes::Error::InvalidParameter { name, reason } => ConfigError::field(name, reason),
                other => ConfigError::field("sampler", other.to_string()),
            })?;
        }
        if kind == ExperimentKind::OracleCompare {
            at_least_one("chains", self.chains)?;
            if self.noise != NoiseKind::Gaussian {
                return Err(ConfigError::field("noise", "the closed-form posterior needs gaussian noise"));
            }
        }
        if matches!(kind, ExperimentKind::Posterior | ExperimentKind::PriorSample) {
            at_least_one("grid_size", self.grid_size)?;
            at_least_one("knn", self.knn)?;
            if self.knn > n_min {
                return Err(ConfigError::field(
                    "knn",
                    format!("cannot exceed the smallest n ({n_min}), got {}", self.knn),
                ));
            }
        }
        if kind == ExperimentKind::PriorSample && self.l_max < 1 {
            return Err(ConfigError::field("l_max", "must be at least 1"));
        }
        Ok(kind)
    }

    fn validate_problem(&self, kind: ExperimentKind, n_min: usize) -> Result<(), ConfigError> {
        positive("alpha", self.alpha)?;
        if !(self.s.is_finite() && self.s > MANIFOLD_DIM as f64) {
            return Err(ConfigError::field(
                "s",
                format!("must exceed the manifold dimension {MANIFOLD_DIM}, got {}", self.s),
            ));
        }
        match self.eps {
            EpsRule::Scaled { mult } => positive("eps.mult", mult)?,
            EpsRule::Fixed { eps } => positive("eps.eps", eps)?,
        }
        if let TruncationRule::Fixed { k } = self.truncation {
            if k == 0 || k > n_min {
                return Err(ConfigError::field(
                    "truncation.k",
                    format!("need 1 <= k <= smallest n ({n_min}), got {k}"),
                ));
            }
        }
        if !(self.t.is_finite() && self.t >= 0.0) {
            return Err(ConfigError::field("t", format!("must be non-negative, got {}", self.t)));
        }
        positive("sigma", self.sigma)?;
        if let ObservationMode::BallAverage { delta } = self.observation {
            positive("observation.delta", delta)?;
        }
        if kind != ExperimentKind::SupervisedSweep && kind != ExperimentKind::PriorSample {
            at_least_one("p", self.p)?;
            if self.p > n_min {
                return Err(ConfigError::field(
                    "p",
                    format!("cannot exceed the smallest n ({n_min}), got {}", self.p),
                ));
            }
        }
        Ok(())
    }

    /// Problem template for cloud size `n` and replicate seed `seed`.
    pub fn problem(&self, kind: ExperimentKind, n: usize, seed: u64) -> Result<ProblemSpec, ConfigError> {
        let noise = NoiseModel::new(self.noise, self.sigma).map_err(|e| ConfigError::field("sigma", e.to_string()))?;
        let labels = if kind == ExperimentKind::SupervisedSweep {
            LabelRule::All
        } else {
            LabelRule::First { p: self.p.min(n) }
        };
        Ok(ProblemSpec {
            n,
            cloud_seed: seed,
            eps: self.eps,
            scaling: self.scaling,
            alpha: self.alpha,
            s: self.s,
            truncation: self.truncation,
            t: self.t,
            noise,
            labels,
            mode: self.observation,
            data_seed: seed.wrapping_add(1),
            quadrature: CapQuadrature::default(),
        })
    }

    /// Sampler settings with chain seed `base`; callers add the replicate.
    pub fn sampler(&self, base: u64) -> SamplerConfig {
        SamplerConfig {
            beta: self.beta,
            iterations: self.iterations,
            burn_in: self.burn_in,
            thinning: self.thinning,
            seed: base,
            initial: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base(kind: &str) -> ExperimentConfig {
        ExperimentConfig {
            kind: kind.into(),
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = ExperimentConfig::from_json(r#"{"schema_version": 1, "kind": "posterior"}"#).unwrap();
        assert_eq!(cfg, base("posterior"));
        assert_eq!(cfg.validate().unwrap(), ExperimentKind::Posterior);
    }

    #[test]
    fn round_trip_is_lossless() {
        let mut cfg = base("oracle-compare");
        cfg.eps = EpsRule::Fixed { eps: 0.3 };
        cfg.truncation = TruncationRule::Weyl;
        cfg.observation = ObservationMode::BallAverage { delta: 0.05 };
        cfg.output_dir = Some(PathBuf::from("runs/x"));
        cfg.s_grid = vec![2.5, 0.1];
        let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn every_catalog_entry_parses() {
        for kind in ExperimentKind::ALL {
            assert_eq!(ExperimentKind::parse(kind.name()).unwrap(), kind);
            assert!(base(kind.name()).validate().is_ok(), "{kind}");
        }
    }

    #[test]
    fn unknown_kind_suggests_neighbour() {
        let err = ExperimentKind::parse("spectrum").unwrap_err();
        assert_eq!(err.field, "kind");
        assert!(err.message.contains("did you mean `spectra`"), "{}", err.message);
        let err = ExperimentKind::parse("zzzzzzzzzzzzzzzzzz").unwrap_err();
        assert!(!err.message.contains("did you mean"));
        assert!(err.message.contains("prior-sample"));
    }

    #[test]
    fn rejects_rough_prior_and_zero_step() {
        let mut cfg = base("posterior");
        cfg.s = 2.0;
        assert_eq!(cfg.validate().unwrap_err().field, "s");
        let mut cfg = base("acceptance-sweep");
        cfg.beta = 0.0;
        assert_eq!(cfg.validate().unwrap_err().field, "beta");
        let mut cfg = base("posterior");
        cfg.burn_in = cfg.iterations;
        assert_eq!(cfg.validate().unwrap_err().field, "burn_in");
    }

    #[test]
    fn regularity_accepts_rough_grid() {
        let mut cfg = base("regularity");
        cfg.s = 1.0;
        cfg.s_grid = vec![1.0, 2.0];
        assert!(cfg.validate().is_ok());
        cfg.s_grid = vec![0.0];
        assert_eq!(cfg.validate().unwrap_err().field, "s_grid[0]");
    }

    #[test]
    fn size_constraints_name_fields() {
        let mut cfg = base("posterior");
        cfg.n = vec![1000, 40];
        assert_eq!(cfg.validate().unwrap_err().field, "truncation.k");
        cfg.truncation = TruncationRule::Fixed { k: 20 };
        assert_eq!(cfg.validate().unwrap_err().field, "p");
        cfg.p = 30;
        assert!(cfg.validate().is_ok());
        let mut cfg = base("supervised-sweep");
        cfg.n = vec![100];
        cfg.truncation = TruncationRule::Fixed { k: 20 };
        assert!(cfg.validate().is_ok());
        let mut cfg = base("oracle-compare");
        cfg.noise = NoiseKind::Probit;
        assert_eq!(cfg.validate().unwrap_err().field, "noise");
    }

    #[test]
    fn parse_errors_carry_paths() {
        let err = ExperimentConfig::from_json(r#"{"schema_version": 1, "kind": "spectra", "n": [10, "x"]}"#).unwrap_err();
        assert_eq!(err.field, "n[1]");
        let err = ExperimentConfig::from_json(r#"{"schema_version": 1, "kind": "spectra", "nn": 3}"#).unwrap_err();
        assert!(err.message.contains("unknown field `nn`"), "{}", err.message);
        let err = ExperimentConfig::from_json(r#"{"schema_version": 2, "kind": "spectra"}"#)
            .unwrap()
            .validate()
            .unwrap_err();
        assert_eq!(err.field, "schema_version");
    }

    #[test]
    fn manifest_echo_is_accepted() {
        let cfg = base("spectra");
        let manifest = format!(r#"{{"tool": "graph-bayes", "version": "0", "config": {}}}"#, cfg.to_json());
        assert_eq!(ExperimentConfig::from_json(&manifest).unwrap(), cfg);
        let err = ExperimentConfig::from_json("{").unwrap_err();
        assert_eq!(err.field, "<root>");
    }

    #[test]
    fn seeds_follow_root() {
        let mut cfg = base("posterior");
        cfg.seed = 7;
        cfg.replicates = 3;
        assert_eq!(cfg.seeds(), vec![7, 8, 9]);
        let spec = cfg.problem(ExperimentKind::Posterior, 500, 8).unwrap();
        assert_eq!((spec.cloud_seed, spec.data_seed), (8, 9));
        let spec = cfg.problem(ExperimentKind::SupervisedSweep, 500, 8).unwrap();
        assert_eq!(spec.labels, LabelRule::All);
    }
}
