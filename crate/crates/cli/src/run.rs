//! Executes a validated config into an output directory.
//!
//! Work is split into one job per `(n, replicate)` pair (times the eps
//! multipliers for the geometric experiments). Jobs only return file
//! contents; everything is written after all jobs finish, so the bytes of
//! every data file depend on the config alone and not on `--jobs`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use graph_bayes::experiments::{self, sweep_csv, sweep_medians, SweepRow, SweepSettings};
use graph_bayes::interpolate::{field_csv, knn_interpolate, pushforward_summary, sphere_grid};
use graph_bayes::likelihood::NoiseKind;
use graph_bayes::oracle::chain_summary;
use graph_bayes::pipeline::Problem;
use graph_bayes::prior::{
    regularity_csv, sample_continuum_prior, sample_graph_prior, PriorSpec, RegularityRow, RegularitySettings,
    Truncation,
};
use graph_bayes::sampler::{chain_csv, summarize};
use graph_bayes::spectral::ContinuumBasis;
use serde::Serialize;

use crate::config::{ExperimentConfig, ExperimentKind, MANIFOLD_DIM};
use crate::svg::{line_chart, Series};

pub const MANIFEST: &str = "manifest.json";

/// Seeds and headline numbers of one job.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JobRecord {
    pub label: String,
    pub n: usize,
    pub replicate_seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps_multiplier: Option<f64>,
    pub seeds: BTreeMap<&'static str, u64>,
    pub metrics: BTreeMap<&'static str, f64>,
    pub files: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub core_version: &'static str,
    pub kind: String,
    pub config: ExperimentConfig,
    pub seeds: Vec<u64>,
    pub jobs: Vec<JobRecord>,
    pub outputs: Vec<String>,
    pub parallel_jobs: usize,
    pub wall_time_seconds: f64,
}

#[derive(Debug)]
pub struct RunReport {
    pub out: PathBuf,
    pub manifest: Manifest,
}

/// Extra per-job data needed for run-level tables and charts.
enum Aggregate {
    None,
    Spectrum { graph: Vec<f64>, continuum: Vec<f64>, row: String },
    Regularity(Vec<RegularityRow>),
    Sweep(SweepRow),
    Trace(Vec<f64>),
}

struct JobOutput {
    record: JobRecord,
    files: Vec<(String, String)>,
    aggregate: Aggregate,
}

#[derive(Debug, Clone, Copy)]
struct Job {
    n: usize,
    seed: u64,
    mult: Option<f64>,
}

impl Job {
    fn tag(&self) -> String {
        match self.mult {
            Some(m) => format!("n{}_mult{}_seed{}", self.n, m, self.seed),
            None => format!("n{}_seed{}", self.n, self.seed),
        }
    }
}

fn plan(config: &ExperimentConfig, kind: ExperimentKind) -> Vec<Job> {
    let mut jobs = Vec::new();
    for &n in &config.n {
        for seed in config.seeds() {
            match kind {
                ExperimentKind::Spectra | ExperimentKind::Regularity => {
                    for &m in &config.eps_multipliers {
                        jobs.push(Job { n, seed, mult: Some(m) });
                    }
                }
                _ => jobs.push(Job { n, seed, mult: None }),
            }
        }
    }
    jobs
}

/// Runs `tasks` on up to `workers` threads and returns results in task order.
fn run_parallel<T: Send, F: Fn(usize) -> Result<T> + Sync>(count: usize, workers: usize, task: F) -> Result<Vec<T>> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<T>>>> = Mutex::new((0..count).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers.clamp(1, count.max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= count {
                    break;
                }
                let result = task(i);
                let failed = result.is_err();
                slots.lock().expect("result lock")[i] = Some(result);
                if failed {
                    next.store(count, Ordering::SeqCst);
                }
            });
        }
    });
    let slots = slots.into_inner().expect("result lock");
    let mut out = Vec::with_capacity(count);
    for (i, slot) in slots.into_iter().enumerate() {
        match slot {
            Some(Ok(v)) => out.push(v),
            Some(Err(e)) => return Err(e.context(format!("job {i} failed"))),
            None => bail!("job {i} was cancelled after an earlier failure"),
        }
    }
    Ok(out)
}

fn record(job: &Job, label: String) -> JobRecord {
    JobRecord {
        label,
        n: job.n,
        replicate_seed: job.seed,
        eps_multiplier: job.mult,
        seeds: BTreeMap::new(),
        metrics: BTreeMap::new(),
        files: Vec::new(),
    }
}

fn problem_seeds(rec: &mut JobRecord, seed: u64) {
    rec.seeds.insert("cloud", seed);
    rec.seeds.insert("labels", seed.wrapping_add(1));
}

fn execute(config: &ExperimentConfig, kind: ExperimentKind, job: &Job) -> Result<JobOutput> {
    let tag = job.tag();
    log::info!("{kind} job {tag}: start");
    let mut rec = record(job, tag.clone());
    let mut files = Vec::new();
    let aggregate = match kind {
        ExperimentKind::Spectra => {
            let mult = job.mult.expect("geometric job");
            let r = experiments::spectrum(job.n, mult, job.seed, config.eigen_count)?;
            rec.seeds.insert("cloud", job.seed);
            rec.metrics.insert("eps", r.eps);
            rec.metrics.insert("mean_relative_error", r.mean_relative_error);
            files.push((format!("spectrum_{tag}.csv"), r.to_csv_string()));
            Aggregate::Spectrum {
                graph: r.basis.eigenvalues().to_vec(),
                continuum: r.continuum.clone(),
                row: format!("{},{},{},{:.12e},{:.12e}", job.n, mult, job.seed, r.eps, r.mean_relative_error),
            }
        }
        ExperimentKind::Regularity => {
            let mult = job.mult.expect("geometric job");
            let settings = RegularitySettings {
                alpha: config.alpha,
                s_grid: config.s_grid.clone(),
                draws: config.draws,
                root_seed: job.seed.wrapping_add(1),
            };
            let rows = experiments::regularity(job.n, mult, job.seed, &settings)?;
            rec.seeds.insert("cloud", job.seed);
            rec.seeds.insert("draws", settings.root_seed);
            files.push((format!("regularity_{tag}.csv"), regularity_csv(&rows)));
            Aggregate::Regularity(rows)
        }
        ExperimentKind::AcceptanceSweep | ExperimentKind::SupervisedSweep => {
            let settings = SweepSettings {
                ns: vec![job.n],
                seeds: vec![job.seed],
                problem: config.problem(kind, job.n, job.seed)?,
                sampler: config.sampler(2),
            };
            let row = experiments::sweep_point(&settings, job.n, job.seed)?;
            problem_seeds(&mut rec, job.seed);
            rec.seeds.insert("chain", job.seed.wrapping_add(2));
            rec.metrics.insert("acceptance_rate", row.acceptance_rate);
            rec.metrics.insert("iact", row.iact_first_node);
            Aggregate::Sweep(row)
        }
        ExperimentKind::Posterior => {
            let prob = Problem::build(&config.problem(kind, job.n, job.seed)?)?;
            let chain_seed = job.seed.wrapping_add(2);
            let grid_seed = job.seed.wrapping_add(3);
            let chain = prob.run_pcn(&config.sampler(chain_seed))?;
            let summary = summarize(&chain)?;
            let nodes = chain_summary(&chain, &prob.basis, prob.echo())?;
            let grid = sphere_grid(config.grid_size, grid_seed)?;
            let on_grid = pushforward_summary(&nodes, &prob.cloud, config.knn, &grid)?;
            problem_seeds(&mut rec, job.seed);
            rec.seeds.insert("chain", chain_seed);
            rec.seeds.insert("grid", grid_seed);
            rec.metrics.insert("eps", prob.eps);
            rec.metrics.insert("k", prob.k() as f64);
            rec.metrics.insert("acceptance_rate", summary.acceptance_rate);
            if let Some(iact) = summary.iact_potential {
                rec.metrics.insert("iact_potential", iact);
            }
            files.push((format!("cloud_{tag}.csv"), prob.cloud.to_csv_string()));
            files.push((format!("labels_{tag}.csv"), prob.data.to_csv_string()));
            files.push((format!("labels_{tag}.json"), prob.data.sidecar_json()?));
            files.push((format!("chain_{tag}.csv"), chain_csv(&chain, config.chain_columns)));
            files.push((format!("chain_summary_{tag}.json"), to_json(&summary)?));
            files.push((format!("posterior_nodes_{tag}.csv"), nodes.to_csv_string()));
            files.push((format!("posterior_grid_{tag}.csv"), on_grid.to_csv_string()));
            match config.noise {
                NoiseKind::Gaussian => {
                    files.push((format!("oracle_nodes_{tag}.csv"), prob.oracle()?.to_csv_string()));
                }
                NoiseKind::Probit => {
                    files.push((format!("classes_{tag}.csv"), class_csv(&nodes.mean)));
                }
            }
            Aggregate::Trace(chain.potential_trace.clone())
        }
        ExperimentKind::OracleCompare => {
            let prob = Problem::build(&config.problem(kind, job.n, job.seed)?)?;
            let chain_seed = job.seed.wrapping_add(2);
            let (pooled, chain_nodes, oracle_nodes, report) =
                experiments::oracle_comparison(&prob, &config.sampler(chain_seed), config.chains)?;
            problem_seeds(&mut rec, job.seed);
            rec.seeds.insert("chain", chain_seed);
            rec.metrics.insert("acceptance_rate", graph_bayes::sampler::acceptance_rate(&pooled));
            rec.metrics.insert("relative_mean_error", report.relative_mean_error);
            rec.metrics.insert("relative_variance_error", report.relative_variance_error);
            files.push((format!("chain_nodes_{tag}.csv"), chain_nodes.to_csv_string()));
            files.push((format!("oracle_nodes_{tag}.csv"), oracle_nodes.to_csv_string()));
            files.push((format!("comparison_{tag}.json"), to_json(&report)?));
            Aggregate::None
        }
        ExperimentKind::PriorSample => {
            let prob = Problem::build(&config.problem(kind, job.n, job.seed)?)?;
            let draw_seed = job.seed.wrapping_add(2);
            let grid_seed = job.seed.wrapping_add(3);
            let continuum_seed = job.seed.wrapping_add(4);
            let draw = sample_graph_prior(&prob.basis, &prob.prior, draw_seed)?;
            let nodes: Vec<Vec<f64>> = prob.cloud.points().map(<[f64]>::to_vec).collect();
            let grid = sphere_grid(config.grid_size, grid_seed)?;
            let graph_on_grid = knn_interpolate(draw.values(), &prob.cloud, config.knn, &grid)?;
            let cont = ContinuumBasis::new(config.l_max);
            let cspec = PriorSpec::new(config.alpha, config.s, MANIFOLD_DIM, Truncation::Untruncated)?;
            let cdraw = sample_continuum_prior(&cont, &cspec, continuum_seed)?;
            let mut grid_csv = String::from("x,y,z,graph,continuum\n");
            for (x, g) in grid.iter().zip(&graph_on_grid) {
                let c = cont.expand(&cdraw.coeffs, x)?;
                grid_csv.push_str(&format!("{:.12e},{:.12e},{:.12e},{g:.12e},{c:.12e}\n", x[0], x[1], x[2]));
            }
            rec.seeds.insert("cloud", job.seed);
            rec.seeds.insert("graph_draw", draw_seed);
            rec.seeds.insert("grid", grid_seed);
            rec.seeds.insert("continuum_draw", continuum_seed);
            rec.metrics.insert("continuum_tail_variance", cdraw.tail_variance);
            files.push((format!("prior_nodes_{tag}.csv"), field_csv(&nodes, draw.values())));
            files.push((format!("prior_grid_{tag}.csv"), grid_csv));
            Aggregate::None
        }
    };
    rec.files = files.iter().map(|(name, _)| name.clone()).collect();
    log::info!("{kind} job {tag}: done");
    Ok(JobOutput {
        record: rec,
        files,
        aggregate,
    })
}

/// Sign of the posterior mean at each node, zero mapped to `+1`.
fn class_csv(mean: &[f64]) -> String {
    let mut out = String::from("index,class\n");
    for (i, m) in mean.iter().enumerate() {
        out.push_str(&format!("{i},{}\n", if *m < 0.0 { -1 } else { 1 }));
    }
    out
}

fn to_json(value: &impl Serialize) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// Run-level tables and charts assembled from all jobs.
fn summarize_run(config: &ExperimentConfig, kind: ExperimentKind, outputs: &[JobOutput]) -> Vec<(String, String)> {
    let mut files = Vec::new();
    match kind {
        ExperimentKind::Spectra => {
            let mut csv = String::from("n,eps_multiplier,seed,eps,mean_relative_error\n");
            let mut series = Vec::new();
            for out in outputs {
                if let Aggregate::Spectrum { graph, continuum, row } = &out.aggregate {
                    csv.push_str(row);
                    csv.push('\n');
                    if series.is_empty() {
                        series.push(indexed("l(l+1)", continuum));
                    }
                    series.push(indexed(&out.record.label, graph));
                }
            }
            files.push(("spectra_summary.csv".to_string(), csv));
            if config.svg {
                files.push(("spectra.svg".into(), line_chart("Laplacian spectrum", "index", "eigenvalue", &series)));
            }
        }
        ExperimentKind::Regularity if config.svg => {
            let series: Vec<Series> = outputs
                .iter()
                .filter_map(|out| match &out.aggregate {
                    Aggregate::Regularity(rows) => Some(Series {
                        label: out.record.label.clone(),
                        points: rows.iter().map(|r| (r.s, r.max_osc.ln())).collect(),
                    }),
                    _ => None,
                })
                .collect();
            files.push(("regularity.svg".into(), line_chart("Prior draw oscillation", "s", "log max osc", &series)));
        }
        ExperimentKind::AcceptanceSweep | ExperimentKind::SupervisedSweep => {
            let rows: Vec<SweepRow> = outputs
                .iter()
                .filter_map(|out| match out.aggregate {
                    Aggregate::Sweep(row) => Some(row),
                    _ => None,
                })
                .collect();
            let medians = sweep_medians(&rows);
            files.push(("sweep.csv".into(), sweep_csv(&rows)));
            files.push(("sweep_medians.csv".into(), sweep_csv(&medians)));
            if config.svg {
                let series = vec![Series {
                    label: "median acceptance".into(),
                    points: medians.iter().map(|r| (r.n as f64, r.acceptance_rate)).collect(),
                }];
                files.push(("sweep.svg".into(), line_chart("pCN acceptance", "n", "acceptance rate", &series)));
            }
        }
        ExperimentKind::OracleCompare => {
            let mut csv = String::from("n,seed,acceptance_rate,relative_mean_error,relative_variance_error\n");
            for out in outputs {
                let m = &out.record.metrics;
                csv.push_str(&format!(
                    "{},{},{:.6},{:.6e},{:.6e}\n",
                    out.record.n,
                    out.record.replicate_seed,
                    m["acceptance_rate"],
                    m["relative_mean_error"],
                    m["relative_variance_error"]
                ));
            }
            files.push(("comparison_summary.csv".into(), csv));
        }
        ExperimentKind::Posterior if config.svg => {
            let series: Vec<Series> = outputs
                .iter()
                .filter_map(|out| match &out.aggregate {
                    Aggregate::Trace(trace) => Some(Series {
                        label: out.record.label.clone(),
                        points: downsample(trace, 1000),
                    }),
                    _ => None,
                })
                .collect();
            files.push(("potential_trace.svg".into(), line_chart("Potential trace", "iteration", "Phi", &series)));
        }
        _ => {}
    }
    files
}

fn indexed(label: &str, values: &[f64]) -> Series {
    Series {
        label: label.to_string(),
        points: values.iter().enumerate().map(|(i, &v)| ((i + 1) as f64, v)).collect(),
    }
}

fn downsample(trace: &[f64], max_points: usize) -> Vec<(f64, f64)> {
    let stride = trace.len().div_ceil(max_points.max(1)).max(1);
    trace
        .iter()
        .enumerate()
        .step_by(stride)
        .map(|(i, &v)| ((i + 1) as f64, v))
        .collect()
}

fn staging_dir(out: &Path) -> Result<PathBuf> {
    let name = out
        .file_name()
        .with_context(|| format!("output path {} has no final component", out.display()))?;
    let staging = out.with_file_name(format!(".{}.partial-{}", name.to_string_lossy(), std::process::id()));
    Ok(staging)
}

fn check_target(out: &Path) -> Result<()> {
    if out.exists() {
        if !out.is_dir() {
            bail!("output path {} exists and is not a directory", out.display());
        }
        if fs::read_dir(out)?.next().is_some() {
            bail!("output directory {} is not empty; choose a fresh --out", out.display());
        }
    }
    Ok(())
}

/// Validates, runs every job and moves the finished directory into place.
/// Nothing is left at `out` (or beside it) when any step fails.
pub fn run(config: &ExperimentConfig, out: &Path, workers: usize) -> Result<RunReport> {
    let kind = config.validate()?;
    check_target(out)?;
    let started = Instant::now();
    let jobs = plan(config, kind);
    log::info!("{kind}: {} jobs on {} workers", jobs.len(), workers.max(1));
    let outputs = run_parallel(jobs.len(), workers, |i| execute(config, kind, &jobs[i]))?;

    let mut files: Vec<(String, String)> = outputs.iter().flat_map(|o| o.files.iter().cloned()).collect();
    files.extend(summarize_run(config, kind, &outputs));
    let mut names: Vec<String> = files.iter().map(|(n, _)| n.clone()).collect();
    names.push(MANIFEST.to_string());
    names.sort();

    let manifest = Manifest {
        tool: "graph-bayes",
        version: env!("CARGO_PKG_VERSION"),
        core_version: graph_bayes::VERSION,
        kind: kind.name().to_string(),
        config: config.clone(),
        seeds: config.seeds(),
        jobs: outputs.into_iter().map(|o| o.record).collect(),
        outputs: names,
        parallel_jobs: workers.max(1),
        wall_time_seconds: started.elapsed().as_secs_f64(),
    };
    files.push((MANIFEST.to_string(), to_json(&manifest)?));

    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let staging = staging_dir(out)?;
    let written = write_all(&staging, &files).and_then(|()| {
        if out.exists() {
            fs::remove_dir(out)?;
        }
        fs::rename(&staging, out).with_context(|| format!("moving results to {}", out.display()))
    });
    if let Err(e) = written {
        let _ = fs::remove_dir_all(&staging);
        return Err(e);
    }
    Ok(RunReport {
        out: out.to_path_buf(),
        manifest,
    })
}

fn write_all(dir: &Path, files: &[(String, String)]) -> Result<()> {
    fs::create_dir(dir).with_context(|| format!("creating {}", dir.display()))?;
    for (name, contents) in files {
        let path = dir.join(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}
