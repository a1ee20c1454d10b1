//! Seeded Monte Carlo consistency studies: simulate, fit, summarize MSE per N.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::em::{block_mse, fit, BlockMse, EMConfig};
use crate::error::{DinaError, Result};
use crate::model::{simulate, ModelParams, ParamsSpec};
use crate::order::{mask_to_bitstring, CanonicalOrder};
use crate::qmatrix::{parse_qmatrix, QMatrix};
use crate::seed::derive_seed;

/// Worker-count override for replication pools.
pub const WORKERS_ENV: &str = "DINA_WORKERS";

/// Truth given as a file path (relative to the spec) or inline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TruthSource {
    Path(String),
    Inline(ParamsSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    /// Q-matrix CSV, relative to the spec file.
    pub qmatrix: String,
    pub truth: TruthSource,
    pub sample_sizes: Vec<usize>,
    pub replications: usize,
    #[serde(default)]
    pub em: EMConfig,
    /// Output directory, relative to the spec file.
    pub output_dir: String,
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.sample_sizes.is_empty() {
            return Err(DinaError::InvalidConfig("sample_sizes is empty".into()));
        }
        if self.sample_sizes[0] == 0 {
            return Err(DinaError::InvalidConfig(
                "sample sizes must be positive".into(),
            ));
        }
        if self.sample_sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DinaError::InvalidConfig(
                "sample_sizes must be strictly ascending".into(),
            ));
        }
        if self.replications == 0 {
            return Err(DinaError::InvalidConfig(
                "replications must be at least 1".into(),
            ));
        }
        self.em.validate()
    }
}

/// A parsed spec together with what it refers to.
#[derive(Debug, Clone)]
pub struct LoadedExperiment {
    pub spec: ExperimentSpec,
    pub spec_sha256: String,
    pub q: QMatrix,
    pub truth: ModelParams,
    pub output_dir: PathBuf,
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| DinaError::io(path.display().to_string(), e))
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

pub fn load_experiment(path: &Path) -> Result<LoadedExperiment> {
    let text = read(path)?;
    let spec: ExperimentSpec = serde_json::from_str(&text)?;
    spec.validate()?;
    let base = path.parent().unwrap_or(Path::new("."));
    let q = parse_qmatrix(&read(&base.join(&spec.qmatrix))?)?;
    let truth = match &spec.truth {
        TruthSource::Path(p) => ModelParams::from_json(&q, &read(&base.join(p))?)?,
        TruthSource::Inline(inline) => inline.clone().into_params(&q)?,
    };
    Ok(LoadedExperiment {
        output_dir: base.join(&spec.output_dir),
        spec_sha256: sha256_hex(text.as_bytes()),
        spec,
        q,
        truth,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationRecord {
    pub sample_size: usize,
    pub replication: usize,
    /// EM met its stopping tolerance; only these enter the MSE.
    pub converged: bool,
    pub log_likelihood: Option<f64>,
    pub iterations: Option<usize>,
    pub error: Option<String>,
    #[serde(skip)]
    pub estimate: Option<ModelParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SizeSummary {
    pub sample_size: usize,
    /// `None` when every replication failed.
    pub mse: Option<BlockMse>,
    pub used: usize,
    pub not_converged: usize,
    pub errors: usize,
}

type BlockField = fn(&BlockMse) -> f64;

/// Wall-clock figures, kept out of `report.json` so that file is reproducible.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Timing {
    pub workers: usize,
    pub total_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub spec_sha256: String,
    pub seed: u64,
    pub spec: ExperimentSpec,
    pub truth: ModelParams,
    pub summaries: Vec<SizeSummary>,
    pub replications: Vec<ReplicationRecord>,
    #[serde(skip)]
    pub timing: Timing,
}

/// Worker count from [`WORKERS_ENV`], else available parallelism.
pub fn worker_count() -> Result<usize> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(DinaError::InvalidConfig(format!(
                "{WORKERS_ENV} must be a positive integer, got {v:?}"
            ))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Seeds for simulation and fitting of one replication.
pub fn replication_seeds(master: u64, n: usize, rep: usize) -> (u64, u64) {
    let base = [master, n as u64, rep as u64];
    (
        derive_seed(&[base[0], base[1], base[2], 0]),
        derive_seed(&[base[0], base[1], base[2], 1]),
    )
}

fn one_replication(
    q: &QMatrix,
    truth: &ModelParams,
    em: &EMConfig,
    master: u64,
    n: usize,
    rep: usize,
) -> ReplicationRecord {
    let (sim_seed, fit_seed) = replication_seeds(master, n, rep);
    let outcome = simulate(q, truth, n, sim_seed).and_then(|data| {
        let config = EMConfig {
            seed: fit_seed,
            ..em.clone()
        };
        fit(q, &data, &config)
    });
    match outcome {
        Ok(res) => ReplicationRecord {
            sample_size: n,
            replication: rep,
            converged: res.tolerance_met,
            log_likelihood: Some(res.log_likelihood),
            iterations: Some(res.iterations),
            error: None,
            estimate: Some(res.params),
        },
        Err(e) => ReplicationRecord {
            sample_size: n,
            replication: rep,
            converged: false,
            log_likelihood: None,
            iterations: None,
            error: Some(e.to_string()),
            estimate: None,
        },
    }
}

/// Run every (N, replication) cycle on a pool of `workers` threads.
pub fn run_experiment(exp: &LoadedExperiment, workers: usize) -> Result<ExperimentReport> {
    exp.spec.validate()?;
    let started = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| DinaError::InvalidConfig(format!("worker pool: {e}")))?;
    let spec = &exp.spec;
    let jobs: Vec<(usize, usize)> = spec
        .sample_sizes
        .iter()
        .flat_map(|&n| (0..spec.replications).map(move |r| (n, r)))
        .collect();
    let mut records: Vec<ReplicationRecord> = pool.install(|| {
        jobs.par_iter()
            .map(|&(n, r)| one_replication(&exp.q, &exp.truth, &spec.em, spec.seed, n, r))
            .collect()
    });
    records.sort_by_key(|r| (r.sample_size, r.replication));

    let mut summaries = Vec::with_capacity(spec.sample_sizes.len());
    for &n in &spec.sample_sizes {
        let at_n: Vec<&ReplicationRecord> = records.iter().filter(|r| r.sample_size == n).collect();
        let estimates: Vec<ModelParams> = at_n
            .iter()
            .filter(|r| r.converged)
            .filter_map(|r| r.estimate.clone())
            .collect();
        let mse = if estimates.is_empty() {
            None
        } else {
            Some(block_mse(&estimates, &exp.truth)?)
        };
        summaries.push(SizeSummary {
            sample_size: n,
            mse,
            used: estimates.len(),
            not_converged: at_n
                .iter()
                .filter(|r| r.error.is_none() && !r.converged)
                .count(),
            errors: at_n.iter().filter(|r| r.error.is_some()).count(),
        });
    }

    Ok(ExperimentReport {
        spec_sha256: exp.spec_sha256.clone(),
        seed: spec.seed,
        spec: spec.clone(),
        truth: exp.truth.clone(),
        summaries,
        replications: records,
        timing: Timing {
            workers: workers.max(1),
            total_seconds: started.elapsed().as_secs_f64(),
        },
    })
}

impl ExperimentReport {
    /// Rows `p`, `s`, `g`; one column per sample size.
    pub fn table_csv(&self) -> String {
        let mut out = String::from("block");
        for s in &self.summaries {
            let _ = write!(out, ",{}", s.sample_size);
        }
        out.push('\n');
        let blocks: [(&str, BlockField); 3] = [("p", |m| m.p), ("s", |m| m.s), ("g", |m| m.g)];
        for (name, get) in blocks {
            out.push_str(name);
            for s in &self.summaries {
                match &s.mse {
                    Some(m) => {
                        let _ = write!(out, ",{:.6}", get(m));
                    }
                    None => out.push_str(",NA"),
                }
            }
            out.push('\n');
        }
        out
    }

    /// One row per replication with its estimate.
    pub fn estimates_csv(&self) -> String {
        let j = self.truth.items();
        let k = self.truth.attributes();
        let order = CanonicalOrder::new(k).expect("validated dimension");
        let mut out = String::from("sample_size,replication,converged,log_likelihood");
        for i in 1..=j {
            let _ = write!(out, ",s{i}");
        }
        for i in 1..=j {
            let _ = write!(out, ",g{i}");
        }
        for m in order.iter() {
            let _ = write!(out, ",p{}", mask_to_bitstring(m, k));
        }
        out.push('\n');
        for r in &self.replications {
            let _ = write!(out, "{},{},{}", r.sample_size, r.replication, r.converged);
            match r.log_likelihood {
                Some(ll) => {
                    let _ = write!(out, ",{ll}");
                }
                None => out.push_str(",NA"),
            }
            match &r.estimate {
                Some(est) => {
                    for v in est
                        .slipping()
                        .iter()
                        .chain(est.guessing())
                        .chain(est.proportions())
                    {
                        let _ = write!(out, ",{v}");
                    }
                }
                None => {
                    for _ in 0..(2 * j + order.len()) {
                        out.push_str(",NA");
                    }
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Writes `table.csv`, `estimates.csv`, `report.json` and `timing.json`.
    pub fn write_outputs(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| DinaError::io(dir.display().to_string(), e))?;
        let files = [
            ("table.csv", self.table_csv()),
            ("estimates.csv", self.estimates_csv()),
            ("report.json", self.to_json_pretty() + "\n"),
            (
                "timing.json",
                serde_json::to_string_pretty(&self.timing).expect("timing serializes") + "\n",
            ),
        ];
        let mut written = Vec::new();
        for (name, body) in files {
            let path = dir.join(name);
            std::fs::write(&path, body)
                .map_err(|e| DinaError::io(path.display().to_string(), e))?;
            written.push(path);
        }
        Ok(written)
    }
}
