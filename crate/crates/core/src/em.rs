//! Maximum likelihood estimation by EM with random restarts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DinaError, Result};
use crate::model::{log_joint, log_sum, ModelParams, ResponseDataset, ThetaTable};
use crate::qmatrix::{identifiability_verdict, QMatrix};
use crate::seed::derive_seed;

pub const NOT_IDENTIFIABLE_WARNING: &str =
    "Q-matrix is not identifiable: estimates are not unique; see witness subcommand";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EMConfig {
    pub max_iterations: usize,
    /// Stop once the relative log-likelihood improvement drops below this.
    pub tolerance: f64,
    pub starts: usize,
    pub seed: u64,
    /// Slipping and guessing updates are clipped to `[clip, 1 - clip]`.
    pub clip: f64,
}

impl Default for EMConfig {
    fn default() -> Self {
        Self {
            max_iterations: 2000,
            tolerance: 1e-8,
            starts: 8,
            seed: 0,
            clip: 1e-4,
        }
    }
}

impl EMConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(DinaError::InvalidConfig(
                "max_iterations must be positive".into(),
            ));
        }
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return Err(DinaError::InvalidConfig(
                "tolerance must be positive".into(),
            ));
        }
        if self.starts == 0 {
            return Err(DinaError::InvalidConfig("starts must be at least 1".into()));
        }
        if !(self.clip > 0.0 && self.clip < 0.5) {
            return Err(DinaError::InvalidConfig("clip must lie in (0, 0.5)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EMResult {
    pub params: ModelParams,
    pub log_likelihood: f64,
    pub iterations: usize,
    /// Stopping tolerance met and the estimate satisfies `1 - s_j > g_j`.
    pub converged: bool,
    /// Stopping tolerance met before the iteration cap.
    pub tolerance_met: bool,
    pub start_index: usize,
    pub warnings: Vec<String>,
}

/// Response data collapsed to distinct patterns.
#[derive(Debug, Clone)]
pub(crate) struct PatternData {
    patterns: Vec<Vec<u8>>,
    counts: Vec<f64>,
    total: f64,
}

impl PatternData {
    pub fn new(q: &QMatrix, data: &ResponseDataset) -> Result<Self> {
        if data.items() != q.items() {
            return Err(DinaError::DimensionMismatch(format!(
                "dataset has {} items, Q-matrix has {}",
                data.items(),
                q.items()
            )));
        }
        let (patterns, counts): (Vec<_>, Vec<_>) = data
            .pattern_counts()
            .into_iter()
            .map(|(p, c)| (p, c as f64))
            .unzip();
        Ok(Self {
            patterns,
            counts,
            total: data.subjects() as f64,
        })
    }
}

/// Outcome of one EM iteration.
#[derive(Debug, Clone)]
pub struct EmStep {
    pub params: ModelParams,
    /// Log-likelihood of the parameters the step started from.
    pub previous_log_likelihood: f64,
    /// 0-based items whose slipping or guessing class had no posterior mass;
    /// their value was carried over (clipped) instead of re-estimated.
    pub empty_classes: Vec<usize>,
}

fn step_inner(
    q: &QMatrix,
    table: &mut ThetaTable,
    params: &ModelParams,
    data: &PatternData,
    clip: f64,
) -> EmStep {
    let j_dim = q.items();
    let profiles = table.profiles;
    table.fill(params.slipping(), params.guessing());

    let log_p: Vec<f64> = params.proportions().iter().map(|p| p.ln()).collect();
    let mut p_mass = vec![0.0; profiles];
    // mastery class: total weight, weight of wrong answers
    let mut on_total = vec![0.0; j_dim];
    let mut on_wrong = vec![0.0; j_dim];
    // non-mastery class: total weight, weight of right answers
    let mut off_total = vec![0.0; j_dim];
    let mut off_right = vec![0.0; j_dim];
    let mut joint = vec![0.0; profiles];
    let mut ll = 0.0;

    for (pattern, &count) in data.patterns.iter().zip(&data.counts) {
        log_joint(table, &log_p, pattern, &mut joint);
        let norm = log_sum(&joint);
        ll += count * norm;
        for (a, &lj) in joint.iter().enumerate() {
            let w = count * (lj - norm).exp();
            p_mass[a] += w;
            for (j, &rj) in pattern.iter().enumerate() {
                if table.ideal(j, a) {
                    on_total[j] += w;
                    if rj == 0 {
                        on_wrong[j] += w;
                    }
                } else {
                    off_total[j] += w;
                    if rj == 1 {
                        off_right[j] += w;
                    }
                }
            }
        }
    }

    let clamp = |x: f64| x.clamp(clip, 1.0 - clip);
    let mut empty = Vec::new();
    let mut s = Vec::with_capacity(j_dim);
    let mut g = Vec::with_capacity(j_dim);
    for j in 0..j_dim {
        let mut flagged = false;
        s.push(if on_total[j] > 0.0 {
            clamp(on_wrong[j] / on_total[j])
        } else {
            flagged = true;
            clamp(params.slipping()[j])
        });
        if q.is_zero_row(j) {
            g.push(0.0);
        } else if off_total[j] > 0.0 {
            g.push(clamp(off_right[j] / off_total[j]));
        } else {
            flagged = true;
            g.push(clamp(params.guessing()[j]));
        }
        if flagged {
            empty.push(j);
        }
    }
    let mass: f64 = p_mass.iter().sum();
    let p = p_mass.into_iter().map(|m| m / mass).collect();
    debug_assert!((mass - data.total).abs() <= 1e-6 * data.total);

    EmStep {
        params: ModelParams::from_parts_unchecked(s, g, p),
        previous_log_likelihood: ll,
        empty_classes: empty,
    }
}

/// One EM iteration: posterior profile weights per subject, then closed-form
/// updates of `p`, `s` and `g` (guessing stays 0 for all-zero q-vectors).
pub fn em_step(
    q: &QMatrix,
    params: &ModelParams,
    data: &ResponseDataset,
    clip: f64,
) -> Result<EmStep> {
    let patterns = PatternData::new(q, data)?;
    let mut table = ThetaTable::new(q, params)?;
    Ok(step_inner(q, &mut table, params, &patterns, clip))
}

/// Random interior start: `p ~ Dirichlet(1)`, `s, g ~ U(0.05, 0.35)`.
pub fn random_start(q: &QMatrix, rng: &mut impl Rng) -> ModelParams {
    let profiles = 1usize << q.attributes();
    let raw: Vec<f64> = (0..profiles).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let total: f64 = raw.iter().sum();
    let p = raw.into_iter().map(|x| x / total).collect();
    let s = (0..q.items()).map(|_| rng.gen_range(0.05..0.35)).collect();
    let g = (0..q.items())
        .map(|j| {
            let v = rng.gen_range(0.05..0.35);
            if q.is_zero_row(j) {
                0.0
            } else {
                v
            }
        })
        .collect();
    ModelParams::from_parts_unchecked(s, g, p)
}

#[derive(Debug, Clone)]
struct Chain {
    params: ModelParams,
    log_likelihood: f64,
    iterations: usize,
    tolerance_met: bool,
    empty_classes: bool,
}

fn run_chain(
    q: &QMatrix,
    data: &PatternData,
    start: ModelParams,
    config: &EMConfig,
) -> Result<Chain> {
    let mut table = ThetaTable::new(q, &start)?;
    let mut current = start;
    let mut current_ll: Option<f64> = None;
    let mut empty_seen = false;
    let mut iterations = 0;
    while iterations < config.max_iterations {
        let step = step_inner(q, &mut table, &current, data, config.clip);
        iterations += 1;
        empty_seen |= !step.empty_classes.is_empty();
        let ll = step.previous_log_likelihood;
        if let Some(prev) = current_ll {
            let rel = (ll - prev) / prev.abs().max(f64::MIN_POSITIVE);
            if rel < config.tolerance {
                return Ok(Chain {
                    params: current,
                    log_likelihood: ll,
                    iterations,
                    tolerance_met: true,
                    empty_classes: empty_seen,
                });
            }
        }
        current_ll = Some(ll);
        current = step.params;
    }
    // score the final iterate
    let last = step_inner(q, &mut table, &current, data, config.clip);
    Ok(Chain {
        params: current,
        log_likelihood: last.previous_log_likelihood,
        iterations,
        tolerance_met: false,
        empty_classes: empty_seen,
    })
}

fn violates_monotonicity(q: &QMatrix, params: &ModelParams) -> Vec<usize> {
    (0..q.items())
        .filter(|&j| !q.is_zero_row(j))
        .filter(|&j| 1.0 - params.slipping()[j] <= params.guessing()[j])
        .collect()
}

/// Run `config.starts` EM chains from seeded random starts and keep the one
/// with the highest terminal log-likelihood among those with `1 - s > g`
/// (any chain if none qualifies; ties go to the lowest start).
pub fn fit(q: &QMatrix, data: &ResponseDataset, config: &EMConfig) -> Result<EMResult> {
    config.validate()?;
    let patterns = PatternData::new(q, data)?;
    let chains: Vec<Chain> = (0..config.starts)
        .into_par_iter()
        .map(|start| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[config.seed, start as u64]));
            let init = random_start(q, &mut rng);
            run_chain(q, &patterns, init, config)
        })
        .collect::<Result<_>>()?;

    // label-swapped solutions share the likelihood; prefer 1 - s > g
    let rank = |c: &Chain| {
        (
            violates_monotonicity(q, &c.params).is_empty(),
            c.log_likelihood,
        )
    };
    let (start_index, best) = chains
        .iter()
        .enumerate()
        .fold(None::<(usize, &Chain)>, |acc, (i, c)| match acc {
            Some((_, b)) if rank(b) >= rank(c) => acc,
            _ => Some((i, c)),
        })
        .expect("at least one start");

    let mut warnings = Vec::new();
    match identifiability_verdict(q) {
        Ok(report) if !report.is_identifiable() => warnings.push(NOT_IDENTIFIABLE_WARNING.into()),
        Ok(_) => {}
        Err(e) => warnings.push(format!("identifiability not assessed: {e}")),
    }
    if !best.tolerance_met {
        warnings.push(format!(
            "iteration cap {} reached before the stopping tolerance",
            config.max_iterations
        ));
    }
    if best.empty_classes {
        warnings
            .push("some items had an empty response class; their values were carried over".into());
    }
    let bad = violates_monotonicity(q, &best.params);
    if !bad.is_empty() {
        let items: Vec<String> = bad.iter().map(|j| (j + 1).to_string()).collect();
        warnings.push(format!(
            "estimate violates 1 - s > g for item(s) {}",
            items.join(",")
        ));
    }

    Ok(EMResult {
        params: best.params.clone(),
        log_likelihood: best.log_likelihood,
        iterations: best.iterations,
        converged: best.tolerance_met && bad.is_empty(),
        tolerance_met: best.tolerance_met,
        start_index,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockMse {
    pub p: f64,
    pub s: f64,
    pub g: f64,
}

/// Per block, the sum of squared component errors averaged over estimates.
pub fn block_mse(estimates: &[ModelParams], truth: &ModelParams) -> Result<BlockMse> {
    if estimates.is_empty() {
        return Err(DinaError::EmptyInput("no estimates to summarize"));
    }
    let sq = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum() };
    let mut acc = BlockMse {
        p: 0.0,
        s: 0.0,
        g: 0.0,
    };
    for est in estimates {
        if est.items() != truth.items() || est.proportions().len() != truth.proportions().len() {
            return Err(DinaError::DimensionMismatch(
                "estimate and truth have different shapes".into(),
            ));
        }
        acc.p += sq(est.proportions(), truth.proportions());
        acc.s += sq(est.slipping(), truth.slipping());
        acc.g += sq(est.guessing(), truth.guessing());
    }
    let n = estimates.len() as f64;
    Ok(BlockMse {
        p: acc.p / n,
        s: acc.s / n,
        g: acc.g / n,
    })
}
