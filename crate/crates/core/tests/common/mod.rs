#![allow(dead_code)]

use std::path::PathBuf;

use dina_core::em::{em_step, random_start};
use dina_core::model::{log_likelihood, response_pattern_prob, simulate};
use dina_core::qmatrix::{identifiability_verdict, parse_qmatrix};
use dina_core::tmoments::{empirical_gamma, generalized_transform, moment_vector, t_matrix};
use dina_core::witness::{certify_with, project_into_family};
use dina_core::{DinaError, ModelParams, QMatrix, ResponseDataset, Verdict};
use nalgebra::DMatrix;
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

pub fn load_q(name: &str) -> QMatrix {
    let path = data_dir().join("qmatrices").join(format!("{name}.csv"));
    parse_qmatrix(&std::fs::read_to_string(&path).unwrap()).unwrap()
}

pub fn load_params(q: &QMatrix, name: &str) -> ModelParams {
    let path = data_dir().join("params").join(format!("{name}.json"));
    ModelParams::from_json(q, &std::fs::read_to_string(&path).unwrap()).unwrap()
}

fn shuffle_rows(rows: &mut [Vec<u8>], seed: u64) {
    rows.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
}

/// Complete Q with `k <= max_k` attributes and at most `max_j` items, rows
/// shuffled, with interior parameters satisfying `1 - s > g`.
pub fn complete_q_and_params(
    max_j: usize,
    max_k: usize,
) -> impl Strategy<Value = (QMatrix, ModelParams)> {
    (1..=max_k)
        .prop_flat_map(move |k| {
            let extra = max_j.max(k) - k;
            (
                prop::collection::vec(prop::collection::vec(0u8..=1, k), 0..=extra),
                prop::collection::vec(0.02f64..0.45, max_j.max(k)),
                prop::collection::vec(0.02f64..0.45, max_j.max(k)),
                prop::collection::vec(0.05f64..1.0, 1usize << k),
                any::<u64>(),
                Just(k),
            )
        })
        .prop_map(|(extra, s, g, w, seed, k)| {
            let mut rows: Vec<Vec<u8>> = (0..k)
                .map(|i| (0..k).map(|c| u8::from(c == i)).collect())
                .collect();
            rows.extend(extra);
            shuffle_rows(&mut rows, seed);
            let q = QMatrix::from_rows(&rows).unwrap();
            let j = q.items();
            let g: Vec<f64> = (0..j)
                .map(|i| if q.is_zero_row(i) { 0.0 } else { g[i] })
                .collect();
            let total: f64 = w.iter().sum();
            let p = w.iter().map(|x| x / total).collect();
            let params = ModelParams::new(&q, s[..j].to_vec(), g, p).unwrap();
            (q, params)
        })
}

/// Any binary matrix up to the given size.
pub fn binary_q(max_j: usize, max_k: usize) -> impl Strategy<Value = Vec<Vec<u8>>> {
    (1..=max_k, 1..=max_j)
        .prop_flat_map(|(k, j)| prop::collection::vec(prop::collection::vec(0u8..=1, k), j))
}

/// Non-identifiable Q-matrices from the examples, with in-family truths.
pub fn witness_case() -> impl Strategy<Value = (QMatrix, ModelParams, f64)> {
    let names = [
        "two_attr_j10",
        "dup_cols_k3_a",
        "dup_cols_k3_b",
        "dup_cols_k3_c",
        "dup_cols_k4",
    ];
    (
        0..names.len(),
        0usize..3,
        prop::collection::vec(0.05f64..0.3, 12),
        prop::collection::vec(0.05f64..0.3, 12),
        prop::collection::vec(0.2f64..1.0, 16),
        0.99f64..0.9995,
    )
        .prop_map(move |(which, zero_rows, s, g, w, rho)| {
            let base = load_q(names[which]);
            let mut rows: Vec<Vec<u8>> = base.rows().map(|r| r.to_vec()).collect();
            for _ in 0..zero_rows {
                rows.push(vec![0; base.attributes()]);
            }
            let q = QMatrix::from_rows(&rows).unwrap();
            let j = q.items();
            let profiles = 1usize << q.attributes();
            let total: f64 = w[..profiles].iter().sum();
            let p = w[..profiles].iter().map(|x| x / total).collect();
            let g = (0..j)
                .map(|i| if q.is_zero_row(i) { 0.0 } else { g[i] })
                .collect();
            let raw = ModelParams::new(&q, s[..j].to_vec(), g, p).unwrap();
            let params = project_into_family(&q, &raw).unwrap();
            (q, params, rho)
        })
}

/// `P(R ⪰ r)` by enumerating every pattern above `r`.
pub fn moment_oracle(q: &QMatrix, params: &ModelParams, r: &[u8]) -> f64 {
    let j = q.items();
    let free: Vec<usize> = (0..j).filter(|&i| r[i] == 0).collect();
    let mut total = 0.0;
    for bits in 0u64..(1 << free.len()) {
        let mut pattern = r.to_vec();
        for (t, &i) in free.iter().enumerate() {
            pattern[i] = (bits >> t & 1) as u8;
        }
        total += response_pattern_prob(q, params, &pattern).unwrap();
    }
    total
}

/// Conditions 1 and 2 by trying every ordered choice of `K` rows as the
/// identity block of the non-zero rows.
pub fn brute_force_identifiable(rows: &[Vec<u8>]) -> bool {
    let k = rows[0].len();
    let nonzero: Vec<&Vec<u8>> = rows.iter().filter(|r| r.contains(&1)).collect();
    if nonzero.len() < k {
        return false;
    }
    let counts_ok = (0..k).all(|c| nonzero.iter().filter(|r| r[c] == 1).count() >= 3);
    if !counts_ok {
        return false;
    }
    fn choose(nonzero: &[&Vec<u8>], k: usize, chosen: &mut Vec<usize>) -> bool {
        let level = chosen.len();
        if level == k {
            let rest: Vec<&Vec<u8>> = (0..nonzero.len())
                .filter(|i| !chosen.contains(i))
                .map(|i| nonzero[i])
                .collect();
            if rest.is_empty() {
                return false;
            }
            let col = |c: usize| rest.iter().map(|r| r[c]).collect::<Vec<u8>>();
            return (0..k).all(|a| (a + 1..k).all(|b| col(a) != col(b)));
        }
        for i in 0..nonzero.len() {
            if chosen.contains(&i) {
                continue;
            }
            let is_unit = (0..k).all(|c| nonzero[i][c] == u8::from(c == level));
            if is_unit {
                chosen.push(i);
                if choose(nonzero, k, chosen) {
                    return true;
                }
                chosen.pop();
            }
        }
        false
    }
    choose(&nonzero, k, &mut Vec::new())
}

/// Fast verdict as a bool; an all-zero matrix counts as not identifiable.
pub fn fast_identifiable(rows: &[Vec<u8>]) -> bool {
    let q = QMatrix::from_rows(rows).unwrap();
    match identifiability_verdict(&q) {
        Ok(r) => r.verdict == Verdict::Identifiable,
        Err(DinaError::DegenerateMatrix) => false,
        Err(e) => panic!("unexpected error {e}"),
    }
}

/// Exhaustive comparison over all binary matrices with `j` rows and `k`
/// columns. Returns the first disagreement.
pub fn compare_verdicts_exhaustive(j: usize, k: usize) -> Option<Vec<Vec<u8>>> {
    let cells = j * k;
    for bits in 0u64..(1 << cells) {
        let rows: Vec<Vec<u8>> = (0..j)
            .map(|r| (0..k).map(|c| (bits >> (r * k + c) & 1) as u8).collect())
            .collect();
        if brute_force_identifiable(&rows) != fast_identifiable(&rows) {
            return Some(rows);
        }
    }
    None
}

/// Exchangeable dataset for `Q = [1;1;1]` with counts `round(N · P(r))`.
pub fn exchangeable_data(n: usize, p1: f64, s: f64, g: f64) -> ResponseDataset {
    let mut rows = Vec::new();
    for bits in 0u8..8 {
        let r: Vec<u8> = (0..3).map(|i| bits >> i & 1).collect();
        let pos = r.iter().filter(|&&x| x == 1).count() as i32;
        let prob = (1.0 - p1) * g.powi(pos) * (1.0 - g).powi(3 - pos)
            + p1 * (1.0 - s).powi(pos) * s.powi(3 - pos);
        let count = (n as f64 * prob).round() as usize;
        rows.extend(std::iter::repeat_n(r, count));
    }
    ResponseDataset::from_rows(&rows).unwrap()
}

/// Maximizer of the log-likelihood over common `(s, g, p1)` on a 0.01 grid
/// with `1 - s > g`.
pub fn grid_mle(data: &ResponseDataset) -> (f64, f64, f64) {
    let mut by_positives = [0.0f64; 4];
    for r in data.rows() {
        by_positives[r.iter().filter(|&&x| x == 1).count()] += 1.0;
    }
    let mut best = (f64::NEG_INFINITY, 0.0, 0.0, 0.0);
    for si in 1..100 {
        let s = si as f64 / 100.0;
        for gi in 1..100 {
            let g = gi as f64 / 100.0;
            if 1.0 - s <= g {
                continue;
            }
            for pi in 1..100 {
                let p1 = pi as f64 / 100.0;
                let ll: f64 = (0..4)
                    .map(|k| {
                        let k32 = k as i32;
                        let prob = (1.0 - p1) * g.powi(k32) * (1.0 - g).powi(3 - k32)
                            + p1 * (1.0 - s).powi(k32) * s.powi(3 - k32);
                        by_positives[k] * prob.ln()
                    })
                    .sum();
                if ll > best.0 {
                    best = (ll, s, g, p1);
                }
            }
        }
    }
    (best.1, best.2, best.3)
}

pub fn check_moment_oracle(q: &QMatrix, params: &ModelParams) -> Result<(), TestCaseError> {
    let mv = moment_vector(q, params).unwrap();
    let order = mv.order().clone();
    for (pos, m) in order.iter().enumerate() {
        let r: Vec<u8> = (0..q.items()).map(|i| (m >> i & 1) as u8).collect();
        let want = moment_oracle(q, params, &r);
        prop_assert!(
            (mv.values()[pos] - want).abs() <= 1e-12,
            "pattern {r:?}: {} vs {want}",
            mv.values()[pos]
        );
    }
    Ok(())
}

/// Log-likelihood never decreases along EM and `p` stays on the simplex.
pub fn check_em_ascent(
    q: &QMatrix,
    truth: &ModelParams,
    seed: u64,
    steps: usize,
) -> Result<(), TestCaseError> {
    let data = simulate(q, truth, 300, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
    let mut params = random_start(q, &mut rng);
    let mut prev = log_likelihood(q, &params, &data).unwrap();
    for t in 0..steps {
        let step = em_step(q, &params, &data, 1e-4).unwrap();
        params = step.params;
        let sum: f64 = params.proportions().iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-12, "step {t}: sum p = {sum}");
        prop_assert!(params.proportions().iter().all(|&p| p >= 0.0));
        let ll = log_likelihood(q, &params, &data).unwrap();
        prop_assert!(ll >= prev - 1e-10, "step {t}: {prev} -> {ll}");
        prev = ll;
    }
    Ok(())
}

/// Witness pairs agree under `T(s + θ, g - θ)` for every shift `θ`.
pub fn check_transform_invariance(
    q: &QMatrix,
    params: &ModelParams,
    rho: f64,
    shifts: &[Vec<f64>],
) -> Result<(), TestCaseError> {
    let pair = match certify_with(q, params, rho) {
        Ok(p) => p,
        Err(DinaError::InfeasiblePerturbation { .. }) => {
            return Err(TestCaseError::reject(
                "perturbation leaves the parameter space",
            ))
        }
        Err(e) => return Err(TestCaseError::fail(format!("{e}"))),
    };
    let (a, b) = (&pair.original, &pair.alternate);
    for shift in shifts {
        let theta = &shift[..q.items()];
        let ta =
            generalized_transform(q, a.slipping(), a.guessing(), a.proportions(), theta).unwrap();
        let tb =
            generalized_transform(q, b.slipping(), b.guessing(), b.proportions(), theta).unwrap();
        let gap = ta.max_abs_diff(&tb).unwrap();
        prop_assert!(gap <= 1e-9, "gap {gap} for θ = {theta:?}");
    }
    Ok(())
}

pub fn t_matrix_rank(q: &QMatrix, params: &ModelParams) -> usize {
    let t = t_matrix(q, params.slipping(), params.guessing()).unwrap();
    let m = DMatrix::from_fn(t.len(), t[0].len(), |r, c| t[r][c]);
    let svd = m.svd(false, false);
    let max = svd.singular_values.max();
    svd.singular_values
        .iter()
        .filter(|&&v| v > 1e-10 * max)
        .count()
}

pub fn check_full_rank(q: &QMatrix, params: &ModelParams) -> Result<(), TestCaseError> {
    let rank = t_matrix_rank(q, params);
    prop_assert_eq!(rank, 1usize << q.attributes());
    Ok(())
}

/// Row permutation and zero-row padding leave the verdict unchanged.
pub fn check_verdict_invariance(
    rows: &[Vec<u8>],
    seed: u64,
    zero_rows: usize,
) -> Result<(), TestCaseError> {
    let k = rows[0].len();
    let mut padded = rows.to_vec();
    padded.extend(std::iter::repeat_n(vec![0u8; k], zero_rows));
    shuffle_rows(&mut padded, seed);
    prop_assert_eq!(fast_identifiable(rows), fast_identifiable(&padded));
    Ok(())
}

/// Largest `|γ - T(s, g)p|` for one simulated dataset.
pub fn gamma_gap(q: &QMatrix, params: &ModelParams, n: usize, seed: u64) -> f64 {
    let data = simulate(q, params, n, seed).unwrap();
    let gamma = empirical_gamma(&data).unwrap();
    let exact = moment_vector(q, params).unwrap();
    gamma.max_abs_diff(&exact).unwrap()
}
