//! Non-identifiability witnesses.
//!
//! When the Q-matrix is complete with every attribute measured at least three
//! times but two columns `a`, `b` of `Q*` coincide, every item other than the
//! identity rows of `a` and `b` either requires both attributes or neither.
//! Keeping `s`, every other `g_j` and all `p_{(1,1,α*)}` fixed, the guessing
//! parameters of the two identity items and the remaining proportions can be
//! moved along a one-parameter curve without changing the response
//! distribution. This module solves for a point on that curve with a damped
//! Newton iteration and certifies it through the full moment vector.

use nalgebra::{Matrix4, Vector4};
use serde::Serialize;

use crate::error::{DinaError, Result};
use crate::model::{ModelParams, MAX_ATTRIBUTES};
use crate::order::CanonicalOrder;
use crate::qmatrix::{identifiability_verdict, QMatrix};
use crate::tmoments::distribution_distance;

/// Default perturbation of the `(0,0)` proportions.
pub const DEFAULT_PERTURBATION: f64 = 0.998;
/// Witness residual bound for the defining equation system.
pub const RESIDUAL_TOL: f64 = 1e-10;
/// Witness bound on the moment-vector distance.
pub const GAP_TOL: f64 = 1e-9;
/// Minimum componentwise difference for the pair to count as distinct.
pub const DISTINCT_TOL: f64 = 1e-6;
/// Alternates must stay this far inside every boundary.
pub const INTERIOR_MARGIN: f64 = 1e-6;

const NEWTON_TOL: f64 = 1e-12;
const NEWTON_MAX_ITER: usize = 200;
const FAMILY_RTOL: f64 = 1e-9;

/// Location of a duplicated `Q*` column pair. All indices are 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DuplicatePattern {
    /// Attributes whose `Q*` columns coincide, smallest pair first.
    pub pair: (usize, usize),
    /// Identity items for `pair.0` and `pair.1`.
    pub identity_items: (usize, usize),
    /// Row order placing `e_a`, `e_b`, the other identity rows and then the
    /// rest, which brings `Q` into the two-equal-columns template.
    pub row_permutation: Vec<usize>,
    /// Column order with `a`, `b` first.
    pub column_permutation: Vec<usize>,
}

/// Two distinct parameter sets with the same response distribution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WitnessPair {
    pub original: ModelParams,
    pub alternate: ModelParams,
    /// Scale applied to the `(0,0)` proportions (`c` for `K = 2`).
    pub rho_bar: f64,
    /// Max absolute violation of the solved equation system.
    pub residual: f64,
    /// Max absolute moment-vector difference between the two sets.
    pub distribution_gap: f64,
}

impl WitnessPair {
    pub fn separation(&self) -> f64 {
        self.original.max_abs_diff(&self.alternate)
    }

    pub fn is_sound(&self) -> bool {
        self.residual <= RESIDUAL_TOL
            && self.distribution_gap <= GAP_TOL
            && self.separation() > DISTINCT_TOL
    }
}

/// Find the lowest duplicated `Q*` column pair and the permutation bringing
/// `q` into the template. `Ok(None)` when Condition 2 holds.
pub fn detect_duplicate_pattern(q: &QMatrix) -> Result<Option<DuplicatePattern>> {
    let report = identifiability_verdict(q)?;
    if !report.condition1_holds {
        return Err(DinaError::Unsupported(
            "the witness construction needs a complete Q-matrix with every attribute \
             required by at least 3 items (Condition 1)"
                .into(),
        ));
    }
    if report.condition2_holds {
        return Ok(None);
    }
    let identity = report
        .identity_rows
        .clone()
        .expect("Condition 1 implies completeness");
    let &(a, b) = report
        .duplicate_column_pairs
        .first()
        .expect("Condition 2 failure under Condition 1 lists a pair");
    let (ia, ib) = (identity[a - 1], identity[b - 1]);

    let mut rows = vec![ia, ib];
    rows.extend(
        identity
            .iter()
            .enumerate()
            .filter(|(k, _)| k + 1 != a && k + 1 != b)
            .map(|(_, &r)| r),
    );
    rows.extend((1..=q.items()).filter(|r| !identity.contains(r)));
    let mut cols = vec![a, b];
    cols.extend((1..=q.attributes()).filter(|&k| k != a && k != b));

    let pattern = DuplicatePattern {
        pair: (a, b),
        identity_items: (ia, ib),
        row_permutation: rows,
        column_permutation: cols,
    };
    if !matches_template(q, &pattern) {
        return Err(DinaError::Unsupported(
            "Q-matrix does not reduce to the two-equal-columns template".into(),
        ));
    }
    Ok(Some(pattern))
}

/// Permuted matrix starts with `I_K` and its first two columns agree below it.
fn matches_template(q: &QMatrix, pat: &DuplicatePattern) -> bool {
    let k_dim = q.attributes();
    let entry =
        |r: usize, c: usize| q.get(pat.row_permutation[r] - 1, pat.column_permutation[c] - 1);
    let head_is_identity = (0..k_dim).all(|r| (0..k_dim).all(|c| entry(r, c) == u8::from(r == c)));
    let tail_equal = (k_dim..q.items()).all(|r| entry(r, 0) == entry(r, 1));
    head_is_identity && tail_equal
}

type Jacobian = [[f64; 4]; 4];

/// Damped Newton on a 4×4 system: full step first, halved while the residual
/// max-norm grows.
fn damped_newton<F>(x0: [f64; 4], system: F) -> Result<([f64; 4], f64)>
where
    F: Fn(&[f64; 4]) -> ([f64; 4], Jacobian),
{
    let norm = |v: &[f64; 4]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut x = x0;
    let (mut f, mut jac) = system(&x);
    let mut res = norm(&f);
    for _ in 0..NEWTON_MAX_ITER {
        if res <= NEWTON_TOL {
            return Ok((x, res));
        }
        let jm = Matrix4::from_fn(|r, c| jac[r][c]);
        let rhs = Vector4::from_column_slice(&f);
        let Some(delta) = jm.lu().solve(&rhs) else {
            return Err(DinaError::SolverDiverged {
                iterations: NEWTON_MAX_ITER,
                residual: res,
            });
        };
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: [f64; 4] = std::array::from_fn(|i| x[i] - lambda * delta[i]);
            let (tf, tj) = system(&trial);
            let tres = norm(&tf);
            if tres.is_finite() && tres < res {
                x = trial;
                f = tf;
                jac = tj;
                res = tres;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            // no decrease along the Newton direction: at the floating-point floor
            break;
        }
    }
    if res <= NEWTON_TOL {
        Ok((x, res))
    } else {
        Err(DinaError::SolverDiverged {
            iterations: NEWTON_MAX_ITER,
            residual: res,
        })
    }
}

/// The three-component mixture over profiles `00`, `01`, `10` of the pair,
/// scaled so that the `00` mass is 1: `(R_1, R_2)` has product components
/// `(g1, g2)`, `(g1, 1-s2)` with weight `u` and `(1-s1, g2)` with weight `v`.
/// Its law is fixed by the mass `M`, the margins `m1`, `m2` and
/// `a·b = m1·m2 - M·P(1,1)`, where `a = v(1-s1-g1)` and `b = u(1-s2-g2)`.
/// Fixing `ḡ1` therefore determines everything else, which traces the
/// solution set as a curve in `ḡ1`.
struct PairSystem {
    u: f64,
    v: f64,
    g1: f64,
    g2: f64,
    on1: f64,
    on2: f64,
}

impl PairSystem {
    const GRID: usize = 4000;

    /// `(ū, v̄, ḡ1, ḡ2)` on the curve at `ḡ1 = h1` for scale `rho`, plus the
    /// mismatch `M - rho(1 + ū + v̄)` measured before `ū` absorbs it.
    fn at(&self, h1: f64, rho: f64) -> Option<([f64; 4], f64)> {
        let mass = 1.0 + self.u + self.v;
        let m1 = self.g1 * (1.0 + self.u) + self.on1 * self.v;
        let m2 = self.g2 * (1.0 + self.v) + self.on2 * self.u;
        let joint = self.g1 * self.g2 + self.g1 * self.on2 * self.u + self.on1 * self.g2 * self.v;
        let ab = m1 * m2 - mass * joint;
        let a = m1 - h1 * mass;
        if a.is_nan() || a <= 0.0 || h1.is_nan() || h1 <= 0.0 || h1 >= self.on1 {
            return None;
        }
        let b = ab / a;
        let h2 = (m2 - b) / mass;
        if !(h2 > 0.0 && h2 < self.on2) {
            return None;
        }
        let p10 = a / (self.on1 - h1);
        let p01 = b / (self.on2 - h2);
        let mismatch = mass - rho - p10 - p01;
        Some(([p01 / rho, p10 / rho, h1, h2], mismatch))
    }

    /// Point of the curve with scale `rho`, nearest the original `g1`.
    /// Sign changes of the mismatch are bracketed on a grid and bisected.
    fn curve_point(&self, rho: f64) -> Result<[f64; 4]> {
        let infeasible = |reason: &str| DinaError::InfeasiblePerturbation {
            perturbation: rho,
            reason: reason.into(),
        };
        if let Some((x, f)) = self.at(self.g1, rho) {
            if f.abs() <= 1e-15 * (1.0 + self.u + self.v) {
                return Ok(x);
            }
        }
        let hi = self.on1;
        let step = hi / Self::GRID as f64;
        let grid: Vec<(f64, f64)> = (1..Self::GRID)
            .filter_map(|i| {
                let h = i as f64 * step;
                self.at(h, rho).map(|(_, f)| (h, f))
            })
            .collect();
        let bracket = grid
            .windows(2)
            .filter(|w| (w[1].0 - w[0].0) < 1.5 * step && w[0].1.signum() != w[1].1.signum())
            .min_by(|x, y| {
                let d = |w: &[(f64, f64)]| (0.5 * (w[0].0 + w[1].0) - self.g1).abs();
                d(x).total_cmp(&d(y))
            })
            .ok_or_else(|| {
                infeasible("no parameter set with this perturbation keeps the distribution")
            })?;
        let (mut lo, mut hi, mut f_lo) = (bracket[0].0, bracket[1].0, bracket[0].1);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let (_, f_mid) = self
                .at(mid, rho)
                .ok_or_else(|| infeasible("curve left the valid region"))?;
            if f_mid.signum() == f_lo.signum() {
                lo = mid;
                f_lo = f_mid;
            } else {
                hi = mid;
            }
        }
        let (x, _) = self
            .at(0.5 * (lo + hi), rho)
            .ok_or_else(|| infeasible("curve left the valid region"))?;
        Ok(x)
    }
}

fn ensure_interior(q: &QMatrix, alt: &ModelParams, perturbation: f64) -> Result<()> {
    let infeasible = |reason: String| DinaError::InfeasiblePerturbation {
        perturbation,
        reason,
    };
    let m = INTERIOR_MARGIN;
    for j in 0..q.items() {
        let (s, g) = (alt.slipping()[j], alt.guessing()[j]);
        if !(s >= m && s <= 1.0 - m) {
            return Err(infeasible(format!("s[{}] = {s}", j + 1)));
        }
        if q.is_zero_row(j) {
            continue;
        }
        if !(g >= m && g <= 1.0 - m) {
            return Err(infeasible(format!("g[{}] = {g}", j + 1)));
        }
        if (1.0 - s - g).is_nan() || 1.0 - s - g < m {
            return Err(infeasible(format!(
                "item {}: 1 - s - g = {}",
                j + 1,
                1.0 - s - g
            )));
        }
    }
    if let Some((pos, v)) = alt
        .proportions()
        .iter()
        .enumerate()
        .find(|(_, &v)| v.is_nan() || v < m)
    {
        return Err(infeasible(format!("p at canonical position {pos} = {v}")));
    }
    alt.check_interior(q).map_err(|e| infeasible(e.to_string()))
}

fn require_pattern(q: &QMatrix) -> Result<DuplicatePattern> {
    detect_duplicate_pattern(q)?.ok_or(DinaError::Identifiable)
}

fn finish(
    q: &QMatrix,
    original: &ModelParams,
    alternate: ModelParams,
    rho_bar: f64,
    residual: f64,
) -> Result<WitnessPair> {
    ensure_interior(q, &alternate, rho_bar)?;
    let distribution_gap = distribution_distance(q, original, &alternate)?;
    Ok(WitnessPair {
        original: original.clone(),
        alternate,
        rho_bar,
        residual,
        distribution_gap,
    })
}

/// Two-attribute case. Keeps `s`, `g_j` for `j` beyond the identity items and
/// `p_(11)`, sets `p̄_(00) = c·p_(00)` and solves the four marginal equations
/// of the first two items for `(p̄_(10), p̄_(01), ḡ_1, ḡ_2)`.
pub fn solve_k2_witness(q: &QMatrix, params: &ModelParams, shrink: f64) -> Result<WitnessPair> {
    if q.attributes() != 2 {
        return Err(DinaError::Unsupported(format!(
            "two-attribute construction applied to K = {}",
            q.attributes()
        )));
    }
    if shrink.is_nan() || shrink <= 0.0 {
        return Err(DinaError::InvalidConfig(
            "shrink factor must be positive".into(),
        ));
    }
    params.check_interior(q)?;
    let pat = require_pattern(q)?;
    let (i1, i2) = (pat.identity_items.0 - 1, pat.identity_items.1 - 1);
    let (s1, s2) = (params.slipping()[i1], params.slipping()[i2]);
    let (g1, g2) = (params.guessing()[i1], params.guessing()[i2]);
    // canonical order for K = 2: 00, 10, 01, 11
    let pp = params.proportions();
    let (p00, p10, p01, p11) = (pp[0], pp[1], pp[2], pp[3]);
    let bar00 = shrink * p00;
    let (on1, on2) = (1.0 - s1, 1.0 - s2);

    let rhs = [
        p00 + p10 + p01 + p11,
        g1 * (p00 + p01) + on1 * (p10 + p11),
        g2 * (p00 + p10) + on2 * (p01 + p11),
        g1 * g2 * p00 + g1 * on2 * p01 + on1 * g2 * p10 + on1 * on2 * p11,
    ];
    let system = |x: &[f64; 4]| {
        let [q10, q01, h1, h2] = *x;
        let f = [
            bar00 + q10 + q01 + p11 - rhs[0],
            h1 * (bar00 + q01) + on1 * (q10 + p11) - rhs[1],
            h2 * (bar00 + q10) + on2 * (q01 + p11) - rhs[2],
            h1 * h2 * bar00 + h1 * on2 * q01 + on1 * h2 * q10 + on1 * on2 * p11 - rhs[3],
        ];
        let jac = [
            [1.0, 1.0, 0.0, 0.0],
            [on1, h1, bar00 + q01, 0.0],
            [h2, on2, 0.0, bar00 + q10],
            [
                on1 * h2,
                h1 * on2,
                h2 * bar00 + on2 * q01,
                h1 * bar00 + on1 * q10,
            ],
        ];
        (f, jac)
    };
    let pair = PairSystem {
        u: p01 / p00,
        v: p10 / p00,
        g1,
        g2,
        on1,
        on2,
    };
    let [ub, vb, h1, h2] = pair.curve_point(shrink)?;
    let start = [shrink * vb * p00, shrink * ub * p00, h1, h2];
    let (x, residual) = damped_newton(start, system)?;
    let [q10, q01, h1, h2] = x;

    let mut g = params.guessing().to_vec();
    g[i1] = h1;
    g[i2] = h2;
    let alternate = ModelParams::from_parts_unchecked(
        params.slipping().to_vec(),
        g,
        vec![bar00, q10, q01, p11],
    );
    finish(q, params, alternate, shrink, residual)
}

/// Profile groups `(00, 01, 10, 11)` over the pair `(a, b)`, one per setting
/// of the remaining attributes. Entries are canonical positions; `01` means
/// `α_a = 0, α_b = 1`.
fn pair_groups(k_dim: usize, a: usize, b: usize) -> Result<Vec<[usize; 4]>> {
    let order = CanonicalOrder::new(k_dim)?;
    let (ba, bb) = (1u64 << a, 1u64 << b);
    Ok(order
        .iter()
        .filter(|m| m & (ba | bb) == 0)
        .map(|m| {
            [
                order.position(m),
                order.position(m | bb),
                order.position(m | ba),
                order.position(m | ba | bb),
            ]
        })
        .collect())
}

fn close(x: f64, y: f64) -> bool {
    (x - y).abs() <= FAMILY_RTOL * x.abs().max(y.abs()).max(1e-300)
}

/// Ratios `(u, v) = (p_(0,1,α*)/p_(0,0,α*), p_(1,0,α*)/p_(0,0,α*))` when they
/// are the same for every `α*`.
pub fn family_ratios(
    q: &QMatrix,
    params: &ModelParams,
    pair: (usize, usize),
) -> Result<(f64, f64)> {
    let groups = pair_groups(q.attributes(), pair.0 - 1, pair.1 - 1)?;
    let p = params.proportions();
    let ratio = |g: &[usize; 4]| (p[g[1]] / p[g[0]], p[g[2]] / p[g[0]]);
    let (u, v) = ratio(&groups[0]);
    for g in &groups[1..] {
        let (ui, vi) = ratio(g);
        if !close(u, ui) || !close(v, vi) {
            return Err(DinaError::Unsupported(format!(
                "parameters are outside the ratio family for attributes ({},{}): \
                 p(01)/p(00) and p(10)/p(00) must not depend on the other attributes",
                pair.0, pair.1
            )));
        }
    }
    Ok((u, v))
}

/// Move `params` into the ratio family for its duplicated pair: pooled
/// ratios, with the `(00, 01, 10)` mass of each `α*` group preserved.
pub fn project_into_family(q: &QMatrix, params: &ModelParams) -> Result<ModelParams> {
    let pat = require_pattern(q)?;
    let groups = pair_groups(q.attributes(), pat.pair.0 - 1, pat.pair.1 - 1)?;
    let p = params.proportions();
    let sum = |i: usize| groups.iter().map(|g| p[g[i]]).sum::<f64>();
    let (u, v) = (sum(1) / sum(0), sum(2) / sum(0));
    let mut out = p.to_vec();
    for g in &groups {
        let mass = p[g[0]] + p[g[1]] + p[g[2]];
        let base = mass / (1.0 + u + v);
        out[g[0]] = base;
        out[g[1]] = u * base;
        out[g[2]] = v * base;
    }
    ModelParams::new(
        q,
        params.slipping().to_vec(),
        params.guessing().to_vec(),
        out,
    )
}

/// General `K` construction inside the ratio family. Fixes `ρ̄`, solves for
/// `(ū, v̄, ḡ_a, ḡ_b)` and rebuilds `p̄` with `p̄_(1,1,α*) = p_(1,1,α*)`,
/// `p̄_(0,0,α*) = ρ̄ p_(0,0,α*)` and ratios `ū`, `v̄`.
pub fn solve_general_witness(
    q: &QMatrix,
    params: &ModelParams,
    rho_bar: f64,
) -> Result<WitnessPair> {
    if q.attributes() < 2 || q.attributes() > MAX_ATTRIBUTES {
        return Err(DinaError::Unsupported(format!(
            "witness construction needs 2 <= K <= {MAX_ATTRIBUTES}"
        )));
    }
    if rho_bar.is_nan() || rho_bar <= 0.0 {
        return Err(DinaError::InvalidConfig("rho_bar must be positive".into()));
    }
    params.check_interior(q)?;
    let pat = require_pattern(q)?;
    let (u, v) = family_ratios(q, params, pat.pair)?;
    let (ia, ib) = (pat.identity_items.0 - 1, pat.identity_items.1 - 1);
    let (on1, on2) = (1.0 - params.slipping()[ia], 1.0 - params.slipping()[ib]);
    let (g1, g2) = (params.guessing()[ia], params.guessing()[ib]);
    let rho = rho_bar;

    let rhs = [
        1.0 + u + v,
        g1 * (1.0 + u) + on1 * v,
        g2 * (1.0 + v) + on2 * u,
        g1 * g2 + g1 * on2 * u + on1 * g2 * v,
    ];
    let system = |x: &[f64; 4]| {
        let [ub, vb, h1, h2] = *x;
        let f = [
            rho * (1.0 + ub + vb) - rhs[0],
            rho * (h1 * (1.0 + ub) + on1 * vb) - rhs[1],
            rho * (h2 * (1.0 + vb) + on2 * ub) - rhs[2],
            rho * (h1 * h2 + h1 * on2 * ub + on1 * h2 * vb) - rhs[3],
        ];
        let jac = [
            [rho, rho, 0.0, 0.0],
            [rho * h1, rho * on1, rho * (1.0 + ub), 0.0],
            [rho * on2, rho * h2, 0.0, rho * (1.0 + vb)],
            [
                rho * h1 * on2,
                rho * on1 * h2,
                rho * (h2 + on2 * ub),
                rho * (h1 + on1 * vb),
            ],
        ];
        (f, jac)
    };
    let start = PairSystem {
        u,
        v,
        g1,
        g2,
        on1,
        on2,
    }
    .curve_point(rho)?;
    let (x, residual) = damped_newton(start, system)?;
    let [ub, vb, h1, h2] = x;

    let groups = pair_groups(q.attributes(), pat.pair.0 - 1, pat.pair.1 - 1)?;
    let mut p = params.proportions().to_vec();
    for grp in &groups {
        let base = params.proportions()[grp[0]];
        p[grp[0]] = rho * base;
        p[grp[1]] = rho * ub * base;
        p[grp[2]] = rho * vb * base;
    }
    let mut g = params.guessing().to_vec();
    g[ia] = h1;
    g[ib] = h2;
    let alternate = ModelParams::from_parts_unchecked(params.slipping().to_vec(), g, p);
    finish(q, params, alternate, rho_bar, residual)
}

/// Build and verify a witness with the default perturbation.
pub fn certify_nonidentifiable(q: &QMatrix, params: &ModelParams) -> Result<WitnessPair> {
    certify_with(q, params, DEFAULT_PERTURBATION)
}

/// Build a witness with the given perturbation and check it: moment gap
/// within [`GAP_TOL`], residual within [`RESIDUAL_TOL`] and the two sets
/// differing by more than [`DISTINCT_TOL`].
pub fn certify_with(q: &QMatrix, params: &ModelParams, perturbation: f64) -> Result<WitnessPair> {
    let report = identifiability_verdict(q)?;
    if report.is_identifiable() {
        return Err(DinaError::Identifiable);
    }
    if !report.condition1_holds {
        return Err(DinaError::Unsupported(format!(
            "{}; witnesses are only constructed when Condition 1 holds",
            report.summary()
        )));
    }
    let pair = if q.attributes() == 2 {
        solve_k2_witness(q, params, perturbation)?
    } else {
        solve_general_witness(q, params, perturbation)?
    };
    if pair.residual > RESIDUAL_TOL {
        return Err(DinaError::SolverDiverged {
            iterations: NEWTON_MAX_ITER,
            residual: pair.residual,
        });
    }
    if pair.distribution_gap > GAP_TOL {
        return Err(DinaError::InfeasiblePerturbation {
            perturbation,
            reason: format!("moment gap {:e} exceeds {GAP_TOL:e}", pair.distribution_gap),
        });
    }
    if pair.separation() <= DISTINCT_TOL {
        return Err(DinaError::InfeasiblePerturbation {
            perturbation,
            reason: "alternate coincides with the original; use a value different from 1".into(),
        });
    }
    Ok(pair)
}
