//! DINA parameters, response probabilities, likelihood and simulation.
//!
//! Attribute proportions `p` are stored in canonical profile order (see
//! [`crate::order`]), so `p[0]` is the all-zero profile, `p[1..=K]` the single
//! attribute profiles and `p[2^K - 1]` the full-mastery profile.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, WeightedIndex};
use serde::ser::SerializeMap;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{DinaError, Result};
use crate::order::{bits_to_mask, mask_to_bitstring, parse_bitstring, CanonicalOrder};
use crate::qmatrix::{parse_binary_csv, QMatrix};

/// Distance from every boundary required of interior parameters.
pub const INTERIOR_EPS: f64 = 1e-9;
/// Largest supported attribute count (`2^K` mixture components).
pub const MAX_ATTRIBUTES: usize = 20;
const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AttributeProfile {
    bits: Vec<u8>,
}

impl AttributeProfile {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if bits.iter().any(|&b| b > 1) {
            return Err(DinaError::InvalidParams(
                "attribute profile entries must be 0 or 1".into(),
            ));
        }
        Ok(Self { bits })
    }

    pub fn from_mask(mask: u64, k: usize) -> Self {
        Self {
            bits: crate::order::mask_to_bits(mask, k),
        }
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn mask(&self) -> u64 {
        bits_to_mask(&self.bits)
    }

    pub fn bitstring(&self) -> String {
        mask_to_bitstring(self.mask(), self.bits.len())
    }
}

/// `ξ = 1` iff the profile masters every attribute the item requires.
pub fn ideal_response(q_row: &[u8], alpha: &[u8]) -> Result<u8> {
    if q_row.len() != alpha.len() {
        return Err(DinaError::DimensionMismatch(format!(
            "q-vector has {} attributes, profile has {}",
            q_row.len(),
            alpha.len()
        )));
    }
    Ok(u8::from(q_row.iter().zip(alpha).all(|(&q, &a)| a >= q)))
}

#[inline]
pub(crate) fn masters(profile_mask: u64, q_mask: u64) -> bool {
    profile_mask & q_mask == q_mask
}

fn profile_order(k: usize) -> Result<CanonicalOrder> {
    if k > MAX_ATTRIBUTES {
        return Err(DinaError::TooLarge {
            what: "attributes",
            value: k,
            max: MAX_ATTRIBUTES,
        });
    }
    CanonicalOrder::new(k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Region {
    Interior,
    Boundary,
}

/// Slipping, guessing and profile proportions for one Q-matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    s: Vec<f64>,
    g: Vec<f64>,
    p: Vec<f64>,
}

impl ModelParams {
    /// Interior parameters: `s_j, g_j ∈ [ε, 1-ε]`, `1 - s_j - g_j ≥ ε`,
    /// `p_α > 0` summing to one, and `g_j = 0` for all-zero q-vectors.
    pub fn new(q: &QMatrix, s: Vec<f64>, g: Vec<f64>, p: Vec<f64>) -> Result<Self> {
        let params = Self { s, g, p };
        params.validate(q, Region::Interior)?;
        Ok(params)
    }

    /// Closed parameter region, used for deterministic-limit simulation and
    /// pattern probabilities. Allows `s`, `g` in `[0, 1]` and `p_α ≥ 0`.
    pub fn with_boundary(q: &QMatrix, s: Vec<f64>, g: Vec<f64>, p: Vec<f64>) -> Result<Self> {
        let params = Self { s, g, p };
        params.validate(q, Region::Boundary)?;
        Ok(params)
    }

    pub(crate) fn from_parts_unchecked(s: Vec<f64>, g: Vec<f64>, p: Vec<f64>) -> Self {
        Self { s, g, p }
    }

    /// Same `s` and `g` for every item (zero rows keep `g = 0`) and uniform `p`.
    pub fn uniform(q: &QMatrix, slip: f64, guess: f64) -> Result<Self> {
        let j = q.items();
        let s = vec![slip; j];
        let g = (0..j)
            .map(|i| if q.is_zero_row(i) { 0.0 } else { guess })
            .collect();
        let n_profiles = 1usize << q.attributes();
        Self::new(q, s, g, vec![1.0 / n_profiles as f64; n_profiles])
    }

    pub fn slipping(&self) -> &[f64] {
        &self.s
    }

    pub fn guessing(&self) -> &[f64] {
        &self.g
    }

    /// Profile proportions in canonical order.
    pub fn proportions(&self) -> &[f64] {
        &self.p
    }

    pub fn items(&self) -> usize {
        self.s.len()
    }

    pub fn attributes(&self) -> usize {
        self.p.len().trailing_zeros() as usize
    }

    pub fn is_interior(&self, q: &QMatrix) -> bool {
        self.validate(q, Region::Interior).is_ok()
    }

    pub fn check_interior(&self, q: &QMatrix) -> Result<()> {
        self.validate(q, Region::Interior)
    }

    /// Largest absolute componentwise difference across `s`, `g` and `p`.
    pub fn max_abs_diff(&self, other: &ModelParams) -> f64 {
        let pairs = self
            .s
            .iter()
            .zip(&other.s)
            .chain(self.g.iter().zip(&other.g))
            .chain(self.p.iter().zip(&other.p));
        pairs.map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    fn validate(&self, q: &QMatrix, region: Region) -> Result<()> {
        let j_dim = q.items();
        let k_dim = q.attributes();
        if k_dim > MAX_ATTRIBUTES {
            return Err(DinaError::TooLarge {
                what: "attributes",
                value: k_dim,
                max: MAX_ATTRIBUTES,
            });
        }
        if self.s.len() != j_dim || self.g.len() != j_dim {
            return Err(DinaError::DimensionMismatch(format!(
                "expected {} slipping and guessing values, got {} and {}",
                j_dim,
                self.s.len(),
                self.g.len()
            )));
        }
        if self.p.len() != 1 << k_dim {
            return Err(DinaError::DimensionMismatch(format!(
                "expected {} profile proportions, got {}",
                1usize << k_dim,
                self.p.len()
            )));
        }
        let (lo, hi) = match region {
            Region::Interior => (INTERIOR_EPS, 1.0 - INTERIOR_EPS),
            Region::Boundary => (0.0, 1.0),
        };
        let in_range = |x: f64| x >= lo && x <= hi;
        for j in 0..j_dim {
            let (s, g) = (self.s[j], self.g[j]);
            if !in_range(s) {
                return Err(DinaError::InvalidParams(format!(
                    "s[{}] = {} outside [{}, {}]",
                    j + 1,
                    s,
                    lo,
                    hi
                )));
            }
            if q.is_zero_row(j) {
                if g != 0.0 {
                    return Err(DinaError::InvalidParams(format!(
                        "item {} requires no attribute, so its guessing parameter must be 0 (got {})",
                        j + 1,
                        g
                    )));
                }
                continue;
            }
            if !in_range(g) {
                return Err(DinaError::InvalidParams(format!(
                    "g[{}] = {} outside [{}, {}]",
                    j + 1,
                    g,
                    lo,
                    hi
                )));
            }
            if region == Region::Interior && 1.0 - s - g < INTERIOR_EPS {
                return Err(DinaError::InvalidParams(format!(
                    "item {}: need 1 - s > g, got s = {}, g = {}",
                    j + 1,
                    s,
                    g
                )));
            }
        }
        let mut total = 0.0;
        for (pos, &pa) in self.p.iter().enumerate() {
            let ok = match region {
                Region::Interior => pa > 0.0 && pa.is_finite(),
                Region::Boundary => (0.0..=1.0).contains(&pa),
            };
            if !ok {
                return Err(DinaError::InvalidParams(format!(
                    "p at canonical position {} = {}",
                    pos, pa
                )));
            }
            total += pa;
        }
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(DinaError::InvalidParams(format!(
                "proportions sum to {total}, expected 1"
            )));
        }
        Ok(())
    }

    pub fn to_spec(&self) -> ParamsSpec {
        let k = self.attributes();
        let order = CanonicalOrder::new(k).expect("validated dimension");
        ParamsSpec {
            s: self.s.clone(),
            g: self.g.clone(),
            p: order
                .iter()
                .zip(&self.p)
                .map(|(m, &v)| (mask_to_bitstring(m, k), v))
                .collect(),
        }
    }

    pub fn from_json(q: &QMatrix, text: &str) -> Result<Self> {
        let spec: ParamsSpec = serde_json::from_str(text)?;
        spec.into_params(q)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("params serialize")
    }
}

/// JSON form: `p` maps each profile bit string (attribute 1 first) to its
/// proportion. Serialized `p` keys follow canonical order.
impl Serialize for ModelParams {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Wire<'a> {
            s: &'a [f64],
            g: &'a [f64],
            p: ProfileMap<'a>,
        }
        struct ProfileMap<'a>(&'a [f64]);
        impl Serialize for ProfileMap<'_> {
            fn serialize<S: Serializer>(
                &self,
                serializer: S,
            ) -> std::result::Result<S::Ok, S::Error> {
                let k = self.0.len().trailing_zeros() as usize;
                let order = CanonicalOrder::new(k).map_err(serde::ser::Error::custom)?;
                let mut map = serializer.serialize_map(Some(self.0.len()))?;
                for (m, v) in order.iter().zip(self.0) {
                    map.serialize_entry(&mask_to_bitstring(m, k), v)?;
                }
                map.end()
            }
        }
        Wire {
            s: &self.s,
            g: &self.g,
            p: ProfileMap(&self.p),
        }
        .serialize(serializer)
    }
}

/// Unvalidated parameter file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsSpec {
    pub s: Vec<f64>,
    pub g: Vec<f64>,
    pub p: BTreeMap<String, f64>,
}

impl ParamsSpec {
    fn proportions(&self, k: usize) -> Result<Vec<f64>> {
        let order = profile_order(k)?;
        let mut p = vec![f64::NAN; order.len()];
        for (key, &v) in &self.p {
            let mask = parse_bitstring(key, k).ok_or_else(|| {
                DinaError::InvalidParams(format!("bad profile key {key:?} for K = {k}"))
            })?;
            p[order.position(mask)] = v;
        }
        if let Some(pos) = p.iter().position(|v| v.is_nan()) {
            return Err(DinaError::InvalidParams(format!(
                "missing proportion for profile {}",
                mask_to_bitstring(order.mask(pos), k)
            )));
        }
        Ok(p)
    }

    pub fn into_params(self, q: &QMatrix) -> Result<ModelParams> {
        let p = self.proportions(q.attributes())?;
        ModelParams::new(q, self.s, self.g, p)
    }

    pub fn into_boundary_params(self, q: &QMatrix) -> Result<ModelParams> {
        let p = self.proportions(q.attributes())?;
        ModelParams::with_boundary(q, self.s, self.g, p)
    }
}

/// Binary response matrix, one row per subject.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResponseDataset {
    subjects: usize,
    items: usize,
    data: Vec<u8>,
}

impl ResponseDataset {
    pub fn from_rows<R: AsRef<[u8]>>(rows: &[R]) -> Result<Self> {
        if rows.is_empty() {
            return Err(DinaError::EmptyInput("dataset has no subjects"));
        }
        let items = rows[0].as_ref().len();
        let mut data = Vec::with_capacity(rows.len() * items);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != items {
                return Err(DinaError::DimensionMismatch(format!(
                    "subject {} has {} responses, expected {}",
                    i + 1,
                    r.len(),
                    items
                )));
            }
            if r.iter().any(|&v| v > 1) {
                return Err(DinaError::InvalidParams(format!(
                    "subject {} has a non-binary response",
                    i + 1
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            subjects: rows.len(),
            items,
            data,
        })
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        Self::from_rows(&parse_binary_csv(text)?)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.data.len() * 2);
        for row in self.rows() {
            for (c, &v) in row.iter().enumerate() {
                if c > 0 {
                    out.push(',');
                }
                out.push(if v == 1 { '1' } else { '0' });
            }
            out.push('\n');
        }
        out
    }

    pub fn subjects(&self) -> usize {
        self.subjects
    }

    pub fn items(&self) -> usize {
        self.items
    }

    pub fn row(&self, i: usize) -> &[u8] {
        &self.data[i * self.items..(i + 1) * self.items]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u8]> {
        self.data
            .chunks_exact(self.items.max(1))
            .take(self.subjects)
    }

    /// Fraction of subjects answering each item positively.
    pub fn positive_rates(&self) -> Vec<f64> {
        let mut counts = vec![0usize; self.items];
        for row in self.rows() {
            for (c, &v) in counts.iter_mut().zip(row) {
                *c += v as usize;
            }
        }
        counts
            .into_iter()
            .map(|c| c as f64 / self.subjects as f64)
            .collect()
    }

    /// Distinct response patterns with multiplicities, in sorted order.
    pub fn pattern_counts(&self) -> BTreeMap<Vec<u8>, usize> {
        let mut counts = BTreeMap::new();
        for row in self.rows() {
            *counts.entry(row.to_vec()).or_insert(0) += 1;
        }
        counts
    }
}

/// Per-item, per-profile positive response probabilities `θ_{j,α}` with
/// profiles in canonical order.
#[derive(Debug, Clone)]
pub(crate) struct ThetaTable {
    pub items: usize,
    pub profiles: usize,
    /// `ideal[j * profiles + a]`
    pub ideal: Vec<bool>,
    /// `theta[j * profiles + a]`
    pub theta: Vec<f64>,
    /// `ln θ` and `ln(1 - θ)`, same layout.
    log_pos: Vec<f64>,
    log_neg: Vec<f64>,
}

impl ThetaTable {
    pub fn ideal_only(q: &QMatrix) -> Result<Self> {
        let order = profile_order(q.attributes())?;
        let profiles = order.len();
        let mut ideal = Vec::with_capacity(q.items() * profiles);
        for j in 0..q.items() {
            let qm = q.row_mask(j);
            ideal.extend(order.iter().map(|a| masters(a, qm)));
        }
        Ok(Self {
            items: q.items(),
            profiles,
            ideal,
            theta: Vec::new(),
            log_pos: Vec::new(),
            log_neg: Vec::new(),
        })
    }

    /// `θ` built from arbitrary reals: `1 - x_j` when `ξ = 1`, `y_j` otherwise.
    pub fn from_xy(q: &QMatrix, x: &[f64], y: &[f64]) -> Result<Self> {
        let mut t = Self::ideal_only(q)?;
        t.fill(x, y);
        Ok(t)
    }

    pub fn fill(&mut self, x: &[f64], y: &[f64]) {
        self.theta.clear();
        self.theta.reserve(self.ideal.len());
        for j in 0..self.items {
            let (on, off) = (1.0 - x[j], y[j]);
            let row = &self.ideal[j * self.profiles..(j + 1) * self.profiles];
            self.theta
                .extend(row.iter().map(|&xi| if xi { on } else { off }));
        }
        self.log_pos.clear();
        self.log_pos.extend(self.theta.iter().map(|t| t.ln()));
        self.log_neg.clear();
        self.log_neg
            .extend(self.theta.iter().map(|t| (1.0 - t).ln()));
    }

    pub fn new(q: &QMatrix, params: &ModelParams) -> Result<Self> {
        check_dims(q, params)?;
        Self::from_xy(q, &params.s, &params.g)
    }

    #[inline]
    pub fn theta(&self, j: usize, a: usize) -> f64 {
        self.theta[j * self.profiles + a]
    }

    #[inline]
    pub fn ideal(&self, j: usize, a: usize) -> bool {
        self.ideal[j * self.profiles + a]
    }

    /// `Π_j θ^{r_j} (1-θ)^{1-r_j}` for profile position `a`.
    pub fn pattern_likelihood(&self, r: &[u8], a: usize) -> f64 {
        r.iter().enumerate().fold(1.0, |acc, (j, &rj)| {
            let t = self.theta(j, a);
            acc * if rj == 1 { t } else { 1.0 - t }
        })
    }

    pub fn pattern_log_likelihood(&self, r: &[u8], a: usize) -> f64 {
        r.iter()
            .enumerate()
            .map(|(j, &rj)| {
                let idx = j * self.profiles + a;
                if rj == 1 {
                    self.log_pos[idx]
                } else {
                    self.log_neg[idx]
                }
            })
            .sum()
    }
}

fn check_dims(q: &QMatrix, params: &ModelParams) -> Result<()> {
    if params.s.len() != q.items() || params.p.len() != 1usize << q.attributes() {
        return Err(DinaError::DimensionMismatch(format!(
            "parameters are for J = {}, {} profiles; Q-matrix is {}x{}",
            params.s.len(),
            params.p.len(),
            q.items(),
            q.attributes()
        )));
    }
    Ok(())
}

fn check_pattern(q: &QMatrix, r: &[u8]) -> Result<()> {
    if r.len() != q.items() {
        return Err(DinaError::DimensionMismatch(format!(
            "response pattern has {} entries, Q-matrix has {} items",
            r.len(),
            q.items()
        )));
    }
    if r.iter().any(|&v| v > 1) {
        return Err(DinaError::InvalidParams(
            "response pattern must be binary".into(),
        ));
    }
    Ok(())
}

/// `θ_{j,α}`: `1 - s_j` if `α` masters item `j`, else `g_j`.
pub fn item_prob(q: &QMatrix, params: &ModelParams, item: usize, alpha: &[u8]) -> Result<f64> {
    if item >= q.items() {
        return Err(DinaError::DimensionMismatch(format!(
            "item {} out of range 1..={}",
            item + 1,
            q.items()
        )));
    }
    Ok(if ideal_response(q.row(item), alpha)? == 1 {
        1.0 - params.s[item]
    } else {
        params.g[item]
    })
}

/// `P(R = r)`, the finite mixture over all `2^K` profiles.
pub fn response_pattern_prob(q: &QMatrix, params: &ModelParams, r: &[u8]) -> Result<f64> {
    check_pattern(q, r)?;
    let table = ThetaTable::new(q, params)?;
    Ok(params
        .p
        .iter()
        .enumerate()
        .map(|(a, &pa)| pa * table.pattern_likelihood(r, a))
        .sum())
}

pub const MAX_ENUMERATED_ITEMS: usize = 20;

/// Full pattern distribution, indexed by pattern bitmask (bit `j` = item `j+1`).
pub fn pattern_distribution(q: &QMatrix, params: &ModelParams) -> Result<Vec<f64>> {
    let j_dim = q.items();
    if j_dim > MAX_ENUMERATED_ITEMS {
        return Err(DinaError::TooLarge {
            what: "items",
            value: j_dim,
            max: MAX_ENUMERATED_ITEMS,
        });
    }
    let table = ThetaTable::new(q, params)?;
    let n = 1usize << j_dim;
    let mut out = vec![0.0; n];
    let mut buf = vec![0.0; n];
    for (a, &pa) in params.p.iter().enumerate() {
        // subset products built item by item
        buf[0] = pa;
        let mut filled = 1usize;
        for j in 0..j_dim {
            let t = table.theta(j, a);
            for m in 0..filled {
                let base = buf[m];
                buf[m] = base * (1.0 - t);
                buf[m | filled] = base * t;
            }
            filled <<= 1;
        }
        for (o, b) in out.iter_mut().zip(&buf) {
            *o += b;
        }
    }
    Ok(out)
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Log joint weights `log p_α + log P(r | α)` for every profile.
pub(crate) fn log_joint(table: &ThetaTable, log_p: &[f64], r: &[u8], out: &mut [f64]) {
    for (a, o) in out.iter_mut().enumerate() {
        *o = log_p[a] + table.pattern_log_likelihood(r, a);
    }
}

pub(crate) fn log_sum(xs: &[f64]) -> f64 {
    log_sum_exp(xs)
}

/// `Σ_i log P(R_i)`. Computed per distinct pattern in log space; `-∞` when
/// some observed pattern has probability zero.
pub fn log_likelihood(q: &QMatrix, params: &ModelParams, data: &ResponseDataset) -> Result<f64> {
    if data.items() != q.items() {
        return Err(DinaError::DimensionMismatch(format!(
            "dataset has {} items, Q-matrix has {}",
            data.items(),
            q.items()
        )));
    }
    let table = ThetaTable::new(q, params)?;
    let log_p: Vec<f64> = params.p.iter().map(|p| p.ln()).collect();
    let mut work = vec![0.0; table.profiles];
    let mut total = 0.0;
    for (pattern, count) in data.pattern_counts() {
        log_joint(&table, &log_p, &pattern, &mut work);
        total += count as f64 * log_sum_exp(&work);
    }
    Ok(total)
}

/// Posterior over profiles (canonical order) for one response pattern.
pub fn attribute_posterior(q: &QMatrix, params: &ModelParams, r: &[u8]) -> Result<Vec<f64>> {
    check_pattern(q, r)?;
    let table = ThetaTable::new(q, params)?;
    let log_p: Vec<f64> = params.p.iter().map(|p| p.ln()).collect();
    let mut w = vec![0.0; table.profiles];
    log_joint(&table, &log_p, r, &mut w);
    let norm = log_sum_exp(&w);
    if !norm.is_finite() {
        return Err(DinaError::DegeneratePosterior);
    }
    Ok(w.into_iter().map(|x| (x - norm).exp()).collect())
}

/// Draw `n` subjects: profile from `p`, then independent Bernoulli responses.
/// The same seed always yields the same dataset.
pub fn simulate(q: &QMatrix, params: &ModelParams, n: usize, seed: u64) -> Result<ResponseDataset> {
    if n == 0 {
        return Err(DinaError::InvalidConfig(
            "sample size must be at least 1".into(),
        ));
    }
    let table = ThetaTable::new(q, params)?;
    let profile_dist = WeightedIndex::new(&params.p)
        .map_err(|e| DinaError::InvalidParams(format!("proportions: {e}")))?;
    let j_dim = q.items();
    let item_dists: Vec<Vec<Bernoulli>> = (0..j_dim)
        .map(|j| {
            (0..table.profiles)
                .map(|a| {
                    Bernoulli::new(table.theta(j, a).clamp(0.0, 1.0)).expect("probability in [0,1]")
                })
                .collect()
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * j_dim);
    for _ in 0..n {
        let a = profile_dist.sample(&mut rng);
        for dists in &item_dists {
            data.push(u8::from(rng.sample(dists[a])));
        }
    }
    Ok(ResponseDataset {
        subjects: n,
        items: j_dim,
        data,
    })
}

/// Ideal-response rows (no noise) for the given profile.
pub fn ideal_pattern(q: &QMatrix, alpha: &[u8]) -> Result<Vec<u8>> {
    q.rows().map(|row| ideal_response(row, alpha)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single() -> (QMatrix, ModelParams) {
        let q = QMatrix::from_rows(&[[1u8]]).unwrap();
        let p = ModelParams::new(&q, vec![0.2], vec![0.2], vec![0.5, 0.5]).unwrap();
        (q, p)
    }

    #[test]
    fn ideal_response_cases() {
        assert_eq!(ideal_response(&[1, 1], &[1, 1]).unwrap(), 1);
        assert_eq!(ideal_response(&[1, 1], &[1, 0]).unwrap(), 0);
        for alpha in [[0, 0], [1, 0], [0, 1], [1, 1]] {
            assert_eq!(ideal_response(&[0, 0], &alpha).unwrap(), 1);
        }
        assert!(ideal_response(&[1], &[1, 0]).is_err());
    }

    #[test]
    fn item_prob_cases() {
        let q = QMatrix::from_rows(&[[1u8, 0], [0, 0]]).unwrap();
        let params = ModelParams::new(&q, vec![0.2, 0.3], vec![0.2, 0.0], vec![0.25; 4]).unwrap();
        assert!((item_prob(&q, &params, 0, &[1, 0]).unwrap() - 0.8).abs() < 1e-15);
        assert!((item_prob(&q, &params, 0, &[0, 1]).unwrap() - 0.2).abs() < 1e-15);
        for alpha in [[0, 0], [1, 0], [0, 1], [1, 1]] {
            assert!((item_prob(&q, &params, 1, &alpha).unwrap() - 0.7).abs() < 1e-15);
        }
    }

    #[test]
    fn single_item_probability() {
        let (q, params) = single();
        assert!((response_pattern_prob(&q, &params, &[1]).unwrap() - 0.5).abs() < 1e-15);
        assert!(response_pattern_prob(&q, &params, &[1, 0]).is_err());
    }

    #[test]
    fn deterministic_limit_probability() {
        let q = QMatrix::from_rows(&[[1u8, 0], [0, 1], [1, 1]]).unwrap();
        let p = vec![0.1, 0.2, 0.3, 0.4];
        let params = ModelParams::with_boundary(&q, vec![0.0; 3], vec![0.0; 3], p.clone()).unwrap();
        let order = CanonicalOrder::new(2).unwrap();
        for m in 0..8u64 {
            let r: Vec<u8> = (0..3).map(|j| (m >> j & 1) as u8).collect();
            let expect: f64 = (0..4)
                .filter(|&a| ideal_pattern(&q, &order.bits(a)).unwrap() == r)
                .map(|a| p[a])
                .sum();
            let got = response_pattern_prob(&q, &params, &r).unwrap();
            assert!((got - expect).abs() < 1e-15, "pattern {r:?}");
        }
    }

    #[test]
    fn single_item_log_likelihood() {
        let (q, params) = single();
        let data = ResponseDataset::from_rows(&[[1u8]]).unwrap();
        let ll = log_likelihood(&q, &params, &data).unwrap();
        assert!((ll - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn posterior_cases() {
        let (q, params) = single();
        let post = attribute_posterior(&q, &params, &[1]).unwrap();
        assert!((post[0] - 0.2).abs() < 1e-12 && (post[1] - 0.8).abs() < 1e-12);

        let q3 = QMatrix::from_rows(&[[1u8, 0], [0, 1], [1, 1]]).unwrap();
        let flat =
            ModelParams::with_boundary(&q3, vec![0.5; 3], vec![0.5; 3], vec![0.25; 4]).unwrap();
        for r in [[0u8, 0, 0], [1, 0, 1], [1, 1, 1]] {
            let post = attribute_posterior(&q3, &flat, &r).unwrap();
            assert!(post.iter().all(|w| (w - 0.25).abs() < 1e-12));
        }
    }

    #[test]
    fn degenerate_posterior_is_an_error() {
        let q = QMatrix::from_rows(&[[1u8]]).unwrap();
        // everyone masters the item and never slips, so r = 0 is impossible
        let params = ModelParams::with_boundary(&q, vec![0.0], vec![0.0], vec![0.0, 1.0]).unwrap();
        assert!(matches!(
            attribute_posterior(&q, &params, &[0]),
            Err(DinaError::DegeneratePosterior)
        ));
        let data = ResponseDataset::from_rows(&[[0u8]]).unwrap();
        assert_eq!(
            log_likelihood(&q, &params, &data).unwrap(),
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn validation_rules() {
        let q = QMatrix::from_rows(&[[1u8, 0], [0, 0]]).unwrap();
        let p = vec![0.25; 4];
        assert!(ModelParams::new(&q, vec![0.2, 0.2], vec![0.2, 0.0], p.clone()).is_ok());
        // zero-row item: guessing pinned to 0
        assert!(ModelParams::new(&q, vec![0.2, 0.2], vec![0.2, 0.1], p.clone()).is_err());
        assert!(ModelParams::with_boundary(&q, vec![0.2, 0.2], vec![0.2, 0.1], p.clone()).is_err());
        // 1 - s > g
        assert!(ModelParams::new(&q, vec![0.6, 0.2], vec![0.5, 0.0], p.clone()).is_err());
        // boundary values
        assert!(ModelParams::new(&q, vec![0.0, 0.2], vec![0.2, 0.0], p.clone()).is_err());
        assert!(ModelParams::with_boundary(&q, vec![0.0, 0.2], vec![0.2, 0.0], p.clone()).is_ok());
        // simplex
        assert!(ModelParams::new(&q, vec![0.2, 0.2], vec![0.2, 0.0], vec![0.3; 4]).is_err());
        assert!(
            ModelParams::new(&q, vec![0.2, 0.2], vec![0.2, 0.0], vec![0.5, 0.5, 0.0, 0.0]).is_err()
        );
        assert!(ModelParams::new(&q, vec![0.2], vec![0.2], p.clone()).is_err());
        assert!(ModelParams::new(&q, vec![0.2, f64::NAN], vec![0.2, 0.0], p).is_err());
    }

    #[test]
    fn deterministic_simulation() {
        let q = QMatrix::from_rows(&[[1u8, 0], [0, 1], [1, 1], [0, 0]]).unwrap();
        let params =
            ModelParams::with_boundary(&q, vec![0.0; 4], vec![0.0; 4], vec![0.0, 0.0, 0.0, 1.0])
                .unwrap();
        let data = simulate(&q, &params, 50, 7).unwrap();
        assert!(data.rows().all(|r| r == [1, 1, 1, 1]));
    }

    #[test]
    fn simulate_is_seeded() {
        let q = QMatrix::from_rows(&[[1u8, 0], [0, 1], [1, 1]]).unwrap();
        let params = ModelParams::uniform(&q, 0.2, 0.2).unwrap();
        let a = simulate(&q, &params, 300, 11).unwrap();
        let b = simulate(&q, &params, 300, 11).unwrap();
        let c = simulate(&q, &params, 300, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(simulate(&q, &params, 0, 1).is_err());
    }

    #[test]
    fn params_json_keys_follow_canonical_order() {
        let q = QMatrix::from_rows(&[[1u8, 0], [0, 1], [1, 1]]).unwrap();
        let params = ModelParams::new(
            &q,
            vec![0.1, 0.2, 0.3],
            vec![0.2, 0.2, 0.2],
            vec![0.1, 0.3, 0.4, 0.2],
        )
        .unwrap();
        let text = params.to_json_pretty();
        let keys: Vec<usize> = ["\"00\"", "\"10\"", "\"01\"", "\"11\""]
            .iter()
            .map(|k| text.find(k).unwrap())
            .collect();
        assert!(keys.windows(2).all(|w| w[0] < w[1]));
        let back = ModelParams::from_json(&q, &text).unwrap();
        assert_eq!(back, params);
        assert!(ModelParams::from_json(
            &q,
            r#"{"s":[0.1,0.1,0.1],"g":[0.1,0.1,0.1],"p":{"00":1.0}}"#
        )
        .is_err());
    }

    #[test]
    fn dataset_csv() {
        let d = ResponseDataset::parse_csv("1,0,1\n0,0,1\n").unwrap();
        assert_eq!((d.subjects(), d.items()), (2, 3));
        assert_eq!(d.to_csv(), "1,0,1\n0,0,1\n");
        assert_eq!(d.positive_rates(), vec![0.5, 0.0, 1.0]);
        assert!(ResponseDataset::parse_csv("1,0\n1").is_err());
    }
}
