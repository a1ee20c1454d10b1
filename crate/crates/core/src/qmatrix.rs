//! Q-matrix parsing and the identifiability verdict.
//!
//! A DINA model with design matrix `Q` is identifiable exactly when, after
//! dropping all-zero rows:
//!
//! 1. `Q` is complete (contains every unit vector `e_k` as a row) and every
//!    attribute is required by at least three items, and
//! 2. the columns of `Q*`, the rows left after removing one identity row per
//!    attribute, are pairwise distinct.
//!
//! All indices in reports are 1-based.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{DinaError, Result};

/// Binary item-by-attribute design matrix.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct QMatrix {
    items: usize,
    attributes: usize,
    entries: Vec<u8>,
}

impl QMatrix {
    pub fn from_rows<R: AsRef<[u8]>>(rows: &[R]) -> Result<Self> {
        let items = rows.len();
        if items == 0 {
            return Err(DinaError::EmptyInput("Q-matrix has no rows"));
        }
        let attributes = rows[0].as_ref().len();
        if attributes == 0 {
            return Err(DinaError::EmptyInput("Q-matrix has no columns"));
        }
        let mut entries = Vec::with_capacity(items * attributes);
        for (j, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != attributes {
                return Err(DinaError::DimensionMismatch(format!(
                    "row {} has {} entries, expected {}",
                    j + 1,
                    row.len(),
                    attributes
                )));
            }
            if let Some(&bad) = row.iter().find(|&&v| v > 1) {
                return Err(DinaError::InvalidParams(format!(
                    "row {} contains non-binary entry {}",
                    j + 1,
                    bad
                )));
            }
            entries.extend_from_slice(row);
        }
        Ok(Self {
            items,
            attributes,
            entries,
        })
    }

    /// K×K identity.
    pub fn identity(k: usize) -> Self {
        let rows: Vec<Vec<u8>> = (0..k)
            .map(|i| (0..k).map(|c| u8::from(c == i)).collect())
            .collect();
        Self::from_rows(&rows).expect("identity is a valid Q-matrix")
    }

    /// Number of items `J`.
    pub fn items(&self) -> usize {
        self.items
    }

    /// Number of attributes `K`.
    pub fn attributes(&self) -> usize {
        self.attributes
    }

    pub fn get(&self, item: usize, attribute: usize) -> u8 {
        self.entries[item * self.attributes + attribute]
    }

    pub fn row(&self, item: usize) -> &[u8] {
        &self.entries[item * self.attributes..(item + 1) * self.attributes]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u8]> {
        self.entries.chunks_exact(self.attributes)
    }

    pub fn column(&self, attribute: usize) -> Vec<u8> {
        self.rows().map(|r| r[attribute]).collect()
    }

    pub fn is_zero_row(&self, item: usize) -> bool {
        self.row(item).iter().all(|&v| v == 0)
    }

    /// Row `item` as a bitmask over attributes (bit `k` set iff `q_{item,k} = 1`).
    pub(crate) fn row_mask(&self, item: usize) -> u64 {
        self.row(item)
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == 1)
            .fold(0u64, |m, (k, _)| m | (1 << k))
    }

    /// Keep only the listed rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let picked: Vec<&[u8]> = rows.iter().map(|&j| self.row(j)).collect();
        Self::from_rows(&picked)
    }

    /// Stack `other` under `self`.
    pub fn append_rows(&self, other: &QMatrix) -> Result<Self> {
        if other.attributes != self.attributes {
            return Err(DinaError::DimensionMismatch(format!(
                "cannot stack a {}-attribute matrix under a {}-attribute matrix",
                other.attributes, self.attributes
            )));
        }
        let mut entries = self.entries.clone();
        entries.extend_from_slice(&other.entries);
        Ok(Self {
            items: self.items + other.items,
            attributes: self.attributes,
            entries,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.entries.len() * 2);
        for row in self.rows() {
            let line: Vec<&str> = row
                .iter()
                .map(|&v| if v == 1 { "1" } else { "0" })
                .collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }
}

impl fmt::Debug for QMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "QMatrix {}x{} [", self.items, self.attributes)?;
        for (j, row) in self.rows().enumerate() {
            if j > 0 {
                f.write_str(" ")?;
            }
            for &v in row {
                write!(f, "{v}")?;
            }
        }
        f.write_str("]")
    }
}

impl FromStr for QMatrix {
    type Err = DinaError;

    fn from_str(s: &str) -> Result<Self> {
        parse_qmatrix(s)
    }
}

/// Parse comma-separated 0/1 lines. Blank lines are skipped; line numbers in
/// errors refer to the physical line in `text`.
pub(crate) fn parse_binary_csv(text: &str) -> Result<Vec<Vec<u8>>> {
    let mut rows: Vec<Vec<u8>> = Vec::new();
    let mut width: Option<usize> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for (col, tok) in line.split(',').enumerate() {
            match tok.trim() {
                "0" => row.push(0),
                "1" => row.push(1),
                other => {
                    return Err(DinaError::parse(
                        line_no,
                        format!("column {}: expected 0 or 1, found {:?}", col + 1, other),
                    ))
                }
            }
        }
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(DinaError::parse(
                    line_no,
                    format!("ragged row: {} entries, expected {}", row.len(), w),
                ))
            }
            _ => {}
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(DinaError::parse(1, "empty input"));
    }
    Ok(rows)
}

pub fn parse_qmatrix(text: &str) -> Result<QMatrix> {
    QMatrix::from_rows(&parse_binary_csv(text)?)
}

/// Drop all-zero rows. Returns the reduced matrix and the 0-based indices of
/// the removed rows.
pub fn strip_zero_rows(q: &QMatrix) -> Result<(QMatrix, Vec<usize>)> {
    let (keep, removed): (Vec<usize>, Vec<usize>) =
        (0..q.items()).partition(|&j| !q.is_zero_row(j));
    if keep.is_empty() {
        return Err(DinaError::DegenerateMatrix);
    }
    if removed.is_empty() {
        return Ok((q.clone(), removed));
    }
    Ok((q.select_rows(&keep)?, removed))
}

/// For each attribute `k`, the smallest 0-based row index whose q-vector is
/// `e_k`. `None` when the matrix is not complete.
pub fn find_identity_rows(q: &QMatrix) -> Option<Vec<usize>> {
    let k_dim = q.attributes();
    let mut found: Vec<Option<usize>> = vec![None; k_dim];
    for (j, row) in q.rows().enumerate() {
        let mut ones = row.iter().enumerate().filter(|(_, &v)| v == 1);
        if let (Some((k, _)), None) = (ones.next(), ones.next()) {
            found[k].get_or_insert(j);
        }
    }
    found.into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Condition1 {
    pub complete: bool,
    pub attribute_counts: Vec<usize>,
    pub holds: bool,
}

pub fn check_condition1(q: &QMatrix) -> Condition1 {
    let complete = find_identity_rows(q).is_some();
    let attribute_counts: Vec<usize> = (0..q.attributes())
        .map(|k| q.rows().filter(|r| r[k] == 1).count())
        .collect();
    let holds = complete && attribute_counts.iter().all(|&c| c >= 3);
    Condition1 {
        complete,
        attribute_counts,
        holds,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Condition2 {
    pub holds: bool,
    /// 0-based attribute pairs `(k, k')`, `k < k'`, whose `Q*` columns coincide.
    pub duplicate_column_pairs: Vec<(usize, usize)>,
}

/// `Q*`: every row of `q` except the given identity rows, in original order.
pub fn q_star(q: &QMatrix, identity_rows: &[usize]) -> Vec<Vec<u8>> {
    (0..q.items())
        .filter(|j| !identity_rows.contains(j))
        .map(|j| q.row(j).to_vec())
        .collect()
}

fn star_columns(q_star: &[Vec<u8>], k_dim: usize) -> Vec<Vec<u8>> {
    (0..k_dim)
        .map(|k| q_star.iter().map(|r| r[k]).collect())
        .collect()
}

/// Condition 2 given the identity-row assignment. An empty `Q*` fails: with
/// no rows left, no two columns can be told apart.
pub fn check_condition2(q: &QMatrix, identity_rows: &[usize]) -> Condition2 {
    let k_dim = q.attributes();
    let star = q_star(q, identity_rows);
    let cols = star_columns(&star, k_dim);
    let mut pairs = Vec::new();
    for a in 0..k_dim {
        for b in a + 1..k_dim {
            if cols[a] == cols[b] {
                pairs.push((a, b));
            }
        }
    }
    let holds = !star.is_empty() && pairs.is_empty();
    Condition2 {
        holds,
        duplicate_column_pairs: pairs,
    }
}

fn lex_cmp(a: &[u8], b: &[u8]) -> Ordering {
    a.iter().cmp(b.iter())
}

/// Sort the columns of `q_star` (given as rows) in increasing lexicographic
/// order. Returns 0-based column indices `(k_1, …, k_K)`, or `None` when two
/// columns are equal.
pub fn lexicographic_column_order(q_star: &[Vec<u8>], k_dim: usize) -> Option<Vec<usize>> {
    let cols = star_columns(q_star, k_dim);
    let mut order: Vec<usize> = (0..k_dim).collect();
    order.sort_by(|&a, &b| lex_cmp(&cols[a], &cols[b]));
    if order.windows(2).any(|w| cols[w[0]] == cols[w[1]]) {
        return None;
    }
    Some(order)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Identifiable,
    NotIdentifiable,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Identifiable => "identifiable",
            Verdict::NotIdentifiable => "not identifiable",
        })
    }
}

/// Identifiability verdict with evidence. Row and column indices are 1-based
/// and refer to the matrix as supplied (zero rows included).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentifiabilityReport {
    pub complete: bool,
    pub identity_rows: Option<Vec<usize>>,
    pub attribute_counts: Vec<usize>,
    pub condition1_holds: bool,
    pub condition2_holds: bool,
    pub duplicate_column_pairs: Vec<(usize, usize)>,
    pub zero_rows: Vec<usize>,
    pub verdict: Verdict,
}

impl IdentifiabilityReport {
    pub fn is_identifiable(&self) -> bool {
        self.verdict == Verdict::Identifiable
    }

    /// One-line human summary, e.g.
    /// `not identifiable: Condition 2 fails, duplicate columns (1,2),(1,3)`.
    pub fn summary(&self) -> String {
        if self.is_identifiable() {
            return "identifiable".to_string();
        }
        let mut reasons = Vec::new();
        if !self.complete {
            reasons.push("Condition 1 fails, Q is not complete".to_string());
        } else if !self.condition1_holds {
            let short: Vec<String> = self
                .attribute_counts
                .iter()
                .enumerate()
                .filter(|(_, &c)| c < 3)
                .map(|(k, c)| format!("attribute {} has {} item(s)", k + 1, c))
                .collect();
            reasons.push(format!(
                "Condition 1 fails, fewer than 3 items: {}",
                short.join(", ")
            ));
        }
        if !self.condition2_holds && self.complete {
            if self.duplicate_column_pairs.is_empty() {
                reasons.push("Condition 2 fails, Q* is empty".to_string());
            } else {
                let pairs: Vec<String> = self
                    .duplicate_column_pairs
                    .iter()
                    .map(|(a, b)| format!("({a},{b})"))
                    .collect();
                reasons.push(format!(
                    "Condition 2 fails, duplicate columns {}",
                    pairs.join(",")
                ));
            }
        }
        format!("not identifiable: {}", reasons.join("; "))
    }
}

/// Identifiability verdict: strip zero rows, evaluate both conditions on the
/// reduced matrix, and map evidence back to the caller's row numbering.
pub fn identifiability_verdict(q: &QMatrix) -> Result<IdentifiabilityReport> {
    let (reduced, removed) = strip_zero_rows(q)?;
    let kept: Vec<usize> = (0..q.items()).filter(|j| !removed.contains(j)).collect();

    let c1 = check_condition1(&reduced);
    let identity = find_identity_rows(&reduced);
    let (c2_holds, pairs) = match &identity {
        Some(rows) => {
            let c2 = check_condition2(&reduced, rows);
            (c2.holds, c2.duplicate_column_pairs)
        }
        None => (false, Vec::new()),
    };

    let verdict = if c1.holds && c2_holds {
        Verdict::Identifiable
    } else {
        Verdict::NotIdentifiable
    };

    Ok(IdentifiabilityReport {
        complete: c1.complete,
        identity_rows: identity.map(|rows| rows.iter().map(|&j| kept[j] + 1).collect()),
        attribute_counts: c1.attribute_counts,
        condition1_holds: c1.holds,
        condition2_holds: c2_holds,
        duplicate_column_pairs: pairs.into_iter().map(|(a, b)| (a + 1, b + 1)).collect(),
        zero_rows: removed.into_iter().map(|j| j + 1).collect(),
        verdict,
    })
}
