//! Marginal moments `P(R ⪰ r)` over all item subsets.
//!
//! The T-matrix has one row per response pattern `r` and one column per
//! profile `α`; entry `t_{r,α} = Π_{j: r_j = 1} θ_{j,α}`. Multiplying by `p`
//! gives the moment vector, which determines the pattern distribution one to
//! one. Rows and columns follow [`CanonicalOrder`].

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{DinaError, Result};
use crate::model::{
    pattern_distribution, ModelParams, ResponseDataset, ThetaTable, MAX_ENUMERATED_ITEMS,
};
use crate::order::{bits_to_mask, mask_to_bitstring};
pub use crate::order::{canonical_order, CanonicalOrder};
use crate::qmatrix::QMatrix;

/// Tolerance for treating two moment vectors as equal.
pub const MOMENT_TOL: f64 = 1e-10;

fn guard_items(j: usize) -> Result<()> {
    if j > MAX_ENUMERATED_ITEMS {
        return Err(DinaError::TooLarge {
            what: "items",
            value: j,
            max: MAX_ENUMERATED_ITEMS,
        });
    }
    Ok(())
}

/// `2^J` values indexed by response patterns in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentVector {
    items: usize,
    order: CanonicalOrder,
    values: Vec<f64>,
}

impl MomentVector {
    /// Build from values indexed by pattern bitmask.
    fn from_mask_indexed(items: usize, by_mask: Vec<f64>) -> Result<Self> {
        let order = CanonicalOrder::new(items)?;
        let values = order.iter().map(|m| by_mask[m as usize]).collect();
        Ok(Self {
            items,
            order,
            values,
        })
    }

    pub fn items(&self) -> usize {
        self.items
    }

    /// Values in canonical pattern order.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, pattern: &[u8]) -> f64 {
        self.values[self.order.position(bits_to_mask(pattern))]
    }

    pub fn get_mask(&self, mask: u64) -> f64 {
        self.values[self.order.position(mask)]
    }

    pub fn order(&self) -> &CanonicalOrder {
        &self.order
    }

    pub fn max_abs_diff(&self, other: &MomentVector) -> Result<f64> {
        if self.items != other.items {
            return Err(DinaError::DimensionMismatch(format!(
                "moment vectors over {} and {} items",
                self.items, other.items
            )));
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// `pattern,value` lines in canonical order, pattern as a bit string.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("pattern,value\n");
        for (m, v) in self.order.iter().zip(&self.values) {
            let _ = writeln!(out, "{},{:.17e}", mask_to_bitstring(m, self.items), v);
        }
        out
    }
}

/// `t_{r,α}` for arbitrary real `s`, `g`: product of `θ_{j,α}` over the
/// items answered positively in `r`; 1 for the empty pattern.
pub fn t_entry(q: &QMatrix, s: &[f64], g: &[f64], r: &[u8], alpha: &[u8]) -> Result<f64> {
    if s.len() != q.items() || g.len() != q.items() || r.len() != q.items() {
        return Err(DinaError::DimensionMismatch(
            "t_entry needs s, g and r of length J".into(),
        ));
    }
    if alpha.len() != q.attributes() {
        return Err(DinaError::DimensionMismatch(format!(
            "profile has {} attributes, Q-matrix has {}",
            alpha.len(),
            q.attributes()
        )));
    }
    let a_mask = bits_to_mask(alpha);
    Ok((0..q.items())
        .filter(|&j| r[j] == 1)
        .map(|j| {
            if crate::model::masters(a_mask, q.row_mask(j)) {
                1.0 - s[j]
            } else {
                g[j]
            }
        })
        .product())
}

/// Subset products of `θ_{·,a}` for every pattern, indexed by bitmask.
fn subset_products(table: &ThetaTable, a: usize, out: &mut [f64]) {
    out[0] = 1.0;
    let mut filled = 1usize;
    for j in 0..table.items {
        let t = table.theta(j, a);
        for m in 0..filled {
            out[m | filled] = out[m] * t;
        }
        filled <<= 1;
    }
}

fn moments_from_table(table: &ThetaTable, p: &[f64]) -> Vec<f64> {
    let n = 1usize << table.items;
    (0..table.profiles)
        .into_par_iter()
        .fold(
            || (vec![0.0; n], vec![0.0; n]),
            |(mut acc, mut buf), a| {
                subset_products(table, a, &mut buf);
                for (o, b) in acc.iter_mut().zip(&buf) {
                    *o += p[a] * b;
                }
                (acc, buf)
            },
        )
        .map(|(acc, _)| acc)
        .reduce(
            || vec![0.0; n],
            |mut x, y| {
                for (a, b) in x.iter_mut().zip(y) {
                    *a += b;
                }
                x
            },
        )
}

/// `T(s, g) p`, the probability of answering every item in each subset
/// positively.
pub fn moment_vector(q: &QMatrix, params: &ModelParams) -> Result<MomentVector> {
    guard_items(q.items())?;
    let table = ThetaTable::new(q, params)?;
    MomentVector::from_mask_indexed(q.items(), moments_from_table(&table, params.proportions()))
}

/// `T(s + θ, g - θ) p` on unconstrained reals.
pub fn generalized_transform(
    q: &QMatrix,
    s: &[f64],
    g: &[f64],
    p: &[f64],
    shift: &[f64],
) -> Result<MomentVector> {
    guard_items(q.items())?;
    let j = q.items();
    if s.len() != j || g.len() != j || shift.len() != j {
        return Err(DinaError::DimensionMismatch(
            "s, g and θ must all have length J".into(),
        ));
    }
    if p.len() != 1usize << q.attributes() {
        return Err(DinaError::DimensionMismatch(
            "p must have 2^K entries".into(),
        ));
    }
    let x: Vec<f64> = s.iter().zip(shift).map(|(a, t)| a + t).collect();
    let y: Vec<f64> = g.iter().zip(shift).map(|(a, t)| a - t).collect();
    let table = ThetaTable::from_xy(q, &x, &y)?;
    MomentVector::from_mask_indexed(j, moments_from_table(&table, p))
}

/// The full `2^J × 2^K` T-matrix, row-major, rows and columns in canonical
/// order.
pub fn t_matrix(q: &QMatrix, s: &[f64], g: &[f64]) -> Result<Vec<Vec<f64>>> {
    guard_items(q.items())?;
    let table = ThetaTable::from_xy(q, s, g)?;
    let n = 1usize << q.items();
    let rows_order = CanonicalOrder::new(q.items())?;
    let mut by_profile = Vec::with_capacity(table.profiles);
    let mut buf = vec![0.0; n];
    for a in 0..table.profiles {
        subset_products(&table, a, &mut buf);
        by_profile.push(buf.clone());
    }
    Ok(rows_order
        .iter()
        .map(|m| by_profile.iter().map(|col| col[m as usize]).collect())
        .collect())
}

/// Sample analogue of the moment vector: the fraction of subjects whose
/// responses dominate each pattern.
pub fn empirical_gamma(data: &ResponseDataset) -> Result<MomentVector> {
    let j = data.items();
    guard_items(j)?;
    let n = 1usize << j;
    let mut counts = vec![0u64; n];
    for row in data.rows() {
        counts[bits_to_mask(row) as usize] += 1;
    }
    // superset sums: entry(r) = #{i : R_i ⪰ r}
    for bit in 0..j {
        let b = 1usize << bit;
        for m in 0..n {
            if m & b == 0 {
                counts[m] += counts[m | b];
            }
        }
    }
    let total = data.subjects() as f64;
    MomentVector::from_mask_indexed(j, counts.into_iter().map(|c| c as f64 / total).collect())
}

/// Max absolute difference between the moment vectors of two parameter sets
/// on the same Q-matrix. Zero exactly when both induce the same response
/// distribution.
pub fn distribution_distance(q: &QMatrix, a: &ModelParams, b: &ModelParams) -> Result<f64> {
    moment_vector(q, a)?.max_abs_diff(&moment_vector(q, b)?)
}

/// Max absolute difference between full pattern distributions.
pub fn pattern_distance(q: &QMatrix, a: &ModelParams, b: &ModelParams) -> Result<f64> {
    let pa = pattern_distribution(q, a)?;
    let pb = pattern_distribution(q, b)?;
    Ok(pa
        .iter()
        .zip(&pb)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::response_pattern_prob;

    fn q3() -> QMatrix {
        QMatrix::from_rows(&[[1u8, 0], [0, 1], [1, 1]]).unwrap()
    }

    #[test]
    fn t_entry_cases() {
        let q = q3();
        let (s, g) = (vec![0.1, 0.2, 0.3], vec![0.15, 0.25, 0.05]);
        for alpha in [[0u8, 0], [1, 0], [0, 1], [1, 1]] {
            assert_eq!(t_entry(&q, &s, &g, &[0, 0, 0], &alpha).unwrap(), 1.0);
        }
        assert!((t_entry(&q, &s, &g, &[1, 0, 0], &[1, 0]).unwrap() - 0.9).abs() < 1e-15);
        assert!((t_entry(&q, &s, &g, &[0, 0, 1], &[1, 0]).unwrap() - 0.05).abs() < 1e-15);
        let joint = t_entry(&q, &s, &g, &[1, 1, 0], &[0, 1]).unwrap();
        let split = t_entry(&q, &s, &g, &[1, 0, 0], &[0, 1]).unwrap()
            * t_entry(&q, &s, &g, &[0, 1, 0], &[0, 1]).unwrap();
        assert!((joint - split).abs() < 1e-15);
    }

    #[test]
    fn single_item_moment() {
        let q = QMatrix::from_rows(&[[1u8]]).unwrap();
        let params = ModelParams::new(&q, vec![0.2], vec![0.2], vec![0.5, 0.5]).unwrap();
        let mv = moment_vector(&q, &params).unwrap();
        assert_eq!(mv.values()[0], 1.0);
        assert!((mv.get(&[1]) - 0.5).abs() < 1e-15);
        assert_eq!(
            response_pattern_prob(&q, &params, &[1]).unwrap(),
            mv.get(&[1])
        );
    }

    #[test]
    fn gamma_extremes() {
        let ones = ResponseDataset::from_rows(&[[1u8, 1, 1]]).unwrap();
        assert!(empirical_gamma(&ones)
            .unwrap()
            .values()
            .iter()
            .all(|&v| v == 1.0));
        let zeros = ResponseDataset::from_rows(&[[0u8, 0, 0]]).unwrap();
        let g = empirical_gamma(&zeros).unwrap();
        assert_eq!(g.values()[0], 1.0);
        assert!(g.values()[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn distance_to_self_is_zero() {
        let q = q3();
        let params = ModelParams::uniform(&q, 0.2, 0.1).unwrap();
        assert_eq!(distribution_distance(&q, &params, &params).unwrap(), 0.0);
    }

    #[test]
    fn zero_shift_transform_matches_moments() {
        let q = q3();
        let params = ModelParams::new(
            &q,
            vec![0.1, 0.2, 0.3],
            vec![0.2, 0.1, 0.3],
            vec![0.1, 0.2, 0.3, 0.4],
        )
        .unwrap();
        let a = moment_vector(&q, &params).unwrap();
        let b = generalized_transform(
            &q,
            params.slipping(),
            params.guessing(),
            params.proportions(),
            &[0.0; 3],
        )
        .unwrap();
        assert_eq!(a.max_abs_diff(&b).unwrap(), 0.0);
    }

    #[test]
    fn csv_export() {
        let q = QMatrix::from_rows(&[[1u8]]).unwrap();
        let params = ModelParams::new(&q, vec![0.2], vec![0.2], vec![0.5, 0.5]).unwrap();
        let csv = moment_vector(&q, &params).unwrap().to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "pattern,value");
        assert!(lines[1].starts_with("0,1"));
        assert!(lines[2].starts_with("1,5"));
    }

    #[test]
    fn size_guard() {
        let rows: Vec<[u8; 1]> = vec![[1]; 21];
        let q = QMatrix::from_rows(&rows).unwrap();
        let params = ModelParams::uniform(&q, 0.2, 0.2).unwrap();
        assert!(matches!(
            moment_vector(&q, &params),
            Err(DinaError::TooLarge { .. })
        ));
    }
}
