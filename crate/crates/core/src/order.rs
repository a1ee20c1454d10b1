//! Canonical ordering of `{0,1}^n`: by Hamming weight, then by the support set
//! in lexicographic order. For `n = 3` this is
//! `000, 100, 010, 001, 110, 101, 011, 111` (bit strings list coordinate 1 first).
//!
//! Vectors are represented as bitmasks: bit `i` holds coordinate `i + 1`.

use crate::error::{DinaError, Result};

pub const MAX_ORDER_DIM: usize = 25;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CanonicalOrder {
    dim: usize,
    masks: Vec<u64>,
    binom: Vec<Vec<u64>>,
}

fn binomials(n: usize) -> Vec<Vec<u64>> {
    let mut c = vec![vec![0u64; n + 1]; n + 1];
    for i in 0..=n {
        c[i][0] = 1;
        for k in 1..=i {
            c[i][k] = c[i - 1][k - 1] + if k < i { c[i - 1][k] } else { 0 };
        }
    }
    c
}

/// Advance `comb` (strictly increasing indices < n) to the next combination in
/// lexicographic order. Returns false after the last one.
fn next_combination(comb: &mut [usize], n: usize) -> bool {
    let w = comb.len();
    let mut i = w;
    while i > 0 {
        i -= 1;
        if comb[i] < n - w + i {
            comb[i] += 1;
            for t in i + 1..w {
                comb[t] = comb[t - 1] + 1;
            }
            return true;
        }
    }
    false
}

pub fn canonical_order(n: usize) -> Result<CanonicalOrder> {
    CanonicalOrder::new(n)
}

impl CanonicalOrder {
    pub fn new(dim: usize) -> Result<Self> {
        if dim > MAX_ORDER_DIM {
            return Err(DinaError::TooLarge {
                what: "dimension",
                value: dim,
                max: MAX_ORDER_DIM,
            });
        }
        let mut masks = Vec::with_capacity(1usize << dim);
        for w in 0..=dim {
            let mut comb: Vec<usize> = (0..w).collect();
            loop {
                masks.push(comb.iter().fold(0u64, |m, &i| m | (1 << i)));
                if !next_combination(&mut comb, dim) {
                    break;
                }
            }
        }
        Ok(Self {
            dim,
            masks,
            binom: binomials(dim),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    /// Bitmask at canonical position `pos`.
    pub fn mask(&self, pos: usize) -> u64 {
        self.masks[pos]
    }

    pub fn masks(&self) -> &[u64] {
        &self.masks
    }

    /// Canonical position of `mask`.
    pub fn position(&self, mask: u64) -> usize {
        debug_assert!(self.dim == 64 || mask >> self.dim == 0);
        let n = self.dim;
        let w = mask.count_ones() as usize;
        let mut pos: u64 = (0..w).map(|v| self.binom[n][v]).sum();
        let mut prev: i64 = -1;
        let mut i = 0usize;
        for c in 0..n {
            if mask >> c & 1 == 1 {
                for x in (prev + 1) as usize..c {
                    pos += self.binom[n - 1 - x][w - 1 - i];
                }
                prev = c as i64;
                i += 1;
            }
        }
        pos as usize
    }

    /// Binary vector at position `pos`, coordinate 1 first.
    pub fn bits(&self, pos: usize) -> Vec<u8> {
        mask_to_bits(self.masks[pos], self.dim)
    }

    pub fn iter(&self) -> impl Iterator<Item = u64> + '_ {
        self.masks.iter().copied()
    }
}

pub(crate) fn mask_to_bits(mask: u64, dim: usize) -> Vec<u8> {
    (0..dim).map(|i| (mask >> i & 1) as u8).collect()
}

pub(crate) fn bits_to_mask(bits: &[u8]) -> u64 {
    bits.iter()
        .enumerate()
        .filter(|(_, &b)| b == 1)
        .fold(0u64, |m, (i, _)| m | (1 << i))
}

pub(crate) fn mask_to_bitstring(mask: u64, dim: usize) -> String {
    (0..dim)
        .map(|i| if mask >> i & 1 == 1 { '1' } else { '0' })
        .collect()
}

pub(crate) fn parse_bitstring(s: &str, dim: usize) -> Option<u64> {
    if s.len() != dim {
        return None;
    }
    s.chars().enumerate().try_fold(0u64, |m, (i, ch)| match ch {
        '0' => Some(m),
        '1' => Some(m | (1 << i)),
        _ => None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strings(n: usize) -> Vec<String> {
        let o = canonical_order(n).unwrap();
        o.iter().map(|m| mask_to_bitstring(m, n)).collect()
    }

    #[test]
    fn small_orders() {
        assert_eq!(strings(1), ["0", "1"]);
        assert_eq!(strings(2), ["00", "10", "01", "11"]);
        let s3 = strings(3);
        assert_eq!(&s3[4..7], ["110", "101", "011"]);
        assert_eq!(s3, ["000", "100", "010", "001", "110", "101", "011", "111"]);
        assert_eq!(strings(0), [""]);
    }

    #[test]
    fn matches_sort_oracle() {
        // weight, then support set compared as sorted index lists
        for n in 1..=8 {
            let mut all: Vec<u64> = (0..1u64 << n).collect();
            all.sort_by_key(|&m| {
                let support: Vec<usize> = (0..n).filter(|&i| m >> i & 1 == 1).collect();
                (m.count_ones(), support)
            });
            let o = canonical_order(n).unwrap();
            assert_eq!(o.masks(), &all[..], "n = {n}");
        }
    }

    #[test]
    fn positions_invert_masks() {
        for n in [1, 4, 7, 10] {
            let o = canonical_order(n).unwrap();
            for (pos, m) in o.iter().enumerate() {
                assert_eq!(o.position(m), pos);
            }
            assert_eq!(o.mask(0), 0);
            assert_eq!(o.mask(o.len() - 1), (1u64 << n) - 1);
            for k in 0..n {
                assert_eq!(o.mask(k + 1), 1 << k);
            }
        }
    }

    #[test]
    fn size_guard() {
        assert!(canonical_order(26).is_err());
    }

    #[test]
    fn bitstrings_round_trip() {
        assert_eq!(parse_bitstring("101", 3), Some(0b101));
        assert_eq!(mask_to_bitstring(0b001, 3), "100");
        assert_eq!(parse_bitstring("10", 3), None);
        assert_eq!(parse_bitstring("1x1", 3), None);
    }
}
