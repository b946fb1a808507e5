//! Multi-indices `n = (n1, n2, n3)` of bounded total order and the
//! combinatorial lookup tables shared by every other module.
//!
//! Entries are kept in graded-lexicographic order: first by total order,
//! then lexicographically on `(n1, n2, n3)`. Entry 0 is always `(0,0,0)`,
//! and the table for a lower order is a prefix of the table for a higher one.

use crate::error::{Error, Result};

/// Largest supported expansion order. Lines through a box become polynomials
/// of this degree, and quartics are the last ones with closed-form roots.
pub const MAX_RHO: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct MultiIndex {
    pub n1: usize,
    pub n2: usize,
    pub n3: usize,
}

impl MultiIndex {
    pub const fn new(n1: usize, n2: usize, n3: usize) -> Self {
        Self { n1, n2, n3 }
    }

    pub const fn order(&self) -> usize {
        self.n1 + self.n2 + self.n3
    }

    pub const fn as_array(&self) -> [usize; 3] {
        [self.n1, self.n2, self.n3]
    }

    pub const fn from_array(a: [usize; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    /// Unit multi-index along `axis`.
    pub const fn unit(axis: usize) -> Self {
        match axis {
            0 => Self::new(1, 0, 0),
            1 => Self::new(0, 1, 0),
            _ => Self::new(0, 0, 1),
        }
    }

    pub const fn add(&self, other: &Self) -> Self {
        Self::new(self.n1 + other.n1, self.n2 + other.n2, self.n3 + other.n3)
    }

    /// Component-wise `self <= other`.
    pub const fn le(&self, other: &Self) -> bool {
        self.n1 <= other.n1 && self.n2 <= other.n2 && self.n3 <= other.n3
    }

    /// Component-wise difference, `None` unless `other <= self`.
    pub fn checked_sub(&self, other: &Self) -> Option<Self> {
        Some(Self::new(
            self.n1.checked_sub(other.n1)?,
            self.n2.checked_sub(other.n2)?,
            self.n3.checked_sub(other.n3)?,
        ))
    }
}

impl From<(usize, usize, usize)> for MultiIndex {
    fn from(t: (usize, usize, usize)) -> Self {
        Self::new(t.0, t.1, t.2)
    }
}

/// Number of 3D multi-indices with total order at most `rho`.
pub const fn count(rho: usize) -> usize {
    (rho + 1) * (rho + 2) * (rho + 3) / 6
}

#[derive(Debug, Clone)]
pub struct MultiIndexTable {
    rho: usize,
    entries: Vec<MultiIndex>,
    // dense (rho+1)^3 lookup, usize::MAX where the order exceeds rho
    lookup: Vec<usize>,
    factorial: Vec<f64>,
    binomial: Vec<Vec<f64>>,
    // inv_fact_prod[i] = 1 / (n1! n2! n3!) for entries[i]
    inv_fact_prod: Vec<f64>,
    // shifted[axis][i] = index of entries[i] + e_axis when its order stays <= rho
    shifted: [Vec<Option<usize>>; 3],
}

impl MultiIndexTable {
    pub fn new(rho: usize) -> Result<Self> {
        if !(1..=MAX_RHO).contains(&rho) {
            return Err(Error::Config(format!(
                "expansion order rho must lie in [1, {MAX_RHO}], got {rho}"
            )));
        }
        let mut entries = Vec::with_capacity(count(rho));
        for total in 0..=rho {
            for n1 in 0..=total {
                for n2 in 0..=(total - n1) {
                    entries.push(MultiIndex::new(n1, n2, total - n1 - n2));
                }
            }
        }
        // within one order the loops above already emit ascending (n1, n2, n3)
        let side = rho + 1;
        let mut lookup = vec![usize::MAX; side * side * side];
        for (i, n) in entries.iter().enumerate() {
            lookup[(n.n1 * side + n.n2) * side + n.n3] = i;
        }

        let top = 2 * rho;
        let mut factorial = vec![1.0; top + 1];
        for i in 1..=top {
            factorial[i] = factorial[i - 1] * i as f64;
        }
        let mut binomial = vec![vec![0.0; top + 1]; top + 1];
        for n in 0..=top {
            binomial[n][0] = 1.0;
            for k in 1..=n {
                binomial[n][k] = binomial[n - 1][k - 1] + if k < n { binomial[n - 1][k] } else { 0.0 };
            }
        }
        let inv_fact_prod = entries
            .iter()
            .map(|n| 1.0 / (factorial[n.n1] * factorial[n.n2] * factorial[n.n3]))
            .collect();

        let mut table = Self {
            rho,
            entries,
            lookup,
            factorial,
            binomial,
            inv_fact_prod,
            shifted: [Vec::new(), Vec::new(), Vec::new()],
        };
        for axis in 0..3 {
            table.shifted[axis] = table
                .entries
                .iter()
                .map(|n| table.try_index_of(n.add(&MultiIndex::unit(axis))))
                .collect();
        }
        Ok(table)
    }

    pub fn rho(&self) -> usize {
        self.rho
    }

    /// Number of entries, `P = (rho+1)(rho+2)(rho+3)/6`.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[MultiIndex] {
        &self.entries
    }

    pub fn entry(&self, i: usize) -> MultiIndex {
        self.entries[i]
    }

    pub fn index_of(&self, n: MultiIndex) -> Result<usize> {
        self.try_index_of(n).ok_or_else(|| {
            Error::Input(format!(
                "multi-index {:?} has order {} > rho = {}",
                n.as_array(),
                n.order(),
                self.rho
            ))
        })
    }

    pub fn try_index_of(&self, n: MultiIndex) -> Option<usize> {
        if n.order() > self.rho {
            return None;
        }
        let side = self.rho + 1;
        Some(self.lookup[(n.n1 * side + n.n2) * side + n.n3])
    }

    /// `k!` for `k <= 2 rho`.
    pub fn factorial(&self, k: usize) -> f64 {
        self.factorial[k]
    }

    /// `n choose k` for `n <= 2 rho`.
    pub fn binomial(&self, n: usize, k: usize) -> f64 {
        if k > n {
            0.0
        } else {
            self.binomial[n][k]
        }
    }

    /// `1 / (n1! n2! n3!)` for entry `i`.
    pub fn inv_factorial_product(&self, i: usize) -> f64 {
        self.inv_fact_prod[i]
    }

    /// Index of `entries[i] + e_axis`, if that stays within the table.
    pub fn shifted(&self, i: usize, axis: usize) -> Option<usize> {
        self.shifted[axis][i]
    }

    /// `d^n / n!` for every entry, the monomial basis used by P2M and L2P.
    pub fn scaled_monomials(&self, d: [f64; 3], out: &mut [f64]) {
        let mut pw = [[0.0; MAX_RHO + 1]; 3];
        for axis in 0..3 {
            pw[axis][0] = 1.0;
            for k in 1..=self.rho {
                pw[axis][k] = pw[axis][k - 1] * d[axis] / k as f64;
            }
        }
        for (o, n) in out.iter_mut().zip(&self.entries) {
            *o = pw[0][n.n1] * pw[1][n.n2] * pw[2][n.n3];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_match_closed_form() {
        for rho in 1..=4 {
            let t = MultiIndexTable::new(rho).unwrap();
            assert_eq!(t.len(), count(rho));
        }
        assert_eq!(MultiIndexTable::new(4).unwrap().len(), 35);
    }

    #[test]
    fn first_order_table_is_graded_lex() {
        let t = MultiIndexTable::new(1).unwrap();
        let got: Vec<_> = t.entries().iter().map(|n| n.as_array()).collect();
        assert_eq!(got, vec![[0, 0, 0], [0, 0, 1], [0, 1, 0], [1, 0, 0]]);
    }

    #[test]
    fn second_order_matches_enumeration() {
        let t = MultiIndexTable::new(2).unwrap();
        let mut brute = Vec::new();
        for a in 0..=2 {
            for b in 0..=2 {
                for c in 0..=2 {
                    if a + b + c <= 2 {
                        brute.push(MultiIndex::new(a, b, c));
                    }
                }
            }
        }
        let mut got = t.entries().to_vec();
        got.sort();
        brute.sort();
        assert_eq!(got, brute);
        assert_eq!(t.len(), 10);
    }

    #[test]
    fn ordinals_and_bijection() {
        let t = MultiIndexTable::new(4).unwrap();
        assert_eq!(t.index_of(MultiIndex::new(0, 0, 0)).unwrap(), 0);
        assert_eq!(t.index_of(MultiIndex::new(4, 0, 0)).unwrap(), 34);
        for rho in 1..=4 {
            let t = MultiIndexTable::new(rho).unwrap();
            for (i, n) in t.entries().iter().enumerate() {
                assert_eq!(t.index_of(*n).unwrap(), i);
            }
            // sorted by order then lexicographically
            for w in t.entries().windows(2) {
                let (a, b) = (w[0], w[1]);
                assert!(a.order() < b.order() || (a.order() == b.order() && a < b));
            }
        }
    }

    #[test]
    fn lower_order_is_prefix() {
        let t4 = MultiIndexTable::new(4).unwrap();
        for rho in 1..4 {
            let t = MultiIndexTable::new(rho).unwrap();
            assert_eq!(t.entries(), &t4.entries()[..t.len()]);
        }
    }

    #[test]
    fn out_of_range_rejected() {
        assert!(matches!(MultiIndexTable::new(0), Err(Error::Config(_))));
        assert!(matches!(MultiIndexTable::new(5), Err(Error::Config(_))));
        let t = MultiIndexTable::new(2).unwrap();
        assert!(matches!(t.index_of(MultiIndex::new(2, 1, 0)), Err(Error::Input(_))));
    }

    #[test]
    fn factorials_and_binomials() {
        let t = MultiIndexTable::new(4).unwrap();
        let mut f = 1u64;
        for k in 0..=8u64 {
            if k > 0 {
                f *= k;
            }
            assert_eq!(t.factorial(k as usize), f as f64);
        }
        for n in 0..=8usize {
            for k in 0..=n {
                let direct = (0..k).fold(1u64, |acc, i| acc * (n - i) as u64 / (i as u64 + 1));
                assert_eq!(t.binomial(n, k), direct as f64, "C({n},{k})");
            }
        }
    }

    #[test]
    fn shifted_indices() {
        let t = MultiIndexTable::new(3).unwrap();
        for i in 0..t.len() {
            for axis in 0..3 {
                let n = t.entry(i).add(&MultiIndex::unit(axis));
                assert_eq!(t.shifted(i, axis), t.try_index_of(n));
            }
        }
    }
}
