//! FLOP and memory model of a dense expansion pass.
//!
//! Counting rules: every add, multiply, subtract, divide and floor is one
//! FLOP; table lookups are free.
//! - P2M per source: 12 to find the box and the offset from its center
//!   (add, scale, floor, subtract per axis), `6 rho` for per-axis scaled
//!   powers `d^k / k!` (one multiply, one divide per power), and `2 P` for
//!   the coefficient product and accumulation.
//! - L2P per target: the same 12 + `6 rho`, then `4 P`: two multiplies to
//!   form `d^n / n!`, one with the coefficient, one accumulate.
//! - M2L per cell and channel: `P^2` multiply-adds for each of the 6^3
//!   stencil offsets; M2M and L2L: `P^2` per child.

use super::grid::element_count;
use crate::kernel::{resolution, COARSEST_LEVEL};
use crate::multiindex::count;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlopModel {
    pub rho: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FlopBreakdown {
    pub p2m: u64,
    pub m2m: u64,
    pub m2l: u64,
    pub l2l: u64,
    pub l2p: u64,
}

impl FlopBreakdown {
    pub fn total(&self) -> u64 {
        self.p2m + self.m2m + self.m2l + self.l2l + self.l2p
    }

    /// Share of the grid-dependent work spent in M2L.
    pub fn m2l_fraction(&self) -> f64 {
        let expansion = self.m2m + self.m2l + self.l2l;
        if expansion == 0 {
            0.0
        } else {
            self.m2l as f64 / expansion as f64
        }
    }
}

impl FlopModel {
    pub fn new(rho: usize) -> Self {
        Self { rho }
    }

    pub fn p(&self) -> u64 {
        count(self.rho) as u64
    }

    pub fn p2m_per_source(&self) -> u64 {
        12 + 6 * self.rho as u64 + 2 * self.p()
    }

    pub fn l2p_per_target(&self) -> u64 {
        12 + 6 * self.rho as u64 + 4 * self.p()
    }

    pub fn m2l_per_cell(&self) -> u64 {
        self.p() * self.p() * 6 * 6 * 6 * 2
    }

    pub fn near_per_cell(&self) -> u64 {
        self.p() * self.p() * 3 * 3 * 3 * 2
    }

    pub fn shift_per_cell(&self) -> u64 {
        self.p() * self.p() * 2 * 2 * 2 * 2
    }

    /// Dense pass over all levels for `n` sources, `m` targets, `c` channels.
    pub fn expansion(&self, levels: u32, n: u64, m: u64, c: u64) -> FlopBreakdown {
        let cells = |l: u32| (resolution(l) as u64).pow(3);
        let mut b = FlopBreakdown {
            p2m: self.p2m_per_source() * n * c,
            l2p: self.l2p_per_target() * m * c,
            ..Default::default()
        };
        for level in COARSEST_LEVEL..=levels {
            b.m2l += self.m2l_per_cell() * cells(level) * c;
            if level == levels {
                b.m2l += self.near_per_cell() * cells(level) * c;
            }
            if level > COARSEST_LEVEL {
                // parents gather children going up, children read parents going down
                b.m2m += self.shift_per_cell() * cells(level - 1) * c;
                b.l2l += self.shift_per_cell() * cells(level - 1) * c;
            }
        }
        b
    }

    /// Finest-grid element count `res^3 P C`.
    pub fn finest_elements(&self, levels: u32, channels: usize) -> usize {
        element_count(levels, count(self.rho), channels)
    }
}
