use crate::error::{Error, Result};
use crate::kernel::{padded_stride_for, resolution};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridKind {
    Moments,
    Locals,
}

/// Uniform voxel grid over `(-1, 1)^3` holding a P-vector of Taylor
/// coefficients per box and channel. Layout: `((box * C) + c) * stride + n`
/// with boxes flattened as `(ix * res + iy) * res + iz`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    level: u32,
    res: usize,
    p: usize,
    stride: usize,
    channels: usize,
    kind: GridKind,
    pub(crate) data: Vec<f64>,
}

/// Logical element count `res^3 * P * C` of a grid, without padding.
pub fn element_count(level: u32, p: usize, channels: usize) -> usize {
    let res = resolution(level);
    res * res * res * p * channels
}

impl Grid {
    pub fn zeros(level: u32, p: usize, channels: usize, kind: GridKind) -> Self {
        let res = resolution(level);
        let stride = padded_stride_for(p);
        Self { level, res, p, stride, channels, kind, data: vec![0.0; res * res * res * channels * stride] }
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn res(&self) -> usize {
        self.res
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn kind(&self) -> GridKind {
        self.kind
    }

    pub fn num_boxes(&self) -> usize {
        self.res * self.res * self.res
    }

    pub fn element_count(&self) -> usize {
        self.num_boxes() * self.p * self.channels
    }

    /// Box half-width in domain units.
    pub fn half_width(&self) -> f64 {
        1.0 / self.res as f64
    }

    pub fn expect_kind(&self, kind: GridKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Contract(format!("expected a {kind:?} grid, got {:?}", self.kind)));
        }
        Ok(())
    }

    /// Per-axis box index `floor((q + 1) res / 2)`, clamped to the grid.
    #[inline]
    pub fn box_index(&self, q: [f64; 3]) -> [usize; 3] {
        box_index(self.res, q)
    }

    #[inline]
    pub fn flat(&self, i: [usize; 3]) -> usize {
        (i[0] * self.res + i[1]) * self.res + i[2]
    }

    #[inline]
    pub fn unflat(&self, b: usize) -> [usize; 3] {
        [b / (self.res * self.res), (b / self.res) % self.res, b % self.res]
    }

    #[inline]
    pub fn center(&self, i: [usize; 3]) -> [f64; 3] {
        let w = 2.0 / self.res as f64;
        std::array::from_fn(|a| -1.0 + (i[a] as f64 + 0.5) * w)
    }

    #[inline]
    pub fn block_len(&self) -> usize {
        self.channels * self.stride
    }

    /// All channels of box `b`.
    #[inline]
    pub fn block(&self, b: usize) -> &[f64] {
        let l = self.block_len();
        &self.data[b * l..(b + 1) * l]
    }

    #[inline]
    pub fn block_mut(&mut self, b: usize) -> &mut [f64] {
        let l = self.block_len();
        &mut self.data[b * l..(b + 1) * l]
    }

    /// The P coefficients of box `b`, channel `c`.
    #[inline]
    pub fn coeffs(&self, b: usize, c: usize) -> &[f64] {
        let s = (b * self.channels + c) * self.stride;
        &self.data[s..s + self.p]
    }

    #[inline]
    pub fn coeffs_mut(&mut self, b: usize, c: usize) -> &mut [f64] {
        let s = (b * self.channels + c) * self.stride;
        &mut self.data[s..s + self.p]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Boxes holding any nonzero coefficient.
    pub fn occupancy(&self) -> Vec<bool> {
        let l = self.block_len();
        self.data.chunks(l).map(|b| b.iter().any(|v| *v != 0.0)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, other: &Grid) -> Result<()> {
        if (self.level, self.p, self.channels, self.kind)
            != (other.level, other.p, other.channels, other.kind)
        {
            return Err(Error::Contract("grid shapes differ".into()));
        }
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
        Ok(())
    }
}

#[inline]
pub fn box_index(res: usize, q: [f64; 3]) -> [usize; 3] {
    std::array::from_fn(|a| {
        let v = ((q[a] + 1.0) * res as f64 * 0.5).floor();
        if v < 0.0 {
            0
        } else {
            (v as usize).min(res - 1)
        }
    })
}
