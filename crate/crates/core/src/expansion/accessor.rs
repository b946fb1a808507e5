//! Evaluation of finest-level local expansions (L2P).
//!
//! Queries accept single points, point lists and `vol` meshgrids built from
//! per-axis selectors: a scalar, explicit values, or a linspace `a:b:n`
//! including both ends. A bare `::n` spans `-1..1` with the ends nudged
//! inward so they stay inside the open domain.

use super::grid::{Grid, GridKind};
use crate::error::{Error, Result};
use crate::multiindex::MultiIndexTable;
use crate::par;
use crate::sources::is_in_domain;
use std::str::FromStr;
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq)]
pub enum Axis {
    Scalar(f64),
    Values(Vec<f64>),
    Linspace { from: f64, to: f64, n: usize },
    /// `n` points spanning the whole domain.
    Full(usize),
}

/// Inward nudge applied to `::n` endpoints.
const EDGE: f64 = 4.0 * f64::EPSILON;

impl Axis {
    pub fn values(&self) -> Vec<f64> {
        match self {
            Axis::Scalar(v) => vec![*v],
            Axis::Values(v) => v.clone(),
            Axis::Linspace { from, to, n } => linspace(*from, *to, *n),
            Axis::Full(n) => linspace(-1.0 + EDGE, 1.0 - EDGE, *n),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Axis::Scalar(_) => 1,
            Axis::Values(v) => v.len(),
            Axis::Linspace { n, .. } | Axis::Full(n) => *n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
    }
}

impl FromStr for Axis {
    type Err = Error;

    /// `0.5`, `-0.5:0.5:11` or `::256`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Input(format!("cannot parse axis selector '{s}'"));
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            [v] => Ok(Axis::Scalar(v.trim().parse().map_err(|_| bad())?)),
            ["", "", n] => Ok(Axis::Full(n.trim().parse().map_err(|_| bad())?)),
            [a, b, n] => Ok(Axis::Linspace {
                from: a.trim().parse().map_err(|_| bad())?,
                to: b.trim().parse().map_err(|_| bad())?,
                n: n.trim().parse().map_err(|_| bad())?,
            }),
            _ => Err(bad()),
        }
    }
}

/// Dense row-major output of a `vol` query.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    /// `[C, nx, ny, nz]`, with a trailing 3 or 6 for partials.
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Accessor {
    grid: Grid,
    table: Arc<MultiIndexTable>,
    available: Option<Vec<bool>>,
}

impl Accessor {
    pub fn new(grid: Grid, table: Arc<MultiIndexTable>, available: Option<Vec<bool>>) -> Self {
        debug_assert_eq!(grid.kind(), GridKind::Locals);
        Self { grid, table, available }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn table(&self) -> &MultiIndexTable {
        &self.table
    }

    pub fn channels(&self) -> usize {
        self.grid.channels()
    }

    /// Whether the locals of finest box `b` were computed.
    pub fn is_available(&self, b: usize) -> bool {
        self.available.as_ref().is_none_or(|m| m[b])
    }

    /// Box of `q` and the offset from its center.
    pub fn locate(&self, q: [f64; 3]) -> Result<(usize, [f64; 3])> {
        if !is_in_domain(q) {
            return Err(Error::Input(format!("query {q:?} is not strictly inside (-1, 1)^3")));
        }
        let i = self.grid.box_index(q);
        let b = self.grid.flat(i);
        if !self.is_available(b) {
            return Err(Error::Contract(format!("box {i:?} was not expanded for this accessor")));
        }
        let c = self.grid.center(i);
        Ok((b, [q[0] - c[0], q[1] - c[1], q[2] - c[2]]))
    }

    /// Local coefficients of box `b`, channel `c`.
    pub fn local(&self, b: usize, c: usize) -> &[f64] {
        self.grid.coeffs(b, c)
    }

    pub fn eval_box(&self, b: usize, c: usize, d: [f64; 3]) -> f64 {
        let mut mono = [0.0; 35];
        let mono = &mut mono[..self.table.len()];
        self.table.scaled_monomials(d, mono);
        self.local(b, c).iter().zip(mono.iter()).map(|(l, m)| l * m).sum()
    }

    pub fn gradient_box(&self, b: usize, c: usize, d: [f64; 3]) -> [f64; 3] {
        let t = &self.table;
        let mut mono = [0.0; 35];
        let mono = &mut mono[..t.len()];
        t.scaled_monomials(d, mono);
        let l = self.local(b, c);
        let mut g = [0.0; 3];
        for (j, m) in mono.iter().enumerate() {
            for (axis, ga) in g.iter_mut().enumerate() {
                if let Some(s) = t.shifted(j, axis) {
                    *ga += l[s] * m;
                }
            }
        }
        g
    }

    /// Second partials ordered xx, yy, zz, xy, xz, yz.
    pub fn hessian_box(&self, b: usize, c: usize, d: [f64; 3]) -> [f64; 6] {
        const PAIRS: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)];
        let t = &self.table;
        let mut mono = [0.0; 35];
        let mono = &mut mono[..t.len()];
        t.scaled_monomials(d, mono);
        let l = self.local(b, c);
        let mut h = [0.0; 6];
        for (j, m) in mono.iter().enumerate() {
            for (slot, (a, bb)) in PAIRS.iter().enumerate() {
                if let Some(s) = t.shifted(j, *a).and_then(|s| t.shifted(s, *bb)) {
                    h[slot] += l[s] * m;
                }
            }
        }
        h
    }

    /// One value per channel.
    pub fn value(&self, q: [f64; 3]) -> Result<Vec<f64>> {
        let (b, d) = self.locate(q)?;
        Ok((0..self.channels()).map(|c| self.eval_box(b, c, d)).collect())
    }

    pub fn gradient(&self, q: [f64; 3]) -> Result<Vec<[f64; 3]>> {
        let (b, d) = self.locate(q)?;
        Ok((0..self.channels()).map(|c| self.gradient_box(b, c, d)).collect())
    }

    pub fn hessian(&self, q: [f64; 3]) -> Result<Vec<[f64; 6]>> {
        let (b, d) = self.locate(q)?;
        Ok((0..self.channels()).map(|c| self.hessian_box(b, c, d)).collect())
    }

    /// M x C values, row-major.
    pub fn values(&self, qs: &[[f64; 3]]) -> Result<Vec<f64>> {
        let rows = par::map(qs.len(), |i| self.value(qs[i]));
        let mut out = Vec::with_capacity(qs.len() * self.channels());
        for r in rows {
            out.extend(r?);
        }
        Ok(out)
    }

    /// M x C gradients, row-major.
    pub fn gradients(&self, qs: &[[f64; 3]]) -> Result<Vec<[f64; 3]>> {
        let rows = par::map(qs.len(), |i| self.gradient(qs[i]));
        let mut out = Vec::with_capacity(qs.len() * self.channels());
        for r in rows {
            out.extend(r?);
        }
        Ok(out)
    }

    fn meshgrid(x: &Axis, y: &Axis, z: &Axis) -> Vec<[f64; 3]> {
        let (xs, ys, zs) = (x.values(), y.values(), z.values());
        let mut pts = Vec::with_capacity(xs.len() * ys.len() * zs.len());
        for &a in &xs {
            for &b in &ys {
                for &c in &zs {
                    pts.push([a, b, c]);
                }
            }
        }
        pts
    }

    fn reshape(&self, x: &Axis, y: &Axis, z: &Axis, per_point: usize, flat: Vec<f64>) -> Volume {
        // flat is point-major (point, channel, k); output is channel-major
        let (c, np) = (self.channels(), x.len() * y.len() * z.len());
        let mut data = vec![0.0; flat.len()];
        for i in 0..np {
            for ch in 0..c {
                for k in 0..per_point {
                    data[(ch * np + i) * per_point + k] = flat[(i * c + ch) * per_point + k];
                }
            }
        }
        let mut shape = vec![c, x.len(), y.len(), z.len()];
        if per_point > 1 {
            shape.push(per_point);
        }
        Volume { shape, data }
    }

    /// Values on the meshgrid of three axis selectors, shape `[C, nx, ny, nz]`.
    pub fn vol(&self, x: &Axis, y: &Axis, z: &Axis) -> Result<Volume> {
        let pts = Self::meshgrid(x, y, z);
        let flat = self.values(&pts)?;
        Ok(self.reshape(x, y, z, 1, flat))
    }

    /// Gradients on a meshgrid, shape `[C, nx, ny, nz, 3]`.
    pub fn vol_partials(&self, x: &Axis, y: &Axis, z: &Axis) -> Result<Volume> {
        let pts = Self::meshgrid(x, y, z);
        let flat: Vec<f64> = self.gradients(&pts)?.into_iter().flatten().collect();
        Ok(self.reshape(x, y, z, 3, flat))
    }

    /// Second partials on a meshgrid, shape `[C, nx, ny, nz, 6]`.
    pub fn vol_partials2(&self, x: &Axis, y: &Axis, z: &Axis) -> Result<Volume> {
        let pts = Self::meshgrid(x, y, z);
        let rows = par::map(pts.len(), |i| self.hessian(pts[i]));
        let mut flat = Vec::with_capacity(pts.len() * self.channels() * 6);
        for r in rows {
            flat.extend(r?.into_iter().flatten());
        }
        Ok(self.reshape(x, y, z, 6, flat))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expansion::{Engine, EngineConfig};
    use crate::sources::SourceSet;

    fn engine() -> Engine {
        Engine::new(EngineConfig { levels: 3, alpha: 40.0, ..Default::default() }).unwrap()
    }

    #[test]
    fn axis_parsing_and_values() {
        assert_eq!("0.5".parse::<Axis>().unwrap(), Axis::Scalar(0.5));
        assert_eq!("-1:1:3".parse::<Axis>().unwrap().values(), vec![-1.0, 0.0, 1.0]);
        let full = "::4".parse::<Axis>().unwrap().values();
        assert_eq!(full.len(), 4);
        assert!(full[0] > -1.0 && full[3] < 1.0);
        assert!("1:2".parse::<Axis>().is_err());
    }

    #[test]
    fn center_query_returns_constant_term() {
        let e = engine();
        let s = SourceSet::new(vec![[0.2, -0.1, 0.3]], vec![1.0], 1).unwrap();
        let a = e.expand(&s).unwrap();
        let c = a.grid().center([7, 3, 12]);
        let b = a.grid().flat([7, 3, 12]);
        assert_eq!(a.value(c).unwrap()[0], a.local(b, 0)[0]);
        assert!(a.value([1.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn vol_shapes() {
        let e = engine();
        let s = SourceSet::new(vec![[0.2, -0.1, 0.3]], vec![1.0, 2.0], 2).unwrap();
        let a = e.expand(&s).unwrap();
        let x = Axis::Linspace { from: -0.5, to: 0.5, n: 4 };
        let y = Axis::Values(vec![0.0, 0.1, 0.2]);
        let z = Axis::Scalar(0.3);
        let v = a.vol(&x, &y, &z).unwrap();
        assert_eq!(v.shape, vec![2, 4, 3, 1]);
        assert_eq!(v.data.len(), 24);
        // channel 1 is twice channel 0
        for i in 0..12 {
            assert!((v.data[12 + i] - 2.0 * v.data[i]).abs() < 1e-12);
        }
        assert_eq!(a.vol_partials(&x, &y, &z).unwrap().shape, vec![2, 4, 3, 1, 3]);
        assert_eq!(a.vol_partials2(&x, &y, &z).unwrap().shape, vec![2, 4, 3, 1, 6]);
        let full = a.vol(&Axis::Full(8), &Axis::Full(8), &Axis::Full(8)).unwrap();
        assert_eq!(full.data.len(), 2 * 512);
    }

    #[test]
    fn gradient_and_hessian_match_finite_differences() {
        let e = engine();
        let s = SourceSet::new(vec![[0.2, -0.1, 0.3], [0.25, -0.05, 0.2]], vec![1.0, -0.7], 1).unwrap();
        let a = e.expand(&s).unwrap();
        // a point away from box faces
        let q = [0.26, -0.07, 0.27];
        let h = 1e-4;
        let g = a.gradient(q).unwrap()[0];
        let hs = a.hessian(q).unwrap()[0];
        for axis in 0..3 {
            let (mut qp, mut qm) = (q, q);
            qp[axis] += h;
            qm[axis] -= h;
            let fd = (a.value(qp).unwrap()[0] - a.value(qm).unwrap()[0]) / (2.0 * h);
            assert!((fd - g[axis]).abs() < 1e-4 * g[axis].abs().max(1e-3), "axis {axis}");
            let gd: Vec<f64> = (0..3)
                .map(|j| (a.gradient(qp).unwrap()[0][j] - a.gradient(qm).unwrap()[0][j]) / (2.0 * h))
                .collect();
            let slots = match axis {
                0 => [0, 3, 4],
                1 => [3, 1, 5],
                _ => [4, 5, 2],
            };
            for j in 0..3 {
                assert!((gd[j] - hs[slots[j]]).abs() < 1e-3 * hs[slots[j]].abs().max(1e-2));
            }
        }
        // constant expansion has zero gradient
        let mut grid = Grid::zeros(3, e.table().len(), 1, GridKind::Locals);
        grid.coeffs_mut(0, 0)[0] = 4.0;
        let c = Accessor::new(grid, e.table().clone(), None);
        assert_eq!(c.gradient([-0.95, -0.95, -0.95]).unwrap()[0], [0.0; 3]);
    }
}
