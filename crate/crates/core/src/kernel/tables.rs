//! Per-level M2L coefficient tables.
//!
//! `C_o(n, k)` maps source moments `M(n)` of the box at displacement `o`
//! (in boxes, source minus target) to target local coefficients `L(k)`:
//! `L(k) += sum_n C_o(n, k) M(n)`. The finest level has a near table over
//! `[-1, 1]^3` and every level has a far table: `[-3, 3]^3` minus the
//! `3x3x3` hole, or `[-7, 7]^3` minus the hole at the coarsest level 2.

use super::fit::FitBasis;
use super::KernelModel;
use crate::error::{Error, Result};
use crate::multiindex::MultiIndexTable;
use crate::par;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const COARSEST_LEVEL: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pass {
    Near,
    Far,
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub lsq: bool,
    /// Chebyshev nodes per axis; `None` uses `rho + 2`.
    pub nodes_per_axis: Option<usize>,
    /// Offsets whose kernel values over the box pair stay below this are
    /// stored as absent.
    pub negligible: f64,
    /// Fail construction when a level's probe error exceeds this.
    pub admissibility_tol: Option<f64>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { lsq: true, nodes_per_axis: None, negligible: 1e-18, admissibility_tol: None }
    }
}

/// Rows padded to a multiple of 4 so the contraction vectorizes cleanly.
pub fn padded_stride(p: usize) -> usize {
    p.div_ceil(4) * 4
}

#[derive(Debug, Clone)]
pub struct M2LTable {
    level: u32,
    pass: Pass,
    radius: i32,
    p: usize,
    stride: usize,
    half_width: f64,
    slots: Vec<Option<u32>>,
    data: Vec<f64>,
    data32: Vec<f32>,
    fit_residual: f64,
}

impl M2LTable {
    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn pass(&self) -> Pass {
        self.pass
    }

    pub fn radius(&self) -> i32 {
        self.radius
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    /// Max node residual of the fit on the probed offsets.
    pub fn fit_residual(&self) -> f64 {
        self.fit_residual
    }

    fn slot_index(&self, o: [i32; 3]) -> Option<usize> {
        let r = self.radius;
        if o.iter().any(|v| v.abs() > r) {
            return None;
        }
        let side = (2 * r + 1) as usize;
        let idx = (((o[0] + r) as usize * side) + (o[1] + r) as usize) * side + (o[2] + r) as usize;
        Some(idx)
    }

    /// Coefficients at offset `o`, row `n` at `[n * stride ..][..P]`, or
    /// `None` for offsets outside the stencil, in the hole, or negligible.
    #[inline]
    pub fn get(&self, o: [i32; 3]) -> Option<&[f64]> {
        let s = self.slots[self.slot_index(o)?]? as usize;
        let len = self.p * self.stride;
        Some(&self.data[s * len..(s + 1) * len])
    }

    #[inline]
    pub fn get32(&self, o: [i32; 3]) -> Option<&[f32]> {
        let s = self.slots[self.slot_index(o)?]? as usize;
        let len = self.p * self.stride;
        Some(&self.data32[s * len..(s + 1) * len])
    }

    /// Dense P x P matrix at `o`, zero where no coefficients are stored.
    pub fn matrix(&self, o: [i32; 3]) -> Vec<f64> {
        let mut out = vec![0.0; self.p * self.p];
        if let Some(c) = self.get(o) {
            for n in 0..self.p {
                out[n * self.p..(n + 1) * self.p]
                    .copy_from_slice(&c[n * self.stride..n * self.stride + self.p]);
            }
        }
        out
    }

    /// Whether `o` belongs to this table's stencil (stored or negligible).
    pub fn covers(&self, o: [i32; 3]) -> bool {
        in_stencil(self.pass, self.radius, o)
    }

    pub fn stored_offsets(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }
}

#[derive(Debug, Clone)]
pub struct LevelTables {
    pub level: u32,
    pub near: Option<M2LTable>,
    pub far: M2LTable,
}

#[derive(Debug, Clone)]
pub struct M2LTables {
    finest: u32,
    lsq: bool,
    levels: Vec<LevelTables>,
}

impl M2LTables {
    pub fn finest(&self) -> u32 {
        self.finest
    }

    pub fn lsq(&self) -> bool {
        self.lsq
    }

    pub fn level(&self, level: u32) -> &LevelTables {
        &self.levels[(level - COARSEST_LEVEL) as usize]
    }

    pub fn iter(&self) -> impl Iterator<Item = &LevelTables> {
        self.levels.iter()
    }
}

fn in_hole(o: [i32; 3]) -> bool {
    o.iter().all(|v| v.abs() <= 1)
}

fn in_stencil(pass: Pass, radius: i32, o: [i32; 3]) -> bool {
    if o.iter().any(|v| v.abs() > radius) {
        return false;
    }
    match pass {
        Pass::Near => in_hole(o),
        Pass::Far => !in_hole(o),
    }
}

/// Boxes per axis at `level`.
pub fn resolution(level: u32) -> usize {
    1usize << (level + 1)
}

struct Fitter<'a> {
    kernel: &'a KernelModel,
    table: &'a MultiIndexTable,
    basis: Option<FitBasis>,
}

impl Fitter<'_> {
    /// Domain-unit coefficients for a box pair at center offset `c`.
    fn coefficients(&self, c: [f64; 3], h: f64) -> Vec<f64> {
        let p = self.table.len();
        let orders: Vec<usize> = self.table.entries().iter().map(|n| n.order()).collect();
        match &self.basis {
            Some(basis) => {
                let m = basis.nodes_per_axis();
                let g = basis.nodes();
                let axes: [Vec<f64>; 3] = std::array::from_fn(|a| {
                    let mut v = vec![0.0; m * m];
                    for i in 0..m {
                        for j in 0..m {
                            v[i * m + j] = self.kernel.axis_value(c[a] + h * (g[i] - g[j]));
                        }
                    }
                    v
                });
                let mut out = basis.fit_separable(&axes);
                for n in 0..p {
                    for k in 0..p {
                        out[n * p + k] *= h.powi(-((orders[n] + orders[k]) as i32));
                    }
                }
                out
            }
            None => {
                let top = self.kernel.max_order();
                let mut d = [[0.0; super::MAX_DERIVATIVE + 1]; 3];
                for a in 0..3 {
                    self.kernel.axis_derivatives(c[a], &mut d[a][..=top]);
                }
                let e = self.table.entries();
                let mut out = vec![0.0; p * p];
                for n in 0..p {
                    for k in 0..p {
                        let s = e[n].add(&e[k]).as_array();
                        let sign = if orders[k] % 2 == 1 { -1.0 } else { 1.0 };
                        out[n * p + k] = sign * d[0][s[0]] * d[1][s[1]] * d[2][s[2]];
                    }
                }
                out
            }
        }
    }

    /// Max residual of the fitted bilinear form on the Chebyshev node grid.
    fn residual(&self, c: [f64; 3], h: f64, coeffs: &[f64]) -> f64 {
        let p = self.table.len();
        let basis = match &self.basis {
            Some(b) => b.clone(),
            None => FitBasis::new(self.table, self.table.rho() + 2).expect("valid basis"),
        };
        let orders: Vec<usize> = self.table.entries().iter().map(|n| n.order()).collect();
        let mut normalized = coeffs.to_vec();
        for n in 0..p {
            for k in 0..p {
                normalized[n * p + k] *= h.powi((orders[n] + orders[k]) as i32);
            }
        }
        let y = |i: usize, j: usize| {
            let (a, b) = (basis.node(i), basis.node(j));
            self.kernel.psi([
                c[0] + h * (a[0] - b[0]),
                c[1] + h * (a[1] - b[1]),
                c[2] + h * (a[2] - b[2]),
            ])
        };
        basis.residual(&normalized, &y)
    }
}

fn build_table(
    fitter: &Fitter,
    opts: &FitOptions,
    level: u32,
    pass: Pass,
    radius: i32,
) -> M2LTable {
    let p = fitter.table.len();
    let stride = padded_stride(p);
    let res = resolution(level);
    let h = 1.0 / res as f64;
    let width = 2.0 * h;
    let side = (2 * radius + 1) as usize;

    let mut offsets = Vec::new();
    for x in -radius..=radius {
        for y in -radius..=radius {
            for z in -radius..=radius {
                let o = [x, y, z];
                if in_stencil(pass, radius, o) {
                    offsets.push(o);
                }
            }
        }
    }
    let negligible = |o: [i32; 3]| {
        let d2: f64 = o
            .iter()
            .map(|&v| ((v.abs() - 1).max(0) as f64 * width).powi(2))
            .sum();
        (-fitter.kernel.alpha * d2).exp() < opts.negligible
    };
    // C_{-o} = C_o^T, so only offsets whose first nonzero component is
    // positive (plus the origin) are fitted
    let canonical = |o: &[i32; 3]| o.iter().find(|v| **v != 0).is_none_or(|v| *v > 0);
    let fit_list: Vec<[i32; 3]> =
        offsets.iter().copied().filter(|o| canonical(o) && !negligible(*o)).collect();
    let fitted = par::map(fit_list.len(), |i| {
        let o = fit_list[i];
        fitter.coefficients([o[0] as f64 * width, o[1] as f64 * width, o[2] as f64 * width], h)
    });

    let mut slots = vec![None; side * side * side];
    let mut data = Vec::new();
    let slot_of = |o: [i32; 3]| {
        (((o[0] + radius) as usize * side) + (o[1] + radius) as usize) * side + (o[2] + radius) as usize
    };
    let mut count = 0u32;
    let mut push = |o: [i32; 3], c: &[f64], transpose: bool, data: &mut Vec<f64>| {
        let base = data.len();
        data.resize(base + p * stride, 0.0);
        for n in 0..p {
            for k in 0..p {
                data[base + n * stride + k] = if transpose { c[k * p + n] } else { c[n * p + k] };
            }
        }
        slots[slot_of(o)] = Some(count);
        count += 1;
    };
    for (o, c) in fit_list.iter().zip(&fitted) {
        push(*o, c, false, &mut data);
        let neg = [-o[0], -o[1], -o[2]];
        if neg != *o {
            push(neg, c, true, &mut data);
        }
    }
    let data32 = data.iter().map(|&v| v as f32).collect();

    // record the node residual at the closest stored offsets
    let probes: Vec<[i32; 3]> = match pass {
        Pass::Near => vec![[0, 0, 0], [1, 0, 0]],
        Pass::Far => vec![[2, 0, 0], [2, 2, 2]],
    };
    let mut fit_residual: f64 = 0.0;
    for o in probes {
        if let Some(i) = fit_list.iter().position(|f| *f == o) {
            let c = [o[0] as f64 * width, o[1] as f64 * width, o[2] as f64 * width];
            fit_residual = fit_residual.max(fitter.residual(c, h, &fitted[i]));
        }
    }

    M2LTable { level, pass, radius, p, stride, half_width: h, slots, data, data32, fit_residual }
}

/// Fits the near and far tables of every level from 2 up to `finest`.
pub fn fit_m2l_tables(
    kernel: &KernelModel,
    table: &MultiIndexTable,
    finest: u32,
    opts: &FitOptions,
) -> Result<M2LTables> {
    if finest < COARSEST_LEVEL {
        return Err(Error::Config(format!("levels must be at least 2, got {finest}")));
    }
    if table.rho() != kernel.rho {
        return Err(Error::Config("kernel and multi-index table disagree on rho".into()));
    }
    let basis = if opts.lsq {
        Some(FitBasis::new(table, opts.nodes_per_axis.unwrap_or(table.rho() + 2))?)
    } else {
        None
    };
    let fitter = Fitter { kernel, table, basis };
    let mut levels = Vec::new();
    for level in COARSEST_LEVEL..=finest {
        let radius = if level == COARSEST_LEVEL { 7 } else { 3 };
        let far = build_table(&fitter, opts, level, Pass::Far, radius);
        let near = (level == finest).then(|| build_table(&fitter, opts, level, Pass::Near, 1));
        levels.push(LevelTables { level, near, far });
    }
    let tables = M2LTables { finest, lsq: opts.lsq, levels };
    if let Some(tol) = opts.admissibility_tol {
        let report = check_admissibility(kernel, table, &tables, 256, 0);
        if let Some((level, error)) = report.worst_level() {
            if error > tol {
                return Err(Error::Inadmissible { level, error, tolerance: tol });
            }
        }
    }
    Ok(tables)
}

#[derive(Debug, Clone)]
pub struct AdmissibilityReport {
    /// `(level, worst absolute probe error)`, kernel peak normalized to 1.
    pub per_level: Vec<(u32, f64)>,
}

impl AdmissibilityReport {
    pub fn worst_level(&self) -> Option<(u32, f64)> {
        self.per_level.iter().copied().fold(None, |acc, (l, e)| match acc {
            Some((_, best)) if best >= e => acc,
            _ => Some((l, e)),
        })
    }
}

/// Probes each level's tables at the closest resolved displacements with
/// random point pairs and reports the worst kernel reproduction error.
pub fn check_admissibility(
    kernel: &KernelModel,
    table: &MultiIndexTable,
    tables: &M2LTables,
    probes: usize,
    seed: u64,
) -> AdmissibilityReport {
    let p = table.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_level = Vec::new();
    let mut ma = vec![0.0; p];
    let mut mb = vec![0.0; p];
    for lt in tables.iter() {
        let h = lt.far.half_width();
        let width = 2.0 * h;
        let mut cases: Vec<(&M2LTable, [i32; 3])> =
            vec![(&lt.far, [2, 0, 0]), (&lt.far, [2, 1, 1]), (&lt.far, [2, 2, 2])];
        if let Some(near) = &lt.near {
            for o in [[0, 0, 0], [1, 0, 0], [1, 1, 0], [1, 1, 1]] {
                cases.push((near, o));
            }
        }
        let mut worst: f64 = 0.0;
        for (t, o) in cases {
            let stride = t.stride();
            let coeffs = t.get(o);
            for _ in 0..probes {
                let a: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-h..h));
                let b: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-h..h));
                let exact = kernel.psi(std::array::from_fn(|i| o[i] as f64 * width + a[i] - b[i]));
                let approx = match coeffs {
                    Some(c) => {
                        table.scaled_monomials(a, &mut ma);
                        table.scaled_monomials(b, &mut mb);
                        let mut s = 0.0;
                        for n in 0..p {
                            let row = &c[n * stride..n * stride + p];
                            s += ma[n] * row.iter().zip(&mb).map(|(x, y)| x * y).sum::<f64>();
                        }
                        s
                    }
                    None => 0.0,
                };
                worst = worst.max((approx - exact).abs());
            }
        }
        per_level.push((lt.level, worst));
    }
    AdmissibilityReport { per_level }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(alpha: f64, rho: usize) -> (KernelModel, MultiIndexTable) {
        (KernelModel::gaussian(alpha, rho).unwrap(), MultiIndexTable::new(rho).unwrap())
    }

    #[test]
    fn hole_is_zero_and_stencils_sized() {
        let (k, t) = setup(200.0, 4);
        let tabs = fit_m2l_tables(&k, &t, 4, &FitOptions::default()).unwrap();
        for lt in tabs.iter() {
            for x in -1..=1 {
                for y in -1..=1 {
                    for z in -1..=1 {
                        assert!(lt.far.get([x, y, z]).is_none());
                        assert!(lt.far.matrix([x, y, z]).iter().all(|v| *v == 0.0));
                    }
                }
            }
            assert!(lt.far.fit_residual().is_finite());
        }
        let l4 = tabs.level(4);
        assert_eq!(l4.near.as_ref().unwrap().stored_offsets(), 27);
        assert_eq!(l4.far.stored_offsets(), 7 * 7 * 7 - 27);
        assert!(tabs.level(3).near.is_none());
        // far-away coarse offsets are negligible at alpha = 200
        assert!(tabs.level(2).far.get([7, 7, 7]).is_none());
        assert!(tabs.level(2).far.get([2, 0, 0]).is_some());
    }

    #[test]
    fn transposed_symmetry() {
        for lsq in [false, true] {
            let (k, t) = setup(50.0, 3);
            let opts = FitOptions { lsq, ..Default::default() };
            let tabs = fit_m2l_tables(&k, &t, 3, &opts).unwrap();
            let far = &tabs.level(3).far;
            let p = t.len();
            for o in [[2, 0, 1], [3, -1, 2], [-2, 2, 2]] {
                let a = far.matrix(o);
                let b = far.matrix([-o[0], -o[1], -o[2]]);
                for n in 0..p {
                    for kk in 0..p {
                        let (x, y) = (a[n * p + kk], b[kk * p + n]);
                        assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0), "lsq={lsq} {o:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn taylor_tables_are_exact_partials() {
        let (k, t) = setup(20.0, 2);
        let opts = FitOptions { lsq: false, ..Default::default() };
        let tabs = fit_m2l_tables(&k, &t, 2, &opts).unwrap();
        let far = &tabs.level(2).far;
        let o = [3, -2, 0];
        let w = 2.0 / 8.0;
        let c = [3.0 * w, -2.0 * w, 0.0];
        let m = far.matrix(o);
        let p = t.len();
        for (i, n) in t.entries().iter().enumerate() {
            for (j, kk) in t.entries().iter().enumerate() {
                let sign = if kk.order() % 2 == 1 { -1.0 } else { 1.0 };
                let expect = sign * k.partial(n.add(kk), c).unwrap();
                assert!((m[i * p + j] - expect).abs() <= 1e-12 * expect.abs().max(1e-300));
            }
        }
    }

    #[test]
    fn lsq_beats_taylor_over_box_pairs() {
        // random source and target points in a far box pair
        let (k, t) = setup(5.0, 4);
        let p = t.len();
        let fit = |lsq| {
            let opts = FitOptions { lsq, ..Default::default() };
            fit_m2l_tables(&k, &t, 2, &opts).unwrap()
        };
        let (taylor, lsq) = (fit(false), fit(true));
        let o = [2, 0, 0];
        let h = taylor.level(2).far.half_width();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<([f64; 3], [f64; 3])> = (0..2000)
            .map(|_| {
                let mut g = || std::array::from_fn(|_| rng.gen_range(-h..h));
                (g(), g())
            })
            .collect();
        let err = |tabs: &M2LTables| {
            let far = &tabs.level(2).far;
            let c = far.get(o).unwrap();
            let stride = far.stride();
            let (mut ma, mut mb) = (vec![0.0; p], vec![0.0; p]);
            let mut worst: f64 = 0.0;
            for (a, b) in &pts {
                t.scaled_monomials(*a, &mut ma);
                t.scaled_monomials(*b, &mut mb);
                let mut approx = 0.0;
                for n in 0..p {
                    for kk in 0..p {
                        approx += ma[n] * c[n * stride + kk] * mb[kk];
                    }
                }
                let x = std::array::from_fn(|i| 4.0 * h * o[i] as f64 / 2.0 + a[i] - b[i]);
                worst = worst.max((approx - k.psi(x)).abs());
            }
            worst
        };
        let (et, el) = (err(&taylor), err(&lsq));
        assert!(el < et, "lsq {el:e} vs taylor {et:e}");
    }

    #[test]
    fn admissibility_failure_names_level() {
        let (k, t) = setup(5000.0, 4);
        let opts = FitOptions { admissibility_tol: Some(1e-3), ..Default::default() };
        match fit_m2l_tables(&k, &t, 3, &opts) {
            Err(Error::Inadmissible { level, error, .. }) => {
                assert!((2..=3).contains(&level));
                assert!(error > 1e-3);
            }
            other => panic!("expected inadmissible, got {other:?}"),
        }
    }

    #[test]
    fn rejects_single_level() {
        let (k, t) = setup(10.0, 2);
        assert!(fit_m2l_tables(&k, &t, 1, &FitOptions::default()).is_err());
    }
}
