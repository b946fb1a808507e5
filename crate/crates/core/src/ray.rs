//! Pinhole cameras, voxel traversal, and conversions between box Taylor
//! expansions and univariate polynomials along rays.

use crate::error::{Error, Result};
use crate::multiindex::{MultiIndexTable, MAX_RHO};
use crate::poly1d::Poly1D;
use serde::{Deserialize, Serialize};

/// Segments shorter than this are dropped.
pub const MIN_SEGMENT: f64 = 1e-12;

fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn normalize(v: [f64; 3]) -> Option<[f64; 3]> {
    let n = norm(v);
    (n > 0.0 && n.is_finite()).then(|| [v[0] / n, v[1] / n, v[2] / n])
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// A ray `o + t r` with unit `r`, so `t` is arc length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: [f64; 3],
    pub dir: [f64; 3],
}

impl Ray {
    pub fn new(origin: [f64; 3], dir: [f64; 3]) -> Result<Self> {
        let dir = normalize(dir).ok_or_else(|| Error::Input("ray direction must be nonzero".into()))?;
        Ok(Self { origin, dir })
    }

    #[inline]
    pub fn at(&self, t: f64) -> [f64; 3] {
        [
            self.origin[0] + t * self.dir[0],
            self.origin[1] + t * self.dir[1],
            self.origin[2] + t * self.dir[2],
        ]
    }

    /// Parameter interval inside the closed cube `[-1, 1]^3`, with `t >= 0`.
    pub fn clip(&self) -> Option<(f64, f64)> {
        let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
        for a in 0..3 {
            let (o, d) = (self.origin[a], self.dir[a]);
            if d == 0.0 {
                if !(-1.0..=1.0).contains(&o) {
                    return None;
                }
            } else {
                let (t1, t2) = ((-1.0 - o) / d, (1.0 - o) / d);
                lo = lo.max(t1.min(t2));
                hi = hi.min(t1.max(t2));
            }
        }
        (hi - lo > MIN_SEGMENT).then_some((lo, hi))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub eye: [f64; 3],
    pub gaze: [f64; 3],
    pub up: [f64; 3],
    /// Vertical field of view in radians.
    pub fov_y: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    /// Normalizes `gaze` and `up` and checks the remaining invariants.
    pub fn new(eye: [f64; 3], gaze: [f64; 3], up: [f64; 3], fov_y: f64, width: usize, height: usize) -> Result<Self> {
        let gaze = normalize(gaze).ok_or_else(|| Error::Input("camera gaze must be nonzero".into()))?;
        let up = normalize(up).ok_or_else(|| Error::Input("camera up must be nonzero".into()))?;
        if norm(cross(gaze, up)) < 1e-9 {
            return Err(Error::Input("camera gaze and up are parallel".into()));
        }
        if !(fov_y > 0.0 && fov_y < std::f64::consts::PI) {
            return Err(Error::Input(format!("field of view {fov_y} outside (0, pi)")));
        }
        if width == 0 || height == 0 {
            return Err(Error::Input("image size must be positive".into()));
        }
        Ok(Self { eye, gaze, up, fov_y, width, height })
    }

    /// Camera at `eye` looking at `target`.
    pub fn look_at(eye: [f64; 3], target: [f64; 3], up: [f64; 3], fov_y: f64, width: usize, height: usize) -> Result<Self> {
        let gaze = [target[0] - eye[0], target[1] - eye[1], target[2] - eye[2]];
        Self::new(eye, gaze, up, fov_y, width, height)
    }

    /// Right, true-up and gaze vectors.
    pub fn basis(&self) -> [[f64; 3]; 3] {
        let right = normalize(cross(self.gaze, self.up)).expect("validated camera");
        let up = cross(right, self.gaze);
        [right, up, self.gaze]
    }

    /// One ray per pixel center, row-major from the top-left pixel.
    pub fn rays(&self) -> Vec<Ray> {
        let [right, up, gaze] = self.basis();
        let tan = (0.5 * self.fov_y).tan();
        let aspect = self.width as f64 / self.height as f64;
        let mut out = Vec::with_capacity(self.width * self.height);
        for i in 0..self.height {
            let y = (1.0 - 2.0 * (i as f64 + 0.5) / self.height as f64) * tan;
            for j in 0..self.width {
                let x = (2.0 * (j as f64 + 0.5) / self.width as f64 - 1.0) * tan * aspect;
                let d = std::array::from_fn(|a| gaze[a] + x * right[a] + y * up[a]);
                out.push(Ray::new(self.eye, d).expect("nonzero direction"));
            }
        }
        out
    }
}

/// Piece of a ray inside one finest box, `t0 < t1` in ray parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub box_index: [usize; 3],
    pub flat: usize,
    pub t0: f64,
    pub t1: f64,
}

impl Segment {
    pub fn len(&self) -> f64 {
        self.t1 - self.t0
    }

    /// Entry point relative to the box center.
    pub fn entry_offset(&self, ray: &Ray, res: usize) -> [f64; 3] {
        let w = 2.0 / res as f64;
        let p = ray.at(self.t0);
        std::array::from_fn(|a| p[a] - (-1.0 + (self.box_index[a] as f64 + 0.5) * w))
    }
}

/// Incremental voxel walk over a `res^3` grid on `[-1, 1]^3`. Box faces are
/// recomputed from integer indices each step, so no drift accumulates.
pub fn traverse(ray: &Ray, res: usize) -> Vec<Segment> {
    let Some((t_in, t_out)) = ray.clip() else {
        return Vec::new();
    };
    let w = 2.0 / res as f64;
    let probe = ray.at(t_in + 1e-9 * (t_out - t_in).min(1.0));
    let mut idx: [i64; 3] = crate::expansion::box_index(res, probe).map(|v| v as i64);
    let mut out = Vec::new();
    let mut t = t_in;
    let r = res as i64;
    loop {
        let mut t_next = [f64::INFINITY; 3];
        for a in 0..3 {
            let d = ray.dir[a];
            if d != 0.0 {
                let face = -1.0 + (idx[a] + i64::from(d > 0.0)) as f64 * w;
                t_next[a] = (face - ray.origin[a]) / d;
            }
        }
        let t_min = t_next.iter().copied().fold(f64::INFINITY, f64::min);
        let t_end = t_min.min(t_out);
        if t_end - t > MIN_SEGMENT {
            let bi = idx.map(|v| v as usize);
            out.push(Segment { box_index: bi, flat: ((bi[0] * res) + bi[1]) * res + bi[2], t0: t, t1: t_end });
        }
        if t_min >= t_out {
            break;
        }
        for a in 0..3 {
            if t_next[a] == t_min {
                idx[a] += if ray.dir[a] > 0.0 { 1 } else { -1 };
            }
        }
        if idx.iter().any(|v| *v < 0 || *v >= r) {
            break;
        }
        t = t.max(t_end);
    }
    out
}

/// Per-axis coefficients of `(d + t r)^m / m!` as polynomials in `t`:
/// `a[axis][m][j] = d^(m-j) / (m-j)! * r^j / j!`.
fn axis_polys(d: [f64; 3], r: [f64; 3], rho: usize) -> [[[f64; MAX_RHO + 1]; MAX_RHO + 1]; 3] {
    let mut out = [[[0.0; MAX_RHO + 1]; MAX_RHO + 1]; 3];
    for a in 0..3 {
        let mut dp = [1.0; MAX_RHO + 1];
        let mut rp = [1.0; MAX_RHO + 1];
        for k in 1..=rho {
            dp[k] = dp[k - 1] * d[a] / k as f64;
            rp[k] = rp[k - 1] * r[a] / k as f64;
        }
        for m in 0..=rho {
            for j in 0..=m {
                out[a][m][j] = dp[m - j] * rp[j];
            }
        }
    }
    out
}

/// Multiplies two small polynomials, `out[..=da+db]`.
#[inline]
fn mul_small(a: &[f64], b: &[f64], out: &mut [f64]) {
    out[..a.len() + b.len() - 1].iter_mut().for_each(|v| *v = 0.0);
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
}

/// Restriction of a box's Taylor polynomial `sum_n L(n) x^n / n!` to the line
/// `x = d + t r`, as a polynomial of degree `rho` in `t`. Exact.
pub fn line2poly(table: &MultiIndexTable, coeffs: &[f64], d: [f64; 3], r: [f64; 3]) -> Poly1D {
    let rho = table.rho();
    let a = axis_polys(d, r, rho);
    let mut out = [0.0; MAX_RHO + 1];
    let mut s3 = [0.0; MAX_RHO + 1];
    let mut s2 = [0.0; MAX_RHO + 1];
    let mut tmp = [0.0; 2 * MAX_RHO + 1];
    for n1 in 0..=rho {
        s2.iter_mut().for_each(|v| *v = 0.0);
        for n2 in 0..=(rho - n1) {
            // s3 = sum_{n3} L(n1, n2, n3) A_z[n3]
            let top = rho - n1 - n2;
            s3.iter_mut().for_each(|v| *v = 0.0);
            for n3 in 0..=top {
                let l = coeffs[table.try_index_of((n1, n2, n3).into()).unwrap()];
                for j in 0..=n3 {
                    s3[j] += l * a[2][n3][j];
                }
            }
            mul_small(&a[1][n2][..=n2], &s3[..=top], &mut tmp);
            for j in 0..=(n2 + top) {
                s2[j] += tmp[j];
            }
        }
        mul_small(&a[0][n1][..=n1], &s2[..=(rho - n1)], &mut tmp);
        for j in 0..=rho {
            out[j] += tmp[j];
        }
    }
    Poly1D::new(&out[..=rho]).expect("degree within cap")
}

/// FLOPs spent by [`line2poly`], counting each multiply and add once.
pub fn line2poly_flops(rho: usize) -> usize {
    let mut f = 0;
    // per-axis scaled powers of d and r, then the products forming A
    f += 3 * 2 * 2 * rho;
    f += 3 * (0..=rho).map(|m| m + 1).sum::<usize>();
    for n1 in 0..=rho {
        for n2 in 0..=(rho - n1) {
            let top = rho - n1 - n2;
            f += (0..=top).map(|n3| 2 * (n3 + 1)).sum::<usize>();
            f += 2 * (n2 + 1) * (top + 1) + (n2 + top + 1);
        }
        f += 2 * (n1 + 1) * (rho - n1 + 1) + (rho + 1);
    }
    f
}

/// `S_t = int_0^s x^t h(x) dx` for `t = 0..=rho`.
fn weighted_moments(s: f64, h: &Poly1D, rho: usize) -> [f64; MAX_RHO + 1] {
    let mut out = [0.0; MAX_RHO + 1];
    let hc = h.coeffs();
    for (t, o) in out.iter_mut().enumerate().take(rho + 1) {
        // sum_m h_m s^(t+m+1) / (t+m+1), by Horner in s
        let mut acc = 0.0;
        for (m, c) in hc.iter().enumerate().rev() {
            acc = acc * s + c / (t + m + 1) as f64;
        }
        *o = acc * s.powi(t as i32 + 1);
    }
    out
}

/// Moments of a weighted segment: entry `n` is
/// `int_0^s prod_i (x r_i + d_i)^(n_i) h(x) dx / n!`.
pub fn line2taylor_h(table: &MultiIndexTable, d: [f64; 3], r: [f64; 3], s: f64, h: &Poly1D) -> Vec<f64> {
    let mut out = vec![0.0; table.len()];
    line2taylor_h_into(table, d, r, s, h, 1.0, &mut out);
    out
}

/// `out += scale * line2taylor_h(...)`.
pub fn line2taylor_h_into(
    table: &MultiIndexTable,
    d: [f64; 3],
    r: [f64; 3],
    s: f64,
    h: &Poly1D,
    scale: f64,
    out: &mut [f64],
) {
    let rho = table.rho();
    let a = axis_polys(d, r, rho);
    let st = weighted_moments(s, h, rho);
    let mut xy = [0.0; 2 * MAX_RHO + 1];
    for n1 in 0..=rho {
        for n2 in 0..=(rho - n1) {
            mul_small(&a[0][n1][..=n1], &a[1][n2][..=n2], &mut xy);
            for n3 in 0..=(rho - n1 - n2) {
                let mut v = 0.0;
                for (i, x) in xy[..=(n1 + n2)].iter().enumerate() {
                    for (j, z) in a[2][n3][..=n3].iter().enumerate() {
                        v += x * z * st[i + j];
                    }
                }
                let idx = table.try_index_of((n1, n2, n3).into()).unwrap();
                out[idx] += scale * v;
            }
        }
    }
}

/// Moments of an unweighted segment, `h = 1`.
pub fn line2taylor(table: &MultiIndexTable, d: [f64; 3], r: [f64; 3], s: f64) -> Vec<f64> {
    line2taylor_h(table, d, r, s, &Poly1D::constant(1.0))
}
