//! Slow reference implementations. Nothing here touches the expansion
//! engine; the quadrature and root oracles take plain field closures.

use crate::kernel::KernelModel;
use crate::par;
use crate::expansion::Accessor;
use crate::ray::{traverse, Ray};
use crate::sources::SourceSet;

/// `f_c(q_m) = sum_n psi(q_m - p_n) w_nc`, M x C row-major.
pub fn naive_sum(q: &[[f64; 3]], sources: &SourceSet, kernel: &KernelModel) -> Vec<f64> {
    let c = sources.channels;
    let rows = par::map(q.len(), |m| {
        let mut out = vec![0.0; c];
        for (n, p) in sources.p.iter().enumerate() {
            let v = kernel.psi([q[m][0] - p[0], q[m][1] - p[1], q[m][2] - p[2]]);
            for (o, w) in out.iter_mut().zip(sources.weights(n)) {
                *o += v * w;
            }
        }
        out
    });
    rows.into_iter().flatten().collect()
}

/// Exact gradients of `<ybar, naive_sum>` for the weighted output `ybar`
/// (M x C).
#[derive(Debug, Clone, PartialEq)]
pub struct NaiveGrads {
    pub q_bar: Vec<[f64; 3]>,
    pub p_bar: Vec<[f64; 3]>,
    pub w_bar: Vec<f64>,
}

pub fn naive_grads(q: &[[f64; 3]], sources: &SourceSet, kernel: &KernelModel, ybar: &[f64]) -> NaiveGrads {
    let c = sources.channels;
    let q_bar = par::map(q.len(), |m| {
        let mut g = [0.0; 3];
        for (n, p) in sources.p.iter().enumerate() {
            let d = kernel.gradient([q[m][0] - p[0], q[m][1] - p[1], q[m][2] - p[2]]);
            let s: f64 = (0..c).map(|ch| ybar[m * c + ch] * sources.w[n * c + ch]).sum();
            for a in 0..3 {
                g[a] += s * d[a];
            }
        }
        g
    });
    let per_source = par::map(sources.len(), |n| {
        let p = sources.p[n];
        let mut wb = vec![0.0; c];
        let mut pb = [0.0; 3];
        for (m, qm) in q.iter().enumerate() {
            let x = [qm[0] - p[0], qm[1] - p[1], qm[2] - p[2]];
            let v = kernel.psi(x);
            let d = kernel.gradient(x);
            let s: f64 = (0..c).map(|ch| ybar[m * c + ch] * sources.w[n * c + ch]).sum();
            for ch in 0..c {
                wb[ch] += ybar[m * c + ch] * v;
            }
            for a in 0..3 {
                pb[a] -= s * d[a];
            }
        }
        (wb, pb)
    });
    let mut w_bar = Vec::with_capacity(sources.w.len());
    let mut p_bar = Vec::with_capacity(sources.len());
    for (wb, pb) in per_source {
        w_bar.extend(wb);
        p_bar.push(pb);
    }
    NaiveGrads { q_bar, p_bar, w_bar }
}

/// Midpoint-rule volume rendering with exact `exp`. `field(x)` returns the
/// density and the three color values at `x`. Integrates over `[t0, t1]`.
pub fn quadrature_render(
    field: &dyn Fn([f64; 3]) -> [f64; 4],
    ray: &Ray,
    t0: f64,
    t1: f64,
    n_samples: usize,
    c_bgr: [f64; 3],
) -> ([f64; 3], f64) {
    assert!(n_samples >= 2, "quadrature needs at least two samples");
    let dt = (t1 - t0) / n_samples as f64;
    let mut depth = 0.0;
    let mut rgb = [0.0; 3];
    if dt > 0.0 {
        for i in 0..n_samples {
            let t = t0 + (i as f64 + 0.5) * dt;
            let f = field(ray.at(t));
            let sigma = f[0];
            // transmittance at the sample center
            let trans = (-(depth + 0.5 * sigma * dt)).exp();
            for c in 0..3 {
                rgb[c] += f[c + 1] * sigma * trans * dt;
            }
            depth += sigma * dt;
        }
    }
    let t_inf = (-depth).exp();
    for c in 0..3 {
        rgb[c] += c_bgr[c] * t_inf;
    }
    (rgb, t_inf)
}

/// Line integral of every accessor channel along each ray by composite
/// Simpson quadrature with about `n_total` points per ray, spread over the
/// ray's segments by length. Each segment is evaluated in its own box, so
/// the integrand is smooth on every panel. M x C.
pub fn quadrature_line_integral(acc: &Accessor, rays: &[Ray], n_total: usize) -> Vec<f64> {
    let res = acc.grid().res();
    let c = acc.channels();
    let per_ray = par::map(rays.len(), |i| {
        let ray = &rays[i];
        let segs = traverse(ray, res);
        let total: f64 = segs.iter().map(|s| s.len()).sum();
        let mut out = vec![0.0; c];
        for seg in &segs {
            let center = acc.grid().center(seg.box_index);
            let mut n = ((n_total as f64 * seg.len() / total).ceil() as usize).max(2);
            n += n % 2;
            let h = seg.len() / n as f64;
            for k in 0..=n {
                let x = ray.at(seg.t0 + k as f64 * h);
                let d = std::array::from_fn(|a| x[a] - center[a]);
                let wgt = if k == 0 || k == n { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
                for (ch, o) in out.iter_mut().enumerate() {
                    *o += wgt * h / 3.0 * acc.eval_box(seg.flat, ch, d);
                }
            }
        }
        out
    });
    per_ray.concat()
}

/// First sign change of `field` along `ray` over `[t0, t1]`, scanned with
/// `step` and refined by bisection to `tol`.
pub fn bisect_root(
    field: &dyn Fn(f64) -> f64,
    t0: f64,
    t1: f64,
    step: f64,
    tol: f64,
) -> Option<f64> {
    assert!(step > 0.0, "scan step must be positive");
    let mut a = t0;
    let mut fa = field(a);
    if fa == 0.0 {
        return Some(a);
    }
    while a < t1 {
        let b = (a + step).min(t1);
        let fb = field(b);
        if fb == 0.0 {
            return Some(b);
        }
        if (fa < 0.0) != (fb < 0.0) {
            let (mut lo, mut hi, mut flo) = (a, b, fa);
            while hi - lo > tol {
                let mid = 0.5 * (lo + hi);
                let fm = field(mid);
                if (fm < 0.0) == (flo < 0.0) {
                    lo = mid;
                    flo = fm;
                } else {
                    hi = mid;
                }
            }
            return Some(0.5 * (lo + hi));
        }
        a = b;
        fa = fb;
    }
    None
}

/// Max and mean relative error of a comparison, with its verdict.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub name: String,
    pub max_error: f64,
    pub mean_error: f64,
    pub samples: usize,
    pub tolerance: f64,
    pub pass: bool,
}

impl OracleReport {
    pub fn new(name: impl Into<String>, errors: &[f64], tolerance: f64) -> Self {
        let max_error = errors.iter().copied().fold(0.0, f64::max);
        let mean_error = if errors.is_empty() { 0.0 } else { errors.iter().sum::<f64>() / errors.len() as f64 };
        let pass = errors.iter().all(|e| e.is_finite()) && max_error <= tolerance;
        Self { name: name.into(), max_error, mean_error, samples: errors.len(), tolerance, pass }
    }

    /// `name<TAB>max_err<TAB>tol<TAB>pass`
    pub fn line(&self) -> String {
        format!(
            "{}\t{:.3e}\t{:.1e}\t{}",
            self.name,
            self.max_error,
            self.tolerance,
            if self.pass { "pass" } else { "FAIL" }
        )
    }
}
