//! Root-implicit layers on `f(x) = sum_n psi(x - p_n) w_n + bias`: the ray
//! length to the first zero crossing and the field gradient there.

use super::LayerGradients;
use crate::error::{Error, Result};
use crate::expansion::{Accessor, Engine};
use crate::ray::{dot, line2poly, Ray, Segment};
use crate::sources::SourceSet;

/// Roots this close to a segment's ends still count as inside it.
pub const ROOT_EPS: f64 = 1e-10;
/// Relative size of `<r, grad f>` below which the implicit function theorem
/// is treated as violated.
pub const IFT_THRESHOLD: f64 = 1e-8;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RootHit {
    pub hit: bool,
    /// Ray parameter of the root; 0 on a miss.
    pub length: f64,
    pub point: [f64; 3],
    /// `grad f` at the root; zero on a miss.
    pub grad: [f64; 3],
    /// Second partials xx, yy, zz, xy, xz, yz at the root.
    pub hessian: [f64; 6],
    /// `<r, grad f>`.
    pub denom: f64,
    /// Finest box whose expansion produced the root.
    pub box_index: usize,
}

impl RootHit {
    /// `H r` at the root.
    pub fn hessian_dot(&self, r: [f64; 3]) -> [f64; 3] {
        let h = &self.hessian;
        [
            h[0] * r[0] + h[3] * r[1] + h[4] * r[2],
            h[3] * r[0] + h[1] * r[1] + h[5] * r[2],
            h[4] * r[0] + h[5] * r[1] + h[2] * r[2],
        ]
    }

    fn is_degenerate(&self) -> bool {
        let g = self.grad;
        let norm = dot(g, g).sqrt();
        !(self.denom.abs() >= IFT_THRESHOLD * norm) || self.denom == 0.0
    }
}

#[derive(Debug)]
pub struct RootForward {
    pub hits: Vec<RootHit>,
    pub rays: Vec<Ray>,
    pub bias: f64,
    pub accessor: Accessor,
}

impl RootForward {
    /// Ray lengths, 0 for misses.
    pub fn lengths(&self) -> Vec<f64> {
        self.hits.iter().map(|h| h.length).collect()
    }

    /// Surface gradients, zero for misses.
    pub fn gradients(&self) -> Vec<[f64; 3]> {
        self.hits.iter().map(|h| h.grad).collect()
    }

    pub fn hit_mask(&self) -> Vec<bool> {
        self.hits.iter().map(|h| h.hit).collect()
    }
}

fn first_root(acc: &Accessor, ray: &Ray, segs: &[Segment], bias: f64, res: usize) -> RootHit {
    let Some(first) = segs.first() else {
        return RootHit::default();
    };
    for (k, seg) in segs.iter().enumerate() {
        let d = seg.entry_offset(ray, res);
        let poly = line2poly(acc.table(), acc.local(seg.flat, 0), d, ray.dir).add_constant(bias);
        if k == 0 && !(poly.eval(0.0) > 0.0) {
            // dead pixel: the ray starts inside the solid
            return RootHit::default();
        }
        if poly.coeffs().iter().all(|c| *c == 0.0) {
            continue;
        }
        let s = seg.len();
        let Ok(roots) = poly.real_roots() else { continue };
        let Some(u) = roots.into_iter().find(|u| *u >= -ROOT_EPS && *u <= s + ROOT_EPS) else {
            continue;
        };
        let u = u.clamp(0.0, s);
        let local = std::array::from_fn(|a| d[a] + u * ray.dir[a]);
        let grad = acc.gradient_box(seg.flat, 0, local);
        let hessian = acc.hessian_box(seg.flat, 0, local);
        let length = seg.t0 + u;
        let _ = first;
        return RootHit {
            hit: true,
            length,
            point: ray.at(length),
            grad,
            hessian,
            denom: dot(ray.dir, grad),
            box_index: seg.flat,
        };
    }
    RootHit::default()
}

/// Finds the first root along every ray. Single-channel sources only.
pub fn forward(engine: &Engine, sources: &SourceSet, bias: f64, rays: &[Ray]) -> Result<RootForward> {
    if sources.channels != 1 {
        return Err(Error::Input(format!("root layers need one channel, got {}", sources.channels)));
    }
    let segments = super::traverse_all(engine, rays);
    let accessor = super::expand_along(engine, sources, &segments)?;
    let res = engine.finest_res();
    let hits = crate::par::map(rays.len(), |i| first_root(&accessor, &rays[i], &segments[i], bias, res));
    Ok(RootForward { hits, rays: rays.to_vec(), bias, accessor })
}

/// Adjoint point sources of a root layer: hit points, monopole weights,
/// dipoles (when `dipole` returns them) and the number of degenerate rays.
pub struct RootAdjoint {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    pub dipoles: Vec<f64>,
    pub degenerate: usize,
}

impl RootAdjoint {
    fn build(fwd: &RootForward, weight: impl Fn(usize, &RootHit) -> ([f64; 3], f64)) -> Self {
        let mut out = Self { points: Vec::new(), weights: Vec::new(), dipoles: Vec::new(), degenerate: 0 };
        for (i, h) in fwd.hits.iter().enumerate() {
            if !h.hit {
                continue;
            }
            if h.is_degenerate() {
                out.degenerate += 1;
                continue;
            }
            let (dip, mono) = weight(i, h);
            out.points.push(h.point);
            out.weights.push(mono);
            out.dipoles.extend_from_slice(&dip);
        }
        out
    }

    /// Projected depth cotangents `-ybar / <r, grad f>`.
    pub fn depth(fwd: &RootForward, ybar: &[f64]) -> Result<Self> {
        if ybar.len() != fwd.hits.len() {
            return Err(Error::Contract("ybar must have one entry per ray".into()));
        }
        Ok(Self::build(fwd, |i, h| ([0.0; 3], -ybar[i] / h.denom)))
    }

    /// Monopole `-<ybar, H r> / <r, grad f>` plus a dipole with moment `ybar`.
    pub fn surface_gradient(fwd: &RootForward, ybar: &[[f64; 3]]) -> Result<Self> {
        if ybar.len() != fwd.hits.len() {
            return Err(Error::Contract("ybar must have one entry per ray".into()));
        }
        Ok(Self::build(fwd, |i, h| {
            let hr = h.hessian_dot(fwd.rays[i].dir);
            (ybar[i], -dot(ybar[i], hr) / h.denom)
        }))
    }

    /// Appends explicit point cotangents of the field, e.g. penalties on
    /// `f` at given locations.
    pub fn push_point(&mut self, q: [f64; 3], weight: f64) {
        self.points.push(q);
        self.weights.push(weight);
        self.dipoles.extend_from_slice(&[0.0; 3]);
    }

    /// Runs the single backward expansion.
    pub fn gradients(&self, engine: &Engine, sources: &SourceSet) -> Result<LayerGradients> {
        let with_dipoles = self.dipoles.iter().any(|v| *v != 0.0);
        let mut g = super::point_gradients(
            engine,
            sources,
            &sources.w,
            &self.points,
            &self.weights,
            with_dipoles.then_some(self.dipoles.as_slice()),
        )?;
        g.bias_bar = self.weights.iter().sum();
        g.degenerate = self.degenerate;
        Ok(g)
    }
}

/// Gradients of `<ybar, lengths>` through the implicit function theorem.
pub fn depth_jvp(engine: &Engine, sources: &SourceSet, fwd: &RootForward, ybar: &[f64]) -> Result<LayerGradients> {
    RootAdjoint::depth(fwd, ybar)?.gradients(engine, sources)
}

/// Gradients of `<ybar, gradients>`. The root moves with the parameters,
/// which adds a monopole; the direct part is a dipole. Both go into one
/// expansion.
pub fn surface_gradient_jvp(
    engine: &Engine,
    sources: &SourceSet,
    fwd: &RootForward,
    ybar: &[[f64; 3]],
) -> Result<LayerGradients> {
    RootAdjoint::surface_gradient(fwd, ybar)?.gradients(engine, sources)
}

#[cfg(test)]
mod tests {
    use super::super::testutil::*;
    use super::*;
    use crate::oracle::{bisect_root, naive_sum};

    fn blob_scene() -> SourceSet {
        SourceSet::new(vec![[0.01, -0.02, 0.015]], vec![-1.0], 1).unwrap()
    }

    /// A few negative blobs near the origin, so rays see a lumpy surface.
    fn lumpy_scene() -> SourceSet {
        let mut s = random_sources(21, 12, 1, 0.12);
        s.w.iter_mut().for_each(|w| *w = -0.3 - 0.2 * w.abs());
        s
    }

    #[test]
    fn empty_field_misses_everywhere() {
        let e = engine(3, 60.0);
        let s = SourceSet::new(vec![[0.0; 3]], vec![0.0], 1).unwrap();
        let f = forward(&e, &s, 0.05, &random_rays(1, 50, 0.3)).unwrap();
        assert!(f.hits.iter().all(|h| !h.hit && h.length == 0.0 && h.grad == [0.0; 3]));
    }

    #[test]
    fn blob_root_matches_bisection_and_reevaluates() {
        let e = engine(4, 200.0);
        let s = blob_scene();
        let rays = random_rays(2, 40, 0.05);
        let f = forward(&e, &s, 0.05, &rays).unwrap();
        let mut hits = 0;
        for (ray, h) in rays.iter().zip(&f.hits) {
            let field = |t: f64| naive_sum(&[ray.at(t)], &s, e.kernel())[0] + 0.05;
            let (t0, t1) = ray.clip().unwrap();
            let oracle = bisect_root(&field, t0, t1, 1e-3, 1e-13);
            match oracle {
                Some(t) => {
                    assert!(h.hit);
                    hits += 1;
                    assert!((h.length - t).abs() < 1e-3, "{} vs {t}", h.length);
                    // re-evaluation in the box that produced the root
                    let (_, d) = f.accessor.locate(h.point).unwrap();
                    let res = e.finest_res() as f64;
                    let c = f.accessor.grid().center(f.accessor.grid().unflat(h.box_index));
                    let local = std::array::from_fn(|a| h.point[a] - c[a]);
                    let v = f.accessor.eval_box(h.box_index, 0, local) + 0.05;
                    assert!(v.abs() < 1e-6, "residual {v}");
                    let _ = (d, res);
                    // radial gradient
                    let radial: [f64; 3] = std::array::from_fn(|a| h.point[a] - s.p[0][a]);
                    let cos = dot(radial, h.grad) / (dot(radial, radial) * dot(h.grad, h.grad)).sqrt();
                    assert!(cos > 1.0 - 1e-3, "cos {cos}");
                }
                None => assert!(!h.hit),
            }
        }
        assert!(hits > 30);
    }

    #[test]
    fn gradient_matches_accessor_fd_and_rescaling_invariance() {
        let e = engine(4, 200.0);
        let s = lumpy_scene();
        let rays = random_rays(3, 40, 0.1);
        let f = forward(&e, &s, 0.05, &rays).unwrap();
        for h in f.hits.iter().filter(|h| h.hit) {
            let c = f.accessor.grid().center(f.accessor.grid().unflat(h.box_index));
            let eps = 1e-5;
            for a in 0..3 {
                let mut lp: [f64; 3] = std::array::from_fn(|i| h.point[i] - c[i]);
                let mut lm = lp;
                lp[a] += eps;
                lm[a] -= eps;
                let fd = (f.accessor.eval_box(h.box_index, 0, lp) - f.accessor.eval_box(h.box_index, 0, lm)) / (2.0 * eps);
                let norm = dot(h.grad, h.grad).sqrt();
                assert!((fd - h.grad[a]).abs() < 1e-3 * norm);
            }
        }
        let scaled = s.with_weights(s.w.iter().map(|w| 2.5 * w).collect()).unwrap();
        let g = forward(&e, &scaled, 2.5 * 0.05, &rays).unwrap();
        assert_eq!(f.hit_mask(), g.hit_mask());
        for (a, b) in f.hits.iter().zip(&g.hits) {
            assert!((a.length - b.length).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_cotangent_gives_zero() {
        let e = engine(3, 60.0);
        let s = lumpy_scene();
        let rays = random_rays(4, 20, 0.1);
        let f = forward(&e, &s, 0.05, &rays).unwrap();
        let g = depth_jvp(&e, &s, &f, &[0.0; 20]).unwrap();
        assert!(g.w_bar.iter().all(|v| *v == 0.0) && g.bias_bar == 0.0);
        let g = surface_gradient_jvp(&e, &s, &f, &vec![[0.0; 3]; 20]).unwrap();
        assert!(g.w_bar.iter().all(|v| *v == 0.0) && g.p_bar.iter().flatten().all(|v| *v == 0.0));
    }

    /// Directional derivative checks on the layer's own forward.
    fn check_adjoint<F>(out: F, jvp: &dyn Fn(&RootForward) -> LayerGradients, tol: f64)
    where
        F: Fn(&SourceSet, f64) -> f64,
    {
        let e = engine(4, 200.0);
        let s = lumpy_scene();
        let rays = random_rays(5, 60, 0.1);
        let fwd = forward(&e, &s, 0.05, &rays).unwrap();
        let g = jvp(&fwd);
        let eps = 1e-6;
        for k in 0..4 {
            let v = random_vec(40 + k, s.len());
            let fd = (out(&shift_weights(&s, &v, eps), 0.05) - out(&shift_weights(&s, &v, -eps), 0.05)) / (2.0 * eps);
            let an = sdot(&g.w_bar, &v);
            assert!((fd - an).abs() <= tol * an.abs().max(1e-3), "w: {fd} vs {an}");
            let v = random_vec(50 + k, 3 * s.len());
            let fd = (out(&shift_points(&s, &v, eps), 0.05) - out(&shift_points(&s, &v, -eps), 0.05)) / (2.0 * eps);
            let an = sdot(&flatten(&g.p_bar), &v);
            assert!((fd - an).abs() <= tol * an.abs().max(1e-3), "p: {fd} vs {an}");
        }
        let fd = (out(&s, 0.05 + eps) - out(&s, 0.05 - eps)) / (2.0 * eps);
        assert!((fd - g.bias_bar).abs() <= tol * g.bias_bar.abs().max(1e-3), "bias: {fd} vs {}", g.bias_bar);
    }

    #[test]
    fn depth_adjoint() {
        let e = engine(4, 200.0);
        let rays = random_rays(5, 60, 0.1);
        let ybar = random_vec(6, 60);
        let out = |s: &SourceSet, b: f64| sdot(&forward(&e, s, b, &rays).unwrap().lengths(), &ybar);
        check_adjoint(out, &|f| depth_jvp(&e, &lumpy_scene(), f, &ybar).unwrap(), 1e-2);
    }

    #[test]
    fn surface_gradient_adjoint() {
        let e = engine(4, 200.0);
        let rays = random_rays(5, 60, 0.1);
        let yv = random_vec(7, 180);
        let ybar: Vec<[f64; 3]> = yv.chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
        let out = |s: &SourceSet, b: f64| sdot(&flatten(&forward(&e, s, b, &rays).unwrap().gradients()), &yv);
        check_adjoint(out, &|f| surface_gradient_jvp(&e, &lumpy_scene(), f, &ybar).unwrap(), 2e-2);
    }
}
