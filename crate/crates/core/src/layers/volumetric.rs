//! Emission-absorption volume rendering of a four-channel field
//! (density, red, green, blue) with polynomial transmittance.
//!
//! Per segment the density and colors are the exact restrictions of the box
//! polynomials. The optical depth `Sig(u) = D + int_0^u sigma` is a degree-5
//! polynomial and the transmittance `T = mexp(Sig)` a degree-20 one, so every
//! integral is evaluated in closed form.

use super::LayerGradients;
use crate::error::{Error, Result};
use crate::expansion::{Accessor, Engine};
use crate::poly1d::{mexp_poly, Poly1D, MEXP_RANGE};
use crate::ray::{line2poly, line2taylor_h_into, traverse, Ray};
use crate::sources::SourceSet;
use serde::{Deserialize, Serialize};

/// Optical depth after which a ray stops accumulating.
pub const EARLY_EXIT: f64 = 4.5;
/// Density, red, green, blue.
pub const CHANNELS: usize = 4;

/// How the backward pass differentiates the transmittance polynomial.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransmittanceGradient {
    /// Differentiates the fitted polynomial; exact for the forward pass.
    #[default]
    Polynomial,
    /// Uses `exp' = -exp`, the derivative of the function being fitted.
    ExpIdentity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderOptions {
    pub background: [f64; 3],
    /// Optical depth after which a ray stops; `None` stops only where the
    /// transmittance fit ends.
    pub early_exit: Option<f64>,
    pub gradient: TransmittanceGradient,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self { background: [0.0; 3], early_exit: Some(EARLY_EXIT), gradient: TransmittanceGradient::Polynomial }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RayRender {
    pub rgb: [f64; 3],
    /// Transmittance left after the last integrated segment.
    pub t_inf: f64,
    /// Optical depth at the last integrated segment's end.
    pub depth: f64,
    /// Number of segments integrated.
    pub segments: usize,
    /// The optical depth reached the end of the transmittance fit inside a
    /// segment; integration stopped there and `t_inf` is 0.
    pub opaque: bool,
}

#[derive(Debug)]
pub struct VolumeForward {
    pub rays: Vec<RayRender>,
    pub accessor: Accessor,
}

impl VolumeForward {
    /// M x 3.
    pub fn rgb(&self) -> Vec<f64> {
        self.rays.iter().flat_map(|r| r.rgb).collect()
    }
}

/// Density weights seen by the kernel sum: `relu` on channel 0.
pub fn effective_weights(sources: &SourceSet) -> Vec<f64> {
    sources
        .w
        .iter()
        .enumerate()
        .map(|(i, w)| if i % CHANNELS == 0 { w.max(0.0) } else { *w })
        .collect()
}

/// Clamped transmittance beyond the last segment and its derivative in `D`.
fn tail(depth: f64) -> (f64, f64) {
    if depth > MEXP_RANGE {
        return (0.0, 0.0);
    }
    let m = mexp_poly();
    let v = m.eval(depth);
    if v < 0.0 {
        (0.0, 0.0)
    } else if v > 1.0 {
        (1.0, 0.0)
    } else {
        (v, m.derivative().eval(depth))
    }
}

/// Polynomials of one segment.
struct SegmentPolys {
    box_index: usize,
    d: [f64; 3],
    /// Integration length; shorter than the segment on an opaque cut.
    s: f64,
    sigma: Poly1D,
    color: [Poly1D; 3],
    /// Optical depth from the ray entry.
    sig: Poly1D,
    trans: Poly1D,
}

/// First `u` in `[0, s]` with `sig(u) = level`, given `sig(0) <= level < sig(s)`.
fn crossing(sig: &Poly1D, level: f64, s: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, s);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if sig.eval(mid) > level {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Walks a ray, calling `visit` on every integrated segment; returns the
/// final optical depth and whether the ray went opaque.
fn walk(
    acc: &Accessor,
    ray: &Ray,
    early_exit: Option<f64>,
    mut visit: impl FnMut(SegmentPolys) -> Result<()>,
) -> Result<(f64, bool)> {
    let res = acc.grid().res();
    let table = acc.table();
    let m = mexp_poly();
    let mut depth = 0.0;
    for seg in traverse(ray, res) {
        let d = seg.entry_offset(ray, res);
        let poly = |c| line2poly(table, acc.local(seg.flat, c), d, ray.dir);
        let sigma = poly(0);
        let sig = sigma.integrate()?.add_constant(depth);
        let trans = m.compose(&sig)?;
        let mut s = seg.len();
        let mut next = sig.eval(s);
        // transmittance is zero past the fitted range: stop exactly there
        let opaque = next > MEXP_RANGE;
        if opaque {
            s = crossing(&sig, MEXP_RANGE, s);
            next = MEXP_RANGE;
        }
        visit(SegmentPolys { box_index: seg.flat, d, s, sigma, color: [poly(1), poly(2), poly(3)], sig, trans })?;
        depth = next;
        if opaque {
            return Ok((depth, true));
        }
        if early_exit.is_some_and(|e| depth > e) {
            break;
        }
    }
    Ok((depth, false))
}

fn render_ray(acc: &Accessor, ray: &Ray, opts: &RenderOptions) -> Result<RayRender> {
    let mut rgb = [0.0; 3];
    let mut segments = 0;
    let (depth, opaque) = walk(acc, ray, opts.early_exit, |sp| {
        let st = sp.sigma.mul(&sp.trans)?;
        for (o, c) in rgb.iter_mut().zip(&sp.color) {
            *o += c.mul(&st)?.integral_to(sp.s);
        }
        segments += 1;
        Ok(())
    })?;
    let t_inf = if opaque { 0.0 } else { tail(depth).0 };
    for (o, b) in rgb.iter_mut().zip(&opts.background) {
        *o += b * t_inf;
    }
    Ok(RayRender { rgb, t_inf, depth, segments, opaque })
}

/// Renders rays through a given four-channel local expansion.
pub fn render_with(accessor: &Accessor, rays: &[Ray], opts: &RenderOptions) -> Result<Vec<RayRender>> {
    if accessor.channels() != CHANNELS {
        return Err(Error::Input(format!("volume rendering needs 4 channels, got {}", accessor.channels())));
    }
    crate::par::map(rays.len(), |i| render_ray(accessor, &rays[i], opts)).into_iter().collect()
}

pub fn forward(engine: &Engine, sources: &SourceSet, rays: &[Ray], opts: &RenderOptions) -> Result<VolumeForward> {
    if sources.channels != CHANNELS {
        return Err(Error::Input(format!("volume rendering needs 4 channels, got {}", sources.channels)));
    }
    let eff = sources.with_weights(effective_weights(sources))?;
    let segments = super::traverse_all(engine, rays);
    let accessor = super::expand_along(engine, &eff, &segments)?;
    let rays_out = render_with(&accessor, rays, opts)?;
    Ok(VolumeForward { rays: rays_out, accessor })
}

/// Backward moments of one ray: color channels get `ybar_c sigma T`, the
/// density channel the full sensitivity including the effect of the
/// optical depth on everything behind it and on the background.
fn ray_moments(
    acc: &Accessor,
    ray: &Ray,
    fwd: &RayRender,
    ybar: [f64; 3],
    opts: &RenderOptions,
    stride: usize,
    out: &mut Vec<(usize, Vec<f64>)>,
) -> Result<()> {
    if ybar == [0.0; 3] {
        return Ok(());
    }
    let m = mexp_poly();
    let dm = m.derivative();
    let (t_tail, dtail) = tail(fwd.depth);
    let bg_term = if fwd.opaque {
        0.0
    } else {
        match opts.gradient {
            TransmittanceGradient::Polynomial => dtail,
            TransmittanceGradient::ExpIdentity => -t_tail,
        }
    } * (0..3).map(|c| ybar[c] * opts.background[c]).sum::<f64>();

    // first pass: polynomials and the running integral q(u) of
    // sum_c ybar_c c sigma T'(Sig)
    let mut segs = Vec::with_capacity(fwd.segments);
    let mut q_totals = Vec::with_capacity(fwd.segments);
    walk(acc, ray, opts.early_exit, |sp| {
        let dtrans = match opts.gradient {
            TransmittanceGradient::Polynomial => dm.compose(&sp.sig)?,
            TransmittanceGradient::ExpIdentity => sp.trans.scale(-1.0),
        };
        let mut yc = Poly1D::zero();
        for c in 0..3 {
            yc.axpy(ybar[c], &sp.color[c]);
        }
        let q = yc.mul(&sp.sigma)?.mul(&dtrans)?.integrate()?;
        q_totals.push(q.eval(sp.s));
        segs.push((sp, yc, q));
        Ok(())
    })?;
    let q_total: f64 = q_totals.iter().sum();
    // On an opaque cut at u*, Sig(u*) is pinned, so u* moves against any
    // density change before it: that adds -sum_c ybar_c c(u*) T(u*).
    let cut_term = match (fwd.opaque, segs.last()) {
        (true, Some((sp, yc, _))) => -yc.eval(sp.s) * sp.trans.eval(sp.s),
        _ => 0.0,
    };

    let table = acc.table();
    let mut before = 0.0;
    for ((sp, yc, q), qk) in segs.into_iter().zip(q_totals) {
        let mut block = vec![0.0; CHANNELS * stride];
        let st = sp.sigma.mul(&sp.trans)?;
        for c in 0..3 {
            if ybar[c] != 0.0 {
                let dst = &mut block[(c + 1) * stride..(c + 2) * stride];
                line2taylor_h_into(table, sp.d, ray.dir, sp.s, &st, ybar[c], dst);
            }
        }
        let h = yc.mul(&sp.trans)?.sub(&q).add_constant(q_total - before + bg_term + cut_term);
        line2taylor_h_into(table, sp.d, ray.dir, sp.s, &h, 1.0, &mut block[..stride]);
        out.push((sp.box_index, block));
        before += qk;
    }
    Ok(())
}

/// Gradients of `<ybar, rgb>` with respect to the raw source weights and
/// locations. The density gradient is masked by the `relu` subgradient.
pub fn jvp(
    engine: &Engine,
    sources: &SourceSet,
    rays: &[Ray],
    fwd: &VolumeForward,
    ybar: &[[f64; 3]],
    opts: &RenderOptions,
) -> Result<LayerGradients> {
    if ybar.len() != rays.len() || fwd.rays.len() != rays.len() {
        return Err(Error::Contract("ybar and forward cache must have one entry per ray".into()));
    }
    let stride = crate::kernel::padded_stride_for(engine.table().len());
    let moments = super::accumulate_rays(engine, CHANNELS, rays.len(), |i, out| {
        ray_moments(&fwd.accessor, &rays[i], &fwd.rays[i], ybar[i], opts, stride, out)
    })?;
    let eff = effective_weights(sources);
    let (mut w_bar, p_bar) = super::read_back(engine, moments, &sources.p, &eff)?;
    for (i, g) in w_bar.iter_mut().enumerate() {
        if i % CHANNELS == 0 && !(sources.w[i] > 0.0) {
            *g = 0.0;
        }
    }
    Ok(LayerGradients { p_bar, w_bar, ..Default::default() })
}

/// Sampled volume rendering with exact `exp` on the same expansion: the
/// conventional numerical-integration path, kept for cross-validation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureOptions {
    pub samples: usize,
    pub background: [f64; 3],
}

/// Sample points of one ray: midpoints of `samples` equal steps over the
/// in-domain interval, and the step.
fn sample_points(ray: &Ray, samples: usize) -> (Vec<[f64; 3]>, f64) {
    match ray.clip() {
        Some((t0, t1)) => {
            let dt = (t1 - t0) / samples as f64;
            let pts = (0..samples).map(|i| super::clamp_inside(ray.at(t0 + (i as f64 + 0.5) * dt))).collect();
            (pts, dt)
        }
        None => (Vec::new(), 0.0),
    }
}

fn quadrature_ray(acc: &Accessor, ray: &Ray, q: &QuadratureOptions) -> Result<RayRender> {
    let (pts, dt) = sample_points(ray, q.samples);
    let mut depth = 0.0;
    let mut rgb = [0.0; 3];
    for x in &pts {
        let v = acc.value(*x)?;
        let t = (-(depth + 0.5 * v[0] * dt)).exp();
        for c in 0..3 {
            rgb[c] += v[c + 1] * v[0] * t * dt;
        }
        depth += v[0] * dt;
    }
    let t_inf = (-depth).exp();
    for c in 0..3 {
        rgb[c] += q.background[c] * t_inf;
    }
    Ok(RayRender { rgb, t_inf, depth, segments: pts.len(), opaque: false })
}

pub fn quadrature_forward(engine: &Engine, sources: &SourceSet, rays: &[Ray], q: &QuadratureOptions) -> Result<VolumeForward> {
    if sources.channels != CHANNELS {
        return Err(Error::Input(format!("volume rendering needs 4 channels, got {}", sources.channels)));
    }
    if q.samples < 2 {
        return Err(Error::Config("quadrature needs at least two samples per ray".into()));
    }
    let eff = sources.with_weights(effective_weights(sources))?;
    let segments = super::traverse_all(engine, rays);
    let accessor = super::expand_along(engine, &eff, &segments)?;
    let out: Result<Vec<_>> = crate::par::map(rays.len(), |i| quadrature_ray(&accessor, &rays[i], q)).into_iter().collect();
    Ok(VolumeForward { rays: out?, accessor })
}

/// Exact gradients of the sampled renderer: each sample becomes a point
/// source carrying the sensitivities of its density and colors.
pub fn quadrature_jvp(
    engine: &Engine,
    sources: &SourceSet,
    rays: &[Ray],
    fwd: &VolumeForward,
    ybar: &[[f64; 3]],
    q: &QuadratureOptions,
) -> Result<LayerGradients> {
    if ybar.len() != rays.len() || fwd.rays.len() != rays.len() {
        return Err(Error::Contract("ybar and forward cache must have one entry per ray".into()));
    }
    let per_ray: Result<Vec<(Vec<[f64; 3]>, Vec<f64>)>> = crate::par::map(rays.len(), |i| {
        let yb = ybar[i];
        let (pts, dt) = sample_points(&rays[i], q.samples);
        if yb == [0.0; 3] {
            return Ok((Vec::new(), Vec::new()));
        }
        let vals: Vec<Vec<f64>> = pts.iter().map(|x| fwd.accessor.value(*x)).collect::<Result<_>>()?;
        let mut depth = 0.0;
        let mut trans = Vec::with_capacity(pts.len());
        let mut contrib = Vec::with_capacity(pts.len());
        for v in &vals {
            let t = (-(depth + 0.5 * v[0] * dt)).exp();
            trans.push(t);
            contrib.push((0..3).map(|c| yb[c] * v[c + 1]).sum::<f64>() * v[0] * t * dt);
            depth += v[0] * dt;
        }
        let bg = (0..3).map(|c| yb[c] * q.background[c]).sum::<f64>() * (-depth).exp();
        let mut behind = bg;
        let mut w = vec![0.0; pts.len() * CHANNELS];
        for k in (0..pts.len()).rev() {
            let (v, t) = (&vals[k], trans[k]);
            let yc: f64 = (0..3).map(|c| yb[c] * v[c + 1]).sum();
            w[k * CHANNELS] = yc * t * dt * (1.0 - 0.5 * v[0] * dt) - dt * behind;
            for c in 0..3 {
                w[k * CHANNELS + c + 1] = yb[c] * v[0] * t * dt;
            }
            behind += contrib[k];
        }
        Ok((pts, w))
    })
    .into_iter()
    .collect();
    let (mut points, mut weights) = (Vec::new(), Vec::new());
    for (p, w) in per_ray? {
        points.extend(p);
        weights.extend(w);
    }
    let eff = effective_weights(sources);
    let mut g = super::point_gradients(engine, sources, &eff, &points, &weights, None)?;
    for (i, v) in g.w_bar.iter_mut().enumerate() {
        if i % CHANNELS == 0 && !(sources.w[i] > 0.0) {
            *v = 0.0;
        }
    }
    Ok(g)
}
