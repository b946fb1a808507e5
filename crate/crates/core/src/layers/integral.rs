//! Line integrals of the field along rays, `y = int f(o + t r) dt` over the
//! part of each ray inside the domain.

use super::LayerGradients;
use crate::error::{Error, Result};
use crate::expansion::{Accessor, Engine};
use crate::ray::{line2poly, line2taylor, Ray};
use crate::sources::SourceSet;

#[derive(Debug)]
pub struct LineForward {
    /// M x C.
    pub values: Vec<f64>,
    pub accessor: Accessor,
}

/// Integrates the restricted box polynomials exactly, segment by segment.
pub fn integrate_with(accessor: &Accessor, rays: &[Ray]) -> Vec<f64> {
    let res = accessor.grid().res();
    let c = accessor.channels();
    let per_ray = crate::par::map(rays.len(), |i| {
        let ray = &rays[i];
        let mut out = vec![0.0; c];
        for seg in crate::ray::traverse(ray, res) {
            let d = seg.entry_offset(ray, res);
            for (ch, o) in out.iter_mut().enumerate() {
                *o += line2poly(accessor.table(), accessor.local(seg.flat, ch), d, ray.dir).integral_to(seg.len());
            }
        }
        out
    });
    per_ray.concat()
}

pub fn forward(engine: &Engine, sources: &SourceSet, rays: &[Ray]) -> Result<LineForward> {
    let segments = super::traverse_all(engine, rays);
    let accessor = super::expand_along(engine, sources, &segments)?;
    let values = integrate_with(&accessor, rays);
    Ok(LineForward { values, accessor })
}

/// Gradients of `<ybar, y>`: every ray segment enters the backward
/// moments as a closed-form line of sources with weight `ybar`.
pub fn jvp(engine: &Engine, sources: &SourceSet, rays: &[Ray], ybar: &[f64]) -> Result<LayerGradients> {
    let c = sources.channels;
    if ybar.len() != rays.len() * c {
        return Err(Error::Contract(format!("ybar has {} entries, expected {}", ybar.len(), rays.len() * c)));
    }
    let res = engine.finest_res();
    let table = engine.table();
    let stride = crate::kernel::padded_stride_for(table.len());
    let moments = super::accumulate_rays(engine, c, rays.len(), |i, out| {
        let ray = &rays[i];
        let yb = &ybar[i * c..(i + 1) * c];
        if yb.iter().all(|v| *v == 0.0) {
            return Ok(());
        }
        for seg in crate::ray::traverse(ray, res) {
            let m = line2taylor(table, seg.entry_offset(ray, res), ray.dir, seg.len());
            let mut block = vec![0.0; c * stride];
            for (ch, y) in yb.iter().enumerate() {
                for (b, v) in block[ch * stride..].iter_mut().zip(&m) {
                    *b = y * v;
                }
            }
            out.push((seg.flat, block));
        }
        Ok(())
    })?;
    let (w_bar, p_bar) = super::read_back(engine, moments, &sources.p, &sources.w)?;
    Ok(LayerGradients { p_bar, w_bar, ..Default::default() })
}
