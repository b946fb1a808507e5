//! Differentiable layers built on the expansion engine.
//!
//! Forward passes cache their accessor. Backward passes insert the output
//! adjoints as new sources (points, dipoles or weighted ray segments) into a
//! single extra expansion, then read `w_bar = g(p)` and `p_bar = w * grad g(p)`
//! at the original sources. The engine's operator is symmetric, so these are
//! exact derivatives of the approximate forward map.

pub mod explicit;
pub mod integral;
pub mod root;
pub mod volumetric;

use crate::error::{Error, Result};
use crate::expansion::{Accessor, Engine, Grid, GridKind};
use crate::par;
use crate::ray::{traverse, Ray, Segment};
use crate::sources::SourceSet;
use std::collections::HashMap;

/// Rays per deterministic accumulation chunk.
const RAY_CHUNK: usize = 32;

/// Gradients of a scalar loss with respect to the layer inputs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LayerGradients {
    /// N x 3.
    pub p_bar: Vec<[f64; 3]>,
    /// N x C, raw weights (before any layer nonlinearity).
    pub w_bar: Vec<f64>,
    /// M x 3, explicit layer only.
    pub q_bar: Option<Vec<[f64; 3]>>,
    /// Root layers only: gradient of the additive field offset.
    pub bias_bar: f64,
    /// Rays whose contribution was dropped because the implicit function
    /// theorem denominator was too small.
    pub degenerate: usize,
}

impl LayerGradients {
    pub fn zeros(n: usize, channels: usize) -> Self {
        Self { p_bar: vec![[0.0; 3]; n], w_bar: vec![0.0; n * channels], ..Default::default() }
    }

    pub fn is_finite(&self) -> bool {
        self.p_bar.iter().flatten().all(|v| v.is_finite())
            && self.w_bar.iter().all(|v| v.is_finite())
            && self.q_bar.as_ref().is_none_or(|q| q.iter().flatten().all(|v| v.is_finite()))
            && self.bias_bar.is_finite()
    }
}

/// Segments of every ray through the engine's finest grid.
pub fn traverse_all(engine: &Engine, rays: &[Ray]) -> Vec<Vec<Segment>> {
    let res = engine.finest_res();
    par::map(rays.len(), |i| traverse(&rays[i], res))
}

/// Finest boxes touched by any segment.
pub fn segment_mask(engine: &Engine, segments: &[Vec<Segment>]) -> Vec<bool> {
    let res = engine.finest_res();
    let mut mask = vec![false; res * res * res];
    for s in segments.iter().flatten() {
        mask[s.flat] = true;
    }
    mask
}

/// Forward accessor valid on every box the rays cross.
pub(crate) fn expand_along(engine: &Engine, sources: &SourceSet, segments: &[Vec<Segment>]) -> Result<Accessor> {
    engine.expand_moments(engine.p2m(sources)?, Some(segment_mask(engine, segments)))
}

/// Accumulates per-ray moment contributions into a finest-level grid.
/// `insert(ray, out)` appends `(box, block)` pairs with block length
/// `channels * stride`. Chunking is fixed, so the summation order does not
/// depend on the thread count.
pub(crate) fn accumulate_rays<F>(engine: &Engine, channels: usize, n_rays: usize, insert: F) -> Result<Grid>
where
    F: Fn(usize, &mut Vec<(usize, Vec<f64>)>) -> Result<()> + Sync,
{
    let p = engine.table().len();
    let mut grid = Grid::zeros(engine.levels(), p, channels, GridKind::Moments);
    let block = grid.block_len();
    let chunks = n_rays.div_ceil(RAY_CHUNK);
    let parts: Vec<Result<(Vec<usize>, HashMap<usize, Vec<f64>>)>> = par::map(chunks, |ci| {
        let mut order = Vec::new();
        let mut acc: HashMap<usize, Vec<f64>> = HashMap::new();
        let mut buf = Vec::new();
        for r in ci * RAY_CHUNK..((ci + 1) * RAY_CHUNK).min(n_rays) {
            buf.clear();
            insert(r, &mut buf)?;
            for (b, v) in buf.drain(..) {
                debug_assert_eq!(v.len(), block);
                let slot = acc.entry(b).or_insert_with(|| {
                    order.push(b);
                    vec![0.0; block]
                });
                slot.iter_mut().zip(&v).for_each(|(a, x)| *a += x);
            }
        }
        Ok((order, acc))
    });
    for part in parts {
        let (order, acc) = part?;
        for b in order {
            grid.block_mut(b).iter_mut().zip(&acc[&b]).for_each(|(a, x)| *a += x);
        }
    }
    if !grid.is_finite() {
        return Err(Error::NonFinite("backward moments".into()));
    }
    Ok(grid)
}

/// Expands backward moments and reads `w_bar = g(p)` and
/// `p_bar = sum_c w_c grad g_c(p)` at the sources, using `w_eff` as the
/// weights seen by the forward kernel sum.
pub(crate) fn read_back(engine: &Engine, moments: Grid, p: &[[f64; 3]], w_eff: &[f64]) -> Result<(Vec<f64>, Vec<[f64; 3]>)> {
    let channels = moments.channels();
    let acc = engine.expand_moments(moments, Some(engine.boxes_of(p)))?;
    let w_bar = acc.values(p)?;
    let grads = acc.gradients(p)?;
    let p_bar = (0..p.len())
        .map(|n| {
            let mut g = [0.0; 3];
            for c in 0..channels {
                let w = w_eff[n * channels + c];
                for a in 0..3 {
                    g[a] += w * grads[n * channels + c][a];
                }
            }
            g
        })
        .collect();
    Ok((w_bar, p_bar))
}

/// Gradients of a loss whose adjoint is a set of point monopoles (and
/// optional dipoles, N x C x 3) at `points`: one expansion, read back at the
/// sources with `w_eff` as the forward weights.
pub fn point_gradients(
    engine: &Engine,
    sources: &SourceSet,
    w_eff: &[f64],
    points: &[[f64; 3]],
    weights: &[f64],
    dipoles: Option<&[f64]>,
) -> Result<LayerGradients> {
    let inside: Vec<[f64; 3]> = points.iter().map(|q| clamp_inside(*q)).collect();
    let moments = crate::expansion::p2m_points(engine.table(), engine.levels(), sources.channels, &inside, weights, dipoles)?;
    let (w_bar, p_bar) = read_back(engine, moments, &sources.p, w_eff)?;
    Ok(LayerGradients { p_bar, w_bar, ..Default::default() })
}

/// Point inside the open domain, for inserting hit points on a face.
pub(crate) fn clamp_inside(q: [f64; 3]) -> [f64; 3] {
    q.map(|v| v.clamp(-1.0 + 1e-12, 1.0 - 1e-12))
}
