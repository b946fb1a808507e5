//! Point insertion (P2M), moment coarsening (M2M) and local refinement (L2L).

use super::grid::{Grid, GridKind};
use crate::error::{Error, Result};
use crate::multiindex::MultiIndexTable;
use crate::par;
use std::sync::atomic::{AtomicBool, Ordering};

static L2L_FAULT: AtomicBool = AtomicBool::new(false);

/// Test hook: flips the sign of every non-identity L2L shift term for the
/// whole process. Used by the verification mutation check only.
pub fn inject_l2l_sign_fault(on: bool) {
    L2L_FAULT.store(on, Ordering::SeqCst);
}

/// Sparse shift-of-center operator for one child octant:
/// `A(n, k) = d^(n-k) / (n-k)!` for `k <= n` component-wise.
#[derive(Debug, Clone)]
pub struct Shift {
    pub(crate) terms: Vec<(u16, u16, f64)>,
}

impl Shift {
    fn new(table: &MultiIndexTable, d: [f64; 3]) -> Self {
        let e = table.entries();
        let mut mono = vec![0.0; table.len()];
        table.scaled_monomials(d, &mut mono);
        let mut terms = Vec::new();
        for (n, en) in e.iter().enumerate() {
            for (k, ek) in e.iter().enumerate() {
                if let Some(diff) = en.checked_sub(ek) {
                    let j = table.try_index_of(diff).expect("difference stays in table");
                    terms.push((n as u16, k as u16, mono[j]));
                }
            }
        }
        Self { terms }
    }
}

/// Shifts between a level and the next coarser one, per child octant.
#[derive(Debug, Clone)]
pub struct Translations {
    pub(crate) octants: Vec<Shift>,
}

impl Translations {
    /// Child grid at `fine_level`; child center minus parent center is
    /// `+-h` per axis with `h` the child half-width.
    pub fn new(table: &MultiIndexTable, fine_level: u32) -> Self {
        let h = 1.0 / crate::kernel::resolution(fine_level) as f64;
        let octants = (0..8)
            .map(|o| {
                let d = [
                    if o & 4 != 0 { h } else { -h },
                    if o & 2 != 0 { h } else { -h },
                    if o & 1 != 0 { h } else { -h },
                ];
                Shift::new(table, d)
            })
            .collect();
        Self { octants }
    }
}

/// Groups point indices by finest box, keeping index order within a box.
pub(crate) fn bucket(res: usize, points: &[[f64; 3]]) -> (Vec<usize>, Vec<u32>) {
    let nb = res * res * res;
    let ids: Vec<usize> = points
        .iter()
        .map(|q| {
            let i = super::grid::box_index(res, *q);
            (i[0] * res + i[1]) * res + i[2]
        })
        .collect();
    let mut starts = vec![0usize; nb + 1];
    for &b in &ids {
        starts[b + 1] += 1;
    }
    for b in 0..nb {
        starts[b + 1] += starts[b];
    }
    let mut fill = starts.clone();
    let mut order = vec![0u32; points.len()];
    for (i, &b) in ids.iter().enumerate() {
        order[fill[b]] = i as u32;
        fill[b] += 1;
    }
    (starts, order)
}

/// Inserts point sources: `M(n) += d^n / n! * w`, plus optional dipoles
/// `M(n) += sum_i v_i d^(n - e_i) / (n - e_i)!`, the derivative of a monopole
/// with respect to its location. `weights` is N x C, `dipoles` N x C x 3.
pub fn p2m_points(
    table: &MultiIndexTable,
    level: u32,
    channels: usize,
    points: &[[f64; 3]],
    weights: &[f64],
    dipoles: Option<&[f64]>,
) -> Result<Grid> {
    if weights.len() != points.len() * channels {
        return Err(Error::Contract("weights do not match points x channels".into()));
    }
    if let Some(d) = dipoles {
        if d.len() != points.len() * channels * 3 {
            return Err(Error::Contract("dipoles do not match points x channels x 3".into()));
        }
    }
    crate::sources::check_in_domain(points, "source")?;
    let mut grid = Grid::zeros(level, table.len(), channels, GridKind::Moments);
    let (starts, order) = bucket(grid.res(), points);
    let p = table.len();
    let stride = grid.stride();
    let res = grid.res();
    let block = channels * stride;
    par::for_each_chunk_mut(&mut grid.data, block * 64, |chunk_idx, chunk| {
        let mut mono = vec![0.0; p];
        for (local, blk) in chunk.chunks_mut(block).enumerate() {
            let b = chunk_idx * 64 + local;
            if starts[b] == starts[b + 1] {
                continue;
            }
            let idx = [b / (res * res), (b / res) % res, b % res];
            let w = 2.0 / res as f64;
            let center: [f64; 3] = std::array::from_fn(|a| -1.0 + (idx[a] as f64 + 0.5) * w);
            for &s in &order[starts[b]..starts[b + 1]] {
                let s = s as usize;
                let q = points[s];
                let d = [q[0] - center[0], q[1] - center[1], q[2] - center[2]];
                table.scaled_monomials(d, &mut mono);
                for c in 0..channels {
                    let wt = weights[s * channels + c];
                    let out = &mut blk[c * stride..c * stride + p];
                    if wt != 0.0 {
                        for (o, m) in out.iter_mut().zip(&mono) {
                            *o += wt * m;
                        }
                    }
                    if let Some(dp) = dipoles {
                        for axis in 0..3 {
                            let v = dp[(s * channels + c) * 3 + axis];
                            if v == 0.0 {
                                continue;
                            }
                            for (j, m) in mono.iter().enumerate() {
                                if let Some(t) = table.shifted(j, axis) {
                                    out[t] += v * m;
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    Ok(grid)
}

/// One level coarser: each parent sums its eight re-centered children.
pub fn m2m(fine: &Grid, tr: &Translations) -> Result<Grid> {
    fine.expect_kind(GridKind::Moments)?;
    if fine.level() <= crate::kernel::COARSEST_LEVEL {
        return Err(Error::Contract("cannot coarsen below the coarsest level".into()));
    }
    let mut coarse = Grid::zeros(fine.level() - 1, fine.p(), fine.channels(), GridKind::Moments);
    let occupied = fine.occupancy();
    let (cres, fres) = (coarse.res(), fine.res());
    let (channels, stride) = (fine.channels(), fine.stride());
    let block = coarse.block_len();
    par::for_each_chunk_mut(&mut coarse.data, block * cres, |row, chunk| {
        for (local, blk) in chunk.chunks_mut(block).enumerate() {
            let b = row * cres + local;
            let pi = [b / (cres * cres), (b / cres) % cres, b % cres];
            for o in 0..8 {
                let ci = [2 * pi[0] + (o >> 2 & 1), 2 * pi[1] + (o >> 1 & 1), 2 * pi[2] + (o & 1)];
                let cb = (ci[0] * fres + ci[1]) * fres + ci[2];
                if !occupied[cb] {
                    continue;
                }
                let src = fine.block(cb);
                for c in 0..channels {
                    let (s, d) = (&src[c * stride..], c * stride);
                    for &(n, k, a) in &tr.octants[o].terms {
                        blk[d + n as usize] += a * s[k as usize];
                    }
                }
            }
        }
    });
    Ok(coarse)
}

/// Pushes coarse locals into their children: `L_child(n) += sum_{k >= n}
/// d^(k-n) / (k-n)! L_parent(k)`. Only children flagged in `needed` (when
/// given) are written.
pub fn l2l(coarse: &Grid, fine: &mut Grid, tr: &Translations, needed: Option<&[bool]>) -> Result<()> {
    coarse.expect_kind(GridKind::Locals)?;
    fine.expect_kind(GridKind::Locals)?;
    if fine.level() != coarse.level() + 1 || fine.channels() != coarse.channels() {
        return Err(Error::Contract("l2l needs adjacent levels with equal channels".into()));
    }
    let (cres, fres) = (coarse.res(), fine.res());
    let (channels, stride) = (fine.channels(), fine.stride());
    let block = fine.block_len();
    let fault = L2L_FAULT.load(Ordering::SeqCst);
    par::for_each_chunk_mut(&mut fine.data, block * fres, |row, chunk| {
        for (local, blk) in chunk.chunks_mut(block).enumerate() {
            let b = row * fres + local;
            if needed.is_some_and(|m| !m[b]) {
                continue;
            }
            let ci = [b / (fres * fres), (b / fres) % fres, b % fres];
            let pb = ((ci[0] / 2) * cres + ci[1] / 2) * cres + ci[2] / 2;
            let o = (ci[0] & 1) << 2 | (ci[1] & 1) << 1 | (ci[2] & 1);
            let src = coarse.block(pb);
            for c in 0..channels {
                let (s, d) = (&src[c * stride..], c * stride);
                for &(n, k, a) in &tr.octants[o].terms {
                    let a = if fault && n != k { -a } else { a };
                    blk[d + k as usize] += a * s[n as usize];
                }
            }
        }
    });
    Ok(())
}
