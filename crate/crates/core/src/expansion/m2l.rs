//! Moment-to-local conversion at one level.
//!
//! Far passes use the parity window: per axis, a target with even index
//! gathers source offsets `-2..=3`, an odd one `-3..=2`, which are exactly
//! the children of the parent's neighbours. Hole offsets carry no table, so
//! they are skipped. The coarsest level gathers every non-adjacent box and
//! the finest level's near pass gathers the 3x3x3 neighbourhood.

use super::grid::{Grid, GridKind};
use super::Precision;
use crate::error::{Error, Result};
use crate::kernel::{M2LTable, Pass, COARSEST_LEVEL};
use crate::par;
use std::ops::{AddAssign, Mul};

pub(crate) trait Real: Copy + Send + Sync + Default + AddAssign + Mul<Output = Self> + 'static {
    fn to_f64(self) -> f64;
}

impl Real for f64 {
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}

impl Real for f32 {
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

/// Offsets gathered by a target with the given per-axis parities.
pub(crate) fn window(pass: Pass, level: u32, parity: [usize; 3]) -> Vec<[i32; 3]> {
    let range = |axis: usize| -> (i32, i32) {
        match pass {
            Pass::Near => (-1, 1),
            Pass::Far if level == COARSEST_LEVEL => (-7, 7),
            Pass::Far => {
                if parity[axis] == 0 {
                    (-2, 3)
                } else {
                    (-3, 2)
                }
            }
        }
    };
    let (rx, ry, rz) = (range(0), range(1), range(2));
    let mut out = Vec::new();
    for x in rx.0..=rx.1 {
        for y in ry.0..=ry.1 {
            for z in rz.0..=rz.1 {
                let o = [x, y, z];
                let hole = o.iter().all(|v| v.abs() <= 1);
                if (pass == Pass::Near) == hole {
                    out.push(o);
                }
            }
        }
    }
    out
}

#[inline(always)]
fn contract_fixed<T: Real, const S: usize>(acc: &mut [T], src: &[T], coeff: &[T], p: usize, channels: usize) {
    for c in 0..channels {
        let a: &mut [T; S] = (&mut acc[c * S..(c + 1) * S]).try_into().unwrap();
        let s = &src[c * S..c * S + p];
        for (n, &v) in s.iter().enumerate() {
            let row: &[T; S] = coeff[n * S..(n + 1) * S].try_into().unwrap();
            for k in 0..S {
                a[k] += v * row[k];
            }
        }
    }
}

#[inline(always)]
fn contract_dyn<T: Real>(acc: &mut [T], src: &[T], coeff: &[T], p: usize, channels: usize, stride: usize) {
    for c in 0..channels {
        let a = &mut acc[c * stride..(c + 1) * stride];
        let s = &src[c * stride..c * stride + p];
        for (n, &v) in s.iter().enumerate() {
            let row = &coeff[n * stride..(n + 1) * stride];
            for (x, r) in a.iter_mut().zip(row) {
                *x += v * *r;
            }
        }
    }
}

fn contract<T: Real>(acc: &mut [T], src: &[T], coeff: &[T], p: usize, channels: usize, stride: usize) {
    match stride {
        4 => contract_fixed::<T, 4>(acc, src, coeff, p, channels),
        12 => contract_fixed::<T, 12>(acc, src, coeff, p, channels),
        20 => contract_fixed::<T, 20>(acc, src, coeff, p, channels),
        36 => contract_fixed::<T, 36>(acc, src, coeff, p, channels),
        _ => contract_dyn(acc, src, coeff, p, channels, stride),
    }
}

/// Adds this level's M2L contribution into `out`. `occupied` flags source
/// boxes with nonzero moments; `targets`, when given, limits the written
/// target boxes.
pub fn m2l(
    m: &Grid,
    table: &M2LTable,
    occupied: &[bool],
    targets: Option<&[bool]>,
    out: &mut Grid,
    precision: Precision,
) -> Result<()> {
    m.expect_kind(GridKind::Moments)?;
    out.expect_kind(GridKind::Locals)?;
    if m.level() != out.level() || table.level() != m.level() {
        return Err(Error::Contract(format!(
            "m2l level mismatch: moments {}, locals {}, table {}",
            m.level(),
            out.level(),
            table.level()
        )));
    }
    if m.channels() != out.channels() || m.stride() != table.stride() {
        return Err(Error::Contract("m2l grid/table shapes differ".into()));
    }
    match precision {
        Precision::F64 => run::<f64>(m, &m.data, table, occupied, targets, out, |t, o| t.get(o)),
        Precision::F32 => {
            let m32: Vec<f32> = m.data.iter().map(|&v| v as f32).collect();
            run::<f32>(m, &m32, table, occupied, targets, out, |t, o| t.get32(o))
        }
    }
    Ok(())
}

fn run<'t, T: Real>(
    m: &Grid,
    mdata: &[T],
    table: &'t M2LTable,
    occupied: &[bool],
    targets: Option<&[bool]>,
    out: &mut Grid,
    get: impl Fn(&'t M2LTable, [i32; 3]) -> Option<&'t [T]>,
) {
    let res = m.res() as i32;
    let (p, stride, channels) = (m.p(), m.stride(), m.channels());
    let block = channels * stride;
    // per parity class: the offsets that carry coefficients
    let classes: Vec<Vec<([i32; 3], &[T])>> = (0..8)
        .map(|cls| {
            let parity = [cls >> 2 & 1, cls >> 1 & 1, cls & 1];
            window(table.pass(), table.level(), parity)
                .into_iter()
                .filter_map(|o| get(table, o).map(|c| (o, c)))
                .collect()
        })
        .collect();
    let rows = (res * res) as usize;
    par::for_each_chunk_mut(&mut out.data, block * res as usize, |row, chunk| {
        let mut acc = vec![T::default(); block];
        let (tx, ty) = ((row / res as usize) as i32, (row % res as usize) as i32);
        debug_assert!(row < rows);
        for (tz, blk) in chunk.chunks_mut(block).enumerate() {
            let tz = tz as i32;
            let b = row * res as usize + tz as usize;
            if targets.is_some_and(|t| !t[b]) {
                continue;
            }
            let cls = ((tx & 1) << 2 | (ty & 1) << 1 | (tz & 1)) as usize;
            acc.iter_mut().for_each(|v| *v = T::default());
            let mut any = false;
            for (o, coeff) in &classes[cls] {
                let (sx, sy, sz) = (tx + o[0], ty + o[1], tz + o[2]);
                if sx < 0 || sy < 0 || sz < 0 || sx >= res || sy >= res || sz >= res {
                    continue;
                }
                let s = ((sx * res + sy) * res + sz) as usize;
                if !occupied[s] {
                    continue;
                }
                contract(&mut acc, &mdata[s * block..(s + 1) * block], coeff, p, channels, stride);
                any = true;
            }
            if any {
                for (o, a) in blk.iter_mut().zip(&acc) {
                    *o += a.to_f64();
                }
            }
        }
    });
}

/// Checks that the near pass, the far passes and the coarsest level resolve
/// every ordered pair of finest boxes exactly once, for a spread of sample
/// targets. Returns the number of target boxes whose pairs are missed or
/// duplicated.
pub fn tiling_defects(finest: u32) -> usize {
    let res_f = 1i64 << (finest + 1);
    let samples = [[0, 0, 0], [1, 2, 3], [res_f - 1, 5 % res_f, 2], [res_f / 2, res_f / 2 - 1, 1], [res_f - 1; 3]];
    let mut defects = 0;
    for t in samples {
        let mut seen = vec![false; (res_f * res_f * res_f) as usize];
        let mut ok = true;
        for level in (COARSEST_LEVEL..=finest).rev() {
            let shift = finest - level;
            let tl: [i64; 3] = std::array::from_fn(|a| t[a] >> shift);
            let res = 1i64 << (level + 1);
            let mut passes = vec![Pass::Far];
            if level == finest {
                passes.push(Pass::Near);
            }
            for pass in passes {
                let parity = [(tl[0] & 1) as usize, (tl[1] & 1) as usize, (tl[2] & 1) as usize];
                for o in window(pass, level, parity) {
                    let s: [i64; 3] = std::array::from_fn(|a| tl[a] + o[a] as i64);
                    if s.iter().any(|v| *v < 0 || *v >= res) {
                        continue;
                    }
                    // every finest descendant of the source box
                    let span = 1i64 << shift;
                    for x in 0..span {
                        for y in 0..span {
                            for z in 0..span {
                                let f = ((s[0] * span + x) * res_f + s[1] * span + y) * res_f + s[2] * span + z;
                                ok &= !std::mem::replace(&mut seen[f as usize], true);
                            }
                        }
                    }
                }
            }
        }
        if !ok || seen.iter().any(|v| !v) {
            defects += 1;
        }
    }
    defects
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parity_windows_have_expected_sizes() {
        for cls in 0..8 {
            let parity = [cls >> 2 & 1, cls >> 1 & 1, cls & 1];
            assert_eq!(window(Pass::Far, 4, parity).len(), 189);
            assert_eq!(window(Pass::Near, 4, parity).len(), 27);
        }
        assert_eq!(window(Pass::Far, 2, [0, 0, 0]).len(), 15 * 15 * 15 - 27);
    }

    #[test]
    fn hole_tiling_exactly_once() {
        for finest in 2..=5 {
            assert_eq!(tiling_defects(finest), 0, "finest level {finest}");
        }
    }
}
