//! The expansion pipeline: P2M at the finest level, M2M up to level 2,
//! per-level M2L with parity hole stencils, L2L back down, and L2P through
//! the [`Accessor`].

mod accessor;
pub mod flops;
mod grid;
mod m2l;
mod translate;

pub use accessor::{Accessor, Axis, Volume};
pub use grid::{box_index, element_count, Grid, GridKind};
pub use m2l::{m2l, tiling_defects};
pub use translate::{inject_l2l_sign_fault, l2l, m2m, p2m_points, Translations};

use crate::error::{Error, Result};
use crate::kernel::{
    check_admissibility, fit_m2l_tables, AdmissibilityReport, FitOptions, KernelFamily,
    KernelModel, M2LTables, COARSEST_LEVEL,
};
use crate::multiindex::MultiIndexTable;
use crate::sources::SourceSet;
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    /// M2L contraction in single precision; everything else stays f64.
    F32,
    #[default]
    F64,
}

impl Precision {
    pub fn from_bits(bits: u32) -> Result<Self> {
        match bits {
            32 => Ok(Precision::F32),
            64 => Ok(Precision::F64),
            other => Err(Error::Config(format!("precision must be 32 or 64, got {other}"))),
        }
    }

    pub fn bits(&self) -> u32 {
        match self {
            Precision::F32 => 32,
            Precision::F64 => 64,
        }
    }
}

/// Default worst probe error for the admissibility check, relative to the
/// kernel peak.
pub const DEFAULT_ADMISSIBILITY_TOL: f64 = 5e-2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    /// Finest level; the grid there has `2^(levels+1)` boxes per axis.
    pub levels: u32,
    pub rho: usize,
    pub alpha: f64,
    pub family: KernelFamily,
    pub lsq: bool,
    pub precision: Precision,
    pub admissibility_tol: Option<f64>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            levels: 4,
            rho: 4,
            alpha: 200.0,
            family: KernelFamily::Gaussian,
            lsq: true,
            precision: Precision::F64,
            admissibility_tol: Some(DEFAULT_ADMISSIBILITY_TOL),
        }
    }
}

/// Kernel, fitted tables and translation operators for one configuration.
#[derive(Debug)]
pub struct Engine {
    cfg: EngineConfig,
    table: Arc<MultiIndexTable>,
    kernel: KernelModel,
    tables: M2LTables,
    // translations[l] shifts between level l (children) and l - 1
    translations: Vec<Option<Translations>>,
    expansions: AtomicUsize,
}

impl Engine {
    pub fn new(cfg: EngineConfig) -> Result<Self> {
        if cfg.levels < COARSEST_LEVEL {
            return Err(Error::Config(format!("levels must be at least 2, got {}", cfg.levels)));
        }
        let table = Arc::new(MultiIndexTable::new(cfg.rho)?);
        let kernel = KernelModel::new(cfg.family, cfg.alpha, cfg.rho)?;
        let opts = FitOptions { lsq: cfg.lsq, admissibility_tol: cfg.admissibility_tol, ..Default::default() };
        let tables = fit_m2l_tables(&kernel, &table, cfg.levels, &opts)?;
        let translations = (0..=cfg.levels)
            .map(|l| (l > COARSEST_LEVEL).then(|| Translations::new(&table, l)))
            .collect();
        Ok(Self { cfg, table, kernel, tables, translations, expansions: AtomicUsize::new(0) })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn levels(&self) -> u32 {
        self.cfg.levels
    }

    pub fn kernel(&self) -> &KernelModel {
        &self.kernel
    }

    pub fn table(&self) -> &Arc<MultiIndexTable> {
        &self.table
    }

    pub fn tables(&self) -> &M2LTables {
        &self.tables
    }

    pub fn admissibility(&self) -> AdmissibilityReport {
        check_admissibility(&self.kernel, &self.table, &self.tables, 256, 0)
    }

    /// Number of expansion passes run so far.
    pub fn expansions(&self) -> usize {
        self.expansions.load(Ordering::Relaxed)
    }

    pub fn finest_res(&self) -> usize {
        crate::kernel::resolution(self.cfg.levels)
    }

    /// Finest-level moments of point sources.
    pub fn p2m(&self, sources: &SourceSet) -> Result<Grid> {
        p2m_points(&self.table, self.cfg.levels, sources.channels, &sources.p, &sources.w, None)
    }

    /// Finest boxes containing any of `points`.
    pub fn boxes_of(&self, points: &[[f64; 3]]) -> Vec<bool> {
        let res = self.finest_res();
        let mut mask = vec![false; res * res * res];
        for q in points {
            let i = box_index(res, *q);
            mask[(i[0] * res + i[1]) * res + i[2]] = true;
        }
        mask
    }

    /// Expansion valid everywhere in the domain.
    pub fn expand(&self, sources: &SourceSet) -> Result<Accessor> {
        self.expand_moments(self.p2m(sources)?, None)
    }

    /// Expansion valid in the boxes containing `targets` only.
    pub fn expand_for(&self, sources: &SourceSet, targets: &[[f64; 3]]) -> Result<Accessor> {
        crate::sources::check_in_domain(targets, "target")?;
        self.expand_moments(self.p2m(sources)?, Some(self.boxes_of(targets)))
    }

    /// Runs M2M, M2L and L2L from given finest-level moments. `needed`
    /// restricts the finest boxes whose locals are computed.
    pub fn expand_moments(&self, moments: Grid, needed: Option<Vec<bool>>) -> Result<Accessor> {
        moments.expect_kind(GridKind::Moments)?;
        let finest = self.cfg.levels;
        if moments.level() != finest || moments.p() != self.table.len() {
            return Err(Error::Contract("moments do not match the engine's finest grid".into()));
        }
        if let Some(n) = &needed {
            if n.len() != moments.num_boxes() {
                return Err(Error::Contract("needed-box mask has the wrong size".into()));
            }
        }
        self.expansions.fetch_add(1, Ordering::Relaxed);
        let channels = moments.channels();
        let p = self.table.len();
        let precision = self.cfg.precision;

        // moments per level, finest first
        let mut ms = vec![moments];
        for level in (COARSEST_LEVEL..finest).rev() {
            let fine = ms.last().unwrap();
            let tr = self.translations[(level + 1) as usize].as_ref().unwrap();
            ms.push(m2m(fine, tr)?);
        }
        ms.reverse();
        let occ: Vec<Vec<bool>> = ms.iter().map(|g| g.occupancy()).collect();

        // needed masks per level from the finest one by parent closure
        let mut needs: Vec<Option<Vec<bool>>> = vec![None; ms.len()];
        if let Some(n) = needed {
            let mut cur = n;
            for level in (COARSEST_LEVEL..=finest).rev() {
                let idx = (level - COARSEST_LEVEL) as usize;
                if level > COARSEST_LEVEL {
                    let fres = crate::kernel::resolution(level);
                    let cres = fres / 2;
                    let mut up = vec![false; cres * cres * cres];
                    for (b, &on) in cur.iter().enumerate() {
                        if on {
                            let i = [b / (fres * fres), (b / fres) % fres, b % fres];
                            up[((i[0] / 2) * cres + i[1] / 2) * cres + i[2] / 2] = true;
                        }
                    }
                    needs[idx] = Some(cur);
                    cur = up;
                } else {
                    needs[idx] = Some(cur.clone());
                }
            }
        }

        let mut locals = Grid::zeros(COARSEST_LEVEL, p, channels, GridKind::Locals);
        for level in COARSEST_LEVEL..=finest {
            let idx = (level - COARSEST_LEVEL) as usize;
            let need = needs[idx].as_deref();
            if level > COARSEST_LEVEL {
                let mut fine = Grid::zeros(level, p, channels, GridKind::Locals);
                l2l(&locals, &mut fine, self.translations[level as usize].as_ref().unwrap(), need)?;
                locals = fine;
            }
            let lt = self.tables.level(level);
            m2l(&ms[idx], &lt.far, &occ[idx], need, &mut locals, precision)?;
            if let Some(near) = &lt.near {
                m2l(&ms[idx], near, &occ[idx], need, &mut locals, precision)?;
            }
        }
        let mask = needs.pop().flatten();
        Ok(Accessor::new(locals, self.table.clone(), mask))
    }
}
