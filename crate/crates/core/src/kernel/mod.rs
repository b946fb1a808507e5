//! Radially symmetric difference kernels `phi(p, q) = psi(p - q)`, their
//! analytic partial derivatives, and the fitted M2L coefficient tables.

mod fit;
mod tables;

pub use fit::FitBasis;
pub use tables::{
    check_admissibility, padded_stride as padded_stride_for, resolution, COARSEST_LEVEL, fit_m2l_tables, AdmissibilityReport, FitOptions, LevelTables, M2LTable,
    M2LTables, Pass,
};

use crate::error::{Error, Result};
use crate::multiindex::MultiIndex;
use serde::{Deserialize, Serialize};
use std::str::FromStr;

/// Highest derivative order any caller needs: `2 * MAX_RHO`.
pub const MAX_DERIVATIVE: usize = 2 * crate::multiindex::MAX_RHO;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    /// `psi(x) = exp(-alpha |x|^2)`
    Gaussian,
}

impl KernelFamily {
    pub fn name(&self) -> &'static str {
        match self {
            KernelFamily::Gaussian => "gaussian",
        }
    }

    pub fn code(&self) -> u32 {
        match self {
            KernelFamily::Gaussian => 0,
        }
    }

    pub fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(KernelFamily::Gaussian),
            _ => Err(Error::Config(format!("unknown kernel family code {code}"))),
        }
    }
}

impl FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "gauss" => Ok(KernelFamily::Gaussian),
            other => Err(Error::Config(format!("unsupported kernel family '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelModel {
    pub family: KernelFamily,
    /// Sharpness, in units of 1 / length^2.
    pub alpha: f64,
    pub rho: usize,
}

impl KernelModel {
    pub fn new(family: KernelFamily, alpha: f64, rho: usize) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::Config(format!("kernel alpha must be positive, got {alpha}")));
        }
        if !(1..=crate::multiindex::MAX_RHO).contains(&rho) {
            return Err(Error::Config(format!("expansion order rho must lie in [1, 4], got {rho}")));
        }
        Ok(Self { family, alpha, rho })
    }

    pub fn gaussian(alpha: f64, rho: usize) -> Result<Self> {
        Self::new(KernelFamily::Gaussian, alpha, rho)
    }

    pub fn max_order(&self) -> usize {
        2 * self.rho
    }

    /// The kernel factorizes per axis; this is the 1D factor.
    pub fn axis_value(&self, x: f64) -> f64 {
        match self.family {
            KernelFamily::Gaussian => (-self.alpha * x * x).exp(),
        }
    }

    pub fn psi(&self, x: [f64; 3]) -> f64 {
        match self.family {
            KernelFamily::Gaussian => {
                (-self.alpha * (x[0] * x[0] + x[1] * x[1] + x[2] * x[2])).exp()
            }
        }
    }

    /// Writes `d^m/dx^m` of the 1D factor at `x` into `out[m]` for
    /// `m < out.len()`.
    pub fn axis_derivatives(&self, x: f64, out: &mut [f64]) {
        match self.family {
            KernelFamily::Gaussian => gaussian_axis_derivatives(self.alpha, x, out),
        }
    }

    /// Exact `d^order psi / dx^order` at `x`.
    pub fn partial(&self, order: MultiIndex, x: [f64; 3]) -> Result<f64> {
        if order.order() > self.max_order() {
            return Err(Error::Input(format!(
                "derivative order {} exceeds 2 rho = {}",
                order.order(),
                self.max_order()
            )));
        }
        let o = order.as_array();
        let mut v = 1.0;
        let mut buf = [0.0; MAX_DERIVATIVE + 1];
        for a in 0..3 {
            self.axis_derivatives(x[a], &mut buf[..=o[a]]);
            v *= buf[o[a]];
        }
        Ok(v)
    }

    pub fn gradient(&self, x: [f64; 3]) -> [f64; 3] {
        let mut d = [[0.0; 2]; 3];
        for a in 0..3 {
            self.axis_derivatives(x[a], &mut d[a]);
        }
        [
            d[0][1] * d[1][0] * d[2][0],
            d[0][0] * d[1][1] * d[2][0],
            d[0][0] * d[1][0] * d[2][1],
        ]
    }

    /// Second partials ordered xx, yy, zz, xy, xz, yz.
    pub fn hessian(&self, x: [f64; 3]) -> [f64; 6] {
        let mut d = [[0.0; 3]; 3];
        for a in 0..3 {
            self.axis_derivatives(x[a], &mut d[a]);
        }
        [
            d[0][2] * d[1][0] * d[2][0],
            d[0][0] * d[1][2] * d[2][0],
            d[0][0] * d[1][0] * d[2][2],
            d[0][1] * d[1][1] * d[2][0],
            d[0][1] * d[1][0] * d[2][1],
            d[0][0] * d[1][1] * d[2][1],
        ]
    }
}

/// `d^m/dx^m exp(-a x^2) = (-sqrt a)^m H_m(sqrt a x) exp(-a x^2)` with the
/// physicists' Hermite recurrence `H_{m+1} = 2u H_m - 2m H_{m-1}`.
fn gaussian_axis_derivatives(alpha: f64, x: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    let s = alpha.sqrt();
    let u = s * x;
    let e = (-alpha * x * x).exp();
    let (mut h_prev, mut h) = (0.0, 1.0);
    let mut scale = 1.0;
    for (m, o) in out.iter_mut().enumerate() {
        if m > 0 {
            let next = 2.0 * u * h - 2.0 * (m - 1) as f64 * h_prev;
            h_prev = h;
            h = next;
            scale *= -s;
        }
        *o = scale * h * e;
    }
}
