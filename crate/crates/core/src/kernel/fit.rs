//! Joint least-squares fit of a translation-invariant kernel restricted to a
//! pair of boxes by a bilinear form in scaled monomials.
//!
//! Source and target offsets both range over the normalized box `[-1, 1]^3`
//! sampled on a tensor Chebyshev grid `G`. For node values
//! `Y(i, j) = psi(c + h (G_i - G_j))` the fit is `C = U^+ Y U^+^T` with
//! `U(i, n) = G_i^n / n!`, so `sum_{n,k} C(n, k) a^n/n! b^k/k!` approximates
//! `psi(c + h (a - b))`.

use crate::error::{Error, Result};
use crate::multiindex::MultiIndexTable;
use nalgebra::DMatrix;

#[derive(Debug, Clone)]
pub struct FitBasis {
    /// Nodes per axis.
    m: usize,
    p: usize,
    nodes: Vec<f64>,
    // m^3 x P design matrix and its pseudo-inverse (P x m^3), row-major
    design: Vec<f64>,
    pinv: Vec<f64>,
}

impl FitBasis {
    pub fn new(table: &MultiIndexTable, nodes_per_axis: usize) -> Result<Self> {
        let rho = table.rho();
        if nodes_per_axis <= rho {
            return Err(Error::Config(format!(
                "least-squares fit needs more than rho = {rho} nodes per axis, got {nodes_per_axis}"
            )));
        }
        let m = nodes_per_axis;
        let nodes: Vec<f64> = (0..m)
            .map(|i| ((2 * i + 1) as f64 * std::f64::consts::PI / (2 * m) as f64).cos())
            .collect();
        let p = table.len();
        let rows = m * m * m;
        let mut design = vec![0.0; rows * p];
        let mut mono = vec![0.0; p];
        for ix in 0..m {
            for iy in 0..m {
                for iz in 0..m {
                    let i = (ix * m + iy) * m + iz;
                    table.scaled_monomials([nodes[ix], nodes[iy], nodes[iz]], &mut mono);
                    design[i * p..(i + 1) * p].copy_from_slice(&mono);
                }
            }
        }
        // normal equations, solved with full pivoting
        let u = DMatrix::from_row_slice(rows, p, &design);
        let ut = u.transpose();
        let gram = &ut * &u;
        let pinv = gram
            .full_piv_lu()
            .solve(&ut)
            .ok_or_else(|| Error::Config("singular least-squares design".into()))?;
        let mut pinv_rows = vec![0.0; p * rows];
        for r in 0..p {
            for c in 0..rows {
                pinv_rows[r * rows + c] = pinv[(r, c)];
            }
        }
        Ok(Self { m, p, nodes, design, pinv: pinv_rows })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn nodes_per_axis(&self) -> usize {
        self.m
    }

    /// Fits a separable node matrix `Y = Yx (x) Yy (x) Yz`, where
    /// `y_axes[a][i * m + j]` is the axis-`a` factor for source node `i` and
    /// target node `j`. Returns the P x P normalized coefficients, row-major.
    pub fn fit_separable(&self, y_axes: &[Vec<f64>; 3]) -> Vec<f64> {
        let (m, p) = (self.m, self.p);
        let n3 = m * m * m;
        let mut z = vec![0.0; p * n3];
        let mut t1 = vec![0.0; n3];
        let mut t2 = vec![0.0; n3];
        for r in 0..p {
            let row = &self.pinv[r * n3..(r + 1) * n3];
            // mode products along x, y, z in turn
            t1.iter_mut().for_each(|v| *v = 0.0);
            for ix in 0..m {
                for jx in 0..m {
                    let f = y_axes[0][ix * m + jx];
                    for rest in 0..m * m {
                        t1[jx * m * m + rest] += f * row[ix * m * m + rest];
                    }
                }
            }
            t2.iter_mut().for_each(|v| *v = 0.0);
            for jx in 0..m {
                for iy in 0..m {
                    for jy in 0..m {
                        let f = y_axes[1][iy * m + jy];
                        for iz in 0..m {
                            t2[(jx * m + jy) * m + iz] += f * t1[(jx * m + iy) * m + iz];
                        }
                    }
                }
            }
            let zr = &mut z[r * n3..(r + 1) * n3];
            for jxy in 0..m * m {
                for iz in 0..m {
                    let v = t2[jxy * m + iz];
                    for jz in 0..m {
                        zr[jxy * m + jz] += v * y_axes[2][iz * m + jz];
                    }
                }
            }
        }
        let mut c = vec![0.0; p * p];
        for r in 0..p {
            let zr = &z[r * n3..(r + 1) * n3];
            for s in 0..p {
                let ps = &self.pinv[s * n3..(s + 1) * n3];
                c[r * p + s] = zr.iter().zip(ps).map(|(a, b)| a * b).sum();
            }
        }
        c
    }

    /// Fits a dense node matrix `Y` (m^3 x m^3, row-major, source-major).
    pub fn fit_dense(&self, y: &[f64]) -> Vec<f64> {
        let (p, n3) = (self.p, self.m * self.m * self.m);
        let mut z = vec![0.0; p * n3];
        for r in 0..p {
            for i in 0..n3 {
                let a = self.pinv[r * n3 + i];
                if a != 0.0 {
                    for j in 0..n3 {
                        z[r * n3 + j] += a * y[i * n3 + j];
                    }
                }
            }
        }
        let mut c = vec![0.0; p * p];
        for r in 0..p {
            for s in 0..p {
                c[r * p + s] = (0..n3).map(|j| z[r * n3 + j] * self.pinv[s * n3 + j]).sum();
            }
        }
        c
    }

    /// Max absolute residual `|U C U^T - Y|` over all node pairs.
    pub fn residual(&self, c: &[f64], y: &dyn Fn(usize, usize) -> f64) -> f64 {
        let (p, n3) = (self.p, self.m * self.m * self.m);
        let mut uc = vec![0.0; n3 * p];
        for i in 0..n3 {
            for s in 0..p {
                uc[i * p + s] = (0..p).map(|r| self.design[i * p + r] * c[r * p + s]).sum();
            }
        }
        let mut worst: f64 = 0.0;
        for i in 0..n3 {
            for j in 0..n3 {
                let v: f64 = (0..p).map(|s| uc[i * p + s] * self.design[j * p + s]).sum();
                worst = worst.max((v - y(i, j)).abs());
            }
        }
        worst
    }

    /// Normalized node coordinates of flat node index `i`.
    pub fn node(&self, i: usize) -> [f64; 3] {
        let m = self.m;
        [self.nodes[i / (m * m)], self.nodes[(i / m) % m], self.nodes[i % m]]
    }
}
