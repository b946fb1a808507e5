//! Dense univariate polynomials of bounded degree, closed-form real roots up
//! to degree four, and the fitted quartic stand-in for `exp(-x)`.

use crate::error::{Error, Result};
use std::sync::OnceLock;

/// Compositions of the transmittance quartic with degree-5 optical-depth
/// polynomials, multiplied by color and density, reach degree 24.
pub const MAX_DEGREE: usize = 32;

/// Leading coefficients below this fraction of the largest one are dropped
/// before root finding.
pub const DEGENERACY: f64 = 1e-12;

/// Upper end of the interval on which [`mexp_poly`] approximates `exp(-x)`.
pub const MEXP_RANGE: f64 = 5.0;

#[derive(Clone, Copy, PartialEq)]
pub struct Poly1D {
    c: [f64; MAX_DEGREE + 1],
    len: usize,
}

impl std::fmt::Debug for Poly1D {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_tuple("Poly1D").field(&self.coeffs()).finish()
    }
}

impl Default for Poly1D {
    fn default() -> Self {
        Self::zero()
    }
}

fn overflow(degree: usize) -> Error {
    Error::Contract(format!("polynomial degree {degree} exceeds the cap {MAX_DEGREE}"))
}

impl Poly1D {
    pub const fn zero() -> Self {
        Self { c: [0.0; MAX_DEGREE + 1], len: 1 }
    }

    pub fn constant(v: f64) -> Self {
        let mut p = Self::zero();
        p.c[0] = v;
        p
    }

    /// `a + b x`
    pub fn linear(a: f64, b: f64) -> Self {
        let mut p = Self::zero();
        p.c[0] = a;
        p.c[1] = b;
        p.len = 2;
        p
    }

    /// Ascending coefficients `a_0..a_d`.
    pub fn new(coeffs: &[f64]) -> Result<Self> {
        if coeffs.len() > MAX_DEGREE + 1 {
            return Err(overflow(coeffs.len() - 1));
        }
        if let Some(i) = coeffs.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!("coefficient {i} is not finite")));
        }
        let mut p = Self::zero();
        p.c[..coeffs.len()].copy_from_slice(coeffs);
        p.len = coeffs.len().max(1);
        Ok(p)
    }

    /// Highest stored index; trailing zeros count.
    pub fn degree(&self) -> usize {
        self.len - 1
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.c[..self.len]
    }

    pub fn coeff(&self, i: usize) -> f64 {
        if i < self.len {
            self.c[i]
        } else {
            0.0
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs().iter().rev().fold(0.0, |acc, a| acc * x + a)
    }

    pub fn derivative(&self) -> Self {
        let mut d = Self::zero();
        if self.len > 1 {
            for i in 1..self.len {
                d.c[i - 1] = self.c[i] * i as f64;
            }
            d.len = self.len - 1;
        }
        d
    }

    /// Antiderivative with zero constant term.
    pub fn integrate(&self) -> Result<Self> {
        if self.len > MAX_DEGREE {
            return Err(overflow(self.len));
        }
        let mut out = Self::zero();
        for i in 0..self.len {
            out.c[i + 1] = self.c[i] / (i + 1) as f64;
        }
        out.len = self.len + 1;
        Ok(out)
    }

    /// `int_0^s p(x) dx`
    pub fn integral_to(&self, s: f64) -> f64 {
        let mut acc = 0.0;
        for i in (0..self.len).rev() {
            acc = acc * s + self.c[i] / (i + 1) as f64;
        }
        acc * s
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = *self;
        out.len = self.len.max(other.len);
        for i in 0..other.len {
            out.c[i] += other.c[i];
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut out = *self;
        out.c[..out.len].iter_mut().for_each(|v| *v *= s);
        out
    }

    pub fn add_constant(&self, v: f64) -> Self {
        let mut out = *self;
        out.c[0] += v;
        out
    }

    /// `self += s * other`
    pub fn axpy(&mut self, s: f64, other: &Self) {
        self.len = self.len.max(other.len);
        for i in 0..other.len {
            self.c[i] += s * other.c[i];
        }
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        let deg = self.degree() + other.degree();
        if deg > MAX_DEGREE {
            return Err(overflow(deg));
        }
        let mut out = Self::zero();
        out.len = deg + 1;
        for i in 0..self.len {
            let a = self.c[i];
            if a == 0.0 {
                continue;
            }
            for j in 0..other.len {
                out.c[i + j] += a * other.c[j];
            }
        }
        Ok(out)
    }

    /// `self(other(x))`, by Horner's scheme on polynomials.
    pub fn compose(&self, other: &Self) -> Result<Self> {
        let deg = self.degree() * other.degree();
        if deg > MAX_DEGREE {
            return Err(overflow(deg));
        }
        let mut acc = Self::constant(self.c[self.len - 1]);
        for i in (0..self.len - 1).rev() {
            acc = acc.mul(other)?.add_constant(self.c[i]);
        }
        Ok(acc)
    }

    /// Real roots with multiplicity, ascending. Handles degree up to four
    /// after dropping negligible leading coefficients.
    pub fn real_roots(&self) -> Result<Vec<f64>> {
        let scale = self.coeffs().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            return Err(Error::Contract("roots of the zero polynomial are undefined".into()));
        }
        let mut d = self.degree();
        while d > 0 && self.c[d].abs() < DEGENERACY * scale {
            d -= 1;
        }
        if d > 4 {
            return Err(Error::Contract(format!("closed-form roots need degree <= 4, got {d}")));
        }
        let a = &self.c[..=d];
        let mut roots = match d {
            0 => Vec::new(),
            1 => vec![-a[0] / a[1]],
            2 => quadratic(a[2], a[1], a[0]),
            3 => cubic(a[2] / a[3], a[1] / a[3], a[0] / a[3]),
            _ => quartic(a[3] / a[4], a[2] / a[4], a[1] / a[4], a[0] / a[4]),
        };
        let p = Poly1D::new(a)?;
        let dp = p.derivative();
        for r in roots.iter_mut() {
            let (f, g) = (p.eval(*r), dp.eval(*r));
            if g != 0.0 {
                let step = f / g;
                let polished = *r - step;
                if p.eval(polished).abs() <= f.abs() {
                    *r = polished;
                }
            }
        }
        // drop closed-form artifacts that do not actually annihilate p
        roots.retain(|&r| {
            let mag: f64 = a.iter().enumerate().map(|(i, c)| c.abs() * r.abs().powi(i as i32)).sum();
            r.is_finite() && p.eval(r).abs() <= 1e-7 * mag.max(f64::MIN_POSITIVE)
        });
        roots.sort_by(|x, y| x.partial_cmp(y).unwrap());
        Ok(roots)
    }
}

/// Alias matching the root-finding contract: closed-form real roots of a
/// polynomial of degree at most four.
pub fn quartic_roots(p: &Poly1D) -> Result<Vec<f64>> {
    p.real_roots()
}

fn quadratic(a: f64, b: f64, c: f64) -> Vec<f64> {
    let disc = b * b - 4.0 * a * c;
    let tiny = 1e-12 * (b * b).max((4.0 * a * c).abs());
    if disc < -tiny {
        return Vec::new();
    }
    if disc <= tiny {
        let r = -b / (2.0 * a);
        return vec![r, r];
    }
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    if q == 0.0 {
        let r = (-c / a).sqrt();
        return vec![-r, r];
    }
    vec![q / a, c / q]
}

/// Real roots of `x^3 + a x^2 + b x + c`.
fn cubic(a: f64, b: f64, c: f64) -> Vec<f64> {
    let shift = a / 3.0;
    let p = b - a * a / 3.0;
    let q = 2.0 * a * a * a / 27.0 - a * b / 3.0 + c;
    let half_q = q / 2.0;
    let third_p = p / 3.0;
    let disc = half_q * half_q + third_p * third_p * third_p;
    let scale = (half_q * half_q).max((third_p * third_p * third_p).abs());
    if disc > 1e-14 * scale {
        let sq = disc.sqrt();
        let u = (-half_q + sq).cbrt();
        let v = (-half_q - sq).cbrt();
        vec![u + v - shift]
    } else if p.abs() <= f64::EPSILON * (a * a + b.abs()) {
        vec![-shift; 3]
    } else {
        // three real roots (two coincide when disc == 0)
        let m = 2.0 * (-third_p).sqrt();
        let arg = (3.0 * q / (p * m)).clamp(-1.0, 1.0);
        let theta = arg.acos() / 3.0;
        (0..3)
            .map(|k| m * (theta - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos() - shift)
            .collect()
    }
}

/// Real roots of `x^4 + a x^3 + b x^2 + c x + d` by Ferrari's method.
fn quartic(a: f64, b: f64, c: f64, d: f64) -> Vec<f64> {
    let shift = a / 4.0;
    let a2 = a * a;
    let p = b - 3.0 * a2 / 8.0;
    let q = c - a * b / 2.0 + a2 * a / 8.0;
    let r = d - a * c / 4.0 + a2 * b / 16.0 - 3.0 * a2 * a2 / 256.0;
    let size = 1.0 + p.abs() + r.abs().sqrt();
    let mut ys = Vec::with_capacity(4);
    if q.abs() <= 1e-14 * size * size.sqrt() {
        for z in quadratic(1.0, p, r) {
            if z > 0.0 {
                let s = z.sqrt();
                ys.push(-s);
                ys.push(s);
            } else if z > -1e-12 * size {
                ys.push(0.0);
                ys.push(0.0);
            }
        }
    } else {
        // resolvent 8m^3 + 8p m^2 + (2p^2 - 8r) m - q^2 = 0, largest root > 0
        let res = cubic(p, (p * p / 4.0) - r, -q * q / 8.0);
        let mut m = res.into_iter().fold(f64::NEG_INFINITY, f64::max);
        let f = |m: f64| ((m + p) * m + (p * p / 4.0 - r)) * m - q * q / 8.0;
        let df = |m: f64| (3.0 * m + 2.0 * p) * m + (p * p / 4.0 - r);
        for _ in 0..2 {
            let g = df(m);
            if g != 0.0 && m > 0.0 {
                let next = m - f(m) / g;
                if next > 0.0 && f(next).abs() <= f(m).abs() {
                    m = next;
                }
            }
        }
        if m <= 0.0 {
            return Vec::new();
        }
        let s = (2.0 * m).sqrt();
        let t = q / (2.0 * s);
        ys.extend(quadratic(1.0, -s, p / 2.0 + m + t));
        ys.extend(quadratic(1.0, s, p / 2.0 + m - t));
    }
    ys.into_iter().map(|y| y - shift).collect()
}

/// Degree-4 least-squares fit of `exp(-x)` on `[0, 5]` over 64 Chebyshev
/// nodes, constrained to take the value 1 at 0 so empty space is exactly
/// transparent.
pub fn fit_exp_poly() -> Poly1D {
    use nalgebra::{DMatrix, DVector};
    let n = 64;
    let mut a = DMatrix::zeros(n, 4);
    let mut y = DVector::zeros(n);
    for i in 0..n {
        let t = ((2 * i + 1) as f64 * std::f64::consts::PI / (2 * n) as f64).cos();
        let x = 0.5 * MEXP_RANGE * (t + 1.0);
        for j in 0..4 {
            a[(i, j)] = x.powi(j as i32 + 1);
        }
        y[i] = (-x).exp() - 1.0;
    }
    let at = a.transpose();
    let sol = (&at * &a).full_piv_lu().solve(&(&at * y)).expect("well-posed fit");
    Poly1D::new(&[1.0, sol[0], sol[1], sol[2], sol[3]]).expect("degree 4")
}

/// Cached [`fit_exp_poly`].
pub fn mexp_poly() -> &'static Poly1D {
    static CELL: OnceLock<Poly1D> = OnceLock::new();
    CELL.get_or_init(fit_exp_poly)
}

/// Max `|mexp(x) - exp(-x)|` over a dense sweep of `[0, 5]`.
pub fn mexp_max_error() -> f64 {
    static CELL: OnceLock<f64> = OnceLock::new();
    *CELL.get_or_init(|| {
        let p = mexp_poly();
        (0..=100_000)
            .map(|i| {
                let x = MEXP_RANGE * i as f64 / 100_000.0;
                (p.eval(x) - (-x).exp()).abs()
            })
            .fold(0.0, f64::max)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn poly(c: &[f64]) -> Poly1D {
        Poly1D::new(c).unwrap()
    }

    #[test]
    fn evaluation_and_calculus() {
        assert_eq!(poly(&[1.0, 2.0, 3.0]).eval(2.0), 17.0);
        assert_eq!(poly(&[0.0, 0.0, 1.0]).integrate().unwrap().coeffs(), &[0.0, 0.0, 0.0, 1.0 / 3.0]);
        let p = poly(&[0.3, -1.0, 2.0, 0.5, -0.25]);
        let back = p.integrate().unwrap().derivative();
        assert_eq!(back.coeffs(), p.coeffs());
        assert!((p.integral_to(1.3) - p.integrate().unwrap().eval(1.3)).abs() < 1e-15);
    }

    #[test]
    fn integral_matches_quadrature() {
        let p = poly(&[0.3, -1.0, 2.0, 0.5, -0.25]);
        let s = 1.7;
        // composite Simpson with many panels is exact for quartics up to rounding
        let n = 2000;
        let h = s / n as f64;
        let mut acc = p.eval(0.0) + p.eval(s);
        for i in 1..n {
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * p.eval(i as f64 * h);
        }
        assert!((acc * h / 3.0 - p.integral_to(s)).abs() < 1e-12);
    }

    #[test]
    fn products_and_composition() {
        assert_eq!(poly(&[1.0, 1.0]).mul(&poly(&[1.0, -1.0])).unwrap().coeffs(), &[1.0, 0.0, -1.0]);
        let p = poly(&[0.5, -1.0, 0.25, 2.0]);
        assert_eq!(p.compose(&Poly1D::linear(0.0, 1.0)).unwrap().coeffs(), p.coeffs());
        let q = poly(&[0.1, 0.7, -0.3]);
        let pq = p.compose(&q).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let x: f64 = rng.gen_range(-2.0..2.0);
            let (a, b) = (pq.eval(x), p.eval(q.eval(x)));
            assert!((a - b).abs() < 1e-12 * b.abs().max(1.0));
        }
        let big = Poly1D::new(&[1.0; 20]).unwrap();
        assert!(matches!(big.mul(&big), Err(Error::Contract(_))));
        assert!(matches!(big.compose(&poly(&[0.0, 0.0, 1.0])), Err(Error::Contract(_))));
    }

    #[test]
    fn planted_roots() {
        let p = poly(&[24.0, -50.0, 35.0, -10.0, 1.0]);
        let r = p.real_roots().unwrap();
        assert_eq!(r.len(), 4);
        for (got, want) in r.iter().zip([1.0, 2.0, 3.0, 4.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!(poly(&[1.0, 0.0, 0.0, 0.0, 1.0]).real_roots().unwrap().is_empty());
        assert!(matches!(Poly1D::zero().real_roots(), Err(Error::Contract(_))));
        assert!(poly(&[2.0]).real_roots().unwrap().is_empty());
    }

    #[test]
    fn degenerate_leading_coefficient_demotes() {
        // (x - 1)(x + 2) with a vanishing quartic term
        let p = poly(&[-2.0, 1.0, 1.0, 0.0, 1e-15]);
        let r = p.real_roots().unwrap();
        assert_eq!(r.len(), 2);
        assert!((r[0] + 2.0).abs() < 1e-12 && (r[1] - 1.0).abs() < 1e-12);
        let c = poly(&[-6.0, 11.0, -6.0, 1.0]).real_roots().unwrap();
        assert_eq!(c.len(), 3);
        let one = poly(&[-1.0, 1.0, 0.0, 1.0]).real_roots().unwrap();
        assert_eq!(one.len(), 1);
    }

    #[test]
    fn mexp_fit() {
        let m = mexp_poly();
        let frozen = [1.0, -0.94375, 0.37441, -0.069757, 0.0049439];
        for (a, b) in m.coeffs().iter().zip(frozen) {
            assert!((a - b).abs() < 1e-4 * b.abs().max(1.0), "{a} vs {b}");
        }
        let e = mexp_max_error();
        assert!(e > 7.9e-3 && e < 8.0e-3, "{e}");
        assert_eq!(m.eval(0.0), 1.0);
        assert!((m.eval(5.0) - (-5.0f64).exp()).abs() <= e);
    }

    proptest! {
        #[test]
        fn ring_axioms(a in proptest::collection::vec(-2.0f64..2.0, 1..6),
                       b in proptest::collection::vec(-2.0f64..2.0, 1..6),
                       x in -1.5f64..1.5) {
            let (p, q) = (poly(&a), poly(&b));
            let s = p.add(&q).eval(x);
            prop_assert!((s - (p.eval(x) + q.eval(x))).abs() < 1e-12);
            let m = p.mul(&q).unwrap().eval(x);
            prop_assert!((m - p.eval(x) * q.eval(x)).abs() < 1e-11);
        }

        #[test]
        fn horner_matches_power_sum(a in proptest::collection::vec(-3.0f64..3.0, 5), x in -2.0f64..2.0) {
            let direct: f64 = a.iter().enumerate().map(|(i, c)| c * x.powi(i as i32)).sum();
            prop_assert!((poly(&a).eval(x) - direct).abs() < 1e-12);
        }

        #[test]
        fn planted_real_roots_recovered(roots in proptest::collection::vec(-3.0f64..3.0, 4), lead in 0.2f64..5.0) {
            let mut p = Poly1D::constant(lead);
            for r in &roots {
                p = p.mul(&Poly1D::linear(-r, 1.0)).unwrap();
            }
            let mut sorted = roots.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let min_gap = sorted.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
            prop_assume!(min_gap > 1e-2);
            let got = p.real_roots().unwrap();
            prop_assert_eq!(got.len(), 4);
            for (g, w) in got.iter().zip(&sorted) {
                prop_assert!((g - w).abs() < 1e-8, "{} vs {}", g, w);
            }
        }
    }
}
