//! Analytic scenes for training targets and tests: Gaussian blob radiance
//! fields, signed distance shapes, and camera rigs.

use crate::error::{Error, Result};
use crate::oracle::quadrature_render;
use crate::ray::{Camera, Ray};
use serde::{Deserialize, Serialize};

/// Isotropic Gaussian density blob with a constant color.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub center: [f64; 3],
    /// Standard deviation.
    pub radius: f64,
    /// Peak density.
    pub density: f64,
    pub color: [f64; 3],
}

impl Blob {
    fn weight(&self, x: [f64; 3]) -> f64 {
        let r2: f64 = (0..3).map(|a| (x[a] - self.center[a]).powi(2)).sum();
        (-0.5 * r2 / (self.radius * self.radius)).exp()
    }
}

/// Emission-absorption scene: density is the sum of the blobs, color the
/// density-weighted mix of blob colors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobScene {
    pub blobs: Vec<Blob>,
    pub background: [f64; 3],
}

impl BlobScene {
    /// Red, green and blue blobs around the origin on a dark background.
    pub fn three_blobs() -> Self {
        Self {
            blobs: vec![
                Blob { center: [-0.25, -0.1, 0.0], radius: 0.12, density: 12.0, color: [0.9, 0.15, 0.1] },
                Blob { center: [0.22, -0.05, 0.12], radius: 0.1, density: 15.0, color: [0.1, 0.85, 0.2] },
                Blob { center: [0.0, 0.22, -0.15], radius: 0.14, density: 10.0, color: [0.15, 0.25, 0.95] },
            ],
            background: [0.05, 0.05, 0.08],
        }
    }

    /// Density and the three colors at `x`.
    pub fn field(&self, x: [f64; 3]) -> [f64; 4] {
        let mut out = [0.0; 4];
        let mut total = 0.0;
        for b in &self.blobs {
            let g = b.weight(x);
            out[0] += b.density * g;
            total += g;
            for c in 0..3 {
                out[c + 1] += b.color[c] * g;
            }
        }
        if total > 0.0 {
            for v in &mut out[1..] {
                *v /= total;
            }
        }
        out
    }

    /// Ground-truth color of one ray by exact-exp quadrature.
    pub fn render_ray(&self, ray: &Ray, samples: usize) -> [f64; 3] {
        match ray.clip() {
            Some((t0, t1)) => quadrature_render(&|x| self.field(x), ray, t0, t1, samples, self.background).0,
            None => self.background,
        }
    }

    /// Row-major H x W x 3 image.
    pub fn render(&self, camera: &Camera, samples: usize) -> Vec<f64> {
        let rays = camera.rays();
        crate::par::map(rays.len(), |i| self.render_ray(&rays[i], samples)).concat()
    }
}

/// Cameras on a circle around the origin looking at it, starting at
/// `phase` radians, with the given elevation angle.
pub fn orbit_cameras(
    count: usize,
    distance: f64,
    elevation: f64,
    phase: f64,
    fov_y: f64,
    width: usize,
    height: usize,
) -> Result<Vec<Camera>> {
    (0..count)
        .map(|i| {
            let a = phase + 2.0 * std::f64::consts::PI * i as f64 / count as f64;
            let eye = [
                distance * elevation.cos() * a.cos(),
                distance * elevation.sin(),
                distance * elevation.cos() * a.sin(),
            ];
            Camera::look_at(eye, [0.0; 3], [0.0, 1.0, 0.0], fov_y, width, height)
        })
        .collect()
}

/// Analytic signed distance shapes, negative inside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum Sdf {
    Sphere { center: [f64; 3], radius: f64 },
    /// Axis-aligned box with half extents.
    Box { center: [f64; 3], half: [f64; 3] },
    /// Torus in the xz-plane.
    Torus { center: [f64; 3], major: f64, minor: f64 },
    Union { parts: Vec<Sdf> },
}

impl Sdf {
    pub fn sphere(radius: f64) -> Self {
        Sdf::Sphere { center: [0.0; 3], radius }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            Sdf::Sphere { radius, .. } => *radius > 0.0,
            Sdf::Box { half, .. } => half.iter().all(|h| *h > 0.0),
            Sdf::Torus { major, minor, .. } => *minor > 0.0 && major > minor,
            Sdf::Union { parts } => {
                for p in parts {
                    p.validate()?;
                }
                !parts.is_empty()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid shape {self:?}")))
        }
    }

    pub fn eval(&self, x: [f64; 3]) -> f64 {
        match self {
            Sdf::Sphere { center, radius } => norm(sub(x, *center)) - radius,
            Sdf::Box { center, half } => {
                let q: [f64; 3] = std::array::from_fn(|a| (x[a] - center[a]).abs() - half[a]);
                let outside = norm(q.map(|v| v.max(0.0)));
                outside + q[0].max(q[1]).max(q[2]).min(0.0)
            }
            Sdf::Torus { center, major, minor } => {
                let d = sub(x, *center);
                let ring = (d[0] * d[0] + d[2] * d[2]).sqrt() - major;
                (ring * ring + d[1] * d[1]).sqrt() - minor
            }
            Sdf::Union { parts } => parts.iter().map(|p| p.eval(x)).fold(f64::INFINITY, f64::min),
        }
    }

    /// Central-difference gradient.
    pub fn gradient(&self, x: [f64; 3]) -> [f64; 3] {
        let h = 1e-6;
        std::array::from_fn(|a| {
            let (mut xp, mut xm) = (x, x);
            xp[a] += h;
            xm[a] -= h;
            (self.eval(xp) - self.eval(xm)) / (2.0 * h)
        })
    }

    /// First hit of a ray by sphere tracing; `None` when it misses within
    /// `t_max`.
    pub fn trace(&self, ray: &Ray, t_max: f64) -> Option<f64> {
        let (mut prev, mut t) = (0.0, 0.0);
        for _ in 0..512 {
            let d = self.eval(ray.at(t));
            if d.abs() < 1e-10 {
                return Some(t);
            }
            if d < 0.0 {
                // the minimum step overshot the surface: bisect back to it
                let (mut lo, mut hi) = (prev, t);
                for _ in 0..100 {
                    let mid = 0.5 * (lo + hi);
                    if self.eval(ray.at(mid)) > 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                return (t > 0.0).then_some(0.5 * (lo + hi));
            }
            prev = t;
            t += d.max(1e-7);
            if t > t_max {
                return None;
            }
        }
        None
    }
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Exact ray length to a sphere, or `None`.
pub fn sphere_depth(ray: &Ray, center: [f64; 3], radius: f64) -> Option<f64> {
    let oc = sub(ray.origin, center);
    let b = crate::ray::dot(oc, ray.dir);
    let c = crate::ray::dot(oc, oc) - radius * radius;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let t = -b - disc.sqrt();
    (t >= 0.0).then_some(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_field_and_render() {
        let s = BlobScene::three_blobs();
        let f = s.field(s.blobs[1].center);
        assert!(f[0] >= s.blobs[1].density);
        // color is a convex mix of blob colors
        assert!(f[1..].iter().all(|v| (0.0..=1.0).contains(v)));
        let miss = Ray::new([2.0, 2.0, 2.0], [1.0, 0.0, 0.0]).unwrap();
        assert_eq!(s.render_ray(&miss, 64), s.background);
        let cams = orbit_cameras(4, 2.5, 0.3, 0.0, 0.7, 8, 8).unwrap();
        let img = s.render(&cams[0], 256);
        assert_eq!(img.len(), 8 * 8 * 3);
        // the center pixel sees the blobs
        let center = &img[(4 * 8 + 4) * 3..(4 * 8 + 4) * 3 + 3];
        assert!(center.iter().zip(&s.background).any(|(a, b)| (a - b).abs() > 0.05));
    }

    #[test]
    fn sdf_shapes() {
        let s = Sdf::sphere(0.5);
        assert!((s.eval([0.0; 3]) + 0.5).abs() < 1e-15);
        assert!((s.eval([1.0, 0.0, 0.0]) - 0.5).abs() < 1e-15);
        let b = Sdf::Box { center: [0.0; 3], half: [0.2, 0.3, 0.4] };
        assert!((b.eval([0.5, 0.0, 0.0]) - 0.3).abs() < 1e-15);
        assert!((b.eval([0.0; 3]) + 0.2).abs() < 1e-15);
        let t = Sdf::Torus { center: [0.0; 3], major: 0.5, minor: 0.1 };
        assert!((t.eval([0.5, 0.0, 0.0]) + 0.1).abs() < 1e-15);
        let u = Sdf::Union { parts: vec![s.clone(), b.clone()] };
        assert_eq!(u.eval([0.9, 0.0, 0.0]), s.eval([0.9, 0.0, 0.0]).min(b.eval([0.9, 0.0, 0.0])));
        assert!(Sdf::Union { parts: vec![] }.validate().is_err());
        let g = s.gradient([0.3, 0.4, 0.0]);
        assert!((g[0] - 0.6).abs() < 1e-6 && (g[1] - 0.8).abs() < 1e-6);
    }

    #[test]
    fn depth_by_intersection_and_tracing() {
        let ray = Ray::new([0.0, 0.0, -2.0], [0.0, 0.0, 1.0]).unwrap();
        assert!((sphere_depth(&ray, [0.0; 3], 0.5).unwrap() - 1.5).abs() < 1e-15);
        assert!((Sdf::sphere(0.5).trace(&ray, 10.0).unwrap() - 1.5).abs() < 1e-9);
        let miss = Ray::new([0.0, 1.0, -2.0], [0.0, 0.0, 1.0]).unwrap();
        assert!(sphere_depth(&miss, [0.0; 3], 0.5).is_none());
        assert!(Sdf::sphere(0.5).trace(&miss, 10.0).is_none());
        // oblique rays approach the surface geometrically and must not stall
        for k in 0..50 {
            let y = -0.49 + 0.02 * k as f64;
            let ray = Ray::new([2.3, 0.7, 0.0], [-2.3, y - 0.7, 0.1 * y]).unwrap();
            let exact = sphere_depth(&ray, [0.0; 3], 0.5);
            let traced = Sdf::sphere(0.5).trace(&ray, 10.0);
            assert_eq!(exact.is_some(), traced.is_some(), "ray {k}");
            if let (Some(a), Some(b)) = (exact, traced) {
                assert!((a - b).abs() < 1e-8, "ray {k}: {a} vs {b}");
            }
        }
    }
}
