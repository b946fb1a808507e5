use crate::error::{Error, Result};

/// Source locations `p` (N x 3) and per-channel weights `w` (N x C,
/// row-major). All coordinates lie strictly inside `(-1, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSet {
    pub p: Vec<[f64; 3]>,
    pub w: Vec<f64>,
    pub channels: usize,
}

impl SourceSet {
    pub fn new(p: Vec<[f64; 3]>, w: Vec<f64>, channels: usize) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Input("source set needs at least one channel".into()));
        }
        if w.len() != p.len() * channels {
            return Err(Error::Input(format!(
                "weights have {} entries, expected {} x {}",
                w.len(),
                p.len(),
                channels
            )));
        }
        check_in_domain(&p, "source")?;
        Ok(Self { p, w, channels })
    }

    pub fn empty(channels: usize) -> Self {
        Self { p: Vec::new(), w: Vec::new(), channels }
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn weights(&self, n: usize) -> &[f64] {
        &self.w[n * self.channels..(n + 1) * self.channels]
    }

    pub fn with_weights(&self, w: Vec<f64>) -> Result<Self> {
        Self::new(self.p.clone(), w, self.channels)
    }
}

pub fn is_in_domain(q: [f64; 3]) -> bool {
    q.iter().all(|v| *v > -1.0 && *v < 1.0)
}

/// Errors with the first offending index when a point is not strictly
/// inside `(-1, 1)^3`.
pub fn check_in_domain(points: &[[f64; 3]], what: &str) -> Result<()> {
    match points.iter().position(|q| !is_in_domain(*q)) {
        Some(i) => Err(Error::Input(format!(
            "{what} {i} at {:?} is not strictly inside (-1, 1)^3",
            points[i]
        ))),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validates_shape_and_domain() {
        assert!(SourceSet::new(vec![[0.0; 3]], vec![1.0, 2.0], 2).is_ok());
        assert!(SourceSet::new(vec![[0.0; 3]], vec![1.0], 2).is_err());
        assert!(SourceSet::new(vec![[1.0, 0.0, 0.0]], vec![1.0], 1).is_err());
        assert!(SourceSet::new(vec![], vec![], 0).is_err());
        let err = check_in_domain(&[[0.0; 3], [0.0, -1.5, 0.0]], "target").unwrap_err();
        assert!(err.to_string().contains("target 1"));
    }
}
