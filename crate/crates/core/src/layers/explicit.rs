//! Explicit evaluation `y = f(q; p, w)` at given targets.

use super::LayerGradients;
use crate::error::{Error, Result};
use crate::expansion::{Accessor, Engine};
use crate::sources::SourceSet;

#[derive(Debug)]
pub struct ExplicitForward {
    /// M x C.
    pub values: Vec<f64>,
    pub accessor: Accessor,
}

/// Expands over the target boxes and evaluates at `q`.
pub fn forward(engine: &Engine, sources: &SourceSet, q: &[[f64; 3]]) -> Result<ExplicitForward> {
    let accessor = engine.expand_for(sources, q)?;
    let values = accessor.values(q)?;
    Ok(ExplicitForward { values, accessor })
}

/// Gradients of `<ybar, y>`. `q_bar` comes from the cached forward accessor;
/// `w_bar` and `p_bar` from one expansion of `ybar` placed at the targets.
pub fn jvp(engine: &Engine, sources: &SourceSet, q: &[[f64; 3]], fwd: &ExplicitForward, ybar: &[f64]) -> Result<LayerGradients> {
    let c = sources.channels;
    if ybar.len() != q.len() * c {
        return Err(Error::Contract(format!("ybar has {} entries, expected {}", ybar.len(), q.len() * c)));
    }
    let grads = fwd.accessor.gradients(q)?;
    let q_bar = (0..q.len())
        .map(|m| {
            let mut g = [0.0; 3];
            for ch in 0..c {
                for a in 0..3 {
                    g[a] += ybar[m * c + ch] * grads[m * c + ch][a];
                }
            }
            g
        })
        .collect();
    let moments = crate::expansion::p2m_points(engine.table(), engine.levels(), c, q, ybar, None)?;
    let (w_bar, p_bar) = super::read_back(engine, moments, &sources.p, &sources.w)?;
    Ok(LayerGradients { p_bar, w_bar, q_bar: Some(q_bar), ..Default::default() })
}

#[cfg(test)]
mod tests {
    use super::super::testutil::*;
    use super::*;
    use crate::oracle::naive_sum;

    #[test]
    fn zeros_and_linearity() {
        let e = engine(3, 60.0);
        let s = random_sources(1, 50, 2, 0.9);
        let q: Vec<[f64; 3]> = random_sources(2, 20, 1, 0.9).p;
        let zero = s.with_weights(vec![0.0; 100]).unwrap();
        assert!(forward(&e, &zero, &q).unwrap().values.iter().all(|v| *v == 0.0));
        let a = forward(&e, &s, &q).unwrap().values;
        let b = forward(&e, &s.with_weights(s.w.iter().map(|v| 2.0 * v).collect()).unwrap(), &q).unwrap().values;
        for (x, y) in a.iter().zip(&b) {
            assert!((2.0 * x - y).abs() <= 1e-13 * y.abs().max(1.0));
        }
        let g = jvp(&e, &s, &q, &forward(&e, &s, &q).unwrap(), &vec![0.0; 40]).unwrap();
        assert!(g.w_bar.iter().all(|v| *v == 0.0) && g.p_bar.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn jvp_counts_one_expansion() {
        let e = engine(3, 60.0);
        let s = random_sources(3, 40, 1, 0.9);
        let q = random_sources(4, 30, 1, 0.9).p;
        let fwd = forward(&e, &s, &q).unwrap();
        let before = e.expansions();
        jvp(&e, &s, &q, &fwd, &random_vec(5, 30)).unwrap();
        assert_eq!(e.expansions() - before, 1);
    }

    #[test]
    fn adjoint_identity() {
        let e = engine(3, 60.0);
        let s = random_sources(6, 80, 2, 0.9);
        let q = random_sources(7, 60, 1, 0.9).p;
        let ybar = random_vec(8, 120);
        let fwd = forward(&e, &s, &q).unwrap();
        let g = jvp(&e, &s, &q, &fwd, &ybar).unwrap();
        let loss = |s: &SourceSet, q: &[[f64; 3]]| sdot(&forward(&e, s, q).unwrap().values, &ybar);
        let eps = 1e-5;
        for k in 0..5 {
            let v = random_vec(100 + k, s.w.len());
            let fd = (loss(&shift_weights(&s, &v, eps), &q) - loss(&shift_weights(&s, &v, -eps), &q)) / (2.0 * eps);
            let an = sdot(&g.w_bar, &v);
            assert!((fd - an).abs() <= 1e-6 * an.abs().max(1.0), "w: {fd} vs {an}");
        }
        // location derivatives are exact only away from box faces, so use a
        // tiny step
        let eps = 1e-7;
        for k in 0..5 {
            let v = random_vec(200 + k, 3 * s.len());
            let fd = (loss(&shift_points(&s, &v, eps), &q) - loss(&shift_points(&s, &v, -eps), &q)) / (2.0 * eps);
            let an = sdot(&flatten(&g.p_bar), &v);
            assert!((fd - an).abs() <= 1e-4 * an.abs().max(1.0), "p: {fd} vs {an}");
            let qv = random_vec(300 + k, 3 * q.len());
            let qp: Vec<[f64; 3]> = q.iter().enumerate().map(|(m, x)| std::array::from_fn(|a| x[a] + eps * qv[3 * m + a])).collect();
            let qm: Vec<[f64; 3]> = q.iter().enumerate().map(|(m, x)| std::array::from_fn(|a| x[a] - eps * qv[3 * m + a])).collect();
            let fd = (loss(&s, &qp) - loss(&s, &qm)) / (2.0 * eps);
            let an = sdot(&flatten(g.q_bar.as_ref().unwrap()), &qv);
            assert!((fd - an).abs() <= 1e-4 * an.abs().max(1.0), "q: {fd} vs {an}");
        }
    }

    #[test]
    fn single_pair_matches_closed_form() {
        let e = engine(4, 200.0);
        let s = SourceSet::new(vec![[0.1, 0.05, -0.02]], vec![0.7], 1).unwrap();
        let q = vec![[0.13, 0.02, 0.01]];
        let fwd = forward(&e, &s, &q).unwrap();
        let want = naive_sum(&q, &s, e.kernel());
        assert!((fwd.values[0] - want[0]).abs() < 1e-2 * want[0].abs());
        let g = jvp(&e, &s, &q, &fwd, &[1.3]).unwrap();
        let d = [s.p[0][0] - q[0][0], s.p[0][1] - q[0][1], s.p[0][2] - q[0][2]];
        let grad = e.kernel().gradient(d);
        // derivatives of the truncated expansion lose one order of accuracy,
        // so compare against the gradient norm with a looser bound
        let expect: [f64; 3] = std::array::from_fn(|a| 0.7 * grad[a] * 1.3);
        let norm = expect.iter().map(|v| v * v).sum::<f64>().sqrt();
        for a in 0..3 {
            assert!((g.p_bar[0][a] - expect[a]).abs() < 3e-2 * norm, "{a}: {} vs {}", g.p_bar[0][a], expect[a]);
        }
    }
}
