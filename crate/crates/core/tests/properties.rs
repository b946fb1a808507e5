//! Property tests of the public API: traversal geometry, expansion
//! linearity, polynomial restriction, file formats and the optimizer clip.

use fc2t2::dataio::{self, Checkpoint, Image, Normalization, PointSampleSet};
use fc2t2::layers::LayerGradients;
use fc2t2::ray::{line2poly, traverse, Ray};
use fc2t2::trainer::{Optimizer, OptimizerKind, Params, TrainConfig, CLIP_EPS};
use fc2t2::{Engine, EngineConfig, MultiIndexTable, Precision, SourceSet};
use proptest::prelude::*;
use std::sync::OnceLock;

fn engine() -> &'static Engine {
    static E: OnceLock<Engine> = OnceLock::new();
    E.get_or_init(|| Engine::new(EngineConfig { levels: 3, alpha: 60.0, ..Default::default() }).unwrap())
}

fn point(range: f64) -> impl Strategy<Value = [f64; 3]> {
    prop::array::uniform3(-range..range)
}

fn source_set(max: usize, channels: usize) -> impl Strategy<Value = SourceSet> {
    (1..max).prop_flat_map(move |n| {
        (prop::collection::vec(point(0.95), n), prop::collection::vec(-2.0..2.0f64, n * channels))
            .prop_map(move |(p, w)| SourceSet::new(p, w, channels).unwrap())
    })
}

fn ray() -> impl Strategy<Value = Ray> {
    (point(3.0), point(1.0)).prop_filter_map("degenerate direction", |(o, d)| Ray::new(o, d).ok())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn traversal_tiles_the_clipped_interval(r in ray(), level in 1usize..5) {
        let res = 1 << (level + 1);
        let segs = traverse(&r, res);
        match r.clip() {
            None => prop_assert!(segs.is_empty()),
            Some((t0, t1)) if !segs.is_empty() => {
                prop_assert!((segs[0].t0 - t0).abs() < 1e-12);
                prop_assert!((segs.last().unwrap().t1 - t1).abs() < 1e-12);
                let w = 2.0 / res as f64;
                for pair in segs.windows(2) {
                    prop_assert!((pair[0].t1 - pair[1].t0).abs() < 1e-9);
                }
                for s in &segs {
                    prop_assert!(s.t1 > s.t0);
                    let mid = r.at(0.5 * (s.t0 + s.t1));
                    for a in 0..3 {
                        let lo = -1.0 + s.box_index[a] as f64 * w;
                        prop_assert!(mid[a] >= lo - 1e-9 && mid[a] <= lo + w + 1e-9);
                    }
                }
            }
            Some(_) => {}
        }
    }

    #[test]
    fn expansion_is_linear_in_the_weights(s in source_set(12, 2), a in -2.0..2.0f64, b in -2.0..2.0f64, q in prop::collection::vec(point(0.95), 1..8)) {
        let e = engine();
        let w2: Vec<f64> = s.w.iter().rev().copied().collect();
        let s2 = s.with_weights(w2.clone()).unwrap();
        let mix = s.with_weights(s.w.iter().zip(&w2).map(|(x, y)| a * x + b * y).collect()).unwrap();
        let (f1, f2, fm) = (e.expand(&s).unwrap(), e.expand(&s2).unwrap(), e.expand(&mix).unwrap());
        let (v1, v2, vm) = (f1.values(&q).unwrap(), f2.values(&q).unwrap(), fm.values(&q).unwrap());
        let scale = 1.0 + v1.iter().chain(&v2).fold(0.0f64, |m, v| m.max(v.abs()));
        for k in 0..vm.len() {
            prop_assert!((vm[k] - (a * v1[k] + b * v2[k])).abs() <= 1e-10 * scale * (a.abs() + b.abs() + 1.0));
        }
    }

    #[test]
    fn line2poly_restricts_the_box_polynomial(s in source_set(6, 1), r in ray(), u in 0.0..1.0f64) {
        let e = engine();
        let acc = e.expand(&s).unwrap();
        let res = e.finest_res();
        for seg in traverse(&r, res) {
            let d = seg.entry_offset(&r, res);
            let poly = line2poly(acc.table(), acc.local(seg.flat, 0), d, r.dir);
            let t = u * seg.len();
            let direct = acc.eval_box(seg.flat, 0, std::array::from_fn(|a| d[a] + t * r.dir[a]));
            prop_assert!((poly.eval(t) - direct).abs() <= 1e-10 * (1.0 + direct.abs()));
        }
    }

    #[test]
    fn checkpoints_round_trip_and_reject_truncation(
        s in source_set(20, 3),
        bias in -1.0..1.0f64,
        adam in any::<bool>(),
        t in 0u64..1000,
        levels in 2u32..7,
        f32_precision in any::<bool>(),
    ) {
        let n = 3 * s.len() + s.w.len() + 1;
        let optimizer = adam.then(|| Optimizer {
            kind: OptimizerKind::Adam,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t,
            m: (0..n).map(|i| i as f64 * 1e-3).collect(),
            v: (0..n).map(|i| i as f64 * 1e-6).collect(),
        });
        let engine = EngineConfig {
            levels,
            precision: if f32_precision { Precision::F32 } else { Precision::F64 },
            ..Default::default()
        };
        let ck = Checkpoint { engine, sources: s, bias, optimizer };
        let bytes = dataio::checkpoint_bytes(&ck);
        prop_assert_eq!(&dataio::parse_checkpoint(&bytes).unwrap(), &ck);
        prop_assert_eq!(dataio::checkpoint_bytes(&dataio::parse_checkpoint(&bytes).unwrap()), bytes.clone());
        for cut in [1, bytes.len() / 2, bytes.len() - 1] {
            prop_assert!(dataio::parse_checkpoint(&bytes[..cut]).is_err());
        }
    }

    #[test]
    fn point_files_round_trip(
        rows in prop::collection::vec((point(5.0), prop::collection::vec(-1e3..1e3f64, 2)), 1..30)
    ) {
        let points = rows.iter().map(|r| r.0).collect();
        let values = rows.iter().flat_map(|r| r.1.clone()).collect();
        let set = PointSampleSet::new(points, values, 2).unwrap();
        prop_assert_eq!(&dataio::parse_points_csv(&dataio::points_csv(&set)).unwrap(), &set);
        prop_assert_eq!(&dataio::parse_points_binary(&dataio::points_binary(&set)).unwrap(), &set);
    }

    #[test]
    fn normalization_lands_inside_the_margin(pts in prop::collection::vec(point(100.0), 1..40)) {
        let n = Normalization::fit(&pts).unwrap();
        for p in &pts {
            let q = n.apply(*p);
            prop_assert!(q.iter().all(|v| v.abs() <= 1.0 - Normalization::MARGIN + 1e-9));
        }
    }

    #[test]
    fn ppm_round_trips_quantized_images(w in 1usize..6, h in 1usize..6, seed in prop::collection::vec(-0.5..1.5f64, 108)) {
        let rgb: Vec<f64> = seed.iter().take(3 * w * h).copied().collect();
        let img = Image::new(w, h, rgb).unwrap();
        let back = dataio::parse_ppm(&dataio::ppm_bytes(&img)).unwrap();
        prop_assert_eq!((back.width, back.height), (w, h));
        for (a, b) in img.rgb.iter().zip(&back.rgb) {
            prop_assert_eq!(dataio::quantize(*a) as f64 / 255.0, *b);
        }
    }

    #[test]
    fn optimizer_keeps_sources_in_the_domain(s in source_set(10, 1), g in prop::collection::vec(-1e3..1e3f64, 30), lr in 1e-3..10.0f64, adam in any::<bool>()) {
        let n = s.len();
        let grads = LayerGradients {
            p_bar: (0..n).map(|k| [g[(3 * k) % 30], g[(3 * k + 1) % 30], g[(3 * k + 2) % 30]]).collect(),
            w_bar: vec![0.5; n],
            bias_bar: 1.0,
            ..Default::default()
        };
        let cfg = TrainConfig { optimizer: if adam { OptimizerKind::Adam } else { OptimizerKind::Sgd }, ..Default::default() };
        let mut opt = Optimizer::new(&cfg);
        let mut params = Params { sources: s, bias: 0.0 };
        for _ in 0..3 {
            opt.step(&mut params, &grads, lr, true, true).unwrap();
        }
        prop_assert!(params.sources.p.iter().flatten().all(|v| v.abs() <= 1.0 - CLIP_EPS));
        prop_assert!(params.bias < 0.0);
    }
}

#[test]
fn multi_index_table_is_consistent() {
    assert!(MultiIndexTable::new(0).is_err());
    for rho in 1..=4 {
        let t = MultiIndexTable::new(rho).unwrap();
        assert_eq!(t.len(), (rho + 1) * (rho + 2) * (rho + 3) / 6);
        for i in 0..t.len() {
            assert_eq!(t.index_of(t.entry(i)).unwrap(), i);
            for axis in 0..3 {
                if let Some(j) = t.shifted(i, axis) {
                    let (a, b) = (t.entry(i), t.entry(j));
                    assert_eq!(b.checked_sub(&a), Some(fc2t2::MultiIndex::unit(axis)));
                }
            }
        }
    }
}
