//! Cross-module behavior: engine vs the naive sum, layers on the same
//! accessor, training loops and file round trips through the filesystem.

use fc2t2::dataio::{self, Checkpoint, PointFormat, PointSampleSet};
use fc2t2::layers::volumetric::{self, QuadratureOptions, RenderOptions};
use fc2t2::layers::{explicit, root};
use fc2t2::ray::Ray;
use fc2t2::scenes::{orbit_cameras, Sdf};
use fc2t2::trainer::{self, DepthLoss, LossKind, Optimizer, Params, Placement, Renderer, TrainConfig, WeightInit};
use fc2t2::{oracle, par, Engine, EngineConfig, SourceSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn points(r: &mut ChaCha8Rng, n: usize, spread: f64) -> Vec<[f64; 3]> {
    (0..n).map(|_| std::array::from_fn(|_| r.gen_range(-spread..spread))).collect()
}

fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

fn lumpy_ball(n: usize) -> SourceSet {
    trainer::init_params(n, 1, Placement::Ball { radius: 0.5 }, WeightInit::Constant, -0.1, 3, None).unwrap()
}

#[test]
fn multichannel_expansion_matches_the_naive_sum() {
    let e = Engine::new(EngineConfig { levels: 3, alpha: 60.0, ..Default::default() }).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let p = points(&mut r, 500, 0.99);
    let w = (0..1500).map(|_| r.gen_range(-1.0..1.0)).collect();
    let s = SourceSet::new(p, w, 3).unwrap();
    let q = points(&mut r, 300, 0.99);
    let fast = explicit::forward(&e, &s, &q).unwrap().values;
    let slow = oracle::naive_sum(&q, &s, e.kernel());
    assert!(rel_l2(&fast, &slow) < 1e-2, "{}", rel_l2(&fast, &slow));
}

#[test]
fn sequential_and_parallel_paths_agree_bitwise() {
    let e = Engine::new(EngineConfig { levels: 3, alpha: 60.0, ..Default::default() }).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(2);
    let s = SourceSet::new(points(&mut r, 400, 0.9), (0..1600).map(|_| r.gen_range(-1.0..1.0)).collect(), 4).unwrap();
    let cams = orbit_cameras(1, 2.5, 0.3, 0.0, 0.7, 12, 12).unwrap();
    let rays = cams[0].rays();
    let ybar: Vec<[f64; 3]> = (0..rays.len()).map(|_| std::array::from_fn(|_| r.gen_range(-1.0..1.0))).collect();
    let opts = RenderOptions::default();
    let run = || {
        let f = volumetric::forward(&e, &s, &rays, &opts).unwrap();
        let g = volumetric::jvp(&e, &s, &rays, &f, &ybar, &opts).unwrap();
        (f.rgb(), g)
    };
    let parallel = run();
    par::set_sequential(true);
    let sequential = run();
    par::set_sequential(false);
    assert_eq!(parallel.0, sequential.0);
    assert_eq!(parallel.1, sequential.1);
}

#[test]
fn depth_targets_from_the_layer_itself_give_zero_loss() {
    let e = Engine::new(EngineConfig { levels: 4, alpha: 200.0, ..Default::default() }).unwrap();
    let s = lumpy_ball(800);
    let params = Params { sources: s, bias: 0.1 };
    let rays = orbit_cameras(2, 2.5, 0.3, 0.0, 0.7, 16, 16).unwrap().iter().flat_map(|c| c.rays()).collect::<Vec<_>>();
    let fwd = root::forward(&e, &params.sources, params.bias, &rays).unwrap();
    let targets: Vec<Option<f64>> = fwd.hits.iter().map(|h| h.hit.then_some(h.length)).collect();
    assert!(targets.iter().filter(|t| t.is_some()).count() > 50);
    let (lv, g, hits) = trainer::depth_step(&e, &params, &rays, &targets, LossKind::Mae, &DepthLoss::default()).unwrap();
    assert_eq!(lv.loss, 0.0);
    assert_eq!(hits, targets.iter().filter(|t| t.is_some()).count());
    // the MAE subgradient at zero residual is zero
    assert!(g.w_bar.iter().all(|v| *v == 0.0));
}

#[test]
fn sdf_training_converges_on_a_small_problem() {
    let e = Engine::new(EngineConfig { levels: 3, alpha: 60.0, ..Default::default() }).unwrap();
    let sdf = Sdf::sphere(0.5);
    let data = dataio::sample_sdf(&sdf, &dataio::SdfSampling { count: 4000, seed: 1, ..Default::default() }).unwrap();
    let cfg = TrainConfig { epochs: 40, lr: 1e-2, sources: 800, placement: Placement::Samples { jitter: 0.02 }, ..Default::default() };
    let sources = trainer::init_params(cfg.sources, 1, cfg.placement, cfg.weight_init, cfg.init_scale, 0, Some(&data.points)).unwrap();
    let mut params = Params { sources, bias: 0.0 };
    let mut opt = Optimizer::new(&cfg);
    let mut log = Vec::new();
    trainer::fit_explicit(&e, &cfg, &mut params, &mut opt, &data.points, &data.values, |l, _| {
        log.push(l.loss);
        Ok(())
    })
    .unwrap();
    assert_eq!(log.len(), 40);
    assert!(log[39] < 0.5 * log[0], "{} -> {}", log[0], log[39]);
    let mae = trainer::evaluate_explicit(&e, &params, &data.points, &data.values, LossKind::Mae).unwrap();
    assert!((mae - log[39]).abs() < 0.2 * log[39]);
}

#[test]
fn analytic_and_quadrature_radiance_renderers_agree() {
    let e = Engine::new(EngineConfig { levels: 4, alpha: 200.0, ..Default::default() }).unwrap();
    let s = trainer::init_params(600, 4, Placement::Ball { radius: 0.5 }, WeightInit::Uniform, 0.5, 4, None).unwrap();
    let rays: Vec<Ray> = orbit_cameras(1, 2.5, 0.3, 0.0, 0.7, 10, 10).unwrap()[0].rays();
    let bg = [0.2, 0.3, 0.4];
    let a = Renderer::Analytic(RenderOptions { background: bg, early_exit: None, ..Default::default() });
    let q = Renderer::Quadrature(QuadratureOptions { samples: 4096, background: bg });
    let (ra, rq) = (a.render(&e, &s, &rays).unwrap().rgb(), q.render(&e, &s, &rays).unwrap().rgb());
    let worst = ra.iter().zip(&rq).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(worst < 2.0 * fc2t2::poly1d::mexp_max_error() + 1e-3, "{worst}");
}

#[test]
fn files_round_trip_through_the_filesystem() {
    let dir = tempfile::tempdir().unwrap();
    let set = PointSampleSet::new(vec![[0.1, -0.2, 0.3], [0.5, 0.5, -0.5]], vec![0.25, -1.5], 1).unwrap();
    for (name, fmt) in [("p.csv", PointFormat::Csv), ("p.fcpt", PointFormat::Binary)] {
        let path = dir.path().join(name);
        dataio::save_points(&path, &set, fmt).unwrap();
        assert_eq!(PointFormat::from_path(&path), fmt);
        assert_eq!(dataio::load_points(&path, fmt).unwrap(), set);
    }
    let ck = Checkpoint { engine: EngineConfig::default(), sources: lumpy_ball(10), bias: 0.1, optimizer: None };
    let path = dir.path().join("c.fcck");
    dataio::save_checkpoint(&path, &ck).unwrap();
    assert_eq!(dataio::load_checkpoint(&path).unwrap(), ck);
    // a newer version is refused with a clear message
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[4] = 99;
    let err = dataio::parse_checkpoint(&bytes).unwrap_err().to_string();
    assert!(err.contains("newer"), "{err}");
    // points outside the domain are named by index
    let bad = PointSampleSet::new(vec![[0.0; 3], [1.5, 0.0, 0.0]], vec![0.0, 0.0], 1).unwrap();
    let path = dir.path().join("bad.csv");
    dataio::save_points(&path, &bad, PointFormat::Csv).unwrap();
    let err = dataio::load_points(&path, PointFormat::Csv).unwrap_err().to_string();
    assert!(err.contains("point 1"), "{err}");
}
