//! Training, rendering and benchmark commands. Each writes a run directory
//! with a metrics log, a summary, a checkpoint or images, and a manifest.

use crate::config::{RendererKind, RenderMode, RunConfig};
use crate::output::{decode_depth, encode_depth, RunDir};
use anyhow::{bail, Context, Result};
use fc2t2::dataio::{self, Checkpoint, Image, Normalization, PointFormat, PointSampleSet, SdfSampling};
use fc2t2::expansion::flops::FlopModel;
use fc2t2::layers::volumetric::{self, QuadratureOptions, RenderOptions};
use fc2t2::layers::{explicit, root};
use fc2t2::ray::{Camera, Ray};
use fc2t2::sources::SourceSet;
use fc2t2::trainer::{self, EpochLog, LossKind, Optimizer, Params, Renderer};
use fc2t2::{Engine, EngineConfig};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Output directory of a command: `--out`, the config's `out`, or
/// `runs/<command>`.
pub fn out_dir(cfg: &RunConfig, command: &str) -> PathBuf {
    cfg.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(command))
}

fn engine(cfg: &EngineConfig) -> Result<Engine> {
    let t = Instant::now();
    let e = Engine::new(cfg.clone()).context("building the expansion engine")?;
    log::info!("engine ready in {:.2}s", t.elapsed().as_secs_f64());
    Ok(e)
}

/// Collects the metrics log and reports progress.
struct Metrics {
    csv: String,
    epochs: usize,
    start: Instant,
}

impl Metrics {
    fn new(epochs: usize) -> Self {
        Self { csv: format!("{}\n", EpochLog::CSV_HEADER), epochs, start: Instant::now() }
    }

    fn push(&mut self, log: &EpochLog) {
        self.csv.push_str(&log.csv());
        self.csv.push('\n');
        let every = (self.epochs / 20).max(1);
        if log.epoch.is_multiple_of(every) || log.epoch + 1 == self.epochs {
            log::info!(
                "epoch {}/{} loss {:.4e} extra {:.3} ({:.1}s)",
                log.epoch + 1,
                self.epochs,
                log.loss,
                log.extra,
                self.start.elapsed().as_secs_f64()
            );
        }
    }
}

fn checkpoint(cfg: &RunConfig, params: &Params, opt: &Optimizer) -> Checkpoint {
    Checkpoint { engine: cfg.engine.clone(), sources: params.sources.clone(), bias: params.bias, optimizer: Some(opt.clone()) }
}

#[derive(Debug, Clone, Serialize)]
pub struct SdfSummary {
    pub epochs: usize,
    pub samples: usize,
    pub sources: usize,
    pub final_train_mae: f64,
    pub holdout_mae: Option<f64>,
    pub normalization: Option<Normalization>,
}

/// Fits a signed distance field with the explicit layer.
pub fn fit_sdf(cfg: &RunConfig) -> Result<SdfSummary> {
    cfg.validate()?;
    let mut run = RunDir::create(&out_dir(cfg, "fit-sdf"), "fit-sdf")?;
    let task = &cfg.sdf;
    let mut normalization = None;
    let (data, holdout) = match &task.points {
        Some(path) => {
            run.input(path)?;
            let raw = dataio::load_points_raw(path, PointFormat::from_path(path))
                .with_context(|| format!("loading points {}", path.display()))?;
            if raw.channels != 1 {
                bail!("signed distance samples need exactly one value column, found {}", raw.channels);
            }
            let set = if task.normalize {
                let n = Normalization::fit(&raw.points)?;
                normalization = Some(n);
                n.apply_to(&raw, true)
            } else {
                raw
            };
            set.check_domain()?;
            (set, None)
        }
        None => {
            let sampling = SdfSampling { seed: cfg.seed, ..task.sampling };
            let data = dataio::sample_sdf(&task.shape, &sampling)?;
            let holdout = (task.holdout > 0)
                .then(|| {
                    dataio::sample_sdf(
                        &task.shape,
                        &SdfSampling { count: task.holdout, seed: cfg.seed.wrapping_add(1), ..task.sampling },
                    )
                })
                .transpose()?;
            (data, holdout)
        }
    };
    if data.is_empty() {
        bail!("no training samples");
    }
    let engine = engine(&cfg.engine)?;
    let tc = cfg.train();
    let sources = trainer::init_params(tc.sources, 1, tc.placement, tc.weight_init, tc.init_scale, tc.seed, Some(&data.points))?;
    let mut params = Params { sources, bias: tc.bias };
    let mut opt = Optimizer::new(&tc);
    let mut metrics = Metrics::new(tc.epochs);
    trainer::fit_explicit(&engine, &tc, &mut params, &mut opt, &data.points, &data.values, |log, _| {
        metrics.push(log);
        Ok(())
    })?;
    let final_train_mae = trainer::evaluate_explicit(&engine, &params, &data.points, &data.values, LossKind::Mae)?;
    let holdout_mae = holdout
        .as_ref()
        .map(|h| trainer::evaluate_explicit(&engine, &params, &h.points, &h.values, LossKind::Mae))
        .transpose()?;
    run.write("metrics.csv", metrics.csv.as_bytes())?;
    run.write("checkpoint.fcck", &dataio::checkpoint_bytes(&checkpoint(cfg, &params, &opt)))?;
    if let Some(spec) = &task.render {
        if let Some(p) = spec.input_path() {
            run.input(p)?;
        }
        for (k, cam) in spec.cameras()?.iter().enumerate() {
            let fwd = root::forward(&engine, &params.sources, params.bias, &cam.rays())?;
            run.write(&format!("normals_{k}.ppm"), &dataio::ppm_bytes(&normal_image(cam, &fwd)?))?;
        }
    }
    let summary = SdfSummary {
        epochs: tc.epochs,
        samples: data.len(),
        sources: params.sources.len(),
        final_train_mae,
        holdout_mae,
        normalization,
    };
    run.write_json("summary.json", &summary)?;
    run.finish(cfg)?;
    Ok(summary)
}

fn normal_image(cam: &Camera, fwd: &root::RootForward) -> Result<Image> {
    let rgb = fwd
        .hits
        .iter()
        .flat_map(|h| {
            let n = h.grad.iter().map(|v| v * v).sum::<f64>().sqrt();
            if h.hit && n > 0.0 {
                h.grad.map(|g| 0.5 + 0.5 * g / n)
            } else {
                [0.0; 3]
            }
        })
        .collect();
    Ok(Image::new(cam.width, cam.height, rgb)?)
}

fn depth_image(cam: &Camera, fwd: &root::RootForward, range: [f64; 2]) -> Result<Image> {
    let v: Vec<f64> = fwd.hits.iter().map(|h| encode_depth(h.hit.then_some(h.length), range)).collect();
    Ok(Image::grey(cam.width, cam.height, &v)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct DepthSummary {
    pub epochs: usize,
    pub rays: usize,
    pub target_hits: usize,
    pub final_mae: f64,
    pub hit_fraction: f64,
    pub mask_agreement: f64,
}

/// Fits ray lengths with the depth layer.
pub fn fit_depth(cfg: &RunConfig) -> Result<DepthSummary> {
    cfg.validate()?;
    let mut run = RunDir::create(&out_dir(cfg, "fit-depth"), "fit-depth")?;
    let task = &cfg.depth;
    if let Some(p) = task.cameras.input_path() {
        run.input(p)?;
    }
    let frames = task.cameras.frames()?;
    let mut rays = Vec::new();
    let mut targets = Vec::new();
    for f in &frames {
        let r = f.camera.rays();
        match &f.image {
            Some(path) => {
                run.input(Path::new(path))?;
                let img = dataio::load_image(Path::new(path)).with_context(|| format!("loading depth image {path}"))?;
                if (img.width, img.height) != (f.camera.width, f.camera.height) {
                    bail!("depth image {path} is {}x{}, camera is {}x{}", img.width, img.height, f.camera.width, f.camera.height);
                }
                targets.extend(img.rgb.chunks(3).map(|p| decode_depth(p[0], task.depth_range)));
            }
            None => targets.extend(r.iter().map(|ray| task.shape.trace(ray, ray.clip().map_or(0.0, |c| c.1)))),
        }
        rays.extend(r);
    }
    let engine = engine(&cfg.engine)?;
    let tc = cfg.train();
    let sources = trainer::init_params(tc.sources, 1, tc.placement, tc.weight_init, tc.init_scale, tc.seed, None)?;
    let mut params = Params { sources, bias: tc.bias };
    let mut opt = Optimizer::new(&tc);
    let mut metrics = Metrics::new(tc.epochs);
    let penalty = trainer::DepthLoss { miss_penalty: task.miss_penalty };
    trainer::fit_depth(&engine, &tc, &mut params, &mut opt, &rays, &targets, &penalty, |log, _| {
        metrics.push(log);
        Ok(())
    })?;
    let fwd = root::forward(&engine, &params.sources, params.bias, &rays)?;
    let pred = fwd.lengths();
    let tgt: Vec<f64> = targets.iter().map(|t| t.unwrap_or(0.0)).collect();
    let mask: Vec<bool> = fwd.hits.iter().zip(&targets).map(|(h, t)| h.hit && t.is_some()).collect();
    let final_mae = trainer::loss_and_grad(LossKind::Mae, &pred, &tgt, Some(&mask))?.loss;
    let agree = fwd.hits.iter().zip(&targets).filter(|(h, t)| h.hit == t.is_some()).count();
    run.write("metrics.csv", metrics.csv.as_bytes())?;
    run.write("checkpoint.fcck", &dataio::checkpoint_bytes(&checkpoint(cfg, &params, &opt)))?;
    let mut offset = 0;
    for (k, f) in frames.iter().enumerate() {
        let n = f.camera.width * f.camera.height;
        let sub = root::forward(&engine, &params.sources, params.bias, &rays[offset..offset + n])?;
        run.write(&format!("depth_{k}.ppm"), &dataio::ppm_bytes(&depth_image(&f.camera, &sub, task.depth_range)?))?;
        let t: Vec<f64> = targets[offset..offset + n].iter().map(|t| encode_depth(*t, task.depth_range)).collect();
        run.write(&format!("target_{k}.ppm"), &dataio::ppm_bytes(&Image::grey(f.camera.width, f.camera.height, &t)?))?;
        offset += n;
    }
    let summary = DepthSummary {
        epochs: tc.epochs,
        rays: rays.len(),
        target_hits: targets.iter().filter(|t| t.is_some()).count(),
        final_mae,
        hit_fraction: fwd.hits.iter().filter(|h| h.hit).count() as f64 / rays.len().max(1) as f64,
        mask_agreement: agree as f64 / rays.len().max(1) as f64,
    };
    run.write_json("summary.json", &summary)?;
    run.finish(cfg)?;
    Ok(summary)
}

/// Rays and target colors of a camera set, from images or the scene.
fn radiance_targets(cfg: &RunConfig, frames: &[dataio::Frame], run: &mut RunDir) -> Result<(Vec<Ray>, Vec<f64>)> {
    let mut rays = Vec::new();
    let mut target = Vec::new();
    for f in frames {
        match &f.image {
            Some(path) => {
                run.input(Path::new(path))?;
                let img = dataio::load_image(Path::new(path)).with_context(|| format!("loading image {path}"))?;
                if (img.width, img.height) != (f.camera.width, f.camera.height) {
                    bail!("image {path} is {}x{}, camera is {}x{}", img.width, img.height, f.camera.width, f.camera.height);
                }
                target.extend(img.rgb);
            }
            None => target.extend(cfg.radiance.scene.render(&f.camera, cfg.radiance.gt_samples)),
        }
        rays.extend(f.camera.rays());
    }
    Ok((rays, target))
}

pub fn renderer(cfg: &RunConfig) -> Renderer {
    let r = &cfg.radiance;
    match r.renderer {
        RendererKind::Analytic => Renderer::Analytic(r.render_options()),
        RendererKind::Quadrature => {
            Renderer::Quadrature(QuadratureOptions { samples: r.quadrature_samples, background: r.background() })
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RadianceSummary {
    pub epochs: usize,
    pub renderer: RendererKind,
    pub train_rays: usize,
    pub test_rays: usize,
    /// Full-batch MSE on the training rays after training.
    pub train_mse: f64,
    pub holdout_mse: f64,
    /// MSE of predicting the background everywhere on the held-out rays.
    pub background_mse: f64,
    /// Fraction of sources with positive clipped density.
    pub density_fraction: f64,
}

/// Trains a four-channel radiance field on posed images.
pub fn fit_radiance(cfg: &RunConfig) -> Result<RadianceSummary> {
    cfg.validate()?;
    let mut run = RunDir::create(&out_dir(cfg, "fit-radiance"), "fit-radiance")?;
    let task = &cfg.radiance;
    for spec in [&task.train_cameras, &task.test_cameras] {
        if let Some(p) = spec.input_path() {
            run.input(p)?;
        }
    }
    let train_frames = task.train_cameras.frames()?;
    let test_frames = task.test_cameras.frames()?;
    let t = Instant::now();
    let (rays, target) = radiance_targets(cfg, &train_frames, &mut run)?;
    let (test_rays, test_target) = radiance_targets(cfg, &test_frames, &mut run)?;
    log::info!("targets ready in {:.1}s", t.elapsed().as_secs_f64());
    let engine = engine(&cfg.engine)?;
    let tc = cfg.train();
    let sources = trainer::init_params(tc.sources, volumetric::CHANNELS, tc.placement, tc.weight_init, tc.init_scale, tc.seed, None)?;
    let mut params = Params { sources, bias: 0.0 };
    let mut opt = Optimizer::new(&tc);
    let rend = renderer(cfg);
    let mut metrics = Metrics::new(tc.epochs);
    trainer::fit_radiance(&engine, &tc, &rend, &mut params, &mut opt, &rays, &target, |log, _| {
        metrics.push(log);
        Ok(())
    })?;
    let train_mse = trainer::evaluate_radiance(&engine, &rend, &params.sources, &rays, &target)?;
    let test_fwd = rend.render(&engine, &params.sources, &test_rays)?;
    let pred = test_fwd.rgb();
    let holdout_mse = trainer::loss_and_grad(LossKind::Mse, &pred, &test_target, None)?.loss;
    let bg: Vec<f64> = (0..test_rays.len()).flat_map(|_| task.background()).collect();
    let background_mse = trainer::loss_and_grad(LossKind::Mse, &bg, &test_target, None)?.loss;
    run.write("metrics.csv", metrics.csv.as_bytes())?;
    run.write("checkpoint.fcck", &dataio::checkpoint_bytes(&checkpoint(cfg, &params, &opt)))?;
    let mut offset = 0;
    for (k, f) in test_frames.iter().enumerate() {
        let n = 3 * f.camera.width * f.camera.height;
        let (w, h) = (f.camera.width, f.camera.height);
        run.write(&format!("test_{k}.ppm"), &dataio::ppm_bytes(&Image::new(w, h, pred[offset..offset + n].to_vec())?))?;
        run.write(&format!("test_{k}_target.ppm"), &dataio::ppm_bytes(&Image::new(w, h, test_target[offset..offset + n].to_vec())?))?;
        offset += n;
    }
    let summary = RadianceSummary {
        epochs: tc.epochs,
        renderer: task.renderer,
        train_rays: rays.len(),
        test_rays: test_rays.len(),
        train_mse,
        holdout_mse,
        background_mse,
        density_fraction: trainer::density_fraction(&params.sources),
    };
    run.write_json("summary.json", &summary)?;
    run.finish(cfg)?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct RenderSummary {
    pub mode: RenderMode,
    pub images: Vec<String>,
    /// MSE against the configured radiance scene, when requested.
    pub scene_mse: Option<f64>,
}

/// The density level set of a radiance field as a root-layer source set:
/// `f = threshold - sigma`.
fn density_surface(sources: &SourceSet) -> Result<SourceSet> {
    let w = sources.w.iter().step_by(volumetric::CHANNELS).map(|w| -w.max(0.0)).collect();
    Ok(SourceSet::new(sources.p.clone(), w, 1)?)
}

/// Renders a checkpoint from the configured cameras.
pub fn render(cfg: &RunConfig, checkpoint_path: &Path) -> Result<RenderSummary> {
    cfg.validate()?;
    let mut run = RunDir::create(&out_dir(cfg, "render"), "render")?;
    run.input(checkpoint_path)?;
    let ck = dataio::load_checkpoint(checkpoint_path).with_context(|| format!("loading checkpoint {}", checkpoint_path.display()))?;
    let task = &cfg.render;
    let c = ck.sources.channels;
    let radiance = c == volumetric::CHANNELS;
    let mode = match task.mode {
        RenderMode::Auto if radiance => RenderMode::Rgbd,
        RenderMode::Auto if c == 1 => RenderMode::Normals,
        RenderMode::Auto => bail!("cannot render a checkpoint with {c} channels"),
        m => m,
    };
    if matches!(mode, RenderMode::Volume | RenderMode::Rgbd) && !radiance {
        bail!("{mode:?} rendering needs a 4-channel radiance checkpoint, this one has {c} channel(s)");
    }
    if matches!(mode, RenderMode::Depth | RenderMode::Normals) && !(radiance || c == 1) {
        bail!("{mode:?} rendering needs a 1-channel field or a 4-channel radiance checkpoint, this one has {c}");
    }
    if let Some(p) = task.cameras.input_path() {
        run.input(p)?;
    }
    let engine = engine(&ck.engine)?;
    let (surface, bias) = if radiance {
        (density_surface(&ck.sources)?, task.density_threshold)
    } else {
        (ck.sources.clone(), ck.bias)
    };
    let cams = task.cameras.cameras()?;
    let opts = RenderOptions { background: cfg.radiance.background(), ..cfg.radiance.render_options() };
    let mut images = Vec::new();
    let (mut sq, mut count) = (0.0, 0usize);
    for (k, cam) in cams.iter().enumerate() {
        let rays = cam.rays();
        if matches!(mode, RenderMode::Volume | RenderMode::Rgbd) {
            let fwd = volumetric::forward(&engine, &ck.sources, &rays, &opts)?;
            let rgb = fwd.rgb();
            if task.compare_scene {
                let gt = cfg.radiance.scene.render(cam, cfg.radiance.gt_samples);
                sq += rgb.iter().zip(&gt).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
                count += rgb.len();
            }
            let name = format!("view_{k}_rgb.ppm");
            run.write(&name, &dataio::ppm_bytes(&Image::new(cam.width, cam.height, rgb)?))?;
            images.push(name);
        }
        if matches!(mode, RenderMode::Depth | RenderMode::Normals | RenderMode::Rgbd) {
            let fwd = root::forward(&engine, &surface, bias, &rays)?;
            let name = format!("view_{k}_depth.ppm");
            run.write(&name, &dataio::ppm_bytes(&depth_image(cam, &fwd, task.depth_range)?))?;
            images.push(name);
            if mode == RenderMode::Normals {
                let name = format!("view_{k}_normals.ppm");
                run.write(&name, &dataio::ppm_bytes(&normal_image(cam, &fwd)?))?;
                images.push(name);
            }
        }
    }
    let summary = RenderSummary { mode, images, scene_mse: (count > 0).then(|| sq / count as f64) };
    run.write_json("summary.json", &summary)?;
    run.finish(cfg)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub level: u32,
    pub sources: usize,
    pub targets: usize,
    pub stage: &'static str,
    /// Empty when the level is above the timed limit.
    pub wall_ms: Option<f64>,
    pub flops_p2m: u64,
    pub flops_m2m: u64,
    pub flops_m2l: u64,
    pub flops_l2l: u64,
    pub flops_l2p: u64,
    pub flops_total: u64,
    pub m2l_fraction: f64,
}

pub const BENCH_HEADER: &str =
    "level,sources,targets,stage,wall_ms,flops_p2m,flops_m2m,flops_m2l,flops_l2l,flops_l2p,flops_total,m2l_fraction";

impl BenchRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{:.6}",
            self.level,
            self.sources,
            self.targets,
            self.stage,
            self.wall_ms.map_or(String::new(), |v| format!("{v:.3}")),
            self.flops_p2m,
            self.flops_m2m,
            self.flops_m2l,
            self.flops_l2l,
            self.flops_l2p,
            self.flops_total,
            self.m2l_fraction
        )
    }
}

fn random_points(rng: &mut impl rand::Rng, n: usize) -> Vec<[f64; 3]> {
    (0..n).map(|_| std::array::from_fn(|_| rng.gen_range(-0.99..0.99))).collect()
}

/// Wall times and counted FLOPs of dense expansions, queries and volumetric
/// renders.
pub fn bench(cfg: &RunConfig) -> Result<Vec<BenchRow>> {
    use rand::SeedableRng;
    let task = &cfg.bench;
    let mut run = RunDir::create(&out_dir(cfg, "bench"), "bench")?;
    let model = FlopModel::new(cfg.engine.rho);
    let c = task.channels.max(1);
    let mut rows = Vec::new();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    for &level in &task.levels {
        let timed = level <= task.timed_max_level;
        let engine = if timed { Some(engine(&EngineConfig { levels: level, ..cfg.engine.clone() })?) } else { None };
        for &[n, m] in &task.sizes {
            let b = model.expansion(level, n as u64, m as u64, c as u64);
            let row = |stage, wall_ms| BenchRow {
                level,
                sources: n,
                targets: m,
                stage,
                wall_ms,
                flops_p2m: b.p2m,
                flops_m2m: b.m2m,
                flops_m2l: b.m2l,
                flops_l2l: b.l2l,
                flops_l2p: b.l2p,
                flops_total: b.total(),
                m2l_fraction: b.m2l_fraction(),
            };
            let Some(e) = &engine else {
                rows.push(row("expand", None));
                continue;
            };
            let sources = SourceSet::new(random_points(&mut rng, n), (0..n * c).map(|i| (i % 7) as f64 - 3.0).collect(), c)?;
            let q = random_points(&mut rng, m);
            let t = Instant::now();
            let acc = e.expand(&sources)?;
            let expand_ms = 1e3 * t.elapsed().as_secs_f64();
            let t = Instant::now();
            let v = acc.values(&q)?;
            let query_ms = 1e3 * t.elapsed().as_secs_f64();
            std::hint::black_box(v);
            rows.push(row("expand", Some(expand_ms)));
            rows.push(row("query", Some(query_ms)));
            log::info!("level {level} N={n} M={m}: expand {expand_ms:.1} ms, query {query_ms:.1} ms");
        }
        if let Some(e) = &engine {
            let s = SourceSet::new(
                random_points(&mut rng, 1000),
                (0..4000).map(|i| if i % 4 == 0 { 2.0 } else { 0.5 }).collect(),
                volumetric::CHANNELS,
            )?;
            let cam = Camera::look_at([0.0, 0.5, 2.5], [0.0; 3], [0.0, 1.0, 0.0], 0.7, task.rays.max(1), 1)?;
            let acc = e.expand(&s)?;
            let t = Instant::now();
            volumetric::render_with(&acc, &cam.rays(), &RenderOptions::default())?;
            let ms = 1e3 * t.elapsed().as_secs_f64();
            let b = model.expansion(level, 1000, 0, 4);
            rows.push(BenchRow {
                level,
                sources: 1000,
                targets: task.rays,
                stage: "render",
                wall_ms: Some(ms),
                flops_p2m: b.p2m,
                flops_m2m: b.m2m,
                flops_m2l: b.m2l,
                flops_l2l: b.l2l,
                flops_l2p: 0,
                flops_total: b.total(),
                m2l_fraction: b.m2l_fraction(),
            });
        }
    }
    let mut csv = format!("{BENCH_HEADER}\n");
    for r in &rows {
        csv.push_str(&r.csv());
        csv.push('\n');
    }
    run.write("bench.csv", csv.as_bytes())?;
    run.finish(cfg)?;
    Ok(rows)
}

/// Loads a points file for the SDF command, for callers that want to
/// inspect it first.
pub fn load_sdf_points(path: &Path) -> Result<PointSampleSet> {
    Ok(dataio::load_points(path, PointFormat::from_path(path))?)
}

/// Evaluates a checkpoint's explicit field at points.
pub fn evaluate_checkpoint(ck: &Checkpoint, points: &[[f64; 3]]) -> Result<Vec<f64>> {
    let engine = Engine::new(ck.engine.clone())?;
    let fwd = explicit::forward(&engine, &ck.sources, points)?;
    Ok(fwd.values.iter().map(|v| v + ck.bias).collect())
}
