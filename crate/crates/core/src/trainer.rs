//! Initialization, losses, optimizers and training loops for the layers.

use crate::error::{Error, Result};
use crate::expansion::Engine;
use crate::layers::volumetric::{self, QuadratureOptions, RenderOptions};
use crate::layers::{explicit, root, LayerGradients};
use crate::ray::Ray;
use crate::sources::SourceSet;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Sources are kept this far inside the domain after every step.
pub const CLIP_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

impl OptimizerKind {
    pub fn code(self) -> u8 {
        match self {
            OptimizerKind::Sgd => 0,
            OptimizerKind::Adam => 1,
        }
    }

    pub fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(OptimizerKind::Sgd),
            1 => Ok(OptimizerKind::Adam),
            _ => Err(Error::Format(format!("unknown optimizer code {c}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    Mae,
    Mse,
}

/// Where initial sources go.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Placement {
    /// Uniform in the open domain.
    #[default]
    Uniform,
    /// Uniform in a centered ball.
    Ball { radius: f64 },
    /// Randomly chosen training sample locations, jittered.
    Samples { jitter: f64 },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightInit {
    /// Uniform in `[-|scale|, |scale|]`.
    #[default]
    Uniform,
    /// Every weight equals `scale`, which may be negative.
    Constant,
}

/// Learning rate from a given epoch on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrStep {
    pub epoch: usize,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    /// Piecewise-constant overrides of `lr`, sorted by epoch.
    pub lr_schedule: Vec<LrStep>,
    pub epochs: usize,
    pub l1_weight: f64,
    pub loss: LossKind,
    pub sources: usize,
    pub placement: Placement,
    pub weight_init: WeightInit,
    pub init_scale: f64,
    /// Initial field offset for root layers.
    pub bias: f64,
    pub learn_positions: bool,
    pub learn_bias: bool,
    /// Rays per step for ray layers; `None` is full batch.
    pub batch: Option<usize>,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::Adam,
            lr: 1e-3,
            lr_schedule: Vec::new(),
            epochs: 100,
            l1_weight: 0.0,
            loss: LossKind::Mae,
            sources: 1000,
            placement: Placement::Uniform,
            weight_init: WeightInit::Uniform,
            init_scale: 1e-2,
            bias: 0.0,
            learn_positions: true,
            learn_bias: true,
            batch: None,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if self.lr_schedule.iter().any(|s| !(s.lr > 0.0 && s.lr.is_finite())) {
            return bad("scheduled learning rates must be positive".into());
        }
        if self.lr_schedule.windows(2).any(|w| w[0].epoch >= w[1].epoch) {
            return bad("learning rate schedule must be sorted by epoch".into());
        }
        if self.sources == 0 {
            return bad("need at least one source".into());
        }
        if !(self.l1_weight >= 0.0) {
            return bad("l1_weight must be non-negative".into());
        }
        if !self.init_scale.is_finite() || !self.bias.is_finite() {
            return bad("init_scale and bias must be finite".into());
        }
        if self.batch == Some(0) {
            return bad("batch must be positive".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return bad("invalid Adam constants".into());
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr_schedule.iter().take_while(|s| s.epoch <= epoch).last().map_or(self.lr, |s| s.lr)
    }
}

/// Trainable parameters: sources plus a scalar field offset.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub sources: SourceSet,
    pub bias: f64,
}

/// Initial sources. `samples` is required for [`Placement::Samples`].
pub fn init_params(
    n: usize,
    channels: usize,
    placement: Placement,
    weight_init: WeightInit,
    scale: f64,
    seed: u64,
    samples: Option<&[[f64; 3]]>,
) -> Result<SourceSet> {
    if n == 0 || channels == 0 {
        return Err(Error::Config("need at least one source and channel".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lim = 1.0 - CLIP_EPS;
    let p: Vec<[f64; 3]> = match placement {
        Placement::Uniform => (0..n).map(|_| std::array::from_fn(|_| rng.gen_range(-lim..lim))).collect(),
        Placement::Ball { radius } => {
            if !(radius > 0.0) {
                return Err(Error::Config("ball radius must be positive".into()));
            }
            (0..n)
                .map(|_| loop {
                    let x: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
                    if x.iter().map(|v| v * v).sum::<f64>() <= 1.0 {
                        break x.map(|v| (v * radius).clamp(-lim, lim));
                    }
                })
                .collect()
        }
        Placement::Samples { jitter } => {
            let s = samples.filter(|s| !s.is_empty()).ok_or_else(|| Error::Config("sample placement needs sample points".into()))?;
            (0..n)
                .map(|_| {
                    let q = s[rng.gen_range(0..s.len())];
                    std::array::from_fn(|a| (q[a] + jitter * rng.gen_range(-1.0..1.0)).clamp(-lim, lim))
                })
                .collect()
        }
    };
    let w = match weight_init {
        WeightInit::Uniform if scale != 0.0 => {
            let s = scale.abs();
            (0..n * channels).map(|_| rng.gen_range(-s..=s)).collect()
        }
        WeightInit::Uniform => vec![0.0; n * channels],
        WeightInit::Constant => vec![scale; n * channels],
    };
    SourceSet::new(p, w, channels)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub loss: f64,
    /// Gradient with respect to each prediction.
    pub grad: Vec<f64>,
    pub valid: usize,
    /// No valid outputs: loss and gradient are zero.
    pub empty: bool,
}

/// Mean absolute or squared error over entries with `mask` set.
pub fn loss_and_grad(kind: LossKind, pred: &[f64], target: &[f64], mask: Option<&[bool]>) -> Result<LossValue> {
    if pred.len() != target.len() || mask.is_some_and(|m| m.len() != pred.len()) {
        return Err(Error::Contract("prediction, target and mask lengths differ".into()));
    }
    let on = |i: usize| mask.is_none_or(|m| m[i]);
    let valid = (0..pred.len()).filter(|i| on(*i)).count();
    let mut grad = vec![0.0; pred.len()];
    if valid == 0 {
        return Ok(LossValue { loss: 0.0, grad, valid, empty: true });
    }
    let inv = 1.0 / valid as f64;
    let mut loss = 0.0;
    for i in (0..pred.len()).filter(|i| on(*i)) {
        let r = pred[i] - target[i];
        match kind {
            LossKind::Mae => {
                loss += r.abs();
                grad[i] = if r > 0.0 { inv } else if r < 0.0 { -inv } else { 0.0 };
            }
            LossKind::Mse => {
                loss += r * r;
                grad[i] = 2.0 * r * inv;
            }
        }
    }
    Ok(LossValue { loss: loss * inv, grad, valid, empty: false })
}

/// `lambda * sum |w|` and its subgradient (0 at 0).
pub fn l1_penalty(w: &[f64], lambda: f64) -> (f64, Vec<f64>) {
    let value = lambda * w.iter().map(|v| v.abs()).sum::<f64>();
    let grad = w.iter().map(|v| if *v > 0.0 { lambda } else if *v < 0.0 { -lambda } else { 0.0 }).collect();
    (value, grad)
}

/// First-order optimizer over the flattened parameters `p ++ w ++ [bias]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Optimizer {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self { kind: cfg.optimizer, beta1: cfg.beta1, beta2: cfg.beta2, eps: cfg.adam_eps, t: 0, m: Vec::new(), v: Vec::new() }
    }

    /// Applies one update. Frozen parts get no update; locations are clipped
    /// back into the domain.
    pub fn step(&mut self, params: &mut Params, grads: &LayerGradients, lr: f64, learn_positions: bool, learn_bias: bool) -> Result<()> {
        let n = params.sources.len();
        let nw = params.sources.w.len();
        if grads.p_bar.len() != n || grads.w_bar.len() != nw {
            return Err(Error::Contract("gradient shapes do not match parameters".into()));
        }
        let mut g = Vec::with_capacity(3 * n + nw + 1);
        for v in &grads.p_bar {
            g.extend(v.iter().map(|x| if learn_positions { *x } else { 0.0 }));
        }
        g.extend_from_slice(&grads.w_bar);
        g.push(if learn_bias { grads.bias_bar } else { 0.0 });
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            let what = if i < 3 * n {
                format!("location of source {}", i / 3)
            } else if i < 3 * n + nw {
                format!("weight {} of source {}", (i - 3 * n) % params.sources.channels, (i - 3 * n) / params.sources.channels)
            } else {
                "bias".to_string()
            };
            return Err(Error::NonFinite(format!("gradient of {what} is {}", g[i])));
        }
        let update: Vec<f64> = match self.kind {
            OptimizerKind::Sgd => g.iter().map(|v| lr * v).collect(),
            OptimizerKind::Adam => {
                if self.m.len() != g.len() {
                    self.m = vec![0.0; g.len()];
                    self.v = vec![0.0; g.len()];
                    self.t = 0;
                }
                self.t += 1;
                let b1t = 1.0 - self.beta1.powi(self.t as i32);
                let b2t = 1.0 - self.beta2.powi(self.t as i32);
                g.iter()
                    .enumerate()
                    .map(|(i, gi)| {
                        self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * gi;
                        self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * gi * gi;
                        lr * (self.m[i] / b1t) / ((self.v[i] / b2t).sqrt() + self.eps)
                    })
                    .collect()
            }
        };
        let lim = 1.0 - CLIP_EPS;
        for (k, q) in params.sources.p.iter_mut().enumerate() {
            for a in 0..3 {
                q[a] = (q[a] - update[3 * k + a]).clamp(-lim, lim);
            }
        }
        for (w, u) in params.sources.w.iter_mut().zip(&update[3 * n..3 * n + nw]) {
            *w -= u;
        }
        params.bias -= update[3 * n + nw];
        Ok(())
    }
}

/// One line of a training log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    /// Data loss (without regularization) averaged over the epoch's steps.
    pub loss: f64,
    pub l1: f64,
    /// Valid outputs seen in the epoch.
    pub valid: usize,
    /// Task-specific extra metric: hit fraction for depth, fraction of
    /// sources with positive density for radiance, 0 otherwise.
    pub extra: f64,
}

impl EpochLog {
    pub const CSV_HEADER: &'static str = "epoch,lr,loss,l1,valid,extra";

    /// Full-precision CSV line, stable across runs.
    pub fn csv(&self) -> String {
        format!("{},{:e},{:e},{:e},{},{:e}", self.epoch, self.lr, self.loss, self.l1, self.valid, self.extra)
    }
}

fn add_l1(g: &mut LayerGradients, w: &[f64], lambda: f64) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    let (v, lg) = l1_penalty(w, lambda);
    g.w_bar.iter_mut().zip(&lg).for_each(|(a, b)| *a += b);
    v
}

/// Fits `f(q) + bias` to targets (M x C) with the explicit layer, full batch.
pub fn fit_explicit(
    engine: &Engine,
    cfg: &TrainConfig,
    params: &mut Params,
    opt: &mut Optimizer,
    q: &[[f64; 3]],
    targets: &[f64],
    mut on_epoch: impl FnMut(&EpochLog, &Params) -> Result<()>,
) -> Result<()> {
    cfg.validate()?;
    let c = params.sources.channels;
    if targets.len() != q.len() * c {
        return Err(Error::Input("targets must be M x C".into()));
    }
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let fwd = explicit::forward(engine, &params.sources, q)?;
        let pred: Vec<f64> = fwd.values.iter().map(|v| v + params.bias).collect();
        let lv = loss_and_grad(cfg.loss, &pred, targets, None)?;
        let mut g = explicit::jvp(engine, &params.sources, q, &fwd, &lv.grad)?;
        g.bias_bar = lv.grad.iter().sum();
        let l1 = add_l1(&mut g, &params.sources.w, cfg.l1_weight);
        opt.step(params, &g, lr, cfg.learn_positions, cfg.learn_bias)?;
        on_epoch(&EpochLog { epoch, lr, loss: lv.loss, l1, valid: lv.valid, extra: 0.0 }, params)?;
    }
    Ok(())
}

/// Mean absolute or squared error of `f(q) + bias` against targets.
pub fn evaluate_explicit(engine: &Engine, params: &Params, q: &[[f64; 3]], targets: &[f64], kind: LossKind) -> Result<f64> {
    let fwd = explicit::forward(engine, &params.sources, q)?;
    let pred: Vec<f64> = fwd.values.iter().map(|v| v + params.bias).collect();
    Ok(loss_and_grad(kind, &pred, targets, None)?.loss)
}

/// Depth targets with optional penalties for disagreeing hit masks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DepthLoss {
    /// Weight of `|f|` at the target surface point on rays that miss but
    /// should hit, and of `-f` just past the predicted hit on rays that hit
    /// but should miss.
    pub miss_penalty: f64,
}

impl Default for DepthLoss {
    fn default() -> Self {
        Self { miss_penalty: 0.1 }
    }
}

/// Batches of ray indices for one epoch, shuffled deterministically.
fn batches(n: usize, batch: Option<usize>, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    match batch {
        Some(b) if b < n => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            idx.shuffle(&mut rng);
            idx.chunks(b).map(|c| c.to_vec()).collect()
        }
        _ => vec![idx],
    }
}

/// Loss and gradients of the depth layer on a set of rays.
pub fn depth_step(
    engine: &Engine,
    params: &Params,
    rays: &[Ray],
    targets: &[Option<f64>],
    kind: LossKind,
    penalty: &DepthLoss,
) -> Result<(LossValue, LayerGradients, usize)> {
    let fwd = root::forward(engine, &params.sources, params.bias, rays)?;
    let pred = fwd.lengths();
    let tgt: Vec<f64> = targets.iter().map(|t| t.unwrap_or(0.0)).collect();
    let mask: Vec<bool> = fwd.hits.iter().zip(targets).map(|(h, t)| h.hit && t.is_some()).collect();
    let lv = loss_and_grad(kind, &pred, &tgt, Some(&mask))?;
    let mut adj = root::RootAdjoint::depth(&fwd, &lv.grad)?;
    let m = rays.len() as f64;
    for (i, (h, t)) in fwd.hits.iter().zip(targets).enumerate() {
        match (h.hit, t) {
            (false, Some(t)) if penalty.miss_penalty > 0.0 => {
                let x = rays[i].at(*t);
                if crate::sources::is_in_domain(x) {
                    let v = fwd.accessor.value(x).map(|v| v[0] + params.bias).unwrap_or(0.0);
                    adj.push_point(x, penalty.miss_penalty * v.signum() / m);
                }
            }
            (true, None) if penalty.miss_penalty > 0.0 => {
                adj.push_point(h.point, -penalty.miss_penalty / m);
            }
            _ => {}
        }
    }
    let hits = fwd.hits.iter().filter(|h| h.hit).count();
    let g = adj.gradients(engine, &params.sources)?;
    Ok((lv, g, hits))
}

/// Fits ray lengths with the depth layer. Aborts when every ray is dead at
/// initialization.
pub fn fit_depth(
    engine: &Engine,
    cfg: &TrainConfig,
    params: &mut Params,
    opt: &mut Optimizer,
    rays: &[Ray],
    targets: &[Option<f64>],
    penalty: &DepthLoss,
    mut on_epoch: impl FnMut(&EpochLog, &Params) -> Result<()>,
) -> Result<()> {
    cfg.validate()?;
    if targets.len() != rays.len() {
        return Err(Error::Input("need one depth target per ray".into()));
    }
    let init = root::forward(engine, &params.sources, params.bias, rays)?;
    if !init.hits.iter().any(|h| h.hit) && cfg.epochs > 0 {
        return Err(Error::Input(
            "every ray is dead at initialization; raise the bias or shrink the weight initialization".into(),
        ));
    }
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let (mut loss, mut valid, mut hits, mut l1) = (0.0, 0, 0, 0.0);
        let bs = batches(rays.len(), cfg.batch, cfg.seed, epoch);
        for b in &bs {
            let r: Vec<Ray> = b.iter().map(|i| rays[*i]).collect();
            let t: Vec<Option<f64>> = b.iter().map(|i| targets[*i]).collect();
            let (lv, mut g, h) = depth_step(engine, params, &r, &t, cfg.loss, penalty)?;
            l1 += add_l1(&mut g, &params.sources.w, cfg.l1_weight);
            opt.step(params, &g, lr, cfg.learn_positions, cfg.learn_bias)?;
            loss += lv.loss * lv.valid as f64;
            valid += lv.valid;
            hits += h;
        }
        let log = EpochLog {
            epoch,
            lr,
            loss: if valid > 0 { loss / valid as f64 } else { 0.0 },
            l1: l1 / bs.len() as f64,
            valid,
            extra: hits as f64 / rays.len().max(1) as f64,
        };
        on_epoch(&log, params)?;
    }
    Ok(())
}

/// Which renderer drives radiance training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Renderer {
    Analytic(RenderOptions),
    Quadrature(QuadratureOptions),
}

impl Renderer {
    pub fn render(&self, engine: &Engine, sources: &SourceSet, rays: &[Ray]) -> Result<volumetric::VolumeForward> {
        match self {
            Renderer::Analytic(o) => volumetric::forward(engine, sources, rays, o),
            Renderer::Quadrature(q) => volumetric::quadrature_forward(engine, sources, rays, q),
        }
    }

    pub fn jvp(
        &self,
        engine: &Engine,
        sources: &SourceSet,
        rays: &[Ray],
        fwd: &volumetric::VolumeForward,
        ybar: &[[f64; 3]],
    ) -> Result<LayerGradients> {
        match self {
            Renderer::Analytic(o) => volumetric::jvp(engine, sources, rays, fwd, ybar, o),
            Renderer::Quadrature(q) => volumetric::quadrature_jvp(engine, sources, rays, fwd, ybar, q),
        }
    }
}

/// Fraction of sources whose clipped density is positive.
pub fn density_fraction(sources: &SourceSet) -> f64 {
    let c = sources.channels;
    let on = sources.w.iter().step_by(c).filter(|w| **w > 0.0).count();
    on as f64 / sources.len().max(1) as f64
}

/// Mean squared error of rendered colors against targets (M x 3).
pub fn evaluate_radiance(engine: &Engine, renderer: &Renderer, sources: &SourceSet, rays: &[Ray], targets: &[f64]) -> Result<f64> {
    let fwd = renderer.render(engine, sources, rays)?;
    Ok(loss_and_grad(LossKind::Mse, &fwd.rgb(), targets, None)?.loss)
}

/// Fits a four-channel radiance field to pixel colors (M x 3) with ray
/// mini-batches.
pub fn fit_radiance(
    engine: &Engine,
    cfg: &TrainConfig,
    renderer: &Renderer,
    params: &mut Params,
    opt: &mut Optimizer,
    rays: &[Ray],
    targets: &[f64],
    mut on_epoch: impl FnMut(&EpochLog, &Params) -> Result<()>,
) -> Result<()> {
    cfg.validate()?;
    if targets.len() != rays.len() * 3 {
        return Err(Error::Input("targets must be M x 3".into()));
    }
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let (mut loss, mut valid, mut l1) = (0.0, 0, 0.0);
        let bs = batches(rays.len(), cfg.batch, cfg.seed, epoch);
        for b in &bs {
            let r: Vec<Ray> = b.iter().map(|i| rays[*i]).collect();
            let t: Vec<f64> = b.iter().flat_map(|i| targets[3 * i..3 * i + 3].iter().copied()).collect();
            let fwd = renderer.render(engine, &params.sources, &r)?;
            let lv = loss_and_grad(cfg.loss, &fwd.rgb(), &t, None)?;
            let ybar: Vec<[f64; 3]> = lv.grad.chunks(3).map(|g| [g[0], g[1], g[2]]).collect();
            let mut g = renderer.jvp(engine, &params.sources, &r, &fwd, &ybar)?;
            l1 += add_l1(&mut g, &params.sources.w, cfg.l1_weight);
            opt.step(params, &g, lr, cfg.learn_positions, false)?;
            loss += lv.loss * lv.valid as f64;
            valid += lv.valid;
        }
        let log = EpochLog {
            epoch,
            lr,
            loss: if valid > 0 { loss / valid as f64 } else { 0.0 },
            l1: l1 / bs.len() as f64,
            valid,
            extra: density_fraction(&params.sources),
        };
        on_epoch(&log, params)?;
    }
    Ok(())
}
