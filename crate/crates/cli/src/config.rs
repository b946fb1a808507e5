//! Run configuration: one TOML file plus command-line overrides.

use anyhow::{bail, Context, Result};
use fc2t2::dataio::{self, Frame, SdfSampling};
use fc2t2::layers::volumetric::{RenderOptions, TransmittanceGradient, EARLY_EXIT};
use fc2t2::ray::Camera;
use fc2t2::scenes::{orbit_cameras, BlobScene, Sdf};
use fc2t2::trainer::TrainConfig;
use fc2t2::{EngineConfig, Precision};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct RunConfig {
    /// Seeds initialization, sampling and batch order.
    pub seed: u64,
    /// Worker threads; `None` uses `FC2T2_THREADS` or all cores.
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub engine: EngineConfig,
    pub train: TrainConfig,
    pub sdf: SdfTask,
    pub depth: DepthTask,
    pub radiance: RadianceTask,
    pub render: RenderTask,
    pub bench: BenchTask,
}


/// Flag values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub levels: Option<u32>,
    pub rho: Option<usize>,
    pub alpha: Option<f64>,
    pub lsq: Option<bool>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub precision: Option<u32>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).context("invalid configuration")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(v) = o.levels {
            self.engine.levels = v;
        }
        if let Some(v) = o.rho {
            self.engine.rho = v;
        }
        if let Some(v) = o.alpha {
            self.engine.alpha = v;
        }
        if let Some(v) = o.lsq {
            self.engine.lsq = v;
        }
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.threads {
            self.threads = Some(v);
        }
        if let Some(v) = o.precision {
            self.engine.precision = Precision::from_bits(v)?;
        }
        if let Some(v) = &o.out {
            self.out = Some(v.clone());
        }
        Ok(())
    }

    /// Training settings with the run seed applied.
    pub fn train(&self) -> TrainConfig {
        TrainConfig { seed: self.seed, ..self.train.clone() }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Pre-flight validation shared by the commands.
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.threads == Some(0) {
            bail!("threads must be positive");
        }
        self.sdf.shape.validate()?;
        self.depth.shape.validate()?;
        for (name, r) in [("depth", self.depth.depth_range), ("render", self.render.depth_range)] {
            if !(r[0] >= 0.0 && r[1] > r[0]) {
                bail!("{name}.depth_range must satisfy 0 <= near < far");
            }
        }
        if self.radiance.quadrature_samples < 2 || self.radiance.gt_samples < 2 {
            bail!("quadrature sample counts must be at least 2");
        }
        Ok(())
    }
}

/// Orbit rig around the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrbitRig {
    pub count: usize,
    pub distance: f64,
    /// Radians above the horizontal plane.
    pub elevation: f64,
    /// Radians of the first camera around the vertical axis.
    pub phase: f64,
    pub fov_y: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for OrbitRig {
    fn default() -> Self {
        Self { count: 4, distance: 2.5, elevation: 0.3, phase: 0.0, fov_y: 0.7, width: 64, height: 64 }
    }
}

/// Where cameras come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CameraSpec {
    Orbit(OrbitRig),
    /// JSON camera file; relative image paths resolve against its folder.
    File { path: PathBuf },
}

impl CameraSpec {
    pub fn orbit(count: usize, elevation: f64, phase: f64, size: usize) -> Self {
        CameraSpec::Orbit(OrbitRig { count, elevation, phase, width: size, height: size, ..Default::default() })
    }

    /// Frames with image paths made absolute.
    pub fn frames(&self) -> Result<Vec<Frame>> {
        match self {
            CameraSpec::Orbit(r) => Ok(orbit_cameras(r.count, r.distance, r.elevation, r.phase, r.fov_y, r.width, r.height)?
                .into_iter()
                .map(|camera| Frame { camera, image: None })
                .collect()),
            CameraSpec::File { path } => {
                let dir = path.parent().unwrap_or(Path::new("."));
                let mut frames = dataio::load_cameras(path).with_context(|| format!("loading cameras {}", path.display()))?;
                for f in &mut frames {
                    if let Some(img) = &f.image {
                        f.image = Some(dir.join(img).to_string_lossy().into_owned());
                    }
                }
                Ok(frames)
            }
        }
    }

    pub fn cameras(&self) -> Result<Vec<Camera>> {
        Ok(self.frames()?.into_iter().map(|f| f.camera).collect())
    }

    pub fn input_path(&self) -> Option<&Path> {
        match self {
            CameraSpec::File { path } => Some(path),
            CameraSpec::Orbit(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SdfTask {
    /// Analytic shape sampled when no points file is given.
    pub shape: Sdf,
    /// CSV (`.csv`) or FCPT binary sample file with one value column.
    pub points: Option<PathBuf>,
    /// Fit the points into the domain with a 5% margin; distances scale too.
    pub normalize: bool,
    pub sampling: SdfSampling,
    /// Extra analytic samples for a held-out error.
    pub holdout: usize,
    /// Cameras for normal-shaded renders of the fitted surface.
    pub render: Option<CameraSpec>,
}

impl Default for SdfTask {
    fn default() -> Self {
        Self {
            shape: Sdf::sphere(0.5),
            points: None,
            normalize: false,
            sampling: SdfSampling::default(),
            holdout: 10_000,
            render: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DepthTask {
    /// Synthetic target used when the cameras carry no depth images.
    pub shape: Sdf,
    pub cameras: CameraSpec,
    /// Ray lengths mapped to image intensities 1 (near) to 1/255 (far);
    /// 0 marks a miss.
    pub depth_range: [f64; 2],
    pub miss_penalty: f64,
}

impl Default for DepthTask {
    fn default() -> Self {
        Self { shape: Sdf::sphere(0.5), cameras: CameraSpec::orbit(4, 0.3, 0.0, 32), depth_range: [1.0, 4.0], miss_penalty: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RendererKind {
    #[default]
    Analytic,
    Quadrature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadianceTask {
    /// Ground truth used when the cameras carry no images.
    pub scene: BlobScene,
    pub train_cameras: CameraSpec,
    pub test_cameras: CameraSpec,
    pub renderer: RendererKind,
    /// Samples per ray of the quadrature training path.
    pub quadrature_samples: usize,
    /// Samples per ray of the ground-truth renderer.
    pub gt_samples: usize,
    /// Defaults to the scene background.
    pub background: Option<[f64; 3]>,
    pub early_exit: Option<f64>,
    pub gradient: TransmittanceGradient,
}

impl Default for RadianceTask {
    fn default() -> Self {
        Self {
            scene: BlobScene::three_blobs(),
            train_cameras: CameraSpec::orbit(8, 0.3, 0.0, 64),
            test_cameras: CameraSpec::orbit(2, 0.45, 0.4, 64),
            renderer: RendererKind::Analytic,
            quadrature_samples: 128,
            gt_samples: 256,
            background: None,
            early_exit: Some(EARLY_EXIT),
            gradient: TransmittanceGradient::Polynomial,
        }
    }
}

impl RadianceTask {
    pub fn background(&self) -> [f64; 3] {
        self.background.unwrap_or(self.scene.background)
    }

    pub fn render_options(&self) -> RenderOptions {
        RenderOptions { background: self.background(), early_exit: self.early_exit, gradient: self.gradient }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RenderMode {
    /// Color and depth for radiance checkpoints, depth and normals otherwise.
    #[default]
    Auto,
    Volume,
    Depth,
    Normals,
    /// Color plus the depth of the density level set.
    Rgbd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderTask {
    pub mode: RenderMode,
    pub cameras: CameraSpec,
    pub depth_range: [f64; 2],
    /// Density level whose first crossing is the depth of a radiance field.
    pub density_threshold: f64,
    /// Report the MSE against the configured radiance scene.
    pub compare_scene: bool,
}

impl Default for RenderTask {
    fn default() -> Self {
        Self {
            mode: RenderMode::Auto,
            cameras: CameraSpec::orbit(2, 0.3, 0.25, 64),
            depth_range: [1.0, 4.0],
            density_threshold: 1.0,
            compare_scene: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchTask {
    pub levels: Vec<u32>,
    /// Wall times are measured up to this level; deeper rows report FLOPs
    /// only.
    pub timed_max_level: u32,
    /// (sources, targets) pairs.
    pub sizes: Vec<[usize; 2]>,
    pub channels: usize,
    /// Rays for the volumetric render timing.
    pub rays: usize,
}

impl Default for BenchTask {
    fn default() -> Self {
        Self { levels: vec![4, 5, 6], timed_max_level: 5, sizes: vec![[0, 0], [1000, 1000], [10_000, 10_000]], channels: 1, rays: 256 }
    }
}
