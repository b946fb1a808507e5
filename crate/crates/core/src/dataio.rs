//! File formats: point samples, cameras, images and checkpoints.
//!
//! All binary formats are little-endian.
//!
//! Point samples (`FCPT`):
//! `b"FCPT"`, version `u32` = 1, M `u64`, C `u32`, then M rows of
//! `x y z v1..vC` as `f64`.
//!
//! Checkpoints (`FCCK`), version 1:
//! `b"FCCK"`, version `u32`, levels `u32`, rho `u32`, family `u32`,
//! alpha `f64`, lsq `u8`, precision bits `u32`, tolerance flag `u8` and
//! tolerance `f64`, N `u64`, C `u32`, N x 3 locations `f64`, N x C weights
//! `f64`, bias `f64`, optimizer flag `u8`, and when set: kind `u8`, step
//! `u64`, beta1/beta2/eps `f64`, state length `u64`, first and second
//! moments as `f64`.

use crate::error::{Error, Result};
use crate::expansion::{EngineConfig, Precision};
use crate::kernel::KernelFamily;
use crate::ray::Camera;
use crate::scenes::Sdf;
use crate::sources::{is_in_domain, SourceSet};
use crate::trainer::{Optimizer, OptimizerKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

const POINTS_MAGIC: &[u8; 4] = b"FCPT";
const POINTS_VERSION: u32 = 1;
const CHECKPOINT_MAGIC: &[u8; 4] = b"FCCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Sample locations with `channels` values each.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSampleSet {
    pub points: Vec<[f64; 3]>,
    /// Row-major M x C.
    pub values: Vec<f64>,
    pub channels: usize,
}

impl PointSampleSet {
    pub fn new(points: Vec<[f64; 3]>, values: Vec<f64>, channels: usize) -> Result<Self> {
        if values.len() != points.len() * channels {
            return Err(Error::Input(format!(
                "{} values do not fill {} points with {channels} channels",
                values.len(),
                points.len()
            )));
        }
        Ok(Self { points, values, channels })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Errors naming the first point outside the open domain.
    pub fn check_domain(&self) -> Result<()> {
        match self.points.iter().position(|p| !is_in_domain(*p)) {
            Some(i) => Err(Error::Input(format!("point {i} at {:?} lies outside (-1, 1)^3", self.points[i]))),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PointFormat {
    Csv,
    Binary,
}

impl PointFormat {
    /// `.csv` is CSV, anything else binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => PointFormat::Csv,
            _ => PointFormat::Binary,
        }
    }
}

/// Loads samples and checks that they lie inside the domain.
pub fn load_points(path: &Path, format: PointFormat) -> Result<PointSampleSet> {
    let set = load_points_raw(path, format)?;
    set.check_domain()?;
    Ok(set)
}

/// Loads samples without the domain check, for data that still needs
/// [`Normalization`].
pub fn load_points_raw(path: &Path, format: PointFormat) -> Result<PointSampleSet> {
    let bytes = std::fs::read(path)?;
    match format {
        PointFormat::Csv => parse_points_csv(&String::from_utf8_lossy(&bytes)),
        PointFormat::Binary => parse_points_binary(&bytes),
    }
}

pub fn save_points(path: &Path, set: &PointSampleSet, format: PointFormat) -> Result<()> {
    let bytes = match format {
        PointFormat::Csv => points_csv(set).into_bytes(),
        PointFormat::Binary => points_binary(set),
    };
    std::fs::write(path, bytes)?;
    Ok(())
}

/// CSV text with header `x,y,z,v1..vC`; values use the shortest exact
/// representation so the round trip is lossless.
pub fn points_csv(set: &PointSampleSet) -> String {
    let mut s = String::from("x,y,z");
    for c in 1..=set.channels {
        s.push_str(&format!(",v{c}"));
    }
    s.push('\n');
    for (i, p) in set.points.iter().enumerate() {
        let row: Vec<String> = p
            .iter()
            .chain(&set.values[i * set.channels..(i + 1) * set.channels])
            .map(|v| format!("{v:?}"))
            .collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

pub fn parse_points_csv(text: &str) -> Result<PointSampleSet> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(Error::Parse { line: 1, msg: "empty file, expected header x,y,z,v1..".into() })?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 3 || cols[..3] != ["x", "y", "z"] {
        return Err(Error::Parse { line: 1, msg: format!("header must start with x,y,z, got {header:?}") });
    }
    for (k, c) in cols[3..].iter().enumerate() {
        if *c != format!("v{}", k + 1) {
            return Err(Error::Parse { line: 1, msg: format!("expected column v{} but found {c:?}", k + 1) });
        }
    }
    let channels = cols.len() - 3;
    let (mut points, mut values) = (Vec::new(), Vec::new());
    for (i, line) in lines {
        let line_no = i + 1;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != cols.len() {
            return Err(Error::Parse { line: line_no, msg: format!("expected {} fields, found {}", cols.len(), fields.len()) });
        }
        let mut row = Vec::with_capacity(fields.len());
        for f in fields {
            let v: f64 = f.parse().map_err(|_| Error::Parse { line: line_no, msg: format!("not a number: {f:?}") })?;
            if !v.is_finite() {
                return Err(Error::Parse { line: line_no, msg: format!("non-finite value {f:?}") });
            }
            row.push(v);
        }
        points.push([row[0], row[1], row[2]]);
        values.extend_from_slice(&row[3..]);
    }
    PointSampleSet::new(points, values, channels)
}

pub fn points_binary(set: &PointSampleSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + 8 * set.len() * (3 + set.channels));
    out.extend_from_slice(POINTS_MAGIC);
    out.extend_from_slice(&POINTS_VERSION.to_le_bytes());
    out.extend_from_slice(&(set.len() as u64).to_le_bytes());
    out.extend_from_slice(&(set.channels as u32).to_le_bytes());
    for (i, p) in set.points.iter().enumerate() {
        for v in p.iter().chain(&set.values[i * set.channels..(i + 1) * set.channels]) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn parse_points_binary(bytes: &[u8]) -> Result<PointSampleSet> {
    let mut r = Reader::new(bytes, "point file");
    r.magic(POINTS_MAGIC)?;
    let version = r.u32()?;
    if version != POINTS_VERSION {
        return Err(Error::Format(format!("unsupported point file version {version}, expected {POINTS_VERSION}")));
    }
    let m = r.len_u64(8 * 3)?;
    let c = r.u32()? as usize;
    let row = 3 + c;
    if (r.remaining() as u128) != (m as u128) * (row as u128) * 8 {
        return Err(Error::Format(format!(
            "point file body has {} bytes, header declares {m} rows of {row} values",
            r.remaining()
        )));
    }
    let (mut points, mut values) = (Vec::with_capacity(m), Vec::with_capacity(m * c));
    for _ in 0..m {
        points.push([r.f64()?, r.f64()?, r.f64()?]);
        for _ in 0..c {
            values.push(r.f64()?);
        }
    }
    PointSampleSet::new(points, values, c)
}

/// Affine map `x -> (x - center) * scale` into the domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub center: [f64; 3],
    pub scale: f64,
}

impl Normalization {
    pub const MARGIN: f64 = 0.05;

    /// Uniform scaling that centers the bounding box and leaves a 5% margin
    /// to the domain boundary.
    pub fn fit(points: &[[f64; 3]]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Input("cannot normalize an empty point set".into()));
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in points {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let center = std::array::from_fn(|a| 0.5 * (lo[a] + hi[a]));
        let half = (0..3).map(|a| 0.5 * (hi[a] - lo[a])).fold(0.0, f64::max);
        let scale = if half > 0.0 { (1.0 - Self::MARGIN) / half } else { 1.0 };
        Ok(Self { center, scale })
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|a| (p[a] - self.center[a]) * self.scale)
    }

    /// Maps points and rescales distance-like values by the same factor.
    pub fn apply_to(&self, set: &PointSampleSet, scale_values: bool) -> PointSampleSet {
        let s = if scale_values { self.scale } else { 1.0 };
        PointSampleSet {
            points: set.points.iter().map(|p| self.apply(*p)).collect(),
            values: set.values.iter().map(|v| v * s).collect(),
            channels: set.channels,
        }
    }
}

/// One posed frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub camera: Camera,
    pub image: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct FrameRecord {
    eye: [f64; 3],
    gaze: [f64; 3],
    up: [f64; 3],
    fov_y: f64,
    width: usize,
    height: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image: Option<String>,
}

/// Parses a JSON array of frames; gaze and up are normalized.
pub fn parse_cameras(text: &str) -> Result<Vec<Frame>> {
    let records: Vec<FrameRecord> =
        serde_json::from_str(text).map_err(|e| Error::Parse { line: e.line(), msg: e.to_string() })?;
    records
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let camera = Camera::new(r.eye, r.gaze, r.up, r.fov_y, r.width, r.height)
                .map_err(|e| Error::Input(format!("camera {i}: {e}")))?;
            Ok(Frame { camera, image: r.image })
        })
        .collect()
}

pub fn load_cameras(path: &Path) -> Result<Vec<Frame>> {
    parse_cameras(&std::fs::read_to_string(path)?)
}

pub fn cameras_json(frames: &[Frame]) -> String {
    let records: Vec<FrameRecord> = frames
        .iter()
        .map(|f| FrameRecord {
            eye: f.camera.eye,
            gaze: f.camera.gaze,
            up: f.camera.up,
            fov_y: f.camera.fov_y,
            width: f.camera.width,
            height: f.camera.height,
            image: f.image.clone(),
        })
        .collect();
    serde_json::to_string_pretty(&records).expect("camera records serialize")
}

pub fn save_cameras(path: &Path, frames: &[Frame]) -> Result<()> {
    std::fs::write(path, cameras_json(frames))?;
    Ok(())
}

/// Row-major RGB image with values nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, rgb: Vec<f64>) -> Result<Self> {
        if rgb.len() != width * height * 3 {
            return Err(Error::Input(format!("{} values do not fill a {width}x{height} RGB image", rgb.len())));
        }
        Ok(Self { width, height, rgb })
    }

    /// Grey image from one value per pixel.
    pub fn grey(width: usize, height: usize, v: &[f64]) -> Result<Self> {
        Self::new(width, height, v.iter().flat_map(|x| [*x; 3]).collect())
    }
}

/// Clamps to `[0, 1]` and rounds half up to 8 bits.
pub fn quantize(v: f64) -> u8 {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (v * 255.0 + 0.5).floor() as u8
}

pub fn ppm_bytes(img: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.rgb.iter().map(|v| quantize(*v)));
    out
}

pub fn save_image(path: &Path, img: &Image) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&ppm_bytes(img))?;
    Ok(())
}

pub fn parse_ppm(bytes: &[u8]) -> Result<Image> {
    // header: magic, width, height, maxval separated by whitespace and
    // comments, then exactly one whitespace byte
    let mut pos = 0;
    let mut tokens = Vec::new();
    while tokens.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PPM header".into()));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if tokens[0] != "P6" {
        return Err(Error::Format(format!("expected P6 image, found {:?}", tokens[0])));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad PPM header field {s:?}")));
    let (w, h, max) = (num(&tokens[1])?, num(&tokens[2])?, num(&tokens[3])?);
    if max != 255 {
        return Err(Error::Format(format!("only 8-bit PPM is supported, maxval {max}")));
    }
    let body = &bytes[(pos + 1).min(bytes.len())..];
    if body.len() < w * h * 3 {
        return Err(Error::Format(format!("PPM body has {} bytes, expected {}", body.len(), w * h * 3)));
    }
    Image::new(w, h, body[..w * h * 3].iter().map(|b| *b as f64 / 255.0).collect())
}

pub fn load_image(path: &Path) -> Result<Image> {
    parse_ppm(&std::fs::read(path)?)
}

/// Trained parameters with the engine configuration they were trained for.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub engine: EngineConfig,
    pub sources: SourceSet,
    pub bias: f64,
    pub optimizer: Option<Optimizer>,
}

pub fn checkpoint_bytes(ck: &Checkpoint) -> Vec<u8> {
    let mut o = Vec::new();
    let e = &ck.engine;
    o.extend_from_slice(CHECKPOINT_MAGIC);
    o.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    o.extend_from_slice(&e.levels.to_le_bytes());
    o.extend_from_slice(&(e.rho as u32).to_le_bytes());
    o.extend_from_slice(&e.family.code().to_le_bytes());
    o.extend_from_slice(&e.alpha.to_le_bytes());
    o.push(e.lsq as u8);
    o.extend_from_slice(&e.precision.bits().to_le_bytes());
    o.push(e.admissibility_tol.is_some() as u8);
    o.extend_from_slice(&e.admissibility_tol.unwrap_or(0.0).to_le_bytes());
    let s = &ck.sources;
    o.extend_from_slice(&(s.len() as u64).to_le_bytes());
    o.extend_from_slice(&(s.channels as u32).to_le_bytes());
    for v in s.p.iter().flatten().chain(&s.w).chain(std::iter::once(&ck.bias)) {
        o.extend_from_slice(&v.to_le_bytes());
    }
    match &ck.optimizer {
        None => o.push(0),
        Some(opt) => {
            o.push(1);
            o.push(opt.kind.code());
            o.extend_from_slice(&opt.t.to_le_bytes());
            for v in [opt.beta1, opt.beta2, opt.eps] {
                o.extend_from_slice(&v.to_le_bytes());
            }
            o.extend_from_slice(&(opt.m.len() as u64).to_le_bytes());
            for v in opt.m.iter().chain(&opt.v) {
                o.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    o
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::new(bytes, "checkpoint");
    r.magic(CHECKPOINT_MAGIC)?;
    let version = r.u32()?;
    if version > CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "checkpoint version {version} is newer than supported version {CHECKPOINT_VERSION}"
        )));
    }
    if version == 0 {
        return Err(Error::Format("checkpoint version 0 is invalid".into()));
    }
    let levels = r.u32()?;
    let rho = r.u32()? as usize;
    let family = KernelFamily::from_code(r.u32()?)?;
    let alpha = r.f64()?;
    let lsq = r.flag()?;
    let precision = Precision::from_bits(r.u32()?)?;
    let has_tol = r.flag()?;
    let tol = r.f64()?;
    let engine = EngineConfig { levels, rho, alpha, family, lsq, precision, admissibility_tol: has_tol.then_some(tol) };
    let n = r.len_u64(24)?;
    let c = r.u32()? as usize;
    if c == 0 {
        return Err(Error::Format("checkpoint declares zero channels".into()));
    }
    let mut p = Vec::with_capacity(n);
    for _ in 0..n {
        p.push([r.f64()?, r.f64()?, r.f64()?]);
    }
    let w = r.f64s(n.checked_mul(c).ok_or_else(|| Error::Format("checkpoint size overflow".into()))?)?;
    let bias = r.f64()?;
    let optimizer = if r.flag()? {
        let kind = OptimizerKind::from_code(r.u8()?)?;
        let t = r.u64()?;
        let (beta1, beta2, eps) = (r.f64()?, r.f64()?, r.f64()?);
        let len = r.len_u64(16)?;
        let m = r.f64s(len)?;
        let v = r.f64s(len)?;
        Some(Optimizer { kind, beta1, beta2, eps, t, m, v })
    } else {
        None
    };
    if r.remaining() != 0 {
        return Err(Error::Format(format!("{} trailing bytes after checkpoint", r.remaining())));
    }
    let sources = SourceSet::new(p, w, c)?;
    Ok(Checkpoint { engine, sources, bias, optimizer })
}

/// Writes through a temporary file so a failed write leaves no partial
/// checkpoint behind.
pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, checkpoint_bytes(ck))?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    parse_checkpoint(&std::fs::read(path)?)
}

/// Bounds-checked little-endian reader.
struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], what: &'static str) -> Self {
        Self { bytes, pos: 0, what }
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take<const K: usize>(&mut self) -> Result<[u8; K]> {
        if self.remaining() < K {
            return Err(Error::Format(format!("truncated {}: needed {K} bytes at offset {}", self.what, self.pos)));
        }
        let out = self.bytes[self.pos..self.pos + K].try_into().unwrap();
        self.pos += K;
        Ok(out)
    }

    fn magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let m = self.take::<4>().map_err(|_| Error::Format(format!("{} too short for its magic", self.what)))?;
        if &m != magic {
            return Err(Error::Format(format!(
                "bad {} magic {:?}, expected {:?}",
                self.what,
                String::from_utf8_lossy(&m),
                String::from_utf8_lossy(magic)
            )));
        }
        Ok(())
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take::<1>()?[0])
    }

    fn flag(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(Error::Format(format!("bad flag byte {b} in {}", self.what))),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }

    /// A count whose items need at least `min_bytes` each; rejects counts
    /// the remaining bytes cannot hold.
    fn len_u64(&mut self, min_bytes: usize) -> Result<usize> {
        let n = self.u64()?;
        if n as u128 * min_bytes as u128 > self.remaining() as u128 {
            return Err(Error::Format(format!("truncated {}: count {n} exceeds the remaining bytes", self.what)));
        }
        Ok(n as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

/// Training set for an analytic signed distance function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SdfSampling {
    pub count: usize,
    /// Standard deviations of the normal offsets around the surface; samples
    /// are split evenly between them.
    pub sigmas: [f64; 2],
    /// Fraction drawn uniformly from the domain instead.
    pub uniform_fraction: f64,
    pub seed: u64,
}

impl Default for SdfSampling {
    fn default() -> Self {
        Self { count: 100_000, sigmas: [0.05, 0.0158], uniform_fraction: 0.0, seed: 0 }
    }
}

/// Draws near-surface samples by projecting uniform points onto the surface
/// and offsetting them with Gaussian noise; values are exact distances.
/// Samples that leave the domain are redrawn.
pub fn sample_sdf(sdf: &Sdf, cfg: &SdfSampling) -> Result<PointSampleSet> {
    sdf.validate()?;
    if !(cfg.sigmas.iter().all(|s| *s > 0.0) && (0.0..=1.0).contains(&cfg.uniform_fraction)) {
        return Err(Error::Config("sampling sigmas must be positive and the uniform fraction in [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let lim = 1.0 - 1e-9;
    let n_uniform = (cfg.count as f64 * cfg.uniform_fraction).round() as usize;
    let mut points = Vec::with_capacity(cfg.count);
    let mut attempts = 0usize;
    while points.len() < cfg.count {
        attempts += 1;
        if attempts > 1000 * cfg.count.max(1) {
            return Err(Error::Config("shape has no surface inside the domain".into()));
        }
        let x: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-lim..lim));
        if points.len() < n_uniform {
            points.push(x);
            continue;
        }
        let Some(s) = project(sdf, x) else { continue };
        let k = points.len() - n_uniform;
        let sigma = cfg.sigmas[k % 2];
        let normal = Normal::new(0.0, sigma).expect("positive sigma");
        let q: [f64; 3] = std::array::from_fn(|a| s[a] + normal.sample(&mut rng));
        if is_in_domain(q) {
            points.push(q);
        }
    }
    let values = points.iter().map(|p| sdf.eval(*p)).collect();
    PointSampleSet::new(points, values, 1)
}

/// Newton projection onto the zero set.
fn project(sdf: &Sdf, mut x: [f64; 3]) -> Option<[f64; 3]> {
    for _ in 0..32 {
        let d = sdf.eval(x);
        if d.abs() < 1e-9 {
            return Some(x);
        }
        let g = sdf.gradient(x);
        let gg: f64 = g.iter().map(|v| v * v).sum();
        if gg < 1e-12 {
            return None;
        }
        x = std::array::from_fn(|a| x[a] - d * g[a] / gg);
    }
    (sdf.eval(x).abs() < 1e-6).then_some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn le(v: &[f64]) -> Vec<u8> {
        v.iter().flat_map(|x| x.to_le_bytes()).collect()
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let set = PointSampleSet::new(vec![[0.1, -0.2, 0.3], [0.0, 0.5, -0.999]], vec![1.0 / 3.0, -2.5], 1).unwrap();
        let text = points_csv(&set);
        assert!(text.starts_with("x,y,z,v1\n"));
        assert_eq!(parse_points_csv(&text).unwrap(), set);
        assert!(matches!(parse_points_csv(""), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_points_csv("x,y,z,v1\n0,0,0,1\n0,0,zz,1\n"), Err(Error::Parse { line: 3, .. })));
        assert!(matches!(parse_points_csv("x,y,z,v1\n0,0,0\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_points_csv("a,b,c\n"), Err(Error::Parse { line: 1, .. })));
        let bad = parse_points_csv("x,y,z\n0,0,0\n1.5,0,0\n").unwrap();
        match bad.check_domain() {
            Err(Error::Input(m)) => assert!(m.contains("point 1"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn binary_fixture_bytes() {
        // hand-assembled: magic, version 1, M=2, C=1, rows
        let mut bytes = b"FCPT".to_vec();
        bytes.extend_from_slice(&[1, 0, 0, 0]);
        bytes.extend_from_slice(&[2, 0, 0, 0, 0, 0, 0, 0]);
        bytes.extend_from_slice(&[1, 0, 0, 0]);
        bytes.extend_from_slice(&le(&[0.5, -0.25, 0.125, 2.0, 0.0, 0.0, 0.0, -1.0]));
        let set = parse_points_binary(&bytes).unwrap();
        assert_eq!(set.points, vec![[0.5, -0.25, 0.125], [0.0; 3]]);
        assert_eq!(set.values, vec![2.0, -1.0]);
        assert_eq!(points_binary(&set), bytes);
        assert!(parse_points_binary(&bytes[..bytes.len() - 1]).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(matches!(parse_points_binary(&wrong), Err(Error::Format(_))));
        assert!(parse_points_binary(&[]).is_err());
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let set = PointSampleSet::new(vec![[0.1, 0.2, 0.3], [-0.5, 0.5, 0.0]], vec![1.0, 2.0, 3.0, 4.0], 2).unwrap();
        for (name, fmt) in [("a.csv", PointFormat::Csv), ("a.bin", PointFormat::Binary)] {
            let path = dir.path().join(name);
            assert_eq!(PointFormat::from_path(&path), fmt);
            save_points(&path, &set, fmt).unwrap();
            assert_eq!(load_points(&path, fmt).unwrap(), set);
        }
        assert!(matches!(load_points(&dir.path().join("missing.csv"), PointFormat::Csv), Err(Error::Io(_))));
    }

    #[test]
    fn normalization_leaves_margin() {
        let pts = vec![[10.0, 0.0, 5.0], [14.0, 1.0, 6.0], [12.0, 0.5, 5.5]];
        let n = Normalization::fit(&pts).unwrap();
        let mapped: Vec<[f64; 3]> = pts.iter().map(|p| n.apply(*p)).collect();
        let max = mapped.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((max - 0.95).abs() < 1e-12);
        assert_eq!(mapped[2], [0.0; 3]);
    }

    #[test]
    fn cameras() {
        let text = r#"[
            {"eye": [0, 0, 2], "gaze": [0, 0, -3], "up": [0, 2, 0], "fov_y": 0.8, "width": 4, "height": 3, "image": "a.ppm"},
            {"eye": [2, 0, 0], "gaze": [-1, 0, 0], "up": [0, 1, 0], "fov_y": 0.8, "width": 4, "height": 3},
            {"eye": [0, 2, 0], "gaze": [0, -1, 0], "up": [0, 0, 1], "fov_y": 0.5, "width": 2, "height": 2}
        ]"#;
        let frames = parse_cameras(text).unwrap();
        assert_eq!(frames.len(), 3);
        assert_eq!(frames[0].camera.gaze, [0.0, 0.0, -1.0]);
        assert_eq!(frames[0].image.as_deref(), Some("a.ppm"));
        let b = frames[0].camera.basis();
        for i in 0..3 {
            for j in 0..3 {
                let d = crate::ray::dot(b[i], b[j]);
                assert!((d - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
        assert_eq!(parse_cameras(&cameras_json(&frames)).unwrap(), frames);
        let missing = r#"[{"eye": [0, 0, 2], "up": [0, 1, 0], "fov_y": 0.8, "width": 4, "height": 3}]"#;
        match parse_cameras(missing) {
            Err(e) => assert!(e.to_string().contains("gaze"), "{e}"),
            Ok(_) => panic!("missing field accepted"),
        }
        let zero = r#"[{"eye": [0, 0, 2], "gaze": [0, 0, 0], "up": [0, 1, 0], "fov_y": 0.8, "width": 4, "height": 3}]"#;
        assert!(matches!(parse_cameras(zero), Err(Error::Input(_))));
    }

    #[test]
    fn ppm_bytes_and_round_trip() {
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(-1.0), 0);
        assert_eq!(quantize(2.0), 255);
        let img = Image::new(2, 2, vec![0.0, 0.5, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let mut expect = b"P6\n2 2\n255\n".to_vec();
        expect.extend_from_slice(&[0, 128, 255, 255, 0, 0, 0, 255, 0, 0, 0, 255]);
        assert_eq!(ppm_bytes(&img), expect);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ppm");
        let noisy = Image::new(3, 1, vec![0.1, 0.2, 0.3, 0.4, 0.55, 0.6, 0.7, 0.8, 0.95]).unwrap();
        save_image(&path, &noisy).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!((back.width, back.height), (3, 1));
        for (a, b) in noisy.rgb.iter().zip(&back.rgb) {
            assert!((a - b).abs() <= 1.0 / 255.0);
        }
        assert!(parse_ppm(b"P6\n# note\n1 1\n255\n\x01\x02\x03").is_ok());
        assert!(parse_ppm(b"P6\n2 2\n255\n\x00").is_err());
    }

    fn checkpoint(with_opt: bool) -> Checkpoint {
        let sources = SourceSet::new(vec![[0.1, -0.2, 0.3], [0.0, 0.5, 1e-300]], vec![1.5, -0.0, f64::MIN_POSITIVE, 3.0], 2).unwrap();
        Checkpoint {
            engine: EngineConfig { levels: 3, alpha: 123.456, lsq: false, admissibility_tol: None, ..Default::default() },
            sources,
            bias: -0.125,
            optimizer: with_opt.then(|| Optimizer {
                kind: OptimizerKind::Adam,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
                t: 17,
                m: vec![0.1; 11],
                v: vec![0.2; 11],
            }),
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_identical() {
        for with_opt in [false, true] {
            let ck = checkpoint(with_opt);
            let bytes = checkpoint_bytes(&ck);
            let back = parse_checkpoint(&bytes).unwrap();
            assert_eq!(checkpoint_bytes(&back), bytes);
            assert_eq!(back.engine, ck.engine);
            assert_eq!(back.sources.w[1].to_bits(), (-0.0f64).to_bits());
            assert_eq!(back.optimizer, ck.optimizer);
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.fcck");
        save_checkpoint(&path, &checkpoint(true)).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), checkpoint(true));
    }

    #[test]
    fn checkpoint_rejects_truncation_and_future_versions() {
        let bytes = checkpoint_bytes(&checkpoint(true));
        for cut in [0, 3, 8, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(parse_checkpoint(&bytes[..cut]), Err(Error::Format(_))), "cut {cut}");
        }
        let mut future = bytes.clone();
        future[4..8].copy_from_slice(&(CHECKPOINT_VERSION + 1).to_le_bytes());
        match parse_checkpoint(&future) {
            Err(Error::Format(m)) => assert!(m.contains("newer"), "{m}"),
            other => panic!("{other:?}"),
        }
        let mut magic = bytes.clone();
        magic[..4].copy_from_slice(b"FCPT");
        assert!(matches!(parse_checkpoint(&magic), Err(Error::Format(_))));
        let mut trailing = bytes;
        trailing.push(0);
        assert!(parse_checkpoint(&trailing).is_err());
    }

    #[test]
    fn sdf_sampler() {
        let sdf = Sdf::sphere(0.5);
        let cfg = SdfSampling { count: 2000, seed: 3, ..Default::default() };
        let set = sample_sdf(&sdf, &cfg).unwrap();
        assert_eq!(set.len(), 2000);
        set.check_domain().unwrap();
        for (p, v) in set.points.iter().zip(&set.values) {
            let r = p.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((v - (r - 0.5)).abs() < 1e-12);
        }
        let mean_abs = set.values.iter().map(|v| v.abs()).sum::<f64>() / 2000.0;
        assert!(mean_abs < 0.05, "{mean_abs}");
        assert_eq!(sample_sdf(&sdf, &cfg).unwrap(), set);
        let mixed = sample_sdf(&sdf, &SdfSampling { count: 100, uniform_fraction: 0.5, ..cfg }).unwrap();
        assert_eq!(mixed.len(), 100);
        // a shape near the boundary still yields in-domain samples
        let edge = Sdf::Sphere { center: [0.9, 0.0, 0.0], radius: 0.3 };
        sample_sdf(&edge, &SdfSampling { count: 500, ..cfg }).unwrap().check_domain().unwrap();
    }
}
