//! Acceptance suite. Prints one `criterion N: PASS|FAIL` line per criterion
//! and exits nonzero if any fails. Pass criterion numbers as arguments to run
//! a subset, e.g. `cargo test --test acceptance -- 1 9`.

use anyhow::{ensure, Result};
use fc2t2::par;
use fc2t2_cli::checks;
use fc2t2_cli::commands;
use fc2t2_cli::config::{RendererKind, RenderMode, RunConfig};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

const SDF_MAE: f64 = 5e-3;
const SDF_SECONDS: f64 = 300.0;
const TERF_MSE: f64 = 5e-3;
const TERF_SECONDS: f64 = 600.0;
/// Quadrature and analytic held-out MSE must agree within this factor.
const TERF_RATIO: f64 = 2.0;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn load(name: &str, out: &Path) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&configs().join(name))?;
    cfg.out = Some(out.to_path_buf());
    Ok(cfg)
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn oracle_group(id: u32) -> Outcome {
    let (_, name, f) = checks::GROUPS.iter().find(|g| g.0 == id).expect("known group");
    match f() {
        Ok(reports) => {
            for r in &reports {
                println!("  {}", r.line());
            }
            let failed: Vec<&str> = reports.iter().filter(|r| !r.pass).map(|r| r.name.as_str()).collect();
            let detail = if failed.is_empty() {
                format!("{name}, {} checks", reports.len())
            } else {
                format!("{name}, failed: {}", failed.join(", "))
            };
            Outcome { pass: failed.is_empty(), detail }
        }
        Err(e) => Outcome { pass: false, detail: format!("{name}: {e}") },
    }
}

fn sdf_fit(tmp: &Path) -> Result<Outcome> {
    let cfg = load("sdf_sphere.toml", &tmp.join("sdf"))?;
    ensure!(cfg.engine.levels == 4 && cfg.train.sources == 10_000 && cfg.sdf.sampling.count == 100_000);
    ensure!(cfg.train.epochs <= 500);
    let t = Instant::now();
    let s = commands::fit_sdf(&cfg)?;
    let secs = t.elapsed().as_secs_f64();
    Ok(Outcome {
        pass: s.final_train_mae <= SDF_MAE && secs <= SDF_SECONDS,
        detail: format!(
            "final MAE {:.3e} (limit {SDF_MAE:.0e}), held-out MAE {:.3e}, {} epochs, {secs:.0} s (limit {SDF_SECONDS:.0} s)",
            s.final_train_mae,
            s.holdout_mae.unwrap_or(f64::NAN),
            s.epochs
        ),
    })
}

fn terf(tmp: &Path) -> Result<Outcome> {
    let mut cfg = load("radiance_blobs.toml", &tmp.join("terf_analytic"))?;
    ensure!(cfg.engine.levels == 4);
    let t = Instant::now();
    let a = commands::fit_radiance(&cfg)?;
    let secs_a = t.elapsed().as_secs_f64();
    ensure!(a.train_rays == 8 * 64 * 64, "expected 8 poses at 64x64");
    cfg.radiance.renderer = RendererKind::Quadrature;
    cfg.out = Some(tmp.join("terf_quadrature"));
    let t = Instant::now();
    let q = commands::fit_radiance(&cfg)?;
    let secs_q = t.elapsed().as_secs_f64();
    let ratio = q.holdout_mse / a.holdout_mse;
    let comparable = q.holdout_mse <= TERF_MSE && (1.0 / TERF_RATIO..=TERF_RATIO).contains(&ratio);
    Ok(Outcome {
        pass: a.holdout_mse <= TERF_MSE && secs_a <= TERF_SECONDS && comparable,
        detail: format!(
            "analytic held-out MSE {:.3e} in {secs_a:.0} s, quadrature {:.3e} in {secs_q:.0} s, ratio {ratio:.2}, \
             background-only {:.3e}, density fraction {:.2}",
            a.holdout_mse, q.holdout_mse, a.background_mse, a.density_fraction
        ),
    })
}

/// Small versions of every training command plus a render, run twice.
fn determinism(tmp: &Path) -> Result<Outcome> {
    let small = |name: &str, out: &Path| -> Result<RunConfig> {
        let mut cfg = load(name, out)?;
        cfg.engine.levels = 3;
        cfg.engine.alpha = 60.0;
        cfg.train.epochs = 3;
        cfg.train.sources = cfg.train.sources.min(500);
        cfg.sdf.sampling.count = 5000;
        cfg.sdf.holdout = 500;
        for spec in [&mut cfg.depth.cameras, &mut cfg.radiance.train_cameras, &mut cfg.radiance.test_cameras] {
            if let fc2t2_cli::config::CameraSpec::Orbit(r) = spec {
                r.count = 2;
                r.width = 12;
                r.height = 12;
            }
        }
        cfg.train.batch = cfg.train.batch.map(|_| 100);
        Ok(cfg)
    };
    let run_all = |root: &Path| -> Result<()> {
        commands::fit_sdf(&small("sdf_sphere.toml", &root.join("sdf"))?)?;
        commands::fit_depth(&small("depth_sphere.toml", &root.join("depth"))?)?;
        let rad = small("radiance_blobs.toml", &root.join("radiance"))?;
        commands::fit_radiance(&rad)?;
        let mut r = rad.clone();
        r.out = Some(root.join("render"));
        r.render.mode = RenderMode::Rgbd;
        commands::render(&r, &root.join("radiance/checkpoint.fcck"))?;
        Ok(())
    };
    let files = [
        "sdf/metrics.csv",
        "sdf/checkpoint.fcck",
        "sdf/manifest.json",
        "depth/metrics.csv",
        "depth/checkpoint.fcck",
        "depth/manifest.json",
        "radiance/metrics.csv",
        "radiance/checkpoint.fcck",
        "radiance/manifest.json",
        "render/view_0_rgb.ppm",
        "render/view_0_depth.ppm",
    ];
    // every run writes to the same directory, so the echoed configs and
    // manifests are comparable byte for byte
    let work = tmp.join("run");
    for (name, sequential) in [("a", false), ("b", false), ("c", true)] {
        par::set_sequential(sequential);
        let result = run_all(&work);
        par::set_sequential(false);
        result?;
        std::fs::rename(&work, tmp.join(name))?;
    }
    let mut differing = Vec::new();
    for f in files {
        let a = std::fs::read(tmp.join("a").join(f))?;
        for other in ["b", "c"] {
            if std::fs::read(tmp.join(other).join(f))? != a {
                differing.push(format!("{other}/{f}"));
            }
        }
    }
    Ok(Outcome {
        pass: differing.is_empty(),
        detail: if differing.is_empty() {
            format!("{} artifacts identical across two reruns and a sequential run", files.len())
        } else {
            format!("differing: {}", differing.join(", "))
        },
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).format_timestamp(None).init();
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |id: u32| selected.is_empty() || selected.contains(&id);
    let tmp = tempfile::tempdir().expect("temporary directory");
    let mut failed = 0;
    for id in 1..=9u32 {
        if !wanted(id) {
            continue;
        }
        let t = Instant::now();
        let outcome = match id {
            1..=6 => Ok(oracle_group(id)),
            7 => sdf_fit(tmp.path()),
            8 => terf(tmp.path()),
            _ => determinism(tmp.path()),
        }
        .unwrap_or_else(|e| Outcome { pass: false, detail: format!("error: {e:#}") });
        let verdict = if outcome.pass { "PASS" } else { "FAIL" };
        println!("criterion {id}: {verdict} ({}; {:.1} s)", outcome.detail, t.elapsed().as_secs_f64());
        failed += usize::from(!outcome.pass);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
