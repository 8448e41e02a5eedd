//! End-to-end runs: acquisition → SEM → reconstruction → IEM, and the
//! method × dose × seed evaluation sweep built on the same stages.

mod config;
mod eval;

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::arrays::io::{read_array, write_array};
use crate::arrays::{mse, psnr, CtArray, Grid3, Sinogram, Volume};
use crate::enhance::enhance;
use crate::error::{Error, Result};
use crate::geometry::ConeBeamGeometry;
use crate::projector::SystemOperator;
use crate::solvers::{self, Method, SolverReport};

pub use config::{
    DoseLevel, DoseSettings, EvalSettings, IoSettings, PhantomKind, PhantomSpec, PipelineConfig, SolverSettings,
    Variant, DEFAULT_ATTENUATION, SIRT_DEFAULT_ITERS,
};
pub use eval::{evaluate_methods, render_table, rows_to_jsonl, EvalRow};

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "CBCT_THREADS";

/// Sizes the global worker pool from `CBCT_THREADS` if it is set.
///
/// Returns the pool size. Has no effect if the pool was already built.
pub fn init_thread_pool() -> Result<usize> {
    if let Ok(value) = std::env::var(THREADS_ENV) {
        let threads: usize = value
            .trim()
            .parse()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got `{value}`")))?;
        // a second initialization is harmless; the first pool stays in place
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    Ok(rayon::current_num_threads())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub name: String,
    pub wall_time: f64,
    /// Against the clean sinogram for sinogram stages, against the truth for image stages.
    pub mse: Option<f64>,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: Method,
    /// `acquire`, `sem`, `reconstruct`, `iem`, `write`, in execution order.
    pub stages: Vec<StageReport>,
    pub solver: Option<SolverReport>,
    pub final_mse: Option<f64>,
    pub final_psnr: Option<f64>,
}

impl RunReport {
    pub fn stage(&self, name: &str) -> Option<&StageReport> {
        self.stages.iter().find(|s| s.name == name)
    }
}

/// Runs one reconstruction method on `b`; the iterative methods also return their report.
pub fn reconstruct(op: &SystemOperator, b: &Sinogram, solver: &SolverSettings) -> Result<(Volume, Option<SolverReport>)> {
    match solver.method {
        Method::Fdk => Ok((solvers::fdk(b, op.geometry(), &solver.fdk)?, None)),
        Method::Sirt => solvers::sirt(op, b, &solver.ls).map(|(v, r)| (v, Some(r))),
        Method::Gd => solvers::gd_ls(op, b, &solver.ls).map(|(v, r)| (v, Some(r))),
        Method::Nag => solvers::nag_ls(op, b, &solver.ls).map(|(v, r)| (v, Some(r))),
    }
}

fn peak(truth: &Volume) -> f64 {
    let max = truth.data().iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        max
    } else {
        1.0
    }
}

/// Measured or simulated data for one run.
struct Acquisition {
    sinogram: Sinogram,
    clean: Option<Sinogram>,
    truth: Option<Volume>,
    detail: String,
}

fn load_volume(path: &Path, geom: &ConeBeamGeometry) -> Result<Volume> {
    let volume = read_array(path)?.0.into_volume()?;
    volume.check_geometry(geom)?;
    Ok(volume)
}

fn acquire(cfg: &PipelineConfig, op: &SystemOperator) -> Result<Acquisition> {
    let geom = op.geometry();
    if let Some(path) = &cfg.io.sinogram {
        let sinogram = read_array(path)?.0.into_sinogram()?;
        sinogram.check_geometry(geom)?;
        let truth = cfg.io.truth.as_deref().map(|p| load_volume(p, geom)).transpose()?;
        return Ok(Acquisition { sinogram, clean: None, truth, detail: format!("loaded {}", path.display()) });
    }
    let truth = match &cfg.io.truth {
        Some(path) => load_volume(path, geom)?,
        None => cfg.phantom.build(geom)?,
    };
    let clean = op.forward_project(&truth)?;
    let (sinogram, detail) = match &cfg.dose {
        Some(dose) => (
            dose.simulate(&clean)?,
            format!("i0={:e}, seed {}, attenuation {}/mm", dose.model.i0, dose.model.seed, dose.attenuation),
        ),
        None => (clean.clone(), "noiseless".to_string()),
    };
    Ok(Acquisition { sinogram, clean: Some(clean), truth: Some(truth), detail })
}

fn write_outputs(cfg: &PipelineConfig, artifacts: &[(&str, CtArray)], result: &Volume) -> Result<String> {
    let meta = |stage: &str| {
        let mut m = Map::new();
        m.insert("stage".into(), Value::String(stage.into()));
        m.insert("method".into(), json!(cfg.solver.method.name()));
        m
    };
    let mut written = Vec::new();
    if let Some(dir) = &cfg.io.intermediates {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, array) in artifacts {
            let path = dir.join(format!("{name}.ctarr"));
            write_array(&path, array, cfg.io.precision, meta(name))?;
            written.push(path.display().to_string());
        }
    }
    if let Some(path) = &cfg.io.output {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        write_array(path, &CtArray::Volume(result.clone()), cfg.io.precision, meta("final"))?;
        written.push(path.display().to_string());
    }
    Ok(if written.is_empty() { "nothing requested".into() } else { written.join(", ") })
}

fn timed<T>(stages: &mut Vec<StageReport>, name: &str, run: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = run().map_err(|e| e.in_stage(name))?;
    stages.push(StageReport {
        name: name.to_string(),
        wall_time: start.elapsed().as_secs_f64(),
        mse: None,
        detail: String::new(),
    });
    Ok(out)
}

fn annotate(stages: &mut [StageReport], mse: Option<f64>, detail: String) {
    let last = stages.last_mut().expect("stage just recorded");
    last.mse = mse;
    last.detail = detail;
}

/// Runs SEM → reconstruction → IEM on the configured data.
///
/// Failures are reported as [`Error::Stage`] naming the stage. Outputs are
/// written only when `[io]` asks for them.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<(Volume, RunReport)> {
    cfg.validate()?;
    let geom = cfg.geometry.build()?;
    let op = SystemOperator::new(geom);
    let mut stages = Vec::new();

    let data = timed(&mut stages, "acquire", || acquire(cfg, &op))?;
    let sino_mse = |s: &Sinogram| data.clean.as_ref().map(|c| mse(s, c)).transpose();
    let vol_mse = |v: &Volume| data.truth.as_ref().map(|t| mse(v, t)).transpose();
    annotate(&mut stages, sino_mse(&data.sinogram)?, data.detail.clone());

    let enhanced = timed(&mut stages, "sem", || enhance(&cfg.sem, &CtArray::Sinogram(data.sinogram.clone()))?.into_sinogram())?;
    annotate(&mut stages, sino_mse(&enhanced)?, cfg.sem.to_string());

    let (recon, solver) = timed(&mut stages, "reconstruct", || reconstruct(&op, &enhanced, &cfg.solver))?;
    annotate(&mut stages, vol_mse(&recon)?, cfg.solver.method.label().to_string());

    let result = timed(&mut stages, "iem", || enhance(&cfg.iem, &CtArray::Volume(recon.clone()))?.into_volume())?;
    let final_mse = vol_mse(&result)?;
    annotate(&mut stages, final_mse, cfg.iem.to_string());

    let artifacts = [
        ("acquired", CtArray::Sinogram(data.sinogram)),
        ("sem", CtArray::Sinogram(enhanced)),
        ("reconstruction", CtArray::Volume(recon)),
    ];
    let written = timed(&mut stages, "write", || write_outputs(cfg, &artifacts, &result))?;
    annotate(&mut stages, None, written);

    let final_psnr = match (&data.truth, final_mse) {
        (Some(truth), Some(_)) => Some(psnr(&result, truth, peak(truth))?),
        _ => None,
    };
    let report = RunReport { method: cfg.solver.method, stages, solver, final_mse, final_psnr };
    Ok((result, report))
}

/// Writes `report` as pretty JSON.
pub fn write_report<T: Serialize>(path: impl AsRef<Path>, report: &T) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(report).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
