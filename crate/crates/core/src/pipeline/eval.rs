//! The method × dose × seed sweep behind the results table.
//!
//! Each dose level draws one noisy sinogram per seed, shared by every method.
//! NAG and GD solves for all seeds (with and without SEM) of a dose run as one
//! batch, which is bitwise identical to solving them one by one.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{DoseLevel, DoseSettings, PipelineConfig, Variant, DEFAULT_ATTENUATION};
use super::{load_volume, peak};
use crate::arrays::metrics::psnr_from_mse;
use crate::arrays::{mse, CtArray, Grid3, Sinogram, Volume};
use crate::enhance::enhance;
use crate::error::{Error, Result};
use crate::noise::{DoseModel, DEFAULT_COUNT_FLOOR};
use crate::projector::{operator_norm_sq, SystemOperator};
use crate::solvers::{self, fdk, gd_many, nag_many, Method, POWER_ITERS, POWER_SEED, POWER_TOL};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub method_label: String,
    pub dose_label: String,
    /// Mean over seeds.
    pub mse: f64,
    /// PSNR of the mean MSE, with the truth's maximum as peak.
    pub psnr: f64,
    /// Mean seconds per seed. Batched solves split their time evenly.
    pub wall_time: f64,
    pub seeds: usize,
}

/// Reconstructions of one (method, sem) pair, one per seed, with seconds spent per seed.
type Recons = (Vec<Volume>, Vec<f64>);

fn attribute(label: &str, dose: &str) -> impl Fn(Error) -> Error {
    let stage = format!("{label} @ {dose}");
    move |e| e.in_stage(stage.clone())
}

/// Averages MSE over seeds for every (method, dose) pair.
///
/// With no doses the clean sinogram is reconstructed once per method. With no
/// seeds the `[dose]` seed (or 0) is used. Rows come out method-major, in the
/// order given. Noise parameters other than `i0` come from `[dose]`.
pub fn evaluate_methods(cfg: &PipelineConfig, methods: &[Variant], doses: &[DoseLevel], seeds: &[u64]) -> Result<Vec<EvalRow>> {
    cfg.validate()?;
    let geom = cfg.geometry.build()?;
    let op = SystemOperator::new(geom.clone());
    let truth = match &cfg.io.truth {
        Some(path) => load_volume(path, &geom)?,
        None => cfg.phantom.build(&geom)?,
    };
    let clean = op.forward_project(&truth)?;
    let peak = peak(&truth);

    let mut solver = cfg.solver.clone();
    let iterative = methods.iter().any(|v| matches!(v.method, Method::Nag | Method::Gd));
    if iterative && solver.ls.lipschitz.is_none() {
        // the same estimate the solvers would make, computed once for the whole sweep
        solver.ls.lipschitz = Some(operator_norm_sq(&op, POWER_ITERS, POWER_TOL, POWER_SEED).value);
    }
    let sirt_cfg = solvers::LsSolverConfig { max_iters: cfg.solver.ls.max_iters.max(1), ..solver.ls.clone() };
    let (floor, attenuation, default_seed) = match &cfg.dose {
        Some(d) => (d.model.count_floor, d.attenuation, d.model.seed),
        None => (DEFAULT_COUNT_FLOOR, DEFAULT_ATTENUATION, 0),
    };

    let levels: Vec<Option<DoseLevel>> = if doses.is_empty() { vec![None] } else { doses.iter().copied().map(Some).collect() };
    let mut by_dose = Vec::new();
    for level in levels {
        let dose_label = level.map_or_else(|| "noiseless".to_string(), |l| l.label());
        let seed_list: Vec<u64> = match (level, seeds.is_empty()) {
            (None, _) => vec![default_seed],
            (Some(_), true) => vec![default_seed],
            (Some(_), false) => seeds.to_vec(),
        };
        let sem = cfg.sem_for_eval(&dose_label);
        let iem = cfg.iem_for_eval(&dose_label);
        let dose_err = |e: Error| e.in_stage(format!("dose {dose_label}"));
        let data: Vec<Sinogram> = seed_list
            .iter()
            .map(|&seed| match level {
                None => Ok(clean.clone()),
                Some(l) => DoseSettings::new(DoseModel { i0: l.i0(), count_floor: floor, seed }, attenuation)?.simulate(&clean),
            })
            .collect::<Result<_>>()
            .map_err(dose_err)?;

        let mut sem_data = None;
        let mut sem_time = 0.0;
        if methods.iter().any(|v| v.sem) {
            let start = Instant::now();
            let out: Vec<Sinogram> = data
                .iter()
                .map(|s| enhance(&sem, &CtArray::Sinogram(s.clone()))?.into_sinogram())
                .collect::<Result<_>>()
                .map_err(|e| e.in_stage(format!("SEM @ {dose_label}")))?;
            sem_time = start.elapsed().as_secs_f64() / data.len() as f64;
            sem_data = Some(out);
        }
        let inputs = |with_sem: bool| if with_sem { sem_data.as_ref().expect("SEM run") } else { &data };

        // every (method, sem) pair that some row needs
        let mut recons: BTreeMap<(Method, bool), Recons> = BTreeMap::new();
        let mut pairs: BTreeMap<Method, Vec<bool>> = BTreeMap::new();
        for v in methods {
            let flags = pairs.entry(v.method).or_default();
            if !flags.contains(&v.sem) {
                flags.push(v.sem);
            }
        }
        for (method, flags) in pairs {
            let on_error = attribute(method.label(), &dose_label);
            match method {
                Method::Nag | Method::Gd => {
                    let bs: Vec<&[f64]> = flags.iter().flat_map(|&f| inputs(f).iter().map(|s| s.data())).collect();
                    let start = Instant::now();
                    let solve = if method == Method::Nag { nag_many } else { gd_many };
                    let out = solve(&op, &bs, &solver.ls).map_err(&on_error)?;
                    let share = start.elapsed().as_secs_f64() / bs.len() as f64;
                    let mut out = out.into_iter();
                    for &f in &flags {
                        let vols = (&mut out)
                            .take(seed_list.len())
                            .map(|(x, _)| Volume::for_geometry(&geom).with_data(x))
                            .collect();
                        recons.insert((method, f), (vols, vec![share; seed_list.len()]));
                    }
                }
                Method::Fdk | Method::Sirt => {
                    for &f in &flags {
                        let mut vols = Vec::new();
                        let mut times = Vec::new();
                        for b in inputs(f) {
                            let start = Instant::now();
                            let vol = if method == Method::Fdk {
                                fdk(b, &geom, &solver.fdk)
                            } else {
                                solvers::sirt(&op, b, &sirt_cfg).map(|(v, _)| v)
                            };
                            vols.push(vol.map_err(&on_error)?);
                            times.push(start.elapsed().as_secs_f64());
                        }
                        recons.insert((method, f), (vols, times));
                    }
                }
            }
        }

        let mut rows = Vec::new();
        for v in methods {
            let label = v.label();
            let (vols, times) = &recons[&(v.method, v.sem)];
            let mut total_mse = 0.0;
            let mut total_time = 0.0;
            for (vol, &t) in vols.iter().zip(times) {
                let start = Instant::now();
                let out = if v.iem {
                    enhance(&iem, &CtArray::Volume(vol.clone()))
                        .and_then(CtArray::into_volume)
                        .map_err(attribute(&label, &dose_label))?
                } else {
                    vol.clone()
                };
                total_time += t + start.elapsed().as_secs_f64() + if v.sem { sem_time } else { 0.0 };
                total_mse += mse(&out, &truth)?;
            }
            let n = vols.len() as f64;
            let mean = total_mse / n;
            rows.push(EvalRow {
                method_label: label,
                dose_label: dose_label.clone(),
                mse: mean,
                psnr: psnr_from_mse(mean, peak),
                wall_time: total_time / n,
                seeds: vols.len(),
            });
        }
        by_dose.push(rows);
    }

    // method-major: all doses of the first method, then the next method
    let mut rows = Vec::new();
    for i in 0..methods.len() {
        for dose_rows in &by_dose {
            rows.push(dose_rows[i].clone());
        }
    }
    Ok(rows)
}

/// Fixed-width text table of `rows`.
pub fn render_table(rows: &[EvalRow]) -> String {
    let width = rows.iter().map(|r| r.method_label.len()).max().unwrap_or(0).max("method".len());
    let dose_width = rows.iter().map(|r| r.dose_label.len()).max().unwrap_or(0).max("dose".len());
    let mut out = String::new();
    let _ = writeln!(out, "{:width$}  {:dose_width$}  {:>11}  {:>9}  {:>9}  {:>5}", "method", "dose", "mse", "psnr_db", "time_s", "seeds");
    for r in rows {
        let _ = writeln!(
            out,
            "{:width$}  {:dose_width$}  {:>11.5e}  {:>9.3}  {:>9.3}  {:>5}",
            r.method_label, r.dose_label, r.mse, r.psnr, r.wall_time, r.seeds
        );
    }
    out
}

/// One JSON object per line.
pub fn rows_to_jsonl(rows: &[EvalRow]) -> String {
    rows.iter().map(|r| serde_json::to_string(r).expect("rows serialize") + "\n").collect()
}
