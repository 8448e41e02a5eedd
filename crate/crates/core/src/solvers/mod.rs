//! Reconstruction algorithms.
//!
//! `least_squares` holds the gradient methods for `½‖Ax − b‖²` (accelerated and
//! plain), `sirt` the diagonally scaled Landweber iteration, and `fdk` the
//! analytic filtered backprojection baseline. The iterative solvers are generic
//! over [`LinearOperator`] so the same code runs on the projector and on dense
//! test matrices.

pub mod fdk;
pub mod least_squares;
pub mod sirt;

use serde::{Deserialize, Serialize};

use crate::arrays::{Grid3, Sinogram, Volume};
use crate::error::{Error, Result};
use crate::projector::{LinearOperator, SystemOperator};

pub use fdk::{fdk, FdkConfig, FilterWindow};
pub use least_squares::{gd, gd_many, nag, nag_many};
pub use sirt::sirt as sirt_raw;

/// Power-iteration settings used when the Lipschitz constant is not supplied.
pub const POWER_ITERS: usize = 50;
pub const POWER_TOL: f64 = 1e-6;
pub const POWER_SEED: u64 = 0x5eed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LsSolverConfig {
    pub max_iters: usize,
    /// Relative stopping tolerance (gradient norm for NAG/GD, residual norm for SIRT).
    pub grad_tol: f64,
    /// Known `λ_max(AᵀA)`; estimated by power iteration when absent.
    pub lipschitz: Option<f64>,
    /// Multiplier `≥ 1` applied to `lipschitz` before it sets the step `1/L̂`.
    pub safety: f64,
    /// Clamp iterates to `x ≥ 0`.
    pub nonneg: bool,
    pub record_history: bool,
}

impl Default for LsSolverConfig {
    fn default() -> Self {
        LsSolverConfig {
            max_iters: 100,
            grad_tol: 0.0,
            lipschitz: None,
            safety: 1.05,
            nonneg: false,
            record_history: true,
        }
    }
}

impl LsSolverConfig {
    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters", "must be ≥ 1"));
        }
        if !(self.grad_tol >= 0.0) {
            return Err(Error::invalid("grad_tol", format!("must be ≥ 0, got {}", self.grad_tol)));
        }
        if !(self.safety >= 1.0) {
            return Err(Error::invalid("safety", format!("must be ≥ 1, got {}", self.safety)));
        }
        Ok(())
    }

    /// `L̂ = safety·L`, estimating `L` when it was not given.
    pub(crate) fn step_lipschitz<O: LinearOperator + ?Sized>(&self, op: &O) -> Result<f64> {
        let lipschitz = match self.lipschitz {
            Some(l) => l,
            None => crate::projector::operator_norm_sq(op, POWER_ITERS, POWER_TOL, POWER_SEED).value,
        };
        let scaled = self.safety * lipschitz;
        if !(scaled > 0.0 && scaled.is_finite()) {
            return Err(Error::invalid("lipschitz", format!("step constant must be finite and > 0, got {scaled}")));
        }
        Ok(scaled)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    MaxIters,
    GradTol,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub iterations_run: usize,
    /// `f(x_k)` for `k = 0..=iterations_run`; empty when history is off.
    pub objective_history: Vec<f64>,
    pub final_grad_norm: f64,
    pub final_residual_norm: f64,
    pub terminated_by: Termination,
    /// Step constant `L̂` for the gradient methods; absent for SIRT.
    pub lipschitz_used: Option<f64>,
}

/// Which reconstruction algorithm to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Fdk,
    Sirt,
    Gd,
    Nag,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Fdk, Method::Sirt, Method::Gd, Method::Nag];

    pub fn name(self) -> &'static str {
        match self {
            Method::Fdk => "fdk",
            Method::Sirt => "sirt",
            Method::Gd => "gd",
            Method::Nag => "nag",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Method::Fdk => "FDK",
            Method::Sirt => "SIRT",
            Method::Gd => "GD-LS",
            Method::Nag => "NAG-LS",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            Error::invalid("method", format!("unknown method `{s}` (valid: fdk, sirt, gd, nag)"))
        })
    }
}

fn typed<F>(op: &SystemOperator, b: &Sinogram, run: F) -> Result<(Volume, SolverReport)>
where
    F: FnOnce(&SystemOperator, &[f64]) -> Result<(Vec<f64>, SolverReport)>,
{
    b.check_geometry(op.geometry())?;
    let (x, report) = run(op, b.data())?;
    let vol = Volume::for_geometry(op.geometry()).with_data(x);
    Ok((vol, report))
}

/// Nesterov-accelerated least squares on the projector.
pub fn nag_ls(op: &SystemOperator, b: &Sinogram, cfg: &LsSolverConfig) -> Result<(Volume, SolverReport)> {
    typed(op, b, |op, b| nag(op, b, cfg))
}

/// Plain gradient descent on the same objective; the un-accelerated control.
pub fn gd_ls(op: &SystemOperator, b: &Sinogram, cfg: &LsSolverConfig) -> Result<(Volume, SolverReport)> {
    typed(op, b, |op, b| gd(op, b, cfg))
}

pub fn sirt(op: &SystemOperator, b: &Sinogram, cfg: &LsSolverConfig) -> Result<(Volume, SolverReport)> {
    typed(op, b, |op, b| sirt_raw(op, b, cfg))
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn half_sq_dist(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()
}
