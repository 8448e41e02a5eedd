//! Gradient methods for `f(x) = ½‖Ax − b‖²`, started from `x₀ = 0` with step `1/L̂`.
//!
//! Both keep `A x_k` (and `A y_k`) up to date by linearity, so an iteration
//! costs one forward and one adjoint application.

use super::{half_sq_dist, norm, LsSolverConfig, SolverReport, Termination};
use crate::error::{Error, Result};
use crate::projector::LinearOperator;

/// Nesterov's accelerated gradient with the `t_{k+1} = (1 + √(1 + 4t_k²))/2` schedule.
pub fn nag<O: LinearOperator + ?Sized>(op: &O, b: &[f64], cfg: &LsSolverConfig) -> Result<(Vec<f64>, SolverReport)> {
    single(descend(op, &[b], cfg, true))
}

/// Gradient descent; `objective_history` is non-increasing.
pub fn gd<O: LinearOperator + ?Sized>(op: &O, b: &[f64], cfg: &LsSolverConfig) -> Result<(Vec<f64>, SolverReport)> {
    single(descend(op, &[b], cfg, false))
}

/// [`nag`] on several data vectors at once, sharing each projector traversal.
///
/// Every solve is bitwise identical to running [`nag`] on it alone; a solve
/// that meets the stopping rule drops out of the batch.
pub fn nag_many<O: LinearOperator + ?Sized>(
    op: &O,
    bs: &[&[f64]],
    cfg: &LsSolverConfig,
) -> Result<Vec<(Vec<f64>, SolverReport)>> {
    descend(op, bs, cfg, true)
}

/// Batched [`gd`], see [`nag_many`].
pub fn gd_many<O: LinearOperator + ?Sized>(
    op: &O,
    bs: &[&[f64]],
    cfg: &LsSolverConfig,
) -> Result<Vec<(Vec<f64>, SolverReport)>> {
    descend(op, bs, cfg, false)
}

fn single(runs: Result<Vec<(Vec<f64>, SolverReport)>>) -> Result<(Vec<f64>, SolverReport)> {
    runs.map(|mut r| r.pop().expect("one run"))
}

fn refs<'a>(vs: &'a [Vec<f64>], active: &[usize]) -> Vec<&'a [f64]> {
    active.iter().map(|&j| vs[j].as_slice()).collect()
}

fn refs_mut<'a>(vs: &'a mut [Vec<f64>], active: &[usize]) -> Vec<&'a mut [f64]> {
    vs.iter_mut()
        .enumerate()
        .filter(|(j, _)| active.contains(j))
        .map(|(_, v)| v.as_mut_slice())
        .collect()
}

fn descend<O: LinearOperator + ?Sized>(
    op: &O,
    bs: &[&[f64]],
    cfg: &LsSolverConfig,
    accelerate: bool,
) -> Result<Vec<(Vec<f64>, SolverReport)>> {
    cfg.validate()?;
    let (n, m) = (op.domain_len(), op.range_len());
    if let Some(b) = bs.iter().find(|b| b.len() != m) {
        return Err(Error::shape(format!("{m} measurements"), format!("{}", b.len())));
    }
    let runs = bs.len();
    let lipschitz = cfg.step_lipschitz(op)?;
    let step = 1.0 / lipschitz;

    let mut grad = vec![vec![0.0; n]; runs];
    op.apply_adjoint_many(bs, &mut refs_mut(&mut grad, &(0..runs).collect::<Vec<_>>()));
    let atb_norm: Vec<f64> = grad.iter().map(|g| norm(g)).collect();

    let mut x = vec![vec![0.0; n]; runs];
    let mut ax = vec![vec![0.0; m]; runs];
    let mut y = x.clone();
    let mut ay = ax.clone();
    let mut x_next = x.clone();
    let mut ax_next = ax.clone();
    let mut residual = ax.clone();
    // the momentum schedule does not depend on the data, so runs share it
    let mut t = 1.0f64;

    let mut history = vec![Vec::new(); runs];
    if cfg.record_history {
        for (h, b) in history.iter_mut().zip(bs) {
            h.reserve(cfg.max_iters + 1);
            h.push(half_sq_dist(&vec![0.0; m], b));
        }
    }

    let mut grad_norm = atb_norm.clone();
    let mut terminated_by = vec![Termination::MaxIters; runs];
    let mut iterations_run = vec![0; runs];
    let mut active: Vec<usize> = (0..runs).collect();
    for k in 0..cfg.max_iters {
        for &j in &active {
            for ((r, a), bi) in residual[j].iter_mut().zip(&ay[j]).zip(bs[j]) {
                *r = a - bi;
            }
        }
        op.apply_adjoint_many(&refs(&residual, &active), &mut refs_mut(&mut grad, &active));

        for &j in &active {
            grad_norm[j] = norm(&grad[j]);
            for ((xn, yi), gi) in x_next[j].iter_mut().zip(&y[j]).zip(&grad[j]) {
                *xn = yi - step * gi;
            }
            if cfg.nonneg {
                x_next[j].iter_mut().for_each(|v| *v = v.max(0.0));
            }
            if x_next[j].iter().any(|v| !v.is_finite()) {
                return Err(Error::Diverged { iteration: k + 1 });
            }
        }
        op.apply_many(&refs(&x_next, &active), &mut refs_mut(&mut ax_next, &active));

        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let beta = (t - 1.0) / t_next;
        for &j in &active {
            if cfg.record_history {
                history[j].push(half_sq_dist(&ax_next[j], bs[j]));
            }
            iterations_run[j] = k + 1;
            if grad_norm[j] <= cfg.grad_tol * atb_norm[j] {
                terminated_by[j] = Termination::GradTol;
            }
            if accelerate {
                for i in 0..n {
                    y[j][i] = x_next[j][i] + beta * (x_next[j][i] - x[j][i]);
                }
                for i in 0..m {
                    ay[j][i] = ax_next[j][i] + beta * (ax_next[j][i] - ax[j][i]);
                }
            } else {
                y[j].copy_from_slice(&x_next[j]);
                ay[j].copy_from_slice(&ax_next[j]);
            }
            std::mem::swap(&mut x[j], &mut x_next[j]);
            std::mem::swap(&mut ax[j], &mut ax_next[j]);
        }
        t = t_next;

        active.retain(|&j| terminated_by[j] == Termination::MaxIters);
        if active.is_empty() {
            break;
        }
    }

    Ok(x
        .into_iter()
        .enumerate()
        .map(|(j, xj)| {
            let final_residual_norm = 2.0f64.sqrt() * half_sq_dist(&ax[j], bs[j]).sqrt();
            let report = SolverReport {
                iterations_run: iterations_run[j],
                objective_history: std::mem::take(&mut history[j]),
                final_grad_norm: grad_norm[j],
                final_residual_norm,
                terminated_by: terminated_by[j],
                lipschitz_used: Some(lipschitz),
            };
            (xj, report)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projector::DenseMatrix;

    fn diag(values: &[f64]) -> DenseMatrix {
        let n = values.len();
        let mut data = vec![0.0; n * n];
        for (i, v) in values.iter().enumerate() {
            data[i * n + i] = *v;
        }
        DenseMatrix { rows: n, cols: n, data }
    }

    #[test]
    fn zero_data_stops_after_one_step() {
        let a = diag(&[1.0, 2.0, 3.0]);
        for solver in [nag::<DenseMatrix>, gd::<DenseMatrix>] {
            let (x, report) = solver(&a, &[0.0; 3], &LsSolverConfig::default()).unwrap();
            assert_eq!(x, vec![0.0; 3]);
            assert_eq!(report.iterations_run, 1);
            assert_eq!(report.objective_history, vec![0.0, 0.0]);
            assert_eq!(report.terminated_by, Termination::GradTol);
        }
    }

    #[test]
    fn exact_lipschitz_solves_scaled_identity_in_one_step() {
        let a = diag(&[2.0, 2.0]);
        let cfg = LsSolverConfig { lipschitz: Some(4.0), safety: 1.0, grad_tol: 1e-12, ..Default::default() };
        let (x, _) = gd(&a, &[2.0, -4.0], &cfg).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] + 2.0).abs() < 1e-15);
    }

    #[test]
    fn nonneg_projection_clamps() {
        let a = diag(&[1.0, 1.0]);
        let cfg = LsSolverConfig { lipschitz: Some(1.0), nonneg: true, max_iters: 20, ..Default::default() };
        let (x, _) = nag(&a, &[1.0, -1.0], &cfg).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-9 && x[1] == 0.0);
    }

    #[test]
    fn invalid_step_and_divergence_are_reported() {
        let a = diag(&[1.0]);
        let bad = LsSolverConfig { lipschitz: Some(0.0), ..Default::default() };
        assert!(matches!(nag(&a, &[1.0], &bad), Err(Error::InvalidParameter { .. })));
        let huge = LsSolverConfig { lipschitz: Some(1e-320), safety: 1.0, ..Default::default() };
        assert!(matches!(gd(&a, &[1.0], &huge), Err(Error::Diverged { iteration: 1 })));
    }

    #[test]
    fn batched_runs_match_single_runs() {
        let a = DenseMatrix { rows: 3, cols: 2, data: vec![1.0, 0.5, 0.2, 2.0, 1.0, 1.0] };
        let bs: [&[f64]; 3] = [&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0], &[-1.0, 4.0, 0.5]];
        let cfg = LsSolverConfig { grad_tol: 1e-6, max_iters: 500, ..Default::default() };
        for (many, one) in [(nag_many::<DenseMatrix> as fn(_, _, _) -> _, nag::<DenseMatrix> as fn(_, _, _) -> _), (gd_many, gd)] {
            let batch = many(&a, &bs, &cfg).unwrap();
            for (b, got) in bs.iter().zip(&batch) {
                assert_eq!(got, &one(&a, b, &cfg).unwrap());
            }
        }
    }

    #[test]
    fn history_can_be_disabled() {
        let a = diag(&[1.0, 3.0]);
        let cfg = LsSolverConfig { record_history: false, max_iters: 5, ..Default::default() };
        let (_, report) = nag(&a, &[1.0, 1.0], &cfg).unwrap();
        assert!(report.objective_history.is_empty());
        assert_eq!(report.iterations_run, 5);
    }
}
