//! SIRT: `x ← x + C·Aᵀ·R·(b − A x)` with `R = diag(1/row sums)`, `C = diag(1/column sums)`.

use super::{half_sq_dist, norm, LsSolverConfig, SolverReport, Termination};
use crate::error::{Error, Result};
use crate::projector::LinearOperator;

/// Sums below this are treated as empty rows/columns and get a zero weight.
pub const EMPTY_SUM: f64 = 1e-12;

fn inverse_sums(sums: &mut [f64]) {
    for s in sums {
        *s = if *s > EMPTY_SUM { 1.0 / *s } else { 0.0 };
    }
}

pub fn sirt<O: LinearOperator + ?Sized>(op: &O, b: &[f64], cfg: &LsSolverConfig) -> Result<(Vec<f64>, SolverReport)> {
    cfg.validate()?;
    let (n, m) = (op.domain_len(), op.range_len());
    if b.len() != m {
        return Err(Error::shape(format!("{m} measurements"), format!("{}", b.len())));
    }

    let mut row_weight = vec![0.0; m];
    op.apply(&vec![1.0; n], &mut row_weight);
    inverse_sums(&mut row_weight);
    let mut col_weight = vec![0.0; n];
    op.apply_adjoint(&vec![1.0; m], &mut col_weight);
    inverse_sums(&mut col_weight);

    let b_norm = norm(b);
    let mut x = vec![0.0; n];
    let mut ax = vec![0.0; m];
    let mut scaled = vec![0.0; m];
    let mut update = vec![0.0; n];

    let mut history = Vec::new();
    if cfg.record_history {
        history.reserve(cfg.max_iters + 1);
        history.push(half_sq_dist(&ax, b));
    }

    let mut terminated_by = Termination::MaxIters;
    let mut iterations_run = 0;
    let mut residual_norm = b_norm;
    for k in 0..cfg.max_iters {
        for i in 0..m {
            scaled[i] = row_weight[i] * (b[i] - ax[i]);
        }
        op.apply_adjoint(&scaled, &mut update);
        for i in 0..n {
            x[i] += col_weight[i] * update[i];
        }
        if cfg.nonneg {
            x.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { iteration: k + 1 });
        }
        op.apply(&x, &mut ax);
        let objective = half_sq_dist(&ax, b);
        if cfg.record_history {
            history.push(objective);
        }
        iterations_run = k + 1;
        residual_norm = (2.0 * objective).sqrt();
        if residual_norm <= cfg.grad_tol * b_norm {
            terminated_by = Termination::GradTol;
            break;
        }
    }

    let residual: Vec<f64> = ax.iter().zip(b).map(|(a, bi)| a - bi).collect();
    op.apply_adjoint(&residual, &mut update);
    Ok((
        x,
        SolverReport {
            iterations_run,
            objective_history: history,
            final_grad_norm: norm(&update),
            final_residual_norm: residual_norm,
            terminated_by,
            lipschitz_used: None,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projector::DenseMatrix;

    #[test]
    fn zero_data_gives_zero() {
        let a = DenseMatrix { rows: 2, cols: 2, data: vec![1.0, 2.0, 0.5, 1.0] };
        let (x, report) = sirt(&a, &[0.0, 0.0], &LsSolverConfig::default()).unwrap();
        assert_eq!(x, vec![0.0, 0.0]);
        assert_eq!(report.iterations_run, 1);
        assert_eq!(report.lipschitz_used, None);
    }

    #[test]
    fn empty_rows_and_columns_are_ignored() {
        // row 2 and column 2 are all zero
        let a = DenseMatrix { rows: 3, cols: 3, data: vec![2.0, 1.0, 0.0, 1.0, 3.0, 0.0, 0.0, 0.0, 0.0] };
        let cfg = LsSolverConfig { max_iters: 2000, grad_tol: 1e-10, ..Default::default() };
        let (x, report) = sirt(&a, &[3.0, 4.0, 5.0], &cfg).unwrap();
        assert!(x.iter().all(|v| v.is_finite()));
        assert_eq!(x[2], 0.0);
        assert!((x[0] - 1.0).abs() < 1e-6 && (x[1] - 1.0).abs() < 1e-6, "{x:?}");
        assert!(report.final_residual_norm.is_finite());
    }
}
