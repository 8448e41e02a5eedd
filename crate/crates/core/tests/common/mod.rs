//! Shared fixtures and dense linear-algebra oracles for the integration tests.
#![allow(dead_code)]

use cbct_core::projector::DenseMatrix;
use cbct_core::ConeBeamGeometry;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// 8³ volume, 6 views, 8×8 detector.
pub fn tiny_geometry() -> ConeBeamGeometry {
    ConeBeamGeometry::make_circular(40.0, 80.0, 8, 8, 2.0, 2.0, 6, 8, 8, 8, 1.0).unwrap()
}

/// More rays than voxels and well conditioned (κ(AᵀA) ≈ 130): 5³ volume, 24 views, 8×8 detector.
pub fn tall_geometry() -> ConeBeamGeometry {
    ConeBeamGeometry::make_circular(20.0, 40.0, 8, 8, 1.0, 1.0, 24, 5, 5, 5, 1.0).unwrap()
}

pub fn to_nalgebra(m: &DenseMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows, m.cols, &m.data)
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// λ_max(AᵀA) from a symmetric eigendecomposition.
pub fn dense_lambda_max(a: &DMatrix<f64>) -> f64 {
    let ata = a.transpose() * a;
    ata.symmetric_eigen().eigenvalues.iter().cloned().fold(f64::MIN, f64::max)
}

/// Minimum-norm least-squares solution and the optimal objective ½‖Ax* − b‖².
pub fn dense_least_squares(a: &DMatrix<f64>, b: &[f64]) -> (Vec<f64>, f64) {
    let svd = a.clone().svd(true, true);
    let max_sv = svd.singular_values.max();
    let eps = max_sv * 1e-10 * a.nrows().max(a.ncols()) as f64;
    let bv = DVector::from_column_slice(b);
    let x = svd.solve(&bv, eps).unwrap();
    let r = a * &x - &bv;
    (x.as_slice().to_vec(), 0.5 * r.norm_squared())
}

/// A dense least-squares test problem with its oracle solution.
pub struct OracleProblem {
    pub name: &'static str,
    pub geometry: ConeBeamGeometry,
    pub matrix: DenseMatrix,
    pub b: Vec<f64>,
    pub x_star: Vec<f64>,
    pub f_star: f64,
    pub lambda_max: f64,
}

impl OracleProblem {
    pub fn objective(&self, x: &[f64]) -> f64 {
        use cbct_core::LinearOperator;
        let mut ax = vec![0.0; self.matrix.rows];
        self.matrix.apply(x, &mut ax);
        0.5 * ax.iter().zip(&self.b).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
    }
}

fn oracle_problem(name: &'static str, geometry: ConeBeamGeometry, b_of: impl FnOnce(&DMatrix<f64>) -> Vec<f64>) -> OracleProblem {
    let matrix = cbct_core::SystemOperator::new(geometry.clone()).dense_matrix().unwrap();
    let a = to_nalgebra(&matrix);
    let b = b_of(&a);
    let (x_star, f_star) = dense_least_squares(&a, &b);
    let lambda_max = dense_lambda_max(&a);
    OracleProblem { name, geometry, matrix, b, x_star, f_star, lambda_max }
}

/// `b = A·x_true` on the tall geometry.
pub fn consistent_problem() -> OracleProblem {
    oracle_problem("consistent", tall_geometry(), |a| {
        let x: Vec<f64> = random_vec(&mut rng(11), a.ncols()).iter().map(|v| v.abs()).collect();
        (a * DVector::from_vec(x)).as_slice().to_vec()
    })
}

/// `b = A·x_true + noise` on the tall geometry, so `f* > 0`.
pub fn inconsistent_problem() -> OracleProblem {
    oracle_problem("inconsistent", tall_geometry(), |a| {
        let mut r = rng(12);
        let x: Vec<f64> = random_vec(&mut r, a.ncols()).iter().map(|v| v.abs()).collect();
        let clean = a * DVector::from_vec(x);
        let noise = random_vec(&mut r, a.nrows());
        clean.iter().zip(noise).map(|(c, n)| c + 0.5 * n).collect()
    })
}

/// Fewer rays than voxels (384 × 512) with arbitrary data.
pub fn rank_deficient_problem() -> OracleProblem {
    oracle_problem("rank_deficient", tiny_geometry(), |a| random_vec(&mut rng(13), a.nrows()))
}

pub fn oracle_problems() -> Vec<OracleProblem> {
    vec![consistent_problem(), inconsistent_problem(), rank_deficient_problem()]
}

/// Iterations until `f(x_k) − f* ≤ rel·f(x₀)`, read from a recorded history.
pub fn iterations_to_gap(history: &[f64], f_star: f64, rel: f64) -> Option<usize> {
    let target = rel * history[0];
    history.iter().position(|f| f - f_star <= target)
}
