#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tomocal::bcd::BcdOptions;
use tomocal::cli::{simulate_problem, ExperimentConfig, SimulatedProblem};
use tomocal::dense::DenseMatrix;
use tomocal::geometry::Ray;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Length of `{o + t d : t ≥ 0} ∩ [-1,1]²` by Liang–Barsky clipping; `d` is a unit vector.
pub fn clipped_chord(ray: &Ray<f64>) -> f64 {
    let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
    for k in 0..2 {
        let (o, d) = (ray.origin[k], ray.dir[k]);
        if d == 0.0 {
            if o.abs() > 1.0 {
                return 0.0;
            }
            continue;
        }
        let (a, b) = ((-1.0 - o) / d, (1.0 - o) / d);
        t0 = t0.max(a.min(b));
        t1 = t1.min(a.max(b));
    }
    (t1 - t0).max(0.0)
}

pub fn random_ray(r: &mut ChaCha8Rng) -> Ray<f64> {
    let phi: f64 = r.random_range(0.0..std::f64::consts::TAU);
    Ray {
        origin: [r.random_range(-3.0..3.0), r.random_range(-3.0..3.0)],
        dir: [phi.cos(), phi.sin()],
    }
}

pub fn random_vec(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
}

pub fn random_dense(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix<f64> {
    DenseMatrix::new(rows, cols, random_vec(r, rows * cols))
}

pub fn to_nalgebra(a: &DenseMatrix<f64>) -> nalgebra::DMatrix<f64> {
    nalgebra::DMatrix::from_fn(a.rows, a.cols, |i, j| a.get(i, j))
}

/// `(AᵀA + α²I)⁻¹ Aᵀb` by a dense Cholesky solve.
pub fn tikhonov_oracle(a: &DenseMatrix<f64>, b: &[f64], alpha: f64) -> Vec<f64> {
    let m = to_nalgebra(a);
    let n = m.ncols();
    let lhs = m.transpose() * &m + nalgebra::DMatrix::identity(n, n) * (alpha * alpha);
    let rhs = m.transpose() * nalgebra::DVector::from_column_slice(b);
    lhs.cholesky().expect("SPD").solve(&rhs).as_slice().to_vec()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let n: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    d / n.max(f64::MIN_POSITIVE)
}

/// The N=64 calibration setup: 180 views, 1% noise, uniform perturbations of
/// the given half-width on θ and R, bounds equal to the half-width.
pub fn calibration_config(half_width: f64, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        n: 64,
        theta_half_width: half_width,
        r_half_width: half_width,
        seed,
        ..ExperimentConfig::default()
    }
}

pub fn problem(cfg: &ExperimentConfig) -> SimulatedProblem<f64> {
    simulate_problem(cfg).expect("simulation")
}

pub fn opts() -> BcdOptions<f64> {
    BcdOptions::default()
}
