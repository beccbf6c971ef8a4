//! Regularized linear least-squares solvers for the image update:
//! hybrid LSQR with projected Tikhonov/GCV, nonnegative FISTA and IRN.

use crate::dense::svd_jacobi;
use crate::error::{arg_err, Result};
use crate::projector::LinearOperator;
use crate::scalar::{vecops, Real};

#[derive(Debug, Clone, PartialEq)]
pub struct LinSolveResult<T> {
    pub x: Vec<T>,
    pub iterations: usize,
    /// `‖A x_j − b‖₂` after each iteration.
    pub residual_history: Vec<T>,
    /// Regularization parameter used by hybrid LSQR.
    pub chosen_alpha: Option<T>,
    /// Set when the bidiagonalization terminated early.
    pub breakdown: bool,
}

impl<T: Real> LinSolveResult<T> {
    fn zero(n: usize, alpha: Option<T>) -> Self {
        Self {
            x: vec![T::zero(); n],
            iterations: 0,
            residual_history: vec![],
            chosen_alpha: alpha,
            breakdown: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinSolverKind {
    HybridLsqr,
    Fista,
    Irn,
}

impl LinSolverKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::HybridLsqr => "hybrid_lsqr",
            Self::Fista => "fista",
            Self::Irn => "irn",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "hybrid_lsqr" | "lsqr" => Some(Self::HybridLsqr),
            "fista" => Some(Self::Fista),
            "irn" => Some(Self::Irn),
            _ => None,
        }
    }
}

/// Budgets and parameters for all three solvers.
#[derive(Debug, Clone, PartialEq)]
pub struct LinSolveOptions<T> {
    pub lsqr_iters: usize,
    /// Fixed Tikhonov parameter; `None` selects it by GCV.
    pub lsqr_alpha: Option<T>,
    pub fista_iters: usize,
    pub fista_lipschitz: Option<T>,
    pub irn_outer: usize,
    pub irn_inner: usize,
    pub irn_lambda: T,
    pub irn_eps: T,
}

impl<T: Real> Default for LinSolveOptions<T> {
    fn default() -> Self {
        Self {
            lsqr_iters: 50,
            lsqr_alpha: None,
            fista_iters: 200,
            fista_lipschitz: None,
            irn_outer: 5,
            irn_inner: 30,
            irn_lambda: T::lit(0.003),
            irn_eps: T::lit(1e-4),
        }
    }
}

/// Runs the selected solver from a zero initial guess.
pub fn solve<T: Real, A: LinearOperator<T> + ?Sized>(
    kind: LinSolverKind,
    a: &A,
    b: &[T],
    opts: &LinSolveOptions<T>,
) -> Result<LinSolveResult<T>> {
    match kind {
        LinSolverKind::HybridLsqr => hybrid_lsqr(a, b, opts.lsqr_iters, opts.lsqr_alpha),
        LinSolverKind::Fista => fista_nonneg(a, b, opts.fista_iters, opts.fista_lipschitz),
        LinSolverKind::Irn => irn(
            a,
            b,
            opts.irn_outer,
            opts.irn_inner,
            opts.irn_lambda,
            opts.irn_eps,
        ),
    }
}

fn check_dims<T: Real, A: LinearOperator<T> + ?Sized>(a: &A, b: &[T]) -> Result<()> {
    if b.len() != a.nrows() {
        return arg_err(format!(
            "right-hand side has {} entries, operator has {} rows",
            b.len(),
            a.nrows()
        ));
    }
    Ok(())
}

/// Number of GCV grid points and their range relative to `‖B_k‖`.
const GCV_POINTS: usize = 50;
const GCV_LO: f64 = 1e-6;
const GCV_HI: f64 = 1e2;

/// Solution of the projected Tikhonov problem
/// `min ‖B y − β₁e₁‖² + α²‖y‖²` and its residual norm.
struct Projected<T> {
    y: Vec<T>,
    alpha: T,
    residual: T,
}

fn solve_projected<T: Real>(alphas: &[T], betas: &[T], beta1: T, fixed: Option<T>) -> Projected<T> {
    let k = alphas.len();
    // column i of the (k+1) x k lower bidiagonal matrix
    let cols: Vec<Vec<T>> = (0..k)
        .map(|i| {
            let mut c = vec![T::zero(); k + 1];
            c[i] = alphas[i];
            c[i + 1] = betas[i];
            c
        })
        .collect();
    let svd = svd_jacobi(&cols);
    let coef: Vec<T> = svd.u.iter().map(|u| beta1 * u[0]).collect();
    let captured: T = coef.iter().map(|&c| c * c).sum();
    let outside = (beta1 * beta1 - captured).max(T::zero());

    let residual_sq = |alpha: T| -> T {
        let a2 = alpha * alpha;
        let inside: T = svd
            .s
            .iter()
            .zip(&coef)
            .map(|(&s, &c)| {
                let f = if s * s + a2 > T::zero() {
                    a2 / (s * s + a2)
                } else {
                    T::one()
                };
                f * f * c * c
            })
            .sum();
        inside + outside
    };

    let alpha = match fixed {
        Some(a) => a,
        None => {
            let smax = svd
                .s
                .first()
                .copied()
                .unwrap_or(T::one())
                .max(T::min_positive_value());
            let (lo, hi) = (GCV_LO.ln(), GCV_HI.ln());
            let mut best = (T::infinity(), smax);
            for i in 0..GCV_POINTS {
                let e = lo + (hi - lo) * i as f64 / (GCV_POINTS - 1) as f64;
                let alpha = smax * T::lit(e.exp());
                let a2 = alpha * alpha;
                let filt: T = svd.s.iter().map(|&s| s * s / (s * s + a2)).sum();
                let dof = T::lit((k + 1) as f64) - filt;
                let g = residual_sq(alpha) / (dof * dof);
                if g < best.0 {
                    best = (g, alpha);
                }
            }
            best.1
        }
    };

    let a2 = alpha * alpha;
    let mut y = vec![T::zero(); k];
    for ((&s, &c), v) in svd.s.iter().zip(&coef).zip(&svd.v) {
        if s == T::zero() {
            continue;
        }
        vecops::axpy(s * c / (s * s + a2), v, &mut y);
    }
    // with α > 0 the Tikhonov residual differs from ‖By - β₁e₁‖; compute the data term directly
    let mut r = vec![T::zero(); k + 1];
    r[0] = -beta1;
    for i in 0..k {
        r[i] += alphas[i] * y[i];
        r[i + 1] += betas[i] * y[i];
    }
    Projected {
        y,
        alpha,
        residual: vecops::norm(&r),
    }
}

/// Subtracts the projections onto every stored basis vector, twice.
fn reorthogonalize<T: Real>(w: &mut [T], basis: &[Vec<T>]) {
    for _ in 0..2 {
        for q in basis {
            let c = vecops::dot(w, q);
            vecops::axpy(-c, q, w);
        }
    }
}

/// Golub–Kahan bidiagonalization with full reorthogonalization and Tikhonov
/// regularization of the projected problem. When `alpha` is `None` the
/// parameter is re-selected at every iteration by minimizing GCV over a
/// logarithmic grid.
pub fn hybrid_lsqr<T: Real, A: LinearOperator<T> + ?Sized>(
    a: &A,
    b: &[T],
    max_iter: usize,
    alpha: Option<T>,
) -> Result<LinSolveResult<T>> {
    check_dims(a, b)?;
    if max_iter < 1 {
        return arg_err("max_iter must be at least 1");
    }
    let n = a.ncols();
    let beta1 = vecops::norm(b);
    if beta1 == T::zero() {
        return Ok(LinSolveResult::zero(n, alpha.or(Some(T::zero()))));
    }
    let mut u = b.to_vec();
    vecops::scale(T::one() / beta1, &mut u);
    let mut v = a.apply_adjoint(&u);
    let a1 = vecops::norm(&v);
    if a1 == T::zero() {
        // b is orthogonal to the range of A
        let mut res = LinSolveResult::zero(n, alpha.or(Some(T::zero())));
        res.breakdown = true;
        res.residual_history.push(beta1);
        return Ok(res);
    }
    vecops::scale(T::one() / a1, &mut v);

    let mut us = vec![u];
    let mut vs = vec![v];
    let mut alphas = vec![a1];
    let mut betas: Vec<T> = Vec::new();
    let mut norm_est = a1;
    let mut history = Vec::new();
    let mut breakdown = false;
    let mut proj;

    loop {
        let k = vs.len();
        // u_{k+1}
        let mut w = a.apply(&vs[k - 1]);
        vecops::axpy(-alphas[k - 1], &us[k - 1], &mut w);
        reorthogonalize(&mut w, &us);
        let beta = vecops::norm(&w);
        norm_est = norm_est.max(beta);
        let tiny = T::lit(100.0) * T::epsilon() * norm_est;
        let beta_break = beta <= tiny;
        betas.push(if beta_break { T::zero() } else { beta });
        if !beta_break {
            vecops::scale(T::one() / beta, &mut w);
            us.push(w);
        }

        proj = solve_projected(&alphas, &betas, beta1, alpha);
        history.push(proj.residual);

        if beta_break {
            breakdown = true;
            break;
        }
        if k >= max_iter {
            break;
        }
        // v_{k+1}
        let mut z = a.apply_adjoint(&us[k]);
        vecops::axpy(-beta, &vs[k - 1], &mut z);
        reorthogonalize(&mut z, &vs);
        let an = vecops::norm(&z);
        norm_est = norm_est.max(an);
        if an <= T::lit(100.0) * T::epsilon() * norm_est {
            breakdown = true;
            break;
        }
        vecops::scale(T::one() / an, &mut z);
        vs.push(z);
        alphas.push(an);
    }

    let mut x = vec![T::zero(); n];
    for (yi, vi) in proj.y.iter().zip(&vs) {
        vecops::axpy(*yi, vi, &mut x);
    }
    Ok(LinSolveResult {
        x,
        iterations: alphas.len(),
        residual_history: history,
        chosen_alpha: Some(proj.alpha),
        breakdown,
    })
}

/// Largest eigenvalue of `AᵀA` by power iteration from a constant vector.
pub fn estimate_lipschitz<T: Real, A: LinearOperator<T> + ?Sized>(a: &A, iters: usize) -> T {
    let n = a.ncols();
    let mut v = vec![T::one() / T::lit(n as f64).sqrt(); n];
    let mut lambda = T::zero();
    for _ in 0..iters {
        let w = a.apply_adjoint(&a.apply(&v));
        let nw = vecops::norm(&w);
        if nw == T::zero() {
            return T::zero();
        }
        lambda = vecops::dot(&v, &w);
        v = w;
        vecops::scale(T::one() / nw, &mut v);
    }
    lambda
}

fn half_sq_residual<T: Real>(ax: &[T], b: &[T]) -> T {
    T::lit(0.5)
        * ax.iter()
            .zip(b)
            .map(|(&p, &q)| (p - q) * (p - q))
            .sum::<T>()
}

/// Accelerated projected gradient for `min ½‖Ax − b‖²` subject to `x ≥ 0`,
/// restarting the momentum whenever the objective would increase.
pub fn fista_nonneg<T: Real, A: LinearOperator<T> + ?Sized>(
    a: &A,
    b: &[T],
    max_iter: usize,
    lipschitz: Option<T>,
) -> Result<LinSolveResult<T>> {
    check_dims(a, b)?;
    if max_iter < 1 {
        return arg_err("max_iter must be at least 1");
    }
    let n = a.ncols();
    let mut lip = lipschitz.unwrap_or_else(|| estimate_lipschitz(a, 20));
    if !(lip > T::zero()) {
        return Ok(LinSolveResult::zero(n, None));
    }
    let mut x = vec![T::zero(); n];
    let mut ax = vec![T::zero(); a.nrows()];
    let mut y = x.clone();
    let mut ay = ax.clone();
    let mut f = half_sq_residual(&ax, b);
    let mut t = T::one();
    let mut history = Vec::with_capacity(max_iter);
    let mut restarted = true;
    let mut iterations = 0;

    while iterations < max_iter {
        iterations += 1;
        let r: Vec<T> = ay.iter().zip(b).map(|(&p, &q)| p - q).collect();
        let g = a.apply_adjoint(&r);
        let step = T::one() / lip;
        let x_new: Vec<T> = y
            .iter()
            .zip(&g)
            .map(|(&yi, &gi)| (yi - step * gi).max(T::zero()))
            .collect();
        let ax_new = a.apply(&x_new);
        let f_new = half_sq_residual(&ax_new, b);
        if f_new > f {
            if restarted {
                // a plain projected step failed: the Lipschitz estimate is too small
                lip *= T::lit(2.0);
            }
            t = T::one();
            y.clone_from(&x);
            ay.clone_from(&ax);
            restarted = true;
            history.push((T::lit(2.0) * f).sqrt());
            continue;
        }
        restarted = false;
        let t_new = (T::one() + (T::one() + T::lit(4.0) * t * t).sqrt()) / T::lit(2.0);
        let mom = (t - T::one()) / t_new;
        for i in 0..n {
            y[i] = x_new[i] + mom * (x_new[i] - x[i]);
        }
        for i in 0..ay.len() {
            ay[i] = ax_new[i] + mom * (ax_new[i] - ax[i]);
        }
        x = x_new;
        ax = ax_new;
        f = f_new;
        t = t_new;
        history.push((T::lit(2.0) * f).sqrt());
    }
    Ok(LinSolveResult {
        x,
        iterations,
        residual_history: history,
        chosen_alpha: None,
        breakdown: false,
    })
}

/// Conjugate gradients on `(AᵀA + λ diag(w)) x = Aᵀb`, warm-started at `x`.
fn cg_weighted_normal<T: Real, A: LinearOperator<T> + ?Sized>(
    a: &A,
    atb: &[T],
    lambda: T,
    w: &[T],
    x: &mut [T],
    iters: usize,
) {
    let apply_m = |v: &[T]| -> Vec<T> {
        let mut out = a.apply_adjoint(&a.apply(v));
        for ((o, &vi), &wi) in out.iter_mut().zip(v).zip(w) {
            *o += lambda * wi * vi;
        }
        out
    };
    let mx = apply_m(x);
    let mut r: Vec<T> = atb.iter().zip(&mx).map(|(&p, &q)| p - q).collect();
    let mut p = r.clone();
    let mut rr = vecops::dot(&r, &r);
    let stop = T::epsilon() * T::epsilon() * vecops::dot(atb, atb);
    for _ in 0..iters {
        if rr <= stop || rr == T::zero() {
            break;
        }
        let mp = apply_m(&p);
        let pmp = vecops::dot(&p, &mp);
        if !(pmp > T::zero()) {
            break;
        }
        let step = rr / pmp;
        vecops::axpy(step, &p, x);
        vecops::axpy(-step, &mp, &mut r);
        let rr_new = vecops::dot(&r, &r);
        let beta = rr_new / rr;
        for (pi, &ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
        rr = rr_new;
    }
}

/// Iteratively reweighted norm approximation of `min ‖Ax − b‖² + λ‖x‖₁`.
///
/// The first outer step uses unit weights (plain Tikhonov); later steps use
/// `wⱼ = (xⱼ² + eps)^(-1/2)` from the previous iterate.
pub fn irn<T: Real, A: LinearOperator<T> + ?Sized>(
    a: &A,
    b: &[T],
    outer: usize,
    inner: usize,
    lambda: T,
    eps: T,
) -> Result<LinSolveResult<T>> {
    check_dims(a, b)?;
    if outer < 1 || inner < 1 {
        return arg_err("outer and inner iteration counts must be at least 1");
    }
    if !(lambda > T::zero() && eps > T::zero()) {
        return arg_err("lambda and eps must be positive");
    }
    let n = a.ncols();
    let atb = a.apply_adjoint(b);
    let mut x = vec![T::zero(); n];
    let mut w = vec![T::one(); n];
    let mut history = Vec::with_capacity(outer);
    for t in 0..outer {
        if t > 0 {
            for (wi, &xi) in w.iter_mut().zip(&x) {
                *wi = T::one() / (xi * xi + eps).sqrt();
            }
        }
        cg_weighted_normal(a, &atb, lambda, &w, &mut x, inner);
        let ax = a.apply(&x);
        history.push(vecops::dist(&ax, b));
    }
    Ok(LinSolveResult {
        x,
        iterations: outer,
        residual_history: history,
        chosen_alpha: None,
        breakdown: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::DenseMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> DenseMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseMatrix::new(
            rows,
            cols,
            (0..rows * cols)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        )
    }

    #[test]
    fn identity_system_is_solved_exactly() {
        let a = DenseMatrix::<f64>::identity(4);
        let b = [1.0, -2.0, 0.5, 3.0];
        let r = hybrid_lsqr(&a, &b, 10, Some(0.0)).unwrap();
        for (x, y) in r.x.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(r.breakdown);
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let a = random_matrix(6, 4, 1);
        let z = [0.0; 6];
        assert!(hybrid_lsqr(&a, &z, 5, None)
            .unwrap()
            .x
            .iter()
            .all(|&v| v == 0.0));
        assert!(fista_nonneg(&a, &z, 5, None)
            .unwrap()
            .x
            .iter()
            .all(|&v| v == 0.0));
        assert!(irn(&a, &z, 2, 5, 0.1, 1e-4)
            .unwrap()
            .x
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn argument_checks() {
        let a = random_matrix(6, 4, 1);
        assert!(hybrid_lsqr(&a, &[1.0; 5], 5, None).is_err());
        assert!(hybrid_lsqr(&a, &[1.0; 6], 0, None).is_err());
        assert!(irn(&a, &[1.0; 6], 1, 1, 0.0, 1e-3).is_err());
        assert!(irn(&a, &[1.0; 6], 0, 1, 0.1, 1e-3).is_err());
    }

    #[test]
    fn gcv_alpha_is_reported_and_in_range() {
        let a = random_matrix(30, 20, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let b: Vec<f64> = (0..30).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r = hybrid_lsqr(&a, &b, 10, None).unwrap();
        let alpha = r.chosen_alpha.unwrap();
        assert!(alpha > 0.0 && alpha.is_finite());
        assert_eq!(r.residual_history.len(), 10);
        assert!(r.residual_history.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn fista_output_is_nonnegative_and_monotone() {
        let a = random_matrix(12, 8, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r = fista_nonneg(&a, &b, 300, None).unwrap();
        assert!(r.x.iter().all(|&v| v >= 0.0));
        assert!(r
            .residual_history
            .windows(2)
            .all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
        assert!(*r.residual_history.last().unwrap() <= vecops::norm(&b));
    }
}
