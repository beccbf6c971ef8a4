//! Alternating minimization driver: image solves and per-view pose fits,
//! optional fixed-point acceleration, stopping rule and error tracking.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;

use crate::accel::{irons_tuck_step, AccelStep, AndersonState, DeltaHistory};
use crate::error::{arg_err, Error, Result};
use crate::format::fmt_sci;
use crate::geometry::{FanBeamGeometry, GeometryParams};
use crate::linsolve::{solve, LinSolveOptions, LinSolveResult, LinSolverKind};
use crate::nlsolve::{solve_view_params, ImplicitFilterOptions};
use crate::projector::{project_view, StackedOperator};
use crate::scalar::{vecops, Real};
use crate::simulate::Sinogram;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccelKind {
    None,
    Anderson,
    CrossedSecant,
    IronsTuck,
}

impl AccelKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Anderson => "anderson",
            Self::CrossedSecant => "crossed_secant",
            Self::IronsTuck => "irons_tuck",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(Self::None),
            "anderson" => Some(Self::Anderson),
            "crossed_secant" => Some(Self::CrossedSecant),
            "irons_tuck" => Some(Self::IronsTuck),
            _ => None,
        }
    }
}

/// Which vector the accelerator extrapolates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccelTarget {
    /// The image only.
    X,
    /// The concatenation `(x, θ, R)` in raw units.
    Omega,
}

impl AccelTarget {
    pub fn name(self) -> &'static str {
        match self {
            Self::X => "x",
            Self::Omega => "omega",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "x" => Some(Self::X),
            "omega" => Some(Self::Omega),
            _ => None,
        }
    }
}

/// Order of the two half-steps inside one outer iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ordering {
    /// Image solve, then pose fit to the new image.
    XFirst,
    /// Pose fit to the current image, then image solve (the fixed-point map `g`).
    PFirst,
}

impl Ordering {
    pub fn name(self) -> &'static str {
        match self {
            Self::XFirst => "x_first",
            Self::PFirst => "p_first",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "x_first" => Some(Self::XFirst),
            "p_first" => Some(Self::PFirst),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BcdOptions<T> {
    pub max_outer: usize,
    /// Stop once `‖x_k − x_{k−1}‖ / ‖x_{k−1}‖ ≤ stop_tol`.
    pub stop_tol: T,
    pub lin_solver: LinSolverKind,
    pub lin: LinSolveOptions<T>,
    /// Reuse the first GCV-selected parameter in later hybrid LSQR solves.
    pub freeze_alpha: bool,
    pub accel: AccelKind,
    pub accel_target: AccelTarget,
    pub ordering: Ordering,
    pub parallel_views: bool,
    /// Worker threads for the per-view fits; 0 uses rayon's default.
    pub workers: usize,
    pub anderson_window: usize,
    pub cond_max: T,
    pub nl: ImplicitFilterOptions,
}

impl<T: Real> Default for BcdOptions<T> {
    fn default() -> Self {
        Self {
            max_outer: 20,
            stop_tol: T::lit(0.03),
            lin_solver: LinSolverKind::HybridLsqr,
            lin: LinSolveOptions::default(),
            freeze_alpha: false,
            accel: AccelKind::None,
            accel_target: AccelTarget::X,
            ordering: Ordering::PFirst,
            parallel_views: false,
            workers: 0,
            anderson_window: 1,
            cond_max: T::lit(1e8),
            nl: ImplicitFilterOptions::default(),
        }
    }
}

impl<T: Real> BcdOptions<T> {
    pub fn validate(&self) -> Result<()> {
        if self.max_outer < 1 {
            return arg_err("max_outer must be at least 1");
        }
        if !(self.stop_tol > T::zero() && self.stop_tol < T::one()) {
            return arg_err("stop_tol must lie in (0, 1)");
        }
        if self.accel_target == AccelTarget::Omega && self.ordering == Ordering::XFirst {
            return arg_err("the (x, p) acceleration target requires p_first ordering");
        }
        if self.anderson_window < 1 {
            return arg_err("anderson_window must be at least 1");
        }
        if self.nl.n_scales < 1 || self.nl.max_steps_per_scale < 1 {
            return arg_err("implicit filtering needs at least one scale and one step");
        }
        Ok(())
    }

    /// Thread pool for the per-view fits, or `None` for serial execution.
    pub fn build_pool(&self) -> Result<Option<rayon::ThreadPool>> {
        if !self.parallel_views {
            return Ok(None);
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map(Some)
            .map_err(|e| Error::Solver(e.to_string()))
    }
}

/// Ground truth for error reporting.
#[derive(Debug, Clone, Copy)]
pub struct Truth<'a, T> {
    pub image: &'a [T],
    pub params: &'a GeometryParams<T>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorMetrics<T> {
    pub image_err: T,
    pub angle_err: T,
    pub r_err: T,
    /// The true perturbation has zero norm; angle/R errors are absolute norms.
    pub absolute_params: bool,
}

/// Relative image error and relative errors of the estimated perturbations
/// `params − initial` against the true ones `truth − initial`.
pub fn relative_errors<T: Real>(
    x: &[T],
    params: &GeometryParams<T>,
    initial: &GeometryParams<T>,
    truth: &Truth<'_, T>,
) -> Result<ErrorMetrics<T>> {
    let nv = initial.n_views();
    if x.len() != truth.image.len() || params.n_views() != nv || truth.params.n_views() != nv {
        return arg_err("relative_errors: dimension mismatch");
    }
    let xn = vecops::norm(truth.image);
    let image_err = if xn > T::zero() {
        vecops::dist(x, truth.image) / xn
    } else {
        vecops::norm(x)
    };
    let pert_err = |est: &[T], tru: &[T], init: &[T]| -> (T, T) {
        let mut diff = T::zero();
        let mut tn = T::zero();
        for i in 0..init.len() {
            let e = est[i] - init[i];
            let t = tru[i] - init[i];
            diff += (e - t) * (e - t);
            tn += t * t;
        }
        (diff.sqrt(), tn.sqrt())
    };
    let (da, na) = pert_err(&params.thetas, &truth.params.thetas, &initial.thetas);
    let (dr, nr) = pert_err(&params.radii, &truth.params.radii, &initial.radii);
    let absolute_params = na == T::zero() || nr == T::zero();
    Ok(ErrorMetrics {
        image_err,
        angle_err: if na > T::zero() { da / na } else { da },
        r_err: if nr > T::zero() { dr / nr } else { dr },
        absolute_params,
    })
}

/// Result of fitting every view's pose.
#[derive(Debug, Clone)]
pub struct ViewUpdate<T> {
    pub params: GeometryParams<T>,
    /// Views whose fit failed; they keep their previous pose.
    pub failures: Vec<usize>,
    pub misfit_before: T,
    pub misfit_after: T,
    pub evaluations: usize,
}

/// Fits `(θᵢ, Rᵢ)` independently for every view, optionally on a thread pool.
/// Results are identical for serial and parallel execution.
pub fn update_all_view_params<T: Real>(
    x: &[T],
    b: &Sinogram<T>,
    params: &GeometryParams<T>,
    geom: &FanBeamGeometry,
    nl: &ImplicitFilterOptions,
    pool: Option<&rayon::ThreadPool>,
) -> Result<ViewUpdate<T>> {
    let nv = params.n_views();
    if b.n_views() != nv || b.n_detectors != geom.n_detectors || x.len() != geom.n_unknowns() {
        return arg_err("update_all_view_params: dimension mismatch");
    }
    let fit = |i: usize| {
        solve_view_params(
            x,
            b.view(i),
            geom,
            (params.thetas[i], params.radii[i]),
            (params.theta_bounds[i], params.r_bounds[i]),
            nl,
        )
    };
    let fits: Vec<_> = match pool {
        Some(pool) => pool.install(|| (0..nv).into_par_iter().map(fit).collect()),
        None => (0..nv).map(fit).collect(),
    };
    let mut out = params.clone();
    let mut failures = Vec::new();
    let mut before = T::zero();
    let mut after = T::zero();
    let mut evaluations = 0;
    for (i, f) in fits.into_iter().enumerate() {
        match f {
            Ok(v) => {
                out.thetas[i] = v.theta;
                out.radii[i] = v.r;
                before += v.start_misfit;
                after += v.misfit;
                evaluations += v.evaluations;
            }
            Err(_) => failures.push(i),
        }
    }
    Ok(ViewUpdate {
        params: out,
        failures,
        misfit_before: before.sqrt(),
        misfit_after: after.sqrt(),
        evaluations,
    })
}

/// Shared, read-only inputs of one reconstruction.
pub struct BcdContext<'a, T> {
    pub geom: &'a FanBeamGeometry,
    pub b: &'a Sinogram<T>,
    pub opts: BcdOptions<T>,
    pool: Option<rayon::ThreadPool>,
}

/// Output of one evaluation of the fixed-point map.
#[derive(Debug, Clone)]
pub struct GStep<T> {
    pub x: Vec<T>,
    pub params: GeometryParams<T>,
    pub view: ViewUpdate<T>,
    pub lin: LinSolveResult<T>,
}

impl<'a, T: Real> BcdContext<'a, T> {
    pub fn new(geom: &'a FanBeamGeometry, b: &'a Sinogram<T>, opts: BcdOptions<T>) -> Result<Self> {
        opts.validate()?;
        if b.n_views() != geom.n_views || b.n_detectors != geom.n_detectors {
            return arg_err("sinogram shape does not match the geometry");
        }
        let pool = opts.build_pool()?;
        Ok(Self {
            geom,
            b,
            opts,
            pool,
        })
    }

    /// Image solve with the operator assembled at `params`.
    pub fn solve_image(&self, params: &GeometryParams<T>) -> Result<LinSolveResult<T>> {
        let op = StackedOperator::assemble(params, self.geom)?;
        solve(self.opts.lin_solver, &op, &self.b.values, &self.opts.lin)
    }

    pub fn update_params(&self, x: &[T], params: &GeometryParams<T>) -> Result<ViewUpdate<T>> {
        update_all_view_params(
            x,
            self.b,
            params,
            self.geom,
            &self.opts.nl,
            self.pool.as_ref(),
        )
    }

    /// `‖A(params) x − b‖₂`, or NaN when a pose is not admissible.
    pub fn residual(&self, x: &[T], params: &GeometryParams<T>) -> T {
        let nd = self.geom.n_detectors;
        let mut scratch = vec![T::zero(); nd];
        let mut acc = T::zero();
        for v in 0..params.n_views() {
            if project_view(
                params.thetas[v],
                params.radii[v],
                self.geom,
                x,
                &mut scratch,
            )
            .is_err()
            {
                return T::nan();
            }
            acc += scratch
                .iter()
                .zip(self.b.view(v))
                .map(|(&p, &q)| (p - q) * (p - q))
                .sum::<T>();
        }
        acc.sqrt()
    }

    /// One cycle of the fixed-point map: fit every pose to `x_k` starting at
    /// `params`, then solve for the image at the new poses.
    pub fn fixed_point_g(&self, x_k: &[T], params: &GeometryParams<T>) -> Result<GStep<T>> {
        if x_k.len() != self.geom.n_unknowns() {
            return arg_err("fixed_point_g: image has the wrong length");
        }
        let view = self.update_params(x_k, params)?;
        let lin = self.solve_image(&view.params)?;
        Ok(GStep {
            x: lin.x.clone(),
            params: view.params.clone(),
            view,
            lin,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Tolerance,
    MaxIterations,
}

impl Termination {
    pub fn name(self) -> &'static str {
        match self {
            Self::Tolerance => "tolerance",
            Self::MaxIterations => "max_iterations",
        }
    }
}

/// State after one outer iteration (iteration 0 is the initial reconstruction).
#[derive(Debug, Clone, PartialEq)]
pub struct IterRecord<T> {
    pub iter: usize,
    pub errors: Option<ErrorMetrics<T>>,
    pub residual: T,
    pub rel_change: Option<T>,
    /// Wall time since the start of the run.
    pub seconds: f64,
    /// Cumulative evaluations of the fixed-point map.
    pub g_evals: usize,
    pub accel_degenerate: bool,
    pub view_failures: usize,
}

#[derive(Debug, Clone)]
pub struct BcdReport<T> {
    pub history: Vec<IterRecord<T>>,
    pub x: Vec<T>,
    pub params: GeometryParams<T>,
    pub termination: Termination,
    /// Regularization parameter of each hybrid LSQR solve, in call order.
    pub alphas: Vec<T>,
}

impl<T: Real> BcdReport<T> {
    /// Number of outer iterations performed.
    pub fn outer_iterations(&self) -> usize {
        self.history.len() - 1
    }

    pub fn initial(&self) -> &IterRecord<T> {
        &self.history[0]
    }

    pub fn last(&self) -> &IterRecord<T> {
        self.history.last().expect("history has the initial record")
    }

    /// One row per record: `iter,image_err,angle_err,r_err,residual[,seconds]`.
    /// Missing errors are written as `nan`.
    pub fn write_csv<W: Write>(&self, mut w: W, include_timing: bool) -> std::io::Result<()> {
        let mut header = "iter,image_err,angle_err,r_err,residual".to_string();
        if include_timing {
            header.push_str(",seconds");
        }
        writeln!(w, "{header}")?;
        for rec in &self.history {
            let (a, b, c) = match rec.errors {
                Some(e) => (e.image_err.as_f64(), e.angle_err.as_f64(), e.r_err.as_f64()),
                None => (f64::NAN, f64::NAN, f64::NAN),
            };
            let mut line = format!(
                "{},{},{},{},{}",
                rec.iter,
                fmt_sci(a),
                fmt_sci(b),
                fmt_sci(c),
                fmt_sci(rec.residual.as_f64())
            );
            if include_timing {
                line.push(',');
                line.push_str(&fmt_sci(rec.seconds));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

/// Accelerator state for either target.
enum Accelerator<T> {
    None,
    Anderson(AndersonState<T>),
    CrossedSecant(DeltaHistory<T>),
    IronsTuck,
}

fn concat<T: Real>(x: &[T], p: &GeometryParams<T>) -> Vec<T> {
    let mut w = Vec::with_capacity(x.len() + 2 * p.n_views());
    w.extend_from_slice(x);
    w.extend_from_slice(&p.thetas);
    w.extend_from_slice(&p.radii);
    w
}

fn split<T: Real>(w: &[T], n: usize, template: &GeometryParams<T>) -> (Vec<T>, GeometryParams<T>) {
    let nv = template.n_views();
    let mut p = template.clone();
    p.thetas.copy_from_slice(&w[n..n + nv]);
    p.radii.copy_from_slice(&w[n + nv..n + 2 * nv]);
    (w[..n].to_vec(), p)
}

/// Runs block coordinate descent from the initial poses `p0`.
///
/// Both orderings start from `x₀`, the image solved at `p0`, which is
/// recorded as iteration 0. With `truth` the image and perturbation errors
/// are tracked per iteration.
pub fn bcd_run<T: Real>(
    b: &Sinogram<T>,
    p0: &GeometryParams<T>,
    geom: &FanBeamGeometry,
    truth: Option<&Truth<'_, T>>,
    opts: &BcdOptions<T>,
) -> Result<BcdReport<T>> {
    p0.validate()?;
    if p0.n_views() != geom.n_views {
        return arg_err("initial parameters do not match the geometry's view count");
    }
    let mut ctx = BcdContext::new(geom, b, opts.clone())?;
    let start = Instant::now();
    let n = geom.n_unknowns();
    let mut alphas = Vec::new();

    let lin0 = ctx.solve_image(p0)?;
    if let Some(a) = lin0.chosen_alpha {
        alphas.push(a);
        if opts.freeze_alpha && opts.lin_solver == LinSolverKind::HybridLsqr {
            ctx.opts.lin.lsqr_alpha = Some(a);
        }
    }
    let mut x = lin0.x;
    let mut p = p0.clone();
    let errors_at = |x: &[T], p: &GeometryParams<T>| -> Result<Option<ErrorMetrics<T>>> {
        truth.map(|t| relative_errors(x, p, p0, t)).transpose()
    };

    let mut history = vec![IterRecord {
        iter: 0,
        errors: errors_at(&x, &p)?,
        residual: ctx.residual(&x, &p),
        rel_change: None,
        seconds: start.elapsed().as_secs_f64(),
        g_evals: 0,
        accel_degenerate: false,
        view_failures: 0,
    }];

    let mut acc = match opts.accel {
        AccelKind::None => Accelerator::None,
        AccelKind::Anderson => {
            Accelerator::Anderson(AndersonState::new(opts.anderson_window, opts.cond_max)?)
        }
        AccelKind::CrossedSecant => Accelerator::CrossedSecant(DeltaHistory::new()),
        AccelKind::IronsTuck => Accelerator::IronsTuck,
    };
    let mut g_evals = 0usize;
    let mut termination = Termination::MaxIterations;

    // x_first: poses fitted to the current image, carried between iterations
    let mut fitted: Option<ViewUpdate<T>> = None;

    for k in 1..=opts.max_outer {
        let mut failures = 0;
        let mut note_lin = |lin: &LinSolveResult<T>| {
            if let Some(a) = lin.chosen_alpha {
                alphas.push(a);
            }
        };

        let (x_new, p_new, degenerate) = match opts.ordering {
            Ordering::PFirst => {
                let mut g = |x: &[T], p: &GeometryParams<T>| -> Result<GStep<T>> {
                    g_evals += 1;
                    let s = ctx.fixed_point_g(x, p)?;
                    failures += s.view.failures.len();
                    note_lin(&s.lin);
                    Ok(s)
                };
                match opts.accel_target {
                    AccelTarget::X => {
                        let s1 = g(&x, &p)?;
                        match &mut acc {
                            Accelerator::None => (s1.x, s1.params, false),
                            Accelerator::Anderson(st) => {
                                let st = st.update(&x, &s1.x)?;
                                (st.value, s1.params, st.degenerate)
                            }
                            Accelerator::CrossedSecant(h) => {
                                let st = h.crossed_secant(&x, &s1.x);
                                (st.value, s1.params, st.degenerate)
                            }
                            Accelerator::IronsTuck => {
                                let s2 = g(&s1.x, &s1.params)?;
                                let st = irons_tuck_step(&x, &s1.x, &s2.x);
                                (st.value, s2.params, st.degenerate)
                            }
                        }
                    }
                    AccelTarget::Omega => {
                        let w = concat(&x, &p);
                        let s1 = g(&x, &p)?;
                        let fw = concat(&s1.x, &s1.params);
                        let st: AccelStep<Vec<T>> = match &mut acc {
                            Accelerator::None => AccelStep {
                                value: fw,
                                degenerate: false,
                            },
                            Accelerator::Anderson(st) => st.update(&w, &fw)?,
                            Accelerator::CrossedSecant(h) => h.crossed_secant(&w, &fw),
                            Accelerator::IronsTuck => {
                                let s2 = g(&s1.x, &s1.params)?;
                                let ffw = concat(&s2.x, &s2.params);
                                irons_tuck_step(&w, &fw, &ffw)
                            }
                        };
                        let (xn, pn) = split(&st.value, n, &p);
                        (xn, pn, st.degenerate)
                    }
                }
            }
            Ordering::XFirst => {
                // g(x) = solve(fit(x)); the fit of the current x is already known
                let mut fit = |x: &[T], p: &GeometryParams<T>| -> Result<ViewUpdate<T>> {
                    let v = ctx.update_params(x, p)?;
                    failures += v.failures.len();
                    Ok(v)
                };
                if k == 1 {
                    let v = fit(&x, &p)?;
                    let pn = v.params.clone();
                    fitted = Some(v);
                    (x.clone(), pn, false)
                } else {
                    let pk = fitted.take().expect("fit from previous iteration").params;
                    g_evals += 1;
                    let lin1 = ctx.solve_image(&pk)?;
                    note_lin(&lin1);
                    let fx = lin1.x;
                    let (xn, p_from, degenerate) = match &mut acc {
                        Accelerator::None => (fx, pk, false),
                        Accelerator::Anderson(st) => {
                            let s = st.update(&x, &fx)?;
                            (s.value, pk, s.degenerate)
                        }
                        Accelerator::CrossedSecant(h) => {
                            let s = h.crossed_secant(&x, &fx);
                            (s.value, pk, s.degenerate)
                        }
                        Accelerator::IronsTuck => {
                            let v1 = fit(&fx, &pk)?;
                            g_evals += 1;
                            let lin2 = ctx.solve_image(&v1.params)?;
                            note_lin(&lin2);
                            let s = irons_tuck_step(&x, &fx, &lin2.x);
                            (s.value, v1.params, s.degenerate)
                        }
                    };
                    let v = fit(&xn, &p_from)?;
                    let pn = v.params.clone();
                    fitted = Some(v);
                    (xn, pn, degenerate)
                }
            }
        };

        let xn_norm = vecops::norm(&x);
        let rel_change = if opts.ordering == Ordering::XFirst && k == 1 {
            None
        } else if xn_norm > T::zero() {
            Some(vecops::dist(&x_new, &x) / xn_norm)
        } else {
            Some(vecops::norm(&x_new))
        };
        x = x_new;
        p = p_new;
        history.push(IterRecord {
            iter: k,
            errors: errors_at(&x, &p)?,
            residual: ctx.residual(&x, &p),
            rel_change,
            seconds: start.elapsed().as_secs_f64(),
            g_evals,
            accel_degenerate: degenerate,
            view_failures: failures,
        });
        if let Some(rc) = rel_change {
            if rc <= opts.stop_tol {
                termination = Termination::Tolerance;
                break;
            }
        }
    }

    Ok(BcdReport {
        history,
        x,
        params: p,
        termination,
        alphas,
    })
}
