//! Bound-constrained derivative-free minimization of the per-view geometry
//! misfit, in the style of implicit filtering: difference gradients on a
//! shrinking stencil, projected steps with Armijo backtracking, and a scale
//! reduction whenever the stencil finds no decrease.

use crate::error::{Error, Result};
use crate::geometry::FanBeamGeometry;
use crate::projector::project_view;
use crate::scalar::Real;

/// Minimize `objective(θ, r)` over the box `[lo, hi]` starting from `start`.
pub struct BoxProblem2D<T, F> {
    pub objective: F,
    pub lo: [T; 2],
    pub hi: [T; 2],
    pub start: [T; 2],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterResult<T> {
    pub point: [T; 2],
    pub value: T,
    pub start_value: T,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImplicitFilterOptions {
    /// Number of stencil scales `h₀ 2^{-k}`, `k = 0..n_scales`.
    pub n_scales: usize,
    pub max_steps_per_scale: usize,
}

impl Default for ImplicitFilterOptions {
    fn default() -> Self {
        Self {
            n_scales: 7,
            max_steps_per_scale: 20,
        }
    }
}

impl ImplicitFilterOptions {
    /// Stencil widths as fractions of each coordinate's box width, starting at one half.
    pub fn scales<T: Real>(&self) -> Vec<T> {
        (0..self.n_scales)
            .map(|k| T::lit(0.5 * 0.5f64.powi(k as i32)))
            .collect()
    }

    /// Finest stencil width for a box of the given width.
    pub fn resolution<T: Real>(&self, box_width: T) -> T {
        box_width * self.scales::<T>().last().copied().unwrap_or(T::lit(0.5))
    }
}

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 8;

/// Runs the stencil-based projected search. `scales` are stencil widths in
/// units of the box width per coordinate and must be positive and strictly decreasing.
/// Coordinates with a zero-width box stay fixed. Non-finite objective values
/// count as `+∞`.
pub fn implicit_filter_2d<T: Real, F: Fn(T, T) -> T>(
    p: &BoxProblem2D<T, F>,
    scales: &[T],
    max_steps_per_scale: usize,
) -> Result<FilterResult<T>> {
    if max_steps_per_scale < 1 {
        return Err(Error::Argument(
            "max_steps_per_scale must be at least 1".into(),
        ));
    }
    if scales.is_empty()
        || scales.iter().any(|&h| !(h > T::zero()))
        || scales.windows(2).any(|w| !(w[1] < w[0]))
    {
        return Err(Error::Argument(
            "scales must be positive and strictly decreasing".into(),
        ));
    }
    for i in 0..2 {
        if !(p.lo[i] <= p.hi[i]) {
            return Err(Error::Argument(format!("empty box in coordinate {i}")));
        }
    }
    let width = [p.hi[0] - p.lo[0], p.hi[1] - p.lo[1]];
    let active: Vec<usize> = (0..2).filter(|&i| width[i] > T::zero()).collect();
    let to_point = |u: [T; 2]| -> [T; 2] {
        let mut x = p.lo;
        for i in 0..2 {
            x[i] = p.lo[i] + u[i] * width[i];
        }
        x
    };
    let mut evaluations = 0usize;
    let mut eval = |u: [T; 2]| -> T {
        evaluations += 1;
        let x = to_point(u);
        let f = (p.objective)(x[0], x[1]);
        if f.is_finite() {
            f
        } else {
            T::infinity()
        }
    };
    let clamp01 = |v: T| v.max(T::zero()).min(T::one());

    let mut u = [T::zero(); 2];
    for i in 0..2 {
        if width[i] > T::zero() {
            u[i] = clamp01((p.start[i] - p.lo[i]) / width[i]);
        }
    }
    let mut f0 = eval(u);
    let start_value = f0;

    if !active.is_empty() {
        for &h in scales {
            let h = h.min(T::lit(0.5));
            // BFGS model of the Hessian in normalized coordinates, reset at every scale
            let mut model: Option<[[T; 2]; 2]> = None;
            let mut last: Option<([T; 2], [T; 2])> = None;
            for _ in 0..max_steps_per_scale {
                let mut best = (f0, u);
                let mut g = [T::zero(); 2];
                let mut curv = [T::zero(); 2];
                let mut has_curv = [false; 2];
                for &i in &active {
                    let mut up = u;
                    up[i] += h;
                    let mut dn = u;
                    dn[i] -= h;
                    let fp = if up[i] <= T::one() {
                        Some(eval(up))
                    } else {
                        None
                    };
                    let fm = if dn[i] >= T::zero() {
                        Some(eval(dn))
                    } else {
                        None
                    };
                    for (fv, pt) in [(fp, up), (fm, dn)] {
                        if let Some(fv) = fv {
                            if fv < best.0 {
                                best = (fv, pt);
                            }
                        }
                    }
                    match (fp, fm) {
                        (Some(a), Some(b)) => {
                            g[i] = (a - b) / (T::lit(2.0) * h);
                            curv[i] = (a - T::lit(2.0) * f0 + b) / (h * h);
                            has_curv[i] = curv[i].is_finite() && curv[i] > T::zero();
                        }
                        (Some(a), None) => g[i] = (a - f0) / h,
                        (None, Some(b)) => g[i] = (f0 - b) / h,
                        (None, None) => {}
                    }
                    if !g[i].is_finite() {
                        g[i] = T::zero();
                    }
                }
                if !(best.0 < f0) {
                    // stencil failure
                    break;
                }
                let gnorm = active.iter().map(|&i| g[i] * g[i]).sum::<T>().sqrt();
                let diag = |i: usize| if has_curv[i] { curv[i] } else { gnorm / h };
                if let (Some(hm), Some((s, g_prev))) = (model.as_mut(), last) {
                    bfgs_update(hm, s, [g[0] - g_prev[0], g[1] - g_prev[1]]);
                }
                let hm = *model.get_or_insert_with(|| {
                    let mut m = [[T::zero(); 2]; 2];
                    for &i in &active {
                        m[i][i] = diag(i);
                    }
                    m
                });

                let mut accepted = None;
                if gnorm > T::zero() {
                    // coordinates pinned at a bound with the gradient pushing outward
                    let free: Vec<usize> = active
                        .iter()
                        .copied()
                        .filter(|&i| {
                            !((u[i] <= T::zero() && g[i] > T::zero())
                                || (u[i] >= T::one() && g[i] < T::zero()))
                        })
                        .collect();
                    let mut dir = newton_direction(&hm, &g, &free);
                    let descent: T = active.iter().map(|&i| g[i] * dir[i]).sum();
                    if !(descent < T::zero()) {
                        dir = [T::zero(); 2];
                        for &i in &active {
                            dir[i] = -g[i] / diag(i);
                        }
                    }
                    let mut lambda = T::one();
                    for _ in 0..MAX_BACKTRACKS {
                        let mut ut = u;
                        for &i in &active {
                            ut[i] = clamp01(u[i] + lambda * dir[i]);
                        }
                        if ut == u {
                            break;
                        }
                        let ft = eval(ut);
                        let decrease: T = active.iter().map(|&i| g[i] * (u[i] - ut[i])).sum();
                        if ft <= f0 - T::lit(ARMIJO) * decrease && ft < f0 {
                            accepted = Some((ft, ut));
                            break;
                        }
                        lambda /= T::lit(2.0);
                    }
                }
                let (fn_, un) = match accepted {
                    Some((ft, ut)) if ft <= best.0 => (ft, ut),
                    _ => best,
                };
                last = Some(([un[0] - u[0], un[1] - u[1]], g));
                f0 = fn_;
                u = un;
            }
        }
    }
    Ok(FilterResult {
        point: to_point(u),
        value: f0,
        start_value,
        evaluations,
    })
}

/// `-H⁻¹g` restricted to the `free` coordinates; other components are zero.
fn newton_direction<T: Real>(hm: &[[T; 2]; 2], g: &[T; 2], free: &[usize]) -> [T; 2] {
    let mut d = [T::zero(); 2];
    match free {
        [i] => d[*i] = -g[*i] / hm[*i][*i],
        [0, 1] => {
            let det = hm[0][0] * hm[1][1] - hm[0][1] * hm[1][0];
            if det > T::zero() && hm[0][0] > T::zero() {
                d[0] = -(hm[1][1] * g[0] - hm[0][1] * g[1]) / det;
                d[1] = -(hm[0][0] * g[1] - hm[1][0] * g[0]) / det;
            } else {
                d = [T::nan(), T::nan()];
            }
        }
        _ => {}
    }
    d
}

/// BFGS update of a 2×2 Hessian model; skipped when the curvature condition fails.
fn bfgs_update<T: Real>(hm: &mut [[T; 2]; 2], s: [T; 2], y: [T; 2]) {
    let ys = y[0] * s[0] + y[1] * s[1];
    let hs = [
        hm[0][0] * s[0] + hm[0][1] * s[1],
        hm[1][0] * s[0] + hm[1][1] * s[1],
    ];
    let shs = s[0] * hs[0] + s[1] * hs[1];
    let ny = (y[0] * y[0] + y[1] * y[1]).sqrt();
    let ns = (s[0] * s[0] + s[1] * s[1]).sqrt();
    if !(ys > T::lit(1e-10) * ny * ns && shs > T::zero()) {
        return;
    }
    for i in 0..2 {
        for j in 0..2 {
            hm[i][j] = hm[i][j] - hs[i] * hs[j] / shs + y[i] * y[j] / ys;
        }
    }
}

/// Outcome of one view's pose estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewFit<T> {
    pub theta: T,
    pub r: T,
    pub misfit: T,
    pub start_misfit: T,
    pub evaluations: usize,
}

/// `‖A(θ, r) x − bᵢ‖²` evaluated matrix-free.
pub fn view_misfit<T: Real>(
    theta: T,
    r: T,
    geom: &FanBeamGeometry,
    x: &[T],
    b_i: &[T],
    scratch: &mut [T],
) -> Result<T> {
    project_view(theta, r, geom, x, scratch)?;
    Ok(scratch
        .iter()
        .zip(b_i)
        .map(|(&p, &q)| (p - q) * (p - q))
        .sum())
}

/// Fits `(θ, r)` of one view to its sinogram block for a fixed image.
/// A start outside the box is clamped into it.
pub fn solve_view_params<T: Real>(
    x: &[T],
    b_i: &[T],
    geom: &FanBeamGeometry,
    start: (T, T),
    bounds: ((T, T), (T, T)),
    opts: &ImplicitFilterOptions,
) -> Result<ViewFit<T>> {
    let ((tlo, thi), (rlo, rhi)) = bounds;
    if !(rlo > geom.min_radius::<T>()) {
        return Err(Error::Geometry(format!(
            "lower radius bound {rlo} is not admissible"
        )));
    }
    if x.len() != geom.n_unknowns() || b_i.len() != geom.n_detectors {
        return Err(Error::Argument(
            "solve_view_params: dimension mismatch".into(),
        ));
    }
    let scratch = std::cell::RefCell::new(vec![T::zero(); geom.n_detectors]);
    let objective = |t: T, r: T| -> T {
        view_misfit(t, r, geom, x, b_i, &mut scratch.borrow_mut()).unwrap_or(T::infinity())
    };
    let problem = BoxProblem2D {
        objective,
        lo: [tlo, rlo],
        hi: [thi, rhi],
        start: [start.0, start.1],
    };
    let res = implicit_filter_2d(&problem, &opts.scales::<T>(), opts.max_steps_per_scale)?;
    Ok(ViewFit {
        theta: res.point[0],
        r: res.point[1],
        misfit: res.value,
        start_misfit: res.start_value,
        evaluations: res.evaluations,
    })
}
