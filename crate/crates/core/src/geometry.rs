//! Fan-beam acquisition geometry: per-view source poses, bounds and
//! perturbation sampling.
//!
//! Angles are stored in degrees and only converted to radians inside
//! trigonometric calls. Radii are measured in units of the image half-width.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{arg_err, Error, Result};
use crate::scalar::Real;

/// How wide each fan is opened.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FanCoverage {
    /// Extreme rays are tangent to the circle circumscribing the image square.
    CircumscribedCircle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FanBeamGeometry {
    pub n_pixels: usize,
    pub n_views: usize,
    pub n_detectors: usize,
    /// The image occupies `[-w, w]²`; fixed at 1.
    pub domain_half_width: f64,
    pub fan_coverage: FanCoverage,
    /// Nominal source distance used for the initial guess.
    pub nominal_radius: f64,
}

/// Detector count spanning the image diagonal at unit magnification:
/// `√2·N` rounded to the nearest integer, then up to the next even number.
pub fn detector_count(n_pixels: usize) -> usize {
    let diag = (2f64.sqrt() * n_pixels as f64).round() as usize;
    diag + diag % 2
}

/// Standard acquisition: 180 views at 0, 2, ..., 358 degrees with every source at distance 2.
pub fn default_geometry(n_pixels: usize) -> Result<FanBeamGeometry> {
    FanBeamGeometry::new(n_pixels, 180)
}

impl FanBeamGeometry {
    /// Geometry with `n_views` equispaced views over the full circle and the
    /// default detector count.
    pub fn new(n_pixels: usize, n_views: usize) -> Result<Self> {
        if n_pixels < 2 {
            return arg_err(format!("n_pixels must be at least 2, got {n_pixels}"));
        }
        if n_views < 1 {
            return arg_err("n_views must be at least 1");
        }
        Ok(Self {
            n_pixels,
            n_views,
            n_detectors: detector_count(n_pixels),
            domain_half_width: 1.0,
            fan_coverage: FanCoverage::CircumscribedCircle,
            nominal_radius: 2.0,
        })
    }

    pub fn with_detectors(mut self, n_detectors: usize) -> Result<Self> {
        if n_detectors < 1 {
            return arg_err("n_detectors must be at least 1");
        }
        self.n_detectors = n_detectors;
        Ok(self)
    }

    /// Total number of rays, i.e. rows of the stacked system.
    pub fn n_rays(&self) -> usize {
        self.n_views * self.n_detectors
    }

    /// Number of unknowns, `n_pixels²`.
    pub fn n_unknowns(&self) -> usize {
        self.n_pixels * self.n_pixels
    }

    /// Spacing between nominal view angles in degrees.
    pub fn angle_step(&self) -> f64 {
        360.0 / self.n_views as f64
    }

    pub fn nominal_thetas<T: Real>(&self) -> Vec<T> {
        let step = self.angle_step();
        (0..self.n_views).map(|i| T::lit(i as f64 * step)).collect()
    }

    /// Nominal parameters with symmetric box bounds of the given half-widths.
    pub fn nominal_params<T: Real>(&self, theta_bound: T, r_bound: T) -> Result<GeometryParams<T>> {
        let thetas = self.nominal_thetas::<T>();
        let radii = vec![T::lit(self.nominal_radius); self.n_views];
        GeometryParams::with_symmetric_bounds(thetas, radii, theta_bound, r_bound)
    }

    /// Smallest admissible source distance (exclusive).
    pub fn min_radius<T: Real>(&self) -> T {
        T::SQRT_2() * T::lit(self.domain_half_width)
    }
}

/// Per-view source poses `(θᵢ, Rᵢ)` with box bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometryParams<T> {
    pub thetas: Vec<T>,
    pub radii: Vec<T>,
    pub theta_bounds: Vec<(T, T)>,
    pub r_bounds: Vec<(T, T)>,
}

impl<T: Real> GeometryParams<T> {
    pub fn new(
        thetas: Vec<T>,
        radii: Vec<T>,
        theta_bounds: Vec<(T, T)>,
        r_bounds: Vec<(T, T)>,
    ) -> Result<Self> {
        let p = Self {
            thetas,
            radii,
            theta_bounds,
            r_bounds,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_symmetric_bounds(
        thetas: Vec<T>,
        radii: Vec<T>,
        theta_bound: T,
        r_bound: T,
    ) -> Result<Self> {
        if theta_bound < T::zero() || r_bound < T::zero() {
            return arg_err("bounds must be nonnegative");
        }
        let theta_bounds = thetas
            .iter()
            .map(|&t| (t - theta_bound, t + theta_bound))
            .collect();
        let r_bounds = radii.iter().map(|&r| (r - r_bound, r + r_bound)).collect();
        Self::new(thetas, radii, theta_bounds, r_bounds)
    }

    pub fn n_views(&self) -> usize {
        self.thetas.len()
    }

    /// Checks lengths, source admissibility and bound containment.
    pub fn validate(&self) -> Result<()> {
        let n = self.thetas.len();
        if self.radii.len() != n || self.theta_bounds.len() != n || self.r_bounds.len() != n {
            return arg_err("parameter and bound lengths differ");
        }
        let r_min = T::SQRT_2();
        for i in 0..n {
            let (tl, th) = self.theta_bounds[i];
            let (rl, rh) = self.r_bounds[i];
            if rl <= r_min {
                return Err(Error::Geometry(format!(
                    "view {i}: lower radius bound {rl} places the source inside the image"
                )));
            }
            if !(tl <= self.thetas[i] && self.thetas[i] <= th) {
                return arg_err(format!(
                    "view {i}: angle {} outside [{tl}, {th}]",
                    self.thetas[i]
                ));
            }
            if !(rl <= self.radii[i] && self.radii[i] <= rh) {
                return arg_err(format!(
                    "view {i}: radius {} outside [{rl}, {rh}]",
                    self.radii[i]
                ));
            }
        }
        Ok(())
    }

    /// Same poses with bounds replaced by `[v, v]`-free intervals that
    /// contain the current values; used for ground-truth parameters.
    pub fn unbounded(thetas: Vec<T>, radii: Vec<T>) -> Result<Self> {
        let r_min = T::SQRT_2();
        if let Some((i, r)) = radii.iter().enumerate().find(|(_, &r)| r <= r_min) {
            return Err(Error::Geometry(format!(
                "view {i}: radius {r} places the source inside the image"
            )));
        }
        let theta_bounds = thetas
            .iter()
            .map(|_| (T::neg_infinity(), T::infinity()))
            .collect();
        let r_bounds = radii
            .iter()
            .map(|_| (r_min + T::epsilon(), T::infinity()))
            .collect();
        Ok(Self {
            thetas,
            radii,
            theta_bounds,
            r_bounds,
        })
    }
}

/// Additive perturbation of the per-view poses.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation<T> {
    pub d_theta: Vec<T>,
    pub d_r: Vec<T>,
    pub group_count: usize,
}

impl<T: Real> Perturbation<T> {
    pub fn zeros(n_views: usize) -> Self {
        Self {
            d_theta: vec![T::zero(); n_views],
            d_r: vec![T::zero(); n_views],
            group_count: n_views.max(1),
        }
    }

    pub fn negated(&self) -> Self {
        Self {
            d_theta: self.d_theta.iter().map(|&v| -v).collect(),
            d_r: self.d_r.iter().map(|&v| -v).collect(),
            group_count: self.group_count,
        }
    }
}

/// View index range of each of `group_count` contiguous groups; the last
/// group absorbs the remainder when `group_count` does not divide `n_views`.
pub fn view_groups(n_views: usize, group_count: usize) -> Vec<std::ops::Range<usize>> {
    let size = n_views / group_count;
    (0..group_count)
        .map(|g| {
            let start = g * size;
            let end = if g + 1 == group_count {
                n_views
            } else {
                start + size
            };
            start..end
        })
        .collect()
}

/// Uniform perturbations, one `(dθ, dR)` draw per contiguous view group.
pub fn sample_perturbations<T: Real>(
    half_width_theta: T,
    half_width_r: T,
    n_views: usize,
    group_count: usize,
    rng_seed: u64,
) -> Result<Perturbation<T>> {
    if !(half_width_theta >= T::zero() && half_width_r >= T::zero()) {
        return arg_err("perturbation half-widths must be nonnegative");
    }
    if group_count < 1 || group_count > n_views {
        return arg_err(format!(
            "group_count must be in 1..={n_views}, got {group_count}"
        ));
    }
    let ht = half_width_theta.as_f64();
    let hr = half_width_r.as_f64();
    let dist_t = Uniform::new_inclusive(-ht, ht).map_err(|e| Error::Argument(e.to_string()))?;
    let dist_r = Uniform::new_inclusive(-hr, hr).map_err(|e| Error::Argument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);

    let mut d_theta = vec![T::zero(); n_views];
    let mut d_r = vec![T::zero(); n_views];
    for range in view_groups(n_views, group_count) {
        let dt = T::lit(dist_t.sample(&mut rng));
        let dr = T::lit(dist_r.sample(&mut rng));
        for i in range {
            d_theta[i] = dt;
            d_r[i] = dr;
        }
    }
    Ok(Perturbation {
        d_theta,
        d_r,
        group_count,
    })
}

/// Adds the perturbation to the poses; bounds are carried over unchanged.
pub fn apply_perturbation<T: Real>(
    g: &GeometryParams<T>,
    pert: &Perturbation<T>,
) -> Result<GeometryParams<T>> {
    let n = g.n_views();
    if pert.d_theta.len() != n || pert.d_r.len() != n {
        return arg_err(format!(
            "perturbation length ({}, {}) does not match {n} views",
            pert.d_theta.len(),
            pert.d_r.len()
        ));
    }
    let thetas: Vec<T> = g
        .thetas
        .iter()
        .zip(&pert.d_theta)
        .map(|(&a, &b)| a + b)
        .collect();
    let radii: Vec<T> = g
        .radii
        .iter()
        .zip(&pert.d_r)
        .map(|(&a, &b)| a + b)
        .collect();
    if let Some((i, r)) = radii.iter().enumerate().find(|(_, &r)| r <= T::SQRT_2()) {
        return Err(Error::Geometry(format!(
            "view {i}: perturbed radius {r} places the source inside the image"
        )));
    }
    Ok(GeometryParams {
        thetas,
        radii,
        theta_bounds: g.theta_bounds.clone(),
        r_bounds: g.r_bounds.clone(),
    })
}

/// A half-line starting at `origin` with unit direction `dir`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray<T> {
    pub origin: [T; 2],
    pub dir: [T; 2],
}

/// Source position and fan half-angle (radians) for one pose.
#[inline]
pub fn fan_frame<T: Real>(theta_deg: T, r: T, domain_half_width: T) -> Result<([T; 2], T, T)> {
    let r_min = T::SQRT_2() * domain_half_width;
    if !(r > r_min) {
        return Err(Error::Geometry(format!(
            "source distance {r} does not exceed {r_min}"
        )));
    }
    let th = theta_deg.to_radians();
    let (s, c) = th.sin_cos();
    let source = [r * c, r * s];
    let half = (r_min / r).asin();
    // angle of the central (source -> origin) direction
    let axis = th + T::PI();
    Ok((source, axis, half))
}

/// Angular offset of detector `j` from the fan axis (equiangular spacing,
/// extreme rays at `±half`).
#[inline]
pub fn detector_offset<T: Real>(j: usize, n_detectors: usize, half: T) -> T {
    if n_detectors == 1 {
        return T::zero();
    }
    let frac = T::lit(j as f64) / T::lit((n_detectors - 1) as f64);
    half * (T::lit(2.0) * frac - T::one())
}

/// The `n_detectors` rays of the fan fired from pose `(theta, r)`, ordered by detector index.
pub fn make_rays<T: Real>(theta: T, r: T, geom: &FanBeamGeometry) -> Result<Vec<Ray<T>>> {
    let (source, axis, half) = fan_frame(theta, r, T::lit(geom.domain_half_width))?;
    Ok((0..geom.n_detectors)
        .map(|j| {
            let a = axis + detector_offset(j, geom.n_detectors, half);
            let (s, c) = a.sin_cos();
            Ray {
                origin: source,
                dir: [c, s],
            }
        })
        .collect())
}
