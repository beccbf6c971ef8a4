//! Experiment configuration and the `run` / `compare` workflows.
//!
//! Configs are flat `key = value` lines; `#` starts a comment. Every key is
//! optional. `config_resolved.txt` lists every key with its effective value
//! and can be fed back as a config.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::bcd::{bcd_run, AccelKind, AccelTarget, BcdOptions, BcdReport, Ordering, Truth};
use crate::error::{Error, Result};
use crate::format::fmt_sci;
use crate::geometry::{apply_perturbation, sample_perturbations, FanBeamGeometry, GeometryParams};
use crate::linsolve::LinSolverKind;
use crate::phantom::{composite, disk, shepp_logan, write_pgm, ImageGrid};
use crate::scalar::Real;
use crate::simulate::{add_noise, forward_sinogram, Sinogram};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhantomKind {
    SheppLogan,
    Composite,
    Disk,
}

impl PhantomKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::SheppLogan => "shepp_logan",
            Self::Composite => "composite",
            Self::Disk => "disk",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "shepp_logan" => Some(Self::SheppLogan),
            "composite" => Some(Self::Composite),
            "disk" => Some(Self::Disk),
            _ => None,
        }
    }

    pub fn render<T: Real>(self, n: usize) -> ImageGrid<T> {
        match self {
            Self::SheppLogan => shepp_logan(n),
            Self::Composite => composite(n),
            Self::Disk => disk(n, T::lit(0.5), T::one()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub n: usize,
    pub n_views: usize,
    pub phantom: PhantomKind,
    pub noise_level: f64,
    pub theta_half_width: f64,
    pub r_half_width: f64,
    /// `None` gives every view its own perturbation.
    pub group_count: Option<usize>,
    pub seed: u64,
    /// Box half-widths around the initial poses; default to the perturbation half-widths.
    pub theta_bound: Option<f64>,
    pub r_bound: Option<f64>,
    pub bcd: BcdOptions<f64>,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n: 64,
            n_views: 180,
            phantom: PhantomKind::SheppLogan,
            noise_level: 0.01,
            theta_half_width: 0.25,
            r_half_width: 0.25,
            group_count: None,
            seed: 0,
            theta_bound: None,
            r_bound: None,
            bcd: BcdOptions::default(),
            out_dir: PathBuf::from("out"),
        }
    }
}

fn parse_num<V: std::str::FromStr>(key: &str, v: &str) -> Result<V> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{v}'")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!(
            "{key}: expected true or false, got '{v}'"
        ))),
    }
}

fn parse_enum<E>(key: &str, v: &str, f: impl Fn(&str) -> Option<E>) -> Result<E> {
    f(v).ok_or_else(|| Error::Config(format!("{key}: unknown value '{v}'")))
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut seen = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            let (k, v) = (k.trim(), v.trim());
            if seen.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Error::Config(format!(
                    "line {}: duplicate key '{k}'",
                    lineno + 1
                )));
            }
        }
        let mut c = Self::default();
        for (k, v) in &seen {
            c.set(k, v)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn set(&mut self, k: &str, v: &str) -> Result<()> {
        let b = &mut self.bcd;
        match k {
            "n" => self.n = parse_num(k, v)?,
            "n_views" => self.n_views = parse_num(k, v)?,
            "phantom" => self.phantom = parse_enum(k, v, PhantomKind::parse)?,
            "noise_level" => self.noise_level = parse_num(k, v)?,
            "theta_half_width" => self.theta_half_width = parse_num(k, v)?,
            "r_half_width" => self.r_half_width = parse_num(k, v)?,
            "group_count" => self.group_count = Some(parse_num(k, v)?),
            "seed" => self.seed = parse_num(k, v)?,
            "theta_bound" => self.theta_bound = Some(parse_num(k, v)?),
            "r_bound" => self.r_bound = Some(parse_num(k, v)?),
            "out_dir" => self.out_dir = PathBuf::from(v),
            "max_outer" => b.max_outer = parse_num(k, v)?,
            "stop_tol" => b.stop_tol = parse_num(k, v)?,
            "lin_solver" => b.lin_solver = parse_enum(k, v, LinSolverKind::parse)?,
            "accel" => b.accel = parse_enum(k, v, AccelKind::parse)?,
            "accel_target" => b.accel_target = parse_enum(k, v, AccelTarget::parse)?,
            "ordering" => b.ordering = parse_enum(k, v, Ordering::parse)?,
            "parallel_views" => b.parallel_views = parse_bool(k, v)?,
            "workers" => b.workers = parse_num(k, v)?,
            "anderson_window" => b.anderson_window = parse_num(k, v)?,
            "cond_max" => b.cond_max = parse_num(k, v)?,
            "freeze_alpha" => b.freeze_alpha = parse_bool(k, v)?,
            "lsqr_iters" => b.lin.lsqr_iters = parse_num(k, v)?,
            "lsqr_alpha" => {
                b.lin.lsqr_alpha = if v == "gcv" {
                    None
                } else {
                    Some(parse_num(k, v)?)
                }
            }
            "fista_iters" => b.lin.fista_iters = parse_num(k, v)?,
            "irn_outer" => b.lin.irn_outer = parse_num(k, v)?,
            "irn_inner" => b.lin.irn_inner = parse_num(k, v)?,
            "irn_lambda" => b.lin.irn_lambda = parse_num(k, v)?,
            "irn_eps" => b.lin.irn_eps = parse_num(k, v)?,
            "nl_scales" => b.nl.n_scales = parse_num(k, v)?,
            "nl_steps" => b.nl.max_steps_per_scale = parse_num(k, v)?,
            _ => return Err(Error::Config(format!("unknown key '{k}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n < 2 {
            return bad(format!("n must be at least 2, got {}", self.n));
        }
        if self.n_views < 1 {
            return bad("n_views must be positive".into());
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return bad("noise_level must be a finite nonnegative number".into());
        }
        if !(self.theta_half_width >= 0.0 && self.r_half_width >= 0.0) {
            return bad("perturbation half-widths must be nonnegative".into());
        }
        let g = self.group_count();
        if g < 1 || g > self.n_views {
            return bad(format!("group_count must be in 1..={}", self.n_views));
        }
        let (tb, rb) = self.bounds();
        if !(tb >= 0.0 && rb >= 0.0) {
            return bad("bounds must be nonnegative".into());
        }
        if 2.0 - rb <= std::f64::consts::SQRT_2 {
            return bad(format!("r_bound {rb} lets the source enter the image"));
        }
        if matches!(self.bcd.lin.lsqr_alpha, Some(a) if !(a >= 0.0)) {
            return bad("lsqr_alpha must be nonnegative".into());
        }
        if !(self.bcd.lin.irn_lambda > 0.0 && self.bcd.lin.irn_eps > 0.0) {
            return bad("irn_lambda and irn_eps must be positive".into());
        }
        self.bcd
            .validate()
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn group_count(&self) -> usize {
        self.group_count.unwrap_or(self.n_views)
    }

    pub fn bounds(&self) -> (f64, f64) {
        (
            self.theta_bound.unwrap_or(self.theta_half_width),
            self.r_bound.unwrap_or(self.r_half_width),
        )
    }

    /// Every key with its effective value, in a fixed order.
    pub fn resolved(&self) -> String {
        let b = &self.bcd;
        let (tb, rb) = self.bounds();
        let entries: Vec<(&str, String)> = vec![
            ("n", self.n.to_string()),
            ("n_views", self.n_views.to_string()),
            ("phantom", self.phantom.name().into()),
            ("noise_level", self.noise_level.to_string()),
            ("theta_half_width", self.theta_half_width.to_string()),
            ("r_half_width", self.r_half_width.to_string()),
            ("group_count", self.group_count().to_string()),
            ("seed", self.seed.to_string()),
            ("theta_bound", tb.to_string()),
            ("r_bound", rb.to_string()),
            ("max_outer", b.max_outer.to_string()),
            ("stop_tol", b.stop_tol.to_string()),
            ("lin_solver", b.lin_solver.name().into()),
            ("accel", b.accel.name().into()),
            ("accel_target", b.accel_target.name().into()),
            ("ordering", b.ordering.name().into()),
            ("parallel_views", b.parallel_views.to_string()),
            ("workers", b.workers.to_string()),
            ("anderson_window", b.anderson_window.to_string()),
            ("cond_max", b.cond_max.to_string()),
            ("freeze_alpha", b.freeze_alpha.to_string()),
            ("lsqr_iters", b.lin.lsqr_iters.to_string()),
            (
                "lsqr_alpha",
                b.lin.lsqr_alpha.map_or("gcv".into(), |a| a.to_string()),
            ),
            ("fista_iters", b.lin.fista_iters.to_string()),
            ("irn_outer", b.lin.irn_outer.to_string()),
            ("irn_inner", b.lin.irn_inner.to_string()),
            ("irn_lambda", b.lin.irn_lambda.to_string()),
            ("irn_eps", b.lin.irn_eps.to_string()),
            ("nl_scales", b.nl.n_scales.to_string()),
            ("nl_steps", b.nl.max_steps_per_scale.to_string()),
            ("out_dir", self.out_dir.display().to_string()),
        ];
        let mut s = String::new();
        for (k, v) in entries {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        }
        s
    }

    /// Same config with every optional value made explicit.
    pub fn materialized(&self) -> Self {
        let (tb, rb) = self.bounds();
        Self {
            group_count: Some(self.group_count()),
            theta_bound: Some(tb),
            r_bound: Some(rb),
            ..self.clone()
        }
    }
}

/// Command-line overrides applied after parsing.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    /// Worker count; enables parallel per-view fits.
    pub parallel: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(d) = &self.out_dir {
            cfg.out_dir = d.clone();
        }
        if let Some(w) = self.parallel {
            cfg.bcd.parallel_views = true;
            cfg.bcd.workers = w;
        }
    }
}

/// A simulated calibration problem.
#[derive(Debug, Clone)]
pub struct SimulatedProblem<T> {
    pub geom: FanBeamGeometry,
    pub image: ImageGrid<T>,
    pub truth: GeometryParams<T>,
    pub initial: GeometryParams<T>,
    pub b: Sinogram<T>,
}

impl<T: Real> SimulatedProblem<T> {
    pub fn truth(&self) -> Truth<'_, T> {
        Truth {
            image: &self.image.values,
            params: &self.truth,
        }
    }

    pub fn solve(&self, opts: &BcdOptions<T>) -> Result<BcdReport<T>> {
        bcd_run(
            &self.b,
            &self.initial,
            &self.geom,
            Some(&self.truth()),
            opts,
        )
    }
}

/// Phantom, perturbed true poses and noisy data. The perturbation uses
/// `seed` and the noise `seed + 1`.
pub fn simulate_problem<T: Real>(cfg: &ExperimentConfig) -> Result<SimulatedProblem<T>> {
    let geom = FanBeamGeometry::new(cfg.n, cfg.n_views)?;
    let (tb, rb) = cfg.bounds();
    let initial = geom.nominal_params(T::lit(tb), T::lit(rb))?;
    let pert = sample_perturbations(
        T::lit(cfg.theta_half_width),
        T::lit(cfg.r_half_width),
        cfg.n_views,
        cfg.group_count(),
        cfg.seed,
    )?;
    let perturbed = apply_perturbation(&initial, &pert)?;
    let truth = GeometryParams::unbounded(perturbed.thetas, perturbed.radii)?;
    let image = cfg.phantom.render::<T>(cfg.n);
    let clean = forward_sinogram(&image, &truth, &geom)?;
    let b = add_noise(&clean, T::lit(cfg.noise_level), cfg.seed.wrapping_add(1))?;
    Ok(SimulatedProblem {
        geom,
        image,
        truth,
        initial,
        b,
    })
}

fn create_file(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path)?))
}

fn write_params_csv(
    path: &Path,
    p: &SimulatedProblem<f64>,
    est: &GeometryParams<f64>,
) -> Result<()> {
    let mut w = create_file(path)?;
    writeln!(w, "view,theta0,theta_true,theta_est,r0,r_true,r_est")?;
    for i in 0..p.initial.n_views() {
        writeln!(
            w,
            "{i},{},{},{},{},{},{}",
            fmt_sci(p.initial.thetas[i]),
            fmt_sci(p.truth.thetas[i]),
            fmt_sci(est.thetas[i]),
            fmt_sci(p.initial.radii[i]),
            fmt_sci(p.truth.radii[i]),
            fmt_sci(est.radii[i]),
        )?;
    }
    w.flush()?;
    Ok(())
}

fn write_timings_csv(path: &Path, report: &BcdReport<f64>) -> Result<()> {
    let mut w = create_file(path)?;
    writeln!(w, "iter,seconds,g_evals,view_failures,accel_degenerate")?;
    for r in &report.history {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.iter,
            fmt_sci(r.seconds),
            r.g_evals,
            r.view_failures,
            r.accel_degenerate
        )?;
    }
    w.flush()?;
    Ok(())
}

fn write_report(dir: &Path, p: &SimulatedProblem<f64>, report: &BcdReport<f64>) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = create_file(&dir.join("errors.csv"))?;
    report.write_csv(&mut w, false)?;
    w.flush()?;
    write_timings_csv(&dir.join("timings.csv"), report)?;
    write_pgm(
        &ImageGrid::new(p.geom.n_pixels, report.x.clone())?,
        dir.join("x_final.pgm"),
    )?;
    Ok(())
}

/// Outcome of a completed `run`.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: BcdReport<f64>,
    pub out_dir: PathBuf,
}

/// Simulates the configured problem, runs the reconstruction and writes all artifacts.
pub fn execute_run(cfg: &ExperimentConfig) -> std::result::Result<RunOutcome, (i32, Error)> {
    let problem = simulate_problem::<f64>(cfg).map_err(|e| (1, e))?;
    let report = problem.solve(&cfg.bcd).map_err(|e| (2, e))?;
    let io = |e: Error| (2, e);
    let dir = &cfg.out_dir;
    write_report(dir, &problem, &report).map_err(io)?;
    let n = problem.geom.n_pixels;
    let x0 = initial_reconstruction(&problem, &cfg.bcd).map_err(io)?;
    write_pgm(
        &ImageGrid::new(n, x0).map_err(io)?,
        dir.join("x_initial.pgm"),
    )
    .map_err(io)?;
    write_pgm(&problem.image, dir.join("x_true.pgm")).map_err(io)?;
    write_params_csv(&dir.join("params.csv"), &problem, &report.params).map_err(io)?;
    fs::write(dir.join("config_resolved.txt"), cfg.resolved()).map_err(|e| io(e.into()))?;
    Ok(RunOutcome {
        report,
        out_dir: dir.clone(),
    })
}

/// Image solved at the initial poses, the starting point of every run.
pub fn initial_reconstruction<T: Real>(
    p: &SimulatedProblem<T>,
    opts: &BcdOptions<T>,
) -> Result<Vec<T>> {
    let op = crate::projector::StackedOperator::assemble(&p.initial, &p.geom)?;
    Ok(crate::linsolve::solve(opts.lin_solver, &op, &p.b.values, &opts.lin)?.x)
}

/// One summary row per solver.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverSummary {
    pub solver: LinSolverKind,
    pub image_err: f64,
    pub angle_err: f64,
    pub r_err: f64,
    pub iterations: usize,
}

/// Runs the same problem under every linear solver.
pub fn execute_compare(
    cfg: &ExperimentConfig,
) -> std::result::Result<Vec<SolverSummary>, (i32, Error)> {
    let problem = simulate_problem::<f64>(cfg).map_err(|e| (1, e))?;
    let io = |e: Error| (2, e);
    let mut rows = Vec::new();
    for solver in [
        LinSolverKind::HybridLsqr,
        LinSolverKind::Fista,
        LinSolverKind::Irn,
    ] {
        let mut opts = cfg.bcd.clone();
        opts.lin_solver = solver;
        let report = problem.solve(&opts).map_err(io)?;
        write_report(&cfg.out_dir.join(solver.name()), &problem, &report).map_err(io)?;
        let e = report.last().errors.expect("truth is supplied");
        rows.push(SolverSummary {
            solver,
            image_err: e.image_err,
            angle_err: e.angle_err,
            r_err: e.r_err,
            iterations: report.outer_iterations(),
        });
    }
    let mut w = create_file(&cfg.out_dir.join("summary.csv")).map_err(io)?;
    let mut write = || -> std::io::Result<()> {
        writeln!(w, "solver,image_err,angle_err,r_err,iterations")?;
        for r in &rows {
            writeln!(
                w,
                "{},{},{},{},{}",
                r.solver.name(),
                fmt_sci(r.image_err),
                fmt_sci(r.angle_err),
                fmt_sci(r.r_err),
                r.iterations
            )?;
        }
        w.flush()
    };
    write().map_err(|e| io(e.into()))?;
    fs::write(cfg.out_dir.join("config_resolved.txt"), cfg.resolved()).map_err(|e| io(e.into()))?;
    Ok(rows)
}

fn load(
    config_path: &Path,
    overrides: &Overrides,
) -> std::result::Result<ExperimentConfig, (i32, Error)> {
    let mut cfg = ExperimentConfig::from_file(config_path).map_err(|e| (1, e))?;
    overrides.apply(&mut cfg);
    cfg.validate().map_err(|e| (1, e))?;
    Ok(cfg)
}

fn report_exit<V>(r: std::result::Result<V, (i32, Error)>) -> i32 {
    match r {
        Ok(_) => 0,
        Err((code, e)) => {
            eprintln!("error: {e}");
            code
        }
    }
}

/// `run` subcommand; returns the process exit code.
pub fn run_experiment(config_path: &Path, overrides: &Overrides) -> i32 {
    report_exit(load(config_path, overrides).and_then(|c| execute_run(&c)))
}

/// `compare` subcommand; returns the process exit code.
pub fn compare_solvers(config_path: &Path, overrides: &Overrides) -> i32 {
    report_exit(load(config_path, overrides).and_then(|c| execute_compare(&c)))
}
