mod common;

use tomocal::bcd::{
    bcd_run, update_all_view_params, AccelKind, AccelTarget, BcdContext, BcdOptions, Ordering,
    Termination,
};
use tomocal::cli::{initial_reconstruction, simulate_problem, ExperimentConfig, SimulatedProblem};
use tomocal::geometry::GeometryParams;
use tomocal::nlsolve::solve_view_params;
use tomocal::scalar::vecops;

fn small(
    n: usize,
    n_views: usize,
    half_width: f64,
    noise: f64,
    seed: u64,
) -> SimulatedProblem<f64> {
    let cfg = ExperimentConfig {
        n,
        n_views,
        theta_half_width: half_width,
        r_half_width: half_width,
        theta_bound: Some(half_width.max(0.25)),
        r_bound: Some(half_width.max(0.25)),
        noise_level: noise,
        seed,
        ..ExperimentConfig::default()
    };
    simulate_problem(&cfg).unwrap()
}

fn quick() -> BcdOptions<f64> {
    let mut o = BcdOptions::default();
    o.lin.lsqr_iters = 20;
    o.nl.max_steps_per_scale = 5;
    o.nl.n_scales = 4;
    o
}

#[test]
fn plain_p_first_equals_repeated_g() {
    let p = small(16, 24, 0.25, 0.01, 1);
    let mut opts = quick();
    opts.max_outer = 3;
    opts.stop_tol = 1e-12;
    let report = bcd_run(&p.b, &p.initial, &p.geom, None, &opts).unwrap();
    let ctx = BcdContext::new(&p.geom, &p.b, opts.clone()).unwrap();
    let mut x = ctx.solve_image(&p.initial).unwrap().x;
    let mut params = p.initial.clone();
    for _ in 0..3 {
        let s = ctx.fixed_point_g(&x, &params).unwrap();
        x = s.x;
        params = s.params;
    }
    assert_eq!(report.x, x);
    assert_eq!(report.params, params);
    assert_eq!(report.outer_iterations(), 3);
}

#[test]
fn truth_is_a_fixed_point_without_noise() {
    let p = small(16, 24, 0.25, 0.0, 2);
    let mut truth_boxed = p.initial.clone();
    truth_boxed.thetas = p.truth.thetas.clone();
    truth_boxed.radii = p.truth.radii.clone();
    let mut opts = quick();
    opts.lin.lsqr_iters = 60;
    opts.lin.lsqr_alpha = Some(0.0);
    let ctx = BcdContext::new(&p.geom, &p.b, opts.clone()).unwrap();
    let s = ctx.fixed_point_g(&p.image.values, &truth_boxed).unwrap();
    assert_eq!(s.params, truth_boxed);
    let change = vecops::dist(&s.x, &p.image.values) / vecops::norm(&p.image.values);
    assert!(change < opts.stop_tol, "{change}");
}

#[test]
fn parameter_step_never_increases_misfit() {
    let p = small(16, 24, 0.25, 0.02, 3);
    let opts = quick();
    let ctx = BcdContext::new(&p.geom, &p.b, opts.clone()).unwrap();
    let mut x = initial_reconstruction(&p, &opts).unwrap();
    let mut params = p.initial.clone();
    for _ in 0..3 {
        let before = ctx.residual(&x, &params);
        let v = ctx.update_params(&x, &params).unwrap();
        let after = ctx.residual(&x, &v.params);
        assert!(after <= before * (1.0 + 1e-12), "{after} > {before}");
        assert!(v.misfit_after <= v.misfit_before);
        assert!((v.misfit_before - before).abs() <= 1e-9 * before.max(1.0));
        params = v.params;
        x = ctx.solve_image(&params).unwrap().x;
    }
}

#[test]
fn serial_and_parallel_updates_are_identical() {
    let p = small(32, 60, 0.25, 0.01, 4);
    let opts = quick();
    let x = initial_reconstruction(&p, &opts).unwrap();
    let serial = update_all_view_params(&x, &p.b, &p.initial, &p.geom, &opts.nl, None).unwrap();
    for workers in [2, 3, 4] {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .unwrap();
        let par =
            update_all_view_params(&x, &p.b, &p.initial, &p.geom, &opts.nl, Some(&pool)).unwrap();
        assert_eq!(serial.params, par.params);
        assert_eq!(serial.misfit_after.to_bits(), par.misfit_after.to_bits());
    }
}

#[test]
fn single_view_update_equals_direct_fit() {
    let p = small(16, 1, 0.2, 0.01, 5);
    let opts = quick();
    let x = p.image.values.clone();
    let all = update_all_view_params(&x, &p.b, &p.initial, &p.geom, &opts.nl, None).unwrap();
    let one = solve_view_params(
        &x,
        p.b.view(0),
        &p.geom,
        (p.initial.thetas[0], p.initial.radii[0]),
        (p.initial.theta_bounds[0], p.initial.r_bounds[0]),
        &opts.nl,
    )
    .unwrap();
    assert_eq!(
        (all.params.thetas[0], all.params.radii[0]),
        (one.theta, one.r)
    );
}

#[test]
fn termination_reason_matches_last_change() {
    let p = small(16, 24, 0.25, 0.01, 6);
    for tol in [0.3, 0.03, 1e-3, 1e-9] {
        let mut opts = quick();
        opts.max_outer = 6;
        opts.stop_tol = tol;
        let r = bcd_run(&p.b, &p.initial, &p.geom, Some(&p.truth()), &opts).unwrap();
        let last = r.last().rel_change.unwrap();
        assert_eq!(
            r.termination == Termination::Tolerance,
            last <= tol,
            "tol {tol}"
        );
        assert!(r.history.len() <= opts.max_outer + 1);
        assert!(r.history.iter().skip(1).all(|h| h.errors.is_some()));
    }
}

#[test]
fn initial_record_matches_initial_reconstruction() {
    let p = small(16, 24, 0.25, 0.01, 7);
    let mut opts = quick();
    opts.max_outer = 1;
    let r = bcd_run(&p.b, &p.initial, &p.geom, Some(&p.truth()), &opts).unwrap();
    let x0 = initial_reconstruction(&p, &opts).unwrap();
    let e = r.initial().errors.unwrap();
    let want = vecops::dist(&x0, &p.image.values) / vecops::norm(&p.image.values);
    assert_eq!(e.image_err, want);
    assert_eq!((e.angle_err, e.r_err), (1.0, 1.0));
}

#[test]
fn every_accelerator_and_ordering_runs() {
    let p = small(16, 24, 0.25, 0.01, 8);
    for accel in [
        AccelKind::None,
        AccelKind::Anderson,
        AccelKind::CrossedSecant,
        AccelKind::IronsTuck,
    ] {
        for (ordering, target) in [
            (Ordering::PFirst, AccelTarget::X),
            (Ordering::PFirst, AccelTarget::Omega),
            (Ordering::XFirst, AccelTarget::X),
        ] {
            let mut opts = quick();
            opts.max_outer = 3;
            opts.stop_tol = 1e-12;
            opts.accel = accel;
            opts.accel_target = target;
            opts.ordering = ordering;
            let r = bcd_run(&p.b, &p.initial, &p.geom, Some(&p.truth()), &opts).unwrap();
            assert_eq!(r.outer_iterations(), 3, "{accel:?} {ordering:?} {target:?}");
            assert!(r.x.iter().all(|v| v.is_finite()));
            let per_iter = if accel == AccelKind::IronsTuck { 2 } else { 1 };
            let expected = match ordering {
                Ordering::PFirst => 3 * per_iter,
                Ordering::XFirst => 2 * per_iter,
            };
            assert_eq!(r.last().g_evals, expected, "{accel:?} {ordering:?}");
            if ordering == Ordering::XFirst {
                assert!(r.history[1].rel_change.is_none());
                assert_eq!(
                    r.history[1].errors.unwrap().image_err,
                    r.history[0].errors.unwrap().image_err
                );
            }
        }
    }
}

#[test]
fn zero_perturbation_stops_immediately_near_known_geometry_error() {
    let p = small(64, 180, 0.0, 0.01, 9);
    let opts = BcdOptions::default();
    let r = bcd_run(&p.b, &p.initial, &p.geom, Some(&p.truth()), &opts).unwrap();
    assert!(r.outer_iterations() <= 2);
    assert_eq!(r.termination, Termination::Tolerance);
    let known = r.initial().errors.unwrap().image_err;
    let last = r.last().errors.unwrap().image_err;
    assert!((last / known - 1.0).abs() <= 0.1, "{last} vs {known}");
    assert!(r.last().errors.unwrap().absolute_params);
}

#[test]
fn calibration_improves_a_small_problem() {
    let p = small(32, 90, 0.25, 0.01, 10);
    let mut opts = BcdOptions::default();
    opts.max_outer = 8;
    let r = bcd_run(&p.b, &p.initial, &p.geom, Some(&p.truth()), &opts).unwrap();
    let e0 = r.initial().errors.unwrap();
    let e = r.last().errors.unwrap();
    assert!(e.image_err < e0.image_err);
    assert!(e.r_err < 1.0);
}

#[test]
fn single_precision_run() {
    let cfg = ExperimentConfig {
        n: 16,
        n_views: 24,
        ..ExperimentConfig::default()
    };
    let p = simulate_problem::<f32>(&cfg).unwrap();
    let mut opts = BcdOptions::<f32>::default();
    opts.max_outer = 2;
    opts.lin.lsqr_iters = 15;
    let r = bcd_run(&p.b, &p.initial, &p.geom, Some(&p.truth()), &opts).unwrap();
    assert!(r.x.iter().all(|v| v.is_finite()));
    assert!(r.last().errors.unwrap().image_err < r.initial().errors.unwrap().image_err * 1.5);
}

#[test]
fn rejects_mismatched_inputs() {
    let p = small(16, 24, 0.25, 0.01, 11);
    let other =
        GeometryParams::with_symmetric_bounds(vec![0.0; 3], vec![2.0; 3], 0.1, 0.1).unwrap();
    assert!(bcd_run(&p.b, &other, &p.geom, None, &quick()).is_err());
    let mut bad = quick();
    bad.stop_tol = 0.0;
    assert!(bcd_run(&p.b, &p.initial, &p.geom, None, &bad).is_err());
}

#[test]
fn csv_report_shape() {
    let p = small(16, 24, 0.25, 0.01, 12);
    let mut opts = quick();
    opts.max_outer = 2;
    let r = bcd_run(&p.b, &p.initial, &p.geom, Some(&p.truth()), &opts).unwrap();
    let mut plain = Vec::new();
    r.write_csv(&mut plain, false).unwrap();
    let mut timed = Vec::new();
    r.write_csv(&mut timed, true).unwrap();
    let plain = String::from_utf8(plain).unwrap();
    let timed = String::from_utf8(timed).unwrap();
    assert_eq!(
        plain.lines().next(),
        Some("iter,image_err,angle_err,r_err,residual")
    );
    assert_eq!(
        timed.lines().next(),
        Some("iter,image_err,angle_err,r_err,residual,seconds")
    );
    assert_eq!(plain.lines().count(), r.history.len() + 1);
    assert!(timed.lines().skip(1).all(|l| l.split(',').count() == 6));
}
