mod common;

use common::{random_vec, rng};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use tomocal::accel::{
    aitken_step, crossed_secant_step, irons_tuck_step, AndersonState, DeltaHistory,
};
use tomocal::scalar::vecops;

/// `F(x) = G x + c` with `G` symmetric, spectral radius `rho`.
struct Affine {
    g: Vec<Vec<f64>>,
    c: Vec<f64>,
}

impl Affine {
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.g
            .iter()
            .zip(&self.c)
            .map(|(row, ci)| vecops::dot(row, x) + ci)
            .collect()
    }

    fn fixed_point(&self) -> Vec<f64> {
        let n = self.c.len();
        let m =
            nalgebra::DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 } - self.g[i][j]);
        m.lu()
            .solve(&nalgebra::DVector::from_column_slice(&self.c))
            .unwrap()
            .as_slice()
            .to_vec()
    }
}

fn random_affine(r: &mut ChaCha8Rng, n: usize, rho: f64) -> Affine {
    // Q diag(λ) Qᵀ with random orthogonal Q and |λ| ≤ rho, one eigenvalue at ±rho
    let a = nalgebra::DMatrix::from_fn(n, n, |_, _| r.random_range(-1.0..1.0));
    let q = a.qr().q();
    let lam: Vec<f64> = (0..n)
        .map(|i| {
            if i == 0 {
                rho
            } else {
                r.random_range(-rho..rho)
            }
        })
        .collect();
    let g = q.clone()
        * nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_vec(lam))
        * q.transpose();
    Affine {
        g: (0..n)
            .map(|i| (0..n).map(|j| g[(i, j)]).collect())
            .collect(),
        c: random_vec(r, n),
    }
}

#[test]
fn aitken_is_exact_on_scalar_affine_maps() {
    let mut r = rng(50);
    for _ in 0..20 {
        let a: f64 = r.random_range(-0.95..0.95);
        let c: f64 = r.random_range(-2.0..2.0);
        let x: f64 = r.random_range(-5.0..5.0);
        let f = |v: f64| a * v + c;
        let s = aitken_step(x, f(x), f(f(x)));
        assert!((s.value - c / (1.0 - a)).abs() < 1e-10);
    }
    assert_eq!(aitken_step(0.0, 1.0, 1.5).value, 2.0);
    assert_eq!(aitken_step(1.0, -1.0, 1.0).value, 0.0);
}

#[test]
fn irons_tuck_is_exact_for_scaled_identity_maps() {
    let mut r = rng(51);
    for _ in 0..20 {
        let n = r.random_range(1..6);
        let a: f64 = r.random_range(-0.9..0.9);
        let c = random_vec(&mut r, n);
        let f = |x: &[f64]| -> Vec<f64> { x.iter().zip(&c).map(|(xi, ci)| a * xi + ci).collect() };
        let x0 = random_vec(&mut r, n);
        let fx = f(&x0);
        let s = irons_tuck_step(&x0, &fx, &f(&fx));
        let want: Vec<f64> = c.iter().map(|ci| ci / (1.0 - a)).collect();
        assert!(vecops::dist(&s.value, &want) < 1e-10);
    }
}

#[test]
fn irons_tuck_equals_aitken_in_one_dimension() {
    let mut r = rng(52);
    for _ in 0..100 {
        let (x, fx, ffx): (f64, f64, f64) = (
            r.random_range(-3.0..3.0),
            r.random_range(-3.0..3.0),
            r.random_range(-3.0..3.0),
        );
        let a = aitken_step(x, fx, ffx).value;
        let it = irons_tuck_step(&[x], &[fx], &[ffx]).value[0];
        assert!(
            (a - it).abs() <= 1e-15 * a.abs().max(1.0) * 16.0,
            "{a} vs {it}"
        );
    }
}

#[test]
fn crossed_secant_is_exact_on_scalar_affine_maps() {
    let mut r = rng(53);
    for _ in 0..20 {
        let a: f64 = r.random_range(-0.9..0.9);
        let c: f64 = r.random_range(-2.0..2.0);
        let f = |v: f64| a * v + c;
        let (x0, x1): (f64, f64) = (r.random_range(-5.0..5.0), r.random_range(-5.0..5.0));
        let s = crossed_secant_step(&[f(x1)], &[f(x0)], &[f(x1) - x1], &[f(x0) - x0]);
        assert!((s.value[0] - c / (1.0 - a)).abs() < 1e-10);
    }
}

#[test]
fn crossed_secant_alternated_with_plain_steps_is_irons_tuck() {
    let mut r = rng(54);
    for _ in 0..20 {
        let f = random_affine(&mut r, 2, 0.8);
        let x0 = random_vec(&mut r, 2);
        // Irons-Tuck from x0
        let fx = f.apply(&x0);
        let ffx = f.apply(&fx);
        let it = irons_tuck_step(&x0, &fx, &ffx).value;
        // plain step x0 -> fx, then crossed secant at fx using (x0, F(x0)) as history
        let mut h = DeltaHistory::new();
        let plain = h.crossed_secant(&x0, &fx);
        assert!(!plain.degenerate);
        let cs = h.crossed_secant(&fx, &ffx).value;
        assert!(vecops::dist(&cs, &it) < 1e-10 * (1.0 + vecops::norm(&it)));
    }
}

#[test]
fn anderson_window_one_matches_crossed_secant() {
    let f = |x: f64| 0.7 * x + 1.0;
    let mut aa = AndersonState::new(1, 1e8).unwrap();
    let mut cs = DeltaHistory::new();
    let (mut xa, mut xc) = (0.0f64, 0.0f64);
    for k in 0..4 {
        let na = aa.update(&[xa], &[f(xa)]).unwrap().value[0];
        let nc = cs.crossed_secant(&[xc], &[f(xc)]).value[0];
        assert!((na - nc).abs() < 1e-12, "step {k}: {na} vs {nc}");
        xa = na;
        xc = nc;
    }
    assert!((xa - 1.0 / 0.3).abs() < 1e-12);
}

#[test]
fn anderson_terminates_on_affine_maps() {
    for seed in 0..20 {
        let mut r = rng(100 + seed);
        let f = random_affine(&mut r, 5, 0.9);
        let star = f.fixed_point();
        let mut st = AndersonState::new(5, 1e8).unwrap();
        let mut x = random_vec(&mut r, 5);
        let mut done = None;
        for k in 0..=6 {
            let fx = f.apply(&x);
            if vecops::dist(&fx, &x) < 1e-10 {
                done = Some(k);
                break;
            }
            x = st.update(&x, &fx).unwrap().value;
        }
        let k = done.unwrap_or_else(|| panic!("seed {seed}: no termination within 6 iterations"));
        assert!(k <= 6);
        assert!(vecops::dist(&x, &star) < 1e-8);
    }
}

#[test]
fn anderson_first_call_is_plain_step() {
    let mut st = AndersonState::new(3, 1e8).unwrap();
    let s = st.update(&[1.0, 2.0], &[3.0, 4.0]).unwrap();
    assert_eq!(s.value, vec![3.0, 4.0]);
    assert_eq!(st.n_columns(), 0);
}

#[test]
fn anderson_qr_stays_consistent_over_evictions() {
    let mut r = rng(60);
    let f = random_affine(&mut r, 8, 0.95);
    let mut st = AndersonState::new(3, 1e8).unwrap();
    let mut x = random_vec(&mut r, 8);
    for _ in 0..12 {
        let fx = f.apply(&x);
        // damped so the iteration does not terminate early
        x = st
            .update(&x, &fx)
            .unwrap()
            .value
            .iter()
            .zip(&fx)
            .map(|(a, b)| 0.5 * a + 0.5 * b)
            .collect();
        assert!(st.n_columns() <= 3);
        assert!(st.qr_residual() < 1e-10);
    }
}

#[test]
fn anderson_rejects_dimension_change() {
    let mut st = AndersonState::new(2, 1e8).unwrap();
    st.update(&[1.0, 2.0], &[1.5, 2.5]).unwrap();
    assert!(st.update(&[1.0], &[1.0]).is_err());
}
