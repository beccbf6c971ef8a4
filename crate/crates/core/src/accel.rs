//! Fixed-point acceleration: scalar Aitken Δ², Irons-Tuck, crossed secant
//! and windowed Anderson acceleration with an updated QR factorization.
//!
//! Every scheme falls back to the plain fixed-point value (flagged as
//! degenerate) when its denominator vanishes at convergence.

use std::collections::VecDeque;

use crate::dense::condition_number;
use crate::error::{arg_err, Result};
use crate::scalar::{vecops, Real};

/// Relative size below which a difference denominator counts as zero.
const DEGENERATE_TOL: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq)]
pub struct AccelStep<V> {
    pub value: V,
    /// The accelerated formula was not applicable; `value` is the plain step.
    pub degenerate: bool,
}

/// Aitken Δ²: `f(f(x)) − (Δf)² / Δ²x`.
pub fn aitken_step<T: Real>(x: T, fx: T, ffx: T) -> AccelStep<T> {
    let d2 = ffx - T::lit(2.0) * fx + x;
    if d2.abs() <= T::lit(DEGENERATE_TOL) * x.abs() {
        return AccelStep {
            value: ffx,
            degenerate: true,
        };
    }
    let df = ffx - fx;
    AccelStep {
        value: ffx - df * df / d2,
        degenerate: false,
    }
}

/// Irons-Tuck, the vector form of Aitken Δ². Needs `F(x)` and `F(F(x))`.
pub fn irons_tuck_step<T: Real>(x: &[T], fx: &[T], ffx: &[T]) -> AccelStep<Vec<T>> {
    let dfx = vecops::sub(ffx, fx);
    let dx = vecops::sub(fx, x);
    let d2 = vecops::sub(&dfx, &dx);
    let n2 = vecops::dot(&d2, &d2);
    if n2.sqrt() <= T::lit(DEGENERATE_TOL) * (T::one() + vecops::norm(x)) {
        return AccelStep {
            value: ffx.to_vec(),
            degenerate: true,
        };
    }
    let coef = vecops::dot(&dfx, &d2) / n2;
    let mut value = ffx.to_vec();
    vecops::axpy(-coef, &dfx, &mut value);
    AccelStep {
        value,
        degenerate: false,
    }
}

/// Crossed secant step from the two most recent iterates.
pub fn crossed_secant_step<T: Real>(
    fx_k: &[T],
    fx_km1: &[T],
    delta_k: &[T],
    delta_km1: &[T],
) -> AccelStep<Vec<T>> {
    let dd = vecops::sub(delta_k, delta_km1);
    let n2 = vecops::dot(&dd, &dd);
    if n2.sqrt() <= T::lit(DEGENERATE_TOL) * (T::one() + vecops::norm(delta_k)) {
        return AccelStep {
            value: fx_k.to_vec(),
            degenerate: true,
        };
    }
    let df = vecops::sub(fx_k, fx_km1);
    let coef = vecops::dot(&df, &dd) / n2;
    let mut value = fx_k.to_vec();
    vecops::axpy(-coef, delta_k, &mut value);
    AccelStep {
        value,
        degenerate: false,
    }
}

/// Last iterate, its image under `F`, and its residual `Δx = F(x) − x`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DeltaHistory<T> {
    pub prev_x: Option<Vec<T>>,
    pub prev_fx: Option<Vec<T>>,
    pub prev_delta: Option<Vec<T>>,
}

impl<T: Real> DeltaHistory<T> {
    pub fn new() -> Self {
        Self {
            prev_x: None,
            prev_fx: None,
            prev_delta: None,
        }
    }

    pub fn is_populated(&self) -> bool {
        self.prev_fx.is_some()
    }

    pub fn record(&mut self, x: &[T], fx: &[T]) {
        self.prev_delta = Some(vecops::sub(fx, x));
        self.prev_x = Some(x.to_vec());
        self.prev_fx = Some(fx.to_vec());
    }

    /// Crossed secant once a previous iterate exists, else the plain step; records `(x, fx)`.
    pub fn crossed_secant(&mut self, x: &[T], fx: &[T]) -> AccelStep<Vec<T>> {
        let delta = vecops::sub(fx, x);
        let step = match (&self.prev_fx, &self.prev_delta) {
            (Some(pf), Some(pd)) => crossed_secant_step(fx, pf, &delta, pd),
            _ => AccelStep {
                value: fx.to_vec(),
                degenerate: false,
            },
        };
        self.record(x, fx);
        step
    }
}

/// Windowed Anderson acceleration.
///
/// Columns of `𝒳` are differences of consecutive residuals `Δxᵢ₊₁ − Δxᵢ`, kept
/// with the matching differences of `F` values. A thin QR factorization of `𝒳`
/// is updated on every append.
#[derive(Debug, Clone)]
pub struct AndersonState<T> {
    window: usize,
    cond_max: T,
    dx_cols: VecDeque<Vec<T>>,
    df_cols: VecDeque<Vec<T>>,
    q: Vec<Vec<T>>,
    /// Upper triangular factor, column `j` has `j + 1` entries.
    r: Vec<Vec<T>>,
    prev_delta: Option<Vec<T>>,
    prev_fx: Option<Vec<T>>,
    dim: Option<usize>,
    /// Number of condition-driven column drops so far.
    pub dropped: usize,
}

impl<T: Real> AndersonState<T> {
    pub fn new(window: usize, cond_max: T) -> Result<Self> {
        if window < 1 {
            return arg_err("Anderson window must be at least 1");
        }
        if !(cond_max > T::one()) {
            return arg_err("cond_max must exceed 1");
        }
        Ok(Self {
            window,
            cond_max,
            dx_cols: VecDeque::new(),
            df_cols: VecDeque::new(),
            q: Vec::new(),
            r: Vec::new(),
            prev_delta: None,
            prev_fx: None,
            dim: None,
            dropped: 0,
        })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn n_columns(&self) -> usize {
        self.dx_cols.len()
    }

    pub fn columns(&self) -> impl Iterator<Item = &Vec<T>> {
        self.dx_cols.iter()
    }

    /// `max |Q R − 𝒳|` over all entries.
    pub fn qr_residual(&self) -> T {
        let mut worst = T::zero();
        for (j, col) in self.dx_cols.iter().enumerate() {
            for (i, &c) in col.iter().enumerate() {
                let qr: T = (0..=j).map(|k| self.q[k][i] * self.r[j][k]).sum();
                worst = worst.max((qr - c).abs());
            }
        }
        worst
    }

    /// Condition number of the triangular factor.
    pub fn r_condition(&self) -> T {
        let m = self.r.len();
        let cols: Vec<Vec<T>> = self
            .r
            .iter()
            .map(|c| {
                let mut full = c.clone();
                full.resize(m, T::zero());
                full
            })
            .collect();
        condition_number(&cols)
    }

    fn qr_append(&mut self, c: &[T]) {
        let mut w = c.to_vec();
        let mut coef = vec![T::zero(); self.q.len() + 1];
        for _ in 0..2 {
            for (k, qk) in self.q.iter().enumerate() {
                let d = vecops::dot(&w, qk);
                coef[k] += d;
                vecops::axpy(-d, qk, &mut w);
            }
        }
        let rho = vecops::norm(&w);
        coef[self.q.len()] = rho;
        if rho > T::zero() {
            vecops::scale(T::one() / rho, &mut w);
        } else {
            w.iter_mut().for_each(|v| *v = T::zero());
        }
        self.q.push(w);
        self.r.push(coef);
    }

    fn refactor(&mut self) {
        self.q.clear();
        self.r.clear();
        let cols: Vec<Vec<T>> = self.dx_cols.iter().cloned().collect();
        for c in &cols {
            self.qr_append(c);
        }
    }

    /// Adds one `(Δx difference, F difference)` column pair, enforcing the
    /// window and the conditioning limit.
    pub fn push_column(&mut self, dx: Vec<T>, df: Vec<T>) {
        self.qr_append(&dx);
        self.dx_cols.push_back(dx);
        self.df_cols.push_back(df);
        if self.dx_cols.len() > self.window {
            self.dx_cols.pop_front();
            self.df_cols.pop_front();
            self.refactor();
        }
        while !self.dx_cols.is_empty() && !(self.r_condition() <= self.cond_max) {
            // newest column is last in the factorization; dropping it needs no refactor
            self.dx_cols.pop_back();
            self.df_cols.pop_back();
            self.q.pop();
            self.r.pop();
            self.dropped += 1;
        }
    }

    /// Least-squares weights `γ = argmin ‖Δx − 𝒳γ‖₂` via the stored QR.
    fn gamma(&self, delta: &[T]) -> Vec<T> {
        let m = self.q.len();
        let qtd: Vec<T> = self.q.iter().map(|q| vecops::dot(q, delta)).collect();
        let mut g = vec![T::zero(); m];
        for i in (0..m).rev() {
            let mut s = qtd[i];
            for j in i + 1..m {
                s -= self.r[j][i] * g[j];
            }
            g[i] = s / self.r[i][i];
        }
        g
    }

    /// One Anderson step from `x_k` and `F(x_k)`.
    pub fn update(&mut self, x_k: &[T], fx_k: &[T]) -> Result<AccelStep<Vec<T>>> {
        if x_k.len() != fx_k.len() {
            return arg_err("x and F(x) lengths differ");
        }
        match self.dim {
            Some(d) if d != x_k.len() => {
                return arg_err(format!("state has dimension {d}, got {}", x_k.len()))
            }
            _ => self.dim = Some(x_k.len()),
        }
        let delta = vecops::sub(fx_k, x_k);
        let (prev_delta, prev_fx) = match (self.prev_delta.take(), self.prev_fx.take()) {
            (Some(d), Some(f)) => (d, f),
            _ => {
                self.prev_delta = Some(delta);
                self.prev_fx = Some(fx_k.to_vec());
                return Ok(AccelStep {
                    value: fx_k.to_vec(),
                    degenerate: false,
                });
            }
        };
        self.push_column(
            vecops::sub(&delta, &prev_delta),
            vecops::sub(fx_k, &prev_fx),
        );
        self.prev_fx = Some(fx_k.to_vec());

        let plain = AccelStep {
            value: fx_k.to_vec(),
            degenerate: true,
        };
        if self.dx_cols.is_empty() {
            self.prev_delta = Some(delta);
            return Ok(plain);
        }
        let gamma = self.gamma(&delta);
        self.prev_delta = Some(delta);
        if gamma.iter().any(|g| !g.is_finite()) {
            return Ok(plain);
        }
        let mut value = fx_k.to_vec();
        for (g, df) in gamma.iter().zip(&self.df_cols) {
            vecops::axpy(-*g, df, &mut value);
        }
        Ok(AccelStep {
            value,
            degenerate: false,
        })
    }
}
