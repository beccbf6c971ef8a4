//! Exact ray/pixel intersection lengths on the `[-1,1]²` grid and the
//! stacked per-view system operator.
//!
//! Pixel `(row, col)` has flat index `row * n + col`; row 0 is the top of the
//! image (largest `y`), column 0 the left edge (smallest `x`).

use std::io::Write;

use rayon::prelude::*;

use crate::error::{arg_err, Result};
use crate::format::fmt_sci;
use crate::geometry::{detector_offset, fan_frame, FanBeamGeometry, GeometryParams, Ray};
use crate::scalar::Real;

/// Anything that can apply `A` and `Aᵀ`.
pub trait LinearOperator<T: Real>: Sync {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    /// `y = A x`
    fn apply_into(&self, x: &[T], y: &mut [T]);
    /// `x = Aᵀ y`
    fn apply_adjoint_into(&self, y: &[T], x: &mut [T]);

    fn apply(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.nrows()];
        self.apply_into(x, &mut y);
        y
    }

    fn apply_adjoint(&self, y: &[T]) -> Vec<T> {
        let mut x = vec![T::zero(); self.ncols()];
        self.apply_adjoint_into(y, &mut x);
        x
    }
}

/// Walks the pixels crossed by `ray` on an `n x n` grid over `[-1,1]²` in
/// order of increasing ray parameter, calling `visit(pixel, length)` for each
/// segment of positive length.
///
/// Crossings of the vertical and horizontal gridline families are merged in
/// parametric order; each consecutive pair bounds one segment whose midpoint
/// identifies the pixel.
pub fn trace_ray_with<T: Real>(n: usize, ray: &Ray<T>, mut visit: impl FnMut(usize, T)) {
    let one = T::one();
    let h = T::lit(2.0) / T::lit(n as f64);
    let [ox, oy] = ray.origin;
    let [dx, dy] = ray.dir;

    // Crossing parameter of gridline k of one family, in increasing order.
    let family = |o: T, d: T| -> Option<(T, T)> {
        if d == T::zero() {
            return None;
        }
        // t_k = (-1 + k h - o) / d
        let t0 = (-one - o) / d;
        let step = h / d;
        if d > T::zero() {
            Some((t0, step))
        } else {
            // iterate k = n .. 0 so t increases
            Some((t0 + step * T::lit(n as f64), -step))
        }
    };
    let fx = family(ox, dx);
    let fy = family(oy, dy);
    let crossing = |f: Option<(T, T)>, k: usize| -> Option<T> {
        if k > n {
            return None;
        }
        f.map(|(t0, s)| t0 + s * T::lit(k as f64))
    };

    let inside = |px: T, py: T| px >= -one && px <= one && py >= -one && py <= one;
    let (mut kx, mut ky) = (0usize, 0usize);
    // a ray starting inside the square contributes from t = 0
    let mut prev: Option<T> = if inside(ox, oy) {
        Some(T::zero())
    } else {
        None
    };
    loop {
        let cx = crossing(fx, kx);
        let cy = crossing(fy, ky);
        let t = match (cx, cy) {
            (None, None) => break,
            (Some(a), None) => {
                kx += 1;
                a
            }
            (None, Some(b)) => {
                ky += 1;
                b
            }
            (Some(a), Some(b)) => {
                if a <= b {
                    kx += 1;
                    a
                } else {
                    ky += 1;
                    b
                }
            }
        };
        if !(t >= T::zero()) {
            continue;
        }
        if let Some(p) = prev {
            let len = t - p;
            if len <= T::MERGE_TOL {
                continue;
            }
            let mid = p + len / T::lit(2.0);
            let px = ox + mid * dx;
            let py = oy + mid * dy;
            if inside(px, py) {
                let col = ((px + one) / h).floor().to_usize().unwrap_or(0).min(n - 1);
                let row = ((one - py) / h).floor().to_usize().unwrap_or(0).min(n - 1);
                visit(row * n + col, len);
            }
        }
        prev = Some(t);
    }
}

/// Sparse row of `(pixel, intersection length)` pairs for one ray.
pub fn trace_ray<T: Real>(n: usize, ray: &Ray<T>) -> Vec<(usize, T)> {
    let mut row = Vec::with_capacity(2 * n);
    trace_ray_with(n, ray, |j, l| row.push((j, l)));
    row
}

/// One block row `A(θᵢ, Rᵢ)` in compressed sparse row form.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewBlock<T> {
    pub n_rows: usize,
    pub n_cols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<u32>,
    pub values: Vec<T>,
}

impl<T: Real> ViewBlock<T> {
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()]
            .iter()
            .zip(&self.values[r])
            .map(|(&c, &v)| (c as usize, v))
    }

    pub fn mul_into(&self, x: &[T], y: &mut [T]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.n_rows) {
            *yi = self.row(i).map(|(c, v)| v * x[c]).sum();
        }
    }

    /// `x += Bᵀ y`
    pub fn mul_adjoint_acc(&self, y: &[T], x: &mut [T]) {
        for (i, &yi) in y.iter().enumerate().take(self.n_rows) {
            if yi == T::zero() {
                continue;
            }
            for (c, v) in self.row(i) {
                x[c] += v * yi;
            }
        }
    }

    /// Coordinate triplets `row col value`, one per line.
    pub fn write_triplets<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for i in 0..self.n_rows {
            for (c, v) in self.row(i) {
                writeln!(w, "{i} {c} {}", fmt_sci(v.as_f64()))?;
            }
        }
        Ok(())
    }
}

/// Builds the block of intersection lengths for the fan fired from `(theta, r)`.
/// Rays that miss the image produce empty rows.
pub fn assemble_view<T: Real>(theta: T, r: T, geom: &FanBeamGeometry) -> Result<ViewBlock<T>> {
    let (source, axis, half) = fan_frame(theta, r, T::lit(geom.domain_half_width))?;
    let n = geom.n_pixels;
    let mut row_ptr = Vec::with_capacity(geom.n_detectors + 1);
    let mut col_idx = Vec::with_capacity(geom.n_detectors * 2 * n);
    let mut values = Vec::with_capacity(geom.n_detectors * 2 * n);
    row_ptr.push(0);
    for j in 0..geom.n_detectors {
        let a = axis + detector_offset(j, geom.n_detectors, half);
        let (s, c) = a.sin_cos();
        let ray = Ray {
            origin: source,
            dir: [c, s],
        };
        trace_ray_with(n, &ray, |pix, len| {
            col_idx.push(pix as u32);
            values.push(len);
        });
        row_ptr.push(values.len());
    }
    Ok(ViewBlock {
        n_rows: geom.n_detectors,
        n_cols: n * n,
        row_ptr,
        col_idx,
        values,
    })
}

/// Matrix-free `A(θ, r) x` for one view, written into `out` (length `n_detectors`).
pub fn project_view<T: Real>(
    theta: T,
    r: T,
    geom: &FanBeamGeometry,
    x: &[T],
    out: &mut [T],
) -> Result<()> {
    if x.len() != geom.n_unknowns() || out.len() != geom.n_detectors {
        return arg_err("project_view: dimension mismatch");
    }
    let (source, axis, half) = fan_frame(theta, r, T::lit(geom.domain_half_width))?;
    for (j, o) in out.iter_mut().enumerate() {
        let a = axis + detector_offset(j, geom.n_detectors, half);
        let (s, c) = a.sin_cos();
        let ray = Ray {
            origin: source,
            dir: [c, s],
        };
        let mut acc = T::zero();
        trace_ray_with(geom.n_pixels, &ray, |pix, len| acc += len * x[pix]);
        *o = acc;
    }
    Ok(())
}

/// `A(p)`: the per-view blocks stacked in view order.
#[derive(Debug, Clone)]
pub struct StackedOperator<T> {
    pub blocks: Vec<ViewBlock<T>>,
    n_rows: usize,
    n_cols: usize,
}

/// Blocks per partial sum in the adjoint; fixed so results do not depend on
/// the thread count.
const ADJOINT_CHUNK: usize = 8;

impl<T: Real> StackedOperator<T> {
    pub fn from_blocks(blocks: Vec<ViewBlock<T>>) -> Result<Self> {
        let n_cols = match blocks.first() {
            Some(b) => b.n_cols,
            None => return arg_err("operator needs at least one block"),
        };
        if blocks.iter().any(|b| b.n_cols != n_cols) {
            return arg_err("blocks have different column counts");
        }
        let n_rows = blocks.iter().map(|b| b.n_rows).sum();
        Ok(Self {
            blocks,
            n_rows,
            n_cols,
        })
    }

    /// Assembles every view of `params`, in parallel.
    pub fn assemble(params: &GeometryParams<T>, geom: &FanBeamGeometry) -> Result<Self> {
        let blocks = params
            .thetas
            .par_iter()
            .zip(&params.radii)
            .map(|(&t, &r)| assemble_view(t, r, geom))
            .collect::<Result<Vec<_>>>()?;
        Self::from_blocks(blocks)
    }

    pub fn nnz(&self) -> usize {
        self.blocks.iter().map(|b| b.nnz()).sum()
    }

    /// `y = A x` with dimension checking.
    pub fn try_apply(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.n_cols {
            return arg_err(format!(
                "expected {} unknowns, got {}",
                self.n_cols,
                x.len()
            ));
        }
        Ok(self.apply(x))
    }

    /// `x = Aᵀ y` with dimension checking.
    pub fn try_apply_adjoint(&self, y: &[T]) -> Result<Vec<T>> {
        if y.len() != self.n_rows {
            return arg_err(format!("expected {} rows, got {}", self.n_rows, y.len()));
        }
        Ok(self.apply_adjoint(y))
    }

    fn row_slices<'a>(&self, y: &'a mut [T]) -> Vec<&'a mut [T]> {
        let mut out = Vec::with_capacity(self.blocks.len());
        let mut rest = y;
        for b in &self.blocks {
            let (head, tail) = rest.split_at_mut(b.n_rows);
            out.push(head);
            rest = tail;
        }
        out
    }

    fn row_offsets(&self) -> Vec<usize> {
        let mut offs = Vec::with_capacity(self.blocks.len());
        let mut acc = 0;
        for b in &self.blocks {
            offs.push(acc);
            acc += b.n_rows;
        }
        offs
    }
}

impl<T: Real> LinearOperator<T> for StackedOperator<T> {
    fn nrows(&self) -> usize {
        self.n_rows
    }

    fn ncols(&self) -> usize {
        self.n_cols
    }

    fn apply_into(&self, x: &[T], y: &mut [T]) {
        assert_eq!(x.len(), self.n_cols, "apply: dimension mismatch");
        assert_eq!(y.len(), self.n_rows, "apply: dimension mismatch");
        self.blocks
            .par_iter()
            .zip(self.row_slices(y))
            .for_each(|(b, yb)| b.mul_into(x, yb));
    }

    fn apply_adjoint_into(&self, y: &[T], x: &mut [T]) {
        assert_eq!(y.len(), self.n_rows, "adjoint: dimension mismatch");
        assert_eq!(x.len(), self.n_cols, "adjoint: dimension mismatch");
        let offs = self.row_offsets();
        let partials: Vec<Vec<T>> = self
            .blocks
            .par_chunks(ADJOINT_CHUNK)
            .enumerate()
            .map(|(ci, chunk)| {
                let mut acc = vec![T::zero(); self.n_cols];
                for (k, b) in chunk.iter().enumerate() {
                    let off = offs[ci * ADJOINT_CHUNK + k];
                    b.mul_adjoint_acc(&y[off..off + b.n_rows], &mut acc);
                }
                acc
            })
            .collect();
        x.iter_mut().for_each(|v| *v = T::zero());
        for p in &partials {
            for (xi, &pi) in x.iter_mut().zip(p) {
                *xi += pi;
            }
        }
    }
}
