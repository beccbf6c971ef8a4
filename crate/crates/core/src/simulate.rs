//! Sinogram simulation: line integrals through the stacked operator plus
//! Gaussian noise calibrated to an exact relative level.

use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{arg_err, Error, Result};
use crate::format::fmt_sci;
use crate::geometry::{FanBeamGeometry, GeometryParams};
use crate::phantom::ImageGrid;
use crate::projector::project_view;
use crate::scalar::{vecops, Real};

/// Post-log measurements `-log(Iᵢ/I₀)`, one block of `n_detectors` rows per view.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram<T> {
    pub values: Vec<T>,
    pub view_offsets: Vec<usize>,
    pub n_detectors: usize,
}

impl<T: Real> Sinogram<T> {
    pub fn new(values: Vec<T>, n_views: usize, n_detectors: usize) -> Result<Self> {
        if values.len() != n_views * n_detectors || n_views == 0 || n_detectors == 0 {
            return arg_err(format!(
                "sinogram of {} values does not split into {n_views} views of {n_detectors}",
                values.len()
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return arg_err("sinogram values must be finite");
        }
        Ok(Self {
            values,
            view_offsets: (0..n_views).map(|v| v * n_detectors).collect(),
            n_detectors,
        })
    }

    pub fn n_views(&self) -> usize {
        self.view_offsets.len()
    }

    pub fn view(&self, i: usize) -> &[T] {
        let o = self.view_offsets[i];
        &self.values[o..o + self.n_detectors]
    }

    pub fn norm(&self) -> T {
        vecops::norm(&self.values)
    }

    /// One comma-separated line per view.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for v in 0..self.n_views() {
            let line: Vec<String> = self.view(v).iter().map(|x| fmt_sci(x.as_f64())).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut values = Vec::new();
        let mut n_det = None;
        let mut n_views = 0;
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: Vec<T> = line
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map(T::lit)
                        .map_err(|_| Error::Format(format!("bad sinogram value {s:?}")))
                })
                .collect::<Result<_>>()?;
            match n_det {
                None => n_det = Some(row.len()),
                Some(k) if k != row.len() => {
                    return Err(Error::Format("ragged sinogram rows".into()))
                }
                _ => {}
            }
            values.extend(row);
            n_views += 1;
        }
        let n_det = n_det.ok_or_else(|| Error::Format("empty sinogram".into()))?;
        Self::new(values, n_views, n_det)
    }
}

/// Transmitted intensity `i0 · exp(-μd)`.
pub fn beer_transmit<T: Real>(i0: T, mu_d: T) -> T {
    i0 * (-mu_d).exp()
}

/// `b = A(p) x`, views simulated in parallel.
pub fn forward_sinogram<T: Real>(
    img: &ImageGrid<T>,
    params: &GeometryParams<T>,
    geom: &FanBeamGeometry,
) -> Result<Sinogram<T>> {
    if img.n != geom.n_pixels {
        return arg_err(format!(
            "image side {} does not match geometry {}",
            img.n, geom.n_pixels
        ));
    }
    if params.n_views() != geom.n_views {
        return arg_err("parameter count does not match the geometry's view count");
    }
    let nd = geom.n_detectors;
    let mut values = vec![T::zero(); geom.n_rays()];
    values
        .par_chunks_mut(nd)
        .zip(params.thetas.par_iter().zip(&params.radii))
        .try_for_each(|(out, (&t, &r))| project_view(t, r, geom, &img.values, out))?;
    Sinogram::new(values, geom.n_views, nd)
}

/// Adds Gaussian noise scaled so that `‖η‖₂ / ‖b‖₂ = level` exactly.
pub fn add_noise<T: Real>(b: &Sinogram<T>, level: T, rng_seed: u64) -> Result<Sinogram<T>> {
    if !(level >= T::zero()) {
        return arg_err("noise level must be nonnegative");
    }
    if level == T::zero() {
        return Ok(b.clone());
    }
    let bn = b.norm();
    if bn == T::zero() {
        return arg_err("cannot calibrate noise against a zero sinogram");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let g: Vec<T> = (0..b.values.len())
        .map(|_| T::lit(StandardNormal.sample(&mut rng)))
        .collect();
    let s = level * bn / vecops::norm(&g);
    let mut out = b.clone();
    vecops::axpy(s, &g, &mut out.values);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{default_geometry, make_rays, FanBeamGeometry};
    use crate::phantom::{disk, shepp_logan};
    use crate::projector::trace_ray;

    #[test]
    fn beer_law() {
        assert_eq!(beer_transmit(3.0f64, 0.0), 3.0);
        assert!((beer_transmit(1.0f64, 2f64.ln()) - 0.5).abs() < 1e-15);
        let mut t = 0.0;
        for _ in 0..100 {
            t = (t + 0.7317) % 10.0;
            let back = -(beer_transmit(1.0f64, t) / 1.0).ln();
            assert!((back - t).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_image_zero_sinogram() {
        let geom = FanBeamGeometry::new(8, 12).unwrap();
        let p = geom.nominal_params::<f64>(0.0, 0.0).unwrap();
        let b = forward_sinogram(&ImageGrid::zeros(8), &p, &geom).unwrap();
        assert!(b.values.iter().all(|&v| v == 0.0));
        assert_eq!(
            *b.view_offsets.last().unwrap() + geom.n_detectors,
            b.values.len()
        );
    }

    #[test]
    fn centered_disk_is_view_independent() {
        let geom = default_geometry(32).unwrap();
        let img = disk::<f64>(32, 0.6, 1.0);
        let p = GeometryParams::unbounded(vec![0.0, 90.0, 180.0], vec![2.0; 3]).unwrap();
        let g3 = FanBeamGeometry { n_views: 3, ..geom };
        let b = forward_sinogram(&img, &p, &g3).unwrap();
        for v in 1..3 {
            for (a, c) in b.view(0).iter().zip(b.view(v)) {
                assert!((a - c).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn single_pixel_image_reads_intersection_lengths() {
        let geom = FanBeamGeometry::new(8, 1).unwrap();
        let mut img = ImageGrid::<f64>::zeros(8);
        let pix = 8 * 3 + 4;
        img.values[pix] = 1.0;
        let p = GeometryParams::unbounded(vec![17.0], vec![2.5]).unwrap();
        let b = forward_sinogram(&img, &p, &geom).unwrap();
        for (i, ray) in make_rays(17.0, 2.5, &geom).unwrap().iter().enumerate() {
            let d = trace_ray(8, ray)
                .iter()
                .find(|e| e.0 == pix)
                .map_or(0.0, |e| e.1);
            assert!((b.values[i] - d).abs() < 1e-15);
        }
    }

    #[test]
    fn forward_is_linear() {
        let geom = FanBeamGeometry::new(16, 10).unwrap();
        let p = geom.nominal_params::<f64>(0.0, 0.0).unwrap();
        let x1 = shepp_logan::<f64>(16);
        let x2 = disk::<f64>(16, 0.4, 0.3);
        let sum = ImageGrid::new(
            16,
            x1.values
                .iter()
                .zip(&x2.values)
                .map(|(a, b)| a + b)
                .collect(),
        )
        .unwrap();
        let b1 = forward_sinogram(&x1, &p, &geom).unwrap();
        let b2 = forward_sinogram(&x2, &p, &geom).unwrap();
        let bs = forward_sinogram(&sum, &p, &geom).unwrap();
        for i in 0..bs.values.len() {
            assert!((bs.values[i] - b1.values[i] - b2.values[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn noise_is_calibrated_exactly() {
        let geom = FanBeamGeometry::new(16, 20).unwrap();
        let p = geom.nominal_params::<f64>(0.0, 0.0).unwrap();
        let b = forward_sinogram(&shepp_logan(16), &p, &geom).unwrap();
        assert_eq!(add_noise(&b, 0.0, 1).unwrap(), b);
        let nb = add_noise(&b, 0.01, 5).unwrap();
        let ratio = vecops::dist(&nb.values, &b.values) / b.norm();
        assert!((ratio - 0.01).abs() < 1e-14);
        assert_eq!(add_noise(&b, 0.01, 5).unwrap(), nb);
        assert_ne!(add_noise(&b, 0.01, 6).unwrap(), nb);
        let z = Sinogram::new(vec![0.0; 4], 2, 2).unwrap();
        assert!(add_noise(&z, 0.01, 1).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let s = Sinogram::new(vec![0.5, 1.25, -3e-7, 2.0, 0.0, 1.0 / 3.0], 2, 3).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap().lines().count(), 2);
        let back: Sinogram<f64> = Sinogram::read_csv(&buf[..]).unwrap();
        for (a, b) in s.values.iter().zip(&back.values) {
            assert!((a - b).abs() <= 1e-14 * a.abs().max(1e-300));
        }
    }
}
