//! Test images and 16-bit PGM raster I/O.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Square image of attenuation coefficients on `[-1,1]²`, row-major with row 0 at the top.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid<T> {
    pub n: usize,
    pub values: Vec<T>,
}

impl<T: Real> ImageGrid<T> {
    pub fn new(n: usize, values: Vec<T>) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::Argument(format!(
                "image of side {n} needs {} values, got {}",
                n * n,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("image values must be finite".into()));
        }
        Ok(Self { n, values })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            values: vec![T::zero(); n * n],
        }
    }

    /// Builds an image by sampling `f` at every pixel center.
    pub fn from_fn(n: usize, f: impl Fn(T, T) -> T) -> Self {
        let values = (0..n * n)
            .map(|k| {
                let (x, y) = pixel_center::<T>(n, k / n, k % n);
                f(x, y)
            })
            .collect();
        Self { n, values }
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        self.values[row * self.n + col]
    }

    pub fn max(&self) -> T {
        self.values.iter().copied().fold(T::neg_infinity(), T::max)
    }
}

/// `(x, y)` of the center of pixel `(row, col)`.
pub fn pixel_center<T: Real>(n: usize, row: usize, col: usize) -> (T, T) {
    let h = T::lit(2.0) / T::lit(n as f64);
    let half = T::lit(0.5);
    let x = -T::one() + (T::lit(col as f64) + half) * h;
    let y = T::one() - (T::lit(row as f64) + half) * h;
    (x, y)
}

/// Ellipse with additive intensity; `phi` in degrees.
#[derive(Debug, Clone, Copy)]
pub struct Ellipse {
    pub intensity: f64,
    pub a: f64,
    pub b: f64,
    pub x0: f64,
    pub y0: f64,
    pub phi: f64,
}

impl Ellipse {
    const fn new(intensity: f64, a: f64, b: f64, x0: f64, y0: f64, phi: f64) -> Self {
        Self {
            intensity,
            a,
            b,
            x0,
            y0,
            phi,
        }
    }

    pub fn contains<T: Real>(&self, x: T, y: T) -> bool {
        let (s, c) = T::lit(self.phi).to_radians().sin_cos();
        let dx = x - T::lit(self.x0);
        let dy = y - T::lit(self.y0);
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        let a = T::lit(self.a);
        let b = T::lit(self.b);
        u * u / (a * a) + v * v / (b * b) <= T::one()
    }
}

/// Contrast-enhanced Shepp-Logan table (intensity, semi-axes, center, rotation).
pub const SHEPP_LOGAN: [Ellipse; 10] = [
    Ellipse::new(1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    Ellipse::new(-0.8, 0.6624, 0.8740, 0.0, -0.0184, 0.0),
    Ellipse::new(-0.2, 0.1100, 0.3100, 0.22, 0.0, -18.0),
    Ellipse::new(-0.2, 0.1600, 0.4100, -0.22, 0.0, 18.0),
    Ellipse::new(0.1, 0.2100, 0.2500, 0.0, 0.35, 0.0),
    Ellipse::new(0.1, 0.0460, 0.0460, 0.0, 0.1, 0.0),
    Ellipse::new(0.1, 0.0460, 0.0460, 0.0, -0.1, 0.0),
    Ellipse::new(0.1, 0.0460, 0.0230, -0.08, -0.605, 0.0),
    Ellipse::new(0.1, 0.0230, 0.0230, 0.0, -0.606, 0.0),
    Ellipse::new(0.1, 0.0230, 0.0460, 0.06, -0.605, 0.0),
];

fn rasterize<T: Real>(n: usize, ellipses: &[Ellipse]) -> ImageGrid<T> {
    // sums like 1 - 0.8 - 0.2 leave rounding residue; snap it to zero
    let snap = T::lit(1e-12);
    ImageGrid::from_fn(n, |x, y| {
        let v: T = ellipses
            .iter()
            .filter(|e| e.contains(x, y))
            .map(|e| T::lit(e.intensity))
            .sum();
        if v.abs() < snap {
            T::zero()
        } else {
            v
        }
    })
}

/// Modified Shepp-Logan phantom sampled at pixel centers.
pub fn shepp_logan<T: Real>(n: usize) -> ImageGrid<T> {
    rasterize(n, &SHEPP_LOGAN)
}

/// Disk of the given radius centered at the origin.
pub fn disk<T: Real>(n: usize, radius: T, value: T) -> ImageGrid<T> {
    let r2 = radius * radius;
    ImageGrid::from_fn(n, |x, y| {
        if x * x + y * y <= r2 {
            value
        } else {
            T::zero()
        }
    })
}

/// Second stock phantom: a centered disk with an off-center inclusion.
pub fn composite<T: Real>(n: usize) -> ImageGrid<T> {
    rasterize(
        n,
        &[
            Ellipse::new(0.6, 0.8, 0.8, 0.0, 0.0, 0.0),
            Ellipse::new(0.4, 0.3, 0.15, 0.3, 0.25, 30.0),
            Ellipse::new(-0.3, 0.12, 0.2, -0.35, -0.3, 0.0),
        ],
    )
}

/// Writes a binary 16-bit PGM, mapping `[0, max]` linearly onto `[0, 65535]`.
/// Negative values are clipped to 0; an image without positive values is written as all zeros.
pub fn write_pgm<T: Real>(img: &ImageGrid<T>, path: impl AsRef<Path>) -> Result<()> {
    if img.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format("cannot write non-finite values".into()));
    }
    let max = img.max();
    let scale = if max > T::zero() { max } else { T::one() };
    let mut buf = Vec::with_capacity(32 + 2 * img.values.len());
    write!(buf, "P5\n{} {}\n65535\n", img.n, img.n)?;
    for &v in &img.values {
        let q = (v.max(T::zero()) / scale * T::lit(65535.0))
            .round()
            .as_f64();
        let q = q.clamp(0.0, 65535.0) as u16;
        buf.extend_from_slice(&q.to_be_bytes());
    }
    fs::write(path, buf)?;
    Ok(())
}

/// Reads a square binary PGM; samples are divided by the header's maximum value.
pub fn read_pgm<T: Real>(path: impl AsRef<Path>) -> Result<ImageGrid<T>> {
    let data = fs::read(path)?;
    parse_pgm(&data)
}

pub fn parse_pgm<T: Real>(data: &[u8]) -> Result<ImageGrid<T>> {
    let bad = |m: &str| Error::Format(m.to_string());
    let mut pos = 0;
    let mut tokens = Vec::with_capacity(4);
    while tokens.len() < 4 {
        while pos < data.len() && (data[pos].is_ascii_whitespace() || data[pos] == b'#') {
            if data[pos] == b'#' {
                while pos < data.len() && data[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < data.len() && !data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        tokens.push(std::str::from_utf8(&data[start..pos]).map_err(|_| bad("non-ascii header"))?);
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    if tokens[0] != "P5" {
        return Err(bad("not a binary PGM (P5)"));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| bad("invalid header number"));
    let (w, h, maxval) = (parse(tokens[1])?, parse(tokens[2])?, parse(tokens[3])?);
    if w != h {
        return Err(bad("image is not square"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(bad("invalid maximum value"));
    }
    let bytes_per = if maxval < 256 { 1 } else { 2 };
    let need = w * h * bytes_per;
    if data.len() < pos + need {
        return Err(bad("truncated raster"));
    }
    let raster = &data[pos..pos + need];
    let denom = T::lit(maxval as f64);
    let values = if bytes_per == 2 {
        raster
            .chunks_exact(2)
            .map(|c| T::lit(u16::from_be_bytes([c[0], c[1]]) as f64) / denom)
            .collect()
    } else {
        raster.iter().map(|&b| T::lit(b as f64) / denom).collect()
    };
    ImageGrid::new(w, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oracle_value(x: f64, y: f64) -> f64 {
        // direct evaluation of the standard quadratic form per ellipse
        let mut v = 0.0;
        for e in SHEPP_LOGAN.iter() {
            let t = e.phi.to_radians();
            let u = (x - e.x0) * t.cos() + (y - e.y0) * t.sin();
            let w = -(x - e.x0) * t.sin() + (y - e.y0) * t.cos();
            if (u / e.a).powi(2) + (w / e.b).powi(2) <= 1.0 {
                v += e.intensity;
            }
        }
        v
    }

    #[test]
    fn shepp_logan_n2_matches_point_evaluation() {
        let img = shepp_logan::<f64>(2);
        for (k, &v) in img.values.iter().enumerate() {
            let (x, y) = pixel_center::<f64>(2, k / 2, k % 2);
            let o = oracle_value(x, y);
            assert!(SHEPP_LOGAN[0].contains(x, y));
            assert!((v - o).abs() < 1e-12, "{v} vs {o}");
        }
    }

    #[test]
    fn shepp_logan_background_and_range() {
        let n = 64;
        let img = shepp_logan::<f64>(n);
        for (k, &v) in img.values.iter().enumerate() {
            let (x, y) = pixel_center::<f64>(n, k / n, k % n);
            if !SHEPP_LOGAN[0].contains(x, y) {
                assert_eq!(v, 0.0);
            }
            assert!((0.0..=1.02).contains(&v));
        }
    }

    #[test]
    fn shepp_logan_nonzero_fraction() {
        let img = shepp_logan::<f64>(256);
        let nz = img.values.iter().filter(|&&v| v != 0.0).count() as f64 / 65536.0;
        let oracle = (0..65536)
            .filter(|&k| {
                let (x, y) = pixel_center::<f64>(256, k / 256, k % 256);
                oracle_value(x, y).abs() > 1e-12
            })
            .count() as f64
            / 65536.0;
        assert!((nz - oracle).abs() < 1e-9);
        assert!((0.3..=0.6).contains(&nz), "{nz}");
    }

    #[test]
    fn downsampling_is_consistent() {
        let big = shepp_logan::<f64>(256);
        let small = shepp_logan::<f64>(64);
        let mut mad = 0.0;
        for i in 0..64 {
            for j in 0..64 {
                let mut s = 0.0;
                for a in 0..4 {
                    for b in 0..4 {
                        s += big.get(4 * i + a, 4 * j + b);
                    }
                }
                mad += (s / 16.0 - small.get(i, j)).abs();
            }
        }
        assert!(mad / 4096.0 < 0.05);
    }

    #[test]
    fn disk_cases() {
        let d = disk::<f64>(2, 1.0, 0.7);
        assert!(d.values.iter().all(|&v| v == 0.7));
        let empty = disk::<f64>(16, 1e-9, 1.0);
        assert!(empty.values.iter().all(|&v| v == 0.0));
        let n = 64;
        let d = disk::<f64>(n, 0.5, 1.0);
        for i in 0..n {
            for j in 0..n {
                // 90 degree rotation: (i, j) -> (j, n-1-i)
                assert_eq!(d.get(i, j), d.get(j, n - 1 - i));
            }
        }
    }

    #[test]
    fn composite_is_bounded() {
        let c = composite::<f64>(32);
        assert!(c.values.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(c.max() > 0.5);
    }

    #[test]
    fn pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.pgm");
        let img = shepp_logan::<f64>(32);
        write_pgm(&img, &path).unwrap();
        let back: ImageGrid<f64> = read_pgm(&path).unwrap();
        let max = img.max();
        for (a, b) in img.values.iter().zip(&back.values) {
            assert!((a / max - b).abs() <= 1.0 / 65535.0);
        }
    }

    #[test]
    fn pgm_zero_image_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.pgm");
        write_pgm(&ImageGrid::<f64>::zeros(64), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let header: Vec<&str> = std::str::from_utf8(&bytes[..15])
            .unwrap()
            .split_whitespace()
            .collect();
        assert_eq!(header, vec!["P5", "64", "64", "65535"]);
        let back: ImageGrid<f64> = read_pgm(&path).unwrap();
        assert!(back.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pgm_rejects_malformed() {
        assert!(matches!(
            parse_pgm::<f64>(b"P2\n2 2\n255\n0 0 0 0"),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            parse_pgm::<f64>(b"P5\n3 2\n255\n012345"),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            parse_pgm::<f64>(b"P5\n2 2\n255\n01"),
            Err(Error::Format(_))
        ));
        assert!(matches!(parse_pgm::<f64>(b"P5\n2"), Err(Error::Format(_))));
        let ok: ImageGrid<f64> = parse_pgm(b"P5\n# comment\n2 2\n255\n\x00\x00\xff\x00").unwrap();
        assert_eq!(ok.values, vec![0.0, 0.0, 1.0, 0.0]);
    }
}
