//! Parallel-beam CT: Radon transform, filtered back-projection and
//! sparse-view subsampling.
//!
//! Geometry: the pixel centre `(r, k)` sits at `u = k - c`, `v = r - c` with
//! `c = (n - 1) / 2`. At view angle `θ` detector bin `j` measures the line
//! `u cos θ + v sin θ = j - c`, so at `θ = 0` the projection is the column
//! sum. Both projection and back-projection use (bi)linear interpolation.

use std::f64::consts::PI;
use std::fmt;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::image::Image;

/// Angle × detector array of line integrals.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram {
    /// View angles in degrees, in `[0, 180)`.
    pub angles: Vec<f64>,
    pub n_det: usize,
    /// `angles.len() × n_det`, row-major.
    pub data: Vec<f64>,
}

impl Sinogram {
    pub fn zeros(angles: Vec<f64>, n_det: usize) -> Self {
        let data = vec![0.0; angles.len() * n_det];
        Sinogram {
            angles,
            n_det,
            data,
        }
    }

    pub fn n_angles(&self) -> usize {
        self.angles.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_det..(i + 1) * self.n_det]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.n_det..(i + 1) * self.n_det]
    }

    pub fn dot(&self, other: &Sinogram) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn scale(&self, s: f64) -> Sinogram {
        Sinogram {
            angles: self.angles.clone(),
            n_det: self.n_det,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// Text header used next to serialized sinograms.
    pub fn meta(&self, factor: usize) -> SinogramMeta {
        SinogramMeta {
            n_angles: self.n_angles(),
            n_det: self.n_det,
            factor,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SinogramMeta {
    pub n_angles: usize,
    pub n_det: usize,
    pub factor: usize,
}

impl fmt::Display for SinogramMeta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "ct n_angles={} n_det={} factor={}",
            self.n_angles, self.n_det, self.factor
        )
    }
}

impl std::str::FromStr for SinogramMeta {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split_whitespace();
        if parts.next() != Some("ct") {
            return Err(Error::format("sinogram meta", format!("expected 'ct ...', got '{s}'")));
        }
        let (mut a, mut d, mut f) = (None, None, None);
        for p in parts {
            let (k, v) = p
                .split_once('=')
                .ok_or_else(|| Error::format("sinogram meta", format!("bad field '{p}'")))?;
            let v: usize = v
                .parse()
                .map_err(|_| Error::format("sinogram meta", format!("bad number in '{p}'")))?;
            match k {
                "n_angles" => a = Some(v),
                "n_det" => d = Some(v),
                "factor" => f = Some(v),
                _ => return Err(Error::format("sinogram meta", format!("unknown field '{k}'"))),
            }
        }
        match (a, d, f) {
            (Some(n_angles), Some(n_det), Some(factor)) => Ok(SinogramMeta {
                n_angles,
                n_det,
                factor,
            }),
            _ => Err(Error::format("sinogram meta", "missing field")),
        }
    }
}

/// `n` views evenly spaced over `[0°, 180°)`.
pub fn uniform_angles(n: usize) -> Vec<f64> {
    (0..n).map(|i| 180.0 * i as f64 / n as f64).collect()
}

fn center(n: usize) -> f64 {
    (n as f64 - 1.0) / 2.0
}

/// Zeroes every pixel whose centre lies outside the inscribed circle.
pub fn mask_to_circle(x: &Image) -> Image {
    let n = x.side();
    let c = center(n);
    let r2 = c * c;
    Image::from_fn(n, |r, k| {
        let d2 = (r as f64 - c).powi(2) + (k as f64 - c).powi(2);
        if d2 <= r2 {
            x[(r, k)]
        } else {
            0.0
        }
    })
}

#[inline]
fn bilinear(x: &Image, row: f64, col: f64) -> f64 {
    let n = x.side() as isize;
    let r0 = row.floor();
    let c0 = col.floor();
    let fr = row - r0;
    let fc = col - c0;
    let (r0, c0) = (r0 as isize, c0 as isize);
    let px = |r: isize, c: isize| {
        if r >= 0 && r < n && c >= 0 && c < n {
            x[(r as usize, c as usize)]
        } else {
            0.0
        }
    };
    (1.0 - fr) * ((1.0 - fc) * px(r0, c0) + fc * px(r0, c0 + 1))
        + fr * ((1.0 - fc) * px(r0 + 1, c0) + fc * px(r0 + 1, c0 + 1))
}

#[inline]
fn linear(row: &[f64], pos: f64) -> f64 {
    let n = row.len() as isize;
    let p0 = pos.floor();
    let f = pos - p0;
    let p0 = p0 as isize;
    let at = |i: isize| if i >= 0 && i < n { row[i as usize] } else { 0.0 };
    (1.0 - f) * at(p0) + f * at(p0 + 1)
}

/// Parallel-beam line integrals; the image is first masked to the
/// inscribed circle. The detector has one bin per image column.
pub fn radon(y: &Image, angles: &[f64]) -> Result<Sinogram> {
    if angles.is_empty() {
        return Err(Error::Degenerate("radon needs at least one view angle".into()));
    }
    let y = mask_to_circle(y);
    let n = y.side();
    let c = center(n);
    let rows: Vec<Vec<f64>> = angles
        .par_iter()
        .map(|&deg| {
            let (s, co) = deg.to_radians().sin_cos();
            (0..n)
                .map(|j| {
                    let sd = j as f64 - c;
                    (0..n)
                        .map(|i| {
                            let t = i as f64 - c;
                            let u = sd * co - t * s;
                            let v = sd * s + t * co;
                            bilinear(&y, v + c, u + c)
                        })
                        .sum()
                })
                .collect()
        })
        .collect();
    Ok(Sinogram {
        angles: angles.to_vec(),
        n_det: n,
        data: rows.concat(),
    })
}

/// Smears every projection back along its rays (no filtering, no scaling).
pub fn backproject(p: &Sinogram) -> Image {
    let n = p.n_det;
    let c = center(n);
    let trig: Vec<(f64, f64)> = p.angles.iter().map(|a| a.to_radians().sin_cos()).collect();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|r| {
            let v = r as f64 - c;
            (0..n)
                .map(|k| {
                    let u = k as f64 - c;
                    trig.iter()
                        .enumerate()
                        .map(|(i, &(s, co))| linear(p.row(i), u * co + v * s + c))
                        .sum()
                })
                .collect()
        })
        .collect();
    Image::from_vec(n, rows.concat()).expect("square back-projection")
}

/// Frequency response of the band-limited ramp (Ram-Lak) filter, built
/// from its spatial kernel so the DC term is not biased.
fn ramp_response(len: usize) -> Vec<f64> {
    let mut kernel = vec![Complex64::new(0.0, 0.0); len];
    kernel[0].re = 0.25;
    for (k, v) in kernel.iter_mut().enumerate().skip(1) {
        if k % 2 == 1 {
            let dist = k.min(len - k) as f64;
            v.re = -1.0 / (PI * dist).powi(2);
        }
    }
    FftPlanner::new().plan_fft_forward(len).process(&mut kernel);
    kernel.iter().map(|z| 2.0 * z.re).collect()
}

fn ramp_filter(p: &Sinogram) -> Sinogram {
    let n = p.n_det;
    let len = (2 * n).next_power_of_two().max(64);
    let response = ramp_response(len);
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(len);
    let inv = planner.plan_fft_inverse(len);
    let mut out = Sinogram::zeros(p.angles.clone(), n);
    let mut buf = vec![Complex64::new(0.0, 0.0); len];
    for i in 0..p.n_angles() {
        buf.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
        for (b, &v) in buf.iter_mut().zip(p.row(i)) {
            b.re = v;
        }
        fwd.process(&mut buf);
        for (b, &h) in buf.iter_mut().zip(&response) {
            *b *= h;
        }
        inv.process(&mut buf);
        for (o, b) in out.row_mut(i).iter_mut().zip(&buf) {
            *o = b.re / len as f64;
        }
    }
    out
}

/// Filtered back-projection, clipped to the inscribed circle.
pub fn fbp(p: &Sinogram) -> Result<Image> {
    if p.n_angles() < 2 {
        return Err(Error::Degenerate(format!(
            "filtered back-projection needs at least 2 views, got {}",
            p.n_angles()
        )));
    }
    if p.data.len() != p.n_angles() * p.n_det {
        return Err(Error::dim("sinogram payload does not match its shape"));
    }
    let filtered = ramp_filter(p);
    let bp = backproject(&filtered);
    let scale = PI / (2.0 * p.n_angles() as f64);
    Ok(mask_to_circle(&bp.scale(scale)))
}

/// Keeps views whose index is a multiple of `factor`.
pub fn subsample_views(p: &Sinogram, factor: usize) -> Result<Sinogram> {
    if factor < 1 {
        return Err(Error::config("view subsampling factor must be at least 1"));
    }
    let kept: Vec<usize> = (0..p.n_angles()).step_by(factor).collect();
    let mut data = Vec::with_capacity(kept.len() * p.n_det);
    for &i in &kept {
        data.extend_from_slice(p.row(i));
    }
    Ok(Sinogram {
        angles: kept.iter().map(|&i| p.angles[i]).collect(),
        n_det: p.n_det,
        data,
    })
}

/// Places measured views back on the full angle grid, zeros elsewhere.
pub fn zero_fill_views(p: &Sinogram, full_angles: &[f64]) -> Result<Sinogram> {
    let mut out = Sinogram::zeros(full_angles.to_vec(), p.n_det);
    let mut cursor = 0;
    for (i, &a) in p.angles.iter().enumerate() {
        let pos = full_angles[cursor..]
            .iter()
            .position(|&b| (a - b).abs() < 1e-9)
            .ok_or_else(|| {
                Error::Consistency(format!("measured view {a}° is not on the full angle grid"))
            })?;
        cursor += pos;
        out.row_mut(cursor).copy_from_slice(p.row(i));
        cursor += 1;
    }
    Ok(out)
}

/// Returns `(x, y)` with `x = FBP(S* S R y)`; `y` is masked to the circle.
pub fn synthesize_ct_pair(y: &Image, angles: &[f64], factor: usize) -> Result<(Image, Image)> {
    let full = radon(y, angles)?;
    let sparse = subsample_views(&full, factor)?;
    let x = fbp(&zero_fill_views(&sparse, angles)?)?;
    Ok((x, mask_to_circle(y)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::psnr;
    use crate::phantom;

    fn disk(n: usize, radius: f64, cx: f64, cy: f64) -> Image {
        let c = center(n);
        // 4x4 supersampled coverage
        Image::from_fn(n, |r, k| {
            let mut hits = 0;
            for a in 0..4 {
                for b in 0..4 {
                    let y = r as f64 + (a as f64 + 0.5) / 4.0 - 0.5 - c - cy;
                    let x = k as f64 + (b as f64 + 0.5) / 4.0 - 0.5 - c - cx;
                    if x * x + y * y <= radius * radius {
                        hits += 1;
                    }
                }
            }
            hits as f64 / 16.0
        })
    }

    fn rel_spread(values: &[f64]) -> f64 {
        let max = values.iter().copied().fold(f64::MIN, f64::max);
        let min = values.iter().copied().fold(f64::MAX, f64::min);
        (max - min) / max.abs()
    }

    /// Radially symmetric disk with a raised-cosine rim, so the pixel grid
    /// does not break the rotational symmetry.
    fn smooth_disk(n: usize, radius: f64, rim: f64) -> Image {
        let c = center(n);
        Image::from_fn(n, |r, k| {
            let d = ((r as f64 - c).powi(2) + (k as f64 - c).powi(2)).sqrt();
            if d <= radius {
                1.0
            } else if d >= radius + rim {
                0.0
            } else {
                0.5 * (1.0 + (std::f64::consts::PI * (d - radius) / rim).cos())
            }
        })
    }

    #[test]
    fn centered_disk_rows_agree() {
        let p = radon(&smooth_disk(128, 38.4, 12.8), &uniform_angles(36)).unwrap();
        let base = p.row(0).to_vec();
        let peak = base.iter().copied().fold(0.0, f64::max);
        for i in 1..p.n_angles() {
            let diff = p
                .row(i)
                .iter()
                .zip(&base)
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            assert!(diff < 1e-3 * peak, "view {i}: {diff} vs peak {peak}");
        }
        let sums: Vec<f64> = (0..p.n_angles()).map(|i| p.row(i).iter().sum()).collect();
        assert!(rel_spread(&sums) < 1e-3, "{sums:?}");
    }

    #[test]
    fn row_sums_are_mass_consistent() {
        // sharp ellipse edges cost about 0.7/side in relative mass, so the
        // standard phantom is checked at a side where that is below 1e-3
        let y = phantom::shepp_logan(256);
        let p = radon(&y, &uniform_angles(36)).unwrap();
        let sums: Vec<f64> = (0..p.n_angles()).map(|i| p.row(i).iter().sum()).collect();
        assert!(rel_spread(&sums) < 1e-3, "{}", rel_spread(&sums));
        for i in 0..4 {
            let y = phantom::random_phantom(64, 5, i);
            let p = radon(&y, &uniform_angles(36)).unwrap();
            let sums: Vec<f64> = (0..p.n_angles()).map(|i| p.row(i).iter().sum()).collect();
            assert!(rel_spread(&sums) < 1e-3, "{}", rel_spread(&sums));
        }
    }

    #[test]
    fn radon_at_zero_degrees_is_column_sum() {
        let y = mask_to_circle(&phantom::random_phantom(32, 1, 0));
        let p = radon(&y, &[0.0]).unwrap();
        for k in 0..32 {
            let col: f64 = (0..32).map(|r| y[(r, k)]).sum();
            assert!((p.row(0)[k] - col).abs() < 1e-12);
        }
    }

    #[test]
    fn radon_is_additive() {
        let a = disk(48, 6.0, -10.0, 4.0);
        let b = disk(48, 5.0, 9.0, -8.0);
        let angles = uniform_angles(10);
        let pa = radon(&a, &angles).unwrap();
        let pb = radon(&b, &angles).unwrap();
        let pab = radon(&a.axpby(1.0, &b, 1.0), &angles).unwrap();
        for ((x, y), z) in pa.data.iter().zip(&pb.data).zip(&pab.data) {
            assert!((x + y - z).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_angles_rejected() {
        assert!(matches!(
            radon(&Image::zeros(8), &[]),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn fbp_needs_two_views() {
        let p = Sinogram::zeros(vec![0.0], 8);
        assert!(matches!(fbp(&p), Err(Error::Degenerate(_))));
    }

    #[test]
    fn fbp_of_zero_is_zero() {
        let p = Sinogram::zeros(uniform_angles(8), 16);
        assert_eq!(fbp(&p).unwrap(), Image::zeros(16));
    }

    #[test]
    fn fbp_recovers_disk_intensity() {
        let y = disk(64, 16.0, 0.0, 0.0);
        let x = fbp(&radon(&y, &uniform_angles(180)).unwrap()).unwrap();
        // interior value of a unit disk
        let mut acc = 0.0;
        for r in 28..36 {
            for k in 28..36 {
                acc += x[(r, k)];
            }
        }
        let mean = acc / 64.0;
        assert!((mean - 1.0).abs() < 0.02, "{mean}");
    }

    #[test]
    fn fbp_is_linear() {
        let y = phantom::random_phantom(32, 4, 2);
        let angles = uniform_angles(30);
        let p = radon(&y, &angles).unwrap();
        let a = fbp(&p).unwrap();
        let b = fbp(&p.scale(3.5)).unwrap();
        assert!(b.max_abs_diff(&a.scale(3.5)) < 1e-10 * b.max_abs().max(1.0));
        let rb = radon(&y.scale(3.5), &angles).unwrap();
        let c = fbp(&rb).unwrap();
        assert!(c.max_abs_diff(&a.scale(3.5)) < 1e-10 * c.max_abs().max(1.0));
    }

    #[test]
    fn backprojection_is_approximate_adjoint() {
        let angles = uniform_angles(45);
        for i in 0..3 {
            let x = phantom::random_phantom(48, 10, i);
            let p = radon(&phantom::random_phantom(48, 20, i), &angles).unwrap();
            let lhs = radon(&x, &angles).unwrap().dot(&p);
            let rhs = mask_to_circle(&x).dot(&backproject(&p));
            assert!((lhs - rhs).abs() < 1e-2 * lhs.abs(), "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn view_subsampling() {
        let p = Sinogram::zeros(uniform_angles(360), 4);
        assert_eq!(subsample_views(&p, 6).unwrap().n_angles(), 60);
        let y = phantom::shepp_logan(16);
        let q = radon(&y, &uniform_angles(12)).unwrap();
        assert_eq!(subsample_views(&q, 1).unwrap(), q);
        assert!(subsample_views(&q, 0).is_err());
    }

    #[test]
    fn zero_fill_projection_is_idempotent() {
        let y = phantom::shepp_logan(16);
        let angles = uniform_angles(12);
        let q = radon(&y, &angles).unwrap();
        let once = zero_fill_views(&subsample_views(&q, 3).unwrap(), &angles).unwrap();
        let twice = zero_fill_views(&subsample_views(&once, 3).unwrap(), &angles).unwrap();
        assert_eq!(once, twice);
        for i in 0..12 {
            if i % 3 == 0 {
                assert_eq!(once.row(i), q.row(i));
            } else {
                assert!(once.row(i).iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn zero_fill_rejects_foreign_angles() {
        let p = Sinogram::zeros(vec![1.234], 4);
        assert!(zero_fill_views(&p, &uniform_angles(10)).is_err());
    }

    #[test]
    fn sparse_views_degrade_and_scale_linearly() {
        let y = phantom::shepp_logan(64);
        let angles = uniform_angles(90);
        let (x1, yy) = synthesize_ct_pair(&y, &angles, 1).unwrap();
        let (x6, _) = synthesize_ct_pair(&y, &angles, 6).unwrap();
        let peak = yy.max();
        assert!(psnr(&x1, &yy, peak).unwrap() > psnr(&x6, &yy, peak).unwrap() + 3.0);
        let (x6s, _) = synthesize_ct_pair(&y.scale(2.0), &angles, 6).unwrap();
        assert!(x6s.max_abs_diff(&x6.scale(2.0)) < 1e-10);
    }

    #[test]
    fn meta_text_round_trip() {
        let m = SinogramMeta {
            n_angles: 180,
            n_det: 128,
            factor: 6,
        };
        assert_eq!(m.to_string(), "ct n_angles=180 n_det=128 factor=6");
        assert_eq!(m.to_string().parse::<SinogramMeta>().unwrap(), m);
    }
}
