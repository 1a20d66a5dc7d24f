//! Cartesian undersampled MRI.
//!
//! k-space rows are phase-encode lines. A [`SamplingMask`] keeps every
//! `factor`-th line plus a block of lines around DC; the aliased training
//! input is `Re F⁻¹ S* S F y`.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::image::Image;

/// Square complex grid: k-space samples or a complex-valued image.
#[derive(Debug, Clone, PartialEq)]
pub struct KSpace {
    side: usize,
    data: Vec<Complex64>,
}

impl KSpace {
    pub fn new(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if rows != cols {
            return Err(Error::dim(format!("k-space grid must be square, got {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::dim(format!(
                "{rows}x{cols} grid needs {} samples, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(KSpace { side: rows, data })
    }

    pub fn from_real(x: &Image) -> Self {
        KSpace {
            side: x.side(),
            data: x.as_slice().iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.data[r * self.side + c]
    }

    pub fn real_part(&self) -> Image {
        Image::from_vec(self.side, self.data.iter().map(|z| z.re).collect())
            .expect("square grid")
    }

    pub fn max_abs_imag(&self) -> f64 {
        self.data.iter().fold(0.0, |m, z| m.max(z.im.abs()))
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    /// `Σ a · conj(b)`.
    pub fn inner(&self, other: &KSpace) -> Complex64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b.conj())
            .sum()
    }
}

fn fft2_in_place(data: &mut [Complex64], side: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let fft = if inverse {
        planner.plan_fft_inverse(side)
    } else {
        planner.plan_fft_forward(side)
    };
    // rows
    fft.process(data);
    // columns through a transpose
    let mut t = vec![Complex64::new(0.0, 0.0); side * side];
    for r in 0..side {
        for c in 0..side {
            t[c * side + r] = data[r * side + c];
        }
    }
    fft.process(&mut t);
    let scale = 1.0 / side as f64;
    for r in 0..side {
        for c in 0..side {
            data[r * side + c] = t[c * side + r] * scale;
        }
    }
}

/// Unitary 2-D DFT of a real image.
pub fn dft2(x: &Image) -> KSpace {
    dft2_complex(&KSpace::from_real(x))
}

/// Unitary 2-D DFT of a complex grid.
pub fn dft2_complex(x: &KSpace) -> KSpace {
    let mut data = x.data.clone();
    fft2_in_place(&mut data, x.side, false);
    KSpace { side: x.side, data }
}

/// Unitary inverse 2-D DFT.
pub fn idft2(p: &KSpace) -> KSpace {
    let mut data = p.data.clone();
    fft2_in_place(&mut data, p.side, true);
    KSpace { side: p.side, data }
}

/// Set of kept phase-encode rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplingMask {
    pub side: usize,
    pub factor: usize,
    pub n_low: usize,
    kept_lines: Vec<usize>,
}

impl SamplingMask {
    pub fn kept_lines(&self) -> &[usize] {
        &self.kept_lines
    }

    pub fn contains(&self, line: usize) -> bool {
        self.kept_lines.binary_search(&line).is_ok()
    }

    /// True if `k ↦ -k mod d` maps the kept set to itself, in which case
    /// the real-part aliasing operator is an orthogonal projection.
    pub fn is_conjugate_symmetric(&self) -> bool {
        self.kept_lines
            .iter()
            .all(|&k| self.contains((self.side - k) % self.side))
    }
}

impl fmt::Display for SamplingMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "mri factor={} low={} d={}", self.factor, self.n_low, self.side)
    }
}

impl FromStr for SamplingMask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split_whitespace();
        if parts.next() != Some("mri") {
            return Err(Error::format("mask", format!("expected 'mri ...', got '{s}'")));
        }
        let (mut factor, mut low, mut d) = (None, None, None);
        for p in parts {
            let (k, v) = p
                .split_once('=')
                .ok_or_else(|| Error::format("mask", format!("bad field '{p}'")))?;
            let v: usize = v
                .parse()
                .map_err(|_| Error::format("mask", format!("bad number in '{p}'")))?;
            match k {
                "factor" => factor = Some(v),
                "low" => low = Some(v),
                "d" => d = Some(v),
                _ => return Err(Error::format("mask", format!("unknown field '{k}'"))),
            }
        }
        match (factor, low, d) {
            (Some(f), Some(l), Some(d)) => make_mask(d, f, l),
            _ => Err(Error::format("mask", "missing factor, low or d")),
        }
    }
}

/// Raw (unshifted) row index of the line at centered position `c`, where
/// the centered spectrum puts DC at `d/2`.
fn centered_to_raw(c: usize, d: usize) -> usize {
    (c + d - d / 2) % d
}

/// Uniform lines `{0, factor, 2·factor, …}` plus the `n_low` lines nearest
/// DC in centered order. Ties in distance go to the lower centered index,
/// so an even `n_low` takes one more line below DC than above.
pub fn make_mask(d: usize, factor: usize, n_low: usize) -> Result<SamplingMask> {
    if d == 0 {
        return Err(Error::config("mask side must be positive"));
    }
    if factor < 1 {
        return Err(Error::config("sampling factor must be at least 1"));
    }
    if n_low > d {
        return Err(Error::config(format!(
            "cannot keep {n_low} low-frequency lines out of {d}"
        )));
    }
    let mut kept: BTreeSet<usize> = (0..d).step_by(factor).collect();
    let dc = d / 2;
    let mut centered: Vec<usize> = (0..d).collect();
    centered.sort_by_key(|&c| (c.abs_diff(dc), c));
    kept.extend(centered.into_iter().take(n_low).map(|c| centered_to_raw(c, d)));
    Ok(SamplingMask {
        side: d,
        factor,
        n_low,
        kept_lines: kept.into_iter().collect(),
    })
}

/// Measured rows only: `S P`.
#[derive(Debug, Clone, PartialEq)]
pub struct UndersampledKSpace {
    pub side: usize,
    pub lines: Vec<usize>,
    /// `lines.len() × side`, row-major.
    pub data: Vec<Complex64>,
}

impl UndersampledKSpace {
    pub fn row_count(&self) -> usize {
        self.lines.len()
    }

    pub fn inner(&self, other: &UndersampledKSpace) -> Complex64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b.conj())
            .sum()
    }
}

pub fn subsample(p: &KSpace, m: &SamplingMask) -> Result<UndersampledKSpace> {
    if p.side != m.side {
        return Err(Error::dim(format!(
            "k-space side {} does not match mask side {}",
            p.side, m.side
        )));
    }
    let d = p.side;
    let mut data = Vec::with_capacity(m.kept_lines.len() * d);
    for &r in &m.kept_lines {
        data.extend_from_slice(&p.data[r * d..(r + 1) * d]);
    }
    Ok(UndersampledKSpace {
        side: d,
        lines: m.kept_lines.clone(),
        data,
    })
}

/// `S* P♯`: measured rows back in place, zeros elsewhere.
pub fn zero_fill_adjoint(p: &UndersampledKSpace, m: &SamplingMask) -> Result<KSpace> {
    if p.side != m.side || p.lines != m.kept_lines {
        return Err(Error::dim(
            "undersampled data does not match the sampling mask".to_string(),
        ));
    }
    let d = p.side;
    let mut data = vec![Complex64::new(0.0, 0.0); d * d];
    for (k, &r) in p.lines.iter().enumerate() {
        data[r * d..(r + 1) * d].copy_from_slice(&p.data[k * d..(k + 1) * d]);
    }
    Ok(KSpace { side: d, data })
}

/// `F⁻¹ S* S F y` before taking the real part.
pub fn alias_complex(y: &Image, m: &SamplingMask) -> Result<KSpace> {
    let p = dft2(y);
    let under = subsample(&p, m)?;
    Ok(idft2(&zero_fill_adjoint(&under, m)?))
}

/// Returns `(x, y)` with `x = Re F⁻¹ S* S F y`.
pub fn synthesize_mri_pair(y: &Image, m: &SamplingMask) -> Result<(Image, Image)> {
    if y.side() != m.side {
        return Err(Error::dim(format!(
            "image side {} does not match mask side {}",
            y.side(),
            m.side
        )));
    }
    let x = alias_complex(y, m)?.real_part();
    Ok((x, y.clone()))
}
