//! Tight-frame filter banks and periodic 2-D convolution.
//!
//! Every bank is built from a handful of 1-D filters; the 2-D bank is the set
//! of all outer products, ordered row-filter major. Taps are stored with the
//! decimated normalization (low-pass taps sum to `sqrt(2)`), so the analysis
//! operator of [`crate::framelet`] followed by its adjoint is the identity.

use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::image::Image;

/// Names of the shipped banks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BankName {
    Haar,
    Db4,
    Pl,
}

impl BankName {
    pub const ALL: [BankName; 3] = [BankName::Haar, BankName::Db4, BankName::Pl];

    pub fn as_str(self) -> &'static str {
        match self {
            BankName::Haar => "haar",
            BankName::Db4 => "db4",
            BankName::Pl => "pl",
        }
    }

    /// Number of 2-D filters, `r + 1`.
    pub fn filter_count(self) -> usize {
        match self {
            BankName::Haar | BankName::Db4 => 4,
            BankName::Pl => 9,
        }
    }
}

impl fmt::Display for BankName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BankName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "haar" => Ok(BankName::Haar),
            "db4" => Ok(BankName::Db4),
            "pl" => Ok(BankName::Pl),
            other => Err(Error::config(format!(
                "unknown filter bank '{other}' (valid: haar, db4, pl)"
            ))),
        }
    }
}

/// One-dimensional filter. `origin` is the tap aligned with the output sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Filter1D {
    pub taps: Vec<f64>,
    pub origin: usize,
}

impl Filter1D {
    pub fn new(taps: Vec<f64>, origin: usize) -> Result<Self> {
        if taps.is_empty() {
            return Err(Error::config("filter needs at least one tap"));
        }
        if taps.iter().any(|t| !t.is_finite()) {
            return Err(Error::config("filter taps must be finite"));
        }
        if origin >= taps.len() {
            return Err(Error::config(format!(
                "origin {origin} outside filter of length {}",
                taps.len()
            )));
        }
        Ok(Filter1D { taps, origin })
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.taps.iter().sum()
    }
}

/// Separable 2-D filter `rows ⊗ cols`; `rows` acts along axis 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Filter2D {
    pub rows: Filter1D,
    pub cols: Filter1D,
}

impl Filter2D {
    pub fn new(rows: Filter1D, cols: Filter1D) -> Self {
        Filter2D { rows, cols }
    }

    /// A 1×1 delta.
    pub fn identity() -> Self {
        let d = Filter1D {
            taps: vec![1.0],
            origin: 0,
        };
        Filter2D::new(d.clone(), d)
    }

    pub fn height(&self) -> usize {
        self.rows.len()
    }

    pub fn width(&self) -> usize {
        self.cols.len()
    }

    #[inline]
    pub fn tap(&self, m: usize, n: usize) -> f64 {
        self.rows.taps[m] * self.cols.taps[n]
    }

    /// Dense tap grid, row-major.
    pub fn grid(&self) -> Vec<Vec<f64>> {
        (0..self.height())
            .map(|m| (0..self.width()).map(|n| self.tap(m, n)).collect())
            .collect()
    }

    /// Discrete-time Fourier transform at `(xi0, xi1)` with the
    /// `2^{-1}` normalization that makes the low-pass equal 1 at DC.
    pub fn dtft(&self, xi0: f64, xi1: f64) -> Complex64 {
        dtft_1d(&self.rows, xi0) * dtft_1d(&self.cols, xi1) * 0.5
    }
}

fn dtft_1d(f: &Filter1D, xi: f64) -> Complex64 {
    f.taps
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let p = (k as f64 - f.origin as f64) * xi;
            Complex64::new(t * p.cos(), -t * p.sin())
        })
        .sum()
}

/// A named bank of `r + 1` separable 2-D filters.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    name: BankName,
    filters_1d: Vec<Filter1D>,
    filters_2d: Vec<Filter2D>,
}

impl FilterBank {
    /// Builds the tensor-product bank. `filters_1d[0]` must be the low-pass.
    pub fn from_1d(name: BankName, filters_1d: Vec<Filter1D>) -> Self {
        let mut filters_2d = Vec::with_capacity(filters_1d.len() * filters_1d.len());
        for a in &filters_1d {
            for b in &filters_1d {
                filters_2d.push(Filter2D::new(a.clone(), b.clone()));
            }
        }
        FilterBank {
            name,
            filters_1d,
            filters_2d,
        }
    }

    /// Bank with an explicit list of 2-D filters (used to construct
    /// deliberately broken banks in checks).
    pub fn from_2d(name: BankName, filters_1d: Vec<Filter1D>, filters_2d: Vec<Filter2D>) -> Self {
        FilterBank {
            name,
            filters_1d,
            filters_2d,
        }
    }

    pub fn name(&self) -> BankName {
        self.name
    }

    pub fn filters_1d(&self) -> &[Filter1D] {
        &self.filters_1d
    }

    pub fn filters_2d(&self) -> &[Filter2D] {
        &self.filters_2d
    }

    pub fn filters_2d_mut(&mut self) -> &mut Vec<Filter2D> {
        &mut self.filters_2d
    }

    /// `r + 1`.
    pub fn len(&self) -> usize {
        self.filters_2d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filters_2d.is_empty()
    }
}

fn haar_1d() -> Vec<Filter1D> {
    vec![
        Filter1D {
            taps: vec![FRAC_1_SQRT_2, FRAC_1_SQRT_2],
            origin: 0,
        },
        Filter1D {
            taps: vec![FRAC_1_SQRT_2, -FRAC_1_SQRT_2],
            origin: 0,
        },
    ]
}

fn db4_1d() -> Vec<Filter1D> {
    let s3 = 3f64.sqrt();
    let norm = 4.0 * SQRT_2;
    let low = vec![
        (1.0 + s3) / norm,
        (3.0 + s3) / norm,
        (3.0 - s3) / norm,
        (1.0 - s3) / norm,
    ];
    // quadrature mirror: g[k] = (-1)^k h[3 - k]
    let high = (0..4)
        .map(|k| if k % 2 == 0 { low[3 - k] } else { -low[3 - k] })
        .collect();
    vec![
        Filter1D {
            taps: low,
            origin: 1,
        },
        Filter1D {
            taps: high,
            origin: 1,
        },
    ]
}

fn pl_1d() -> Vec<Filter1D> {
    // [1/4, 1/2, 1/4], [√2/4, 0, -√2/4], [-1/4, 1/2, -1/4], each scaled by √2
    let raw = [
        [0.25, 0.5, 0.25],
        [SQRT_2 / 4.0, 0.0, -SQRT_2 / 4.0],
        [-0.25, 0.5, -0.25],
    ];
    raw.iter()
        .map(|t| Filter1D {
            taps: t.iter().map(|v| v * SQRT_2).collect(),
            origin: 1,
        })
        .collect()
}

/// Builds one of the shipped banks and checks it against the UEP.
pub fn build_bank(name: BankName) -> Result<FilterBank> {
    let filters = match name {
        BankName::Haar => haar_1d(),
        BankName::Db4 => db4_1d(),
        BankName::Pl => pl_1d(),
    };
    let bank = FilterBank::from_1d(name, filters);
    let report = verify_uep(&bank, 32)?;
    if !report.pass {
        return Err(Error::Consistency(format!(
            "bank {name} fails the unitary extension principle: {report:?}"
        )));
    }
    Ok(bank)
}

/// Parses and builds in one step.
pub fn bank_by_name(name: &str) -> Result<FilterBank> {
    build_bank(name.parse()?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UepReport {
    pub max_identity_error: f64,
    pub max_shift_error: f64,
    pub pass: bool,
}

pub const UEP_TOLERANCE: f64 = 1e-10;

/// Checks `Σ|q̂_α(ξ)|² = 1` and `Σ q̂_α(ξ) conj(q̂_α(ξ + ν)) = 0` for
/// `ν ∈ {0, π}² \ {0}` on a `grid_n × grid_n` grid over `[0, π]²`.
pub fn verify_uep(bank: &FilterBank, grid_n: usize) -> Result<UepReport> {
    if grid_n < 8 {
        return Err(Error::config(format!("grid_n must be at least 8, got {grid_n}")));
    }
    let shifts = [(PI, 0.0), (0.0, PI), (PI, PI)];
    let step = PI / (grid_n - 1) as f64;
    let mut max_identity_error: f64 = 0.0;
    let mut max_shift_error: f64 = 0.0;
    for i in 0..grid_n {
        let xi0 = i as f64 * step;
        for j in 0..grid_n {
            let xi1 = j as f64 * step;
            let mut energy = 0.0;
            let mut cross = [Complex64::new(0.0, 0.0); 3];
            for f in bank.filters_2d() {
                let q = f.dtft(xi0, xi1);
                energy += q.norm_sqr();
                for (acc, &(s0, s1)) in cross.iter_mut().zip(&shifts) {
                    *acc += q * f.dtft(xi0 + s0, xi1 + s1).conj();
                }
            }
            max_identity_error = max_identity_error.max((energy - 1.0).abs());
            for c in cross {
                max_shift_error = max_shift_error.max(c.norm());
            }
        }
    }
    Ok(UepReport {
        max_identity_error,
        max_shift_error,
        pass: max_identity_error < UEP_TOLERANCE && max_shift_error < UEP_TOLERANCE,
    })
}

/// Circular 2-D convolution at stride 1.
///
/// With `flip = true` this applies `q(-·)`, i.e.
/// `y[i, j] = Σ f[m, n] x[i + m - o_r, j + n - o_c]`; with `flip = false`
/// it is the plain convolution `y[i, j] = Σ f[m, n] x[i - m + o_r, j - n + o_c]`.
/// The two are adjoint to each other.
pub fn conv2d_periodic(x: &Image, f: &Filter2D, flip: bool) -> Result<Image> {
    let d = x.side();
    if f.height() > d || f.width() > d {
        return Err(Error::dim(format!(
            "filter {}x{} larger than image of side {d}",
            f.height(),
            f.width()
        )));
    }
    let sign: isize = if flip { 1 } else { -1 };
    let (or, oc) = (f.rows.origin as isize, f.cols.origin as isize);
    let mut out = Image::zeros(d);
    for i in 0..d {
        for j in 0..d {
            let mut acc = 0.0;
            for m in 0..f.height() {
                let r = i as isize + sign * (m as isize - or);
                for n in 0..f.width() {
                    let c = j as isize + sign * (n as isize - oc);
                    acc += f.tap(m, n) * x.get_wrapped(r, c);
                }
            }
            out[(i, j)] = acc;
        }
    }
    Ok(out)
}

/// Plain-text matrix dump of every 2-D filter in the bank.
pub fn format_bank(bank: &FilterBank) -> String {
    use std::fmt::Write;
    let mut s = String::new();
    let n1 = bank.filters_1d().len().max(1);
    for (alpha, f) in bank.filters_2d().iter().enumerate() {
        let _ = writeln!(
            s,
            "# {} filter {alpha} (row {}, col {}) {}x{} origin=({},{})",
            bank.name(),
            alpha / n1,
            alpha % n1,
            f.height(),
            f.width(),
            f.rows.origin,
            f.cols.origin
        );
        for row in f.grid() {
            let line: Vec<String> = row.iter().map(|v| format!("{v:>12.8}")).collect();
            let _ = writeln!(s, "{}", line.join(" "));
        }
        s.push('\n');
    }
    s
}
