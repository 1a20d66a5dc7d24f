//! Full-reference image quality metrics.

use std::fmt;

use crate::error::{Error, Result};
use crate::image::Image;

fn same_shape(a: &Image, b: &Image) -> Result<()> {
    if a.side() != b.side() {
        return Err(Error::dim(format!(
            "cannot compare images of side {} and {}",
            a.side(),
            b.side()
        )));
    }
    Ok(())
}

/// Mean of squared differences.
pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    same_shape(a, b)?;
    let sum: f64 = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / a.len() as f64)
}

/// `10 log10(peak² / mse)`; identical images give `+∞`.
pub fn psnr(a: &Image, b: &Image, peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(Error::config(format!("PSNR peak must be positive, got {peak}")));
    }
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / m).log10())
}

pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable Gaussian filtering restricted to the valid region.
fn filter_valid(x: &[f64], n: usize, w: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let m = n - SSIM_WINDOW + 1;
    let mut tmp = vec![0.0; n * m];
    for r in 0..n {
        for c in 0..m {
            tmp[r * m + c] = (0..SSIM_WINDOW).map(|k| w[k] * x[r * n + c + k]).sum();
        }
    }
    let mut out = vec![0.0; m * m];
    for r in 0..m {
        for c in 0..m {
            out[r * m + c] = (0..SSIM_WINDOW).map(|k| w[k] * tmp[(r + k) * m + c]).sum();
        }
    }
    out
}

/// Mean structural similarity with an 11×11 Gaussian window (σ = 1.5),
/// `K1 = 0.01`, `K2 = 0.03`, evaluated on the valid region only.
pub fn ssim(a: &Image, b: &Image, peak: f64) -> Result<f64> {
    same_shape(a, b)?;
    let n = a.side();
    if n < SSIM_WINDOW {
        return Err(Error::dim(format!(
            "SSIM needs images of side at least {SSIM_WINDOW}, got {n}"
        )));
    }
    if !(peak > 0.0) {
        return Err(Error::config(format!("SSIM peak must be positive, got {peak}")));
    }
    let w = gaussian_window();
    let x = a.as_slice();
    let y = b.as_slice();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(p, q)| p * q).collect();

    let mu_x = filter_valid(x, n, &w);
    let mu_y = filter_valid(y, n, &w);
    let s_xx = filter_valid(&xx, n, &w);
    let s_yy = filter_valid(&yy, n, &w);
    let s_xy = filter_valid(&xy, n, &w);

    let c1 = (SSIM_K1 * peak).powi(2);
    let c2 = (SSIM_K2 * peak).powi(2);
    let total: f64 = (0..mu_x.len())
        .map(|i| {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let vx = s_xx[i] - mx * mx;
            let vy = s_yy[i] - my * my;
            let cov = s_xy[i] - mx * my;
            ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / mu_x.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub mse: f64,
    pub psnr: f64,
    pub ssim: f64,
}

impl MetricReport {
    /// Scores `pred` against `label` with `peak = max(label)`.
    pub fn against_label(pred: &Image, label: &Image) -> Result<Self> {
        let peak = label.max();
        Self::with_peak(pred, label, peak)
    }

    pub fn with_peak(pred: &Image, label: &Image, peak: f64) -> Result<Self> {
        Ok(MetricReport {
            mse: mse(pred, label)?,
            psnr: psnr(pred, label, peak)?,
            ssim: ssim(pred, label, peak)?,
        })
    }

    pub fn mean(reports: &[MetricReport]) -> MetricReport {
        let n = reports.len().max(1) as f64;
        MetricReport {
            mse: reports.iter().map(|r| r.mse).sum::<f64>() / n,
            psnr: reports.iter().map(|r| r.psnr).sum::<f64>() / n,
            ssim: reports.iter().map(|r| r.ssim).sum::<f64>() / n,
        }
    }
}

/// Formats a metric value for CSV; infinities become `inf`.
pub fn format_value(v: f64) -> String {
    if v.is_infinite() && v > 0.0 {
        "inf".to_string()
    } else {
        format!("{v:.9e}")
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "mse={} psnr={} ssim={}",
            format_value(self.mse),
            format_value(self.psnr),
            format_value(self.ssim)
        )
    }
}
