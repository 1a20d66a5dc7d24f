//! Multi-level framelet packet decomposition.
//!
//! One analysis level filters with every 2-D filter of the bank (flipped,
//! circular boundary) and keeps even-indexed samples along both axes. Deeper
//! levels re-analyse every subband, so level `k` yields `(r+1)^k` subbands of
//! side `d / 2^k`. Subbands are ordered lexicographically in
//! `(α_1, …, α_k)` where `α_1` indexes the filter applied first.
//!
//! For a tight-frame bank the synthesis ([`reconstruct`]) is the exact
//! adjoint and inverse of [`decompose`].

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::filterbank::{BankName, Filter1D, Filter2D, FilterBank};
use crate::image::Image;

/// Tag written into meta headers for the subband order used here.
pub const ORDERING_TAG: &str = "lex-first-applied-major";

#[derive(Debug, Clone, PartialEq)]
pub struct SubbandStack {
    pub bank: BankName,
    pub level: usize,
    /// Side of the original image.
    pub side: usize,
    pub subbands: Vec<Image>,
}

impl SubbandStack {
    pub fn subband_side(&self) -> usize {
        self.side >> self.level
    }

    pub fn meta(&self) -> StackMeta {
        StackMeta {
            bank: self.bank,
            level: self.level,
            side: self.side,
        }
    }

    /// Sum of squared coefficients over every subband.
    pub fn energy(&self) -> f64 {
        self.subbands.iter().map(Image::norm_sq).sum()
    }

    pub fn dot(&self, other: &SubbandStack) -> f64 {
        self.subbands
            .iter()
            .zip(&other.subbands)
            .map(|(a, b)| a.dot(b))
            .sum()
    }

    /// All-zero stack with the given layout.
    pub fn zeros(bank: BankName, level: usize, side: usize) -> Self {
        let count = bank.filter_count().pow(level as u32);
        SubbandStack {
            bank,
            level,
            side,
            subbands: vec![Image::zeros(side >> level); count],
        }
    }
}

/// Layout information needed to turn a tensor back into a stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StackMeta {
    pub bank: BankName,
    pub level: usize,
    pub side: usize,
}

impl StackMeta {
    pub fn channels(&self) -> usize {
        self.bank.filter_count().pow(self.level as u32)
    }

    pub fn subband_side(&self) -> usize {
        self.side >> self.level
    }
}

impl fmt::Display for StackMeta {
    /// Four-line text header.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "bank={}", self.bank)?;
        writeln!(f, "level={}", self.level)?;
        writeln!(f, "side={}", self.side)?;
        writeln!(f, "ordering={ORDERING_TAG}")
    }
}

impl FromStr for StackMeta {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut bank = None;
        let mut level = None;
        let mut side = None;
        let mut ordering = None;
        for line in s.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::format("stack meta", format!("bad line '{line}'")))?;
            let bad = |_| Error::format("stack meta", format!("bad value in '{line}'"));
            match k.trim() {
                "bank" => bank = Some(v.trim().parse::<BankName>()?),
                "level" => level = Some(v.trim().parse::<usize>().map_err(bad)?),
                "side" => side = Some(v.trim().parse::<usize>().map_err(bad)?),
                "ordering" => ordering = Some(v.trim().to_string()),
                other => {
                    return Err(Error::format("stack meta", format!("unknown key '{other}'")))
                }
            }
        }
        match ordering.as_deref() {
            Some(ORDERING_TAG) => {}
            other => {
                return Err(Error::format(
                    "stack meta",
                    format!("unsupported ordering {other:?}"),
                ))
            }
        }
        match (bank, level, side) {
            (Some(bank), Some(level), Some(side)) => Ok(StackMeta { bank, level, side }),
            _ => Err(Error::format("stack meta", "missing bank, level or side")),
        }
    }
}

/// Dense channels × side × side tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3D {
    pub dims: [usize; 3],
    pub data: Vec<f64>,
}

fn check_divisible(side: usize, level: usize) -> Result<()> {
    if level == 0 {
        return Err(Error::dim("decomposition level must be at least 1"));
    }
    let block = 1usize.checked_shl(level as u32).unwrap_or(0);
    if block == 0 || side == 0 || side % block != 0 {
        return Err(Error::dim(format!(
            "image side d={side} is not divisible by 2^k with k={level}"
        )));
    }
    Ok(())
}

/// `↓(x ⊛ f(-·))` along one axis of a row-major `rows × cols` buffer.
fn analyze_axis(
    src: &[f64],
    rows: usize,
    cols: usize,
    f: &Filter1D,
    along_rows: bool,
) -> Vec<f64> {
    let o = f.origin as isize;
    if along_rows {
        // output rows/2 × cols
        let n = rows as isize;
        let mut out = vec![0.0; rows / 2 * cols];
        for i in 0..rows / 2 {
            let dst = &mut out[i * cols..(i + 1) * cols];
            for (m, &t) in f.taps.iter().enumerate() {
                let r = (2 * i as isize + m as isize - o).rem_euclid(n) as usize;
                let line = &src[r * cols..(r + 1) * cols];
                for (d, s) in dst.iter_mut().zip(line) {
                    *d += t * s;
                }
            }
        }
        out
    } else {
        let n = cols as isize;
        let half = cols / 2;
        let mut out = vec![0.0; rows * half];
        for r in 0..rows {
            let line = &src[r * cols..(r + 1) * cols];
            let dst = &mut out[r * half..(r + 1) * half];
            for (j, d) in dst.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (m, &t) in f.taps.iter().enumerate() {
                    let c = (2 * j as isize + m as isize - o).rem_euclid(n) as usize;
                    acc += t * line[c];
                }
                *d = acc;
            }
        }
        out
    }
}

/// Adjoint of [`analyze_axis`]: zero insertion followed by convolution with
/// the unflipped filter. `rows`/`cols` describe the full-size output.
fn synthesize_axis(
    coeffs: &[f64],
    rows: usize,
    cols: usize,
    f: &Filter1D,
    along_rows: bool,
    out: &mut [f64],
) {
    let o = f.origin as isize;
    if along_rows {
        let n = rows as isize;
        for i in 0..rows / 2 {
            let line = &coeffs[i * cols..(i + 1) * cols];
            for (m, &t) in f.taps.iter().enumerate() {
                let r = (2 * i as isize + m as isize - o).rem_euclid(n) as usize;
                let dst = &mut out[r * cols..(r + 1) * cols];
                for (d, s) in dst.iter_mut().zip(line) {
                    *d += t * s;
                }
            }
        }
    } else {
        let n = cols as isize;
        let half = cols / 2;
        for r in 0..rows {
            let line = &coeffs[r * half..(r + 1) * half];
            let dst = &mut out[r * cols..(r + 1) * cols];
            for (j, &v) in line.iter().enumerate() {
                for (m, &t) in f.taps.iter().enumerate() {
                    let c = (2 * j as isize + m as isize - o).rem_euclid(n) as usize;
                    dst[c] += t * v;
                }
            }
        }
    }
}

fn analyze_one(x: &Image, f: &Filter2D) -> Image {
    let d = x.side();
    let t = analyze_axis(x.as_slice(), d, d, &f.cols, false);
    let c = analyze_axis(&t, d, d / 2, &f.rows, true);
    Image::from_vec(d / 2, c).expect("analysis output has side d/2")
}

/// One analysis level: `W^(1) x` as `r + 1` images of side `d/2`.
pub fn analyze_level(x: &Image, bank: &FilterBank) -> Vec<Image> {
    bank.filters_2d()
        .par_iter()
        .map(|f| analyze_one(x, f))
        .collect()
}

/// Adjoint of [`analyze_level`].
pub fn synthesize_level(subbands: &[Image], bank: &FilterBank) -> Image {
    let half = subbands[0].side();
    let d = half * 2;
    let mut out = vec![0.0; d * d];
    let mut tmp = vec![0.0; d * half];
    for (c, f) in subbands.iter().zip(bank.filters_2d()) {
        tmp.iter_mut().for_each(|v| *v = 0.0);
        synthesize_axis(c.as_slice(), d, half, &f.rows, true, &mut tmp);
        synthesize_axis(&tmp, d, d, &f.cols, false, &mut out);
    }
    Image::from_vec(d, out).expect("synthesis output has side d")
}

/// `W^(k) x`.
pub fn decompose(x: &Image, bank: &FilterBank, level: usize) -> Result<SubbandStack> {
    check_divisible(x.side(), level)?;
    let mut current = vec![x.clone()];
    for _ in 0..level {
        // each parent is expanded in place, preserving lexicographic order
        current = current
            .par_iter()
            .flat_map_iter(|s| analyze_level(s, bank))
            .collect();
    }
    Ok(SubbandStack {
        bank: bank.name(),
        level,
        side: x.side(),
        subbands: current,
    })
}

/// Inverse (and adjoint) of [`decompose`].
pub fn reconstruct(stack: &SubbandStack, bank: &FilterBank) -> Result<Image> {
    if stack.bank != bank.name() {
        return Err(Error::Consistency(format!(
            "stack was built with bank {} but reconstruction uses {}",
            stack.bank,
            bank.name()
        )));
    }
    check_divisible(stack.side, stack.level)?;
    let n = bank.len();
    let expected = n.pow(stack.level as u32);
    if stack.subbands.len() != expected {
        return Err(Error::Consistency(format!(
            "expected {expected} subbands for level {} with {n} filters, found {}",
            stack.level,
            stack.subbands.len()
        )));
    }
    let sub_side = stack.subband_side();
    if let Some(bad) = stack.subbands.iter().find(|s| s.side() != sub_side) {
        return Err(Error::Consistency(format!(
            "subband of side {} in a stack expecting side {sub_side}",
            bad.side()
        )));
    }
    let mut current = stack.subbands.clone();
    for _ in 0..stack.level {
        current = current
            .par_chunks(n)
            .map(|group| synthesize_level(group, bank))
            .collect();
    }
    Ok(current.pop().expect("one image remains"))
}

/// Packs the subbands as channels of a dense tensor.
pub fn stack_to_tensor(stack: &SubbandStack) -> Tensor3D {
    let s = stack.subband_side();
    let mut data = Vec::with_capacity(stack.subbands.len() * s * s);
    for b in &stack.subbands {
        data.extend_from_slice(b.as_slice());
    }
    Tensor3D {
        dims: [stack.subbands.len(), s, s],
        data,
    }
}

pub fn tensor_to_stack(t: &Tensor3D, meta: &StackMeta) -> Result<SubbandStack> {
    let [c, h, w] = t.dims;
    if c != meta.channels() {
        return Err(Error::Consistency(format!(
            "tensor has {c} channels but {} level {} needs {}",
            meta.bank,
            meta.level,
            meta.channels()
        )));
    }
    if h != w || h != meta.subband_side() {
        return Err(Error::Consistency(format!(
            "tensor spatial shape {h}x{w} does not match subband side {}",
            meta.subband_side()
        )));
    }
    if t.data.len() != c * h * w {
        return Err(Error::dim("tensor payload does not match its dims"));
    }
    let subbands = t
        .data
        .chunks_exact(h * w)
        .map(|chunk| Image::from_vec(h, chunk.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    Ok(SubbandStack {
        bank: meta.bank,
        level: meta.level,
        side: meta.side,
        subbands,
    })
}
