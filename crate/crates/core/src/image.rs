use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Square real-valued pixel grid stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    side: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn zeros(side: usize) -> Self {
        Image {
            side,
            data: vec![0.0; side * side],
        }
    }

    pub fn constant(side: usize, value: f64) -> Self {
        Image {
            side,
            data: vec![value; side * side],
        }
    }

    pub fn from_vec(side: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != side * side {
            return Err(Error::dim(format!(
                "image of side {side} needs {} values, got {}",
                side * side,
                data.len()
            )));
        }
        Ok(Image { side, data })
    }

    pub fn from_fn(side: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(side * side);
        for r in 0..side {
            for c in 0..side {
                data.push(f(r, c));
            }
        }
        Image { side, data }
    }

    #[inline]
    pub fn side(&self) -> usize {
        self.side
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Periodic access: indices are taken modulo the side.
    #[inline]
    pub fn get_wrapped(&self, r: isize, c: isize) -> f64 {
        let n = self.side as isize;
        let r = r.rem_euclid(n) as usize;
        let c = c.rem_euclid(n) as usize;
        self.data[r * self.side + c]
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Image {
        Image {
            side: self.side,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Image {
        self.map(|v| v * s)
    }

    /// `a * self + b * other`.
    pub fn axpby(&self, a: f64, other: &Image, b: f64) -> Image {
        assert_eq!(self.side, other.side);
        Image {
            side: self.side,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Image) {
        assert_eq!(self.side, other.side);
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += y;
        }
    }

    pub fn dot(&self, other: &Image) -> f64 {
        assert_eq!(self.side, other.side);
        self.data.iter().zip(&other.data).map(|(x, y)| x * y).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        assert_eq!(self.side, other.side);
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
    }

    /// Circular shift: output(r, c) = input(r - dr, c - dc).
    pub fn roll(&self, dr: isize, dc: isize) -> Image {
        Image::from_fn(self.side, |r, c| {
            self.get_wrapped(r as isize - dr, c as isize - dc)
        })
    }
}

impl Index<(usize, usize)> for Image {
    type Output = f64;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.side + c]
    }
}

impl IndexMut<(usize, usize)> for Image {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.side + c]
    }
}
