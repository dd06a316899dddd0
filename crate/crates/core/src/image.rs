use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::geometry::Rgb;

/// Row-major linear RGB image; row 0 is the top row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<Rgb>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<Rgb>) -> Result<Self> {
        ensure!(
            data.len() == width * height,
            InvalidArgument,
            "image data has {} pixels, expected {}x{}",
            data.len(),
            width,
            height
        );
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: Rgb) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Rgb {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: Rgb) {
        self.data[row * self.width + col] = v;
    }

    pub fn same_dims(&self, other: &Self) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn scaled(&self, s: f64) -> Self {
        let data = self.data.iter().map(|p| p.map(|v| v * s)).collect();
        Self { data, ..*self }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        let data = self.data.iter().map(|p| p.map(&f)).collect();
        Self { data, ..*self }
    }

    /// One channel as a row-major plane.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.data.iter().map(|p| p[c]).collect()
    }
}

/// 8-bit RGB image.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LdrImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[u8; 3]>,
}

impl LdrImage {
    /// Values divided by 255, for the [0, 1] metrics.
    pub fn to_unit(&self) -> RgbImage {
        RgbImage {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .map(|p| p.map(|b| f64::from(b) / 255.0))
                .collect(),
        }
    }
}
