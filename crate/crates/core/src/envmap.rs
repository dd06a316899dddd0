//! Equirectangular environment maps and their sphere geometry.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec::Vec;
use core::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::geometry::{angles_to_direction, direction_to_angles, Rgb, Vec3, VIEW_DIR};
use crate::image::{LdrImage, RgbImage};
use crate::render::ReflectanceMap;

/// Default environment height; width is always twice the height.
pub const DEFAULT_ENV_HEIGHT: usize = 128;

/// Distant incident radiance on an equirectangular grid.
///
/// Pixel `(i, j)` has its center at colatitude `pi (i + 0.5) / H` and azimuth
/// `2 pi (j + 0.5) / W` (see [`crate::geometry`] for the axis convention).
/// Maps built with [`EnvironmentMap::new`] hold finite nonnegative radiance;
/// SH reconstructions go through [`EnvironmentMap::from_signed`] and may ring
/// below zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentMap {
    image: RgbImage,
}

impl EnvironmentMap {
    pub fn new(height: usize, width: usize, data: Vec<Rgb>) -> Result<Self> {
        let env = Self::from_signed(height, width, data)?;
        if let Some((idx, v)) = env
            .image
            .data
            .iter()
            .enumerate()
            .find(|(_, p)| p.iter().any(|v| *v < 0.0))
        {
            ensure!(false, Validation, "negative radiance {:?} at pixel {}", v, idx);
        }
        Ok(env)
    }

    /// Like [`EnvironmentMap::new`] but allows negative values.
    pub fn from_signed(height: usize, width: usize, data: Vec<Rgb>) -> Result<Self> {
        ensure!(height >= 1, InvalidArgument, "environment height must be >= 1");
        ensure!(
            width == 2 * height,
            InvalidArgument,
            "environment width {} must be twice the height {}",
            width,
            height
        );
        let image = RgbImage::new(width, height, data)?;
        if let Some(idx) = image.data.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
            ensure!(false, Validation, "non-finite radiance at pixel {}", idx);
        }
        Ok(Self { image })
    }

    pub fn constant(height: usize, value: Rgb) -> Self {
        Self {
            image: RgbImage::filled(2 * height, height, value),
        }
    }

    /// Sample a function of direction at every pixel center.
    pub fn from_fn(height: usize, f: impl Fn(Vec3) -> Rgb) -> Self {
        let width = 2 * height;
        let mut data = Vec::with_capacity(width * height);
        for i in 0..height {
            for j in 0..width {
                data.push(f(pixel_direction(height, width, i, j)));
            }
        }
        Self {
            image: RgbImage { width, height, data },
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.image.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.image.width
    }

    #[inline]
    pub fn data(&self) -> &[Rgb] {
        &self.image.data
    }

    pub fn image(&self) -> &RgbImage {
        &self.image
    }

    pub fn into_image(self) -> RgbImage {
        self.image
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Rgb {
        self.image.get(i, j)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            image: self.image.scaled(s),
        }
    }

    pub fn clamp_negative(&self) -> Self {
        Self {
            image: self.image.map(|v| v.max(0.0)),
        }
    }

    pub fn is_nonnegative(&self) -> bool {
        self.image.data.iter().all(|p| p.iter().all(|v| *v >= 0.0))
    }

    /// Center direction of every pixel, row-major.
    pub fn directions(&self) -> Vec<Vec3> {
        let (h, w) = (self.height(), self.width());
        (0..h * w).map(|k| pixel_direction(h, w, k / w, k % w)).collect()
    }

    /// Bilinear radiance along `dir`, wrapping in azimuth and clamping at the poles.
    pub fn lookup(&self, dir: Vec3) -> Rgb {
        let mut out = [0.0; 3];
        for (idx, w) in bilinear_taps(self.height(), self.width(), dir) {
            let p = self.image.data[idx];
            for c in 0..3 {
                out[c] += w * p[c];
            }
        }
        out
    }

    /// Box-filter by an integer factor, weighting each source pixel by its
    /// solid angle so sphere integrals are preserved.
    pub fn downsample(&self, factor: usize) -> Result<Self> {
        ensure!(factor >= 1, InvalidArgument, "downsample factor must be >= 1");
        ensure!(
            self.height() % factor == 0,
            InvalidArgument,
            "height {} not divisible by {}",
            self.height(),
            factor
        );
        if factor == 1 {
            return Ok(self.clone());
        }
        let grid = solid_angles(self.height(), self.width())?;
        let (h2, w2) = (self.height() / factor, self.width() / factor);
        let mut data = Vec::with_capacity(h2 * w2);
        for i2 in 0..h2 {
            for j2 in 0..w2 {
                let mut acc = [0.0; 3];
                let mut wsum = 0.0;
                for i in i2 * factor..(i2 + 1) * factor {
                    let w = grid.row_weight(i);
                    for j in j2 * factor..(j2 + 1) * factor {
                        let p = self.get(i, j);
                        for c in 0..3 {
                            acc[c] += w * p[c];
                        }
                        wsum += w;
                    }
                }
                data.push(acc.map(|v| v / wsum));
            }
        }
        Self::from_signed(h2, w2, data)
    }
}

/// Center direction of pixel `(i, j)` on an `h x w` equirectangular grid.
pub fn pixel_direction(h: usize, w: usize, i: usize, j: usize) -> Vec3 {
    let theta = PI * (i as f64 + 0.5) / h as f64;
    let phi = TAU * (j as f64 + 0.5) / w as f64;
    angles_to_direction(theta, phi)
}

/// The four bilinear taps `(pixel index, weight)` for a direction.
pub fn bilinear_taps(h: usize, w: usize, dir: Vec3) -> [(usize, f64); 4] {
    let (theta, phi) = direction_to_angles(dir);
    let x = phi / TAU * w as f64 - 0.5;
    let y = theta / PI * h as f64 - 0.5;
    let jf = x.floor();
    let fx = x - jf;
    let j0 = (jf as i64).rem_euclid(w as i64) as usize;
    let j1 = (j0 + 1) % w;
    let yf = y.floor();
    let fy = y - yf;
    let (i0, i1) = if yf < 0.0 {
        (0, 0)
    } else if yf as usize >= h - 1 {
        (h - 1, h - 1)
    } else {
        (yf as usize, yf as usize + 1)
    };
    [
        (i0 * w + j0, (1.0 - fx) * (1.0 - fy)),
        (i0 * w + j1, fx * (1.0 - fy)),
        (i1 * w + j0, (1.0 - fx) * fy),
        (i1 * w + j1, fx * fy),
    ]
}

/// Exact per-pixel solid angles of an equirectangular grid.
#[derive(Clone, Debug, PartialEq)]
pub struct SolidAngleGrid {
    pub height: usize,
    pub width: usize,
    row_weights: Vec<f64>,
}

impl SolidAngleGrid {
    /// Every pixel of row `i` subtends the same solid angle.
    #[inline]
    pub fn row_weight(&self, i: usize) -> f64 {
        self.row_weights[i]
    }

    #[inline]
    pub fn weight(&self, i: usize, _j: usize) -> f64 {
        self.row_weights[i]
    }

    /// Per-pixel weights, row-major.
    pub fn weights(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.height * self.width);
        for &w in &self.row_weights {
            out.extend(core::iter::repeat(w).take(self.width));
        }
        out
    }

    pub fn total(&self) -> f64 {
        self.row_weights.iter().map(|w| w * self.width as f64).sum()
    }
}

/// `(2 pi / W) (cos theta_top - cos theta_bottom)` for every row.
pub fn solid_angles(height: usize, width: usize) -> Result<SolidAngleGrid> {
    ensure!(
        height >= 1 && width >= 1,
        InvalidArgument,
        "solid-angle grid needs nonzero dimensions, got {}x{}",
        height,
        width
    );
    let dphi = TAU / width as f64;
    let row_weights = (0..height)
        .map(|i| {
            let top = PI * i as f64 / height as f64;
            let bottom = PI * (i + 1) as f64 / height as f64;
            dphi * (top.cos() - bottom.cos())
        })
        .collect();
    Ok(SolidAngleGrid {
        height,
        width,
        row_weights,
    })
}

/// Global exposure that maps the 99th percentile of all channel values to 1.
/// Falls back to 1 when that percentile is not positive.
pub fn exposure_99(env: &EnvironmentMap) -> f64 {
    image_exposure_99(env.image())
}

pub fn image_exposure_99(img: &RgbImage) -> f64 {
    let mut values: Vec<f64> = img.data.iter().flat_map(|p| p.iter().copied()).collect();
    if values.is_empty() {
        return 1.0;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    // nearest-rank percentile
    let rank = ((0.99 * values.len() as f64).ceil() as usize).clamp(1, values.len());
    let p99 = values[rank - 1];
    if p99 > 0.0 && p99.is_finite() {
        1.0 / p99
    } else {
        1.0
    }
}

/// Exposure to the 99th percentile, clamp to [0, 1], gamma 1/2.2, quantize.
pub fn tonemap_ldr(env: &EnvironmentMap) -> LdrImage {
    tonemap_with_exposure(env.image(), exposure_99(env))
}

pub fn tonemap_with_exposure(img: &RgbImage, exposure: f64) -> LdrImage {
    let data = img
        .data
        .iter()
        .map(|p| {
            p.map(|v| {
                let x = (v * exposure).clamp(0.0, 1.0).powf(1.0 / 2.2);
                (x * 255.0).round() as u8
            })
        })
        .collect();
    LdrImage {
        width: img.width,
        height: img.height,
        data,
    }
}

/// Direction a perfect mirror with normal `n` reflects toward the camera.
#[inline]
pub fn mirror_direction(n: Vec3) -> Vec3 {
    VIEW_DIR.reflect(n)
}

/// The mirror reflectance map: a warp of the environment onto the disk of
/// camera-facing normals.
pub fn mirror_warp(env: &EnvironmentMap, resolution: usize) -> Result<ReflectanceMap> {
    ensure!(resolution >= 2, InvalidArgument, "reflectance map resolution must be >= 2");
    let mut map = ReflectanceMap::full_disk(resolution);
    for cell in 0..resolution * resolution {
        if let Some(n) = map.normal(cell) {
            map.radiance[cell] = env.lookup(mirror_direction(n));
        }
    }
    Ok(map)
}
