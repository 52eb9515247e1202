//! Random crop, flip, PCA colour shift and rotation.

use nalgebra::{Matrix3, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::image::Image;
use crate::error::{Error, Result};

/// Maximum number of pixels sampled when estimating the colour covariance.
pub const PCA_PIXEL_BUDGET: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationParams {
    pub scale_width: usize,
    pub scale_height: usize,
    pub crop_width: usize,
    pub crop_height: usize,
    pub flip_probability: f64,
    pub max_rotation_degrees: f64,
    pub color_shift: bool,
}

impl Default for AugmentationParams {
    fn default() -> Self {
        AugmentationParams {
            scale_width: 128,
            scale_height: 76,
            crop_width: 120,
            crop_height: 68,
            flip_probability: 0.5,
            max_rotation_degrees: 15.0,
            color_shift: true,
        }
    }
}

impl AugmentationParams {
    /// Full-resolution geometry: 1024x604 scaled, 960x540 crops.
    pub fn full_resolution() -> Self {
        AugmentationParams {
            scale_width: 1024,
            scale_height: 604,
            crop_width: 960,
            crop_height: 540,
            ..Default::default()
        }
    }

    /// Square geometry for small synthetic frames.
    pub fn square(scale: usize, crop: usize) -> Self {
        AugmentationParams {
            scale_width: scale,
            scale_height: scale,
            crop_width: crop,
            crop_height: crop,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.crop_width == 0 || self.crop_height == 0 {
            return Err(Error::invalid("crop dimensions must be positive"));
        }
        if self.crop_width > self.scale_width || self.crop_height > self.scale_height {
            return Err(Error::invalid(format!(
                "crop {}x{} is larger than the scaled image {}x{}",
                self.crop_width, self.crop_height, self.scale_width, self.scale_height
            )));
        }
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return Err(Error::invalid("flip probability must be in [0, 1]"));
        }
        if !(self.max_rotation_degrees >= 0.0 && self.max_rotation_degrees.is_finite()) {
            return Err(Error::invalid("rotation range must be finite and non-negative"));
        }
        Ok(())
    }

    /// Largest crop offsets `(x, y)`; offsets are drawn from `0..=max`.
    pub fn offset_range(&self) -> Result<(usize, usize)> {
        self.validate()?;
        Ok((self.scale_width - self.crop_width, self.scale_height - self.crop_height))
    }

    /// Offsets of the central crop used for validation frames.
    pub fn center_offsets(&self) -> Result<(usize, usize)> {
        let (x, y) = self.offset_range()?;
        Ok((x / 2, y / 2))
    }
}

/// One set of random choices; applying it is deterministic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentDraw {
    pub offset_x: usize,
    pub offset_y: usize,
    pub flip: bool,
    pub alpha: [f64; 3],
    pub angle_degrees: f64,
}

impl AugmentDraw {
    pub fn identity() -> Self {
        AugmentDraw {
            offset_x: 0,
            offset_y: 0,
            flip: false,
            alpha: [0.0; 3],
            angle_degrees: 0.0,
        }
    }

    pub fn sample<R: Rng + ?Sized>(params: &AugmentationParams, rng: &mut R) -> Result<Self> {
        let (max_x, max_y) = params.offset_range()?;
        let offset_x = rng.random_range(0..=max_x);
        let offset_y = rng.random_range(0..=max_y);
        let flip = rng.random::<f64>() < params.flip_probability;
        let mut alpha = [0.0; 3];
        for a in &mut alpha {
            *a = StandardNormal.sample(rng);
        }
        if !params.color_shift {
            alpha = [0.0; 3];
        }
        let r = params.max_rotation_degrees;
        let angle_degrees = if r > 0.0 { rng.random_range(-r..=r) } else { 0.0 };
        Ok(AugmentDraw {
            offset_x,
            offset_y,
            flip,
            alpha,
            angle_degrees,
        })
    }
}

/// Principal components of the RGB pixel distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColorPca {
    pub eigenvalues: [f64; 3],
    /// `eigenvectors[k]` is the unit vector for `eigenvalues[k]`.
    pub eigenvectors: [[f64; 3]; 3],
}

impl ColorPca {
    pub fn none() -> Self {
        ColorPca {
            eigenvalues: [0.0; 3],
            eigenvectors: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    /// Fits on up to [`PCA_PIXEL_BUDGET`] pixels spread evenly over `images`.
    pub fn fit(images: &[Image]) -> Result<Self> {
        let total: usize = images.iter().map(|i| i.width * i.height).sum();
        if total == 0 {
            return Err(Error::invalid("cannot fit colour PCA on an empty image set"));
        }
        let step = total.div_ceil(PCA_PIXEL_BUDGET).max(1);
        let mut samples: Vec<[f64; 3]> = Vec::with_capacity(total / step + 1);
        let mut global = 0usize;
        for img in images {
            let n = img.width * img.height;
            let first = (step - global % step) % step;
            for i in (first..n).step_by(step) {
                samples.push([img.data[i], img.data[n + i], img.data[2 * n + i]]);
            }
            global += n;
        }
        let m = samples.len() as f64;
        let mut mean = [0.0; 3];
        for s in &samples {
            for c in 0..3 {
                mean[c] += s[c] / m;
            }
        }
        let mut cov = Matrix3::<f64>::zeros();
        for s in &samples {
            for i in 0..3 {
                for j in 0..3 {
                    cov[(i, j)] += (s[i] - mean[i]) * (s[j] - mean[j]) / m;
                }
            }
        }
        let eig = SymmetricEigen::new(cov);
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let mut eigenvalues = [0.0; 3];
        let mut eigenvectors = [[0.0; 3]; 3];
        for (k, &idx) in order.iter().enumerate() {
            eigenvalues[k] = eig.eigenvalues[idx].max(0.0);
            let col = eig.eigenvectors.column(idx);
            // sign convention: largest component positive
            let dominant = col.iter().fold(0.0f64, |a: f64, &v: &f64| if v.abs() > a.abs() { v } else { a });
            let sign = if dominant < 0.0 {
                -1.0
            } else {
                1.0
            };
            for c in 0..3 {
                eigenvectors[k][c] = sign * col[c];
            }
        }
        Ok(ColorPca {
            eigenvalues,
            eigenvectors,
        })
    }

    /// `sum_k alpha_k * lambda_k * e_k`
    pub fn shift(&self, alpha: [f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for k in 0..3 {
            for c in 0..3 {
                out[c] += alpha[k] * self.eigenvalues[k] * self.eigenvectors[k][c];
            }
        }
        out
    }
}

/// Scales `image` to the configured size and applies `draw`:
/// crop, then flip, then colour shift, then rotation about the centre.
pub fn apply(image: &Image, params: &AugmentationParams, pca: &ColorPca, draw: &AugmentDraw) -> Result<Image> {
    params.validate()?;
    let scaled = image.resize(params.scale_width, params.scale_height)?;
    apply_scaled(&scaled, params, pca, draw)
}

/// As [`apply`] for an image already at the scaled resolution.
pub fn apply_scaled(scaled: &Image, params: &AugmentationParams, pca: &ColorPca, draw: &AugmentDraw) -> Result<Image> {
    let (max_x, max_y) = params.offset_range()?;
    if scaled.width != params.scale_width || scaled.height != params.scale_height {
        return Err(Error::invalid(format!(
            "image is {}x{}, expected the scaled size {}x{}",
            scaled.width, scaled.height, params.scale_width, params.scale_height
        )));
    }
    if draw.offset_x > max_x || draw.offset_y > max_y {
        return Err(Error::invalid(format!(
            "crop offset ({}, {}) outside 0..={max_x} x 0..={max_y}",
            draw.offset_x, draw.offset_y
        )));
    }
    let mut out = scaled.crop(draw.offset_x, draw.offset_y, params.crop_width, params.crop_height)?;
    if draw.flip {
        out = out.flip_horizontal();
    }
    if draw.alpha != [0.0; 3] {
        out = out.shift_channels(pca.shift(draw.alpha));
    }
    Ok(out.rotate(draw.angle_degrees))
}

/// Deterministic evaluation view: scale and centre crop.
pub fn center_view(image: &Image, params: &AugmentationParams) -> Result<Image> {
    let (x, y) = params.center_offsets()?;
    image.resize(params.scale_width, params.scale_height)?.crop(x, y, params.crop_width, params.crop_height)
}

pub fn augment<R: Rng + ?Sized>(image: &Image, params: &AugmentationParams, pca: &ColorPca, rng: &mut R) -> Result<Image> {
    let draw = AugmentDraw::sample(params, rng)?;
    apply(image, params, pca, &draw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp(w: usize, h: usize) -> Image {
        Image::new(w, h, (0..3 * w * h).map(|i| (i % 97) as f64 / 97.0).collect()).unwrap()
    }

    #[test]
    fn full_resolution_offsets() {
        let p = AugmentationParams::full_resolution();
        assert_eq!(p.offset_range().unwrap(), (64, 64));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let draws: Vec<_> = (0..5000).map(|_| AugmentDraw::sample(&p, &mut rng).unwrap()).collect();
        assert_eq!(draws.iter().map(|d| d.offset_x).min(), Some(0));
        assert_eq!(draws.iter().map(|d| d.offset_x).max(), Some(64));
        assert_eq!(draws.iter().map(|d| d.offset_y).max(), Some(64));
        assert!(draws.iter().all(|d| d.angle_degrees.abs() <= 15.0));
        let flips = draws.iter().filter(|d| d.flip).count();
        assert!((2300..2700).contains(&flips));
    }

    #[test]
    fn identity_draw_is_scale_and_top_left_crop() {
        let p = AugmentationParams::square(20, 16);
        let img = ramp(24, 24);
        let out = apply(&img, &p, &ColorPca::none(), &AugmentDraw::identity()).unwrap();
        let expect = img.resize(20, 20).unwrap().crop(0, 0, 16, 16).unwrap();
        assert_eq!(out, expect);
    }

    #[test]
    fn shape_is_constant() {
        let p = AugmentationParams::square(20, 16);
        let img = ramp(30, 22);
        let pca = ColorPca::fit(&[img.clone()]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let out = augment(&img, &p, &pca, &mut rng).unwrap();
            assert_eq!((out.width, out.height), (16, 16));
        }
    }

    #[test]
    fn oversized_crop_rejected() {
        let p = AugmentationParams::square(10, 12);
        assert!(p.offset_range().is_err());
        assert!(center_view(&ramp(10, 10), &p).is_err());
    }

    #[test]
    fn pca_recovers_dominant_axis() {
        // pixels vary only along (1, 1, 0)/sqrt(2)
        let n = 400;
        let mut data = vec![0.5; 3 * n];
        for i in 0..n {
            let t = (i as f64 / n as f64) - 0.5;
            data[i] = 0.5 + t;
            data[n + i] = 0.5 + t;
        }
        let img = Image::new(20, 20, data).unwrap();
        let pca = ColorPca::fit(&[img]).unwrap();
        let e = pca.eigenvectors[0];
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((e[0] - s).abs() < 1e-9 && (e[1] - s).abs() < 1e-9 && e[2].abs() < 1e-9);
        assert!(pca.eigenvalues[1].abs() < 1e-12);
        let shift = pca.shift([1.0, 0.0, 0.0]);
        assert!((shift[0] - pca.eigenvalues[0] * s).abs() < 1e-12);
    }
}
