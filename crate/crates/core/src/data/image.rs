//! Planar RGB images and the geometric operations used by augmentation.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// 8-bit interleaved RGB frame as stored on disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbFrame {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl RgbFrame {
    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })?
            .to_rgb8();
        Ok(RgbFrame {
            width: img.width() as usize,
            height: img.height() as usize,
            pixels: img.into_raw(),
        })
    }

    /// Writes a lossless PNG.
    pub fn save(&self, path: &Path) -> Result<()> {
        image::save_buffer_with_format(
            path,
            &self.pixels,
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
            image::ImageFormat::Png,
        )
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Pixel values scaled to `[0, 1]`.
    pub fn to_image(&self) -> Image {
        let plane = self.width * self.height;
        let mut data = vec![0.0; 3 * plane];
        for (i, px) in self.pixels.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * plane + i] = px[c] as f64 / 255.0;
            }
        }
        Image {
            width: self.width,
            height: self.height,
            data,
        }
    }
}

/// Channel-planar RGB image with `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// `[3, height, width]` row-major.
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != 3 * width * height {
            return Err(Error::invalid(format!(
                "image {width}x{height} needs {} values, got {}",
                3 * width * height,
                data.len()
            )));
        }
        Ok(Image { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Image {
            width,
            height,
            data: vec![value; 3 * width * height],
        }
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn same_size(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// `[3, H, W]` tensor view of the data.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[3, self.height, self.width], self.data.clone()).expect("image dimensions are positive")
    }

    /// Bilinear sample with edge-replicate borders.
    fn sample(&self, c: usize, y: f64, x: f64) -> f64 {
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let (y0, x0) = (y.floor() as usize, x.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(self.height - 1), (x0 + 1).min(self.width - 1));
        let (fy, fx) = (y - y0 as f64, x - x0 as f64);
        let top = self.at(c, y0, x0) * (1.0 - fx) + self.at(c, y0, x1) * fx;
        let bottom = self.at(c, y1, x0) * (1.0 - fx) + self.at(c, y1, x1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Bilinear resize using pixel-center alignment; same size is a copy.
    pub fn resize(&self, width: usize, height: usize) -> Result<Image> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("resize target must be non-empty"));
        }
        if width == self.width && height == self.height {
            return Ok(self.clone());
        }
        let sy = self.height as f64 / height as f64;
        let sx = self.width as f64 / width as f64;
        let mut data = Vec::with_capacity(3 * width * height);
        for c in 0..3 {
            for y in 0..height {
                let src_y = (y as f64 + 0.5) * sy - 0.5;
                for x in 0..width {
                    let src_x = (x as f64 + 0.5) * sx - 0.5;
                    data.push(self.sample(c, src_y, src_x));
                }
            }
        }
        Image::new(width, height, data)
    }

    pub fn crop(&self, left: usize, top: usize, width: usize, height: usize) -> Result<Image> {
        if width == 0 || height == 0 || left + width > self.width || top + height > self.height {
            return Err(Error::invalid(format!(
                "crop {width}x{height} at ({left}, {top}) exceeds image {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(3 * width * height);
        for c in 0..3 {
            for y in top..top + height {
                let row = (c * self.height + y) * self.width;
                data.extend_from_slice(&self.data[row + left..row + left + width]);
            }
        }
        Image::new(width, height, data)
    }

    pub fn flip_horizontal(&self) -> Image {
        let mut out = self.clone();
        for row in out.data.chunks_exact_mut(self.width) {
            row.reverse();
        }
        out
    }

    /// Rotation by `degrees` (counter-clockwise in image coordinates) about
    /// the image center, bilinear with edge-replicate padding.
    pub fn rotate(&self, degrees: f64) -> Image {
        if degrees == 0.0 {
            return self.clone();
        }
        let (sin, cos) = degrees.to_radians().sin_cos();
        let cy = (self.height as f64 - 1.0) / 2.0;
        let cx = (self.width as f64 - 1.0) / 2.0;
        let mut data = Vec::with_capacity(self.data.len());
        for c in 0..3 {
            for y in 0..self.height {
                for x in 0..self.width {
                    let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                    // inverse mapping: rotate the output coordinate by -angle
                    let sx = cos * dx + sin * dy + cx;
                    let sy = -sin * dx + cos * dy + cy;
                    data.push(self.sample(c, sy, sx));
                }
            }
        }
        Image {
            width: self.width,
            height: self.height,
            data,
        }
    }

    /// Adds a constant per channel.
    pub fn shift_channels(&self, offsets: [f64; 3]) -> Image {
        let mut out = self.clone();
        let n = self.width * self.height;
        for (c, off) in offsets.iter().enumerate() {
            for v in &mut out.data[c * n..(c + 1) * n] {
                *v += off;
            }
        }
        out
    }
}
