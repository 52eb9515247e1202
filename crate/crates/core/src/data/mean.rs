//! Mean-image centering.

use crate::data::image::Image;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MeanImage(pub Image);

pub fn compute_mean_image(images: &[Image]) -> Result<MeanImage> {
    let first = images
        .first()
        .ok_or_else(|| Error::invalid("cannot compute a mean image of an empty training set"))?;
    let mut sum = vec![0.0; first.data.len()];
    for img in images {
        if !img.same_size(first) {
            return Err(Error::invalid(format!(
                "mean image inputs differ in size: {}x{} vs {}x{}",
                img.width, img.height, first.width, first.height
            )));
        }
        for (s, v) in sum.iter_mut().zip(&img.data) {
            *s += v;
        }
    }
    let n = images.len() as f64;
    sum.iter_mut().for_each(|s| *s /= n);
    Ok(MeanImage(Image::new(first.width, first.height, sum)?))
}

pub fn center(image: &Image, mean: &MeanImage) -> Result<Image> {
    if !image.same_size(&mean.0) {
        return Err(Error::invalid(format!(
            "image {}x{} does not match mean image {}x{}",
            image.width, image.height, mean.0.width, mean.0.height
        )));
    }
    let data = image.data.iter().zip(&mean.0.data).map(|(a, b)| a - b).collect();
    Image::new(image.width, image.height, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_constant_images() {
        let m = compute_mean_image(&[Image::filled(3, 2, 0.2), Image::filled(3, 2, 0.4)]).unwrap();
        assert!(m.0.data.iter().all(|&v| (v - 0.3).abs() < 1e-15));
        let c = center(&Image::filled(3, 2, 0.2), &m).unwrap();
        assert!(c.data.iter().all(|&v| (v + 0.1).abs() < 1e-15));
        assert!(center(&m.0, &m).unwrap().data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn centered_set_has_zero_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let imgs: Vec<Image> = (0..17)
            .map(|_| Image::new(5, 4, (0..60).map(|_| rng.random::<f64>()).collect()).unwrap())
            .collect();
        let m = compute_mean_image(&imgs).unwrap();
        let centered: Vec<Image> = imgs.iter().map(|i| center(i, &m).unwrap()).collect();
        let back = compute_mean_image(&centered).unwrap();
        assert!(back.0.data.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn errors() {
        assert!(compute_mean_image(&[]).is_err());
        assert!(compute_mean_image(&[Image::filled(2, 2, 0.0), Image::filled(3, 2, 0.0)]).is_err());
    }
}
