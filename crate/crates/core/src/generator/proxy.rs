//! Multi-scale image dissimilarity used as the perceptual loss and the image
//! error metric: squared differences over a 3-level Gaussian pyramid.

use std::rc::Rc;

use crate::imaging::GrayImage;
use crate::numcore::{Kernel, NumError, Result, Scalar, Tape, Tensor, Var};

pub const LEVELS: usize = 3;

fn pyramid_kernel<S: Scalar>() -> Rc<Kernel<S>> {
    Rc::new(Kernel::binomial(5).expect("odd kernel"))
}

/// Per-image proxy of two `[B, H, W]` batches, shape `[B]`.
///
/// Blur and pooling are linear, so the pyramid is built on the difference.
pub fn proxy_per_image<'t, S: Scalar>(a: Var<'t, S>, b: Var<'t, S>) -> Result<Var<'t, S>> {
    let shape = a.shape();
    if shape.len() != 3 || shape != b.shape() {
        return Err(NumError::ShapeMismatch {
            op: "perceptual_proxy",
            lhs: shape,
            rhs: b.shape(),
        });
    }
    let kernel = pyramid_kernel();
    let batch = shape[0];
    let mut level = a.sub(b)?;
    let mut total: Option<Var<'t, S>> = None;
    for l in 0..LEVELS {
        if l > 0 {
            level = level.conv2d(&kernel)?.avg_pool2()?;
        }
        let s = level.shape();
        let mse = level.square()?.reshape(&[batch, s[1] * s[2]])?.row_mean()?;
        total = Some(match total {
            Some(t) => t.add(mse)?,
            None => mse,
        });
    }
    Ok(total.expect("at least one level"))
}

/// Batch-mean proxy.
pub fn proxy<'t, S: Scalar>(a: Var<'t, S>, b: Var<'t, S>) -> Result<Var<'t, S>> {
    proxy_per_image(a, b)?.mean()
}

pub fn image_tensor<S: Scalar>(images: &[&GrayImage]) -> Result<Tensor<S>> {
    let first = images.first().ok_or(NumError::InvalidArgument {
        op: "image_tensor",
        msg: "no images".into(),
    })?;
    let (w, h) = (first.width(), first.height());
    let mut data = Vec::with_capacity(images.len() * w * h);
    for img in images {
        if img.width() != w || img.height() != h {
            return Err(NumError::ShapeMismatch {
                op: "image_tensor",
                lhs: vec![h, w],
                rhs: vec![img.height(), img.width()],
            });
        }
        data.extend(img.data().iter().map(|&v| S::lit(v as f64)));
    }
    Tensor::new(&[images.len(), h, w], data)
}

/// Proxy distance between two images, evaluated in double precision.
pub fn perceptual_proxy(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    let tape = Tape::<f64>::new();
    let x = tape.constant(image_tensor(&[a])?);
    let y = tape.constant(image_tensor(&[b]).map_err(|_| NumError::ShapeMismatch {
        op: "perceptual_proxy",
        lhs: vec![a.height(), a.width()],
        rhs: vec![b.height(), b.width()],
    })?);
    Ok(proxy(x, y)?.value().item())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_images_differ_by_one_per_level() {
        let zero = GrayImage::zeros(16, 16);
        let one = GrayImage::new(16, 16, vec![1.0; 256]).unwrap();
        assert!((perceptual_proxy(&zero, &one).unwrap() - 3.0).abs() < 1e-12);
        assert_eq!(perceptual_proxy(&one, &one).unwrap(), 0.0);
        assert!(perceptual_proxy(&zero, &GrayImage::zeros(8, 8)).is_err());
    }

    #[test]
    fn symmetric() {
        let a = GrayImage::new(8, 8, (0..64).map(|i| (i % 7) as f32 / 7.0).collect()).unwrap();
        let b = GrayImage::new(8, 8, (0..64).map(|i| (i % 5) as f32 / 5.0).collect()).unwrap();
        assert_eq!(perceptual_proxy(&a, &b).unwrap(), perceptual_proxy(&b, &a).unwrap());
        assert!(perceptual_proxy(&a, &b).unwrap() > 0.0);
    }
}
