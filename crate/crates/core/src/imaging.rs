//! Scalar grayscale images and their PNG encoding.

use std::io::Cursor;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image of {width}x{height} needs {expected} pixels, got {actual}")]
    Size {
        width: usize,
        height: usize,
        expected: usize,
        actual: usize,
    },
    #[error("png: {0}")]
    Codec(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `height x width` pixels in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self, ImageError> {
        if data.len() != width * height || data.is_empty() {
            return Err(ImageError::Size {
                width,
                height,
                expected: width * height,
                actual: data.len(),
            });
        }
        Ok(Self { width, height, data })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: f32) {
        self.data[y * self.width + x] = value;
    }

    pub fn mirrored(&self) -> Self {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                out.set(x, y, self.get(self.width - 1 - x, y));
            }
        }
        out
    }

    /// 8-bit quantization; decoding the PNG again yields exactly these levels.
    pub fn quantized(&self) -> Self {
        Self {
            data: self.data.iter().map(|&v| quantize(v) as f32 / 255.0).collect(),
            ..*self
        }
    }

    pub fn to_png(&self) -> Result<Vec<u8>, ImageError> {
        let buf = image::GrayImage::from_raw(
            self.width as u32,
            self.height as u32,
            self.data.iter().map(|&v| quantize(v)).collect(),
        )
        .expect("buffer size checked at construction");
        let mut out = Vec::new();
        buf.write_to(&mut Cursor::new(&mut out), image::ImageFormat::Png)?;
        Ok(out)
    }

    /// Decodes any PNG, converting to 8-bit luma.
    pub fn from_png(bytes: &[u8]) -> Result<Self, ImageError> {
        let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)?.to_luma8();
        let (w, h) = img.dimensions();
        Self::new(w as usize, h as usize, img.into_raw().into_iter().map(|v| v as f32 / 255.0).collect())
    }

    pub fn save(&self, path: &Path) -> Result<(), ImageError> {
        std::fs::write(path, self.to_png()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ImageError> {
        Self::from_png(&std::fs::read(path)?)
    }
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_is_exact_after_quantization() {
        let img = GrayImage::new(3, 2, vec![0.0, 0.25, 0.5, 0.75, 1.0, 0.333]).unwrap();
        let q = img.quantized();
        assert_eq!(GrayImage::from_png(&img.to_png().unwrap()).unwrap(), q);
        assert!(GrayImage::new(2, 2, vec![0.0; 3]).is_err());
    }
}
