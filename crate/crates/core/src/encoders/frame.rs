use crate::error::{Error, Result};

/// A single RGB-like frame, stored channel-major (`C x H x W`), values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTensor {
    channels: usize,
    size: usize,
    pixels: Vec<f64>,
}

impl FrameTensor {
    pub fn new(channels: usize, size: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != channels * size * size {
            return Err(Error::input(format!(
                "frame buffer holds {} values, expected {channels}x{size}x{size}",
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::input(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(Self { channels, size, pixels })
    }

    pub fn filled(channels: usize, size: usize, value: f64) -> Self {
        Self::new(channels, size, vec![value; channels * size * size]).expect("valid fill value")
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Height and width.
    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.pixels[(c * self.size + y) * self.size + x]
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }
}
