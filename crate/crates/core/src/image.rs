//! Display-space RGB images with values in `[0, 1]`.

use std::path::Path;

use image::{ImageBuffer, Rgb};
use ndarray::Array3;

use crate::error::{Error, Result};

/// An `H × W × 3` image with every value in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    data: Array3<f64>,
}

impl ImageTensor {
    /// Wraps `data`, rejecting wrong channel counts and out-of-range values.
    pub fn new(data: Array3<f64>) -> Result<Self> {
        let (h, w, c) = data.dim();
        if c != 3 || h == 0 || w == 0 {
            return Err(Error::Shape(format!("expected H×W×3 image, got {h}×{w}×{c}")));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "image value {v} outside [0, 1]"
            )));
        }
        Ok(Self { data })
    }

    /// Clamps every value into `[0, 1]`; NaN becomes 0.
    pub fn from_clamped(mut data: Array3<f64>) -> Result<Self> {
        data.mapv_inplace(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) });
        Self::new(data)
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Result<Self> {
        let data = Array3::from_shape_fn((height, width, 3), |(_, _, c)| rgb[c]);
        Self::new(data)
    }

    pub fn height(&self) -> usize {
        self.data.dim().0
    }

    pub fn width(&self) -> usize {
        self.data.dim().1
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height(), self.width())
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn into_inner(self) -> Array3<f64> {
        self.data
    }

    /// Per-channel mean.
    pub fn channel_means(&self) -> [f64; 3] {
        let n = (self.height() * self.width()) as f64;
        let mut out = [0.0; 3];
        for ((_, _, c), v) in self.data.indexed_iter() {
            out[c] += v;
        }
        out.map(|s| s / n)
    }

    /// Rounds every value to the nearest multiple of 1/255.
    pub fn quantized_u8(&self) -> Self {
        Self {
            data: self.data.mapv(|v| (v * 255.0).round() / 255.0),
        }
    }

    pub fn to_rgb8(&self) -> ImageBuffer<Rgb<u8>, Vec<u8>> {
        let (h, w) = self.dims();
        ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
            let px = |c| (self.data[[y as usize, x as usize, c]] * 255.0).round() as u8;
            Rgb([px(0), px(1), px(2)])
        })
    }

    pub fn from_rgb8(buf: &ImageBuffer<Rgb<u8>, Vec<u8>>) -> Self {
        let (w, h) = buf.dimensions();
        let data = Array3::from_shape_fn((h as usize, w as usize, 3), |(y, x, c)| {
            buf.get_pixel(x as u32, y as u32)[c] as f64 / 255.0
        });
        Self { data }
    }

    /// Decodes any raster format the `image` crate understands; 8-bit sources
    /// are divided by 255, 16-bit sources by 65535.
    pub fn load(path: &Path) -> Result<Self> {
        let dynimg = image::open(path)?;
        let rgb = dynimg.to_rgb32f();
        let (w, h) = rgb.dimensions();
        let data = Array3::from_shape_fn((h as usize, w as usize, 3), |(y, x, c)| {
            rgb.get_pixel(x as u32, y as u32)[c] as f64
        });
        Self::from_clamped(data)
    }

    /// Writes an 8-bit PNG.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        Ok(self.to_rgb8().save_with_format(path, image::ImageFormat::Png)?)
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut out = std::io::Cursor::new(Vec::new());
        self.to_rgb8()
            .write_to(&mut out, image::ImageFormat::Png)?;
        Ok(out.into_inner())
    }

    /// Converts to grayscale luminance, `H × W`.
    pub fn luminance(&self) -> ndarray::Array2<f64> {
        let (h, w) = self.dims();
        ndarray::Array2::from_shape_fn((h, w), |(y, x)| {
            0.299 * self.data[[y, x, 0]] + 0.587 * self.data[[y, x, 1]] + 0.114 * self.data[[y, x, 2]]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_values() {
        let mut data = Array3::zeros((2, 2, 3));
        data[[0, 0, 0]] = 1.5;
        assert!(ImageTensor::new(data.clone()).is_err());
        let img = ImageTensor::from_clamped(data).unwrap();
        assert_eq!(img.data()[[0, 0, 0]], 1.0);
    }

    #[test]
    fn rejects_wrong_channel_count() {
        assert!(ImageTensor::new(Array3::zeros((2, 2, 4))).is_err());
    }

    #[test]
    fn quantized_image_survives_png() {
        let data = Array3::from_shape_fn((5, 7, 3), |(y, x, c)| ((y * 7 + x) * 3 + c) as f64 / 104.0);
        let img = ImageTensor::new(data).unwrap().quantized_u8();
        let back = ImageTensor::from_rgb8(&img.to_rgb8());
        assert_eq!(img, back);
    }
}
