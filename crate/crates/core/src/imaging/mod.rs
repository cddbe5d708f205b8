//! Image representation and the degradation / geometry pipeline used to
//! produce training views and evaluation inputs.
//!
//! All intensities are `f64` in `[0, 1]`, stored row-major with interleaved
//! channels (`H x W x C`).

mod curriculum;
mod pipeline;
mod resample;

pub use curriculum::{degrade_probability, sample_resolution, CurriculumState, ResolutionSet};
pub use pipeline::{
    center_crop_origin, degrade, degrade_traced, prepare_eval_input, prepare_train_view,
    prepare_train_view_with_probability, resize_shortest_side, shortest_side_dims, TrainView,
    CROP_SIZE, RESIZE_SHORTEST,
};
pub use resample::resize_bilinear;

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(invalid(format!("image must be non-empty, got {height}x{width}")));
        }
        if channels != 1 && channels != 3 {
            return Err(invalid(format!("channels must be 1 or 3, got {channels}")));
        }
        if data.len() != height * width * channels {
            return Err(invalid(format!(
                "pixel buffer has {} values, expected {}",
                data.len(),
                height * width * channels
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(invalid(format!("intensity {v} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    /// Builds an image from a buffer whose values are clamped into `[0, 1]`.
    pub(crate) fn from_raw_clamped(
        height: usize,
        width: usize,
        channels: usize,
        mut data: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(data.len(), height * width * channels);
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn shortest_side(&self) -> usize {
        self.height.min(self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Image> {
        if top + height > self.height || left + width > self.width || height == 0 || width == 0 {
            return Err(invalid(format!(
                "crop {height}x{width}@({top},{left}) outside {}x{}",
                self.height, self.width
            )));
        }
        let c = self.channels;
        let mut data = Vec::with_capacity(height * width * c);
        for y in top..top + height {
            let start = (y * self.width + left) * c;
            data.extend_from_slice(&self.data[start..start + width * c]);
        }
        Ok(Image {
            height,
            width,
            channels: c,
            data,
        })
    }

    pub fn to_dynamic(&self) -> image::DynamicImage {
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        let (w, h) = (self.width as u32, self.height as u32);
        if self.channels == 1 {
            image::DynamicImage::ImageLuma8(
                image::GrayImage::from_raw(w, h, bytes).expect("buffer sized from dims"),
            )
        } else {
            image::DynamicImage::ImageRgb8(
                image::RgbImage::from_raw(w, h, bytes).expect("buffer sized from dims"),
            )
        }
    }

    /// Converts a decoded raster into an image. Grayscale inputs stay single
    /// channel; everything else is converted to RGB.
    pub fn from_dynamic(img: &image::DynamicImage) -> Result<Image> {
        let (h, w) = (img.height() as usize, img.width() as usize);
        match img {
            image::DynamicImage::ImageLuma8(g) => Image::new(
                h,
                w,
                1,
                g.as_raw().iter().map(|&b| f64::from(b) / 255.0).collect(),
            ),
            other => {
                let rgb = other.to_rgb8();
                Image::new(
                    h,
                    w,
                    3,
                    rgb.as_raw().iter().map(|&b| f64::from(b) / 255.0).collect(),
                )
            }
        }
    }
}

/// One labeled image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub image: Image,
    pub identity: u32,
    pub media_id: u32,
}

impl ImageRecord {
    pub fn new(image: Image, identity: u32, media_id: u32) -> Self {
        Self {
            image,
            identity,
            media_id,
        }
    }

    pub fn native_resolution(&self) -> (usize, usize) {
        self.image.dims()
    }
}
