//! Grayscale images, PGM I/O, resizing and dataset ingestion.

mod dataset;
mod pgm;
mod synth;

pub use dataset::{load_image_folder, FolderLoad, LabeledDataset, OnInvalid, SkippedFile};
pub use pgm::{decode_pgm, encode_pgm, PgmError};
pub use synth::{synth_thermal, SynthSpec};

use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image dimensions must be nonzero, got {width}x{height}")]
    ZeroDimension { width: usize, height: usize },
    #[error("{width}x{height} image needs {expected} pixels, got {actual}")]
    PixelCount {
        width: usize,
        height: usize,
        expected: usize,
        actual: usize,
    },
    #[error("pixel {index} = {value} lies outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("channel count must be 1 or 3, got {0}")]
    Channels(usize),
    #[error(transparent)]
    Pgm(#[from] PgmError),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Decode {
        path: std::path::PathBuf,
        source: PgmError,
    },
    #[error("{0}: no decodable images found")]
    EmptyDataset(std::path::PathBuf),
    #[error("{0}: not a directory")]
    NotADirectory(std::path::PathBuf),
    #[error("invalid synthetic dataset spec {spec:?}: {reason}")]
    SynthSpec { spec: String, reason: String },
    #[error("synthetic datasets need at least 2 classes and 1 image per class")]
    SynthSize,
}

/// Row-major grayscale intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::ZeroDimension { width, height });
        }
        if pixels.len() != width * height {
            return Err(ImageError::PixelCount {
                width,
                height,
                expected: width * height,
                actual: pixels.len(),
            });
        }
        if let Some((index, &value)) = pixels
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(ImageError::OutOfRange { index, value });
        }
        Ok(Image {
            width,
            height,
            pixels,
        })
    }

    /// Builds an image, clamping every value into `[0, 1]` (NaN becomes 0).
    pub fn from_clamped(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self, ImageError> {
        let pixels = pixels.into_iter().map(clamp_unit).collect();
        Self::new(width, height, pixels)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self, ImageError> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    /// Pixel lookup with clamp-to-edge addressing.
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.get(x, y)
    }
}

pub(crate) fn clamp_unit(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

/// Bilinear resize with corner-aligned sampling: output corners coincide
/// with input corners. A single output column/row samples the input centre.
pub fn resize_bilinear(img: &Image, out_w: usize, out_h: usize) -> Result<Image, ImageError> {
    if out_w == 0 || out_h == 0 {
        return Err(ImageError::ZeroDimension {
            width: out_w,
            height: out_h,
        });
    }
    if out_w == img.width && out_h == img.height {
        return Ok(img.clone());
    }
    let coord = |i: usize, n_out: usize, n_in: usize| -> f64 {
        if n_out == 1 {
            (n_in - 1) as f64 / 2.0
        } else {
            i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64
        }
    };
    let mut pixels = Vec::with_capacity(out_w * out_h);
    for oy in 0..out_h {
        let sy = coord(oy, out_h, img.height);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(img.height - 1);
        let fy = sy - y0 as f64;
        for ox in 0..out_w {
            let sx = coord(ox, out_w, img.width);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(img.width - 1);
            let fx = sx - x0 as f64;
            let top = img.get(x0, y0) * (1.0 - fx) + img.get(x1, y0) * fx;
            let bottom = img.get(x0, y1) * (1.0 - fx) + img.get(x1, y1) * fx;
            pixels.push(clamp_unit(top * (1.0 - fy) + bottom * fy));
        }
    }
    Image::new(out_w, out_h, pixels)
}

/// Converts to a `[channels, H, W]` tensor; three channels replicate the
/// grayscale plane.
pub fn to_input_tensor(img: &Image, channels: usize) -> Result<Tensor, ImageError> {
    if channels != 1 && channels != 3 {
        return Err(ImageError::Channels(channels));
    }
    let mut data = Vec::with_capacity(channels * img.pixels.len());
    for _ in 0..channels {
        data.extend_from_slice(&img.pixels);
    }
    Ok(Tensor::from_vec(&[channels, img.height, img.width], data)
        .expect("image dimensions are nonzero"))
}
