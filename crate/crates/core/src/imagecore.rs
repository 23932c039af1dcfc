//! Image containers, raster I/O, grayscale conversion and the three-band
//! layer geometry shared by every pipeline stage.
//!
//! Intensities are held as `f64` in `[0, 1]`; 8-bit quantization only
//! happens when reading or writing files.

use std::fmt;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{ImageFormat, ImageReader};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised by image construction and raster I/O.
#[derive(Debug, Error)]
pub enum ImageError {
    #[error("file not found: {path}: {reason}")]
    FileNotFound { path: PathBuf, reason: String },
    #[error("unsupported image format: {path}: {reason}")]
    UnsupportedFormat { path: PathBuf, reason: String },
    #[error("corrupt image: {path}: {reason}")]
    CorruptImage { path: PathBuf, reason: String },
    #[error("i/o error on {path}: {reason}")]
    Io { path: PathBuf, reason: String },
    #[error("image too small: height {height} < 3")]
    ImageTooSmall { height: usize },
    #[error("layer widths differ: {top}, {middle}, {bottom}")]
    WidthMismatch {
        top: usize,
        middle: usize,
        bottom: usize,
    },
    #[error("invalid dimensions {width}x{height} for {len} samples")]
    BadShape {
        width: usize,
        height: usize,
        len: usize,
    },
    #[error("intensity {value} at index {index} outside [0,1]")]
    OutOfRange { index: usize, value: f64 },
}

pub type ImageResult<T> = Result<T, ImageError>;

fn check_shape(width: usize, height: usize, len: usize) -> ImageResult<()> {
    if width == 0 || height == 0 || width.checked_mul(height) != Some(len) {
        return Err(ImageError::BadShape { width, height, len });
    }
    Ok(())
}

/// Row-major RGB image with channels normalized to `[0, 1]`.
#[derive(Clone, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    pixels: Vec<[f64; 3]>,
}

impl fmt::Debug for RgbImage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RgbImage({}x{})", self.width, self.height)
    }
}

impl RgbImage {
    pub fn new(width: usize, height: usize, pixels: Vec<[f64; 3]>) -> ImageResult<Self> {
        check_shape(width, height, pixels.len())?;
        for (i, px) in pixels.iter().enumerate() {
            for &c in px {
                if !(0.0..=1.0).contains(&c) {
                    return Err(ImageError::OutOfRange { index: i, value: c });
                }
            }
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: [f64; 3]) -> ImageResult<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    /// Replicates a grayscale image into three equal channels.
    pub fn from_gray(gray: &GrayImage) -> Self {
        Self {
            width: gray.width,
            height: gray.height,
            pixels: gray.data.iter().map(|&v| [v, v, v]).collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[[f64; 3]] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.pixels[y * self.width + x]
    }

    /// Rows `start..end`, full width.
    pub fn crop_rows(&self, start: usize, end: usize) -> Self {
        assert!(start <= end && end <= self.height, "row range out of bounds");
        Self {
            width: self.width,
            height: end - start,
            pixels: self.pixels[start * self.width..end * self.width].to_vec(),
        }
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let raw = self
            .pixels
            .iter()
            .flat_map(|px| px.iter().map(|&c| quantize(c)))
            .collect();
        image::RgbImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer length matches dimensions")
    }

    /// Lossless PNG encoding of the 8-bit quantized image.
    pub fn to_png_bytes(&self) -> Vec<u8> {
        let mut out = Cursor::new(Vec::new());
        self.to_rgb8()
            .write_to(&mut out, ImageFormat::Png)
            .expect("in-memory PNG encoding");
        out.into_inner()
    }
}

/// Row-major grayscale image with intensities in `[0, 1]`.
#[derive(Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl fmt::Debug for GrayImage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GrayImage({}x{})", self.width, self.height)
    }
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> ImageResult<Self> {
        check_shape(width, height, data.len())?;
        if let Some((index, &value)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(ImageError::OutOfRange { index, value });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Caller guarantees shape and range; used by operators whose output is
    /// a convex combination or an order statistic of valid inputs.
    pub(crate) fn from_raw(width: usize, height: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(width * height, data.len());
        Self {
            width,
            height,
            data,
        }
    }

    pub fn filled(width: usize, height: usize, value: f64) -> ImageResult<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> ImageResult<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn row(&self, y: usize) -> &[f64] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    /// Intensity complement `1 - v`.
    pub fn complement(&self) -> Self {
        Self::from_raw(self.width, self.height, self.data.iter().map(|v| 1.0 - v).collect())
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Rows `start..end` as a new image.
    pub fn crop_rows(&self, start: usize, end: usize) -> Self {
        Self::from_raw(
            self.width,
            end - start,
            self.data[start * self.width..end * self.width].to_vec(),
        )
    }

    pub fn to_luma8(&self) -> image::GrayImage {
        let raw = self.data.iter().map(|&v| quantize(v)).collect();
        image::GrayImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer length matches dimensions")
    }

    pub fn to_png_bytes(&self) -> Vec<u8> {
        let mut out = Cursor::new(Vec::new());
        self.to_luma8()
            .write_to(&mut out, ImageFormat::Png)
            .expect("in-memory PNG encoding");
        out.into_inner()
    }
}

/// Nearest 8-bit level of a normalized intensity.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    Top,
    Middle,
    Bottom,
}

impl Layer {
    pub const ALL: [Layer; 3] = [Layer::Top, Layer::Middle, Layer::Bottom];

    pub fn index(self) -> usize {
        match self {
            Layer::Top => 0,
            Layer::Middle => 1,
            Layer::Bottom => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Layer::Top => "top",
            Layer::Middle => "middle",
            Layer::Bottom => "bottom",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "top" => Some(Layer::Top),
            "middle" => Some(Layer::Middle),
            "bottom" => Some(Layer::Bottom),
            _ => None,
        }
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Horizontal band `row_start..row_end` of the source image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerBand {
    pub layer: Layer,
    pub row_start: usize,
    pub row_end: usize,
}

impl LayerBand {
    pub fn rows(&self) -> usize {
        self.row_end - self.row_start
    }
}

/// Band geometry for an image of `height` rows: the first two bands get
/// `height / 3` rows, the bottom band takes the remainder.
pub fn layer_bands(height: usize) -> ImageResult<[LayerBand; 3]> {
    if height < 3 {
        return Err(ImageError::ImageTooSmall { height });
    }
    let third = height / 3;
    Ok([
        LayerBand {
            layer: Layer::Top,
            row_start: 0,
            row_end: third,
        },
        LayerBand {
            layer: Layer::Middle,
            row_start: third,
            row_end: 2 * third,
        },
        LayerBand {
            layer: Layer::Bottom,
            row_start: 2 * third,
            row_end: height,
        },
    ])
}

pub fn split_layers(img: &GrayImage) -> ImageResult<([GrayImage; 3], [LayerBand; 3])> {
    let bands = layer_bands(img.height())?;
    let layers = bands.map(|b| img.crop_rows(b.row_start, b.row_end));
    Ok((layers, bands))
}

pub fn stitch_layers(top: &GrayImage, middle: &GrayImage, bottom: &GrayImage) -> ImageResult<GrayImage> {
    if top.width != middle.width || top.width != bottom.width {
        return Err(ImageError::WidthMismatch {
            top: top.width,
            middle: middle.width,
            bottom: bottom.width,
        });
    }
    let mut data = Vec::with_capacity(top.len() + middle.len() + bottom.len());
    data.extend_from_slice(&top.data);
    data.extend_from_slice(&middle.data);
    data.extend_from_slice(&bottom.data);
    Ok(GrayImage::from_raw(
        top.width,
        top.height + middle.height + bottom.height,
        data,
    ))
}

/// Rec. 601 luma.
pub fn to_grayscale(img: &RgbImage) -> GrayImage {
    let data = img
        .pixels
        .iter()
        .map(|&[r, g, b]| {
            let y = 0.299 * r + 0.587 * g + 0.114 * b;
            // rounding can push a pure white sum a hair past 1
            y.clamp(r.min(g).min(b), r.max(g).max(b))
        })
        .collect();
    GrayImage::from_raw(img.width, img.height, data)
}

fn rgb_from_dynamic(dynamic: image::DynamicImage) -> RgbImage {
    let rgb = dynamic.to_rgb8();
    let (w, h) = rgb.dimensions();
    let pixels = rgb
        .pixels()
        .map(|p| p.0.map(|c| f64::from(c) / 255.0))
        .collect();
    RgbImage {
        width: w as usize,
        height: h as usize,
        pixels,
    }
}

fn extension_format(path: &Path) -> Option<ImageFormat> {
    let ext = path.extension()?.to_str()?.to_ascii_lowercase();
    match ext.as_str() {
        "png" => Some(ImageFormat::Png),
        "jpg" | "jpeg" => Some(ImageFormat::Jpeg),
        _ => None,
    }
}

/// Decodes PNG or JPEG bytes. `origin` is only used in error messages.
pub fn decode_image(bytes: &[u8], origin: &Path) -> ImageResult<RgbImage> {
    let sniffed = image::guess_format(bytes).ok();
    let format = match sniffed {
        Some(f @ (ImageFormat::Png | ImageFormat::Jpeg)) => f,
        Some(other) => {
            return Err(ImageError::UnsupportedFormat {
                path: origin.to_path_buf(),
                reason: format!("{other:?} content"),
            })
        }
        None => match extension_format(origin) {
            Some(f) => f,
            None => {
                return Err(ImageError::UnsupportedFormat {
                    path: origin.to_path_buf(),
                    reason: "not a PNG or JPEG file".into(),
                })
            }
        },
    };
    let mut reader = ImageReader::new(Cursor::new(bytes));
    reader.set_format(format);
    let dynamic = reader.decode().map_err(|e| ImageError::CorruptImage {
        path: origin.to_path_buf(),
        reason: e.to_string(),
    })?;
    Ok(rgb_from_dynamic(dynamic))
}

pub fn load_image(path: impl AsRef<Path>) -> ImageResult<RgbImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => ImageError::FileNotFound {
            path: path.to_path_buf(),
            reason: e.to_string(),
        },
        _ => ImageError::Io {
            path: path.to_path_buf(),
            reason: e.to_string(),
        },
    })?;
    decode_image(&bytes, path)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> ImageResult<()> {
    std::fs::write(path, bytes).map_err(|e| ImageError::Io {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

pub fn save_png(img: &RgbImage, path: impl AsRef<Path>) -> ImageResult<()> {
    write_bytes(path.as_ref(), &img.to_png_bytes())
}

/// Writes a single-channel 8-bit PNG.
pub fn save_gray_png(img: &GrayImage, path: impl AsRef<Path>) -> ImageResult<()> {
    write_bytes(path.as_ref(), &img.to_png_bytes())
}
