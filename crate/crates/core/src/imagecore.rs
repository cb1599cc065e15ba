//! Floating-point image buffers, bilinear sampling and PNG I/O.
//!
//! Intensities live in `[0, 1]` as `f64`. Conversion to 8 bits happens only
//! when reading or writing files. Pixel `(i, j)` has its center at the
//! continuous coordinate `(i, j)`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use thiserror::Error;

/// Errors raised by image construction and raster I/O.
#[derive(Debug, Error)]
pub enum ImageError {
    #[error("file not found: {0}")]
    Missing(String),
    #[error("unsupported image format: {0}")]
    Unsupported(String),
    #[error("corrupt image data in {path}: {reason}")]
    Corrupt { path: String, reason: String },
    #[error("buffer length {got} does not match {width}x{height}x{channels}")]
    Shape {
        width: usize,
        height: usize,
        channels: usize,
        got: usize,
    },
    #[error("channel count must be 1 or 3, got {0}")]
    Channels(usize),
    #[error("intensity at index {0} is outside [0, 1] or not finite")]
    Range(usize),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Continuous pixel coordinate. `(0, 0)` is the center of the top-left pixel.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Row-major, interleaved image with 1 (gray) or 3 (RGB) channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

/// Rec.601 luma weights.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

impl Image {
    /// Builds an image from raw interleaved data, validating shape and range.
    pub fn from_vec(
        width: usize,
        height: usize,
        channels: usize,
        data: Vec<f64>,
    ) -> Result<Self, ImageError> {
        if channels != 1 && channels != 3 {
            return Err(ImageError::Channels(channels));
        }
        if data.len() != width * height * channels {
            return Err(ImageError::Shape {
                width,
                height,
                channels,
                got: data.len(),
            });
        }
        if let Some(i) = data
            .iter()
            .position(|v| !v.is_finite() || *v < 0.0 || *v > 1.0)
        {
            return Err(ImageError::Range(i));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Image filled with a constant value in every channel. The value is
    /// clamped into `[0, 1]`.
    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        assert!(channels == 1 || channels == 3, "channels must be 1 or 3");
        Self {
            width,
            height,
            channels,
            data: vec![value.clamp(0.0, 1.0); width * height * channels],
        }
    }

    /// Builds an image by evaluating `f(x, y, channel)` at every sample.
    /// Results are clamped into `[0, 1]`.
    pub fn from_fn<F>(width: usize, height: usize, channels: usize, mut f: F) -> Self
    where
        F: FnMut(usize, usize, usize) -> f64,
    {
        assert!(channels == 1 || channels == 3, "channels must be 1 or 3");
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    let v = f(x, y, c);
                    data.push(if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 });
                }
            }
        }
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Writes a clamped value into one sample.
    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        let i = (y * self.width + x) * self.channels + c;
        self.data[i] = v.clamp(0.0, 1.0);
    }

    /// All channels of pixel `(x, y)`.
    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, values: &[f64]) {
        let i = (y * self.width + x) * self.channels;
        for (dst, v) in self.data[i..i + self.channels].iter_mut().zip(values) {
            *dst = v.clamp(0.0, 1.0);
        }
    }

    /// Whether bilinear sampling at `p` has all four neighbors inside the image.
    #[inline]
    pub fn contains(&self, p: Point2) -> bool {
        p.x >= 0.0
            && p.y >= 0.0
            && p.x <= (self.width as f64 - 1.0)
            && p.y <= (self.height as f64 - 1.0)
    }

    /// Bilinear interpolation at a continuous coordinate.
    ///
    /// Returns `None` when any of the four pixel centers surrounding `p` lies
    /// outside the image. A coordinate exactly on the last row or column is
    /// in bounds; its far neighbors carry zero weight.
    pub fn sample_bilinear(&self, p: Point2) -> Option<Sample> {
        let cell = self.cell(p)?;
        let mut out = Sample::zeros(self.channels);
        for c in 0..self.channels {
            out.values[c] = self.interpolate(&cell, c);
        }
        out.len = self.channels;
        Some(out)
    }

    /// Single-channel bilinear sample; `None` when out of bounds.
    #[inline]
    pub fn sample_channel(&self, p: Point2, c: usize) -> Option<f64> {
        let cell = self.cell(p)?;
        Some(self.interpolate(&cell, c))
    }

    #[inline]
    fn cell(&self, p: Point2) -> Option<Cell> {
        if !self.contains(p) || self.width == 0 || self.height == 0 {
            return None;
        }
        let (x0, tx) = split_axis(p.x, self.width);
        let (y0, ty) = split_axis(p.y, self.height);
        Some(Cell { x0, y0, tx, ty })
    }

    #[inline]
    fn interpolate(&self, cell: &Cell, c: usize) -> f64 {
        let x1 = (cell.x0 + 1).min(self.width - 1);
        let y1 = (cell.y0 + 1).min(self.height - 1);
        let a = self.get(cell.x0, cell.y0, c);
        let b = self.get(x1, cell.y0, c);
        let d = self.get(cell.x0, y1, c);
        let e = self.get(x1, y1, c);
        let top = a + (b - a) * cell.tx;
        let bottom = d + (e - d) * cell.tx;
        top + (bottom - top) * cell.ty
    }

    /// Luminance with Rec.601 weights; identity on single-channel images.
    pub fn to_grayscale(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|px| {
                (LUMA_WEIGHTS[0] * px[0] + LUMA_WEIGHTS[1] * px[1] + LUMA_WEIGHTS[2] * px[2])
                    .clamp(0.0, 1.0)
            })
            .collect();
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    /// Replicates a gray image into three channels; RGB images are cloned.
    pub fn to_rgb(&self) -> Image {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        Image {
            width: self.width,
            height: self.height,
            channels: 3,
            data,
        }
    }

    /// Bilinear resize mapping pixel-edge extents onto each other. Samples
    /// falling in the half-pixel border are clamped to the edge pixels.
    pub fn resize(&self, width: usize, height: usize) -> Image {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let max_x = self.width as f64 - 1.0;
        let max_y = self.height as f64 - 1.0;
        Image::from_fn(width, height, self.channels, |x, y, c| {
            let p = Point2::new(
                ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, max_x),
                ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, max_y),
            );
            self.sample_channel(p, c).unwrap_or(0.0)
        })
    }

    /// Mean absolute per-sample difference over pixels where `mask` is true.
    /// Returns `None` when the mask selects nothing.
    pub fn mean_abs_diff_masked(&self, other: &Image, mask: &[bool]) -> Option<f64> {
        assert!(self.same_shape(other));
        assert_eq!(mask.len(), self.width * self.height);
        let mut sum = 0.0;
        let mut n = 0usize;
        for (i, &m) in mask.iter().enumerate() {
            if !m {
                continue;
            }
            let base = i * self.channels;
            for c in 0..self.channels {
                sum += (self.data[base + c] - other.data[base + c]).abs();
                n += 1;
            }
        }
        (n > 0).then(|| sum / n as f64)
    }

    /// Reads an 8-bit gray or RGB PNG. Alpha channels are dropped.
    pub fn load(path: impl AsRef<Path>) -> Result<Image, ImageError> {
        let path = path.as_ref();
        let shown = path.display().to_string();
        let bytes = match fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(ImageError::Missing(shown))
            }
            Err(e) => return Err(e.into()),
        };
        let format = image::guess_format(&bytes).map_err(|e| ImageError::Corrupt {
            path: shown.clone(),
            reason: e.to_string(),
        })?;
        if format != image::ImageFormat::Png {
            return Err(ImageError::Unsupported(format!("{format:?} ({shown})")));
        }
        let decoded = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
            .map_err(|e| ImageError::Corrupt {
                path: shown.clone(),
                reason: e.to_string(),
            })?;
        Ok(from_dynamic(decoded))
    }

    /// Writes an 8-bit PNG (gray or RGB, matching the channel count).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ImageError> {
        let bytes = self.to_u8();
        let (w, h) = (self.width as u32, self.height as u32);
        let result = if self.channels == 1 {
            image::GrayImage::from_raw(w, h, bytes).map(|img| img.save(path.as_ref()))
        } else {
            image::RgbImage::from_raw(w, h, bytes).map(|img| img.save(path.as_ref()))
        };
        match result {
            Some(Ok(())) => Ok(()),
            Some(Err(image::ImageError::IoError(e))) => Err(e.into()),
            Some(Err(e)) => Err(ImageError::Unsupported(e.to_string())),
            None => unreachable!("buffer length is validated at construction"),
        }
    }

    /// Binary PPM (P6) writer, mostly useful for eyeballing intermediate
    /// results without a PNG decoder.
    pub fn save_ppm(&self, path: impl AsRef<Path>) -> Result<(), ImageError> {
        let rgb = self.to_rgb();
        let mut w = BufWriter::new(fs::File::create(path)?);
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        w.write_all(&rgb.to_u8())?;
        w.flush()?;
        Ok(())
    }

    /// Quantizes to 8 bits with round-to-nearest.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize(v)).collect()
    }

    pub fn from_u8(width: usize, height: usize, channels: usize, bytes: &[u8]) -> Result<Image, ImageError> {
        Image::from_vec(
            width,
            height,
            channels,
            bytes.iter().map(|&b| b as f64 / 255.0).collect(),
        )
    }
}

#[inline]
pub(crate) fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn from_dynamic(img: image::DynamicImage) -> Image {
    use image::ColorType;
    match img.color() {
        ColorType::L8 | ColorType::L16 | ColorType::La8 | ColorType::La16 => {
            let g = img.to_luma8();
            Image::from_u8(g.width() as usize, g.height() as usize, 1, g.as_raw())
                .expect("decoder output has consistent shape")
        }
        _ => {
            let rgb = img.to_rgb8();
            Image::from_u8(rgb.width() as usize, rgb.height() as usize, 3, rgb.as_raw())
                .expect("decoder output has consistent shape")
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    x0: usize,
    y0: usize,
    tx: f64,
    ty: f64,
}

/// Splits a coordinate already known to be in `[0, n-1]` into a base index
/// and a fractional weight.
#[inline]
fn split_axis(v: f64, n: usize) -> (usize, f64) {
    let base = v.floor();
    let mut i = base as usize;
    let mut t = v - base;
    if i + 1 >= n && n > 1 {
        // exactly on the last center
        i = n - 2;
        t = 1.0;
    } else if n == 1 {
        i = 0;
        t = 0.0;
    }
    (i, t)
}

/// Per-channel sample returned by bilinear interpolation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    values: [f64; 3],
    len: usize,
}

impl Sample {
    fn zeros(len: usize) -> Self {
        Self {
            values: [0.0; 3],
            len,
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values[..self.len]
    }

    /// First channel, convenient for gray images.
    pub fn value(&self) -> f64 {
        self.values[0]
    }
}

impl std::ops::Index<usize> for Sample {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.as_slice()[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gray2x2() -> Image {
        Image::from_vec(2, 2, 1, vec![0.0, 0.4, 0.8, 1.0]).unwrap()
    }

    #[test]
    fn exact_at_pixel_centers() {
        let img = gray2x2();
        for (x, y, v) in [(0, 0, 0.0), (1, 0, 0.4), (0, 1, 0.8), (1, 1, 1.0)] {
            let s = img.sample_bilinear(Point2::new(x as f64, y as f64)).unwrap();
            assert_eq!(s.value(), v);
        }
    }

    #[test]
    fn horizontal_midpoint() {
        let img = Image::from_vec(2, 1, 1, vec![0.0, 1.0]).unwrap();
        let s = img.sample_bilinear(Point2::new(0.5, 0.0)).unwrap();
        assert!((s.value() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn hand_evaluated_bilinear() {
        // scalar reference: (1-tx)(1-ty)a + tx(1-ty)b + (1-tx)ty c + tx ty d
        let (tx, ty): (f64, f64) = (0.25, 0.75);
        let reference =
            (1.0 - tx) * (1.0 - ty) * 0.0 + tx * (1.0 - ty) * 0.4 + (1.0 - tx) * ty * 0.8 + tx * ty * 1.0;
        // 0.1 on the top row, 0.85 on the bottom row, 3/4 of the way down
        assert!((reference - 0.6625).abs() < 1e-12);
        let s = gray2x2().sample_bilinear(Point2::new(0.25, 0.75)).unwrap();
        assert!((s.value() - reference).abs() < 1e-12);
    }

    #[test]
    fn out_of_bounds_is_a_value() {
        let img = gray2x2();
        assert!(img.sample_bilinear(Point2::new(-0.01, 0.0)).is_none());
        assert!(img.sample_bilinear(Point2::new(1.0, 1.001)).is_none());
        assert!(img.sample_bilinear(Point2::new(1.0, 1.0)).is_some());
    }

    #[test]
    fn grayscale_weights() {
        let white = Image::filled(4, 3, 3, 1.0);
        assert!(white.to_grayscale().data().iter().all(|&v| (v - 1.0).abs() < 1e-12));
        let red = Image::from_vec(1, 1, 3, vec![1.0, 0.0, 0.0]).unwrap();
        assert!((red.to_grayscale().get(0, 0, 0) - 0.299).abs() < 1e-15);
        let g = gray2x2();
        assert_eq!(g.to_grayscale(), g);
    }

    #[test]
    fn rejects_bad_buffers() {
        assert!(matches!(
            Image::from_vec(2, 2, 1, vec![0.0; 3]),
            Err(ImageError::Shape { .. })
        ));
        assert!(matches!(
            Image::from_vec(1, 1, 1, vec![1.5]),
            Err(ImageError::Range(0))
        ));
        assert!(matches!(
            Image::from_vec(1, 1, 2, vec![0.0; 2]),
            Err(ImageError::Channels(2))
        ));
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut seed = 12345u64;
        let img = Image::from_fn(16, 16, 3, |_, _, _| {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (seed >> 11) as f64 / (1u64 << 53) as f64
        });
        let path = dir.path().join("rt.png");
        img.save(&path).unwrap();
        let back = Image::load(&path).unwrap();
        assert!(img.same_shape(&back));
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn load_errors_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            Image::load(dir.path().join("nope.png")),
            Err(ImageError::Missing(_))
        ));
        let fake = dir.path().join("fake.png");
        fs::write(&fake, "this is not a png at all").unwrap();
        assert!(matches!(Image::load(&fake), Err(ImageError::Corrupt { .. })));
        let bmp = dir.path().join("tiny.bmp");
        let mut header = b"BM".to_vec();
        header.extend_from_slice(&[0u8; 60]);
        fs::write(&bmp, header).unwrap();
        assert!(matches!(Image::load(&bmp), Err(ImageError::Unsupported(_))));
    }

    proptest! {
        #[test]
        fn linear_along_rows(a in 0.0f64..1.0, b in 0.0f64..1.0, t in 0.0f64..=1.0) {
            let img = Image::from_vec(2, 1, 1, vec![a, b]).unwrap();
            let s = img.sample_bilinear(Point2::new(t, 0.0)).unwrap().value();
            prop_assert!((s - ((1.0 - t) * a + t * b)).abs() < 1e-12);
        }

        #[test]
        fn grayscale_idempotent(vals in proptest::collection::vec(0.0f64..1.0, 12)) {
            let img = Image::from_vec(2, 2, 3, vals).unwrap();
            let g = img.to_grayscale();
            prop_assert_eq!(g.to_grayscale(), g);
        }
    }
}
