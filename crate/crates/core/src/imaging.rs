//! Planar image, probability map and binary mask containers plus PNG/JPEG I/O.

use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use crate::error::{ensure, Error, Result};

/// A single real-valued plane in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn new(h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        ensure(data.len() == h * w, || format!("plane data has {} values, expected {h}x{w}", data.len()))?;
        Ok(Plane { h, w, data })
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        Plane { h, w, data: vec![0.0; h * w] }
    }

    pub fn filled(h: usize, w: usize, v: f64) -> Self {
        Plane { h, w, data: vec![v; h * w] }
    }

    pub fn from_fn(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                data.push(f(y, x));
            }
        }
        Plane { h, w, data }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.w + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f64) {
        self.data[y * self.w + x] = v;
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Writes the plane as an 8-bit grayscale PNG, mapping `[0, 1]` to `[0, 255]` with rounding.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let img: GrayImage = ImageBuffer::from_fn(self.w as u32, self.h as u32, |x, y| {
            Luma([to_u8(self.get(y as usize, x as usize))])
        });
        img.save(path).map_err(|source| Error::Image { path: path.into(), source })
    }

    /// Bilinear resize; a plane already of that size is returned unchanged.
    pub fn resize(&self, h: usize, w: usize) -> Self {
        if (self.h, self.w) == (h, w) {
            return self.clone();
        }
        let buf: ImageBuffer<Luma<f32>, Vec<f32>> =
            ImageBuffer::from_fn(self.w as u32, self.h as u32, |x, y| Luma([self.get(y as usize, x as usize) as f32]));
        let out = image::imageops::resize(&buf, w as u32, h as u32, image::imageops::FilterType::Triangle);
        Plane { h, w, data: out.pixels().map(|p| p.0[0] as f64).collect() }
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = open(path)?.to_luma8();
        let (w, h) = img.dimensions();
        Ok(Plane {
            h: h as usize,
            w: w as usize,
            data: img.pixels().map(|p| p.0[0] as f64 / 255.0).collect(),
        })
    }
}

/// Planar multi-channel image with values nominally in `[0, 1]`; channel `c` occupies
/// `data[c*h*w .. (c+1)*h*w]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(channels: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        ensure(data.len() == channels * h * w, || {
            format!("image data has {} values, expected {channels}x{h}x{w}", data.len())
        })?;
        Ok(Image { channels, h, w, data })
    }

    pub fn filled(channels: usize, h: usize, w: usize, v: f64) -> Self {
        Image { channels, h, w, data: vec![v; channels * h * w] }
    }

    pub fn from_planes(planes: &[Plane]) -> Result<Self> {
        ensure(!planes.is_empty(), || "image needs at least one plane".into())?;
        let (h, w) = planes[0].dims();
        ensure(planes.iter().all(|p| p.dims() == (h, w)), || "planes differ in size".into())?;
        let data = planes.iter().flat_map(|p| p.data.iter().copied()).collect();
        Ok(Image { channels: planes.len(), h, w, data })
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.h * self.w;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.h * self.w;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn plane(&self, c: usize) -> Plane {
        Plane { h: self.h, w: self.w, data: self.channel(c).to_vec() }
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.h + y) * self.w + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.h + y) * self.w + x] = v;
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn require_rgb(&self) -> Result<()> {
        ensure(self.channels == 3, || {
            format!(
                "expected a 3-channel RGB image, got {} channel(s); replicate grayscale to RGB before this step",
                self.channels
            )
        })
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut out = Image::filled(3, h, w, 0.0);
        for (x, y, p) in img.enumerate_pixels() {
            for c in 0..3 {
                out.set(c, y as usize, x as usize, p.0[c] as f64 / 255.0);
            }
        }
        out
    }

    pub fn to_rgb8(&self) -> Result<RgbImage> {
        self.require_rgb()?;
        Ok(ImageBuffer::from_fn(self.w as u32, self.h as u32, |x, y| {
            let (x, y) = (x as usize, y as usize);
            Rgb([to_u8(self.get(0, y, x)), to_u8(self.get(1, y, x)), to_u8(self.get(2, y, x))])
        }))
    }

    /// Loads any supported image file as RGB.
    pub fn load(path: &Path) -> Result<Self> {
        Ok(Image::from_rgb8(&open(path)?.to_rgb8()))
    }

    /// Saves as 8-bit RGB; the format follows the file extension.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_rgb8()?.save(path).map_err(|source| Error::Image { path: path.into(), source })
    }

    /// Bilinear resize to `h × w`; an image already of that size is returned unchanged.
    pub fn resize(&self, h: usize, w: usize) -> Result<Self> {
        if (self.h, self.w) == (h, w) {
            return Ok(self.clone());
        }
        let resized = image::imageops::resize(&self.to_rgb8()?, w as u32, h as u32, image::imageops::FilterType::Triangle);
        Ok(Image::from_rgb8(&resized))
    }
}

/// Binary mask with values in `{0, 1}`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Mask {
    pub h: usize,
    pub w: usize,
    pub data: Vec<u8>,
}

impl Mask {
    pub fn new(h: usize, w: usize, data: Vec<u8>) -> Result<Self> {
        ensure(data.len() == h * w, || format!("mask data has {} values, expected {h}x{w}", data.len()))?;
        ensure(data.iter().all(|&v| v <= 1), || "mask values must be 0 or 1".into())?;
        Ok(Mask { h, w, data })
    }

    pub fn empty(h: usize, w: usize) -> Self {
        Mask { h, w, data: vec![0; h * w] }
    }

    pub fn full(h: usize, w: usize) -> Self {
        Mask { h, w, data: vec![1; h * w] }
    }

    pub fn from_fn(h: usize, w: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut m = Mask::empty(h, w);
        for y in 0..h {
            for x in 0..w {
                m.data[y * w + x] = f(y, x) as u8;
            }
        }
        m
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.w + x] != 0
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.w + x] = v as u8;
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    pub fn intersection_count(&self, other: &Mask) -> usize {
        self.data.iter().zip(&other.data).filter(|(a, b)| **a != 0 && **b != 0).count()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    pub fn to_plane(&self) -> Plane {
        Plane { h: self.h, w: self.w, data: self.to_f64() }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let img: GrayImage = ImageBuffer::from_fn(self.w as u32, self.h as u32, |x, y| {
            Luma([if self.get(y as usize, x as usize) { 255 } else { 0 }])
        });
        img.save(path).map_err(|source| Error::Image { path: path.into(), source })
    }

    /// Loads a grayscale mask; pixels above mid-gray are foreground.
    pub fn load_png(path: &Path) -> Result<Self> {
        Ok(Mask::from_gray(&open(path)?.to_luma8()))
    }

    pub fn from_gray(img: &GrayImage) -> Self {
        let (w, h) = img.dimensions();
        Mask { h: h as usize, w: w as usize, data: img.pixels().map(|p| (p.0[0] > 127) as u8).collect() }
    }

    /// Nearest-neighbour resize, so the result stays binary.
    pub fn resize_nearest(&self, h: usize, w: usize) -> Self {
        if (self.h, self.w) == (h, w) {
            return self.clone();
        }
        Mask::from_fn(h, w, |y, x| {
            let sy = ((y as f64 + 0.5) * self.h as f64 / h as f64).floor() as usize;
            let sx = ((x as f64 + 0.5) * self.w as f64 / w as f64).floor() as usize;
            self.get(sy.min(self.h - 1), sx.min(self.w - 1))
        })
    }
}

pub(crate) fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn open(path: &Path) -> Result<image::DynamicImage> {
    image::open(path).map_err(|source| match source {
        image::ImageError::IoError(e) => Error::io(path, e),
        other => Error::Image { path: path.into(), source: other },
    })
}
