//! Post-processing perturbations: Gaussian blur, JPEG round trip, Gaussian noise.

use std::fmt;
use std::str::FromStr;

use image::codecs::jpeg::JpegEncoder;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::imaging::Image;
use crate::init::rng;
use crate::registry::Registry;
use crate::spectral::reflect;

pub trait Perturber {
    /// Parameter values of the standard robustness grid.
    fn grid(&self) -> &'static [f64];

    /// Checks a parameter independent of the grid.
    fn validate(&self, parameter: f64) -> Result<()>;

    fn apply(&self, image: &Image, parameter: f64, seed: u64) -> Result<Image>;
}

/// A named perturbation and its parameter (kernel size, quality, or sigma on the 0–255 scale).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub kind: String,
    pub parameter: f64,
}

impl Perturbation {
    pub fn new(kind: &str, parameter: f64) -> Self {
        Perturbation { kind: canonical(kind).to_string(), parameter }
    }

    pub fn identity() -> Self {
        Perturbation::new("identity", 0.0)
    }
}

impl fmt::Display for Perturbation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind.as_str() {
            "identity" => write!(f, "identity"),
            "gaussian_blur" => write!(f, "gaussian_blur kernel={}", self.parameter),
            "jpeg_compression" => write!(f, "jpeg_compression quality={}", self.parameter),
            "gaussian_noise" => write!(f, "gaussian_noise sigma={}", self.parameter),
            k => write!(f, "{k} {}", self.parameter),
        }
    }
}

/// Parses `kind:param`, accepting the short names `blur`, `jpeg`, `noise`.
impl FromStr for Perturbation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if canonical(s.trim()) == "identity" {
            return Ok(Perturbation::identity());
        }
        let (kind, param) = s
            .split_once(':')
            .ok_or_else(|| Error::validation(format!("perturbation '{s}' must look like kind:param")))?;
        let parameter: f64 = param
            .trim()
            .parse()
            .map_err(|_| Error::validation(format!("perturbation parameter '{param}' is not a number")))?;
        Ok(Perturbation::new(kind.trim(), parameter))
    }
}

fn canonical(kind: &str) -> &str {
    match kind {
        "blur" => "gaussian_blur",
        "jpeg" => "jpeg_compression",
        "noise" => "gaussian_noise",
        "none" | "clean" => "identity",
        k => k,
    }
}

pub fn perturber_registry() -> Registry<dyn Perturber> {
    let mut r: Registry<dyn Perturber> = Registry::new("perturbation");
    r.register("identity", Box::new(Identity));
    r.register("gaussian_blur", Box::new(GaussianBlur));
    r.register("jpeg_compression", Box::new(JpegRoundTrip));
    r.register("gaussian_noise", Box::new(GaussianNoise));
    r
}

/// Applies `p`. Unless `custom` is set, the parameter must lie on the standard grid.
pub fn perturb(image: &Image, p: &Perturbation, seed: u64, custom: bool) -> Result<Image> {
    image.require_rgb()?;
    let reg = perturber_registry();
    let imp = reg.get(&p.kind)?;
    imp.validate(p.parameter)?;
    if !custom && p.kind != "identity" {
        ensure(imp.grid().contains(&p.parameter), || {
            format!("{p} is off the standard grid {:?}; pass the custom flag to allow it", imp.grid())
        })?;
    }
    imp.apply(image, p.parameter, seed)
}

/// Blur 3/9/15, JPEG 50/75, noise 3/9/15.
pub fn standard_grid() -> Vec<Perturbation> {
    let reg = perturber_registry();
    ["gaussian_blur", "jpeg_compression", "gaussian_noise"]
        .iter()
        .flat_map(|k| reg.get(k).unwrap().grid().iter().map(move |&v| Perturbation::new(k, v)))
        .collect()
}

struct Identity;

impl Perturber for Identity {
    fn grid(&self) -> &'static [f64] {
        &[]
    }

    fn validate(&self, _: f64) -> Result<()> {
        Ok(())
    }

    fn apply(&self, image: &Image, _: f64, _: u64) -> Result<Image> {
        Ok(image.clone())
    }
}

struct GaussianBlur;

/// Kernel-size-to-sigma rule `0.3((k−1)/2 − 1) + 0.8`.
pub fn blur_sigma(kernel: usize) -> f64 {
    0.3 * ((kernel as f64 - 1.0) / 2.0 - 1.0) + 0.8
}

pub fn gaussian_kernel(kernel: usize) -> Vec<f64> {
    let sigma = blur_sigma(kernel);
    let r = (kernel / 2) as f64;
    let w: Vec<f64> = (0..kernel).map(|i| (-((i as f64 - r).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// One separable pass along rows (`horizontal`) or columns, borders mirrored without
/// repeating the edge sample. Each output is the centre plus weighted differences, so
/// flat neighbourhoods are reproduced exactly.
fn blur_pass(src: &[f64], h: usize, w: usize, k: &[f64], horizontal: bool) -> Vec<f64> {
    let r = (k.len() / 2) as isize;
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            let centre = src[y * w + x];
            let mut acc = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                let o = i as isize - r;
                let v = if horizontal {
                    src[y * w + reflect(x as isize + o, w)]
                } else {
                    src[reflect(y as isize + o, h) * w + x]
                };
                acc += kv * (v - centre);
            }
            out[y * w + x] = centre + acc;
        }
    }
    out
}

impl Perturber for GaussianBlur {
    fn grid(&self) -> &'static [f64] {
        &[3.0, 9.0, 15.0]
    }

    fn validate(&self, k: f64) -> Result<()> {
        ensure(k.fract() == 0.0 && k >= 1.0, || format!("blur kernel {k} must be a positive integer"))?;
        ensure(k as usize % 2 == 1, || format!("blur kernel {k} must be odd"))
    }

    fn apply(&self, image: &Image, k: f64, _: u64) -> Result<Image> {
        let kernel = gaussian_kernel(k as usize);
        let mut out = image.clone();
        for c in 0..image.channels {
            let tmp = blur_pass(image.channel(c), image.h, image.w, &kernel, true);
            let done = blur_pass(&tmp, image.h, image.w, &kernel, false);
            out.channel_mut(c).copy_from_slice(&done);
        }
        Ok(out)
    }
}

struct JpegRoundTrip;

impl Perturber for JpegRoundTrip {
    fn grid(&self) -> &'static [f64] {
        &[50.0, 75.0]
    }

    fn validate(&self, q: f64) -> Result<()> {
        ensure(q.fract() == 0.0 && (1.0..=100.0).contains(&q), || format!("JPEG quality {q} must be an integer in 1..=100"))
    }

    fn apply(&self, image: &Image, q: f64, _: u64) -> Result<Image> {
        let rgb = image.to_rgb8()?;
        let mut buf = Vec::new();
        JpegEncoder::new_with_quality(&mut buf, q as u8).encode_image(&rgb)?;
        let decoded = image::load_from_memory_with_format(&buf, image::ImageFormat::Jpeg)?;
        Ok(Image::from_rgb8(&decoded.to_rgb8()))
    }
}

struct GaussianNoise;

impl Perturber for GaussianNoise {
    fn grid(&self) -> &'static [f64] {
        &[3.0, 9.0, 15.0]
    }

    fn validate(&self, sigma: f64) -> Result<()> {
        ensure(sigma.is_finite() && sigma >= 0.0, || format!("noise sigma {sigma} must be non-negative"))
    }

    fn apply(&self, image: &Image, sigma: f64, seed: u64) -> Result<Image> {
        if sigma == 0.0 {
            return Ok(image.clone());
        }
        let mut r = rng(seed);
        let normal = Normal::new(0.0, sigma / 255.0).map_err(|e| Error::validation(e.to_string()))?;
        let mut out = image.clone();
        for v in out.data.iter_mut() {
            *v = (*v + normal.sample(&mut r)).clamp(0.0, 1.0);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parsing_and_labels() {
        let p: Perturbation = "blur:9".parse().unwrap();
        assert_eq!(p, Perturbation::new("gaussian_blur", 9.0));
        assert_eq!(p.to_string(), "gaussian_blur kernel=9");
        assert_eq!("none".parse::<Perturbation>().unwrap(), Perturbation::identity());
        assert!("blur".parse::<Perturbation>().is_err());
    }

    #[test]
    fn standard_grid_has_eight_cells() {
        assert_eq!(standard_grid().len(), 8);
    }

    #[test]
    fn blur_sigma_rule() {
        assert!((blur_sigma(3) - 0.8).abs() < 1e-15);
        assert!((blur_sigma(15) - 2.6).abs() < 1e-12);
        let k = gaussian_kernel(9);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
