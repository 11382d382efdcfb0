//! Splice, copy-move and removal forgeries with exact change masks, plus region fillers.

use std::f64::consts::PI;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::imaging::{Image, Mask};
use crate::init::{rng, Rng};
use crate::registry::Registry;

/// An image together with its salient-object mask.
#[derive(Clone, Copy, Debug)]
pub struct Source<'a> {
    pub image: &'a Image,
    pub mask: &'a Mask,
}

/// Rotation about the object centroid, uniform scale, then translation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Similarity {
    pub scale: f64,
    pub angle: f64,
    pub shift: (f64, f64),
}

#[derive(Clone, Debug)]
pub struct Forgery {
    pub image: Image,
    /// Pixels whose value changed in any channel.
    pub mask: Mask,
    pub transform: Option<Similarity>,
    /// Seed of the attempt that succeeded.
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForgeryConfig {
    pub scale: (f64, f64),
    /// Maximum absolute rotation in degrees.
    pub max_angle_deg: f64,
    /// Copy-move shifts shorter than this many pixels are rejected.
    pub min_shift: f64,
    /// A forgery changing fewer pixels than this is retried.
    pub min_changed: usize,
    pub max_retries: u32,
}

impl Default for ForgeryConfig {
    fn default() -> Self {
        ForgeryConfig { scale: (0.7, 1.3), max_angle_deg: 30.0, min_shift: 4.0, min_changed: 16, max_retries: 8 }
    }
}

/// Fills a region of an image.
pub trait Filler {
    fn fill(&self, image: &Image, region: &Mask) -> Result<Image>;
}

/// Iterative neighbourhood mean: each pass fills every missing pixel that touches a known
/// pixel (8-neighbourhood) with the mean of those known neighbours.
pub struct MeanFill;

impl Filler for MeanFill {
    fn fill(&self, image: &Image, region: &Mask) -> Result<Image> {
        ensure(image.dims() == region.dims(), || "fill region and image differ in size".into())?;
        ensure(region.count() < region.data.len(), || "cannot fill a region covering the whole image".into())?;
        let (h, w) = image.dims();
        let mut known: Vec<bool> = region.data.iter().map(|&v| v == 0).collect();
        let mut out = image.clone();
        let mut remaining = region.count();
        while remaining > 0 {
            let mut updates = Vec::new();
            for y in 0..h {
                for x in 0..w {
                    if known[y * w + x] {
                        continue;
                    }
                    let mut acc = [0.0; 3];
                    let mut n = 0;
                    for dy in -1isize..=1 {
                        for dx in -1isize..=1 {
                            let (ny, nx) = (y as isize + dy, x as isize + dx);
                            if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                                continue;
                            }
                            let (ny, nx) = (ny as usize, nx as usize);
                            if known[ny * w + nx] {
                                for (c, a) in acc.iter_mut().enumerate().take(image.channels) {
                                    *a += out.get(c, ny, nx);
                                }
                                n += 1;
                            }
                        }
                    }
                    if n > 0 {
                        updates.push((y, x, acc.map(|a| a / n as f64)));
                    }
                }
            }
            for (y, x, v) in &updates {
                for (c, &val) in v.iter().enumerate().take(image.channels) {
                    out.set(c, *y, *x, val);
                }
                known[y * w + x] = true;
            }
            remaining -= updates.len();
        }
        Ok(out)
    }
}

/// Offline stand-in for a generative editor: rotates the colour channels inside the region.
pub struct Recolor;

impl Filler for Recolor {
    fn fill(&self, image: &Image, region: &Mask) -> Result<Image> {
        image.require_rgb()?;
        ensure(image.dims() == region.dims(), || "edit region and image differ in size".into())?;
        let mut out = image.clone();
        for (i, &m) in region.data.iter().enumerate() {
            if m != 0 {
                let n = image.h * image.w;
                let (r, g, b) = (image.data[i], image.data[n + i], image.data[2 * n + i]);
                out.data[i] = g;
                out.data[n + i] = b;
                out.data[2 * n + i] = r;
            }
        }
        Ok(out)
    }
}

struct ExternalFiller;

impl Filler for ExternalFiller {
    fn fill(&self, _: &Image, _: &Mask) -> Result<Image> {
        Err(Error::validation("filler 'external' needs an inpainting client registered under that name"))
    }
}

/// `mean` (default), `recolor`, and the `external` placeholder.
pub fn filler_registry() -> Registry<dyn Filler> {
    let mut r: Registry<dyn Filler> = Registry::new("filler");
    r.register("mean", Box::new(MeanFill));
    r.register("recolor", Box::new(Recolor));
    r.register("external", Box::new(ExternalFiller));
    r
}

/// Inputs to one synthesis call.
pub struct ForgeryRequest<'a> {
    pub host: Source<'a>,
    pub donor: Option<Source<'a>>,
    pub filler: &'a dyn Filler,
    pub config: &'a ForgeryConfig,
}

pub trait ForgerySynth {
    fn synth(&self, req: &ForgeryRequest<'_>, seed: u64) -> Result<Forgery>;
}

/// `splice`, `copymove`, `removal`.
pub fn forgery_registry() -> Registry<dyn ForgerySynth> {
    let mut r: Registry<dyn ForgerySynth> = Registry::new("forgery kind");
    r.register("splice", Box::new(Splice));
    r.register("copymove", Box::new(CopyMove));
    r.register("removal", Box::new(Removal));
    r
}

pub fn synth_forgery(kind: &str, req: &ForgeryRequest<'_>, seed: u64) -> Result<Forgery> {
    ensure(req.host.image.dims() == req.host.mask.dims(), || "host image and mask differ in size".into())?;
    req.host.image.require_rgb()?;
    forgery_registry().get(kind)?.synth(req, seed)
}

/// Rounds every touched value onto the 8-bit grid so the forgery survives a PNG round trip.
fn quantize_touched(original: &Image, img: &mut Image) {
    for (v, o) in img.data.iter_mut().zip(&original.data) {
        if v != o {
            *v = crate::imaging::to_u8(*v) as f64 / 255.0;
        }
    }
}

fn changed(a: &Image, b: &Image) -> Mask {
    let n = a.h * a.w;
    Mask::from_fn(a.h, a.w, |y, x| {
        let i = y * a.w + x;
        (0..a.channels).any(|c| a.data[c * n + i] != b.data[c * n + i])
    })
}

fn centroid(mask: &Mask) -> (f64, f64) {
    let (mut sy, mut sx, mut n) = (0.0, 0.0, 0.0);
    for y in 0..mask.h {
        for x in 0..mask.w {
            if mask.get(y, x) {
                sy += y as f64;
                sx += x as f64;
                n += 1.0;
            }
        }
    }
    (sy / n, sx / n)
}

fn sample_transform(r: &mut Rng, cfg: &ForgeryConfig, from: (f64, f64), h: usize, w: usize) -> Similarity {
    let scale = r.random_range(cfg.scale.0..=cfg.scale.1);
    let angle = r.random_range(-cfg.max_angle_deg..=cfg.max_angle_deg) * PI / 180.0;
    let to = (r.random_range(0.0..h as f64), r.random_range(0.0..w as f64));
    Similarity { scale, angle, shift: (to.0 - from.0, to.1 - from.1) }
}

/// Pastes the object under `src.mask` into `dst` with nearest-neighbour inverse mapping.
fn paste(dst: &Image, src: Source<'_>, t: &Similarity) -> Image {
    let (cy, cx) = centroid(src.mask);
    let (cos, sin) = (t.angle.cos(), t.angle.sin());
    let mut out = dst.clone();
    for y in 0..dst.h {
        for x in 0..dst.w {
            let (dy, dx) = (y as f64 - cy - t.shift.0, x as f64 - cx - t.shift.1);
            let sy = (cos * dy + sin * dx) / t.scale + cy;
            let sx = (-sin * dy + cos * dx) / t.scale + cx;
            let (ry, rx) = (sy.round(), sx.round());
            if ry < 0.0 || rx < 0.0 || ry >= src.image.h as f64 || rx >= src.image.w as f64 {
                continue;
            }
            let (ry, rx) = (ry as usize, rx as usize);
            if src.mask.get(ry, rx) {
                for c in 0..3 {
                    out.set(c, y, x, src.image.get(c, ry, rx));
                }
            }
        }
    }
    out
}

fn transplant(req: &ForgeryRequest<'_>, object: Source<'_>, seed: u64, min_shift: f64) -> Result<Forgery> {
    ensure(!object.mask.is_empty(), || "object mask is empty".into())?;
    object.image.require_rgb()?;
    let host = req.host.image;
    let from = centroid(object.mask);
    for attempt in 0..=req.config.max_retries {
        let s = seed.wrapping_add(attempt as u64);
        let mut r = rng(s);
        let t = sample_transform(&mut r, req.config, from, host.h, host.w);
        if t.shift.0.hypot(t.shift.1) < min_shift {
            continue;
        }
        let mut image = paste(host, object, &t);
        quantize_touched(host, &mut image);
        let mask = changed(host, &image);
        if mask.count() >= req.config.min_changed {
            return Ok(Forgery { image, mask, transform: Some(t), seed: s });
        }
    }
    Err(Error::runtime(format!(
        "no usable placement after {} attempts from seed {seed}",
        req.config.max_retries + 1
    )))
}

struct Splice;

impl ForgerySynth for Splice {
    fn synth(&self, req: &ForgeryRequest<'_>, seed: u64) -> Result<Forgery> {
        let donor = req.donor.ok_or_else(|| Error::validation("splice needs a donor image and mask"))?;
        ensure(donor.image.dims() == donor.mask.dims(), || "donor image and mask differ in size".into())?;
        transplant(req, donor, seed, 0.0)
    }
}

struct CopyMove;

impl ForgerySynth for CopyMove {
    fn synth(&self, req: &ForgeryRequest<'_>, seed: u64) -> Result<Forgery> {
        transplant(req, req.host, seed, req.config.min_shift)
    }
}

struct Removal;

impl ForgerySynth for Removal {
    fn synth(&self, req: &ForgeryRequest<'_>, seed: u64) -> Result<Forgery> {
        ensure(!req.host.mask.is_empty(), || "removal needs a non-empty salient mask".into())?;
        let mut image = req.filler.fill(req.host.image, req.host.mask)?;
        quantize_touched(req.host.image, &mut image);
        let mask = changed(req.host.image, &image);
        ensure(!mask.is_empty(), || "filling the salient region changed no pixel".into())?;
        Ok(Forgery { image, mask, transform: None, seed })
    }
}

/// Keeps a manipulation iff more than `threshold` of its pixels are salient. Empty masks fail.
pub fn saliency_overlap_filter(gt: &Mask, salient: &Mask, threshold: f64) -> Result<bool> {
    ensure(gt.dims() == salient.dims(), || "mask and salient mask differ in size".into())?;
    let n = gt.count();
    if n == 0 {
        return Ok(false);
    }
    Ok(gt.intersection_count(salient) as f64 / n as f64 > threshold)
}
