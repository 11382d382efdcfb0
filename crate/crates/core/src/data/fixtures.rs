//! Seeded synthetic sources for smoke runs: a smooth textured background with one
//! elliptical salient object.

use rand::Rng as _;

use crate::data::forgery::{filler_registry, synth_forgery, ForgeryConfig, ForgeryRequest, Source};
use crate::error::Result;
use crate::imaging::{Image, Mask};
use crate::init::rng;

pub fn synthetic_source(size: usize, seed: u64) -> (Image, Mask) {
    let mut r = rng(seed);
    let mut waves = Vec::new();
    for _ in 0..3 {
        let fy: f64 = r.random_range(0.5..3.0);
        let fx: f64 = r.random_range(0.5..3.0);
        let ph: f64 = r.random_range(0.0..6.3);
        let base: f64 = r.random_range(0.2..0.6);
        waves.push((fy, fx, ph, base));
    }
    let s = size as f64;
    let cy = r.random_range(0.3..0.7) * s;
    let cx = r.random_range(0.3..0.7) * s;
    let ry = r.random_range(0.12..0.2) * s;
    let rx = r.random_range(0.12..0.2) * s;
    let colour: [f64; 3] = [r.random_range(0.1..0.9), r.random_range(0.1..0.9), r.random_range(0.1..0.9)];
    let inside = |y: usize, x: usize| {
        let dy = (y as f64 + 0.5 - cy) / ry;
        let dx = (x as f64 + 0.5 - cx) / rx;
        dy * dy + dx * dx <= 1.0
    };
    let mut data = vec![0.0; 3 * size * size];
    for c in 0..3 {
        let (fy, fx, ph, base) = waves[c];
        for y in 0..size {
            for x in 0..size {
                let t = 2.0 * std::f64::consts::PI;
                let mut v = base + 0.2 * (t * fy * y as f64 / s + t * fx * x as f64 / s + ph).sin();
                if inside(y, x) {
                    v = colour[c] + 0.08 * ((x + 2 * y + c) % 5) as f64 / 4.0;
                }
                v += r.random_range(-0.02..0.02);
                data[(c * size + y) * size + x] = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
            }
        }
    }
    let image = Image::new(3, size, size, data).expect("fixture image");
    (image, Mask::from_fn(size, size, inside))
}

/// `n` copy-move forgeries of distinct synthetic sources, as (image, ground truth, salient mask).
pub fn copymove_set(n: usize, size: usize, seed: u64) -> Result<Vec<(Image, Mask, Mask)>> {
    let fillers = filler_registry();
    let config = ForgeryConfig::default();
    (0..n)
        .map(|i| {
            let (image, salient) = synthetic_source(size, seed.wrapping_add(i as u64 * 7919));
            let req = ForgeryRequest {
                host: Source { image: &image, mask: &salient },
                donor: None,
                filler: fillers.get("mean")?,
                config: &config,
            };
            let f = synth_forgery("copymove", &req, seed.wrapping_add(i as u64))?;
            Ok((f.image, f.mask, salient))
        })
        .collect()
}
