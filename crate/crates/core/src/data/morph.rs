//! Binary morphology with a disk element, and small-component removal.

use crate::imaging::Mask;

/// Half-widths of the disk rows: row `dy` spans `dx ∈ [-s, s]`.
fn disk_rows(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    (-r..=r)
        .map(|dy| {
            let s = ((r * r - dy * dy) as f64).sqrt().floor() as isize;
            (dy, s)
        })
        .collect()
}

fn row_prefix(mask: &Mask) -> Vec<u32> {
    let (h, w) = mask.dims();
    let mut p = vec![0u32; h * (w + 1)];
    for y in 0..h {
        for x in 0..w {
            p[y * (w + 1) + x + 1] = p[y * (w + 1) + x] + mask.data[y * w + x] as u32;
        }
    }
    p
}

/// Shared sweep: for each pixel, counts ones and in-frame samples under the disk.
fn sweep(mask: &Mask, radius: usize, keep: impl Fn(u32, u32) -> bool) -> Mask {
    let (h, w) = mask.dims();
    let prefix = row_prefix(mask);
    let rows = disk_rows(radius);
    Mask::from_fn(h, w, |y, x| {
        let (mut ones, mut seen) = (0u32, 0u32);
        for &(dy, s) in &rows {
            let yy = y as isize + dy;
            if yy < 0 || yy >= h as isize {
                continue;
            }
            let lo = (x as isize - s).max(0) as usize;
            let hi = ((x as isize + s).min(w as isize - 1)) as usize;
            let base = yy as usize * (w + 1);
            ones += prefix[base + hi + 1] - prefix[base + lo];
            seen += (hi + 1 - lo) as u32;
        }
        keep(ones, seen)
    })
}

/// Keeps a pixel only if every in-frame pixel under the disk is set.
pub fn erode(mask: &Mask, radius: usize) -> Mask {
    sweep(mask, radius, |ones, seen| ones == seen)
}

/// Sets a pixel if any in-frame pixel under the disk is set.
pub fn dilate(mask: &Mask, radius: usize) -> Mask {
    sweep(mask, radius, |ones, _| ones > 0)
}

pub fn open(mask: &Mask, radius: usize) -> Mask {
    dilate(&erode(mask, radius), radius)
}

pub fn close(mask: &Mask, radius: usize) -> Mask {
    erode(&dilate(mask, radius), radius)
}

/// 8-connected components as lists of flat pixel indices, in row-major discovery order.
pub fn components(mask: &Mask) -> Vec<Vec<usize>> {
    let (h, w) = mask.dims();
    let mut seen = vec![false; h * w];
    let mut out = Vec::new();
    for start in 0..h * w {
        if mask.data[start] == 0 || seen[start] {
            continue;
        }
        let mut comp = Vec::new();
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            comp.push(i);
            let (y, x) = ((i / w) as isize, (i % w) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (ny, nx) = (y + dy, x + dx);
                    if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if mask.data[j] != 0 && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

pub fn remove_small_components(mask: &Mask, min_area: usize) -> Mask {
    let mut out = Mask::empty(mask.h, mask.w);
    for comp in components(mask).into_iter().filter(|c| c.len() >= min_area) {
        for i in comp {
            out.data[i] = 1;
        }
    }
    out
}

/// Opening, then closing, then dropping components below `min_area` pixels.
pub fn morph_refine(region: &Mask, radius: usize, min_area: usize) -> Mask {
    remove_small_components(&close(&open(region, radius), radius), min_area)
}
