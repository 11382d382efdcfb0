//! Decoding, resizing and target generation for one record.

use std::path::{Path, PathBuf};

use crate::data::edges::sobel_edge_target;
use crate::data::manifest::DatasetRecord;
use crate::error::{ensure, Error, Result};
use crate::imaging::{Image, Mask};

/// A model-ready sample: image in `[0, 1]`, binary mask, and the edge band of that mask.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub name: String,
    pub image: Image,
    pub mask: Mask,
    pub edge: Mask,
}

pub fn resolve(base: &Path, p: &str) -> PathBuf {
    let path = Path::new(p);
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

/// Loads the manipulated image and mask, resizes both to `size × size` (bilinear for the
/// image, nearest for the mask) and recomputes the edge target from the resized mask.
pub fn load_and_prepare(record: &DatasetRecord, base: &Path, size: usize) -> Result<Prepared> {
    ensure(size > 0, || "target size must be positive".into())?;
    let img_path = resolve(base, &record.manipulated_path);
    let mask_path = resolve(base, &record.mask_path);
    let image = Image::load(&img_path)?;
    let mask = Mask::load_png(&mask_path)?;
    ensure(image.dims() == mask.dims(), || {
        format!(
            "{} is {:?} but its mask {} is {:?}",
            img_path.display(),
            image.dims(),
            mask_path.display(),
            mask.dims()
        )
    })?;
    let image = image.resize(size, size)?;
    let mask = mask.resize_nearest(size, size);
    let edge = sobel_edge_target(&mask);
    Ok(Prepared { name: record.manipulated_path.clone(), image, mask, edge })
}

/// Records that could not be prepared, with the reason.
pub type PrepareFailures = Vec<(String, Error)>;

/// Prepares every record. With `lenient`, failing records are collected instead of aborting.
pub fn prepare_all(records: &[DatasetRecord], base: &Path, size: usize, lenient: bool) -> Result<(Vec<Prepared>, PrepareFailures)> {
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for r in records {
        match load_and_prepare(r, base, size) {
            Ok(p) => ok.push(p),
            Err(e) if lenient => failed.push((r.manipulated_path.clone(), e)),
            Err(e) => return Err(e),
        }
    }
    Ok((ok, failed))
}
