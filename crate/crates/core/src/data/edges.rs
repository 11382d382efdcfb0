//! Sobel edge targets from binary masks.

use crate::imaging::Mask;
use crate::spectral::reflect;

/// Pixels where `|gx| + |gy| > 0` for the 3×3 Sobel pair, borders mirrored without
/// repeating the edge sample (so a full-frame mask has no edges).
pub fn sobel_edge_target(mask: &Mask) -> Mask {
    let (h, w) = mask.dims();
    let at = |y: isize, x: isize| mask.get(reflect(y, h), reflect(x, w)) as i32;
    Mask::from_fn(h, w, |y, x| {
        let (y, x) = (y as isize, x as isize);
        let gx = (at(y - 1, x + 1) + 2 * at(y, x + 1) + at(y + 1, x + 1))
            - (at(y - 1, x - 1) + 2 * at(y, x - 1) + at(y + 1, x - 1));
        let gy = (at(y + 1, x - 1) + 2 * at(y + 1, x) + at(y + 1, x + 1))
            - (at(y - 1, x - 1) + 2 * at(y - 1, x) + at(y - 1, x + 1));
        gx.abs() + gy.abs() > 0
    })
}
