use crate::cmr::squared_distance_transform;
use crate::error::{structural, Result};
use crate::postprocess::{Minutia, MinutiaSet};
use crate::tensor::Tensor;

/// Minutiae this close to the background (or closer) are dropped, pixels.
pub const DEFAULT_MARGIN: f64 = 14.0;

#[derive(Debug, Clone, PartialEq)]
pub struct CropResult {
    /// Surviving minutiae in crop coordinates; the set's extent is the crop.
    pub set: MinutiaSet,
    /// Top-left corner of the crop in the source image, `(x, y)`.
    pub origin: (usize, usize),
    /// Set when the mask had no foreground; `set` is then empty.
    pub empty_mask: bool,
}

/// Crops to the foreground bounding box of `mask` and drops minutiae whose
/// Euclidean distance to the nearest background pixel is at most `margin`.
/// Pixels just outside the bounding box count as background.
pub fn crop_and_filter(set: &MinutiaSet, mask: &Tensor, margin: f64) -> Result<CropResult> {
    let (h, w, c) = mask.shape();
    if c != 1 {
        return Err(structural("mask must have one channel"));
    }
    if (set.height(), set.width()) != (h, w) {
        return Err(structural(format!(
            "mask is {w}x{h} but the minutiae belong to a {}x{} image",
            set.width(),
            set.height()
        )));
    }
    let fg = |y: usize, x: usize| mask.get(y, x, 0) > 0.5;
    let (mut y0, mut y1, mut x0, mut x1) = (usize::MAX, 0, usize::MAX, 0);
    for y in 0..h {
        for x in 0..w {
            if fg(y, x) {
                y0 = y0.min(y);
                y1 = y1.max(y);
                x0 = x0.min(x);
                x1 = x1.max(x);
            }
        }
    }
    if y0 == usize::MAX {
        return Ok(CropResult {
            set: MinutiaSet::empty(0, 0),
            origin: (0, 0),
            empty_mask: true,
        });
    }
    let (bh, bw) = (y1 - y0 + 1, x1 - x0 + 1);
    // One-pixel background frame around the box.
    let (fh, fw) = (bh + 2, bw + 2);
    let d2 = squared_distance_transform(fh, fw, |y, x| {
        y == 0 || x == 0 || y == fh - 1 || x == fw - 1 || !fg(y0 + y - 1, x0 + x - 1)
    });
    let kept = set
        .iter()
        .filter(|m| (y0..=y1).contains(&m.y) && (x0..=x1).contains(&m.x))
        .filter(|m| {
            let d = d2[(m.y - y0 + 1) * fw + (m.x - x0 + 1)].map_or(f64::INFINITY, |v| (v as f64).sqrt());
            d > margin
        })
        .map(|m| Minutia {
            x: m.x - x0,
            y: m.y - y0,
            ..*m
        })
        .collect();
    Ok(CropResult {
        set: MinutiaSet::new(bw, bh, kept)?,
        origin: (x0, y0),
        empty_mask: false,
    })
}
