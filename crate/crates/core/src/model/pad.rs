use crate::error::{structural, Result};
use crate::tensor::Tensor;

/// Enough to undo [`pad_to_multiple`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PadRecord {
    pub original_height: usize,
    pub original_width: usize,
    pub padded_height: usize,
    pub padded_width: usize,
    pub fill: f32,
}

impl PadRecord {
    pub fn is_identity(&self) -> bool {
        self.original_height == self.padded_height && self.original_width == self.padded_width
    }

    /// Crops a padded-resolution map back to the original extent.
    pub fn crop(&self, padded: &Tensor) -> Result<Tensor> {
        if padded.height() != self.padded_height || padded.width() != self.padded_width {
            return Err(structural(format!(
                "expected a {}x{} map to crop, got {}x{}",
                self.padded_height,
                self.padded_width,
                padded.height(),
                padded.width()
            )));
        }
        if self.is_identity() {
            return Ok(padded.clone());
        }
        padded.crop(self.original_height, self.original_width)
    }
}

/// Pads a single-channel image on the right and bottom with its top-left
/// intensity until both sides are multiples of `multiple`.
pub fn pad_to_multiple(image: &Tensor, multiple: usize) -> Result<(Tensor, PadRecord)> {
    if image.channels() != 1 {
        return Err(structural(format!(
            "expected a single-channel image, got {} channels",
            image.channels()
        )));
    }
    if multiple == 0 {
        return Err(structural("padding multiple must be positive"));
    }
    let (h, w) = (image.height(), image.width());
    let (ph, pw) = (h.div_ceil(multiple) * multiple, w.div_ceil(multiple) * multiple);
    let fill = image.get(0, 0, 0);
    let record = PadRecord {
        original_height: h,
        original_width: w,
        padded_height: ph,
        padded_width: pw,
        fill,
    };
    if record.is_identity() {
        return Ok((image.clone(), record));
    }
    let mut data = Vec::with_capacity(ph * pw);
    for y in 0..ph {
        if y < h {
            data.extend_from_slice(&image.data()[y * w..(y + 1) * w]);
            data.extend(std::iter::repeat_n(fill, pw - w));
        } else {
            data.extend(std::iter::repeat_n(fill, pw));
        }
    }
    Ok((Tensor::from_vec(ph, pw, 1, data)?, record))
}

pub fn pad_to_multiple_32(image: &Tensor) -> Result<(Tensor, PadRecord)> {
    pad_to_multiple(image, 32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn aligned_input_is_untouched() {
        let img = Tensor::from_fn(256, 320, 1, |y, x, _| ((y + x) % 7) as f32 / 7.0);
        let (p, rec) = pad_to_multiple_32(&img).unwrap();
        assert!(rec.is_identity());
        assert_eq!(p, img);
    }

    #[test]
    fn pads_with_top_left_intensity() {
        let img = Tensor::from_fn(300, 300, 1, |y, x, _| if y == 0 && x == 0 { 0.25 } else { 0.9 });
        let (p, rec) = pad_to_multiple_32(&img).unwrap();
        assert_eq!((p.height(), p.width()), (320, 320));
        assert_eq!(rec.fill, 0.25);
        assert_eq!(p.get(310, 5, 0), 0.25);
        assert_eq!(p.get(5, 310, 0), 0.25);
        assert_eq!(p.get(299, 299, 0), 0.9);
    }

    #[test]
    fn rejects_multichannel() {
        assert!(pad_to_multiple_32(&Tensor::zeros(4, 4, 2)).is_err());
    }

    proptest! {
        #[test]
        fn pad_then_crop_is_identity(h in 1usize..80, w in 1usize..80, seed in 0u32..1000) {
            let img = Tensor::from_fn(h, w, 1, |y, x, _| ((y * 31 + x * 17 + seed as usize) % 97) as f32 / 97.0);
            let (p, rec) = pad_to_multiple_32(&img).unwrap();
            prop_assert_eq!(p.height() % 32, 0);
            prop_assert_eq!(p.width() % 32, 0);
            prop_assert!(p.height() < h + 32 && p.width() < w + 32);
            prop_assert_eq!(rec.crop(&p).unwrap(), img);
        }
    }
}
