//! On-disk formats: grayscale images, minutiae lists, the weight and map
//! container, CSV reports and SVG plots. Every writer goes through
//! [`write_atomic`].

mod container;
mod image;
mod minutiae;
mod report;

use std::io::Write;
use std::path::Path;

pub use container::{
    decode_weights, encode_weights, maps_to_store, read_weights, store_to_maps, write_weights, CONTAINER_MAGIC,
};
pub use image::{
    decode_image, load_image, quantize, save_gray_png, save_pgm, save_rgb_png, angle_to_unit,
};
pub use minutiae::{format_minutiae, parse_minutiae, read_minutiae, write_minutiae};
pub use report::{
    match_rows_csv, operating_points_csv, pr_curve_svg, ranking_csv, direct_win_csv, read_f1_table, MatchRow,
};

use crate::error::Result;

/// Writes `bytes` to a temporary file beside `path`, then renames it over
/// `path`, so readers never observe a partial file.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
