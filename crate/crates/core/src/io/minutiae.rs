use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::postprocess::{wrap_angle, Minutia, MinutiaKind, MinutiaSet};

use super::write_atomic;

/// Text form: `#` comment lines, a `width<TAB>height` header, then one
/// `x<TAB>y<TAB>theta<TAB>E|B<TAB>quality` record per minutia. Angles are
/// radians; angle and quality carry six decimals.
pub fn format_minutiae(set: &MinutiaSet) -> String {
    let mut s = String::with_capacity(32 * (set.len() + 2));
    s.push_str("# x\ty\ttheta_rad\ttype\tquality\n");
    let _ = writeln!(s, "{}\t{}", set.width(), set.height());
    for m in set {
        let _ = writeln!(s, "{}\t{}\t{:.6}\t{}\t{:.6}", m.x, m.y, m.theta, m.kind.code(), m.quality);
    }
    s
}

/// Parses [`format_minutiae`] output. Fields may be separated by any
/// whitespace; angles are wrapped into `(-π, π]`.
pub fn parse_minutiae(text: &str, source: &Path) -> Result<MinutiaSet> {
    let err = |line: usize, msg: String| Error::Parse {
        path: source.to_path_buf(),
        line,
        msg,
    };
    let mut dims: Option<(usize, usize)> = None;
    let mut minutiae = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let Some((w, h)) = dims else {
            if fields.len() != 2 {
                return Err(err(line_no, format!("expected `width height` header, got {} fields", fields.len())));
            }
            let w = parse_field::<usize>(fields[0], "width").map_err(|m| err(line_no, m))?;
            let h = parse_field::<usize>(fields[1], "height").map_err(|m| err(line_no, m))?;
            if w == 0 || h == 0 {
                return Err(err(line_no, "image dimensions must be positive".into()));
            }
            dims = Some((w, h));
            continue;
        };
        if fields.len() != 5 {
            return Err(err(line_no, format!("expected 5 fields, got {}", fields.len())));
        }
        let x = parse_field::<usize>(fields[0], "x").map_err(|m| err(line_no, m))?;
        let y = parse_field::<usize>(fields[1], "y").map_err(|m| err(line_no, m))?;
        let theta = parse_field::<f64>(fields[2], "theta").map_err(|m| err(line_no, m))?;
        let kind = MinutiaKind::from_code(fields[3])
            .ok_or_else(|| err(line_no, format!("type must be E or B, got `{}`", fields[3])))?;
        let quality = parse_field::<f64>(fields[4], "quality").map_err(|m| err(line_no, m))?;
        if !theta.is_finite() || !quality.is_finite() {
            return Err(err(line_no, "non-finite angle or quality".into()));
        }
        if x >= w || y >= h {
            return Err(err(line_no, format!("({x}, {y}) lies outside the {w}x{h} image")));
        }
        minutiae.push(Minutia {
            x,
            y,
            theta: wrap_angle(theta),
            kind,
            quality,
        });
    }
    let (w, h) = dims.ok_or_else(|| err(0, "missing `width height` header".into()))?;
    MinutiaSet::new(w, h, minutiae).map_err(|e| err(0, e.to_string()))
}

fn parse_field<T: std::str::FromStr>(s: &str, what: &str) -> std::result::Result<T, String> {
    s.parse().map_err(|_| format!("bad {what} `{s}`"))
}

pub fn read_minutiae(path: impl AsRef<Path>) -> Result<MinutiaSet> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_minutiae(&text, path)
}

pub fn write_minutiae(path: impl AsRef<Path>, set: &MinutiaSet) -> Result<()> {
    write_atomic(path, format_minutiae(set).as_bytes())
}
