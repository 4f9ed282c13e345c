use std::f64::consts::PI;
use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::write_atomic;

/// Reads an 8-bit grayscale binary PGM (`P5`) or PNG, scaled to `[0, 1]`.
pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor> {
    let bytes = std::fs::read(path.as_ref())?;
    decode_image(&bytes)
}

/// Same as [`load_image`] on an in-memory file; the format is sniffed from
/// the leading bytes.
pub fn decode_image(bytes: &[u8]) -> Result<Tensor> {
    if bytes.starts_with(b"P5") {
        decode_pgm(bytes)
    } else if bytes.starts_with(b"\x89PNG") {
        decode_png(bytes)
    } else {
        Err(Error::Format("neither a binary PGM (P5) nor a PNG".into()))
    }
}

fn from_bytes(width: usize, height: usize, pixels: &[u8]) -> Result<Tensor> {
    Tensor::from_vec(height, width, 1, pixels.iter().map(|&b| b as f32 / 255.0).collect())
}

fn decode_pgm(bytes: &[u8]) -> Result<Tensor> {
    // Header: magic, width, height, maxval, separated by whitespace with
    // `#` comments running to end of line, then one whitespace byte.
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(Error::Format("PGM header ends early".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        let text = std::str::from_utf8(&bytes[start..pos]).unwrap_or("");
        *field = text
            .parse()
            .map_err(|_| Error::Format(format!("bad PGM header field `{text}`")))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Format("PGM header not followed by whitespace".into()));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::Format(format!(
            "PGM maxval {maxval} unsupported; only 8-bit (255) images are read"
        )));
    }
    if width == 0 || height == 0 {
        return Err(Error::Format("PGM has zero width or height".into()));
    }
    let need = width * height;
    let pixels = bytes
        .get(pos..pos + need)
        .ok_or_else(|| Error::Format(format!("PGM pixel data has {} of {need} bytes", bytes.len() - pos)))?;
    from_bytes(width, height, pixels)
}

fn decode_png(bytes: &[u8]) -> Result<Tensor> {
    let fmt = |e: png::DecodingError| Error::Format(format!("PNG: {e}"));
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(fmt)?;
    let info = reader.info();
    if info.color_type != png::ColorType::Grayscale {
        return Err(Error::Format(format!(
            "PNG color type {:?} unsupported; only single-channel grayscale is read",
            info.color_type
        )));
    }
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Format(format!(
            "PNG bit depth {:?} unsupported; only 8-bit is read",
            info.bit_depth
        )));
    }
    let (width, height) = (info.width as usize, info.height as usize);
    let mut buf = vec![0u8; reader.output_buffer_size().ok_or_else(|| Error::Format("PNG too large".into()))?];
    let frame = reader.next_frame(&mut buf).map_err(fmt)?;
    let line = frame.line_size;
    let mut pixels = Vec::with_capacity(width * height);
    for row in buf.chunks(line).take(height) {
        pixels.extend_from_slice(&row[..width]);
    }
    from_bytes(width, height, &pixels)
}

/// `round(255 v)` clamped into a byte.
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Maps an angle in `(-π, π]` onto `[0, 1]` for display.
pub fn angle_to_unit(theta: f32) -> f32 {
    ((theta as f64 + PI) / (2.0 * PI)) as f32
}

fn single_channel(t: &Tensor) -> Result<Vec<u8>> {
    if t.channels() != 1 {
        return Err(crate::error::structural("expected a single-channel map"));
    }
    Ok(t.data().iter().map(|&v| quantize(v)).collect())
}

/// Writes a one-channel map in `[0, 1]` as an 8-bit binary PGM.
pub fn save_pgm(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let mut out = format!("P5\n{} {}\n255\n", t.width(), t.height()).into_bytes();
    out.extend(single_channel(t)?);
    write_atomic(path, &out)
}

fn encode_png(width: usize, height: usize, color: png::ColorType, data: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc
            .write_header()
            .map_err(|e| Error::Format(format!("PNG: {e}")))?;
        w.write_image_data(data)
            .map_err(|e| Error::Format(format!("PNG: {e}")))?;
    }
    Ok(out)
}

/// Writes a one-channel map in `[0, 1]` as an 8-bit grayscale PNG.
pub fn save_gray_png(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let data = single_channel(t)?;
    write_atomic(path, &encode_png(t.width(), t.height(), png::ColorType::Grayscale, &data)?)
}

/// Writes a three-channel map in `[0, 1]` as an 8-bit RGB PNG.
pub fn save_rgb_png(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    if t.channels() != 3 {
        return Err(crate::error::structural("RGB output needs three channels"));
    }
    let data: Vec<u8> = t.data().iter().map(|&v| quantize(v)).collect();
    write_atomic(path, &encode_png(t.width(), t.height(), png::ColorType::Rgb, &data)?)
}
