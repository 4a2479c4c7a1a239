//! Range conversion and 8-bit PNG input/output. Images are `[3, H, W]` in
//! `(-1, 1)` everywhere else; this is the only place values are mapped to
//! and from bytes.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// `[0, 1]` intensity to the signed network range.
pub fn unit_to_signed(v: f64) -> f64 {
    2.0 * v - 1.0
}

pub fn signed_to_unit(v: f64) -> f64 {
    0.5 * (v + 1.0)
}

pub fn byte_to_signed(q: u8) -> f64 {
    unit_to_signed(q as f64 / 255.0)
}

/// Clamps to the valid range and rounds to the nearest byte.
pub fn signed_to_byte(v: f64) -> u8 {
    (signed_to_unit(v).clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Signed `[C, H, W]` tensor (C = 1 or 3) to interleaved bytes.
pub fn to_bytes<T: Scalar>(img: &Tensor<T>) -> Result<(usize, usize, usize, Vec<u8>)> {
    let s = img.shape();
    if s.len() != 3 || !(s[0] == 1 || s[0] == 3) {
        return Err(Error::shape("to_bytes", &[s]));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let d = img.data();
    let mut out = Vec::with_capacity(c * h * w);
    for px in 0..h * w {
        for ch in 0..c {
            out.push(signed_to_byte(d[ch * h * w + px].to_f64().unwrap_or(0.0)));
        }
    }
    Ok((c, h, w, out))
}

/// Interleaved bytes to a signed `[C, H, W]` tensor.
pub fn from_bytes<T: Scalar>(c: usize, h: usize, w: usize, bytes: &[u8]) -> Result<Tensor<T>> {
    if bytes.len() != c * h * w {
        return Err(Error::Format(format!("{} bytes for a {c}x{h}x{w} image", bytes.len())));
    }
    let mut data = vec![T::zero(); c * h * w];
    for px in 0..h * w {
        for ch in 0..c {
            data[ch * h * w + px] = T::from_f64_lossy(byte_to_signed(bytes[px * c + ch]));
        }
    }
    Tensor::new(&[c, h, w], data)
}

pub fn write_png<T: Scalar>(path: &Path, img: &Tensor<T>) -> Result<()> {
    let (c, h, w, bytes) = to_bytes(img)?;
    write_png_bytes(path, c, h, w, &bytes)
}

pub fn write_png_bytes(path: &Path, c: usize, h: usize, w: usize, bytes: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(if c == 1 {
        png::ColorType::Grayscale
    } else {
        png::ColorType::Rgb
    });
    enc.set_depth(png::BitDepth::Eight);
    let fmt = |e: png::EncodingError| Error::Format(format!("{}: {e}", path.display()));
    let mut writer = enc.write_header().map_err(fmt)?;
    writer.write_image_data(bytes).map_err(fmt)?;
    writer.finish().map_err(fmt)
}

/// Reads an 8-bit grayscale or RGB PNG as `(channels, height, width, bytes)`.
pub fn read_png_bytes(path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let fmt = |e: png::DecodingError| Error::Format(format!("{}: {e}", path.display()));
    let mut reader = png::Decoder::new(BufReader::new(file)).read_info().map_err(fmt)?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf).map_err(fmt)?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Format(format!(
            "{}: only 8-bit PNG is supported",
            path.display()
        )));
    }
    let c = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => {
            return Err(Error::Format(format!(
                "{}: unsupported colour type {other:?}",
                path.display()
            )))
        }
    };
    buf.truncate(info.buffer_size());
    Ok((c, info.height as usize, info.width as usize, buf))
}

pub fn read_png<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let (c, h, w, bytes) = read_png_bytes(path)?;
    from_bytes(c, h, w, &bytes)
}
