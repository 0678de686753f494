//! 8/16-bit RGB PNG decode/encode.
//!
//! Decoding maps integer `v` to `v / (2^depth - 1)`; encoding quantizes with
//! round-half-to-even, so a 16-bit round trip of already-quantized data is
//! bit-exact.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::scalar::Scalar;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

fn png_err(e: png::DecodingError) -> Error {
    Error::Png(e.to_string())
}

pub fn load_image<T: Scalar>(path: &Path) -> Result<Image<T>> {
    let file = File::open(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder.read_info().map_err(png_err)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Png("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    if info.color_type != png::ColorType::Rgb {
        return Err(Error::Png(format!(
            "{}: unsupported color type {:?} (need RGB)",
            path.display(),
            info.color_type
        )));
    }
    let (h, w) = (info.height as usize, info.width as usize);
    let data: Vec<T> = match info.bit_depth {
        png::BitDepth::Eight => buf[..h * w * 3]
            .iter()
            .map(|&v| T::of_f64(v as f64 / 255.0))
            .collect(),
        png::BitDepth::Sixteen => buf[..h * w * 6]
            .chunks_exact(2)
            .map(|c| {
                let v = u16::from_be_bytes([c[0], c[1]]);
                T::of_f64(v as f64 / 65535.0)
            })
            .collect(),
        other => {
            return Err(Error::Png(format!(
                "{}: unsupported bit depth {other:?} (need 8 or 16)",
                path.display()
            )))
        }
    };
    Image::new(h, w, data)
}

fn quantize(v: f64, max: f64) -> (u64, bool) {
    let clipped = !(0.0..=1.0).contains(&v);
    let q = (v.clamp(0.0, 1.0) * max).round_ties_even() as u64;
    (q, clipped)
}

/// Writes a 16-bit RGB PNG. Returns how many values fell outside `[0, 1]`
/// and were clipped.
pub fn save_image_16<T: Scalar>(path: &Path, image: &Image<T>) -> Result<usize> {
    let mut bytes = Vec::with_capacity(image.data().len() * 2);
    let mut clips = 0;
    for &v in image.data() {
        let (q, clipped) = quantize(v.as_f64(), 65535.0);
        clips += clipped as usize;
        bytes.extend_from_slice(&(q as u16).to_be_bytes());
    }
    write_png(path, image, png::BitDepth::Sixteen, &bytes)?;
    Ok(clips)
}

/// Writes an 8-bit RGB PNG; same clipping contract as [`save_image_16`].
pub fn save_image_8<T: Scalar>(path: &Path, image: &Image<T>) -> Result<usize> {
    let mut bytes = Vec::with_capacity(image.data().len());
    let mut clips = 0;
    for &v in image.data() {
        let (q, clipped) = quantize(v.as_f64(), 255.0);
        clips += clipped as usize;
        bytes.push(q as u8);
    }
    write_png(path, image, png::BitDepth::Eight, &bytes)?;
    Ok(clips)
}

fn write_png<T: Scalar>(
    path: &Path,
    image: &Image<T>,
    depth: png::BitDepth,
    bytes: &[u8],
) -> Result<()> {
    let file = File::create(path)
        .map_err(|e| Error::Data(format!("cannot create {}: {e}", path.display())))?;
    let mut encoder = png::Encoder::new(
        BufWriter::new(file),
        image.width() as u32,
        image.height() as u32,
    );
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(depth);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::Png(e.to_string()))?;
    writer
        .write_image_data(bytes)
        .map_err(|e| Error::Png(e.to_string()))?;
    Ok(())
}
