//! 8-bit PNG export and import.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{FameError, Result};
use crate::tensor::{Scalar, Shape, Tensor};

fn encode_err(path: &Path, e: png::EncodingError) -> FameError {
    FameError::io(path, std::io::Error::other(e))
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn write_raw(path: &Path, width: usize, height: usize, colour: png::ColorType, data: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| FameError::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(colour);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| encode_err(path, e))?;
    writer.write_image_data(data).map_err(|e| encode_err(path, e))?;
    writer.finish().map_err(|e| encode_err(path, e))
}

/// Grayscale plane. Values are clamped to `[0, 1]`, or min-max stretched when
/// `normalize` is set (a constant plane maps to black).
pub fn write_gray(path: &Path, plane: &[f64], height: usize, width: usize, normalize: bool) -> Result<()> {
    let (lo, hi) = if normalize {
        plane.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)))
    } else {
        (0.0, 1.0)
    };
    let span = hi - lo;
    let data: Vec<u8> = plane
        .iter()
        .map(|&v| if span > 0.0 { to_u8((v - lo) / span) } else { 0 })
        .collect();
    write_raw(path, width, height, png::ColorType::Grayscale, &data)
}

/// Colour composite of three bands of sample 0, clamped to `[0, 1]`.
pub fn write_rgb<T: Scalar>(path: &Path, image: &Tensor<T>, bands: [usize; 3]) -> Result<()> {
    let s = image.shape();
    if let Some(&b) = bands.iter().find(|&&b| b >= s.c) {
        return Err(FameError::Contract(format!("band {b} outside image with {} bands", s.c)));
    }
    let planes: Vec<&[T]> = bands.iter().map(|&b| image.plane(0, b)).collect();
    let mut data = Vec::with_capacity(3 * s.plane());
    for i in 0..s.plane() {
        data.extend(planes.iter().map(|p| to_u8(p[i].as_f64())));
    }
    write_raw(path, s.w, s.h, png::ColorType::Rgb, &data)
}

/// Reads a PNG as a `(1, C, H, W)` image in `[0, 1]`; alpha is dropped.
pub fn read_png(path: &Path) -> Result<Tensor<f32>> {
    let file = File::open(path).map_err(|e| FameError::io(path, e))?;
    let mut dec = png::Decoder::new(BufReader::new(file));
    dec.set_transformations(png::Transformations::normalize_to_color8());
    let decode_err = |e: png::DecodingError| FameError::io(path, std::io::Error::other(e));
    let mut reader = dec.read_info().map_err(decode_err)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| FameError::Contract(format!("{}: image too large", path.display())))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(decode_err)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let (stride, channels) = match info.color_type {
        png::ColorType::Grayscale => (1, 1),
        png::ColorType::GrayscaleAlpha => (2, 1),
        png::ColorType::Rgb => (3, 3),
        png::ColorType::Rgba => (4, 3),
        png::ColorType::Indexed => {
            return Err(FameError::Contract(format!("{}: palette images unsupported", path.display())))
        }
    };
    let pixels = &buf[..info.buffer_size()];
    let t = Tensor::from_fn(Shape::new(1, channels, h, w), |[_, c, y, x]| {
        pixels[(y * w + x) * stride + c] as f32 / 255.0
    });
    Ok(t)
}
