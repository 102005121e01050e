//! Reading and writing the raster formats used by datasets and predictions.
//!
//! RGB and label rasters go through the `image` crate (PNG or TIFF, chosen
//! by extension). Disparity is a single-channel 32-bit float TIFF.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use image::{DynamicImage, GrayImage, RgbImage};
use tiff::decoder::{Decoder, DecodingResult};
use tiff::encoder::{colortype::Gray32Float, TiffEncoder};

use crate::error::{Error, Result};

/// A raster with its dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster<T> {
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

fn open(path: &Path) -> Result<DynamicImage> {
    if !path.exists() {
        return Err(Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "file not found")));
    }
    image::open(path).map_err(|e| Error::raster(path, e))
}

/// Reads an 8- or 16-bit RGB image as planar `[3, H, W]` values in `[0, 1]`.
pub fn read_rgb(path: &Path) -> Result<Raster<f32>> {
    let img = open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let p = h * w;
    let mut data = vec![0f32; 3 * p];
    match img {
        DynamicImage::ImageRgb16(buf) => {
            for (i, px) in buf.pixels().enumerate() {
                for c in 0..3 {
                    data[c * p + i] = px[c] as f32 / 65535.0;
                }
            }
        }
        other => {
            for (i, px) in other.to_rgb8().pixels().enumerate() {
                for c in 0..3 {
                    data[c * p + i] = px[c] as f32 / 255.0;
                }
            }
        }
    }
    Ok(Raster { height: h, width: w, data })
}

/// Writes planar `[3, H, W]` values in `[0, 1]` as 8-bit RGB.
pub fn write_rgb(path: &Path, raster: &Raster<f32>) -> Result<()> {
    let (h, w) = (raster.height, raster.width);
    let p = h * w;
    let img = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        image::Rgb(std::array::from_fn(|c| (raster.data[c * p + i].clamp(0.0, 1.0) * 255.0).round() as u8))
    });
    img.save(path).map_err(|e| Error::raster(path, e))
}

/// Writes interleaved 8-bit RGB pixels.
pub fn write_rgb8(path: &Path, height: usize, width: usize, rgb: Vec<u8>) -> Result<()> {
    let img = RgbImage::from_raw(width as u32, height as u32, rgb)
        .ok_or_else(|| Error::raster(path, "pixel buffer does not match dimensions"))?;
    img.save(path).map_err(|e| Error::raster(path, e))
}

/// Reads a single-channel 8- or 16-bit label raster.
pub fn read_labels(path: &Path) -> Result<Raster<u16>> {
    let img = open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = match img {
        DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(u16::from).collect(),
        DynamicImage::ImageLuma16(buf) => buf.into_raw(),
        other => {
            return Err(Error::raster(path, format!("expected a single-channel label raster, got {:?}", other.color())))
        }
    };
    Ok(Raster { height: h, width: w, data })
}

pub fn write_labels(path: &Path, raster: &Raster<u8>) -> Result<()> {
    let img = GrayImage::from_raw(raster.width as u32, raster.height as u32, raster.data.clone())
        .ok_or_else(|| Error::raster(path, "label buffer does not match dimensions"))?;
    img.save(path).map_err(|e| Error::raster(path, e))
}

/// Reads a single-channel floating-point TIFF.
pub fn read_f32(path: &Path) -> Result<Raster<f32>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut dec = Decoder::new(BufReader::new(file)).map_err(|e| Error::raster(path, e))?;
    let (w, h) = dec.dimensions().map_err(|e| Error::raster(path, e))?;
    let (w, h) = (w as usize, h as usize);
    let data: Vec<f32> = match dec.read_image().map_err(|e| Error::raster(path, e))? {
        DecodingResult::F32(v) => v,
        DecodingResult::F64(v) => v.into_iter().map(|x| x as f32).collect(),
        other => return Err(Error::raster(path, format!("expected 32-bit float samples, got {}", variant_name(&other)))),
    };
    if data.len() != h * w {
        return Err(Error::raster(path, format!("expected one channel, got {} samples for {w}x{h}", data.len())));
    }
    Ok(Raster { height: h, width: w, data })
}

fn variant_name(r: &DecodingResult) -> &'static str {
    match r {
        DecodingResult::U8(_) => "u8",
        DecodingResult::U16(_) => "u16",
        DecodingResult::U32(_) => "u32",
        DecodingResult::U64(_) => "u64",
        DecodingResult::I8(_) => "i8",
        DecodingResult::I16(_) => "i16",
        DecodingResult::I32(_) => "i32",
        DecodingResult::I64(_) => "i64",
        _ => "non-f32 floating point",
    }
}

pub fn write_f32(path: &Path, raster: &Raster<f32>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = TiffEncoder::new(BufWriter::new(file)).map_err(|e| Error::raster(path, e))?;
    enc.write_image::<Gray32Float>(raster.width as u32, raster.height as u32, &raster.data)
        .map_err(|e| Error::raster(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.tif");
        let r = Raster { height: 2, width: 3, data: vec![-999.0, 1.5, f32::NAN, 0.1, 1e6, -3.25] };
        write_f32(&path, &r).unwrap();
        let back = read_f32(&path).unwrap();
        assert_eq!((back.height, back.width), (2, 3));
        for (a, b) in r.data.iter().zip(&back.data) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn rgb_and_labels_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rgb = Raster { height: 2, width: 2, data: (0..12).map(|i| i as f32 * 20.0 / 255.0).collect() };
        for ext in ["png", "tif"] {
            let path = dir.path().join(format!("i.{ext}"));
            write_rgb(&path, &rgb).unwrap();
            let back = read_rgb(&path).unwrap();
            assert!(back.data.iter().zip(&rgb.data).all(|(a, b)| (a - b).abs() < 1e-6));
        }
        let labels = Raster { height: 1, width: 4, data: vec![2, 5, 6, 17] };
        let path = dir.path().join("l.tif");
        write_labels(&path, &labels).unwrap();
        assert_eq!(read_labels(&path).unwrap().data, vec![2, 5, 6, 17]);
    }

    #[test]
    fn missing_file_is_an_io_error() {
        let err = read_rgb(Path::new("/nonexistent/x.png")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }), "{err}");
    }
}
