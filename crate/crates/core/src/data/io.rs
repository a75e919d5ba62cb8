//! 8/16-bit single-channel PNG and binary PGM ingestion; PNG output.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageError, ImageFormat, ImageReader, Luma};

use crate::error::{Error, Result};
use crate::metrics::BinaryMask;
use crate::tensor::Tensor;

fn ingestion(path: &Path, reason: impl ToString) -> Error {
    Error::Ingestion { path: path.to_path_buf(), reason: reason.to_string() }
}

fn write_error(path: &Path, e: ImageError) -> Error {
    match e {
        ImageError::IoError(io) => Error::io(path, io),
        other => ingestion(path, other),
    }
}

/// Reads a grayscale image as `[1, H, W]`, dividing by the largest value the
/// file's bit depth can represent.
pub fn load_grayscale(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let img = ImageReader::open(path)
        .map_err(|e| ingestion(path, e))?
        .with_guessed_format()
        .map_err(|e| ingestion(path, e))?
        .decode()
        .map_err(|e| ingestion(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = match img {
        DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(|v| f64::from(v) / 255.0).collect(),
        DynamicImage::ImageLuma16(buf) => buf.into_raw().into_iter().map(|v| f64::from(v) / 65535.0).collect(),
        other => {
            return Err(ingestion(
                path,
                format!("unsupported pixel format {:?}; need 8- or 16-bit single-channel", other.color()),
            ))
        }
    };
    Tensor::from_vec(&[1, h, w], data).map_err(|e| ingestion(path, e))
}

/// Reads a mask image; pixels at or above half intensity are positive.
pub fn load_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    let t = load_grayscale(path)?;
    let (_, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    BinaryMask::new(&[h, w], t.data().iter().map(|&v| u8::from(v >= 0.5)).collect())
}

fn plane_extents(shape: &[usize]) -> Result<(u32, u32)> {
    let n = shape.len();
    if n < 2 || shape[..n - 2].iter().any(|&d| d != 1) {
        return Err(Error::dim(format!("cannot write shape {shape:?} as a single grayscale image")));
    }
    Ok((shape[n - 1] as u32, shape[n - 2] as u32))
}

/// Writes values in `[0, 1]` (clamped) as a 16-bit grayscale PNG.
pub fn save_gray16(path: impl AsRef<Path>, image: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let (w, h) = plane_extents(image.shape())?;
    let raw: Vec<u16> = image
        .data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
        .collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(w, h, raw).expect("extents match data");
    buf.save_with_format(path, ImageFormat::Png).map_err(|e| write_error(path, e))
}

/// Writes a mask as an 8-bit PNG with values {0, 255}.
pub fn save_mask(path: impl AsRef<Path>, mask: &BinaryMask) -> Result<()> {
    let path = path.as_ref();
    let (w, h) = plane_extents(mask.shape())?;
    let raw: Vec<u8> = mask.data().iter().map(|&v| v * 255).collect();
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_raw(w, h, raw).expect("extents match data");
    buf.save_with_format(path, ImageFormat::Png).map_err(|e| write_error(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn eight_bit_extremes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let buf: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_raw(2, 1, vec![255, 0]).unwrap();
        buf.save(&p).unwrap();
        let t = load_grayscale(&p).unwrap();
        assert_eq!(t.shape(), &[1, 1, 2]);
        assert_eq!(t.data(), &[1.0, 0.0]);
    }

    #[test]
    fn sixteen_bit_max() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(1, 2, vec![65535, 32768]).unwrap();
        buf.save(&p).unwrap();
        let t = load_grayscale(&p).unwrap();
        assert_eq!(t.data()[0], 1.0);
        assert_eq!(t.data()[1], 32768.0 / 65535.0);
    }

    #[test]
    fn binary_pgm() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pgm");
        let mut f = std::fs::File::create(&p).unwrap();
        f.write_all(b"P5\n3 1\n255\n").unwrap();
        f.write_all(&[0, 51, 255]).unwrap();
        drop(f);
        let t = load_grayscale(&p).unwrap();
        assert_eq!(t.data(), &[0.0, 0.2, 1.0]);
    }

    #[test]
    fn rgb_is_rejected_naming_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rgb.png");
        let buf: ImageBuffer<image::Rgb<u8>, Vec<u8>> = ImageBuffer::from_raw(1, 1, vec![1, 2, 3]).unwrap();
        buf.save(&p).unwrap();
        let err = load_grayscale(&p).unwrap_err();
        assert!(matches!(err, Error::Ingestion { .. }));
        assert!(err.to_string().contains("rgb.png"));
    }

    #[test]
    fn missing_file_is_ingestion_error() {
        assert!(matches!(load_grayscale("/nonexistent/x.png"), Err(Error::Ingestion { .. })));
    }

    #[test]
    fn mask_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        let m = BinaryMask::new(&[2, 2], vec![0, 1, 1, 0]).unwrap();
        save_mask(&p, &m).unwrap();
        assert_eq!(load_mask(&p).unwrap(), m);
    }
}
