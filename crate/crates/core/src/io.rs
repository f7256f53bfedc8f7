//! On-disk formats: 8-bit PNG images, `TXL1` latent files, CSV tables and atomic writes.
//!
//! `TXL1` layout (little-endian):
//!
//! | bytes | content                    |
//! |-------|----------------------------|
//! | 4     | magic `TXL1`               |
//! | 4     | `u32` vector count         |
//! | 4     | `u32` dimension `d`        |
//! | 4·n·d | `f32` values, vector-major |

use std::fs;
use std::io::Write;
use std::path::Path;

use image::{ImageBuffer, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::models::LatentW;
use crate::scalar::Scalar;

pub const LATENT_MAGIC: &[u8; 4] = b"TXL1";

/// `[-1, 1]` to byte: `round((x + 1) / 2 * 255)` clamped to `[0, 255]`.
pub fn to_byte(v: f64) -> u8 {
    ((v + 1.0) * 0.5 * 255.0).round().clamp(0.0, 255.0) as u8
}

pub fn from_byte(b: u8) -> f32 {
    b as f32 / 255.0 * 2.0 - 1.0
}

/// Renders a 1- or 3-channel image as 8-bit RGB.
pub fn to_rgb8<T: Scalar>(img: &Image<T>) -> RgbImage {
    let (h, w) = (img.height() as u32, img.width() as u32);
    ImageBuffer::from_fn(w, h, |x, y| {
        let px = |c: usize| to_byte(img.get(c.min(img.channels() - 1), y as usize, x as usize).to_f64_lossy());
        Rgb([px(0), px(1), px(2)])
    })
}

pub fn from_rgb8(rgb: &RgbImage) -> Image<f32> {
    let (w, h) = rgb.dimensions();
    Image::from_fn(3, h as usize, w as usize, |c, y, x| from_byte(rgb.get_pixel(x as u32, y as u32)[c]))
}

pub fn save_png<T: Scalar>(img: &Image<T>, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    to_rgb8(img).save(path)?;
    Ok(())
}

pub fn load_png(path: &Path) -> Result<Image<f32>> {
    let decoded = image::open(path)?;
    Ok(from_rgb8(&decoded.to_rgb8()))
}

pub fn encode_latents<T: Scalar>(latents: &[LatentW<T>]) -> Result<Vec<u8>> {
    let dim = latents.first().map_or(0, |w| w.dim());
    if let Some(bad) = latents.iter().find(|w| w.dim() != dim) {
        return Err(Error::DimMismatch { expected: dim, got: bad.dim() });
    }
    let mut out = Vec::with_capacity(12 + 4 * dim * latents.len());
    out.extend_from_slice(LATENT_MAGIC);
    out.extend_from_slice(&(latents.len() as u32).to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    for w in latents {
        for v in w.values() {
            out.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_latents<T: Scalar>(bytes: &[u8]) -> Result<Vec<LatentW<T>>> {
    if bytes.len() < 12 || &bytes[..4] != LATENT_MAGIC {
        return Err(Error::LatentFile("missing TXL1 magic".into()));
    }
    let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected = 12 + 4 * count * dim;
    if bytes.len() != expected {
        return Err(Error::LatentFile(format!("expected {expected} bytes, found {}", bytes.len())));
    }
    let values: Vec<T> = bytes[12..]
        .chunks_exact(4)
        .map(|c| T::from_f64_lossy(f32::from_le_bytes(c.try_into().unwrap()) as f64))
        .collect();
    Ok(values.chunks(dim.max(1)).take(count).map(|c| LatentW::new(c.to_vec())).collect())
}

pub fn save_latents<T: Scalar>(latents: &[LatentW<T>], path: &Path) -> Result<()> {
    write_atomic(path, &encode_latents(latents)?)
}

pub fn load_latents<T: Scalar>(path: &Path) -> Result<Vec<LatentW<T>>> {
    decode_latents(&fs::read(path)?)
}

/// Writes through a temporary sibling file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp~");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json<S: serde::Serialize>(value: &S, path: &Path) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<D: serde::de::DeserializeOwned>(path: &Path) -> Result<D> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

/// Serializes rows with a header derived from the row type.
pub fn write_csv<S: serde::Serialize>(rows: &[S], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    write_atomic(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_mapping_endpoints() {
        assert_eq!(to_byte(-1.0), 0);
        assert_eq!(to_byte(1.0), 255);
        assert_eq!(to_byte(0.0), 128);
        assert_eq!(to_byte(3.0), 255);
        assert_eq!(to_byte(-7.0), 0);
    }

    #[test]
    fn latent_file_layout() {
        let ws = vec![LatentW::new(vec![1.0f32, -2.0]), LatentW::new(vec![0.5, 0.25])];
        let bytes = encode_latents(&ws).unwrap();
        assert_eq!(&bytes[..4], b"TXL1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert_eq!(f32::from_le_bytes(bytes[16..20].try_into().unwrap()), -2.0);
        let back: Vec<LatentW<f32>> = decode_latents(&bytes).unwrap();
        assert_eq!(back, ws);
    }

    #[test]
    fn latent_file_rejects_truncation_and_bad_magic() {
        let bytes = encode_latents(&[LatentW::new(vec![1.0f32; 3])]).unwrap();
        assert!(decode_latents::<f32>(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_latents::<f32>(&bad).is_err());
    }

    #[test]
    fn mixed_dimensions_rejected() {
        let ws = vec![LatentW::new(vec![1.0f32]), LatentW::new(vec![1.0, 2.0])];
        assert!(matches!(encode_latents(&ws), Err(Error::DimMismatch { .. })));
    }
}
