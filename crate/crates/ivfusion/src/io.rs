//! PNG/TIFF decode and encode.
//!
//! Decoding divides by the sample-type maximum so everything lands in
//! `[0, 1]`; encoding multiplies back and rounds half up. 8- and 16-bit
//! grayscale and RGB are supported; alpha channels are dropped.

use std::path::Path;

use image::DynamicImage;

use crate::error::{Error, Result};
use crate::imgcore::{to_luminance, GrayImage, RgbImage};

/// A decoded raster, preserving whether the source was gray or color.
pub enum DecodedImage {
    Gray(GrayImage),
    Rgb(RgbImage),
}

impl DecodedImage {
    /// Collapse to a single luminance plane (BT.601 for color sources).
    pub fn into_gray(self) -> GrayImage {
        match self {
            DecodedImage::Gray(g) => g,
            DecodedImage::Rgb(rgb) => to_luminance(&rgb).0,
        }
    }

    /// Promote to RGB (gray sources replicate into all channels).
    pub fn into_rgb(self) -> RgbImage {
        match self {
            DecodedImage::Gray(g) => RgbImage::from_gray(&g),
            DecodedImage::Rgb(rgb) => rgb,
        }
    }
}

pub fn load(path: &Path) -> Result<DecodedImage> {
    let img = image::open(path)?;
    decode(img)
}

fn decode(img: DynamicImage) -> Result<DecodedImage> {
    use image::DynamicImage::*;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let gray8 = |data: &[u8]| -> Result<GrayImage> {
        GrayImage::new(w, h, data.iter().map(|&v| v as f64 / 255.0).collect())
    };
    let gray16 = |data: &[u16]| -> Result<GrayImage> {
        GrayImage::new(w, h, data.iter().map(|&v| v as f64 / 65535.0).collect())
    };
    match img {
        ImageLuma8(buf) => Ok(DecodedImage::Gray(gray8(buf.as_raw())?)),
        ImageLuma16(buf) => Ok(DecodedImage::Gray(gray16(buf.as_raw())?)),
        ImageLumaA8(buf) => {
            let data: Vec<f64> = buf.as_raw().chunks_exact(2).map(|p| p[0] as f64 / 255.0).collect();
            Ok(DecodedImage::Gray(GrayImage::new(w, h, data)?))
        }
        ImageLumaA16(buf) => {
            let data: Vec<f64> = buf.as_raw().chunks_exact(2).map(|p| p[0] as f64 / 65535.0).collect();
            Ok(DecodedImage::Gray(GrayImage::new(w, h, data)?))
        }
        ImageRgb8(buf) => Ok(DecodedImage::Rgb(planes_from(buf.as_raw(), w, h, 3, 255.0)?)),
        ImageRgba8(buf) => Ok(DecodedImage::Rgb(planes_from(buf.as_raw(), w, h, 4, 255.0)?)),
        ImageRgb16(buf) => Ok(DecodedImage::Rgb(planes_from16(buf.as_raw(), w, h, 3)?)),
        ImageRgba16(buf) => Ok(DecodedImage::Rgb(planes_from16(buf.as_raw(), w, h, 4)?)),
        other => {
            // 32-bit float and exotic layouts funnel through a 16-bit copy.
            let buf = other.to_rgb16();
            Ok(DecodedImage::Rgb(planes_from16(buf.as_raw(), w, h, 3)?))
        }
    }
}

fn planes_from<T: Copy + Into<f64>>(
    raw: &[T],
    w: usize,
    h: usize,
    stride: usize,
    max: f64,
) -> Result<RgbImage> {
    let mut r = Vec::with_capacity(w * h);
    let mut g = Vec::with_capacity(w * h);
    let mut b = Vec::with_capacity(w * h);
    for px in raw.chunks_exact(stride) {
        r.push(px[0].into() / max);
        g.push(px[1].into() / max);
        b.push(px[2].into() / max);
    }
    RgbImage::new(
        GrayImage::new(w, h, r)?,
        GrayImage::new(w, h, g)?,
        GrayImage::new(w, h, b)?,
    )
}

fn planes_from16(raw: &[u16], w: usize, h: usize, stride: usize) -> Result<RgbImage> {
    planes_from(raw, w, h, stride, 65535.0)
}

#[inline]
fn quantize(v: f64, max: f64) -> f64 {
    // Round half up onto the integer grid.
    (v.clamp(0.0, 1.0) * max + 0.5).floor().min(max)
}

/// Encode a grayscale image as 8-bit (default) or 16-bit PNG/TIFF, chosen by
/// file extension.
pub fn save_gray(path: &Path, img: &GrayImage, sixteen_bit: bool) -> Result<()> {
    let (w, h) = img.dims();
    if sixteen_bit {
        let data: Vec<u16> = img.as_slice().iter().map(|&v| quantize(v, 65535.0) as u16).collect();
        let buf = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(w as u32, h as u32, data)
            .ok_or_else(|| Error::Numeric("gray16 buffer construction".into()))?;
        buf.save(path)?;
    } else {
        let data: Vec<u8> = img.as_slice().iter().map(|&v| quantize(v, 255.0) as u8).collect();
        let buf = image::ImageBuffer::<image::Luma<u8>, _>::from_raw(w as u32, h as u32, data)
            .ok_or_else(|| Error::Numeric("gray8 buffer construction".into()))?;
        buf.save(path)?;
    }
    Ok(())
}

pub fn save_rgb(path: &Path, img: &RgbImage, sixteen_bit: bool) -> Result<()> {
    let (w, h) = img.dims();
    let n = w * h;
    if sixteen_bit {
        let mut data = Vec::with_capacity(n * 3);
        for i in 0..n {
            data.push(quantize(img.r.as_slice()[i], 65535.0) as u16);
            data.push(quantize(img.g.as_slice()[i], 65535.0) as u16);
            data.push(quantize(img.b.as_slice()[i], 65535.0) as u16);
        }
        let buf = image::ImageBuffer::<image::Rgb<u16>, _>::from_raw(w as u32, h as u32, data)
            .ok_or_else(|| Error::Numeric("rgb16 buffer construction".into()))?;
        buf.save(path)?;
    } else {
        let mut data = Vec::with_capacity(n * 3);
        for i in 0..n {
            data.push(quantize(img.r.as_slice()[i], 255.0) as u8);
            data.push(quantize(img.g.as_slice()[i], 255.0) as u8);
            data.push(quantize(img.b.as_slice()[i], 255.0) as u8);
        }
        let buf = image::ImageBuffer::<image::Rgb<u8>, _>::from_raw(w as u32, h as u32, data)
            .ok_or_else(|| Error::Numeric("rgb8 buffer construction".into()))?;
        buf.save(path)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn png_gray_round_trip_8bit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.png");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = GrayImage::from_fn(9, 7, |_, _| rng.random::<f64>()).unwrap();
        save_gray(&path, &img, false).unwrap();
        let back = load(&path).unwrap().into_gray();
        for (a, b) in img.as_slice().iter().zip(back.as_slice()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-9);
        }
    }

    #[test]
    fn tiff_rgb_round_trip_16bit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.tiff");
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let img = RgbImage::from_fn(8, 5, |_, _| (rng.random(), rng.random(), rng.random())).unwrap();
        save_rgb(&path, &img, true).unwrap();
        let back = load(&path).unwrap().into_rgb();
        for (a, b) in img.r.as_slice().iter().zip(back.r.as_slice()) {
            assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-9);
        }
    }

    #[test]
    fn round_half_up() {
        assert_eq!(quantize(0.5 / 255.0, 255.0), 1.0);
        assert_eq!(quantize(0.49 / 255.0, 255.0), 0.0);
        assert_eq!(quantize(1.0, 255.0), 255.0);
        assert_eq!(quantize(-0.2, 255.0), 0.0);
    }
}
