//! Image decoding, colour conversion, resizing and tensor preparation.

mod pnm;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{domain_err, format_err, Error, Result};
use crate::scalar::Real;

pub use pnm::{decode_pnm, encode_pnm};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

macro_rules! image_common {
    ($t:ident, $ch:expr) => {
        impl $t {
            pub const CHANNELS: usize = $ch;

            pub fn from_raw(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
                if width == 0 || height == 0 {
                    return Err(domain_err(format!("zero image dimension {width}x{height}")));
                }
                if pixels.len() != width * height * $ch {
                    return Err(domain_err(format!(
                        "{}x{} image needs {} bytes, got {}",
                        width,
                        height,
                        width * height * $ch,
                        pixels.len()
                    )));
                }
                Ok($t {
                    width,
                    height,
                    pixels,
                })
            }

            pub fn filled(width: usize, height: usize, px: [u8; $ch]) -> Result<Self> {
                let pixels = px
                    .iter()
                    .copied()
                    .cycle()
                    .take(width * height * $ch)
                    .collect();
                Self::from_raw(width, height, pixels)
            }

            pub fn width(&self) -> usize {
                self.width
            }

            pub fn height(&self) -> usize {
                self.height
            }

            pub fn pixels(&self) -> &[u8] {
                &self.pixels
            }

            pub fn pixel(&self, x: usize, y: usize) -> [u8; $ch] {
                let i = (y * self.width + x) * $ch;
                self.pixels[i..i + $ch].try_into().unwrap()
            }

            pub fn put_pixel(&mut self, x: usize, y: usize, px: [u8; $ch]) {
                let i = (y * self.width + x) * $ch;
                self.pixels[i..i + $ch].copy_from_slice(&px);
            }

            pub fn into_raw(self) -> Vec<u8> {
                self.pixels
            }
        }
    };
}

image_common!(RgbImage, 3);
image_common!(GrayImage, 1);

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Image {
    Rgb(RgbImage),
    Gray(GrayImage),
}

impl Image {
    pub fn width(&self) -> usize {
        match self {
            Image::Rgb(i) => i.width(),
            Image::Gray(i) => i.width(),
        }
    }

    pub fn height(&self) -> usize {
        match self {
            Image::Rgb(i) => i.height(),
            Image::Gray(i) => i.height(),
        }
    }

    pub fn channels(&self) -> usize {
        match self {
            Image::Rgb(_) => 3,
            Image::Gray(_) => 1,
        }
    }

    fn raw(&self) -> &[u8] {
        match self {
            Image::Rgb(i) => i.pixels(),
            Image::Gray(i) => i.pixels(),
        }
    }
}

/// Luminance `Y = 0.299 R + 0.587 G + 0.114 B` in exact integer arithmetic,
/// rounded half away from zero.
#[inline]
pub fn luminance(r: u8, g: u8, b: u8) -> u8 {
    let weighted = 299 * u32::from(r) + 587 * u32::from(g) + 114 * u32::from(b);
    // weights sum to 1000, so the quotient never exceeds 255
    ((weighted + 500) / 1000) as u8
}

pub fn to_grayscale(img: &RgbImage) -> GrayImage {
    let pixels = img
        .pixels
        .chunks_exact(3)
        .map(|p| luminance(p[0], p[1], p[2]))
        .collect();
    GrayImage {
        width: img.width,
        height: img.height,
        pixels,
    }
}

/// Bilinear resize with pixel-centre alignment and edge clamping.
pub fn resize_bilinear(img: &Image, out_w: usize, out_h: usize) -> Result<Image> {
    if out_w == 0 || out_h == 0 {
        return Err(domain_err(format!("zero output dimension {out_w}x{out_h}")));
    }
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    if (w, h) == (out_w, out_h) {
        return Ok(img.clone());
    }
    let src = img.raw();
    let axis = |out: usize, len: usize| -> Vec<(usize, usize, f64)> {
        let scale = len as f64 / out as f64;
        (0..out)
            .map(|o| {
                let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(len - 1);
                (i0, i1, s - i0 as f64)
            })
            .collect()
    };
    let xs = axis(out_w, w);
    let ys = axis(out_h, h);
    let mut out = Vec::with_capacity(out_w * out_h * ch);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for c in 0..ch {
                let at = |x: usize, y: usize| f64::from(src[(y * w + x) * ch + c]);
                let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
                let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                out.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    Ok(match img {
        Image::Rgb(_) => Image::Rgb(RgbImage::from_raw(out_w, out_h, out)?),
        Image::Gray(_) => Image::Gray(GrayImage::from_raw(out_w, out_h, out)?),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ColourMode {
    #[default]
    Rgb,
    /// Luminance copied into three channels.
    GrayscaleReplicated,
    Grayscale1ch,
}

impl ColourMode {
    pub fn channels(self) -> usize {
        match self {
            ColourMode::Rgb | ColourMode::GrayscaleReplicated => 3,
            ColourMode::Grayscale1ch => 1,
        }
    }
}

/// Channel-major (CHW) tensor with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor<T> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub values: Vec<T>,
}

impl<T: Real> ImageTensor<T> {
    pub fn shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }
}

pub fn to_tensor<T: Real>(img: &Image, mode: ColourMode) -> ImageTensor<T> {
    let (w, h) = (img.width(), img.height());
    let plane = w * h;
    let scale = |v: u8| T::from_f64(f64::from(v) / 255.0);
    let channels = mode.channels();
    let mut values = vec![T::zero(); channels * plane];
    match (img, mode) {
        (Image::Rgb(rgb), ColourMode::Rgb) => {
            for (i, p) in rgb.pixels.chunks_exact(3).enumerate() {
                for c in 0..3 {
                    values[c * plane + i] = scale(p[c]);
                }
            }
        }
        (Image::Rgb(rgb), _) => {
            for (i, p) in rgb.pixels.chunks_exact(3).enumerate() {
                let y = scale(luminance(p[0], p[1], p[2]));
                for c in 0..channels {
                    values[c * plane + i] = y;
                }
            }
        }
        (Image::Gray(g), _) => {
            for (i, &p) in g.pixels.iter().enumerate() {
                let y = scale(p);
                for c in 0..channels {
                    values[c * plane + i] = y;
                }
            }
        }
    }
    ImageTensor {
        channels,
        height: h,
        width: w,
        values,
    }
}

/// Decodes PNM natively; PNG and JPEG go through the raster adapter when enabled.
pub fn decode_image(bytes: &[u8]) -> Result<Image> {
    if bytes.first() == Some(&b'P') {
        return decode_pnm(bytes);
    }
    decode_raster(bytes)
}

#[cfg(feature = "raster")]
fn decode_raster(bytes: &[u8]) -> Result<Image> {
    let dynimg = image::load_from_memory(bytes)
        .map_err(|e| format_err(format!("cannot decode image: {e}")))?;
    let rgb = dynimg.to_rgb8();
    let (w, h) = rgb.dimensions();
    Ok(Image::Rgb(RgbImage::from_raw(
        w as usize,
        h as usize,
        rgb.into_raw(),
    )?))
}

#[cfg(not(feature = "raster"))]
fn decode_raster(_bytes: &[u8]) -> Result<Image> {
    Err(format_err(
        "not a PNM image and the raster adapter is disabled",
    ))
}

pub fn load_image(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Load, resize to `size`×`size`, and convert to a tensor.
pub fn prepare<T: Real>(path: &Path, size: usize, mode: ColourMode) -> Result<ImageTensor<T>> {
    let img = load_image(path)?;
    let img = resize_bilinear(&img, size, size)?;
    Ok(to_tensor(&img, mode))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn luminance_examples() {
        assert_eq!(luminance(100, 100, 100), 100);
        assert_eq!(luminance(255, 0, 0), 76);
        assert_eq!(luminance(0, 255, 0), 150);
        assert_eq!(luminance(0, 0, 255), 29);
        assert_eq!(luminance(255, 255, 255), 255);
    }

    #[test]
    fn luminance_rounds_half_away_from_zero() {
        // 0.299*1 + 0.587*1 + 0.114*0 = 0.886 -> 1 ; 0.114*5 = 0.57 -> 1 ; 0.114*4 = 0.456 -> 0
        assert_eq!(luminance(1, 1, 0), 1);
        assert_eq!(luminance(0, 0, 5), 1);
        assert_eq!(luminance(0, 0, 4), 0);
    }

    #[test]
    fn resize_identity_and_constant() {
        let mut img = RgbImage::filled(5, 4, [0, 0, 0]).unwrap();
        img.put_pixel(2, 1, [10, 200, 30]);
        let img = Image::Rgb(img);
        assert_eq!(resize_bilinear(&img, 5, 4).unwrap(), img);

        let flat = Image::Gray(GrayImage::filled(7, 3, [93]).unwrap());
        for (w, h) in [(1, 1), (13, 2), (64, 64), (3, 9)] {
            let r = resize_bilinear(&flat, w, h).unwrap();
            let Image::Gray(g) = r else { panic!() };
            assert!(g.pixels().iter().all(|&p| p == 93));
        }
    }

    #[test]
    fn resize_upsample_is_monotone() {
        let img = Image::Gray(GrayImage::from_raw(2, 1, vec![0, 255]).unwrap());
        let Image::Gray(g) = resize_bilinear(&img, 4, 1).unwrap() else {
            panic!()
        };
        assert!(
            g.pixels().windows(2).all(|w| w[0] <= w[1]),
            "{:?}",
            g.pixels()
        );
        assert_eq!(g.pixels()[0], 0);
        assert_eq!(g.pixels()[3], 255);
    }

    #[test]
    fn resize_rejects_zero() {
        let img = Image::Gray(GrayImage::filled(2, 2, [1]).unwrap());
        assert!(resize_bilinear(&img, 0, 3).is_err());
    }

    #[test]
    fn tensor_modes() {
        let img = Image::Rgb(RgbImage::from_raw(1, 1, vec![255, 0, 0]).unwrap());
        let t = to_tensor::<f32>(&img, ColourMode::Rgb);
        assert_eq!(t.values, vec![1.0, 0.0, 0.0]);
        let t = to_tensor::<f64>(&img, ColourMode::GrayscaleReplicated);
        assert_eq!(t.shape(), [3, 1, 1]);
        assert!(t.values.iter().all(|&v| v == 76.0 / 255.0));
        let t = to_tensor::<f64>(&img, ColourMode::Grayscale1ch);
        assert_eq!(t.values, vec![76.0 / 255.0]);

        let black = Image::Rgb(RgbImage::filled(3, 2, [0, 0, 0]).unwrap());
        assert!(to_tensor::<f32>(&black, ColourMode::Rgb)
            .values
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn tensor_is_channel_major() {
        let img = Image::Rgb(RgbImage::from_raw(2, 1, vec![1, 2, 3, 4, 5, 6]).unwrap());
        let t = to_tensor::<f64>(&img, ColourMode::Rgb);
        let raw: Vec<u8> = t.values.iter().map(|v| (v * 255.0).round() as u8).collect();
        assert_eq!(raw, vec![1, 4, 2, 5, 3, 6]);
    }

    #[cfg(feature = "raster")]
    #[test]
    fn raster_adapter_decodes_png() {
        let mut png = Vec::new();
        let buf = image::RgbImage::from_raw(2, 1, vec![255, 0, 0, 0, 0, 255]).unwrap();
        buf.write_to(&mut std::io::Cursor::new(&mut png), image::ImageFormat::Png)
            .unwrap();
        let Image::Rgb(img) = decode_image(&png).unwrap() else {
            panic!()
        };
        assert_eq!(img.pixels(), &[255, 0, 0, 0, 0, 255]);
    }
}
