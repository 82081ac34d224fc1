//! Binary PNM (P5 grayscale, P6 RGB) with maxval 255.

use super::{GrayImage, Image, RgbImage};
use crate::error::{format_err, Result};

struct Header {
    magic: [u8; 2],
    width: usize,
    height: usize,
    data_offset: usize,
}

fn skip_space_and_comments(bytes: &[u8], mut pos: usize) -> usize {
    loop {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
        } else {
            return pos;
        }
    }
}

fn read_uint(bytes: &[u8], pos: usize, what: &str) -> Result<(usize, usize)> {
    let start = skip_space_and_comments(bytes, pos);
    let mut end = start;
    while end < bytes.len() && bytes[end].is_ascii_digit() {
        end += 1;
    }
    if end == start {
        return Err(format_err(format!(
            "expected {what} at byte offset {start}"
        )));
    }
    let text = std::str::from_utf8(&bytes[start..end]).expect("ascii digits");
    let v = text
        .parse()
        .map_err(|_| format_err(format!("{what} {text} at byte offset {start} is too large")))?;
    Ok((v, end))
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 2 || bytes[0] != b'P' || !matches!(bytes[1], b'5' | b'6') {
        return Err(format_err(
            "bad magic at byte offset 0: expected P5 or P6".to_string(),
        ));
    }
    let magic = [bytes[0], bytes[1]];
    let (width, pos) = read_uint(bytes, 2, "width")?;
    let (height, pos) = read_uint(bytes, pos, "height")?;
    let (maxval, pos) = read_uint(bytes, pos, "maxval")?;
    if maxval != 255 {
        return Err(format_err(format!(
            "maxval {maxval} before byte offset {pos}: only 255 is supported"
        )));
    }
    if width == 0 || height == 0 {
        return Err(format_err(format!("zero image dimension {width}x{height}")));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(format_err(format!(
            "expected a single whitespace byte after maxval at byte offset {pos}"
        )));
    }
    Ok(Header {
        magic,
        width,
        height,
        data_offset: pos + 1,
    })
}

pub fn decode_pnm(bytes: &[u8]) -> Result<Image> {
    let h = parse_header(bytes)?;
    let channels = if h.magic[1] == b'6' { 3 } else { 1 };
    let expected = h
        .width
        .checked_mul(h.height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| format_err("image dimensions overflow"))?;
    let actual = bytes.len() - h.data_offset;
    if actual < expected {
        return Err(format_err(format!(
            "truncated payload at byte offset {}: expected {expected} bytes, found {actual}",
            h.data_offset
        )));
    }
    let data = bytes[h.data_offset..h.data_offset + expected].to_vec();
    Ok(if channels == 3 {
        Image::Rgb(RgbImage::from_raw(h.width, h.height, data)?)
    } else {
        Image::Gray(GrayImage::from_raw(h.width, h.height, data)?)
    })
}

/// Encodes with the canonical header `P6\n<w> <h>\n255\n` (or P5).
pub fn encode_pnm(img: &Image) -> Vec<u8> {
    let (magic, w, h, data) = match img {
        Image::Rgb(i) => ("P6", i.width(), i.height(), i.pixels()),
        Image::Gray(i) => ("P5", i.width(), i.height(), i.pixels()),
    };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(data);
    out
}
