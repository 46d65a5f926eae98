//! Binary PPM (P6) color images, PGM (P5) previews, PFM (`Pf`) depth maps
//! and JSON documents.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{io_err, Error, Result};
use crate::geometry::DepthMap;

use super::scene::Image;

fn format_err(path: &Path, format: &'static str, offset: usize, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        format,
        offset,
        msg: msg.into(),
    }
}

/// Netpbm-style header reader: whitespace-separated tokens, `#` comments.
struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Header<'a> {
    fn token(&mut self) -> Option<(usize, &'a str)> {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.bytes.len() && self.bytes[self.pos] == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
                continue;
            }
            break;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return None;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .map(|s| (start, s))
    }

    /// Consumes the single whitespace byte that ends a header.
    fn end(&mut self) -> Option<usize> {
        if self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
            Some(self.pos)
        } else {
            None
        }
    }
}

fn parse_dims(path: &Path, fmt: &'static str, hdr: &mut Header) -> Result<(usize, usize)> {
    let mut next = |what: &str| -> Result<usize> {
        let at = hdr.pos;
        let (off, tok) = hdr
            .token()
            .ok_or_else(|| format_err(path, fmt, at, format!("missing {what}")))?;
        tok.parse::<usize>()
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| format_err(path, fmt, off, format!("invalid {what} `{tok}`")))
    };
    let w = next("width")?;
    let h = next("height")?;
    Ok((w, h))
}

pub fn encode_ppm(img: &Image) -> Vec<u8> {
    let (w, h) = (img.width, img.height);
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(3 * w * h);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                out.push((img.pixel(c, x, y).clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    out
}

pub fn decode_ppm(bytes: &[u8], path: &Path) -> Result<Image> {
    const F: &str = "PPM";
    let mut hdr = Header { bytes, pos: 0 };
    match hdr.token() {
        Some((_, "P6")) => {}
        _ => return Err(format_err(path, F, 0, "expected magic `P6`")),
    }
    let (w, h) = parse_dims(path, F, &mut hdr)?;
    let at = hdr.pos;
    let (off, tok) = hdr
        .token()
        .ok_or_else(|| format_err(path, F, at, "missing maxval"))?;
    if tok != "255" {
        return Err(format_err(
            path,
            F,
            off,
            format!("unsupported maxval `{tok}`, expected 255"),
        ));
    }
    let body = hdr
        .end()
        .ok_or_else(|| format_err(path, F, hdr.pos, "header must end with whitespace"))?;
    let need = 3 * w * h;
    let got = bytes.len() - body;
    if got != need {
        return Err(format_err(
            path,
            F,
            body,
            format!("expected {need} payload bytes, found {got}"),
        ));
    }
    let mut data = vec![0.0f32; need];
    for (i, px) in bytes[body..].chunks_exact(3).enumerate() {
        let (x, y) = (i % w, i / w);
        for c in 0..3 {
            data[(c * h + y) * w + x] = px[c] as f32 / 255.0;
        }
    }
    Image::new(w, h, data)
}

/// 8-bit grayscale PGM (P5).
pub fn encode_pgm(width: usize, height: usize, values: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(values);
    out
}

pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    const F: &str = "PGM";
    let mut hdr = Header { bytes, pos: 0 };
    match hdr.token() {
        Some((_, "P5")) => {}
        _ => return Err(format_err(path, F, 0, "expected magic `P5`")),
    }
    let (w, h) = parse_dims(path, F, &mut hdr)?;
    let at = hdr.pos;
    let (off, tok) = hdr
        .token()
        .ok_or_else(|| format_err(path, F, at, "missing maxval"))?;
    if tok != "255" {
        return Err(format_err(
            path,
            F,
            off,
            format!("unsupported maxval `{tok}`"),
        ));
    }
    let body = hdr
        .end()
        .ok_or_else(|| format_err(path, F, hdr.pos, "header must end with whitespace"))?;
    let got = bytes.len() - body;
    if got != w * h {
        return Err(format_err(
            path,
            F,
            body,
            format!("expected {} payload bytes, found {got}", w * h),
        ));
    }
    Ok((w, h, bytes[body..].to_vec()))
}

/// Grayscale PFM, little-endian (scale −1), rows stored bottom-up.
pub fn encode_pfm(depth: &DepthMap) -> Vec<u8> {
    let (w, h) = (depth.width, depth.height);
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(4 * w * h);
    for y in (0..h).rev() {
        for x in 0..w {
            out.extend_from_slice(&depth.at(x, y).to_le_bytes());
        }
    }
    out
}

pub fn decode_pfm(bytes: &[u8], path: &Path) -> Result<DepthMap> {
    const F: &str = "PFM";
    let mut hdr = Header { bytes, pos: 0 };
    match hdr.token() {
        Some((_, "Pf")) => {}
        Some((_, "PF")) => {
            return Err(format_err(
                path,
                F,
                0,
                "color PFM (`PF`) is not a depth map",
            ))
        }
        _ => return Err(format_err(path, F, 0, "expected magic `Pf`")),
    }
    let (w, h) = parse_dims(path, F, &mut hdr)?;
    let at = hdr.pos;
    let (off, tok) = hdr
        .token()
        .ok_or_else(|| format_err(path, F, at, "missing scale"))?;
    let scale: f32 = tok
        .parse()
        .ok()
        .filter(|s: &f32| *s != 0.0 && s.is_finite())
        .ok_or_else(|| format_err(path, F, off, format!("invalid scale `{tok}`")))?;
    let little = scale < 0.0;
    let body = hdr
        .end()
        .ok_or_else(|| format_err(path, F, hdr.pos, "header must end with whitespace"))?;
    let need = 4 * w * h;
    let got = bytes.len() - body;
    if got != need {
        return Err(format_err(
            path,
            F,
            body,
            format!("expected {need} payload bytes, found {got}"),
        ));
    }
    let mut values = vec![0.0f32; w * h];
    for (i, c) in bytes[body..].chunks_exact(4).enumerate() {
        let raw = [c[0], c[1], c[2], c[3]];
        let v = if little {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        };
        let (x, row) = (i % w, i / w);
        values[(h - 1 - row) * w + x] = v;
    }
    DepthMap::new(w, h, values)
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(io_err(path))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
    }
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn read_ppm(path: &Path) -> Result<Image> {
    decode_ppm(&read_bytes(path)?, path)
}

pub fn write_ppm(path: &Path, img: &Image) -> Result<()> {
    write_bytes(path, &encode_ppm(img))
}

pub fn read_pfm(path: &Path) -> Result<DepthMap> {
    decode_pfm(&read_bytes(path)?, path)
}

pub fn write_pfm(path: &Path, depth: &DepthMap) -> Result<()> {
    write_bytes(path, &encode_pfm(depth))
}

pub fn write_pgm(path: &Path, width: usize, height: usize, values: &[u8]) -> Result<()> {
    write_bytes(path, &encode_pgm(width, height, values))
}

pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    decode_pgm(&read_bytes(path)?, path)
}

/// Inverse-depth preview: smallest disparity maps to 0, largest to 255.
pub fn disparity_preview(depth: &DepthMap) -> Vec<u8> {
    let disp: Vec<f32> = depth.values.iter().map(|&d| 1.0 / d).collect();
    let lo = disp.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = disp.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let span = hi - lo;
    disp.iter()
        .map(|&v| {
            if span > 0.0 {
                ((v - lo) / span * 255.0).round() as u8
            } else {
                0
            }
        })
        .collect()
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    write_bytes(path, format!("{text}\n").as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("mem")
    }

    #[test]
    fn ppm_roundtrip_is_exact_for_quantized_values() {
        let data: Vec<f32> = (0..3 * 5 * 4)
            .map(|i| ((i * 37) % 256) as f32 / 255.0)
            .collect();
        let img = Image::new(5, 4, data).unwrap();
        let back = decode_ppm(&encode_ppm(&img), p()).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn pfm_roundtrip_is_bitwise() {
        let values: Vec<f32> = (0..12).map(|i| 0.1 + i as f32 * 1.37e-3).collect();
        let d = DepthMap::new(4, 3, values).unwrap();
        let bytes = encode_pfm(&d);
        // Last row stored first.
        let first = f32::from_le_bytes(
            bytes[bytes.len() - 48..bytes.len() - 44]
                .try_into()
                .unwrap(),
        );
        assert_eq!(first.to_bits(), d.at(0, 2).to_bits());
        let back = decode_pfm(&bytes, p()).unwrap();
        assert!(back
            .values
            .iter()
            .zip(&d.values)
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn truncated_pfm_names_sizes_and_offset() {
        let d = DepthMap::new(4, 3, vec![1.0; 12]).unwrap();
        let mut bytes = encode_pfm(&d);
        bytes.truncate(bytes.len() - 5);
        let err = decode_pfm(&bytes, p()).unwrap_err().to_string();
        assert!(err.contains("expected 48 payload bytes, found 43"), "{err}");
        assert!(err.contains("offset 12"), "{err}");
    }

    #[test]
    fn malformed_headers_report_offsets() {
        let err = decode_ppm(b"P6\n4 x\n255\n", p()).unwrap_err().to_string();
        assert!(err.contains("offset 5") && err.contains("height"), "{err}");
        let err = decode_pfm(b"P5\n", p()).unwrap_err().to_string();
        assert!(err.contains("offset 0"), "{err}");
    }

    #[test]
    fn big_endian_pfm_is_accepted() {
        let mut bytes = b"Pf\n1 1\n1.0\n".to_vec();
        bytes.extend_from_slice(&2.5f32.to_be_bytes());
        assert_eq!(decode_pfm(&bytes, p()).unwrap().values, vec![2.5]);
    }

    #[test]
    fn preview_spans_full_range() {
        let d = DepthMap::new(3, 1, vec![1.0, 2.0, 4.0]).unwrap();
        assert_eq!(disparity_preview(&d), vec![255, 85, 0]);
    }
}
