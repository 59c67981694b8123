//! RGB images as planar `3 x H x W` floats in `[0, 1]`, with binary PPM/PGM
//! readers and writers.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// Planar RGB: plane `p` occupies `data[p*H*W .. (p+1)*H*W]`, row-major.
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != 3 * width * height {
            return Err(Error::InvalidArgument(format!(
                "{width}x{height} RGB image needs {} values, got {}",
                3 * width * height,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; 3 * width * height] }
    }

    pub fn plane_len(&self) -> usize {
        self.width * self.height
    }

    pub fn get(&self, plane: usize, x: usize, y: usize) -> f64 {
        self.data[plane * self.plane_len() + y * self.width + x]
    }

    pub fn set(&mut self, plane: usize, x: usize, y: usize, v: f64) {
        let n = self.plane_len();
        self.data[plane * n + y * self.width + x] = v;
    }

    /// Rounds to 8 bits and back, as a PPM round trip would.
    pub fn quantized(&self) -> Self {
        let data = self.data.iter().map(|v| to_u8(*v) as f64 / 255.0).collect();
        Self { data, ..*self }
    }
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode_ppm(image: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width, image.height).into_bytes();
    let n = image.plane_len();
    for i in 0..n {
        for p in 0..3 {
            out.push(to_u8(image.data[p * n + i]));
        }
    }
    out
}

fn header_fields(bytes: &[u8], count: usize, origin: &Path) -> Result<(Vec<String>, usize)> {
    let mut fields = Vec::with_capacity(count);
    let mut i = 0;
    while fields.len() < count {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(Error::format(origin, "truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    // exactly one whitespace byte separates the header from the raster
    Ok((fields, i + 1))
}

pub fn decode_ppm(bytes: &[u8], origin: &Path) -> Result<Image> {
    let (f, start) = header_fields(bytes, 4, origin)?;
    if f[0] != "P6" {
        return Err(Error::format(origin, "not a binary PPM (P6)"));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::format(origin, format!("bad header field {s:?}")));
    let (w, h, maxval) = (parse(&f[1])?, parse(&f[2])?, parse(&f[3])?);
    if maxval != 255 {
        return Err(Error::format(origin, "only 8-bit PPM is supported"));
    }
    let raster = bytes.get(start..).unwrap_or_default();
    if raster.len() != 3 * w * h {
        return Err(Error::format(origin, format!("expected {} raster bytes, found {}", 3 * w * h, raster.len())));
    }
    let n = w * h;
    let mut data = vec![0.0; 3 * n];
    for i in 0..n {
        for p in 0..3 {
            data[p * n + i] = raster[3 * i + p] as f64 / 255.0;
        }
    }
    Image::new(w, h, data)
}

pub fn write_ppm(path: &Path, image: &Image) -> Result<()> {
    fs::write(path, encode_ppm(image)).map_err(|e| Error::io(path, e))
}

pub fn read_ppm(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes, path)
}

/// Grayscale PGM (P5) from values in `[0, 1]`, 8- or 16-bit (big-endian).
pub fn encode_pgm(values: &[f64], width: usize, height: usize, sixteen_bit: bool) -> Result<Vec<u8>> {
    if values.len() != width * height {
        return Err(Error::InvalidArgument(format!(
            "{width}x{height} PGM needs {} values, got {}",
            width * height,
            values.len()
        )));
    }
    let maxval: u32 = if sixteen_bit { 65535 } else { 255 };
    let mut out = format!("P5\n{width} {height}\n{maxval}\n").into_bytes();
    for v in values {
        let q = (v.clamp(0.0, 1.0) * maxval as f64).round() as u32;
        if sixteen_bit {
            out.extend_from_slice(&(q as u16).to_be_bytes());
        } else {
            out.push(q as u8);
        }
    }
    Ok(out)
}

pub fn write_pgm(path: &Path, values: &[f64], width: usize, height: usize, sixteen_bit: bool) -> Result<()> {
    fs::write(path, encode_pgm(values, width, height, sixteen_bit)?).map_err(|e| Error::io(path, e))
}

/// Reads a P5 file back to values in `[0, 1]`.
pub fn read_pgm(path: &Path) -> Result<(Vec<f64>, usize, usize)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (f, start) = header_fields(&bytes, 4, path)?;
    if f[0] != "P5" {
        return Err(Error::format(path, "not a binary PGM (P5)"));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::format(path, format!("bad header field {s:?}")));
    let (w, h, maxval) = (parse(&f[1])?, parse(&f[2])?, parse(&f[3])?);
    let raster = bytes.get(start..).unwrap_or_default();
    let values: Vec<f64> = match maxval {
        255 if raster.len() == w * h => raster.iter().map(|b| *b as f64 / 255.0).collect(),
        65535 if raster.len() == 2 * w * h => {
            raster.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / 65535.0).collect()
        }
        _ => return Err(Error::format(path, "unsupported maxval or truncated raster")),
    };
    Ok((values, w, h))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip() {
        let mut img = Image::zeros(3, 2);
        img.set(0, 2, 1, 1.0);
        img.set(1, 0, 0, 0.5);
        let bytes = encode_ppm(&img);
        assert!(bytes.starts_with(b"P6\n3 2\n255\n"));
        let back = decode_ppm(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, img.quantized());
        assert!(decode_ppm(&bytes[..bytes.len() - 1], Path::new("mem")).is_err());
    }

    #[test]
    fn pgm_sixteen_bit_layout() {
        let b = encode_pgm(&[0.0, 1.0], 2, 1, true).unwrap();
        assert!(b.ends_with(&[0, 0, 0xff, 0xff]));
        assert!(encode_pgm(&[0.0], 2, 1, false).is_err());
    }
}
