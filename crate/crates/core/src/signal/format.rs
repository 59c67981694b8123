//! EEG segment files: `"EEGB"`, then little-endian `u32` channel count,
//! sample count and sample rate (Hz), then `C x L` little-endian `f32` values,
//! channel-major.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::segment::EegSegment;

pub const EEGB_MAGIC: &[u8; 4] = b"EEGB";

pub fn encode_eegb(segment: &EegSegment) -> Result<Vec<u8>> {
    let fs = segment.sample_rate.round();
    if (fs - segment.sample_rate).abs() > 1e-9 || fs < 1.0 || fs > u32::MAX as f64 {
        return Err(Error::Signal(format!("sample rate {} is not a whole number of Hz", segment.sample_rate)));
    }
    let mut out = Vec::with_capacity(16 + 4 * segment.data.len());
    out.extend_from_slice(EEGB_MAGIC);
    out.extend_from_slice(&(segment.channels as u32).to_le_bytes());
    out.extend_from_slice(&(segment.samples as u32).to_le_bytes());
    out.extend_from_slice(&(fs as u32).to_le_bytes());
    for v in &segment.data {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_eegb(bytes: &[u8], origin: &Path) -> Result<EegSegment> {
    if bytes.len() < 16 || &bytes[..4] != EEGB_MAGIC {
        return Err(Error::format(origin, "missing EEGB header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize;
    let (channels, samples, fs) = (word(0), word(1), word(2));
    let expected = 16 + 4 * channels * samples;
    if bytes.len() != expected {
        return Err(Error::format(origin, format!("expected {expected} bytes, found {}", bytes.len())));
    }
    let data = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    EegSegment::new(channels, samples, fs as f64, data)
}

pub fn write_eegb(path: &Path, segment: &EegSegment) -> Result<()> {
    fs::write(path, encode_eegb(segment)?).map_err(|e| Error::io(path, e))
}

pub fn read_eegb(path: &Path) -> Result<EegSegment> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_eegb(&bytes, path)
}
