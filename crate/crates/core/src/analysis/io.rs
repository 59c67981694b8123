use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::write_pgm;

use super::saliency::SaliencyMap;

/// CSV of a row-major matrix, no header.
pub fn grid_csv(values: &[f64], width: usize) -> String {
    let mut s = String::with_capacity(values.len() * 12);
    for row in values.chunks(width) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}

/// CSV with a header row; each row starts with its label.
pub fn labeled_csv(header: &[String], rows: &[(String, Vec<f64>)]) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for (label, vals) in rows {
        s.push_str(label);
        for v in vals {
            s.push(',');
            s.push_str(&v.to_string());
        }
        s.push('\n');
    }
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// `map.pgm` (16-bit, normalized), `map.csv` (raw sum) and one
/// `scale_<sigma>.csv` per scale.
pub fn write_saliency(dir: &Path, map: &SaliencyMap) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_pgm(&dir.join("map.pgm"), &map.values, map.width, map.height, true)?;
    write_text(&dir.join("map.csv"), &grid_csv(&map.raw, map.width))?;
    for s in &map.scales {
        write_text(&dir.join(format!("scale_{}.csv", s.sigma)), &grid_csv(&s.values, map.width))?;
    }
    Ok(())
}
