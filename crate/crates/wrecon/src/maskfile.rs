//! Plain-text sampling masks.
//!
//! ```text
//! # wrecon sampling mask
//! height 8
//! acceleration 4
//! center_lines 2
//! sigma_frac 0.15
//! seed 1
//! rows 00011000
//! ```

use std::fmt::Write as _;
use std::path::Path;

use wrecon_core::kspace::MaskMeta;
use wrecon_core::SamplingMask;

use crate::error::{FormatError, Result};
use crate::fsutil;

pub fn encode(mask: &SamplingMask) -> String {
    let m = mask.meta();
    let mut s = String::from("# wrecon sampling mask\n");
    let _ = writeln!(s, "height {}", mask.height());
    let _ = writeln!(s, "acceleration {}", m.acceleration);
    let _ = writeln!(s, "center_lines {}", m.center_lines);
    let _ = writeln!(s, "sigma_frac {}", m.sigma_frac);
    let _ = writeln!(s, "seed {}", m.seed);
    s.push_str("rows ");
    s.extend(mask.rows().iter().map(|&k| if k { '1' } else { '0' }));
    s.push('\n');
    s
}

pub fn decode(text: &str) -> Result<SamplingMask> {
    let mut height = None;
    let mut acceleration = None;
    let mut center_lines = None;
    let mut sigma_frac = None;
    let mut seed = None;
    let mut rows = None;
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once(char::is_whitespace)
            .ok_or_else(|| FormatError::invalid("mask", format!("line {}: expected `key value`", n + 1)))?;
        let value = value.trim();
        let bad = |what: &str| FormatError::invalid("mask", format!("line {}: bad {what} {value:?}", n + 1));
        match key {
            "height" => height = Some(value.parse::<usize>().map_err(|_| bad("height"))?),
            "acceleration" => acceleration = Some(value.parse::<f64>().map_err(|_| bad("acceleration"))?),
            "center_lines" => center_lines = Some(value.parse::<usize>().map_err(|_| bad("center_lines"))?),
            "sigma_frac" => sigma_frac = Some(value.parse::<f64>().map_err(|_| bad("sigma_frac"))?),
            "seed" => seed = Some(value.parse::<u64>().map_err(|_| bad("seed"))?),
            "rows" => {
                rows = Some(
                    value
                        .chars()
                        .map(|c| match c {
                            '0' => Ok(false),
                            '1' => Ok(true),
                            _ => Err(bad("rows")),
                        })
                        .collect::<Result<Vec<bool>>>()?,
                )
            }
            other => return Err(FormatError::invalid("mask", format!("line {}: unknown key {other:?}", n + 1))),
        }
    }
    let missing = |k: &str| FormatError::invalid("mask", format!("missing {k}"));
    let rows = rows.ok_or_else(|| missing("rows"))?;
    let height = height.ok_or_else(|| missing("height"))?;
    if rows.len() != height {
        return Err(FormatError::invalid("mask", format!("height {height} but {} row flags", rows.len())));
    }
    let meta = MaskMeta {
        acceleration: acceleration.ok_or_else(|| missing("acceleration"))?,
        center_lines: center_lines.ok_or_else(|| missing("center_lines"))?,
        sigma_frac: sigma_frac.ok_or_else(|| missing("sigma_frac"))?,
        seed: seed.ok_or_else(|| missing("seed"))?,
    };
    Ok(SamplingMask::from_rows(rows, meta)?)
}

pub fn save_mask(mask: &SamplingMask, path: &Path) -> Result<()> {
    fsutil::write_atomic(path, encode(mask).as_bytes())
}

pub fn load_mask(path: &Path) -> Result<SamplingMask> {
    let bytes = fsutil::read(path)?;
    let text = String::from_utf8(bytes).map_err(|e| FormatError::invalid("mask", e.to_string()))?;
    decode(&text)
}
