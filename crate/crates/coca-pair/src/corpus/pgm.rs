//! Image files: 8-bit binary PGM for eyeballing plus a raw f32 sidecar for
//! exact values.

use std::io::{Read, Write};
use std::path::Path;

use crate::{Error, Result};

/// Write an 8-bit binary PGM (P5).
pub fn write_pgm(path: &Path, side: usize, pixels: &[f32]) -> Result<()> {
    if pixels.len() != side * side {
        return Err(Error::shape(format!(
            "pgm: {} pixels for side {side}",
            pixels.len()
        )));
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(f, "P5\n{side} {side}\n255\n")?;
    let bytes: Vec<u8> = pixels
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    f.write_all(&bytes)?;
    Ok(())
}

/// Read an 8-bit binary PGM written by [`write_pgm`].
pub fn read_pgm(path: &Path) -> Result<(usize, Vec<f32>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let header_end = bytes
        .windows(1)
        .enumerate()
        .filter(|(_, w)| w[0] == b'\n')
        .map(|(i, _)| i)
        .nth(2)
        .ok_or_else(|| Error::parse(0, "pgm: truncated header"))?;
    let header = std::str::from_utf8(&bytes[..header_end])
        .map_err(|_| Error::parse(0, "pgm: non-utf8 header"))?;
    let mut lines = header.lines();
    if lines.next() != Some("P5") {
        return Err(Error::parse(0, "pgm: not a P5 file"));
    }
    let dims = lines.next().unwrap_or_default();
    let mut it = dims.split_whitespace();
    let w: usize = it
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::parse(3, "pgm: bad width"))?;
    let h: usize = it
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::parse(3, "pgm: bad height"))?;
    if w != h {
        return Err(Error::parse(3, "pgm: expected a square image"));
    }
    let data = &bytes[header_end + 1..];
    if data.len() < w * h {
        return Err(Error::parse(header_end, "pgm: truncated pixel data"));
    }
    Ok((w, data[..w * h].iter().map(|&b| b as f32 / 255.0).collect()))
}

const F32_MAGIC: &[u8; 4] = b"F32I";

/// Write the exact f32 sidecar.
pub fn write_f32(path: &Path, side: usize, pixels: &[f32]) -> Result<()> {
    if pixels.len() != side * side {
        return Err(Error::shape(format!(
            "f32 sidecar: {} pixels for side {side}",
            pixels.len()
        )));
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(F32_MAGIC)?;
    f.write_all(&(side as u32).to_le_bytes())?;
    for &v in pixels {
        f.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Read an f32 sidecar; bit-exact with what was written.
pub fn read_f32(path: &Path) -> Result<(usize, Vec<f32>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 8 || &bytes[0..4] != F32_MAGIC {
        return Err(Error::parse(0, "f32 sidecar: bad magic"));
    }
    let side = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let need = 8 + side * side * 4;
    if bytes.len() < need {
        return Err(Error::parse(8, "f32 sidecar: truncated"));
    }
    let pixels = bytes[8..need]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((side, pixels))
}
