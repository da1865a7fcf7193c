//! Binary PGM (`P5`) with 8- or 16-bit samples. 16-bit samples are big-endian.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView2};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PgmHeader {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    /// Byte offset of the first sample.
    pub data_offset: usize,
}

impl PgmHeader {
    pub fn bytes_per_sample(&self) -> usize {
        if self.maxval > 255 {
            2
        } else {
            1
        }
    }

    pub fn data_len(&self) -> usize {
        self.width * self.height * self.bytes_per_sample()
    }
}

fn next_token(bytes: &[u8], pos: &mut usize) -> Result<String, String> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&c| c != b'\n') {
                    *pos += 1;
                }
            }
            Some(c) if c.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err("truncated header".into()),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(|c| !c.is_ascii_whitespace()) {
        *pos += 1;
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

pub fn parse_header(bytes: &[u8]) -> Result<PgmHeader, String> {
    let mut pos = 0;
    if next_token(bytes, &mut pos)? != "P5" {
        return Err("not a binary PGM (missing P5 magic)".into());
    }
    let mut num = |what: &str| -> Result<usize, String> {
        next_token(bytes, &mut pos)?.parse::<usize>().map_err(|_| format!("bad {what}"))
    };
    let width = num("width")?;
    let height = num("height")?;
    let maxval = num("maxval")?;
    if width == 0 || height == 0 {
        return Err("zero image dimension".into());
    }
    if maxval == 0 || maxval > 65535 {
        return Err(format!("maxval {maxval} out of range"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    let header = PgmHeader { width, height, maxval: maxval as u16, data_offset: pos + 1 };
    if bytes.len() < header.data_offset + header.data_len() {
        return Err(format!(
            "raster truncated: expected {} bytes, found {}",
            header.data_len(),
            bytes.len().saturating_sub(header.data_offset)
        ));
    }
    Ok(header)
}

/// Decode a P5 buffer into raw samples and its maxval.
pub fn decode(bytes: &[u8]) -> Result<(Array2<u16>, u16), String> {
    let h = parse_header(bytes)?;
    let raster = &bytes[h.data_offset..h.data_offset + h.data_len()];
    let samples: Vec<u16> = if h.bytes_per_sample() == 2 {
        raster.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
    } else {
        raster.iter().map(|&v| v as u16).collect()
    };
    if samples.iter().any(|&v| v > h.maxval) {
        return Err("sample exceeds maxval".into());
    }
    let arr = Array2::from_shape_vec((h.height, h.width), samples).expect("raster length checked");
    Ok((arr, h.maxval))
}

pub fn read(path: &Path) -> Result<(Array2<u16>, u16), String> {
    let bytes = fs::read(path).map_err(|e| e.to_string())?;
    decode(&bytes)
}

/// Encode as 16-bit P5 with maxval 65535.
pub fn encode16(image: ArrayView2<u16>) -> Vec<u8> {
    let (h, w) = image.dim();
    let mut out = format!("P5\n{w} {h}\n65535\n").into_bytes();
    out.reserve(h * w * 2);
    for &v in image.iter() {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out
}

pub fn write16(path: &Path, image: ArrayView2<u16>) -> std::io::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&encode16(image))
}

/// Quantise a `[0, 1]` image to 16 bits and write it.
pub fn write_unit_f32(path: &Path, image: ArrayView2<f32>) -> std::io::Result<()> {
    let q = image.mapv(|v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16);
    write16(path, q.view())
}
