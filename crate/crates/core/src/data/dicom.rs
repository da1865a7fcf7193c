//! Minimal DICOM Part-10 reader/writer: explicit VR little endian,
//! uncompressed single-frame monochrome images only.

use std::fs;
use std::path::Path;

use ndarray::Array2;

pub const EXPLICIT_VR_LE: &str = "1.2.840.10008.1.2.1";

const TAG_TRANSFER_SYNTAX: (u16, u16) = (0x0002, 0x0010);
const TAG_PATIENT_ID: (u16, u16) = (0x0010, 0x0020);
const TAG_TRIGGER_TIME: (u16, u16) = (0x0018, 0x1060);
const TAG_SERIES_UID: (u16, u16) = (0x0020, 0x000E);
const TAG_INSTANCE_NUMBER: (u16, u16) = (0x0020, 0x0013);
const TAG_SAMPLES_PER_PIXEL: (u16, u16) = (0x0028, 0x0002);
const TAG_PHOTOMETRIC: (u16, u16) = (0x0028, 0x0004);
const TAG_NUMBER_OF_FRAMES: (u16, u16) = (0x0028, 0x0008);
const TAG_ROWS: (u16, u16) = (0x0028, 0x0010);
const TAG_COLUMNS: (u16, u16) = (0x0028, 0x0011);
const TAG_BITS_ALLOCATED: (u16, u16) = (0x0028, 0x0100);
const TAG_PIXEL_REPRESENTATION: (u16, u16) = (0x0028, 0x0103);
const TAG_PIXEL_DATA: (u16, u16) = (0x7FE0, 0x0010);
const TAG_ITEM: (u16, u16) = (0xFFFE, 0xE000);
const TAG_ITEM_END: (u16, u16) = (0xFFFE, 0xE00D);
const TAG_SEQ_END: (u16, u16) = (0xFFFE, 0xE0DD);
const UNDEFINED: u32 = 0xFFFF_FFFF;

/// Header fields needed to group and order a cine series.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DicomHeader {
    pub patient_id: Option<String>,
    pub series_uid: Option<String>,
    pub instance_number: Option<i64>,
    pub trigger_time: Option<f64>,
    pub rows: usize,
    pub columns: usize,
    pub bits_allocated: u16,
    pub signed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DicomImage {
    pub header: DicomHeader,
    /// Samples in stored order; signed data is offset by 32768 so ordering is kept.
    pub pixels: Array2<u16>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or("unexpected end of file")?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u16(&mut self) -> Result<u16, String> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }
    fn u32(&mut self) -> Result<u32, String> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
    fn at_end(&self) -> bool {
        self.pos >= self.bytes.len()
    }
}

fn long_length_vr(vr: &[u8]) -> bool {
    matches!(vr, b"OB" | b"OD" | b"OF" | b"OL" | b"OV" | b"OW" | b"SQ" | b"SV" | b"UC" | b"UN" | b"UR" | b"UT" | b"UV")
}

struct Element<'a> {
    tag: (u16, u16),
    value: Option<&'a [u8]>,
}

/// Skip an undefined-length sequence up to and including its delimiter.
fn skip_sequence(c: &mut Cursor) -> Result<(), String> {
    loop {
        let tag = (c.u16()?, c.u16()?);
        let len = c.u32()?;
        match tag {
            TAG_SEQ_END => return Ok(()),
            TAG_ITEM if len == UNDEFINED => loop {
                let el = read_element(c)?;
                if el.tag == TAG_ITEM_END {
                    break;
                }
            },
            TAG_ITEM => {
                c.take(len as usize)?;
            }
            other => return Err(format!("unexpected tag {:04X},{:04X} inside sequence", other.0, other.1)),
        }
    }
}

fn read_element<'a>(c: &mut Cursor<'a>) -> Result<Element<'a>, String> {
    let tag = (c.u16()?, c.u16()?);
    if tag.0 == 0xFFFE {
        // Item/delimiter tags carry no VR.
        let len = c.u32()?;
        if tag == TAG_ITEM_END || tag == TAG_SEQ_END {
            return Ok(Element { tag, value: None });
        }
        return Err(format!("stray item tag with length {len}"));
    }
    let vr = c.take(2)?;
    if !vr.iter().all(u8::is_ascii_uppercase) {
        return Err(format!("tag {:04X},{:04X} lacks an explicit VR", tag.0, tag.1));
    }
    let len = if long_length_vr(vr) {
        c.take(2)?;
        c.u32()?
    } else {
        c.u16()? as u32
    };
    if len == UNDEFINED {
        if vr == b"SQ" {
            skip_sequence(c)?;
            return Ok(Element { tag, value: None });
        }
        return Err("encapsulated (compressed) pixel data is not supported".into());
    }
    Ok(Element { tag, value: Some(c.take(len as usize)?) })
}

fn text(v: &[u8]) -> String {
    String::from_utf8_lossy(v).trim_matches(|c: char| c == '\0' || c.is_whitespace()).to_string()
}

fn le_u16(v: &[u8]) -> Result<u16, String> {
    v.get(..2).map(|b| u16::from_le_bytes([b[0], b[1]])).ok_or_else(|| "short US value".into())
}

fn parse(bytes: &[u8], want_pixels: bool) -> Result<(DicomHeader, Option<&[u8]>), String> {
    if bytes.len() < 132 || &bytes[128..132] != b"DICM" {
        return Err("missing DICM preamble".into());
    }
    let mut c = Cursor { bytes, pos: 132 };
    let mut h = DicomHeader::default();
    let mut transfer_syntax = None;
    let mut samples_per_pixel = 1;
    let mut photometric = None;
    let mut frames = 1i64;
    while !c.at_end() {
        let el = read_element(&mut c)?;
        let Some(v) = el.value else { continue };
        match el.tag {
            TAG_TRANSFER_SYNTAX => transfer_syntax = Some(text(v)),
            TAG_PATIENT_ID => h.patient_id = Some(text(v)).filter(|s| !s.is_empty()),
            TAG_SERIES_UID => h.series_uid = Some(text(v)).filter(|s| !s.is_empty()),
            TAG_INSTANCE_NUMBER => h.instance_number = text(v).parse().ok(),
            TAG_TRIGGER_TIME => h.trigger_time = text(v).parse().ok(),
            TAG_SAMPLES_PER_PIXEL => samples_per_pixel = le_u16(v)?,
            TAG_PHOTOMETRIC => photometric = Some(text(v)),
            TAG_NUMBER_OF_FRAMES => frames = text(v).parse().unwrap_or(1),
            TAG_ROWS => h.rows = le_u16(v)? as usize,
            TAG_COLUMNS => h.columns = le_u16(v)? as usize,
            TAG_BITS_ALLOCATED => h.bits_allocated = le_u16(v)?,
            TAG_PIXEL_REPRESENTATION => h.signed = le_u16(v)? == 1,
            TAG_PIXEL_DATA => {
                check(&h, transfer_syntax.as_deref(), samples_per_pixel, photometric.as_deref(), frames)?;
                let need = h.rows * h.columns * (h.bits_allocated as usize / 8);
                if v.len() < need {
                    return Err(format!("pixel data holds {} bytes, {need} required", v.len()));
                }
                return Ok((h, want_pixels.then_some(&v[..need])));
            }
            _ => {}
        }
    }
    Err("no pixel data element".into())
}

fn check(h: &DicomHeader, ts: Option<&str>, spp: u16, photometric: Option<&str>, frames: i64) -> Result<(), String> {
    match ts {
        Some(EXPLICIT_VR_LE) => {}
        Some(other) => return Err(format!("unsupported transfer syntax {other}")),
        None => return Err("missing transfer syntax".into()),
    }
    if spp != 1 || !matches!(photometric, None | Some("MONOCHROME1") | Some("MONOCHROME2")) {
        return Err("only single-channel monochrome images are supported".into());
    }
    if frames != 1 {
        return Err("multi-frame objects are not supported".into());
    }
    if h.rows == 0 || h.columns == 0 {
        return Err("missing image dimensions".into());
    }
    if h.bits_allocated != 8 && h.bits_allocated != 16 {
        return Err(format!("unsupported bits allocated {}", h.bits_allocated));
    }
    Ok(())
}

/// Parse everything up to (not including) the pixel samples.
pub fn read_header(path: &Path) -> Result<DicomHeader, String> {
    let bytes = fs::read(path).map_err(|e| e.to_string())?;
    parse(&bytes, false).map(|(h, _)| h)
}

pub fn decode(bytes: &[u8]) -> Result<DicomImage, String> {
    let (header, raw) = parse(bytes, true)?;
    let raw = raw.expect("pixels requested");
    let samples: Vec<u16> = match (header.bits_allocated, header.signed) {
        (16, false) => raw.chunks_exact(2).map(|b| u16::from_le_bytes([b[0], b[1]])).collect(),
        (16, true) => raw
            .chunks_exact(2)
            .map(|b| (i16::from_le_bytes([b[0], b[1]]) as i32 + 32768) as u16)
            .collect(),
        (_, false) => raw.iter().map(|&v| v as u16).collect(),
        (_, true) => raw.iter().map(|&v| (v as i8 as i32 + 128) as u16).collect(),
    };
    let pixels = Array2::from_shape_vec((header.rows, header.columns), samples).expect("length checked");
    Ok(DicomImage { header, pixels })
}

pub fn read(path: &Path) -> Result<DicomImage, String> {
    let bytes = fs::read(path).map_err(|e| e.to_string())?;
    decode(&bytes)
}

fn push_element(out: &mut Vec<u8>, tag: (u16, u16), vr: &[u8; 2], value: &[u8]) {
    let mut value = value.to_vec();
    if value.len() % 2 == 1 {
        value.push(if vr == b"UI" || vr == b"OB" { 0 } else { b' ' });
    }
    out.extend_from_slice(&tag.0.to_le_bytes());
    out.extend_from_slice(&tag.1.to_le_bytes());
    out.extend_from_slice(vr);
    if long_length_vr(vr) {
        out.extend_from_slice(&[0, 0]);
        out.extend_from_slice(&(value.len() as u32).to_le_bytes());
    } else {
        out.extend_from_slice(&(value.len() as u16).to_le_bytes());
    }
    out.extend_from_slice(&value);
}

/// Encode a 16-bit unsigned image. Produces only the tags the reader needs.
pub fn encode(header: &DicomHeader, pixels: &Array2<u16>) -> Vec<u8> {
    let (rows, cols) = pixels.dim();
    let mut out = vec![0u8; 128];
    out.extend_from_slice(b"DICM");
    let mut meta = Vec::new();
    push_element(&mut meta, TAG_TRANSFER_SYNTAX, b"UI", EXPLICIT_VR_LE.as_bytes());
    push_element(&mut out, (0x0002, 0x0000), b"UL", &(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta);
    if let Some(p) = &header.patient_id {
        push_element(&mut out, TAG_PATIENT_ID, b"LO", p.as_bytes());
    }
    if let Some(t) = header.trigger_time {
        push_element(&mut out, TAG_TRIGGER_TIME, b"DS", format!("{t}").as_bytes());
    }
    if let Some(s) = &header.series_uid {
        push_element(&mut out, TAG_SERIES_UID, b"UI", s.as_bytes());
    }
    if let Some(n) = header.instance_number {
        push_element(&mut out, TAG_INSTANCE_NUMBER, b"IS", n.to_string().as_bytes());
    }
    push_element(&mut out, TAG_SAMPLES_PER_PIXEL, b"US", &1u16.to_le_bytes());
    push_element(&mut out, TAG_PHOTOMETRIC, b"CS", b"MONOCHROME2");
    push_element(&mut out, TAG_ROWS, b"US", &(rows as u16).to_le_bytes());
    push_element(&mut out, TAG_COLUMNS, b"US", &(cols as u16).to_le_bytes());
    push_element(&mut out, TAG_BITS_ALLOCATED, b"US", &16u16.to_le_bytes());
    push_element(&mut out, (0x0028, 0x0101), b"US", &16u16.to_le_bytes());
    push_element(&mut out, TAG_PIXEL_REPRESENTATION, b"US", &0u16.to_le_bytes());
    let raw: Vec<u8> = pixels.iter().flat_map(|v| v.to_le_bytes()).collect();
    push_element(&mut out, TAG_PIXEL_DATA, b"OW", &raw);
    out
}

pub fn write(path: &Path, header: &DicomHeader, pixels: &Array2<u16>) -> std::io::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, encode(header, pixels))
}
