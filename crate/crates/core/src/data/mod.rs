//! Cine series discovery and loading (minimal DICOM or a 16-bit PGM tree),
//! intensity normalisation, and the synthetic phantom generator.

pub mod dicom;
mod phantom;
pub mod pgm;

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use walkdir::WalkDir;

pub use phantom::{synth_phantom_clip, PhantomConfig};

use crate::spatial::resize_bicubic_to;

pub const DEFAULT_FRAME_SIZE: usize = 256;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("dataset root {0} does not exist")]
    RootNotFound(PathBuf),
    #[error("no series for patient {patient_id:?} slice {slice_id:?}")]
    SeriesNotFound { patient_id: String, slice_id: String },
    #[error("cannot decode {path}: {reason}")]
    CorruptFrame { path: PathBuf, reason: String },
    #[error("series {patient_id}/{slice_id} is missing time index {index}")]
    MissingFrame { patient_id: String, slice_id: String, index: i64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFormat {
    Dicom,
    PgmTree,
}

impl std::str::FromStr for DatasetFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "dicom" => Ok(Self::Dicom),
            "pgm_tree" | "pgm-tree" => Ok(Self::PgmTree),
            other => Err(format!("unknown dataset format {other:?} (expected dicom or pgm_tree)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeriesRecord {
    pub patient_id: String,
    pub slice_id: String,
    pub frame_count: usize,
    /// Ordered by `time_indices`.
    pub source_paths: Vec<PathBuf>,
    pub time_indices: Vec<i64>,
    pub format: DatasetFormat,
}

/// One line of the scan log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanNote {
    pub path: PathBuf,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientIndex {
    /// Sorted by `(patient_id, slice_id)`.
    pub entries: Vec<SeriesRecord>,
    /// Skipped files and warnings gathered while scanning.
    pub log: Vec<ScanNote>,
}

impl PatientIndex {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn patient_ids(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = self.entries.iter().map(|e| e.patient_id.as_str()).collect();
        ids.dedup();
        ids
    }

    pub fn find(&self, patient_id: &str, slice_id: &str) -> Option<&SeriesRecord> {
        self.entries.iter().find(|e| e.patient_id == patient_id && e.slice_id == slice_id)
    }

    /// Log rendered as `path<TAB>message` lines.
    pub fn log_text(&self) -> String {
        self.log.iter().map(|n| format!("{}\t{}\n", n.path.display(), n.message)).collect()
    }

    /// Append the log to `path` in a single write.
    pub fn append_log(&self, path: &Path) -> std::io::Result<()> {
        let mut f = OpenOptions::new().create(true).append(true).open(path)?;
        f.write_all(self.log_text().as_bytes())
    }
}

/// One slice position's cine sequence, intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CineClip {
    pub patient_id: String,
    pub slice_id: String,
    /// `[T, H, W]`, time-ordered.
    pub frames: Array3<f32>,
}

impl CineClip {
    pub fn len(&self) -> usize {
        self.frames.len_of(Axis(0))
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn frame_shape(&self) -> (usize, usize) {
        let (_, h, w) = self.frames.dim();
        (h, w)
    }

    pub fn frame(&self, t: usize) -> ArrayView2<'_, f32> {
        self.frames.index_axis(Axis(0), t)
    }
}

/// Min–max normalisation to `[0, 1]`. Samples above `bit_depth_max` are
/// clipped first; a constant frame maps to zeros.
pub fn normalize_frame(raw: ArrayView2<u16>, bit_depth_max: u32) -> Array2<f32> {
    let cap = bit_depth_max.min(u16::MAX as u32) as u16;
    let clipped = raw.mapv(|v| v.min(cap));
    let lo = clipped.iter().copied().min().unwrap_or(0);
    let hi = clipped.iter().copied().max().unwrap_or(0);
    if hi <= lo {
        return Array2::zeros(raw.dim());
    }
    let range = (hi - lo) as f64;
    clipped.mapv(|v| ((v - lo) as f64 / range) as f32)
}

fn strip_prefix_id<'a>(name: &'a str, prefix: &str) -> Option<&'a str> {
    name.strip_prefix(prefix).filter(|s| !s.is_empty())
}

fn scan_pgm_tree(root: &Path, index: &mut PatientIndex) -> Result<(), IngestError> {
    let mut series: BTreeMap<(String, String), Vec<(i64, PathBuf)>> = BTreeMap::new();
    for entry in WalkDir::new(root).min_depth(3).max_depth(3).sort_by_file_name() {
        let entry = match entry {
            Ok(e) => e,
            Err(e) => {
                index.log.push(ScanNote { path: e.path().unwrap_or(root).to_path_buf(), message: e.to_string() });
                continue;
            }
        };
        if !entry.file_type().is_file() {
            continue;
        }
        let path = entry.path();
        let rel: Vec<String> = path
            .strip_prefix(root)
            .expect("walkdir yields children of root")
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect();
        let (Some(patient), Some(slice), Some(k)) = (
            strip_prefix_id(&rel[0], "patient_"),
            strip_prefix_id(&rel[1], "slice_"),
            rel[2].strip_suffix(".pgm").and_then(|s| strip_prefix_id(s, "frame_")),
        ) else {
            index.log.push(ScanNote { path: path.to_path_buf(), message: "ignored: not patient_<id>/slice_<id>/frame_<k>.pgm".into() });
            continue;
        };
        let Ok(k) = k.parse::<i64>() else {
            index.log.push(ScanNote { path: path.to_path_buf(), message: "skipped: frame index is not an integer".into() });
            continue;
        };
        let header_ok = std::fs::read(path).map_err(|e| e.to_string()).and_then(|b| pgm::parse_header(&b).map(|_| ()));
        if let Err(reason) = header_ok {
            index.log.push(ScanNote { path: path.to_path_buf(), message: format!("skipped: {reason}") });
            continue;
        }
        series.entry((patient.to_string(), slice.to_string())).or_default().push((k, path.to_path_buf()));
    }
    push_series(series, DatasetFormat::PgmTree, index);
    Ok(())
}

fn scan_dicom(root: &Path, index: &mut PatientIndex) -> Result<(), IngestError> {
    let mut series: BTreeMap<(String, String), Vec<(i64, PathBuf)>> = BTreeMap::new();
    let mut untimed: BTreeMap<(String, String), Vec<(f64, PathBuf)>> = BTreeMap::new();
    for entry in WalkDir::new(root).min_depth(2).sort_by_file_name() {
        let Ok(entry) = entry else { continue };
        if !entry.file_type().is_file() {
            continue;
        }
        let path = entry.path();
        let rel: Vec<String> = path
            .strip_prefix(root)
            .expect("walkdir yields children of root")
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect();
        let header = match dicom::read_header(path) {
            Ok(h) => h,
            Err(reason) => {
                index.log.push(ScanNote { path: path.to_path_buf(), message: format!("skipped: {reason}") });
                continue;
            }
        };
        // Patient = first directory below root; slice = the file's parent directory.
        let patient = rel[0].clone();
        let slice = if rel.len() >= 3 { rel[rel.len() - 2].clone() } else { header.series_uid.clone().unwrap_or_else(|| "series".into()) };
        match (header.instance_number, header.trigger_time) {
            (Some(n), _) => series.entry((patient, slice)).or_default().push((n, path.to_path_buf())),
            (None, Some(t)) => untimed.entry((patient, slice)).or_default().push((t, path.to_path_buf())),
            (None, None) => index.log.push(ScanNote {
                path: path.to_path_buf(),
                message: "skipped: neither instance number nor trigger time present".into(),
            }),
        }
    }
    for (key, mut files) in untimed {
        if series.contains_key(&key) {
            for (_, p) in files {
                index.log.push(ScanNote { path: p, message: "skipped: series mixes instance-numbered and untimed files".into() });
            }
            continue;
        }
        files.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
        series.insert(key, files.into_iter().enumerate().map(|(i, (_, p))| (i as i64 + 1, p)).collect());
    }
    push_series(series, DatasetFormat::Dicom, index);
    Ok(())
}

fn push_series(series: BTreeMap<(String, String), Vec<(i64, PathBuf)>>, format: DatasetFormat, index: &mut PatientIndex) {
    for ((patient_id, slice_id), mut files) in series {
        files.sort();
        let mut time_indices = Vec::with_capacity(files.len());
        let mut source_paths = Vec::with_capacity(files.len());
        for (t, p) in files {
            if time_indices.last() == Some(&t) {
                index.log.push(ScanNote { path: p, message: format!("skipped: duplicate time index {t}") });
                continue;
            }
            time_indices.push(t);
            source_paths.push(p);
        }
        index.entries.push(SeriesRecord {
            patient_id,
            slice_id,
            frame_count: source_paths.len(),
            source_paths,
            time_indices,
            format,
        });
    }
}

/// Group the files below `root` into time-ordered series. Unreadable files
/// are skipped and noted in the index log.
pub fn scan_dataset(root: &Path, format: DatasetFormat) -> Result<PatientIndex, IngestError> {
    if !root.is_dir() {
        return Err(IngestError::RootNotFound(root.to_path_buf()));
    }
    let mut index = PatientIndex::default();
    match format {
        DatasetFormat::PgmTree => scan_pgm_tree(root, &mut index)?,
        DatasetFormat::Dicom => scan_dicom(root, &mut index)?,
    }
    if index.entries.is_empty() {
        index.log.push(ScanNote { path: root.to_path_buf(), message: "warning: no series found".into() });
    }
    Ok(index)
}

/// Decode, normalise per clip, and stretch every frame to `size × size`.
pub fn load_cine_clip_sized(
    index: &PatientIndex,
    patient_id: &str,
    slice_id: &str,
    size: usize,
) -> Result<CineClip, IngestError> {
    if size == 0 {
        return Err(IngestError::InvalidConfig("target frame size must be positive".into()));
    }
    let rec = index.find(patient_id, slice_id).ok_or_else(|| IngestError::SeriesNotFound {
        patient_id: patient_id.into(),
        slice_id: slice_id.into(),
    })?;
    for pair in rec.time_indices.windows(2) {
        if pair[1] != pair[0] + 1 {
            return Err(IngestError::MissingFrame {
                patient_id: patient_id.into(),
                slice_id: slice_id.into(),
                index: pair[0] + 1,
            });
        }
    }
    let mut raws = Vec::with_capacity(rec.frame_count);
    for path in &rec.source_paths {
        let decoded = match rec.format {
            DatasetFormat::PgmTree => pgm::read(path).map(|(a, _)| a),
            DatasetFormat::Dicom => dicom::read(path).map(|d| d.pixels),
        };
        let raw = decoded.map_err(|reason| IngestError::CorruptFrame { path: path.clone(), reason })?;
        if let Some(first) = raws.first() {
            let first: &Array2<u16> = first;
            if first.dim() != raw.dim() {
                return Err(IngestError::CorruptFrame {
                    path: path.clone(),
                    reason: format!("frame is {:?}, series started at {:?}", raw.dim(), first.dim()),
                });
            }
        }
        raws.push(raw);
    }
    if raws.is_empty() {
        return Err(IngestError::SeriesNotFound { patient_id: patient_id.into(), slice_id: slice_id.into() });
    }
    let views: Vec<_> = raws.iter().map(|r| r.view()).collect();
    let stack = ndarray::stack(Axis(0), &views).expect("frame shapes checked");
    let lo = stack.iter().copied().min().unwrap_or(0);
    let hi = stack.iter().copied().max().unwrap_or(0);
    let range = (hi.saturating_sub(lo)).max(1) as f64;
    let mut frames = Array3::zeros((raws.len(), size, size));
    for (t, raw) in raws.iter().enumerate() {
        let norm = if hi > lo { raw.mapv(|v| ((v - lo) as f64 / range) as f32) } else { Array2::zeros(raw.dim()) };
        let resized = resize_bicubic_to(norm.view(), size, size).expect("sizes are positive");
        frames.index_axis_mut(Axis(0), t).assign(&resized);
    }
    Ok(CineClip { patient_id: patient_id.into(), slice_id: slice_id.into(), frames })
}

/// [`load_cine_clip_sized`] at the standard 256 × 256.
pub fn load_cine_clip(index: &PatientIndex, patient_id: &str, slice_id: &str) -> Result<CineClip, IngestError> {
    load_cine_clip_sized(index, patient_id, slice_id, DEFAULT_FRAME_SIZE)
}

/// Write a clip as `root/patient_<p>/slice_<s>/frame_<k>.pgm`, `k` from 1.
pub fn write_clip_pgm(root: &Path, clip: &CineClip) -> std::io::Result<Vec<PathBuf>> {
    let dir = root.join(format!("patient_{}", clip.patient_id)).join(format!("slice_{}", clip.slice_id));
    let mut paths = Vec::with_capacity(clip.len());
    for t in 0..clip.len() {
        let p = dir.join(format!("frame_{:03}.pgm", t + 1));
        pgm::write_unit_f32(&p, clip.frame(t))?;
        paths.push(p);
    }
    Ok(paths)
}

/// Write a clip as `root/<p>/<s>/IM_<k>.dcm` (16-bit, instance numbers from 1).
pub fn write_clip_dicom(root: &Path, clip: &CineClip) -> std::io::Result<Vec<PathBuf>> {
    let dir = root.join(&clip.patient_id).join(&clip.slice_id);
    let (h, w) = clip.frame_shape();
    let mut paths = Vec::with_capacity(clip.len());
    for t in 0..clip.len() {
        let header = dicom::DicomHeader {
            patient_id: Some(clip.patient_id.clone()),
            series_uid: Some(clip.slice_id.clone()),
            instance_number: Some(t as i64 + 1),
            trigger_time: None,
            rows: h,
            columns: w,
            bits_allocated: 16,
            signed: false,
        };
        let q = clip.frame(t).mapv(|v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16);
        let p = dir.join(format!("IM_{:04}.dcm", t + 1));
        dicom::write(&p, &header, &q)?;
        paths.push(p);
    }
    Ok(paths)
}
