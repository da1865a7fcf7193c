//! Synthesise beating phantoms, write them as a PGM tree and as DICOM, then
//! scan and load them back.
//!
//! cargo run --example ingest_phantom -- [out_dir]

use cinesr::data::{load_cine_clip_sized, scan_dataset, synth_phantom_clip, write_clip_dicom, write_clip_pgm, DatasetFormat, PhantomConfig};

fn main() -> anyhow::Result<()> {
    let out = std::env::args().nth(1).map(std::path::PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("cinesr-ingest"));
    let _ = std::fs::remove_dir_all(&out);
    let pc = PhantomConfig { size: 64, ..PhantomConfig::default() };
    for i in 0..3 {
        let clip = synth_phantom_clip(&pc, 30, i)?;
        write_clip_pgm(&out.join("pgm"), &clip)?;
        write_clip_dicom(&out.join("dicom"), &clip)?;
    }
    for (sub, format) in [("pgm", DatasetFormat::PgmTree), ("dicom", DatasetFormat::Dicom)] {
        let index = scan_dataset(&out.join(sub), format)?;
        println!("{sub}: {} series from {} patients", index.len(), index.patient_ids().len());
        let first = &index.entries[0];
        let clip = load_cine_clip_sized(&index, &first.patient_id, &first.slice_id, 128)?;
        let (lo, hi) = clip.frames.iter().fold((f32::MAX, f32::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        println!("  {}/{}: frames {:?}, range [{lo:.3}, {hi:.3}]", clip.patient_id, clip.slice_id, clip.frames.dim());
    }
    Ok(())
}
