use crate::data::{load_cine_clip_sized, scan_dataset, synth_phantom_clip, CineClip, PhantomConfig};

use super::{DataSource, ExperimentConfig, HarnessError};

/// Seed offset separating evaluation phantoms from training phantoms.
const EVAL_PHANTOM_OFFSET: u64 = 1_000_000;

/// Clips split by patient into training and held-out evaluation sets.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipSplit {
    pub train: Vec<CineClip>,
    pub eval: Vec<CineClip>,
}

fn phantom_clip(config: &ExperimentConfig, index: u64) -> Result<CineClip, HarnessError> {
    let set = &config.data.phantom;
    let pc = PhantomConfig { size: config.data.frame_size, texture_seed: set.phantom.texture_seed.wrapping_add(index), ..set.phantom.clone() };
    let seed = config.seed.wrapping_mul(10_000_019).wrapping_add(index);
    Ok(synth_phantom_clip(&pc, set.frames_per_clip, seed)?)
}

pub fn load_clips(config: &ExperimentConfig) -> Result<ClipSplit, HarnessError> {
    match config.data.source {
        DataSource::Phantom => {
            let set = &config.data.phantom;
            let train = (0..set.train_clips as u64).map(|i| phantom_clip(config, i)).collect::<Result<_, _>>()?;
            let eval = (0..set.eval_clips as u64).map(|i| phantom_clip(config, EVAL_PHANTOM_OFFSET + i)).collect::<Result<_, _>>()?;
            Ok(ClipSplit { train, eval })
        }
        source => {
            let root = config.data.root.as_ref().ok_or_else(|| HarnessError::Config("data.root is required".into()))?;
            let index = scan_dataset(root, source.format().expect("on-disk source"))?;
            let mut patients: Vec<String> = index.patient_ids().into_iter().map(str::to_string).collect();
            patients.sort();
            patients.dedup();
            if patients.is_empty() {
                return Err(HarnessError::DataUnavailable(format!("no series found under {}", root.display())));
            }
            let eval_ids: Vec<String> = if config.data.eval_patients.is_empty() {
                let n_eval = ((patients.len() as f64 * config.data.eval_fraction).ceil() as usize).clamp(1, patients.len());
                patients[patients.len() - n_eval..].to_vec()
            } else {
                config.data.eval_patients.clone()
            };
            let mut split = ClipSplit { train: Vec::new(), eval: Vec::new() };
            for rec in &index.entries {
                if rec.frame_count < config.window.k + 1 {
                    continue;
                }
                let clip = load_cine_clip_sized(&index, &rec.patient_id, &rec.slice_id, config.data.frame_size)?;
                if eval_ids.contains(&rec.patient_id) {
                    split.eval.push(clip);
                } else {
                    split.train.push(clip);
                }
            }
            if split.eval.is_empty() {
                return Err(HarnessError::DataUnavailable("no usable evaluation series".into()));
            }
            Ok(split)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::write_clip_pgm;

    #[test]
    fn phantom_split_is_disjoint_and_deterministic() {
        let mut cfg = ExperimentConfig::toy();
        cfg.data.phantom.train_clips = 3;
        cfg.data.phantom.eval_clips = 2;
        cfg.data.phantom.frames_per_clip = 12;
        let a = load_clips(&cfg).unwrap();
        let b = load_clips(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.train.len(), a.eval.len()), (3, 2));
        for e in &a.eval {
            assert!(a.train.iter().all(|t| t.patient_id != e.patient_id));
            assert_eq!(e.frame_shape(), (64, 64));
        }
    }

    #[test]
    fn disk_split_holds_out_the_last_patients() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::toy();
        cfg.data.phantom.frames_per_clip = 10;
        for i in 0..4 {
            let mut clip = phantom_clip(&cfg, i).unwrap();
            clip.patient_id = format!("p{i}");
            write_clip_pgm(dir.path(), &clip).unwrap();
        }
        cfg.data.source = DataSource::PgmTree;
        cfg.data.root = Some(dir.path().to_path_buf());
        cfg.data.eval_fraction = 0.25;
        let split = load_clips(&cfg).unwrap();
        assert_eq!(split.train.len(), 3);
        assert_eq!(split.eval.len(), 1);
        assert_eq!(split.eval[0].patient_id, "p3");
    }
}
