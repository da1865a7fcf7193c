//! Learned perceptual distance with a pluggable convolutional backbone.
//!
//! A backbone is a checkpoint of kind [`LPIPS_KIND`]. Its `layers` header is
//! the feature-layer manifest, a JSON array evaluated in order:
//!
//! ```json
//! [{"name": "conv1", "stride": 1, "tap": true}, {"name": "conv2", "stride": 2, "tap": true}]
//! ```
//!
//! Every layer is a 3×3 zero-padded convolution (`{name}.weight` as
//! `[Co, Ci, 3, 3]`, `{name}.bias` as `[Co]`) followed by ReLU. The first
//! layer takes 3 channels: the grayscale input in `[-1, 1]`, replicated.
//! Tapped layers also carry `{name}.lin`, non-negative per-channel weights.
//!
//! The distance sums, over tapped layers, the spatial mean of
//! `Σ_c lin_c (â_c − b̂_c)²`, where `â`, `b̂` are features normalised to unit
//! length along channels.

use std::path::Path;

use ndarray::{Array1, Array4, ArrayD, ArrayView2, Axis, Ix4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::nn::{Checkpoint, CheckpointError, Graph};

pub const LPIPS_KIND: &str = "lpips_backbone";
const EPS: f32 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpipsLayer {
    pub name: String,
    pub stride: usize,
    pub tap: bool,
}

#[derive(Debug, Clone)]
struct Layer {
    desc: LpipsLayer,
    weight: ArrayD<f32>,
    bias: ArrayD<f32>,
    lin: Option<Array1<f32>>,
}

/// A loaded backbone. Read-only once built.
#[derive(Debug, Clone)]
pub struct Lpips {
    layers: Vec<Layer>,
}

impl Lpips {
    pub fn load(path: &Path) -> Result<Self, MetricError> {
        if !path.is_file() {
            return Err(MetricError::BackboneUnavailable(format!("{} does not exist", path.display())));
        }
        let ck = Checkpoint::load_kind(path, LPIPS_KIND).map_err(|e| match e {
            CheckpointError::Io { .. } => MetricError::BackboneUnavailable(e.to_string()),
            other => MetricError::InvalidBackbone(other.to_string()),
        })?;
        Self::from_checkpoint(&ck)
    }

    /// Like [`Lpips::load`] but `None` when no path is given or the file is missing.
    pub fn load_optional(path: Option<&Path>) -> Result<Option<Self>, MetricError> {
        match path.map(Self::load) {
            None | Some(Err(MetricError::BackboneUnavailable(_))) => Ok(None),
            Some(r) => r.map(Some),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, MetricError> {
        let bad = |m: String| MetricError::InvalidBackbone(m);
        let manifest = ck.header_value("layers").ok_or_else(|| bad("missing `layers` manifest".into()))?;
        let descs: Vec<LpipsLayer> = serde_json::from_str(manifest).map_err(|e| bad(format!("manifest: {e}")))?;
        if descs.is_empty() || !descs.iter().any(|l| l.tap) {
            return Err(bad("manifest needs at least one tapped layer".into()));
        }
        let mut layers = Vec::with_capacity(descs.len());
        let mut cin = 3;
        for desc in descs {
            let get = |suffix: &str| {
                ck.tensors.get(&format!("{}.{suffix}", desc.name)).cloned().ok_or_else(|| bad(format!("missing tensor {}.{suffix}", desc.name)))
            };
            let weight = get("weight")?;
            let bias = get("bias")?;
            let shape = weight.shape().to_vec();
            if shape.len() != 4 || shape[1] != cin || shape[2] != 3 || shape[3] != 3 || bias.shape() != [shape[0]] {
                return Err(bad(format!("layer {} has weight {:?}, bias {:?}, input channels {cin}", desc.name, shape, bias.shape())));
            }
            if desc.stride == 0 {
                return Err(bad(format!("layer {} has stride 0", desc.name)));
            }
            let lin = if desc.tap {
                let l = get("lin")?;
                if l.shape() != [shape[0]] || l.iter().any(|&v| !(v >= 0.0)) {
                    return Err(bad(format!("layer {} needs {} non-negative lin weights", desc.name, shape[0])));
                }
                Some(l.into_dimensionality().expect("1-D"))
            } else {
                None
            };
            cin = shape[0];
            layers.push(Layer { desc, weight, bias, lin });
        }
        Ok(Self { layers })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let manifest: Vec<&LpipsLayer> = self.layers.iter().map(|l| &l.desc).collect();
        let mut ck = Checkpoint::new(LPIPS_KIND).with_header("layers", serde_json::to_string(&manifest).expect("serialisable"));
        for l in &self.layers {
            ck.tensors.insert(format!("{}.weight", l.desc.name), l.weight.clone());
            ck.tensors.insert(format!("{}.bias", l.desc.name), l.bias.clone());
            if let Some(lin) = &l.lin {
                ck.tensors.insert(format!("{}.lin", l.desc.name), lin.clone().into_dyn());
            }
        }
        ck
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        self.to_checkpoint().save(path)
    }

    /// A randomly initialised, untrained backbone with one stride-1 layer per
    /// entry of `channels`, all tapped with unit weights. Kernels are made
    /// mirror-symmetric so the distance is unchanged by flipping both inputs.
    /// It is a stand-in for real weights, useful for plumbing and tests.
    pub fn random(channels: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cin = 3;
        let layers = channels
            .iter()
            .enumerate()
            .map(|(i, &co)| {
                let bound = (6.0 / (cin * 9) as f32).sqrt();
                let raw = Array4::from_shape_fn((co, cin, 3, 3), |_| rng.random_range(-bound..bound));
                let weight = Array4::from_shape_fn((co, cin, 3, 3), |(o, c, y, x)| {
                    0.25 * (raw[[o, c, y, x]] + raw[[o, c, 2 - y, x]] + raw[[o, c, y, 2 - x]] + raw[[o, c, 2 - y, 2 - x]])
                });
                let bias = Array1::from_shape_fn(co, |_| rng.random_range(-0.1f32..0.1));
                cin = co;
                Layer {
                    desc: LpipsLayer { name: format!("conv{}", i + 1), stride: 1, tap: true },
                    weight: weight.into_dyn(),
                    bias: bias.into_dyn(),
                    lin: Some(Array1::ones(co)),
                }
            })
            .collect();
        Self { layers }
    }

    pub fn manifest(&self) -> Vec<LpipsLayer> {
        self.layers.iter().map(|l| l.desc.clone()).collect()
    }

    /// Normalised tapped features of one frame.
    fn features(&self, frame: ArrayView2<f32>) -> Vec<Array4<f32>> {
        let (h, w) = frame.dim();
        let x = Array4::from_shape_fn((1, 3, h, w), |(_, _, y, x)| frame[[y, x]] * 2.0 - 1.0);
        let g = Graph::inference();
        let mut v = g.constant(x.into_dyn());
        let mut taps = Vec::new();
        for l in &self.layers {
            let wv = g.constant(l.weight.clone());
            let bv = g.constant(l.bias.clone());
            let y = g.conv2d(v, wv, Some(bv), l.desc.stride, 1);
            let relu = g.value(y).mapv(|t| t.max(0.0));
            v = g.constant(relu);
            if l.desc.tap {
                let mut f = g.value(v).view().into_dimensionality::<Ix4>().expect("4-D").to_owned();
                let norm = f.map_axis(Axis(1), |c| c.iter().map(|t| t * t).sum::<f32>().sqrt() + EPS);
                let (_, c, fh, fw) = f.dim();
                for ci in 0..c {
                    for y in 0..fh {
                        for x in 0..fw {
                            f[[0, ci, y, x]] /= norm[[0, y, x]];
                        }
                    }
                }
                taps.push(f);
            }
        }
        taps
    }

    pub fn distance(&self, reference: ArrayView2<f32>, test: ArrayView2<f32>) -> Result<f64, MetricError> {
        if reference.dim() != test.dim() {
            return Err(MetricError::ShapeMismatch { reference: reference.dim(), test: test.dim() });
        }
        let fa = self.features(reference);
        let fb = self.features(test);
        let lins = self.layers.iter().filter_map(|l| l.lin.as_ref());
        let mut total = 0.0f64;
        for ((a, b), lin) in fa.iter().zip(&fb).zip(lins) {
            let (_, c, h, w) = a.dim();
            let mut s = 0.0f64;
            for ci in 0..c {
                let wc = lin[ci] as f64;
                for y in 0..h {
                    for x in 0..w {
                        let d = (a[[0, ci, y, x]] - b[[0, ci, y, x]]) as f64;
                        s += wc * d * d;
                    }
                }
            }
            total += s / (h * w) as f64;
        }
        Ok(total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{s, Array2};

    fn textured(h: usize, w: usize, phase: f32) -> Array2<f32> {
        Array2::from_shape_fn((h, w), |(y, x)| 0.5 + 0.4 * ((x as f32 * 0.7 + phase).sin() * (y as f32 * 0.45).cos()))
    }

    #[test]
    fn identity_symmetry_positivity() {
        let net = Lpips::random(&[8, 16, 16], 4);
        let a = textured(24, 24, 0.0);
        let b = textured(24, 24, 1.3);
        assert_eq!(net.distance(a.view(), a.view()).unwrap(), 0.0);
        let ab = net.distance(a.view(), b.view()).unwrap();
        let ba = net.distance(b.view(), a.view()).unwrap();
        assert!(ab > 0.0);
        assert!((ab - ba).abs() < 1e-6);
    }

    #[test]
    fn random_backbone_is_flip_invariant() {
        let net = Lpips::random(&[6, 8], 1);
        let a = textured(20, 22, 0.2);
        let b = textured(20, 22, 0.9);
        let d = net.distance(a.view(), b.view()).unwrap();
        let fa = a.slice(s![..;-1, ..;-1]).to_owned();
        let fb = b.slice(s![..;-1, ..;-1]).to_owned();
        assert!((d - net.distance(fa.view(), fb.view()).unwrap()).abs() < 1e-5 * d.max(1.0));
    }

    #[test]
    fn checkpoint_round_trip_and_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("lpips.safetensors");
        assert!(matches!(Lpips::load(&p), Err(MetricError::BackboneUnavailable(_))));
        assert!(Lpips::load_optional(Some(&p)).unwrap().is_none());
        let net = Lpips::random(&[4, 4], 2);
        net.save(&p).unwrap();
        let back = Lpips::load(&p).unwrap();
        assert_eq!(back.manifest(), net.manifest());
        let a = textured(16, 16, 0.0);
        let b = textured(16, 16, 0.5);
        assert_eq!(back.distance(a.view(), b.view()).unwrap(), net.distance(a.view(), b.view()).unwrap());
    }

    #[test]
    fn rejects_inconsistent_manifest() {
        let mut ck = Lpips::random(&[4, 4], 2).to_checkpoint();
        ck.tensors.remove("conv2.lin");
        assert!(matches!(Lpips::from_checkpoint(&ck), Err(MetricError::InvalidBackbone(_))));
    }
}
