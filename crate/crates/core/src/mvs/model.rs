//! Model configuration, parameters and on-disk manifests.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mvs::bnstats::{BnTarget, StatsBackend};
use crate::mvs::scene::{synthetic_scene, SceneParams};
use crate::mvs::{arch, forward_frame, KeyframePolicy, PipelineState};
use crate::nn::ConvSpec;
use crate::numerics::{fold_batchnorm, io, BatchNorm, FTensor, Tensor, DEFAULT_BN_EPS};
use crate::rng::SeedTree;

/// Channel widths of every stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Widths {
    pub stem: usize,
    /// Output widths of the six inverted-residual stacks.
    pub fe_stacks: [usize; 6],
    pub expansion: usize,
    pub max_width: usize,
    pub fs: usize,
    /// Aggregation conv widths at 1/2 … 1/16.
    pub cve_agg: [usize; 4],
    /// Encoder block widths at 1/4 … 1/32.
    pub cve_block: [usize; 4],
    pub cl_hidden: usize,
    /// Decoder widths at 1/16, 1/8, 1/4, 1/2 and the full-resolution refine.
    pub cvd: [usize; 5],
}

impl Default for Widths {
    fn default() -> Self {
        Self {
            stem: 8,
            fe_stacks: [12, 16, 20, 24, 28, 32],
            expansion: 2,
            max_width: 32,
            fs: 16,
            cve_agg: [8, 16, 24, 32],
            cve_block: [16, 24, 32, 32],
            cl_hidden: 32,
            cvd: [32, 24, 16, 16, 16],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub height: usize,
    pub width: usize,
    pub hypotheses: usize,
    /// 1 or 2 keyframes fused per frame.
    pub measurement_frames: usize,
    pub min_depth: f64,
    pub max_depth: f64,
    pub keyframes: KeyframePolicy,
    pub widths: Widths,
}

impl ModelConfig {
    /// 96×64 input, 64 hypotheses, two measurement frames.
    pub fn reference() -> Self {
        Self {
            height: 64,
            width: 96,
            hypotheses: 64,
            measurement_frames: 2,
            min_depth: 0.25,
            max_depth: 20.0,
            keyframes: KeyframePolicy::default(),
            widths: Widths::default(),
        }
    }

    /// Small input and 8 hypotheses, for tests.
    pub fn fast() -> Self {
        Self {
            height: 32,
            width: 64,
            hypotheses: 8,
            ..Self::reference()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || !self.height.is_multiple_of(32) || !self.width.is_multiple_of(32) {
            return Err(Error::config(format!(
                "input {}×{} must be a positive multiple of 32 on both axes",
                self.width, self.height
            )));
        }
        if self.hypotheses == 0 {
            return Err(Error::config("hypothesis count must be positive"));
        }
        if !(1..=2).contains(&self.measurement_frames) {
            return Err(Error::config("measurement_frames must be 1 or 2"));
        }
        if !(self.min_depth > 0.0 && self.max_depth > self.min_depth) {
            return Err(Error::config("depth range must satisfy 0 < min < max"));
        }
        let w = &self.widths;
        let all = [w.stem, w.expansion, w.max_width, w.fs, w.cl_hidden]
            .into_iter()
            .chain(w.fe_stacks)
            .chain(w.cve_agg)
            .chain(w.cve_block)
            .chain(w.cvd);
        if all.into_iter().any(|v| v == 0) {
            return Err(Error::config("every width must be positive"));
        }
        Ok(())
    }

    /// Shape of the stored keyframe feature (FS output at half resolution).
    pub fn feature_shape(&self) -> Vec<usize> {
        vec![self.widths.fs, self.height / 2, self.width / 2]
    }

    pub fn hidden_shape(&self) -> Vec<usize> {
        vec![self.widths.cl_hidden, self.height / 32, self.width / 32]
    }
}

/// Conv with BN folded in: `y = (W ⊛ x + b) · s`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub spec: ConvSpec,
    pub w: FTensor,
    pub b: FTensor,
    pub s: FTensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormLayer {
    pub gamma: FTensor,
    pub beta: FTensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub convs: BTreeMap<String, ConvLayer>,
    pub norms: BTreeMap<String, NormLayer>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum LayerEntry {
    Conv {
        name: String,
        spec: ConvSpec,
        w: String,
        b: String,
        s: String,
    },
    Norm {
        name: String,
        gamma: String,
        beta: String,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    config: ModelConfig,
    layers: Vec<LayerEntry>,
}

pub const MODEL_MANIFEST: &str = "model.json";

/// Frames used to measure batch-norm statistics during synthesis.
const BN_FRAMES: usize = 2;

fn normal(rng: &mut impl Rng, std: f64) -> f32 {
    Normal::new(0.0, std).expect("positive std").sample(rng) as f32
}

fn random_tensor(rng: &mut impl Rng, shape: &[usize], std: f64) -> FTensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| normal(rng, std)).collect()).expect("finite samples")
}

impl Model {
    /// Random model with BN folded into every conv and per-channel output
    /// scales drawn from [0.5, 1].
    ///
    /// The folded BN statistics are measured on a short synthetic scene
    /// rendered from the same seed, so each conv's pre-scale output has
    /// roughly unit-scale channels, as in a trained network.
    pub fn synthesize(config: &ModelConfig, seed: &SeedTree) -> Result<Self> {
        config.validate()?;
        let layout = arch::layout(config)?;
        let mut convs = BTreeMap::new();
        let mut targets = BTreeMap::new();
        for (name, spec) in layout.convs {
            let mut rng = seed.child("conv").child(&name).rng();
            let fan_in = (spec.in_ch * spec.kernel * spec.kernel) as f64;
            let w = random_tensor(&mut rng, &spec.weight_shape(), (2.0 / fan_in).sqrt());
            let b = random_tensor(&mut rng, &[spec.out_ch], 0.05);
            let c = spec.out_ch;
            let mut draw = |f: &mut dyn FnMut(&mut rand_chacha::ChaCha8Rng) -> f32| {
                Tensor::new(vec![c], (0..c).map(|_| f(&mut rng)).collect())
            };
            let target = BnTarget {
                gamma: draw(&mut |r| r.random_range(0.8..1.2))?,
                beta: draw(&mut |r| normal(r, 0.05))?,
            };
            let s = Tensor::new(vec![c], (0..c).map(|_| rng.random_range(0.5f32..=1.0)).collect())?;
            convs.insert(name.clone(), ConvLayer { spec, w, b, s });
            targets.insert(name, target);
        }
        let mut norms = BTreeMap::new();
        for (name, channels) in layout.norms {
            let mut rng = seed.child("norm").child(&name).rng();
            let gamma = Tensor::new(
                vec![channels],
                (0..channels).map(|_| rng.random_range(0.8f32..1.2)).collect(),
            )?;
            let beta = random_tensor(&mut rng, &[channels], 0.05);
            norms.insert(name, NormLayer { gamma, beta });
        }

        let scene = synthetic_scene(
            &SceneParams {
                height: config.height,
                width: config.width,
                frames: BN_FRAMES,
            },
            &seed.child("bn-data"),
        )?;
        let mut backend = StatsBackend {
            convs,
            norms,
            targets,
            fitted: BTreeSet::new(),
        };
        let mut state = PipelineState::new(config)?;
        for f in &scene.frames {
            let (_, next, b) = forward_frame(backend, config, f, &state)?;
            backend = b;
            state = next;
        }
        let StatsBackend {
            mut convs,
            norms,
            targets,
            fitted,
        } = backend;
        // convs the data never reached keep unit statistics
        for (name, t) in &targets {
            if !fitted.contains(name) {
                let l = convs.get_mut(name).expect("target per conv");
                let c = l.spec.out_ch;
                let bn = BatchNorm {
                    gamma: t.gamma.clone(),
                    beta: t.beta.clone(),
                    mean: FTensor::zeros(&[c]),
                    var: FTensor::full(&[c], 1.0),
                    eps: DEFAULT_BN_EPS,
                };
                (l.w, l.b) = fold_batchnorm(&l.w, &l.b, &bn)?;
            }
        }
        Ok(Self {
            config: config.clone(),
            convs,
            norms,
        })
    }

    pub fn conv(&self, name: &str) -> Result<&ConvLayer> {
        self.convs
            .get(name)
            .ok_or_else(|| Error::config(format!("model has no conv layer {name}")))
    }

    pub fn norm(&self, name: &str) -> Result<&NormLayer> {
        self.norms
            .get(name)
            .ok_or_else(|| Error::config(format!("model has no norm layer {name}")))
    }

    pub fn parameter_count(&self) -> usize {
        let c: usize = self.convs.values().map(|l| l.w.len() + l.b.len() + l.s.len()).sum();
        let n: usize = self.norms.values().map(|l| l.gamma.len() + l.beta.len()).sum();
        c + n
    }

    /// Writes `model.json` plus one FTZ file per parameter tensor.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut layers = Vec::new();
        for (name, l) in &self.convs {
            let file = |p: &str| format!("{name}.{p}.ftz");
            io::write_ftz(&dir.join(file("w")), &l.w)?;
            io::write_ftz(&dir.join(file("b")), &l.b)?;
            io::write_ftz(&dir.join(file("s")), &l.s)?;
            layers.push(LayerEntry::Conv {
                name: name.clone(),
                spec: l.spec,
                w: file("w"),
                b: file("b"),
                s: file("s"),
            });
        }
        for (name, l) in &self.norms {
            let file = |p: &str| format!("{name}.{p}.ftz");
            io::write_ftz(&dir.join(file("gamma")), &l.gamma)?;
            io::write_ftz(&dir.join(file("beta")), &l.beta)?;
            layers.push(LayerEntry::Norm {
                name: name.clone(),
                gamma: file("gamma"),
                beta: file("beta"),
            });
        }
        let manifest = Manifest {
            config: self.config.clone(),
            layers,
        };
        let path = dir.join(MODEL_MANIFEST);
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MODEL_MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::parse(&path, e.to_string()))?;
        manifest.config.validate()?;
        let mut convs = BTreeMap::new();
        let mut norms = BTreeMap::new();
        for entry in manifest.layers {
            match entry {
                LayerEntry::Conv { name, spec, w, b, s } => {
                    let spec = spec.validated()?;
                    let layer = ConvLayer {
                        spec,
                        w: io::read_ftz(&dir.join(w))?,
                        b: io::read_ftz(&dir.join(b))?,
                        s: io::read_ftz(&dir.join(s))?,
                    };
                    if layer.w.shape() != spec.weight_shape() || layer.b.len() != spec.out_ch {
                        return Err(Error::parse(
                            &path,
                            format!("layer {name} tensors do not match its spec"),
                        ));
                    }
                    convs.insert(name, layer);
                }
                LayerEntry::Norm { name, gamma, beta } => {
                    let layer = NormLayer {
                        gamma: io::read_ftz(&dir.join(gamma))?,
                        beta: io::read_ftz(&dir.join(beta))?,
                    };
                    norms.insert(name, layer);
                }
            }
        }
        Ok(Self {
            config: manifest.config,
            convs,
            norms,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthesis_is_seeded() {
        let cfg = ModelConfig::fast();
        let a = Model::synthesize(&cfg, &SeedTree::new(1)).unwrap();
        let b = Model::synthesize(&cfg, &SeedTree::new(1)).unwrap();
        let c = Model::synthesize(&cfg, &SeedTree::new(2)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.parameter_count() > 10_000);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = Model::synthesize(&ModelConfig::fast(), &SeedTree::new(5)).unwrap();
        m.save(dir.path()).unwrap();
        assert_eq!(Model::load(dir.path()).unwrap(), m);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = ModelConfig::fast();
        c.height = 48;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::fast();
        c.measurement_frames = 3;
        assert!(c.validate().is_err());
    }
}
