//! Run configuration: one TOML file, overridable from flags, written back
//! out as a resolved snapshot next to the outputs.

use std::path::{Path, PathBuf};

use advmil::discriminator::{DiscriminatorConfig, ProjectionKind, DEFAULT_EMBED_DIM, DEFAULT_PATCH_HIDDEN};
use advmil::generator::{EncoderConfig, GeneratorConfig, NoiseSpec, DEFAULT_HEAD_HIDDEN};
use advmil::losses::LossWeights;
use advmil::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

pub const OUTPUT_ROOT_ENV: &str = "ADVMIL_OUTPUT_ROOT";
pub const RESOLVED_CONFIG: &str = "resolved_config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub manifest: PathBuf,
    /// Directory that relative bag paths resolve against; defaults to the
    /// manifest's directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bag_dir: Option<PathBuf>,
    pub output: PathBuf,
    /// Truth sidecar of a synthetic cohort, for the coverage check.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSection {
    pub encoder: EncoderConfig,
    pub noise: NoiseSpec,
    pub head_hidden: usize,
}

impl Default for GeneratorSection {
    fn default() -> Self {
        GeneratorSection {
            encoder: EncoderConfig::default(),
            noise: NoiseSpec::default(),
            head_hidden: DEFAULT_HEAD_HIDDEN,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorSection {
    pub patch_hidden: usize,
    pub embed_dim: usize,
    pub attention_hidden: usize,
    pub projection: ProjectionKind,
}

impl Default for DiscriminatorSection {
    fn default() -> Self {
        DiscriminatorSection {
            patch_hidden: DEFAULT_PATCH_HIDDEN,
            embed_dim: DEFAULT_EMBED_DIM,
            attention_hidden: DEFAULT_EMBED_DIM,
            projection: ProjectionKind::Rlip,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub n_draws: usize,
    pub mask_ratios: Vec<f64>,
    pub coverage_probs: [f64; 2],
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            n_draws: 30,
            mask_ratios: vec![0.0, 0.25, 0.5, 0.75, 0.9, 0.99],
            coverage_probs: [0.1, 0.9],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub fold: usize,
    pub paths: Paths,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub generator: GeneratorSection,
    #[serde(default)]
    pub discriminator: DiscriminatorSection,
    #[serde(default)]
    pub loss: LossWeights,
    #[serde(default)]
    pub eval: EvalSection,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut cfg = Self::parse(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        if let Some(dir) = path.parent() {
            cfg.paths.rebase(dir);
        }
        Ok(cfg)
    }

    /// Applies cross-field rules; the top-level seed drives every stochastic part.
    pub fn resolve(&mut self, output_root: Option<&Path>) -> Result<(), String> {
        self.train.seed = self.seed;
        if let Some(root) = output_root {
            if self.paths.output.is_relative() {
                self.paths.output = root.join(&self.paths.output);
            }
        }
        self.paths.absolutize().map_err(|e| e.to_string())?;
        self.train.validate().map_err(|e| e.to_string())?;
        self.loss.validate().map_err(|e| e.to_string())?;
        self.generator_config(1).validate().map_err(|e| e.to_string())?;
        self.discriminator_config(1).validate().map_err(|e| e.to_string())?;
        if self.eval.n_draws == 0 {
            return Err("eval.n_draws must be positive".into());
        }
        if self.fold >= advmil::data::N_FOLDS {
            return Err(format!("fold must be below {}", advmil::data::N_FOLDS));
        }
        Ok(())
    }

    pub fn generator_config(&self, feature_dim: usize) -> GeneratorConfig {
        GeneratorConfig {
            feature_dim,
            encoder: self.generator.encoder,
            noise: self.generator.noise,
            head_hidden: self.generator.head_hidden,
        }
    }

    pub fn discriminator_config(&self, feature_dim: usize) -> DiscriminatorConfig {
        DiscriminatorConfig {
            feature_dim,
            patch_hidden: self.discriminator.patch_hidden,
            embed_dim: self.discriminator.embed_dim,
            attention_hidden: self.discriminator.attention_hidden,
            projection: self.discriminator.projection,
        }
    }

    pub fn write_snapshot(&self, dir: &Path) -> std::io::Result<()> {
        let text = toml::to_string_pretty(self).map_err(std::io::Error::other)?;
        std::fs::write(dir.join(RESOLVED_CONFIG), text)
    }
}

impl Paths {
    /// Anchors relative paths at the working directory so a snapshot
    /// reloads the same files from anywhere.
    fn absolutize(&mut self) -> std::io::Result<()> {
        self.manifest = std::path::absolute(&self.manifest)?;
        self.output = std::path::absolute(&self.output)?;
        if let Some(b) = self.bag_dir.as_mut() {
            *b = std::path::absolute(&*b)?;
        }
        if let Some(t) = self.truth.as_mut() {
            *t = std::path::absolute(&*t)?;
        }
        Ok(())
    }

    fn rebase(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        fix(&mut self.manifest);
        if let Some(b) = self.bag_dir.as_mut() {
            fix(b);
        }
        if let Some(t) = self.truth.as_mut() {
            fix(t);
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            fold: 0,
            paths: Paths {
                manifest: PathBuf::from("manifest.csv"),
                bag_dir: None,
                output: PathBuf::from("runs/default"),
                truth: None,
            },
            train: TrainConfig::default(),
            generator: GeneratorSection::default(),
            discriminator: DiscriminatorSection::default(),
            loss: LossWeights::default(),
            eval: EvalSection::default(),
        }
    }
}
