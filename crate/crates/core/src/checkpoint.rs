//! JSON checkpoints holding both models' configurations and named parameters.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::discriminator::{Discriminator, DiscriminatorConfig};
use crate::error::{Error, Result};
use crate::generator::{Generator, GeneratorConfig};
use crate::rng;
use crate::trainer::ModelBundle;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorState {
    pub config: GeneratorConfig,
    pub params: BTreeMap<String, Array2<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorState {
    pub config: DiscriminatorConfig,
    pub params: BTreeMap<String, Array2<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub epoch: Option<usize>,
    pub generator: GeneratorState,
    pub discriminator: DiscriminatorState,
}

impl Checkpoint {
    pub fn from_bundle(bundle: &ModelBundle, epoch: Option<usize>) -> Self {
        Checkpoint {
            epoch,
            generator: GeneratorState {
                config: bundle.generator.config,
                params: bundle.generator.params.to_named(),
            },
            discriminator: DiscriminatorState {
                config: bundle.discriminator.config,
                params: bundle.discriminator.params.to_named(),
            },
        }
    }

    pub fn to_bundle(&self) -> Result<ModelBundle> {
        // Initial values are overwritten by the stored parameters.
        let mut rng = rng::rng_for(0, &[]);
        let mut generator = Generator::new(self.generator.config, &mut rng)?;
        generator.params.load_named(&self.generator.params)?;
        let mut discriminator = Discriminator::new(self.discriminator.config, &mut rng)?;
        discriminator.params.load_named(&self.discriminator.params)?;
        Ok(ModelBundle { generator, discriminator })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let bundle = ModelBundle::new(GeneratorConfig::new(6), DiscriminatorConfig::new(6), 4).unwrap();
        let ckpt = Checkpoint::from_bundle(&bundle, Some(3));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("best.json");
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap().to_bundle().unwrap();
        assert_eq!(back.generator.params, bundle.generator.params);
        assert_eq!(back.discriminator.params, bundle.discriminator.params);
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let bundle = ModelBundle::new(GeneratorConfig::new(6), DiscriminatorConfig::new(6), 4).unwrap();
        let mut ckpt = Checkpoint::from_bundle(&bundle, None);
        ckpt.generator.config.feature_dim = 7;
        assert!(ckpt.to_bundle().is_err());
    }
}
