use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PipelineError;
use crate::generator::{GeneratorConfig, InversionConfig};
use crate::manipulate::TrajectoryConfig;
use crate::mapping::{MappingConfig, SpecificConfig};
use crate::partvae::PartVaeConfig;
use crate::shapegen::{Category, RenderSettings};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Template grid resolution; `V = 6n² + 2`.
    pub template_n: usize,
    pub base_shapes: usize,
    pub interchanged: usize,
    pub render: RenderSettings,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            template_n: 4,
            base_shapes: 6,
            interchanged: 3,
            render: RenderSettings::default(),
        }
    }
}

/// Extra parts drawn from widened slot ranges to cover the part-code space
/// beyond the few distinct dataset parts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub parts: usize,
    pub validation: usize,
    pub widen: f64,
    /// Upper scale bounds are stretched by this factor so resized parts stay
    /// in range.
    pub scale_headroom: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            parts: 120,
            validation: 24,
            widen: 1.4,
            scale_headroom: 1.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairConfig {
    /// Inversion steps used for every dataset image latent.
    pub inversion_steps: usize,
}

impl Default for PairConfig {
    fn default() -> Self {
        Self { inversion_steps: 30 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TextureConfig {
    pub lambda_tps: f64,
    pub samples: usize,
}

impl Default for TextureConfig {
    fn default() -> Self {
        Self {
            lambda_tps: 0.0,
            samples: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub data: PathBuf,
    pub models: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            data: PathBuf::from("run/data"),
            models: PathBuf::from("run/models"),
        }
    }
}

/// Everything a run depends on. Defaults are the desk-scale chair setup.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub category: Category,
    pub seed: u64,
    pub data: DataConfig,
    pub partvae: PartVaeConfig,
    pub augment: AugmentConfig,
    pub generator: GeneratorConfig,
    pub inversion: InversionConfig,
    pub pairs: PairConfig,
    pub mapping: MappingConfig,
    pub specific: SpecificConfig,
    pub trajectory: TrajectoryConfig,
    pub texture: TextureConfig,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            category: Category::Chair,
            seed: 7,
            data: DataConfig::default(),
            partvae: PartVaeConfig::default(),
            augment: AugmentConfig::default(),
            generator: GeneratorConfig::default(),
            inversion: InversionConfig::default(),
            pairs: PairConfig::default(),
            mapping: MappingConfig::default(),
            specific: SpecificConfig::default(),
            trajectory: TrajectoryConfig::default(),
            texture: TextureConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

fn invalid(msg: impl Into<String>) -> PipelineError {
    PipelineError::Config(msg.into())
}

impl RunConfig {
    /// A few-second pipeline over a coarse template and 16×16 renders, for
    /// tests and smoke runs. Results are meaningless.
    pub fn smoke() -> Self {
        let mut c = Self::default();
        c.data.template_n = 2;
        c.data.base_shapes = 2;
        c.data.render.size = 16;
        c.partvae = PartVaeConfig {
            z: 4,
            hidden: vec![32],
            epochs: 4,
            batch: 16,
            ..PartVaeConfig::default()
        };
        c.augment.parts = 6;
        c.augment.validation = 3;
        c.generator = GeneratorConfig {
            latent_dim: 8,
            hidden: vec![32],
            epochs: 3,
            batch: 16,
            ..GeneratorConfig::default()
        };
        c.inversion.steps = 10;
        c.pairs.inversion_steps = 4;
        c.mapping.width = 32;
        c.mapping.depth = 3;
        c.mapping.batch = 16;
        for e in [
            &mut c.mapping.stage1_epochs,
            &mut c.mapping.stage2_epochs,
            &mut c.mapping.backward_epochs,
            &mut c.mapping.joint_epochs,
            &mut c.mapping.view_epochs,
        ] {
            *e = 2;
        }
        c.specific.steps = 4;
        c.trajectory.hidden = 16;
        c.trajectory.epochs = 3;
        c.trajectory.batch = 16;
        c.texture.samples = 16;
        c
    }

    /// Parses TOML; relative paths resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        let mut config: Self = toml::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut config.paths.data, &mut config.paths.models] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn n_c(&self) -> usize {
        self.category.part_count()
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let d = &self.data;
        if d.template_n == 0 {
            return Err(invalid("data.template_n must be at least 1"));
        }
        if d.base_shapes < 2 {
            return Err(invalid("data.base_shapes must be at least 2"));
        }
        if d.interchanged > self.n_c() {
            return Err(invalid(format!("data.interchanged exceeds the {} parts of a {}", self.n_c(), self.category.name())));
        }
        let size = d.render.size;
        if size < 8 || size % 4 != 0 {
            return Err(invalid("data.render.size must be a multiple of 4 and at least 8"));
        }
        if self.partvae.z == 0 || self.generator.latent_dim == 0 {
            return Err(invalid("latent dimensions must be positive"));
        }
        if self.mapping.depth < 2 || self.mapping.width == 0 {
            return Err(invalid("mapping networks need depth ≥ 2 and positive width"));
        }
        let lambdas = [
            ("generator.lambda_w", self.generator.lambda_w),
            ("inversion.lambda_w", self.inversion.lambda_w),
            ("mapping.lambda_w", self.mapping.lambda_w),
            ("mapping.lambda_p", self.mapping.lambda_p),
            ("specific.lambda_forward", self.specific.lambda_forward),
            ("specific.lambda_backward", self.specific.lambda_backward),
            ("texture.lambda_tps", self.texture.lambda_tps),
            ("partvae.beta", self.partvae.beta),
        ];
        if let Some((name, _)) = lambdas.iter().find(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
            return Err(invalid(format!("{name} must be finite and non-negative")));
        }
        for op in &self.trajectory.resizes {
            if self.category.part_index(&op.part).is_none() {
                return Err(invalid(format!("resize part `{}` is not a {} part", op.part, self.category.name())));
            }
            if op.factors.iter().any(|&f| !(f > 0.0)) {
                return Err(invalid(format!("resize factors for `{}` must be positive", op.part)));
            }
        }
        if self.trajectory.weights.is_empty() {
            return Err(invalid("trajectory.weights is empty"));
        }
        if self.texture.samples == 0 {
            return Err(invalid("texture.samples must be positive"));
        }
        Ok(())
    }

    /// Digest of everything except paths; embedded in every checkpoint.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.paths = PathsConfig::default();
        let json = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }
}
