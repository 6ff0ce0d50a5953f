//! Run configuration, on-disk artifacts and the ordered training stages.

mod config;
pub mod data;
mod eval;
mod stages;

pub use config::{AugmentConfig, DataConfig, PairConfig, PathsConfig, RunConfig, TextureConfig};
pub use eval::{
    ablate_finetune, ablate_size, ablate_trajectory, eval_recon, replacement_oracle, view_oracle, FinetuneAblation,
    ReconMetrics, ReplacementOracle, SizeAblation, TrajectoryAblation, ViewOracle,
};
pub use stages::{
    run_all, run_backward, run_data, run_finetune, run_forward, run_generator, run_partvae, run_trajectory, run_viewpred,
    BackwardReport, FinetuneReport, ForwardReport, ViewReport,
};

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::generator::{invert, GeneratorModel, InversionConfig};
use crate::imaging::GrayImage;
use crate::imaging::ImageError;
use crate::manipulate::TrajectoryFinetuner;
use crate::mapping::{MappingModel, ViewPredictor, VIEW_COUNT};
use crate::numcore::{Checkpoint, NumError, Tensor};
use crate::partvae::PartVae;
use crate::seed;
use crate::shapegen::{DatasetManifest, GeomError, Template, MANIFEST_FILE};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("stage `{stage}` needs stage `{missing}` to have run first")]
    MissingStage { stage: Stage, missing: Stage },
    #[error("{path}: trained with config {found}, current config is {expected}")]
    ConfigMismatch { path: String, expected: String, found: String },
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("{0}: {1}")]
    Io(String, std::io::Error),
    #[error("{0}: {1}")]
    Json(String, serde_json::Error),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

/// Training stages in their required order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Data,
    PartVae,
    Generator,
    Forward,
    Backward,
    Finetune,
    ViewPred,
    Trajectory,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Data,
        Stage::PartVae,
        Stage::Generator,
        Stage::Forward,
        Stage::Backward,
        Stage::Finetune,
        Stage::ViewPred,
        Stage::Trajectory,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Data => "data",
            Stage::PartVae => "partvae",
            Stage::Generator => "generator",
            Stage::Forward => "forward",
            Stage::Backward => "backward",
            Stage::Finetune => "finetune",
            Stage::ViewPred => "viewpred",
            Stage::Trajectory => "trajectory",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.name() == name)
    }

    /// Per-stage seed derived from the run seed.
    pub fn seed(self, run_seed: u64) -> u64 {
        seed::derive(run_seed, &[seed::tag(self.name())])
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

const HASH_KEY: &str = "config_hash";
const LATENTS: &str = "latents";

/// A configured run: where its artifacts live and which exist.
#[derive(Clone, Debug)]
pub struct Workspace {
    pub config: RunConfig,
    hash: String,
}

impl Workspace {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let hash = config.hash();
        Ok(Self { config, hash })
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    pub fn data_dir(&self) -> &Path {
        &self.config.paths.data
    }

    pub fn model_dir(&self) -> &Path {
        &self.config.paths.models
    }

    fn report_path(&self, stage: Stage) -> PathBuf {
        self.model_dir().join(format!("report.{}.json", stage.name()))
    }

    /// A stage is complete once its report (written last) exists.
    pub fn is_complete(&self, stage: Stage) -> bool {
        match stage {
            Stage::Data => self.data_dir().join(MANIFEST_FILE).exists(),
            s => self.report_path(s).exists(),
        }
    }

    /// Errors naming the first earlier stage without artifacts.
    pub fn require(&self, stage: Stage) -> Result<()> {
        match Stage::ALL.into_iter().take_while(|&s| s < stage).find(|&s| !self.is_complete(s)) {
            Some(missing) => Err(PipelineError::MissingStage { stage, missing }),
            None => Ok(()),
        }
    }

    pub fn checkpoint_path(&self, name: &str) -> PathBuf {
        self.model_dir().join(format!("{name}.ckpt"))
    }

    pub fn save_checkpoint(&self, name: &str, mut ck: Checkpoint) -> Result<()> {
        ck.set_meta(HASH_KEY, &self.hash);
        let path = self.checkpoint_path(name);
        std::fs::create_dir_all(self.model_dir()).map_err(|e| PipelineError::Io(self.model_dir().display().to_string(), e))?;
        ck.save(&path)?;
        Ok(())
    }

    /// Loads a checkpoint, refusing one trained under a different config.
    pub fn load_checkpoint(&self, name: &str) -> Result<Checkpoint> {
        let path = self.checkpoint_path(name);
        let ck = Checkpoint::load(&path)?;
        let found: String = ck.meta_as(HASH_KEY).unwrap_or_else(|_| "none".into());
        if found != self.hash {
            return Err(PipelineError::ConfigMismatch {
                path: path.display().to_string(),
                expected: self.hash.clone(),
                found,
            });
        }
        Ok(ck)
    }

    pub fn save_report<T: Serialize>(&self, stage: Stage, report: &T) -> Result<()> {
        let path = self.report_path(stage);
        let json = serde_json::to_string_pretty(report).map_err(|e| PipelineError::Json(path.display().to_string(), e))?;
        std::fs::write(&path, json).map_err(|e| PipelineError::Io(path.display().to_string(), e))
    }

    pub fn load_report<T: DeserializeOwned>(&self, stage: Stage) -> Result<T> {
        let path = self.report_path(stage);
        let text = std::fs::read_to_string(&path).map_err(|e| PipelineError::Io(path.display().to_string(), e))?;
        serde_json::from_str(&text).map_err(|e| PipelineError::Json(path.display().to_string(), e))
    }

    /// The dataset manifest, checked against the config.
    pub fn manifest(&self) -> Result<DatasetManifest> {
        self.require(Stage::PartVae)?;
        let m = DatasetManifest::load(self.data_dir())?;
        let c = &self.config;
        if m.category != c.category
            || m.grid != c.data.template_n
            || m.base_shapes != c.data.base_shapes
            || m.interchanged != c.data.interchanged
            || m.seed != c.seed
            || m.render != c.data.render
        {
            return Err(PipelineError::ConfigMismatch {
                path: self.data_dir().join(MANIFEST_FILE).display().to_string(),
                expected: self.hash.clone(),
                found: "a different dataset".into(),
            });
        }
        Ok(m)
    }

    pub fn template(&self) -> Result<Arc<Template>> {
        Ok(Template::get(self.config.data.template_n)?)
    }

    pub fn load_vaes(&self) -> Result<Vec<PartVae>> {
        self.require(Stage::Generator)?;
        self.config
            .category
            .part_names()
            .iter()
            .map(|p| Ok(PartVae::from_checkpoint(&self.load_checkpoint(&format!("partvae.{p}"))?)?))
            .collect()
    }

    pub fn load_generator(&self) -> Result<GeneratorModel> {
        self.require(Stage::Forward)?;
        Ok(GeneratorModel::from_checkpoint(&self.load_checkpoint("generator")?)?)
    }

    /// Inverted latents of every dataset image, in `DatasetImages` order.
    pub fn load_latents(&self) -> Result<Tensor<f32>> {
        self.require(Stage::Forward)?;
        Ok(self.load_checkpoint(LATENTS)?.get(LATENTS)?)
    }

    /// `M_F` after the given stage (`forward.stage1`, `forward.stage2`,
    /// `forward.joint`) paired with an `M_B` (`backward`, `backward.joint`).
    pub fn load_mapping(&self, forward: &str, backward: &str) -> Result<MappingModel> {
        Ok(MappingModel::from_checkpoints(&self.load_checkpoint(forward)?, &self.load_checkpoint(backward)?)?)
    }

    pub fn load_view(&self) -> Result<ViewPredictor> {
        self.require(Stage::Trajectory)?;
        Ok(ViewPredictor::from_checkpoint(&self.load_checkpoint("view")?)?)
    }

    pub fn load_finetuners(&self) -> Result<Vec<TrajectoryFinetuner>> {
        if !self.is_complete(Stage::Trajectory) {
            return Err(PipelineError::MissingStage {
                stage: Stage::Trajectory,
                missing: Stage::Trajectory,
            });
        }
        self.config
            .trajectory
            .resizes
            .iter()
            .map(|op| Ok(TrajectoryFinetuner::from_checkpoint(&self.load_checkpoint(&format!("trajectory.{}", op.part))?)?))
            .collect()
    }

    /// Every checkpoint file name with its content digest, sorted.
    pub fn checkpoint_digests(&self) -> Result<Vec<(String, String)>> {
        let dir = self.model_dir();
        let mut out = Vec::new();
        let entries = std::fs::read_dir(dir).map_err(|e| PipelineError::Io(dir.display().to_string(), e))?;
        for entry in entries {
            let path = entry.map_err(|e| PipelineError::Io(dir.display().to_string(), e))?.path();
            if path.extension().is_some_and(|e| e == "ckpt") {
                let name = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
                out.push((name, Checkpoint::load(&path)?.digest()));
            }
        }
        out.sort();
        Ok(out)
    }
}

/// Everything the editing operations read, loaded once.
pub struct ModelSet {
    pub manifest: DatasetManifest,
    pub template: Arc<Template>,
    pub generator: GeneratorModel,
    pub vaes: Vec<PartVae>,
    pub mapping: MappingModel,
    pub views: ViewPredictor,
    pub finetuners: Vec<TrajectoryFinetuner>,
    pub inversion: InversionConfig,
    pub data_dir: PathBuf,
}

impl ModelSet {
    pub fn load(ws: &Workspace) -> Result<Self> {
        Ok(Self {
            manifest: ws.manifest()?,
            template: ws.template()?,
            generator: ws.load_generator()?,
            vaes: ws.load_vaes()?,
            mapping: ws.load_mapping("forward.joint", "backward.joint")?,
            views: ws.load_view()?,
            finetuners: ws.load_finetuners()?,
            inversion: ws.config.inversion.clone(),
            data_dir: ws.data_dir().to_path_buf(),
        })
    }

    /// The dataset render of shape `id` at its canonical view, `None` for an
    /// unknown id.
    pub fn shape_image(&self, id: usize) -> Result<Option<GrayImage>> {
        let Some(record) = self.manifest.record(id) else {
            return Ok(None);
        };
        let view = id % VIEW_COUNT;
        let entry = record.images.iter().find(|e| e.yaw == view).unwrap_or(&record.images[0]);
        Ok(Some(GrayImage::load(&self.data_dir.join(&entry.path))?))
    }

    /// `w_I` for one image under the configured inversion settings, with its
    /// final proxy error.
    pub fn invert(&self, image: &GrayImage) -> Result<(Vec<f32>, f64)> {
        let size = self.generator.size;
        if image.width() != size || image.height() != size {
            return Err(PipelineError::Config(format!(
                "image is {}x{}, the generator expects {size}x{size}",
                image.width(),
                image.height()
            )));
        }
        let batch = Tensor::new(&[1, size, size], image.data().to_vec())?;
        let result = invert(&self.generator, &batch, &self.inversion)?;
        Ok((result.latents.row(0).to_vec(), result.proxy[0]))
    }

    pub fn bridge(&self) -> Result<crate::mapping::Bridge<'_>> {
        Ok(crate::mapping::Bridge::new(&self.generator, &self.vaes, self.template.clone())?)
    }

    pub fn finetuner(&self, part: usize) -> Option<&TrajectoryFinetuner> {
        self.finetuners.iter().find(|f| f.part == part)
    }
}
