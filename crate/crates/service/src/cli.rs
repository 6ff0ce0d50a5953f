use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use partbridge::imaging::GrayImage;
use partbridge::manipulate::{replace_part, set_view, ResizeMode};
use partbridge::mapping::ViewVector;
use partbridge::pipeline::{self as pl, ModelSet, RunConfig, Workspace};
use serde::Serialize;
use serde_json::json;

use crate::api::{router, AppState};

#[derive(Debug, Parser)]
#[command(name = "partbridge", version, about = "Train and run the part-aware image editing pipeline")]
pub struct Cli {
    /// Run configuration (TOML); desk-scale defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured run seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the procedural dataset and its renders.
    GenData,
    /// Train one stage; earlier stages must already exist.
    Train {
        #[arg(value_enum)]
        stage: TrainStage,
    },
    /// Invert an image (or a dataset shape's render) into the latent space.
    Invert(InvertArgs),
    #[command(subcommand)]
    Edit(EditCommand),
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Serve the JSON API over the trained model set.
    Serve(ServeArgs),
    /// Print the effective configuration as TOML.
    ShowConfig,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum TrainStage {
    Partvae,
    Generator,
    Forward,
    Backward,
    Finetune,
    Viewpred,
    Trajectory,
    /// Every stage including data generation, in order.
    All,
}

#[derive(Debug, Args)]
pub struct InvertArgs {
    #[arg(long, conflicts_with = "shape", required_unless_present = "shape")]
    pub image: Option<PathBuf>,
    #[arg(long)]
    pub shape: Option<usize>,
    /// Also write the reconstruction `G(w_I)` here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum EditCommand {
    /// Swap one part of `src` for the corresponding part of `tgt`.
    Replace {
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        tgt: PathBuf,
        #[arg(long)]
        part: String,
        #[arg(long, default_value = "edit.png")]
        out: PathBuf,
    },
    /// Move along a part's trained resize trajectory.
    Resize {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        part: String,
        #[arg(long, allow_hyphen_values = true)]
        weight: f64,
        #[arg(long, value_enum, default_value = "finetuner")]
        mode: Mode,
        #[arg(long, default_value = "edit.png")]
        out: PathBuf,
    },
    /// Re-render at another of the 12 yaw steps.
    View {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        view: usize,
        #[arg(long, default_value = "edit.png")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Mode {
    Finetuner,
    Raw,
}

impl From<Mode> for ResizeMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Finetuner => ResizeMode::Finetuner,
            Mode::Raw => ResizeMode::Raw,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Held-out shape, image and round-trip errors of the trained bridge.
    Recon,
    /// Forward mapping with and without the vertex-space stage.
    AblateSize {
        /// Run seeds; the configured seed plus the next two by default.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// Joint finetuning gain and the effect of the latent-deviation term.
    AblateFinetune,
    /// Trajectory finetuner against the attribute-space route.
    AblateTrajectory,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1")]
    pub addr: String,
    #[arg(long, env = "PARTBRIDGE_PORT", default_value_t = 8080)]
    pub port: u16,
    /// Echo raw latents in edit responses.
    #[arg(long)]
    pub debug: bool,
}

pub fn workspace(cli: &Cli) -> Result<Workspace> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    Ok(Workspace::new(config)?)
}

fn print<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn load_image(path: &Path) -> Result<GrayImage> {
    GrayImage::load(path).with_context(|| format!("reading {}", path.display()))
}

fn part(models: &ModelSet, name: &str) -> Result<usize> {
    let category = models.manifest.category;
    match category.part_index(name) {
        Some(k) => Ok(k),
        None => bail!("`{name}` is not a {} part; expected one of {:?}", category.name(), category.part_names()),
    }
}

fn invert_file(models: &ModelSet, path: &Path) -> Result<(Vec<f32>, f64)> {
    let image = load_image(path)?;
    models.invert(&image).with_context(|| format!("inverting {}", path.display()))
}

pub fn run(cli: Cli) -> Result<()> {
    let ws = workspace(&cli)?;
    match cli.command {
        Command::ShowConfig => print!("{}", ws.config.to_toml()),
        Command::GenData => {
            let manifest = pl::run_data(&ws)?;
            print(&json!({ "shapes": manifest.records.len(), "data": ws.data_dir() }))?;
        }
        Command::Train { stage } => match stage {
            TrainStage::Partvae => print(&pl::run_partvae(&ws)?)?,
            TrainStage::Generator => print(&pl::run_generator(&ws)?)?,
            TrainStage::Forward => print(&pl::run_forward(&ws)?)?,
            TrainStage::Backward => print(&pl::run_backward(&ws)?)?,
            TrainStage::Finetune => print(&pl::run_finetune(&ws)?)?,
            TrainStage::Viewpred => print(&pl::run_viewpred(&ws)?)?,
            TrainStage::Trajectory => print(&pl::run_trajectory(&ws)?)?,
            TrainStage::All => {
                pl::run_all(&ws)?;
                print(&json!({ "models": ws.model_dir(), "config_hash": ws.config_hash() }))?;
            }
        },
        Command::Invert(args) => {
            let models = ModelSet::load(&ws)?;
            let image = match (&args.image, args.shape) {
                (Some(path), _) => load_image(path)?,
                (None, Some(id)) => models.shape_image(id)?.with_context(|| format!("no shape with id {id}"))?,
                (None, None) => bail!("give --image or --shape"),
            };
            let (latent, proxy) = models.invert(&image)?;
            if let Some(out) = &args.out {
                models.generator.synthesize(&latent)?.save(out)?;
            }
            print(&json!({ "latent": latent, "proxy": proxy, "reconstruction": args.out }))?;
        }
        Command::Edit(edit) => {
            let models = ModelSet::load(&ws)?;
            let (out, report) = match edit {
                EditCommand::Replace { src, tgt, part: name, out } => {
                    let k = part(&models, &name)?;
                    let (ws_, src_proxy) = invert_file(&models, &src)?;
                    let (wt, tgt_proxy) = invert_file(&models, &tgt)?;
                    let r = replace_part(&models.generator, &models.mapping, &models.views, &ws_, &wt, k)?;
                    r.image.save(&out)?;
                    let report = json!({
                        "operation": "replace",
                        "part": name,
                        "view_index": r.view.index(),
                        "inversion_proxy": { "src": src_proxy, "tgt": tgt_proxy },
                        "latent": r.latent,
                    });
                    (out, report)
                }
                EditCommand::Resize { image, part: name, weight, mode, out } => {
                    let k = part(&models, &name)?;
                    let Some(finetuner) = models.finetuner(k) else {
                        bail!("no resize trajectory is trained for `{name}`");
                    };
                    let (w, proxy) = invert_file(&models, &image)?;
                    let latent = finetuner.resized_latent(&w, weight, mode.into())?;
                    models.generator.synthesize(&latent)?.save(&out)?;
                    let report = json!({
                        "operation": "resize",
                        "part": name,
                        "weight": weight,
                        "mode": ResizeMode::from(mode),
                        "factors": finetuner.factors,
                        "inversion_proxy": proxy,
                        "latent": latent,
                    });
                    (out, report)
                }
                EditCommand::View { image, view, out } => {
                    let v = ViewVector::new(view).with_context(|| format!("view must be below {}", partbridge::mapping::VIEW_COUNT))?;
                    let (w, proxy) = invert_file(&models, &image)?;
                    let r = set_view(&models.generator, &models.mapping, &w, v)?;
                    r.image.save(&out)?;
                    let report = json!({
                        "operation": "view",
                        "view_index": view,
                        "source_view": models.views.predict_view(&w)?.index(),
                        "inversion_proxy": proxy,
                        "latent": r.latent,
                    });
                    (out, report)
                }
            };
            let mut report = report;
            report["output"] = json!(out);
            print(&report)?;
        }
        Command::Eval(e) => match e {
            EvalCommand::Recon => print(&pl::eval_recon(&ws)?)?,
            EvalCommand::AblateSize { seeds } => {
                let seeds = if seeds.is_empty() {
                    let s = ws.config.seed;
                    vec![s, s + 1, s + 2]
                } else {
                    seeds
                };
                let results = pl::ablate_size(&ws, &seeds)?;
                let improves: Vec<bool> = results.iter().map(|r| r.improves()).collect();
                print(&json!({ "runs": results, "improves": improves }))?;
            }
            EvalCommand::AblateFinetune => print(&pl::ablate_finetune(&ws)?)?,
            EvalCommand::AblateTrajectory => print(&pl::ablate_trajectory(&ws)?)?,
        },
        Command::Serve(args) => serve(&ws, &args)?,
    }
    Ok(())
}

fn serve(ws: &Workspace, args: &ServeArgs) -> Result<()> {
    let state = Arc::new(AppState::load(ws, args.debug));
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind((args.addr.as_str(), args.port))
            .await
            .with_context(|| format!("binding {}:{}", args.addr, args.port))?;
        log::info!("listening on {}", listener.local_addr()?);
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}
