//! `motionkit` command-line entry point.

mod commands;
mod error;
mod motion_file;
mod run;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "motionkit", version, about = "Action-conditioned motion synthesis, evaluation and mesh reposing")]
struct Cli {
    /// Directory under which per-run output directories are created.
    #[arg(long, global = true, env = "MOTIONKIT_OUT_DIR", default_value = "runs")]
    out_root: PathBuf,
    /// Write outputs to exactly this directory instead of a fresh run directory.
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Write a procedural labeled motion dataset (JSON lines).
    SynthData(SynthArgs),
    /// Train a motion VAE on a dataset.
    Train(TrainArgs),
    /// Sample one motion for an action.
    Generate(GenerateArgs),
    /// Report FID, accuracy, diversity and multimodality with 95% intervals.
    Evaluate(EvaluateArgs),
    /// Blend between the first latents of two seeds.
    Interpolate(InterpolateArgs),
    /// Sample one motion whose action switches on a schedule.
    Transition(TransitionArgs),
    /// Continue a fixed prefix of poses.
    Outpaint(OutpaintArgs),
    /// Write a posed synthetic body mesh with its joints, for fitting demos.
    MakeSubject(MakeSubjectArgs),
    /// Fit the skinned template to a target mesh and joints.
    FitMesh(FitMeshArgs),
    /// Drive a fitted mesh with a motion, one mesh per frame.
    AnimateMesh(AnimateMeshArgs),
    /// Fill in colors of occluded vertices from reference colors and neighbors.
    BlendTexture(BlendTextureArgs),
    /// Convert a motion or dataset clip to BVH, JSON or CSV.
    Export(ExportArgs),
    /// Repeat a run from its config.json snapshot.
    #[serde(skip)]
    Rerun(RerunArgs),
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct SynthArgs {
    #[arg(long, value_delimiter = ',', default_value = "wave,walk,squat")]
    pub actions: Vec<String>,
    #[arg(long, default_value_t = 100)]
    pub clips_per_action: usize,
    #[arg(long, default_value_t = 16)]
    pub frames: usize,
    #[arg(long, default_value_t = 20.0)]
    pub fps: f64,
    /// Per-frame angle noise, radians.
    #[arg(long, default_value_t = 0.02)]
    pub noise: f64,
    #[arg(long, default_value_t = 10)]
    pub subjects: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// plain, lie, glmi_m or glmi_r.
    #[arg(long, default_value = "glmi_m")]
    pub variant: String,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 128)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 2e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 128)]
    pub hidden: usize,
    #[arg(long, default_value_t = 30)]
    pub z_dim: usize,
    #[arg(long, default_value_t = 16)]
    pub window: usize,
    #[arg(long, default_value_t = 0.6)]
    pub teacher_forcing: f64,
    #[arg(long, default_value_t = 0.01)]
    pub kl_end: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct ModelArg {
    /// Run directory of `train` (holds model.json and model.ckpt.json).
    #[arg(long)]
    pub model: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct GenerateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArg,
    #[arg(long)]
    pub action: String,
    #[arg(long, default_value_t = 60)]
    pub length: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 20.0)]
    pub fps: f64,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct EvaluateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArg,
    /// Real motions: the comparison set and, without --classifier, the
    /// classifier's training data.
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory of an earlier evaluate that saved a classifier.
    #[arg(long)]
    pub classifier: Option<PathBuf>,
    #[arg(long, default_value_t = 30)]
    pub classifier_epochs: usize,
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    #[arg(long, default_value_t = 3000)]
    pub samples: usize,
    #[arg(long, default_value_t = 16)]
    pub length: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct InterpolateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArg,
    #[arg(long)]
    pub action: String,
    #[arg(long)]
    pub seed_a: u64,
    #[arg(long)]
    pub seed_b: u64,
    /// Number of motions, endpoints included.
    #[arg(long, default_value_t = 5)]
    pub steps: usize,
    #[arg(long, default_value_t = 60)]
    pub length: usize,
    /// Noise seed shared by every interpolated motion.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 20.0)]
    pub fps: f64,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct TransitionArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArg,
    /// `action:frame` pairs, e.g. `walk:0,squat:30`.
    #[arg(long)]
    pub schedule: String,
    #[arg(long, default_value_t = 60)]
    pub length: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 20.0)]
    pub fps: f64,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct OutpaintArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArg,
    /// Motion file (.json) or dataset (.jsonl) holding the prefix.
    #[arg(long)]
    pub prefix: PathBuf,
    /// Clip id when --prefix is a dataset.
    #[arg(long)]
    pub clip: Option<String>,
    #[arg(long, default_value_t = 8)]
    pub prefix_frames: usize,
    #[arg(long)]
    pub action: String,
    #[arg(long, default_value_t = 60)]
    pub length: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct MakeSubjectArgs {
    /// Template JSON; the built-in synthetic body when absent.
    #[arg(long)]
    pub template: Option<PathBuf>,
    /// Largest joint rotation angle drawn, radians.
    #[arg(long, default_value_t = 0.4)]
    pub max_angle: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct FitMeshArgs {
    /// Target mesh (.obj or .json).
    #[arg(long)]
    pub mesh: PathBuf,
    /// JSON object of joint name to `[x, y, z]`; missing joints get zero confidence.
    #[arg(long)]
    pub joints: PathBuf,
    #[arg(long)]
    pub template: Option<PathBuf>,
    /// Pose prior JSON; a broad Gaussian when absent.
    #[arg(long)]
    pub prior: Option<PathBuf>,
    #[arg(long, default_value_t = 2.0)]
    pub lambda_j: f64,
    #[arg(long, default_value_t = 0.2)]
    pub lambda_r: f64,
    #[arg(long, default_value_t = 8)]
    pub outer_iters: usize,
    #[arg(long, default_value_t = 150)]
    pub inner_iters: usize,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct AnimateMeshArgs {
    #[arg(long)]
    pub mesh: PathBuf,
    /// fit.json written by fit-mesh.
    #[arg(long)]
    pub fit: PathBuf,
    /// Motion file (.json) or dataset (.jsonl).
    #[arg(long)]
    pub motion: PathBuf,
    #[arg(long)]
    pub clip: Option<String>,
    #[arg(long)]
    pub template: Option<PathBuf>,
    #[arg(long, default_value_t = 30)]
    pub arap_iters: usize,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct BlendTextureArgs {
    /// Colored mesh (.obj or .json).
    #[arg(long)]
    pub mesh: PathBuf,
    /// JSON list of occluded vertex indices.
    #[arg(long)]
    pub occluded: PathBuf,
    /// Mesh with the same vertices whose colors are the references.
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub lambda_nn: f64,
    #[arg(long, default_value_t = 10)]
    pub neighbors: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    Bvh,
    Json,
    Csv,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct ExportArgs {
    #[arg(long, value_enum)]
    pub format: ExportFormat,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub clip: Option<String>,
}

#[derive(Args, Debug, Clone)]
pub struct RerunArgs {
    /// config.json of an earlier run.
    pub config: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::dispatch(cli.command, &cli.out_root, cli.run_dir.as_deref()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(1)
        }
    }
}
