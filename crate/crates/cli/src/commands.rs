use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use motionkit::autodiff::AdamConfig;
use motionkit::datasets::{clip_to_bvh, clip_to_csv, synthesize, MotionDataset, SynthSpec};
use motionkit::geometry::{
    animate_mesh, blend_occluded_texture, fit_skinned_template, AnimateConfig, ArapConfig, BlendConfig, FitConfig,
    FitResult, GaussianMixturePrior, SkinnedTemplate, TriMesh,
};
use motionkit::lie::{joints_to_lie, Vec3};
use motionkit::metrics::{evaluate, train_classifier, ClassifierConfig, EvalConfig, MotionClassifier};
use motionkit::tvae::{train, Action2MotionModel, ModelConfig, TrainConfig};

use crate::error::{CliError, CliResult};
use crate::motion_file::{load_motion, MotionFile, ScheduleEntry};
use crate::run::RunDir;
use crate::*;

const MODEL_CKPT: &str = "model.ckpt.json";
const MODEL_SIDECAR: &str = "model.json";
const CLASSIFIER_CKPT: &str = "classifier.ckpt.json";
const CLASSIFIER_SIDECAR: &str = "classifier.json";

fn absolute(p: &mut PathBuf) {
    if let Ok(a) = std::path::absolute(&*p) {
        *p = a;
    }
}

fn absolute_opt(p: &mut Option<PathBuf>) {
    if let Some(p) = p {
        absolute(p);
    }
}

/// Makes every input path absolute so the snapshot runs from anywhere.
fn resolve(cmd: &mut Command) {
    match cmd {
        Command::SynthData(_) | Command::Rerun(_) => {}
        Command::Train(a) => absolute(&mut a.data),
        Command::Generate(a) => absolute(&mut a.model.model),
        Command::Evaluate(a) => {
            absolute(&mut a.model.model);
            absolute(&mut a.data);
            absolute_opt(&mut a.classifier);
        }
        Command::Interpolate(a) => absolute(&mut a.model.model),
        Command::Transition(a) => absolute(&mut a.model.model),
        Command::Outpaint(a) => {
            absolute(&mut a.model.model);
            absolute(&mut a.prefix);
        }
        Command::MakeSubject(a) => absolute_opt(&mut a.template),
        Command::FitMesh(a) => {
            absolute(&mut a.mesh);
            absolute(&mut a.joints);
            absolute_opt(&mut a.template);
            absolute_opt(&mut a.prior);
        }
        Command::AnimateMesh(a) => {
            absolute(&mut a.mesh);
            absolute(&mut a.fit);
            absolute(&mut a.motion);
            absolute_opt(&mut a.template);
        }
        Command::BlendTexture(a) => {
            absolute(&mut a.mesh);
            absolute(&mut a.occluded);
            absolute(&mut a.reference);
        }
        Command::Export(a) => absolute(&mut a.input),
    }
}

pub fn dispatch(mut cmd: Command, out_root: &Path, run_dir: Option<&Path>) -> CliResult<()> {
    if let Command::Rerun(a) = &cmd {
        let text = std::fs::read_to_string(&a.config)?;
        cmd = serde_json::from_str(&text)?;
    }
    resolve(&mut cmd);
    let config = serde_json::to_string_pretty(&cmd)?;
    let name = serde_json::to_value(&cmd)?["command"].as_str().unwrap_or("run").to_string();
    let run = RunDir::create(out_root, run_dir, &name, &config)?;
    match cmd {
        Command::SynthData(a) => synth_data(a, &run),
        Command::Train(a) => train_model(a, &run),
        Command::Generate(a) => generate(a, &run),
        Command::Evaluate(a) => evaluate_model(a, &run),
        Command::Interpolate(a) => interpolate(a, &run),
        Command::Transition(a) => transition(a, &run),
        Command::Outpaint(a) => outpaint(a, &run),
        Command::MakeSubject(a) => make_subject(a, &run),
        Command::FitMesh(a) => fit_mesh(a, &run),
        Command::AnimateMesh(a) => animate(a, &run),
        Command::BlendTexture(a) => blend_texture(a, &run),
        Command::Export(a) => export(a, &run),
        Command::Rerun(_) => unreachable!("replaced by the snapshot"),
    }?;
    println!("run: {}", run.path.display());
    Ok(())
}

fn synth_data(a: SynthArgs, run: &RunDir) -> CliResult<()> {
    let ds = synthesize(&SynthSpec {
        actions: a.actions,
        clips_per_action: a.clips_per_action,
        frames: a.frames,
        fps: a.fps,
        noise: a.noise,
        subjects: a.subjects,
        seed: a.seed,
    })?;
    let p = run.file("dataset.jsonl");
    ds.save(&p)?;
    println!("wrote {} clips to {}", ds.len(), p.display());
    Ok(())
}

fn load_model(dir: &Path) -> CliResult<Action2MotionModel> {
    Ok(Action2MotionModel::load(&dir.join(MODEL_CKPT), &dir.join(MODEL_SIDECAR))?)
}

fn train_model(a: TrainArgs, run: &RunDir) -> CliResult<()> {
    let data = MotionDataset::load(&a.data)?;
    let config = ModelConfig {
        decoder: a.variant.parse()?,
        hidden: a.hidden,
        z_dim: a.z_dim,
        seed: a.seed,
        ..ModelConfig::default()
    };
    let tc = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        window: a.window,
        teacher_forcing: a.teacher_forcing,
        kl_end: a.kl_end,
        adam: AdamConfig {
            lr: a.lr,
            ..AdamConfig::default()
        },
        seed: a.seed,
        ..TrainConfig::default()
    };
    let mut model = Action2MotionModel::new(config, data.skeleton.clone(), data.action_vocab.clone())?;
    let every = (a.epochs / 10).max(1);
    let history = train(&mut model, &data, &tc, |s| {
        if s.epoch % every == 0 || s.epoch + 1 == a.epochs {
            println!(
                "epoch {:>4}  loss {:.5}  recon {:.5}  kl {:.5}  align {:.5}",
                s.epoch, s.total, s.recon, s.kl, s.align
            );
        }
    })?;
    let mut csv = String::from("epoch,total,recon,kl,align,lambda_kl,clamped\n");
    for s in &history.epochs {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            s.epoch, s.total, s.recon, s.kl, s.align, s.lambda_kl, s.clamped
        ));
    }
    run.write("history.csv", &csv)?;
    model.save(
        &run.file(MODEL_CKPT),
        &run.file(MODEL_SIDECAR),
        Some(serde_json::to_value(&tc)?),
    )?;
    Ok(())
}

fn single_schedule(action: &str) -> Vec<ScheduleEntry> {
    vec![ScheduleEntry {
        action: action.to_string(),
        frame: 0,
    }]
}

fn generate(a: GenerateArgs, run: &RunDir) -> CliResult<()> {
    let model = load_model(&a.model.model)?;
    let action = model.action_index(&a.action)?;
    let m = model.generate(action, a.length, a.seed)?;
    let file = MotionFile::new(
        "generate",
        &model.skeleton,
        &model.action_vocab,
        a.fps,
        a.seed,
        single_schedule(&a.action),
        m.clamped,
        &m.joints,
    );
    let p = run.write("motion.json", &file.to_json())?;
    println!("wrote {}", p.display());
    Ok(())
}

fn evaluate_model(a: EvaluateArgs, run: &RunDir) -> CliResult<()> {
    let model = load_model(&a.model.model)?;
    let data = MotionDataset::load(&a.data)?;
    let classifier = match &a.classifier {
        Some(dir) => MotionClassifier::load(&dir.join(CLASSIFIER_CKPT), &dir.join(CLASSIFIER_SIDECAR))?,
        None => {
            let cfg = ClassifierConfig {
                epochs: a.classifier_epochs,
                seed: a.seed,
                ..ClassifierConfig::default()
            };
            let (c, report) = train_classifier(&data, &cfg)?;
            c.save(&run.file(CLASSIFIER_CKPT), &run.file(CLASSIFIER_SIDECAR), Some(report))?;
            c
        }
    };
    if classifier.action_vocab != model.action_vocab {
        return Err(CliError::invalid("classifier and model action vocabularies differ"));
    }
    let cfg = EvalConfig {
        trials: a.trials,
        samples: a.samples,
        length: a.length,
        seed: a.seed,
        ..EvalConfig::default()
    };
    let report = evaluate(&classifier, &model, &data, &cfg)?;
    for (name, e) in report.rows() {
        println!("{name:<14} {e}");
    }
    if report.regularized_trials > 0 {
        println!("note: {} trials needed a covariance ridge", report.regularized_trials);
    }
    run.write("metrics.csv", &report.to_csv())?;
    run.write("metrics.json", &serde_json::to_string_pretty(&report)?)?;
    Ok(())
}

fn interpolate(a: InterpolateArgs, run: &RunDir) -> CliResult<()> {
    let model = load_model(&a.model.model)?;
    let action = model.action_index(&a.action)?;
    let za = model.first_latent(action, a.length, a.seed_a)?;
    let zb = model.first_latent(action, a.length, a.seed_b)?;
    let motions = model.interpolate(action, &za, &zb, a.steps, a.length, a.seed)?;
    for (k, m) in motions.iter().enumerate() {
        let file = MotionFile::new(
            "interpolate",
            &model.skeleton,
            &model.action_vocab,
            a.fps,
            a.seed,
            single_schedule(&a.action),
            m.clamped,
            &m.joints,
        );
        run.write(&format!("interp_{k:03}.json"), &file.to_json())?;
    }
    println!("wrote {} motions", motions.len());
    Ok(())
}

/// `walk:0,squat:30` into `(name, frame)` pairs.
pub fn parse_schedule(s: &str) -> CliResult<Vec<(String, usize)>> {
    s.split(',')
        .map(|part| {
            let (name, frame) = part
                .trim()
                .rsplit_once(':')
                .ok_or_else(|| CliError::invalid(format!("schedule entry {part:?} is not action:frame")))?;
            let frame = frame
                .parse::<usize>()
                .map_err(|_| CliError::invalid(format!("bad frame in schedule entry {part:?}")))?;
            Ok((name.to_string(), frame))
        })
        .collect()
}

fn transition(a: TransitionArgs, run: &RunDir) -> CliResult<()> {
    let model = load_model(&a.model.model)?;
    let entries = parse_schedule(&a.schedule)?;
    let schedule: Vec<(usize, usize)> = entries
        .iter()
        .map(|(n, f)| Ok((model.action_index(n)?, *f)))
        .collect::<CliResult<_>>()?;
    let m = model.transition(&schedule, a.length, a.seed)?;
    let file = MotionFile::new(
        "transition",
        &model.skeleton,
        &model.action_vocab,
        a.fps,
        a.seed,
        entries
            .into_iter()
            .map(|(action, frame)| ScheduleEntry { action, frame })
            .collect(),
        m.clamped,
        &m.joints,
    );
    let p = run.write("motion.json", &file.to_json())?;
    println!("wrote {}", p.display());
    Ok(())
}

fn outpaint(a: OutpaintArgs, run: &RunDir) -> CliResult<()> {
    let model = load_model(&a.model.model)?;
    let action = model.action_index(&a.action)?;
    let src = load_motion(&a.prefix, a.clip.as_deref())?;
    if src.tree()?.hash() != model.skeleton.hash() {
        return Err(CliError::invalid("prefix skeleton differs from the model's"));
    }
    let joints = src.joints();
    if a.prefix_frames == 0 || a.prefix_frames > joints.len() {
        return Err(CliError::invalid(format!(
            "prefix of {} frames requested from a {}-frame motion",
            a.prefix_frames,
            joints.len()
        )));
    }
    let m = model.outpaint(&joints[..a.prefix_frames], action, a.length, a.seed)?;
    let mut file = MotionFile::new(
        "outpaint",
        &model.skeleton,
        &model.action_vocab,
        src.fps,
        a.seed,
        single_schedule(&a.action),
        m.clamped,
        &m.joints,
    );
    file.prefix_frames = Some(a.prefix_frames);
    let p = run.write("motion.json", &file.to_json())?;
    println!("wrote {}", p.display());
    Ok(())
}

fn load_template(path: &Option<PathBuf>) -> CliResult<SkinnedTemplate> {
    match path {
        Some(p) => Ok(SkinnedTemplate::load(p)?),
        None => Ok(SkinnedTemplate::synthetic()),
    }
}

fn named_joints(template: &SkinnedTemplate, joints: &[Vec3]) -> BTreeMap<String, [f64; 3]> {
    template
        .joint_names
        .iter()
        .zip(joints)
        .map(|(n, v)| (n.clone(), [v.x, v.y, v.z]))
        .collect()
}

fn make_subject(a: MakeSubjectArgs, run: &RunDir) -> CliResult<()> {
    let template = load_template(&a.template)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut params = template.rest_params();
    for (j, w) in params.theta.iter_mut().enumerate() {
        let scale = if j == 0 { 0.3 * a.max_angle } else { a.max_angle };
        *w = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ) * (scale / 3f64.sqrt());
    }
    for b in params.beta.iter_mut() {
        *b = rng.random_range(-1.0..1.0);
    }
    let mut mesh = template.posed_mesh(&params)?;
    let labels = mesh.part_labels.clone().unwrap_or_default();
    mesh.colors = mesh
        .vertices
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let l = labels.get(i).copied().unwrap_or(0) as f64;
            Vec3::new(
                (0.35 + 0.08 * l).fract(),
                (0.3 + 0.25 * v.y).clamp(0.0, 1.0),
                (0.9 - 0.1 * l).rem_euclid(1.0),
            )
        })
        .collect();
    let (_, joints) = template.pose(&params)?;
    mesh.save(&run.file("subject.json"))?;
    mesh.save(&run.file("subject.obj"))?;
    run.write("joints.json", &serde_json::to_string_pretty(&named_joints(&template, &joints))?)?;
    run.write("truth.json", &serde_json::to_string_pretty(&params)?)?;
    println!("wrote subject with {} vertices", mesh.vertex_count());
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct FitFile {
    #[serde(flatten)]
    result: FitResult,
    /// Largest error over the joints that were given.
    given_joint_error: f64,
}

fn fit_mesh(a: FitMeshArgs, run: &RunDir) -> CliResult<()> {
    let template = load_template(&a.template)?;
    let prior = match &a.prior {
        Some(p) => GaussianMixturePrior::load(p)?,
        None => template.default_prior(),
    };
    let target = TriMesh::load(&a.mesh)?;
    let given: BTreeMap<String, [f64; 3]> = serde_json::from_str(&std::fs::read_to_string(&a.joints)?)?;
    if let Some(unknown) = given.keys().find(|k| template.joint_index(k).is_none()) {
        return Err(CliError::invalid(format!("template has no joint named {unknown:?}")));
    }
    if !given.contains_key(&template.joint_names[0]) {
        return Err(CliError::invalid(format!("joints must include the root {:?}", template.joint_names[0])));
    }
    let joints: Vec<Vec3> = template
        .joint_names
        .iter()
        .map(|n| given.get(n).map_or(Vec3::zeros(), |v| Vec3::new(v[0], v[1], v[2])))
        .collect();
    let confidences: Vec<f64> = template
        .joint_names
        .iter()
        .map(|n| if given.contains_key(n) { 1.0 } else { 0.0 })
        .collect();
    let cfg = FitConfig {
        lambda_j: a.lambda_j,
        lambda_r: a.lambda_r,
        confidences: Some(confidences.clone()),
        outer_iters: a.outer_iters,
        inner_iters: a.inner_iters,
        ..FitConfig::default()
    };
    let result = fit_skinned_template(&template, &prior, &target, &joints, &cfg)?;
    if let Some(w) = &result.warning {
        println!("warning: {w}");
    }
    let (_, fitted) = template.pose(&result.params)?;
    let given_joint_error = fitted
        .iter()
        .zip(&joints)
        .zip(&confidences)
        .filter(|(_, &c)| c > 0.0)
        .map(|((a, b), _)| (a - b).norm())
        .fold(0.0, f64::max);
    println!("max joint error {given_joint_error:.6} m");
    template.posed_mesh(&result.params)?.save(&run.file("fitted.obj"))?;
    run.write(
        "fit.json",
        &serde_json::to_string_pretty(&FitFile {
            result,
            given_joint_error,
        })?,
    )?;
    Ok(())
}

fn animate(a: AnimateMeshArgs, run: &RunDir) -> CliResult<()> {
    let template = load_template(&a.template)?;
    let target = TriMesh::load(&a.mesh)?;
    let fit: FitFile = serde_json::from_str(&std::fs::read_to_string(&a.fit)?)?;
    let motion = load_motion(&a.motion, a.clip.as_deref())?;
    let tree = motion.tree()?;
    let lie = joints_to_lie(&tree, &motion.joints())?;
    let cfg = AnimateConfig {
        arap: ArapConfig {
            max_iters: a.arap_iters,
            ..ArapConfig::default()
        },
    };
    let frames = animate_mesh(&template, &fit.result.params, &target, &tree, &lie, &cfg)?;
    for (t, m) in frames.iter().enumerate() {
        m.save(&run.file(&format!("frame_{t:03}.obj")))?;
    }
    println!("wrote {} frames", frames.len());
    Ok(())
}

#[derive(Serialize)]
struct BlendReport {
    iterations: usize,
    converged: bool,
    final_objective: Option<f64>,
    isolated: Vec<usize>,
}

fn blend_texture(a: BlendTextureArgs, run: &RunDir) -> CliResult<()> {
    let mesh = TriMesh::load(&a.mesh)?;
    let reference = TriMesh::load(&a.reference)?;
    if reference.colors.len() != mesh.vertex_count() {
        return Err(CliError::invalid("reference mesh must color every vertex of the target"));
    }
    let occluded: Vec<usize> = serde_json::from_str(&std::fs::read_to_string(&a.occluded)?)?;
    let cfg = BlendConfig {
        lambda_nn: a.lambda_nn,
        neighbors: a.neighbors,
        ..BlendConfig::default()
    };
    let r = blend_occluded_texture(&mesh, &occluded, &reference.colors, &cfg)?;
    let mut out = mesh.clone();
    out.colors = r.colors;
    out.save(&run.file("blended.obj"))?;
    let report = BlendReport {
        iterations: r.iterations,
        converged: r.converged,
        final_objective: r.objective.last().copied(),
        isolated: r.isolated,
    };
    run.write("blend.json", &serde_json::to_string_pretty(&report)?)?;
    println!("{} iterations, converged: {}", report.iterations, report.converged);
    Ok(())
}

fn export(a: ExportArgs, run: &RunDir) -> CliResult<()> {
    let motion = load_motion(&a.input, a.clip.as_deref())?;
    let p = match a.format {
        ExportFormat::Bvh => {
            let (tree, clip) = motion.to_clip()?;
            run.write("motion.bvh", &clip_to_bvh(&tree, &clip)?)?
        }
        ExportFormat::Csv => {
            let (tree, clip) = motion.to_clip()?;
            run.write("motion.csv", &clip_to_csv(&tree, &clip))?
        }
        ExportFormat::Json => run.write("motion.json", &motion.to_json())?,
    };
    println!("wrote {}", p.display());
    Ok(())
}
