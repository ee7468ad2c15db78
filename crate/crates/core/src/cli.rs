//! Command-line front end. Each subcommand reads its inputs, writes its
//! outputs into `--out` together with a `<command>.manifest.json`, and
//! removes whatever it wrote if it fails.
//!
//! Settings are resolved as built-in defaults, then the `--config` JSON
//! document, then command-line flags. The resolved settings, input paths
//! included, are stored in the manifest, and `replay` re-runs a manifest
//! after checking that its inputs are unchanged. Log verbosity comes from
//! `TUBEKIT_LOG` (`error`, `warn`, `info`, `debug`, `trace`).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::amodal::{complete_pose, pose_to_box, removal_curve, PoseLibrary, RemovalDirection, DEFAULT_MARGIN};
use crate::error::{Error, Result};
use crate::evalkit::{ablate_parts, ablate_target, load_groundtruth, pr_csv, read_jsonl, Metrics, ScoredTube, Split};
use crate::fusion::load_features;
use crate::partmodel::{cluster_parts, PartClassModel, PartDescriptor, Pose2D, Skeleton};
use crate::pipeline::{
    classify, label_proposals, load_training, part_descriptors, regression_examples, Corpus, LabeledProposal,
    RegressionTarget,
};
use crate::provider::DetectionStore;
use crate::regress::train_regressors;
use crate::synthgen::{files, generate, presets, CorpusSpec};
use crate::tracker::{build_all, load_tubes, tube_records, TrackerConfig};

pub const LOG_ENV: &str = "TUBEKIT_LOG";

/// Input paths; flags of the same name take precedence.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub spec: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub skeleton: Option<PathBuf>,
    pub training: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub labeled: Option<PathBuf>,
    pub library: Option<PathBuf>,
    pub eval_poses: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub detections: Option<PathBuf>,
    pub groundtruth: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub tubes: Option<PathBuf>,
    pub scored: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: PathsConfig,
    pub seed: u64,
    pub preset: String,
    pub videos: usize,
    pub k: usize,
    pub lambda: f64,
    pub target: RegressionTarget,
    pub c: f64,
    pub positive_tiou: f64,
    pub taus: Vec<f64>,
    pub all_splits: bool,
    pub margin: f64,
    pub directions: Vec<RemovalDirection>,
    pub parts_list: Vec<usize>,
    pub tracker: TrackerConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            paths: PathsConfig::default(),
            seed: 0,
            preset: "occlusion".into(),
            videos: 50,
            k: crate::partmodel::DEFAULT_PART_CLASSES,
            lambda: crate::regress::DEFAULT_RIDGE,
            target: RegressionTarget::Fullbody,
            c: crate::fusion::DEFAULT_C,
            positive_tiou: crate::fusion::DEFAULT_POSITIVE_TIOU,
            taus: crate::evalkit::DEFAULT_TAUS.to_vec(),
            all_splits: false,
            margin: DEFAULT_MARGIN,
            directions: RemovalDirection::ALL.to_vec(),
            parts_list: vec![1, 2, 3, 4, 5],
            tracker: TrackerConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.k == 0 {
            bad.push("k must be at least 1".to_string());
        }
        if !(self.lambda >= 0.0) {
            bad.push("lambda must be >= 0".to_string());
        }
        if !(self.c > 0.0) {
            bad.push("c must be > 0".to_string());
        }
        if !(self.positive_tiou >= 0.0 && self.positive_tiou < 1.0) {
            bad.push("positive_tiou must be in [0, 1)".to_string());
        }
        if self.taus.is_empty() || self.taus.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
            bad.push("taus must be non-empty and inside (0, 1]".to_string());
        }
        if !(self.margin >= 0.0) {
            bad.push("margin must be >= 0".to_string());
        }
        if self.directions.is_empty() {
            bad.push("directions must not be empty".to_string());
        }
        if self.parts_list.is_empty() || self.parts_list.contains(&0) {
            bad.push("parts_list must be non-empty and positive".to_string());
        }
        if let Err(e) = self.tracker.validate() {
            bad.push(e.to_string());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }

    pub fn sha256(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }
}

#[derive(Debug, Parser)]
#[command(name = "tubekit", version, about = "Full-body human tubes from part detections")]
pub struct Cli {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed for generation and clustering.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus.
    Synth(SynthArgs),
    /// Cluster part proposals of training images into part classes.
    ClusterParts(ClusterArgs),
    /// Assign training proposals to part classes.
    LabelProposals(LabelArgs),
    /// Fit per-class full-body regressors.
    TrainRegressors(RegressArgs),
    /// Complete partial poses from a pose library.
    CompletePose(CompleteArgs),
    /// Mean box IoU as keypoints are removed.
    KeypointAblation(KeypointArgs),
    /// Build full-body tubes from detections.
    BuildTubes(TubeArgs),
    /// Score tubes per action class.
    Classify(ClassifyArgs),
    /// Compute AP tables.
    Evaluate(EvaluateArgs),
    /// Parts-count and regression-target sweeps.
    Ablate(AblateArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::ClusterParts(_) => "cluster-parts",
            Command::LabelProposals(_) => "label-proposals",
            Command::TrainRegressors(_) => "train-regressors",
            Command::CompletePose(_) => "complete-pose",
            Command::KeypointAblation(_) => "keypoint-ablation",
            Command::BuildTubes(_) => "build-tubes",
            Command::Classify(_) => "classify",
            Command::Evaluate(_) => "evaluate",
            Command::Ablate(_) => "ablate",
            Command::Replay(_) => "replay",
        }
    }

    /// The command with every flag unset, so that it runs from the config
    /// alone.
    fn bare(name: &str) -> Result<Command> {
        Ok(match name {
            "synth" => Command::Synth(Default::default()),
            "cluster-parts" => Command::ClusterParts(Default::default()),
            "label-proposals" => Command::LabelProposals(Default::default()),
            "train-regressors" => Command::TrainRegressors(Default::default()),
            "complete-pose" => Command::CompletePose(Default::default()),
            "keypoint-ablation" => Command::KeypointAblation(Default::default()),
            "build-tubes" => Command::BuildTubes(Default::default()),
            "classify" => Command::Classify(Default::default()),
            "evaluate" => Command::Evaluate(Default::default()),
            "ablate" => Command::Ablate(Default::default()),
            other => return Err(Error::Config(format!("manifest names unknown command `{other}`"))),
        })
    }
}

#[derive(Debug, Default, Args)]
pub struct SynthArgs {
    /// Corpus spec JSON; takes precedence over --preset.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// One of visible, occlusion, viewpoint, clean.
    #[arg(long)]
    pub preset: Option<String>,
    /// Number of videos; presets only.
    #[arg(long)]
    pub videos: Option<usize>,
}

#[derive(Debug, Default, Args)]
pub struct ClusterArgs {
    /// Training images (JSON lines).
    #[arg(long)]
    pub training: Option<PathBuf>,
    /// Skeleton JSON.
    #[arg(long)]
    pub skeleton: Option<PathBuf>,
    /// Number of part classes, excluding the full-body class.
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Debug, Default, Args)]
pub struct LabelArgs {
    /// Training images (JSON lines).
    #[arg(long)]
    pub training: Option<PathBuf>,
    /// Part-class model; use detector_model.json to match generated detections.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Skeleton JSON; defaults to the 13-joint skeleton.
    #[arg(long)]
    pub skeleton: Option<PathBuf>,
}

#[derive(Debug, Default, Args)]
pub struct RegressArgs {
    /// Output of label-proposals.
    #[arg(long)]
    pub labeled: Option<PathBuf>,
    /// Part-class model the labels refer to; written back with regressors.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// fullbody or visible.
    #[arg(long)]
    pub target: Option<RegressionTarget>,
    /// Ridge strength.
    #[arg(long)]
    pub lambda: Option<f64>,
}

#[derive(Debug, Default, Args)]
pub struct CompleteArgs {
    /// Pose library (JSON lines).
    #[arg(long)]
    pub library: Option<PathBuf>,
    /// JSON lines of `{"joints": [[x, y, v], ...]}`.
    #[arg(long)]
    pub queries: Option<PathBuf>,
    /// Skeleton JSON; defaults to the 13-joint skeleton.
    #[arg(long)]
    pub skeleton: Option<PathBuf>,
    /// Box margin in pixels.
    #[arg(long)]
    pub margin: Option<f64>,
}

#[derive(Debug, Default, Args)]
pub struct KeypointArgs {
    /// Pose library (JSON lines).
    #[arg(long)]
    pub library: Option<PathBuf>,
    /// Complete poses to degrade (JSON lines).
    #[arg(long)]
    pub eval_poses: Option<PathBuf>,
    /// Skeleton JSON; defaults to the 13-joint skeleton.
    #[arg(long)]
    pub skeleton: Option<PathBuf>,
    /// Box margin in pixels.
    #[arg(long)]
    pub margin: Option<f64>,
    /// Comma-separated subset of lowest, highest, leftmost, rightmost.
    #[arg(long, value_delimiter = ',')]
    pub directions: Vec<RemovalDirection>,
}

#[derive(Debug, Default, Args)]
pub struct TubeArgs {
    /// Detections (JSON lines).
    #[arg(long)]
    pub detections: Option<PathBuf>,
    /// Part-class model carrying regressors.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Maximum simultaneously tracked parts.
    #[arg(long)]
    pub max_parts: Option<usize>,
    /// Frames between tracked keyframes.
    #[arg(long)]
    pub keyframe_stride: Option<u32>,
    /// Tubes extracted per video.
    #[arg(long)]
    pub max_tubes: Option<usize>,
    /// Ignore full-body boxes stored with detections.
    #[arg(long)]
    pub regress_only: bool,
}

#[derive(Debug, Default, Args)]
pub struct ClassifyArgs {
    /// Output of build-tubes.
    #[arg(long)]
    pub tubes: Option<PathBuf>,
    /// Tube features (JSON lines).
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Groundtruth (JSON lines); train-split videos supply labels.
    #[arg(long)]
    pub groundtruth: Option<PathBuf>,
    /// SVM regularization constant.
    #[arg(long)]
    pub c: Option<f64>,
}

#[derive(Debug, Default, Args)]
pub struct EvaluateArgs {
    /// Output of classify.
    #[arg(long)]
    pub scored: Option<PathBuf>,
    /// Groundtruth (JSON lines).
    #[arg(long)]
    pub groundtruth: Option<PathBuf>,
    /// Comma-separated temporal IoU thresholds.
    #[arg(long, value_delimiter = ',')]
    pub taus: Vec<f64>,
    /// Evaluate every groundtruth instance instead of the test split.
    #[arg(long)]
    pub all_splits: bool,
}

#[derive(Debug, Default, Args)]
pub struct AblateArgs {
    /// Directory written by `synth`.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Comma-separated max-parts values.
    #[arg(long, value_delimiter = ',')]
    pub parts: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// A `<command>.manifest.json` written by an earlier run.
    #[arg(long)]
    pub manifest: PathBuf,
}

/// Files written by one invocation, removed again on failure.
struct Outputs {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Outputs {
    fn new(dir: PathBuf) -> Result<Self> {
        std::fs::create_dir_all(&dir)?;
        Ok(Outputs {
            dir,
            written: Vec::new(),
        })
    }

    fn put(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
        let p = self.dir.join(name);
        self.written.push(p.clone());
        std::fs::write(&p, bytes)?;
        Ok(())
    }

    fn put_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.put(name, bytes)
    }

    fn put_jsonl<T: Serialize>(&mut self, name: &str, records: &[T]) -> Result<()> {
        let mut buf = Vec::new();
        for r in records {
            serde_json::to_writer(&mut buf, r)?;
            buf.push(b'\n');
        }
        self.put(name, buf)
    }

    fn cleanup(&self) {
        for p in &self.written {
            let _ = std::fs::remove_file(p);
        }
    }
}

fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

/// Record of one run: what was read, with which settings, and what was
/// written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_sha256: String,
    pub config: RunConfig,
    /// Input path to SHA-256 of its contents; directories list their files.
    pub inputs: BTreeMap<String, String>,
    /// Output file name to SHA-256 of its contents.
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read manifest {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Input files of a run, checked for existence before any work starts.
#[derive(Default)]
struct Inputs(BTreeMap<String, PathBuf>);

impl Inputs {
    /// Resolves an input from its flag or config slot, records the choice
    /// in the slot and checks that the path exists.
    fn resolve(
        &mut self,
        name: &str,
        flag: Option<PathBuf>,
        slot: &mut Option<PathBuf>,
        required: bool,
    ) -> Result<Option<PathBuf>> {
        if flag.is_some() {
            *slot = flag;
        }
        let Some(p) = slot.clone() else {
            if required {
                return Err(Error::Config(format!(
                    "missing --{name} (or paths.{} in the config)",
                    name.replace('-', "_")
                )));
            }
            return Ok(None);
        };
        if !p.exists() {
            return Err(Error::Config(format!("{name} path {} does not exist", p.display())));
        }
        self.0.insert(name.to_string(), p.clone());
        Ok(Some(p))
    }

    fn require(&mut self, name: &str, flag: Option<PathBuf>, slot: &mut Option<PathBuf>) -> Result<PathBuf> {
        Ok(self.resolve(name, flag, slot, true)?.expect("required input"))
    }

    fn digests(&self) -> Result<BTreeMap<String, String>> {
        let mut out = BTreeMap::new();
        for p in self.0.values() {
            if p.is_dir() {
                let mut entries: Vec<PathBuf> = std::fs::read_dir(p)?
                    .map(|e| e.map(|e| e.path()))
                    .collect::<std::io::Result<_>>()?;
                entries.sort();
                for e in entries.into_iter().filter(|e| e.is_file()) {
                    out.insert(e.display().to_string(), sha256_file(&e)?);
                }
            } else {
                out.insert(p.display().to_string(), sha256_file(p)?);
            }
        }
        Ok(out)
    }
}

fn skeleton(path: Option<PathBuf>) -> Result<Skeleton> {
    match path {
        Some(p) => Skeleton::load(&p),
        None => Ok(Skeleton::default_13()),
    }
}

/// Whether an error stems from usage or configuration (exit code 2) rather
/// than from the run itself (exit code 1).
pub fn is_usage_error(e: &Error) -> bool {
    matches!(e, Error::Config(_) | Error::InvalidSpec(_))
}

/// Runs one parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    let (command, mut cfg, expected) = match cli.command {
        Command::Replay(a) => {
            let m = Manifest::load(&a.manifest)?;
            (Command::bare(&m.command)?, m.config, Some(m.inputs))
        }
        c => {
            let cfg = match &cli.config {
                Some(p) => RunConfig::load(p)?,
                None => RunConfig::default(),
            };
            (c, cfg, None)
        }
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let out_dir = cli
        .out
        .clone()
        .or_else(|| cfg.paths.out.clone())
        .ok_or_else(|| Error::Config("missing --out (or paths.out in the config)".into()))?;
    let name = command.name();
    let mut inputs = Inputs::default();
    let job = prepare(command, &mut cfg, &mut inputs)?;
    cfg.validate()?;
    // the output location does not influence any artifact
    cfg.paths.out = None;
    let digests = inputs.digests()?;
    if let Some(expected) = expected {
        if expected != digests {
            return Err(Error::Config("manifest inputs differ from the files on disk".into()));
        }
    }

    let mut outputs = Outputs::new(out_dir)?;
    let result = job(&cfg, &mut outputs).and_then(|()| {
        let mut produced = BTreeMap::new();
        for p in &outputs.written {
            let file = p.file_name().expect("output file").to_string_lossy().to_string();
            produced.insert(file, sha256_file(p)?);
        }
        let manifest = Manifest {
            tool: "tubekit".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: name.into(),
            config_sha256: cfg.sha256(),
            config: cfg.clone(),
            inputs: digests,
            outputs: produced,
        };
        outputs.put_json(&format!("{name}.manifest.json"), &manifest)
    });
    if result.is_err() {
        outputs.cleanup();
    }
    result
}

type Job = Box<dyn FnOnce(&RunConfig, &mut Outputs) -> Result<()>>;

/// Folds flags into the config, resolves inputs and returns the work to do.
fn prepare(command: Command, cfg: &mut RunConfig, inputs: &mut Inputs) -> Result<Job> {
    let paths = &mut cfg.paths;
    Ok(match command {
        Command::Synth(a) => {
            let spec_path = inputs.resolve("spec", a.spec, &mut paths.spec, false)?;
            if let Some(p) = a.preset {
                cfg.preset = p;
            }
            if let Some(n) = a.videos {
                cfg.videos = n;
            }
            Box::new(move |cfg, out| {
                let mut spec = match spec_path {
                    Some(p) => CorpusSpec::load(&p)?,
                    None => presets::by_name(&cfg.preset, cfg.videos, cfg.seed)?,
                };
                spec.seed = cfg.seed;
                spec.k = cfg.k;
                let data = generate(&spec)?;
                // listed before writing so that a failure removes them
                for f in files::ALL {
                    out.written.push(out.dir.join(f));
                }
                data.write(&spec, &out.dir)?;
                log::info!(
                    "generated {} videos, {} detections",
                    spec.scenes.len(),
                    data.detections.len()
                );
                Ok(())
            })
        }
        Command::ClusterParts(a) => {
            let training = inputs.require("training", a.training, &mut paths.training)?;
            let skel = inputs.resolve("skeleton", a.skeleton, &mut paths.skeleton, false)?;
            if let Some(k) = a.k {
                cfg.k = k;
            }
            Box::new(move |cfg, out| {
                let records = load_training(&training)?;
                let descs = part_descriptors(&records, &skeleton(skel)?)?;
                let fit = cluster_parts(&descs, cfg.k, cfg.seed)?;
                let model = PartClassModel::new(fit.centroids.iter().copied().map(PartDescriptor::from).collect())?;
                out.put_json("part_model.json", &model)?;
                out.put_json(
                    "clusters.json",
                    &serde_json::json!({
                        "k": cfg.k,
                        "descriptors": descs.len(),
                        "sse": fit.sse,
                        "iterations": fit.iterations,
                        "converged": fit.converged,
                    }),
                )
            })
        }
        Command::LabelProposals(a) => {
            let training = inputs.require("training", a.training, &mut paths.training)?;
            let model = inputs.require("model", a.model, &mut paths.model)?;
            let skel = inputs.resolve("skeleton", a.skeleton, &mut paths.skeleton, false)?;
            Box::new(move |_, out| {
                let labeled = label_proposals(
                    &load_training(&training)?,
                    &PartClassModel::load(&model)?,
                    &skeleton(skel)?,
                );
                out.put_jsonl("labeled.jsonl", &labeled)
            })
        }
        Command::TrainRegressors(a) => {
            let labeled = inputs.require("labeled", a.labeled, &mut paths.labeled)?;
            let model = inputs.require("model", a.model, &mut paths.model)?;
            if let Some(t) = a.target {
                cfg.target = t;
            }
            if let Some(l) = a.lambda {
                cfg.lambda = l;
            }
            Box::new(move |cfg, out| {
                let records: Vec<LabeledProposal> = read_jsonl(&labeled, |_| Ok(()))?;
                let mut model = PartClassModel::load(&model)?;
                let examples = regression_examples(&records, cfg.target);
                model.regressors = Some(train_regressors(&examples, model.class_count(), cfg.lambda)?);
                out.put_json("regressed_model.json", &model)
            })
        }
        Command::CompletePose(a) => {
            let library = inputs.require("library", a.library, &mut paths.library)?;
            let queries = inputs.require("queries", a.queries, &mut paths.queries)?;
            let skel = inputs.resolve("skeleton", a.skeleton, &mut paths.skeleton, false)?;
            if let Some(m) = a.margin {
                cfg.margin = m;
            }
            Box::new(move |cfg, out| {
                let lib = PoseLibrary::load(&library, skeleton(skel)?)?;
                let queries: Vec<Pose2D> = read_jsonl(&queries, |p: &Pose2D| p.validate())?;
                let mut rows = Vec::with_capacity(queries.len());
                for q in &queries {
                    let r = complete_pose(q, &lib)?;
                    rows.push(serde_json::json!({
                        "index": r.index,
                        "scale": r.scale,
                        "translation": [r.translation.0, r.translation.1],
                        "residual": r.residual,
                        "joints": r.completed.joints,
                        "box": pose_to_box(&r.completed, cfg.margin)?,
                    }));
                }
                out.put_jsonl("completions.jsonl", &rows)
            })
        }
        Command::KeypointAblation(a) => {
            let library = inputs.require("library", a.library, &mut paths.library)?;
            let eval = inputs.require("eval-poses", a.eval_poses, &mut paths.eval_poses)?;
            let skel = inputs.resolve("skeleton", a.skeleton, &mut paths.skeleton, false)?;
            if let Some(m) = a.margin {
                cfg.margin = m;
            }
            if !a.directions.is_empty() {
                cfg.directions = a.directions;
            }
            Box::new(move |cfg, out| {
                let skel = skeleton(skel)?;
                let lib = PoseLibrary::load(&library, skel.clone())?;
                let eval = PoseLibrary::load(&eval, skel)?;
                let mut csv = String::from("direction,visible,mean_iou\n");
                let mut curves = BTreeMap::new();
                for &d in &cfg.directions {
                    let curve = removal_curve(&lib, eval.poses(), d, cfg.margin)?;
                    for p in &curve {
                        csv.push_str(&format!("{},{},{}\n", d.name(), p.visible, p.mean_iou));
                    }
                    curves.insert(d.name(), curve);
                }
                out.put("removal_curve.csv", csv)?;
                out.put_json("removal_curve.json", &curves)
            })
        }
        Command::BuildTubes(a) => {
            let dets = inputs.require("detections", a.detections, &mut paths.detections)?;
            let model = inputs.resolve("model", a.model, &mut paths.model, false)?;
            if let Some(p) = a.max_parts {
                cfg.tracker.max_parts = p;
            }
            if let Some(s) = a.keyframe_stride {
                cfg.tracker.keyframe_stride = s;
            }
            if let Some(t) = a.max_tubes {
                cfg.tracker.max_tubes = t;
            }
            if a.regress_only {
                cfg.tracker.use_stored_fullbody = false;
            }
            Box::new(move |cfg, out| {
                let store = DetectionStore::load(&dets)?;
                let model = model.map(|p| PartClassModel::load(&p)).transpose()?;
                if let Some(m) = &model {
                    if let Some(d) = store.iter().find(|d| d.class >= m.class_count()) {
                        return Err(Error::UnknownClass(d.class));
                    }
                }
                let reg = model.as_ref().and_then(|m| m.regressors.as_ref());
                let tubes = build_all(&store, reg, &cfg.tracker)?;
                out.put_jsonl("tubes.jsonl", &tube_records(&tubes))
            })
        }
        Command::Classify(a) => {
            let tubes = inputs.require("tubes", a.tubes, &mut paths.tubes)?;
            let features = inputs.require("features", a.features, &mut paths.features)?;
            let gt = inputs.require("groundtruth", a.groundtruth, &mut paths.groundtruth)?;
            if let Some(c) = a.c {
                cfg.c = c;
            }
            Box::new(move |cfg, out| {
                let scored = classify(
                    &load_tubes(&tubes)?,
                    &load_features(&features)?,
                    &load_groundtruth(&gt)?,
                    cfg.positive_tiou,
                    cfg.c,
                )?;
                out.put_jsonl("scored.jsonl", &scored)
            })
        }
        Command::Evaluate(a) => {
            let scored = inputs.require("scored", a.scored, &mut paths.scored)?;
            let gt = inputs.require("groundtruth", a.groundtruth, &mut paths.groundtruth)?;
            if !a.taus.is_empty() {
                cfg.taus = a.taus;
            }
            if a.all_splits {
                cfg.all_splits = true;
            }
            Box::new(move |cfg, out| {
                let tubes: Vec<ScoredTube> = read_jsonl(&scored, |t: &ScoredTube| t.tube.validate())?;
                let gts: Vec<_> = load_groundtruth(&gt)?
                    .into_iter()
                    .filter(|g| cfg.all_splits || g.split == Split::Test)
                    .collect();
                let metrics = Metrics::compute(&tubes, &gts, &cfg.taus)?;
                out.put_json("metrics.json", &metrics)?;
                out.put("metrics.txt", metrics.to_text())?;
                for r in &metrics.reports {
                    for class in r.per_class.keys() {
                        out.put(
                            &format!("pr_{class}_{}.csv", r.tau),
                            pr_csv(&tubes, &gts, class, r.tau)?,
                        )?;
                    }
                }
                print!("{}", metrics.to_text());
                Ok(())
            })
        }
        Command::Ablate(a) => {
            let dir = inputs.require("corpus", a.corpus, &mut paths.corpus)?;
            if !a.parts.is_empty() {
                cfg.parts_list = a.parts;
            }
            Box::new(move |cfg, out| {
                let mut corpus = Corpus::load(&dir)?;
                corpus.lambda = cfg.lambda;
                corpus.c = cfg.c;
                corpus.positive_tiou = cfg.positive_tiou;
                let parts = ablate_parts(&corpus, &cfg.tracker, &cfg.parts_list)?;
                let target = ablate_target(&corpus, &cfg.tracker)?;
                out.put_json("ablation_parts.json", &parts)?;
                out.put("ablation_parts.txt", parts.to_text())?;
                out.put_json("ablation_target.json", &target)?;
                out.put("ablation_target.txt", target.to_text())?;
                print!("{}\n{}", parts.to_text(), target.to_text());
                Ok(())
            })
        }
        Command::Replay(_) => return Err(Error::Config("a manifest cannot replay `replay`".into())),
    })
}

/// Parses arguments, runs, and maps the outcome to an exit code: 0 on
/// success, 1 on a runtime failure, 2 on a usage or configuration error.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if is_usage_error(&e) {
                2
            } else {
                1
            }
        }
    }
}
