//! Experiment configuration, orchestration and run-directory artifacts.
//!
//! A run directory holds:
//!
//! ```text
//! manifest.json        config snapshot, version, timestamps, file checksums
//! history.csv          one row per (epoch, evaluated task)
//! matrix.csv           R with the untrained row on top
//! layer_usage.csv      used / total weights per maskable layer per dataset
//! metrics.json         ACC, BWT, FWT, used parameters
//! checkpoints/         dataset_{d}.aclk after every finished dataset
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{train_ewc, train_packnet_star, train_sgd_naive, train_sml_models};
use crate::data::mnist::{self, MnistPreset};
use crate::data::{synthetic_sequence, Shift, TaskSequence};
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::nn::{checkpoint, ModelKind, Network};
use crate::rng::DEFAULT_SEED;
use crate::trainer::{history_csv, run_sequence, AdaptCl, EpochRecord, SequenceObserver, SequenceRunState, StepAt, TrainConfig};

pub const SYNTHETIC_TASKS: usize = 3;
pub const SYNTHETIC_PER_CLASS: usize = 100;
pub const SYNTHETIC_CLASSES: usize = 10;
pub const DEFAULT_LAMBDA: f32 = 1.0;
pub const DEFAULT_FISHER_SAMPLES: usize = 200;
pub const DEFAULT_PRUNE_FRACTION: f64 = 1.0 / 3.0;
pub const DEFAULT_RETRAIN_EPOCHS: usize = 10;

pub const MANIFEST: &str = "manifest.json";
pub const HISTORY: &str = "history.csv";
pub const MATRIX: &str = "matrix.csv";
pub const LAYER_USAGE: &str = "layer_usage.csv";
pub const METRICS: &str = "metrics.json";
pub const CHECKPOINTS: &str = "checkpoints";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    Adaptcl,
    Sgd,
    Ewc,
    PacknetStar,
    Sml,
}

impl MethodKind {
    pub const ALL: [MethodKind; 5] =
        [MethodKind::Adaptcl, MethodKind::Sgd, MethodKind::Ewc, MethodKind::PacknetStar, MethodKind::Sml];

    pub fn name(self) -> &'static str {
        match self {
            MethodKind::Adaptcl => "adaptcl",
            MethodKind::Sgd => "sgd",
            MethodKind::Ewc => "ewc",
            MethodKind::PacknetStar => "packnet_star",
            MethodKind::Sml => "sml",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("method: unknown value `{s}`; expected adaptcl, sgd, ewc, packnet_star or sml")))
    }
}

/// The config file exactly as written. Missing optional keys fall back to
/// documented defaults; unknown keys are an error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub method: MethodKind,
    /// `mnist_strong`, `mnist_mild`, `synthetic_strong` or `synthetic_mild`.
    pub sequence: Option<String>,
    /// Explicit MNIST domain list, instead of `sequence`.
    pub tasks: Option<Vec<String>>,
    pub model: ModelKind,
    pub output_dir: PathBuf,
    pub seed: Option<u64>,
    pub learning_rate: Option<f32>,
    pub momentum: Option<f32>,
    pub nesterov: Option<bool>,
    pub epochs_per_dataset: Option<usize>,
    pub batch_size: Option<usize>,
    pub alpha: Option<f32>,
    pub lambda: Option<f32>,
    pub fisher_samples: Option<usize>,
    pub prune_fraction: Option<f64>,
    pub retrain_epochs: Option<usize>,
    pub synthetic_tasks: Option<usize>,
    pub samples_per_class: Option<usize>,
    pub shared_stats: Option<bool>,
    pub fwt_skip_last: Option<bool>,
    pub data_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MethodConfig {
    /// `None` picks α from the iterations × α ≈ 1 rule.
    AdaptCl { alpha: Option<f32> },
    Sgd,
    Ewc { lambda: f32, fisher_samples: usize },
    PackNetStar { prune_fraction: f64, retrain_epochs: usize },
    Sml,
}

impl MethodConfig {
    pub fn kind(&self) -> MethodKind {
        match self {
            MethodConfig::AdaptCl { .. } => MethodKind::Adaptcl,
            MethodConfig::Sgd => MethodKind::Sgd,
            MethodConfig::Ewc { .. } => MethodKind::Ewc,
            MethodConfig::PackNetStar { .. } => MethodKind::PacknetStar,
            MethodConfig::Sml => MethodKind::Sml,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SequenceSpec {
    Synthetic { shift: Shift, tasks: usize, per_class: usize },
    Mnist(MnistPreset),
    MnistTasks(Vec<String>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Snapshot of the file after command-line overrides.
    pub file: ConfigFile,
    pub method: MethodConfig,
    pub sequence: SequenceSpec,
    pub model: ModelKind,
    pub train: TrainConfig,
    pub output_dir: PathBuf,
    pub shared_stats: bool,
    pub fwt_skip_last: bool,
    pub data_dir: Option<PathBuf>,
}

fn reject(key: &str, value: bool, method: MethodKind) -> Result<()> {
    if value {
        return Err(Error::Config(format!("{key}: not a setting of method {}", method.name())));
    }
    Ok(())
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Validates every field and fills defaults.
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let m = self.method;
        let not_for = |key: &str, set: bool, owner: MethodKind| if m == owner { Ok(()) } else { reject(key, set, m) };
        not_for("alpha", self.alpha.is_some(), MethodKind::Adaptcl)?;
        not_for("lambda", self.lambda.is_some(), MethodKind::Ewc)?;
        not_for("fisher_samples", self.fisher_samples.is_some(), MethodKind::Ewc)?;
        not_for("prune_fraction", self.prune_fraction.is_some(), MethodKind::PacknetStar)?;
        not_for("retrain_epochs", self.retrain_epochs.is_some(), MethodKind::PacknetStar)?;

        let seed = self.seed.unwrap_or(DEFAULT_SEED);
        let defaults = TrainConfig::default();
        let train = TrainConfig {
            alpha: 0.0,
            learning_rate: self.learning_rate.unwrap_or(defaults.learning_rate),
            momentum: self.momentum.unwrap_or(defaults.momentum),
            nesterov: self.nesterov.unwrap_or(defaults.nesterov),
            epochs_per_dataset: self.epochs_per_dataset.unwrap_or(defaults.epochs_per_dataset),
            batch_size: self.batch_size.unwrap_or(defaults.batch_size),
            seed,
        };
        train.validate()?;

        let method = match m {
            MethodKind::Adaptcl => {
                if let Some(a) = self.alpha {
                    if !(a >= 0.0 && a.is_finite()) {
                        return Err(Error::Config(format!("alpha: must be a finite non-negative number, got {a}")));
                    }
                }
                MethodConfig::AdaptCl { alpha: self.alpha }
            }
            MethodKind::Sgd => MethodConfig::Sgd,
            MethodKind::Ewc => {
                let lambda = self.lambda.unwrap_or(DEFAULT_LAMBDA);
                if !(lambda >= 0.0 && lambda.is_finite()) {
                    return Err(Error::Config(format!("lambda: must be a finite non-negative number, got {lambda}")));
                }
                let fisher_samples = self.fisher_samples.unwrap_or(DEFAULT_FISHER_SAMPLES);
                if fisher_samples == 0 {
                    return Err(Error::Config("fisher_samples: must be positive".into()));
                }
                MethodConfig::Ewc { lambda, fisher_samples }
            }
            MethodKind::PacknetStar => {
                let prune_fraction = self.prune_fraction.unwrap_or(DEFAULT_PRUNE_FRACTION);
                let retrain_epochs = self.retrain_epochs.unwrap_or(DEFAULT_RETRAIN_EPOCHS);
                crate::baselines::PackNetStar::new(prune_fraction, retrain_epochs, train.epochs_per_dataset)?;
                MethodConfig::PackNetStar { prune_fraction, retrain_epochs }
            }
            MethodKind::Sml => MethodConfig::Sml,
        };

        let sequence = match (&self.sequence, &self.tasks) {
            (Some(_), Some(_)) => return Err(Error::Config("sequence: give either `sequence` or `tasks`, not both".into())),
            (None, None) => return Err(Error::Config("sequence: missing; set `sequence` or `tasks`".into())),
            (None, Some(list)) => {
                if list.is_empty() {
                    return Err(Error::Config("tasks: list is empty".into()));
                }
                for t in list {
                    mnist::mnist_domain(t, seed).map_err(|e| Error::Config(format!("tasks: {e}")))?;
                }
                SequenceSpec::MnistTasks(list.clone())
            }
            (Some(name), None) => {
                let synthetic = |shift| SequenceSpec::Synthetic {
                    shift,
                    tasks: self.synthetic_tasks.unwrap_or(SYNTHETIC_TASKS),
                    per_class: self.samples_per_class.unwrap_or(SYNTHETIC_PER_CLASS),
                };
                match name.as_str() {
                    "synthetic_strong" => synthetic(Shift::Strong),
                    "synthetic_mild" => synthetic(Shift::Mild),
                    "mnist_strong" => SequenceSpec::Mnist(MnistPreset::Strong),
                    "mnist_mild" => SequenceSpec::Mnist(MnistPreset::Mild),
                    other => {
                        return Err(Error::Config(format!(
                            "sequence: unknown preset `{other}`; expected mnist_strong, mnist_mild, synthetic_strong or synthetic_mild"
                        )))
                    }
                }
            }
        };
        match &sequence {
            SequenceSpec::Synthetic { tasks, per_class, .. } => {
                if *tasks == 0 || *per_class == 0 {
                    return Err(Error::Config("synthetic_tasks / samples_per_class: must be positive".into()));
                }
                reject_for_sequence("shared_stats", self.shared_stats.is_some())?;
                reject_for_sequence("data_dir", self.data_dir.is_some())?;
            }
            _ => {
                reject_for_sequence("synthetic_tasks", self.synthetic_tasks.is_some())?;
                reject_for_sequence("samples_per_class", self.samples_per_class.is_some())?;
            }
        }

        Ok(ExperimentConfig {
            file: self.clone(),
            method,
            sequence,
            model: self.model,
            train,
            output_dir: self.output_dir.clone(),
            shared_stats: self.shared_stats.unwrap_or(false),
            fwt_skip_last: self.fwt_skip_last.unwrap_or(false),
            data_dir: self.data_dir.clone(),
        })
    }
}

fn reject_for_sequence(key: &str, set: bool) -> Result<()> {
    if set {
        return Err(Error::Config(format!("{key}: not a setting of this sequence")));
    }
    Ok(())
}

/// Loads a config file and applies command-line overrides.
/// Maps a bare preset name such as `synthetic_strong_adaptcl` to
/// `configs/<name>.toml`, looked up in the working directory first and then
/// in the presets shipped with the source tree. Existing paths pass through.
pub fn find_config(arg: &Path) -> PathBuf {
    if arg.is_file() || arg.extension().is_some() || arg.components().count() != 1 {
        return arg.to_path_buf();
    }
    let file = arg.with_extension("toml");
    let shipped = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    [PathBuf::from("configs"), shipped]
        .iter()
        .map(|dir| dir.join(&file))
        .find(|p| p.is_file())
        .unwrap_or_else(|| arg.to_path_buf())
}

pub fn load_config(path: &Path, method: Option<MethodKind>, seed: Option<u64>) -> Result<ExperimentConfig> {
    let path = find_config(path);
    let mut file = ConfigFile::load(&path)?;
    if let Some(m) = method {
        file.method = m;
    }
    if let Some(s) = seed {
        file.seed = Some(s);
    }
    file.resolve().map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

impl ExperimentConfig {
    pub fn load_sequence(&self) -> Result<TaskSequence> {
        let seed = self.train.seed;
        let dir = || match &self.data_dir {
            Some(d) => Ok(d.clone()),
            None => mnist::data_dir(),
        };
        match &self.sequence {
            SequenceSpec::Synthetic { shift, tasks, per_class } => {
                synthetic_sequence(*tasks, *per_class, SYNTHETIC_CLASSES, *shift, seed)
            }
            SequenceSpec::Mnist(preset) => mnist::mnist_sequence(&dir()?, *preset, seed, self.shared_stats),
            SequenceSpec::MnistTasks(names) => {
                let domains = names
                    .iter()
                    .map(|n| Ok((n.as_str(), mnist::mnist_domain(n, seed)?)))
                    .collect::<Result<Vec<_>>>()?;
                mnist::mnist_domains(&dir()?, "mnist_custom", domains, self.shared_stats)
            }
        }
    }

    pub fn build_network(&self, tasks: &TaskSequence) -> Result<Network> {
        let (shape, classes) = tasks.validate()?;
        self.model.build(&shape, classes, self.train.seed)
    }

    /// The α actually used: the configured value, or `1 / (samples × epochs)`
    /// over the first dataset.
    pub fn effective_alpha(&self, tasks: &TaskSequence) -> Option<f32> {
        match self.method {
            MethodConfig::AdaptCl { alpha: Some(a) } => Some(a),
            MethodConfig::AdaptCl { alpha: None } => {
                let n = tasks.tasks.first().map_or(0, |t| t.train.len());
                Some(TrainConfig::budget_alpha(n, self.train.epochs_per_dataset))
            }
            _ => None,
        }
    }
}

/// Checkpoint after every dataset, then any extra observer.
struct RunObserver<'a> {
    checkpoints: PathBuf,
    inner: Option<&'a mut dyn SequenceObserver>,
}

impl SequenceObserver for RunObserver<'_> {
    fn on_step(&mut self, net: &mut Network, at: StepAt) -> Result<()> {
        match self.inner.as_mut() {
            Some(o) => o.on_step(net, at),
            None => Ok(()),
        }
    }

    fn on_epoch(&mut self, record: &EpochRecord) {
        if let Some(o) = self.inner.as_mut() {
            o.on_epoch(record);
        }
    }

    fn on_dataset_end(&mut self, net: &Network, dataset: usize) -> Result<()> {
        checkpoint::save(net, &self.checkpoints.join(format!("dataset_{dataset}.aclk")))?;
        match self.inner.as_mut() {
            Some(o) => o.on_dataset_end(net, dataset),
            None => Ok(()),
        }
    }
}

/// Trains the configured method over `tasks`. No files are written.
pub fn train_method(
    cfg: &ExperimentConfig,
    tasks: &TaskSequence,
    observer: &mut dyn SequenceObserver,
) -> Result<(SequenceRunState, Vec<Network>)> {
    let net = cfg.build_network(tasks)?;
    let mut train = cfg.train;
    let state = match &cfg.method {
        MethodConfig::AdaptCl { .. } => {
            let alpha = cfg.effective_alpha(tasks).expect("adaptcl has an alpha");
            train.alpha = alpha;
            run_sequence(net, tasks, &train, &mut AdaptCl { alpha }, observer)?
        }
        MethodConfig::Sgd => train_sgd_naive(net, tasks, &train, observer)?,
        MethodConfig::Ewc { lambda, fisher_samples } => {
            train_ewc(net, tasks, &train, *lambda, *fisher_samples, observer)?
        }
        MethodConfig::PackNetStar { prune_fraction, retrain_epochs } => {
            train_packnet_star(net, tasks, &train, *prune_fraction, *retrain_epochs, observer)?
        }
        MethodConfig::Sml => {
            let build = || cfg.build_network(tasks);
            return train_sml_models(&build, tasks, &train);
        }
    };
    Ok((state, Vec::new()))
}

/// Metrics of a finished run. SML has no transfer between its models, so
/// BWT and FWT are reported as absent.
pub fn report(cfg: &ExperimentConfig, tasks: &TaskSequence, state: &SequenceRunState) -> MetricsReport {
    let used = state.used_params.last().copied().unwrap_or(0);
    let kind = cfg.method.kind();
    let mut r = MetricsReport::from_matrix(&state.matrix, used, kind.name(), &tasks.name, cfg.train.seed, cfg.fwt_skip_last);
    if kind == MethodKind::Sml {
        r.bwt = None;
        r.fwt = None;
    }
    r
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub status: String,
    pub config: ConfigFile,
    pub sequence: Option<String>,
    pub alpha: Option<f32>,
    pub tasks: Vec<TaskInfo>,
    pub started_at: String,
    pub finished_at: Option<String>,
    pub error: Option<String>,
    pub files: Vec<FileEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInfo {
    pub name: String,
    pub train_samples: usize,
    pub test_samples: usize,
    pub provenance: Vec<String>,
}

/// Crate version, with the commit when the build environment exposes one.
pub fn code_version() -> String {
    match option_env!("ADAPTCL_GIT_DESCRIBE") {
        Some(d) => format!("{} ({d})", env!("CARGO_PKG_VERSION")),
        None => env!("CARGO_PKG_VERSION").to_string(),
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_manifest(dir: &Path, m: &RunManifest) -> Result<()> {
    let text = serde_json::to_string_pretty(m).map_err(|e| Error::State(format!("manifest: {e}")))?;
    write(&dir.join(MANIFEST), text + "\n")
}

/// Every file under `dir` except the manifest, sorted by relative path.
pub fn inventory(dir: &Path) -> Result<Vec<FileEntry>> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<FileEntry>) -> Result<()> {
        for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.is_dir() {
                walk(root, &path, out)?;
                continue;
            }
            let rel = path.strip_prefix(root).expect("under root").to_string_lossy().replace('\\', "/");
            if rel == MANIFEST {
                continue;
            }
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let sha256 = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
            out.push(FileEntry { path: rel, bytes: bytes.len() as u64, sha256 });
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out)?;
    out.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(out)
}

pub fn layer_usage_csv(usage: &[Vec<(usize, usize, usize)>]) -> String {
    let mut out = String::from("dataset_idx,layer,used,total\n");
    for (d, layers) in usage.iter().enumerate() {
        for (layer, used, total) in layers {
            out.push_str(&format!("{d},{layer},{used},{total}\n"));
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub metrics: MetricsReport,
    pub state: SequenceRunState,
}

/// Executes a configured run and writes its directory. The manifest is
/// written first with status `running` and rewritten at the end.
pub fn run_experiment(cfg: &ExperimentConfig, extra: Option<&mut dyn SequenceObserver>) -> Result<RunOutcome> {
    let dir = cfg.output_dir.clone();
    let ckpt = dir.join(CHECKPOINTS);
    fs::create_dir_all(&ckpt).map_err(|e| Error::io(&ckpt, e))?;
    let mut manifest = RunManifest {
        version: code_version(),
        status: "running".into(),
        config: cfg.file.clone(),
        sequence: None,
        alpha: None,
        tasks: Vec::new(),
        started_at: now(),
        finished_at: None,
        error: None,
        files: Vec::new(),
    };
    write_manifest(&dir, &manifest)?;

    let result: Result<RunOutcome> = (|| {
        let tasks = cfg.load_sequence()?;
        manifest.sequence = Some(tasks.name.clone());
        manifest.alpha = cfg.effective_alpha(&tasks);
        manifest.tasks = tasks
            .tasks
            .iter()
            .map(|t| TaskInfo {
                name: t.name.clone(),
                train_samples: t.train.len(),
                test_samples: t.test.len(),
                provenance: t.provenance.clone(),
            })
            .collect();
        write_manifest(&dir, &manifest)?;
        log::info!("{} on {} ({} tasks) -> {}", cfg.method.kind().name(), tasks.name, tasks.len(), dir.display());

        let mut observer = RunObserver { checkpoints: ckpt.clone(), inner: extra };
        let (state, models) = train_method(cfg, &tasks, &mut observer)?;
        for (d, net) in models.iter().enumerate() {
            checkpoint::save(net, &ckpt.join(format!("dataset_{d}.aclk")))?;
        }
        let metrics = report(cfg, &tasks, &state);
        write(&dir.join(HISTORY), history_csv(&state.history, cfg.method.kind().name()))?;
        write(&dir.join(MATRIX), state.matrix.to_csv())?;
        write(&dir.join(LAYER_USAGE), layer_usage_csv(&state.layer_usage))?;
        let json = serde_json::to_string_pretty(&metrics).map_err(|e| Error::State(format!("metrics: {e}")))?;
        write(&dir.join(METRICS), json + "\n")?;
        Ok(RunOutcome { dir: dir.clone(), metrics, state })
    })();

    manifest.finished_at = Some(now());
    match &result {
        Ok(_) => manifest.status = "complete".into(),
        Err(e) => {
            manifest.status = "failed".into();
            manifest.error = Some(e.to_string());
        }
    }
    manifest.files = inventory(&dir)?;
    write_manifest(&dir, &manifest)?;
    result
}

pub const COMPARE_HEADER: [&str; 7] = ["method", "sequence", "seed", "acc", "bwt", "fwt", "used_params"];

/// One row per run directory with a readable `metrics.json`. Directories
/// without one are skipped and named in the returned warnings; it is an
/// error if every directory is skipped.
pub fn compare_runs(dirs: &[PathBuf]) -> Result<(String, Vec<String>)> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(COMPARE_HEADER).map_err(|e| Error::State(format!("csv: {e}")))?;
    let mut warnings = Vec::new();
    let mut rows = 0;
    let fmt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.2}"));
    for dir in dirs {
        let path = dir.join(METRICS);
        let parsed = fs::read_to_string(&path)
            .map_err(|e| e.to_string())
            .and_then(|t| serde_json::from_str::<MetricsReport>(&t).map_err(|e| e.to_string()));
        let m = match parsed {
            Ok(m) => m,
            Err(e) => {
                warnings.push(format!("skipping {}: {e}", path.display()));
                continue;
            }
        };
        w.write_record([
            m.method.clone(),
            m.sequence.clone(),
            m.seed.to_string(),
            fmt(Some(m.acc)),
            fmt(m.bwt),
            fmt(m.fwt),
            m.used_params.to_string(),
        ])
        .map_err(|e| Error::State(format!("csv: {e}")))?;
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Input(format!("no completed runs among {} directories", dirs.len())));
    }
    let bytes = w.into_inner().map_err(|e| Error::State(format!("csv: {e}")))?;
    Ok((String::from_utf8(bytes).expect("csv output is utf-8"), warnings))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "method = \"adaptcl\"\nsequence = \"synthetic_strong\"\nmodel = \"toy_cnn\"\noutput_dir = \"out\"\n";

    #[test]
    fn preset_names_resolve_to_shipped_files() {
        let p = find_config(Path::new("synthetic_strong_adaptcl"));
        assert!(p.is_file() && p.ends_with("configs/synthetic_strong_adaptcl.toml"), "{}", p.display());
        assert_eq!(find_config(Path::new("nope.toml")), PathBuf::from("nope.toml"));
        assert_eq!(find_config(Path::new("no_such_preset")), PathBuf::from("no_such_preset"));
    }

    #[test]
    fn defaults_fill_in() {
        let cfg = ConfigFile::parse(MINIMAL).unwrap().resolve().unwrap();
        assert_eq!(cfg.train.seed, 5);
        assert_eq!(cfg.method, MethodConfig::AdaptCl { alpha: None });
        assert_eq!(
            cfg.sequence,
            SequenceSpec::Synthetic { shift: Shift::Strong, tasks: SYNTHETIC_TASKS, per_class: SYNTHETIC_PER_CLASS }
        );
        assert!(!cfg.fwt_skip_last);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = ConfigFile::parse(&format!("{MINIMAL}learning_rat = 0.1\n")).unwrap_err();
        assert!(err.to_string().contains("learning_rat"), "{err}");
    }

    #[test]
    fn method_keys_are_exclusive() {
        for (method, key) in [("sgd", "alpha = 0.1"), ("adaptcl", "lambda = 1.0"), ("ewc", "prune_fraction = 0.5"), ("sml", "retrain_epochs = 2")] {
            let text = MINIMAL.replace("adaptcl", method) + key + "\n";
            let err = ConfigFile::parse(&text).unwrap().resolve().unwrap_err();
            let name = key.split(' ').next().unwrap();
            assert!(matches!(&err, Error::Config(m) if m.starts_with(name)), "{err}");
        }
        let ok = MINIMAL.replace("adaptcl", "packnet_star") + "prune_fraction = 0.5\nretrain_epochs = 2\n";
        assert!(ConfigFile::parse(&ok).unwrap().resolve().is_ok());
    }

    #[test]
    fn bad_values_rejected() {
        let cases = [
            MINIMAL.replace("synthetic_strong", "cifar"),
            MINIMAL.to_string() + "learning_rate = -1.0\n",
            MINIMAL.to_string() + "tasks = [\"mnist\"]\n",
            MINIMAL.replace("sequence = \"synthetic_strong\"", "tasks = [\"svhn\"]"),
            MINIMAL.replace("adaptcl", "packnet_star") + "retrain_epochs = 20\n",
            MINIMAL.to_string() + "shared_stats = true\n",
        ];
        for text in cases {
            assert!(ConfigFile::parse(&text).and_then(|c| c.resolve()).is_err(), "{text}");
        }
        assert!(ConfigFile::parse("method = \"adaptcl\"\n").is_err());
    }

    #[test]
    fn method_names_round_trip() {
        for m in MethodKind::ALL {
            assert_eq!(MethodKind::parse(m.name()).unwrap(), m);
        }
        assert!(MethodKind::parse("hat").is_err());
    }

    #[test]
    fn compare_skips_missing_and_fails_when_empty() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        fs::create_dir_all(&a).unwrap();
        fs::create_dir_all(&b).unwrap();
        let m = MetricsReport { acc: 90.0, bwt: None, fwt: Some(1.234), used_params: 7, method: "sml".into(), sequence: "s".into(), seed: 5 };
        fs::write(a.join(METRICS), serde_json::to_string(&m).unwrap()).unwrap();
        let (csv, warnings) = compare_runs(&[a, b.clone()]).unwrap();
        assert_eq!(csv, "method,sequence,seed,acc,bwt,fwt,used_params\nsml,s,5,90.00,,1.23,7\n");
        assert_eq!(warnings.len(), 1);
        assert!(compare_runs(&[b]).is_err());
    }
}
