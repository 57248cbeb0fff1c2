//! Command-line front end.
//!
//! Every command reads one TOML run configuration (built-in defaults when
//! `--config` is absent), applies flag overrides, validates the result, and
//! writes its outputs atomically under `--out` together with a `config.toml`
//! snapshot of the effective configuration.
//!
//! Exit codes: 0 success, 1 I/O or parse failure, 2 validation failure,
//! 3 training divergence.

use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::dataset::{dataset_stats, load_dataset, load_detections, save_dataset, save_detections, DatasetError};
use crate::evaluation::{
    auc, curve_to_csv, curve_to_svg, group_detections, pr_sweep, CurveMeta, EvalError, EvalParams,
    PrCurve, RecallAxis,
};
use crate::io::write_atomic;
use crate::losses::LossMode;
use crate::synthbench::{
    gen_dataset, predict_dataset, run_experiment, train, AnchorGrid, BenchmarkSize, FeatureStore,
    GridConfig, ModelWeights, SceneGenConfig, SynthError, TrainConfig, TrainingSet,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentArms {
    pub n_train: usize,
    pub n_test: usize,
    pub baseline: LossMode,
    pub treatment: LossMode,
}

impl Default for ExperimentArms {
    fn default() -> Self {
        let size = BenchmarkSize::default();
        Self {
            n_train: size.n_train,
            n_test: size.n_test,
            baseline: LossMode::Fl,
            treatment: LossMode::Ssfl,
        }
    }
}

/// Input locations. Relative paths resolve against the working directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    /// Directory holding the output of `gen-synth`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detections: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scene: SceneGenConfig,
    pub grid: GridConfig,
    pub train: TrainConfig,
    pub eval: EvalParams,
    pub benchmark: ExperimentArms,
    pub paths: PathsConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| CliError::Parse(format!("config: {e}")))?;
        let cfg: RunConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Validation(format!("config: {e}")))?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.scene.validate()?;
        self.train.validate()?;
        AnchorGrid::new(self.scene.width, self.scene.height, &self.grid)?;
        self.eval
            .validate()
            .map_err(|m| CliError::Validation(format!("eval: {m}")))?;
        if self.benchmark.n_train == 0 || self.benchmark.n_test == 0 {
            return Err(CliError::Validation("benchmark: n_train and n_test must be positive".into()));
        }
        Ok(())
    }

    fn train_config(&self, mode: LossMode) -> TrainConfig {
        TrainConfig {
            loss_mode: mode,
            ..self.train.clone()
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    Io(String),
    Parse(String),
    Validation(String),
    Diverged(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) | CliError::Parse(_) => EXIT_IO,
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Diverged(_) => EXIT_DIVERGED,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Io(m) | CliError::Parse(m) | CliError::Validation(m) | CliError::Diverged(m) => {
                f.write_str(m)
            }
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Io { .. } => CliError::Io(e.to_string()),
            DatasetError::Parse(_) => CliError::Parse(e.to_string()),
            DatasetError::Validation(ref issues) => CliError::Validation(
                issues
                    .iter()
                    .map(ToString::to_string)
                    .collect::<Vec<_>>()
                    .join("\n"),
            ),
            DatasetError::Schema(_) => CliError::Validation(e.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Io { .. } => CliError::Io(e.to_string()),
            SynthError::Features(_) => CliError::Parse(e.to_string()),
            SynthError::DivergedLoss { .. } | SynthError::Loss(_) => CliError::Diverged(e.to_string()),
            SynthError::Eval(inner) => inner.into(),
            SynthError::Config(_) | SynthError::NoPositives => CliError::Validation(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "salsign", version, about = "Salience-aware traffic sign detection toolkit")]
struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides both the scene seed and the training seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Suppress reports on stdout.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Fl,
    Ssfl,
}

impl From<ModeArg> for LossMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Fl => LossMode::Fl,
            ModeArg::Ssfl => LossMode::Ssfl,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Test,
}

impl Split {
    fn stem(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate an annotation file and print its salience statistics.
    Validate { dataset: PathBuf },
    /// Generate the synthetic train and test splits with feature sidecars.
    GenSynth,
    /// Train the anchor scorer on a generated training split.
    Train {
        /// Directory written by gen-synth.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
    /// Score a generated split with a trained model.
    Detect {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
    },
    /// Sweep precision and recall for a detections file.
    Eval {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        detections: Option<PathBuf>,
    },
    /// Train and evaluate both arms on one generated benchmark.
    Experiment {
        #[arg(long, value_enum)]
        baseline: Option<ModeArg>,
        #[arg(long, value_enum)]
        treatment: Option<ModeArg>,
    },
}

/// Trained scorer plus the settings it was trained under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub loss_mode: LossMode,
    pub alpha_ss: f64,
    pub seed: u64,
    pub model: ModelWeights,
    pub loss_trace: Vec<f64>,
}

/// Parses `args` (program name first), runs the command, and returns the
/// process exit code.
pub fn run<I: IntoIterator<Item = String>>(args: I) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Io(format!("i/o error on {}: {e}", p.display())))?;
            RunConfig::from_toml_str(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.scene.seed = seed;
        cfg.train.seed = seed;
    }
    Ok(cfg)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    write_atomic(path, bytes).map_err(|e| CliError::Io(format!("i/o error on {}: {e}", path.display())))
}

fn prepare_out(out: &Path, cfg: &RunConfig) -> Result<(), CliError> {
    std::fs::create_dir_all(out)
        .map_err(|e| CliError::Io(format!("i/o error on {}: {e}", out.display())))?;
    write_file(&out.join("config.toml"), cfg.to_toml_string().as_bytes())
}

fn json_bytes<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("value serializes");
    s.push('\n');
    s.into_bytes()
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    if let Command::Validate { dataset } = &cli.command {
        return cmd_validate(dataset, cli.quiet);
    }
    let mut cfg = load_config(cli)?;
    match &cli.command {
        Command::Validate { .. } => unreachable!(),
        Command::GenSynth => {
            cfg.validate()?;
            prepare_out(&cli.out, &cfg)?;
            cmd_gen(&cfg, &cli.out, cli.quiet)
        }
        Command::Train { data, mode } => {
            if let Some(m) = mode {
                cfg.train.loss_mode = (*m).into();
            }
            if let Some(d) = data {
                cfg.paths.data_dir = Some(d.clone());
            }
            cfg.validate()?;
            prepare_out(&cli.out, &cfg)?;
            cmd_train(&cfg, &cli.out, cli.quiet)
        }
        Command::Detect { model, data, split } => {
            if let Some(m) = model {
                cfg.paths.model = Some(m.clone());
            }
            if let Some(d) = data {
                cfg.paths.data_dir = Some(d.clone());
            }
            cfg.validate()?;
            prepare_out(&cli.out, &cfg)?;
            cmd_detect(&cfg, &cli.out, *split, cli.quiet)
        }
        Command::Eval { dataset, detections } => {
            if let Some(d) = dataset {
                cfg.paths.dataset = Some(d.clone());
            }
            if let Some(d) = detections {
                cfg.paths.detections = Some(d.clone());
            }
            cfg.validate()?;
            prepare_out(&cli.out, &cfg)?;
            cmd_eval(&cfg, &cli.out, cli.quiet)
        }
        Command::Experiment { baseline, treatment } => {
            if let Some(m) = baseline {
                cfg.benchmark.baseline = (*m).into();
            }
            if let Some(m) = treatment {
                cfg.benchmark.treatment = (*m).into();
            }
            cfg.validate()?;
            prepare_out(&cli.out, &cfg)?;
            cmd_experiment(&cfg, &cli.out, cli.quiet)
        }
    }
}

fn cmd_validate(path: &Path, quiet: bool) -> Result<(), CliError> {
    let ds = load_dataset(path)?;
    if !quiet {
        print!("{}", dataset_stats(&ds));
    }
    Ok(())
}

fn data_dir(cfg: &RunConfig, out: &Path) -> PathBuf {
    cfg.paths.data_dir.clone().unwrap_or_else(|| out.to_path_buf())
}

fn grid_for(cfg: &RunConfig) -> Result<AnchorGrid, CliError> {
    Ok(AnchorGrid::new(cfg.scene.width, cfg.scene.height, &cfg.grid)?)
}

fn load_split(dir: &Path, split: Split) -> Result<(crate::dataset::Dataset, FeatureStore), CliError> {
    let ds = load_dataset(dir.join(format!("{}.json", split.stem())))?;
    let store = FeatureStore::load(dir.join(format!("{}.features.bin", split.stem())))?;
    Ok((ds, store))
}

fn cmd_gen(cfg: &RunConfig, out: &Path, quiet: bool) -> Result<(), CliError> {
    let grid = grid_for(cfg)?;
    let n_train = cfg.benchmark.n_train;
    let parts = [
        (Split::Train, 0u64, n_train),
        (Split::Test, n_train as u64, cfg.benchmark.n_test),
    ];
    for (split, first, n) in parts {
        let (ds, store) = gen_dataset(&cfg.scene, &grid, first, n)?;
        save_dataset(&ds, out.join(format!("{}.json", split.stem())))?;
        store.save(out.join(format!("{}.features.bin", split.stem())))?;
        if !quiet {
            println!("{}: {} scenes, {} signs", split.stem(), ds.images.len(), ds.annotation_count());
        }
    }
    Ok(())
}

fn cmd_train(cfg: &RunConfig, out: &Path, quiet: bool) -> Result<(), CliError> {
    let grid = grid_for(cfg)?;
    let (ds, store) = load_split(&data_dir(cfg, out), Split::Train)?;
    let tc = &cfg.train;
    let set = TrainingSet::build(&ds, &store, &grid, &tc.salience, tc.loss_mode, cfg.eval.iou_threshold)?;
    let outcome = train(&set, tc)?;
    let file = ModelFile {
        loss_mode: tc.loss_mode,
        alpha_ss: tc.salience.alpha_ss,
        seed: tc.seed,
        model: outcome.model,
        loss_trace: outcome.loss_trace,
    };
    write_file(&out.join("model.json"), &json_bytes(&file))?;
    if !quiet {
        println!(
            "{} loss {:.6} -> {:.6} over {} epochs",
            tc.loss_mode,
            file.loss_trace[0],
            file.loss_trace[file.loss_trace.len() - 1],
            file.loss_trace.len()
        );
    }
    Ok(())
}

fn cmd_detect(cfg: &RunConfig, out: &Path, split: Split, quiet: bool) -> Result<(), CliError> {
    let grid = grid_for(cfg)?;
    let model_path = cfg.paths.model.clone().unwrap_or_else(|| out.join("model.json"));
    let text = std::fs::read_to_string(&model_path)
        .map_err(|e| CliError::Io(format!("i/o error on {}: {e}", model_path.display())))?;
    let file: ModelFile = serde_json::from_str(&text)
        .map_err(|e| CliError::Parse(format!("{}: {e}", model_path.display())))?;
    let (ds, store) = load_split(&data_dir(cfg, out), split)?;
    let dets = predict_dataset(&file.model, &ds, &store, &grid, cfg.eval.max_dets)?;
    save_detections(&dets, out.join("detections.json"))?;
    if !quiet {
        println!("{} detections over {} images", dets.len(), ds.images.len());
    }
    Ok(())
}

fn write_curve(out: &Path, stem: &str, curve: &PrCurve) -> Result<(), CliError> {
    write_file(&out.join(format!("{stem}.csv")), curve_to_csv(curve).as_bytes())?;
    write_file(&out.join(format!("{stem}.svg")), curve_to_svg(curve).as_bytes())
}

fn cmd_eval(cfg: &RunConfig, out: &Path, quiet: bool) -> Result<(), CliError> {
    let missing = |what: &str| CliError::Validation(format!("no {what} given (flag or [paths] entry)"));
    let ds_path = cfg.paths.dataset.as_ref().ok_or_else(|| missing("dataset"))?;
    let det_path = cfg.paths.detections.as_ref().ok_or_else(|| missing("detections"))?;
    let ds = load_dataset(ds_path)?;
    let dets = load_detections(det_path)?;
    let meta = CurveMeta {
        dataset_id: ds_path.display().to_string(),
        model_id: det_path.display().to_string(),
        loss_mode: String::new(),
    };
    let curve = pr_sweep(&group_detections(dets), &ds.annotations_by_image(), &cfg.eval, meta)?;
    write_curve(out, "curve", &curve)?;
    write_file(&out.join("curve.json"), &json_bytes(&curve))?;
    if !quiet {
        println!("points: {}", curve.points.len());
        println!("auc (all recall): {:.6}", auc(&curve, RecallAxis::All));
        println!("auc (salient recall): {:.6}", auc(&curve, RecallAxis::Salient));
        println!("mean margin: {:.6}", curve.mean_margin());
    }
    Ok(())
}

fn cmd_experiment(cfg: &RunConfig, out: &Path, quiet: bool) -> Result<(), CliError> {
    let size = BenchmarkSize {
        n_train: cfg.benchmark.n_train,
        n_test: cfg.benchmark.n_test,
    };
    let (report, base, treat) = run_experiment(
        &cfg.scene,
        &cfg.grid,
        &cfg.train_config(cfg.benchmark.baseline),
        &cfg.train_config(cfg.benchmark.treatment),
        &size,
        &cfg.eval,
    )?;
    write_file(&out.join("report.json"), report.to_json_string().as_bytes())?;
    write_curve(out, "baseline", &base.curve)?;
    write_curve(out, "treatment", &treat.curve)?;
    if !quiet {
        println!(
            "baseline ({}): auc salient {:.6}, auc all {:.6}, mean margin {:.6}",
            report.baseline.loss_mode,
            report.baseline.auc_salient,
            report.baseline.auc_all,
            report.baseline.mean_margin
        );
        println!(
            "treatment ({}): auc salient {:.6}, auc all {:.6}, mean margin {:.6}",
            report.treatment.loss_mode,
            report.treatment.auc_salient,
            report.treatment.auc_all,
            report.treatment.mean_margin
        );
    }
    println!("salient-recall AUC delta: {:.6}", report.auc_salient_delta);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_toml() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
        back.validate().unwrap();
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg = RunConfig::from_toml_str("[train]\nlearning_rate = 1.5\nepochs = 3\nlr_decay_factor = 0.5\nlr_milestones = []\ngrad_clip_norm = 5.0\nseed = 0\nloss_mode = \"fl\"\n\n[train.focal]\nalpha_fl = 0.25\ngamma = 2.0\n\n[train.salience]\nalpha_ss = 4.0\n").unwrap();
        assert_eq!(cfg.train.learning_rate, 1.5);
        assert_eq!(cfg.train.loss_mode, LossMode::Fl);
        assert_eq!(cfg.scene, SceneGenConfig::default());
    }

    #[test]
    fn unknown_key_is_a_validation_error() {
        let e = RunConfig::from_toml_str("[scene]\nwidht = 3\n").unwrap_err();
        assert_eq!(e.exit_code(), EXIT_VALIDATION);
        let e = RunConfig::from_toml_str("[[[").unwrap_err();
        assert_eq!(e.exit_code(), EXIT_IO);
    }

    #[test]
    fn invalid_values_rejected_before_work() {
        let mut cfg = RunConfig::default();
        cfg.train.learning_rate = -1.0;
        assert_eq!(cfg.validate().unwrap_err().exit_code(), EXIT_VALIDATION);
        let mut cfg = RunConfig::default();
        cfg.scene.salient_fraction = 1.5;
        assert_eq!(cfg.validate().unwrap_err().exit_code(), EXIT_VALIDATION);
    }

    #[test]
    fn error_exit_codes() {
        assert_eq!(CliError::from(SynthError::DivergedLoss { epoch: 4 }).exit_code(), EXIT_DIVERGED);
        assert_eq!(CliError::from(SynthError::NoPositives).exit_code(), EXIT_VALIDATION);
        assert_eq!(CliError::from(DatasetError::Parse("x".into())).exit_code(), EXIT_IO);
        assert_eq!(CliError::from(DatasetError::Schema("x".into())).exit_code(), EXIT_VALIDATION);
    }
}
