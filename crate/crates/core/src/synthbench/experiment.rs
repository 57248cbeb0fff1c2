//! Two-arm comparison: identical data, two training objectives, one
//! evaluation protocol.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::evaluation::{auc, group_detections, pr_sweep, CurveMeta, EvalParams, PrCurve, RecallAxis};
use crate::matching::Detection;

use super::anchors::{AnchorGrid, GridConfig};
use super::features::FeatureStore;
use super::scene::{gen_dataset, SceneGenConfig};
use super::train::{predict_dataset, train, TrainConfig, TrainOutcome, TrainingSet};
use super::SynthError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSize {
    pub n_train: usize,
    pub n_test: usize,
}

impl Default for BenchmarkSize {
    fn default() -> Self {
        Self {
            n_train: 500,
            n_test: 100,
        }
    }
}

/// Generated train and test splits. Test scenes continue the scene index
/// sequence after the training scenes.
pub struct Benchmark {
    pub grid: AnchorGrid,
    pub train: (Dataset, FeatureStore),
    pub test: (Dataset, FeatureStore),
}

pub fn generate_benchmark(
    gen: &SceneGenConfig,
    grid_cfg: &GridConfig,
    size: &BenchmarkSize,
) -> Result<Benchmark, SynthError> {
    let grid = AnchorGrid::new(gen.width, gen.height, grid_cfg)?;
    let train = gen_dataset(gen, &grid, 0, size.n_train)?;
    let test = gen_dataset(gen, &grid, size.n_train as u64, size.n_test)?;
    Ok(Benchmark { grid, train, test })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmReport {
    pub name: String,
    pub loss_mode: String,
    pub alpha_ss: f64,
    pub auc_salient: f64,
    pub auc_all: f64,
    pub mean_margin: f64,
    pub first_loss: f64,
    pub final_loss: f64,
    pub curve: PrCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginRow {
    pub threshold: f64,
    pub baseline: Option<f64>,
    pub treatment: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
    pub baseline: ArmReport,
    pub treatment: ArmReport,
    /// treatment minus baseline
    pub auc_salient_delta: f64,
    pub auc_all_delta: f64,
    pub mean_margin_delta: f64,
    pub margins: Vec<MarginRow>,
}

impl ExperimentReport {
    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

pub struct ArmRun {
    pub outcome: TrainOutcome,
    pub detections: Vec<Detection>,
    pub curve: PrCurve,
}

pub fn run_arm(
    bench: &Benchmark,
    tc: &TrainConfig,
    eval: &EvalParams,
    name: &str,
) -> Result<ArmRun, SynthError> {
    let (train_ds, train_store) = &bench.train;
    let set = TrainingSet::build(
        train_ds,
        train_store,
        &bench.grid,
        &tc.salience,
        tc.loss_mode,
        eval.iou_threshold,
    )?;
    let outcome = train(&set, tc)?;
    let (test_ds, test_store) = &bench.test;
    let detections = predict_dataset(&outcome.model, test_ds, test_store, &bench.grid, eval.max_dets)?;
    let meta = CurveMeta {
        dataset_id: format!("synthetic-test-{}", test_ds.images.len()),
        model_id: name.to_string(),
        loss_mode: tc.loss_mode.to_string(),
    };
    let curve = pr_sweep(
        &group_detections(detections.iter().cloned()),
        &test_ds.annotations_by_image(),
        eval,
        meta,
    )?;
    Ok(ArmRun {
        outcome,
        detections,
        curve,
    })
}

fn arm_report(name: &str, tc: &TrainConfig, run: &ArmRun) -> ArmReport {
    ArmReport {
        name: name.to_string(),
        loss_mode: tc.loss_mode.to_string(),
        alpha_ss: tc.salience.alpha_ss,
        auc_salient: auc(&run.curve, RecallAxis::Salient),
        auc_all: auc(&run.curve, RecallAxis::All),
        mean_margin: run.curve.mean_margin(),
        first_loss: run.outcome.loss_trace[0],
        final_loss: *run.outcome.loss_trace.last().expect("epochs >= 1"),
        curve: run.curve.clone(),
    }
}

fn margin_rows(eval: &EvalParams, a: &PrCurve, b: &PrCurve) -> Vec<MarginRow> {
    let at = |c: &PrCurve, t: f64| c.points.iter().find(|p| p.threshold == t).map(|p| p.margin);
    eval.thresholds
        .iter()
        .map(|&t| MarginRow {
            threshold: t,
            baseline: at(a, t),
            treatment: at(b, t),
        })
        .filter(|r| r.baseline.is_some() || r.treatment.is_some())
        .collect()
}

/// Full two-arm run. The arms may differ only in loss mode and salience
/// parameters.
pub fn run_experiment(
    gen: &SceneGenConfig,
    grid_cfg: &GridConfig,
    baseline_cfg: &TrainConfig,
    treatment_cfg: &TrainConfig,
    size: &BenchmarkSize,
    eval: &EvalParams,
) -> Result<(ExperimentReport, ArmRun, ArmRun), SynthError> {
    let comparable = TrainConfig {
        loss_mode: baseline_cfg.loss_mode,
        salience: baseline_cfg.salience,
        ..treatment_cfg.clone()
    };
    if &comparable != baseline_cfg {
        return Err(SynthError::Config(
            "experiment arms may differ only in loss_mode and salience parameters".into(),
        ));
    }
    eval.validate().map_err(SynthError::Config)?;
    let bench = generate_benchmark(gen, grid_cfg, size)?;
    let base = run_arm(&bench, baseline_cfg, eval, "baseline")?;
    let treat = run_arm(&bench, treatment_cfg, eval, "treatment")?;
    let b = arm_report("baseline", baseline_cfg, &base);
    let t = arm_report("treatment", treatment_cfg, &treat);
    let report = ExperimentReport {
        n_train: size.n_train,
        n_test: size.n_test,
        seed: gen.seed,
        auc_salient_delta: t.auc_salient - b.auc_salient,
        auc_all_delta: t.auc_all - b.auc_all,
        mean_margin_delta: t.mean_margin - b.mean_margin,
        margins: margin_rows(eval, &base.curve, &treat.curve),
        baseline: b,
        treatment: t,
    };
    Ok((report, base, treat))
}
