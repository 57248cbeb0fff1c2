use salsign::evaluation::EvalParams;
use salsign::losses::{LossMode, SalienceParams};
use salsign::synthbench::{
    gen_dataset, run_experiment, train, AnchorGrid, BenchmarkSize, GridConfig, SceneGenConfig,
    SynthError, TrainConfig, TrainingSet,
};

fn small() -> (SceneGenConfig, GridConfig, BenchmarkSize, TrainConfig) {
    let tc = TrainConfig { epochs: 20, ..TrainConfig::default() };
    (SceneGenConfig::default(), GridConfig::default(), BenchmarkSize { n_train: 25, n_test: 10 }, tc)
}

#[test]
fn identical_arms_give_identical_curves() {
    let (gen, grid, size, tc) = small();
    let fl = TrainConfig { loss_mode: LossMode::Fl, ..tc };
    let (report, base, treat) = run_experiment(&gen, &grid, &fl, &fl, &size, &EvalParams::default()).unwrap();
    assert_eq!(base.curve.points, treat.curve.points);
    assert_eq!(report.auc_salient_delta, 0.0);
    assert_eq!(report.mean_margin_delta, 0.0);
}

#[test]
fn unit_salience_weight_reduces_to_focal_loss() {
    let (gen, grid, size, tc) = small();
    let fl = TrainConfig { loss_mode: LossMode::Fl, ..tc.clone() };
    let ssfl = TrainConfig {
        loss_mode: LossMode::Ssfl,
        salience: SalienceParams { alpha_ss: 1.0 },
        ..tc
    };
    let (report, base, treat) = run_experiment(&gen, &grid, &fl, &ssfl, &size, &EvalParams::default()).unwrap();
    assert_eq!(base.outcome, treat.outcome);
    assert_eq!(base.detections, treat.detections);
    assert_eq!(report.auc_salient_delta, 0.0);
}

#[test]
fn arms_must_share_optimizer_settings() {
    let (gen, grid, size, tc) = small();
    let other = TrainConfig { epochs: 21, ..tc.clone() };
    assert!(matches!(
        run_experiment(&gen, &grid, &tc, &other, &size, &EvalParams::default()),
        Err(SynthError::Config(_))
    ));
}

#[test]
fn salience_weights_raise_loss_near_salient_signs() {
    let gen = SceneGenConfig::default();
    let grid = AnchorGrid::new(gen.width, gen.height, &GridConfig::default()).unwrap();
    let (ds, store) = gen_dataset(&gen, &grid, 0, 20).unwrap();
    let sp = SalienceParams::default();
    let fl = TrainingSet::build(&ds, &store, &grid, &sp, LossMode::Fl, 0.5).unwrap();
    let ssfl = TrainingSet::build(&ds, &store, &grid, &sp, LossMode::Ssfl, 0.5).unwrap();
    let tc = TrainConfig::default();
    let m = salsign::synthbench::ModelWeights::zeros(fl.dim());
    let (l_fl, _) = fl.loss_and_gradient(&m, &tc.focal).unwrap();
    let (l_ss, _) = ssfl.loss_and_gradient(&m, &tc.focal).unwrap();
    assert!(l_ss > l_fl && l_ss <= sp.alpha_ss * l_fl);
}

#[test]
fn training_is_deterministic() {
    let gen = SceneGenConfig { seed: 3, ..SceneGenConfig::default() };
    let grid = AnchorGrid::new(gen.width, gen.height, &GridConfig::default()).unwrap();
    let (ds, store) = gen_dataset(&gen, &grid, 0, 20).unwrap();
    let tc = TrainConfig { epochs: 30, ..TrainConfig::default() };
    let set = TrainingSet::build(&ds, &store, &grid, &tc.salience, tc.loss_mode, 0.5).unwrap();
    assert_eq!(train(&set, &tc).unwrap(), train(&set, &tc).unwrap());
}
