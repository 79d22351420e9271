use drae::config::ExperimentConfig;
use drae::data::SynthParams;
use drae::harness::{emit_report, parse_report, run_loso, FOLDS_FILE, REPORT_FILE};
use drae::model::ModelVariant;

fn tiny() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.experiment.classifiers = vec!["mlp".into(), "knn".into(), "logreg".into()];
    cfg.model.dim = 5;
    cfg.train.epochs = 3;
    cfg.train.classifier_epochs = 5;
    cfg.data.synth = SynthParams {
        subjects: 5,
        classes: 3,
        channels: 4,
        per_cell: 8,
        ..SynthParams::default()
    };
    cfg
}

#[test]
fn report_survives_emit_and_parse() {
    let cfg = tiny();
    let table = cfg.load_data().unwrap();
    let report = run_loso(&cfg, &table).unwrap();
    assert_eq!(report.folds.len(), 5);
    let dir = tempfile::tempdir().unwrap();
    let files = emit_report(&report, dir.path()).unwrap();
    assert!(files.iter().all(|f| f.exists()));
    let back = parse_report(&dir.path().join(REPORT_FILE)).unwrap();
    assert_eq!(back, report);
    let folds = std::fs::read_to_string(dir.path().join(FOLDS_FILE)).unwrap();
    assert_eq!(folds.lines().count(), 6);
}

#[test]
fn runs_repeat_exactly() {
    let mut cfg = tiny();
    cfg.experiment.seeds = vec![4, 5];
    let table = cfg.load_data().unwrap();
    let a = run_loso(&cfg, &table).unwrap();
    let b = run_loso(&cfg, &table).unwrap();
    assert_eq!(a.without_timing(), b.without_timing());
    assert_eq!(a.folds.len(), 10);
}

#[test]
fn noiseless_generator_transfers_perfectly() {
    let mut cfg = tiny();
    cfg.experiment.variant = ModelVariant::Ae;
    cfg.experiment.classifiers = vec!["knn".into(), "lda".into()];
    cfg.data.synth.sigma_subject = 0.0;
    cfg.data.synth.sigma_noise = 0.0;
    let table = cfg.load_data().unwrap();
    let report = run_loso(&cfg, &table).unwrap();
    for tag in ["knn", "lda"] {
        let acc = report.mean_accuracy(tag).unwrap();
        assert!(acc >= 0.99, "{tag}: {acc}");
    }
}
