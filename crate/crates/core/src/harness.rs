//! Leave-one-subject-out orchestration, the two-stage λ sweep, dimension and
//! data-size ablations, summary statistics and report files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::data::{loso_split, preprocess, stratified_subsample, SampleTable};
use crate::error::{Error, Result};
use crate::model::{build_model, Dims, ModelVariant};
use crate::train::{
    evaluate_classifier, evaluate_discriminators, train_classifier, train_feature_extractor, LabeledSet,
    TrainConfig, TrainLog,
};

pub const SCHEMA_VERSION: u32 = 1;
pub const REPORT_FILE: &str = "report.json";
pub const FOLDS_FILE: &str = "folds.csv";

pub fn version_string() -> String {
    format!("drae {} (report schema {SCHEMA_VERSION})", env!("CARGO_PKG_VERSION"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Mean, median, quartiles (linear interpolation between order statistics),
/// min and max.
pub fn summarize_stats(values: &[f64]) -> Result<Summary> {
    if values.is_empty() {
        return Err(Error::Argument("cannot summarize an empty list".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("summary input contains non-finite values".into()));
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(Summary {
        n: s.len(),
        mean: s.iter().sum::<f64>() / s.len() as f64,
        median: quantile(&s, 0.5),
        q1: quantile(&s, 0.25),
        q3: quantile(&s, 0.75),
        min: s[0],
        max: s[s.len() - 1],
    })
}

/// One (seed, held-out subject) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRecord {
    pub seed: u64,
    pub held_out: u32,
    pub split_hash: String,
    /// classifier tag → accuracy on the held-out subject
    pub test_accuracy: BTreeMap<String, f64>,
    /// classifier tag → accuracy on the validation split
    pub val_accuracy: BTreeMap<String, f64>,
    pub adversary_accuracy: Option<f64>,
    pub nuisance_accuracy: Option<f64>,
    pub train_log: TrainLog,
}

impl FoldRecord {
    pub fn log_file(&self) -> String {
        format!("trainlogs/seed{}_subject{}.csv", self.seed, self.held_out)
    }
}

/// Per-subject means over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectEntry {
    pub held_out: u32,
    pub test_accuracy: BTreeMap<String, f64>,
    pub adversary_accuracy: Option<f64>,
    pub nuisance_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: ModelVariant,
    pub seeds: Vec<u64>,
    pub config: ExperimentConfig,
    pub folds: Vec<FoldRecord>,
    pub subjects: Vec<SubjectEntry>,
    /// classifier tag → statistics over the per-subject accuracies
    pub summary: BTreeMap<String, Summary>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn mean_opt(v: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let xs: Vec<f64> = v.flatten().collect();
    (!xs.is_empty()).then(|| mean(&xs))
}

impl EvalReport {
    /// Builds per-subject entries and summaries from raw fold records.
    pub fn assemble(variant: ModelVariant, config: ExperimentConfig, folds: Vec<FoldRecord>) -> Result<Self> {
        let mut by_subject: BTreeMap<u32, Vec<&FoldRecord>> = BTreeMap::new();
        for f in &folds {
            by_subject.entry(f.held_out).or_default().push(f);
        }
        let tags: Vec<String> = folds.first().map(|f| f.test_accuracy.keys().cloned().collect()).unwrap_or_default();
        let subjects: Vec<SubjectEntry> = by_subject
            .iter()
            .map(|(&held_out, rs)| SubjectEntry {
                held_out,
                test_accuracy: tags
                    .iter()
                    .map(|t| (t.clone(), mean(&rs.iter().map(|r| r.test_accuracy[t]).collect::<Vec<_>>())))
                    .collect(),
                adversary_accuracy: mean_opt(rs.iter().map(|r| r.adversary_accuracy)),
                nuisance_accuracy: mean_opt(rs.iter().map(|r| r.nuisance_accuracy)),
            })
            .collect();
        let mut summary = BTreeMap::new();
        for t in &tags {
            let v: Vec<f64> = subjects.iter().map(|s| s.test_accuracy[t]).collect();
            summary.insert(t.clone(), summarize_stats(&v)?);
        }
        let mut seeds: Vec<u64> = folds.iter().map(|f| f.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        Ok(Self { variant, seeds, config, folds, subjects, summary })
    }

    pub fn classifiers(&self) -> Vec<String> {
        self.summary.keys().cloned().collect()
    }

    /// Mean held-out accuracy over all subjects and seeds.
    pub fn mean_accuracy(&self, classifier: &str) -> Option<f64> {
        self.summary.get(classifier).map(|s| s.mean)
    }

    pub fn mean_val_accuracy(&self, classifier: &str) -> Option<f64> {
        let v: Vec<f64> = self.folds.iter().filter_map(|f| f.val_accuracy.get(classifier).copied()).collect();
        (!v.is_empty()).then(|| mean(&v))
    }

    pub fn mean_adversary_accuracy(&self) -> Option<f64> {
        mean_opt(self.folds.iter().map(|f| f.adversary_accuracy))
    }

    pub fn mean_nuisance_accuracy(&self) -> Option<f64> {
        mean_opt(self.folds.iter().map(|f| f.nuisance_accuracy))
    }

    /// Mean held-out accuracy per seed.
    pub fn seed_means(&self, classifier: &str) -> BTreeMap<u64, f64> {
        let mut m: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
        for f in &self.folds {
            if let Some(&a) = f.test_accuracy.get(classifier) {
                m.entry(f.seed).or_default().push(a);
            }
        }
        m.into_iter().map(|(s, v)| (s, mean(&v))).collect()
    }

    /// Same report with wall times zeroed, for determinism comparisons.
    pub fn without_timing(&self) -> EvalReport {
        let mut r = self.clone();
        for f in &mut r.folds {
            f.train_log = f.train_log.without_timing();
        }
        r
    }

    /// Split hashes keyed by (seed, held-out subject), for pairing checks.
    pub fn split_hashes(&self) -> BTreeMap<(u64, u32), String> {
        self.folds.iter().map(|f| ((f.seed, f.held_out), f.split_hash.clone())).collect()
    }
}

/// Restricts a fold's train and validation rows to a stratified share of
/// their union, keeping each row's original role.
fn subsample_fold(table: &SampleTable, train: &[usize], val: &[usize], fraction: f64, seed: u64, held_out: u32) -> Result<(Vec<usize>, Vec<usize>)> {
    if fraction == 1.0 {
        return Ok((train.to_vec(), val.to_vec()));
    }
    let mut union: Vec<usize> = train.iter().chain(val).copied().collect();
    union.sort_unstable();
    let kept = stratified_subsample(table, &union, fraction, seed, u64::from(held_out))?;
    let keep = |v: &[usize]| v.iter().copied().filter(|i| kept.binary_search(i).is_ok()).collect::<Vec<_>>();
    Ok((keep(train), keep(val)))
}

fn run_fold(cfg: &ExperimentConfig, table: &SampleTable, dims: Dims, seed: u64, held_out: u32) -> Result<FoldRecord> {
    let split = loso_split(table, held_out, seed)?;
    let split_hash = split.hash();
    let (train_idx, val_idx) = subsample_fold(table, &split.train, &split.val, cfg.experiment.fraction, seed, held_out)?;
    let (normed, _) = preprocess(table, &train_idx)?;
    let train = LabeledSet::from_table(&normed, &train_idx);
    let val = LabeledSet::from_table(&normed, &val_idx);
    let test = LabeledSet::from_table(&normed, &split.test);

    let tc = TrainConfig { seed, ..cfg.train };
    let mut bundle = build_model(cfg.experiment.variant, dims, cfg.model.schedule_params(), seed)?;
    let train_log = train_feature_extractor(&mut bundle, &train, &val, &tc)?;
    let disc = evaluate_discriminators(&bundle, &val)?;
    let mut test_accuracy = BTreeMap::new();
    let mut val_accuracy = BTreeMap::new();
    for kind in cfg.classifier_kinds()? {
        let trained = train_classifier(&bundle, &kind, &train, &val, &tc)?;
        test_accuracy.insert(kind.tag().to_string(), evaluate_classifier(&bundle, &trained.classifier, &test)?);
        val_accuracy.insert(kind.tag().to_string(), trained.val_accuracy);
    }
    Ok(FoldRecord {
        seed,
        held_out,
        split_hash,
        test_accuracy,
        val_accuracy,
        adversary_accuracy: disc.adversary,
        nuisance_accuracy: disc.nuisance,
        train_log,
    })
}

/// Dimensions implied by a table and the configured latent width.
pub fn dims_for(cfg: &ExperimentConfig, table: &SampleTable) -> Dims {
    Dims {
        c: table.channels(),
        d: cfg.model.dim,
        s: table.subjects().len(),
        l: table.num_classes,
    }
}

/// Runs every (seed, held-out subject) fold concurrently and aggregates.
pub fn run_loso(cfg: &ExperimentConfig, table: &SampleTable) -> Result<EvalReport> {
    cfg.validate()?;
    let subjects = table.subjects();
    if subjects.len() < 2 {
        return Err(Error::Argument(format!("leave-one-subject-out needs >= 2 subjects, got {}", subjects.len())));
    }
    let dims = dims_for(cfg, table);
    let jobs: Vec<(u64, u32)> = cfg
        .experiment
        .seeds
        .iter()
        .flat_map(|&s| subjects.iter().map(move |&h| (s, h)))
        .collect();
    let folds = jobs
        .par_iter()
        .map(|&(seed, h)| {
            run_fold(cfg, table, dims, seed, h).map_err(|e| Error::Fold { subject: h, source: Box::new(e) })
        })
        .collect::<Result<Vec<_>>>()?;
    EvalReport::assemble(cfg.experiment.variant, cfg.clone(), folds)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub stage: u8,
    pub lambda_a: f64,
    pub lambda_n: f64,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
    pub adversary_accuracy: Option<f64>,
    pub nuisance_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub variant: ModelVariant,
    pub classifier: String,
    pub cells: Vec<SweepCell>,
    pub selected: (f64, f64),
}

#[derive(Clone, Copy)]
enum Preference {
    HigherNuisance,
    LowerAdversary,
}

/// Picks one λ among `cells` (each tagged with its candidate λ): maximize
/// validation accuracy, then among cells within `tol` of the best apply the
/// discriminator preference, then prefer the smaller λ.
fn select_stage(cells: &[(f64, &SweepCell)], tol: f64, pref: Preference) -> f64 {
    let best = cells.iter().map(|(_, c)| c.val_accuracy).fold(f64::NEG_INFINITY, f64::max);
    let mut near: Vec<&(f64, &SweepCell)> = cells.iter().filter(|(_, c)| c.val_accuracy >= best - tol - 1e-12).collect();
    let score = |c: &SweepCell| match pref {
        Preference::HigherNuisance => -c.nuisance_accuracy.unwrap_or(0.0),
        Preference::LowerAdversary => c.adversary_accuracy.unwrap_or(0.0),
    };
    near.sort_by(|a, b| score(a.1).total_cmp(&score(b.1)).then(a.0.total_cmp(&b.0)));
    near[0].0
}

/// Two-stage lexicographic selection. Stage 1 looks at cells with λ_A = 0 and
/// picks λ_N*; stage 2 looks at cells with λ_N = λ_N* and picks λ_A*.
/// `tie_tolerance` is in accuracy points; accuracies are fractions.
pub fn select_lambda(cells: &[SweepCell], tie_tolerance: f64) -> Result<(f64, f64)> {
    let tol = tie_tolerance / 100.0;
    let stage1: Vec<(f64, &SweepCell)> = cells.iter().filter(|c| c.lambda_a == 0.0).map(|c| (c.lambda_n, c)).collect();
    if stage1.is_empty() {
        return Err(Error::Argument("sweep table has no cells with lambda_a = 0".into()));
    }
    let lambda_n = select_stage(&stage1, tol, Preference::HigherNuisance);
    let stage2: Vec<(f64, &SweepCell)> = cells.iter().filter(|c| c.lambda_n == lambda_n).map(|c| (c.lambda_a, c)).collect();
    let lambda_a = select_stage(&stage2, tol, Preference::LowerAdversary);
    Ok((lambda_a, lambda_n))
}

fn sweep_cell(cfg: &ExperimentConfig, table: &SampleTable, stage: u8, lambda_a: f64, lambda_n: f64, clf: &str) -> Result<SweepCell> {
    let mut c = cfg.clone();
    c.train.lambda_a = lambda_a;
    c.train.lambda_n = lambda_n;
    let r = run_loso(&c, table)?;
    if cfg.train.log_every > 0 {
        println!("sweep stage {stage}: lambda_a={lambda_a} lambda_n={lambda_n}");
    }
    Ok(SweepCell {
        stage,
        lambda_a,
        lambda_n,
        val_accuracy: r.mean_val_accuracy(clf).unwrap_or(f64::NAN),
        test_accuracy: r.mean_accuracy(clf).unwrap_or(f64::NAN),
        adversary_accuracy: r.mean_adversary_accuracy(),
        nuisance_accuracy: r.mean_nuisance_accuracy(),
    })
}

/// λ_N over its grid with λ_A = 0, then λ_A over its grid at the selected
/// λ_N, reusing the (0, λ_N*) cell. Scored with the first configured
/// classifier.
pub fn sweep_lambda(cfg: &ExperimentConfig, table: &SampleTable) -> Result<SweepTable> {
    cfg.validate()?;
    let s = &cfg.sweep;
    if !s.lambda_a.contains(&0.0) || !s.lambda_n.contains(&0.0) {
        return Err(Error::Config("both lambda grids must include 0".into()));
    }
    let clf = cfg.classifier_kinds()?[0].tag().to_string();
    let mut grid_n = s.lambda_n.clone();
    grid_n.sort_by(f64::total_cmp);
    grid_n.dedup();
    let mut cells = Vec::new();
    for &n in &grid_n {
        cells.push(sweep_cell(cfg, table, 1, 0.0, n, &clf)?);
    }
    let (_, lambda_n) = select_lambda(&cells, s.tie_tolerance)?;
    let mut grid_a = s.lambda_a.clone();
    grid_a.sort_by(f64::total_cmp);
    grid_a.dedup();
    for &a in grid_a.iter().filter(|&&a| a != 0.0) {
        cells.push(sweep_cell(cfg, table, 2, a, lambda_n, &clf)?);
    }
    let selected = select_lambda(&cells, s.tie_tolerance)?;
    Ok(SweepTable { variant: cfg.experiment.variant, classifier: clf, cells, selected })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub x: f64,
    pub value: f64,
    pub model: String,
    pub seed: u64,
}

/// Mean held-out accuracy per (x, model, seed) for one ablation axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ablation {
    pub name: String,
    pub classifier: String,
    pub rows: Vec<CurveRow>,
}

impl Ablation {
    /// Mean over seeds at one grid point.
    pub fn mean(&self, x: f64, model: &str) -> Option<f64> {
        let v: Vec<f64> = self.rows.iter().filter(|r| r.x == x && r.model == model).map(|r| r.value).collect();
        (!v.is_empty()).then(|| mean(&v))
    }

    pub fn xs(&self) -> Vec<f64> {
        let mut xs: Vec<f64> = self.rows.iter().map(|r| r.x).collect();
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        xs
    }
}

/// The configured variant paired with the plain autoencoder baseline.
fn compared_models(cfg: &ExperimentConfig) -> Vec<ModelVariant> {
    let mut v = vec![cfg.experiment.variant];
    if cfg.experiment.variant != ModelVariant::Ae {
        v.push(ModelVariant::Ae);
    }
    v
}

fn ablation(
    name: &str,
    cfg: &ExperimentConfig,
    table: &SampleTable,
    grid: &[f64],
    apply: impl Fn(&mut ExperimentConfig, f64),
) -> Result<Ablation> {
    cfg.validate()?;
    let clf = cfg.classifier_kinds()?[0].tag().to_string();
    let mut rows = Vec::new();
    for &x in grid {
        let mut hashes = None;
        for model in compared_models(cfg) {
            let mut c = cfg.clone();
            c.experiment.variant = model;
            apply(&mut c, x);
            let r = run_loso(&c, table)?;
            let h = r.split_hashes();
            match &hashes {
                None => hashes = Some(h),
                Some(prev) if *prev != h => {
                    return Err(Error::State(format!("{name}: unpaired splits between models at x = {x}")))
                }
                Some(_) => {}
            }
            if cfg.train.log_every > 0 {
                println!("{name}: x={x} {model} mean {:.4}", r.mean_accuracy(&clf).unwrap_or(f64::NAN));
            }
            for (seed, value) in r.seed_means(&clf) {
                rows.push(CurveRow { x, value, model: model.tag().to_string(), seed });
            }
        }
    }
    Ok(Ablation { name: name.to_string(), classifier: clf, rows })
}

/// LOSO per latent width for the configured variant and the AE baseline.
pub fn dimension_sweep(cfg: &ExperimentConfig, table: &SampleTable) -> Result<Ablation> {
    let grid: Vec<f64> = cfg.sweep.dims.iter().map(|&d| d as f64).collect();
    ablation("dimension", cfg, table, &grid, |c, x| c.model.dim = x as usize)
}

/// LOSO per training-data fraction for the configured variant and AE.
pub fn datasize_ablation(cfg: &ExperimentConfig, table: &SampleTable, fractions: &[f64]) -> Result<Ablation> {
    if fractions.is_empty() {
        return Err(Error::Argument("fraction list is empty".into()));
    }
    ablation("datasize", cfg, table, fractions, |c, x| c.experiment.fraction = x)
}

// ---- report files ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ReportDocument {
    schema_version: u32,
    version: String,
    manifest: Vec<String>,
    report: EvalReport,
}

fn write_file(dir: &Path, rel: &str, contents: &[u8]) -> Result<PathBuf> {
    let path = dir.join(rel);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn csv_bytes<F>(header: &[&str], fill: F) -> Result<Vec<u8>>
where
    F: FnOnce(&mut csv::Writer<Vec<u8>>) -> std::result::Result<(), csv::Error>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    let run = |w: &mut csv::Writer<Vec<u8>>| -> std::result::Result<(), csv::Error> {
        w.write_record(header)?;
        fill(w)
    };
    run(&mut w).map_err(|e| Error::Format(e.to_string()))?;
    w.into_inner().map_err(|e| Error::Format(e.to_string()))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn curve_csv(rows: &[CurveRow]) -> Result<Vec<u8>> {
    csv_bytes(&["x", "value", "model", "seed"], |w| {
        for r in rows {
            w.write_record([r.x.to_string(), r.value.to_string(), r.model.clone(), r.seed.to_string()])?;
        }
        Ok(())
    })
}

/// Writes `report.json`, `folds.csv`, per-fold train logs and curve CSVs.
/// Returns the written paths.
pub fn emit_report(report: &EvalReport, out: &Path) -> Result<Vec<PathBuf>> {
    let tags = report.classifiers();
    let mut files: Vec<(String, Vec<u8>)> = Vec::new();

    let mut header: Vec<String> = vec!["held_out".into()];
    header.extend(tags.iter().map(|t| format!("{t}_accuracy")));
    header.extend(["adversary_accuracy".into(), "nuisance_accuracy".into()]);
    let header_ref: Vec<&str> = header.iter().map(String::as_str).collect();
    files.push((
        FOLDS_FILE.into(),
        csv_bytes(&header_ref, |w| {
            for s in &report.subjects {
                let mut rec = vec![s.held_out.to_string()];
                rec.extend(tags.iter().map(|t| s.test_accuracy[t].to_string()));
                rec.push(opt(s.adversary_accuracy));
                rec.push(opt(s.nuisance_accuracy));
                w.write_record(&rec)?;
            }
            Ok(())
        })?,
    ));

    for f in &report.folds {
        files.push((f.log_file(), f.train_log.to_csv().into_bytes()));
    }

    let mut transfer = Vec::new();
    let mut convergence = Vec::new();
    for f in &report.folds {
        for t in &tags {
            transfer.push(CurveRow {
                x: f64::from(f.held_out),
                value: f.test_accuracy[t],
                model: format!("{}:{t}", report.variant),
                seed: f.seed,
            });
        }
    }
    for &seed in &report.seeds {
        let logs: Vec<&TrainLog> = report.folds.iter().filter(|f| f.seed == seed).map(|f| &f.train_log).collect();
        let epochs = logs.iter().map(|l| l.epochs.len()).min().unwrap_or(0);
        for e in 0..epochs {
            convergence.push(CurveRow {
                x: (e + 1) as f64,
                value: mean(&logs.iter().map(|l| l.epochs[e].total).collect::<Vec<_>>()),
                model: report.variant.tag().to_string(),
                seed,
            });
        }
    }
    files.push(("curves/transfer_accuracy.csv".into(), curve_csv(&transfer)?));
    files.push(("curves/convergence.csv".into(), curve_csv(&convergence)?));

    let mut manifest: Vec<String> = files.iter().map(|(n, _)| n.clone()).collect();
    manifest.insert(0, REPORT_FILE.into());
    let doc = ReportDocument {
        schema_version: SCHEMA_VERSION,
        version: version_string(),
        manifest,
        report: report.clone(),
    };
    let json = serde_json::to_vec_pretty(&doc).map_err(|e| Error::Format(e.to_string()))?;
    let mut written = vec![write_file(out, REPORT_FILE, &json)?];
    for (name, bytes) in &files {
        written.push(write_file(out, name, bytes)?);
    }
    Ok(written)
}

/// Reads `report.json` from `dir` (or a direct file path).
pub fn parse_report(path: &Path) -> Result<EvalReport> {
    let file = if path.is_dir() { path.join(REPORT_FILE) } else { path.to_path_buf() };
    let bytes = std::fs::read(&file).map_err(|e| Error::io(&file, e))?;
    let doc: ReportDocument = serde_json::from_slice(&bytes).map_err(|e| Error::Format(format!("{}: {e}", file.display())))?;
    if doc.schema_version != SCHEMA_VERSION {
        return Err(Error::Format(format!(
            "report schema {} is not supported (expected {SCHEMA_VERSION})",
            doc.schema_version
        )));
    }
    Ok(doc.report)
}

pub fn emit_sweep(table: &SweepTable, out: &Path) -> Result<Vec<PathBuf>> {
    let json = serde_json::to_vec_pretty(table).map_err(|e| Error::Format(e.to_string()))?;
    let csv = csv_bytes(
        &["stage", "lambda_a", "lambda_n", "val_accuracy", "test_accuracy", "adversary_accuracy", "nuisance_accuracy"],
        |w| {
            for c in &table.cells {
                w.write_record([
                    c.stage.to_string(),
                    c.lambda_a.to_string(),
                    c.lambda_n.to_string(),
                    c.val_accuracy.to_string(),
                    c.test_accuracy.to_string(),
                    opt(c.adversary_accuracy),
                    opt(c.nuisance_accuracy),
                ])?;
            }
            Ok(())
        },
    )?;
    Ok(vec![write_file(out, "sweep.json", &json)?, write_file(out, "sweep.csv", &csv)?])
}

pub fn emit_ablation(a: &Ablation, out: &Path) -> Result<Vec<PathBuf>> {
    let json = serde_json::to_vec_pretty(a).map_err(|e| Error::Format(e.to_string()))?;
    Ok(vec![
        write_file(out, &format!("{}.json", a.name), &json)?,
        write_file(out, &format!("curves/{}.csv", a.name), &curve_csv(&a.rows)?)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn summary_examples() {
        let s = summarize_stats(&[0.7, 0.8, 0.9]).unwrap();
        assert!((s.median - 0.8).abs() < 1e-15 && (s.mean - 0.8).abs() < 1e-15);
        let one = summarize_stats(&[0.42]).unwrap();
        assert_eq!([one.mean, one.median, one.q1, one.q3, one.min, one.max], [0.42; 6]);
        assert!(matches!(summarize_stats(&[]), Err(Error::Argument(_))));
    }

    #[test]
    fn summary_matches_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v: Vec<f64> = (0..20).map(|_| rng.random::<f64>()).collect();
        let s = summarize_stats(&v).unwrap();
        let mut o = v.clone();
        o.sort_by(|a, b| a.partial_cmp(b).unwrap());
        // n = 20: quartile positions 4.75, 9.5, 14.25
        assert!((s.q1 - (o[4] + 0.75 * (o[5] - o[4]))).abs() < 1e-15);
        assert!((s.median - 0.5 * (o[9] + o[10])).abs() < 1e-15);
        assert!((s.q3 - (o[14] + 0.25 * (o[15] - o[14]))).abs() < 1e-15);
        assert_eq!((s.min, s.max), (o[0], o[19]));
    }

    fn cell(a: f64, n: f64, acc: f64, adv: f64, nui: f64) -> SweepCell {
        SweepCell {
            stage: if a == 0.0 { 1 } else { 2 },
            lambda_a: a,
            lambda_n: n,
            val_accuracy: acc,
            test_accuracy: acc,
            adversary_accuracy: Some(adv),
            nuisance_accuracy: Some(nui),
        }
    }

    #[test]
    fn selection_tie_breaks() {
        let cells = [cell(0.0, 0.0, 0.8, 0.1, 0.1), cell(0.0, 0.2, 0.8, 0.1, 0.1)];
        assert_eq!(select_lambda(&cells, 0.5).unwrap(), (0.0, 0.0));
        // within tolerance the higher nuisance reading wins over raw accuracy
        let cells = [cell(0.0, 0.0, 0.803, 0.1, 0.1), cell(0.0, 0.2, 0.800, 0.1, 0.3)];
        assert_eq!(select_lambda(&cells, 0.5).unwrap(), (0.0, 0.2));
        assert_eq!(select_lambda(&cells, 0.0).unwrap(), (0.0, 0.0));
        let cells = [
            cell(0.0, 0.1, 0.8, 0.2, 0.2),
            cell(0.3, 0.1, 0.801, 0.05, 0.2),
            cell(0.6, 0.1, 0.804, 0.10, 0.2),
        ];
        assert_eq!(select_lambda(&cells, 0.5).unwrap(), (0.3, 0.1));
        assert!(matches!(select_lambda(&[], 0.5), Err(Error::Argument(_))));
    }

    fn tiny_config() -> (ExperimentConfig, SampleTable) {
        let mut cfg = ExperimentConfig::default();
        cfg.data.synth = SynthParams { subjects: 3, per_cell: 10, seed: 1, ..Default::default() };
        cfg.model.dim = 4;
        cfg.train.epochs = 2;
        cfg.train.classifier_epochs = 2;
        cfg.experiment.classifiers = vec!["mlp".into(), "knn".into()];
        let table = synth_generate(&cfg.data.synth).unwrap();
        (cfg, table)
    }

    #[test]
    fn loso_report_shape_and_round_trip() {
        let (cfg, table) = tiny_config();
        let r = run_loso(&cfg, &table).unwrap();
        assert_eq!(r.subjects.len(), 3);
        assert_eq!(r.folds.len(), 3);
        let dir = tempfile::tempdir().unwrap();
        let files = emit_report(&r, dir.path()).unwrap();
        assert!(files.iter().all(|p| p.exists()));
        assert_eq!(parse_report(dir.path()).unwrap(), r);
        let folds = std::fs::read_to_string(dir.path().join(FOLDS_FILE)).unwrap();
        assert_eq!(folds.lines().count(), 1 + 3);
        // summary is recomputable from the per-subject rows in the file
        let mut rdr = csv::Reader::from_reader(folds.as_bytes());
        let col = rdr.headers().unwrap().iter().position(|h| h == "mlp_accuracy").unwrap();
        let mlp: Vec<f64> = rdr.records().map(|rec| rec.unwrap()[col].parse().unwrap()).collect();
        assert_eq!(summarize_stats(&mlp).unwrap(), r.summary["mlp"]);
    }

    #[test]
    fn fraction_one_is_identity_and_small_fraction_fails() {
        let (mut cfg, table) = tiny_config();
        cfg.experiment.classifiers = vec!["knn".into()];
        let a = run_loso(&cfg, &table).unwrap();
        cfg.experiment.fraction = 1.0;
        assert_eq!(run_loso(&cfg, &table).unwrap().without_timing(), a.without_timing());
        cfg.experiment.fraction = 0.01;
        assert!(matches!(run_loso(&cfg, &table), Err(Error::Fold { .. })));
    }

    #[test]
    fn sweep_counts_cells_and_reuses_baseline() {
        let (mut cfg, table) = tiny_config();
        cfg.experiment.classifiers = vec!["knn".into()];
        cfg.sweep.lambda_a = vec![0.0, 0.5];
        cfg.sweep.lambda_n = vec![0.0, 0.05];
        let t = sweep_lambda(&cfg, &table).unwrap();
        assert_eq!(t.cells.len(), 3);
        assert_eq!(t.cells.iter().filter(|c| c.stage == 1).count(), 2);
        cfg.sweep.lambda_a = vec![0.5];
        assert!(matches!(sweep_lambda(&cfg, &table), Err(Error::Config(_))));
    }

    #[test]
    fn ablations_pair_models() {
        let (mut cfg, table) = tiny_config();
        cfg.experiment.classifiers = vec!["knn".into()];
        cfg.sweep.dims = vec![3, 5];
        let a = dimension_sweep(&cfg, &table).unwrap();
        assert_eq!(a.xs(), vec![3.0, 5.0]);
        assert!(a.mean(3.0, "AE").is_some() && a.mean(5.0, "DA-cRAE").is_some());
        let d = datasize_ablation(&cfg, &table, &[1.0, 0.5]).unwrap();
        assert_eq!(d.rows.len(), 4);
    }
}
