//! Alternating three-player training and the frozen-encoder classifier stage.
//!
//! Per minibatch the discriminator heads take one step on subject
//! cross-entropy with the gradient stopped at `z`, then encoder and decoder
//! take one step on
//!
//! ```text
//! MSE(X̂, X) + λ_N · CE(s | z ⊙ m_n) − λ_A · CE(s | z ⊙ m_a)
//! ```
//!
//! with the same masks. Masks reach only the heads; the decoder sees all of `z`.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifiers::{self, ClassifierKind, FittedClassifier};
use crate::data::SampleTable;
use crate::error::{Error, Result};
use crate::gradcheck::{grad_check, GradCheckReport, NetworkGroup};
use crate::linalg::Matrix;
use crate::model::ModelBundle;
use crate::nn::{accuracy, mse_loss, softmax_cross_entropy, Network, NetworkGrads, OptimizerConfig, OptimizerState};
use crate::schedule::{Head, MaskSample};

// rng streams for training, disjoint from the init streams in `model`
const STREAM_SHUFFLE: u64 = 16;
const STREAM_MASKS: u64 = 17;
const STREAM_CLASSIFIER_SHUFFLE: u64 = 18;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lambda_a: f64,
    pub lambda_n: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub classifier_epochs: usize,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    /// Print a progress line every `log_every` epochs; 0 is silent.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_a: 0.5,
            lambda_n: 0.05,
            epochs: 50,
            batch_size: 64,
            classifier_epochs: 50,
            optimizer: OptimizerConfig::default(),
            seed: 0,
            log_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_a", self.lambda_a), ("lambda_n", self.lambda_n)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be a finite value >= 0, got {v}")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        self.optimizer.validate()
    }
}

/// Inputs with their subject indices (0-based) and task labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub x: Matrix,
    pub subjects: Vec<usize>,
    pub labels: Vec<usize>,
}

impl LabeledSet {
    /// Rows `idx` of `table`; subject codes index `table.subjects()`.
    pub fn from_table(table: &SampleTable, idx: &[usize]) -> Self {
        let codes = table.subject_indices();
        Self {
            x: table.x.select_rows(idx),
            subjects: idx.iter().map(|&i| codes[i]).collect(),
            labels: idx.iter().map(|&i| table.label[i]).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn rows(&self, idx: &[usize]) -> LabeledSet {
        LabeledSet {
            x: self.x.select_rows(idx),
            subjects: idx.iter().map(|&i| self.subjects[i]).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total: f64,
    pub recon: f64,
    pub adv_ce: Option<f64>,
    pub nui_ce: Option<f64>,
    pub adv_acc: Option<f64>,
    pub nui_acc: Option<f64>,
    pub wall_time: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub const CSV_HEADER: &'static str = "epoch,total,recon,adv_ce,nui_ce,adv_acc,nui_acc";

    /// Comma-separated rows; absent heads leave their columns empty.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.epochs {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.epoch,
                r.total,
                r.recon,
                opt(r.adv_ce),
                opt(r.nui_ce),
                opt(r.adv_acc),
                opt(r.nui_acc)
            ));
        }
        s
    }

    /// Same records with wall time zeroed, for determinism comparisons.
    pub fn without_timing(&self) -> TrainLog {
        TrainLog {
            epochs: self
                .epochs
                .iter()
                .map(|r| EpochRecord { wall_time: 0.0, ..*r })
                .collect(),
        }
    }
}

/// Optimizer state per player.
#[derive(Debug, Clone)]
pub struct PlayerOptimizers {
    pub encoder: OptimizerState,
    pub decoder: OptimizerState,
    pub adversary: Option<OptimizerState>,
    pub nuisance: Option<OptimizerState>,
}

impl PlayerOptimizers {
    pub fn new(config: OptimizerConfig, bundle: &ModelBundle) -> Self {
        Self {
            encoder: OptimizerState::for_network(config, &bundle.encoder),
            decoder: OptimizerState::for_network(config, &bundle.decoder),
            adversary: bundle.adversary.as_ref().map(|n| OptimizerState::for_network(config, n)),
            nuisance: bundle.nuisance.as_ref().map(|n| OptimizerState::for_network(config, n)),
        }
    }

    fn head(&mut self, head: Head) -> Option<&mut OptimizerState> {
        match head {
            Head::Adversary => self.adversary.as_mut(),
            Head::Nuisance => self.nuisance.as_mut(),
        }
    }
}

/// Head cross-entropies measured before the discriminator update.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct HeadLosses {
    pub adversary: Option<f64>,
    pub nuisance: Option<f64>,
}

/// One step for each present head on `CE(s | z ⊙ m)`. The encoder is only
/// read, never differentiated.
pub fn discriminator_step(
    bundle: &mut ModelBundle,
    batch: &LabeledSet,
    masks: &MaskSample,
    opt: &mut PlayerOptimizers,
) -> Result<HeadLosses> {
    let z = bundle.encode(&batch.x)?;
    let mut out = HeadLosses::default();
    for head in [Head::Adversary, Head::Nuisance] {
        if bundle.head(head).is_none() {
            continue;
        }
        let masked = bundle.mask_latent(head, &z, Some(masks.for_head(head)))?;
        let net = bundle.head_mut(head).expect("head present");
        let (logits, cache) = net.forward_cached(&masked)?;
        let (ce, g) = softmax_cross_entropy(&logits, &batch.subjects)?;
        let (grads, _) = net.backward(&cache, &g)?;
        let state = opt
            .head(head)
            .ok_or_else(|| Error::State(format!("no optimizer state for the {head:?} head")))?;
        state.step_network(net, &grads)?;
        match head {
            Head::Adversary => out.adversary = Some(ce),
            Head::Nuisance => out.nuisance = Some(ce),
        }
    }
    Ok(out)
}

/// Components of the encoder-decoder objective on one batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CompositeLoss {
    pub total: f64,
    pub recon: f64,
    pub adv_ce: Option<f64>,
    pub nui_ce: Option<f64>,
}

struct Players<'a> {
    encoder: &'a Network,
    decoder: &'a Network,
    adversary: Option<&'a Network>,
    nuisance: Option<&'a Network>,
}

fn players(bundle: &ModelBundle) -> Players<'_> {
    Players {
        encoder: &bundle.encoder,
        decoder: &bundle.decoder,
        adversary: bundle.adversary.as_ref(),
        nuisance: bundle.nuisance.as_ref(),
    }
}

/// Loss and gradients w.r.t. encoder and decoder. A head term is skipped
/// entirely when its weight is zero, so λ = 0 reproduces the plain
/// reconstruction update exactly.
fn composite_forward_backward(
    bundle: &ModelBundle,
    p: &Players<'_>,
    batch: &LabeledSet,
    masks: &MaskSample,
    lambda_a: f64,
    lambda_n: f64,
    want_grads: bool,
) -> Result<(CompositeLoss, Option<(NetworkGrads, NetworkGrads)>)> {
    let d = bundle.dims.d;
    let (z, enc_cache) = p.encoder.forward_cached(&batch.x)?;
    let dec_in = bundle.decoder_input(&z, Some(&batch.subjects))?;
    let (xhat, dec_cache) = p.decoder.forward_cached(&dec_in)?;
    let (recon, g_xhat) = mse_loss(&xhat, &batch.x)?;
    let mut total = recon;
    let mut loss = CompositeLoss { total, recon, adv_ce: None, nui_ce: None };

    let mut g_z = None;
    let mut dec_grads = None;
    if want_grads {
        let (gd, g_in) = p.decoder.backward(&dec_cache, &g_xhat)?;
        g_z = Some(g_in.slice_cols(0, d)?);
        dec_grads = Some(gd);
    }

    for (head, net, weight) in [
        (Head::Adversary, p.adversary, -lambda_a),
        (Head::Nuisance, p.nuisance, lambda_n),
    ] {
        let Some(net) = net else { continue };
        if weight == 0.0 {
            continue;
        }
        let mask = masks.for_head(head);
        let (logits, cache) = net.forward_cached(&z.hadamard(mask)?)?;
        let (ce, g) = softmax_cross_entropy(&logits, &batch.subjects)?;
        total += weight * ce;
        match head {
            Head::Adversary => loss.adv_ce = Some(ce),
            Head::Nuisance => loss.nui_ce = Some(ce),
        }
        if let Some(gz) = g_z.as_mut() {
            let (_, g_masked) = net.backward(&cache, &g)?;
            gz.add_assign_scaled(&g_masked.hadamard(mask)?, weight)?;
        }
    }
    loss.total = total;
    if !total.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite composite loss: recon={recon}, adversary_ce={:?}, nuisance_ce={:?}",
            loss.adv_ce, loss.nui_ce
        )));
    }
    let grads = match (g_z, dec_grads) {
        (Some(gz), Some(gd)) => Some((p.encoder.backward(&enc_cache, &gz)?.0, gd)),
        _ => None,
    };
    Ok((loss, grads))
}

/// Composite loss on a batch with fixed masks, without updating anything.
pub fn composite_loss(
    bundle: &ModelBundle,
    batch: &LabeledSet,
    masks: &MaskSample,
    lambda_a: f64,
    lambda_n: f64,
) -> Result<CompositeLoss> {
    Ok(composite_forward_backward(bundle, &players(bundle), batch, masks, lambda_a, lambda_n, false)?.0)
}

/// Analytic gradients of the composite loss, encoder first then decoder.
pub fn composite_gradients(
    bundle: &ModelBundle,
    batch: &LabeledSet,
    masks: &MaskSample,
    lambda_a: f64,
    lambda_n: f64,
) -> Result<(CompositeLoss, NetworkGrads, NetworkGrads)> {
    let (loss, grads) =
        composite_forward_backward(bundle, &players(bundle), batch, masks, lambda_a, lambda_n, true)?;
    let (ge, gd) = grads.expect("gradients requested");
    Ok((loss, ge, gd))
}

/// One step on encoder and decoder. Heads are only read.
pub fn encoder_decoder_step(
    bundle: &mut ModelBundle,
    batch: &LabeledSet,
    masks: &MaskSample,
    config: &TrainConfig,
    opt: &mut PlayerOptimizers,
) -> Result<CompositeLoss> {
    let (loss, ge, gd) = composite_gradients(bundle, batch, masks, config.lambda_a, config.lambda_n)?;
    opt.encoder.step_network(&mut bundle.encoder, &ge)?;
    opt.decoder.step_network(&mut bundle.decoder, &gd)?;
    Ok(loss)
}

/// Finite-difference check of the composite gradient w.r.t. encoder and
/// decoder parameters with the masks held fixed.
pub fn check_composite_gradient(
    bundle: &ModelBundle,
    batch: &LabeledSet,
    masks: &MaskSample,
    lambda_a: f64,
    lambda_n: f64,
    h: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let (_, ge, gd) = composite_gradients(bundle, batch, masks, lambda_a, lambda_n)?;
    let mut analytic = ge.flatten();
    analytic.extend(gd.flatten());
    let (mut encoder, mut decoder) = (bundle.encoder.clone(), bundle.decoder.clone());
    let mut group = NetworkGroup(vec![&mut encoder, &mut decoder]);
    let report = grad_check(
        "composite",
        &mut group,
        &analytic,
        |g: &NetworkGroup<'_>| {
            let p = Players {
                encoder: &*g.0[0],
                decoder: &*g.0[1],
                adversary: bundle.adversary.as_ref(),
                nuisance: bundle.nuisance.as_ref(),
            };
            composite_forward_backward(bundle, &p, batch, masks, lambda_a, lambda_n, false)
                .map(|(l, _)| l.total)
                .unwrap_or(f64::NAN)
        },
        h,
        tolerance,
    );
    Ok(report)
}

/// Accuracy of each present head on `set`, using the expectation mask.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorAccuracy {
    pub adversary: Option<f64>,
    pub nuisance: Option<f64>,
}

pub fn evaluate_discriminators(bundle: &ModelBundle, set: &LabeledSet) -> Result<DiscriminatorAccuracy> {
    let mut out = DiscriminatorAccuracy::default();
    if set.is_empty() {
        return Ok(out);
    }
    let z = bundle.encode(&set.x)?;
    for head in [Head::Adversary, Head::Nuisance] {
        if bundle.head(head).is_none() {
            continue;
        }
        let pred = bundle.discriminate(head, &z, None)?.argmax_rows();
        let acc = accuracy(&pred, &set.subjects);
        match head {
            Head::Adversary => out.adversary = Some(acc),
            Head::Nuisance => out.nuisance = Some(acc),
        }
    }
    Ok(out)
}

fn batch_order(n: usize, batch: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch).map(<[usize]>::to_vec).collect()
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn mean_opt(v: &[Option<f64>]) -> Option<f64> {
    let xs: Vec<f64> = v.iter().flatten().copied().collect();
    (!xs.is_empty()).then(|| mean(&xs))
}

/// Trains encoder, decoder and heads in place and returns the per-epoch log.
///
/// Logged losses are minibatch means over the epoch; head accuracies are
/// measured on `val` with the expectation mask.
pub fn train_feature_extractor(
    bundle: &mut ModelBundle,
    train: &LabeledSet,
    val: &LabeledSet,
    config: &TrainConfig,
) -> Result<TrainLog> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Argument("training set is empty".into()));
    }
    if train.x.cols() != bundle.dims.c {
        return Err(Error::dim("train_feature_extractor", bundle.dims.c, train.x.cols()));
    }
    let mut opt = PlayerOptimizers::new(config.optimizer, bundle);
    let mut shuffle_rng = stream(config.seed, STREAM_SHUFFLE);
    let mut mask_rng = stream(config.seed, STREAM_MASKS);
    let start = Instant::now();
    let mut log = TrainLog::default();
    for epoch in 1..=config.epochs {
        let mut totals = Vec::new();
        let mut recons = Vec::new();
        let mut adv = Vec::new();
        let mut nui = Vec::new();
        for idx in batch_order(train.len(), config.batch_size, &mut shuffle_rng) {
            let batch = train.rows(&idx);
            let masks = match &bundle.schedule {
                Some(s) => s.sample_mask(batch.len(), &mut mask_rng),
                None => {
                    let empty = Matrix::zeros(batch.len(), bundle.dims.d);
                    MaskSample { mask_a: empty.clone(), mask_n: empty }
                }
            };
            let heads = discriminator_step(bundle, &batch, &masks, &mut opt)?;
            let loss = encoder_decoder_step(bundle, &batch, &masks, config, &mut opt)?;
            totals.push(loss.total);
            recons.push(loss.recon);
            adv.push(heads.adversary);
            nui.push(heads.nuisance);
        }
        let acc = evaluate_discriminators(bundle, val)?;
        let record = EpochRecord {
            epoch,
            total: mean(&totals),
            recon: mean(&recons),
            adv_ce: mean_opt(&adv),
            nui_ce: mean_opt(&nui),
            adv_acc: acc.adversary,
            nui_acc: acc.nuisance,
            wall_time: start.elapsed().as_secs_f64(),
        };
        if config.log_every > 0 && epoch % config.log_every == 0 {
            println!(
                "[{}] epoch {epoch:>3} total {:.4} recon {:.4}",
                bundle.variant, record.total, record.recon
            );
        }
        log.epochs.push(record);
    }
    Ok(log)
}

/// A task classifier over frozen latents.
#[derive(Debug, Clone, PartialEq)]
pub enum TaskClassifier {
    Mlp(Network),
    Shallow(FittedClassifier),
}

impl TaskClassifier {
    pub fn predict(&self, z: &Matrix) -> Result<Vec<usize>> {
        match self {
            TaskClassifier::Mlp(net) => Ok(net.forward(z)?.argmax_rows()),
            TaskClassifier::Shallow(f) => f.predict(z),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedClassifier {
    pub classifier: TaskClassifier,
    pub val_accuracy: f64,
    /// Per-epoch training cross-entropy for the MLP, empty otherwise.
    pub loss_history: Vec<f64>,
}

/// Fits a task classifier on `z = g(X)` from the frozen encoder. The MLP
/// starts from the bundle's initialized classifier network.
pub fn train_classifier(
    bundle: &ModelBundle,
    kind: &ClassifierKind,
    train: &LabeledSet,
    val: &LabeledSet,
    config: &TrainConfig,
) -> Result<TrainedClassifier> {
    kind.validate()?;
    if train.is_empty() {
        return Err(Error::Argument("classifier training set is empty".into()));
    }
    let z = bundle.encode(&train.x)?;
    let (classifier, loss_history) = match kind {
        ClassifierKind::Mlp => {
            let mut net = bundle.classifier.clone();
            let mut opt = OptimizerState::for_network(config.optimizer, &net);
            let mut rng = stream(config.seed, STREAM_CLASSIFIER_SHUFFLE);
            let mut history = Vec::with_capacity(config.classifier_epochs);
            for _ in 0..config.classifier_epochs {
                let mut losses = Vec::new();
                for idx in batch_order(z.rows(), config.batch_size, &mut rng) {
                    let zb = z.select_rows(&idx);
                    let yb: Vec<usize> = idx.iter().map(|&i| train.labels[i]).collect();
                    let (logits, cache) = net.forward_cached(&zb)?;
                    let (ce, g) = softmax_cross_entropy(&logits, &yb)?;
                    let (grads, _) = net.backward(&cache, &g)?;
                    opt.step_network(&mut net, &grads)?;
                    losses.push(ce);
                }
                history.push(mean(&losses));
            }
            (TaskClassifier::Mlp(net), history)
        }
        other => {
            let fitted = classifiers::fit(other, &z, &train.labels, bundle.dims.l)?;
            let history = fitted.loss_history().to_vec();
            (TaskClassifier::Shallow(fitted), history)
        }
    };
    let val_accuracy = if val.is_empty() {
        f64::NAN
    } else {
        accuracy(&classifier.predict(&bundle.encode(&val.x)?)?, &val.labels)
    };
    Ok(TrainedClassifier { classifier, val_accuracy, loss_history })
}

/// Task accuracy of `classifier` on `set` through the frozen encoder.
pub fn evaluate_classifier(bundle: &ModelBundle, classifier: &TaskClassifier, set: &LabeledSet) -> Result<f64> {
    let z = bundle.encode(&set.x)?;
    Ok(accuracy(&classifier.predict(&z)?, &set.labels))
}
