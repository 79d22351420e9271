//! Central finite-difference gradient checking.
//!
//! The checker never looks at how analytic gradients were produced; it only
//! perturbs parameters through [`ParamAccess`] and re-evaluates a loss closure.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::linalg::Matrix;
use crate::model::{build_model, Dims, ModelVariant, ScheduleParams};
use crate::nn::{mse_loss, softmax_cross_entropy, Activation, DenseLayer, Network};
use crate::schedule::Head;
use crate::train::{check_composite_gradient, LabeledSet};

/// Flat, indexable access to a model's parameters.
pub trait ParamAccess {
    fn param_len(&self) -> usize;
    fn param(&self, i: usize) -> f64;
    fn set_param(&mut self, i: usize, v: f64);
    fn param_name(&self, i: usize) -> String;
}

impl ParamAccess for Network {
    fn param_len(&self) -> usize {
        self.param_count()
    }
    fn param(&self, i: usize) -> f64 {
        Network::param(self, i)
    }
    fn set_param(&mut self, i: usize, v: f64) {
        Network::set_param(self, i, v)
    }
    fn param_name(&self, i: usize) -> String {
        Network::param_name(self, i)
    }
}

/// Several networks viewed as one parameter vector, in order.
pub struct NetworkGroup<'a>(pub Vec<&'a mut Network>);

impl NetworkGroup<'_> {
    fn locate(&self, mut i: usize) -> (usize, usize) {
        for (k, n) in self.0.iter().enumerate() {
            let c = n.param_count();
            if i < c {
                return (k, i);
            }
            i -= c;
        }
        panic!("parameter index out of range");
    }
}

impl ParamAccess for NetworkGroup<'_> {
    fn param_len(&self) -> usize {
        self.0.iter().map(|n| n.param_count()).sum()
    }
    fn param(&self, i: usize) -> f64 {
        let (k, j) = self.locate(i);
        self.0[k].param(j)
    }
    fn set_param(&mut self, i: usize, v: f64) {
        let (k, j) = self.locate(i);
        self.0[k].set_param(j, v)
    }
    fn param_name(&self, i: usize) -> String {
        let (k, j) = self.locate(i);
        self.0[k].param_name(j)
    }
}

pub const DEFAULT_STEP: f64 = 1e-4;

/// Gradients smaller than this are compared in absolute terms.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckEntry {
    pub name: String,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub label: String,
    pub entries: Vec<GradCheckEntry>,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&GradCheckEntry> {
        self.entries
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
    (analytic - numeric).abs() / scale
}

/// Compares `analytic` against central differences of `loss` with step `h`.
///
/// `loss` is evaluated with the model's parameters perturbed in place; every
/// parameter is restored before returning.
pub fn grad_check<M, F>(
    label: &str,
    model: &mut M,
    analytic: &[f64],
    mut loss: F,
    h: f64,
    tolerance: f64,
) -> GradCheckReport
where
    M: ParamAccess + ?Sized,
    F: FnMut(&M) -> f64,
{
    assert_eq!(
        analytic.len(),
        model.param_len(),
        "analytic gradient length must match parameter count"
    );
    let mut entries = Vec::with_capacity(analytic.len());
    let mut max_rel: f64 = 0.0;
    for (i, &a) in analytic.iter().enumerate() {
        let w = model.param(i);
        model.set_param(i, w + h);
        let up = loss(model);
        model.set_param(i, w - h);
        let down = loss(model);
        model.set_param(i, w);
        let numeric = (up - down) / (2.0 * h);
        let rel = relative_error(a, numeric);
        let rel = if rel.is_nan() { f64::INFINITY } else { rel };
        max_rel = max_rel.max(rel);
        entries.push(GradCheckEntry {
            name: model.param_name(i),
            analytic: a,
            numeric,
            rel_error: rel,
        });
    }
    GradCheckReport {
        label: label.to_string(),
        entries,
        max_rel_error: max_rel,
        tolerance,
        passed: max_rel <= tolerance,
    }
}

fn uniform(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
        .expect("shape matches")
}

// Zero biases can put ReLU pre-activations exactly on the kink.
fn randomize_biases(net: &mut Network, rng: &mut ChaCha8Rng) {
    for layer in &mut net.layers {
        layer.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
    }
}

fn check_net<F>(label: &str, net: &Network, input: &Matrix, loss: F, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&Matrix) -> Result<(f64, Matrix)>,
{
    let (out, cache) = net.forward_cached(input)?;
    let (_, upstream) = loss(&out)?;
    let analytic = net.backward(&cache, &upstream)?.0.flatten();
    let mut probe = net.clone();
    Ok(grad_check(
        label,
        &mut probe,
        &analytic,
        |n: &Network| n.forward(input).and_then(|o| loss(&o)).map(|(l, _)| l).unwrap_or(f64::NAN),
        h,
        tol,
    ))
}

/// Checks every layer kind, each loss and the full encoder-decoder objective
/// (λ_A = 0.5, λ_N = 0.05, fixed masks) on small randomized networks.
pub fn standard_suite(tolerance: f64, seed: u64) -> Result<Vec<GradCheckReport>> {
    let h = DEFAULT_STEP;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = Dims { c: 4, d: 5, s: 4, l: 3 };
    let n = 12;
    let x = uniform(n, dims.c, &mut rng);
    let subjects: Vec<usize> = (0..n).map(|i| i % dims.s).collect();
    let labels: Vec<usize> = (0..n).map(|i| (i * 7) % dims.l).collect();
    let mut out = Vec::new();

    let mut lin = Network::mlp("linear", &[4, 3], Activation::Identity, &mut rng)?;
    randomize_biases(&mut lin, &mut rng);
    let t3 = uniform(n, 3, &mut rng);
    out.push(check_net("dense identity + mse", &lin, &x, |o| mse_loss(o, &t3), h, tolerance)?);
    let mut relu = Network {
        name: "relu".into(),
        layers: vec![DenseLayer::new(4, 6, Activation::Relu, &mut rng)?],
    };
    randomize_biases(&mut relu, &mut rng);
    let t6 = uniform(n, 6, &mut rng);
    out.push(check_net("dense relu + mse", &relu, &x, |o| mse_loss(o, &t6), h, tolerance)?);
    out.push(check_net("softmax cross-entropy", &lin, &x, |o| softmax_cross_entropy(o, &labels), h, tolerance)?);

    let mut bundle = build_model(ModelVariant::DaCRae, dims, ScheduleParams::default(), seed)?;
    for net in [&mut bundle.encoder, &mut bundle.decoder, &mut bundle.classifier] {
        randomize_biases(net, &mut rng);
    }
    for net in [bundle.adversary.as_mut(), bundle.nuisance.as_mut()].into_iter().flatten() {
        randomize_biases(net, &mut rng);
    }
    let sched = bundle.schedule.as_ref().expect("soft schedule");
    let masks = sched.sample_mask(n, &mut rng);
    let tz = uniform(n, dims.d, &mut rng);
    out.push(check_net("encoder + mse", &bundle.encoder, &x, |o| mse_loss(o, &tz), h, tolerance)?);
    let z = bundle.encode(&x)?;
    let dec_in = bundle.decoder_input(&z, Some(&subjects))?;
    out.push(check_net("conditional decoder + mse", &bundle.decoder, &dec_in, |o| mse_loss(o, &x), h, tolerance)?);
    for (head, net) in [
        (Head::Adversary, bundle.adversary.as_ref()),
        (Head::Nuisance, bundle.nuisance.as_ref()),
    ] {
        let net = net.expect("DA-cRAE has both heads");
        let masked = z.hadamard(masks.for_head(head))?;
        let label = format!("{} head + masked cross-entropy", format!("{head:?}").to_lowercase());
        out.push(check_net(&label, net, &masked, |o| softmax_cross_entropy(o, &subjects), h, tolerance)?);
    }
    out.push(check_net(
        "task classifier + cross-entropy",
        &bundle.classifier,
        &z,
        |o| softmax_cross_entropy(o, &labels),
        h,
        tolerance,
    )?);

    let batch = LabeledSet { x, subjects, labels };
    let mut composite = check_composite_gradient(&bundle, &batch, &masks, 0.5, 0.05, h, tolerance)?;
    composite.label = "composite objective (0.5, 0.05)".into();
    out.push(composite);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (Network, Matrix, Matrix) {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let net = Network::mlp("net", &[3, 5, 2], Activation::Relu, &mut rng).unwrap();
        let x = Matrix::from_vec(4, 3, (0..12).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let y = Matrix::from_vec(4, 2, (0..8).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        (net, x, y)
    }

    fn analytic(net: &Network, x: &Matrix, y: &Matrix) -> Vec<f64> {
        let (out, cache) = net.forward_cached(x).unwrap();
        let (_, g) = mse_loss(&out, y).unwrap();
        net.backward(&cache, &g).unwrap().0.flatten()
    }

    #[test]
    fn passes_on_correct_gradient() {
        let (mut net, x, y) = setup();
        let a = analytic(&net, &x, &y);
        let r = grad_check("mlp", &mut net, &a, |n| mse_loss(&n.forward(&x).unwrap(), &y).unwrap().0, DEFAULT_STEP, 1e-5);
        assert!(r.passed, "max rel {}", r.max_rel_error);
    }

    #[test]
    fn fails_on_corrupted_gradient() {
        let (mut net, x, y) = setup();
        let a: Vec<f64> = analytic(&net, &x, &y).iter().map(|g| g * 1.01).collect();
        let r = grad_check("mlp", &mut net, &a, |n| mse_loss(&n.forward(&x).unwrap(), &y).unwrap().0, DEFAULT_STEP, 1e-5);
        assert!(!r.passed);
    }

    #[test]
    fn suite_passes_and_stays_small() {
        let reports = standard_suite(1e-5, 3).unwrap();
        assert_eq!(reports.len(), 9);
        for r in &reports {
            assert!(r.passed, "{}: {:?}", r.label, r.worst());
            assert!(r.entries.len() <= 500);
        }
    }

    #[test]
    fn restores_parameters() {
        let (mut net, x, y) = setup();
        let before = net.clone();
        let a = analytic(&net, &x, &y);
        grad_check("mlp", &mut net, &a, |n| mse_loss(&n.forward(&x).unwrap(), &y).unwrap().0, DEFAULT_STEP, 1e-5);
        assert_eq!(net, before);
    }
}
