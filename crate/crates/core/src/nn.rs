//! Dense layers, small feed-forward networks, losses and optimizers.
//!
//! Backpropagation is explicit: a forward pass returns a cache that the
//! matching backward pass consumes. Parameters are addressed by name
//! (`encoder.W1`, `encoder.b1`, ...) so numeric failures can point at the
//! offending tensor.

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
        }
    }

    #[inline]
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// `y = activation(x·Wᵀ + b)` with `W` stored out × in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

/// What a forward pass leaves behind for the backward pass.
#[derive(Debug, Clone)]
pub struct LayerCache {
    input: Matrix,
    pre_activation: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    /// Glorot-uniform weights, zero bias.
    pub fn new<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::Argument("layer dims must be > 0".into()));
        }
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit)
            .map_err(|e| Error::Argument(format!("init range: {e}")))?;
        let data = (0..in_dim * out_dim).map(|_| dist.sample(rng)).collect();
        Ok(Self {
            weights: Matrix::from_vec(out_dim, in_dim, data)?,
            bias: vec![0.0; out_dim],
            activation,
        })
    }

    pub fn from_parts(weights: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(Error::dim("DenseLayer::from_parts", weights.rows(), bias.len()));
        }
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    #[inline]
    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    #[inline]
    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn param_count(&self) -> usize {
        self.weights.rows() * self.weights.cols() + self.bias.len()
    }

    fn affine(&self, input: &Matrix) -> Result<Matrix> {
        if input.cols() != self.in_dim() {
            return Err(Error::dim("dense_forward", self.in_dim(), input.cols()));
        }
        let mut pre = input.matmul_t(&self.weights)?;
        for r in 0..pre.rows() {
            for (x, b) in pre.row_mut(r).iter_mut().zip(&self.bias) {
                *x += b;
            }
        }
        Ok(pre)
    }

    /// Inference-only forward pass.
    pub fn forward(&self, input: &Matrix) -> Result<Matrix> {
        let act = self.activation;
        Ok(self.affine(input)?.map(|x| act.apply(x)))
    }

    /// Forward pass keeping the pre-activation for [`DenseLayer::backward`].
    pub fn forward_cached(&self, input: &Matrix) -> Result<(Matrix, LayerCache)> {
        let pre = self.affine(input)?;
        let act = self.activation;
        let out = pre.map(|x| act.apply(x));
        Ok((
            out,
            LayerCache {
                input: input.clone(),
                pre_activation: pre,
            },
        ))
    }

    /// Returns parameter gradients and the gradient with respect to the input.
    pub fn backward(
        &self,
        cache: Option<&LayerCache>,
        upstream: &Matrix,
    ) -> Result<(LayerGrads, Matrix)> {
        let cache = cache.ok_or_else(|| Error::State("backward called without a forward cache".into()))?;
        if cache.input.cols() != self.in_dim() || cache.pre_activation.cols() != self.out_dim() {
            return Err(Error::State(format!(
                "forward cache shaped {:?}->{:?} does not belong to a {}x{} layer",
                cache.input.shape(),
                cache.pre_activation.shape(),
                self.in_dim(),
                self.out_dim()
            )));
        }
        if upstream.shape() != cache.pre_activation.shape() {
            return Err(Error::dim(
                "dense_backward",
                format!("{:?}", cache.pre_activation.shape()),
                format!("{:?}", upstream.shape()),
            ));
        }
        let mut delta = upstream.clone();
        if self.activation != Activation::Identity {
            for (d, &p) in delta
                .as_mut_slice()
                .iter_mut()
                .zip(cache.pre_activation.as_slice())
            {
                *d *= self.activation.derivative(p);
            }
        }
        let weights = delta.t_matmul(&cache.input)?;
        let mut bias = vec![0.0; self.out_dim()];
        for r in 0..delta.rows() {
            for (b, d) in bias.iter_mut().zip(delta.row(r)) {
                *b += d;
            }
        }
        let input_grad = delta.matmul(&self.weights)?;
        Ok((LayerGrads { weights, bias }, input_grad))
    }
}

/// A named stack of dense layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub name: String,
    pub layers: Vec<DenseLayer>,
}

#[derive(Debug, Clone)]
pub struct NetworkCache {
    layers: Vec<LayerCache>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGrads {
    pub layers: Vec<LayerGrads>,
}

impl NetworkGrads {
    /// Flattened in parameter order: per layer, weights row-major then bias.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in &self.layers {
            out.extend_from_slice(g.weights.as_slice());
            out.extend_from_slice(&g.bias);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|g| g.weights.is_finite() && g.bias.iter().all(|b| b.is_finite()))
    }
}

impl Network {
    /// Builds `widths.len() - 1` layers; every layer but the last uses `hidden`.
    pub fn mlp<R: Rng + ?Sized>(
        name: &str,
        widths: &[usize],
        hidden: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Argument("a network needs at least two widths".into()));
        }
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i == last { Activation::Identity } else { hidden };
                DenseLayer::new(w[0], w[1], act, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            name: name.to_string(),
            layers,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, DenseLayer::in_dim)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, DenseLayer::out_dim)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }

    pub fn forward(&self, input: &Matrix) -> Result<Matrix> {
        let mut x = input.clone();
        for l in &self.layers {
            x = l.forward(&x)?;
        }
        Ok(x)
    }

    pub fn forward_cached(&self, input: &Matrix) -> Result<(Matrix, NetworkCache)> {
        let mut x = input.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let (y, c) = l.forward_cached(&x)?;
            caches.push(c);
            x = y;
        }
        Ok((x, NetworkCache { layers: caches }))
    }

    pub fn backward(&self, cache: &NetworkCache, upstream: &Matrix) -> Result<(NetworkGrads, Matrix)> {
        if cache.layers.len() != self.layers.len() {
            return Err(Error::State(format!(
                "{}: cache has {} layers, network has {}",
                self.name,
                cache.layers.len(),
                self.layers.len()
            )));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = upstream.clone();
        for (l, c) in self.layers.iter().zip(&cache.layers).rev() {
            let (lg, ig) = l.backward(Some(c), &g)?;
            grads.push(lg);
            g = ig;
        }
        grads.reverse();
        Ok((NetworkGrads { layers: grads }, g))
    }

    /// `(name, values)` for every tensor, in parameter order.
    pub fn named_tensors(&self) -> Vec<(String, &[f64], (usize, usize))> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for (i, l) in self.layers.iter().enumerate() {
            out.push((
                format!("{}.W{}", self.name, i + 1),
                l.weights.as_slice(),
                l.weights.shape(),
            ));
            out.push((format!("{}.b{}", self.name, i + 1), &l.bias[..], (l.bias.len(), 1)));
        }
        out
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.named_tensors()
            .into_iter()
            .flat_map(|(_, v, _)| v.iter().copied())
            .collect()
    }

    fn param_slot(&mut self, mut i: usize) -> &mut f64 {
        for l in &mut self.layers {
            let nw = l.weights.rows() * l.weights.cols();
            if i < nw {
                return &mut l.weights.as_mut_slice()[i];
            }
            i -= nw;
            if i < l.bias.len() {
                return &mut l.bias[i];
            }
            i -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    pub fn param(&self, i: usize) -> f64 {
        // param_slot needs &mut; duplicate the walk for the shared case
        let mut i = i;
        for l in &self.layers {
            let nw = l.weights.rows() * l.weights.cols();
            if i < nw {
                return l.weights.as_slice()[i];
            }
            i -= nw;
            if i < l.bias.len() {
                return l.bias[i];
            }
            i -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    pub fn set_param(&mut self, i: usize, v: f64) {
        *self.param_slot(i) = v;
    }

    pub fn param_name(&self, mut i: usize) -> String {
        for (k, l) in self.layers.iter().enumerate() {
            let nw = l.weights.rows() * l.weights.cols();
            if i < nw {
                return format!("{}.W{}[{}]", self.name, k + 1, i);
            }
            i -= nw;
            if i < l.bias.len() {
                return format!("{}.b{}[{}]", self.name, k + 1, i);
            }
            i -= l.bias.len();
        }
        format!("{}[?]", self.name)
    }
}

/// Mean cross-entropy of `softmax(logits)` against class indices.
///
/// Returns the loss and its gradient with respect to the logits,
/// `(softmax - onehot) / batch`.
pub fn softmax_cross_entropy(logits: &Matrix, targets: &[usize]) -> Result<(f64, Matrix)> {
    let (n, k) = logits.shape();
    if targets.len() != n {
        return Err(Error::dim("softmax_cross_entropy", n, targets.len()));
    }
    if n == 0 {
        return Err(Error::Argument("empty batch".into()));
    }
    let mut grad = Matrix::zeros(n, k);
    let mut loss = 0.0;
    let inv_n = 1.0 / n as f64;
    for (r, &t) in targets.iter().enumerate() {
        if t >= k {
            return Err(Error::Argument(format!(
                "target {t} out of range for {k} classes (row {r})"
            )));
        }
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for &v in row {
            z += (v - max).exp();
        }
        let log_z = z.ln() + max;
        loss += log_z - row[t];
        let g = grad.row_mut(r);
        for (gj, &v) in g.iter_mut().zip(row) {
            *gj = (v - log_z).exp() * inv_n;
        }
        g[t] -= inv_n;
    }
    Ok((loss * inv_n, grad))
}

/// Mean squared error over all elements, with gradient `2 (pred - target) / elements`.
pub fn mse_loss(pred: &Matrix, target: &Matrix) -> Result<(f64, Matrix)> {
    if pred.shape() != target.shape() {
        return Err(Error::dim(
            "mse_loss",
            format!("{:?}", target.shape()),
            format!("{:?}", pred.shape()),
        ));
    }
    let m = (pred.rows() * pred.cols()) as f64;
    if m == 0.0 {
        return Err(Error::Argument("empty prediction".into()));
    }
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(pred.rows(), pred.cols());
    for ((g, &p), &t) in grad
        .as_mut_slice()
        .iter_mut()
        .zip(pred.as_slice())
        .zip(target.as_slice())
    {
        let d = p - t;
        loss += d * d;
        *g = 2.0 * d / m;
    }
    Ok((loss / m, grad))
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    hits as f64 / truth.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    PlainSgd,
    AdaptiveMoment,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::AdaptiveMoment,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn sgd(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::PlainSgd,
            lr,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("moment decay rates must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Per-tensor moment accumulators mirroring a parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    steps: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig, tensor_sizes: &[usize]) -> Self {
        let (first, second) = match config.kind {
            OptimizerKind::PlainSgd => (Vec::new(), Vec::new()),
            OptimizerKind::AdaptiveMoment => (
                tensor_sizes.iter().map(|&n| vec![0.0; n]).collect(),
                tensor_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            ),
        };
        Self {
            config,
            steps: 0,
            first,
            second,
        }
    }

    pub fn for_network(config: OptimizerConfig, net: &Network) -> Self {
        let sizes: Vec<usize> = net
            .layers
            .iter()
            .flat_map(|l| [l.weights.rows() * l.weights.cols(), l.bias.len()])
            .collect();
        Self::new(config, &sizes)
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One update over named tensors. All gradients are checked for
    /// finiteness before any parameter is touched.
    pub fn step_tensors(&mut self, tensors: &mut [(&str, &mut [f64], &[f64])]) -> Result<()> {
        for (name, p, g) in tensors.iter() {
            if p.len() != g.len() {
                return Err(Error::dim("optimizer_step", p.len(), g.len()));
            }
            if let Some(j) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("non-finite gradient in {name}[{j}]")));
            }
        }
        let cfg = self.config;
        match cfg.kind {
            OptimizerKind::PlainSgd => {
                for (_, p, g) in tensors.iter_mut() {
                    for (w, &gi) in p.iter_mut().zip(g.iter()) {
                        *w -= cfg.lr * gi;
                    }
                }
            }
            OptimizerKind::AdaptiveMoment => {
                if self.first.len() != tensors.len() {
                    return Err(Error::State(format!(
                        "optimizer tracks {} tensors, got {}",
                        self.first.len(),
                        tensors.len()
                    )));
                }
                self.steps += 1;
                let t = self.steps as i32;
                let bc1 = 1.0 - cfg.beta1.powi(t);
                let bc2 = 1.0 - cfg.beta2.powi(t);
                for (k, (_, p, g)) in tensors.iter_mut().enumerate() {
                    let m = &mut self.first[k];
                    let v = &mut self.second[k];
                    if m.len() != p.len() {
                        return Err(Error::State("moment shape does not mirror parameters".into()));
                    }
                    for j in 0..p.len() {
                        let gj = g[j];
                        m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
                        v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
                        let mhat = m[j] / bc1;
                        let vhat = v[j] / bc2;
                        p[j] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
                    }
                }
                return Ok(());
            }
        }
        self.steps += 1;
        Ok(())
    }

    pub fn step_network(&mut self, net: &mut Network, grads: &NetworkGrads) -> Result<()> {
        if grads.layers.len() != net.layers.len() {
            return Err(Error::dim("optimizer_step", net.layers.len(), grads.layers.len()));
        }
        let names: Vec<(String, String)> = (1..=net.layers.len())
            .map(|i| (format!("{}.W{i}", net.name), format!("{}.b{i}", net.name)))
            .collect();
        let mut tensors: Vec<(&str, &mut [f64], &[f64])> = Vec::with_capacity(net.layers.len() * 2);
        for ((l, g), (wn, bn)) in net.layers.iter_mut().zip(&grads.layers).zip(&names) {
            tensors.push((wn.as_str(), l.weights.as_mut_slice(), g.weights.as_slice()));
            tensors.push((bn.as_str(), &mut l.bias[..], &g.bias[..]));
        }
        self.step_tensors(&mut tensors)
    }
}
