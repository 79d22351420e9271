//! Non-neural task classifiers over frozen latents.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::softmax_cross_entropy;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ClassifierKind {
    /// Trained by the adversarial trainer's classifier stage.
    Mlp,
    Knn { k: usize },
    Tree { max_depth: usize, min_leaf: usize },
    Lda { shrinkage: f64 },
    Logreg { l2: f64, iterations: usize, step: f64 },
}

impl ClassifierKind {
    pub fn knn() -> Self {
        ClassifierKind::Knn { k: 5 }
    }
    pub fn tree() -> Self {
        ClassifierKind::Tree { max_depth: 10, min_leaf: 2 }
    }
    pub fn lda() -> Self {
        ClassifierKind::Lda { shrinkage: 1e-3 }
    }
    pub fn logreg() -> Self {
        ClassifierKind::Logreg { l2: 1e-4, iterations: 500, step: 0.1 }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            ClassifierKind::Mlp => "mlp",
            ClassifierKind::Knn { .. } => "knn",
            ClassifierKind::Tree { .. } => "tree",
            ClassifierKind::Lda { .. } => "lda",
            ClassifierKind::Logreg { .. } => "logreg",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            ClassifierKind::Mlp => true,
            ClassifierKind::Knn { k } => k >= 1,
            ClassifierKind::Tree { max_depth, min_leaf } => max_depth >= 1 && min_leaf >= 1,
            ClassifierKind::Lda { shrinkage } => shrinkage >= 0.0 && shrinkage.is_finite(),
            ClassifierKind::Logreg { l2, iterations, step } => {
                l2 >= 0.0 && iterations >= 1 && step > 0.0 && step.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid classifier hyperparameters: {self:?}")))
        }
    }
}

impl fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for ClassifierKind {
    type Err = Error;

    /// Parses a tag with default hyperparameters.
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mlp" => Ok(ClassifierKind::Mlp),
            "knn" => Ok(ClassifierKind::knn()),
            "tree" => Ok(ClassifierKind::tree()),
            "lda" => Ok(ClassifierKind::lda()),
            "logreg" => Ok(ClassifierKind::logreg()),
            other => Err(Error::Config(format!("unknown classifier '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FittedClassifier {
    Knn {
        k: usize,
        points: Matrix,
        labels: Vec<usize>,
        classes: usize,
    },
    Tree {
        nodes: Vec<TreeNode>,
        dim: usize,
    },
    Lda {
        /// `Σ⁻¹ μ_c` per class, one row each
        coef: Matrix,
        intercept: Vec<f64>,
    },
    Logreg {
        mean: Vec<f64>,
        std: Vec<f64>,
        /// classes × (dim + 1), last column is the bias
        weights: Matrix,
        loss_history: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Leaf { label: usize },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

fn num_classes(labels: &[usize]) -> usize {
    labels.iter().max().map_or(0, |m| m + 1)
}

/// Fits a non-neural classifier. `classes` is the label range `0..classes`.
pub fn fit(kind: &ClassifierKind, latents: &Matrix, labels: &[usize], classes: usize) -> Result<FittedClassifier> {
    kind.validate()?;
    let n = latents.rows();
    if n == 0 {
        return Err(Error::Argument("cannot fit on an empty set".into()));
    }
    if labels.len() != n {
        return Err(Error::dim("fit labels", n, labels.len()));
    }
    if num_classes(labels) > classes {
        return Err(Error::Argument(format!("labels exceed {classes} classes")));
    }
    match *kind {
        ClassifierKind::Mlp => Err(Error::Config(
            "mlp classifiers are trained through the classifier stage, not fit()".into(),
        )),
        ClassifierKind::Knn { k } => Ok(FittedClassifier::Knn {
            k,
            points: latents.clone(),
            labels: labels.to_vec(),
            classes,
        }),
        ClassifierKind::Tree { max_depth, min_leaf } => Ok(fit_tree(latents, labels, classes, max_depth, min_leaf)),
        ClassifierKind::Lda { shrinkage } => fit_lda(latents, labels, classes, shrinkage),
        ClassifierKind::Logreg { l2, iterations, step } => fit_logreg(latents, labels, classes, l2, iterations, step),
    }
}

impl FittedClassifier {
    pub fn dim(&self) -> usize {
        match self {
            FittedClassifier::Knn { points, .. } => points.cols(),
            FittedClassifier::Tree { dim, .. } => *dim,
            FittedClassifier::Lda { coef, .. } => coef.cols(),
            FittedClassifier::Logreg { mean, .. } => mean.len(),
        }
    }

    pub fn predict(&self, latents: &Matrix) -> Result<Vec<usize>> {
        if latents.cols() != self.dim() {
            return Err(Error::Argument(format!(
                "query dimension {} does not match fitted dimension {}",
                latents.cols(),
                self.dim()
            )));
        }
        Ok((0..latents.rows()).map(|r| self.predict_one(latents.row(r))).collect())
    }

    fn predict_one(&self, q: &[f64]) -> usize {
        match self {
            FittedClassifier::Knn { k, points, labels, classes } => {
                let mut d: Vec<(f64, usize)> = (0..points.rows())
                    .map(|i| {
                        let dist = points.row(i).iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
                        (dist, i)
                    })
                    .collect();
                let k = (*k).min(d.len());
                d.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                let mut votes = vec![0usize; *classes];
                for &(_, i) in &d[..k] {
                    votes[labels[i]] += 1;
                }
                argmax_first(&votes)
            }
            FittedClassifier::Tree { nodes, .. } => {
                let mut at = 0;
                loop {
                    match &nodes[at] {
                        TreeNode::Leaf { label } => return *label,
                        TreeNode::Split { feature, threshold, left, right } => {
                            at = if q[*feature] <= *threshold { *left } else { *right };
                        }
                    }
                }
            }
            FittedClassifier::Lda { coef, intercept } => {
                let scores: Vec<f64> = (0..coef.rows())
                    .map(|c| intercept[c] + coef.row(c).iter().zip(q).map(|(a, b)| a * b).sum::<f64>())
                    .collect();
                argmax_first_f(&scores)
            }
            FittedClassifier::Logreg { mean, std, weights, .. } => {
                let d = mean.len();
                let scores: Vec<f64> = (0..weights.rows())
                    .map(|c| {
                        let w = weights.row(c);
                        w[d] + (0..d).map(|j| w[j] * (q[j] - mean[j]) / std[j]).sum::<f64>()
                    })
                    .collect();
                argmax_first_f(&scores)
            }
        }
    }

    /// Training-loss trajectory for logistic regression, empty otherwise.
    pub fn loss_history(&self) -> &[f64] {
        match self {
            FittedClassifier::Logreg { loss_history, .. } => loss_history,
            _ => &[],
        }
    }
}

fn argmax_first(v: &[usize]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn argmax_first_f(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn majority(labels: &[usize], idx: &[usize], classes: usize) -> usize {
    let mut votes = vec![0usize; classes.max(1)];
    for &i in idx {
        votes[labels[i]] += 1;
    }
    argmax_first(&votes)
}

fn gini(counts: &[usize], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

fn fit_tree(x: &Matrix, labels: &[usize], classes: usize, max_depth: usize, min_leaf: usize) -> FittedClassifier {
    let mut nodes = Vec::new();
    let idx: Vec<usize> = (0..x.rows()).collect();
    grow(x, labels, classes, idx, 0, max_depth, min_leaf, &mut nodes);
    FittedClassifier::Tree { nodes, dim: x.cols() }
}

#[allow(clippy::too_many_arguments)]
fn grow(
    x: &Matrix,
    labels: &[usize],
    classes: usize,
    idx: Vec<usize>,
    depth: usize,
    max_depth: usize,
    min_leaf: usize,
    nodes: &mut Vec<TreeNode>,
) -> usize {
    let at = nodes.len();
    nodes.push(TreeNode::Leaf { label: majority(labels, &idx, classes) });
    let n = idx.len();
    let mut counts = vec![0usize; classes];
    for &i in &idx {
        counts[labels[i]] += 1;
    }
    let parent = gini(&counts, n);
    if depth >= max_depth || parent == 0.0 || n < 2 * min_leaf {
        return at;
    }

    // (impurity, feature, threshold); strict improvement keeps the earliest
    let mut best: Option<(f64, usize, f64)> = None;
    let mut sorted = idx.clone();
    for f in 0..x.cols() {
        sorted.sort_by(|&a, &b| x.get(a, f).total_cmp(&x.get(b, f)).then(a.cmp(&b)));
        let mut left = vec![0usize; classes];
        let mut right = counts.clone();
        for k in 0..n - 1 {
            let lab = labels[sorted[k]];
            left[lab] += 1;
            right[lab] -= 1;
            let (v, next) = (x.get(sorted[k], f), x.get(sorted[k + 1], f));
            if v == next {
                continue;
            }
            let nl = k + 1;
            let nr = n - nl;
            if nl < min_leaf || nr < min_leaf {
                continue;
            }
            let imp = (nl as f64 * gini(&left, nl) + nr as f64 * gini(&right, nr)) / n as f64;
            if best.is_none_or(|(b, _, _)| imp < b - 1e-15) {
                best = Some((imp, f, 0.5 * (v + next)));
            }
        }
    }
    let Some((imp, feature, threshold)) = best else {
        return at;
    };
    if imp > parent + 1e-15 {
        return at;
    }
    let (li, ri): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| x.get(i, feature) <= threshold);
    let left = grow(x, labels, classes, li, depth + 1, max_depth, min_leaf, nodes);
    let right = grow(x, labels, classes, ri, depth + 1, max_depth, min_leaf, nodes);
    nodes[at] = TreeNode::Split { feature, threshold, left, right };
    at
}

fn fit_lda(x: &Matrix, labels: &[usize], classes: usize, shrinkage: f64) -> Result<FittedClassifier> {
    let (n, d) = x.shape();
    let mut counts = vec![0usize; classes];
    let mut means = vec![vec![0.0; d]; classes];
    for (r, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for (m, v) in means[l].iter_mut().zip(x.row(r)) {
            *m += v;
        }
    }
    let present = counts.iter().filter(|&&c| c > 0).count();
    if present < 2 {
        return Err(Error::Argument("lda needs at least two classes present".into()));
    }
    for (m, &c) in means.iter_mut().zip(&counts) {
        if c > 0 {
            m.iter_mut().for_each(|v| *v /= c as f64);
        }
    }
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for (r, &l) in labels.iter().enumerate() {
        let diff = DVector::from_iterator(d, x.row(r).iter().zip(&means[l]).map(|(a, b)| a - b));
        cov += &diff * diff.transpose();
    }
    let dof = n.saturating_sub(present).max(1) as f64;
    cov /= dof;
    let ridge = shrinkage * cov.trace() / d as f64;
    for i in 0..d {
        cov[(i, i)] += ridge;
    }
    let chol = cov
        .cholesky()
        .ok_or_else(|| Error::Numeric("lda pooled covariance is singular after shrinkage".into()))?;
    let mut coef = Matrix::zeros(classes, d);
    let mut intercept = vec![f64::NEG_INFINITY; classes];
    for c in 0..classes {
        if counts[c] == 0 {
            continue;
        }
        let mu = DVector::from_column_slice(&means[c]);
        let w = chol.solve(&mu);
        coef.row_mut(c).copy_from_slice(w.as_slice());
        intercept[c] = -0.5 * mu.dot(&w) + (counts[c] as f64 / n as f64).ln();
    }
    if !coef.is_finite() {
        return Err(Error::Numeric("lda produced non-finite coefficients".into()));
    }
    Ok(FittedClassifier::Lda { coef, intercept })
}

fn fit_logreg(
    x: &Matrix,
    labels: &[usize],
    classes: usize,
    l2: f64,
    iterations: usize,
    step: f64,
) -> Result<FittedClassifier> {
    let (n, d) = x.shape();
    let all: Vec<usize> = (0..n).collect();
    let mut mean = vec![0.0; d];
    let mut std = vec![1.0; d];
    for j in 0..d {
        let m = all.iter().map(|&i| x.get(i, j)).sum::<f64>() / n as f64;
        let v = all.iter().map(|&i| (x.get(i, j) - m).powi(2)).sum::<f64>() / n as f64;
        mean[j] = m;
        std[j] = if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 };
    }
    // design matrix with a trailing ones column
    let mut design = Matrix::zeros(n, d + 1);
    for i in 0..n {
        let row = design.row_mut(i);
        for j in 0..d {
            row[j] = (x.get(i, j) - mean[j]) / std[j];
        }
        row[d] = 1.0;
    }
    let mut weights = Matrix::zeros(classes, d + 1);
    let penalty = |w: &Matrix| -> f64 {
        0.5 * l2 * (0..w.rows()).map(|c| w.row(c)[..d].iter().map(|v| v * v).sum::<f64>()).sum::<f64>()
    };
    let mut loss_history = Vec::with_capacity(iterations + 1);
    for _ in 0..iterations {
        let logits = design.matmul_t(&weights)?;
        let (ce, g) = softmax_cross_entropy(&logits, labels)?;
        loss_history.push(ce + penalty(&weights));
        let mut grad = g.t_matmul(&design)?;
        for c in 0..classes {
            let (gw, w) = (grad.row_mut(c), weights.row(c));
            for j in 0..d {
                gw[j] += l2 * w[j];
            }
        }
        weights.add_assign_scaled(&grad, -step)?;
    }
    let (ce, _) = softmax_cross_entropy(&design.matmul_t(&weights)?, labels)?;
    loss_history.push(ce + penalty(&weights));
    if !weights.is_finite() {
        return Err(Error::Numeric("logistic regression diverged".into()));
    }
    Ok(FittedClassifier::Logreg { mean, std, weights, loss_history })
}
