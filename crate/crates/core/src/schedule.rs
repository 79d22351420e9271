//! Per-node dropout schedules for the two discriminator views of the latent.
//!
//! Node `d` (1-based) reaches the adversary with drop probability `p_a(d)` and
//! the nuisance head with `p_n(d) = 1 - p_a(d)`. A soft schedule ramps
//! `p_a(d) = ((d-1)/(D-1))^alpha`; a hard schedule is a step that sends the
//! first `split_index` nodes to the adversary only and the rest to the
//! nuisance head only.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    Adversary,
    Nuisance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ScheduleKind {
    Soft { alpha: f64 },
    Hard { split_index: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropoutSchedule {
    pub dim: usize,
    #[serde(flatten)]
    pub kind: ScheduleKind,
    pub p_a: Vec<f64>,
}

/// One draw of keep-masks for a batch, `n × D` each, entries in {0, 1}.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSample {
    pub mask_a: Matrix,
    pub mask_n: Matrix,
}

impl MaskSample {
    pub fn for_head(&self, head: Head) -> &Matrix {
        match head {
            Head::Adversary => &self.mask_a,
            Head::Nuisance => &self.mask_n,
        }
    }
}

impl DropoutSchedule {
    pub fn soft(dim: usize, alpha: f64) -> Result<Self> {
        if dim < 2 {
            return Err(Error::Argument(format!("soft schedule needs D >= 2, got {dim}")));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::Argument(format!("alpha must be > 0, got {alpha}")));
        }
        let denom = (dim - 1) as f64;
        let p_a = (0..dim)
            .map(|k| (k as f64 / denom).powf(alpha))
            .collect();
        Ok(Self {
            dim,
            kind: ScheduleKind::Soft { alpha },
            p_a,
        })
    }

    /// Step schedule with `|z_a| : |z_n| = a : n`, rounding half up.
    pub fn hard(dim: usize, ratio: (u32, u32)) -> Result<Self> {
        let (a, n) = ratio;
        if dim < 2 {
            return Err(Error::Argument(format!("hard schedule needs D >= 2, got {dim}")));
        }
        if a == 0 || n == 0 {
            return Err(Error::Argument(format!("ratio components must be positive, got {a}:{n}")));
        }
        let total = (a + n) as usize;
        let split = (2 * dim * a as usize + total) / (2 * total);
        Self::hard_at(dim, split)
    }

    pub fn hard_at(dim: usize, split_index: usize) -> Result<Self> {
        if split_index == 0 || split_index >= dim {
            return Err(Error::Argument(format!(
                "degenerate hard split {split_index} of {dim} nodes"
            )));
        }
        let p_a = (0..dim).map(|k| if k < split_index { 0.0 } else { 1.0 }).collect();
        Ok(Self {
            dim,
            kind: ScheduleKind::Hard { split_index },
            p_a,
        })
    }

    pub fn is_hard(&self) -> bool {
        matches!(self.kind, ScheduleKind::Hard { .. })
    }

    pub fn p_n(&self) -> Vec<f64> {
        self.p_a.iter().map(|p| 1.0 - p).collect()
    }

    pub fn drop_rates(&self, head: Head) -> Vec<f64> {
        match head {
            Head::Adversary => self.p_a.clone(),
            Head::Nuisance => self.p_n(),
        }
    }

    /// Expected number of nodes the head sees, `Σ (1 - p_head(d))`.
    pub fn effective_dim(&self, head: Head) -> f64 {
        self.expectation_mask(head).iter().sum()
    }

    /// Keep probabilities `1 - p_head(d)`.
    pub fn expectation_mask(&self, head: Head) -> Vec<f64> {
        match head {
            Head::Adversary => self.p_a.iter().map(|p| 1.0 - p).collect(),
            Head::Nuisance => self.p_a.clone(),
        }
    }

    /// Draws independent adversary and nuisance keep-masks for `rows` samples.
    ///
    /// Hard schedules are deterministic and leave `rng` untouched.
    pub fn sample_mask<R: Rng + ?Sized>(&self, rows: usize, rng: &mut R) -> MaskSample {
        let keep_a = self.expectation_mask(Head::Adversary);
        if self.is_hard() {
            let keep_n = self.expectation_mask(Head::Nuisance);
            let mut mask_a = Matrix::zeros(rows, self.dim);
            let mut mask_n = Matrix::zeros(rows, self.dim);
            for r in 0..rows {
                mask_a.row_mut(r).copy_from_slice(&keep_a);
                mask_n.row_mut(r).copy_from_slice(&keep_n);
            }
            return MaskSample { mask_a, mask_n };
        }
        let p_n = self.p_n();
        let mut mask_a = Matrix::zeros(rows, self.dim);
        let mut mask_n = Matrix::zeros(rows, self.dim);
        for r in 0..rows {
            for d in 0..self.dim {
                // keep with probability 1 - p; u in [0, 1)
                if rng.random::<f64>() >= self.p_a[d] {
                    mask_a.set(r, d, 1.0);
                }
                if rng.random::<f64>() >= p_n[d] {
                    mask_n.set(r, d, 1.0);
                }
            }
        }
        MaskSample { mask_a, mask_n }
    }
}
