//! Sparse variational dropout as a dissection tool.
//!
//! Each weight carries a Gaussian posterior `N(θ, αθ²)`, parameterized by
//! its mean `θ` and a free log-variance; `log α = log σ² − log θ²` is
//! derived and clamped to `[-10, 10]`. Weights with `log α` above the
//! threshold are dropped at evaluation time, and the fraction that survives
//! in each layer (its sparse ratio) indicates how much the model relies on
//! it.

use std::ops::Range;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::diff::{kernels, log_alpha_of, neg_kl_approx, Tape, Tensor, Var};
use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 3.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VdConfig {
    /// Pruning threshold on log alpha.
    pub threshold: f64,
    /// Fraction of training over which the KL weight ramps from 0 to 1.
    pub kl_warmup_fraction: f64,
    pub init_log_sigma2: f64,
}

impl Default for VdConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            kl_warmup_fraction: 1.0 / 3.0,
            init_log_sigma2: -8.0,
        }
    }
}

impl VdConfig {
    /// KL coefficient at `progress ∈ [0, 1]` of training.
    pub fn kl_weight(&self, progress: f64) -> f64 {
        if self.kl_warmup_fraction <= 0.0 {
            1.0
        } else {
            (progress / self.kl_warmup_fraction).clamp(0.0, 1.0)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariationalAffineParams {
    pub theta: Tensor,
    pub log_sigma2: Tensor,
    pub bias: Tensor,
}

impl VariationalAffineParams {
    pub fn new(input_dim: usize, output_dim: usize, init_log_sigma2: f64, rng: &mut impl Rng) -> Self {
        let a = 1.0 / (input_dim as f64).sqrt();
        let u = Uniform::new_inclusive(-a, a).expect("finite bound");
        let theta = (0..input_dim * output_dim).map(|_| u.sample(rng)).collect();
        Self {
            theta: Tensor {
                rows: input_dim,
                cols: output_dim,
                data: theta,
            },
            log_sigma2: Tensor {
                rows: input_dim,
                cols: output_dim,
                data: vec![init_log_sigma2; input_dim * output_dim],
            },
            bias: Tensor::zeros(1, output_dim),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.theta.rows
    }

    pub fn output_dim(&self) -> usize {
        self.theta.cols
    }

    /// Clamped log alpha per weight.
    pub fn log_alpha(&self) -> Vec<f64> {
        self.theta
            .data
            .iter()
            .zip(&self.log_sigma2.data)
            .map(|(&t, &l)| log_alpha_of(t, l).1)
            .collect()
    }

    pub fn keep_mask(&self, threshold: f64) -> Vec<bool> {
        self.log_alpha().into_iter().map(|la| la <= threshold).collect()
    }

    /// `θ` with pruned entries zeroed.
    pub fn pruned_theta(&self, threshold: f64) -> Tensor {
        let data = self
            .theta
            .data
            .iter()
            .zip(self.keep_mask(threshold))
            .map(|(&t, keep)| if keep { t } else { 0.0 })
            .collect();
        Tensor {
            rows: self.theta.rows,
            cols: self.theta.cols,
            data,
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.theta, &self.log_sigma2, &self.bias]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.theta, &mut self.log_sigma2, &mut self.bias]
    }
}

/// A variational layer's parameters placed on a tape.
#[derive(Clone, Copy, Debug)]
pub struct VdVars {
    pub theta: Var,
    pub log_sigma2: Var,
    pub bias: Var,
}

impl VdVars {
    pub fn from_slice(v: &[Var]) -> Self {
        Self {
            theta: v[0],
            log_sigma2: v[1],
            bias: v[2],
        }
    }
}

/// Training-mode forward with local reparameterization.
pub fn vd_forward_train(tape: &mut Tape, x: Var, vars: VdVars, rng: &mut impl Rng) -> Result<Var> {
    tape.vd_affine(vars.theta, vars.log_sigma2, vars.bias, x, rng)
}

/// Deterministic forward with pruned weights removed.
pub fn vd_forward_eval(x: &Tensor, params: &VariationalAffineParams, threshold: f64) -> Result<Tensor> {
    if x.cols != params.input_dim() {
        return Err(Error::Shape {
            op: "vd_forward_eval",
            left: x.shape(),
            right: params.theta.shape(),
        });
    }
    let w = params.pruned_theta(threshold);
    let y = kernels::affine(&x.data, &w.data, &params.bias.data, x.rows, x.cols, w.cols);
    Tensor::new(x.rows, w.cols, y)
}

/// Approximate KL of the layer's posterior to the log-uniform prior,
/// summed over weights, additive constant dropped. Minimizing
/// `data loss + kl_term` maximizes the variational lower bound.
pub fn kl_term(params: &VariationalAffineParams) -> f64 {
    params.log_alpha().into_iter().map(|la| -neg_kl_approx(la)).sum()
}

/// Monte-Carlo estimate of the per-weight negative KL for a Gaussian
/// posterior with dropout rate `exp(log_alpha)` against the log-uniform
/// prior: `0.5 log α − E[log |1 + √α ε|]`, `ε ~ N(0, 1)`. Equal to
/// [`neg_kl_approx`] up to an additive constant.
pub fn mc_kl_oracle(log_alpha: f64, n_samples: usize, rng: &mut impl Rng) -> Result<f64> {
    if n_samples < 100_000 {
        return Err(Error::Contract(format!("mc_kl_oracle needs >= 1e5 samples, got {n_samples}")));
    }
    let sqrt_alpha = (0.5 * log_alpha).exp();
    let mut sum = 0.0;
    for _ in 0..n_samples {
        let e: f64 = rng.sample(StandardNormal);
        sum += (1.0 + sqrt_alpha * e).abs().ln();
    }
    Ok(0.5 * log_alpha - sum / n_samples as f64)
}

/// Fraction of weights with `log α <= threshold`.
pub fn sparse_ratio(params: &VariationalAffineParams, threshold: f64) -> f64 {
    sparse_ratio_rows(params, threshold, 0..params.input_dim())
}

/// [`sparse_ratio`] restricted to a block of input rows.
pub fn sparse_ratio_rows(params: &VariationalAffineParams, threshold: f64, rows: Range<usize>) -> f64 {
    let cols = params.output_dim();
    let total = rows.len() * cols;
    if total == 0 {
        return 0.0;
    }
    let la = params.log_alpha();
    let kept = rows
        .flat_map(|r| (0..cols).map(move |c| r * cols + c))
        .filter(|&j| la[j] <= threshold)
        .count();
    kept as f64 / total as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseReport {
    pub epoch: usize,
    pub layer: String,
    pub sparse_ratio: f64,
}

/// A named slice of a variational layer to monitor.
pub struct TrackedLayer<'a> {
    pub name: &'a str,
    pub params: &'a VariationalAffineParams,
    pub rows: Option<Range<usize>>,
}

/// Per-epoch sparse-ratio curve.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseCurve {
    rows: Vec<SparseReport>,
}

impl SparseCurve {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends one row per layer for `epoch`, layers in name order. Epochs
    /// must be recorded in increasing order.
    pub fn track(&mut self, epoch: usize, layers: &[TrackedLayer<'_>], threshold: f64) -> Result<()> {
        if let Some(last) = self.rows.last() {
            if epoch <= last.epoch {
                return Err(Error::Contract(format!("epoch {epoch} recorded after {}", last.epoch)));
            }
        }
        let mut batch: Vec<SparseReport> = layers
            .iter()
            .map(|l| SparseReport {
                epoch,
                layer: l.name.to_string(),
                sparse_ratio: match &l.rows {
                    Some(r) => sparse_ratio_rows(l.params, threshold, r.clone()),
                    None => sparse_ratio(l.params, threshold),
                },
            })
            .collect();
        batch.sort_by(|a, b| a.layer.cmp(&b.layer));
        self.rows.extend(batch);
        Ok(())
    }

    pub fn rows(&self) -> &[SparseReport] {
        &self.rows
    }

    pub fn last_ratio(&self, layer: &str) -> Option<f64> {
        self.rows.iter().rev().find(|r| r.layer == layer).map(|r| r.sparse_ratio)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,layer,sparse_ratio\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{:.6}\n", r.epoch, r.layer, r.sparse_ratio));
        }
        s
    }
}
