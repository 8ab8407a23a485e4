//! Rectified Adam.

use serde::{Deserialize, Serialize};

use crate::diff::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RAdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for RAdamHyper {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RAdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl RAdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let zeros: Vec<Vec<f64>> = params.into_iter().map(|p| vec![0.0; p.len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// Which branch of the update a step took.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepKind {
    /// Variance estimate untrustworthy: bias-corrected momentum only.
    Momentum,
    /// Adaptive step scaled by the rectification term.
    Rectified,
}

/// Applies one RAdam update; `step_index` counts from 1.
pub fn radam_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    names: &[&str],
    state: &mut RAdamState,
    hyper: &RAdamHyper,
    step_index: u64,
) -> Result<StepKind> {
    if step_index == 0 {
        return Err(Error::Contract("radam step_index starts at 1".into()));
    }
    for (i, g) in grads.iter().enumerate() {
        if let Some(j) = g.data.iter().position(|v| !v.is_finite()) {
            let name = names.get(i).copied().unwrap_or("?");
            return Err(Error::Training(format!("non-finite gradient in {name}[{j}]")));
        }
    }
    let t = step_index as f64;
    let (b1, b2) = (hyper.beta1, hyper.beta2);
    let b1t = 1.0 - b1.powf(t);
    let b2t = 1.0 - b2.powf(t);
    let rho_inf = 2.0 / (1.0 - b2) - 1.0;
    let rho_t = rho_inf - 2.0 * t * b2.powf(t) / b2t;
    let rect = if rho_t > 4.0 {
        Some(((rho_t - 4.0) * (rho_t - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t)).sqrt())
    } else {
        None
    };

    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for j in 0..g.data.len() {
            let gj = g.data[j];
            m[j] = b1 * m[j] + (1.0 - b1) * gj;
            v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
            let m_hat = m[j] / b1t;
            let update = match rect {
                Some(r) => r * m_hat / ((v[j] / b2t).sqrt() + hyper.eps),
                None => m_hat,
            };
            p.data[j] -= hyper.lr * update;
        }
    }
    Ok(if rect.is_some() { StepKind::Rectified } else { StepKind::Momentum })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_identity() {
        let mut p = Tensor::column(vec![1.0, -2.0, 0.5]);
        let orig = p.clone();
        let mut st = RAdamState::new([&p]);
        let g = Tensor::zeros(3, 1);
        for k in 1..=50 {
            radam_step(&mut [&mut p], &[g.clone()], &["p"], &mut st, &RAdamHyper::default(), k).unwrap();
        }
        assert_eq!(p, orig);
    }

    #[test]
    fn first_step_is_momentum() {
        let mut p = Tensor::scalar(0.0);
        let mut st = RAdamState::new([&p]);
        let h = RAdamHyper::default();
        let kind = radam_step(&mut [&mut p], &[Tensor::scalar(2.0)], &["p"], &mut st, &h, 1).unwrap();
        assert_eq!(kind, StepKind::Momentum);
        // m_hat = g at step 1
        assert!((p.data[0] + h.lr * 2.0).abs() < 1e-15);
        let mut kinds = Vec::new();
        for k in 2..=8 {
            kinds.push(radam_step(&mut [&mut p], &[Tensor::scalar(2.0)], &["p"], &mut st, &h, k).unwrap());
        }
        // rho_t first exceeds 4 at step 5
        assert_eq!(kinds[..3], [StepKind::Momentum; 3]);
        assert_eq!(kinds[3..], [StepKind::Rectified; 4]);
    }

    #[test]
    fn converges_on_quadratic() {
        let mut x = Tensor::scalar(0.0);
        let mut st = RAdamState::new([&x]);
        let h = RAdamHyper {
            lr: 0.2,
            ..RAdamHyper::default()
        };
        for k in 1..=100 {
            let g = Tensor::scalar(2.0 * (x.data[0] - 3.0));
            radam_step(&mut [&mut x], &[g], &["x"], &mut st, &h, k).unwrap();
        }
        assert!((x.data[0] - 3.0).abs() < 1e-2, "x = {}", x.data[0]);
    }

    #[test]
    fn non_finite_gradient_names_param() {
        let mut p = Tensor::scalar(0.0);
        let mut st = RAdamState::new([&p]);
        let err = radam_step(&mut [&mut p], &[Tensor::scalar(f64::NAN)], &["encoder.0.weight"], &mut st, &RAdamHyper::default(), 1)
            .unwrap_err();
        assert!(err.to_string().contains("encoder.0.weight"));
    }
}
