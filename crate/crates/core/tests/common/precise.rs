//! Central differences without f64 cancellation.
//!
//! Affine parts are evaluated in double-double at `x ± h` and subtracted
//! there. The nonlinear steps use exact rearrangements so that only small
//! differences are ever rounded:
//! `σ(a) − σ(b) = σ(a)(1 − σ(b))·(−expm1(b − a))` and
//! `L(x+h) − L(x−h) = ln1p(Σ w_i expm1(Δ_i))`, with `w` the softmax at
//! `x − h` and `Δ` the change in score differences.

use gsc_core::diff::{sigmoid_scalar, Tensor};
use gsc_core::gsc::{edge_features, path_sum_oracle};
use gsc_core::instances::QAInstance;
use gsc_core::model::Model;
use twofloat::TwoFloat;

type D = TwoFloat;

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows).map(|r| t.data[r * t.cols..(r + 1) * t.cols].to_vec()).collect()
}

/// `relu(x W1 + b1) W2 + b2` per row, in double-double.
fn mlp(x: &[Vec<f64>], p: &[Tensor]) -> Vec<D> {
    let (w1, b1, w2, b2) = (&p[0], &p[1], &p[2], &p[3]);
    let h = w1.cols;
    x.iter()
        .map(|row| {
            let mut out = D::from(b2.data[0]);
            for j in 0..h {
                let mut z = D::from(b1.data[j]);
                for (i, &v) in row.iter().enumerate() {
                    if v != 0.0 {
                        z += D::from(v) * w1.data[i * h + j];
                    }
                }
                if z > 0.0 {
                    out += z * w2.data[j];
                }
            }
            out
        })
        .collect()
}

/// Hidden-layer input rows the model sees for `inst`.
pub fn hidden_inputs(model: &Model, inst: &QAInstance) -> Vec<Vec<f64>> {
    match model {
        Model::Gsc { config, params } => inst
            .choices
            .iter()
            .flat_map(|c| rows(&edge_features(&c.graph, &config.vocab, params.input_dim()).unwrap()))
            .collect(),
        Model::Counter { config, .. } => rows(&config.instance_features(inst).unwrap()),
        Model::VdMlp(_) => unimplemented!("variational layers are stochastic"),
    }
}

/// Smallest distance of a hidden pre-activation from the rectifier kink,
/// in units of how far one step on a single weight or bias can move it.
pub fn kink_margin(model: &Model, inst: &QAInstance, step: f64) -> f64 {
    let t = model.tensors();
    let (w1, b1) = (t[0], t[1]);
    let mut margin = f64::INFINITY;
    for x in hidden_inputs(model, inst) {
        let reach = step * x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for j in 0..w1.cols {
            let z: f64 = b1.data[j] + x.iter().enumerate().map(|(i, v)| v * w1.data[i * w1.cols + j]).sum::<f64>();
            margin = margin.min(z.abs() / reach);
        }
    }
    margin
}

/// Per-choice `(score at x−h, score(x+h) − score(x−h))`.
fn score_changes(model: &Model, inst: &QAInstance, up: &[Tensor], down: &[Tensor]) -> Vec<(f64, f64)> {
    match model {
        Model::Gsc { config, params } => inst
            .choices
            .iter()
            .map(|c| {
                let x = rows(&edge_features(&c.graph, &config.vocab, params.input_dim()).unwrap());
                let (zu, zd) = (mlp(&x, up), mlp(&x, down));
                let base: Vec<f64> = zd.iter().map(|z| sigmoid_scalar(z.hi())).collect();
                let delta: Vec<f64> = zu
                    .iter()
                    .zip(&zd)
                    .map(|(a, b)| {
                        let d = f64::from(*a - *b);
                        sigmoid_scalar(a.hi()) * (1.0 - sigmoid_scalar(b.hi())) * -(-d).exp_m1()
                    })
                    .collect();
                // the counting layers are linear in the edge values
                (
                    path_sum_oracle(&c.graph, &base, config.num_layers).unwrap(),
                    path_sum_oracle(&c.graph, &delta, config.num_layers).unwrap(),
                )
            })
            .collect(),
        Model::Counter { config, .. } => {
            let x = rows(&config.instance_features(inst).unwrap());
            mlp(&x, up).iter().zip(mlp(&x, down)).map(|(a, b)| (b.hi(), f64::from(*a - b))).collect()
        }
        Model::VdMlp(_) => unimplemented!("variational layers are stochastic"),
    }
}

/// `L(up) − L(down)` for the softmax cross-entropy of `inst`.
pub fn loss_change(model: &Model, inst: &QAInstance, up: &[Tensor], down: &[Tensor]) -> f64 {
    let ch = score_changes(model, inst, up, down);
    let (sl, dl) = ch[inst.label];
    let d: Vec<f64> = ch.iter().map(|(s, _)| s - sl).collect();
    let m = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = d.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    let mix: f64 = ch.iter().zip(&e).map(|((_, ds), w)| w / z * (ds - dl).exp_m1()).sum();
    mix.ln_1p()
}

/// Worst relative error `|a − n| / max(|a|, |n|, 1e-8)` of `analytic`
/// against central differences at `step` over every coordinate.
pub fn max_rel_error(model: &Model, inst: &QAInstance, analytic: &[Tensor], step: f64) -> (f64, usize) {
    let params: Vec<Tensor> = model.tensors().into_iter().cloned().collect();
    let x = hidden_inputs(model, inst);
    let hidden = params[0].cols;
    let live: Vec<bool> = (0..params[0].rows).map(|i| x.iter().any(|r| r[i] != 0.0)).collect();
    let (mut up, mut down) = (params.clone(), params.clone());
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (pi, p) in params.iter().enumerate() {
        for c in 0..p.len() {
            let a = analytic[pi].data[c];
            if pi == 0 && !live[c / hidden] {
                // weight on an input that is zero everywhere: outputs are bit-identical
                worst = worst.max(a.abs() / 1e-8);
                checked += 1;
                continue;
            }
            up[pi].data[c] = p.data[c] + step;
            down[pi].data[c] = p.data[c] - step;
            let span = f64::from(D::from(up[pi].data[c]) - D::from(down[pi].data[c]));
            let n = loss_change(model, inst, &up, &down) / span;
            up[pi].data[c] = p.data[c];
            down[pi].data[c] = p.data[c];
            worst = worst.max((a - n).abs() / a.abs().max(n.abs()).max(1e-8));
            checked += 1;
        }
    }
    (worst, checked)
}
