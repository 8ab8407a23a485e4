//! Trainable scorers behind one interface, plus JSON checkpoints.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::counter::{count_features_1hop, counter_instance_scores, counter_scores_on_tape, CountMode, CounterConfig, CounterHead, PairTyping, COUNTER_PARAM_NAMES};
use crate::diff::{Activation, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::{truncate_nodes, SchemaGraph, TripletVocabulary};
use crate::gsc::{instance_forward, instance_scores_on_tape, GscConfig, GscParams, GscVars, GSC_PARAM_NAMES};
use crate::instances::QAInstance;
use crate::sparsevd::{vd_forward_eval, vd_forward_train, TrackedLayer, VariationalAffineParams, VdConfig, VdVars};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Gsc,
    /// Hard counter over 1-hop triplet histograms.
    Counter1,
    /// Hard counter over 1-hop plus 2-hop pair histograms.
    Counter2,
    VdMlp,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Gsc, ModelKind::Counter1, ModelKind::Counter2, ModelKind::VdMlp];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Gsc => "gsc",
            ModelKind::Counter1 => "counter1",
            ModelKind::Counter2 => "counter2",
            ModelKind::VdMlp => "vd-mlp",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown model kind {s:?} (gsc|counter1|counter2|vd-mlp)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VdMlpConfig {
    pub embedding_dim: usize,
    pub hidden: usize,
    pub activation: Activation,
    /// Seeds the random per-node embeddings.
    pub embedding_seed: u64,
    pub vocab: TripletVocabulary,
    pub max_nodes: Option<usize>,
    pub vd: VdConfig,
}

impl Default for VdMlpConfig {
    fn default() -> Self {
        Self {
            embedding_dim: 32,
            hidden: 32,
            activation: Activation::Relu,
            embedding_seed: 0,
            vocab: TripletVocabulary::default(),
            max_nodes: None,
            vd: VdConfig::default(),
        }
    }
}

/// Per-kind settings; only the section matching the trained kind is used.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub gsc: GscConfig,
    pub counter: CounterConfig,
    pub vd_mlp: VdMlpConfig,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Sum of i.i.d. standard-normal node embeddings divided by `sqrt(n)`.
/// A node's embedding is fixed by `(seed, instance id, choice, node)`.
pub fn node_embedding_summary(graph: &SchemaGraph, instance_id: &str, choice: usize, dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(instance_id.as_bytes()));
    rng.set_stream(choice as u64);
    let mut out = vec![0.0; dim];
    let n = graph.node_count();
    for _ in 0..n {
        for o in out.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *o += z;
        }
    }
    let s = (n.max(1) as f64).sqrt();
    out.iter_mut().for_each(|v| *v /= s);
    out
}

/// Two-layer variational MLP over `[embedding summary ‖ standardized counts]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VdMlp {
    pub config: VdMlpConfig,
    /// 1-hop feature indices kept as inputs (non-constant on the training set).
    pub count_columns: Vec<usize>,
    pub count_mean: Vec<f64>,
    pub count_scale: Vec<f64>,
    pub fc1: VariationalAffineParams,
    pub fc2: VariationalAffineParams,
}

pub const VD_MLP_PARAM_NAMES: [&str; 6] = ["fc1.theta", "fc1.log_sigma2", "fc1.bias", "fc2.theta", "fc2.log_sigma2", "fc2.bias"];

impl VdMlp {
    pub fn new(config: VdMlpConfig, train: &[QAInstance], rng: &mut impl Rng) -> Result<Self> {
        if config.embedding_dim == 0 || config.hidden == 0 {
            return Err(Error::InvalidConfig("vd-mlp dimensions must be positive".into()));
        }
        let dim = config.vocab.triplet_type_count();
        let (mut sum, mut sq, mut n) = (vec![0.0; dim], vec![0.0; dim], 0usize);
        for inst in train {
            for c in &inst.choices {
                let g = Self::prepare(&config, &c.graph)?;
                for (i, &v) in count_features_1hop(&g, &config.vocab).values.iter().enumerate() {
                    let v = v as f64;
                    sum[i] += v;
                    sq[i] += v * v;
                }
                n += 1;
            }
        }
        let (mut count_columns, mut count_mean, mut count_scale) = (Vec::new(), Vec::new(), Vec::new());
        let nf = n.max(1) as f64;
        for i in 0..dim {
            let mean = sum[i] / nf;
            let var = sq[i] / nf - mean * mean;
            if var > 1e-12 {
                count_columns.push(i);
                count_mean.push(mean);
                count_scale.push(var.sqrt());
            }
        }
        let input = config.embedding_dim + count_columns.len();
        let fc1 = VariationalAffineParams::new(input, config.hidden, config.vd.init_log_sigma2, rng);
        let fc2 = VariationalAffineParams::new(config.hidden, 1, config.vd.init_log_sigma2, rng);
        Ok(Self {
            config,
            count_columns,
            count_mean,
            count_scale,
            fc1,
            fc2,
        })
    }

    fn prepare(config: &VdMlpConfig, g: &SchemaGraph) -> Result<SchemaGraph> {
        match config.max_nodes {
            Some(m) => truncate_nodes(g, m),
            None => Ok(g.clone()),
        }
    }

    pub fn embedding_rows(&self) -> std::ops::Range<usize> {
        0..self.config.embedding_dim
    }

    pub fn count_rows(&self) -> std::ops::Range<usize> {
        self.config.embedding_dim..self.config.embedding_dim + self.count_columns.len()
    }

    /// Input rows `[C×D]` for every choice.
    pub fn instance_inputs(&self, instance: &QAInstance) -> Result<Tensor> {
        let d = self.fc1.input_dim();
        let mut x = Vec::with_capacity(instance.choices.len() * d);
        for (ci, c) in instance.choices.iter().enumerate() {
            let g = Self::prepare(&self.config, &c.graph)?;
            x.extend(node_embedding_summary(&g, &instance.id, ci, self.config.embedding_dim, self.config.embedding_seed));
            let counts = count_features_1hop(&g, &self.config.vocab).values;
            for (k, &col) in self.count_columns.iter().enumerate() {
                x.push((counts[col] as f64 - self.count_mean[k]) / self.count_scale[k]);
            }
        }
        Tensor::new(instance.choices.len(), d, x)
    }

    /// Deterministic scores with weights above `threshold` removed;
    /// `f64::INFINITY` keeps every weight.
    pub fn scores_with_threshold(&self, instance: &QAInstance, threshold: f64) -> Result<Vec<f64>> {
        let x = self.instance_inputs(instance)?;
        let mut h = vd_forward_eval(&x, &self.fc1, threshold)?;
        h.data.iter_mut().for_each(|v| *v = self.config.activation.apply(*v));
        Ok(vd_forward_eval(&h, &self.fc2, threshold)?.data)
    }

    pub fn tracked_layers(&self) -> Vec<TrackedLayer<'_>> {
        vec![
            TrackedLayer {
                name: "input.embedding",
                params: &self.fc1,
                rows: Some(self.embedding_rows()),
            },
            TrackedLayer {
                name: "input.counts",
                params: &self.fc1,
                rows: Some(self.count_rows()),
            },
            TrackedLayer {
                name: "hidden",
                params: &self.fc2,
                rows: None,
            },
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Model {
    Gsc { config: GscConfig, params: GscParams },
    Counter { config: CounterConfig, head: CounterHead },
    VdMlp(VdMlp),
}

impl Model {
    /// Fresh parameters; `train` is only read by kinds that fit input
    /// statistics.
    pub fn init(kind: ModelKind, config: &ModelConfig, train: &[QAInstance], rng: &mut impl Rng) -> Result<Self> {
        match kind {
            ModelKind::Gsc => {
                config.gsc.validate()?;
                let params = GscParams::init(config.gsc.input_dim(), config.gsc.hidden, rng);
                Ok(Model::Gsc {
                    config: config.gsc.clone(),
                    params,
                })
            }
            ModelKind::Counter1 | ModelKind::Counter2 => {
                let mut c = config.counter.clone();
                c.vocab.check()?;
                c.mode = match (kind, c.mode) {
                    (ModelKind::Counter1, _) => CountMode::OneHop,
                    (_, m @ CountMode::TwoHop { .. }) => m,
                    _ => CountMode::TwoHop {
                        pair_typing: PairTyping::Relation,
                        context_terminated: false,
                    },
                };
                if c.hidden == 0 {
                    return Err(Error::InvalidConfig("counter hidden size must be positive".into()));
                }
                let head = CounterHead::init(c.input_dim(), c.hidden, rng);
                Ok(Model::Counter { config: c, head })
            }
            ModelKind::VdMlp => {
                config.vd_mlp.vocab.check()?;
                Ok(Model::VdMlp(VdMlp::new(config.vd_mlp.clone(), train, rng)?))
            }
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Gsc { .. } => ModelKind::Gsc,
            Model::Counter { config, .. } => match config.mode {
                CountMode::OneHop => ModelKind::Counter1,
                CountMode::TwoHop { .. } => ModelKind::Counter2,
            },
            Model::VdMlp(_) => ModelKind::VdMlp,
        }
    }

    pub fn vocab(&self) -> &TripletVocabulary {
        match self {
            Model::Gsc { config, .. } => &config.vocab,
            Model::Counter { config, .. } => &config.vocab,
            Model::VdMlp(m) => &m.config.vocab,
        }
    }

    pub fn param_names(&self) -> Vec<&'static str> {
        match self {
            Model::Gsc { .. } => GSC_PARAM_NAMES.to_vec(),
            Model::Counter { .. } => COUNTER_PARAM_NAMES.to_vec(),
            Model::VdMlp(_) => VD_MLP_PARAM_NAMES.to_vec(),
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        match self {
            Model::Gsc { params, .. } => params.tensors(),
            Model::Counter { head, .. } => head.tensors(),
            Model::VdMlp(m) => {
                let mut v = m.fc1.tensors();
                v.extend(m.fc2.tensors());
                v
            }
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Model::Gsc { params, .. } => params.tensors_mut(),
            Model::Counter { head, .. } => head.tensors_mut(),
            Model::VdMlp(m) => {
                let mut v = m.fc1.tensors_mut();
                v.extend(m.fc2.tensors_mut());
                v
            }
        }
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_variational(&self) -> bool {
        matches!(self, Model::VdMlp(_))
    }

    pub fn vd_config(&self) -> Option<&VdConfig> {
        match self {
            Model::VdMlp(m) => Some(&m.config.vd),
            _ => None,
        }
    }

    /// Rejects instances the model cannot score.
    pub fn check_instance(&self, instance: &QAInstance) -> Result<()> {
        instance.validate(self.vocab()).map_err(|e| match e {
            Error::Validation { id, diagnostics } => Error::Checkpoint(format!(
                "instance {id} does not fit the model vocabulary: {}",
                diagnostics.join("; ")
            )),
            other => other,
        })
    }

    /// Differentiable per-choice scores `[C×1]`; `vars` mirror
    /// [`Model::tensors`]. Variational layers sample with `rng`.
    pub fn scores_on_tape(&self, tape: &mut Tape, vars: &[Var], instance: &QAInstance, rng: &mut impl Rng) -> Result<Var> {
        match self {
            Model::Gsc { config, .. } => instance_scores_on_tape(tape, GscVars::from_slice(vars), instance, config),
            Model::Counter { config, head } => {
                counter_scores_on_tape(tape, vars, config.instance_features(instance)?, head.activation)
            }
            Model::VdMlp(m) => {
                let x = tape.constant(m.instance_inputs(instance)?);
                let h = vd_forward_train(tape, x, VdVars::from_slice(&vars[0..3]), rng)?;
                let h = tape.activation(h, m.config.activation);
                vd_forward_train(tape, h, VdVars::from_slice(&vars[3..6]), rng)
            }
        }
    }

    /// Summed KL regularizer of the variational layers, if any.
    pub fn kl_on_tape(&self, tape: &mut Tape, vars: &[Var]) -> Result<Option<Var>> {
        match self {
            Model::VdMlp(_) => {
                let a = tape.vd_kl(vars[0], vars[1])?;
                let b = tape.vd_kl(vars[3], vars[4])?;
                Ok(Some(tape.add(a, b)?))
            }
            _ => Ok(None),
        }
    }

    /// Evaluation-mode scores; variational layers use pruned means.
    pub fn scores(&self, instance: &QAInstance) -> Result<Vec<f64>> {
        match self {
            Model::Gsc { config, params } => instance_forward(instance, params, config),
            Model::Counter { config, head } => counter_instance_scores(instance, head, config),
            Model::VdMlp(m) => m.scores_with_threshold(instance, m.config.vd.threshold),
        }
    }
}

pub const CHECKPOINT_FORMAT: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: u32,
    pub seed: u64,
    pub epoch: usize,
    pub dev_accuracy: f64,
    pub model: Model,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(s).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if c.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unsupported checkpoint format {}", c.format)));
        }
        c.check_shapes()?;
        Ok(c)
    }

    fn check_shapes(&self) -> Result<()> {
        let m = &self.model;
        let expect: Vec<(usize, usize)> = match m {
            Model::Gsc { config, .. } => {
                config.validate()?;
                let (d, h) = (config.input_dim(), config.hidden);
                vec![(d, h), (1, h), (h, 1), (1, 1)]
            }
            Model::Counter { config, head } => {
                let (d, h) = (config.input_dim(), head.w1.cols);
                vec![(d, h), (1, h), (h, 1), (1, 1)]
            }
            Model::VdMlp(v) => {
                let k = v.count_columns.len();
                if v.count_mean.len() != k || v.count_scale.len() != k {
                    return Err(Error::Checkpoint("count statistics length mismatch".into()));
                }
                let (d, h) = (v.config.embedding_dim + k, v.config.hidden);
                vec![(d, h), (d, h), (1, h), (h, 1), (h, 1), (1, 1)]
            }
        };
        for ((t, shape), name) in m.tensors().iter().zip(&expect).zip(m.param_names()) {
            if t.shape() != *shape || t.data.len() != t.rows * t.cols {
                return Err(Error::Checkpoint(format!(
                    "{name}: shape {:?} does not match the configured {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_synthetic, SyntheticTaskConfig};

    fn corpus(n: usize) -> Vec<QAInstance> {
        generate_synthetic(&SyntheticTaskConfig {
            instances: n,
            ..SyntheticTaskConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn kinds_round_trip_through_names() {
        for k in ModelKind::ALL {
            assert_eq!(k.name().parse::<ModelKind>().unwrap(), k);
        }
        assert!("mlp".parse::<ModelKind>().is_err());
    }

    #[test]
    fn checkpoint_round_trip_every_kind() {
        let data = corpus(20);
        for k in ModelKind::ALL {
            let m = Model::init(k, &ModelConfig::default(), &data, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
            assert_eq!(m.kind(), k);
            let c = Checkpoint {
                format: CHECKPOINT_FORMAT,
                seed: 3,
                epoch: 1,
                dev_accuracy: 0.5,
                model: m,
            };
            let back = Checkpoint::from_json(&c.to_json().unwrap()).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.model.scores(&data[0]).unwrap(), c.model.scores(&data[0]).unwrap());
        }
    }

    #[test]
    fn corrupted_shape_is_checkpoint_error() {
        let m = Model::init(ModelKind::Gsc, &ModelConfig::default(), &[], &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut c = Checkpoint {
            format: CHECKPOINT_FORMAT,
            seed: 0,
            epoch: 0,
            dev_accuracy: 0.0,
            model: m,
        };
        if let Model::Gsc { params, .. } = &mut c.model {
            params.w1.rows -= 1;
            params.w1.data.truncate(params.w1.rows * params.w1.cols);
        }
        let err = Checkpoint::from_json(&c.to_json().unwrap()).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)), "{err}");
    }

    #[test]
    fn vocab_mismatch_is_checkpoint_error() {
        let data = corpus(1);
        let mut cfg = ModelConfig::default();
        cfg.gsc.vocab = crate::graph::build_triplet_vocab(4, 10).unwrap();
        let m = Model::init(ModelKind::Gsc, &cfg, &[], &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(matches!(m.check_instance(&data[0]), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn vd_mlp_layout() {
        let data = corpus(50);
        let Model::VdMlp(m) = Model::init(ModelKind::VdMlp, &ModelConfig::default(), &data, &mut ChaCha8Rng::seed_from_u64(1)).unwrap() else {
            unreachable!()
        };
        let x = m.instance_inputs(&data[0]).unwrap();
        assert_eq!(x.cols, 32 + m.count_columns.len());
        assert_eq!(m.count_rows().end, x.cols);
        // standardized columns have zero mean over the training choices
        let mut mean = vec![0.0; m.count_columns.len()];
        let mut n = 0.0;
        for inst in &data {
            let x = m.instance_inputs(inst).unwrap();
            for r in 0..x.rows {
                for (k, mk) in mean.iter_mut().enumerate() {
                    *mk += x.at(r, 32 + k);
                }
                n += 1.0;
            }
        }
        assert!(mean.iter().all(|s| (s / n).abs() < 1e-9));
        // embedding summaries are a pure function of (id, choice)
        assert_eq!(x, m.instance_inputs(&data[0]).unwrap());
    }

    #[test]
    fn embedding_summary_is_standard_normal() {
        let g = SchemaGraph::new(vec![0, 1, 3, 3], vec![]);
        let mut all = Vec::new();
        for i in 0..400 {
            all.extend(node_embedding_summary(&g, &format!("q{i}"), 0, 32, 9));
        }
        let n = all.len() as f64;
        let mean = all.iter().sum::<f64>() / n;
        let var = all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.03 && (var - 1.0).abs() < 0.05, "{mean} {var}");
    }
}
