//! The graph soft counter.
//!
//! A two-layer MLP maps every edge triplet `[head type, relation, tail type]`
//! to a soft count in (0, 1). Parameter-free layers then propagate these
//! numbers: each edge adds the value of its source node, and each node is
//! replaced by the sum of its incoming edges. The graph score is the final
//! value of the context node.
//!
//! Direction convention: an edge's `src` is the node it reads from and its
//! `dst` is the node it is summed into.

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::diff::{kernels, sigmoid_scalar, Activation, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::{truncate_nodes, SchemaGraph, Triplet, TripletVocabulary};
use crate::instances::QAInstance;

/// Where the non-graph part of a choice score comes from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ContextProvider {
    /// Precomputed `context_score` field of each choice.
    FromFile,
    Constant { value: f64 },
    #[default]
    Zero,
}

impl ContextProvider {
    pub fn resolve(&self, stored: Option<f64>, choice: usize) -> Result<f64> {
        match self {
            ContextProvider::FromFile => stored.ok_or(Error::MissingScore { choice }),
            ContextProvider::Constant { value } => Ok(*value),
            ContextProvider::Zero => Ok(0.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GscConfig {
    pub num_layers: usize,
    pub max_nodes: Option<usize>,
    pub vocab: TripletVocabulary,
    pub context: ContextProvider,
    pub hidden: usize,
    pub activation: Activation,
    /// Append one always-zero input column (47-wide encoder input).
    pub pad_input: bool,
}

impl Default for GscConfig {
    fn default() -> Self {
        Self {
            num_layers: 2,
            max_nodes: None,
            vocab: TripletVocabulary::default(),
            context: ContextProvider::Zero,
            hidden: 32,
            activation: Activation::Relu,
            pad_input: false,
        }
    }
}

impl GscConfig {
    pub fn input_dim(&self) -> usize {
        self.vocab.onehot_dim() + usize::from(self.pad_input)
    }

    pub fn validate(&self) -> Result<()> {
        self.vocab.check()?;
        if self.num_layers < 1 {
            return Err(Error::InvalidConfig("num_layers must be >= 1".into()));
        }
        if self.hidden < 1 {
            return Err(Error::InvalidConfig("hidden width must be >= 1".into()));
        }
        if self.max_nodes == Some(0) {
            return Err(Error::InvalidConfig("max_nodes must be >= 1".into()));
        }
        Ok(())
    }
}

/// Edge-encoder weights: the only learnable parameters of the model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GscParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

pub const GSC_PARAM_NAMES: [&str; 4] = ["encoder.0.weight", "encoder.0.bias", "encoder.1.weight", "encoder.1.bias"];

impl GscParams {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        Self {
            w1: Tensor::zeros(input_dim, hidden),
            b1: Tensor::zeros(1, hidden),
            w2: Tensor::zeros(hidden, 1),
            b2: Tensor::zeros(1, 1),
        }
    }

    /// Uniform `±1/sqrt(fan_in)` initialization.
    pub fn init(input_dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(input_dim, hidden);
        let fill = |t: &mut Tensor, fan_in: usize, rng: &mut dyn rand::RngCore| {
            let a = 1.0 / (fan_in as f64).sqrt();
            let u = Uniform::new_inclusive(-a, a).expect("finite bound");
            t.data.iter_mut().for_each(|v| *v = u.sample(rng));
        };
        fill(&mut p.w1, input_dim, rng);
        fill(&mut p.b1, input_dim, rng);
        fill(&mut p.w2, hidden, rng);
        fill(&mut p.b2, hidden, rng);
        p
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn input_dim(&self) -> usize {
        self.w1.rows
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub fn from_tensors(mut ts: Vec<Tensor>) -> Result<Self> {
        if ts.len() != 4 {
            return Err(Error::Checkpoint(format!("expected 4 encoder tensors, got {}", ts.len())));
        }
        let b2 = ts.pop().unwrap();
        let w2 = ts.pop().unwrap();
        let b1 = ts.pop().unwrap();
        let w1 = ts.pop().unwrap();
        let hidden = w1.cols;
        if b1.len() != hidden || w2.shape() != (hidden, 1) || b2.len() != 1 {
            return Err(Error::Checkpoint("inconsistent encoder tensor shapes".into()));
        }
        Ok(Self { w1, b1, w2, b2 })
    }
}

/// Three-hot encoder inputs, one row per edge.
pub fn edge_features(graph: &SchemaGraph, vocab: &TripletVocabulary, input_dim: usize) -> Result<Tensor> {
    if input_dim < vocab.onehot_dim() {
        return Err(Error::Contract(format!(
            "encoder input {input_dim} narrower than vocabulary one-hot {}",
            vocab.onehot_dim()
        )));
    }
    let mut x = Tensor::zeros(graph.edge_count(), input_dim);
    for (r, e) in graph.edges.iter().enumerate() {
        if e.src >= graph.node_count() || e.dst >= graph.node_count() {
            return Err(Error::Index {
                op: "edge_features",
                index: e.src.max(e.dst),
                len: graph.node_count(),
            });
        }
        let t = graph.triplet(e);
        vocab.check_triplet(t)?;
        for p in vocab.onehot_positions(t) {
            x.data[r * input_dim + p] = 1.0;
        }
    }
    Ok(x)
}

fn encode_rows(x: &Tensor, params: &GscParams, activation: Activation) -> Result<Vec<f64>> {
    if x.cols != params.input_dim() {
        return Err(Error::Shape {
            op: "edge_encoder",
            left: x.shape(),
            right: params.w1.shape(),
        });
    }
    let hidden = params.w1.cols;
    let mut h = kernels::affine(&x.data, &params.w1.data, &params.b1.data, x.rows, x.cols, hidden);
    h.iter_mut().for_each(|v| *v = activation.apply(*v));
    let y = kernels::affine(&h, &params.w2.data, &params.b2.data, x.rows, hidden, 1);
    Ok(y.into_iter().map(sigmoid_scalar).collect())
}

/// Soft count of every edge of `graph`.
pub fn edge_encoder_forward(graph: &SchemaGraph, params: &GscParams, config: &GscConfig) -> Result<Vec<f64>> {
    let x = edge_features(graph, &config.vocab, params.input_dim())?;
    encode_rows(&x, params, config.activation)
}

/// Soft count of a single triplet type.
pub fn triplet_soft_count(t: Triplet, params: &GscParams, config: &GscConfig) -> Result<f64> {
    let g = SchemaGraph::new(vec![t.head, t.tail], vec![crate::graph::Edge::new(0, 1, t.rel)]);
    Ok(edge_encoder_forward(&g, params, config)?[0])
}

fn check_edge_values(graph: &SchemaGraph, edge_values: &[f64]) -> Result<()> {
    if edge_values.len() != graph.edge_count() {
        return Err(Error::Contract(format!(
            "{} edge values for {} edges",
            edge_values.len(),
            graph.edge_count()
        )));
    }
    let n = graph.node_count();
    for e in &graph.edges {
        if e.src >= n || e.dst >= n {
            return Err(Error::Index {
                op: "gsc_forward",
                index: e.src.max(e.dst),
                len: n,
            });
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSnapshot {
    pub layer: usize,
    pub edge_values: Vec<f64>,
    pub node_values: Vec<f64>,
}

/// Snapshots of edge and node state after each of `num_layers` layers.
pub fn trace_values(graph: &SchemaGraph, edge_values: &[f64], num_layers: usize) -> Result<Vec<LayerSnapshot>> {
    check_edge_values(graph, edge_values)?;
    let src = graph.src_index();
    let dst = graph.dst_index();
    let mut edge = edge_values.to_vec();
    let mut node = vec![0.0; graph.node_count()];
    let mut out = Vec::with_capacity(num_layers);
    for layer in 1..=num_layers {
        kernels::gather_add_into(&mut edge, &node, &src);
        node = kernels::scatter_add(&edge, &dst, graph.node_count());
        out.push(LayerSnapshot {
            layer,
            edge_values: edge.clone(),
            node_values: node.clone(),
        });
    }
    Ok(out)
}

/// Runs `num_layers` counting layers over precomputed edge values and
/// returns the context-node value.
pub fn gsc_forward(graph: &SchemaGraph, edge_values: &[f64], num_layers: usize) -> Result<f64> {
    check_edge_values(graph, edge_values)?;
    let src = graph.src_index();
    let dst = graph.dst_index();
    Ok(gsc_forward_indexed(&src, &dst, graph.node_count(), edge_values, num_layers))
}

/// [`gsc_forward`] over prebuilt index arrays; no validation.
pub fn gsc_forward_indexed(src: &[usize], dst: &[usize], node_count: usize, edge_values: &[f64], num_layers: usize) -> f64 {
    GscWorkspace::default().forward(src, dst, node_count, edge_values, num_layers)
}

/// Reusable buffers for repeated [`gsc_forward_indexed`] calls.
#[derive(Clone, Debug, Default)]
pub struct GscWorkspace {
    edge: Vec<f64>,
    node: Vec<f64>,
}

impl GscWorkspace {
    pub fn forward(&mut self, src: &[usize], dst: &[usize], node_count: usize, edge_values: &[f64], num_layers: usize) -> f64 {
        if node_count == 0 {
            return 0.0;
        }
        self.edge.clear();
        self.edge.extend_from_slice(edge_values);
        self.node.clear();
        self.node.resize(node_count, 0.0);
        for _ in 0..num_layers {
            kernels::gather_add_into(&mut self.edge, &self.node, src);
            self.node.fill(0.0);
            for (&v, &d) in self.edge.iter().zip(dst) {
                self.node[d] += v;
            }
        }
        self.node[0]
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Brute-force walk enumeration equal to [`gsc_forward`].
///
/// Sums, over every walk `e_k -> ... -> e_1` of `k <= L` edges ending at
/// node 0, the value of its first edge `e_k` weighted by `C(L-1, k-1)`.
/// The weight counts the layer schedules that realize the walk: edge state
/// is never reset between layers, so a walk of `k` edges enters the score
/// once per choice of `k-1` of the `L-1` later layers. For `L <= 2` every
/// weight is 1. Exponential in `L`; small graphs only.
pub fn path_sum_oracle(graph: &SchemaGraph, edge_values: &[f64], num_layers: usize) -> Result<f64> {
    check_edge_values(graph, edge_values)?;
    let mut incoming: HashMap<usize, Vec<usize>> = HashMap::new();
    for (i, e) in graph.edges.iter().enumerate() {
        incoming.entry(e.dst).or_default().push(i);
    }
    let weights: Vec<f64> = (0..=num_layers)
        .map(|k| if k == 0 { 0.0 } else { binomial(num_layers - 1, k - 1) })
        .collect();

    fn walk(
        edge: usize,
        depth: usize,
        graph: &SchemaGraph,
        values: &[f64],
        incoming: &HashMap<usize, Vec<usize>>,
        weights: &[f64],
        max_depth: usize,
    ) -> f64 {
        let mut total = weights[depth] * values[edge];
        if depth < max_depth {
            if let Some(prev) = incoming.get(&graph.edges[edge].src) {
                for &p in prev {
                    total += walk(p, depth + 1, graph, values, incoming, weights, max_depth);
                }
            }
        }
        total
    }

    let mut score = 0.0;
    if num_layers == 0 {
        return Ok(score);
    }
    if let Some(into_context) = incoming.get(&0) {
        for &e in into_context {
            score += walk(e, 1, graph, edge_values, &incoming, &weights, num_layers);
        }
    }
    Ok(score)
}

/// Per-layer edge/node snapshots for a graph scored by `params`.
pub fn trace_layers(graph: &SchemaGraph, params: &GscParams, config: &GscConfig) -> Result<Vec<LayerSnapshot>> {
    let g = prepare_graph(graph, config)?;
    let values = edge_encoder_forward(&g, params, config)?;
    trace_values(&g, &values, config.num_layers)
}

fn prepare_graph<'a>(graph: &'a SchemaGraph, config: &GscConfig) -> Result<std::borrow::Cow<'a, SchemaGraph>> {
    Ok(match config.max_nodes {
        Some(m) => std::borrow::Cow::Owned(truncate_nodes(graph, m)?),
        None => std::borrow::Cow::Borrowed(graph),
    })
}

pub fn graph_score(graph: &SchemaGraph, params: &GscParams, config: &GscConfig) -> Result<f64> {
    let values = edge_encoder_forward(graph, params, config)?;
    gsc_forward(graph, &values, config.num_layers)
}

/// `context_score + graph_score` for one choice.
pub fn choice_score(graph: &SchemaGraph, params: &GscParams, config: &GscConfig, context_score: Option<f64>) -> Result<f64> {
    let context = config.context.resolve(context_score, 0)?;
    Ok(context + graph_score(graph, params, config)?)
}

/// Scores every choice of an instance, applying the node cap if configured.
pub fn instance_forward(instance: &QAInstance, params: &GscParams, config: &GscConfig) -> Result<Vec<f64>> {
    instance
        .choices
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let g = prepare_graph(&c.graph, config)?;
            let context = config.context.resolve(c.context_score, i)?;
            Ok(context + graph_score(&g, params, config)?)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SoftCountRow {
    pub head_type: usize,
    pub relation: usize,
    pub tail_type: usize,
    pub soft_count: f64,
}

/// Evaluates the encoder on every triplet type and returns the `top_k`
/// highest, ties broken by ascending triplet index.
pub fn dump_soft_counts(params: &GscParams, config: &GscConfig, top_k: usize) -> Result<Vec<SoftCountRow>> {
    let vocab = &config.vocab;
    let n = vocab.triplet_type_count();
    let mut x = Tensor::zeros(n, params.input_dim());
    for idx in 0..n {
        for p in vocab.onehot_positions(vocab.triplet_at(idx)) {
            x.data[idx * x.cols + p] = 1.0;
        }
    }
    let values = encode_rows(&x, params, config.activation)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    Ok(order
        .into_iter()
        .take(top_k)
        .map(|idx| {
            let t = vocab.triplet_at(idx);
            SoftCountRow {
                head_type: t.head,
                relation: t.rel,
                tail_type: t.tail,
                soft_count: values[idx],
            }
        })
        .collect())
}

pub fn soft_counts_csv(rows: &[SoftCountRow]) -> String {
    let mut s = String::from("head_type,relation,tail_type,soft_count\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{:.6}\n", r.head_type, r.relation, r.tail_type, r.soft_count));
    }
    s
}

/// Encoder parameters placed on a tape.
#[derive(Clone, Copy, Debug)]
pub struct GscVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl GscVars {
    pub fn from_slice(vars: &[Var]) -> Self {
        Self {
            w1: vars[0],
            b1: vars[1],
            w2: vars[2],
            b2: vars[3],
        }
    }
}

/// Differentiable encoder over precomputed three-hot rows; `[E×1]`.
pub fn encode_on_tape(tape: &mut Tape, vars: GscVars, features: Tensor, activation: Activation) -> Result<Var> {
    let x = tape.constant(features);
    let h = tape.affine(vars.w1, vars.b1, x)?;
    let h = tape.activation(h, activation);
    let y = tape.affine(vars.w2, vars.b2, h)?;
    Ok(tape.sigmoid(y))
}

/// Differentiable counting layers; returns the scalar context-node value.
pub fn gsc_on_tape(
    tape: &mut Tape,
    edge_values: Var,
    src: Arc<[usize]>,
    dst: Arc<[usize]>,
    node_count: usize,
    num_layers: usize,
) -> Result<Var> {
    let mut edge = edge_values;
    let mut node = tape.constant(Tensor::zeros(node_count, 1));
    for _ in 0..num_layers {
        edge = tape.gather_add(edge, node, src.clone())?;
        node = tape.scatter_add(edge, dst.clone(), node_count)?;
    }
    tape.select(node, 0)
}

/// Differentiable per-choice scores `[C×1]`.
pub fn instance_scores_on_tape(tape: &mut Tape, vars: GscVars, instance: &QAInstance, config: &GscConfig) -> Result<Var> {
    let mut scores = Vec::with_capacity(instance.choices.len());
    for (i, c) in instance.choices.iter().enumerate() {
        let g = prepare_graph(&c.graph, config)?;
        let features = edge_features(&g, &config.vocab, config.input_dim())?;
        let values = encode_on_tape(tape, vars, features, config.activation)?;
        let score = gsc_on_tape(
            tape,
            values,
            Arc::from(g.src_index()),
            Arc::from(g.dst_index()),
            g.node_count(),
            config.num_layers,
        )?;
        let context = config.context.resolve(c.context_score, i)?;
        let score = if context != 0.0 {
            let cv = tape.constant(Tensor::scalar(context));
            tape.add(score, cv)?
        } else {
            score
        };
        scores.push(score);
    }
    tape.stack(&scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::{grad_check, GradCheckMode};
    use crate::graph::Edge;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn chain() -> (SchemaGraph, Vec<f64>) {
        (
            SchemaGraph::new(vec![0, 1, 3], vec![Edge::new(2, 1, 0), Edge::new(1, 0, 34)]),
            vec![0.4, 0.6],
        )
    }

    #[test]
    fn zero_params_give_half() {
        let cfg = GscConfig::default();
        let p = GscParams::zeros(cfg.input_dim(), 32);
        let (g, _) = chain();
        assert_eq!(edge_encoder_forward(&g, &p, &cfg).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn identical_triplets_identical_values() {
        let cfg = GscConfig::default();
        let p = GscParams::init(cfg.input_dim(), 32, &mut ChaCha8Rng::seed_from_u64(1));
        let g = SchemaGraph::new(vec![0, 1, 3, 3], vec![Edge::new(2, 1, 5), Edge::new(3, 1, 5), Edge::new(1, 0, 34)]);
        let v = edge_encoder_forward(&g, &p, &cfg).unwrap();
        assert_eq!(v[0], v[1]);
    }

    #[test]
    fn encoder_vocab_mismatch() {
        let cfg = GscConfig::default();
        let p = GscParams::zeros(cfg.input_dim(), 32);
        let g = SchemaGraph::new(vec![0, 7], vec![Edge::new(1, 0, 0)]);
        assert!(matches!(edge_encoder_forward(&g, &p, &cfg), Err(Error::Encoding { field: "head_type", .. })));
    }

    #[test]
    fn all_triplet_values_in_open_unit_interval() {
        let cfg = GscConfig::default();
        for seed in 0..3 {
            let p = GscParams::init(cfg.input_dim(), 32, &mut ChaCha8Rng::seed_from_u64(seed));
            let rows = dump_soft_counts(&p, &cfg, usize::MAX).unwrap();
            assert_eq!(rows.len(), 608);
            assert!(rows.iter().all(|r| r.soft_count > 0.0 && r.soft_count < 1.0));
        }
    }

    #[test]
    fn forward_small_cases() {
        let empty = SchemaGraph::context_only();
        assert_eq!(gsc_forward(&empty, &[], 2).unwrap(), 0.0);

        let single = SchemaGraph::new(vec![0, 1], vec![Edge::new(1, 0, 34)]);
        assert_eq!(gsc_forward(&single, &[0.37], 2).unwrap(), 0.37);

        let (g, v) = chain();
        assert_eq!(gsc_forward(&g, &v, 2).unwrap(), 1.0);
        assert_eq!(path_sum_oracle(&g, &v, 2).unwrap(), 1.0);
        assert!(matches!(gsc_forward(&g, &[0.1], 2), Err(Error::Contract(_))));
    }

    #[test]
    fn three_layer_chain_counts_two_hop_twice() {
        // 3 -> 2 -> 1 -> 0 with values a, b, c: the accumulated edge state
        // delivers a + 2b + c after three layers.
        let g = SchemaGraph::new(vec![0, 1, 3, 3], vec![Edge::new(3, 2, 0), Edge::new(2, 1, 0), Edge::new(1, 0, 34)]);
        let v = [0.1, 0.2, 0.4];
        let s = gsc_forward(&g, &v, 3).unwrap();
        assert!((s - (0.1 + 2.0 * 0.2 + 0.4)).abs() < 1e-15);
        assert!((path_sum_oracle(&g, &v, 3).unwrap() - s).abs() < 1e-15);
    }

    #[test]
    fn one_layer_oracle_is_incoming_sum() {
        let g = SchemaGraph::new(vec![0, 1, 2], vec![Edge::new(1, 0, 34), Edge::new(2, 0, 36), Edge::new(2, 1, 3)]);
        let v = [0.25, 0.5, 0.125];
        assert_eq!(path_sum_oracle(&g, &v, 1).unwrap(), 0.75);
        assert_eq!(gsc_forward(&g, &v, 1).unwrap(), 0.75);
    }

    #[test]
    fn trace_chain() {
        let (g, v) = chain();
        let t = trace_values(&g, &v, 2).unwrap();
        assert_eq!(t[0].node_values, vec![0.6, 0.4, 0.0]);
        assert_eq!(t[1].node_values, vec![1.0, 0.4, 0.0]);
        assert_eq!(t[1].edge_values, vec![0.4, 1.0]);

        let t = trace_values(&SchemaGraph::context_only(), &[], 2).unwrap();
        assert!(t.iter().all(|s| s.node_values == vec![0.0] && s.edge_values.is_empty()));
    }

    #[test]
    fn choice_score_additivity() {
        let mut cfg = GscConfig::default();
        let p = GscParams::zeros(cfg.input_dim(), 32);
        // one edge into the context at 0.5, doubled to 1.0 by a twin edge
        let g = SchemaGraph::new(vec![0, 1], vec![Edge::new(1, 0, 34), Edge::new(1, 0, 34)]);
        cfg.context = ContextProvider::FromFile;
        assert_eq!(choice_score(&g, &p, &cfg, Some(0.0)).unwrap(), 1.0);
        assert_eq!(choice_score(&g, &p, &cfg, Some(-2.5)).unwrap(), -1.5);
        assert!(matches!(choice_score(&g, &p, &cfg, None), Err(Error::MissingScore { .. })));
        cfg.context = ContextProvider::Zero;
        assert_eq!(choice_score(&g, &p, &cfg, Some(5.0)).unwrap(), 1.0);
        cfg.context = ContextProvider::Constant { value: 2.0 };
        assert_eq!(choice_score(&g, &p, &cfg, None).unwrap(), 3.0);
    }

    #[test]
    fn param_count_default() {
        let cfg = GscConfig::default();
        let p = GscParams::zeros(cfg.input_dim(), cfg.hidden);
        assert_eq!(p.param_count(), 1537);
        let padded = GscConfig {
            pad_input: true,
            ..GscConfig::default()
        };
        assert_eq!(GscParams::zeros(padded.input_dim(), 32).param_count(), 1569);
    }

    #[test]
    fn soft_count_dump_tiebreak_and_csv() {
        let cfg = GscConfig::default();
        let p = GscParams::zeros(cfg.input_dim(), 32);
        let rows = dump_soft_counts(&p, &cfg, 3).unwrap();
        assert!(rows.iter().all(|r| r.soft_count == 0.5));
        assert_eq!((rows[1].head_type, rows[1].relation, rows[1].tail_type), (0, 0, 1));
        let csv = soft_counts_csv(&rows);
        assert!(csv.starts_with("head_type,relation,tail_type,soft_count\n0,0,0,0.500000\n"));
    }

    #[test]
    fn tape_matches_plain_forward_and_gradients_check() {
        let cfg = GscConfig {
            activation: Activation::Tanh,
            ..GscConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = GscParams::init(cfg.input_dim(), 32, &mut rng);
        let g = SchemaGraph::new(
            vec![0, 1, 2, 3],
            vec![Edge::new(1, 0, 34), Edge::new(2, 0, 36), Edge::new(3, 1, 2), Edge::new(3, 2, 9), Edge::new(0, 1, 35)],
        );
        let inst = QAInstance {
            id: "t".into(),
            label: 1,
            choices: vec![
                crate::instances::Choice {
                    context_score: None,
                    graph: g.clone(),
                },
                crate::instances::Choice {
                    context_score: None,
                    graph: SchemaGraph::new(vec![0, 2, 2, 3], vec![Edge::new(1, 0, 36), Edge::new(2, 0, 36), Edge::new(3, 1, 4)]),
                },
            ],
        };
        let plain = instance_forward(&inst, &p, &cfg).unwrap();
        let mut tape = Tape::new();
        let vars: Vec<Var> = p.tensors().into_iter().map(|t| tape.leaf(t.clone())).collect();
        let s = instance_scores_on_tape(&mut tape, GscVars::from_slice(&vars), &inst, &cfg).unwrap();
        for (a, b) in tape.value(s).data.iter().zip(&plain) {
            assert!((a - b).abs() < 1e-14);
        }

        let params: Vec<Tensor> = p.tensors().into_iter().cloned().collect();
        let r = grad_check(
            |t, v| {
                let s = instance_scores_on_tape(t, GscVars::from_slice(v), &inst, &cfg)?;
                t.softmax_cross_entropy(s, inst.label)
            },
            &params,
            1e-4,
            GradCheckMode::Exhaustive,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }
}
