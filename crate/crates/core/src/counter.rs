//! Hard edge-triplet counting baseline: integer histograms of triplet
//! occurrences (and optionally of consecutive triplet pairs) fed to a
//! two-layer MLP head.

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::diff::{kernels, Activation, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::{truncate_nodes, SchemaGraph, TripletVocabulary};
use crate::instances::QAInstance;

/// How the two edges of a length-2 path are typed in the pair block.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairTyping {
    /// (relation, relation): `R²` pair slots.
    #[default]
    Relation,
    /// (triplet type, triplet type): `T²` pair slots.
    Triplet,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CountMode {
    #[default]
    OneHop,
    TwoHop {
        #[serde(default)]
        pair_typing: PairTyping,
        /// Count only paths whose second edge ends at the context node.
        #[serde(default)]
        context_terminated: bool,
    },
}

impl CountMode {
    pub fn dim(&self, vocab: &TripletVocabulary) -> usize {
        let t = vocab.triplet_type_count();
        match self {
            CountMode::OneHop => t,
            CountMode::TwoHop { pair_typing, .. } => {
                t + match pair_typing {
                    PairTyping::Relation => vocab.relation_count * vocab.relation_count,
                    PairTyping::Triplet => t * t,
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CountFeature {
    pub mode: CountMode,
    pub values: Vec<u64>,
}

impl CountFeature {
    pub fn one_hop_block(&self, vocab: &TripletVocabulary) -> &[u64] {
        &self.values[..vocab.triplet_type_count()]
    }

    pub fn pair_block(&self, vocab: &TripletVocabulary) -> &[u64] {
        &self.values[vocab.triplet_type_count()..]
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| v as f64).collect()
    }

    /// `feature_index,count` rows for every nonzero entry.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("feature_index,count\n");
        for (i, &v) in self.values.iter().enumerate() {
            if v != 0 {
                s.push_str(&format!("{i},{v}\n"));
            }
        }
        s
    }
}

fn one_hop_into(graph: &SchemaGraph, vocab: &TripletVocabulary, out: &mut [u64]) {
    for e in &graph.edges {
        out[vocab.triplet_index(graph.triplet(e))] += 1;
    }
}

pub fn count_features_1hop(graph: &SchemaGraph, vocab: &TripletVocabulary) -> CountFeature {
    let mut values = vec![0; vocab.triplet_type_count()];
    one_hop_into(graph, vocab, &mut values);
    CountFeature {
        mode: CountMode::OneHop,
        values,
    }
}

/// One-hop histogram followed by counts of ordered type pairs over directed
/// paths `first, second` with `dst(first) = src(second)`.
pub fn count_features_2hop(
    graph: &SchemaGraph,
    vocab: &TripletVocabulary,
    pair_typing: PairTyping,
    context_terminated: bool,
) -> CountFeature {
    let mode = CountMode::TwoHop {
        pair_typing,
        context_terminated,
    };
    let t = vocab.triplet_type_count();
    let mut values = vec![0; mode.dim(vocab)];
    one_hop_into(graph, vocab, &mut values[..t]);

    let mut incoming: Vec<Vec<usize>> = vec![Vec::new(); graph.node_count()];
    for (i, e) in graph.edges.iter().enumerate() {
        incoming[e.dst].push(i);
    }
    let slot = |i: usize| -> usize {
        let e = &graph.edges[i];
        match pair_typing {
            PairTyping::Relation => e.rel,
            PairTyping::Triplet => vocab.triplet_index(graph.triplet(e)),
        }
    };
    let width = match pair_typing {
        PairTyping::Relation => vocab.relation_count,
        PairTyping::Triplet => t,
    };
    let pairs = &mut values[t..];
    for (second, e) in graph.edges.iter().enumerate() {
        if context_terminated && e.dst != 0 {
            continue;
        }
        let s = slot(second);
        for &first in &incoming[e.src] {
            pairs[slot(first) * width + s] += 1;
        }
    }
    CountFeature { mode, values }
}

pub fn count_features(graph: &SchemaGraph, vocab: &TripletVocabulary, mode: CountMode) -> CountFeature {
    match mode {
        CountMode::OneHop => count_features_1hop(graph, vocab),
        CountMode::TwoHop {
            pair_typing,
            context_terminated,
        } => count_features_2hop(graph, vocab, pair_typing, context_terminated),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterHead {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    #[serde(default)]
    pub activation: Activation,
}

pub const COUNTER_PARAM_NAMES: [&str; 4] = ["head.0.weight", "head.0.bias", "head.1.weight", "head.1.bias"];

impl CounterHead {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        Self {
            w1: Tensor::zeros(input_dim, hidden),
            b1: Tensor::zeros(1, hidden),
            w2: Tensor::zeros(hidden, 1),
            b2: Tensor::zeros(1, 1),
            activation: Activation::Relu,
        }
    }

    pub fn init(input_dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let mut h = Self::zeros(input_dim, hidden);
        for (t, fan_in) in [(&mut h.w1, input_dim), (&mut h.b1, input_dim), (&mut h.w2, hidden), (&mut h.b2, hidden)] {
            let a = 1.0 / (fan_in as f64).sqrt();
            let u = Uniform::new_inclusive(-a, a).expect("finite bound");
            t.data.iter_mut().for_each(|v| *v = u.sample(rng));
        }
        h
    }

    pub fn input_dim(&self) -> usize {
        self.w1.rows
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    fn forward_rows(&self, x: &[f64], rows: usize) -> Vec<f64> {
        let (f, h) = (self.w1.rows, self.w1.cols);
        let mut hidden = kernels::affine(x, &self.w1.data, &self.b1.data, rows, f, h);
        hidden.iter_mut().for_each(|v| *v = self.activation.apply(*v));
        kernels::affine(&hidden, &self.w2.data, &self.b2.data, rows, h, 1)
    }
}

pub fn counter_forward(feature: &[f64], head: &CounterHead) -> Result<f64> {
    if feature.len() != head.input_dim() {
        return Err(Error::Shape {
            op: "counter_forward",
            left: (1, feature.len()),
            right: head.w1.shape(),
        });
    }
    Ok(head.forward_rows(feature, 1)[0])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CounterConfig {
    pub mode: CountMode,
    pub hidden: usize,
    pub vocab: TripletVocabulary,
    pub max_nodes: Option<usize>,
}

impl Default for CounterConfig {
    fn default() -> Self {
        Self {
            mode: CountMode::OneHop,
            hidden: 32,
            vocab: TripletVocabulary::default(),
            max_nodes: None,
        }
    }
}

impl CounterConfig {
    pub fn input_dim(&self) -> usize {
        self.mode.dim(&self.vocab)
    }

    /// Feature rows `[C×F]` for every choice of an instance.
    pub fn instance_features(&self, instance: &QAInstance) -> Result<Tensor> {
        let f = self.input_dim();
        let mut x = Vec::with_capacity(instance.choices.len() * f);
        for c in &instance.choices {
            let feat = match self.max_nodes {
                Some(m) => count_features(&truncate_nodes(&c.graph, m)?, &self.vocab, self.mode),
                None => count_features(&c.graph, &self.vocab, self.mode),
            };
            x.extend(feat.values.iter().map(|&v| v as f64));
        }
        Tensor::new(instance.choices.len(), f, x)
    }
}

pub fn counter_instance_scores(instance: &QAInstance, head: &CounterHead, config: &CounterConfig) -> Result<Vec<f64>> {
    let x = config.instance_features(instance)?;
    if x.cols != head.input_dim() {
        return Err(Error::Shape {
            op: "counter_forward",
            left: x.shape(),
            right: head.w1.shape(),
        });
    }
    Ok(head.forward_rows(&x.data, x.rows))
}

/// Head applied to constant feature rows on a tape; `[C×1]`.
pub fn counter_scores_on_tape(tape: &mut Tape, vars: &[Var], features: Tensor, activation: Activation) -> Result<Var> {
    let x = tape.constant(features);
    let h = tape.affine(vars[0], vars[1], x)?;
    let h = tape.activation(h, activation);
    tape.affine(vars[2], vars[3], h)
}
