//! Synthetic multiple-choice corpora with a planted counting signal.
//!
//! Every choice gets an i.i.d. noise graph: a context node linked to its
//! question and answer entities plus random entity-entity edges. The gold
//! choice additionally receives `delta` edges of each planted triplet type,
//! ending on context-adjacent nodes so that they sit inside a two-layer
//! receptive field. Exact counting of the planted types recovers the label.

use std::ops::RangeInclusive;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{
    symmetrize, Edge, SchemaGraph, TripletVocabulary, ANSWER, ANSWER_LINK, CONTEXT, OTHER, QUESTION, QUESTION_LINK,
};
use crate::instances::{Choice, QAInstance};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedSignal {
    pub head_type: usize,
    pub rel: usize,
    pub tail_type: usize,
    /// Extra edges the gold choice receives, drawn uniformly per instance
    /// from `delta..=delta_max` (just `delta` when unset).
    pub delta: usize,
    #[serde(default)]
    pub delta_max: Option<usize>,
}

impl PlantedSignal {
    pub fn new(head_type: usize, rel: usize, tail_type: usize, delta: usize) -> Self {
        Self {
            head_type,
            rel,
            tail_type,
            delta,
            delta_max: None,
        }
    }

    fn delta_range(&self) -> RangeInclusive<usize> {
        self.delta..=self.delta_max.unwrap_or(self.delta).max(self.delta)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticTaskConfig {
    pub instances: usize,
    pub choices: usize,
    pub question_nodes: (usize, usize),
    pub answer_nodes: (usize, usize),
    pub other_nodes: (usize, usize),
    /// Random entity-entity edges per choice, before symmetrization.
    pub noise_edges: (usize, usize),
    /// Relations noise edges are drawn from; all base relations when empty.
    pub noise_relations: Vec<usize>,
    pub planted: Vec<PlantedSignal>,
    pub vocab: TripletVocabulary,
    pub seed: u64,
    pub id_prefix: String,
}

impl Default for SyntheticTaskConfig {
    fn default() -> Self {
        Self {
            instances: 1000,
            choices: 5,
            question_nodes: (1, 3),
            answer_nodes: (1, 2),
            other_nodes: (2, 6),
            noise_edges: (4, 12),
            noise_relations: Vec::new(),
            planted: vec![PlantedSignal {
                delta_max: Some(3),
                ..PlantedSignal::new(OTHER, 5, QUESTION, 2)
            }],
            vocab: TripletVocabulary::default(),
            seed: 0,
            id_prefix: "syn".into(),
        }
    }
}

impl SyntheticTaskConfig {
    fn type_range(&self, node_type: usize) -> (usize, usize) {
        match node_type {
            CONTEXT => (1, 1),
            QUESTION => self.question_nodes,
            ANSWER => self.answer_nodes,
            _ => self.other_nodes,
        }
    }

    fn noise_relation_pool(&self) -> Vec<usize> {
        if self.noise_relations.is_empty() {
            let v = &self.vocab;
            // base relations: those whose reversal has a larger id
            (0..v.relation_count).filter(|&r| v.reverse(r) > r && r != QUESTION_LINK && r != ANSWER_LINK).collect()
        } else {
            self.noise_relations.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.vocab.check()?;
        if self.vocab.node_type_count < 4 || self.vocab.relation_count <= ANSWER_LINK + 1 {
            return Err(Error::InvalidConfig(
                "synthetic corpora need the four node roles and the link relations".into(),
            ));
        }
        if self.choices < 2 {
            return Err(Error::InvalidConfig("need at least 2 choices".into()));
        }
        for (name, (lo, hi)) in [
            ("question_nodes", self.question_nodes),
            ("answer_nodes", self.answer_nodes),
            ("other_nodes", self.other_nodes),
            ("noise_edges", self.noise_edges),
        ] {
            if lo > hi {
                return Err(Error::InvalidConfig(format!("{name}: min {lo} > max {hi}")));
            }
        }
        if self.question_nodes.0 + self.answer_nodes.0 == 0 {
            return Err(Error::InvalidConfig("choices need at least one entity node".into()));
        }
        let pool = self.noise_relation_pool();
        if self.noise_edges.1 > 0 && pool.is_empty() {
            return Err(Error::InvalidConfig("noise relation pool is empty".into()));
        }
        if let Some(&r) = pool.iter().find(|&&r| r >= self.vocab.relation_count) {
            return Err(Error::InvalidConfig(format!("noise relation {r} out of range")));
        }
        for p in &self.planted {
            if p.delta < 1 {
                return Err(Error::InvalidConfig("planted delta must be >= 1".into()));
            }
            if p.head_type >= self.vocab.node_type_count
                || p.tail_type >= self.vocab.node_type_count
                || p.rel >= self.vocab.relation_count
            {
                return Err(Error::InvalidConfig(format!("planted triplet {p:?} outside the vocabulary")));
            }
            if p.tail_type >= OTHER {
                return Err(Error::Generation(format!(
                    "planted tail type {} is not context-adjacent; use context, question or answer",
                    p.tail_type
                )));
            }
            let heads = self.type_range(p.head_type).0;
            let tails = self.type_range(p.tail_type).0;
            let needed = if p.head_type == p.tail_type { 2 } else { 1 };
            if heads < needed || tails < 1 {
                return Err(Error::Generation(format!(
                    "planted triplet {p:?} needs {needed} node(s) of the head type and one of the tail type, \
                     but the minimum node counts allow {heads} and {tails}"
                )));
            }
        }
        Ok(())
    }
}

fn noise_graph(cfg: &SyntheticTaskConfig, pool: &[usize], rng: &mut ChaCha8Rng) -> SchemaGraph {
    let mut node_types = vec![CONTEXT];
    let nq = rng.random_range(cfg.question_nodes.0..=cfg.question_nodes.1);
    let na = rng.random_range(cfg.answer_nodes.0..=cfg.answer_nodes.1);
    let no = rng.random_range(cfg.other_nodes.0..=cfg.other_nodes.1);
    node_types.extend(std::iter::repeat_n(QUESTION, nq));
    node_types.extend(std::iter::repeat_n(ANSWER, na));
    node_types.extend(std::iter::repeat_n(OTHER, no));
    let n = node_types.len();

    let mut edges = Vec::new();
    for (i, &t) in node_types.iter().enumerate().skip(1) {
        match t {
            QUESTION => edges.push(Edge::new(i, 0, QUESTION_LINK)),
            ANSWER => edges.push(Edge::new(i, 0, ANSWER_LINK)),
            _ => {}
        }
    }
    if n >= 3 {
        let k = rng.random_range(cfg.noise_edges.0..=cfg.noise_edges.1);
        for _ in 0..k {
            let s = rng.random_range(1..n);
            let mut d = rng.random_range(1..n - 1);
            if d >= s {
                d += 1;
            }
            let rel = *pool.choose(rng).expect("non-empty pool");
            edges.push(Edge::new(s, d, rel));
        }
    }
    SchemaGraph::new(node_types, edges)
}

fn plant(graph: &mut SchemaGraph, signal: &PlantedSignal, rng: &mut ChaCha8Rng) -> Result<()> {
    let of_type = |t: usize| -> Vec<usize> {
        graph
            .node_types
            .iter()
            .enumerate()
            .filter(|(_, &x)| x.min(OTHER) == t.min(OTHER))
            .map(|(i, _)| i)
            .collect()
    };
    let heads = of_type(signal.head_type);
    let tails = of_type(signal.tail_type);
    let delta = rng.random_range(signal.delta_range());
    for _ in 0..delta {
        let dst = *tails.choose(rng).ok_or_else(|| Error::Generation("no tail node".into()))?;
        let candidates: Vec<usize> = heads.iter().copied().filter(|&h| h != dst).collect();
        let src = *candidates
            .choose(rng)
            .ok_or_else(|| Error::Generation(format!("no head node distinct from {dst} for {signal:?}")))?;
        graph.edges.push(Edge::new(src, dst, signal.rel));
    }
    Ok(())
}

fn generate_one(cfg: &SyntheticTaskConfig, pool: &[usize], index: usize) -> Result<QAInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let label = rng.random_range(0..cfg.choices);
    let mut choices = Vec::with_capacity(cfg.choices);
    for c in 0..cfg.choices {
        let mut g = noise_graph(cfg, pool, &mut rng);
        if c == label {
            for s in &cfg.planted {
                plant(&mut g, s, &mut rng)?;
            }
        }
        choices.push(Choice {
            context_score: None,
            graph: symmetrize(&g, &cfg.vocab)?,
        });
    }
    Ok(QAInstance {
        id: format!("{}-{index:06}", cfg.id_prefix),
        label,
        choices,
    })
}

/// Generates `config.instances` instances; instance `i` depends only on
/// `(seed, i)`.
pub fn generate_synthetic(config: &SyntheticTaskConfig) -> Result<Vec<QAInstance>> {
    config.validate()?;
    let pool = config.noise_relation_pool();
    (0..config.instances)
        .into_par_iter()
        .map(|i| generate_one(config, &pool, i))
        .collect()
}
