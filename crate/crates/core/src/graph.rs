//! Schema graphs, the triplet vocabulary and the graph-level transforms
//! (symmetrization, node capping, validation).

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Node-type ids. Types at or above [`OTHER`] are all treated as "other".
pub const CONTEXT: usize = 0;
pub const QUESTION: usize = 1;
pub const ANSWER: usize = 2;
pub const OTHER: usize = 3;

/// Number of head/tail type slots and relation slots in the concatenated
/// one-hot `[head type, relation, tail type]`.
///
/// Relation ids for an even `relation_count >= 6` are laid out as
/// `B = (relation_count - 4) / 2` base relations, their reversals at
/// `B..2B`, then two (link, reversed link) pairs for the question and
/// answer links. With the defaults that is base `0..17`, reversed `17..34`
/// and links `34..38`, where `34 <-> 35` and `36 <-> 37`. Smaller or odd
/// counts pair `r` with `r + R/2` and leave an odd trailing relation
/// self-inverse.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TripletVocabulary {
    pub node_type_count: usize,
    pub relation_count: usize,
}

impl Default for TripletVocabulary {
    fn default() -> Self {
        Self {
            node_type_count: 4,
            relation_count: 38,
        }
    }
}

/// Relation id of a question-entity to context link.
pub const QUESTION_LINK: usize = 34;
/// Relation id of an answer-entity to context link.
pub const ANSWER_LINK: usize = 36;

pub fn build_triplet_vocab(node_type_count: i64, relation_count: i64) -> Result<TripletVocabulary> {
    if node_type_count < 1 || relation_count < 1 {
        return Err(Error::InvalidConfig(format!(
            "vocabulary counts must be >= 1, got node_type_count={node_type_count} relation_count={relation_count}"
        )));
    }
    Ok(TripletVocabulary {
        node_type_count: node_type_count as usize,
        relation_count: relation_count as usize,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triplet {
    pub head: usize,
    pub rel: usize,
    pub tail: usize,
}

impl TripletVocabulary {
    pub fn check(&self) -> Result<()> {
        build_triplet_vocab(self.node_type_count as i64, self.relation_count as i64).map(|_| ())
    }

    pub fn onehot_dim(&self) -> usize {
        2 * self.node_type_count + self.relation_count
    }

    pub fn relation_offset(&self) -> usize {
        self.node_type_count
    }

    pub fn tail_offset(&self) -> usize {
        self.node_type_count + self.relation_count
    }

    /// Number of distinct (head type, relation, tail type) combinations.
    pub fn triplet_type_count(&self) -> usize {
        self.node_type_count * self.node_type_count * self.relation_count
    }

    fn base_relations(&self) -> usize {
        let r = self.relation_count;
        if r >= 6 && r % 2 == 0 {
            (r - 4) / 2
        } else {
            r / 2
        }
    }

    /// Id of the reversed relation. An involution on `0..relation_count`.
    pub fn reverse(&self, rel: usize) -> usize {
        let base = self.base_relations();
        if rel < base {
            rel + base
        } else if rel < 2 * base {
            rel - base
        } else if self.relation_count >= 6 && self.relation_count % 2 == 0 {
            // link pairs
            let k = rel - 2 * base;
            2 * base + (k ^ 1)
        } else {
            rel
        }
    }

    /// Dense index of a triplet type, head-major.
    pub fn triplet_index(&self, t: Triplet) -> usize {
        (t.head * self.relation_count + t.rel) * self.node_type_count + t.tail
    }

    pub fn triplet_at(&self, index: usize) -> Triplet {
        let tail = index % self.node_type_count;
        let rest = index / self.node_type_count;
        Triplet {
            head: rest / self.relation_count,
            rel: rest % self.relation_count,
            tail,
        }
    }

    pub fn check_triplet(&self, t: Triplet) -> Result<()> {
        let n = self.node_type_count;
        if t.head >= n {
            return Err(Error::Encoding {
                field: "head_type",
                value: t.head,
                bound: n,
            });
        }
        if t.rel >= self.relation_count {
            return Err(Error::Encoding {
                field: "rel",
                value: t.rel,
                bound: self.relation_count,
            });
        }
        if t.tail >= n {
            return Err(Error::Encoding {
                field: "tail_type",
                value: t.tail,
                bound: n,
            });
        }
        Ok(())
    }

    /// Positions of the three ones in the encoding of `t`.
    pub fn onehot_positions(&self, t: Triplet) -> [usize; 3] {
        [t.head, self.relation_offset() + t.rel, self.tail_offset() + t.tail]
    }
}

pub fn encode_triplet_onehot(
    head_type: usize,
    rel: usize,
    tail_type: usize,
    vocab: &TripletVocabulary,
) -> Result<Vec<f64>> {
    let t = Triplet {
        head: head_type,
        rel,
        tail: tail_type,
    };
    vocab.check_triplet(t)?;
    let mut out = vec![0.0; vocab.onehot_dim()];
    for p in vocab.onehot_positions(t) {
        out[p] = 1.0;
    }
    Ok(out)
}

/// Inverse of [`encode_triplet_onehot`]; `None` unless `v` is a valid
/// three-hot vector for the vocabulary.
pub fn decode_triplet_onehot(v: &[f64], vocab: &TripletVocabulary) -> Option<Triplet> {
    if v.len() != vocab.onehot_dim() {
        return None;
    }
    let hot = |range: std::ops::Range<usize>| -> Option<usize> {
        let start = range.start;
        let mut found = None;
        for i in range {
            if v[i] == 1.0 {
                if found.is_some() {
                    return None;
                }
                found = Some(i - start);
            } else if v[i] != 0.0 {
                return None;
            }
        }
        found
    };
    let n = vocab.node_type_count;
    Some(Triplet {
        head: hot(0..n)?,
        rel: hot(vocab.relation_offset()..vocab.tail_offset())?,
        tail: hot(vocab.tail_offset()..vocab.onehot_dim())?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[usize; 3]", into = "[usize; 3]")]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub rel: usize,
}

impl Edge {
    pub fn new(src: usize, dst: usize, rel: usize) -> Self {
        Self { src, dst, rel }
    }

    pub fn reversed(&self, vocab: &TripletVocabulary) -> Edge {
        Edge::new(self.dst, self.src, vocab.reverse(self.rel))
    }
}

impl From<[usize; 3]> for Edge {
    fn from(a: [usize; 3]) -> Self {
        Edge::new(a[0], a[1], a[2])
    }
}

impl From<Edge> for [usize; 3] {
    fn from(e: Edge) -> Self {
        [e.src, e.dst, e.rel]
    }
}

/// Typed nodes plus directed typed edges for one answer choice. Node 0 is
/// the context node.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SchemaGraph {
    #[serde(rename = "nodes")]
    pub node_types: Vec<usize>,
    pub edges: Vec<Edge>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Diagnostic {
    Empty,
    ContextNodeType { found: usize },
    NodeTypeOutOfRange { node: usize, node_type: usize },
    SrcOutOfRange { edge: usize, src: usize, node_count: usize },
    DstOutOfRange { edge: usize, dst: usize, node_count: usize },
    RelationOutOfRange { edge: usize, rel: usize },
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::Empty => write!(f, "graph has no nodes"),
            Diagnostic::ContextNodeType { found } => {
                write!(f, "node 0 must have the context type, found type {found}")
            }
            Diagnostic::NodeTypeOutOfRange { node, node_type } => {
                write!(f, "node {node} has out-of-range type {node_type}")
            }
            Diagnostic::SrcOutOfRange {
                edge,
                src,
                node_count,
            } => write!(f, "edge {edge}: src {src} out of range for {node_count} nodes"),
            Diagnostic::DstOutOfRange {
                edge,
                dst,
                node_count,
            } => write!(f, "edge {edge}: dst {dst} out of range for {node_count} nodes"),
            Diagnostic::RelationOutOfRange { edge, rel } => {
                write!(f, "edge {edge}: relation {rel} out of range")
            }
        }
    }
}

impl SchemaGraph {
    pub fn new(node_types: Vec<usize>, edges: Vec<Edge>) -> Self {
        Self { node_types, edges }
    }

    /// A graph holding only the context node.
    pub fn context_only() -> Self {
        Self::new(vec![CONTEXT], Vec::new())
    }

    pub fn node_count(&self) -> usize {
        self.node_types.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn triplet(&self, edge: &Edge) -> Triplet {
        Triplet {
            head: self.node_types[edge.src],
            rel: edge.rel,
            tail: self.node_types[edge.dst],
        }
    }

    pub fn src_index(&self) -> Vec<usize> {
        self.edges.iter().map(|e| e.src).collect()
    }

    pub fn dst_index(&self) -> Vec<usize> {
        self.edges.iter().map(|e| e.dst).collect()
    }

    /// True if every edge has a distinct reversed partner (as a multiset).
    pub fn is_symmetric(&self, vocab: &TripletVocabulary) -> bool {
        let mut counts: HashMap<Edge, i64> = HashMap::new();
        for e in &self.edges {
            *counts.entry(*e).or_default() += 1;
        }
        counts.iter().all(|(e, &c)| {
            let r = e.reversed(vocab);
            r == *e || counts.get(&r).copied().unwrap_or(0) == c
        })
    }
}

pub fn validate_graph(graph: &SchemaGraph, vocab: &TripletVocabulary) -> std::result::Result<(), Vec<Diagnostic>> {
    let mut diags = Vec::new();
    let n = graph.node_count();
    match graph.node_types.first() {
        None => diags.push(Diagnostic::Empty),
        Some(&t) if t != CONTEXT => diags.push(Diagnostic::ContextNodeType { found: t }),
        _ => {}
    }
    for (node, &t) in graph.node_types.iter().enumerate() {
        if t >= vocab.node_type_count {
            diags.push(Diagnostic::NodeTypeOutOfRange { node, node_type: t });
        }
    }
    for (i, e) in graph.edges.iter().enumerate() {
        if e.src >= n {
            diags.push(Diagnostic::SrcOutOfRange {
                edge: i,
                src: e.src,
                node_count: n,
            });
        }
        if e.dst >= n {
            diags.push(Diagnostic::DstOutOfRange {
                edge: i,
                dst: e.dst,
                node_count: n,
            });
        }
        if e.rel >= vocab.relation_count {
            diags.push(Diagnostic::RelationOutOfRange { edge: i, rel: e.rel });
        }
    }
    if diags.is_empty() {
        Ok(())
    } else {
        Err(diags)
    }
}

fn ensure_valid(graph: &SchemaGraph, vocab: &TripletVocabulary) -> Result<()> {
    validate_graph(graph, vocab).map_err(|d| Error::Validation {
        id: "<graph>".into(),
        diagnostics: d.iter().map(ToString::to_string).collect(),
    })
}

/// Adds the reversed counterpart of every edge that does not already have
/// one. Originals keep their order; reversals are appended in the order of
/// the edges that needed them, so applying this twice is a no-op.
pub fn symmetrize(graph: &SchemaGraph, vocab: &TripletVocabulary) -> Result<SchemaGraph> {
    ensure_valid(graph, vocab)?;
    let mut unmatched: HashMap<Edge, usize> = HashMap::new();
    for e in &graph.edges {
        *unmatched.entry(*e).or_default() += 1;
    }
    let mut appended = Vec::new();
    for e in &graph.edges {
        let r = e.reversed(vocab);
        if r == *e {
            continue;
        }
        let left = unmatched.get_mut(e).expect("edge counted above");
        if *left == 0 {
            // already consumed as the partner of an earlier edge
            continue;
        }
        *left -= 1;
        match unmatched.get_mut(&r) {
            Some(c) if *c > 0 => *c -= 1,
            _ => appended.push(r),
        }
    }
    let mut edges = graph.edges.clone();
    edges.extend(appended);
    Ok(SchemaGraph::new(graph.node_types.clone(), edges))
}

fn keep_priority(node_type: usize) -> usize {
    node_type.min(OTHER)
}

/// Caps the graph at `max_nodes`, keeping the context node, then question
/// entities, then answer entities, then the rest (input order within each
/// group). Edges touching dropped nodes are removed and the survivors are
/// reindexed contiguously.
pub fn truncate_nodes(graph: &SchemaGraph, max_nodes: usize) -> Result<SchemaGraph> {
    if max_nodes < 1 {
        return Err(Error::InvalidConfig("max_nodes must be >= 1".into()));
    }
    let n = graph.node_count();
    if n <= max_nodes {
        return Ok(graph.clone());
    }
    let mut order: Vec<usize> = (1..n).collect();
    order.sort_by_key(|&i| keep_priority(graph.node_types[i]));
    let mut kept = vec![0usize];
    kept.extend(order.into_iter().take(max_nodes - 1));
    kept[1..].sort_by_key(|&i| (keep_priority(graph.node_types[i]), i));

    let mut remap = vec![usize::MAX; n];
    for (new, &old) in kept.iter().enumerate() {
        remap[old] = new;
    }
    let node_types = kept.iter().map(|&i| graph.node_types[i]).collect();
    let edges = graph
        .edges
        .iter()
        .filter(|e| remap[e.src] != usize::MAX && remap[e.dst] != usize::MAX)
        .map(|e| Edge::new(remap[e.src], remap[e.dst], e.rel))
        .collect();
    Ok(SchemaGraph::new(node_types, edges))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_vocab() -> TripletVocabulary {
        build_triplet_vocab(4, 38).unwrap()
    }

    #[test]
    fn vocab_dims() {
        assert_eq!(default_vocab().onehot_dim(), 46);
        assert_eq!(build_triplet_vocab(1, 1).unwrap().onehot_dim(), 3);
        assert!(matches!(build_triplet_vocab(0, 38), Err(Error::InvalidConfig(_))));
        assert!(matches!(build_triplet_vocab(4, -1), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn default_relation_layout() {
        let v = default_vocab();
        assert_eq!(v.reverse(0), 17);
        assert_eq!(v.reverse(16), 33);
        assert_eq!(v.reverse(QUESTION_LINK), 35);
        assert_eq!(v.reverse(ANSWER_LINK), 37);
        for r in 0..38 {
            assert_eq!(v.reverse(v.reverse(r)), r);
        }
    }

    #[test]
    fn reversal_is_involution_for_all_small_vocabs() {
        for rc in 1..60 {
            let v = build_triplet_vocab(4, rc).unwrap();
            for r in 0..rc as usize {
                let rr = v.reverse(r);
                assert!(rr < rc as usize);
                assert_eq!(v.reverse(rr), r, "rc={rc} r={r}");
            }
        }
    }

    #[test]
    fn onehot_layout() {
        let v = default_vocab();
        let ones = |x: Vec<f64>| -> Vec<usize> {
            x.iter().enumerate().filter(|(_, &a)| a == 1.0).map(|(i, _)| i).collect()
        };
        assert_eq!(ones(encode_triplet_onehot(0, 0, 0, &v).unwrap()), vec![0, 4, 42]);
        assert_eq!(ones(encode_triplet_onehot(3, 37, 3, &v).unwrap()), vec![3, 41, 45]);
        match encode_triplet_onehot(0, 38, 0, &v) {
            Err(Error::Encoding { field, .. }) => assert_eq!(field, "rel"),
            other => panic!("{other:?}"),
        }
        match encode_triplet_onehot(0, 0, 4, &v) {
            Err(Error::Encoding { field, .. }) => assert_eq!(field, "tail_type"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn onehot_encode_decode_exhaustive() {
        let v = default_vocab();
        for idx in 0..v.triplet_type_count() {
            let t = v.triplet_at(idx);
            assert_eq!(v.triplet_index(t), idx);
            let x = encode_triplet_onehot(t.head, t.rel, t.tail, &v).unwrap();
            assert_eq!(x.iter().sum::<f64>(), 3.0);
            assert_eq!(decode_triplet_onehot(&x, &v), Some(t));
        }
    }

    #[test]
    fn symmetrize_doubles_and_is_idempotent() {
        let v = default_vocab();
        let g = SchemaGraph::new(vec![0, 1], vec![Edge::new(1, 0, QUESTION_LINK)]);
        let s = symmetrize(&g, &v).unwrap();
        assert_eq!(s.edges, vec![Edge::new(1, 0, 34), Edge::new(0, 1, 35)]);
        assert_eq!(symmetrize(&s, &v).unwrap(), s);
    }

    #[test]
    fn symmetrize_keeps_duplicate_multiplicity() {
        let v = default_vocab();
        let e = Edge::new(1, 2, 3);
        let g = SchemaGraph::new(vec![0, 1, 3], vec![e, e, e.reversed(&v)]);
        let s = symmetrize(&g, &v).unwrap();
        assert_eq!(s.edge_count(), 4);
        assert!(s.is_symmetric(&v));
    }

    #[test]
    fn validate_reports_all() {
        let v = default_vocab();
        assert!(validate_graph(&SchemaGraph::new(vec![0, 1], vec![Edge::new(1, 0, 0)]), &v).is_ok());

        let g = SchemaGraph::new(vec![0, 1], vec![Edge::new(1, 2, 0)]);
        assert_eq!(
            validate_graph(&g, &v).unwrap_err(),
            vec![Diagnostic::DstOutOfRange {
                edge: 0,
                dst: 2,
                node_count: 2
            }]
        );

        let g = SchemaGraph::new(vec![2, 1], vec![Edge::new(5, 7, 40)]);
        let d = validate_graph(&g, &v).unwrap_err();
        assert_eq!(d.len(), 4);
        assert_eq!(d[0], Diagnostic::ContextNodeType { found: 2 });
    }

    #[test]
    fn truncate_cases() {
        let g = SchemaGraph::new(vec![0, 3, 2, 1, 1, 3, 2, 1, 3, 3], vec![Edge::new(1, 0, 0)]);
        assert_eq!(truncate_nodes(&g, 32).unwrap(), g);
        assert!(matches!(truncate_nodes(&g, 0), Err(Error::InvalidConfig(_))));

        let t = truncate_nodes(&SchemaGraph::context_only(), 1).unwrap();
        assert_eq!(t, SchemaGraph::context_only());

        let g = SchemaGraph::new(
            vec![0, 3, 2, 1, 1],
            vec![Edge::new(3, 0, 34), Edge::new(1, 2, 0), Edge::new(2, 0, 36), Edge::new(4, 1, 5)],
        );
        let t = truncate_nodes(&g, 3).unwrap();
        assert_eq!(t.node_types, vec![0, 1, 1]);
        assert_eq!(t.edges, vec![Edge::new(1, 0, 34)]);
    }
}
