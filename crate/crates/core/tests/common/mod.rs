#![allow(dead_code)]

pub mod precise;

use gsc_core::graph::{symmetrize, Edge, SchemaGraph, TripletVocabulary, CONTEXT};
use rand::Rng;

/// Random valid graph: context node plus `nodes - 1` typed entities and
/// `edges` random directed edges, optionally symmetrized.
pub fn random_graph(rng: &mut impl Rng, vocab: &TripletVocabulary, nodes: usize, edges: usize, symmetric: bool) -> SchemaGraph {
    let nodes = nodes.max(1);
    let mut types = vec![CONTEXT];
    types.extend((1..nodes).map(|_| rng.random_range(1..vocab.node_type_count)));
    let es = (0..edges)
        .map(|_| Edge::new(rng.random_range(0..nodes), rng.random_range(0..nodes), rng.random_range(0..vocab.relation_count)))
        .collect();
    let g = SchemaGraph::new(types, es);
    if symmetric {
        symmetrize(&g, vocab).unwrap()
    } else {
        g
    }
}

pub fn sorted_edges(g: &SchemaGraph) -> Vec<[usize; 3]> {
    let mut v: Vec<[usize; 3]> = g.edges.iter().map(|&e| e.into()).collect();
    v.sort();
    v
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}
