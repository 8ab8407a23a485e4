//! Python bindings: vocabulary, graphs, counting layers, corpora, models
//! and training.

use pyo3::exceptions::{PyIOError, PyIndexError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use gsc_core::counter::{count_features, CountMode, PairTyping};
use gsc_core::eval::evaluate;
use gsc_core::graph::{self as g, Edge, SchemaGraph, TripletVocabulary};
use gsc_core::gsc::dump_soft_counts;
use gsc_core::instances::{load_instances as core_load, save_instances as core_save, QAInstance};
use gsc_core::model::{Checkpoint, Model as CoreModel, ModelConfig, ModelKind};
use gsc_core::sparsevd::mc_kl_oracle;
use gsc_core::synth::{generate_synthetic, SyntheticTaskConfig};
use gsc_core::train::{train as core_train, RunConfig};
use gsc_core::Error;

fn err(e: Error) -> PyErr {
    match e {
        Error::Io(_) => PyIOError::new_err(e.to_string()),
        Error::Index { .. } => PyIndexError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyclass(frozen, from_py_object)]
#[derive(Clone)]
struct Vocabulary {
    inner: TripletVocabulary,
}

#[pymethods]
impl Vocabulary {
    #[new]
    #[pyo3(signature = (node_type_count = 4, relation_count = 38))]
    fn new(node_type_count: i64, relation_count: i64) -> PyResult<Self> {
        Ok(Self {
            inner: g::build_triplet_vocab(node_type_count, relation_count).map_err(err)?,
        })
    }

    #[getter]
    fn node_type_count(&self) -> usize {
        self.inner.node_type_count
    }

    #[getter]
    fn relation_count(&self) -> usize {
        self.inner.relation_count
    }

    #[getter]
    fn onehot_dim(&self) -> usize {
        self.inner.onehot_dim()
    }

    #[getter]
    fn triplet_type_count(&self) -> usize {
        self.inner.triplet_type_count()
    }

    fn reverse(&self, rel: usize) -> PyResult<usize> {
        if rel >= self.inner.relation_count {
            return Err(PyIndexError::new_err(format!("relation {rel} out of range")));
        }
        Ok(self.inner.reverse(rel))
    }

    fn encode(&self, head: usize, rel: usize, tail: usize) -> PyResult<Vec<f64>> {
        g::encode_triplet_onehot(head, rel, tail, &self.inner).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Vocabulary(node_type_count={}, relation_count={})",
            self.inner.node_type_count, self.inner.relation_count
        )
    }
}

fn vocab_or_default(v: Option<Vocabulary>) -> TripletVocabulary {
    v.map_or_else(TripletVocabulary::default, |v| v.inner)
}

#[pyclass(frozen, from_py_object)]
#[derive(Clone)]
struct Graph {
    inner: SchemaGraph,
}

#[pymethods]
impl Graph {
    /// `nodes` are node types (node 0 is the context); edges are
    /// `(src, dst, rel)` triples.
    #[new]
    fn new(nodes: Vec<usize>, edges: Vec<(usize, usize, usize)>) -> Self {
        Self {
            inner: SchemaGraph::new(nodes, edges.into_iter().map(|(s, d, r)| Edge::new(s, d, r)).collect()),
        }
    }

    #[getter]
    fn nodes(&self) -> Vec<usize> {
        self.inner.node_types.clone()
    }

    #[getter]
    fn edges(&self) -> Vec<(usize, usize, usize)> {
        self.inner.edges.iter().map(|e| (e.src, e.dst, e.rel)).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.edge_count()
    }

    /// Diagnostics; empty when the graph is valid.
    #[pyo3(signature = (vocab = None))]
    fn validate(&self, vocab: Option<Vocabulary>) -> Vec<String> {
        match g::validate_graph(&self.inner, &vocab_or_default(vocab)) {
            Ok(()) => Vec::new(),
            Err(d) => d.iter().map(ToString::to_string).collect(),
        }
    }

    #[pyo3(signature = (vocab = None))]
    fn is_symmetric(&self, vocab: Option<Vocabulary>) -> bool {
        self.inner.is_symmetric(&vocab_or_default(vocab))
    }

    #[pyo3(signature = (vocab = None))]
    fn symmetrize(&self, vocab: Option<Vocabulary>) -> PyResult<Graph> {
        Ok(Graph {
            inner: g::symmetrize(&self.inner, &vocab_or_default(vocab)).map_err(err)?,
        })
    }

    fn truncate(&self, max_nodes: usize) -> PyResult<Graph> {
        Ok(Graph {
            inner: g::truncate_nodes(&self.inner, max_nodes).map_err(err)?,
        })
    }

    fn __repr__(&self) -> String {
        format!("Graph(nodes={}, edges={})", self.inner.node_count(), self.inner.edge_count())
    }
}

#[pyclass(frozen, from_py_object)]
#[derive(Clone)]
struct Instance {
    inner: QAInstance,
}

#[pymethods]
impl Instance {
    #[getter]
    fn id(&self) -> String {
        self.inner.id.clone()
    }

    #[getter]
    fn label(&self) -> usize {
        self.inner.label
    }

    #[getter]
    fn choices(&self) -> Vec<Graph> {
        self.inner.choices.iter().map(|c| Graph { inner: c.graph.clone() }).collect()
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(json_err)
    }

    #[staticmethod]
    fn from_json(s: &str) -> PyResult<Instance> {
        Ok(Instance {
            inner: serde_json::from_str(s).map_err(json_err)?,
        })
    }

    fn __repr__(&self) -> String {
        format!("Instance(id={:?}, label={}, choices={})", self.inner.id, self.inner.label, self.inner.choices.len())
    }
}

fn unwrap_instances(v: &[Instance]) -> Vec<QAInstance> {
    v.iter().map(|i| i.inner.clone()).collect()
}

fn parse_kind(kind: &str) -> PyResult<ModelKind> {
    kind.parse().map_err(err)
}

#[pyclass(frozen)]
struct Model {
    checkpoint: Checkpoint,
}

#[pymethods]
impl Model {
    /// Untrained model; `train` supplies count statistics for `vd-mlp`.
    #[staticmethod]
    #[pyo3(signature = (kind, seed = 0, train = None, config = None))]
    fn init(kind: &str, seed: u64, train: Option<Vec<Instance>>, config: Option<&str>) -> PyResult<Model> {
        let cfg: ModelConfig = match config {
            Some(s) => serde_json::from_str(s).map_err(json_err)?,
            None => ModelConfig::default(),
        };
        let data = unwrap_instances(&train.unwrap_or_default());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = CoreModel::init(parse_kind(kind)?, &cfg, &data, &mut rng).map_err(err)?;
        Ok(Model {
            checkpoint: Checkpoint {
                format: gsc_core::model::CHECKPOINT_FORMAT,
                seed,
                epoch: 0,
                dev_accuracy: 0.0,
                model,
            },
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Model> {
        Ok(Model {
            checkpoint: Checkpoint::load(path).map_err(err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.checkpoint.save(path).map_err(err)
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.checkpoint.model.kind().name()
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.checkpoint.model.param_count()
    }

    #[getter]
    fn epoch(&self) -> usize {
        self.checkpoint.epoch
    }

    fn scores(&self, instance: &Instance) -> PyResult<Vec<f64>> {
        let m = &self.checkpoint.model;
        m.check_instance(&instance.inner).map_err(err)?;
        m.scores(&instance.inner).map_err(err)
    }

    /// `(accuracy, predicted choice per instance)`.
    fn evaluate(&self, instances: Vec<Instance>) -> PyResult<(f64, Vec<usize>)> {
        let r = evaluate(&self.checkpoint.model, &unwrap_instances(&instances)).map_err(err)?;
        Ok((r.accuracy, r.predictions.iter().map(|p| p.pred).collect()))
    }

    /// Top `top_k` triplet soft counts as `(head, rel, tail, value)`.
    #[pyo3(signature = (top_k = 20))]
    fn soft_counts(&self, top_k: usize) -> PyResult<Vec<(usize, usize, usize, f64)>> {
        let CoreModel::Gsc { config, params } = &self.checkpoint.model else {
            return Err(PyValueError::new_err("soft counts need a gsc model"));
        };
        let rows = dump_soft_counts(params, config, top_k).map_err(err)?;
        Ok(rows.iter().map(|r| (r.head_type, r.relation, r.tail_type, r.soft_count)).collect())
    }

    fn to_json(&self) -> PyResult<String> {
        self.checkpoint.to_json().map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("Model(kind={:?}, params={})", self.kind(), self.param_count())
    }
}

/// Counting layers over explicit edge values.
#[pyfunction]
#[pyo3(signature = (graph, edge_values, num_layers = 2))]
fn gsc_forward(graph: &Graph, edge_values: Vec<f64>, num_layers: usize) -> PyResult<f64> {
    gsc_core::gsc::gsc_forward(&graph.inner, &edge_values, num_layers).map_err(err)
}

/// Walk-enumeration reference for [`gsc_forward`]; small graphs only.
#[pyfunction]
#[pyo3(signature = (graph, edge_values, num_layers = 2))]
fn path_sum_oracle(graph: &Graph, edge_values: Vec<f64>, num_layers: usize) -> PyResult<f64> {
    gsc_core::gsc::path_sum_oracle(&graph.inner, &edge_values, num_layers).map_err(err)
}

/// Hard count features: `"1hop"`, `"2hop"` (relation pairs) or
/// `"2hop-triplet"`.
#[pyfunction]
#[pyo3(signature = (graph, mode = "1hop", vocab = None))]
fn count_features_py(graph: &Graph, mode: &str, vocab: Option<Vocabulary>) -> PyResult<Vec<u64>> {
    let mode = match mode {
        "1hop" => CountMode::OneHop,
        "2hop" => CountMode::TwoHop {
            pair_typing: PairTyping::Relation,
            context_terminated: false,
        },
        "2hop-triplet" => CountMode::TwoHop {
            pair_typing: PairTyping::Triplet,
            context_terminated: false,
        },
        other => return Err(PyValueError::new_err(format!("unknown count mode {other:?}"))),
    };
    Ok(count_features(&graph.inner, &vocab_or_default(vocab), mode).values)
}

/// Approximate negative KL per weight at `log_alpha`.
#[pyfunction]
fn neg_kl(log_alpha: f64) -> f64 {
    gsc_core::diff::neg_kl_approx(log_alpha)
}

/// Monte-Carlo negative KL, up to the same additive constant.
#[pyfunction]
#[pyo3(signature = (log_alpha, samples = 1_000_000, seed = 0))]
fn mc_neg_kl(log_alpha: f64, samples: usize, seed: u64) -> PyResult<f64> {
    mc_kl_oracle(log_alpha, samples, &mut ChaCha8Rng::seed_from_u64(seed)).map_err(err)
}

/// Synthetic corpus; `config` is SyntheticTaskConfig JSON.
#[pyfunction]
#[pyo3(signature = (instances = 1000, seed = 0, config = None))]
fn generate(instances: usize, seed: u64, config: Option<&str>) -> PyResult<Vec<Instance>> {
    let mut cfg: SyntheticTaskConfig = match config {
        Some(s) => serde_json::from_str(s).map_err(json_err)?,
        None => SyntheticTaskConfig::default(),
    };
    cfg.instances = instances;
    cfg.seed = seed;
    Ok(generate_synthetic(&cfg).map_err(err)?.into_iter().map(|inner| Instance { inner }).collect())
}

#[pyfunction]
#[pyo3(signature = (path, vocab = None))]
fn load_instances(path: &str, vocab: Option<Vocabulary>) -> PyResult<Vec<Instance>> {
    Ok(core_load(path, &vocab_or_default(vocab)).map_err(err)?.into_iter().map(|inner| Instance { inner }).collect())
}

#[pyfunction]
fn save_instances(instances: Vec<Instance>, path: &str) -> PyResult<()> {
    core_save(&unwrap_instances(&instances), path).map_err(err)
}

/// Trains `kind` and returns the best-dev model plus a summary dict with
/// per-epoch metrics. `config` is RunConfig JSON.
#[pyfunction]
#[pyo3(signature = (kind, train, dev, seed = 0, config = None))]
fn train<'py>(
    py: Python<'py>,
    kind: &str,
    train: Vec<Instance>,
    dev: Vec<Instance>,
    seed: u64,
    config: Option<&str>,
) -> PyResult<(Model, Bound<'py, PyDict>)> {
    let mut run: RunConfig = match config {
        Some(s) => serde_json::from_str(s).map_err(json_err)?,
        None => RunConfig::default(),
    };
    run.train.seed = seed;
    let (tr, dv) = (unwrap_instances(&train), unwrap_instances(&dev));
    let kind = parse_kind(kind)?;
    let outcome = py.detach(|| core_train(&run, kind, &tr, &dv)).map_err(err)?;
    let summary = PyDict::new(py);
    summary.set_item("best_epoch", outcome.best_epoch)?;
    summary.set_item("best_dev_accuracy", outcome.best_dev_accuracy)?;
    let log: Vec<(usize, f64, f64, f64)> = outcome
        .log
        .iter()
        .map(|e| (e.epoch, e.train_loss, e.train_accuracy, e.dev_accuracy))
        .collect();
    summary.set_item("log", log)?;
    Ok((
        Model {
            checkpoint: outcome.checkpoint(seed),
        },
        summary,
    ))
}

#[pymodule]
fn gsc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Vocabulary>()?;
    m.add_class::<Graph>()?;
    m.add_class::<Instance>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(gsc_forward, m)?)?;
    m.add_function(wrap_pyfunction!(path_sum_oracle, m)?)?;
    m.add("count_features", wrap_pyfunction!(count_features_py, m)?)?;
    m.add_function(wrap_pyfunction!(neg_kl, m)?)?;
    m.add_function(wrap_pyfunction!(mc_neg_kl, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(load_instances, m)?)?;
    m.add_function(wrap_pyfunction!(save_instances, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add("QUESTION_LINK", g::QUESTION_LINK)?;
    m.add("ANSWER_LINK", g::ANSWER_LINK)?;
    Ok(())
}
