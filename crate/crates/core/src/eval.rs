//! Argmax evaluation and prediction files.

use std::io::{BufRead, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instances::QAInstance;
use crate::model::Model;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub pred: usize,
    pub scores: Vec<f64>,
}

/// Index of the largest score, lowest index on ties. NaN never wins.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] || (scores[best].is_nan() && !s.is_nan()) {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub predictions: Vec<Prediction>,
}

pub fn predict_with(
    instances: &[QAInstance],
    score: impl Fn(&QAInstance) -> Result<Vec<f64>> + Sync,
) -> Result<Vec<Prediction>> {
    instances
        .par_iter()
        .map(|inst| {
            let scores = score(inst)?;
            Ok(Prediction {
                id: inst.id.clone(),
                pred: argmax(&scores),
                scores,
            })
        })
        .collect()
}

pub fn accuracy(predictions: &[Prediction], instances: &[QAInstance]) -> f64 {
    if instances.is_empty() {
        return 0.0;
    }
    let correct = predictions.iter().zip(instances).filter(|(p, i)| p.pred == i.label).count();
    correct as f64 / instances.len() as f64
}

pub fn evaluate_with(
    instances: &[QAInstance],
    score: impl Fn(&QAInstance) -> Result<Vec<f64>> + Sync,
) -> Result<EvalReport> {
    let predictions = predict_with(instances, score)?;
    Ok(EvalReport {
        accuracy: accuracy(&predictions, instances),
        predictions,
    })
}

/// Scores every instance with `model` after checking it fits the model.
pub fn evaluate(model: &Model, instances: &[QAInstance]) -> Result<EvalReport> {
    for inst in instances {
        model.check_instance(inst)?;
    }
    evaluate_with(instances, |inst| model.scores(inst))
}

pub fn write_predictions(predictions: &[Prediction], mut w: impl Write) -> Result<()> {
    for p in predictions {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_predictions(predictions: &[Prediction], path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_predictions(predictions, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn parse_predictions(reader: impl BufRead) -> Result<Vec<Prediction>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn load_predictions(path: impl AsRef<Path>) -> Result<Vec<Prediction>> {
    parse_predictions(std::io::BufReader::new(std::fs::File::open(path)?))
}
