//! Prediction overlap between two models and the gold labels.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::Prediction;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldLabel {
    pub id: String,
    pub label: usize,
}

/// Reads `id` and `label` from each JSONL line; instance files qualify.
pub fn parse_gold(reader: impl BufRead) -> Result<Vec<GoldLabel>> {
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

pub fn load_gold(path: impl AsRef<Path>) -> Result<Vec<GoldLabel>> {
    parse_gold(std::io::BufReader::new(std::fs::File::open(path)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub a_correct: bool,
    pub b_correct: bool,
    pub agree: bool,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub total: usize,
    /// All 8 cells of the (a-correct, b-correct, agree) partition.
    pub regions: Vec<Region>,
    /// Percentage of instances where a and b predict the same choice.
    pub agreement: f64,
    pub a_accuracy: f64,
    pub b_accuracy: f64,
}

fn index_by_id<'a>(name: &str, preds: &'a [Prediction]) -> Result<HashMap<&'a str, usize>> {
    let mut m = HashMap::with_capacity(preds.len());
    for p in preds {
        if m.insert(p.id.as_str(), p.pred).is_some() {
            return Err(Error::Alignment(format!("duplicate id {} in {name}", p.id)));
        }
    }
    Ok(m)
}

pub fn overlap_report(pred_a: &[Prediction], pred_b: &[Prediction], gold: &[GoldLabel]) -> Result<OverlapReport> {
    let a = index_by_id("a", pred_a)?;
    let b = index_by_id("b", pred_b)?;
    if a.len() != gold.len() || b.len() != gold.len() {
        return Err(Error::Alignment(format!(
            "instance counts differ: a={} b={} gold={}",
            a.len(),
            b.len(),
            gold.len()
        )));
    }
    let mut cells = [0usize; 8];
    let (mut agree_n, mut a_ok, mut b_ok) = (0, 0, 0);
    for g in gold {
        let pa = *a.get(g.id.as_str()).ok_or_else(|| Error::Alignment(format!("id {} missing from a", g.id)))?;
        let pb = *b.get(g.id.as_str()).ok_or_else(|| Error::Alignment(format!("id {} missing from b", g.id)))?;
        let (ca, cb, ag) = (pa == g.label, pb == g.label, pa == pb);
        cells[(ca as usize) << 2 | (cb as usize) << 1 | ag as usize] += 1;
        agree_n += ag as usize;
        a_ok += ca as usize;
        b_ok += cb as usize;
    }
    let n = gold.len().max(1) as f64;
    let regions = (0..8)
        .rev()
        .map(|k| Region {
            a_correct: k & 4 != 0,
            b_correct: k & 2 != 0,
            agree: k & 1 != 0,
            count: cells[k],
        })
        .collect();
    Ok(OverlapReport {
        total: gold.len(),
        regions,
        agreement: 100.0 * agree_n as f64 / n,
        a_accuracy: a_ok as f64 / n,
        b_accuracy: b_ok as f64 / n,
    })
}
