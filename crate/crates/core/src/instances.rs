//! QA instances and their JSON Lines persistence.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{validate_graph, SchemaGraph, TripletVocabulary};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Choice {
    pub context_score: Option<f64>,
    #[serde(flatten)]
    pub graph: SchemaGraph,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QAInstance {
    pub id: String,
    pub label: usize,
    pub choices: Vec<Choice>,
}

impl QAInstance {
    pub fn validate(&self, vocab: &TripletVocabulary) -> Result<()> {
        let mut diagnostics = Vec::new();
        if self.choices.len() < 2 {
            diagnostics.push(format!("need at least 2 choices, found {}", self.choices.len()));
        }
        if self.label >= self.choices.len() {
            diagnostics.push(format!(
                "label {} out of range for {} choices",
                self.label,
                self.choices.len()
            ));
        }
        for (i, c) in self.choices.iter().enumerate() {
            if let Err(d) = validate_graph(&c.graph, vocab) {
                diagnostics.extend(d.iter().map(|d| format!("choice {i}: {d}")));
            }
        }
        if diagnostics.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation {
                id: self.id.clone(),
                diagnostics,
            })
        }
    }
}

pub fn parse_instances(reader: impl BufRead, vocab: &TripletVocabulary) -> Result<Vec<QAInstance>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let inst: QAInstance = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        inst.validate(vocab)?;
        out.push(inst);
    }
    Ok(out)
}

pub fn load_instances(path: impl AsRef<Path>, vocab: &TripletVocabulary) -> Result<Vec<QAInstance>> {
    parse_instances(BufReader::new(File::open(path)?), vocab)
}

pub fn write_instances(instances: &[QAInstance], mut w: impl Write) -> Result<()> {
    for inst in instances {
        serde_json::to_writer(&mut w, inst)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_instances(instances: &[QAInstance], path: impl AsRef<Path>) -> Result<()> {
    write_instances(instances, BufWriter::new(File::create(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"{"id":"q1","label":0,"choices":[{"context_score":0.0,"nodes":[0,1,1,2],"edges":[[1,0,34],[3,0,36]]},{"context_score":null,"nodes":[0,2],"edges":[[1,0,36]]}]}"#;

    #[test]
    fn parses_format_example() {
        let v = TripletVocabulary::default();
        let insts = parse_instances(EXAMPLE.as_bytes(), &v).unwrap();
        assert_eq!(insts.len(), 1);
        assert_eq!(insts[0].choices.len(), 2);
        assert_eq!(insts[0].choices[0].graph.node_types, vec![0, 1, 1, 2]);
        assert_eq!(insts[0].choices[1].context_score, None);

        let mut buf = Vec::new();
        write_instances(&insts, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().trim_end(), EXAMPLE);
    }

    #[test]
    fn empty_input() {
        let v = TripletVocabulary::default();
        assert!(parse_instances("".as_bytes(), &v).unwrap().is_empty());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let v = TripletVocabulary::default();
        let text = format!("{EXAMPLE}\n{{not json\n");
        match parse_instances(text.as_bytes(), &v) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invariant_violation_names_instance() {
        let v = TripletVocabulary::default();
        let text = r#"{"id":"bad","label":3,"choices":[{"context_score":null,"nodes":[1],"edges":[]},{"context_score":null,"nodes":[0],"edges":[]}]}"#;
        match parse_instances(text.as_bytes(), &v) {
            Err(Error::Validation { id, diagnostics }) => {
                assert_eq!(id, "bad");
                assert_eq!(diagnostics.len(), 2);
            }
            other => panic!("{other:?}"),
        }
    }
}
