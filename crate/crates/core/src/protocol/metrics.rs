use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::labels::FuzzyLabel;
use crate::error::{Error, Result};

/// One line of the metrics trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    /// `phase1`, `phase2` or `eval`.
    pub phase: String,
    pub epoch: usize,
    pub block: usize,
    pub loss: f64,
    pub lr: f64,
    pub frozen_layers: usize,
    pub wall_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
}

impl MetricRecord {
    pub fn new(phase: &str, epoch: usize, block: usize, loss: f64, lr: f64, frozen_layers: usize) -> Self {
        Self {
            phase: phase.to_string(),
            epoch,
            block,
            loss,
            lr,
            frozen_layers,
            wall_ms: 0,
            top1: None,
            tag: None,
        }
    }

    /// An evaluation record (`loss` and `lr` are zero).
    pub fn eval(tag: &str, top1: f64) -> Self {
        Self {
            top1: Some(top1),
            tag: Some(tag.to_string()),
            ..Self::new("eval", 0, 0, 0.0, 0.0, 0)
        }
    }
}

pub fn write_metrics_jsonl(mut w: impl Write, records: &[MetricRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_metrics_jsonl(r: impl BufRead) -> Result<Vec<MetricRecord>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LabelLine {
    index: usize,
    kind: String,
    classes: Vec<usize>,
    weights: Vec<f64>,
}

/// One `{index, kind, classes, weights}` line per sample.
pub fn write_labels_jsonl(mut w: impl Write, labels: &[FuzzyLabel]) -> Result<()> {
    for (index, l) in labels.iter().enumerate() {
        let support = l.support();
        let line = LabelLine {
            index,
            kind: if l.is_hard() { "hard" } else { "soft" }.to_string(),
            classes: support.iter().map(|p| p.0).collect(),
            weights: support.iter().map(|p| p.1).collect(),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_labels_jsonl(r: impl BufRead) -> Result<Vec<FuzzyLabel>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let l: LabelLine = serde_json::from_str(&line)?;
        if l.index != out.len() || l.classes.len() != l.weights.len() || l.classes.is_empty() {
            return Err(Error::Malformed(format!("label line {} is inconsistent", out.len())));
        }
        out.push(match l.kind.as_str() {
            "hard" if l.classes.len() == 1 => FuzzyLabel::Hard(l.classes[0]),
            "soft" => FuzzyLabel::Soft(l.classes.into_iter().zip(l.weights).collect()),
            _ => return Err(Error::Malformed(format!("label line {}: bad kind {:?}", out.len(), l.kind))),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_lines_have_fixed_keys() {
        let mut buf = Vec::new();
        let recs = vec![MetricRecord::new("phase1", 3, 1, 0.5, 1e-3, 0), MetricRecord::eval("base", 0.75)];
        write_metrics_jsonl(&mut buf, &recs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        let first = text.lines().next().unwrap();
        assert_eq!(
            first,
            r#"{"phase":"phase1","epoch":3,"block":1,"loss":0.5,"lr":0.001,"frozen_layers":0,"wall_ms":0}"#
        );
        assert!(text.lines().nth(1).unwrap().contains(r#""top1":0.75,"tag":"base""#));
        assert_eq!(read_metrics_jsonl(buf.as_slice()).unwrap(), recs);
    }

    #[test]
    fn label_lines_round_trip() {
        let labels = vec![FuzzyLabel::Hard(3), FuzzyLabel::Soft(vec![(0, 0.25), (4, 0.75)])];
        let mut buf = Vec::new();
        write_labels_jsonl(&mut buf, &labels).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            r#"{"index":0,"kind":"hard","classes":[3],"weights":[1.0]}"#
        );
        assert_eq!(read_labels_jsonl(buf.as_slice()).unwrap(), labels);
        assert!(read_labels_jsonl(&br#"{"index":5,"kind":"hard","classes":[3],"weights":[1.0]}"#[..]).is_err());
    }
}
