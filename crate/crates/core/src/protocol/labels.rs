use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{argmax, softmax_rows, Matrix};

/// How ensemble votes become pseudo-labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelMode {
    /// Hard label when one class has strictly more votes than every other
    /// class, otherwise a soft label over every voted class.
    #[default]
    Fuzzy,
    /// Always a hard label: most votes, then highest summed confidence,
    /// then lowest class index.
    HardOnly,
    /// Memberships proportional to vote counts; only a unanimous vote is hard.
    SoftOnly,
}

impl std::str::FromStr for LabelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fuzzy" => Ok(Self::Fuzzy),
            "hard-only" => Ok(Self::HardOnly),
            "soft-only" => Ok(Self::SoftOnly),
            _ => Err(Error::Config(format!(
                "unknown label mode {s:?} (expected fuzzy, hard-only or soft-only)"
            ))),
        }
    }
}

impl std::fmt::Display for LabelMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Fuzzy => "fuzzy",
            Self::HardOnly => "hard-only",
            Self::SoftOnly => "soft-only",
        })
    }
}

/// A pseudo-label: one class, or a membership distribution over two or
/// more classes (sorted by class, weights summing to 1).
#[derive(Debug, Clone, PartialEq)]
pub enum FuzzyLabel {
    Hard(usize),
    Soft(Vec<(usize, f64)>),
}

impl FuzzyLabel {
    pub fn is_hard(&self) -> bool {
        matches!(self, FuzzyLabel::Hard(_))
    }

    pub fn hard_class(&self) -> Option<usize> {
        match self {
            FuzzyLabel::Hard(c) => Some(*c),
            FuzzyLabel::Soft(_) => None,
        }
    }

    /// Soft memberships; empty for hard labels.
    pub fn memberships(&self) -> &[(usize, f64)] {
        match self {
            FuzzyLabel::Hard(_) => &[],
            FuzzyLabel::Soft(m) => m,
        }
    }

    /// Classes with nonzero weight and their weights (a hard label is the
    /// single class with weight 1).
    pub fn support(&self) -> Vec<(usize, f64)> {
        match self {
            FuzzyLabel::Hard(c) => vec![(*c, 1.0)],
            FuzzyLabel::Soft(m) => m.clone(),
        }
    }

    /// Class with the largest weight, lowest index on ties.
    pub fn top_class(&self) -> usize {
        match self {
            FuzzyLabel::Hard(c) => *c,
            FuzzyLabel::Soft(m) => {
                let mut best = m[0];
                for &(c, w) in &m[1..] {
                    if w > best.1 {
                        best = (c, w);
                    }
                }
                best.0
            }
        }
    }

    /// Dense target distribution of length `k`.
    pub fn target(&self, k: usize) -> Result<Vec<f64>> {
        let mut t = vec![0.0; k];
        for (c, w) in self.support() {
            if c >= k {
                return Err(Error::Invalid(format!("label class {c} exceeds projector width {k}")));
            }
            t[c] = w;
        }
        Ok(t)
    }

    /// Checks the type invariants: hard labels carry no memberships; soft
    /// labels have 2..=m distinct sorted classes, positive weights summing to
    /// 1 within 1e-9.
    pub fn check(&self, m: usize) -> Result<()> {
        let FuzzyLabel::Soft(mem) = self else {
            return Ok(());
        };
        if mem.len() < 2 || mem.len() > m {
            return Err(Error::Invalid(format!("soft label with {} classes for m = {m}", mem.len())));
        }
        if mem.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::Invalid("soft label classes not strictly increasing".into()));
        }
        let sum: f64 = mem.iter().map(|(_, w)| w).sum();
        if mem.iter().any(|(_, w)| !(*w > 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Invalid(format!("soft label weights sum to {sum}")));
        }
        Ok(())
    }
}

/// Turns one sample's votes (and each voter's confidence) into a label.
///
/// `votes[b]` is block `b`'s predicted class and `confidence[b]` the
/// normalized output value behind that vote.
pub fn fuzzy_vote(votes: &[usize], confidence: &[f64], mode: LabelMode) -> FuzzyLabel {
    assert_eq!(votes.len(), confidence.len(), "one confidence per vote");
    assert!(!votes.is_empty(), "at least one vote");
    // class -> (count, summed confidence)
    let mut tally: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
    for (&v, &c) in votes.iter().zip(confidence) {
        let e = tally.entry(v).or_insert((0, 0.0));
        e.0 += 1;
        e.1 += c;
    }
    if tally.len() == 1 {
        return FuzzyLabel::Hard(votes[0]);
    }
    let top = tally.values().map(|e| e.0).max().expect("nonempty");
    let leaders: Vec<usize> = tally.iter().filter(|(_, e)| e.0 == top).map(|(c, _)| *c).collect();
    match mode {
        LabelMode::Fuzzy if leaders.len() == 1 => FuzzyLabel::Hard(leaders[0]),
        LabelMode::Fuzzy => {
            let total: f64 = tally.values().map(|e| e.1).sum();
            if total > 0.0 {
                FuzzyLabel::Soft(tally.iter().map(|(c, e)| (*c, e.1 / total)).collect())
            } else {
                let n = tally.len() as f64;
                FuzzyLabel::Soft(tally.keys().map(|c| (*c, 1.0 / n)).collect())
            }
        }
        LabelMode::HardOnly => {
            let mut best = leaders[0];
            for &c in &leaders[1..] {
                if tally[&c].1 > tally[&best].1 {
                    best = c;
                }
            }
            FuzzyLabel::Hard(best)
        }
        LabelMode::SoftOnly => {
            let m = votes.len() as f64;
            FuzzyLabel::Soft(tally.iter().map(|(c, e)| (*c, e.0 as f64 / m)).collect())
        }
    }
}

/// Labels every sample from the ensemble's raw projector outputs
/// (`outputs[b]` is block `b`'s `n × K` output). Outputs are normalized with
/// a row softmax; each block votes for its argmax.
pub fn labels_from_outputs(outputs: &[Matrix], mode: LabelMode) -> Result<Vec<FuzzyLabel>> {
    let Some(first) = outputs.first() else {
        return Err(Error::Invalid("no ensemble outputs".into()));
    };
    for o in outputs {
        first.ensure_same_shape(o, "labels_from_outputs")?;
    }
    let probs: Vec<Matrix> = outputs.iter().map(softmax_rows).collect();
    let mut labels = Vec::with_capacity(first.rows());
    let mut votes = vec![0; outputs.len()];
    let mut conf = vec![0.0; outputs.len()];
    for r in 0..first.rows() {
        for (b, p) in probs.iter().enumerate() {
            let row = p.row(r);
            votes[b] = argmax(row);
            conf[b] = row[votes[b]];
        }
        labels.push(fuzzy_vote(&votes, &conf, mode));
    }
    Ok(labels)
}

/// Fraction of hard labels.
pub fn hard_fraction(labels: &[FuzzyLabel]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    labels.iter().filter(|l| l.is_hard()).count() as f64 / labels.len() as f64
}
