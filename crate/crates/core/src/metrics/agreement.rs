//! Classification agreement metrics: Cohen's kappa, AUROC, converted ratio.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Image quality grade.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QualityLabel {
    Good,
    Usable,
    Reject,
}

impl QualityLabel {
    pub const ALL: [QualityLabel; 3] = [QualityLabel::Good, QualityLabel::Usable, QualityLabel::Reject];

    pub fn index(self) -> usize {
        match self {
            QualityLabel::Good => 0,
            QualityLabel::Usable => 1,
            QualityLabel::Reject => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

impl fmt::Display for QualityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QualityLabel::Good => "good",
            QualityLabel::Usable => "usable",
            QualityLabel::Reject => "reject",
        })
    }
}

impl FromStr for QualityLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "good" => Ok(QualityLabel::Good),
            "usable" => Ok(QualityLabel::Usable),
            "reject" => Ok(QualityLabel::Reject),
            other => Err(Error::InvalidArgument(format!("unknown quality label {other:?}"))),
        }
    }
}

/// `K x K` counts; rows are true classes, columns predictions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize, counts: Vec<u64>) -> Result<Self> {
        if classes == 0 || counts.len() != classes * classes {
            return Err(Error::ShapeMismatch(format!(
                "{classes} classes need {} counts, got {}",
                classes * classes,
                counts.len()
            )));
        }
        if counts.iter().sum::<u64>() == 0 {
            return Err(Error::Empty("confusion matrix has no observations".into()));
        }
        Ok(Self { classes, counts })
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::ShapeMismatch("confusion matrix must be square".into()));
        }
        Self::new(k, rows.concat())
    }

    /// Tallies `(truth, prediction)` class indices.
    pub fn from_pairs(classes: usize, truth: &[usize], pred: &[usize]) -> Result<Self> {
        if truth.len() != pred.len() {
            return Err(Error::ShapeMismatch("truth and prediction lengths differ".into()));
        }
        let mut counts = vec![0u64; classes * classes];
        for (&t, &p) in truth.iter().zip(pred) {
            if t >= classes || p >= classes {
                return Err(Error::InvalidArgument(format!("class index outside 0..{classes}")));
            }
            counts[t * classes + p] += 1;
        }
        Self::new(classes, counts)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn diagonal(&self) -> u64 {
        (0..self.classes).map(|i| self.get(i, i)).sum()
    }

    pub fn accuracy(&self) -> f64 {
        self.diagonal() as f64 / self.total() as f64
    }

    /// One line per true class, comma-separated counts.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        for row in self.counts.chunks(self.classes) {
            wr.write_record(row.iter().map(|c| c.to_string()))?;
        }
        wr.flush().map_err(|e| Error::io("<csv>", e))
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new().has_headers(false).from_reader(r);
        let mut rows = Vec::new();
        for (i, rec) in rd.records().enumerate() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|f| {
                    f.trim().parse::<u64>().map_err(|e| Error::Manifest {
                        line: i + 1,
                        reason: e.to_string(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Self::from_rows(&rows)
    }
}

/// `(p_o - p_e) / (1 - p_e)`.
pub fn cohens_kappa(m: &ConfusionMatrix) -> Result<f64> {
    let total = m.total() as f64;
    let p_o = m.diagonal() as f64 / total;
    let k = m.classes();
    let p_e: f64 = (0..k)
        .map(|i| {
            let row: u64 = (0..k).map(|j| m.get(i, j)).sum();
            let col: u64 = (0..k).map(|j| m.get(j, i)).sum();
            row as f64 * col as f64
        })
        .sum::<f64>()
        / (total * total);
    if p_e >= 1.0 {
        return Err(Error::Degenerate(
            "chance agreement is 1; kappa undefined".into(),
        ));
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

/// Scores with binary ground truth.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoredLabels {
    pub items: Vec<(f64, bool)>,
}

impl ScoredLabels {
    pub fn new(items: Vec<(f64, bool)>) -> Self {
        Self { items }
    }

    /// `score,positive` rows with a header line; `positive` is 0/1 or true/false.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["score", "positive"])?;
        for (s, p) in &self.items {
            wr.write_record([s.to_string(), (*p as u8).to_string()])?;
        }
        wr.flush().map_err(|e| Error::io("<csv>", e))
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let mut items = Vec::new();
        for (i, rec) in rd.records().enumerate() {
            let rec = rec?;
            let bad = |reason: String| Error::Manifest { line: i + 2, reason };
            if rec.len() != 2 {
                return Err(bad(format!("expected 2 fields, got {}", rec.len())));
            }
            let score: f64 = rec[0].trim().parse().map_err(|e| bad(format!("{e}")))?;
            let positive = match rec[1].trim().to_ascii_lowercase().as_str() {
                "1" | "true" => true,
                "0" | "false" => false,
                other => return Err(bad(format!("bad label {other:?}"))),
            };
            items.push((score, positive));
        }
        Ok(Self { items })
    }
}

/// Area under the ROC curve via the Mann-Whitney statistic: the fraction of
/// (positive, negative) pairs ranked correctly, ties counting one half.
pub fn auroc(s: &ScoredLabels) -> Result<f64> {
    if s.items.iter().any(|(x, _)| !x.is_finite()) {
        return Err(Error::InvalidArgument("scores must be finite".into()));
    }
    let pos = s.items.iter().filter(|(_, p)| *p).count();
    let neg = s.items.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Degenerate(
            "AUROC needs at least one positive and one negative".into(),
        ));
    }
    let mut order: Vec<usize> = (0..s.items.len()).collect();
    order.sort_by(|&a, &b| s.items[a].0.total_cmp(&s.items[b].0));
    // Sum of 1-based average ranks of the positives.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && s.items[order[j + 1]].0 == s.items[order[i]].0 {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg_rank * order[i..=j].iter().filter(|&&k| s.items[k].1).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Macro-averaged one-vs-rest AUROC over the classes that have both
/// positives and negatives in `truth`. `scores[i][k]` is the score of item
/// `i` for class `k`.
pub fn macro_auroc(scores: &[Vec<f64>], truth: &[usize]) -> Result<f64> {
    if scores.len() != truth.len() || scores.is_empty() {
        return Err(Error::ShapeMismatch("one score row per label required".into()));
    }
    let classes = scores[0].len();
    let mut aucs = Vec::new();
    for k in 0..classes {
        let items: Vec<(f64, bool)> = scores.iter().zip(truth).map(|(s, &t)| (s[k], t == k)).collect();
        let pos = items.iter().filter(|(_, p)| *p).count();
        if pos == 0 || pos == items.len() {
            continue;
        }
        aucs.push(auroc(&ScoredLabels::new(items))?);
    }
    if aucs.is_empty() {
        return Err(Error::Degenerate("no class has both positives and negatives".into()));
    }
    Ok(aucs.iter().sum::<f64>() / aucs.len() as f64)
}

/// Fraction of labels that are [`QualityLabel::Good`].
pub fn converted_ratio(labels: &[QualityLabel]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::Empty("converted ratio of zero images".into()));
    }
    let good = labels.iter().filter(|&&l| l == QualityLabel::Good).count();
    Ok(good as f64 / labels.len() as f64)
}
