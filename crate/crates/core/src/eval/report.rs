use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{cohens_kappa, converted_ratio, macro_auroc, ConfusionMatrix, QualityLabel};
use crate::pairing::MAX_GRADE;

pub const REPORT_COLUMNS: [&str; 8] = [
    "id",
    "psnr_baseline",
    "psnr_enhanced",
    "ssim_baseline",
    "ssim_enhanced",
    "quality_verdict",
    "dr_grade_true",
    "dr_grade_pred",
];

const GRADES: usize = MAX_GRADE as usize + 1;

/// Optional floats that keep infinities through JSON as strings.
mod opt_float {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(x) if x.is_finite() => Repr::Num(*x).serialize(s),
            Some(x) => Repr::Text(x.to_string()).serialize(s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        match Option::<Repr>::deserialize(d)? {
            None => Ok(None),
            Some(Repr::Num(x)) => Ok(Some(x)),
            Some(Repr::Text(t)) => t.parse().map(Some).map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportKind {
    NoReference,
    FullReference,
}

/// One evaluated image. Full-reference rows use the degraded id.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub id: String,
    #[serde(with = "opt_float")]
    pub psnr_baseline: Option<f64>,
    #[serde(with = "opt_float")]
    pub psnr_enhanced: Option<f64>,
    pub ssim_baseline: Option<f64>,
    pub ssim_enhanced: Option<f64>,
    pub quality_verdict: Option<QualityLabel>,
    /// P(Good) from the quality classifier.
    pub quality_score: Option<f64>,
    pub dr_grade_true: Option<u8>,
    pub dr_grade_pred: Option<u8>,
    /// DR class probabilities for held-out rows.
    pub dr_scores: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub kind: ReportKind,
    /// Name of the evaluated image set.
    pub label: String,
    /// How the numbers were produced, including the DR split rule.
    pub protocol: String,
    pub converted_ratio: Option<f64>,
    pub accuracy: Option<f64>,
    pub kappa: Option<f64>,
    pub auroc: Option<f64>,
    pub confusion: Option<ConfusionMatrix>,
    #[serde(with = "opt_float")]
    pub mean_psnr: Option<f64>,
    pub mean_ssim: Option<f64>,
    #[serde(with = "opt_float")]
    pub baseline_psnr: Option<f64>,
    pub baseline_ssim: Option<f64>,
    pub rows: Vec<EvalRow>,
}

fn mean_of(rows: &[EvalRow], f: impl Fn(&EvalRow) -> Option<f64>) -> Option<f64> {
    let v: Vec<f64> = rows.iter().filter_map(f).collect();
    if v.is_empty() {
        None
    } else {
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }
}

impl EvalReport {
    /// Computes every aggregate from `rows`.
    pub fn from_rows(kind: ReportKind, label: &str, protocol: &str, rows: Vec<EvalRow>) -> Result<Self> {
        let verdicts: Vec<QualityLabel> = rows.iter().filter_map(|r| r.quality_verdict).collect();
        let cr = if verdicts.is_empty() { None } else { Some(converted_ratio(&verdicts)?) };
        let graded: Vec<&EvalRow> = rows
            .iter()
            .filter(|r| r.dr_grade_true.is_some() && r.dr_grade_pred.is_some())
            .collect();
        let (mut accuracy, mut kappa, mut auc, mut confusion) = (None, None, None, None);
        if !graded.is_empty() {
            let truth: Vec<usize> = graded.iter().map(|r| r.dr_grade_true.unwrap() as usize).collect();
            let pred: Vec<usize> = graded.iter().map(|r| r.dr_grade_pred.unwrap() as usize).collect();
            let m = ConfusionMatrix::from_pairs(GRADES, &truth, &pred)?;
            accuracy = Some(m.accuracy());
            kappa = Some(cohens_kappa(&m)?);
            if graded.iter().all(|r| r.dr_scores.is_some()) {
                let scores: Vec<Vec<f64>> = graded.iter().map(|r| r.dr_scores.clone().unwrap()).collect();
                auc = Some(macro_auroc(&scores, &truth)?);
            }
            confusion = Some(m);
        }
        Ok(Self {
            kind,
            label: label.to_string(),
            protocol: protocol.to_string(),
            converted_ratio: cr,
            accuracy,
            kappa,
            auroc: auc,
            confusion,
            mean_psnr: mean_of(&rows, |r| r.psnr_enhanced),
            mean_ssim: mean_of(&rows, |r| r.ssim_enhanced),
            baseline_psnr: mean_of(&rows, |r| r.psnr_baseline),
            baseline_ssim: mean_of(&rows, |r| r.ssim_baseline),
            rows,
        })
    }

    /// Recomputes the aggregates from the rows and compares exactly.
    pub fn is_consistent(&self) -> bool {
        match Self::from_rows(self.kind, &self.label, &self.protocol, self.rows.clone()) {
            Ok(r) => same(&r, self),
            Err(_) => false,
        }
    }

    /// Sidecar holding the per-row classifier scores.
    pub fn scores_path(csv_path: &Path) -> PathBuf {
        csv_path.with_extension("scores.csv")
    }

    /// Writes the fixed-column rows to `path` and the scores to its sidecar.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(REPORT_COLUMNS)?;
        let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let g = |v: Option<u8>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.id.clone(),
                f(r.psnr_baseline),
                f(r.psnr_enhanced),
                f(r.ssim_baseline),
                f(r.ssim_enhanced),
                r.quality_verdict.map(|q| q.to_string()).unwrap_or_default(),
                g(r.dr_grade_true),
                g(r.dr_grade_pred),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;

        let sp = Self::scores_path(path);
        let mut w = csv::Writer::from_path(&sp)?;
        let mut header = vec!["id".to_string(), "quality_score".to_string()];
        header.extend((0..GRADES).map(|k| format!("dr_p{k}")));
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.id.clone(), f(r.quality_score)];
            match &r.dr_scores {
                Some(s) => rec.extend(s.iter().map(|x| x.to_string())),
                None => rec.extend(std::iter::repeat_n(String::new(), GRADES)),
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(&sp, e))
    }

    /// Reads rows back from a report CSV and its scores sidecar.
    pub fn read_rows(path: &Path) -> Result<Vec<EvalRow>> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rd = csv::Reader::from_reader(file);
        if rd.headers()?.iter().collect::<Vec<_>>() != REPORT_COLUMNS {
            return Err(Error::Manifest {
                line: 1,
                reason: format!("report header must be {}", REPORT_COLUMNS.join(",")),
            });
        }
        let mut rows = Vec::new();
        for (i, rec) in rd.records().enumerate() {
            let rec = rec?;
            let bad = |reason: String| Error::Manifest { line: i + 2, reason };
            let f = |s: &str| -> Result<Option<f64>> {
                if s.is_empty() {
                    Ok(None)
                } else {
                    s.parse().map(Some).map_err(|e| bad(format!("{s:?}: {e}")))
                }
            };
            let g = |s: &str| -> Result<Option<u8>> {
                if s.is_empty() {
                    Ok(None)
                } else {
                    s.parse().map(Some).map_err(|e| bad(format!("{s:?}: {e}")))
                }
            };
            rows.push(EvalRow {
                id: rec[0].to_string(),
                psnr_baseline: f(&rec[1])?,
                psnr_enhanced: f(&rec[2])?,
                ssim_baseline: f(&rec[3])?,
                ssim_enhanced: f(&rec[4])?,
                quality_verdict: if rec[5].is_empty() { None } else { Some(rec[5].parse()?) },
                dr_grade_true: g(&rec[6])?,
                dr_grade_pred: g(&rec[7])?,
                ..EvalRow::default()
            });
        }
        let sp = Self::scores_path(path);
        if sp.exists() {
            let file = fs::File::open(&sp).map_err(|e| Error::io(&sp, e))?;
            for (row, rec) in rows.iter_mut().zip(csv::Reader::from_reader(file).records()) {
                let rec = rec?;
                let parse = |s: &str| s.parse::<f64>().map_err(|e| Error::InvalidArgument(format!("{s:?}: {e}")));
                if !rec[1].is_empty() {
                    row.quality_score = Some(parse(&rec[1])?);
                }
                if !rec[2].is_empty() {
                    row.dr_scores = Some((2..2 + GRADES).map(|k| parse(&rec[k])).collect::<Result<_>>()?);
                }
            }
        }
        Ok(rows)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let bytes = serde_json::to_vec_pretty(self)?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    /// Aligned text table: quality and DR columns for no-reference reports,
    /// degraded and enhanced PSNR/SSIM rows for full-reference ones.
    pub fn render_table(&self) -> String {
        let n = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
        let mut out = String::new();
        match self.kind {
            ReportKind::NoReference => {
                let _ = writeln!(out, "No-reference evaluation, {} images", self.rows.len());
                let _ = writeln!(out, "{}", self.protocol);
                let _ = writeln!(out, "{:<12} {:>8} {:>9} {:>8} {:>8}", "model", "CR", "Accuracy", "Kappa", "AUC");
                let _ = writeln!(
                    out,
                    "{:<12} {:>8} {:>9} {:>8} {:>8}",
                    self.label,
                    n(self.converted_ratio),
                    n(self.accuracy),
                    n(self.kappa),
                    n(self.auroc)
                );
            }
            ReportKind::FullReference => {
                let _ = writeln!(out, "Full-reference evaluation, {} pairs", self.rows.len());
                let _ = writeln!(out, "{:<12} {:>9} {:>8}", "method", "PSNR", "SSIM");
                let _ = writeln!(out, "{:<12} {:>9} {:>8}", "degraded", n(self.baseline_psnr), n(self.baseline_ssim));
                let _ = writeln!(out, "{:<12} {:>9} {:>8}", self.label, n(self.mean_psnr), n(self.mean_ssim));
            }
        }
        out
    }
}

/// Equality that treats matching NaNs as equal.
fn same(a: &EvalReport, b: &EvalReport) -> bool {
    let fa = serde_json::to_string(a).ok();
    fa.is_some() && fa == serde_json::to_string(b).ok()
}
