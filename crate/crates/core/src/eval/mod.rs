//! No-reference and full-reference evaluation of enhanced images, and the
//! report they produce.

mod classify;
mod report;


use std::collections::HashMap;
use std::path::Path;

pub use classify::{
    is_held_out, load_resized, predict, train_classifier, train_quality_classifier, ClassifierTrainConfig,
    HeldOutScores, QualityClassifier, HOLDOUT_RULE,
};
pub use report::{EvalReport, EvalRow, ReportKind, REPORT_COLUMNS};

use crate::error::{Error, Result};
use crate::imaging::{load_image, ImageTensor};
use crate::metrics::{psnr, ssim, SsimParams};
use crate::nn::ClassifierSpec;
use crate::pairing::{FundusRecord, MAX_GRADE};
use crate::scalar::Scalar;
use crate::synth::PairRow;

/// Settings for the optional DR-grade task on enhanced images.
#[derive(Clone, Debug, PartialEq)]
pub struct DrTask<'a> {
    pub grades: &'a HashMap<String, u8>,
    pub spec: ClassifierSpec,
    pub config: ClassifierTrainConfig,
}

/// Converted ratio from the quality classifier and, with a DR task, a grade
/// classifier trained on the non-held-out enhanced images and scored on the
/// held-out ones.
pub fn evaluate_no_reference<T: Scalar>(
    label: &str,
    images: &[(String, ImageTensor<T>)],
    classifier: &QualityClassifier<T>,
    dr: Option<&DrTask<'_>>,
) -> Result<EvalReport> {
    if images.is_empty() {
        return Err(Error::Empty("no images to evaluate".into()));
    }
    let imgs: Vec<ImageTensor<T>> = images.iter().map(|(_, i)| i.clone()).collect();
    let verdicts = classifier.classify(&imgs)?;
    let mut rows: Vec<EvalRow> = images
        .iter()
        .zip(&verdicts)
        .map(|((id, _), &(v, p))| EvalRow {
            id: id.clone(),
            quality_verdict: Some(v),
            quality_score: Some(p),
            ..EvalRow::default()
        })
        .collect();
    let mut protocol = format!("quality classifier {}", classifier.fingerprint());
    if let Some(task) = dr {
        if task.spec.classes != MAX_GRADE as usize + 1 {
            return Err(Error::InvalidArgument("DR classifier needs 5 classes".into()));
        }
        for row in rows.iter_mut() {
            let g = *task
                .grades
                .get(&row.id)
                .ok_or_else(|| Error::InvalidArgument(format!("no DR grade for {}", row.id)))?;
            row.dr_grade_true = Some(g);
        }
        let side = task.config.image_side;
        let resized = load_side(&imgs, side)?;
        let (test, train): (Vec<usize>, Vec<usize>) = (0..rows.len()).partition(|&i| is_held_out(&rows[i].id));
        if train.is_empty() || test.is_empty() {
            return Err(Error::Degenerate("too few images for the DR split".into()));
        }
        let train_imgs: Vec<_> = train.iter().map(|&i| resized[i].clone()).collect();
        let train_labels: Vec<usize> = train.iter().map(|&i| rows[i].dr_grade_true.unwrap() as usize).collect();
        let net = train_classifier(&task.spec, &train_imgs, &train_labels, &task.config)?;
        let test_imgs: Vec<_> = test.iter().map(|&i| resized[i].clone()).collect();
        for (&i, p) in test.iter().zip(predict(&net, &test_imgs)?) {
            rows[i].dr_grade_pred = Some(classify::argmax(&p) as u8);
            rows[i].dr_scores = Some(p);
        }
        protocol.push_str(&format!("; DR task {HOLDOUT_RULE}"));
    }
    EvalReport::from_rows(ReportKind::NoReference, label, &protocol, rows)
}

fn load_side<T: Scalar>(images: &[ImageTensor<T>], side: usize) -> Result<Vec<ImageTensor<T>>> {
    images
        .iter()
        .map(|i| crate::imaging::center_crop_resize(i, side))
        .collect()
}

/// File holding the enhanced version of `degraded_id`.
pub fn enhanced_path(dir: &Path, degraded_id: &str) -> std::path::PathBuf {
    dir.join(format!("{degraded_id}.png"))
}

/// PSNR and SSIM against the clean image for the degraded input (baseline)
/// and for its enhancement, which is read from `enhanced_dir`.
pub fn evaluate_full_reference<T: Scalar>(
    label: &str,
    pairs: &[PairRow],
    records: &[FundusRecord],
    enhanced_dir: &Path,
) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::Empty("no pairs to evaluate".into()));
    }
    let by_id: HashMap<&str, &FundusRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();
    let path_of = |id: &str| {
        by_id
            .get(id)
            .map(|r| r.path.clone())
            .ok_or_else(|| Error::InvalidArgument(format!("pair id {id} is not in the manifest")))
    };
    let sp = SsimParams::default();
    let mut rows = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let clean: ImageTensor<T> = load_image(path_of(&pair.clean)?)?;
        let degraded: ImageTensor<T> = load_image(path_of(&pair.degraded)?)?;
        let enhanced: ImageTensor<T> = load_image(enhanced_path(enhanced_dir, &pair.degraded))?;
        rows.push(EvalRow {
            id: pair.degraded.clone(),
            psnr_baseline: Some(psnr(&degraded, &clean)?.as_f64()),
            psnr_enhanced: Some(psnr(&enhanced, &clean)?.as_f64()),
            ssim_baseline: Some(ssim(&degraded, &clean, &sp)?.as_f64()),
            ssim_enhanced: Some(ssim(&enhanced, &clean, &sp)?.as_f64()),
            dr_grade_true: by_id.get(pair.degraded.as_str()).map(|r| r.dr_grade),
            ..EvalRow::default()
        });
    }
    EvalReport::from_rows(ReportKind::FullReference, label, "psnr and ssim against the clean image", rows)
}
