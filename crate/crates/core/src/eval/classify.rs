use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::imaging::{center_crop_resize, load_image, ImageTensor};
use crate::metrics::{auroc, cohens_kappa, ConfusionMatrix, QualityLabel, ScoredLabels};
use crate::nn::{fingerprint, unix_now, ClassifierSpec, Container, ConvClassifier, RmsProp};
use crate::pairing::FundusRecord;
use crate::scalar::Scalar;
use crate::train::stream;

/// Every fifth id, by SHA-256 of the id, is held out.
pub const HOLDOUT_RULE: &str = "80/20 split: held out when the first 8 bytes of SHA-256(id), read as a big-endian u64, are 0 mod 5";

pub fn is_held_out(id: &str) -> bool {
    let d = Sha256::digest(id.as_bytes());
    let v = u64::from_be_bytes(d[..8].try_into().expect("8 bytes"));
    v % 5 == 0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Images are center-cropped and resized to this side.
    pub image_side: usize,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 16,
            lr: 2e-3,
            seed: 0,
            image_side: 64,
        }
    }
}

impl ClassifierTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.image_side == 0 {
            return Err(Error::InvalidArgument("batch_size and image_side must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument("lr must be > 0".into()));
        }
        Ok(())
    }
}

/// Cross-entropy training with RMSprop on shuffled minibatches.
pub fn train_classifier<T: Scalar>(
    spec: &ClassifierSpec,
    images: &[ImageTensor<T>],
    labels: &[usize],
    cfg: &ClassifierTrainConfig,
) -> Result<ConvClassifier<T>> {
    cfg.validate()?;
    if images.is_empty() {
        return Err(Error::Empty("classifier training set".into()));
    }
    if images.len() != labels.len() {
        return Err(Error::ShapeMismatch("one label per image required".into()));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= spec.classes) {
        return Err(Error::InvalidArgument(format!("label {l} outside {} classes", spec.classes)));
    }
    let mut net = ConvClassifier::new(spec.clone(), &mut stream(cfg.seed, 1))?;
    net.check_input(&[1, images[0].channels(), images[0].height(), images[0].width()])?;
    let mut opt = RmsProp::new(net.params());
    let mut order_rng = stream(cfg.seed, 2);
    let mut order: Vec<usize> = (0..images.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut order_rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<_> = chunk.iter().map(|&i| images[i].clone()).collect();
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let mut tape = Tape::new();
            let p = net.params().attach(&mut tape);
            let x = tape.constant(ImageTensor::batch(&batch)?);
            let logits = net.logits(&mut tape, &p, x);
            let loss = tape.cross_entropy(logits, &y);
            if !tape.item(loss).is_finite() {
                return Err(Error::NonFinite {
                    epoch: 0,
                    step: 0,
                    detail: "classifier cross-entropy".into(),
                });
            }
            let grads = net.params().gradients(&tape.backward(loss), &p);
            opt.step(net.params_mut(), &grads, cfg.lr)?;
        }
    }
    Ok(net)
}

/// Class probabilities for each image, evaluated in chunks.
pub fn predict<T: Scalar>(net: &ConvClassifier<T>, images: &[ImageTensor<T>]) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(16) {
        for row in net.predict_proba(&ImageTensor::batch(chunk)?)? {
            out.push(row.iter().map(|v| v.as_f64()).collect());
        }
    }
    Ok(out)
}

pub(crate) fn argmax(p: &[f64]) -> usize {
    p.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

/// Loads and resizes record images.
pub fn load_resized<T: Scalar>(records: &[FundusRecord], side: usize) -> Result<Vec<ImageTensor<T>>> {
    records
        .iter()
        .map(|r| center_crop_resize(&load_image(&r.path)?, side))
        .collect()
}

/// Good/Usable/Reject classifier.
#[derive(Clone, Debug)]
pub struct QualityClassifier<T> {
    net: ConvClassifier<T>,
    config: ClassifierTrainConfig,
    fingerprint: String,
}

/// Held-out agreement of a freshly trained quality classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeldOutScores {
    pub kappa: f64,
    /// Good versus the other classes, scored by P(Good).
    pub auroc: f64,
    pub confusion: ConfusionMatrix,
    pub held_out: usize,
}

impl<T: Scalar> QualityClassifier<T> {
    pub fn from_parts(net: ConvClassifier<T>, config: ClassifierTrainConfig) -> Self {
        let fingerprint = fingerprint(&(net.spec(), &config));
        Self {
            net,
            config,
            fingerprint,
        }
    }

    pub fn net(&self) -> &ConvClassifier<T> {
        &self.net
    }

    pub fn config(&self) -> &ClassifierTrainConfig {
        &self.config
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// Verdict and P(Good) per image; images are resized to the training
    /// side first.
    pub fn classify(&self, images: &[ImageTensor<T>]) -> Result<Vec<(QualityLabel, f64)>> {
        let side = self.config.image_side;
        let resized = images
            .iter()
            .map(|i| center_crop_resize(i, side))
            .collect::<Result<Vec<_>>>()?;
        Ok(predict(&self.net, &resized)?
            .into_iter()
            .map(|p| {
                let label = QualityLabel::from_index(argmax(&p)).expect("three classes");
                (label, p[QualityLabel::Good.index()])
            })
            .collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Container {
            fingerprint: self.fingerprint.clone(),
            metadata: json!({
                "spec": self.net.spec(),
                "config": self.config,
                "created_unix": unix_now(),
            }),
            arrays: self.net.params().clone(),
        }
        .save(path)
    }

    /// Loads a classifier, checking the stored fingerprint against its
    /// stored spec.
    pub fn load(path: &Path) -> Result<Self> {
        let c = Container::<T>::load(path, None)?;
        let spec: ClassifierSpec = serde_json::from_value(c.metadata["spec"].clone())?;
        let config: ClassifierTrainConfig = serde_json::from_value(c.metadata["config"].clone())?;
        let fp = fingerprint(&(&spec, &config));
        if fp != c.fingerprint {
            return Err(Error::FingerprintMismatch {
                expected: c.fingerprint,
                found: fp,
            });
        }
        let mut net = ConvClassifier::new(spec, &mut stream(0, 1))?;
        net.params_mut().assign(&c.arrays)?;
        Ok(Self {
            net,
            config,
            fingerprint: fp,
        })
    }
}

/// Trains the quality classifier on the non-held-out records and scores the
/// held-out ones.
pub fn train_quality_classifier<T: Scalar>(
    records: &[FundusRecord],
    spec: &ClassifierSpec,
    cfg: &ClassifierTrainConfig,
) -> Result<(QualityClassifier<T>, HeldOutScores)> {
    if spec.classes != QualityLabel::ALL.len() {
        return Err(Error::InvalidArgument("quality classifier needs 3 classes".into()));
    }
    let mut classes: Vec<QualityLabel> = records.iter().map(|r| r.quality).collect();
    classes.sort();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::Degenerate("manifest holds a single quality class".into()));
    }
    let (test, train): (Vec<FundusRecord>, Vec<FundusRecord>) = records.iter().cloned().partition(|r| is_held_out(&r.id));
    if train.is_empty() || test.is_empty() {
        return Err(Error::Degenerate("too few records for an 80/20 split".into()));
    }
    let images = load_resized::<T>(&train, cfg.image_side)?;
    let labels: Vec<usize> = train.iter().map(|r| r.quality.index()).collect();
    let net = train_classifier(spec, &images, &labels, cfg)?;
    let qc = QualityClassifier {
        net,
        config: cfg.clone(),
        fingerprint: fingerprint(&(spec, cfg)),
    };
    let probs = predict(&qc.net, &load_resized::<T>(&test, cfg.image_side)?)?;
    let truth: Vec<usize> = test.iter().map(|r| r.quality.index()).collect();
    let pred: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
    let confusion = ConfusionMatrix::from_pairs(3, &truth, &pred)?;
    let good = QualityLabel::Good.index();
    let scored = ScoredLabels::new(probs.iter().zip(&truth).map(|(p, &t)| (p[good], t == good)).collect());
    let scores = HeldOutScores {
        kappa: cohens_kappa(&confusion)?,
        auroc: auroc(&scored)?,
        confusion,
        held_out: test.len(),
    };
    Ok((qc, scores))
}
