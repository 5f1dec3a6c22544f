use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{degrade, synth_fundus, DegradationSpec, SynthSpec};
use crate::error::{Error, Result};
use crate::imaging::save_image;
use crate::metrics::QualityLabel;
use crate::pairing::{write_manifest, FundusRecord, MAX_GRADE};

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const PAIRS_FILE: &str = "pairs.csv";

/// Template for a synthetic corpus.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSpec {
    pub synth: SynthSpec,
    pub degradation: DegradationSpec,
}

/// Clean/degraded id correspondence.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRow {
    pub clean: String,
    pub degraded: String,
}

pub fn write_pairs(path: &Path, pairs: &[PairRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for p in pairs {
        w.serialize(p)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_pairs(path: &Path) -> Result<Vec<PairRow>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Id of the `index`-th clean image of `grade`.
pub fn clean_id(grade: u8, index: usize) -> String {
    format!("g{grade}_{index:04}")
}

pub fn degraded_id(clean: &str) -> String {
    format!("{clean}_d")
}

/// Per-image generators: stream `2k` renders image `k`, stream `2k + 1`
/// degrades it, all under `spec.synth.seed`.
fn image_rngs(seed: u64, k: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let mut a = ChaCha8Rng::seed_from_u64(seed);
    a.set_stream(2 * k);
    let mut b = ChaCha8Rng::seed_from_u64(seed);
    b.set_stream(2 * k + 1);
    (a, b)
}

/// Renders `n_per_grade` clean images per grade into `<out>/good`, their
/// degraded copies into `<out>/reject`, and writes `manifest.csv` plus
/// `pairs.csv`. Returns the manifest path.
pub fn build_corpus(n_per_grade: usize, spec: &CorpusSpec, out: &Path) -> Result<PathBuf> {
    spec.synth.validate()?;
    spec.degradation.validate()?;
    let good = out.join("good");
    let reject = out.join("reject");
    for d in [&good, &reject] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut records = Vec::with_capacity(2 * n_per_grade * (MAX_GRADE as usize + 1));
    let mut pairs = Vec::with_capacity(n_per_grade * (MAX_GRADE as usize + 1));
    let mut k = 0u64;
    for grade in 0..=MAX_GRADE {
        let synth = SynthSpec {
            dr_grade: grade,
            ..spec.synth.clone()
        };
        for i in 0..n_per_grade {
            let (mut r_img, mut r_deg) = image_rngs(spec.synth.seed, k);
            k += 1;
            let clean = synth_fundus::<f32, _>(&synth, &mut r_img)?;
            let degraded = degrade(&clean.image, &spec.degradation, &mut r_deg)?;
            let id = clean_id(grade, i);
            let did = degraded_id(&id);
            let cp = good.join(format!("{id}.png"));
            let dp = reject.join(format!("{did}.png"));
            save_image(&clean.image, &cp)?;
            save_image(&degraded, &dp)?;
            records.push(FundusRecord {
                id: id.clone(),
                path: cp,
                quality: QualityLabel::Good,
                dr_grade: grade,
            });
            records.push(FundusRecord {
                id: did.clone(),
                path: dp,
                quality: QualityLabel::Reject,
                dr_grade: grade,
            });
            pairs.push(PairRow { clean: id, degraded: did });
        }
    }
    let manifest = out.join(MANIFEST_FILE);
    write_manifest(&manifest, &records)?;
    write_pairs(&out.join(PAIRS_FILE), &pairs)?;
    Ok(manifest)
}
