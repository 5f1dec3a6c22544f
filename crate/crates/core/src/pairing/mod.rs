//! Dataset manifests and grade-matched pair sampling.


use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;

use crate::error::{Error, Result};
use crate::imaging::ImageTensor;
use crate::metrics::QualityLabel;
use crate::scalar::Scalar;

pub const MANIFEST_HEADER: [&str; 4] = ["id", "path", "quality", "dr_grade"];
pub const MAX_GRADE: u8 = 4;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FundusRecord {
    pub id: String,
    /// Resolved against the manifest's directory when relative.
    pub path: PathBuf,
    pub quality: QualityLabel,
    pub dr_grade: u8,
}

fn manifest_error(line: usize, reason: impl Into<String>) -> Error {
    Error::Manifest {
        line,
        reason: reason.into(),
    }
}

/// Parses a manifest with header `id,path,quality,dr_grade`. Quality labels
/// are case-insensitive. An empty file is an empty manifest.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<FundusRecord>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    parse_manifest(&bytes, base)
}

pub(crate) fn parse_manifest(bytes: &[u8], base: &Path) -> Result<Vec<FundusRecord>> {
    if bytes.iter().all(|b| b.is_ascii_whitespace()) {
        return Ok(Vec::new());
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let header = reader.headers().map_err(|e| manifest_error(1, e.to_string()))?.clone();
    if header.iter().ne(MANIFEST_HEADER) {
        return Err(manifest_error(
            1,
            format!("header must be `{}`", MANIFEST_HEADER.join(",")),
        ));
    }
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            manifest_error(line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() != 4 {
            return Err(manifest_error(line, format!("expected 4 fields, found {}", rec.len())));
        }
        let id = rec[0].to_string();
        if id.is_empty() {
            return Err(manifest_error(line, "empty id"));
        }
        if rec[1].is_empty() {
            return Err(manifest_error(line, "empty path"));
        }
        let quality: QualityLabel = rec[2]
            .parse()
            .map_err(|_| manifest_error(line, format!("unknown quality label `{}`", &rec[2])))?;
        let dr_grade: u8 = rec[3]
            .parse::<i64>()
            .ok()
            .filter(|g| (0..=MAX_GRADE as i64).contains(g))
            .map(|g| g as u8)
            .ok_or_else(|| manifest_error(line, format!("dr_grade `{}` is not in 0..=4", &rec[3])))?;
        if !seen.insert(id.clone()) {
            return Err(manifest_error(line, format!("duplicate id `{id}`")));
        }
        let p = PathBuf::from(&rec[1]);
        let path = if p.is_relative() { base.join(p) } else { p };
        out.push(FundusRecord {
            id,
            path,
            quality,
            dr_grade,
        });
    }
    Ok(out)
}

/// Writes a manifest, storing paths relative to `base` where possible.
pub fn write_manifest(path: impl AsRef<Path>, records: &[FundusRecord]) -> Result<()> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new(""));
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(MANIFEST_HEADER)?;
    for r in records {
        let rel = r.path.strip_prefix(base).unwrap_or(&r.path);
        w.write_record([
            r.id.as_str(),
            &rel.to_string_lossy(),
            &r.quality.to_string(),
            &r.dr_grade.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Records of one quality, in manifest order.
pub fn filter_quality(records: &[FundusRecord], q: QualityLabel) -> Vec<FundusRecord> {
    records.iter().filter(|r| r.quality == q).cloned().collect()
}

/// Uniform sampling of low-quality inputs, each paired with a uniform
/// high-quality target of the same grade.
#[derive(Clone, Debug)]
pub struct PairSampler {
    low: Vec<FundusRecord>,
    high: Vec<FundusRecord>,
    high_by_grade: Vec<Vec<usize>>,
}

impl PairSampler {
    pub fn new(low: Vec<FundusRecord>, high: Vec<FundusRecord>) -> Result<Self> {
        if low.is_empty() {
            return Err(Error::Empty("low-quality pool".into()));
        }
        if high.is_empty() {
            return Err(Error::Empty("high-quality pool".into()));
        }
        let mut high_by_grade = vec![Vec::new(); MAX_GRADE as usize + 1];
        for (i, r) in high.iter().enumerate() {
            high_by_grade[r.dr_grade as usize].push(i);
        }
        let mut grades: Vec<u8> = low.iter().map(|r| r.dr_grade).collect();
        grades.sort_unstable();
        grades.dedup();
        if let Some(&g) = grades.iter().find(|&&g| high_by_grade[g as usize].is_empty()) {
            return Err(Error::UnmatchedGrade(g));
        }
        Ok(Self {
            low,
            high,
            high_by_grade,
        })
    }

    pub fn low(&self) -> &[FundusRecord] {
        &self.low
    }

    pub fn high(&self) -> &[FundusRecord] {
        &self.high
    }

    /// Draws `batch_size` `(low index, high index)` pairs. Per pair, the low
    /// index is drawn first.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<(usize, usize)>> {
        if batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        Ok((0..batch_size)
            .map(|_| {
                let i = rng.gen_range(0..self.low.len());
                let pool = &self.high_by_grade[self.low[i].dr_grade as usize];
                (i, pool[rng.gen_range(0..pool.len())])
            })
            .collect())
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<(&FundusRecord, &FundusRecord)>> {
        Ok(self
            .sample_indices(batch_size, rng)?
            .into_iter()
            .map(|(i, j)| (&self.low[i], &self.high[j]))
            .collect())
    }
}

/// Grade-matched image pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct PairBatch<T> {
    pub inputs: Vec<ImageTensor<T>>,
    pub targets: Vec<ImageTensor<T>>,
    pub grades: Vec<u8>,
}

impl<T> PairBatch<T> {
    pub fn len(&self) -> usize {
        self.grades.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grades.is_empty()
    }
}

/// Samples a batch of grade-matched pairs and loads their images with
/// `load`.
pub fn sample_pair_batch<T, R, F>(
    low: &[FundusRecord],
    high: &[FundusRecord],
    batch_size: usize,
    rng: &mut R,
    mut load: F,
) -> Result<PairBatch<T>>
where
    T: Scalar,
    R: Rng + ?Sized,
    F: FnMut(&FundusRecord) -> Result<ImageTensor<T>>,
{
    let sampler = PairSampler::new(low.to_vec(), high.to_vec())?;
    let mut batch = PairBatch {
        inputs: Vec::with_capacity(batch_size),
        targets: Vec::with_capacity(batch_size),
        grades: Vec::with_capacity(batch_size),
    };
    for (a, b) in sampler.sample(batch_size, rng)? {
        batch.inputs.push(load(a)?);
        batch.targets.push(load(b)?);
        batch.grades.push(a.dr_grade);
    }
    Ok(batch)
}
