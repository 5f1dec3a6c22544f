//! Alternating critic/generator training with RMSprop, checkpointing and
//! deterministic resume.
//!
//! Randomness comes from independent ChaCha8 streams of the run seed: one
//! for batch sampling, one for augmentation and one for penalty
//! interpolation. Their positions are stored in every checkpoint.

mod config;
mod source;


use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

pub use config::{lr_schedule, TrainConfig};
pub use source::{BatchSource, CloudSource, ImageSource};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::imaging::ImageTensor;
use crate::metrics::{MsSsimParams, SsimParams};
use crate::nn::{
    fingerprint, unix_now, Container, ConvCritic, Critic, CriticSpec, Generator, GeneratorSpec, MlpCritic,
    MlpGenerator, MlpSpec, RmsProp, UNetGenerator,
};
use crate::objective::{critic_loss_on_tape, generator_loss_on_tape, CostKind, CriticTerms, LossBreakdown};
use crate::pairing::FundusRecord;
use crate::scalar::Scalar;

const STREAM_SAMPLE: u64 = 1;
const STREAM_AUGMENT: u64 = 2;
const STREAM_PENALTY: u64 = 3;
const STREAM_GENERATOR_INIT: u64 = 4;
const STREAM_CRITIC_INIT: u64 = 5;

/// Chunk size for inference passes.
const ENHANCE_CHUNK: usize = 8;

pub(crate) fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

/// Everything that determines an image training run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSpec {
    pub train: TrainConfig,
    pub generator: GeneratorSpec,
    pub critic: CriticSpec,
}

impl RunSpec {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.generator.validate()?;
        self.critic.validate()?;
        if self.generator.in_channels != self.critic.in_channels {
            return Err(Error::InvalidArgument("generator and critic channel counts differ".into()));
        }
        if self.train.objective.cost_kind != CostKind::MsSsimCost {
            return Err(Error::InvalidArgument("image runs use the ms_ssim_cost transport cost".into()));
        }
        MsSsimParams::for_side(SsimParams::default(), self.train.image_side)?;
        Ok(())
    }

    pub fn fingerprint(&self) -> String {
        fingerprint(self)
    }
}

/// Everything that determines a point-cloud training run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToySpec {
    pub train: TrainConfig,
    pub generator: MlpSpec,
    pub critic: MlpSpec,
}

/// One row of the loss log, written after each generator update.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub epoch: usize,
    pub step: usize,
    pub lr_generator: f64,
    pub lr_critic: f64,
    pub transport_cost: f64,
    pub w1_estimate: f64,
    pub gp_term: f64,
    pub generator_total: f64,
    pub critic_total: f64,
}

impl LossRow {
    pub fn breakdown(&self) -> LossBreakdown {
        LossBreakdown {
            transport_cost: self.transport_cost,
            w1_estimate: self.w1_estimate,
            gp_term: self.gp_term,
            generator_total: self.generator_total,
            critic_total: self.critic_total,
        }
    }
}

pub fn write_loss_log(path: &Path, rows: &[LossRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Appends rows, writing the header only to an empty file.
pub fn append_loss_log(path: &Path, rows: &[LossRow]) -> Result<()> {
    let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_loss_log(path: &Path) -> Result<Vec<LossRow>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    csv::Reader::from_reader(file)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

#[derive(Clone, Debug)]
struct Streams {
    sample: ChaCha8Rng,
    augment: ChaCha8Rng,
    penalty: ChaCha8Rng,
}

fn rng_state(r: &ChaCha8Rng) -> serde_json::Value {
    json!({
        "seed": hex::encode(r.get_seed()),
        "stream": r.get_stream().to_string(),
        "word_pos": r.get_word_pos().to_string(),
    })
}

fn rng_from_state(v: &serde_json::Value) -> Result<ChaCha8Rng> {
    let bad = || Error::CorruptCheckpoint("malformed rng state".into());
    let seed: [u8; 32] = hex::decode(v["seed"].as_str().ok_or_else(bad)?)
        .map_err(|_| bad())?
        .try_into()
        .map_err(|_| bad())?;
    let stream: u64 = v["stream"].as_str().ok_or_else(bad)?.parse().map_err(|_| bad())?;
    let pos: u128 = v["word_pos"].as_str().ok_or_else(bad)?.parse().map_err(|_| bad())?;
    let mut r = ChaCha8Rng::from_seed(seed);
    r.set_stream(stream);
    r.set_word_pos(pos);
    Ok(r)
}

/// Result of a call to [`Trainer::run`].
#[derive(Clone, Debug, Default)]
pub struct TrainOutcome {
    pub log: Vec<LossRow>,
    pub checkpoints: Vec<PathBuf>,
}

/// Training state: both networks, their optimizers, the data source and the
/// random streams.
pub struct Trainer<T: Scalar, G, C, S> {
    cfg: TrainConfig,
    msp: MsSsimParams,
    generator: G,
    critic: C,
    opt_generator: RmsProp<T>,
    opt_critic: RmsProp<T>,
    source: S,
    streams: Streams,
    epoch: usize,
    fingerprint: String,
    networks: serde_json::Value,
}

impl<T, G, C, S> Trainer<T, G, C, S>
where
    T: Scalar,
    G: Generator<T>,
    C: Critic<T>,
    S: BatchSource<T>,
{
    /// `fingerprint` identifies the run for checkpoint compatibility;
    /// `networks` is stored verbatim in checkpoint metadata.
    pub fn new(
        cfg: TrainConfig,
        generator: G,
        critic: C,
        source: S,
        fingerprint: String,
        networks: serde_json::Value,
    ) -> Result<Self> {
        cfg.validate()?;
        let msp = if cfg.objective.cost_kind == CostKind::MsSsimCost {
            MsSsimParams::for_side(SsimParams::default(), cfg.image_side)?
        } else {
            MsSsimParams::default()
        };
        let streams = Streams {
            sample: stream(cfg.seed, STREAM_SAMPLE),
            augment: stream(cfg.seed, STREAM_AUGMENT),
            penalty: stream(cfg.seed, STREAM_PENALTY),
        };
        Ok(Self {
            opt_generator: RmsProp::new(generator.params()),
            opt_critic: RmsProp::new(critic.params()),
            cfg,
            msp,
            generator,
            critic,
            source,
            streams,
            epoch: 0,
            fingerprint,
            networks,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn generator(&self) -> &G {
        &self.generator
    }

    pub fn critic(&self) -> &C {
        &self.critic
    }

    pub fn source(&self) -> &S {
        &self.source
    }

    /// Completed epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    fn non_finite(&self, step: usize, detail: String) -> Error {
        Error::NonFinite {
            epoch: self.epoch,
            step,
            detail,
        }
    }

    /// One batch: `critic_steps` critic updates on it, then one generator
    /// update.
    pub fn step(&mut self, step: usize) -> Result<LossRow> {
        let (lr_g, lr_c) = lr_schedule(&self.cfg, self.epoch)?;
        let obj = self.cfg.objective.clone();
        let (y, x) = self
            .source
            .draw(self.cfg.batch_size, &mut self.streams.sample, &mut self.streams.augment)?;
        self.generator.check_input(y.shape())?;
        self.critic.check_input(x.shape())?;

        // The generator is fixed during the critic updates, so its forward
        // pass is recorded once and reused for the generator loss.
        let mut gen_tape = Tape::new();
        let pg = self.generator.params().attach(&mut gen_tape);
        let yv = gen_tape.constant(y);
        let gyv = self.generator.forward(&mut gen_tape, &pg, yv);
        let gy = gen_tape.value(gyv).clone();

        let mut terms = CriticTerms {
            w1_estimate: 0.0,
            gp_term: 0.0,
        };
        for _ in 0..obj.critic_steps {
            let mut tape = Tape::new();
            let pc = self.critic.params().attach(&mut tape);
            let (loss, t) =
                critic_loss_on_tape(&mut tape, &self.critic, &pc, &x, &gy, obj.gp_coefficient, &mut self.streams.penalty)
                    .map_err(|e| match e {
                        // Overflowing input gradients are a divergence, not a kink.
                        Error::NonDifferentiable(m) if m.contains("non-finite") => self.non_finite(step, m),
                        e => e,
                    })?;
            if !tape.item(loss).is_finite() {
                return Err(self.non_finite(step, format!("critic loss, terms {t:?}")));
            }
            let grads = self.critic.params().gradients(&tape.backward(loss), &pc);
            self.opt_critic.step(self.critic.params_mut(), &grads, lr_c)?;
            terms = t;
        }

        let pc = if obj.lambda == 0.0 {
            Vec::new()
        } else {
            self.critic.params().attach_frozen(&mut gen_tape)
        };
        let (loss, tc, _) = generator_loss_on_tape(&mut gen_tape, &self.critic, &pc, yv, gyv, &obj, &self.msp);
        let b = LossBreakdown::from_parts(tc, terms.w1_estimate, terms.gp_term, obj.lambda);
        if !b.all_finite() || !gen_tape.item(loss).is_finite() {
            return Err(self.non_finite(step, format!("generator loss, breakdown {b:?}")));
        }
        let grads = self.generator.params().gradients(&gen_tape.backward(loss), &pg);
        self.opt_generator.step(self.generator.params_mut(), &grads, lr_g)?;
        if !self.generator.params().all_finite() || !self.critic.params().all_finite() {
            return Err(self.non_finite(step, "parameters after update".into()));
        }
        Ok(LossRow {
            epoch: self.epoch,
            step,
            lr_generator: lr_g,
            lr_critic: lr_c,
            transport_cost: b.transport_cost,
            w1_estimate: b.w1_estimate,
            gp_term: b.gp_term,
            generator_total: b.generator_total,
            critic_total: b.critic_total,
        })
    }

    /// One full epoch of steps.
    pub fn run_epoch(&mut self) -> Result<Vec<LossRow>> {
        let steps = self.source.steps_per_epoch(self.cfg.batch_size);
        let rows = (0..steps).map(|s| self.step(s)).collect::<Result<Vec<_>>>()?;
        self.epoch += 1;
        Ok(rows)
    }

    /// Trains up to epoch `until` (capped at the configured count). With an
    /// output directory, checkpoints land there as `epoch_NNNN.ckpt`, the
    /// loss log is appended to `loss_log.csv`, and a non-finite loss leaves
    /// `nonfinite.ckpt` behind.
    pub fn run_until(&mut self, until: usize, out_dir: Option<&Path>) -> Result<TrainOutcome> {
        if let Some(d) = out_dir {
            fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        let until = until.min(self.cfg.epochs);
        let mut out = TrainOutcome::default();
        while self.epoch < until {
            let rows = match self.run_epoch() {
                Ok(r) => r,
                Err(e) => {
                    if let (Error::NonFinite { .. }, Some(d)) = (&e, out_dir) {
                        let mut c = self.checkpoint();
                        c.metadata["failure"] = json!(e.to_string());
                        c.save(&d.join("nonfinite.ckpt"))?;
                    }
                    return Err(e);
                }
            };
            if let Some(d) = out_dir {
                append_loss_log(&d.join("loss_log.csv"), &rows)?;
            }
            out.log.extend(rows);
            let every = self.cfg.checkpoint_every;
            let due = (every > 0 && self.epoch % every == 0) || self.epoch == self.cfg.epochs;
            if let (true, Some(d)) = (due, out_dir) {
                let path = d.join(format!("epoch_{:04}.ckpt", self.epoch));
                self.checkpoint().save(&path)?;
                out.checkpoints.push(path);
            }
        }
        if self.cfg.epochs == 0 {
            if let Some(d) = out_dir {
                let path = d.join("epoch_0000.ckpt");
                self.checkpoint().save(&path)?;
                out.checkpoints.push(path);
            }
        }
        Ok(out)
    }

    /// Trains the remaining configured epochs.
    pub fn run(&mut self, out_dir: Option<&Path>) -> Result<TrainOutcome> {
        self.run_until(self.cfg.epochs, out_dir)
    }

    /// Snapshot of networks, optimizer accumulators and stream positions.
    pub fn checkpoint(&self) -> Container<T> {
        let mut arrays = crate::nn::ParameterSet::new();
        arrays.extend_prefixed("generator", self.generator.params());
        arrays.extend_prefixed("critic", self.critic.params());
        arrays.extend_prefixed("opt_generator", self.opt_generator.state());
        arrays.extend_prefixed("opt_critic", self.opt_critic.state());
        Container {
            fingerprint: self.fingerprint.clone(),
            metadata: json!({
                "epoch": self.epoch,
                "config": self.cfg,
                "networks": self.networks,
                "augmentation": "independent per side",
                "rng": {
                    "sample": rng_state(&self.streams.sample),
                    "augment": rng_state(&self.streams.augment),
                    "penalty": rng_state(&self.streams.penalty),
                },
                "created_unix": unix_now(),
            }),
            arrays,
        }
    }

    /// Restores a snapshot taken from a run with the same fingerprint.
    pub fn restore(&mut self, c: &Container<T>) -> Result<()> {
        if c.fingerprint != self.fingerprint {
            return Err(Error::FingerprintMismatch {
                expected: self.fingerprint.clone(),
                found: c.fingerprint.clone(),
            });
        }
        let epoch = c.metadata["epoch"]
            .as_u64()
            .ok_or_else(|| Error::CorruptCheckpoint("missing epoch".into()))? as usize;
        let rng = &c.metadata["rng"];
        let streams = Streams {
            sample: rng_from_state(&rng["sample"])?,
            augment: rng_from_state(&rng["augment"])?,
            penalty: rng_from_state(&rng["penalty"])?,
        };
        self.generator.params_mut().assign(&c.arrays.extract_prefixed("generator"))?;
        self.critic.params_mut().assign(&c.arrays.extract_prefixed("critic"))?;
        self.opt_generator.set_state(&c.arrays.extract_prefixed("opt_generator"))?;
        self.opt_critic.set_state(&c.arrays.extract_prefixed("opt_critic"))?;
        self.streams = streams;
        self.epoch = epoch;
        Ok(())
    }
}

pub type ImageTrainer<T> = Trainer<T, UNetGenerator<T>, ConvCritic<T>, ImageSource<T>>;
pub type ToyTrainer<T> = Trainer<T, MlpGenerator<T>, MlpCritic<T>, CloudSource<T>>;

/// An image trainer over already decoded images.
pub fn image_trainer<T: Scalar>(spec: &RunSpec, source: ImageSource<T>) -> Result<ImageTrainer<T>> {
    spec.validate()?;
    let seed = spec.train.seed;
    let generator = UNetGenerator::new(spec.generator.clone(), &mut stream(seed, STREAM_GENERATOR_INIT))?;
    let critic = ConvCritic::new(spec.critic.clone(), &mut stream(seed, STREAM_CRITIC_INIT))?;
    let networks = json!({ "generator": spec.generator, "critic": spec.critic });
    Trainer::new(spec.train.clone(), generator, critic, source, spec.fingerprint(), networks)
}

/// A point-cloud trainer with the transport cost fixed to squared distance.
pub fn toy_trainer<T: Scalar>(spec: &ToySpec, source: CloudSource<T>) -> Result<ToyTrainer<T>> {
    let mut cfg = spec.train.clone();
    cfg.objective.cost_kind = CostKind::SquaredDistance;
    let seed = cfg.seed;
    let generator = MlpGenerator::new(spec.generator.clone(), &mut stream(seed, STREAM_GENERATOR_INIT))?;
    let critic = MlpCritic::new(spec.critic.clone(), &mut stream(seed, STREAM_CRITIC_INIT))?;
    let networks = json!({ "generator": spec.generator, "critic": spec.critic });
    let fp = fingerprint(&ToySpec {
        train: cfg.clone(),
        ..spec.clone()
    });
    Trainer::new(cfg, generator, critic, source, fp, networks)
}

/// Loads the records' images and trains from scratch, writing checkpoints
/// and the loss log under `out_dir`.
pub fn train<T: Scalar>(
    spec: &RunSpec,
    low: Vec<FundusRecord>,
    high: Vec<FundusRecord>,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    spec.validate()?;
    let source = ImageSource::<T>::load(low, high, spec.train.image_side, spec.train.augment.clone())?;
    let mut t = image_trainer(spec, source)?;
    if let Some(d) = out_dir {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        let manifest = serde_json::to_vec_pretty(&json!({
            "fingerprint": spec.fingerprint(),
            "spec": spec,
            "augmentation": "independent per side",
        }))?;
        let path = d.join("run.json");
        fs::File::create(&path)
            .and_then(|mut f| f.write_all(&manifest))
            .map_err(|e| Error::io(&path, e))?;
        let log = d.join("loss_log.csv");
        if log.exists() {
            fs::remove_file(&log).map_err(|e| Error::io(&log, e))?;
        }
    }
    t.run(out_dir)
}

/// The run spec stored in an image checkpoint, checked against its
/// fingerprint.
pub fn checkpoint_spec<T: Scalar>(c: &Container<T>) -> Result<RunSpec> {
    let spec = RunSpec {
        train: serde_json::from_value(c.metadata["config"].clone())?,
        generator: serde_json::from_value(c.metadata["networks"]["generator"].clone())?,
        critic: serde_json::from_value(c.metadata["networks"]["critic"].clone())?,
    };
    let fp = spec.fingerprint();
    if fp != c.fingerprint {
        return Err(Error::FingerprintMismatch {
            expected: c.fingerprint.clone(),
            found: fp,
        });
    }
    Ok(spec)
}

/// The generator stored in an image checkpoint.
pub fn load_generator<T: Scalar>(c: &Container<T>) -> Result<(RunSpec, UNetGenerator<T>)> {
    let spec = checkpoint_spec(c)?;
    let mut g = UNetGenerator::new(spec.generator.clone(), &mut stream(0, STREAM_GENERATOR_INIT))?;
    g.params_mut().assign(&c.arrays.extract_prefixed("generator"))?;
    Ok((spec, g))
}

/// Pure forward pass of the checkpoint's generator; order is preserved.
pub fn enhance<T: Scalar>(c: &Container<T>, images: &[ImageTensor<T>]) -> Result<Vec<ImageTensor<T>>> {
    let (spec, g) = load_generator(c)?;
    let want = (spec.generator.in_channels, spec.train.image_side, spec.train.image_side);
    if let Some(bad) = images.iter().find(|i| i.dims() != want) {
        return Err(Error::ShapeMismatch(format!(
            "checkpoint expects {want:?} images, got {:?}",
            bad.dims()
        )));
    }
    enhance_with(&g, images)
}

/// Applies a generator to images in fixed-size chunks.
pub fn enhance_with<T: Scalar, G: Generator<T>>(g: &G, images: &[ImageTensor<T>]) -> Result<Vec<ImageTensor<T>>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(ENHANCE_CHUNK) {
        let y = g.apply(&ImageTensor::batch(chunk)?)?;
        out.extend(ImageTensor::unbatch(&y)?);
    }
    Ok(out)
}
