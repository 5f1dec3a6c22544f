//! `fundus-ot` command-line driver.
//!
//! Exit status: 0 on success, 1 on a usage error, 2 when the command fails
//! at run time.

mod config;

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use fundus_ot::eval::{
    evaluate_full_reference, evaluate_no_reference, train_quality_classifier, DrTask, EvalReport,
    QualityClassifier,
};
use fundus_ot::imaging::{center_crop_resize, load_image, save_image, ImageTensor};
use fundus_ot::metrics::QualityLabel;
use fundus_ot::nn::Container;
use fundus_ot::pairing::{filter_quality, load_manifest};
use fundus_ot::synth::{build_corpus, degrade, read_pairs};
use fundus_ot::train::{enhance, image_trainer, write_loss_log, ImageSource, RunSpec};

use config::FileConfig;

#[derive(Parser, Debug)]
#[command(name = "fundus-ot", version, about = "Unpaired fundus image enhancement with optimal transport")]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML file with per-section overrides.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Seed applied to every random stream of the command.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic clean/degraded corpus with manifest and pair list.
    Synth {
        #[arg(long, value_name = "N")]
        n_per_grade: usize,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Degrade PNG images.
    Degrade {
        /// A PNG file or a directory of them.
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Train the generator on the reject (input) and good (target) records.
    Train {
        #[arg(long, value_name = "FILE")]
        manifest: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Base training profile: desk or paper.
        #[arg(long, default_value = "desk")]
        profile: String,
        #[arg(long, value_name = "N")]
        epochs: Option<usize>,
        /// Continue from a checkpoint of the same run.
        #[arg(long, value_name = "CKPT")]
        resume: Option<PathBuf>,
    },
    /// Apply a trained generator to PNG images.
    Enhance {
        #[arg(long, value_name = "CKPT")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// No-reference evaluation: converted ratio and optional DR grading.
    EvalNr {
        #[arg(long, value_name = "FILE")]
        manifest: PathBuf,
        #[arg(long, value_name = "DIR")]
        images: PathBuf,
        /// Trained quality classifier; trained from the manifest if absent.
        #[arg(long, value_name = "CKPT")]
        classifier: Option<PathBuf>,
        /// Also train and score a DR-grade classifier on the images.
        #[arg(long)]
        dr: bool,
        #[arg(long, default_value = "enhanced")]
        label: String,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Full-reference evaluation against the clean images of a pair list.
    EvalFr {
        #[arg(long, value_name = "FILE")]
        manifest: PathBuf,
        #[arg(long, value_name = "FILE")]
        pairs: PathBuf,
        #[arg(long, value_name = "DIR")]
        enhanced: PathBuf,
        #[arg(long, default_value = "enhanced")]
        label: String,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Render a saved report as a text table, optionally re-emitting its CSV.
    Report {
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        #[arg(long, value_name = "FILE")]
        csv: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = e.print();
                    ExitCode::SUCCESS
                }
                _ => {
                    // Help shown because arguments are missing is written to
                    // stdout by clap; usage errors belong on stderr.
                    eprint!("{}", e.render());
                    ExitCode::from(1)
                }
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.common.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let seed = cli.common.seed;
    match cli.command {
        Command::Synth { n_per_grade, out } => {
            let spec = cfg.corpus(seed)?;
            let manifest = build_corpus(n_per_grade, &spec, &out)?;
            println!("wrote {}", manifest.display());
        }
        Command::Degrade { input, out } => {
            let spec = cfg.corpus(seed)?.degradation;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            for (i, path) in list_pngs(&input)?.iter().enumerate() {
                let img: ImageTensor<f32> = load_image(path)?;
                let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
                rng.set_stream(i as u64);
                save_image(&degrade(&img, &spec, &mut rng)?, out.join(file_name(path)?))?;
            }
        }
        Command::Train {
            manifest,
            out,
            profile,
            epochs,
            resume,
        } => {
            let mut spec = cfg.run_spec(&profile, seed)?;
            if let Some(e) = epochs {
                spec.train.epochs = e;
            }
            train(&spec, &manifest, &out, resume.as_deref())?;
        }
        Command::Enhance { checkpoint, input, out } => {
            let c = Container::<f32>::load(&checkpoint, None)?;
            let side = fundus_ot::train::checkpoint_spec(&c)?.train.image_side;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let paths = list_pngs(&input)?;
            for chunk in paths.chunks(32) {
                let imgs = chunk
                    .iter()
                    .map(|p| center_crop_resize(&load_image::<f32>(p)?, side))
                    .collect::<fundus_ot::Result<Vec<_>>>()?;
                for (p, img) in chunk.iter().zip(enhance(&c, &imgs)?) {
                    save_image(&img, out.join(file_name(p)?))?;
                }
            }
            println!("enhanced {} images into {}", paths.len(), out.display());
        }
        Command::EvalNr {
            manifest,
            images,
            classifier,
            dr,
            label,
            out,
        } => {
            let records = load_manifest(&manifest)?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let qc = match classifier {
                Some(p) => QualityClassifier::<f32>::load(&p)?,
                None => {
                    let (spec, train_cfg) = cfg.quality_classifier(seed)?;
                    let (qc, scores) = train_quality_classifier::<f32>(&records, &spec, &train_cfg)?;
                    eprintln!(
                        "quality classifier: held-out kappa {:.4}, auroc {:.4} on {} images",
                        scores.kappa, scores.auroc, scores.held_out
                    );
                    qc.save(&out.join("quality_classifier.ckpt"))?;
                    qc
                }
            };
            let items = list_pngs(&images)?
                .iter()
                .map(|p| Ok((stem(p)?, load_image::<f32>(p)?)))
                .collect::<Result<Vec<_>>>()?;
            let grades: HashMap<String, u8> = records.iter().map(|r| (r.id.clone(), r.dr_grade)).collect();
            let (dr_spec, dr_cfg) = cfg.dr_classifier(seed)?;
            let task = DrTask {
                grades: &grades,
                spec: dr_spec,
                config: dr_cfg,
            };
            let report = evaluate_no_reference(&label, &items, &qc, dr.then_some(&task))?;
            emit(&report, &out)?;
        }
        Command::EvalFr {
            manifest,
            pairs,
            enhanced,
            label,
            out,
        } => {
            let records = load_manifest(&manifest)?;
            let pairs = read_pairs(&pairs)?;
            let report = evaluate_full_reference::<f32>(&label, &pairs, &records, &enhanced)?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            emit(&report, &out)?;
        }
        Command::Report { input, csv } => {
            let report = EvalReport::read_json(&input)?;
            if !report.is_consistent() {
                bail!("{}: aggregates do not match the rows", input.display());
            }
            if let Some(p) = csv {
                report.write_csv(&p)?;
            }
            print!("{}", report.render_table());
        }
    }
    Ok(())
}

fn train(spec: &RunSpec, manifest: &Path, out: &Path, resume: Option<&Path>) -> Result<()> {
    let records = load_manifest(manifest)?;
    let low = filter_quality(&records, QualityLabel::Reject);
    let high = filter_quality(&records, QualityLabel::Good);
    let source = ImageSource::<f32>::load(low, high, spec.train.image_side, spec.train.augment.clone())?;
    let mut trainer = image_trainer(spec, source)?;
    if let Some(p) = resume {
        trainer.restore(&Container::load(p, Some(&spec.fingerprint()))?)?;
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("run.json"), serde_json::to_vec_pretty(spec)?)?;
    let log = out.join("loss_log.csv");
    if resume.is_none() && log.exists() {
        fs::remove_file(&log)?;
    }
    let outcome = trainer.run(Some(out))?;
    if resume.is_none() && outcome.log.is_empty() {
        write_loss_log(&log, &[])?;
    }
    if let Some(last) = outcome.log.last() {
        println!(
            "epoch {} step {}: transport {:.4} w1 {:.4} gp {:.4}",
            last.epoch, last.step, last.transport_cost, last.w1_estimate, last.gp_term
        );
    }
    for c in &outcome.checkpoints {
        println!("checkpoint {}", c.display());
    }
    Ok(())
}

fn emit(report: &EvalReport, out: &Path) -> Result<()> {
    report.write_json(&out.join("report.json"))?;
    report.write_csv(&out.join("report.csv"))?;
    let table = report.render_table();
    fs::write(out.join("report.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn list_pngs(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let entries = fs::read_dir(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for e in entries {
        let p = e?.path();
        if p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")) {
            out.push(p);
        }
    }
    out.sort();
    if out.is_empty() {
        bail!("no PNG images in {}", path.display());
    }
    Ok(out)
}

fn file_name(p: &Path) -> Result<&std::ffi::OsStr> {
    p.file_name().with_context(|| format!("{} has no file name", p.display()))
}

fn stem(p: &Path) -> Result<String> {
    Ok(p.file_stem()
        .with_context(|| format!("{} has no file name", p.display()))?
        .to_string_lossy()
        .into_owned())
}
