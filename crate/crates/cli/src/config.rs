//! TOML configuration: each section overrides the built-in defaults key by
//! key.
//!
//! ```toml
//! [corpus.synth]          # SynthSpec
//! [corpus.degradation]    # DegradationSpec
//! [train]                 # TrainConfig, over the --profile base
//! [generator]             # GeneratorSpec
//! [critic]                # CriticSpec
//! [quality_classifier]    # ClassifierSpec
//! [quality_training]      # ClassifierTrainConfig
//! [dr_classifier]         # ClassifierSpec
//! [dr_training]           # ClassifierTrainConfig
//! ```

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use fundus_ot::eval::ClassifierTrainConfig;
use fundus_ot::nn::{ClassifierSpec, CriticSpec, GeneratorSpec};
use fundus_ot::synth::CorpusSpec;
use fundus_ot::train::{RunSpec, TrainConfig};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    corpus: Option<toml::Table>,
    train: Option<toml::Table>,
    generator: Option<toml::Table>,
    critic: Option<toml::Table>,
    quality_classifier: Option<toml::Table>,
    quality_training: Option<toml::Table>,
    dr_classifier: Option<toml::Table>,
    dr_training: Option<toml::Table>,
}

fn merge(base: &mut toml::Table, over: &toml::Table) {
    for (k, v) in over {
        match (base.get_mut(k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

fn section<T: Serialize + DeserializeOwned>(name: &str, base: T, over: &Option<toml::Table>) -> Result<T> {
    let Some(over) = over else {
        return Ok(base);
    };
    let mut table = toml::Table::try_from(&base).with_context(|| format!("serialising [{name}] defaults"))?;
    merge(&mut table, over);
    table.try_into().with_context(|| format!("invalid [{name}] section"))
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn corpus(&self, seed: Option<u64>) -> Result<CorpusSpec> {
        let mut c = section("corpus", CorpusSpec::default(), &self.corpus)?;
        if let Some(s) = seed {
            c.synth.seed = s;
            c.degradation.seed = s;
        }
        Ok(c)
    }

    pub fn run_spec(&self, profile: &str, seed: Option<u64>) -> Result<RunSpec> {
        let mut spec = RunSpec {
            train: section("train", TrainConfig::profile(profile)?, &self.train)?,
            generator: section("generator", GeneratorSpec::default(), &self.generator)?,
            critic: section("critic", CriticSpec::default(), &self.critic)?,
        };
        if let Some(s) = seed {
            spec.train.seed = s;
        }
        spec.validate()?;
        Ok(spec)
    }

    fn classifier(
        &self,
        name: &str,
        spec: ClassifierSpec,
        over: &Option<toml::Table>,
        training: &Option<toml::Table>,
        seed: Option<u64>,
    ) -> Result<(ClassifierSpec, ClassifierTrainConfig)> {
        let spec = section(name, spec, over)?;
        let mut cfg = section(name, ClassifierTrainConfig::default(), training)?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        spec.validate()?;
        cfg.validate()?;
        Ok((spec, cfg))
    }

    pub fn quality_classifier(&self, seed: Option<u64>) -> Result<(ClassifierSpec, ClassifierTrainConfig)> {
        self.classifier(
            "quality_classifier",
            ClassifierSpec::default(),
            &self.quality_classifier,
            &self.quality_training,
            seed,
        )
    }

    pub fn dr_classifier(&self, seed: Option<u64>) -> Result<(ClassifierSpec, ClassifierTrainConfig)> {
        let spec = ClassifierSpec {
            classes: 5,
            ..ClassifierSpec::default()
        };
        self.classifier("dr_classifier", spec, &self.dr_classifier, &self.dr_training, seed)
    }
}
