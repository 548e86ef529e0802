use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::DatasetPaths;
use crate::error::{Error, Result};
use crate::evaluation::{ClassifierConfig, EvalConfig, ProtocolKind};
use crate::layers::ModelConfig;
use crate::scoring::ConvEConfig;
use crate::trainer::TrainConfig;

/// Which triples `eval` ranks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSplit {
    Train,
    Valid,
    #[default]
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub protocol: ProtocolKind,
    pub k: usize,
    pub filtered: bool,
    pub triples: EvalSplit,
    /// Run the classification probes for every label file present.
    pub classify: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        let base = EvalConfig::default();
        EvalSection {
            protocol: base.protocol,
            k: base.k,
            filtered: base.filtered,
            triples: EvalSplit::Test,
            classify: true,
        }
    }
}

/// Everything one run needs. The top-level `seed` drives every seeded
/// component; per-section seeds are overwritten by it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    pub data: DatasetPaths,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub conve: ConvEConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub classifier: ClassifierConfig,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs")
}

/// 1-based line of byte `offset`.
fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

impl RunConfig {
    /// Parses TOML text. Relative paths are resolved against `base`.
    pub fn from_toml(text: &str, source: &str, base: &Path) -> Result<Self> {
        let mut config: RunConfig = toml::from_str(text).map_err(|e| Error::Parse {
            source_name: source.to_string(),
            line: e.span().map(|s| line_of(text, s.start)).unwrap_or(0),
            message: e.message().replace('\n', " "),
        })?;
        config.resolve_paths(base);
        config.set_seed(config.seed);
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        // Absolute, so the echoed config stays valid wherever it is copied.
        let base = path.parent().unwrap_or(Path::new("."));
        let base = std::path::absolute(base).map_err(|e| Error::io(base, e))?;
        Self::from_toml(&text, &path.display().to_string(), &base)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.model.seed = seed;
        self.train.seed = seed;
        self.classifier.seed = seed;
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            protocol: self.eval.protocol,
            k: self.eval.k,
            filtered: self.eval.filtered,
            seed: self.seed,
        }
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let d = &mut self.data;
        fix(&mut d.triples);
        for p in [
            &mut d.valid_triples,
            &mut d.test_triples,
            &mut d.events,
            &mut d.temporal,
            &mut d.init_vectors,
            &mut d.entity_labels,
            &mut d.relation_labels,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        fix(&mut self.out_dir);
    }

    /// Every referenced input file must exist before any work starts.
    pub fn check_inputs(&self) -> Result<()> {
        let d = &self.data;
        let mut paths = vec![&d.triples];
        paths.extend(
            [
                &d.valid_triples,
                &d.test_triples,
                &d.events,
                &d.temporal,
                &d.init_vectors,
                &d.entity_labels,
                &d.relation_labels,
            ]
            .into_iter()
            .flatten(),
        );
        for p in paths {
            if !p.is_file() {
                return Err(Error::io(
                    p,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "input file not found"),
                ));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.conve.validate(self.model.dim)?;
        self.train.validate()?;
        self.classifier.adam.validate()?;
        Ok(())
    }

    /// The effective configuration with every default spelled out.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize configuration: {e}")))
    }
}
