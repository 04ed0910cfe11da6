use std::fs;
use std::path::{Path, PathBuf};

use artzoom::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::exit::Failure;

/// Settings file shape: one optional table per subcommand. Command-line
/// flags take precedence over values found here.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub augment: Option<AugmentSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<ParamsSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<ReportSection>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentSection {
    pub src: Option<PathBuf>,
    pub dst: Option<PathBuf>,
    pub seed: Option<u64>,
    pub crop_sizes: Option<Vec<usize>>,
    pub crops_per_size: Option<usize>,
    pub output_side: Option<usize>,
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    pub manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub folds: Option<usize>,
    pub seed: Option<u64>,
    pub group_by_source: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsSection {
    pub arch: Option<String>,
    pub num_classes: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub manifest: Option<PathBuf>,
    pub arch: Option<String>,
    pub out: Option<PathBuf>,
    pub folds_file: Option<PathBuf>,
    pub folds: Option<usize>,
    pub split_seed: Option<u64>,
    pub group_by_source: Option<bool>,
    pub weights: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub input_side: Option<usize>,
    pub train: Option<TrainConfig>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSection {
    pub mode: Option<String>,
    pub runs: Option<Vec<PathBuf>>,
    pub original: Option<Vec<PathBuf>>,
    pub augmented: Option<Vec<PathBuf>>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::usage(format!("cannot read config file {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| Failure::usage(format!("config file {}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config values are TOML-representable")
    }
}
