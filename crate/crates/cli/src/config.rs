use std::fs;
use std::path::{Path, PathBuf};

use fetopo::dsp::PreprocessConfig;
use fetopo::explain::ExplainerConfig;
use fetopo::synth::{CohortConfig, CohortFormats};
use fetopo::topology::{default_topology, load_topology, Topology, TopologyDoc};
use fetopo::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Inputs {
    /// `.tgam` stream for `decode`.
    pub input: Option<PathBuf>,
    /// Cohort directory written by `synth`.
    pub cohort: Option<PathBuf>,
    /// `windows.jsonl` written by `preprocess`.
    pub windows: Option<PathBuf>,
    /// Output directory of `train`.
    pub models: Option<PathBuf>,
}

/// Fully resolved configuration of one run, echoed as `run_config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: String,
    /// Global seed; copied into every module seed.
    pub seed: u64,
    pub lenient: bool,
    /// Accept checkpoints whose topology fingerprint differs.
    pub force: bool,
    pub inputs: Inputs,
    pub cohort: CohortConfig,
    pub formats: CohortFormats,
    pub preprocess: PreprocessConfig,
    /// Inline topology; the built-in graph when absent.
    pub topology: Option<TopologyDoc>,
    pub relax_topology: bool,
    pub train: TrainConfig,
    pub explain: ExplainerConfig,
    /// Score recordings by their mean window probability in `eval`.
    pub record_level: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            command: String::new(),
            seed: 0,
            lenient: false,
            force: false,
            inputs: Inputs::default(),
            cohort: CohortConfig::default(),
            formats: CohortFormats {
                csv: true,
                tgam: true,
            },
            preprocess: PreprocessConfig::default(),
            topology: None,
            relax_topology: false,
            train: TrainConfig::default(),
            explain: ExplainerConfig::default(),
            record_level: false,
        }
    }
}

impl RunConfig {
    /// Reads TOML, or JSON when the extension is `.json`.
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let parsed = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        } else {
            toml::from_str(&text).map_err(|e| e.to_string())
        };
        parsed.map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    /// Pushes the global seed into the module configs.
    pub fn propagate_seed(&mut self) {
        self.cohort.seed = self.seed;
        self.train.seed = self.seed;
        self.explain.seed = self.seed;
    }

    pub fn resolve_topology(&self) -> Result<Topology, CliError> {
        match &self.topology {
            Some(doc) => Ok(load_topology(doc, self.relax_topology)?),
            None => Ok(default_topology()),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run config serializes") + "\n"
    }
}
