use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use umt_core::classifier::ClassifierConfig;
use umt_core::data::ToySpec;
use umt_core::eval::{Arm, Experiment, ExperimentPlan};
use umt_core::prep::PatchSpec;
use umt_core::umt::{PretrainConfig, UmtConfig};

use crate::CliError;

/// Where `preprocess` and `experiment` find images.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    /// Corpus root; images follow the directory convention unless a
    /// manifest is given.
    pub root: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
}

/// Every tunable of a run, loadable from one TOML file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
    /// Log filter used when `UMT_LOG` is unset.
    pub verbosity: Option<String>,
    pub corpus: CorpusConfig,
    pub toy: ToySpec,
    pub patch: PatchSpec,
    pub pretrain: PretrainConfig,
    pub umt: UmtConfig,
    pub classifier: ClassifierConfig,
    pub plan: ExperimentPlan,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub fdr: Option<f64>,
    pub arm: Option<Arm>,
    pub held_out: Option<String>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {}", path.display(), e.message())))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(out) = &o.out {
            self.out = Some(out.clone());
        }
        if let Some(jobs) = o.jobs {
            self.jobs = jobs;
        }
        if let Some(fdr) = o.fdr {
            self.plan.fdr_target = fdr;
        }
        if let Some(arm) = o.arm {
            self.plan.arms = vec![arm];
        }
        if let Some(h) = &o.held_out {
            self.plan.held_out = Some(h.clone());
        }
        self.classifier.seed = self.seed;
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let config = |e: umt_core::UmtError| CliError::Config(e.to_string());
        self.toy.validate().map_err(config)?;
        self.patch.validate().map_err(config)?;
        self.umt.validate().map_err(config)?;
        self.classifier.validate().map_err(config)?;
        self.plan.validate(self.classifier.epochs).map_err(config)?;
        if self.pretrain.iters == 0 || !(self.pretrain.lr > 0.0) {
            return Err(CliError::Config("pretrain needs iters > 0 and lr > 0".into()));
        }
        Ok(())
    }

    pub fn out_dir(&self) -> Result<&Path, CliError> {
        self.out
            .as_deref()
            .ok_or_else(|| CliError::Config("no output directory (use --out or `out` in the config)".into()))
    }

    pub fn experiment(&self) -> Experiment {
        Experiment {
            plan: self.plan.clone(),
            classifier: self.classifier.clone(),
            umt: self.umt.clone(),
            pretrain: self.pretrain.clone(),
            seed: self.seed,
        }
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string_pretty(self).map_err(|e| CliError::Config(format!("cannot serialize config: {e}")))
    }
}
