use std::path::{Path, PathBuf};

use anyhow::Context;
use infopriv::data::{CsvSchema, SyntheticSpec};
use infopriv::experiment::{SweepAxis, DEFAULT_DELTAS};
use infopriv::risk::RiskConfig;
use infopriv::solver::SolverConfig;
use infopriv::Error;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    Csv(CsvSource),
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SyntheticSpec::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    /// Training file; relative paths resolve against the config file.
    pub train: PathBuf,
    /// Evaluation file, quantized with the training bins.
    #[serde(default)]
    pub test: Option<PathBuf>,
    pub schema: CsvSchema,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RiskSection {
    /// Public regularization; `1/n` when absent.
    pub lambda: Option<f64>,
    /// Private regularization; `n^{-1/2}` when absent.
    pub lambda_n: Option<f64>,
    pub loss: String,
    pub kernel: String,
}

impl Default for RiskSection {
    fn default() -> Self {
        RiskSection {
            lambda: None,
            lambda_n: None,
            loss: infopriv::losses::DEFAULT_LOSS.to_string(),
            kernel: "count".to_string(),
        }
    }
}

impl RiskSection {
    pub fn build(&self, n: usize) -> Result<RiskConfig, Error> {
        let n = n.max(1) as f64;
        RiskConfig::new(
            self.lambda.unwrap_or(1.0 / n),
            self.lambda_n.unwrap_or(1.0 / n.sqrt()),
            &self.loss,
            &self.kernel,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    #[default]
    Expected,
    Sampled,
}

/// Artifact locations read by `certify`; defaults point into `--out`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertifySection {
    pub model: Option<PathBuf>,
    pub joint: Option<PathBuf>,
    pub samples: Option<PathBuf>,
    pub deltas: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSource,
    pub risk: RiskSection,
    pub solver: SolverConfig,
    /// Privacy metric of the constraint: `normalized` or `bayes_error`.
    pub metric: String,
    pub mode: EvalMode,
    pub sweep: Option<SweepAxis>,
    pub certify: CertifySection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: DataSource::default(),
            risk: RiskSection::default(),
            solver: SolverConfig::default(),
            metric: "normalized".to_string(),
            mode: EvalMode::default(),
            sweep: None,
            certify: CertifySection::default(),
        }
    }
}

impl RunConfig {
    /// Reads a TOML file; paths inside it become relative to its directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let DataSource::Csv(src) = &mut cfg.data {
            fix(&mut src.train);
            if let Some(t) = &mut src.test {
                fix(t);
            }
        }
        for p in [&mut cfg.certify.model, &mut cfg.certify.joint, &mut cfg.certify.samples]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        Ok(cfg)
    }

    /// Applies a command-line seed to both the data draw and the solver.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.solver.seed = s;
            if let DataSource::Synthetic(spec) = &mut self.data {
                spec.seed = s;
            }
        }
        self
    }

    pub fn validate(&self) -> Result<(), Error> {
        self.solver.validate()?;
        infopriv::solver::metric_by_name(&self.metric)?;
        infopriv::losses::loss_by_name(&self.risk.loss)?;
        infopriv::kernels::kernel_from_spec(&self.risk.kernel)?;
        if let DataSource::Csv(src) = &self.data {
            if !src.train.exists() {
                return Err(Error::Config(format!("missing file {}", src.train.display())));
            }
            if let Some(t) = src.test.as_ref().filter(|t| !t.exists()) {
                return Err(Error::Config(format!("missing file {}", t.display())));
            }
        }
        if let Some(d) = &self.certify.deltas {
            if d.iter().any(|&v| !(v > 0.0 && v <= 1.0)) {
                return Err(Error::Config("deltas must lie in (0, 1]".into()));
            }
        }
        Ok(())
    }

    pub fn deltas(&self) -> Vec<f64> {
        self.certify.deltas.clone().unwrap_or_else(|| DEFAULT_DELTAS.to_vec())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}
