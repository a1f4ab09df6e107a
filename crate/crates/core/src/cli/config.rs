use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::DatasetDescriptor;
use crate::engine::{KdConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::netir::{ArchitectureSpec, Family, Scale, StageId, TensorShape};
use crate::passes::ThinRule;
use crate::pipeline::{default_ladder, LatencyModel, PipelineConfig, Rung};

fn d_input() -> usize {
    32
}
fn d_classes() -> usize {
    100
}
fn d_channels() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSection {
    pub family: Family,
    #[serde(default = "d_input")]
    pub input: usize,
    #[serde(default = "d_channels")]
    pub channels: usize,
    #[serde(default = "d_classes")]
    pub classes: usize,
    #[serde(default)]
    pub alpha: Scale,
    #[serde(default)]
    pub rho: Scale,
    #[serde(default)]
    pub strip_residuals: bool,
}

impl ArchSection {
    pub fn new(family: Family) -> Self {
        Self {
            family,
            input: d_input(),
            channels: d_channels(),
            classes: d_classes(),
            alpha: Scale::ONE,
            rho: Scale::ONE,
            strip_residuals: false,
        }
    }

    pub fn spec(&self) -> Result<ArchitectureSpec> {
        Ok(ArchitectureSpec {
            family: self.family,
            input_shape: TensorShape::new(self.channels, self.input, self.input)?,
            num_classes: self.classes,
            strip_residuals: self.strip_residuals,
            alpha: self.alpha,
            rho: self.rho,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSection {
    #[serde(default)]
    pub w: Option<f64>,
    #[serde(default)]
    pub ladder: Option<Vec<Rung>>,
    #[serde(default)]
    pub parity: Option<ThinRule>,
    #[serde(default)]
    pub stages_override: Option<Vec<StageId>>,
    #[serde(default)]
    pub keep_going: bool,
    #[serde(default)]
    pub latency: Option<LatencyModel>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IoSection {
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub dataset: Option<DatasetDescriptor>,
    /// Stage measurements, `stage,relus,acc_wo_kd,acc_w_kd`.
    #[serde(default)]
    pub from_csv: Option<PathBuf>,
    /// Externally measured candidates replacing training in `reduce`.
    #[serde(default)]
    pub accuracy_from_csv: Option<PathBuf>,
    #[serde(default)]
    pub checkpoint_in: Option<PathBuf>,
    #[serde(default)]
    pub checkpoint_out: Option<PathBuf>,
    #[serde(default)]
    pub teacher: Option<PathBuf>,
}

/// The JSON config file; every section is optional and flags override it.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub arch: Option<ArchSection>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub kd: KdConfig,
    #[serde(default)]
    pub pipeline: PipelineSection,
    #[serde(default)]
    pub io: IoSection,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn arch(&self) -> Result<&ArchSection> {
        self.arch.as_ref().ok_or_else(|| Error::Config("no architecture given (--arch or `arch` section)".into()))
    }

    pub fn out_dir(&self) -> PathBuf {
        self.io.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    /// The dataset descriptor, defaulting to synthetic blobs matched to the architecture.
    pub fn dataset(&self) -> Result<DatasetDescriptor> {
        match &self.io.dataset {
            Some(d) => Ok(d.clone()),
            None => {
                let a = self.arch()?;
                Ok(DatasetDescriptor::synthetic(a.classes, a.input, 2000, 500, self.seed))
            }
        }
    }

    pub fn pipeline_config(&self) -> Result<PipelineConfig> {
        let mut train = self.train.clone();
        train.seed = self.seed;
        let mut cfg = PipelineConfig::new(self.arch()?.spec()?, self.dataset()?, train);
        cfg.kd = self.kd;
        if let Some(w) = self.pipeline.w {
            cfg.w = w;
        }
        cfg.ladder = self.pipeline.ladder.clone().unwrap_or_else(default_ladder);
        cfg.parity = self.pipeline.parity;
        cfg.stages_override = self.pipeline.stages_override.clone();
        cfg.threads = self.threads;
        cfg.keep_going = self.pipeline.keep_going;
        cfg.latency = self.pipeline.latency.clone();
        Ok(cfg)
    }
}
