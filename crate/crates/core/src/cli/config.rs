//! Experiment configuration files (TOML, or JSON by extension).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Result};
use crate::losses::{chi_white_noise, ProxyDomain, Sampling, DEFAULT_GRID_POINTS, DEFAULT_MC_SAMPLES};
use crate::model::{Activation, NetworkParams, TaskSpec};
use crate::training::{init_network, Constraints, DaleMask, EncoderKind, InitKind, LossKind, OptimizerKind, TrainOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "custom")]
    pub experiment: String,
    pub seed: u64,
    pub network: NetworkConfig,
    pub task: TaskSpec,
    pub training: TrainingConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn custom() -> String {
    "custom".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub n: usize,
    pub channels: usize,
    pub activation: Activation,
    #[serde(default)]
    pub init: InitKind,
    #[serde(default)]
    pub encoders: EncoderKind,
}

/// Serializable form of [`LossKind`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LossConfig {
    /// White-noise input statistics of the task.
    AveragedLinear,
    Batch {
        batch: usize,
    },
    ProxyRelu,
    Proxy {
        z_max: Vec<f64>,
        #[serde(default)]
        points: Option<usize>,
        #[serde(default)]
        monte_carlo: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub loss: LossConfig,
    pub optimizer: OptimizerKind,
    pub steps: usize,
    #[serde(default)]
    pub stop_loss: Option<f64>,
    /// Fraction of inhibitory neurons; enables the sign constraint.
    #[serde(default)]
    pub dale_fraction: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalysisKind {
    GiCheck,
    Spectrum,
    Linearity,
    Populations,
    Conditions,
    ManifoldRatio,
    RMatrix,
    Selectivity,
    Rank1,
    DaleMode,
    SupportBlocks,
}

impl AnalysisKind {
    pub const ALL: [AnalysisKind; 11] = [
        AnalysisKind::GiCheck,
        AnalysisKind::Spectrum,
        AnalysisKind::Linearity,
        AnalysisKind::Populations,
        AnalysisKind::Conditions,
        AnalysisKind::ManifoldRatio,
        AnalysisKind::RMatrix,
        AnalysisKind::Selectivity,
        AnalysisKind::Rank1,
        AnalysisKind::DaleMode,
        AnalysisKind::SupportBlocks,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AnalysisKind::GiCheck => "gi_check",
            AnalysisKind::Spectrum => "spectrum",
            AnalysisKind::Linearity => "linearity",
            AnalysisKind::Populations => "populations",
            AnalysisKind::Conditions => "conditions",
            AnalysisKind::ManifoldRatio => "manifold_ratio",
            AnalysisKind::RMatrix => "r_matrix",
            AnalysisKind::Selectivity => "selectivity",
            AnalysisKind::Rank1 => "rank1",
            AnalysisKind::DaleMode => "dale_mode",
            AnalysisKind::SupportBlocks => "support_blocks",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| invalid("analysis", format!("unknown analysis `{s}`; valid: {}", Self::ALL.map(|a| a.name()).join(", "))))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    #[serde(default)]
    pub analyses: Vec<AnalysisKind>,
    /// Test sequences simulated for sample-based analyses.
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default = "default_qmax")]
    pub qmax: usize,
    #[serde(default = "default_tol")]
    pub gi_tolerance: f64,
}

fn default_batch() -> usize {
    32
}
fn default_qmax() -> usize {
    100
}
fn default_tol() -> f64 {
    1e-6
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            analyses: Vec::new(),
            batch: default_batch(),
            qmax: default_qmax(),
            gi_tolerance: default_tol(),
        }
    }
}

impl ExperimentConfig {
    /// Reads TOML, or JSON when the extension is `.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)?
        } else {
            toml::from_str(&text)?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        let net = &self.network;
        if net.n == 0 {
            return Err(invalid("network.n", "must be positive"));
        }
        if net.channels != self.task.channels() {
            return Err(invalid("network.channels", format!("{} channels but the task has {}", net.channels, self.task.channels())));
        }
        net.activation.validate()?;
        self.training.optimizer.validate()?;
        if self.training.steps == 0 {
            return Err(invalid("training.steps", "must be positive"));
        }
        match &self.training.loss {
            LossConfig::Batch { batch: 0 } => return Err(invalid("training.loss.batch", "must be positive")),
            LossConfig::Proxy { z_max, .. } if z_max.len() != net.channels => {
                return Err(invalid("training.loss.z_max", format!("needs {} entries, got {}", net.channels, z_max.len())));
            }
            LossConfig::Proxy { points: Some(0), .. } => return Err(invalid("training.loss.points", "must be positive")),
            _ => {}
        }
        if let Some(f) = self.training.dale_fraction {
            if !(0.0..=1.0).contains(&f) {
                return Err(invalid("training.dale_fraction", format!("must lie in [0, 1], got {f}")));
            }
        }
        if self.analysis.qmax == 0 {
            return Err(invalid("analysis.qmax", "must be positive"));
        }
        if self.analysis.batch == 0 {
            return Err(invalid("analysis.batch", "must be positive"));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }

    pub fn loss_kind(&self) -> Result<LossKind> {
        Ok(match &self.training.loss {
            LossConfig::AveragedLinear => {
                let var = match self.task.input {
                    crate::model::InputKind::GaussianWhite { std } => std * std,
                    _ => return Err(invalid("training.loss", "averaged_linear needs white-noise inputs")),
                };
                LossKind::AveragedLinear {
                    chi: chi_white_noise(self.task.t_len, var)?,
                }
            }
            LossConfig::Batch { batch } => LossKind::Batch { batch: *batch },
            LossConfig::ProxyRelu => LossKind::ProxyRelu,
            LossConfig::Proxy {
                z_max,
                points,
                monte_carlo,
            } => {
                let domain = if *monte_carlo {
                    ProxyDomain::monte_carlo(z_max.clone(), points.unwrap_or(DEFAULT_MC_SAMPLES), self.seed)
                } else {
                    ProxyDomain {
                        z_max: z_max.clone(),
                        samples_per_eval: points.unwrap_or(DEFAULT_GRID_POINTS),
                        sampling: Sampling::Grid,
                    }
                };
                LossKind::Proxy { domain }
            }
        })
    }

    pub fn dale_mask(&self) -> Result<Option<DaleMask>> {
        self.training
            .dale_fraction
            .map(|f| DaleMask::random(self.network.n, f, self.seed))
            .transpose()
    }

    /// Initial network, with the sign mask imposed when one is configured.
    pub fn initial_network(&self) -> Result<NetworkParams> {
        let net = &self.network;
        let mut p = init_network(net.n, net.channels, net.activation, net.init, net.encoders, self.seed)?;
        if let Some(mask) = self.dale_mask()? {
            let w = mask.impose(p.w());
            p.set_w(w)?;
        }
        Ok(p)
    }

    pub fn train_options(&self) -> TrainOptions {
        let opts = TrainOptions::new(self.training.steps, self.seed);
        match self.training.stop_loss {
            Some(s) => opts.with_stop_loss(s),
            None => opts,
        }
    }

    pub fn constraints(&self) -> Result<Constraints> {
        Ok(Constraints { dale: self.dale_mask()? })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const LINEAR_T3: &str = r#"
seed = 7

[network]
n = 40
channels = 1
activation = { kind = "linear" }

[task]
gammas = [0.9]
scales = [2.0]
t = 3

[training]
loss = { kind = "averaged_linear" }
optimizer = { kind = "gd", lr = 0.01 }
steps = 4000
stop_loss = 1e-26

[analysis]
analyses = ["gi_check", "spectrum"]
"#;

    #[test]
    fn parses_toml_and_hash_is_stable() {
        let cfg: ExperimentConfig = toml::from_str(LINEAR_T3).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.experiment, "custom");
        assert_eq!(cfg.network.init, InitKind::Zero);
        assert_eq!(cfg.analysis.qmax, 100);
        assert_eq!(cfg.hash(), cfg.clone().hash());
        let mut other = cfg.clone();
        other.seed = 8;
        assert_ne!(cfg.hash(), other.hash());
        let json = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn invalid_gamma_names_the_field() {
        let text = LINEAR_T3.replace("gammas = [0.9]", "gammas = [1.5]");
        let cfg: ExperimentConfig = toml::from_str(&text).unwrap();
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("gamma"), "{msg}");
    }

    #[test]
    fn channel_mismatch_and_unknown_keys_rejected() {
        let text = LINEAR_T3.replace("channels = 1", "channels = 2");
        let cfg: ExperimentConfig = toml::from_str(&text).unwrap();
        assert!(cfg.validate().unwrap_err().to_string().contains("network.channels"));
        let text = LINEAR_T3.replace("n = 40", "n = 40\nsize = 3");
        assert!(toml::from_str::<ExperimentConfig>(&text).is_err());
        assert!(AnalysisKind::parse("nope").is_err());
        assert_eq!(AnalysisKind::parse("r_matrix").unwrap(), AnalysisKind::RMatrix);
    }
}
