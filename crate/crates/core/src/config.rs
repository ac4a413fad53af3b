//! Run configuration: a TOML file with one table per concern. Unknown keys
//! are rejected everywhere.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{PartitionSpec, PnmKind, SynthKind};
use crate::error::{Error, Result};
use crate::jscc::Architecture;

/// The bundled desk-scale configuration.
pub const DESK_TOML: &str = include_str!("../configs/desk.toml");
/// The bundled 3×32×32, K = 50 configuration.
pub const REFERENCE_TOML: &str = include_str!("../configs/reference.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Fedsfr,
    /// Sparsified error-feedback SGD: every participant sends a model update
    /// and the server does no feature reconstruction.
    Dsgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub algorithm: Algorithm,
    pub data: DataConfig,
    pub partition: PartitionSpec,
    pub model: Architecture,
    pub federation: FederationConfig,
    pub schedule: ScheduleConfig,
    pub channel: ChannelSection,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataConfig {
    Synthetic {
        kind: SynthKind,
        /// Images generated; clients and the test split draw from these.
        count: usize,
    },
    Idx {
        path: PathBuf,
        /// Separate evaluation file; without it the test split comes from `path`.
        #[serde(default)]
        test_path: Option<PathBuf>,
    },
    Images {
        dir: PathBuf,
        format: ImageFormat,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageFormat {
    Pgm,
    Ppm,
}

impl From<ImageFormat> for PnmKind {
    fn from(f: ImageFormat) -> Self {
        match f {
            ImageFormat::Pgm => PnmKind::Pgm,
            ImageFormat::Ppm => PnmKind::Ppm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Grouping {
    /// Each sampled client draws a uniform capacity; the top `K_m` send models.
    #[default]
    Capacity,
    /// Uniformly random split of the sampled clients.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederationConfig {
    /// `K_m`: clients sending sparse model updates each round.
    pub model_clients: usize,
    /// `K_o`: clients sending encoder features each round.
    pub feature_clients: usize,
    /// `S_m / N`.
    pub model_budget: f64,
    /// `S_o / N`.
    pub feature_budget: f64,
    /// `T`.
    pub rounds: usize,
    /// `E_c`, in epochs over `D_k`.
    pub local_epochs: usize,
    /// `E_s`, in epochs over `D_s`.
    pub server_epochs: usize,
    pub client_batch: usize,
    pub server_batch: usize,
    #[serde(default)]
    pub grouping: Grouping,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleMode {
    /// `η(t) = η(0) · decay^⌊t / every⌋`.
    #[default]
    Staircase,
    /// `η_c = α(t)/√T`, `η_s = α(t)/T^{3/4}` with `α(t) = α₀ · decay^⌊t / every⌋`.
    Theory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    #[serde(default)]
    pub mode: ScheduleMode,
    pub eta_c0: f64,
    pub eta_s0: f64,
    #[serde(default = "default_decay")]
    pub decay: f64,
    #[serde(default = "default_decay_every")]
    pub decay_every: usize,
    #[serde(default = "default_alpha")]
    pub alpha0: f64,
}

fn default_decay() -> f64 {
    0.8
}

fn default_decay_every() -> usize {
    10
}

fn default_alpha() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    pub snr_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Noise draws per test image when evaluating.
    #[serde(default = "default_one")]
    pub eval_passes: usize,
    /// Test images used for the `‖∇F‖²` estimate.
    #[serde(default = "default_grad_budget")]
    pub grad_norm_budget: usize,
    /// Fill `wall_ms`; off keeps CSVs byte-identical across runs.
    #[serde(default)]
    pub record_wall_time: bool,
    /// Write every round's sparse updates under `<out>/updates/`.
    #[serde(default)]
    pub dump_updates: bool,
}

fn default_one() -> usize {
    1
}

fn default_grad_budget() -> usize {
    64
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            eval_passes: 1,
            grad_norm_budget: default_grad_budget(),
            record_wall_time: false,
            dump_updates: false,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn desk() -> Self {
        Self::from_toml_str(DESK_TOML).expect("bundled desk config is valid")
    }

    pub fn reference() -> Self {
        Self::from_toml_str(REFERENCE_TOML).expect("bundled reference config is valid")
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// `(K_m, K_o)` as run: DSGD folds the feature clients into the model group.
    pub fn effective_split(&self) -> (usize, usize) {
        let f = &self.federation;
        match self.algorithm {
            Algorithm::Fedsfr => (f.model_clients, f.feature_clients),
            Algorithm::Dsgd => (f.model_clients + f.feature_clients, 0),
        }
    }

    pub fn effective_server_epochs(&self) -> usize {
        match self.algorithm {
            Algorithm::Fedsfr => self.federation.server_epochs,
            Algorithm::Dsgd => 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let f = &self.federation;
        let p = &self.partition;
        let bad = |msg: String| Err(Error::Config(msg));
        self.model.validate()?;
        if let DataConfig::Synthetic { count, .. } = self.data {
            if count == 0 {
                return bad("data.count must be positive".into());
            }
            p.validate(count)?;
        }
        if p.clients == 0 {
            return bad("partition.clients must be positive".into());
        }
        if f.model_clients + f.feature_clients > p.clients {
            return bad(format!(
                "federation.model_clients ({}) + federation.feature_clients ({}) exceeds partition.clients ({})",
                f.model_clients, f.feature_clients, p.clients
            ));
        }
        if f.model_clients + f.feature_clients == 0 {
            return bad("federation.model_clients + federation.feature_clients must be positive".into());
        }
        for (name, v) in [("model_budget", f.model_budget), ("feature_budget", f.feature_budget)] {
            if !(v > 0.0 && v <= 1.0) {
                return bad(format!("federation.{name} = {v} must lie in (0, 1]"));
            }
        }
        if f.feature_budget >= f.model_budget {
            return bad(format!(
                "federation.feature_budget ({}) must be smaller than federation.model_budget ({})",
                f.feature_budget, f.model_budget
            ));
        }
        if f.feature_clients > 0 && p.public_size == 0 && self.algorithm == Algorithm::Fedsfr {
            return bad("partition.public_size must be positive when federation.feature_clients > 0".into());
        }
        for (name, v) in [
            ("federation.rounds", f.rounds),
            ("federation.local_epochs", f.local_epochs),
            ("federation.client_batch", f.client_batch),
            ("federation.server_batch", f.server_batch),
            ("output.eval_passes", self.output.eval_passes),
            ("output.grad_norm_budget", self.output.grad_norm_budget),
            ("schedule.decay_every", self.schedule.decay_every),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        let s = &self.schedule;
        for (name, v) in [
            ("schedule.eta_c0", s.eta_c0),
            ("schedule.eta_s0", s.eta_s0),
            ("schedule.alpha0", s.alpha0),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} = {v} must be finite and non-negative"));
            }
        }
        if !(s.decay > 0.0 && s.decay <= 1.0) {
            return bad(format!("schedule.decay = {} must lie in (0, 1]", s.decay));
        }
        if self.channel.snr_db.is_nan() {
            return bad("channel.snr_db must be a number".into());
        }
        if p.test_size == 0 && !matches!(self.data, DataConfig::Idx { test_path: Some(_), .. }) {
            return bad("partition.test_size must be positive unless a separate test file is given".into());
        }
        Ok(())
    }
}
