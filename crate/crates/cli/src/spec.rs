//! TOML experiment description.

use std::path::{Path, PathBuf};

use collapse_lab::data_model::{DataModelConfig, WordLaw};
use collapse_lab::network::{NetworkKind, TRAIN_EPSILON};
use collapse_lab::theory::TheoryParams;
use collapse_lab::trainer::{TrainConfig, DEFAULT_N_TEST};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    /// Master seed; every random stream is derived from it.
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub data: DataSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub theory: TheorySection,
    #[serde(default)]
    pub verify: VerifySection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub n_c: usize,
    pub s_c: usize,
    pub seq_len: usize,
    pub n_classes: usize,
    #[serde(default = "default_law")]
    pub distribution: WordLaw,
    /// Draw distinct latent variables (otherwise i.i.d. with repeats).
    #[serde(default = "yes")]
    pub distinct_latents: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub d: usize,
    pub n_spl: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub max_epochs: usize,
    pub plateau_tol: f64,
    pub n_test: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            d: t.d,
            n_spl: t.n_spl,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            lambda: t.lambda,
            max_epochs: t.max_epochs,
            plateau_tol: t.plateau_tol,
            n_test: DEFAULT_N_TEST,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkChoice {
    Plain,
    LayerNorm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    pub kind: NetworkChoice,
    pub epsilon: f64,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self {
            kind: NetworkChoice::Plain,
            epsilon: TRAIN_EPSILON,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TheorySection {
    pub minimize_h: bool,
    pub minimize_hstar: bool,
    pub type3: bool,
    /// Absolute tolerance on the mean norm when comparing a trained run.
    pub norm_tolerance: f64,
}

impl Default for TheorySection {
    fn default() -> Self {
        Self {
            minimize_h: true,
            minimize_hstar: true,
            type3: false,
            norm_tolerance: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    /// Random instances for the backward-pass check.
    pub fd_instances: usize,
    pub fd_step: f64,
    pub fd_tolerance: f64,
    /// Embedding width of the random gradient-check instances.
    pub fd_width: usize,
    pub closed_form_points: usize,
    pub closed_form_tolerance: f64,
    pub criticality_tolerance: f64,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            fd_instances: 20,
            fd_step: 1e-5,
            fd_tolerance: 1e-6,
            fd_width: 5,
            closed_form_points: 20,
            closed_form_tolerance: 1e-10,
            criticality_tolerance: 1e-8,
        }
    }
}

fn default_law() -> WordLaw {
    WordLaw::Uniform
}

fn yes() -> bool {
    true
}

impl ExperimentSpec {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let spec: Self = toml::from_str(text).map_err(|e| CliError::Input(format!("bad config: {e}")))?;
        spec.data_config()?;
        spec.train_config().validate().map_err(CliError::from_core)?;
        spec.kind()?;
        Ok(spec)
    }

    pub fn data_config(&self) -> Result<DataModelConfig, CliError> {
        let d = &self.data;
        DataModelConfig::with_law(d.n_c, d.s_c, d.seq_len, d.n_classes, &d.distribution, self.train.lambda)
            .map_err(CliError::from_core)
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            d: t.d,
            n_spl: t.n_spl,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            lambda: t.lambda,
            max_epochs: t.max_epochs,
            plateau_tol: t.plateau_tol,
            seed: self.seed,
        }
    }

    pub fn kind(&self) -> Result<NetworkKind, CliError> {
        match self.network.kind {
            NetworkChoice::Plain => Ok(NetworkKind::Plain),
            NetworkChoice::LayerNorm => NetworkKind::layer_norm(self.network.epsilon).map_err(CliError::from_core),
        }
    }

    pub fn theory_params(&self) -> Result<TheoryParams, CliError> {
        TheoryParams::new(self.data_config()?, self.train.d).map_err(CliError::from_core)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "seed = 3\n[data]\nn_c = 2\ns_c = 2\nseq_len = 2\nn_classes = 4\n";

    #[test]
    fn defaults_fill_in() {
        let s = ExperimentSpec::parse(MINIMAL).unwrap();
        assert_eq!(s.train.d, 100);
        assert_eq!(s.data.distribution, WordLaw::Uniform);
        assert!(s.data.distinct_latents);
        assert_eq!(s.train_config().seed, 3);
    }

    #[test]
    fn zipf_and_layer_norm() {
        let text = format!("{MINIMAL}distribution = \"zipf\"\n[network]\nkind = \"layer_norm\"\n");
        let s = ExperimentSpec::parse(&text).unwrap();
        assert_eq!(s.data.distribution, WordLaw::Zipf);
        assert!(s.kind().unwrap().is_layer_norm());
    }

    #[test]
    fn seed_is_required() {
        assert!(matches!(
            ExperimentSpec::parse("[data]\nn_c = 2\ns_c = 2\nseq_len = 2\nn_classes = 4\n"),
            Err(CliError::Input(_))
        ));
    }

    #[test]
    fn invalid_values_rejected() {
        let bad = MINIMAL.replace("n_c = 2", "n_c = 1");
        assert!(matches!(ExperimentSpec::parse(&bad), Err(CliError::Input(_))));
        let bad = format!("{MINIMAL}[train]\nbatch_size = 0\n");
        assert!(matches!(ExperimentSpec::parse(&bad), Err(CliError::Input(_))));
        let bad = format!("{MINIMAL}[train]\nbogus = 1\n");
        assert!(matches!(ExperimentSpec::parse(&bad), Err(CliError::Input(_))));
    }
}
