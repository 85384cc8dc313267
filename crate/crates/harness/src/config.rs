//! Experiment configuration: TOML schema, defaults, validation and hashing.
//!
//! A minimal config names a problem and an optimizer kind:
//!
//! ```toml
//! [problem]
//! kind = "quadratic"
//! dim = 10
//!
//! [optimizer]
//! kind = "vr_sgd"
//! ```
//!
//! Unknown keys anywhere in the file are rejected, all of them at once.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use varreg_core::optim::OptimizerConfig;
use varreg_core::problems::{Activation, NoiseSpec};

use crate::error::{HarnessError, Result};

/// Mini-batch sampling scheme, folded into the config hash.
pub const SAMPLING_SCHEME: &str = "per-epoch shuffle without replacement; a singleton tail joins the previous batch";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalize {
    #[default]
    None,
    UnitL2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    /// Two Gaussian classes separated along the first axis.
    Blobs {
        rows: usize,
        width: usize,
        #[serde(default = "default_separation")]
        separation: f64,
        #[serde(default)]
        seed: u64,
    },
    /// Linear-model regression data.
    Linear {
        rows: usize,
        width: usize,
        #[serde(default = "default_noise_sd")]
        noise_sd: f64,
        #[serde(default)]
        seed: u64,
    },
    Csv {
        path: PathBuf,
        label_column: String,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        limit: Option<usize>,
        #[serde(default)]
        normalize: Normalize,
    },
}

fn default_separation() -> f64 {
    2.0
}

fn default_noise_sd() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSpec {
    pub source: DataSource,
    /// Fraction of rows held out for evaluation.
    #[serde(default)]
    pub eval_fraction: f64,
    /// Seed of the permutation that decides the held-out rows.
    #[serde(default)]
    pub split_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemSpec {
    Quadratic {
        dim: usize,
        #[serde(default = "one")]
        curvature: f64,
        /// Every coordinate of the starting point.
        #[serde(default = "one")]
        start: f64,
    },
    LinearRegression {
        data: DataSpec,
        #[serde(default)]
        ridge: f64,
    },
    LogisticRegression {
        data: DataSpec,
    },
    Mlp {
        data: DataSpec,
        hidden: Vec<usize>,
        #[serde(default)]
        activation: Activation,
        #[serde(default)]
        init_seed: u64,
    },
}

fn one() -> f64 {
    1.0
}

impl ProblemSpec {
    pub fn data(&self) -> Option<&DataSpec> {
        match self {
            ProblemSpec::Quadratic { .. } => None,
            ProblemSpec::LinearRegression { data, .. } | ProblemSpec::LogisticRegression { data } | ProblemSpec::Mlp { data, .. } => {
                Some(data)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsSpec {
    /// Record a row every this many steps.
    pub every: u64,
    /// Evaluate on the held-out split every this many epochs.
    pub eval_every_epochs: u64,
    /// Fill the wall-time column; off keeps records bit-reproducible.
    pub wall_time: bool,
}

impl Default for MetricsSpec {
    fn default() -> Self {
        MetricsSpec { every: 1, eval_every_epochs: 1, wall_time: false }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputSpec {
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    pub problem: ProblemSpec,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub noise: Option<NoiseSpec>,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Step budget; ignored when `epochs` is set.
    #[serde(default = "default_steps")]
    pub steps: u64,
    #[serde(default)]
    pub epochs: Option<u64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Stop once the loss improves by less than 1e-8 (relative) over 50 steps.
    #[serde(default)]
    pub stop_on_convergence: bool,
    #[serde(default)]
    pub metrics: MetricsSpec,
    #[serde(default)]
    pub output: OutputSpec,
    /// Directory that relative data paths are resolved against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

fn default_batch() -> usize {
    100
}

fn default_steps() -> u64 {
    1000
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn collect_keys(value: &toml::Value, prefix: &str, out: &mut BTreeSet<String>) {
    if let toml::Value::Table(table) = value {
        for (k, v) in table {
            let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            collect_keys(v, &path, out);
            out.insert(path);
        }
    }
}

impl ExperimentConfig {
    /// Parses, rejects unknown keys and validates.
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        let parse_err = |e: toml::de::Error| HarnessError::Parse { path: origin.to_path_buf(), message: e.to_string() };
        let raw: toml::Table = toml::from_str(text).map_err(parse_err)?;
        let config: ExperimentConfig = toml::from_str(text).map_err(parse_err)?;
        let known = toml::Value::try_from(&config)
            .map_err(|e| HarnessError::Parse { path: origin.to_path_buf(), message: format!("cannot re-serialize configuration: {e}") })?;
        let mut given = BTreeSet::new();
        collect_keys(&toml::Value::Table(raw), "", &mut given);
        let mut accepted = BTreeSet::new();
        collect_keys(&known, "", &mut accepted);
        let unknown: Vec<String> = given.difference(&accepted).cloned().collect();
        if !unknown.is_empty() {
            return Err(HarnessError::UnknownKeys(unknown));
        }
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| HarnessError::invalid("config", format!("cannot serialize: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, msg: String| Err(HarnessError::invalid(field, msg));
        if self.batch_size == 0 {
            return fail("batch_size", "must be >= 1".into());
        }
        if self.steps == 0 {
            return fail("steps", "must be >= 1".into());
        }
        if self.epochs == Some(0) {
            return fail("epochs", "must be >= 1".into());
        }
        if self.seeds.is_empty() {
            return fail("seeds", "at least one seed is required".into());
        }
        let distinct: BTreeSet<u64> = self.seeds.iter().copied().collect();
        if distinct.len() != self.seeds.len() {
            return fail("seeds", "seeds must be distinct".into());
        }
        if self.metrics.every == 0 {
            return fail("metrics.every", "must be >= 1".into());
        }
        if self.metrics.eval_every_epochs == 0 {
            return fail("metrics.eval_every_epochs", "must be >= 1".into());
        }
        self.optimizer.validate().map_err(|e| HarnessError::invalid("optimizer", e.to_string()))?;
        if let Some(noise) = &self.noise {
            noise.validate().map_err(|e| HarnessError::invalid("noise.schedule", e.to_string()))?;
        }
        match &self.problem {
            ProblemSpec::Quadratic { dim, curvature, start } => {
                if *dim == 0 {
                    return fail("problem.dim", "must be >= 1".into());
                }
                if !(curvature.is_finite() && *curvature > 0.0) {
                    return fail("problem.curvature", format!("must be finite and > 0, got {curvature}"));
                }
                if !start.is_finite() {
                    return fail("problem.start", format!("must be finite, got {start}"));
                }
            }
            ProblemSpec::LinearRegression { ridge, .. } => {
                if !(ridge.is_finite() && *ridge >= 0.0) {
                    return fail("problem.ridge", format!("must be finite and >= 0, got {ridge}"));
                }
            }
            ProblemSpec::LogisticRegression { .. } => {}
            ProblemSpec::Mlp { hidden, .. } => {
                if hidden.is_empty() || hidden.contains(&0) {
                    return fail("problem.hidden", format!("needs at least one positive width, got {hidden:?}"));
                }
            }
        }
        if let Some(data) = self.problem.data() {
            if !(0.0..1.0).contains(&data.eval_fraction) {
                return fail("problem.data.eval_fraction", format!("must lie in [0, 1), got {}", data.eval_fraction));
            }
            match &data.source {
                DataSource::Blobs { rows, width, separation, .. } => {
                    if *rows < 2 || *width == 0 {
                        return fail("problem.data.source", format!("blobs need rows >= 2 and width >= 1, got {rows}x{width}"));
                    }
                    if !separation.is_finite() {
                        return fail("problem.data.source.separation", "must be finite".into());
                    }
                }
                DataSource::Linear { rows, width, noise_sd, .. } => {
                    if *rows == 0 || *width == 0 {
                        return fail("problem.data.source", format!("linear data needs rows and width >= 1, got {rows}x{width}"));
                    }
                    if !(noise_sd.is_finite() && *noise_sd >= 0.0) {
                        return fail("problem.data.source.noise_sd", format!("must be finite and >= 0, got {noise_sd}"));
                    }
                }
                DataSource::Csv { label_column, .. } => {
                    if label_column.is_empty() {
                        return fail("problem.data.source.label_column", "must name a column".into());
                    }
                }
                DataSource::Idx { limit, .. } => {
                    if *limit == Some(0) {
                        return fail("problem.data.source.limit", "must be >= 1".into());
                    }
                }
            }
        }
        Ok(())
    }

    /// Resolves a data path against the config file's directory.
    pub fn resolve(&self, path: &Path) -> PathBuf {
        match &self.base_dir {
            Some(base) if path.is_relative() => base.join(path),
            _ => path.to_path_buf(),
        }
    }

    /// SHA-256 of the canonical JSON form (sorted keys) of everything that
    /// determines a single seed's trajectory. Seeds and the output directory
    /// are left out.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes to JSON");
        if let serde_json::Value::Object(map) = &mut value {
            map.remove("seeds");
            map.remove("output");
            map.insert("sampling".into(), serde_json::Value::String(SAMPLING_SCHEME.into()));
        }
        let canonical = serde_json::to_string(&value).expect("JSON value serializes");
        Sha256::digest(canonical.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Reads and validates a config file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let mut config = ExperimentConfig::from_toml_str(&text, path)?;
    config.base_dir = path.parent().map(Path::to_path_buf);
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use varreg_core::optim::OptimizerKind;
    use varreg_core::stats::NormalizationMode;

    fn parse(text: &str) -> Result<ExperimentConfig> {
        ExperimentConfig::from_toml_str(text, Path::new("test.toml"))
    }

    const MINIMAL: &str = "[problem]\nkind = \"quadratic\"\ndim = 3\n\n[optimizer]\nkind = \"vr_sgd\"\n";

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse(MINIMAL).unwrap();
        assert_eq!(c.optimizer.kind, OptimizerKind::VrSgd);
        assert_eq!(c.optimizer.impact, 2.0);
        assert_eq!(c.optimizer.lr, 0.01);
        assert_eq!(c.optimizer.vr_mode, NormalizationMode::MeanNormalized);
        assert_eq!((c.batch_size, c.steps, c.seeds.clone()), (100, 1000, vec![0]));
        assert_eq!(c.problem, ProblemSpec::Quadratic { dim: 3, curvature: 1.0, start: 1.0 });
    }

    #[test]
    fn zero_batch_names_the_field() {
        let err = parse(&format!("batch_size = 0\n{MINIMAL}")).unwrap_err();
        assert!(err.to_string().starts_with("batch_size"), "{err}");
    }

    #[test]
    fn invalid_nested_values_name_their_path() {
        let err = parse("[problem]\nkind = \"quadratic\"\ndim = 0\n").unwrap_err();
        assert!(err.to_string().starts_with("problem.dim"), "{err}");
        let err = parse(&format!("{MINIMAL}lr = -1.0\n")).unwrap_err();
        assert!(err.to_string().contains("optimizer") && err.to_string().contains("lr"), "{err}");
        let err = parse(&format!("seeds = [1, 1]\n{MINIMAL}")).unwrap_err();
        assert!(err.to_string().starts_with("seeds"), "{err}");
    }

    #[test]
    fn unknown_keys_are_all_listed() {
        let text =
            format!("bogus = 1\n{MINIMAL}betta1 = 0.9\n\n[noise]\nschedule = {{ kind = \"constant\", variance = 1.0, extra = 2 }}\n");
        match parse(&text).unwrap_err() {
            HarnessError::UnknownKeys(keys) => {
                assert_eq!(keys, vec!["bogus", "noise.schedule.extra", "optimizer.betta1"]);
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn round_trip_preserves_hash() {
        let text = r#"
name = "rt"
batch_size = 10
steps = 50
seeds = [3, 1]

[problem]
kind = "logistic_regression"
[problem.data]
eval_fraction = 0.25
[problem.data.source]
kind = "blobs"
rows = 40
width = 3

[optimizer]
kind = "vr_adam"
impact = 1.5

[noise]
schedule = { kind = "two_level", low = 0.1, high = 10.0, block = 5 }
scaling = "relative"
"#;
        let a = parse(text).unwrap();
        let b = parse(&a.to_toml_string().unwrap()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.hash(), b.hash());
    }

    #[test]
    fn hash_ignores_key_order_but_not_values() {
        let a = parse("steps = 5\nbatch_size = 2\n[problem]\nkind = \"quadratic\"\ndim = 2\n").unwrap();
        let b = parse("batch_size = 2\nsteps = 5\n[problem]\ndim = 2\nkind = \"quadratic\"\n").unwrap();
        let c = parse("batch_size = 2\nsteps = 6\n[problem]\ndim = 2\nkind = \"quadratic\"\n").unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn malformed_toml_is_a_parse_error() {
        assert!(matches!(parse("[problem"), Err(HarnessError::Parse { .. })));
        assert!(matches!(parse("[problem]\nkind = \"cube\"\n"), Err(HarnessError::Parse { .. })));
    }
}
