//! TOML configuration files: an `[experiment]` section mirroring the
//! library's study configuration plus an `[output]` section for paths
//! and formats. Unknown keys are rejected everywhere — a misspelled
//! option in a Monte Carlo study should fail loudly, not silently run
//! with a default.

use std::fs;
use std::path::{Path, PathBuf};

use pqla_core::{Error, ExperimentConfig, Result};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

fn default_schema_version() -> u32 {
    SCHEMA_VERSION
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_formats() -> Vec<OutputFormat> {
    vec![OutputFormat::Csv, OutputFormat::Json]
}

fn default_verbosity() -> u8 {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Json,
    Svg,
}

/// `[output]` section: where files go and which formats to emit.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<OutputFormat>,
    /// 0 silences progress output; 1 prints summaries.
    #[serde(default = "default_verbosity")]
    pub verbosity: u8,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: default_dir(),
            formats: default_formats(),
            verbosity: default_verbosity(),
        }
    }
}

/// Whole config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    #[serde(default)]
    pub output: OutputConfig,
    pub experiment: ExperimentConfig,
}

impl FileConfig {
    pub fn wants(&self, format: OutputFormat) -> bool {
        self.output.formats.contains(&format)
    }
}

/// Reads and validates a config file. All failure modes — missing file,
/// malformed TOML, unknown keys, invalid experiment settings — surface
/// as configuration errors naming the offending path or key.
pub fn load_config(path: &Path) -> Result<FileConfig> {
    let text = fs::read_to_string(path).map_err(|e| {
        Error::Configuration(format!("cannot read config file {}: {e}", path.display()))
    })?;
    let config: FileConfig = toml::from_str(&text).map_err(|e| {
        Error::Configuration(format!("config file {}: {e}", path.display()))
    })?;
    if config.schema_version != SCHEMA_VERSION {
        return Err(Error::Configuration(format!(
            "config schema version {} is not supported (expected {SCHEMA_VERSION})",
            config.schema_version
        )));
    }
    config
        .experiment
        .validate()
        .map_err(|e| Error::Configuration(format!("config file {}: {e}", path.display())))?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn minimal_toml() -> String {
        r#"
[experiment]
theta_star = [0.0, 1.0]
n_grid = [100, 200]
replications = 3
master_seed = 7
estimators = ["qmle", "penalized"]
refinement = 3

[experiment.model]
p = 2
d = 2
m = 1
horizon = 1.0
theta_box = [[-5.0, 5.0], [-5.0, 5.0]]
volatility = "sin_exp"
covariate = "sine_damped"
drift = "zero"
x0 = [0.0, 0.0]
y0 = [0.0]

[experiment.penalty]
kind = "bridge"
q = 0.3
q_prime = 0.6666666666666666
weights_rule = "power_of_n"
lambda = 1.0
c0 = 10.0
cap_weights = false
"#
        .to_string()
    }

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn minimal_config_parses_with_defaults() {
        let f = write_temp(&minimal_toml());
        let cfg = load_config(f.path()).unwrap();
        assert_eq!(cfg.schema_version, SCHEMA_VERSION);
        assert_eq!(cfg.output.dir, PathBuf::from("out"));
        assert!(cfg.wants(OutputFormat::Csv));
        assert!(!cfg.wants(OutputFormat::Svg));
        assert_eq!(cfg.experiment.replications, 3);
        assert_eq!(cfg.experiment.model.p, 2);
    }

    #[test]
    fn unknown_keys_are_rejected_at_every_level() {
        let top = minimal_toml() + "\nunexpected = 1\n";
        let f = write_temp(&top);
        let err = load_config(f.path()).unwrap_err().to_string();
        assert!(err.contains("unexpected"), "{err}");

        let nested = minimal_toml().replace(
            "[experiment.model]\np = 2",
            "[experiment.model]\ntypo_key = 5\np = 2",
        );
        let f = write_temp(&nested);
        let err = load_config(f.path()).unwrap_err().to_string();
        assert!(err.contains("typo_key"), "{err}");
    }

    #[test]
    fn missing_file_error_names_the_path() {
        let err = load_config(Path::new("/definitely/not/here.toml"))
            .unwrap_err()
            .to_string();
        assert!(err.contains("/definitely/not/here.toml"));
    }

    #[test]
    fn invalid_experiment_settings_are_configuration_errors() {
        let bad = minimal_toml().replace("replications = 3", "replications = 0");
        let f = write_temp(&bad);
        match load_config(f.path()) {
            Err(Error::Configuration(msg)) => assert!(msg.contains("replication"), "{msg}"),
            other => panic!("expected configuration error, got {other:?}"),
        }
    }
}
