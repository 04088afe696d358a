//! Experiment configuration: defaults, a flat key=value file, and
//! command-line overrides, merged in that order (flags win).

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

/// Iteration family selected for a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodChoice {
    Dbn,
    Dbgn,
    Bfgs,
    Adbn,
}

impl MethodChoice {
    pub fn parse(s: &str) -> Result<Self, ConfigError> {
        match s {
            "dbn" => Ok(MethodChoice::Dbn),
            "dbgn" => Ok(MethodChoice::Dbgn),
            "bfgs" => Ok(MethodChoice::Bfgs),
            "adbn" => Ok(MethodChoice::Adbn),
            other => Err(ConfigError::new(
                "method",
                format!("unknown method `{other}`; expected dbn, dbgn, bfgs, or adbn"),
            )),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            MethodChoice::Dbn => "dbn",
            MethodChoice::Dbgn => "dbgn",
            MethodChoice::Bfgs => "bfgs",
            MethodChoice::Adbn => "adbn",
        }
    }
}

/// A configuration problem, always tied to the field that caused it.
#[derive(Debug, Clone)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: &str, message: impl Into<String>) -> Self {
        ConfigError {
            field: field.to_string(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config field `{}`: {}", self.field, self.message)
    }
}

impl std::error::Error for ConfigError {}

/// Fully resolved settings for one experiment run.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    /// Problem id: `ls_sqrt`, `dr_exp_bump`, `dr_singular` (with `nu`),
    /// or `custom` (coefficients from `custom-*` keys).
    pub problem: String,
    /// Perturbation parameter of the singular family.
    pub nu: Option<f64>,
    pub n: usize,
    pub method: MethodChoice,
    pub max_iters: usize,
    pub gamma: f64,
    pub eps_stop: f64,
    pub quad_order: usize,
    pub seed: u64,
    pub out: PathBuf,
    /// `custom-*` keys from the config file, stripped of the prefix.
    pub custom: BTreeMap<String, String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            problem: "ls_sqrt".to_string(),
            nu: None,
            n: 20,
            method: MethodChoice::Dbn,
            max_iters: 1000,
            gamma: 1e4,
            eps_stop: 0.05,
            quad_order: 5,
            seed: 0,
            out: PathBuf::from("freeknot-out"),
            custom: BTreeMap::new(),
        }
    }
}

/// Unmerged settings from one source (file or flags). `None` means
/// "not given here".
#[derive(Debug, Clone, Default)]
pub struct ConfigPatch {
    pub problem: Option<String>,
    pub nu: Option<f64>,
    pub n: Option<usize>,
    pub method: Option<MethodChoice>,
    pub max_iters: Option<usize>,
    pub gamma: Option<f64>,
    pub eps_stop: Option<f64>,
    pub quad_order: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub custom: BTreeMap<String, String>,
}

impl ExperimentConfig {
    pub fn apply(&mut self, patch: &ConfigPatch) {
        if let Some(v) = &patch.problem {
            self.problem = v.clone();
        }
        if let Some(v) = patch.nu {
            self.nu = Some(v);
        }
        if let Some(v) = patch.n {
            self.n = v;
        }
        if let Some(v) = patch.method {
            self.method = v;
        }
        if let Some(v) = patch.max_iters {
            self.max_iters = v;
        }
        if let Some(v) = patch.gamma {
            self.gamma = v;
        }
        if let Some(v) = patch.eps_stop {
            self.eps_stop = v;
        }
        if let Some(v) = patch.quad_order {
            self.quad_order = v;
        }
        if let Some(v) = patch.seed {
            self.seed = v;
        }
        if let Some(v) = &patch.out {
            self.out = v.clone();
        }
        for (k, v) in &patch.custom {
            self.custom.insert(k.clone(), v.clone());
        }
    }

    /// Splits a `dr_singular:NU` suffix into the id and the `nu` field,
    /// then checks cross-field invariants.
    pub fn finish(&mut self) -> Result<(), ConfigError> {
        if let Some(rest) = self.problem.strip_prefix("dr_singular:") {
            let nu: f64 = rest.parse().map_err(|_| {
                ConfigError::new("problem", format!("cannot parse `{rest}` as nu"))
            })?;
            self.problem = "dr_singular".to_string();
            self.nu = Some(nu);
        }
        match self.problem.as_str() {
            "ls_sqrt" | "dr_exp_bump" | "custom" => {}
            "dr_singular" => {
                let nu = self.nu.ok_or_else(|| {
                    ConfigError::new(
                        "nu",
                        "the singular family needs nu (key `nu` or `--problem dr_singular:NU`)",
                    )
                })?;
                if !(nu > 0.0) {
                    return Err(ConfigError::new("nu", format!("nu must be positive, got {nu}")));
                }
            }
            other => {
                return Err(ConfigError::new(
                    "problem",
                    format!(
                        "unknown problem `{other}`; expected ls_sqrt, dr_exp_bump, \
                         dr_singular, or custom"
                    ),
                ));
            }
        }
        if self.n == 0 {
            return Err(ConfigError::new("n", "need at least one neuron"));
        }
        if self.max_iters == 0 {
            return Err(ConfigError::new("iters", "need at least one iteration"));
        }
        if !(self.gamma > 0.0) {
            return Err(ConfigError::new(
                "gamma",
                format!("penalty must be positive, got {}", self.gamma),
            ));
        }
        if !(self.eps_stop > 0.0) {
            return Err(ConfigError::new(
                "eps-stop",
                format!("stopping tolerance must be positive, got {}", self.eps_stop),
            ));
        }
        if self.quad_order == 0 || self.quad_order > 16 {
            return Err(ConfigError::new(
                "quad-order",
                format!("quadrature order must be in 1..=16, got {}", self.quad_order),
            ));
        }
        Ok(())
    }
}

fn parse_num<T: std::str::FromStr>(field: &str, raw: &str) -> Result<T, ConfigError> {
    raw.parse().map_err(|_| {
        ConfigError::new(field, format!("cannot parse `{raw}`"))
    })
}

/// Parses the flat key=value format: one pair per line, `#` comments,
/// blank lines ignored, underscores in keys read as hyphens.
pub fn parse_config_text(text: &str) -> Result<ConfigPatch, ConfigError> {
    let mut patch = ConfigPatch::default();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            ConfigError::new(
                "config",
                format!("line {}: expected key=value, got `{line}`", lineno + 1),
            )
        })?;
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        match key.as_str() {
            "problem" => patch.problem = Some(value.to_string()),
            "nu" => patch.nu = Some(parse_num("nu", value)?),
            "n" => patch.n = Some(parse_num("n", value)?),
            "method" => patch.method = Some(MethodChoice::parse(value)?),
            "iters" => patch.max_iters = Some(parse_num("iters", value)?),
            "gamma" => patch.gamma = Some(parse_num("gamma", value)?),
            "eps-stop" => patch.eps_stop = Some(parse_num("eps-stop", value)?),
            "quad-order" => patch.quad_order = Some(parse_num("quad-order", value)?),
            "seed" => patch.seed = Some(parse_num("seed", value)?),
            "out" => patch.out = Some(PathBuf::from(value)),
            other => {
                if let Some(suffix) = other.strip_prefix("custom-") {
                    patch.custom.insert(suffix.to_string(), value.to_string());
                } else {
                    return Err(ConfigError::new(
                        other,
                        "unknown config key (custom problem keys start with `custom-`)",
                    ));
                }
            }
        }
    }
    Ok(patch)
}

pub fn load_config_file(path: &Path) -> Result<ConfigPatch, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        ConfigError::new("config", format!("cannot read {}: {e}", path.display()))
    })?;
    parse_config_text(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_then_file_then_flags() {
        let mut cfg = ExperimentConfig::default();
        let file = parse_config_text("problem = dr_exp_bump\nn = 22\ngamma = 2e4\n").unwrap();
        cfg.apply(&file);
        let flags = ConfigPatch {
            n: Some(30),
            ..ConfigPatch::default()
        };
        cfg.apply(&flags);
        cfg.finish().unwrap();
        assert_eq!(cfg.problem, "dr_exp_bump");
        assert_eq!(cfg.n, 30);
        assert_eq!(cfg.gamma, 2e4);
        assert_eq!(cfg.eps_stop, 0.05);
    }

    #[test]
    fn singular_suffix_sets_nu() {
        let mut cfg = ExperimentConfig {
            problem: "dr_singular:1e-4".to_string(),
            ..ExperimentConfig::default()
        };
        cfg.finish().unwrap();
        assert_eq!(cfg.problem, "dr_singular");
        assert_eq!(cfg.nu, Some(1e-4));
    }

    #[test]
    fn singular_without_nu_names_the_field() {
        let mut cfg = ExperimentConfig {
            problem: "dr_singular".to_string(),
            ..ExperimentConfig::default()
        };
        let err = cfg.finish().unwrap_err();
        assert_eq!(err.field, "nu");
    }

    #[test]
    fn unknown_key_is_rejected_by_name() {
        let err = parse_config_text("knots = 7\n").unwrap_err();
        assert_eq!(err.field, "knots");
    }

    #[test]
    fn underscores_read_as_hyphens_and_comments_skip() {
        let patch = parse_config_text("# run settings\nquad_order = 7\n\neps_stop = 0.01\n").unwrap();
        assert_eq!(patch.quad_order, Some(7));
        assert_eq!(patch.eps_stop, Some(0.01));
    }

    #[test]
    fn custom_namespace_collects() {
        let patch = parse_config_text("custom-a = 2.0\ncustom-f-poly = 0,1,3\n").unwrap();
        assert_eq!(patch.custom.get("a").unwrap(), "2.0");
        assert_eq!(patch.custom.get("f-poly").unwrap(), "0,1,3");
    }

    #[test]
    fn bad_numbers_name_their_field() {
        let err = parse_config_text("gamma = big\n").unwrap_err();
        assert_eq!(err.field, "gamma");
        let mut cfg = ExperimentConfig {
            gamma: -1.0,
            ..ExperimentConfig::default()
        };
        assert_eq!(cfg.finish().unwrap_err().field, "gamma");
    }
}
