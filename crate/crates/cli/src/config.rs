//! JSON model and scenario configuration.
//!
//! A model config names the response column, an optional original range
//! `(a, b)` for the response, and the columns of each submodel:
//!
//! ```json
//! {
//!   "response": "nonbelief",
//!   "range": [0, 100],
//!   "mean": {
//!     "columns": ["iq_c", "log_gdp"],
//!     "derived": [{ "square": "iq_c" }],
//!     "link": "ao-asymmetric"
//!   },
//!   "dispersion": { "columns": ["urban"], "link": "logit" },
//!   "fit": { "max_iterations": 500 }
//! }
//! ```
//!
//! An intercept is included unless `"intercept": false`. `lambda` is
//! `"free"` (the default for shape families) or `{ "fixed": value }`.

use std::path::Path;

use anyhow::{bail, Context, Result};
use betalink::{FitOptions, LambdaMode, LinkFamily};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub response: String,
    /// Observed range of the response; values are mapped to `(y - a)/(b - a)`.
    #[serde(default)]
    pub range: Option<(f64, f64)>,
    pub mean: Submodel,
    pub dispersion: Submodel,
    #[serde(default)]
    pub fit: FitOptions,
    /// Null link parameters of the link-adequacy test.
    #[serde(default = "logit_null")]
    pub link_null: (f64, f64),
}

fn logit_null() -> (f64, f64) {
    (1.0, 1.0)
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Submodel {
    #[serde(default = "yes")]
    pub intercept: bool,
    #[serde(default)]
    pub columns: Vec<String>,
    #[serde(default)]
    pub derived: Vec<Derived>,
    pub link: LinkFamily,
    #[serde(default)]
    pub lambda: Option<LambdaMode>,
}

/// A design column computed from listed columns of the same submodel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Derived {
    Square(String),
    Interaction(String, String),
}

impl Derived {
    pub fn name(&self) -> String {
        match self {
            Derived::Square(c) => format!("{c}^2"),
            Derived::Interaction(a, b) => format!("{a}:{b}"),
        }
    }

    pub fn bases(&self) -> Vec<&str> {
        match self {
            Derived::Square(c) => vec![c],
            Derived::Interaction(a, b) => vec![a, b],
        }
    }
}

impl Submodel {
    /// Column names of the design, in order.
    pub fn design_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        if self.intercept {
            names.push("(intercept)".to_string());
        }
        names.extend(self.columns.iter().cloned());
        names.extend(self.derived.iter().map(Derived::name));
        names
    }

    pub fn lambda_mode(&self) -> LambdaMode {
        self.lambda.unwrap_or(LambdaMode::Free)
    }

    fn validate(&self, which: &str) -> Result<()> {
        if self.design_names().is_empty() {
            bail!("{which} submodel has no columns");
        }
        for (i, c) in self.columns.iter().enumerate() {
            if self.columns[..i].contains(c) {
                bail!("{which} submodel lists column '{c}' twice");
            }
        }
        for d in &self.derived {
            for base in d.bases() {
                if !self.columns.iter().any(|c| c == base) {
                    bail!(
                        "derived column '{}' in the {which} submodel uses '{base}', which is not one of its columns",
                        d.name()
                    );
                }
            }
        }
        if let Some(LambdaMode::Fixed(v)) = self.lambda {
            self.link.check_lambda(v)?;
        }
        Ok(())
    }
}

impl ModelConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let config: ModelConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some((a, b)) = self.range {
            if !(a.is_finite() && b.is_finite() && a < b) {
                bail!("response range must satisfy a < b, got ({a}, {b})");
            }
        }
        self.mean.validate("mean")?;
        self.dispersion.validate("dispersion")
    }

    /// Every data column the model reads, response first.
    pub fn used_columns(&self) -> Vec<String> {
        let mut out = vec![self.response.clone()];
        for c in self.mean.columns.iter().chain(&self.dispersion.columns) {
            if !out.contains(c) {
                out.push(c.clone());
            }
        }
        out
    }
}

/// A file of Monte Carlo scenarios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub scenarios: Vec<ScenarioConfig>,
}

/// True parameters and size of one study. Covariates beyond the intercepts
/// are uniform(0, 1) draws fixed across replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub mean_link: LinkFamily,
    pub dispersion_link: LinkFamily,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    #[serde(default = "one")]
    pub lambda1: f64,
    #[serde(default = "one")]
    pub lambda2: f64,
    pub n: usize,
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub fit: FitOptions,
}

fn one() -> f64 {
    1.0
}

impl ScenarioFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading scenarios {}", path.display()))?;
        let file: ScenarioFile =
            serde_json::from_str(&text).with_context(|| format!("parsing scenarios {}", path.display()))?;
        if file.scenarios.is_empty() {
            bail!("scenario file {} has no scenarios", path.display());
        }
        for (i, s) in file.scenarios.iter().enumerate() {
            if s.name.is_empty() || s.name.contains(['/', '\\']) {
                bail!("scenario {i} needs a plain file name, got '{}'", s.name);
            }
            if file.scenarios[..i].iter().any(|o| o.name == s.name) {
                bail!("scenario name '{}' is used twice", s.name);
            }
        }
        Ok(file)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ModelConfig> {
        let c: ModelConfig = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    #[test]
    fn defaults_fill_in() {
        let c = parse(
            r#"{"response":"y","mean":{"columns":["a"],"link":"ao-asymmetric"},
                "dispersion":{"link":"logit"}}"#,
        )
        .unwrap();
        assert_eq!(c.mean.design_names(), ["(intercept)", "a"]);
        assert_eq!(c.dispersion.design_names(), ["(intercept)"]);
        assert_eq!(c.mean.lambda_mode(), LambdaMode::Free);
        assert_eq!(c.link_null, (1.0, 1.0));
        assert_eq!(c.fit, FitOptions::default());
    }

    #[test]
    fn derived_columns_need_listed_bases() {
        let bad = parse(
            r#"{"response":"y","mean":{"columns":["a"],"derived":[{"interaction":["a","b"]}],"link":"logit"},
                "dispersion":{"link":"logit"}}"#,
        );
        assert!(bad.unwrap_err().to_string().contains("'b'"));
        let good = parse(
            r#"{"response":"y","mean":{"columns":["a","b"],"derived":[{"square":"a"},{"interaction":["a","b"]}],"link":"logit"},
                "dispersion":{"link":"logit"}}"#,
        )
        .unwrap();
        assert_eq!(good.mean.design_names(), ["(intercept)", "a", "b", "a^2", "a:b"]);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_ranges() {
        assert!(parse(r#"{"response":"y","mean":{"link":"logit"},"dispersion":{"link":"logit"},"extra":1}"#).is_err());
        assert!(parse(r#"{"response":"y","range":[1,1],"mean":{"link":"logit"},"dispersion":{"link":"logit"}}"#).is_err());
    }
}
