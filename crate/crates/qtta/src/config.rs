//! TOML loading for adaptation configs and quantization plans.
//!
//! An adaptation config may name a dataset preset and override any of its
//! fields:
//!
//! ```toml
//! preset = "cifar10"
//! logit_scale = 100.0
//! eviction = "fifo"
//!
//! [negative]
//! weight = 0.2
//! ```

use std::path::Path;

use qtta_core::qlinear::DEFAULT_LOGIT_SCALE;
use qtta_core::select::QuantPlan;
use qtta_core::tta::AdaptationConfig;

use crate::error::{CliError, Result};
use crate::io::read_bytes;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunConfig {
    pub adaptation: AdaptationConfig,
    pub logit_scale: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { adaptation: AdaptationConfig::default(), logit_scale: DEFAULT_LOGIT_SCALE }
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Parses config text; `origin` only labels error messages.
pub fn parse_run_config(text: &str, origin: &Path) -> Result<RunConfig> {
    let err = |message: String| CliError::Config { path: origin.to_path_buf(), message };
    let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| err(e.message().to_string()))?;

    let preset = match table.remove("preset") {
        None => None,
        Some(toml::Value::String(s)) => Some(s),
        Some(_) => return Err(err("preset: expected a string".into())),
    };
    let logit_scale = match table.remove("logit_scale") {
        None => DEFAULT_LOGIT_SCALE,
        Some(toml::Value::Float(f)) => f,
        Some(toml::Value::Integer(i)) => i as f64,
        Some(_) => return Err(err("logit_scale: expected a number".into())),
    };
    if !(logit_scale > 0.0 && logit_scale.is_finite()) {
        return Err(err("logit_scale: must be finite and > 0".into()));
    }

    let base = match preset {
        Some(name) => AdaptationConfig::preset(&name).map_err(|e| err(format!("preset: {e}")))?,
        None => AdaptationConfig::default(),
    };
    let mut merged = toml::Table::try_from(base).map_err(|e| CliError::Internal(e.to_string()))?;
    merge(&mut merged, table);
    let adaptation: AdaptationConfig = serde_path_to_error::deserialize(toml::Value::Table(merged))
        .map_err(|e| err(format!("{}: {}", e.path(), e.inner().message())))?;
    adaptation.validate().map_err(|e| err(e.to_string()))?;
    Ok(RunConfig { adaptation, logit_scale })
}

pub fn load_run_config(path: &Path) -> Result<RunConfig> {
    let bytes = read_bytes(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|_| CliError::Config { path: path.into(), message: "not UTF-8".into() })?;
    parse_run_config(text, path)
}

pub fn plan_to_toml(plan: &QuantPlan) -> Result<String> {
    toml::to_string(plan).map_err(|e| CliError::Internal(format!("plan serialization: {e}")))
}

pub fn parse_plan(text: &str, origin: &Path) -> Result<QuantPlan> {
    let err = |message: String| CliError::Config { path: origin.to_path_buf(), message };
    let de = toml::Deserializer::new(text);
    let plan: QuantPlan = serde_path_to_error::deserialize(de).map_err(|e| err(format!("{}: {}", e.path(), e.inner().message())))?;
    plan.validate().map_err(|e| err(e.to_string()))?;
    Ok(plan)
}

pub fn load_plan(path: &Path) -> Result<QuantPlan> {
    let bytes = read_bytes(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|_| CliError::Config { path: path.into(), message: "not UTF-8".into() })?;
    parse_plan(text, path)
}
