//! Per-layer quantization plans: modality tagging, sensitivity ranking and
//! the full-precision retain set.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::TensorRecord;
use crate::quant::{quantize_tensor, quantize_tensor_with_error, QuantConfig};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Vision,
    Text,
}

impl Modality {
    pub const ALL: [Modality; 2] = [Modality::Vision, Modality::Text];

    pub fn prefix(self) -> &'static str {
        match self {
            Modality::Vision => "vision.",
            Modality::Text => "text.",
        }
    }

    pub fn of(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| name.starts_with(m.prefix()))
            .ok_or_else(|| Error::UntaggedLayer(name.into()))
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Vision => "vision",
            Modality::Text => "text",
        })
    }
}

/// Squared reconstruction error per parameter under `cfg`. Higher is more sensitive.
pub fn sensitivity_score(w: &Tensor, cfg: &QuantConfig) -> Result<f64> {
    let (_, err) = quantize_tensor_with_error(w, cfg)?;
    Ok(err.sse / w.numel() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub scores: BTreeMap<String, f64>,
    /// Descending by score, ties broken by name.
    pub ranking: Vec<String>,
}

impl SensitivityReport {
    pub fn from_scores(scores: BTreeMap<String, f64>) -> Self {
        let mut ranking: Vec<String> = scores.keys().cloned().collect();
        ranking.sort_by(|a, b| scores[b].total_cmp(&scores[a]).then_with(|| a.cmp(b)));
        Self { scores, ranking }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "lowercase")]
pub enum LayerAction {
    Retain,
    Quantize(QuantConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub modality: Modality,
    #[serde(flatten)]
    pub action: LayerAction,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct QuantPlan {
    pub layers: BTreeMap<String, PlanEntry>,
}

impl QuantPlan {
    pub fn retain_set(&self) -> Vec<&str> {
        self.layers.iter().filter(|(_, e)| e.action == LayerAction::Retain).map(|(n, _)| n.as_str()).collect()
    }

    /// Checks tags and quantizer settings, e.g. after loading from a file.
    pub fn validate(&self) -> Result<()> {
        for (name, entry) in &self.layers {
            if Modality::of(name)? != entry.modality {
                return Err(Error::PlanMismatch(alloc::format!("layer `{name}` is tagged {}", entry.modality)));
            }
            if let LayerAction::Quantize(cfg) = entry.action {
                cfg.validate()?;
            }
        }
        Ok(())
    }

    /// Notes about the plan that do not make it invalid.
    pub fn warnings(&self) -> Vec<String> {
        let max_bits = |m: Modality| {
            self.layers
                .values()
                .filter_map(|e| match e.action {
                    LayerAction::Quantize(c) if e.modality == m => Some(c.bits.get()),
                    _ => None,
                })
                .max()
        };
        match (max_bits(Modality::Vision), max_bits(Modality::Text)) {
            (Some(v), Some(t)) if v <= t => {
                alloc::vec![alloc::format!("vision bits ({v}) do not exceed text bits ({t})")]
            }
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RetainSpec {
    /// The `k` most sensitive layers of each modality.
    TopK(usize),
    Explicit(Vec<String>),
}

/// A named quantizer pair with its default retain list.
#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub vision: QuantConfig,
    pub text: QuantConfig,
    pub retain: &'static [&'static str],
}

pub const VISION_NORM: &str = "vision.ln_post";
pub const VISION_PROJ: &str = "vision.proj";
pub const TEXT_PROJ: &str = "text.proj";

impl Preset {
    pub const NAMES: [&'static str; 2] = ["lqa", "lqa-lite"];

    pub fn by_name(name: &str) -> Result<Self> {
        let cfg = |r: Result<QuantConfig>| r.expect("preset configs are valid");
        match name {
            "lqa" => Ok(Preset {
                name: "lqa",
                vision: cfg(QuantConfig::asymmetric(8, 128)),
                text: cfg(QuantConfig::symmetric(8, 128)),
                retain: &[VISION_NORM, VISION_PROJ, TEXT_PROJ],
            }),
            "lqa-lite" => Ok(Preset {
                name: "lqa-lite",
                vision: cfg(QuantConfig::asymmetric(4, 64)),
                text: cfg(QuantConfig::asymmetric(8, 256)),
                retain: &[VISION_NORM, TEXT_PROJ],
            }),
            other => Err(Error::InvalidConfig(alloc::format!("unknown preset `{other}` (expected lqa or lqa-lite)"))),
        }
    }

    pub fn retain_spec(&self) -> RetainSpec {
        RetainSpec::Explicit(self.retain.iter().map(|s| s.to_string()).collect())
    }
}

/// Scores every layer under the config of its modality.
pub fn sensitivity_report(layers: &[(&str, &Tensor)], vision: &QuantConfig, text: &QuantConfig) -> Result<SensitivityReport> {
    let mut scores = BTreeMap::new();
    for &(name, w) in layers {
        let cfg = match Modality::of(name)? {
            Modality::Vision => vision,
            Modality::Text => text,
        };
        scores.insert(name.to_string(), sensitivity_score(w, cfg)?);
    }
    Ok(SensitivityReport::from_scores(scores))
}

pub fn build_plan(layers: &[(&str, &Tensor)], vision: &QuantConfig, text: &QuantConfig, retain: &RetainSpec) -> Result<QuantPlan> {
    vision.validate()?;
    text.validate()?;
    let mut plan = QuantPlan::default();
    for &(name, _) in layers {
        let modality = Modality::of(name)?;
        let cfg = match modality {
            Modality::Vision => *vision,
            Modality::Text => *text,
        };
        if plan.layers.insert(name.to_string(), PlanEntry { modality, action: LayerAction::Quantize(cfg) }).is_some() {
            return Err(Error::DuplicateName(name.into()));
        }
    }

    let retained: BTreeSet<String> = match retain {
        RetainSpec::Explicit(names) => {
            for n in names {
                if !plan.layers.contains_key(n) {
                    return Err(Error::UnknownLayer(n.clone()));
                }
            }
            names.iter().cloned().collect()
        }
        RetainSpec::TopK(k) => {
            let report = sensitivity_report(layers, vision, text)?;
            Modality::ALL
                .into_iter()
                .flat_map(|m| {
                    let plan = &plan;
                    report.ranking.iter().filter(move |n| plan.layers[*n].modality == m).take(*k).cloned()
                })
                .collect()
        }
    };
    for name in retained {
        plan.layers.get_mut(&name).expect("checked above").action = LayerAction::Retain;
    }
    Ok(plan)
}

/// Encodes one layer according to its plan entry.
pub fn apply_entry(name: &str, w: &Tensor, entry: &PlanEntry) -> Result<TensorRecord> {
    Ok(match entry.action {
        LayerAction::Retain => TensorRecord::from_f16(name, w),
        LayerAction::Quantize(cfg) => TensorRecord::from_quantized(name, &quantize_tensor(w, &cfg)?),
    })
}

/// Checks that the plan names exactly the given layers.
pub fn check_coverage<'a>(names: impl IntoIterator<Item = &'a str>, plan: &QuantPlan) -> Result<()> {
    let mut seen = BTreeSet::new();
    for name in names {
        if !plan.layers.contains_key(name) {
            return Err(Error::PlanMismatch(alloc::format!("layer `{name}` is not in the plan")));
        }
        if !seen.insert(name) {
            return Err(Error::DuplicateName(name.into()));
        }
    }
    if let Some(extra) = plan.layers.keys().find(|n| !seen.contains(n.as_str())) {
        return Err(Error::PlanMismatch(alloc::format!("plan layer `{extra}` is not in the container")));
    }
    Ok(())
}

pub fn apply_plan(layers: &[(&str, &Tensor)], plan: &QuantPlan) -> Result<Vec<TensorRecord>> {
    check_coverage(layers.iter().map(|(n, _)| *n), plan)?;
    layers.iter().map(|&(name, w)| apply_entry(name, w, &plan.layers[name])).collect()
}
