//! Streaming evaluation at batch size 1 and the metrics report.

use std::time::Instant;

use qtta_core::format::FeatureStream;
use qtta_core::qlinear::{argmax, qmatvec};
use qtta_core::quant::QuantizedTensor;
use qtta_core::tta::{AdaptationConfig, Engine};
use qtta_core::{Error, Tensor};
use serde::Serialize;

use crate::error::{CliError, Result};

/// Optional linear map applied to each raw feature before the engine sees it.
#[derive(Debug, Clone)]
pub enum Projection {
    Dense(Tensor),
    Quantized(QuantizedTensor),
}

impl Projection {
    pub fn output_dim(&self) -> usize {
        match self {
            Projection::Dense(t) => t.shape()[0],
            Projection::Quantized(q) => q.shape()[0],
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Projection::Dense(t) => t.shape()[1],
            Projection::Quantized(q) => q.shape()[1],
        }
    }

    pub fn apply(&self, x: &[f32]) -> qtta_core::Result<Vec<f32>> {
        match self {
            Projection::Quantized(q) => qmatvec(q, x),
            Projection::Dense(t) => {
                let (rows, cols) = t.matrix_dims()?;
                if x.len() != cols {
                    return Err(Error::DimensionMismatch { expected: cols, found: x.len() });
                }
                Ok(t.data()
                    .chunks_exact(cols)
                    .take(rows)
                    .map(|row| row.iter().zip(x).map(|(&w, &v)| f64::from(w) * f64::from(v)).sum::<f64>() as f32)
                    .collect())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Budgets {
    /// B_M: bytes for weights plus peak cache.
    pub memory_bytes: Option<u64>,
    /// B_L: mean seconds per sample.
    pub latency_s: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    /// Record wall-clock latency. Off by default so reports are reproducible byte for byte.
    pub timing: bool,
    pub budgets: Budgets,
    pub model_bytes: u64,
    pub seed: u64,
    pub projection: Option<Projection>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Latency {
    pub mean_s: f64,
    /// Mean over the first ten samples.
    pub first10_mean_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Memory {
    pub model_bytes: u64,
    /// Largest live cache size seen during the stream.
    pub cache_bytes: u64,
    pub total_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BudgetCheck<T> {
    pub limit: T,
    pub value: T,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BudgetReport {
    pub memory: Option<BudgetCheck<u64>>,
    pub latency: Option<BudgetCheck<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StreamInfo {
    pub classes: usize,
    pub dim: usize,
    pub samples: usize,
    pub degenerate_features: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigEcho {
    pub adaptation: AdaptationConfig,
    pub logit_scale: f64,
    pub projected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub top1: f64,
    /// Accuracy of the unadjusted logits on the same pass.
    pub zero_shot_top1: f64,
    pub correct: u64,
    pub samples: u64,
    pub latency: Option<Latency>,
    pub memory: Memory,
    pub budgets: BudgetReport,
    pub config: ConfigEcho,
    pub stream: StreamInfo,
    pub seed: u64,
    pub note: &'static str,
}

const MEMORY_NOTE: &str = "memory counts static weight bytes plus peak cache bytes; activations are not counted";

/// Runs `engine` over the stream in order, one sample at a time.
pub fn run_eval(stream: &FeatureStream, engine: &mut Engine, opts: &EvalOptions) -> Result<MetricsReport> {
    let in_dim = opts.projection.as_ref().map_or(engine.prototypes().dim(), Projection::input_dim);
    if stream.dim() != in_dim {
        return Err(Error::DimensionMismatch { expected: in_dim, found: stream.dim() }.into());
    }
    if stream.classes() != engine.prototypes().classes() {
        return Err(CliError::Usage(format!(
            "stream has {} classes but the engine has {} prototypes",
            stream.classes(),
            engine.prototypes().classes()
        )));
    }
    let timing = opts.timing || opts.budgets.latency_s.is_some();

    let (mut correct, mut zero_shot, mut degenerate, mut peak) = (0u64, 0u64, 0u64, 0usize);
    let mut times = Vec::with_capacity(if timing { stream.len() } else { 0 });
    for (x, label) in stream.iter() {
        let start = timing.then(Instant::now);
        let out = match &opts.projection {
            Some(p) => engine.step(&p.apply(x)?)?,
            None => engine.step(x)?,
        };
        if let Some(t0) = start {
            times.push(t0.elapsed().as_secs_f64());
        }
        correct += u64::from(out.prediction == label as usize);
        zero_shot += u64::from(argmax(&out.base_logits) == label as usize);
        degenerate += u64::from(out.degenerate);
        peak = peak.max(engine.cache_bytes());
    }

    let n = stream.len() as u64;
    let frac = |k: u64| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    let latency = timing.then(|| {
        let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
        Latency { mean_s: mean(&times), first10_mean_s: mean(&times[..times.len().min(10)]) }
    });
    let memory = Memory { model_bytes: opts.model_bytes, cache_bytes: peak as u64, total_bytes: opts.model_bytes + peak as u64 };
    let budgets = BudgetReport {
        memory: opts.budgets.memory_bytes.map(|limit| BudgetCheck { limit, value: memory.total_bytes, pass: memory.total_bytes <= limit }),
        latency: opts.budgets.latency_s.zip(latency.as_ref()).map(|(limit, l)| BudgetCheck {
            limit,
            value: l.mean_s,
            pass: l.mean_s <= limit,
        }),
    };
    Ok(MetricsReport {
        top1: frac(correct),
        zero_shot_top1: frac(zero_shot),
        correct,
        samples: n,
        latency,
        memory,
        budgets,
        config: ConfigEcho {
            adaptation: *engine.config(),
            logit_scale: engine.prototypes().logit_scale(),
            projected: opts.projection.is_some(),
        },
        stream: StreamInfo { classes: stream.classes(), dim: stream.dim(), samples: stream.len(), degenerate_features: degenerate },
        seed: opts.seed,
        note: MEMORY_NOTE,
    })
}
