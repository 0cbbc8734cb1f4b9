//! Cache-based test-time adaptation over a stream of feature vectors.
//!
//! Positive and negative per-class exemplar queues add and subtract
//! affinity-weighted class evidence to the zero-shot logits:
//!
//! `l_c = l0_c + lambda * sum_i phi(f.e_i; beta+) p_ic - mu * sum_j phi(f.e_j; beta-) pbar_jc`
//!
//! with `phi(z; beta) = exp(-beta (1 - z))`.

use alloc::collections::VecDeque;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qlinear::{argmax, cosine_logits, dot, l2_normalize, normalized_entropy, softmax, Prototypes};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Eviction {
    #[default]
    Fifo,
    /// Replace the highest-entropy incumbent when the newcomer is more confident.
    EntropyPriority,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Affinity {
    #[default]
    Exp,
    /// The plain dot product; sharpness is ignored.
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateOn {
    /// Admission gates read `softmax(l0)`.
    #[default]
    Baseline,
    /// Admission gates read the cache-adjusted distribution.
    Adjusted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PositiveConfig {
    pub enabled: bool,
    pub capacity: usize,
    pub weight: f64,
    pub beta: f64,
    /// Confidence gate on `max p`.
    pub tau: f64,
}

impl Default for PositiveConfig {
    fn default() -> Self {
        Self { enabled: true, capacity: 3, weight: 1.0, beta: 8.0, tau: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NegativeConfig {
    pub enabled: bool,
    pub capacity: usize,
    pub weight: f64,
    pub beta: f64,
    /// Admission window on normalized entropy, inclusive.
    pub entropy: [f64; 2],
    /// Class probabilities outside this window are zeroed before storage.
    pub mask: [f64; 2],
}

impl Default for NegativeConfig {
    fn default() -> Self {
        Self { enabled: true, capacity: 2, weight: 0.117, beta: 1.0, entropy: [0.2, 0.5], mask: [0.03, 1.0] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptationConfig {
    pub positive: PositiveConfig,
    pub negative: NegativeConfig,
    pub eviction: Eviction,
    pub affinity: Affinity,
    pub gate_on: GateOn,
}

/// Per-dataset positive-cache weight and sharpness.
pub const PRESETS: [(&str, f64, f64); 7] = [
    ("cifar10", 1.0, 8.0),
    ("cifar100", 1.0, 8.0),
    ("caltech101", 5.0, 5.0),
    ("oxford", 2.0, 7.0),
    ("dtd", 2.0, 3.0),
    ("ucf101", 3.0, 8.0),
    ("imagenet-a", 2.0, 5.0),
];

impl AdaptationConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let &(_, weight, beta) = PRESETS.iter().find(|(n, ..)| *n == name).ok_or_else(|| {
            let known: Vec<&str> = PRESETS.iter().map(|p| p.0).collect();
            Error::InvalidConfig(alloc::format!("unknown preset `{name}` (expected one of {})", known.join(", ")))
        })?;
        Ok(Self { positive: PositiveConfig { weight, beta, ..PositiveConfig::default() }, ..Self::default() })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(Error::InvalidConfig(alloc::format!("{field}: {msg}")));
        let (p, n) = (&self.positive, &self.negative);
        if !(p.weight >= 0.0 && p.weight.is_finite()) {
            return bad("positive.weight", "must be finite and >= 0");
        }
        if !(n.weight >= 0.0 && n.weight.is_finite()) {
            return bad("negative.weight", "must be finite and >= 0");
        }
        if !(p.beta > 0.0 && p.beta.is_finite()) {
            return bad("positive.beta", "must be finite and > 0");
        }
        if !(n.beta > 0.0 && n.beta.is_finite()) {
            return bad("negative.beta", "must be finite and > 0");
        }
        if !(0.0..=1.0).contains(&p.tau) {
            return bad("positive.tau", "must lie in [0, 1]");
        }
        let window = |w: [f64; 2]| 0.0 <= w[0] && w[0] < w[1] && w[1] <= 1.0;
        if !window(n.entropy) {
            return bad("negative.entropy", "must satisfy 0 <= lo < hi <= 1");
        }
        if !window(n.mask) {
            return bad("negative.mask", "must satisfy 0 <= lo < hi <= 1");
        }
        Ok(())
    }

    fn affinity(&self, z: f64, beta: f64) -> f64 {
        match self.affinity {
            Affinity::Exp => libm::exp(-beta * (1.0 - z)),
            Affinity::Raw => z,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CacheEntry {
    /// Unit-norm feature.
    pub feature: Vec<f32>,
    /// Stored class distribution; masked for negative entries.
    pub prob: Vec<f32>,
    pub entropy: f64,
    pub arrival: u64,
}

/// Bytes charged per cached entry beyond its feature and probability vectors.
pub const ENTRY_OVERHEAD_BYTES: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct CacheState {
    pub positive: Vec<VecDeque<CacheEntry>>,
    pub negative: Vec<VecDeque<CacheEntry>>,
}

impl CacheState {
    pub fn new(classes: usize) -> Self {
        Self { positive: alloc::vec![VecDeque::new(); classes], negative: alloc::vec![VecDeque::new(); classes] }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn len(&self) -> usize {
        self.positive.iter().chain(&self.negative).map(VecDeque::len).sum()
    }

    pub fn clear(&mut self) {
        self.positive.iter_mut().chain(self.negative.iter_mut()).for_each(VecDeque::clear);
    }

    /// Live storage, charging `4 d + 4 C + 16` bytes per entry.
    pub fn bytes(&self, dim: usize) -> usize {
        self.len() * (4 * dim + 4 * self.positive.len() + ENTRY_OVERHEAD_BYTES)
    }
}

pub fn cache_adjust(base: &[f64], f: &[f32], state: &CacheState, cfg: &AdaptationConfig) -> Vec<f64> {
    let mut out = base.to_vec();
    let mut accumulate = |queues: &[VecDeque<CacheEntry>], gain: f64, beta: f64| {
        for e in queues.iter().flatten() {
            let w = gain * cfg.affinity(dot(f, &e.feature), beta);
            for (o, &p) in out.iter_mut().zip(&e.prob) {
                *o += w * f64::from(p);
            }
        }
    };
    if cfg.positive.enabled {
        accumulate(&state.positive, cfg.positive.weight, cfg.positive.beta);
    }
    if cfg.negative.enabled {
        accumulate(&state.negative, -cfg.negative.weight, cfg.negative.beta);
    }
    out
}

fn push_bounded(queue: &mut VecDeque<CacheEntry>, entry: CacheEntry, capacity: usize, eviction: Eviction) -> bool {
    if capacity == 0 {
        return false;
    }
    if queue.len() < capacity {
        queue.push_back(entry);
        return true;
    }
    match eviction {
        Eviction::Fifo => {
            while queue.len() >= capacity {
                queue.pop_front();
            }
            queue.push_back(entry);
            true
        }
        Eviction::EntropyPriority => {
            let worst = (1..queue.len()).fold(0, |w, i| if queue[i].entropy > queue[w].entropy { i } else { w });
            if entry.entropy < queue[worst].entropy {
                queue.remove(worst);
                queue.push_back(entry);
                true
            } else {
                false
            }
        }
    }
}

/// Admits `f` into the positive queue of `argmax p` when `max p >= tau`.
pub fn admit_positive(f: &[f32], p: &[f64], arrival: u64, state: &mut CacheState, cfg: &AdaptationConfig) -> bool {
    if !cfg.positive.enabled {
        return false;
    }
    let class = argmax(p);
    if p[class] < cfg.positive.tau {
        return false;
    }
    let entry = CacheEntry {
        feature: f.to_vec(),
        prob: p.iter().map(|&x| x as f32).collect(),
        entropy: normalized_entropy(p),
        arrival,
    };
    push_bounded(&mut state.positive[class], entry, cfg.positive.capacity, cfg.eviction)
}

/// `p_c` if it lies in the mask window, otherwise 0. Not renormalized.
pub fn negative_mask(p: &[f64], window: [f64; 2]) -> Vec<f32> {
    p.iter().map(|&x| if (window[0]..=window[1]).contains(&x) { x as f32 } else { 0.0 }).collect()
}

/// Admits `f` into the negative queue of `argmax p` when its normalized entropy lies in the window.
pub fn admit_negative(f: &[f32], p: &[f64], arrival: u64, state: &mut CacheState, cfg: &AdaptationConfig) -> bool {
    let neg = &cfg.negative;
    if !neg.enabled {
        return false;
    }
    let h = normalized_entropy(p);
    if !(neg.entropy[0]..=neg.entropy[1]).contains(&h) {
        return false;
    }
    let entry = CacheEntry { feature: f.to_vec(), prob: negative_mask(p, neg.mask), entropy: h, arrival };
    push_bounded(&mut state.negative[argmax(p)], entry, neg.capacity, cfg.eviction)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub prediction: usize,
    pub base_logits: Vec<f64>,
    pub logits: Vec<f64>,
    /// Largest probability of the distribution the gates read.
    pub confidence: f64,
    /// The raw feature had zero norm and was used unnormalized.
    pub degenerate: bool,
    pub admitted_positive: bool,
    pub admitted_negative: bool,
}

#[derive(Debug, Clone)]
pub struct Engine {
    prototypes: Prototypes,
    config: AdaptationConfig,
    state: CacheState,
    arrivals: u64,
}

impl Engine {
    pub fn new(prototypes: Prototypes, config: AdaptationConfig) -> Result<Self> {
        config.validate()?;
        let state = CacheState::new(prototypes.classes());
        Ok(Self { prototypes, config, state, arrivals: 0 })
    }

    pub fn prototypes(&self) -> &Prototypes {
        &self.prototypes
    }

    pub fn config(&self) -> &AdaptationConfig {
        &self.config
    }

    pub fn state(&self) -> &CacheState {
        &self.state
    }

    pub fn cache_bytes(&self) -> usize {
        self.state.bytes(self.prototypes.dim())
    }

    pub fn step(&mut self, raw: &[f32]) -> Result<StepOutput> {
        if raw.len() != self.prototypes.dim() {
            return Err(Error::DimensionMismatch { expected: self.prototypes.dim(), found: raw.len() });
        }
        let (f, degenerate) = l2_normalize(raw);
        let base_logits = cosine_logits(&f, &self.prototypes)?;
        let logits = cache_adjust(&base_logits, &f, &self.state, &self.config);
        let prediction = argmax(&logits);

        let p = softmax(match self.config.gate_on {
            GateOn::Baseline => &base_logits,
            GateOn::Adjusted => &logits,
        });
        let confidence = p[argmax(&p)];
        let arrival = self.arrivals;
        self.arrivals += 1;
        let admitted_positive = admit_positive(&f, &p, arrival, &mut self.state, &self.config);
        let admitted_negative = admit_negative(&f, &p, arrival, &mut self.state, &self.config);
        Ok(StepOutput { prediction, base_logits, logits, confidence, degenerate, admitted_positive, admitted_negative })
    }

    pub fn reset(&mut self) {
        self.state.clear();
        self.arrivals = 0;
    }
}

/// Human-readable one-line summary of a config, used in report echoes.
pub fn describe(cfg: &AdaptationConfig) -> String {
    alloc::format!(
        "pos(enabled={}, k={}, lambda={}, beta={}, tau={}) neg(enabled={}, k={}, mu={}, beta={}, entropy={:?}, mask={:?}) eviction={:?} affinity={:?} gate_on={:?}",
        cfg.positive.enabled,
        cfg.positive.capacity,
        cfg.positive.weight,
        cfg.positive.beta,
        cfg.positive.tau,
        cfg.negative.enabled,
        cfg.negative.capacity,
        cfg.negative.weight,
        cfg.negative.beta,
        cfg.negative.entropy,
        cfg.negative.mask,
        cfg.eviction,
        cfg.affinity,
        cfg.gate_on,
    )
}
