//! The `qtta` command line.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use qtta_core::bench::{decode_layers, gaussian_tensors, memory_footprint, synth_model, synth_stream, sweep_row, ModelSpec, SynthSpec};
use qtta_core::format::{DType, TensorRecord};
use qtta_core::qlinear::Prototypes;
use qtta_core::quant::{reconstruction_error, QuantConfig, QuantMode};
use qtta_core::select::{apply_entry, build_plan, check_coverage, sensitivity_score, LayerAction, Modality, Preset, RetainSpec};
use qtta_core::tta::{AdaptationConfig, Engine};
use qtta_core::Tensor;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{load_plan, load_run_config, plan_to_toml, RunConfig};
use crate::error::{CliError, Result};
use crate::eval::{run_eval, Budgets, EvalOptions, Projection};
use crate::io::{read_container, read_stream, write_bytes, write_container, write_stream};
use crate::parallel::thread_pool;
use crate::report::{to_flat_csv, to_sorted_json, to_table_csv};

#[derive(Debug, Parser)]
#[command(name = "qtta", version, about = "Selective hybrid weight quantization and cache-based test-time adaptation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Quantize a QTK container with a preset or an explicit plan.
    Quantize(QuantizeArgs),
    /// List the tensors of a QTK container.
    Inspect(InspectArgs),
    /// Rank layers by per-parameter quantization error.
    Sensitivity(SensitivityArgs),
    /// Stream a QFS feature file through the adaptation engine.
    Adapt(AdaptArgs),
    /// Tabulate reconstruction error and bytes over bit widths and group sizes.
    Sweep(SweepArgs),
    /// Write a synthetic shifted feature stream as QFS.
    Synth(SynthArgs),
    /// Write a synthetic two-tower fp32 model as QTK.
    SynthModel(SynthModelArgs),
    /// Report the static byte footprint of a QTK container.
    Footprint(FootprintArgs),
}

#[derive(Debug, Args)]
pub struct QuantizeArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// `lqa` or `lqa-lite`.
    #[arg(long, conflicts_with = "plan", required_unless_present = "plan")]
    pub preset: Option<String>,
    /// Plan file (TOML, one table per layer).
    #[arg(long)]
    pub plan: Option<PathBuf>,
    /// Comma-separated layers to keep in fp16, replacing the preset list.
    #[arg(long, value_delimiter = ',', conflicts_with_all = ["plan", "retain_top"])]
    pub retain: Option<Vec<String>>,
    /// Keep the k most sensitive layers of each modality in fp16.
    #[arg(long, conflicts_with = "plan")]
    pub retain_top: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// Sidecar report; defaults to `<out>.report.json`.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Also write the plan that was applied.
    #[arg(long)]
    pub save_plan: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    pub input: PathBuf,
}

#[derive(Debug, Args)]
pub struct SensitivityArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Preset supplying the per-modality quantizers.
    #[arg(long, default_value = "lqa")]
    pub preset: String,
    /// JSON report path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AdaptArgs {
    #[arg(long)]
    pub features: PathBuf,
    /// Adaptation config (TOML). May name a dataset preset and override fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset preset used when no config file is given.
    #[arg(long, conflicts_with = "config")]
    pub preset: Option<String>,
    /// JSON report path; printed to stdout when absent.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Also write the report as `key,value` CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub no_pos: bool,
    #[arg(long)]
    pub no_neg: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Record per-sample wall-clock latency (makes the report non-reproducible).
    #[arg(long)]
    pub timing: bool,
    /// QTK model whose byte footprint is charged to the memory budget.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Tensor in `--model` applied to every feature before classification.
    #[arg(long, requires = "model")]
    pub project: Option<String>,
    /// Memory budget B_M in bytes.
    #[arg(long)]
    pub budget_memory: Option<u64>,
    /// Latency budget B_L in seconds per sample; implies `--timing`.
    #[arg(long)]
    pub budget_latency: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Container to sweep; seeded Gaussian tensors when absent.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,8")]
    pub bits: Vec<u8>,
    #[arg(long, value_delimiter = ',', default_value = "8,16,32,64,128,256,512")]
    pub groups: Vec<usize>,
    #[arg(long, default_value = "asymmetric")]
    pub mode: QuantMode,
    #[arg(long, default_value_t = 8)]
    pub tensors: usize,
    #[arg(long, default_value_t = 4096)]
    pub numel: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// CSV path; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, default_value_t = 2000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0.3)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0.6)]
    pub delta: f64,
    #[arg(long, default_value_t = 0.1)]
    pub rho: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthModelArgs {
    #[arg(long, default_value_t = 256)]
    pub width: usize,
    #[arg(long, default_value_t = 2)]
    pub depth: usize,
    #[arg(long, default_value_t = 128)]
    pub embed: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FootprintArgs {
    pub input: PathBuf,
    /// JSON path; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Quantize(a) => quantize(a),
        Command::Inspect(a) => inspect(a),
        Command::Sensitivity(a) => sensitivity(a),
        Command::Adapt(a) => adapt(a),
        Command::Sweep(a) => sweep(a),
        Command::Synth(a) => synth(a),
        Command::SynthModel(a) => synth_model_cmd(a),
        Command::Footprint(a) => footprint(a),
    }
}

fn emit(text: &str, path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => write_bytes(p, text.as_bytes()),
        None => std::io::stdout().write_all(text.as_bytes()).map_err(|e| CliError::Internal(format!("stdout: {e}"))),
    }
}

fn as_refs(layers: &[(String, Tensor)]) -> Vec<(&str, &Tensor)> {
    layers.iter().map(|(n, t)| (n.as_str(), t)).collect()
}

#[derive(Debug, Serialize)]
struct LayerReport {
    name: String,
    modality: Modality,
    action: &'static str,
    dtype: String,
    bits: Option<u8>,
    group_size: Option<usize>,
    mode: Option<QuantMode>,
    params: u64,
    bytes: u64,
    rel_error: f64,
    mse: f64,
}

#[derive(Debug, Serialize)]
struct QuantizeReport {
    preset: Option<String>,
    layers: Vec<LayerReport>,
    retained: Vec<String>,
    input_bytes: u64,
    output_bytes: u64,
    bits_per_weight: f64,
    fp32_ratio: f64,
    warnings: Vec<String>,
}

fn quantize(a: QuantizeArgs) -> Result<()> {
    let records = read_container(&a.input)?;
    let layers = decode_layers(&records)?;
    let refs = as_refs(&layers);

    let plan = match (&a.plan, &a.preset) {
        (Some(path), _) => load_plan(path)?,
        (None, Some(name)) => {
            let preset = Preset::by_name(name)?;
            let retain = match (&a.retain, a.retain_top) {
                (Some(names), _) => RetainSpec::Explicit(names.clone()),
                (None, Some(k)) => RetainSpec::TopK(k),
                (None, None) => preset.retain_spec(),
            };
            build_plan(&refs, &preset.vision, &preset.text, &retain)?
        }
        (None, None) => return Err(CliError::Usage("one of --preset or --plan is required".into())),
    };
    check_coverage(refs.iter().map(|(n, _)| *n), &plan)?;
    let warnings = plan.warnings();
    for w in &warnings {
        eprintln!("warning: {w}");
    }

    let pool = thread_pool()?;
    let encoded: Vec<(TensorRecord, LayerReport)> = pool.install(|| {
        refs.par_iter()
            .map(|&(name, w)| {
                let entry = &plan.layers[name];
                let rec = apply_entry(name, w, entry)?;
                let err = reconstruction_error(w, &rec.to_tensor()?)?;
                let cfg = match entry.action {
                    LayerAction::Quantize(c) => Some(c),
                    LayerAction::Retain => None,
                };
                let report = LayerReport {
                    name: name.to_string(),
                    modality: entry.modality,
                    action: if cfg.is_some() { "quantize" } else { "retain" },
                    dtype: rec.dtype.to_string(),
                    bits: cfg.map(|c| c.bits.get()),
                    group_size: cfg.map(|c| c.group_size),
                    mode: cfg.map(|c| c.mode),
                    params: rec.numel(),
                    bytes: rec.payload.len() as u64,
                    rel_error: err.rel_frobenius,
                    mse: err.mse,
                };
                Ok((rec, report))
            })
            .collect::<Result<_>>()
    })?;
    let (out_records, layer_reports): (Vec<_>, Vec<_>) = encoded.into_iter().unzip();

    if out_records.iter().map(|r| &r.name).ne(records.iter().map(|r| &r.name)) {
        return Err(CliError::Internal("output layer order differs from input".into()));
    }
    let written = write_container(&out_records, &a.out)?;
    let fp = memory_footprint(&out_records)?;
    let report = QuantizeReport {
        preset: a.preset.clone(),
        retained: plan.retain_set().into_iter().map(String::from).collect(),
        layers: layer_reports,
        input_bytes: records.iter().map(|r| r.payload.len() as u64).sum(),
        output_bytes: fp.total_bytes,
        bits_per_weight: fp.bits_per_weight,
        fp32_ratio: fp.fp32_ratio,
        warnings,
    };
    let report_path = a.report.clone().unwrap_or_else(|| {
        let mut s = a.out.clone().into_os_string();
        s.push(".report.json");
        PathBuf::from(s)
    });
    write_bytes(&report_path, to_sorted_json(&report)?.as_bytes())?;
    if let Some(p) = &a.save_plan {
        write_bytes(p, plan_to_toml(&plan)?.as_bytes())?;
    }
    println!(
        "wrote {} ({written} bytes, {} layers, {} retained, {:.3} bits/weight)",
        a.out.display(),
        out_records.len(),
        report.retained.len(),
        fp.bits_per_weight
    );
    Ok(())
}

/// `name  dtype  bits  group  shape  bytes`, tab-separated; `-` where not applicable.
pub fn inspect_lines(records: &[TensorRecord]) -> Vec<String> {
    records
        .iter()
        .map(|r| {
            let packed = matches!(r.dtype, DType::QPacked(_));
            let opt = |v: String| if packed { v } else { "-".into() };
            let shape = r.shape.iter().map(u64::to_string).collect::<Vec<_>>().join("x");
            format!("{}\t{}\t{}\t{}\t{}\t{}", r.name, r.dtype, opt(r.bits.to_string()), opt(r.group_size.to_string()), shape, r.payload.len())
        })
        .collect()
}

fn inspect(a: InspectArgs) -> Result<()> {
    let records = read_container(&a.input)?;
    let mut text = inspect_lines(&records).join("\n");
    text.push('\n');
    emit(&text, None)
}

#[derive(Debug, Serialize)]
struct SensitivityOut {
    preset: String,
    scores: std::collections::BTreeMap<String, f64>,
    ranking: Vec<String>,
}

fn sensitivity(a: SensitivityArgs) -> Result<()> {
    let preset = Preset::by_name(&a.preset)?;
    let layers = decode_layers(&read_container(&a.input)?)?;
    let pool = thread_pool()?;
    let scores = pool.install(|| {
        layers
            .par_iter()
            .map(|(name, w)| {
                let cfg = match Modality::of(name)? {
                    Modality::Vision => &preset.vision,
                    Modality::Text => &preset.text,
                };
                Ok((name.clone(), sensitivity_score(w, cfg)?))
            })
            .collect::<Result<std::collections::BTreeMap<_, _>>>()
    })?;
    let report = qtta_core::select::SensitivityReport::from_scores(scores);
    let mut text = String::new();
    for (i, name) in report.ranking.iter().enumerate() {
        text.push_str(&format!("{}\t{}\t{:.6e}\n", i + 1, name, report.scores[name]));
    }
    emit(&text, None)?;
    if let Some(p) = &a.out {
        let out = SensitivityOut { preset: a.preset.clone(), scores: report.scores, ranking: report.ranking };
        write_bytes(p, to_sorted_json(&out)?.as_bytes())?;
    }
    Ok(())
}

fn projection_from(records: &[TensorRecord], name: &str) -> Result<Projection> {
    let rec = records.iter().find(|r| r.name == name).ok_or_else(|| qtta_core::Error::UnknownLayer(name.into()))?;
    if rec.shape.len() != 2 {
        return Err(qtta_core::Error::UnsupportedRank(rec.shape.len()).into());
    }
    Ok(match rec.dtype {
        DType::QPacked(_) => Projection::Quantized(rec.to_quantized()?),
        _ => Projection::Dense(rec.to_tensor()?),
    })
}

fn adapt(a: AdaptArgs) -> Result<()> {
    let RunConfig { mut adaptation, logit_scale } = match (&a.config, &a.preset) {
        (Some(path), _) => load_run_config(path)?,
        (None, Some(name)) => RunConfig { adaptation: AdaptationConfig::preset(name)?, ..RunConfig::default() },
        (None, None) => RunConfig::default(),
    };
    if a.no_pos {
        adaptation.positive.enabled = false;
    }
    if a.no_neg {
        adaptation.negative.enabled = false;
    }

    let decoded = read_stream(&a.features)?;
    if decoded.renormalized {
        eprintln!("warning: prototype rows were renormalized on load");
    }
    let stream = decoded.stream;

    let (model_bytes, projection) = match &a.model {
        Some(path) => {
            let records = read_container(path)?;
            let bytes = memory_footprint(&records)?.total_bytes;
            let projection = a.project.as_deref().map(|n| projection_from(&records, n)).transpose()?;
            (bytes, projection)
        }
        None => (0, None),
    };
    let proto_dim = stream.dim();
    let prototypes = Prototypes::new(proto_dim, stream.prototypes().to_vec(), logit_scale)?;
    if let Some(p) = &projection {
        if p.output_dim() != proto_dim {
            return Err(qtta_core::Error::DimensionMismatch { expected: proto_dim, found: p.output_dim() }.into());
        }
    }
    let mut engine = Engine::new(prototypes, adaptation)?;
    let opts = EvalOptions {
        timing: a.timing,
        budgets: Budgets { memory_bytes: a.budget_memory, latency_s: a.budget_latency },
        model_bytes,
        seed: a.seed,
        projection,
    };
    let report = run_eval(&stream, &mut engine, &opts)?;
    emit(&to_sorted_json(&report)?, a.report.as_deref())?;
    if let Some(p) = &a.csv {
        write_bytes(p, to_flat_csv(&report)?.as_bytes())?;
    }
    if a.report.is_some() {
        println!("top1 {:.4} zero-shot {:.4} over {} samples", report.top1, report.zero_shot_top1, report.samples);
    }
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<()> {
    let layers = match &a.input {
        Some(path) => decode_layers(&read_container(path)?)?,
        None => gaussian_tensors(a.tensors, a.numel, a.seed)?,
    };
    for &b in &a.bits {
        QuantConfig::new(b, 8, a.mode)?;
    }
    for &g in &a.groups {
        QuantConfig::new(8, g, a.mode)?;
    }
    let refs = as_refs(&layers);
    let combos: Vec<(u8, usize)> = a.bits.iter().flat_map(|&b| a.groups.iter().map(move |&g| (b, g))).collect();
    let pool = thread_pool()?;
    let rows = pool.install(|| combos.par_iter().map(|&(b, g)| sweep_row(&refs, b, g, a.mode)).collect::<qtta_core::Result<Vec<_>>>())?;
    emit(&to_table_csv(&rows)?, a.out.as_deref())
}

fn synth(a: SynthArgs) -> Result<()> {
    let spec = SynthSpec { classes: a.classes, dim: a.dim, samples: a.samples, sigma: a.sigma, delta: a.delta, rho: a.rho, seed: a.seed };
    let n = write_stream(&synth_stream(&spec)?, &a.out)?;
    println!("wrote {} ({n} bytes)", a.out.display());
    Ok(())
}

fn synth_model_cmd(a: SynthModelArgs) -> Result<()> {
    let spec = ModelSpec { width: a.width, depth: a.depth, embed: a.embed, seed: a.seed };
    let records: Vec<TensorRecord> = synth_model(&spec)?.iter().map(|(n, t)| TensorRecord::from_f32(n.as_str(), t)).collect();
    let n = write_container(&records, &a.out)?;
    println!("wrote {} ({n} bytes, {} tensors)", a.out.display(), records.len());
    Ok(())
}

fn footprint(a: FootprintArgs) -> Result<()> {
    let fp = memory_footprint(&read_container(&a.input)?)?;
    emit(&to_sorted_json(&fp)?, a.out.as_deref())
}
