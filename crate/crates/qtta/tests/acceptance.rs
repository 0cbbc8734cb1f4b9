//! One line per acceptance criterion. Exits non-zero if any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use qtta_core::bench::{gaussian_tensors, memory_footprint, nominal_bits_per_weight, sweep_row, synth_stream, SynthSpec};
use qtta_core::format::{FeatureStream, TensorRecord};
use qtta_core::qlinear::{dot, normalized_entropy, qmatvec, softmax, Prototypes, DEFAULT_LOGIT_SCALE};
use qtta_core::quant::{
    dequantize_tensor, fit_asymmetric, fit_symmetric, pack_codes, quantize_tensor, unpack_codes, BitWidth, QuantConfig, QuantMode,
};
use qtta_core::tta::{AdaptationConfig, Engine, Eviction};
use qtta_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use tempfile::TempDir;

const GOLDEN_REPORT: &str = include_str!("golden/seed42_cifar10.json");
const GOLDEN_QFS_SHA256: &str = include_str!("golden/seed42.qfs.sha256");

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn check(cond: bool, ok: String, bad: String) -> Outcome {
    if cond {
        Ok(ok)
    } else {
        Err(bad)
    }
}

fn within(elapsed: Duration, limit_s: f64, detail: String) -> Outcome {
    let s = elapsed.as_secs_f64();
    check(s < limit_s, format!("{detail}, {s:.2}s"), format!("{detail}, but took {s:.2}s (limit {limit_s}s)"))
}

fn qtta(args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_qtta")).args(args).output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("qtta {args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()));
    }
    Ok(out.stdout)
}

fn read(path: &Path) -> Result<Vec<u8>, String> {
    std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal) as f32).collect()
}

/// Best squared error over every zero-point and 10^4 scales in `(0, 2 * range]`.
fn brute_force(w: &[f32], bits: BitWidth, symmetric: bool) -> f64 {
    let w: Vec<f64> = w.iter().map(|&v| f64::from(v)).collect();
    let lo = w.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = if symmetric { w.iter().fold(0.0f64, |m, v| m.max(v.abs())) } else { hi - lo };
    if range == 0.0 {
        return 0.0;
    }
    let top = f64::from(bits.max_code());
    let qmax = f64::from(bits.symmetric_max());
    let zeros: Vec<f64> = if symmetric { vec![0.0] } else { (0..=bits.max_code()).map(f64::from).collect() };
    let mut best = f64::INFINITY;
    for k in 1..=10_000 {
        let s = 2.0 * range * f64::from(k) / 10_000.0;
        for &z in &zeros {
            let e: f64 = w
                .iter()
                .map(|&x| {
                    let q = if symmetric { (x / s).round().clamp(-qmax, qmax) } else { (x / s + z).round().clamp(0.0, top) - z };
                    (x - s * q).powi(2)
                })
                .sum();
            best = best.min(e);
        }
    }
    best
}

fn quantizer_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let cases: Vec<(Vec<f32>, BitWidth)> = (0..1000)
        .map(|_| {
            let n = rng.gen_range(1..=8);
            let b = BitWidth::try_from(rng.gen_range(1..=3u8)).unwrap();
            (gaussian(&mut rng, n), b)
        })
        .collect();
    let worst = cases
        .par_iter()
        .map(|(w, b)| {
            let mut r = 1.0f64;
            for (sym, e) in [(false, fit_asymmetric(w, *b).squared_error(w)), (true, fit_symmetric(w, *b).squared_error(w))] {
                let best = brute_force(w, *b, sym);
                r = r.max(if best > 1e-12 { e / best } else if e < 1e-12 { 1.0 } else { f64::INFINITY });
            }
            r
        })
        .reduce(|| 1.0, f64::max);
    if worst > 1.05 {
        return Err(format!("worst ratio {worst:.4} over 1000 groups exceeds 1.05"));
    }
    within(start.elapsed(), 60.0, format!("1000 groups x 2 modes, worst ratio {worst:.4} <= 1.05"))
}

fn packing_bijection() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2000);
    let mut vectors = 0;
    for bits in BitWidth::ALL {
        for _ in 0..2000 {
            let n = rng.gen_range(0..300);
            let codes: Vec<u8> = (0..n).map(|_| rng.gen_range(0..=bits.max_code() as u8)).collect();
            let packed = pack_codes(&codes, bits).map_err(|e| e.to_string())?;
            let back = unpack_codes(&packed, bits, n).map_err(|e| e.to_string())?;
            if back != codes {
                return Err(format!("{bits}-bit roundtrip mismatch on {n} codes"));
            }
            vectors += 1;
        }
    }
    within(start.elapsed(), 10.0, format!("{vectors} vectors over bits 1,2,3,4,8 roundtrip exactly"))
}

fn sweep_monotonicity() -> Outcome {
    let tensors = gaussian_tensors(100, 4096, 3000).map_err(|e| e.to_string())?;
    let refs: Vec<(&str, &Tensor)> = tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
    let bits = [1u8, 2, 3, 4, 8];
    let groups = [8usize, 16, 32, 64, 128, 256, 512];
    let run = |combos: Vec<(u8, usize)>| {
        combos.into_par_iter().map(|(b, g)| sweep_row(&refs, b, g, QuantMode::Asymmetric)).collect::<qtta_core::Result<Vec<_>>>()
    };
    let by_bits = run(bits.iter().map(|&b| (b, 64)).collect()).map_err(|e| e.to_string())?;
    let by_group = run(groups.iter().map(|&g| (4, g)).collect()).map_err(|e| e.to_string())?;
    let errs: Vec<f64> = by_bits.iter().map(|r| r.rel_error).collect();
    if !errs.windows(2).all(|w| w[1] < w[0]) {
        return Err(format!("rel_error not strictly decreasing over bits: {errs:?}"));
    }
    if errs[4] >= 0.01 {
        return Err(format!("8-bit rel_error {} not below 0.01", errs[4]));
    }
    let bytes: Vec<u64> = by_group.iter().map(|r| r.bytes).collect();
    if !bytes.windows(2).all(|w| w[1] < w[0]) {
        return Err(format!("bytes not strictly decreasing over groups: {bytes:?}"));
    }
    for (b, g) in [(4u8, 64usize), (8, 128)] {
        let cfg = QuantConfig::asymmetric(b, g).unwrap();
        let recs = refs
            .iter()
            .map(|(n, t)| Ok(TensorRecord::from_quantized(*n, &quantize_tensor(t, &cfg)?)))
            .collect::<qtta_core::Result<Vec<_>>>()
            .map_err(|e| e.to_string())?;
        let got = memory_footprint(&recs).map_err(|e| e.to_string())?.bits_per_weight;
        let want = f64::from(b) + 32.0 / g as f64;
        if (got - want).abs() > 0.01 * want || nominal_bits_per_weight(b, g) != want {
            return Err(format!("{b}-bit/g{g}: {got} bits/weight, expected {want}"));
        }
    }
    let fmt: Vec<String> = errs.iter().map(|e| format!("{e:.4}")).collect();
    Ok(format!("rel_error {} over bits 1..8; bytes {}..{} over groups 8..512; 4.5 and 8.25 bits/weight", fmt.join(" > "), bytes[0], bytes[6]))
}

/// Argmax of raw dot products in f64, with no normalization and no engine code.
fn zero_shot_predictions(stream: &FeatureStream) -> Vec<usize> {
    stream
        .iter()
        .map(|(f, _)| {
            let mut best = (0, f64::NEG_INFINITY);
            for c in 0..stream.classes() {
                let s: f64 = f.iter().zip(stream.prototype(c)).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum();
                if s > best.1 {
                    best = (c, s);
                }
            }
            best.0
        })
        .collect()
}

fn zero_shot_equivalence(dir: &TempDir) -> Outcome {
    let mut samples = 0;
    for (seed, sigma, classes, dim) in [(1u64, 0.3, 10, 64), (2, 1.0, 37, 32), (3, 0.05, 5, 128), (4, 0.6, 100, 48)] {
        let spec = SynthSpec { classes, dim, samples: 1000, sigma, delta: 0.6, rho: 0.1, seed };
        let stream = synth_stream(&spec).map_err(|e| e.to_string())?;
        let oracle = zero_shot_predictions(&stream);

        let mut cfg = AdaptationConfig::preset("cifar10").unwrap();
        cfg.positive.enabled = false;
        cfg.negative.enabled = false;
        let protos = Prototypes::new(dim, stream.prototypes().to_vec(), DEFAULT_LOGIT_SCALE).unwrap();
        let mut engine = Engine::new(protos, cfg).unwrap();
        for (t, (f, _)) in stream.iter().enumerate() {
            let p = engine.step(f).map_err(|e| e.to_string())?.prediction;
            if p != oracle[t] {
                return Err(format!("seed {seed} sample {t}: engine {p}, oracle {}", oracle[t]));
            }
        }

        let path = dir.path().join(format!("zs{seed}.qfs"));
        qtta::io::write_stream(&stream, &path).map_err(|e| e.to_string())?;
        let out = qtta(&["adapt", "--features", path.to_str().unwrap(), "--preset", "cifar10", "--no-pos", "--no-neg"])?;
        let report: serde_json::Value = serde_json::from_slice(&out).map_err(|e| e.to_string())?;
        let correct = oracle.iter().zip(stream.labels()).filter(|(p, y)| **p == **y as usize).count() as u64;
        if report["correct"].as_u64() != Some(correct) || report["top1"] != report["zero_shot_top1"] {
            return Err(format!("seed {seed}: adapt reports {} correct, oracle {correct}", report["correct"]));
        }
        samples += stream.len();
    }
    Ok(format!("{samples} samples over 4 streams, every argmax matches"))
}

fn cache_invariants() -> Outcome {
    let (classes, dim) = (10, 32);
    let mut rng = ChaCha8Rng::seed_from_u64(5000);
    let protos: Vec<f32> = (0..classes)
        .flat_map(|_| {
            let v = gaussian(&mut rng, dim);
            let n = dot(&v, &v).sqrt() as f32;
            v.into_iter().map(move |x| x / n)
        })
        .collect();
    let mut neg_admits = 0usize;
    let mut pos_admits = 0usize;
    for eviction in [Eviction::Fifo, Eviction::EntropyPriority] {
        let mut cfg = AdaptationConfig::preset("cifar10").unwrap();
        cfg.eviction = eviction;
        let mut engine = Engine::new(Prototypes::new(dim, protos.clone(), DEFAULT_LOGIT_SCALE).unwrap(), cfg).unwrap();
        for t in 0..10_000 {
            // Blend two prototypes with noise so confidences span the entropy window.
            let (a, b) = (rng.gen_range(0..classes), rng.gen_range(0..classes));
            let mix: f32 = rng.gen_range(0.0..1.0);
            let noise: f32 = rng.gen_range(0.0..0.3);
            let f: Vec<f32> = (0..dim)
                .map(|j| mix * protos[a * dim + j] + (1.0 - mix) * protos[b * dim + j] + noise * rng.sample::<f32, _>(StandardNormal))
                .collect();
            let out = engine.step(&f).map_err(|e| e.to_string())?;
            let p = softmax(&out.base_logits);
            let state = engine.state();
            if let Some(q) = state.positive.iter().find(|q| q.len() > cfg.positive.capacity) {
                return Err(format!("step {t}: positive queue holds {}", q.len()));
            }
            if let Some(q) = state.negative.iter().find(|q| q.len() > cfg.negative.capacity) {
                return Err(format!("step {t}: negative queue holds {}", q.len()));
            }
            pos_admits += usize::from(out.admitted_positive);
            if out.admitted_negative {
                neg_admits += 1;
                let h = normalized_entropy(&p);
                if !(0.2..=0.5).contains(&h) {
                    return Err(format!("step {t}: negative admission at entropy {h}"));
                }
                let c = qtta_core::qlinear::argmax(&p);
                let entry = state.negative[c].back().ok_or("admitted entry missing")?;
                if let Some(k) = (0..classes).find(|&k| entry.prob[k] > p[k] as f32) {
                    return Err(format!("step {t}: masked prob {} exceeds {}", entry.prob[k], p[k]));
                }
            }
        }
    }
    if neg_admits == 0 || pos_admits == 0 {
        return Err(format!("vacuous fuzz: {pos_admits} positive and {neg_admits} negative admissions"));
    }
    Ok(format!("2 x 10^4 steps (fifo, entropy priority), {pos_admits} positive and {neg_admits} negative admissions, queues <= 3/2"))
}

fn golden_gain(dir: &TempDir) -> Outcome {
    let start = Instant::now();
    let qfs = dir.path().join("g42.qfs");
    let report = dir.path().join("g42.json");
    let qfs_s = qfs.to_str().unwrap();
    qtta(&["synth", "--classes", "10", "--dim", "64", "--samples", "2000", "--sigma", "0.3", "--delta", "0.6", "--rho", "0.1", "--seed", "42", "--out", qfs_s])?;
    qtta(&["adapt", "--features", qfs_s, "--preset", "cifar10", "--report", report.to_str().unwrap()])?;
    let elapsed = start.elapsed();
    let digest = format!("{:x}", Sha256::digest(read(&qfs)?));
    if digest != GOLDEN_QFS_SHA256.trim() {
        return Err(format!("stream digest {digest} differs from the golden file"));
    }
    let bytes = read(&report)?;
    if bytes != GOLDEN_REPORT.as_bytes() {
        return Err("report differs from the golden file".into());
    }
    let r: serde_json::Value = serde_json::from_slice(&bytes).map_err(|e| e.to_string())?;
    let (top1, zs) = (r["top1"].as_f64().unwrap(), r["zero_shot_top1"].as_f64().unwrap());
    let gain = 100.0 * (top1 - zs);
    let detail = format!("top1 {top1:.4} vs zero-shot {zs:.4} (gain {gain:+.2} pp, need >= 2.00), golden reproduced, {:.2}s", elapsed.as_secs_f64());
    if elapsed.as_secs_f64() >= 30.0 {
        return Err(format!("{detail}, over the 30s limit"));
    }
    check(gain >= 2.0 - 1e-9, detail.clone(), detail)
}

fn qmatvec_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7000);
    let mut worst = 0.0f64;
    for i in 0..100 {
        let rows = rng.gen_range(1..48);
        let cols = rng.gen_range(1..300);
        let bits = BitWidth::ALL[i % 5];
        let group = [8, 16, 32, 64, 128, 256, 512][rng.gen_range(0..7)];
        let mode = if i % 2 == 0 { QuantMode::Asymmetric } else { QuantMode::Symmetric };
        let w = Tensor::new(vec![rows, cols], gaussian(&mut rng, rows * cols)).unwrap();
        let x = gaussian(&mut rng, cols);
        let qt = quantize_tensor(&w, &QuantConfig::new(bits.get(), group, mode).unwrap()).map_err(|e| e.to_string())?;
        let dense = dequantize_tensor(&qt).map_err(|e| e.to_string())?;
        let y = qmatvec(&qt, &x).map_err(|e| e.to_string())?;
        let norm = dense.data().chunks_exact(cols).map(|r| dot(r, &x).powi(2)).sum::<f64>().sqrt();
        let diff = dense.data().chunks_exact(cols).zip(&y).map(|(r, &yi)| (dot(r, &x) - f64::from(yi)).powi(2)).sum::<f64>().sqrt();
        let rel = if norm > 0.0 { diff / norm } else { diff };
        worst = worst.max(rel);
        if rel >= 1e-5 {
            return Err(format!("instance {i} ({rows}x{cols}, {bits}-bit g{group} {mode}): relative error {rel:e}"));
        }
    }
    Ok(format!("100 instances, worst relative error {worst:.2e} < 1e-5"))
}

fn determinism(dir: &TempDir) -> Outcome {
    let run = |tag: &str| -> Result<Vec<Vec<u8>>, String> {
        let p = |n: &str| dir.path().join(format!("{tag}.{n}")).to_str().unwrap().to_string();
        qtta(&["synth", "--samples", "500", "--seed", "8", "--out", &p("qfs")])?;
        qtta(&["synth-model", "--width", "128", "--embed", "64", "--seed", "8", "--out", &p("model.qtk")])?;
        qtta(&["quantize", "--input", &p("model.qtk"), "--preset", "lqa-lite", "--out", &p("q.qtk"), "--save-plan", &p("plan.toml")])?;
        qtta(&["adapt", "--features", &p("qfs"), "--preset", "caltech101", "--model", &p("q.qtk"), "--report", &p("json"), "--csv", &p("csv")])?;
        let sweep = qtta(&["sweep", "--tensors", "4", "--numel", "1024", "--seed", "8"])?;
        let footprint = qtta(&["footprint", &p("q.qtk")])?;
        let mut files = ["qfs", "model.qtk", "q.qtk", "q.qtk.report.json", "plan.toml", "json", "csv"]
            .iter()
            .map(|n| read(Path::new(&p(n))))
            .collect::<Result<Vec<_>, _>>()?;
        files.extend([sweep, footprint]);
        Ok(files)
    };
    let (a, b) = (run("a")?, run("b")?);
    check(a == b, format!("{} outputs byte-identical across two runs", a.len()), "outputs differ between identical invocations".into())
}

fn main() {
    let dir = TempDir::new().expect("temp dir");
    let criteria: [Criterion; 8] = [
        ("quantizer oracle", Box::new(quantizer_oracle)),
        ("packing bijection", Box::new(packing_bijection)),
        ("sweep monotonicity", Box::new(sweep_monotonicity)),
        ("zero-shot equivalence", Box::new(|| zero_shot_equivalence(&dir))),
        ("cache invariants", Box::new(cache_invariants)),
        ("adaptation gain golden run", Box::new(|| golden_gain(&dir))),
        ("qmatvec equivalence", Box::new(qmatvec_equivalence)),
        ("determinism", Box::new(|| determinism(&dir))),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(detail) => println!("PASS  {}. {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {}. {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
