use alloc::vec::Vec;

use super::{BitWidth, FitOptions, QuantMode};

/// Guard scale for groups that carry no magnitude (2^-24, the smallest
/// positive fp16 value, so it survives metadata storage unchanged).
pub const SCALE_FLOOR: f64 = 1.0 / 16_777_216.0;

/// Fitted quantization parameters for one group.
///
/// `codes` are signed for symmetric fits and unsigned (`0..=2^b-1`) for
/// asymmetric ones; `zero_point` is always zero for symmetric fits.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupFit {
    pub codes: Vec<i32>,
    pub scale: f64,
    pub zero_point: i32,
    pub bits: BitWidth,
    pub mode: QuantMode,
}

impl GroupFit {
    pub fn dequantize(&self) -> Vec<f64> {
        self.codes.iter().map(|&q| self.scale * f64::from(q - self.zero_point)).collect()
    }

    pub fn squared_error(&self, group: &[f32]) -> f64 {
        group
            .iter()
            .zip(self.dequantize())
            .map(|(&w, r)| {
                let d = f64::from(w) - r;
                d * d
            })
            .sum()
    }
}

#[inline]
fn round_clip(v: f64, lo: f64, hi: f64) -> f64 {
    libm::round(v).clamp(lo, hi)
}

fn asym_codes(w: &[f64], scale: f64, zero: f64, max_code: f64, out: &mut Vec<f64>) {
    out.clear();
    out.extend(w.iter().map(|&x| round_clip(x / scale + zero, 0.0, max_code)));
}

fn asym_error(w: &[f64], q: &[f64], scale: f64, zero: f64) -> f64 {
    w.iter()
        .zip(q)
        .map(|(&x, &c)| {
            let d = x - scale * (c - zero);
            d * d
        })
        .sum()
}

/// Scale multipliers (relative to the min-max scale) probed when choosing
/// where to start the alternating refinement: a log-spaced sweep over
/// `[1/4, 2]`.
const SCALE_PROBES: usize = 33;

/// Extra starts that land the extreme weight exactly on one of the top codes.
const EDGE_PROBES: u32 = 8;

const EXHAUSTIVE_ZERO_LEVELS: u32 = 15;

/// Number of probed starting points refined in addition to the min-max start.
const REFINED_STARTS: usize = 4;

/// The `REFINED_STARTS` lowest-error candidates seen so far.
struct Shortlist<T> {
    entries: [(f64, Option<T>); REFINED_STARTS],
}

impl<T: Copy> Shortlist<T> {
    fn new() -> Self {
        Self { entries: [(f64::INFINITY, None); REFINED_STARTS] }
    }

    fn offer(&mut self, err: f64, item: T) {
        let Some(pos) = self.entries.iter().position(|e| err < e.0) else {
            return;
        };
        self.entries[pos..].rotate_right(1);
        self.entries[pos] = (err, Some(item));
    }

    fn into_iter(self) -> impl Iterator<Item = T> {
        self.entries.into_iter().filter_map(|(_, item)| item)
    }
}

fn probe_ratio(k: usize) -> f64 {
    libm::exp2(-2.0 + 3.0 * k as f64 / (SCALE_PROBES - 1) as f64)
}

pub fn fit_asymmetric(group: &[f32], bits: BitWidth) -> GroupFit {
    fit_asymmetric_with(group, bits, FitOptions::default())
}

/// Asymmetric fit of scale and integer zero-point.
///
/// Starts from the min-max parameters and from the best point of a coarse
/// scale sweep, then alternates exact least-squares updates of codes, scale
/// and zero-point from each start. Every sub-step minimises the squared error
/// in its own variable, so the result is never worse than the min-max
/// initialisation.
pub fn fit_asymmetric_with(group: &[f32], bits: BitWidth, opts: FitOptions) -> GroupFit {
    let w: Vec<f64> = group.iter().map(|&v| f64::from(v)).collect();
    let (lo, hi) = w.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let levels = bits.max_code();
    let max_code = f64::from(levels);

    if w.is_empty() || lo == hi {
        return constant_group(w.len(), if w.is_empty() { 0.0 } else { lo }, bits);
    }

    let mut q = Vec::with_capacity(w.len());
    let eval = |scale: f64, zero: f64, q: &mut Vec<f64>| {
        asym_codes(&w, scale, zero, max_code, q);
        asym_error(&w, q, scale, zero)
    };

    if exact_search_fits(w.len(), levels + 1) {
        let (scale, zero) = exact_asymmetric(&w, levels, &mut q);
        asym_codes(&w, scale, zero, max_code, &mut q);
        return finish(&q, scale, zero, bits, QuantMode::Asymmetric);
    }

    let base = (hi - lo) / max_code;
    let minmax = (base, round_clip(-lo / base, 0.0, max_code));

    // Coarse search for basins: each probed scale is paired with the
    // zero-points that pin either end of the range to the code grid.
    // Narrow code ranges try every zero-point instead.
    let mut shortlist = Shortlist::<(f64, f64)>::new();
    let mut consider = |scale: f64, q: &mut Vec<f64>| {
        if levels <= EXHAUSTIVE_ZERO_LEVELS {
            for z in 0..=levels {
                let zero = f64::from(z);
                shortlist.offer(eval(scale, zero, q), (scale, zero));
            }
        } else {
            for zero in [round_clip(-lo / scale, 0.0, max_code), round_clip(max_code - hi / scale, 0.0, max_code)] {
                shortlist.offer(eval(scale, zero, q), (scale, zero));
            }
        }
    };
    // Zero-points are clipped to the code range, so one-sided groups are
    // also probed around the range widened to include zero.
    let spans = [hi - lo, hi.max(0.0) - lo.min(0.0)];
    for (i, &span) in spans.iter().enumerate() {
        if i == 1 && span == spans[0] {
            break;
        }
        for k in 0..SCALE_PROBES {
            consider(span / max_code * probe_ratio(k), &mut q);
        }
        for j in 0..EDGE_PROBES.min(levels) {
            consider(span / f64::from(levels - j), &mut q);
        }
    }

    let mut best = refine_asymmetric(&w, minmax, max_code, opts, &mut q);
    for start in shortlist.into_iter().filter(|&s| s != minmax) {
        let alt = refine_asymmetric(&w, start, max_code, opts, &mut q);
        if alt.2 < best.2 {
            best = alt;
        }
    }

    let (scale, zero, _) = best;
    // Final codes are the exact rounding for the chosen (s, z).
    asym_codes(&w, scale, zero, max_code, &mut q);
    finish(&q, scale, zero, bits, QuantMode::Asymmetric)
}

/// Alternating minimisation from `(scale, zero)`; returns the best
/// `(scale, zero, error)` visited, with the error of optimal codes.
fn refine_asymmetric(w: &[f64], start: (f64, f64), max_code: f64, opts: FitOptions, q: &mut Vec<f64>) -> (f64, f64, f64) {
    let (mut scale, mut zero) = start;
    asym_codes(w, scale, zero, max_code, q);
    let mut err = asym_error(w, q, scale, zero);
    let mut best = (scale, zero, err);
    let n = w.len() as f64;

    for _ in 0..opts.max_iters {
        asym_codes(w, scale, zero, max_code, q);

        let (num, den) = w.iter().zip(q.iter()).fold((0.0, 0.0), |(num, den), (&x, &c)| {
            let k = c - zero;
            (num + x * k, den + k * k)
        });
        if den > 0.0 {
            let s = num / den;
            if s.is_finite() && s > 0.0 {
                scale = s;
            }
        }

        let mean_shift = w.iter().zip(q.iter()).map(|(&x, &c)| c - x / scale).sum::<f64>() / n;
        zero = round_clip(mean_shift, 0.0, max_code);

        let prev = err;
        // Codes are re-rounded for the new (s, z), which can only lower the error.
        asym_codes(w, scale, zero, max_code, q);
        err = asym_error(w, q, scale, zero);
        if err < best.2 {
            best = (scale, zero, err);
        }
        if prev - err <= opts.rel_tol * prev {
            break;
        }
    }
    best
}

/// Groups small enough (`n^2 * k^2` under this budget, `k` the number of
/// zero-point or code choices) are solved exactly instead of by probing.
const EXACT_BUDGET: usize = 1 << 14;

fn exact_search_fits(n: usize, choices: u32) -> bool {
    let k = choices as usize;
    n.saturating_mul(n).saturating_mul(k).saturating_mul(k) <= EXACT_BUDGET
}

/// Exact minimiser over `s > 0` for codes `round_clip(w/s + z)` with `z`
/// fixed, appended to `best`.
///
/// The error is continuous and piecewise quadratic in `s`, with breakpoints
/// where some `w_i/s + z` crosses a half-integer. Within each piece the codes
/// are fixed, so the least-squares scale for those codes, re-rounded, is at
/// least as good as the piece's minimum. Trying every piece is exact.
fn exact_scale_for_zero(w: &[f64], zero: f64, max_code: f64, q: &mut Vec<f64>, best: &mut (f64, f64, f64)) {
    let mut breaks: Vec<f64> = Vec::with_capacity(w.len() * max_code as usize);
    for &x in w {
        let mut k = 0.0;
        while k < max_code {
            let d = k + 0.5 - zero;
            if x * d > 0.0 {
                breaks.push(x / d);
            }
            k += 1.0;
        }
    }
    if breaks.is_empty() {
        return;
    }
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();

    let probes = core::iter::once(breaks[0] * 0.5)
        .chain(breaks.windows(2).map(|p| 0.5 * (p[0] + p[1])))
        .chain(core::iter::once(breaks[breaks.len() - 1] * 2.0));
    for mid in probes {
        asym_codes(w, mid, zero, max_code, q);
        let (num, den) = w.iter().zip(q.iter()).fold((0.0, 0.0), |(num, den), (&x, &c)| {
            let k = c - zero;
            (num + x * k, den + k * k)
        });
        if den <= 0.0 {
            continue;
        }
        let s = num / den;
        if !(s.is_finite() && s > 0.0) {
            continue;
        }
        asym_codes(w, s, zero, max_code, q);
        let e = asym_error(w, q, s, zero);
        // Among equal-error fits keep the coarsest grid; its scale is likelier to survive fp16 storage.
        let tol = best.2 * 1e-12;
        if e < best.2 - tol || (e <= best.2 + tol && s > best.0) {
            *best = (s, zero, e);
        }
    }
}

/// Global optimum over every zero-point in `[0, levels]`.
fn exact_asymmetric(w: &[f64], levels: u32, q: &mut Vec<f64>) -> (f64, f64) {
    let max_code = f64::from(levels);
    let (lo, hi) = w.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    // Seed with the min-max point so the result never exceeds it.
    let base = (hi - lo) / max_code;
    let zero = round_clip(-lo / base, 0.0, max_code);
    asym_codes(w, base, zero, max_code, q);
    let mut best = (base, zero, asym_error(w, q, base, zero));
    for z in 0..=levels {
        exact_scale_for_zero(w, f64::from(z), max_code, q, &mut best);
    }
    (best.0, best.1)
}

/// Symmetric codes are the asymmetric ones on `[0, 2 q_max]` with the zero
/// point pinned at `q_max`, so the same piecewise search applies.
fn exact_symmetric(w: &[f64], qmax: u32, q: &mut Vec<f64>) -> f64 {
    let qm = f64::from(qmax);
    let absmax = w.iter().fold(0.0f64, |m, &v| m.max(libm::fabs(v)));
    let base = absmax / qm;
    sym_codes(w, base, qm, q);
    let mut best = (base, qm, sym_error(w, q, base));
    exact_scale_for_zero(w, qm, 2.0 * qm, q, &mut best);
    best.0
}

/// Packages the final codes, dividing code offsets by their common factor.
///
/// If every `q - z` is a multiple of `g`, then `(s g, z + (q - z) / g)`
/// reconstructs identically and is still the rounding of `w / (s g) + z`.
/// The coarser scale is the one a caller would write down (`s = 1` for an
/// identity block rather than `1/127`) and more often survives fp16 storage.
fn finish(q: &[f64], scale: f64, zero: f64, bits: BitWidth, mode: QuantMode) -> GroupFit {
    let offsets: Vec<i64> = q.iter().map(|&c| (c - zero) as i64).collect();
    let g = offsets.iter().fold(0i64, |g, &k| gcd(g, k.abs())).max(1);
    GroupFit {
        codes: offsets.iter().map(|&k| (zero as i64 + k / g) as i32).collect(),
        scale: scale * g as f64,
        zero_point: zero as i32,
        bits,
        mode,
    }
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Constant groups make the scale objective degenerate; encode `c` exactly.
fn constant_group(n: usize, c: f64, bits: BitWidth) -> GroupFit {
    let (code, zero, scale) = if c > 0.0 {
        (1, 0, c)
    } else if c < 0.0 {
        (0, 1, -c)
    } else {
        (0, 0, SCALE_FLOOR)
    };
    GroupFit { codes: alloc::vec![code; n], scale, zero_point: zero, bits, mode: QuantMode::Asymmetric }
}

fn sym_codes(w: &[f64], scale: f64, qmax: f64, out: &mut Vec<f64>) {
    out.clear();
    out.extend(w.iter().map(|&x| round_clip(x / scale, -qmax, qmax)));
}

fn sym_error(w: &[f64], q: &[f64], scale: f64) -> f64 {
    w.iter()
        .zip(q)
        .map(|(&x, &c)| {
            let d = x - scale * c;
            d * d
        })
        .sum()
}

pub fn fit_symmetric(group: &[f32], bits: BitWidth) -> GroupFit {
    fit_symmetric_with(group, bits, FitOptions::default())
}

/// Symmetric fit with the zero-point fixed at zero. Same search as the
/// asymmetric fit: `s0 = max|w| / q_max`, a coarse scale sweep, then
/// alternating code/scale updates. At one bit `q_max` is zero and only the
/// zero code exists.
pub fn fit_symmetric_with(group: &[f32], bits: BitWidth, opts: FitOptions) -> GroupFit {
    let w: Vec<f64> = group.iter().map(|&v| f64::from(v)).collect();
    let absmax = w.iter().fold(0.0f64, |m, &v| m.max(libm::fabs(v)));
    let qmax_code = bits.symmetric_max();
    let qmax = f64::from(qmax_code);

    if absmax == 0.0 || qmax_code == 0 {
        return GroupFit {
            codes: alloc::vec![0; w.len()],
            scale: SCALE_FLOOR,
            zero_point: 0,
            bits,
            mode: QuantMode::Symmetric,
        };
    }

    let mut q = Vec::with_capacity(w.len());
    if exact_search_fits(w.len(), qmax_code) {
        let scale = exact_symmetric(&w, qmax_code, &mut q);
        sym_codes(&w, scale, qmax, &mut q);
        return finish(&q, scale, 0.0, bits, QuantMode::Symmetric);
    }

    let base = absmax / qmax;
    let mut shortlist = Shortlist::<f64>::new();
    let candidates = (0..SCALE_PROBES)
        .map(|k| base * probe_ratio(k))
        .chain((0..EDGE_PROBES.min(qmax_code)).map(|j| absmax / f64::from(qmax_code - j)));
    for scale in candidates {
        sym_codes(&w, scale, qmax, &mut q);
        shortlist.offer(sym_error(&w, &q, scale), scale);
    }

    let mut best = refine_symmetric(&w, base, qmax, opts, &mut q);
    for start in shortlist.into_iter().filter(|&s| s != base) {
        let alt = refine_symmetric(&w, start, qmax, opts, &mut q);
        if alt.1 < best.1 {
            best = alt;
        }
    }

    sym_codes(&w, best.0, qmax, &mut q);
    finish(&q, best.0, 0.0, bits, QuantMode::Symmetric)
}

fn refine_symmetric(w: &[f64], start: f64, qmax: f64, opts: FitOptions, q: &mut Vec<f64>) -> (f64, f64) {
    let mut scale = start;
    sym_codes(w, scale, qmax, q);
    let mut err = sym_error(w, q, scale);
    let mut best = (scale, err);

    for _ in 0..opts.max_iters {
        let (num, den) = w.iter().zip(q.iter()).fold((0.0, 0.0), |(num, den), (&x, &c)| (num + x * c, den + c * c));
        if den > 0.0 {
            let s = num / den;
            if s.is_finite() && s > 0.0 {
                scale = s;
            }
        }
        let prev = err;
        sym_codes(w, scale, qmax, q);
        err = sym_error(w, q, scale);
        if err < best.1 {
            best = (scale, err);
        }
        if prev - err <= opts.rel_tol * prev {
            break;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bits(b: u8) -> BitWidth {
        BitWidth::try_from(b).unwrap()
    }

    fn minmax_init_error_asym(group: &[f32], b: BitWidth) -> f64 {
        let w: Vec<f64> = group.iter().map(|&v| f64::from(v)).collect();
        let lo = w.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let m = f64::from(b.max_code());
        let s = (hi - lo) / m;
        let z = round_clip(-lo / s, 0.0, m);
        let mut q = Vec::new();
        asym_codes(&w, s, z, m, &mut q);
        asym_error(&w, &q, s, z)
    }

    #[test]
    fn zero_group_asymmetric() {
        let fit = fit_asymmetric(&[0.0; 4], bits(4));
        assert!(fit.codes.iter().all(|&c| c == fit.codes[0]));
        assert_eq!(fit.dequantize(), alloc::vec![0.0; 4]);
        assert_eq!(fit.squared_error(&[0.0; 4]), 0.0);
        assert!(fit.scale > 0.0);
    }

    #[test]
    fn constant_group_is_exact() {
        for c in [0.7f32, -0.7, 3.25] {
            let g = [c; 4];
            let fit = fit_asymmetric(&g, bits(4));
            assert_eq!(fit.dequantize(), alloc::vec![f64::from(c); 4]);
            assert!(fit.codes.iter().all(|&q| (0..=15).contains(&q)));
        }
        let fit = fit_asymmetric(&[0.7f32; 4], bits(1));
        assert_eq!(fit.codes, alloc::vec![1; 4]);
        let fit = fit_asymmetric(&[-0.7f32; 4], bits(1));
        assert_eq!((fit.codes[0], fit.zero_point), (0, 1));
    }

    #[test]
    fn symmetric_representable_grid_is_exact() {
        let g = [0.5f32, -1.5, 1.0];
        let fit = fit_symmetric(&g, bits(8));
        assert_eq!(fit.squared_error(&g), 0.0);
        assert_eq!(fit.dequantize(), alloc::vec![0.5, -1.5, 1.0]);
        assert_eq!(fit.zero_point, 0);
    }

    #[test]
    fn symmetric_zero_group() {
        let fit = fit_symmetric(&[0.0; 5], bits(4));
        assert_eq!(fit.codes, alloc::vec![0; 5]);
        assert_eq!(fit.scale, SCALE_FLOOR);
    }

    #[test]
    fn symmetric_one_bit_keeps_only_zero() {
        let g = [0.3f32, -0.9];
        let fit = fit_symmetric(&g, bits(1));
        assert_eq!(fit.codes, alloc::vec![0, 0]);
        assert!((fit.squared_error(&g) - (0.09 + 0.81)).abs() < 1e-6);
    }

    #[test]
    fn symmetric_dequant_by_hand() {
        let fit = GroupFit { codes: alloc::vec![1, -1], scale: 0.25, zero_point: 0, bits: bits(4), mode: QuantMode::Symmetric };
        assert_eq!(fit.dequantize(), alloc::vec![0.25, -0.25]);
    }

    #[test]
    fn refinement_never_worse_than_minmax_init() {
        let groups: [&[f32]; 4] = [
            &[-1.0, -0.2, 0.3, 1.4],
            &[0.1, 0.11, 0.5, 2.0, -3.0, 0.0, 0.2, 0.3],
            &[5.0, 5.1, 5.2, 9.0],
            &[-0.01, 0.02, 0.015, -0.03, 0.0],
        ];
        for g in groups {
            for b in BitWidth::ALL {
                let fit = fit_asymmetric(g, b);
                assert!(fit.squared_error(g) <= minmax_init_error_asym(g, b) * (1.0 + 1e-12) + 1e-300);
                assert!(fit.codes.iter().all(|&q| q >= 0 && q as u32 <= b.max_code()));
                assert!(fit.zero_point >= 0 && fit.zero_point as u32 <= b.max_code());
                assert!(fit.scale > 0.0);
            }
        }
    }
}
