//! Brute-force oracle for the group fits.
//!
//! The oracle scans 10^4 scales over `(0, 2 * range]` and, for asymmetric
//! groups, every zero-point, rounding codes optimally for each pair.

use qtta_core::quant::{fit_asymmetric, fit_symmetric, BitWidth, GroupFit};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const GRID: usize = 10_000;

fn oracle(group: &[f32], bits: BitWidth, symmetric: bool) -> f64 {
    let w: Vec<f64> = group.iter().map(|&v| f64::from(v)).collect();
    let lo = w.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = if symmetric { w.iter().fold(0.0f64, |m, v| m.max(v.abs())) } else { hi - lo };
    if range == 0.0 {
        return 0.0;
    }
    let max_code = f64::from(bits.max_code());
    let qmax = f64::from(bits.symmetric_max());
    let zeros: Vec<f64> = if symmetric { vec![0.0] } else { (0..=bits.max_code()).map(f64::from).collect() };
    let mut best = f64::INFINITY;
    for k in 1..=GRID {
        let s = 2.0 * range * k as f64 / GRID as f64;
        for &z in &zeros {
            let e: f64 = w
                .iter()
                .map(|&x| {
                    let q = if symmetric { (x / s).round().clamp(-qmax, qmax) } else { (x / s + z).round().clamp(0.0, max_code) - z };
                    (x - s * q).powi(2)
                })
                .sum();
            best = best.min(e);
        }
    }
    best
}

fn ratio(fit: &GroupFit, group: &[f32], best: f64) -> f64 {
    let e = fit.squared_error(group);
    if best > 1e-12 {
        e / best
    } else if e < 1e-12 {
        1.0
    } else {
        f64::INFINITY
    }
}

fn gaussian_group(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal) as f32).collect()
}

#[test]
fn worked_example_within_five_percent() {
    let g = [-1.0, -0.2, 0.3, 1.4];
    let b = BitWidth::try_from(2).unwrap();
    let r = ratio(&fit_asymmetric(&g, b), &g, oracle(&g, b, false));
    assert!(r <= 1.05, "ratio {r}");
}

#[test]
fn random_symmetric_group_within_five_percent() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let g = gaussian_group(&mut rng, 8);
    let b = BitWidth::try_from(3).unwrap();
    let r = ratio(&fit_symmetric(&g, b), &g, oracle(&g, b, true));
    assert!(r <= 1.05, "ratio {r}");
}

#[test]
fn small_groups_within_five_percent_of_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = [0.0f64; 2];
    for _ in 0..2000 {
        let n = rng.gen_range(1..=8);
        let b = BitWidth::try_from([1u8, 2, 3][rng.gen_range(0..3)]).unwrap();
        let g = gaussian_group(&mut rng, n);
        for (i, symmetric) in [false, true].into_iter().enumerate() {
            let fit = if symmetric { fit_symmetric(&g, b) } else { fit_asymmetric(&g, b) };
            let r = ratio(&fit, &g, oracle(&g, b, symmetric));
            assert!(r <= 1.05, "n={n} b={b} symmetric={symmetric} ratio {r} group {g:?}");
            worst[i] = worst[i].max(r);
        }
    }
    println!("worst ratio asymmetric {:.4} symmetric {:.4}", worst[0], worst[1]);
}

#[test]
fn larger_groups_stay_near_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for (n, bits) in [(16usize, 4u8), (32, 3), (64, 2), (64, 4)] {
        let b = BitWidth::try_from(bits).unwrap();
        for symmetric in [false, true] {
            let rs: Vec<f64> = (0..8)
                .map(|_| {
                    let g = gaussian_group(&mut rng, n);
                    let fit = if symmetric { fit_symmetric(&g, b) } else { fit_asymmetric(&g, b) };
                    ratio(&fit, &g, oracle(&g, b, symmetric))
                })
                .collect();
            let worst = rs.iter().copied().fold(0.0, f64::max);
            let mean = rs.iter().sum::<f64>() / rs.len() as f64;
            assert!(worst <= 1.15 && mean <= 1.03, "n={n} b={bits} symmetric={symmetric} worst {worst} mean {mean}");
        }
    }
}
