//! Oracles shared by the oracle tests and the acceptance suite.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use voicecloak::attack::{self, AttackConfig, AttackContext};
use voicecloak::encoder::{forward, init_random, EncoderConfig};
use voicecloak::spectral::{log_mel, mel_matrix};
use voicecloak::Matrix;

/// Threshold sweep at every midpoint between distinct scores plus both
/// extremes; a score is accepted when it lies above the threshold. EER is
/// linearly interpolated where FAR - FRR first reaches zero or below.
pub fn brute_force_eer(tar: &[f64], non: &[f64]) -> f64 {
    let mut all: Vec<f64> = tar.iter().chain(non).copied().collect();
    all.sort_by(|a, b| a.partial_cmp(b).unwrap());
    all.dedup();
    let mut thresholds = vec![all[0] - 1.0];
    for w in all.windows(2) {
        thresholds.push(0.5 * (w[0] + w[1]));
    }
    thresholds.push(all[all.len() - 1] + 1.0);

    let rates: Vec<(f64, f64)> = thresholds
        .iter()
        .map(|&th| {
            let fa = non.iter().filter(|&&s| s > th).count() as f64 / non.len() as f64;
            let fr = tar.iter().filter(|&&s| s <= th).count() as f64 / tar.len() as f64;
            (fa, fr)
        })
        .collect();
    for k in 0..rates.len() {
        let (fa, fr) = rates[k];
        if fa - fr <= 0.0 {
            if k == 0 {
                return fa;
            }
            let (pa, pr) = rates[k - 1];
            let (d0, d1) = (pa - pr, fa - fr);
            let t = d0 / (d0 - d1);
            return pa + t * (fa - pa);
        }
    }
    unreachable!("the reject-all point always has FAR <= FRR")
}

fn tiny_config() -> EncoderConfig {
    EncoderConfig {
        n_mels: 16,
        conv_channels: vec![4, 4],
        pool_after: vec![0],
        embed_dim: 8,
        min_frames: 2,
        input_norm: true,
    }
}

/// Runs `runs` randomized FGSM/I-FGSM attacks on a tiny encoder and
/// returns the worst `|x~ - x| - eps` and the smallest entry of `x~`.
pub fn budget_sweep(runs: u64) -> (f64, f64) {
    let mut worst_excess = f64::NEG_INFINITY;
    let mut min_entry = f64::INFINITY;
    let cfg = tiny_config();
    let mel = mel_matrix(512, 16, 16000).unwrap();
    for run in 0..runs {
        let mut rng = ChaCha8Rng::seed_from_u64(run);
        let ws = init_random(&cfg, run).unwrap();
        let frames = rng.random_range(4..10);
        let x = Matrix::from_fn(frames, 257, |_, _| {
            if rng.random_bool(0.2) {
                0.0
            } else {
                rng.random_range(0.0..0.5)
            }
        });
        let ref_mag = Matrix::from_fn(frames, 257, |_, _| rng.random_range(0.0..0.5));
        let reference = attack::embed_magnitude(&ref_mag, &mel, &ws).unwrap();
        let ctx = AttackContext {
            mel: &mel,
            weights: &ws,
            reference: &reference,
            seed: run,
        };
        let eps = rng.random_range(0.001..0.1);
        let cfg = AttackConfig {
            epsilon: eps,
            alpha: eps * rng.random_range(0.05..=1.0),
            iterations: rng.random_range(1..6),
            clamp_nonnegative: true,
        };
        let adv = if run % 2 == 0 {
            attack::ifgsm(&x, &ctx, &cfg).unwrap().adv_magnitude
        } else {
            attack::fgsm(&x, &ctx, eps, true).unwrap().adv_magnitude
        };
        for (a, b) in adv.as_slice().iter().zip(x.as_slice()) {
            worst_excess = worst_excess.max((a - b).abs() - eps);
            min_entry = min_entry.min(*a);
        }
    }
    (worst_excess, min_entry)
}

/// Finite-difference check of the attack-loss gradient w.r.t. the STFT
/// magnitude at `samples` random coordinates, with central differences at
/// h = 1e-5.
///
/// A coordinate is compared only when the encoder's ReLU pattern is the same
/// at `x - h`, `x` and `x + h`: then the loss is smooth on that segment and
/// the central difference estimates the derivative. Segments that straddle a
/// ReLU kink are counted in `skipped`; the classification depends on the
/// forward function alone, never on the analytic gradient. Errors are
/// relative to `max(|analytic|, |fd|, 1e-3 * max|gradient|)`.
pub struct FdReport {
    pub worst: f64,
    pub checked: usize,
    pub skipped: usize,
}

pub fn end_to_end_fd_check(seed: u64, samples: usize) -> FdReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ws = init_random(&EncoderConfig::default(), seed).unwrap();
    let mel = mel_matrix(512, 64, 16000).unwrap();
    let frames = rng.random_range(8..24);
    let x = Matrix::from_fn(frames, 257, |_, _| rng.random_range(0.05..1.0));
    let other = Matrix::from_fn(frames, 257, |_, _| rng.random_range(0.05..1.0));
    let reference = attack::embed_magnitude(&other, &mel, &ws).unwrap();
    let ctx = AttackContext {
        mel: &mel,
        weights: &ws,
        reference: &reference,
        seed,
    };
    let pattern = |m: &Matrix| forward(&log_mel(m, &mel).unwrap(), &ws).unwrap().1.relu_pattern();
    let base = pattern(&x);
    let (_, grad) = attack::loss_and_grad(&x, &ctx).unwrap();
    let scale = grad.as_slice().iter().fold(0.0f64, |a, b| a.max(b.abs()));
    assert!(scale > 0.0);
    let h = 1e-5;
    let mut report = FdReport {
        worst: 0.0,
        checked: 0,
        skipped: 0,
    };
    for _ in 0..samples {
        let idx = rng.random_range(0..x.as_slice().len());
        let mut p = x.clone();
        p.as_mut_slice()[idx] += h;
        let mut q = x.clone();
        q.as_mut_slice()[idx] -= h;
        if pattern(&p) != base || pattern(&q) != base {
            report.skipped += 1;
            continue;
        }
        let fd = (attack::loss(&p, &ctx).unwrap() - attack::loss(&q, &ctx).unwrap()) / (2.0 * h);
        let a = grad.as_slice()[idx];
        report.worst = report
            .worst
            .max((fd - a).abs() / a.abs().max(fd.abs()).max(1e-3 * scale));
        report.checked += 1;
    }
    report
}
