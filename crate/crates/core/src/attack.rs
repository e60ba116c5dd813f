//! FGSM / I-FGSM on the STFT magnitude and the protect-one-utterance
//! pipeline.
//!
//! The loss is the negative cosine similarity between the embedding of the
//! clean magnitude (computed once, then frozen) and the embedding of the
//! perturbed magnitude. Steps *ascend* that loss, pushing the perturbed
//! embedding away from the clean one, and every iterate is projected back
//! onto the L∞ ball of radius ε around the clean magnitude (and onto the
//! nonnegative orthant when `clamp_nonnegative` is set).

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio_io::{add_gaussian_noise, Waveform};
use crate::encoder::{self, cosine_loss, cosine_loss_grad, Embedding, WeightStore};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::metrics::{delta_cosd, snr_db};
use crate::spectral::{self, istft, log_mel, log_mel_backward, mel_matrix, stft, StftConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub epsilon: f64,
    pub alpha: f64,
    pub iterations: usize,
    pub clamp_nonnegative: bool,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.02,
            alpha: 0.0004,
            iterations: 50,
            clamp_nonnegative: true,
        }
    }
}

impl AttackConfig {
    /// Single-step configuration equivalent to FGSM with budget `epsilon`.
    pub fn fgsm(epsilon: f64) -> Self {
        Self {
            epsilon,
            alpha: epsilon,
            iterations: 1,
            clamp_nonnegative: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "epsilon must be >= 0, got {}",
                self.epsilon
            )));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::InvalidConfig(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if self.iterations > 1 && !(self.alpha > 0.0 && self.alpha <= self.epsilon) {
            return Err(Error::InvalidConfig(format!(
                "iterative attacks need 0 < alpha ({}) <= epsilon ({})",
                self.alpha, self.epsilon
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttackResult {
    #[serde(skip)]
    pub adv_magnitude: Matrix,
    /// Loss at every iterate, `x~_0 ..= x~_I`.
    pub loss_trajectory: Vec<f64>,
    /// Loss at the final iterate, measured on the magnitude itself.
    pub delta_cosd_final: f64,
}

/// Entrywise sign with `sign(0) = 0`.
pub fn sign_matrix(g: &Matrix) -> Matrix {
    g.map(|v| {
        if v > 0.0 {
            1.0
        } else if v < 0.0 {
            -1.0
        } else {
            0.0
        }
    })
}

/// Projects onto `[x - ε, x + ε]`, then (optionally) onto `[0, ∞)`.
pub fn clip_linf(x_tilde: &Matrix, x: &Matrix, epsilon: f64, clamp_nonnegative: bool) -> Result<Matrix> {
    if !x_tilde.same_shape(x) {
        return Err(Error::shape(x.shape_string(), x_tilde.shape_string()));
    }
    let mut out = x_tilde.clone();
    for (o, &c) in out.as_mut_slice().iter_mut().zip(x.as_slice()) {
        *o = o.clamp(c - epsilon, c + epsilon);
        if clamp_nonnegative && *o < 0.0 {
            *o = 0.0;
        }
    }
    Ok(out)
}

/// Everything the loss needs besides the perturbed magnitude.
#[derive(Debug, Clone, Copy)]
pub struct AttackContext<'a> {
    pub mel: &'a Matrix,
    pub weights: &'a WeightStore,
    /// Embedding of the clean magnitude; held fixed for the whole attack.
    pub reference: &'a Embedding,
    /// Seeds the step direction used when the gradient vanishes.
    pub seed: u64,
}

/// Embedding of a magnitude spectrogram through log-mel and the encoder.
pub fn embed_magnitude(mag: &Matrix, mel: &Matrix, ws: &WeightStore) -> Result<Embedding> {
    encoder::embed(&log_mel(mag, mel)?, ws)
}

pub fn loss(x_tilde: &Matrix, ctx: &AttackContext<'_>) -> Result<f64> {
    cosine_loss(ctx.reference, &embed_magnitude(x_tilde, ctx.mel, ctx.weights)?)
}

/// Loss and its exact gradient with respect to the magnitude.
pub fn loss_and_grad(x_tilde: &Matrix, ctx: &AttackContext<'_>) -> Result<(f64, Matrix)> {
    let feat = log_mel(x_tilde, ctx.mel)?;
    let (emb, cache) = encoder::forward(&feat, ctx.weights)?;
    let l = cosine_loss(ctx.reference, &emb)?;
    let ge = cosine_loss_grad(ctx.reference, &emb)?;
    let gfeat = encoder::backward(&cache, ctx.weights, &ge)?;
    let gx = log_mel_backward(&gfeat, x_tilde, ctx.mel)?;
    Ok((l, gx))
}

/// Seeded ±1 pattern on every bin some mel filter covers, zero elsewhere.
pub fn tie_break_direction(shape: (usize, usize), mel: &Matrix, seed: u64) -> Matrix {
    let live: Vec<bool> = (0..mel.cols())
        .map(|k| (0..mel.rows()).any(|m| mel.get(m, k) != 0.0))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_fn(shape.0, shape.1, |_, k| {
        let s = if rng.random::<bool>() { 1.0 } else { -1.0 };
        if live.get(k).copied().unwrap_or(false) {
            s
        } else {
            0.0
        }
    })
}

/// Step direction for one update: `sign(g)`, or a curvature probe when `g`
/// is identically zero.
///
/// The gradient is exactly zero at the clean start `x~ = x`, where the
/// perturbed embedding equals the reference and the loss sits at its
/// minimum of -1. There the direction is `sign(∇L(p))` at the probe point
/// `p = clip(x~ + step * r)` for the seeded pattern `r`; near the minimum
/// `∇L(p) ≈ H (p - x~)`, so this is one power-iteration step towards the
/// loss's sharpest ascent directions. If the probe gradient vanishes too
/// (silence), `r` itself is used.
#[allow(clippy::too_many_arguments)]
fn step_direction(
    x_tilde: &Matrix,
    grad: &Matrix,
    ctx: &AttackContext<'_>,
    iteration: usize,
    step: f64,
    x: &Matrix,
    epsilon: f64,
    clamp: bool,
) -> Result<Matrix> {
    if grad.as_slice().iter().any(|&g| g != 0.0) {
        return Ok(sign_matrix(grad));
    }
    let pattern = tie_break_direction(grad.shape(), ctx.mel, ctx.seed.wrapping_add(iteration as u64));
    let probe = apply_step(x_tilde, &pattern, step, x, epsilon, clamp)?;
    let (_, probe_grad) = loss_and_grad(&probe, ctx)?;
    if probe_grad.as_slice().iter().any(|&g| g != 0.0) {
        Ok(sign_matrix(&probe_grad))
    } else {
        Ok(pattern)
    }
}

/// `clip(x~ + step * direction)`.
fn apply_step(
    x_tilde: &Matrix,
    direction: &Matrix,
    step: f64,
    x: &Matrix,
    epsilon: f64,
    clamp: bool,
) -> Result<Matrix> {
    let mut moved = x_tilde.clone();
    for (m, s) in moved.as_mut_slice().iter_mut().zip(direction.as_slice()) {
        *m += step * s;
    }
    clip_linf(&moved, x, epsilon, clamp)
}

/// One sign step from `x~`, shared by both attacks.
#[allow(clippy::too_many_arguments)]
fn sign_step(
    x_tilde: &Matrix,
    grad: &Matrix,
    ctx: &AttackContext<'_>,
    iteration: usize,
    step: f64,
    x: &Matrix,
    epsilon: f64,
    clamp: bool,
) -> Result<Matrix> {
    let dir = step_direction(x_tilde, grad, ctx, iteration, step, x, epsilon, clamp)?;
    apply_step(x_tilde, &dir, step, x, epsilon, clamp)
}

/// Single-step attack: `x~ = clip(x + ε sign(∇L(x)))`.
pub fn fgsm(x: &Matrix, ctx: &AttackContext<'_>, epsilon: f64, clamp_nonnegative: bool) -> Result<AttackResult> {
    if !(epsilon.is_finite() && epsilon >= 0.0) {
        return Err(Error::InvalidConfig(format!("epsilon must be >= 0, got {epsilon}")));
    }
    let (l0, g) = loss_and_grad(x, ctx)?;
    let adv = sign_step(x, &g, ctx, 0, epsilon, x, epsilon, clamp_nonnegative)?;
    let l1 = loss(&adv, ctx)?;
    Ok(AttackResult {
        adv_magnitude: adv,
        loss_trajectory: vec![l0, l1],
        delta_cosd_final: l1,
    })
}

/// Iterative attack: `I` sign steps of size α, each projected onto the
/// ε-ball around `x`.
pub fn ifgsm(x: &Matrix, ctx: &AttackContext<'_>, cfg: &AttackConfig) -> Result<AttackResult> {
    cfg.validate()?;
    let mut x_tilde = x.clone();
    let mut trajectory = Vec::with_capacity(cfg.iterations + 1);
    for i in 0..cfg.iterations {
        let (l, g) = loss_and_grad(&x_tilde, ctx)?;
        trajectory.push(l);
        x_tilde = sign_step(&x_tilde, &g, ctx, i, cfg.alpha, x, cfg.epsilon, cfg.clamp_nonnegative)?;
    }
    let last = loss(&x_tilde, ctx)?;
    trajectory.push(last);
    Ok(AttackResult {
        adv_magnitude: x_tilde,
        loss_trajectory: trajectory,
        delta_cosd_final: last,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Fgsm,
    Ifgsm,
    Gaussian,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Fgsm => "fgsm",
            Method::Ifgsm => "ifgsm",
            Method::Gaussian => "gaussian",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fgsm" => Ok(Method::Fgsm),
            "ifgsm" | "i-fgsm" => Ok(Method::Ifgsm),
            "gaussian" => Ok(Method::Gaussian),
            other => Err(Error::InvalidConfig(format!(
                "unknown method `{other}` (expected fgsm, ifgsm or gaussian)"
            ))),
        }
    }
}

/// Settings for [`Protector::protect`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtectOptions {
    pub method: Method,
    pub attack: AttackConfig,
    /// Noise level of the Gaussian baseline.
    pub target_snr_db: f64,
    /// Seeds the Gaussian baseline and the gradient attacks' zero-gradient
    /// probe direction.
    pub seed: u64,
}

impl Default for ProtectOptions {
    fn default() -> Self {
        Self {
            method: Method::Ifgsm,
            attack: AttackConfig::default(),
            target_snr_db: 32.0,
            seed: 0,
        }
    }
}

/// Per-utterance outcome, exported as JSON next to the protected audio.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProtectReport {
    pub method: Method,
    /// SNR of the protected waveform against the input; `None` when identical.
    pub snr_db: Option<f64>,
    /// ΔCosD between the clean input and the re-analyzed protected audio.
    pub delta_cosd: f64,
    /// ΔCosD on the perturbed magnitude before resynthesis (gradient methods).
    pub magnitude_delta_cosd: Option<f64>,
    pub loss_trajectory: Vec<f64>,
    pub epsilon: f64,
    pub alpha: f64,
    pub iterations: usize,
    pub target_snr_db: Option<f64>,
    pub seed: u64,
    pub num_samples: usize,
}

#[derive(Debug, Clone)]
pub struct Protected {
    pub waveform: Waveform,
    pub report: ProtectReport,
    pub attack: Option<AttackResult>,
}

/// Front-end plus encoder: the full white-box pipeline for one weight store.
#[derive(Debug, Clone)]
pub struct Protector {
    weights: WeightStore,
    stft: StftConfig,
    mel: Matrix,
}

impl Protector {
    pub fn new(weights: WeightStore, stft: StftConfig) -> Result<Self> {
        stft.validate()?;
        let mel = mel_matrix(stft.fft_size, weights.config().n_mels, crate::audio_io::CANONICAL_RATE)?;
        Ok(Self { weights, stft, mel })
    }

    pub fn weights(&self) -> &WeightStore {
        &self.weights
    }

    pub fn stft_config(&self) -> &StftConfig {
        &self.stft
    }

    pub fn mel(&self) -> &Matrix {
        &self.mel
    }

    pub fn analyze(&self, w: &Waveform) -> Result<spectral::Spectrogram> {
        stft(w, &self.stft)
    }

    pub fn embed_magnitude(&self, mag: &Matrix) -> Result<Embedding> {
        embed_magnitude(mag, &self.mel, &self.weights)
    }

    pub fn embed_waveform(&self, w: &Waveform) -> Result<Embedding> {
        self.embed_magnitude(&self.analyze(w)?.magnitude)
    }

    /// STFT → attack on the magnitude → iSTFT with the original phase.
    /// The Gaussian baseline adds noise in the time domain instead.
    pub fn protect(&self, w: &Waveform, opts: &ProtectOptions) -> Result<Protected> {
        let spec = self.analyze(w)?;
        let reference = self.embed_magnitude(&spec.magnitude)?;
        let ctx = AttackContext {
            mel: &self.mel,
            weights: &self.weights,
            reference: &reference,
            seed: opts.seed,
        };
        let (waveform, attack) = match opts.method {
            Method::Gaussian => (add_gaussian_noise(w, opts.target_snr_db, opts.seed)?, None),
            Method::Fgsm | Method::Ifgsm => {
                let result = if opts.method == Method::Fgsm {
                    fgsm(
                        &spec.magnitude,
                        &ctx,
                        opts.attack.epsilon,
                        opts.attack.clamp_nonnegative,
                    )?
                } else {
                    ifgsm(&spec.magnitude, &ctx, &opts.attack)?
                };
                let audio = istft(&result.adv_magnitude, &spec.phase, &self.stft, spec.original_length)?;
                (audio, Some(result))
            }
        };
        let protected_embedding = self.embed_waveform(&waveform)?;
        let snr = snr_db(w, &waveform)?;
        let (alpha, iterations) = match opts.method {
            Method::Fgsm => (opts.attack.epsilon, 1),
            Method::Ifgsm => (opts.attack.alpha, opts.attack.iterations),
            Method::Gaussian => (0.0, 0),
        };
        let report = ProtectReport {
            method: opts.method,
            snr_db: snr.is_finite().then_some(snr),
            delta_cosd: delta_cosd(&reference, &protected_embedding)?,
            magnitude_delta_cosd: attack.as_ref().map(|a| a.delta_cosd_final),
            loss_trajectory: attack.as_ref().map(|a| a.loss_trajectory.clone()).unwrap_or_default(),
            epsilon: if opts.method == Method::Gaussian {
                0.0
            } else {
                opts.attack.epsilon
            },
            alpha,
            iterations,
            target_snr_db: (opts.method == Method::Gaussian).then_some(opts.target_snr_db),
            seed: opts.seed,
            num_samples: waveform.len(),
        };
        Ok(Protected {
            waveform,
            report,
            attack,
        })
    }
}

/// Convenience wrapper over [`Protector::protect`] with the default STFT.
pub fn protect_utterance(w: &Waveform, ws: &WeightStore, opts: &ProtectOptions) -> Result<Protected> {
    Protector::new(ws.clone(), StftConfig::default())?.protect(w, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{init_random, EncoderConfig};

    fn tiny_setup(seed: u64, frames: usize) -> (Matrix, Matrix, WeightStore) {
        let cfg = EncoderConfig {
            n_mels: 16,
            conv_channels: vec![4, 4],
            pool_after: vec![0],
            embed_dim: 8,
            min_frames: 2,
            input_norm: true,
        };
        let ws = init_random(&cfg, seed).unwrap().with_constant_biases(0.02);
        let mel = mel_matrix(512, 16, 16000).unwrap();
        let bins = mel.cols();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
        let x = Matrix::from_fn(frames, bins, |_, _| rng.random_range(0.0..1.0));
        (x, mel, ws)
    }

    fn sign_of(v: f64) -> f64 {
        if v > 0.0 {
            1.0
        } else if v < 0.0 {
            -1.0
        } else {
            0.0
        }
    }

    #[test]
    fn sign_convention() {
        let g = Matrix::from_vec(1, 3, vec![-3.2, 0.5, 0.0]);
        assert_eq!(sign_matrix(&g).as_slice(), &[-1.0, 1.0, 0.0]);
        assert_eq!(sign_matrix(&g.map(|v| 4.0 * v)), sign_matrix(&g));
    }

    #[test]
    fn clip_cases() {
        let x = Matrix::from_vec(1, 3, vec![1.0, 1.0, 0.01]);
        let inside = Matrix::from_vec(1, 3, vec![1.01, 0.99, 0.0]);
        assert_eq!(clip_linf(&inside, &x, 0.02, true).unwrap(), inside);
        let out = clip_linf(&Matrix::from_vec(1, 3, vec![1.05, 0.9, -0.02]), &x, 0.02, true).unwrap();
        assert_eq!(out.as_slice(), &[1.02, 0.98, 0.0]);
        let out = clip_linf(&Matrix::from_vec(1, 3, vec![1.05, 0.9, -0.02]), &x, 0.02, false).unwrap();
        assert!((out.get(0, 2) + 0.01).abs() < 1e-15);
        assert!(clip_linf(&Matrix::zeros(2, 2), &x, 0.1, true).is_err());
    }

    #[test]
    fn config_validation() {
        AttackConfig::default().validate().unwrap();
        AttackConfig::fgsm(0.02).validate().unwrap();
        let bad = AttackConfig {
            alpha: 0.03,
            ..AttackConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = AttackConfig {
            alpha: 0.0,
            ..AttackConfig::default()
        };
        assert!(bad.validate().is_err());
        let zero = AttackConfig {
            iterations: 0,
            ..AttackConfig::default()
        };
        zero.validate().unwrap();
        assert_eq!("I-FGSM".parse::<Method>().unwrap(), Method::Ifgsm);
        assert!("pgd".parse::<Method>().is_err());
    }

    #[test]
    fn clean_input_has_loss_minus_one() {
        let (x, mel, ws) = tiny_setup(1, 10);
        let reference = embed_magnitude(&x, &mel, &ws).unwrap();
        let ctx = AttackContext {
            mel: &mel,
            weights: &ws,
            reference: &reference,
            seed: 7,
        };
        let (l, _) = loss_and_grad(&x, &ctx).unwrap();
        assert_eq!(l, -1.0);
        let r = ifgsm(
            &x,
            &ctx,
            &AttackConfig {
                iterations: 0,
                ..AttackConfig::default()
            },
        )
        .unwrap();
        assert_eq!(r.adv_magnitude, x);
        assert_eq!(r.loss_trajectory, vec![-1.0]);
    }

    #[test]
    fn loss_grad_matches_finite_differences() {
        let (x, mel, ws) = tiny_setup(2, 10);
        let reference = embed_magnitude(&x.map(|v| v * 1.3 + 0.05), &mel, &ws).unwrap();
        let ctx = AttackContext {
            mel: &mel,
            weights: &ws,
            reference: &reference,
            seed: 7,
        };
        let (_, g) = loss_and_grad(&x, &ctx).unwrap();
        let scale = g.as_slice().iter().fold(0.0f64, |a, b| a.max(b.abs()));
        let h = 1e-5;
        for idx in (0..x.as_slice().len()).step_by(3) {
            let mut p = x.clone();
            p.as_mut_slice()[idx] += h;
            let mut q = x.clone();
            q.as_mut_slice()[idx] -= h;
            let fd = (loss(&p, &ctx).unwrap() - loss(&q, &ctx).unwrap()) / (2.0 * h);
            let a = g.as_slice()[idx];
            let rel = (fd - a).abs() / a.abs().max(fd.abs()).max(1e-3 * scale);
            assert!(rel < 1e-4, "idx {idx}: {fd} vs {a}");
        }
    }

    #[test]
    fn silence_has_no_gradient() {
        let (x, mel, ws) = tiny_setup(3, 6);
        let reference = embed_magnitude(&x, &mel, &ws).unwrap();
        let ctx = AttackContext {
            mel: &mel,
            weights: &ws,
            reference: &reference,
            seed: 7,
        };
        let silent = Matrix::zeros(x.rows(), x.cols());
        let (_, g) = loss_and_grad(&silent, &ctx).unwrap();
        assert!(g.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fgsm_moves_by_epsilon() {
        let (x, mel, ws) = tiny_setup(4, 8);
        let x = x.map(|v| v + 0.05);
        let clean = embed_magnitude(&x, &mel, &ws).unwrap();
        let ctx = AttackContext {
            mel: &mel,
            weights: &ws,
            reference: &clean,
            seed: 7,
        };
        let zero = fgsm(&x, &ctx, 0.0, true).unwrap();
        assert_eq!(zero.adv_magnitude, x);

        // clean start: zero gradient; the probe direction moves live bins by ε
        let (_, g) = loss_and_grad(&x, &ctx).unwrap();
        assert!(g.as_slice().iter().all(|&v| v == 0.0));
        let r = fgsm(&x, &ctx, 0.02, true).unwrap();
        let probe = apply_step(&x, &tie_break_direction(x.shape(), &mel, 7), 0.02, &x, 0.02, true).unwrap();
        let (_, pg) = loss_and_grad(&probe, &ctx).unwrap();
        for ((a, b), d) in r.adv_magnitude.as_slice().iter().zip(x.as_slice()).zip(pg.as_slice()) {
            assert!((a - b - 0.02 * sign_of(*d)).abs() < 1e-12);
        }
        assert_eq!(r.loss_trajectory.len(), 2);
        assert!(r.delta_cosd_final > -1.0);

        // away from the reference the real gradient drives the step
        let other = embed_magnitude(&x.map(|v| 1.5 * v), &mel, &ws).unwrap();
        let ctx = AttackContext {
            reference: &other,
            ..ctx
        };
        let (_, g) = loss_and_grad(&x, &ctx).unwrap();
        let r = fgsm(&x, &ctx, 0.02, true).unwrap();
        let mut moved = 0;
        for ((a, b), gv) in r.adv_magnitude.as_slice().iter().zip(x.as_slice()).zip(g.as_slice()) {
            if *gv != 0.0 {
                assert!((a - b - 0.02 * sign_of(*gv)).abs() < 1e-12);
                moved += 1;
            } else {
                assert_eq!(a, b);
            }
        }
        assert!(moved > 0);
    }

    #[test]
    fn tie_break_is_seeded_and_skips_dead_bins() {
        let mel = mel_matrix(512, 16, 16000).unwrap();
        let a = tie_break_direction((3, 257), &mel, 1);
        assert_eq!(a, tie_break_direction((3, 257), &mel, 1));
        assert_ne!(a, tie_break_direction((3, 257), &mel, 2));
        // DC and Nyquist sit on filter edges
        assert_eq!(a.get(0, 0), 0.0);
        assert_eq!(a.get(0, 256), 0.0);
        assert!(a.as_slice().iter().all(|v| [-1.0, 0.0, 1.0].contains(v)));
    }

    #[test]
    fn ifgsm_single_step_equals_fgsm() {
        for seed in 0..5 {
            let (x, mel, ws) = tiny_setup(10 + seed, 8);
            let reference = embed_magnitude(&x, &mel, &ws).unwrap();
            let ctx = AttackContext {
                mel: &mel,
                weights: &ws,
                reference: &reference,
                seed: 7,
            };
            let a = fgsm(&x, &ctx, 0.02, true).unwrap();
            let b = ifgsm(&x, &ctx, &AttackConfig::fgsm(0.02)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn ifgsm_respects_budget_and_raises_loss() {
        let (x, mel, ws) = tiny_setup(5, 12);
        let x = x.map(|v| v * 0.1);
        let reference = embed_magnitude(&x, &mel, &ws).unwrap();
        let ctx = AttackContext {
            mel: &mel,
            weights: &ws,
            reference: &reference,
            seed: 7,
        };
        let r = ifgsm(&x, &ctx, &AttackConfig::default()).unwrap();
        assert_eq!(r.loss_trajectory.len(), 51);
        assert!(r.adv_magnitude.max_abs_diff(&x) <= 0.02 + 1e-12);
        assert!(r.adv_magnitude.as_slice().iter().all(|&v| v >= 0.0));
        assert!(r.delta_cosd_final > -1.0);
    }
}
