//! STFT analysis, phase-preserving iSTFT synthesis and the log-mel front-end.
//!
//! The magnitude matrix produced by [`stft`] is the surface the attacks
//! perturb; the phase matrix is carried through untouched and reused by
//! [`istft`].

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio_io::{Waveform, CANONICAL_RATE};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Power floor applied before the logarithm in [`log_mel`].
pub const LOG_FLOOR: f64 = 1e-10;

/// Overlap-add normalization treats window-power sums below this as empty.
const WSUM_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub fft_size: usize,
    pub win_length: usize,
    pub hop_length: usize,
}

impl Default for StftConfig {
    /// 512-point transform, 25 ms Hann window, 10 ms hop at 16 kHz.
    fn default() -> Self {
        Self {
            fft_size: 512,
            win_length: 400,
            hop_length: 160,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hop_length == 0 || self.hop_length > self.win_length || self.win_length > self.fft_size {
            return Err(Error::InvalidConfig(format!(
                "need 0 < hop ({}) <= win ({}) <= fft ({})",
                self.hop_length, self.win_length, self.fft_size
            )));
        }
        if !self.fft_size.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "fft_size must be even, got {}",
                self.fft_size
            )));
        }
        Ok(())
    }

    /// One-sided bin count, `fft_size / 2 + 1`.
    pub fn n_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Reflect padding applied at each end before framing.
    pub fn pad(&self) -> usize {
        self.win_length / 2
    }

    /// Offset of the window inside the zero-padded FFT frame.
    fn win_offset(&self) -> usize {
        (self.fft_size - self.win_length) / 2
    }

    pub fn n_frames(&self, len: usize) -> usize {
        len / self.hop_length + 1
    }

    /// Periodic Hann window of `win_length` samples.
    pub fn window(&self) -> Vec<f64> {
        let n = self.win_length as f64;
        (0..self.win_length)
            .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n).cos())
            .collect()
    }
}

/// Polar STFT: `magnitude` is `[frames x bins]`, `phase` likewise.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub magnitude: Matrix,
    pub phase: Matrix,
    pub config: StftConfig,
    pub original_length: usize,
}

impl Spectrogram {
    pub fn n_frames(&self) -> usize {
        self.magnitude.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MelFeatures {
    /// `[frames x n_mels]` natural-log mel energies.
    pub values: Matrix,
}

impl MelFeatures {
    pub fn n_frames(&self) -> usize {
        self.values.rows()
    }

    pub fn n_mels(&self) -> usize {
        self.values.cols()
    }
}

fn reflect_pad(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    let mut out = Vec::with_capacity(n + 2 * pad);
    out.extend((1..=pad).rev().map(|i| x[i]));
    out.extend_from_slice(x);
    out.extend((0..pad).map(|i| x[n - 2 - i]));
    out
}

pub fn stft(w: &Waveform, cfg: &StftConfig) -> Result<Spectrogram> {
    cfg.validate()?;
    if w.sample_rate() != CANONICAL_RATE {
        return Err(Error::InvalidConfig(format!(
            "stft expects {CANONICAL_RATE} Hz input, got {} Hz; resample first",
            w.sample_rate()
        )));
    }
    let len = w.len();
    if len < cfg.win_length || len < 2 {
        return Err(Error::SignalTooShort {
            len,
            min: cfg.win_length.max(2),
        });
    }
    let padded = reflect_pad(w.samples(), cfg.pad());
    let window = cfg.window();
    let n_frames = cfg.n_frames(len);
    let n_bins = cfg.n_bins();
    let offset = cfg.win_offset();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.fft_size);

    let mut magnitude = Matrix::zeros(n_frames, n_bins);
    let mut phase = Matrix::zeros(n_frames, n_bins);
    let mut buf = vec![Complex64::new(0.0, 0.0); cfg.fft_size];
    for t in 0..n_frames {
        buf.fill(Complex64::new(0.0, 0.0));
        let start = t * cfg.hop_length;
        for (j, &wj) in window.iter().enumerate() {
            let s = padded.get(start + j).copied().unwrap_or(0.0);
            buf[offset + j] = Complex64::new(s * wj, 0.0);
        }
        fft.process(&mut buf);
        let (mrow, prow) = (magnitude.row_mut(t), phase.row_mut(t));
        for k in 0..n_bins {
            mrow[k] = buf[k].norm();
        }
        for k in 0..n_bins {
            prow[k] = buf[k].arg();
        }
    }
    Ok(Spectrogram {
        magnitude,
        phase,
        config: *cfg,
        original_length: len,
    })
}

/// Weighted overlap-add inverse of [`stft`], normalized by the summed squared
/// window; output has exactly `length` samples at 16 kHz.
pub fn istft(magnitude: &Matrix, phase: &Matrix, cfg: &StftConfig, length: usize) -> Result<Waveform> {
    cfg.validate()?;
    if !magnitude.same_shape(phase) {
        return Err(Error::shape(magnitude.shape_string(), phase.shape_string()));
    }
    if magnitude.cols() != cfg.n_bins() {
        return Err(Error::shape(
            format!("{} bins", cfg.n_bins()),
            format!("{} bins", magnitude.cols()),
        ));
    }
    let n_frames = magnitude.rows();
    let n = cfg.fft_size;
    let pad = cfg.pad();
    let offset = cfg.win_offset();
    let window = cfg.window();
    let span = (n_frames.saturating_sub(1) * cfg.hop_length + cfg.win_length).max(length + 2 * pad);
    let mut acc = vec![0.0; span];
    let mut wsum = vec![0.0; span];
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(n);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for t in 0..n_frames {
        let (mrow, prow) = (magnitude.row(t), phase.row(t));
        for k in 0..=n / 2 {
            buf[k] = Complex64::from_polar(mrow[k], prow[k]);
        }
        for k in 1..n / 2 {
            buf[n - k] = buf[k].conj();
        }
        ifft.process(&mut buf);
        let start = t * cfg.hop_length;
        for (j, &wj) in window.iter().enumerate() {
            acc[start + j] += buf[offset + j].re / n as f64 * wj;
            wsum[start + j] += wj * wj;
        }
    }
    let samples = (0..length)
        .map(|i| {
            let p = i + pad;
            if wsum[p] < WSUM_EPS {
                0.0
            } else {
                acc[p] / wsum[p]
            }
        })
        .collect();
    Waveform::new(samples, CANONICAL_RATE)
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// HTK-mel triangular filterbank, `[n_mels x (fft_size/2 + 1)]`, spanning
/// 0 Hz to Nyquist. Filters are unnormalized (peak weight 1).
pub fn mel_matrix(fft_size: usize, n_mels: usize, sample_rate: u32) -> Result<Matrix> {
    let n_bins = fft_size / 2 + 1;
    if n_mels == 0 || n_mels >= n_bins || sample_rate == 0 {
        return Err(Error::InvalidConfig(format!(
            "mel filterbank needs 0 < n_mels ({n_mels}) < bins ({n_bins})"
        )));
    }
    let nyquist = sample_rate as f64 / 2.0;
    let mel_max = hz_to_mel(nyquist);
    let mut edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_max * i as f64 / (n_mels + 1) as f64))
        .collect();
    edges[n_mels + 1] = nyquist;
    let bin_hz = |k: usize| k as f64 * sample_rate as f64 / fft_size as f64;
    let fb = Matrix::from_fn(n_mels, n_bins, |m, k| {
        let f = bin_hz(k);
        let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let rising = (f - lo) / (mid - lo);
        let falling = (hi - f) / (hi - mid);
        rising.min(falling).max(0.0)
    });
    for m in 0..n_mels {
        if fb.row(m).iter().all(|&v| v == 0.0) {
            return Err(Error::InvalidConfig(format!(
                "mel filter {m} covers no FFT bin (fft_size {fft_size} too small for {n_mels} mels)"
            )));
        }
    }
    Ok(fb)
}

/// Mel power `mag^2 . mel^T`, `[frames x n_mels]`.
fn mel_power(mag: &Matrix, mel: &Matrix) -> Matrix {
    let mut power = Matrix::zeros(mag.rows(), mel.rows());
    let mut sq = vec![0.0; mag.cols()];
    for t in 0..mag.rows() {
        for (s, &m) in sq.iter_mut().zip(mag.row(t)) {
            *s = m * m;
        }
        let out = power.row_mut(t);
        for (o, filt) in out.iter_mut().zip(0..mel.rows()) {
            *o = mel.row(filt).iter().zip(&sq).map(|(a, b)| a * b).sum();
        }
    }
    power
}

fn check_mel_shape(mag: &Matrix, mel: &Matrix) -> Result<()> {
    if mag.cols() != mel.cols() {
        return Err(Error::shape(
            format!("magnitude with {} bins", mel.cols()),
            mag.shape_string(),
        ));
    }
    Ok(())
}

/// `ln(max(|X|^2 . mel^T, LOG_FLOOR))`.
pub fn log_mel(mag: &Matrix, mel: &Matrix) -> Result<MelFeatures> {
    check_mel_shape(mag, mel)?;
    let values = mel_power(mag, mel).map(|p| p.max(LOG_FLOOR).ln());
    Ok(MelFeatures { values })
}

/// Reverse-mode gradient of [`log_mel`] with respect to the magnitude.
/// Channels clamped by the floor pass no gradient.
pub fn log_mel_backward(grad_out: &Matrix, mag: &Matrix, mel: &Matrix) -> Result<Matrix> {
    check_mel_shape(mag, mel)?;
    if grad_out.shape() != (mag.rows(), mel.rows()) {
        return Err(Error::shape(
            format!("{}x{}", mag.rows(), mel.rows()),
            grad_out.shape_string(),
        ));
    }
    let power = mel_power(mag, mel);
    let mut grad = Matrix::zeros(mag.rows(), mag.cols());
    let mut gp = vec![0.0; mel.rows()];
    for t in 0..mag.rows() {
        for ((g, &p), &go) in gp.iter_mut().zip(power.row(t)).zip(grad_out.row(t)) {
            *g = if p > LOG_FLOOR { go / p } else { 0.0 };
        }
        let grow = grad.row_mut(t);
        for (m, &g) in gp.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            for (o, &w) in grow.iter_mut().zip(mel.row(m)) {
                *o += g * w;
            }
        }
        for (o, &x) in grow.iter_mut().zip(mag.row(t)) {
            *o *= 2.0 * x;
        }
    }
    Ok(grad)
}
