//! Seeded synthetic "speakers" for demos and end-to-end checks.
//!
//! A speaker is a glottal pulse train plus aspiration noise passed through a
//! cascade of formant resonators. Speakers differ in pitch, vocal-tract
//! length (a common scale on all formants), formant bandwidths, spectral
//! tilt and breathiness; utterances differ in syllable timing, vowel
//! sequence, intonation and noise.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::audio_io::{Waveform, CANONICAL_RATE};
use crate::error::Result;

/// Neutral-tract formant frequencies (Hz) for a small vowel inventory.
const VOWELS: [[f64; 4]; 6] = [
    [730.0, 1090.0, 2440.0, 3400.0],
    [270.0, 2290.0, 3010.0, 3700.0],
    [300.0, 870.0, 2240.0, 3300.0],
    [530.0, 1840.0, 2480.0, 3500.0],
    [570.0, 840.0, 2410.0, 3350.0],
    [440.0, 1020.0, 2240.0, 3250.0],
];

/// About -30 dBFS, a quiet close-talk speech level.
pub const DEFAULT_RMS: f64 = 0.03;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerProfile {
    pub f0_hz: f64,
    /// Multiplies every formant frequency.
    pub tract_scale: f64,
    pub bandwidths_hz: [f64; 4],
    /// One-pole low-pass coefficient on the excitation.
    pub tilt: f64,
    /// Aspiration noise level relative to the pulse train.
    pub breathiness: f64,
    /// Speaker-specific offsets added to each vowel formant, relative.
    pub formant_bias: [f64; 4],
}

impl SpeakerProfile {
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed_0000_0001);
        Self {
            f0_hz: rng.random_range(85.0..240.0),
            tract_scale: rng.random_range(0.82..1.22),
            bandwidths_hz: [
                rng.random_range(50.0..110.0),
                rng.random_range(60.0..130.0),
                rng.random_range(90.0..180.0),
                rng.random_range(120.0..250.0),
            ],
            tilt: rng.random_range(0.55..0.92),
            breathiness: rng.random_range(0.02..0.3),
            formant_bias: [
                rng.random_range(-0.12..0.12),
                rng.random_range(-0.12..0.12),
                rng.random_range(-0.1..0.1),
                rng.random_range(-0.1..0.1),
            ],
        }
    }
}

/// Second-order resonator `y[n] = g x[n] + a1 y[n-1] + a2 y[n-2]` with unit
/// gain at its center frequency (approximately).
struct Resonator {
    a1: f64,
    a2: f64,
    gain: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn new(freq: f64, bw: f64, rate: f64) -> Self {
        let mut r = Self {
            a1: 0.0,
            a2: 0.0,
            gain: 0.0,
            y1: 0.0,
            y2: 0.0,
        };
        r.tune(freq, bw, rate);
        r
    }

    fn tune(&mut self, freq: f64, bw: f64, rate: f64) {
        let radius = (-PI * bw / rate).exp();
        let theta = 2.0 * PI * freq / rate;
        self.a1 = 2.0 * radius * theta.cos();
        self.a2 = -radius * radius;
        self.gain = (1.0 - radius) * (1.0 + radius * radius - 2.0 * radius * (2.0 * theta).cos()).sqrt();
    }

    fn process(&mut self, x: f64) -> f64 {
        let y = self.gain * x + self.a1 * self.y1 + self.a2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// Renders one utterance of `seconds` at 16 kHz, normalized to `rms`.
pub fn synth_utterance(profile: &SpeakerProfile, utt_seed: u64, seconds: f64, rms: f64) -> Result<Waveform> {
    let rate = CANONICAL_RATE as f64;
    let n = (seconds * rate).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(utt_seed);

    // syllable plan: (start sample, length, vowel index)
    let mut syllables = Vec::new();
    let mut pos = (rng.random_range(0.02..0.12) * rate) as usize;
    while pos < n {
        let len = (rng.random_range(0.12..0.28) * rate) as usize;
        syllables.push((pos, len, rng.random_range(0..VOWELS.len())));
        pos += len + (rng.random_range(0.02..0.1) * rate) as usize;
    }

    let intonation_rate = rng.random_range(0.5..1.5);
    let intonation_phase = rng.random_range(0.0..2.0 * PI);
    let utt_f0 = profile.f0_hz * rng.random_range(0.94..1.06);

    let mut formants: Vec<Resonator> = (0..4)
        .map(|i| Resonator::new(VOWELS[0][i], profile.bandwidths_hz[i], rate))
        .collect();
    let mut out = vec![0.0; n];
    let mut phase = 0.0;
    let mut tilt_state = 0.0;
    let mut syl = 0;
    for (i, o) in out.iter_mut().enumerate() {
        while syl + 1 < syllables.len() && i >= syllables[syl].0 + syllables[syl].1 {
            syl += 1;
        }
        let (start, len, vowel) = syllables[syl];
        let env = if i >= start && i < start + len {
            let u = (i - start) as f64 / len as f64;
            (PI * u).sin().powf(0.6)
        } else {
            0.0
        };
        if i % 80 == 0 {
            for (k, f) in formants.iter_mut().enumerate() {
                let center = VOWELS[vowel][k] * profile.tract_scale * (1.0 + profile.formant_bias[k]);
                f.tune(center.min(0.45 * rate), profile.bandwidths_hz[k], rate);
            }
        }
        let t = i as f64 / rate;
        let f0 = utt_f0 * (1.0 + 0.08 * (2.0 * PI * intonation_rate * t + intonation_phase).sin());
        phase += f0 / rate;
        let pulse = if phase >= 1.0 {
            phase -= 1.0;
            1.0
        } else {
            0.0
        };
        let noise: f64 = StandardNormal.sample(&mut rng);
        let excitation = pulse + profile.breathiness * 0.1 * noise;
        tilt_state = profile.tilt * tilt_state + (1.0 - profile.tilt) * excitation;
        let mut y = tilt_state;
        let mut voiced = 0.0;
        for f in formants.iter_mut() {
            y = f.process(y);
            voiced += y;
        }
        let floor: f64 = StandardNormal.sample(&mut rng);
        *o = env * voiced + 1e-4 * floor;
    }

    let cur = (out.iter().map(|s| s * s).sum::<f64>() / n.max(1) as f64).sqrt();
    if cur > 0.0 {
        let g = rms / cur;
        out.iter_mut().for_each(|s| *s *= g);
    }
    Waveform::new(out, CANONICAL_RATE)
}

/// Utterance key used across the CLI and tests: `spk<NN>-utt<M>`.
pub fn utterance_key(speaker: usize, utterance: usize) -> String {
    format!("spk{speaker:02}-utt{utterance}")
}

/// `n_speakers x n_utts` utterances keyed by [`utterance_key`], normalized
/// to [`DEFAULT_RMS`].
pub fn synth_corpus(n_speakers: usize, n_utts: usize, seconds: f64, seed: u64) -> Result<Vec<(String, Waveform)>> {
    synth_corpus_rms(n_speakers, n_utts, seconds, seed, DEFAULT_RMS)
}

pub fn synth_corpus_rms(
    n_speakers: usize,
    n_utts: usize,
    seconds: f64,
    seed: u64,
    rms: f64,
) -> Result<Vec<(String, Waveform)>> {
    let mut out = Vec::with_capacity(n_speakers * n_utts);
    for s in 0..n_speakers {
        let profile = SpeakerProfile::from_seed(seed.wrapping_mul(1000).wrapping_add(s as u64));
        for u in 0..n_utts {
            let utt_seed = seed
                .wrapping_mul(1_000_003)
                .wrapping_add((s * 1000 + u) as u64)
                .wrapping_add(17);
            out.push((utterance_key(s, u), synth_utterance(&profile, utt_seed, seconds, rms)?));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn utterances_are_deterministic_and_normalized() {
        let p = SpeakerProfile::from_seed(3);
        let a = synth_utterance(&p, 1, 0.5, 0.05).unwrap();
        let b = synth_utterance(&p, 1, 0.5, 0.05).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 8000);
        let rms = (a.energy() / a.len() as f64).sqrt();
        assert!((rms - 0.05).abs() < 1e-12);
        assert!(a.samples().iter().all(|s| s.abs() < 1.0));
        assert_ne!(a, synth_utterance(&p, 2, 0.5, 0.05).unwrap());
    }

    #[test]
    fn corpus_keys() {
        let c = synth_corpus(2, 3, 0.3, 1).unwrap();
        let keys: Vec<&str> = c.iter().map(|(k, _)| k.as_str()).collect();
        assert_eq!(
            keys,
            [
                "spk00-utt0",
                "spk00-utt1",
                "spk00-utt2",
                "spk01-utt0",
                "spk01-utt1",
                "spk01-utt2"
            ]
        );
    }
}
