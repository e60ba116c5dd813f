//! Mono waveform I/O, resampling and the Gaussian-noise baseline.
//!
//! Files are RIFF/WAVE. Reading accepts 16-bit integer or 32-bit float PCM;
//! writing always produces 16-bit PCM.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Sample rate every analysis path runs at.
pub const CANONICAL_RATE: u32 = 16_000;

/// Mono time-domain signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidWaveform("sample_rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidWaveform(format!("sample {i} is not finite")));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum()
    }
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let mut reader = hound::WavReader::open(path).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::UnsupportedChannels(spec.channels));
    }
    if spec.sample_rate == 0 {
        return Err(Error::UnsupportedEncoding {
            field: "sample_rate",
            value: "0".into(),
        });
    }
    let declared = reader.len();
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => collect_samples(
            reader.samples::<i16>().map(|s| s.map(|v| v as f64 / 32768.0)),
            declared,
            path,
        )?,
        (hound::SampleFormat::Float, 32) => {
            collect_samples(reader.samples::<f32>().map(|s| s.map(|v| v as f64)), declared, path)?
        }
        (hound::SampleFormat::Int, bits) => {
            return Err(Error::UnsupportedEncoding {
                field: "bits_per_sample",
                value: format!("{bits} (integer PCM must be 16-bit)"),
            })
        }
        (hound::SampleFormat::Float, bits) => {
            return Err(Error::UnsupportedEncoding {
                field: "bits_per_sample",
                value: format!("{bits} (float PCM must be 32-bit)"),
            })
        }
    };
    Waveform::new(samples, spec.sample_rate)
}

fn collect_samples(iter: impl Iterator<Item = hound::Result<f64>>, declared: u32, path: &Path) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(declared as usize);
    for s in iter {
        match s {
            Ok(v) => out.push(v),
            // hound surfaces short data chunks as plain I/O errors
            Err(hound::Error::IoError(_)) => {
                return Err(Error::TruncatedWav {
                    declared,
                    read: out.len() as u32,
                })
            }
            Err(e) => return Err(map_hound(path, e)),
        }
    }
    if out.len() < declared as usize {
        return Err(Error::TruncatedWav {
            declared,
            read: out.len() as u32,
        });
    }
    Ok(out)
}

fn map_hound(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) if io.kind() == std::io::ErrorKind::UnexpectedEof => {
            Error::Wav(format!("{}: unexpected end of file in header", path.display()))
        }
        hound::Error::IoError(io) => Error::io(path, io),
        hound::Error::Unsupported => Error::UnsupportedEncoding {
            field: "format_tag",
            value: "not PCM or IEEE float".into(),
        },
        other => Error::Wav(format!("{}: {other}", path.display())),
    }
}

/// 16-bit quantization used by [`write_wav`]. Clamps to `[-1, 1 - 2^-15]`.
pub fn quantize_pcm16(sample: f64) -> i16 {
    let clamped = sample.clamp(-1.0, 1.0 - 1.0 / 32768.0);
    (clamped * 32768.0).round() as i16
}

/// Writes 16-bit PCM mono. Bytes depend only on the samples and the rate.
pub fn write_wav(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| map_hound(path, e))?;
    for &s in &w.samples {
        writer.write_sample(quantize_pcm16(s)).map_err(|e| map_hound(path, e))?;
    }
    writer.finalize().map_err(|e| map_hound(path, e))
}

/// Linear-interpolation resampler. Output length is `round(len * target / source)`.
///
/// No anti-aliasing filter is applied when downsampling.
pub fn resample_linear(w: &Waveform, target_rate: u32) -> Result<Waveform> {
    if target_rate == 0 {
        return Err(Error::InvalidConfig("target_rate must be positive".into()));
    }
    if target_rate == w.sample_rate || w.samples.is_empty() {
        return Waveform::new(w.samples.clone(), target_rate);
    }
    let src = w.sample_rate as u64;
    let dst = target_rate as u64;
    let len = w.samples.len() as u64;
    let out_len = (len * dst + src / 2) / src;
    let last = w.samples.len() - 1;
    let out = (0..out_len)
        .map(|n| {
            // exact integer split of the source position n * src / dst
            let num = n * src;
            let i = (num / dst) as usize;
            let frac = (num % dst) as f64 / dst as f64;
            if i >= last {
                w.samples[last]
            } else {
                let (a, b) = (w.samples[i], w.samples[i + 1]);
                a + (b - a) * frac
            }
        })
        .collect();
    Waveform::new(out, target_rate)
}

/// Adds white Gaussian noise scaled so that the realized SNR equals
/// `target_snr_db` exactly (up to rounding). Deterministic in `seed`.
pub fn add_gaussian_noise(w: &Waveform, target_snr_db: f64, seed: u64) -> Result<Waveform> {
    if !target_snr_db.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "target SNR must be finite, got {target_snr_db}"
        )));
    }
    let signal_energy = w.energy();
    if !(signal_energy > 0.0) {
        return Err(Error::ZeroEnergy);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<f64> = (0..w.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
    let noise_energy: f64 = noise.iter().map(|n| n * n).sum();
    if !(noise_energy > 0.0) {
        return Err(Error::ZeroEnergy);
    }
    let scale = (signal_energy / (noise_energy * 10f64.powf(target_snr_db / 10.0))).sqrt();
    let samples = w.samples.iter().zip(&noise).map(|(s, n)| s + scale * n).collect();
    Waveform::new(samples, w.sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::snr_db;

    fn write_raw_pcm16(path: &Path, samples: &[i16], rate: u32) {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut wr = hound::WavWriter::create(path, spec).unwrap();
        for &s in samples {
            wr.write_sample(s).unwrap();
        }
        wr.finalize().unwrap();
    }

    #[test]
    fn pcm16_half_scale() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("half.wav");
        write_raw_pcm16(&p, &[16384], 16000);
        let w = read_wav(&p).unwrap();
        assert_eq!(w.samples(), &[0.5]);
        assert_eq!(w.sample_rate(), 16000);
    }

    #[test]
    fn pcm16_silence() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("zeros.wav");
        write_raw_pcm16(&p, &vec![0; 16000], 16000);
        let w = read_wav(&p).unwrap();
        assert_eq!(w.len(), 16000);
        assert_eq!(w.duration_secs(), 1.0);
        assert!(w.samples().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn float32_input() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut wr = hound::WavWriter::create(&p, spec).unwrap();
        for s in [0.25f32, -0.75] {
            wr.write_sample(s).unwrap();
        }
        wr.finalize().unwrap();
        let w = read_wav(&p).unwrap();
        assert_eq!(w.samples(), &[0.25, -0.75]);
        assert_eq!(w.sample_rate(), 8000);
    }

    #[test]
    fn stereo_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("st.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut wr = hound::WavWriter::create(&p, spec).unwrap();
        wr.write_sample(1i16).unwrap();
        wr.write_sample(2i16).unwrap();
        wr.finalize().unwrap();
        let err = read_wav(&p).unwrap_err();
        assert!(matches!(err, Error::UnsupportedChannels(2)), "{err}");
        assert!(err.to_string().contains("channels = 2"));
    }

    #[test]
    fn pcm24_rejected_with_field() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("24.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 16000,
            bits_per_sample: 24,
            sample_format: hound::SampleFormat::Int,
        };
        let mut wr = hound::WavWriter::create(&p, spec).unwrap();
        wr.write_sample(5i32).unwrap();
        wr.finalize().unwrap();
        let err = read_wav(&p).unwrap_err();
        assert!(err.to_string().contains("bits_per_sample"), "{err}");
    }

    #[test]
    fn truncated_data_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.wav");
        write_raw_pcm16(&p, &[1, 2, 3, 4, 5, 6, 7, 8], 16000);
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 5]).unwrap();
        match read_wav(&p) {
            Err(Error::TruncatedWav { declared, read }) => {
                assert_eq!(declared, 8);
                assert!(read < 8);
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn write_clamps_and_quantizes() {
        assert_eq!(quantize_pcm16(0.0), 0);
        assert_eq!(quantize_pcm16(1.5), 32767);
        assert_eq!(quantize_pcm16(-3.0), -32768);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.wav");
        write_wav(&p, &Waveform::new(vec![0.0, 1.5], 16000).unwrap()).unwrap();
        let raw: Vec<i16> = hound::WavReader::open(&p)
            .unwrap()
            .samples::<i16>()
            .map(|s| s.unwrap())
            .collect();
        assert_eq!(raw, vec![0, 32767]);
    }

    #[test]
    fn resample_identity_and_constant() {
        let w = Waveform::new(vec![0.1, -0.2, 0.3], 16000).unwrap();
        assert_eq!(resample_linear(&w, 16000).unwrap(), w);

        let c = Waveform::new(vec![0.3; 800], 8000).unwrap();
        let up = resample_linear(&c, 16000).unwrap();
        assert_eq!(up.len(), 1600);
        assert!(up.samples().iter().all(|&s| (s - 0.3).abs() < 1e-15));
    }

    #[test]
    fn resample_sine_matches_analytic() {
        let f = 100.0;
        let src: Vec<f64> = (0..48000)
            .map(|n| (2.0 * std::f64::consts::PI * f * n as f64 / 48000.0).sin())
            .collect();
        let w = Waveform::new(src, 48000).unwrap();
        let out = resample_linear(&w, 16000).unwrap();
        assert!((out.len() as i64 - 16000).abs() <= 1);
        for (n, &s) in out.samples().iter().enumerate() {
            let truth = (2.0 * std::f64::consts::PI * f * n as f64 / 16000.0).sin();
            assert!((s - truth).abs() < 1e-3, "n={n}");
        }
        // non-integer ratio
        let w44 = Waveform::new(
            (0..44100)
                .map(|n| (2.0 * std::f64::consts::PI * f * n as f64 / 44100.0).sin())
                .collect(),
            44100,
        )
        .unwrap();
        let out = resample_linear(&w44, 16000).unwrap();
        assert!((out.duration_secs() - 1.0).abs() <= 1.0 / 16000.0);
        for (n, &s) in out.samples().iter().enumerate().take(15990) {
            let truth = (2.0 * std::f64::consts::PI * f * n as f64 / 16000.0).sin();
            assert!((s - truth).abs() < 1e-3, "n={n}");
        }
    }

    fn test_signal() -> Waveform {
        let s = (0..16000)
            .map(|n| 0.3 * (n as f64 * 0.05).sin() + 0.1 * (n as f64 * 0.31).cos())
            .collect();
        Waveform::new(s, 16000).unwrap()
    }

    #[test]
    fn gaussian_noise_hits_default_snr() {
        let w = test_signal();
        let noisy = add_gaussian_noise(&w, 32.0, 7).unwrap();
        let snr = snr_db(&w, &noisy).unwrap();
        assert!((snr - 32.0).abs() < 0.01, "snr {snr}");
    }

    #[test]
    fn gaussian_noise_vanishes_at_high_snr() {
        let w = test_signal();
        let noisy = add_gaussian_noise(&w, 300.0, 1).unwrap();
        let max_dev = w
            .samples()
            .iter()
            .zip(noisy.samples())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_dev < 1e-10);
    }

    #[test]
    fn gaussian_noise_deterministic_and_guarded() {
        let w = test_signal();
        let a = add_gaussian_noise(&w, 20.0, 99).unwrap();
        let b = add_gaussian_noise(&w, 20.0, 99).unwrap();
        let c = add_gaussian_noise(&w, 20.0, 100).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(add_gaussian_noise(&w, f64::INFINITY, 0).is_err());
        let silent = Waveform::new(vec![0.0; 100], 16000).unwrap();
        assert!(matches!(add_gaussian_noise(&silent, 30.0, 0), Err(Error::ZeroEnergy)));
    }

    #[test]
    fn waveform_rejects_bad_input() {
        assert!(Waveform::new(vec![f64::NAN], 16000).is_err());
        assert!(Waveform::new(vec![0.0], 0).is_err());
    }
}
