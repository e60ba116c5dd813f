//! Light encoder training on labelled utterances.
//!
//! Pairwise cosine objective over every utterance pair in the set: same-
//! speaker pairs are pulled towards cosine 1 (`1 - cos`), different-speaker
//! pairs are pushed below `1 - margin` (`max(0, cos - (1 - margin))`).
//! Full-batch gradient steps, with the gradient rescaled to unit global norm
//! whenever it is larger.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio_io::Waveform;
use crate::encoder::{backward_with_params, cosine_loss_grad, cosine_similarity, forward, ParamGrads, WeightStore};
use crate::error::{Error, Result};
use crate::metrics::speaker_of;
use crate::spectral::{log_mel, mel_matrix, stft, MelFeatures, StftConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub learning_rate: f64,
    pub margin: f64,
    /// Recorded for reproducibility; full-batch training is deterministic.
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 30,
            learning_rate: 0.5,
            margin: 0.5,
            seed: 0,
        }
    }
}

/// Speaker label of every utterance key (prefix before `-`).
fn speaker_ids(keys: &[String]) -> Vec<&str> {
    keys.iter().map(|k| speaker_of(k, '-')).collect()
}

/// Mean pair loss and its gradient with respect to each embedding.
pub fn pair_loss(embeddings: &[Vec<f64>], speakers: &[&str], margin: f64) -> Result<(f64, Vec<Vec<f64>>)> {
    let n = embeddings.len();
    let wrapped: Vec<_> = embeddings
        .iter()
        .map(|e| crate::encoder::Embedding::new(e.clone()))
        .collect();
    let mut grads = vec![vec![0.0; embeddings.first().map_or(0, Vec::len)]; n];
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            pairs += 1;
            let cos = cosine_similarity(&wrapped[i], &wrapped[j])?;
            // d(loss)/d(cos)
            let dcos = if speakers[i] == speakers[j] {
                total += 1.0 - cos;
                -1.0
            } else if cos > 1.0 - margin {
                total += cos - (1.0 - margin);
                1.0
            } else {
                0.0
            };
            if dcos == 0.0 {
                continue;
            }
            // cosine_loss_grad(a, b) = d(-cos)/db
            let gj = cosine_loss_grad(&wrapped[i], &wrapped[j])?;
            let gi = cosine_loss_grad(&wrapped[j], &wrapped[i])?;
            for (acc, g) in grads[j].iter_mut().zip(&gj) {
                *acc -= dcos * g;
            }
            for (acc, g) in grads[i].iter_mut().zip(&gi) {
                *acc -= dcos * g;
            }
        }
    }
    if pairs == 0 {
        return Err(Error::Empty("training needs at least two utterances".into()));
    }
    let scale = 1.0 / pairs as f64;
    grads.iter_mut().flatten().for_each(|g| *g *= scale);
    Ok((total * scale, grads))
}

fn global_norm(g: &ParamGrads) -> f64 {
    g.conv_weights
        .iter()
        .chain(&g.conv_biases)
        .flatten()
        .chain(&g.proj_weight)
        .chain(&g.proj_bias)
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Trains `ws` on `(key, waveform)` pairs; returns the weights and the loss
/// before each epoch's update.
pub fn train_encoder(
    mut ws: WeightStore,
    utterances: &[(String, Waveform)],
    stft_cfg: StftConfig,
    opts: &TrainOptions,
) -> Result<(WeightStore, Vec<f64>)> {
    if !(opts.learning_rate > 0.0) || !(0.0..=2.0).contains(&opts.margin) {
        return Err(Error::InvalidConfig(
            "learning rate must be > 0 and margin in [0, 2]".into(),
        ));
    }
    let keys: Vec<String> = utterances.iter().map(|(k, _)| k.clone()).collect();
    let speakers = speaker_ids(&keys);
    let distinct: std::collections::BTreeSet<&&str> = speakers.iter().collect();
    if distinct.len() < 2 {
        return Err(Error::InvalidConfig("training needs at least two speakers".into()));
    }
    let mel = mel_matrix(stft_cfg.fft_size, ws.config().n_mels, crate::audio_io::CANONICAL_RATE)?;
    let feats: Vec<MelFeatures> = utterances
        .par_iter()
        .map(|(_, w)| log_mel(&stft(w, &stft_cfg)?.magnitude, &mel))
        .collect::<Result<_>>()?;

    let mut history = Vec::with_capacity(opts.epochs);
    for _ in 0..opts.epochs {
        let passes = feats.par_iter().map(|f| forward(f, &ws)).collect::<Result<Vec<_>>>()?;
        let embeddings: Vec<Vec<f64>> = passes.iter().map(|(e, _)| e.values().to_vec()).collect();
        let (loss, egrads) = pair_loss(&embeddings, &speakers, opts.margin)?;
        history.push(loss);
        let partials = passes
            .par_iter()
            .zip(&egrads)
            .map(|((_, cache), g)| {
                let mut p = ParamGrads::zeros_like(&ws);
                backward_with_params(cache, &ws, g, &mut p)?;
                Ok(p)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut total = ParamGrads::zeros_like(&ws);
        for p in &partials {
            total.add(p);
        }
        let norm = global_norm(&total);
        if norm > 1.0 {
            total.scale(1.0 / norm);
        }
        ws.apply_update(&total, opts.learning_rate);
    }
    Ok((ws, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{init_random, EncoderConfig};
    use crate::synth::synth_corpus;

    #[test]
    fn pair_loss_gradient_matches_finite_differences() {
        let embeddings = vec![
            vec![1.0, 0.2, -0.3],
            vec![0.9, 0.1, 0.4],
            vec![-0.2, 1.0, 0.3],
            vec![0.5, 0.5, 0.5],
        ];
        let speakers = ["a", "a", "b", "b"];
        let (_, g) = pair_loss(&embeddings, &speakers, 1.5).unwrap();
        let h = 1e-6;
        for i in 0..4 {
            for k in 0..3 {
                let mut p = embeddings.clone();
                p[i][k] += h;
                let mut q = embeddings.clone();
                q[i][k] -= h;
                let fd =
                    (pair_loss(&p, &speakers, 1.5).unwrap().0 - pair_loss(&q, &speakers, 1.5).unwrap().0) / (2.0 * h);
                assert!((fd - g[i][k]).abs() < 1e-7, "{i},{k}: {fd} vs {}", g[i][k]);
            }
        }
    }

    #[test]
    fn training_lowers_the_loss() {
        let corpus = synth_corpus(3, 2, 0.5, 3).unwrap();
        let ws = init_random(&EncoderConfig::default(), 1).unwrap();
        let opts = TrainOptions {
            epochs: 6,
            ..TrainOptions::default()
        };
        let (_, history) = train_encoder(ws, &corpus, StftConfig::default(), &opts).unwrap();
        assert_eq!(history.len(), 6);
        assert!(history.last().unwrap() < history.first().unwrap(), "{history:?}");
    }

    #[test]
    fn single_speaker_rejected() {
        let corpus = synth_corpus(1, 3, 0.3, 3).unwrap();
        let ws = init_random(&EncoderConfig::default(), 1).unwrap();
        assert!(train_encoder(ws, &corpus, StftConfig::default(), &TrainOptions::default()).is_err());
    }
}
