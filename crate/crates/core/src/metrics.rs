//! Evaluation: SNR, ΔCosD, trial scoring, EER and similarity matrices.
//!
//! ASV scores are plain cosine *similarities* (higher means more likely the
//! same speaker). ΔCosD is the negated similarity, so it rises as protection
//! improves.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio_io::Waveform;
use crate::encoder::{cosine_loss, cosine_similarity, Embedding};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Returned by [`snr_db`] when the two signals are (numerically) identical.
pub const SNR_INFINITE_DB: f64 = f64::INFINITY;

/// Keyed embeddings in a deterministic order.
pub type EmbeddingMap = BTreeMap<String, Embedding>;

/// `10 log10(Σ ref² / Σ (ref - test)²)` over the common prefix of both
/// signals.
pub fn snr_db(reference: &Waveform, test: &Waveform) -> Result<f64> {
    if reference.sample_rate() != test.sample_rate() {
        return Err(Error::InvalidConfig(format!(
            "sample rates differ: {} vs {}",
            reference.sample_rate(),
            test.sample_rate()
        )));
    }
    let n = reference.len().min(test.len());
    if n == 0 {
        return Err(Error::Empty("waveform".into()));
    }
    let (r, t) = (&reference.samples()[..n], &test.samples()[..n]);
    let signal: f64 = r.iter().map(|s| s * s).sum();
    if !(signal > 0.0) {
        return Err(Error::ZeroEnergy);
    }
    let noise: f64 = r.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum();
    if noise < 1e-300 {
        return Ok(SNR_INFINITE_DB);
    }
    Ok(10.0 * (signal / noise).log10())
}

/// Negative cosine similarity between clean and perturbed embeddings.
pub fn delta_cosd(e: &Embedding, e_tilde: &Embedding) -> Result<f64> {
    cosine_loss(e, e_tilde)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Target,
    Nontarget,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Target => "target",
            Label::Nontarget => "nontarget",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trial {
    pub enroll: String,
    pub test: String,
    pub label: Label,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrialList {
    pub trials: Vec<Trial>,
}

impl TrialList {
    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn counts(&self) -> (usize, usize) {
        let targets = self.trials.iter().filter(|t| t.label == Label::Target).count();
        (targets, self.trials.len() - targets)
    }

    /// One `enroll test label` line per trial.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for t in &self.trials {
            let _ = writeln!(out, "{} {} {}", t.enroll, t.test, t.label.as_str());
        }
        out
    }
}

/// Parses whitespace-separated `enroll test label` lines. Blank lines are
/// skipped; labels are case-insensitive.
pub fn parse_trials_str(text: &str) -> Result<TrialList> {
    let mut trials = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 3 {
            return Err(Error::MalformedLine {
                line: lineno,
                reason: format!("expected 3 fields, found {}", fields.len()),
            });
        }
        let label = match fields[2].to_ascii_lowercase().as_str() {
            "target" => Label::Target,
            "nontarget" => Label::Nontarget,
            other => {
                return Err(Error::MalformedLine {
                    line: lineno,
                    reason: format!("label must be target or nontarget, found `{other}`"),
                })
            }
        };
        trials.push(Trial {
            enroll: fields[0].to_string(),
            test: fields[1].to_string(),
            label,
        });
    }
    if trials.is_empty() {
        return Err(Error::Empty("trial list has no trials".into()));
    }
    Ok(TrialList { trials })
}

pub fn parse_trials(path: impl AsRef<Path>) -> Result<TrialList> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trials_str(&text)
}

/// Per-trial cosine similarities, aligned with the trial list.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    pub scores: Vec<f64>,
}

impl ScoreSet {
    /// Splits scores into `(targets, nontargets)`.
    pub fn split(&self, trials: &TrialList) -> Result<(Vec<f64>, Vec<f64>)> {
        if trials.len() != self.scores.len() {
            return Err(Error::shape(trials.len(), self.scores.len()));
        }
        let mut tar = Vec::new();
        let mut non = Vec::new();
        for (t, &s) in trials.trials.iter().zip(&self.scores) {
            match t.label {
                Label::Target => tar.push(s),
                Label::Nontarget => non.push(s),
            }
        }
        Ok((tar, non))
    }

    /// Trial lines with the score appended as a fourth column.
    pub fn to_text(&self, trials: &TrialList) -> String {
        let mut out = String::new();
        for (t, s) in trials.trials.iter().zip(&self.scores) {
            let _ = writeln!(out, "{} {} {} {}", t.enroll, t.test, t.label.as_str(), s);
        }
        out
    }
}

pub fn score_trials(trials: &TrialList, embeddings: &EmbeddingMap) -> Result<ScoreSet> {
    score_trials_split(trials, embeddings, embeddings)
}

/// Scores with enrollment keys looked up in `enroll` and test keys in `test`.
pub fn score_trials_split(trials: &TrialList, enroll: &EmbeddingMap, test: &EmbeddingMap) -> Result<ScoreSet> {
    let scores = trials
        .trials
        .iter()
        .map(|t| {
            let a = enroll
                .get(&t.enroll)
                .ok_or_else(|| Error::MissingKey(t.enroll.clone()))?;
            let b = test.get(&t.test).ok_or_else(|| Error::MissingKey(t.test.clone()))?;
            cosine_similarity(a, b)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScoreSet { scores })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub threshold: f64,
    /// Fraction of nontarget scores `>= threshold`.
    pub far: f64,
    /// Fraction of target scores `< threshold`.
    pub frr: f64,
}

/// Operating points at every distinct score, plus a final reject-all point
/// (reported at the maximum score) with FAR 0 and FRR 1.
pub fn operating_points(target_scores: &[f64], nontarget_scores: &[f64]) -> Result<Vec<OperatingPoint>> {
    if target_scores.is_empty() || nontarget_scores.is_empty() {
        return Err(Error::Empty(
            "EER needs at least one target and one nontarget score".into(),
        ));
    }
    if target_scores.iter().chain(nontarget_scores).any(|s| !s.is_finite()) {
        return Err(Error::InvalidConfig("scores must be finite".into()));
    }
    let mut tar = target_scores.to_vec();
    let mut non = nontarget_scores.to_vec();
    tar.sort_by(f64::total_cmp);
    non.sort_by(f64::total_cmp);
    let mut thresholds: Vec<f64> = tar.iter().chain(&non).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();

    let (nt, nn) = (tar.len() as f64, non.len() as f64);
    let mut points: Vec<OperatingPoint> = thresholds
        .iter()
        .map(|&th| {
            let rejected_targets = tar.partition_point(|&s| s < th);
            let rejected_nontargets = non.partition_point(|&s| s < th);
            OperatingPoint {
                threshold: th,
                far: (non.len() - rejected_nontargets) as f64 / nn,
                frr: rejected_targets as f64 / nt,
            }
        })
        .collect();
    points.push(OperatingPoint {
        threshold: *thresholds.last().unwrap(),
        far: 0.0,
        frr: 1.0,
    });
    Ok(points)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Eer {
    /// Fraction in `[0, 1]`; values above 0.5 mean the score polarity is
    /// inverted.
    pub eer: f64,
    pub threshold: f64,
}

/// Equal error rate, linearly interpolated between the two operating points
/// where `FAR - FRR` changes sign.
pub fn compute_eer(target_scores: &[f64], nontarget_scores: &[f64]) -> Result<Eer> {
    let points = operating_points(target_scores, nontarget_scores)?;
    Ok(crossing(&points))
}

fn crossing(points: &[OperatingPoint]) -> Eer {
    let d = |p: &OperatingPoint| p.far - p.frr;
    // first point has FRR 0 and FAR 1, the last FAR 0 and FRR 1
    let k = points.iter().position(|p| d(p) <= 0.0).unwrap();
    if k == 0 {
        return Eer {
            eer: points[0].far,
            threshold: points[0].threshold,
        };
    }
    let (a, b) = (&points[k - 1], &points[k]);
    let t = d(a) / (d(a) - d(b));
    Eer {
        eer: a.far + t * (b.far - a.far),
        threshold: a.threshold + t * (b.threshold - a.threshold),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EerReport {
    pub eer: f64,
    pub threshold: f64,
    pub n_target: usize,
    pub n_nontarget: usize,
}

pub fn eer_report(trials: &TrialList, scores: &ScoreSet) -> Result<EerReport> {
    let (tar, non) = scores.split(trials)?;
    let e = compute_eer(&tar, &non)?;
    Ok(EerReport {
        eer: e.eer,
        threshold: e.threshold,
        n_target: tar.len(),
        n_nontarget: non.len(),
    })
}

/// Speaker key of an utterance key: everything before the first `separator`.
pub fn speaker_of(key: &str, separator: char) -> &str {
    key.split(separator).next().unwrap_or(key)
}

/// Averages utterance embeddings per speaker prefix.
pub fn average_by_speaker(embeddings: &EmbeddingMap, separator: char) -> Result<EmbeddingMap> {
    let mut groups: BTreeMap<String, (Vec<f64>, usize)> = BTreeMap::new();
    for (key, e) in embeddings {
        let entry = groups
            .entry(speaker_of(key, separator).to_string())
            .or_insert_with(|| (vec![0.0; e.len()], 0));
        if entry.0.len() != e.len() {
            return Err(Error::shape(entry.0.len(), e.len()));
        }
        for (acc, v) in entry.0.iter_mut().zip(e.values()) {
            *acc += v;
        }
        entry.1 += 1;
    }
    Ok(groups
        .into_iter()
        .map(|(k, (sum, n))| (k, Embedding::new(sum.into_iter().map(|v| v / n as f64).collect())))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub row_keys: Vec<String>,
    pub col_keys: Vec<String>,
    pub values: Matrix,
}

pub fn similarity_matrix(rows: &EmbeddingMap, cols: &EmbeddingMap) -> Result<SimilarityMatrix> {
    if rows.is_empty() || cols.is_empty() {
        return Err(Error::Empty("similarity matrix needs embeddings on both axes".into()));
    }
    let row_keys: Vec<String> = rows.keys().cloned().collect();
    let col_keys: Vec<String> = cols.keys().cloned().collect();
    let mut values = Matrix::zeros(rows.len(), cols.len());
    for (i, r) in rows.values().enumerate() {
        for (j, c) in cols.values().enumerate() {
            values.set(i, j, cosine_similarity(r, c)?);
        }
    }
    Ok(SimilarityMatrix {
        row_keys,
        col_keys,
        values,
    })
}

impl SimilarityMatrix {
    /// Header row `key,<col keys...>`, then one row per row key.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("key");
        for c in &self.col_keys {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (i, r) in self.row_keys.iter().enumerate() {
            out.push_str(r);
            for v in self.values.row(i) {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| Error::Empty("CSV".into()))?;
        let col_keys: Vec<String> = header.split(',').skip(1).map(str::to_string).collect();
        let mut row_keys = Vec::new();
        let mut data = Vec::new();
        for (i, line) in lines {
            let mut fields = line.split(',');
            row_keys.push(fields.next().unwrap_or_default().to_string());
            let row: Vec<f64> = fields
                .map(|f| {
                    f.trim().parse::<f64>().map_err(|e| Error::MalformedLine {
                        line: i + 1,
                        reason: e.to_string(),
                    })
                })
                .collect::<Result<_>>()?;
            if row.len() != col_keys.len() {
                return Err(Error::MalformedLine {
                    line: i + 1,
                    reason: format!("{} values for {} columns", row.len(), col_keys.len()),
                });
            }
            data.extend(row);
        }
        Ok(Self {
            values: Matrix::from_vec(row_keys.len(), col_keys.len(), data),
            row_keys,
            col_keys,
        })
    }
}
