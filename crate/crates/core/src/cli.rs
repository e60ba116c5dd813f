//! Batch command-line front end. The `voicecloak` binary is a thin wrapper
//! around [`main_with_args`].

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::archive::{self, key_for_path};
use crate::attack::{AttackConfig, Method, ProtectOptions, ProtectReport, Protector};
use crate::audio_io::{read_wav, resample_linear, write_wav, Waveform, CANONICAL_RATE};
use crate::encoder::{self, init_random, save_weights, EncoderConfig, WeightStore};
use crate::metrics::{
    self, average_by_speaker, eer_report, operating_points, parse_trials, similarity_matrix, EmbeddingMap,
};
use crate::spectral::StftConfig;
use crate::synth;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Environment variable holding the `env_logger` filter.
pub const LOG_ENV: &str = "VOICECLOAK_LOG";

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "voicecloak",
    version,
    about = "Adversarial speaker protection and evaluation"
)]
pub struct Cli {
    /// Seed recorded in every manifest; drives all randomness.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Worker threads for per-file work (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Draw a random encoder and write its weight file.
    InitEncoder(InitEncoderArgs),
    /// Print the default encoder configuration as JSON.
    DefaultConfig,
    /// Protect WAV files against speaker-embedding extraction.
    Protect(ProtectArgs),
    /// Extract embeddings from WAV files into an archive.
    Embed(EmbedArgs),
    /// Score a trial list and compute the EER.
    Eval(EvalArgs),
    /// Cosine similarity matrix between two archives.
    Simmat(SimmatArgs),
    /// Render a seeded synthetic corpus with a trial list.
    Synth(SynthArgs),
    /// Train an encoder on a directory of `<speaker>-<utt>.wav` files.
    Train(TrainArgs),
    /// Re-execute the command recorded in a manifest.
    Rerun(RerunArgs),
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct InitEncoderArgs {
    /// Encoder configuration JSON (see `default-config`).
    #[arg(long)]
    pub config: PathBuf,
    /// Weight file to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ProtectArgs {
    /// WAV file or directory of WAV files.
    pub input: PathBuf,
    /// Encoder weight file.
    #[arg(long)]
    pub weights: PathBuf,
    /// fgsm, ifgsm or gaussian.
    #[arg(long, default_value = "ifgsm")]
    pub method: Method,
    /// L-infinity budget on the STFT magnitude.
    #[arg(long, default_value_t = 0.02)]
    pub epsilon: f64,
    /// I-FGSM step size.
    #[arg(long, default_value_t = 0.0004)]
    pub alpha: f64,
    /// I-FGSM iteration count.
    #[arg(long, default_value_t = 50)]
    pub iterations: usize,
    /// SNR of the Gaussian baseline, dB.
    #[arg(long = "target-snr", default_value_t = 32.0)]
    pub target_snr: f64,
    /// Output directory for WAVs, reports and the manifest.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct EmbedArgs {
    /// WAV file or directory of WAV files.
    pub input: PathBuf,
    /// Encoder weight file.
    #[arg(long)]
    pub weights: PathBuf,
    /// Archive path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    /// Trial list, one `<enroll> <test> <target|nontarget>` per line.
    #[arg(long)]
    pub trials: PathBuf,
    /// Archive holding the enrollment keys.
    #[arg(long)]
    pub enroll: PathBuf,
    /// Archive holding the test keys; defaults to the enrollment archive.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Output directory for scores, EER and DET points.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SimmatArgs {
    /// Archive for the rows.
    #[arg(long)]
    pub rows: PathBuf,
    /// Archive for the columns; defaults to the rows archive.
    #[arg(long)]
    pub cols: Option<PathBuf>,
    /// Average embeddings per speaker (key prefix before `-`) first.
    #[arg(long)]
    pub speaker_level: bool,
    /// CSV path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SynthArgs {
    /// Number of synthetic speakers.
    #[arg(long, default_value_t = 10)]
    pub speakers: usize,
    /// Utterances per speaker.
    #[arg(long, default_value_t = 5)]
    pub utterances: usize,
    /// Utterance length.
    #[arg(long, default_value_t = 2.0)]
    pub seconds: f64,
    /// RMS level of every utterance.
    #[arg(long, default_value_t = synth::DEFAULT_RMS)]
    pub rms: f64,
    /// Output directory for WAVs and trials.txt.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    /// Directory of WAV files named `<speaker>-<utterance>.wav`.
    pub input: PathBuf,
    /// Starting weights; a fresh default encoder is drawn when omitted.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Full-batch epochs.
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    /// Learning rate.
    #[arg(long, default_value_t = 0.5)]
    pub lr: f64,
    /// Cosine margin separating same- and different-speaker pairs.
    #[arg(long, default_value_t = 0.5)]
    pub margin: f64,
    /// Weight file to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct RerunArgs {
    /// A `manifest.json` or `<file>.manifest.json` written by an earlier run.
    pub manifest: PathBuf,
    /// Write outputs here instead of the recorded location.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Written next to every output; [`Command::Rerun`] replays it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub seed: u64,
    /// The invocation, with paths made absolute.
    pub invocation: Command,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    /// Every parameter that shapes the outputs.
    pub config: serde_json::Value,
}

impl RunManifest {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }

    fn save(&self, path: &Path) -> anyhow::Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_FAILURE,
        }
    }
}

impl From<crate::Error> for CliError {
    fn from(e: crate::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

type CliResult<T> = Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            match &e {
                CliError::Usage(msg) => eprintln!("error: {msg}"),
                CliError::Runtime(err) => eprintln!("error: {err:#}"),
            }
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> CliResult<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build()
        .map_err(|e| anyhow!("building worker pool: {e}"))?;
    pool.install(|| dispatch(&cli.command, cli.seed))
}

fn dispatch(command: &Command, seed: u64) -> CliResult<()> {
    match command {
        Command::InitEncoder(a) => cmd_init_encoder(a, seed),
        Command::DefaultConfig => {
            let text = serde_json::to_string_pretty(&EncoderConfig::default()).map_err(anyhow::Error::from)?;
            println!("{text}");
            Ok(())
        }
        Command::Protect(a) => cmd_protect(a, seed),
        Command::Embed(a) => cmd_embed(a, seed),
        Command::Eval(a) => cmd_eval(a, seed),
        Command::Simmat(a) => cmd_simmat(a, seed),
        Command::Synth(a) => cmd_synth(a, seed),
        Command::Train(a) => cmd_train(a, seed),
        Command::Rerun(a) => cmd_rerun(a),
    }
}

fn require_exists(path: &Path, what: &str) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(usage(format!("{what} {} does not exist", path.display())))
    }
}

fn absolute(path: &Path) -> PathBuf {
    std::path::absolute(path).unwrap_or_else(|_| path.to_path_buf())
}

fn ensure_parent(path: &Path) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

/// `<file>.manifest.json` next to a single-file output.
fn sibling_manifest(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(OsString::from).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Per-file seed: independent of which other files are in the batch.
pub fn file_seed(seed: u64, key: &str) -> u64 {
    seed ^ fnv1a(key.as_bytes())
}

/// The WAV file itself, or the `.wav` files of a directory in name order.
pub fn collect_wavs(input: &Path) -> CliResult<Vec<PathBuf>> {
    require_exists(input, "input")?;
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(input)
        .with_context(|| format!("listing {}", input.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(anyhow!("no .wav files in {}", input.display()).into());
    }
    Ok(files)
}

/// Reads a WAV and brings it to the canonical rate.
pub fn load_canonical(path: &Path) -> crate::Result<Waveform> {
    let w = read_wav(path)?;
    if w.sample_rate() == CANONICAL_RATE {
        Ok(w)
    } else {
        log::info!(
            "{}: resampling {} Hz -> {CANONICAL_RATE} Hz",
            path.display(),
            w.sample_rate()
        );
        resample_linear(&w, CANONICAL_RATE)
    }
}

struct LoadedWeights {
    store: WeightStore,
    fingerprint: String,
}

fn load_weights_checked(path: &Path) -> CliResult<LoadedWeights> {
    require_exists(path, "weights")?;
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let store = encoder::decode_weights(&bytes).with_context(|| format!("loading weights {}", path.display()))?;
    Ok(LoadedWeights {
        store,
        fingerprint: format!("{:016x}", fnv1a(&bytes)),
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn cmd_init_encoder(a: &InitEncoderArgs, seed: u64) -> CliResult<()> {
    require_exists(&a.config, "config")?;
    let text = fs::read_to_string(&a.config).with_context(|| format!("reading {}", a.config.display()))?;
    let cfg: EncoderConfig =
        serde_json::from_str(&text).map_err(|e| usage(format!("config {}: {e}", a.config.display())))?;
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let ws = init_random(&cfg, seed).context("initializing encoder")?;
    ensure_parent(&a.out)?;
    save_weights(&ws, &a.out).context("saving weights")?;
    log::info!("wrote {}", a.out.display());
    RunManifest {
        tool_version: TOOL_VERSION.into(),
        seed,
        invocation: Command::InitEncoder(InitEncoderArgs {
            config: absolute(&a.config),
            out: absolute(&a.out),
        }),
        inputs: vec![absolute(&a.config)],
        outputs: vec![absolute(&a.out)],
        config: serde_json::json!({ "encoder": cfg }),
    }
    .save(&sibling_manifest(&a.out))?;
    Ok(())
}

/// Per-file JSON written next to each protected WAV.
#[derive(Debug, Serialize)]
struct FileReport<'a> {
    input: PathBuf,
    source_sample_rate: u32,
    #[serde(flatten)]
    report: &'a ProtectReport,
}

fn protect_options(a: &ProtectArgs) -> CliResult<ProtectOptions> {
    let attack = AttackConfig {
        epsilon: a.epsilon,
        alpha: a.alpha,
        iterations: a.iterations,
        clamp_nonnegative: true,
    };
    if a.method != Method::Gaussian {
        attack.validate().map_err(|e| usage(e.to_string()))?;
    } else if !a.target_snr.is_finite() {
        return Err(usage("--target-snr must be finite"));
    }
    Ok(ProtectOptions {
        method: a.method,
        attack,
        target_snr_db: a.target_snr,
        seed: 0,
    })
}

fn cmd_protect(a: &ProtectArgs, seed: u64) -> CliResult<()> {
    let opts = protect_options(a)?;
    let files = collect_wavs(&a.input)?;
    let weights = load_weights_checked(&a.weights)?;
    let stems = files
        .iter()
        .map(|f| key_for_path(f))
        .collect::<crate::Result<Vec<_>>>()?;
    check_unique(&stems)?;
    let protector = Protector::new(weights.store, StftConfig::default())?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;

    let results: Vec<(PathBuf, anyhow::Result<Vec<PathBuf>>)> = files
        .par_iter()
        .zip(&stems)
        .map(|(path, stem)| {
            let r = protect_one(&protector, path, stem, &opts, seed, &a.out);
            match &r {
                Ok(_) => log::info!("protected {}", path.display()),
                Err(e) => log::error!("{}: {e:#}", path.display()),
            }
            (path.clone(), r)
        })
        .collect();

    let mut outputs = Vec::new();
    let mut failed = Vec::new();
    for (path, r) in results {
        match r {
            Ok(o) => outputs.extend(o.iter().map(|p| absolute(p))),
            Err(e) => failed.push(format!("{}: {e:#}", path.display())),
        }
    }
    let invocation = Command::Protect(ProtectArgs {
        input: absolute(&a.input),
        weights: absolute(&a.weights),
        out: absolute(&a.out),
        ..a.clone()
    });
    RunManifest {
        tool_version: TOOL_VERSION.into(),
        seed,
        invocation,
        inputs: files.iter().map(|f| absolute(f)).collect(),
        outputs,
        config: serde_json::json!({
            "method": opts.method,
            "attack": opts.attack,
            "target_snr_db": opts.target_snr_db,
            "stft": protector.stft_config(),
            "encoder": protector.weights().config(),
            "weights_fnv1a": weights.fingerprint,
            "sample_rate": CANONICAL_RATE,
            "per_file_seed": "seed XOR fnv1a(file stem)",
        }),
    }
    .save(&a.out.join("manifest.json"))?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(anyhow!(
            "{} of {} files failed:\n  {}",
            failed.len(),
            files.len(),
            failed.join("\n  ")
        )
        .into())
    }
}

fn protect_one(
    protector: &Protector,
    path: &Path,
    stem: &str,
    opts: &ProtectOptions,
    seed: u64,
    out_dir: &Path,
) -> anyhow::Result<Vec<PathBuf>> {
    let source_rate = read_wav(path)?.sample_rate();
    let w = load_canonical(path)?;
    let opts = ProtectOptions {
        seed: file_seed(seed, stem),
        ..*opts
    };
    let protected = protector.protect(&w, &opts)?;
    let wav_path = out_dir.join(format!("{stem}.wav"));
    let json_path = out_dir.join(format!("{stem}.json"));
    write_wav(&wav_path, &protected.waveform)?;
    write_json(
        &json_path,
        &FileReport {
            input: absolute(path),
            source_sample_rate: source_rate,
            report: &protected.report,
        },
    )?;
    Ok(vec![wav_path, json_path])
}

fn check_unique(stems: &[String]) -> CliResult<()> {
    let mut seen = std::collections::BTreeSet::new();
    for s in stems {
        if !seen.insert(s) {
            return Err(crate::Error::DuplicateKey(s.clone()).into());
        }
    }
    Ok(())
}

/// Embeds every file; keys are file stems.
pub fn embed_files(protector: &Protector, files: &[PathBuf]) -> anyhow::Result<EmbeddingMap> {
    let pairs = files
        .par_iter()
        .map(|f| -> anyhow::Result<_> {
            let key = key_for_path(f)?;
            let w = load_canonical(f)?;
            let e = protector
                .embed_waveform(&w)
                .with_context(|| format!("embedding {}", f.display()))?;
            Ok((key, e))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    Ok(archive::collect_unique(pairs)?)
}

fn cmd_embed(a: &EmbedArgs, seed: u64) -> CliResult<()> {
    let files = collect_wavs(&a.input)?;
    let weights = load_weights_checked(&a.weights)?;
    let protector = Protector::new(weights.store, StftConfig::default())?;
    let map = embed_files(&protector, &files)?;
    ensure_parent(&a.out)?;
    archive::save_archive(&map, &a.out).context("writing archive")?;
    log::info!("wrote {} embeddings to {}", map.len(), a.out.display());
    RunManifest {
        tool_version: TOOL_VERSION.into(),
        seed,
        invocation: Command::Embed(EmbedArgs {
            input: absolute(&a.input),
            weights: absolute(&a.weights),
            out: absolute(&a.out),
        }),
        inputs: files.iter().map(|f| absolute(f)).collect(),
        outputs: vec![absolute(&a.out)],
        config: serde_json::json!({
            "stft": protector.stft_config(),
            "encoder": protector.weights().config(),
            "weights_fnv1a": weights.fingerprint,
            "sample_rate": CANONICAL_RATE,
        }),
    }
    .save(&sibling_manifest(&a.out))?;
    Ok(())
}

fn load_archive_checked(path: &Path) -> CliResult<EmbeddingMap> {
    require_exists(path, "archive")?;
    Ok(archive::load_archive(path).with_context(|| format!("loading archive {}", path.display()))?)
}

fn cmd_eval(a: &EvalArgs, seed: u64) -> CliResult<()> {
    require_exists(&a.trials, "trials")?;
    let trials = parse_trials(&a.trials).with_context(|| format!("parsing {}", a.trials.display()))?;
    let enroll = load_archive_checked(&a.enroll)?;
    let test = match &a.test {
        Some(p) => load_archive_checked(p)?,
        None => enroll.clone(),
    };
    let scores = metrics::score_trials_split(&trials, &enroll, &test).context("scoring trials")?;
    let report = eer_report(&trials, &scores)?;
    let (tar, non) = scores.split(&trials)?;
    let points = operating_points(&tar, &non)?;

    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let scores_path = a.out.join("scores.txt");
    let eer_path = a.out.join("eer.json");
    let det_path = a.out.join("det.csv");
    fs::write(&scores_path, scores.to_text(&trials)).with_context(|| format!("writing {}", scores_path.display()))?;
    write_json(&eer_path, &report)?;
    let mut det = String::from("threshold,far,frr\n");
    for p in &points {
        det.push_str(&format!("{},{},{}\n", p.threshold, p.far, p.frr));
    }
    fs::write(&det_path, det).with_context(|| format!("writing {}", det_path.display()))?;
    log::info!("EER {:.4} over {} trials", report.eer, trials.len());

    let mut inputs = vec![absolute(&a.trials), absolute(&a.enroll)];
    inputs.extend(a.test.as_deref().map(absolute));
    RunManifest {
        tool_version: TOOL_VERSION.into(),
        seed,
        invocation: Command::Eval(EvalArgs {
            trials: absolute(&a.trials),
            enroll: absolute(&a.enroll),
            test: a.test.as_deref().map(absolute),
            out: absolute(&a.out),
        }),
        inputs,
        outputs: [&scores_path, &eer_path, &det_path]
            .iter()
            .map(|p| absolute(p))
            .collect(),
        config: serde_json::json!({ "score": "cosine similarity", "n_trials": trials.len() }),
    }
    .save(&a.out.join("manifest.json"))?;
    Ok(())
}

fn cmd_simmat(a: &SimmatArgs, seed: u64) -> CliResult<()> {
    let mut rows = load_archive_checked(&a.rows)?;
    let mut cols = match &a.cols {
        Some(p) => load_archive_checked(p)?,
        None => rows.clone(),
    };
    if a.speaker_level {
        rows = average_by_speaker(&rows, '-')?;
        cols = average_by_speaker(&cols, '-')?;
    }
    let m = similarity_matrix(&rows, &cols)?;
    ensure_parent(&a.out)?;
    fs::write(&a.out, m.to_csv()).with_context(|| format!("writing {}", a.out.display()))?;
    let mut inputs = vec![absolute(&a.rows)];
    inputs.extend(a.cols.as_deref().map(absolute));
    RunManifest {
        tool_version: TOOL_VERSION.into(),
        seed,
        invocation: Command::Simmat(SimmatArgs {
            rows: absolute(&a.rows),
            cols: a.cols.as_deref().map(absolute),
            out: absolute(&a.out),
            ..a.clone()
        }),
        inputs,
        outputs: vec![absolute(&a.out)],
        config: serde_json::json!({ "speaker_level": a.speaker_level, "speaker_separator": "-" }),
    }
    .save(&sibling_manifest(&a.out))?;
    Ok(())
}

/// Every unordered pair of distinct utterances, as trial lines.
pub fn all_pairs_trials(keys: &[String]) -> metrics::TrialList {
    let mut trials = Vec::new();
    for (i, a) in keys.iter().enumerate() {
        for b in &keys[i + 1..] {
            let label = if metrics::speaker_of(a, '-') == metrics::speaker_of(b, '-') {
                metrics::Label::Target
            } else {
                metrics::Label::Nontarget
            };
            trials.push(metrics::Trial {
                enroll: a.clone(),
                test: b.clone(),
                label,
            });
        }
    }
    metrics::TrialList { trials }
}

fn cmd_synth(a: &SynthArgs, seed: u64) -> CliResult<()> {
    if a.speakers == 0 || a.utterances == 0 || !(a.seconds > 0.0) || !(a.rms > 0.0 && a.rms < 1.0) {
        return Err(usage("synth needs speakers, utterances, seconds > 0 and 0 < rms < 1"));
    }
    let corpus = synth::synth_corpus_rms(a.speakers, a.utterances, a.seconds, seed, a.rms)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut outputs = Vec::new();
    for (key, w) in &corpus {
        let p = a.out.join(format!("{key}.wav"));
        write_wav(&p, w)?;
        outputs.push(absolute(&p));
    }
    let keys: Vec<String> = corpus.iter().map(|(k, _)| k.clone()).collect();
    let trials_path = a.out.join("trials.txt");
    fs::write(&trials_path, all_pairs_trials(&keys).to_text())
        .with_context(|| format!("writing {}", trials_path.display()))?;
    outputs.push(absolute(&trials_path));
    RunManifest {
        tool_version: TOOL_VERSION.into(),
        seed,
        invocation: Command::Synth(SynthArgs {
            out: absolute(&a.out),
            ..a.clone()
        }),
        inputs: Vec::new(),
        outputs,
        config: serde_json::to_value(a).map_err(anyhow::Error::from)?,
    }
    .save(&a.out.join("manifest.json"))?;
    Ok(())
}

fn cmd_train(a: &TrainArgs, seed: u64) -> CliResult<()> {
    if a.epochs == 0 || !(a.lr > 0.0) || !(0.0..=2.0).contains(&a.margin) {
        return Err(usage("train needs epochs > 0, lr > 0 and a margin in [0, 2]"));
    }
    let files = collect_wavs(&a.input)?;
    let start = match &a.weights {
        Some(p) => load_weights_checked(p)?.store,
        None => init_random(&EncoderConfig::default(), seed)?,
    };
    let utterances = files
        .iter()
        .map(|f| -> anyhow::Result<_> { Ok((key_for_path(f)?, load_canonical(f)?)) })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let opts = crate::train::TrainOptions {
        epochs: a.epochs,
        learning_rate: a.lr,
        margin: a.margin,
        seed,
    };
    let (trained, history) =
        crate::train::train_encoder(start, &utterances, StftConfig::default(), &opts).context("training")?;
    ensure_parent(&a.out)?;
    save_weights(&trained, &a.out).context("saving weights")?;
    for (epoch, loss) in history.iter().enumerate() {
        log::info!("epoch {epoch}: loss {loss:.6}");
    }
    let mut inputs: Vec<PathBuf> = files.iter().map(|f| absolute(f)).collect();
    inputs.extend(a.weights.as_deref().map(absolute));
    RunManifest {
        tool_version: TOOL_VERSION.into(),
        seed,
        invocation: Command::Train(TrainArgs {
            input: absolute(&a.input),
            weights: a.weights.as_deref().map(absolute),
            out: absolute(&a.out),
            ..a.clone()
        }),
        inputs,
        outputs: vec![absolute(&a.out)],
        config: serde_json::json!({ "train": opts, "encoder": trained.config(), "loss_history": history }),
    }
    .save(&sibling_manifest(&a.out))?;
    Ok(())
}

fn cmd_rerun(a: &RerunArgs) -> CliResult<()> {
    require_exists(&a.manifest, "manifest")?;
    let m = RunManifest::load(&a.manifest)?;
    if m.tool_version != TOOL_VERSION {
        log::warn!(
            "manifest written by voicecloak {}, running {TOOL_VERSION}",
            m.tool_version
        );
    }
    let mut command = m.invocation;
    if let Some(out) = &a.out {
        match &mut command {
            Command::InitEncoder(c) => c.out = out.clone(),
            Command::Protect(c) => c.out = out.clone(),
            Command::Embed(c) => c.out = out.clone(),
            Command::Eval(c) => c.out = out.clone(),
            Command::Simmat(c) => c.out = out.clone(),
            Command::Synth(c) => c.out = out.clone(),
            Command::Train(c) => c.out = out.clone(),
            Command::DefaultConfig | Command::Rerun(_) => {}
        }
    }
    if matches!(command, Command::Rerun(_)) {
        return Err(usage("a manifest cannot record another rerun"));
    }
    dispatch(&command, m.seed)
}

/// Initializes logging from [`LOG_ENV`] (default level: `warn`).
pub fn init_logging() {
    let env = env_logger::Env::new().filter_or(LOG_ENV, "warn");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}
