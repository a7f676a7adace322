//! `djmix` command-line interface.
//!
//! Exit codes: 0 on success (per-item failures are listed in the outputs),
//! 1 on usage errors, 2 when nothing could be processed.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use djmix::align::FeatureMode;
use djmix::pipeline::{self, MixOutcome, RunConfig, TrackStatus};
use djmix::synthmix::{make_corpus, write_corpus};
use djmix::Error;

#[derive(Debug, Parser)]
#[command(name = "djmix", version, about = "Align DJ mixes to their tracks and analyse the results")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    run: RunArgs,
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Features used for alignment.
    #[arg(long = "feature", global = true, default_value = "chroma+mfcc", value_parser = parse_mode)]
    feature: FeatureMode,
    /// Search all 12 chroma rotations.
    #[arg(long, global = true, default_value_t = true, num_args = 0..=1, default_missing_value = "true", action = clap::ArgAction::Set)]
    key_invariant: bool,
    /// Tracks below this match rate are rejected.
    #[arg(long, global = true, default_value_t = pipeline::DEFAULT_MATCH_THRESHOLD)]
    match_threshold: f64,
    /// Consecutive diagonal steps that anchor a cue.
    #[arg(long, global = true, default_value_t = djmix::cue::DEFAULT_RUN_LENGTH)]
    run_length: usize,
    /// Hit-rate windows in seconds, comma separated.
    #[arg(long, global = true, value_delimiter = ',', default_values_t = djmix::cue::DEFAULT_TOLERANCES.to_vec())]
    tolerances: Vec<f64>,
    /// Working sample rate in Hz.
    #[arg(long = "sr", global = true, default_value_t = djmix::ingest::WORKING_SAMPLE_RATE)]
    sample_rate: u32,
    /// Worker threads (default: one per core).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Feature cache directory.
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "djmix-out")]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Extract and cache features for audio files or directories of WAVs.
    Features { inputs: Vec<PathBuf> },
    /// Align manifests (or corpus directories); writes alignments, cues and transitions CSVs.
    Align { inputs: Vec<PathBuf> },
    /// Score detected transitions against annotated boundaries.
    SegmentEval { inputs: Vec<PathBuf> },
    /// Tempo, key, transition-length and cue-agreement statistics.
    Stats { inputs: Vec<PathBuf> },
    /// Render a synthetic corpus with ground truth.
    Synth {
        #[arg(long, default_value_t = 10)]
        n_mixes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn parse_mode(s: &str) -> Result<FeatureMode, String> {
    s.parse::<FeatureMode>().map_err(|e| e.to_string())
}

impl RunArgs {
    fn config(&self) -> RunConfig {
        RunConfig {
            feature_mode: self.feature,
            key_invariant: self.key_invariant,
            match_threshold: self.match_threshold,
            run_length: self.run_length,
            tolerances: self.tolerances.clone(),
            sample_rate: self.sample_rate,
            workers: self.workers,
            cache_dir: self.cache_dir.clone(),
            ..RunConfig::default()
        }
    }
}

enum Failure {
    Usage(String),
    Total(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParams(_) | Error::SchemaViolation(_) => Failure::Usage(e.to_string()),
            _ => Failure::Total(e.to_string()),
        }
    }
}

fn require_inputs(inputs: &[PathBuf]) -> Result<(), Failure> {
    if inputs.is_empty() {
        return Err(Failure::Usage("no inputs given".into()));
    }
    Ok(())
}

fn aligned(inputs: &[PathBuf], config: &RunConfig) -> Result<Vec<MixOutcome>, Failure> {
    require_inputs(inputs)?;
    let manifests = pipeline::discover_manifests(inputs)?;
    if manifests.is_empty() {
        return Err(Failure::Usage("no manifest.json found".into()));
    }
    let outcomes = pipeline::run_corpus(&manifests, config)?;
    let n_tracks: usize = outcomes.iter().map(|m| m.tracks.len()).sum();
    let n_failed = outcomes
        .iter()
        .flat_map(|m| &m.tracks)
        .filter(|t| t.status == TrackStatus::Failed)
        .count();
    let n_mix_failed = outcomes.iter().filter(|m| m.error.is_some()).count();
    log::info!(
        "{} mixes ({n_mix_failed} failed), {n_tracks} entries ({n_failed} failed)",
        outcomes.len()
    );
    if n_mix_failed == outcomes.len() || (n_tracks > 0 && n_failed == n_tracks) {
        return Err(Failure::Total("every mix or track failed".into()));
    }
    Ok(outcomes)
}

fn written(path: &Path) -> &Path {
    println!("{}", path.display());
    path
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let config = cli.run.config();
    config.validate()?;
    let out = &cli.run.out;
    std::fs::create_dir_all(out).map_err(Error::from)?;
    match &cli.command {
        Command::Features { inputs } => {
            require_inputs(inputs)?;
            let files = pipeline::discover_audio(inputs)?;
            let report = pipeline::cmd_features(&files, &config)?;
            pipeline::write_json(written(&out.join("features.json")), &report)?;
            if report.rows.is_empty() || report.n_failed() == report.rows.len() {
                return Err(Failure::Total("no features extracted".into()));
            }
        }
        Command::Align { inputs } => {
            let outcomes = aligned(inputs, &config)?;
            pipeline::write_alignments_csv(written(&out.join("alignments.csv")), &outcomes)?;
            pipeline::write_cues_csv(written(&out.join("cues.csv")), &outcomes)?;
            pipeline::write_transitions_csv(written(&out.join("transitions.csv")), &outcomes)?;
        }
        Command::SegmentEval { inputs } => {
            let outcomes = aligned(inputs, &config)?;
            let report = pipeline::segment_eval(&outcomes, &config.tolerances)?;
            pipeline::write_json(written(&out.join("segmentation.json")), &report)?;
        }
        Command::Stats { inputs } => {
            let outcomes = aligned(inputs, &config)?;
            let report = pipeline::corpus_stats(&outcomes)?;
            pipeline::write_json(written(&out.join("stats.json")), &report)?;
            for p in pipeline::write_stats_csvs(out, &report)? {
                written(&p);
            }
        }
        Command::Synth { n_mixes, seed } => {
            if *n_mixes == 0 {
                return Err(Failure::Usage("--n-mixes must be at least 1".into()));
            }
            let corpus = make_corpus(*n_mixes, *seed)?;
            let paths = config.install(|| write_corpus(out, &corpus))??;
            for p in &paths {
                written(p);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Total(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
