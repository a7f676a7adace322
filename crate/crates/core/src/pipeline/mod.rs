//! Corpus-level orchestration: features for every audio file, alignment of
//! every manifest entry into its mix, cues, transitions and reports.
//!
//! Work runs on a dedicated rayon pool; results are always reduced in
//! manifest order, so outputs do not depend on the worker count.

mod report;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::align::{align, FeatureMode, MatchRateNorm};
use crate::cue::{
    build_transitions, evaluate_segmentation, extract_cues, CuePoints, SegmentationReport, TransitionRecord,
    DEFAULT_RUN_LENGTH, DEFAULT_TOLERANCES,
};
use crate::error::{Error, Result};
use crate::features::cache::{file_hash, param_hash, FeatureCache};
use crate::features::{extract_features, BeatGrid, BeatSyncFeatures, FeatureConfig};
use crate::ingest::{decode_audio, parse_manifest, MixManifest, WORKING_SAMPLE_RATE};
use crate::stats::{cue_agreement, grid_tempo, tempo_adjustment, transition_lengths, StatsReport};

pub use report::{
    write_alignments_csv, write_cues_csv, write_json, write_stats_csvs, write_transitions_csv, FeatureReport,
    FeatureReportRow,
};

/// Match-rate threshold separating matched from rejected tracks.
pub const DEFAULT_MATCH_THRESHOLD: f64 = 0.4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub feature_mode: FeatureMode,
    pub key_invariant: bool,
    pub match_threshold: f64,
    pub run_length: usize,
    pub tolerances: Vec<f64>,
    pub sample_rate: u32,
    /// Worker threads; `None` uses one per core.
    pub workers: Option<usize>,
    pub cache_dir: Option<PathBuf>,
    pub match_rate_norm: MatchRateNorm,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            feature_mode: FeatureMode::ChromaMfcc,
            key_invariant: true,
            match_threshold: DEFAULT_MATCH_THRESHOLD,
            run_length: DEFAULT_RUN_LENGTH,
            tolerances: DEFAULT_TOLERANCES.to_vec(),
            sample_rate: WORKING_SAMPLE_RATE,
            workers: None,
            cache_dir: None,
            match_rate_norm: MatchRateNorm::Track,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.match_threshold) {
            return Err(Error::InvalidParams(format!(
                "match threshold {} outside [0, 1]",
                self.match_threshold
            )));
        }
        if self.run_length == 0 {
            return Err(Error::InvalidParams("run length must be at least 1".into()));
        }
        if self.tolerances.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::InvalidParams("tolerances must be finite and non-negative".into()));
        }
        if self.sample_rate == 0 {
            return Err(Error::InvalidParams("sample rate must be positive".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::InvalidParams("worker count must be at least 1".into()));
        }
        Ok(())
    }

    /// Runs `f` on a pool sized by `workers`.
    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> Result<R> {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = self.workers {
            builder = builder.num_threads(n);
        }
        let pool = builder.build().map_err(|e| Error::InvalidParams(e.to_string()))?;
        Ok(pool.install(f))
    }
}

pub type Features = BeatSyncFeatures<f64>;

/// Feature extraction with an optional on-disk cache.
#[derive(Debug, Clone)]
pub struct FeatureStore {
    cache: Option<FeatureCache>,
    config: FeatureConfig,
    sample_rate: u32,
}

impl FeatureStore {
    pub fn new(run: &RunConfig) -> Result<Self> {
        let cache = run.cache_dir.as_ref().map(FeatureCache::new).transpose()?;
        Ok(Self {
            cache,
            config: FeatureConfig::default(),
            sample_rate: run.sample_rate,
        })
    }

    /// Features for one file and whether they came from the cache.
    pub fn get(&self, path: &Path) -> Result<(Features, bool)> {
        let Some(cache) = &self.cache else {
            return Ok((self.compute(path)?, false));
        };
        let key = file_hash(path)?;
        let params = param_hash(&self.config, self.sample_rate);
        match cache.load(&key, &params) {
            Ok(Some(f)) => {
                log::debug!("cache hit for {}", path.display());
                return Ok((f, true));
            }
            Ok(None) => {}
            Err(e) => log::warn!("ignoring unreadable cache entry for {}: {e}", path.display()),
        }
        let features = self.compute(path)?;
        cache.store(&key, &params, &features)?;
        Ok((features, false))
    }

    fn compute(&self, path: &Path) -> Result<Features> {
        let audio = decode_audio::<f64>(path, self.sample_rate)?;
        extract_features(&audio, &self.config)
    }
}

/// Extracts features for many files in parallel, in input order.
pub fn cmd_features(paths: &[PathBuf], config: &RunConfig) -> Result<FeatureReport> {
    config.validate()?;
    let store = FeatureStore::new(config)?;
    let rows = config.install(|| {
        use rayon::prelude::*;
        paths
            .par_iter()
            .map(|p| match store.get(p) {
                Ok((f, hit)) => FeatureReportRow {
                    path: p.clone(),
                    status: if hit { "cached" } else { "computed" }.into(),
                    n_beats: Some(f.n_beats()),
                    tempo_bpm: Some(f.beat_grid.tempo_bpm),
                    error: None,
                },
                Err(e) => {
                    log::error!("{}: {e}", p.display());
                    FeatureReportRow {
                        path: p.clone(),
                        status: "failed".into(),
                        n_beats: None,
                        tempo_bpm: None,
                        error: Some(e.to_string()),
                    }
                }
            })
            .collect::<Vec<_>>()
    })?;
    Ok(FeatureReport { rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackStatus {
    Matched,
    Rejected,
    Failed,
}

impl TrackStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Matched => "matched",
            Self::Rejected => "rejected",
            Self::Failed => "failed",
        }
    }
}

/// Everything computed for one manifest entry.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackOutcome {
    pub mix_id: String,
    pub track_id: String,
    pub status: TrackStatus,
    pub boundary_sec: f64,
    pub match_rate: Option<f64>,
    pub transposition_shift: Option<usize>,
    pub transposition_semitones: Option<i32>,
    pub total_cost: Option<f64>,
    pub n_track_beats: Option<usize>,
    pub track_bpm: Option<f64>,
    pub cues: Option<CuePoints<f64>>,
    pub tempo_adjustment_pct: Option<f64>,
    /// Why a step was skipped or failed.
    pub note: Option<String>,
}

impl TrackOutcome {
    fn failed(mix_id: &str, track_id: &str, boundary_sec: f64, err: impl ToString) -> Self {
        Self {
            mix_id: mix_id.into(),
            track_id: track_id.into(),
            status: TrackStatus::Failed,
            boundary_sec,
            match_rate: None,
            transposition_shift: None,
            transposition_semitones: None,
            total_cost: None,
            n_track_beats: None,
            track_bpm: None,
            cues: None,
            tempo_adjustment_pct: None,
            note: Some(err.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixOutcome {
    pub mix_id: String,
    pub manifest_path: PathBuf,
    pub mix_grid: Option<BeatGrid<f64>>,
    /// One per manifest entry, in manifest order.
    pub tracks: Vec<TrackOutcome>,
    /// Between matched tracks with cues, ordered by cue-in.
    pub transitions: Vec<TransitionRecord<f64>>,
    /// Annotated boundary of each transition's incoming track.
    pub transition_boundaries: Vec<f64>,
    pub error: Option<String>,
}

impl MixOutcome {
    pub fn segmentation(&self, tolerances: &[f64]) -> Result<SegmentationReport> {
        evaluate_segmentation(
            &self.transitions,
            &self.transition_boundaries,
            tolerances,
            self.mix_grid.as_ref(),
        )
    }

    pub fn matched(&self) -> impl Iterator<Item = &TrackOutcome> {
        self.tracks.iter().filter(|t| t.status == TrackStatus::Matched)
    }
}

/// Finds `manifest.json` files under each input (files are taken as given),
/// sorted and deduplicated.
pub fn discover_manifests(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = BTreeSet::new();
    for input in inputs {
        if input.is_dir() {
            for entry in walkdir::WalkDir::new(input).sort_by_file_name() {
                let entry = entry.map_err(|e| Error::Io(e.into()))?;
                if entry.file_type().is_file() && entry.file_name() == "manifest.json" {
                    out.insert(entry.into_path());
                }
            }
        } else {
            out.insert(input.clone());
        }
    }
    Ok(out.into_iter().collect())
}

/// Expands directories into the `.wav` files beneath them (sorted); files
/// keep their given order. Duplicates are dropped.
pub fn discover_audio(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for input in inputs {
        let found = if input.is_dir() {
            let mut wavs = Vec::new();
            for entry in walkdir::WalkDir::new(input).sort_by_file_name() {
                let entry = entry.map_err(|e| Error::Io(e.into()))?;
                let is_wav = entry.path().extension().is_some_and(|x| x.eq_ignore_ascii_case("wav"));
                if entry.file_type().is_file() && is_wav {
                    wavs.push(entry.into_path());
                }
            }
            wavs
        } else {
            vec![input.clone()]
        };
        out.extend(found.into_iter().filter(|p| seen.insert(p.clone())));
    }
    Ok(out)
}

type FeatureMap = BTreeMap<PathBuf, std::result::Result<Arc<Features>, String>>;

fn load_all(store: &FeatureStore, paths: BTreeSet<PathBuf>) -> FeatureMap {
    use rayon::prelude::*;
    let paths: Vec<PathBuf> = paths.into_iter().collect();
    let results: Vec<_> = paths
        .par_iter()
        .map(|p| {
            store.get(p).map(|(f, _)| Arc::new(f)).map_err(|e| {
                log::error!("{}: {e}", p.display());
                e.to_string()
            })
        })
        .collect();
    paths.into_iter().zip(results).collect()
}

fn align_entry(
    manifest: &MixManifest,
    entry: usize,
    mix: &Features,
    features: &FeatureMap,
    config: &RunConfig,
) -> TrackOutcome {
    let e = &manifest.entries[entry];
    let fail = |err: String| TrackOutcome::failed(&manifest.mix_id, &e.track_id, e.boundary_seconds, err);
    let Some(path) = &e.track_audio_path else {
        return fail(Error::MissingAudio(e.track_id.clone()).to_string());
    };
    let track = match features.get(path) {
        Some(Ok(f)) => f,
        Some(Err(msg)) => return fail(msg.clone()),
        None => return fail(Error::MissingAudio(e.track_id.clone()).to_string()),
    };
    let result = match align(track, mix, config.feature_mode, config.key_invariant, config.match_rate_norm) {
        Ok(r) => r,
        Err(err) => return fail(err.to_string()),
    };
    let matched = result.match_rate >= config.match_threshold;
    let track_bpm = grid_tempo(&track.beat_grid);
    let mut note = None;
    let mut cues = None;
    let mut tempo_pct = None;
    if matched {
        match extract_cues(&e.track_id, &result.path, &mix.beat_grid, config.run_length) {
            Ok(c) => {
                match track_bpm.map(|bpm| tempo_adjustment(bpm, &mix.beat_grid, &c)) {
                    Some(Ok(pct)) => tempo_pct = Some(pct),
                    Some(Err(err)) => note = Some(err.to_string()),
                    None => note = Some("track tempo unavailable".into()),
                }
                cues = Some(c);
            }
            Err(err) => note = Some(err.to_string()),
        }
    }
    TrackOutcome {
        mix_id: manifest.mix_id.clone(),
        track_id: e.track_id.clone(),
        status: if matched { TrackStatus::Matched } else { TrackStatus::Rejected },
        boundary_sec: e.boundary_seconds,
        match_rate: Some(result.match_rate),
        transposition_shift: Some(result.transposition_semitones),
        transposition_semitones: Some(result.signed_transposition()),
        total_cost: Some(result.total_cost),
        n_track_beats: Some(track.n_beats()),
        track_bpm,
        cues,
        tempo_adjustment_pct: tempo_pct,
        note,
    }
}

fn finish_mix(manifest_path: PathBuf, manifest: &MixManifest, mix: &Features, tracks: Vec<TrackOutcome>) -> MixOutcome {
    let mut placed: Vec<(&CuePoints<f64>, f64)> = tracks
        .iter()
        .filter(|t| t.status == TrackStatus::Matched)
        .filter_map(|t| t.cues.as_ref().map(|c| (c, t.boundary_sec)))
        .collect();
    placed.sort_by_key(|(c, _)| (c.cue_in_mix_beat, c.cue_out_mix_beat));
    let cues: Vec<CuePoints<f64>> = placed.iter().map(|(c, _)| (*c).clone()).collect();
    let transitions = build_transitions(&cues, &mix.beat_grid);
    let transition_boundaries = placed.iter().skip(1).map(|(_, b)| *b).collect();
    MixOutcome {
        mix_id: manifest.mix_id.clone(),
        manifest_path,
        mix_grid: Some(mix.beat_grid.clone()),
        tracks,
        transitions,
        transition_boundaries,
        error: None,
    }
}

fn failed_mix(manifest_path: PathBuf, manifest: Option<&MixManifest>, err: String) -> MixOutcome {
    let mix_id = manifest.map_or_else(
        || manifest_path.parent().and_then(|p| p.file_name()).map_or_else(String::new, |n| n.to_string_lossy().into()),
        |m| m.mix_id.clone(),
    );
    let tracks = manifest
        .map(|m| {
            m.entries
                .iter()
                .map(|e| TrackOutcome::failed(&m.mix_id, &e.track_id, e.boundary_seconds, &err))
                .collect()
        })
        .unwrap_or_default();
    MixOutcome {
        mix_id,
        manifest_path,
        mix_grid: None,
        tracks,
        transitions: Vec::new(),
        transition_boundaries: Vec::new(),
        error: Some(err),
    }
}

/// Aligns every entry of every manifest. Per-file failures are recorded in
/// the outcomes; only configuration problems return `Err`.
pub fn run_corpus(manifest_paths: &[PathBuf], config: &RunConfig) -> Result<Vec<MixOutcome>> {
    config.validate()?;
    let store = FeatureStore::new(config)?;
    let manifests: Vec<std::result::Result<MixManifest, String>> = manifest_paths
        .iter()
        .map(|p| {
            parse_manifest(p).and_then(|m| m.validate().map(|_| m)).map_err(|e| {
                log::error!("{}: {e}", p.display());
                e.to_string()
            })
        })
        .collect();

    let mut audio = BTreeSet::new();
    for m in manifests.iter().flatten() {
        audio.insert(m.mix_audio_path.clone());
        audio.extend(m.entries.iter().filter_map(|e| e.track_audio_path.clone()));
    }

    config.install(|| {
        use rayon::prelude::*;
        let features = load_all(&store, audio);
        let tasks: Vec<(usize, usize)> = manifests
            .iter()
            .enumerate()
            .filter_map(|(i, m)| m.as_ref().ok().map(|m| (i, m)))
            .filter(|(_, m)| matches!(features.get(&m.mix_audio_path), Some(Ok(_))))
            .flat_map(|(i, m)| (0..m.entries.len()).map(move |k| (i, k)))
            .collect();
        let mix_features = |m: &MixManifest| match &features[&m.mix_audio_path] {
            Ok(f) => Arc::clone(f),
            Err(_) => unreachable!("tasks only cover mixes with features"),
        };
        let outcomes: Vec<TrackOutcome> = tasks
            .par_iter()
            .map(|&(i, k)| {
                let m = manifests[i].as_ref().expect("task manifests parsed");
                align_entry(m, k, &mix_features(m), &features, config)
            })
            .collect();

        let mut outcomes = outcomes.into_iter();
        manifest_paths
            .iter()
            .zip(&manifests)
            .map(|(path, m)| match m {
                Err(err) => failed_mix(path.clone(), None, err.clone()),
                Ok(m) => match &features[&m.mix_audio_path] {
                    Err(err) => failed_mix(path.clone(), Some(m), format!("mix audio: {err}")),
                    Ok(mix) => {
                        let tracks = outcomes.by_ref().take(m.entries.len()).collect();
                        finish_mix(path.clone(), m, mix, tracks)
                    }
                },
            })
            .collect()
    })
}

/// Segmentation scores per mix plus the pooled report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentEvalReport {
    pub overall: SegmentationReport,
    pub mixes: BTreeMap<String, SegmentationReport>,
}

pub fn segment_eval(outcomes: &[MixOutcome], tolerances: &[f64]) -> Result<SegmentEvalReport> {
    let mut mixes = BTreeMap::new();
    let mut rows = Vec::new();
    for m in outcomes.iter().filter(|m| m.error.is_none()) {
        let report = m.segmentation(tolerances)?;
        rows.extend(report.rows.iter().cloned());
        mixes.insert(m.mix_id.clone(), report);
    }
    Ok(SegmentEvalReport {
        overall: SegmentationReport::from_rows(rows, tolerances),
        mixes,
    })
}

/// Corpus statistics over matched tracks.
pub fn corpus_stats(outcomes: &[MixOutcome]) -> Result<StatsReport> {
    let matched: Vec<&TrackOutcome> = outcomes.iter().flat_map(|m| m.matched()).collect();
    let tempo: Vec<f64> = matched.iter().filter_map(|t| t.tempo_adjustment_pct).collect();
    let shifts: Vec<usize> = matched.iter().filter_map(|t| t.transposition_shift).collect();
    let lengths: Vec<i64> = outcomes.iter().flat_map(|m| transition_lengths(&m.transitions)).collect();
    let mut cue_sets: BTreeMap<String, Vec<CuePoints<f64>>> = BTreeMap::new();
    for t in &matched {
        if let Some(c) = &t.cues {
            cue_sets.entry(t.track_id.clone()).or_default().push(c.clone());
        }
    }
    StatsReport::build(tempo, &shifts, &lengths, cue_agreement(&cue_sets))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_configuration() {
        let c = RunConfig::default();
        assert_eq!(c.feature_mode, FeatureMode::ChromaMfcc);
        assert!(c.key_invariant);
        assert_eq!(c.match_threshold, 0.4);
        assert_eq!(c.run_length, 32);
        assert_eq!(c.tolerances, vec![15.0, 30.0, 60.0]);
        assert_eq!(c.sample_rate, 22050);
        c.validate().unwrap();
    }

    #[test]
    fn invalid_configs() {
        for c in [
            RunConfig { match_threshold: 1.5, ..RunConfig::default() },
            RunConfig { run_length: 0, ..RunConfig::default() },
            RunConfig { tolerances: vec![-1.0], ..RunConfig::default() },
            RunConfig { workers: Some(0), ..RunConfig::default() },
        ] {
            assert!(matches!(c.validate(), Err(Error::InvalidParams(_))));
        }
    }

    #[test]
    fn unreadable_manifest_is_reported_not_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("manifest.json");
        std::fs::write(&bad, "{\"mix_id\": 3}").unwrap();
        let out = run_corpus(&[bad], &RunConfig::default()).unwrap();
        assert_eq!(out.len(), 1);
        assert!(out[0].error.is_some());
        assert!(out[0].tracks.is_empty());
    }

    #[test]
    fn missing_audio_fails_entry_and_mix() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        std::fs::write(
            &path,
            r#"{"mix_id": "m", "mix_audio": "nope.wav", "tracks": [{"track_id": "a", "boundary_sec": 0.0}]}"#,
        )
        .unwrap();
        let out = run_corpus(&[path], &RunConfig::default()).unwrap();
        assert!(out[0].error.as_deref().unwrap().starts_with("mix audio"));
        assert_eq!(out[0].tracks[0].status, TrackStatus::Failed);
    }

    #[test]
    fn discovery_is_sorted() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["b", "a"] {
            std::fs::create_dir(dir.path().join(name)).unwrap();
            std::fs::write(dir.path().join(name).join("manifest.json"), "{}").unwrap();
        }
        let found = discover_manifests(&[dir.path().to_path_buf()]).unwrap();
        assert_eq!(found.len(), 2);
        assert!(found[0] < found[1]);
    }
}
