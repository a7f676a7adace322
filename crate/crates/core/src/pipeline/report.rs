//! CSV and JSON writers. JSON objects come out with sorted keys, CSVs with
//! headers; empty cells stand for missing values.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::MixOutcome;
use crate::error::Result;
use crate::stats::{tempo_histogram, StatsReport};

/// Per-file outcome of `cmd_features`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureReportRow {
    pub path: PathBuf,
    /// `computed`, `cached` or `failed`.
    pub status: String,
    pub n_beats: Option<usize>,
    pub tempo_bpm: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureReport {
    pub rows: Vec<FeatureReportRow>,
}

impl FeatureReport {
    pub fn n_failed(&self) -> usize {
        self.rows.iter().filter(|r| r.status == "failed").count()
    }
}

fn cell<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Pretty JSON with sorted object keys and a trailing newline.
pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    // serde_json's default map is ordered by key
    let value = serde_json::to_value(value)?;
    std::fs::write(path, serde_json::to_string_pretty(&value)? + "\n")?;
    Ok(())
}

/// One row per manifest entry, failures and rejections included.
pub fn write_alignments_csv(path: &Path, outcomes: &[MixOutcome]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "mix_id",
        "track_id",
        "status",
        "match_rate",
        "transposition_semitones",
        "total_cost",
        "n_track_beats",
        "track_bpm",
        "tempo_adjustment_pct",
        "note",
    ])?;
    for m in outcomes {
        if m.tracks.is_empty() {
            w.write_record([m.mix_id.as_str(), "", "failed", "", "", "", "", "", "", m.error.as_deref().unwrap_or("")])?;
        }
        for t in &m.tracks {
            w.write_record([
                t.mix_id.clone(),
                t.track_id.clone(),
                t.status.as_str().into(),
                cell(t.match_rate),
                cell(t.transposition_semitones),
                cell(t.total_cost),
                cell(t.n_track_beats),
                cell(t.track_bpm),
                cell(t.tempo_adjustment_pct),
                t.note.clone().unwrap_or_default(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Cue points of matched tracks.
pub fn write_cues_csv(path: &Path, outcomes: &[MixOutcome]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "mix_id",
        "track_id",
        "cue_in_sec",
        "cue_out_sec",
        "cue_in_track_beat",
        "cue_out_track_beat",
        "match_rate",
        "transposition_semitones",
    ])?;
    for t in outcomes.iter().flat_map(|m| m.matched()) {
        let Some(c) = &t.cues else { continue };
        w.write_record([
            t.mix_id.clone(),
            t.track_id.clone(),
            c.cue_in_sec.to_string(),
            c.cue_out_sec.to_string(),
            c.cue_in_track_beat.to_string(),
            c.cue_out_track_beat.to_string(),
            cell(t.match_rate),
            cell(t.transposition_semitones),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_transitions_csv(path: &Path, outcomes: &[MixOutcome]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "mix_id",
        "prev_track_id",
        "next_track_id",
        "cue_out_sec",
        "cue_in_sec",
        "cue_mid_sec",
        "length_beats",
        "length_sec",
        "negative",
    ])?;
    for m in outcomes {
        for t in &m.transitions {
            w.write_record([
                m.mix_id.clone(),
                t.prev_track_id.clone(),
                t.next_track_id.clone(),
                t.cue_out_sec.to_string(),
                t.cue_in_sec.to_string(),
                t.cue_mid_sec.to_string(),
                t.length_beats.to_string(),
                t.length_sec.to_string(),
                t.negative.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_bins<K: ToString, V: ToString>(path: &Path, rows: impl IntoIterator<Item = (K, V)>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["bin", "count"])?;
    for (k, v) in rows {
        w.write_record([k.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Histogram CSVs next to `stats.json`; returns the files written.
pub fn write_stats_csvs(dir: &Path, report: &StatsReport) -> Result<Vec<PathBuf>> {
    let tempo = dir.join("tempo_histogram.csv");
    write_bins(&tempo, tempo_histogram(&report.tempo_diffs_pct))?;
    let key = dir.join("transposition_histogram.csv");
    write_bins(&key, report.transposition.counts.iter())?;
    let length = dir.join("transition_length_histogram.csv");
    let h = &report.transition_length;
    write_bins(&length, h.negative.iter().chain(h.counts.iter()))?;
    let agreement = dir.join("agreement_histogram.csv");
    let mut counts = std::collections::BTreeMap::<u64, usize>::new();
    for d in &report.agreement.distances_beats {
        *counts.entry(*d).or_insert(0) += 1;
    }
    write_bins(&agreement, counts)?;
    Ok(vec![tempo, key, length, agreement])
}
