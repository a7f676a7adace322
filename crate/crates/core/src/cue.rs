//! Cue points, transitions and segmentation scoring.

use serde::{Deserialize, Serialize};

use crate::align::WarpingPath;
use crate::error::{Error, Result};
use crate::features::BeatGrid;
use crate::scalar::{median, Scalar};

/// Consecutive diagonal steps that make a stable run.
pub const DEFAULT_RUN_LENGTH: usize = 32;
/// Hit-rate tolerance windows in seconds.
pub const DEFAULT_TOLERANCES: [f64; 3] = [15.0, 30.0, 60.0];

/// Where a track enters and leaves the mix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CuePoints<T> {
    pub track_id: String,
    pub cue_in_mix_beat: usize,
    pub cue_out_mix_beat: usize,
    pub cue_in_track_beat: usize,
    pub cue_out_track_beat: usize,
    pub cue_in_sec: T,
    pub cue_out_sec: T,
}

impl<T: Scalar> CuePoints<T> {
    pub fn span_beats(&self) -> usize {
        self.cue_out_mix_beat - self.cue_in_mix_beat
    }
}

fn beat_seconds<T: Scalar>(grid: &BeatGrid<T>, beat: usize) -> Result<T> {
    grid.beat_times.get(beat).copied().ok_or_else(|| {
        Error::InvalidParams(format!("mix beat {beat} outside a grid of {} beats", grid.len()))
    })
}

/// Cue-in is the first path point followed by `run_length` diagonal steps,
/// cue-out the last point preceded by `run_length` diagonal steps.
pub fn extract_cues<T: Scalar>(
    track_id: &str,
    path: &WarpingPath,
    mix_beats: &BeatGrid<T>,
    run_length: usize,
) -> Result<CuePoints<T>> {
    if run_length == 0 {
        return Err(Error::InvalidParams("run length must be at least 1".into()));
    }
    let steps = path.steps();
    let moves: Vec<bool> = (0..steps.len().saturating_sub(1)).map(|k| path.is_diagonal(k)).collect();
    let run_ends: Vec<usize> = {
        // run_ends[k] = diagonal moves ending at point k
        let mut out = vec![0; steps.len()];
        for k in 1..steps.len() {
            out[k] = if moves[k - 1] { out[k - 1] + 1 } else { 0 };
        }
        out
    };
    let out_idx = (0..steps.len()).rev().find(|&k| run_ends[k] >= run_length);
    let out_idx = out_idx.ok_or(Error::NoStableRun { run_length })?;
    let in_idx = (0..steps.len())
        .find(|&k| k + run_length < steps.len() && run_ends[k + run_length] >= run_length)
        .ok_or(Error::NoStableRun { run_length })?;

    let (cue_in_track_beat, cue_in_mix_beat) = steps[in_idx];
    let (cue_out_track_beat, cue_out_mix_beat) = steps[out_idx];
    Ok(CuePoints {
        track_id: track_id.to_string(),
        cue_in_mix_beat,
        cue_out_mix_beat,
        cue_in_track_beat,
        cue_out_track_beat,
        cue_in_sec: beat_seconds(mix_beats, cue_in_mix_beat)?,
        cue_out_sec: beat_seconds(mix_beats, cue_out_mix_beat)?,
    })
}

/// One track-to-track transition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord<T> {
    pub prev_track_id: String,
    pub next_track_id: String,
    pub cue_out_sec: T,
    pub cue_in_sec: T,
    pub cue_mid_sec: T,
    /// Mix beat nearest the midpoint, rounded half up.
    pub cue_mid_beat: Option<i64>,
    pub length_beats: i64,
    pub length_sec: T,
    /// Set when the next track's cue-in precedes the previous cue-out.
    pub negative: bool,
}

/// Pairs consecutive cue points (ordered by cue-in) into transitions.
pub fn build_transitions<T: Scalar>(cues: &[CuePoints<T>], mix_beats: &BeatGrid<T>) -> Vec<TransitionRecord<T>> {
    cues.windows(2)
        .map(|w| {
            let (prev, next) = (&w[0], &w[1]);
            let length_beats = next.cue_in_mix_beat as i64 - prev.cue_out_mix_beat as i64;
            let cue_mid_sec = (prev.cue_out_sec + next.cue_in_sec) / T::lit(2.0);
            let cue_mid_beat = mix_beats
                .fractional_beat(cue_mid_sec)
                .map(|b| (b.as_f64() + 0.5).floor() as i64);
            if length_beats < 0 {
                log::debug!(
                    "negative transition {} -> {}: {length_beats} beats",
                    prev.track_id,
                    next.track_id
                );
            }
            TransitionRecord {
                prev_track_id: prev.track_id.clone(),
                next_track_id: next.track_id.clone(),
                cue_out_sec: prev.cue_out_sec,
                cue_in_sec: next.cue_in_sec,
                cue_mid_sec,
                cue_mid_beat,
                length_beats,
                length_sec: next.cue_in_sec - prev.cue_out_sec,
                negative: length_beats < 0,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CueType {
    In,
    Out,
    Mid,
}

/// Estimate-minus-boundary differences for one transition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationRow {
    pub prev_track_id: String,
    pub next_track_id: String,
    pub boundary_sec: f64,
    pub diff_out_sec: f64,
    pub diff_in_sec: f64,
    pub diff_mid_sec: f64,
    pub diff_out_beats: Option<f64>,
    pub diff_in_beats: Option<f64>,
    pub diff_mid_beats: Option<f64>,
    pub best_abs_sec: f64,
    pub closest: CueType,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClosestCounts {
    pub cue_in: usize,
    pub cue_out: usize,
    pub cue_mid: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitRate {
    pub tolerance_sec: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationReport {
    pub rows: Vec<SegmentationRow>,
    pub median_abs_out_sec: Option<f64>,
    pub median_abs_in_sec: Option<f64>,
    pub median_abs_mid_sec: Option<f64>,
    pub median_best_sec: Option<f64>,
    /// Cue-in hit rates per tolerance window.
    pub hit_rates: Vec<HitRate>,
    pub closest_counts: ClosestCounts,
}

impl SegmentationReport {
    /// Aggregates already evaluated rows (e.g. pooled over several mixes).
    pub fn from_rows(rows: Vec<SegmentationRow>, tolerances: &[f64]) -> Self {
        let med = |f: &dyn Fn(&SegmentationRow) -> f64| -> Option<f64> {
            median(&rows.iter().map(f).collect::<Vec<f64>>())
        };
        let median_abs_out_sec = med(&|r| r.diff_out_sec.abs());
        let median_abs_in_sec = med(&|r| r.diff_in_sec.abs());
        let median_abs_mid_sec = med(&|r| r.diff_mid_sec.abs());
        let median_best_sec = med(&|r| r.best_abs_sec);
        let hit_rates = tolerances
            .iter()
            .map(|&tolerance_sec| HitRate {
                tolerance_sec,
                rate: if rows.is_empty() {
                    0.0
                } else {
                    rows.iter().filter(|r| r.diff_in_sec.abs() <= tolerance_sec).count() as f64 / rows.len() as f64
                },
            })
            .collect();
        let mut closest_counts = ClosestCounts::default();
        for r in &rows {
            match r.closest {
                CueType::In => closest_counts.cue_in += 1,
                CueType::Out => closest_counts.cue_out += 1,
                CueType::Mid => closest_counts.cue_mid += 1,
            }
        }
        Self {
            rows,
            median_abs_out_sec,
            median_abs_in_sec,
            median_abs_mid_sec,
            median_best_sec,
            hit_rates,
            closest_counts,
        }
    }

    pub fn hit_rate(&self, tolerance_sec: f64) -> Option<f64> {
        self.hit_rates.iter().find(|h| h.tolerance_sec == tolerance_sec).map(|h| h.rate)
    }

    /// Share of transitions whose boundary is closest to the cue-in estimate.
    pub fn closest_in_share(&self) -> Option<f64> {
        (!self.rows.is_empty()).then(|| self.closest_counts.cue_in as f64 / self.rows.len() as f64)
    }
}

/// Scores transitions against annotated boundaries paired by order.
///
/// Beat differences are filled in when a mix grid is given. The closest cue
/// type prefers cue-in, then cue-out, then cue-mid on equal distance.
pub fn evaluate_segmentation<T: Scalar>(
    transitions: &[TransitionRecord<T>],
    boundaries: &[f64],
    tolerances: &[f64],
    mix_beats: Option<&BeatGrid<T>>,
) -> Result<SegmentationReport> {
    if transitions.len() != boundaries.len() {
        return Err(Error::LengthMismatch {
            transitions: transitions.len(),
            boundaries: boundaries.len(),
        });
    }
    let beat_of = |s: f64| -> Option<f64> { mix_beats.and_then(|g| g.fractional_beat(T::lit(s))).map(|b| b.as_f64()) };
    let rows = transitions
        .iter()
        .zip(boundaries)
        .map(|(t, &boundary_sec)| {
            let (out_s, in_s, mid_s) = (t.cue_out_sec.as_f64(), t.cue_in_sec.as_f64(), t.cue_mid_sec.as_f64());
            let diff_beats = |est: f64| Some(beat_of(est)? - beat_of(boundary_sec)?);
            let (d_out, d_in, d_mid) = (out_s - boundary_sec, in_s - boundary_sec, mid_s - boundary_sec);
            let candidates = [(d_in.abs(), CueType::In), (d_out.abs(), CueType::Out), (d_mid.abs(), CueType::Mid)];
            let (best_abs_sec, closest) = candidates
                .iter()
                .copied()
                .fold(candidates[0], |best, c| if c.0 < best.0 { c } else { best });
            SegmentationRow {
                prev_track_id: t.prev_track_id.clone(),
                next_track_id: t.next_track_id.clone(),
                boundary_sec,
                diff_out_sec: d_out,
                diff_in_sec: d_in,
                diff_mid_sec: d_mid,
                diff_out_beats: diff_beats(out_s),
                diff_in_beats: diff_beats(in_s),
                diff_mid_beats: diff_beats(mid_s),
                best_abs_sec,
                closest,
            }
        })
        .collect();
    Ok(SegmentationReport::from_rows(rows, tolerances))
}
