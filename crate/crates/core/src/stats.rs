//! Corpus statistics: tempo adjustment, key transposition, transition lengths
//! and cue-point agreement across mixes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::align::{signed_semitones, AlignmentResult};
use crate::cue::{CuePoints, TransitionRecord};
use crate::error::{Error, Result};
use crate::features::BeatGrid;
use crate::scalar::{median, Scalar};

/// Shortest cue span accepted by `tempo_adjustment`.
pub const MIN_TEMPO_SPAN_BEATS: usize = 8;
/// Phrase length in beats.
pub const PHRASE_BEATS: i64 = 32;
/// Beat-distance thresholds summarized by `cue_agreement`.
pub const AGREEMENT_THRESHOLDS: [u64; 4] = [0, 4, 32, 64];

/// Tempo implied by a grid's median inter-beat interval.
pub fn grid_tempo<T: Scalar>(grid: &BeatGrid<T>) -> Option<T> {
    median(&grid.inter_beat_intervals()).map(|ibi| T::lit(60.0) / ibi)
}

/// Percentage tempo change of the mix segment between the cues relative to
/// the original track.
pub fn tempo_adjustment<T: Scalar>(track_bpm: T, mix_beats: &BeatGrid<T>, cues: &CuePoints<T>) -> Result<T> {
    if !(track_bpm > T::zero()) {
        return Err(Error::InvalidParams("track tempo must be positive".into()));
    }
    let (a, b) = (cues.cue_in_mix_beat, cues.cue_out_mix_beat);
    let span = b.saturating_sub(a);
    if span < MIN_TEMPO_SPAN_BEATS {
        return Err(Error::SpanTooShort {
            beats: span,
            min: MIN_TEMPO_SPAN_BEATS,
        });
    }
    if b >= mix_beats.len() {
        return Err(Error::InvalidParams(format!(
            "cue-out beat {b} outside a grid of {} beats",
            mix_beats.len()
        )));
    }
    let segment = BeatGrid {
        beat_times: mix_beats.beat_times[a..=b].to_vec(),
        tempo_bpm: mix_beats.tempo_bpm,
    };
    let segment_bpm = grid_tempo(&segment).expect("span of at least one interval");
    Ok((segment_bpm / track_bpm - T::one()) * T::lit(100.0))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TranspositionHistogram {
    /// Signed semitones in `-5..=6` to counts.
    pub counts: BTreeMap<i32, usize>,
    pub total: usize,
    pub fraction_transposed: f64,
}

impl TranspositionHistogram {
    pub fn from_shifts(shifts: impl IntoIterator<Item = usize>) -> Self {
        let mut counts = BTreeMap::new();
        let mut total = 0;
        for s in shifts {
            *counts.entry(signed_semitones(s)).or_insert(0) += 1;
            total += 1;
        }
        let untransposed = counts.get(&0).copied().unwrap_or(0);
        let fraction_transposed = if total == 0 {
            0.0
        } else {
            1.0 - untransposed as f64 / total as f64
        };
        Self {
            counts,
            total,
            fraction_transposed,
        }
    }
}

pub fn transposition_histogram<T: Scalar>(results: &[AlignmentResult<T>]) -> TranspositionHistogram {
    TranspositionHistogram::from_shifts(results.iter().map(|r| r.transposition_semitones))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LengthHistogram {
    pub bin_beats: i64,
    /// Bin start (beats) to count, non-negative lengths.
    pub counts: BTreeMap<i64, usize>,
    /// Negative lengths (overlapping detections), binned the same way.
    pub negative: BTreeMap<i64, usize>,
    pub total: usize,
    /// Mean count at positive multiples of 32 beats over the mean count at
    /// the other bins up to the longest length; diagnostic only.
    pub phrase_peak_score: Option<f64>,
}

impl LengthHistogram {
    pub fn n_negative(&self) -> usize {
        self.negative.values().sum()
    }

    /// Share of all lengths within `centre ± radius` beats.
    pub fn share_within(&self, lengths: &[i64], centre: i64, radius: i64) -> f64 {
        if lengths.is_empty() {
            return 0.0;
        }
        lengths.iter().filter(|&&l| (l - centre).abs() <= radius).count() as f64 / lengths.len() as f64
    }
}

/// Histogram of transition lengths in beats.
pub fn transition_length_histogram(lengths: &[i64], bin_beats: i64) -> Result<LengthHistogram> {
    if bin_beats < 1 {
        return Err(Error::InvalidParams("histogram bin must be at least one beat".into()));
    }
    let mut counts = BTreeMap::new();
    let mut negative = BTreeMap::new();
    for &l in lengths {
        let bin = l.div_euclid(bin_beats) * bin_beats;
        let target = if l < 0 { &mut negative } else { &mut counts };
        *target.entry(bin).or_insert(0) += 1;
    }
    let phrase_peak_score = counts.keys().next_back().and_then(|&max| {
        let (mut peak, mut n_peak, mut other, mut n_other) = (0usize, 0usize, 0usize, 0usize);
        let mut b = bin_beats;
        while b <= max {
            let c = counts.get(&b).copied().unwrap_or(0);
            if b % PHRASE_BEATS == 0 {
                peak += c;
                n_peak += 1;
            } else {
                other += c;
                n_other += 1;
            }
            b += bin_beats;
        }
        let mean_other = other as f64 / n_other.max(1) as f64;
        (n_peak > 0 && mean_other > 0.0).then(|| (peak as f64 / n_peak as f64) / mean_other)
    });
    Ok(LengthHistogram {
        bin_beats,
        counts,
        negative,
        total: lengths.len(),
        phrase_peak_score,
    })
}

pub fn transition_lengths<T: Scalar>(transitions: &[TransitionRecord<T>]) -> Vec<i64> {
    transitions.iter().map(|t| t.length_beats).collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AgreementShare {
    pub max_beats: u64,
    pub share: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    /// Pooled cue-in and cue-out pair distances in track beats, sorted.
    pub distances_beats: Vec<u64>,
    /// Share of distances at or below each threshold.
    pub shares: Vec<AgreementShare>,
}

/// Pairwise track-beat distances between the cues of the same track placed in
/// different mixes, cue-in and cue-out pooled.
pub fn cue_agreement<T: Scalar>(cue_sets: &BTreeMap<String, Vec<CuePoints<T>>>) -> AgreementReport {
    let mut distances_beats = Vec::new();
    for cues in cue_sets.values() {
        for (a, x) in cues.iter().enumerate() {
            for y in &cues[a + 1..] {
                distances_beats.push(x.cue_in_track_beat.abs_diff(y.cue_in_track_beat) as u64);
                distances_beats.push(x.cue_out_track_beat.abs_diff(y.cue_out_track_beat) as u64);
            }
        }
    }
    distances_beats.sort_unstable();
    let n = distances_beats.len();
    let shares = AGREEMENT_THRESHOLDS
        .iter()
        .map(|&max_beats| AgreementShare {
            max_beats,
            share: if n == 0 {
                0.0
            } else {
                distances_beats.iter().filter(|&&d| d <= max_beats).count() as f64 / n as f64
            },
        })
        .collect();
    AgreementReport { distances_beats, shares }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    /// Sorted tempo differences in percent.
    pub tempo_diffs_pct: Vec<f64>,
    pub tempo_median_abs_pct: Option<f64>,
    pub transposition: TranspositionHistogram,
    pub transition_length: LengthHistogram,
    pub agreement: AgreementReport,
}

impl StatsReport {
    pub fn build(
        mut tempo_diffs_pct: Vec<f64>,
        shifts: &[usize],
        lengths: &[i64],
        agreement: AgreementReport,
    ) -> Result<Self> {
        tempo_diffs_pct.sort_by(|a, b| a.total_cmp(b));
        let abs: Vec<f64> = tempo_diffs_pct.iter().map(|d| d.abs()).collect();
        Ok(Self {
            tempo_median_abs_pct: median(&abs),
            tempo_diffs_pct,
            transposition: TranspositionHistogram::from_shifts(shifts.iter().copied()),
            transition_length: transition_length_histogram(lengths, 1)?,
            agreement,
        })
    }
}

/// Integer-percent histogram of tempo differences (bin start to count).
pub fn tempo_histogram(diffs_pct: &[f64]) -> BTreeMap<i64, usize> {
    let mut out = BTreeMap::new();
    for d in diffs_pct {
        *out.entry(d.floor() as i64).or_insert(0) += 1;
    }
    out
}
