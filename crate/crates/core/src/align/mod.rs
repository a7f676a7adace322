//! Key-invariant subsequence alignment of tracks into mixes.

mod dtw;

use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{rotate_chroma, BeatSyncFeatures};
use crate::scalar::Scalar;

pub use dtw::subsequence_dtw;

/// Number of circular chroma shifts tried by `align_key_invariant`.
pub const N_SHIFTS: usize = 12;
/// Match-rate threshold separating matched from rejected tracks.
pub const DEFAULT_MATCH_THRESHOLD: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    Mfcc,
    Chroma,
    ChromaMfcc,
}

impl FeatureMode {
    pub fn uses_chroma(self) -> bool {
        matches!(self, FeatureMode::Chroma | FeatureMode::ChromaMfcc)
    }

    pub fn uses_mfcc(self) -> bool {
        matches!(self, FeatureMode::Mfcc | FeatureMode::ChromaMfcc)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureMode::Mfcc => "mfcc",
            FeatureMode::Chroma => "chroma",
            FeatureMode::ChromaMfcc => "chroma+mfcc",
        }
    }
}

impl std::fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mfcc" => Ok(FeatureMode::Mfcc),
            "chroma" => Ok(FeatureMode::Chroma),
            "chroma+mfcc" | "chroma_mfcc" => Ok(FeatureMode::ChromaMfcc),
            other => Err(Error::InvalidParams(format!("unknown feature mode `{other}`"))),
        }
    }
}

/// Which side normalizes the diagonal-step count in `match_rate`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchRateNorm {
    /// Diagonal steps over track beat intervals.
    #[default]
    Track,
    /// Diagonal steps over the mix beat intervals spanned by the path.
    Mix,
}

/// Pairwise distances `[n_track_beats x n_mix_beats]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix<T> {
    pub costs: Array2<T>,
}

impl<T: Scalar> CostMatrix<T> {
    pub fn n_track(&self) -> usize {
        self.costs.nrows()
    }

    pub fn n_mix(&self) -> usize {
        self.costs.ncols()
    }
}

/// Monotone alignment path of `(track_beat, mix_beat)` pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WarpingPath {
    steps: Vec<(usize, usize)>,
}

impl WarpingPath {
    /// Builds a path, checking it against `n_track_beats`.
    pub fn new(steps: Vec<(usize, usize)>, n_track_beats: usize) -> Result<Self> {
        let path = Self { steps };
        path.validate(n_track_beats)?;
        Ok(path)
    }

    pub(crate) fn new_unchecked(steps: Vec<(usize, usize)>) -> Self {
        Self { steps }
    }

    pub fn steps(&self) -> &[(usize, usize)] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Whether the move from `steps[k]` to `steps[k + 1]` is diagonal.
    pub fn is_diagonal(&self, k: usize) -> bool {
        let (a, b) = (self.steps[k], self.steps[k + 1]);
        b.0 == a.0 + 1 && b.1 == a.1 + 1
    }

    pub fn diagonal_steps(&self) -> usize {
        (0..self.steps.len().saturating_sub(1)).filter(|&k| self.is_diagonal(k)).count()
    }

    pub fn first_mix_beat(&self) -> Option<usize> {
        self.steps.first().map(|s| s.1)
    }

    pub fn last_mix_beat(&self) -> Option<usize> {
        self.steps.last().map(|s| s.1)
    }

    /// Checks monotonicity, the step set and full track coverage.
    pub fn validate(&self, n_track_beats: usize) -> Result<()> {
        let (first, last) = match (self.steps.first(), self.steps.last()) {
            (Some(f), Some(l)) => (f, l),
            _ => return Err(Error::DegenerateInput("empty path".into())),
        };
        if first.0 != 0 || last.0 + 1 != n_track_beats {
            return Err(Error::DegenerateInput(format!(
                "path covers track beats {}..={}, expected 0..={}",
                first.0,
                last.0,
                n_track_beats.saturating_sub(1)
            )));
        }
        for (k, w) in self.steps.windows(2).enumerate() {
            let di = w[1].0.checked_sub(w[0].0);
            let dj = w[1].1.checked_sub(w[0].1);
            if !matches!((di, dj), (Some(1), Some(1)) | (Some(1), Some(0)) | (Some(0), Some(1))) {
                return Err(Error::DegenerateInput(format!(
                    "invalid step {:?} -> {:?} at {k}",
                    w[0], w[1]
                )));
            }
        }
        Ok(())
    }

    /// Writes the path as CSV with a `track_beat,mix_beat` header.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["track_beat", "mix_beat"])?;
        for (i, j) in &self.steps {
            w.write_record([i.to_string(), j.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Outcome of aligning one track into one mix.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentResult<T> {
    pub path: WarpingPath,
    pub total_cost: T,
    /// Winning circular chroma shift in `0..12`.
    pub transposition_semitones: usize,
    pub match_rate: f64,
    pub feature_mode: FeatureMode,
    pub key_invariant: bool,
    /// DTW cost for each shift (a single entry without key invariance).
    pub shift_costs: Vec<T>,
}

impl<T: Scalar> AlignmentResult<T> {
    pub fn signed_transposition(&self) -> i32 {
        signed_semitones(self.transposition_semitones)
    }

    pub fn n_track_beats(&self) -> usize {
        self.path.steps().last().map_or(0, |s| s.0 + 1)
    }
}

/// Maps a shift in `0..12` to `-5..=6`.
pub fn signed_semitones(shift: usize) -> i32 {
    let s = (shift % 12) as i32;
    if s > 6 {
        s - 12
    } else {
        s
    }
}

/// Maps a signed semitone offset to a shift in `0..12`.
pub fn shift_of(semitones: i32) -> usize {
    semitones.rem_euclid(12) as usize
}

fn euclidean<T: Scalar>(track: ArrayView2<T>, mix: ArrayView2<T>) -> Result<Array2<T>> {
    if track.nrows() != mix.nrows() {
        return Err(Error::InvalidParams(format!(
            "feature dimensions differ: {} vs {}",
            track.nrows(),
            mix.nrows()
        )));
    }
    let (n, m, d) = (track.ncols(), mix.ncols(), track.nrows());
    // column-contiguous copies keep the inner loop cache friendly
    let a: Vec<Vec<T>> = (0..n).map(|i| track.column(i).to_vec()).collect();
    let b: Vec<Vec<T>> = (0..m).map(|j| mix.column(j).to_vec()).collect();
    let mut out = Array2::<T>::zeros((n, m));
    for (i, ai) in a.iter().enumerate() {
        for (j, bj) in b.iter().enumerate() {
            let mut acc = T::zero();
            for k in 0..d {
                let diff = ai[k] - bj[k];
                acc += diff * diff;
            }
            out[[i, j]] = acc.sqrt();
        }
    }
    Ok(out)
}

fn mean_normalized<T: Scalar>(mut costs: Array2<T>) -> Array2<T> {
    let n = costs.len();
    if n == 0 {
        return costs;
    }
    let mean = costs.iter().copied().sum::<T>() / T::from_usize_lossy(n);
    if mean > T::zero() {
        costs.mapv_inplace(|c| c / mean);
    }
    costs
}

fn cost_from_parts<T: Scalar>(
    track_chroma: Option<ArrayView2<T>>,
    track_mfcc: Option<ArrayView2<T>>,
    mix: &BeatSyncFeatures<T>,
    mode: FeatureMode,
) -> Result<CostMatrix<T>> {
    let chroma = |t: Option<ArrayView2<T>>| -> Result<Array2<T>> {
        match (t, mix.chroma.as_ref()) {
            (Some(t), Some(m)) => euclidean(t, m.view()),
            _ => Err(Error::MissingFeature("chroma")),
        }
    };
    let mfcc = |t: Option<ArrayView2<T>>| -> Result<Array2<T>> {
        match (t, mix.mfcc.as_ref()) {
            (Some(t), Some(m)) => euclidean(t, m.view()),
            _ => Err(Error::MissingFeature("mfcc")),
        }
    };
    let costs = match mode {
        FeatureMode::Chroma => chroma(track_chroma)?,
        FeatureMode::Mfcc => mfcc(track_mfcc)?,
        FeatureMode::ChromaMfcc => {
            let c = mean_normalized(chroma(track_chroma)?);
            let m = mean_normalized(mfcc(track_mfcc)?);
            c + m
        }
    };
    Ok(CostMatrix { costs })
}

/// Euclidean distances between every track beat and every mix beat.
///
/// `ChromaMfcc` adds the chroma and MFCC matrices after dividing each by its
/// own mean entry.
pub fn cost_matrix<T: Scalar>(
    track: &BeatSyncFeatures<T>,
    mix: &BeatSyncFeatures<T>,
    mode: FeatureMode,
) -> Result<CostMatrix<T>> {
    cost_from_parts(
        track.chroma.as_ref().map(|c| c.view()),
        track.mfcc.as_ref().map(|m| m.view()),
        mix,
        mode,
    )
}

/// Diagonal steps divided by the track (or spanned mix) beat intervals.
pub fn match_rate(path: &WarpingPath, n_track_beats: usize, norm: MatchRateNorm) -> Result<f64> {
    if n_track_beats < 2 {
        return Err(Error::DegenerateInput(format!(
            "{n_track_beats} track beats, need at least 2"
        )));
    }
    let diagonal = path.diagonal_steps() as f64;
    let denom = match norm {
        MatchRateNorm::Track => (n_track_beats - 1) as f64,
        MatchRateNorm::Mix => {
            let span = path.last_mix_beat().unwrap_or(0) - path.first_mix_beat().unwrap_or(0);
            span.max(1) as f64
        }
    };
    Ok((diagonal / denom).min(1.0))
}

/// Shift preference order: 0, +1, -1, +2, -2, ..., +6.
fn shift_rank(shift: usize) -> (u32, bool) {
    let s = signed_semitones(shift);
    (s.unsigned_abs(), s < 0)
}

/// Subsequence alignment under one configuration.
///
/// With `key_invariant` and a chroma-based mode, all 12 circular shifts of the
/// track chroma are aligned (MFCC left unshifted) and the lowest-cost one is
/// kept; equal costs prefer shift 0, then the smaller signed offset, then the
/// upward one.
pub fn align<T: Scalar>(
    track: &BeatSyncFeatures<T>,
    mix: &BeatSyncFeatures<T>,
    mode: FeatureMode,
    key_invariant: bool,
    norm: MatchRateNorm,
) -> Result<AlignmentResult<T>> {
    if mode.uses_chroma() && (track.chroma.is_none() || mix.chroma.is_none()) {
        return Err(Error::MissingFeature("chroma"));
    }
    if mode.uses_mfcc() && (track.mfcc.is_none() || mix.mfcc.is_none()) {
        return Err(Error::MissingFeature("mfcc"));
    }
    let shifts: Vec<usize> = if key_invariant && mode.uses_chroma() {
        (0..N_SHIFTS).collect()
    } else {
        vec![0]
    };
    let runs: Vec<Result<(WarpingPath, T)>> = shifts
        .par_iter()
        .map(|&shift| {
            let chroma = match (&track.chroma, mode.uses_chroma()) {
                (Some(c), true) if shift != 0 => Some(rotate_chroma(c, shift)),
                (Some(c), true) => Some(c.clone()),
                _ => None,
            };
            let costs = cost_from_parts(
                chroma.as_ref().map(|c| c.view()),
                track.mfcc.as_ref().map(|m| m.view()),
                mix,
                mode,
            )?;
            subsequence_dtw(&costs.costs)
        })
        .collect();
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;

    let mut best = 0;
    for k in 1..runs.len() {
        let (c, b) = (runs[k].1, runs[best].1);
        if c < b || (c == b && shift_rank(shifts[k]) < shift_rank(shifts[best])) {
            best = k;
        }
    }
    let shift_costs = runs.iter().map(|r| r.1).collect();
    let (path, total_cost) = runs.into_iter().nth(best).expect("at least one shift");
    let rate = match_rate(&path, track.n_beats(), norm)?;
    Ok(AlignmentResult {
        path,
        total_cost,
        transposition_semitones: shifts[best],
        match_rate: rate,
        feature_mode: mode,
        key_invariant,
        shift_costs,
    })
}

/// Key-invariant alignment with track-side match rate.
pub fn align_key_invariant<T: Scalar>(
    track: &BeatSyncFeatures<T>,
    mix: &BeatSyncFeatures<T>,
    mode: FeatureMode,
) -> Result<AlignmentResult<T>> {
    align(track, mix, mode, true, MatchRateNorm::Track)
}

/// Splits results into `(matched, rejected)` by `match_rate >= threshold`,
/// preserving order.
pub fn filter_matched<R, F>(results: Vec<R>, threshold: f64, rate: F) -> (Vec<R>, Vec<R>)
where
    F: Fn(&R) -> f64,
{
    results.into_iter().partition(|r| rate(r) >= threshold)
}
