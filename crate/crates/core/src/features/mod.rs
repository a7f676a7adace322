//! Framewise spectral features, beat tracking and beat-level aggregation.

pub mod beat;
pub mod cache;
pub mod chroma;
pub mod mel;
pub mod stft;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::AudioBuffer;
use crate::scalar::Scalar;

pub use beat::{estimate_tempo, onset_envelope, track_beats, BeatGrid};
pub use chroma::{chroma_cens, rotate_chroma};
pub use mel::mfcc;
pub use stft::{stft, Spectrogram};

/// Per-beat feature matrices. Columns are beat intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct BeatSyncFeatures<T> {
    /// `[12 x n_intervals]`, unit-L2 or all-zero columns.
    pub chroma: Option<Array2<T>>,
    /// `[n_mfcc x n_intervals]`.
    pub mfcc: Option<Array2<T>>,
    pub beat_grid: BeatGrid<T>,
}

impl<T: Scalar> BeatSyncFeatures<T> {
    pub fn new(chroma: Option<Array2<T>>, mfcc: Option<Array2<T>>, beat_grid: BeatGrid<T>) -> Result<Self> {
        if chroma.is_none() && mfcc.is_none() {
            return Err(Error::InvalidParams("at least one feature is required".into()));
        }
        let n = beat_grid.n_intervals();
        for m in chroma.iter().chain(mfcc.iter()) {
            if m.ncols() != n {
                return Err(Error::InvalidParams(format!(
                    "feature width {} does not match {n} beat intervals",
                    m.ncols()
                )));
            }
        }
        Ok(Self { chroma, mfcc, beat_grid })
    }

    pub fn n_beats(&self) -> usize {
        self.beat_grid.n_intervals()
    }
}

/// Analysis parameters for `extract_features`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub fft_size: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub n_mfcc: usize,
    /// Frequency of A4 in Hz.
    pub tuning_ref: f64,
    pub chroma: bool,
    pub mfcc: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            fft_size: 2048,
            hop: 512,
            n_mels: 128,
            n_mfcc: 12,
            tuning_ref: 440.0,
            chroma: true,
            mfcc: true,
        }
    }
}

/// Frame range `[start, end)` covered by each beat interval.
fn interval_frames<T: Scalar>(beats: &BeatGrid<T>, frame_rate: T, n_frames: usize) -> Result<Vec<(usize, usize)>> {
    let fr = frame_rate.as_f64();
    let first_frame = |t: T| -> usize {
        let x = (t.as_f64() * fr - 1e-9).ceil();
        if x <= 0.0 {
            0
        } else {
            (x as usize).min(n_frames)
        }
    };
    beats
        .beat_times
        .windows(2)
        .enumerate()
        .map(|(index, w)| {
            let (start, end) = (first_frame(w[0]), first_frame(w[1]));
            if start >= end {
                Err(Error::EmptyInterval { index })
            } else {
                Ok((start, end))
            }
        })
        .collect()
}

/// Averages frame features over beat intervals.
///
/// Column `j` is the mean of the frames whose time `f / frame_rate` lies in
/// `[beat_j, beat_{j+1})`.
pub fn beat_sync<T: Scalar>(features: &Array2<T>, beats: &BeatGrid<T>, frame_rate: T) -> Result<Array2<T>> {
    if !(frame_rate > T::zero()) {
        return Err(Error::InvalidParams("frame rate must be positive".into()));
    }
    let ranges = interval_frames(beats, frame_rate, features.ncols())?;
    let mut out = Array2::<T>::zeros((features.nrows(), ranges.len()));
    for (j, &(start, end)) in ranges.iter().enumerate() {
        let count = T::from_usize_lossy(end - start);
        for d in 0..features.nrows() {
            let mut acc = T::zero();
            for f in start..end {
                acc += features[[d, f]];
            }
            out[[d, j]] = acc / count;
        }
    }
    Ok(out)
}

/// `beat_sync` followed by per-column L2 renormalization.
pub fn beat_sync_chroma<T: Scalar>(chroma: &Array2<T>, beats: &BeatGrid<T>, frame_rate: T) -> Result<Array2<T>> {
    let mut out = beat_sync(chroma, beats, frame_rate)?;
    for col in out.axis_iter_mut(Axis(1)) {
        chroma::l2_normalize(col);
    }
    Ok(out)
}

/// Full analysis of one buffer: STFT, onset envelope, tempo, beats and
/// beat-synchronous chroma/MFCC.
pub fn extract_features<T: Scalar>(audio: &AudioBuffer<T>, config: &FeatureConfig) -> Result<BeatSyncFeatures<T>> {
    if !config.chroma && !config.mfcc {
        return Err(Error::InvalidParams("at least one feature must be enabled".into()));
    }
    let spec = stft(audio, config.fft_size, config.hop)?;
    let frame_rate = spec.frame_rate();
    let onsets = onset_envelope(&spec);
    let tempo = estimate_tempo(&onsets, frame_rate)?;
    let grid = track_beats(&onsets, tempo, frame_rate)?;
    if grid.len() < 3 {
        return Err(Error::TooShort(format!("only {} beats tracked", grid.len())));
    }
    log::debug!(
        "{} beats at {:.2} BPM over {:.1} s",
        grid.len(),
        tempo,
        audio.duration_seconds()
    );
    let chroma = if config.chroma {
        Some(beat_sync_chroma(&chroma_cens(&spec, config.tuning_ref)?, &grid, frame_rate)?)
    } else {
        None
    };
    let mfcc = if config.mfcc {
        Some(beat_sync(&mfcc(&spec, config.n_mels, config.n_mfcc)?, &grid, frame_rate)?)
    } else {
        None
    };
    BeatSyncFeatures::new(chroma, mfcc, grid)
}
