//! Onset strength, global tempo estimation and dynamic-programming beat tracking.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::mel::{mel_filterbank, mel_power, power_to_db};
use super::stft::Spectrogram;
use crate::error::{Error, Result};
use crate::scalar::{median, Scalar};

/// Mel bands used for the onset envelope.
pub const ONSET_MELS: usize = 128;
/// Dynamic range kept below the loudest mel cell, in dB.
pub const ONSET_TOP_DB: f64 = 80.0;
pub const MIN_TEMPO_BPM: f64 = 60.0;
pub const MAX_TEMPO_BPM: f64 = 200.0;
/// Frames by which the flux is delayed to line up with the onset it detects.
pub const ONSET_DELAY_FRAMES: usize = 1;
/// Centre of the log-Gaussian tempo prior.
pub const TEMPO_PRIOR_BPM: f64 = 120.0;
/// Spread of the tempo prior in octaves.
pub const TEMPO_PRIOR_OCTAVES: f64 = 1.0;
/// Minimum amount of onset signal accepted by `estimate_tempo`, in seconds.
pub const MIN_TEMPO_SECONDS: f64 = 10.0;
/// Weight of the log-squared inter-beat deviation penalty.
pub const BEAT_TIGHTNESS: f64 = 100.0;
/// Longest lag (seconds) used when refining the tempo period.
const REFINE_MAX_LAG_SECONDS: f64 = 12.0;

/// Beat timestamps and the global tempo they were tracked with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeatGrid<T> {
    pub beat_times: Vec<T>,
    pub tempo_bpm: T,
}

impl<T: Scalar> BeatGrid<T> {
    pub fn new(beat_times: Vec<T>, tempo_bpm: T) -> Result<Self> {
        if !(tempo_bpm > T::zero()) {
            return Err(Error::InvalidParams("tempo must be positive".into()));
        }
        if beat_times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParams("beat times must be strictly increasing".into()));
        }
        if beat_times.iter().any(|t| !t.is_finite() || *t < T::zero()) {
            return Err(Error::InvalidParams("beat times must be finite and non-negative".into()));
        }
        Ok(Self { beat_times, tempo_bpm })
    }

    /// Evenly spaced grid of `n` beats starting at `offset` seconds.
    pub fn uniform(n: usize, tempo_bpm: T, offset: T) -> Self {
        let period = T::lit(60.0) / tempo_bpm;
        Self {
            beat_times: (0..n).map(|i| offset + T::from_usize_lossy(i) * period).collect(),
            tempo_bpm,
        }
    }

    pub fn len(&self) -> usize {
        self.beat_times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beat_times.is_empty()
    }

    /// Number of beat intervals (beat-synchronous columns).
    pub fn n_intervals(&self) -> usize {
        self.beat_times.len().saturating_sub(1)
    }

    pub fn inter_beat_intervals(&self) -> Vec<T> {
        self.beat_times.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Fractional beat position of `seconds`, interpolating linearly between beats
    /// and extrapolating with the edge intervals.
    pub fn fractional_beat(&self, seconds: T) -> Option<T> {
        let b = &self.beat_times;
        if b.len() < 2 {
            return None;
        }
        let idx = match b.iter().position(|&t| t > seconds) {
            Some(0) => 0,
            Some(i) => i - 1,
            None => b.len() - 2,
        };
        let idx = idx.min(b.len() - 2);
        let span = b[idx + 1] - b[idx];
        Some(T::from_usize_lossy(idx) + (seconds - b[idx]) / span)
    }
}

/// Spectral-flux onset strength, one value per spectrogram frame.
///
/// Mel power in dB (floored `ONSET_TOP_DB` below the global maximum), positive
/// first differences summed over bands. The first frame has no predecessor and
/// is 0.
pub fn onset_envelope<T: Scalar>(spec: &Spectrogram<T>) -> Vec<T> {
    let n_mels = ONSET_MELS.min(spec.n_bins());
    let fb = mel_filterbank::<T>(spec.sample_rate, spec.fft_size, n_mels);
    let mut db: Array2<T> = mel_power(spec, &fb).mapv(power_to_db);
    let max = db.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let floor = max - T::lit(ONSET_TOP_DB);
    db.mapv_inplace(|x| x.max(floor));
    let n = spec.n_frames();
    let mut env = vec![T::zero(); n];
    for f in 1..n.saturating_sub(ONSET_DELAY_FRAMES) {
        let mut acc = T::zero();
        for b in 0..n_mels {
            let d = db[[b, f]] - db[[b, f - 1]];
            if d > T::zero() {
                acc += d;
            }
        }
        env[f + ONSET_DELAY_FRAMES] = acc;
    }
    env
}

fn tempo_prior(bpm: f64) -> f64 {
    let z = (bpm / TEMPO_PRIOR_BPM).log2() / TEMPO_PRIOR_OCTAVES;
    (-0.5 * z * z).exp()
}

/// Mean-removed autocorrelation, normalized by the overlap length.
fn autocorrelation(x: &[f64], max_lag: usize) -> Vec<f64> {
    let n = x.len();
    (0..=max_lag.min(n.saturating_sub(1)))
        .map(|lag| {
            let s: f64 = x[..n - lag].iter().zip(&x[lag..]).map(|(a, b)| a * b).sum();
            s / (n - lag) as f64
        })
        .collect()
}

/// Vertex offset of the parabola through three equally spaced samples, in `[-0.5, 0.5]`.
fn parabolic_offset(left: f64, centre: f64, right: f64) -> f64 {
    let denom = left - 2.0 * centre + right;
    if denom >= 0.0 {
        return 0.0;
    }
    (0.5 * (left - right) / denom).clamp(-0.5, 0.5)
}

/// Global tempo in BPM.
///
/// Picks the lag in the 60-200 BPM range maximizing the onset autocorrelation
/// weighted by a log-Gaussian prior centred at 120 BPM, then refines the period
/// to sub-frame precision from the interpolated autocorrelation peaks at its
/// multiples. A zero (or constant) envelope yields the prior centre.
pub fn estimate_tempo<T: Scalar>(onsets: &[T], frame_rate: T) -> Result<T> {
    let fr = frame_rate.as_f64();
    if !(fr > 0.0) {
        return Err(Error::InvalidParams("frame rate must be positive".into()));
    }
    if (onsets.len() as f64) < MIN_TEMPO_SECONDS * fr {
        return Err(Error::TooShort(format!(
            "{:.2} s of onsets, need {MIN_TEMPO_SECONDS} s",
            onsets.len() as f64 / fr
        )));
    }
    let mean = onsets.iter().map(|x| x.as_f64()).sum::<f64>() / onsets.len() as f64;
    let centred: Vec<f64> = onsets.iter().map(|x| x.as_f64() - mean).collect();
    if centred.iter().all(|&x| x == 0.0) {
        return Ok(T::lit(TEMPO_PRIOR_BPM));
    }
    let lag_min = ((60.0 * fr / MAX_TEMPO_BPM).ceil() as usize).max(1);
    let lag_max = (60.0 * fr / MIN_TEMPO_BPM).floor() as usize;
    let refine_lag = ((REFINE_MAX_LAG_SECONDS * fr) as usize)
        .min(onsets.len() / 2)
        .max(lag_max + 2);
    let acf = autocorrelation(&centred, refine_lag);
    if acf.len() <= lag_max + 1 {
        return Err(Error::TooShort("onset envelope shorter than the slowest tempo".into()));
    }

    let mut best: Option<(usize, f64)> = None;
    for lag in lag_min..=lag_max {
        let score = acf[lag] * tempo_prior(60.0 * fr / lag as f64);
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((lag, score));
        }
    }
    let (coarse, score) = best.expect("non-empty lag range");
    if !(score > 0.0) {
        return Ok(T::lit(TEMPO_PRIOR_BPM));
    }

    // Sub-frame refinement: least-squares period through the origin from the
    // interpolated peaks near each multiple of the current estimate.
    let peak_near = |centre: f64, radius: usize| -> Option<f64> {
        let c = centre.round() as usize;
        let lo = c.saturating_sub(radius).max(1);
        let hi = (c + radius).min(acf.len() - 2);
        if lo > hi {
            return None;
        }
        let k = (lo..=hi).max_by(|&a, &b| acf[a].partial_cmp(&acf[b]).unwrap())?;
        if acf[k] <= 0.0 || acf[k] < acf[k - 1] || acf[k] < acf[k + 1] {
            return None;
        }
        Some(k as f64 + parabolic_offset(acf[k - 1], acf[k], acf[k + 1]))
    };
    let mut period = peak_near(coarse as f64, 1).unwrap_or(coarse as f64);
    let (mut num, mut den) = (period, 1.0);
    let mut m = 2.0;
    while m * period + 2.0 < (acf.len() - 1) as f64 {
        match peak_near(m * period, 2) {
            Some(p) => {
                num += m * p;
                den += m * m;
                period = num / den;
            }
            None => break,
        }
        m += 1.0;
    }
    if (period - coarse as f64).abs() > 1.0 {
        period = coarse as f64;
    }
    let bpm = (60.0 * fr / period).clamp(MIN_TEMPO_BPM, MAX_TEMPO_BPM);
    Ok(T::lit(bpm))
}

/// Dynamic-programming beat tracker.
///
/// Maximizes the summed (std-normalized, Gaussian-smoothed) onset strength at
/// the beats minus `BEAT_TIGHTNESS * ln(interval / period)^2` per interval,
/// where the period is `60 / tempo_bpm`. Weak leading and trailing beats are
/// trimmed and beats sitting on an onset peak are refined to sub-frame
/// precision by parabolic interpolation.
pub fn track_beats<T: Scalar>(onsets: &[T], tempo_bpm: T, frame_rate: T) -> Result<BeatGrid<T>> {
    let tempo = tempo_bpm.as_f64();
    let fr = frame_rate.as_f64();
    if !(fr > 0.0) {
        return Err(Error::InvalidParams("frame rate must be positive".into()));
    }
    if !(MIN_TEMPO_BPM..=MAX_TEMPO_BPM).contains(&tempo) {
        return Err(Error::InvalidParams(format!(
            "tempo {tempo} BPM outside [{MIN_TEMPO_BPM}, {MAX_TEMPO_BPM}]"
        )));
    }
    let period = 60.0 * fr / tempo;
    let n = onsets.len();
    if (n as f64) < 2.0 * period + 1.0 {
        return Err(Error::TooShort(format!("{n} onset frames for a {period:.1}-frame period")));
    }
    let raw: Vec<f64> = onsets.iter().map(|x| x.as_f64()).collect();
    let local = local_score(&raw, period);
    let beats = dp_beats(&local, period);
    let beats = trim_weak_beats(&local, beats);

    let mut times: Vec<T> = beats
        .iter()
        .map(|&b| T::lit(refine_beat(&raw, b) / fr))
        .collect();
    times.dedup_by(|b, a| !(*b > *a));
    BeatGrid::new(times, tempo_bpm)
}

fn local_score(onsets: &[f64], period: f64) -> Vec<f64> {
    let n = onsets.len() as f64;
    let mean = onsets.iter().sum::<f64>() / n;
    let var = onsets.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let std = var.sqrt();
    if !(std > 1e-12 * mean.abs().max(1.0)) {
        return vec![0.0; onsets.len()];
    }
    let half = period.round() as isize;
    let kernel: Vec<f64> = (-half..=half)
        .map(|t| (-0.5 * (t as f64 * 32.0 / period).powi(2)).exp())
        .collect();
    let len = onsets.len() as isize;
    (0..len)
        .map(|i| {
            kernel
                .iter()
                .enumerate()
                .filter_map(|(j, w)| {
                    let src = i + j as isize - half;
                    (0..len).contains(&src).then(|| w * onsets[src as usize] / std)
                })
                .sum()
        })
        .collect()
}

fn dp_beats(local: &[f64], period: f64) -> Vec<usize> {
    let n = local.len();
    let max_back = (2.0 * period).round() as usize;
    let min_back = ((period / 2.0).round() as usize).max(1);
    let mut cum = vec![0.0; n];
    let mut backlink: Vec<Option<usize>> = vec![None; n];
    for i in 0..n {
        let mut best: Option<(usize, f64)> = None;
        for back in min_back..=max_back.min(i) {
            let prev = i - back;
            let penalty = BEAT_TIGHTNESS * (back as f64 / period).ln().powi(2);
            let s = cum[prev] - penalty;
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((prev, s));
            }
        }
        match best {
            Some((prev, s)) if s >= 0.0 => {
                cum[i] = local[i] + s;
                backlink[i] = Some(prev);
            }
            _ => cum[i] = local[i],
        }
    }

    // last beat: latest local maximum of the cumulative score above half the
    // median of all such maxima
    let maxima: Vec<usize> = (0..n)
        .filter(|&i| {
            let left = i == 0 || cum[i] >= cum[i - 1];
            let right = i + 1 == n || cum[i] > cum[i + 1];
            left && right
        })
        .collect();
    let last = if maxima.is_empty() {
        n - 1
    } else {
        let vals: Vec<f64> = maxima.iter().map(|&i| cum[i]).collect();
        let threshold = 0.5 * median(&vals).unwrap_or(0.0);
        *maxima.iter().rev().find(|&&i| cum[i] >= threshold).unwrap_or(&(n - 1))
    };

    let mut beats = vec![last];
    let mut cur = last;
    while let Some(prev) = backlink[cur] {
        beats.push(prev);
        cur = prev;
    }
    beats.reverse();
    beats
}

fn trim_weak_beats(local: &[f64], beats: Vec<usize>) -> Vec<usize> {
    if beats.len() < 3 {
        return beats;
    }
    let rms = (beats.iter().map(|&b| local[b].powi(2)).sum::<f64>() / beats.len() as f64).sqrt();
    let threshold = 0.5 * rms;
    let first = beats.iter().position(|&b| local[b] >= threshold).unwrap_or(0);
    let last = beats.iter().rposition(|&b| local[b] >= threshold).unwrap_or(beats.len() - 1);
    beats[first..=last].to_vec()
}

/// Sub-frame position of the onset peak at (or adjacent to) `beat`.
fn refine_beat(onsets: &[f64], beat: usize) -> f64 {
    let n = onsets.len();
    let lo = beat.saturating_sub(1).max(1);
    let hi = (beat + 1).min(n.saturating_sub(2));
    if lo > hi {
        return beat as f64;
    }
    let k = (lo..=hi)
        .max_by(|&a, &b| onsets[a].partial_cmp(&onsets[b]).unwrap())
        .unwrap();
    let (l, c, r) = (onsets[k - 1], onsets[k], onsets[k + 1]);
    if c > 0.0 && c > l && c >= r {
        k as f64 + parabolic_offset(l, c, r)
    } else {
        beat as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::stft::stft;
    use crate::ingest::AudioBuffer;

    const SR: u32 = 22050;
    const HOP: usize = 512;

    fn frame_rate() -> f64 {
        SR as f64 / HOP as f64
    }

    /// Click train: 3 ms decaying bursts at `bpm`, optionally skipping one click.
    fn clicks(bpm: f64, seconds: f64, skip: Option<usize>) -> (AudioBuffer<f64>, Vec<f64>) {
        let n = (seconds * SR as f64) as usize;
        let mut x = vec![0.0; n];
        let period = 60.0 / bpm;
        let mut times = Vec::new();
        let mut k = 0;
        loop {
            let t = 0.25 + k as f64 * period;
            let start = (t * SR as f64).round() as usize;
            if start + 200 >= n {
                break;
            }
            if Some(k) != skip {
                for i in 0..200 {
                    let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                    x[start + i] = sign * (-(i as f64) / 30.0).exp();
                }
            }
            times.push(t);
            k += 1;
        }
        (AudioBuffer::new(x, SR).unwrap(), times)
    }

    fn onsets_of(audio: &AudioBuffer<f64>) -> Vec<f64> {
        onset_envelope(&stft(audio, 2048, HOP).unwrap())
    }

    #[test]
    fn silence_gives_zero_envelope() {
        let audio = AudioBuffer::new(vec![0.0; 30_000], SR).unwrap();
        assert!(onsets_of(&audio).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn single_click_localized() {
        let mut x = vec![0.0; 44100];
        let click_sample = 20_000;
        for i in 0..100 {
            x[click_sample + i] = (-(i as f64) / 20.0).exp();
        }
        let env = onsets_of(&AudioBuffer::new(x, SR).unwrap());
        let arg = (0..env.len()).max_by(|&a, &b| env[a].partial_cmp(&env[b]).unwrap()).unwrap();
        let click_frame = (click_sample as f64 / HOP as f64).round() as isize;
        assert!((arg as isize - click_frame).abs() <= 1, "{arg} vs {click_frame}");
        let peak = env[arg];
        let second = env
            .iter()
            .enumerate()
            .filter(|(i, _)| (*i as isize - arg as isize).abs() > 2)
            .map(|(_, &v)| v)
            .fold(0.0, f64::max);
        assert!(second < 0.5 * peak);
    }

    #[test]
    fn click_train_peaks_half_second_apart() {
        let (audio, _) = clicks(120.0, 12.0, None);
        let env = onsets_of(&audio);
        let max = env.iter().cloned().fold(0.0, f64::max);
        let peaks: Vec<usize> = (1..env.len() - 1)
            .filter(|&i| env[i] > 0.5 * max && env[i] >= env[i - 1] && env[i] > env[i + 1])
            .collect();
        assert!(peaks.len() > 20);
        let hop_s = HOP as f64 / SR as f64;
        for w in peaks.windows(2) {
            let dt = (w[1] - w[0]) as f64 * hop_s;
            assert!((dt - 0.5).abs() <= hop_s + 1e-9, "spacing {dt}");
        }
    }

    #[test]
    fn tempo_of_click_trains() {
        for bpm in [90.0, 120.0, 128.0] {
            let (audio, _) = clicks(bpm, 30.0, None);
            let est = estimate_tempo(&onsets_of(&audio), frame_rate()).unwrap();
            assert!((est - bpm).abs() <= 1.0, "{bpm}: {est}");
        }
        let (audio, _) = clicks(174.0, 30.0, None);
        let est = estimate_tempo(&onsets_of(&audio), frame_rate()).unwrap();
        assert!((est - 174.0).abs() <= 1.0 || (est - 87.0).abs() <= 1.0, "174: {est}");
    }

    #[test]
    fn tempo_degenerate_and_short() {
        let zeros = vec![0.0f64; 1000];
        assert_eq!(estimate_tempo(&zeros, frame_rate()).unwrap(), 120.0);
        assert!(matches!(
            estimate_tempo(&vec![1.0f64; 100], frame_rate()),
            Err(Error::TooShort(_))
        ));
    }

    #[test]
    fn beats_on_clicks() {
        let (audio, times) = clicks(120.0, 20.0, None);
        let env = onsets_of(&audio);
        let grid = track_beats(&env, 120.0, frame_rate()).unwrap();
        assert!(grid.len() >= times.len() - 2);
        for t in &times[1..times.len() - 1] {
            let nearest = grid
                .beat_times
                .iter()
                .map(|b| (b - t).abs())
                .fold(f64::INFINITY, f64::min);
            assert!(nearest <= 0.025, "click {t}: {nearest}");
        }
        let ibi = median(&grid.inter_beat_intervals()).unwrap();
        assert!((ibi - 0.5).abs() < 0.05 * 0.5);
    }

    #[test]
    fn missing_click_is_interpolated() {
        let (audio, times) = clicks(120.0, 20.0, Some(15));
        let env = onsets_of(&audio);
        let grid = track_beats(&env, 120.0, frame_rate()).unwrap();
        let gap = times[15];
        let nearest = grid
            .beat_times
            .iter()
            .map(|b| (b - gap).abs())
            .fold(f64::INFINITY, f64::min);
        assert!(nearest <= 0.05, "gap beat off by {nearest}");
    }

    #[test]
    fn constant_envelope_gives_exact_period() {
        // tempo chosen so the period is exactly 20 frames
        let fr = frame_rate();
        let tempo = 60.0 * fr / 20.0;
        let env = vec![3.0f64; 600];
        let grid = track_beats(&env, tempo, fr).unwrap();
        assert!(grid.len() > 20);
        for ibi in grid.inter_beat_intervals() {
            assert!((ibi - 60.0 / tempo).abs() < 1e-9);
        }
    }

    #[test]
    fn track_beats_errors() {
        assert!(matches!(track_beats(&[0.0f64; 10], 120.0, frame_rate()), Err(Error::TooShort(_))));
        assert!(track_beats(&[0.0f64; 1000], 250.0, frame_rate()).is_err());
    }

    #[test]
    fn fractional_beat_lookup() {
        let g = BeatGrid::uniform(5, 120.0f64, 1.0);
        assert_eq!(g.fractional_beat(1.0), Some(0.0));
        assert_eq!(g.fractional_beat(1.25), Some(0.5));
        assert_eq!(g.fractional_beat(3.5), Some(5.0));
        assert_eq!(g.n_intervals(), 4);
    }
}
