//! Chroma energy normalized statistics (CENS).

use ndarray::{Array2, ArrayViewMut1, Axis};

use super::stft::Spectrogram;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const N_CHROMA: usize = 12;
/// Quantization thresholds on L1-normalized chroma, ascending.
pub const CENS_THRESHOLDS: [f64; 4] = [0.05, 0.1, 0.2, 0.4];
/// Output level for a value exceeding the matching threshold.
pub const CENS_WEIGHTS: [f64; 4] = [0.25, 0.5, 0.75, 1.0];
/// Temporal smoothing length in frames.
pub const CENS_SMOOTHING: usize = 41;
/// Lowest and highest MIDI pitch folded into chroma.
const MIN_PITCH: i32 = 24;
const MAX_PITCH: i32 = 119;

/// Pitch class (0 = C) of a frequency, or `None` outside the folded pitch range.
pub fn pitch_class(freq: f64, tuning_ref: f64) -> Option<usize> {
    if !(freq > 0.0) {
        return None;
    }
    let pitch = (12.0 * (freq / tuning_ref).log2() + 69.0).round() as i32;
    (MIN_PITCH..=MAX_PITCH)
        .contains(&pitch)
        .then_some(pitch.rem_euclid(12) as usize)
}

/// Folds spectral power into 12 pitch classes, `[12 x n_frames]`.
///
/// Below roughly 360 Hz a 2048-point bin at 22050 Hz is wider than a
/// semitone, so bins are not folded directly. Each local magnitude peak is
/// located to sub-bin precision by parabolic interpolation of the log
/// magnitude, and the power of its three main-lobe bins goes to the pitch
/// class of the interpolated frequency.
pub fn pitch_class_energy<T: Scalar>(spec: &Spectrogram<T>, tuning_ref: f64) -> Array2<T> {
    let n_bins = spec.n_bins();
    let bin_hz = spec.sample_rate as f64 / spec.fft_size as f64;
    let mut chroma = Array2::<T>::zeros((N_CHROMA, spec.n_frames()));
    let mut log_mag = vec![0.0; n_bins];
    for (f, col) in spec.magnitudes.columns().into_iter().enumerate() {
        for (l, &m) in log_mag.iter_mut().zip(col.iter()) {
            *l = (m.as_f64() + 1e-12).ln();
        }
        for k in 1..n_bins.saturating_sub(1) {
            let (l, c, r) = (col[k - 1], col[k], col[k + 1]);
            if !(c > T::zero() && c > l && c >= r) {
                continue;
            }
            let (a, b, g) = (log_mag[k - 1], log_mag[k], log_mag[k + 1]);
            let denom = a - 2.0 * b + g;
            let delta = if denom < 0.0 { (0.5 * (a - g) / denom).clamp(-0.5, 0.5) } else { 0.0 };
            if let Some(class) = pitch_class((k as f64 + delta) * bin_hz, tuning_ref) {
                chroma[[class, f]] += l * l + c * c + r * r;
            }
        }
    }
    chroma
}

fn cens_quantize<T: Scalar>(x: T) -> T {
    CENS_THRESHOLDS
        .iter()
        .zip(CENS_WEIGHTS)
        .rev()
        .find(|(t, _)| x > T::lit(**t))
        .map_or(T::zero(), |(_, w)| T::lit(w))
}

/// Scales a vector to unit L2 norm; zero vectors are left as they are.
///
/// Squares are summed in sorted order so the result does not depend on the
/// order of the components (rotated chroma normalizes bit-identically).
pub fn l2_normalize<T: Scalar>(mut v: ArrayViewMut1<T>) {
    let mut squares: Vec<T> = v.iter().map(|&x| x * x).collect();
    squares.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let norm = squares.into_iter().sum::<T>().sqrt();
    if norm > T::zero() {
        v.mapv_inplace(|x| x / norm);
    }
}

/// Symmetric Hann smoothing window of `len` taps (endpoints excluded), summing to 1.
fn smoothing_window(len: usize) -> Vec<f64> {
    let full = len + 2;
    let w: Vec<f64> = (1..=len)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (full - 1) as f64).cos())
        .collect();
    let sum: f64 = w.iter().sum();
    w.into_iter().map(|x| x / sum).collect()
}

/// CENS chromagram `[12 x n_frames]` with unit-L2 (or all-zero) columns.
///
/// Pitch-class folding against `tuning_ref` (the frequency of A4), per-frame L1
/// normalization, four-level amplitude quantization, 41-frame Hann smoothing
/// with zero-padded edges, and per-frame L2 normalization.
pub fn chroma_cens<T: Scalar>(spec: &Spectrogram<T>, tuning_ref: f64) -> Result<Array2<T>> {
    if !(tuning_ref.is_finite() && tuning_ref > 0.0) {
        return Err(Error::InvalidParams(format!("tuning reference {tuning_ref} Hz")));
    }
    if spec.n_frames() == 0 {
        return Err(Error::InvalidParams("empty spectrogram".into()));
    }
    let mut chroma = pitch_class_energy(spec, tuning_ref);
    for mut col in chroma.axis_iter_mut(Axis(1)) {
        let l1: T = col.iter().map(|x| x.abs()).sum();
        if l1 > T::zero() {
            col.mapv_inplace(|x| cens_quantize(x / l1));
        } else {
            col.fill(T::zero());
        }
    }

    let window = smoothing_window(CENS_SMOOTHING);
    let half = CENS_SMOOTHING / 2;
    let n = chroma.ncols();
    let mut smoothed = Array2::<T>::zeros(chroma.dim());
    for c in 0..N_CHROMA {
        let row = chroma.row(c);
        for t in 0..n {
            let mut acc = T::zero();
            for (j, &w) in window.iter().enumerate() {
                let src = t as isize + j as isize - half as isize;
                if src >= 0 && (src as usize) < n {
                    acc += T::lit(w) * row[src as usize];
                }
            }
            smoothed[[c, t]] = acc;
        }
    }
    for col in smoothed.axis_iter_mut(Axis(1)) {
        l2_normalize(col);
    }
    Ok(smoothed)
}

/// Circularly shifts chroma rows by `shift` semitones: row `c` moves to `(c + shift) % 12`.
pub fn rotate_chroma<T: Scalar>(chroma: &Array2<T>, shift: usize) -> Array2<T> {
    let rows = chroma.nrows();
    let mut out = Array2::<T>::zeros(chroma.dim());
    for c in 0..rows {
        out.row_mut((c + shift) % rows).assign(&chroma.row(c));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::stft::stft;
    use crate::ingest::AudioBuffer;
    use std::f64::consts::PI;

    fn tone(freqs: &[(f64, f64)], seconds: f64) -> AudioBuffer<f64> {
        let n = (22050.0 * seconds) as usize;
        AudioBuffer::new(
            (0..n)
                .map(|i| {
                    let t = i as f64 / 22050.0;
                    freqs.iter().map(|(f, a)| a * (2.0 * PI * f * t).sin()).sum::<f64>() * 0.3
                })
                .collect(),
            22050,
        )
        .unwrap()
    }

    fn midi_hz(p: f64) -> f64 {
        440.0 * 2f64.powf((p - 69.0) / 12.0)
    }

    #[test]
    fn quantizer_levels() {
        assert_eq!(cens_quantize(0.03f64), 0.0);
        assert_eq!(cens_quantize(0.07f64), 0.25);
        assert_eq!(cens_quantize(0.15f64), 0.5);
        assert_eq!(cens_quantize(0.3f64), 0.75);
        assert_eq!(cens_quantize(0.9f64), 1.0);
        // thresholds are strict
        assert_eq!(cens_quantize(0.4f64), 0.75);
    }

    #[test]
    fn a440_is_pitch_class_nine() {
        let spec = stft(&tone(&[(440.0, 1.0)], 2.0), 2048, 512).unwrap();
        let c = chroma_cens(&spec, 440.0).unwrap();
        for col in c.columns() {
            let arg = (0..12).max_by(|&a, &b| col[a].partial_cmp(&col[b]).unwrap()).unwrap();
            assert_eq!(arg, 9);
        }
    }

    #[test]
    fn pure_tones_fold_to_their_pitch_class() {
        for midi in 48..84 {
            let spec = stft(&tone(&[(midi_hz(midi as f64), 1.0)], 1.0), 2048, 512).unwrap();
            let c = chroma_cens(&spec, 440.0).unwrap();
            for col in c.columns() {
                let arg = (0..12).max_by(|&a, &b| col[a].partial_cmp(&col[b]).unwrap()).unwrap();
                assert_eq!(arg, midi % 12, "MIDI {midi}");
            }
        }
    }

    #[test]
    fn silence_gives_zero_columns() {
        let audio = AudioBuffer::new(vec![0.0f64; 20_000], 22050).unwrap();
        let spec = stft(&audio, 2048, 512).unwrap();
        let c = chroma_cens(&spec, 440.0).unwrap();
        assert!(c.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn columns_unit_or_zero() {
        let spec = stft(&tone(&[(261.6, 1.0), (392.0, 0.5)], 1.5), 2048, 512).unwrap();
        let c = chroma_cens(&spec, 440.0).unwrap();
        for col in c.columns() {
            let n: f64 = col.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(n == 0.0 || (n - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn semitone_up_rotates_by_one() {
        let harmonic = |root: f64| -> Vec<(f64, f64)> {
            (1..=5).map(|h| (midi_hz(root) * h as f64, 1.0 / h as f64)).collect()
        };
        for root in [48.0, 60.0, 72.0] {
            let c0 = chroma_cens(&stft(&tone(&harmonic(root), 2.0), 2048, 512).unwrap(), 440.0).unwrap();
            let c1 = chroma_cens(&stft(&tone(&harmonic(root + 1.0), 2.0), 2048, 512).unwrap(), 440.0).unwrap();
            let rotated = rotate_chroma(&c0, 1);
            for f in 0..c0.ncols() {
                let cos: f64 = (0..12).map(|k| rotated[[k, f]] * c1[[k, f]]).sum();
                assert!(cos > 0.95, "root {root}, frame {f}: cos {cos}");
            }
        }
    }

    #[test]
    fn rotation_is_a_permutation() {
        let c = Array2::from_shape_fn((12, 3), |(r, t)| (r * 3 + t) as f64);
        let r = rotate_chroma(&c, 5);
        assert_eq!(r[[5, 0]], c[[0, 0]]);
        assert_eq!(r[[4, 2]], c[[11, 2]]);
        assert_eq!(rotate_chroma(&r, 7), c);
    }
}
