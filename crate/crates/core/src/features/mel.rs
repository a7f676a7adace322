//! Mel filterbank and MFCC.
//!
//! Slaney-style mel scale (linear below 1 kHz, logarithmic above) with
//! area-normalized triangular filters, log energies in dB, orthonormal DCT-II.

use ndarray::Array2;

use super::stft::Spectrogram;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Power floor applied before taking logarithms.
pub const LOG_FLOOR: f64 = 1e-10;

const F_SP: f64 = 200.0 / 3.0;
const MIN_LOG_HZ: f64 = 1000.0;
const MIN_LOG_MEL: f64 = MIN_LOG_HZ / F_SP;

fn log_step() -> f64 {
    6.4f64.ln() / 27.0
}

pub fn hz_to_mel(hz: f64) -> f64 {
    if hz >= MIN_LOG_HZ {
        MIN_LOG_MEL + (hz / MIN_LOG_HZ).ln() / log_step()
    } else {
        hz / F_SP
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    if mel >= MIN_LOG_MEL {
        MIN_LOG_HZ * (log_step() * (mel - MIN_LOG_MEL)).exp()
    } else {
        F_SP * mel
    }
}

/// Triangular mel filters `[n_mels x (fft_size/2 + 1)]` spanning 0 Hz to Nyquist.
pub fn mel_filterbank<T: Scalar>(sample_rate: u32, fft_size: usize, n_mels: usize) -> Array2<T> {
    let n_bins = fft_size / 2 + 1;
    let nyquist = sample_rate as f64 / 2.0;
    let max_mel = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(max_mel * i as f64 / (n_mels + 1) as f64))
        .collect();
    let mut fb = Array2::<T>::zeros((n_mels, n_bins));
    for m in 0..n_mels {
        let (lo, centre, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let norm = 2.0 / (hi - lo);
        for k in 0..n_bins {
            let f = k as f64 * sample_rate as f64 / fft_size as f64;
            let rising = (f - lo) / (centre - lo);
            let falling = (hi - f) / (hi - centre);
            let w = rising.min(falling).max(0.0);
            if w > 0.0 {
                fb[[m, k]] = T::lit(w * norm);
            }
        }
    }
    fb
}

/// Mel band power per frame, `[n_mels x n_frames]`.
pub fn mel_power<T: Scalar>(spec: &Spectrogram<T>, filterbank: &Array2<T>) -> Array2<T> {
    let power = spec.magnitudes.mapv(|m| m * m);
    filterbank.dot(&power)
}

/// `10 log10(max(x, LOG_FLOOR))`.
pub fn power_to_db<T: Scalar>(x: T) -> T {
    T::lit(10.0) * x.max(T::lit(LOG_FLOOR)).log10()
}

/// Orthonormal DCT-II basis, `[n_out x n_in]`.
pub fn dct_ii_basis<T: Scalar>(n_in: usize, n_out: usize) -> Array2<T> {
    let n = n_in as f64;
    Array2::from_shape_fn((n_out, n_in), |(k, i)| {
        let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
        T::lit(scale * (std::f64::consts::PI * k as f64 * (2.0 * i as f64 + 1.0) / (2.0 * n)).cos())
    })
}

/// Cepstral coefficients from mel band energies (`[n_mels x n_frames]`).
pub fn mfcc_from_mel<T: Scalar>(mel_energy: &Array2<T>, n_coeffs: usize) -> Result<Array2<T>> {
    let n_mels = mel_energy.nrows();
    if n_coeffs == 0 || n_coeffs > n_mels {
        return Err(Error::InvalidParams(format!(
            "n_coeffs {n_coeffs} must be in 1..={n_mels}"
        )));
    }
    let log_mel = mel_energy.mapv(power_to_db);
    Ok(dct_ii_basis::<T>(n_mels, n_coeffs).dot(&log_mel))
}

/// MFCC matrix `[n_coeffs x n_frames]`.
pub fn mfcc<T: Scalar>(spec: &Spectrogram<T>, n_mels: usize, n_coeffs: usize) -> Result<Array2<T>> {
    if n_mels == 0 || n_mels > spec.n_bins() {
        return Err(Error::InvalidParams(format!(
            "n_mels {n_mels} must be in 1..={}",
            spec.n_bins()
        )));
    }
    if n_coeffs == 0 || n_coeffs > n_mels {
        return Err(Error::InvalidParams(format!(
            "n_coeffs {n_coeffs} must be in 1..={n_mels}"
        )));
    }
    let fb = mel_filterbank::<T>(spec.sample_rate, spec.fft_size, n_mels);
    mfcc_from_mel(&mel_power(spec, &fb), n_coeffs)
}
