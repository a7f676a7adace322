use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::ingest::AudioBuffer;
use crate::scalar::Scalar;

/// Magnitude short-time Fourier transform, `[n_bins x n_frames]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram<T> {
    pub magnitudes: Array2<T>,
    pub sample_rate: u32,
    pub fft_size: usize,
    pub hop: usize,
}

impl<T: Scalar> Spectrogram<T> {
    pub fn n_bins(&self) -> usize {
        self.magnitudes.nrows()
    }

    pub fn n_frames(&self) -> usize {
        self.magnitudes.ncols()
    }

    pub fn frame_rate(&self) -> T {
        T::lit(self.sample_rate as f64 / self.hop as f64)
    }

    /// Centre frequency of an FFT bin in Hz.
    pub fn bin_frequency(&self, bin: usize) -> f64 {
        bin as f64 * self.sample_rate as f64 / self.fft_size as f64
    }
}

/// Periodic Hann window.
pub fn hann_window<T: Scalar>(n: usize) -> Vec<T> {
    (0..n)
        .map(|i| {
            let x = std::f64::consts::PI * i as f64 / n as f64;
            T::lit(x.sin().powi(2))
        })
        .collect()
}

/// Reflect-pads `x` by `pad` samples on each side (edge sample not repeated).
/// Falls back to zero padding where the signal is too short to reflect.
fn reflect_pad<T: Scalar>(x: &[T], pad: usize) -> Vec<T> {
    let n = x.len();
    let mut out = Vec::with_capacity(n + 2 * pad);
    for i in (1..=pad).rev() {
        out.push(if i < n { x[i] } else { T::zero() });
    }
    out.extend_from_slice(x);
    for i in 1..=pad {
        out.push(if i < n { x[n - 1 - i] } else { T::zero() });
    }
    out
}

/// Hann-windowed magnitude STFT with centred frames.
///
/// Frame `f` is centred on sample `f * hop`; the signal is reflect-padded by
/// `fft_size / 2` so `n_frames = 1 + len / hop`.
pub fn stft<T: Scalar>(audio: &AudioBuffer<T>, fft_size: usize, hop: usize) -> Result<Spectrogram<T>> {
    if fft_size < 2 || !fft_size.is_power_of_two() {
        return Err(Error::InvalidParams(format!("fft_size {fft_size} is not a power of two")));
    }
    if hop == 0 || hop > fft_size {
        return Err(Error::InvalidParams(format!("hop {hop} must be in 1..=fft_size")));
    }
    if audio.is_empty() {
        return Err(Error::InvalidParams("empty audio".into()));
    }
    let padded = reflect_pad(&audio.samples, fft_size / 2);
    let n_frames = 1 + audio.len() / hop;
    let n_bins = fft_size / 2 + 1;
    let window = hann_window::<T>(fft_size);
    let fft = FftPlanner::<T>::new().plan_fft_forward(fft_size);
    let mut scratch = vec![Complex::default(); fft.get_inplace_scratch_len()];
    let mut buf = vec![Complex::default(); fft_size];
    let mut magnitudes = Array2::<T>::zeros((n_bins, n_frames));

    for f in 0..n_frames {
        let start = f * hop;
        for (i, c) in buf.iter_mut().enumerate() {
            let s = padded.get(start + i).copied().unwrap_or_else(T::zero);
            *c = Complex::new(s * window[i], T::zero());
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (k, c) in buf.iter().take(n_bins).enumerate() {
            magnitudes[[k, f]] = c.norm();
        }
    }
    Ok(Spectrogram {
        magnitudes,
        sample_rate: audio.sample_rate,
        fft_size,
        hop,
    })
}
