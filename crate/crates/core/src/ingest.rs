//! Audio decoding and mix manifests.
//!
//! Audio is decoded from WAV (16-bit PCM or 32-bit float, mono or stereo),
//! downmixed by channel mean, resampled to the working rate with a
//! band-limited windowed-sinc kernel and peak-normalized.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Working sample rate of the analysis pipeline.
pub const WORKING_SAMPLE_RATE: u32 = 22050;

/// Zero crossings of the sinc kernel on each side of the centre tap.
const SINC_ZERO_CROSSINGS: usize = 32;
/// Passband edge as a fraction of the output Nyquist frequency.
const SINC_ROLLOFF: f64 = 0.94;

/// Decoded mono sample stream.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer<T> {
    pub samples: Vec<T>,
    pub sample_rate: u32,
}

impl<T: Scalar> AudioBuffer<T> {
    pub fn new(samples: Vec<T>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidParams("sample rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidParams("non-finite sample".into()));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> T {
        self.samples
            .iter()
            .fold(T::zero(), |acc, s| acc.max(s.abs()))
    }

    /// Scales the buffer so that `max |sample| == 1`. Silent buffers are left untouched.
    pub fn peak_normalize(&mut self) {
        let peak = self.peak();
        if peak > T::zero() {
            let gain = T::one() / peak;
            for s in &mut self.samples {
                *s = (*s * gain).max(-T::one()).min(T::one());
            }
        }
    }

    /// Converts the sample type.
    pub fn cast<U: Scalar>(&self) -> AudioBuffer<U> {
        AudioBuffer {
            samples: self.samples.iter().map(|s| U::lit(s.as_f64())).collect(),
            sample_rate: self.sample_rate,
        }
    }
}

/// Decodes a WAV file into a mono, peak-normalized buffer at `target_rate`.
pub fn decode_audio<T: Scalar>(path: &Path, target_rate: u32) -> Result<AudioBuffer<T>> {
    if target_rate == 0 {
        return Err(Error::InvalidParams("target rate must be positive".into()));
    }
    let mut reader = hound::WavReader::open(path).map_err(|e| map_hound_error(path, e))?;
    let spec = reader.spec();
    if spec.channels == 0 || spec.channels > 2 {
        return Err(Error::UnsupportedFormat(format!(
            "{} channels (only mono and stereo are supported)",
            spec.channels
        )));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / i16::MAX as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_hound_error(path, e))?,
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_hound_error(path, e))?,
        (format, bits) => {
            return Err(Error::UnsupportedFormat(format!(
                "{bits}-bit {format:?} PCM (expected 16-bit integer or 32-bit float)"
            )))
        }
    };
    if interleaved.is_empty() {
        return Err(Error::EmptyAudio);
    }
    if interleaved.iter().any(|s| !s.is_finite()) {
        return Err(Error::CorruptFile {
            path: path.to_path_buf(),
            reason: "non-finite sample".into(),
        });
    }
    let channels = spec.channels as usize;
    let mono: Vec<f64> = interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    let resampled = resample(&mono, spec.sample_rate, target_rate)?;
    let mut buffer = AudioBuffer {
        samples: resampled.into_iter().map(T::lit).collect(),
        sample_rate: target_rate,
    };
    buffer.peak_normalize();
    Ok(buffer)
}

fn map_hound_error(path: &Path, err: hound::Error) -> Error {
    match err {
        hound::Error::IoError(e)
            if matches!(
                e.kind(),
                std::io::ErrorKind::NotFound | std::io::ErrorKind::PermissionDenied
            ) =>
        {
            Error::Io(e)
        }
        hound::Error::IoError(e) => Error::CorruptFile {
            path: path.to_path_buf(),
            reason: e.to_string(),
        },
        hound::Error::Unsupported => Error::UnsupportedFormat("unsupported WAV encoding".into()),
        other => Error::CorruptFile {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    }
}

/// Writes a mono buffer as 16-bit PCM WAV.
///
/// Samples are scaled by `i16::MAX`, so a peak-normalized buffer decodes back
/// within half a quantization step.
pub fn write_wav<T: Scalar>(path: &Path, audio: &AudioBuffer<T>) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: audio.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let to_io = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(other.to_string())),
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(to_io)?;
    for s in &audio.samples {
        let v = (s.as_f64().clamp(-1.0, 1.0) * i16::MAX as f64).round() as i16;
        writer.write_sample(v).map_err(to_io)?;
    }
    writer.finalize().map_err(to_io)
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Blackman window over `[-half, half]`.
fn blackman(x: f64, half: f64) -> f64 {
    if x.abs() >= half {
        return 0.0;
    }
    let u = PI * x / half;
    0.42 + 0.5 * u.cos() + 0.08 * (2.0 * u).cos()
}

/// Band-limited resampling with a Blackman-windowed sinc kernel.
///
/// The kernel spans `SINC_ZERO_CROSSINGS` zero crossings on each side, which is
/// at least 64 taps at any ratio. Output length is `round(len * to / from)`.
pub fn resample(input: &[f64], from: u32, to: u32) -> Result<Vec<f64>> {
    if from == 0 || to == 0 {
        return Err(Error::InvalidParams("sample rates must be positive".into()));
    }
    if from == to || input.is_empty() {
        return Ok(input.to_vec());
    }
    let (from64, to64) = (from as u64, to as u64);
    let out_len = ((input.len() as u64 * to64 + from64 / 2) / from64) as usize;
    let cutoff = (to as f64 / from as f64).min(1.0) * SINC_ROLLOFF;
    let half = SINC_ZERO_CROSSINGS as f64 / cutoff;
    let taps = 2 * half.ceil() as usize + 1;

    // Output sample n sits at source position n * from / to. The fractional part
    // cycles through `phases` distinct values, so kernels are tabulated per phase.
    let g = gcd(from64, to64);
    let phases = (to64 / g) as usize;
    let step_num = from64 / g;
    let use_table = phases * taps <= 4_000_000;
    let kernel_at = |frac: f64, k: isize| -> f64 {
        let x = frac - k as f64;
        cutoff * sinc(cutoff * x) * blackman(x, half)
    };
    let lo = -(half.ceil() as isize);
    let hi = half.ceil() as isize;
    let table: Vec<Vec<f64>> = if use_table {
        (0..phases)
            .map(|p| {
                let frac = p as f64 / phases as f64;
                (lo..=hi).map(|k| kernel_at(frac, k)).collect()
            })
            .collect()
    } else {
        Vec::new()
    };

    let mut out = Vec::with_capacity(out_len);
    for n in 0..out_len {
        let num = n as u64 * step_num;
        let base = (num / phases as u64) as isize;
        let phase = (num % phases as u64) as usize;
        let frac = phase as f64 / phases as f64;
        let mut acc = 0.0;
        for (t, k) in (lo..=hi).enumerate() {
            // kernel argument is (base + frac) - (base + k)
            let idx = base + k;
            if idx < 0 || idx as usize >= input.len() {
                continue;
            }
            let w = if use_table { table[phase][t] } else { kernel_at(frac, k) };
            acc += input[idx as usize] * w;
        }
        out.push(acc);
    }
    Ok(out)
}

/// One annotated track in a mix tracklist.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackEntry {
    pub track_id: String,
    /// Absent when the original track audio is unavailable.
    pub track_audio_path: Option<PathBuf>,
    /// Human-annotated start boundary in the mix, in seconds.
    pub boundary_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixManifest {
    pub mix_id: String,
    pub mix_audio_path: PathBuf,
    pub genre: Option<String>,
    pub entries: Vec<TrackEntry>,
}

impl MixManifest {
    /// Checks the ordering and non-emptiness invariants.
    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::SchemaViolation("manifest has no tracks".into()));
        }
        for (index, entry) in self.entries.iter().enumerate() {
            if !entry.boundary_seconds.is_finite() || entry.boundary_seconds < 0.0 {
                return Err(Error::SchemaViolation(format!(
                    "track {} has invalid boundary {}",
                    entry.track_id, entry.boundary_seconds
                )));
            }
            if index > 0 && entry.boundary_seconds <= self.entries[index - 1].boundary_seconds {
                return Err(Error::NonMonotonicBoundaries {
                    index,
                    track_id: entry.track_id.clone(),
                });
            }
        }
        Ok(())
    }

    /// Annotated boundaries in entry order.
    pub fn boundaries(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.boundary_seconds).collect()
    }
}

/// On-disk JSON layout. Unknown fields (e.g. ground-truth sidecar data) are ignored.
#[derive(Debug, Deserialize, Serialize)]
pub(crate) struct ManifestFile {
    pub mix_id: String,
    pub mix_audio: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub genre: Option<String>,
    pub tracks: Vec<ManifestTrack>,
}

#[derive(Debug, Deserialize, Serialize)]
pub(crate) struct ManifestTrack {
    pub track_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio: Option<String>,
    pub boundary_sec: f64,
}

/// Parses a manifest JSON file. Relative audio paths resolve against the
/// manifest's directory.
pub fn parse_manifest(path: &Path) -> Result<MixManifest> {
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_manifest_str(&text, base)
}

pub fn parse_manifest_str(text: &str, base_dir: &Path) -> Result<MixManifest> {
    let file: ManifestFile =
        serde_json::from_str(text).map_err(|e| Error::SchemaViolation(e.to_string()))?;
    let resolve = |p: &str| {
        let p = PathBuf::from(p);
        if p.is_absolute() {
            p
        } else {
            base_dir.join(p)
        }
    };
    let manifest = MixManifest {
        mix_id: file.mix_id,
        mix_audio_path: resolve(&file.mix_audio),
        genre: file.genre,
        entries: file
            .tracks
            .into_iter()
            .map(|t| TrackEntry {
                track_id: t.track_id,
                track_audio_path: t.audio.as_deref().map(resolve),
                boundary_seconds: t.boundary_sec,
            })
            .collect(),
    };
    manifest.validate()?;
    Ok(manifest)
}
