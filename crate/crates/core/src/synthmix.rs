//! Procedural tracks and crossfaded mixes with known cue points.
//!
//! A track is a four-on-the-floor pattern: a noise-burst kick on every beat,
//! a soft sustained chord (root, fifth, octave) changing every 8 beats, a
//! short lead note on every beat and a keys note on about half of them, over a
//! quiet sixteenth-note shaker.
//! Pitches and velocities come from the track seed; the varying note density
//! keeps unrelated tracks from lining up beat for beat.
//! Optional intro and outro sections hold a single chord with an unvarying
//! kick and no lead, the way DJ-friendly edits give the mixer a stretch to
//! blend over.
//!
//! Tempo changes re-render the track at the scaled tempo and transposition
//! shifts every pitch, so both ground-truth variables stay independent.

use std::f64::consts::{FRAC_PI_2, PI};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{write_wav, AudioBuffer, ManifestFile, ManifestTrack, WORKING_SAMPLE_RATE};

pub const BEATS_PER_CHORD: usize = 8;
pub const PHRASE: usize = 32;
/// Crossfade lengths drawn by `make_corpus`.
pub const CORPUS_CROSSFADES: [usize; 3] = [16, 32, 64];
pub const CORPUS_TEMPO_FACTORS: (f64, f64) = (0.92, 1.10);
/// Share of corpus tracks played transposed.
pub const CORPUS_TRANSPOSE_PROBABILITY: f64 = 0.1;

const KICK_SECONDS: f64 = 0.04;
const KICK_DECAY: f64 = 0.008;
const KICK_GAIN: f64 = 0.6;
const CHORD_GAIN: f64 = 0.05;
/// Intro and outro chords are louder so the blend region is clearly tonal.
const SECTION_CHORD_GAIN: f64 = 0.15;
const SHAKER_GAIN: f64 = 0.02;
const SHAKER_DECAY: f64 = 0.02;
const SHAKER_GRAIN: usize = 4096;
/// Corpus intros and outros run this many beats past their crossfade.
pub const SECTION_OVERHANG: usize = 2;
const LEAD_GAIN: f64 = 1.0;
const CHORD_BASE_MIDI: i32 = 48;
const LEAD_BASE_MIDI: i32 = 72;
const KEYS_BASE_MIDI: i32 = 60;
/// Chance that a body beat carries a keys note.
const KEYS_PROBABILITY: f64 = 0.5;
const CHORD_PARTIALS: usize = 4;
const LEAD_PARTIALS: usize = 3;
const ATTACK: f64 = 0.005;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTrackSpec {
    pub seed: u64,
    pub tempo_bpm: f64,
    pub n_beats: usize,
    /// Root pitch class (0 = C) of each 8-beat section.
    pub chord_progression: Vec<u8>,
    /// Brightness in `[0, 1]`: partial `h` has amplitude `h^-(2 - timbre)`.
    pub timbre: f64,
    /// Leading beats holding a single chord without lead.
    #[serde(default)]
    pub intro_beats: usize,
    /// Trailing beats holding a single chord without lead.
    #[serde(default)]
    pub outro_beats: usize,
}

impl SynthTrackSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.n_beats == 0 || self.n_beats % PHRASE != 0 {
            return bad(format!("n_beats {} is not a positive multiple of {PHRASE}", self.n_beats));
        }
        if !(self.tempo_bpm.is_finite() && self.tempo_bpm > 0.0) {
            return bad(format!("tempo {} BPM", self.tempo_bpm));
        }
        if self.chord_progression.len() != self.n_beats / BEATS_PER_CHORD {
            return bad(format!(
                "{} chords for {} beats (one per {BEATS_PER_CHORD})",
                self.chord_progression.len(),
                self.n_beats
            ));
        }
        if self.chord_progression.iter().any(|&pc| pc >= 12) {
            return bad("chord roots must be pitch classes 0..12".into());
        }
        if !(0.0..=1.0).contains(&self.timbre) {
            return bad(format!("timbre {} outside [0, 1]", self.timbre));
        }
        if self.intro_beats + self.outro_beats >= self.n_beats {
            return bad("intro and outro leave no body".into());
        }
        Ok(())
    }

    pub fn duration_seconds(&self) -> f64 {
        self.n_beats as f64 * 60.0 / self.tempo_bpm
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthMixSpec {
    pub tracks: Vec<SynthTrackSpec>,
    /// Played track beats `[start_beat, end_beat)` per track.
    pub windows: Vec<(usize, usize)>,
    /// One per transition (`tracks.len() - 1`), in beats of the outgoing track.
    pub crossfade_beats: Vec<usize>,
    pub tempo_factors: Vec<f64>,
    pub transpose_semitones: Vec<i32>,
}

impl SynthMixSpec {
    pub fn validate(&self) -> Result<()> {
        let n = self.tracks.len();
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if n == 0 {
            return bad("mix has no tracks".into());
        }
        if self.windows.len() != n || self.tempo_factors.len() != n || self.transpose_semitones.len() != n {
            return bad("per-track vectors differ in length".into());
        }
        if self.crossfade_beats.len() + 1 != n {
            return bad(format!("{} crossfades for {n} tracks", self.crossfade_beats.len()));
        }
        for (i, t) in self.tracks.iter().enumerate() {
            t.validate()?;
            let (a, b) = self.windows[i];
            if a >= b || b > t.n_beats {
                return bad(format!("window {a}..{b} outside track {i} of {} beats", t.n_beats));
            }
            let f = self.tempo_factors[i];
            if !(f.is_finite() && f > 0.0) {
                return bad(format!("tempo factor {f}"));
            }
            if self.transpose_semitones[i].abs() > 12 {
                return bad(format!("transposition {}", self.transpose_semitones[i]));
            }
        }
        for (i, &fade) in self.crossfade_beats.iter().enumerate() {
            let len = |k: usize| self.windows[k].1 - self.windows[k].0;
            if fade >= len(i).min(len(i + 1)) {
                return bad(format!("crossfade {i} of {fade} beats exceeds an adjacent window"));
            }
        }
        Ok(())
    }

    fn played_period(&self, i: usize) -> f64 {
        60.0 / (self.tracks[i].tempo_bpm * self.tempo_factors[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackTruth {
    pub cue_in_sec: f64,
    pub cue_out_sec: f64,
    pub tempo_factor: f64,
    pub transpose_semitones: i32,
    /// Mix time at which the first played beat sounds.
    pub start_sec: f64,
    pub played_bpm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub tracks: Vec<TrackTruth>,
    /// Planted at the true cue-ins.
    pub annotated_boundaries_sec: Vec<f64>,
    pub duration_sec: f64,
}

/// Per-track synthesis state.
struct Voice<'a> {
    spec: &'a SynthTrackSpec,
    period: f64,
    transpose: i32,
    /// Pitch class and velocity of the lead note on each beat.
    lead: Vec<(u8, f64)>,
    keys: Vec<Option<(u8, f64)>>,
    shaker: Vec<f64>,
    kicks: Vec<Vec<f64>>,
    section_kick: Vec<f64>,
}

fn midi_hz(midi: f64) -> f64 {
    440.0 * 2f64.powf((midi - 69.0) / 12.0)
}

fn noise_burst(seed: u64, sr: u32) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (KICK_SECONDS * sr as f64).round() as usize;
    (0..n)
        .map(|i| {
            let t = i as f64 / sr as f64;
            (rng.random::<f64>() * 2.0 - 1.0) * (-t / KICK_DECAY).exp()
        })
        .collect()
}

impl<'a> Voice<'a> {
    fn new(spec: &'a SynthTrackSpec, tempo_factor: f64, transpose: i32, sr: u32) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut lead = Vec::with_capacity(spec.n_beats);
        let mut prev = 12u8;
        for _ in 0..spec.n_beats {
            let mut pc = rng.random_range(0..12u8);
            while pc == prev {
                pc = rng.random_range(0..12u8);
            }
            lead.push((pc, rng.random_range(0.0..1.0)));
            prev = pc;
        }
        let keys = (0..spec.n_beats)
            .map(|_| {
                let on = rng.random_bool(KEYS_PROBABILITY);
                let note = (rng.random_range(0..12u8), rng.random_range(0.2..1.0));
                on.then_some(note)
            })
            .collect();
        let mut grain = ChaCha8Rng::seed_from_u64(spec.seed ^ 0xBEEF);
        let shaker: Vec<f64> = (0..SHAKER_GRAIN).map(|_| grain.random::<f64>() * 2.0 - 1.0).collect();
        let kicks = (0..spec.n_beats as u64)
            .map(|k| noise_burst(spec.seed ^ (k + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15), sr))
            .collect();
        Self {
            spec,
            period: 60.0 / (spec.tempo_bpm * tempo_factor),
            transpose,
            lead,
            keys,
            shaker,
            kicks,
            section_kick: noise_burst(spec.seed.rotate_left(17) ^ 0xA5A5, sr),
        }
    }

    fn in_intro(&self, k: usize) -> bool {
        k < self.spec.intro_beats
    }

    fn in_outro(&self, k: usize) -> bool {
        k >= self.spec.n_beats - self.spec.outro_beats
    }

    fn chord_root(&self, k: usize) -> u8 {
        let prog = &self.spec.chord_progression;
        if self.in_intro(k) {
            prog[0]
        } else if self.in_outro(k) {
            prog[prog.len() - 1]
        } else {
            prog[k / BEATS_PER_CHORD]
        }
    }

    /// Start (track seconds) of the chord sounding at beat `k`.
    fn chord_onset(&self, k: usize) -> f64 {
        let start_beat = if self.in_intro(k) {
            0
        } else if self.in_outro(k) {
            self.spec.n_beats - self.spec.outro_beats
        } else {
            (k / BEATS_PER_CHORD * BEATS_PER_CHORD).max(self.spec.intro_beats)
        };
        start_beat as f64 * self.period
    }

    /// Adds beat `k` into `out`, whose first sample sits at track time `t0`.
    /// `gain[n]` scales sample `n`.
    fn add_beat(&self, k: usize, out: &mut [f64], t0: f64, gain: &[f64], sr: u32) {
        let dt = 1.0 / sr as f64;
        let beat_start = k as f64 * self.period;
        let nyquist = 0.45 * sr as f64;
        let amp = |h: usize| (h as f64).powf(-(2.0 - self.spec.timbre));

        // shaker: the same noise grain every beat, accented on sixteenths
        let sixteenth = self.period / 4.0;
        for (n, o) in out.iter_mut().enumerate() {
            let tb = t0 + n as f64 * dt - beat_start;
            let idx = (tb * sr as f64).round().max(0.0) as usize % self.shaker.len();
            let accent = (-tb.rem_euclid(sixteenth) / SHAKER_DECAY).exp();
            *o += SHAKER_GAIN * (0.3 + 0.7 * accent) * self.shaker[idx] * gain[n];
        }
        // kick
        let kick = if self.in_intro(k) || self.in_outro(k) {
            &self.section_kick
        } else {
            &self.kicks[k]
        };
        for (n, o) in out.iter_mut().enumerate() {
            let tb = t0 + n as f64 * dt - beat_start;
            let idx = (tb * sr as f64).round();
            if idx >= 0.0 && (idx as usize) < kick.len() && tb < self.period {
                *o += KICK_GAIN * kick[idx as usize] * gain[n];
            }
        }

        // chord: absolute-time oscillators, restarted per beat for accuracy
        let root = CHORD_BASE_MIDI + self.chord_root(k) as i32 + self.transpose;
        let onset = self.chord_onset(k);
        let chord_gain = if self.in_intro(k) || self.in_outro(k) { SECTION_CHORD_GAIN } else { CHORD_GAIN };
        let mut partials = Vec::new();
        for note in [root, root + 7, root + 12] {
            for h in 1..=CHORD_PARTIALS {
                let f = midi_hz(note as f64) * h as f64;
                if f < nyquist {
                    partials.push((f, chord_gain * amp(h)));
                }
            }
        }
        let attack = |t: f64| ((t - onset) / ATTACK).clamp(0.0, 1.0);
        add_partials(out, t0, dt, &partials, |t| attack(t), gain);

        // lead and keys: short decaying notes with per-beat velocity
        if !self.in_intro(k) && !self.in_outro(k) {
            let tau = 0.3 * self.period;
            let env = |t: f64| {
                let tb = t - beat_start;
                if tb < 0.0 {
                    0.0
                } else {
                    (tb / ATTACK).min(1.0) * (-tb / tau).exp()
                }
            };
            let (pc, velocity) = self.lead[k];
            let mut notes = vec![(LEAD_BASE_MIDI + pc as i32, velocity)];
            if let Some((pc, velocity)) = self.keys[k] {
                notes.push((KEYS_BASE_MIDI + pc as i32, velocity));
            }
            for (midi, velocity) in notes {
                let f0 = midi_hz((midi + self.transpose) as f64);
                let partials: Vec<(f64, f64)> = (1..=LEAD_PARTIALS)
                    .map(|h| (f0 * h as f64, LEAD_GAIN * velocity * amp(h)))
                    .filter(|(f, _)| *f < nyquist)
                    .collect();
                add_partials(out, t0, dt, &partials, env, gain);
            }
        }
    }
}

/// Sums sinusoids `(freq, amp)` at absolute track time into `out`, using a
/// rotating phasor seeded from the exact phase at `t0`.
fn add_partials(out: &mut [f64], t0: f64, dt: f64, partials: &[(f64, f64)], env: impl Fn(f64) -> f64, gain: &[f64]) {
    if out.is_empty() {
        return;
    }
    let mut acc = vec![0.0; out.len()];
    for &(f, a) in partials {
        let w = 2.0 * PI * f;
        let (mut s, mut c) = (w * t0).sin_cos();
        let (ds, dc) = (w * dt).sin_cos();
        for x in acc.iter_mut() {
            *x += a * s;
            let s2 = s * dc + c * ds;
            c = c * dc - s * ds;
            s = s2;
        }
    }
    for (n, o) in out.iter_mut().enumerate() {
        let t = t0 + n as f64 * dt;
        *o += acc[n] * env(t) * gain[n];
    }
}

/// Renders beats `[from, to)` of a voice into `mix`, with the first beat at
/// mix time `offset`, scaled by `gain(mix_time)`.
fn render_window(voice: &Voice, from: usize, to: usize, offset: f64, mix: &mut [f64], sr: u32, gain: impl Fn(f64) -> f64) {
    let srf = sr as f64;
    let p = voice.period;
    for k in from..to {
        let start_t = offset + (k - from) as f64 * p;
        let end_t = start_t + p;
        let n0 = ((start_t * srf) - 1e-9).ceil().max(0.0) as usize;
        let n1 = (((end_t * srf) - 1e-9).ceil().max(0.0) as usize).min(mix.len());
        if n0 >= n1 {
            continue;
        }
        let gains: Vec<f64> = (n0..n1).map(|n| gain(n as f64 / srf)).collect();
        // track time of mix sample n0
        let t0 = n0 as f64 / srf - offset + from as f64 * p;
        voice.add_beat(k, &mut mix[n0..n1], t0, &gains, sr);
    }
}

fn peak_normalized(samples: Vec<f64>, sr: u32) -> Result<AudioBuffer<f64>> {
    let mut buf = AudioBuffer::new(samples, sr)?;
    buf.peak_normalize();
    Ok(buf)
}

/// Renders a whole track at its own tempo and key, peak-normalized.
pub fn synth_track(spec: &SynthTrackSpec) -> Result<AudioBuffer<f64>> {
    synth_track_at(spec, 1.0, 0, WORKING_SAMPLE_RATE)
}

pub fn synth_track_at(spec: &SynthTrackSpec, tempo_factor: f64, transpose: i32, sr: u32) -> Result<AudioBuffer<f64>> {
    spec.validate()?;
    let voice = Voice::new(spec, tempo_factor, transpose, sr);
    let n = (spec.n_beats as f64 * voice.period * sr as f64).round() as usize;
    let mut out = vec![0.0; n];
    render_window(&voice, 0, spec.n_beats, 0.0, &mut out, sr, |_| 1.0);
    peak_normalized(out, sr)
}

/// Equal-power (quarter-sine) fade-in gain at position `x` in `[0, 1]`.
pub fn fade_in_gain(x: f64) -> f64 {
    (FRAC_PI_2 * x.clamp(0.0, 1.0)).sin()
}

pub fn fade_out_gain(x: f64) -> f64 {
    (FRAC_PI_2 * x.clamp(0.0, 1.0)).cos()
}

/// Mix timeline: `(start_sec, duration_sec, fade_in_sec, fade_out_sec)` per track.
fn layout(spec: &SynthMixSpec) -> Vec<(f64, f64, f64, f64)> {
    let n = spec.tracks.len();
    let mut out = Vec::with_capacity(n);
    let mut start = 0.0;
    for i in 0..n {
        let (a, b) = spec.windows[i];
        let dur = (b - a) as f64 * spec.played_period(i);
        let fade_in = if i == 0 { 0.0 } else { out.last().map_or(0.0, |l: &(f64, f64, f64, f64)| l.3) };
        let fade_out = if i + 1 < n {
            spec.crossfade_beats[i] as f64 * spec.played_period(i)
        } else {
            0.0
        };
        out.push((start, dur, fade_in, fade_out));
        start += dur - fade_out;
    }
    out
}

/// Renders the mix and its ground truth. Cue-out of a track is the start of
/// its fade-out, cue-in the end of its fade-in.
pub fn render_mix(spec: &SynthMixSpec) -> Result<(AudioBuffer<f64>, GroundTruth)> {
    render_mix_at(spec, WORKING_SAMPLE_RATE)
}

pub fn render_mix_at(spec: &SynthMixSpec, sr: u32) -> Result<(AudioBuffer<f64>, GroundTruth)> {
    spec.validate()?;
    let lay = layout(spec);
    let (last_start, last_dur, _, _) = *lay.last().expect("validated non-empty");
    let duration_sec = last_start + last_dur;
    let mut mix = vec![0.0; (duration_sec * sr as f64).round() as usize];
    let mut tracks = Vec::with_capacity(lay.len());
    for (i, &(start, dur, fade_in, fade_out)) in lay.iter().enumerate() {
        let voice = Voice::new(&spec.tracks[i], spec.tempo_factors[i], spec.transpose_semitones[i], sr);
        let end = start + dur;
        let gain = |t: f64| {
            if t < start + fade_in {
                fade_in_gain((t - start) / fade_in)
            } else if t >= end - fade_out {
                fade_out_gain((t - (end - fade_out)) / fade_out)
            } else {
                1.0
            }
        };
        let (a, b) = spec.windows[i];
        render_window(&voice, a, b, start, &mut mix, sr, gain);
        tracks.push(TrackTruth {
            cue_in_sec: start + fade_in,
            cue_out_sec: end - fade_out,
            tempo_factor: spec.tempo_factors[i],
            transpose_semitones: spec.transpose_semitones[i],
            start_sec: start,
            played_bpm: spec.tracks[i].tempo_bpm * spec.tempo_factors[i],
        });
    }
    let annotated_boundaries_sec = tracks.iter().map(|t| t.cue_in_sec).collect();
    Ok((
        peak_normalized(mix, sr)?,
        GroundTruth {
            tracks,
            annotated_boundaries_sec,
            duration_sec,
        },
    ))
}

/// One generated mix with its decoys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusMix {
    pub mix_id: String,
    pub mix_bpm: f64,
    pub spec: SynthMixSpec,
    pub track_ids: Vec<String>,
    /// Tracks sharing the mix tempo that are never played in it.
    pub decoys: Vec<SynthTrackSpec>,
    pub decoy_ids: Vec<String>,
}

fn random_track(rng: &mut ChaCha8Rng, tempo_bpm: f64, intro: usize, outro: usize) -> SynthTrackSpec {
    let edges = intro + outro;
    let body = (2 * edges).max(4 * PHRASE);
    let n_beats = (edges + body).div_ceil(PHRASE) * PHRASE;
    let chord_progression = (0..n_beats / BEATS_PER_CHORD).map(|_| rng.random_range(0..12u8)).collect();
    SynthTrackSpec {
        seed: rng.random(),
        tempo_bpm,
        n_beats,
        chord_progression,
        timbre: rng.random_range(0.2..0.8),
        intro_beats: intro,
        outro_beats: outro,
    }
}

/// Deterministic pseudo-random corpus of `n_mixes` mixes.
///
/// Each mix holds 3-6 tracks played at one mix tempo in 120-130 BPM; track
/// tempos are the mix tempo divided by factors in `[0.92, 1.10]`. About one
/// track in ten is transposed by ±1 or ±2 semitones. Crossfades are 16, 32
/// or 64 beats, and every track's intro and outro cover its fades plus
/// [`SECTION_OVERHANG`] beats. Each mix gets one or two decoys.
pub fn make_corpus(n_mixes: usize, seed: u64) -> Result<Vec<CorpusMix>> {
    make_corpus_with(n_mixes, seed, &CORPUS_CROSSFADES)
}

/// `make_corpus` drawing crossfade lengths from `crossfades`.
pub fn make_corpus_with(n_mixes: usize, seed: u64, crossfades: &[usize]) -> Result<Vec<CorpusMix>> {
    if n_mixes == 0 {
        return Err(Error::InvalidSpec("corpus needs at least one mix".into()));
    }
    if crossfades.is_empty() || crossfades.iter().any(|&c| c == 0 || c % 16 != 0) {
        return Err(Error::InvalidSpec("crossfades must be positive multiples of 16".into()));
    }
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    (0..n_mixes)
        .map(|m| {
            let mut rng = ChaCha8Rng::seed_from_u64(master.random());
            let mix_id = format!("mix{m:03}");
            let mix_bpm = (rng.random_range(120.0..130.0f64) * 100.0).round() / 100.0;
            let n_tracks = rng.random_range(3..=6usize);
            let fades: Vec<usize> = (0..n_tracks - 1)
                .map(|_| crossfades[rng.random_range(0..crossfades.len())])
                .collect();
            let mut tracks = Vec::with_capacity(n_tracks);
            let mut factors = Vec::with_capacity(n_tracks);
            let mut transpose = Vec::with_capacity(n_tracks);
            for i in 0..n_tracks {
                let factor = rng.random_range(CORPUS_TEMPO_FACTORS.0..=CORPUS_TEMPO_FACTORS.1);
                let intro = if i == 0 { 0 } else { fades[i - 1] + SECTION_OVERHANG };
                let outro = fades.get(i).map_or(0, |f| f + SECTION_OVERHANG);
                tracks.push(random_track(&mut rng, mix_bpm / factor, intro, outro));
                factors.push(factor);
                let t = if rng.random_bool(CORPUS_TRANSPOSE_PROBABILITY) {
                    [1, -1, 2, -2][rng.random_range(0..4)]
                } else {
                    0
                };
                transpose.push(t);
            }
            let windows = tracks.iter().map(|t| (0, t.n_beats)).collect();
            let n_decoys = rng.random_range(1..=2usize);
            let decoys = (0..n_decoys)
                .map(|_| {
                    let factor = rng.random_range(CORPUS_TEMPO_FACTORS.0..=CORPUS_TEMPO_FACTORS.1);
                    let intro = crossfades[rng.random_range(0..crossfades.len())] + SECTION_OVERHANG;
                    let outro = crossfades[rng.random_range(0..crossfades.len())] + SECTION_OVERHANG;
                    random_track(&mut rng, mix_bpm / factor, intro, outro)
                })
                .collect();
            let spec = SynthMixSpec {
                tracks,
                windows,
                crossfade_beats: fades,
                tempo_factors: factors,
                transpose_semitones: transpose,
            };
            spec.validate()?;
            Ok(CorpusMix {
                track_ids: (0..n_tracks).map(|i| format!("{mix_id}-t{i}")).collect(),
                decoy_ids: (0..n_decoys).map(|i| format!("{mix_id}-d{i}")).collect(),
                mix_id,
                mix_bpm,
                spec,
                decoys,
            })
        })
        .collect()
}

/// Ground-truth record for one manifest entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarTrack {
    pub track_id: String,
    pub decoy: bool,
    pub cue_in_sec: Option<f64>,
    pub cue_out_sec: Option<f64>,
    pub tempo_factor: f64,
    pub transpose_semitones: i32,
    pub track_bpm: f64,
    pub spec: SynthTrackSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarTruth {
    pub mix_bpm: f64,
    pub duration_sec: f64,
    pub crossfade_beats: Vec<usize>,
    pub annotated_boundaries_sec: Vec<f64>,
    pub tracks: Vec<SidecarTrack>,
}

/// Manifest with a `truth` section, as written by `write_corpus`.
#[derive(Debug, Serialize, Deserialize)]
pub struct Sidecar {
    #[serde(flatten)]
    pub(crate) manifest: ManifestFile,
    pub truth: SidecarTruth,
}

impl Sidecar {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::SchemaViolation(e.to_string()))
    }
}

/// Renders a corpus to `dir/<mix_id>/` (mix.wav, tracks/*.wav, manifest.json)
/// and returns the manifest paths in mix order.
///
/// Decoys are listed in the manifest like ordinary entries, with boundaries
/// halfway between their neighbours'.
pub fn write_corpus(dir: &Path, corpus: &[CorpusMix]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    corpus
        .par_iter()
        .map(|cm| write_mix(dir, cm))
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

fn write_mix(dir: &Path, cm: &CorpusMix) -> Result<PathBuf> {
    let mix_dir = dir.join(&cm.mix_id);
    let track_dir = mix_dir.join("tracks");
    std::fs::create_dir_all(&track_dir)?;
    let (mix, truth) = render_mix(&cm.spec)?;
    write_wav(&mix_dir.join("mix.wav"), &mix)?;

    let mut entries: Vec<(ManifestTrack, SidecarTrack)> = Vec::new();
    for (i, spec) in cm.spec.tracks.iter().enumerate() {
        let id = &cm.track_ids[i];
        write_wav(&track_dir.join(format!("{id}.wav")), &synth_track(spec)?)?;
        let t = &truth.tracks[i];
        entries.push((
            ManifestTrack {
                track_id: id.clone(),
                audio: Some(format!("tracks/{id}.wav")),
                boundary_sec: t.cue_in_sec,
            },
            SidecarTrack {
                track_id: id.clone(),
                decoy: false,
                cue_in_sec: Some(t.cue_in_sec),
                cue_out_sec: Some(t.cue_out_sec),
                tempo_factor: t.tempo_factor,
                transpose_semitones: t.transpose_semitones,
                track_bpm: spec.tempo_bpm,
                spec: spec.clone(),
            },
        ));
    }
    // decoy k goes after played track k (wrapping), halfway to the next boundary
    for (k, spec) in cm.decoys.iter().enumerate() {
        let id = &cm.decoy_ids[k];
        write_wav(&track_dir.join(format!("{id}.wav")), &synth_track(spec)?)?;
        let pos = entries
            .iter()
            .position(|(m, _)| m.track_id == cm.track_ids[k % cm.track_ids.len()])
            .expect("played track present");
        let here = entries[pos].0.boundary_sec;
        let next = entries.get(pos + 1).map_or(truth.duration_sec, |e| e.0.boundary_sec);
        entries.insert(
            pos + 1,
            (
                ManifestTrack {
                    track_id: id.clone(),
                    audio: Some(format!("tracks/{id}.wav")),
                    boundary_sec: 0.5 * (here + next),
                },
                SidecarTrack {
                    track_id: id.clone(),
                    decoy: true,
                    cue_in_sec: None,
                    cue_out_sec: None,
                    tempo_factor: 1.0,
                    transpose_semitones: 0,
                    track_bpm: spec.tempo_bpm,
                    spec: spec.clone(),
                },
            ),
        );
    }
    let (manifest_tracks, truth_tracks): (Vec<_>, Vec<_>) = entries.into_iter().unzip();
    let sidecar = Sidecar {
        manifest: ManifestFile {
            mix_id: cm.mix_id.clone(),
            mix_audio: "mix.wav".into(),
            genre: Some("synthetic".into()),
            tracks: manifest_tracks,
        },
        truth: SidecarTruth {
            mix_bpm: cm.mix_bpm,
            duration_sec: truth.duration_sec,
            crossfade_beats: cm.spec.crossfade_beats.clone(),
            annotated_boundaries_sec: truth.annotated_boundaries_sec,
            tracks: truth_tracks,
        },
    };
    let path = mix_dir.join("manifest.json");
    let value = serde_json::to_value(&sidecar)?;
    std::fs::write(&path, serde_json::to_string_pretty(&value)? + "\n")?;
    Ok(path)
}
