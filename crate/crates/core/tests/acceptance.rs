//! Acceptance criteria. Each test prints one `PASS`/`FAIL` line and then
//! asserts the criterion.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use djmix::align::{align_key_invariant, subsequence_dtw, FeatureMode};
use djmix::features::chroma::chroma_cens;
use djmix::features::mel::mfcc;
use djmix::features::{estimate_tempo, extract_features, onset_envelope, stft, FeatureConfig, Spectrogram};
use djmix::pipeline::{self, MixOutcome, RunConfig, TrackStatus};
use djmix::stats::{cue_agreement, transition_length_histogram, transition_lengths};
use djmix::synthmix::{
    make_corpus, make_corpus_with, render_mix, synth_track, write_corpus, CorpusMix, Sidecar, SynthMixSpec,
    SynthTrackSpec,
};
use djmix::{AudioBuffer, CuePoints};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CORPUS_SEED: u64 = 1;
const CORPUS_MIXES: usize = 10;

fn report(id: u32, name: &str, pass: bool, detail: String) {
    println!("acceptance {id} {name}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
}

struct Corpus {
    _dir: tempfile::TempDir,
    outcomes: Vec<MixOutcome>,
    truth: Vec<Sidecar>,
    elapsed: Duration,
}

fn run_written(dir: &Path, corpus: &[CorpusMix], config: &RunConfig) -> (Vec<MixOutcome>, Vec<Sidecar>) {
    let manifests = write_corpus(dir, corpus).unwrap();
    let outcomes = pipeline::run_corpus(&manifests, config).unwrap();
    let truth = manifests.iter().map(|p| Sidecar::read(p).unwrap()).collect();
    (outcomes, truth)
}

/// The 10-mix corpus shared by the closure, filtering and segmentation checks.
fn main_corpus() -> &'static Corpus {
    static CORPUS: OnceLock<Corpus> = OnceLock::new();
    CORPUS.get_or_init(|| {
        let start = Instant::now();
        let dir = tempfile::tempdir().unwrap();
        let corpus = make_corpus(CORPUS_MIXES, CORPUS_SEED).unwrap();
        let (outcomes, truth) = run_written(dir.path(), &corpus, &RunConfig::default());
        Corpus {
            _dir: dir,
            outcomes,
            truth,
            elapsed: start.elapsed(),
        }
    })
}

// 1 -----------------------------------------------------------------------

/// Minimum over every admissible path, enumerated recursively.
fn exhaustive(c: &Array2<f64>) -> f64 {
    fn walk(c: &Array2<f64>, i: usize, j: usize, acc: f64, best: &mut f64) {
        let (n, m) = c.dim();
        if i == n - 1 && acc < *best {
            *best = acc;
        }
        if i + 1 < n && j + 1 < m {
            walk(c, i + 1, j + 1, acc + c[[i + 1, j + 1]], best);
        }
        if i + 1 < n {
            walk(c, i + 1, j, acc + c[[i + 1, j]], best);
        }
        if j + 1 < m {
            walk(c, i, j + 1, acc + c[[i, j + 1]], best);
        }
    }
    let mut best = f64::INFINITY;
    for j in 0..c.ncols() {
        walk(c, 0, j, c[[0, j]], &mut best);
    }
    best
}

#[test]
fn criterion_1_dtw_optimality() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let mut exact = 0;
    for k in 0..500 {
        let n = rng.random_range(2..=7);
        let m = rng.random_range(1..=10);
        // every other matrix uses coarse values so ties are common
        let c = Array2::from_shape_fn((n, m), |_| {
            if k % 2 == 0 {
                rng.random::<f64>()
            } else {
                rng.random_range(0..4) as f64
            }
        });
        let (_, cost) = subsequence_dtw(&c).unwrap();
        exact += (cost == exhaustive(&c)) as usize;
    }
    let elapsed = start.elapsed();
    let pass = exact == 500 && elapsed < Duration::from_secs(30);
    report(1, "DTW optimality", pass, format!("{exact}/500 exact, {:.1} s", elapsed.as_secs_f64()));
    assert!(pass);
}

// 2 -----------------------------------------------------------------------

fn random_spec(rng: &mut ChaCha8Rng, tempo_bpm: f64, n_beats: usize, intro: usize, outro: usize) -> SynthTrackSpec {
    SynthTrackSpec {
        seed: rng.random(),
        tempo_bpm,
        n_beats,
        chord_progression: (0..n_beats / 8).map(|_| rng.random_range(0..12)).collect(),
        timbre: rng.random_range(0.2..0.8),
        intro_beats: intro,
        outro_beats: outro,
    }
}

#[test]
fn criterion_2_transposition_recovery() {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let config = FeatureConfig::default();
    let mut correct = 0;
    let mut misses = Vec::new();
    for _ in 0..50 {
        let semitones = rng.random_range(-5..=6);
        let bpm = rng.random_range(118.0..132.0);
        let filler = random_spec(&mut rng, bpm, 64, 0, 18);
        let target = random_spec(&mut rng, bpm, 96, 18, 0);
        let spec = SynthMixSpec {
            tracks: vec![filler, target.clone()],
            windows: vec![(0, 64), (0, 96)],
            crossfade_beats: vec![16],
            tempo_factors: vec![1.0, 1.0],
            transpose_semitones: vec![0, semitones],
        };
        let (mix, _) = render_mix(&spec).unwrap();
        let track = synth_track(&target).unwrap();
        let result = align_key_invariant(
            &extract_features(&track, &config).unwrap(),
            &extract_features(&mix, &config).unwrap(),
            FeatureMode::ChromaMfcc,
        )
        .unwrap();
        if result.signed_transposition() == semitones {
            correct += 1;
        } else {
            misses.push((semitones, result.signed_transposition()));
        }
    }
    let pass = correct == 50;
    report(2, "transposition recovery", pass, format!("{correct}/50 exact, misses {misses:?}"));
    assert!(pass);
}

// 3 -----------------------------------------------------------------------

struct TrackCheck {
    id: String,
    cue_in_err: Option<f64>,
    cue_out_err: Option<f64>,
    tempo_err_pp: Option<f64>,
    key_ok: bool,
}

fn track_checks(c: &Corpus) -> Vec<TrackCheck> {
    let mut out = Vec::new();
    for (m, truth) in c.outcomes.iter().zip(&c.truth) {
        let grid = m.mix_grid.as_ref().expect("mix analysed");
        for (t, tt) in m.tracks.iter().zip(&truth.truth.tracks) {
            assert_eq!(t.track_id, tt.track_id);
            if tt.decoy {
                continue;
            }
            let beat_err = |est: usize, true_sec: f64| est as f64 - grid.fractional_beat(true_sec).unwrap();
            let cues = t.cues.as_ref().filter(|_| t.status == TrackStatus::Matched);
            out.push(TrackCheck {
                id: t.track_id.clone(),
                cue_in_err: cues.map(|c| beat_err(c.cue_in_mix_beat, tt.cue_in_sec.unwrap())),
                cue_out_err: cues.map(|c| beat_err(c.cue_out_mix_beat, tt.cue_out_sec.unwrap())),
                tempo_err_pp: t.tempo_adjustment_pct.map(|p| p - (tt.tempo_factor - 1.0) * 100.0),
                key_ok: t.transposition_semitones == Some(tt.transpose_semitones),
            });
        }
    }
    out
}

#[test]
fn criterion_3_pipeline_closure() {
    let c = main_corpus();
    let checks = track_checks(c);
    let n = checks.len();
    let within = |e: Option<f64>| e.is_some_and(|e| e.abs() <= 2.0);
    let cues_ok = checks.iter().filter(|t| within(t.cue_in_err) && within(t.cue_out_err)).count();
    let tempo_ok = checks.iter().filter(|t| t.tempo_err_pp.is_some_and(|e| e.abs() <= 1.0)).count();
    let keys_ok = checks.iter().filter(|t| t.key_ok).count();
    let worst: Vec<String> = checks
        .iter()
        .filter(|t| !(within(t.cue_in_err) && within(t.cue_out_err)))
        .map(|t| format!("{} in {:?} out {:?}", t.id, t.cue_in_err.map(|e| e.round()), t.cue_out_err.map(|e| e.round())))
        .collect();
    let pass = cues_ok as f64 >= 0.95 * n as f64
        && tempo_ok as f64 >= 0.95 * n as f64
        && keys_ok == n
        && c.elapsed < Duration::from_secs(600);
    report(
        3,
        "pipeline closure",
        pass,
        format!(
            "{n} tracks; cues within 2 beats {cues_ok}/{n}; tempo within 1 pp {tempo_ok}/{n}; transposition {keys_ok}/{n}; {:.0} s; outside: {worst:?}",
            c.elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

// 4 -----------------------------------------------------------------------

#[test]
fn criterion_4_match_rate_filtering() {
    let c = main_corpus();
    let (mut decoys, mut trues) = (Vec::new(), Vec::new());
    for (m, truth) in c.outcomes.iter().zip(&c.truth) {
        for (t, tt) in m.tracks.iter().zip(&truth.truth.tracks) {
            let rate = t.match_rate.expect("aligned");
            if tt.decoy {
                decoys.push((t.track_id.clone(), rate));
            } else {
                trues.push(rate);
            }
        }
    }
    let max_decoy = decoys.iter().map(|d| d.1).fold(0.0, f64::max);
    let min_true = trues.iter().copied().fold(1.0, f64::min);
    let high: Vec<String> = decoys
        .iter()
        .filter(|d| d.1 >= 0.4)
        .map(|(id, r)| format!("{id}={r:.3}"))
        .collect();
    let pass = decoys.len() >= 10 && high.is_empty() && min_true >= 0.6;
    report(
        4,
        "match-rate filtering",
        pass,
        format!(
            "{} decoys, max rate {max_decoy:.3}, at or above 0.4: {high:?}; {} true tracks, min rate {min_true:.3}",
            decoys.len(),
            trues.len()
        ),
    );
    assert!(pass);
}

// 5 -----------------------------------------------------------------------

#[test]
fn criterion_5_segmentation_semantics() {
    let c = main_corpus();
    let tolerances = [15.0, 30.0, 60.0];
    let seg = pipeline::segment_eval(&c.outcomes, &tolerances).unwrap();
    let overall = &seg.overall;
    let median_in = overall.median_abs_in_sec.unwrap_or(f64::INFINITY);
    let closest_in = overall.closest_in_share().unwrap_or(0.0);
    let hit15 = overall.hit_rate(15.0).unwrap_or(0.0);
    let monotone = std::iter::once(overall)
        .chain(seg.mixes.values())
        .all(|r| r.hit_rates.windows(2).all(|w| w[0].rate <= w[1].rate));
    let pass = !overall.rows.is_empty() && median_in <= 1.0 && closest_in == 1.0 && hit15 == 1.0 && monotone;
    report(
        5,
        "segmentation semantics",
        pass,
        format!(
            "{} transitions; cue-in median |diff| {median_in:.3} s; cue-in closest share {closest_in:.3}; hit rate at 15 s {hit15:.3}; monotone {monotone}",
            overall.rows.len()
        ),
    );
    assert!(pass);
}

// 6 -----------------------------------------------------------------------

/// Mel scale with a linear part below 1 kHz and a log part above.
fn oracle_mel(hz: f64) -> f64 {
    let step = 6.4f64.ln() / 27.0;
    if hz < 1000.0 {
        3.0 * hz / 200.0
    } else {
        15.0 + (hz / 1000.0).ln() / step
    }
}

fn oracle_hz(mel: f64) -> f64 {
    let step = 6.4f64.ln() / 27.0;
    if mel < 15.0 {
        200.0 * mel / 3.0
    } else {
        1000.0 * ((mel - 15.0) * step).exp()
    }
}

fn oracle_mfcc(power: &[f64], sr: f64, n_fft: usize, n_mels: usize, n_mfcc: usize) -> Vec<f64> {
    let top = oracle_mel(sr / 2.0);
    let edges: Vec<f64> = (0..n_mels + 2).map(|i| oracle_hz(top * i as f64 / (n_mels + 1) as f64)).collect();
    let log_mel: Vec<f64> = (0..n_mels)
        .map(|b| {
            let (lo, mid, hi) = (edges[b], edges[b + 1], edges[b + 2]);
            let mut e = 0.0;
            for (k, p) in power.iter().enumerate() {
                let f = k as f64 * sr / n_fft as f64;
                let w = if f > lo && f <= mid {
                    (f - lo) / (mid - lo)
                } else if f > mid && f < hi {
                    (hi - f) / (hi - mid)
                } else {
                    0.0
                };
                e += w * 2.0 / (hi - lo) * p;
            }
            10.0 * e.max(1e-10).log10()
        })
        .collect();
    (0..n_mfcc)
        .map(|k| {
            let scale = if k == 0 { (1.0 / n_mels as f64).sqrt() } else { (2.0 / n_mels as f64).sqrt() };
            scale
                * log_mel
                    .iter()
                    .enumerate()
                    .map(|(i, v)| v * (std::f64::consts::PI * k as f64 * (i as f64 + 0.5) / n_mels as f64).cos())
                    .sum::<f64>()
        })
        .collect()
}

fn sine(freq: f64, seconds: f64, sr: u32) -> AudioBuffer<f64> {
    let n = (seconds * sr as f64) as usize;
    let s = (0..n).map(|i| 0.5 * (2.0 * std::f64::consts::PI * freq * i as f64 / sr as f64).sin()).collect();
    AudioBuffer::new(s, sr).unwrap()
}

fn clicks(bpm: f64, seconds: f64, sr: u32) -> AudioBuffer<f64> {
    let mut s = vec![0.0; (seconds * sr as f64) as usize];
    let period = 60.0 / bpm;
    let mut k = 0;
    loop {
        let at = ((k as f64 * period) * sr as f64).round() as usize;
        if at >= s.len() {
            break;
        }
        for (i, x) in s[at..].iter_mut().take(64).enumerate() {
            *x = if i % 2 == 0 { 1.0 } else { -1.0 } * (-(i as f64) / 16.0).exp();
        }
        k += 1;
    }
    AudioBuffer::new(s, sr).unwrap()
}

#[test]
fn criterion_6_dsp_oracles() {
    // MFCC against an independent mel + DCT implementation
    let (sr, n_fft) = (22050u32, 2048usize);
    let mut rng = ChaCha8Rng::seed_from_u64(600);
    let mags = Array2::from_shape_fn((n_fft / 2 + 1, 100), |_| {
        rng.random::<f64>() * 10f64.powf(rng.random_range(-4.0..1.0))
    });
    let spec = Spectrogram {
        magnitudes: mags.clone(),
        sample_rate: sr,
        fft_size: n_fft,
        hop: 512,
    };
    let ours = mfcc(&spec, 128, 12).unwrap();
    let mut max_diff: f64 = 0.0;
    for f in 0..100 {
        let power: Vec<f64> = mags.column(f).iter().map(|m| m * m).collect();
        let oracle = oracle_mfcc(&power, sr as f64, n_fft, 128, 12);
        for (k, o) in oracle.iter().enumerate() {
            max_diff = max_diff.max((ours[[k, f]] - o).abs());
        }
    }
    let mfcc_ok = max_diff <= 1e-6;

    // CENS argmax for pure tones over three octaves
    let mut cens_ok = 0;
    let mut cens_bad = Vec::new();
    for midi in 48..84 {
        let freq = 440.0 * 2f64.powf((midi as f64 - 69.0) / 12.0);
        let s = stft(&sine(freq, 3.0, sr), n_fft, 512).unwrap();
        let cens = chroma_cens(&s, 440.0).unwrap();
        let col = cens.column(cens.ncols() / 2);
        let arg = (0..12).fold(0, |b, i| if col[i] > col[b] { i } else { b });
        if arg == midi % 12 {
            cens_ok += 1;
        } else {
            cens_bad.push(midi);
        }
    }

    // tempo on click tracks
    let mut tempos = Vec::new();
    for bpm in [90.0, 120.0, 128.0] {
        let s = stft(&clicks(bpm, 30.0, sr), n_fft, 512).unwrap();
        let est = estimate_tempo(&onset_envelope(&s), s.frame_rate()).unwrap();
        tempos.push((bpm, est));
    }
    let tempo_ok = tempos.iter().all(|(b, e)| (b - e).abs() <= 1.0);

    let pass = mfcc_ok && cens_ok == 36 && tempo_ok;
    report(
        6,
        "DSP oracles",
        pass,
        format!("MFCC max |diff| {max_diff:.2e}; CENS {cens_ok}/36 (wrong {cens_bad:?}); tempo {tempos:.2?}"),
    );
    assert!(pass);
}

// 7 -----------------------------------------------------------------------

#[test]
fn criterion_7_transition_length_histogram() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = make_corpus_with(5, 700, &[32]).unwrap();
    let (outcomes, _) = run_written(dir.path(), &corpus, &RunConfig::default());
    let lengths: Vec<i64> = outcomes.iter().flat_map(|m| transition_lengths(&m.transitions)).collect();
    let hist = transition_length_histogram(&lengths, 1).unwrap();
    let share = hist.share_within(&lengths, 32, 2);
    let pass = !lengths.is_empty() && share >= 0.9;
    report(
        7,
        "transition-length histogram",
        pass,
        format!("{} transitions, {:.1}% within 32 ± 2 beats, lengths {lengths:?}", lengths.len(), 100.0 * share),
    );
    assert!(pass);
}

// 8 -----------------------------------------------------------------------

#[test]
fn criterion_8_cue_agreement_counting() {
    let mut rng = ChaCha8Rng::seed_from_u64(800);
    let bpm = 124.0;
    let shared = random_spec(&mut rng, bpm, 128, 34, 34);
    let n = 3;
    let corpus: Vec<CorpusMix> = (0..n)
        .map(|i| {
            let before = random_spec(&mut rng, bpm, 96, 0, 34);
            let after = random_spec(&mut rng, bpm, 96, 34, 0);
            CorpusMix {
                mix_id: format!("agree{i}"),
                mix_bpm: bpm,
                spec: SynthMixSpec {
                    tracks: vec![before, shared.clone(), after],
                    windows: vec![(0, 96), (0, 128), (0, 96)],
                    crossfade_beats: vec![32, 32],
                    tempo_factors: vec![1.0; 3],
                    transpose_semitones: vec![0; 3],
                },
                track_ids: vec![format!("agree{i}-a"), "shared".into(), format!("agree{i}-b")],
                decoys: Vec::new(),
                decoy_ids: Vec::new(),
            }
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let (outcomes, _) = run_written(dir.path(), &corpus, &RunConfig::default());
    let stats = pipeline::corpus_stats(&outcomes).unwrap();
    let counted = stats.agreement.distances_beats.len();

    let placed: Vec<CuePoints<f64>> = outcomes
        .iter()
        .flat_map(|m| m.tracks.iter())
        .filter(|t| t.track_id == "shared")
        .filter_map(|t| t.cues.clone())
        .collect();
    let identical: BTreeMap<String, Vec<CuePoints<f64>>> =
        BTreeMap::from([("shared".to_string(), vec![placed[0].clone(); n])]);
    let same = cue_agreement(&identical);
    let zero_share = same.shares.iter().find(|s| s.max_beats == 0).map_or(0.0, |s| s.share);

    let pass = placed.len() == n && counted == n * (n - 1) && same.distances_beats.len() == n * (n - 1) && zero_share == 1.0;
    report(
        8,
        "cue-agreement counting",
        pass,
        format!(
            "track in {n} mixes: {counted} pooled distances (expected {}), {:?}; identical placement zero share {zero_share}",
            n * (n - 1),
            stats.agreement.distances_beats
        ),
    );
    assert!(pass);
}

// 9 -----------------------------------------------------------------------

fn write_reports(out: &Path, outcomes: &[MixOutcome], tolerances: &[f64]) -> Vec<PathBuf> {
    std::fs::create_dir_all(out).unwrap();
    let mut files = vec![out.join("alignments.csv"), out.join("cues.csv"), out.join("transitions.csv")];
    pipeline::write_alignments_csv(&files[0], outcomes).unwrap();
    pipeline::write_cues_csv(&files[1], outcomes).unwrap();
    pipeline::write_transitions_csv(&files[2], outcomes).unwrap();
    let seg = out.join("segmentation.json");
    pipeline::write_json(&seg, &pipeline::segment_eval(outcomes, tolerances).unwrap()).unwrap();
    let stats = pipeline::corpus_stats(outcomes).unwrap();
    let stats_path = out.join("stats.json");
    pipeline::write_json(&stats_path, &stats).unwrap();
    files.push(seg);
    files.push(stats_path);
    files.extend(pipeline::write_stats_csvs(out, &stats).unwrap());
    files
}

#[test]
fn criterion_9_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let manifests = write_corpus(&dir.path().join("corpus"), &make_corpus(3, 900).unwrap()).unwrap();
    let mut runs = Vec::new();
    for workers in [1, 4] {
        let config = RunConfig {
            workers: Some(workers),
            ..RunConfig::default()
        };
        let outcomes = pipeline::run_corpus(&manifests, &config).unwrap();
        let files = write_reports(&dir.path().join(format!("w{workers}")), &outcomes, &config.tolerances);
        runs.push(files.iter().map(|f| std::fs::read(f).unwrap()).collect::<Vec<_>>());
    }
    let identical = runs[0] == runs[1];
    report(9, "determinism", identical, format!("{} report files compared, 1 vs 4 workers", runs[0].len()));
    assert!(identical);
}
