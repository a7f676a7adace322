//! Alignment of DJ mixes to their source tracks.
//!
//! Beat-synchronous chroma and MFCC features are aligned with subsequence
//! DTW, optionally under all twelve chroma rotations. The warping paths yield
//! cue points, transitions and corpus statistics; [`synthmix`] renders
//! procedural mixes with exact ground truth for end-to-end checks.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the common choices.

pub mod align;
pub mod cue;
pub mod error;
pub mod features;
pub mod ingest;
pub mod pipeline;
pub mod scalar;
pub mod stats;
pub mod synthmix;

pub use align::{align, align_key_invariant, subsequence_dtw, AlignmentResult, FeatureMode, MatchRateNorm, WarpingPath};
pub use cue::{build_transitions, evaluate_segmentation, extract_cues, CuePoints, SegmentationReport, TransitionRecord};
pub use error::{Error, Result};
pub use features::{extract_features, BeatGrid, BeatSyncFeatures, FeatureConfig};
pub use ingest::{decode_audio, parse_manifest, AudioBuffer, MixManifest};
pub use pipeline::RunConfig;
pub use scalar::Scalar;

pub type AudioF32 = AudioBuffer<f32>;
pub type AudioF64 = AudioBuffer<f64>;
pub type FeaturesF32 = BeatSyncFeatures<f32>;
pub type FeaturesF64 = BeatSyncFeatures<f64>;
pub type AlignmentF32 = AlignmentResult<f32>;
pub type AlignmentF64 = AlignmentResult<f64>;
pub type CuesF64 = CuePoints<f64>;
