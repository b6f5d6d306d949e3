//! Multi-level cooperative perception for connected vehicles.
//!
//! Senders share one of three representations with the ego vehicle, ordered by
//! fidelity and cost:
//!
//! - reference points ([`refpoint_fusion`]), a few floats per object,
//! - track queries ([`query_fusion`]), one embedding per object,
//! - dense BEV feature grids ([`bev_fusion`]).
//!
//! [`wire`] packages a representation into a cooperative message, [`channel`]
//! carries it over a simulated capacity- and range-limited link, and
//! [`selector`] picks the richest level the link can afford. [`scenario`] and
//! [`metrics`] provide a synthetic ground-truth world and detection metrics so
//! the whole chain runs without any learned model.

pub mod assignment;
pub mod bev_fusion;
pub mod channel;
pub mod geometry;
pub mod metrics;
pub mod pipeline;
pub mod query_fusion;
pub mod refpoint_fusion;
pub mod scenario;
pub mod selector;
pub mod wire;

pub use bev_fusion::{fuse, grid_payload_bytes, warp_grid, BevGrid, FusionOperator, GridSpec};
pub use channel::{Admission, ChannelConfig, ChannelState, DropReason};
pub use geometry::{
    apply_point, compose, invert, pose_to_transform, relative_transform, NoiseConfig, Pose,
    Transform,
};
pub use metrics::{compare_levels, match_detections, EvalConfig, EvalReport, EvalRow};
pub use query_fusion::{align_queries, fuse_queries, match_queries, merge_unmatched, MlpWeights, TrackQuery};
pub use refpoint_fusion::{dedup, fuse_refpoints, RefPointSet};
pub use scenario::{generate_scene, observe, Observation, Scene, SceneConfig};
pub use selector::{select_level, Selection, SelectorConfig};
pub use wire::{bandwidth_kbps, decode, encode, CoopMessage, FusionLevel, Payload, ShapeConfig};

/// Mixes a seed with a stream tag into an independent 64-bit seed.
///
/// SplitMix64 finalizer; stable across platforms and releases.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
