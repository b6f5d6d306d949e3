//! Track queries, their alignment into the ego frame, ego/sender matching, and
//! the concatenate-then-perceptron embedding fusion.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::gated_assignment;
use crate::geometry::{apply_point, Transform};

pub const DEFAULT_EMBED_DIM: usize = 512;
pub const DEFAULT_MATCH_RADIUS_M: f64 = 2.0;
pub const DEFAULT_QUERY_CAP: usize = 900;

const MLP_MAGIC: &[u8; 4] = b"CFMW";
const MLP_VERSION: u8 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QueryError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("invalid weights file: {0}")]
    InvalidWeights(String),
}

/// Oriented 3-D box: center, (length, width, height) extent, heading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxParams {
    pub center: Vector3<f64>,
    pub extent: Vector3<f64>,
    pub yaw: f64,
}

/// Per-object track record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackQuery {
    pub embedding: Vec<f32>,
    /// Meters, owner frame.
    pub ref_point: Vector3<f64>,
    /// Confidence in [0, 1].
    pub score: f32,
    pub bbox: BoxParams,
    /// Unique per owner.
    pub track_id: u64,
}

impl TrackQuery {
    pub fn validate(&self) -> Result<(), QueryError> {
        if !(0.0..=1.0).contains(&self.score) {
            return Err(QueryError::InvalidQuery(format!("score {} outside [0, 1]", self.score)));
        }
        if self.bbox.extent.iter().any(|e| e.is_nan() || *e <= 0.0) {
            return Err(QueryError::InvalidQuery("box extents must be positive".into()));
        }
        if self.embedding.iter().any(|v| !v.is_finite()) {
            return Err(QueryError::InvalidQuery("embedding has non-finite entries".into()));
        }
        Ok(())
    }
}

/// Maps sender queries into the ego frame. Embeddings, scores and ids are kept.
pub fn align_queries(qs: &[TrackQuery], sender_to_ego: &Transform) -> Vec<TrackQuery> {
    let yaw = sender_to_ego.yaw();
    qs.iter()
        .map(|q| {
            let mut out = q.clone();
            out.ref_point = apply_point(sender_to_ego, &q.ref_point);
            out.bbox.center = apply_point(sender_to_ego, &q.bbox.center);
            out.bbox.yaw = q.bbox.yaw + yaw;
            out
        })
        .collect()
}

/// Partition of ego and sender queries produced by [`match_queries`].
#[derive(Debug, Clone, PartialEq)]
pub struct QueryMatching {
    /// (ego index, sender index, ref-point distance).
    pub pairs: Vec<(usize, usize, f64)>,
    pub ego_only: Vec<usize>,
    pub sender_only: Vec<usize>,
}

impl QueryMatching {
    pub fn total_distance(&self) -> f64 {
        self.pairs.iter().map(|p| p.2).sum()
    }
}

/// Optimal one-to-one matching on ref-point distance; pairs farther than
/// `radius` are left unmatched.
pub fn match_queries(ego: &[TrackQuery], sender_aligned: &[TrackQuery], radius: f64) -> QueryMatching {
    let r = gated_assignment(ego, sender_aligned, radius, |a, b| (a.ref_point - b.ref_point).norm());
    QueryMatching {
        pairs: r.pairs,
        ego_only: r.left_unmatched,
        sender_only: r.right_unmatched,
    }
}

/// Two-layer perceptron `2D -> D -> D` with a ReLU between the layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpWeights {
    dim: usize,
    /// `D x 2D`, row-major.
    w1: Vec<f32>,
    b1: Vec<f32>,
    /// `D x D`, row-major.
    w2: Vec<f32>,
    b2: Vec<f32>,
}

impl MlpWeights {
    pub fn new(dim: usize, w1: Vec<f32>, b1: Vec<f32>, w2: Vec<f32>, b2: Vec<f32>) -> Result<Self, QueryError> {
        let ok = dim > 0
            && w1.len() == dim * 2 * dim
            && b1.len() == dim
            && w2.len() == dim * dim
            && b2.len() == dim;
        if !ok {
            return Err(QueryError::DimensionMismatch(format!(
                "weights do not describe a {}->{}->{} perceptron",
                2 * dim,
                dim,
                dim
            )));
        }
        Ok(Self { dim, w1, b1, w2, b2 })
    }

    /// Deterministic initialization, uniform in ±1/sqrt(fan_in).
    pub fn seeded(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |n: usize, fan_in: usize| -> Vec<f32> {
            let bound = 1.0 / (fan_in as f32).sqrt();
            (0..n).map(|_| rng.random_range(-bound..bound)).collect()
        };
        let w1 = uniform(dim * 2 * dim, 2 * dim);
        let b1 = uniform(dim, 2 * dim);
        let w2 = uniform(dim * dim, dim);
        let b2 = uniform(dim, dim);
        Self { dim, w1, b1, w2, b2 }
    }

    pub fn zeros_with_bias(dim: usize, bias: Vec<f32>) -> Result<Self, QueryError> {
        Self::new(dim, vec![0.0; 2 * dim * dim], vec![0.0; dim], vec![0.0; dim * dim], bias)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn forward(&self, input: &[f32]) -> Result<Vec<f32>, QueryError> {
        let d = self.dim;
        if input.len() != 2 * d {
            return Err(QueryError::DimensionMismatch(format!(
                "perceptron input width {} != {}",
                input.len(),
                2 * d
            )));
        }
        let hidden: Vec<f32> = self
            .w1
            .chunks_exact(2 * d)
            .zip(&self.b1)
            .map(|(row, b)| (dot(row, input) + f64::from(*b)).max(0.0) as f32)
            .collect();
        Ok(self
            .w2
            .chunks_exact(d)
            .zip(&self.b2)
            .map(|(row, b)| (dot(row, &hidden) + f64::from(*b)) as f32)
            .collect())
    }

    /// Weights file: "CFMW", version byte, D as u32 LE, then W1, b1, W2, b2 as
    /// row-major f32 LE.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(9 + 4 * (self.w1.len() + self.w2.len() + 2 * self.dim));
        out.extend_from_slice(MLP_MAGIC);
        out.push(MLP_VERSION);
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for v in self.w1.iter().chain(&self.b1).chain(&self.w2).chain(&self.b2) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, QueryError> {
        if bytes.len() < 9 {
            return Err(QueryError::InvalidWeights("file shorter than header".into()));
        }
        if &bytes[0..4] != MLP_MAGIC {
            return Err(QueryError::InvalidWeights("bad magic".into()));
        }
        if bytes[4] != MLP_VERSION {
            return Err(QueryError::InvalidWeights(format!("unsupported version {}", bytes[4])));
        }
        let dim = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
        let floats = 2 * dim * dim + dim + dim * dim + dim;
        let body = &bytes[9..];
        if body.len() != floats * 4 {
            return Err(QueryError::InvalidWeights(format!(
                "expected {} payload bytes for D = {}, found {}",
                floats * 4,
                dim,
                body.len()
            )));
        }
        let mut values = body
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()));
        let mut take = |n: usize| values.by_ref().take(n).collect::<Vec<f32>>();
        let w1 = take(2 * dim * dim);
        let b1 = take(dim);
        let w2 = take(dim * dim);
        let b2 = take(dim);
        Self::new(dim, w1, b1, w2, b2)
    }
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum()
}

/// Fuses a matched (ego, sender) pair.
///
/// The embedding is the perceptron applied to the concatenation; the ref point
/// is the score-weighted mean; the score is the max; box and id stay the ego's.
pub fn fuse_queries(ego: &TrackQuery, sender: &TrackQuery, weights: &MlpWeights) -> Result<TrackQuery, QueryError> {
    let d = weights.dim();
    if ego.embedding.len() != d || sender.embedding.len() != d {
        return Err(QueryError::DimensionMismatch(format!(
            "embedding widths {} and {} do not match perceptron width {}",
            ego.embedding.len(),
            sender.embedding.len(),
            d
        )));
    }
    let mut concat = Vec::with_capacity(2 * d);
    concat.extend_from_slice(&ego.embedding);
    concat.extend_from_slice(&sender.embedding);
    let embedding = weights.forward(&concat)?;

    let (se, ss) = (f64::from(ego.score), f64::from(sender.score));
    let ref_point = if se + ss > 0.0 {
        (ego.ref_point * se + sender.ref_point * ss) / (se + ss)
    } else {
        (ego.ref_point + sender.ref_point) / 2.0
    };
    Ok(TrackQuery {
        embedding,
        ref_point,
        score: ego.score.max(sender.score),
        bbox: ego.bbox,
        track_id: ego.track_id,
    })
}

/// Keeps ego-only queries and appends sender-only queries up to `cap` total.
///
/// `cap` limits sender additions only: ego queries are never dropped. Sender
/// queries that do not fit are dropped lowest score first; survivors keep their
/// relative order and are renumbered from `next_track_id`.
pub fn merge_unmatched(
    ego_only: Vec<TrackQuery>,
    sender_only: Vec<TrackQuery>,
    cap: usize,
    next_track_id: u64,
) -> Vec<TrackQuery> {
    let room = cap.saturating_sub(ego_only.len());
    let mut order: Vec<usize> = (0..sender_only.len()).collect();
    // Stable: equal scores keep input order.
    order.sort_by(|a, b| sender_only[*b].score.total_cmp(&sender_only[*a].score));
    let mut keep = vec![false; sender_only.len()];
    for idx in order.into_iter().take(room) {
        keep[idx] = true;
    }
    let mut out = ego_only;
    let mut next = next_track_id;
    for (q, kept) in sender_only.into_iter().zip(keep) {
        if kept {
            out.push(TrackQuery { track_id: next, ..q });
            next += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    pub(crate) fn query(id: u64, p: [f64; 3], score: f32, dim: usize) -> TrackQuery {
        TrackQuery {
            embedding: (0..dim).map(|i| (i as f32 + 1.0) * 0.5 + id as f32).collect(),
            ref_point: Vector3::from(p),
            score,
            bbox: BoxParams {
                center: Vector3::from(p),
                extent: Vector3::new(4.5, 2.0, 1.6),
                yaw: 0.1,
            },
            track_id: id,
        }
    }

    #[test]
    fn align_identity_and_translation() {
        let qs = vec![query(1, [1.0, 2.0, 0.5], 0.9, 4), query(2, [-3.0, 0.0, 0.5], 0.7, 4)];
        assert_eq!(align_queries(&qs, &Transform::identity()), qs);
        let t = Transform::from_translation(Vector3::new(5.0, 0.0, 0.0));
        let out = align_queries(&qs, &t);
        for (a, b) in out.iter().zip(&qs) {
            assert_eq!(a.ref_point.x, b.ref_point.x + 5.0);
            assert_eq!(a.embedding, b.embedding);
            assert_eq!(a.track_id, b.track_id);
        }
    }

    #[test]
    fn align_quarter_turn() {
        let t = Transform::from_rotation_translation(
            *nalgebra::Rotation3::from_axis_angle(&Vector3::z_axis(), FRAC_PI_2).matrix(),
            Vector3::zeros(),
        );
        let q = query(1, [1.0, 0.0, 0.0], 1.0, 2);
        let out = &align_queries(std::slice::from_ref(&q), &t)[0];
        assert!((out.ref_point - Vector3::new(0.0, 1.0, 0.0)).amax() < 1e-12);
        assert!((out.bbox.yaw - (q.bbox.yaw + FRAC_PI_2)).abs() < 1e-12);
    }

    #[test]
    fn matching_basic_cases() {
        let ego = vec![query(1, [0.0, 0.0, 0.0], 1.0, 2), query(2, [5.0, 0.0, 0.0], 1.0, 2)];
        let far = vec![query(3, [50.0, 0.0, 0.0], 1.0, 2)];
        let m = match_queries(&ego, &far, 2.0);
        assert!(m.pairs.is_empty());
        assert_eq!(m.ego_only, vec![0, 1]);
        assert_eq!(m.sender_only, vec![0]);

        let m = match_queries(&ego, &ego, 2.0);
        assert_eq!(m.pairs.len(), 2);
        assert_eq!(m.total_distance(), 0.0);
    }

    #[test]
    fn degenerate_weights_give_bias() {
        let bias = vec![0.25, -1.0, 3.0];
        let w = MlpWeights::zeros_with_bias(3, bias.clone()).unwrap();
        let out = fuse_queries(&query(1, [0.0; 3], 1.0, 3), &query(2, [0.0; 3], 1.0, 3), &w).unwrap();
        assert_eq!(out.embedding, bias);
    }

    #[test]
    fn first_block_identity_selects_ego_embedding() {
        let d = 4;
        let mut w1 = vec![0.0; 2 * d * d];
        let mut w2 = vec![0.0; d * d];
        for i in 0..d {
            w1[i * 2 * d + i] = 1.0;
            w2[i * d + i] = 1.0;
        }
        let w = MlpWeights::new(d, w1, vec![0.0; d], w2, vec![0.0; d]).unwrap();
        let ego = query(1, [0.0; 3], 1.0, d);
        let out = fuse_queries(&ego, &query(9, [0.0; 3], 1.0, d), &w).unwrap();
        assert_eq!(out.embedding, ego.embedding);
    }

    #[test]
    fn fused_ref_score_box_rules() {
        let w = MlpWeights::seeded(2, 3);
        let a = query(1, [0.0, 0.0, 0.0], 1.0, 2);
        let b = query(2, [2.0, 0.0, 0.0], 1.0, 2);
        let f = fuse_queries(&a, &b, &w).unwrap();
        assert_eq!(f.ref_point, Vector3::new(1.0, 0.0, 0.0));
        let b = query(2, [2.0, 0.0, 0.0], 0.5, 2);
        let f = fuse_queries(&a, &b, &w).unwrap();
        assert!((f.ref_point.x - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(f.score, 1.0);
        assert_eq!(f.bbox, a.bbox);
        assert_eq!(f.track_id, 1);
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let w = MlpWeights::seeded(3, 0);
        assert!(fuse_queries(&query(1, [0.0; 3], 1.0, 2), &query(2, [0.0; 3], 1.0, 3), &w).is_err());
    }

    #[test]
    fn merge_cases() {
        let ego = vec![query(1, [0.0; 3], 0.9, 2)];
        assert_eq!(merge_unmatched(ego.clone(), vec![], 10, 100), ego);
        let senders = vec![query(7, [1.0; 3], 0.5, 2)];
        assert_eq!(merge_unmatched(ego.clone(), senders, 0, 100), ego);

        let scores = [0.3, 0.9, 0.1, 0.7, 0.5];
        let senders: Vec<_> = scores
            .iter()
            .enumerate()
            .map(|(i, s)| query(10 + i as u64, [i as f64; 3], *s, 2))
            .collect();
        let out = merge_unmatched(ego.clone(), senders.clone(), 4, 100);
        // Sort oracle: top 3 scores are 0.9, 0.7, 0.5.
        let mut sorted = scores.to_vec();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let mut kept: Vec<f32> = out[1..].iter().map(|q| q.score).collect();
        kept.sort_by(|a, b| b.partial_cmp(a).unwrap());
        assert_eq!(kept, sorted[..3].to_vec());
        assert_eq!(out[1..].iter().map(|q| q.track_id).collect::<Vec<_>>(), vec![100, 101, 102]);
    }

    #[test]
    fn weights_file_round_trip_and_errors() {
        let w = MlpWeights::seeded(3, 11);
        let bytes = w.to_bytes();
        assert_eq!(&bytes[0..4], b"CFMW");
        assert_eq!(bytes.len(), 9 + 4 * (18 + 3 + 9 + 3));
        assert_eq!(MlpWeights::from_bytes(&bytes).unwrap(), w);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(MlpWeights::from_bytes(&bad).is_err());
        assert!(MlpWeights::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn query_validation() {
        let mut q = query(1, [0.0; 3], 1.0, 2);
        q.validate().unwrap();
        q.score = 1.5;
        assert!(q.validate().is_err());
    }
}
