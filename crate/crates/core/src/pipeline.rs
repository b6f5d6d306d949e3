//! Sender-side packaging and ego-side fusion of received messages.

use nalgebra::Vector3;
use thiserror::Error;

use crate::bev_fusion::{fuse, warp_grid, BevError, BevGrid, FusionOperator};
use crate::geometry::{relative_transform, GeometryError, Pose};
use crate::query_fusion::{
    align_queries, fuse_queries, match_queries, merge_unmatched, MlpWeights, QueryError, TrackQuery,
    DEFAULT_MATCH_RADIUS_M, DEFAULT_QUERY_CAP,
};
use crate::refpoint_fusion::{dedup, fuse_refpoints, RefPointError, RefPointSet};
use crate::scenario::{detect_from_fused, FusedView, Observation, ScenarioError};
use crate::wire::{CoopMessage, FusionLevel, Payload, ShapeConfig, WireError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Grid(#[from] BevError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    RefPoints(#[from] RefPointError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

/// Builds the message `obs` sends at `level`, padded to the shape's slot
/// counts. If there are more entries than slots, the highest-scoring queries
/// (or the first points) are kept.
pub fn package(
    obs: &Observation,
    level: FusionLevel,
    shape: &ShapeConfig,
    frame_timestamp: u64,
) -> Result<CoopMessage, PipelineError> {
    let payload = match level {
        FusionLevel::Rpf => {
            let slots = shape.refpoint_count;
            let mut points = obs.refpoints.points().to_vec();
            points.truncate(slots as usize);
            Payload::RefPoints {
                points: RefPointSet::from_points_unchecked(points, obs.refpoints.dedup_eps()),
                slots,
            }
        }
        FusionLevel::Qff => {
            let slots = shape.query_count;
            let mut queries = obs.queries.clone();
            if queries.len() > slots as usize {
                queries.sort_by(|a, b| b.score.total_cmp(&a.score));
                queries.truncate(slots as usize);
            }
            let dim = queries
                .first()
                .map_or(shape.embed_dim(), |q| q.embedding.len()) as u32;
            Payload::Queries { dim, queries, slots }
        }
        FusionLevel::Bff => Payload::Bev(obs.grid.clone()),
    };
    Ok(CoopMessage::new(obs.owner, frame_timestamp, obs.reported_pose, payload)?)
}

/// Ego-side fusion parameters.
#[derive(Debug, Clone)]
pub struct FusionParams {
    pub operator: FusionOperator,
    pub weights: MlpWeights,
    pub match_radius_m: f64,
    pub query_cap: usize,
}

impl FusionParams {
    pub fn new(embed_dim: usize, weight_seed: u64) -> Self {
        Self {
            operator: FusionOperator::ElementwiseMax,
            weights: MlpWeights::seeded(embed_dim, weight_seed),
            match_radius_m: DEFAULT_MATCH_RADIUS_M,
            query_cap: DEFAULT_QUERY_CAP,
        }
    }
}

/// The ego's running fused state. Each level starts from the ego's own
/// representation the first time a message of that level arrives.
#[derive(Debug, Clone)]
pub struct EgoFusion<'a> {
    ego: &'a Observation,
    grid: Option<BevGrid>,
    queries: Option<Vec<TrackQuery>>,
    refpoints: Option<RefPointSet>,
    next_track_id: u64,
    fused_messages: usize,
}

impl<'a> EgoFusion<'a> {
    pub fn new(ego: &'a Observation) -> Self {
        let next_track_id = ego.queries.iter().map(|q| q.track_id + 1).max().unwrap_or(0);
        Self {
            ego,
            grid: None,
            queries: None,
            refpoints: None,
            next_track_id,
            fused_messages: 0,
        }
    }

    pub fn ego_pose(&self) -> &Pose {
        &self.ego.reported_pose
    }

    pub fn fused_messages(&self) -> usize {
        self.fused_messages
    }

    pub fn grid(&self) -> Option<&BevGrid> {
        self.grid.as_ref()
    }

    pub fn queries(&self) -> Option<&[TrackQuery]> {
        self.queries.as_deref()
    }

    pub fn refpoints(&self) -> Option<&RefPointSet> {
        self.refpoints.as_ref()
    }

    /// Folds one received message into the matching level's state.
    pub fn absorb(&mut self, msg: &CoopMessage, params: &FusionParams) -> Result<(), PipelineError> {
        let sender_to_ego = relative_transform(&msg.sender_pose, &self.ego.reported_pose)?;
        match &msg.payload {
            Payload::Bev(sender_grid) => {
                let acc = self.grid.get_or_insert_with(|| self.ego.grid.clone());
                let warped = warp_grid(sender_grid, &sender_to_ego, acc.spec())?;
                *acc = fuse(acc, &warped, &params.operator)?;
            }
            Payload::Queries { queries, .. } => {
                let acc = self.queries.get_or_insert_with(|| self.ego.queries.clone());
                let active: Vec<TrackQuery> = queries.iter().filter(|q| q.score > 0.0).cloned().collect();
                let aligned = align_queries(&active, &sender_to_ego);
                let matching = match_queries(acc, &aligned, params.match_radius_m);
                let mut fused = acc.clone();
                for &(e, s, _) in &matching.pairs {
                    fused[e] = fuse_queries(&acc[e], &aligned[s], &params.weights)?;
                }
                let sender_only: Vec<TrackQuery> = matching.sender_only.iter().map(|&s| aligned[s].clone()).collect();
                let added = sender_only.len().min(params.query_cap.saturating_sub(fused.len()));
                *acc = merge_unmatched(fused, sender_only, params.query_cap, self.next_track_id);
                self.next_track_id += added as u64;
            }
            Payload::RefPoints { points, .. } => {
                let acc = self.refpoints.get_or_insert_with(|| self.ego.refpoints.clone());
                let aligned: Vec<Vector3<f64>> = points
                    .points()
                    .iter()
                    .map(|p| crate::geometry::apply_point(&sender_to_ego, p))
                    .collect();
                let sender = dedup(&aligned, acc.dedup_eps())?;
                *acc = fuse_refpoints(acc, &sender)?;
            }
        }
        self.fused_messages += 1;
        Ok(())
    }

    /// Detections in the ego frame.
    ///
    /// With nothing fused this is the ego's own query output. Otherwise each
    /// fused level contributes its detections, richest level first, and a
    /// later detection is dropped if an earlier one lies within `merge_radius`.
    pub fn detections(&self, threshold: f64, merge_radius: f64) -> Result<Vec<Vector3<f64>>, PipelineError> {
        let mut views = Vec::new();
        if let Some(g) = &self.grid {
            views.push(FusedView::Grid(g));
        }
        if let Some(q) = &self.queries {
            views.push(FusedView::Queries(q));
        }
        if let Some(r) = &self.refpoints {
            views.push(FusedView::RefPoints(r));
        }
        if views.is_empty() {
            return Ok(detect_from_fused(FusedView::Queries(&self.ego.queries), threshold)?);
        }
        let mut out: Vec<Vector3<f64>> = Vec::new();
        for (i, view) in views.into_iter().enumerate() {
            let dets = detect_from_fused(view, threshold)?;
            if i == 0 {
                out = dets;
                continue;
            }
            let earlier = out.len();
            for d in dets {
                if out[..earlier].iter().all(|o| (o.xy() - d.xy()).norm() > merge_radius) {
                    out.push(d);
                }
            }
        }
        Ok(out)
    }
}

/// Fuses `messages` into `ego` in ascending sender-id order.
pub fn fuse_received<'a>(
    ego: &'a Observation,
    messages: &[CoopMessage],
    params: &FusionParams,
) -> Result<EgoFusion<'a>, PipelineError> {
    let mut order: Vec<&CoopMessage> = messages.iter().collect();
    order.sort_by_key(|m| m.sender_id);
    let mut state = EgoFusion::new(ego);
    for msg in order {
        state.absorb(msg, params)?;
    }
    Ok(state)
}
