//! Detection metrics and level-by-level evaluation over scene batches.
//!
//! Scores are single-frame detection recall, precision and position RMSE
//! against the scene oracle, using planar (x, y) distance throughout.

use std::fmt;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::gated_assignment;
use crate::bev_fusion::FusionOperator;
use crate::channel::{ChannelConfig, ChannelCounters, ChannelError, ChannelState, TraceEvent};
use crate::derive_seed;
use crate::geometry::NoiseConfig;
use crate::pipeline::{fuse_received, package, EgoFusion, FusionParams, PipelineError};
use crate::query_fusion::DEFAULT_MATCH_RADIUS_M;
use crate::scenario::{observe, Observation, ObservationConfig, Scene, ScenarioError};
use crate::selector::{select_level, SelectorConfig};
use crate::wire::{FusionLevel, ShapeConfig};

pub const DEFAULT_DETECTION_THRESHOLD: f64 = 0.3;
pub const DEFAULT_MATCH_THRESHOLD_M: f64 = 2.0;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("invalid evaluation config: {0}")]
    InvalidConfig(String),
    #[error("empty scene batch")]
    EmptyBatch,
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

/// Optimal detection-to-truth assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionMatch {
    /// (detection index, truth index, planar distance).
    pub pairs: Vec<(usize, usize, f64)>,
    pub false_positives: Vec<usize>,
    pub false_negatives: Vec<usize>,
}

impl DetectionMatch {
    pub fn tp(&self) -> usize {
        self.pairs.len()
    }

    pub fn fp(&self) -> usize {
        self.false_positives.len()
    }

    pub fn fn_(&self) -> usize {
        self.false_negatives.len()
    }

    /// 1 when there is nothing to find.
    pub fn recall(&self) -> f64 {
        ratio(self.tp(), self.tp() + self.fn_())
    }

    /// 1 when nothing was detected.
    pub fn precision(&self) -> f64 {
        ratio(self.tp(), self.tp() + self.fp())
    }

    pub fn squared_error_sum(&self) -> f64 {
        self.pairs.iter().map(|p| p.2 * p.2).sum()
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// One-to-one matching of detections to ground truth: the largest number of
/// pairs within `dist_threshold_m`, then the smallest summed distance.
pub fn match_detections(
    detections: &[Vector3<f64>],
    ground_truth: &[Vector3<f64>],
    dist_threshold_m: f64,
) -> Result<DetectionMatch, MetricsError> {
    if !(dist_threshold_m > 0.0 && dist_threshold_m.is_finite()) {
        return Err(MetricsError::InvalidConfig(format!(
            "match threshold {dist_threshold_m} must be positive"
        )));
    }
    let r = gated_assignment(detections, ground_truth, dist_threshold_m, |d, g| (d.xy() - g.xy()).norm());
    Ok(DetectionMatch {
        pairs: r.pairs,
        false_positives: r.left_unmatched,
        false_negatives: r.right_unmatched,
    })
}

/// What each sender transmits in one evaluation row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LevelChoice {
    Fixed(FusionLevel),
    /// Per-sender selector decision on an equal share of the link capacity.
    Adaptive,
}

impl LevelChoice {
    pub fn label(&self) -> &'static str {
        match self {
            LevelChoice::Fixed(l) => l.name(),
            LevelChoice::Adaptive => "adaptive",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        if s.eq_ignore_ascii_case("adaptive") {
            Some(LevelChoice::Adaptive)
        } else {
            FusionLevel::parse(s).map(LevelChoice::Fixed)
        }
    }

    pub fn all_fixed() -> Vec<LevelChoice> {
        FusionLevel::ALL.iter().map(|l| LevelChoice::Fixed(*l)).collect()
    }
}

impl fmt::Display for LevelChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Everything an evaluation run needs besides the scenes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub shape: ShapeConfig,
    pub channel: ChannelConfig,
    pub selector: SelectorConfig,
    pub occlusion: bool,
    /// Applied to every vehicle; the seed is re-derived per scene.
    pub noise: Option<NoiseConfig>,
    pub detection_threshold: f64,
    pub match_threshold_m: f64,
    pub query_match_radius_m: f64,
    pub operator: FusionOperator,
    pub weight_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            shape: ShapeConfig::default(),
            channel: ChannelConfig::default(),
            selector: SelectorConfig::default(),
            occlusion: true,
            noise: None,
            detection_threshold: DEFAULT_DETECTION_THRESHOLD,
            match_threshold_m: DEFAULT_MATCH_THRESHOLD_M,
            query_match_radius_m: DEFAULT_MATCH_RADIUS_M,
            operator: FusionOperator::ElementwiseMax,
            weight_seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), MetricsError> {
        self.shape.validate().map_err(MetricsError::InvalidConfig)?;
        self.selector.validate().map_err(MetricsError::InvalidConfig)?;
        self.channel.validate()?;
        if self.channel.fps != self.shape.fps {
            return Err(MetricsError::InvalidConfig(format!(
                "channel fps {} differs from shape fps {}",
                self.channel.fps, self.shape.fps
            )));
        }
        if let Some(n) = &self.noise {
            n.validate()
                .map_err(|e| MetricsError::InvalidConfig(e.to_string()))?;
        }
        let positive = [self.detection_threshold, self.match_threshold_m, self.query_match_radius_m];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(MetricsError::InvalidConfig("thresholds must be positive".into()));
        }
        if let FusionOperator::LogitWeighted(gate) = &self.operator {
            if gate.weights.len() != self.shape.bev.channels {
                return Err(MetricsError::InvalidConfig(format!(
                    "gate has {} weights for {} channels",
                    gate.weights.len(),
                    self.shape.bev.channels
                )));
            }
        }
        Ok(())
    }

    pub fn observation(&self, rasterize: bool) -> ObservationConfig {
        ObservationConfig {
            grid: self.shape.bev,
            embed_dim: self.shape.embed_dim(),
            rasterize,
            ..Default::default()
        }
    }

    fn fusion_params(&self) -> FusionParams {
        FusionParams {
            operator: self.operator.clone(),
            match_radius_m: self.query_match_radius_m,
            ..FusionParams::new(self.shape.embed_dim(), self.weight_seed)
        }
    }
}

/// Aggregated metrics of one row (no fusion, or one level choice).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub label: String,
    pub scenes: usize,
    pub true_positives: u64,
    pub false_positives: u64,
    pub false_negatives: u64,
    pub recall: f64,
    pub precision: f64,
    /// Pooled over all matched detections.
    pub position_rmse_m: f64,
    /// Mean of per-scene RMSE over scenes with at least one match.
    pub mean_scene_rmse_m: f64,
    /// Admitted messages.
    pub messages: u64,
    /// Accounted payload bytes of admitted messages.
    pub bytes_sent: u64,
    pub wire_bytes: u64,
    /// Mean per-message link rate: `bytes_sent * fps / messages / 1024`.
    pub kbps: f64,
    pub drops_out_of_range: u64,
    pub drops_over_capacity: u64,
    pub drops_random_loss: u64,
    pub per_scene_recall: Vec<f64>,
    pub per_scene_rmse_m: Vec<Option<f64>>,
}

impl EvalRow {
    /// Column order of [`EvalRow::csv_record`].
    pub const CSV_COLUMNS: [&'static str; 16] = [
        "label",
        "scenes",
        "true_positives",
        "false_positives",
        "false_negatives",
        "recall",
        "precision",
        "position_rmse_m",
        "mean_scene_rmse_m",
        "messages",
        "bytes_sent",
        "wire_bytes",
        "kbps",
        "drops_out_of_range",
        "drops_over_capacity",
        "drops_random_loss",
    ];

    pub fn csv_record(&self) -> Vec<String> {
        vec![
            self.label.clone(),
            self.scenes.to_string(),
            self.true_positives.to_string(),
            self.false_positives.to_string(),
            self.false_negatives.to_string(),
            self.recall.to_string(),
            self.precision.to_string(),
            self.position_rmse_m.to_string(),
            self.mean_scene_rmse_m.to_string(),
            self.messages.to_string(),
            self.bytes_sent.to_string(),
            self.wire_bytes.to_string(),
            self.kbps.to_string(),
            self.drops_out_of_range.to_string(),
            self.drops_over_capacity.to_string(),
            self.drops_random_loss.to_string(),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub fps: u32,
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn row(&self, label: &str) -> Option<&EvalRow> {
        self.rows.iter().find(|r| r.label == label)
    }
}

#[derive(Debug, Clone)]
struct RowAccumulator {
    label: String,
    tp: u64,
    fp: u64,
    fn_: u64,
    sq_err: f64,
    per_scene_recall: Vec<f64>,
    per_scene_rmse: Vec<Option<f64>>,
    counters: ChannelCounters,
}

impl RowAccumulator {
    fn new(label: &str) -> Self {
        Self {
            label: label.to_string(),
            tp: 0,
            fp: 0,
            fn_: 0,
            sq_err: 0.0,
            per_scene_recall: Vec::new(),
            per_scene_rmse: Vec::new(),
            counters: ChannelCounters::default(),
        }
    }

    fn add_scene(&mut self, m: &DetectionMatch) {
        self.tp += m.tp() as u64;
        self.fp += m.fp() as u64;
        self.fn_ += m.fn_() as u64;
        let sq = m.squared_error_sum();
        self.sq_err += sq;
        self.per_scene_recall.push(m.recall());
        self.per_scene_rmse
            .push((m.tp() > 0).then(|| (sq / m.tp() as f64).sqrt()));
    }

    fn finish(self, fps: u32) -> EvalRow {
        let c = self.counters;
        let scene_rmse: Vec<f64> = self.per_scene_rmse.iter().flatten().copied().collect();
        let kbps = if c.admitted == 0 {
            0.0
        } else {
            c.admitted_payload_bytes as f64 * f64::from(fps) / c.admitted as f64 / 1024.0
        };
        EvalRow {
            label: self.label,
            scenes: self.per_scene_recall.len(),
            true_positives: self.tp,
            false_positives: self.fp,
            false_negatives: self.fn_,
            recall: ratio(self.tp as usize, (self.tp + self.fn_) as usize),
            precision: ratio(self.tp as usize, (self.tp + self.fp) as usize),
            position_rmse_m: if self.tp == 0 {
                0.0
            } else {
                (self.sq_err / self.tp as f64).sqrt()
            },
            mean_scene_rmse_m: if scene_rmse.is_empty() {
                0.0
            } else {
                scene_rmse.iter().sum::<f64>() / scene_rmse.len() as f64
            },
            messages: c.admitted,
            bytes_sent: c.admitted_payload_bytes,
            wire_bytes: c.admitted_wire_bytes,
            kbps,
            drops_out_of_range: c.out_of_range,
            drops_over_capacity: c.over_capacity,
            drops_random_loss: c.random_loss,
            per_scene_recall: self.per_scene_recall,
            per_scene_rmse_m: self.per_scene_rmse,
        }
    }
}

/// Observations of every vehicle in `scene`, indexed like `scene.vehicles`.
pub fn observe_all(
    scene: &Scene,
    cfg: &EvalConfig,
    noise: Option<&NoiseConfig>,
    rasterize: bool,
) -> Result<Vec<Observation>, MetricsError> {
    let obs_cfg = cfg.observation(rasterize);
    scene
        .vehicles
        .iter()
        .map(|v| observe(scene, v.id, cfg.occlusion, noise, &obs_cfg).map_err(MetricsError::from))
        .collect()
}

/// Ground-truth centers inside the ego's BEV square, ego frame.
pub fn ego_ground_truth(scene: &Scene, cfg: &EvalConfig) -> Result<Vec<Vector3<f64>>, MetricsError> {
    Ok(scene
        .ground_truth(scene.ego_id, &cfg.shape.bev)?
        .into_iter()
        .map(|(_, p)| p)
        .collect())
}

/// Ids of ground-truth objects the ego misses but some in-range sender sees.
pub fn sender_only_objects(scene: &Scene, cfg: &EvalConfig) -> Result<Vec<u64>, MetricsError> {
    let observations = observe_all(scene, cfg, None, false)?;
    let ego_pos = scene.ego().pose.translation;
    let ego_obs = observations
        .iter()
        .find(|o| o.owner == scene.ego_id)
        .expect("ego is observed");
    let truth: Vec<u64> = scene
        .ground_truth(scene.ego_id, &cfg.shape.bev)?
        .into_iter()
        .map(|(id, _)| id)
        .collect();
    let mut out = Vec::new();
    for id in truth {
        if ego_obs.visible.iter().any(|v| v.id == id) {
            continue;
        }
        let seen = scene.vehicles.iter().zip(&observations).any(|(v, o)| {
            v.id != scene.ego_id
                && (v.pose.translation - ego_pos).norm() <= cfg.channel.coop_range_m
                && o.visible.iter().any(|vis| vis.id == id)
        });
        if seen {
            out.push(id);
        }
    }
    Ok(out)
}

fn scene_noise(cfg: &EvalConfig, scene_idx: usize) -> Option<NoiseConfig> {
    cfg.noise.map(|n| NoiseConfig {
        seed: derive_seed(n.seed, scene_idx as u64),
        ..n
    })
}

fn filtered_detections(state: &EgoFusion<'_>, cfg: &EvalConfig) -> Result<Vec<Vector3<f64>>, MetricsError> {
    Ok(state
        .detections(cfg.detection_threshold, cfg.match_threshold_m)?
        .into_iter()
        .filter(|d| cfg.shape.bev.contains(d.x, d.y))
        .collect())
}

/// Runs one frame of `choice` through a fresh link; returns the match and the
/// link counters.
#[allow(clippy::too_many_arguments)]
fn run_choice(
    scene: &Scene,
    scene_idx: usize,
    observations: &[Observation],
    truth: &[Vector3<f64>],
    choice: LevelChoice,
    cfg: &EvalConfig,
    params: &FusionParams,
    trace: Option<&mut Vec<TraceEvent>>,
) -> Result<(DetectionMatch, ChannelCounters), MetricsError> {
    let channel_cfg = ChannelConfig {
        seed: derive_seed(cfg.channel.seed, scene_idx as u64),
        ..cfg.channel
    };
    let mut link = ChannelState::new(channel_cfg)?;
    let t0 = scene_idx as u64 * channel_cfg.frame_period_ns();
    let ego_idx = scene
        .vehicles
        .iter()
        .position(|v| v.id == scene.ego_id)
        .expect("ego is in the scene");
    let ego_pos = scene.vehicles[ego_idx].pose.translation;

    let mut senders: Vec<usize> = (0..scene.vehicles.len()).filter(|&i| i != ego_idx).collect();
    senders.sort_by_key(|&i| scene.vehicles[i].id);
    let in_range = senders
        .iter()
        .filter(|&&i| (scene.vehicles[i].pose.translation - ego_pos).norm() <= channel_cfg.coop_range_m)
        .count()
        .max(1);

    for &i in &senders {
        let level = match choice {
            LevelChoice::Fixed(l) => l,
            LevelChoice::Adaptive => {
                let available = channel_cfg.capacity_kbps / in_range as f64;
                let s = select_level(available, &cfg.selector, None);
                link.record_selection(scene.vehicles[i].id, available, s.level, s.best_effort);
                s.level
            }
        };
        let msg = package(&observations[i], level, &cfg.shape, t0)?;
        link.admit(msg, &scene.vehicles[i].pose.translation, &ego_pos, t0)?;
    }
    let delivered = link.step(t0 + channel_cfg.latency_ns())?;
    let messages: Vec<_> = delivered.into_iter().map(|d| d.message).collect();
    let state = fuse_received(&observations[ego_idx], &messages, params)?;
    let m = match_detections(&filtered_detections(&state, cfg)?, truth, cfg.match_threshold_m)?;
    if let Some(t) = trace {
        t.extend(link.take_trace());
    }
    Ok((m, *link.counters()))
}

/// Evaluates the no-fusion baseline and each level choice on the same scenes.
///
/// Scene `i` is captured at `i` frame periods and uses a link seeded from
/// `(channel.seed, i)`, so rows are paired scene by scene.
pub fn compare_levels(scenes: &[Scene], cfg: &EvalConfig, choices: &[LevelChoice]) -> Result<EvalReport, MetricsError> {
    compare_levels_traced(scenes, cfg, choices, None)
}

/// [`compare_levels`], appending every link event to `trace` when given.
pub fn compare_levels_traced(
    scenes: &[Scene],
    cfg: &EvalConfig,
    choices: &[LevelChoice],
    mut trace: Option<&mut Vec<TraceEvent>>,
) -> Result<EvalReport, MetricsError> {
    if scenes.is_empty() {
        return Err(MetricsError::EmptyBatch);
    }
    cfg.validate()?;
    let params = cfg.fusion_params();
    let rasterize = choices
        .iter()
        .any(|c| matches!(c, LevelChoice::Fixed(FusionLevel::Bff) | LevelChoice::Adaptive));

    let mut none = RowAccumulator::new("none");
    let mut rows: Vec<RowAccumulator> = choices.iter().map(|c| RowAccumulator::new(c.label())).collect();
    for (idx, scene) in scenes.iter().enumerate() {
        let noise = scene_noise(cfg, idx);
        let observations = observe_all(scene, cfg, noise.as_ref(), rasterize)?;
        let truth = ego_ground_truth(scene, cfg)?;
        let ego_obs = observations
            .iter()
            .find(|o| o.owner == scene.ego_id)
            .expect("ego is observed");

        let baseline = EgoFusion::new(ego_obs);
        none.add_scene(&match_detections(
            &filtered_detections(&baseline, cfg)?,
            &truth,
            cfg.match_threshold_m,
        )?);

        for (choice, acc) in choices.iter().zip(rows.iter_mut()) {
            let (m, counters) = run_choice(
                scene,
                idx,
                &observations,
                &truth,
                *choice,
                cfg,
                &params,
                trace.as_deref_mut(),
            )?;
            acc.add_scene(&m);
            acc.counters.add(&counters);
        }
        log::debug!("scene {idx}: {} truth objects", truth.len());
    }

    let fps = cfg.shape.fps;
    let mut out = vec![none.finish(fps)];
    out.extend(rows.into_iter().map(|r| r.finish(fps)));
    Ok(EvalReport { fps, rows: out })
}

/// Labels of the noise-sweep rows, in order.
pub const NOISE_ROWS: [&str; 4] = ["baseline", "type1", "type2", "type1+2"];

/// Runs `choice` under no noise, localization noise only, calibration noise
/// only, and both. Every row reuses the same per-scene seeds, so the rows are
/// paired draw by draw.
pub fn noise_sweep(
    scenes: &[Scene],
    cfg: &EvalConfig,
    noise: &NoiseConfig,
    choice: LevelChoice,
) -> Result<EvalReport, MetricsError> {
    noise.validate().map_err(|e| MetricsError::InvalidConfig(e.to_string()))?;
    let variants = [
        NoiseConfig::zero(),
        noise.localization_only(),
        noise.calibration_only(),
        *noise,
    ];
    let mut rows = Vec::with_capacity(4);
    for (label, variant) in NOISE_ROWS.iter().zip(variants) {
        let run_cfg = EvalConfig {
            noise: Some(NoiseConfig {
                seed: noise.seed,
                ..variant
            }),
            ..cfg.clone()
        };
        let report = compare_levels(scenes, &run_cfg, &[choice])?;
        let mut row = report.rows.into_iter().nth(1).expect("one choice row");
        row.label = (*label).to_string();
        rows.push(row);
    }
    Ok(EvalReport { fps: cfg.shape.fps, rows })
}
