//! Synthetic multi-vehicle scenes with a ground-truth oracle.
//!
//! Each vehicle observes the objects inside its sensing range (optionally
//! blocked by nearer objects) and derives all three shareable
//! representations from the same visible set: a Gaussian-splat BEV grid,
//! one track query per object, and a reference-point set.

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bev_fusion::{BevError, BevGrid, GridSpec};
use crate::derive_seed;
use crate::geometry::{
    apply_point, invert, pose_to_transform, sample_calibration_noise, sample_localization_noise, CalibNoise,
    GeometryError, NoiseConfig, Pose, PoseNoise, Transform,
};
use crate::query_fusion::{BoxParams, TrackQuery, DEFAULT_EMBED_DIM};
use crate::refpoint_fusion::{dedup, RefPointError, RefPointSet, DEFAULT_DEDUP_EPS_M};

pub const DEFAULT_SENSING_RANGE_M: f64 = 51.2;

/// Focal length of a 1920-pixel-wide, 110° FOV camera.
pub fn nominal_focal_px() -> f64 {
    960.0 / 55f64.to_radians().tan()
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scene config: {0}")]
    InvalidConfig(String),
    #[error("could not place {what} after {attempts} attempts; world too crowded")]
    Crowded { what: &'static str, attempts: usize },
    #[error("unknown vehicle id {0}")]
    UnknownVehicle(u32),
    #[error("detection threshold must be positive, got {0}")]
    InvalidThreshold(f64),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Grid(#[from] BevError),
    #[error(transparent)]
    RefPoints(#[from] RefPointError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub num_vehicles: usize,
    pub num_objects: usize,
    /// Side of the square world, meters, centered at the origin.
    pub world_extent_m: f64,
    pub sensing_range_m: f64,
    /// Minimum center distance between two objects.
    pub min_object_gap_m: f64,
    /// Minimum distance between two vehicles, and twice the vehicle-object gap.
    pub min_vehicle_gap_m: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            num_vehicles: 10,
            num_objects: 40,
            world_extent_m: 160.0,
            sensing_range_m: DEFAULT_SENSING_RANGE_M,
            min_object_gap_m: 4.0,
            min_vehicle_gap_m: 8.0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.num_vehicles == 0 {
            return Err(ScenarioError::InvalidConfig("at least one vehicle (the ego) is required".into()));
        }
        let positive = [self.world_extent_m, self.sensing_range_m];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(ScenarioError::InvalidConfig("world extent and sensing range must be positive".into()));
        }
        if !(self.min_object_gap_m >= 0.0 && self.min_vehicle_gap_m > 0.0) {
            return Err(ScenarioError::InvalidConfig("gaps must be non-negative, vehicle gap positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: u64,
    /// World frame, meters.
    pub center: Vector3<f64>,
    /// Length, width, height.
    pub extent: Vector3<f64>,
    pub yaw: f64,
    /// m/s, world frame.
    pub velocity: Vector2<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vehicle {
    pub id: u32,
    pub pose: Pose,
    pub sensing_range_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub objects: Vec<SceneObject>,
    pub vehicles: Vec<Vehicle>,
    pub ego_id: u32,
}

impl Scene {
    pub fn vehicle(&self, id: u32) -> Result<&Vehicle, ScenarioError> {
        self.vehicles
            .iter()
            .find(|v| v.id == id)
            .ok_or(ScenarioError::UnknownVehicle(id))
    }

    pub fn ego(&self) -> &Vehicle {
        self.vehicle(self.ego_id).expect("scene has its ego vehicle")
    }

    /// Centers of objects inside `spec`'s square around `vehicle_id`, in that
    /// vehicle's frame.
    pub fn ground_truth(&self, vehicle_id: u32, spec: &GridSpec) -> Result<Vec<(u64, Vector3<f64>)>, ScenarioError> {
        let world_to_local = invert(&pose_to_transform(&self.vehicle(vehicle_id)?.pose)?);
        Ok(self
            .objects
            .iter()
            .map(|o| (o.id, apply_point(&world_to_local, &o.center)))
            .filter(|(_, p)| spec.contains(p.x, p.y))
            .collect())
    }
}

const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;

/// Deterministic random scene. Vehicle 0 is the ego.
pub fn generate_scene(seed: u64, cfg: &SceneConfig) -> Result<Scene, ScenarioError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = cfg.world_extent_m / 2.0;
    let mut vehicles: Vec<Vehicle> = Vec::with_capacity(cfg.num_vehicles);
    for id in 0..cfg.num_vehicles {
        let mut placed = false;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let p = Vector2::new(rng.random_range(-half..half), rng.random_range(-half..half));
            if vehicles
                .iter()
                .all(|v| (v.pose.translation.xy() - p).norm() >= cfg.min_vehicle_gap_m)
            {
                let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
                vehicles.push(Vehicle {
                    id: id as u32,
                    pose: Pose::from_xyz_yaw(p.x, p.y, 0.0, yaw),
                    sensing_range_m: cfg.sensing_range_m,
                });
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(ScenarioError::Crowded {
                what: "vehicle",
                attempts: MAX_PLACEMENT_ATTEMPTS,
            });
        }
    }

    let speed = Normal::new(0.0, 5.0).expect("valid normal");
    let mut objects: Vec<SceneObject> = Vec::with_capacity(cfg.num_objects);
    for id in 0..cfg.num_objects {
        let mut placed = false;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let p = Vector2::new(rng.random_range(-half..half), rng.random_range(-half..half));
            let clear_of_objects = objects
                .iter()
                .all(|o| (o.center.xy() - p).norm() >= cfg.min_object_gap_m);
            let clear_of_vehicles = vehicles
                .iter()
                .all(|v| (v.pose.translation.xy() - p).norm() >= cfg.min_vehicle_gap_m / 2.0);
            if clear_of_objects && clear_of_vehicles {
                let extent = Vector3::new(
                    rng.random_range(3.8..5.0),
                    rng.random_range(1.7..2.1),
                    rng.random_range(1.4..1.8),
                );
                let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
                let velocity = Vector2::new(speed.sample(&mut rng), speed.sample(&mut rng));
                objects.push(SceneObject {
                    id: id as u64,
                    center: Vector3::new(p.x, p.y, extent.z / 2.0),
                    extent,
                    yaw,
                    velocity,
                });
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(ScenarioError::Crowded {
                what: "object",
                attempts: MAX_PLACEMENT_ATTEMPTS,
            });
        }
    }
    Ok(Scene {
        objects,
        vehicles,
        ego_id: 0,
    })
}

/// How observations are rasterized and embedded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObservationConfig {
    pub grid: GridSpec,
    pub embed_dim: usize,
    pub dedup_eps_m: f64,
    /// Skip the BEV grid (left empty) when no BEV fusion is needed.
    pub rasterize: bool,
}

impl Default for ObservationConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            embed_dim: DEFAULT_EMBED_DIM,
            dedup_eps_m: DEFAULT_DEDUP_EPS_M,
            rasterize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisibleObject {
    pub id: u64,
    /// Owner frame, including any calibration noise.
    pub position: Vector3<f64>,
    pub extent: Vector3<f64>,
    pub yaw: f64,
    pub range_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub owner: u32,
    pub true_pose: Pose,
    /// Pose the owner believes it has; differs from `true_pose` under
    /// localization noise.
    pub reported_pose: Pose,
    pub visible: Vec<VisibleObject>,
    pub grid: BevGrid,
    pub queries: Vec<TrackQuery>,
    pub refpoints: RefPointSet,
    pub calibration: Option<CalibNoise>,
}

/// Whether the open segment `a -> b` crosses the footprint rectangle of `obj`
/// (2-D, in the frame both are expressed in).
pub fn segment_hits_footprint(a: Vector2<f64>, b: Vector2<f64>, center: Vector2<f64>, extent: Vector2<f64>, yaw: f64) -> bool {
    let (s, c) = yaw.sin_cos();
    let to_local = |p: Vector2<f64>| {
        let d = p - center;
        Vector2::new(c * d.x + s * d.y, -s * d.x + c * d.y)
    };
    let (p0, p1) = (to_local(a), to_local(b));
    let half = extent / 2.0;
    let dir = p1 - p0;
    // Liang-Barsky clipping against the axis-aligned box.
    let mut t0: f64 = 0.0;
    let mut t1: f64 = 1.0;
    for axis in 0..2 {
        let (p, d, h) = (p0[axis], dir[axis], half[axis]);
        if d.abs() < 1e-15 {
            if p < -h || p > h {
                return false;
            }
            continue;
        }
        let (mut ta, mut tb) = ((-h - p) / d, (h - p) / d);
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
        if t0 > t1 {
            return false;
        }
    }
    true
}

/// Deterministic embedding of an object: entry 0 carries the id, the rest is a
/// hash-seeded pseudo-random vector in [-1, 1) keyed by id and 1 m-quantized
/// position.
pub fn object_embedding(id: u64, position: &Vector3<f64>, dim: usize) -> Vec<f32> {
    let qx = position.x.round() as i64 as u64;
    let qy = position.y.round() as i64 as u64;
    let key = derive_seed(derive_seed(id, qx), qy);
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    (0..dim)
        .map(|i| if i == 0 { id as f32 } else { rng.random_range(-1.0f32..1.0) })
        .collect()
}

/// Inverse of the id slot of [`object_embedding`].
pub fn embedding_object_id(embedding: &[f32]) -> Option<u64> {
    embedding.first().map(|v| v.round() as u64)
}

fn channel_gain(c: usize) -> f32 {
    if c == 0 {
        1.0
    } else {
        let h = derive_seed(c as u64, 0xB3F_6A1D);
        0.5 + 0.5 * ((h >> 11) as f64 / (1u64 << 53) as f64) as f32
    }
}

/// Query confidence: 1 at the sensor, 0.5 at the edge of sensing range.
fn range_score(range: f64, sensing_range: f64) -> f32 {
    (1.0 - 0.5 * (range / sensing_range)).clamp(0.0, 1.0) as f32
}

fn rasterize(spec: &GridSpec, visible: &[VisibleObject], sensing_range: f64) -> Result<BevGrid, BevError> {
    let mut grid = BevGrid::empty(*spec)?;
    let mut heat = vec![0f32; spec.cells()];
    for o in visible {
        let sigma = 0.5 * o.extent.x.max(o.extent.y);
        let reach = 3.0 * sigma;
        let (x, y) = (o.position.x, o.position.y);
        let cell = spec.cell_size();
        let (rv, cv) = spec.continuous_index(x, y);
        let span = (reach / cell).ceil() as i64 + 1;
        let (r_mid, c_mid) = (rv.round() as i64, cv.round() as i64);
        for r in (r_mid - span).max(0)..=(r_mid + span).min(spec.height as i64 - 1) {
            for c in (c_mid - span).max(0)..=(c_mid + span).min(spec.width as i64 - 1) {
                let (cx, cy) = spec.cell_center(r as usize, c as usize);
                let d2 = (cx - x).powi(2) + (cy - y).powi(2);
                if d2 > reach * reach {
                    continue;
                }
                let v = (-d2 / (2.0 * sigma * sigma)).exp() as f32;
                let idx = r as usize * spec.width + c as usize;
                heat[idx] = heat[idx].max(v);
            }
        }
    }
    let gains: Vec<f32> = (0..spec.channels).map(channel_gain).collect();
    for row in 0..spec.height {
        for col in 0..spec.width {
            let (cx, cy) = spec.cell_center(row, col);
            if cx.hypot(cy) > sensing_range {
                continue;
            }
            let idx = row * spec.width + col;
            grid.set_valid(row, col, true);
            let h = heat[idx];
            if h > 0.0 {
                for (v, g) in grid.cell_mut(idx).iter_mut().zip(&gains) {
                    *v = h * g;
                }
            }
        }
    }
    Ok(grid)
}

/// Per-vehicle noise streams: localization and calibration draw from
/// independent seeds, so dropping one noise type leaves the other's draws
/// unchanged.
fn noise_rngs(noise: &NoiseConfig, vehicle_id: u32) -> (ChaCha8Rng, ChaCha8Rng) {
    let base = derive_seed(noise.seed, u64::from(vehicle_id));
    (
        ChaCha8Rng::seed_from_u64(derive_seed(base, 1)),
        ChaCha8Rng::seed_from_u64(derive_seed(base, 2)),
    )
}

/// Shifts a point by the intrinsic jitter: focal error scales range, principal
/// point error shifts laterally and vertically, both by `range / focal` m/px.
fn intrinsic_offset(p: &Vector3<f64>, calib: &CalibNoise) -> Vector3<f64> {
    let range = p.xy().norm();
    if range == 0.0 {
        return Vector3::zeros();
    }
    let f = nominal_focal_px();
    let along = p.xy() / range;
    let lateral = Vector2::new(-along.y, along.x);
    let m_per_px = range / f;
    let planar = along * (calib.focal_jitter[0] * m_per_px) + lateral * (calib.principal_jitter[0] * m_per_px);
    Vector3::new(planar.x, planar.y, calib.principal_jitter[1] * m_per_px)
}

/// What `vehicle_id` perceives of `scene`.
pub fn observe(
    scene: &Scene,
    vehicle_id: u32,
    occlusion: bool,
    noise: Option<&NoiseConfig>,
    cfg: &ObservationConfig,
) -> Result<Observation, ScenarioError> {
    let vehicle = scene.vehicle(vehicle_id)?;
    let to_world = pose_to_transform(&vehicle.pose)?;
    let world_to_local = invert(&to_world);
    let vehicle_yaw = vehicle.pose.yaw();
    let range = vehicle.sensing_range_m;

    let local: Vec<(Vector3<f64>, f64)> = scene
        .objects
        .iter()
        .map(|o| {
            let p = apply_point(&world_to_local, &o.center);
            (p, p.xy().norm())
        })
        .collect();

    let mut visible_idx = Vec::new();
    for (i, (p, d)) in local.iter().enumerate() {
        if *d > range {
            continue;
        }
        let blocked = occlusion
            && scene.objects.iter().enumerate().any(|(j, other)| {
                j != i
                    && local[j].1 < *d
                    && segment_hits_footprint(
                        Vector2::zeros(),
                        p.xy(),
                        local[j].0.xy(),
                        other.extent.xy(),
                        other.yaw - vehicle_yaw,
                    )
            });
        if !blocked {
            visible_idx.push(i);
        }
    }

    let (reported_pose, calibration) = match noise {
        Some(n) => {
            n.validate()?;
            let (mut loc_rng, mut calib_rng) = noise_rngs(n, vehicle_id);
            let loc = sample_localization_noise(n, &mut loc_rng);
            let calib = sample_calibration_noise(n, &mut calib_rng);
            // Zero draws leave the pose and positions bit-identical to the noiseless case.
            let reported = if loc == PoseNoise::zero() {
                vehicle.pose
            } else {
                vehicle.pose.perturbed(&loc.transform())?
            };
            let calib_zero = calib.extrinsic == PoseNoise::zero()
                && calib.focal_jitter == [0.0; 2]
                && calib.principal_jitter == [0.0; 2];
            (reported, (!calib_zero).then_some(calib))
        }
        None => (vehicle.pose, None),
    };
    let calib_t: Transform = calibration.map(|c| c.extrinsic.transform()).unwrap_or_default();

    let visible: Vec<VisibleObject> = visible_idx
        .iter()
        .map(|&i| {
            let o = &scene.objects[i];
            let (p, d) = local[i];
            let mut position = p;
            let mut yaw = o.yaw - vehicle_yaw;
            if let Some(c) = &calibration {
                position = apply_point(&calib_t, &p) + intrinsic_offset(&p, c);
                yaw += c.extrinsic.yaw;
            }
            VisibleObject {
                id: o.id,
                position,
                extent: o.extent,
                yaw,
                range_m: d,
            }
        })
        .collect();

    let grid = if cfg.rasterize {
        rasterize(&cfg.grid, &visible, range)?
    } else {
        BevGrid::empty(cfg.grid)?
    };
    let queries = visible
        .iter()
        .map(|v| TrackQuery {
            embedding: object_embedding(v.id, &v.position, cfg.embed_dim),
            ref_point: v.position,
            score: range_score(v.range_m, range),
            bbox: BoxParams {
                center: v.position,
                extent: v.extent,
                yaw: v.yaw,
            },
            track_id: v.id,
        })
        .collect();
    let centers: Vec<Vector3<f64>> = visible.iter().map(|v| v.position).collect();
    let refpoints = dedup(&centers, cfg.dedup_eps_m)?;

    Ok(Observation {
        owner: vehicle_id,
        true_pose: vehicle.pose,
        reported_pose,
        visible,
        grid,
        queries,
        refpoints,
        calibration,
    })
}

/// A fused representation handed to the detection oracle.
#[derive(Debug, Clone, Copy)]
pub enum FusedView<'a> {
    Grid(&'a BevGrid),
    Queries(&'a [TrackQuery]),
    RefPoints(&'a RefPointSet),
}

/// Object positions recovered from a fused representation.
///
/// Grids: valid cells of channel 0 above `threshold` that are 3x3 local
/// maxima (ties go to the lower flat index). Queries: ref points with score at
/// least `threshold`. Reference points: all points.
pub fn detect_from_fused(view: FusedView<'_>, threshold: f64) -> Result<Vec<Vector3<f64>>, ScenarioError> {
    if threshold.is_nan() || threshold <= 0.0 {
        return Err(ScenarioError::InvalidThreshold(threshold));
    }
    Ok(match view {
        FusedView::Grid(grid) => grid_peaks(grid, threshold),
        FusedView::Queries(qs) => qs
            .iter()
            .filter(|q| f64::from(q.score) >= threshold)
            .map(|q| q.ref_point)
            .collect(),
        FusedView::RefPoints(set) => set.points().to_vec(),
    })
}

fn grid_peaks(grid: &BevGrid, threshold: f64) -> Vec<Vector3<f64>> {
    let spec = *grid.spec();
    let (h, w) = (spec.height as i64, spec.width as i64);
    let mut out = Vec::new();
    for row in 0..spec.height {
        for col in 0..spec.width {
            if !grid.is_valid(row, col) {
                continue;
            }
            let v = grid.get(row, col, 0);
            if f64::from(v) <= threshold {
                continue;
            }
            let own = row * spec.width + col;
            let mut is_peak = true;
            'scan: for dr in -1..=1i64 {
                for dc in -1..=1i64 {
                    if dr == 0 && dc == 0 {
                        continue;
                    }
                    let (r, c) = (row as i64 + dr, col as i64 + dc);
                    if r < 0 || c < 0 || r >= h || c >= w || !grid.is_valid(r as usize, c as usize) {
                        continue;
                    }
                    let n = grid.get(r as usize, c as usize, 0);
                    let idx = r as usize * spec.width + c as usize;
                    if n > v || (n == v && idx < own) {
                        is_peak = false;
                        break 'scan;
                    }
                }
            }
            if is_peak {
                let (x, y) = spec.cell_center(row, col);
                out.push(Vector3::new(x, y, 0.0));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_obs_cfg() -> ObservationConfig {
        ObservationConfig {
            grid: GridSpec::new(200, 200, 4, 102.4).unwrap(),
            embed_dim: 8,
            ..Default::default()
        }
    }

    fn car(id: u64, x: f64, y: f64, length: f64) -> SceneObject {
        SceneObject {
            id,
            center: Vector3::new(x, y, 0.8),
            extent: Vector3::new(length, 2.0, 1.6),
            yaw: 0.0,
            velocity: Vector2::zeros(),
        }
    }

    fn one_vehicle(objects: Vec<SceneObject>) -> Scene {
        Scene {
            objects,
            vehicles: vec![Vehicle {
                id: 0,
                pose: Pose::identity(),
                sensing_range_m: 40.0,
            }],
            ego_id: 0,
        }
    }

    #[test]
    fn scene_counts_and_determinism() {
        let cfg = SceneConfig {
            num_objects: 0,
            ..Default::default()
        };
        assert!(generate_scene(1, &cfg).unwrap().objects.is_empty());
        let cfg = SceneConfig {
            num_vehicles: 10,
            num_objects: 40,
            ..Default::default()
        };
        let a = generate_scene(7, &cfg).unwrap();
        assert_eq!(a.objects.len(), 40);
        assert_eq!(a.vehicles.len(), 10);
        assert_eq!(a, generate_scene(7, &cfg).unwrap());
        assert_ne!(a, generate_scene(8, &cfg).unwrap());
        for (i, v) in a.vehicles.iter().enumerate() {
            for w in &a.vehicles[i + 1..] {
                assert!((v.pose.translation - w.pose.translation).norm() >= cfg.min_vehicle_gap_m);
            }
        }
    }

    #[test]
    fn crowded_world_fails_cleanly() {
        let cfg = SceneConfig {
            num_vehicles: 50,
            world_extent_m: 10.0,
            ..Default::default()
        };
        assert!(matches!(generate_scene(0, &cfg), Err(ScenarioError::Crowded { .. })));
    }

    #[test]
    fn range_gate() {
        let scene = one_vehicle(vec![car(0, 10.0, 0.0, 4.0), car(1, 41.0, 0.0, 4.0)]);
        let obs = observe(&scene, 0, true, None, &small_obs_cfg()).unwrap();
        let ids: Vec<u64> = obs.visible.iter().map(|v| v.id).collect();
        assert_eq!(ids, vec![0]);
    }

    #[test]
    fn occlusion_on_exact_ray() {
        let scene = one_vehicle(vec![car(0, 10.0, 0.0, 6.0), car(1, 20.0, 0.0, 4.0)]);
        let on = observe(&scene, 0, true, None, &small_obs_cfg()).unwrap();
        assert_eq!(on.visible.iter().map(|v| v.id).collect::<Vec<_>>(), vec![0]);
        let off = observe(&scene, 0, false, None, &small_obs_cfg()).unwrap();
        assert_eq!(off.visible.len(), 2);
    }

    #[test]
    fn segment_footprint_cases() {
        let hit = segment_hits_footprint(
            Vector2::zeros(),
            Vector2::new(10.0, 0.0),
            Vector2::new(5.0, 0.0),
            Vector2::new(2.0, 2.0),
            0.3,
        );
        assert!(hit);
        let miss = segment_hits_footprint(
            Vector2::zeros(),
            Vector2::new(10.0, 0.0),
            Vector2::new(5.0, 3.0),
            Vector2::new(2.0, 2.0),
            0.0,
        );
        assert!(!miss);
        let short = segment_hits_footprint(
            Vector2::zeros(),
            Vector2::new(3.0, 0.0),
            Vector2::new(5.0, 0.0),
            Vector2::new(2.0, 2.0),
            0.0,
        );
        assert!(!short);
    }

    #[test]
    fn representations_agree() {
        let scene = generate_scene(3, &SceneConfig::default()).unwrap();
        let obs = observe(&scene, 0, true, None, &small_obs_cfg()).unwrap();
        assert_eq!(obs.queries.len(), obs.visible.len());
        assert_eq!(obs.refpoints.len(), obs.visible.len());
        for (q, v) in obs.queries.iter().zip(&obs.visible) {
            assert_eq!(embedding_object_id(&q.embedding), Some(v.id));
            assert_eq!(q.ref_point, v.position);
        }
    }

    #[test]
    fn unknown_vehicle_is_an_error() {
        let scene = one_vehicle(vec![]);
        assert!(matches!(
            observe(&scene, 5, true, None, &small_obs_cfg()),
            Err(ScenarioError::UnknownVehicle(5))
        ));
    }

    #[test]
    fn empty_grid_has_no_detections() {
        let grid = BevGrid::observed_zeros(GridSpec::new(10, 10, 1, 10.0).unwrap()).unwrap();
        assert!(detect_from_fused(FusedView::Grid(&grid), 0.5).unwrap().is_empty());
        assert!(detect_from_fused(FusedView::Grid(&grid), 0.0).is_err());
    }

    #[test]
    fn single_splat_peak_is_within_half_a_cell() {
        let scene = one_vehicle(vec![car(0, 12.3, -7.9, 4.0)]);
        let cfg = small_obs_cfg();
        let obs = observe(&scene, 0, true, None, &cfg).unwrap();
        let dets = detect_from_fused(FusedView::Grid(&obs.grid), 0.5).unwrap();
        assert_eq!(dets.len(), 1);
        let half = cfg.grid.cell_size() / 2.0;
        assert!((dets[0].x - 12.3).abs() <= half + 1e-9);
        assert!((dets[0].y + 7.9).abs() <= half + 1e-9);
    }

    #[test]
    fn refpoint_detection_passes_everything_through() {
        let set = RefPointSet::new(vec![Vector3::new(1.0, 0.0, 0.0), Vector3::new(9.0, 0.0, 0.0)], 0.5).unwrap();
        assert_eq!(detect_from_fused(FusedView::RefPoints(&set), 1.0).unwrap(), set.points());
    }

    #[test]
    fn noise_streams_are_paired() {
        let scene = generate_scene(5, &SceneConfig::default()).unwrap();
        let cfg = ObservationConfig {
            rasterize: false,
            ..small_obs_cfg()
        };
        let full = NoiseConfig {
            seed: 11,
            ..Default::default()
        };
        let both = observe(&scene, 1, true, Some(&full), &cfg).unwrap();
        let loc = observe(&scene, 1, true, Some(&full.localization_only()), &cfg).unwrap();
        let cal = observe(&scene, 1, true, Some(&full.calibration_only()), &cfg).unwrap();
        assert_eq!(both.reported_pose, loc.reported_pose);
        assert_eq!(both.visible, cal.visible);
        assert_eq!(cal.reported_pose, scene.vehicles[1].pose);
    }

    #[test]
    fn focal_matches_camera_geometry() {
        assert!((nominal_focal_px() - 672.2).abs() < 0.1);
    }
}
