//! Cooperative message (C.M.) codec and bandwidth accounting.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! offset  size  field
//!      0     4  magic "CFCM"
//!      4     1  version (1)
//!      5     1  level (0 = RPF, 1 = QFF, 2 = BFF)
//!      6     4  sender_id u32
//!     10     8  frame timestamp, ns, u64
//!     18    28  pose: tx, ty, tz, qw, qx, qy, qz as f32
//!     46     8  payload length u64
//!     54     -  payload
//! ```
//!
//! Payloads:
//!
//! - RPF: point count u32, then `x, y, z` f32 per point. Trailing zero-filled
//!   points pad the message to its slot budget.
//! - QFF: query count u32, embedding width D u32, then per query: D embedding
//!   floats, ref point (3), score, box center (3), box extent (3), box yaw, and
//!   the track id as u64. Trailing zero-filled records pad to the slot budget.
//! - BFF: the grid dump format of [`BevGrid::to_dump_bytes`]; the metric extent
//!   is the protocol-wide [`DEFAULT_BEV_EXTENT_M`].
//!
//! Scalars are 32-bit on the wire, so a message survives `decode(encode(m))`
//! bit-exactly when its values are f32-representable, and
//! `encode(decode(b)) == b` holds for any valid `b`.

use std::fmt;

use nalgebra::{Quaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bev_fusion::{dump_len, BevError, BevGrid, GridSpec, DEFAULT_BEV_EXTENT_M};
use crate::geometry::{GeometryError, Pose};
use crate::query_fusion::{BoxParams, TrackQuery};
use crate::refpoint_fusion::{RefPointSet, DEFAULT_DEDUP_EPS_M};

pub const MAGIC: &[u8; 4] = b"CFCM";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 54;

const QUERY_FIXED_BYTES: usize = 11 * 4 + 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WireError {
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    UnsupportedVersion(u8),
    #[error("unknown fusion level {0}")]
    UnknownLevel(u8),
    #[error("truncated: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("payload does not match level {level}: {reason}")]
    PayloadMismatch { level: FusionLevel, reason: String },
    #[error("invalid sender pose: {0}")]
    InvalidPose(#[from] GeometryError),
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("invalid message: {0}")]
    InvalidMessage(String),
}

/// Fusion level, ordered by fidelity and cost: RPF < QFF < BFF.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionLevel {
    Rpf,
    Qff,
    Bff,
}

impl FusionLevel {
    pub const ALL: [FusionLevel; 3] = [FusionLevel::Rpf, FusionLevel::Qff, FusionLevel::Bff];

    pub fn code(self) -> u8 {
        match self {
            FusionLevel::Rpf => 0,
            FusionLevel::Qff => 1,
            FusionLevel::Bff => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(FusionLevel::Rpf),
            1 => Some(FusionLevel::Qff),
            2 => Some(FusionLevel::Bff),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FusionLevel::Rpf => "rpf",
            FusionLevel::Qff => "qff",
            FusionLevel::Bff => "bff",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rpf" => Some(FusionLevel::Rpf),
            "qff" => Some(FusionLevel::Qff),
            "bff" => Some(FusionLevel::Bff),
            _ => None,
        }
    }
}

impl fmt::Display for FusionLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name().to_ascii_uppercase())
    }
}

/// Level-specific content of a cooperative message.
///
/// `slots` is the number of entries transmitted; entries past the real ones
/// are zero padding so a sender can keep a fixed message size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Payload {
    RefPoints { points: RefPointSet, slots: u32 },
    Queries { dim: u32, queries: Vec<TrackQuery>, slots: u32 },
    Bev(BevGrid),
}

impl Payload {
    pub fn level(&self) -> FusionLevel {
        match self {
            Payload::RefPoints { .. } => FusionLevel::Rpf,
            Payload::Queries { .. } => FusionLevel::Qff,
            Payload::Bev(_) => FusionLevel::Bff,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoopMessage {
    pub sender_id: u32,
    /// Frame capture time, ns.
    pub frame_timestamp: u64,
    pub sender_pose: Pose,
    pub payload: Payload,
}

impl CoopMessage {
    pub fn new(sender_id: u32, frame_timestamp: u64, sender_pose: Pose, payload: Payload) -> Result<Self, WireError> {
        let m = Self {
            sender_id,
            frame_timestamp,
            sender_pose,
            payload,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn level(&self) -> FusionLevel {
        self.payload.level()
    }

    pub fn validate(&self) -> Result<(), WireError> {
        self.sender_pose.validate()?;
        match &self.payload {
            Payload::RefPoints { points, slots } => {
                if (*slots as usize) < points.len() {
                    return Err(WireError::InvalidMessage(format!(
                        "{} points exceed {} slots",
                        points.len(),
                        slots
                    )));
                }
            }
            Payload::Queries { dim, queries, slots } => {
                if (*slots as usize) < queries.len() {
                    return Err(WireError::InvalidMessage(format!(
                        "{} queries exceed {} slots",
                        queries.len(),
                        slots
                    )));
                }
                if let Some(q) = queries.iter().find(|q| q.embedding.len() != *dim as usize) {
                    return Err(WireError::InvalidMessage(format!(
                        "query {} has embedding width {}, message declares {}",
                        q.track_id,
                        q.embedding.len(),
                        dim
                    )));
                }
            }
            Payload::Bev(grid) => {
                if grid.spec().extent_m != DEFAULT_BEV_EXTENT_M {
                    return Err(WireError::InvalidMessage(format!(
                        "grid extent {} m differs from the protocol extent {} m",
                        grid.spec().extent_m,
                        DEFAULT_BEV_EXTENT_M
                    )));
                }
            }
        }
        Ok(())
    }
}

fn payload_len(payload: &Payload) -> usize {
    match payload {
        Payload::RefPoints { slots, .. } => 4 + 12 * *slots as usize,
        Payload::Queries { dim, slots, .. } => 8 + query_record_len(*dim as usize) * *slots as usize,
        Payload::Bev(grid) => dump_len(grid.spec()),
    }
}

fn query_record_len(dim: usize) -> usize {
    4 * dim + QUERY_FIXED_BYTES
}

/// Exact encoded size, without encoding.
pub fn encoded_len(m: &CoopMessage) -> usize {
    HEADER_LEN + payload_len(&m.payload)
}

fn put_f32(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&(v as f32).to_le_bytes());
}

fn put_vec3(out: &mut Vec<u8>, v: &Vector3<f64>) {
    put_f32(out, v.x);
    put_f32(out, v.y);
    put_f32(out, v.z);
}

pub fn encode(m: &CoopMessage) -> Vec<u8> {
    let mut out = Vec::with_capacity(encoded_len(m));
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(m.level().code());
    out.extend_from_slice(&m.sender_id.to_le_bytes());
    out.extend_from_slice(&m.frame_timestamp.to_le_bytes());
    put_vec3(&mut out, &m.sender_pose.translation);
    let q = &m.sender_pose.rotation;
    for v in [q.w, q.i, q.j, q.k] {
        put_f32(&mut out, v);
    }
    out.extend_from_slice(&(payload_len(&m.payload) as u64).to_le_bytes());
    match &m.payload {
        Payload::RefPoints { points, slots } => {
            out.extend_from_slice(&(points.len() as u32).to_le_bytes());
            for p in points.points() {
                put_vec3(&mut out, p);
            }
            out.resize(out.len() + 12 * (*slots as usize - points.len()), 0);
        }
        Payload::Queries { dim, queries, slots } => {
            out.extend_from_slice(&(queries.len() as u32).to_le_bytes());
            out.extend_from_slice(&dim.to_le_bytes());
            for q in queries {
                for v in &q.embedding {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                put_vec3(&mut out, &q.ref_point);
                out.extend_from_slice(&q.score.to_le_bytes());
                put_vec3(&mut out, &q.bbox.center);
                put_vec3(&mut out, &q.bbox.extent);
                put_f32(&mut out, q.bbox.yaw);
                out.extend_from_slice(&q.track_id.to_le_bytes());
            }
            let pad = query_record_len(*dim as usize) * (*slots as usize - queries.len());
            out.resize(out.len() + pad, 0);
        }
        Payload::Bev(grid) => grid.write_dump(&mut out),
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        let end = self.pos.checked_add(n).ok_or(WireError::Truncated {
            needed: usize::MAX,
            available: self.bytes.len(),
        })?;
        if end > self.bytes.len() {
            return Err(WireError::Truncated {
                needed: end,
                available: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32, WireError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, WireError> {
        Ok(f64::from(self.f32()?))
    }

    fn vec3(&mut self) -> Result<Vector3<f64>, WireError> {
        Ok(Vector3::new(self.f64()?, self.f64()?, self.f64()?))
    }
}

fn mismatch(level: FusionLevel, reason: impl Into<String>) -> WireError {
    WireError::PayloadMismatch {
        level,
        reason: reason.into(),
    }
}

pub fn decode(bytes: &[u8]) -> Result<CoopMessage, WireError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
    if &magic != MAGIC {
        return Err(WireError::BadMagic(magic));
    }
    let version = r.take(1)?[0];
    if version != VERSION {
        return Err(WireError::UnsupportedVersion(version));
    }
    let code = r.take(1)?[0];
    let level = FusionLevel::from_code(code).ok_or(WireError::UnknownLevel(code))?;
    let sender_id = r.u32()?;
    let frame_timestamp = r.u64()?;
    let translation = r.vec3()?;
    let (w, x, y, z) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
    let sender_pose = Pose::new(translation, Quaternion::new(w, x, y, z))?;
    let len = usize::try_from(r.u64()?).map_err(|_| mismatch(level, "payload length overflows"))?;
    let body = r.take(len)?;
    if r.pos != bytes.len() {
        return Err(WireError::TrailingBytes(bytes.len() - r.pos));
    }
    let payload = decode_payload(level, body)?;
    let m = CoopMessage {
        sender_id,
        frame_timestamp,
        sender_pose,
        payload,
    };
    m.validate()?;
    Ok(m)
}

fn slots_from_len(level: FusionLevel, remaining: usize, record: usize, count: usize) -> Result<u32, WireError> {
    if !remaining.is_multiple_of(record) {
        return Err(mismatch(level, format!("{remaining} body bytes is not a whole number of {record}-byte records")));
    }
    let slots = remaining / record;
    if slots < count {
        return Err(mismatch(level, format!("count {count} exceeds {slots} transmitted records")));
    }
    u32::try_from(slots).map_err(|_| mismatch(level, "slot count overflows u32"))
}

fn decode_payload(level: FusionLevel, body: &[u8]) -> Result<Payload, WireError> {
    let mut r = Reader { bytes: body, pos: 0 };
    let remap = |e: WireError| match e {
        WireError::Truncated { .. } => mismatch(level, "payload shorter than its schema"),
        other => other,
    };
    match level {
        FusionLevel::Rpf => {
            let count = r.u32().map_err(remap)? as usize;
            let slots = slots_from_len(level, body.len() - 4, 12, count)?;
            let points = (0..count).map(|_| r.vec3()).collect::<Result<Vec<_>, _>>()?;
            if body[r.pos..].iter().any(|b| *b != 0) {
                return Err(mismatch(level, "non-zero padding"));
            }
            Ok(Payload::RefPoints {
                points: RefPointSet::from_points_unchecked(points, DEFAULT_DEDUP_EPS_M),
                slots,
            })
        }
        FusionLevel::Qff => {
            let count = r.u32().map_err(remap)? as usize;
            let dim = r.u32().map_err(remap)?;
            let record = query_record_len(dim as usize);
            let slots = slots_from_len(level, body.len() - 8, record, count)?;
            let mut queries = Vec::with_capacity(count);
            for _ in 0..count {
                let embedding = (0..dim).map(|_| r.f32()).collect::<Result<Vec<_>, _>>()?;
                let ref_point = r.vec3()?;
                let score = r.f32()?;
                let center = r.vec3()?;
                let extent = r.vec3()?;
                let yaw = r.f64()?;
                let track_id = r.u64()?;
                queries.push(TrackQuery {
                    embedding,
                    ref_point,
                    score,
                    bbox: BoxParams { center, extent, yaw },
                    track_id,
                });
            }
            if body[r.pos..].iter().any(|b| *b != 0) {
                return Err(mismatch(level, "non-zero padding"));
            }
            Ok(Payload::Queries { dim, queries, slots })
        }
        FusionLevel::Bff => {
            let (grid, used) = BevGrid::from_dump_bytes(body, DEFAULT_BEV_EXTENT_M).map_err(|e| match e {
                BevError::Truncated { .. } => mismatch(level, "payload shorter than the grid it declares"),
                other => mismatch(level, other.to_string()),
            })?;
            if used != body.len() {
                return Err(mismatch(level, format!("{} bytes beyond the grid", body.len() - used)));
            }
            Ok(Payload::Bev(grid))
        }
    }
}

/// Fixed message shapes used for bandwidth accounting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShapeConfig {
    pub bev: GridSpec,
    /// Query slots per message.
    pub query_count: u32,
    /// Floats per query counted on the link: embedding + ref point + score.
    pub query_floats: u32,
    /// Reference-point slots per message.
    pub refpoint_count: u32,
    pub fps: u32,
}

impl Default for ShapeConfig {
    fn default() -> Self {
        Self {
            bev: GridSpec::default(),
            query_count: 900,
            query_floats: 516,
            refpoint_count: 900,
            fps: 5,
        }
    }
}

impl ShapeConfig {
    pub fn validate(&self) -> Result<(), String> {
        self.bev.validate().map_err(|e| e.to_string())?;
        if self.query_count == 0 || self.query_floats == 0 || self.refpoint_count == 0 || self.fps == 0 {
            return Err("shape counts and fps must be positive".into());
        }
        Ok(())
    }

    /// Embedding width implied by `query_floats` (ref point and score take 4).
    pub fn embed_dim(&self) -> usize {
        self.query_floats.saturating_sub(4) as usize
    }

    /// Float32 scalars one message of `level` carries.
    pub fn payload_floats(&self, level: FusionLevel) -> u64 {
        match level {
            FusionLevel::Rpf => u64::from(self.refpoint_count) * 3,
            FusionLevel::Qff => u64::from(self.query_count) * u64::from(self.query_floats),
            FusionLevel::Bff => self.bev.len() as u64,
        }
    }
}

/// Link rate of one sender stream at `level`, KB/s with KB = 1024 bytes.
pub fn bandwidth_kbps_exact(level: FusionLevel, cfg: &ShapeConfig) -> f64 {
    (cfg.payload_floats(level) * 4 * u64::from(cfg.fps)) as f64 / 1024.0
}

/// [`bandwidth_kbps_exact`] rounded to the nearest KB/s.
pub fn bandwidth_kbps(level: FusionLevel, cfg: &ShapeConfig) -> u64 {
    bandwidth_kbps_exact(level, cfg).round() as u64
}

/// Float-scalar bytes a message counts toward bandwidth: embeddings, ref
/// points and scores for queries, coordinates for points, grid cells for BEV.
/// Headers, box parameters, ids and the validity mask are not counted.
pub fn accounted_payload_bytes(m: &CoopMessage) -> u64 {
    match &m.payload {
        Payload::RefPoints { slots, .. } => u64::from(*slots) * 12,
        Payload::Queries { dim, slots, .. } => u64::from(*slots) * (u64::from(*dim) + 4) * 4,
        Payload::Bev(grid) => crate::bev_fusion::grid_payload_bytes(grid.spec()),
    }
}

/// A small fixed message per level, exactly representable on the wire. Used
/// for golden files and examples.
pub fn example_message(level: FusionLevel) -> CoopMessage {
    let pose = Pose::new(
        Vector3::new(12.5, -3.25, 0.5),
        Quaternion::new(0.875, 0.0, 0.0, -(1.0f32 - 0.875f32 * 0.875f32).sqrt() as f64),
    )
    .expect("unit quaternion");
    let payload = match level {
        FusionLevel::Rpf => Payload::RefPoints {
            points: RefPointSet::from_points_unchecked(
                vec![Vector3::new(1.0, 2.0, 0.5), Vector3::new(-7.75, 30.125, 0.75)],
                DEFAULT_DEDUP_EPS_M,
            ),
            slots: 4,
        },
        FusionLevel::Qff => Payload::Queries {
            dim: 4,
            queries: vec![TrackQuery {
                embedding: vec![0.5, -1.25, 3.0, 0.0],
                ref_point: Vector3::new(4.0, -2.5, 0.75),
                score: 0.875,
                bbox: BoxParams {
                    center: Vector3::new(4.0, -2.5, 0.75),
                    extent: Vector3::new(4.5, 1.875, 1.5),
                    yaw: 0.25,
                },
                track_id: 42,
            }],
            slots: 2,
        },
        FusionLevel::Bff => {
            let spec = GridSpec::new(3, 3, 2, DEFAULT_BEV_EXTENT_M).expect("valid spec");
            let data = (0..spec.len()).map(|i| i as f32 * 0.25 - 1.0).collect();
            let validity = (0..spec.cells()).map(|i| i % 4 != 3).collect();
            Payload::Bev(BevGrid::new(spec, data, validity).expect("consistent grid"))
        }
    };
    CoopMessage::new(7, 1_700_000_000_000_000_000, pose, payload).expect("valid example")
}
