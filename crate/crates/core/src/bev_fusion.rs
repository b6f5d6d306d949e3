//! Bird's-eye-view feature grids, sender-to-ego warping, and grid fusion.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Transform;

/// Side length of the ego-centered BEV square, meters.
pub const DEFAULT_BEV_EXTENT_M: f64 = 102.4;

const TILT_WARN_RAD: f64 = std::f64::consts::PI / 180.0;
const Z_WARN_M: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BevError {
    #[error("invalid grid spec: {0}")]
    InvalidSpec(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite value in a valid cell ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("grid dump truncated: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
}

/// Shape and metric extent of a BEV grid. Cells are square.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Meters per side of the square grid, centered on the owner.
    pub extent_m: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            height: 200,
            width: 200,
            channels: 256,
            extent_m: DEFAULT_BEV_EXTENT_M,
        }
    }
}

impl GridSpec {
    pub fn new(height: usize, width: usize, channels: usize, extent_m: f64) -> Result<Self, BevError> {
        let spec = Self {
            height,
            width,
            channels,
            extent_m,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), BevError> {
        if self.height == 0 || self.width == 0 || self.channels == 0 {
            return Err(BevError::InvalidSpec(format!(
                "dimensions must be positive, got {}x{}x{}",
                self.height, self.width, self.channels
            )));
        }
        if self.height != self.width {
            return Err(BevError::InvalidSpec(format!(
                "cells must be square: height {} != width {}",
                self.height, self.width
            )));
        }
        if !(self.extent_m.is_finite() && self.extent_m > 0.0) {
            return Err(BevError::InvalidSpec(format!("extent {} must be positive", self.extent_m)));
        }
        Ok(())
    }

    pub fn cell_size(&self) -> f64 {
        self.extent_m / self.height as f64
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.cells() * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Metric (x, y) of a cell center. Columns run along +x, rows along +y.
    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        let half = self.extent_m / 2.0;
        let cell = self.cell_size();
        (
            -half + (col as f64 + 0.5) * cell,
            -half + (row as f64 + 0.5) * cell,
        )
    }

    /// Continuous (row, col) coordinates of a metric point; cell centers are integers.
    pub fn continuous_index(&self, x: f64, y: f64) -> (f64, f64) {
        let half = self.extent_m / 2.0;
        let cell = self.cell_size();
        ((y + half) / cell - 0.5, (x + half) / cell - 0.5)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let half = self.extent_m / 2.0;
        (-half..half).contains(&x) && (-half..half).contains(&y)
    }

    /// Cell containing a metric point, if inside the grid.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        if !self.contains(x, y) {
            return None;
        }
        let half = self.extent_m / 2.0;
        let cell = self.cell_size();
        let col = (((x + half) / cell).floor() as usize).min(self.width - 1);
        let row = (((y + half) / cell).floor() as usize).min(self.height - 1);
        Some((row, col))
    }
}

/// `height x width x channels` grid of f32 features plus a per-cell validity mask.
///
/// Data is row-major with channels innermost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BevGrid {
    spec: GridSpec,
    data: Vec<f32>,
    validity: Vec<bool>,
}

impl BevGrid {
    pub fn new(spec: GridSpec, data: Vec<f32>, validity: Vec<bool>) -> Result<Self, BevError> {
        spec.validate()?;
        if data.len() != spec.len() {
            return Err(BevError::DimensionMismatch(format!(
                "data length {} != {}",
                data.len(),
                spec.len()
            )));
        }
        if validity.len() != spec.cells() {
            return Err(BevError::DimensionMismatch(format!(
                "validity length {} != {}",
                validity.len(),
                spec.cells()
            )));
        }
        let grid = Self {
            spec,
            data,
            validity,
        };
        for (idx, valid) in grid.validity.iter().enumerate() {
            if *valid && grid.cell(idx).iter().any(|v| !v.is_finite()) {
                return Err(BevError::NonFinite {
                    row: idx / spec.width,
                    col: idx % spec.width,
                });
            }
        }
        Ok(grid)
    }

    /// All-zero grid with every cell invalid.
    pub fn empty(spec: GridSpec) -> Result<Self, BevError> {
        spec.validate()?;
        Ok(Self {
            spec,
            data: vec![0.0; spec.len()],
            validity: vec![false; spec.cells()],
        })
    }

    /// All-zero grid with every cell valid ("observed, nothing there").
    pub fn observed_zeros(spec: GridSpec) -> Result<Self, BevError> {
        spec.validate()?;
        Ok(Self {
            spec,
            data: vec![0.0; spec.len()],
            validity: vec![true; spec.cells()],
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn validity(&self) -> &[bool] {
        &self.validity
    }

    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.validity[row * self.spec.width + col]
    }

    pub fn set_valid(&mut self, row: usize, col: usize, valid: bool) {
        self.validity[row * self.spec.width + col] = valid;
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> f32 {
        self.data[(row * self.spec.width + col) * self.spec.channels + channel]
    }

    pub fn set(&mut self, row: usize, col: usize, channel: usize, value: f32) {
        let c = self.spec.channels;
        self.data[(row * self.spec.width + col) * c + channel] = value;
    }

    /// Channel vector of the cell at flat index `idx`.
    pub fn cell(&self, idx: usize) -> &[f32] {
        let c = self.spec.channels;
        &self.data[idx * c..(idx + 1) * c]
    }

    pub fn cell_mut(&mut self, idx: usize) -> &mut [f32] {
        let c = self.spec.channels;
        &mut self.data[idx * c..(idx + 1) * c]
    }

    /// Elementwise `a * self + b * other`; validity is the union.
    pub fn linear_combination(&self, a: f32, other: &BevGrid, b: f32) -> Result<BevGrid, BevError> {
        check_same_spec(&self.spec, &other.spec)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(x, y)| a * x + b * y)
            .collect();
        let validity = self
            .validity
            .iter()
            .zip(&other.validity)
            .map(|(x, y)| *x || *y)
            .collect();
        Ok(BevGrid {
            spec: self.spec,
            data,
            validity,
        })
    }

    /// Debug dump: H, W, C as u32 LE, row-major f32 LE data, then the validity
    /// bitmap (row-major, LSB-first within each byte, padded to a byte).
    pub fn to_dump_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(dump_len(&self.spec));
        self.write_dump(&mut out);
        out
    }

    pub fn write_dump(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.spec.height as u32).to_le_bytes());
        out.extend_from_slice(&(self.spec.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.spec.channels as u32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let mut bits = vec![0u8; self.spec.cells().div_ceil(8)];
        for (i, valid) in self.validity.iter().enumerate() {
            if *valid {
                bits[i / 8] |= 1 << (i % 8);
            }
        }
        out.extend_from_slice(&bits);
    }

    /// Parses a dump produced by [`BevGrid::to_dump_bytes`]. The dump does not
    /// carry the metric extent, so the caller supplies it.
    ///
    /// Returns the grid and the number of bytes consumed.
    pub fn from_dump_bytes(bytes: &[u8], extent_m: f64) -> Result<(BevGrid, usize), BevError> {
        if bytes.len() < 12 {
            return Err(BevError::Truncated {
                needed: 12,
                available: bytes.len(),
            });
        }
        let read_u32 = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
        let spec = GridSpec::new(read_u32(0), read_u32(4), read_u32(8), extent_m)?;
        let needed = dump_len(&spec);
        if bytes.len() < needed {
            return Err(BevError::Truncated {
                needed,
                available: bytes.len(),
            });
        }
        let data_end = 12 + spec.len() * 4;
        let data = bytes[12..data_end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let bits = &bytes[data_end..needed];
        let validity = (0..spec.cells())
            .map(|i| bits[i / 8] & (1 << (i % 8)) != 0)
            .collect();
        Ok((BevGrid::new(spec, data, validity)?, needed))
    }
}

/// Byte length of a grid dump: 12-byte header, data, and the validity bitmap.
pub fn dump_len(spec: &GridSpec) -> usize {
    12 + spec.len() * 4 + spec.cells().div_ceil(8)
}

/// Float32 payload size of a grid, excluding header and mask.
pub fn grid_payload_bytes(spec: &GridSpec) -> u64 {
    spec.height as u64 * spec.width as u64 * spec.channels as u64 * 4
}

fn check_same_spec(a: &GridSpec, b: &GridSpec) -> Result<(), BevError> {
    if a != b {
        return Err(BevError::DimensionMismatch(format!("grid specs differ: {a:?} vs {b:?}")));
    }
    Ok(())
}

/// Snaps values within 1e-9 of an integer, so on-center sampling is exact.
fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r
    } else {
        v
    }
}

/// Resamples a sender grid into the ego grid.
///
/// `sender_to_ego` maps sender-frame points into the ego frame; only its planar
/// part (x, y, yaw) is used. Each ego cell center is pulled back into the sender
/// grid and bilinearly sampled. Cells landing outside the sender extent, or on
/// an invalid sender cell, come out zero and invalid.
pub fn warp_grid(
    sender_grid: &BevGrid,
    sender_to_ego: &Transform,
    ego_spec: &GridSpec,
) -> Result<BevGrid, BevError> {
    ego_spec.validate()?;
    let src = sender_grid.spec;
    if src.channels != ego_spec.channels {
        return Err(BevError::DimensionMismatch(format!(
            "channel count {} != {}",
            src.channels, ego_spec.channels
        )));
    }
    let t = sender_to_ego.translation();
    if sender_to_ego.tilt() > TILT_WARN_RAD || t.z.abs() > Z_WARN_M {
        warn!(
            "warp ignores out-of-plane motion: tilt {:.3} rad, dz {:.3} m",
            sender_to_ego.tilt(),
            t.z
        );
    }
    let yaw = sender_to_ego.yaw();
    let (sin, cos) = yaw.sin_cos();
    let (tx, ty) = (t.x, t.y);
    let channels = src.channels;
    let width = ego_spec.width;

    let mut data = vec![0f32; ego_spec.len()];
    let mut validity = vec![false; ego_spec.cells()];

    data.par_chunks_mut(width * channels)
        .zip(validity.par_chunks_mut(width))
        .enumerate()
        .for_each(|(row, (out_row, valid_row))| {
            let mut acc = vec![0f64; channels];
            for col in 0..width {
                let (x, y) = ego_spec.cell_center(row, col);
                // Inverse planar rigid map: R(-yaw) * (p - t).
                let (dx, dy) = (x - tx, y - ty);
                let sx = cos * dx + sin * dy;
                let sy = -sin * dx + cos * dy;
                if !src.contains(sx, sy) {
                    continue;
                }
                let (v, u) = src.continuous_index(sx, sy);
                let (v, u) = (snap(v), snap(u));
                let nearest_r = (v.round().max(0.0) as usize).min(src.height - 1);
                let nearest_c = (u.round().max(0.0) as usize).min(src.width - 1);
                if !sender_grid.is_valid(nearest_r, nearest_c) {
                    continue;
                }
                let (r0, c0) = (v.floor(), u.floor());
                let (fr, fc) = (v - r0, u - c0);
                acc.iter_mut().for_each(|a| *a = 0.0);
                for (dr, wr) in [(0i64, 1.0 - fr), (1, fr)] {
                    for (dc, wc) in [(0i64, 1.0 - fc), (1, fc)] {
                        let w = wr * wc;
                        if w == 0.0 {
                            continue;
                        }
                        let (r, c) = (r0 as i64 + dr, c0 as i64 + dc);
                        if r < 0 || c < 0 || r >= src.height as i64 || c >= src.width as i64 {
                            continue;
                        }
                        let (r, c) = (r as usize, c as usize);
                        if !sender_grid.is_valid(r, c) {
                            continue;
                        }
                        let cell = sender_grid.cell(r * src.width + c);
                        for (a, s) in acc.iter_mut().zip(cell) {
                            *a += w * f64::from(*s);
                        }
                    }
                }
                let out = &mut out_row[col * channels..(col + 1) * channels];
                for (o, a) in out.iter_mut().zip(&acc) {
                    *o = *a as f32;
                }
                valid_row[col] = true;
            }
        });

    Ok(BevGrid {
        spec: *ego_spec,
        data,
        validity,
    })
}

/// Per-cell scalar gate for [`FusionOperator::LogitWeighted`]: the gate logit
/// of a source is the dot product of these weights with its channel vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitGate {
    pub weights: Vec<f32>,
}

impl LogitGate {
    pub fn uniform(channels: usize) -> Self {
        Self {
            weights: vec![1.0 / channels as f32; channels],
        }
    }

    fn logit(&self, cell: &[f32]) -> f64 {
        self.weights
            .iter()
            .zip(cell)
            .map(|(w, v)| f64::from(*w) * f64::from(*v))
            .sum()
    }
}

/// The fusion function applied cell by cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionOperator {
    ElementwiseMax,
    ValidityWeightedMean,
    LogitWeighted(LogitGate),
}

impl FusionOperator {
    pub fn name(&self) -> &'static str {
        match self {
            FusionOperator::ElementwiseMax => "max",
            FusionOperator::ValidityWeightedMean => "mean",
            FusionOperator::LogitWeighted(_) => "logit",
        }
    }
}

/// Fuses a warped sender grid into the ego grid.
///
/// Where the sender cell is invalid the ego cell passes through untouched;
/// where only the sender is valid its values are taken; where both are valid
/// `op` combines them. Output validity is the union.
pub fn fuse(ego: &BevGrid, warped: &BevGrid, op: &FusionOperator) -> Result<BevGrid, BevError> {
    check_same_spec(&ego.spec, &warped.spec)?;
    if let FusionOperator::LogitWeighted(gate) = op {
        if gate.weights.len() != ego.spec.channels {
            return Err(BevError::DimensionMismatch(format!(
                "gate width {} != channel count {}",
                gate.weights.len(),
                ego.spec.channels
            )));
        }
    }
    let channels = ego.spec.channels;
    let mut out = ego.clone();
    out.data
        .par_chunks_mut(channels)
        .zip(out.validity.par_iter_mut())
        .enumerate()
        .for_each(|(idx, (cell, valid))| {
            if !warped.validity[idx] {
                return;
            }
            let other = warped.cell(idx);
            if !ego.validity[idx] {
                cell.copy_from_slice(other);
                *valid = true;
                return;
            }
            match op {
                FusionOperator::ElementwiseMax => {
                    for (e, w) in cell.iter_mut().zip(other) {
                        *e = e.max(*w);
                    }
                }
                FusionOperator::ValidityWeightedMean => {
                    for (e, w) in cell.iter_mut().zip(other) {
                        *e = ((f64::from(*e) + f64::from(*w)) / 2.0) as f32;
                    }
                }
                FusionOperator::LogitWeighted(gate) => {
                    let le = gate.logit(cell);
                    let lw = gate.logit(other);
                    let m = le.max(lw);
                    let (ee, ew) = ((le - m).exp(), (lw - m).exp());
                    let (ae, aw) = (ee / (ee + ew), ew / (ee + ew));
                    for (e, w) in cell.iter_mut().zip(other) {
                        *e = (ae * f64::from(*e) + aw * f64::from(*w)) as f32;
                    }
                }
            }
            *valid = true;
        });
    Ok(out)
}
