//! Reference-point sets with tolerance-based membership, and their fusion.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_DEDUP_EPS_M: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RefPointError {
    #[error("dedup tolerance must be positive and finite, got {0}")]
    InvalidEps(f64),
    #[error("tolerance mismatch: ego {ego} vs sender {sender}")]
    EpsMismatch { ego: f64, sender: f64 },
    #[error("points {0} and {1} are within the dedup tolerance")]
    NotASet(usize, usize),
}

/// Points in the ego frame, no two within `dedup_eps` of each other.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefPointSet {
    points: Vec<Vector3<f64>>,
    dedup_eps: f64,
}

impl RefPointSet {
    /// Validates the set property; use [`dedup`] to build from arbitrary points.
    pub fn new(points: Vec<Vector3<f64>>, dedup_eps: f64) -> Result<Self, RefPointError> {
        check_eps(dedup_eps)?;
        for i in 0..points.len() {
            for j in i + 1..points.len() {
                if (points[i] - points[j]).norm() <= dedup_eps {
                    return Err(RefPointError::NotASet(i, j));
                }
            }
        }
        Ok(Self { points, dedup_eps })
    }

    /// Wraps points without checking the set property (e.g. freshly decoded).
    pub fn from_points_unchecked(points: Vec<Vector3<f64>>, dedup_eps: f64) -> Self {
        Self { points, dedup_eps }
    }

    pub fn empty(dedup_eps: f64) -> Self {
        Self {
            points: Vec::new(),
            dedup_eps,
        }
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Vector3<f64>> {
        self.points
    }

    pub fn dedup_eps(&self) -> f64 {
        self.dedup_eps
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Membership under the tolerance: some point within `dedup_eps`.
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        self.points.iter().any(|q| (q - p).norm() <= self.dedup_eps)
    }
}

fn check_eps(eps: f64) -> Result<(), RefPointError> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(RefPointError::InvalidEps(eps));
    }
    Ok(())
}

/// Greedy scan in input order: a point is kept unless it lies within `eps`
/// of a point already kept.
pub fn dedup(points: &[Vector3<f64>], eps: f64) -> Result<RefPointSet, RefPointError> {
    check_eps(eps)?;
    let mut kept: Vec<Vector3<f64>> = Vec::with_capacity(points.len());
    for p in points {
        if kept.iter().all(|k| (k - p).norm() > eps) {
            kept.push(*p);
        }
    }
    Ok(RefPointSet {
        points: kept,
        dedup_eps: eps,
    })
}

/// `ego ∪ (sender \ ego)` with tolerance membership. Ego points come first and
/// are copied verbatim; sender points follow in input order.
pub fn fuse_refpoints(ego: &RefPointSet, sender: &RefPointSet) -> Result<RefPointSet, RefPointError> {
    if ego.dedup_eps != sender.dedup_eps {
        return Err(RefPointError::EpsMismatch {
            ego: ego.dedup_eps,
            sender: sender.dedup_eps,
        });
    }
    let eps = ego.dedup_eps;
    let mut points = ego.points.clone();
    let ego_len = points.len();
    for p in &sender.points {
        if ego.contains(p) {
            continue;
        }
        // No-op for a valid sender set; keeps the result a set otherwise.
        if points[ego_len..].iter().any(|q| (q - p).norm() <= eps) {
            continue;
        }
        points.push(*p);
    }
    Ok(RefPointSet {
        points,
        dedup_eps: eps,
    })
}
