//! Rigid-body poses, homogeneous transforms and the two sensor noise models.
//!
//! A [`Pose`] places a vehicle (or sensor) in the world; [`pose_to_transform`]
//! turns it into the 4x4 map from the pose's local frame to the world frame.
//! [`relative_transform`] gives the sender-to-ego map used by every fusion level.

use nalgebra::{Matrix3, Matrix4, Quaternion, Rotation3, UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Allowed deviation of a pose quaternion's norm from 1.
///
/// Poses travel over the wire as 32-bit floats, so the tolerance has to admit
/// f32 rounding of a unit quaternion.
pub const QUAT_NORM_TOLERANCE: f64 = 1e-6;

/// Tolerance used when checking the rotation block of a [`Transform`].
pub const ROTATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid pose: quaternion norm {norm} is not within {QUAT_NORM_TOLERANCE} of 1")]
    NonUnitQuaternion { norm: f64 },
    #[error("invalid pose: non-finite component")]
    NonFinite,
    #[error("invalid transform: {0}")]
    InvalidTransform(&'static str),
    #[error("invalid noise configuration: {0}")]
    InvalidNoise(&'static str),
}

/// Position and orientation of a body in the world frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    /// Meters, world frame.
    pub translation: Vector3<f64>,
    /// Unit quaternion stored as (w, x, y, z).
    pub rotation: Quaternion<f64>,
}

impl Pose {
    pub fn new(translation: Vector3<f64>, rotation: Quaternion<f64>) -> Result<Self, GeometryError> {
        let pose = Self {
            translation,
            rotation,
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn identity() -> Self {
        Self {
            translation: Vector3::zeros(),
            rotation: Quaternion::identity(),
        }
    }

    /// Planar pose: position plus heading about +z.
    pub fn from_xyz_yaw(x: f64, y: f64, z: f64, yaw: f64) -> Self {
        let q = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw);
        Self {
            translation: Vector3::new(x, y, z),
            rotation: q.into_inner(),
        }
    }

    /// Builds a pose from a transform's rotation block and translation.
    pub fn from_transform(t: &Transform) -> Self {
        let rot = Rotation3::from_matrix_unchecked(t.rotation());
        let q = UnitQuaternion::from_rotation_matrix(&rot);
        Self {
            translation: t.translation(),
            rotation: q.into_inner(),
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let finite = self.translation.iter().all(|v| v.is_finite())
            && self.rotation.coords.iter().all(|v| v.is_finite());
        if !finite {
            return Err(GeometryError::NonFinite);
        }
        let norm = self.rotation.norm();
        if (norm - 1.0).abs() > QUAT_NORM_TOLERANCE {
            return Err(GeometryError::NonUnitQuaternion { norm });
        }
        Ok(())
    }

    /// `self` followed by `other` expressed in `self`'s frame.
    pub fn compose(&self, other: &Pose) -> Pose {
        let q = self.unit_rotation();
        Pose {
            translation: self.translation + q.transform_vector(&other.translation),
            rotation: self.rotation * other.rotation,
        }
    }

    /// Applies a body-frame perturbation, e.g. a sampled localization error.
    pub fn perturbed(&self, noise: &Transform) -> Result<Pose, GeometryError> {
        let t = pose_to_transform(self)?;
        Ok(Pose::from_transform(&compose(&t, noise)))
    }

    pub fn yaw(&self) -> f64 {
        self.unit_rotation().euler_angles().2
    }

    fn unit_rotation(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_quaternion(self.rotation)
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

/// 4x4 homogeneous rigid transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    matrix: Matrix4<f64>,
}

impl Transform {
    pub fn identity() -> Self {
        Self {
            matrix: Matrix4::identity(),
        }
    }

    pub fn from_rotation_translation(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        let mut matrix = Matrix4::identity();
        matrix.fixed_view_mut::<3, 3>(0, 0).copy_from(&rotation);
        matrix.fixed_view_mut::<3, 1>(0, 3).copy_from(&translation);
        Self { matrix }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self::from_rotation_translation(Matrix3::identity(), translation)
    }

    /// Checks the homogeneous-rigid invariants before wrapping the matrix.
    pub fn from_matrix(matrix: Matrix4<f64>) -> Result<Self, GeometryError> {
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::InvalidTransform("non-finite entry"));
        }
        let last = matrix.row(3);
        if last[0] != 0.0 || last[1] != 0.0 || last[2] != 0.0 || last[3] != 1.0 {
            return Err(GeometryError::InvalidTransform("last row must be (0, 0, 0, 1)"));
        }
        let r: Matrix3<f64> = matrix.fixed_view::<3, 3>(0, 0).into_owned();
        let gram = r.transpose() * r - Matrix3::identity();
        if gram.amax() > ROTATION_TOLERANCE {
            return Err(GeometryError::InvalidTransform("rotation block is not orthonormal"));
        }
        if (r.determinant() - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(GeometryError::InvalidTransform("rotation block determinant is not 1"));
        }
        Ok(Self { matrix })
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.matrix
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.matrix.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.matrix.fixed_view::<3, 1>(0, 3).into_owned()
    }

    /// Heading of the rotation block about +z.
    pub fn yaw(&self) -> f64 {
        self.matrix[(1, 0)].atan2(self.matrix[(0, 0)])
    }

    /// Tilt of the rotated z axis away from +z, radians.
    pub fn tilt(&self) -> f64 {
        self.matrix[(2, 2)].clamp(-1.0, 1.0).acos()
    }

    pub fn compose(&self, other: &Transform) -> Transform {
        compose(self, other)
    }

    pub fn inverse(&self) -> Transform {
        invert(self)
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        apply_point(self, p)
    }
}

impl Default for Transform {
    fn default() -> Self {
        Self::identity()
    }
}

/// The pose-to-matrix map: points in the pose's local frame to world frame.
pub fn pose_to_transform(pose: &Pose) -> Result<Transform, GeometryError> {
    pose.validate()?;
    let q = UnitQuaternion::from_quaternion(pose.rotation);
    Ok(Transform::from_rotation_translation(
        *q.to_rotation_matrix().matrix(),
        pose.translation,
    ))
}

/// Map from the sender's local frame into the ego's local frame.
pub fn relative_transform(sender: &Pose, ego: &Pose) -> Result<Transform, GeometryError> {
    let sender_to_world = pose_to_transform(sender)?;
    let ego_to_world = pose_to_transform(ego)?;
    Ok(compose(&invert(&ego_to_world), &sender_to_world))
}

/// `a ∘ b`: applies `b` first.
pub fn compose(a: &Transform, b: &Transform) -> Transform {
    Transform {
        matrix: a.matrix * b.matrix,
    }
}

pub fn invert(t: &Transform) -> Transform {
    let rt = t.rotation().transpose();
    let trans = -(rt * t.translation());
    Transform::from_rotation_translation(rt, trans)
}

pub fn apply_point(t: &Transform, p: &Vector3<f64>) -> Vector3<f64> {
    t.rotation() * p + t.translation()
}

/// Rotation for intrinsic roll, then pitch, then yaw (radians).
pub fn intrinsic_rpy(roll: f64, pitch: f64, yaw: f64) -> Matrix3<f64> {
    let rx = Rotation3::from_axis_angle(&Vector3::x_axis(), roll);
    let ry = Rotation3::from_axis_angle(&Vector3::y_axis(), pitch);
    let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), yaw);
    *(rx * ry * rz).matrix()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranslationSigmas {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// Angular standard deviations, degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RotationSigmas {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

/// Standard deviations for localization (type 1) and calibration (type 2) noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub loc_trans_sigma: TranslationSigmas,
    pub loc_rot_sigma: RotationSigmas,
    pub calib_rot_sigma: RotationSigmas,
    pub calib_trans_sigma: TranslationSigmas,
    /// Half-width of the uniform focal-length jitter, pixels.
    pub intrinsics_focal_jitter: f64,
    /// Half-width of the uniform principal-point jitter, pixels.
    pub intrinsics_principal_jitter: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            loc_trans_sigma: TranslationSigmas {
                x: 0.1,
                y: 0.08,
                z: 0.02,
            },
            loc_rot_sigma: RotationSigmas {
                roll: 0.2,
                pitch: 0.2,
                yaw: 1.0,
            },
            calib_rot_sigma: RotationSigmas {
                roll: 0.1,
                pitch: 0.1,
                yaw: 0.2,
            },
            calib_trans_sigma: TranslationSigmas {
                x: 0.01,
                y: 0.01,
                z: 0.02,
            },
            intrinsics_focal_jitter: 2.0,
            intrinsics_principal_jitter: 1.0,
            seed: 0,
        }
    }
}

impl NoiseConfig {
    pub fn zero() -> Self {
        Self {
            loc_trans_sigma: TranslationSigmas { x: 0.0, y: 0.0, z: 0.0 },
            loc_rot_sigma: RotationSigmas { roll: 0.0, pitch: 0.0, yaw: 0.0 },
            calib_rot_sigma: RotationSigmas { roll: 0.0, pitch: 0.0, yaw: 0.0 },
            calib_trans_sigma: TranslationSigmas { x: 0.0, y: 0.0, z: 0.0 },
            intrinsics_focal_jitter: 0.0,
            intrinsics_principal_jitter: 0.0,
            seed: 0,
        }
    }

    /// Keeps only the localization terms.
    pub fn localization_only(&self) -> Self {
        Self {
            calib_rot_sigma: RotationSigmas { roll: 0.0, pitch: 0.0, yaw: 0.0 },
            calib_trans_sigma: TranslationSigmas { x: 0.0, y: 0.0, z: 0.0 },
            intrinsics_focal_jitter: 0.0,
            intrinsics_principal_jitter: 0.0,
            ..*self
        }
    }

    /// Keeps only the calibration terms (extrinsic and intrinsic).
    pub fn calibration_only(&self) -> Self {
        Self {
            loc_trans_sigma: TranslationSigmas { x: 0.0, y: 0.0, z: 0.0 },
            loc_rot_sigma: RotationSigmas { roll: 0.0, pitch: 0.0, yaw: 0.0 },
            ..*self
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let all = [
            self.loc_trans_sigma.x,
            self.loc_trans_sigma.y,
            self.loc_trans_sigma.z,
            self.loc_rot_sigma.roll,
            self.loc_rot_sigma.pitch,
            self.loc_rot_sigma.yaw,
            self.calib_rot_sigma.roll,
            self.calib_rot_sigma.pitch,
            self.calib_rot_sigma.yaw,
            self.calib_trans_sigma.x,
            self.calib_trans_sigma.y,
            self.calib_trans_sigma.z,
            self.intrinsics_focal_jitter,
            self.intrinsics_principal_jitter,
        ];
        if all.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(GeometryError::InvalidNoise("sigmas must be finite and non-negative"));
        }
        Ok(())
    }
}

/// A sampled rigid perturbation. Angles are radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseNoise {
    pub translation: Vector3<f64>,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl PoseNoise {
    pub fn zero() -> Self {
        Self {
            translation: Vector3::zeros(),
            roll: 0.0,
            pitch: 0.0,
            yaw: 0.0,
        }
    }

    pub fn transform(&self) -> Transform {
        Transform::from_rotation_translation(
            intrinsic_rpy(self.roll, self.pitch, self.yaw),
            self.translation,
        )
    }
}

/// Extrinsic perturbation plus the recorded intrinsic jitter, pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibNoise {
    pub extrinsic: PoseNoise,
    pub focal_jitter: [f64; 2],
    pub principal_jitter: [f64; 2],
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> f64 {
    // Always consume one draw so streams stay aligned when a sigma is zero.
    let z: f64 = rng.sample(StandardNormal);
    sigma * z
}

fn uniform_symmetric<R: Rng + ?Sized>(rng: &mut R, half_width: f64) -> f64 {
    let u: f64 = rng.random();
    half_width * (2.0 * u - 1.0)
}

fn sample_pose_noise<R: Rng + ?Sized>(
    trans: &TranslationSigmas,
    rot: &RotationSigmas,
    rng: &mut R,
) -> PoseNoise {
    let x = gaussian(rng, trans.x);
    let y = gaussian(rng, trans.y);
    let z = gaussian(rng, trans.z);
    let roll = gaussian(rng, rot.roll).to_radians();
    let pitch = gaussian(rng, rot.pitch).to_radians();
    let yaw = gaussian(rng, rot.yaw).to_radians();
    PoseNoise {
        translation: Vector3::new(x, y, z),
        roll,
        pitch,
        yaw,
    }
}

/// Draws one localization error. Draw order: x, y, z, roll, pitch, yaw.
pub fn sample_localization_noise<R: Rng + ?Sized>(cfg: &NoiseConfig, rng: &mut R) -> PoseNoise {
    sample_pose_noise(&cfg.loc_trans_sigma, &cfg.loc_rot_sigma, rng)
}

/// Draws one calibration error: extrinsic first, then fx, fy, cx, cy jitter.
pub fn sample_calibration_noise<R: Rng + ?Sized>(cfg: &NoiseConfig, rng: &mut R) -> CalibNoise {
    let extrinsic = sample_pose_noise(&cfg.calib_trans_sigma, &cfg.calib_rot_sigma, rng);
    let fx = uniform_symmetric(rng, cfg.intrinsics_focal_jitter);
    let fy = uniform_symmetric(rng, cfg.intrinsics_focal_jitter);
    let cx = uniform_symmetric(rng, cfg.intrinsics_principal_jitter);
    let cy = uniform_symmetric(rng, cfg.intrinsics_principal_jitter);
    CalibNoise {
        extrinsic,
        focal_jitter: [fx, fy],
        principal_jitter: [cx, cy],
    }
}
