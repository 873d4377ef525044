//! SO(3) and so(3) utilities for bone-pair rotations, plus forward kinematics
//! over a chain topology.
//!
//! A pose is encoded as one rotation vector per pair of adjacent bones inside
//! each kinematic chain: the minimal rotation taking the parent bone direction
//! onto the child bone direction, stored as the scaled axis `θ·n`.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::skeleton::SkeletonTopology;

/// Below this angle the log map returns the zero vector.
const SMALL_ANGLE: f64 = 1e-7;
/// Above `π - NEAR_PI` the log map recovers the axis from the symmetric part.
const NEAR_PI: f64 = 1e-5;
/// Inner products below `-1 + ANTIPODAL_DOT` have no well-defined minimal axis.
const ANTIPODAL_DOT: f64 = 1e-8;
const MIN_BONE_LENGTH: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("bone directions are antipodal; the rotation axis is undefined")]
    AntipodalInput,
    #[error("vector has zero length and cannot be normalized")]
    ZeroVector,
    #[error("vector norm {0} is not 1")]
    NotUnit(f64),
    #[error("matrix is not a rotation (orthonormality error {orth:e}, det {det})")]
    NotRotation { orth: f64, det: f64 },
    #[error("bone {bone} of chain {chain} has length {length:e}")]
    DegenerateBone { chain: usize, bone: usize, length: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// A direction in R³ with unit Euclidean norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitVec3(Vector3<f64>);

impl UnitVec3 {
    pub fn x_axis() -> Self {
        Self(Vector3::x())
    }

    pub fn y_axis() -> Self {
        Self(Vector3::y())
    }

    pub fn z_axis() -> Self {
        Self(Vector3::z())
    }

    /// Accepts `v` only if it is already unit length (within 1e-9).
    pub fn try_new(v: Vector3<f64>) -> Result<Self, GeometryError> {
        let n = v.norm();
        if (n - 1.0).abs() > 1e-9 {
            return Err(GeometryError::NotUnit(n));
        }
        Ok(Self(v))
    }

    pub fn normalize(v: Vector3<f64>) -> Result<Self, GeometryError> {
        let n = v.norm();
        if n < 1e-300 || !n.is_finite() {
            return Err(GeometryError::ZeroVector);
        }
        Ok(Self(v / n))
    }

    pub fn as_vector(&self) -> &Vector3<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Vector3<f64> {
        self.0
    }
}

/// A 3x3 rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation3(Matrix3<f64>);

impl Rotation3 {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Validates orthonormality and unit determinant within 1e-9.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self, GeometryError> {
        let orth = (m.transpose() * m - Matrix3::identity()).norm();
        let det = m.determinant();
        if orth > 1e-9 || (det - 1.0).abs() > 1e-9 {
            return Err(GeometryError::NotRotation { orth, det });
        }
        Ok(Self(m))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    /// Frobenius norm of `RᵀR - I`.
    pub fn orthonormality_error(&self) -> f64 {
        (self.0.transpose() * self.0 - Matrix3::identity()).norm()
    }

    pub fn determinant(&self) -> f64 {
        self.0.determinant()
    }

    /// Rotation angle in [0, π] from the trace.
    pub fn angle(&self) -> f64 {
        ((self.0.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
    }
}

/// Unit axis and angle in [0, π]. The axis is `x` by convention when the angle is 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisAngle {
    axis: UnitVec3,
    angle: f64,
}

impl AxisAngle {
    pub fn new(axis: UnitVec3, angle: f64) -> Self {
        if angle == 0.0 {
            return Self::identity();
        }
        Self { axis, angle }
    }

    pub fn identity() -> Self {
        Self { axis: UnitVec3::x_axis(), angle: 0.0 }
    }

    pub fn axis(&self) -> &UnitVec3 {
        &self.axis
    }

    pub fn angle(&self) -> f64 {
        self.angle
    }
}

/// A rotation vector `θ·n` with norm in [0, π].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct So3Vec(Vector3<f64>);

impl So3Vec {
    pub fn zero() -> Self {
        Self(Vector3::zeros())
    }

    /// Wraps `v` onto the equivalent rotation vector of norm at most π.
    pub fn new(v: Vector3<f64>) -> Self {
        Self(wrap_rotation_vector(v))
    }

    pub fn as_vector(&self) -> &Vector3<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Vector3<f64> {
        self.0
    }

    pub fn angle(&self) -> f64 {
        self.0.norm()
    }
}

/// Maps a rotation vector of any norm onto the equivalent one with norm <= π.
/// Vectors already inside the ball are returned bit-for-bit.
pub fn wrap_rotation_vector(v: Vector3<f64>) -> Vector3<f64> {
    let theta = v.norm();
    if theta <= PI {
        return v;
    }
    let turns = (theta / (2.0 * PI)).round();
    v * (1.0 - 2.0 * PI * turns / theta)
}

/// Skew-symmetric matrix `v^` with `v^ * u = v × u`.
#[rustfmt::skip]
pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(
         0.0, -v.z,  v.y,
         v.z,  0.0, -v.x,
        -v.y,  v.x,  0.0,
    )
}

/// Minimal rotation taking `from` onto `to`.
pub fn axis_angle_between(from: &UnitVec3, to: &UnitVec3) -> Result<AxisAngle, GeometryError> {
    let dot = from.0.dot(&to.0).clamp(-1.0, 1.0);
    if dot < -1.0 + ANTIPODAL_DOT {
        return Err(GeometryError::AntipodalInput);
    }
    let angle = dot.acos();
    let cross = from.0.cross(&to.0);
    match UnitVec3::normalize(cross) {
        Ok(axis) if angle > 0.0 => Ok(AxisAngle { axis, angle }),
        _ => Ok(AxisAngle::identity()),
    }
}

/// Like [`axis_angle_between`], but resolves antipodal pairs with a half turn
/// about a deterministic axis orthogonal to `from`.
pub fn axis_angle_between_resolved(from: &UnitVec3, to: &UnitVec3) -> AxisAngle {
    match axis_angle_between(from, to) {
        Ok(aa) => aa,
        Err(_) => {
            let axis = UnitVec3::normalize(from.0.cross(&Vector3::x()))
                .or_else(|_| UnitVec3::normalize(from.0.cross(&Vector3::y())))
                .expect("a unit vector is never parallel to both x and y");
            AxisAngle { axis, angle: PI }
        }
    }
}

/// `R = I + sin θ n^ + (1 - cos θ) n^²`.
pub fn rodrigues(aa: &AxisAngle) -> Rotation3 {
    rodrigues_raw(&aa.axis.0, aa.angle)
}

fn rodrigues_raw(axis: &Vector3<f64>, angle: f64) -> Rotation3 {
    let k = hat(axis);
    Rotation3(Matrix3::identity() + k * angle.sin() + k * k * (1.0 - angle.cos()))
}

/// Logarithm map SO(3) -> so(3), returning the scaled axis `θ·n`.
pub fn log_map(r: &Rotation3) -> So3Vec {
    let m = &r.0;
    let cos_theta = ((m.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let skew = Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);
    // Same angle as acos(cos θ), but without its loss of precision near 0 and π.
    let theta = (skew.norm() / 2.0).atan2(cos_theta);
    if theta < SMALL_ANGLE {
        return So3Vec::zero();
    }
    if theta > PI - NEAR_PI {
        // Symmetric part is cos θ I + (1 - cos θ) n nᵀ; read n off its largest diagonal.
        let sym = (m + m.transpose()) * 0.5;
        let outer = (sym - Matrix3::identity() * cos_theta) / (1.0 - cos_theta);
        let k = (0..3).max_by(|&a, &b| outer[(a, a)].total_cmp(&outer[(b, b)])).expect("three diagonal entries");
        let mut axis = outer.column(k).into_owned() / outer[(k, k)].max(0.0).sqrt();
        axis /= axis.norm();
        if axis.dot(&skew) < 0.0 {
            axis = -axis;
        }
        return So3Vec(clamp_to_pi(axis * theta));
    }
    So3Vec(clamp_to_pi(skew * (theta / (2.0 * theta.sin()))))
}

/// Absorbs rounding that pushes a norm-π vector just past π.
fn clamp_to_pi(v: Vector3<f64>) -> Vector3<f64> {
    let n = v.norm();
    if n > PI {
        v * (PI / n * (1.0 - f64::EPSILON))
    } else {
        v
    }
}

/// Exponential map so(3) -> SO(3).
pub fn exp_map(w: &So3Vec) -> Rotation3 {
    let theta = w.0.norm();
    if theta < 1e-12 {
        return Rotation3::identity();
    }
    rodrigues_raw(&(w.0 / theta), theta)
}

/// One pose in the Lie algebra: `K` rotation vectors in chain-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct LieVector(Vec<Vector3<f64>>);

impl LieVector {
    pub fn new(entries: Vec<Vector3<f64>>) -> Self {
        Self(entries)
    }

    pub fn zeros(k: usize) -> Self {
        Self(vec![Vector3::zeros(); k])
    }

    /// Reads `3K` values as `K` consecutive `(x, y, z)` triples.
    pub fn from_flat(values: &[f64]) -> Result<Self, GeometryError> {
        if !values.len().is_multiple_of(3) {
            return Err(GeometryError::DimensionMismatch { expected: values.len() / 3 * 3, got: values.len() });
        }
        Ok(Self(values.chunks_exact(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect()))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn entries(&self) -> &[Vector3<f64>] {
        &self.0
    }

    pub fn entries_mut(&mut self) -> &mut [Vector3<f64>] {
        &mut self.0
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.0.iter().flat_map(|v| [v.x, v.y, v.z]).collect()
    }

    pub fn max_angle(&self) -> f64 {
        self.0.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

/// Joint positions, indexed like the topology's joint list.
pub type JointPositions = Vec<Vector3<f64>>;

/// Absolute anchor needed to turn relative rotations back into positions:
/// the root joint position and the first bone direction of every chain.
#[derive(Debug, Clone, PartialEq)]
pub struct RootConfig {
    pub position: Vector3<f64>,
    pub first_directions: Vec<UnitVec3>,
}

impl RootConfig {
    /// Reads the anchor off an observed pose.
    pub fn from_pose(joints: &[Vector3<f64>], topo: &SkeletonTopology) -> Result<Self, GeometryError> {
        check_joint_count(joints, topo)?;
        let mut first_directions = Vec::with_capacity(topo.chains().len());
        for (c, chain) in topo.chains().iter().enumerate() {
            let ids = chain.joints();
            first_directions.push(bone_direction(joints, ids[0], ids[1], c, 0)?);
        }
        Ok(Self { position: joints[topo.root_joint()], first_directions })
    }

    /// Anchor at the origin using the topology's rest directions.
    pub fn rest(topo: &SkeletonTopology) -> Self {
        Self {
            position: Vector3::zeros(),
            first_directions: topo.chains().iter().map(|c| c.rest_direction()).collect(),
        }
    }
}

fn check_joint_count(joints: &[Vector3<f64>], topo: &SkeletonTopology) -> Result<(), GeometryError> {
    if joints.len() != topo.joint_count() {
        return Err(GeometryError::DimensionMismatch { expected: topo.joint_count(), got: joints.len() });
    }
    Ok(())
}

fn bone_direction(
    joints: &[Vector3<f64>],
    start: usize,
    end: usize,
    chain: usize,
    bone: usize,
) -> Result<UnitVec3, GeometryError> {
    let d = joints[end] - joints[start];
    let length = d.norm();
    if length < MIN_BONE_LENGTH || !length.is_finite() {
        return Err(GeometryError::DegenerateBone { chain, bone, length });
    }
    Ok(UnitVec3(d / length))
}

/// Encodes joint positions as relative rotations between adjacent bones.
pub fn pose_to_lie(joints: &[Vector3<f64>], topo: &SkeletonTopology) -> Result<LieVector, GeometryError> {
    check_joint_count(joints, topo)?;
    let mut entries = Vec::with_capacity(topo.entry_count());
    for (c, chain) in topo.chains().iter().enumerate() {
        let ids = chain.joints();
        let dirs = ids
            .windows(2)
            .enumerate()
            .map(|(b, pair)| bone_direction(joints, pair[0], pair[1], c, b))
            .collect::<Result<Vec<_>, _>>()?;
        for pair in dirs.windows(2) {
            let aa = axis_angle_between_resolved(&pair[0], &pair[1]);
            entries.push(log_map(&rodrigues(&aa)).into_inner());
        }
    }
    Ok(LieVector(entries))
}

/// Forward kinematics: walks each chain from its attachment joint, rotating
/// the running bone direction by each entry and stepping by the bone length.
pub fn lie_to_pose(w: &LieVector, topo: &SkeletonTopology, root: &RootConfig) -> Result<JointPositions, GeometryError> {
    if w.len() != topo.entry_count() {
        return Err(GeometryError::DimensionMismatch { expected: topo.entry_count(), got: w.len() });
    }
    if root.first_directions.len() != topo.chains().len() {
        return Err(GeometryError::DimensionMismatch {
            expected: topo.chains().len(),
            got: root.first_directions.len(),
        });
    }
    let mut positions: Vec<Option<Vector3<f64>>> = vec![None; topo.joint_count()];
    positions[topo.root_joint()] = Some(root.position);
    let mut entry = 0;
    for (c, chain) in topo.chains().iter().enumerate() {
        let ids = chain.joints();
        let mut current = positions[ids[0]].expect("validated topology attaches chains to placed joints");
        let mut dir = *root.first_directions[c].as_vector();
        for (b, length) in chain.lengths().iter().enumerate() {
            if b > 0 {
                dir = exp_map(&So3Vec::new(w.0[entry])).apply(&dir);
                entry += 1;
            }
            current += dir * *length;
            positions[ids[b + 1]] = Some(current);
        }
    }
    Ok(positions.into_iter().map(|p| p.expect("validated topology covers every joint")).collect())
}
