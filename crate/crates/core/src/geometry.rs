//! Feature geometry: gaze ray construction, its table-plane hit point and the
//! fixed-width model input built from one observation frame.

use nalgebra::{Matrix3, Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec2 = Vector2<f64>;
pub type Vec3 = Vector3<f64>;

/// Downward tilt applied to the face norm to obtain the gaze ray.
pub const GAZE_TILT_RAD: f64 = std::f64::consts::PI / 6.0;

/// Number of position slots: palm, elbow, shoulder, head (3 each) and the
/// gaze hit point (2).
pub const POSITION_DIM: usize = 14;
/// Model input width: positions followed by their velocities.
pub const FEATURE_DIM: usize = 2 * POSITION_DIM;

const ORTHO_TOL: f64 = 1e-9;
const PARALLEL_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("gaze ray is parallel to the table plane")]
    GazeParallel,
    #[error("table plane lies behind the gaze origin")]
    GazeAway,
    #[error("frame time {t} does not follow previous frame time {prev}")]
    NonMonotonicTime { prev: f64, t: f64 },
    #[error("head rotation is not orthonormal (max deviation {0:.3e})")]
    NotOrthonormal(f64),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("plane normal must be unit length, got |n| = {0}")]
    BadNormal(f64),
}

/// The table surface. Coordinates are expressed in the table frame: origin at
/// the workspace corner, z up, so the default plane passes through the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TablePlane {
    normal: Vec3,
    point: Vec3,
}

impl TablePlane {
    pub fn new(normal: Vec3, point: Vec3) -> Result<Self, GeometryError> {
        let len = normal.norm();
        if !len.is_finite() || !point.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite("table plane"));
        }
        if (len - 1.0).abs() > 1e-9 {
            return Err(GeometryError::BadNormal(len));
        }
        Ok(Self { normal, point })
    }

    /// Plane z = 0 with upward normal.
    pub fn horizontal() -> Self {
        Self {
            normal: Vec3::z(),
            point: Vec3::zeros(),
        }
    }

    pub fn normal(&self) -> Vec3 {
        self.normal
    }

    pub fn point(&self) -> Vec3 {
        self.point
    }

    /// Signed distance of `q` from the plane along its normal.
    pub fn residual(&self, q: &Vec3) -> f64 {
        self.normal.dot(&(q - self.point))
    }
}

impl Default for TablePlane {
    fn default() -> Self {
        Self::horizontal()
    }
}

/// One raw observation of the human.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawFrame {
    pub t: f64,
    pub palm: [f64; 3],
    pub elbow: [f64; 3],
    pub shoulder: [f64; 3],
    pub head_pos: [f64; 3],
    /// Head frame in world coordinates, row-major. Column 0 is the face norm.
    pub head_rot: [f64; 9],
}

impl RawFrame {
    pub fn head_rotation(&self) -> Matrix3<f64> {
        Matrix3::from_row_slice(&self.head_rot)
    }

    pub fn palm(&self) -> Vec3 {
        Vec3::from(self.palm)
    }

    pub fn head(&self) -> Vec3 {
        Vec3::from(self.head_pos)
    }

    /// Checks finiteness and orthonormality of the head rotation.
    pub fn validate(&self) -> Result<(), GeometryError> {
        let all = std::iter::once(self.t)
            .chain(self.palm)
            .chain(self.elbow)
            .chain(self.shoulder)
            .chain(self.head_pos)
            .chain(self.head_rot);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite("raw frame"));
        }
        let r = self.head_rotation();
        let dev = (r.transpose() * r - Matrix3::identity()).abs().max();
        if dev > ORTHO_TOL {
            return Err(GeometryError::NotOrthonormal(dev));
        }
        Ok(())
    }
}

/// Face norm (head-frame x-axis) pitched down by 30 degrees about the
/// head-frame y-axis, expressed in world coordinates.
pub fn tilt_head_norm(head_rot: &Matrix3<f64>) -> Vec3 {
    let local = Rotation3::from_axis_angle(&Vec3::y_axis(), GAZE_TILT_RAD) * Vec3::x();
    (head_rot * local).normalize()
}

/// Intersection of the ray `head_pos + s * gaze_dir` (s > 0) with the plane,
/// with the z component dropped.
pub fn gaze_table_intersection(
    head_pos: &Vec3,
    gaze_dir: &Vec3,
    plane: &TablePlane,
) -> Result<Vec2, GeometryError> {
    let p3 = gaze_hit_3d(head_pos, gaze_dir, plane)?;
    Ok(Vec2::new(p3.x, p3.y))
}

/// Full 3-D hit point of the gaze ray on the plane.
pub fn gaze_hit_3d(
    head_pos: &Vec3,
    gaze_dir: &Vec3,
    plane: &TablePlane,
) -> Result<Vec3, GeometryError> {
    let n = plane.normal;
    let denom = n.dot(gaze_dir);
    if denom.abs() <= PARALLEL_TOL {
        return Err(GeometryError::GazeParallel);
    }
    let scale = n.dot(&(head_pos - plane.point)) / denom;
    // psi = h - scale * g; the hit is in front of the head only when -scale > 0.
    if scale >= 0.0 {
        return Err(GeometryError::GazeAway);
    }
    Ok(head_pos - scale * gaze_dir)
}

/// One frame in model-ready form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureFrame {
    pub raw: RawFrame,
    pub gaze_dir: [f64; 3],
    pub gaze_hit: [f64; 2],
    /// False when the hit point was carried over from an earlier frame.
    pub gaze_valid: bool,
    pub positions: [f64; POSITION_DIM],
    pub velocities: [f64; POSITION_DIM],
}

impl FeatureFrame {
    /// `positions ‖ velocities`, the 28-wide model input.
    pub fn input(&self) -> [f64; FEATURE_DIM] {
        let mut out = [0.0; FEATURE_DIM];
        out[..POSITION_DIM].copy_from_slice(&self.positions);
        out[POSITION_DIM..].copy_from_slice(&self.velocities);
        out
    }
}

/// Assembles the feature vector for `raw`. When the gaze ray misses the table
/// the previous hit point is reused, or `fallback_hit` at the start of a
/// trajectory.
pub fn build_features(
    prev: Option<&FeatureFrame>,
    raw: &RawFrame,
    plane: &TablePlane,
    fallback_hit: Vec2,
) -> Result<FeatureFrame, GeometryError> {
    if let Some(p) = prev {
        if raw.t <= p.raw.t {
            return Err(GeometryError::NonMonotonicTime {
                prev: p.raw.t,
                t: raw.t,
            });
        }
    }
    let gaze = tilt_head_norm(&raw.head_rotation());
    let (hit, valid) = match gaze_table_intersection(&raw.head(), &gaze, plane) {
        Ok(h) => (h, true),
        Err(_) => (
            prev.map(|p| Vec2::from(p.gaze_hit)).unwrap_or(fallback_hit),
            false,
        ),
    };

    let mut positions = [0.0; POSITION_DIM];
    positions[0..3].copy_from_slice(&raw.palm);
    positions[3..6].copy_from_slice(&raw.elbow);
    positions[6..9].copy_from_slice(&raw.shoulder);
    positions[9..12].copy_from_slice(&raw.head_pos);
    positions[12] = hit.x;
    positions[13] = hit.y;

    let mut velocities = [0.0; POSITION_DIM];
    if let Some(p) = prev {
        let dt = raw.t - p.raw.t;
        for (v, (cur, old)) in velocities
            .iter_mut()
            .zip(positions.iter().zip(p.positions.iter()))
        {
            *v = (cur - old) / dt;
        }
    }

    Ok(FeatureFrame {
        raw: raw.clone(),
        gaze_dir: gaze.into(),
        gaze_hit: hit.into(),
        gaze_valid: valid,
        positions,
        velocities,
    })
}

/// Builds features for a whole trajectory.
pub fn featurize(
    frames: &[RawFrame],
    plane: &TablePlane,
    fallback_hit: Vec2,
) -> Result<Vec<FeatureFrame>, GeometryError> {
    let mut out: Vec<FeatureFrame> = Vec::with_capacity(frames.len());
    for raw in frames {
        let f = build_features(out.last(), raw, plane, fallback_hit)?;
        out.push(f);
    }
    Ok(out)
}

/// Head rotation whose tilted face norm points along `dir`. Yaw about world z,
/// then pitch about the head y-axis; no roll.
pub fn head_rotation_towards(dir: &Vec3) -> Matrix3<f64> {
    let d = dir.normalize();
    let yaw = d.y.atan2(d.x);
    let elevation = (-d.z).atan2(d.x.hypot(d.y));
    let pitch = elevation - GAZE_TILT_RAD;
    let r = Rotation3::from_axis_angle(&Vec3::z_axis(), yaw)
        * Rotation3::from_axis_angle(&Vec3::y_axis(), pitch);
    *r.matrix()
}

pub fn matrix_to_row_major(m: &Matrix3<f64>) -> [f64; 9] {
    let mut out = [0.0; 9];
    for r in 0..3 {
        for c in 0..3 {
            out[r * 3 + c] = m[(r, c)];
        }
    }
    out
}
