//! Pinhole camera model, planar homography estimation and marker pose.
//!
//! Camera frame: X right, Y down, Z forward. Marker frame: origin at the
//! pattern center, X along pattern columns, Y along pattern rows (top to
//! bottom), Z into the printed face. A marker seen head-on and upright has
//! identity rotation.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{Matrix3, Point2, SMatrix, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::marker::{DetectedMarker, MarkerPattern};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::Config(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("image size must be positive".into()));
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy) {
            return Err(Error::Config(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cam: Self = crate::io::read_json(path)?;
        cam.validate()?;
        Ok(cam)
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Pinhole projection without any depth check.
    #[inline]
    pub fn project_unchecked(&self, p: &Vector3<f64>) -> Point2<f64> {
        Point2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }
}

/// A 3x3 projective map, normalized so that `m[(2,2)] == 1` when that
/// element is not vanishingly small.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Homography {
    m: Matrix3<f64>,
}

impl Homography {
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        if m.determinant().abs() < 1e-300 || m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular("homography is rank deficient".into()));
        }
        let mut m = m;
        if m[(2, 2)].abs() > 1e-12 {
            m /= m[(2, 2)];
        }
        Ok(Self { m })
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    #[inline]
    pub fn apply(&self, p: Point2<f64>) -> Point2<f64> {
        let m = &self.m;
        let w = m[(2, 0)] * p.x + m[(2, 1)] * p.y + m[(2, 2)];
        Point2::new(
            (m[(0, 0)] * p.x + m[(0, 1)] * p.y + m[(0, 2)]) / w,
            (m[(1, 0)] * p.x + m[(1, 1)] * p.y + m[(1, 2)]) / w,
        )
    }

    pub fn inverse(&self) -> Result<Self> {
        let inv = self
            .m
            .try_inverse()
            .ok_or_else(|| Error::Singular("homography is not invertible".into()))?;
        Self::from_matrix(inv)
    }
}

/// Similarity taking the points' centroid to the origin and their mean
/// distance from it to sqrt(2).
fn hartley_normalization(points: &[Point2<f64>; 4]) -> Result<Matrix3<f64>> {
    let centroid = points.iter().map(|p| p.coords).sum::<Vector2<f64>>() / 4.0;
    let mean_dist = points.iter().map(|p| (p.coords - centroid).norm()).sum::<f64>() / 4.0;
    if !(mean_dist > 1e-300) || !mean_dist.is_finite() {
        return Err(Error::Singular("points coincide".into()));
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Ok(Matrix3::new(
        s,
        0.0,
        -s * centroid.x,
        0.0,
        s,
        -s * centroid.y,
        0.0,
        0.0,
        1.0,
    ))
}

fn transform(t: &Matrix3<f64>, p: &Point2<f64>) -> Point2<f64> {
    Point2::new(t[(0, 0)] * p.x + t[(0, 2)], t[(1, 1)] * p.y + t[(1, 2)])
}

fn has_collinear_triple(points: &[Point2<f64>; 4]) -> bool {
    const TRIPLES: [[usize; 3]; 4] = [[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]];
    TRIPLES.iter().any(|&[a, b, c]| {
        let ab = points[b] - points[a];
        let ac = points[c] - points[a];
        (ab.x * ac.y - ab.y * ac.x).abs() < 1e-9
    })
}

/// Direct Linear Transform over four Hartley-normalized correspondences.
pub fn estimate_homography(object: &[Point2<f64>; 4], image: &[Point2<f64>; 4]) -> Result<Homography> {
    let t_obj = hartley_normalization(object)?;
    let t_img = hartley_normalization(image)?;
    let obj_n: [Point2<f64>; 4] = std::array::from_fn(|i| transform(&t_obj, &object[i]));
    let img_n: [Point2<f64>; 4] = std::array::from_fn(|i| transform(&t_img, &image[i]));
    if has_collinear_triple(&obj_n) || has_collinear_triple(&img_n) {
        return Err(Error::Singular("three correspondences are collinear".into()));
    }

    // 8 equations padded with a zero row so the SVD yields a full V.
    let mut a = SMatrix::<f64, 9, 9>::zeros();
    for (i, (o, p)) in obj_n.iter().zip(&img_n).enumerate() {
        let (x, y, u, v) = (o.x, o.y, p.x, p.y);
        let r = 2 * i;
        let row0 = [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u];
        let row1 = [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v];
        for c in 0..9 {
            a[(r, c)] = row0[c];
            a[(r + 1, c)] = row1[c];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| Error::Singular("SVD did not converge".into()))?;
    let smallest = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(8);
    let h = v_t.row(smallest);
    let h_n = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);

    let t_img_inv = t_img
        .try_inverse()
        .ok_or_else(|| Error::Singular("normalization is singular".into()))?;
    Homography::from_matrix(t_img_inv * h_n * t_obj)
}

/// Rigid camera-from-marker transform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self::new(Matrix3::identity(), Vector3::zeros())
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::new(Matrix3::identity(), t)
    }

    #[inline]
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Orthonormality and unit determinant within `tol`.
    pub fn is_rigid(&self, tol: f64) -> bool {
        let gram = self.rotation.transpose() * self.rotation - Matrix3::identity();
        gram.amax() <= tol && (self.rotation.determinant() - 1.0).abs() <= tol
    }

    /// Angle of the relative rotation between two poses, radians.
    pub fn rotation_angle_to(&self, other: &Pose) -> f64 {
        let rel = self.rotation.transpose() * other.rotation;
        ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
    }

    /// Pose as 12 row-major numbers of the 3x4 matrix `[R | t]`.
    pub fn to_rows(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t.x,
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t.y,
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.z,
        ]
    }
}

/// Planar marker pose from a marker-plane-to-image homography.
pub fn pose_from_homography(h: &Homography, cam: &CameraIntrinsics) -> Result<Pose> {
    let k_inv = cam
        .matrix()
        .try_inverse()
        .ok_or_else(|| Error::PoseFailure("intrinsics matrix is singular".into()))?;
    let m = k_inv * h.matrix();
    let m1: Vector3<f64> = m.column(0).into();
    let m2: Vector3<f64> = m.column(1).into();
    let m3: Vector3<f64> = m.column(2).into();
    let norm_sum = m1.norm() + m2.norm();
    if !(norm_sum > 1e-300) || !norm_sum.is_finite() {
        return Err(Error::PoseFailure("homography has vanishing rotation columns".into()));
    }
    let mut lambda = 2.0 / norm_sum;
    // choose the sign that puts the marker in front of the camera
    if lambda * m3.z < 0.0 {
        lambda = -lambda;
    }
    let r1 = m1 * lambda;
    let r2 = m2 * lambda;
    let r3 = r1.cross(&r2);
    let t = m3 * lambda;
    let approx = Matrix3::from_columns(&[r1, r2, r3]);
    let rotation = nearest_rotation(&approx)?;
    Ok(Pose::new(rotation, t))
}

/// Orthogonal polar factor with a proper-rotation guarantee.
pub fn nearest_rotation(m: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    let svd = m.svd(true, true);
    let (Some(mut u), Some(v_t)) = (svd.u, svd.v_t) else {
        return Err(Error::PoseFailure("SVD did not converge".into()));
    };
    if (u * v_t).determinant() < 0.0 {
        let smallest = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(2);
        u.column_mut(smallest).neg_mut();
    }
    Ok(u * v_t)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoseParams {
    /// Detections whose mean corner reprojection error exceeds this are rejected.
    pub max_reprojection_px: f64,
    /// Levenberg-Marquardt steps on corner reprojection error after the
    /// closed-form estimate; 0 disables refinement.
    pub refine_iterations: usize,
}

impl Default for PoseParams {
    fn default() -> Self {
        Self {
            max_reprojection_px: 3.0,
            refine_iterations: 20,
        }
    }
}

/// Corners of a marker in its own frame, in canonical order (top-left,
/// top-right, bottom-right, bottom-left of the pattern).
pub fn marker_object_corners(pattern: &MarkerPattern) -> [Point2<f64>; 4] {
    let half = pattern.physical_width / 2.0;
    let c = pattern.center_offset;
    [
        Point2::new(c.x - half, c.y - half),
        Point2::new(c.x + half, c.y - half),
        Point2::new(c.x + half, c.y + half),
        Point2::new(c.x - half, c.y + half),
    ]
}

pub fn mean_reprojection_error(
    pose: &Pose,
    cam: &CameraIntrinsics,
    object: &[Point2<f64>; 4],
    image: &[Point2<f64>; 4],
) -> f64 {
    object
        .iter()
        .zip(image)
        .map(|(o, i)| {
            let p = pose.transform_point(&Vector3::new(o.x, o.y, 0.0));
            if p.z <= 0.0 {
                return f64::INFINITY;
            }
            (cam.project_unchecked(&p) - i).norm()
        })
        .sum::<f64>()
        / 4.0
}

pub fn pose_from_marker(
    det: &DetectedMarker,
    pattern: &MarkerPattern,
    cam: &CameraIntrinsics,
    params: &PoseParams,
) -> Result<Pose> {
    if !(pattern.physical_width > 0.0) {
        return Err(Error::PoseFailure(format!(
            "pattern {} has non-positive physical width",
            pattern.id
        )));
    }
    let object = marker_object_corners(pattern);
    let h = estimate_homography(&object, &det.corners)
        .map_err(|e| Error::PoseFailure(format!("degenerate homography: {e}")))?;
    let pose = pose_from_homography(&h, cam)?;
    let pose = refine_pose(&pose, cam, &object, &det.corners, params.refine_iterations);
    let err = mean_reprojection_error(&pose, cam, &object, &det.corners);
    if !(err <= params.max_reprojection_px) {
        return Err(Error::LowQualityPose {
            mean_error_px: err,
            threshold_px: params.max_reprojection_px,
        });
    }
    Ok(pose)
}

fn reprojection_residuals(
    pose: &Pose,
    cam: &CameraIntrinsics,
    object: &[Point2<f64>; 4],
    image: &[Point2<f64>; 4],
) -> Option<SMatrix<f64, 8, 1>> {
    let mut r = SMatrix::<f64, 8, 1>::zeros();
    for (k, (o, i)) in object.iter().zip(image).enumerate() {
        let p = pose.transform_point(&Vector3::new(o.x, o.y, 0.0));
        if p.z <= 0.0 {
            return None;
        }
        let q = cam.project_unchecked(&p);
        r[2 * k] = q.x - i.x;
        r[2 * k + 1] = q.y - i.y;
    }
    Some(r)
}

/// Applies a left-multiplied rotation-vector increment and a translation
/// increment.
fn perturb(pose: &Pose, delta: &SMatrix<f64, 6, 1>) -> Pose {
    let w = Vector3::new(delta[0], delta[1], delta[2]);
    let dr = nalgebra::Rotation3::new(w).into_inner();
    Pose::new(
        dr * pose.rotation,
        pose.translation + Vector3::new(delta[3], delta[4], delta[5]),
    )
}

/// Levenberg-Marquardt minimization of the squared corner reprojection
/// error, starting from `pose`. Never returns a pose with a larger error.
pub fn refine_pose(
    pose: &Pose,
    cam: &CameraIntrinsics,
    object: &[Point2<f64>; 4],
    image: &[Point2<f64>; 4],
    iterations: usize,
) -> Pose {
    let Some(mut residual) = reprojection_residuals(pose, cam, object, image) else {
        return *pose;
    };
    let mut current = *pose;
    let mut cost = residual.norm_squared();
    let mut damping = 1e-3;
    let scale = pose.translation.norm().max(1e-9);
    for _ in 0..iterations {
        if cost < 1e-24 {
            break;
        }
        let mut jac = SMatrix::<f64, 8, 6>::zeros();
        for j in 0..6 {
            let h = if j < 3 { 1e-7 } else { 1e-7 * scale };
            let mut d = SMatrix::<f64, 6, 1>::zeros();
            d[j] = h;
            let (Some(plus), Some(minus)) = (
                reprojection_residuals(&perturb(&current, &d), cam, object, image),
                reprojection_residuals(&perturb(&current, &(-d)), cam, object, image),
            ) else {
                return current;
            };
            jac.set_column(j, &((plus - minus) / (2.0 * h)));
        }
        let jtj = jac.transpose() * jac;
        let jtr = jac.transpose() * residual;
        let mut improved = false;
        for _ in 0..10 {
            let mut a = jtj;
            for i in 0..6 {
                a[(i, i)] += damping * jtj[(i, i)].max(1e-12);
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&(-jtr))) else {
                damping *= 10.0;
                continue;
            };
            let candidate = perturb(&current, &step);
            match reprojection_residuals(&candidate, cam, object, image) {
                Some(r) if r.norm_squared() < cost => {
                    current = candidate;
                    residual = r;
                    cost = r.norm_squared();
                    damping = (damping * 0.1).max(1e-12);
                    improved = true;
                    break;
                }
                _ => damping *= 10.0,
            }
        }
        if !improved {
            break;
        }
    }
    current
}

/// Column-major 4x4 homogeneous model-view matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelView16(pub [f64; 16]);

impl ModelView16 {
    pub fn from_pose(pose: &Pose) -> Self {
        let r = &pose.rotation;
        let t = &pose.translation;
        let mut m = [0.0; 16];
        for col in 0..3 {
            for row in 0..3 {
                m[col * 4 + row] = r[(row, col)];
            }
        }
        m[12] = t.x;
        m[13] = t.y;
        m[14] = t.z;
        m[15] = 1.0;
        Self(m)
    }

    /// Inverse of [`ModelView16::from_pose`]; fails unless the bottom row is
    /// `(0, 0, 0, 1)`.
    pub fn to_pose(&self) -> Result<Pose> {
        let m = &self.0;
        if m[3] != 0.0 || m[7] != 0.0 || m[11] != 0.0 || m[15] != 1.0 {
            return Err(Error::InvalidInput("model-view bottom row must be (0, 0, 0, 1)".into()));
        }
        let rotation = Matrix3::from_fn(|row, col| m[col * 4 + row]);
        Ok(Pose::new(rotation, Vector3::new(m[12], m[13], m[14])))
    }
}

impl fmt::Display for ModelView16 {
    /// 16 whitespace-separated decimals, column-major.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

impl FromStr for ModelView16 {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let values: Vec<f64> = s
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InvalidInput(format!("model-view: {e}")))?;
        let m: [f64; 16] = values
            .try_into()
            .map_err(|v: Vec<f64>| Error::InvalidInput(format!("model-view needs 16 numbers, got {}", v.len())))?;
        Ok(Self(m))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Eye {
    Left,
    Right,
}

/// Shifts the rendering camera half the interocular separation sideways.
/// Axes stay parallel; only `translation.x` changes.
pub fn eye_offset(pose: &Pose, eye: Eye, separation: f64) -> Pose {
    let shift = match eye {
        Eye::Left => separation / 2.0,
        Eye::Right => -separation / 2.0,
    };
    let mut out = *pose;
    out.translation.x += shift;
    out
}
