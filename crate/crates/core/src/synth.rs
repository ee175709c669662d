//! Synthetic camera frames of markers under known poses, with exact
//! ground-truth corners.
//!
//! This generator is the reference the detection and pose code is tested
//! against, so it deliberately has its own projection and plane-inversion
//! arithmetic and does not call into `pose` or `renderer`.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{Frame, Rgb};
use crate::marker::{MarkerDictionary, MarkerPattern};
use crate::pose::{CameraIntrinsics, Pose};

#[derive(Clone, Debug, PartialEq)]
pub enum Background {
    Uniform(Rgb),
    Image(Frame),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthPlacement {
    pub pattern: MarkerPattern,
    pub pose: Pose,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub cam: CameraIntrinsics,
    pub placements: Vec<SynthPlacement>,
    pub background: Background,
    /// (dark, light) intensities of marker cells.
    pub marker_brightness: (u8, u8),
    /// Standard deviation of additive gaussian noise, intensity units.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(cam: CameraIntrinsics) -> Self {
        Self {
            cam,
            placements: Vec::new(),
            background: Background::Uniform([128, 128, 128]),
            marker_brightness: (20, 235),
            noise_sigma: 0.0,
            seed: 0,
        }
    }

    pub fn with_marker(mut self, pattern: MarkerPattern, pose: Pose) -> Self {
        self.placements.push(SynthPlacement { pattern, pose });
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub pattern_id: u32,
    pub pose: Pose,
    /// Projected corners: pattern top-left, top-right, bottom-right,
    /// bottom-left.
    pub corners: [[f64; 2]; 4],
}

/// Marker-plane corners in canonical order.
fn plane_corners(pattern: &MarkerPattern) -> [[f64; 2]; 4] {
    let h = pattern.physical_width * 0.5;
    let (ox, oy) = (pattern.center_offset.x, pattern.center_offset.y);
    [[ox - h, oy - h], [ox + h, oy - h], [ox + h, oy + h], [ox - h, oy + h]]
}

fn to_camera(pose: &Pose, x: f64, y: f64) -> [f64; 3] {
    let r = &pose.rotation;
    let t = &pose.translation;
    [
        r[(0, 0)] * x + r[(0, 1)] * y + t[0],
        r[(1, 0)] * x + r[(1, 1)] * y + t[1],
        r[(2, 0)] * x + r[(2, 1)] * y + t[2],
    ]
}

/// Independent pinhole projection.
fn pinhole(cam: &CameraIntrinsics, p: [f64; 3]) -> [f64; 2] {
    [cam.fx * (p[0] / p[2]) + cam.cx, cam.fy * (p[1] / p[2]) + cam.cy]
}

/// Exact projections of a marker's corners.
pub fn project_corners(cam: &CameraIntrinsics, pattern: &MarkerPattern, pose: &Pose) -> [[f64; 2]; 4] {
    plane_corners(pattern).map(|[x, y]| pinhole(cam, to_camera(pose, x, y)))
}

/// Image-to-marker-plane map for one placement.
struct PlaneSampler<'a> {
    pattern: &'a MarkerPattern,
    /// Inverse of K·[r1 r2 t], row-major.
    inv: [[f64; 3]; 3],
}

impl<'a> PlaneSampler<'a> {
    fn new(cam: &CameraIntrinsics, placement: &'a SynthPlacement) -> Result<Self> {
        let r = &placement.pose.rotation;
        let t = &placement.pose.translation;
        let cols = [
            [r[(0, 0)], r[(1, 0)], r[(2, 0)]],
            [r[(0, 1)], r[(1, 1)], r[(2, 1)]],
            [t[0], t[1], t[2]],
        ];
        let mut h = [[0.0; 3]; 3];
        for (c, col) in cols.iter().enumerate() {
            h[0][c] = cam.fx * col[0] + cam.cx * col[2];
            h[1][c] = cam.fy * col[1] + cam.cy * col[2];
            h[2][c] = col[2];
        }
        let inv = invert3(&h).ok_or_else(|| {
            Error::InvalidSpec(format!(
                "marker {} plane passes through the camera",
                placement.pattern.id
            ))
        })?;
        Ok(Self {
            pattern: &placement.pattern,
            inv,
        })
    }

    /// Cell index hit by the ray through pixel position `(u, v)`, or `None`
    /// outside the marker.
    fn cell_at(&self, u: f64, v: f64) -> Option<(usize, usize)> {
        let m = &self.inv;
        let w = m[2][0] * u + m[2][1] * v + m[2][2];
        if w == 0.0 {
            return None;
        }
        let x = (m[0][0] * u + m[0][1] * v + m[0][2]) / w;
        let y = (m[1][0] * u + m[1][1] * v + m[1][2]) / w;
        let p = self.pattern;
        let n = p.size() as f64;
        let gx = ((x - p.center_offset.x) / p.physical_width + 0.5) * n;
        let gy = ((y - p.center_offset.y) / p.physical_width + 0.5) * n;
        if gx >= 0.0 && gy >= 0.0 && gx < n && gy < n {
            Some((gy as usize, gx as usize))
        } else {
            None
        }
    }
}

fn invert3(m: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let c00 = m[1][1] * m[2][2] - m[1][2] * m[2][1];
    let c01 = m[1][2] * m[2][0] - m[1][0] * m[2][2];
    let c02 = m[1][0] * m[2][1] - m[1][1] * m[2][0];
    let det = m[0][0] * c00 + m[0][1] * c01 + m[0][2] * c02;
    if det.abs() < 1e-300 {
        return None;
    }
    let d = 1.0 / det;
    Some([
        [
            c00 * d,
            (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * d,
            (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * d,
        ],
        [
            c01 * d,
            (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * d,
            (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * d,
        ],
        [
            c02 * d,
            (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * d,
            (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * d,
        ],
    ])
}

#[derive(Clone, Copy, PartialEq)]
enum Hit {
    Background,
    Cell { marker: usize, row: usize, col: usize },
}

fn validate(spec: &SynthSpec) -> Result<()> {
    spec.cam.validate().map_err(|e| Error::InvalidSpec(e.to_string()))?;
    let (dark, light) = spec.marker_brightness;
    if dark >= light {
        return Err(Error::InvalidSpec(format!(
            "dark intensity {dark} must be below light {light}"
        )));
    }
    if !(spec.noise_sigma >= 0.0 && spec.noise_sigma.is_finite()) {
        return Err(Error::InvalidSpec(format!(
            "noise sigma {} must be >= 0",
            spec.noise_sigma
        )));
    }
    if let Background::Image(bg) = &spec.background {
        if !bg.same_size(spec.cam.width, spec.cam.height) {
            return Err(Error::InvalidSpec("background image must match the camera size".into()));
        }
    }
    let (w, h) = (spec.cam.width as f64, spec.cam.height as f64);
    for pl in &spec.placements {
        let id = pl.pattern.id;
        let r = &pl.pose.rotation;
        let t = &pl.pose.translation;
        let normal_dot_t = r[(0, 2)] * t[0] + r[(1, 2)] * t[1] + r[(2, 2)] * t[2];
        if !(normal_dot_t > 0.0) {
            return Err(Error::InvalidSpec(format!("marker {id} does not face the camera")));
        }
        for [x, y] in plane_corners(&pl.pattern) {
            let p = to_camera(&pl.pose, x, y);
            if !(p[2] > 0.0) {
                return Err(Error::InvalidSpec(format!("marker {id} corner is behind the camera")));
            }
            let [u, v] = pinhole(&spec.cam, p);
            if !(u >= 0.0 && v >= 0.0 && u <= w - 1.0 && v <= h - 1.0) {
                return Err(Error::InvalidSpec(format!(
                    "marker {id} corner ({u:.2}, {v:.2}) is outside the image"
                )));
            }
        }
    }
    Ok(())
}

/// Renders the spec by inverse-mapping each pixel onto the marker planes.
/// Pixels whose footprint straddles a cell or marker boundary are averaged
/// over a 4 x 4 sub-sample lattice.
pub fn render_synthetic(spec: &SynthSpec) -> Result<(Frame, Vec<GroundTruth>)> {
    validate(spec)?;
    let samplers = spec
        .placements
        .iter()
        .map(|p| PlaneSampler::new(&spec.cam, p))
        .collect::<Result<Vec<_>>>()?;
    let (w, h) = (spec.cam.width, spec.cam.height);
    let (dark, light) = spec.marker_brightness;

    let hit = |u: f64, v: f64| -> Hit {
        for (marker, s) in samplers.iter().enumerate() {
            if let Some((row, col)) = s.cell_at(u, v) {
                return Hit::Cell { marker, row, col };
            }
        }
        Hit::Background
    };
    let color = |h: Hit, x: usize, y: usize| -> [f64; 3] {
        match h {
            Hit::Cell { marker, row, col } => {
                let v = if samplers[marker].pattern.cell(row, col) {
                    dark
                } else {
                    light
                } as f64;
                [v; 3]
            }
            Hit::Background => {
                let rgb = match &spec.background {
                    Background::Uniform(rgb) => *rgb,
                    Background::Image(img) => img.pixel(x, y),
                };
                rgb.map(f64::from)
            }
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = if spec.noise_sigma > 0.0 {
        Some(Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::InvalidSpec(e.to_string()))?)
    } else {
        None
    };
    const SUB: [f64; 4] = [-0.375, -0.125, 0.125, 0.375];

    let mut pixels = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (u, v) = (x as f64, y as f64);
            let center = hit(u, v);
            let uniform = [(-0.5, -0.5), (0.5, -0.5), (0.5, 0.5), (-0.5, 0.5)]
                .iter()
                .all(|&(du, dv)| hit(u + du, v + dv) == center);
            let value = if uniform {
                color(center, x, y)
            } else {
                let mut acc = [0.0; 3];
                for dv in SUB {
                    for du in SUB {
                        let c = color(hit(u + du, v + dv), x, y);
                        for k in 0..3 {
                            acc[k] += c[k];
                        }
                    }
                }
                acc.map(|a| a / 16.0)
            };
            let px = value.map(|c| {
                let c = match &noise {
                    Some(n) => c + n.sample(&mut rng),
                    None => c,
                };
                c.round().clamp(0.0, 255.0) as u8
            });
            pixels.push(px);
        }
    }

    let truth = spec
        .placements
        .iter()
        .map(|p| GroundTruth {
            pattern_id: p.pattern.id,
            pose: p.pose,
            corners: project_corners(&spec.cam, &p.pattern, &p.pose),
        })
        .collect();
    Ok((Frame::new(w, h, pixels)?, truth))
}

/// Random marker poses: distance (norm of the translation) in
/// `[min_distance, max_distance]` marker widths, tilt of the marker normal
/// from the optical axis up to `max_tilt_deg`, any in-plane rotation, and a
/// position that keeps the whole marker at least `margin_px` inside the image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseEnvelope {
    pub min_distance: f64,
    pub max_distance: f64,
    pub max_tilt_deg: f64,
    pub margin_px: f64,
}

impl Default for PoseEnvelope {
    fn default() -> Self {
        Self {
            min_distance: 2.0,
            max_distance: 10.0,
            max_tilt_deg: 60.0,
            margin_px: 8.0,
        }
    }
}

impl PoseEnvelope {
    /// Draws a pose; rejection-samples the image position and redraws
    /// everything when a pose cannot be placed inside the frame.
    pub fn sample<R: Rng>(&self, rng: &mut R, cam: &CameraIntrinsics, pattern: &MarkerPattern) -> Pose {
        let width = pattern.physical_width;
        loop {
            let distance = rng.random_range(self.min_distance..=self.max_distance) * width;
            let tilt = rng.random_range(0.0..=self.max_tilt_deg).to_radians();
            let tilt_axis_angle = rng.random_range(0.0..2.0 * PI);
            let spin = rng.random_range(0.0..2.0 * PI);
            let axis = Unit::new_normalize(Vector3::new(tilt_axis_angle.cos(), tilt_axis_angle.sin(), 0.0));
            let rotation: Matrix3<f64> = (Rotation3::from_axis_angle(&axis, tilt)
                * Rotation3::from_axis_angle(&Vector3::z_axis(), spin))
            .into_inner();
            for _ in 0..50 {
                let u = rng.random_range(0.0..cam.width as f64);
                let v = rng.random_range(0.0..cam.height as f64);
                let ray = Vector3::new((u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0).normalize();
                let pose = Pose::new(rotation, ray * distance);
                if self.fits(cam, pattern, &pose) {
                    return pose;
                }
            }
        }
    }

    fn fits(&self, cam: &CameraIntrinsics, pattern: &MarkerPattern, pose: &Pose) -> bool {
        let r = &pose.rotation;
        let t = &pose.translation;
        let faces = r[(0, 2)] * t[0] + r[(1, 2)] * t[1] + r[(2, 2)] * t[2] > 0.0;
        let m = self.margin_px;
        faces
            && plane_corners(pattern).iter().all(|&[x, y]| {
                let p = to_camera(pose, x, y);
                if p[2] <= 0.0 {
                    return false;
                }
                let [u, v] = pinhole(cam, p);
                u >= m && v >= m && u <= cam.width as f64 - 1.0 - m && v <= cam.height as f64 - 1.0 - m
            })
    }
}

/// JSON form of a [`SynthSpec`]; paths are relative to the spec file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpecFile {
    pub intrinsics: String,
    pub dictionary: String,
    /// `[r, g, b]` or a path to a background image.
    #[serde(default = "default_background")]
    pub background: BackgroundRepr,
    #[serde(default = "default_brightness")]
    pub marker_brightness: [u8; 2],
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
    pub markers: Vec<MarkerPlacementRepr>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BackgroundRepr {
    Uniform([u8; 3]),
    Image(String),
}

fn default_background() -> BackgroundRepr {
    BackgroundRepr::Uniform([128, 128, 128])
}

fn default_brightness() -> [u8; 2] {
    [20, 235]
}

/// Marker pose given as a row-major rotation matrix or as roll/pitch/yaw in
/// degrees (applied about X, then Y, then Z).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkerPlacementRepr {
    pub id: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation: Option<[f64; 9]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation_deg: Option<[f64; 3]>,
    pub translation: [f64; 3],
}

impl MarkerPlacementRepr {
    pub fn pose(&self) -> Result<Pose> {
        let rotation = match (self.rotation, self.rotation_deg) {
            (Some(_), Some(_)) => {
                return Err(Error::InvalidSpec(format!(
                    "marker {}: give either rotation or rotation_deg",
                    self.id
                )))
            }
            (Some(m), None) => Matrix3::from_row_slice(&m),
            (None, Some([rx, ry, rz])) => {
                Rotation3::from_euler_angles(rx.to_radians(), ry.to_radians(), rz.to_radians()).into_inner()
            }
            (None, None) => Matrix3::identity(),
        };
        let pose = Pose::new(rotation, Vector3::from(self.translation));
        if !pose.is_rigid(1e-6) {
            return Err(Error::InvalidSpec(format!(
                "marker {}: rotation is not a rotation",
                self.id
            )));
        }
        Ok(pose)
    }
}

impl SynthSpecFile {
    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let file: Self = crate::io::read_json(path)?;
        let base = path.parent().unwrap_or_else(|| Path::new(".")).to_owned();
        Ok((file, base))
    }

    pub fn to_spec(&self, base: &Path) -> Result<SynthSpec> {
        let cam = CameraIntrinsics::load(&base.join(&self.intrinsics))?;
        let dict = MarkerDictionary::load(&base.join(&self.dictionary))?;
        let placements = self
            .markers
            .iter()
            .map(|m| {
                let pattern = dict
                    .pattern(m.id)
                    .ok_or_else(|| Error::InvalidSpec(format!("marker {} is not in the dictionary", m.id)))?;
                Ok(SynthPlacement {
                    pattern: pattern.clone(),
                    pose: m.pose()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let background = match &self.background {
            BackgroundRepr::Uniform(rgb) => Background::Uniform(*rgb),
            BackgroundRepr::Image(p) => Background::Image(crate::io::load_frame(&base.join(p))?),
        };
        Ok(SynthSpec {
            cam,
            placements,
            background,
            marker_brightness: (self.marker_brightness[0], self.marker_brightness[1]),
            noise_sigma: self.noise_sigma,
            seed: self.seed,
        })
    }
}

/// Ground-truth JSON: `{ "markers": [ { "id", "rotation", "translation",
/// "corners_px" } ] }` with the rotation row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthFile {
    pub markers: Vec<GroundTruthEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthEntry {
    pub id: u32,
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    pub corners_px: [[f64; 2]; 4],
}

impl From<&[GroundTruth]> for GroundTruthFile {
    fn from(truth: &[GroundTruth]) -> Self {
        let markers = truth
            .iter()
            .map(|g| {
                let r = &g.pose.rotation;
                GroundTruthEntry {
                    id: g.pattern_id,
                    rotation: std::array::from_fn(|i| r[(i / 3, i % 3)]),
                    translation: g.pose.translation.into(),
                    corners_px: g.corners,
                }
            })
            .collect();
        Self { markers }
    }
}
