//! Software rasterizer producing color, coverage and depth per eye.
//!
//! Everything happens in camera space (X right, Y down, Z forward). Front
//! faces wind counterclockwise around their outward normal (right-hand rule),
//! so a triangle is drawn when that normal points back toward the camera.
//! Pixel centers sit on integer coordinates and ownership follows the
//! top-left rule. Each fragment's barycentrics come straight from the edge
//! functions at the pixel center, without incremental stepping, so the output
//! of a triangle at a pixel does not depend on traversal order.

mod mesh;

use std::path::Path;

use nalgebra::{Point2, Vector2, Vector3};
use serde::{Deserialize, Serialize};

pub use self::mesh::{builtin_mesh, load_obj, parse_obj, BUILTIN_MESHES};
use crate::error::{Error, Result};
use crate::imaging::{Frame, Rgb};
use crate::pose::{CameraIntrinsics, Pose};

pub const DEFAULT_NEAR: f64 = 1e-4;
pub const DEFAULT_AMBIENT: f64 = 0.2;

#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vector3<f64>>,
    pub normals: Vec<Vector3<f64>>,
    pub uvs: Option<Vec<Vector2<f64>>>,
    pub triangles: Vec<[u32; 3]>,
}

impl Mesh {
    pub fn new(
        vertices: Vec<Vector3<f64>>,
        normals: Vec<Vector3<f64>>,
        uvs: Option<Vec<Vector2<f64>>>,
        triangles: Vec<[u32; 3]>,
    ) -> Result<Self> {
        let mesh = Self {
            vertices,
            normals,
            uvs,
            triangles,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        if self.normals.len() != n {
            return Err(Error::InvalidMesh(format!(
                "{} normals for {n} vertices",
                self.normals.len()
            )));
        }
        if let Some(uvs) = &self.uvs {
            if uvs.len() != n {
                return Err(Error::InvalidMesh(format!("{} uvs for {n} vertices", uvs.len())));
            }
        }
        if let Some(bad) = self.normals.iter().find(|v| (v.norm() - 1.0).abs() > 1e-6) {
            return Err(Error::InvalidMesh(format!("normal {bad:?} is not unit length")));
        }
        if let Some(t) = self.triangles.iter().find(|t| t.iter().any(|&i| i as usize >= n)) {
            return Err(Error::InvalidMesh(format!("triangle {t:?} indexes past {n} vertices")));
        }
        Ok(())
    }

    /// Uniformly scaled copy; normals are unaffected.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            vertices: self.vertices.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Material {
    pub diffuse: [f64; 3],
    pub ambient: f64,
    pub texture: Option<Frame>,
}

impl Default for Material {
    fn default() -> Self {
        Self {
            diffuse: [1.0; 3],
            ambient: DEFAULT_AMBIENT,
            texture: None,
        }
    }
}

impl Material {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if !self.diffuse.iter().all(|&c| in_unit(c)) || !in_unit(self.ambient) {
            return Err(Error::Config(format!(
                "material diffuse {:?} / ambient {} outside [0, 1]",
                self.diffuse, self.ambient
            )));
        }
        Ok(())
    }

    /// Bilinear, clamp-to-edge texel fetch. `v = 0` is the bottom row.
    pub fn texel(&self, uv: Vector2<f64>) -> [f64; 3] {
        let Some(tex) = &self.texture else {
            return [1.0; 3];
        };
        let (w, h) = (tex.width(), tex.height());
        let x = uv.x * w as f64 - 0.5;
        let y = (1.0 - uv.y) * h as f64 - 0.5;
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let clamp = |i: f64, n: usize| (i.max(0.0) as usize).min(n - 1);
        let (xa, xb) = (clamp(x0, w), clamp(x0 + 1.0, w));
        let (ya, yb) = (clamp(y0, h), clamp(y0 + 1.0, h));
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            let p00 = tex.pixel(xa, ya)[c] as f64;
            let p10 = tex.pixel(xb, ya)[c] as f64;
            let p01 = tex.pixel(xa, yb)[c] as f64;
            let p11 = tex.pixel(xb, yb)[c] as f64;
            let top = p00 + (p10 - p00) * fx;
            let bottom = p01 + (p11 - p01) * fx;
            *o = (top + (bottom - top) * fy) / 255.0;
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderParams {
    /// Direction the light travels, camera space.
    pub light_direction: [f64; 3],
    pub near: f64,
}

impl Default for RenderParams {
    fn default() -> Self {
        Self {
            light_direction: [0.0, 0.0, 1.0],
            near: DEFAULT_NEAR,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct RenderObject<'a> {
    pub mesh: &'a Mesh,
    pub material: &'a Material,
    /// Object-to-camera transform.
    pub pose: Pose,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderTarget {
    pub width: usize,
    pub height: usize,
    pub color: Vec<Rgb>,
    pub coverage: Vec<bool>,
    /// Camera-space z, `+inf` where nothing was drawn.
    pub depth: Vec<f64>,
}

impl RenderTarget {
    pub fn empty(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            color: vec![[0; 3]; n],
            coverage: vec![false; n],
            depth: vec![f64::INFINITY; n],
        }
    }

    pub fn covered_count(&self) -> usize {
        self.coverage.iter().filter(|&&c| c).count()
    }

    pub fn color_frame(&self) -> Frame {
        Frame::new(self.width, self.height, self.color.clone()).expect("target dimensions are positive")
    }

    pub fn coverage_pgm(&self) -> Vec<u8> {
        let values: Vec<u8> = self.coverage.iter().map(|&c| if c { 255 } else { 0 }).collect();
        crate::io::encode_pgm(self.width, self.height, &values)
    }

    /// Depth normalized to the covered range: nearest 255, farthest 1,
    /// uncovered 0.
    pub fn depth_pgm(&self) -> Vec<u8> {
        let covered = self.depth.iter().copied().filter(|d| d.is_finite());
        let (lo, hi) = covered.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| (lo.min(d), hi.max(d)));
        let span = (hi - lo).max(1e-12);
        let values: Vec<u8> = self
            .depth
            .iter()
            .map(|&d| {
                if d.is_finite() {
                    (255.0 - 254.0 * (d - lo) / span).round() as u8
                } else {
                    0
                }
            })
            .collect();
        crate::io::encode_pgm(self.width, self.height, &values)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        crate::io::save_frame(&self.color_frame(), path)
    }
}

/// Pinhole projection of a camera-space point.
pub fn project(cam: &CameraIntrinsics, p: &Vector3<f64>) -> Result<Point2<f64>> {
    project_with_near(cam, p, DEFAULT_NEAR)
}

pub fn project_with_near(cam: &CameraIntrinsics, p: &Vector3<f64>, near: f64) -> Result<Point2<f64>> {
    if !(p.z > near) {
        return Err(Error::BehindCamera { z: p.z });
    }
    Ok(cam.project_unchecked(p))
}

/// `R·p + t`, evaluated left to right.
#[inline]
pub fn transform_point(pose: &Pose, p: &Vector3<f64>) -> Vector3<f64> {
    let r = &pose.rotation;
    let t = &pose.translation;
    Vector3::new(
        r[(0, 0)] * p.x + r[(0, 1)] * p.y + r[(0, 2)] * p.z + t.x,
        r[(1, 0)] * p.x + r[(1, 1)] * p.y + r[(1, 2)] * p.z + t.y,
        r[(2, 0)] * p.x + r[(2, 1)] * p.y + r[(2, 2)] * p.z + t.z,
    )
}

#[inline]
pub fn rotate_vector(pose: &Pose, v: &Vector3<f64>) -> Vector3<f64> {
    let r = &pose.rotation;
    Vector3::new(
        r[(0, 0)] * v.x + r[(0, 1)] * v.y + r[(0, 2)] * v.z,
        r[(1, 0)] * v.x + r[(1, 1)] * v.y + r[(1, 2)] * v.z,
        r[(2, 0)] * v.x + r[(2, 1)] * v.y + r[(2, 2)] * v.z,
    )
}

/// Camera-space vertex with its interpolants.
#[derive(Clone, Copy, Debug)]
struct ClipVertex {
    pos: Vector3<f64>,
    normal: Vector3<f64>,
    uv: Vector2<f64>,
}

impl ClipVertex {
    fn lerp(&self, other: &Self, t: f64) -> Self {
        Self {
            pos: self.pos + (other.pos - self.pos) * t,
            normal: self.normal + (other.normal - self.normal) * t,
            uv: self.uv + (other.uv - self.uv) * t,
        }
    }
}

/// Projected vertex with attributes pre-divided by depth.
#[derive(Clone, Copy, Debug)]
struct ScreenVertex {
    x: f64,
    y: f64,
    inv_z: f64,
    normal_over_z: [f64; 3],
    uv_over_z: [f64; 2],
}

impl ScreenVertex {
    fn new(cam: &CameraIntrinsics, v: &ClipVertex) -> Self {
        let inv_z = 1.0 / v.pos.z;
        Self {
            x: cam.fx * v.pos.x / v.pos.z + cam.cx,
            y: cam.fy * v.pos.y / v.pos.z + cam.cy,
            inv_z,
            normal_over_z: [v.normal.x * inv_z, v.normal.y * inv_z, v.normal.z * inv_z],
            uv_over_z: [v.uv.x * inv_z, v.uv.y * inv_z],
        }
    }
}

/// `(b - a) × (p - a)`, positive when `p` is to the inside of a positively
/// oriented triangle's edge `a → b`.
#[inline]
fn edge(a: &ScreenVertex, b: &ScreenVertex, px: f64, py: f64) -> f64 {
    (b.x - a.x) * (py - a.y) - (b.y - a.y) * (px - a.x)
}

/// Top edges run exactly horizontally to the right; left edges run upward.
#[inline]
fn is_top_left(a: &ScreenVertex, b: &ScreenVertex) -> bool {
    (a.y == b.y && b.x > a.x) || b.y < a.y
}

#[inline]
fn owns(e: f64, top_left: bool) -> bool {
    e > 0.0 || (e == 0.0 && top_left)
}

/// Quantizes a unit-range channel, rounding half away from zero.
#[inline]
pub fn quantize(c: f64) -> u8 {
    (c * 255.0).round().clamp(0.0, 255.0) as u8
}

struct Shading {
    light: Vector3<f64>,
}

impl Shading {
    fn new(params: &RenderParams) -> Self {
        let l = Vector3::from(params.light_direction);
        let norm = l.norm();
        let light = if norm > 0.0 {
            l / norm
        } else {
            Vector3::new(0.0, 0.0, 1.0)
        };
        Self { light }
    }

    /// Ambient floor plus Lambertian term, scaled by diffuse and texel.
    fn shade(&self, material: &Material, normal: [f64; 3], uv: [f64; 2]) -> Rgb {
        let len = (normal[0] * normal[0] + normal[1] * normal[1] + normal[2] * normal[2]).sqrt();
        let lambert = if len > 0.0 {
            let d = -(normal[0] * self.light.x + normal[1] * self.light.y + normal[2] * self.light.z) / len;
            d.max(0.0)
        } else {
            0.0
        };
        let intensity = material.ambient + (1.0 - material.ambient) * lambert;
        let texel = material.texel(Vector2::new(uv[0], uv[1]));
        [
            quantize(material.diffuse[0] * texel[0] * intensity),
            quantize(material.diffuse[1] * texel[1] * intensity),
            quantize(material.diffuse[2] * texel[2] * intensity),
        ]
    }
}

/// Renders `objects` into a target the size of the camera image.
pub fn render(objects: &[RenderObject<'_>], cam: &CameraIntrinsics, params: &RenderParams) -> RenderTarget {
    let mut target = RenderTarget::empty(cam.width, cam.height);
    let shading = Shading::new(params);
    for obj in objects {
        let mesh = obj.mesh;
        let cam_pos: Vec<Vector3<f64>> = mesh.vertices.iter().map(|v| transform_point(&obj.pose, v)).collect();
        let cam_normals: Vec<Vector3<f64>> = mesh.normals.iter().map(|n| rotate_vector(&obj.pose, n)).collect();
        for tri in &mesh.triangles {
            let verts = tri.map(|i| {
                let i = i as usize;
                ClipVertex {
                    pos: cam_pos[i],
                    normal: cam_normals[i],
                    uv: mesh.uvs.as_ref().map_or(Vector2::zeros(), |uv| uv[i]),
                }
            });
            if is_back_facing(&verts) {
                continue;
            }
            let polygon = clip_near(&verts, params.near);
            for k in 1..polygon.len().saturating_sub(1) {
                let tri = [polygon[0], polygon[k], polygon[k + 1]];
                rasterize(&mut target, cam, &shading, obj.material, &tri);
            }
        }
    }
    target
}

/// Culls triangles whose outward normal does not point toward the camera.
fn is_back_facing(v: &[ClipVertex; 3]) -> bool {
    let a = v[0].pos;
    let ab = v[1].pos - a;
    let ac = v[2].pos - a;
    let n = ab.cross(&ac);
    n.dot(&a) >= 0.0
}

/// Sutherland-Hodgman against `z = near`, keeping `z > near`.
fn clip_near(tri: &[ClipVertex; 3], near: f64) -> Vec<ClipVertex> {
    if tri.iter().all(|v| v.pos.z > near) {
        return tri.to_vec();
    }
    let mut out = Vec::with_capacity(4);
    for i in 0..3 {
        let cur = tri[i];
        let next = tri[(i + 1) % 3];
        let cur_in = cur.pos.z > near;
        let next_in = next.pos.z > near;
        if cur_in {
            out.push(cur);
        }
        if cur_in != next_in {
            let t = (near - cur.pos.z) / (next.pos.z - cur.pos.z);
            let mut v = cur.lerp(&next, t);
            // land strictly on the visible side
            v.pos.z = v.pos.z.max(near * (1.0 + 1e-12));
            out.push(v);
        }
    }
    out
}

fn rasterize(
    target: &mut RenderTarget,
    cam: &CameraIntrinsics,
    shading: &Shading,
    material: &Material,
    tri: &[ClipVertex; 3],
) {
    let mut s = tri.each_ref().map(|v| ScreenVertex::new(cam, v));
    let mut area = edge(&s[0], &s[1], s[2].x, s[2].y);
    if area < 0.0 {
        s.swap(1, 2);
        area = -area;
    }
    if !(area > 0.0) || !area.is_finite() {
        return;
    }

    let (w, h) = (target.width, target.height);
    let min_x = s.iter().map(|v| v.x).fold(f64::INFINITY, f64::min).floor().max(0.0);
    let max_x = s
        .iter()
        .map(|v| v.x)
        .fold(f64::NEG_INFINITY, f64::max)
        .ceil()
        .min((w - 1) as f64);
    let min_y = s.iter().map(|v| v.y).fold(f64::INFINITY, f64::min).floor().max(0.0);
    let max_y = s
        .iter()
        .map(|v| v.y)
        .fold(f64::NEG_INFINITY, f64::max)
        .ceil()
        .min((h - 1) as f64);
    if min_x > max_x || min_y > max_y {
        return;
    }

    let tl = [
        is_top_left(&s[1], &s[2]),
        is_top_left(&s[2], &s[0]),
        is_top_left(&s[0], &s[1]),
    ];
    for y in min_y as usize..=max_y as usize {
        let py = y as f64;
        for x in min_x as usize..=max_x as usize {
            let px = x as f64;
            let e0 = edge(&s[1], &s[2], px, py);
            let e1 = edge(&s[2], &s[0], px, py);
            let e2 = edge(&s[0], &s[1], px, py);
            if !(owns(e0, tl[0]) && owns(e1, tl[1]) && owns(e2, tl[2])) {
                continue;
            }
            let frag = interpolate(&s, area, e0, e1, e2);
            let idx = y * w + x;
            if !(frag.depth < target.depth[idx]) {
                continue;
            }
            target.depth[idx] = frag.depth;
            target.coverage[idx] = true;
            target.color[idx] = shading.shade(material, frag.normal, frag.uv);
        }
    }
}

struct Fragment {
    depth: f64,
    normal: [f64; 3],
    uv: [f64; 2],
}

#[inline]
fn interpolate(s: &[ScreenVertex; 3], area: f64, e0: f64, e1: f64, e2: f64) -> Fragment {
    let b = [e0 / area, e1 / area, e2 / area];
    let w = b[0] * s[0].inv_z + b[1] * s[1].inv_z + b[2] * s[2].inv_z;
    let depth = 1.0 / w;
    let lerp3 =
        |c: usize| (b[0] * s[0].normal_over_z[c] + b[1] * s[1].normal_over_z[c] + b[2] * s[2].normal_over_z[c]) * depth;
    let lerp2 = |c: usize| (b[0] * s[0].uv_over_z[c] + b[1] * s[1].uv_over_z[c] + b[2] * s[2].uv_over_z[c]) * depth;
    Fragment {
        depth,
        normal: [lerp3(0), lerp3(1), lerp3(2)],
        uv: [lerp2(0), lerp2(1)],
    }
}
