//! Per-pixel brute-force rasterizer. It loops pixels outermost and tests
//! every triangle at every pixel; it shares only the numeric recipe with
//! the real renderer.

use nalgebra::{Rotation3, Unit, Vector2, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use redcyan_core::imaging::Frame;
use redcyan_core::pose::{CameraIntrinsics, Pose};
use redcyan_core::renderer::{Material, Mesh, RenderObject, RenderTarget};

struct Vert {
    x: f64,
    y: f64,
    inv_z: f64,
    n: [f64; 3],
    uv: [f64; 2],
}

fn cross_edge(a: &Vert, b: &Vert, px: f64, py: f64) -> f64 {
    (b.x - a.x) * (py - a.y) - (b.y - a.y) * (px - a.x)
}

fn top_left(a: &Vert, b: &Vert) -> bool {
    (a.y == b.y && b.x > a.x) || b.y < a.y
}

fn inside(e: f64, tl: bool) -> bool {
    e > 0.0 || (e == 0.0 && tl)
}

fn to_cam(pose: &Pose, v: &Vector3<f64>) -> [f64; 3] {
    let r = &pose.rotation;
    let t = &pose.translation;
    [
        r[(0, 0)] * v.x + r[(0, 1)] * v.y + r[(0, 2)] * v.z + t.x,
        r[(1, 0)] * v.x + r[(1, 1)] * v.y + r[(1, 2)] * v.z + t.y,
        r[(2, 0)] * v.x + r[(2, 1)] * v.y + r[(2, 2)] * v.z + t.z,
    ]
}

fn rot(pose: &Pose, v: &Vector3<f64>) -> [f64; 3] {
    let r = &pose.rotation;
    [
        r[(0, 0)] * v.x + r[(0, 1)] * v.y + r[(0, 2)] * v.z,
        r[(1, 0)] * v.x + r[(1, 1)] * v.y + r[(1, 2)] * v.z,
        r[(2, 0)] * v.x + r[(2, 1)] * v.y + r[(2, 2)] * v.z,
    ]
}

fn sample_texture(tex: &Frame, u: f64, v: f64) -> [f64; 3] {
    let (w, h) = (tex.width(), tex.height());
    let x = u * w as f64 - 0.5;
    let y = (1.0 - v) * h as f64 - 0.5;
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let ix = |i: f64| (i.max(0.0) as usize).min(w - 1);
    let iy = |i: f64| (i.max(0.0) as usize).min(h - 1);
    let mut out = [0.0; 3];
    for c in 0..3 {
        let p00 = tex.pixel(ix(x0), iy(y0))[c] as f64;
        let p10 = tex.pixel(ix(x0 + 1.0), iy(y0))[c] as f64;
        let p01 = tex.pixel(ix(x0), iy(y0 + 1.0))[c] as f64;
        let p11 = tex.pixel(ix(x0 + 1.0), iy(y0 + 1.0))[c] as f64;
        let top = p00 + (p10 - p00) * fx;
        let bottom = p01 + (p11 - p01) * fx;
        out[c] = (top + (bottom - top) * fy) / 255.0;
    }
    out
}

fn to_u8(c: f64) -> u8 {
    (c * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Reference renderer; every vertex must lie in front of the near plane.
pub fn reference(objects: &[RenderObject<'_>], cam: &CameraIntrinsics, light: [f64; 3]) -> RenderTarget {
    let (w, h) = (cam.width, cam.height);
    let ll = (light[0] * light[0] + light[1] * light[1] + light[2] * light[2]).sqrt();
    let l = [light[0] / ll, light[1] / ll, light[2] / ll];

    // project everything once
    let mut tris: Vec<([Vert; 3], f64, &Material)> = Vec::new();
    for obj in objects {
        for t in &obj.mesh.triangles {
            let p = t.map(|i| to_cam(&obj.pose, &obj.mesh.vertices[i as usize]));
            let e1 = [p[1][0] - p[0][0], p[1][1] - p[0][1], p[1][2] - p[0][2]];
            let e2 = [p[2][0] - p[0][0], p[2][1] - p[0][1], p[2][2] - p[0][2]];
            let n = Vector3::new(e1[0], e1[1], e1[2]).cross(&Vector3::new(e2[0], e2[1], e2[2]));
            if n.dot(&Vector3::new(p[0][0], p[0][1], p[0][2])) >= 0.0 {
                continue;
            }
            let mut v: [Vert; 3] = std::array::from_fn(|k| {
                let i = t[k] as usize;
                let c = p[k];
                let inv_z = 1.0 / c[2];
                let n = rot(&obj.pose, &obj.mesh.normals[i]);
                let uv = obj.mesh.uvs.as_ref().map_or([0.0, 0.0], |u| [u[i].x, u[i].y]);
                Vert {
                    x: cam.fx * c[0] / c[2] + cam.cx,
                    y: cam.fy * c[1] / c[2] + cam.cy,
                    inv_z,
                    n: [n[0] * inv_z, n[1] * inv_z, n[2] * inv_z],
                    uv: [uv[0] * inv_z, uv[1] * inv_z],
                }
            });
            let mut area = cross_edge(&v[0], &v[1], v[2].x, v[2].y);
            if area < 0.0 {
                v.swap(1, 2);
                area = -area;
            }
            if area > 0.0 && area.is_finite() {
                tris.push((v, area, obj.material));
            }
        }
    }

    let mut out = RenderTarget::empty(w, h);
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64, y as f64);
            for (v, area, material) in &tris {
                let e0 = cross_edge(&v[1], &v[2], px, py);
                let e1 = cross_edge(&v[2], &v[0], px, py);
                let e2 = cross_edge(&v[0], &v[1], px, py);
                if !(inside(e0, top_left(&v[1], &v[2]))
                    && inside(e1, top_left(&v[2], &v[0]))
                    && inside(e2, top_left(&v[0], &v[1])))
                {
                    continue;
                }
                let b = [e0 / area, e1 / area, e2 / area];
                let depth = 1.0 / (b[0] * v[0].inv_z + b[1] * v[1].inv_z + b[2] * v[2].inv_z);
                let i = y * w + x;
                if !(depth < out.depth[i]) {
                    continue;
                }
                let n: [f64; 3] =
                    std::array::from_fn(|c| (b[0] * v[0].n[c] + b[1] * v[1].n[c] + b[2] * v[2].n[c]) * depth);
                let uv: [f64; 2] =
                    std::array::from_fn(|c| (b[0] * v[0].uv[c] + b[1] * v[1].uv[c] + b[2] * v[2].uv[c]) * depth);
                let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
                let lambert = if len > 0.0 {
                    (-(n[0] * l[0] + n[1] * l[1] + n[2] * l[2]) / len).max(0.0)
                } else {
                    0.0
                };
                let k = material.ambient + (1.0 - material.ambient) * lambert;
                let tex = match &material.texture {
                    Some(t) => sample_texture(t, uv[0], uv[1]),
                    None => [1.0; 3],
                };
                out.depth[i] = depth;
                out.coverage[i] = true;
                out.color[i] = std::array::from_fn(|c| to_u8(material.diffuse[c] * tex[c] * k));
            }
        }
    }
    out
}

pub fn small_cam(w: usize, h: usize) -> CameraIntrinsics {
    CameraIntrinsics::new(w as f64, w as f64, w as f64 / 2.0, h as f64 / 2.0, w, h).unwrap()
}

pub fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        if let Some(u) = v.try_normalize(1e-3) {
            return u;
        }
    }
}

/// A few triangles, some sharing edges, with random normals and uvs.
pub fn random_mesh(rng: &mut ChaCha8Rng) -> Mesh {
    let n = rng.random_range(3..9);
    let vertices: Vec<_> = (0..n)
        .map(|_| {
            Vector3::new(
                rng.random_range(-0.4..0.4),
                rng.random_range(-0.4..0.4),
                rng.random_range(-0.2..0.2),
            )
        })
        .collect();
    let normals = (0..n).map(|_| random_unit(rng)).collect();
    let uvs = (0..n)
        .map(|_| Vector2::new(rng.random_range(-0.2..1.2), rng.random_range(-0.2..1.2)))
        .collect();
    let triangles = (0..rng.random_range(1..8))
        .map(|_| {
            let a = rng.random_range(0..n as u32);
            let b = (a + rng.random_range(1..n as u32)) % n as u32;
            let mut c = rng.random_range(0..n as u32);
            while c == a || c == b {
                c = rng.random_range(0..n as u32);
            }
            [a, b, c]
        })
        .collect();
    Mesh::new(vertices, normals, Some(uvs), triangles).unwrap()
}

pub fn random_material(rng: &mut ChaCha8Rng) -> Material {
    let texture = rng.random_bool(0.5).then(|| {
        let (w, h) = (rng.random_range(1..5), rng.random_range(1..5));
        let px = (0..w * h).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        Frame::new(w, h, px).unwrap()
    });
    Material {
        diffuse: [rng.random(), rng.random(), rng.random()],
        ambient: rng.random(),
        texture,
    }
}

pub fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
    let axis = Unit::new_normalize(random_unit(rng));
    let r = Rotation3::from_axis_angle(&axis, rng.random_range(0.0..std::f64::consts::PI)).into_inner();
    Pose::new(
        r,
        Vector3::new(
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.3..0.3),
            rng.random_range(1.2..2.5),
        ),
    )
}
