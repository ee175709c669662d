//! OBJ subset loader and procedural furniture meshes.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use nalgebra::{Vector2, Vector3};

use super::Mesh;
use crate::error::{Error, Result};

/// Names accepted by [`builtin_mesh`], usable in scene files as
/// `"builtin:<name>"`.
pub const BUILTIN_MESHES: [&str; 4] = ["cube", "table", "seat", "double-seat"];

pub fn load_obj(path: &Path) -> Result<Mesh> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })?;
    parse_obj(&text, path)
}

/// Parses `v`, `vt`, `vn` and triangular `f` records. Face corners may be
/// `v`, `v/vt`, `v//vn` or `v/vt/vn`; negative indices count from the end.
/// Corners without a normal get the face's geometric normal. Other records
/// are ignored.
pub fn parse_obj(text: &str, path: &Path) -> Result<Mesh> {
    let err = |line: usize, message: String| Error::Obj {
        path: path.to_owned(),
        line,
        message,
    };

    let mut positions: Vec<Vector3<f64>> = Vec::new();
    let mut tex_coords: Vec<Vector2<f64>> = Vec::new();
    let mut normals: Vec<Vector3<f64>> = Vec::new();
    let mut faces: Vec<(usize, [Corner; 3])> = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut parts = line.split_whitespace();
        let Some(tag) = parts.next() else { continue };
        let nums = |parts: std::str::SplitWhitespace<'_>, n: usize| -> Result<Vec<f64>> {
            let v: Vec<f64> = parts
                .take(n)
                .map(|t| t.parse::<f64>().map_err(|e| err(line_no, format!("{t:?}: {e}"))))
                .collect::<Result<_>>()?;
            if v.len() < n {
                return Err(err(line_no, format!("{tag} needs {n} numbers")));
            }
            Ok(v)
        };
        match tag {
            "v" => {
                let v = nums(parts, 3)?;
                positions.push(Vector3::new(v[0], v[1], v[2]));
            }
            "vt" => {
                let v = nums(parts, 2)?;
                tex_coords.push(Vector2::new(v[0], v[1]));
            }
            "vn" => {
                let v = nums(parts, 3)?;
                let n = Vector3::new(v[0], v[1], v[2]);
                let len = n.norm();
                if !(len > 0.0) {
                    return Err(err(line_no, "zero-length normal".into()));
                }
                normals.push(n / len);
            }
            "f" => {
                let corners: Vec<&str> = parts.collect();
                if corners.len() != 3 {
                    return Err(err(
                        line_no,
                        format!("only triangles are supported, got {} corners", corners.len()),
                    ));
                }
                let mut parsed = [Corner::default(); 3];
                for (slot, c) in parsed.iter_mut().zip(&corners) {
                    *slot = Corner::parse(c, positions.len(), tex_coords.len(), normals.len())
                        .map_err(|m| err(line_no, m))?;
                }
                faces.push((line_no, parsed));
            }
            _ => {}
        }
    }

    let with_uvs = !faces.is_empty() && faces.iter().all(|(_, f)| f.iter().all(|c| c.vt.is_some()));
    let mut vertices = Vec::new();
    let mut out_normals = Vec::new();
    let mut uvs = Vec::new();
    let mut triangles = Vec::with_capacity(faces.len());
    let mut shared: HashMap<Corner, u32> = HashMap::new();

    for (line_no, face) in &faces {
        let p = face.map(|c| positions[c.v]);
        let geometric = (p[1] - p[0]).cross(&(p[2] - p[0]));
        let face_normal = geometric.try_normalize(0.0);
        let mut tri = [0u32; 3];
        for (k, corner) in face.iter().enumerate() {
            let normal = match corner.vn {
                Some(i) => normals[i],
                None => face_normal.ok_or_else(|| err(*line_no, "degenerate face without normals".into()))?,
            };
            // corners without explicit normals are never shared
            let index = match (corner.vn, shared.get(corner)) {
                (Some(_), Some(&i)) => i,
                _ => {
                    let i = vertices.len() as u32;
                    vertices.push(positions[corner.v]);
                    out_normals.push(normal);
                    if with_uvs {
                        uvs.push(tex_coords[corner.vt.expect("checked above")]);
                    }
                    if corner.vn.is_some() {
                        shared.insert(*corner, i);
                    }
                    i
                }
            };
            tri[k] = index;
        }
        triangles.push(tri);
    }

    Mesh::new(vertices, out_normals, with_uvs.then_some(uvs), triangles)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
struct Corner {
    v: usize,
    vt: Option<usize>,
    vn: Option<usize>,
}

impl Corner {
    fn parse(text: &str, nv: usize, nvt: usize, nvn: usize) -> std::result::Result<Self, String> {
        let mut fields = text.split('/');
        let resolve = |field: Option<&str>, count: usize, what: &str| -> std::result::Result<Option<usize>, String> {
            match field {
                None | Some("") => Ok(None),
                Some(s) => {
                    let i: i64 = s.parse().map_err(|_| format!("bad {what} index {s:?}"))?;
                    let idx = if i > 0 {
                        i - 1
                    } else if i < 0 {
                        count as i64 + i
                    } else {
                        return Err(format!("{what} index 0 is invalid"));
                    };
                    if idx < 0 || idx as usize >= count {
                        return Err(format!("{what} index {i} out of range (have {count})"));
                    }
                    Ok(Some(idx as usize))
                }
            }
        };
        let v = resolve(fields.next(), nv, "vertex")?.ok_or_else(|| "missing vertex index".to_string())?;
        let vt = resolve(fields.next(), nvt, "texture")?;
        let vn = resolve(fields.next(), nvn, "normal")?;
        Ok(Self { v, vt, vn })
    }
}

/// Accumulates axis-aligned boxes into one mesh.
#[derive(Default)]
struct BoxBuilder {
    vertices: Vec<Vector3<f64>>,
    normals: Vec<Vector3<f64>>,
    uvs: Vec<Vector2<f64>>,
    triangles: Vec<[u32; 3]>,
}

impl BoxBuilder {
    fn add_box(&mut self, min: Vector3<f64>, max: Vector3<f64>) {
        let center = (min + max) / 2.0;
        let half = (max - min) / 2.0;
        let axes = [Vector3::x(), Vector3::y(), Vector3::z()];
        for axis in 0..3 {
            for sign in [1.0, -1.0] {
                let n = axes[axis] * sign;
                // u × v = n
                let u_axis = (axis + 1) % 3;
                let v_axis = (axis + 2) % 3;
                let u = axes[u_axis] * half[u_axis] * sign;
                let v = axes[v_axis] * half[v_axis];
                let c = center + n * half[axis];
                let base = self.vertices.len() as u32;
                let corners = [c - u - v, c + u - v, c + u + v, c - u + v];
                let tex = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];
                for (p, (tu, tv)) in corners.iter().zip(tex) {
                    self.vertices.push(*p);
                    self.normals.push(n);
                    self.uvs.push(Vector2::new(tu, tv));
                }
                self.triangles.push([base, base + 1, base + 2]);
                self.triangles.push([base, base + 2, base + 3]);
            }
        }
    }

    fn build(self) -> Mesh {
        Mesh::new(self.vertices, self.normals, Some(self.uvs), self.triangles).expect("boxes are well formed")
    }
}

/// Procedural meshes sized for an 8 cm marker. Marker frame: origin at the
/// pattern center, Z into the printed face, so furniture rises along -Z.
pub fn builtin_mesh(name: &str) -> Option<Mesh> {
    let v = Vector3::new;
    let mut b = BoxBuilder::default();
    match name {
        "cube" => b.add_box(v(-0.03, -0.03, -0.06), v(0.03, 0.03, 0.0)),
        "table" => {
            b.add_box(v(-0.035, -0.035, -0.045), v(0.035, 0.035, -0.038));
            for (x, y) in [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)] {
                let (cx, cy) = (x * 0.029, y * 0.029);
                b.add_box(v(cx - 0.004, cy - 0.004, -0.038), v(cx + 0.004, cy + 0.004, 0.0));
            }
        }
        "seat" => {
            b.add_box(v(-0.025, -0.025, -0.022), v(0.025, 0.025, 0.0));
            b.add_box(v(-0.025, -0.025, -0.05), v(0.025, -0.017, -0.022));
        }
        "double-seat" => {
            b.add_box(v(-0.038, -0.022, -0.02), v(0.038, 0.022, 0.0));
            b.add_box(v(-0.038, -0.022, -0.045), v(0.038, -0.014, -0.02));
            b.add_box(v(-0.038, -0.014, -0.03), v(-0.032, 0.022, -0.02));
            b.add_box(v(0.032, -0.014, -0.03), v(0.038, 0.022, -0.02));
        }
        _ => return None,
    }
    Some(b.build())
}
