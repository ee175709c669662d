//! Marker-to-object bindings and their resolution into renderable placements.
//!
//! Local translations are expressed in the marker frame (origin at the
//! pattern center, X along columns, Y along rows, Z into the printed face;
//! objects standing on the marker therefore extend along -Z). Scale applies
//! to geometry before placement, so it never moves an object's anchor.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::anaglyph::AnaglyphConfig;
use crate::error::{Error, Result};
use crate::imaging::Frame;
use crate::marker::{DetectedMarker, MarkerDictionary};
use crate::pose::{CameraIntrinsics, Pose};
use crate::renderer::{builtin_mesh, load_obj, Material, Mesh, RenderObject, DEFAULT_AMBIENT};

#[derive(Clone, Debug)]
pub struct Binding {
    pub marker_id: u32,
    /// Geometry already multiplied by `uniform_scale`.
    pub mesh: Arc<Mesh>,
    pub material: Arc<Material>,
    pub local_translation: Vector3<f64>,
    pub uniform_scale: f64,
}

impl Binding {
    pub fn new(
        marker_id: u32,
        mesh: &Mesh,
        material: Material,
        local_translation: Vector3<f64>,
        uniform_scale: f64,
    ) -> Result<Self> {
        if !(uniform_scale > 0.0 && uniform_scale.is_finite()) {
            return Err(Error::Config(format!(
                "binding for marker {marker_id}: scale must be positive, got {uniform_scale}"
            )));
        }
        if local_translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config(format!(
                "binding for marker {marker_id}: translation must be finite"
            )));
        }
        material.validate()?;
        Ok(Self {
            marker_id,
            mesh: Arc::new(mesh.scaled(uniform_scale)),
            material: Arc::new(material),
            local_translation,
            uniform_scale,
        })
    }
}

#[derive(Clone, Debug)]
pub struct Scene {
    bindings: Vec<Binding>,
    pub anaglyph: AnaglyphConfig,
}

impl Scene {
    pub fn new(bindings: Vec<Binding>, anaglyph: AnaglyphConfig) -> Result<Self> {
        for (i, b) in bindings.iter().enumerate() {
            if bindings[..i].iter().any(|o| o.marker_id == b.marker_id) {
                return Err(Error::Config(format!("marker {} is bound more than once", b.marker_id)));
            }
        }
        anaglyph.validate()?;
        Ok(Self { bindings, anaglyph })
    }

    pub fn bindings(&self) -> &[Binding] {
        &self.bindings
    }

    pub fn binding(&self, marker_id: u32) -> Option<&Binding> {
        self.bindings.iter().find(|b| b.marker_id == marker_id)
    }
}

/// A bound object ready to render.
#[derive(Clone, Debug)]
pub struct Placement {
    pub marker_id: u32,
    pub mesh: Arc<Mesh>,
    pub material: Arc<Material>,
    /// Object-to-camera transform.
    pub pose: Pose,
}

impl Placement {
    pub fn render_object(&self) -> RenderObject<'_> {
        RenderObject {
            mesh: &self.mesh,
            material: &self.material,
            pose: self.pose,
        }
    }
}

/// Marker pose composed with the binding's local offset: rotation unchanged,
/// translation `R·local + t`.
pub fn place(marker_pose: &Pose, local_translation: &Vector3<f64>) -> Pose {
    Pose::new(
        marker_pose.rotation,
        marker_pose.rotation * local_translation + marker_pose.translation,
    )
}

/// One placement per detection that has both a binding and a pose, in
/// detection order.
pub fn resolve(detections: &[DetectedMarker], scene: &Scene, poses: &BTreeMap<u32, Pose>) -> Vec<Placement> {
    detections
        .iter()
        .filter_map(|det| {
            let binding = scene.binding(det.pattern_id)?;
            let marker_pose = poses.get(&det.pattern_id)?;
            Some(Placement {
                marker_id: det.pattern_id,
                mesh: Arc::clone(&binding.mesh),
                material: Arc::clone(&binding.material),
                pose: place(marker_pose, &binding.local_translation),
            })
        })
        .collect()
}

/// Scene file layout. Relative paths resolve against the file's directory;
/// `builtin:<name>` selects a procedural mesh or texture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneFile {
    pub intrinsics: String,
    pub dictionary: String,
    #[serde(default)]
    pub anaglyph: AnaglyphConfig,
    #[serde(default)]
    pub bindings: Vec<BindingEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BindingEntry {
    pub marker_id: u32,
    pub mesh: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub texture: Option<String>,
    #[serde(default = "white")]
    pub diffuse: [f64; 3],
    #[serde(default = "default_ambient")]
    pub ambient: f64,
    #[serde(default)]
    pub translation_m: [f64; 3],
    #[serde(default = "unit_scale")]
    pub scale: f64,
}

fn white() -> [f64; 3] {
    [1.0; 3]
}

fn default_ambient() -> f64 {
    DEFAULT_AMBIENT
}

fn unit_scale() -> f64 {
    1.0
}

const BUILTIN_PREFIX: &str = "builtin:";

fn resolve_path(base: &Path, reference: &str) -> PathBuf {
    let p = Path::new(reference);
    if p.is_absolute() {
        p.to_owned()
    } else {
        base.join(p)
    }
}

pub fn load_mesh(base: &Path, reference: &str) -> Result<Mesh> {
    match reference.strip_prefix(BUILTIN_PREFIX) {
        Some(name) => builtin_mesh(name).ok_or_else(|| Error::Config(format!("unknown builtin mesh {name:?}"))),
        None => load_obj(&resolve_path(base, reference)),
    }
}

pub fn load_texture(base: &Path, reference: &str) -> Result<Frame> {
    match reference.strip_prefix(BUILTIN_PREFIX) {
        Some(name) => builtin_texture(name).ok_or_else(|| Error::Config(format!("unknown builtin texture {name:?}"))),
        None => crate::io::load_frame(&resolve_path(base, reference)),
    }
}

/// `checker` (8x8 black/white) or `wood` (64x64 warm stripes).
pub fn builtin_texture(name: &str) -> Option<Frame> {
    match name {
        "checker" => {
            let pixels = (0..64)
                .map(|i| {
                    if (i % 8 + i / 8) % 2 == 0 {
                        [255, 255, 255]
                    } else {
                        [40, 40, 40]
                    }
                })
                .collect();
            Frame::new(8, 8, pixels).ok()
        }
        "wood" => {
            let pixels = (0..64 * 64)
                .map(|i| {
                    let (x, y) = ((i % 64) as f64, (i / 64) as f64);
                    let ring = ((x * 0.35 + (y * 0.15).sin() * 3.0).sin() * 0.5 + 0.5) * 0.35 + 0.65;
                    [(205.0 * ring) as u8, (140.0 * ring) as u8, (80.0 * ring) as u8]
                })
                .collect();
            Frame::new(64, 64, pixels).ok()
        }
        _ => None,
    }
}

impl Scene {
    pub fn from_file(file: &SceneFile, base: &Path) -> Result<Self> {
        let bindings = file
            .bindings
            .iter()
            .map(|entry| {
                let mesh = load_mesh(base, &entry.mesh)?;
                let texture = entry.texture.as_deref().map(|t| load_texture(base, t)).transpose()?;
                let material = Material {
                    diffuse: entry.diffuse,
                    ambient: entry.ambient,
                    texture,
                };
                Binding::new(
                    entry.marker_id,
                    &mesh,
                    material,
                    Vector3::from(entry.translation_m),
                    entry.scale,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(bindings, file.anaglyph)
    }
}

/// Everything a frame needs: scene, dictionary and camera, loaded together
/// from one scene file.
#[derive(Clone, Debug)]
pub struct SceneBundle {
    pub file: SceneFile,
    pub base_dir: PathBuf,
    pub scene: Scene,
    pub dictionary: MarkerDictionary,
    pub camera: CameraIntrinsics,
}

impl SceneBundle {
    pub fn load(path: &Path) -> Result<Self> {
        let file: SceneFile = crate::io::read_json(path)?;
        let base = path.parent().unwrap_or_else(|| Path::new(".")).to_owned();
        Self::from_file(file, base)
    }

    pub fn from_file(file: SceneFile, base_dir: PathBuf) -> Result<Self> {
        let camera = CameraIntrinsics::load(&resolve_path(&base_dir, &file.intrinsics))?;
        let dictionary = MarkerDictionary::load(&resolve_path(&base_dir, &file.dictionary))?;
        let report = crate::marker::validate_dictionary(&dictionary);
        if !report.is_acceptable() {
            return Err(Error::Config(format!(
                "dictionary {} fails validation: {:?}",
                file.dictionary, report.violations
            )));
        }
        let scene = Scene::from_file(&file, &base_dir)?;
        Ok(Self {
            file,
            base_dir,
            scene,
            dictionary,
            camera,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Point2, Rotation3};

    fn detection(id: u32) -> DetectedMarker {
        DetectedMarker {
            pattern_id: id,
            corners: [Point2::origin(); 4],
            rotation_index: 0,
            confidence: 1.0,
            hamming_distance: 0,
        }
    }

    fn scene(bindings: &[(u32, [f64; 3], f64)]) -> Scene {
        let mesh = builtin_mesh("cube").unwrap();
        let bindings = bindings
            .iter()
            .map(|&(id, t, s)| Binding::new(id, &mesh, Material::default(), Vector3::from(t), s).unwrap())
            .collect();
        Scene::new(bindings, AnaglyphConfig::default()).unwrap()
    }

    #[test]
    fn identity_local_transform() {
        let s = scene(&[(3, [0.0; 3], 1.0)]);
        let pose = Pose::new(
            Rotation3::from_euler_angles(0.2, 0.1, -0.4).into_inner(),
            Vector3::new(0.1, 0.0, 0.6),
        );
        let poses = BTreeMap::from([(3, pose)]);
        let placed = resolve(&[detection(3)], &s, &poses);
        assert_eq!(placed.len(), 1);
        assert_eq!(placed[0].pose, pose);
    }

    #[test]
    fn translation_composes_in_marker_frame() {
        let s = scene(&[(3, [0.04, 0.0, 0.0], 1.0)]);
        let poses = BTreeMap::from([(3, Pose::from_translation(Vector3::new(0.0, 0.0, 0.5)))]);
        let placed = resolve(&[detection(3)], &s, &poses);
        assert_eq!(placed[0].pose.translation, Vector3::new(0.04, 0.0, 0.5));
    }

    #[test]
    fn scale_only_affects_geometry() {
        let poses = BTreeMap::from([(1, Pose::from_translation(Vector3::new(0.0, 0.1, 0.5)))]);
        let a = resolve(&[detection(1)], &scene(&[(1, [0.01, 0.02, 0.0], 1.0)]), &poses);
        let b = resolve(&[detection(1)], &scene(&[(1, [0.01, 0.02, 0.0], 2.5)]), &poses);
        assert_eq!(a[0].pose, b[0].pose);
        assert_eq!(b[0].mesh.vertices[0], a[0].mesh.vertices[0] * 2.5);
    }

    #[test]
    fn unbound_and_unposed_are_skipped() {
        let s = scene(&[(1, [0.0; 3], 1.0), (2, [0.0; 3], 1.0)]);
        let poses = BTreeMap::from([(1, Pose::identity()), (9, Pose::identity())]);
        let placed = resolve(&[detection(9), detection(2), detection(1)], &s, &poses);
        assert_eq!(placed.iter().map(|p| p.marker_id).collect::<Vec<_>>(), vec![1]);
        assert!(resolve(&[], &s, &poses).is_empty());
    }

    #[test]
    fn invalid_bindings() {
        let mesh = builtin_mesh("cube").unwrap();
        assert!(Binding::new(1, &mesh, Material::default(), Vector3::zeros(), 0.0).is_err());
        assert!(Binding::new(1, &mesh, Material::default(), Vector3::zeros(), -1.0).is_err());
        let b = Binding::new(1, &mesh, Material::default(), Vector3::zeros(), 1.0).unwrap();
        assert!(Scene::new(vec![b.clone(), b], AnaglyphConfig::default()).is_err());
    }

    #[test]
    fn scene_file_defaults() {
        let file: SceneFile = serde_json::from_str(
            r#"{ "intrinsics": "cam.json", "dictionary": "dict.json",
                 "bindings": [ { "marker_id": 3, "mesh": "builtin:table" } ] }"#,
        )
        .unwrap();
        assert_eq!(file.bindings[0].scale, 1.0);
        assert_eq!(file.bindings[0].diffuse, [1.0; 3]);
        assert!(file.anaglyph.enabled);
        let scene = Scene::from_file(&file, Path::new(".")).unwrap();
        assert_eq!(scene.bindings().len(), 1);
    }
}
