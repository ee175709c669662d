//! Per-frame processing: detection, pose, scene resolution, stereo render
//! and compositing.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::anaglyph::composite;
use crate::error::{Error, Result};
use crate::imaging::{
    binarize, find_quads, refine_quad, to_grayscale, Frame, QuadParams, RefineParams, ThresholdParams,
};
use crate::marker::{decode_with, DecodeParams, DetectedMarker, MarkerDictionary};
use crate::pose::{eye_offset, pose_from_marker, CameraIntrinsics, Eye, Pose, PoseParams};
use crate::renderer::{render, RenderParams, RenderTarget};
use crate::scene::{resolve, Placement, Scene};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub threshold: ThresholdParams,
    pub quad: QuadParams,
    pub refine: RefineParams,
    pub decode: DecodeParams,
    pub pose: PoseParams,
    pub render: RenderParams,
}

/// Per-stage wall-clock durations in milliseconds, in execution order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub stages: Vec<(String, f64)>,
    /// Wall-clock time of the whole call.
    pub total_ms: f64,
}

impl Timings {
    pub fn stage_sum_ms(&self) -> f64 {
        self.stages.iter().map(|(_, ms)| ms).sum()
    }

    pub fn get(&self, stage: &str) -> Option<f64> {
        self.stages.iter().find(|(s, _)| s == stage).map(|(_, ms)| *ms)
    }

    fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        self.stages.push((stage.to_owned(), t.elapsed().as_secs_f64() * 1e3));
        out
    }
}

#[derive(Clone, Debug)]
pub struct Detection {
    pub markers: Vec<DetectedMarker>,
    /// Poses of the markers that passed pose estimation, by id.
    pub poses: BTreeMap<u32, Pose>,
}

#[derive(Clone, Debug)]
pub struct PipelineResult {
    pub augmented: Frame,
    /// Decoded markers with a usable pose.
    pub detections: Vec<DetectedMarker>,
    pub poses: BTreeMap<u32, Pose>,
    pub timings: Timings,
}

/// Finds and decodes every marker in the frame. Candidates that fail to
/// decode are skipped; when an id is seen more than once the most confident
/// (then largest) candidate wins.
pub fn detect_markers(frame: &Frame, dict: &MarkerDictionary, cfg: &PipelineConfig) -> Result<Vec<DetectedMarker>> {
    detect_timed(frame, dict, cfg, &mut Timings::default())
}

fn detect_timed(
    frame: &Frame,
    dict: &MarkerDictionary,
    cfg: &PipelineConfig,
    timings: &mut Timings,
) -> Result<Vec<DetectedMarker>> {
    let gray = timings.time("grayscale", || to_grayscale(frame));
    let bin = timings.time("binarize", || binarize(&gray, &cfg.threshold))?;
    let quads = timings.time("find_quads", || find_quads(&bin, &cfg.quad));
    Ok(timings.time("decode", || {
        let mut best: BTreeMap<u32, (DetectedMarker, f64)> = BTreeMap::new();
        for quad in quads {
            let refined = refine_quad(&gray, &quad, &cfg.refine);
            let Ok(det) = decode_with(&gray, &refined, dict, &cfg.decode) else {
                continue;
            };
            let area = refined.area;
            match best.get(&det.pattern_id) {
                Some((prev, prev_area))
                    if prev.confidence > det.confidence
                        || (prev.confidence == det.confidence && *prev_area >= area) => {}
                _ => {
                    best.insert(det.pattern_id, (det, area));
                }
            }
        }
        best.into_values().map(|(d, _)| d).collect()
    }))
}

/// Detection plus pose. Markers whose pose cannot be recovered are dropped.
pub fn detect(
    frame: &Frame,
    dict: &MarkerDictionary,
    cam: &CameraIntrinsics,
    cfg: &PipelineConfig,
) -> Result<Detection> {
    check_size(frame, cam)?;
    let found = detect_markers(frame, dict, cfg)?;
    Ok(estimate_poses(found, dict, cam, cfg))
}

fn estimate_poses(
    found: Vec<DetectedMarker>,
    dict: &MarkerDictionary,
    cam: &CameraIntrinsics,
    cfg: &PipelineConfig,
) -> Detection {
    let mut markers = Vec::with_capacity(found.len());
    let mut poses = BTreeMap::new();
    for det in found {
        let Some(pattern) = dict.pattern(det.pattern_id) else {
            continue;
        };
        if let Ok(pose) = pose_from_marker(&det, pattern, cam, &cfg.pose) {
            poses.insert(det.pattern_id, pose);
            markers.push(det);
        }
    }
    Detection { markers, poses }
}

fn check_size(frame: &Frame, cam: &CameraIntrinsics) -> Result<()> {
    if !frame.same_size(cam.width, cam.height) {
        return Err(Error::InvalidInput(format!(
            "frame is {}x{}, camera expects {}x{}",
            frame.width(),
            frame.height(),
            cam.width,
            cam.height
        )));
    }
    Ok(())
}

/// Renders the placements for one eye, or for the center view when `eye`
/// is `None`.
pub fn render_eye(
    placements: &[Placement],
    eye: Option<Eye>,
    separation: f64,
    cam: &CameraIntrinsics,
    params: &RenderParams,
) -> RenderTarget {
    let objects: Vec<_> = placements
        .iter()
        .map(|p| {
            let mut obj = p.render_object();
            if let Some(eye) = eye {
                obj.pose = eye_offset(&obj.pose, eye, separation);
            }
            obj
        })
        .collect();
    render(&objects, cam, params)
}

/// The (left, right) targets `composite` expects for this scene: both eyes
/// when anaglyph output is on, otherwise the center view and an empty target.
pub fn render_views(
    placements: &[Placement],
    scene: &Scene,
    cam: &CameraIntrinsics,
    params: &RenderParams,
) -> (RenderTarget, RenderTarget) {
    let a = &scene.anaglyph;
    if a.enabled {
        (
            render_eye(placements, Some(Eye::Left), a.separation, cam, params),
            render_eye(placements, Some(Eye::Right), a.separation, cam, params),
        )
    } else {
        (
            render_eye(placements, None, 0.0, cam, params),
            RenderTarget::empty(cam.width, cam.height),
        )
    }
}

/// Runs the whole frame pipeline.
pub fn process_frame(
    frame: &Frame,
    scene: &Scene,
    dict: &MarkerDictionary,
    cam: &CameraIntrinsics,
    cfg: &PipelineConfig,
) -> Result<PipelineResult> {
    let start = Instant::now();
    check_size(frame, cam)?;
    let mut timings = Timings::default();
    let found = detect_timed(frame, dict, cfg, &mut timings)?;
    let Detection { markers, poses } = timings.time("pose", || estimate_poses(found, dict, cam, cfg));
    let placements = timings.time("resolve", || resolve(&markers, scene, &poses));
    let (left, right) = timings.time("render", || render_views(&placements, scene, cam, &cfg.render));
    let augmented = timings.time("composite", || composite(frame, &left, &right, &scene.anaglyph))?;
    timings.total_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(PipelineResult {
        augmented,
        detections: markers,
        poses,
        timings,
    })
}
