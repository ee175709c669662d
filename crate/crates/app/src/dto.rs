//! JSON shapes shared by the CLI and the HTTP service.

use std::collections::BTreeMap;

use redcyan_core::marker::DetectedMarker;
use redcyan_core::pipeline::Timings;
use redcyan_core::pose::{ModelView16, Pose};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionDto {
    pub id: u32,
    /// Pattern top-left, top-right, bottom-right, bottom-left, pixels.
    pub corners: [[f64; 2]; 4],
    pub rotation_index: u8,
    pub confidence: f64,
    pub hamming_distance: usize,
}

impl From<&DetectedMarker> for DetectionDto {
    fn from(d: &DetectedMarker) -> Self {
        Self {
            id: d.pattern_id,
            corners: d.corners.map(|c| [c.x, c.y]),
            rotation_index: d.rotation_index,
            confidence: d.confidence,
            hamming_distance: d.hamming_distance,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseDto {
    /// Row-major.
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    /// Column-major 4x4.
    pub modelview: [f64; 16],
}

impl From<&Pose> for PoseDto {
    fn from(p: &Pose) -> Self {
        Self {
            rotation: std::array::from_fn(|i| p.rotation[(i / 3, i % 3)]),
            translation: p.translation.into(),
            modelview: ModelView16::from_pose(p).0,
        }
    }
}

pub fn detections(markers: &[DetectedMarker]) -> Vec<DetectionDto> {
    markers.iter().map(DetectionDto::from).collect()
}

/// Keys are marker ids as strings, the only key type JSON objects allow.
pub fn poses(poses: &BTreeMap<u32, Pose>) -> BTreeMap<String, PoseDto> {
    poses.iter().map(|(id, p)| (id.to_string(), p.into())).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingsDto {
    pub stages: Vec<StageTiming>,
    pub total_ms: f64,
}

impl From<&Timings> for TimingsDto {
    fn from(t: &Timings) -> Self {
        Self {
            stages: t
                .stages
                .iter()
                .map(|(stage, ms)| StageTiming {
                    stage: stage.clone(),
                    ms: *ms,
                })
                .collect(),
            total_ms: t.total_ms,
        }
    }
}
