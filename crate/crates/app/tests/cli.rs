use std::path::{Path, PathBuf};
use std::process::Command;

use redcyan::commands::{compose_cmd, detect_cmd, pose_cmd, synth_cmd, ComposeOverrides, Sources};
use redcyan_core::io::read_json;
use redcyan_core::synth::GroundTruthFile;

fn assets() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../assets")
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_redcyan"))
}

fn synth_frame(dir: &Path) -> (PathBuf, GroundTruthFile) {
    let out = dir.join("frame.png");
    let truth = synth_cmd(&assets().join("synth.json"), &out, None).unwrap();
    assert_eq!(truth, dir.join("frame.json"));
    (out, read_json(&truth).unwrap())
}

#[test]
fn synth_then_pose_recovers_truth() {
    let dir = tempfile::tempdir().unwrap();
    let (frame, truth) = synth_frame(dir.path());
    let sources = Sources {
        scene: Some(assets().join("scene.json")),
        ..Sources::default()
    };
    let out = pose_cmd(&frame, &sources).unwrap();
    assert_eq!(out.poses.len(), truth.markers.len());
    for gt in &truth.markers {
        let pose = &out.poses[&gt.id.to_string()];
        let dist: f64 = gt
            .translation
            .iter()
            .zip(pose.translation)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = gt.translation.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(
            dist / norm < 0.02,
            "marker {}: {:?} vs {:?}",
            gt.id,
            pose.translation,
            gt.translation
        );
    }
}

#[test]
fn detect_needs_no_camera() {
    let dir = tempfile::tempdir().unwrap();
    let (frame, truth) = synth_frame(dir.path());
    let out = detect_cmd(&frame, &Sources::default()).unwrap();
    let mut ids: Vec<_> = out.detections.iter().map(|d| d.id).collect();
    ids.sort();
    let mut expected: Vec<_> = truth.markers.iter().map(|m| m.id).collect();
    expected.sort();
    assert_eq!(ids, expected);
}

#[test]
fn pose_without_camera_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let (frame, _) = synth_frame(dir.path());
    let err = pose_cmd(&frame, &Sources::default()).unwrap_err();
    assert!(err.to_string().contains("intrinsics"), "{err}");
}

#[test]
fn compose_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (frame, _) = synth_frame(dir.path());
    let scene = assets().join("scene.json");
    let a = dir.path().join("a.png");
    let b = dir.path().join("b.png");
    compose_cmd(&frame, &scene, &a, ComposeOverrides::default()).unwrap();
    compose_cmd(&frame, &scene, &b, ComposeOverrides::default()).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let zero = dir.path().join("zero.png");
    let flat = dir.path().join("flat.png");
    compose_cmd(
        &frame,
        &scene,
        &zero,
        ComposeOverrides {
            separation: Some(0.0),
            ..Default::default()
        },
    )
    .unwrap();
    compose_cmd(
        &frame,
        &scene,
        &flat,
        ComposeOverrides {
            disable_anaglyph: true,
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(std::fs::read(&zero).unwrap(), std::fs::read(&flat).unwrap());
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&flat).unwrap());

    let bad = compose_cmd(
        &frame,
        &scene,
        &flat,
        ComposeOverrides {
            separation: Some(-0.1),
            ..Default::default()
        },
    );
    assert!(bad.is_err());
}

#[test]
fn binary_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let frame = dir.path().join("f.png");
    let status = bin()
        .args(["synth", "--spec"])
        .arg(assets().join("synth.json"))
        .arg("-o")
        .arg(&frame)
        .status()
        .unwrap();
    assert!(status.success());

    let out = bin()
        .arg("pose")
        .arg(&frame)
        .arg("--scene")
        .arg(assets().join("scene.json"))
        .arg("--modelview")
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines.len(), 3, "{text}");
    for line in lines {
        let (_, values) = line.split_once(": ").unwrap();
        assert_eq!(values.split_whitespace().count(), 16);
    }

    let composed = dir.path().join("c.png");
    let out = bin()
        .arg("compose")
        .arg(&frame)
        .arg("--scene")
        .arg(assets().join("scene.json"))
        .arg("-o")
        .arg(&composed)
        .output()
        .unwrap();
    assert!(out.status.success());
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["poses"].as_object().unwrap().len(), 3);
    assert!(composed.exists());
}

#[test]
fn validate_dict_exit_codes() {
    let ok = bin()
        .arg("validate-dict")
        .arg(assets().join("dict.json"))
        .output()
        .unwrap();
    assert!(ok.status.success());

    // These two patterns are two cells apart, too close to tell apart.
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(
        &path,
        r#"{"grid_size": 6, "min_hamming": 4, "patterns": [
            {"id": 1, "physical_width_m": 0.08, "rows": ["111111","100001","101101","100101","100011","111111"]},
            {"id": 2, "physical_width_m": 0.08, "rows": ["111111","110001","101101","101001","100001","111111"]}
        ]}"#,
    )
    .unwrap();
    let bad = bin().arg("validate-dict").arg(&path).output().unwrap();
    assert_eq!(bad.status.code(), Some(1));
    let report: serde_json::Value = serde_json::from_slice(&bad.stdout).unwrap();
    assert!(!report["violations"].as_array().unwrap().is_empty());

    let missing = bin()
        .arg("validate-dict")
        .arg(dir.path().join("nope.json"))
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn marker_command_writes_png() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m.png");
    let status = bin()
        .args(["marker", "2", "--cell-px", "10", "-o"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let img = redcyan_core::io::load_frame(&out).unwrap();
    assert_eq!(img.width(), 100);
    assert!(!bin().args(["marker", "42", "-o"]).arg(&out).status().unwrap().success());
}
