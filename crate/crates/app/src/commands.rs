//! CLI command bodies, kept out of `main` so tests can call them.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use redcyan_core::io::{load_frame, save_frame, write_json};
use redcyan_core::marker::{validate_dictionary, MarkerDictionary, ValidationReport};
use redcyan_core::pipeline::{detect, process_frame, PipelineConfig};
use redcyan_core::pose::{CameraIntrinsics, ModelView16};
use redcyan_core::scene::SceneBundle;
use redcyan_core::synth::{render_synthetic, GroundTruthFile, SynthSpecFile};
use serde::Serialize;

use crate::dto::{self, DetectionDto, PoseDto};

/// Where the dictionary and camera come from: explicit files win over the
/// ones a scene file names; without either the sample dictionary is used.
#[derive(Clone, Debug, Default)]
pub struct Sources {
    pub scene: Option<PathBuf>,
    pub dictionary: Option<PathBuf>,
    pub intrinsics: Option<PathBuf>,
}

impl Sources {
    fn bundle(&self) -> Result<Option<SceneBundle>> {
        self.scene
            .as_deref()
            .map(|p| SceneBundle::load(p).with_context(|| format!("loading scene {}", p.display())))
            .transpose()
    }

    pub fn dictionary(&self) -> Result<MarkerDictionary> {
        if let Some(p) = &self.dictionary {
            return MarkerDictionary::load(p).with_context(|| format!("loading dictionary {}", p.display()));
        }
        Ok(match self.bundle()? {
            Some(b) => b.dictionary,
            None => MarkerDictionary::sample(),
        })
    }

    pub fn camera(&self) -> Result<CameraIntrinsics> {
        if let Some(p) = &self.intrinsics {
            return CameraIntrinsics::load(p).with_context(|| format!("loading intrinsics {}", p.display()));
        }
        match self.bundle()? {
            Some(b) => Ok(b.camera),
            None => bail!("camera intrinsics are required: pass --intrinsics or --scene"),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct DetectOutput {
    pub frame: String,
    pub detections: Vec<DetectionDto>,
}

/// Decoded markers without pose. Markers whose pose would fail are still
/// listed.
pub fn detect_cmd(frame: &Path, sources: &Sources) -> Result<DetectOutput> {
    let dict = sources.dictionary()?;
    let image = load_frame(frame)?;
    let found = redcyan_core::pipeline::detect_markers(&image, &dict, &PipelineConfig::default())?;
    Ok(DetectOutput {
        frame: frame.display().to_string(),
        detections: dto::detections(&found),
    })
}

#[derive(Debug, Serialize)]
pub struct PoseOutput {
    pub frame: String,
    pub detections: Vec<DetectionDto>,
    pub poses: BTreeMap<String, PoseDto>,
}

pub fn pose_cmd(frame: &Path, sources: &Sources) -> Result<PoseOutput> {
    let dict = sources.dictionary()?;
    let cam = sources.camera()?;
    let image = load_frame(frame)?;
    let found = detect(&image, &dict, &cam, &PipelineConfig::default())?;
    Ok(PoseOutput {
        frame: frame.display().to_string(),
        detections: dto::detections(&found.markers),
        poses: dto::poses(&found.poses),
    })
}

/// One `id: m0 m1 ... m15` line per pose, column-major.
pub fn modelview_dump(out: &PoseOutput) -> String {
    out.poses
        .iter()
        .map(|(id, p)| format!("{id}: {}\n", ModelView16(p.modelview)))
        .collect()
}

#[derive(Debug, Default, Clone, Copy)]
pub struct ComposeOverrides {
    pub disable_anaglyph: bool,
    pub separation: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct ComposeOutput {
    pub output: String,
    pub detections: Vec<DetectionDto>,
    pub poses: BTreeMap<String, PoseDto>,
    pub timings: dto::TimingsDto,
}

pub fn compose_cmd(frame: &Path, scene: &Path, output: &Path, overrides: ComposeOverrides) -> Result<ComposeOutput> {
    let mut bundle = SceneBundle::load(scene).with_context(|| format!("loading scene {}", scene.display()))?;
    if overrides.disable_anaglyph {
        bundle.scene.anaglyph.enabled = false;
    }
    if let Some(s) = overrides.separation {
        bundle.scene.anaglyph.separation = s;
        bundle.scene.anaglyph.validate()?;
    }
    let image = load_frame(frame)?;
    let out = process_frame(
        &image,
        &bundle.scene,
        &bundle.dictionary,
        &bundle.camera,
        &PipelineConfig::default(),
    )?;
    save_frame(&out.augmented, output)?;
    Ok(ComposeOutput {
        output: output.display().to_string(),
        detections: dto::detections(&out.detections),
        poses: dto::poses(&out.poses),
        timings: (&out.timings).into(),
    })
}

/// Ground truth goes next to the image with a `.json` extension unless a
/// path is given.
pub fn synth_cmd(spec: &Path, output: &Path, truth: Option<&Path>) -> Result<PathBuf> {
    let (file, base) = SynthSpecFile::load(spec)?;
    let (frame, gt) = render_synthetic(&file.to_spec(&base)?)?;
    save_frame(&frame, output)?;
    let truth_path = truth.map_or_else(|| output.with_extension("json"), Path::to_owned);
    write_json(&truth_path, &GroundTruthFile::from(gt.as_slice()))?;
    Ok(truth_path)
}

pub fn validate_dict_cmd(path: &Path) -> Result<ValidationReport> {
    let dict = MarkerDictionary::load(path)?;
    Ok(validate_dictionary(&dict))
}

pub fn marker_cmd(id: u32, sources: &Sources, cell_px: usize, output: &Path) -> Result<()> {
    let dict = sources.dictionary()?;
    let Some(pattern) = dict.pattern(id) else {
        bail!("marker {id} is not in the dictionary");
    };
    let img = redcyan_core::marker::marker_image(pattern, cell_px, 2);
    save_frame(&redcyan_core::imaging::Frame::from_gray(&img), output)?;
    Ok(())
}
