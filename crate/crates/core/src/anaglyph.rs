//! Red/cyan channel-masked compositing of per-eye renders over the camera
//! frame. Each eye writes only its masked channels and only where its render
//! covered the pixel; every other channel keeps the camera image.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::Frame;
use crate::renderer::RenderTarget;

pub const DEFAULT_SEPARATION: f64 = 0.06;

pub type ChannelMask = [bool; 3];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnaglyphConfig {
    pub enabled: bool,
    /// Interocular distance, meters.
    #[serde(rename = "separation_m")]
    pub separation: f64,
    pub left_mask: ChannelMask,
    pub right_mask: ChannelMask,
}

impl Default for AnaglyphConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            separation: DEFAULT_SEPARATION,
            left_mask: [true, false, false],
            right_mask: [false, true, true],
        }
    }
}

impl AnaglyphConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return Err(Error::Config(format!(
                "eye separation must be finite and >= 0, got {}",
                self.separation
            )));
        }
        if self.left_mask.iter().zip(&self.right_mask).any(|(l, r)| *l && *r) {
            return Err(Error::Config(format!(
                "left mask {:?} and right mask {:?} share a channel",
                self.left_mask, self.right_mask
            )));
        }
        Ok(())
    }
}

/// Composites the eye renders over `frame`. When anaglyph output is disabled,
/// `left` is taken as the single center-eye render and written to all
/// channels wherever it covers; `right` is then ignored.
pub fn composite(frame: &Frame, left: &RenderTarget, right: &RenderTarget, cfg: &AnaglyphConfig) -> Result<Frame> {
    let (w, h) = (frame.width(), frame.height());
    for (name, t) in [("left", left), ("right", right)] {
        if t.width != w || t.height != h {
            return Err(Error::InvalidInput(format!(
                "{name} target is {}x{}, frame is {w}x{h}",
                t.width, t.height
            )));
        }
    }
    cfg.validate().map_err(|e| Error::InvalidInput(e.to_string()))?;

    let mut out = frame.clone();
    if cfg.enabled {
        for (i, px) in out.pixels_mut().iter_mut().enumerate() {
            for c in 0..3 {
                if cfg.left_mask[c] && left.coverage[i] {
                    px[c] = left.color[i][c];
                } else if cfg.right_mask[c] && right.coverage[i] {
                    px[c] = right.color[i][c];
                }
            }
        }
    } else {
        for (i, px) in out.pixels_mut().iter_mut().enumerate() {
            if left.coverage[i] {
                *px = left.color[i];
            }
        }
    }
    Ok(out)
}
