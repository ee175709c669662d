//! Software-only marker-based augmented reality with red/cyan anaglyph
//! output.
//!
//! A frame flows through [`imaging`] (grayscale, thresholding, quad search),
//! [`marker`] (pattern identification), [`pose`] (homography and camera-from-
//! marker transform), [`scene`] (marker to object bindings), [`renderer`]
//! (per-eye software rasterization) and [`anaglyph`] (channel-masked
//! compositing). [`pipeline::process_frame`] runs the whole chain;
//! [`synth`] renders ground-truth test frames independently of all of it.

pub mod anaglyph;
pub mod error;
pub mod imaging;
pub mod io;
pub mod marker;
pub mod pipeline;
pub mod pose;
pub mod renderer;
pub mod scene;
pub mod synth;

pub use error::{Error, Result};
