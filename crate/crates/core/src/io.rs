//! File formats: PNG and binary PPM frames, PGM debug dumps, JSON configs.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, RgbImage};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::imaging::{BinaryImage, Frame, GrayImage};

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_owned(),
        source,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_owned(),
        source,
    })?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })
}

fn frame_from_rgb(img: RgbImage) -> Result<Frame> {
    let (w, h) = img.dimensions();
    let pixels = img.pixels().map(|p| p.0).collect();
    Frame::new(w as usize, h as usize, pixels)
}

fn frame_to_rgb(frame: &Frame) -> RgbImage {
    let raw: Vec<u8> = frame.pixels().iter().flatten().copied().collect();
    RgbImage::from_raw(frame.width() as u32, frame.height() as u32, raw).expect("frame buffer matches its dimensions")
}

/// Decodes PNG or PPM bytes (format sniffed from the header).
pub fn decode_frame(bytes: &[u8]) -> Result<Frame> {
    let img = image::load_from_memory(bytes)?;
    frame_from_rgb(img.to_rgb8())
}

pub fn encode_png(frame: &Frame) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    frame_to_rgb(frame).write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

pub fn encode_gray_png(gray: &GrayImage) -> Result<Vec<u8>> {
    let img = image::GrayImage::from_raw(gray.width() as u32, gray.height() as u32, gray.values().to_vec())
        .expect("gray buffer matches its dimensions");
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

pub fn load_frame(path: &Path) -> Result<Frame> {
    let bytes = fs::read(path).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })?;
    decode_frame(&bytes)
}

/// Writes PNG, or binary PPM when the extension is `.ppm`.
pub fn save_frame(frame: &Frame, path: &Path) -> Result<()> {
    let is_ppm = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("ppm"));
    if is_ppm {
        let mut out = format!("P6\n{} {}\n255\n", frame.width(), frame.height()).into_bytes();
        out.extend(frame.pixels().iter().flatten());
        write_bytes(path, &out)
    } else {
        write_bytes(path, &encode_png(frame)?)
    }
}

/// Binary P5 PGM.
pub fn encode_pgm(width: usize, height: usize, values: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(values);
    out
}

/// Foreground bits as 255, background as 0.
pub fn save_binary_pgm(bin: &BinaryImage, path: &Path) -> Result<()> {
    let values: Vec<u8> = bin.bits().iter().map(|&b| if b { 255 } else { 0 }).collect();
    write_bytes(path, &encode_pgm(bin.width(), bin.height(), &values))
}

pub fn save_gray_pgm(gray: &GrayImage, path: &Path) -> Result<()> {
    write_bytes(path, &encode_pgm(gray.width(), gray.height(), gray.values()))
}
