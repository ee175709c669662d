//! Bordered binary-grid fiducials: pattern model, dictionary validation and
//! decoding of quad candidates.
//!
//! A pattern is an N x N grid of cells whose outermost ring is always dark.
//! The inner (N-2) x (N-2) cells carry the payload. Orientation is recovered
//! only from the payload's rotational asymmetry.

use std::path::Path;

use nalgebra::{Point2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{is_strictly_convex, signed_area, GrayImage, QuadCandidate};
use crate::pose::{estimate_homography, Homography};

#[derive(Clone, Debug, PartialEq)]
pub struct MarkerPattern {
    pub id: u32,
    size: usize,
    /// Row-major, top row first, `true` = dark.
    grid: Vec<bool>,
    /// Printed side length of the outer square, meters.
    pub physical_width: f64,
    /// Position of the pattern center in the marker frame, meters.
    pub center_offset: Vector2<f64>,
}

impl MarkerPattern {
    pub fn new(
        id: u32,
        size: usize,
        grid: Vec<bool>,
        physical_width: f64,
        center_offset: Vector2<f64>,
    ) -> Result<Self> {
        if size < 4 {
            return Err(Error::Config(format!("pattern {id}: grid size {size} < 4")));
        }
        if grid.len() != size * size {
            return Err(Error::Config(format!(
                "pattern {id}: expected {} cells, got {}",
                size * size,
                grid.len()
            )));
        }
        if !(physical_width > 0.0 && physical_width.is_finite()) {
            return Err(Error::Config(format!("pattern {id}: physical width must be positive")));
        }
        let pattern = Self {
            id,
            size,
            grid,
            physical_width,
            center_offset,
        };
        let border_dark = (0..size).all(|i| {
            pattern.cell(0, i) && pattern.cell(size - 1, i) && pattern.cell(i, 0) && pattern.cell(i, size - 1)
        });
        if !border_dark {
            return Err(Error::Config(format!("pattern {id}: outer ring of cells must be dark")));
        }
        Ok(pattern)
    }

    /// Builds a pattern from '0'/'1' row strings, top row first.
    pub fn from_rows(id: u32, rows: &[&str], physical_width: f64, center_offset: Vector2<f64>) -> Result<Self> {
        let size = rows.len();
        let mut grid = Vec::with_capacity(size * size);
        for row in rows {
            if row.chars().count() != size {
                return Err(Error::Config(format!(
                    "pattern {id}: row {row:?} is not {size} cells wide"
                )));
            }
            for ch in row.chars() {
                grid.push(match ch {
                    '1' => true,
                    '0' => false,
                    other => return Err(Error::Config(format!("pattern {id}: invalid cell character {other:?}"))),
                });
            }
        }
        Self::new(id, size, grid, physical_width, center_offset)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn grid(&self) -> &[bool] {
        &self.grid
    }

    #[inline]
    pub fn cell(&self, row: usize, col: usize) -> bool {
        self.grid[row * self.size + col]
    }

    pub fn rows(&self) -> Vec<String> {
        self.grid
            .chunks(self.size)
            .map(|r| r.iter().map(|&b| if b { '1' } else { '0' }).collect())
            .collect()
    }

    /// The grid after `quarter_turns` clockwise quarter turns (as seen on an
    /// upright image).
    pub fn rotated(&self, quarter_turns: usize) -> Vec<bool> {
        let mut g = self.grid.clone();
        for _ in 0..quarter_turns % 4 {
            g = rotate_cw(&g, self.size);
        }
        g
    }
}

/// One clockwise quarter turn: new(r, c) = old(n-1-c, r).
pub fn rotate_cw(grid: &[bool], n: usize) -> Vec<bool> {
    let mut out = vec![false; n * n];
    for r in 0..n {
        for c in 0..n {
            out[r * n + c] = grid[(n - 1 - c) * n + r];
        }
    }
    out
}

pub fn hamming(a: &[bool], b: &[bool]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

#[derive(Clone, Debug, PartialEq)]
pub struct MarkerDictionary {
    grid_size: usize,
    pub min_hamming: usize,
    patterns: Vec<MarkerPattern>,
}

impl MarkerDictionary {
    pub fn new(grid_size: usize, min_hamming: usize, patterns: Vec<MarkerPattern>) -> Result<Self> {
        for (i, p) in patterns.iter().enumerate() {
            if p.size != grid_size {
                return Err(Error::Config(format!(
                    "pattern {} has grid size {}, dictionary uses {grid_size}",
                    p.id, p.size
                )));
            }
            if patterns[..i].iter().any(|q| q.id == p.id) {
                return Err(Error::Config(format!("duplicate pattern id {}", p.id)));
            }
        }
        Ok(Self {
            grid_size,
            min_hamming,
            patterns,
        })
    }

    /// Three-marker 6x6 dictionary shipped with the engine (ids 1-3, 8 cm).
    /// Every pair of patterns and every pattern against its own rotations
    /// differ in at least 8 cells.
    pub fn sample() -> Self {
        let rows: [(u32, [&str; 6]); 3] = [
            (1, ["111111", "101011", "111101", "111001", "110011", "111111"]),
            (2, ["111111", "101111", "110011", "100101", "100101", "111111"]),
            (3, ["111111", "100011", "110101", "100011", "101111", "111111"]),
        ];
        let patterns = rows
            .iter()
            .map(|(id, r)| MarkerPattern::from_rows(*id, r, 0.08, Vector2::zeros()))
            .collect::<Result<Vec<_>>>()
            .expect("sample patterns are well formed");
        Self::new(6, 4, patterns).expect("sample dictionary is consistent")
    }

    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    pub fn patterns(&self) -> &[MarkerPattern] {
        &self.patterns
    }

    pub fn pattern(&self, id: u32) -> Option<&MarkerPattern> {
        self.patterns.iter().find(|p| p.id == id)
    }

    pub fn from_file_repr(file: DictionaryFile) -> Result<Self> {
        let patterns = file
            .patterns
            .iter()
            .map(|p| {
                let rows: Vec<&str> = p.rows.iter().map(String::as_str).collect();
                MarkerPattern::from_rows(
                    p.id,
                    &rows,
                    p.physical_width_m,
                    Vector2::new(p.center_offset_m[0], p.center_offset_m[1]),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(file.grid_size, file.min_hamming, patterns)
    }

    pub fn to_file_repr(&self) -> DictionaryFile {
        DictionaryFile {
            grid_size: self.grid_size,
            min_hamming: self.min_hamming,
            patterns: self
                .patterns
                .iter()
                .map(|p| PatternEntry {
                    id: p.id,
                    physical_width_m: p.physical_width,
                    center_offset_m: [p.center_offset.x, p.center_offset.y],
                    rows: p.rows(),
                })
                .collect(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: DictionaryFile = serde_json::from_str(text).map_err(|source| Error::Json {
            path: "<dictionary>".into(),
            source,
        })?;
        Self::from_file_repr(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_file_repr(crate::io::read_json(path)?)
    }
}

/// On-disk dictionary layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DictionaryFile {
    pub grid_size: usize,
    pub min_hamming: usize,
    pub patterns: Vec<PatternEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatternEntry {
    pub id: u32,
    pub physical_width_m: f64,
    #[serde(default)]
    pub center_offset_m: [f64; 2],
    pub rows: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    /// A quarter, half or three-quarter turn of the pattern is within
    /// `min_hamming` of the pattern itself.
    SelfSymmetry {
        id: u32,
        quarter_turns: usize,
        distance: usize,
    },
    /// Some rotation of `first` is within `min_hamming` of `second`.
    /// `first < second`.
    Uniqueness { first: u32, second: u32, distance: usize },
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_acceptable(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn validate_dictionary(dict: &MarkerDictionary) -> ValidationReport {
    let n = dict.grid_size;
    let limit = dict.min_hamming;
    let mut violations = Vec::new();

    for p in &dict.patterns {
        let mut g = p.grid.clone();
        for quarter_turns in 1..4 {
            g = rotate_cw(&g, n);
            let distance = hamming(&g, &p.grid);
            if distance <= limit {
                violations.push(Violation::SelfSymmetry {
                    id: p.id,
                    quarter_turns,
                    distance,
                });
            }
        }
    }

    for (i, a) in dict.patterns.iter().enumerate() {
        for b in &dict.patterns[i + 1..] {
            let (a, b) = if a.id <= b.id { (a, b) } else { (b, a) };
            let distance = (0..4)
                .map(|k| hamming(&a.rotated(k), &b.grid))
                .min()
                .unwrap_or(usize::MAX);
            if distance <= limit {
                violations.push(Violation::Uniqueness {
                    first: a.id,
                    second: b.id,
                    distance,
                });
            }
        }
    }

    violations.sort_by_key(|v| match *v {
        Violation::SelfSymmetry { id, quarter_turns, .. } => (0, id, quarter_turns as u32),
        Violation::Uniqueness { first, second, .. } => (1, first, second),
    });
    ValidationReport { violations }
}

/// An identified marker.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectedMarker {
    pub pattern_id: u32,
    /// Counterclockwise; the first corner is the pattern's top-left.
    pub corners: [Point2<f64>; 4],
    /// Clockwise quarter turns of the pattern as it appears in the image.
    pub rotation_index: u8,
    /// Fraction of grid cells agreeing with the pattern.
    pub confidence: f64,
    pub hamming_distance: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeParams {
    /// k in a k x k sampling lattice per cell.
    pub samples_per_cell: usize,
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self { samples_per_cell: 3 }
    }
}

pub fn decode(gray: &GrayImage, quad: &QuadCandidate, dict: &MarkerDictionary) -> Result<DetectedMarker> {
    decode_with(gray, quad, dict, &DecodeParams::default())
}

/// Cell intensities and the dark/light threshold sampled through the quad's
/// rectification homography.
#[derive(Clone, Debug)]
pub struct GridSample {
    pub size: usize,
    pub cell_means: Vec<f64>,
    pub threshold: f64,
}

impl GridSample {
    pub fn bits(&self) -> Vec<bool> {
        self.cell_means.iter().map(|&m| m < self.threshold).collect()
    }
}

fn rectification(quad: &QuadCandidate, n: usize) -> Result<Homography> {
    if !(quad.area.abs() > 1.0) || signed_area(&quad.corners) <= 1.0 || !is_strictly_convex(&quad.corners) {
        return Err(Error::InvalidCandidate(
            "quad is degenerate or not convex counterclockwise".into(),
        ));
    }
    let s = n as f64;
    let grid = [
        Point2::new(0.0, 0.0),
        Point2::new(s, 0.0),
        Point2::new(s, s),
        Point2::new(0.0, s),
    ];
    estimate_homography(&grid, &quad.corners).map_err(|e| Error::InvalidCandidate(format!("rectification failed: {e}")))
}

/// Samples an `n x n` grid over the quad. The threshold is the midpoint
/// between the mean of the (dark) border ring and the mean of a one-cell ring
/// just outside the quad.
pub fn sample_grid(gray: &GrayImage, quad: &QuadCandidate, n: usize, params: &DecodeParams) -> Result<GridSample> {
    let h = rectification(quad, n)?;
    let k = params.samples_per_cell.max(1);
    let cell_mean = |row: f64, col: f64| -> f64 {
        let mut sum = 0.0;
        for a in 0..k {
            for b in 0..k {
                let gx = col + (b as f64 + 0.5) / k as f64;
                let gy = row + (a as f64 + 0.5) / k as f64;
                // grid corner (0,0) sits on the quad corner; the image point
                // of grid position g is at pixel-center coordinates
                let p = h.apply(Point2::new(gx, gy));
                sum += gray.sample(p.x, p.y);
            }
        }
        sum / (k * k) as f64
    };

    let mut cell_means = Vec::with_capacity(n * n);
    for r in 0..n {
        for c in 0..n {
            cell_means.push(cell_mean(r as f64, c as f64));
        }
    }

    let mut inner = Vec::new();
    for r in 0..n {
        for c in 0..n {
            if r == 0 || c == 0 || r == n - 1 || c == n - 1 {
                inner.push(cell_means[r * n + c]);
            }
        }
    }
    let mut outer = Vec::new();
    for i in -1..=n as isize {
        let i = i as f64;
        let last = n as f64;
        outer.push(cell_mean(-1.0, i));
        outer.push(cell_mean(last, i));
        if i >= 0.0 && i < last {
            outer.push(cell_mean(i, -1.0));
            outer.push(cell_mean(i, last));
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let threshold = 0.5 * (mean(&inner) + mean(&outer));
    Ok(GridSample {
        size: n,
        cell_means,
        threshold,
    })
}

pub fn decode_with(
    gray: &GrayImage,
    quad: &QuadCandidate,
    dict: &MarkerDictionary,
    params: &DecodeParams,
) -> Result<DetectedMarker> {
    let n = dict.grid_size;
    let observed = sample_grid(gray, quad, n, params)?.bits();

    let mut best: Option<(usize, &MarkerPattern, usize)> = None;
    for pattern in &dict.patterns {
        let mut g = pattern.grid.clone();
        for turns in 0..4 {
            if turns > 0 {
                g = rotate_cw(&g, n);
            }
            let d = hamming(&g, &observed);
            if best.is_none_or(|(bd, _, _)| d < bd) {
                best = Some((d, pattern, turns));
            }
        }
    }
    let Some((distance, pattern, turns)) = best else {
        return Err(Error::NoMatch {
            best_distance: usize::MAX,
        });
    };
    if distance > dict.min_hamming {
        return Err(Error::NoMatch {
            best_distance: distance,
        });
    }
    let mut corners = quad.corners;
    corners.rotate_left(turns);
    Ok(DetectedMarker {
        pattern_id: pattern.id,
        corners,
        rotation_index: turns as u8,
        confidence: 1.0 - distance as f64 / (n * n) as f64,
        hamming_distance: distance,
    })
}

/// Printable marker: the pattern at `cell_px` pixels per cell surrounded by
/// `quiet_cells` cells of white margin. Dark cells are 0, light cells 255.
pub fn marker_image(pattern: &MarkerPattern, cell_px: usize, quiet_cells: usize) -> GrayImage {
    let n = pattern.size;
    let cells = n + 2 * quiet_cells;
    let side = cells * cell_px.max(1);
    let cell_px = cell_px.max(1);
    let mut values = vec![255u8; side * side];
    for y in 0..side {
        for x in 0..side {
            let (cy, cx) = (y / cell_px, x / cell_px);
            let inside = (quiet_cells..quiet_cells + n).contains(&cy) && (quiet_cells..quiet_cells + n).contains(&cx);
            if inside && pattern.cell(cy - quiet_cells, cx - quiet_cells) {
                values[y * side + x] = 0;
            }
        }
    }
    GrayImage::new(side, side, values).expect("marker image dimensions are consistent")
}
