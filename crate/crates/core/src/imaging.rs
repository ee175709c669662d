//! Raster types and the front half of the detection pipeline: grayscale
//! conversion, adaptive mean thresholding and quadrilateral candidate search.
//!
//! Pixel coordinates put the center of pixel `(x, y)` at the integer point
//! `(x, y)`, x to the right and y down. A quad is "counterclockwise" when its
//! shoelace area computed in these coordinates is positive (on a screen with
//! y down this appears clockwise).

use nalgebra::{Point2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Rgb = [u8; 3];

/// An RGB camera frame, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    width: usize,
    height: usize,
    pixels: Vec<Rgb>,
}

impl Frame {
    pub fn new(width: usize, height: usize, pixels: Vec<Rgb>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!(
                "frame dimensions must be positive, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::InvalidImage(format!(
                "expected {} pixels for {width}x{height}, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, rgb: Rgb) -> Result<Self> {
        Self::new(width, height, vec![rgb; width * height])
    }

    /// Replicates each intensity into all three channels.
    pub fn from_gray(gray: &GrayImage) -> Self {
        Self {
            width: gray.width,
            height: gray.height,
            pixels: gray.values.iter().map(|&v| [v, v, v]).collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[Rgb] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [Rgb] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<Rgb> {
        self.pixels
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> Rgb {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: Rgb) {
        self.pixels[y * self.width + x] = rgb;
    }

    pub fn same_size(&self, width: usize, height: usize) -> bool {
        self.width == width && self.height == height
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    values: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, values: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || values.len() != width * height {
            return Err(Error::InvalidImage(format!(
                "gray image {width}x{height} with {} values",
                values.len()
            )));
        }
        Ok(Self { width, height, values })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.values[y * self.width + x]
    }

    /// Bilinear sample with edge clamping.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        let x = x.clamp(0.0, max_x);
        let y = y.clamp(0.0, max_y);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let top = self.get(x0, y0) as f64 * (1.0 - fx) + self.get(x1, y0) as f64 * fx;
        let bottom = self.get(x0, y1) as f64 * (1.0 - fx) + self.get(x1, y1) as f64 * fx;
        top * (1.0 - fy) + bottom * fy
    }
}

/// Thresholded image; `true` marks dark (foreground) pixels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryImage {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryImage {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 || bits.len() != width * height {
            return Err(Error::InvalidImage(format!(
                "binary image {width}x{height} with {} bits",
                bits.len()
            )));
        }
        Ok(Self { width, height, bits })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    fn get_signed(&self, x: isize, y: isize) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.bits[y as usize * self.width + x as usize]
    }
}

/// Luma conversion with weights 0.299 / 0.587 / 0.114.
pub fn to_grayscale(frame: &Frame) -> GrayImage {
    let values = frame
        .pixels
        .iter()
        .map(|&[r, g, b]| {
            let luma = 0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64;
            luma.round().clamp(0.0, 255.0) as u8
        })
        .collect();
    GrayImage {
        width: frame.width,
        height: frame.height,
        values,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThresholdParams {
    /// Side of the square averaging window, odd and at least 3.
    pub window: usize,
    /// A pixel is dark when it is below the local mean minus this offset.
    pub offset: f64,
}

impl Default for ThresholdParams {
    fn default() -> Self {
        Self {
            window: 15,
            offset: 7.0,
        }
    }
}

/// Adaptive mean thresholding over an edge-clamped `window x window`
/// neighborhood.
pub fn binarize(gray: &GrayImage, params: &ThresholdParams) -> Result<BinaryImage> {
    let window = params.window;
    if window < 3 || window.is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!(
            "threshold window must be odd and >= 3, got {window}"
        )));
    }
    if !(params.offset >= 0.0 && params.offset.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "threshold offset must be finite and >= 0, got {}",
            params.offset
        )));
    }
    let (w, h) = (gray.width, gray.height);
    if window > w && window > h {
        return Err(Error::InvalidParameter(format!(
            "threshold window {window} exceeds both image dimensions {w}x{h}"
        )));
    }

    let radius = (window / 2) as isize;
    let horizontal = box_sum_rows(&gray.values, w, h, radius);
    let sums = box_sum_columns(&horizontal, w, h, radius);
    let count = (window * window) as f64;

    let bits = gray
        .values
        .iter()
        .zip(&sums)
        .map(|(&v, &sum)| (v as f64 + params.offset) * count < sum as f64)
        .collect();
    Ok(BinaryImage {
        width: w,
        height: h,
        bits,
    })
}

fn clamp_index(i: isize, len: usize) -> usize {
    i.clamp(0, len as isize - 1) as usize
}

fn box_sum_rows(values: &[u8], w: usize, h: usize, radius: isize) -> Vec<u32> {
    let mut out = vec![0u32; w * h];
    for y in 0..h {
        let row = &values[y * w..(y + 1) * w];
        let mut sum: u32 = (-radius..=radius).map(|k| row[clamp_index(k, w)] as u32).sum();
        for x in 0..w {
            out[y * w + x] = sum;
            let leaving = row[clamp_index(x as isize - radius, w)] as u32;
            let entering = row[clamp_index(x as isize + radius + 1, w)] as u32;
            sum = sum - leaving + entering;
        }
    }
    out
}

fn box_sum_columns(values: &[u32], w: usize, h: usize, radius: isize) -> Vec<u32> {
    let mut out = vec![0u32; w * h];
    for x in 0..w {
        let mut sum: u32 = (-radius..=radius).map(|k| values[clamp_index(k, h) * w + x]).sum();
        for y in 0..h {
            out[y * w + x] = sum;
            let leaving = values[clamp_index(y as isize - radius, h) * w + x];
            let entering = values[clamp_index(y as isize + radius + 1, h) * w + x];
            sum = sum - leaving + entering;
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadParams {
    /// Minimum quad area in pixels².
    pub min_area: f64,
    /// Polygon simplification tolerance as a fraction of contour perimeter.
    pub polygon_tolerance: f64,
}

impl Default for QuadParams {
    fn default() -> Self {
        Self {
            min_area: 400.0,
            polygon_tolerance: 0.02,
        }
    }
}

/// A convex four-corner marker candidate.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadCandidate {
    /// Counterclockwise, starting at the corner nearest the image origin.
    pub corners: [Point2<f64>; 4],
    pub area: f64,
}

impl QuadCandidate {
    /// Orders `corners` into the canonical convention. Returns `None` if the
    /// polygon is not strictly convex.
    pub fn from_corners(corners: [Point2<f64>; 4]) -> Option<Self> {
        let mut corners = corners;
        if signed_area(&corners) < 0.0 {
            corners.reverse();
        }
        if !is_strictly_convex(&corners) {
            return None;
        }
        let anchor = (0..4)
            .min_by(|&a, &b| {
                let da = corners[a].coords.norm_squared();
                let db = corners[b].coords.norm_squared();
                da.total_cmp(&db)
            })
            .unwrap_or(0);
        corners.rotate_left(anchor);
        Some(Self {
            area: signed_area(&corners),
            corners,
        })
    }

    fn sort_key(&self) -> (f64, f64) {
        let min_y = self.corners.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
        let min_x = self.corners.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
        (min_y, min_x)
    }
}

/// Shoelace area, positive for counterclockwise order in pixel coordinates.
pub fn signed_area(poly: &[Point2<f64>]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let a = poly[i];
            let b = poly[(i + 1) % n];
            a.x * b.y - b.x * a.y
        })
        .sum::<f64>()
        * 0.5
}

/// All turns strictly positive.
pub fn is_strictly_convex(poly: &[Point2<f64>]) -> bool {
    let n = poly.len();
    (0..n).all(|i| {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        let c = poly[(i + 2) % n];
        cross(b - a, c - b) > 0.0
    })
}

fn cross(a: Vector2<f64>, b: Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Searches dark connected regions whose outer contour simplifies to a convex
/// quadrilateral. Results are ordered by (min corner y, min corner x).
pub fn find_quads(bin: &BinaryImage, params: &QuadParams) -> Vec<QuadCandidate> {
    let components = label_components(bin);
    let mut quads = Vec::new();
    for comp in &components {
        if comp.touches_border(bin.width, bin.height) {
            continue;
        }
        if (comp.bbox_area() as f64) < params.min_area {
            continue;
        }
        let contour = trace_outer_contour(bin, comp.first);
        if contour.len() < 8 {
            continue;
        }
        if let Some(quad) = fit_quad(&contour, params) {
            quads.push(quad);
        }
    }
    quads.sort_by(|a, b| {
        let (ay, ax) = a.sort_key();
        let (by, bx) = b.sort_key();
        ay.total_cmp(&by).then(ax.total_cmp(&bx))
    });
    quads
}

struct Component {
    first: (isize, isize),
    min_x: usize,
    min_y: usize,
    max_x: usize,
    max_y: usize,
}

impl Component {
    fn touches_border(&self, w: usize, h: usize) -> bool {
        self.min_x == 0 || self.min_y == 0 || self.max_x + 1 == w || self.max_y + 1 == h
    }

    fn bbox_area(&self) -> usize {
        (self.max_x - self.min_x + 1) * (self.max_y - self.min_y + 1)
    }
}

// 8-neighborhood, clockwise on screen starting east.
const DIRS: [(isize, isize); 8] = [(1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1)];

fn dir_index(dx: isize, dy: isize) -> usize {
    DIRS.iter()
        .position(|&d| d == (dx, dy))
        .expect("offset is an 8-neighbor")
}

/// 8-connected labeling. Components are reported in raster order of their
/// first pixel, which is always the topmost-leftmost one.
fn label_components(bin: &BinaryImage) -> Vec<Component> {
    let (w, h) = (bin.width, bin.height);
    let mut visited = vec![false; w * h];
    let mut stack = Vec::new();
    let mut out = Vec::new();
    for start in 0..w * h {
        if !bin.bits[start] || visited[start] {
            continue;
        }
        visited[start] = true;
        stack.push(start);
        let (sx, sy) = (start % w, start / w);
        let mut comp = Component {
            first: (sx as isize, sy as isize),
            min_x: sx,
            min_y: sy,
            max_x: sx,
            max_y: sy,
        };
        while let Some(idx) = stack.pop() {
            let (x, y) = (idx % w, idx / w);
            comp.min_x = comp.min_x.min(x);
            comp.max_x = comp.max_x.max(x);
            comp.min_y = comp.min_y.min(y);
            comp.max_y = comp.max_y.max(y);
            for &(dx, dy) in &DIRS {
                let nx = x as isize + dx;
                let ny = y as isize + dy;
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let n = ny as usize * w + nx as usize;
                if bin.bits[n] && !visited[n] {
                    visited[n] = true;
                    stack.push(n);
                }
            }
        }
        out.push(comp);
    }
    out
}

/// Moore-neighbor tracing of the outer boundary starting at the component's
/// topmost-leftmost pixel. Stops when the first step is about to repeat.
fn trace_outer_contour(bin: &BinaryImage, start: (isize, isize)) -> Vec<Point2<f64>> {
    let mut contour = vec![Point2::new(start.0 as f64, start.1 as f64)];
    let mut cur = start;
    // the west neighbor of the first pixel is background
    let mut back = 4usize;
    let mut first_step: Option<(isize, isize)> = None;
    let limit = 4 * bin.width * bin.height + 8;
    for _ in 0..limit {
        let mut found = None;
        for i in 1..=8 {
            let d = (back + i) % 8;
            let n = (cur.0 + DIRS[d].0, cur.1 + DIRS[d].1);
            if bin.get_signed(n.0, n.1) {
                found = Some(d);
                break;
            }
        }
        let Some(d) = found else {
            break; // isolated pixel
        };
        let next = (cur.0 + DIRS[d].0, cur.1 + DIRS[d].1);
        if cur == start {
            match first_step {
                None => first_step = Some(next),
                Some(step) if step == next => break,
                Some(_) => {}
            }
        }
        let prev = DIRS[(d + 7) % 8];
        let bg = (cur.0 + prev.0, cur.1 + prev.1);
        back = dir_index(bg.0 - next.0, bg.1 - next.1);
        cur = next;
        if cur == start && first_step.is_some() {
            continue;
        }
        contour.push(Point2::new(cur.0 as f64, cur.1 as f64));
    }
    contour
}

fn fit_quad(contour: &[Point2<f64>], params: &QuadParams) -> Option<QuadCandidate> {
    let n = contour.len();
    let perimeter: f64 = (0..n).map(|i| (contour[(i + 1) % n] - contour[i]).norm()).sum();
    let tolerance = params.polygon_tolerance * perimeter;

    let vertices = simplify_closed(contour, tolerance);
    if vertices.len() != 4 {
        return None;
    }
    let coarse: Vec<Point2<f64>> = vertices.iter().map(|&i| contour[i]).collect();
    if !is_strictly_convex(&coarse) {
        return None;
    }

    let mut lines = Vec::with_capacity(4);
    let centroid = Point2::from(coarse.iter().map(|p| p.coords).sum::<Vector2<f64>>() / 4.0);
    for k in 0..4 {
        let a = vertices[k];
        let b = vertices[(k + 1) % 4];
        let side = contour_span(contour, a, b);
        let fallback = Line::through(contour[a], contour[b])?;
        let mut line = trimmed_side_fit(&side).unwrap_or(fallback);
        // boundary pixel centers sit half a pixel inside the region's edge
        line.push_away_from(centroid, 0.5);
        lines.push(line);
    }
    let mut corners = [Point2::origin(); 4];
    for k in 0..4 {
        let prev = &lines[(k + 3) % 4];
        corners[k] = prev.intersect(&lines[k]).unwrap_or(coarse[k]);
    }
    let quad = QuadCandidate::from_corners(corners)?;
    (quad.area >= params.min_area).then_some(quad)
}

/// Contour indices retained by a closed iterative end-point fit.
fn simplify_closed(contour: &[Point2<f64>], tolerance: f64) -> Vec<usize> {
    let n = contour.len();
    let a = 0;
    let b = (0..n)
        .max_by(|&i, &j| {
            let di = (contour[i] - contour[a]).norm_squared();
            let dj = (contour[j] - contour[a]).norm_squared();
            di.total_cmp(&dj)
        })
        .unwrap_or(0);
    if b == a {
        return vec![a];
    }
    let mut keep = vec![false; n];
    keep[a] = true;
    keep[b] = true;
    split_span(contour, a, b, tolerance, &mut keep);
    split_span(contour, b, a, tolerance, &mut keep);
    let mut vertices: Vec<usize> = (0..n).filter(|&i| keep[i]).collect();

    // the anchor is forced in; drop any vertex lying on its neighbors' chord
    loop {
        let m = vertices.len();
        if m <= 3 {
            break;
        }
        let mut removed = false;
        for k in 0..m {
            let p = contour[vertices[k]];
            let prev = contour[vertices[(k + m - 1) % m]];
            let next = contour[vertices[(k + 1) % m]];
            if point_segment_distance(p, prev, next) <= tolerance {
                vertices.remove(k);
                removed = true;
                break;
            }
        }
        if !removed {
            break;
        }
    }
    vertices
}

fn split_span(contour: &[Point2<f64>], from: usize, to: usize, tolerance: f64, keep: &mut [bool]) {
    let n = contour.len();
    let mut stack = vec![(from, to)];
    while let Some((s, e)) = stack.pop() {
        let span = (e + n - s) % n;
        if span < 2 {
            continue;
        }
        let mut best = (0.0, s);
        for step in 1..span {
            let i = (s + step) % n;
            let d = point_segment_distance(contour[i], contour[s], contour[e]);
            if d > best.0 {
                best = (d, i);
            }
        }
        if best.0 > tolerance {
            keep[best.1] = true;
            stack.push((s, best.1));
            stack.push((best.1, e));
        }
    }
}

fn point_segment_distance(p: Point2<f64>, a: Point2<f64>, b: Point2<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

fn contour_span(contour: &[Point2<f64>], from: usize, to: usize) -> Vec<Point2<f64>> {
    let n = contour.len();
    let span = (to + n - from) % n;
    (0..=span).map(|k| contour[(from + k) % n]).collect()
}

fn trimmed_side_fit(side: &[Point2<f64>]) -> Option<Line> {
    let trim = (side.len() / 8).max(2);
    if side.len() < 2 * trim + 2 {
        return None;
    }
    Line::fit(&side[trim..side.len() - trim])
}

/// Line in normal form `normal · p = offset`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Line {
    normal: Vector2<f64>,
    offset: f64,
}

impl Line {
    fn through(a: Point2<f64>, b: Point2<f64>) -> Option<Self> {
        let d = b - a;
        let len = d.norm();
        if len < 1e-12 {
            return None;
        }
        let normal = Vector2::new(-d.y, d.x) / len;
        Some(Self {
            normal,
            offset: normal.dot(&a.coords),
        })
    }

    /// Total least squares fit.
    pub(crate) fn fit(points: &[Point2<f64>]) -> Option<Self> {
        if points.len() < 2 {
            return None;
        }
        let n = points.len() as f64;
        let mean = points.iter().map(|p| p.coords).sum::<Vector2<f64>>() / n;
        let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
        for p in points {
            let d = p.coords - mean;
            sxx += d.x * d.x;
            sxy += d.x * d.y;
            syy += d.y * d.y;
        }
        // direction of largest spread
        let angle = 0.5 * (2.0 * sxy).atan2(sxx - syy);
        let dir = Vector2::new(angle.cos(), angle.sin());
        if sxx + syy < 1e-12 {
            return None;
        }
        let normal = Vector2::new(-dir.y, dir.x);
        Some(Self {
            normal,
            offset: normal.dot(&mean),
        })
    }

    fn push_away_from(&mut self, inside: Point2<f64>, distance: f64) {
        let side = self.normal.dot(&inside.coords) - self.offset;
        if side > 0.0 {
            self.offset -= distance;
        } else {
            self.offset += distance;
        }
    }

    pub(crate) fn intersect(&self, other: &Line) -> Option<Point2<f64>> {
        let det = self.normal.x * other.normal.y - self.normal.y * other.normal.x;
        if det.abs() < 1e-9 {
            return None;
        }
        let x = (self.offset * other.normal.y - self.normal.y * other.offset) / det;
        let y = (self.normal.x * other.offset - self.offset * other.normal.x) / det;
        Some(Point2::new(x, y))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineParams {
    /// Half-length of the intensity profile sampled across each edge, pixels.
    pub search_radius: f64,
    /// Profiles with less dark/light contrast than this are ignored.
    pub min_contrast: f64,
    pub iterations: usize,
    /// The inward half of each profile is capped at this fraction of the
    /// quad's extent across the edge, so thin borders are not over-sampled.
    pub inner_fraction: f64,
}

impl Default for RefineParams {
    fn default() -> Self {
        Self {
            search_radius: 3.0,
            min_contrast: 8.0,
            iterations: 2,
            inner_fraction: 0.13,
        }
    }
}

/// Moves each quad edge onto the dark-to-light transition of the grayscale
/// image and re-intersects the edges. Edge position along each profile is the
/// area-balance point between the dark and light plateaus, which is exact for
/// box-filtered straight edges. Returns the input unchanged when the image
/// does not support a refinement.
pub fn refine_quad(gray: &GrayImage, quad: &QuadCandidate, params: &RefineParams) -> QuadCandidate {
    let mut current = quad.clone();
    for _ in 0..params.iterations {
        match refine_once(gray, &current, params) {
            Some(next) => current = next,
            None => break,
        }
    }
    current
}

fn refine_once(gray: &GrayImage, quad: &QuadCandidate, params: &RefineParams) -> Option<QuadCandidate> {
    let c = &quad.corners;
    let centroid = Point2::from(c.iter().map(|p| p.coords).sum::<Vector2<f64>>() / 4.0);
    let step = 0.25;
    let radius = params.search_radius;
    let plateau = 3usize;

    let mut lines = Vec::with_capacity(4);
    for k in 0..4 {
        let a = c[k];
        let b = c[(k + 1) % 4];
        let along = b - a;
        let length = along.norm();
        if length < 4.0 {
            return None;
        }
        let dir = along / length;
        let mut normal = Vector2::new(-dir.y, dir.x);
        if normal.dot(&(a - centroid)) < 0.0 {
            normal = -normal;
        }
        let depth = [c[(k + 2) % 4], c[(k + 3) % 4]]
            .iter()
            .map(|p| (p - a).dot(&normal).abs())
            .fold(f64::INFINITY, f64::min);
        let inner = radius.min((params.inner_fraction * depth).max(1.0));
        let samples = ((radius + inner) / step).round() as usize + 1;
        let mut profile = vec![0.0; samples];
        let margin = (0.1 * length).max(2.0);
        let count = ((length - 2.0 * margin).floor() as usize).max(2);
        let mut points = Vec::with_capacity(count);
        for i in 0..count {
            let t = margin + (length - 2.0 * margin) * i as f64 / (count - 1) as f64;
            let base = a + dir * t;
            for (j, value) in profile.iter_mut().enumerate() {
                let s = -inner + step * j as f64;
                let p = base + normal * s;
                *value = gray.sample(p.x, p.y);
            }
            let dark = profile[..plateau].iter().sum::<f64>() / plateau as f64;
            let light = profile[samples - plateau..].iter().sum::<f64>() / plateau as f64;
            let contrast = light - dark;
            if contrast < params.min_contrast {
                continue;
            }
            // trapezoidal integral of the normalized "still dark" fraction
            let mut area = 0.0;
            for j in 0..samples - 1 {
                let f0 = ((light - profile[j]) / contrast).clamp(0.0, 1.0);
                let f1 = ((light - profile[j + 1]) / contrast).clamp(0.0, 1.0);
                area += 0.5 * (f0 + f1) * step;
            }
            points.push(base + normal * (-inner + area));
        }
        if points.len() < count.div_ceil(2).max(2) {
            return None;
        }
        lines.push(Line::fit(&points)?);
    }
    let mut corners = [Point2::origin(); 4];
    for k in 0..4 {
        corners[k] = lines[(k + 3) % 4].intersect(&lines[k])?;
    }
    let refined = QuadCandidate::from_corners(corners)?;
    let drift = refined
        .corners
        .iter()
        .zip(&quad.corners)
        .map(|(p, q)| (p - q).norm())
        .fold(0.0, f64::max);
    let shortest = (0..4)
        .map(|k| (quad.corners[(k + 1) % 4] - quad.corners[k]).norm())
        .fold(f64::INFINITY, f64::min);
    (drift <= radius.max(0.2 * shortest)).then_some(refined)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray_from_fn(w: usize, h: usize, f: impl Fn(usize, usize) -> u8) -> GrayImage {
        let values = (0..h)
            .flat_map(|y| (0..w).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        GrayImage::new(w, h, values).unwrap()
    }

    fn bin_from_fn(w: usize, h: usize, f: impl Fn(usize, usize) -> bool) -> BinaryImage {
        let bits = (0..h)
            .flat_map(|y| (0..w).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        BinaryImage::new(w, h, bits).unwrap()
    }

    #[test]
    fn luma_examples() {
        let frame = Frame::new(3, 1, vec![[255, 0, 0], [0, 0, 0], [255, 255, 255]]).unwrap();
        assert_eq!(to_grayscale(&frame).values(), &[76, 0, 255]);
    }

    #[test]
    fn frame_rejects_bad_dimensions() {
        assert!(Frame::new(0, 4, vec![]).is_err());
        assert!(Frame::new(2, 2, vec![[0; 3]; 3]).is_err());
    }

    #[test]
    fn uniform_image_has_no_foreground() {
        let gray = GrayImage::filled(32, 24, 128).unwrap();
        let bin = binarize(&gray, &ThresholdParams::default()).unwrap();
        assert!(bin.bits().iter().all(|&b| !b));
    }

    #[test]
    fn zero_offset_is_strict() {
        let gray = GrayImage::filled(16, 16, 0).unwrap();
        let bin = binarize(&gray, &ThresholdParams { window: 3, offset: 0.0 }).unwrap();
        assert!(bin.bits().iter().all(|&b| !b));
    }

    #[test]
    fn rejects_bad_windows() {
        let gray = GrayImage::filled(8, 6, 10).unwrap();
        for window in [1, 2, 4, 9] {
            let p = ThresholdParams { window, offset: 7.0 };
            assert!(
                matches!(binarize(&gray, &p), Err(Error::InvalidParameter(_))),
                "window {window}"
            );
        }
        // larger than one dimension only is allowed
        assert!(binarize(&gray, &ThresholdParams { window: 7, offset: 7.0 }).is_ok());
        let p = ThresholdParams {
            window: 3,
            offset: -1.0,
        };
        assert!(binarize(&gray, &p).is_err());
    }

    #[test]
    fn half_split_matches_brute_force() {
        let gray = gray_from_fn(8, 8, |x, _| if x < 4 { 0 } else { 255 });
        let bin = binarize(&gray, &ThresholdParams { window: 3, offset: 7.0 }).unwrap();
        // Frozen from a per-pixel clamped-window mean: only the dark column
        // adjacent to the bright half falls below mean - 7 (mean 85).
        for y in 0..8 {
            for x in 0..8 {
                assert_eq!(bin.get(x, y), x == 3, "({x},{y})");
            }
        }
    }

    #[test]
    fn empty_image_has_no_quads() {
        let bin = bin_from_fn(64, 48, |_, _| false);
        assert!(find_quads(&bin, &QuadParams::default()).is_empty());
    }

    #[test]
    fn filled_square_gives_one_quad() {
        let bin = bin_from_fn(640, 480, |x, y| (50..150).contains(&x) && (50..150).contains(&y));
        let quads = find_quads(&bin, &QuadParams::default());
        assert_eq!(quads.len(), 1);
        let truth = [(49.5, 49.5), (149.5, 49.5), (149.5, 149.5), (49.5, 149.5)];
        for (c, t) in quads[0].corners.iter().zip(truth) {
            assert!((c.x - t.0).abs() < 1.0 && (c.y - t.1).abs() < 1.0, "{c:?} vs {t:?}");
        }
        assert!(quads[0].area > 0.0);
    }

    #[test]
    fn disc_is_not_a_quad() {
        let bin = bin_from_fn(640, 480, |x, y| {
            let dx = x as f64 - 320.0;
            let dy = y as f64 - 240.0;
            dx * dx + dy * dy <= 40.0 * 40.0
        });
        assert!(find_quads(&bin, &QuadParams::default()).is_empty());
    }

    #[test]
    fn border_touching_region_is_rejected() {
        let bin = bin_from_fn(200, 200, |x, y| x < 60 && (40..100).contains(&y));
        assert!(find_quads(&bin, &QuadParams::default()).is_empty());
    }

    #[test]
    fn small_region_is_rejected() {
        let bin = bin_from_fn(100, 100, |x, y| (40..50).contains(&x) && (40..50).contains(&y));
        assert!(find_quads(&bin, &QuadParams::default()).is_empty());
    }

    #[test]
    fn rotated_square_corners_ordered() {
        // diamond: |x-100| + |y-100| <= 50
        let bin = bin_from_fn(200, 200, |x, y| {
            (x as f64 - 100.0).abs() + (y as f64 - 100.0).abs() <= 50.0
        });
        let quads = find_quads(&bin, &QuadParams::default());
        assert_eq!(quads.len(), 1);
        let q = &quads[0];
        assert!(signed_area(&q.corners) > 0.0);
        let nearest = q.corners.iter().map(|c| c.coords.norm()).fold(f64::INFINITY, f64::min);
        assert_eq!(q.corners[0].coords.norm(), nearest);
    }

    #[test]
    fn quads_sorted_by_min_y_then_x() {
        let bin = bin_from_fn(300, 200, |x, y| {
            let a = (150..190).contains(&x) && (20..60).contains(&y);
            let b = (20..60).contains(&x) && (100..140).contains(&y);
            let c = (200..240).contains(&x) && (100..140).contains(&y);
            a || b || c
        });
        let quads = find_quads(&bin, &QuadParams::default());
        assert_eq!(quads.len(), 3);
        assert!(quads[0].corners[0].y < 30.0);
        assert!(quads[1].corners[0].x < quads[2].corners[0].x);
    }

    #[test]
    fn refinement_recovers_box_filtered_edge() {
        // Square [40.3, 120.3) x [30.6, 110.6) rendered with exact area coverage.
        let (x0, x1, y0, y1) = (40.3, 120.3, 30.6, 110.6);
        let coverage = |p: f64, lo: f64, hi: f64| ((p + 0.5).min(hi) - (p - 0.5).max(lo)).max(0.0);
        let gray = gray_from_fn(160, 140, |x, y| {
            let cov = coverage(x as f64, x0, x1) * coverage(y as f64, y0, y1);
            (235.0 - cov * 215.0).round() as u8
        });
        let rough = QuadCandidate::from_corners([
            Point2::new(41.0, 31.0),
            Point2::new(119.5, 31.2),
            Point2::new(119.8, 110.0),
            Point2::new(40.8, 109.9),
        ])
        .unwrap();
        let refined = refine_quad(&gray, &rough, &RefineParams::default());
        let truth = [(x0, y0), (x1, y0), (x1, y1), (x0, y1)];
        for (c, t) in refined.corners.iter().zip(truth) {
            assert!((c.x - t.0).abs() < 0.05 && (c.y - t.1).abs() < 0.05, "{c:?} vs {t:?}");
        }
    }
}
