//! Dot annotations: an image's size plus the set of annotated head-center
//! points, with plain-text file I/O.
//!
//! File format (UTF-8, whitespace separated, no comments):
//!
//! ```text
//! scene_id height width
//! row col
//! row col
//! ```
//!
//! Coordinates are stored as reals so sub-pixel centers survive round trips,
//! but two points that round to the same integer pixel are rejected: the
//! underlying annotation grid is binary, and silently merging points would
//! change the ground-truth count.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

#[derive(Error, Debug)]
pub enum AnnotError {
    #[error("malformed annotation: {0}")]
    MalformedFile(String),
    #[error("point ({row}, {col}) outside {height}x{width} image")]
    OutOfBounds { row: f64, col: f64, height: usize, width: usize },
    #[error("two points round to the same pixel ({0}, {1})")]
    DuplicatePoint(i64, i64),
    #[error("annotation i/o failed: {0}")]
    Io(#[from] std::io::Error),
}

/// An annotated scene: image dimensions and head-center points in
/// full-resolution pixel coordinates, `(row, col)` order. Immutable after
/// construction.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneAnnotation {
    scene_id: String,
    height: usize,
    width: usize,
    points: Vec<(f64, f64)>,
}

impl SceneAnnotation {
    /// Validates bounds and the rounded-pixel uniqueness rule.
    pub fn new(
        scene_id: impl Into<String>,
        height: usize,
        width: usize,
        points: Vec<(f64, f64)>,
    ) -> Result<Self, AnnotError> {
        let scene_id = scene_id.into();
        if scene_id.is_empty() || scene_id.chars().any(|c| c.is_whitespace()) {
            return Err(AnnotError::MalformedFile(format!(
                "scene id {scene_id:?} must be a single non-empty token"
            )));
        }
        let mut seen = HashSet::with_capacity(points.len());
        for &(row, col) in &points {
            if !(row >= 0.0 && row < height as f64 && col >= 0.0 && col < width as f64) {
                return Err(AnnotError::OutOfBounds { row, col, height, width });
            }
            let pixel = (row.round() as i64, col.round() as i64);
            if !seen.insert(pixel) {
                return Err(AnnotError::DuplicatePoint(pixel.0, pixel.1));
            }
        }
        Ok(SceneAnnotation { scene_id, height, width, points })
    }

    /// Construction for callers that already guarantee the invariants
    /// (e.g. integer-shifted subsets of a validated annotation).
    pub(crate) fn new_unchecked(
        scene_id: String,
        height: usize,
        width: usize,
        points: Vec<(f64, f64)>,
    ) -> Self {
        SceneAnnotation { scene_id, height, width, points }
    }

    pub fn scene_id(&self) -> &str {
        &self.scene_id
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn count(&self) -> usize {
        self.points.len()
    }
}

/// Parses and validates an annotation file. Point order is preserved.
pub fn load_annotation(path: impl AsRef<Path>) -> Result<SceneAnnotation, AnnotError> {
    let text = fs::read_to_string(path)?;
    parse_annotation(&text)
}

pub fn parse_annotation(text: &str) -> Result<SceneAnnotation, AnnotError> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| AnnotError::MalformedFile("empty file".into()))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let [id, h, w] = fields.as_slice() else {
        return Err(AnnotError::MalformedFile(format!(
            "header must be `scene_id height width`, got {header:?}"
        )));
    };
    let height: usize = h
        .parse()
        .map_err(|_| AnnotError::MalformedFile(format!("bad height {h:?}")))?;
    let width: usize = w
        .parse()
        .map_err(|_| AnnotError::MalformedFile(format!("bad width {w:?}")))?;

    let mut points = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [r, c] = fields.as_slice() else {
            return Err(AnnotError::MalformedFile(format!(
                "line {}: expected `row col`, got {line:?}",
                lineno + 2
            )));
        };
        let row: f64 = r
            .parse()
            .map_err(|_| AnnotError::MalformedFile(format!("line {}: bad row {r:?}", lineno + 2)))?;
        let col: f64 = c
            .parse()
            .map_err(|_| AnnotError::MalformedFile(format!("line {}: bad col {c:?}", lineno + 2)))?;
        points.push((row, col));
    }
    SceneAnnotation::new(id.to_string(), height, width, points)
}

/// Writes an annotation. Floats use Rust's shortest round-trip formatting,
/// so `load(save(a)) == a` bitwise on every coordinate.
pub fn save_annotation(a: &SceneAnnotation, path: impl AsRef<Path>) -> Result<(), AnnotError> {
    let mut out = Vec::with_capacity(16 * (a.points.len() + 1));
    writeln!(out, "{} {} {}", a.scene_id, a.height, a.width)?;
    for &(row, col) in &a.points {
        writeln!(out, "{row} {col}")?;
    }
    fs::write(path, out)?;
    Ok(())
}
