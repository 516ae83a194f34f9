//! Density-map generation from dot annotations.
//!
//! A plain map stamps one unit-mass Gaussian per annotated point, so the map
//! integral equals the head count. A structured map stacks `D` such maps:
//! each point is assigned a density level by thresholding its mean distance
//! to the top-k nearest annotated neighbors, its unit mass is spread over
//! neighboring levels with a discrete Gaussian soft-mapping profile, and each
//! level is smoothed with its own kernel width. Kernels clipped at map
//! borders are renormalized per point, which keeps the count integral exact;
//! that is what the whole evaluation pipeline depends on.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::annot::SceneAnnotation;
use crate::numcore::Tensor;

#[derive(Error, Debug)]
pub enum DenseError {
    #[error("sigma must be positive, got {0}")]
    NonPositiveSigma(f64),
    #[error("scale {scale} does not give integral map dims for {height}x{width}")]
    BadScale { scale: f64, height: usize, width: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("density map i/o failed: {0}")]
    Io(#[from] io::Error),
    #[error("bad DMAP file: {0}")]
    BadFormat(String),
}

/// Non-negative density grid of shape `(s*H, s*W)`; its sum is the count.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMap {
    values: Tensor<f64>,
    scale: f64,
}

impl DensityMap {
    pub fn values(&self) -> &Tensor<f64> {
        &self.values
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.values.shape()[0], self.values.shape()[1])
    }

    /// The count integral: sum of all entries.
    pub fn total_mass(&self) -> f64 {
        self.values.sum()
    }

    pub fn save_dmap(&self, path: impl AsRef<Path>) -> Result<(), DenseError> {
        write_dmap(path, std::slice::from_ref(&self.values))
    }
}

/// A `D`-level stack of density maps of identical shape and scale, plus the
/// thresholds and per-level kernel widths that generated it.
#[derive(Clone, Debug, PartialEq)]
pub struct StructuredDensityMap {
    levels: Vec<DensityMap>,
    thresholds: Vec<f64>,
    sigmas: Vec<f64>,
}

impl StructuredDensityMap {
    pub fn levels(&self) -> &[DensityMap] {
        &self.levels
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    /// Sum over all levels and pixels.
    pub fn total_mass(&self) -> f64 {
        self.levels.iter().map(|l| l.total_mass()).sum()
    }

    pub fn per_level_mass(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.total_mass()).collect()
    }

    pub fn save_dmap(&self, path: impl AsRef<Path>) -> Result<(), DenseError> {
        let grids: Vec<Tensor<f64>> = self.levels.iter().map(|l| l.values.clone()).collect();
        write_dmap(path, &grids)
    }
}

/// One point's soft assignment over density levels: non-negative weights
/// summing to 1, unimodal with its peak at the assigned level (1-based).
#[derive(Clone, Debug, PartialEq)]
pub struct SoftLabel {
    pub weights: Vec<f64>,
    pub star_level: usize,
}

/// Parameters of structured map generation. Defaults: `sigma_v = 2D - 1`,
/// per-level kernel widths `0.2 * S_d`, scale 1/4, top-5 neighbors.
#[derive(Clone, Debug, PartialEq)]
pub struct StructuredMapConfig {
    pub levels: usize,
    /// Strictly increasing, in full-resolution pixels.
    pub thresholds: Vec<f64>,
    pub sigma_v: f64,
    pub sigmas: Vec<f64>,
    /// Kernel width for plain (single-level) maps.
    pub sigma_g: f64,
    pub scale: f64,
    pub k_neighbors: usize,
}

impl StructuredMapConfig {
    pub fn new(thresholds: Vec<f64>) -> Self {
        let d = thresholds.len();
        StructuredMapConfig {
            levels: d,
            sigma_v: (2 * d) as f64 - 1.0,
            sigmas: thresholds.iter().map(|s| 0.2 * s).collect(),
            sigma_g: 2.0,
            scale: 0.25,
            thresholds,
            k_neighbors: 5,
        }
    }

    pub fn validate(&self) -> Result<(), DenseError> {
        if self.levels == 0 || self.thresholds.len() != self.levels || self.sigmas.len() != self.levels {
            return Err(DenseError::InvalidConfig(format!(
                "need levels = |thresholds| = |sigmas| >= 1, got {} / {} / {}",
                self.levels,
                self.thresholds.len(),
                self.sigmas.len()
            )));
        }
        if !self.thresholds.windows(2).all(|w| w[0] < w[1]) {
            return Err(DenseError::InvalidConfig("thresholds must be strictly increasing".into()));
        }
        for &s in &self.sigmas {
            if !(s > 0.0) {
                return Err(DenseError::NonPositiveSigma(s));
            }
        }
        if !(self.sigma_v > 0.0) {
            return Err(DenseError::InvalidConfig(format!("sigma_v must be > 0, got {}", self.sigma_v)));
        }
        if !(self.scale > 0.0 && self.scale <= 1.0) {
            return Err(DenseError::InvalidConfig(format!("scale must be in (0, 1], got {}", self.scale)));
        }
        if self.k_neighbors == 0 {
            return Err(DenseError::InvalidConfig("k_neighbors must be >= 1".into()));
        }
        Ok(())
    }
}

/// Square isotropic Gaussian kernel of side `2*ceil(3*sigma) + 1`,
/// renormalized to sum exactly 1 after truncation.
pub fn gaussian_kernel(sigma: f64) -> Result<Tensor<f64>, DenseError> {
    if !(sigma > 0.0) {
        return Err(DenseError::NonPositiveSigma(sigma));
    }
    let half = (3.0 * sigma).ceil() as usize;
    let side = 2 * half + 1;
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut data = Vec::with_capacity(side * side);
    let mut total = 0.0;
    for i in 0..side {
        for j in 0..side {
            let dy = i as f64 - half as f64;
            let dx = j as f64 - half as f64;
            let v = (-(dy * dy + dx * dx) * inv).exp();
            total += v;
            data.push(v);
        }
    }
    for v in data.iter_mut() {
        *v /= total;
    }
    Ok(Tensor::from_vec(&[side, side], data).expect("kernel size"))
}

fn map_dims(height: usize, width: usize, scale: f64) -> Result<(usize, usize), DenseError> {
    let check = |dim: usize| -> Option<usize> {
        let exact = scale * dim as f64;
        let rounded = exact.round();
        ((exact - rounded).abs() < 1e-9 && rounded >= 1.0).then_some(rounded as usize)
    };
    match (check(height), check(width)) {
        (Some(h), Some(w)) => Ok((h, w)),
        _ => Err(DenseError::BadScale { scale, height, width }),
    }
}

/// Adds `weight` times the kernel centered at `(row, col)`; the part of the
/// kernel that fits inside the grid is rescaled so the deposited mass is
/// exactly `weight` even when clipped at a border.
fn stamp_renormalized(grid: &mut Tensor<f64>, kernel: &Tensor<f64>, row: usize, col: usize, weight: f64) {
    let (h, w) = (grid.shape()[0], grid.shape()[1]);
    let side = kernel.shape()[0];
    let half = (side / 2) as isize;
    let (r, c) = (row as isize, col as isize);

    let u0 = (half - r).max(0) as usize;
    let u1 = (half + h as isize - r).min(side as isize) as usize;
    let v0 = (half - c).max(0) as usize;
    let v1 = (half + w as isize - c).min(side as isize) as usize;

    let kd = kernel.data();
    let mut clipped_sum = 0.0;
    for u in u0..u1 {
        for v in v0..v1 {
            clipped_sum += kd[u * side + v];
        }
    }
    debug_assert!(clipped_sum > 0.0, "kernel center must be inside the grid");

    let gain = weight / clipped_sum;
    let gd = grid.data_mut();
    for u in u0..u1 {
        let gi = (r + u as isize - half) as usize;
        for v in v0..v1 {
            let gj = (c + v as isize - half) as usize;
            gd[gi * w + gj] += kd[u * side + v] * gain;
        }
    }
}

fn scaled_pixel(point: (f64, f64), scale: f64, map_h: usize, map_w: usize) -> (usize, usize) {
    // floor of the scaled coordinate; annotation bounds keep it inside
    let r = ((point.0 * scale).floor() as usize).min(map_h - 1);
    let c = ((point.1 * scale).floor() as usize).min(map_w - 1);
    (r, c)
}

/// Eq.-style plain density map: one unit-mass Gaussian per point, stamped at
/// `(floor(s*row), floor(s*col))`; `sum(values) == count` to ~1e-12 relative.
pub fn plain_density_map(a: &SceneAnnotation, sigma_g: f64, scale: f64) -> Result<DensityMap, DenseError> {
    let kernel = gaussian_kernel(sigma_g)?;
    let (mh, mw) = map_dims(a.height(), a.width(), scale)?;
    let mut grid = Tensor::zeros(&[mh, mw]);
    for &p in a.points() {
        let (r, c) = scaled_pixel(p, scale, mh, mw);
        stamp_renormalized(&mut grid, &kernel, r, c, 1.0);
    }
    Ok(DensityMap { values: grid, scale })
}

/// Per-point mean Euclidean distance to the `min(k, n-1)` nearest other
/// points; a single isolated point gets `+inf` (it clamps to the sparsest
/// level).
pub fn avg_topk_distance(points: &[(f64, f64)], k: usize) -> Vec<f64> {
    assert!(k >= 1, "k must be >= 1");
    let n = points.len();
    let mut out = Vec::with_capacity(n);
    for (i, p) in points.iter().enumerate() {
        if n == 1 {
            out.push(f64::INFINITY);
            continue;
        }
        let mut dists: Vec<f64> = points
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, q)| ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt())
            .collect();
        let take = k.min(dists.len());
        dists.select_nth_unstable_by(take - 1, |a, b| a.partial_cmp(b).expect("finite distances"));
        let sum: f64 = dists[..take].iter().sum();
        out.push(sum / take as f64);
    }
    out
}

/// Index (1-based) of the smallest threshold `S_d >= dist`; distances beyond
/// every threshold clamp to the last level.
pub fn assign_level(dist: f64, thresholds: &[f64]) -> usize {
    debug_assert!(!thresholds.is_empty());
    thresholds
        .iter()
        .position(|&s| s >= dist)
        .map(|p| p + 1)
        .unwrap_or(thresholds.len())
}

/// Discrete Gaussian profile over levels centered at `d_star`:
/// `w_d = exp(-(d - d*)^2 / (2 sigma_v)) / Z` with `Z` normalizing the sum
/// to 1. The denominator is `2 * sigma_v`, not `2 * sigma_v^2`.
pub fn soft_map(d_star: usize, levels: usize, sigma_v: f64) -> SoftLabel {
    assert!(levels >= 1 && (1..=levels).contains(&d_star), "d_star must be in [1, levels]");
    assert!(sigma_v > 0.0, "sigma_v must be > 0");
    let mut weights: Vec<f64> = (1..=levels)
        .map(|d| {
            let diff = d as f64 - d_star as f64;
            (-(diff * diff) / (2.0 * sigma_v)).exp()
        })
        .collect();
    let z: f64 = weights.iter().sum();
    for w in weights.iter_mut() {
        *w /= z;
    }
    SoftLabel { weights, star_level: d_star }
}

/// Builds the `D`-level structured density map: per point, threshold its
/// top-k neighbor distance (computed at full resolution), soft-map the unit
/// mass over levels, and stamp each level's share with that level's kernel.
pub fn structured_density_map(
    a: &SceneAnnotation,
    cfg: &StructuredMapConfig,
) -> Result<StructuredDensityMap, DenseError> {
    cfg.validate()?;
    let (mh, mw) = map_dims(a.height(), a.width(), cfg.scale)?;
    let kernels: Vec<Tensor<f64>> = cfg
        .sigmas
        .iter()
        .map(|&s| gaussian_kernel(s))
        .collect::<Result<_, _>>()?;

    let mut grids: Vec<Tensor<f64>> = (0..cfg.levels).map(|_| Tensor::zeros(&[mh, mw])).collect();
    let dists = avg_topk_distance(a.points(), cfg.k_neighbors);
    for (&p, &dist) in a.points().iter().zip(&dists) {
        let star = assign_level(dist, &cfg.thresholds);
        let label = soft_map(star, cfg.levels, cfg.sigma_v);
        let (r, c) = scaled_pixel(p, cfg.scale, mh, mw);
        for ((grid, kernel), &w) in grids.iter_mut().zip(&kernels).zip(&label.weights) {
            stamp_renormalized(grid, kernel, r, c, w);
        }
    }

    let levels = grids
        .into_iter()
        .map(|values| DensityMap { values, scale: cfg.scale })
        .collect();
    Ok(StructuredDensityMap {
        levels,
        thresholds: cfg.thresholds.clone(),
        sigmas: cfg.sigmas.clone(),
    })
}

const DMAP_MAGIC: &[u8; 4] = b"DMAP";
const DMAP_VERSION: u32 = 1;

/// Writes the binary density-map format: magic `DMAP`, `u32` version = 1,
/// `u32` D/H/W, then `f32` little-endian row-major values level by level.
pub fn write_dmap(path: impl AsRef<Path>, levels: &[Tensor<f64>]) -> Result<(), DenseError> {
    assert!(!levels.is_empty());
    let (h, w) = (levels[0].shape()[0], levels[0].shape()[1]);
    for l in levels {
        assert_eq!(l.shape(), &[h, w], "all levels must share one shape");
    }
    let mut out = Vec::with_capacity(16 + 4 * levels.len() * h * w);
    out.extend_from_slice(DMAP_MAGIC);
    out.extend_from_slice(&DMAP_VERSION.to_le_bytes());
    out.extend_from_slice(&(levels.len() as u32).to_le_bytes());
    out.extend_from_slice(&(h as u32).to_le_bytes());
    out.extend_from_slice(&(w as u32).to_le_bytes());
    for l in levels {
        for &v in l.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Header of a DMAP file.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DmapHeader {
    pub version: u32,
    pub levels: u32,
    pub height: u32,
    pub width: u32,
}

/// Reads a DMAP file back; values come out as `f64` copies of the stored
/// `f32`s.
pub fn read_dmap(path: impl AsRef<Path>) -> Result<(DmapHeader, Vec<Tensor<f64>>), DenseError> {
    let mut file = fs::File::open(path)?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)?;
    read_dmap_bytes(&bytes)
}

pub fn read_dmap_bytes(bytes: &[u8]) -> Result<(DmapHeader, Vec<Tensor<f64>>), DenseError> {
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8], DenseError> {
        let s = bytes
            .get(pos..pos + n)
            .ok_or_else(|| DenseError::BadFormat("truncated".into()))?;
        pos += n;
        Ok(s)
    };
    if take(4)? != DMAP_MAGIC {
        return Err(DenseError::BadFormat("missing DMAP magic".into()));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != DMAP_VERSION {
        return Err(DenseError::BadFormat(format!("unsupported version {version}")));
    }
    let levels = u32::from_le_bytes(take(4)?.try_into().unwrap());
    let height = u32::from_le_bytes(take(4)?.try_into().unwrap());
    let width = u32::from_le_bytes(take(4)?.try_into().unwrap());
    let plane = (height as usize) * (width as usize);
    let mut grids = Vec::with_capacity(levels as usize);
    for _ in 0..levels {
        let raw = take(4 * plane)?;
        let data: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        grids.push(Tensor::from_vec(&[height as usize, width as usize], data).expect("plane size"));
    }
    Ok((DmapHeader { version, levels, height, width }, grids))
}
