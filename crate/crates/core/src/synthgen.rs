//! Deterministic synthetic crowd scenes with controllable inhomogeneous
//! density.
//!
//! Head centers are sampled with a row-dependent density so the top of the
//! image is denser than the bottom (people far from the camera sit high in
//! the frame), and rendered head radii shrink toward the top accordingly.
//! Everything is a pure function of the config, so identical configs produce
//! bitwise-identical scenes and dataset files.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::annot::{save_annotation, SceneAnnotation};
use crate::numcore::Tensor;
use crate::pgm::write_pgm;

#[derive(Error, Debug)]
pub enum SynthError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("could not place {requested} heads without pixel collisions (placed {placed})")]
    InfeasibleConfig { requested: usize, placed: usize },
    #[error("dataset i/o failed: {0}")]
    Io(#[from] std::io::Error),
}

/// Knobs of the scene generator.
///
/// `perspective_strength` controls how strongly head spacing and head radius
/// shrink from the bottom row to the top row; 0 means uniform.
/// `head_radius_range` is sampled per head and applies at the bottom row.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    pub count_range: (usize, usize),
    pub perspective_strength: f64,
    pub head_radius_range: (f64, f64),
    pub background_noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            height: 64,
            width: 64,
            count_range: (20, 120),
            perspective_strength: 2.0,
            head_radius_range: (2.0, 5.0),
            background_noise_sigma: 0.02,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.height == 0 || self.width == 0 {
            return Err(SynthError::InvalidConfig("image dims must be positive".into()));
        }
        if self.count_range.0 > self.count_range.1 {
            return Err(SynthError::InvalidConfig("count range min > max".into()));
        }
        if self.head_radius_range.0 > self.head_radius_range.1 || self.head_radius_range.0 <= 0.0 {
            return Err(SynthError::InvalidConfig("bad head radius range".into()));
        }
        if self.perspective_strength < 0.0 || self.background_noise_sigma < 0.0 {
            return Err(SynthError::InvalidConfig("strength and noise must be >= 0".into()));
        }
        Ok(())
    }
}

/// A rendered scene and its ground truth: one annotation point per head.
#[derive(Clone, Debug)]
pub struct SynthScene {
    /// Grayscale intensities in `[0, 1]`, shape `(height, width)`.
    pub image: Tensor<f64>,
    pub annotation: SceneAnnotation,
}

// Row-density exponent per unit of perspective strength. At strength 2 the
// expected top-quarter/bottom-quarter neighbor-distance ratio is ~e^{9/8}.
const ROW_DENSITY_GAIN: f64 = 1.5;

/// Vertical position in [0, 1] (0 = top) with density proportional to
/// `exp(-gamma * u)`, via the inverse CDF.
fn sample_row_unit(rng: &mut ChaCha8Rng, gamma: f64) -> f64 {
    let t: f64 = rng.gen();
    if gamma < 1e-12 {
        t
    } else {
        -(1.0 - t * (1.0 - (-gamma).exp())).ln() / gamma
    }
}

fn head_radius(base: f64, u: f64, strength: f64) -> f64 {
    (base / (1.0 + strength * (1.0 - u))).max(0.75)
}

/// Generates one scene, deterministically in `cfg.seed`.
pub fn generate_scene(cfg: &SynthConfig) -> Result<SynthScene, SynthError> {
    generate_scene_with_id(cfg, &format!("synth{}", cfg.seed))
}

pub fn generate_scene_with_id(cfg: &SynthConfig, scene_id: &str) -> Result<SynthScene, SynthError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let count = rng.gen_range(cfg.count_range.0..=cfg.count_range.1);
    let gamma = ROW_DENSITY_GAIN * cfg.perspective_strength;
    let (h, w) = (cfg.height, cfg.width);

    // Rejection-sample continuous centers in [0, dim-1] so no two heads share
    // a rounded pixel; coordinates stay flip-safe at the right/bottom edge.
    let mut taken = HashSet::with_capacity(count);
    let mut points: Vec<(f64, f64)> = Vec::with_capacity(count);
    let max_attempts = 100 * count;
    let mut attempts = 0;
    while points.len() < count && attempts < max_attempts {
        attempts += 1;
        let u = sample_row_unit(&mut rng, gamma);
        let row = u * (h - 1) as f64;
        let col = rng.gen::<f64>() * (w - 1) as f64;
        if taken.insert((row.round() as i64, col.round() as i64)) {
            points.push((row, col));
        }
    }
    if points.len() < count {
        return Err(SynthError::InfeasibleConfig {
            requested: count,
            placed: points.len(),
        });
    }

    // Shaded disks (bright center, dark rim) on a mid-gray background;
    // max-blend keeps overlaps order-independent.
    let mut image = vec![0.5f64; h * w];
    for &(row, col) in &points {
        let base: f64 = rng.gen_range(cfg.head_radius_range.0..=cfg.head_radius_range.1);
        let u = row / (h - 1).max(1) as f64;
        let r = head_radius(base, u, cfg.perspective_strength);
        let (i0, i1) = (
            ((row - r).floor().max(0.0)) as usize,
            ((row + r).ceil() as usize).min(h - 1),
        );
        let (j0, j1) = (
            ((col - r).floor().max(0.0)) as usize,
            ((col + r).ceil() as usize).min(w - 1),
        );
        for i in i0..=i1 {
            for j in j0..=j1 {
                let d = ((i as f64 - row).powi(2) + (j as f64 - col).powi(2)).sqrt();
                if d <= r {
                    let v = 0.95 - 0.55 * d / r;
                    let px = &mut image[i * w + j];
                    if v > *px {
                        *px = v;
                    }
                }
            }
        }
    }

    if cfg.background_noise_sigma > 0.0 {
        let normal = Normal::new(0.0, cfg.background_noise_sigma)
            .map_err(|e| SynthError::InvalidConfig(e.to_string()))?;
        for px in image.iter_mut() {
            *px += normal.sample(&mut rng);
        }
    }
    for px in image.iter_mut() {
        *px = px.clamp(0.0, 1.0);
    }

    let annotation = SceneAnnotation::new(scene_id, h, w, points)
        .expect("generator respects annotation invariants");
    let image = Tensor::from_vec(&[h, w], image).expect("image size");
    Ok(SynthScene { image, annotation })
}

/// One dataset entry: paths are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub image_path: String,
    pub annot_path: String,
    pub count: usize,
}

/// Index of a generated dataset: `image_path annot_path count` per line.
#[derive(Clone, Debug)]
pub struct Manifest {
    base_dir: PathBuf,
    entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn image_path(&self, i: usize) -> PathBuf {
        self.base_dir.join(&self.entries[i].image_path)
    }

    pub fn annot_path(&self, i: usize) -> PathBuf {
        self.base_dir.join(&self.entries[i].annot_path)
    }
}

/// Loads a manifest; relative entry paths resolve against the manifest's
/// parent directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest, SynthError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let base_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [img, ann, count] = fields.as_slice() else {
            return Err(SynthError::InvalidConfig(format!(
                "manifest line {}: expected `image annot count`",
                lineno + 1
            )));
        };
        let count: usize = count.parse().map_err(|_| {
            SynthError::InvalidConfig(format!("manifest line {}: bad count", lineno + 1))
        })?;
        entries.push(ManifestEntry {
            image_path: img.to_string(),
            annot_path: ann.to_string(),
            count,
        });
    }
    Ok(Manifest { base_dir, entries })
}

/// Writes `n_scenes` scenes (PGM image + annotation text) and a manifest into
/// `out_dir`; scene `i` uses seed `cfg.seed + i`. Re-running with the same
/// config produces identical bytes.
pub fn generate_dataset(
    cfg: &SynthConfig,
    n_scenes: usize,
    out_dir: impl AsRef<Path>,
) -> Result<Manifest, SynthError> {
    if n_scenes == 0 {
        return Err(SynthError::InvalidConfig("n_scenes must be >= 1".into()));
    }
    cfg.validate()?;
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir)?;

    let mut entries = Vec::with_capacity(n_scenes);
    let mut manifest_text = Vec::new();
    for i in 0..n_scenes {
        let scene_cfg = SynthConfig {
            seed: cfg.seed.wrapping_add(i as u64),
            ..cfg.clone()
        };
        let scene_id = format!("scene_{i:04}");
        let scene = generate_scene_with_id(&scene_cfg, &scene_id)?;
        let image_path = format!("{scene_id}.pgm");
        let annot_path = format!("{scene_id}.txt");
        write_pgm(out_dir.join(&image_path), &scene.image)?;
        save_annotation(&scene.annotation, out_dir.join(&annot_path))?;
        let count = scene.annotation.count();
        writeln!(manifest_text, "{image_path} {annot_path} {count}")?;
        entries.push(ManifestEntry { image_path, annot_path, count });
    }
    fs::write(out_dir.join("manifest.txt"), manifest_text)?;
    Ok(Manifest {
        base_dir: out_dir.to_path_buf(),
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::densegen::avg_topk_distance;

    #[test]
    fn determinism_bitwise() {
        let cfg = SynthConfig { seed: 7, ..Default::default() };
        let a = generate_scene(&cfg).unwrap();
        let b = generate_scene(&cfg).unwrap();
        assert_eq!(a.image.data(), b.image.data());
        assert_eq!(a.annotation, b.annotation);
    }

    #[test]
    fn count_in_range_and_matches_annotation() {
        for seed in 0..5 {
            let cfg = SynthConfig { seed, count_range: (30, 40), ..Default::default() };
            let s = generate_scene(&cfg).unwrap();
            assert!((30..=40).contains(&s.annotation.count()));
        }
    }

    #[test]
    fn infeasible_count_errors() {
        let cfg = SynthConfig {
            height: 4,
            width: 4,
            count_range: (30, 30),
            perspective_strength: 0.0,
            head_radius_range: (1.0, 1.0),
            background_noise_sigma: 0.0,
            seed: 1,
        };
        assert!(matches!(
            generate_scene(&cfg),
            Err(SynthError::InfeasibleConfig { .. })
        ));
    }

    /// Mean avg-top-5 distance over points in rows [r0, r1).
    fn band_mean_dist(scene: &SynthScene, r0: f64, r1: f64) -> f64 {
        let dists = avg_topk_distance(scene.annotation.points(), 5);
        let mut acc = 0.0;
        let mut n = 0usize;
        for (p, d) in scene.annotation.points().iter().zip(&dists) {
            if p.0 >= r0 && p.0 < r1 && d.is_finite() {
                acc += d;
                n += 1;
            }
        }
        assert!(n > 0, "no points in band {r0}..{r1}");
        acc / n as f64
    }

    #[test]
    fn zero_strength_is_vertically_homogeneous() {
        // ratio of top-half to bottom-half mean top-5 distance near 1
        let mut ratios = Vec::new();
        for seed in 0..20 {
            let cfg = SynthConfig {
                height: 128,
                width: 128,
                count_range: (100, 100),
                perspective_strength: 0.0,
                background_noise_sigma: 0.0,
                seed,
                ..Default::default()
            };
            let s = generate_scene(&cfg).unwrap();
            ratios.push(band_mean_dist(&s, 0.0, 64.0) / band_mean_dist(&s, 64.0, 128.0));
        }
        let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
        assert!(
            (0.8..=1.25).contains(&mean),
            "top/bottom distance ratio {mean} outside [0.8, 1.25]"
        );
    }

    #[test]
    fn strong_perspective_compresses_top_quarter() {
        // top-quarter mean top-5 distance < half of bottom-quarter mean
        let mut top = 0.0;
        let mut bottom = 0.0;
        for seed in 100..120 {
            let cfg = SynthConfig {
                height: 128,
                width: 128,
                count_range: (300, 300),
                perspective_strength: 2.0,
                background_noise_sigma: 0.0,
                seed,
                ..Default::default()
            };
            let s = generate_scene(&cfg).unwrap();
            top += band_mean_dist(&s, 0.0, 32.0);
            bottom += band_mean_dist(&s, 96.0, 128.0);
        }
        assert!(
            top < 0.5 * bottom,
            "top quarter {top} not < half of bottom quarter {bottom}"
        );
    }

    #[test]
    fn per_band_distance_nondecreasing_top_to_bottom() {
        // sign test over 20 seeds: denser rows at the top mean the per-band
        // mean neighbor distance grows from top to bottom in expectation
        let mut wins = 0;
        let n_seeds = 20;
        for seed in 200..200 + n_seeds {
            let cfg = SynthConfig {
                height: 128,
                width: 128,
                count_range: (250, 250),
                perspective_strength: 1.5,
                background_noise_sigma: 0.0,
                seed,
                ..Default::default()
            };
            let s = generate_scene(&cfg).unwrap();
            let bands: Vec<f64> = (0..4)
                .map(|b| band_mean_dist(&s, b as f64 * 32.0, (b + 1) as f64 * 32.0))
                .collect();
            if bands.windows(2).all(|p| p[0] <= p[1]) {
                wins += 1;
            }
        }
        assert!(wins >= 17, "monotone band ordering held for only {wins}/{n_seeds} seeds");
    }

    #[test]
    fn dataset_round_trip_and_determinism() {
        let cfg = SynthConfig {
            count_range: (5, 15),
            seed: 42,
            ..Default::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let d1 = dir.path().join("a");
        let d2 = dir.path().join("b");
        let m1 = generate_dataset(&cfg, 3, &d1).unwrap();
        let m2 = generate_dataset(&cfg, 3, &d2).unwrap();
        assert_eq!(m1.len(), 3);
        assert_eq!(m1.entries(), m2.entries());
        for i in 0..3 {
            assert_eq!(
                fs::read(m1.image_path(i)).unwrap(),
                fs::read(m2.image_path(i)).unwrap()
            );
            assert_eq!(
                fs::read(m1.annot_path(i)).unwrap(),
                fs::read(m2.annot_path(i)).unwrap()
            );
            // manifest count matches the annotation file
            let a = crate::annot::load_annotation(m1.annot_path(i)).unwrap();
            assert_eq!(a.count(), m1.entries()[i].count);
            assert!((cfg.count_range.0..=cfg.count_range.1).contains(&a.count()));
        }
        let reloaded = load_manifest(d1.join("manifest.txt")).unwrap();
        assert_eq!(reloaded.entries(), m1.entries());
    }
}
