//! Test-time anomaly scoring against a memory bank.
//!
//! Every patch vector of a query grid is assigned the distance to its exact
//! nearest bank vector (linear scan, no index); the image score is the
//! maximum patch score, and the pixel map is the patch-score grid upsampled
//! bilinearly to image resolution and optionally Gaussian-smoothed.
//!
//! Distances are accumulated in f64, so scaling the bank and query by a
//! power of two scales every score and map value exactly.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::bank::{MemoryBank, PatchExtractor};
use crate::error::{Error, Result};
use crate::features::{load_feature_tensor, load_image, PatchFeatureGrid};

/// How a patch's score is derived from its bank distances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScoreMode {
    /// Distance to the single nearest bank vector.
    #[default]
    Max,
    /// Mean distance to the k nearest bank vectors.
    KnnMean,
}

impl ScoreMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(ScoreMode::Max),
            "knn-mean" => Ok(ScoreMode::KnnMean),
            other => Err(Error::InvalidConfig(format!(
                "score mode '{other}' (expected max|knn-mean)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ScoreMode::Max => "max",
            ScoreMode::KnnMean => "knn-mean",
        }
    }
}

/// Scoring knobs: patch-score mode and the pixel-map smoothing width.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreConfig {
    pub mode: ScoreMode,
    /// Neighbors averaged in knn-mean mode (clamped to the bank size).
    pub knn_k: usize,
    /// Gaussian smoothing sigma in pixels; 0 disables smoothing.
    pub sigma: f64,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        ScoreConfig {
            mode: ScoreMode::Max,
            knn_k: 3,
            sigma: 4.0,
        }
    }
}

impl ScoreConfig {
    pub fn validate(&self) -> Result<()> {
        if self.knn_k == 0 {
            return Err(Error::InvalidConfig("knn-mean neighbor count must be >= 1".into()));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "smoothing sigma {} must be finite and >= 0",
                self.sigma
            )));
        }
        Ok(())
    }
}

/// Scores for one image: per-patch distances, their max, and the pixel map.
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyResult {
    /// Maximum of `patch_scores`.
    pub image_score: f64,
    /// rows x cols grid of patch scores.
    pub patch_scores: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
    pub stride_px: usize,
    /// Per-patch index of the nearest bank vector.
    pub nn_indices: Vec<u32>,
    /// height x width anomaly map at image resolution.
    pub pixel_map: Vec<f64>,
    pub height: usize,
    pub width: usize,
}

fn check_dims(grid_dim: usize, bank: &MemoryBank) -> Result<()> {
    bank.validate()?;
    if grid_dim != bank.dim {
        return Err(Error::DimensionMismatch {
            context: "query dim vs bank dim".into(),
            left: grid_dim,
            right: bank.dim,
        });
    }
    Ok(())
}

/// Exact nearest bank vector by linear scan; ties go to the smaller index.
pub fn nearest_neighbor(q: &[f32], bank: &MemoryBank) -> Result<(usize, f64)> {
    check_dims(q.len(), bank)?;
    let mut best = (0usize, f64::INFINITY);
    for i in 0..bank.len() {
        let v = bank.vector(i);
        let mut acc = 0.0f64;
        for (a, b) in q.iter().zip(v.iter()) {
            let d = *a as f64 - *b as f64;
            acc += d * d;
        }
        if acc < best.1 {
            best = (i, acc);
        }
    }
    Ok((best.0, best.1.sqrt()))
}

/// Distances to the k nearest bank vectors, ascending (ties by index).
fn knn_distances(q: &[f32], bank: &MemoryBank, k: usize) -> Vec<f64> {
    let mut all: Vec<f64> = (0..bank.len())
        .map(|i| {
            let v = bank.vector(i);
            let mut acc = 0.0f64;
            for (a, b) in q.iter().zip(v.iter()) {
                let d = *a as f64 - *b as f64;
                acc += d * d;
            }
            acc
        })
        .collect();
    all.sort_by(|a, b| a.total_cmp(b));
    all.truncate(k.min(all.len()));
    all.into_iter().map(f64::sqrt).collect()
}

/// Bilinear upsampling of a patch-score grid to pixel resolution, treating
/// each score as sitting at its patch center and clamping beyond the border
/// centers.
pub fn upsample_bilinear(
    scores: &[f64],
    rows: usize,
    cols: usize,
    stride: usize,
) -> (Vec<f64>, usize, usize) {
    let h = rows * stride;
    let w = cols * stride;
    let mut out = vec![0.0f64; h * w];
    let half = (stride as f64 - 1.0) / 2.0;
    for y in 0..h {
        let u = ((y as f64 - half) / stride as f64).clamp(0.0, (rows - 1) as f64);
        let i0 = u.floor() as usize;
        let (i0, i1, ty) = if i0 >= rows - 1 {
            (rows - 1, rows - 1, 0.0)
        } else {
            (i0, i0 + 1, u - i0 as f64)
        };
        for x in 0..w {
            let v = ((x as f64 - half) / stride as f64).clamp(0.0, (cols - 1) as f64);
            let j0 = v.floor() as usize;
            let (j0, j1, tx) = if j0 >= cols - 1 {
                (cols - 1, cols - 1, 0.0)
            } else {
                (j0, j0 + 1, v - j0 as f64)
            };
            let s00 = scores[i0 * cols + j0];
            let s01 = scores[i0 * cols + j1];
            let s10 = scores[i1 * cols + j0];
            let s11 = scores[i1 * cols + j1];
            let top = s00 * (1.0 - tx) + s01 * tx;
            let bot = s10 * (1.0 - tx) + s11 * tx;
            out[y * w + x] = top * (1.0 - ty) + bot * ty;
        }
    }
    (out, h, w)
}

/// Separable Gaussian blur with a truncated, per-position renormalized
/// kernel (radius 3 sigma). Constant maps pass through unchanged.
pub fn gaussian_smooth(map: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return map.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let weights: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();

    let pass = |src: &[f64], len_major: usize, len_minor: usize, row_major: bool| -> Vec<f64> {
        let mut dst = vec![0.0f64; src.len()];
        for a in 0..len_major {
            for b in 0..len_minor {
                let mut acc = 0.0f64;
                let mut wsum = 0.0f64;
                for (wi, off) in (-radius..=radius).enumerate() {
                    let bb = b as i64 + off;
                    if bb < 0 || bb >= len_minor as i64 {
                        continue;
                    }
                    let idx = if row_major {
                        a * len_minor + bb as usize
                    } else {
                        bb as usize * len_major + a
                    };
                    acc += weights[wi] * src[idx];
                    wsum += weights[wi];
                }
                let idx = if row_major { a * len_minor + b } else { b * len_major + a };
                dst[idx] = acc / wsum;
            }
        }
        dst
    };
    let horizontal = pass(map, h, w, true);
    pass(&horizontal, w, h, false)
}

/// Score one patch grid against the bank.
pub fn score_image(grid: &PatchFeatureGrid, bank: &MemoryBank, cfg: &ScoreConfig) -> Result<AnomalyResult> {
    cfg.validate()?;
    check_dims(grid.dim, bank)?;
    let n = grid.len();
    let per_patch: Vec<(u32, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let q = grid.vector_at(i);
            let (idx, d1) = nearest_neighbor(q, bank).expect("dims already checked");
            let score = match cfg.mode {
                ScoreMode::Max => d1,
                ScoreMode::KnnMean => {
                    let ds = knn_distances(q, bank, cfg.knn_k);
                    ds.iter().sum::<f64>() / ds.len() as f64
                }
            };
            (idx as u32, score)
        })
        .collect();
    let nn_indices: Vec<u32> = per_patch.iter().map(|p| p.0).collect();
    let patch_scores: Vec<f64> = per_patch.iter().map(|p| p.1).collect();
    let image_score = patch_scores.iter().copied().fold(0.0f64, f64::max);
    let (raw_map, height, width) =
        upsample_bilinear(&patch_scores, grid.rows, grid.cols, grid.stride_px);
    let pixel_map = gaussian_smooth(&raw_map, height, width, cfg.sigma);
    Ok(AnomalyResult {
        image_score,
        patch_scores,
        rows: grid.rows,
        cols: grid.cols,
        stride_px: grid.stride_px,
        nn_indices,
        pixel_map,
        height,
        width,
    })
}

// ---------------------------------------------------------------------------
// Dataset scoring
// ---------------------------------------------------------------------------

/// One scored test image with its label and (optional) ground-truth mask.
#[derive(Debug, Clone)]
pub struct ScoredImage {
    /// Path relative to the test directory, e.g. "scratch/003.png".
    pub id: String,
    /// true = anomalous (any class directory other than "good").
    pub label: bool,
    pub result: AnomalyResult,
    /// Per-pixel ground truth; all-false for good images, None when an
    /// anomalous image has no mask file (excluded from pixel metrics).
    pub mask: Option<Vec<bool>>,
    pub mask_missing: bool,
}

fn is_image_ext(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("png") | Some("ppm")
    )
}

fn load_mask(path: &Path, height: usize, width: usize) -> Result<Vec<bool>> {
    let img = load_image(path)?;
    if img.height != height || img.width != width {
        return Err(Error::MetricInput(format!(
            "mask {} is {}x{}, image map is {height}x{width}",
            path.display(),
            img.height,
            img.width
        )));
    }
    Ok((0..height * width)
        .map(|i| {
            let mut s = 0.0f32;
            for c in 0..img.channels {
                s += img.data[i * img.channels + c];
            }
            s / img.channels as f32 > 0.5
        })
        .collect())
}

fn list_sorted(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(format!("read {}", dir.display()), e))? {
        let entry = entry.map_err(|e| Error::io(format!("read {}", dir.display()), e))?;
        out.push(entry.path());
    }
    out.sort();
    Ok(out)
}

fn list_test_entries(
    category_dir: &Path,
    extractor: &PatchExtractor,
) -> Result<Vec<(String, PathBuf, bool)>> {
    let test_dir = category_dir.join("test");
    if !test_dir.is_dir() {
        return Err(Error::MissingFile(test_dir));
    }
    let mut entries: Vec<(String, PathBuf, bool)> = Vec::new();
    for class_dir in list_sorted(&test_dir)? {
        if !class_dir.is_dir() {
            continue;
        }
        let class = class_dir
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .to_string();
        let label = class != "good";
        for file in list_sorted(&class_dir)? {
            let wanted = if extractor.expects_feature_files() {
                file.extension().and_then(|e| e.to_str()) == Some("gcft")
            } else {
                is_image_ext(&file)
            };
            if wanted {
                let name = file.file_name().and_then(|n| n.to_str()).unwrap_or_default();
                entries.push((format!("{class}/{name}"), file.clone(), label));
            }
        }
    }
    if entries.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    Ok(entries)
}

fn load_entry_grid(path: &Path, extractor: &PatchExtractor) -> Result<PatchFeatureGrid> {
    if extractor.expects_feature_files() {
        load_feature_tensor(path)
    } else {
        let img = load_image(path)?;
        extractor.extract(&img)
    }
}

/// Extract every test grid in path order, e.g. for timing runs.
pub fn load_test_grids(
    category_dir: &Path,
    extractor: &PatchExtractor,
) -> Result<Vec<PatchFeatureGrid>> {
    let entries = list_test_entries(category_dir, extractor)?;
    entries
        .par_iter()
        .map(|(_, path, _)| load_entry_grid(path, extractor))
        .collect()
}

/// Walk an MVTec-style category: `test/<class>/*` scored in path order,
/// labels from the class directory ("good" = normal), masks paired from
/// `ground_truth/<class>/<stem>_mask.png` when present.
///
/// The extractor decides the accepted inputs: the external-feature extractor
/// reads `.gcft` grids, every other extractor reads images.
pub fn score_dataset(
    category_dir: &Path,
    bank: &MemoryBank,
    extractor: &PatchExtractor,
    cfg: &ScoreConfig,
) -> Result<Vec<ScoredImage>> {
    let entries = list_test_entries(category_dir, extractor)?;

    let scored: Vec<ScoredImage> = entries
        .par_iter()
        .map(|(id, path, label)| -> Result<ScoredImage> {
            let grid = load_entry_grid(path, extractor)?;
            let result = score_image(&grid, bank, cfg)?;

            let (mask, mask_missing) = if !*label {
                (Some(vec![false; result.height * result.width]), false)
            } else {
                let class = id.split('/').next().unwrap_or_default();
                let stem = Path::new(id)
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .unwrap_or_default();
                let mask_path = category_dir
                    .join("ground_truth")
                    .join(class)
                    .join(format!("{stem}_mask.png"));
                if mask_path.exists() {
                    (Some(load_mask(&mask_path, result.height, result.width)?), false)
                } else {
                    (None, true)
                }
            };
            Ok(ScoredImage {
                id: id.clone(),
                label: *label,
                result,
                mask,
                mask_missing,
            })
        })
        .collect::<Result<_>>()?;
    Ok(scored)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::{apply_dihedral, AugmentSpec, Dihedral};
    use crate::bank::{
        build_bank, resolve_extractor, BuildMeta, CoresetConfig, MemoryBank, Provenance, Sample,
        WeightSource,
    };
    use crate::features::{extract_raw, extract_toy, write_image, ExtractorSpec, ImageTensor};
    use crate::graph::RelativeSign;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn bank_of(vectors: &[&[f32]]) -> MemoryBank {
        let dim = vectors[0].len();
        MemoryBank {
            dim,
            vectors: vectors.iter().flat_map(|v| v.iter().copied()).collect(),
            provenance: (0..vectors.len())
                .map(|i| Provenance {
                    image_id: i as u32,
                    patch_row: 0,
                    patch_col: 0,
                    augment_id: 0,
                })
                .collect(),
            build_meta: BuildMeta::default(),
        }
    }

    fn no_smoothing() -> ScoreConfig {
        ScoreConfig {
            sigma: 0.0,
            ..ScoreConfig::default()
        }
    }

    #[test]
    fn nearest_neighbor_hand_cases() {
        let bank = bank_of(&[&[0.0, 0.0], &[3.0, 4.0]]);
        let (idx, d) = nearest_neighbor(&[0.0, 1.0], &bank).unwrap();
        assert_eq!((idx, d), (0, 1.0));
        let (idx, d) = nearest_neighbor(&[3.0, 4.0], &bank).unwrap();
        assert_eq!((idx, d), (1, 0.0));
        let single = bank_of(&[&[5.0]]);
        assert_eq!(nearest_neighbor(&[9.0], &single).unwrap().0, 0);
        // tie resolves to the smaller index
        let tied = bank_of(&[&[1.0], &[1.0]]);
        assert_eq!(nearest_neighbor(&[1.0], &tied).unwrap(), (0, 0.0));
    }

    #[test]
    fn nearest_neighbor_errors() {
        let bank = bank_of(&[&[0.0, 0.0]]);
        assert!(matches!(
            nearest_neighbor(&[0.0], &bank),
            Err(Error::DimensionMismatch { .. })
        ));
        let empty = MemoryBank {
            dim: 1,
            vectors: vec![],
            provenance: vec![],
            build_meta: BuildMeta::default(),
        };
        assert!(matches!(nearest_neighbor(&[0.0], &empty), Err(Error::EmptyBank)));
    }

    #[test]
    fn score_image_max_rule_and_zero_case() {
        let bank = bank_of(&[&[0.0], &[10.0]]);
        // patches at 1 and 5: NN distances 1 and 5
        let grid = PatchFeatureGrid::new(1, 2, 1, 4, vec![1.0, 5.0]).unwrap();
        let r = score_image(&grid, &bank, &no_smoothing()).unwrap();
        assert_eq!(r.patch_scores, vec![1.0, 5.0]);
        assert_eq!(r.image_score, 5.0);
        assert_eq!((r.height, r.width), (4, 8));

        let grid = PatchFeatureGrid::new(1, 2, 1, 4, vec![0.0, 10.0]).unwrap();
        for cfg in [no_smoothing(), ScoreConfig::default()] {
            let r = score_image(&grid, &bank, &cfg).unwrap();
            assert_eq!(r.image_score, 0.0);
            assert!(r.pixel_map.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn knn_mean_mode() {
        let bank = bank_of(&[&[0.0], &[2.0], &[10.0]]);
        let grid = PatchFeatureGrid::new(1, 1, 1, 2, vec![0.0]).unwrap();
        let cfg = ScoreConfig {
            mode: ScoreMode::KnnMean,
            knn_k: 2,
            sigma: 0.0,
        };
        let r = score_image(&grid, &bank, &cfg).unwrap();
        assert_eq!(r.patch_scores, vec![1.0]); // (0 + 2) / 2
        assert_eq!(r.nn_indices, vec![0]); // 1-NN index regardless of mode
        // k larger than the bank clamps
        let cfg = ScoreConfig {
            mode: ScoreMode::KnnMean,
            knn_k: 9,
            sigma: 0.0,
        };
        let r = score_image(&grid, &bank, &cfg).unwrap();
        assert_eq!(r.patch_scores, vec![4.0]); // (0 + 2 + 10) / 3
    }

    #[test]
    fn upsampled_map_peaks_at_patch_maximum() {
        let mut rng = ChaCha12Rng::seed_from_u64(107);
        for round in 0..50usize {
            let rows = rng.random_range(2..5);
            let cols = rng.random_range(2..5);
            let stride = [1usize, 2, 3, 4][round % 4];
            let scores: Vec<f64> = (0..rows * cols).map(|_| rng.random::<f64>()).collect();
            let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let (map, h, w) = upsample_bilinear(&scores, rows, cols, stride);
            assert!(h == rows * stride && w == cols * stride);
            // interpolation is a convex combination, so no pixel overshoots
            for &v in &map {
                assert!(v <= m + 1e-12, "pixel {v} above patch max {m}");
            }
            // odd strides center each cell on a pixel, which copies its value
            if stride % 2 == 1 {
                let arg = (0..scores.len())
                    .max_by(|&a, &b| scores[a].total_cmp(&scores[b]))
                    .unwrap();
                let (pr, pc) = (arg / cols, arg % cols);
                let cy = pr * stride + (stride - 1) / 2;
                let cx = pc * stride + (stride - 1) / 2;
                assert_eq!(map[cy * w + cx], m);
            }
        }
    }

    #[test]
    fn smoothing_preserves_constants() {
        let map = vec![0.75f64; 6 * 5];
        let out = gaussian_smooth(&map, 6, 5, 2.0);
        for v in out {
            assert!((v - 0.75).abs() < 1e-12);
        }
    }

    #[test]
    fn scores_scale_exactly_with_power_of_two() {
        let mut rng = ChaCha12Rng::seed_from_u64(109);
        let dim = 4;
        let bank_vecs: Vec<f32> = (0..6 * dim).map(|_| rng.random::<f32>() - 0.5).collect();
        let bank = MemoryBank {
            dim,
            vectors: bank_vecs.clone(),
            provenance: (0..6)
                .map(|i| Provenance {
                    image_id: i,
                    patch_row: 0,
                    patch_col: 0,
                    augment_id: 0,
                })
                .collect(),
            build_meta: BuildMeta::default(),
        };
        let feats: Vec<f32> = (0..4 * dim).map(|_| rng.random::<f32>() - 0.5).collect();
        let grid = PatchFeatureGrid::new(2, 2, dim, 2, feats.clone()).unwrap();

        let bank2 = MemoryBank {
            vectors: bank_vecs.iter().map(|v| v * 2.0).collect(),
            ..bank.clone()
        };
        let grid2 =
            PatchFeatureGrid::new(2, 2, dim, 2, feats.iter().map(|v| v * 2.0).collect()).unwrap();

        let a = score_image(&grid, &bank, &ScoreConfig::default()).unwrap();
        let b = score_image(&grid2, &bank2, &ScoreConfig::default()).unwrap();
        assert_eq!(b.image_score.to_bits(), (2.0 * a.image_score).to_bits());
        for (x, y) in a.patch_scores.iter().zip(b.patch_scores.iter()) {
            assert_eq!(y.to_bits(), (2.0 * x).to_bits());
        }
        for (x, y) in a.pixel_map.iter().zip(b.pixel_map.iter()) {
            assert_eq!(y.to_bits(), (2.0 * x).to_bits());
        }
        assert_eq!(a.nn_indices, b.nn_indices);
        // ranking under an arbitrary positive scale is unchanged
        let bank3 = MemoryBank {
            vectors: bank_vecs.iter().map(|v| v * 3.0).collect(),
            ..bank.clone()
        };
        let grid3 =
            PatchFeatureGrid::new(2, 2, dim, 2, feats.iter().map(|v| v * 3.0).collect()).unwrap();
        let c = score_image(&grid3, &bank3, &ScoreConfig::default()).unwrap();
        let order = |r: &AnomalyResult| {
            let mut idx: Vec<usize> = (0..r.patch_scores.len()).collect();
            idx.sort_by(|&i, &j| r.patch_scores[i].total_cmp(&r.patch_scores[j]));
            idx
        };
        assert_eq!(order(&a), order(&c));
    }

    #[test]
    fn superset_bank_never_raises_scores() {
        let mut rng = ChaCha12Rng::seed_from_u64(113);
        for _ in 0..20 {
            let dim = rng.random_range(1..4);
            let small_n = rng.random_range(1..5);
            let extra_n = rng.random_range(1..5);
            let vecs: Vec<f32> = (0..(small_n + extra_n) * dim)
                .map(|_| rng.random::<f32>())
                .collect();
            let small = bank_of(
                &(0..small_n)
                    .map(|i| &vecs[i * dim..(i + 1) * dim])
                    .collect::<Vec<_>>(),
            );
            let big = bank_of(
                &(0..small_n + extra_n)
                    .map(|i| &vecs[i * dim..(i + 1) * dim])
                    .collect::<Vec<_>>(),
            );
            let feats: Vec<f32> = (0..6 * dim).map(|_| rng.random::<f32>()).collect();
            let grid = PatchFeatureGrid::new(2, 3, dim, 2, feats).unwrap();
            let a = score_image(&grid, &small, &no_smoothing()).unwrap();
            let b = score_image(&grid, &big, &no_smoothing()).unwrap();
            for (x, y) in a.patch_scores.iter().zip(b.patch_scores.iter()) {
                assert!(y <= x);
            }
            assert!(b.image_score <= a.image_score);
        }
    }

    fn random_image(rng: &mut ChaCha12Rng, h: usize, w: usize, c: usize) -> ImageTensor {
        let data: Vec<f32> = (0..h * w * c)
            .map(|_| (rng.random_range(0..=255u32) as f32) / 255.0)
            .collect();
        ImageTensor::new(h, w, c, data).unwrap()
    }

    #[test]
    fn training_image_self_score_is_zero() {
        let mut rng = ChaCha12Rng::seed_from_u64(127);
        let img = random_image(&mut rng, 8, 8, 3);
        let extractor = resolve_extractor(
            &ExtractorSpec::toy(4),
            &WeightSource::default(),
            RelativeSign::default(),
        )
        .unwrap();
        let cfg = CoresetConfig {
            ratio: 1.0,
            ..CoresetConfig::default()
        };
        let bank = build_bank(
            &[Sample::Image(img.clone())],
            &extractor,
            &AugmentSpec::none(),
            &cfg,
        )
        .unwrap();
        let grid = extract_toy(&img, 4).unwrap();
        let r = score_image(&grid, &bank, &ScoreConfig::default()).unwrap();
        assert_eq!(r.image_score, 0.0);
    }

    #[test]
    fn rotation_closure_under_raw_and_toy() {
        let mut rng = ChaCha12Rng::seed_from_u64(131);
        let img = random_image(&mut rng, 4, 4, 1);
        let rotated = apply_dihedral(&img, Dihedral::Rot90);
        let cfg = CoresetConfig {
            ratio: 1.0,
            ..CoresetConfig::default()
        };
        let raw = resolve_extractor(
            &ExtractorSpec::raw(2),
            &WeightSource::default(),
            RelativeSign::default(),
        )
        .unwrap();
        // raw features without augmentation notice the rotation
        let plain_bank =
            build_bank(&[Sample::Image(img.clone())], &raw, &AugmentSpec::none(), &cfg).unwrap();
        let r = score_image(&extract_raw(&rotated, 2).unwrap(), &plain_bank, &no_smoothing())
            .unwrap();
        assert!(r.image_score > 0.0, "patch multiset is not rotation-closed");
        // a rotation-augmented bank covers the rotation exactly
        let aug_bank = build_bank(
            &[Sample::Image(img.clone())],
            &raw,
            &AugmentSpec::full_rotation(),
            &cfg,
        )
        .unwrap();
        let r = score_image(&extract_raw(&rotated, 2).unwrap(), &aug_bank, &no_smoothing())
            .unwrap();
        assert_eq!(r.image_score, 0.0);
        // the isometric extractor never notices, even without augmentation
        let toy = resolve_extractor(
            &ExtractorSpec::toy(2),
            &WeightSource::default(),
            RelativeSign::default(),
        )
        .unwrap();
        let toy_bank =
            build_bank(&[Sample::Image(img.clone())], &toy, &AugmentSpec::none(), &cfg).unwrap();
        let r = score_image(&extract_toy(&rotated, 2).unwrap(), &toy_bank, &no_smoothing())
            .unwrap();
        assert_eq!(r.image_score, 0.0);
    }

    #[test]
    fn dataset_walk_orders_labels_and_masks() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        let mut rng = ChaCha12Rng::seed_from_u64(137);
        for sub in [
            "train/good",
            "test/good",
            "test/scratch",
            "ground_truth/scratch",
        ] {
            fs::create_dir_all(root.join(sub)).unwrap();
        }
        let train = random_image(&mut rng, 4, 4, 3);
        write_image(&train, &root.join("train/good/000.png")).unwrap();
        write_image(&train, &root.join("test/good/000.png")).unwrap();
        write_image(&random_image(&mut rng, 4, 4, 3), &root.join("test/good/001.png")).unwrap();
        write_image(
            &random_image(&mut rng, 4, 4, 3),
            &root.join("test/scratch/000.png"),
        )
        .unwrap();
        write_image(
            &random_image(&mut rng, 4, 4, 3),
            &root.join("test/scratch/001.png"),
        )
        .unwrap();
        // mask only for scratch/000
        let mut mask = ImageTensor::constant(4, 4, 1, 0.0);
        mask.set(0, 0, 0, 1.0);
        write_image(&mask, &root.join("ground_truth/scratch/000_mask.png")).unwrap();

        let extractor = resolve_extractor(
            &ExtractorSpec::toy(2),
            &WeightSource::default(),
            RelativeSign::default(),
        )
        .unwrap();
        let cfg = CoresetConfig {
            ratio: 1.0,
            ..CoresetConfig::default()
        };
        let bank = build_bank(
            &[Sample::Image(train)],
            &extractor,
            &AugmentSpec::none(),
            &cfg,
        )
        .unwrap();
        let scored = score_dataset(root, &bank, &extractor, &no_smoothing()).unwrap();
        let ids: Vec<&str> = scored.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(
            ids,
            vec!["good/000.png", "good/001.png", "scratch/000.png", "scratch/001.png"]
        );
        assert_eq!(
            scored.iter().map(|s| s.label).collect::<Vec<_>>(),
            vec![false, false, true, true]
        );
        assert_eq!(scored[0].result.image_score, 0.0); // the training image
        assert!(scored[0].mask.as_ref().unwrap().iter().all(|&b| !b));
        let m = scored[2].mask.as_ref().unwrap();
        assert!(m[0] && m.iter().skip(1).all(|&b| !b));
        assert!(!scored[2].mask_missing);
        assert!(scored[3].mask.is_none() && scored[3].mask_missing);
    }

    #[test]
    fn dataset_walk_errors() {
        let dir = tempfile::tempdir().unwrap();
        let extractor = resolve_extractor(
            &ExtractorSpec::toy(2),
            &WeightSource::default(),
            RelativeSign::default(),
        )
        .unwrap();
        let bank = bank_of(&[&[0.0; 8]]);
        assert!(matches!(
            score_dataset(dir.path(), &bank, &extractor, &no_smoothing()),
            Err(Error::MissingFile(_))
        ));
        fs::create_dir_all(dir.path().join("test/good")).unwrap();
        assert!(matches!(
            score_dataset(dir.path(), &bank, &extractor, &no_smoothing()),
            Err(Error::EmptyTestSet)
        ));
    }
}
