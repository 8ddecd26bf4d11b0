//! Deterministic synthetic datasets with certified anomaly margins.
//!
//! Images are grids of square motif patches. Normal motifs draw their pixels
//! from a low band, anomaly motifs from the same band shifted upward, so the
//! isometric patch features of any anomaly stay far from every normal motif.
//! The achieved margin is not assumed: after generation the generator
//! measures it exhaustively and rejects the draw if it falls below the
//! requested bound.
//!
//! With `rotate_test` the normal test images are rotated copies of training
//! images. The generator then also certifies the rotation margin: the
//! smallest raw-pixel score any rotated normal receives against the full
//! training patch pool. Rotation-invariant features score those images zero
//! while raw features score them at least that margin.

use std::fs;
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{apply_dihedral, Dihedral};
use crate::error::{Error, Result};
use crate::features::{extract_raw, extract_toy, write_image, ImageTensor};

const NORMAL_BAND_LO: u32 = 13;
const NORMAL_BAND_HI: u32 = 140;
const MAX_ATTEMPTS: u32 = 32;

/// Generation parameters. `margin` is the minimum accepted distance between
/// anomaly and normal motifs under the isometric patch features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    /// Image side in pixels; must be divisible by 32 and by `patch_px`.
    pub image_px: usize,
    pub patch_px: usize,
    pub motif_count: usize,
    pub anomaly_motifs: usize,
    pub train_images: usize,
    pub test_normals: usize,
    pub test_anomalies: usize,
    /// Side of the replaced cell block in anomalous images; 0 keeps the
    /// image normal (it is filed under test/good with no mask).
    pub anomaly_block_cells: usize,
    /// Rotate normal test images by 90/180/270 degrees instead of drawing
    /// fresh tilings.
    pub rotate_test: bool,
    /// Apply a random dihedral transform to every placed cell.
    pub cell_transforms: bool,
    /// Pixel-value offset of the anomaly band above the normal band.
    pub anomaly_shift: u32,
    /// Test tilings draw their motifs from a per-image subset of this size;
    /// None uses the full motif set.
    pub motifs_per_image: Option<usize>,
    pub margin: f64,
    pub category: String,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            seed: 0,
            image_px: 64,
            patch_px: 8,
            motif_count: 8,
            anomaly_motifs: 2,
            train_images: 4,
            test_normals: 8,
            test_anomalies: 8,
            anomaly_block_cells: 2,
            rotate_test: false,
            cell_transforms: true,
            anomaly_shift: 100,
            motifs_per_image: None,
            margin: 0.25,
            category: "synthcat".into(),
        }
    }
}

impl SynthSpec {
    pub fn cells_per_side(&self) -> usize {
        self.image_px / self.patch_px
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |detail: String| Err(Error::InvalidSynthSpec(detail));
        if self.image_px == 0 || !self.image_px.is_multiple_of(32) {
            return fail(format!("image_px {} must be a positive multiple of 32", self.image_px));
        }
        if self.patch_px == 0 || !self.image_px.is_multiple_of(self.patch_px) {
            return fail(format!(
                "patch_px {} must divide image_px {}",
                self.patch_px, self.image_px
            ));
        }
        let cells = self.cells_per_side() * self.cells_per_side();
        if self.motif_count == 0 || self.motif_count > cells {
            return fail(format!(
                "motif_count {} must lie in 1..={cells} so one training image can cover every motif",
                self.motif_count
            ));
        }
        if self.train_images == 0 {
            return fail("train_images must be >= 1".into());
        }
        if self.test_anomalies > 0 && self.anomaly_block_cells > 0 && self.anomaly_motifs == 0 {
            return fail("anomalous images need anomaly_motifs >= 1".into());
        }
        if self.anomaly_block_cells > self.cells_per_side() {
            return fail(format!(
                "anomaly_block_cells {} exceeds the {}-cell image side",
                self.anomaly_block_cells,
                self.cells_per_side()
            ));
        }
        if NORMAL_BAND_HI + self.anomaly_shift > 255 {
            return fail(format!(
                "anomaly_shift {} pushes the anomaly band past 255",
                self.anomaly_shift
            ));
        }
        if self.test_anomalies > 0 && self.anomaly_block_cells > 0 && self.anomaly_shift == 0 {
            return fail("anomaly_shift 0 cannot separate anomalies".into());
        }
        if !(self.margin.is_finite() && self.margin > 0.0) {
            return fail(format!("margin {} must be finite and positive", self.margin));
        }
        if let Some(m) = self.motifs_per_image {
            if m == 0 || m > self.motif_count {
                return fail(format!(
                    "motifs_per_image {m} must lie in 1..={}",
                    self.motif_count
                ));
            }
        }
        if self.category.is_empty() || self.category.contains(['/', '\\']) {
            return fail(format!("category '{}' must be a bare directory name", self.category));
        }
        Ok(())
    }
}

/// Certified facts about a generated dataset, saved as manifest.json.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub spec: SynthSpec,
    /// Measured minimum isometric-feature distance from any anomaly motif
    /// to any normal motif; always >= spec.margin.
    pub margin_toy: f64,
    /// With rotate_test: measured minimum raw-pixel score of a rotated
    /// normal test image against the full training patch pool.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub margin_rotation: Option<f64>,
    pub attempts: u32,
    pub train_files: usize,
    pub test_good_files: usize,
    pub test_defect_files: usize,
}

struct Motif {
    /// patch_px x patch_px x 3 pixel values in [0,1], exact 8-bit levels.
    img: ImageTensor,
}

fn draw_motif(rng: &mut ChaCha12Rng, patch_px: usize, shift: u32) -> Motif {
    let data: Vec<f32> = (0..patch_px * patch_px * 3)
        .map(|_| (rng.random_range(NORMAL_BAND_LO..=NORMAL_BAND_HI) + shift) as f32 / 255.0)
        .collect();
    Motif {
        img: ImageTensor::new(patch_px, patch_px, 3, data).expect("band values are finite"),
    }
}

fn blit(dst: &mut ImageTensor, src: &ImageTensor, y0: usize, x0: usize) {
    for y in 0..src.height {
        for x in 0..src.width {
            for c in 0..src.channels {
                let v = src.data[(y * src.width + x) * src.channels + c];
                dst.set(y0 + y, x0 + x, c, v);
            }
        }
    }
}

struct Tiler<'a> {
    spec: &'a SynthSpec,
    normals: &'a [Motif],
}

impl Tiler<'_> {
    fn place(&self, img: &mut ImageTensor, rng: &mut ChaCha12Rng, r: usize, c: usize, motif: &Motif) {
        let cell = if self.spec.cell_transforms {
            apply_dihedral(&motif.img, Dihedral::ALL[rng.random_range(0..8)])
        } else {
            motif.img.clone()
        };
        blit(img, &cell, r * self.spec.patch_px, c * self.spec.patch_px);
    }

    /// Fresh tiling from the given motif choices (indices into normals).
    fn tile(&self, rng: &mut ChaCha12Rng, choices: &[usize]) -> ImageTensor {
        let side = self.spec.cells_per_side();
        let mut img = ImageTensor::constant(self.spec.image_px, self.spec.image_px, 3, 0.0);
        for r in 0..side {
            for c in 0..side {
                let m = choices[rng.random_range(0..choices.len())];
                self.place(&mut img, rng, r, c, &self.normals[m]);
            }
        }
        img
    }

    /// Training image 0: every motif appears, cells cycle through the set.
    fn covering_tile(&self, rng: &mut ChaCha12Rng) -> ImageTensor {
        let side = self.spec.cells_per_side();
        let mut img = ImageTensor::constant(self.spec.image_px, self.spec.image_px, 3, 0.0);
        for r in 0..side {
            for c in 0..side {
                let m = (r * side + c) % self.spec.motif_count;
                self.place(&mut img, rng, r, c, &self.normals[m]);
            }
        }
        img
    }

    fn subset(&self, rng: &mut ChaCha12Rng) -> Vec<usize> {
        match self.spec.motifs_per_image {
            None => (0..self.spec.motif_count).collect(),
            Some(m) => {
                let mut all: Vec<usize> = (0..self.spec.motif_count).collect();
                for i in 0..m {
                    let j = rng.random_range(i..all.len());
                    all.swap(i, j);
                }
                all.truncate(m);
                all
            }
        }
    }
}

fn toy_feature(motif: &Motif, patch_px: usize) -> Vec<f32> {
    let grid = extract_toy(&motif.img, patch_px).expect("motif is one whole patch");
    grid.vector_at(0).to_vec()
}

fn dist(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b.iter()) {
        let d = *x as f64 - *y as f64;
        acc += d * d;
    }
    acc.sqrt()
}

/// Exhaustive anomaly-to-normal motif margin under the isometric features.
fn certify_toy_margin(spec: &SynthSpec, normals: &[Motif], anomalies: &[Motif]) -> f64 {
    let normal_feats: Vec<Vec<f32>> =
        normals.iter().map(|m| toy_feature(m, spec.patch_px)).collect();
    let mut margin = f64::INFINITY;
    for a in anomalies {
        let fa = toy_feature(a, spec.patch_px);
        for fin in &normal_feats {
            margin = margin.min(dist(&fa, fin));
        }
    }
    margin
}

/// Smallest raw-pixel image score among the rotated normals, measured
/// directly against every training patch.
fn certify_rotation_margin(
    spec: &SynthSpec,
    train: &[ImageTensor],
    rotated: &[ImageTensor],
) -> Result<f64> {
    let mut pool: Vec<Vec<f32>> = Vec::new();
    for img in train {
        let grid = extract_raw(img, spec.patch_px)?;
        for i in 0..grid.len() {
            pool.push(grid.vector_at(i).to_vec());
        }
    }
    let mut margin = f64::INFINITY;
    for img in rotated {
        let grid = extract_raw(img, spec.patch_px)?;
        let mut image_score = 0.0f64;
        for i in 0..grid.len() {
            let q = grid.vector_at(i);
            let mut best = f64::INFINITY;
            for p in &pool {
                best = best.min(dist(q, p));
            }
            image_score = image_score.max(best);
        }
        margin = margin.min(image_score);
    }
    Ok(margin)
}

struct Generated {
    train: Vec<ImageTensor>,
    test_good: Vec<ImageTensor>,
    /// Anomalous images with their exact pixel masks.
    test_defect: Vec<(ImageTensor, Vec<bool>)>,
    margin_toy: f64,
    margin_rotation: Option<f64>,
}

fn generate_attempt(spec: &SynthSpec, attempt: u32) -> Result<Option<Generated>> {
    let mut rng =
        ChaCha12Rng::seed_from_u64(spec.seed.wrapping_add(attempt as u64 * 0x9E3779B97F4A7C15));
    let normals: Vec<Motif> =
        (0..spec.motif_count).map(|_| draw_motif(&mut rng, spec.patch_px, 0)).collect();
    let anomalies: Vec<Motif> = (0..spec.anomaly_motifs)
        .map(|_| draw_motif(&mut rng, spec.patch_px, spec.anomaly_shift))
        .collect();

    let margin_toy = if anomalies.is_empty() {
        0.0
    } else {
        let m = certify_toy_margin(spec, &normals, &anomalies);
        if !(m.is_finite() && m >= spec.margin) {
            return Ok(None);
        }
        m
    };

    let tiler = Tiler { spec, normals: &normals };
    let mut train = Vec::with_capacity(spec.train_images);
    train.push(tiler.covering_tile(&mut rng));
    let all: Vec<usize> = (0..spec.motif_count).collect();
    for _ in 1..spec.train_images {
        train.push(tiler.tile(&mut rng, &all));
    }

    let mut test_good = Vec::with_capacity(spec.test_normals);
    if spec.rotate_test {
        for i in 0..spec.test_normals {
            let source = &train[i % spec.train_images];
            let rot = [Dihedral::Rot90, Dihedral::Rot180, Dihedral::Rot270][i % 3];
            test_good.push(apply_dihedral(source, rot));
        }
    } else {
        for _ in 0..spec.test_normals {
            let subset = tiler.subset(&mut rng);
            test_good.push(tiler.tile(&mut rng, &subset));
        }
    }

    let margin_rotation = if spec.rotate_test && !test_good.is_empty() {
        let m = certify_rotation_margin(spec, &train, &test_good)?;
        if m <= 0.0 {
            return Ok(None);
        }
        Some(m)
    } else {
        None
    };

    let side = spec.cells_per_side();
    let b = spec.anomaly_block_cells;
    let mut test_defect = Vec::with_capacity(spec.test_anomalies);
    let mut block_zero_normals = Vec::new();
    for _ in 0..spec.test_anomalies {
        let subset = tiler.subset(&mut rng);
        let mut img = tiler.tile(&mut rng, &subset);
        if b == 0 {
            block_zero_normals.push(img);
            continue;
        }
        let r0 = rng.random_range(0..=side - b);
        let c0 = rng.random_range(0..=side - b);
        for r in r0..r0 + b {
            for c in c0..c0 + b {
                let a = rng.random_range(0..anomalies.len());
                tiler.place(&mut img, &mut rng, r, c, &anomalies[a]);
            }
        }
        let mut mask = vec![false; spec.image_px * spec.image_px];
        for y in r0 * spec.patch_px..(r0 + b) * spec.patch_px {
            for x in c0 * spec.patch_px..(c0 + b) * spec.patch_px {
                mask[y * spec.image_px + x] = true;
            }
        }
        test_defect.push((img, mask));
    }
    test_good.extend(block_zero_normals);

    Ok(Some(Generated {
        train,
        test_good,
        test_defect,
        margin_toy,
        margin_rotation,
    }))
}

/// Generate the dataset under `out_dir/<category>/` in the MVTec layout and
/// return the certified manifest (also written as manifest.json).
pub fn generate(spec: &SynthSpec, out_dir: &Path) -> Result<SynthManifest> {
    spec.validate()?;
    let mut found = None;
    let mut attempts = 0;
    for attempt in 0..MAX_ATTEMPTS {
        attempts = attempt + 1;
        if let Some(g) = generate_attempt(spec, attempt)? {
            found = Some(g);
            break;
        }
    }
    let gen = found.ok_or(Error::MarginUnsatisfiable {
        margin: spec.margin,
        attempts: MAX_ATTEMPTS as usize,
    })?;

    let category_dir = out_dir.join(&spec.category);
    let mkdir = |p: &Path| {
        fs::create_dir_all(p).map_err(|e| Error::io(format!("create {}", p.display()), e))
    };
    let train_dir = category_dir.join("train/good");
    let good_dir = category_dir.join("test/good");
    mkdir(&train_dir)?;
    mkdir(&good_dir)?;
    for (i, img) in gen.train.iter().enumerate() {
        write_image(img, &train_dir.join(format!("{i:03}.png")))?;
    }
    for (i, img) in gen.test_good.iter().enumerate() {
        write_image(img, &good_dir.join(format!("{i:03}.png")))?;
    }
    if !gen.test_defect.is_empty() {
        let defect_dir = category_dir.join("test/defect");
        let mask_dir = category_dir.join("ground_truth/defect");
        mkdir(&defect_dir)?;
        mkdir(&mask_dir)?;
        for (i, (img, mask)) in gen.test_defect.iter().enumerate() {
            write_image(img, &defect_dir.join(format!("{i:03}.png")))?;
            let mut mask_img = ImageTensor::constant(spec.image_px, spec.image_px, 1, 0.0);
            for (p, &on) in mask.iter().enumerate() {
                if on {
                    mask_img.data[p] = 1.0;
                }
            }
            write_image(&mask_img, &mask_dir.join(format!("{i:03}_mask.png")))?;
        }
    }

    let manifest = SynthManifest {
        spec: spec.clone(),
        margin_toy: gen.margin_toy,
        margin_rotation: gen.margin_rotation,
        attempts,
        train_files: gen.train.len(),
        test_good_files: gen.test_good.len(),
        test_defect_files: gen.test_defect.len(),
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(category_dir.join("manifest.json"), json.as_bytes())
        .map_err(|e| Error::io("write manifest.json", e))?;
    Ok(manifest)
}

pub fn load_manifest(category_dir: &Path) -> Result<SynthManifest> {
    let path = category_dir.join("manifest.json");
    let bytes = fs::read(&path).map_err(|_| Error::MissingFile(path))?;
    Ok(serde_json::from_slice(&bytes)?)
}
