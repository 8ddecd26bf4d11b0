//! Memory-bank construction: pool accumulation over augmented samples,
//! greedy minimax coreset compaction under a random projection, and the
//! GCBK container.
//!
//! The pool is every patch vector of every sample variant. An optional
//! exact-duplicate pass removes repeats (invariant extractors make augmented
//! variants collide on purpose), then greedy farthest-point selection keeps
//! `l = ceil(ratio * |pool|)` vectors. Distances are compared on projected
//! vectors in f64; all ties resolve by (lexicographically smallest projected
//! vector, then smallest index), which makes the selected vector multiset a
//! function of the pool contents rather than their order.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::AugmentSpec;
use crate::binio;
use crate::error::{Error, Result};
use crate::features::{
    extract_raw, extract_toy, ExtractorKind, ExtractorSpec, ImageTensor, PatchFeatureGrid,
};
use crate::graph::{
    graph_pyramid_forward, load_weight_bundle, synth_pyramid_weights, PyramidSpec,
    PyramidWeights, RelativeSign,
};

const GCBK_MAGIC: &[u8; 4] = b"GCBK";
const GCBK_VERSION: u16 = 1;
const PROVENANCE_RECORD_SIZE: u32 = 16;
const GCBK_MAX_FLOATS: u64 = 1 << 31;

// ---------------------------------------------------------------------------
// Random projection
// ---------------------------------------------------------------------------

/// The map applied to vectors before coreset distance comparisons.
#[derive(Debug, Clone)]
pub enum Projection {
    /// No reduction gained; vectors pass through exactly.
    Identity { d: usize },
    /// d x d_star Gaussian matrix, row-major, f64.
    Matrix { d: usize, d_star: usize, m: Vec<f64> },
}

impl Projection {
    pub fn input_dim(&self) -> usize {
        match self {
            Projection::Identity { d } => *d,
            Projection::Matrix { d, .. } => *d,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Projection::Identity { d } => *d,
            Projection::Matrix { d_star, .. } => *d_star,
        }
    }

    pub fn project(&self, x: &[f32]) -> Vec<f64> {
        match self {
            Projection::Identity { .. } => x.iter().map(|&v| v as f64).collect(),
            Projection::Matrix { d, d_star, m } => (0..*d_star)
                .map(|j| {
                    let mut acc = 0.0f64;
                    for i in 0..*d {
                        acc += x[i] as f64 * m[i * d_star + j];
                    }
                    acc
                })
                .collect(),
        }
    }
}

/// Gaussian(0, 1/d_star) projection matrix from a seeded generator; the
/// identity embedding when `d_star >= d`, since no reduction is gained and
/// exactness is preferred.
pub fn random_projection(d: usize, d_star: usize, seed: u64) -> Projection {
    assert!(d >= 1 && d_star >= 1, "projection dims must be >= 1");
    if d_star >= d {
        return Projection::Identity { d };
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0f64, (1.0 / d_star as f64).sqrt()).expect("finite std dev");
    let m = (0..d * d_star).map(|_| normal.sample(&mut rng)).collect();
    Projection::Matrix { d, d_star, m }
}

// ---------------------------------------------------------------------------
// Coreset selection
// ---------------------------------------------------------------------------

fn dist_sq_f64(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b.iter()) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

fn lex_less(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b.iter()) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Less => return true,
            std::cmp::Ordering::Greater => return false,
            std::cmp::Ordering::Equal => continue,
        }
    }
    false
}

/// Greedy farthest-point selection of `l` indices from a flat vector pool.
///
/// Each step picks the unselected vector maximizing its distance to the
/// selected set (infinite for the empty set, so the first pick is an all-tie
/// case). Ties resolve by lexicographically smallest projected vector, then
/// smallest index. Returns indices in selection order.
pub fn coreset_select(
    vectors: &[f32],
    dim: usize,
    l: usize,
    psi: &Projection,
) -> Result<Vec<usize>> {
    if dim == 0 || !vectors.len().is_multiple_of(dim) {
        return Err(Error::DimensionMismatch {
            context: "coreset pool layout".into(),
            left: vectors.len(),
            right: dim,
        });
    }
    let n = vectors.len() / dim;
    if l < 1 || l > n {
        return Err(Error::CoresetSizeOutOfRange { l, pool: n });
    }
    let projected: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| psi.project(&vectors[i * dim..(i + 1) * dim]))
        .collect();

    let mut selected = Vec::with_capacity(l);
    let mut taken = vec![false; n];
    let mut min_dist = vec![f64::INFINITY; n];
    for _ in 0..l {
        let mut best: Option<usize> = None;
        for i in 0..n {
            if taken[i] {
                continue;
            }
            let better = match best {
                None => true,
                Some(b) => {
                    min_dist[i] > min_dist[b]
                        || (min_dist[i] == min_dist[b] && lex_less(&projected[i], &projected[b]))
                }
            };
            if better {
                best = Some(i);
            }
        }
        let pick = best.expect("l <= n guarantees an unselected vector");
        taken[pick] = true;
        selected.push(pick);
        for i in 0..n {
            if !taken[i] {
                let d = dist_sq_f64(&projected[i], &projected[pick]);
                if d < min_dist[i] {
                    min_dist[i] = d;
                }
            }
        }
    }
    Ok(selected)
}

/// Covering radius of a selection: max over the pool of the distance to the
/// nearest selected vector (squared, projected space). The quantity the
/// greedy rule 2-approximates.
pub fn covering_radius_sq(vectors: &[f32], dim: usize, selected: &[usize], psi: &Projection) -> f64 {
    let n = vectors.len() / dim;
    let projected: Vec<Vec<f64>> = (0..n)
        .map(|i| psi.project(&vectors[i * dim..(i + 1) * dim]))
        .collect();
    (0..n)
        .map(|i| {
            selected
                .iter()
                .map(|&s| dist_sq_f64(&projected[i], &projected[s]))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// Bank types
// ---------------------------------------------------------------------------

/// Where one bank vector came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Provenance {
    pub image_id: u32,
    pub patch_row: u32,
    pub patch_col: u32,
    pub augment_id: u32,
}

/// Build-time metadata persisted in the GCBK header JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct BuildMeta {
    pub ratio: f64,
    pub proj_dim: usize,
    pub seed: u64,
    pub extractor: String,
    pub extractor_hash: String,
    pub dedup: bool,
    pub aug: Vec<String>,
    pub pool_size: usize,
    pub distinct_size: usize,
}

/// Compacted patch-feature memory: the coreset vectors plus provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    pub dim: usize,
    pub vectors: Vec<f32>,
    pub provenance: Vec<Provenance>,
    pub build_meta: BuildMeta,
}

impl MemoryBank {
    pub fn len(&self) -> usize {
        self.provenance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.provenance.is_empty()
    }

    #[inline]
    pub fn vector(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidField {
                format: "GCBK",
                detail: "zero dimension".into(),
            });
        }
        if self.provenance.is_empty() {
            return Err(Error::EmptyBank);
        }
        if self.vectors.len() != self.provenance.len() * self.dim {
            return Err(Error::DimensionMismatch {
                context: "bank vector storage".into(),
                left: self.vectors.len(),
                right: self.provenance.len() * self.dim,
            });
        }
        if self.vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidField {
                format: "GCBK",
                detail: "non-finite bank vector".into(),
            });
        }
        Ok(())
    }
}

/// Coreset compaction parameters.
///
/// `proj_dim` of `None` resolves to `min(D, 128)` at build time. `dedup`
/// removes exact duplicates from the pool before selection.
#[derive(Debug, Clone, PartialEq)]
pub struct CoresetConfig {
    pub ratio: f64,
    pub proj_dim: Option<usize>,
    pub seed: u64,
    pub dedup: bool,
}

impl Default for CoresetConfig {
    fn default() -> Self {
        CoresetConfig {
            ratio: 0.01,
            proj_dim: None,
            seed: 0,
            dedup: true,
        }
    }
}

impl CoresetConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ratio.is_finite() && self.ratio > 0.0 && self.ratio <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "sampling ratio {} must lie in (0,1]",
                self.ratio
            )));
        }
        if self.proj_dim == Some(0) {
            return Err(Error::InvalidConfig("projection dim must be >= 1".into()));
        }
        Ok(())
    }

    pub fn resolved_proj_dim(&self, d: usize) -> usize {
        self.proj_dim.unwrap_or_else(|| d.min(128))
    }
}

// ---------------------------------------------------------------------------
// Extractor resolution
// ---------------------------------------------------------------------------

/// Where pyramid weights come from when that extractor is selected.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightSource {
    /// Deterministic synthetic bundle from this seed.
    Synth(u64),
    File(PathBuf),
}

impl Default for WeightSource {
    fn default() -> Self {
        WeightSource::Synth(0)
    }
}

/// A fully resolved extractor, ready to map images to patch grids.
#[derive(Debug, Clone)]
pub enum PatchExtractor {
    Toy { patch_px: usize, canon: String },
    Raw { patch_px: usize, canon: String },
    Pyramid {
        spec: PyramidSpec,
        weights: PyramidWeights,
        canon: String,
    },
    /// Features arrive pre-extracted as GCFT grids.
    External,
}

/// Resolve a parsed extractor selector into a runnable extractor.
pub fn resolve_extractor(
    spec: &ExtractorSpec,
    weights: &WeightSource,
    sign: RelativeSign,
) -> Result<PatchExtractor> {
    spec.validate()?;
    match spec.kind {
        ExtractorKind::ToyIsometric => Ok(PatchExtractor::Toy {
            patch_px: spec.usize_param("patch_px", 8)?,
            canon: spec.canonical(),
        }),
        ExtractorKind::RawPixel => Ok(PatchExtractor::Raw {
            patch_px: spec.usize_param("patch_px", 8)?,
            canon: spec.canonical(),
        }),
        ExtractorKind::ExternalFile => Ok(PatchExtractor::External),
        ExtractorKind::GraphPyramid => {
            let tap = spec.params.get("tap").map(|_| spec.usize_param("tap", 2)).transpose()?;
            let seed = spec.params.get("seed").map(|_| spec.u64_param("seed", 0)).transpose()?;
            let k = spec.params.get("k").map(|_| spec.usize_param("k", 9)).transpose()?;
            let rebuild = match spec.params.get("rebuild").map(String::as_str) {
                None => None,
                Some("stage") => Some(false),
                Some("block") => Some(true),
                Some(other) => {
                    return Err(Error::ExtractorSpec(format!(
                        "rebuild '{other}' (expected stage|block)"
                    )))
                }
            };
            let mut pspec = PyramidSpec::default().with_overrides(tap, seed, k, rebuild)?;
            pspec.relative_sign = sign;
            let (bundle, wdesc) = match weights {
                WeightSource::Synth(s) => (synth_pyramid_weights(&pspec, *s), format!("synth:{s}")),
                WeightSource::File(p) => (load_weight_bundle(p, &pspec)?, format!("file:{}", p.display())),
            };
            let canon = format!("{}|sign={}|weights={}", spec.canonical(), sign.name(), wdesc);
            Ok(PatchExtractor::Pyramid {
                spec: pspec,
                weights: bundle,
                canon,
            })
        }
    }
}

impl PatchExtractor {
    /// Canonical description, hashed into the bank metadata.
    pub fn describe(&self) -> String {
        match self {
            PatchExtractor::Toy { canon, .. }
            | PatchExtractor::Raw { canon, .. }
            | PatchExtractor::Pyramid { canon, .. } => canon.clone(),
            PatchExtractor::External => "gcft".into(),
        }
    }

    pub fn expects_feature_files(&self) -> bool {
        matches!(self, PatchExtractor::External)
    }

    pub fn extract(&self, img: &ImageTensor) -> Result<PatchFeatureGrid> {
        match self {
            PatchExtractor::Toy { patch_px, .. } => extract_toy(img, *patch_px),
            PatchExtractor::Raw { patch_px, .. } => extract_raw(img, *patch_px),
            PatchExtractor::Pyramid { spec, weights, .. } => {
                graph_pyramid_forward(img, spec, weights)
            }
            PatchExtractor::External => Err(Error::InvalidConfig(
                "the gcft extractor reads feature files and cannot run on images".into(),
            )),
        }
    }
}

pub fn sha256_hex(input: &str) -> String {
    let digest = Sha256::digest(input.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Reverse of [`PatchExtractor::describe`]: recover the selector, weight
/// source, and sign convention a bank was built with, so scoring can run
/// the same extractor without the caller restating it.
pub fn parse_extractor_canon(canon: &str) -> Result<(ExtractorSpec, WeightSource, RelativeSign)> {
    let mut parts = canon.split('|');
    let spec = ExtractorSpec::parse(parts.next().unwrap_or_default())?;
    let mut sign = RelativeSign::default();
    let mut weights = WeightSource::default();
    for part in parts {
        if let Some(s) = part.strip_prefix("sign=") {
            sign = RelativeSign::parse(s)?;
        } else if let Some(w) = part.strip_prefix("weights=") {
            weights = if let Some(seed) = w.strip_prefix("synth:") {
                WeightSource::Synth(seed.parse().map_err(|_| {
                    Error::InvalidConfig(format!("weight seed '{seed}' is not an integer"))
                })?)
            } else if let Some(p) = w.strip_prefix("file:") {
                WeightSource::File(PathBuf::from(p))
            } else {
                return Err(Error::InvalidConfig(format!("weight source '{w}'")));
            };
        } else {
            return Err(Error::InvalidConfig(format!(
                "extractor descriptor part '{part}'"
            )));
        }
    }
    Ok((spec, weights, sign))
}

// ---------------------------------------------------------------------------
// Bank construction
// ---------------------------------------------------------------------------

/// One training sample: an image to extract from, or a pre-extracted grid.
#[derive(Debug, Clone)]
pub enum Sample {
    Image(ImageTensor),
    Grid(PatchFeatureGrid),
}

fn sample_grids(
    index: usize,
    sample: &Sample,
    extractor: &PatchExtractor,
    aug: &AugmentSpec,
) -> Result<Vec<(u32, PatchFeatureGrid)>> {
    let fail = |e: Error| Error::SampleFailed {
        index,
        source: Box::new(e),
    };
    match sample {
        Sample::Image(img) => {
            if extractor.expects_feature_files() {
                return Err(fail(Error::InvalidConfig(
                    "image sample given to the gcft extractor".into(),
                )));
            }
            let mut out = Vec::new();
            for (id, variant) in aug.variants(img).map_err(fail)? {
                out.push((id, extractor.extract(&variant).map_err(fail)?));
            }
            Ok(out)
        }
        Sample::Grid(grid) => {
            if !extractor.expects_feature_files() {
                return Err(fail(Error::InvalidConfig(
                    "pre-extracted grid given to an image extractor".into(),
                )));
            }
            if !aug.is_empty() {
                return Err(Error::AugmentNeedsImage(index));
            }
            Ok(vec![(0, grid.clone())])
        }
    }
}

/// Run the full bank pipeline: extract (optionally augmented) patch vectors
/// from every sample, optionally drop exact duplicates, then compact with
/// greedy coreset selection at `l = ceil(ratio * pool)`.
pub fn build_bank(
    samples: &[Sample],
    extractor: &PatchExtractor,
    aug: &AugmentSpec,
    cfg: &CoresetConfig,
) -> Result<MemoryBank> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::InvalidConfig("no training samples".into()));
    }
    let per_sample: Vec<Vec<(u32, PatchFeatureGrid)>> = samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| sample_grids(i, s, extractor, aug))
        .collect::<Result<_>>()?;

    let dim = per_sample[0][0].1.dim;
    let mut pool: Vec<f32> = Vec::new();
    let mut provenance: Vec<Provenance> = Vec::new();
    for (i, grids) in per_sample.iter().enumerate() {
        for (aug_id, grid) in grids {
            if grid.dim != dim {
                return Err(Error::DimensionMismatch {
                    context: format!("sample {i} feature dim"),
                    left: grid.dim,
                    right: dim,
                });
            }
            for r in 0..grid.rows {
                for c in 0..grid.cols {
                    pool.extend_from_slice(grid.vector(r, c));
                    provenance.push(Provenance {
                        image_id: i as u32,
                        patch_row: r as u32,
                        patch_col: c as u32,
                        augment_id: *aug_id,
                    });
                }
            }
        }
    }
    let pool_size = provenance.len();

    if cfg.dedup {
        let mut seen: HashSet<Vec<u32>> = HashSet::with_capacity(pool_size);
        let mut kept_vectors: Vec<f32> = Vec::with_capacity(pool.len());
        let mut kept_prov: Vec<Provenance> = Vec::with_capacity(pool_size);
        for (i, p) in provenance.iter().enumerate() {
            let v = &pool[i * dim..(i + 1) * dim];
            let bits: Vec<u32> = v.iter().map(|x| x.to_bits()).collect();
            if seen.insert(bits) {
                kept_vectors.extend_from_slice(v);
                kept_prov.push(*p);
            }
        }
        pool = kept_vectors;
        provenance = kept_prov;
    }
    let distinct_size = provenance.len();

    let l = ((cfg.ratio * distinct_size as f64).ceil() as usize)
        .max(1)
        .min(distinct_size);
    let proj_dim = cfg.resolved_proj_dim(dim);
    let psi = random_projection(dim, proj_dim, cfg.seed);
    let selected = coreset_select(&pool, dim, l, &psi)?;

    let mut vectors = Vec::with_capacity(selected.len() * dim);
    let mut kept = Vec::with_capacity(selected.len());
    for &i in &selected {
        vectors.extend_from_slice(&pool[i * dim..(i + 1) * dim]);
        kept.push(provenance[i]);
    }
    let extractor_desc = extractor.describe();
    let bank = MemoryBank {
        dim,
        vectors,
        provenance: kept,
        build_meta: BuildMeta {
            ratio: cfg.ratio,
            proj_dim,
            seed: cfg.seed,
            extractor_hash: sha256_hex(&extractor_desc),
            extractor: extractor_desc,
            dedup: cfg.dedup,
            aug: aug.describe(),
            pool_size,
            distinct_size,
        },
    };
    bank.validate()?;
    Ok(bank)
}

// ---------------------------------------------------------------------------
// GCBK bank files
// ---------------------------------------------------------------------------

/// Encode a bank: magic "GCBK", u16 version, u32 dim, u32 count, u32
/// provenance-record size, u32-length-prefixed UTF-8 JSON build metadata,
/// count provenance records of 4 u32 (image id, patch row, patch col,
/// augment id), then count*dim little-endian f32.
pub fn encode_bank(bank: &MemoryBank) -> Result<Vec<u8>> {
    bank.validate()?;
    let json = serde_json::to_vec(&bank.build_meta)?;
    let mut buf = Vec::with_capacity(26 + json.len() + bank.len() * (16 + bank.dim * 4));
    buf.extend_from_slice(GCBK_MAGIC);
    buf.extend_from_slice(&GCBK_VERSION.to_le_bytes());
    buf.extend_from_slice(&(bank.dim as u32).to_le_bytes());
    buf.extend_from_slice(&(bank.len() as u32).to_le_bytes());
    buf.extend_from_slice(&PROVENANCE_RECORD_SIZE.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    for p in &bank.provenance {
        for field in [p.image_id, p.patch_row, p.patch_col, p.augment_id] {
            buf.extend_from_slice(&field.to_le_bytes());
        }
    }
    for v in &bank.vectors {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    Ok(buf)
}

pub fn decode_bank(buf: &[u8]) -> Result<MemoryBank> {
    binio::expect_magic(buf, GCBK_MAGIC, "GCBK")?;
    let mut off = 4;
    let version = binio::read_u16(buf, &mut off, "GCBK", "version")?;
    if version != GCBK_VERSION {
        return Err(Error::UnsupportedVersion {
            format: "GCBK",
            found: version,
            expected: GCBK_VERSION,
        });
    }
    let dim = binio::read_u32(buf, &mut off, "GCBK", "dim")? as u64;
    let count = binio::read_u32(buf, &mut off, "GCBK", "count")? as u64;
    let prov_size = binio::read_u32(buf, &mut off, "GCBK", "provenance record size")?;
    if prov_size != PROVENANCE_RECORD_SIZE {
        return Err(Error::InvalidField {
            format: "GCBK",
            detail: format!("provenance record size {prov_size}, expected {PROVENANCE_RECORD_SIZE}"),
        });
    }
    if dim == 0 {
        return Err(Error::InvalidField {
            format: "GCBK",
            detail: "zero dimension".into(),
        });
    }
    if count == 0 {
        return Err(Error::EmptyBank);
    }
    let total = count
        .checked_mul(dim)
        .filter(|&v| v <= GCBK_MAX_FLOATS)
        .ok_or_else(|| Error::DimensionOverflow {
            format: "GCBK",
            detail: format!("{count} vectors of dim {dim}"),
        })? as usize;
    let json_len = binio::read_u32(buf, &mut off, "GCBK", "metadata length")? as usize;
    let json = binio::read_bytes(buf, &mut off, json_len, "GCBK", "metadata JSON")?;
    let build_meta: BuildMeta = serde_json::from_slice(json)?;
    let mut provenance = Vec::with_capacity(count as usize);
    for i in 0..count {
        let rec = binio::read_bytes(buf, &mut off, 16, "GCBK", &format!("provenance record {i}"))?;
        let f = |o: usize| u32::from_le_bytes(rec[o..o + 4].try_into().unwrap());
        provenance.push(Provenance {
            image_id: f(0),
            patch_row: f(4),
            patch_col: f(8),
            augment_id: f(12),
        });
    }
    let vectors = binio::read_f32s(buf, &mut off, total, "GCBK", "bank vectors")?;
    binio::expect_end(buf, off, "GCBK")?;
    let bank = MemoryBank {
        dim: dim as usize,
        vectors,
        provenance,
        build_meta,
    };
    bank.validate()?;
    Ok(bank)
}

pub fn save_bank(bank: &MemoryBank, path: &Path) -> Result<()> {
    fs::write(path, encode_bank(bank)?).map_err(|e| Error::io(format!("write {}", path.display()), e))
}

pub fn load_bank(path: &Path) -> Result<MemoryBank> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let buf = fs::read(path).map_err(|e| Error::io(format!("read {}", path.display()), e))?;
    decode_bank(&buf)
}
