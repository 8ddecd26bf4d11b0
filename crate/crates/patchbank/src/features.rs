//! Patch feature extraction and the GCFT feature-tensor container.
//!
//! An [`ImageTensor`] is decoded from disk (8-bit PNG or binary PPM), cut into
//! a grid of square patches, and turned into a [`PatchFeatureGrid`] by one of
//! the extractors:
//!
//! - `toy`: per-patch statistics (channel means, variances, a 2-bin radial
//!   intensity histogram). Exactly invariant under the 8 dihedral transforms
//!   of the patch contents, which is what the invariance tests rely on.
//! - `raw`: flattened patch pixels. Deliberately *not* isometry-invariant;
//!   the stand-in for plain convolutional features.
//! - `gcft`: grids read from GCFT files produced by any external backbone.
//! - `pyramid`: the graph feature pyramid (see [`crate::graph`]).

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Read;
use std::path::Path;

use crate::binio;
use crate::error::{Error, Result};

/// Fixed output dimension of the toy isometric extractor.
///
/// Layout: `[mean_c0, mean_c1, mean_c2, var_c0, var_c1, var_c2, radial_inner,
/// radial_outer]`. Channels the image does not have contribute zeros.
pub const TOY_FEATURE_DIM: usize = 8;

const GCFT_MAGIC: &[u8; 4] = b"GCFT";
const GCFT_VERSION: u16 = 1;
/// Cap on rows*cols*dim so a hostile header cannot ask for a huge allocation.
const GCFT_MAX_FLOATS: u64 = 1 << 31;

// ---------------------------------------------------------------------------
// Core tensor types
// ---------------------------------------------------------------------------

/// A decoded image: row-major f32 samples in `[0,1]`, channel-interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::DimensionMismatch {
                context: "image tensor data length".into(),
                left: data.len(),
                right: height * width * channels,
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invariant("image-finite", "non-finite pixel value"));
        }
        Ok(ImageTensor {
            height,
            width,
            channels,
            data,
        })
    }

    /// Constant-valued image.
    pub fn constant(height: usize, width: usize, channels: usize, value: f32) -> Self {
        ImageTensor {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }
}

/// An `rows x cols` grid of D-dimensional patch feature vectors.
///
/// Vectors are stored row-major and contiguously; cell `(r, c)` covers the
/// square of `stride_px` pixels starting at `(r * stride_px, c * stride_px)`
/// in the source image.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchFeatureGrid {
    pub rows: usize,
    pub cols: usize,
    pub dim: usize,
    pub stride_px: usize,
    pub features: Vec<f32>,
}

impl PatchFeatureGrid {
    pub fn new(
        rows: usize,
        cols: usize,
        dim: usize,
        stride_px: usize,
        features: Vec<f32>,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 || dim == 0 {
            return Err(Error::invariant(
                "grid-nonempty",
                format!("rows={rows} cols={cols} dim={dim}"),
            ));
        }
        if features.len() != rows * cols * dim {
            return Err(Error::DimensionMismatch {
                context: "patch grid feature length".into(),
                left: features.len(),
                right: rows * cols * dim,
            });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::invariant("grid-finite", "non-finite feature value"));
        }
        Ok(PatchFeatureGrid {
            rows,
            cols,
            dim,
            stride_px,
            features,
        })
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn vector(&self, r: usize, c: usize) -> &[f32] {
        let i = (r * self.cols + c) * self.dim;
        &self.features[i..i + self.dim]
    }

    #[inline]
    pub fn vector_at(&self, node: usize) -> &[f32] {
        &self.features[node * self.dim..(node + 1) * self.dim]
    }

    /// Multiset of feature vectors, sorted lexicographically by f32 total
    /// order. Used by tests comparing grids up to patch permutation.
    pub fn sorted_vectors(&self) -> Vec<Vec<f32>> {
        let mut v: Vec<Vec<f32>> = (0..self.len()).map(|i| self.vector_at(i).to_vec()).collect();
        v.sort_by(|a, b| {
            for (x, y) in a.iter().zip(b.iter()) {
                match x.total_cmp(y) {
                    std::cmp::Ordering::Equal => continue,
                    o => return o,
                }
            }
            std::cmp::Ordering::Equal
        });
        v
    }
}

// ---------------------------------------------------------------------------
// Image I/O
// ---------------------------------------------------------------------------

/// Decode an 8-bit PNG or binary PPM into `[0,1]` floats.
///
/// Grayscale stays 1 channel, RGB stays 3; anything else (16-bit, alpha,
/// palette expansion to alpha) is rejected as unsupported.
pub fn load_image(path: &Path) -> Result<ImageTensor> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(format!("read {}", path.display()), e))?;
    let format = image::guess_format(&bytes).map_err(|e| Error::UnsupportedFormat {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    if !matches!(format, image::ImageFormat::Png | image::ImageFormat::Pnm) {
        return Err(Error::UnsupportedFormat {
            path: path.to_path_buf(),
            detail: format!("{format:?} (only 8-bit PNG and binary PPM are accepted)"),
        });
    }
    let img = image::load_from_memory_with_format(&bytes, format).map_err(|e| {
        Error::CorruptImage {
            path: path.to_path_buf(),
            detail: e.to_string(),
        }
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, raw): (usize, Vec<u8>) = match img {
        image::DynamicImage::ImageLuma8(b) => (1, b.into_raw()),
        image::DynamicImage::ImageRgb8(b) => (3, b.into_raw()),
        other => {
            return Err(Error::UnsupportedFormat {
                path: path.to_path_buf(),
                detail: format!("{:?} color type (expected 8-bit gray or RGB)", other.color()),
            })
        }
    };
    let data = raw.iter().map(|&b| b as f32 / 255.0).collect();
    ImageTensor::new(h, w, channels, data)
}

/// Encode to 8-bit PNG. Values are clamped to `[0,1]` and rounded to the
/// nearest of 256 levels, so a load after write is within 1/255 of the input.
pub fn write_image(img: &ImageTensor, path: &Path) -> Result<()> {
    let quant = |v: f32| -> u8 { (v.clamp(0.0, 1.0) * 255.0).round() as u8 };
    let w = img.width as u32;
    let h = img.height as u32;
    let res = match img.channels {
        1 => {
            let buf: Vec<u8> = img.data.iter().map(|&v| quant(v)).collect();
            image::GrayImage::from_raw(w, h, buf)
                .expect("buffer length checked by ImageTensor")
                .save_with_format(path, image::ImageFormat::Png)
        }
        3 => {
            let buf: Vec<u8> = img.data.iter().map(|&v| quant(v)).collect();
            image::RgbImage::from_raw(w, h, buf)
                .expect("buffer length checked by ImageTensor")
                .save_with_format(path, image::ImageFormat::Png)
        }
        c => {
            return Err(Error::UnsupportedFormat {
                path: path.to_path_buf(),
                detail: format!("{c} channels (can write 1 or 3)"),
            })
        }
    };
    res.map_err(|e| Error::CorruptImage {
        path: path.to_path_buf(),
        detail: format!("encode failed: {e}"),
    })
}

// ---------------------------------------------------------------------------
// Extractors
// ---------------------------------------------------------------------------

fn check_divisible(img: &ImageTensor, patch_px: usize) -> Result<(usize, usize)> {
    if patch_px == 0 || !img.height.is_multiple_of(patch_px) || !img.width.is_multiple_of(patch_px) {
        return Err(Error::NonDivisiblePatch {
            height: img.height,
            width: img.width,
            patch_px,
        });
    }
    Ok((img.height / patch_px, img.width / patch_px))
}

/// Sum in ascending value order so the result depends only on the multiset of
/// inputs, never on pixel layout. This is what makes the toy features exactly
/// equal across dihedral transforms of a patch.
fn canonical_sum(values: &mut [f32]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    values.iter().map(|&v| v as f64).sum()
}

/// Squared distance of a pixel center from the patch center. Exact in f64 for
/// any realistic patch size (quarter-integer values), and shared by all 8
/// dihedral transforms of the patch.
fn radial_sq(y: usize, x: usize, patch_px: usize) -> f64 {
    let c = (patch_px as f64 - 1.0) / 2.0;
    let dy = y as f64 - c;
    let dx = x as f64 - c;
    dy * dy + dx * dx
}

/// Per-patch statistics extractor, `D = 8`.
///
/// Each output vector is a function of that patch's pixels only and is exactly
/// invariant under the 8 dihedral transforms of the patch contents.
pub fn extract_toy(img: &ImageTensor, patch_px: usize) -> Result<PatchFeatureGrid> {
    if img.channels != 1 && img.channels != 3 {
        return Err(Error::DimensionMismatch {
            context: "toy extractor channels".into(),
            left: img.channels,
            right: 3,
        });
    }
    let (rows, cols) = check_divisible(img, patch_px)?;
    let n_px = patch_px * patch_px;

    // Radial bin threshold from patch geometry alone: lower median of the
    // squared radii, so the inner bin is never empty.
    let mut radii: Vec<f64> = (0..patch_px)
        .flat_map(|y| (0..patch_px).map(move |x| radial_sq(y, x, patch_px)))
        .collect();
    radii.sort_by(|a, b| a.total_cmp(b));
    let r_cut = radii[(n_px - 1) / 2];

    let mut features = vec![0.0f32; rows * cols * TOY_FEATURE_DIM];
    let mut chan = vec![0.0f32; n_px];
    let mut inner: Vec<f32> = Vec::with_capacity(n_px);
    let mut outer: Vec<f32> = Vec::with_capacity(n_px);

    for pr in 0..rows {
        for pc in 0..cols {
            let out = &mut features
                [(pr * cols + pc) * TOY_FEATURE_DIM..(pr * cols + pc + 1) * TOY_FEATURE_DIM];
            for ch in 0..img.channels {
                for (i, slot) in chan.iter_mut().enumerate() {
                    let (y, x) = (i / patch_px, i % patch_px);
                    *slot = img.get(pr * patch_px + y, pc * patch_px + x, ch);
                }
                let mean = canonical_sum(&mut chan) / n_px as f64;
                // chan is sorted now; reuse the order for the variance pass
                let var = chan
                    .iter()
                    .map(|&v| {
                        let d = v as f64 - mean;
                        d * d
                    })
                    .sum::<f64>()
                    / n_px as f64;
                out[ch] = mean as f32;
                out[3 + ch] = var as f32;
            }
            inner.clear();
            outer.clear();
            for y in 0..patch_px {
                for x in 0..patch_px {
                    let mut s = 0.0f32;
                    for ch in 0..img.channels {
                        s += img.get(pr * patch_px + y, pc * patch_px + x, ch);
                    }
                    let intensity = s / img.channels as f32;
                    if radial_sq(y, x, patch_px) <= r_cut {
                        inner.push(intensity);
                    } else {
                        outer.push(intensity);
                    }
                }
            }
            out[6] = if inner.is_empty() {
                0.0
            } else {
                (canonical_sum(&mut inner) / inner.len() as f64) as f32
            };
            out[7] = if outer.is_empty() {
                0.0
            } else {
                (canonical_sum(&mut outer) / outer.len() as f64) as f32
            };
        }
    }
    PatchFeatureGrid::new(rows, cols, TOY_FEATURE_DIM, patch_px, features)
}

/// Flattened-pixel extractor, `D = patch_px^2 * channels`. Rotating a patch
/// permutes the vector components, so features of rotated content differ;
/// the rotation-augmentation pipeline exists to compensate for this.
pub fn extract_raw(img: &ImageTensor, patch_px: usize) -> Result<PatchFeatureGrid> {
    let (rows, cols) = check_divisible(img, patch_px)?;
    let dim = patch_px * patch_px * img.channels;
    let mut features = vec![0.0f32; rows * cols * dim];
    for pr in 0..rows {
        for pc in 0..cols {
            let out = &mut features[(pr * cols + pc) * dim..(pr * cols + pc + 1) * dim];
            let mut i = 0;
            for y in 0..patch_px {
                for x in 0..patch_px {
                    for ch in 0..img.channels {
                        out[i] = img.get(pr * patch_px + y, pc * patch_px + x, ch);
                        i += 1;
                    }
                }
            }
        }
    }
    PatchFeatureGrid::new(rows, cols, dim, patch_px, features)
}

// ---------------------------------------------------------------------------
// GCFT feature-tensor files
// ---------------------------------------------------------------------------

/// Read a GCFT feature-tensor file.
///
/// Layout: magic `GCFT`, u16 version=1, u16 reserved=0, u32 rows, u32 cols,
/// u32 dim, u32 stride_px, then rows*cols*dim little-endian f32, row-major,
/// vector-contiguous. Recovery is byte-exact.
pub fn load_feature_tensor(path: &Path) -> Result<PatchFeatureGrid> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut buf = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(format!("read {}", path.display()), e))?;
    decode_feature_tensor(&buf)
}

pub fn decode_feature_tensor(buf: &[u8]) -> Result<PatchFeatureGrid> {
    binio::expect_magic(buf, GCFT_MAGIC, "GCFT")?;
    let mut off = 4;
    let version = binio::read_u16(buf, &mut off, "GCFT", "version")?;
    if version != GCFT_VERSION {
        return Err(Error::UnsupportedVersion {
            format: "GCFT",
            found: version,
            expected: GCFT_VERSION,
        });
    }
    let _reserved = binio::read_u16(buf, &mut off, "GCFT", "reserved")?;
    let rows = binio::read_u32(buf, &mut off, "GCFT", "rows")? as u64;
    let cols = binio::read_u32(buf, &mut off, "GCFT", "cols")? as u64;
    let dim = binio::read_u32(buf, &mut off, "GCFT", "dim")? as u64;
    let stride_px = binio::read_u32(buf, &mut off, "GCFT", "stride_px")? as usize;

    let count = rows
        .checked_mul(cols)
        .and_then(|v| v.checked_mul(dim))
        .filter(|&v| v <= GCFT_MAX_FLOATS)
        .ok_or_else(|| Error::DimensionOverflow {
            format: "GCFT",
            detail: format!("{rows}x{cols}x{dim}"),
        })? as usize;
    if rows == 0 || cols == 0 || dim == 0 {
        return Err(Error::InvalidField {
            format: "GCFT",
            detail: format!("zero dimension {rows}x{cols}x{dim}"),
        });
    }

    let features = binio::read_f32s(buf, &mut off, count, "GCFT", "feature payload")?;
    binio::expect_end(buf, off, "GCFT")?;
    // Bypass the finiteness check of PatchFeatureGrid::new: the format round-
    // trips every f32 bit pattern, so construct directly after shape checks.
    Ok(PatchFeatureGrid {
        rows: rows as usize,
        cols: cols as usize,
        dim: dim as usize,
        stride_px,
        features,
    })
}

pub fn encode_feature_tensor(grid: &PatchFeatureGrid) -> Vec<u8> {
    let mut buf = Vec::with_capacity(20 + grid.features.len() * 4);
    buf.extend_from_slice(GCFT_MAGIC);
    buf.extend_from_slice(&GCFT_VERSION.to_le_bytes());
    buf.extend_from_slice(&0u16.to_le_bytes());
    buf.extend_from_slice(&(grid.rows as u32).to_le_bytes());
    buf.extend_from_slice(&(grid.cols as u32).to_le_bytes());
    buf.extend_from_slice(&(grid.dim as u32).to_le_bytes());
    buf.extend_from_slice(&(grid.stride_px as u32).to_le_bytes());
    for v in &grid.features {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn write_feature_tensor(grid: &PatchFeatureGrid, path: &Path) -> Result<()> {
    fs::write(path, encode_feature_tensor(grid))
        .map_err(|e| Error::io(format!("write {}", path.display()), e))
}

// ---------------------------------------------------------------------------
// Extractor specification
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtractorKind {
    ToyIsometric,
    RawPixel,
    ExternalFile,
    GraphPyramid,
}

impl ExtractorKind {
    pub fn name(self) -> &'static str {
        match self {
            ExtractorKind::ToyIsometric => "toy",
            ExtractorKind::RawPixel => "raw",
            ExtractorKind::ExternalFile => "gcft",
            ExtractorKind::GraphPyramid => "pyramid",
        }
    }
}

/// Parsed extractor selector: a kind plus its named parameters.
///
/// Grammar: `kind[:key=value[,key=value]*]`. Each kind accepts a fixed key
/// set; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractorSpec {
    pub kind: ExtractorKind,
    pub params: BTreeMap<String, String>,
}

impl ExtractorSpec {
    pub fn toy(patch_px: usize) -> Self {
        let mut params = BTreeMap::new();
        params.insert("patch_px".into(), patch_px.to_string());
        ExtractorSpec {
            kind: ExtractorKind::ToyIsometric,
            params,
        }
    }

    pub fn raw(patch_px: usize) -> Self {
        let mut params = BTreeMap::new();
        params.insert("patch_px".into(), patch_px.to_string());
        ExtractorSpec {
            kind: ExtractorKind::RawPixel,
            params,
        }
    }

    pub fn external() -> Self {
        ExtractorSpec {
            kind: ExtractorKind::ExternalFile,
            params: BTreeMap::new(),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let (kind_str, rest) = match s.split_once(':') {
            Some((k, r)) => (k, Some(r)),
            None => (s, None),
        };
        let kind = match kind_str {
            "toy" => ExtractorKind::ToyIsometric,
            "raw" => ExtractorKind::RawPixel,
            "gcft" => ExtractorKind::ExternalFile,
            "pyramid" => ExtractorKind::GraphPyramid,
            other => {
                return Err(Error::ExtractorSpec(format!(
                    "unknown extractor kind '{other}' (expected toy|raw|gcft|pyramid)"
                )))
            }
        };
        let mut params = BTreeMap::new();
        if let Some(rest) = rest {
            for pair in rest.split(',').filter(|p| !p.is_empty()) {
                let (k, v) = pair.split_once('=').ok_or_else(|| {
                    Error::ExtractorSpec(format!("parameter '{pair}' is not key=value"))
                })?;
                if params.insert(k.to_string(), v.to_string()).is_some() {
                    return Err(Error::ExtractorSpec(format!("duplicate parameter '{k}'")));
                }
            }
        }
        let spec = ExtractorSpec { kind, params };
        spec.validate()?;
        Ok(spec)
    }

    /// Per-kind allowed keys; presence of anything else is an error.
    pub fn validate(&self) -> Result<()> {
        let allowed: &[&str] = match self.kind {
            ExtractorKind::ToyIsometric | ExtractorKind::RawPixel => &["patch_px"],
            ExtractorKind::ExternalFile => &[],
            ExtractorKind::GraphPyramid => &["tap", "seed", "k", "rebuild"],
        };
        for key in self.params.keys() {
            if !allowed.contains(&key.as_str()) {
                return Err(Error::ExtractorSpec(format!(
                    "unknown parameter '{key}' for extractor '{}'",
                    self.kind.name()
                )));
            }
        }
        if matches!(
            self.kind,
            ExtractorKind::ToyIsometric | ExtractorKind::RawPixel
        ) {
            self.usize_param("patch_px", 8)?;
        }
        Ok(())
    }

    pub fn usize_param(&self, key: &str, default: usize) -> Result<usize> {
        match self.params.get(key) {
            None => Ok(default),
            Some(v) => v.parse::<usize>().map_err(|_| {
                Error::ExtractorSpec(format!("parameter '{key}'='{v}' is not a count"))
            }),
        }
    }

    pub fn u64_param(&self, key: &str, default: u64) -> Result<u64> {
        match self.params.get(key) {
            None => Ok(default),
            Some(v) => v.parse::<u64>().map_err(|_| {
                Error::ExtractorSpec(format!("parameter '{key}'='{v}' is not an integer"))
            }),
        }
    }

    /// Canonical string form (sorted keys); input to the provenance hash.
    pub fn canonical(&self) -> String {
        let mut s = self.kind.name().to_string();
        if !self.params.is_empty() {
            s.push(':');
            let parts: Vec<String> = self
                .params
                .iter()
                .map(|(k, v)| format!("{k}={v}"))
                .collect();
            s.push_str(&parts.join(","));
        }
        s
    }

    /// Whether this extractor consumes `.gcft` files instead of images.
    pub fn expects_feature_files(&self) -> bool {
        self.kind == ExtractorKind::ExternalFile
    }
}

impl fmt::Display for ExtractorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical())
    }
}
