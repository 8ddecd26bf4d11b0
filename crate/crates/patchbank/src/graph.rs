//! kNN feature graphs, max-relative graph convolution, and the feature
//! pyramid built from them.
//!
//! A [`FeatureGraph`] connects each patch vector to its k nearest neighbors
//! in feature space (edges directed neighbor to node). The convolution
//! aggregates per node i the elementwise max of (f_i - f_j) over its
//! neighbors, then applies a linear update, inference-form batch norm and
//! ReLU. The pyramid stacks these stages behind an average-pool stem, with
//! seeded orthonormal lifts raising the feature dimension between stages.
//!
//! Determinism contract: per-node reductions run sequentially in neighbor-
//! list order; node loops may run in parallel. Repeat runs are bit-identical.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::binio;
use crate::error::{Error, Result};
use crate::features::{ImageTensor, PatchFeatureGrid};

const GCWB_MAGIC: &[u8; 4] = b"GCWB";
const GCWB_VERSION: u16 = 1;

/// Which way the relative difference in the aggregation points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RelativeSign {
    /// f_i - f_j: the printed form of the aggregation.
    #[default]
    NodeMinusNeighbor,
    /// f_j - f_i: the convention of the original max-relative operator.
    NeighborMinusNode,
}

impl RelativeSign {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "node-minus-neighbor" => Ok(RelativeSign::NodeMinusNeighbor),
            "neighbor-minus-node" => Ok(RelativeSign::NeighborMinusNode),
            other => Err(Error::InvalidConfig(format!(
                "relative sign '{other}' (expected node-minus-neighbor|neighbor-minus-node)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RelativeSign::NodeMinusNeighbor => "node-minus-neighbor",
            RelativeSign::NeighborMinusNode => "neighbor-minus-node",
        }
    }
}

// ---------------------------------------------------------------------------
// Feature graph
// ---------------------------------------------------------------------------

/// Directed kNN graph over node feature vectors.
///
/// Neighbor lists are sorted by (distance ascending, index ascending), hold
/// exactly `min(k, node_count - 1)` entries and never contain the node
/// itself.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGraph {
    pub node_count: usize,
    pub dim: usize,
    pub node_features: Vec<f32>,
    pub neighbors: Vec<Vec<u32>>,
    pub k: usize,
}

impl FeatureGraph {
    #[inline]
    pub fn feature(&self, node: usize) -> &[f32] {
        &self.node_features[node * self.dim..(node + 1) * self.dim]
    }

    /// Same edges, new node features. Dimension must match: edges were built
    /// in a feature space of this dimensionality and block stacks keep it.
    pub fn with_features(&self, node_features: Vec<f32>) -> Result<FeatureGraph> {
        if node_features.len() != self.node_count * self.dim {
            return Err(Error::DimensionMismatch {
                context: "graph feature replacement".into(),
                left: node_features.len(),
                right: self.node_count * self.dim,
            });
        }
        Ok(FeatureGraph {
            node_features,
            ..self.clone()
        })
    }
}

/// Squared Euclidean distance, accumulated in f64 in component order.
#[inline]
fn dist_sq(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b.iter()) {
        let d = *x as f64 - *y as f64;
        acc += d * d;
    }
    acc
}

/// Connect each patch vector to its `k` nearest neighbors (Euclidean, self
/// excluded, ties to the smaller index, `k` clamped to `node_count - 1`).
pub fn build_knn_graph(grid: &PatchFeatureGrid, k: usize) -> Result<FeatureGraph> {
    if k == 0 {
        return Err(Error::InvalidConfig("knn neighbor count must be >= 1".into()));
    }
    let n = grid.len();
    let kk = k.min(n - 1);
    let neighbors: Vec<Vec<u32>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let fi = grid.vector_at(i);
            let mut cand: Vec<(f64, u32)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (dist_sq(fi, grid.vector_at(j)), j as u32))
                .collect();
            cand.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            cand.truncate(kk);
            cand.into_iter().map(|(_, j)| j).collect()
        })
        .collect();
    Ok(FeatureGraph {
        node_count: n,
        dim: grid.dim,
        node_features: grid.features.clone(),
        neighbors,
        k,
    })
}

// ---------------------------------------------------------------------------
// Stage weights
// ---------------------------------------------------------------------------

/// Linear update plus inference-form batch norm for one pyramid stage.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphStageWeights {
    pub dim_in: usize,
    pub dim_out: usize,
    /// dim_in x dim_out, row-major: y[o] = sum_d x[d] * w_update[d*dim_out+o].
    pub w_update: Vec<f32>,
    pub bn_scale: Vec<f32>,
    pub bn_shift: Vec<f32>,
    pub bn_mean: Vec<f32>,
    pub bn_var: Vec<f32>,
    pub epsilon: f32,
}

impl GraphStageWeights {
    /// Identity update and identity normalization: output = ReLU(input).
    pub fn identity(dim: usize) -> Self {
        let mut w_update = vec![0.0f32; dim * dim];
        for d in 0..dim {
            w_update[d * dim + d] = 1.0;
        }
        GraphStageWeights {
            dim_in: dim,
            dim_out: dim,
            w_update,
            bn_scale: vec![1.0; dim],
            bn_shift: vec![0.0; dim],
            bn_mean: vec![0.0; dim],
            bn_var: vec![1.0; dim],
            epsilon: 0.0,
        }
    }

    /// Seeded random weights: W entries N(0, 1/dim_in), identity-style norm.
    pub fn synth(dim: usize, rng: &mut ChaCha12Rng) -> Self {
        let normal = Normal::new(0.0f64, (1.0 / dim as f64).sqrt())
            .expect("finite std dev");
        let w_update = (0..dim * dim)
            .map(|_| normal.sample(rng) as f32)
            .collect();
        GraphStageWeights {
            dim_in: dim,
            dim_out: dim,
            w_update,
            bn_scale: vec![1.0; dim],
            bn_shift: vec![0.0; dim],
            bn_mean: vec![0.0; dim],
            bn_var: vec![1.0; dim],
            epsilon: 1e-5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim_in == 0 || self.dim_out == 0 {
            return Err(Error::InvalidField {
                format: "GCWB",
                detail: "zero weight dimension".into(),
            });
        }
        let checks: [(&str, usize, &[f32]); 5] = [
            ("w_update", self.dim_in * self.dim_out, &self.w_update),
            ("bn_scale", self.dim_out, &self.bn_scale),
            ("bn_shift", self.dim_out, &self.bn_shift),
            ("bn_mean", self.dim_out, &self.bn_mean),
            ("bn_var", self.dim_out, &self.bn_var),
        ];
        for (name, want, arr) in checks {
            if arr.len() != want {
                return Err(Error::DimensionMismatch {
                    context: format!("stage weights {name}"),
                    left: arr.len(),
                    right: want,
                });
            }
            if arr.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidField {
                    format: "GCWB",
                    detail: format!("non-finite value in {name}"),
                });
            }
        }
        if self.bn_var.iter().any(|&v| v <= 0.0) {
            return Err(Error::InvalidField {
                format: "GCWB",
                detail: "bn_var entries must be > 0".into(),
            });
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(Error::InvalidField {
                format: "GCWB",
                detail: format!("epsilon {} must be finite and >= 0", self.epsilon),
            });
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Max-relative convolution
// ---------------------------------------------------------------------------

/// The aggregation alone: per node the elementwise max of signed feature
/// differences over its neighbor list, zero vector if the list is empty.
pub fn max_relative_aggregate(g: &FeatureGraph, sign: RelativeSign) -> Vec<f32> {
    let dim = g.dim;
    let mut out = vec![0.0f32; g.node_count * dim];
    out.par_chunks_mut(dim).enumerate().for_each(|(i, acc)| {
        let fi = g.feature(i);
        for (ni, &j) in g.neighbors[i].iter().enumerate() {
            let fj = g.feature(j as usize);
            for d in 0..dim {
                let diff = match sign {
                    RelativeSign::NodeMinusNeighbor => fi[d] - fj[d],
                    RelativeSign::NeighborMinusNode => fj[d] - fi[d],
                };
                if ni == 0 {
                    acc[d] = diff;
                } else {
                    acc[d] = acc[d].max(diff);
                }
            }
        }
    });
    out
}

/// Full convolution: aggregate, then per node ReLU(BN(f'' W_update)).
///
/// The matmul and normalization accumulate in f64 in fixed component order,
/// so outputs depend only on each node's own feature and neighbor list.
pub fn max_relative_conv(
    g: &FeatureGraph,
    w: &GraphStageWeights,
    sign: RelativeSign,
) -> Result<Vec<f32>> {
    if g.dim != w.dim_in {
        return Err(Error::DimensionMismatch {
            context: "conv input dim".into(),
            left: g.dim,
            right: w.dim_in,
        });
    }
    w.validate()?;
    let agg = max_relative_aggregate(g, sign);
    let (din, dout) = (w.dim_in, w.dim_out);
    let mut out = vec![0.0f32; g.node_count * dout];
    out.par_chunks_mut(dout).enumerate().for_each(|(i, node)| {
        let x = &agg[i * din..(i + 1) * din];
        for (o, slot) in node.iter_mut().enumerate() {
            let mut acc = 0.0f64;
            for (d, &xd) in x.iter().enumerate() {
                acc += xd as f64 * w.w_update[d * dout + o] as f64;
            }
            let norm = (acc - w.bn_mean[o] as f64)
                / (w.bn_var[o] as f64 + w.epsilon as f64).sqrt()
                * w.bn_scale[o] as f64
                + w.bn_shift[o] as f64;
            *slot = norm.max(0.0) as f32;
        }
    });
    Ok(out)
}

// ---------------------------------------------------------------------------
// Pyramid
// ---------------------------------------------------------------------------

/// One pyramid stage: feature dimension, kNN degree, conv blocks to stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PyramidStage {
    pub dim: usize,
    pub k: usize,
    pub blocks: usize,
}

/// Architecture of the graph feature pyramid.
///
/// The stem average-pools the image by `stem_downsample` and lifts channels
/// into the stage-1 dimension; every later stage is preceded by a
/// `stage_downsample` average pool plus a lift. `tap_stage` (1-based) names
/// the stage whose output becomes the extracted PatchFeatureGrid.
#[derive(Debug, Clone, PartialEq)]
pub struct PyramidSpec {
    pub stages: Vec<PyramidStage>,
    pub stem_downsample: usize,
    pub stage_downsample: usize,
    pub tap_stage: usize,
    pub lift_seed: u64,
    pub relative_sign: RelativeSign,
    /// Rebuild the kNN graph from the updated features before every block
    /// instead of sharing one graph per stage.
    pub rebuild_per_block: bool,
}

impl Default for PyramidSpec {
    fn default() -> Self {
        PyramidSpec {
            stages: vec![
                PyramidStage { dim: 48, k: 9, blocks: 2 },
                PyramidStage { dim: 96, k: 9, blocks: 2 },
                PyramidStage { dim: 240, k: 9, blocks: 2 },
                PyramidStage { dim: 384, k: 9, blocks: 2 },
            ],
            stem_downsample: 4,
            stage_downsample: 2,
            tap_stage: 2,
            lift_seed: 0,
            relative_sign: RelativeSign::NodeMinusNeighbor,
            rebuild_per_block: false,
        }
    }
}

impl PyramidSpec {
    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::InvalidConfig("pyramid has no stages".into()));
        }
        if self.tap_stage == 0 || self.tap_stage > self.stages.len() {
            return Err(Error::InvalidConfig(format!(
                "tap stage {} out of range 1..={}",
                self.tap_stage,
                self.stages.len()
            )));
        }
        if self.stem_downsample == 0 || self.stage_downsample == 0 {
            return Err(Error::InvalidConfig("downsample factors must be >= 1".into()));
        }
        for (s, st) in self.stages.iter().enumerate() {
            if st.dim == 0 || st.k == 0 || st.blocks == 0 {
                return Err(Error::InvalidConfig(format!(
                    "stage {} has a zero field (dim={}, k={}, blocks={})",
                    s + 1,
                    st.dim,
                    st.k,
                    st.blocks
                )));
            }
            // lifts require non-decreasing dims (orthonormal columns exist)
            if s > 0 && st.dim < self.stages[s - 1].dim {
                return Err(Error::InvalidConfig(format!(
                    "stage {} dim {} is below stage {} dim {}",
                    s + 1,
                    st.dim,
                    s,
                    self.stages[s - 1].dim
                )));
            }
        }
        Ok(())
    }

    /// Pixel footprint of one node at 1-based stage `s`.
    pub fn stage_stride(&self, s: usize) -> usize {
        self.stem_downsample * self.stage_downsample.pow((s - 1) as u32)
    }

    /// Apply extractor-parameter overrides: `tap`, `seed` (lift), `k`,
    /// per-block graph rebuilding.
    pub fn with_overrides(
        mut self,
        tap: Option<usize>,
        seed: Option<u64>,
        k: Option<usize>,
        rebuild_per_block: Option<bool>,
    ) -> Result<Self> {
        if let Some(t) = tap {
            self.tap_stage = t;
        }
        if let Some(s) = seed {
            self.lift_seed = s;
        }
        if let Some(k) = k {
            for st in &mut self.stages {
                st.k = k;
            }
        }
        if let Some(r) = rebuild_per_block {
            self.rebuild_per_block = r;
        }
        self.validate()?;
        Ok(self)
    }
}

/// One GraphStageWeights per stage, shared by that stage's blocks.
pub type PyramidWeights = Vec<GraphStageWeights>;

/// Deterministic weight bundle for a spec: one synth stage-weight set per
/// stage, drawn from a single seeded stream in stage order.
pub fn synth_pyramid_weights(spec: &PyramidSpec, seed: u64) -> PyramidWeights {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    spec.stages
        .iter()
        .map(|st| GraphStageWeights::synth(st.dim, &mut rng))
        .collect()
}

fn validate_bundle(spec: &PyramidSpec, weights: &PyramidWeights) -> Result<()> {
    if weights.len() != spec.stages.len() {
        return Err(Error::DimensionMismatch {
            context: "weight bundle stage count".into(),
            left: weights.len(),
            right: spec.stages.len(),
        });
    }
    for (s, (st, w)) in spec.stages.iter().zip(weights.iter()).enumerate() {
        if w.dim_in != st.dim || w.dim_out != st.dim {
            return Err(Error::StageShape {
                stage: s + 1,
                detail: format!(
                    "weights are {}x{}, stage dim is {}",
                    w.dim_in, w.dim_out, st.dim
                ),
            });
        }
        w.validate()?;
    }
    Ok(())
}

/// Column-orthonormal d_out x d_in matrix (f64, row-major) via Gram-Schmidt
/// with reorthogonalization on seeded Gaussian draws.
fn orthonormal_columns(rng: &mut ChaCha12Rng, d_out: usize, d_in: usize) -> Result<Vec<f64>> {
    if d_out < d_in {
        return Err(Error::invariant(
            "lift-widens",
            format!("cannot lift {d_in} dims into {d_out}"),
        ));
    }
    let normal = Normal::new(0.0f64, 1.0).expect("finite std dev");
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(d_in);
    for _ in 0..d_in {
        let mut attempts = 0;
        let col = loop {
            let mut v: Vec<f64> = (0..d_out).map(|_| normal.sample(rng)).collect();
            for _ in 0..2 {
                for q in &cols {
                    let dot: f64 = q.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
                    for (qi, vi) in q.iter().zip(v.iter_mut()) {
                        *vi -= dot * qi;
                    }
                }
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-8 {
                for x in &mut v {
                    *x /= norm;
                }
                break v;
            }
            attempts += 1;
            if attempts > 100 {
                return Err(Error::invariant(
                    "lift-degenerate",
                    "random column collapsed during orthogonalization",
                ));
            }
        };
        cols.push(col);
    }
    let mut m = vec![0.0f64; d_out * d_in];
    for (j, col) in cols.iter().enumerate() {
        for (r, &v) in col.iter().enumerate() {
            m[r * d_in + j] = v;
        }
    }
    Ok(m)
}

fn apply_lift(m: &[f64], d_out: usize, d_in: usize, x: &[f32]) -> Vec<f32> {
    (0..d_out)
        .map(|r| {
            let mut acc = 0.0f64;
            for j in 0..d_in {
                acc += m[r * d_in + j] * x[j] as f64;
            }
            acc as f32
        })
        .collect()
}

/// Average-pool a node grid by `factor` in both axes, f64 accumulation in
/// row-major window order.
fn avg_pool(
    feats: &[f32],
    rows: usize,
    cols: usize,
    dim: usize,
    factor: usize,
) -> (Vec<f32>, usize, usize) {
    let (orows, ocols) = (rows / factor, cols / factor);
    let mut out = vec![0.0f32; orows * ocols * dim];
    let inv = 1.0 / (factor * factor) as f64;
    for r in 0..orows {
        for c in 0..ocols {
            let node = &mut out[(r * ocols + c) * dim..(r * ocols + c + 1) * dim];
            for (d, slot) in node.iter_mut().enumerate() {
                let mut acc = 0.0f64;
                for dy in 0..factor {
                    for dx in 0..factor {
                        let src = ((r * factor + dy) * cols + (c * factor + dx)) * dim + d;
                        acc += feats[src] as f64;
                    }
                }
                *slot = (acc * inv) as f32;
            }
        }
    }
    (out, orows, ocols)
}

/// Run every pyramid stage and return each stage's output grid in order.
pub fn pyramid_stage_outputs(
    img: &ImageTensor,
    spec: &PyramidSpec,
    weights: &PyramidWeights,
) -> Result<Vec<PatchFeatureGrid>> {
    spec.validate()?;
    validate_bundle(spec, weights)?;
    let stem = spec.stem_downsample;
    if !img.height.is_multiple_of(stem) || !img.width.is_multiple_of(stem) || img.height == 0 || img.width == 0 {
        return Err(Error::StageShape {
            stage: 1,
            detail: format!(
                "image {}x{} is not divisible by the stem factor {stem}",
                img.height, img.width
            ),
        });
    }
    let d0 = spec.stages[0].dim;
    if d0 < img.channels {
        return Err(Error::StageShape {
            stage: 1,
            detail: format!("stage dim {d0} is below the channel count {}", img.channels),
        });
    }

    // stem: average pool the image, then lift channels into stage-1 dim
    let (pooled, mut rows, mut cols) =
        avg_pool(&img.data, img.height, img.width, img.channels, stem);
    let mut lift_rng = ChaCha12Rng::seed_from_u64(spec.lift_seed);
    let stem_lift = orthonormal_columns(&mut lift_rng, d0, img.channels)?;
    let mut feats = vec![0.0f32; rows * cols * d0];
    for i in 0..rows * cols {
        let y = apply_lift(
            &stem_lift,
            d0,
            img.channels,
            &pooled[i * img.channels..(i + 1) * img.channels],
        );
        feats[i * d0..(i + 1) * d0].copy_from_slice(&y);
    }

    let mut outputs = Vec::with_capacity(spec.stages.len());
    for (s, st) in spec.stages.iter().enumerate() {
        if s > 0 {
            let f = spec.stage_downsample;
            if rows % f != 0 || cols % f != 0 || rows / f == 0 || cols / f == 0 {
                return Err(Error::StageShape {
                    stage: s + 1,
                    detail: format!("cannot downsample a {rows}x{cols} grid by {f}"),
                });
            }
            let prev_dim = spec.stages[s - 1].dim;
            let (pooled, r2, c2) = avg_pool(&feats, rows, cols, prev_dim, f);
            rows = r2;
            cols = c2;
            let lift = orthonormal_columns(&mut lift_rng, st.dim, prev_dim)?;
            let mut lifted = vec![0.0f32; rows * cols * st.dim];
            for i in 0..rows * cols {
                let y = apply_lift(
                    &lift,
                    st.dim,
                    prev_dim,
                    &pooled[i * prev_dim..(i + 1) * prev_dim],
                );
                lifted[i * st.dim..(i + 1) * st.dim].copy_from_slice(&y);
            }
            feats = lifted;
        }
        let grid = PatchFeatureGrid {
            rows,
            cols,
            dim: st.dim,
            stride_px: spec.stage_stride(s + 1),
            features: feats.clone(),
        };
        // one graph per stage by default; blocks update features on fixed
        // edges unless rebuild_per_block is set
        let graph = build_knn_graph(&grid, st.k)?;
        for block in 0..st.blocks {
            let current = if block == 0 {
                graph.clone()
            } else if spec.rebuild_per_block {
                let moved = PatchFeatureGrid {
                    rows,
                    cols,
                    dim: st.dim,
                    stride_px: spec.stage_stride(s + 1),
                    features: feats.clone(),
                };
                build_knn_graph(&moved, st.k)?
            } else {
                graph.with_features(feats.clone())?
            };
            feats = max_relative_conv(&current, &weights[s], spec.relative_sign)?;
        }
        outputs.push(PatchFeatureGrid {
            rows,
            cols,
            dim: st.dim,
            stride_px: spec.stage_stride(s + 1),
            features: feats.clone(),
        });
    }
    Ok(outputs)
}

/// Forward pass returning the tap stage's grid.
pub fn graph_pyramid_forward(
    img: &ImageTensor,
    spec: &PyramidSpec,
    weights: &PyramidWeights,
) -> Result<PatchFeatureGrid> {
    let mut outputs = pyramid_stage_outputs(img, spec, weights)?;
    Ok(outputs.swap_remove(spec.tap_stage - 1))
}

// ---------------------------------------------------------------------------
// GCWB weight-bundle files
// ---------------------------------------------------------------------------

/// Encode a weight bundle: magic, u16 version, u32 stage count, then per
/// stage the weight arrays in declared order (w_update, bn_scale, bn_shift,
/// bn_mean, bn_var, epsilon), all little-endian f32.
///
/// The format carries no dimension fields; decoding requires the
/// `PyramidSpec` the bundle was built for.
pub fn encode_weight_bundle(weights: &PyramidWeights) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(GCWB_MAGIC);
    buf.extend_from_slice(&GCWB_VERSION.to_le_bytes());
    buf.extend_from_slice(&(weights.len() as u32).to_le_bytes());
    for w in weights {
        for arr in [&w.w_update, &w.bn_scale, &w.bn_shift, &w.bn_mean, &w.bn_var] {
            for v in arr.iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        buf.extend_from_slice(&w.epsilon.to_le_bytes());
    }
    buf
}

pub fn decode_weight_bundle(buf: &[u8], spec: &PyramidSpec) -> Result<PyramidWeights> {
    binio::expect_magic(buf, GCWB_MAGIC, "GCWB")?;
    let mut off = 4;
    let version = binio::read_u16(buf, &mut off, "GCWB", "version")?;
    if version != GCWB_VERSION {
        return Err(Error::UnsupportedVersion {
            format: "GCWB",
            found: version,
            expected: GCWB_VERSION,
        });
    }
    let stages = binio::read_u32(buf, &mut off, "GCWB", "stage count")? as usize;
    if stages != spec.stages.len() {
        return Err(Error::InvalidField {
            format: "GCWB",
            detail: format!(
                "bundle has {stages} stages, spec expects {}",
                spec.stages.len()
            ),
        });
    }
    let mut weights = Vec::with_capacity(stages);
    for (s, st) in spec.stages.iter().enumerate() {
        let dim = st.dim;
        let w_update = binio::read_f32s(buf, &mut off, dim * dim, "GCWB", &format!("stage {} w_update", s + 1))?;
        let bn_scale = binio::read_f32s(buf, &mut off, dim, "GCWB", &format!("stage {} bn_scale", s + 1))?;
        let bn_shift = binio::read_f32s(buf, &mut off, dim, "GCWB", &format!("stage {} bn_shift", s + 1))?;
        let bn_mean = binio::read_f32s(buf, &mut off, dim, "GCWB", &format!("stage {} bn_mean", s + 1))?;
        let bn_var = binio::read_f32s(buf, &mut off, dim, "GCWB", &format!("stage {} bn_var", s + 1))?;
        let epsilon = binio::read_f32s(buf, &mut off, 1, "GCWB", &format!("stage {} epsilon", s + 1))?[0];
        let w = GraphStageWeights {
            dim_in: dim,
            dim_out: dim,
            w_update,
            bn_scale,
            bn_shift,
            bn_mean,
            bn_var,
            epsilon,
        };
        w.validate()?;
        weights.push(w);
    }
    binio::expect_end(buf, off, "GCWB")?;
    Ok(weights)
}

pub fn write_weight_bundle(weights: &PyramidWeights, path: &Path) -> Result<()> {
    fs::write(path, encode_weight_bundle(weights))
        .map_err(|e| Error::io(format!("write {}", path.display()), e))
}

pub fn load_weight_bundle(path: &Path, spec: &PyramidSpec) -> Result<PyramidWeights> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let buf = fs::read(path).map_err(|e| Error::io(format!("read {}", path.display()), e))?;
    decode_weight_bundle(&buf, spec)
}
