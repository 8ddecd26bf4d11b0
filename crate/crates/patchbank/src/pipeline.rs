//! End-to-end orchestration: method resolution, category evaluation, sweeps.
//!
//! A method names a (augmentation, feature family) recipe: `plain` scores
//! unaugmented features, `aug_r` fills the bank with rotated variants, and
//! `graphcore` relies on isometry-robust features instead of augmentation.
//! The resolved configuration is hashed into every output so artifacts can
//! be traced back to the exact settings that produced them.

use std::fs;
use std::path::{Path, PathBuf};

use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::AugmentSpec;
use crate::bank::{
    build_bank, encode_bank, resolve_extractor, sha256_hex, CoresetConfig, MemoryBank,
    PatchExtractor, Sample, WeightSource,
};
use crate::error::{Error, Result};
use crate::features::{load_feature_tensor, load_image, ExtractorKind, ExtractorSpec};
use crate::graph::RelativeSign;
use crate::metrics::{
    auroc, pixel_auroc, time_inference, EvalReport, PixelAurocMode, TimingBlock,
};
use crate::scoring::{load_test_grids, score_dataset, ScoreConfig, ScoreMode, ScoredImage};

/// Named (augmentation, feature family) recipes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Method {
    /// Unaugmented bank over plain features.
    #[default]
    Plain,
    /// Bank augmented with rotated variants.
    AugR,
    /// Unaugmented bank over isometry-robust features.
    Graphcore,
}

impl Method {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(Method::Plain),
            "aug_r" => Ok(Method::AugR),
            "graphcore" => Ok(Method::Graphcore),
            other => Err(Error::InvalidConfig(format!(
                "method '{other}' (expected plain|aug_r|graphcore)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Plain => "plain",
            Method::AugR => "aug_r",
            Method::Graphcore => "graphcore",
        }
    }

    fn default_extractor(self) -> &'static str {
        match self {
            Method::Plain | Method::AugR => "toy",
            Method::Graphcore => "pyramid",
        }
    }

    fn allows(self, kind: &ExtractorKind) -> bool {
        match self {
            Method::Plain => matches!(
                kind,
                ExtractorKind::ToyIsometric | ExtractorKind::RawPixel | ExtractorKind::ExternalFile
            ),
            // augmentation transforms images, so file-fed features are out
            Method::AugR => {
                matches!(kind, ExtractorKind::ToyIsometric | ExtractorKind::RawPixel)
            }
            Method::Graphcore => {
                matches!(kind, ExtractorKind::ToyIsometric | ExtractorKind::GraphPyramid)
            }
        }
    }
}

/// Full pipeline configuration before resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub method: Method,
    /// Number of training images (shots) the bank is built from.
    pub shots: usize,
    pub ratio: f64,
    /// Override for the pyramid's per-stage neighbor count.
    pub k_neighbors: Option<usize>,
    pub seed: u64,
    /// Seeded random shot selection; None takes the first shots in path order.
    pub shot_seed: Option<u64>,
    /// Extractor selector string; None picks the method default.
    pub extractor: Option<String>,
    /// Augmentation clauses; only `aug_r` accepts them (default: rotations).
    pub aug: Vec<String>,
    pub score_mode: ScoreMode,
    pub knn_score_k: usize,
    pub sigma: f64,
    pub proj_dim: Option<usize>,
    pub dedup: bool,
    pub relative_sign: RelativeSign,
    pub weights_file: Option<PathBuf>,
    pub synth_weights: Option<u64>,
    pub pixel_mode: PixelAurocMode,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            method: Method::Plain,
            shots: 1,
            ratio: 0.01,
            k_neighbors: None,
            seed: 0,
            shot_seed: None,
            extractor: None,
            aug: Vec::new(),
            score_mode: ScoreMode::Max,
            knn_score_k: 3,
            sigma: 4.0,
            proj_dim: None,
            dedup: true,
            relative_sign: RelativeSign::NodeMinusNeighbor,
            weights_file: None,
            synth_weights: None,
            pixel_mode: PixelAurocMode::Pooled,
        }
    }
}

/// A resolved, validated pipeline ready to run.
pub struct ResolvedPipeline {
    pub method: Method,
    pub extractor: PatchExtractor,
    pub aug: AugmentSpec,
    pub coreset: CoresetConfig,
    pub score: ScoreConfig,
    pub pixel_mode: PixelAurocMode,
    pub shots: usize,
    pub shot_seed: Option<u64>,
    pub config_hash: String,
}

/// Canonical serialization of a resolved configuration, hashed into outputs.
#[derive(Serialize)]
struct ConfigSummary<'a> {
    method: &'a str,
    shots: usize,
    ratio: f64,
    k_neighbors: Option<usize>,
    seed: u64,
    shot_seed: Option<u64>,
    extractor: String,
    aug: Vec<String>,
    score_mode: &'a str,
    knn_score_k: usize,
    sigma: f64,
    proj_dim: Option<usize>,
    dedup: bool,
    relative_sign: &'a str,
    pixel_auroc: &'a str,
}

impl PipelineConfig {
    pub fn resolve(&self) -> Result<ResolvedPipeline> {
        if self.shots == 0 {
            return Err(Error::InvalidConfig("shot count must be >= 1".into()));
        }
        let spec_str = self
            .extractor
            .clone()
            .unwrap_or_else(|| self.method.default_extractor().to_string());
        let mut spec = ExtractorSpec::parse(&spec_str)?;
        if !self.method.allows(&spec.kind) {
            return Err(Error::InvalidConfig(format!(
                "method '{}' cannot use the '{}' extractor",
                self.method.name(),
                spec.kind.name()
            )));
        }
        let aug = match self.method {
            Method::Plain | Method::Graphcore => {
                if !self.aug.is_empty() {
                    return Err(Error::InvalidAugment(format!(
                        "method '{}' does not take augmentation clauses",
                        self.method.name()
                    )));
                }
                AugmentSpec::none()
            }
            Method::AugR => {
                if self.aug.is_empty() {
                    AugmentSpec::full_rotation()
                } else {
                    AugmentSpec::parse_clauses(&self.aug)?
                }
            }
        };
        if self.weights_file.is_some() && self.synth_weights.is_some() {
            return Err(Error::InvalidConfig(
                "pass either a weight file or a synthesis seed, not both".into(),
            ));
        }
        let weights = match (&self.weights_file, self.synth_weights) {
            (Some(p), None) => WeightSource::File(p.clone()),
            (None, Some(s)) => WeightSource::Synth(s),
            _ => WeightSource::default(),
        };
        if let Some(k) = self.k_neighbors {
            if k == 0 {
                return Err(Error::InvalidConfig("k_neighbors must be >= 1".into()));
            }
            // the explicit flag wins over a k= parameter in the selector
            if matches!(spec.kind, ExtractorKind::GraphPyramid) {
                spec.params.insert("k".into(), k.to_string());
            }
        }
        let extractor = resolve_extractor(&spec, &weights, self.relative_sign)?;
        let coreset = CoresetConfig {
            ratio: self.ratio,
            proj_dim: self.proj_dim,
            seed: self.seed,
            dedup: self.dedup,
        };
        coreset.validate()?;
        let score = ScoreConfig {
            mode: self.score_mode,
            knn_k: self.knn_score_k,
            sigma: self.sigma,
        };
        score.validate()?;

        let summary = ConfigSummary {
            method: self.method.name(),
            shots: self.shots,
            ratio: self.ratio,
            k_neighbors: self.k_neighbors,
            seed: self.seed,
            shot_seed: self.shot_seed,
            extractor: extractor.describe(),
            aug: aug.describe(),
            score_mode: self.score_mode.name(),
            knn_score_k: self.knn_score_k,
            sigma: self.sigma,
            proj_dim: self.proj_dim,
            dedup: self.dedup,
            relative_sign: self.relative_sign.name(),
            pixel_auroc: self.pixel_mode.name(),
        };
        let config_hash = sha256_hex(&serde_json::to_string(&summary)?);
        Ok(ResolvedPipeline {
            method: self.method,
            extractor,
            aug,
            coreset,
            score,
            pixel_mode: self.pixel_mode,
            shots: self.shots,
            shot_seed: self.shot_seed,
            config_hash,
        })
    }
}

fn list_train_files(train_dir: &Path, extractor: &PatchExtractor) -> Result<Vec<PathBuf>> {
    if !train_dir.is_dir() {
        return Err(Error::MissingFile(train_dir.to_path_buf()));
    }
    let mut files = Vec::new();
    for entry in
        fs::read_dir(train_dir).map_err(|e| Error::io(format!("read {}", train_dir.display()), e))?
    {
        let path = entry
            .map_err(|e| Error::io(format!("read {}", train_dir.display()), e))?
            .path();
        let ext = path.extension().and_then(|e| e.to_str());
        let wanted = if extractor.expects_feature_files() {
            ext == Some("gcft")
        } else {
            matches!(ext, Some("png") | Some("ppm"))
        };
        if wanted {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::EmptyTrainSet(train_dir.to_path_buf()));
    }
    Ok(files)
}

/// Pick the shot files: the first `shots` in path order, or a seeded random
/// subset (returned back in path order).
fn select_shots(files: &[PathBuf], shots: usize, shot_seed: Option<u64>) -> Result<Vec<PathBuf>> {
    if shots > files.len() {
        return Err(Error::InvalidConfig(format!(
            "{shots} shots requested but only {} training files found",
            files.len()
        )));
    }
    let mut chosen: Vec<PathBuf> = match shot_seed {
        None => files[..shots].to_vec(),
        Some(seed) => {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let mut idx: Vec<usize> = (0..files.len()).collect();
            idx.shuffle(&mut rng);
            idx[..shots].iter().map(|&i| files[i].clone()).collect()
        }
    };
    chosen.sort();
    Ok(chosen)
}

fn load_samples(paths: &[PathBuf], extractor: &PatchExtractor) -> Result<Vec<Sample>> {
    paths
        .iter()
        .map(|p| {
            Ok(if extractor.expects_feature_files() {
                Sample::Grid(load_feature_tensor(p)?)
            } else {
                Sample::Image(load_image(p)?)
            })
        })
        .collect()
}

/// Everything one evaluation run produces.
pub struct EvalOutcome {
    pub report: EvalReport,
    pub scored: Vec<ScoredImage>,
    pub bank: MemoryBank,
    pub warnings: Vec<String>,
}

/// Build a bank from the category's training shots and evaluate its test set.
/// `time_repeats` adds a wall-clock block; leave it None for byte-stable
/// outputs.
pub fn evaluate_category(
    category_dir: &Path,
    cfg: &PipelineConfig,
    time_repeats: Option<usize>,
) -> Result<EvalOutcome> {
    let resolved = cfg.resolve()?;
    let category = category_dir
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("category")
        .to_string();
    let train_dir = category_dir.join("train").join("good");
    let files = list_train_files(&train_dir, &resolved.extractor)?;
    let shots = select_shots(&files, resolved.shots, resolved.shot_seed)?;
    let samples = load_samples(&shots, &resolved.extractor)?;
    let bank = build_bank(&samples, &resolved.extractor, &resolved.aug, &resolved.coreset)?;
    let scored = score_dataset(category_dir, &bank, &resolved.extractor, &resolved.score)?;

    let warnings: Vec<String> = scored
        .iter()
        .filter(|s| s.mask_missing)
        .map(|s| format!("no ground-truth mask for {}; excluded from pixel metrics", s.id))
        .collect();

    let image_scores: Vec<f64> = scored.iter().map(|s| s.result.image_score).collect();
    let labels: Vec<bool> = scored.iter().map(|s| s.label).collect();
    let image_auroc = auroc(&image_scores, &labels)?;

    let pairs: Vec<(&[f64], &[bool])> = scored
        .iter()
        .filter_map(|s| {
            s.mask
                .as_deref()
                .map(|m| (s.result.pixel_map.as_slice(), m))
        })
        .collect();
    let pixel = match pixel_auroc(&pairs, resolved.pixel_mode) {
        Ok(v) => Some(v),
        Err(Error::SingleClass) => None,
        Err(e) => return Err(e),
    };

    let timing = match time_repeats {
        None => None,
        Some(repeats) => {
            let grids = load_test_grids(category_dir, &resolved.extractor)?;
            Some(TimingBlock {
                mean_inference_seconds: time_inference(&grids, &bank, &resolved.score, repeats)?,
            })
        }
    };

    let report = EvalReport {
        category,
        method: resolved.method.name().into(),
        extractor: resolved.extractor.describe(),
        config_hash: resolved.config_hash.clone(),
        shot_count: resolved.shots,
        ratio: cfg.ratio,
        image_auroc,
        pixel_auroc: pixel,
        bank_vectors: bank.len(),
        bank_bytes: encode_bank(&bank)?.len() as u64,
        timing,
    };
    report.validate()?;
    Ok(EvalOutcome {
        report,
        scored,
        bank,
        warnings,
    })
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

/// Value lists for the sweep dimensions; an empty list keeps the base value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepGrid {
    pub ratios: Vec<f64>,
    pub k_neighbors: Vec<usize>,
    pub shots: Vec<usize>,
    pub methods: Vec<Method>,
}

impl SweepGrid {
    pub fn is_empty(&self) -> bool {
        self.ratios.is_empty()
            && self.k_neighbors.is_empty()
            && self.shots.is_empty()
            && self.methods.is_empty()
    }

    /// Add one `dimension=v1,v2,...` clause.
    pub fn parse_clause(&mut self, clause: &str) -> Result<()> {
        let (key, rest) = clause.split_once('=').ok_or_else(|| {
            Error::InvalidConfig(format!("sweep clause '{clause}' is not dimension=values"))
        })?;
        let values: Vec<&str> = rest.split(',').filter(|v| !v.is_empty()).collect();
        if values.is_empty() {
            return Err(Error::EmptySweep(format!("dimension '{key}' has no values")));
        }
        let dup = |name: &str| Error::InvalidConfig(format!("dimension '{name}' given twice"));
        match key {
            "ratio" => {
                if !self.ratios.is_empty() {
                    return Err(dup(key));
                }
                for v in values {
                    let r: f64 = v.parse().map_err(|_| {
                        Error::InvalidConfig(format!("ratio '{v}' is not a number"))
                    })?;
                    self.ratios.push(r);
                }
            }
            "k_neighbors" => {
                if !self.k_neighbors.is_empty() {
                    return Err(dup(key));
                }
                for v in values {
                    let k: usize = v.parse().map_err(|_| {
                        Error::InvalidConfig(format!("k_neighbors '{v}' is not an integer"))
                    })?;
                    self.k_neighbors.push(k);
                }
            }
            "shots" => {
                if !self.shots.is_empty() {
                    return Err(dup(key));
                }
                for v in values {
                    let s: usize = v.parse().map_err(|_| {
                        Error::InvalidConfig(format!("shots '{v}' is not an integer"))
                    })?;
                    self.shots.push(s);
                }
            }
            "method" => {
                if !self.methods.is_empty() {
                    return Err(dup(key));
                }
                for v in values {
                    self.methods.push(Method::parse(v)?);
                }
            }
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown sweep dimension '{other}' (expected ratio|k_neighbors|shots|method)"
                )));
            }
        }
        Ok(())
    }
}

/// One sweep cell: the tuple that keyed it plus its report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub method: String,
    pub shots: usize,
    pub ratio: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_neighbors: Option<usize>,
    pub report: EvalReport,
}

/// Evaluate the cartesian product method x shots x ratio x k_neighbors.
/// Cells run in parallel (bounded by `jobs`) but are returned in grid order.
pub fn sweep(
    category_dir: &Path,
    base: &PipelineConfig,
    grid: &SweepGrid,
    jobs: Option<usize>,
) -> Result<Vec<SweepCell>> {
    if grid.is_empty() {
        return Err(Error::EmptySweep("no sweep dimensions given".into()));
    }
    let methods = if grid.methods.is_empty() { vec![base.method] } else { grid.methods.clone() };
    let shots = if grid.shots.is_empty() { vec![base.shots] } else { grid.shots.clone() };
    let ratios = if grid.ratios.is_empty() { vec![base.ratio] } else { grid.ratios.clone() };
    let ks: Vec<Option<usize>> = if grid.k_neighbors.is_empty() {
        vec![base.k_neighbors]
    } else {
        grid.k_neighbors.iter().map(|&k| Some(k)).collect()
    };

    let mut cells = Vec::new();
    for &method in &methods {
        for &shot in &shots {
            for &ratio in &ratios {
                for &k in &ks {
                    let mut cfg = base.clone();
                    cfg.method = method;
                    cfg.shots = shot;
                    cfg.ratio = ratio;
                    cfg.k_neighbors = k;
                    cells.push(cfg);
                }
            }
        }
    }

    let run = |cfgs: &[PipelineConfig]| -> Result<Vec<SweepCell>> {
        cfgs.par_iter()
            .map(|cfg| {
                let outcome = evaluate_category(category_dir, cfg, None)?;
                Ok(SweepCell {
                    method: cfg.method.name().into(),
                    shots: cfg.shots,
                    ratio: cfg.ratio,
                    k_neighbors: cfg.k_neighbors,
                    report: outcome.report,
                })
            })
            .collect()
    };

    match jobs {
        None => run(&cells),
        Some(0) => Err(Error::InvalidConfig("jobs must be >= 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
            pool.install(|| run(&cells))
        }
    }
}

/// CSV rendering of sweep results, one row per cell.
pub fn sweep_csv(cells: &[SweepCell]) -> String {
    let mut out = String::from(
        "method,shots,ratio,k_neighbors,image_auroc,pixel_auroc,bank_vectors,bank_bytes,config_hash\n",
    );
    for c in cells {
        let k = c.k_neighbors.map(|k| k.to_string()).unwrap_or_default();
        let pixel = c.report.pixel_auroc.map(|p| p.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            c.method,
            c.shots,
            c.ratio,
            k,
            c.report.image_auroc,
            pixel,
            c.report.bank_vectors,
            c.report.bank_bytes,
            c.report.config_hash
        ));
    }
    out
}

// ---------------------------------------------------------------------------
// Config files
// ---------------------------------------------------------------------------

/// TOML key-value configuration; any field may be omitted. Flags given on
/// the command line win over file values.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub method: Option<String>,
    pub shots: Option<usize>,
    pub ratio: Option<f64>,
    pub k_neighbors: Option<usize>,
    pub seed: Option<u64>,
    pub shot_seed: Option<u64>,
    pub extractor: Option<String>,
    pub aug: Option<Vec<String>>,
    pub score_mode: Option<String>,
    pub knn_score_k: Option<usize>,
    pub sigma: Option<f64>,
    pub proj_dim: Option<usize>,
    pub dedup: Option<bool>,
    pub relative_sign: Option<String>,
    pub weights: Option<PathBuf>,
    pub synth_weights: Option<u64>,
    pub pixel_auroc: Option<String>,
}

pub fn load_config_file(path: &Path) -> Result<ConfigFile> {
    let text = fs::read_to_string(path).map_err(|_| Error::MissingFile(path.to_path_buf()))?;
    toml::from_str(&text)
        .map_err(|e| Error::InvalidConfig(format!("config file {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthSpec};

    fn tiny_dataset(dir: &Path) -> PathBuf {
        let spec = SynthSpec {
            seed: 21,
            image_px: 32,
            patch_px: 4,
            motif_count: 6,
            anomaly_motifs: 2,
            train_images: 3,
            test_normals: 3,
            test_anomalies: 3,
            anomaly_block_cells: 2,
            ..SynthSpec::default()
        };
        generate(&spec, dir).unwrap();
        dir.join(&spec.category)
    }

    fn toy_config() -> PipelineConfig {
        PipelineConfig {
            method: Method::Plain,
            shots: 2,
            ratio: 1.0,
            extractor: Some("toy:patch_px=4".into()),
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn method_extractor_legality() {
        let bad = [
            (Method::Plain, "pyramid"),
            (Method::AugR, "gcft"),
            (Method::AugR, "pyramid"),
            (Method::Graphcore, "raw"),
            (Method::Graphcore, "gcft"),
        ];
        for (method, extractor) in bad {
            let cfg = PipelineConfig {
                method,
                extractor: Some(extractor.into()),
                ..PipelineConfig::default()
            };
            assert!(
                matches!(cfg.resolve(), Err(Error::InvalidConfig(_))),
                "{}/{extractor} accepted",
                method.name()
            );
        }
        for (method, extractor) in [
            (Method::Plain, "toy"),
            (Method::Plain, "raw"),
            (Method::Plain, "gcft"),
            (Method::AugR, "toy"),
            (Method::AugR, "raw"),
            (Method::Graphcore, "toy"),
            (Method::Graphcore, "pyramid"),
        ] {
            let cfg = PipelineConfig {
                method,
                extractor: Some(extractor.into()),
                ..PipelineConfig::default()
            };
            cfg.resolve()
                .unwrap_or_else(|e| panic!("{}/{extractor} rejected: {e}", method.name()));
        }
    }

    #[test]
    fn augmentation_legality_and_defaults() {
        for method in [Method::Plain, Method::Graphcore] {
            let cfg = PipelineConfig {
                method,
                aug: vec!["rotation=90".into()],
                ..PipelineConfig::default()
            };
            assert!(matches!(cfg.resolve(), Err(Error::InvalidAugment(_))));
        }
        let cfg = PipelineConfig {
            method: Method::AugR,
            ..PipelineConfig::default()
        };
        let resolved = cfg.resolve().unwrap();
        assert_eq!(
            resolved.aug.describe(),
            vec!["rotation=0", "rotation=90", "rotation=180", "rotation=270"]
        );
        let cfg = PipelineConfig {
            method: Method::AugR,
            aug: vec!["flip=horizontal".into()],
            ..PipelineConfig::default()
        };
        assert_eq!(cfg.resolve().unwrap().aug.describe(), vec!["flip=horizontal"]);
        // method defaults pick the extractor family
        let cfg = PipelineConfig {
            method: Method::Graphcore,
            ..PipelineConfig::default()
        };
        assert!(cfg.resolve().unwrap().extractor.describe().starts_with("pyramid"));
    }

    #[test]
    fn weights_and_k_neighbor_overrides() {
        let cfg = PipelineConfig {
            method: Method::Graphcore,
            weights_file: Some("w.gcwb".into()),
            synth_weights: Some(3),
            ..PipelineConfig::default()
        };
        assert!(matches!(cfg.resolve(), Err(Error::InvalidConfig(_))));
        let cfg = PipelineConfig {
            method: Method::Graphcore,
            k_neighbors: Some(5),
            synth_weights: Some(3),
            ..PipelineConfig::default()
        };
        let resolved = cfg.resolve().unwrap();
        let desc = resolved.extractor.describe();
        assert!(desc.contains("k=5") && desc.contains("synth:3"), "{desc}");
        assert!(matches!(
            PipelineConfig {
                k_neighbors: Some(0),
                ..PipelineConfig::default()
            }
            .resolve(),
            Err(Error::InvalidConfig(_))
        ));
        // inert on non-pyramid extractors but still part of the config hash
        let base = toy_config();
        let with_k = PipelineConfig {
            k_neighbors: Some(5),
            ..toy_config()
        };
        assert_eq!(
            base.resolve().unwrap().extractor.describe(),
            with_k.resolve().unwrap().extractor.describe()
        );
        assert_ne!(
            base.resolve().unwrap().config_hash,
            with_k.resolve().unwrap().config_hash
        );
    }

    #[test]
    fn config_hash_is_stable_and_sensitive() {
        let cfg = toy_config();
        assert_eq!(
            cfg.resolve().unwrap().config_hash,
            cfg.resolve().unwrap().config_hash
        );
        let other = PipelineConfig {
            seed: 7,
            ..toy_config()
        };
        assert_ne!(
            cfg.resolve().unwrap().config_hash,
            other.resolve().unwrap().config_hash
        );
    }

    #[test]
    fn evaluate_category_end_to_end() {
        let dir = tempfile::tempdir().unwrap();
        let category = tiny_dataset(dir.path());
        let outcome = evaluate_category(&category, &toy_config(), None).unwrap();
        assert_eq!(outcome.report.image_auroc, 1.0);
        assert!(outcome.report.pixel_auroc.is_some());
        assert!(outcome.report.timing.is_none());
        assert_eq!(outcome.report.shot_count, 2);
        assert!(outcome.warnings.is_empty());
        assert_eq!(outcome.scored.len(), 6);
        assert_eq!(outcome.report.category, "synthcat");
        // timing appears only on request
        let timed = evaluate_category(&category, &toy_config(), Some(1)).unwrap();
        let t = timed.report.timing.expect("timing requested");
        assert!(t.mean_inference_seconds >= 0.0);
    }

    #[test]
    fn evaluate_rejects_bad_shot_counts() {
        let dir = tempfile::tempdir().unwrap();
        let category = tiny_dataset(dir.path());
        let cfg = PipelineConfig {
            shots: 99,
            ..toy_config()
        };
        assert!(matches!(
            evaluate_category(&category, &cfg, None),
            Err(Error::InvalidConfig(_))
        ));
        let cfg = PipelineConfig {
            shots: 0,
            ..toy_config()
        };
        assert!(matches!(
            evaluate_category(&category, &cfg, None),
            Err(Error::InvalidConfig(_))
        ));
        // seeded shot selection stays deterministic
        let cfg = PipelineConfig {
            shots: 1,
            shot_seed: Some(5),
            ..toy_config()
        };
        let a = evaluate_category(&category, &cfg, None).unwrap();
        let b = evaluate_category(&category, &cfg, None).unwrap();
        assert_eq!(a.bank.vectors, b.bank.vectors);
    }

    #[test]
    fn evaluate_missing_dirs() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            evaluate_category(dir.path(), &toy_config(), None),
            Err(Error::MissingFile(_))
        ));
        fs::create_dir_all(dir.path().join("train/good")).unwrap();
        assert!(matches!(
            evaluate_category(dir.path(), &toy_config(), None),
            Err(Error::EmptyTrainSet(_))
        ));
    }

    #[test]
    fn sweep_grid_parsing() {
        let mut grid = SweepGrid::default();
        grid.parse_clause("ratio=0.5,1.0").unwrap();
        grid.parse_clause("method=plain,graphcore").unwrap();
        assert_eq!(grid.ratios, vec![0.5, 1.0]);
        assert_eq!(grid.methods, vec![Method::Plain, Method::Graphcore]);
        assert!(matches!(
            grid.parse_clause("ratio=0.9"),
            Err(Error::InvalidConfig(_))
        ));
        let mut grid = SweepGrid::default();
        assert!(matches!(
            grid.parse_clause("ratio="),
            Err(Error::EmptySweep(_))
        ));
        assert!(matches!(
            grid.parse_clause("bogus=1"),
            Err(Error::InvalidConfig(_))
        ));
        assert!(matches!(
            grid.parse_clause("ratio=abc"),
            Err(Error::InvalidConfig(_))
        ));
        assert!(matches!(
            grid.parse_clause("no-equals"),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn sweep_runs_cells_in_grid_order() {
        let dir = tempfile::tempdir().unwrap();
        let category = tiny_dataset(dir.path());
        let mut grid = SweepGrid::default();
        grid.parse_clause("ratio=0.5,1.0").unwrap();
        grid.parse_clause("shots=1,2").unwrap();
        let cells = sweep(&category, &toy_config(), &grid, Some(2)).unwrap();
        assert_eq!(cells.len(), 4);
        let keys: Vec<(usize, f64)> = cells.iter().map(|c| (c.shots, c.ratio)).collect();
        assert_eq!(keys, vec![(1, 0.5), (1, 1.0), (2, 0.5), (2, 1.0)]);
        for c in &cells {
            assert_eq!(c.report.ratio, c.ratio);
            assert_eq!(c.report.shot_count, c.shots);
        }
        let csv = sweep_csv(&cells);
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.starts_with("method,shots,ratio,"));
        // empty grid is refused
        assert!(matches!(
            sweep(&category, &toy_config(), &SweepGrid::default(), None),
            Err(Error::EmptySweep(_))
        ));
        assert!(matches!(
            sweep(&category, &toy_config(), &grid, Some(0)),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn config_file_loading() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(
            &path,
            "method = \"graphcore\"\nratio = 0.25\naug = []\nshots = 2\n",
        )
        .unwrap();
        let file = load_config_file(&path).unwrap();
        assert_eq!(file.method.as_deref(), Some("graphcore"));
        assert_eq!(file.ratio, Some(0.25));
        assert_eq!(file.shots, Some(2));
        fs::write(&path, "unknown_key = 1\n").unwrap();
        assert!(matches!(
            load_config_file(&path),
            Err(Error::InvalidConfig(_))
        ));
        assert!(matches!(
            load_config_file(&dir.path().join("absent.toml")),
            Err(Error::MissingFile(_))
        ));
    }
}
