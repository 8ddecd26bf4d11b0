//! Command-line interface.
//!
//! Exit codes: 0 success, 2 usage errors, 3 data errors (missing or corrupt
//! inputs, undefined metrics), 4 violated internal invariants.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::augment::AugmentSpec;
use crate::bank::{
    build_bank, load_bank, parse_extractor_canon, resolve_extractor, save_bank, sha256_hex,
    CoresetConfig, PatchExtractor, Sample, WeightSource,
};
use crate::error::{Error, Result};
use crate::features::{
    load_feature_tensor, load_image, write_feature_tensor, write_image, ExtractorSpec, ImageTensor,
};
use crate::graph::RelativeSign;
use crate::metrics::PixelAurocMode;
use crate::pipeline::{
    evaluate_category, load_config_file, sweep, sweep_csv, Method, PipelineConfig, SweepGrid,
};
use crate::scoring::{ScoreMode, ScoredImage};
use crate::synth::{generate, SynthSpec};

#[derive(Parser)]
#[command(
    name = "patchbank",
    version,
    about = "Few-shot anomaly detection with coreset patch-memory banks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a memory bank from a directory of training inputs
    BuildBank(BuildBankArgs),
    /// Score a dataset category against an existing bank
    Score(ScoreArgs),
    /// Build a bank from the category's shots and evaluate its test set
    Evaluate(EvaluateArgs),
    /// Evaluate a cartesian grid of configurations
    Sweep(SweepArgs),
    /// Generate a synthetic dataset with certified margins
    Synth(SynthArgs),
    /// Extract a patch feature grid from one image
    Extract(ExtractArgs),
}

#[derive(Args)]
struct ExtractorArgs {
    /// Extractor selector: toy[:patch_px=N] | raw[:patch_px=N] | gcft |
    /// pyramid[:tap=N,seed=N,k=N,rebuild=stage|block]
    #[arg(long)]
    extractor: Option<String>,
    /// Pyramid weight bundle file (GCWB)
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Derive pyramid weights deterministically from this seed
    #[arg(long)]
    synth_weights: Option<u64>,
    /// Aggregation difference direction: node-minus-neighbor | neighbor-minus-node
    #[arg(long)]
    relative_sign: Option<String>,
}

impl ExtractorArgs {
    fn sign(&self) -> Result<RelativeSign> {
        self.relative_sign
            .as_deref()
            .map(RelativeSign::parse)
            .transpose()
            .map(|s| s.unwrap_or_default())
    }

    fn weight_source(&self) -> Result<WeightSource> {
        match (&self.weights, self.synth_weights) {
            (Some(_), Some(_)) => Err(Error::InvalidConfig(
                "pass either a weight file or a synthesis seed, not both".into(),
            )),
            (Some(p), None) => Ok(WeightSource::File(p.clone())),
            (None, Some(s)) => Ok(WeightSource::Synth(s)),
            (None, None) => Ok(WeightSource::default()),
        }
    }

    /// Resolve directly (commands without a method, e.g. build-bank).
    fn resolve(&self, default_selector: &str) -> Result<PatchExtractor> {
        let spec = ExtractorSpec::parse(self.extractor.as_deref().unwrap_or(default_selector))?;
        resolve_extractor(&spec, &self.weight_source()?, self.sign()?)
    }
}

#[derive(Args)]
struct ScoreOpts {
    /// Patch score rule: max | knn-mean
    #[arg(long)]
    score_mode: Option<String>,
    /// Neighbors averaged in knn-mean mode
    #[arg(long)]
    knn_k: Option<usize>,
    /// Pixel-map Gaussian sigma in pixels (0 disables smoothing)
    #[arg(long)]
    sigma: Option<f64>,
}

#[derive(Args)]
struct BuildBankArgs {
    /// Directory of training images (or .gcft grids for the gcft extractor)
    #[arg(long)]
    train: PathBuf,
    #[command(flatten)]
    extractor: ExtractorArgs,
    /// Augmentation clause, repeatable: rotation=0,90,180,270 |
    /// flip=horizontal,vertical | translation=dx:dy,... | scaling=factors
    #[arg(long = "aug")]
    aug: Vec<String>,
    /// Coreset sampling ratio in (0,1]
    #[arg(long)]
    ratio: Option<f64>,
    /// Seed for the coreset projection
    #[arg(long)]
    seed: Option<u64>,
    /// Projection dimension (default min(D,128))
    #[arg(long)]
    proj_dim: Option<usize>,
    /// Keep exact duplicate pool vectors
    #[arg(long)]
    no_dedup: bool,
    /// Output bank file (GCBK)
    #[arg(long)]
    out: PathBuf,
    /// Machine-readable output
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ScoreArgs {
    /// Bank file (GCBK)
    #[arg(long)]
    bank: PathBuf,
    /// Category directory in the dataset layout
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    extractor: ExtractorArgs,
    #[command(flatten)]
    opts: ScoreOpts,
    /// JSON-lines output file (default: stdout)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write per-image heatmap PNGs under this directory
    #[arg(long)]
    heatmap_dir: Option<PathBuf>,
}

/// Configuration flags shared by evaluate and sweep.
#[derive(Args)]
struct BaseConfigArgs {
    /// Method: plain | aug_r | graphcore
    #[arg(long)]
    method: Option<String>,
    /// Number of training shots
    #[arg(long)]
    shots: Option<usize>,
    /// Coreset sampling ratio in (0,1]
    #[arg(long)]
    ratio: Option<f64>,
    /// Override for the pyramid's per-stage neighbor count
    #[arg(long)]
    k_neighbors: Option<usize>,
    /// Seed for the coreset projection
    #[arg(long)]
    seed: Option<u64>,
    /// Select shots at random with this seed instead of path order
    #[arg(long)]
    shot_seed: Option<u64>,
    #[command(flatten)]
    extractor: ExtractorArgs,
    /// Augmentation clause, repeatable (aug_r only)
    #[arg(long = "aug")]
    aug: Vec<String>,
    #[command(flatten)]
    opts: ScoreOpts,
    /// Projection dimension (default min(D,128))
    #[arg(long)]
    proj_dim: Option<usize>,
    /// Keep exact duplicate pool vectors
    #[arg(long)]
    no_dedup: bool,
    /// Pixel AUROC pooling: pooled | per-image-mean
    #[arg(long)]
    pixel_auroc: Option<String>,
    /// TOML config file; command-line flags win over its values
    #[arg(long)]
    config: Option<PathBuf>,
}

impl BaseConfigArgs {
    fn to_pipeline(&self) -> Result<PipelineConfig> {
        let file = match &self.config {
            Some(path) => load_config_file(path)?,
            None => Default::default(),
        };
        let defaults = PipelineConfig::default();
        let method = match self.method.as_deref().or(file.method.as_deref()) {
            Some(s) => Method::parse(s)?,
            None => defaults.method,
        };
        let score_mode = match self.opts.score_mode.as_deref().or(file.score_mode.as_deref()) {
            Some(s) => ScoreMode::parse(s)?,
            None => defaults.score_mode,
        };
        let relative_sign = match self
            .extractor
            .relative_sign
            .as_deref()
            .or(file.relative_sign.as_deref())
        {
            Some(s) => RelativeSign::parse(s)?,
            None => defaults.relative_sign,
        };
        let pixel_mode = match self.pixel_auroc.as_deref().or(file.pixel_auroc.as_deref()) {
            Some(s) => PixelAurocMode::parse(s)?,
            None => defaults.pixel_mode,
        };
        let aug = if !self.aug.is_empty() {
            self.aug.clone()
        } else {
            file.aug.clone().unwrap_or_default()
        };
        let weights_file = self.extractor.weights.clone().or(file.weights.clone());
        let synth_weights = self.extractor.synth_weights.or(file.synth_weights);
        Ok(PipelineConfig {
            method,
            shots: self.shots.or(file.shots).unwrap_or(defaults.shots),
            ratio: self.ratio.or(file.ratio).unwrap_or(defaults.ratio),
            k_neighbors: self.k_neighbors.or(file.k_neighbors),
            seed: self.seed.or(file.seed).unwrap_or(defaults.seed),
            shot_seed: self.shot_seed.or(file.shot_seed),
            extractor: self.extractor.extractor.clone().or(file.extractor.clone()),
            aug,
            score_mode,
            knn_score_k: self
                .opts
                .knn_k
                .or(file.knn_score_k)
                .unwrap_or(defaults.knn_score_k),
            sigma: self.opts.sigma.or(file.sigma).unwrap_or(defaults.sigma),
            proj_dim: self.proj_dim.or(file.proj_dim),
            dedup: if self.no_dedup { false } else { file.dedup.unwrap_or(defaults.dedup) },
            relative_sign,
            weights_file,
            synth_weights,
            pixel_mode,
        })
    }
}

#[derive(Args)]
struct EvaluateArgs {
    /// Category directory in the dataset layout
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    base: BaseConfigArgs,
    /// Sweep one dimension inline: ratio=0.001,0.01 (repeatable)
    #[arg(long = "sweep")]
    sweep: Vec<String>,
    /// Parallel sweep cells (default: PATCHBANK_JOBS or all cores)
    #[arg(long)]
    jobs: Option<usize>,
    /// Write the JSON report (array under --sweep) to this file
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write per-image scores as JSON lines to this file
    #[arg(long)]
    scores: Option<PathBuf>,
    /// Write per-image heatmap PNGs under this directory
    #[arg(long)]
    heatmap_dir: Option<PathBuf>,
    /// Print the report as JSON instead of a text row
    #[arg(long)]
    json: bool,
    /// Measure inference time (adds a non-deterministic timing block)
    #[arg(long)]
    time: bool,
    /// Timed passes over the test set
    #[arg(long, default_value_t = 3)]
    time_repeats: usize,
}

#[derive(Args)]
struct SweepArgs {
    /// Category directory in the dataset layout
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    base: BaseConfigArgs,
    /// Sweep dimension: ratio|k_neighbors|shots|method=v1,v2,... (repeatable)
    #[arg(long = "sweep", required = true)]
    sweep: Vec<String>,
    /// Parallel cells (default: PATCHBANK_JOBS or all cores)
    #[arg(long)]
    jobs: Option<usize>,
    /// Write results as CSV to this file
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Write results as a JSON array to this file
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the JSON array instead of text rows
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct SynthArgs {
    /// Output root; the category directory is created beneath it
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    image_px: Option<usize>,
    #[arg(long)]
    patch_px: Option<usize>,
    /// Number of normal motifs
    #[arg(long)]
    motifs: Option<usize>,
    #[arg(long)]
    anomaly_motifs: Option<usize>,
    /// Number of training images
    #[arg(long)]
    train: Option<usize>,
    #[arg(long)]
    test_normals: Option<usize>,
    #[arg(long)]
    test_anomalies: Option<usize>,
    /// Side of the replaced cell block (0 keeps those images normal)
    #[arg(long)]
    anomaly_block: Option<usize>,
    /// Rotate normal test images instead of drawing fresh tilings
    #[arg(long)]
    rotate_test: bool,
    /// Place motifs without per-cell dihedral transforms
    #[arg(long)]
    no_cell_transforms: bool,
    /// Pixel-value offset of the anomaly band
    #[arg(long)]
    anomaly_shift: Option<u32>,
    /// Restrict each test tiling to a motif subset of this size
    #[arg(long)]
    motifs_per_image: Option<usize>,
    /// Required minimum certified margin
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    category: Option<String>,
    /// Print the manifest as JSON
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ExtractArgs {
    /// Input image (PNG or PPM)
    #[arg(long)]
    input: PathBuf,
    /// Output feature grid file (GCFT)
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    extractor: ExtractorArgs,
    /// Machine-readable output
    #[arg(long)]
    json: bool,
}

/// Parse arguments, dispatch, and map errors to exit codes.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_class() as i32
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::BuildBank(args) => cmd_build_bank(args),
        Command::Score(args) => cmd_score(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Extract(args) => cmd_extract(args),
    }
}

fn list_input_files(dir: &Path, extractor: &PatchExtractor) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::MissingFile(dir.to_path_buf()));
    }
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(format!("read {}", dir.display()), e))? {
        let path = entry
            .map_err(|e| Error::io(format!("read {}", dir.display()), e))?
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
        return Err(Error::EmptyTrainSet(dir.to_path_buf()));
    }
    Ok(files)
}

fn cmd_build_bank(args: BuildBankArgs) -> Result<()> {
    let extractor = args.extractor.resolve("toy")?;
    let aug = if args.aug.is_empty() {
        AugmentSpec::none()
    } else {
        AugmentSpec::parse_clauses(&args.aug)?
    };
    let cfg = CoresetConfig {
        ratio: args.ratio.unwrap_or(0.01),
        proj_dim: args.proj_dim,
        seed: args.seed.unwrap_or(0),
        dedup: !args.no_dedup,
    };
    let files = list_input_files(&args.train, &extractor)?;
    let samples: Vec<Sample> = files
        .iter()
        .map(|p| {
            Ok(if extractor.expects_feature_files() {
                Sample::Grid(load_feature_tensor(p)?)
            } else {
                Sample::Image(load_image(p)?)
            })
        })
        .collect::<Result<_>>()?;
    let bank = build_bank(&samples, &extractor, &aug, &cfg)?;
    save_bank(&bank, &args.out)?;
    let bytes = fs::metadata(&args.out)
        .map(|m| m.len())
        .map_err(|e| Error::io(format!("stat {}", args.out.display()), e))?;

    #[derive(Serialize)]
    struct BuildSummary<'a> {
        out: &'a str,
        bank_vectors: usize,
        bank_bytes: u64,
        dim: usize,
        pool_size: usize,
        distinct_size: usize,
        extractor: String,
        extractor_hash: &'a str,
    }
    let summary = BuildSummary {
        out: &args.out.display().to_string(),
        bank_vectors: bank.len(),
        bank_bytes: bytes,
        dim: bank.dim,
        pool_size: bank.build_meta.pool_size,
        distinct_size: bank.build_meta.distinct_size,
        extractor: extractor.describe(),
        extractor_hash: &bank.build_meta.extractor_hash,
    };
    if args.json {
        println!("{}", serde_json::to_string_pretty(&summary)?);
    } else {
        println!(
            "bank {}: {} vectors of dim {} ({} bytes) from a pool of {} ({} distinct)",
            args.out.display(),
            bank.len(),
            bank.dim,
            bytes,
            bank.build_meta.pool_size,
            bank.build_meta.distinct_size
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct ScoreRecord<'a> {
    id: &'a str,
    label: bool,
    image_score: f64,
    mask_missing: bool,
}

fn scores_jsonl(meta: &impl Serialize, scored: &[ScoredImage]) -> Result<String> {
    let mut out = serde_json::to_string(meta)?;
    out.push('\n');
    for s in scored {
        let record = ScoreRecord {
            id: &s.id,
            label: s.label,
            image_score: s.result.image_score,
            mask_missing: s.mask_missing,
        };
        out.push_str(&serde_json::to_string(&record)?);
        out.push('\n');
    }
    Ok(out)
}

/// Per-image min-max normalized 8-bit grayscale heatmaps, mirroring the
/// test-set directory layout.
fn write_heatmaps(dir: &Path, scored: &[ScoredImage]) -> Result<()> {
    for s in scored {
        let rel = Path::new(&s.id).with_extension("png");
        let path = dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)
                .map_err(|e| Error::io(format!("create {}", parent.display()), e))?;
        }
        let map = &s.result.pixel_map;
        let min = map.iter().copied().fold(f64::INFINITY, f64::min);
        let max = map.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let scale = if max > min { max - min } else { 1.0 };
        let data: Vec<f32> = map.iter().map(|&v| ((v - min) / scale) as f32).collect();
        let img = ImageTensor::new(s.result.height, s.result.width, 1, data)?;
        write_image(&img, &path)?;
    }
    Ok(())
}

fn emit(path: Option<&Path>, content: &str) -> Result<()> {
    match path {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(parent)
                    .map_err(|e| Error::io(format!("create {}", parent.display()), e))?;
            }
            fs::write(p, content).map_err(|e| Error::io(format!("write {}", p.display()), e))
        }
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn cmd_score(args: ScoreArgs) -> Result<()> {
    let bank = load_bank(&args.bank)?;
    let extractor = match &args.extractor.extractor {
        Some(_) => args.extractor.resolve("toy")?,
        None => {
            let (spec, weights, sign) = parse_extractor_canon(&bank.build_meta.extractor)?;
            // explicit weight flags replace the recorded source
            let weights = match args.extractor.weight_source()? {
                WeightSource::Synth(0) => weights,
                explicit => explicit,
            };
            let sign = match args.extractor.relative_sign.as_deref() {
                Some(s) => RelativeSign::parse(s)?,
                None => sign,
            };
            resolve_extractor(&spec, &weights, sign)?
        }
    };
    let cfg = crate::scoring::ScoreConfig {
        mode: args
            .opts
            .score_mode
            .as_deref()
            .map(ScoreMode::parse)
            .transpose()?
            .unwrap_or_default(),
        knn_k: args.opts.knn_k.unwrap_or(3),
        sigma: args.opts.sigma.unwrap_or(4.0),
    };
    let scored = crate::scoring::score_dataset(&args.data, &bank, &extractor, &cfg)?;
    for s in scored.iter().filter(|s| s.mask_missing) {
        eprintln!("warning: no ground-truth mask for {}; excluded from pixel metrics", s.id);
    }

    #[derive(Serialize)]
    struct ScoreMeta<'a> {
        config_hash: String,
        bank: String,
        bank_vectors: usize,
        score_mode: &'a str,
        knn_k: usize,
        sigma: f64,
    }
    let meta = ScoreMeta {
        config_hash: sha256_hex(&format!(
            "score|{}|{}|{}|{}",
            bank.build_meta.extractor_hash,
            cfg.mode.name(),
            cfg.knn_k,
            cfg.sigma
        )),
        bank: args.bank.display().to_string(),
        bank_vectors: bank.len(),
        score_mode: cfg.mode.name(),
        knn_k: cfg.knn_k,
        sigma: cfg.sigma,
    };
    emit(args.out.as_deref(), &scores_jsonl(&meta, &scored)?)?;
    if let Some(dir) = &args.heatmap_dir {
        write_heatmaps(dir, &scored)?;
    }
    Ok(())
}

fn resolve_jobs(flag: Option<usize>) -> Result<Option<usize>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("PATCHBANK_JOBS") {
        Err(_) => Ok(None),
        Ok(v) => v
            .parse()
            .map(Some)
            .map_err(|_| Error::InvalidConfig(format!("PATCHBANK_JOBS '{v}' is not an integer"))),
    }
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let cfg = args.base.to_pipeline()?;
    if !args.sweep.is_empty() {
        if args.scores.is_some() || args.heatmap_dir.is_some() || args.time {
            return Err(Error::InvalidConfig(
                "per-image outputs and timing apply to single evaluations, not sweeps".into(),
            ));
        }
        let mut grid = SweepGrid::default();
        for clause in &args.sweep {
            grid.parse_clause(clause)?;
        }
        let cells = sweep(&args.data, &cfg, &grid, resolve_jobs(args.jobs)?)?;
        let json = serde_json::to_string_pretty(&cells)?;
        if args.json {
            println!("{json}");
        } else {
            for cell in &cells {
                println!("{}", cell.report.text_row());
            }
        }
        if let Some(out) = &args.out {
            emit(Some(out), &json)?;
        }
        return Ok(());
    }

    let repeats = args.time.then_some(args.time_repeats);
    let outcome = evaluate_category(&args.data, &cfg, repeats)?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    let report_json = serde_json::to_string_pretty(&outcome.report)?;
    if args.json {
        println!("{report_json}");
    } else {
        println!("{}", outcome.report.text_row());
    }
    // stderr keeps stdout and file artifacts byte-reproducible
    if let Some(t) = &outcome.report.timing {
        eprintln!("timing: {:.6} s per image (median of {} passes)", t.mean_inference_seconds, args.time_repeats);
    }
    if let Some(out) = &args.out {
        emit(Some(out), &report_json)?;
    }
    if let Some(path) = &args.scores {
        #[derive(Serialize)]
        struct EvalMeta<'a> {
            config_hash: &'a str,
            category: &'a str,
            method: &'a str,
        }
        let meta = EvalMeta {
            config_hash: &outcome.report.config_hash,
            category: &outcome.report.category,
            method: &outcome.report.method,
        };
        emit(Some(path), &scores_jsonl(&meta, &outcome.scored)?)?;
    }
    if let Some(dir) = &args.heatmap_dir {
        write_heatmaps(dir, &outcome.scored)?;
    }
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let cfg = args.base.to_pipeline()?;
    let mut grid = SweepGrid::default();
    for clause in &args.sweep {
        grid.parse_clause(clause)?;
    }
    let cells = sweep(&args.data, &cfg, &grid, resolve_jobs(args.jobs)?)?;
    let json = serde_json::to_string_pretty(&cells)?;
    if args.json {
        println!("{json}");
    } else {
        for cell in &cells {
            println!("{}", cell.report.text_row());
        }
    }
    if let Some(out) = &args.out {
        emit(Some(out), &json)?;
    }
    if let Some(path) = &args.csv {
        emit(Some(path), &sweep_csv(&cells))?;
    }
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let d = SynthSpec::default();
    let spec = SynthSpec {
        seed: args.seed.unwrap_or(d.seed),
        image_px: args.image_px.unwrap_or(d.image_px),
        patch_px: args.patch_px.unwrap_or(d.patch_px),
        motif_count: args.motifs.unwrap_or(d.motif_count),
        anomaly_motifs: args.anomaly_motifs.unwrap_or(d.anomaly_motifs),
        train_images: args.train.unwrap_or(d.train_images),
        test_normals: args.test_normals.unwrap_or(d.test_normals),
        test_anomalies: args.test_anomalies.unwrap_or(d.test_anomalies),
        anomaly_block_cells: args.anomaly_block.unwrap_or(d.anomaly_block_cells),
        rotate_test: args.rotate_test,
        cell_transforms: !args.no_cell_transforms,
        anomaly_shift: args.anomaly_shift.unwrap_or(d.anomaly_shift),
        motifs_per_image: args.motifs_per_image,
        margin: args.margin.unwrap_or(d.margin),
        category: args.category.unwrap_or(d.category),
    };
    let manifest = generate(&spec, &args.out)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&manifest)?);
    } else {
        let rotation = manifest
            .margin_rotation
            .map(|m| format!(", rotation margin {m:.4}"))
            .unwrap_or_default();
        println!(
            "{}: {} train, {} good, {} defect images (margin {:.4}{rotation})",
            args.out.join(&spec.category).display(),
            manifest.train_files,
            manifest.test_good_files,
            manifest.test_defect_files,
            manifest.margin_toy
        );
    }
    Ok(())
}

fn cmd_extract(args: ExtractArgs) -> Result<()> {
    let extractor = args.extractor.resolve("toy")?;
    let img = load_image(&args.input)?;
    let grid = extractor.extract(&img)?;
    write_feature_tensor(&grid, &args.out)?;
    if args.json {
        #[derive(Serialize)]
        struct ExtractSummary {
            out: String,
            rows: usize,
            cols: usize,
            dim: usize,
            stride_px: usize,
        }
        let summary = ExtractSummary {
            out: args.out.display().to_string(),
            rows: grid.rows,
            cols: grid.cols,
            dim: grid.dim,
            stride_px: grid.stride_px,
        };
        println!("{}", serde_json::to_string_pretty(&summary)?);
    } else {
        println!(
            "{}: {}x{} patches of dim {} (stride {} px)",
            args.out.display(),
            grid.rows,
            grid.cols,
            grid.dim,
            grid.stride_px
        );
    }
    Ok(())
}
