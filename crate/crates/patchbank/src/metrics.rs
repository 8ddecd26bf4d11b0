//! Ranking metrics and inference timing.
//!
//! AUROC is computed as the Mann-Whitney U statistic with midrank tie
//! handling, evaluated in integer arithmetic: doubled midranks keep every
//! intermediate exact, and the final division picks whichever of U/Q and
//! 1 - (Q-U)/Q rounds from the smaller numerator, so complementing the
//! labels yields scores that sum to exactly 1.0.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bank::MemoryBank;
use crate::error::{Error, Result};
use crate::features::PatchFeatureGrid;
use crate::scoring::{score_image, ScoreConfig};

/// Area under the ROC curve for anomaly scores, true = anomalous.
///
/// Equals P(anomalous score > normal score) + 0.5 P(equal) over all pairs.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::MetricInput(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::MetricInput("non-finite score".into()));
    }
    let n1 = labels.iter().filter(|&&l| l).count();
    let n0 = labels.len() - n1;
    if n0 == 0 || n1 == 0 {
        return Err(Error::SingleClass);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Doubled midranks: a tie group at 1-based ranks [a, b] contributes
    // a + b per member, always an integer.
    let mut u2: i128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let doubled = (i + 1 + j) as i128;
        for &idx in &order[i..j] {
            if labels[idx] {
                u2 += doubled;
            }
        }
        i = j;
    }
    u2 -= (n1 as i128) * (n1 as i128 + 1);
    let q2 = 2 * (n0 as i128) * (n1 as i128);
    debug_assert!(u2 >= 0 && u2 <= q2);
    if 2 * u2 <= q2 {
        Ok(u2 as f64 / q2 as f64)
    } else {
        Ok(1.0 - (q2 - u2) as f64 / q2 as f64)
    }
}

/// How pixel-level AUROC pools its inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PixelAurocMode {
    /// One ranking over every pixel of every scored image.
    #[default]
    Pooled,
    /// Mean of per-image AUROCs over images containing both classes.
    PerImageMean,
}

impl PixelAurocMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "pooled" => Ok(PixelAurocMode::Pooled),
            "per-image-mean" => Ok(PixelAurocMode::PerImageMean),
            other => Err(Error::InvalidConfig(format!(
                "pixel AUROC mode '{other}' (expected pooled|per-image-mean)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PixelAurocMode::Pooled => "pooled",
            PixelAurocMode::PerImageMean => "per-image-mean",
        }
    }
}

/// Pixel-level AUROC over (anomaly map, ground-truth mask) pairs.
pub fn pixel_auroc(images: &[(&[f64], &[bool])], mode: PixelAurocMode) -> Result<f64> {
    for (map, mask) in images {
        if map.len() != mask.len() {
            return Err(Error::MetricInput(format!(
                "map of {} pixels vs mask of {}",
                map.len(),
                mask.len()
            )));
        }
    }
    match mode {
        PixelAurocMode::Pooled => {
            let scores: Vec<f64> = images.iter().flat_map(|(m, _)| m.iter().copied()).collect();
            let labels: Vec<bool> = images.iter().flat_map(|(_, k)| k.iter().copied()).collect();
            auroc(&scores, &labels)
        }
        PixelAurocMode::PerImageMean => {
            let mut per_image = Vec::new();
            for (map, mask) in images {
                let pos = mask.iter().filter(|&&b| b).count();
                if pos == 0 || pos == mask.len() {
                    continue;
                }
                per_image.push(auroc(map, mask)?);
            }
            if per_image.is_empty() {
                return Err(Error::SingleClass);
            }
            Ok(per_image.iter().sum::<f64>() / per_image.len() as f64)
        }
    }
}

/// Median per-image scoring time in seconds: one untimed warm pass, then
/// `repeats` timed passes over every grid.
pub fn time_inference(
    grids: &[PatchFeatureGrid],
    bank: &MemoryBank,
    cfg: &ScoreConfig,
    repeats: usize,
) -> Result<f64> {
    if grids.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    if repeats == 0 {
        return Err(Error::InvalidConfig("timing repeats must be >= 1".into()));
    }
    for g in grids {
        score_image(g, bank, cfg)?;
    }
    let mut samples = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        for g in grids {
            score_image(g, bank, cfg)?;
        }
        samples.push(start.elapsed().as_secs_f64() / grids.len() as f64);
    }
    samples.sort_by(|a, b| a.total_cmp(b));
    let mid = samples.len() / 2;
    Ok(if samples.len() % 2 == 1 {
        samples[mid]
    } else {
        (samples[mid - 1] + samples[mid]) / 2.0
    })
}

/// Wall-clock block, kept out of deterministic outputs unless requested.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingBlock {
    pub mean_inference_seconds: f64,
}

/// Evaluation summary for one category run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub category: String,
    pub method: String,
    pub extractor: String,
    pub config_hash: String,
    pub shot_count: usize,
    pub ratio: f64,
    pub image_auroc: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pixel_auroc: Option<f64>,
    pub bank_vectors: usize,
    pub bank_bytes: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timing: Option<TimingBlock>,
}

impl EvalReport {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if !in_unit(self.image_auroc) || self.pixel_auroc.is_some_and(|p| !in_unit(p)) {
            return Err(Error::invariant(
                "auroc-range",
                format!("image={} pixel={:?}", self.image_auroc, self.pixel_auroc),
            ));
        }
        if self.timing.as_ref().is_some_and(|t| t.mean_inference_seconds < 0.0) {
            return Err(Error::invariant("timing-nonnegative", "negative seconds"));
        }
        Ok(())
    }

    /// One human-readable row: image and pixel AUROC separated by '|'.
    pub fn text_row(&self) -> String {
        let pixel = match self.pixel_auroc {
            Some(p) => format!("{p:.4}"),
            None => "-".into(),
        };
        format!("{}: {:.4}|{}", self.category, self.image_auroc, pixel)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bank::{BuildMeta, MemoryBank, Provenance};
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    /// Pair-counting reference: slow, independent of the rank formulation.
    fn auroc_pairs(scores: &[f64], labels: &[bool]) -> f64 {
        let mut hits = 0.0f64;
        let mut pairs = 0.0f64;
        for (i, &li) in labels.iter().enumerate() {
            if !li {
                continue;
            }
            for (j, &lj) in labels.iter().enumerate() {
                if lj {
                    continue;
                }
                pairs += 1.0;
                if scores[i] > scores[j] {
                    hits += 1.0;
                } else if scores[i] == scores[j] {
                    hits += 0.5;
                }
            }
        }
        hits / pairs
    }

    #[test]
    fn auroc_hand_cases() {
        assert_eq!(
            auroc(&[1.0, 2.0, 3.0, 4.0], &[false, false, true, true]).unwrap(),
            1.0
        );
        assert_eq!(
            auroc(&[7.0, 7.0, 7.0, 7.0], &[false, true, false, true]).unwrap(),
            0.5
        );
        assert_eq!(
            auroc(&[0.1, 0.4, 0.3, 0.9], &[false, false, true, true]).unwrap(),
            0.75
        );
        // perfectly inverted ranking
        assert_eq!(
            auroc(&[4.0, 3.0, 2.0, 1.0], &[false, false, true, true]).unwrap(),
            0.0
        );
    }

    #[test]
    fn auroc_errors() {
        assert!(matches!(auroc(&[], &[]), Err(Error::SingleClass)));
        assert!(matches!(
            auroc(&[1.0, 2.0], &[true, true]),
            Err(Error::SingleClass)
        ));
        assert!(matches!(
            auroc(&[1.0, 2.0], &[false, false]),
            Err(Error::SingleClass)
        ));
        assert!(matches!(
            auroc(&[1.0], &[true, false]),
            Err(Error::MetricInput(_))
        ));
        assert!(matches!(
            auroc(&[f64::NAN, 1.0], &[true, false]),
            Err(Error::MetricInput(_))
        ));
    }

    #[test]
    fn auroc_matches_pair_counting_with_ties() {
        let mut rng = ChaCha12Rng::seed_from_u64(139);
        for _ in 0..200 {
            let n = rng.random_range(2..60);
            let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..8) as f64 / 4.0).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.random::<bool>()).collect();
            labels[0] = false;
            labels[1] = true;
            let fast = auroc(&scores, &labels).unwrap();
            let slow = auroc_pairs(&scores, &labels);
            assert!((fast - slow).abs() <= 1e-12, "fast {fast} vs slow {slow}");
        }
    }

    #[test]
    fn auroc_complement_sums_to_exactly_one() {
        let mut rng = ChaCha12Rng::seed_from_u64(149);
        for _ in 0..200 {
            let n = rng.random_range(2..80);
            let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.random::<bool>()).collect();
            labels[0] = false;
            labels[n - 1] = true;
            let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
            let a = auroc(&scores, &labels).unwrap();
            let b = auroc(&scores, &flipped).unwrap();
            assert_eq!(a + b, 1.0, "complement drift: {a} + {b}");
        }
    }

    #[test]
    fn auroc_invariant_under_strictly_increasing_transforms() {
        let mut rng = ChaCha12Rng::seed_from_u64(151);
        for _ in 0..100 {
            let n = rng.random_range(2..50);
            // dyadic grid scores: affine and exp transforms preserve exact ties
            let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..64) as f64 / 4.0).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.random::<bool>()).collect();
            labels[0] = false;
            labels[n - 1] = true;
            let base = auroc(&scores, &labels).unwrap();
            let affine: Vec<f64> = scores.iter().map(|s| 2.0 * s + 1.0).collect();
            let exped: Vec<f64> = scores.iter().map(|s| s.exp()).collect();
            assert_eq!(base.to_bits(), auroc(&affine, &labels).unwrap().to_bits());
            assert_eq!(base.to_bits(), auroc(&exped, &labels).unwrap().to_bits());
        }
    }

    #[test]
    fn pixel_auroc_pooled_hand_case() {
        // two 2x2 maps: one anomalous with its top-left pixel hot, one clean
        let map_a = [9.0, 1.0, 1.0, 1.0];
        let mask_a = [true, false, false, false];
        let map_b = [0.0, 0.0, 0.0, 0.0];
        let mask_b = [false, false, false, false];
        let got = pixel_auroc(
            &[(&map_a, &mask_a), (&map_b, &mask_b)],
            PixelAurocMode::Pooled,
        )
        .unwrap();
        // the hot pixel beats all 7 normals
        assert_eq!(got, 1.0);

        // per-image-mean only ranks within the anomalous image
        let got = pixel_auroc(
            &[(&map_a, &mask_a), (&map_b, &mask_b)],
            PixelAurocMode::PerImageMean,
        )
        .unwrap();
        assert_eq!(got, 1.0);
    }

    #[test]
    fn pixel_auroc_modes_differ_on_crafted_case() {
        // image 1: anomaly pixel scores 2, normals 1 (perfect within image)
        // image 2: clean but scores 3 everywhere (poisons the pooled ranking)
        let map_a = [2.0, 1.0];
        let mask_a = [true, false];
        let map_b = [3.0, 3.0];
        let mask_b = [false, false];
        let pooled = pixel_auroc(
            &[(&map_a, &mask_a), (&map_b, &mask_b)],
            PixelAurocMode::Pooled,
        )
        .unwrap();
        let per_image = pixel_auroc(
            &[(&map_a, &mask_a), (&map_b, &mask_b)],
            PixelAurocMode::PerImageMean,
        )
        .unwrap();
        assert_eq!(per_image, 1.0);
        assert!(pooled < 1.0);
    }

    #[test]
    fn pixel_auroc_errors() {
        let map = [1.0, 2.0];
        let mask_short = [true];
        assert!(matches!(
            pixel_auroc(&[(&map, &mask_short)], PixelAurocMode::Pooled),
            Err(Error::MetricInput(_))
        ));
        let all_false = [false, false];
        assert!(matches!(
            pixel_auroc(&[(&map, &all_false)], PixelAurocMode::Pooled),
            Err(Error::SingleClass)
        ));
        assert!(matches!(
            pixel_auroc(&[(&map, &all_false)], PixelAurocMode::PerImageMean),
            Err(Error::SingleClass)
        ));
    }

    fn tiny_bank(n: usize, dim: usize, rng: &mut ChaCha12Rng) -> MemoryBank {
        MemoryBank {
            dim,
            vectors: (0..n * dim).map(|_| rng.random::<f32>()).collect(),
            provenance: (0..n as u32)
                .map(|i| Provenance {
                    image_id: i,
                    patch_row: 0,
                    patch_col: 0,
                    augment_id: 0,
                })
                .collect(),
            build_meta: BuildMeta::default(),
        }
    }

    #[test]
    fn time_inference_basics() {
        let mut rng = ChaCha12Rng::seed_from_u64(157);
        let bank = tiny_bank(20, 4, &mut rng);
        let grids: Vec<PatchFeatureGrid> = (0..3)
            .map(|_| {
                PatchFeatureGrid::new(2, 2, 4, 2, (0..16).map(|_| rng.random::<f32>()).collect())
                    .unwrap()
            })
            .collect();
        let cfg = ScoreConfig::default();
        let t = time_inference(&grids, &bank, &cfg, 3).unwrap();
        assert!(t.is_finite() && t >= 0.0);
        // single repeat means a single measurement, no aggregation
        let t1 = time_inference(&grids, &bank, &cfg, 1).unwrap();
        assert!(t1.is_finite() && t1 >= 0.0);
        assert!(matches!(
            time_inference(&[], &bank, &cfg, 3),
            Err(Error::EmptyTestSet)
        ));
        assert!(matches!(
            time_inference(&grids, &bank, &cfg, 0),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn report_rows_and_validation() {
        let mut report = EvalReport {
            category: "grid".into(),
            method: "graphcore".into(),
            extractor: "toy:patch_px=8".into(),
            config_hash: "0".repeat(64),
            shot_count: 4,
            ratio: 0.01,
            image_auroc: 0.9876,
            pixel_auroc: Some(0.9123),
            bank_vectors: 128,
            bank_bytes: 4096,
            timing: None,
        };
        report.validate().unwrap();
        assert_eq!(report.text_row(), "grid: 0.9876|0.9123");
        report.pixel_auroc = None;
        assert_eq!(report.text_row(), "grid: 0.9876|-");
        report.image_auroc = 1.5;
        assert!(matches!(
            report.validate(),
            Err(Error::InvariantViolation { .. })
        ));
        report.image_auroc = 0.5;
        let json = serde_json::to_string(&report).unwrap();
        assert!(!json.contains("pixel_auroc") && !json.contains("timing"));
        let back: EvalReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
    }
}
