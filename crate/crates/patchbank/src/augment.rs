//! Image-space augmentation: dihedral transforms, translation, scaling.
//!
//! Rotations and flips are pure pixel permutations, so they are lossless:
//! the multiset of pixel values is preserved bitwise. Translation and scaling
//! resample and are not.
//!
//! An [`AugmentSpec`] is an ordered list of parameterized ops parsed from
//! `--aug` clauses. [`AugmentSpec::variants`] expands one image into the
//! training pool contributions: every listed op applied to the image, plus
//! the untouched original when no listed op is an identity. Variant ids are
//! stable: 0 is the original, op `i` (zero-based) gets id `i + 1`.

use std::fmt;

use crate::error::{Error, Result};
use crate::features::ImageTensor;

/// The 8 symmetries of the square, acting on image contents.
///
/// Rotations are clockwise. For an `H x W` input the four "swapping" members
/// (`Rot90`, `Rot270`, `Transpose`, `AntiTranspose`) produce `W x H` output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dihedral {
    Identity,
    Rot90,
    Rot180,
    Rot270,
    /// Mirror left-right.
    FlipH,
    /// Mirror top-bottom.
    FlipV,
    Transpose,
    AntiTranspose,
}

impl Dihedral {
    pub const ALL: [Dihedral; 8] = [
        Dihedral::Identity,
        Dihedral::Rot90,
        Dihedral::Rot180,
        Dihedral::Rot270,
        Dihedral::FlipH,
        Dihedral::FlipV,
        Dihedral::Transpose,
        Dihedral::AntiTranspose,
    ];

    /// Source coordinate for output position `(y, x)` given input `h x w`.
    #[inline]
    fn source(self, y: usize, x: usize, h: usize, w: usize) -> (usize, usize) {
        match self {
            Dihedral::Identity => (y, x),
            Dihedral::Rot90 => (h - 1 - x, y),
            Dihedral::Rot180 => (h - 1 - y, w - 1 - x),
            Dihedral::Rot270 => (x, w - 1 - y),
            Dihedral::FlipH => (y, w - 1 - x),
            Dihedral::FlipV => (h - 1 - y, x),
            Dihedral::Transpose => (x, y),
            Dihedral::AntiTranspose => (h - 1 - x, w - 1 - y),
        }
    }

    fn swaps_axes(self) -> bool {
        matches!(
            self,
            Dihedral::Rot90 | Dihedral::Rot270 | Dihedral::Transpose | Dihedral::AntiTranspose
        )
    }
}

/// Apply a dihedral transform. Pixels are moved, never recomputed.
pub fn apply_dihedral(img: &ImageTensor, d: Dihedral) -> ImageTensor {
    let (h, w) = (img.height, img.width);
    let (oh, ow) = if d.swaps_axes() { (w, h) } else { (h, w) };
    let mut out = ImageTensor {
        height: oh,
        width: ow,
        channels: img.channels,
        data: vec![0.0; img.data.len()],
    };
    for y in 0..oh {
        for x in 0..ow {
            let (sy, sx) = d.source(y, x, h, w);
            for c in 0..img.channels {
                out.set(y, x, c, img.get(sy, sx, c));
            }
        }
    }
    out
}

/// How translation fills pixels shifted in from outside the frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TranslationMode {
    /// Replicate the nearest edge pixel.
    Clamp,
    /// Wrap around the opposite edge.
    Wrap,
}

impl TranslationMode {
    fn name(self) -> &'static str {
        match self {
            TranslationMode::Clamp => "clamp",
            TranslationMode::Wrap => "wrap",
        }
    }
}

/// Shift image content by `(dx, dy)`: positive `dx` moves it right, positive
/// `dy` moves it down. Offsets whose magnitude reaches the image size are
/// rejected rather than silently producing a constant image.
pub fn translate(img: &ImageTensor, dx: i32, dy: i32, mode: TranslationMode) -> Result<ImageTensor> {
    let (h, w) = (img.height as i64, img.width as i64);
    if (dx as i64).abs() >= w || (dy as i64).abs() >= h {
        return Err(Error::TranslationOutOfRange {
            dx: dx as i64,
            dy: dy as i64,
            height: img.height,
            width: img.width,
        });
    }
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = match mode {
                TranslationMode::Clamp => (
                    (y - dy as i64).clamp(0, h - 1),
                    (x - dx as i64).clamp(0, w - 1),
                ),
                TranslationMode::Wrap => ((y - dy as i64).rem_euclid(h), (x - dx as i64).rem_euclid(w)),
            };
            for c in 0..img.channels {
                out.set(y as usize, x as usize, c, img.get(sy as usize, sx as usize, c));
            }
        }
    }
    Ok(out)
}

/// Rescale content by `factor` while keeping the frame size: nearest-neighbor
/// resample to `round(size * factor)`, then center-crop (zoom in) or center-
/// pad with edge replication (zoom out) back to the original size.
pub fn scale(img: &ImageTensor, factor: f32) -> Result<ImageTensor> {
    if !(factor.is_finite() && factor > 0.0) {
        return Err(Error::NonPositiveScale(factor as f64));
    }
    let (h, w) = (img.height, img.width);
    let hs = ((h as f64 * factor as f64).round() as usize).max(1);
    let ws = ((w as f64 * factor as f64).round() as usize).max(1);

    let mut resampled = ImageTensor {
        height: hs,
        width: ws,
        channels: img.channels,
        data: vec![0.0; hs * ws * img.channels],
    };
    for y in 0..hs {
        let sy = (((y as f64 + 0.5) * h as f64 / hs as f64) as usize).min(h - 1);
        for x in 0..ws {
            let sx = (((x as f64 + 0.5) * w as f64 / ws as f64) as usize).min(w - 1);
            for c in 0..img.channels {
                resampled.set(y, x, c, img.get(sy, sx, c));
            }
        }
    }
    if hs == h && ws == w {
        return Ok(resampled);
    }

    let mut out = ImageTensor {
        height: h,
        width: w,
        channels: img.channels,
        data: vec![0.0; h * w * img.channels],
    };
    // offsets are negative when cropping, positive when padding
    let off_y = h as i64 - hs as i64;
    let off_x = w as i64 - ws as i64;
    for y in 0..h {
        let sy = (y as i64 - off_y / 2).clamp(0, hs as i64 - 1) as usize;
        for x in 0..w {
            let sx = (x as i64 - off_x / 2).clamp(0, ws as i64 - 1) as usize;
            for c in 0..img.channels {
                out.set(y, x, c, resampled.get(sy, sx, c));
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Augmentation ops and specs
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AugmentOp {
    /// Clockwise rotation by a multiple of 90 degrees.
    Rotation(u16),
    Flip(FlipAxis),
    Translation {
        dx: i32,
        dy: i32,
        mode: TranslationMode,
    },
    Scaling(f32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlipAxis {
    Horizontal,
    Vertical,
}

impl AugmentOp {
    /// Ops that leave every image untouched.
    pub fn is_identity(self) -> bool {
        match self {
            AugmentOp::Rotation(0) => true,
            AugmentOp::Translation { dx: 0, dy: 0, .. } => true,
            AugmentOp::Scaling(f) => f == 1.0,
            _ => false,
        }
    }

    pub fn apply(self, img: &ImageTensor) -> Result<ImageTensor> {
        match self {
            AugmentOp::Rotation(deg) => {
                let d = match deg {
                    0 => Dihedral::Identity,
                    90 => Dihedral::Rot90,
                    180 => Dihedral::Rot180,
                    270 => Dihedral::Rot270,
                    other => {
                        return Err(Error::InvalidAugment(format!(
                            "rotation degree {other} is not a multiple of 90 in [0,270]"
                        )))
                    }
                };
                Ok(apply_dihedral(img, d))
            }
            AugmentOp::Flip(FlipAxis::Horizontal) => Ok(apply_dihedral(img, Dihedral::FlipH)),
            AugmentOp::Flip(FlipAxis::Vertical) => Ok(apply_dihedral(img, Dihedral::FlipV)),
            AugmentOp::Translation { dx, dy, mode } => translate(img, dx, dy, mode),
            AugmentOp::Scaling(f) => scale(img, f),
        }
    }
}

impl fmt::Display for AugmentOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AugmentOp::Rotation(deg) => write!(f, "rotation={deg}"),
            AugmentOp::Flip(FlipAxis::Horizontal) => write!(f, "flip=horizontal"),
            AugmentOp::Flip(FlipAxis::Vertical) => write!(f, "flip=vertical"),
            AugmentOp::Translation { dx, dy, mode } => {
                write!(f, "translation={dx}:{dy};mode={}", mode.name())
            }
            AugmentOp::Scaling(s) => write!(f, "scaling={s}"),
        }
    }
}

/// Ordered list of augmentation ops, the accumulated `--aug` clauses.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AugmentSpec {
    pub ops: Vec<AugmentOp>,
}

impl AugmentSpec {
    pub fn none() -> Self {
        AugmentSpec { ops: Vec::new() }
    }

    /// Full rotation group, the default for rotation-compensated banks.
    pub fn full_rotation() -> Self {
        AugmentSpec {
            ops: vec![
                AugmentOp::Rotation(0),
                AugmentOp::Rotation(90),
                AugmentOp::Rotation(180),
                AugmentOp::Rotation(270),
            ],
        }
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn has_identity(&self) -> bool {
        self.ops.iter().any(|op| op.is_identity())
    }

    /// Number of pool entries one image expands into.
    pub fn variant_count(&self) -> usize {
        self.ops.len() + usize::from(!self.has_identity())
    }

    /// Parse one `--aug` clause and append its ops.
    ///
    /// Grammar (one family per clause):
    ///
    /// ```text
    /// clause      := family "=" body
    /// rotation    := "rotation=" degrees       degrees: comma list of 0|90|180|270
    /// flip        := "flip=" axes              axes: comma list of horizontal|vertical
    /// translation := "translation=" pairs [";mode=" ("clamp"|"wrap")]
    ///                pairs: comma list of dx ":" dy (integers)
    /// scaling     := "scaling=" factors        factors: comma list of positive reals
    /// ```
    pub fn push_clause(&mut self, clause: &str) -> Result<()> {
        let (family, body) = clause.split_once('=').ok_or_else(|| {
            Error::InvalidAugment(format!("clause '{clause}' is not family=args"))
        })?;
        let mut added: Vec<AugmentOp> = Vec::new();
        match family {
            "rotation" => {
                for part in split_nonempty(body, clause)? {
                    let deg: u16 = part.parse().map_err(|_| {
                        Error::InvalidAugment(format!("rotation degree '{part}' is not an integer"))
                    })?;
                    if !matches!(deg, 0 | 90 | 180 | 270) {
                        return Err(Error::InvalidAugment(format!(
                            "rotation degree {deg} is not a multiple of 90 in [0,270]"
                        )));
                    }
                    added.push(AugmentOp::Rotation(deg));
                }
            }
            "flip" => {
                for part in split_nonempty(body, clause)? {
                    let axis = match part {
                        "horizontal" => FlipAxis::Horizontal,
                        "vertical" => FlipAxis::Vertical,
                        other => {
                            return Err(Error::InvalidAugment(format!(
                                "flip axis '{other}' (expected horizontal|vertical)"
                            )))
                        }
                    };
                    added.push(AugmentOp::Flip(axis));
                }
            }
            "translation" => {
                let (pairs, mode) = match body.split_once(';') {
                    None => (body, TranslationMode::Clamp),
                    Some((p, m)) => {
                        let mode = match m.strip_prefix("mode=") {
                            Some("clamp") => TranslationMode::Clamp,
                            Some("wrap") => TranslationMode::Wrap,
                            _ => {
                                return Err(Error::InvalidAugment(format!(
                                    "translation option '{m}' (expected mode=clamp|wrap)"
                                )))
                            }
                        };
                        (p, mode)
                    }
                };
                for part in split_nonempty(pairs, clause)? {
                    let (dx, dy) = part.split_once(':').ok_or_else(|| {
                        Error::InvalidAugment(format!("translation '{part}' is not dx:dy"))
                    })?;
                    let dx: i32 = dx.parse().map_err(|_| {
                        Error::InvalidAugment(format!("translation dx '{dx}' is not an integer"))
                    })?;
                    let dy: i32 = dy.parse().map_err(|_| {
                        Error::InvalidAugment(format!("translation dy '{dy}' is not an integer"))
                    })?;
                    added.push(AugmentOp::Translation { dx, dy, mode });
                }
            }
            "scaling" => {
                for part in split_nonempty(body, clause)? {
                    let f: f32 = part.parse().map_err(|_| {
                        Error::InvalidAugment(format!("scaling factor '{part}' is not a number"))
                    })?;
                    if !(f.is_finite() && f > 0.0) {
                        return Err(Error::NonPositiveScale(f as f64));
                    }
                    added.push(AugmentOp::Scaling(f));
                }
            }
            other => {
                return Err(Error::InvalidAugment(format!(
                    "unknown augment family '{other}' (expected rotation|flip|translation|scaling)"
                )))
            }
        }
        for op in added {
            if self.ops.contains(&op) {
                return Err(Error::InvalidAugment(format!("duplicate augment op '{op}'")));
            }
            self.ops.push(op);
        }
        Ok(())
    }

    pub fn parse_clauses(clauses: &[String]) -> Result<Self> {
        let mut spec = AugmentSpec::none();
        for c in clauses {
            spec.push_clause(c)?;
        }
        Ok(spec)
    }

    /// Expand one image into `(variant_id, image)` pairs.
    ///
    /// Every listed op contributes a variant with id `index + 1`; the raw
    /// image is prepended with id 0 unless some listed op is an identity
    /// (that op already reproduces the original, adding it again would
    /// duplicate the entry).
    pub fn variants(&self, img: &ImageTensor) -> Result<Vec<(u32, ImageTensor)>> {
        let mut out = Vec::with_capacity(self.variant_count());
        if !self.has_identity() {
            out.push((0u32, img.clone()));
        }
        for (i, op) in self.ops.iter().enumerate() {
            out.push((i as u32 + 1, op.apply(img)?));
        }
        Ok(out)
    }

    /// Canonical clause strings, for provenance metadata.
    pub fn describe(&self) -> Vec<String> {
        self.ops.iter().map(|op| op.to_string()).collect()
    }
}

fn split_nonempty<'a>(body: &'a str, clause: &str) -> Result<Vec<&'a str>> {
    let parts: Vec<&str> = body.split(',').filter(|p| !p.is_empty()).collect();
    if parts.is_empty() {
        return Err(Error::InvalidAugment(format!("clause '{clause}' lists no values")));
    }
    Ok(parts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn img2x2(a: f32, b: f32, c: f32, d: f32) -> ImageTensor {
        ImageTensor::new(2, 2, 1, vec![a, b, c, d]).unwrap()
    }

    fn random_image(rng: &mut ChaCha12Rng, h: usize, w: usize, c: usize) -> ImageTensor {
        let data = (0..h * w * c).map(|_| rng.random::<f32>()).collect();
        ImageTensor::new(h, w, c, data).unwrap()
    }

    #[test]
    fn rot90_two_by_two_oracle() {
        let img = img2x2(1.0, 2.0, 3.0, 4.0);
        let r = apply_dihedral(&img, Dihedral::Rot90);
        // [[a,b],[c,d]] -> [[c,a],[d,b]]
        assert_eq!(r.data, vec![3.0, 1.0, 4.0, 2.0]);
    }

    #[test]
    fn dihedral_composition_identities() {
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        for _ in 0..20 {
            let img = random_image(&mut rng, 5, 7, 3);
            let r90 = apply_dihedral(&img, Dihedral::Rot90);
            assert_eq!(
                apply_dihedral(&r90, Dihedral::Rot90),
                apply_dihedral(&img, Dihedral::Rot180)
            );
            let r180 = apply_dihedral(&img, Dihedral::Rot180);
            assert_eq!(
                apply_dihedral(&r180, Dihedral::Rot90),
                apply_dihedral(&img, Dihedral::Rot270)
            );
            let r270 = apply_dihedral(&img, Dihedral::Rot270);
            assert_eq!(apply_dihedral(&r270, Dihedral::Rot90), img);
            // flips and transposes are involutions
            for d in [
                Dihedral::FlipH,
                Dihedral::FlipV,
                Dihedral::Transpose,
                Dihedral::AntiTranspose,
            ] {
                assert_eq!(apply_dihedral(&apply_dihedral(&img, d), d), img, "{d:?}");
            }
            // transpose = fliph after rot90
            assert_eq!(
                apply_dihedral(&r90, Dihedral::FlipH),
                apply_dihedral(&img, Dihedral::Transpose)
            );
        }
    }

    #[test]
    fn dihedral_preserves_pixel_multiset() {
        let mut rng = ChaCha12Rng::seed_from_u64(29);
        let img = random_image(&mut rng, 4, 6, 3);
        let mut base: Vec<u32> = img.data.iter().map(|v| v.to_bits()).collect();
        base.sort_unstable();
        for d in Dihedral::ALL {
            let t = apply_dihedral(&img, d);
            let mut got: Vec<u32> = t.data.iter().map(|v| v.to_bits()).collect();
            got.sort_unstable();
            assert_eq!(base, got, "{d:?}");
        }
    }

    #[test]
    fn rot90_swaps_shape() {
        let img = ImageTensor::constant(2, 5, 1, 0.5);
        let r = apply_dihedral(&img, Dihedral::Rot90);
        assert_eq!((r.height, r.width), (5, 2));
    }

    #[test]
    fn translate_clamp_and_wrap_oracle() {
        let img = ImageTensor::new(1, 3, 1, vec![1.0, 2.0, 3.0]).unwrap();
        let clamped = translate(&img, 1, 0, TranslationMode::Clamp).unwrap();
        assert_eq!(clamped.data, vec![1.0, 1.0, 2.0]);
        let wrapped = translate(&img, 1, 0, TranslationMode::Wrap).unwrap();
        assert_eq!(wrapped.data, vec![3.0, 1.0, 2.0]);
        let down = ImageTensor::new(3, 1, 1, vec![1.0, 2.0, 3.0]).unwrap();
        let d = translate(&down, 0, -1, TranslationMode::Wrap).unwrap();
        assert_eq!(d.data, vec![2.0, 3.0, 1.0]);
    }

    #[test]
    fn translate_rejects_whole_frame_shift() {
        let img = ImageTensor::constant(2, 3, 1, 0.0);
        match translate(&img, 3, 0, TranslationMode::Clamp) {
            Err(Error::TranslationOutOfRange { dx: 3, .. }) => {}
            other => panic!("expected TranslationOutOfRange, got {other:?}"),
        }
        assert!(translate(&img, 2, -1, TranslationMode::Clamp).is_ok());
    }

    #[test]
    fn scale_identity_is_bitwise() {
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        let img = random_image(&mut rng, 6, 4, 3);
        assert_eq!(scale(&img, 1.0).unwrap(), img);
    }

    #[test]
    fn scale_down_pads_with_edges() {
        let img = ImageTensor::new(
            4,
            4,
            1,
            (0..16).map(|i| i as f32).collect(),
        )
        .unwrap();
        let s = scale(&img, 0.5).unwrap();
        assert_eq!((s.height, s.width), (4, 4));
        // resample keeps pixels (1,1),(1,3),(3,1),(3,3) = 5,7,13,15; the 2x2
        // core sits at offset 1 with replicated edges around it
        assert_eq!(
            s.data,
            vec![
                5.0, 5.0, 7.0, 7.0, //
                5.0, 5.0, 7.0, 7.0, //
                13.0, 13.0, 15.0, 15.0, //
                13.0, 13.0, 15.0, 15.0
            ]
        );
    }

    #[test]
    fn scale_rejects_non_positive() {
        let img = ImageTensor::constant(2, 2, 1, 0.0);
        assert!(matches!(scale(&img, 0.0), Err(Error::NonPositiveScale(_))));
        assert!(matches!(scale(&img, -1.5), Err(Error::NonPositiveScale(_))));
    }

    #[test]
    fn clause_grammar_round_trip() {
        let spec = AugmentSpec::parse_clauses(&[
            "rotation=0,90,180,270".into(),
            "flip=horizontal,vertical".into(),
            "translation=2:-1,0:3;mode=wrap".into(),
            "scaling=0.9,1.1".into(),
        ])
        .unwrap();
        assert_eq!(spec.ops.len(), 10);
        assert!(spec.has_identity());
        assert_eq!(spec.variant_count(), 10);
        assert_eq!(
            spec.describe()[6],
            "translation=2:-1;mode=wrap".to_string()
        );
    }

    #[test]
    fn clause_grammar_rejections() {
        for bad in [
            "rotation=45",
            "rotation=",
            "rotation",
            "flip=diagonal",
            "translation=1",
            "translation=1:2;mode=mirror",
            "scaling=0",
            "scaling=abc",
            "blur=3",
            "rotation=90,90",
        ] {
            let got = AugmentSpec::parse_clauses(&[bad.to_string()]);
            assert!(got.is_err(), "clause '{bad}' should be rejected");
        }
    }

    #[test]
    fn variants_include_original_only_without_identity() {
        let img = img2x2(1.0, 2.0, 3.0, 4.0);
        let full = AugmentSpec::parse_clauses(&["rotation=0,90,180,270".into()]).unwrap();
        let vs = full.variants(&img).unwrap();
        assert_eq!(vs.len(), 4);
        assert_eq!(vs[0].0, 1); // no id-0 original: rotation=0 covers it
        assert_eq!(vs[0].1, img);

        let partial = AugmentSpec::parse_clauses(&["rotation=90".into()]).unwrap();
        let vs = partial.variants(&img).unwrap();
        assert_eq!(vs.len(), 2);
        assert_eq!(vs[0].0, 0);
        assert_eq!(vs[0].1, img);
        assert_eq!(vs[1].0, 1);
        assert_eq!(vs[1].1, apply_dihedral(&img, Dihedral::Rot90));
    }
}
