//! Image, mask and saliency containers shared by every stage of the pipeline.
//!
//! Images and masks store `f32` intensities in `[0, 1]`; saliency scores are
//! accumulated and stored in `f64`.

use serde::{Deserialize, Serialize};

use crate::error::{shape, validation, Result};

/// An `H×W×C` image with channel-last, row-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(validation(format!(
                "image dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(shape(format!(
                "image buffer has {} values, expected {height}*{width}*{channels}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite() || !(0.0..=1.0).contains(v)) {
            return Err(validation(format!(
                "image value {} at index {i} is outside [0, 1]",
                data[i]
            )));
        }
        Ok(Image {
            height,
            width,
            channels,
            data,
        })
    }

    /// An image where every channel of every pixel takes `fill`'s value.
    pub fn filled(height: usize, width: usize, fill: &Fill) -> Result<Self> {
        let channels = fill.len();
        let mut data = Vec::with_capacity(height * width * channels);
        for _ in 0..height * width {
            data.extend_from_slice(fill.values());
        }
        Image::new(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Per-channel mean intensity.
    pub fn channel_means(&self) -> Vec<f32> {
        let mut sums = vec![0.0f64; self.channels];
        for px in self.data.chunks_exact(self.channels) {
            for (s, v) in sums.iter_mut().zip(px) {
                *s += f64::from(*v);
            }
        }
        let n = self.pixels() as f64;
        sums.into_iter().map(|s| (s / n) as f32).collect()
    }

    /// Returns a copy with the given pixels (row-major indices) set to `fill`.
    pub fn with_pixels_filled(&self, pixels: &[usize], fill: &Fill) -> Result<Image> {
        let fill = fill.for_channels(self.channels)?;
        let mut data = self.data.clone();
        for &p in pixels {
            let base = p * self.channels;
            data[base..base + self.channels].copy_from_slice(&fill);
        }
        Ok(Image { data, ..*self })
    }
}

/// Replacement intensity for removed content, one value per channel or a
/// single value broadcast to every channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f32>", into = "Vec<f32>")]
pub struct Fill(Vec<f32>);

impl Fill {
    pub const GREY: f32 = 0.5;

    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(validation("fill needs at least one channel value"));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || !(0.0..=1.0).contains(*v)) {
            return Err(validation(format!("fill value {v} is outside [0, 1]")));
        }
        Ok(Fill(values))
    }

    pub fn uniform(value: f32) -> Result<Self> {
        Fill::new(vec![value])
    }

    pub fn grey() -> Self {
        Fill(vec![Self::GREY])
    }

    /// Per-channel mean of `image`.
    pub fn mean_of(image: &Image) -> Self {
        Fill(image.channel_means())
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Expands a broadcast fill to `channels` values.
    pub fn for_channels(&self, channels: usize) -> Result<Vec<f32>> {
        match self.0.len() {
            1 => Ok(vec![self.0[0]; channels]),
            n if n == channels => Ok(self.0.clone()),
            n => Err(shape(format!("fill has {n} channels, image has {channels}"))),
        }
    }
}

impl Default for Fill {
    fn default() -> Self {
        Fill::grey()
    }
}

impl TryFrom<Vec<f32>> for Fill {
    type Error = crate::Error;

    fn try_from(values: Vec<f32>) -> Result<Self> {
        Fill::new(values)
    }
}

impl From<Fill> for Vec<f32> {
    fn from(fill: Fill) -> Self {
        fill.0
    }
}

/// How a mask's values are to be read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskSemantics {
    /// 1 keeps the pixel, 0 replaces it with the fill.
    Preserve,
    /// 1 marks the occluded region.
    OccludeRegion,
}

/// An `H×W` weight grid in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<f32>,
    semantics: MaskSemantics,
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<f32>, semantics: MaskSemantics) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(validation("mask dimensions must be positive"));
        }
        if data.len() != height * width {
            return Err(shape(format!(
                "mask buffer has {} values, expected {height}*{width}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || !(0.0..=1.0).contains(*v)) {
            return Err(validation(format!("mask value {v} is outside [0, 1]")));
        }
        Ok(Mask {
            height,
            width,
            data,
            semantics,
        })
    }

    /// Construction path for generators that already guarantee the invariants.
    pub(crate) fn from_trusted(height: usize, width: usize, data: Vec<f32>, semantics: MaskSemantics) -> Self {
        debug_assert_eq!(data.len(), height * width);
        debug_assert!(data.iter().all(|v| (0.0..=1.0).contains(v)));
        Mask {
            height,
            width,
            data,
            semantics,
        }
    }

    pub fn constant(height: usize, width: usize, value: f32, semantics: MaskSemantics) -> Result<Self> {
        Mask::new(height, width, vec![value; height * width], semantics)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn semantics(&self) -> MaskSemantics {
        self.semantics
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// `1 − m` elementwise, with the semantics flag flipped.
    pub fn complement(&self) -> Mask {
        let semantics = match self.semantics {
            MaskSemantics::Preserve => MaskSemantics::OccludeRegion,
            MaskSemantics::OccludeRegion => MaskSemantics::Preserve,
        };
        Mask {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| 1.0 - v).collect(),
            semantics,
        }
    }

    /// Converts to a preservation mask, complementing region indicators.
    pub fn to_preserve(&self) -> Mask {
        match self.semantics {
            MaskSemantics::Preserve => self.clone(),
            MaskSemantics::OccludeRegion => self.complement(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| f64::from(v)).sum::<f64>() / self.data.len() as f64
    }
}

/// Provenance carried alongside every saliency map.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct SaliencyMeta {
    pub explainer: String,
    pub mask_digest: String,
    pub seed: u64,
}

/// Per-pixel importance scores for one target class.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    height: usize,
    width: usize,
    scores: Vec<f64>,
    pub target_class: usize,
    pub meta: SaliencyMeta,
}

impl SaliencyMap {
    pub fn new(height: usize, width: usize, scores: Vec<f64>, target_class: usize, meta: SaliencyMeta) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(validation("saliency dimensions must be positive"));
        }
        if scores.len() != height * width {
            return Err(shape(format!(
                "saliency buffer has {} values, expected {height}*{width}",
                scores.len()
            )));
        }
        if scores.iter().any(|v| !v.is_finite()) {
            return Err(validation("saliency scores must be finite"));
        }
        Ok(SaliencyMap {
            height,
            width,
            scores,
            target_class,
            meta,
        })
    }

    /// Bare map without provenance, mostly useful for metrics and tests.
    pub fn from_scores(height: usize, width: usize, scores: Vec<f64>) -> Result<Self> {
        SaliencyMap::new(height, width, scores, 0, SaliencyMeta::default())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.scores[y * self.width + x]
    }
}

/// Axis-aligned box with inclusive `x0, y0` and exclusive `x1, y1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BoundingBox {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Result<Self> {
        if x0 >= x1 || y0 >= y1 {
            return Err(validation(format!("bounding box ({x0},{y0})-({x1},{y1}) is empty")));
        }
        Ok(BoundingBox { x0, y0, x1, y1 })
    }

    pub fn full(height: usize, width: usize) -> Self {
        BoundingBox {
            x0: 0,
            y0: 0,
            x1: width,
            y1: height,
        }
    }

    pub fn validate_for(&self, height: usize, width: usize) -> Result<()> {
        if self.x0 >= self.x1 || self.y0 >= self.y1 || self.x1 > width || self.y1 > height {
            return Err(validation(format!(
                "bounding box ({},{})-({},{}) does not fit a {height}x{width} map",
                self.x0, self.y0, self.x1, self.y1
            )));
        }
        Ok(())
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        (self.x0..self.x1).contains(&x) && (self.y0..self.y1).contains(&y)
    }

    pub fn contains_index(&self, index: usize, width: usize) -> bool {
        self.contains(index / width, index % width)
    }
}

/// Class probabilities summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub const SUM_TOLERANCE: f64 = 1e-6;

    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(validation("probability vector is empty"));
        }
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || !(0.0..=1.0).contains(*p)) {
            return Err(validation(format!("probability {p} is outside [0, 1]")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(validation(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(ProbVector(probs))
    }

    /// Numerically stable softmax.
    pub fn softmax(logits: &[f64]) -> Result<Self> {
        if logits.iter().any(|z| !z.is_finite()) {
            return Err(validation("non-finite logit"));
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        ProbVector::new(exps.into_iter().map(|e| e / total).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, class: usize) -> Option<f64> {
        self.0.get(class).copied()
    }

    /// Index of the largest probability; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = i;
            }
        }
        best
    }
}

impl TryFrom<Vec<f64>> for ProbVector {
    type Error = crate::Error;

    fn try_from(probs: Vec<f64>) -> Result<Self> {
        ProbVector::new(probs)
    }
}

impl From<ProbVector> for Vec<f64> {
    fn from(p: ProbVector) -> Self {
        p.0
    }
}

/// Synthesizes a perturbed image: `image·m + fill·(1 − m)` per pixel and channel.
pub fn apply_mask(image: &Image, mask: &Mask, fill: &Fill) -> Result<Image> {
    if mask.semantics() != MaskSemantics::Preserve {
        return Err(validation(
            "apply_mask expects a Preserve mask; complement region masks first",
        ));
    }
    if (mask.height(), mask.width()) != (image.height(), image.width()) {
        return Err(shape(format!(
            "mask is {}x{}, image is {}x{}",
            mask.height(),
            mask.width(),
            image.height(),
            image.width()
        )));
    }
    let fill = fill.for_channels(image.channels())?;
    let c = image.channels();
    let mut data = Vec::with_capacity(image.data().len());
    for (px, &m) in image.data().chunks_exact(c).zip(mask.data()) {
        for (v, f) in px.iter().zip(&fill) {
            // Clamp absorbs rounding at the interval ends.
            data.push((v * m + f * (1.0 - m)).clamp(0.0, 1.0));
        }
    }
    Ok(Image { data, ..*image })
}

/// Min-max rescales scores to `[0, 1]`; constant maps become all zeros.
pub fn normalize_saliency(map: &SaliencyMap) -> Result<SaliencyMap> {
    if map.scores.iter().any(|v| !v.is_finite()) {
        return Err(validation("saliency contains non-finite scores"));
    }
    let (min, max) = min_max(&map.scores);
    let scores = if max > min {
        let range = max - min;
        map.scores.iter().map(|s| (s - min) / range).collect()
    } else {
        vec![0.0; map.scores.len()]
    };
    Ok(SaliencyMap { scores, ..map.clone() })
}

pub(crate) fn min_max(values: &[f64]) -> (f64, f64) {
    values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grey_image(h: usize, w: usize, c: usize, data: Vec<f32>) -> Image {
        Image::new(h, w, c, data).unwrap()
    }

    #[test]
    fn all_ones_mask_is_identity() {
        let img = grey_image(2, 3, 3, (0..18).map(|i| i as f32 / 17.0).collect());
        let mask = Mask::constant(2, 3, 1.0, MaskSemantics::Preserve).unwrap();
        assert_eq!(apply_mask(&img, &mask, &Fill::grey()).unwrap(), img);
    }

    #[test]
    fn all_zeros_mask_gives_fill() {
        let img = grey_image(2, 2, 1, vec![0.0, 1.0, 0.3, 0.9]);
        let mask = Mask::constant(2, 2, 0.0, MaskSemantics::Preserve).unwrap();
        let out = apply_mask(&img, &mask, &Fill::grey()).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn checkerboard_mask_arithmetic() {
        let img = grey_image(2, 2, 1, vec![0.0, 1.0, 1.0, 0.0]);
        let mask = Mask::new(2, 2, vec![1.0, 0.0, 0.0, 1.0], MaskSemantics::Preserve).unwrap();
        let out = apply_mask(&img, &mask, &Fill::grey()).unwrap();
        assert_eq!(out.data(), &[0.0, 0.5, 0.5, 0.0]);
    }

    #[test]
    fn apply_mask_rejects_bad_inputs() {
        let img = grey_image(2, 2, 1, vec![0.0; 4]);
        let small = Mask::constant(1, 2, 1.0, MaskSemantics::Preserve).unwrap();
        assert!(matches!(
            apply_mask(&img, &small, &Fill::grey()),
            Err(crate::Error::Shape(_))
        ));
        assert!(matches!(Fill::uniform(1.5), Err(crate::Error::Validation(_))));
        let region = Mask::constant(2, 2, 1.0, MaskSemantics::OccludeRegion).unwrap();
        assert!(apply_mask(&img, &region, &Fill::grey()).is_err());
        assert!(apply_mask(&img, &region.to_preserve(), &Fill::grey()).is_ok());
        let rgb_fill = Fill::new(vec![0.1, 0.2, 0.3]).unwrap();
        let ones = Mask::constant(2, 2, 1.0, MaskSemantics::Preserve).unwrap();
        assert!(matches!(
            apply_mask(&img, &ones, &rgb_fill),
            Err(crate::Error::Shape(_))
        ));
    }

    #[test]
    fn per_channel_fill() {
        let img = grey_image(1, 1, 3, vec![1.0, 1.0, 1.0]);
        let mask = Mask::constant(1, 1, 0.0, MaskSemantics::Preserve).unwrap();
        let fill = Fill::new(vec![0.1, 0.2, 0.3]).unwrap();
        assert_eq!(apply_mask(&img, &mask, &fill).unwrap().data(), &[0.1, 0.2, 0.3]);
    }

    #[test]
    fn image_invariants() {
        assert!(Image::new(0, 1, 1, vec![]).is_err());
        assert!(Image::new(1, 1, 1, vec![1.2]).is_err());
        assert!(Image::new(1, 1, 1, vec![f32::NAN]).is_err());
        assert!(Image::new(1, 2, 1, vec![0.5]).is_err());
    }

    #[test]
    fn normalize_examples() {
        let map = SaliencyMap::from_scores(1, 3, vec![0.0, 5.0, 10.0]).unwrap();
        assert_eq!(normalize_saliency(&map).unwrap().scores(), &[0.0, 0.5, 1.0]);

        let flat = SaliencyMap::from_scores(2, 2, vec![3.7; 4]).unwrap();
        assert_eq!(normalize_saliency(&flat).unwrap().scores(), &[0.0; 4]);

        let unit = SaliencyMap::from_scores(1, 4, vec![0.0, 0.25, 1.0, 0.6]).unwrap();
        assert_eq!(normalize_saliency(&unit).unwrap(), unit);
    }

    #[test]
    fn saliency_rejects_nan() {
        assert!(SaliencyMap::from_scores(1, 2, vec![0.0, f64::NAN]).is_err());
    }

    #[test]
    fn softmax_closed_form() {
        let p = ProbVector::softmax(&[1.0, 0.0]).unwrap();
        let e = std::f64::consts::E;
        assert!((p.as_slice()[0] - e / (e + 1.0)).abs() < 1e-15);
        assert!((p.as_slice()[0] - 0.7311).abs() < 1e-4);
        assert!((p.as_slice()[1] - 0.2689).abs() < 1e-4);
        assert_eq!(ProbVector::softmax(&[3.0, 3.0]).unwrap().as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn prob_vector_validation() {
        assert!(ProbVector::new(vec![0.5, 0.6]).is_err());
        assert!(ProbVector::new(vec![-0.1, 1.1]).is_err());
        assert_eq!(ProbVector::new(vec![0.2, 0.4, 0.4]).unwrap().argmax(), 1);
    }

    #[test]
    fn bbox_rules() {
        assert!(BoundingBox::new(2, 0, 2, 1).is_err());
        let b = BoundingBox::new(1, 1, 3, 2).unwrap();
        assert!(b.validate_for(2, 3).is_ok());
        assert!(b.validate_for(1, 3).is_err());
        assert!(b.contains(1, 2));
        assert!(!b.contains(0, 2));
        assert!(!b.contains(1, 3));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn unit_vec(n: usize) -> impl Strategy<Value = Vec<f32>> {
            proptest::collection::vec(0.0f32..=1.0, n)
        }

        proptest! {
            #[test]
            fn apply_mask_is_linear_in_mask(
                img in unit_vec(12), m1 in unit_vec(4), m2 in unit_vec(4),
                alpha in 0.0f32..=1.0, fill in 0.0f32..=1.0,
            ) {
                let image = Image::new(2, 2, 3, img).unwrap();
                let fill = Fill::uniform(fill).unwrap();
                let mix: Vec<f32> = m1.iter().zip(&m2).map(|(a, b)| alpha * a + (1.0 - alpha) * b).collect();
                let a = apply_mask(&image, &Mask::new(2, 2, m1, MaskSemantics::Preserve).unwrap(), &fill).unwrap();
                let b = apply_mask(&image, &Mask::new(2, 2, m2, MaskSemantics::Preserve).unwrap(), &fill).unwrap();
                let mixed = apply_mask(&image, &Mask::new(2, 2, mix, MaskSemantics::Preserve).unwrap(), &fill).unwrap();
                for ((x, y), z) in a.data().iter().zip(b.data()).zip(mixed.data()) {
                    prop_assert!((alpha * x + (1.0 - alpha) * y - z).abs() < 1e-5);
                    prop_assert!((0.0..=1.0).contains(z));
                }
            }

            #[test]
            fn normalize_is_idempotent(scores in proptest::collection::vec(-1e3f64..1e3, 1..40)) {
                let n = scores.len();
                let map = SaliencyMap::from_scores(1, n, scores).unwrap();
                let once = normalize_saliency(&map).unwrap();
                let twice = normalize_saliency(&once).unwrap();
                for (a, b) in once.scores().iter().zip(twice.scores()) {
                    prop_assert!((a - b).abs() < 1e-12);
                }
                let (lo, hi) = min_max(once.scores());
                prop_assert!(lo == 0.0 && (hi == 1.0 || hi == 0.0));
            }
        }
    }
}
