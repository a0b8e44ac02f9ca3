//! Perturbation mask generators.
//!
//! Every stochastic generator takes an explicit seed. Mask `j` of a set is
//! drawn from its own ChaCha stream `(seed, j)`, so masks can be produced in
//! any order or in parallel and still come out bit-identical.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{shape, validation, Error, Result};
use crate::types::{Mask, MaskSemantics};

fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Random upsampled masks: an `h×h` Bernoulli grid, bilinearly stretched and
/// randomly shifted within one cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiseSpec {
    pub n_masks: usize,
    /// Side length of the low-resolution grid.
    pub cells: usize,
    pub keep_prob: f64,
    pub height: usize,
    pub width: usize,
}

impl RiseSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_masks == 0 {
            return Err(validation("RISE needs at least one mask"));
        }
        if self.height == 0 || self.width == 0 {
            return Err(validation("RISE image dimensions must be positive"));
        }
        if self.cells == 0 || self.cells > self.height.min(self.width) {
            return Err(validation(format!(
                "RISE grid size {} must be in 1..={}",
                self.cells,
                self.height.min(self.width)
            )));
        }
        if !(self.keep_prob > 0.0 && self.keep_prob < 1.0) {
            return Err(validation(format!(
                "RISE keep probability {} must be in (0, 1)",
                self.keep_prob
            )));
        }
        Ok(())
    }
}

/// Lazily produces individual RISE masks for a validated spec and seed.
#[derive(Debug, Clone)]
pub struct RiseMaskGenerator {
    spec: RiseSpec,
    seed: u64,
    cell_h: usize,
    cell_w: usize,
    // Source coordinate lookup per upsampled row/column: (lower index, weight of upper).
    rows: Vec<(usize, f64)>,
    cols: Vec<(usize, f64)>,
}

impl RiseMaskGenerator {
    pub fn new(spec: RiseSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let h = spec.cells;
        let cell_h = spec.height.div_ceil(h);
        let cell_w = spec.width.div_ceil(h);
        let rows = interp_table(h, (h + 1) * cell_h);
        let cols = interp_table(h, (h + 1) * cell_w);
        Ok(RiseMaskGenerator {
            spec,
            seed,
            cell_h,
            cell_w,
            rows,
            cols,
        })
    }

    pub fn spec(&self) -> &RiseSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.spec.n_masks
    }

    pub fn is_empty(&self) -> bool {
        self.spec.n_masks == 0
    }

    pub fn mask(&self, index: usize) -> Mask {
        let mut rng = stream_rng(self.seed, index as u64);
        let h = self.spec.cells;
        let p = self.spec.keep_prob;
        let grid: Vec<f64> = (0..h * h)
            .map(|_| if rng.gen::<f64>() < p { 1.0 } else { 0.0 })
            .collect();
        let dy = rng.gen_range(0..self.cell_h);
        let dx = rng.gen_range(0..self.cell_w);
        self.render(&grid, dy, dx)
    }

    fn render(&self, grid: &[f64], dy: usize, dx: usize) -> Mask {
        let h = self.spec.cells;
        let (height, width) = (self.spec.height, self.spec.width);
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            let (r0, ty) = self.rows[y + dy];
            let r1 = (r0 + 1).min(h - 1);
            for x in 0..width {
                let (c0, tx) = self.cols[x + dx];
                let c1 = (c0 + 1).min(h - 1);
                let top = grid[r0 * h + c0] * (1.0 - tx) + grid[r0 * h + c1] * tx;
                let bottom = grid[r1 * h + c0] * (1.0 - tx) + grid[r1 * h + c1] * tx;
                let v = top * (1.0 - ty) + bottom * ty;
                data.push(v.clamp(0.0, 1.0) as f32);
            }
        }
        Mask::from_trusted(height, width, data, MaskSemantics::Preserve)
    }

    /// Masks `range` in index order, generated in parallel.
    pub fn masks(&self, range: std::ops::Range<usize>) -> Vec<Mask> {
        range.into_par_iter().map(|j| self.mask(j)).collect()
    }
}

/// Half-pixel-centred bilinear source lookup from `src` cells to `dst` samples,
/// clamped at the borders.
fn interp_table(src: usize, dst: usize) -> Vec<(usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = s.floor() as usize;
            (lo, s - lo as f64)
        })
        .collect()
}

pub fn generate_rise_masks(spec: &RiseSpec, seed: u64) -> Result<Vec<Mask>> {
    let gen = RiseMaskGenerator::new(*spec, seed)?;
    Ok(gen.masks(0..spec.n_masks))
}

/// Square sliding patch with a fixed stride.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OcclusionSpec {
    pub patch: usize,
    pub stride: usize,
    pub height: usize,
    pub width: usize,
}

/// Top-left corner of one occluding patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchPosition {
    pub x: usize,
    pub y: usize,
}

impl OcclusionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(validation("occlusion image dimensions must be positive"));
        }
        if self.patch == 0 || self.patch > self.height.min(self.width) {
            return Err(validation(format!(
                "occlusion patch {} must be in 1..={}",
                self.patch,
                self.height.min(self.width)
            )));
        }
        if self.stride == 0 {
            return Err(validation("occlusion stride must be positive"));
        }
        Ok(())
    }

    /// `(⌊(W − patch)/stride⌋ + 1) · (⌊(H − patch)/stride⌋ + 1)`
    pub fn count(&self) -> usize {
        ((self.width - self.patch) / self.stride + 1) * ((self.height - self.patch) / self.stride + 1)
    }

    /// Patch corners with the patch fully inside the image, row-major.
    pub fn positions(&self) -> Vec<PatchPosition> {
        let mut out = Vec::with_capacity(self.count());
        for y in (0..=self.height - self.patch).step_by(self.stride) {
            for x in (0..=self.width - self.patch).step_by(self.stride) {
                out.push(PatchPosition { x, y });
            }
        }
        out
    }

    pub fn mask_at(&self, pos: PatchPosition) -> Mask {
        let mut data = vec![0.0f32; self.height * self.width];
        for y in pos.y..pos.y + self.patch {
            data[y * self.width + pos.x..y * self.width + pos.x + self.patch].fill(1.0);
        }
        Mask::from_trusted(self.height, self.width, data, MaskSemantics::OccludeRegion)
    }
}

pub fn generate_occlusion_masks(spec: &OcclusionSpec) -> Result<Vec<Mask>> {
    spec.validate()?;
    Ok(spec.positions().into_iter().map(|p| spec.mask_at(p)).collect())
}

/// Per-pixel segment ids `0..K`, each segment nonempty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentMap {
    height: usize,
    width: usize,
    ids: Vec<u32>,
    n_segments: usize,
}

impl SegmentMap {
    pub fn new(height: usize, width: usize, ids: Vec<u32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(validation("segment map dimensions must be positive"));
        }
        if ids.len() != height * width {
            return Err(shape(format!(
                "segment map has {} ids, expected {height}*{width}",
                ids.len()
            )));
        }
        let k = ids.iter().max().map_or(0, |&m| m as usize + 1);
        let mut seen = vec![false; k];
        for &id in &ids {
            seen[id as usize] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(validation(format!(
                "segment ids must be contiguous; segment {missing} of {k} is empty"
            )));
        }
        Ok(SegmentMap {
            height,
            width,
            ids,
            n_segments: k,
        })
    }

    /// Loads ids from an 8-bit greyscale PNG.
    pub fn from_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let luma = img.into_luma8();
        let (w, h) = (luma.width() as usize, luma.height() as usize);
        SegmentMap::new(h, w, luma.into_raw().into_iter().map(u32::from).collect())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn n_segments(&self) -> usize {
        self.n_segments
    }

    pub fn segment_of(&self, y: usize, x: usize) -> usize {
        self.ids[y * self.width + x] as usize
    }

    /// Expands a per-segment on/off vector into a preservation mask.
    pub fn expand(&self, z: &[bool]) -> Result<Mask> {
        if z.len() != self.n_segments {
            return Err(shape(format!(
                "segment vector has {} entries, map has {} segments",
                z.len(),
                self.n_segments
            )));
        }
        let data = self
            .ids
            .iter()
            .map(|&id| if z[id as usize] { 1.0 } else { 0.0 })
            .collect();
        Ok(Mask::from_trusted(
            self.height,
            self.width,
            data,
            MaskSemantics::Preserve,
        ))
    }

    /// Paints one value per segment onto the pixel grid.
    pub fn paint(&self, values: &[f64]) -> Vec<f64> {
        self.ids.iter().map(|&id| values[id as usize]).collect()
    }
}

/// Regular `k_side × k_side` tiling; the last row and column of tiles absorb
/// any remainder. Ids are row-major.
pub fn segment_grid(height: usize, width: usize, k_side: usize) -> Result<SegmentMap> {
    if k_side == 0 || k_side > height.min(width) {
        return Err(validation(format!(
            "grid side {k_side} must be in 1..={}",
            height.min(width)
        )));
    }
    let tile_h = height / k_side;
    let tile_w = width / k_side;
    let mut ids = Vec::with_capacity(height * width);
    for y in 0..height {
        let ty = (y / tile_h).min(k_side - 1);
        for x in 0..width {
            let tx = (x / tile_w).min(k_side - 1);
            ids.push((ty * k_side + tx) as u32);
        }
    }
    SegmentMap::new(height, width, ids)
}

/// One LIME perturbation: which segments are kept, and the pixel mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentSample {
    pub z: Vec<bool>,
    pub mask: Mask,
}

impl SegmentSample {
    pub fn kept(&self) -> usize {
        self.z.iter().filter(|&&b| b).count()
    }
}

pub fn sample_segment_masks(
    segmap: &SegmentMap,
    n_samples: usize,
    keep_prob: f64,
    seed: u64,
) -> Result<Vec<SegmentSample>> {
    if n_samples == 0 {
        return Err(validation("need at least one LIME sample"));
    }
    if !(keep_prob > 0.0 && keep_prob < 1.0) {
        return Err(validation(format!("keep probability {keep_prob} must be in (0, 1)")));
    }
    (0..n_samples)
        .into_par_iter()
        .map(|j| {
            let mut rng = stream_rng(seed, j as u64);
            let z: Vec<bool> = (0..segmap.n_segments()).map(|_| rng.gen::<f64>() < keep_prob).collect();
            let mask = segmap.expand(&z)?;
            Ok(SegmentSample { z, mask })
        })
        .collect()
}

/// Elementwise mean of equally sized masks.
pub fn average_mask(masks: &[Mask]) -> Result<Mask> {
    let first = masks
        .first()
        .ok_or_else(|| validation("cannot average an empty mask list"))?;
    let (h, w) = (first.height(), first.width());
    let mut acc = vec![0.0f64; h * w];
    for (i, m) in masks.iter().enumerate() {
        if (m.height(), m.width()) != (h, w) {
            return Err(shape(format!(
                "mask {i} is {}x{}, expected {h}x{w}",
                m.height(),
                m.width()
            )));
        }
        for (a, &v) in acc.iter_mut().zip(m.data()) {
            *a += f64::from(v);
        }
    }
    let n = masks.len() as f64;
    let data = acc.into_iter().map(|a| ((a / n) as f32).clamp(0.0, 1.0)).collect();
    Ok(Mask::from_trusted(h, w, data, first.semantics()))
}

/// Mask-set specification as it appears in configuration files.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MaskConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rise: Option<RiseParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub occlusion: Option<OcclusionParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lime: Option<LimeParams>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiseParams {
    pub n: usize,
    pub h: usize,
    pub p: f64,
}

impl RiseParams {
    pub fn spec(&self, height: usize, width: usize) -> RiseSpec {
        RiseSpec {
            n_masks: self.n,
            cells: self.h,
            keep_prob: self.p,
            height,
            width,
        }
    }
}

impl Default for RiseParams {
    fn default() -> Self {
        RiseParams { n: 1000, h: 7, p: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OcclusionParams {
    pub patch: usize,
    pub stride: usize,
}

impl OcclusionParams {
    pub fn spec(&self, height: usize, width: usize) -> OcclusionSpec {
        OcclusionSpec {
            patch: self.patch,
            stride: self.stride,
            height,
            width,
        }
    }
}

impl Default for OcclusionParams {
    fn default() -> Self {
        OcclusionParams { patch: 50, stride: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimeParams {
    pub k_side: usize,
    pub n_samples: usize,
    #[serde(default = "default_keep_prob")]
    pub keep_prob: f64,
    /// Optional PNG of segment ids replacing the regular grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segments_png: Option<std::path::PathBuf>,
}

fn default_keep_prob() -> f64 {
    0.5
}

impl Default for LimeParams {
    fn default() -> Self {
        LimeParams {
            k_side: 4,
            n_samples: 512,
            keep_prob: 0.5,
            segments_png: None,
        }
    }
}
