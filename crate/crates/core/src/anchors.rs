//! Anchor designs and anchor-grid generation.

use std::f64::consts::SQRT_2;

use serde::{Deserialize, Serialize};

use crate::geometry::BBox;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PyramidLevel {
    pub name: String,
    /// Grid spacing in pixels.
    pub stride: f64,
    /// Anchor widths at this level, strictly increasing.
    pub sizes: Vec<f64>,
}

/// A set of pyramid levels sharing one anchor aspect ratio (`h / w`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorDesign {
    pub levels: Vec<PyramidLevel>,
    pub aspect_ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    pub bbox: BBox,
    pub level_index: usize,
    pub size: f64,
}

impl AnchorDesign {
    pub fn new(levels: Vec<PyramidLevel>, aspect_ratio: f64) -> Result<Self> {
        let design = AnchorDesign { levels, aspect_ratio };
        design.validate()?;
        Ok(design)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.aspect_ratio.is_finite() && self.aspect_ratio > 0.0) {
            return Err(Error::validation(format!(
                "anchor aspect ratio must be positive, got {}",
                self.aspect_ratio
            )));
        }
        if self.levels.is_empty() {
            return Err(Error::validation("anchor design needs at least one level"));
        }
        for level in &self.levels {
            if !(level.stride.is_finite() && level.stride > 0.0) {
                return Err(Error::validation(format!(
                    "level {}: stride must be positive, got {}",
                    level.name, level.stride
                )));
            }
            if level.sizes.is_empty() {
                return Err(Error::validation(format!("level {}: no anchor sizes", level.name)));
            }
            if level.sizes.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
                return Err(Error::validation(format!("level {}: sizes must be positive", level.name)));
            }
            if level.sizes.windows(2).any(|p| p[0] >= p[1]) {
                return Err(Error::validation(format!(
                    "level {}: sizes must be strictly increasing",
                    level.name
                )));
            }
        }
        let mut all = self.sizes();
        all.sort_by(f64::total_cmp);
        if all.windows(2).any(|p| p[0] >= p[1]) {
            return Err(Error::validation("anchor sizes repeat across levels"));
        }
        Ok(())
    }

    /// All anchor widths across levels, in level order.
    pub fn sizes(&self) -> Vec<f64> {
        self.levels.iter().flat_map(|l| l.sizes.iter().copied()).collect()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let design: AnchorDesign =
            serde_json::from_str(text).map_err(|e| Error::validation(format!("anchor design JSON: {e}")))?;
        design.validate()?;
        Ok(design)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("anchor design serializes")
    }

    /// Number of anchors `generate_anchors` yields for an image of this size.
    pub fn anchor_count(&self, image_w: f64, image_h: f64) -> usize {
        self.levels
            .iter()
            .map(|l| {
                let (cols, rows) = grid_dims(l.stride, image_w, image_h);
                cols * rows * l.sizes.len()
            })
            .sum()
    }
}

/// The five-level P2..P6 detector design with square anchors.
///
/// Strides are 4, 8, 16, 32, 64; sizes climb from 4 to 512 in steps of √2.
pub fn detector_design() -> AnchorDesign {
    let level = |name: &str, stride: f64, sizes: [f64; 3]| PyramidLevel {
        name: name.to_string(),
        stride,
        sizes: sizes.to_vec(),
    };
    AnchorDesign {
        levels: vec![
            level("P2", 4.0, [4.0, 4.0 * SQRT_2, 8.0]),
            level("P3", 8.0, [8.0 * SQRT_2, 16.0, 16.0 * SQRT_2]),
            level("P4", 16.0, [32.0, 32.0 * SQRT_2, 64.0]),
            level("P5", 32.0, [64.0 * SQRT_2, 128.0, 128.0 * SQRT_2]),
            level("P6", 64.0, [256.0, 256.0 * SQRT_2, 512.0]),
        ],
        aspect_ratio: 1.0,
    }
}

/// High-recall single-level ladder used for ideal-placement analysis:
/// widths `4 * √2^k` for `k = 0..=14`. Stride is nominal (1.0).
pub fn ams_design(aspect_ratio: f64) -> Result<AnchorDesign> {
    ladder_design(4.0, 512.0, SQRT_2, aspect_ratio)
}

/// Geometric ladder `min_size * step^k` up to `max_size` (inclusive within
/// a relative 1e-9), as a single nominal level.
pub fn ladder_design(min_size: f64, max_size: f64, step: f64, aspect_ratio: f64) -> Result<AnchorDesign> {
    if !(min_size > 0.0 && max_size >= min_size && step > 1.0 && aspect_ratio > 0.0) {
        return Err(Error::validation(format!(
            "ladder needs 0 < min <= max, step > 1 and ar > 0 (min={min_size}, max={max_size}, step={step}, ar={aspect_ratio})"
        )));
    }
    let mut sizes = Vec::new();
    let limit = max_size * (1.0 + 1e-9);
    // a √2 step is taken as whole powers of two times 1 or √2, which keeps
    // every other rung exact
    let sqrt2 = (step - SQRT_2).abs() < 1e-12;
    let mut k = 0i32;
    loop {
        let s = if sqrt2 {
            let base = min_size * 2f64.powi(k / 2);
            if k % 2 == 0 {
                base
            } else {
                base * SQRT_2
            }
        } else {
            min_size * step.powi(k)
        };
        if s > limit {
            break;
        }
        sizes.push(s);
        k += 1;
    }
    AnchorDesign::new(
        vec![PyramidLevel {
            name: "ladder".to_string(),
            stride: 1.0,
            sizes,
        }],
        aspect_ratio,
    )
}

fn grid_dims(stride: f64, image_w: f64, image_h: f64) -> (usize, usize) {
    let cols = (image_w / stride).floor().max(0.0) as usize;
    let rows = (image_h / stride).floor().max(0.0) as usize;
    (cols, rows)
}

/// Tiles every level's anchors over a `image_w x image_h` plane.
///
/// Cell `(i, j)` is centered at `((i + 0.5) * stride, (j + 0.5) * stride)`.
/// Order is level, then row-major cell, then size. Anchors are not clipped.
pub fn generate_anchors(design: &AnchorDesign, image_w: f64, image_h: f64) -> Result<Vec<Anchor>> {
    Ok(AnchorGrid::new(design.clone(), image_w, image_h)?.anchors)
}

#[derive(Debug, Clone, Copy)]
struct LevelLayout {
    stride: f64,
    cols: usize,
    rows: usize,
    offset: usize,
}

/// Generated anchors plus the grid layout needed to find, for a given box,
/// every anchor that can overlap it without scanning the whole list.
#[derive(Debug, Clone)]
pub struct AnchorGrid {
    design: AnchorDesign,
    layouts: Vec<LevelLayout>,
    anchors: Vec<Anchor>,
}

impl AnchorGrid {
    pub fn new(design: AnchorDesign, image_w: f64, image_h: f64) -> Result<Self> {
        design.validate()?;
        if !(image_w.is_finite() && image_h.is_finite() && image_w > 0.0 && image_h > 0.0) {
            return Err(Error::validation(format!(
                "image dimensions must be positive, got {image_w}x{image_h}"
            )));
        }
        let ar = design.aspect_ratio;
        let mut layouts = Vec::with_capacity(design.levels.len());
        let mut anchors = Vec::with_capacity(design.anchor_count(image_w, image_h));
        for (li, level) in design.levels.iter().enumerate() {
            let (cols, rows) = grid_dims(level.stride, image_w, image_h);
            if cols == 0 || rows == 0 {
                return Err(Error::validation(format!(
                    "level {} (stride {}) has no grid cells on a {image_w}x{image_h} image",
                    level.name, level.stride
                )));
            }
            layouts.push(LevelLayout {
                stride: level.stride,
                cols,
                rows,
                offset: anchors.len(),
            });
            for j in 0..rows {
                let cy = (j as f64 + 0.5) * level.stride;
                for i in 0..cols {
                    let cx = (i as f64 + 0.5) * level.stride;
                    for &size in &level.sizes {
                        let h = size * ar;
                        anchors.push(Anchor {
                            bbox: BBox {
                                x: cx - size / 2.0,
                                y: cy - h / 2.0,
                                w: size,
                                h,
                            },
                            level_index: li,
                            size,
                        });
                    }
                }
            }
        }
        Ok(AnchorGrid {
            design,
            layouts,
            anchors,
        })
    }

    pub fn anchors(&self) -> &[Anchor] {
        &self.anchors
    }

    pub fn design(&self) -> &AnchorDesign {
        &self.design
    }

    /// Appends to `out` the index of every anchor whose box may intersect
    /// `target`. The result is a superset of the overlapping anchors, in
    /// ascending index order.
    pub fn overlap_candidates(&self, target: &BBox, out: &mut Vec<usize>) {
        let ar = self.design.aspect_ratio;
        for (level, layout) in self.design.levels.iter().zip(&self.layouts) {
            let n_sizes = level.sizes.len();
            let largest = level.sizes[n_sizes - 1];
            let Some((i0, i1)) = axis_range(target.x, target.x2(), largest / 2.0, layout.stride, layout.cols) else {
                continue;
            };
            let Some((j0, j1)) = axis_range(target.y, target.y2(), largest * ar / 2.0, layout.stride, layout.rows)
            else {
                continue;
            };
            for j in j0..=j1 {
                for i in i0..=i1 {
                    let base = layout.offset + (j * layout.cols + i) * n_sizes;
                    out.extend(base..base + n_sizes);
                }
            }
        }
    }
}

/// Cell indices whose center `c = (k + 0.5) * stride` satisfies
/// `lo - half < c < hi + half`, widened by one cell on each side.
fn axis_range(lo: f64, hi: f64, half: f64, stride: f64, n: usize) -> Option<(usize, usize)> {
    let first = ((lo - half) / stride - 0.5).floor() - 1.0;
    let last = ((hi + half) / stride - 0.5).ceil() + 1.0;
    let first = first.max(0.0);
    let last = last.min(n as f64 - 1.0);
    if last < first {
        return None;
    }
    Some((first as usize, last as usize))
}
