//! Random square-crop simulation.
//!
//! Each crop picks a patch side `scale * min(W, H)` with `scale` drawn
//! uniformly from the option menu, places the patch uniformly over the
//! image, keeps the faces whose center falls inside, clips them to the
//! patch and resizes everything to `output_side`. Labels are then assigned
//! on an `output_side x output_side` anchor grid.
//!
//! Image `i` draws from `rng::substream(seed, i)`, three values per crop in
//! the order scale index, x offset, y offset.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ams::ideal_max_iou;
use crate::anchors::{AnchorDesign, AnchorGrid};
use crate::corpus::{FaceFilter, ImageRecord};
use crate::geometry::BBox;
use crate::matching::{assign_labels_grid, MatchConfig};
use crate::rng::{self, Stream};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Retention {
    /// Keep a face when its center lies inside the patch.
    #[default]
    CenterInPatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropParams {
    /// Patch side as a fraction of the shorter image side.
    pub scale_options: Vec<f64>,
    pub output_side: f64,
    pub retention: Retention,
}

pub const DEFAULT_SCALES: [f64; 5] = [0.3, 0.45, 0.6, 0.8, 1.0];

impl Default for CropParams {
    fn default() -> Self {
        CropParams {
            scale_options: DEFAULT_SCALES.to_vec(),
            output_side: 640.0,
            retention: Retention::CenterInPatch,
        }
    }
}

impl CropParams {
    pub fn validate(&self) -> Result<()> {
        if self.scale_options.is_empty() {
            return Err(Error::validation("at least one crop scale is required"));
        }
        if let Some(s) = self.scale_options.iter().find(|s| !(**s > 0.0 && **s <= 1.0)) {
            return Err(Error::validation(format!("crop scale {s} outside (0, 1]")));
        }
        if !(self.output_side.is_finite() && self.output_side > 0.0) {
            return Err(Error::validation(format!(
                "output side must be positive, got {}",
                self.output_side
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Crop {
    /// Patch in source image coordinates.
    pub patch: BBox,
    /// Kept faces as `(input index, box on the output canvas)`.
    pub faces: Vec<(usize, BBox)>,
}

/// Draws one crop. Advances `rng` by exactly three draws.
pub fn random_crop(image_w: f64, image_h: f64, faces: &[BBox], params: &CropParams, rng: &mut Stream) -> Result<Crop> {
    params.validate()?;
    if !(image_w.is_finite() && image_h.is_finite() && image_w > 0.0 && image_h > 0.0) {
        return Err(Error::validation(format!(
            "no valid patch position on a {image_w}x{image_h} image"
        )));
    }
    let scale = params.scale_options[rng::pick(rng, params.scale_options.len())];
    let side = scale * image_w.min(image_h);
    let x0 = (image_w - side) * rng::unit(rng);
    let y0 = (image_h - side) * rng::unit(rng);
    let patch = BBox::new(x0, y0, side, side)?;
    let k = params.output_side / side;

    let kept = faces
        .iter()
        .enumerate()
        .filter_map(|(idx, f)| {
            let (cx, cy) = f.center();
            let inside = x0 <= cx && cx < x0 + side && y0 <= cy && cy < y0 + side;
            if !inside {
                return None;
            }
            let x1 = f.x.max(x0);
            let y1 = f.y.max(y0);
            let x2 = f.x2().min(x0 + side);
            let y2 = f.y2().min(y0 + side);
            BBox::new((x1 - x0) * k, (y1 - y0) * k, (x2 - x1) * k, (y2 - y1) * k)
                .ok()
                .map(|b| (idx, b))
        })
        .collect();
    Ok(Crop { patch, faces: kept })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FaceSimStat {
    pub image: String,
    pub face: usize,
    pub crops_seen: usize,
    /// Crops in which the face got at least one non-compensated positive.
    pub crops_positive: usize,
    pub best_observed_iou: f64,
    /// Best ideal-placement IoU over the post-crop shapes this face took.
    pub best_ideal_iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimOutcome {
    pub seed: u64,
    pub n_crops: usize,
    pub per_face: Vec<FaceSimStat>,
}

/// Runs `n_crops` crops per image and aggregates per-face matching results.
/// Faces are those passing [`FaceFilter::Valid`], clamped to the image.
pub fn simulate(
    corpus: &[ImageRecord],
    design: &AnchorDesign,
    cfg: &MatchConfig,
    params: &CropParams,
    n_crops: usize,
    seed: u64,
) -> Result<SimOutcome> {
    params.validate()?;
    cfg.validate()?;
    if let Some(rec) = corpus.iter().find(|r| r.dims().is_none()) {
        return Err(Error::validation(format!(
            "image {} has no pixel dimensions (supply a dims sidecar)",
            rec.path
        )));
    }
    let grid = AnchorGrid::new(design.clone(), params.output_side, params.output_side)?;

    let per_image: Vec<Vec<FaceSimStat>> = corpus
        .par_iter()
        .enumerate()
        .map(|(i, rec)| simulate_image(i as u64, rec, &grid, cfg, params, n_crops, seed))
        .collect::<Result<_>>()?;

    Ok(SimOutcome {
        seed,
        n_crops,
        per_face: per_image.into_iter().flatten().collect(),
    })
}

fn simulate_image(
    index: u64,
    rec: &ImageRecord,
    grid: &AnchorGrid,
    cfg: &MatchConfig,
    params: &CropParams,
    n_crops: usize,
    seed: u64,
) -> Result<Vec<FaceSimStat>> {
    let (w, h) = rec.dims().expect("dims checked by caller");
    let entries = rec.boxes(FaceFilter::Valid);
    let boxes: Vec<BBox> = entries.iter().map(|(_, b)| *b).collect();
    let mut stats: Vec<FaceSimStat> = entries
        .iter()
        .map(|(k, _)| FaceSimStat {
            image: rec.path.clone(),
            face: *k,
            crops_seen: 0,
            crops_positive: 0,
            best_observed_iou: 0.0,
            best_ideal_iou: 0.0,
        })
        .collect();

    let mut stream = rng::substream(seed, index);
    for _ in 0..n_crops {
        let crop = random_crop(w, h, &boxes, params, &mut stream)?;
        if crop.faces.is_empty() {
            continue;
        }
        let canvas: Vec<BBox> = crop.faces.iter().map(|(_, b)| *b).collect();
        let result = assign_labels_grid(grid, &canvas, cfg)?;
        for ((src, b), fm) in crop.faces.iter().zip(&result.per_face) {
            let s = &mut stats[*src];
            s.crops_seen += 1;
            if fm.positive_count > fm.compensated as usize {
                s.crops_positive += 1;
            }
            s.best_observed_iou = s.best_observed_iou.max(fm.max_iou);
            s.best_ideal_iou = s.best_ideal_iou.max(ideal_max_iou(b.w, b.aspect_ratio(), grid.design()));
        }
    }
    Ok(stats)
}
