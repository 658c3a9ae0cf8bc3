//! Best-achievable IoU per face and the anchor matching simulation (AMS).
//!
//! Under ideal placement an anchor of width `s` can always be positioned to
//! realize the largest possible intersection with a face, so the best IoU a
//! face can ever reach depends only on its width, its aspect ratio and the
//! design's size ladder. Letting the ladder become continuous gives the
//! closed form `1 / (2 sqrt(rho) - 1)` with `rho = max(r/ra, ra/r)`.

use rayon::prelude::*;
use serde::Serialize;

use crate::anchors::AnchorDesign;
use crate::corpus::{FaceFilter, ImageRecord};
use crate::geometry::ideal_intersection_unchecked;
use crate::{Error, Result};

/// Best IoU a `face_w x face_w*face_ar` face reaches against any size of
/// `design` under ideal placement.
pub fn ideal_max_iou(face_w: f64, face_ar: f64, design: &AnchorDesign) -> f64 {
    let face_area = face_w * face_w * face_ar;
    let ra = design.aspect_ratio;
    design
        .levels
        .iter()
        .flat_map(|l| l.sizes.iter())
        .map(|&s| {
            let inter = ideal_intersection_unchecked(face_w, face_ar, s, ra);
            inter / (face_area + s * s * ra - inter)
        })
        .fold(0.0, f64::max)
}

/// Supremum of [`ideal_max_iou`] over a continuous size ladder.
pub fn analytic_max_iou(face_ar: f64, anchor_ar: f64) -> f64 {
    let rho = (face_ar / anchor_ar).max(anchor_ar / face_ar);
    1.0 / (2.0 * rho.sqrt() - 1.0)
}

/// Right aspect-ratio boundary where [`analytic_max_iou`] equals `t_p`.
/// The left boundary is `anchor_ar^2 / boundary_ar(..)`.
pub fn boundary_ar(t_p: f64, anchor_ar: f64) -> Result<f64> {
    if !(t_p > 0.0 && t_p <= 1.0) {
        return Err(Error::validation(format!("t_p must be in (0, 1], got {t_p}")));
    }
    if !(anchor_ar.is_finite() && anchor_ar > 0.0) {
        return Err(Error::validation(format!("anchor_ar must be positive, got {anchor_ar}")));
    }
    let half = (1.0 / t_p + 1.0) / 2.0;
    Ok(anchor_ar * half * half)
}

/// Width at which a face of aspect ratio `face_ar` attains the analytic
/// optimum against an anchor of width `anchor_size`.
pub fn grid_aligned_width(anchor_size: f64, face_ar: f64, anchor_ar: f64) -> f64 {
    anchor_size / (face_ar / anchor_ar).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FaceMatchStat {
    pub image: String,
    pub face: usize,
    pub ar: f64,
    pub width: f64,
    pub max_iou: f64,
    pub matched: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AmsReport {
    pub t_p: f64,
    pub anchor_ar: f64,
    /// `None` when no face matched.
    pub matched_ar_min: Option<f64>,
    pub matched_ar_max: Option<f64>,
    /// `max(matched_ar_max / anchor_ar, anchor_ar / matched_ar_min)`.
    pub fitted_eta: Option<f64>,
    /// `boundary_ar(t_p, anchor_ar) / anchor_ar`; `None` for `t_p == 0`.
    pub analytic_eta: Option<f64>,
    pub n_faces: usize,
    pub n_matched: usize,
    /// Faces in the corpus before filtering.
    pub n_faces_total: usize,
}

impl AmsReport {
    pub fn range_defined(&self) -> bool {
        self.n_matched > 0
    }
}

/// Runs AMS over every face passing `filter`: computes each face's ideal
/// max IoU, marks it matched when strictly above `t_p`, and records the
/// aspect-ratio range of matched faces.
pub fn run_ams(
    corpus: &[ImageRecord],
    design: &AnchorDesign,
    t_p: f64,
    filter: FaceFilter,
) -> Result<(AmsReport, Vec<FaceMatchStat>)> {
    design.validate()?;
    if !(0.0..=1.0).contains(&t_p) {
        return Err(Error::validation(format!("t_p must be in [0, 1], got {t_p}")));
    }
    let faces: Vec<(&ImageRecord, usize)> = corpus
        .iter()
        .flat_map(|rec| (0..rec.faces.len()).map(move |k| (rec, k)))
        .collect();
    let n_total = faces.len();

    let stats: Vec<FaceMatchStat> = faces
        .par_iter()
        .filter(|(rec, k)| filter.keep(&rec.faces[*k]))
        .map(|(rec, k)| {
            let f = &rec.faces[*k];
            let ar = f.h / f.w;
            let max_iou = ideal_max_iou(f.w, ar, design);
            FaceMatchStat {
                image: rec.path.clone(),
                face: *k,
                ar,
                width: f.w,
                max_iou,
                matched: max_iou > t_p,
            }
        })
        .collect();

    let ra = design.aspect_ratio;
    let (lo, hi) = stats
        .iter()
        .filter(|s| s.matched)
        .fold((None, None), |(lo, hi): (Option<f64>, Option<f64>), s| {
            (
                Some(lo.map_or(s.ar, |v| v.min(s.ar))),
                Some(hi.map_or(s.ar, |v| v.max(s.ar))),
            )
        });
    let fitted_eta = match (lo, hi) {
        (Some(lo), Some(hi)) => Some((hi / ra).max(ra / lo).max(1.0)),
        _ => None,
    };
    let report = AmsReport {
        t_p,
        anchor_ar: ra,
        matched_ar_min: lo,
        matched_ar_max: hi,
        fitted_eta,
        analytic_eta: boundary_ar(t_p, ra).ok().map(|b| b / ra),
        n_faces: stats.len(),
        n_matched: stats.iter().filter(|s| s.matched).count(),
        n_faces_total: n_total,
    };
    Ok((report, stats))
}
