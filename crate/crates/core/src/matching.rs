//! Label assignment and aspect-ratio sampling domains.
//!
//! Three strategies share one labeling rule and differ only in the positive
//! threshold each face gets:
//!
//! - `SAM`: every face uses `t0`.
//! - `SAM_COMPENSATE`: as SAM, then each face left without a positive anchor
//!   claims its single best anchor.
//! - `WARM`: faces whose aspect ratio falls in the extreme domain
//!   `E(eta1, eta0)` get `t0 - delta * theta(r)`, decreasing linearly from
//!   `t0` at the `eta0` edge towards `t0 - delta` at the `eta1` edge.
//!
//! An anchor is positive for the face it overlaps most among the faces whose
//! threshold it strictly exceeds, negative when its best IoU is strictly
//! below `tn`, and ignored otherwise.

use std::collections::hash_map::Entry;
use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anchors::{Anchor, AnchorDesign, AnchorGrid};
use crate::corpus::{FaceFilter, ImageRecord};
use crate::report::MatchSummary;
use crate::geometry::{iou_unchecked, BBox};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Strategy {
    Sam,
    SamCompensate,
    Warm,
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::Sam => "SAM",
            Strategy::SamCompensate => "SAM_COMPENSATE",
            Strategy::Warm => "WARM",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchConfig {
    pub strategy: Strategy,
    /// Initial positive threshold.
    pub t0: f64,
    /// Negative threshold.
    pub tn: f64,
    /// Threshold amplitude for extreme-AR faces.
    pub delta: f64,
    /// Inner domain radius; faces inside `D(anchor_ar, eta0)` keep `t0`.
    pub eta0: f64,
    /// Outer domain radius.
    pub eta1: f64,
    pub anchor_ar: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            strategy: Strategy::Warm,
            t0: 0.5,
            tn: 0.35,
            delta: 0.1,
            eta0: 2.0,
            eta1: 3.0,
            anchor_ar: 1.0,
        }
    }
}

impl MatchConfig {
    pub fn sam(t0: f64, tn: f64) -> Self {
        MatchConfig {
            strategy: Strategy::Sam,
            t0,
            tn,
            ..MatchConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.t0, self.tn, self.delta, self.eta0, self.eta1, self.anchor_ar]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::validation("match config has non-finite values"));
        }
        if !(self.t0 > 0.0 && self.t0 <= 1.0) {
            return Err(Error::validation(format!("t0 must be in (0, 1], got {}", self.t0)));
        }
        if !(self.tn >= 0.0 && self.tn < 1.0) {
            return Err(Error::validation(format!("tn must be in [0, 1), got {}", self.tn)));
        }
        if self.delta < 0.0 {
            return Err(Error::validation(format!("delta must be >= 0, got {}", self.delta)));
        }
        if self.tn >= self.t0 {
            return Err(Error::validation(format!(
                "tn ({}) must be below t0 ({})",
                self.tn, self.t0
            )));
        }
        if self.strategy == Strategy::Warm && self.t0 - self.delta <= self.tn {
            return Err(Error::validation(format!(
                "t0 - delta ({}) must stay above tn ({})",
                self.t0 - self.delta,
                self.tn
            )));
        }
        if !(self.eta0 > 1.0 && self.eta1 > self.eta0) {
            return Err(Error::validation(format!(
                "need eta1 > eta0 > 1, got eta0={} eta1={}",
                self.eta0, self.eta1
            )));
        }
        if self.anchor_ar <= 0.0 {
            return Err(Error::validation(format!(
                "anchor_ar must be positive, got {}",
                self.anchor_ar
            )));
        }
        Ok(())
    }

    /// Missing fields take their defaults.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: MatchConfig =
            serde_json::from_str(text).map_err(|e| Error::validation(format!("match config JSON: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("match config serializes")
    }

    /// Positive threshold for a face of aspect ratio `face_ar` under this
    /// config's strategy.
    pub fn positive_threshold(&self, face_ar: f64) -> f64 {
        match self.strategy {
            Strategy::Sam | Strategy::SamCompensate => self.t0,
            Strategy::Warm => warm_threshold(face_ar, self),
        }
    }
}

/// Aspect-ratio sampling domain `D(anchor_ar, eta) = (anchor_ar/eta, anchor_ar*eta)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arsd {
    anchor_ar: f64,
    eta: f64,
}

impl Arsd {
    pub fn new(anchor_ar: f64, eta: f64) -> Result<Self> {
        if !(anchor_ar.is_finite() && anchor_ar > 0.0) {
            return Err(Error::validation(format!("anchor_ar must be positive, got {anchor_ar}")));
        }
        if !(eta.is_finite() && eta > 1.0) {
            return Err(Error::validation(format!("domain radius must exceed 1, got {eta}")));
        }
        Ok(Arsd { anchor_ar, eta })
    }

    pub fn lower(&self) -> f64 {
        self.anchor_ar / self.eta
    }

    pub fn upper(&self) -> f64 {
        self.anchor_ar * self.eta
    }

    pub fn contains(&self, r: f64) -> bool {
        self.lower() < r && r < self.upper()
    }

    /// `anchor_ar/eta < r < anchor_ar`
    pub fn contains_left(&self, r: f64) -> bool {
        self.lower() < r && r < self.anchor_ar
    }

    /// `anchor_ar <= r < anchor_ar*eta`
    pub fn contains_right(&self, r: f64) -> bool {
        self.anchor_ar <= r && r < self.upper()
    }
}

pub fn arsd_contains(r: f64, anchor_ar: f64, eta: f64) -> Result<bool> {
    if !(r.is_finite() && r > 0.0) {
        return Err(Error::validation(format!("aspect ratio must be positive, got {r}")));
    }
    Ok(Arsd::new(anchor_ar, eta)?.contains(r))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ExtremeSide {
    Left,
    Right,
    Neither,
}

/// Which half of the extreme domain `E(eta1, eta0)` contains `r`.
///
/// Left half is `(anchor_ar/eta1, anchor_ar/eta0]`, right half is
/// `[anchor_ar*eta0, anchor_ar*eta1)`.
pub fn extreme_domain_contains(r: f64, cfg: &MatchConfig) -> ExtremeSide {
    let ra = cfg.anchor_ar;
    if ra / cfg.eta1 < r && r <= ra / cfg.eta0 {
        ExtremeSide::Left
    } else if ra * cfg.eta0 <= r && r < ra * cfg.eta1 {
        ExtremeSide::Right
    } else {
        ExtremeSide::Neither
    }
}

/// Linear rate in `[0, 1)`: 0 at the `eta0` edge of `E`, approaching 1 at
/// the `eta1` edge. The range endpoints are the analytic domain bounds.
pub fn theta(r: f64, cfg: &MatchConfig) -> Result<f64> {
    let ra = cfg.anchor_ar;
    match extreme_domain_contains(r, cfg) {
        ExtremeSide::Left => {
            let (min, max) = (ra / cfg.eta1, ra / cfg.eta0);
            Ok((max - r) / (max - min))
        }
        ExtremeSide::Right => {
            let (min, max) = (ra * cfg.eta0, ra * cfg.eta1);
            Ok((r - min) / (max - min))
        }
        ExtremeSide::Neither => Err(Error::Domain(format!(
            "aspect ratio {r} is outside the extreme domain E({}, {}) around {ra}",
            cfg.eta1, cfg.eta0
        ))),
    }
}

/// WARM positive threshold for a face of aspect ratio `r`.
pub fn warm_threshold(r: f64, cfg: &MatchConfig) -> f64 {
    match theta(r, cfg) {
        Ok(t) => cfg.t0 - cfg.delta * t,
        Err(_) => cfg.t0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Label {
    Positive(usize),
    Negative,
    Ignore,
}

impl Label {
    pub fn face(&self) -> Option<usize> {
        match self {
            Label::Positive(j) => Some(*j),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FaceMatch {
    pub face_index: usize,
    /// Best IoU of this face over all anchors.
    pub max_iou: f64,
    /// Lowest-index anchor reaching `max_iou`; `None` when nothing overlaps.
    pub best_anchor: Option<usize>,
    /// Includes the compensated anchor, if any.
    pub positive_count: usize,
    pub effective_tp: f64,
    pub compensated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchResult {
    pub labels: Vec<Label>,
    pub per_face: Vec<FaceMatch>,
    /// Anchors labeled positive by compensation, ascending.
    pub compensated: Vec<usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct LabelCounts {
    pub positive: usize,
    pub negative: usize,
    pub ignore: usize,
    pub compensated: usize,
}

impl MatchResult {
    pub fn counts(&self) -> LabelCounts {
        let mut c = LabelCounts {
            compensated: self.compensated.len(),
            ..LabelCounts::default()
        };
        for l in &self.labels {
            match l {
                Label::Positive(_) => c.positive += 1,
                Label::Negative => c.negative += 1,
                Label::Ignore => c.ignore += 1,
            }
        }
        c
    }

    pub fn positive_anchors(&self) -> impl Iterator<Item = usize> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, Label::Positive(_)))
            .map(|(i, _)| i)
    }
}

const CHUNK: usize = 2048;

#[derive(Clone, Copy)]
struct ColumnBest {
    iou: f64,
    anchor: Option<usize>,
}

impl ColumnBest {
    const EMPTY: ColumnBest = ColumnBest { iou: 0.0, anchor: None };

    #[inline]
    fn offer(&mut self, iou: f64, anchor: usize) {
        if iou > self.iou {
            self.iou = iou;
            self.anchor = Some(anchor);
        }
    }
}

struct RowBest {
    max_iou: f64,
    positive: Option<(usize, f64)>,
}

impl RowBest {
    fn new() -> Self {
        RowBest {
            max_iou: 0.0,
            positive: None,
        }
    }

    /// Faces must be offered in ascending index order.
    #[inline]
    fn offer(&mut self, face: usize, iou: f64, tp: f64) {
        if iou > self.max_iou {
            self.max_iou = iou;
        }
        if iou > tp && self.positive.is_none_or(|(_, v)| iou > v) {
            self.positive = Some((face, iou));
        }
    }

    fn label(&self, tn: f64) -> Label {
        match self.positive {
            Some((j, _)) => Label::Positive(j),
            None if self.max_iou < tn => Label::Negative,
            None => Label::Ignore,
        }
    }
}

fn prepare(faces: &[BBox], cfg: &MatchConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    for (j, f) in faces.iter().enumerate() {
        f.validate()
            .map_err(|e| Error::validation(format!("face {j}: {e}")))?;
    }
    Ok(faces.iter().map(|f| cfg.positive_threshold(f.aspect_ratio())).collect())
}

/// Labels every anchor against every face using the full IoU matrix.
pub fn assign_labels(anchors: &[Anchor], faces: &[BBox], cfg: &MatchConfig) -> Result<MatchResult> {
    if anchors.is_empty() {
        return Err(Error::validation("anchor list is empty"));
    }
    let thresholds = prepare(faces, cfg)?;
    let n = faces.len();

    let parts: Vec<(Vec<Label>, Vec<ColumnBest>)> = anchors
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(ci, chunk)| {
            let base = ci * CHUNK;
            let mut labels = Vec::with_capacity(chunk.len());
            let mut cols = vec![ColumnBest::EMPTY; n];
            for (k, anchor) in chunk.iter().enumerate() {
                let mut row = RowBest::new();
                for (j, face) in faces.iter().enumerate() {
                    let v = iou_unchecked(&anchor.bbox, face);
                    row.offer(j, v, thresholds[j]);
                    cols[j].offer(v, base + k);
                }
                labels.push(row.label(cfg.tn));
            }
            (labels, cols)
        })
        .collect();

    let mut labels = Vec::with_capacity(anchors.len());
    let mut cols = vec![ColumnBest::EMPTY; n];
    for (part_labels, part_cols) in parts {
        labels.extend(part_labels);
        for (acc, c) in cols.iter_mut().zip(part_cols) {
            if let Some(a) = c.anchor {
                acc.offer(c.iou, a);
            }
        }
    }
    Ok(finalize(labels, cols, thresholds, cfg))
}

/// Same result as [`assign_labels`] on `grid.anchors()`, but only evaluates
/// anchor/face pairs the grid reports as possibly overlapping. Every other
/// pair has IoU exactly zero.
pub fn assign_labels_grid(grid: &AnchorGrid, faces: &[BBox], cfg: &MatchConfig) -> Result<MatchResult> {
    let anchors = grid.anchors();
    if anchors.is_empty() {
        return Err(Error::validation("anchor list is empty"));
    }
    let thresholds = prepare(faces, cfg)?;

    let mut cols = vec![ColumnBest::EMPTY; faces.len()];
    let mut pairs: Vec<(usize, usize, f64)> = Vec::new();
    let mut cand = Vec::new();
    for (j, face) in faces.iter().enumerate() {
        cand.clear();
        grid.overlap_candidates(face, &mut cand);
        for &a in &cand {
            let v = iou_unchecked(&anchors[a].bbox, face);
            if v > 0.0 {
                pairs.push((a, j, v));
                cols[j].offer(v, a);
            }
        }
    }
    pairs.sort_unstable_by_key(|&(a, j, _)| (a, j));

    let untouched = RowBest::new().label(cfg.tn);
    let mut labels = vec![untouched; anchors.len()];
    for group in pairs.chunk_by(|p, q| p.0 == q.0) {
        let mut row = RowBest::new();
        for &(_, j, v) in group {
            row.offer(j, v, thresholds[j]);
        }
        labels[group[0].0] = row.label(cfg.tn);
    }
    Ok(finalize(labels, cols, thresholds, cfg))
}

fn finalize(mut labels: Vec<Label>, cols: Vec<ColumnBest>, thresholds: Vec<f64>, cfg: &MatchConfig) -> MatchResult {
    let mut counts = vec![0usize; cols.len()];
    for l in &labels {
        if let Label::Positive(j) = l {
            counts[*j] += 1;
        }
    }
    let mut per_face: Vec<FaceMatch> = cols
        .iter()
        .zip(thresholds)
        .zip(counts)
        .enumerate()
        .map(|(j, ((c, tp), count))| FaceMatch {
            face_index: j,
            max_iou: c.iou,
            best_anchor: c.anchor,
            positive_count: count,
            effective_tp: tp,
            compensated: false,
        })
        .collect();

    let mut compensated = Vec::new();
    if cfg.strategy == Strategy::SamCompensate {
        for face in per_face.iter_mut() {
            if face.positive_count > 0 {
                continue;
            }
            let Some(a) = face.best_anchor else { continue };
            if matches!(labels[a], Label::Positive(_)) {
                continue;
            }
            labels[a] = Label::Positive(face.face_index);
            face.positive_count = 1;
            face.compensated = true;
            compensated.push(a);
        }
        compensated.sort_unstable();
    }

    MatchResult {
        labels,
        per_face,
        compensated,
    }
}

/// Labels every image of `corpus` against `design` tiled over the image and
/// aggregates the counts. Images without dimensions use `fallback` when
/// given. Faces are those passing [`FaceFilter::Valid`], clamped to the image.
pub fn match_corpus(
    corpus: &[ImageRecord],
    design: &AnchorDesign,
    cfg: &MatchConfig,
    fallback: Option<(f64, f64)>,
) -> Result<MatchSummary> {
    cfg.validate()?;
    let mut sizes = Vec::with_capacity(corpus.len());
    for rec in corpus {
        let dims = rec.dims().or(fallback).ok_or_else(|| {
            Error::validation(format!(
                "image {} has no pixel dimensions (supply a dims sidecar or a canvas size)",
                rec.path
            ))
        })?;
        sizes.push(dims);
    }
    let mut grids: HashMap<(u64, u64), AnchorGrid> = HashMap::new();
    for &(w, h) in &sizes {
        if let Entry::Vacant(e) = grids.entry((w.to_bits(), h.to_bits())) {
            e.insert(AnchorGrid::new(design.clone(), w, h)?);
        }
    }

    let parts: Vec<MatchSummary> = corpus
        .par_iter()
        .zip(&sizes)
        .map(|(rec, &(w, h))| {
            let record = ImageRecord {
                width: Some(w),
                height: Some(h),
                ..rec.clone()
            };
            let faces: Vec<BBox> = record.boxes(FaceFilter::Valid).into_iter().map(|(_, b)| b).collect();
            let result = assign_labels_grid(&grids[&(w.to_bits(), h.to_bits())], &faces, cfg)?;
            Ok(MatchSummary {
                images: 1,
                faces: faces.len(),
                faces_with_positive: result.per_face.iter().filter(|f| f.positive_count > 0).count(),
                faces_compensated: result.per_face.iter().filter(|f| f.compensated).count(),
                labels: result.counts(),
            })
        })
        .collect::<Result<_>>()?;

    Ok(parts.into_iter().fold(MatchSummary::default(), |mut acc, p| {
        acc.images += p.images;
        acc.faces += p.faces;
        acc.faces_with_positive += p.faces_with_positive;
        acc.faces_compensated += p.faces_compensated;
        acc.labels.positive += p.labels.positive;
        acc.labels.negative += p.labels.negative;
        acc.labels.ignore += p.labels.ignore;
        acc.labels.compensated += p.labels.compensated;
        acc
    }))
}
