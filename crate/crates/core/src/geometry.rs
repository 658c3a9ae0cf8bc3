//! Axis-aligned box arithmetic.
//!
//! Boxes are `(x, y, w, h)` with `(x, y)` the upper-left corner, in real
//! pixel units. Aspect ratio is `h / w`, so a box of width `w` and aspect
//! ratio `r` has height `w * r`.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Absolute tolerance for area comparisons, in px².
pub const AREA_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    /// Builds a box, rejecting non-finite coordinates and non-positive sides.
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        let b = BBox { x, y, w, h };
        b.validate()?;
        Ok(b)
    }

    /// Box of width `w` and aspect ratio `ar` centered at `(cx, cy)`.
    pub fn centered(cx: f64, cy: f64, w: f64, ar: f64) -> Result<Self> {
        let h = w * ar;
        BBox::new(cx - w / 2.0, cy - h / 2.0, w, h)
    }

    pub fn validate(&self) -> Result<()> {
        if ![self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite()) {
            return Err(Error::validation(format!("non-finite box {self:?}")));
        }
        if self.w <= 0.0 || self.h <= 0.0 {
            return Err(Error::validation(format!(
                "box must have positive width and height, got w={} h={}",
                self.w, self.h
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn x2(&self) -> f64 {
        self.x + self.w
    }

    #[inline]
    pub fn y2(&self) -> f64 {
        self.y + self.h
    }

    #[inline]
    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    #[inline]
    pub fn aspect_ratio(&self) -> f64 {
        self.h / self.w
    }

    #[inline]
    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }
}

/// Overlap area of two boxes that are already known to be valid.
#[inline]
pub(crate) fn intersection_unchecked(a: &BBox, b: &BBox) -> f64 {
    let ow = a.x2().min(b.x2()) - a.x.max(b.x);
    let oh = a.y2().min(b.y2()) - a.y.max(b.y);
    ow.max(0.0) * oh.max(0.0)
}

#[inline]
pub(crate) fn iou_unchecked(a: &BBox, b: &BBox) -> f64 {
    let inter = intersection_unchecked(a, b);
    if inter <= 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

pub fn intersection_area(a: &BBox, b: &BBox) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    Ok(intersection_unchecked(a, b))
}

/// Intersection over union, in `[0, 1]`.
pub fn iou(a: &BBox, b: &BBox) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    Ok(iou_unchecked(a, b))
}

/// Largest intersection a face of width `face_w` and aspect ratio `face_ar`
/// can have with an anchor of width `anchor_w` and aspect ratio `anchor_ar`,
/// over all relative placements: `min(w_g, w_a) * min(w_g r_g, w_a r_a)`.
pub fn ideal_max_intersection(face_w: f64, face_ar: f64, anchor_w: f64, anchor_ar: f64) -> Result<f64> {
    for (name, v) in [
        ("face_w", face_w),
        ("face_ar", face_ar),
        ("anchor_w", anchor_w),
        ("anchor_ar", anchor_ar),
    ] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::validation(format!("{name} must be positive, got {v}")));
        }
    }
    Ok(ideal_intersection_unchecked(face_w, face_ar, anchor_w, anchor_ar))
}

#[inline]
pub(crate) fn ideal_intersection_unchecked(face_w: f64, face_ar: f64, anchor_w: f64, anchor_ar: f64) -> f64 {
    face_w.min(anchor_w) * (face_w * face_ar).min(anchor_w * anchor_ar)
}
