//! Axis-aligned boxes, overlap, and previous-epoch association.
//!
//! Boxes are half-open real rectangles in image coordinates; area is
//! `(x2 - x1) * (y2 - y1)` with no pixel-grid correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Two detections are considered the same physical instance when their boxes
/// overlap at least this much.
pub const MATCH_IOU_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BoundingBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        if ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("bounding box coordinate".into()));
        }
        if x1 >= x2 || y1 >= y2 {
            return Err(Error::InvalidConfig(format!(
                "degenerate box ({x1}, {y1}, {x2}, {y2})"
            )));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self {
            x1: self.x1 + dx,
            y1: self.y1 + dy,
            x2: self.x2 + dx,
            y2: self.y2 + dy,
        }
    }
}

/// Intersection over union, 0 when disjoint.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let ix = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let iy = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = ix * iy;
    if inter == 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

/// Result of matching a box against a previous-epoch list: `index` is present
/// iff the best overlap reaches [`MATCH_IOU_THRESHOLD`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchResult {
    pub index: Option<usize>,
    pub iou: f64,
}

/// Finds the previous-epoch box with maximal overlap. Ties break to the
/// lowest index; below-threshold overlaps report no match.
pub fn match_previous(query: &BoundingBox, prev: &[BoundingBox]) -> MatchResult {
    let mut best_index = None;
    let mut best_iou = 0.0;
    for (i, candidate) in prev.iter().enumerate() {
        let overlap = iou(query, candidate);
        if overlap > best_iou {
            best_iou = overlap;
            best_index = Some(i);
        }
    }
    if best_iou >= MATCH_IOU_THRESHOLD {
        MatchResult { index: best_index, iou: best_iou }
    } else {
        MatchResult { index: None, iou: best_iou }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bb(x1: f64, y1: f64, x2: f64, y2: f64) -> BoundingBox {
        BoundingBox::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn iou_identity_and_disjoint() {
        let a = bb(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a), 1.0);
        let far = bb(10.0, 10.0, 12.0, 12.0);
        assert_eq!(iou(&a, &far), 0.0);
    }

    #[test]
    fn iou_hand_computed_overlap() {
        // intersection 2, union 6
        let a = bb(0.0, 0.0, 2.0, 2.0);
        let b = bb(1.0, 0.0, 3.0, 2.0);
        assert!((iou(&a, &b) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(iou(&a, &b), iou(&b, &a));
    }

    #[test]
    fn iou_touching_edges_is_zero() {
        let a = bb(0.0, 0.0, 1.0, 1.0);
        let b = bb(1.0, 0.0, 2.0, 1.0);
        assert_eq!(iou(&a, &b), 0.0);
    }

    #[test]
    fn match_empty_list() {
        let q = bb(0.0, 0.0, 1.0, 1.0);
        let m = match_previous(&q, &[]);
        assert_eq!(m.index, None);
        assert_eq!(m.iou, 0.0);
    }

    #[test]
    fn match_identical_box() {
        let q = bb(2.0, 2.0, 5.0, 6.0);
        let prev = vec![bb(0.0, 0.0, 1.0, 1.0), q];
        let m = match_previous(&q, &prev);
        assert_eq!(m.index, Some(1));
        assert_eq!(m.iou, 1.0);
    }

    #[test]
    fn match_picks_higher_overlap() {
        let q = bb(0.0, 0.0, 10.0, 10.0);
        // overlaps 0.6 and 0.4 by construction
        let a = bb(0.0, 0.0, 10.0, 6.0); // inter 60, union 100 -> 0.6
        let b = bb(0.0, 0.0, 10.0, 4.0); // inter 40, union 100 -> 0.4
        let m = match_previous(&q, &[b, a]);
        assert_eq!(m.index, Some(1));
        assert!((m.iou - 0.6).abs() < 1e-12);
    }

    #[test]
    fn match_below_threshold_reports_none_with_iou() {
        let q = bb(0.0, 0.0, 10.0, 10.0);
        let weak = bb(0.0, 0.0, 10.0, 4.0);
        let m = match_previous(&q, &[weak]);
        assert_eq!(m.index, None);
        assert!((m.iou - 0.4).abs() < 1e-12);
    }

    #[test]
    fn match_tie_breaks_to_lowest_index() {
        let q = bb(0.0, 0.0, 2.0, 2.0);
        let m = match_previous(&q, &[q, q]);
        assert_eq!(m.index, Some(0));
    }

    #[test]
    fn invalid_boxes_rejected() {
        assert!(BoundingBox::new(1.0, 0.0, 1.0, 2.0).is_err());
        assert!(BoundingBox::new(0.0, 3.0, 1.0, 2.0).is_err());
        assert!(BoundingBox::new(0.0, f64::NAN, 1.0, 2.0).is_err());
    }
}
