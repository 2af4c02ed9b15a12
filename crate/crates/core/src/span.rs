//! Normalized temporal spans and their overlap measures.
//!
//! An inverted span (`start > end`) has length 0. The hull of two spans runs
//! from the smallest to the largest of all four endpoints.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentSpan {
    pub start: f64,
    pub end: f64,
}

impl MomentSpan {
    pub fn new(start: f64, end: f64) -> Self {
        MomentSpan { start, end }
    }

    pub fn length(&self) -> f64 {
        (self.end - self.start).max(0.0)
    }

    pub fn is_valid(&self) -> bool {
        self.start <= self.end
    }

    /// Metric-time clamp: endpoints into `[0, 1]`, inverted spans collapse to
    /// the zero-length span at `start`.
    pub fn clamped(&self) -> Self {
        let s = self.start.clamp(0.0, 1.0);
        let e = self.end.clamp(0.0, 1.0);
        MomentSpan::new(s, e.max(s))
    }

    pub fn to_seconds(&self, duration: f64) -> (f64, f64) {
        (self.start * duration, self.end * duration)
    }
}

pub fn intersection(a: &MomentSpan, b: &MomentSpan) -> f64 {
    if !a.is_valid() || !b.is_valid() {
        return 0.0;
    }
    (a.end.min(b.end) - a.start.max(b.start)).max(0.0)
}

/// Intersection over union; 0 when the union is empty.
pub fn span_iou(a: &MomentSpan, b: &MomentSpan) -> f64 {
    let inter = intersection(a, b);
    let union = a.length() + b.length() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Generalized IoU; 0 when the hull is degenerate.
pub fn span_giou(a: &MomentSpan, b: &MomentSpan) -> f64 {
    let inter = intersection(a, b);
    let union = a.length() + b.length() - inter;
    let lo = a.start.min(a.end).min(b.start).min(b.end);
    let hi = a.start.max(a.end).max(b.start).max(b.end);
    let hull = hi - lo;
    if hull <= 0.0 {
        return 0.0;
    }
    let iou = if union <= 0.0 { 0.0 } else { inter / union };
    iou - (hull - union) / hull
}
