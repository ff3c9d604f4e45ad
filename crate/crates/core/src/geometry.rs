//! Axis-aligned box geometry.
//!
//! Boxes use pixel coordinates with the origin at the top-left corner of the
//! image; `(x, y)` is the top-left corner and `(w, h)` the extent.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        BBox { x, y, w, h }
    }

    /// Builds a box of the given size centered at `(cx, cy)`.
    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        BBox::new(cx - w / 2.0, cy - h / 2.0, w, h)
    }

    /// Finite coordinates and non-negative extent.
    pub fn is_valid(&self) -> bool {
        self.x.is_finite()
            && self.y.is_finite()
            && self.w.is_finite()
            && self.h.is_finite()
            && self.w >= 0.0
            && self.h >= 0.0
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        BBox::new(self.x + dx, self.y + dy, self.w, self.h)
    }

    /// Overlap rectangle, or `None` when the boxes share no positive area.
    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = self.right().min(other.right());
        let y1 = self.bottom().min(other.bottom());
        if x1 > x0 && y1 > y0 {
            Some(BBox::new(x0, y0, x1 - x0, y1 - y0))
        } else {
            None
        }
    }

    /// Clips the box to `[0, width] x [0, height]`.
    pub fn clip_to(&self, width: f64, height: f64) -> Option<BBox> {
        if self.x >= 0.0 && self.y >= 0.0 && self.right() <= width && self.bottom() <= height && self.area() > 0.0 {
            return Some(*self);
        }
        self.intersection(&BBox::new(0.0, 0.0, width, height))
    }
}

/// Intersection over union. Degenerate inputs (zero union) yield 0.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection(b).map_or(0.0, |r| r.area());
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Euclidean distance between box centers.
pub fn center_distance(a: &BBox, b: &BBox) -> f64 {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    (ax - bx).hypot(ay - by)
}

/// Area covered by the union of a set of rectangles, via coordinate compression.
pub fn union_area(rects: &[BBox]) -> f64 {
    let rects: Vec<&BBox> = rects.iter().filter(|r| r.area() > 0.0).collect();
    if rects.is_empty() {
        return 0.0;
    }
    let mut xs: Vec<f64> = rects.iter().flat_map(|r| [r.x, r.right()]).collect();
    let mut ys: Vec<f64> = rects.iter().flat_map(|r| [r.y, r.bottom()]).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    ys.sort_by(f64::total_cmp);
    ys.dedup();
    let mut total = 0.0;
    for xw in xs.windows(2) {
        let mx = 0.5 * (xw[0] + xw[1]);
        for yw in ys.windows(2) {
            let my = 0.5 * (yw[0] + yw[1]);
            if rects
                .iter()
                .any(|r| mx > r.x && mx < r.right() && my > r.y && my < r.bottom())
            {
                total += (xw[1] - xw[0]) * (yw[1] - yw[0]);
            }
        }
    }
    total
}
