//! Axis-aligned bounding boxes in continuous pixel coordinates.
//!
//! Origin is the top-left image corner. There is no `+1` pixel convention: a
//! box from 0 to 10 is 10 pixels wide.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Corner-corner rectangle with strictly positive area and finite,
/// non-negative coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let coords = [x_min, y_min, x_max, y_max];
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::validation("bbox", "non-finite coordinate"));
        }
        if coords.iter().any(|&c| c < 0.0) {
            return Err(Error::validation("bbox", "negative coordinate"));
        }
        if x_max <= x_min || y_max <= y_min {
            return Err(Error::validation(
                "bbox",
                format!("degenerate box ({x_min}, {y_min}, {x_max}, {y_max})"),
            ));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    /// From COCO-style `[x, y, width, height]`.
    pub fn from_xywh(x: f64, y: f64, width: f64, height: f64) -> Result<Self> {
        if !(width.is_finite() && height.is_finite()) || width <= 0.0 || height <= 0.0 {
            return Err(Error::validation(
                "bbox",
                format!("non-positive size {width}x{height}"),
            ));
        }
        Self::new(x, y, x + width, y + height)
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn y_min(&self) -> f64 {
        self.y_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn to_xywh(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.width(), self.height()]
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    /// Intersection over union, in `[0, 1]`.
    pub fn iou(&self, other: &BoundingBox) -> f64 {
        if self == other {
            return 1.0;
        }
        let inter = self.intersection_area(other);
        if inter == 0.0 {
            return 0.0;
        }
        let union = self.area() + other.area() - inter;
        (inter / union).clamp(0.0, 1.0)
    }

    /// Whether the box fits inside a `width` x `height` image.
    pub fn fits_within(&self, width: f64, height: f64) -> bool {
        self.x_max <= width && self.y_max <= height
    }

    /// Shift by `(dx, dy)`. Fails if the result leaves the positive quadrant.
    pub fn translate(&self, dx: f64, dy: f64) -> Result<Self> {
        Self::new(
            self.x_min + dx,
            self.y_min + dy,
            self.x_max + dx,
            self.y_max + dy,
        )
    }

    /// Per-axis scale factors that map this crop onto a `target` sized
    /// classifier input (e.g. 224x224).
    pub fn resize_factors(&self, target: (u32, u32)) -> (f64, f64) {
        (
            f64::from(target.0) / self.width(),
            f64::from(target.1) / self.height(),
        )
    }
}
