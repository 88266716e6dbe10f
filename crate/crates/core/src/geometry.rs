//! Bounding boxes, overlap, and the box <-> observation mapping used by the filter.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("degenerate box [{x_min}, {y_min}, {x_max}, {y_max}]: width and height must be positive and finite")]
    DegenerateBox {
        x_min: f64,
        y_min: f64,
        x_max: f64,
        y_max: f64,
    },
    #[error("invalid observation (u={u}, v={v}, s={s}, r={r}): area and aspect ratio must be positive")]
    InvalidObservation { u: f64, v: f64, s: f64, r: f64 },
}

/// Axis-aligned box in continuous pixel coordinates, origin at the top-left of the frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, GeometryError> {
        let finite = [x_min, y_min, x_max, y_max].iter().all(|c| c.is_finite());
        if !finite || x_min >= x_max || y_min >= y_max {
            return Err(GeometryError::DegenerateBox {
                x_min,
                y_min,
                x_max,
                y_max,
            });
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    /// Builds a box from the MOT-style `(left, top, width, height)` encoding.
    pub fn from_ltwh(left: f64, top: f64, width: f64, height: f64) -> Result<Self, GeometryError> {
        Self::new(left, top, left + width, top + height)
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

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        )
    }

    /// `(left, top, width, height)`.
    pub fn to_ltwh(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.width(), self.height()]
    }

    /// Intersection with `[0, width] x [0, height]`, or `None` when nothing of the box
    /// lies inside the frame.
    pub fn clamp_to(&self, width: f64, height: f64) -> Option<BBox> {
        BBox::new(
            self.x_min.max(0.0),
            self.y_min.max(0.0),
            self.x_max.min(width),
            self.y_max.min(height),
        )
        .ok()
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Result<BBox, GeometryError> {
        BBox::new(
            self.x_min + dx,
            self.y_min + dy,
            self.x_max + dx,
            self.y_max + dy,
        )
    }
}

/// Filter observation: box center `(u, v)`, area `s` and aspect ratio `r = w / h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub u: f64,
    pub v: f64,
    pub s: f64,
    pub r: f64,
}

impl Observation {
    pub fn new(u: f64, v: f64, s: f64, r: f64) -> Result<Self, GeometryError> {
        let valid = u.is_finite() && v.is_finite() && s.is_finite() && r.is_finite();
        if !valid || s <= 0.0 || r <= 0.0 {
            return Err(GeometryError::InvalidObservation { u, v, s, r });
        }
        Ok(Self { u, v, s, r })
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.u, self.v, self.s, self.r]
    }
}

/// Intersection over union. Zero for disjoint boxes, one for identical ones.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let ih = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

pub fn bbox_to_observation(b: &BBox) -> Observation {
    let (u, v) = b.center();
    Observation {
        u,
        v,
        s: b.area(),
        r: b.width() / b.height(),
    }
}

pub fn observation_to_bbox(o: &Observation) -> Result<BBox, GeometryError> {
    if !(o.s > 0.0 && o.r > 0.0) {
        return Err(GeometryError::InvalidObservation {
            u: o.u,
            v: o.v,
            s: o.s,
            r: o.r,
        });
    }
    let w = (o.s * o.r).sqrt();
    let h = o.s / w;
    BBox::new(
        o.u - 0.5 * w,
        o.v - 0.5 * h,
        o.u + 0.5 * w,
        o.v + 0.5 * h,
    )
}
