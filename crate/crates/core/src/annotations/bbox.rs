//! Normalized bounding boxes and their pixel-space conversions.

use crate::error::CoreError;
use crate::util::round_half_up;
use crate::Result;
use serde::{Deserialize, Serialize};

/// Axis-aligned box in normalized image coordinates: center plus size,
/// each in units of image width/height.
///
/// Invariants enforced by [`BBox::new`]: `0 <= cx, cy <= 1`,
/// `0 < w, h <= 1`, and every field finite. Boxes may overhang the
/// image edge (a center on the border with nonzero size); consumers
/// clip at pixel conversion time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

/// Integer pixel rectangle produced from a [`BBox`].
///
/// `x`/`y` may be negative when the normalized box overhangs the image
/// edge; `w`/`h` are always at least 1. Use [`PixelRect::clipped_to`]
/// to intersect with the image bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRect {
    pub x: i64,
    pub y: i64,
    pub w: u32,
    pub h: u32,
}

impl BBox {
    /// Validates and constructs a normalized box.
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        for (name, v) in [("cx", cx), ("cy", cy), ("w", w), ("h", h)] {
            if !v.is_finite() {
                return Err(CoreError::InvalidBox {
                    message: format!("{name} is not finite"),
                });
            }
        }
        if !(0.0..=1.0).contains(&cx) || !(0.0..=1.0).contains(&cy) {
            return Err(CoreError::InvalidBox {
                message: format!("center ({cx}, {cy}) outside [0, 1]"),
            });
        }
        if !(w > 0.0 && w <= 1.0) || !(h > 0.0 && h <= 1.0) {
            return Err(CoreError::InvalidBox {
                message: format!("size ({w}, {h}) outside (0, 1]"),
            });
        }
        Ok(BBox { cx, cy, w, h })
    }

    /// Left edge in normalized coordinates (may be negative).
    pub fn x_min(&self) -> f64 {
        self.cx - self.w / 2.0
    }

    pub fn x_max(&self) -> f64 {
        self.cx + self.w / 2.0
    }

    pub fn y_min(&self) -> f64 {
        self.cy - self.h / 2.0
    }

    pub fn y_max(&self) -> f64 {
        self.cy + self.h / 2.0
    }

    /// Converts to an integer pixel rectangle for an image of the given
    /// size. Sizes round half-up with a floor of 1 pixel; the origin is
    /// placed by rounding the centered position half-up, so a
    /// conversion round-trip moves the box by less than one pixel.
    pub fn to_pixel_rect(&self, img_w: u32, img_h: u32) -> PixelRect {
        let w = (round_half_up(self.w * img_w as f64) as i64).max(1) as u32;
        let h = (round_half_up(self.h * img_h as f64) as i64).max(1) as u32;
        let x = round_half_up(self.cx * img_w as f64 - w as f64 / 2.0) as i64;
        let y = round_half_up(self.cy * img_h as f64 - h as f64 / 2.0) as i64;
        PixelRect { x, y, w, h }
    }

    /// Intersection-over-union with another normalized box.
    ///
    /// Total on valid boxes; returns a value in [0, 1]. Areas are
    /// computed from the same edge coordinates as the intersection, so
    /// identical boxes score exactly 1.
    pub fn iou(&self, other: &BBox) -> f64 {
        let (ax0, ax1) = (self.x_min(), self.x_max());
        let (ay0, ay1) = (self.y_min(), self.y_max());
        let (bx0, bx1) = (other.x_min(), other.x_max());
        let (by0, by1) = (other.y_min(), other.y_max());
        let ix = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
        let iy = (ay1.min(by1) - ay0.max(by0)).max(0.0);
        let inter = ix * iy;
        let union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter;
        if union <= 0.0 {
            0.0
        } else {
            (inter / union).clamp(0.0, 1.0)
        }
    }
}

impl PixelRect {
    /// Construct directly from pixel-space origin and size.
    pub fn from_xywh(x: i64, y: i64, w: u32, h: u32) -> Self {
        PixelRect { x, y, w, h }
    }

    pub fn x_end(&self) -> i64 {
        self.x + self.w as i64
    }

    pub fn y_end(&self) -> i64 {
        self.y + self.h as i64
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    /// Intersects with an image of the given size; `None` when nothing
    /// of the rectangle lies inside.
    pub fn clipped_to(&self, img_w: u32, img_h: u32) -> Option<PixelRect> {
        let x0 = self.x.max(0);
        let y0 = self.y.max(0);
        let x1 = self.x_end().min(img_w as i64);
        let y1 = self.y_end().min(img_h as i64);
        if x1 <= x0 || y1 <= y0 {
            return None;
        }
        Some(PixelRect {
            x: x0,
            y: y0,
            w: (x1 - x0) as u32,
            h: (y1 - y0) as u32,
        })
    }

    /// Converts back to a normalized box for an image of the given size.
    pub fn to_bbox(&self, img_w: u32, img_h: u32) -> Result<BBox> {
        let fw = img_w as f64;
        let fh = img_h as f64;
        BBox::new(
            (self.x as f64 + self.w as f64 / 2.0) / fw,
            (self.y as f64 + self.h as f64 / 2.0) / fh,
            self.w as f64 / fw,
            self.h as f64 / fh,
        )
    }

    /// Pixel-space intersection-over-union between two rectangles.
    pub fn iou(&self, other: &PixelRect) -> f64 {
        let ix = (self.x_end().min(other.x_end()) - self.x.max(other.x)).max(0) as f64;
        let iy = (self.y_end().min(other.y_end()) - self.y.max(other.y)).max(0) as f64;
        let inter = ix * iy;
        let union = self.area() as f64 + other.area() as f64 - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }
}
