//! YOLO label files: one `class_id cx cy w h` line per box, coordinates
//! normalized to the image size.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::DatasetError;

/// Axis-aligned box in YOLO convention (centre + extent, normalized).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub class_id: u32,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

/// Pixel-space rectangle `[x0, x1) × [y0, y1)` with real-valued edges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelRect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl PixelRect {
    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }
}

impl BoundingBox {
    pub fn new(class_id: u32, cx: f64, cy: f64, w: f64, h: f64) -> Result<Self, String> {
        for (name, v) in [("cx", cx), ("cy", cy), ("w", w), ("h", h)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} = {v} outside [0, 1]"));
            }
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(format!("extent {w}×{h} must be positive"));
        }
        Ok(Self {
            class_id,
            cx,
            cy,
            w,
            h,
        })
    }

    /// Box covering the whole image.
    pub fn full() -> Self {
        Self {
            class_id: 0,
            cx: 0.5,
            cy: 0.5,
            w: 1.0,
            h: 1.0,
        }
    }

    /// Pixel rectangle for an image of `width × height`, with edges clamped
    /// to the image.
    pub fn pixel_rect(&self, width: u32, height: u32) -> PixelRect {
        let (w, h) = (f64::from(width), f64::from(height));
        let (cx, cy) = (self.cx * w, self.cy * h);
        let (hw, hh) = (self.w * w / 2.0, self.h * h / 2.0);
        PixelRect {
            x0: (cx - hw).clamp(0.0, w),
            x1: (cx + hw).clamp(0.0, w),
            y0: (cy - hh).clamp(0.0, h),
            y1: (cy + hh).clamp(0.0, h),
        }
    }

    /// Normalized box for a pixel rectangle (clamped to the image).
    pub fn from_pixel_rect(class_id: u32, rect: PixelRect, width: u32, height: u32) -> Self {
        let (w, h) = (f64::from(width), f64::from(height));
        let x0 = rect.x0.clamp(0.0, w);
        let x1 = rect.x1.clamp(0.0, w);
        let y0 = rect.y0.clamp(0.0, h);
        let y1 = rect.y1.clamp(0.0, h);
        Self {
            class_id,
            cx: (x0 + x1) / (2.0 * w),
            cy: (y0 + y1) / (2.0 * h),
            w: (x1 - x0) / w,
            h: (y1 - y0) / h,
        }
    }
}

/// Boxes from the well-formed lines plus one error per malformed line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelParse {
    pub boxes: Vec<BoundingBox>,
    pub errors: Vec<DatasetError>,
}

/// Parse label text. Blank lines are skipped; malformed lines are reported
/// with their 1-based line number and do not stop the parse.
pub fn parse_yolo_labels(text: &str) -> LabelParse {
    let mut out = LabelParse::default();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(line) {
            Ok(b) => out.boxes.push(b),
            Err(reason) => out.errors.push(DatasetError::MalformedLine {
                line: idx + 1,
                reason,
            }),
        }
    }
    out
}

fn parse_line(line: &str) -> Result<BoundingBox, String> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 5 {
        return Err(format!("expected 5 fields, found {}", fields.len()));
    }
    let class_id: u32 = fields[0]
        .parse()
        .map_err(|_| format!("class id {:?} is not a non-negative integer", fields[0]))?;
    let mut vals = [0.0; 4];
    for (slot, raw) in vals.iter_mut().zip(&fields[1..]) {
        *slot = raw
            .parse()
            .map_err(|_| format!("{raw:?} is not a number"))?;
    }
    BoundingBox::new(class_id, vals[0], vals[1], vals[2], vals[3])
}

/// Serialize boxes as label text, six decimals per coordinate.
pub fn format_yolo_labels(boxes: &[BoundingBox]) -> String {
    let mut s = String::new();
    for b in boxes {
        let _ = writeln!(
            s,
            "{} {:.6} {:.6} {:.6} {:.6}",
            b.class_id, b.cx, b.cy, b.w, b.h
        );
    }
    s
}
