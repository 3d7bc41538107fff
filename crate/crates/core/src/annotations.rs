//! YOLO-format labels and conversions between normalized and pixel boxes.

use std::fmt::Write as _;

use thiserror::Error;

/// Slack allowed on the `[0, 1]` extent checks for normalized boxes.
pub const NORM_EPS: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum LabelError {
    #[error("expected 5 fields `class cx cy w h`, got {0}")]
    FieldCount(usize),
    #[error("non-numeric token `{0}`")]
    NotNumeric(String),
    #[error("value out of range: {0}")]
    OutOfRange(String),
    #[error("box collapses to zero area after clamping")]
    Degenerate,
    #[error("box ({x1},{y1},{x2},{y2}) outside {width}x{height} frame")]
    OutsideFrame {
        x1: i32,
        y1: i32,
        x2: i32,
        y2: i32,
        width: u32,
        height: u32,
    },
    #[error("invalid pixel box ({0},{1},{2},{3})")]
    InvalidPixelBox(i32, i32, i32, i32),
    #[error("line {line}: {source}")]
    AtLine {
        line: usize,
        #[source]
        source: Box<LabelError>,
    },
}

/// Center-form box with coordinates relative to the frame size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormBBox {
    pub class_id: u32,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl NormBBox {
    pub fn new(class_id: u32, cx: f64, cy: f64, w: f64, h: f64) -> Result<Self, LabelError> {
        let b = Self {
            class_id,
            cx,
            cy,
            w,
            h,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), LabelError> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if !in_unit(self.cx) || !in_unit(self.cy) {
            return Err(LabelError::OutOfRange(format!(
                "center ({}, {}) not in [0,1]",
                self.cx, self.cy
            )));
        }
        if !(self.w > 0.0 && self.w <= 1.0 && self.h > 0.0 && self.h <= 1.0) {
            return Err(LabelError::OutOfRange(format!(
                "extent ({}, {}) not in (0,1]",
                self.w, self.h
            )));
        }
        let fits = |c: f64, e: f64| c - e / 2.0 >= -NORM_EPS && c + e / 2.0 <= 1.0 + NORM_EPS;
        if !fits(self.cx, self.w) || !fits(self.cy, self.h) {
            return Err(LabelError::OutOfRange(format!(
                "box ({}, {}, {}, {}) extends past the frame",
                self.cx, self.cy, self.w, self.h
            )));
        }
        Ok(())
    }

    /// Mirror across the vertical center line.
    pub fn hflipped(&self) -> Self {
        Self {
            cx: 1.0 - self.cx,
            ..*self
        }
    }
}

/// Annotated face region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruthLabel {
    pub bbox: NormBBox,
}

impl From<NormBBox> for GroundTruthLabel {
    fn from(bbox: NormBBox) -> Self {
        Self { bbox }
    }
}

/// Pixel rectangle, `x1..x2` by `y1..y2` (inclusive-exclusive).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PixelBBox {
    pub x1: i32,
    pub y1: i32,
    pub x2: i32,
    pub y2: i32,
}

impl PixelBBox {
    pub fn new(x1: i32, y1: i32, x2: i32, y2: i32) -> Result<Self, LabelError> {
        if x1 >= x2 || y1 >= y2 {
            return Err(LabelError::InvalidPixelBox(x1, y1, x2, y2));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn width(&self) -> i64 {
        self.x2 as i64 - self.x1 as i64
    }

    pub fn height(&self) -> i64 {
        self.y2 as i64 - self.y1 as i64
    }

    pub fn area(&self) -> i64 {
        self.width() * self.height()
    }

    pub fn within(&self, frame_w: u32, frame_h: u32) -> bool {
        self.x1 >= 0 && self.y1 >= 0 && self.x2 as i64 <= frame_w as i64 && self.y2 as i64 <= frame_h as i64
    }

    pub fn contains_point(&self, x: i32, y: i32) -> bool {
        x >= self.x1 && x < self.x2 && y >= self.y1 && y < self.y2
    }

    pub fn translated(&self, dx: i32, dy: i32) -> Self {
        Self {
            x1: self.x1 + dx,
            y1: self.y1 + dy,
            x2: self.x2 + dx,
            y2: self.y2 + dy,
        }
    }
}

fn round_half_up(v: f64) -> i64 {
    (v + 0.5).floor() as i64
}

pub fn parse_yolo_line(line: &str) -> Result<NormBBox, LabelError> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 5 {
        return Err(LabelError::FieldCount(fields.len()));
    }
    let class_id: u32 = fields[0]
        .parse()
        .map_err(|_| LabelError::NotNumeric(fields[0].to_string()))?;
    let mut vals = [0.0f64; 4];
    for (slot, tok) in vals.iter_mut().zip(&fields[1..]) {
        *slot = tok
            .parse()
            .map_err(|_| LabelError::NotNumeric(tok.to_string()))?;
        if !slot.is_finite() {
            return Err(LabelError::NotNumeric(tok.to_string()));
        }
    }
    NormBBox::new(class_id, vals[0], vals[1], vals[2], vals[3])
}

/// Parses a whole label file; blank lines are skipped.
pub fn parse_yolo_text(text: &str) -> Result<Vec<NormBBox>, LabelError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            parse_yolo_line(l).map_err(|e| LabelError::AtLine {
                line: i + 1,
                source: Box::new(e),
            })
        })
        .collect()
}

pub fn serialize_yolo(labels: &[NormBBox]) -> String {
    let mut out = String::new();
    for b in labels {
        writeln!(
            out,
            "{} {:.6} {:.6} {:.6} {:.6}",
            b.class_id, b.cx, b.cy, b.w, b.h
        )
        .unwrap();
    }
    out
}

/// Converts to pixel corners, rounding half-up and clamping to the frame.
pub fn denormalize(b: &NormBBox, frame_w: u32, frame_h: u32) -> Result<PixelBBox, LabelError> {
    let (fw, fh) = (frame_w as f64, frame_h as f64);
    let clamp_x = |v: f64| round_half_up(v * fw).clamp(0, frame_w as i64) as i32;
    let clamp_y = |v: f64| round_half_up(v * fh).clamp(0, frame_h as i64) as i32;
    let x1 = clamp_x(b.cx - b.w / 2.0);
    let x2 = clamp_x(b.cx + b.w / 2.0);
    let y1 = clamp_y(b.cy - b.h / 2.0);
    let y2 = clamp_y(b.cy + b.h / 2.0);
    if x1 >= x2 || y1 >= y2 {
        return Err(LabelError::Degenerate);
    }
    Ok(PixelBBox { x1, y1, x2, y2 })
}

pub fn normalize(
    b: &PixelBBox,
    frame_w: u32,
    frame_h: u32,
    class_id: u32,
) -> Result<NormBBox, LabelError> {
    if !b.within(frame_w, frame_h) || b.x1 >= b.x2 || b.y1 >= b.y2 {
        return Err(LabelError::OutsideFrame {
            x1: b.x1,
            y1: b.y1,
            x2: b.x2,
            y2: b.y2,
            width: frame_w,
            height: frame_h,
        });
    }
    let (fw, fh) = (frame_w as f64, frame_h as f64);
    NormBBox::new(
        class_id,
        (b.x1 + b.x2) as f64 / (2.0 * fw),
        (b.y1 + b.y2) as f64 / (2.0 * fh),
        (b.x2 - b.x1) as f64 / fw,
        (b.y2 - b.y1) as f64 / fh,
    )
}
