//! Synthetic thermal scenes with known faces and temperatures.
//!
//! Each face is an ellipse with a Gaussian falloff (sigma = radius / 2)
//! whose centre pixel is exactly the intensity the calibration law assigns
//! to the face temperature. Pixels outside every ellipse are uniform noise
//! around the background level. Because the noise ceiling stays below every
//! face peak, the max pixel of a face's label box recovers its temperature.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::annotations::{normalize, GroundTruthLabel, LabelError, PixelBBox};
use crate::frameio::ThermalFrame;
use crate::keyval::{Document, KeyValError};
use crate::thermoreg::CalibrationSample;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("invalid scene: {0}")]
    Invalid(String),
    #[error("face {face}: {temperature_c} °C maps to intensity {intensity}, outside ({floor}, 255]")]
    IntensityOutOfRange {
        face: usize,
        temperature_c: f64,
        intensity: i64,
        floor: i64,
    },
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error(transparent)]
    Config(#[from] KeyValError),
}

/// `temperature = intercept + slope * pixel`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationLaw {
    pub intercept: f64,
    pub slope: f64,
}

impl Default for CalibrationLaw {
    fn default() -> Self {
        Self {
            intercept: 20.0,
            slope: 0.1,
        }
    }
}

impl CalibrationLaw {
    pub fn pixel_for(&self, temperature_c: f64) -> f64 {
        (temperature_c - self.intercept) / self.slope
    }

    pub fn temperature_for(&self, pixel: f64) -> f64 {
        self.intercept + self.slope * pixel
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceSpec {
    /// Centre pixel.
    pub cx: i32,
    pub cy: i32,
    /// Ellipse radii in pixels.
    pub rx: f64,
    pub ry: f64,
    pub temperature_c: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub width: u32,
    pub height: u32,
    pub background_level: u8,
    /// Background noise is uniform in `background_level ± noise_amplitude`.
    pub noise_amplitude: u8,
    pub faces: Vec<FaceSpec>,
    pub law: CalibrationLaw,
    pub seed: u64,
}

impl SceneSpec {
    pub fn empty(width: u32, height: u32, seed: u64) -> Self {
        Self {
            width,
            height,
            background_level: 40,
            noise_amplitude: 5,
            faces: Vec::new(),
            law: CalibrationLaw::default(),
            seed,
        }
    }

    /// Places `n_faces` on a jittered grid so that no two ellipses touch.
    /// Temperatures are uniform in `temp_range`.
    pub fn grid_layout(
        width: u32,
        height: u32,
        n_faces: usize,
        temp_range: (f64, f64),
        law: CalibrationLaw,
        seed: u64,
    ) -> Result<Self, SceneError> {
        let mut spec = Self {
            law,
            ..Self::empty(width, height, seed)
        };
        if n_faces == 0 {
            return Ok(spec);
        }
        let cols = ((n_faces as f64 * width as f64 / height as f64).sqrt().ceil() as usize).max(1);
        let rows = n_faces.div_ceil(cols);
        let cell_w = width as f64 / cols as f64;
        let cell_h = height as f64 / rows as f64;
        let ry = (cell_h * 0.4).floor();
        let rx = (cell_w * 0.4).floor().min(ry);
        if rx < 3.0 || ry < 3.0 {
            return Err(SceneError::Invalid(format!(
                "{n_faces} faces do not fit in {width}x{height}"
            )));
        }
        // The layout stream is separate from the noise stream.
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_1a70_u64);
        let (lo, hi) = temp_range;
        for i in 0..n_faces {
            let (col, row) = (i % cols, i / cols);
            let slack_x = ((cell_w / 2.0 - rx - 2.0).floor() as i32).max(0);
            let slack_y = ((cell_h / 2.0 - ry - 2.0).floor() as i32).max(0);
            let cx = (col as f64 * cell_w + cell_w / 2.0).floor() as i32 + rng.random_range(-slack_x..=slack_x);
            let cy = (row as f64 * cell_h + cell_h / 2.0).floor() as i32 + rng.random_range(-slack_y..=slack_y);
            let temperature_c = if hi > lo { rng.random_range(lo..hi) } else { lo };
            spec.faces.push(FaceSpec {
                cx,
                cy,
                rx,
                ry,
                temperature_c,
            });
        }
        Ok(spec)
    }

    fn validate(&self) -> Result<Vec<u8>, SceneError> {
        if self.width == 0 || self.height == 0 {
            return Err(SceneError::Invalid("zero frame dimension".into()));
        }
        if !(self.law.slope.is_finite() && self.law.slope != 0.0 && self.law.intercept.is_finite()) {
            return Err(SceneError::Invalid(format!("unusable law {:?}", self.law)));
        }
        let floor = self.background_level as i64 + self.noise_amplitude as i64;
        if floor > 255 {
            return Err(SceneError::Invalid("background plus noise exceeds 255".into()));
        }
        self.faces
            .iter()
            .enumerate()
            .map(|(i, f)| {
                if f.cx < 0 || f.cy < 0 || f.cx >= self.width as i32 || f.cy >= self.height as i32 {
                    return Err(SceneError::Invalid(format!("face {i} centre outside the frame")));
                }
                if !(f.rx >= 1.0 && f.ry >= 1.0) {
                    return Err(SceneError::Invalid(format!("face {i} radii below one pixel")));
                }
                let intensity = (self.law.pixel_for(f.temperature_c) + 0.5).floor() as i64;
                if intensity <= floor || intensity > 255 {
                    return Err(SceneError::IntensityOutOfRange {
                        face: i,
                        temperature_c: f.temperature_c,
                        intensity,
                        floor,
                    });
                }
                Ok(intensity as u8)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub frame: ThermalFrame,
    pub labels: Vec<GroundTruthLabel>,
    /// Tight pixel box of each face ellipse, clipped to the frame.
    pub boxes: Vec<PixelBBox>,
    pub temperatures: Vec<f64>,
    /// Rendered peak intensity of each face.
    pub peaks: Vec<u8>,
}

pub fn generate(spec: &SceneSpec) -> Result<Scene, SceneError> {
    let peaks = spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (w, h) = (spec.width, spec.height);
    let bg = spec.background_level as i32;
    let amp = spec.noise_amplitude as i32;
    let pixels: Vec<u8> = (0..w as usize * h as usize)
        .map(|_| (bg + rng.random_range(-amp..=amp)).clamp(0, 255) as u8)
        .collect();
    let mut frame = ThermalFrame::new(w, h, 1, pixels).expect("dims checked");

    let mut boxes = Vec::with_capacity(spec.faces.len());
    let mut labels = Vec::with_capacity(spec.faces.len());
    for (face, &peak) in spec.faces.iter().zip(&peaks) {
        let span_x = face.rx.floor() as i32;
        let span_y = face.ry.floor() as i32;
        let x1 = (face.cx - span_x).max(0);
        let x2 = (face.cx + span_x + 1).min(w as i32);
        let y1 = (face.cy - span_y).max(0);
        let y2 = (face.cy + span_y + 1).min(h as i32);
        let amplitude = peak as f64 - bg as f64;
        for y in y1..y2 {
            for x in x1..x2 {
                let dx = (x - face.cx) as f64 / face.rx;
                let dy = (y - face.cy) as f64 / face.ry;
                let r2 = dx * dx + dy * dy;
                if r2 > 1.0 {
                    continue;
                }
                // sigma = radius / 2  =>  exp(-r² / (2 sigma²)) = exp(-2 r²)
                let v = (bg as f64 + amplitude * (-2.0 * r2).exp() + 0.5).floor().clamp(0.0, 255.0) as u8;
                let cur = frame.gray(x as u32, y as u32);
                frame.set_gray(x as u32, y as u32, cur.max(v));
            }
        }
        let bbox = PixelBBox::new(x1, y1, x2, y2)?;
        labels.push(GroundTruthLabel::from(normalize(&bbox, w, h, 0)?));
        boxes.push(bbox);
    }
    Ok(Scene {
        frame,
        labels,
        boxes,
        temperatures: spec.faces.iter().map(|f| f.temperature_c).collect(),
        peaks,
    })
}

/// Temperature mixture for synthetic calibration sets: a truncated normal
/// body population plus a uniform cold tail (objects colder than skin).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationDistribution {
    pub body_mean: f64,
    pub body_sd: f64,
    pub tail_fraction: f64,
    pub tail_range: (f64, f64),
    /// Every temperature lies in these bounds.
    pub bounds: (f64, f64),
    /// Standard deviation of the Gaussian noise added to each pixel.
    pub pixel_noise_sd: f64,
}

impl Default for CalibrationDistribution {
    /// The mixture has overall mean ≈ 36.6 °C and sd ≈ 2.3 °C on
    /// [25.8, 38.8] °C.
    fn default() -> Self {
        Self {
            body_mean: 37.2,
            body_sd: 1.0,
            tail_fraction: 0.06,
            tail_range: (25.8, 30.0),
            bounds: (25.8, 38.8),
            pixel_noise_sd: 1.0,
        }
    }
}

pub fn generate_calibration_set(
    n: usize,
    law: CalibrationLaw,
    dist: &CalibrationDistribution,
    seed: u64,
) -> Result<Vec<CalibrationSample<f64>>, SceneError> {
    if n < 10 {
        return Err(SceneError::Invalid(format!("calibration set needs n >= 10, got {n}")));
    }
    let (lo, hi) = dist.bounds;
    if !(lo < hi && dist.body_sd > 0.0 && dist.pixel_noise_sd >= 0.0) {
        return Err(SceneError::Invalid("bad calibration distribution".into()));
    }
    let body = Normal::new(dist.body_mean, dist.body_sd).map_err(|e| SceneError::Invalid(e.to_string()))?;
    let noise = Normal::new(0.0, dist.pixel_noise_sd).map_err(|e| SceneError::Invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let t = if rng.random_bool(dist.tail_fraction.clamp(0.0, 1.0)) {
                rng.random_range(dist.tail_range.0..=dist.tail_range.1).clamp(lo, hi)
            } else {
                loop {
                    let t = body.sample(&mut rng);
                    if (lo..=hi).contains(&t) {
                        break t;
                    }
                }
            };
            let p = (law.pixel_for(t) + noise.sample(&mut rng)).clamp(0.0, 255.0);
            CalibrationSample::new(p, t).map_err(|e| SceneError::Invalid(e.to_string()))
        })
        .collect()
}

/// Frame sequence description read from a scene config file.
///
/// ```text
/// [scene]
/// width=160
/// height=120
/// frames=20
/// background_level=40
/// noise_amplitude=5
/// seed=7
/// [law]
/// intercept=20
/// slope=0.1
/// [layout]              # random grid layout, face counts cycle per frame
/// faces=3,15
/// temperature_min=36.0
/// temperature_max=37.8
/// [face]                # or explicit faces, repeated in every frame
/// cx=40
/// cy=60
/// rx=12
/// ry=16
/// temperature_c=36.6
/// [calibration]         # optional calibration CSV
/// samples=100
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSpec {
    pub base: SceneSpec,
    pub frames: usize,
    pub layout_faces: Vec<usize>,
    pub temperature_range: (f64, f64),
    pub calibration_samples: Option<usize>,
}

impl SequenceSpec {
    pub fn parse(text: &str) -> Result<Self, SceneError> {
        let doc = Document::parse(text)?;
        let scene = doc
            .section("scene")
            .ok_or_else(|| SceneError::Invalid("missing [scene] section".into()))?;
        let width = scene.parse("width")?.unwrap_or(crate::frameio::NATIVE_WIDTH);
        let height = scene.parse("height")?.unwrap_or(crate::frameio::NATIVE_HEIGHT);
        let mut base = SceneSpec::empty(width, height, scene.parse("seed")?.unwrap_or(0));
        if let Some(v) = scene.parse("background_level")? {
            base.background_level = v;
        }
        if let Some(v) = scene.parse("noise_amplitude")? {
            base.noise_amplitude = v;
        }
        if let Some(law) = doc.section("law") {
            base.law = CalibrationLaw {
                intercept: law.require("intercept")?,
                slope: law.require("slope")?,
            };
        }
        for f in doc.sections_named("face") {
            base.faces.push(FaceSpec {
                cx: f.require("cx")?,
                cy: f.require("cy")?,
                rx: f.require("rx")?,
                ry: f.require("ry")?,
                temperature_c: f.require("temperature_c")?,
            });
        }
        let (layout_faces, temperature_range) = match doc.section("layout") {
            Some(l) => (
                l.parse_list("faces")?.unwrap_or_default(),
                (
                    l.parse("temperature_min")?.unwrap_or(36.0),
                    l.parse("temperature_max")?.unwrap_or(37.8),
                ),
            ),
            None => (Vec::new(), (36.0, 37.8)),
        };
        if !base.faces.is_empty() && !layout_faces.is_empty() {
            return Err(SceneError::Invalid("use either [face] sections or [layout], not both".into()));
        }
        let calibration_samples = match doc.section("calibration") {
            Some(c) => Some(c.require("samples")?),
            None => None,
        };
        let spec = Self {
            frames: scene.parse("frames")?.unwrap_or(1),
            base,
            layout_faces,
            temperature_range,
            calibration_samples,
        };
        if spec.frames == 0 {
            return Err(SceneError::Invalid("frames must be >= 1".into()));
        }
        spec.base.validate()?;
        Ok(spec)
    }

    /// Scene spec for frame `index`; seeds advance per frame.
    pub fn frame_spec(&self, index: usize) -> Result<SceneSpec, SceneError> {
        let seed = self.base.seed.wrapping_add(index as u64);
        if self.layout_faces.is_empty() {
            return Ok(SceneSpec {
                seed,
                ..self.base.clone()
            });
        }
        let n = self.layout_faces[index % self.layout_faces.len()];
        let mut spec = SceneSpec::grid_layout(
            self.base.width,
            self.base.height,
            n,
            self.temperature_range,
            self.base.law,
            seed,
        )?;
        spec.background_level = self.base.background_level;
        spec.noise_amplitude = self.base.noise_amplitude;
        Ok(spec)
    }
}
