//! Face-region temperature monitoring for low-resolution thermal frames.
//!
//! The crate is organised as the stages a frame goes through:
//!
//! 1. [`frameio`] loads PGM/PPM frames, converts BGR to grayscale, resizes and
//!    augments them, and pairs frames with their YOLO label files.
//! 2. [`annotations`] parses and converts YOLO boxes between normalized and
//!    pixel form.
//! 3. [`detectors`] finds face regions: ground-truth replay, a thermal blob
//!    detector, and an adapter for an external neural detector process.
//! 4. [`thermoreg`] fits and selects the pixel-to-temperature model.
//! 5. [`pipeline`] runs the per-frame loop and writes readings and overlays.
//!
//! [`deteval`] scores detectors (IoU, precision/recall, mAP) and [`synthscene`]
//! generates scenes with known faces and temperatures for end-to-end checks.
//!
//! Numeric code is generic over [`Real`] (`f32` or `f64`); the aliases below
//! fix the scalar to `f64`, which is what the command-line tool uses.

pub mod annotations;
pub mod detectors;
pub mod deteval;
pub mod frameio;
pub mod keyval;
pub mod pipeline;
mod scalar;
pub mod synthscene;
pub mod thermoreg;

pub use scalar::Real;

/// Pixel-to-temperature model with `f64` coefficients.
pub type Regressor = thermoreg::FittedRegressor<f64>;
/// One calibration pair with `f64` values.
pub type Sample = thermoreg::CalibrationSample<f64>;
/// Hyperparameter point with `f64` values.
pub type Spec = thermoreg::ModelSpec<f64>;
/// Face detection with an `f64` confidence.
pub type Det = detectors::Detection<f64>;
/// Detection metrics with `f64` values.
pub type EvalReport = deteval::DetectionEvalReport<f64>;
/// Per-face pipeline output with an `f64` temperature.
pub type Reading = pipeline::TempReading<f64>;
