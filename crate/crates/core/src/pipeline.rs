//! Per-frame temperature monitoring loop.
//!
//! For every frame: convert to grayscale, detect faces, drop boxes smaller
//! than the minimum area, take the hottest pixel in each box, map it to °C
//! with the calibrated model, draw the overlay and append the readings to
//! the log.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use thiserror::Error;

use crate::annotations::PixelBBox;
use crate::detectors::{DetectError, Detection, Detector, DetectorConfig};
use crate::frameio::{bgr_to_grayscale, FrameError, ThermalFrame, NATIVE_HEIGHT, NATIVE_WIDTH};
use crate::thermoreg::PixelModel;
use crate::Real;

pub const LOG_HEADER: &str = "frame_index,x1,y1,x2,y2,max_pixel,temperature_c,flagged";

/// Box outline colour, B,G,R.
pub const BOX_COLOR: [u8; 3] = [0, 0, 255];
/// Temperature text colour, B,G,R.
pub const TEXT_COLOR: [u8; 3] = [0, 255, 255];

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("roi ({x1},{y1},{x2},{y2}) outside {width}x{height} frame")]
    RoiOutOfBounds {
        x1: i32,
        y1: i32,
        x2: i32,
        y2: i32,
        width: u32,
        height: u32,
    },
    #[error("expected a single-channel frame, got {0} channels")]
    Channels(u8),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("frame {frame_index}: {source}")]
    Detect {
        frame_index: u64,
        #[source]
        source: DetectError,
    },
    #[error("invalid pipeline config: {0}")]
    Config(String),
    #[error("output: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub detector: DetectorConfig,
    /// Minimum box area in px² at the native 160×120 resolution; scaled by
    /// frame area for other sizes.
    pub min_bbox_area: u64,
    pub overlay: bool,
    pub decimals: usize,
    pub fever_threshold_c: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            detector: DetectorConfig::default(),
            min_bbox_area: 100,
            overlay: true,
            decimals: 1,
            fever_threshold_c: 38.0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.min_bbox_area < 1 {
            return Err(PipelineError::Config("min_bbox_area must be >= 1".into()));
        }
        self.detector
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn min_area_for(&self, width: u32, height: u32) -> i64 {
        let native = (NATIVE_WIDTH * NATIVE_HEIGHT) as f64;
        let scaled = self.min_bbox_area as f64 * (width as f64 * height as f64) / native;
        ((scaled + 0.5).floor() as i64).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TempReading<T = f64> {
    pub frame_index: u64,
    pub bbox: PixelBBox,
    pub max_pixel: u8,
    pub temperature_c: T,
    pub flagged: bool,
}

impl<T: Real> TempReading<T> {
    pub fn log_row(&self) -> String {
        let b = &self.bbox;
        format!(
            "{},{},{},{},{},{},{},{}",
            self.frame_index,
            b.x1,
            b.y1,
            b.x2,
            b.y2,
            self.max_pixel,
            self.temperature_c,
            u8::from(self.flagged)
        )
    }
}

/// Three-channel frame with boxes and temperatures drawn on it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotatedFrame(pub ThermalFrame);

pub fn extract_max_pixel(frame: &ThermalFrame, roi: &PixelBBox) -> Result<u8, PipelineError> {
    if frame.channels != 1 {
        return Err(PipelineError::Channels(frame.channels));
    }
    if !roi.within(frame.width, frame.height) || roi.x1 >= roi.x2 || roi.y1 >= roi.y2 {
        return Err(PipelineError::RoiOutOfBounds {
            x1: roi.x1,
            y1: roi.y1,
            x2: roi.x2,
            y2: roi.y2,
            width: frame.width,
            height: frame.height,
        });
    }
    let w = frame.width as usize;
    let (x1, x2) = (roi.x1 as usize, roi.x2 as usize);
    Ok((roi.y1 as usize..roi.y2 as usize)
        .map(|y| *frame.pixels[y * w + x1..y * w + x2].iter().max().unwrap())
        .max()
        .unwrap())
}

pub fn filter_min_area<T: Real>(dets: Vec<Detection<T>>, min_area: i64) -> Vec<Detection<T>> {
    dets.into_iter().filter(|d| d.bbox.area() >= min_area).collect()
}

/// 5×7 glyphs, one byte per row, low five bits, MSB on the left.
fn glyph(c: char) -> Option<[u8; 7]> {
    Some(match c {
        '0' => [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
        '1' => [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
        '2' => [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F],
        '3' => [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E],
        '4' => [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
        '5' => [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
        '6' => [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
        '7' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
        '9' => [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
        '.' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C],
        '-' => [0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00],
        '°' => [0x0C, 0x12, 0x12, 0x0C, 0x00, 0x00, 0x00],
        'C' => [0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E],
        _ => return None,
    })
}

pub const GLYPH_W: i32 = 5;
pub const GLYPH_H: i32 = 7;
const ADVANCE: i32 = GLYPH_W + 1;

/// Pixel width of `text` in the built-in font.
pub fn text_width(text: &str) -> i32 {
    let n = text.chars().count() as i32;
    if n == 0 {
        0
    } else {
        n * ADVANCE - 1
    }
}

pub fn temperature_label<T: Real>(temperature_c: T, decimals: usize) -> String {
    format!("{:.*}°C", decimals, temperature_c)
}

/// Top-left corner for a label over `bbox`: above the box, else below it,
/// else inside; always shifted to fit horizontally when it can.
pub fn label_origin(bbox: &PixelBBox, text_w: i32, frame_w: u32, frame_h: u32) -> (i32, i32) {
    let (fw, fh) = (frame_w as i32, frame_h as i32);
    let x = bbox.x1.min(fw - text_w).max(0);
    let y = if bbox.y1 - GLYPH_H > 0 {
        bbox.y1 - GLYPH_H - 1
    } else if bbox.y2 + 1 + GLYPH_H <= fh {
        bbox.y2 + 1
    } else {
        bbox.y1.min(fh - GLYPH_H).max(0)
    };
    (x, y)
}

fn put(frame: &mut ThermalFrame, x: i32, y: i32, color: [u8; 3]) {
    if x < 0 || y < 0 || x >= frame.width as i32 || y >= frame.height as i32 {
        return;
    }
    let o = frame.offset(x as u32, y as u32);
    frame.pixels[o..o + 3].copy_from_slice(&color);
}

fn draw_rect(frame: &mut ThermalFrame, b: &PixelBBox, color: [u8; 3]) {
    for x in b.x1..b.x2 {
        put(frame, x, b.y1, color);
        put(frame, x, b.y2 - 1, color);
    }
    for y in b.y1..b.y2 {
        put(frame, b.x1, y, color);
        put(frame, b.x2 - 1, y, color);
    }
}

fn draw_text(frame: &mut ThermalFrame, text: &str, x0: i32, y0: i32, color: [u8; 3]) {
    for (i, c) in text.chars().enumerate() {
        let Some(rows) = glyph(c) else { continue };
        let gx = x0 + i as i32 * ADVANCE;
        for (dy, bits) in rows.iter().enumerate() {
            for dx in 0..GLYPH_W {
                if bits & (0x10 >> dx) != 0 {
                    put(frame, gx + dx, y0 + dy as i32, color);
                }
            }
        }
    }
}

/// Draws one-pixel box outlines and temperature labels onto a three-channel
/// copy of the frame (gray frames are replicated first).
pub fn render_overlay<T: Real>(frame: &ThermalFrame, readings: &[TempReading<T>], decimals: usize) -> AnnotatedFrame {
    let mut out = if frame.channels == 1 {
        frame.replicate_to_bgr().expect("single channel")
    } else {
        frame.clone()
    };
    for r in readings {
        draw_rect(&mut out, &r.bbox, BOX_COLOR);
    }
    for r in readings {
        let text = temperature_label(r.temperature_c, decimals);
        let (x, y) = label_origin(&r.bbox, text_width(&text), out.width, out.height);
        draw_text(&mut out, &text, x, y, TEXT_COLOR);
    }
    AnnotatedFrame(out)
}

pub fn process_frame<T, D, M>(
    frame: &ThermalFrame,
    cfg: &PipelineConfig,
    detector: &mut D,
    model: &M,
) -> Result<(AnnotatedFrame, Vec<TempReading<T>>), PipelineError>
where
    T: Real,
    D: Detector<T> + ?Sized,
    M: PixelModel<T> + ?Sized,
{
    let gray = if frame.channels == 3 {
        bgr_to_grayscale(frame)?
    } else {
        frame.clone()
    };
    let dets = detector.detect(&gray).map_err(|source| PipelineError::Detect {
        frame_index: frame.frame_index,
        source,
    })?;
    let kept = filter_min_area(dets, cfg.min_area_for(gray.width, gray.height));
    let fever = T::lit(cfg.fever_threshold_c);
    let readings = kept
        .iter()
        .map(|d| {
            let max_pixel = extract_max_pixel(&gray, &d.bbox)?;
            let temperature_c = model.predict(T::from_u8(max_pixel).unwrap());
            Ok(TempReading {
                frame_index: frame.frame_index,
                bbox: d.bbox,
                max_pixel,
                temperature_c,
                flagged: temperature_c > fever,
            })
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    let annotated = if cfg.overlay {
        render_overlay(&gray, &readings, cfg.decimals)
    } else {
        render_overlay::<T>(&gray, &[], cfg.decimals)
    };
    Ok((annotated, readings))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StreamSummary {
    pub frames: usize,
    pub skipped: usize,
    pub readings: usize,
    pub flagged: usize,
    pub mean_latency_ms: f64,
    pub max_latency_ms: f64,
}

impl StreamSummary {
    pub fn to_key_values(&self) -> String {
        format!(
            "frames={}\nskipped={}\nreadings={}\nflagged={}\nmean_latency_ms={:.3}\nmax_latency_ms={:.3}\n",
            self.frames, self.skipped, self.readings, self.flagged, self.mean_latency_ms, self.max_latency_ms
        )
    }
}

/// Where a stream writes its results. Both outputs are optional.
#[derive(Default)]
pub struct StreamOutputs<'a> {
    /// Reading log; the header is written first and the log is flushed
    /// after every frame.
    pub log: Option<&'a mut dyn Write>,
    /// Directory for `out_%06d.ppm` annotated frames.
    pub frames_dir: Option<PathBuf>,
}

pub fn annotated_frame_path(dir: &Path, frame_index: u64) -> PathBuf {
    dir.join(format!("out_{frame_index:06}.ppm"))
}

/// Processes frames strictly in order.
///
/// A frame that fails to load or whose detector call fails is skipped and
/// counted; output I/O errors abort the stream with everything written so
/// far left in place.
pub fn run_stream<T, I, D, M>(
    source: I,
    cfg: &PipelineConfig,
    detector: &mut D,
    model: &M,
    mut outputs: StreamOutputs<'_>,
    mut on_frame: impl FnMut(&[TempReading<T>]),
) -> Result<StreamSummary, PipelineError>
where
    T: Real,
    I: IntoIterator<Item = Result<ThermalFrame, FrameError>>,
    D: Detector<T> + ?Sized,
    M: PixelModel<T> + ?Sized,
{
    cfg.validate()?;
    if let Some(dir) = &outputs.frames_dir {
        fs::create_dir_all(dir)?;
    }
    if let Some(log) = outputs.log.as_mut() {
        writeln!(log, "{LOG_HEADER}")?;
        log.flush()?;
    }
    let mut summary = StreamSummary::default();
    let mut total_ms = 0.0;
    for item in source {
        let started = Instant::now();
        let frame = match item {
            Ok(f) => f,
            Err(e) => {
                log::warn!("skipping unreadable frame: {e}");
                summary.skipped += 1;
                continue;
            }
        };
        let (annotated, readings) = match process_frame(&frame, cfg, detector, model) {
            Ok(r) => r,
            Err(e @ (PipelineError::Detect { .. } | PipelineError::Frame(_))) => {
                log::warn!("skipping frame {}: {e}", frame.frame_index);
                summary.skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        if let Some(log) = outputs.log.as_mut() {
            for r in &readings {
                writeln!(log, "{}", r.log_row())?;
            }
            log.flush()?;
        }
        if let Some(dir) = &outputs.frames_dir {
            let path = annotated_frame_path(dir, frame.frame_index);
            let tmp = path.with_extension("ppm.part");
            fs::write(&tmp, annotated.0.to_pnm())?;
            fs::rename(&tmp, &path)?;
        }
        let ms = started.elapsed().as_secs_f64() * 1e3;
        total_ms += ms;
        summary.max_latency_ms = summary.max_latency_ms.max(ms);
        summary.frames += 1;
        summary.readings += readings.len();
        summary.flagged += readings.iter().filter(|r| r.flagged).count();
        on_frame(&readings);
    }
    if summary.frames > 0 {
        summary.mean_latency_ms = total_ms / summary.frames as f64;
    }
    Ok(summary)
}
