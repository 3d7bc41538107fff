//! Thermal frame loading, conversion, resizing and augmentation.
//!
//! Frames are stored as binary netpbm: P5 (grayscale) or P6 (three
//! channels, B,G,R order on disk) with maxval 255. A dataset directory pairs
//! `<stem>.pgm|.ppm` frames with `<stem>.txt` YOLO label files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::annotations::{parse_yolo_text, GroundTruthLabel, LabelError};

/// Native sensor resolution.
pub const NATIVE_WIDTH: u32 = 160;
pub const NATIVE_HEIGHT: u32 = 120;

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("expected {expected:?} (w,h,c), found {found:?}")]
    DimensionMismatch {
        expected: (u32, u32, u8),
        found: (u32, u32, u8),
    },
    #[error("invalid frame: {0}")]
    Invalid(String),
    #[error("frame already has {0} channel(s)")]
    ChannelCount(u8),
    #[error("label file {path}: {source}")]
    Label {
        path: PathBuf,
        #[source]
        source: LabelError,
    },
    #[error("label file {0} has no matching frame")]
    OrphanLabel(PathBuf),
    #[error("duplicate frame stem `{0}`")]
    DuplicateStem(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThermalFrame {
    pub width: u32,
    pub height: u32,
    pub channels: u8,
    pub pixels: Vec<u8>,
    pub frame_index: u64,
    pub source_id: String,
}

impl ThermalFrame {
    pub fn new(width: u32, height: u32, channels: u8, pixels: Vec<u8>) -> Result<Self, FrameError> {
        if width == 0 || height == 0 {
            return Err(FrameError::Invalid(format!("zero dimension {width}x{height}")));
        }
        if channels != 1 && channels != 3 {
            return Err(FrameError::Invalid(format!("unsupported channel count {channels}")));
        }
        let expected = width as usize * height as usize * channels as usize;
        if pixels.len() != expected {
            return Err(FrameError::Invalid(format!(
                "buffer holds {} bytes, expected {expected}",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
            frame_index: 0,
            source_id: String::new(),
        })
    }

    pub fn filled(width: u32, height: u32, channels: u8, value: u8) -> Self {
        Self::new(
            width,
            height,
            channels,
            vec![value; width as usize * height as usize * channels as usize],
        )
        .expect("positive dims")
    }

    pub fn with_meta(mut self, frame_index: u64, source_id: impl Into<String>) -> Self {
        self.frame_index = frame_index;
        self.source_id = source_id.into();
        self
    }

    pub fn dims(&self) -> (u32, u32, u8) {
        (self.width, self.height, self.channels)
    }

    #[inline]
    pub fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * self.channels as usize
    }

    /// Gray value at (x, y); panics on multi-channel frames.
    #[inline]
    pub fn gray(&self, x: u32, y: u32) -> u8 {
        debug_assert_eq!(self.channels, 1);
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set_gray(&mut self, x: u32, y: u32, v: u8) {
        debug_assert_eq!(self.channels, 1);
        let i = y as usize * self.width as usize + x as usize;
        self.pixels[i] = v;
    }

    /// Encodes as P5 or P6.
    pub fn to_pnm(&self) -> Vec<u8> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        if self.channels == 1 {
            out.extend_from_slice(&self.pixels);
        } else {
            // Memory order is B,G,R; netpbm stores R,G,B.
            for px in self.pixels.chunks_exact(3) {
                out.extend_from_slice(&[px[2], px[1], px[0]]);
            }
        }
        out
    }

    pub fn pnm_extension(&self) -> &'static str {
        if self.channels == 1 {
            "pgm"
        } else {
            "ppm"
        }
    }

    /// Replicates the gray plane into three channels.
    pub fn replicate_to_bgr(&self) -> Result<Self, FrameError> {
        if self.channels != 1 {
            return Err(FrameError::ChannelCount(self.channels));
        }
        let pixels = self.pixels.iter().flat_map(|&v| [v, v, v]).collect();
        Ok(Self {
            channels: 3,
            pixels,
            ..self.clone()
        })
    }
}

/// Frame plus its labels; an empty label list marks a frame with no faces.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetItem {
    pub frame: ThermalFrame,
    pub labels: Vec<GroundTruthLabel>,
}

struct HeaderReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl HeaderReader<'_> {
    fn skip_ws_and_comments(&mut self) {
        while self.pos < self.data.len() {
            match self.data[self.pos] {
                b'#' => {
                    while self.pos < self.data.len() && self.data[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn token(&mut self) -> Result<&str, FrameError> {
        self.skip_ws_and_comments();
        let start = self.pos;
        while self.pos < self.data.len() && !self.data[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(FrameError::MalformedHeader("truncated header".into()));
        }
        std::str::from_utf8(&self.data[start..self.pos])
            .map_err(|_| FrameError::MalformedHeader("non-ascii header".into()))
    }

    fn number(&mut self, what: &str) -> Result<u32, FrameError> {
        let t = self.token()?;
        t.parse()
            .map_err(|_| FrameError::MalformedHeader(format!("bad {what} `{t}`")))
    }
}

/// Decodes a P5/P6 byte buffer.
pub fn decode_pnm(data: &[u8]) -> Result<ThermalFrame, FrameError> {
    let mut rd = HeaderReader { data, pos: 0 };
    let channels = match rd.token()? {
        "P5" => 1u8,
        "P6" => 3u8,
        other => {
            return Err(FrameError::MalformedHeader(format!(
                "unsupported magic `{other}`"
            )))
        }
    };
    let width = rd.number("width")?;
    let height = rd.number("height")?;
    let maxval = rd.number("maxval")?;
    if maxval != 255 {
        return Err(FrameError::MalformedHeader(format!("maxval {maxval}, expected 255")));
    }
    if width == 0 || height == 0 {
        return Err(FrameError::MalformedHeader(format!("zero dimension {width}x{height}")));
    }
    // exactly one whitespace byte separates the header from the raster
    if rd.pos >= data.len() || !data[rd.pos].is_ascii_whitespace() {
        return Err(FrameError::MalformedHeader("missing raster".into()));
    }
    let body = &data[rd.pos + 1..];
    let need = width as usize * height as usize * channels as usize;
    if body.len() < need {
        return Err(FrameError::MalformedHeader(format!(
            "raster holds {} bytes, expected {need}",
            body.len()
        )));
    }
    let body = &body[..need];
    let pixels = if channels == 1 {
        body.to_vec()
    } else {
        body.chunks_exact(3)
            .flat_map(|rgb| [rgb[2], rgb[1], rgb[0]])
            .collect()
    };
    ThermalFrame::new(width, height, channels, pixels)
}

pub fn load_frame(path: &Path, expected_dims: Option<(u32, u32, u8)>) -> Result<ThermalFrame, FrameError> {
    let data = fs::read(path).map_err(|source| FrameError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let frame = decode_pnm(&data)?.with_meta(0, stem);
    if let Some(expected) = expected_dims {
        if frame.dims() != expected {
            return Err(FrameError::DimensionMismatch {
                expected,
                found: frame.dims(),
            });
        }
    }
    Ok(frame)
}

/// BT.601 luma, rounded half-up.
pub fn bgr_to_grayscale(frame: &ThermalFrame) -> Result<ThermalFrame, FrameError> {
    if frame.channels != 3 {
        return Err(FrameError::ChannelCount(frame.channels));
    }
    let pixels = frame
        .pixels
        .chunks_exact(3)
        .map(|px| {
            let (b, g, r) = (px[0] as u32, px[1] as u32, px[2] as u32);
            ((299 * r + 587 * g + 114 * b + 500) / 1000).min(255) as u8
        })
        .collect();
    Ok(ThermalFrame {
        channels: 1,
        pixels,
        ..frame.clone()
    })
}

/// Bilinear resize with half-pixel centers; aspect ratio is not preserved.
pub fn resize(frame: &ThermalFrame, target_w: u32, target_h: u32) -> Result<ThermalFrame, FrameError> {
    if target_w == 0 || target_h == 0 {
        return Err(FrameError::Invalid(format!("target {target_w}x{target_h}")));
    }
    if (target_w, target_h) == (frame.width, frame.height) {
        return Ok(frame.clone());
    }
    let c = frame.channels as usize;
    let axis = |dst: u32, src: u32| -> Vec<(usize, usize, f64)> {
        let scale = src as f64 / dst as f64;
        (0..dst)
            .map(|d| {
                let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(src as usize - 1);
                (i0, i1, s - i0 as f64)
            })
            .collect()
    };
    let xs = axis(target_w, frame.width);
    let ys = axis(target_h, frame.height);
    let src_stride = frame.width as usize * c;
    let mut pixels = Vec::with_capacity(target_w as usize * target_h as usize * c);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for ch in 0..c {
                let at = |x: usize, y: usize| frame.pixels[y * src_stride + x * c + ch] as f64;
                let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
                let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                pixels.push((v + 0.5).floor().clamp(0.0, 255.0) as u8);
            }
        }
    }
    Ok(ThermalFrame {
        width: target_w,
        height: target_h,
        pixels,
        ..frame.clone()
    })
}

pub fn horizontal_flip(item: &DatasetItem) -> DatasetItem {
    let f = &item.frame;
    let c = f.channels as usize;
    let stride = f.width as usize * c;
    let mut pixels = Vec::with_capacity(f.pixels.len());
    for row in f.pixels.chunks_exact(stride) {
        for px in row.chunks_exact(c).rev() {
            pixels.extend_from_slice(px);
        }
    }
    DatasetItem {
        frame: ThermalFrame {
            pixels,
            ..f.clone()
        },
        labels: item
            .labels
            .iter()
            .map(|l| GroundTruthLabel {
                bbox: l.bbox.hflipped(),
            })
            .collect(),
    }
}

fn list_dir(dir: &Path) -> Result<Vec<PathBuf>, FrameError> {
    let io = |source| FrameError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        if path.is_file() {
            out.push(path);
        }
    }
    Ok(out)
}

fn stem_with_ext(path: &Path, exts: &[&str]) -> Option<String> {
    let ext = path.extension()?.to_str()?.to_ascii_lowercase();
    exts.contains(&ext.as_str())
        .then(|| path.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .flatten()
}

/// Frame paths in a directory, sorted by stem.
pub fn list_frames(dir: &Path) -> Result<Vec<(String, PathBuf)>, FrameError> {
    let mut frames: BTreeMap<String, PathBuf> = BTreeMap::new();
    for path in list_dir(dir)? {
        if let Some(stem) = stem_with_ext(&path, &["pgm", "ppm"]) {
            if frames.insert(stem.clone(), path).is_some() {
                return Err(FrameError::DuplicateStem(stem));
            }
        }
    }
    Ok(frames.into_iter().collect())
}

pub fn read_label_file(path: &Path) -> Result<Vec<GroundTruthLabel>, FrameError> {
    let text = fs::read_to_string(path).map_err(|source| FrameError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_yolo_text(&text)
        .map(|v| v.into_iter().map(GroundTruthLabel::from).collect())
        .map_err(|source| FrameError::Label {
            path: path.to_path_buf(),
            source,
        })
}

/// Pairs every frame with its label file; frames without one get no labels.
pub fn pair_frames_with_labels(frames_dir: &Path, labels_dir: &Path) -> Result<Vec<DatasetItem>, FrameError> {
    let frames = list_frames(frames_dir)?;
    let mut labels: BTreeMap<String, PathBuf> = BTreeMap::new();
    for path in list_dir(labels_dir)? {
        if let Some(stem) = stem_with_ext(&path, &["txt"]) {
            labels.insert(stem, path);
        }
    }
    if let Some((_, orphan)) = labels
        .iter()
        .find(|(stem, _)| frames.binary_search_by(|(s, _)| s.cmp(stem)).is_err())
    {
        return Err(FrameError::OrphanLabel(orphan.clone()));
    }
    frames
        .into_iter()
        .enumerate()
        .map(|(idx, (stem, path))| {
            let frame = load_frame(&path, None)?.with_meta(idx as u64, stem.clone());
            let labels = match labels.get(&stem) {
                Some(lp) => read_label_file(lp)?,
                None => Vec::new(),
            };
            Ok(DatasetItem { frame, labels })
        })
        .collect()
}
