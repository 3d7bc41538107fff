//! Face detectors.
//!
//! Every detector returns detections sorted by descending confidence, with
//! low-confidence detections removed and non-maximum suppression applied.
//! Three implementations exist:
//!
//! * [`ReplayDetector`] replays ground-truth labels with confidence 1.
//! * [`BlobDetector`] thresholds the frame and reports warm connected regions.
//! * [`ExternalAdapter`] talks to a detector process over a line protocol.
//!
//! # External detector protocol
//!
//! The adapter process speaks UTF-8, LF-terminated lines on stdin/stdout:
//!
//! ```text
//! adapter -> READY 1
//! client  -> FRAME <request-id> <width> <height> <absolute-path>
//! adapter -> OK <n>
//! adapter -> DET <class> <conf> <cx> <cy> <w> <h>     (n times, normalized)
//!      or -> ERR <message>
//! ```

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use thiserror::Error;

use crate::annotations::{denormalize, GroundTruthLabel, LabelError, NormBBox, PixelBBox};
use crate::deteval::iou;
use crate::frameio::ThermalFrame;
use crate::Real;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("detector needs a single-channel frame, got {0} channels")]
    Channels(u8),
    #[error("label conversion failed: {0}")]
    Label(#[from] LabelError),
    #[error("invalid detector config: {0}")]
    Config(String),
    #[error("cannot launch adapter `{cmd}`: {source}")]
    Launch {
        cmd: String,
        #[source]
        source: std::io::Error,
    },
    #[error("adapter exited")]
    AdapterExited,
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("adapter did not answer within {0:?}")]
    Timeout(Duration),
    #[error("adapter reported error: {0}")]
    Remote(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection<T = f64> {
    pub bbox: PixelBBox,
    pub confidence: T,
    pub class_id: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectorKind {
    Replay,
    Blob,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlobParams {
    pub intensity_threshold: u8,
    /// Pixels squared.
    pub min_blob_area: u64,
    /// Long side over short side.
    pub max_aspect_ratio: f64,
}

impl Default for BlobParams {
    fn default() -> Self {
        Self {
            intensity_threshold: 200,
            min_blob_area: 64,
            max_aspect_ratio: 2.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    pub kind: DetectorKind,
    pub confidence_threshold: f64,
    pub nms_iou_threshold: f64,
    pub blob: BlobParams,
    pub external_command: Option<String>,
    pub response_timeout: Duration,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            kind: DetectorKind::Blob,
            confidence_threshold: 0.25,
            nms_iou_threshold: 0.45,
            blob: BlobParams::default(),
            external_command: None,
            response_timeout: Duration::from_secs(2),
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), DetectError> {
        if !(0.0..=1.0).contains(&self.confidence_threshold) {
            return Err(DetectError::Config(format!(
                "confidence_threshold {} not in [0,1]",
                self.confidence_threshold
            )));
        }
        if !(self.nms_iou_threshold > 0.0 && self.nms_iou_threshold < 1.0) {
            return Err(DetectError::Config(format!(
                "nms_iou_threshold {} not in (0,1)",
                self.nms_iou_threshold
            )));
        }
        if !(self.blob.max_aspect_ratio >= 1.0) {
            return Err(DetectError::Config(format!(
                "max_aspect_ratio {} below 1",
                self.blob.max_aspect_ratio
            )));
        }
        if self.kind == DetectorKind::External && self.external_command.is_none() {
            return Err(DetectError::Config("external detector needs a command".into()));
        }
        Ok(())
    }
}

pub trait Detector<T: Real = f64> {
    fn detect(&mut self, frame: &ThermalFrame) -> Result<Vec<Detection<T>>, DetectError>;
}

impl<T: Real, D: Detector<T> + ?Sized> Detector<T> for Box<D> {
    fn detect(&mut self, frame: &ThermalFrame) -> Result<Vec<Detection<T>>, DetectError> {
        (**self).detect(frame)
    }
}

/// Stable sort by descending confidence.
pub fn sort_by_confidence<T: Real>(dets: &mut [Detection<T>]) {
    dets.sort_by(|a, b| b.confidence.total_cmp_real(&a.confidence));
}

/// Greedy suppression: keep a detection iff its IoU with every kept one is
/// below `iou_threshold`.
pub fn nms<T: Real>(dets: &[Detection<T>], iou_threshold: T) -> Vec<Detection<T>> {
    let mut sorted = dets.to_vec();
    sort_by_confidence(&mut sorted);
    let mut kept: Vec<Detection<T>> = Vec::with_capacity(sorted.len());
    for d in sorted {
        if kept.iter().all(|k| iou::<T>(&k.bbox, &d.bbox) < iou_threshold) {
            kept.push(d);
        }
    }
    kept
}

/// Sort, drop detections under the confidence threshold, then suppress.
pub fn finalize<T: Real>(dets: Vec<Detection<T>>, cfg: &DetectorConfig) -> Vec<Detection<T>> {
    let thr = T::lit(cfg.confidence_threshold);
    let above: Vec<_> = dets.into_iter().filter(|d| d.confidence >= thr).collect();
    nms(&above, T::lit(cfg.nms_iou_threshold))
}

/// Emits each ground-truth label as a detection with confidence 1.
///
/// Labels are looked up by the frame's `source_id`. Suppression is not
/// applied, so overlapping labels all survive.
#[derive(Debug, Clone, Default)]
pub struct ReplayDetector {
    labels: HashMap<String, Vec<GroundTruthLabel>>,
}

impl ReplayDetector {
    pub fn new(labels: HashMap<String, Vec<GroundTruthLabel>>) -> Self {
        Self { labels }
    }

    pub fn insert(&mut self, source_id: impl Into<String>, labels: Vec<GroundTruthLabel>) {
        self.labels.insert(source_id.into(), labels);
    }
}

impl<T: Real> Detector<T> for ReplayDetector {
    fn detect(&mut self, frame: &ThermalFrame) -> Result<Vec<Detection<T>>, DetectError> {
        let Some(labels) = self.labels.get(&frame.source_id) else {
            return Ok(Vec::new());
        };
        labels
            .iter()
            .map(|l| {
                Ok(Detection {
                    bbox: denormalize(&l.bbox, frame.width, frame.height)?,
                    confidence: T::one(),
                    class_id: l.bbox.class_id,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Component {
    pub bbox: PixelBBox,
    pub area: u64,
    pub intensity_sum: u64,
}

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        let up = parent[parent[x as usize] as usize];
        parent[x as usize] = up;
        x = up;
    }
    x
}

fn union(parent: &mut [u32], a: u32, b: u32) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi as usize] = lo;
    }
}

/// 8-connected components of pixels `>= threshold`, in raster order of
/// their first pixel.
pub fn connected_components(frame: &ThermalFrame, threshold: u8) -> Result<Vec<Component>, DetectError> {
    if frame.channels != 1 {
        return Err(DetectError::Channels(frame.channels));
    }
    let (w, h) = (frame.width as usize, frame.height as usize);
    let mut labels = vec![0u32; w * h];
    let mut parent: Vec<u32> = vec![0];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if frame.pixels[i] < threshold {
                continue;
            }
            let mut neighbours = [0u32; 4];
            let mut n = 0;
            let mut push = |l: u32| {
                if l != 0 {
                    neighbours[n] = l;
                    n += 1;
                }
            };
            if x > 0 {
                push(labels[i - 1]);
            }
            if y > 0 {
                if x > 0 {
                    push(labels[i - w - 1]);
                }
                push(labels[i - w]);
                if x + 1 < w {
                    push(labels[i - w + 1]);
                }
            }
            let lab = if n == 0 {
                let l = parent.len() as u32;
                parent.push(l);
                l
            } else {
                let first = neighbours[0];
                for &other in &neighbours[1..n] {
                    union(&mut parent, first, other);
                }
                first
            };
            labels[i] = lab;
        }
    }

    let mut index_of_root: HashMap<u32, usize> = HashMap::new();
    let mut comps: Vec<Component> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if labels[i] == 0 {
                continue;
            }
            let root = find(&mut parent, labels[i]);
            let (xi, yi) = (x as i32, y as i32);
            let v = frame.pixels[i] as u64;
            match index_of_root.get(&root) {
                Some(&k) => {
                    let c = &mut comps[k];
                    c.bbox.x1 = c.bbox.x1.min(xi);
                    c.bbox.y1 = c.bbox.y1.min(yi);
                    c.bbox.x2 = c.bbox.x2.max(xi + 1);
                    c.bbox.y2 = c.bbox.y2.max(yi + 1);
                    c.area += 1;
                    c.intensity_sum += v;
                }
                None => {
                    index_of_root.insert(root, comps.len());
                    comps.push(Component {
                        bbox: PixelBBox {
                            x1: xi,
                            y1: yi,
                            x2: xi + 1,
                            y2: yi + 1,
                        },
                        area: 1,
                        intensity_sum: v,
                    });
                }
            }
        }
    }
    Ok(comps)
}

/// Raw blob candidates before confidence filtering and suppression.
pub fn blob_detect<T: Real>(frame: &ThermalFrame, params: &BlobParams) -> Result<Vec<Detection<T>>, DetectError> {
    let comps = connected_components(frame, params.intensity_threshold)?;
    Ok(comps
        .into_iter()
        .filter(|c| c.area >= params.min_blob_area)
        .filter(|c| {
            let (bw, bh) = (c.bbox.width() as f64, c.bbox.height() as f64);
            bw.max(bh) / bw.min(bh) <= params.max_aspect_ratio
        })
        .map(|c| Detection {
            bbox: c.bbox,
            confidence: T::from_u64(c.intensity_sum).unwrap()
                / (T::from_u64(c.area).unwrap() * T::lit(255.0)),
            class_id: 0,
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct BlobDetector {
    pub config: DetectorConfig,
}

impl BlobDetector {
    pub fn new(config: DetectorConfig) -> Result<Self, DetectError> {
        config.validate()?;
        Ok(Self { config })
    }
}

impl<T: Real> Detector<T> for BlobDetector {
    fn detect(&mut self, frame: &ThermalFrame) -> Result<Vec<Detection<T>>, DetectError> {
        let raw = blob_detect(frame, &self.config.blob)?;
        Ok(finalize(raw, &self.config))
    }
}

/// Parses one `DET <class> <conf> <cx> <cy> <w> <h>` line.
pub fn parse_det_line(line: &str) -> Result<(f64, NormBBox), DetectError> {
    let toks: Vec<&str> = line.split_whitespace().collect();
    if toks.len() != 7 || toks[0] != "DET" {
        return Err(DetectError::Protocol(format!("expected DET line, got `{line}`")));
    }
    let conf: f64 = toks[2]
        .parse()
        .map_err(|_| DetectError::Protocol(format!("bad confidence `{}`", toks[2])))?;
    if !(0.0..=1.0).contains(&conf) {
        return Err(DetectError::Protocol(format!("confidence {conf} not in [0,1]")));
    }
    let label = format!("{} {}", toks[1], toks[3..].join(" "));
    let bbox = crate::annotations::parse_yolo_line(&label)
        .map_err(|e| DetectError::Protocol(format!("bad box in `{line}`: {e}")))?;
    Ok((conf, bbox))
}

/// Client side of the external detector protocol.
///
/// One request is in flight at a time. The child is killed on drop.
pub struct ExternalAdapter {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
    workdir: tempfile::TempDir,
    next_id: u64,
    config: DetectorConfig,
    /// Set when a reply may still be in flight; the next request restarts
    /// the process instead of reading a stale answer.
    desynced: bool,
}

impl std::fmt::Debug for ExternalAdapter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalAdapter")
            .field("pid", &self.child.id())
            .field("next_id", &self.next_id)
            .finish()
    }
}

impl ExternalAdapter {
    pub const HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(10);

    /// Launches the command in `config.external_command` and waits for
    /// `READY 1`.
    pub fn spawn(config: DetectorConfig) -> Result<Self, DetectError> {
        config.validate()?;
        let cmdline = config
            .external_command
            .clone()
            .ok_or_else(|| DetectError::Config("missing external command".into()))?;
        let argv = shlex::split(&cmdline)
            .filter(|a| !a.is_empty())
            .ok_or_else(|| DetectError::Config(format!("cannot split command `{cmdline}`")))?;
        let mut child = Command::new(&argv[0])
            .args(&argv[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|source| DetectError::Launch {
                cmd: cmdline.clone(),
                source,
            })?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        let mut adapter = Self {
            child,
            stdin,
            lines: rx,
            workdir: tempfile::tempdir()?,
            next_id: 0,
            config,
            desynced: false,
        };
        let hello = adapter.recv(Self::HANDSHAKE_TIMEOUT)?;
        let expected = format!("READY {PROTOCOL_VERSION}");
        if hello.trim() != expected {
            return Err(DetectError::Protocol(format!("expected `{expected}`, got `{hello}`")));
        }
        Ok(adapter)
    }

    fn recv(&mut self, timeout: Duration) -> Result<String, DetectError> {
        match self.lines.recv_timeout(timeout) {
            Ok(Ok(line)) => Ok(line),
            Ok(Err(e)) => Err(DetectError::Io(e)),
            Err(RecvTimeoutError::Timeout) => Err(DetectError::Timeout(timeout)),
            Err(RecvTimeoutError::Disconnected) => Err(DetectError::AdapterExited),
        }
    }

    /// Sends one frame and returns the raw (unfiltered) detections.
    pub fn request<T: Real>(&mut self, frame: &ThermalFrame) -> Result<Vec<Detection<T>>, DetectError> {
        if self.desynced {
            log::warn!("restarting external detector after a failed exchange");
            *self = Self::spawn(self.config.clone())?;
        }
        let id = self.next_id;
        self.next_id += 1;
        let safe: String = frame
            .source_id
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' })
            .collect();
        let stem = if safe.is_empty() { format!("frame_{id}") } else { safe };
        let path = self.workdir.path().join(format!("{stem}.{}", frame.pnm_extension()));
        std::fs::write(&path, frame.to_pnm())?;
        let result = self.exchange(id, frame, &path);
        let _ = std::fs::remove_file(&path);
        if matches!(
            result,
            Err(DetectError::Timeout(_) | DetectError::Protocol(_) | DetectError::Label(_) | DetectError::Io(_))
        ) {
            self.desynced = true;
        }
        result
    }

    fn exchange<T: Real>(
        &mut self,
        id: u64,
        frame: &ThermalFrame,
        path: &std::path::Path,
    ) -> Result<Vec<Detection<T>>, DetectError> {
        let request = format!("FRAME {id} {} {} {}\n", frame.width, frame.height, path.display());
        if self.stdin.write_all(request.as_bytes()).and_then(|_| self.stdin.flush()).is_err() {
            return Err(DetectError::AdapterExited);
        }
        let timeout = self.config.response_timeout;
        let head = self.recv(timeout)?;
        let head = head.trim();
        if let Some(msg) = head.strip_prefix("ERR") {
            return Err(DetectError::Remote(msg.trim().to_string()));
        }
        let count: usize = head
            .strip_prefix("OK ")
            .and_then(|n| n.trim().parse().ok())
            .ok_or_else(|| DetectError::Protocol(format!("expected `OK <n>`, got `{head}`")))?;
        let mut dets = Vec::with_capacity(count);
        for _ in 0..count {
            let line = self.recv(timeout)?;
            let (conf, nb) = parse_det_line(&line)?;
            dets.push(Detection {
                bbox: denormalize(&nb, frame.width, frame.height)?,
                confidence: T::lit(conf),
                class_id: nb.class_id,
            });
        }
        Ok(dets)
    }
}

impl<T: Real> Detector<T> for ExternalAdapter {
    fn detect(&mut self, frame: &ThermalFrame) -> Result<Vec<Detection<T>>, DetectError> {
        let raw = self.request(frame)?;
        Ok(finalize(raw, &self.config))
    }
}

impl Drop for ExternalAdapter {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Builds the configured detector. Replay detectors need labels keyed by
/// frame `source_id`.
pub fn build_detector<T: Real>(
    config: &DetectorConfig,
    replay_labels: Option<HashMap<String, Vec<GroundTruthLabel>>>,
) -> Result<Box<dyn Detector<T> + Send>, DetectError> {
    config.validate()?;
    Ok(match config.kind {
        DetectorKind::Replay => Box::new(ReplayDetector::new(replay_labels.unwrap_or_default())),
        DetectorKind::Blob => Box::new(BlobDetector::new(config.clone())?),
        DetectorKind::External => Box::new(ExternalAdapter::spawn(config.clone())?),
    })
}
