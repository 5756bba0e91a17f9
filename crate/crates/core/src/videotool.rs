//! Video sources and the two perception tools, `FrameAt` and `VideoClip`.
//!
//! Tool failures are values: every problem with a call comes back as a
//! [`ToolResult`] whose payload is an `ERROR: ...` line, ready to be fed to
//! the policy as a tool response.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use image::RgbImage;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

/// Side length of every frame a tool returns.
pub const TOOL_RESOLUTION: u32 = 448;
pub const CLIP_MIN_FRAMES: usize = 8;
pub const CLIP_MAX_FRAMES: usize = 20;
/// Clip sampling density before clamping.
pub const CLIP_FRAMES_PER_SECOND: f64 = 2.0;

#[derive(Debug, Error)]
pub enum VideoError {
    #[error("video {id}: {reason}")]
    Invalid { id: String, reason: String },
    #[error("manifest {path}: {source}")]
    Manifest { path: PathBuf, source: serde_json::Error },
    #[error("image {path}: {source}")]
    Image { path: PathBuf, source: image::ImageError },
    #[error("io {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Random access to decoded frames. Implement this to back a
/// [`VideoSource`] with something other than in-memory images.
pub trait FrameAccessor: Send + Sync {
    fn frame(&self, index: usize) -> Arc<RgbImage>;
}

impl FrameAccessor for Vec<Arc<RgbImage>> {
    fn frame(&self, index: usize) -> Arc<RgbImage> {
        Arc::clone(&self[index])
    }
}

/// An immutable, random-access video.
#[derive(Clone)]
pub struct VideoSource {
    id: String,
    duration: f64,
    fps: f64,
    frame_count: usize,
    accessor: Arc<dyn FrameAccessor>,
}

impl fmt::Debug for VideoSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VideoSource")
            .field("id", &self.id)
            .field("duration", &self.duration)
            .field("fps", &self.fps)
            .field("frame_count", &self.frame_count)
            .finish()
    }
}

impl VideoSource {
    /// `frame_count` is derived as `floor(duration * fps)` and must be at
    /// least one.
    pub fn new(
        id: impl Into<String>,
        duration: f64,
        fps: f64,
        accessor: Arc<dyn FrameAccessor>,
    ) -> Result<Self, VideoError> {
        let id = id.into();
        let invalid = |reason: String| VideoError::Invalid { id: id.clone(), reason };
        if !(duration.is_finite() && duration >= 0.0) {
            return Err(invalid(format!("duration must be a non-negative number, got {duration}")));
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(invalid(format!("fps must be positive, got {fps}")));
        }
        let frame_count = (duration * fps).floor() as usize;
        if frame_count < 1 {
            return Err(invalid("video has no frames".into()));
        }
        Ok(VideoSource { id, duration, fps, frame_count, accessor })
    }

    /// Builds a source from in-memory images; the image count must equal
    /// `floor(duration * fps)`.
    pub fn from_images(
        id: impl Into<String>,
        duration: f64,
        fps: f64,
        images: Vec<Arc<RgbImage>>,
    ) -> Result<Self, VideoError> {
        let n = images.len();
        let source = VideoSource::new(id, duration, fps, Arc::new(images))?;
        if source.frame_count != n {
            return Err(VideoError::Invalid {
                id: source.id,
                reason: format!("expected {} frames, got {n}", source.frame_count),
            });
        }
        Ok(source)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn frame_count(&self) -> usize {
        self.frame_count
    }

    /// Source timestamp of frame `index`.
    pub fn frame_time(&self, index: usize) -> f64 {
        (index as f64 / self.fps).min(self.duration)
    }

    /// Panics if `index >= frame_count()`.
    pub fn frame(&self, index: usize) -> Frame {
        assert!(index < self.frame_count, "frame {index} out of range for {}", self.id);
        Frame {
            pixels: self.accessor.frame(index),
            timestamp: self.frame_time(index),
            source_index: index,
        }
    }

    /// Index of the frame nearest to `t`; ties go to the earlier frame.
    pub fn nearest_index(&self, t: f64) -> usize {
        let last = self.frame_count - 1;
        let lo = ((t * self.fps).floor().max(0.0) as usize).min(last);
        let hi = (lo + 1).min(last);
        let d_lo = (self.frame_time(lo) - t).abs();
        let d_hi = (self.frame_time(hi) - t).abs();
        if d_hi < d_lo {
            hi
        } else {
            lo
        }
    }

    /// Integer duration as used in error messages.
    fn duration_label(&self) -> i64 {
        self.duration.round() as i64
    }
}

/// A decoded frame with its source timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub pixels: Arc<RgbImage>,
    pub timestamp: f64,
    pub source_index: usize,
}

impl Frame {
    pub fn height(&self) -> u32 {
        self.pixels.height()
    }

    pub fn width(&self) -> u32 {
        self.pixels.width()
    }
}

/// A frame paired with the timestamp at which it was requested.
#[derive(Debug, Clone, PartialEq)]
pub struct TimedFrame {
    pub frame: Frame,
    pub timestamp: f64,
}

/// Nearest-neighbour resize with centre-aligned sampling. Same-size input is
/// returned without copying.
pub fn resize(frame: &Frame, height: u32, width: u32) -> Frame {
    assert!(height >= 1 && width >= 1, "resize target must be at least 1x1");
    Frame {
        pixels: resize_pixels(&frame.pixels, height, width),
        timestamp: frame.timestamp,
        source_index: frame.source_index,
    }
}

pub(crate) fn resize_pixels(src: &Arc<RgbImage>, height: u32, width: u32) -> Arc<RgbImage> {
    let (sw, sh) = src.dimensions();
    if sw == width && sh == height {
        return Arc::clone(src);
    }
    let col: Vec<u32> = (0..width)
        .map(|x| (((2 * x as u64 + 1) * sw as u64) / (2 * width as u64)) as u32)
        .collect();
    let mut out = vec![0u8; 3 * width as usize * height as usize];
    let mut prev_row: Option<(u32, u32)> = None;
    for y in 0..height {
        let sy = (((2 * y as u64 + 1) * sh as u64) / (2 * height as u64)) as u32;
        let row_len = 3 * width as usize;
        let dst_start = y as usize * row_len;
        if let Some((py, psy)) = prev_row {
            if psy == sy {
                let prev = py as usize * row_len;
                out.copy_within(prev..prev + row_len, dst_start);
                continue;
            }
        }
        let src_row = &src.as_raw()[sy as usize * 3 * sw as usize..(sy as usize + 1) * 3 * sw as usize];
        let dst_row = &mut out[dst_start..dst_start + row_len];
        for (x, &sx) in col.iter().enumerate() {
            dst_row[3 * x..3 * x + 3].copy_from_slice(&src_row[3 * sx as usize..3 * sx as usize + 3]);
        }
        prev_row = Some((y, sy));
    }
    Arc::new(RgbImage::from_raw(width, height, out).expect("buffer sized for width x height"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ToolName {
    FrameAt,
    VideoClip,
}

impl ToolName {
    pub fn as_str(self) -> &'static str {
        match self {
            ToolName::FrameAt => "FrameAt",
            ToolName::VideoClip => "VideoClip",
        }
    }
}

impl fmt::Display for ToolName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A well-formed tool invocation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", content = "arguments")]
pub enum ToolCallSpec {
    FrameAt { time: f64 },
    VideoClip { t_start: f64, t_end: f64 },
}

impl ToolCallSpec {
    pub fn name(&self) -> ToolName {
        match self {
            ToolCallSpec::FrameAt { .. } => ToolName::FrameAt,
            ToolCallSpec::VideoClip { .. } => ToolName::VideoClip,
        }
    }

    /// JSON form used inside `<tool_call>` blocks.
    pub fn to_json(&self) -> String {
        match *self {
            ToolCallSpec::FrameAt { time } => {
                format!("{{\"name\": \"FrameAt\", \"arguments\": {{\"time\": {time:.1}}}}}")
            }
            ToolCallSpec::VideoClip { t_start, t_end } => format!(
                "{{\"name\": \"VideoClip\", \"arguments\": {{\"t_start\": {t_start:.1}, \"t_end\": {t_end:.1}}}}}"
            ),
        }
    }
}

/// Why raw tool-call text could not become a [`ToolCallSpec`].
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ToolCallError {
    #[error("ERROR: Unknown tool {0}.")]
    UnknownTool(String),
    #[error("ERROR: Malformed tool call: {0}.")]
    Malformed(String),
}

fn call_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*([A-Za-z_][A-Za-z0-9_]*)\s*\(([^()]*)\)\s*$").unwrap())
}

fn number(v: &Value, key: &str) -> Result<f64, ToolCallError> {
    match v.get(key) {
        Some(Value::Number(n)) => n
            .as_f64()
            .ok_or_else(|| ToolCallError::Malformed(format!("argument {key} is not a number"))),
        Some(Value::String(s)) => s
            .trim()
            .parse()
            .map_err(|_| ToolCallError::Malformed(format!("argument {key} is not a number"))),
        Some(_) => Err(ToolCallError::Malformed(format!("argument {key} is not a number"))),
        None => Err(ToolCallError::Malformed(format!("missing argument {key}"))),
    }
}

fn spec_from_parts(name: &str, args: &Value) -> Result<ToolCallSpec, ToolCallError> {
    match name {
        "FrameAt" => Ok(ToolCallSpec::FrameAt { time: number(args, "time")? }),
        "VideoClip" => Ok(ToolCallSpec::VideoClip {
            t_start: number(args, "t_start")?,
            t_end: number(args, "t_end")?,
        }),
        other => Err(ToolCallError::UnknownTool(other.to_string())),
    }
}

fn parse_json_call(text: &str) -> Result<ToolCallSpec, ToolCallError> {
    let v: Value = serde_json::from_str(text)
        .map_err(|e| ToolCallError::Malformed(format!("invalid JSON ({e})")))?;
    let name = v
        .get("name")
        .and_then(Value::as_str)
        .ok_or_else(|| ToolCallError::Malformed("missing \"name\"".into()))?;
    let args = match v.get("arguments") {
        Some(Value::String(s)) => serde_json::from_str(s)
            .map_err(|e| ToolCallError::Malformed(format!("invalid arguments JSON ({e})")))?,
        Some(a @ Value::Object(_)) => a.clone(),
        Some(_) => return Err(ToolCallError::Malformed("\"arguments\" must be an object".into())),
        None => return Err(ToolCallError::Malformed("missing \"arguments\"".into())),
    };
    spec_from_parts(name, &args)
}

fn parse_function_call(text: &str) -> Result<ToolCallSpec, ToolCallError> {
    let caps = call_regex()
        .captures(text)
        .ok_or_else(|| ToolCallError::Malformed("expected Name(arg, ...)".into()))?;
    let name = &caps[1];
    let params: &[&str] = match name {
        "FrameAt" => &["time"],
        "VideoClip" => &["t_start", "t_end"],
        other => return Err(ToolCallError::UnknownTool(other.to_string())),
    };
    let raw_args: Vec<&str> = caps[2].split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if raw_args.len() != params.len() {
        return Err(ToolCallError::Malformed(format!(
            "{name} takes {} argument(s), got {}",
            params.len(),
            raw_args.len()
        )));
    }
    let mut args = serde_json::Map::new();
    for (param, raw) in params.iter().zip(raw_args) {
        // Accept both `FrameAt(12)` and `FrameAt(time=12)`.
        let value = match raw.split_once('=') {
            Some((k, v)) if k.trim() == *param => v.trim(),
            Some((k, _)) => {
                return Err(ToolCallError::Malformed(format!("unexpected argument {}", k.trim())))
            }
            None => raw,
        };
        args.insert((*param).to_string(), Value::String(value.to_string()));
    }
    spec_from_parts(name, &Value::Object(args))
}

/// Parses the content of a `<tool_call>` block: either the JSON object form
/// `{"name": ..., "arguments": {...}}` or the call form `VideoClip(15.5, 20.0)`.
pub fn parse_tool_call(raw: &str) -> Result<ToolCallSpec, ToolCallError> {
    let text = raw.trim();
    if text.is_empty() {
        return Err(ToolCallError::Malformed("empty tool call".into()));
    }
    if text.starts_with('{') {
        parse_json_call(text)
    } else {
        parse_function_call(text)
    }
}

/// Result of one tool execution.
#[derive(Debug, Clone, PartialEq)]
pub struct ToolResult {
    /// The tool that ran, when the call parsed far enough to know it.
    pub tool: Option<ToolName>,
    pub payload: Result<Vec<TimedFrame>, String>,
}

impl ToolResult {
    fn error(tool: Option<ToolName>, message: String) -> Self {
        ToolResult { tool, payload: Err(message) }
    }

    pub fn is_success(&self) -> bool {
        self.payload.is_ok()
    }

    pub fn frames(&self) -> &[TimedFrame] {
        match &self.payload {
            Ok(frames) => frames,
            Err(_) => &[],
        }
    }

    pub fn error_message(&self) -> Option<&str> {
        self.payload.as_ref().err().map(String::as_str)
    }

    /// Log form: `{timestamps, frame_refs}` or `{error}`.
    pub fn record(&self, video_id: &str) -> ToolResultRecord {
        match &self.payload {
            Ok(frames) => ToolResultRecord::Frames {
                timestamps: frames.iter().map(|f| f.timestamp).collect(),
                frame_refs: frames
                    .iter()
                    .map(|f| {
                        format!(
                            "{video_id}#{}@{}x{}",
                            f.frame.source_index,
                            f.frame.height(),
                            f.frame.width()
                        )
                    })
                    .collect(),
            },
            Err(e) => ToolResultRecord::Error { error: e.clone() },
        }
    }

    /// Text rendering placed inside a `<tool_response>` block.
    pub fn render(&self) -> String {
        match &self.payload {
            Ok(frames) => frames
                .iter()
                .map(|f| {
                    format!("<frame t={:.2}s {}x{}>", f.timestamp, f.frame.height(), f.frame.width())
                })
                .collect::<Vec<_>>()
                .join(" "),
            Err(e) => e.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ToolResultRecord {
    Frames { timestamps: Vec<f64>, frame_refs: Vec<String> },
    Error { error: String },
}

fn tool_frame(source: &VideoSource, index: usize, requested: f64) -> TimedFrame {
    TimedFrame {
        frame: resize(&source.frame(index), TOOL_RESOLUTION, TOOL_RESOLUTION),
        timestamp: requested,
    }
}

/// The frame nearest to `t`, at tool resolution.
pub fn frame_at(source: &VideoSource, t: f64) -> ToolResult {
    let tool = Some(ToolName::FrameAt);
    if !t.is_finite() || t < 0.0 || t > source.duration {
        return ToolResult::error(
            tool,
            format!("ERROR: Invalid timestamp. Video duration is {}s.", source.duration_label()),
        );
    }
    ToolResult { tool, payload: Ok(vec![tool_frame(source, source.nearest_index(t), t)]) }
}

/// Number of frames `video_clip` returns for a span.
pub fn clip_frame_count(span: f64) -> usize {
    let n = (CLIP_FRAMES_PER_SECOND * span).round();
    (n.max(0.0) as usize).clamp(CLIP_MIN_FRAMES, CLIP_MAX_FRAMES)
}

/// Uniform frames over `[t_start, t_end]`, both ends included.
pub fn video_clip(source: &VideoSource, t_start: f64, t_end: f64) -> ToolResult {
    let tool = Some(ToolName::VideoClip);
    let d = source.duration_label();
    let violation = if !t_start.is_finite() || !t_end.is_finite() {
        Some("t_start and t_end must be numbers")
    } else if t_start < 0.0 {
        Some("t_start must be non-negative")
    } else if t_end > source.duration {
        Some("t_end is past the end of the video")
    } else if t_end <= t_start {
        Some("t_end must be greater than t_start")
    } else {
        None
    };
    if let Some(v) = violation {
        return ToolResult::error(tool, format!("ERROR: Invalid timestamp. {v}. Video duration is {d}s."));
    }
    let n = clip_frame_count(t_end - t_start);
    let step = (t_end - t_start) / (n - 1) as f64;
    let frames = (0..n)
        .map(|i| {
            let t = if i == n - 1 { t_end } else { t_start + step * i as f64 };
            tool_frame(source, source.nearest_index(t), t)
        })
        .collect();
    ToolResult { tool, payload: Ok(frames) }
}

/// Runs a parsed call.
pub fn execute(call: &ToolCallSpec, source: &VideoSource) -> ToolResult {
    match *call {
        ToolCallSpec::FrameAt { time } => frame_at(source, time),
        ToolCallSpec::VideoClip { t_start, t_end } => video_clip(source, t_start, t_end),
    }
}

/// Parses and runs the raw content of a `<tool_call>` block.
pub fn execute_raw(raw: &str, source: &VideoSource) -> ToolResult {
    match parse_tool_call(raw) {
        Ok(call) => execute(&call, source),
        Err(e) => ToolResult::error(None, e.to_string()),
    }
}

/// On-disk description of a video: frames are PNG files relative to the
/// manifest's directory, in index order. Paths may repeat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub id: String,
    pub fps: f64,
    pub duration_seconds: f64,
    pub frames: Vec<String>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl VideoSource {
    /// Loads `dir/manifest.json`. Repeated frame paths share one decoded image.
    pub fn load_manifest(dir: &Path) -> Result<Self, VideoError> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|source| VideoError::Io { path: path.clone(), source })?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|source| VideoError::Manifest { path, source })?;
        let mut cache: HashMap<&str, Arc<RgbImage>> = HashMap::new();
        let mut images = Vec::with_capacity(manifest.frames.len());
        for rel in &manifest.frames {
            if let Some(img) = cache.get(rel.as_str()) {
                images.push(Arc::clone(img));
                continue;
            }
            let p = dir.join(rel);
            let img = image::open(&p)
                .map_err(|source| VideoError::Image { path: p.clone(), source })?
                .to_rgb8();
            let img = Arc::new(img);
            cache.insert(rel, Arc::clone(&img));
            images.push(img);
        }
        VideoSource::from_images(manifest.id, manifest.duration_seconds, manifest.fps, images)
    }

    /// Writes PNG frames and a manifest into `dir`. Frames sharing one image
    /// allocation are written once.
    pub fn export(&self, dir: &Path) -> Result<Manifest, VideoError> {
        fs::create_dir_all(dir).map_err(|source| VideoError::Io { path: dir.to_path_buf(), source })?;
        let mut written: Vec<(Arc<RgbImage>, String)> = Vec::new();
        let mut frames = Vec::with_capacity(self.frame_count);
        for i in 0..self.frame_count {
            let img = self.accessor.frame(i);
            if let Some((_, name)) = written.iter().find(|(w, _)| Arc::ptr_eq(w, &img)) {
                frames.push(name.clone());
                continue;
            }
            let name = format!("frame_{i:05}.png");
            let p = dir.join(&name);
            img.save(&p).map_err(|source| VideoError::Image { path: p, source })?;
            written.push((img, name.clone()));
            frames.push(name);
        }
        let manifest = Manifest {
            id: self.id.clone(),
            fps: self.fps,
            duration_seconds: self.duration,
            frames,
        };
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, text).map_err(|source| VideoError::Io { path, source })?;
        Ok(manifest)
    }
}
