//! A synthetic video-QA world small enough to train on a laptop.
//!
//! Each video is a static blank background until `t*`, after which a small
//! marker sits in one cell of a 4x4 grid. The marker's core colour is the
//! answer to the spatial question and `t*` the answer to the temporal one.
//! Presence is visible at any resolution; the colour is only legible in
//! frames at least [`LEGIBLE_PX`] pixels on each side.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::{Rgb, RgbImage};
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::drfs::{EvidenceOrigin, EvidenceSet};
use crate::grpo::Differentiable;
use crate::protocol::{parse_turn, TagKind};
use crate::reward::{Question, QuestionKind};
use crate::rollout::{Decision, Observation, Policy, PolicyError};
use crate::videotool::{parse_tool_call, Frame, ToolCallSpec, VideoError, VideoSource, TOOL_RESOLUTION};

pub const DEFAULT_DURATION: f64 = 60.0;
pub const DEFAULT_FPS: f64 = 1.0;
pub const GRID: u32 = 4;
pub const LEGIBLE_PX: u32 = 300;

pub const PALETTE: [(&str, [u8; 3]); 8] = [
    ("red", [220, 30, 30]),
    ("green", [30, 200, 60]),
    ("blue", [40, 70, 230]),
    ("yellow", [235, 220, 40]),
    ("cyan", [40, 220, 220]),
    ("magenta", [220, 40, 200]),
    ("orange", [245, 140, 20]),
    ("purple", [130, 50, 180]),
];
pub const PALETTE_SIZE: usize = PALETTE.len();

const BACKGROUND: [u8; 3] = [18, 18, 18];
const MARKER: [u8; 3] = [150, 150, 150];
const MARKER_HALF: i64 = 20;
const CORE_HALF: i64 = 6;

pub const TEMPORAL_QUESTION: &str =
    "When does the object first appear in the video? Answer with the time in whole seconds.";
pub const SPATIAL_QUESTION: &str = "What color is the object that appears in the video? Answer with one color name.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Square,
    Diamond,
    Disc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    /// Index into [`PALETTE`].
    pub color: usize,
    pub shape: Shape,
    /// Whole second at which the object appears.
    pub appear_time: u32,
    pub row: u32,
    pub col: u32,
}

impl Event {
    pub fn color_name(&self) -> &'static str {
        PALETTE[self.color].0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticVideo {
    pub id: String,
    pub seed: u64,
    pub duration: f64,
    pub fps: f64,
    pub event: Event,
}

fn render(event: Option<&Event>) -> RgbImage {
    let mut img = RgbImage::from_pixel(TOOL_RESOLUTION, TOOL_RESOLUTION, Rgb(BACKGROUND));
    let Some(ev) = event else {
        return img;
    };
    let cell = (TOOL_RESOLUTION / GRID) as i64;
    let (cx, cy) = (ev.col as i64 * cell + cell / 2, ev.row as i64 * cell + cell / 2);
    for dy in -MARKER_HALF..MARKER_HALF {
        for dx in -MARKER_HALF..MARKER_HALF {
            let inside = match ev.shape {
                Shape::Square => true,
                Shape::Diamond => dx.abs() + dy.abs() <= MARKER_HALF,
                Shape::Disc => dx * dx + dy * dy <= MARKER_HALF * MARKER_HALF,
            };
            if !inside {
                continue;
            }
            let core = dx.abs() <= CORE_HALF && dy.abs() <= CORE_HALF;
            let px = if core { PALETTE[ev.color].1 } else { MARKER };
            img.put_pixel((cx + dx) as u32, (cy + dy) as u32, Rgb(px));
        }
    }
    img
}

/// Deterministic in `seed`: a 60 s, 1 fps video whose object appears at a
/// whole second in `[0.1 D, 0.9 D]`.
pub fn gen_video(seed: u64) -> (SyntheticVideo, VideoSource) {
    gen_video_with(seed, DEFAULT_DURATION, DEFAULT_FPS)
}

pub fn gen_video_with(seed: u64, duration: f64, fps: f64) -> (SyntheticVideo, VideoSource) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lo = (0.1 * duration).ceil() as u32;
    let hi = (0.9 * duration).floor() as u32;
    let event = Event {
        color: rng.gen_range(0..PALETTE_SIZE),
        shape: [Shape::Square, Shape::Diamond, Shape::Disc][rng.gen_range(0..3)],
        appear_time: rng.gen_range(lo..=hi),
        row: rng.gen_range(0..GRID),
        col: rng.gen_range(0..GRID),
    };
    let video = SyntheticVideo { id: format!("toy-{seed:06}"), seed, duration, fps, event };
    let blank = Arc::new(render(None));
    let object = Arc::new(render(Some(&event)));
    let n = (duration * fps).floor() as usize;
    let frames = (0..n)
        .map(|i| {
            if (i as f64) / fps >= event.appear_time as f64 {
                Arc::clone(&object)
            } else {
                Arc::clone(&blank)
            }
        })
        .collect();
    let source = VideoSource::from_images(video.id.clone(), duration, fps, frames).expect("frame count matches");
    (video, source)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Temporal,
    Spatial,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Temporal => "temporal",
            TaskKind::Spatial => "spatial",
        }
    }

    /// Recovers the kind from question text.
    pub fn of_question(text: &str) -> TaskKind {
        if text.to_ascii_lowercase().contains("color") {
            TaskKind::Spatial
        } else {
            TaskKind::Temporal
        }
    }
}

/// One dataset record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    pub video_id: String,
    pub kind: TaskKind,
    pub question: String,
    pub gold: String,
    pub scoring: QuestionKind,
}

impl Task {
    pub fn to_question(&self) -> Question {
        Question { id: self.id.clone(), text: self.question.clone(), gold: self.gold.clone(), kind: self.scoring }
    }
}

pub fn oracle_answer(video: &SyntheticVideo, kind: TaskKind) -> String {
    match kind {
        TaskKind::Temporal => video.event.appear_time.to_string(),
        TaskKind::Spatial => video.event.color_name().to_string(),
    }
}

/// The temporal and the spatial task for a video.
pub fn tasks_for(video: &SyntheticVideo) -> [Task; 2] {
    [TaskKind::Temporal, TaskKind::Spatial].map(|kind| Task {
        id: format!("{}-{}", video.id, kind.as_str()),
        video_id: video.id.clone(),
        kind,
        question: match kind {
            TaskKind::Temporal => TEMPORAL_QUESTION.to_string(),
            TaskKind::Spatial => SPATIAL_QUESTION.to_string(),
        },
        gold: oracle_answer(video, kind),
        scoring: QuestionKind::ExactMatch,
    })
}

/// What one frame shows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameReading {
    pub nonblank: bool,
    /// Palette index, only when legible.
    pub color: Option<usize>,
}

fn nearest_palette(px: [u8; 3]) -> usize {
    let d = |c: [u8; 3]| (0..3).map(|i| (i32::from(c[i]) - i32::from(px[i])).pow(2)).sum::<i32>();
    (0..PALETTE_SIZE).min_by_key(|&i| d(PALETTE[i].1)).expect("palette is not empty")
}

/// Samples the centre of every grid cell.
pub fn read_frame(frame: &Frame) -> FrameReading {
    let (w, h) = (frame.width(), frame.height());
    let legible = w.min(h) >= LEGIBLE_PX;
    let mut reading = FrameReading { nonblank: false, color: None };
    for row in 0..GRID {
        for col in 0..GRID {
            let x = ((2 * col + 1) * w) / (2 * GRID);
            let y = ((2 * row + 1) * h) / (2 * GRID);
            let px = frame.pixels.get_pixel(x, y).0;
            if px != BACKGROUND {
                reading.nonblank = true;
                if legible && reading.color.is_none() {
                    reading.color = Some(nearest_palette(px));
                }
            }
        }
    }
    reading
}

/// Summary of what a set of frames reveals.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvidenceFeatures {
    pub frames: usize,
    pub max_resolution: u32,
    pub color_hist: [u32; PALETTE_SIZE],
    pub earliest_nonblank: Option<f64>,
    /// Latest blank timestamp before `earliest_nonblank`.
    pub latest_blank_before: Option<f64>,
}

impl EvidenceFeatures {
    pub fn color_known(&self) -> bool {
        self.color_hist.iter().any(|&c| c > 0)
    }

    /// Width of the bracket around the onset, when both ends were observed.
    pub fn onset_gap(&self) -> Option<f64> {
        Some(self.earliest_nonblank? - self.latest_blank_before?)
    }
}

pub fn perceive(evidence: &EvidenceSet) -> EvidenceFeatures {
    perceive_all(std::slice::from_ref(evidence))
}

/// Features of several evidence sets taken together. Timestamps are those
/// of the source frames actually shown.
pub fn perceive_all(sets: &[EvidenceSet]) -> EvidenceFeatures {
    let mut f = EvidenceFeatures::default();
    let mut blanks = Vec::new();
    for item in sets.iter().flat_map(|s| &s.items) {
        f.frames += 1;
        f.max_resolution = f.max_resolution.max(item.frame.height().min(item.frame.width()));
        let r = read_frame(&item.frame);
        let t = item.frame.timestamp;
        if r.nonblank {
            f.earliest_nonblank = Some(f.earliest_nonblank.map_or(t, |e: f64| e.min(t)));
            if let Some(c) = r.color {
                f.color_hist[c] += 1;
            }
        } else {
            blanks.push(t);
        }
    }
    if let Some(e) = f.earliest_nonblank {
        f.latest_blank_before = blanks.into_iter().filter(|&b| b < e).max_by(f64::total_cmp);
    }
    f
}

fn tenth(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

/// Evidence sets at the highest resolution present. Answers are read from
/// these alone.
pub fn highest_resolution(sets: &[EvidenceSet]) -> Vec<EvidenceSet> {
    let res = |s: &EvidenceSet| s.items.first().map_or(0, |i| i.frame.height().min(i.frame.width()));
    let top = sets.iter().map(res).max().unwrap_or(0);
    sets.iter().filter(|s| !s.is_empty() && res(s) == top).cloned().collect()
}

/// The answer a reader of `sets` gives: the onset second or the dominant
/// colour seen in the highest-resolution evidence. Falls back to mid-video
/// or the first palette colour when that evidence is silent.
pub fn read_answer(kind: TaskKind, sets: &[EvidenceSet], duration: f64) -> String {
    let f = perceive_all(&highest_resolution(sets));
    match kind {
        TaskKind::Temporal => format!("{}", f.earliest_nonblank.unwrap_or(duration / 2.0).round() as i64),
        TaskKind::Spatial => {
            let h = &f.color_hist;
            let c = (0..PALETTE_SIZE).max_by_key(|&c| (h[c], std::cmp::Reverse(c))).unwrap_or(0);
            PALETTE[c].0.to_string()
        }
    }
}

/// Per-turn action of the toy policy: a tool, a tool-free summary turn, or
/// the answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Action {
    FrameAt,
    VideoClip,
    /// A `FrameAt` and a `VideoClip` call in the same turn.
    Both,
    Reflect,
    Answer,
}

const ACTIONS: [Action; 5] = [Action::FrameAt, Action::VideoClip, Action::Both, Action::Reflect, Action::Answer];
const ACTION_FEATURES: usize = 6;
/// Task kinds; each has its own weights in every head.
const KINDS: usize = 2;
/// `FrameAt` targets: centres of this many equal bins.
pub const FRAME_BINS: usize = 16;
/// `VideoClip` windows span [`CLIP_SPAN`] of this many equal strides.
pub const CLIP_STRIDES: usize = 64;
pub const CLIP_SPAN: usize = 2;
pub const CLIP_WINDOWS: usize = CLIP_STRIDES - CLIP_SPAN + 1;
const TARGET_FEATURES: usize = 3;

/// Parameter layout of [`ToyPolicy`].
mod layout {
    use super::*;
    pub const ACTION: usize = 0;
    pub const FRAME: usize = ACTION + KINDS * ACTIONS.len() * ACTION_FEATURES;
    pub const CLIP: usize = FRAME + KINDS * TARGET_FEATURES;
    pub const LEN: usize = CLIP + KINDS * TARGET_FEATURES;
}

pub const TOY_PARAMS: usize = layout::LEN;

/// Which parameters feed one logit, with their coefficients.
type Logit = Vec<(usize, f64)>;

fn logits_value(params: &[f64], logits: &[Logit]) -> Vec<f64> {
    logits.iter().map(|l| l.iter().map(|&(i, c)| params[i] * c).sum()).collect()
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `log P(choice in chosen)` for one softmax head, accumulating its
/// gradient into `grad` when given.
fn head_log_prob(params: &[f64], logits: &[Logit], chosen: &[bool], grad: Option<&mut [f64]>) -> f64 {
    let p = softmax(&logits_value(params, logits));
    let mass: f64 = p.iter().zip(chosen).filter(|(_, &c)| c).map(|(p, _)| p).sum();
    if let Some(g) = grad {
        for (j, l) in logits.iter().enumerate() {
            let q = if chosen[j] { p[j] / mass } else { 0.0 };
            for &(i, c) in l {
                g[i] += (q - p[j]) * c;
            }
        }
    }
    mass.ln()
}

fn indicator(x: bool) -> f64 {
    f64::from(u8::from(x))
}

/// Everything the toy policy conditions on.
#[derive(Debug, Clone, PartialEq)]
struct Context {
    kind: TaskKind,
    turn: usize,
    duration: f64,
    /// All evidence in view.
    seen: EvidenceFeatures,
    /// Highest-resolution evidence only.
    sharp: EvidenceFeatures,
    has_tool_evidence: bool,
}

impl Context {
    fn of(obs: &Observation) -> Context {
        Context {
            kind: TaskKind::of_question(&obs.question),
            turn: obs.turn_index,
            duration: obs.duration,
            seen: perceive_all(&obs.evidence),
            sharp: perceive_all(&highest_resolution(&obs.evidence)),
            has_tool_evidence: obs.evidence.iter().any(|s| s.origin == EvidenceOrigin::Tool && !s.is_empty()),
        }
    }

    /// `(latest blank, earliest nonblank)` over everything seen.
    fn bracket(&self) -> (Option<f64>, Option<f64>) {
        (self.seen.latest_blank_before, self.seen.earliest_nonblank)
    }

    fn action_logits(&self) -> Vec<Logit> {
        let phi = [
            1.0,
            indicator(self.turn == 2),
            indicator(self.turn >= 3),
            indicator(self.sharp.earliest_nonblank.is_some()),
            indicator(self.sharp.color_known()),
            indicator(self.has_tool_evidence),
        ];
        (0..ACTIONS.len())
            .map(|a| (0..ACTION_FEATURES).map(|f| (action_param(self.kind, a, f), phi[f])).collect())
            .collect()
    }

    fn frame_candidates(&self) -> Vec<ToolCallSpec> {
        let d = self.duration;
        (0..FRAME_BINS)
            .map(|j| ToolCallSpec::FrameAt { time: tenth((j as f64 + 0.5) * d / FRAME_BINS as f64) })
            .collect()
    }

    /// Per target: after the onset, at or before the last blank, strictly
    /// inside the bracket.
    fn frame_logits(&self, cands: &[ToolCallSpec]) -> Vec<Logit> {
        let (b, e) = self.bracket();
        cands
            .iter()
            .map(|c| {
                let ToolCallSpec::FrameAt { time: t } = *c else { unreachable!("frame candidates") };
                let after = e.is_some_and(|e| t >= e);
                let before = b.is_some_and(|b| t <= b);
                let inside = !after && !before && e.is_some();
                target_logit(layout::FRAME, self.kind, [after, before, inside])
            })
            .collect()
    }

    fn clip_candidates(&self) -> Vec<ToolCallSpec> {
        let s = self.duration / CLIP_STRIDES as f64;
        (0..CLIP_WINDOWS)
            .map(|j| ToolCallSpec::VideoClip {
                t_start: tenth(j as f64 * s),
                t_end: tenth(((j + CLIP_SPAN) as f64 * s).min(self.duration)),
            })
            .collect()
    }

    /// Per window: holds the whole bracket, holds the first sighting,
    /// starts after it.
    fn clip_logits(&self, cands: &[ToolCallSpec]) -> Vec<Logit> {
        let (b, e) = self.bracket();
        cands
            .iter()
            .map(|c| {
                let ToolCallSpec::VideoClip { t_start, t_end } = *c else { unreachable!("clip candidates") };
                let holds_e = e.is_some_and(|e| t_start <= e && e <= t_end);
                let holds_bracket = holds_e && b.is_some_and(|b| t_start <= b);
                let after = e.is_some_and(|e| t_start > e);
                target_logit(layout::CLIP, self.kind, [holds_bracket, holds_e, after])
            })
            .collect()
    }
}

fn kind_index(kind: TaskKind) -> usize {
    match kind {
        TaskKind::Temporal => 0,
        TaskKind::Spatial => 1,
    }
}

fn action_param(kind: TaskKind, action: usize, feature: usize) -> usize {
    layout::ACTION + (kind_index(kind) * ACTIONS.len() + action) * ACTION_FEATURES + feature
}

fn target_logit(head: usize, kind: TaskKind, flags: [bool; TARGET_FEATURES]) -> Logit {
    let offset = head + kind_index(kind) * TARGET_FEATURES;
    flags.iter().enumerate().map(|(i, &f)| (offset + i, indicator(f))).collect()
}

fn observation_text(f: &EvidenceFeatures) -> String {
    let presence = match f.earliest_nonblank {
        Some(t) => format!("object visible from {t:.1}s"),
        None => "no object visible yet".to_string(),
    };
    let color = match (0..PALETTE_SIZE).filter(|&c| f.color_hist[c] > 0).max_by_key(|&c| f.color_hist[c]) {
        Some(c) => format!("color looks {}", PALETTE[c].0),
        None => "color not legible".to_string(),
    };
    format!("{presence}; {color}")
}

fn summary_turn(ctx: &Context, calls: &[ToolCallSpec]) -> String {
    let obs = observation_text(&ctx.seen);
    let (attempt, status, next) = if calls.is_empty() {
        ("review the frames already seen".to_string(), "partial_progress", "decide whether to answer")
    } else {
        let steps: Vec<String> = calls
            .iter()
            .map(|c| match c {
                ToolCallSpec::FrameAt { time } => format!("inspect the frame at {time:.1}s"),
                ToolCallSpec::VideoClip { t_start, t_end } => format!("scan {t_start:.1}s to {t_end:.1}s"),
            })
            .collect();
        (steps.join(" and "), "need_more_info", "read the new frames")
    };
    let sum = serde_json::json!({
        "name": "TurnSum",
        "arguments": {"attempt": attempt, "observation": obs, "status": status, "next_step": next}
    });
    let calls: String = calls.iter().map(|c| format!("<tool_call>\n{}\n</tool_call>\n", c.to_json())).collect();
    format!("<think>So far: {obs}. I will {attempt}.</think>\n{calls}<turn_sum>\n{sum}\n</turn_sum>")
}

fn answer_turn(ctx: &Context, answer: &str) -> String {
    format!(
        "<think>Sharpest evidence: {}. The answer is {answer}.</think>\n<answer>{answer}</answer>",
        observation_text(&ctx.sharp)
    )
}

fn mask<T: PartialEq>(candidates: &[T], chosen: &T) -> Vec<bool> {
    candidates.iter().map(|c| c == chosen).collect()
}

fn pick(probs: &[f64], greedy: bool, rng: &mut ChaCha8Rng) -> usize {
    if greedy {
        let mut best = 0;
        for (i, p) in probs.iter().enumerate() {
            if *p > probs[best] {
                best = i;
            }
        }
        best
    } else {
        WeightedIndex::new(probs).map_or(0, |w| w.sample(rng))
    }
}

/// A turn the toy policy could have produced, decoded.
enum Parsed {
    /// One call, or a `FrameAt` followed by a `VideoClip`.
    Calls(Vec<ToolCallSpec>),
    Reflect,
    Answer(String),
}

fn parse_own_turn(turn: &str) -> Result<Parsed, PolicyError> {
    let out = parse_turn(turn);
    let calls: Vec<&str> = out.tool_calls().collect();
    let unrecognized = || PolicyError::Unrecognized(turn.chars().take(120).collect());
    match (calls.as_slice(), out.answer(), out.has_turn_sum()) {
        ([], None, true) => Ok(Parsed::Reflect),
        (calls, None, true) if calls.len() <= 2 => {
            let specs = calls.iter().map(|c| parse_tool_call(c)).collect::<Result<Vec<_>, _>>().map_err(|_| unrecognized())?;
            match specs.as_slice() {
                [_] | [ToolCallSpec::FrameAt { .. }, ToolCallSpec::VideoClip { .. }] => Ok(Parsed::Calls(specs)),
                _ => Err(unrecognized()),
            }
        }
        ([], Some(a), false) => Ok(Parsed::Answer(a.trim().to_string())),
        _ => Err(unrecognized()),
    }
}

/// The trainable toy policy. A linear softmax head picks the turn's action
/// from perception features; two more pick tool arguments from fixed time
/// grids, scored by where each target sits relative to the object's
/// observed onset. Answers are read from the sharpest evidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPolicy {
    pub params: Vec<f64>,
    /// Take the most likely choice at every head instead of sampling.
    #[serde(default)]
    pub greedy: bool,
    /// Drop the first closing think tag; for testing format handling.
    #[serde(default)]
    pub inject_faults: bool,
}

impl Default for ToyPolicy {
    fn default() -> Self {
        ToyPolicy::new()
    }
}

/// Initial preference for answering over calling a tool. Training starts
/// from a policy that mostly answers straight away and rarely calls tools,
/// as an untuned model would.
pub const BASE_ANSWER_BIAS: f64 = 3.0;
/// Initial preference for a tool-free summary turn over calling a tool.
pub const BASE_REFLECT_BIAS: f64 = 2.0;

impl ToyPolicy {
    /// The untrained starting point: uniform tool arguments, answering and
    /// summary turns favoured by [`BASE_ANSWER_BIAS`] and
    /// [`BASE_REFLECT_BIAS`].
    pub fn new() -> Self {
        let mut p = ToyPolicy::uniform();
        for kind in [TaskKind::Temporal, TaskKind::Spatial] {
            p.params[action_param(kind, Action::Answer as usize, 0)] = BASE_ANSWER_BIAS;
            p.params[action_param(kind, Action::Reflect as usize, 0)] = BASE_REFLECT_BIAS;
        }
        p
    }

    /// All-zero parameters: uniform over every head.
    pub fn uniform() -> Self {
        ToyPolicy { params: vec![0.0; TOY_PARAMS], greedy: false, inject_faults: false }
    }

    pub fn with_params(params: Vec<f64>) -> Self {
        assert_eq!(params.len(), TOY_PARAMS, "toy policy has {TOY_PARAMS} parameters");
        ToyPolicy { params, greedy: false, inject_faults: false }
    }

    pub fn greedy(mut self) -> Self {
        self.greedy = true;
        self
    }

    fn decide(&self, ctx: &Context, obs: &Observation, rng: &mut ChaCha8Rng) -> String {
        let p = &self.params;
        let a = pick(&softmax(&logits_value(p, &ctx.action_logits())), self.greedy, rng);
        let frame = |rng: &mut ChaCha8Rng| {
            let c = ctx.frame_candidates();
            let j = pick(&softmax(&logits_value(p, &ctx.frame_logits(&c))), self.greedy, rng);
            c[j]
        };
        let clip = |rng: &mut ChaCha8Rng| {
            let c = ctx.clip_candidates();
            let j = pick(&softmax(&logits_value(p, &ctx.clip_logits(&c))), self.greedy, rng);
            c[j]
        };
        let text = match ACTIONS[a] {
            Action::FrameAt => summary_turn(ctx, &[frame(rng)]),
            Action::VideoClip => summary_turn(ctx, &[clip(rng)]),
            Action::Both => {
                let f = frame(rng);
                summary_turn(ctx, &[f, clip(rng)])
            }
            Action::Reflect => summary_turn(ctx, &[]),
            Action::Answer => answer_turn(ctx, &read_answer(ctx.kind, &obs.evidence, ctx.duration)),
        };
        if self.inject_faults {
            text.replacen(TagKind::Think.close_tag(), "", 1)
        } else {
            text
        }
    }

    fn decisions(
        &self,
        obs: &Observation,
        turn: &str,
        mut grad: Option<&mut Vec<Vec<f64>>>,
    ) -> Result<Vec<Decision>, PolicyError> {
        let ctx = Context::of(obs);
        let p = &self.params;
        let parsed = parse_own_turn(turn)?;
        let unrecognized = || PolicyError::Unrecognized(turn.chars().take(120).collect());
        let action = match &parsed {
            Parsed::Calls(c) if c.len() == 2 => Action::Both,
            Parsed::Calls(c) => match c[0] {
                ToolCallSpec::FrameAt { .. } => Action::FrameAt,
                ToolCallSpec::VideoClip { .. } => Action::VideoClip,
            },
            Parsed::Reflect => Action::Reflect,
            Parsed::Answer(a) => {
                if *a != read_answer(ctx.kind, &obs.evidence, ctx.duration) {
                    return Err(unrecognized());
                }
                Action::Answer
            }
        };
        let mut heads = vec![("action", ctx.action_logits(), mask(&ACTIONS, &action))];
        if let Parsed::Calls(calls) = &parsed {
            for spec in calls {
                match spec {
                    ToolCallSpec::FrameAt { .. } => {
                        let c = ctx.frame_candidates();
                        heads.push(("frame_time", ctx.frame_logits(&c), mask(&c, spec)));
                    }
                    ToolCallSpec::VideoClip { .. } => {
                        let c = ctx.clip_candidates();
                        heads.push(("clip_window", ctx.clip_logits(&c), mask(&c, spec)));
                    }
                }
            }
        }
        let mut out = Vec::with_capacity(heads.len());
        for (label, logits, chosen) in heads {
            if !chosen.iter().any(|&c| c) {
                return Err(unrecognized());
            }
            let lp = match grad.as_deref_mut() {
                Some(g) => {
                    let mut gi = vec![0.0; TOY_PARAMS];
                    let lp = head_log_prob(p, &logits, &chosen, Some(&mut gi));
                    g.push(gi);
                    lp
                }
                None => head_log_prob(p, &logits, &chosen, None),
            };
            out.push(Decision { label: label.to_string(), log_prob: lp });
        }
        Ok(out)
    }
}

impl Policy for ToyPolicy {
    fn act(&self, obs: &Observation, seed: u64) -> Result<String, PolicyError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(self.decide(&Context::of(obs), obs, &mut rng))
    }

    fn log_prob(&self, obs: &Observation, turn: &str) -> Result<Vec<Decision>, PolicyError> {
        self.decisions(obs, turn, None)
    }
}

impl Differentiable for ToyPolicy {
    fn params(&self) -> &[f64] {
        &self.params
    }

    fn set_params(&mut self, params: &[f64]) {
        self.params.copy_from_slice(params);
    }

    fn log_prob_grad(&self, obs: &Observation, turn: &str) -> Result<Vec<(f64, Vec<f64>)>, PolicyError> {
        let mut grads = Vec::new();
        let d = self.decisions(obs, turn, Some(&mut grads))?;
        Ok(d.into_iter().map(|d| d.log_prob).zip(grads).collect())
    }
}

/// Fixed-behaviour policies used as protocol and reward fixtures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptedPolicy {
    /// One turn: answers from the initial frames.
    ImmediateAnswer,
    /// A `FrameAt` call at mid-video every turn; never answers.
    AlwaysCap,
    /// `FrameAt` near the end, then a `VideoClip` over the onset bracket,
    /// then the answer.
    BothToolsThenAnswer,
    /// An unclosed think block followed by an answer.
    MalformedOutput,
}

impl ScriptedPolicy {
    pub const ALL: [ScriptedPolicy; 4] = [
        ScriptedPolicy::ImmediateAnswer,
        ScriptedPolicy::AlwaysCap,
        ScriptedPolicy::BothToolsThenAnswer,
        ScriptedPolicy::MalformedOutput,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScriptedPolicy::ImmediateAnswer => "immediate_answer",
            ScriptedPolicy::AlwaysCap => "always_cap",
            ScriptedPolicy::BothToolsThenAnswer => "both_tools_then_answer",
            ScriptedPolicy::MalformedOutput => "malformed_output",
        }
    }
}

pub fn scripted_policies() -> Vec<ScriptedPolicy> {
    ScriptedPolicy::ALL.to_vec()
}

impl Policy for ScriptedPolicy {
    fn act(&self, obs: &Observation, _seed: u64) -> Result<String, PolicyError> {
        let ctx = Context::of(obs);
        let d = ctx.duration;
        let answer = || read_answer(ctx.kind, &obs.evidence, d);
        Ok(match self {
            ScriptedPolicy::ImmediateAnswer => answer_turn(&ctx, &answer()),
            ScriptedPolicy::AlwaysCap => summary_turn(&ctx, &[ToolCallSpec::FrameAt { time: tenth(d / 2.0) }]),
            ScriptedPolicy::BothToolsThenAnswer => match obs.turn_index {
                1 => summary_turn(&ctx, &[ToolCallSpec::FrameAt { time: tenth(0.95 * d) }]),
                2 => {
                    let (b, e) = ctx.bracket();
                    let clip = ToolCallSpec::VideoClip { t_start: b.unwrap_or(0.0), t_end: e.unwrap_or(d) };
                    summary_turn(&ctx, &[clip])
                }
                _ => answer_turn(&ctx, &answer()),
            },
            ScriptedPolicy::MalformedOutput => {
                format!("<think>{}\n<answer>{}</answer>", observation_text(&ctx.seen), answer())
            }
        })
    }

    fn log_prob(&self, obs: &Observation, turn: &str) -> Result<Vec<Decision>, PolicyError> {
        let expected = self.act(obs, 0)?;
        let lp = if expected == turn { 0.0 } else { f64::NEG_INFINITY };
        Ok(vec![Decision { label: "script".into(), log_prob: lp }])
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Video(#[from] VideoError),
    #[error("io {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {source}")]
    Record { path: PathBuf, line: usize, source: serde_json::Error },
    #[error("task {task} refers to unknown video {video}")]
    MissingVideo { task: String, video: String },
}

pub const TASKS_FILE: &str = "tasks.jsonl";
pub const VIDEOS_FILE: &str = "videos.jsonl";
pub const VIDEOS_DIR: &str = "videos";

/// Tasks with their videos, in file order.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub tasks: Vec<Task>,
    pub sources: BTreeMap<String, VideoSource>,
}

impl Dataset {
    /// `count` consecutive seeds starting at `seed`, two tasks per video.
    /// `count` videos of `duration` seconds at one frame per second, seeded
    /// `seed, seed + 1, ...`, with both task kinds for each.
    pub fn generate(count: usize, seed: u64, duration: f64) -> (Dataset, Vec<SyntheticVideo>) {
        let mut tasks = Vec::with_capacity(2 * count);
        let mut sources = BTreeMap::new();
        let mut videos = Vec::with_capacity(count);
        for i in 0..count as u64 {
            let (video, source) = gen_video_with(seed.wrapping_add(i), duration, DEFAULT_FPS);
            tasks.extend(tasks_for(&video));
            sources.insert(video.id.clone(), source);
            videos.push(video);
        }
        (Dataset { tasks, sources }, videos)
    }

    pub fn source(&self, task: &Task) -> &VideoSource {
        &self.sources[&task.video_id]
    }

    /// Writes `videos/<id>/manifest.json` with frames, `videos.jsonl` and
    /// `tasks.jsonl`.
    pub fn export(&self, videos: &[SyntheticVideo], dir: &Path) -> Result<(), DatasetError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| DatasetError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        for (id, source) in &self.sources {
            source.export(&dir.join(VIDEOS_DIR).join(id))?;
        }
        let write_lines = |name: &str, lines: Vec<String>| -> Result<(), DatasetError> {
            let path = dir.join(name);
            let mut f = fs::File::create(&path).map_err(io(&path))?;
            for l in lines {
                writeln!(f, "{l}").map_err(io(&path))?;
            }
            Ok(())
        };
        write_lines(VIDEOS_FILE, videos.iter().map(json_line).collect())?;
        write_lines(TASKS_FILE, self.tasks.iter().map(json_line).collect())?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Dataset, DatasetError> {
        let path = dir.join(TASKS_FILE);
        let file = fs::File::open(&path).map_err(|source| DatasetError::Io { path: path.clone(), source })?;
        let mut tasks = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|source| DatasetError::Io { path: path.clone(), source })?;
            if line.trim().is_empty() {
                continue;
            }
            let task: Task = serde_json::from_str(&line)
                .map_err(|source| DatasetError::Record { path: path.clone(), line: i + 1, source })?;
            tasks.push(task);
        }
        let mut sources = BTreeMap::new();
        for task in &tasks {
            if !sources.contains_key(&task.video_id) {
                let vdir = dir.join(VIDEOS_DIR).join(&task.video_id);
                if !vdir.join(crate::videotool::MANIFEST_FILE).exists() {
                    return Err(DatasetError::MissingVideo { task: task.id.clone(), video: task.video_id.clone() });
                }
                sources.insert(task.video_id.clone(), VideoSource::load_manifest(&vdir)?);
            }
        }
        Ok(Dataset { tasks, sources })
    }
}

fn json_line<T: Serialize>(record: &T) -> String {
    serde_json::to_string(record).expect("record serializes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drfs::{build_ladder, initial_evidence, EvidenceOrigin, LadderEndpoints, SamplingConfig};
    use crate::grpo::Differentiable;
    use crate::protocol::check_format;
    use crate::reward::{score_accuracy, total_reward, RewardConfig, StubJudge};
    use crate::rollout::run_rollout;
    use crate::videotool::{frame_at, resize};

    fn seed_with_onset(t: u32) -> u64 {
        (0..).find(|&s| gen_video(s).0.event.appear_time == t).unwrap()
    }

    #[test]
    fn generation_is_deterministic() {
        let (a, sa) = gen_video(0);
        let (b, sb) = gen_video(0);
        assert_eq!(a, b);
        for i in 0..sa.frame_count() {
            assert_eq!(*sa.frame(i).pixels, *sb.frame(i).pixels);
        }
    }

    #[test]
    fn frames_switch_at_onset() {
        let s = seed_with_onset(37);
        let (_, src) = gen_video(s);
        let blank = render(None);
        for i in 0..60 {
            assert_eq!(*src.frame(i).pixels == blank, i < 37, "frame {i}");
        }
    }

    #[test]
    fn onset_within_bounds() {
        for s in 0..1000 {
            let t = gen_video(s).0.event.appear_time;
            assert!((6..=54).contains(&t), "seed {s}: {t}");
        }
    }

    #[test]
    fn oracle_answers_score() {
        let judge = StubJudge::default();
        for s in 0..50 {
            let (v, _) = gen_video(s);
            for t in tasks_for(&v) {
                assert_eq!(t.gold, oracle_answer(&v, t.kind));
                assert_eq!(score_accuracy(Some(&t.gold), &t.to_question(), &judge, 1.0), 1);
            }
        }
    }

    #[test]
    fn legibility_threshold() {
        let (v, src) = gen_video(seed_with_onset(20));
        let ev = |frame: Frame, t: f64| EvidenceSet {
            items: vec![crate::videotool::TimedFrame { frame, timestamp: t }],
            origin: EvidenceOrigin::Tool,
        };
        let blank = perceive(&ev(src.frame(3), 3.0));
        assert!(!blank.color_known() && blank.earliest_nonblank.is_none());

        let low = perceive(&ev(resize(&src.frame(30), 224, 224), 30.0));
        assert_eq!(low.earliest_nonblank, Some(30.0));
        assert!(!low.color_known());

        let r = frame_at(&src, 40.0);
        let high = perceive(&ev(r.frames()[0].frame.clone(), 40.0));
        assert_eq!(high.color_hist[v.event.color], 1);
        assert_eq!(high.color_hist.iter().sum::<u32>(), 1);

        let just = perceive(&ev(resize(&src.frame(30), 300, 300), 30.0));
        assert!(just.color_known());
        let below = perceive(&ev(resize(&src.frame(30), 299, 448), 30.0));
        assert!(!below.color_known());
    }

    #[test]
    fn every_cell_and_colour_reads_back() {
        for color in 0..PALETTE_SIZE {
            for (row, col) in [(0, 0), (1, 3), (3, 2)] {
                for shape in [Shape::Square, Shape::Diamond, Shape::Disc] {
                    let ev = Event { color, shape, appear_time: 10, row, col };
                    let img = Arc::new(render(Some(&ev)));
                    let f = Frame { pixels: img, timestamp: 0.0, source_index: 0 };
                    assert_eq!(read_frame(&f).color, Some(color));
                    for size in [224, 256, 320] {
                        assert!(read_frame(&resize(&f, size, size)).nonblank);
                    }
                }
            }
        }
    }

    fn rollout_with(policy: &dyn Policy, seed: u64, kind: TaskKind, rung: SamplingConfig) -> crate::rollout::Trajectory {
        let (v, src) = gen_video(seed);
        let task = tasks_for(&v).into_iter().find(|t| t.kind == kind).unwrap();
        let mut t = run_rollout(policy, &src, &task.to_question(), &rung, 3, seed);
        let cfg = RewardConfig { numeric_tolerance: 1.0, ..RewardConfig::default() };
        t.reward = Some(total_reward(&t, &cfg, &StubJudge::default()));
        t
    }

    fn rung(g: usize) -> SamplingConfig {
        build_ladder(&LadderEndpoints::default(), 8).unwrap()[g - 1]
    }

    #[test]
    fn scripted_fixtures() {
        for s in 0..10 {
            for kind in [TaskKind::Temporal, TaskKind::Spatial] {
                let t = rollout_with(&ScriptedPolicy::BothToolsThenAnswer, s, kind, rung(1));
                let r = t.reward.unwrap();
                assert_eq!(r.tool_score, 1.2);
                assert_eq!((r.acc, r.total), (1.0, 2.7), "seed {s} {kind:?}: {:?}", t.final_answer);

                let t = rollout_with(&ScriptedPolicy::AlwaysCap, s, kind, rung(1));
                assert_eq!(t.turns.len(), 3);
                assert_eq!(t.final_answer, None);
                assert_eq!(t.reward.unwrap().acc, 0.0);

                let t = rollout_with(&ScriptedPolicy::MalformedOutput, s, kind, rung(1));
                assert_eq!(t.reward.unwrap().format, -1.0);

                let t = rollout_with(&ScriptedPolicy::ImmediateAnswer, s, kind, rung(1));
                assert_eq!(t.turns.len(), 1);
                assert_eq!(t.reward.unwrap().format, 0.0);
            }
        }
    }

    #[test]
    fn toy_policy_emits_valid_turns_and_scores_them() {
        let policy = ToyPolicy::uniform();
        for s in 0..40 {
            let kind = if s % 2 == 0 { TaskKind::Temporal } else { TaskKind::Spatial };
            let t = rollout_with(&policy, s, kind, rung(1 + (s as usize % 8)));
            for turn in &t.turns {
                assert!(!turn.output.is_malformed(), "{}", turn.output.raw);
                let d = policy.log_prob(&turn.observation, &turn.output.raw).unwrap();
                assert_eq!(d[0].label, "action");
                assert!((d[0].log_prob + (ACTIONS.len() as f64).ln()).abs() < 1e-12);
                assert_eq!(d.len() - 1, turn.output.tool_calls().count());
                for d in &d[1..] {
                    let n = match d.label.as_str() {
                        "frame_time" => FRAME_BINS,
                        "clip_window" => CLIP_WINDOWS,
                        other => panic!("unexpected head {other}"),
                    };
                    assert!((d.log_prob + (n as f64).ln()).abs() < 1e-12);
                }
                assert!(d.iter().all(|d| d.log_prob <= 0.0 && d.log_prob.is_finite()));
            }
            if t.final_answer.is_some() {
                assert!(check_format(&t.response_text()).valid);
            }
        }
    }

    #[test]
    fn fault_injection_breaks_format() {
        let policy = ToyPolicy { inject_faults: true, ..ToyPolicy::new() };
        let t = rollout_with(&policy, 3, TaskKind::Spatial, rung(8));
        assert!(t.turns[0].output.is_malformed());
        assert!(policy.log_prob(&t.turns[0].observation, &t.turns[0].output.raw).is_ok());
    }

    #[test]
    fn log_prob_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let base = ToyPolicy::with_params((0..TOY_PARAMS).map(|_| rng.gen_range(-1.0..1.0)).collect());
        for s in 0..12 {
            let kind = if s % 2 == 0 { TaskKind::Temporal } else { TaskKind::Spatial };
            let t = rollout_with(&base, s, kind, rung(1 + (s as usize * 3) % 8));
            for turn in &t.turns {
                let g = base.log_prob_grad(&turn.observation, &turn.output.raw).unwrap();
                for i in 0..TOY_PARAMS {
                    let lp = |delta: f64| {
                        let mut p = base.clone();
                        p.params[i] += delta;
                        p.log_prob(&turn.observation, &turn.output.raw).unwrap()
                    };
                    let (plus, minus) = (lp(1e-6), lp(-1e-6));
                    for (k, (_, grad)) in g.iter().enumerate() {
                        let fd = (plus[k].log_prob - minus[k].log_prob) / 2e-6;
                        assert!((fd - grad[i]).abs() < 1e-6, "param {i} decision {k}: {fd} vs {}", grad[i]);
                    }
                }
            }
        }
    }

    #[test]
    fn colour_needs_high_resolution_initial_frames() {
        let (v, src) = gen_video(5);
        let low = perceive(&initial_evidence(&src, &rung(1)));
        assert!(!low.color_known());
        assert!(low.earliest_nonblank.is_some());
        let high = perceive(&initial_evidence(&src, &rung(8)));
        assert!(high.color_hist[v.event.color] > 0);
    }

    #[test]
    fn dataset_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let (ds, videos) = Dataset::generate(3, 9, DEFAULT_DURATION);
        ds.export(&videos, dir.path()).unwrap();
        let back = Dataset::load(dir.path()).unwrap();
        assert_eq!(back.tasks, ds.tasks);
        assert_eq!(back.tasks.len(), 6);
        for (id, src) in &ds.sources {
            let b = &back.sources[id];
            assert_eq!(b.frame_count(), src.frame_count());
            for i in [0, 30, 59] {
                assert_eq!(*b.frame(i).pixels, *src.frame(i).pixels);
            }
        }
        let pngs = fs::read_dir(dir.path().join(VIDEOS_DIR).join(&videos[0].id)).unwrap().count();
        assert_eq!(pngs, 3, "two distinct frames plus the manifest");
    }
}
