//! The frame-interleaved tag grammar spoken between a policy and the harness.
//!
//! A policy turn is plain text made of flat, non-nesting tag blocks:
//!
//! ```text
//! <think>...</think> (<tool_call>...</tool_call>){0,3} <turn_sum>...</turn_sum>
//! <think>...</think> <answer>...</answer>
//! ```
//!
//! Tags are matched literally and case-sensitively. Malformed input is never
//! an error here; it is reported as data on [`TurnOutput`] and
//! [`FormatVerdict`] so the reward and the loop controller can act on it.

use serde::{Deserialize, Serialize};

/// Maximum number of `<tool_call>` blocks honoured in a single turn.
pub const MAX_TOOL_CALLS_PER_TURN: usize = 3;

/// Default hard cap on the number of turns in one trajectory.
pub const DEFAULT_MAX_TURNS: usize = 3;

/// The tag vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TagKind {
    Think,
    ToolCall,
    TurnSum,
    Answer,
    ToolResponse,
}

impl TagKind {
    pub const ALL: [TagKind; 5] = [
        TagKind::Think,
        TagKind::ToolCall,
        TagKind::TurnSum,
        TagKind::Answer,
        TagKind::ToolResponse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TagKind::Think => "think",
            TagKind::ToolCall => "tool_call",
            TagKind::TurnSum => "turn_sum",
            TagKind::Answer => "answer",
            TagKind::ToolResponse => "tool_response",
        }
    }

    pub fn open_tag(self) -> &'static str {
        match self {
            TagKind::Think => "<think>",
            TagKind::ToolCall => "<tool_call>",
            TagKind::TurnSum => "<turn_sum>",
            TagKind::Answer => "<answer>",
            TagKind::ToolResponse => "<tool_response>",
        }
    }

    pub fn close_tag(self) -> &'static str {
        match self {
            TagKind::Think => "</think>",
            TagKind::ToolCall => "</tool_call>",
            TagKind::TurnSum => "</turn_sum>",
            TagKind::Answer => "</answer>",
            TagKind::ToolResponse => "</tool_response>",
        }
    }

    /// Wraps `content` in this kind's tags.
    pub fn wrap(self, content: &str) -> String {
        format!("{}{}{}", self.open_tag(), content, self.close_tag())
    }
}

/// One closed tag pair. `span` covers the opening tag through the closing tag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagBlock {
    pub kind: TagKind,
    pub content: String,
    pub span: (usize, usize),
}

/// Why a turn was flagged malformed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "issue")]
pub enum Malformation {
    /// An opening tag with no matching close.
    Unclosed { kind: TagKind, at: usize },
    /// An opening tag re-opened before it closed.
    Nested { kind: TagKind, at: usize },
    /// A closed block whose content contains other vocabulary tags.
    Interleaved { kind: TagKind, at: usize },
    /// A closing tag with no opening partner.
    StrayClose { kind: TagKind, at: usize },
    /// More than [`MAX_TOOL_CALLS_PER_TURN`] tool calls; the extras were dropped.
    TooManyToolCalls { dropped: usize },
    /// Both a `<turn_sum>` and an `<answer>` appeared.
    SummaryAndAnswer,
    /// No `<think>` block at all.
    MissingThink,
}

/// A parsed policy turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnOutput {
    pub blocks: Vec<TagBlock>,
    /// Contents of all think blocks, newline-joined.
    pub thought: String,
    pub raw: String,
    pub issues: Vec<Malformation>,
}

impl TurnOutput {
    pub fn is_malformed(&self) -> bool {
        !self.issues.is_empty()
    }

    pub fn blocks_of(&self, kind: TagKind) -> impl Iterator<Item = &TagBlock> {
        self.blocks.iter().filter(move |b| b.kind == kind)
    }

    pub fn tool_calls(&self) -> impl Iterator<Item = &str> {
        self.blocks_of(TagKind::ToolCall).map(|b| b.content.as_str())
    }

    /// First closed answer block, if any.
    pub fn answer(&self) -> Option<&str> {
        self.blocks_of(TagKind::Answer).next().map(|b| b.content.as_str())
    }

    pub fn has_turn_sum(&self) -> bool {
        self.blocks_of(TagKind::TurnSum).next().is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormatVerdict {
    pub valid: bool,
    /// `0` when valid, `-1` otherwise.
    pub penalty: i32,
    pub violation: Option<String>,
}

impl FormatVerdict {
    fn ok() -> Self {
        FormatVerdict { valid: true, penalty: 0, violation: None }
    }

    fn fail(reason: impl Into<String>) -> Self {
        FormatVerdict { valid: false, penalty: -1, violation: Some(reason.into()) }
    }
}

/// Loop-control decision after a turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Transition {
    Continue,
    StopWithAnswer(String),
    /// Stop without a usable answer: the cap was hit or the turn neither
    /// summarised nor answered.
    StopAtCap,
}

/// Earliest opening tag at or after `from`.
fn next_open(raw: &str, from: usize) -> Option<(usize, TagKind)> {
    TagKind::ALL
        .iter()
        .filter_map(|&k| raw[from..].find(k.open_tag()).map(|i| (from + i, k)))
        .min_by_key(|&(i, _)| i)
}

fn stray_closes(gap: &str, offset: usize, issues: &mut Vec<Malformation>) {
    for kind in TagKind::ALL {
        for (i, _) in gap.match_indices(kind.close_tag()) {
            issues.push(Malformation::StrayClose { kind, at: offset + i });
        }
    }
}

fn contains_any_tag(s: &str) -> bool {
    TagKind::ALL
        .iter()
        .any(|k| s.contains(k.open_tag()) || s.contains(k.close_tag()))
}

/// Scans `raw` for closed tag blocks. Never fails.
pub fn parse_turn(raw: &str) -> TurnOutput {
    let mut blocks = Vec::new();
    let mut issues = Vec::new();
    let mut pos = 0;
    let mut gap_start = 0;

    while let Some((open_at, kind)) = next_open(raw, pos) {
        let content_start = open_at + kind.open_tag().len();
        let Some(rel_close) = raw[content_start..].find(kind.close_tag()) else {
            issues.push(Malformation::Unclosed { kind, at: open_at });
            pos = content_start;
            continue;
        };
        let content_end = content_start + rel_close;
        let content = &raw[content_start..content_end];
        if content.contains(kind.open_tag()) {
            // Re-scan from just inside so the inner pair can still close.
            issues.push(Malformation::Nested { kind, at: open_at });
            pos = content_start;
            continue;
        }
        stray_closes(&raw[gap_start..open_at], gap_start, &mut issues);
        if contains_any_tag(content) {
            issues.push(Malformation::Interleaved { kind, at: open_at });
        }
        let end = content_end + kind.close_tag().len();
        blocks.push(TagBlock { kind, content: content.to_string(), span: (open_at, end) });
        pos = end;
        gap_start = end;
    }
    stray_closes(&raw[gap_start..], gap_start, &mut issues);

    let mut seen_calls = 0;
    let mut dropped = 0;
    blocks.retain(|b| {
        if b.kind != TagKind::ToolCall {
            return true;
        }
        seen_calls += 1;
        if seen_calls > MAX_TOOL_CALLS_PER_TURN {
            dropped += 1;
            false
        } else {
            true
        }
    });
    if dropped > 0 {
        issues.push(Malformation::TooManyToolCalls { dropped });
    }

    let thoughts: Vec<&str> = blocks
        .iter()
        .filter(|b| b.kind == TagKind::Think)
        .map(|b| b.content.as_str())
        .collect();
    if thoughts.is_empty() {
        issues.push(Malformation::MissingThink);
    }
    let has_sum = blocks.iter().any(|b| b.kind == TagKind::TurnSum);
    let has_answer = blocks.iter().any(|b| b.kind == TagKind::Answer);
    if has_sum && has_answer {
        issues.push(Malformation::SummaryAndAnswer);
    }

    TurnOutput { thought: thoughts.join("\n"), blocks, raw: raw.to_string(), issues }
}

/// Checks a whole trajectory response: every `<think>` closed, exactly one
/// `<answer>` which is closed, and only whitespace after it.
pub fn check_format(full_response: &str) -> FormatVerdict {
    let parsed = parse_turn(full_response);

    let think_opens = full_response.matches(TagKind::Think.open_tag()).count();
    let think_blocks = parsed.blocks_of(TagKind::Think).count();
    if think_opens != think_blocks {
        return FormatVerdict::fail("unclosed <think> block");
    }

    let answer_opens = full_response.matches(TagKind::Answer.open_tag()).count();
    let answers: Vec<&TagBlock> = parsed.blocks_of(TagKind::Answer).collect();
    match (answer_opens, answers.len()) {
        (0, _) => return FormatVerdict::fail("no <answer> block"),
        (1, 1) => {}
        (1, 0) => return FormatVerdict::fail("unclosed <answer> block"),
        _ => return FormatVerdict::fail("more than one <answer> block"),
    }

    let tail = &full_response[answers[0].span.1..];
    if !tail.trim().is_empty() {
        return FormatVerdict::fail("content after </answer>");
    }
    FormatVerdict::ok()
}

/// Decides what happens after turn `turn_index` (1-based).
pub fn decide_transition(turn: &TurnOutput, turn_index: usize, max_turns: usize) -> Transition {
    if turn.answer().is_some() {
        // A closed answer always stops the loop, even an empty one.
        return match turn.answer().map(str::trim) {
            Some(a) if !a.is_empty() => Transition::StopWithAnswer(a.to_string()),
            _ => Transition::StopAtCap,
        };
    }
    if turn.has_turn_sum() && turn_index < max_turns {
        Transition::Continue
    } else {
        Transition::StopAtCap
    }
}

/// Number of closed `<turn_sum>` blocks in a response.
pub fn count_turn_sums(trajectory_text: &str) -> usize {
    parse_turn(trajectory_text).blocks_of(TagKind::TurnSum).count()
}
