//! Trajectory rewards: accuracy, format, goal-gated tool use, and turn
//! efficiency, summed into one scalar.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::protocol::{check_format, count_turn_sums};
use crate::rollout::Trajectory;
use crate::videotool::ToolName;

/// The judge instructions, byte-for-byte.
pub const JUDGE_PROMPT: &str = include_str!("../assets/judge_prompt.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionKind {
    ExactMatch,
    OpenEnded,
}

/// A question with its reference answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub text: String,
    pub gold: String,
    pub kind: QuestionKind,
}

/// Reward constants. Defaults are the published ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub turn_bonus: f64,
    pub single_tool_score: f64,
    pub synergy_tool_score: f64,
    /// Fraction of the tool score paid regardless of correctness.
    pub gating_base: f64,
    /// Drop the unconditional part: `R_tool = s_tool * R_acc`.
    pub strict_gating: bool,
    /// Exact-match answers that both parse as numbers match within this.
    pub numeric_tolerance: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            turn_bonus: 0.5,
            single_tool_score: 1.0,
            synergy_tool_score: 1.2,
            gating_base: 0.2,
            strict_gating: false,
            numeric_tolerance: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub acc: f64,
    pub format: f64,
    pub tool: f64,
    pub turn: f64,
    pub total: f64,
    pub tool_score: f64,
    pub turn_sums: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeRequest {
    pub question: String,
    pub standard_answer: String,
    pub model_answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub judgement: u8,
    pub raw: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum JudgeError {
    #[error("judge transport failed: {0}")]
    Transport(String),
    #[error("judge reply has no Judgement line: {0:?}")]
    Unparsable(String),
}

/// A scorer for open-ended answers. Implementations must tolerate
/// concurrent calls.
pub trait JudgeClient: Send + Sync {
    /// Sends the rendered prompt and returns the judge's raw reply.
    fn complete(&self, prompt: &str, request: &JudgeRequest) -> Result<String, JudgeError>;

    fn judge(&self, request: &JudgeRequest) -> Result<JudgeVerdict, JudgeError> {
        let raw = self.complete(&render_judge_prompt(request), request)?;
        let judgement = parse_judgement(&raw)?;
        Ok(JudgeVerdict { judgement, raw })
    }
}

/// The judge prompt followed by the three labelled fields.
pub fn render_judge_prompt(req: &JudgeRequest) -> String {
    format!(
        "{JUDGE_PROMPT}\n[Question]: {}\n[Standard Answer]: {}\n[Model_answer]: {}\n",
        req.question, req.standard_answer, req.model_answer
    )
}

pub fn parse_judgement(reply: &str) -> Result<u8, JudgeError> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"Judgement:\s*([01])\b").unwrap());
    re.captures(reply)
        .map(|c| if &c[1] == "1" { 1 } else { 0 })
        .ok_or_else(|| JudgeError::Unparsable(reply.to_string()))
}

/// Deterministic local judge: accepts when at least `threshold` of the
/// reference answer's tokens appear in the model answer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StubJudge {
    pub threshold: f64,
}

impl Default for StubJudge {
    fn default() -> Self {
        StubJudge { threshold: 0.5 }
    }
}

fn tokens(s: &str) -> BTreeSet<String> {
    normalize(s)
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

impl JudgeClient for StubJudge {
    fn complete(&self, _prompt: &str, req: &JudgeRequest) -> Result<String, JudgeError> {
        let gold = tokens(&req.standard_answer);
        let model = tokens(&req.model_answer);
        let overlap = if gold.is_empty() {
            0.0
        } else {
            gold.intersection(&model).count() as f64 / gold.len() as f64
        };
        let j = u8::from(overlap >= self.threshold);
        Ok(format!("token overlap {overlap:.3}\nJudgement: {j}"))
    }
}

/// Trim, lower-case, collapse inner whitespace and strip trailing punctuation.
pub fn normalize(s: &str) -> String {
    let lowered = s.trim().to_lowercase();
    let collapsed = lowered.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed
        .trim_end_matches(|c: char| matches!(c, '.' | ',' | '!' | '?' | ';' | ':'))
        .trim_end()
        .to_string()
}

fn exact_match(answer: &str, gold: &str, tolerance: f64) -> bool {
    let (a, g) = (normalize(answer), normalize(gold));
    if a == g {
        return true;
    }
    match (a.parse::<f64>(), g.parse::<f64>()) {
        (Ok(x), Ok(y)) if x.is_finite() && y.is_finite() => (x - y).abs() <= tolerance,
        _ => false,
    }
}

/// `1` for a correct answer, `0` otherwise. A missing answer or a judge
/// failure scores `0`.
pub fn score_accuracy(
    answer: Option<&str>,
    question: &Question,
    judge: &dyn JudgeClient,
    numeric_tolerance: f64,
) -> u8 {
    let Some(answer) = answer.filter(|a| !a.trim().is_empty()) else {
        return 0;
    };
    match question.kind {
        QuestionKind::ExactMatch => u8::from(exact_match(answer, &question.gold, numeric_tolerance)),
        QuestionKind::OpenEnded => {
            let req = JudgeRequest {
                question: question.text.clone(),
                standard_answer: question.gold.clone(),
                model_answer: answer.to_string(),
            };
            match judge.judge(&req) {
                Ok(v) => v.judgement,
                Err(e) => {
                    warn!(question = %question.id, error = %e, "judge failed; scoring 0");
                    0
                }
            }
        }
    }
}

/// Raw tool score from the set of tool types that ran successfully.
pub fn tool_score_for(types: &BTreeSet<ToolName>, cfg: &RewardConfig) -> f64 {
    match types.len() {
        0 => 0.0,
        1 => cfg.single_tool_score,
        _ => cfg.synergy_tool_score,
    }
}

pub fn tool_score(trajectory: &Trajectory, cfg: &RewardConfig) -> f64 {
    tool_score_for(&trajectory.successful_tool_types(), cfg)
}

/// `s * (base + (1 - base) * acc)`; strict gating uses base 0.
pub fn tool_reward(s: f64, acc: u8, cfg: &RewardConfig) -> f64 {
    let base = if cfg.strict_gating { 0.0 } else { cfg.gating_base };
    s * (base + (1.0 - base) * f64::from(acc))
}

/// Turn bonus for `turn_sums` closed summaries.
pub fn turn_reward(turn_sums: usize, cfg: &RewardConfig) -> f64 {
    if (2..=3).contains(&turn_sums) {
        cfg.turn_bonus
    } else {
        0.0
    }
}

/// Scores a terminated trajectory.
pub fn total_reward(trajectory: &Trajectory, cfg: &RewardConfig, judge: &dyn JudgeClient) -> RewardBreakdown {
    let response = trajectory.response_text();
    let acc = score_accuracy(
        trajectory.final_answer.as_deref(),
        &trajectory.question,
        judge,
        cfg.numeric_tolerance,
    );
    let format = f64::from(check_format(&response).penalty);
    let s = tool_score(trajectory, cfg);
    let tool = tool_reward(s, acc, cfg);
    let turn_sums = count_turn_sums(&response);
    let turn = turn_reward(turn_sums, cfg);
    let acc = f64::from(acc);
    RewardBreakdown { acc, format, tool, turn, total: acc + format + tool + turn, tool_score: s, turn_sums }
}
