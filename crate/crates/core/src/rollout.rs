//! The multi-turn perception loop: generate a turn, run its tool calls, fold
//! the returned frames into the evidence window, repeat until the policy
//! answers or the turn cap is reached.

use std::collections::BTreeSet;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tracing::debug;

use crate::drfs::{initial_evidence, EvidenceOrigin, EvidenceSet, SamplingConfig};
use crate::grpo::{group_advantages, AdvantageError};
use crate::protocol::{decide_transition, parse_turn, Transition, TurnOutput};
use crate::reward::{total_reward, JudgeClient, Question, RewardBreakdown, RewardConfig};
use crate::videotool::{execute_raw, ToolName, ToolResult, ToolResultRecord, VideoSource};

/// System prompt template, byte-for-byte.
pub const SYSTEM_TEMPLATE: &str = include_str!("../assets/system_prompt.txt");
/// First user turn template, byte-for-byte.
pub const USER_TURN1_TEMPLATE: &str = include_str!("../assets/user_turn1.txt");
/// Follow-up turn template wrapping the tool response, byte-for-byte.
pub const TURN_FOLLOWUP_TEMPLATE: &str = include_str!("../assets/turn_followup.txt");

/// Number of most recent turns whose tool evidence stays visible, on top of
/// the initial frames.
pub const EVIDENCE_WINDOW_TURNS: usize = 2;

pub fn system_prompt() -> String {
    SYSTEM_TEMPLATE.replacen("{{ content | trim }}", "", 1).trim_start().to_string()
}

pub fn first_user_prompt(question: &str) -> String {
    format!("Question: {question}\n{USER_TURN1_TEMPLATE}")
}

pub fn followup_prompt(visual_content: &str) -> String {
    TURN_FOLLOWUP_TEMPLATE.replacen("{visual_content}", visual_content, 1)
}

/// What the policy sees at the start of a turn.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub history: String,
    pub question: String,
    pub duration: f64,
    /// 1-based.
    pub turn_index: usize,
    /// Initial frames first, then the most recent tool evidence.
    pub evidence: Vec<EvidenceSet>,
}

/// One scored decision inside a generated turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub label: String,
    pub log_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolicyError {
    #[error("policy transport failed: {0}")]
    Transport(String),
    #[error("turn text cannot be produced by this policy: {0}")]
    Unrecognized(String),
}

/// A text policy. `act` may emit anything; the protocol module judges it.
pub trait Policy: Send + Sync {
    fn act(&self, obs: &Observation, seed: u64) -> Result<String, PolicyError>;

    /// Log-probabilities of the decisions that produced `turn`.
    fn log_prob(&self, obs: &Observation, turn: &str) -> Result<Vec<Decision>, PolicyError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Turn {
    pub index: usize,
    pub observation: Observation,
    pub output: TurnOutput,
    pub tool_results: Vec<ToolResult>,
    pub evidence_delta: EvidenceSet,
    pub transition: Transition,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub question: Question,
    pub video_id: String,
    pub config: SamplingConfig,
    pub seed: u64,
    pub initial_evidence: EvidenceSet,
    pub turns: Vec<Turn>,
    pub final_answer: Option<String>,
    pub reward: Option<RewardBreakdown>,
    pub transcript: String,
    /// Set when the policy failed mid-rollout; such trajectories are not trained on.
    pub aborted: Option<String>,
}

impl Trajectory {
    /// The policy's own text, turn by turn.
    pub fn response_text(&self) -> String {
        self.turns.iter().map(|t| t.output.raw.as_str()).collect::<Vec<_>>().join("\n")
    }

    pub fn successful_tool_types(&self) -> BTreeSet<ToolName> {
        self.turns
            .iter()
            .flat_map(|t| &t.tool_results)
            .filter(|r| r.is_success())
            .filter_map(|r| r.tool)
            .collect()
    }

    pub fn transcript_hash(&self) -> String {
        hex::encode(Sha256::digest(self.transcript.as_bytes()))
    }

    pub fn log_record(&self) -> TrajectoryRecord {
        TrajectoryRecord {
            question_id: self.question.id.clone(),
            video_id: self.video_id.clone(),
            rung: self.config.g,
            turn_count: self.turns.len(),
            tool_calls: self
                .turns
                .iter()
                .flat_map(|t| t.output.tool_calls().map(|c| c.trim().to_string()))
                .collect(),
            tool_results: self
                .turns
                .iter()
                .flat_map(|t| t.tool_results.iter().map(|r| r.record(&self.video_id)))
                .collect(),
            final_answer: self.final_answer.clone(),
            reward: self.reward,
            aborted: self.aborted.clone(),
            transcript_hash: self.transcript_hash(),
        }
    }
}

/// One log line per trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub question_id: String,
    pub video_id: String,
    pub rung: usize,
    pub turn_count: usize,
    pub tool_calls: Vec<String>,
    pub tool_results: Vec<ToolResultRecord>,
    pub final_answer: Option<String>,
    pub reward: Option<RewardBreakdown>,
    pub aborted: Option<String>,
    pub transcript_hash: String,
}

fn tool_evidence(results: &[ToolResult]) -> EvidenceSet {
    let mut items: Vec<_> = results.iter().flat_map(|r| r.frames().iter().cloned()).collect();
    items.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    EvidenceSet { items, origin: EvidenceOrigin::Tool }
}

/// Runs one trajectory to termination.
pub fn run_rollout(
    policy: &dyn Policy,
    source: &VideoSource,
    question: &Question,
    config: &SamplingConfig,
    max_turns: usize,
    seed: u64,
) -> Trajectory {
    let e0 = initial_evidence(source, config);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut history = format!("{}\n\n{}", system_prompt(), first_user_prompt(&question.text));
    let mut turns: Vec<Turn> = Vec::new();
    let mut final_answer = None;
    let mut aborted = None;

    for k in 1..=max_turns {
        let mut evidence = vec![e0.clone()];
        let recent = turns.len().saturating_sub(EVIDENCE_WINDOW_TURNS);
        evidence.extend(turns[recent..].iter().map(|t| t.evidence_delta.clone()));
        let observation = Observation {
            history: history.clone(),
            question: question.text.clone(),
            duration: source.duration(),
            turn_index: k,
            evidence,
        };
        let text = match policy.act(&observation, rng.next_u64()) {
            Ok(t) => t,
            Err(e) => {
                aborted = Some(e.to_string());
                break;
            }
        };
        let output = parse_turn(&text);
        let tool_results: Vec<ToolResult> = output.tool_calls().map(|c| execute_raw(c, source)).collect();
        let evidence_delta = tool_evidence(&tool_results);
        let transition = decide_transition(&output, k, max_turns);
        history.push('\n');
        history.push_str(&text);
        if transition == Transition::Continue {
            let visual = tool_results.iter().map(ToolResult::render).collect::<Vec<_>>().join("\n");
            history.push('\n');
            history.push_str(&followup_prompt(&visual));
        }
        if let Transition::StopWithAnswer(a) = &transition {
            final_answer = Some(a.clone());
        }
        let stop = transition != Transition::Continue;
        turns.push(Turn { index: k, observation, output, tool_results, evidence_delta, transition });
        if stop {
            break;
        }
    }

    Trajectory {
        question: question.clone(),
        video_id: source.id().to_string(),
        config: *config,
        seed,
        initial_evidence: e0,
        turns,
        final_answer,
        reward: None,
        transcript: history,
        aborted,
    }
}

/// Parallel rollouts for one video-question pair, with group-relative
/// advantages.
#[derive(Debug, Clone)]
pub struct GroupBatch {
    pub question_id: String,
    pub trajectories: Vec<Trajectory>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    /// Rollouts removed because they aborted.
    pub dropped: usize,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GroupError {
    #[error("one seed per rung is required ({rungs} rungs, {seeds} seeds)")]
    SeedCount { rungs: usize, seeds: usize },
    #[error("group voided: {0}")]
    Void(#[from] AdvantageError),
}

/// Everything a group run needs besides the policy and the input.
pub struct GroupSettings<'a> {
    pub max_turns: usize,
    pub reward: &'a RewardConfig,
    pub judge: &'a dyn JudgeClient,
}

/// One rollout per ladder rung, scored and normalised against the group mean.
pub fn run_group(
    policy: &dyn Policy,
    source: &VideoSource,
    question: &Question,
    ladder: &[SamplingConfig],
    seeds: &[u64],
    settings: &GroupSettings<'_>,
) -> Result<GroupBatch, GroupError> {
    if ladder.len() != seeds.len() {
        return Err(GroupError::SeedCount { rungs: ladder.len(), seeds: seeds.len() });
    }
    let all: Vec<Trajectory> = ladder
        .par_iter()
        .zip(seeds.par_iter())
        .map(|(cfg, &seed)| {
            let mut t = run_rollout(policy, source, question, cfg, settings.max_turns, seed);
            if t.aborted.is_none() {
                t.reward = Some(total_reward(&t, settings.reward, settings.judge));
            }
            t
        })
        .collect();
    let total = all.len();
    let trajectories: Vec<Trajectory> = all.into_iter().filter(|t| t.aborted.is_none()).collect();
    let dropped = total - trajectories.len();
    if dropped > 0 {
        debug!(question = %question.id, dropped, "aborted rollouts dropped from group");
    }
    let rewards: Vec<f64> = trajectories.iter().map(|t| t.reward.map_or(0.0, |r| r.total)).collect();
    let advantages = group_advantages(&rewards)?.values;
    Ok(GroupBatch { question_id: question.id.clone(), trajectories, rewards, advantages, dropped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drfs::{build_ladder, LadderEndpoints};
    use crate::reward::{QuestionKind, StubJudge};
    use image::RgbImage;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    struct Scripted(Vec<&'static str>);

    impl Policy for Scripted {
        fn act(&self, obs: &Observation, _seed: u64) -> Result<String, PolicyError> {
            Ok(self.0[(obs.turn_index - 1).min(self.0.len() - 1)].to_string())
        }
        fn log_prob(&self, _: &Observation, _: &str) -> Result<Vec<Decision>, PolicyError> {
            Ok(vec![])
        }
    }

    /// Fails whenever the initial evidence holds more than `.0` frames.
    struct Flaky(usize, AtomicUsize);

    impl Policy for Flaky {
        fn act(&self, obs: &Observation, _seed: u64) -> Result<String, PolicyError> {
            self.1.fetch_add(1, Ordering::SeqCst);
            if obs.evidence[0].len() > self.0 {
                Err(PolicyError::Transport("timeout".into()))
            } else {
                Ok("<think>t</think><answer>a</answer>".into())
            }
        }
        fn log_prob(&self, _: &Observation, _: &str) -> Result<Vec<Decision>, PolicyError> {
            Ok(vec![])
        }
    }

    fn source() -> VideoSource {
        let img = Arc::new(RgbImage::new(8, 8));
        VideoSource::from_images("v", 60.0, 1.0, vec![img; 60]).unwrap()
    }

    fn question() -> Question {
        Question { id: "q1".into(), text: "When?".into(), gold: "a".into(), kind: QuestionKind::ExactMatch }
    }

    fn rung() -> SamplingConfig {
        build_ladder(&LadderEndpoints::default(), 8).unwrap()[0]
    }

    const TOOL_TURN: &str = "<think>look</think><tool_call>{\"name\": \"FrameAt\", \"arguments\": {\"time\": 5}}</tool_call><turn_sum>s</turn_sum>";

    #[test]
    fn immediate_answer() {
        let p = Scripted(vec!["<think>t</think><answer>a</answer>"]);
        let t = run_rollout(&p, &source(), &question(), &rung(), 3, 0);
        assert_eq!(t.turns.len(), 1);
        assert_eq!(t.final_answer.as_deref(), Some("a"));
        assert!(t.turns[0].tool_results.is_empty());
        assert_eq!(t.initial_evidence.len(), 64);
    }

    #[test]
    fn tool_then_answer() {
        let p = Scripted(vec![TOOL_TURN, "<think>t</think><answer>a</answer>"]);
        let t = run_rollout(&p, &source(), &question(), &rung(), 3, 0);
        assert_eq!(t.turns.len(), 2);
        assert_eq!(t.turns[0].evidence_delta.len(), 1);
        assert_eq!(t.turns[1].observation.evidence.len(), 2);
        assert!(t.turns[1].observation.history.starts_with(&t.turns[0].observation.history));
        assert!(t.transcript.contains("<tool_response><frame t=5.00s 448x448></tool_response>"));
    }

    #[test]
    fn never_answers_hits_cap() {
        let p = Scripted(vec![TOOL_TURN]);
        let t = run_rollout(&p, &source(), &question(), &rung(), 3, 0);
        assert_eq!(t.turns.len(), 3);
        assert_eq!(t.turns[2].transition, Transition::StopAtCap);
        assert!(t.final_answer.is_none());
        // Initial frames plus the two most recent tool deltas.
        assert_eq!(t.turns[2].observation.evidence.len(), 3);
    }

    #[test]
    fn tool_errors_reach_history() {
        let bad = "<think>t</think><tool_call>FrameAt(99)</tool_call><turn_sum>s</turn_sum>";
        let p = Scripted(vec![bad, "<think>t</think><answer>a</answer>"]);
        let t = run_rollout(&p, &source(), &question(), &rung(), 3, 0);
        assert!(t.turns[1].observation.history.contains("ERROR: Invalid timestamp. Video duration is 60s."));
        assert!(t.turns[0].evidence_delta.is_empty());
    }

    #[test]
    fn group_drops_aborted() {
        let p = Flaky(60, AtomicUsize::new(0));
        let ladder = build_ladder(&LadderEndpoints::default(), 4).unwrap();
        let judge = StubJudge::default();
        let reward = RewardConfig::default();
        let settings = GroupSettings { max_turns: 3, reward: &reward, judge: &judge };
        let g = run_group(&p, &source(), &question(), &ladder, &[1, 2, 3, 5], &settings).unwrap();
        assert_eq!(g.dropped, 1);
        assert_eq!(g.trajectories.len(), 3);
        assert_eq!(p.1.load(Ordering::SeqCst), 4);
        let p = Flaky(40, AtomicUsize::new(0));
        let err = run_group(&p, &source(), &question(), &ladder, &[1, 2, 3, 5], &settings);
        assert!(matches!(err, Err(GroupError::Void(_))));
    }

    #[test]
    fn equal_rewards_zero_advantages() {
        let p = Scripted(vec!["<think>t</think><answer>a</answer>"]);
        let ladder = build_ladder(&LadderEndpoints::default(), 2).unwrap();
        let judge = StubJudge::default();
        let reward = RewardConfig::default();
        let settings = GroupSettings { max_turns: 3, reward: &reward, judge: &judge };
        let g = run_group(&p, &source(), &question(), &ladder, &[7, 8], &settings).unwrap();
        assert_eq!(g.advantages, vec![0.0, 0.0]);
    }

    #[test]
    fn templates_fill() {
        assert!(system_prompt().starts_with("You are an expert video analysis assistant."));
        assert!(followup_prompt("X").starts_with("<tool_response>X</tool_response>\n"));
        assert!(first_user_prompt("Q?").starts_with("Question: Q?\nStart with <think>."));
    }
}
