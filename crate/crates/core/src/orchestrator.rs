//! The navigation loop: seed context, then policy -> parse -> legality ->
//! tool -> history update, until an answer lands or the round budget runs
//! out.
//!
//! Rule violations and format errors are not fatal: the diagnostic is fed
//! back to the policy as the round's observation and the round is consumed,
//! so a misbehaving policy cannot loop forever. Only transport failures
//! abort an episode.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{GroundedQa, GroundedVideo};
use crate::policy::{Policy, PolicyError, TurnContext};
use crate::protocol::{
    parse_action, Episode, FinalAnswer, Observation, ParseConfig, ProtocolError, Step, Terminal,
    ToolCall,
};
use crate::reward::{
    composite_reward, location_reward, model_interval_set, RewardBreakdown, RewardError,
    RewardWeights,
};
use crate::tools::{parse_qa_answer, CostCategory, CostMeter, ToolBackend, ToolConfig, ToolError};
use crate::tree::{NodePath, TreeConfig, TreeError};

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("round budget must be at least 1")]
    ZeroBudget,
    #[error("tree error: {0}")]
    Tree(#[from] TreeError),
    #[error("tool backend error: {0}")]
    Tool(#[from] ToolError),
    #[error("policy error: {0}")]
    Policy(#[from] PolicyError),
    #[error("protocol error: {0}")]
    Protocol(#[from] ProtocolError),
    #[error("reward error: {0}")]
    Reward(#[from] RewardError),
}

/// How the initial context is seeded before the first reasoning round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// One caption of the whole video.
    RootCaption,
    /// Captions of all K level-1 segments; the more stable default.
    FirstLevel,
}

/// Per-episode settings.
#[derive(Debug, Clone)]
pub struct EpisodeConfig {
    pub budget: usize,
    pub init_mode: InitMode,
    pub tool: ToolConfig,
    /// Tree shape override; derived from the video duration when absent.
    pub tree: Option<TreeConfig>,
    pub lenient_think: bool,
    /// Record real wall times in the meter. Disable for mock runs so
    /// episode logs and eval records stay byte-stable across runs.
    pub measure_wall_time: bool,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            budget: 30,
            init_mode: InitMode::FirstLevel,
            tool: ToolConfig::default(),
            tree: None,
            lenient_think: false,
            measure_wall_time: true,
        }
    }
}

/// A legality violation, returned as a value and echoed to the policy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    QaNotOnLeaf { path: NodePath },
    QaCaptionNotRetrieved { path: NodePath },
    CaptionParentNotVisited { path: NodePath },
}

impl Violation {
    pub fn message(&self) -> String {
        match self {
            Violation::QaNotOnLeaf { path } => format!(
                "Illegal tool call: video_qa is allowed only on lowest-level segments, and {path} is not a leaf."
            ),
            Violation::QaCaptionNotRetrieved { path } => format!(
                "Illegal tool call: retrieve the caption of segment {path} with get_caption before calling video_qa on it."
            ),
            Violation::CaptionParentNotVisited { path } => format!(
                "Illegal tool call: the parent of segment {path} has not been traversed yet."
            ),
        }
    }
}

/// Key for the tool-response cache: path plus QA query when applicable.
type CacheKey = (NodePath, Option<String>);

#[derive(Debug, Clone)]
struct CachedTool {
    text: String,
    is_idk: bool,
}

/// Mutable episode state threaded through the loop and exposed to policies.
#[derive(Debug, Clone)]
pub struct NavigatorState {
    pub visited: BTreeSet<NodePath>,
    pub history: Episode,
    /// Rounds consumed so far.
    pub round: usize,
    pub budget: usize,
    /// Policy-issued tool calls in order, repeats included.
    pub visit_log: Vec<NodePath>,
    /// Paths captioned during context seeding.
    pub init_paths: Vec<NodePath>,
    pub meter: CostMeter,
    /// QA outcomes seen so far: `Some(choice)` or `None` for "I don't know".
    pub qa_evidence: Vec<(NodePath, Option<usize>)>,
    /// Tool calls that re-requested something already served (cache hits).
    /// The caption-then-QA pair on one leaf is two distinct requests.
    pub repeats: u64,
    cache: BTreeMap<CacheKey, CachedTool>,
}

impl NavigatorState {
    pub fn rounds_remaining(&self) -> usize {
        self.budget.saturating_sub(self.round)
    }

    /// Latest usable QA answer, if any.
    pub fn last_qa_answer(&self) -> Option<usize> {
        self.qa_evidence.iter().rev().find_map(|(_, c)| *c)
    }

    pub fn qa_tried(&self, path: &NodePath) -> bool {
        self.qa_evidence.iter().any(|(p, _)| p == path)
    }
}

/// Result of one episode run.
#[derive(Debug, Clone)]
pub struct EpisodeResult {
    pub episode: Episode,
    pub visited: BTreeSet<NodePath>,
    pub visit_log: Vec<NodePath>,
    pub init_paths: Vec<NodePath>,
    pub meter: CostMeter,
    pub outcome: Outcome,
    /// Requests served from cache: the repeat count the reward penalizes.
    pub repeats: u64,
    pub tree: TreeConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Answered(FinalAnswer),
    /// Budget exhausted without an answer; scored with a zero answer reward.
    Unanswered,
}

impl EpisodeResult {
    pub fn rounds_used(&self) -> usize {
        self.episode.steps.len()
    }

    pub fn answered_choice(&self) -> Option<usize> {
        match &self.outcome {
            Outcome::Answered(FinalAnswer::Choice(i)) => Some(*i),
            _ => None,
        }
    }
}

/// Seeds the context captions per the init mode and charges their cost.
pub fn init_context(
    video: &GroundedVideo,
    qa: &GroundedQa,
    tree: &TreeConfig,
    cfg: &EpisodeConfig,
    backend: &dyn ToolBackend,
    budget: usize,
) -> Result<NavigatorState, OrchestratorError> {
    let seed_paths: Vec<NodePath> = match cfg.init_mode {
        InitMode::RootCaption => vec![NodePath::root()],
        InitMode::FirstLevel => (0..tree.width).map(|i| NodePath::new([i])).collect(),
    };
    let mut meter = CostMeter::default();
    let mut init_captions = Vec::with_capacity(seed_paths.len());
    let mut cache = BTreeMap::new();
    let mut visited = BTreeSet::new();
    for path in &seed_paths {
        let started = Instant::now();
        let result = backend.get_caption(video, path, tree, &cfg.tool)?;
        let wall = wall_time(started, result.wall_time_s, cfg.measure_wall_time);
        meter.record(CostCategory::Caption, wall)?;
        cache.insert(
            (path.clone(), None),
            CachedTool {
                text: result.text.clone(),
                is_idk: false,
            },
        );
        init_captions.push((path.clone(), result.text));
        visited.insert(path.clone());
    }
    Ok(NavigatorState {
        visited,
        history: Episode {
            video_id: video.id.clone(),
            question: qa.question.clone(),
            choices: qa.choices.clone(),
            init_captions,
            steps: Vec::new(),
        },
        round: 0,
        budget,
        visit_log: Vec::new(),
        init_paths: seed_paths,
        meter,
        qa_evidence: Vec::new(),
        repeats: 0,
        cache,
    })
}

/// Checks a parsed call against the traversal rules:
/// captions require a traversed parent (level-1 segments are always fair
/// game after init), QA requires a leaf whose caption was retrieved.
pub fn enforce_legality(
    state: &NavigatorState,
    call: &ToolCall,
    tree: &TreeConfig,
) -> Result<(), Violation> {
    match call {
        ToolCall::GetCaption { path } => match path.parent() {
            None => {
                if state.visited.contains(path) {
                    Ok(())
                } else {
                    Err(Violation::CaptionParentNotVisited { path: path.clone() })
                }
            }
            Some(parent) => {
                if parent.is_root() || state.visited.contains(&parent) {
                    Ok(())
                } else {
                    Err(Violation::CaptionParentNotVisited { path: path.clone() })
                }
            }
        },
        ToolCall::VideoQa { path, .. } => {
            if !tree.is_leaf(path) {
                return Err(Violation::QaNotOnLeaf { path: path.clone() });
            }
            if !state.visited.contains(path) {
                return Err(Violation::QaCaptionNotRetrieved { path: path.clone() });
            }
            Ok(())
        }
    }
}

fn wall_time(started: Instant, reported: f64, enabled: bool) -> f64 {
    if !enabled {
        0.0
    } else if reported > 0.0 {
        reported
    } else {
        started.elapsed().as_secs_f64()
    }
}

/// Runs one full episode with the given policy and tool backend.
pub fn run_episode(
    video: &GroundedVideo,
    qa: &GroundedQa,
    policy: &mut dyn Policy,
    backend: &dyn ToolBackend,
    cfg: &EpisodeConfig,
) -> Result<EpisodeResult, OrchestratorError> {
    if cfg.budget == 0 {
        return Err(OrchestratorError::ZeroBudget);
    }
    let tree = match cfg.tree {
        Some(t) => t,
        None => TreeConfig::for_duration(video.duration_s)?,
    };
    let mut state = init_context(video, qa, &tree, cfg, backend, cfg.budget)?;
    let mut parse_cfg = ParseConfig::new(&tree).with_choices(&qa.choices);
    if cfg.lenient_think {
        parse_cfg = parse_cfg.lenient();
    }

    let mut outcome = Outcome::Unanswered;
    while state.round < state.budget {
        let round_started = Instant::now();
        let raw = {
            let ctx = TurnContext {
                state: &state,
                video,
                qa,
                tree: &tree,
            };
            policy.next_turn(&ctx)?
        };
        state.round += 1;
        let round_wall = if cfg.measure_wall_time {
            round_started.elapsed().as_secs_f64()
        } else {
            0.0
        };
        state.meter.record(CostCategory::Round, round_wall)?;

        let action = match parse_action(&raw, &parse_cfg) {
            Ok(action) => action,
            Err(err) => {
                let obs = format!(
                    "Format error: {err}. Respond with <think>...</think> followed by exactly one <tool>...</tool> or <answer>...</answer>."
                );
                state.history.push(Step {
                    reasoning: String::new(),
                    observation: Observation::Tool(obs),
                    raw,
                })?;
                continue;
            }
        };

        match action.terminal {
            Terminal::Answer(answer) => {
                state.history.push(Step {
                    reasoning: action.think,
                    observation: Observation::Answer(answer.clone()),
                    raw,
                })?;
                outcome = Outcome::Answered(answer);
                break;
            }
            Terminal::Tool(call) => {
                if let Err(violation) = enforce_legality(&state, &call, &tree) {
                    state.history.push(Step {
                        reasoning: action.think,
                        observation: Observation::Tool(violation.message()),
                        raw,
                    })?;
                    continue;
                }
                let text = execute_tool(&mut state, &call, video, qa, &tree, cfg, backend)?;
                state.history.push(Step {
                    reasoning: action.think,
                    observation: Observation::Tool(text),
                    raw,
                })?;
            }
        }
    }

    Ok(EpisodeResult {
        episode: state.history,
        visited: state.visited,
        visit_log: state.visit_log,
        init_paths: state.init_paths,
        meter: state.meter,
        outcome,
        repeats: state.repeats,
        tree,
    })
}

/// Executes a legal call through the response cache. A repeated request is
/// served from cache without charging tool cost; the visit log still grows,
/// feeding the repeat penalty.
fn execute_tool(
    state: &mut NavigatorState,
    call: &ToolCall,
    video: &GroundedVideo,
    qa: &GroundedQa,
    tree: &TreeConfig,
    cfg: &EpisodeConfig,
    backend: &dyn ToolBackend,
) -> Result<String, OrchestratorError> {
    let key: CacheKey = match call {
        ToolCall::GetCaption { path } => (path.clone(), None),
        ToolCall::VideoQa { path, query } => (path.clone(), Some(query.clone())),
    };
    let cached = state.cache.get(&key).cloned();
    let (text, is_idk) = match cached {
        Some(hit) => {
            state.repeats += 1;
            (hit.text, hit.is_idk)
        }
        None => {
            let started = Instant::now();
            let result = match call {
                ToolCall::GetCaption { path } => {
                    let r = backend.get_caption(video, path, tree, &cfg.tool)?;
                    let wall = wall_time(started, r.wall_time_s, cfg.measure_wall_time);
                    state.meter.record(CostCategory::Caption, wall)?;
                    r
                }
                ToolCall::VideoQa { path, query } => {
                    let r = backend.video_qa(video, qa, path, query, tree, &cfg.tool)?;
                    let wall = wall_time(started, r.wall_time_s, cfg.measure_wall_time);
                    state.meter.record(CostCategory::Qa, wall)?;
                    r
                }
            };
            state.cache.insert(
                key,
                CachedTool {
                    text: result.text.clone(),
                    is_idk: result.is_idk,
                },
            );
            (result.text, result.is_idk)
        }
    };
    let path = call.path().clone();
    if matches!(call, ToolCall::VideoQa { .. }) {
        let evidence = if is_idk { None } else { parse_qa_answer(&text) };
        state.qa_evidence.push((path.clone(), evidence));
    }
    state.visit_log.push(path.clone());
    state.visited.insert(path);
    Ok(text)
}

/// Serializable episode log line: the full tagged transcript, visited
/// paths, per-category costs, and the outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub video_id: String,
    pub question: String,
    pub turns: Vec<TurnLog>,
    pub visited: Vec<String>,
    pub init_paths: Vec<String>,
    pub rounds: u64,
    pub captions: u64,
    pub qa_calls: u64,
    pub round_time_s: f64,
    pub caption_time_s: f64,
    pub qa_time_s: f64,
    pub repeats: u64,
    pub answered: bool,
    pub choice: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TurnLog {
    pub raw: String,
    pub observation: Option<String>,
}

impl EpisodeLog {
    pub fn from_result(result: &EpisodeResult) -> Self {
        EpisodeLog {
            video_id: result.episode.video_id.clone(),
            question: result.episode.question.clone(),
            turns: result
                .episode
                .steps
                .iter()
                .map(|s| TurnLog {
                    raw: s.raw.clone(),
                    observation: match &s.observation {
                        Observation::Tool(t) => Some(t.clone()),
                        Observation::Answer(_) => None,
                    },
                })
                .collect(),
            visited: result.visited.iter().map(|p| p.to_string()).collect(),
            init_paths: result.init_paths.iter().map(|p| p.to_string()).collect(),
            rounds: result.meter.c1_rounds,
            captions: result.meter.c2_captions,
            qa_calls: result.meter.c3_qa,
            round_time_s: result.meter.round_time_s,
            caption_time_s: result.meter.caption_time_s,
            qa_time_s: result.meter.qa_time_s,
            repeats: result.repeats,
            answered: matches!(result.outcome, Outcome::Answered(_)),
            choice: result.answered_choice(),
        }
    }
}

/// Scores a finished episode with the composite reward.
pub fn score_episode(
    result: &EpisodeResult,
    qa: &GroundedQa,
    video: &GroundedVideo,
    weights: &RewardWeights,
    exclude_init: bool,
) -> Result<RewardBreakdown, RewardError> {
    let r_ans = match &result.outcome {
        Outcome::Answered(FinalAnswer::Choice(i)) => (*i == qa.answer_index) as u8 as f64,
        Outcome::Answered(FinalAnswer::Text(t)) => {
            qa.choices[qa.answer_index].eq_ignore_ascii_case(t.trim()) as u8 as f64
        }
        Outcome::Unanswered => 0.0,
    };
    let model = model_interval_set(
        &result.visit_log,
        &result.init_paths,
        video.duration_s,
        &result.tree,
        exclude_init,
    )?;
    let r_loc = location_reward(&model, &qa.clue)?;
    let r_repeat = if result.repeats == 0 {
        0.0
    } else {
        -(result.repeats as f64)
    };
    Ok(RewardBreakdown {
        r_ans,
        r_loc,
        r_repeat,
        total: composite_reward(r_ans, r_loc, r_repeat, weights),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, CorpusParams};
    use crate::policy::{OraclePolicy, ScriptedPolicy};
    use crate::tools::MockBackend;

    fn first_task(corpus: &crate::corpus::Corpus) -> (&GroundedVideo, &GroundedQa) {
        let rec = &corpus.videos[0];
        (&rec.video, &rec.qa[0])
    }

    #[test]
    fn first_level_init_seeds_all_segments() {
        let corpus = generate_corpus(5, 1, &CorpusParams::default()).unwrap();
        let (video, qa) = first_task(&corpus);
        let tree = TreeConfig::for_duration(video.duration_s).unwrap();
        let cfg = EpisodeConfig::default();
        let state = init_context(video, qa, &tree, &cfg, &MockBackend, 30).unwrap();
        assert_eq!(state.meter.c2_captions, tree.width as u64);
        assert_eq!(state.history.init_captions.len(), tree.width);
        let expected: BTreeSet<NodePath> = (0..tree.width).map(|i| NodePath::new([i])).collect();
        assert_eq!(state.visited, expected);
    }

    #[test]
    fn root_init_seeds_single_caption() {
        let corpus = generate_corpus(5, 1, &CorpusParams::default()).unwrap();
        let (video, qa) = first_task(&corpus);
        let tree = TreeConfig::for_duration(video.duration_s).unwrap();
        let cfg = EpisodeConfig {
            init_mode: InitMode::RootCaption,
            ..EpisodeConfig::default()
        };
        let state = init_context(video, qa, &tree, &cfg, &MockBackend, 30).unwrap();
        assert_eq!(state.meter.c2_captions, 1);
        assert_eq!(state.visited.len(), 1);
        assert!(state.visited.contains(&NodePath::root()));
    }

    #[test]
    fn legality_rules() {
        let corpus = generate_corpus(5, 1, &CorpusParams::default()).unwrap();
        let (video, qa) = first_task(&corpus);
        let tree = TreeConfig::for_duration(video.duration_s).unwrap();
        let cfg = EpisodeConfig::default();
        let mut state = init_context(video, qa, &tree, &cfg, &MockBackend, 30).unwrap();

        // caption of a child of a visited level-1 node is legal
        let ok = ToolCall::GetCaption {
            path: NodePath::new([2, 3]),
        };
        assert!(enforce_legality(&state, &ok, &tree).is_ok());

        // caption below an unvisited node is not
        let deep = ToolCall::GetCaption {
            path: NodePath::new([2, 3, 1]),
        };
        assert_eq!(
            enforce_legality(&state, &deep, &tree),
            Err(Violation::CaptionParentNotVisited {
                path: NodePath::new([2, 3, 1])
            })
        );

        // QA off-leaf
        let qa_mid = ToolCall::VideoQa {
            path: NodePath::new([2, 3]),
            query: "q".into(),
        };
        assert_eq!(
            enforce_legality(&state, &qa_mid, &tree),
            Err(Violation::QaNotOnLeaf {
                path: NodePath::new([2, 3])
            })
        );

        // QA on an unvisited leaf
        let qa_leaf = ToolCall::VideoQa {
            path: NodePath::new([2, 3, 1]),
            query: "q".into(),
        };
        assert_eq!(
            enforce_legality(&state, &qa_leaf, &tree),
            Err(Violation::QaCaptionNotRetrieved {
                path: NodePath::new([2, 3, 1])
            })
        );

        // after captioning the leaf, QA becomes legal
        state.visited.insert(NodePath::new([2, 3, 1]));
        assert!(enforce_legality(&state, &qa_leaf, &tree).is_ok());
    }

    #[test]
    fn oracle_answers_within_call_budget() {
        let corpus = generate_corpus(7, 3, &CorpusParams::default()).unwrap();
        for rec in &corpus.videos {
            let video = &rec.video;
            for qa in &rec.qa {
                let cfg = EpisodeConfig::default();
                let mut policy = OraclePolicy::new();
                let result = run_episode(video, qa, &mut policy, &MockBackend, &cfg).unwrap();
                assert_eq!(
                    result.answered_choice(),
                    Some(qa.answer_index),
                    "oracle must answer correctly"
                );
                let tree = result.tree;
                let max_calls = (tree.width + tree.depth + 1) as u64;
                assert!(
                    result.meter.tool_calls() <= max_calls,
                    "{} calls > bound {max_calls}",
                    result.meter.tool_calls()
                );
                assert!(
                    result.rounds_used() <= tree.width + tree.depth + 1,
                    "{} rounds exceed the oracle bound",
                    result.rounds_used()
                );
            }
        }
    }

    #[test]
    fn budget_one_tool_only_policy_goes_unanswered() {
        let corpus = generate_corpus(5, 1, &CorpusParams::default()).unwrap();
        let (video, qa) = first_task(&corpus);
        let mut policy = ScriptedPolicy::new(vec![
            "<think>look</think><tool>get_caption((1,1))</tool>".to_string(),
        ]);
        let cfg = EpisodeConfig {
            budget: 1,
            ..EpisodeConfig::default()
        };
        let result = run_episode(video, qa, &mut policy, &MockBackend, &cfg).unwrap();
        assert_eq!(result.outcome, Outcome::Unanswered);
        assert_eq!(result.meter.c1_rounds, 1);
        assert_eq!(result.rounds_used(), 1);
    }

    #[test]
    fn illegal_call_feeds_violation_back_and_preserves_visited() {
        let corpus = generate_corpus(5, 1, &CorpusParams::default()).unwrap();
        let (video, qa) = first_task(&corpus);
        let mut policy = ScriptedPolicy::new(vec![
            // QA without having captioned the leaf
            "<think>try</think><tool>video_qa((1,1,1), what?)</tool>".to_string(),
            "<think>give up</think><answer>A</answer>".to_string(),
        ]);
        let cfg = EpisodeConfig::default();
        let result = run_episode(video, qa, &mut policy, &MockBackend, &cfg).unwrap();
        let first_obs = match &result.episode.steps[0].observation {
            Observation::Tool(t) => t.clone(),
            other => panic!("expected tool observation, got {other:?}"),
        };
        assert!(first_obs.contains("Illegal tool call"), "{first_obs}");
        assert!(first_obs.contains("get_caption before calling video_qa"));
        // visited unchanged: only the init paths
        assert_eq!(result.visited.len(), result.init_paths.len());
        assert!(result.visit_log.is_empty());
    }

    #[test]
    fn format_error_consumes_round_and_policy_can_recover() {
        let corpus = generate_corpus(5, 1, &CorpusParams::default()).unwrap();
        let (video, qa) = first_task(&corpus);
        let mut policy = ScriptedPolicy::new(vec![
            "complete nonsense without tags".to_string(),
            "<think>recover</think><answer>A</answer>".to_string(),
        ]);
        let cfg = EpisodeConfig::default();
        let result = run_episode(video, qa, &mut policy, &MockBackend, &cfg).unwrap();
        assert_eq!(result.meter.c1_rounds, 2);
        assert_eq!(result.episode.steps.len(), 2);
        match &result.episode.steps[0].observation {
            Observation::Tool(t) => assert!(t.contains("Format error"), "{t}"),
            other => panic!("unexpected observation {other:?}"),
        }
        assert!(matches!(result.outcome, Outcome::Answered(_)));
    }

    #[test]
    fn repeated_caption_served_from_cache_without_new_charge() {
        let corpus = generate_corpus(5, 1, &CorpusParams::default()).unwrap();
        let (video, qa) = first_task(&corpus);
        let mut policy = ScriptedPolicy::new(vec![
            "<think>a</think><tool>get_caption((2,1))</tool>".to_string(),
            "<think>again</think><tool>get_caption((2,1))</tool>".to_string(),
            "<think>done</think><answer>A</answer>".to_string(),
        ]);
        let cfg = EpisodeConfig::default();
        let result = run_episode(video, qa, &mut policy, &MockBackend, &cfg).unwrap();
        let init_captions = result.init_paths.len() as u64;
        assert_eq!(result.meter.c2_captions, init_captions + 1);
        assert_eq!(result.visit_log.len(), 2);
        assert_eq!(result.repeats, 1);
        assert_eq!(crate::reward::repeat_penalty(&result.visit_log), -1.0);
        // identical text both times
        let texts: Vec<&String> = result
            .episode
            .steps
            .iter()
            .filter_map(|s| match &s.observation {
                Observation::Tool(t) => Some(t),
                _ => None,
            })
            .collect();
        assert_eq!(texts[0], texts[1]);
    }

    #[test]
    fn history_has_one_observation_block_per_consumed_round() {
        let corpus = generate_corpus(5, 1, &CorpusParams::default()).unwrap();
        let (video, qa) = first_task(&corpus);
        let mut policy = ScriptedPolicy::new(vec![
            "<think>a</think><tool>get_caption((1,1))</tool>".to_string(),
            "junk".to_string(),
            "<think>b</think><tool>video_qa((1,1), bad arity)</tool>".to_string(),
            "<think>c</think><tool>get_caption((1,2))</tool>".to_string(),
        ]);
        let cfg = EpisodeConfig {
            budget: 4,
            ..EpisodeConfig::default()
        };
        let result = run_episode(video, qa, &mut policy, &MockBackend, &cfg).unwrap();
        assert_eq!(result.episode.steps.len(), 4);
        assert!(result
            .episode
            .steps
            .iter()
            .all(|s| matches!(s.observation, Observation::Tool(_))));
    }

    #[test]
    fn scoring_perfect_episode() {
        let corpus = generate_corpus(7, 1, &CorpusParams::default()).unwrap();
        let (video, qa) = first_task(&corpus);
        let cfg = EpisodeConfig::default();
        let mut policy = OraclePolicy::new();
        let result = run_episode(video, qa, &mut policy, &MockBackend, &cfg).unwrap();
        let breakdown =
            score_episode(&result, qa, video, &RewardWeights::default(), true).unwrap();
        assert_eq!(breakdown.r_ans, 1.0);
        assert!(breakdown.r_loc > 0.0);
        assert_eq!(breakdown.r_repeat, 0.0);
        assert!(breakdown.total > 1.0);
    }
}
