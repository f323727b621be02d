//! Navigation policies: what emits the tagged text each round.
//!
//! All policies speak the wire protocol; the loop parses whatever they
//! return. The scripted oracle is a teacher with access to the annotated
//! clue, used for trajectory generation and as an accuracy/cost reference.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{GroundedQa, GroundedVideo};
use crate::orchestrator::NavigatorState;
use crate::protocol::{render_action, Action, FinalAnswer, Terminal, ToolCall};
use crate::reward::IntervalSet;
use crate::tree::{interval_of, NodePath, TreeConfig};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("scripted policy ran out of turns after {0}")]
    ScriptExhausted(usize),
    #[error("no legal candidate actions")]
    NoLegalActions,
    #[error("tool backend error: {0}")]
    Backend(#[from] crate::tools::ToolError),
    #[error("missing policy checkpoint: {0}")]
    MissingCheckpoint(String),
}

/// Everything a policy may look at when producing a turn.
///
/// `video` and `qa` carry corpus annotations; learned policies must only
/// read the question/choices, while the oracle teacher reads the clue by
/// design.
pub struct TurnContext<'a> {
    pub state: &'a NavigatorState,
    pub video: &'a GroundedVideo,
    pub qa: &'a GroundedQa,
    pub tree: &'a TreeConfig,
}

pub trait Policy {
    /// Produces the raw tagged text for the next turn.
    fn next_turn(&mut self, ctx: &TurnContext) -> Result<String, PolicyError>;
}

/// Selector for building a policy at the CLI boundary.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicySpec {
    ScriptedOracle,
    LlmBacked { server: crate::http::ServerConfig },
    LearnedToy { checkpoint: std::path::PathBuf },
    UniformRandom,
}

/// Replays a fixed list of turns; testing aid.
#[derive(Debug, Clone)]
pub struct ScriptedPolicy {
    turns: Vec<String>,
    next: usize,
}

impl ScriptedPolicy {
    pub fn new(turns: Vec<String>) -> Self {
        ScriptedPolicy { turns, next: 0 }
    }
}

impl Policy for ScriptedPolicy {
    fn next_turn(&mut self, _ctx: &TurnContext) -> Result<String, PolicyError> {
        let turn = self
            .turns
            .get(self.next)
            .ok_or(PolicyError::ScriptExhausted(self.next))?;
        self.next += 1;
        Ok(turn.clone())
    }
}

/// One legal move available to a learned or random policy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CandidateAction {
    Caption(NodePath),
    Qa(NodePath),
    /// Answer with the latest QA evidence, or guess when there is none.
    Answer,
}

/// Enumerates the legal moves at a state, deterministically ordered:
/// captions of the unvisited children of visited non-leaf nodes, QA on
/// every visited leaf (retries included), then answering. All entries pass
/// the legality rules by construction; answering is always available.
pub fn enumerate_candidates(state: &NavigatorState, tree: &TreeConfig) -> Vec<CandidateAction> {
    let mut out = Vec::new();
    for node in &state.visited {
        if !tree.is_leaf(node) {
            for i in 0..tree.width {
                let child = node.child(i);
                if !state.visited.contains(&child) {
                    out.push(CandidateAction::Caption(child));
                }
            }
        }
    }
    for node in &state.visited {
        if tree.is_leaf(node) {
            out.push(CandidateAction::Qa(node.clone()));
        }
    }
    out.push(CandidateAction::Answer);
    out
}

/// Materializes a candidate into a renderable turn.
pub fn candidate_to_action(
    candidate: &CandidateAction,
    ctx: &TurnContext,
    rng: &mut ChaCha8Rng,
) -> Action {
    match candidate {
        CandidateAction::Caption(path) => Action {
            think: format!("I need more detail; requesting the caption of segment {path}."),
            terminal: Terminal::Tool(ToolCall::GetCaption { path: path.clone() }),
        },
        CandidateAction::Qa(path) => Action {
            think: format!("Segment {path} may hold the answer; querying the clip directly."),
            terminal: Terminal::Tool(ToolCall::VideoQa {
                path: path.clone(),
                query: ctx.qa.question.clone(),
            }),
        },
        CandidateAction::Answer => {
            let choice = match ctx.state.last_qa_answer() {
                Some(c) => c,
                None => rng.random_range(0..ctx.qa.choices.len()),
            };
            Action {
                think: "I am confident enough to answer now.".to_string(),
                terminal: Terminal::Answer(FinalAnswer::Choice(choice)),
            }
        }
    }
}

/// Picks uniformly among the legal candidates; the cost baseline GRPO
/// training is measured against.
pub struct UniformRandomPolicy {
    rng: ChaCha8Rng,
}

impl UniformRandomPolicy {
    pub fn seeded(seed: u64) -> Self {
        UniformRandomPolicy {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Policy for UniformRandomPolicy {
    fn next_turn(&mut self, ctx: &TurnContext) -> Result<String, PolicyError> {
        let candidates = enumerate_candidates(ctx.state, ctx.tree);
        if candidates.is_empty() {
            return Err(PolicyError::NoLegalActions);
        }
        let idx = self.rng.random_range(0..candidates.len());
        let action = candidate_to_action(&candidates[idx], ctx, &mut self.rng);
        Ok(render_action(&action))
    }
}

/// Clue-guided teacher. Greedily descends toward the segment with the
/// largest clue overlap, captions it, asks the QA tool at the leaf, then
/// answers with whatever the tool returned. Ties break toward the smaller
/// child index.
#[derive(Debug, Default)]
pub struct OraclePolicy;

impl OraclePolicy {
    pub fn new() -> Self {
        OraclePolicy
    }
}

impl Policy for OraclePolicy {
    fn next_turn(&mut self, ctx: &TurnContext) -> Result<String, PolicyError> {
        let action = scripted_oracle_action(ctx.state, ctx.video, &ctx.qa.clue, ctx);
        Ok(render_action(&action))
    }
}

/// Oracle that misbehaves with a fixed probability per round, taking a
/// uniform-random legal move instead. Used to study budget sensitivity:
/// more rounds leave more room to recover from noise.
pub struct NoisyOraclePolicy {
    rng: ChaCha8Rng,
    noise: f64,
}

impl NoisyOraclePolicy {
    pub fn seeded(seed: u64, noise: f64) -> Self {
        NoisyOraclePolicy {
            rng: ChaCha8Rng::seed_from_u64(seed),
            noise,
        }
    }
}

impl Policy for NoisyOraclePolicy {
    fn next_turn(&mut self, ctx: &TurnContext) -> Result<String, PolicyError> {
        if self.rng.random::<f64>() < self.noise {
            let candidates = enumerate_candidates(ctx.state, ctx.tree);
            if candidates.is_empty() {
                return Err(PolicyError::NoLegalActions);
            }
            let idx = self.rng.random_range(0..candidates.len());
            let action = candidate_to_action(&candidates[idx], ctx, &mut self.rng);
            return Ok(render_action(&action));
        }
        let action = scripted_oracle_action(ctx.state, ctx.video, &ctx.qa.clue, ctx);
        Ok(render_action(&action))
    }
}

fn overlap_with_clue(
    path: &NodePath,
    duration: f64,
    tree: &TreeConfig,
    clue: &IntervalSet,
) -> f64 {
    match interval_of(path, duration, tree) {
        Ok((a, b)) => IntervalSet::single(a, b)
            .map(|iv| iv.intersection_length(clue))
            .unwrap_or(0.0),
        Err(_) => 0.0,
    }
}

/// The oracle's decision rule for one turn.
pub fn scripted_oracle_action(
    state: &NavigatorState,
    video: &GroundedVideo,
    clue: &IntervalSet,
    ctx: &TurnContext,
) -> Action {
    let tree = ctx.tree;
    let duration = video.duration_s;

    // a definitive QA reply ends the episode
    if let Some(choice) = state.last_qa_answer() {
        return Action {
            think: "The clip-level QA tool returned a definitive answer; I can finalize it."
                .to_string(),
            terminal: Terminal::Answer(FinalAnswer::Choice(choice)),
        };
    }

    // ask at a visited leaf that overlaps the clue and was not tried yet
    let mut best_leaf: Option<(f64, &NodePath)> = None;
    for node in &state.visited {
        if tree.is_leaf(node) && !state.qa_tried(node) {
            let ov = overlap_with_clue(node, duration, tree, clue);
            if ov > 0.0 && best_leaf.map(|(b, _)| ov > b).unwrap_or(true) {
                best_leaf = Some((ov, node));
            }
        }
    }
    if let Some((_, leaf)) = best_leaf {
        return Action {
            think: format!(
                "Segment {leaf} covers the moment the question is about; asking the clip directly."
            ),
            terminal: Terminal::Tool(ToolCall::VideoQa {
                path: leaf.clone(),
                query: ctx.qa.question.clone(),
            }),
        };
    }

    // otherwise descend: caption the unvisited child with the largest
    // overlap; sorted traversal makes smaller paths win ties
    let mut best_child: Option<(f64, NodePath)> = None;
    for node in &state.visited {
        if tree.is_leaf(node) {
            continue;
        }
        for i in 0..tree.width {
            let child = node.child(i);
            if state.visited.contains(&child) {
                continue;
            }
            let ov = overlap_with_clue(&child, duration, tree, clue);
            if best_child.as_ref().map(|(b, _)| ov > *b).unwrap_or(true) {
                best_child = Some((ov, child));
            }
        }
    }
    if let Some((_, child)) = best_child {
        let (a, b) = interval_of(&child, duration, tree).unwrap_or((0.0, 0.0));
        return Action {
            think: format!(
                "The relevant moment should fall inside segment {child} ({a:.0}s to {b:.0}s); retrieving its caption."
            ),
            terminal: Terminal::Tool(ToolCall::GetCaption { path: child }),
        };
    }

    // tree exhausted without evidence; answer something rather than stall
    Action {
        think: "Nothing further to explore; committing to the best available option.".to_string(),
        terminal: Terminal::Answer(FinalAnswer::Choice(0)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, CorpusParams};
    use crate::orchestrator::{init_context, EpisodeConfig};
    use crate::tools::MockBackend;

    #[test]
    fn oracle_first_move_targets_max_overlap_level2_child() {
        let corpus = generate_corpus(7, 1, &CorpusParams::default()).unwrap();
        let rec = &corpus.videos[0];
        let (video, qa) = (&rec.video, &rec.qa[0]);
        let tree = TreeConfig::for_duration(video.duration_s).unwrap();
        let cfg = EpisodeConfig::default();
        let state = init_context(video, qa, &tree, &cfg, &MockBackend, 30).unwrap();
        let ctx = TurnContext {
            state: &state,
            video,
            qa,
            tree: &tree,
        };
        let action = scripted_oracle_action(&state, video, &qa.clue, &ctx);
        match action.terminal {
            Terminal::Tool(ToolCall::GetCaption { path }) => {
                assert_eq!(path.level(), 2);
                let ov = overlap_with_clue(&path, video.duration_s, &tree, &qa.clue);
                assert!(ov > 0.0, "first descent must overlap the clue");
            }
            other => panic!("expected a caption call, got {other:?}"),
        }
    }

    #[test]
    fn candidates_are_legal_and_ordered() {
        let corpus = generate_corpus(7, 1, &CorpusParams::default()).unwrap();
        let rec = &corpus.videos[0];
        let (video, qa) = (&rec.video, &rec.qa[0]);
        let tree = TreeConfig::for_duration(video.duration_s).unwrap();
        let cfg = EpisodeConfig::default();
        let state = init_context(video, qa, &tree, &cfg, &MockBackend, 30).unwrap();
        let candidates = enumerate_candidates(&state, &tree);
        // K visited level-1 nodes, K children each, plus the answer move
        assert_eq!(candidates.len(), tree.width * tree.width + 1);
        assert_eq!(candidates.last(), Some(&CandidateAction::Answer));
        for c in &candidates {
            if let CandidateAction::Caption(p) = c {
                let call = ToolCall::GetCaption { path: p.clone() };
                assert!(crate::orchestrator::enforce_legality(&state, &call, &tree).is_ok());
            }
        }
    }

    #[test]
    fn scripted_policy_errors_when_exhausted() {
        let corpus = generate_corpus(7, 1, &CorpusParams::default()).unwrap();
        let rec = &corpus.videos[0];
        let (video, qa) = (&rec.video, &rec.qa[0]);
        let tree = TreeConfig::for_duration(video.duration_s).unwrap();
        let cfg = EpisodeConfig::default();
        let state = init_context(video, qa, &tree, &cfg, &MockBackend, 30).unwrap();
        let ctx = TurnContext {
            state: &state,
            video,
            qa,
            tree: &tree,
        };
        let mut p = ScriptedPolicy::new(vec!["<think>a</think><answer>A</answer>".into()]);
        assert!(p.next_turn(&ctx).is_ok());
        assert!(matches!(
            p.next_turn(&ctx),
            Err(PolicyError::ScriptExhausted(1))
        ));
    }
}
