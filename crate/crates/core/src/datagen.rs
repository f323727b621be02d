//! Supervised-trajectory synthesis: drive a teacher policy through the
//! navigation loop, verify the outcome against the ground truth, and
//! escalate clue-grounded hints when the teacher fails.
//!
//! Hints steer the teacher's context only. Emitted training text is built
//! from the episode transcript, which never contains the injected hint
//! sentences, and emission re-audits that as a hard check.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, GroundedQa, GroundedVideo};
use crate::orchestrator::{
    enforce_legality, init_context, run_episode, EpisodeConfig, InitMode, OrchestratorError,
};
use crate::policy::{OraclePolicy, Policy};
use crate::protocol::{
    choice_letter, parse_action, validate_tags, Episode, FinalAnswer, Observation, ParseConfig,
    Terminal,
};
use crate::tools::{MockBackend, ToolBackend};
use crate::tree::{children, interval_of, NodePath, TreeConfig, TreeError};

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("hint level {level} exceeds the maximum escalation depth {max}")]
    HintLevelExceeded { level: usize, max: usize },
    #[error("hint level must be at least 1")]
    HintLevelZero,
    #[error("episode failed: {0}")]
    Episode(#[from] OrchestratorError),
    #[error("tree error: {0}")]
    Tree(#[from] TreeError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
    #[error("unverified trajectory for {video_id} qa {qa_index} passed to emission")]
    UnverifiedEmission { video_id: String, qa_index: usize },
    #[error("hint text leaked into emitted trajectory for {video_id}")]
    HintLeak { video_id: String },
    #[error("generation task failed: {0}")]
    Task(String),
}

/// One escalation step: the level reached and the sentence injected into
/// the teacher's context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HintState {
    pub level: usize,
    pub injected_text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeacherKind {
    Oracle,
    Llm,
    Scripted,
}

/// A teacher builds a fresh policy per attempt, optionally conditioned on
/// the current hint.
pub trait Teacher: Sync {
    fn kind(&self) -> TeacherKind;
    fn make_policy(&self, hint: Option<&HintState>) -> Box<dyn Policy>;
}

/// The clue-guided oracle teacher; it needs no hints.
pub struct OracleTeacher;

impl Teacher for OracleTeacher {
    fn kind(&self) -> TeacherKind {
        TeacherKind::Oracle
    }

    fn make_policy(&self, _hint: Option<&HintState>) -> Box<dyn Policy> {
        Box::new(OraclePolicy::new())
    }
}

/// A finished generation attempt.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub episode: Episode,
    pub video_id: String,
    pub qa_index: usize,
    pub teacher: TeacherKind,
    pub hint_level_used: usize,
    pub verified: bool,
    /// Hints injected across all attempts, kept for the leak audit.
    pub hints_used: Vec<HintState>,
}

#[derive(Debug, Clone)]
pub struct DatagenConfig {
    pub episode: EpisodeConfig,
    pub max_hint_level: usize,
}

impl Default for DatagenConfig {
    fn default() -> Self {
        DatagenConfig {
            episode: EpisodeConfig {
                init_mode: InitMode::FirstLevel,
                ..EpisodeConfig::default()
            },
            max_hint_level: 2,
        }
    }
}

/// Descends from the root picking the child with the largest clue overlap
/// at each level, down to `target_level`.
fn best_path_at_level(
    qa: &GroundedQa,
    target_level: usize,
    tree: &TreeConfig,
    duration_s: f64,
) -> Result<NodePath, DatagenError> {
    let mut node = NodePath::root();
    for _ in 0..target_level {
        let mut best: Option<(f64, NodePath)> = None;
        for child in children(&node, tree)? {
            let (a, b) = interval_of(&child, duration_s, tree)?;
            let overlap = crate::reward::IntervalSet::single(a, b)
                .map(|iv| iv.intersection_length(&qa.clue))
                .unwrap_or(0.0);
            if best.as_ref().map(|(bo, _)| overlap > *bo).unwrap_or(true) {
                best = Some((overlap, child));
            }
        }
        node = best.expect("non-leaf nodes have children").1;
    }
    Ok(node)
}

/// Builds the hint for an escalation level: level 1 names the top-level
/// segment with the largest clue overlap, level 2 (and beyond) names the
/// best leaf triple and quotes the event description.
pub fn escalate_hint(
    qa: &GroundedQa,
    level: usize,
    tree: &TreeConfig,
    duration_s: f64,
    max_level: usize,
) -> Result<HintState, DatagenError> {
    if level == 0 {
        return Err(DatagenError::HintLevelZero);
    }
    if level > max_level {
        return Err(DatagenError::HintLevelExceeded {
            level,
            max: max_level,
        });
    }
    let text = if level == 1 {
        let path = best_path_at_level(qa, 1, tree, duration_s)?;
        let (a, b) = interval_of(&path, duration_s, tree)?;
        let extra = qa.hint_texts.first().map(String::as_str).unwrap_or("");
        format!(
            "Hint: the relevant content lies in high-level segment {path} (covering {a:.0}s to {b:.0}s). {extra}"
        )
    } else {
        let path = best_path_at_level(qa, tree.depth, tree, duration_s)?;
        let (a, b) = interval_of(&path, duration_s, tree)?;
        let extra = qa.hint_texts.last().map(String::as_str).unwrap_or("");
        format!("Hint: focus on segment {path} (covering {a:.0}s to {b:.0}s), where {extra}.")
    };
    Ok(HintState {
        level,
        injected_text: text,
    })
}

fn answer_matches(episode: &Episode, qa: &GroundedQa) -> bool {
    match episode.final_answer() {
        Some(FinalAnswer::Choice(i)) => *i == qa.answer_index,
        Some(FinalAnswer::Text(t)) => qa.choices[qa.answer_index].eq_ignore_ascii_case(t.trim()),
        None => false,
    }
}

/// Runs the teacher on one task, escalating hints until the answer
/// verifies or escalation is exhausted. Each attempt restarts the episode
/// from scratch with the new hint in the teacher's context.
pub fn generate_trajectory(
    video: &GroundedVideo,
    qa: &GroundedQa,
    qa_index: usize,
    teacher: &dyn Teacher,
    backend: &dyn ToolBackend,
    cfg: &DatagenConfig,
) -> Result<Trajectory, DatagenError> {
    let tree = match cfg.episode.tree {
        Some(t) => t,
        None => TreeConfig::for_duration(video.duration_s)?,
    };
    let mut hints_used: Vec<HintState> = Vec::new();
    let mut last_episode: Option<Episode> = None;
    for level in 0..=cfg.max_hint_level {
        if level > 0 {
            hints_used.push(escalate_hint(
                qa,
                level,
                &tree,
                video.duration_s,
                cfg.max_hint_level,
            )?);
        }
        let mut policy = teacher.make_policy(hints_used.last());
        let result = run_episode(video, qa, policy.as_mut(), backend, &cfg.episode)?;
        if answer_matches(&result.episode, qa) {
            return Ok(Trajectory {
                episode: result.episode,
                video_id: video.id.clone(),
                qa_index,
                teacher: teacher.kind(),
                hint_level_used: level,
                verified: true,
                hints_used,
            });
        }
        last_episode = Some(result.episode);
    }
    Ok(Trajectory {
        episode: last_episode.expect("at least one attempt ran"),
        video_id: video.id.clone(),
        qa_index,
        teacher: teacher.kind(),
        hint_level_used: cfg.max_hint_level,
        verified: false,
        hints_used,
    })
}

/// Full verification: the answer matches the ground truth, every turn's
/// tags are well formed, and a replay of the tool calls against the mock
/// backend is legal at each step and reproduces the recorded observations.
pub fn verify_trajectory(
    traj: &Trajectory,
    qa: &GroundedQa,
    video: &GroundedVideo,
    cfg: &DatagenConfig,
) -> Result<bool, DatagenError> {
    if !answer_matches(&traj.episode, qa) {
        return Ok(false);
    }
    for step in &traj.episode.steps {
        if !validate_tags(&step.raw).is_empty() {
            return Ok(false);
        }
    }
    let tree = match cfg.episode.tree {
        Some(t) => t,
        None => TreeConfig::for_duration(video.duration_s)?,
    };
    let mut state =
        init_context(video, qa, &tree, &cfg.episode, &MockBackend, cfg.episode.budget)?;
    let parse_cfg = ParseConfig::new(&tree).with_choices(&qa.choices);
    for step in &traj.episode.steps {
        let action = match parse_action(&step.raw, &parse_cfg) {
            Ok(a) => a,
            Err(_) => return Ok(false),
        };
        match action.terminal {
            Terminal::Answer(_) => {}
            Terminal::Tool(call) => {
                if enforce_legality(&state, &call, &tree).is_err() {
                    return Ok(false);
                }
                let replayed = match &call {
                    crate::protocol::ToolCall::GetCaption { path } => {
                        MockBackend.get_caption(video, path, &tree, &cfg.episode.tool)
                    }
                    crate::protocol::ToolCall::VideoQa { path, query } => {
                        MockBackend.video_qa(video, qa, path, query, &tree, &cfg.episode.tool)
                    }
                };
                let replayed = match replayed {
                    Ok(r) => r,
                    Err(_) => return Ok(false),
                };
                if let Observation::Tool(recorded) = &step.observation {
                    if recorded != &replayed.text {
                        return Ok(false);
                    }
                }
                state.visited.insert(call.path().clone());
            }
        }
    }
    Ok(true)
}

/// One emitted SFT conversation line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SftRecord {
    pub video_id: String,
    pub question: String,
    pub turns: Vec<SftTurn>,
    pub answer_index: usize,
    pub steps: usize,
    pub hint_level_used: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SftTurn {
    pub role: String,
    pub tagged_text: String,
}

fn first_user_turn(episode: &Episode) -> String {
    let mut text = format!("Question: {}\n", episode.question);
    if !episode.choices.is_empty() {
        text.push_str("Options:\n");
        for (i, choice) in episode.choices.iter().enumerate() {
            text.push_str(&format!("{}. {}\n", choice_letter(i), choice));
        }
    }
    text.push_str("Initial captions:\n");
    for (path, caption) in &episode.init_captions {
        text.push_str(&format!("[segment {path}] {caption}\n"));
    }
    text
}

fn to_sft_record(traj: &Trajectory, qa: &GroundedQa) -> SftRecord {
    let mut turns = vec![SftTurn {
        role: "user".to_string(),
        tagged_text: first_user_turn(&traj.episode),
    }];
    for step in &traj.episode.steps {
        turns.push(SftTurn {
            role: "assistant".to_string(),
            tagged_text: step.raw.clone(),
        });
        if let Observation::Tool(obs) = &step.observation {
            turns.push(SftTurn {
                role: "user".to_string(),
                tagged_text: format!("Observation: {obs}"),
            });
        }
    }
    SftRecord {
        video_id: traj.video_id.clone(),
        question: traj.episode.question.clone(),
        turns,
        answer_index: qa.answer_index,
        steps: traj.episode.steps.len(),
        hint_level_used: traj.hint_level_used,
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EmitStats {
    pub emitted: usize,
    pub mean_steps: f64,
}

/// Writes verified trajectories as line-delimited SFT conversations.
/// Rejects unverified input and re-audits that no injected hint sentence
/// appears anywhere in the emitted text.
pub fn emit_sft(
    trajectories: &[(&Trajectory, &GroundedQa)],
    path: &Path,
) -> Result<EmitStats, DatagenError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut total_steps = 0usize;
    for (traj, qa) in trajectories {
        if !traj.verified {
            return Err(DatagenError::UnverifiedEmission {
                video_id: traj.video_id.clone(),
                qa_index: traj.qa_index,
            });
        }
        let record = to_sft_record(traj, qa);
        let line = serde_json::to_string(&record)?;
        for hint in &traj.hints_used {
            if line.contains(&hint.injected_text) {
                return Err(DatagenError::HintLeak {
                    video_id: traj.video_id.clone(),
                });
            }
        }
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
        total_steps += record.steps;
    }
    out.flush()?;
    let emitted = trajectories.len();
    Ok(EmitStats {
        emitted,
        mean_steps: if emitted > 0 {
            total_steps as f64 / emitted as f64
        } else {
            0.0
        },
    })
}

pub fn load_sft(path: &Path) -> Result<Vec<SftRecord>, DatagenError> {
    let text = std::fs::read_to_string(path)?;
    let mut records = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(line)?);
    }
    Ok(records)
}

/// Result of a corpus-wide generation run.
pub struct DatagenRun {
    pub verified: Vec<Trajectory>,
    /// Escalation-exhausted trajectories, kept for inspection.
    pub quarantined: Vec<Trajectory>,
}

/// Generates one trajectory per (video, question) task, in parallel, in
/// corpus order.
pub fn generate_for_corpus(
    corpus: &Corpus,
    teacher: &dyn Teacher,
    backend: &dyn ToolBackend,
    cfg: &DatagenConfig,
) -> Result<DatagenRun, DatagenError> {
    let tasks: Vec<(&GroundedVideo, usize, &GroundedQa)> = corpus.tasks().collect();
    let results: Vec<Result<Trajectory, String>> = tasks
        .par_iter()
        .map(|(video, qa_index, qa)| {
            generate_trajectory(video, qa, *qa_index, teacher, backend, cfg)
                .map_err(|e| e.to_string())
        })
        .collect();
    let mut verified = Vec::new();
    let mut quarantined = Vec::new();
    for result in results {
        let traj = result.map_err(DatagenError::Task)?;
        if traj.verified {
            verified.push(traj);
        } else {
            quarantined.push(traj);
        }
    }
    Ok(DatagenRun {
        verified,
        quarantined,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, CorpusParams};
    use crate::protocol::render_action;

    fn corpus_one() -> Corpus {
        generate_corpus(31, 1, &CorpusParams::default()).unwrap()
    }

    #[test]
    fn oracle_teacher_verifies_at_hint_level_zero() {
        let corpus = corpus_one();
        let rec = &corpus.videos[0];
        let traj = generate_trajectory(
            &rec.video,
            &rec.qa[0],
            0,
            &OracleTeacher,
            &MockBackend,
            &DatagenConfig::default(),
        )
        .unwrap();
        assert!(traj.verified);
        assert_eq!(traj.hint_level_used, 0);
        assert!(traj.hints_used.is_empty());
        let cfg = DatagenConfig::default();
        assert!(verify_trajectory(&traj, &rec.qa[0], &rec.video, &cfg).unwrap());
    }

    /// Answers a fixed wrong text without a hint; plays the oracle once any
    /// hint arrives.
    struct WrongThenHinted;

    impl Teacher for WrongThenHinted {
        fn kind(&self) -> TeacherKind {
            TeacherKind::Scripted
        }

        fn make_policy(&self, hint: Option<&HintState>) -> Box<dyn Policy> {
            match hint {
                Some(_) => Box::new(OraclePolicy::new()),
                None => Box::new(crate::policy::ScriptedPolicy::new(vec![
                    "<think>confident</think><answer>wrong answer text</answer>".to_string(),
                ])),
            }
        }
    }

    /// Never answers correctly regardless of hints.
    struct AlwaysWrong;

    impl Teacher for AlwaysWrong {
        fn kind(&self) -> TeacherKind {
            TeacherKind::Scripted
        }

        fn make_policy(&self, _hint: Option<&HintState>) -> Box<dyn Policy> {
            Box::new(crate::policy::ScriptedPolicy::new(vec![
                "<think>sure</think><answer>not an option</answer>".to_string(),
            ]))
        }
    }

    #[test]
    fn failed_teacher_recovers_at_hint_level_one() {
        let corpus = corpus_one();
        let rec = &corpus.videos[0];
        let traj = generate_trajectory(
            &rec.video,
            &rec.qa[0],
            0,
            &WrongThenHinted,
            &MockBackend,
            &DatagenConfig::default(),
        )
        .unwrap();
        assert!(traj.verified);
        assert_eq!(traj.hint_level_used, 1);
        assert_eq!(traj.hints_used.len(), 1);
    }

    #[test]
    fn hopeless_teacher_exhausts_escalation_unverified() {
        let corpus = corpus_one();
        let rec = &corpus.videos[0];
        let traj = generate_trajectory(
            &rec.video,
            &rec.qa[0],
            0,
            &AlwaysWrong,
            &MockBackend,
            &DatagenConfig::default(),
        )
        .unwrap();
        assert!(!traj.verified);
        assert_eq!(traj.hint_level_used, 2);
        assert_eq!(traj.hints_used.len(), 2);
    }

    #[test]
    fn hint_escalation_names_overlapping_segments() {
        let corpus = corpus_one();
        let rec = &corpus.videos[0];
        let qa = &rec.qa[0];
        let duration = rec.video.duration_s;
        let tree = TreeConfig::for_duration(duration).unwrap();

        let h1 = escalate_hint(qa, 1, &tree, duration, 2).unwrap();
        assert_eq!(h1.level, 1);
        assert!(h1.injected_text.contains("high-level segment"), "{}", h1.injected_text);
        // the named level-1 segment contains the clue midpoint
        let (c0, c1) = qa.clue.intervals()[0];
        let mid = (c0 + c1) / 2.0;
        let seg = (mid / (duration / tree.width as f64)).floor() as usize;
        assert!(
            h1.injected_text.contains(&format!("segment ({})", seg + 1)),
            "{}",
            h1.injected_text
        );

        let h2 = escalate_hint(qa, 2, &tree, duration, 2).unwrap();
        assert!(h2.injected_text.contains("focus on segment"));
        // events are leaf-aligned, so the named leaf covers the whole clue
        let leaf = best_path_at_level(qa, tree.depth, &tree, duration).unwrap();
        let (a, b) = interval_of(&leaf, duration, &tree).unwrap();
        assert!(a <= c0 + 1e-9 && c1 <= b + 1e-9, "leaf [{a},{b}) vs clue [{c0},{c1})");
        assert!(h2.injected_text.contains(&leaf.to_string()));

        assert!(matches!(
            escalate_hint(qa, 3, &tree, duration, 2),
            Err(DatagenError::HintLevelExceeded { level: 3, max: 2 })
        ));
        assert!(matches!(
            escalate_hint(qa, 0, &tree, duration, 2),
            Err(DatagenError::HintLevelZero)
        ));
    }

    #[test]
    fn replay_rejects_tampered_observations() {
        let corpus = corpus_one();
        let rec = &corpus.videos[0];
        let cfg = DatagenConfig::default();
        let mut traj = generate_trajectory(
            &rec.video,
            &rec.qa[0],
            0,
            &OracleTeacher,
            &MockBackend,
            &cfg,
        )
        .unwrap();
        for step in traj.episode.steps.iter_mut() {
            if let Observation::Tool(t) = &mut step.observation {
                t.push_str(" tampered");
                break;
            }
        }
        assert!(!verify_trajectory(&traj, &rec.qa[0], &rec.video, &cfg).unwrap());
    }

    #[test]
    fn replay_rejects_illegal_calls() {
        let corpus = corpus_one();
        let rec = &corpus.videos[0];
        let cfg = DatagenConfig::default();
        let mut traj = generate_trajectory(
            &rec.video,
            &rec.qa[0],
            0,
            &OracleTeacher,
            &MockBackend,
            &cfg,
        )
        .unwrap();
        // replace the first tool call with a deep jump whose parent was
        // never captioned
        let action = crate::protocol::Action {
            think: "jump".into(),
            terminal: Terminal::Tool(crate::protocol::ToolCall::GetCaption {
                path: NodePath::new([0, 0, 0]),
            }),
        };
        traj.episode.steps[0].raw = render_action(&action);
        assert!(!verify_trajectory(&traj, &rec.qa[0], &rec.video, &cfg).unwrap());
    }

    #[test]
    fn emission_round_trips_and_audits_hints() {
        let corpus = generate_corpus(33, 5, &CorpusParams::default()).unwrap();
        let run = generate_for_corpus(
            &corpus,
            &OracleTeacher,
            &MockBackend,
            &DatagenConfig::default(),
        )
        .unwrap();
        assert_eq!(run.verified.len(), corpus.task_count());
        assert!(run.quarantined.is_empty());

        let qa_of = |traj: &Trajectory| -> &GroundedQa {
            let rec = corpus
                .videos
                .iter()
                .find(|r| r.video.id == traj.video_id)
                .unwrap();
            &rec.qa[traj.qa_index]
        };
        let pairs: Vec<(&Trajectory, &GroundedQa)> =
            run.verified.iter().map(|t| (t, qa_of(t))).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sft.jsonl");
        let stats = emit_sft(&pairs, &path).unwrap();
        assert_eq!(stats.emitted, corpus.task_count());
        assert!(stats.mean_steps >= 3.0, "oracle episodes take several steps");

        let records = load_sft(&path).unwrap();
        assert_eq!(records.len(), stats.emitted);
        // every assistant turn parses back through the protocol
        for record in &records {
            let video = &corpus
                .videos
                .iter()
                .find(|r| r.video.id == record.video_id)
                .unwrap()
                .video;
            let tree = TreeConfig::for_duration(video.duration_s).unwrap();
            let parse_cfg = ParseConfig::new(&tree);
            for turn in record.turns.iter().filter(|t| t.role == "assistant") {
                parse_action(&turn.tagged_text, &parse_cfg).unwrap();
            }
        }
    }

    #[test]
    fn emission_rejects_unverified_trajectories() {
        let corpus = corpus_one();
        let rec = &corpus.videos[0];
        let traj = generate_trajectory(
            &rec.video,
            &rec.qa[0],
            0,
            &AlwaysWrong,
            &MockBackend,
            &DatagenConfig::default(),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sft.jsonl");
        let pairs = vec![(&traj, &rec.qa[0])];
        assert!(matches!(
            emit_sft(&pairs, &path),
            Err(DatagenError::UnverifiedEmission { .. })
        ));
    }

    #[test]
    fn hinted_trajectories_do_not_leak_hint_text() {
        let corpus = corpus_one();
        let rec = &corpus.videos[0];
        let traj = generate_trajectory(
            &rec.video,
            &rec.qa[0],
            0,
            &WrongThenHinted,
            &MockBackend,
            &DatagenConfig::default(),
        )
        .unwrap();
        assert_eq!(traj.hint_level_used, 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sft.jsonl");
        emit_sft(&[(&traj, &rec.qa[0])], &path).unwrap();
        let emitted = std::fs::read_to_string(&path).unwrap();
        for hint in &traj.hints_used {
            assert!(!emitted.contains(&hint.injected_text));
        }
    }
}
