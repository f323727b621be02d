//! The two multimodal tool surfaces: clip captioning and leaf-level video
//! QA, plus per-episode cost metering.
//!
//! The mock backend answers purely from corpus annotations, so episodes are
//! deterministic and free; the HTTP backend (see [`crate::http`]) talks to
//! an OpenAI-compatible server. Both are metered per call category.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{GroundedQa, GroundedVideo};
use crate::protocol::choice_letter;
use crate::reward::IntervalSet;
use crate::tree::{frame_budget, interval_of, NodePath, TreeConfig, TreeError};

#[derive(Debug, Error)]
pub enum ToolError {
    #[error("tree error: {0}")]
    Tree(#[from] TreeError),
    #[error("video_qa is allowed only on lowest-level clips, got {0}")]
    NotALeaf(NodePath),
    #[error("wall time must be non-negative, got {0}")]
    NegativeTime(f64),
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("backend returned HTTP {status}: {message}")]
    Backend { status: u16, message: String },
    #[error("backend reply missing expected field: {0}")]
    MalformedReply(String),
    #[error("missing API key: set the {0} environment variable")]
    MissingApiKey(&'static str),
}

/// Output of one tool call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResult {
    pub text: String,
    pub node: NodePath,
    pub frames_used: u32,
    pub wall_time_s: f64,
    /// QA only: the tool declined to answer from this clip.
    pub is_idk: bool,
    /// Degraded-reply note, e.g. a caption reply without caption tags.
    pub warning: Option<String>,
}

/// Call category for cost accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostCategory {
    /// One reasoning round of the navigator.
    Round,
    /// One captioning call.
    Caption,
    /// One video-QA call.
    Qa,
}

/// Monotone per-episode counters and wall-time buckets: rounds (C1),
/// captions (C2), QA calls (C3).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostMeter {
    pub c1_rounds: u64,
    pub c2_captions: u64,
    pub c3_qa: u64,
    pub round_time_s: f64,
    pub caption_time_s: f64,
    pub qa_time_s: f64,
}

impl CostMeter {
    pub fn record(&mut self, category: CostCategory, wall_time_s: f64) -> Result<(), ToolError> {
        if wall_time_s < 0.0 {
            return Err(ToolError::NegativeTime(wall_time_s));
        }
        match category {
            CostCategory::Round => {
                self.c1_rounds += 1;
                self.round_time_s += wall_time_s;
            }
            CostCategory::Caption => {
                self.c2_captions += 1;
                self.caption_time_s += wall_time_s;
            }
            CostCategory::Qa => {
                self.c3_qa += 1;
                self.qa_time_s += wall_time_s;
            }
        }
        Ok(())
    }

    pub fn tool_calls(&self) -> u64 {
        self.c2_captions + self.c3_qa
    }

    pub fn measured_time_s(&self) -> f64 {
        self.round_time_s + self.caption_time_s + self.qa_time_s
    }
}

/// Per-level overrides for the tool schedules; defaults follow the tree
/// module's schedules.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToolConfig {
    pub frames: Option<Vec<u32>>,
    pub caption_words: Option<Vec<u32>>,
    /// Fraction of the clue that a leaf must cover before the QA mock
    /// answers instead of returning "I don't know".
    pub qa_coverage_threshold: f64,
}

impl Default for ToolConfig {
    fn default() -> Self {
        ToolConfig {
            frames: None,
            caption_words: None,
            qa_coverage_threshold: 0.5,
        }
    }
}

impl ToolConfig {
    pub fn frames_for(&self, level: usize) -> Result<u32, ToolError> {
        match &self.frames {
            Some(table) => table
                .get(level)
                .copied()
                .ok_or(ToolError::Tree(TreeError::LevelOutOfRange {
                    level,
                    max: table.len().saturating_sub(1),
                })),
            None => Ok(frame_budget(level)?),
        }
    }

    pub fn words_for(&self, level: usize) -> Result<u32, ToolError> {
        match &self.caption_words {
            Some(table) => table
                .get(level)
                .copied()
                .ok_or(ToolError::Tree(TreeError::LevelOutOfRange {
                    level,
                    max: table.len().saturating_sub(1),
                })),
            None => Ok(crate::tree::caption_word_budget(level)?),
        }
    }
}

/// A captioning/QA provider. Implementations must be safe to call from
/// concurrent episodes.
pub trait ToolBackend: Send + Sync {
    fn get_caption(
        &self,
        video: &GroundedVideo,
        node: &NodePath,
        tree: &TreeConfig,
        cfg: &ToolConfig,
    ) -> Result<ToolResult, ToolError>;

    fn video_qa(
        &self,
        video: &GroundedVideo,
        qa: &GroundedQa,
        node: &NodePath,
        query: &str,
        tree: &TreeConfig,
        cfg: &ToolConfig,
    ) -> Result<ToolResult, ToolError>;
}

/// Deterministic annotation-driven backend: captions list the events whose
/// intervals intersect the clip; QA answers with the ground-truth choice
/// when the leaf covers enough of the clue.
#[derive(Debug, Clone, Default)]
pub struct MockBackend;

impl MockBackend {
    pub fn caption_text(
        video: &GroundedVideo,
        node: &NodePath,
        tree: &TreeConfig,
        cfg: &ToolConfig,
    ) -> Result<String, ToolError> {
        let (start, end) = interval_of(node, video.duration_s, tree)?;
        let mut pieces = vec![format!("This clip spans {start:.1}s to {end:.1}s.")];
        let mut any = false;
        for event in &video.events {
            if event.start_s() < end && event.end_s() > start {
                any = true;
                let kws: Vec<&str> = event.keywords.iter().map(String::as_str).collect();
                pieces.push(format!(
                    "At {:.1}s, {} (keywords: {}).",
                    event.start_s(),
                    event.description,
                    kws.join(", ")
                ));
            }
        }
        if !any {
            pieces.push("No notable events occur in this segment.".to_string());
        }
        let full = pieces.join(" ");
        let budget = cfg.words_for(node.level())? as usize;
        let words: Vec<&str> = full.split_whitespace().collect();
        if words.len() > budget {
            Ok(words[..budget].join(" "))
        } else {
            Ok(full)
        }
    }

    /// Fraction of the clue covered by the node interval.
    pub fn clue_coverage(
        node_interval: (f64, f64),
        clue: &IntervalSet,
    ) -> Result<f64, ToolError> {
        let node_set = IntervalSet::single(node_interval.0, node_interval.1)
            .map_err(|_| ToolError::NegativeTime(node_interval.0))?;
        let total = clue.total_length();
        if total <= 0.0 {
            return Ok(0.0);
        }
        Ok(node_set.intersection_length(clue) / total)
    }
}

impl ToolBackend for MockBackend {
    fn get_caption(
        &self,
        video: &GroundedVideo,
        node: &NodePath,
        tree: &TreeConfig,
        cfg: &ToolConfig,
    ) -> Result<ToolResult, ToolError> {
        let text = Self::caption_text(video, node, tree, cfg)?;
        Ok(ToolResult {
            text,
            node: node.clone(),
            frames_used: cfg.frames_for(node.level().min(3))?,
            wall_time_s: 0.0,
            is_idk: false,
            warning: None,
        })
    }

    fn video_qa(
        &self,
        video: &GroundedVideo,
        qa: &GroundedQa,
        node: &NodePath,
        _query: &str,
        tree: &TreeConfig,
        cfg: &ToolConfig,
    ) -> Result<ToolResult, ToolError> {
        if !tree.is_leaf(node) {
            return Err(ToolError::NotALeaf(node.clone()));
        }
        let interval = interval_of(node, video.duration_s, tree)?;
        let coverage = Self::clue_coverage(interval, &qa.clue)?;
        // small slack so an exactly-half-covered clue stays answerable
        // despite floating-point interval arithmetic
        let (text, is_idk) = if coverage >= cfg.qa_coverage_threshold - 1e-9 {
            let letter = choice_letter(qa.answer_index);
            (
                format!("Answer: {letter}. {}", qa.choices[qa.answer_index]),
                false,
            )
        } else {
            ("I don't know.".to_string(), true)
        };
        Ok(ToolResult {
            text,
            node: node.clone(),
            frames_used: cfg.frames_for(node.level().min(3))?,
            wall_time_s: 0.0,
            is_idk,
            warning: None,
        })
    }
}

/// Parses the choice letter out of a mock QA answer of the form
/// `Answer: B. ...`.
pub fn parse_qa_answer(text: &str) -> Option<usize> {
    let rest = text.strip_prefix("Answer: ")?;
    let letter = rest.chars().next()?;
    if letter.is_ascii_uppercase() {
        Some((letter as u8 - b'A') as usize)
    } else {
        None
    }
}
