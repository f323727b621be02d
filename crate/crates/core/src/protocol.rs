//! Wire grammar of the navigation transcript.
//!
//! A policy turn is `<think>...</think>` followed by exactly one terminal:
//! either `<tool>...</tool>` carrying a `get_caption` / `video_qa` call, or
//! `<answer>...</answer>`. Segment ids are 1-based on the wire ("integer
//! from 1 to width") and 0-based internally; the conversion lives entirely
//! in this module's parse/render boundary.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tree::{NodePath, TreeConfig};

pub const THINK_OPEN: &str = "<think>";
pub const THINK_CLOSE: &str = "</think>";
pub const TOOL_OPEN: &str = "<tool>";
pub const TOOL_CLOSE: &str = "</tool>";
pub const ANSWER_OPEN: &str = "<answer>";
pub const ANSWER_CLOSE: &str = "</answer>";

#[derive(Debug, Error, PartialEq)]
pub enum ProtocolError {
    #[error("no tool/answer terminal in model output")]
    NoTerminal,
    #[error("ambiguous terminal: more than one tool/answer block")]
    AmbiguousTerminal,
    #[error("missing or empty <think> block")]
    MissingThink,
    #[error("malformed tool call at byte {offset}: {message}")]
    MalformedTool { offset: usize, message: String },
    #[error("unknown tool {name:?} at byte {offset}")]
    UnknownTool { name: String, offset: usize },
    #[error("wire segment id {index} out of range 1..={width} at byte {offset}")]
    WireIndexOutOfRange {
        index: i64,
        width: usize,
        offset: usize,
    },
    #[error("video_qa requires a non-empty query at byte {offset}")]
    EmptyQuery { offset: usize },
    #[error("empty answer body")]
    EmptyAnswer,
    #[error("unclosed {tag} block at byte {offset}")]
    UnclosedBlock { tag: &'static str, offset: usize },
    #[error("episode already has a final answer; no step may follow it")]
    StepAfterAnswer,
}

/// A parsed tool invocation with a 0-based internal path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ToolCall {
    GetCaption { path: NodePath },
    VideoQa { path: NodePath, query: String },
}

impl ToolCall {
    pub fn path(&self) -> &NodePath {
        match self {
            ToolCall::GetCaption { path } => path,
            ToolCall::VideoQa { path, .. } => path,
        }
    }
}

/// Final answer surface forms, normalized where possible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FinalAnswer {
    Choice(usize),
    Text(String),
}

/// What a policy turn resolves to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Terminal {
    Tool(ToolCall),
    Answer(FinalAnswer),
}

/// One parsed policy turn: reasoning plus exactly one terminal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub think: String,
    pub terminal: Terminal,
}

/// What came back for a step: tool output text, or the final answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Observation {
    Tool(String),
    Answer(FinalAnswer),
}

/// One reasoning round of an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub reasoning: String,
    pub observation: Observation,
    /// The raw tagged model output that produced this step.
    pub raw: String,
}

impl Step {
    pub fn is_answer(&self) -> bool {
        matches!(self.observation, Observation::Answer(_))
    }
}

/// A full transcript: seeded captions plus alternating reasoning/observation
/// steps, with at most one answer step, always last.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Episode {
    pub video_id: String,
    pub question: String,
    pub choices: Vec<String>,
    pub init_captions: Vec<(NodePath, String)>,
    pub steps: Vec<Step>,
}

impl Episode {
    pub fn push(&mut self, step: Step) -> Result<(), ProtocolError> {
        if self.steps.last().is_some_and(Step::is_answer) {
            return Err(ProtocolError::StepAfterAnswer);
        }
        self.steps.push(step);
        Ok(())
    }

    pub fn final_answer(&self) -> Option<&FinalAnswer> {
        match self.steps.last()?.observation {
            Observation::Answer(ref a) => Some(a),
            Observation::Tool(_) => None,
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Parser context: tree shape for wire-range checks, known answer options
/// for normalization, and think strictness.
#[derive(Debug, Clone)]
pub struct ParseConfig {
    pub width: usize,
    pub depth: usize,
    pub choices: Vec<String>,
    pub require_think: bool,
}

impl ParseConfig {
    pub fn new(cfg: &TreeConfig) -> Self {
        ParseConfig {
            width: cfg.width,
            depth: cfg.depth,
            choices: Vec::new(),
            require_think: true,
        }
    }

    pub fn with_choices(mut self, choices: &[String]) -> Self {
        self.choices = choices.to_vec();
        self
    }

    pub fn lenient(mut self) -> Self {
        self.require_think = false;
        self
    }
}

fn find_block(text: &str, from: usize, open: &str, close: &str) -> Option<(usize, usize)> {
    let start = text[from..].find(open)? + from;
    let body_start = start + open.len();
    let body_end = text[body_start..].find(close)? + body_start;
    Some((body_start, body_end))
}

/// Parses one model turn. Text outside the recognized tags is tolerated;
/// terminals are searched after the think block so that verbatim tool text
/// inside the reasoning does not count.
pub fn parse_action(model_output: &str, cfg: &ParseConfig) -> Result<Action, ProtocolError> {
    let think_block = find_block(model_output, 0, THINK_OPEN, THINK_CLOSE);
    let (think, scan_from) = match think_block {
        Some((start, end)) => (model_output[start..end].trim().to_string(), end + THINK_CLOSE.len()),
        None => (String::new(), 0),
    };

    let region = &model_output[scan_from..];
    let mut terminals: Vec<(usize, bool)> = Vec::new(); // (body_start abs, is_tool)
    let mut cursor = 0;
    while let Some((bs, _)) = find_block(region, cursor, TOOL_OPEN, TOOL_CLOSE) {
        terminals.push((bs + scan_from, true));
        cursor = bs;
    }
    cursor = 0;
    while let Some((bs, _)) = find_block(region, cursor, ANSWER_OPEN, ANSWER_CLOSE) {
        terminals.push((bs + scan_from, false));
        cursor = bs;
    }
    match terminals.len() {
        0 => return Err(ProtocolError::NoTerminal),
        1 => {}
        _ => return Err(ProtocolError::AmbiguousTerminal),
    }

    if cfg.require_think && think.is_empty() {
        return Err(ProtocolError::MissingThink);
    }

    let (body_start, is_tool) = terminals[0];
    let terminal = if is_tool {
        let (bs, be) = find_block(model_output, body_start - TOOL_OPEN.len(), TOOL_OPEN, TOOL_CLOSE)
            .expect("block located above");
        Terminal::Tool(parse_tool_body(&model_output[bs..be], bs, cfg)?)
    } else {
        let (bs, be) =
            find_block(model_output, body_start - ANSWER_OPEN.len(), ANSWER_OPEN, ANSWER_CLOSE)
                .expect("block located above");
        Terminal::Answer(normalize_answer(&model_output[bs..be], &cfg.choices)?)
    };

    Ok(Action { think, terminal })
}

struct Cursor<'a> {
    body: &'a str,
    pos: usize,
    base: usize,
}

impl<'a> Cursor<'a> {
    fn offset(&self) -> usize {
        self.base + self.pos
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.body[self.pos..].chars().next() {
            if !c.is_whitespace() {
                break;
            }
            self.pos += c.len_utf8();
        }
    }

    fn expect(&mut self, ch: char) -> Result<(), ProtocolError> {
        self.skip_ws();
        if self.body[self.pos..].starts_with(ch) {
            self.pos += ch.len_utf8();
            Ok(())
        } else {
            Err(ProtocolError::MalformedTool {
                offset: self.offset(),
                message: format!("expected {ch:?}"),
            })
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.body[self.pos..].chars().next()
    }

    fn read_int(&mut self) -> Result<i64, ProtocolError> {
        self.skip_ws();
        let start = self.pos;
        if self.body[self.pos..].starts_with('-') {
            self.pos += 1;
        }
        while self.body[self.pos..].starts_with(|c: char| c.is_ascii_digit()) {
            self.pos += 1;
        }
        self.body[start..self.pos]
            .parse()
            .map_err(|_| ProtocolError::MalformedTool {
                offset: self.base + start,
                message: "expected a segment id".into(),
            })
    }
}

fn parse_tool_body(body: &str, base: usize, cfg: &ParseConfig) -> Result<ToolCall, ProtocolError> {
    let mut cur = Cursor { body, pos: 0, base };
    cur.skip_ws();
    let name_start = cur.pos;
    while cur.body[cur.pos..].starts_with(|c: char| c.is_ascii_alphanumeric() || c == '_') {
        cur.pos += 1;
    }
    let name = &body[name_start..cur.pos];
    let is_caption = match name {
        "get_caption" => true,
        "video_qa" => false,
        other => {
            return Err(ProtocolError::UnknownTool {
                name: other.to_string(),
                offset: base + name_start,
            })
        }
    };

    cur.expect('(')?;
    cur.expect('(')?;
    let mut indices = Vec::new();
    loop {
        let id_offset = {
            cur.skip_ws();
            cur.offset()
        };
        let wire = cur.read_int()?;
        if wire < 1 || wire as usize > cfg.width {
            return Err(ProtocolError::WireIndexOutOfRange {
                index: wire,
                width: cfg.width,
                offset: id_offset,
            });
        }
        indices.push(wire as usize - 1);
        match cur.peek() {
            Some(',') => {
                cur.expect(',')?;
            }
            Some(')') => {
                cur.expect(')')?;
                break;
            }
            _ => {
                return Err(ProtocolError::MalformedTool {
                    offset: cur.offset(),
                    message: "expected ',' or ')' in segment tuple".into(),
                })
            }
        }
    }
    if indices.is_empty() || indices.len() > cfg.depth {
        return Err(ProtocolError::MalformedTool {
            offset: base,
            message: format!("segment tuple must have 1..={} ids, got {}", cfg.depth, indices.len()),
        });
    }

    if is_caption {
        cur.expect(')')?;
        cur.skip_ws();
        if cur.pos != body.len() {
            return Err(ProtocolError::MalformedTool {
                offset: cur.offset(),
                message: "trailing text after get_caption call".into(),
            });
        }
        Ok(ToolCall::GetCaption {
            path: NodePath::new(indices),
        })
    } else {
        if indices.len() != cfg.depth {
            return Err(ProtocolError::MalformedTool {
                offset: base,
                message: format!(
                    "video_qa addresses lowest-level segments: expected {} ids, got {}",
                    cfg.depth,
                    indices.len()
                ),
            });
        }
        cur.expect(',')?;
        let query_start = {
            cur.skip_ws();
            cur.pos
        };
        let close = body.rfind(')').ok_or(ProtocolError::MalformedTool {
            offset: base + body.len(),
            message: "missing closing ')' of video_qa".into(),
        })?;
        if close < query_start {
            return Err(ProtocolError::EmptyQuery { offset: base + query_start });
        }
        let query = body[query_start..close].trim().to_string();
        if query.is_empty() {
            return Err(ProtocolError::EmptyQuery { offset: base + query_start });
        }
        Ok(ToolCall::VideoQa {
            path: NodePath::new(indices),
            query,
        })
    }
}

/// Maps an answer body to a choice index where possible: a single letter
/// (A-Z), a bare 0-based index, or a verbatim option text. Anything else
/// stays free text.
fn normalize_answer(body: &str, choices: &[String]) -> Result<FinalAnswer, ProtocolError> {
    let t = body.trim();
    if t.is_empty() {
        return Err(ProtocolError::EmptyAnswer);
    }
    let known = |i: usize| choices.is_empty() || i < choices.len();
    let mut chars = t.chars();
    if let (Some(c), None) = (chars.next(), chars.next()) {
        if c.is_ascii_alphabetic() {
            let idx = (c.to_ascii_uppercase() as u8 - b'A') as usize;
            if known(idx) {
                return Ok(FinalAnswer::Choice(idx));
            }
        }
    }
    if t.chars().all(|c| c.is_ascii_digit()) {
        if let Ok(idx) = t.parse::<usize>() {
            if known(idx) {
                return Ok(FinalAnswer::Choice(idx));
            }
        }
    }
    if let Some(idx) = choices.iter().position(|c| c.eq_ignore_ascii_case(t)) {
        return Ok(FinalAnswer::Choice(idx));
    }
    Ok(FinalAnswer::Text(t.to_string()))
}

pub fn choice_letter(index: usize) -> char {
    assert!(index < 26, "choice index {index} beyond letter range");
    (b'A' + index as u8) as char
}

fn render_tool(call: &ToolCall) -> String {
    let wire = |path: &NodePath| {
        path.indices()
            .iter()
            .map(|i| (i + 1).to_string())
            .collect::<Vec<_>>()
            .join(",")
    };
    match call {
        ToolCall::GetCaption { path } => format!("get_caption(({}))", wire(path)),
        ToolCall::VideoQa { path, query } => format!("video_qa(({}), {})", wire(path), query),
    }
}

/// Canonical serialization of an action; `parse_action` inverts it.
pub fn render_action(action: &Action) -> String {
    let terminal = match &action.terminal {
        Terminal::Tool(call) => format!("{TOOL_OPEN}{}{TOOL_CLOSE}", render_tool(call)),
        Terminal::Answer(FinalAnswer::Choice(i)) => {
            format!("{ANSWER_OPEN}{}{ANSWER_CLOSE}", choice_letter(*i))
        }
        Terminal::Answer(FinalAnswer::Text(t)) => format!("{ANSWER_OPEN}{t}{ANSWER_CLOSE}"),
    };
    format!("{THINK_OPEN}{}{THINK_CLOSE}{terminal}", action.think)
}

/// Flat deterministic serialization of a transcript: question and options,
/// seeded captions in path order, then each turn followed by its
/// observation line (answer turns carry the answer in their own tags).
pub fn render_history(episode: &Episode) -> String {
    let mut out = String::new();
    out.push_str(&format!("Question: {}\n", episode.question));
    if !episode.choices.is_empty() {
        out.push_str("Options:\n");
        for (i, choice) in episode.choices.iter().enumerate() {
            out.push_str(&format!("{}. {}\n", choice_letter(i), choice));
        }
    }
    if !episode.init_captions.is_empty() {
        out.push_str("Initial captions:\n");
        for (path, text) in &episode.init_captions {
            out.push_str(&format!("[segment {path}] {text}\n"));
        }
    }
    for (i, step) in episode.steps.iter().enumerate() {
        out.push_str(&format!("Turn {}:\n{}\n", i + 1, step.raw));
        if let Observation::Tool(text) = &step.observation {
            out.push_str(&format!("Observation: {text}\n"));
        }
    }
    out
}

/// Reports non-whitespace text sitting outside the recognized tag blocks;
/// such text is tolerated by the parser, and these warnings are the
/// diagnostic surface for it.
pub fn stray_text_warnings(text: &str) -> Vec<String> {
    let mut covered = vec![false; text.len()];
    for (open, close, _) in TAG_PAIRS {
        let mut from = 0;
        while let Some((bs, be)) = find_block(text, from, open, close) {
            let start = bs - open.len();
            let end = be + close.len();
            for flag in covered[start..end].iter_mut() {
                *flag = true;
            }
            from = be + close.len();
        }
    }
    let mut warnings = Vec::new();
    let mut run_start: Option<usize> = None;
    for (i, byte) in text.bytes().enumerate() {
        let stray = !covered[i] && !byte.is_ascii_whitespace();
        match (stray, run_start) {
            (true, None) => run_start = Some(i),
            (false, Some(start)) if covered[i] => {
                warnings.push(stray_warning(text, start, i));
                run_start = None;
            }
            _ => {}
        }
    }
    if let Some(start) = run_start {
        warnings.push(stray_warning(text, start, text.len()));
    }
    warnings
}

fn stray_warning(text: &str, start: usize, end: usize) -> String {
    let snippet: String = text[start..end].trim().chars().take(40).collect();
    format!("ignored text outside tags at byte {start}: {snippet:?}")
}

/// Tag-balance diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub enum TagIssue {
    Nested,
    UnbalancedClose,
    UnbalancedOpen,
    MismatchedClose,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TagDiagnostic {
    pub offset: usize,
    pub tag: &'static str,
    pub issue: TagIssue,
}

impl std::fmt::Display for TagDiagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let what = match self.issue {
            TagIssue::Nested => "nested tag",
            TagIssue::UnbalancedClose => "close without open",
            TagIssue::UnbalancedOpen => "unclosed tag",
            TagIssue::MismatchedClose => "mismatched close",
        };
        write!(f, "{what} {} at byte {}", self.tag, self.offset)
    }
}

const TAG_PAIRS: [(&str, &str, &str); 3] = [
    (THINK_OPEN, THINK_CLOSE, "think"),
    (TOOL_OPEN, TOOL_CLOSE, "tool"),
    (ANSWER_OPEN, ANSWER_CLOSE, "answer"),
];

/// Scans for unbalanced, nested, or mismatched protocol tags. An empty
/// result means the tag structure is well-formed.
pub fn validate_tags(text: &str) -> Vec<TagDiagnostic> {
    #[derive(Clone, Copy)]
    enum Kind {
        Open(usize),
        Close(usize),
    }
    let mut marks: Vec<(usize, Kind)> = Vec::new();
    for (pair_idx, (open, close, _)) in TAG_PAIRS.iter().enumerate() {
        for (token, is_open) in [(*open, true), (*close, false)] {
            let mut from = 0;
            while let Some(at) = text[from..].find(token) {
                let abs = from + at;
                let kind = if is_open {
                    Kind::Open(pair_idx)
                } else {
                    Kind::Close(pair_idx)
                };
                marks.push((abs, kind));
                from = abs + 1;
            }
        }
    }
    marks.sort_by_key(|(off, _)| *off);

    let mut diags = Vec::new();
    let mut open: Option<(usize, usize)> = None; // (pair_idx, offset)
    for (offset, kind) in marks {
        match kind {
            Kind::Open(idx) => {
                if open.is_some() {
                    diags.push(TagDiagnostic {
                        offset,
                        tag: TAG_PAIRS[idx].2,
                        issue: TagIssue::Nested,
                    });
                } else {
                    open = Some((idx, offset));
                }
            }
            Kind::Close(idx) => match open.take() {
                Some((open_idx, _)) if open_idx == idx => {}
                Some(_) => diags.push(TagDiagnostic {
                    offset,
                    tag: TAG_PAIRS[idx].2,
                    issue: TagIssue::MismatchedClose,
                }),
                None => diags.push(TagDiagnostic {
                    offset,
                    tag: TAG_PAIRS[idx].2,
                    issue: TagIssue::UnbalancedClose,
                }),
            },
        }
    }
    if let Some((idx, offset)) = open {
        diags.push(TagDiagnostic {
            offset,
            tag: TAG_PAIRS[idx].2,
            issue: TagIssue::UnbalancedOpen,
        });
    }
    diags
}
