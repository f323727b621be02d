//! OpenAI-compatible HTTP backend for the two video tools, plus the
//! LLM-backed navigation policy.
//!
//! One chat-completion request per tool call. The server is expected to
//! resolve clip references (video id + time range) itself; this client only
//! builds prompts, meters wall time, and retries transport failures.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::corpus::{GroundedQa, GroundedVideo};
use crate::policy::{Policy, PolicyError, TurnContext};
use crate::protocol::{choice_letter, Observation};
use crate::tools::{ToolBackend, ToolConfig, ToolError, ToolResult};
use crate::tree::{interval_of, NodePath, TreeConfig};

/// Environment variable holding the API key. No key header is sent when it
/// is unset, which suits local keyless servers.
pub const API_KEY_ENV: &str = "VIDEONAV_API_KEY";

pub const CAPTION_OPEN: &str = "<caption>";
pub const CAPTION_CLOSE: &str = "</caption>";

/// Connection settings for an OpenAI-compatible chat-completions server.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ServerConfig {
    pub base_url: String,
    pub model: String,
    pub timeout_s: f64,
    pub max_retries: u32,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            base_url: "http://localhost:8000/v1".to_string(),
            model: "default".to_string(),
            timeout_s: 120.0,
            max_retries: 2,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ChatMessage {
    pub role: &'static str,
    pub content: String,
}

fn build_agent(cfg: &ServerConfig) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs_f64(cfg.timeout_s.max(0.001))))
        .build()
        .into()
}

/// Sends one chat-completion request, retrying transport failures with a
/// short backoff. HTTP status errors are not retried.
pub fn chat_completion(
    agent: &ureq::Agent,
    cfg: &ServerConfig,
    messages: &[ChatMessage],
) -> Result<String, ToolError> {
    let url = format!("{}/chat/completions", cfg.base_url.trim_end_matches('/'));
    let body = json!({
        "model": cfg.model,
        "messages": messages,
    });
    let api_key = std::env::var(API_KEY_ENV).ok();

    let mut attempt = 0;
    loop {
        attempt += 1;
        let mut request = agent.post(&url).header("content-type", "application/json");
        if let Some(key) = &api_key {
            request = request.header("authorization", &format!("Bearer {key}"));
        }
        match request.send_json(&body) {
            Ok(mut response) => {
                let value: serde_json::Value = response
                    .body_mut()
                    .read_json()
                    .map_err(|e| ToolError::MalformedReply(e.to_string()))?;
                let content = value
                    .pointer("/choices/0/message/content")
                    .and_then(|v| v.as_str())
                    .ok_or_else(|| {
                        ToolError::MalformedReply("choices[0].message.content".to_string())
                    })?;
                return Ok(content.to_string());
            }
            Err(ureq::Error::StatusCode(status)) => {
                return Err(ToolError::Backend {
                    status,
                    message: "chat completion rejected".to_string(),
                });
            }
            Err(err) => {
                if attempt > cfg.max_retries {
                    return Err(ToolError::Transport {
                        attempts: attempt,
                        message: err.to_string(),
                    });
                }
                std::thread::sleep(Duration::from_millis(100 * (1 << attempt.min(4))));
            }
        }
    }
}

/// Captioning prompt with the level's frame count and word budget filled in.
pub fn caption_prompt(num_frames: u32, num_words: u32) -> String {
    format!(
        "You are a video understanding expert. Create a detailed description with timestamp \
         information for the current video clip, whose frames are arranged in chronological order.\n\
         You are given {num_frames} uniformly sampled frames from the clip, along with the \
         timestamp (in seconds) of each frame within the entire video.\n\
         Description guidelines:\n\
         - Whenever reasonable, include the provided absolute timestamps in your description.\n\
         - Merge frames that depict one continuous action into a single description.\n\
         - Your output should be around {num_words} words.\n\
         Output format: wrap your response in {CAPTION_OPEN}{CAPTION_CLOSE} tags, as in \
         \"{CAPTION_OPEN}This clip ...{CAPTION_CLOSE}\"."
    )
}

/// QA prompt: the caption prompt's clip framing with the question appended.
pub fn qa_prompt(num_frames: u32, question: &str) -> String {
    format!(
        "You are a video understanding expert. You are given {num_frames} uniformly sampled \
         frames from a video clip, along with the timestamp (in seconds) of each frame within \
         the entire video.\n\
         Answer the following question using only what is visible in this clip. If the clip \
         does not contain the information needed, answer exactly \"I don't know\".\n\
         Question: {question}"
    )
}

/// System prompt for the LLM navigator: hierarchy description, tool rules,
/// and the think/tool/answer format, with the tree width filled in.
pub fn navigator_system_prompt(width: usize) -> String {
    format!(
        "You are a reasoning assistant that answers questions about a long video through \
         hierarchical captions. The video is organized into three levels of temporal \
         granularity: the video is divided into {width} high-level segments, each high-level \
         segment into {width} medium-level sub-segments, and each medium-level segment into \
         {width} low-level sub-segments.\n\
         At the beginning you are given only the high-level captions. Answer the question as \
         accurately as possible.\n\
         Rules:\n\
         1. Reason first: analyze whether the captions you already have are sufficient.\n\
         2. If sufficient, give your final answer inside <answer></answer> tags.\n\
         3. If insufficient, request more information with exactly one tool call per round:\n\
            - <tool>get_caption((high_id, medium_id, low_id))</tool> returns a finer caption. \
         Each id is an integer from 1 to {width}. Provide one id for a high-level segment, two \
         for a medium-level segment, three for a low-level segment. A segment may be requested \
         only after its parent has been traversed.\n\
            - <tool>video_qa((high_id, medium_id, low_id), query)</tool> sends the low-level \
         segment to a video QA module. Use it only after retrieving that segment's low-level \
         caption.\n\
         4. Every turn must start with your reasoning inside <think></think> tags, followed by \
         exactly one <tool></tool> or <answer></answer> block."
    )
}

/// Tool backend that forwards caption/QA calls to a chat-completions server.
pub struct HttpBackend {
    cfg: ServerConfig,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(cfg: ServerConfig) -> Self {
        let agent = build_agent(&cfg);
        HttpBackend { cfg, agent }
    }

    fn clip_reference(video: &GroundedVideo, node: &NodePath, interval: (f64, f64)) -> String {
        format!(
            "Video: {}\nSegment: {}\nClip time range: [{:.1}s, {:.1}s)",
            video.id, node, interval.0, interval.1
        )
    }
}

impl ToolBackend for HttpBackend {
    fn get_caption(
        &self,
        video: &GroundedVideo,
        node: &NodePath,
        tree: &TreeConfig,
        cfg: &ToolConfig,
    ) -> Result<ToolResult, ToolError> {
        let level = node.level().min(3);
        let frames = cfg.frames_for(level)?;
        let words = cfg.words_for(level)?;
        let interval = interval_of(node, video.duration_s, tree)?;
        let messages = [
            ChatMessage {
                role: "system",
                content: caption_prompt(frames, words),
            },
            ChatMessage {
                role: "user",
                content: Self::clip_reference(video, node, interval),
            },
        ];
        let started = Instant::now();
        let reply = chat_completion(&self.agent, &self.cfg, &messages)?;
        let wall = started.elapsed().as_secs_f64();
        let (text, warning) = match extract_caption(&reply) {
            Some(caption) => (caption.to_string(), None),
            None => (
                reply.clone(),
                Some("caption tags missing in reply; using full text".to_string()),
            ),
        };
        Ok(ToolResult {
            text,
            node: node.clone(),
            frames_used: frames,
            wall_time_s: wall,
            is_idk: false,
            warning,
        })
    }

    fn video_qa(
        &self,
        video: &GroundedVideo,
        _qa: &GroundedQa,
        node: &NodePath,
        query: &str,
        tree: &TreeConfig,
        cfg: &ToolConfig,
    ) -> Result<ToolResult, ToolError> {
        if !tree.is_leaf(node) {
            return Err(ToolError::NotALeaf(node.clone()));
        }
        let level = node.level().min(3);
        let frames = cfg.frames_for(level)?;
        let interval = interval_of(node, video.duration_s, tree)?;
        let messages = [
            ChatMessage {
                role: "system",
                content: qa_prompt(frames, query),
            },
            ChatMessage {
                role: "user",
                content: Self::clip_reference(video, node, interval),
            },
        ];
        let started = Instant::now();
        let reply = chat_completion(&self.agent, &self.cfg, &messages)?;
        let wall = started.elapsed().as_secs_f64();
        let is_idk = reply.to_lowercase().contains("i don't know");
        Ok(ToolResult {
            text: reply,
            node: node.clone(),
            frames_used: frames,
            wall_time_s: wall,
            is_idk,
            warning: None,
        })
    }
}

fn extract_caption(reply: &str) -> Option<&str> {
    let start = reply.find(CAPTION_OPEN)? + CAPTION_OPEN.len();
    let end = reply[start..].find(CAPTION_CLOSE)? + start;
    Some(reply[start..end].trim())
}

/// Navigation policy backed by a chat-completions server: the transcript is
/// replayed as a chat and the reply is the next raw turn.
pub struct LlmPolicy {
    cfg: ServerConfig,
    agent: ureq::Agent,
}

impl LlmPolicy {
    pub fn new(cfg: ServerConfig) -> Self {
        let agent = build_agent(&cfg);
        LlmPolicy { cfg, agent }
    }

    fn build_messages(ctx: &TurnContext) -> Vec<ChatMessage> {
        let episode = &ctx.state.history;
        let mut first_user = format!("Question: {}\n", episode.question);
        if !episode.choices.is_empty() {
            first_user.push_str("Options:\n");
            for (i, choice) in episode.choices.iter().enumerate() {
                first_user.push_str(&format!("{}. {}\n", choice_letter(i), choice));
            }
        }
        first_user.push_str("Initial captions:\n");
        for (path, text) in &episode.init_captions {
            first_user.push_str(&format!("[segment {path}] {text}\n"));
        }

        let mut messages = vec![
            ChatMessage {
                role: "system",
                content: navigator_system_prompt(ctx.tree.width),
            },
            ChatMessage {
                role: "user",
                content: first_user,
            },
        ];
        for step in &episode.steps {
            messages.push(ChatMessage {
                role: "assistant",
                content: step.raw.clone(),
            });
            if let Observation::Tool(text) = &step.observation {
                messages.push(ChatMessage {
                    role: "user",
                    content: format!("Observation: {text}"),
                });
            }
        }
        messages
    }
}

impl Policy for LlmPolicy {
    fn next_turn(&mut self, ctx: &TurnContext) -> Result<String, PolicyError> {
        let messages = Self::build_messages(ctx);
        Ok(chat_completion(&self.agent, &self.cfg, &messages)?)
    }
}
