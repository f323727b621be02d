//! Runtime and simulator for budget-constrained hierarchical long-video QA.
//!
//! A long video is organized as a uniform K-ary tree over its timeline. An
//! agent navigates that tree with two tools (clip captioning and leaf-level
//! video QA), reasoning in a tagged think/tool/answer transcript until it
//! answers or exhausts its round budget. Episodes are scored with a composite
//! reward (answer correctness, temporal-grounding F1, repeat penalty), a
//! small softmax navigation policy is trained with group-relative policy
//! optimization on synthetic grounded corpora, and evaluation reports
//! accuracy against a modeled compute cost.

pub mod corpus;
pub mod datagen;
pub mod evalcost;
pub mod grpo;
pub mod http;
pub mod orchestrator;
pub mod policy;
pub mod protocol;
pub mod reward;
pub mod tools;
pub mod tree;

pub use corpus::{Corpus, CorpusParams, Event, GroundedQa, GroundedVideo, VideoRecord};
pub use protocol::{Action, Episode, FinalAnswer, Step, ToolCall};
pub use reward::{IntervalSet, RewardWeights};
pub use tree::{NodePath, TreeConfig};
