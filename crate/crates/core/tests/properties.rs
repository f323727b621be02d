//! Property tests for the quantified invariants: tree partition laws,
//! interval-set algebra, reward bounds, protocol round-trips, and episode
//! termination.

use proptest::prelude::*;

use videonav::corpus::{generate_corpus, CorpusParams};
use videonav::orchestrator::{run_episode, EpisodeConfig, Outcome};
use videonav::policy::UniformRandomPolicy;
use videonav::protocol::{parse_action, render_action, Action, FinalAnswer, ParseConfig, Terminal, ToolCall};
use videonav::reward::{location_reward, IntervalSet};
use videonav::tools::MockBackend;
use videonav::tree::{interval_of, NodePath, TreeConfig};

proptest! {
    /// The parser never panics: arbitrary input yields an action or a
    /// diagnosed error.
    #[test]
    fn parser_totality(text in ".{0,200}", width in 2usize..=16) {
        let cfg = ParseConfig {
            width,
            depth: 3,
            choices: Vec::new(),
            require_think: false,
        };
        let _ = parse_action(&text, &cfg);
    }

    /// With the derived width, leaf length stays within a factor of two of
    /// the target for durations of at least 64 s.
    #[test]
    fn leaf_length_within_factor_two(duration in 64.0..100_000.0f64) {
        let cfg = TreeConfig::for_duration(duration).unwrap();
        let leaf_len = duration / cfg.leaf_count() as f64;
        prop_assert!(
            (8.0..=32.0).contains(&leaf_len),
            "duration {duration}: width {} gives leaf length {leaf_len}",
            cfg.width
        );
    }

    /// Every node's interval is contained in its parent's.
    #[test]
    fn monotone_containment(
        duration in 64.0..100_000.0f64,
        raw_path in proptest::collection::vec(0usize..16, 1..=3),
    ) {
        let cfg = TreeConfig::for_duration(duration).unwrap();
        let indices: Vec<usize> = raw_path.iter().map(|i| i % cfg.width).collect();
        let path = NodePath::new(indices);
        let (a, b) = interval_of(&path, duration, &cfg).unwrap();
        let parent = path.parent().unwrap();
        let (pa, pb) = interval_of(&parent, duration, &cfg).unwrap();
        prop_assert!(pa <= a + 1e-9 && b <= pb + 1e-9);
    }

    /// Normalization produces sorted, disjoint, positive-length intervals,
    /// and is idempotent.
    #[test]
    fn interval_normalization_laws(
        raw in proptest::collection::vec((0.0..1000.0f64, 0.0..50.0f64), 0..12)
    ) {
        let set = IntervalSet::normalize(raw.iter().map(|&(a, len)| (a, a + len))).unwrap();
        let ivs = set.intervals();
        for w in ivs.windows(2) {
            prop_assert!(w[0].1 < w[1].0, "not disjoint-sorted: {ivs:?}");
        }
        prop_assert!(ivs.iter().all(|&(a, b)| a < b));
        let again = IntervalSet::normalize(ivs.iter().copied()).unwrap();
        prop_assert_eq!(set.clone(), again);
        // union with itself is itself
        prop_assert_eq!(set.union(&set), set);
    }

    /// The location reward stays in [0, 1], hits 1 only on equal sets, and
    /// is symmetric in its arguments.
    #[test]
    fn location_reward_bounds_and_symmetry(
        a_raw in proptest::collection::vec((0u32..400, 1u32..60), 1..6),
        b_raw in proptest::collection::vec((0u32..400, 1u32..60), 1..6),
    ) {
        let build = |raw: &[(u32, u32)]| {
            IntervalSet::normalize(raw.iter().map(|&(s, l)| (s as f64, (s + l) as f64))).unwrap()
        };
        let a = build(&a_raw);
        let b = build(&b_raw);
        let r_ab = location_reward(&a, &b).unwrap();
        let r_ba = location_reward(&b, &a).unwrap();
        prop_assert!((0.0..=1.0).contains(&r_ab));
        prop_assert!((r_ab - r_ba).abs() < 1e-12, "not symmetric: {r_ab} vs {r_ba}");
        if r_ab == 1.0 {
            prop_assert_eq!(a, b);
        }
    }

    /// Render -> parse is the identity on well-formed machine actions.
    #[test]
    fn action_round_trip(
        width in 2usize..=16,
        think in "[a-z0-9 ,.?]{1,40}",
        kind in 0usize..3,
        ids in proptest::collection::vec(0usize..16, 3),
        choice in 0usize..26,
    ) {
        let cfg = ParseConfig {
            width,
            depth: 3,
            choices: Vec::new(),
            require_think: true,
        };
        let clip = |i: usize| i % width;
        let terminal = match kind {
            0 => {
                let len = 1 + ids[0] % 3;
                Terminal::Tool(ToolCall::GetCaption {
                    path: NodePath::new(ids[..len].iter().map(|&i| clip(i)).collect::<Vec<_>>()),
                })
            }
            1 => Terminal::Tool(ToolCall::VideoQa {
                path: NodePath::new(ids.iter().map(|&i| clip(i)).collect::<Vec<_>>()),
                query: format!("what about {think}?"),
            }),
            _ => Terminal::Answer(FinalAnswer::Choice(choice)),
        };
        let action = Action { think: think.trim().to_string(), terminal };
        prop_assume!(!action.think.is_empty());
        let parsed = parse_action(&render_action(&action), &cfg).unwrap();
        prop_assert_eq!(parsed, action);
    }
}

/// Every episode terminates within its round budget, over random policies
/// on random corpora.
#[test]
fn episodes_always_terminate_within_budget() {
    for seed in 0..12u64 {
        let params = CorpusParams {
            duration_range: (256.0, 4096.0),
            ..CorpusParams::default()
        };
        let corpus = generate_corpus(seed, 2, &params).unwrap();
        for (video, qa_index, qa) in corpus.tasks() {
            for budget in [1usize, 3, 9] {
                let cfg = EpisodeConfig {
                    budget,
                    ..EpisodeConfig::default()
                };
                let mut policy = UniformRandomPolicy::seeded(seed * 100 + qa_index as u64);
                let result = run_episode(video, qa, &mut policy, &MockBackend, &cfg).unwrap();
                assert!(result.rounds_used() <= budget);
                assert!(result.meter.c1_rounds as usize <= budget);
                if result.rounds_used() == budget {
                    // exhausting the budget without answering is the only
                    // way not to answer
                    if !matches!(result.outcome, Outcome::Answered(_)) {
                        assert_eq!(result.outcome, Outcome::Unanswered);
                    }
                }
                // counter conservation: tool invocations match categories
                assert_eq!(
                    result.meter.tool_calls(),
                    result.meter.c2_captions + result.meter.c3_qa
                );
            }
        }
    }
}

/// Visited only grows and contains every node a tool ran on.
#[test]
fn visited_covers_all_tool_calls() {
    let corpus = generate_corpus(77, 3, &CorpusParams::default()).unwrap();
    for (video, qa_index, qa) in corpus.tasks() {
        let cfg = EpisodeConfig {
            budget: 15,
            ..EpisodeConfig::default()
        };
        let mut policy = UniformRandomPolicy::seeded(500 + qa_index as u64);
        let result = run_episode(video, qa, &mut policy, &MockBackend, &cfg).unwrap();
        for path in &result.visit_log {
            assert!(result.visited.contains(path), "{path} missing from visited");
        }
        for path in &result.init_paths {
            assert!(result.visited.contains(path));
        }
    }
}
