//! Grounded video corpora: synthetic generation and line-delimited JSON I/O.
//!
//! Each corpus entry is a video with timestamped events plus multiple-choice
//! questions whose answering evidence ("clue") is pinned to one event's time
//! interval. Clues give the tool mock an exact answer rule and make the
//! grounding reward computable without any real video data.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::reward::IntervalSet;
use crate::tree::TreeConfig;

/// Corpus file schema version.
pub const SCHEMA_VERSION: &str = "v1";

/// Word pool for event keywords, questions, and answer options.
const WORD_POOL: &[&str] = &[
    "violin", "harbor", "lantern", "bicycle", "orchard", "glacier", "kettle", "mural",
    "falcon", "anchor", "compass", "jukebox", "scaffold", "tapestry", "canoe", "obelisk",
    "greenhouse", "turbine", "hammock", "vineyard", "telescope", "carousel", "fountain",
    "ladder", "beehive", "chimney", "drawbridge", "easel", "fireworks", "gondola",
    "hourglass", "icicle", "jackal", "kayak", "lighthouse", "mandolin", "notebook",
    "organ", "parasol", "quarry", "rooftop", "saxophone", "trampoline", "umbrella",
    "waterfall", "xylophone", "yacht", "zeppelin",
];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid corpus parameters: {0}")]
    InvalidParams(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("record {line}: parse error: {message}")]
    Parse { line: usize, message: String },
    #[error("record {line}: invalid field {field}: {message}")]
    Validation {
        line: usize,
        field: &'static str,
        message: String,
    },
}

/// One annotated occurrence inside a video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    /// Half-open `[start_s, end_s)` in seconds.
    pub interval: (f64, f64),
    pub description: String,
    /// Lowercase tokens used for caption/QA templating.
    pub keywords: BTreeSet<String>,
}

impl Event {
    pub fn start_s(&self) -> f64 {
        self.interval.0
    }

    pub fn end_s(&self) -> f64 {
        self.interval.1
    }
}

/// A video timeline with its event annotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundedVideo {
    pub id: String,
    pub duration_s: f64,
    pub events: Vec<Event>,
}

/// A multiple-choice question grounded to clue interval(s) of its video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundedQa {
    pub question: String,
    pub choices: Vec<String>,
    pub answer_index: usize,
    pub clue: IntervalSet,
    /// One entry per hint-escalation level, coarse to precise.
    pub hint_texts: Vec<String>,
}

/// A video together with its questions; one corpus file line.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoRecord {
    pub video: GroundedVideo,
    pub qa: Vec<GroundedQa>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    pub videos: Vec<VideoRecord>,
}

impl Corpus {
    /// Total number of (video, question) tasks.
    pub fn task_count(&self) -> usize {
        self.videos.iter().map(|r| r.qa.len()).sum()
    }

    /// Iterates tasks in file order as `(video, qa_index, qa)`.
    pub fn tasks(&self) -> impl Iterator<Item = (&GroundedVideo, usize, &GroundedQa)> {
        self.videos
            .iter()
            .flat_map(|r| r.qa.iter().enumerate().map(move |(i, qa)| (&r.video, i, qa)))
    }
}

/// Generation knobs. Ranges are inclusive.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusParams {
    pub duration_range: (f64, f64),
    pub events_per_video: (usize, usize),
    pub qa_per_video: (usize, usize),
    pub n_choices: usize,
    /// Probability that a non-clue event copies a keyword from a clue event.
    pub distractor_share_rate: f64,
    pub hint_levels: usize,
    /// Place each event inside a single leaf cell of the default tree, so
    /// one leaf always contains the whole clue.
    pub align_events_to_leaves: bool,
}

impl Default for CorpusParams {
    fn default() -> Self {
        CorpusParams {
            duration_range: (4096.0, 4096.0),
            events_per_video: (5, 8),
            qa_per_video: (1, 1),
            n_choices: 4,
            distractor_share_rate: 0.3,
            hint_levels: 2,
            align_events_to_leaves: true,
        }
    }
}

impl CorpusParams {
    fn validate(&self) -> Result<(), CorpusError> {
        let err = |m: String| Err(CorpusError::InvalidParams(m));
        if !(self.duration_range.0 <= self.duration_range.1) {
            return err(format!("empty duration range {:?}", self.duration_range));
        }
        if self.duration_range.0 < 32.0 {
            return err(format!(
                "minimum duration {} below 32 s",
                self.duration_range.0
            ));
        }
        if self.events_per_video.0 == 0 || self.events_per_video.0 > self.events_per_video.1 {
            return err(format!("bad events_per_video {:?}", self.events_per_video));
        }
        if self.qa_per_video.0 == 0 || self.qa_per_video.0 > self.qa_per_video.1 {
            return err(format!("bad qa_per_video {:?}", self.qa_per_video));
        }
        if self.n_choices < 2 {
            return err(format!("n_choices {} below 2", self.n_choices));
        }
        if self.n_choices > 26 {
            return err(format!(
                "n_choices {} beyond the A-Z answer-letter range",
                self.n_choices
            ));
        }
        if !(0.0..=1.0).contains(&self.distractor_share_rate) {
            return err(format!(
                "distractor_share_rate {} outside [0, 1]",
                self.distractor_share_rate
            ));
        }
        if self.hint_levels == 0 {
            return err("hint_levels must be at least 1".into());
        }
        Ok(())
    }
}

fn range_f64(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        lo + rng.random::<f64>() * (hi - lo)
    }
}

fn range_usize(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

fn pick_keywords(rng: &mut ChaCha8Rng, n: usize) -> Vec<String> {
    let mut chosen = Vec::with_capacity(n);
    while chosen.len() < n {
        let w = WORD_POOL[rng.random_range(0..WORD_POOL.len())].to_string();
        if !chosen.contains(&w) {
            chosen.push(w);
        }
    }
    chosen
}

/// Deterministically generates a corpus: same `(seed, params)` always gives
/// byte-identical files.
pub fn generate_corpus(
    seed: u64,
    n_videos: usize,
    params: &CorpusParams,
) -> Result<Corpus, CorpusError> {
    if n_videos == 0 {
        return Err(CorpusError::InvalidParams("n_videos must be at least 1".into()));
    }
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut videos = Vec::with_capacity(n_videos);
    for vi in 0..n_videos {
        videos.push(generate_video(&mut rng, vi, params));
    }
    Ok(Corpus { videos })
}

fn generate_video(rng: &mut ChaCha8Rng, index: usize, params: &CorpusParams) -> VideoRecord {
    let duration = range_f64(rng, params.duration_range.0, params.duration_range.1);
    let cfg = TreeConfig::for_duration(duration).expect("duration validated >= 32");
    let n_events = range_usize(rng, params.events_per_video.0, params.events_per_video.1);

    // Event placement. Aligned mode picks distinct leaf cells and keeps each
    // event inside its cell; free mode scatters events anywhere.
    let mut events: Vec<Event> = Vec::with_capacity(n_events);
    if params.align_events_to_leaves {
        let cells = cfg.leaf_count();
        let cell_len = duration / cells as f64;
        let mut used = BTreeSet::new();
        while used.len() < n_events.min(cells) {
            used.insert(rng.random_range(0..cells));
        }
        for &cell in &used {
            let cell_start = cell as f64 * cell_len;
            let len = range_f64(rng, 4.0, (cell_len * 0.75).max(4.0).min(12.0));
            let start = cell_start + range_f64(rng, 0.0, cell_len - len);
            events.push(make_event(rng, start, len));
        }
    } else {
        for _ in 0..n_events {
            let len = range_f64(rng, 4.0, 12.0);
            let start = range_f64(rng, 0.0, duration - len);
            events.push(make_event(rng, start, len));
        }
        events.sort_by(|a, b| a.interval.partial_cmp(&b.interval).expect("finite"));
    }

    let n_qa = range_usize(rng, params.qa_per_video.0, params.qa_per_video.1);
    let mut clue_indices = Vec::with_capacity(n_qa);
    for _ in 0..n_qa {
        clue_indices.push(rng.random_range(0..events.len()));
    }

    // Distractor events borrow a keyword from some clue event at the
    // configured rate, so keyword overlap alone cannot localize the clue.
    let clue_keyword_pool: Vec<String> = clue_indices
        .iter()
        .flat_map(|&i| events[i].keywords.iter().cloned())
        .collect();
    if !clue_keyword_pool.is_empty() {
        for ei in 0..events.len() {
            if clue_indices.contains(&ei) {
                continue;
            }
            if rng.random::<f64>() < params.distractor_share_rate {
                let borrowed = clue_keyword_pool[rng.random_range(0..clue_keyword_pool.len())].clone();
                events[ei].keywords.insert(borrowed);
            }
        }
    }

    let qa = clue_indices
        .iter()
        .map(|&ci| make_qa(rng, &events, ci, params))
        .collect();

    VideoRecord {
        video: GroundedVideo {
            id: format!("vid-{index:04}"),
            duration_s: duration,
            events,
        },
        qa,
    }
}

fn make_event(rng: &mut ChaCha8Rng, start: f64, len: f64) -> Event {
    let words = pick_keywords(rng, 3);
    let description = format!(
        "the {} appears beside the {} while the {} stands out",
        words[0], words[1], words[2]
    );
    Event {
        interval: (start, start + len),
        description,
        keywords: words.into_iter().collect(),
    }
}

fn make_qa(
    rng: &mut ChaCha8Rng,
    events: &[Event],
    clue_index: usize,
    params: &CorpusParams,
) -> GroundedQa {
    let clue_event = &events[clue_index];
    let kw: Vec<&String> = clue_event.keywords.iter().collect();
    // keywords is a BTreeSet of 3+ entries; the last sorted entry is the
    // answer token, the first two frame the question
    let (k0, k1, answer_kw) = (kw[0], kw[1], kw[kw.len() - 1]);
    let question = format!("Which object is seen together with the {k0} and the {k1}?");
    let correct = format!("the {answer_kw}");

    let mut distractor_pool: Vec<String> = events
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != clue_index)
        .flat_map(|(_, e)| e.keywords.iter().cloned())
        .chain(WORD_POOL.iter().map(|w| w.to_string()))
        .filter(|w| w != answer_kw)
        .collect();
    distractor_pool.sort();
    distractor_pool.dedup();

    let mut options: Vec<String> = Vec::with_capacity(params.n_choices);
    while options.len() < params.n_choices - 1 {
        let w = &distractor_pool[rng.random_range(0..distractor_pool.len())];
        let candidate = format!("the {w}");
        if !options.contains(&candidate) {
            options.push(candidate);
        }
    }
    let answer_index = rng.random_range(0..params.n_choices);
    options.insert(answer_index, correct);

    let mut hint_texts = Vec::with_capacity(params.hint_levels);
    hint_texts.push(format!("look for the moment involving the {k0} and the {k1}"));
    while hint_texts.len() < params.hint_levels {
        hint_texts.push(clue_event.description.clone());
    }

    GroundedQa {
        question,
        choices: options,
        answer_index,
        clue: IntervalSet::single(clue_event.interval.0, clue_event.interval.1)
            .expect("event intervals are well-formed"),
        hint_texts,
    }
}

/// On-disk line shape; field order fixes the byte layout.
#[derive(Serialize, Deserialize)]
struct RawRecord {
    v: String,
    id: String,
    duration_s: f64,
    events: Vec<Event>,
    qa: Vec<GroundedQa>,
}

/// Serializes one record per line, schema version first.
pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<(), CorpusError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for rec in &corpus.videos {
        let raw = RawRecord {
            v: SCHEMA_VERSION.to_string(),
            id: rec.video.id.clone(),
            duration_s: rec.video.duration_s,
            events: rec.video.events.clone(),
            qa: rec.qa.clone(),
        };
        let line = serde_json::to_string(&raw)
            .map_err(|e| CorpusError::Parse { line: 0, message: e.to_string() })?;
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Loads and validates a corpus file; every type invariant is re-checked.
pub fn load_corpus(path: &Path) -> Result<Corpus, CorpusError> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut videos = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        videos.push(validate_record(raw, line_no)?);
    }
    Ok(Corpus { videos })
}

fn validate_record(raw: RawRecord, line: usize) -> Result<VideoRecord, CorpusError> {
    let fail = |field: &'static str, message: String| {
        Err(CorpusError::Validation { line, field, message })
    };
    if raw.v != SCHEMA_VERSION {
        return fail("v", format!("unsupported schema version {:?}", raw.v));
    }
    if !(raw.duration_s >= 32.0) {
        return fail(
            "duration_s",
            format!("{} below minimum 32 s (must admit a depth-3 tree)", raw.duration_s),
        );
    }
    for (ei, event) in raw.events.iter().enumerate() {
        let (start, end) = event.interval;
        if !(start >= 0.0 && start < end) {
            return fail(
                "events.interval",
                format!("event {ei}: interval start >= end ({start}, {end})"),
            );
        }
        if end > raw.duration_s {
            return fail(
                "events.interval",
                format!("event {ei}: end {end} beyond duration {}", raw.duration_s),
            );
        }
        if event.keywords.is_empty() {
            return fail("events.keywords", format!("event {ei}: empty keyword set"));
        }
    }
    for (qi, qa) in raw.qa.iter().enumerate() {
        if qa.choices.len() < 2 {
            return fail("qa.choices", format!("qa {qi}: fewer than 2 choices"));
        }
        if qa.choices.len() > 26 {
            return fail(
                "qa.choices",
                format!("qa {qi}: {} choices exceed the A-Z letter range", qa.choices.len()),
            );
        }
        if qa.answer_index >= qa.choices.len() {
            return fail(
                "qa.answer_index",
                format!("qa {qi}: answer_index {} >= {} choices", qa.answer_index, qa.choices.len()),
            );
        }
        if qa.clue.is_empty() {
            return fail("qa.clue", format!("qa {qi}: empty clue interval set"));
        }
        if !qa.clue.within(0.0, raw.duration_s) {
            return fail(
                "qa.clue",
                format!("qa {qi}: clue outside [0, {})", raw.duration_s),
            );
        }
        if qa.hint_texts.is_empty() {
            return fail("qa.hint_texts", format!("qa {qi}: no hint texts"));
        }
    }
    Ok(VideoRecord {
        video: GroundedVideo {
            id: raw.id,
            duration_s: raw.duration_s,
            events: raw.events,
        },
        qa: raw.qa,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_duration_passthrough() {
        let params = CorpusParams::default();
        let corpus = generate_corpus(7, 1, &params).unwrap();
        assert_eq!(corpus.videos.len(), 1);
        assert_eq!(corpus.videos[0].video.duration_s, 4096.0);
    }

    #[test]
    fn same_seed_is_byte_identical() {
        let params = CorpusParams::default();
        let dir = tempfile::tempdir().unwrap();
        let (p1, p2) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
        save_corpus(&generate_corpus(7, 3, &params).unwrap(), &p1).unwrap();
        save_corpus(&generate_corpus(7, 3, &params).unwrap(), &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn different_seeds_differ() {
        let params = CorpusParams::default();
        let a = generate_corpus(7, 1, &params).unwrap();
        let b = generate_corpus(8, 1, &params).unwrap();
        assert_ne!(a.videos[0].video.events, b.videos[0].video.events);
    }

    #[test]
    fn round_trip_preserves_structure_and_bytes() {
        let params = CorpusParams::default();
        let corpus = generate_corpus(42, 4, &params).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("c.jsonl");
        save_corpus(&corpus, &p1).unwrap();
        let loaded = load_corpus(&p1).unwrap();
        assert_eq!(loaded, corpus);
        let p2 = dir.path().join("c2.jsonl");
        save_corpus(&loaded, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn clue_matches_exactly_one_event() {
        let corpus = generate_corpus(3, 5, &CorpusParams::default()).unwrap();
        for rec in &corpus.videos {
            for qa in &rec.qa {
                let matching = rec
                    .video
                    .events
                    .iter()
                    .filter(|e| {
                        qa.clue.intervals() == [(e.interval.0, e.interval.1)]
                    })
                    .count();
                assert_eq!(matching, 1, "clue must coincide with exactly one event");
            }
        }
    }

    #[test]
    fn clues_stay_inside_video() {
        let corpus = generate_corpus(11, 10, &CorpusParams::default()).unwrap();
        for rec in &corpus.videos {
            for qa in &rec.qa {
                assert!(qa.clue.within(0.0, rec.video.duration_s));
            }
            for ev in &rec.video.events {
                assert!(ev.start_s() >= 0.0 && ev.end_s() <= rec.video.duration_s);
            }
        }
    }

    #[test]
    fn load_rejects_inverted_interval() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.jsonl");
        std::fs::write(
            &p,
            r#"{"v":"v1","id":"x","duration_s":100.0,"events":[{"interval":[100.0,90.0],"description":"d","keywords":["a"]}],"qa":[]}"#,
        )
        .unwrap();
        match load_corpus(&p) {
            Err(CorpusError::Validation { field, .. }) => assert_eq!(field, "events.interval"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn load_rejects_answer_index_out_of_range() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.jsonl");
        std::fs::write(
            &p,
            r#"{"v":"v1","id":"x","duration_s":100.0,"events":[],"qa":[{"question":"q","choices":["a","b"],"answer_index":2,"clue":[[1.0,2.0]],"hint_texts":["h"]}]}"#,
        )
        .unwrap();
        match load_corpus(&p) {
            Err(CorpusError::Validation { field, .. }) => assert_eq!(field, "qa.answer_index"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn load_reports_record_index_on_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.jsonl");
        let good = r#"{"v":"v1","id":"x","duration_s":100.0,"events":[],"qa":[]}"#;
        std::fs::write(&p, format!("{good}\nnot json\n")).unwrap();
        match load_corpus(&p) {
            Err(CorpusError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn invalid_params_rejected() {
        let mut params = CorpusParams::default();
        params.duration_range = (500.0, 100.0);
        assert!(matches!(
            generate_corpus(1, 1, &params),
            Err(CorpusError::InvalidParams(_))
        ));
        let mut params = CorpusParams::default();
        params.n_choices = 1;
        assert!(matches!(
            generate_corpus(1, 1, &params),
            Err(CorpusError::InvalidParams(_))
        ));
        params.n_choices = 27;
        assert!(matches!(
            generate_corpus(1, 1, &params),
            Err(CorpusError::InvalidParams(_))
        ));
    }

    #[test]
    fn distractor_sharing_rate_extremes() {
        let clue_keywords = |rec: &VideoRecord| -> BTreeSet<String> {
            rec.qa
                .iter()
                .flat_map(|qa| {
                    rec.video
                        .events
                        .iter()
                        .find(|e| qa.clue.intervals() == [(e.interval.0, e.interval.1)])
                        .expect("clue event exists")
                        .keywords
                        .iter()
                        .cloned()
                })
                .collect()
        };
        // rate 0: every event keeps its own 3 keywords
        let mut params = CorpusParams::default();
        params.distractor_share_rate = 0.0;
        let corpus = generate_corpus(41, 10, &params).unwrap();
        for rec in &corpus.videos {
            for ev in &rec.video.events {
                assert_eq!(ev.keywords.len(), 3);
            }
        }
        // rate 1: every non-clue event borrows a clue keyword
        params.distractor_share_rate = 1.0;
        let corpus = generate_corpus(41, 10, &params).unwrap();
        for rec in &corpus.videos {
            let clue_kw = clue_keywords(rec);
            for (ei, ev) in rec.video.events.iter().enumerate() {
                let is_clue = rec.qa.iter().any(|qa| {
                    qa.clue.intervals() == [(ev.interval.0, ev.interval.1)]
                });
                if !is_clue {
                    assert!(
                        ev.keywords.iter().any(|k| clue_kw.contains(k)),
                        "event {ei} shares no keyword with any clue event"
                    );
                }
            }
        }
    }

    #[test]
    fn aligned_events_fit_single_leaf_cells() {
        let corpus = generate_corpus(9, 5, &CorpusParams::default()).unwrap();
        for rec in &corpus.videos {
            let cfg = TreeConfig::for_duration(rec.video.duration_s).unwrap();
            let cell = rec.video.duration_s / cfg.leaf_count() as f64;
            for ev in &rec.video.events {
                let cell_idx = (ev.start_s() / cell).floor();
                assert!(
                    ev.end_s() <= (cell_idx + 1.0) * cell + 1e-9,
                    "event {:?} crosses leaf cell boundary",
                    ev.interval
                );
            }
        }
    }
}
