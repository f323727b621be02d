//! Compute-cost model, batch evaluation, and accuracy/cost Pareto
//! reporting.
//!
//! The modeled time of one question is `C1*T1 + C2*T2 + C3*T3`: reasoning
//! rounds, caption calls, and QA calls priced by a per-call time model.
//! Batch evaluation scores every task of a corpus under a policy and the
//! report flags settings dominated in both accuracy and cost.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, GroundedQa, GroundedVideo};
use crate::grpo::{load_checkpoint, GrpoError, ToyPolicy, ToyPolicyParams};
use crate::http::{HttpBackend, LlmPolicy, ServerConfig};
use crate::orchestrator::{run_episode, score_episode, EpisodeConfig, Outcome};
use crate::policy::{Policy, PolicySpec, UniformRandomPolicy};
use crate::reward::RewardWeights;
use crate::tools::{CostMeter, MockBackend, ToolBackend};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("checkpoint error: {0}")]
    Checkpoint(#[from] GrpoError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
    #[error("empty corpus")]
    EmptyCorpus,
}

/// Per-call wall times in seconds: reasoning round, caption, QA.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeModel {
    pub t1_s: f64,
    pub t2_s: f64,
    pub t3_s: f64,
}

impl Default for TimeModel {
    fn default() -> Self {
        TimeModel {
            t1_s: 2.5,
            t2_s: 7.0,
            t3_s: 2.7,
        }
    }
}

/// `C1*T1 + C2*T2 + C3*T3`; counts may be fractional averages.
pub fn modeled_cost(c1: f64, c2: f64, c3: f64, tm: &TimeModel) -> f64 {
    c1 * tm.t1_s + c2 * tm.t2_s + c3 * tm.t3_s
}

/// Expected caption calls under first-level init when every non-final
/// round issues one caption: `W + C1 - 1 - C3`.
pub fn expected_captions(width: f64, rounds: f64, qa_calls: f64) -> f64 {
    width + rounds - 1.0 - qa_calls
}

/// One evaluated task.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRecord {
    pub qa_id: String,
    pub correct: bool,
    pub answered: bool,
    pub rounds: u64,
    pub captions: u64,
    pub qa_calls: u64,
    pub modeled_time_s: f64,
    pub measured_time_s: f64,
    pub r_loc: f64,
    pub reward: f64,
    /// Backend failure: excluded from the accuracy denominator.
    pub errored: bool,
}

impl EvalRecord {
    fn from_meter(qa_id: String, meter: &CostMeter, tm: &TimeModel) -> Self {
        EvalRecord {
            qa_id,
            correct: false,
            answered: false,
            rounds: meter.c1_rounds,
            captions: meter.c2_captions,
            qa_calls: meter.c3_qa,
            modeled_time_s: modeled_cost(
                meter.c1_rounds as f64,
                meter.c2_captions as f64,
                meter.c3_qa as f64,
                tm,
            ),
            measured_time_s: meter.measured_time_s(),
            r_loc: 0.0,
            reward: 0.0,
            errored: false,
        }
    }
}

/// A policy spec with file/network indirection resolved, ready to mint
/// per-task policies.
pub enum ResolvedPolicy {
    Oracle,
    Toy(ToyPolicyParams),
    UniformRandom,
    Llm(ServerConfig),
}

impl ResolvedPolicy {
    pub fn resolve(spec: &PolicySpec) -> Result<Self, EvalError> {
        Ok(match spec {
            PolicySpec::ScriptedOracle => ResolvedPolicy::Oracle,
            PolicySpec::LearnedToy { checkpoint } => {
                ResolvedPolicy::Toy(load_checkpoint(checkpoint)?)
            }
            PolicySpec::UniformRandom => ResolvedPolicy::UniformRandom,
            PolicySpec::LlmBacked { server } => ResolvedPolicy::Llm(server.clone()),
        })
    }

    pub fn make(&self, seed: u64) -> Box<dyn Policy> {
        match self {
            ResolvedPolicy::Oracle => Box::new(crate::policy::OraclePolicy::new()),
            ResolvedPolicy::Toy(params) => Box::new(ToyPolicy::sampling(params.clone(), seed)),
            ResolvedPolicy::UniformRandom => Box::new(UniformRandomPolicy::seeded(seed)),
            ResolvedPolicy::Llm(server) => Box::new(LlmPolicy::new(server.clone())),
        }
    }
}

/// Tool backend selector for evaluation runs.
pub enum EvalBackend {
    Mock,
    Http(ServerConfig),
}

impl EvalBackend {
    pub fn instantiate(&self) -> Box<dyn ToolBackend> {
        match self {
            EvalBackend::Mock => Box::new(MockBackend),
            EvalBackend::Http(cfg) => Box::new(HttpBackend::new(cfg.clone())),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct EvalConfig {
    pub episode: EpisodeConfig,
    pub weights: RewardWeights,
    pub time_model: TimeModel,
    pub seed: u64,
}

/// Evaluates every (video, question) task of the corpus in parallel.
/// Backend failures mark the item errored instead of aborting the batch.
pub fn batch_eval(
    corpus: &Corpus,
    policy: &ResolvedPolicy,
    backend: &dyn ToolBackend,
    cfg: &EvalConfig,
) -> Result<Vec<EvalRecord>, EvalError> {
    if corpus.videos.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    let tasks: Vec<(&GroundedVideo, usize, &GroundedQa)> = corpus.tasks().collect();
    let records: Vec<EvalRecord> = tasks
        .par_iter()
        .enumerate()
        .map(|(i, (video, qa_index, qa))| {
            let qa_id = format!("{}#{qa_index}", video.id);
            let mut policy = policy.make(cfg.seed.wrapping_add(i as u64));
            match run_episode(video, qa, policy.as_mut(), backend, &cfg.episode) {
                Ok(result) => {
                    let mut record =
                        EvalRecord::from_meter(qa_id, &result.meter, &cfg.time_model);
                    record.answered = matches!(result.outcome, Outcome::Answered(_));
                    record.correct = result.answered_choice() == Some(qa.answer_index);
                    if let Ok(breakdown) =
                        score_episode(&result, qa, video, &cfg.weights, true)
                    {
                        record.r_loc = breakdown.r_loc;
                        record.reward = breakdown.total;
                    }
                    record
                }
                Err(_) => EvalRecord {
                    qa_id,
                    correct: false,
                    answered: false,
                    rounds: 0,
                    captions: 0,
                    qa_calls: 0,
                    modeled_time_s: 0.0,
                    measured_time_s: 0.0,
                    r_loc: 0.0,
                    reward: 0.0,
                    errored: true,
                },
            }
        })
        .collect();
    Ok(records)
}

/// One aggregated report row.
#[derive(Debug, Clone, Serialize)]
pub struct ReportRow {
    pub setting: String,
    pub n: usize,
    pub accuracy: f64,
    pub mean_rounds: f64,
    pub mean_captions: f64,
    pub mean_qa: f64,
    pub modeled_cost_s: f64,
    pub dominated: bool,
}

/// Aggregates per-setting records into rows sorted by modeled cost and
/// flags rows dominated by another row with accuracy >= and cost <= (one
/// strict).
pub fn pareto_report(groups: &[(String, Vec<EvalRecord>)], tm: &TimeModel) -> Vec<ReportRow> {
    let mut rows: Vec<ReportRow> = groups
        .iter()
        .map(|(setting, records)| {
            let scored: Vec<&EvalRecord> = records.iter().filter(|r| !r.errored).collect();
            let n = scored.len();
            let denom = n.max(1) as f64;
            let correct = scored.iter().filter(|r| r.correct).count();
            let mean_rounds = scored.iter().map(|r| r.rounds as f64).sum::<f64>() / denom;
            let mean_captions = scored.iter().map(|r| r.captions as f64).sum::<f64>() / denom;
            let mean_qa = scored.iter().map(|r| r.qa_calls as f64).sum::<f64>() / denom;
            ReportRow {
                setting: setting.clone(),
                n,
                accuracy: correct as f64 / denom,
                mean_rounds,
                mean_captions,
                mean_qa,
                modeled_cost_s: modeled_cost(mean_rounds, mean_captions, mean_qa, tm),
                dominated: false,
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        a.modeled_cost_s
            .partial_cmp(&b.modeled_cost_s)
            .expect("finite costs")
            .then_with(|| a.setting.cmp(&b.setting))
    });
    for i in 0..rows.len() {
        rows[i].dominated = rows.iter().enumerate().any(|(j, other)| {
            j != i
                && other.accuracy >= rows[i].accuracy
                && other.modeled_cost_s <= rows[i].modeled_cost_s
                && (other.accuracy > rows[i].accuracy
                    || other.modeled_cost_s < rows[i].modeled_cost_s)
        });
    }
    rows
}

pub const REPORT_CSV_HEADER: &str =
    "setting,n,accuracy,mean_rounds,mean_captions,mean_qa,modeled_cost_s,dominated";

pub fn report_to_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from(REPORT_CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            row.setting,
            row.n,
            row.accuracy,
            row.mean_rounds,
            row.mean_captions,
            row.mean_qa,
            row.modeled_cost_s,
            row.dominated
        ));
    }
    out
}

pub fn records_to_jsonl(records: &[EvalRecord]) -> Result<String, EvalError> {
    let mut out = String::new();
    for record in records {
        out.push_str(&serde_json::to_string(record)?);
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, CorpusParams};
    use crate::orchestrator::InitMode;

    #[test]
    fn cost_model_worked_example() {
        let tm = TimeModel::default();
        let cost = modeled_cost(10.5, 14.14, 0.36, &tm);
        // 26.25 + 98.98 + 0.972
        assert!((cost - 126.202).abs() < 1e-9, "{cost}");
        assert_eq!(modeled_cost(0.0, 0.0, 0.0, &tm), 0.0);
    }

    #[test]
    fn expected_captions_identity() {
        assert!((expected_captions(5.0, 10.5, 0.36) - 14.14).abs() < 1e-12);
        assert_eq!(expected_captions(6.0, 1.0, 0.0), 6.0);
        assert_eq!(expected_captions(5.0, 2.0, 1.0), 5.0);
    }

    #[test]
    fn oracle_batch_is_perfectly_accurate_on_clean_corpus() {
        let corpus = generate_corpus(17, 10, &CorpusParams::default()).unwrap();
        let cfg = EvalConfig::default();
        let records = batch_eval(&corpus, &ResolvedPolicy::Oracle, &MockBackend, &cfg).unwrap();
        assert_eq!(records.len(), corpus.task_count());
        assert!(records.iter().all(|r| r.correct && !r.errored));
    }

    #[test]
    fn counter_identity_holds_for_oracle_episodes() {
        // oracle episodes have the canonical shape: every non-final round
        // issues one caption, the final round answers, one QA round
        let corpus = generate_corpus(19, 5, &CorpusParams::default()).unwrap();
        let cfg = EvalConfig {
            episode: EpisodeConfig {
                init_mode: InitMode::FirstLevel,
                ..EpisodeConfig::default()
            },
            ..EvalConfig::default()
        };
        let records = batch_eval(&corpus, &ResolvedPolicy::Oracle, &MockBackend, &cfg).unwrap();
        for (record, (video, _, _)) in records.iter().zip(corpus.tasks()) {
            let width = crate::tree::TreeConfig::for_duration(video.duration_s)
                .unwrap()
                .width as f64;
            let expected =
                expected_captions(width, record.rounds as f64, record.qa_calls as f64);
            assert_eq!(record.captions as f64, expected, "{}", record.qa_id);
        }
    }

    #[test]
    fn modeled_time_matches_counters_exactly() {
        let corpus = generate_corpus(23, 3, &CorpusParams::default()).unwrap();
        let cfg = EvalConfig::default();
        let records = batch_eval(&corpus, &ResolvedPolicy::Oracle, &MockBackend, &cfg).unwrap();
        for r in &records {
            let expected = modeled_cost(
                r.rounds as f64,
                r.captions as f64,
                r.qa_calls as f64,
                &cfg.time_model,
            );
            assert_eq!(r.modeled_time_s, expected);
        }
    }

    #[test]
    fn pareto_flags_dominated_rows() {
        let mk = |setting: &str, correct: usize, total: usize, rounds: u64| -> (String, Vec<EvalRecord>) {
            let records = (0..total)
                .map(|i| EvalRecord {
                    qa_id: format!("{setting}-{i}"),
                    correct: i < correct,
                    answered: true,
                    rounds,
                    captions: rounds.saturating_sub(1),
                    qa_calls: 1,
                    modeled_time_s: 0.0,
                    measured_time_s: 0.0,
                    r_loc: 0.0,
                    reward: 0.0,
                    errored: false,
                })
                .collect();
            (setting.to_string(), records)
        };
        // cheap+accurate dominates expensive+same-accuracy and
        // expensive+worse; a cheaper-but-weaker row stays on the frontier
        let groups = vec![
            mk("a_cheap_good", 9, 10, 4),
            mk("b_pricey_same", 9, 10, 9),
            mk("c_pricey_bad", 5, 10, 9),
            mk("d_cheapest_weak", 6, 10, 2),
        ];
        let rows = pareto_report(&groups, &TimeModel::default());
        let by_name = |n: &str| rows.iter().find(|r| r.setting == n).unwrap();
        assert!(!by_name("a_cheap_good").dominated);
        assert!(by_name("b_pricey_same").dominated);
        assert!(by_name("c_pricey_bad").dominated);
        assert!(!by_name("d_cheapest_weak").dominated);
        // sorted by cost
        assert!(rows.windows(2).all(|w| w[0].modeled_cost_s <= w[1].modeled_cost_s));
        // csv shape
        let csv = report_to_csv(&rows);
        assert!(csv.starts_with(REPORT_CSV_HEADER));
        assert_eq!(csv.lines().count(), 1 + rows.len());
    }

    #[test]
    fn accuracy_non_decreasing_in_budget_for_noisy_oracle() {
        let corpus = generate_corpus(29, 20, &CorpusParams::default()).unwrap();
        let mut last_accuracy = -1.0;
        for budget in [5usize, 10, 30] {
            let cfg = EvalConfig {
                episode: EpisodeConfig {
                    budget,
                    ..EpisodeConfig::default()
                },
                seed: 7,
                ..EvalConfig::default()
            };
            let tasks: Vec<_> = corpus.tasks().collect();
            let correct = tasks
                .par_iter()
                .enumerate()
                .filter(|(i, (video, _, qa))| {
                    let mut policy =
                        crate::policy::NoisyOraclePolicy::seeded(7 + *i as u64, 0.35);
                    let result =
                        run_episode(video, qa, &mut policy, &MockBackend, &cfg.episode).unwrap();
                    result.answered_choice() == Some(qa.answer_index)
                })
                .count();
            let accuracy = correct as f64 / corpus.task_count() as f64;
            assert!(
                accuracy >= last_accuracy,
                "budget {budget}: {accuracy} < {last_accuracy}"
            );
            last_accuracy = accuracy;
        }
    }
}
