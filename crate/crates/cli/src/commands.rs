//! Implementations of the CLI subcommands.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use videonav::corpus::{generate_corpus, load_corpus, save_corpus, Corpus};
use videonav::datagen::{
    emit_sft, generate_for_corpus, DatagenConfig, OracleTeacher, Teacher,
};
use videonav::evalcost::{
    batch_eval, pareto_report, report_to_csv, EvalConfig, EvalRecord, ResolvedPolicy, TimeModel,
};
use videonav::grpo::{save_checkpoint, train, ToyPolicyParams, TrainConfig};
use videonav::http::ServerConfig;
use videonav::orchestrator::{
    run_episode, score_episode, EpisodeConfig, EpisodeLog, InitMode, Outcome,
};
use videonav::policy::PolicySpec;
use videonav::protocol::{choice_letter, render_history, FinalAnswer};
use videonav::tools::ToolBackend;

use crate::args::*;
use crate::config::{require, FileConfig};
use crate::CliError;

pub fn parse_policy(name: &str, server: Option<&ServerConfig>) -> Result<PolicySpec, CliError> {
    if let Some(path) = name.strip_prefix("toy:") {
        return Ok(PolicySpec::LearnedToy {
            checkpoint: PathBuf::from(path),
        });
    }
    match name {
        "oracle" => Ok(PolicySpec::ScriptedOracle),
        "random" => Ok(PolicySpec::UniformRandom),
        "llm" => {
            let server = server.ok_or_else(|| {
                CliError::validation("--policy llm requires a [server] block in --config")
            })?;
            Ok(PolicySpec::LlmBacked {
                server: server.clone(),
            })
        }
        other => Err(CliError::validation(format!(
            "--policy: unknown policy {other:?} (expected oracle|llm|toy:CHECKPOINT|random)"
        ))),
    }
}

pub fn parse_backend(
    name: &str,
    server: Option<&ServerConfig>,
) -> Result<videonav::evalcost::EvalBackend, CliError> {
    match name {
        "mock" => Ok(videonav::evalcost::EvalBackend::Mock),
        "http" => {
            let server = server.ok_or_else(|| {
                CliError::validation("--backend http requires a [server] block in --config")
            })?;
            Ok(videonav::evalcost::EvalBackend::Http(server.clone()))
        }
        other => Err(CliError::validation(format!(
            "--backend: unknown backend {other:?} (expected mock|http)"
        ))),
    }
}

pub fn parse_init(name: &str) -> Result<InitMode, CliError> {
    match name {
        "root" => Ok(InitMode::RootCaption),
        "first_level" | "first-level" => Ok(InitMode::FirstLevel),
        other => Err(CliError::validation(format!(
            "--init: unknown mode {other:?} (expected root|first_level)"
        ))),
    }
}

fn load_corpus_arg(path: &Path) -> Result<Corpus, CliError> {
    load_corpus(path)
        .map_err(|e| CliError::validation(format!("--corpus: {e}")))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents)
        .map_err(|e| CliError::validation(format!("--out: cannot write {}: {e}", path.display())))
}

pub fn cmd_gen_corpus(args: GenCorpusArgs, file: &FileConfig) -> Result<(), CliError> {
    let seed = require(args.seed, file.seed, "--seed (stochastic commands require one)")?;
    let out = require(args.out, file.out.clone(), "--out")?;
    let mut params = file.corpus_params.clone().unwrap_or_default();
    if let Some(duration) = args.duration {
        params.duration_range = (duration, duration);
    }
    let corpus = generate_corpus(seed, args.n_videos, &params)
        .map_err(|e| CliError::validation(e.to_string()))?;
    save_corpus(&corpus, &out).map_err(|e| CliError::validation(e.to_string()))?;
    println!("seed: {seed}");
    println!(
        "wrote {} videos ({} tasks) to {}",
        corpus.videos.len(),
        corpus.task_count(),
        out.display()
    );
    Ok(())
}

/// Quarantined trajectory line: kept for inspection, never emitted as SFT.
#[derive(Serialize)]
struct QuarantineRecord {
    video_id: String,
    qa_index: usize,
    hint_level_used: usize,
    turns: Vec<String>,
}

pub fn cmd_datagen(args: DatagenArgs, file: &FileConfig) -> Result<(), CliError> {
    let seed = require(args.seed, file.seed, "--seed (stochastic commands require one)")?;
    let corpus_path = require(args.corpus, file.corpus.clone(), "--corpus")?;
    let out = require(args.out, file.out.clone(), "--out")?;
    let corpus = load_corpus_arg(&corpus_path)?;

    let teacher: Box<dyn Teacher> = match args.teacher.as_str() {
        "oracle" => Box::new(OracleTeacher),
        other => {
            return Err(CliError::validation(format!(
                "--teacher: unknown teacher {other:?} (expected oracle)"
            )))
        }
    };
    let backend = parse_backend(&args.backend, file.server.as_ref())?;
    let backend: Box<dyn ToolBackend> = backend.instantiate();

    let mut cfg = DatagenConfig::default();
    if let Some(budget) = args.budget.or(file.budget) {
        cfg.episode.budget = budget;
    }
    cfg.max_hint_level = args.max_hints;

    let run = generate_for_corpus(&corpus, teacher.as_ref(), backend.as_ref(), &cfg)
        .map_err(|e| CliError::backend(e.to_string()))?;

    let qa_of = |video_id: &str, qa_index: usize| {
        corpus
            .videos
            .iter()
            .find(|r| r.video.id == video_id)
            .map(|r| &r.qa[qa_index])
            .expect("trajectory refers to a corpus task")
    };
    let pairs: Vec<_> = run
        .verified
        .iter()
        .map(|t| (t, qa_of(&t.video_id, t.qa_index)))
        .collect();
    let stats = emit_sft(&pairs, &out).map_err(|e| CliError::validation(e.to_string()))?;

    if let Some(quarantine) = &args.quarantine {
        let mut text = String::new();
        for traj in &run.quarantined {
            let record = QuarantineRecord {
                video_id: traj.video_id.clone(),
                qa_index: traj.qa_index,
                hint_level_used: traj.hint_level_used,
                turns: traj.episode.steps.iter().map(|s| s.raw.clone()).collect(),
            };
            text.push_str(&serde_json::to_string(&record).expect("serializable record"));
            text.push('\n');
        }
        write_file(quarantine, &text)?;
    }

    println!("seed: {seed}");
    println!(
        "emitted {} trajectories (mean steps {:.2}), quarantined {}",
        stats.emitted,
        stats.mean_steps,
        run.quarantined.len()
    );
    Ok(())
}

pub fn cmd_train(args: TrainArgs, file: &FileConfig) -> Result<(), CliError> {
    let seed = require(args.seed, file.seed, "--seed (stochastic commands require one)")?;
    let corpus_path = require(args.corpus, file.corpus.clone(), "--corpus")?;
    let out = require(args.out, file.out.clone(), "--out")?;
    let corpus = load_corpus_arg(&corpus_path)?;
    let tasks: Vec<_> = corpus.tasks().map(|(v, _, qa)| (v, qa)).collect();

    let mut cfg = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    cfg.steps = args.steps;
    cfg.hyper.group_size = args.group_size;
    if let Some(lr) = args.lr {
        cfg.hyper.lr = lr;
    }
    if let Some(beta) = args.beta {
        cfg.hyper.beta = beta;
    }
    if let Some(epsilon) = args.epsilon {
        cfg.hyper.epsilon = epsilon;
    }
    if let Some(budget) = args.budget.or(file.budget) {
        cfg.episode.budget = budget;
    }
    if let Some(w) = args.w_loc {
        cfg.weights.w_loc = w;
    }
    if let Some(w) = args.w_ans {
        cfg.weights.w_ans = w;
    }
    if let Some(w) = args.w_repeat {
        cfg.weights.w_repeat = w;
    }

    let mut params = ToyPolicyParams::zeros(args.temperature);
    let backend = videonav::tools::MockBackend;
    let log = train(&tasks, &mut params, &backend, &cfg)
        .map_err(|e| CliError::backend(e.to_string()))?;

    save_checkpoint(&params, &out).map_err(|e| CliError::validation(e.to_string()))?;
    if let Some(log_path) = &args.log {
        let mut csv = String::from("step,objective,kl,mean_reward,accuracy\n");
        for row in &log {
            csv.push_str(&format!(
                "{},{},{},{},{}\n",
                row.step, row.objective, row.kl, row.mean_reward, row.accuracy
            ));
        }
        write_file(log_path, &csv)?;
    }

    println!("seed: {seed}");
    if let Some(last) = log.last() {
        println!(
            "trained {} steps: objective {:.4}, kl {:.4}, mean reward {:.3}, group accuracy {:.2}",
            log.len(),
            last.objective,
            last.kl,
            last.mean_reward,
            last.accuracy
        );
    }
    println!("checkpoint: {}", out.display());
    Ok(())
}

pub fn cmd_run(args: RunArgs, file: &FileConfig) -> Result<(), CliError> {
    let seed = require(args.seed, file.seed, "--seed (stochastic commands require one)")?;
    let corpus_path = require(args.corpus, file.corpus.clone(), "--corpus")?;
    let corpus = load_corpus_arg(&corpus_path)?;
    let tasks: Vec<_> = corpus.tasks().collect();
    let (video, qa_index, qa) = *tasks.get(args.task).ok_or_else(|| {
        CliError::validation(format!(
            "--task: index {} out of range ({} tasks)",
            args.task,
            tasks.len()
        ))
    })?;

    let policy_name = args
        .policy
        .or(file.policy.clone())
        .unwrap_or_else(|| "oracle".to_string());
    let spec = parse_policy(&policy_name, file.server.as_ref())?;
    let resolved =
        ResolvedPolicy::resolve(&spec).map_err(|e| CliError::validation(e.to_string()))?;
    let backend_name = args
        .backend
        .or(file.backend.clone())
        .unwrap_or_else(|| "mock".to_string());
    let backend = parse_backend(&backend_name, file.server.as_ref())?.instantiate();

    let mut episode_cfg = EpisodeConfig::default();
    episode_cfg.measure_wall_time = backend_name == "http";
    if let Some(budget) = args.budget.or(file.budget) {
        episode_cfg.budget = budget;
    }
    if let Some(init) = args.init.as_deref().or(file.init.as_deref()) {
        episode_cfg.init_mode = parse_init(init)?;
    }
    let weights = file.weights.unwrap_or_default();

    let mut policy = resolved.make(seed);
    let result = run_episode(video, qa, policy.as_mut(), backend.as_ref(), &episode_cfg)
        .map_err(|e| CliError::backend(e.to_string()))?;
    let breakdown = score_episode(&result, qa, video, &weights, true)
        .map_err(|e| CliError::validation(e.to_string()))?;

    println!("seed: {seed}");
    println!("task: {}#{qa_index}", video.id);
    print!("{}", render_history(&result.episode));
    println!("---");
    match &result.outcome {
        Outcome::Answered(FinalAnswer::Choice(i)) => println!(
            "outcome: answered {} ({})",
            choice_letter(*i),
            if *i == qa.answer_index { "correct" } else { "wrong" }
        ),
        Outcome::Answered(FinalAnswer::Text(t)) => println!("outcome: answered {t:?}"),
        Outcome::Unanswered => println!("outcome: unanswered (budget exhausted)"),
    }
    println!(
        "reward: {:.4} (r_ans {:.0}, r_loc {:.4}, r_repeat {:.0})",
        breakdown.total, breakdown.r_ans, breakdown.r_loc, breakdown.r_repeat
    );
    let tm = TimeModel::default();
    println!(
        "rounds: {}  captions: {}  qa_calls: {}  modeled_time_s: {}",
        result.meter.c1_rounds,
        result.meter.c2_captions,
        result.meter.c3_qa,
        videonav::evalcost::modeled_cost(
            result.meter.c1_rounds as f64,
            result.meter.c2_captions as f64,
            result.meter.c3_qa as f64,
            &tm
        )
    );
    if let Some(out) = &args.out {
        let log = EpisodeLog::from_result(&result);
        let line = serde_json::to_string(&log).expect("serializable log");
        write_file(out, &format!("{line}\n"))?;
    }
    Ok(())
}

/// Per-item record line with its sweep setting, as written by `eval
/// --records` and read back by `report`.
#[derive(Serialize, Deserialize)]
pub struct RecordLine {
    pub setting: String,
    #[serde(flatten)]
    pub record: EvalRecord,
}

pub fn cmd_eval(args: EvalArgs, file: &FileConfig) -> Result<(), CliError> {
    let seed = require(args.seed, file.seed, "--seed (stochastic commands require one)")?;
    let corpus_path = require(args.corpus, file.corpus.clone(), "--corpus")?;
    let out = require(args.out, file.out.clone(), "--out")?;
    let corpus = load_corpus_arg(&corpus_path)?;

    let policy_name = args
        .policy
        .or(file.policy.clone())
        .unwrap_or_else(|| "oracle".to_string());
    let spec = parse_policy(&policy_name, file.server.as_ref())?;
    let resolved =
        ResolvedPolicy::resolve(&spec).map_err(|e| CliError::validation(e.to_string()))?;
    let backend_name = args
        .backend
        .or(file.backend.clone())
        .unwrap_or_else(|| "mock".to_string());
    let backend = parse_backend(&backend_name, file.server.as_ref())?.instantiate();

    let swept = args.budgets.clone().or_else(|| file.budgets.clone());
    let budgets: Vec<usize> = match (swept, args.budget.or(file.budget)) {
        (Some(list), _) if !list.is_empty() => list,
        (_, Some(single)) => vec![single],
        _ => vec![EpisodeConfig::default().budget],
    };
    let init = match args.init.as_deref().or(file.init.as_deref()) {
        Some(name) => parse_init(name)?,
        None => InitMode::FirstLevel,
    };
    let tm = TimeModel {
        t1_s: args.t1,
        t2_s: args.t2,
        t3_s: args.t3,
    };
    let weights = file.weights.unwrap_or_default();

    let mut groups = Vec::new();
    for &budget in &budgets {
        let cfg = EvalConfig {
            episode: EpisodeConfig {
                budget,
                init_mode: init,
                measure_wall_time: backend_name == "http",
                ..EpisodeConfig::default()
            },
            weights,
            time_model: tm,
            seed,
        };
        let records = batch_eval(&corpus, &resolved, backend.as_ref(), &cfg)
            .map_err(|e| CliError::validation(e.to_string()))?;
        groups.push((format!("budget={budget}"), records));
    }

    let rows = pareto_report(&groups, &tm);
    let csv = report_to_csv(&rows);
    write_file(&out, &csv)?;

    if let Some(records_path) = &args.records {
        let mut text = String::new();
        for (setting, records) in &groups {
            for record in records {
                let line = RecordLine {
                    setting: setting.clone(),
                    record: record.clone(),
                };
                text.push_str(&serde_json::to_string(&line).expect("serializable record"));
                text.push('\n');
            }
        }
        write_file(records_path, &text)?;
    }

    println!("seed: {seed}");
    for row in &rows {
        println!(
            "{}: n={} accuracy={:.4} mean_rounds={:.2} modeled_cost_s={:.2}{}",
            row.setting,
            row.n,
            row.accuracy,
            row.mean_rounds,
            row.modeled_cost_s,
            if row.dominated { " (dominated)" } else { "" }
        );
    }
    println!("report: {}", out.display());
    Ok(())
}

pub fn cmd_report(args: ReportArgs, file: &FileConfig) -> Result<(), CliError> {
    let out = require(args.out, file.out.clone(), "--out")?;
    if args.records.is_empty() {
        return Err(CliError::validation("missing --records (one or more files)"));
    }
    let mut by_setting: std::collections::BTreeMap<String, Vec<EvalRecord>> = Default::default();
    for path in &args.records {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::validation(format!("--records: cannot read {}: {e}", path.display()))
        })?;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: RecordLine = serde_json::from_str(line).map_err(|e| {
                CliError::validation(format!(
                    "--records: {} line {}: {e}",
                    path.display(),
                    i + 1
                ))
            })?;
            by_setting.entry(parsed.setting).or_default().push(parsed.record);
        }
    }
    let tm = TimeModel {
        t1_s: args.t1,
        t2_s: args.t2,
        t3_s: args.t3,
    };
    let groups: Vec<(String, Vec<EvalRecord>)> = by_setting.into_iter().collect();
    let rows = pareto_report(&groups, &tm);
    write_file(&out, &report_to_csv(&rows))?;
    println!("report: {} settings -> {}", rows.len(), out.display());
    Ok(())
}

