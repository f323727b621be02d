//! `videonav` entry point: exit code 0 on success, 1 on validation errors,
//! 2 on backend/transport failures. With `--json`, errors are mirrored as
//! machine-readable JSON on stderr.

mod args;
mod commands;
mod config;

use clap::Parser;

use args::{Cli, Command};
use config::FileConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Backend,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        CliError {
            kind: ErrorKind::Validation,
            message: message.into(),
        }
    }

    pub fn backend(message: impl Into<String>) -> Self {
        CliError {
            kind: ErrorKind::Backend,
            message: message.into(),
        }
    }

    fn exit_code(&self) -> i32 {
        match self.kind {
            ErrorKind::Validation => 1,
            ErrorKind::Backend => 2,
        }
    }
}

fn dispatch(command: Command, file: &FileConfig) -> Result<(), CliError> {
    match command {
        Command::GenCorpus(args) => commands::cmd_gen_corpus(args, file),
        Command::Datagen(args) => commands::cmd_datagen(args, file),
        Command::Train(args) => commands::cmd_train(args, file),
        Command::Run(args) => commands::cmd_run(args, file),
        Command::Eval(args) => commands::cmd_eval(args, file),
        Command::Report(args) => commands::cmd_report(args, file),
    }
}

fn main() {
    let cli = Cli::parse();
    let json = cli.json;

    let result = FileConfig::load(cli.config.as_deref()).and_then(|file| {
        let jobs = cli.jobs.or(file.jobs);
        let run = || dispatch(cli.command, &file);
        match jobs {
            Some(n) if n > 0 => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .expect("thread pool");
                pool.install(run)
            }
            _ => run(),
        }
    });

    if let Err(err) = result {
        if json {
            let kind = match err.kind {
                ErrorKind::Validation => "validation",
                ErrorKind::Backend => "backend",
            };
            eprintln!(
                "{}",
                serde_json::json!({"error": {"kind": kind, "message": err.message}})
            );
        } else {
            eprintln!("error: {}", err.message);
        }
        std::process::exit(err.exit_code());
    }
}
