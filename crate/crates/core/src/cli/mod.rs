//! Command-line entry point.

pub mod config;
pub mod run;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use config::{Overrides, RunConfig};
use run::RunDir;

#[derive(Debug, Parser)]
#[command(name = "cidmad", version, about = "Differential face morph attack detection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// Run configuration (TOML). Defaults to the run directory's echo, then
    /// to built-in defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Global seed; derives every component seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Corpus operations.
    Corpus {
        #[command(subcommand)]
        action: CorpusAction,
    },
    /// Fit the comparator and the translator.
    Train(Common),
    /// Score the test split and write the decision log.
    Detect(Common),
    /// Build evaluation reports from the decision log.
    Eval(Common),
    /// Train-attack by test-attack matrix.
    CrossEval(Common),
    /// Train the demorpher and assess recovery of the second subject.
    Demorph(Common),
    /// corpus build, train, detect and eval in sequence.
    Run(Common),
}

#[derive(Debug, Subcommand)]
pub enum CorpusAction {
    /// Render subjects, morphs and the split manifests.
    Build(Common),
}

/// Resolves the configuration of a command: explicit file, else the echo in
/// the run directory, else defaults; then environment and flags.
pub fn resolve(common: &Common) -> Result<(RunConfig, RunDir)> {
    let overrides = Overrides {
        out: common.out.clone(),
        seed: common.seed,
    };
    let env = std::env::vars();
    let mut cfg = RunConfig::load(common.config.as_deref(), std::env::vars(), &overrides)?;
    if common.config.is_none() {
        let echo = RunDir::new(&cfg.out).config();
        if echo.exists() {
            cfg = RunConfig::load(Some(&echo), env, &overrides)?;
        }
    }
    let dir = RunDir::new(&cfg.out);
    Ok((cfg, dir))
}

pub fn execute(cli: &Cli) -> Result<()> {
    let common = match &cli.command {
        Command::Corpus {
            action: CorpusAction::Build(c),
        } => c,
        Command::Train(c)
        | Command::Detect(c)
        | Command::Eval(c)
        | Command::CrossEval(c)
        | Command::Demorph(c)
        | Command::Run(c) => c,
    };
    let (cfg, dir) = resolve(common)?;
    match &cli.command {
        Command::Corpus { .. } => {
            run::corpus_build(&cfg, &dir)?;
        }
        Command::Train(_) => {
            run::train(&cfg, &dir)?;
        }
        Command::Detect(_) => {
            run::detect(&cfg, &dir)?;
        }
        Command::Eval(_) => {
            for (name, r) in run::eval(&cfg, &dir)? {
                if let (Some(b), Some(a)) = (r.bpcer_at_apcer10(), r.apcer_at_bpcer10()) {
                    println!("{name}\tbpcer_at_apcer10={b}\tapcer_at_bpcer10={a}");
                }
            }
        }
        Command::CrossEval(_) => {
            for c in run::cross_eval(&cfg, &dir)? {
                println!(
                    "{}\t{}\tbpcer_at_apcer10={}\tapcer_at_bpcer10={}\troc_auc={}",
                    c.train.as_str(),
                    c.test.as_str(),
                    c.bpcer_at_apcer10,
                    c.apcer_at_bpcer10,
                    c.roc_auc
                );
            }
        }
        Command::Demorph(_) => {
            print!("{}", run::demorph(&cfg, &dir)?.to_tsv());
        }
        Command::Run(_) => {
            run::corpus_build(&cfg, &dir)?;
            run::train(&cfg, &dir)?;
            run::detect(&cfg, &dir)?;
            run::eval(&cfg, &dir)?;
        }
    }
    Ok(())
}

/// The single line printed on failure.
pub fn error_line(e: &Error) -> String {
    format!("error kind={} message={:?}", e.kind(), e.to_string())
}
