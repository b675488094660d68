use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tabdro::pipeline::{run_pipeline, write_synth, Phase, PipelineConfig, RunOptions, RunSummary};
use tabdro::{Error, Result};

/// Feature-specialized robust representations for tabular data.
///
/// Any config field can be set with a flag of its dotted name placed after
/// the named options, e.g. `--stage1.epochs 10 --model.d 16`.
#[derive(Parser)]
#[command(name = "tabdro", version)]
struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Errors only.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic dataset with a planted minority slice, plus its schema.
    Synth {
        /// CSV output path.
        #[arg(long, default_value = "synth.csv")]
        output: PathBuf,
        /// Schema output path [default: <output stem>.schema.json].
        #[arg(long)]
        schema: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Prepare data and pre-train the base model.
    Pretrain(RunArgs),
    /// Build one specialized model per categorical feature (JTT and/or DFR).
    Robustify(RunArgs),
    /// Train the downstream classifiers (ERM baseline and one per bank).
    TrainHead(RunArgs),
    /// Predict on the test split and write reports.
    Eval(RunArgs),
    /// Every phase end to end.
    Pipeline {
        /// Stop after this phase (data, stage1, stage2, classifier, eval).
        #[arg(long)]
        stop_after: Option<Phase>,
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Args)]
struct RunArgs {
    /// JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (same as --out_dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Redo phases whose recorded configuration differs.
    #[arg(long)]
    overwrite: bool,
    /// Dotted overrides (`--stage1.epochs 5`), plus `--strategy`, `--upweight` and `--seed`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "OVERRIDES")]
    overrides: Vec<String>,
}

struct Resolved {
    cfg: PipelineConfig,
    overwrite: bool,
    stop_after: Option<Phase>,
}

fn alias(flag: &str) -> &str {
    match flag {
        "strategy" => "stage2.strategies",
        "upweight" | "upweights" => "stage2.upweights",
        "out" => "out_dir",
        other => other,
    }
}

impl RunArgs {
    fn resolve(&self) -> Result<Resolved> {
        let mut config = self.config.clone();
        let mut overwrite = self.overwrite;
        let mut stop_after = None;
        let mut pairs = Vec::new();
        if let Some(out) = &self.out {
            pairs.push(("out_dir".to_string(), out.to_string_lossy().into_owned()));
        }
        let mut it = self.overrides.iter();
        while let Some(tok) = it.next() {
            let Some(flag) = tok.strip_prefix("--") else {
                return Err(Error::config(format!("unexpected argument {tok:?}")));
            };
            let (key, value) = match flag.split_once('=') {
                Some((k, v)) => (k.to_string(), Some(v.to_string())),
                None => (flag.to_string(), None),
            };
            if key == "overwrite" && value.is_none() {
                overwrite = true;
                continue;
            }
            let value = match value {
                Some(v) => v,
                None => it
                    .next()
                    .cloned()
                    .ok_or_else(|| Error::config(format!("flag --{key} needs a value")))?,
            };
            if key == "config" {
                config = Some(PathBuf::from(value));
                continue;
            }
            if key == "stop-after" {
                stop_after = Some(value.parse()?);
                continue;
            }
            pairs.push((alias(&key).to_string(), value));
        }
        let cfg = PipelineConfig::resolve(config.as_deref(), &pairs)?;
        Ok(Resolved {
            cfg,
            overwrite,
            stop_after,
        })
    }
}

fn print_summary(s: &RunSummary) {
    println!("run directory: {}", s.out_dir.display());
    let names = |v: &[Phase]| v.iter().map(|p| p.name()).collect::<Vec<_>>().join(", ");
    if !s.ran.is_empty() {
        println!("phases run: {}", names(&s.ran));
    }
    if !s.skipped.is_empty() {
        println!("phases reused: {}", names(&s.skipped));
    }
    if let Some(sel) = &s.selection {
        for (m, a) in &sel.candidates {
            println!("  {m}: validation AUROC {a:.4}");
        }
        println!("selected upweight: {}", sel.selected);
    }
    if !s.reports.is_empty() {
        println!(
            "{:<14} {:>8} {:>9} {:>8} {:>8} {:>8}",
            "method", "accuracy", "precision", "recall", "f1", "auroc"
        );
        for r in &s.reports {
            let m = &r.metrics;
            println!(
                "{:<14} {:>8.4} {:>9.4} {:>8.4} {:>8.4} {:>8.4}",
                r.method,
                m.accuracy,
                m.precision,
                m.recall,
                m.f1,
                m.auroc.unwrap_or(f64::NAN)
            );
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let (args, until, is_pipeline) = match &cli.cmd {
        Cmd::Synth { output, schema, run } => {
            let r = run.resolve()?;
            let schema_path = schema
                .clone()
                .unwrap_or_else(|| output.with_extension("schema.json"));
            let s = write_synth(&r.cfg.data.synth, output, &schema_path)?;
            println!(
                "wrote {} ({} rows, {} features) and {}",
                output.display(),
                r.cfg.data.synth.n,
                s.k() + s.c(),
                schema_path.display()
            );
            return Ok(());
        }
        Cmd::Pretrain(a) => (a, Some(Phase::Stage1), false),
        Cmd::Robustify(a) => (a, Some(Phase::Stage2), false),
        Cmd::TrainHead(a) => (a, Some(Phase::Classifier), false),
        Cmd::Eval(a) => (a, Some(Phase::Eval), false),
        Cmd::Pipeline { stop_after, run } => (run, *stop_after, true),
    };
    let r = args.resolve()?;
    if r.stop_after.is_some() && !is_pipeline {
        return Err(Error::config("--stop-after is only valid for the pipeline command"));
    }
    let until = until.or(r.stop_after).unwrap_or(Phase::Eval);
    let summary = run_pipeline(
        &r.cfg,
        RunOptions {
            until: Some(until),
            overwrite: r.overwrite,
        },
    )?;
    print_summary(&summary);
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => "error",
        (false, 0) => "info",
        (false, 1) => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
