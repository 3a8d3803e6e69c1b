mod args;
mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use pmm_core::{Execution, PmmError};
use serde_json::json;

use args::{pick, usage, Cli, Command, ConfigFile, Format, UsageError};
use commands::{RunContext, DEFAULT_SEED};
use report::Outputs;

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Validate(_) => "validate",
        Command::Estimate(_) => "estimate",
        Command::Tipping(_) => "tipping",
        Command::Simulate(_) => "simulate",
        Command::MiCompare(_) => "mi-compare",
        Command::SynthAward => "synth-award",
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let g = &cli.global;
    let config = ConfigFile::load(g.config.as_deref())?;
    let alpha = pick(g.alpha, config.alpha).unwrap_or(0.05);
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(usage(format!("--alpha {alpha} must lie in (0, 0.5)")));
    }
    let threads = pick(g.threads, config.threads);
    if threads == Some(0) {
        return Err(usage("--threads must be at least 1"));
    }
    if let Some(t) = threads {
        pmm_core::parallel::set_threads(t)?;
    }
    let seed_given = pick(g.seed, config.seed);
    let out_dir = pick(g.out.clone(), config.out.clone()).unwrap_or_else(|| PathBuf::from("pmm-out"));
    let ctx = RunContext {
        seed: seed_given.unwrap_or(DEFAULT_SEED),
        seed_given: seed_given.is_some(),
        alpha,
        format: pick(g.format, config.format).unwrap_or(Format::Csv),
        exec: if threads == Some(1) { Execution::Sequential } else { Execution::default() },
        config,
    };

    let mut out = Outputs::new(&out_dir);
    let result = match &cli.command {
        Command::Validate(a) => commands::validate(&ctx, a, &mut out),
        Command::Estimate(a) => commands::estimate_cmd(&ctx, a, &mut out),
        Command::Tipping(a) => commands::tipping_cmd(&ctx, a, &mut out),
        Command::Simulate(a) => commands::simulate_cmd(&ctx, a, &mut out),
        Command::MiCompare(a) => commands::mi_cmd(&ctx, a, &mut out),
        Command::SynthAward => commands::synth_award(&ctx, &mut out),
    }
    .and_then(|settings| {
        let outputs = out.names();
        let manifest = json!({
            "schema_version": report::SCHEMA_VERSION,
            "tool": "pmm",
            "version": env!("CARGO_PKG_VERSION"),
            "command": command_name(&cli.command),
            "argv": std::env::args().collect::<Vec<_>>(),
            "seed": ctx.seed,
            "alpha": ctx.alpha,
            "format": ctx.format,
            "threads": threads,
            "parallel": ctx.exec == Execution::Parallel && Execution::available(),
            "settings": settings,
            "outputs": outputs,
        });
        out.write_json("run_manifest.json", manifest).map(|_| ())
    });
    if result.is_err() {
        out.discard();
    }
    result
}

fn error_kind(e: &anyhow::Error) -> String {
    if e.is::<UsageError>() {
        return "Usage".into();
    }
    if let Some(p) = e.chain().find_map(|c| c.downcast_ref::<PmmError>()) {
        let dbg = format!("{p:?}");
        return dbg.split(|c: char| !c.is_alphanumeric()).next().unwrap_or("Error").to_string();
    }
    if e.chain().any(|c| c.is::<std::io::Error>()) {
        return "Io".into();
    }
    "Error".into()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = if e.is::<UsageError>() { 2 } else { 1 };
            let body = json!({"error": {"kind": error_kind(&e), "message": format!("{e:#}")}});
            eprintln!("{body}");
            ExitCode::from(code)
        }
    }
}
