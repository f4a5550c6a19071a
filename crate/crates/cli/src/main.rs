//! `ivcheck`: exit status 0 on success (including "do not reject"), 2 when
//! `test` rejects, 1 on any error.

mod args;
mod commands;
mod error;
mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches};
use log::{error, info, warn};

use ivcheck_core::config::CONFIG_KEYS;
use ivcheck_core::Config;

use args::{Cli, Command};
use commands::{Context, Decision};
use error::CliError;

fn config_help() -> String {
    let width = CONFIG_KEYS.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut s = String::from("Configuration keys (TOML file passed with --config; flags override it):\n");
    for (k, d) in CONFIG_KEYS {
        s.push_str(&format!("  {k:<width$}  {d}\n"));
    }
    s.push_str("\nExit status: 0 success, 2 the test rejects at some level, 1 error.");
    s
}

/// Arguments without `--config`, `--out`, `--jobs` and `--seed`; the manifest
/// records the resolved configuration separately, the worker count does not
/// affect results, and the resolved seed is appended.
fn canonical_args(raw: &[String], seed: u64) -> Vec<String> {
    let mut out = Vec::new();
    let mut it = raw.iter();
    while let Some(a) = it.next() {
        match a.as_str() {
            "--config" | "--out" | "--jobs" | "--seed" => {
                it.next();
            }
            s if ["--config=", "--out=", "--jobs=", "--seed="].iter().any(|p| s.starts_with(p)) => {}
            _ => out.push(a.clone()),
        }
    }
    out.push("--seed".into());
    out.push(seed.to_string());
    out
}

/// `--seed`, else an explicit `rng.seed` in the config file, else entropy.
fn resolve_seed(flag: Option<u64>, config_text: Option<&str>, config: &Config) -> (u64, String) {
    if let Some(s) = flag {
        return (s, "flag".into());
    }
    let explicit = config_text
        .and_then(|t| t.parse::<toml::Table>().ok())
        .is_some_and(|t| t.get("rng").and_then(|r| r.get("seed")).is_some() || t.contains_key("rng.seed"));
    if explicit {
        return (config.rng.seed, "config".into());
    }
    let s: u64 = rand::random();
    info!("no --seed given; using entropy seed {s}");
    (s, "entropy".into())
}

fn run(raw: Vec<String>, preset_config: Option<Config>, out_override: Option<PathBuf>) -> Result<Decision, CliError> {
    let matches = Cli::command()
        .after_long_help(config_help())
        .try_get_matches_from(std::iter::once("ivcheck".to_string()).chain(raw.iter().cloned()))
        .map_err(usage)?;
    let cli = Cli::from_arg_matches(&matches).map_err(usage)?;

    if let Some(j) = cli.global.jobs {
        if j == 0 {
            return Err(CliError::Usage("--jobs must be positive".into()));
        }
        // Only the first call in a process can size the global pool.
        if rayon::ThreadPoolBuilder::new().num_threads(j).build_global().is_err() {
            warn!("worker pool already initialized; --jobs ignored");
        }
    }

    if let Command::Replay(r) = &cli.command {
        let m = manifest::load(&r.manifest)?;
        let out = cli.global.out.clone().or(out_override).unwrap_or_else(|| {
            r.manifest.parent().map(|p| p.join("replay")).unwrap_or_else(|| PathBuf::from("replay"))
        });
        info!("replaying {} run {} into {}", m.command, m.run_id, out.display());
        return run(m.args, Some(m.config), Some(out));
    }

    let (config, text) = match (&preset_config, &cli.global.config) {
        (Some(c), _) => (c.clone(), None),
        (None, Some(p)) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
            (Config::from_toml_str(&text)?, Some(text))
        }
        (None, None) => (Config::default(), None),
    };
    let (seed, source) = resolve_seed(cli.global.seed, text.as_deref(), &config);
    let mut config = config;
    config.rng.seed = seed;
    let out = cli.global.out.clone().or(out_override);
    let mut ctx = Context::new(config, seed, source, canonical_args(&raw, seed), out);
    info!("seed {seed}");
    match &cli.command {
        Command::Fit(a) => commands::fit(&ctx, a),
        Command::Test(a) => commands::test(&mut ctx, a),
        Command::Overid(a) => commands::overid(&ctx, a),
        Command::IdentifiedSet(a) => commands::identified_set(&mut ctx, a),
        Command::Mte(a) => commands::mte(&ctx, a),
        Command::Simulate(a) => commands::simulate(&mut ctx, a),
        Command::Replay(_) => unreachable!("handled above"),
    }
}

fn usage(e: clap::Error) -> CliError {
    CliError::Usage(e.render().to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    let raw: Vec<String> = std::env::args_os().skip(1).map(|a: OsString| a.to_string_lossy().into_owned()).collect();

    // Help and version are successes, not usage errors.
    if let Err(e) = Cli::command().after_long_help(config_help()).try_get_matches_from(
        std::iter::once("ivcheck".to_string()).chain(raw.iter().cloned()),
    ) {
        use clap::error::ErrorKind;
        if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        let _ = e.print();
        return ExitCode::from(1);
    }

    match run(raw, None, None) {
        Ok(Decision::Done) => ExitCode::SUCCESS,
        Ok(Decision::Reject) => ExitCode::from(2),
        Err(e) => {
            error!("{e}");
            ExitCode::from(1)
        }
    }
}
