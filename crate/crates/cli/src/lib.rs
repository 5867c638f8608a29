//! Batch front end: argument and config-file handling, atomic output with a
//! checksum manifest, and dispatch to the subcommands.

// `!(x > 0.0)` is used deliberately so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod svg;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{ArgMatches, CommandFactory, FromArgMatches};
use sha2::{Digest, Sha256};

pub use commands::Cli;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;

/// Name of the manifest written next to the artifacts.
pub const MANIFEST: &str = "manifest.tsv";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Data(_) => EXIT_DATA,
        }
    }
}

impl From<quakecheck::Error> for CliError {
    fn from(e: quakecheck::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

/// Artifacts held in memory until the command has finished, so a failing
/// command writes nothing.
#[derive(Debug, Default)]
pub struct Outputs {
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    pub fn add(&mut self, name: impl Into<String>, content: impl Into<Vec<u8>>) {
        self.files.push((name.into(), content.into()));
    }

    pub fn names(&self) -> Vec<&str> {
        self.files.iter().map(|(n, _)| n.as_str()).collect()
    }
}

fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Data(format!("writing {name}: {e}"));
    let tmp = dir.join(format!(".{name}.tmp"));
    fs::write(&tmp, bytes).map_err(io)?;
    fs::rename(&tmp, dir.join(name)).map_err(io)
}

/// Writes every artifact, then the manifest: `# key = value` lines echoing
/// the configuration followed by one `path<TAB>sha256` line per artifact.
fn commit(dir: &Path, outputs: &Outputs, echo: &[(String, String)]) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Data(format!("creating {}: {e}", dir.display())))?;
    let mut manifest = String::new();
    for (k, v) in echo {
        let _ = writeln!(manifest, "# {k} = {v}");
    }
    for (name, bytes) in &outputs.files {
        write_atomic(dir, name, bytes)?;
        let _ = writeln!(manifest, "{name}\t{}", hex::encode(Sha256::digest(bytes)));
    }
    write_atomic(dir, MANIFEST, manifest.as_bytes())
}

/// Reads `key = value` lines; `#` starts a comment line.
pub fn parse_config_file(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("config line {}: expected `key = value`", i + 1)))?;
        let key = k.trim().replace('_', "-");
        if key.is_empty() || key == "config" {
            return Err(CliError::Config(format!("config line {}: bad key `{}`", i + 1, k.trim())));
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

/// Splices config-file entries in front of the command-line flags, so that
/// flags given on the command line win (every argument overrides itself).
fn expand_config(argv: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let mut config: Option<PathBuf> = None;
    let mut rest = Vec::with_capacity(argv.len());
    let mut it = argv.into_iter();
    while let Some(a) = it.next() {
        match a.to_str() {
            Some("--config") => {
                let p = it
                    .next()
                    .ok_or_else(|| CliError::Config("--config needs a path".into()))?;
                config = Some(p.into());
            }
            Some(s) if s.starts_with("--config=") => config = Some(s["--config=".len()..].into()),
            _ => rest.push(a),
        }
    }
    let Some(path) = config else {
        return Ok(rest);
    };
    let text = fs::read_to_string(&path)
        .map_err(|e| CliError::Config(format!("config file {}: {e}", path.display())))?;
    let entries = parse_config_file(&text)?;
    // Insert after the program name and the subcommand.
    let at = rest
        .iter()
        .skip(1)
        .position(|a| !a.to_string_lossy().starts_with('-'))
        .map(|p| p + 2)
        .ok_or_else(|| CliError::Config("missing subcommand".into()))?;
    let mut injected = Vec::new();
    for (k, v) in entries {
        match v.as_str() {
            "true" => injected.push(OsString::from(format!("--{k}"))),
            "false" => {}
            _ => injected.push(OsString::from(format!("--{k}={v}"))),
        }
    }
    rest.splice(at..at, injected);
    Ok(rest)
}

/// Effective configuration of the chosen subcommand, sorted by key, minus
/// settings that do not affect results (output directory, thread count).
fn echo(matches: &ArgMatches) -> Vec<(String, String)> {
    let Some((name, sub)) = matches.subcommand() else {
        return Vec::new();
    };
    let mut out = vec![("command".to_string(), name.to_string())];
    let mut keys: Vec<&str> = sub.ids().map(|id| id.as_str()).collect();
    keys.sort_unstable();
    for k in keys {
        if matches!(k, "out" | "threads") {
            continue;
        }
        if let Ok(Some(raw)) = sub.try_get_raw(k) {
            let vals: Vec<String> = raw.map(|v| v.to_string_lossy().into_owned()).collect();
            out.push((k.replace('_', "-"), vals.join(",")));
        }
    }
    out
}

/// Runs the CLI and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match try_run(argv.into_iter().map(Into::into).collect()) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("quakecheck: {e}");
            e.exit_code()
        }
    }
}

fn try_run(argv: Vec<OsString>) -> Result<(), CliError> {
    let argv = expand_config(argv)?;
    let matches = match Cli::command().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind;
            let shown = matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let _ = e.print();
            return if shown {
                Ok(())
            } else {
                Err(CliError::Config("invalid arguments".into()))
            };
        }
    };
    let cli = Cli::from_arg_matches(&matches).map_err(|e| CliError::Config(e.to_string()))?;
    cli.command.validate()?;
    let common = cli.command.common();
    let outputs = match common.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?
            .install(|| cli.command.execute())?,
        None => cli.command.execute()?,
    };
    commit(&common.out, &outputs, &echo(&matches))
}
