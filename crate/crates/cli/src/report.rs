use std::io::Write;
use std::path::Path;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::ValueEnum;

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Text,
}

/// Error raised by a library operation, tagged with its module.
#[derive(Debug)]
pub struct DomainError {
    pub module: &'static str,
    pub kind: &'static str,
    pub message: String,
}

impl DomainError {
    pub fn new(module: &'static str, kind: &'static str, message: String) -> Self {
        Self { module, kind, message }
    }
}

impl std::fmt::Display for DomainError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}::{}: {}", self.module, self.kind, self.message)
    }
}

impl std::error::Error for DomainError {}

/// Invalid combination of flags that clap cannot express.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Result of one subcommand in every supported format.
pub struct Report {
    pub json: serde_json::Value,
    pub csv: Option<String>,
    pub text: String,
}

impl Report {
    pub fn json(json: serde_json::Value, text: String) -> Self {
        Self { json, csv: None, text }
    }

    fn render(&self, format: Format) -> Result<String> {
        Ok(match format {
            Format::Json => {
                let mut s = serde_json::to_string_pretty(&self.json)?;
                s.push('\n');
                s
            }
            Format::Csv => self
                .csv
                .clone()
                .ok_or_else(|| UsageError("csv output is not available for this command".into()))?,
            Format::Text => self.text.clone(),
        })
    }

    /// Machine output goes to `out` when given, with the text summary on
    /// stdout; otherwise the selected format goes to stdout.
    pub fn emit(&self, format: Format, out: Option<&Path>) -> Result<()> {
        let body = self.render(format)?;
        let mut stdout = std::io::stdout().lock();
        match out {
            Some(path) => {
                std::fs::write(path, body).with_context(|| format!("writing {}", path.display()))?;
                stdout.write_all(self.text.as_bytes())?;
            }
            None => stdout.write_all(body.as_bytes())?,
        }
        Ok(())
    }
}

pub fn exit_for(e: &anyhow::Error) -> ExitCode {
    if let Some(u) = e.downcast_ref::<UsageError>() {
        eprintln!("error: {u}");
        return ExitCode::from(2);
    }
    if let Some(d) = e.downcast_ref::<DomainError>() {
        eprintln!("error: {d}");
    } else {
        eprintln!("error: {e:#}");
    }
    ExitCode::from(1)
}
