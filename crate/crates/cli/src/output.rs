//! Errors, exit codes, output files and stdout tables.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use serde::Serialize;
use serde_json::json;

use projot_core::pipeline::BenchmarkRow;
use projot_core::verify::SuiteReport;
use projot_core::{Error, ErrorKind};

#[derive(Debug)]
pub enum CliError {
    Core(Error),
    Usage(String),
    Write { path: PathBuf, message: String },
    SuiteFailed(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn kind(&self) -> ErrorKind {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::Usage(_) => ErrorKind::Usage,
            CliError::Write { .. } => ErrorKind::Data,
            CliError::SuiteFailed(_) => ErrorKind::Numerical,
        }
    }

    fn module(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.module(),
            CliError::Usage(_) | CliError::Write { .. } => "cli",
            CliError::SuiteFailed(_) => "property_suite",
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Core(e) => e.to_string(),
            CliError::Usage(m) | CliError::SuiteFailed(m) => m.clone(),
            CliError::Write { path, message } => format!("{}: {message}", path.display()),
        }
    }
}

/// Prints `{"error": {...}}` on stderr and returns the matching exit code.
pub fn report_error(e: &CliError) -> ExitCode {
    let kind = e.kind();
    let code = kind.exit_code();
    let doc = json!({
        "error": {
            "kind": format!("{kind:?}").to_lowercase(),
            "module": e.module(),
            "message": e.message(),
            "exit_code": code,
        }
    });
    eprintln!("{doc}");
    ExitCode::from(code as u8)
}

/// Paths created by this invocation, removed again if it fails.
#[derive(Default)]
pub struct Outputs {
    created: Vec<PathBuf>,
}

impl Outputs {
    pub fn register(&mut self, path: &Path) {
        if !path.exists() {
            self.created.push(path.to_path_buf());
        }
    }

    /// Forget everything registered so far; those files survive a later error.
    pub fn keep(&mut self) {
        self.created.clear();
    }

    pub fn remove_all(&mut self) {
        for p in self.created.drain(..).rev() {
            let _ = if p.is_dir() { fs::remove_dir_all(&p) } else { fs::remove_file(&p) };
        }
    }

    pub fn write_json<T: Serialize>(&mut self, path: &Path, value: &T) -> Result<(), CliError> {
        self.register(path);
        let mut text = serde_json::to_string_pretty(value).expect("serializable report");
        text.push('\n');
        fs::write(path, text).map_err(|e| CliError::Write { path: path.into(), message: e.to_string() })
    }

    pub fn write_csv<T: Serialize>(&mut self, path: &Path, rows: &[T]) -> Result<(), CliError> {
        self.register(path);
        let fail = |e: &dyn std::fmt::Display| CliError::Write { path: path.into(), message: e.to_string() };
        let mut w = csv::Writer::from_path(path).map_err(|e| fail(&e))?;
        for r in rows {
            w.serialize(r).map_err(|e| fail(&e))?;
        }
        w.flush().map_err(|e| fail(&e))
    }
}

pub fn print_rows(rows: &[BenchmarkRow]) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{:<14} {:>8} {:>8} {:>11} {:>8} {:>9}", "method", "clean", "robust", "mean_margin", "samples", "seconds");
    for r in rows {
        let robust = r.robust_accuracy.map_or_else(|| "-".to_string(), |v| format!("{:.4}", v));
        let _ = writeln!(
            out,
            "{:<14} {:>8.4} {:>8} {:>11.5} {:>8} {:>9.3}",
            r.method.to_string(),
            r.clean_accuracy,
            robust,
            r.mean_margin,
            r.samples,
            r.seconds
        );
    }
}

/// Table on stdout, or on stderr when stdout carries the JSON report.
pub fn print_suite(report: &SuiteReport, to_stderr: bool) {
    let mut out: Box<dyn Write> =
        if to_stderr { Box::new(std::io::stderr().lock()) } else { Box::new(std::io::stdout().lock()) };
    let _ = writeln!(out, "suite {} ({} trials, seed {})", report.suite, report.trials, report.seed);
    for c in &report.checks {
        let _ = writeln!(
            out,
            "  {:<4} {:<30} {}/{}  worst {:.3e}  tol {:.1e}",
            if c.pass { "ok" } else { "FAIL" },
            c.name,
            c.passed,
            c.total,
            c.worst,
            c.tolerance
        );
    }
    for (k, v) in &report.stats {
        let _ = writeln!(out, "  stat {k} = {v:.6}");
    }
}
