//! Run directories: data files, `checks.csv` and `manifest.json`, plus the `report` aggregator.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::Resolved;

pub const SCHEMA_VERSION: u32 = 1;
pub const CHECKS_FILE: &str = "checks.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// One asserted invariant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    /// Acceptance criterion this row belongs to (0 for diagnostics).
    pub criterion: u32,
    pub name: String,
    pub value: f64,
    /// Human-readable bound, e.g. `<= 1e-10`.
    pub threshold: String,
    pub pass: bool,
    /// Data pointer, `file` or `file:row`.
    pub source: String,
}

impl Check {
    pub fn new(criterion: u32, name: impl Into<String>, value: f64, threshold: impl Into<String>, pass: bool, source: impl Into<String>) -> Self {
        Check { criterion, name: name.into(), value, threshold: threshold.into(), pass, source: source.into() }
    }

    pub fn at_most(criterion: u32, name: impl Into<String>, value: f64, bound: f64, source: impl Into<String>) -> Self {
        Check::new(criterion, name, value, format!("<= {bound:e}"), value <= bound, source)
    }

    pub fn flag(criterion: u32, name: impl Into<String>, ok: bool, source: impl Into<String>) -> Self {
        Check::new(criterion, name, if ok { 1.0 } else { 0.0 }, "true", ok, source)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub checks: Vec<Check>,
    /// `(file name, contents)`.
    pub files: Vec<(String, String)>,
    /// Optional table printed by `--summary`.
    pub summary: Option<String>,
}

impl Outcome {
    pub fn file(&mut self, name: impl Into<String>, contents: String) {
        self.files.push((name.into(), contents));
    }

    pub fn passed(&self) -> usize {
        self.checks.iter().filter(|c| c.pass).count()
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn checks_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["criterion", "check", "value", "threshold", "pass", "source"]).unwrap();
        for c in &self.checks {
            w.write_record([
                c.criterion.to_string(),
                c.name.clone(),
                format!("{:.12e}", c.value),
                c.threshold.clone(),
                c.pass.to_string(),
                c.source.clone(),
            ])
            .unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }

    pub fn table(&self) -> String {
        let width = self.checks.iter().map(|c| c.name.chars().count()).max().unwrap_or(5).max(5);
        let mut s = String::new();
        let _ = writeln!(s, "{:<width$}  {:>13}  {:<14}  result", "check", "value", "threshold");
        for c in &self.checks {
            let _ = writeln!(s, "{:<width$}  {:>13.5e}  {:<14}  {}", c.name, c.value, c.threshold, if c.pass { "pass" } else { "FAIL" });
        }
        s
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub scenario: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub versions: Vec<(String, String)>,
    pub threads: Option<usize>,
    pub checks: usize,
    pub passed: usize,
    pub files: Vec<FileEntry>,
    pub config: serde_json::Value,
    /// Only field allowed to differ between identical runs.
    pub timestamp: String,
}

fn sha256_hex(data: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    Sha256::digest(data).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn versions() -> Vec<(String, String)> {
    vec![
        ("psido-cli".into(), env!("CARGO_PKG_VERSION").into()),
        ("psido-core".into(), psido_core::VERSION.into()),
        ("schema".into(), SCHEMA_VERSION.to_string()),
    ]
}

/// Writes the outcome's files, `checks.csv` and the manifest into `dir`.
pub fn write_run(dir: &Path, cfg: &Resolved, outcome: &Outcome) -> std::io::Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let checks = outcome.checks_csv();
    for (name, contents) in outcome.files.iter().map(|(n, c)| (n.as_str(), c)).chain([(CHECKS_FILE, &checks)]) {
        std::fs::write(dir.join(name), contents)?;
        files.push(FileEntry { name: name.to_string(), sha256: sha256_hex(contents.as_bytes()) });
    }
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        scenario: cfg.scenario.to_string(),
        config_hash: cfg.config_hash(),
        seeds: vec![cfg.seed],
        versions: versions(),
        threads: cfg.threads,
        checks: outcome.checks.len(),
        passed: outcome.passed(),
        files,
        config: serde_json::from_str(&cfg.canonical_json()).unwrap(),
        timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
    };
    let path = dir.join(MANIFEST_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(&manifest).unwrap() + "\n")?;
    Ok(path)
}

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("{0} does not exist or is not a directory")]
    NotADirectory(PathBuf),
    #[error("no {CHECKS_FILE} found under {0}")]
    NoArtifacts(PathBuf),
    #[error("{path}: {msg}")]
    Malformed { path: PathBuf, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct Failure {
    pub file: PathBuf,
    /// 1-based line in the checks file, header included.
    pub row: usize,
    pub check: Check,
}

#[derive(Debug, Clone)]
pub struct Report {
    pub runs: usize,
    pub total: usize,
    pub passed: usize,
    pub failures: Vec<Failure>,
}

impl Report {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn render(&self) -> String {
        let mut s = format!("{}/{} pass", self.passed, self.total);
        if self.runs > 1 {
            let _ = write!(s, " ({} runs)", self.runs);
        }
        s.push('\n');
        for f in &self.failures {
            let c = &f.check;
            let _ = writeln!(
                s,
                "FAIL {}:{}: [{}] {} = {:.6e}, want {} (data: {})",
                f.file.display(),
                f.row,
                c.criterion,
                c.name,
                c.value,
                c.threshold,
                c.source
            );
        }
        s
    }
}

fn collect_checks(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.path());
    for e in entries {
        let p = e.path();
        if p.is_dir() {
            collect_checks(&p, out)?;
        } else if p.file_name().is_some_and(|n| n == CHECKS_FILE) {
            out.push(p);
        }
    }
    Ok(())
}

/// Aggregates every `checks.csv` below `dir`.
pub fn report(dir: &Path) -> Result<Report, ReportError> {
    if !dir.is_dir() {
        return Err(ReportError::NotADirectory(dir.to_path_buf()));
    }
    let mut paths = Vec::new();
    collect_checks(dir, &mut paths)?;
    if paths.is_empty() {
        return Err(ReportError::NoArtifacts(dir.to_path_buf()));
    }
    let mut rep = Report { runs: paths.len(), total: 0, passed: 0, failures: Vec::new() };
    for path in paths {
        let mut rdr = csv::Reader::from_path(&path).map_err(|e| ReportError::Malformed { path: path.clone(), msg: e.to_string() })?;
        for (i, rec) in rdr.deserialize::<CheckRow>().enumerate() {
            let row = rec.map_err(|e| ReportError::Malformed { path: path.clone(), msg: e.to_string() })?;
            let check = Check {
                criterion: row.criterion,
                name: row.check,
                value: row.value,
                threshold: row.threshold,
                pass: row.pass,
                source: row.source,
            };
            rep.total += 1;
            if check.pass {
                rep.passed += 1;
            } else {
                rep.failures.push(Failure { file: path.clone(), row: i + 2, check });
            }
        }
    }
    Ok(rep)
}

#[derive(Deserialize)]
struct CheckRow {
    criterion: u32,
    check: String,
    value: f64,
    threshold: String,
    pass: bool,
    source: String,
}
