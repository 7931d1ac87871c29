//! Run directories and their manifest.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use time::format_description::well_known::Rfc3339;
use time::OffsetDateTime;

use stewart_core::ExperimentConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Trace,
    Disturb,
    Sweep,
    Scan,
    TrainIk,
    EvalIk,
    Serve,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Trace => "trace",
            Self::Disturb => "disturb",
            Self::Sweep => "sweep",
            Self::Scan => "scan",
            Self::TrainIk => "train-ik",
            Self::EvalIk => "eval-ik",
            Self::Serve => "serve",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub kind: ExperimentKind,
    pub seed: u64,
    pub config_hash: String,
    pub version: String,
    pub started_at: String,
    pub finished_at: String,
    /// Paths relative to the run directory, sorted.
    pub files: Vec<String>,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.toml";

/// Output directory of one experiment run. Every file written through it is
/// listed in the manifest.
#[derive(Debug)]
pub struct RunDir {
    root: PathBuf,
    kind: ExperimentKind,
    seed: u64,
    config_hash: String,
    started_at: String,
    files: Vec<String>,
}

fn now() -> String {
    OffsetDateTime::now_utc().format(&Rfc3339).unwrap_or_default()
}

impl RunDir {
    /// Create `root` and write the resolved configuration into it.
    pub fn create(root: &Path, kind: ExperimentKind, seed: u64, config: &ExperimentConfig) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        let mut dir = Self {
            root: root.to_path_buf(),
            kind,
            seed,
            config_hash: config.hash()?,
            started_at: now(),
            files: Vec::new(),
        };
        dir.write_text(CONFIG_FILE, &config.to_toml()?)?;
        Ok(dir)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn run_id(&self) -> String {
        format!("{}-{}-{}", self.kind.name(), self.seed, &self.config_hash[..12])
    }

    fn target(&mut self, rel: &str) -> Result<PathBuf> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        if !self.files.iter().any(|f| f == rel) {
            self.files.push(rel.to_string());
        }
        Ok(path)
    }

    pub fn write_text(&mut self, rel: &str, text: &str) -> Result<()> {
        let path = self.target(rel)?;
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_text(rel, &text)
    }

    pub fn write_csv<S: AsRef<str>>(&mut self, rel: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<S>>) -> Result<()> {
        let path = self.target(rel)?;
        let mut w = csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
        w.write_record(header)?;
        for row in rows {
            w.write_record(row.iter().map(|c| c.as_ref()))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Write `manifest.json` and return it.
    pub fn finish(mut self) -> Result<RunManifest> {
        self.files.push(MANIFEST_FILE.to_string());
        self.files.sort();
        let manifest = RunManifest {
            run_id: self.run_id(),
            kind: self.kind,
            seed: self.seed,
            config_hash: self.config_hash.clone(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            started_at: self.started_at.clone(),
            finished_at: now(),
            files: self.files.clone(),
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(self.root.join(MANIFEST_FILE), text)?;
        Ok(manifest)
    }
}

pub fn read_manifest(root: &Path) -> Result<RunManifest> {
    let text = fs::read_to_string(root.join(MANIFEST_FILE)).with_context(|| format!("reading manifest in {}", root.display()))?;
    Ok(serde_json::from_str(&text)?)
}

/// Fixed nine-decimal rendering used in every CSV table.
pub fn fmt(v: f64) -> String {
    format!("{v:.9}")
}
