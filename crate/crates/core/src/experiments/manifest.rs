//! Plain-text artifact manifest.
//!
//! ```text
//! # lumen-eit experiment manifest
//! version = 1
//! scenario = dilation
//! seed = 0
//! config_sha256 = 3f...
//! status = complete
//! toml config.toml
//! csv csa.csv
//! vtk images/ptd_000.vtk
//! ```
//!
//! Artifact paths are relative to the manifest's directory. A failed run
//! has `status = failed: <stage>` and lists what was written before the
//! failure.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::config::{ExperimentConfig, CONFIG_VERSION};
use crate::error::{Error, Result};
use crate::geometry::io::parse_vtk;

pub const MANIFEST_FILE: &str = "manifest.txt";
const HEADER: &str = "# lumen-eit experiment manifest";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArtifactKind {
    Csv,
    Vtk,
    Toml,
}

impl ArtifactKind {
    fn tag(self) -> &'static str {
        match self {
            Self::Csv => "csv",
            Self::Vtk => "vtk",
            Self::Toml => "toml",
        }
    }

    fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "csv" => Some(Self::Csv),
            "vtk" => Some(Self::Vtk),
            "toml" => Some(Self::Toml),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    pub kind: ArtifactKind,
    /// Relative to the manifest directory, `/`-separated.
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RunStatus {
    Running,
    Complete,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    root: PathBuf,
    pub scenario: String,
    pub seed: u64,
    pub config_sha256: String,
    pub status: RunStatus,
    pub artifacts: Vec<Artifact>,
}

impl Manifest {
    pub(crate) fn new(root: &Path, cfg: &ExperimentConfig) -> Self {
        Self {
            root: root.to_path_buf(),
            scenario: cfg.scenario.name().into(),
            seed: cfg.seed,
            config_sha256: cfg.sha256(),
            status: RunStatus::Running,
            artifacts: Vec::new(),
        }
    }

    /// Directory the artifact paths are relative to.
    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self) -> PathBuf {
        self.root.join(MANIFEST_FILE)
    }

    pub fn artifact_path(&self, artifact: &Artifact) -> PathBuf {
        self.root.join(&artifact.path)
    }

    /// Writes one artifact through `write` and records it once it exists.
    pub(crate) fn add(&mut self, kind: ArtifactKind, rel: &str, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
        write(&self.root.join(rel))?;
        self.artifacts.push(Artifact {
            kind,
            path: rel.into(),
        });
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let status = match &self.status {
            RunStatus::Running => "running".to_string(),
            RunStatus::Complete => "complete".to_string(),
            RunStatus::Failed(stage) => format!("failed: {stage}"),
        };
        let _ = writeln!(s, "{HEADER}");
        let _ = writeln!(s, "version = {CONFIG_VERSION}");
        let _ = writeln!(s, "scenario = {}", self.scenario);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "config_sha256 = {}", self.config_sha256);
        let _ = writeln!(s, "status = {status}");
        for a in &self.artifacts {
            let _ = writeln!(s, "{} {}", a.kind.tag(), a.path);
        }
        s
    }

    pub(crate) fn write(&self) -> Result<()> {
        fs::write(self.path(), self.to_text())?;
        Ok(())
    }

    /// Reads `manifest.txt` from `dir`.
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path)?;
        let bad = |m: String| Error::parse(&path, m);
        let mut lines = text.lines();
        if lines.next() != Some(HEADER) {
            return Err(bad("missing manifest header".into()));
        }
        let mut field = |key: &str| -> Result<String> {
            let line = lines.next().unwrap_or_default();
            line.strip_prefix(key)
                .and_then(|r| r.strip_prefix(" = "))
                .map(str::to_string)
                .ok_or_else(|| bad(format!("expected `{key} = ...`, found `{line}`")))
        };
        let version = field("version")?;
        if version != CONFIG_VERSION.to_string() {
            return Err(bad(format!("unsupported manifest version {version}")));
        }
        let scenario = field("scenario")?;
        let seed = field("seed")?.parse().map_err(|e| bad(format!("seed: {e}")))?;
        let config_sha256 = field("config_sha256")?;
        let status = match field("status")?.as_str() {
            "running" => RunStatus::Running,
            "complete" => RunStatus::Complete,
            other => match other.strip_prefix("failed: ") {
                Some(stage) => RunStatus::Failed(stage.into()),
                None => return Err(bad(format!("unknown status `{other}`"))),
            },
        };
        let artifacts = lines
            .map(|line| {
                let (tag, rel) = line.split_once(' ').ok_or_else(|| bad(format!("malformed entry `{line}`")))?;
                let kind = ArtifactKind::from_tag(tag).ok_or_else(|| bad(format!("unknown artifact kind `{tag}`")))?;
                Ok(Artifact {
                    kind,
                    path: rel.into(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            root: dir.to_path_buf(),
            scenario,
            seed,
            config_sha256,
            status,
            artifacts,
        })
    }

    /// Checks that every listed artifact exists and parses as its kind.
    pub fn verify(&self) -> Result<()> {
        for a in &self.artifacts {
            let path = self.artifact_path(a);
            let text = fs::read_to_string(&path)?;
            match a.kind {
                ArtifactKind::Csv => {
                    // Frame files carry `#` metadata lines before the header.
                    let mut rd = csv::ReaderBuilder::new()
                        .comment(Some(b'#'))
                        .from_reader(text.as_bytes());
                    let width = rd.headers()?.len();
                    for rec in rd.records() {
                        if rec?.len() != width {
                            return Err(Error::parse(&path, "ragged CSV row"));
                        }
                    }
                }
                ArtifactKind::Vtk => {
                    parse_vtk(&text).map_err(|m| Error::parse(&path, m))?;
                }
                ArtifactKind::Toml => {
                    ExperimentConfig::parse(&text, &path)?;
                }
            }
        }
        Ok(())
    }
}
