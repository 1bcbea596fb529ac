//! `manifest.json`: what ran, with which configuration, and how long it took.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::{CliResult, Stage};

pub const FILE: &str = "manifest.json";

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct StageTime {
    pub name: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub program: String,
    pub version: String,
    pub problem: String,
    pub seed: u64,
    pub config_hash: String,
    pub git_revision: Option<String>,
    pub workers: usize,
    pub rerun: String,
    pub config: BTreeMap<String, String>,
    pub stages: Vec<StageTime>,
}

fn git_revision() -> Option<String> {
    let out = Command::new("git").args(["rev-parse", "HEAD"]).output().ok()?;
    if !out.status.success() {
        return None;
    }
    let rev = String::from_utf8(out.stdout).ok()?.trim().to_string();
    (!rev.is_empty()).then_some(rev)
}

impl Manifest {
    /// Loads the manifest in `dir` if it was written for the same
    /// configuration, otherwise starts a fresh one.
    pub fn open(dir: &Path, cfg: &RunConfig) -> Self {
        let hash = cfg.hash();
        if let Ok(text) = std::fs::read_to_string(dir.join(FILE)) {
            if let Ok(m) = serde_json::from_str::<Manifest>(&text) {
                if m.config_hash == hash {
                    return m;
                }
            }
        }
        let mut config = cfg.resolved.clone();
        config.remove("out");
        Manifest {
            program: "branchpde".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            problem: cfg.problem.name().into(),
            seed: cfg.seed,
            config_hash: hash,
            git_revision: git_revision(),
            workers: rayon::current_num_threads(),
            rerun: "branchpde run --config config.txt --workers 1".into(),
            config,
            stages: Vec::new(),
        }
    }

    pub fn record(&mut self, name: &str, seconds: f64) {
        self.stages.retain(|s| s.name != name);
        self.stages.push(StageTime {
            name: name.to_string(),
            seconds,
        });
    }

    pub fn save(&self, dir: &Path) -> CliResult<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| crate::Failure::new(
            crate::ExitKind::Validation,
            "manifest",
            e.to_string(),
        ))?;
        std::fs::write(dir.join(FILE), text + "\n").stage("manifest")
    }
}
