//! `serve` configuration file (TOML).
//!
//! ```toml
//! listen = "127.0.0.1:8080"
//! catalog = "images"          # directory, served in file-name order
//! ground_truth = "gt.txt"
//! labels = "labels.txt"       # optional; 200 numbered classes otherwise
//! window_secs = 600
//! sessions_dir = "sessions"
//! runs_dir = "runs"
//! trace_dir = "traces"        # optional
//! track = "Track2"
//!
//! [[teams]]
//! id = "alpha"
//! credential = "s3cret"
//! ```
//!
//! Relative paths are resolved against the config file's directory.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::service::Roster;
use super::RefereeError;
use crate::leaderboard::Track;

fn default_listen() -> String {
    "127.0.0.1:8080".into()
}

fn default_window() -> u64 {
    600
}

fn default_workers() -> usize {
    8
}

fn default_track() -> Track {
    Track::Track2
}

#[derive(Debug, Clone, Deserialize)]
pub struct TeamEntry {
    pub id: String,
    pub credential: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServeConfig {
    #[serde(default = "default_listen")]
    pub listen: String,
    pub catalog: PathBuf,
    pub ground_truth: PathBuf,
    pub labels: Option<PathBuf>,
    #[serde(default = "default_window")]
    pub window_secs: u64,
    pub sessions_dir: PathBuf,
    pub runs_dir: Option<PathBuf>,
    pub trace_dir: Option<PathBuf>,
    #[serde(default = "default_track")]
    pub track: Track,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub teams: Vec<TeamEntry>,
}

impl ServeConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, RefereeError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| RefereeError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg: ServeConfig = toml::from_str(&text)
            .map_err(|e| RefereeError::BadRequest(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve(base);
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.catalog);
        fix(&mut self.ground_truth);
        fix(&mut self.sessions_dir);
        for p in [&mut self.labels, &mut self.runs_dir, &mut self.trace_dir]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
    }

    pub fn roster(&self) -> Roster {
        self.teams
            .iter()
            .fold(Roster::new(), |r, t| r.with_team(&t.id, &t.credential))
    }

    pub fn window_ms(&self) -> u64 {
        self.window_secs * 1000
    }
}
