//! Append-only run store, ranking and prize grouping.

use std::fmt::Write as _;
use std::fs::{File, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::referee::RunReport;
use crate::track1::Track1Scores;

/// Default score difference under which adjacent teams share a prize.
pub const DEFAULT_TIE_EPSILON: f64 = 0.001;

const INDEX_FILE: &str = "index.jsonl";
const REPORTS_DIR: &str = "reports";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: corrupt index record: {source}")]
    Corrupt {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("serializing report: {0}")]
    Encode(#[from] serde_json::Error),
    #[error("no run with id {0}")]
    UnknownRun(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Track {
    Track1,
    Track2,
    Track3,
}

impl FromStr for Track {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "track1" | "1" => Ok(Track::Track1),
            "track2" | "2" => Ok(Track::Track2),
            "track3" | "3" => Ok(Track::Track3),
            _ => Err(format!(
                "unknown track `{s}` (expected Track1, Track2 or Track3)"
            )),
        }
    }
}

impl std::fmt::Display for Track {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

/// The two numbers a score is built from.
///
/// Detection tracks: `accuracy` is mAP and `cost` is watt-hours.
/// Track 1: `accuracy` is the test metric and `cost` the mean latency in ms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Components {
    pub accuracy: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardEntry {
    pub team_id: String,
    pub track: Track,
    pub score: f64,
    pub components: Components,
    pub run_id: String,
    /// Referee-clock milliseconds.
    pub timestamp_ms: u64,
}

impl LeaderboardEntry {
    /// Score rebuilt from the stored components.
    pub fn recomputed_score(&self) -> f64 {
        match self.track {
            Track::Track1 => self.components.accuracy,
            Track::Track2 | Track::Track3 => self.components.accuracy / self.components.cost,
        }
    }
}

/// A Track 1 evaluation worth keeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track1Report {
    pub team_id: String,
    pub scores: Track1Scores,
}

/// What gets persisted for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunPayload {
    Detection { track: Track, report: RunReport },
    Track1(Track1Report),
}

impl RunPayload {
    fn entry(&self, run_id: String) -> LeaderboardEntry {
        match self {
            RunPayload::Detection { track, report } => LeaderboardEntry {
                team_id: report.team_id.clone(),
                track: *track,
                score: report.score,
                components: Components {
                    accuracy: report.map,
                    cost: report.energy_wh,
                },
                run_id,
                timestamp_ms: report.login_at_ms,
            },
            RunPayload::Track1(r) => LeaderboardEntry {
                team_id: r.team_id.clone(),
                track: Track::Track1,
                score: r.scores.test_metric,
                components: Components {
                    accuracy: r.scores.test_metric,
                    cost: r.scores.mean_latency_ms,
                },
                run_id,
                timestamp_ms: 0,
            },
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunFilter {
    pub team_id: Option<String>,
    pub track: Option<Track>,
}

impl RunFilter {
    fn matches(&self, e: &LeaderboardEntry) -> bool {
        self.team_id.as_ref().is_none_or(|t| *t == e.team_id)
            && self.track.is_none_or(|t| t == e.track)
    }
}

/// Directory-backed, append-only run store.
///
/// Layout: `index.jsonl` holds one [`LeaderboardEntry`] per line and
/// `reports/<run_id>.json` the full payload as written.
#[derive(Debug)]
pub struct RunStore {
    dir: PathBuf,
    writer: Mutex<(File, usize)>,
}

impl RunStore {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        let reports = dir.join(REPORTS_DIR);
        std::fs::create_dir_all(&reports).map_err(io_err(&reports))?;
        let index = dir.join(INDEX_FILE);
        let existing = read_index(&index)?.len();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&index)
            .map_err(io_err(&index))?;
        Ok(Self {
            dir,
            writer: Mutex::new((file, existing)),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Writes the payload and appends its index line; returns the run id.
    pub fn persist_run(&self, payload: &RunPayload) -> Result<String, StoreError> {
        let body = serde_json::to_string_pretty(payload)?;
        let mut guard = self.writer.lock().unwrap_or_else(|p| p.into_inner());
        let run_id = format!("run-{:06}", guard.1 + 1);
        let report_path = self.report_path(&run_id);
        std::fs::write(&report_path, body.as_bytes()).map_err(io_err(&report_path))?;

        let mut line = serde_json::to_string(&payload.entry(run_id.clone()))?;
        line.push('\n');
        let index = self.dir.join(INDEX_FILE);
        guard
            .0
            .write_all(line.as_bytes())
            .and_then(|_| guard.0.flush())
            .map_err(io_err(&index))?;
        guard.1 += 1;
        Ok(run_id)
    }

    /// The stored payload bytes, exactly as written.
    pub fn read_report(&self, run_id: &str) -> Result<String, StoreError> {
        let path = self.report_path(run_id);
        std::fs::read_to_string(&path).map_err(|source| {
            if source.kind() == std::io::ErrorKind::NotFound {
                StoreError::UnknownRun(run_id.to_string())
            } else {
                StoreError::Io {
                    path: path.display().to_string(),
                    source,
                }
            }
        })
    }

    pub fn load_payload(&self, run_id: &str) -> Result<RunPayload, StoreError> {
        Ok(serde_json::from_str(&self.read_report(run_id)?)?)
    }

    pub fn list_runs(&self, filter: &RunFilter) -> Result<Vec<LeaderboardEntry>, StoreError> {
        Ok(read_index(&self.dir.join(INDEX_FILE))?
            .into_iter()
            .filter(|e| filter.matches(e))
            .collect())
    }

    fn report_path(&self, run_id: &str) -> PathBuf {
        self.dir.join(REPORTS_DIR).join(format!("{run_id}.json"))
    }
}

/// Complete lines only; a trailing partial line from an in-flight append is
/// ignored.
fn read_index(path: &Path) -> Result<Vec<LeaderboardEntry>, StoreError> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(path)(e)),
    };
    let complete = text.rfind('\n').map_or("", |i| &text[..=i]);
    complete
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|source| StoreError::Corrupt {
                path: path.display().to_string(),
                line: i + 1,
                source,
            })
        })
        .collect()
}

/// Highest-scoring entry per (team, track); ties keep the earlier run id.
pub fn best_per_team(entries: &[LeaderboardEntry]) -> Vec<LeaderboardEntry> {
    let mut best: std::collections::BTreeMap<(Track, &str), &LeaderboardEntry> = Default::default();
    for e in entries {
        best.entry((e.track, e.team_id.as_str()))
            .and_modify(|cur| {
                if e.score > cur.score || (e.score == cur.score && e.run_id < cur.run_id) {
                    *cur = e;
                }
            })
            .or_insert(e);
    }
    best.into_values().cloned().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedEntry {
    /// 1-based row in the ranking.
    pub position: usize,
    /// Prize rank shared by the whole near-tie group.
    pub prize: usize,
    pub entry: LeaderboardEntry,
}

/// Orders entries by descending score (team id, then run id, on equal
/// scores) and groups neighbours whose scores differ by at most
/// `tie_epsilon`. Groups are chained by adjacency only. Prize ranks count
/// groups, so the group after a shared second prize is third.
pub fn rank(entries: &[LeaderboardEntry], tie_epsilon: f64) -> Vec<RankedEntry> {
    let mut sorted = entries.to_vec();
    sorted.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.team_id.cmp(&b.team_id))
            .then_with(|| a.run_id.cmp(&b.run_id))
    });
    let mut prize = 0;
    let mut prev: Option<f64> = None;
    sorted
        .into_iter()
        .enumerate()
        .map(|(i, entry)| {
            if prev.is_none_or(|p| p - entry.score > tie_epsilon) {
                prize += 1;
            }
            prev = Some(entry.score);
            RankedEntry {
                position: i + 1,
                prize,
                entry,
            }
        })
        .collect()
}

pub fn ordinal(n: usize) -> String {
    let suffix = match (n % 10, n % 100) {
        (_, 11..=13) => "th",
        (1, _) => "st",
        (2, _) => "nd",
        (3, _) => "rd",
        _ => "th",
    };
    format!("{n}{suffix}")
}

/// Aligned text table with 4-decimal numbers.
pub fn ranked_table(ranked: &[RankedEntry]) -> String {
    let rows: Vec<[String; 7]> = ranked
        .iter()
        .map(|r| {
            [
                ordinal(r.prize),
                r.entry.team_id.clone(),
                r.entry.track.to_string(),
                format!("{:.4}", r.entry.components.accuracy),
                format!("{:.4}", r.entry.components.cost),
                format!("{:.4}", r.entry.score),
                r.entry.run_id.clone(),
            ]
        })
        .collect();
    let header = ["Prize", "Team", "Track", "Accuracy", "Cost", "Score", "Run"].map(String::from);
    let mut widths = header.clone().map(|h| h.len());
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    for row in std::iter::once(&header).chain(&rows) {
        let cells: Vec<String> = row
            .iter()
            .zip(widths)
            .enumerate()
            .map(|(i, (c, w))| {
                if (3..=5).contains(&i) {
                    format!("{c:>w$}")
                } else {
                    format!("{c:<w$}")
                }
            })
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    }
    out
}

/// CSV with full-precision numbers.
pub fn ranked_csv(ranked: &[RankedEntry]) -> String {
    let mut out = String::from("position,prize,team_id,track,accuracy,cost,score,run_id\n");
    for r in ranked {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.position,
            r.prize,
            r.entry.team_id,
            r.entry.track,
            r.entry.components.accuracy,
            r.entry.components.cost,
            r.entry.score,
            r.entry.run_id
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn entry(team: &str, track: Track, accuracy: f64, cost: f64) -> LeaderboardEntry {
        let c = Components { accuracy, cost };
        let mut e = LeaderboardEntry {
            team_id: team.into(),
            track,
            score: 0.0,
            components: c,
            run_id: format!("run-{team}"),
            timestamp_ms: 0,
        };
        e.score = e.recomputed_score();
        e
    }

    fn scored(team: &str, score: f64) -> LeaderboardEntry {
        LeaderboardEntry {
            score,
            ..entry(team, Track::Track3, score, 1.0)
        }
    }

    #[test]
    fn near_tie_shares_second_prize() {
        let entries = [
            scored("d", 0.14556),
            scored("b", 0.39701),
            scored("a", 0.44462),
            scored("c", 0.39664),
        ];
        let ranked = rank(&entries, DEFAULT_TIE_EPSILON);
        let prizes: Vec<_> = ranked
            .iter()
            .map(|r| (r.entry.team_id.as_str(), r.prize))
            .collect();
        assert_eq!(prizes, [("a", 1), ("b", 2), ("c", 2), ("d", 3)]);
        assert_eq!(ranked[3].position, 4);
    }

    #[test]
    fn zero_epsilon_is_strict() {
        let entries = [scored("a", 0.3), scored("b", 0.2), scored("c", 0.1)];
        let prizes: Vec<_> = rank(&entries, 0.0).iter().map(|r| r.prize).collect();
        assert_eq!(prizes, [1, 2, 3]);
    }

    #[test]
    fn equal_scores_always_group() {
        let entries = [scored("b", 0.5), scored("a", 0.5)];
        let ranked = rank(&entries, 0.0);
        assert_eq!(ranked[0].entry.team_id, "a");
        assert_eq!((ranked[0].prize, ranked[1].prize), (1, 1));
    }

    #[test]
    fn grouping_chains_by_adjacency() {
        // 0.300 - 0.2995 and 0.2995 - 0.299 are within 0.0006, the ends are not
        let entries = [scored("a", 0.300), scored("b", 0.2995), scored("c", 0.299)];
        let prizes: Vec<_> = rank(&entries, 0.0006).iter().map(|r| r.prize).collect();
        assert_eq!(prizes, [1, 1, 1]);
    }

    #[test]
    fn ordinals() {
        assert_eq!(ordinal(1), "1st");
        assert_eq!(ordinal(2), "2nd");
        assert_eq!(ordinal(3), "3rd");
        assert_eq!(ordinal(11), "11th");
        assert_eq!(ordinal(22), "22nd");
    }

    #[test]
    fn best_entry_per_team() {
        let mut low = entry("a", Track::Track2, 0.1, 1.0);
        low.run_id = "run-1".into();
        let mut high = entry("a", Track::Track2, 0.3, 1.0);
        high.run_id = "run-2".into();
        let other = entry("a", Track::Track3, 0.1, 1.0);
        let best = best_per_team(&[low, high.clone(), other]);
        assert_eq!(best.len(), 2);
        assert!(best.contains(&high));
    }

    #[test]
    fn tables() {
        let ranked = rank(&[scored("a", 0.44462)], 0.001);
        let t = ranked_table(&ranked);
        let row: Vec<&str> = t.lines().nth(1).unwrap().split_whitespace().collect();
        assert_eq!(&row[..2], ["1st", "a"]);
        assert!(t.contains("0.4446"));
        assert!(ranked_csv(&ranked).contains(",0.44462,"));
    }

    #[test]
    fn partial_index_line_is_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::open(dir.path()).unwrap();
        let report = Track1Report {
            team_id: "t".into(),
            scores: crate::track1::evaluate_track1(&crate::track1::Track1Run::uniform(
                2, 10.0, 1, 30.0,
            ))
            .unwrap(),
        };
        store.persist_run(&RunPayload::Track1(report)).unwrap();
        let mut f = OpenOptions::new()
            .append(true)
            .open(dir.path().join(INDEX_FILE))
            .unwrap();
        f.write_all(b"{\"team_id\":").unwrap();
        assert_eq!(store.list_runs(&RunFilter::default()).unwrap().len(), 1);
    }

    fn arb_entries() -> impl Strategy<Value = Vec<LeaderboardEntry>> {
        proptest::collection::vec((0u8..8, 0u32..50), 0..12).prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(i, (team, s))| LeaderboardEntry {
                    run_id: format!("run-{i:03}"),
                    ..scored(&format!("team{team}"), f64::from(s) / 100.0)
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn rank_ignores_input_order(
            (entries, perm) in arb_entries().prop_flat_map(|e| {
                let n = e.len();
                (Just(e), Just((0..n).collect::<Vec<_>>()).prop_shuffle())
            }),
            eps in 0.0..0.05f64,
        ) {
            let shuffled: Vec<_> = perm.iter().map(|&i| entries[i].clone()).collect();
            prop_assert_eq!(rank(&entries, eps), rank(&shuffled, eps));
        }

        #[test]
        fn groups_follow_the_adjacent_difference_rule(entries in arb_entries(), eps in 0.0..0.05f64) {
            let ranked = rank(&entries, eps);
            for w in ranked.windows(2) {
                let same = w[0].entry.score - w[1].entry.score <= eps;
                prop_assert_eq!(same, w[0].prize == w[1].prize);
                prop_assert!(w[1].prize == w[0].prize || w[1].prize == w[0].prize + 1);
            }
        }
    }
}
