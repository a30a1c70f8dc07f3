//! Latency-budget classification metrics and submission deduplication.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Per-image time budget used when a run file does not override it.
pub const DEFAULT_BUDGET_MS: f64 = 30.0;

#[derive(Debug, Error)]
pub enum Track1Error {
    #[error("run has no processed images")]
    EmptyRun,
    #[error("run declares zero test images")]
    NoTestImages,
    #[error("run has {records} records but only {n_total} test images")]
    TooManyRecords { records: usize, n_total: usize },
    #[error("image {image_id}: latency {latency_ms} ms must be finite and positive")]
    InvalidLatency { image_id: String, latency_ms: f64 },
    #[error("budget {0} ms must be finite and positive")]
    InvalidBudget(f64),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub latency_ms: f64,
    pub correct: bool,
}

/// Recorded on-device run, in processing order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track1Run {
    pub records: Vec<ImageRecord>,
    pub n_total: usize,
    pub budget_per_image_ms: f64,
}

impl Track1Run {
    pub fn new(
        records: Vec<ImageRecord>,
        n_total: usize,
        budget_per_image_ms: f64,
    ) -> Result<Self, Track1Error> {
        let run = Self {
            records,
            n_total,
            budget_per_image_ms,
        };
        run.validate()?;
        Ok(run)
    }

    /// `n` images with identical latency; the first `correct` are right.
    pub fn uniform(n: usize, latency_ms: f64, correct: usize, budget_per_image_ms: f64) -> Self {
        let records = (0..n)
            .map(|i| ImageRecord {
                image_id: format!("img{:05}", i + 1),
                latency_ms,
                correct: i < correct,
            })
            .collect();
        Self {
            records,
            n_total: n,
            budget_per_image_ms,
        }
    }

    fn validate(&self) -> Result<(), Track1Error> {
        if self.n_total == 0 {
            return Err(Track1Error::NoTestImages);
        }
        if self.records.is_empty() {
            return Err(Track1Error::EmptyRun);
        }
        if self.records.len() > self.n_total {
            return Err(Track1Error::TooManyRecords {
                records: self.records.len(),
                n_total: self.n_total,
            });
        }
        if !(self.budget_per_image_ms.is_finite() && self.budget_per_image_ms > 0.0) {
            return Err(Track1Error::InvalidBudget(self.budget_per_image_ms));
        }
        if let Some(r) = self
            .records
            .iter()
            .find(|r| !(r.latency_ms.is_finite() && r.latency_ms > 0.0))
        {
            return Err(Track1Error::InvalidLatency {
                image_id: r.image_id.clone(),
                latency_ms: r.latency_ms,
            });
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, Track1Error> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Track1Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        text.parse()
    }

    /// Renders the run file format.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "n_total={} budget_ms={}\n",
            self.n_total, self.budget_per_image_ms
        );
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{}",
                r.image_id,
                r.latency_ms,
                u8::from(r.correct)
            );
        }
        out
    }
}

impl FromStr for Track1Run {
    type Err = Track1Error;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        let (hline, header) = lines.next().ok_or(Track1Error::Parse {
            line: 1,
            reason: "missing `n_total=<int> budget_ms=<real>` header".into(),
        })?;
        let herr = |reason: String| Track1Error::Parse {
            line: hline,
            reason,
        };
        let mut n_total = None;
        let mut budget = None;
        for field in header.split_whitespace() {
            match field.split_once('=') {
                Some(("n_total", v)) => {
                    n_total = Some(
                        v.parse::<usize>()
                            .map_err(|e| herr(format!("n_total: {e}")))?,
                    )
                }
                Some(("budget_ms", v)) => {
                    budget = Some(
                        v.parse::<f64>()
                            .map_err(|e| herr(format!("budget_ms: {e}")))?,
                    )
                }
                _ => return Err(herr(format!("unexpected header field `{field}`"))),
            }
        }
        let n_total = n_total.ok_or_else(|| herr("header lacks n_total".into()))?;
        let budget = budget.ok_or_else(|| herr("header lacks budget_ms".into()))?;

        let mut records = Vec::new();
        for (line, l) in lines {
            let err = |reason: String| Track1Error::Parse { line, reason };
            let parts: Vec<&str> = l.split(',').map(str::trim).collect();
            let [id, latency, correct] = parts[..] else {
                return Err(err(format!(
                    "expected `<image_id>,<latency_ms>,<0|1>`, got `{l}`"
                )));
            };
            let latency_ms = latency
                .parse::<f64>()
                .map_err(|e| err(format!("latency `{latency}`: {e}")))?;
            let correct = match correct {
                "0" => false,
                "1" => true,
                other => return Err(err(format!("correctness must be 0 or 1, got `{other}`"))),
            };
            records.push(ImageRecord {
                image_id: id.to_string(),
                latency_ms,
                correct,
            });
        }
        Track1Run::new(records, n_total, budget)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Track1Scores {
    /// Correct answers within the wall time, over all test images.
    pub test_metric: f64,
    pub accuracy_on_classified: f64,
    pub num_classified: usize,
    /// Accuracy per millisecond of the longer of inference and wall time.
    pub accuracy_over_time: f64,
    pub wall_time_ms: f64,
    pub total_inference_ms: f64,
    pub mean_latency_ms: f64,
    pub num_correct_classified: usize,
    pub n_total: usize,
}

/// Scores a run against its shared wall time of `budget × n_total`.
///
/// Images are processed one after another, so an image counts as classified
/// when the running latency total is still within the wall time. Images with
/// no record are unclassified.
pub fn evaluate_track1(run: &Track1Run) -> Result<Track1Scores, Track1Error> {
    run.validate()?;
    let wall_time_ms = run.budget_per_image_ms * run.n_total as f64;

    let mut elapsed = 0.0;
    let mut num_classified = 0;
    let mut num_correct = 0;
    for r in &run.records {
        elapsed += r.latency_ms;
        if elapsed <= wall_time_ms {
            num_classified += 1;
            num_correct += usize::from(r.correct);
        }
    }
    let total_inference_ms = elapsed;

    let test_metric = num_correct as f64 / run.n_total as f64;
    let accuracy_on_classified = if num_classified == 0 {
        0.0
    } else {
        num_correct as f64 / num_classified as f64
    };
    Ok(Track1Scores {
        test_metric,
        accuracy_on_classified,
        num_classified,
        accuracy_over_time: accuracy_on_classified / total_inference_ms.max(wall_time_ms),
        wall_time_ms,
        total_inference_ms,
        mean_latency_ms: total_inference_ms / run.records.len() as f64,
        num_correct_classified: num_correct,
        n_total: run.n_total,
    })
}

/// Hex MD5 of a submitted file; used only as an equality key.
pub fn content_digest(bytes: &[u8]) -> String {
    format!("{:x}", md5::compute(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmissionRecord {
    pub content_digest: String,
    pub test_metric: f64,
    pub submitter: String,
    /// Milliseconds, any monotone epoch.
    pub received_at: u64,
}

impl SubmissionRecord {
    pub fn from_bytes(
        bytes: &[u8],
        test_metric: f64,
        submitter: impl Into<String>,
        received_at: u64,
    ) -> Self {
        Self {
            content_digest: content_digest(bytes),
            test_metric,
            submitter: submitter.into(),
            received_at,
        }
    }
}

/// Keeps one record per digest: the best test metric, earliest on ties.
///
/// Output is ordered by first appearance of each digest in the input.
pub fn dedup_submissions(records: &[SubmissionRecord]) -> Vec<SubmissionRecord> {
    let mut best: HashMap<&str, usize> = HashMap::new();
    let mut order = Vec::new();
    for (i, r) in records.iter().enumerate() {
        match best.get(r.content_digest.as_str()) {
            None => {
                best.insert(&r.content_digest, i);
                order.push(r.content_digest.as_str());
            }
            Some(&j) => {
                let kept = &records[j];
                let better = r.test_metric > kept.test_metric
                    || (r.test_metric == kept.test_metric && r.received_at < kept.received_at);
                if better {
                    best.insert(&r.content_digest, i);
                }
            }
        }
    }
    order
        .into_iter()
        .map(|d| records[best[d]].clone())
        .collect()
}

/// Reads submission records from CSV text with the header
/// `content_digest,test_metric,submitter,received_at`.
pub fn parse_submissions(text: &str) -> Result<Vec<SubmissionRecord>, Track1Error> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("content_digest,") {
            continue;
        }
        let err = |reason: String| Track1Error::Parse {
            line: i + 1,
            reason,
        };
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        let [digest, metric, submitter, received] = parts[..] else {
            return Err(err(format!("expected 4 fields, got {}", parts.len())));
        };
        out.push(SubmissionRecord {
            content_digest: digest.to_string(),
            test_metric: metric
                .parse()
                .map_err(|e| err(format!("test_metric `{metric}`: {e}")))?,
            submitter: submitter.to_string(),
            received_at: received
                .parse()
                .map_err(|e| err(format!("received_at `{received}`: {e}")))?,
        });
    }
    Ok(out)
}

pub fn submissions_to_csv(records: &[SubmissionRecord]) -> String {
    let mut out = String::from("content_digest,test_metric,submitter,received_at\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.content_digest, r.test_metric, r.submitter, r.received_at
        );
    }
    out
}
