//! The `lpref` operator command line.
//!
//! Exit codes: 0 success, 1 validation failure, 2 I/O failure.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use crate::dataset::{
    find_duplicates, format_dedup_report, load_ground_truth, load_thumbnails, parse_detections,
    AnswerRules, ImageCatalog,
};
use crate::energy::PowerTrace;
use crate::leaderboard::{
    best_per_team, rank, ranked_csv, ranked_table, RunFilter, RunPayload, RunStore, Track,
    Track1Report, DEFAULT_TIE_EPSILON,
};
use crate::referee::client::{simulate_contestant, SimulationOptions};
use crate::referee::config::ServeConfig;
use crate::referee::http::RefereeServer;
use crate::referee::report::read_session;
use crate::referee::{
    finalize_session, Clock, Referee, RefereeSettings, RunReport, SessionArchive, SystemClock,
};
use crate::scoring::LabelSpace;
use crate::track1::{
    dedup_submissions, evaluate_track1, parse_submissions, submissions_to_csv, Track1Run,
    Track1Scores,
};

#[derive(Debug, Parser)]
#[command(
    name = "lpref",
    version,
    about = "Low-power image recognition contest referee"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Table,
    Csv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the referee HTTP service until SIGINT/SIGTERM.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Score an archived session against ground truth and a power trace.
    ScoreSession {
        /// Session directory (holding session.json) or the file itself.
        session: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Write the full JSON report here.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Append the report to this run store.
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long, default_value = "track2")]
        track: Track,
        #[arg(long, value_enum, default_value = "table")]
        out: OutputFormat,
    },
    /// Compute latency-budget metrics for a recorded on-device run.
    ScoreTrack1 {
        run: PathBuf,
        /// Append the result to this run store under `--team`.
        #[arg(long, requires = "team")]
        store: Option<PathBuf>,
        #[arg(long)]
        team: Option<String>,
        #[arg(long, value_enum, default_value = "table")]
        out: OutputFormat,
    },
    /// Report candidate images within an L2 thumbnail distance of a reference set.
    DedupImages {
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        threshold: f64,
    },
    /// Collapse submissions with identical content digests.
    DedupSubmissions {
        records: PathBuf,
        #[arg(long, value_enum, default_value = "table")]
        out: OutputFormat,
    },
    /// Rank stored runs and assign prize groups.
    Leaderboard {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long)]
        track: Option<Track>,
        #[arg(long)]
        team: Option<String>,
        #[arg(long, default_value_t = DEFAULT_TIE_EPSILON)]
        epsilon: f64,
        /// Rank every run instead of each team's best.
        #[arg(long)]
        all_runs: bool,
        #[arg(long, value_enum, default_value = "table")]
        out: OutputFormat,
    },
    /// Play a contestant against a running referee.
    SimulateContestant {
        #[arg(long)]
        server: String,
        #[arg(long)]
        answers: PathBuf,
        #[arg(long, default_value_t = 0)]
        pace_ms: u64,
        #[arg(long)]
        team: String,
        #[arg(long)]
        credential: String,
        #[arg(long)]
        labels: Option<PathBuf>,
    },
}

/// Validation failures that are not tied to a Rust error type.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ValidationFailure(pub String);

/// Maps an error chain onto the exit code contract.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    let io = err.chain().any(|c| {
        c.is::<std::io::Error>()
            || matches!(
                c.downcast_ref::<crate::referee::client::ClientError>(),
                Some(crate::referee::client::ClientError::Transport { .. })
            )
    });
    if io {
        2
    } else {
        1
    }
}

/// Parses `args`, runs the command and writes its output to `out`.
pub fn run(cli: Cli, out: &mut String) -> Result<()> {
    match cli.command {
        Command::Serve { config } => serve(&config, Arc::new(SystemClock::new()), shutdown_flag()?),
        Command::ScoreSession {
            session,
            gt,
            trace,
            labels,
            report,
            store,
            track,
            out: fmt,
        } => {
            let record = read_session(&session)?;
            let gts = load_ground_truth(&gt, labels.as_deref())?;
            let trace = PowerTrace::load(&trace)?;
            let rep = finalize_session(&record, &gts, &trace)?;
            if let Some(path) = report {
                std::fs::write(&path, serde_json::to_string_pretty(&rep)?)
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            if let Some(dir) = store {
                let run_id = RunStore::open(&dir)?.persist_run(&RunPayload::Detection {
                    track,
                    report: rep.clone(),
                })?;
                log::info!("stored as {run_id}");
            }
            out.push_str(&match fmt {
                OutputFormat::Table => session_table(&rep, &gts.label_space),
                OutputFormat::Csv => session_csv(&rep),
            });
            Ok(())
        }
        Command::ScoreTrack1 {
            run,
            store,
            team,
            out: fmt,
        } => {
            let parsed = Track1Run::load(&run)?;
            let scores = evaluate_track1(&parsed)?;
            if let (Some(dir), Some(team_id)) = (store, team) {
                RunStore::open(&dir)?
                    .persist_run(&RunPayload::Track1(Track1Report { team_id, scores }))?;
            }
            out.push_str(&match fmt {
                OutputFormat::Table => track1_table(&scores),
                OutputFormat::Csv => track1_csv(&scores),
            });
            Ok(())
        }
        Command::DedupImages {
            candidates,
            reference,
            threshold,
        } => {
            if threshold.is_nan() || threshold <= 0.0 {
                bail!(ValidationFailure(format!(
                    "threshold must be positive, got {threshold}"
                )));
            }
            let c = load_thumbnails(&candidates)?;
            let r = load_thumbnails(&reference)?;
            out.push_str(&format_dedup_report(
                &find_duplicates(&c, &r, threshold),
                threshold,
            ));
            Ok(())
        }
        Command::DedupSubmissions { records, out: fmt } => {
            let text = std::fs::read_to_string(&records)
                .with_context(|| format!("reading {}", records.display()))?;
            let all = parse_submissions(&text)?;
            let unique = dedup_submissions(&all);
            match fmt {
                OutputFormat::Table => {
                    let _ = writeln!(out, "{} submissions, {} unique", all.len(), unique.len());
                }
                OutputFormat::Csv => out.push_str(&submissions_to_csv(&unique)),
            }
            Ok(())
        }
        Command::Leaderboard {
            runs,
            track,
            team,
            epsilon,
            all_runs,
            out: fmt,
        } => {
            if epsilon.is_nan() || epsilon < 0.0 {
                bail!(ValidationFailure(format!(
                    "epsilon must be non-negative, got {epsilon}"
                )));
            }
            if !runs.is_dir() {
                bail!(std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    format!("run store {} does not exist", runs.display())
                ));
            }
            let entries = RunStore::open(&runs)?.list_runs(&RunFilter {
                team_id: team,
                track,
            })?;
            let entries = if all_runs {
                entries
            } else {
                best_per_team(&entries)
            };
            let ranked = rank(&entries, epsilon);
            out.push_str(&match fmt {
                OutputFormat::Table => ranked_table(&ranked),
                OutputFormat::Csv => ranked_csv(&ranked),
            });
            Ok(())
        }
        Command::SimulateContestant {
            server,
            answers,
            pace_ms,
            team,
            credential,
            labels,
        } => {
            let label_space = match labels {
                Some(p) => crate::dataset::load_label_space(p)?,
                None => LabelSpace::contiguous(crate::scoring::NUM_CATEGORIES),
            };
            let text = std::fs::read_to_string(&answers)
                .with_context(|| format!("reading {}", answers.display()))?;
            let detections = parse_detections(
                &text,
                AnswerRules {
                    label_space: &label_space,
                    images: None,
                },
            )
            .map_err(|errs| {
                ValidationFailure(
                    errs.iter()
                        .map(ToString::to_string)
                        .collect::<Vec<_>>()
                        .join("\n"),
                )
            })?;
            let summary = simulate_contestant(
                &server,
                &detections,
                &SimulationOptions {
                    team_id: team,
                    credential,
                    pace: Duration::from_millis(pace_ms),
                },
            )?;
            let _ = writeln!(
                out,
                "images fetched {}/{}; posts accepted {} rejected {}; detections accepted {}",
                summary.images_fetched,
                summary.n_images,
                summary.posts_accepted,
                summary.posts_rejected,
                summary.detections_accepted
            );
            for e in &summary.errors {
                let _ = writeln!(out, "error: {e}");
            }
            if let Some(w) = &summary.final_window {
                let _ = writeln!(out, "{}", serde_json::to_string(w)?);
            }
            if !summary.is_clean() {
                bail!(ValidationFailure(format!(
                    "{} request(s) rejected by the referee",
                    summary.errors.len()
                )));
            }
            Ok(())
        }
    }
}

fn shutdown_flag() -> Result<Arc<AtomicBool>> {
    let flag = Arc::new(AtomicBool::new(false));
    let f = Arc::clone(&flag);
    ctrlc::set_handler(move || f.store(true, Ordering::SeqCst))
        .context("installing signal handler")?;
    Ok(flag)
}

/// Serves until `stop` is raised, archiving sessions as they finish. On stop,
/// active sessions are expired and archived too.
pub fn serve(config_path: &Path, clock: Arc<dyn Clock>, stop: Arc<AtomicBool>) -> Result<()> {
    let cfg = ServeConfig::load(config_path)?;
    let catalog = ImageCatalog::load_dir(&cfg.catalog)
        .with_context(|| format!("loading catalog {}", cfg.catalog.display()))?;
    let gts = load_ground_truth(&cfg.ground_truth, cfg.labels.as_deref())?;
    let store = cfg.runs_dir.as_ref().map(RunStore::open).transpose()?;
    let archive = SessionArchive {
        sessions_dir: cfg.sessions_dir.clone(),
        trace_dir: cfg.trace_dir.clone(),
        ground_truth: gts.clone(),
        store,
        track: cfg.track,
    };
    let referee = Arc::new(Referee::new(
        clock,
        Arc::new(catalog),
        gts.label_space.clone(),
        cfg.roster(),
        RefereeSettings {
            window_ms: cfg.window_ms(),
        },
    ));
    let server = RefereeServer::start(Arc::clone(&referee), &cfg.listen, cfg.workers)
        .with_context(|| format!("binding {}", cfg.listen))?;
    log::info!(
        "referee ready on {} serving {} images",
        server.addr(),
        referee.n_images()
    );
    println!("ready {} {}", server.addr(), referee.n_images());

    let drain = |referee: &Referee| {
        for s in referee.drain_finished() {
            match archive.archive(&s) {
                Ok(Some(r)) => log::info!(
                    "session {}: mAP {:.4} energy {:.4} Wh score {:.4}",
                    s.session_id,
                    r.map,
                    r.energy_wh,
                    r.score
                ),
                Ok(None) => {}
                Err(e) => log::error!("archiving session {}: {e}", s.session_id),
            }
        }
    };
    while !stop.load(Ordering::SeqCst) {
        std::thread::sleep(Duration::from_millis(50));
        referee.expire_due();
        drain(&referee);
    }
    server.stop();
    let n = referee.shutdown();
    log::info!("shutting down; expired {n} active session(s)");
    drain(&referee);
    Ok(())
}

/// `1.08e-06` style: two decimals, signed two-digit exponent.
pub fn sci(x: f64) -> String {
    let s = format!("{x:.2e}");
    match s.split_once('e') {
        Some((m, e)) => {
            let exp: i32 = e.parse().unwrap_or(0);
            let sign = if exp < 0 { '-' } else { '+' };
            format!("{m}e{sign}{:02}", exp.abs())
        }
        None => s,
    }
}

pub fn track1_table(s: &Track1Scores) -> String {
    let rows = [
        ("Latency (ms)", format!("{:.1}", s.mean_latency_ms)),
        ("Test Metric", format!("{:.5}", s.test_metric)),
        (
            "Accuracy on Classified",
            format!("{:.5}", s.accuracy_on_classified),
        ),
        ("Accuracy / Time", sci(s.accuracy_over_time)),
        ("# Classified", s.num_classified.to_string()),
    ];
    let mut out = String::new();
    for (k, v) in rows {
        let _ = writeln!(out, "{k:<24}{v}");
    }
    out
}

pub fn track1_csv(s: &Track1Scores) -> String {
    format!(
        "latency_ms,test_metric,accuracy_on_classified,accuracy_over_time,num_classified,n_total,wall_time_ms,total_inference_ms\n{},{},{},{},{},{},{},{}\n",
        s.mean_latency_ms,
        s.test_metric,
        s.accuracy_on_classified,
        s.accuracy_over_time,
        s.num_classified,
        s.n_total,
        s.wall_time_ms,
        s.total_inference_ms
    )
}

pub fn session_table(r: &RunReport, labels: &LabelSpace) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Team     Session  mAP     Energy  Score");
    let _ = writeln!(
        out,
        "{}  {}  {:.4}  {:.4}  {:.4}",
        r.team_id, r.session_id, r.map, r.energy_wh, r.score
    );
    let _ = writeln!(
        out,
        "window {}..{} ms, served {}, answered {}, late posts rejected {}",
        r.window_start_ms,
        r.window_end_ms,
        r.images_served,
        r.images_answered,
        r.late_posts_rejected
    );
    let _ = writeln!(out, "\nClass  Name                 AP      GT  TP  FP");
    for c in &r.per_class {
        let _ = writeln!(
            out,
            "{:<5}  {:<19}  {:.4}  {:>2}  {:>2}  {:>2}",
            c.category_id,
            labels.name(c.category_id).unwrap_or(""),
            c.ap,
            c.num_gt,
            c.num_tp,
            c.num_fp
        );
    }
    out
}

pub fn session_csv(r: &RunReport) -> String {
    format!(
        "session_id,team_id,map,energy_wh,score,window_end_ms,images_served,images_answered,late_posts_rejected\n{},{},{},{},{},{},{},{},{}\n",
        r.session_id,
        r.team_id,
        r.map,
        r.energy_wh,
        r.score,
        r.window_end_ms,
        r.images_served,
        r.images_answered,
        r.late_posts_rejected
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sci_format() {
        assert_eq!(sci(1.0784e-6), "1.08e-06");
        assert_eq!(sci(2.2169e-6), "2.22e-06");
        assert_eq!(sci(12345.0), "1.23e+04");
    }

    #[test]
    fn unknown_flags_are_rejected() {
        assert!(Cli::try_parse_from(["lpref", "score-track1", "x", "--bogus"]).is_err());
        assert!(Cli::try_parse_from(["lpref"]).is_err());
        assert!(Cli::try_parse_from([
            "lpref",
            "dedup-images",
            "--candidates",
            "a",
            "--reference",
            "b"
        ])
        .is_err());
    }

    #[test]
    fn exit_codes() {
        let io: anyhow::Error = std::io::Error::other("x").into();
        assert_eq!(exit_code(&io), 2);
        let v: anyhow::Error = ValidationFailure("bad".into()).into();
        assert_eq!(exit_code(&v), 1);
        let wrapped = anyhow::Error::from(crate::track1::Track1Error::Io {
            path: "p".into(),
            source: std::io::Error::other("x"),
        });
        assert_eq!(exit_code(&wrapped), 2);
    }
}
