//! Turning a finished session into a scored run report, and archiving it.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::service::{SessionRecord, SessionState};
use super::RefereeError;
use crate::dataset::GroundTruthSet;
use crate::energy::{compute_score, measure_energy, EnergyWindow, PowerTrace, DEFAULT_MAX_GAP_MS};
use crate::leaderboard::{RunPayload, RunStore, Track};
use crate::scoring::{mean_average_precision, ClassScore};

/// Recorded alongside every report.
pub const CLOCK_NOTE: &str =
    "power trace assumed aligned to the referee clock; t=0 is the login receipt time";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub session_id: String,
    pub team_id: String,
    pub state: SessionState,
    /// Referee-clock login time.
    pub login_at_ms: u64,
    pub window_start_ms: u64,
    pub window_end_ms: u64,
    pub map: f64,
    pub per_class: Vec<ClassScore>,
    pub energy_wh: f64,
    pub score: f64,
    pub images_served: usize,
    pub images_answered: usize,
    pub detections_scored: usize,
    pub late_posts_rejected: usize,
    pub trace_gaps_ms: Vec<(f64, f64)>,
    pub notes: Vec<String>,
}

/// Scores a closed or expired session against the full ground truth.
/// Unanswered images only contribute misses.
pub fn finalize_session(
    session: &SessionRecord,
    gts: &GroundTruthSet,
    trace: &PowerTrace,
) -> Result<RunReport, RefereeError> {
    if !matches!(session.state, SessionState::Closed | SessionState::Expired) {
        return Err(RefereeError::SessionOpen(session.session_id.clone()));
    }
    let end = session.window_end_ms();
    let window = EnergyWindow::new(0.0, end as f64)?;
    let energy = measure_energy(trace, &window, DEFAULT_MAX_GAP_MS)?;

    let detections = session.all_detections();
    let result = mean_average_precision(&detections, &gts.objects, &gts.label_space)?;
    let score = compute_score(result.map, energy.watt_hours)?;

    Ok(RunReport {
        session_id: session.session_id.clone(),
        team_id: session.team_id.clone(),
        state: session.state,
        login_at_ms: session.login_at_ms,
        window_start_ms: 0,
        window_end_ms: end,
        map: result.map,
        per_class: result.per_class,
        energy_wh: energy.watt_hours,
        score,
        images_served: session.images_served.len(),
        images_answered: session.answers.len(),
        detections_scored: detections.len(),
        late_posts_rejected: session.late_posts_ms.len(),
        trace_gaps_ms: energy.gap_warnings,
        notes: vec![CLOCK_NOTE.to_string()],
    })
}

pub const SESSION_FILE: &str = "session.json";
pub const REPORT_FILE: &str = "report.json";

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), RefereeError> {
    let body =
        serde_json::to_string_pretty(value).map_err(|e| RefereeError::BadRequest(e.to_string()))?;
    std::fs::write(path, body).map_err(|source| RefereeError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_session(dir: impl AsRef<Path>) -> Result<SessionRecord, RefereeError> {
    let dir = dir.as_ref();
    let path = if dir.is_dir() {
        dir.join(SESSION_FILE)
    } else {
        dir.to_path_buf()
    };
    let text = std::fs::read_to_string(&path).map_err(|source| RefereeError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text)
        .map_err(|e| RefereeError::BadRequest(format!("{}: {e}", path.display())))
}

/// Where finished sessions go: a session directory per run, plus a scored
/// report and a leaderboard entry when the power trace is available.
pub struct SessionArchive {
    pub sessions_dir: PathBuf,
    /// Looked up as `<trace_dir>/<session_id>.csv`, then `<trace_dir>/<team_id>.csv`.
    pub trace_dir: Option<PathBuf>,
    pub ground_truth: GroundTruthSet,
    pub store: Option<RunStore>,
    pub track: Track,
}

impl SessionArchive {
    /// Writes `session.json`; returns the report if one could be produced.
    pub fn archive(&self, session: &SessionRecord) -> Result<Option<RunReport>, RefereeError> {
        let dir = self.sessions_dir.join(&session.session_id);
        std::fs::create_dir_all(&dir).map_err(|source| RefereeError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        write_json(&dir.join(SESSION_FILE), session)?;

        let Some(trace_path) = self.trace_for(session) else {
            log::info!(
                "session {} archived without a power trace; score it later",
                session.session_id
            );
            return Ok(None);
        };
        let trace = PowerTrace::load(&trace_path)?;
        let report = finalize_session(session, &self.ground_truth, &trace)?;
        write_json(&dir.join(REPORT_FILE), &report)?;
        if let Some(store) = &self.store {
            let run_id = store.persist_run(&RunPayload::Detection {
                track: self.track,
                report: report.clone(),
            })?;
            log::info!("session {} stored as {run_id}", session.session_id);
        }
        Ok(Some(report))
    }

    fn trace_for(&self, s: &SessionRecord) -> Option<PathBuf> {
        let dir = self.trace_dir.as_ref()?;
        [&s.session_id, &s.team_id]
            .into_iter()
            .map(|name| dir.join(format!("{name}.csv")))
            .find(|p| p.is_file())
    }
}
