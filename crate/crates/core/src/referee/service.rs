//! Session state machine: login, image serving, answer intake, logout and
//! expiry. Transport-independent; the HTTP layer is a thin adapter.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use serde::{Deserialize, Serialize};

use super::clock::Clock;
use super::RefereeError;
use crate::dataset::{parse_detections, AnswerRules, CatalogImage, ImageCatalog};
use crate::energy::SESSION_LIMIT_MS;
use crate::scoring::{Detection, LabelSpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SessionState {
    Created,
    Active,
    Closed,
    Expired,
}

/// Registered teams and their credentials.
#[derive(Debug, Clone, Default)]
pub struct Roster {
    credentials: HashMap<String, String>,
}

impl Roster {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_team(mut self, team_id: impl Into<String>, credential: impl Into<String>) -> Self {
        self.credentials.insert(team_id.into(), credential.into());
        self
    }

    fn check(&self, team_id: &str, credential: &str) -> bool {
        self.credentials
            .get(team_id)
            .is_some_and(|c| c.as_bytes() == credential.as_bytes())
    }
}

/// Everything recorded about one contestant run.
///
/// `login_at_ms`/`logout_at_ms` are on the referee clock; the energy window
/// is measured from the login (session epoch 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: String,
    pub team_id: String,
    pub state: SessionState,
    pub login_at_ms: u64,
    pub logout_at_ms: Option<u64>,
    pub window_limit_ms: u64,
    pub answers: BTreeMap<String, Vec<Detection>>,
    pub images_served: BTreeSet<usize>,
    /// Posts refused because they arrived after the window, as
    /// epoch-relative receipt times.
    pub late_posts_ms: Vec<u64>,
}

impl SessionRecord {
    /// Window end relative to login: logout, or the limit if none/later.
    pub fn window_end_ms(&self) -> u64 {
        self.logout_at_ms.map_or(self.window_limit_ms, |l| {
            (l - self.login_at_ms).min(self.window_limit_ms)
        })
    }

    pub fn final_window(&self) -> FinalWindow {
        FinalWindow {
            session_id: self.session_id.clone(),
            state: self.state,
            window_start_ms: 0,
            window_end_ms: self.window_end_ms(),
        }
    }

    /// Answers in a stable order: by image id, then as posted.
    pub fn all_detections(&self) -> Vec<Detection> {
        self.answers.values().flatten().cloned().collect()
    }

    fn deadline(&self) -> u64 {
        self.login_at_ms + self.window_limit_ms
    }

    fn is_finished(&self) -> bool {
        matches!(self.state, SessionState::Closed | SessionState::Expired)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoginGrant {
    pub token: String,
    pub window_start_ms: u64,
    pub n_images: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalWindow {
    pub session_id: String,
    pub state: SessionState,
    pub window_start_ms: u64,
    pub window_end_ms: u64,
}

#[derive(Debug, Clone)]
pub struct RefereeSettings {
    pub window_ms: u64,
}

impl Default for RefereeSettings {
    fn default() -> Self {
        Self {
            window_ms: SESSION_LIMIT_MS as u64,
        }
    }
}

type SessionCell = Arc<Mutex<SessionRecord>>;

fn lock(cell: &SessionCell) -> MutexGuard<'_, SessionRecord> {
    cell.lock().unwrap_or_else(|p| p.into_inner())
}

/// The referee. Each session is mutated under its own lock; sessions never
/// share mutable state.
pub struct Referee {
    clock: Arc<dyn Clock>,
    catalog: Arc<ImageCatalog>,
    image_ids: HashSet<String>,
    label_space: LabelSpace,
    roster: Roster,
    settings: RefereeSettings,
    sessions: RwLock<HashMap<String, SessionCell>>,
    active: Mutex<HashMap<String, String>>,
    finished: Mutex<Vec<SessionRecord>>,
    counter: Mutex<u64>,
}

impl Referee {
    pub fn new(
        clock: Arc<dyn Clock>,
        catalog: Arc<ImageCatalog>,
        label_space: LabelSpace,
        roster: Roster,
        settings: RefereeSettings,
    ) -> Self {
        let image_ids = catalog.ids();
        Self {
            clock,
            catalog,
            image_ids,
            label_space,
            roster,
            settings,
            sessions: RwLock::default(),
            active: Mutex::default(),
            finished: Mutex::default(),
            counter: Mutex::new(0),
        }
    }

    pub fn n_images(&self) -> usize {
        self.catalog.len()
    }

    pub fn label_space(&self) -> &LabelSpace {
        &self.label_space
    }

    pub fn login(&self, team_id: &str, credential: &str) -> Result<LoginGrant, RefereeError> {
        let now = self.clock.now_ms();
        if !self.roster.check(team_id, credential) {
            return Err(RefereeError::Auth);
        }
        let mut active = self.active.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(token) = active.get(team_id).cloned() {
            let cell = self.cell(&token)?;
            let mut s = lock(&cell);
            self.refresh(&mut s, now);
            if s.state == SessionState::Active {
                return Err(RefereeError::Conflict(team_id.to_string()));
            }
            drop(s);
            active.remove(team_id);
        }

        let seq = {
            let mut c = self.counter.lock().unwrap_or_else(|p| p.into_inner());
            *c += 1;
            *c
        };
        let token = uuid::Uuid::new_v4().simple().to_string();
        let mut record = SessionRecord {
            session_id: format!("{team_id}-{seq:04}"),
            team_id: team_id.to_string(),
            state: SessionState::Created,
            login_at_ms: now,
            logout_at_ms: None,
            window_limit_ms: self.settings.window_ms,
            answers: BTreeMap::new(),
            images_served: BTreeSet::new(),
            late_posts_ms: Vec::new(),
        };
        record.state = SessionState::Active;
        log::info!("{} logged in as session {}", team_id, record.session_id);
        self.sessions
            .write()
            .unwrap_or_else(|p| p.into_inner())
            .insert(token.clone(), Arc::new(Mutex::new(record)));
        active.insert(team_id.to_string(), token.clone());
        Ok(LoginGrant {
            token,
            window_start_ms: 0,
            n_images: self.catalog.len(),
        })
    }

    pub fn get_image(&self, token: &str, index: usize) -> Result<&CatalogImage, RefereeError> {
        let now = self.clock.now_ms();
        let cell = self.cell(token)?;
        let mut s = lock(&cell);
        self.require_active(&mut s, now)?;
        let image = self
            .catalog
            .get(index)
            .ok_or(RefereeError::NotFound(index))?;
        s.images_served.insert(index);
        Ok(image)
    }

    /// Validates and stores an answer body; see [`Referee::post_detections`].
    pub fn post_result(&self, token: &str, body: &str) -> Result<usize, RefereeError> {
        let now = self.clock.now_ms();
        let cell = self.cell(token)?;
        let mut s = lock(&cell);
        self.require_active_for_post(&mut s, now)?;
        let detections = parse_detections(
            body,
            AnswerRules {
                label_space: &self.label_space,
                images: Some(&self.image_ids),
            },
        )
        .map_err(RefereeError::Validation)?;
        Ok(store_answers(&mut s, detections))
    }

    /// Stores already-validated detections. A post replaces every earlier
    /// answer for the image ids it mentions.
    pub fn post_detections(
        &self,
        token: &str,
        detections: Vec<Detection>,
    ) -> Result<usize, RefereeError> {
        let now = self.clock.now_ms();
        let cell = self.cell(token)?;
        let mut s = lock(&cell);
        self.require_active_for_post(&mut s, now)?;
        if let Some(d) = detections.iter().find(|d| {
            !self.image_ids.contains(&d.image_id) || !self.label_space.contains(d.category_id)
        }) {
            return Err(RefereeError::BadRequest(format!(
                "unknown image `{}` or category {}",
                d.image_id, d.category_id
            )));
        }
        Ok(store_answers(&mut s, detections))
    }

    pub fn logout(&self, token: &str) -> Result<FinalWindow, RefereeError> {
        let now = self.clock.now_ms();
        let cell = self.cell(token)?;
        let mut s = lock(&cell);
        self.require_active(&mut s, now)?;
        s.state = SessionState::Closed;
        s.logout_at_ms = Some(now);
        log::info!(
            "session {} closed after {} ms",
            s.session_id,
            s.window_end_ms()
        );
        self.finish(&s);
        Ok(s.final_window())
    }

    /// Expires every active session whose window has run out.
    pub fn expire_due(&self) -> usize {
        let now = self.clock.now_ms();
        self.for_each_active(|s| {
            self.refresh(s, now);
        })
    }

    /// Ends every active session as Expired, whatever its remaining time.
    /// The window still ends no later than its limit.
    pub fn shutdown(&self) -> usize {
        let now = self.clock.now_ms();
        self.for_each_active(|s| {
            self.refresh(s, now);
            if s.state == SessionState::Active {
                s.state = SessionState::Expired;
                s.logout_at_ms = Some(now.min(s.deadline()));
                self.finish(s);
            }
        })
    }

    /// Sessions that closed or expired since the last call.
    pub fn drain_finished(&self) -> Vec<SessionRecord> {
        std::mem::take(&mut *self.finished.lock().unwrap_or_else(|p| p.into_inner()))
    }

    /// Snapshot of a session by token.
    pub fn session(&self, token: &str) -> Result<SessionRecord, RefereeError> {
        Ok(lock(&self.cell(token)?).clone())
    }

    fn for_each_active(&self, mut f: impl FnMut(&mut SessionRecord)) -> usize {
        let cells: Vec<SessionCell> = self
            .sessions
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .values()
            .cloned()
            .collect();
        let mut n = 0;
        for cell in cells {
            let mut s = lock(&cell);
            if s.state == SessionState::Active {
                f(&mut s);
                n += usize::from(s.is_finished());
            }
        }
        n
    }

    fn cell(&self, token: &str) -> Result<SessionCell, RefereeError> {
        self.sessions
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .get(token)
            .cloned()
            .ok_or(RefereeError::UnknownToken)
    }

    /// Applies the time limit at `now`.
    fn refresh(&self, s: &mut SessionRecord, now: u64) {
        if s.state == SessionState::Active && now > s.deadline() {
            s.state = SessionState::Expired;
            log::info!("session {} expired", s.session_id);
            self.finish(s);
        }
    }

    fn require_active(&self, s: &mut SessionRecord, now: u64) -> Result<(), RefereeError> {
        self.refresh(s, now);
        match s.state {
            SessionState::Active => Ok(()),
            state => Err(RefereeError::SessionOver(state)),
        }
    }

    fn require_active_for_post(&self, s: &mut SessionRecord, now: u64) -> Result<(), RefereeError> {
        let r = self.require_active(s, now);
        if r.is_err() && now >= s.login_at_ms {
            let at = now - s.login_at_ms;
            log::warn!("session {}: answer at +{at} ms rejected", s.session_id);
            s.late_posts_ms.push(at);
        }
        r
    }

    fn finish(&self, s: &SessionRecord) {
        self.finished
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .push(s.clone());
    }
}

fn store_answers(s: &mut SessionRecord, detections: Vec<Detection>) -> usize {
    let n = detections.len();
    let mut grouped: BTreeMap<String, Vec<Detection>> = BTreeMap::new();
    for d in detections {
        grouped.entry(d.image_id.clone()).or_default().push(d);
    }
    s.answers.extend(grouped);
    n
}
