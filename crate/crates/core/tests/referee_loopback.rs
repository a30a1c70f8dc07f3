mod common;

use std::sync::Arc;
use std::time::Duration;

use common::{oracle_map, Instance, RawDet, RawGt};
use lpref::dataset::{format_detections, GroundTruthSet};
use lpref::fixtures::{constant_trace, LoopbackFixture};
use lpref::leaderboard::{RunFilter, RunStore, Track};
use lpref::referee::client::{simulate_contestant, RefereeClient, SimulationOptions};
use lpref::referee::http::RefereeServer;
use lpref::referee::report::{read_session, REPORT_FILE};
use lpref::referee::{
    finalize_session, Clock, ManualClock, Referee, RefereeSettings, Roster, SessionArchive,
    SessionState, SteppingClock, SystemClock,
};
use lpref::scoring::Detection;

fn raw(b: &lpref::scoring::BoundingBox) -> [f64; 4] {
    [b.xmin(), b.ymin(), b.xmax(), b.ymax()]
}

fn image_no(id: &str) -> usize {
    id.trim_start_matches("img").parse().unwrap()
}

fn instance(dets: &[Detection], gts: &GroundTruthSet) -> Instance {
    Instance {
        dets: dets
            .iter()
            .map(|d| RawDet {
                image: image_no(&d.image_id),
                class: d.category_id,
                conf: d.confidence(),
                bbox: raw(&d.bbox),
            })
            .collect(),
        gts: gts
            .objects
            .iter()
            .map(|g| RawGt {
                image: image_no(&g.image_id),
                class: g.category_id,
                bbox: raw(&g.bbox),
            })
            .collect(),
        classes: gts.label_space.ids().max().unwrap(),
    }
}

struct Harness {
    referee: Arc<Referee>,
    server: RefereeServer,
    fixture: LoopbackFixture,
}

impl Harness {
    fn start(clock: Arc<dyn Clock>, window_ms: u64) -> Self {
        let fixture = LoopbackFixture::new();
        let referee = Arc::new(Referee::new(
            clock,
            Arc::new(fixture.catalog.clone()),
            fixture.ground_truth.label_space.clone(),
            Roster::new()
                .with_team("alpha", "pw")
                .with_team("beta", "pw2"),
            RefereeSettings { window_ms },
        ));
        let server = RefereeServer::start(Arc::clone(&referee), "127.0.0.1:0", 4).unwrap();
        Self {
            referee,
            server,
            fixture,
        }
    }

    fn url(&self) -> String {
        format!("http://{}", self.server.addr())
    }

    fn client(&self) -> RefereeClient {
        RefereeClient::new(&self.url())
    }
}

fn opts(pace_ms: u64) -> SimulationOptions {
    SimulationOptions {
        team_id: "alpha".into(),
        credential: "pw".into(),
        pace: Duration::from_millis(pace_ms),
    }
}

#[test]
fn full_replay_matches_oracle() {
    let h = Harness::start(Arc::new(SteppingClock::new(0, 1_000)), 600_000);
    let summary = simulate_contestant(&h.url(), &h.fixture.answers, &opts(0)).unwrap();
    assert!(summary.is_clean(), "{:?}", summary.errors);
    assert_eq!(summary.posts_accepted, 18);
    assert_eq!(summary.detections_accepted, 19);
    let w = summary.final_window.unwrap();
    assert_eq!(w.state, SessionState::Closed);
    assert!(w.window_end_ms < 600_000);

    let record = h.referee.drain_finished().pop().unwrap();
    let report = finalize_session(
        &record,
        &h.fixture.ground_truth,
        &constant_trace(5.0, 60_000.0, 500.0),
    )
    .unwrap();
    let want = oracle_map(&instance(&h.fixture.answers, &h.fixture.ground_truth));
    assert!((report.map - want).abs() < 1e-12);
    assert_eq!(report.images_served, 20);
    assert_eq!(report.images_answered, 18);
    h.server.stop();
}

#[test]
fn second_post_for_an_image_replaces_the_first() {
    let clock = Arc::new(ManualClock::new(0));
    let h = Harness::start(clock.clone(), 600_000);
    let c = h.client();
    let g = c.login("alpha", "pw").unwrap();
    clock.set(1_000);
    let wrong: Vec<Detection> = h
        .fixture
        .answers
        .iter()
        .map(|d| {
            let b = d.bbox;
            let shifted = lpref::scoring::BoundingBox::new(
                b.xmin() + 200.0,
                b.ymin(),
                b.xmax() + 200.0,
                b.ymax(),
            )
            .unwrap();
            Detection::new(d.image_id.clone(), d.category_id, d.confidence(), shifted).unwrap()
        })
        .collect();
    c.post_result(&g.token, &format_detections(&wrong)).unwrap();
    c.post_result(&g.token, &format_detections(&h.fixture.answers))
        .unwrap();
    c.logout(&g.token).unwrap();
    let record = h.referee.session(&g.token).unwrap();
    let report = finalize_session(
        &record,
        &h.fixture.ground_truth,
        &constant_trace(1.0, 2_000.0, 100.0),
    )
    .unwrap();
    let single = oracle_map(&instance(&h.fixture.answers, &h.fixture.ground_truth));
    assert_eq!(oracle_map(&instance(&wrong, &h.fixture.ground_truth)), 0.0);
    assert!((report.map - single).abs() < 1e-12);
    h.server.stop();
}

#[test]
fn sequential_sessions_have_independent_windows() {
    let clock = Arc::new(ManualClock::new(10_000));
    let h = Harness::start(clock.clone(), 600_000);
    let c = h.client();
    let first = c.login("alpha", "pw").unwrap();
    clock.advance(4_000);
    assert_eq!(c.logout(&first.token).unwrap().window_end_ms, 4_000);

    clock.advance(50_000);
    let second = c.login("alpha", "pw").unwrap();
    assert_ne!(first.token, second.token);
    clock.advance(7_000);
    let w = c.logout(&second.token).unwrap();
    assert_eq!((w.window_start_ms, w.window_end_ms), (0, 7_000));
    let ids: Vec<String> = h
        .referee
        .drain_finished()
        .into_iter()
        .map(|s| s.session_id)
        .collect();
    assert_eq!(ids, ["alpha-0001", "alpha-0002"]);
    h.server.stop();
}

#[test]
fn concurrent_teams_do_not_interfere() {
    let h = Harness::start(Arc::new(ManualClock::new(0)), 600_000);
    let c = h.client();
    let a = c.login("alpha", "pw").unwrap();
    let b = c.login("beta", "pw2").unwrap();
    assert_eq!(c.login("alpha", "pw").unwrap_err().status(), Some(409));
    c.post_result(&a.token, &format_detections(&h.fixture.answers))
        .unwrap();
    c.logout(&b.token).unwrap();
    assert!(h.referee.session(&b.token).unwrap().answers.is_empty());
    assert_eq!(h.referee.session(&a.token).unwrap().answers.len(), 18);
    h.server.stop();
}

#[test]
fn requests_past_the_window_are_session_over() {
    let clock = Arc::new(ManualClock::new(0));
    let h = Harness::start(clock.clone(), 600_000);
    let c = h.client();
    let g = c.login("alpha", "pw").unwrap();
    clock.set(600_000);
    let (bytes, media) = c.get_image(&g.token, 1).unwrap();
    assert!(bytes.starts_with(b"P5"));
    assert_eq!(media, "image/x-portable-graymap");
    clock.set(600_001);
    assert!(c.get_image(&g.token, 2).unwrap_err().is_session_over());
    assert!(c
        .post_result(&g.token, "img01 1 0.5 10 10 50 50\n")
        .unwrap_err()
        .is_session_over());
    assert!(c.logout(&g.token).unwrap_err().is_session_over());
    assert_eq!(
        c.get_image("not-a-token", 1).unwrap_err().status(),
        Some(401)
    );
    assert_eq!(c.login("alpha", "wrong").unwrap_err().status(), Some(401));

    let record = h.referee.session(&g.token).unwrap();
    assert_eq!(record.state, SessionState::Expired);
    assert_eq!(record.window_end_ms(), 600_000);
    assert_eq!(record.late_posts_ms, [600_001]);
    h.server.stop();
}

#[test]
fn malformed_answers_are_rejected_whole() {
    let h = Harness::start(Arc::new(ManualClock::new(0)), 600_000);
    let c = h.client();
    let g = c.login("alpha", "pw").unwrap();
    let err = c
        .post_result(
            &g.token,
            "img01 1 0.5 10 10 50 50\nimg99 7 1.5 10 10 5 50\n",
        )
        .unwrap_err();
    assert_eq!(err.status(), Some(422));
    let lpref::referee::client::ClientError::Status { body, .. } = err else {
        panic!("expected a status error");
    };
    let v: serde_json::Value = serde_json::from_str(&body).unwrap();
    assert_eq!(v["kind"], "validation");
    assert_eq!(v["records"][0]["line"], 2);
    assert_eq!(
        v["records"][0]["fields"],
        serde_json::json!(["image_id", "category_id", "confidence", "box"])
    );
    assert!(h.referee.session(&g.token).unwrap().answers.is_empty());
    assert_eq!(c.get_image(&g.token, 21).unwrap_err().status(), Some(404));
    h.server.stop();
}

#[test]
fn pace_overrun_loses_late_answers() {
    let h = Harness::start(Arc::new(SystemClock::new()), 600);
    let summary = simulate_contestant(&h.url(), &h.fixture.answers, &opts(60)).unwrap();
    assert!(summary.posts_rejected > 0, "{summary:?}");
    assert!(summary.posts_accepted < 18);
    assert!(summary.final_window.is_none());

    std::thread::sleep(Duration::from_millis(20));
    h.referee.expire_due();
    let record = h.referee.drain_finished().pop().unwrap();
    assert_eq!(record.state, SessionState::Expired);
    assert_eq!(record.window_end_ms(), 600);
    let report = finalize_session(
        &record,
        &h.fixture.ground_truth,
        &constant_trace(12.0, 1_000.0, 10.0),
    )
    .unwrap();

    // answers go out one image at a time in first-appearance order, so the
    // accepted ones are a prefix of the image sequence
    let mut order: Vec<&str> = Vec::new();
    for d in &h.fixture.answers {
        if !order.contains(&d.image_id.as_str()) {
            order.push(&d.image_id);
        }
    }
    let kept = &order[..summary.posts_accepted];
    let accepted: Vec<Detection> = h
        .fixture
        .answers
        .iter()
        .filter(|d| kept.contains(&d.image_id.as_str()))
        .cloned()
        .collect();
    let full = oracle_map(&instance(&h.fixture.answers, &h.fixture.ground_truth));
    let partial = oracle_map(&instance(&accepted, &h.fixture.ground_truth));
    assert!((report.map - partial).abs() < 1e-12);
    assert!(report.map < full);
    h.server.stop();
}

#[test]
fn archive_writes_session_report_and_store_entry() {
    let dir = tempfile::tempdir().unwrap();
    let traces = dir.path().join("traces");
    std::fs::create_dir_all(&traces).unwrap();
    std::fs::write(
        traces.join("alpha.csv"),
        constant_trace(12.0, 600_000.0, 1_000.0).to_text(),
    )
    .unwrap();

    let h = Harness::start(Arc::new(SteppingClock::new(0, 7_500)), 600_000);
    simulate_contestant(&h.url(), &h.fixture.answers, &opts(0)).unwrap();
    let archive = SessionArchive {
        sessions_dir: dir.path().join("sessions"),
        trace_dir: Some(traces),
        ground_truth: h.fixture.ground_truth.clone(),
        store: Some(RunStore::open(dir.path().join("runs")).unwrap()),
        track: Track::Track3,
    };
    let record = h.referee.drain_finished().pop().unwrap();
    let report = archive.archive(&record).unwrap().unwrap();

    let session_dir = dir.path().join("sessions").join(&record.session_id);
    assert_eq!(read_session(&session_dir).unwrap(), record);
    let on_disk: lpref::referee::RunReport =
        serde_json::from_str(&std::fs::read_to_string(session_dir.join(REPORT_FILE)).unwrap())
            .unwrap();
    assert_eq!(on_disk, report);

    let entries = RunStore::open(dir.path().join("runs"))
        .unwrap()
        .list_runs(&RunFilter::default())
        .unwrap();
    assert_eq!(entries.len(), 1);
    assert_eq!(entries[0].track, Track::Track3);
    assert_eq!(entries[0].score, report.score);
    h.server.stop();
}
