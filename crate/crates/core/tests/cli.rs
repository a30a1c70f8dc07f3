use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use lpref::fixtures::{constant_trace, LoopbackFixture, RecordedSession};
use lpref::leaderboard::{RunFilter, RunStore};
use lpref::referee::client::RefereeClient;
use lpref::referee::report::{read_session, REPORT_FILE};
use lpref::referee::{ManualClock, SessionState};
use lpref::track1::Track1Run;

fn lpref(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lpref"))
        .args(args)
        .env("LPREF_LOG", "warn")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn score_track1_prints_reference_column() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run.txt");
    std::fs::write(
        &run,
        Track1Run::uniform(20_000, 28.0, 12_941, 30.0).to_text(),
    )
    .unwrap();

    let o = lpref(&["score-track1", p(&run)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    for want in ["28.0", "0.64705", "1.08e-06", "20000"] {
        assert!(out.contains(want), "missing {want} in\n{out}");
    }

    let o = lpref(&["score-track1", p(&run), "--out", "csv"]);
    let csv = stdout(&o);
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[1].parse::<f64>().unwrap(), 12_941.0 / 20_000.0);
    assert_eq!(row[4], "20000");
}

#[test]
fn score_session_prints_winner_score_and_feeds_leaderboard() {
    let dir = tempfile::tempdir().unwrap();
    let mut hits = [39; 50];
    hits[49] = 38;
    RecordedSession::grid(&hits, 300_000, 16.4004)
        .write_to(dir.path())
        .unwrap();
    let d = dir.path();
    let runs = d.join("runs");
    let report = d.join("report.json");

    let o = lpref(&[
        "score-session",
        p(&d.join("session")),
        "--gt",
        p(&d.join("gt.txt")),
        "--trace",
        p(&d.join("trace.csv")),
        "--labels",
        p(&d.join("labels.txt")),
        "--report",
        p(&report),
        "--store",
        p(&runs),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("0.3898  1.3667  0.2852"), "{out}");
    let rep: lpref::referee::RunReport =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(rep.per_class.len(), 50);

    let o = lpref(&["leaderboard", "--runs", p(&runs), "--track", "track2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o)
        .lines()
        .any(|l| l.starts_with("1st") && l.contains("winner")));
    let o = lpref(&[
        "leaderboard",
        "--runs",
        p(&runs),
        "--track",
        "track3",
        "--out",
        "csv",
    ]);
    assert_eq!(
        stdout(&o).lines().count(),
        1,
        "header only for an empty track"
    );
}

#[test]
fn dedup_submissions_fixture_has_97_unique() {
    let fixture = concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/fixtures/track1_submissions.csv"
    );
    let o = lpref(&["dedup-submissions", fixture]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "128 submissions, 97 unique");
    let o = lpref(&["dedup-submissions", fixture, "--out", "csv"]);
    assert_eq!(stdout(&o).lines().count(), 98);
}

#[test]
fn dedup_images_reports_raw_distances() {
    let dir = tempfile::tempdir().unwrap();
    let (c, r) = (dir.path().join("c"), dir.path().join("r"));
    std::fs::create_dir_all(&c).unwrap();
    std::fs::create_dir_all(&r).unwrap();
    std::fs::write(c.join("a.pgm"), lpref::fixtures::pgm(30, 30, 10)).unwrap();
    std::fs::write(c.join("b.pgm"), lpref::fixtures::pgm(60, 60, 200)).unwrap();
    std::fs::write(r.join("x.pgm"), lpref::fixtures::pgm(90, 90, 10)).unwrap();

    let o = lpref(&[
        "dedup-images",
        "--candidates",
        p(&c),
        "--reference",
        p(&r),
        "--threshold",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.lines().next().unwrap().starts_with("# thumbnail=30x30"));
    assert_eq!(out.lines().skip(1).collect::<Vec<_>>(), ["a.pgm,x.pgm,0"]);
    // 190 gray levels apart on every one of the 900 pixels
    let o = lpref(&[
        "dedup-images",
        "--candidates",
        p(&c),
        "--reference",
        p(&r),
        "--threshold",
        "5700",
    ]);
    assert!(stdout(&o).contains("b.pgm,x.pgm,5700"), "{}", stdout(&o));
}

#[test]
fn exit_codes_follow_the_contract() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.txt");
    assert_eq!(lpref(&["score-track1", p(&missing)]).status.code(), Some(2));
    assert_eq!(
        lpref(&["dedup-submissions", p(&missing)]).status.code(),
        Some(2)
    );
    assert_eq!(
        lpref(&["leaderboard", "--runs", p(&missing)]).status.code(),
        Some(2)
    );

    let bad = dir.path().join("bad.txt");
    std::fs::write(&bad, "n_total=3 budget_ms=30\nimg1,abc,1\n").unwrap();
    let o = lpref(&["score-track1", p(&bad)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));

    assert_eq!(
        lpref(&["leaderboard", "--runs", p(dir.path()), "--epsilon", "-1"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        lpref(&[
            "dedup-images",
            "--candidates",
            "a",
            "--reference",
            "b",
            "--threshold",
            "0"
        ])
        .status
        .code(),
        Some(1)
    );
    assert_eq!(
        lpref(&["dedup-images", "--candidates", "a", "--reference", "b"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        lpref(&["score-track1", p(&bad), "--bogus"]).status.code(),
        Some(1)
    );
    assert_eq!(lpref(&["--help"]).status.code(), Some(0));
}

fn serve_config(dir: &Path, catalog: &str, listen: &str) -> std::path::PathBuf {
    let cfg = dir.join("serve.toml");
    std::fs::write(
        &cfg,
        format!(
            r#"listen = "{listen}"
catalog = "{catalog}"
ground_truth = "gt.txt"
labels = "labels.txt"
sessions_dir = "sessions"
runs_dir = "runs"
trace_dir = "traces"
track = "Track2"

[[teams]]
id = "alpha"
credential = "pw"

[[teams]]
id = "beta"
credential = "pw2"
"#
        ),
    )
    .unwrap();
    cfg
}

fn write_site(dir: &Path) {
    LoopbackFixture::new().write_to(dir).unwrap();
    std::fs::create_dir_all(dir.join("traces")).unwrap();
    let trace = constant_trace(12.0, 600_000.0, 1_000.0).to_text();
    std::fs::write(dir.join("traces/alpha.csv"), &trace).unwrap();
    std::fs::write(dir.join("traces/beta.csv"), &trace).unwrap();
}

#[test]
fn serve_missing_catalog_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    write_site(dir.path());
    let cfg = serve_config(dir.path(), "no-such-images", "127.0.0.1:0");
    let o = lpref(&["serve", "--config", p(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no-such-images"), "{}", stderr(&o));
}

#[test]
fn serve_simulate_and_sigterm() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_site(d);
    let cfg = serve_config(d, "images", "127.0.0.1:0");

    let mut child = Command::new(env!("CARGO_BIN_EXE_lpref"))
        .args(["serve", "--config", p(&cfg)])
        .env("LPREF_LOG", "warn")
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let parts: Vec<&str> = line.split_whitespace().collect();
    assert_eq!((parts[0], parts[2]), ("ready", "20"), "{line}");
    let url = format!("http://{}", parts[1]);

    let o = lpref(&[
        "simulate-contestant",
        "--server",
        &url,
        "--answers",
        p(&d.join("answers.txt")),
        "--team",
        "alpha",
        "--credential",
        "pw",
        "--labels",
        p(&d.join("labels.txt")),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(
        out.contains("images fetched 20/20; posts accepted 18 rejected 0"),
        "{out}"
    );
    assert!(out.contains("\"state\":\"Closed\""), "{out}");

    // a second team is mid-session when the operator stops the referee
    let client = RefereeClient::new(&url);
    let grant = client.login("beta", "pw2").unwrap();
    client
        .post_result(&grant.token, "img01 1 0.9 10 10 50 50\n")
        .unwrap();
    std::thread::sleep(Duration::from_millis(30));

    let killed = Command::new("kill")
        .args(["-TERM", &child.id().to_string()])
        .status()
        .unwrap();
    assert!(killed.success());
    let status = child.wait().unwrap();
    assert!(status.success(), "serve exited with {status}");

    let alpha = read_session(d.join("sessions/alpha-0001")).unwrap();
    assert_eq!(alpha.state, SessionState::Closed);
    let beta = read_session(d.join("sessions/beta-0002")).unwrap();
    assert_eq!(beta.state, SessionState::Expired);
    assert!(beta.window_end_ms() > 0 && beta.window_end_ms() < 600_000);
    let report: lpref::referee::RunReport = serde_json::from_str(
        &std::fs::read_to_string(d.join("sessions/beta-0002").join(REPORT_FILE)).unwrap(),
    )
    .unwrap();
    assert_eq!(report.state, SessionState::Expired);
    assert_eq!(report.per_class[0].num_tp, 1);

    let runs = RunStore::open(d.join("runs"))
        .unwrap()
        .list_runs(&RunFilter::default())
        .unwrap();
    let teams: Vec<&str> = runs.iter().map(|e| e.team_id.as_str()).collect();
    assert_eq!(teams, ["alpha", "beta"]);
}

#[test]
fn shutdown_with_injected_clock_expires_and_persists() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_path_buf();
    write_site(&d);
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let listen = format!("127.0.0.1:{port}");
    let cfg = serve_config(&d, "images", &listen);

    let clock = Arc::new(ManualClock::new(5_000));
    let stop = Arc::new(AtomicBool::new(false));
    let server = {
        let (clock, stop) = (clock.clone(), stop.clone());
        std::thread::spawn(move || lpref::cli::serve(&cfg, clock, stop))
    };
    let client = RefereeClient::new(&format!("http://{listen}"));
    let grant = (0..100)
        .find_map(|_| {
            std::thread::sleep(Duration::from_millis(20));
            client.login("alpha", "pw").ok()
        })
        .expect("referee came up");
    clock.advance(120_000);
    client
        .post_result(&grant.token, "img11 2 0.8 20 20 60 60\n")
        .unwrap();
    clock.advance(3_000);
    stop.store(true, Ordering::SeqCst);
    server.join().unwrap().unwrap();

    let s = read_session(d.join("sessions/alpha-0001")).unwrap();
    assert_eq!(s.state, SessionState::Expired);
    assert_eq!(s.window_end_ms(), 123_000);
    let report: lpref::referee::RunReport = serde_json::from_str(
        &std::fs::read_to_string(d.join("sessions/alpha-0001").join(REPORT_FILE)).unwrap(),
    )
    .unwrap();
    assert_eq!(report.energy_wh, 12.0 * 123_000.0 / 3_600_000.0);
    // one of ten class-2 objects found, nothing for class 1
    assert_eq!(report.map, (0.0 + 0.1) / 2.0);
    assert_eq!(
        RunStore::open(d.join("runs"))
            .unwrap()
            .list_runs(&RunFilter::default())
            .unwrap()
            .len(),
        1
    );
}
