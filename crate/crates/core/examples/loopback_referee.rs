//! A full contest session over loopback HTTP: referee, contestant, report.
//!
//! cargo run --example loopback_referee

use std::sync::Arc;
use std::time::Duration;

use lpref::fixtures::{constant_trace, LoopbackFixture};
use lpref::referee::client::{simulate_contestant, SimulationOptions};
use lpref::referee::http::RefereeServer;
use lpref::referee::{finalize_session, Referee, RefereeSettings, Roster, SteppingClock};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixture = LoopbackFixture::new();
    // every request moves the referee clock on by 7.5 s
    let clock = Arc::new(SteppingClock::new(0, 7_500));
    let referee = Arc::new(Referee::new(
        clock,
        Arc::new(fixture.catalog.clone()),
        fixture.ground_truth.label_space.clone(),
        Roster::new().with_team("alpha", "secret"),
        RefereeSettings::default(),
    ));
    let server = RefereeServer::start(Arc::clone(&referee), "127.0.0.1:0", 4)?;
    println!(
        "referee on http://{} with {} images",
        server.addr(),
        referee.n_images()
    );

    let summary = simulate_contestant(
        &format!("http://{}", server.addr()),
        &fixture.answers,
        &SimulationOptions {
            team_id: "alpha".into(),
            credential: "secret".into(),
            pace: Duration::ZERO,
        },
    )?;
    println!(
        "contestant fetched {} images, {} posts accepted, final window {:?}",
        summary.images_fetched, summary.posts_accepted, summary.final_window
    );

    let session = referee
        .drain_finished()
        .pop()
        .ok_or("session did not finish")?;
    let trace = constant_trace(12.0, 600_000.0, 1_000.0);
    let report = finalize_session(&session, &fixture.ground_truth, &trace)?;
    print!(
        "\n{}",
        lpref::cli::session_table(&report, &fixture.ground_truth.label_space)
    );
    server.stop();
    Ok(())
}
