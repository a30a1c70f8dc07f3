//! Persisting runs and ranking teams with near-tie prize groups.
//!
//! cargo run --example leaderboard_prizes

use lpref::energy::compute_score;
use lpref::fixtures::RecordedSession;
use lpref::leaderboard::{
    best_per_team, rank, ranked_table, Components, LeaderboardEntry, RunFilter, RunPayload,
    RunStore, Track, DEFAULT_TIE_EPSILON,
};
use lpref::referee::finalize_session;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let teams = [
        ("winner", 0.1832, 0.4120),
        ("second-a", 0.2119, 0.5338),
        ("second-b", 0.3753, 0.9463),
        ("third", 0.2235, 1.5355),
    ];
    let entries: Vec<LeaderboardEntry> = teams
        .iter()
        .enumerate()
        .map(|(i, &(team, map, wh))| LeaderboardEntry {
            team_id: team.into(),
            track: Track::Track3,
            score: compute_score(map, wh).unwrap(),
            components: Components {
                accuracy: map,
                cost: wh,
            },
            run_id: format!("run-{i}"),
            timestamp_ms: 0,
        })
        .collect();
    println!("Track 3, epsilon {DEFAULT_TIE_EPSILON}:");
    print!("{}", ranked_table(&rank(&entries, DEFAULT_TIE_EPSILON)));
    println!("\nsame entries, epsilon 0:");
    print!("{}", ranked_table(&rank(&entries, 0.0)));

    // a store on disk: two runs for one team, best one ranks
    let dir = std::env::temp_dir().join(format!("lpref-store-{}", std::process::id()));
    let store = RunStore::open(&dir)?;
    for (team, hits, watts) in [("alpha", 30, 12.0), ("alpha", 35, 11.0), ("beta", 33, 9.5)] {
        let f = RecordedSession::grid(&[hits; 50], 300_000, watts);
        let mut session = f.session;
        session.team_id = team.into();
        let report = finalize_session(&session, &f.ground_truth, &f.trace)?;
        let id = store.persist_run(&RunPayload::Detection {
            track: Track::Track2,
            report,
        })?;
        println!("stored {id} for {team}");
    }
    let runs = store.list_runs(&RunFilter {
        team_id: None,
        track: Some(Track::Track2),
    })?;
    println!("\nTrack 2 from {}:", dir.display());
    print!(
        "{}",
        ranked_table(&rank(&best_per_team(&runs), DEFAULT_TIE_EPSILON))
    );
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
