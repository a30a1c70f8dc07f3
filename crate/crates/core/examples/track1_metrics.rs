//! Latency-budget metrics for on-device classification runs.
//!
//! cargo run --example track1_metrics [run.txt]

use lpref::cli::{sci, track1_table};
use lpref::track1::{evaluate_track1, ImageRecord, Track1Run};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    if let Some(path) = std::env::args().nth(1) {
        print!(
            "{}",
            track1_table(&evaluate_track1(&Track1Run::load(path)?)?)
        );
        return Ok(());
    }

    println!("validation set (20000 images at 28 ms):");
    print!(
        "{}",
        track1_table(&evaluate_track1(&Track1Run::uniform(
            20_000, 28.0, 12_941, 30.0
        ))?)
    );
    println!("\nholdout set (10927 images at 27 ms):");
    print!(
        "{}",
        track1_table(&evaluate_track1(&Track1Run::uniform(
            10_927, 27.0, 7_941, 30.0
        ))?)
    );

    // a model that is accurate but too slow: 40 ms per image against a 30 ms
    // budget, so only the first three quarters of the images count
    let slow = Track1Run::new(
        (0..1000)
            .map(|i| ImageRecord {
                image_id: format!("img{i:04}"),
                latency_ms: 40.0,
                correct: i % 10 != 0,
            })
            .collect(),
        1000,
        30.0,
    )?;
    let s = evaluate_track1(&slow)?;
    println!(
        "\nover budget: {} of {} classified, accuracy on classified {:.3}, test metric {:.3}, acc/time {}",
        s.num_classified,
        s.n_total,
        s.accuracy_on_classified,
        s.test_metric,
        sci(s.accuracy_over_time)
    );
    Ok(())
}
