//! Collapsing resubmitted models by content digest.
//!
//! cargo run --example dedup_submissions [submissions.csv]

use lpref::track1::{dedup_submissions, parse_submissions, SubmissionRecord};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args().nth(1).unwrap_or_else(|| {
        concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/fixtures/track1_submissions.csv"
        )
        .into()
    });
    let all = parse_submissions(&std::fs::read_to_string(&path)?)?;
    let unique = dedup_submissions(&all);
    println!("{} submissions, {} unique", all.len(), unique.len());

    let mut best = unique.clone();
    best.sort_by(|a, b| b.test_metric.total_cmp(&a.test_metric));
    println!("\ntop five unique models:");
    for r in best.iter().take(5) {
        println!(
            "  {}  {:.5}  {}",
            &r.content_digest[..12],
            r.test_metric,
            r.submitter
        );
    }

    // the same bytes from two accounts count once; the better score is kept
    let model = b"quantized mobilenet weights";
    let pair = [
        SubmissionRecord::from_bytes(model, 0.61, "team-a", 1_000),
        SubmissionRecord::from_bytes(model, 0.63, "team-a-alt", 2_000),
    ];
    let kept = dedup_submissions(&pair);
    println!(
        "\nresubmission kept: {} at {}",
        kept[0].submitter, kept[0].test_metric
    );
    Ok(())
}
