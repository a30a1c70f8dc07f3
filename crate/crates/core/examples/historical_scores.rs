//! Recomputes the historical score tables from their accuracy and energy columns.
//!
//! cargo run --example historical_scores

use lpref::energy::compute_score;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let yearly = [
        ("2015", 0.02971, 1.634, 0.0182),
        ("2016", 0.03469, 0.789, 0.0440),
        ("2017", 0.24838, 2.082, 0.1193),
        ("2018-2", 0.38981, 1.540, 0.2531),
        ("2018-3", 0.18318, 0.412, 0.4446),
    ];
    let base = compute_score(yearly[0].1, yearly[0].2)?;
    println!("Year    Accuracy  Energy  Score   Ratio  Reported");
    for (year, map, wh, reported) in yearly {
        let s = compute_score(map, wh)?;
        println!(
            "{year:<6}  {map:.5}   {wh:.3}   {s:.4}  {:>5.1}  {reported}",
            s / base
        );
    }

    for (track, rows) in [
        (
            "Track 2",
            &[
                ("winner", 0.3898, 1.3667, 0.2852),
                ("second", 0.1646, 2.6697, 0.0616),
                ("third", 0.0315, 1.2348, 0.0255),
            ][..],
        ),
        (
            "Track 3",
            &[
                ("winner", 0.1832, 0.4120, 0.44462),
                ("second", 0.2119, 0.5338, 0.39701),
                ("second", 0.3753, 0.9463, 0.39664),
                ("third", 0.2235, 1.5355, 0.14556),
            ][..],
        ),
    ] {
        println!("\n{track}\nTeam    mAP     Energy  Score    Reported");
        for &(team, map, wh, reported) in rows {
            println!(
                "{team:<6}  {map:.4}  {wh:.4}  {:.5}  {reported}",
                compute_score(map, wh)?
            );
        }
    }
    Ok(())
}
