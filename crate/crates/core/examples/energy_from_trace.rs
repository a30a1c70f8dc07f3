//! Integrating a power-meter trace over a session window, and the final score.
//!
//! cargo run --example energy_from_trace [trace.csv]

use lpref::energy::{
    compute_score, measure_energy, EnergyWindow, PowerTrace, DEFAULT_MAX_GAP_MS, SESSION_LIMIT_MS,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let trace = match std::env::args().nth(1) {
        Some(path) => PowerTrace::load(path)?,
        None => {
            // idle at 8 W, a 14 W inference plateau, and a 3 s meter dropout
            let mut pairs: Vec<(f64, f64)> = (0..=60).map(|s| (s as f64 * 1000.0, 8.0)).collect();
            pairs.extend(
                (61..=400)
                    .filter(|s| !(200..203).contains(s))
                    .map(|s| (s as f64 * 1000.0, 14.0)),
            );
            pairs.extend((401..=700).map(|s| (s as f64 * 1000.0, 8.5)));
            PowerTrace::from_pairs(pairs)?
        }
    };

    // the contestant logged out 7 minutes in
    let window = EnergyWindow::session(0.0, Some(420_000.0), SESSION_LIMIT_MS)?;
    let m = measure_energy(&trace, &window, DEFAULT_MAX_GAP_MS)?;
    println!(
        "window {:.0}..{:.0} ms: {:.4} Wh",
        window.start_ms(),
        window.end_ms(),
        m.watt_hours
    );
    for (a, b) in &m.gap_warnings {
        println!("  warning: no samples between {a} ms and {b} ms (interpolated)");
    }

    let map = 0.3898;
    println!(
        "mAP {map} / {:.4} Wh = score {:.4}",
        m.watt_hours,
        compute_score(map, m.watt_hours)?
    );

    // no logout: the window runs to the 10 minute limit
    let full = EnergyWindow::session(0.0, None, SESSION_LIMIT_MS)?;
    println!(
        "without logout: {:.4} Wh",
        measure_energy(&trace, &full, DEFAULT_MAX_GAP_MS)?.watt_hours
    );
    Ok(())
}
