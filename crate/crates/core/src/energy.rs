//! Power traces, watt-hour integration and the energy-normalized score.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Longest scoring window of a session, in milliseconds.
pub const SESSION_LIMIT_MS: f64 = 600_000.0;

/// Default threshold above which a gap between samples is reported.
pub const DEFAULT_MAX_GAP_MS: f64 = 1000.0;

const MS_PER_HOUR: f64 = 3_600_000.0;

#[derive(Debug, Error)]
pub enum EnergyError {
    #[error("power trace is empty")]
    MissingTrace,
    #[error(
        "trace covers [{first_ms}, {last_ms}] ms but the window needs [{start_ms}, {end_ms}] ms"
    )]
    Coverage {
        first_ms: f64,
        last_ms: f64,
        start_ms: f64,
        end_ms: f64,
    },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("invalid sample at t={t_ms} ms: {reason}")]
    InvalidSample { t_ms: f64, reason: &'static str },
    #[error("invalid window [{start_ms}, {end_ms}] ms")]
    InvalidWindow { start_ms: f64, end_ms: f64 },
    #[error("energy must be positive to form a score, got {0} Wh")]
    NonPositiveEnergy(f64),
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerSample {
    /// Milliseconds since the session epoch (login).
    pub t_ms: f64,
    pub watts: f64,
}

/// Time-ordered power samples with strictly increasing timestamps.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<PowerSample>", into = "Vec<PowerSample>")]
pub struct PowerTrace {
    samples: Vec<PowerSample>,
}

impl PowerTrace {
    pub fn new(samples: Vec<PowerSample>) -> Result<Self, EnergyError> {
        for s in &samples {
            if !s.t_ms.is_finite() {
                return Err(EnergyError::InvalidSample {
                    t_ms: s.t_ms,
                    reason: "timestamp is not finite",
                });
            }
            if !s.watts.is_finite() || s.watts < 0.0 {
                return Err(EnergyError::InvalidSample {
                    t_ms: s.t_ms,
                    reason: "power must be finite and non-negative",
                });
            }
        }
        if let Some(w) = samples.windows(2).find(|w| w[1].t_ms <= w[0].t_ms) {
            return Err(EnergyError::InvalidSample {
                t_ms: w[1].t_ms,
                reason: "timestamps must be strictly increasing",
            });
        }
        Ok(Self { samples })
    }

    /// Builds a trace from `(t_ms, watts)` pairs.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (f64, f64)>) -> Result<Self, EnergyError> {
        Self::new(
            pairs
                .into_iter()
                .map(|(t_ms, watts)| PowerSample { t_ms, watts })
                .collect(),
        )
    }

    pub fn samples(&self) -> &[PowerSample] {
        &self.samples
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Reads the `<t_ms>,<watts>` text format from a file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, EnergyError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| EnergyError::Io {
            path: path.display().to_string(),
            source,
        })?;
        text.parse()
    }

    /// Renders the trace in the text format accepted by [`FromStr`].
    pub fn to_text(&self) -> String {
        let mut out = String::from("# t_ms,watts\n");
        for s in &self.samples {
            let _ = writeln!(out, "{},{}", s.t_ms, s.watts);
        }
        out
    }

    /// Gaps between consecutive samples longer than `max_gap_ms`, as
    /// `(from_ms, to_ms)` pairs.
    pub fn gaps_over(&self, max_gap_ms: f64) -> Vec<(f64, f64)> {
        self.samples
            .windows(2)
            .filter(|w| w[1].t_ms - w[0].t_ms > max_gap_ms)
            .map(|w| (w[0].t_ms, w[1].t_ms))
            .collect()
    }

    /// Power at `t_ms`, linearly interpolated between bracketing samples.
    fn power_at(&self, t_ms: f64) -> f64 {
        let idx = self.samples.partition_point(|s| s.t_ms <= t_ms);
        if idx == 0 {
            return self.samples[0].watts;
        }
        let a = self.samples[idx - 1];
        if a.t_ms == t_ms || idx == self.samples.len() {
            return a.watts;
        }
        let b = self.samples[idx];
        a.watts + (b.watts - a.watts) * (t_ms - a.t_ms) / (b.t_ms - a.t_ms)
    }
}

impl TryFrom<Vec<PowerSample>> for PowerTrace {
    type Error = EnergyError;

    fn try_from(samples: Vec<PowerSample>) -> Result<Self, Self::Error> {
        Self::new(samples)
    }
}

impl From<PowerTrace> for Vec<PowerSample> {
    fn from(t: PowerTrace) -> Self {
        t.samples
    }
}

impl FromStr for PowerTrace {
    type Err = EnergyError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut samples = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |reason: String| EnergyError::Parse {
                line: i + 1,
                reason,
            };
            let (t, w) = line
                .split_once(',')
                .ok_or_else(|| parse_err(format!("expected `<t_ms>,<watts>`, got `{line}`")))?;
            let t_ms: f64 = t
                .trim()
                .parse()
                .map_err(|e| parse_err(format!("bad timestamp `{}`: {e}", t.trim())))?;
            let watts: f64 = w
                .trim()
                .parse()
                .map_err(|e| parse_err(format!("bad power `{}`: {e}", w.trim())))?;
            samples.push(PowerSample { t_ms, watts });
        }
        Self::new(samples)
    }
}

/// Integration interval in milliseconds since the session epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyWindow {
    start_ms: f64,
    end_ms: f64,
}

impl EnergyWindow {
    pub fn new(start_ms: f64, end_ms: f64) -> Result<Self, EnergyError> {
        if !(start_ms.is_finite() && end_ms.is_finite() && start_ms < end_ms) {
            return Err(EnergyError::InvalidWindow { start_ms, end_ms });
        }
        Ok(Self { start_ms, end_ms })
    }

    /// Window of a session that logged in at `start_ms`: it ends at logout or
    /// after `limit_ms`, whichever comes first.
    pub fn session(
        start_ms: f64,
        logout_ms: Option<f64>,
        limit_ms: f64,
    ) -> Result<Self, EnergyError> {
        let cap = start_ms + limit_ms;
        let end = logout_ms.map_or(cap, |l| l.min(cap));
        Self::new(start_ms, end)
    }

    pub fn start_ms(&self) -> f64 {
        self.start_ms
    }

    pub fn end_ms(&self) -> f64 {
        self.end_ms
    }

    pub fn duration_ms(&self) -> f64 {
        self.end_ms - self.start_ms
    }
}

/// Trapezoidal integral of power over `window`, in watt-hours.
///
/// Power at the window edges is interpolated between the bracketing samples.
pub fn integrate_energy(trace: &PowerTrace, window: &EnergyWindow) -> Result<f64, EnergyError> {
    let samples = trace.samples();
    let (first, last) = match (samples.first(), samples.last()) {
        (Some(f), Some(l)) => (f.t_ms, l.t_ms),
        _ => return Err(EnergyError::MissingTrace),
    };
    if first > window.start_ms || last < window.end_ms {
        return Err(EnergyError::Coverage {
            first_ms: first,
            last_ms: last,
            start_ms: window.start_ms,
            end_ms: window.end_ms,
        });
    }

    let mut prev_t = window.start_ms;
    let mut prev_w = trace.power_at(window.start_ms);
    let mut watt_ms = 0.0;
    let inner = samples
        .iter()
        .filter(|s| s.t_ms > window.start_ms && s.t_ms < window.end_ms)
        .map(|s| (s.t_ms, s.watts));
    let end = std::iter::once((window.end_ms, trace.power_at(window.end_ms)));
    for (t, w) in inner.chain(end) {
        watt_ms += 0.5 * (prev_w + w) * (t - prev_t);
        prev_t = t;
        prev_w = w;
    }
    Ok(watt_ms / MS_PER_HOUR)
}

/// Energy of one window plus any suspicious sampling gaps inside the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyMeasurement {
    pub watt_hours: f64,
    pub gap_warnings: Vec<(f64, f64)>,
}

/// [`integrate_energy`] with gap reporting. Gaps never fail the run.
pub fn measure_energy(
    trace: &PowerTrace,
    window: &EnergyWindow,
    max_gap_ms: f64,
) -> Result<EnergyMeasurement, EnergyError> {
    let watt_hours = integrate_energy(trace, window)?;
    let gap_warnings = trace.gaps_over(max_gap_ms);
    for (a, b) in &gap_warnings {
        log::warn!("power trace gap of {} ms between {a} and {b} ms", b - a);
    }
    Ok(EnergyMeasurement {
        watt_hours,
        gap_warnings,
    })
}

/// Energy-normalized score: mAP per watt-hour.
pub fn compute_score(map_value: f64, energy_wh: f64) -> Result<f64, EnergyError> {
    if !energy_wh.is_finite() || energy_wh <= 0.0 {
        return Err(EnergyError::NonPositiveEnergy(energy_wh));
    }
    Ok(map_value / energy_wh)
}
