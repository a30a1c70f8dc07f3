//! Referee and scoring toolkit for low-power image recognition contests.
//!
//! - [`scoring`]: IoU, greedy matching, average precision, mAP
//! - [`energy`]: power traces, watt-hour integration, mAP-per-Wh score
//! - [`track1`]: latency-budget classification metrics, submission dedup
//! - [`dataset`]: ground truth, label space, image catalog, thumbnail dedup
//! - [`referee`]: timed sessions over HTTP, reference contestant, run reports
//! - [`leaderboard`]: run store, ranking with near-tie prize groups
//! - [`fixtures`]: small synthetic contests for demos and dry runs
//! - [`cli`]: the `lpref` command line

pub mod cli;
pub mod dataset;
pub mod energy;
pub mod fixtures;
pub mod leaderboard;
pub mod referee;
pub mod scoring;
pub mod track1;
