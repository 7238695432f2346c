use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Scheme, SeedRun};
use crate::error::Result;
use crate::stats::{empirical_cdf, mean, mean_ci};

pub const CSV_HEADER: &str = "episode,scheme,seed,sum_rate,p_latency,reward";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CiEntry {
    pub mean: f64,
    pub half_width: f64,
    pub lower: f64,
    pub upper: f64,
    /// Fewer than two seeds: the width is reported as zero.
    pub degenerate: bool,
}

impl CiEntry {
    pub fn of(xs: &[f64]) -> Self {
        let ci = mean_ci(xs, 0.95);
        let degenerate = xs.len() < 2;
        let half_width = if degenerate { 0.0 } else { ci.half_width };
        Self {
            mean: ci.mean,
            half_width,
            lower: ci.mean - half_width,
            upper: ci.mean + half_width,
            degenerate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeSummary {
    pub seeds: Vec<u64>,
    pub episodes: usize,
    pub final_window: usize,
    pub sum_rate: CiEntry,
    pub p_latency: CiEntry,
    pub reward: CiEntry,
    /// Per seed: first episode whose smoothed reward covers 95% of the way
    /// from its start to its final level.
    pub convergence_episode: Vec<Option<usize>>,
    /// Per seed: end of the first 50-episode window whose mean moved less
    /// than 1% from the previous window.
    pub window_converged: Vec<Option<usize>>,
    /// Per seed final-window means, in seed order.
    pub final_sum_rate: Vec<f64>,
    pub final_reward: Vec<f64>,
}

pub type Summary = BTreeMap<Scheme, SchemeSummary>;

fn tail_mean(xs: &[f64], window: usize) -> f64 {
    mean(&xs[xs.len().saturating_sub(window)..])
}

fn moving_average(xs: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    (0..xs.len())
        .map(|k| mean(&xs[k.saturating_sub(w - 1)..=k]))
        .collect()
}

/// First episode at which the trailing `smooth`-episode average has gone
/// `frac` of the way from its first value to the final-window mean.
pub fn convergence_episode(
    xs: &[f64],
    smooth: usize,
    final_window: usize,
    frac: f64,
) -> Option<usize> {
    if xs.is_empty() {
        return None;
    }
    let ma = moving_average(xs, smooth);
    let start = ma[0];
    let target = start + frac * (tail_mean(xs, final_window) - start);
    let rising = target >= start;
    ma.iter()
        .position(|&v| if rising { v >= target } else { v <= target })
}

/// End episode (exclusive) of the first non-overlapping window whose mean
/// differs from the previous one by less than `rtol` relative.
pub fn window_converged(xs: &[f64], window: usize, rtol: f64) -> Option<usize> {
    let w = window.max(1);
    let means: Vec<f64> = xs.chunks_exact(w).map(mean).collect();
    means
        .windows(2)
        .position(|p| (p[1] - p[0]).abs() <= rtol * p[0].abs())
        .map(|k| (k + 2) * w)
}

fn sorted(runs: &[SeedRun]) -> Vec<&SeedRun> {
    let mut v: Vec<&SeedRun> = runs.iter().collect();
    v.sort_by_key(|r| (r.scheme, r.seed));
    v
}

pub fn summarize(runs: &[SeedRun], final_window: usize) -> Summary {
    let mut groups: BTreeMap<Scheme, Vec<&SeedRun>> = BTreeMap::new();
    for r in sorted(runs) {
        groups.entry(r.scheme).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(scheme, rs)| {
            let col = |f: fn(&super::EpisodeRecord) -> f64, r: &SeedRun| -> Vec<f64> {
                r.records.iter().map(f).collect()
            };
            let finals = |f: fn(&super::EpisodeRecord) -> f64| -> Vec<f64> {
                rs.iter()
                    .map(|r| tail_mean(&col(f, r), final_window))
                    .collect()
            };
            let sum_rate = finals(|e| e.sum_rate);
            let reward = finals(|e| e.reward);
            let p_latency = finals(|e| e.p_latency);
            let summary = SchemeSummary {
                seeds: rs.iter().map(|r| r.seed).collect(),
                episodes: rs.iter().map(|r| r.records.len()).max().unwrap_or(0),
                final_window,
                sum_rate: CiEntry::of(&sum_rate),
                p_latency: CiEntry::of(&p_latency),
                reward: CiEntry::of(&reward),
                convergence_episode: rs
                    .iter()
                    .map(|r| convergence_episode(&col(|e| e.reward, r), 10, final_window, 0.95))
                    .collect(),
                window_converged: rs
                    .iter()
                    .map(|r| window_converged(&col(|e| e.reward, r), 50, 0.01))
                    .collect(),
                final_sum_rate: sum_rate,
                final_reward: reward,
            };
            (scheme, summary)
        })
        .collect()
}

pub fn write_csv<W: Write>(mut w: W, runs: &[SeedRun]) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in sorted(runs) {
        for e in &r.records {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                e.episode, e.scheme, e.seed, e.sum_rate, e.p_latency, e.reward
            )?;
        }
    }
    Ok(())
}

/// `rate,cdf` rows of the pooled per-VUE rate samples.
pub fn write_cdf<W: Write>(mut w: W, samples: &[f64]) -> Result<()> {
    writeln!(w, "rate,cdf")?;
    for (x, f) in empirical_cdf(samples) {
        writeln!(w, "{x},{f}")?;
    }
    Ok(())
}

/// Writes `metrics.csv`, `summary.json` and one `cdf_<scheme>.csv` per
/// scheme into `dir`.
pub fn export_all(dir: &Path, runs: &[SeedRun], final_window: usize) -> Result<Summary> {
    fs::create_dir_all(dir)?;
    let mut csv = Vec::new();
    write_csv(&mut csv, runs)?;
    fs::write(dir.join("metrics.csv"), csv)?;
    let summary = summarize(runs, final_window);
    let named: BTreeMap<&str, &SchemeSummary> =
        summary.iter().map(|(k, v)| (k.name(), v)).collect();
    fs::write(dir.join("summary.json"), serde_json::to_vec_pretty(&named)?)?;
    let mut pooled: BTreeMap<Scheme, Vec<f64>> = BTreeMap::new();
    for r in sorted(runs) {
        pooled
            .entry(r.scheme)
            .or_default()
            .extend_from_slice(&r.rate_samples);
    }
    for (scheme, samples) in pooled {
        let mut buf = Vec::new();
        write_cdf(&mut buf, &samples)?;
        fs::write(
            dir.join(format!("cdf_{}.csv", scheme.name().to_ascii_lowercase())),
            buf,
        )?;
    }
    Ok(summary)
}
