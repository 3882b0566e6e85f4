//! Reductions over run traces: formation and recovery times, delivery
//! throughput, and the order statistics used to compare campaigns.

use serde::Serialize;
use thiserror::Error;

use crate::trace::{RunSummary, RunTrace};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no samples")]
    EmptySamples,
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("percentile {0} outside (0, 100]")]
    BadPercentile(f64),
    #[error("sample contains NaN")]
    NanSample,
    #[error("window [{start_s}, {end_s}) is empty or reversed")]
    BadWindow { start_s: f64, end_s: f64 },
    #[error("window starts at {start_s} s but the route formed at {formation_s} s")]
    WindowBeforeFormation { start_s: f64, formation_s: f64 },
    #[error("rank inputs differ in length: {left} vs {right}")]
    MismatchedLengths { left: usize, right: usize },
    #[error("rank correlation undefined: {0} has zero variance")]
    ZeroVariance(&'static str),
}

fn sorted_copy(samples: &[f64]) -> Result<Vec<f64>, MetricsError> {
    if samples.iter().any(|x| x.is_nan()) {
        return Err(MetricsError::NanSample);
    }
    let mut v = samples.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    Ok(v)
}

// ---------------------------------------------------------------------------
// Empirical distribution
// ---------------------------------------------------------------------------

/// Empirical CDF over a finite sample: a step at each sorted value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cdf {
    points: Vec<(f64, f64)>,
}

impl Cdf {
    pub fn from_samples(samples: &[f64]) -> Result<Cdf, MetricsError> {
        if samples.is_empty() {
            return Err(MetricsError::EmptySamples);
        }
        let sorted = sorted_copy(samples)?;
        let n = sorted.len() as f64;
        let points = sorted
            .iter()
            .enumerate()
            .map(|(i, &x)| (x, (i + 1) as f64 / n))
            .collect();
        Ok(Cdf { points })
    }

    /// `(value, cumulative fraction)` pairs in ascending order.
    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    /// Nearest-rank percentile, `p` in (0, 100].
    pub fn percentile(&self, p: f64) -> Result<f64, MetricsError> {
        nearest_rank(&self.points, p)
    }
}

fn nearest_rank(points: &[(f64, f64)], p: f64) -> Result<f64, MetricsError> {
    if !(p > 0.0 && p <= 100.0) {
        return Err(MetricsError::BadPercentile(p));
    }
    let n = points.len();
    let rank = ((p / 100.0) * n as f64).ceil() as usize;
    Ok(points[rank.clamp(1, n) - 1].0)
}

/// Nearest-rank percentile of an unsorted sample.
pub fn percentile(samples: &[f64], p: f64) -> Result<f64, MetricsError> {
    Cdf::from_samples(samples)?.percentile(p)
}

// ---------------------------------------------------------------------------
// Box plots
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoxplotStats {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    /// Smallest sample at or above `q1 - 1.5 * IQR`.
    pub whisker_low: f64,
    /// Largest sample at or below `q3 + 1.5 * IQR`.
    pub whisker_high: f64,
    /// Samples beyond either whisker fence, ascending.
    pub outliers: Vec<f64>,
}

/// Linear-interpolation quantile on a sorted sample (type 7).
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = (sorted.len() - 1) as f64 * p;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

pub fn boxplot_stats(samples: &[f64]) -> Result<BoxplotStats, MetricsError> {
    if samples.len() < 4 {
        return Err(MetricsError::TooFewSamples {
            need: 4,
            got: samples.len(),
        });
    }
    let sorted = sorted_copy(samples)?;
    let q1 = quantile(&sorted, 0.25);
    let median = quantile(&sorted, 0.5);
    let q3 = quantile(&sorted, 0.75);
    let iqr = q3 - q1;
    let fence_low = q1 - 1.5 * iqr;
    let fence_high = q3 + 1.5 * iqr;
    let whisker_low = sorted
        .iter()
        .copied()
        .find(|&x| x >= fence_low)
        .unwrap_or(q1);
    let whisker_high = sorted
        .iter()
        .rev()
        .copied()
        .find(|&x| x <= fence_high)
        .unwrap_or(q3);
    let outliers = sorted
        .iter()
        .copied()
        .filter(|&x| x < fence_low || x > fence_high)
        .collect();
    Ok(BoxplotStats {
        q1,
        median,
        q3,
        whisker_low,
        whisker_high,
        outliers,
    })
}

// ---------------------------------------------------------------------------
// Rank correlation
// ---------------------------------------------------------------------------

/// Ranks with ties assigned the average of the positions they span.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Positions i..=j share one value; 1-based ranks average to this.
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with tie-averaged ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64, MetricsError> {
    if xs.len() != ys.len() {
        return Err(MetricsError::MismatchedLengths {
            left: xs.len(),
            right: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(MetricsError::TooFewSamples {
            need: 2,
            got: xs.len(),
        });
    }
    if xs.iter().chain(ys.iter()).any(|x| x.is_nan()) {
        return Err(MetricsError::NanSample);
    }
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    let n = rx.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let mut cov = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for (a, b) in rx.iter().zip(ry.iter()) {
        cov += (a - mean) * (b - mean);
        var_x += (a - mean).powi(2);
        var_y += (b - mean).powi(2);
    }
    if var_x == 0.0 {
        return Err(MetricsError::ZeroVariance("first input"));
    }
    if var_y == 0.0 {
        return Err(MetricsError::ZeroVariance("second input"));
    }
    Ok(cov / (var_x * var_y).sqrt())
}

// ---------------------------------------------------------------------------
// Trace reductions
// ---------------------------------------------------------------------------

/// Seconds from the origin base's first ping to the first end-base decode.
pub fn formation_time_s(trace: &RunTrace) -> Option<f64> {
    trace.formation.as_ref().map(|f| f.time_s)
}

/// Seconds from the last failure to the first non-synthesized end-base
/// decode after it. Zero when the decode stream never missed a frame,
/// `None` when the run ended still broken or the failure predates the
/// route.
pub fn recovery_time_s(trace: &RunTrace) -> Option<f64> {
    let failure = trace.failures.last()?;
    let formation = trace.formation.as_ref()?;
    if formation.time_s > failure.time_s {
        return None;
    }
    let first = trace
        .endbase_decodes
        .iter()
        .find(|d| !d.synthesized && d.frame >= failure.frame && d.time_s >= failure.time_s)?;
    if first.frame == failure.frame {
        // Failures land on frame boundaries, so a real decode later in the
        // same frame means the chain never skipped a delivery.
        Some(0.0)
    } else {
        Some(first.time_s - failure.time_s)
    }
}

/// Payload bytes per hour decoded at the end base over `[start_s, end_s)`.
pub fn throughput_bytes_per_hour(
    trace: &RunTrace,
    start_s: f64,
    end_s: f64,
) -> Result<f64, MetricsError> {
    if !(end_s > start_s) {
        return Err(MetricsError::BadWindow { start_s, end_s });
    }
    let formation = trace
        .formation
        .as_ref()
        .map(|f| f.time_s)
        .ok_or(MetricsError::WindowBeforeFormation {
            start_s,
            formation_s: f64::INFINITY,
        })?;
    if start_s < formation {
        return Err(MetricsError::WindowBeforeFormation {
            start_s,
            formation_s: formation,
        });
    }
    let bytes: u64 = trace
        .endbase_decodes
        .iter()
        .filter(|d| d.time_s >= start_s && d.time_s < end_s)
        .map(|d| d.payload_bytes as u64)
        .sum();
    Ok(bytes as f64 * 3600.0 / (end_s - start_s))
}

/// Reduce a trace to one results row.
///
/// The summary's throughput covers whole frames from the first frame
/// boundary after formation to the end of the run; runs that stop during
/// or before the formation frame report none.
pub fn summarize(trace: &RunTrace, frame_duration_s: f64) -> RunSummary {
    let formation = trace.formation.as_ref();
    let throughput = formation.and_then(|f| {
        let start_s = (f.frame + 1) as f64 * frame_duration_s;
        let end_s = trace.frames_run as f64 * frame_duration_s;
        throughput_bytes_per_hour(trace, start_s, end_s).ok()
    });
    let failure = trace.failures.last();
    let max_duty = trace
        .node_energy
        .iter()
        .map(|e| e.duty_cycle)
        .fold(0.0, f64::max);
    let max_tx_duty = trace
        .node_energy
        .iter()
        .map(|e| e.tx_duty_cycle)
        .fold(0.0, f64::max);
    let min_stored = trace
        .node_energy
        .iter()
        .map(|e| e.min_stored_mc)
        .fold(f64::INFINITY, f64::min);
    RunSummary {
        seed: trace.seed,
        stop: trace.stop,
        frames_run: trace.frames_run,
        formed: formation.is_some(),
        formation_time_s: formation.map(|f| f.time_s),
        hops: formation.map(|f| f.hops),
        recovery_time_s: recovery_time_s(trace),
        failed_node: failure.map(|f| f.node.0),
        failed_distance_to_end_km: failure.map(|f| f.distance_to_end_km),
        throughput_bytes_per_hour: throughput,
        delivered_bytes: trace.delivered_bytes(),
        delivered_entries: trace.delivered_entries(),
        dropped_entries: trace.diag.payload_entries_dropped,
        max_duty_cycle: max_duty,
        max_tx_duty_cycle: max_tx_duty,
        min_stored_mc: if min_stored.is_finite() {
            min_stored
        } else {
            0.0
        },
        drift_blocked: trace.diag.drift_blocked,
        topology_length_km: trace.topology_length_km,
    }
}
