//! Monte Carlo campaigns: the same scenario run many times under
//! consecutive seeds, reduced to one results row per run and rendered as
//! CSV artifacts.
//!
//! Runs are independent, so a campaign parallelises trivially; results are
//! keyed by seed and the output is identical at any worker count.

use rayon::prelude::*;
use thiserror::Error;

use crate::engine::{self, EngineError};
use crate::metrics::{BoxplotStats, Cdf};
use crate::scenario::{set_by_path, Scenario, ScenarioError};
use crate::trace::{RunSummary, TraceDetail};

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("campaign needs at least one run")]
    NoRuns,
    #[error("worker pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

/// How to repeat a scenario: run `i` of `runs` uses `base_seed + i`, so a
/// subset of a campaign can be reproduced by itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CampaignSpec {
    pub runs: u32,
    pub base_seed: u64,
    /// Worker threads; 0 means one per core.
    pub workers: usize,
}

impl Default for CampaignSpec {
    fn default() -> Self {
        CampaignSpec {
            runs: 50,
            base_seed: 0,
            workers: 0,
        }
    }
}

/// Run the campaign and return one summary per seed, ascending.
pub fn run_campaign(
    scenario: &Scenario,
    spec: &CampaignSpec,
) -> Result<Vec<RunSummary>, CampaignError> {
    if spec.runs == 0 {
        return Err(CampaignError::NoRuns);
    }
    let frame_s = scenario.timing.frame_s();
    let one = |i: u32| -> Result<RunSummary, EngineError> {
        let mut sc = scenario.clone();
        sc.seed = spec.base_seed + i as u64;
        let trace = engine::run(&sc, TraceDetail::Summary)?;
        Ok(crate::metrics::summarize(&trace, frame_s))
    };
    if spec.workers == 1 {
        return (0..spec.runs).map(|i| Ok(one(i)?)).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.workers)
        .build()?;
    let rows: Result<Vec<RunSummary>, EngineError> =
        pool.install(|| (0..spec.runs).into_par_iter().map(one).collect());
    Ok(rows?)
}

// ---------------------------------------------------------------------------
// Sweep grids
// ---------------------------------------------------------------------------

/// One grid cell: the overrides that produced it (`path=value`, joined
/// with `+`) and the resolved scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub label: String,
    pub scenario: Scenario,
}

/// Expand a base scenario (as TOML text) against the cross product of the
/// sweep axes. With no axes the grid is the base scenario alone, labelled
/// `base`. Overrides are applied to the parsed tree before deserialising,
/// so a sweep path that names an unknown field fails like any unknown key.
pub fn sweep_grid(
    base_toml: &str,
    axes: &[(String, Vec<toml::Value>)],
) -> Result<Vec<SweepCell>, ScenarioError> {
    let root: toml::Value = toml::from_str(base_toml)?;
    let mut cells = Vec::new();
    let mut picks = vec![0usize; axes.len()];
    loop {
        let mut tree = root.clone();
        let mut parts = Vec::new();
        for (axis, &pick) in axes.iter().zip(&picks) {
            let value = &axis.1[pick];
            set_by_path(&mut tree, &axis.0, value.clone())?;
            parts.push(format!("{}={}", axis.0, toml_value_label(value)));
        }
        let scenario: Scenario = tree.try_into().map_err(ScenarioError::from)?;
        scenario.validate()?;
        let label = if parts.is_empty() {
            "base".to_string()
        } else {
            parts.join("+")
        };
        cells.push(SweepCell { label, scenario });
        // Odometer increment over the axis value counts.
        let mut i = picks.len();
        loop {
            if i == 0 {
                return Ok(cells);
            }
            i -= 1;
            picks[i] += 1;
            if picks[i] < axes[i].1.len() {
                break;
            }
            picks[i] = 0;
        }
    }
}

fn toml_value_label(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Parse one `path=v1,v2,...` sweep argument. Each value becomes an
/// integer, float, or boolean when it reads as one, a string otherwise.
pub fn parse_sweep_axis(arg: &str) -> Result<(String, Vec<toml::Value>), ScenarioError> {
    let bad = || ScenarioError::BadSweepAxis(arg.into());
    let (path, values) = arg.split_once('=').ok_or_else(bad)?;
    if path.is_empty() || values.is_empty() {
        return Err(bad());
    }
    let parsed = values.split(',').map(parse_scalar).collect();
    Ok((path.to_string(), parsed))
}

fn parse_scalar(s: &str) -> toml::Value {
    let t = s.trim();
    if let Ok(i) = t.parse::<i64>() {
        return toml::Value::Integer(i);
    }
    if let Ok(f) = t.parse::<f64>() {
        return toml::Value::Float(f);
    }
    if let Ok(b) = t.parse::<bool>() {
        return toml::Value::Boolean(b);
    }
    toml::Value::String(t.to_string())
}

// ---------------------------------------------------------------------------
// CSV rendering
// ---------------------------------------------------------------------------

pub const RUNS_CSV_HEADER: &str = "seed,stop,frames_run,formed,formation_time_s,hops,\
     recovery_time_s,failed_node,failed_distance_to_end_km,throughput_bytes_per_hour,\
     delivered_bytes,delivered_entries,dropped_entries,max_duty_cycle,max_tx_duty_cycle,\
     min_stored_mc,drift_blocked,topology_length_km";

/// One row per run, in the order given (campaigns emit ascending seeds).
pub fn runs_csv(rows: &[RunSummary]) -> String {
    let mut out = String::new();
    out.push_str(&RUNS_CSV_HEADER.replace(' ', ""));
    out.push('\n');
    for r in rows {
        let line = [
            r.seed.to_string(),
            r.stop.to_string(),
            r.frames_run.to_string(),
            r.formed.to_string(),
            opt(r.formation_time_s),
            r.hops.map(|h| h.to_string()).unwrap_or_default(),
            opt(r.recovery_time_s),
            r.failed_node.map(|n| n.to_string()).unwrap_or_default(),
            opt(r.failed_distance_to_end_km),
            opt(r.throughput_bytes_per_hour),
            r.delivered_bytes.to_string(),
            r.delivered_entries.to_string(),
            r.dropped_entries.to_string(),
            r.max_duty_cycle.to_string(),
            r.max_tx_duty_cycle.to_string(),
            r.min_stored_mc.to_string(),
            r.drift_blocked.to_string(),
            r.topology_length_km.to_string(),
        ]
        .join(",");
        out.push_str(&line);
        out.push('\n');
    }
    out
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn cdf_csv(cdf: &Cdf) -> String {
    let mut out = String::from("value,fraction\n");
    for &(value, fraction) in cdf.points() {
        out.push_str(&format!("{value},{fraction}\n"));
    }
    out
}

pub fn box_csv(stats: &BoxplotStats) -> String {
    let mut out = String::from("q1,median,q3,whisker_low,whisker_high,outliers\n");
    let outliers = stats
        .outliers
        .iter()
        .map(|o| o.to_string())
        .collect::<Vec<_>>()
        .join(";");
    out.push_str(&format!(
        "{},{},{},{},{},{}\n",
        stats.q1, stats.median, stats.q3, stats.whisker_low, stats.whisker_high, outliers
    ));
    out
}
