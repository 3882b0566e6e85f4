//! Run outputs: what happened, when, and at what cost.
//!
//! The engine fills a [`RunTrace`] as it walks frames; post-processing
//! reduces it to a [`RunSummary`] row. Full event logging is optional and
//! meant for debugging and determinism checks.

use serde::Serialize;

use crate::protocol::{NodeId, PacketKind, Role};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    /// The end base station decoded its first ping.
    RouteFormed,
    /// A post-failure ping chain reached the end base again.
    Recovered,
    MaxFrames,
    FixedDuration,
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            StopReason::RouteFormed => "route-formed",
            StopReason::Recovered => "recovered",
            StopReason::MaxFrames => "max-frames",
            StopReason::FixedDuration => "fixed-duration",
        };
        f.write_str(s)
    }
}

/// One ping decoded by the end base station.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EndBaseDecode {
    pub frame: u32,
    pub slot: u16,
    pub time_s: f64,
    pub sender: NodeId,
    pub synthesized: bool,
    pub payload_bytes: u32,
    pub payload_entries: u32,
}

/// Route established: the first end-base decode, plus the chain shape at
/// that instant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FormationRecord {
    pub frame: u32,
    pub slot: u16,
    pub time_s: f64,
    /// Links from the origin base to the end base.
    pub hops: u16,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FailureRecord {
    pub node: NodeId,
    /// Frame boundary the failure took effect at.
    pub frame: u32,
    pub time_s: f64,
    /// Whether the node was on the route when it died.
    pub was_route: bool,
    pub distance_to_end_km: f64,
}

/// Final energy figures for one node, one audit row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeEnergySummary {
    pub node: NodeId,
    pub role: Role,
    pub stored_final_mc: f64,
    pub min_stored_mc: f64,
    pub duty_cycle: f64,
    pub tx_duty_cycle: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DiagCounters {
    pub decodes: u64,
    pub collisions: u64,
    pub lost_receptions: u64,
    pub drift_blocked: u64,
    pub payload_entries_dropped: u64,
    pub energy_gated_frames: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TraceDetail {
    /// Decodes, failures, energy, counters.
    Summary,
    /// Everything, plus per-event log lines.
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TraceEventKind {
    Tx { kind: PacketKind, dest: NodeId },
    Rx { kind: PacketKind, sender: NodeId },
    RoleChange(Role),
    EnergyGated,
    Died,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEvent {
    pub frame: u32,
    pub slot: u16,
    pub phase: u8,
    pub node: NodeId,
    pub what: TraceEventKind,
}

impl std::fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "f{:06} s{:03}.{} n{:<4} ",
            self.frame, self.slot, self.phase, self.node
        )?;
        match &self.what {
            TraceEventKind::Tx { kind, dest } => write!(f, "tx {:?} -> {}", kind, dest),
            TraceEventKind::Rx { kind, sender } => write!(f, "rx {:?} <- {}", kind, sender),
            TraceEventKind::RoleChange(role) => write!(f, "role {}", role),
            TraceEventKind::EnergyGated => write!(f, "gated"),
            TraceEventKind::Died => write!(f, "died"),
        }
    }
}

/// Everything observed during one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub seed: u64,
    pub frames_run: u32,
    pub stop: StopReason,
    pub formation: Option<FormationRecord>,
    pub endbase_decodes: Vec<EndBaseDecode>,
    pub failures: Vec<FailureRecord>,
    pub node_energy: Vec<NodeEnergySummary>,
    pub diag: DiagCounters,
    /// The relay chain from origin to end base, in hop order, once it has
    /// closed (empty before then).
    pub route: Vec<NodeId>,
    /// Populated only at `TraceDetail::Full`.
    pub events: Vec<TraceEvent>,
    pub topology_length_km: f64,
}

impl RunTrace {
    /// Total payload bytes delivered to the end base station.
    pub fn delivered_bytes(&self) -> u64 {
        self.endbase_decodes
            .iter()
            .map(|d| d.payload_bytes as u64)
            .sum()
    }

    pub fn delivered_entries(&self) -> u64 {
        self.endbase_decodes
            .iter()
            .map(|d| d.payload_entries as u64)
            .sum()
    }
}

/// One row of a campaign's results table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub seed: u64,
    pub stop: StopReason,
    pub frames_run: u32,
    pub formed: bool,
    pub formation_time_s: Option<f64>,
    pub hops: Option<u16>,
    pub recovery_time_s: Option<f64>,
    pub failed_node: Option<u16>,
    pub failed_distance_to_end_km: Option<f64>,
    pub throughput_bytes_per_hour: Option<f64>,
    pub delivered_bytes: u64,
    pub delivered_entries: u64,
    pub dropped_entries: u64,
    pub max_duty_cycle: f64,
    pub max_tx_duty_cycle: f64,
    pub min_stored_mc: f64,
    pub drift_blocked: u64,
    pub topology_length_km: f64,
}
