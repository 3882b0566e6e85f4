//! Protocol types and the per-node state machine.
//!
//! Slots are 1-based indices into a frame (`1..=slots_per_frame`); all slot
//! arithmetic wraps modulo the frame. A node's behaviour in a slot is split
//! into sub-phases so that a single slot can carry a full exchange: the
//! initiator packet (ping or report), a response (ack or drop), and a
//! confirmation (drop-ack). [`step::step_node`] is called once per sub-phase
//! with whatever the node decoded in the previous one, and is a pure
//! function of its inputs (the RNG substream is part of the input).

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

mod step;

pub use step::{roles_at, step_node, wake_plan, SlotRole};

/// Node address. `NONE` doubles as the "seeking a next hop" destination on
/// pings (the paper's `-1`) and prints as 0xFFFF in traces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u16);

impl NodeId {
    pub const NONE: NodeId = NodeId(u16::MAX);

    pub fn is_none(self) -> bool {
        self == Self::NONE
    }
}

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PacketKind {
    Ping,
    Ack,
    Report,
    Drop,
    DropAck,
}

/// One queued unit of monitoring data, created by a non-route node's report
/// and relayed hop by hop inside ping payloads.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PayloadEntry {
    pub origin: NodeId,
    pub bytes: u16,
    pub created_frame: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packet {
    pub kind: PacketKind,
    pub sender: NodeId,
    pub dest: NodeId,
    /// Mirrors the origin base station's link id: set once the route has
    /// been confirmed end to end. Non-route nodes start reporting only
    /// after they have seen this bit on a ping.
    pub link_formed: bool,
    /// Simulator metadata: true when a quiet-period ping was generated (or
    /// relays content that was generated) without an upstream ping behind
    /// it this frame.
    pub synthesized: bool,
    pub payload: Vec<PayloadEntry>,
}

impl Packet {
    pub fn payload_bytes(&self) -> u32 {
        self.payload.iter().map(|e| e.bytes as u32).sum()
    }
}

// ===== Configuration =====

/// Frame and slot timing. Defaults give a 200 s frame (400 slots of 500 ms)
/// with a 4-slot scan window and a 50 ms guard period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingConfig {
    pub slot_ms: u32,
    pub slots_per_frame: u16,
    /// Slots-to-listen: width of the searching scan window, which also
    /// advances by this much per frame.
    pub stl: u16,
    /// A route node transmits this many slots after the slot it receives in.
    pub forward_offset: u16,
    /// Anchored receivers wake this early to tolerate clock drift.
    pub guard_ms: u32,
}

impl Default for TimingConfig {
    fn default() -> Self {
        TimingConfig {
            slot_ms: 500,
            slots_per_frame: 400,
            stl: 4,
            forward_offset: 2,
            guard_ms: 50,
        }
    }
}

impl TimingConfig {
    pub fn frame_ms(&self) -> u32 {
        self.slot_ms * self.slots_per_frame as u32
    }

    pub fn slot_s(&self) -> f64 {
        self.slot_ms as f64 / 1000.0
    }

    pub fn frame_s(&self) -> f64 {
        self.frame_ms() as f64 / 1000.0
    }

    /// Absolute time of a slot's start, with slot 1 of frame 0 at t = 0.
    pub fn slot_time_s(&self, frame: u32, slot: u16) -> f64 {
        (frame as f64 * self.slots_per_frame as f64 + (slot - 1) as f64) * self.slot_s()
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.slot_ms == 0 {
            return Err("slot_ms must be positive".into());
        }
        if self.slots_per_frame < 4 {
            return Err("slots_per_frame must be at least 4".into());
        }
        if self.forward_offset == 0 || self.forward_offset >= self.slots_per_frame {
            return Err("forward_offset must be in 1..slots_per_frame".into());
        }
        if self.stl == 0 || self.stl > self.slots_per_frame {
            return Err(format!(
                "stl must be in 1..={} (got {})",
                self.slots_per_frame, self.stl
            ));
        }
        if self.stl < self.forward_offset + 2 {
            return Err(format!(
                "stl must be at least forward_offset + 2 = {} (got {})",
                self.forward_offset + 2,
                self.stl
            ));
        }
        if self.stl % self.forward_offset != 0 {
            return Err(format!(
                "stl must be divisible by forward_offset so the scan stays \
                 aligned with the ping slot spacing ({} % {} != 0)",
                self.stl, self.forward_offset
            ));
        }
        if self.guard_ms >= self.slot_ms {
            return Err(format!(
                "guard_ms must be below slot_ms ({} >= {})",
                self.guard_ms, self.slot_ms
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NonRouteMode {
    /// Keep waking at the slot the first ping was heard in.
    Latch,
    /// Keep shifting the scan window while pings are heard, looping back on
    /// the first silent frame.
    Shift,
}

/// Protocol tuning knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    /// A searching node abandons a join attempt for the current frame once
    /// it has heard this many pings addressed to other nodes.
    pub conlimit: u32,
    /// Frames a route-end node seeks a next hop before dropping itself
    /// from the route.
    pub frameout: u32,
    /// Consecutive frames a route(-end) node misses its previous hop's
    /// ping before giving up and searching again.
    pub phq_max: u32,
    /// Consecutive frames without an ack from the next hop before a route
    /// node reverts to route-end.
    pub nhq_max: u32,
    /// Consecutive quiet frames before a non-route node (or the anchored
    /// end base) resumes searching.
    pub rq_max: u32,
    pub report_period_frames: u32,
    /// Failed reports back off a uniform 1..=report_retry_window frames.
    pub report_retry_window: u32,
    /// Ping payload capacity in bytes.
    pub payload_capacity: u16,
    /// Size of one report entry in bytes.
    pub report_bytes: u16,
    pub nonroute_mode: NonRouteMode,
    /// Route nodes drop incoming entries once their relay queue holds this
    /// many.
    pub queue_cap: usize,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            conlimit: 1,
            frameout: 50,
            phq_max: 5,
            nhq_max: 5,
            rq_max: 5,
            report_period_frames: 10,
            report_retry_window: 4,
            payload_capacity: 22,
            report_bytes: 4,
            nonroute_mode: NonRouteMode::Latch,
            queue_cap: 16,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.conlimit == 0 {
            return Err("conlimit must be at least 1 (0 blocks every join)".into());
        }
        if self.frameout == 0 {
            return Err("frameout must be positive".into());
        }
        if self.phq_max == 0 || self.nhq_max == 0 || self.rq_max == 0 {
            return Err("quiet-counter limits must be positive".into());
        }
        if self.report_period_frames == 0 {
            return Err("report_period_frames must be positive".into());
        }
        if self.report_retry_window == 0 {
            return Err("report_retry_window must be positive".into());
        }
        if self.payload_capacity == 0 {
            return Err("payload_capacity must be positive".into());
        }
        if self.report_bytes == 0 || self.report_bytes > self.payload_capacity {
            return Err(format!(
                "report_bytes must be in 1..=payload_capacity (got {} with capacity {})",
                self.report_bytes, self.payload_capacity
            ));
        }
        if self.queue_cap == 0 {
            return Err("queue_cap must be positive".into());
        }
        Ok(())
    }
}

// ===== Slot arithmetic =====

/// `slot + k` wrapped into `1..=slots_per_frame`.
pub fn slot_add(slot: u16, k: u16, slots_per_frame: u16) -> u16 {
    debug_assert!(slot >= 1 && slot <= slots_per_frame);
    ((slot as u32 - 1 + k as u32) % slots_per_frame as u32) as u16 + 1
}

/// The scan window for a frame: `stl` consecutive slots starting at
/// `window_start`, wrapping within the frame's index space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotWindow {
    pub start: u16,
    pub len: u16,
}

impl SlotWindow {
    pub fn contains(&self, slot: u16, slots_per_frame: u16) -> bool {
        let rel = (slot as i32 - self.start as i32).rem_euclid(slots_per_frame as i32);
        (rel as u16) < self.len
    }

    /// The window slot processed last when the frame is walked in slot
    /// order. For a wrapped window that is the frame's final slot.
    pub fn last_in_frame(&self, slots_per_frame: u16) -> u16 {
        let end = self.start as u32 + self.len as u32 - 1;
        if end > slots_per_frame as u32 {
            slots_per_frame
        } else {
            end as u16
        }
    }
}

/// Current scan window given the node's stored window start.
pub fn searching_window(window_start: u16, timing: &TimingConfig) -> SlotWindow {
    SlotWindow {
        start: window_start,
        len: timing.stl,
    }
}

/// Window start after one frame of scanning.
pub fn advance_window(window_start: u16, timing: &TimingConfig) -> u16 {
    slot_add(window_start, timing.stl, timing.slots_per_frame)
}

/// Window start after `frames` frames of uninterrupted scanning. Closed
/// form of repeated [`advance_window`], used by schedule oracles in tests.
pub fn window_start_at(initial: u16, frames: u32, timing: &TimingConfig) -> u16 {
    let n = timing.slots_per_frame as u64;
    ((initial as u64 - 1 + timing.stl as u64 * frames as u64) % n) as u16 + 1
}

// ===== Join gating and payload packing =====

/// Whether a searching node may still answer a seeking ping this frame.
pub fn conlimit_gate(addressed_count: u32, conlimit: u32) -> bool {
    addressed_count < conlimit
}

/// Drain the longest FIFO prefix of `queue` that fits in `capacity` bytes.
/// Entries individually larger than the capacity can never be carried;
/// they are dropped and counted. Returns `(carried, dropped_oversized)`.
pub fn pack_payload(
    queue: &mut VecDeque<PayloadEntry>,
    capacity: u16,
) -> (Vec<PayloadEntry>, u32) {
    let mut carried = Vec::new();
    let mut dropped = 0u32;
    let mut used = 0u32;
    while let Some(front) = queue.front() {
        if front.bytes > capacity {
            queue.pop_front();
            dropped += 1;
            continue;
        }
        if used + front.bytes as u32 > capacity as u32 {
            break;
        }
        used += front.bytes as u32;
        carried.push(queue.pop_front().unwrap());
    }
    (carried, dropped)
}

// ===== Node state =====

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    OriginBase,
    EndBase,
    Searching,
    PendingJoin,
    NonRoute,
    Route,
    RouteEnd,
    Dead,
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Role::OriginBase => "origin-base",
            Role::EndBase => "end-base",
            Role::Searching => "searching",
            Role::PendingJoin => "pending-join",
            Role::NonRoute => "non-route",
            Role::Route => "route",
            Role::RouteEnd => "route-end",
            Role::Dead => "dead",
        };
        f.write_str(s)
    }
}

/// A ping queued for the node's next transmit slot. Payload is packed from
/// the relay queue at transmit time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PendingPing {
    pub synthesized: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OriginBaseState {
    pub next_hop: Option<NodeId>,
    pub link_formed: bool,
    pub nhq: u32,
    /// Set while this frame's addressed ping is still unacknowledged.
    pub awaiting_ack: bool,
}

impl OriginBaseState {
    pub fn new() -> Self {
        OriginBaseState {
            next_hop: None,
            link_formed: false,
            nhq: 0,
            awaiting_ack: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EndBaseMode {
    Scanning {
        window_start: u16,
    },
    Anchored {
        slot: u16,
        quiet: u32,
        /// A ping arrived in this frame's anchored slot.
        heard: bool,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EndBaseState {
    pub mode: EndBaseMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchingState {
    pub window_start: u16,
    /// Pings heard this frame that were addressed to some other node.
    pub addressed_count: u32,
    /// First ping heard this frame: slot, sender, link bit.
    pub first_heard: Option<(u16, NodeId, bool)>,
}

impl SearchingState {
    pub fn new(window_start: u16) -> Self {
        SearchingState {
            window_start,
            addressed_count: 0,
            first_heard: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PendingJoinState {
    pub anchor_slot: u16,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NonRouteState {
    pub mode: NonRouteMode,
    /// Slot of the ping this node latched onto.
    pub anchor_slot: u16,
    pub route_node: NodeId,
    pub rq: u32,
    pub report_backoff: u32,
    pub last_report_frame: Option<u32>,
    /// Whether any heard ping carried the formed-link bit yet.
    pub link_seen: bool,
    /// Report entry awaiting a successful (acked) delivery.
    pub pending_report: Option<PayloadEntry>,
    /// Report transmission scheduled for the slot after the anchor.
    pub armed: bool,
    /// Shift mode only: current window start and the start to loop back to.
    pub window_start: u16,
    pub loop_start: u16,
    /// Shift mode bookkeeping: a ping was heard somewhere in this frame's
    /// window.
    pub heard_this_frame: bool,
    /// Slot of the ping heard this frame (reports answer in the next slot).
    pub heard_slot: u16,
}

impl NonRouteState {
    pub fn new(
        anchor_slot: u16,
        route_node: NodeId,
        link_seen: bool,
        window_start: u16,
        mode: NonRouteMode,
    ) -> Self {
        NonRouteState {
            mode,
            anchor_slot,
            route_node,
            rq: 0,
            report_backoff: 0,
            last_report_frame: None,
            link_seen,
            pending_report: None,
            armed: false,
            window_start,
            loop_start: window_start,
            heard_this_frame: false,
            heard_slot: anchor_slot,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouteState {
    pub rx_slot: u16,
    pub prev_hop: NodeId,
    pub next_hop: NodeId,
    pub phq: u32,
    pub nhq: u32,
    pub link_formed: bool,
    pub report_queue: VecDeque<PayloadEntry>,
    pub pending_tx: Option<PendingPing>,
    /// Set when this frame's ping to the next hop is still unacknowledged.
    pub awaiting_ack: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouteEndState {
    pub rx_slot: u16,
    /// The hop whose ping this node answers; absent only if the route end
    /// was configured directly adjacent to the origin at scenario start.
    pub prev_hop: Option<NodeId>,
    pub phq: u32,
    pub frameout_count: u32,
    pub drop_pending: bool,
    pub link_formed: bool,
    pub pending_tx: Option<PendingPing>,
    /// A seeking ping went out this slot; cleared after the frameout check.
    pub sent_ping: bool,
}

impl RouteEndState {
    pub fn tx_slot(&self, timing: &TimingConfig) -> u16 {
        slot_add(self.rx_slot, timing.forward_offset, timing.slots_per_frame)
    }
}

impl RouteState {
    pub fn tx_slot(&self, timing: &TimingConfig) -> u16 {
        slot_add(self.rx_slot, timing.forward_offset, timing.slots_per_frame)
    }

    pub fn report_listen_slot(&self, timing: &TimingConfig) -> u16 {
        slot_add(self.tx_slot(timing), 1, timing.slots_per_frame)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeState {
    OriginBase(OriginBaseState),
    EndBase(EndBaseState),
    Searching(SearchingState),
    PendingJoin(PendingJoinState),
    NonRoute(NonRouteState),
    Route(RouteState),
    RouteEnd(RouteEndState),
    Dead,
}

impl NodeState {
    pub fn role(&self) -> Role {
        match self {
            NodeState::OriginBase(_) => Role::OriginBase,
            NodeState::EndBase(_) => Role::EndBase,
            NodeState::Searching(_) => Role::Searching,
            NodeState::PendingJoin(_) => Role::PendingJoin,
            NodeState::NonRoute(_) => Role::NonRoute,
            NodeState::Route(_) => Role::Route,
            NodeState::RouteEnd(_) => Role::RouteEnd,
            NodeState::Dead => Role::Dead,
        }
    }
}

// ===== Per-slot interface between engine and state machine =====

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubPhase {
    /// Pings and reports.
    Initiator,
    /// Acks and drops answering the initiator.
    Response,
    /// Drop-acks answering a drop.
    Confirm,
    /// No transmissions; counters and window decisions settle here.
    SlotEnd,
}

/// Input to one `step_node` call: the clock and whatever this node decoded
/// during the previous sub-phase (at most one packet, collisions decode to
/// nothing).
#[derive(Debug, Clone)]
pub struct SlotEvents {
    pub frame: u32,
    pub slot: u16,
    pub phase: SubPhase,
    pub received: Option<Packet>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Transmit(Packet),
    Listen,
    Sleep,
    /// The scan window moved; the node next listens starting at this slot.
    WakeNextFrameAt(u16),
    /// Relay-queue overflow dropped this many entries.
    ReportDroppedPayload(u32),
}

/// The slot the origin base transmits its ping in.
pub const ORIGIN_TX_SLOT: u16 = 1;
