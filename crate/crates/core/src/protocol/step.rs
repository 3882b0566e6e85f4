//! Per-node transition logic.
//!
//! The engine walks each frame slot by slot and calls [`step_node`] for
//! every node with business in the slot, once per sub-phase. Decodes made
//! during a sub-phase are handed to the node in the next sub-phase's call,
//! so a slot carries a complete exchange:
//!
//! * initiator: pings and reports go out
//! * response: receivers answer with ack or drop (delivered initiator
//!   decodes)
//! * confirm: initiators react to their response (ack bookkeeping,
//!   drop-ack), reporters learn their fate
//! * slot end: confirm decodes land (drop-ack) and quiet counters, window
//!   advances and frameout checks settle
//!
//! Transitions that schedule a transmission later in the same frame (a
//! freshly confirmed route end pings `forward_offset` slots after its
//! anchor) leave a pending marker in the state; the wake plan picks the
//! slot up.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::*;

/// What a node does in one slot. Drives listening, energy accounting and
/// the drift guard (anchored listens wake on a schedule, scans do not).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotRole {
    /// Part of a multi-slot scan window.
    ScanListen,
    /// Scheduled single-slot wake to receive; pays the guard period and is
    /// subject to the drift guard.
    AnchorListen,
    /// A route node's slots between rx and tx, kept in listening mode.
    IdleListen,
    /// A route node's report slot (the one after its transmit slot).
    ReportListen,
    TxPing,
    TxReport,
}

/// The node's exact role in `slot` given its current state, or `None` if
/// it sleeps through it.
pub fn roles_at(
    state: &NodeState,
    slot: u16,
    timing: &TimingConfig,
) -> Option<SlotRole> {
    let n = timing.slots_per_frame;
    let rel = |from: u16| (slot as i32 - from as i32).rem_euclid(n as i32) as u16;
    match state {
        NodeState::OriginBase(_) => (slot == ORIGIN_TX_SLOT).then_some(SlotRole::TxPing),
        NodeState::EndBase(e) => match &e.mode {
            EndBaseMode::Scanning { window_start } => searching_window(*window_start, timing)
                .contains(slot, n)
                .then_some(SlotRole::ScanListen),
            EndBaseMode::Anchored { slot: a, .. } => {
                (slot == *a).then_some(SlotRole::AnchorListen)
            }
        },
        NodeState::Searching(s) => searching_window(s.window_start, timing)
            .contains(slot, n)
            .then_some(SlotRole::ScanListen),
        NodeState::PendingJoin(p) => (slot == p.anchor_slot).then_some(SlotRole::AnchorListen),
        NodeState::NonRoute(nr) => {
            if nr.armed && slot == slot_add(nr.heard_slot, 1, n) {
                return Some(SlotRole::TxReport);
            }
            match nr.mode {
                NonRouteMode::Latch => (slot == nr.anchor_slot).then_some(SlotRole::AnchorListen),
                NonRouteMode::Shift => searching_window(nr.window_start, timing)
                    .contains(slot, n)
                    .then_some(SlotRole::ScanListen),
            }
        }
        NodeState::Route(r) => {
            let d = rel(r.rx_slot);
            if d == 0 {
                Some(SlotRole::AnchorListen)
            } else if d < timing.forward_offset {
                Some(SlotRole::IdleListen)
            } else if d == timing.forward_offset {
                Some(SlotRole::TxPing)
            } else if d == timing.forward_offset + 1 {
                Some(SlotRole::ReportListen)
            } else {
                None
            }
        }
        NodeState::RouteEnd(e) => {
            let d = rel(e.rx_slot);
            if d == 0 {
                Some(SlotRole::AnchorListen)
            } else if d < timing.forward_offset {
                Some(SlotRole::IdleListen)
            } else if d == timing.forward_offset {
                Some(SlotRole::TxPing)
            } else {
                None
            }
        }
        NodeState::Dead => None,
    }
}

/// Slots the node intends to be awake in this frame, worst case. Used for
/// the frame-start energy gate and to seed the engine's slot index. The
/// actual behaviour in a slot always comes from [`roles_at`].
pub fn wake_plan(
    state: &NodeState,
    timing: &TimingConfig,
    out: &mut Vec<(u16, SlotRole)>,
) {
    out.clear();
    let n = timing.slots_per_frame;
    let push_window = |out: &mut Vec<(u16, SlotRole)>, start: u16| {
        for i in 0..timing.stl {
            out.push((slot_add(start, i, n), SlotRole::ScanListen));
        }
    };
    match state {
        NodeState::OriginBase(_) => out.push((ORIGIN_TX_SLOT, SlotRole::TxPing)),
        NodeState::EndBase(e) => match &e.mode {
            EndBaseMode::Scanning { window_start } => push_window(out, *window_start),
            EndBaseMode::Anchored { slot, .. } => out.push((*slot, SlotRole::AnchorListen)),
        },
        NodeState::Searching(s) => push_window(out, s.window_start),
        NodeState::PendingJoin(p) => {
            out.push((p.anchor_slot, SlotRole::AnchorListen));
            // If the join confirms, the new route end pings later this
            // frame; budget for it.
            out.push((
                slot_add(p.anchor_slot, timing.forward_offset, n),
                SlotRole::TxPing,
            ));
        }
        NodeState::NonRoute(nr) => {
            match nr.mode {
                NonRouteMode::Latch => out.push((nr.anchor_slot, SlotRole::AnchorListen)),
                NonRouteMode::Shift => push_window(out, nr.window_start),
            }
            // A report may follow whichever slot the ping lands in.
            out.push((slot_add(nr.heard_slot, 1, n), SlotRole::TxReport));
        }
        NodeState::Route(r) => {
            out.push((r.rx_slot, SlotRole::AnchorListen));
            for i in 1..timing.forward_offset {
                out.push((slot_add(r.rx_slot, i, n), SlotRole::IdleListen));
            }
            out.push((r.tx_slot(timing), SlotRole::TxPing));
            out.push((r.report_listen_slot(timing), SlotRole::ReportListen));
        }
        NodeState::RouteEnd(e) => {
            out.push((e.rx_slot, SlotRole::AnchorListen));
            for i in 1..timing.forward_offset {
                out.push((slot_add(e.rx_slot, i, n), SlotRole::IdleListen));
            }
            out.push((e.tx_slot(timing), SlotRole::TxPing));
            // Adoption turns the node into a route node whose report slot
            // follows the transmit slot.
            out.push((
                slot_add(e.tx_slot(timing), 1, n),
                SlotRole::ReportListen,
            ));
        }
        NodeState::Dead => {}
    }
}

fn rand_window(rng: &mut ChaCha8Rng, timing: &TimingConfig) -> u16 {
    rng.gen_range(1..=timing.slots_per_frame)
}

fn ack(me: NodeId, dest: NodeId) -> Packet {
    Packet {
        kind: PacketKind::Ack,
        sender: me,
        dest,
        link_formed: false,
        synthesized: false,
        payload: Vec::new(),
    }
}

fn control(kind: PacketKind, me: NodeId, dest: NodeId) -> Packet {
    Packet {
        kind,
        sender: me,
        dest,
        link_formed: false,
        synthesized: false,
        payload: Vec::new(),
    }
}

fn enqueue_entries(
    queue: &mut VecDeque<PayloadEntry>,
    entries: &[PayloadEntry],
    cap: usize,
    actions: &mut Vec<Action>,
) {
    let mut dropped = 0u32;
    for e in entries {
        if queue.len() < cap {
            queue.push_back(e.clone());
        } else {
            dropped += 1;
        }
    }
    if dropped > 0 {
        actions.push(Action::ReportDroppedPayload(dropped));
    }
}

/// Advance one node by one sub-phase. Pure in `(state, events, configs,
/// rng stream)`; all randomness comes from the node's own substream.
pub fn step_node(
    me: NodeId,
    state: NodeState,
    events: &SlotEvents,
    timing: &TimingConfig,
    proto: &ProtocolConfig,
    rng: &mut ChaCha8Rng,
    actions: &mut Vec<Action>,
) -> NodeState {
    match state {
        NodeState::OriginBase(o) => step_origin(me, o, events, proto, actions),
        NodeState::EndBase(e) => step_end_base(me, e, events, timing, proto, rng, actions),
        NodeState::Searching(s) => step_searching(me, s, events, timing, proto, actions),
        NodeState::PendingJoin(p) => step_pending_join(me, p, events, timing, proto, rng, actions),
        NodeState::NonRoute(nr) => step_non_route(me, nr, events, timing, proto, rng, actions),
        NodeState::Route(r) => step_route(me, r, events, timing, proto, rng, actions),
        NodeState::RouteEnd(e) => step_route_end(me, e, events, timing, proto, rng, actions),
        NodeState::Dead => NodeState::Dead,
    }
}

fn step_origin(
    me: NodeId,
    mut o: OriginBaseState,
    ev: &SlotEvents,
    proto: &ProtocolConfig,
    actions: &mut Vec<Action>,
) -> NodeState {
    if ev.slot != ORIGIN_TX_SLOT {
        return NodeState::OriginBase(o);
    }
    match ev.phase {
        SubPhase::Initiator => {
            let dest = o.next_hop.unwrap_or(NodeId::NONE);
            o.awaiting_ack = o.next_hop.is_some();
            actions.push(Action::Transmit(Packet {
                kind: PacketKind::Ping,
                sender: me,
                dest,
                link_formed: o.link_formed,
                synthesized: false,
                payload: Vec::new(),
            }));
        }
        SubPhase::Response => {}
        SubPhase::Confirm => match &ev.received {
            Some(pkt) if pkt.kind == PacketKind::Ack && pkt.dest == me => {
                if o.next_hop.is_none() {
                    o.next_hop = Some(pkt.sender);
                    o.nhq = 0;
                } else if o.next_hop == Some(pkt.sender) {
                    o.nhq = 0;
                    o.awaiting_ack = false;
                }
            }
            Some(pkt)
                if pkt.kind == PacketKind::Drop
                    && pkt.dest == me
                    && o.next_hop == Some(pkt.sender) =>
            {
                actions.push(Action::Transmit(control(PacketKind::DropAck, me, pkt.sender)));
                o.next_hop = None;
                o.nhq = 0;
                o.awaiting_ack = false;
            }
            _ => {}
        },
        SubPhase::SlotEnd => {
            if o.awaiting_ack {
                o.awaiting_ack = false;
                o.nhq += 1;
                if o.nhq >= proto.nhq_max {
                    o.next_hop = None;
                    o.nhq = 0;
                }
            }
        }
    }
    NodeState::OriginBase(o)
}

fn step_end_base(
    me: NodeId,
    mut e: EndBaseState,
    ev: &SlotEvents,
    timing: &TimingConfig,
    proto: &ProtocolConfig,
    rng: &mut ChaCha8Rng,
    actions: &mut Vec<Action>,
) -> NodeState {
    match &mut e.mode {
        EndBaseMode::Scanning { window_start } => {
            let window = searching_window(*window_start, timing);
            match ev.phase {
                SubPhase::Response => {
                    if let Some(pkt) = &ev.received {
                        if pkt.kind == PacketKind::Ping
                            && (pkt.dest.is_none() || pkt.dest == me)
                        {
                            actions.push(Action::Transmit(ack(me, pkt.sender)));
                            e.mode = EndBaseMode::Anchored {
                                slot: ev.slot,
                                quiet: 0,
                                heard: false,
                            };
                        }
                        // Pings addressed to other nodes are overheard
                        // route traffic; keep scanning.
                    }
                }
                SubPhase::SlotEnd => {
                    if ev.slot == window.last_in_frame(timing.slots_per_frame) {
                        let next = advance_window(*window_start, timing);
                        *window_start = next;
                        actions.push(Action::WakeNextFrameAt(next));
                    }
                }
                _ => {}
            }
        }
        EndBaseMode::Anchored { quiet, heard, .. } => match ev.phase {
            SubPhase::Response => {
                if let Some(pkt) = &ev.received {
                    if pkt.kind == PacketKind::Ping {
                        *heard = true;
                        *quiet = 0;
                        if pkt.dest.is_none() || pkt.dest == me {
                            actions.push(Action::Transmit(ack(me, pkt.sender)));
                        }
                    }
                }
            }
            SubPhase::SlotEnd => {
                if *heard {
                    *heard = false;
                } else {
                    *quiet += 1;
                    if *quiet >= proto.rq_max {
                        let start = rand_window(rng, timing);
                        e.mode = EndBaseMode::Scanning {
                            window_start: start,
                        };
                        actions.push(Action::WakeNextFrameAt(start));
                    }
                }
            }
            _ => {}
        },
    }
    NodeState::EndBase(e)
}

fn step_searching(
    me: NodeId,
    mut s: SearchingState,
    ev: &SlotEvents,
    timing: &TimingConfig,
    proto: &ProtocolConfig,
    actions: &mut Vec<Action>,
) -> NodeState {
    match ev.phase {
        SubPhase::Response => {
            if let Some(pkt) = &ev.received {
                if pkt.kind == PacketKind::Ping {
                    if pkt.dest.is_none() {
                        if conlimit_gate(s.addressed_count, proto.conlimit) {
                            actions.push(Action::Transmit(ack(me, pkt.sender)));
                            return NodeState::PendingJoin(PendingJoinState {
                                anchor_slot: ev.slot,
                            });
                        }
                        if s.first_heard.is_none() {
                            s.first_heard = Some((ev.slot, pkt.sender, pkt.link_formed));
                        }
                    } else if pkt.dest != me {
                        s.addressed_count += 1;
                        if s.first_heard.is_none() {
                            s.first_heard = Some((ev.slot, pkt.sender, pkt.link_formed));
                        }
                    }
                    // A ping addressed to this node while searching is a
                    // leftover from a torn-down link; the sender's own
                    // quiet counter will sort it out.
                }
            }
        }
        SubPhase::SlotEnd => {
            let window = searching_window(s.window_start, timing);
            if ev.slot == window.last_in_frame(timing.slots_per_frame) {
                if let Some((slot, sender, link)) = s.first_heard {
                    return NodeState::NonRoute(NonRouteState::new(
                        slot,
                        sender,
                        link,
                        s.window_start,
                        proto.nonroute_mode,
                    ));
                }
                let next = advance_window(s.window_start, timing);
                s.window_start = next;
                s.addressed_count = 0;
                actions.push(Action::WakeNextFrameAt(next));
            }
        }
        _ => {}
    }
    NodeState::Searching(s)
}

fn step_pending_join(
    me: NodeId,
    p: PendingJoinState,
    ev: &SlotEvents,
    timing: &TimingConfig,
    proto: &ProtocolConfig,
    rng: &mut ChaCha8Rng,
    actions: &mut Vec<Action>,
) -> NodeState {
    if ev.slot != p.anchor_slot || ev.phase != SubPhase::Response {
        return NodeState::PendingJoin(p);
    }
    match &ev.received {
        Some(pkt) if pkt.kind == PacketKind::Ping && pkt.dest == me => {
            // Join confirmed: this node is the new route end, answering
            // here and seeking its own next hop two slots on.
            actions.push(Action::Transmit(ack(me, pkt.sender)));
            NodeState::RouteEnd(RouteEndState {
                rx_slot: p.anchor_slot,
                prev_hop: Some(pkt.sender),
                phq: 0,
                frameout_count: 0,
                drop_pending: false,
                link_formed: pkt.link_formed,
                pending_tx: Some(PendingPing {
                    synthesized: pkt.synthesized,
                }),
                sent_ping: false,
            })
        }
        Some(pkt) if pkt.kind == PacketKind::Ping && pkt.dest.is_none() => {
            // The ack collided with someone else's; back off to a fresh
            // random window.
            let start = rand_window(rng, timing);
            actions.push(Action::WakeNextFrameAt(start));
            NodeState::Searching(SearchingState::new(start))
        }
        Some(pkt) if pkt.kind == PacketKind::Ping => NodeState::NonRoute(NonRouteState::new(
            p.anchor_slot,
            pkt.sender,
            pkt.link_formed,
            p.anchor_slot,
            proto.nonroute_mode,
        )),
        _ => {
            let start = rand_window(rng, timing);
            actions.push(Action::WakeNextFrameAt(start));
            NodeState::Searching(SearchingState::new(start))
        }
    }
}

fn step_non_route(
    me: NodeId,
    mut nr: NonRouteState,
    ev: &SlotEvents,
    timing: &TimingConfig,
    proto: &ProtocolConfig,
    rng: &mut ChaCha8Rng,
    actions: &mut Vec<Action>,
) -> NodeState {
    let n = timing.slots_per_frame;
    let report_slot = slot_add(nr.heard_slot, 1, n);
    // Report transmission and its confirmation.
    if nr.armed && ev.slot == report_slot {
        match ev.phase {
            SubPhase::Initiator => {
                if let Some(entry) = &nr.pending_report {
                    actions.push(Action::Transmit(Packet {
                        kind: PacketKind::Report,
                        sender: me,
                        dest: nr.route_node,
                        link_formed: false,
                        synthesized: false,
                        payload: vec![entry.clone()],
                    }));
                }
            }
            SubPhase::Confirm => {
                match &ev.received {
                    Some(pkt) if pkt.kind == PacketKind::Ack && pkt.dest == me => {
                        nr.pending_report = None;
                        nr.last_report_frame = Some(ev.frame);
                    }
                    _ => {
                        nr.report_backoff = rng.gen_range(1..=proto.report_retry_window);
                    }
                }
                nr.armed = false;
            }
            _ => {}
        }
        return NodeState::NonRoute(nr);
    }

    match ev.phase {
        SubPhase::Response => {
            if let Some(pkt) = &ev.received {
                if pkt.kind == PacketKind::Ping {
                    if pkt.dest == NodeId::NONE {
                        // The anchored route node has reverted to seeking a
                        // next hop, so the latch's premise (a live route
                        // passing by) no longer holds. Rejoin the candidate
                        // pool; staying latched here would starve the
                        // retraction of exactly the nodes it needs.
                        let start = rand_window(rng, timing);
                        actions.push(Action::WakeNextFrameAt(start));
                        return NodeState::Searching(SearchingState::new(start));
                    }
                    nr.rq = 0;
                    nr.route_node = pkt.sender;
                    nr.link_seen |= pkt.link_formed;
                    nr.heard_this_frame = true;
                    nr.heard_slot = ev.slot;
                    let due = nr
                        .last_report_frame
                        .map_or(true, |f| ev.frame.saturating_sub(f) >= proto.report_period_frames);
                    if nr.link_seen
                        && nr.report_backoff == 0
                        && (nr.pending_report.is_some() || due)
                    {
                        if nr.pending_report.is_none() {
                            nr.pending_report = Some(PayloadEntry {
                                origin: me,
                                bytes: proto.report_bytes,
                                created_frame: ev.frame,
                            });
                        }
                        nr.armed = true;
                    }
                }
            }
        }
        SubPhase::SlotEnd => {
            let frame_end_slot = match nr.mode {
                NonRouteMode::Latch => nr.anchor_slot,
                NonRouteMode::Shift => {
                    searching_window(nr.window_start, timing).last_in_frame(n)
                }
            };
            if ev.slot == frame_end_slot {
                if nr.heard_this_frame {
                    if nr.mode == NonRouteMode::Shift {
                        nr.window_start = advance_window(nr.window_start, timing);
                        actions.push(Action::WakeNextFrameAt(nr.window_start));
                    }
                } else {
                    nr.rq += 1;
                    if nr.rq >= proto.rq_max {
                        let start = rand_window(rng, timing);
                        actions.push(Action::WakeNextFrameAt(start));
                        return NodeState::Searching(SearchingState::new(start));
                    }
                    if nr.mode == NonRouteMode::Shift {
                        nr.window_start = nr.loop_start;
                        actions.push(Action::WakeNextFrameAt(nr.window_start));
                    }
                }
                nr.heard_this_frame = false;
                if nr.report_backoff > 0 {
                    nr.report_backoff -= 1;
                }
            }
        }
        _ => {}
    }
    NodeState::NonRoute(nr)
}

fn step_route(
    me: NodeId,
    mut r: RouteState,
    ev: &SlotEvents,
    timing: &TimingConfig,
    proto: &ProtocolConfig,
    rng: &mut ChaCha8Rng,
    actions: &mut Vec<Action>,
) -> NodeState {
    let tx_slot = r.tx_slot(timing);
    let report_slot = r.report_listen_slot(timing);

    if ev.slot == r.rx_slot && ev.phase == SubPhase::Response {
        match &ev.received {
            Some(pkt) if pkt.kind == PacketKind::Ping && pkt.dest == me => {
                actions.push(Action::Transmit(ack(me, pkt.sender)));
                r.phq = 0;
                r.prev_hop = pkt.sender;
                r.link_formed = pkt.link_formed;
                enqueue_entries(&mut r.report_queue, &pkt.payload, proto.queue_cap, actions);
                r.pending_tx = Some(PendingPing {
                    synthesized: pkt.synthesized,
                });
            }
            Some(pkt) if pkt.kind == PacketKind::Ping && pkt.dest.is_none() => {
                // The previous hop lost us and is seeking again. Offer
                // ourselves, but treat the frame as missing a real relay
                // ping: if the offer keeps colliding we must not linger
                // forever.
                actions.push(Action::Transmit(ack(me, pkt.sender)));
                r.prev_hop = pkt.sender;
                r.phq += 1;
                if r.phq >= proto.phq_max {
                    return quit_route(r, timing, rng, actions);
                }
                r.pending_tx = Some(PendingPing { synthesized: true });
            }
            _ => {
                r.phq += 1;
                if r.phq >= proto.phq_max {
                    return quit_route(r, timing, rng, actions);
                }
                r.pending_tx = Some(PendingPing { synthesized: true });
            }
        }
        return NodeState::Route(r);
    }

    if ev.slot == tx_slot {
        match ev.phase {
            SubPhase::Initiator => {
                if let Some(p) = r.pending_tx.take() {
                    // Synthesized pings carry no payload; queued entries
                    // wait for a frame with a real upstream ping.
                    let payload = if p.synthesized {
                        Vec::new()
                    } else {
                        let (carried, oversized) =
                            pack_payload(&mut r.report_queue, proto.payload_capacity);
                        if oversized > 0 {
                            actions.push(Action::ReportDroppedPayload(oversized));
                        }
                        carried
                    };
                    r.awaiting_ack = true;
                    actions.push(Action::Transmit(Packet {
                        kind: PacketKind::Ping,
                        sender: me,
                        dest: r.next_hop,
                        link_formed: r.link_formed,
                        synthesized: p.synthesized,
                        payload,
                    }));
                }
            }
            SubPhase::Confirm => match &ev.received {
                Some(pkt)
                    if pkt.kind == PacketKind::Ack
                        && pkt.dest == me
                        && pkt.sender == r.next_hop =>
                {
                    r.nhq = 0;
                    r.awaiting_ack = false;
                }
                Some(pkt)
                    if pkt.kind == PacketKind::Drop
                        && pkt.dest == me
                        && pkt.sender == r.next_hop =>
                {
                    actions.push(Action::Transmit(control(
                        PacketKind::DropAck,
                        me,
                        pkt.sender,
                    )));
                    return demote_to_route_end(r, actions);
                }
                _ => {}
            },
            SubPhase::SlotEnd => {
                if r.awaiting_ack {
                    r.awaiting_ack = false;
                    r.nhq += 1;
                    if r.nhq >= proto.nhq_max {
                        return demote_to_route_end(r, actions);
                    }
                }
            }
            _ => {}
        }
        return NodeState::Route(r);
    }

    if ev.slot == report_slot && ev.phase == SubPhase::Response {
        if let Some(pkt) = &ev.received {
            if pkt.kind == PacketKind::Report && pkt.dest == me {
                actions.push(Action::Transmit(ack(me, pkt.sender)));
                enqueue_entries(&mut r.report_queue, &pkt.payload, proto.queue_cap, actions);
            }
        }
    }
    NodeState::Route(r)
}

/// Route node lost its previous hop for good: back to searching. Queued
/// entries have nowhere to go and are dropped (counted).
fn quit_route(
    r: RouteState,
    timing: &TimingConfig,
    rng: &mut ChaCha8Rng,
    actions: &mut Vec<Action>,
) -> NodeState {
    if !r.report_queue.is_empty() {
        actions.push(Action::ReportDroppedPayload(r.report_queue.len() as u32));
    }
    let start = rand_window(rng, timing);
    actions.push(Action::WakeNextFrameAt(start));
    NodeState::Searching(SearchingState::new(start))
}

/// Route node lost its next hop (quiet acks or an explicit drop): it is
/// the route end again, seeking. The relay queue dies with the link.
fn demote_to_route_end(r: RouteState, actions: &mut Vec<Action>) -> NodeState {
    if !r.report_queue.is_empty() {
        actions.push(Action::ReportDroppedPayload(r.report_queue.len() as u32));
    }
    NodeState::RouteEnd(RouteEndState {
        rx_slot: r.rx_slot,
        prev_hop: Some(r.prev_hop),
        phq: r.phq,
        frameout_count: 0,
        drop_pending: false,
        link_formed: r.link_formed,
        pending_tx: None,
        sent_ping: false,
    })
}

fn step_route_end(
    me: NodeId,
    mut e: RouteEndState,
    ev: &SlotEvents,
    timing: &TimingConfig,
    proto: &ProtocolConfig,
    rng: &mut ChaCha8Rng,
    actions: &mut Vec<Action>,
) -> NodeState {
    let tx_slot = e.tx_slot(timing);

    if ev.slot == e.rx_slot {
        match ev.phase {
            SubPhase::Response => match &ev.received {
                Some(pkt) if pkt.kind == PacketKind::Ping && pkt.dest == me => {
                    e.phq = 0;
                    e.prev_hop = Some(pkt.sender);
                    e.link_formed = pkt.link_formed;
                    e.pending_tx = Some(PendingPing {
                        synthesized: pkt.synthesized,
                    });
                    let reply = if e.drop_pending {
                        control(PacketKind::Drop, me, pkt.sender)
                    } else {
                        ack(me, pkt.sender)
                    };
                    actions.push(Action::Transmit(reply));
                }
                Some(pkt) if pkt.kind == PacketKind::Ping && pkt.dest.is_none() => {
                    actions.push(Action::Transmit(ack(me, pkt.sender)));
                    e.prev_hop = Some(pkt.sender);
                    e.phq += 1;
                    if e.phq >= proto.phq_max {
                        let start = rand_window(rng, timing);
                        actions.push(Action::WakeNextFrameAt(start));
                        return NodeState::Searching(SearchingState::new(start));
                    }
                    e.pending_tx = Some(PendingPing { synthesized: true });
                }
                _ => {
                    if e.prev_hop.is_some() {
                        e.phq += 1;
                        if e.phq >= proto.phq_max {
                            let start = rand_window(rng, timing);
                            actions.push(Action::WakeNextFrameAt(start));
                            return NodeState::Searching(SearchingState::new(start));
                        }
                    }
                    e.pending_tx = Some(PendingPing { synthesized: true });
                }
            },
            SubPhase::SlotEnd => {
                // A drop-ack confirms the previous hop heard our drop;
                // hand the route back and search elsewhere.
                if let Some(pkt) = &ev.received {
                    if pkt.kind == PacketKind::DropAck && pkt.dest == me {
                        let start = rand_window(rng, timing);
                        actions.push(Action::WakeNextFrameAt(start));
                        return NodeState::Searching(SearchingState::new(start));
                    }
                }
            }
            _ => {}
        }
        return NodeState::RouteEnd(e);
    }

    if ev.slot == tx_slot {
        match ev.phase {
            SubPhase::Initiator => {
                if let Some(p) = e.pending_tx.take() {
                    e.sent_ping = true;
                    actions.push(Action::Transmit(Packet {
                        kind: PacketKind::Ping,
                        sender: me,
                        dest: NodeId::NONE,
                        link_formed: e.link_formed,
                        synthesized: p.synthesized,
                        payload: Vec::new(),
                    }));
                }
            }
            SubPhase::Confirm => {
                if let Some(pkt) = &ev.received {
                    if pkt.kind == PacketKind::Ack && pkt.dest == me {
                        // First answering candidate becomes the next hop.
                        return NodeState::Route(RouteState {
                            rx_slot: e.rx_slot,
                            prev_hop: e.prev_hop.unwrap_or(NodeId::NONE),
                            next_hop: pkt.sender,
                            phq: e.phq,
                            nhq: 0,
                            link_formed: e.link_formed,
                            report_queue: VecDeque::new(),
                            pending_tx: None,
                            awaiting_ack: false,
                        });
                    }
                }
            }
            SubPhase::SlotEnd => {
                if e.sent_ping {
                    e.sent_ping = false;
                    e.frameout_count += 1;
                    if e.frameout_count >= proto.frameout {
                        if e.prev_hop.is_some() {
                            e.drop_pending = true;
                        } else {
                            // Nobody to hand the route back to; just start
                            // over.
                            let start = rand_window(rng, timing);
                            actions.push(Action::WakeNextFrameAt(start));
                            return NodeState::Searching(SearchingState::new(start));
                        }
                    }
                }
            }
            _ => {}
        }
    }
    NodeState::RouteEnd(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Purpose};

    fn timing() -> TimingConfig {
        TimingConfig::default()
    }

    fn proto() -> ProtocolConfig {
        ProtocolConfig::default()
    }

    fn rng_for(node: u16) -> ChaCha8Rng {
        substream(42, node, Purpose::Protocol)
    }

    fn ev(frame: u32, slot: u16, phase: SubPhase, received: Option<Packet>) -> SlotEvents {
        SlotEvents {
            frame,
            slot,
            phase,
            received,
        }
    }

    fn ping(sender: u16, dest: NodeId, link: bool, synth: bool) -> Packet {
        Packet {
            kind: PacketKind::Ping,
            sender: NodeId(sender),
            dest,
            link_formed: link,
            synthesized: synth,
            payload: Vec::new(),
        }
    }

    fn ack_from(sender: u16, dest: u16) -> Packet {
        Packet {
            kind: PacketKind::Ack,
            sender: NodeId(sender),
            dest: NodeId(dest),
            link_formed: false,
            synthesized: false,
            payload: Vec::new(),
        }
    }

    fn step(
        me: u16,
        state: NodeState,
        e: SlotEvents,
        rng: &mut ChaCha8Rng,
    ) -> (NodeState, Vec<Action>) {
        let mut actions = Vec::new();
        let s = step_node(NodeId(me), state, &e, &timing(), &proto(), rng, &mut actions);
        (s, actions)
    }

    fn step_with(
        me: u16,
        state: NodeState,
        e: SlotEvents,
        p: &ProtocolConfig,
        rng: &mut ChaCha8Rng,
    ) -> (NodeState, Vec<Action>) {
        let mut actions = Vec::new();
        let s = step_node(NodeId(me), state, &e, &timing(), p, rng, &mut actions);
        (s, actions)
    }

    fn transmitted(actions: &[Action]) -> Vec<&Packet> {
        actions
            .iter()
            .filter_map(|a| match a {
                Action::Transmit(p) => Some(p),
                _ => None,
            })
            .collect()
    }

    // ----- origin base -----

    #[test]
    fn origin_pings_seeking_then_adopts_first_ack() {
        let mut rng = rng_for(0);
        let st = NodeState::OriginBase(OriginBaseState::new());
        let (st, acts) = step(0, st, ev(0, 1, SubPhase::Initiator, None), &mut rng);
        let tx = transmitted(&acts);
        assert_eq!(tx.len(), 1);
        assert_eq!(tx[0].kind, PacketKind::Ping);
        assert!(tx[0].dest.is_none());
        assert!(!tx[0].synthesized);

        let (st, _) = step(
            0,
            st,
            ev(0, 1, SubPhase::Confirm, Some(ack_from(5, 0))),
            &mut rng,
        );
        match st {
            NodeState::OriginBase(o) => assert_eq!(o.next_hop, Some(NodeId(5))),
            other => panic!("expected origin, got {:?}", other.role()),
        }
    }

    #[test]
    fn origin_reverts_to_seeking_after_quiet_acks() {
        let mut rng = rng_for(0);
        let mut st = NodeState::OriginBase(OriginBaseState {
            next_hop: Some(NodeId(5)),
            link_formed: false,
            nhq: 0,
            awaiting_ack: false,
        });
        for frame in 0..proto().nhq_max {
            let (s, acts) = step(0, st, ev(frame, 1, SubPhase::Initiator, None), &mut rng);
            assert_eq!(transmitted(&acts)[0].dest, NodeId(5));
            let (s, _) = step(0, s, ev(frame, 1, SubPhase::SlotEnd, None), &mut rng);
            st = s;
        }
        match st {
            NodeState::OriginBase(o) => {
                assert_eq!(o.next_hop, None);
                assert_eq!(o.nhq, 0);
            }
            other => panic!("expected origin, got {:?}", other.role()),
        }
    }

    #[test]
    fn origin_answers_drop_with_drop_ack_and_forgets_hop() {
        let mut rng = rng_for(0);
        let st = NodeState::OriginBase(OriginBaseState {
            next_hop: Some(NodeId(5)),
            link_formed: true,
            nhq: 2,
            awaiting_ack: true,
        });
        let drop = Packet {
            kind: PacketKind::Drop,
            sender: NodeId(5),
            dest: NodeId(0),
            link_formed: false,
            synthesized: false,
            payload: Vec::new(),
        };
        let (st, acts) = step(0, st, ev(3, 1, SubPhase::Confirm, Some(drop)), &mut rng);
        let tx = transmitted(&acts);
        assert_eq!(tx[0].kind, PacketKind::DropAck);
        assert_eq!(tx[0].dest, NodeId(5));
        match st {
            NodeState::OriginBase(o) => {
                assert_eq!(o.next_hop, None);
                // The formed-link flag survives route churn.
                assert!(o.link_formed);
            }
            other => panic!("expected origin, got {:?}", other.role()),
        }
    }

    // ----- searching -----

    #[test]
    fn searching_answers_seeking_ping_and_waits_for_confirmation() {
        let mut rng = rng_for(3);
        let st = NodeState::Searching(SearchingState::new(10));
        let (st, acts) = step(
            3,
            st,
            ev(2, 11, SubPhase::Response, Some(ping(7, NodeId::NONE, false, false))),
            &mut rng,
        );
        let tx = transmitted(&acts);
        assert_eq!(tx[0].kind, PacketKind::Ack);
        assert_eq!(tx[0].dest, NodeId(7));
        match st {
            NodeState::PendingJoin(p) => assert_eq!(p.anchor_slot, 11),
            other => panic!("expected pending join, got {:?}", other.role()),
        }
    }

    #[test]
    fn searching_blocked_by_conlimit_does_not_answer() {
        let mut rng = rng_for(3);
        let mut s = SearchingState::new(10);
        s.addressed_count = 1;
        let (st, acts) = step(
            3,
            NodeState::Searching(s),
            ev(2, 11, SubPhase::Response, Some(ping(7, NodeId::NONE, false, false))),
            &mut rng,
        );
        assert!(transmitted(&acts).is_empty());
        match st {
            NodeState::Searching(s) => {
                assert_eq!(s.first_heard, Some((11, NodeId(7), false)));
            }
            other => panic!("expected searching, got {:?}", other.role()),
        }
    }

    #[test]
    fn searching_latches_non_route_at_window_end_after_hearing_traffic() {
        let mut rng = rng_for(3);
        let st = NodeState::Searching(SearchingState::new(10));
        // A ping addressed to another node: counts against conlimit and is
        // remembered as the anchor candidate.
        let (st, _) = step(
            3,
            st,
            ev(2, 10, SubPhase::Response, Some(ping(7, NodeId(8), true, false))),
            &mut rng,
        );
        let (st, _) = step(3, st, ev(2, 13, SubPhase::SlotEnd, None), &mut rng);
        match st {
            NodeState::NonRoute(nr) => {
                assert_eq!(nr.anchor_slot, 10);
                assert_eq!(nr.route_node, NodeId(7));
                assert!(nr.link_seen);
            }
            other => panic!("expected non-route, got {:?}", other.role()),
        }
    }

    #[test]
    fn searching_advances_window_when_quiet() {
        let mut rng = rng_for(3);
        let st = NodeState::Searching(SearchingState::new(397));
        // Window {397..400}: quiet through its last slot.
        let (st, acts) = step(3, st, ev(0, 400, SubPhase::SlotEnd, None), &mut rng);
        assert!(acts.contains(&Action::WakeNextFrameAt(1)));
        match st {
            NodeState::Searching(s) => assert_eq!(s.window_start, 1),
            other => panic!("expected searching, got {:?}", other.role()),
        }
    }

    #[test]
    fn searching_ignores_pings_addressed_to_itself() {
        let mut rng = rng_for(3);
        let st = NodeState::Searching(SearchingState::new(10));
        let (st, acts) = step(
            3,
            st,
            ev(2, 11, SubPhase::Response, Some(ping(7, NodeId(3), false, false))),
            &mut rng,
        );
        assert!(transmitted(&acts).is_empty());
        match st {
            NodeState::Searching(s) => {
                assert_eq!(s.addressed_count, 0);
                assert!(s.first_heard.is_none());
            }
            other => panic!("expected searching, got {:?}", other.role()),
        }
    }

    // ----- pending join -----

    #[test]
    fn pending_join_confirms_into_route_end() {
        let mut rng = rng_for(3);
        let st = NodeState::PendingJoin(PendingJoinState { anchor_slot: 11 });
        let (st, acts) = step(
            3,
            st,
            ev(3, 11, SubPhase::Response, Some(ping(7, NodeId(3), false, false))),
            &mut rng,
        );
        assert_eq!(transmitted(&acts)[0].kind, PacketKind::Ack);
        match st {
            NodeState::RouteEnd(e) => {
                assert_eq!(e.rx_slot, 11);
                assert_eq!(e.prev_hop, Some(NodeId(7)));
                assert_eq!(
                    e.pending_tx,
                    Some(PendingPing { synthesized: false })
                );
            }
            other => panic!("expected route end, got {:?}", other.role()),
        }
    }

    #[test]
    fn pending_join_backs_off_when_ping_still_seeking() {
        let mut rng = rng_for(3);
        let st = NodeState::PendingJoin(PendingJoinState { anchor_slot: 11 });
        let (st, acts) = step(
            3,
            st,
            ev(3, 11, SubPhase::Response, Some(ping(7, NodeId::NONE, false, false))),
            &mut rng,
        );
        assert!(transmitted(&acts).is_empty());
        assert!(matches!(st, NodeState::Searching(_)));
    }

    #[test]
    fn pending_join_latches_when_ping_went_to_someone_else() {
        let mut rng = rng_for(3);
        let st = NodeState::PendingJoin(PendingJoinState { anchor_slot: 11 });
        let (st, _) = step(
            3,
            st,
            ev(3, 11, SubPhase::Response, Some(ping(7, NodeId(9), false, false))),
            &mut rng,
        );
        match st {
            NodeState::NonRoute(nr) => {
                assert_eq!(nr.anchor_slot, 11);
                assert_eq!(nr.route_node, NodeId(7));
            }
            other => panic!("expected non-route, got {:?}", other.role()),
        }
    }

    #[test]
    fn pending_join_gives_up_on_silence() {
        let mut rng = rng_for(3);
        let st = NodeState::PendingJoin(PendingJoinState { anchor_slot: 11 });
        let (st, _) = step(3, st, ev(3, 11, SubPhase::Response, None), &mut rng);
        assert!(matches!(st, NodeState::Searching(_)));
    }

    // ----- route -----

    fn route_state() -> RouteState {
        RouteState {
            rx_slot: 20,
            prev_hop: NodeId(1),
            next_hop: NodeId(3),
            phq: 0,
            nhq: 0,
            link_formed: false,
            report_queue: VecDeque::new(),
            pending_tx: None,
            awaiting_ack: false,
        }
    }

    #[test]
    fn route_relays_ping_payload_to_next_hop() {
        let mut rng = rng_for(2);
        let mut upstream = ping(1, NodeId(2), true, false);
        upstream.payload = vec![PayloadEntry {
            origin: NodeId(9),
            bytes: 4,
            created_frame: 1,
        }];
        let (st, acts) = step(
            2,
            NodeState::Route(route_state()),
            ev(2, 20, SubPhase::Response, Some(upstream)),
            &mut rng,
        );
        assert_eq!(transmitted(&acts)[0].kind, PacketKind::Ack);

        let (st, acts) = step(2, st, ev(2, 22, SubPhase::Initiator, None), &mut rng);
        let tx = transmitted(&acts);
        assert_eq!(tx[0].kind, PacketKind::Ping);
        assert_eq!(tx[0].dest, NodeId(3));
        assert!(tx[0].link_formed);
        assert!(!tx[0].synthesized);
        assert_eq!(tx[0].payload.len(), 1);
        assert_eq!(tx[0].payload[0].origin, NodeId(9));

        let (st, _) = step(
            2,
            st,
            ev(2, 22, SubPhase::Confirm, Some(ack_from(3, 2))),
            &mut rng,
        );
        match st {
            NodeState::Route(r) => {
                assert_eq!(r.nhq, 0);
                assert!(!r.awaiting_ack);
                assert!(r.report_queue.is_empty());
            }
            other => panic!("expected route, got {:?}", other.role()),
        }
    }

    #[test]
    fn route_synthesizes_empty_ping_when_upstream_missed() {
        let mut rng = rng_for(2);
        let mut r = route_state();
        r.report_queue.push_back(PayloadEntry {
            origin: NodeId(9),
            bytes: 4,
            created_frame: 0,
        });
        let (st, _) = step(
            2,
            NodeState::Route(r),
            ev(2, 20, SubPhase::Response, None),
            &mut rng,
        );
        match &st {
            NodeState::Route(r) => {
                assert_eq!(r.phq, 1);
                assert_eq!(r.pending_tx, Some(PendingPing { synthesized: true }));
            }
            other => panic!("expected route, got {:?}", other.role()),
        }
        let (st, acts) = step(2, st, ev(2, 22, SubPhase::Initiator, None), &mut rng);
        let tx = transmitted(&acts);
        assert!(tx[0].synthesized);
        assert!(tx[0].payload.is_empty());
        // Queued entries wait for a real upstream frame.
        match st {
            NodeState::Route(r) => assert_eq!(r.report_queue.len(), 1),
            other => panic!("expected route, got {:?}", other.role()),
        }
    }

    #[test]
    fn route_quits_after_phq_max_missed_pings() {
        let mut rng = rng_for(2);
        let mut r = route_state();
        r.phq = proto().phq_max - 1;
        let (st, _) = step(
            2,
            NodeState::Route(r),
            ev(9, 20, SubPhase::Response, None),
            &mut rng,
        );
        assert!(matches!(st, NodeState::Searching(_)));
    }

    #[test]
    fn route_reoffers_itself_on_seeking_ping_but_counts_the_miss() {
        let mut rng = rng_for(2);
        let (st, acts) = step(
            2,
            NodeState::Route(route_state()),
            ev(2, 20, SubPhase::Response, Some(ping(1, NodeId::NONE, false, false))),
            &mut rng,
        );
        assert_eq!(transmitted(&acts)[0].kind, PacketKind::Ack);
        match st {
            NodeState::Route(r) => {
                assert_eq!(r.phq, 1);
                assert_eq!(r.pending_tx, Some(PendingPing { synthesized: true }));
            }
            other => panic!("expected route, got {:?}", other.role()),
        }
    }

    #[test]
    fn route_demotes_to_route_end_after_quiet_next_hop() {
        let mut rng = rng_for(2);
        let mut st = NodeState::Route(route_state());
        for frame in 0..proto().nhq_max {
            if let NodeState::Route(r) = &mut st {
                r.pending_tx = Some(PendingPing { synthesized: false });
            }
            let (s, _) = step(2, st, ev(frame, 22, SubPhase::Initiator, None), &mut rng);
            let (s, _) = step(2, s, ev(frame, 22, SubPhase::SlotEnd, None), &mut rng);
            st = s;
        }
        match st {
            NodeState::RouteEnd(e) => {
                assert_eq!(e.rx_slot, 20);
                assert_eq!(e.prev_hop, Some(NodeId(1)));
                assert!(!e.drop_pending);
            }
            other => panic!("expected route end, got {:?}", other.role()),
        }
    }

    #[test]
    fn route_demotes_and_confirms_on_drop_from_next_hop() {
        let mut rng = rng_for(2);
        let mut r = route_state();
        r.report_queue.push_back(PayloadEntry {
            origin: NodeId(9),
            bytes: 4,
            created_frame: 0,
        });
        let drop = Packet {
            kind: PacketKind::Drop,
            sender: NodeId(3),
            dest: NodeId(2),
            link_formed: false,
            synthesized: false,
            payload: Vec::new(),
        };
        let (st, acts) = step(
            2,
            NodeState::Route(r),
            ev(5, 22, SubPhase::Confirm, Some(drop)),
            &mut rng,
        );
        let tx = transmitted(&acts);
        assert_eq!(tx[0].kind, PacketKind::DropAck);
        assert_eq!(tx[0].dest, NodeId(3));
        // The undeliverable relay queue is dropped and counted.
        assert!(acts.contains(&Action::ReportDroppedPayload(1)));
        assert!(matches!(st, NodeState::RouteEnd(_)));
    }

    #[test]
    fn route_accepts_report_in_slot_after_transmit() {
        let mut rng = rng_for(2);
        let report = Packet {
            kind: PacketKind::Report,
            sender: NodeId(9),
            dest: NodeId(2),
            link_formed: false,
            synthesized: false,
            payload: vec![PayloadEntry {
                origin: NodeId(9),
                bytes: 4,
                created_frame: 7,
            }],
        };
        let (st, acts) = step(
            2,
            NodeState::Route(route_state()),
            ev(7, 23, SubPhase::Response, Some(report)),
            &mut rng,
        );
        let tx = transmitted(&acts);
        assert_eq!(tx[0].kind, PacketKind::Ack);
        assert_eq!(tx[0].dest, NodeId(9));
        match st {
            NodeState::Route(r) => assert_eq!(r.report_queue.len(), 1),
            other => panic!("expected route, got {:?}", other.role()),
        }
    }

    #[test]
    fn route_queue_overflow_drops_and_counts() {
        let mut rng = rng_for(2);
        let mut r = route_state();
        for _ in 0..proto().queue_cap {
            r.report_queue.push_back(PayloadEntry {
                origin: NodeId(9),
                bytes: 4,
                created_frame: 0,
            });
        }
        let mut upstream = ping(1, NodeId(2), false, false);
        upstream.payload = vec![PayloadEntry {
            origin: NodeId(8),
            bytes: 4,
            created_frame: 1,
        }];
        let (_, acts) = step(
            2,
            NodeState::Route(r),
            ev(2, 20, SubPhase::Response, Some(upstream)),
            &mut rng,
        );
        assert!(acts.contains(&Action::ReportDroppedPayload(1)));
    }

    // ----- route end -----

    fn route_end_state() -> RouteEndState {
        RouteEndState {
            rx_slot: 20,
            prev_hop: Some(NodeId(1)),
            phq: 0,
            frameout_count: 0,
            drop_pending: false,
            link_formed: false,
            pending_tx: None,
            sent_ping: false,
        }
    }

    #[test]
    fn route_end_acks_upstream_and_seeks_forward() {
        let mut rng = rng_for(2);
        let (st, acts) = step(
            2,
            NodeState::RouteEnd(route_end_state()),
            ev(4, 20, SubPhase::Response, Some(ping(1, NodeId(2), false, false))),
            &mut rng,
        );
        assert_eq!(transmitted(&acts)[0].kind, PacketKind::Ack);

        let (st, acts) = step(2, st, ev(4, 22, SubPhase::Initiator, None), &mut rng);
        let tx = transmitted(&acts);
        assert_eq!(tx[0].kind, PacketKind::Ping);
        assert!(tx[0].dest.is_none());

        let (st, _) = step(
            2,
            st,
            ev(4, 22, SubPhase::Confirm, Some(ack_from(5, 2))),
            &mut rng,
        );
        match st {
            NodeState::Route(r) => {
                assert_eq!(r.next_hop, NodeId(5));
                assert_eq!(r.prev_hop, NodeId(1));
                assert_eq!(r.rx_slot, 20);
            }
            other => panic!("expected route, got {:?}", other.role()),
        }
    }

    #[test]
    fn route_end_ignores_ack_meant_for_another_node() {
        let mut rng = rng_for(2);
        let mut e = route_end_state();
        e.sent_ping = true;
        let (st, _) = step(
            2,
            NodeState::RouteEnd(e),
            ev(4, 22, SubPhase::Confirm, Some(ack_from(5, 9))),
            &mut rng,
        );
        assert!(matches!(st, NodeState::RouteEnd(_)));
    }

    #[test]
    fn route_end_frameout_leads_to_drop_handshake() {
        let mut rng = rng_for(2);
        let p = ProtocolConfig {
            frameout: 2,
            ..proto()
        };
        let mut st = NodeState::RouteEnd(route_end_state());
        for frame in 0..2 {
            if let NodeState::RouteEnd(e) = &mut st {
                e.pending_tx = Some(PendingPing { synthesized: true });
            }
            let (s, _) = step_with(2, st, ev(frame, 22, SubPhase::Initiator, None), &p, &mut rng);
            let (s, _) = step_with(2, s, ev(frame, 22, SubPhase::SlotEnd, None), &p, &mut rng);
            st = s;
        }
        match &st {
            NodeState::RouteEnd(e) => assert!(e.drop_pending),
            other => panic!("expected route end, got {:?}", other.role()),
        }

        // Next upstream ping is answered with a drop instead of an ack.
        let (st, acts) = step_with(
            2,
            st,
            ev(2, 20, SubPhase::Response, Some(ping(1, NodeId(2), false, false))),
            &p,
            &mut rng,
        );
        assert_eq!(transmitted(&acts)[0].kind, PacketKind::Drop);

        // The drop-ack arrives in the confirm phase and lands at slot end.
        let drop_ack = Packet {
            kind: PacketKind::DropAck,
            sender: NodeId(1),
            dest: NodeId(2),
            link_formed: false,
            synthesized: false,
            payload: Vec::new(),
        };
        let (st, _) = step_with(
            2,
            st,
            ev(2, 20, SubPhase::SlotEnd, Some(drop_ack)),
            &p,
            &mut rng,
        );
        assert!(matches!(st, NodeState::Searching(_)));
    }

    #[test]
    fn route_end_adopting_candidate_cancels_nothing_upstream() {
        // A candidate answering the seeking ping is adopted even while a
        // drop is pending; the route grew after all.
        let mut rng = rng_for(2);
        let mut e = route_end_state();
        e.drop_pending = true;
        e.sent_ping = true;
        let (st, _) = step(
            2,
            NodeState::RouteEnd(e),
            ev(4, 22, SubPhase::Confirm, Some(ack_from(5, 2))),
            &mut rng,
        );
        assert!(matches!(st, NodeState::Route(_)));
    }

    #[test]
    fn route_end_quits_after_phq_max_quiet_frames() {
        let mut rng = rng_for(2);
        let mut st = NodeState::RouteEnd(route_end_state());
        for frame in 0..proto().phq_max {
            let (s, _) = step(2, st, ev(frame, 20, SubPhase::Response, None), &mut rng);
            st = s;
        }
        assert!(matches!(st, NodeState::Searching(_)));
    }

    #[test]
    fn route_end_without_prev_keeps_beaconing() {
        let mut rng = rng_for(2);
        let mut e = route_end_state();
        e.prev_hop = None;
        let mut st = NodeState::RouteEnd(e);
        for frame in 0..20 {
            let (s, _) = step(2, st, ev(frame, 20, SubPhase::Response, None), &mut rng);
            st = s;
        }
        match st {
            NodeState::RouteEnd(e) => assert_eq!(e.phq, 0),
            other => panic!("expected route end, got {:?}", other.role()),
        }
    }

    // ----- non-route -----

    fn non_route_state(link_seen: bool) -> NonRouteState {
        NonRouteState::new(30, NodeId(4), link_seen, 30, NonRouteMode::Latch)
    }

    #[test]
    fn non_route_reports_when_link_formed_and_due() {
        let mut rng = rng_for(6);
        let st = NodeState::NonRoute(non_route_state(false));
        // Ping with the link bit set makes a report due immediately.
        let (st, _) = step(
            6,
            st,
            ev(10, 30, SubPhase::Response, Some(ping(4, NodeId(5), true, false))),
            &mut rng,
        );
        match &st {
            NodeState::NonRoute(nr) => {
                assert!(nr.armed);
                assert!(nr.pending_report.is_some());
            }
            other => panic!("expected non-route, got {:?}", other.role()),
        }
        let (st, acts) = step(6, st, ev(10, 31, SubPhase::Initiator, None), &mut rng);
        let tx = transmitted(&acts);
        assert_eq!(tx[0].kind, PacketKind::Report);
        assert_eq!(tx[0].dest, NodeId(4));
        assert_eq!(tx[0].payload[0].origin, NodeId(6));

        let (st, _) = step(
            6,
            st,
            ev(10, 31, SubPhase::Confirm, Some(ack_from(4, 6))),
            &mut rng,
        );
        match st {
            NodeState::NonRoute(nr) => {
                assert!(nr.pending_report.is_none());
                assert_eq!(nr.last_report_frame, Some(10));
                assert!(!nr.armed);
            }
            other => panic!("expected non-route, got {:?}", other.role()),
        }
    }

    #[test]
    fn non_route_stays_quiet_before_link_forms() {
        let mut rng = rng_for(6);
        let (st, _) = step(
            6,
            NodeState::NonRoute(non_route_state(false)),
            ev(10, 30, SubPhase::Response, Some(ping(4, NodeId(5), false, false))),
            &mut rng,
        );
        match st {
            NodeState::NonRoute(nr) => assert!(!nr.armed),
            other => panic!("expected non-route, got {:?}", other.role()),
        }
    }

    #[test]
    fn non_route_respects_report_period() {
        let mut rng = rng_for(6);
        let mut nr = non_route_state(true);
        nr.last_report_frame = Some(10);
        let (st, _) = step(
            6,
            NodeState::NonRoute(nr),
            ev(15, 30, SubPhase::Response, Some(ping(4, NodeId(5), true, false))),
            &mut rng,
        );
        match &st {
            NodeState::NonRoute(nr) => assert!(!nr.armed),
            other => panic!("expected non-route, got {:?}", other.role()),
        }
        let (st, _) = step(
            6,
            st,
            ev(20, 30, SubPhase::Response, Some(ping(4, NodeId(5), true, false))),
            &mut rng,
        );
        match st {
            NodeState::NonRoute(nr) => assert!(nr.armed),
            other => panic!("expected non-route, got {:?}", other.role()),
        }
    }

    #[test]
    fn non_route_backs_off_after_unacked_report() {
        let mut rng = rng_for(6);
        let mut nr = non_route_state(true);
        nr.armed = true;
        nr.pending_report = Some(PayloadEntry {
            origin: NodeId(6),
            bytes: 4,
            created_frame: 9,
        });
        let (st, _) = step(
            6,
            NodeState::NonRoute(nr),
            ev(10, 31, SubPhase::Confirm, None),
            &mut rng,
        );
        match st {
            NodeState::NonRoute(nr) => {
                assert!(!nr.armed);
                assert!(nr.pending_report.is_some());
                assert!(nr.report_backoff >= 1);
                assert!(nr.report_backoff <= proto().report_retry_window);
            }
            other => panic!("expected non-route, got {:?}", other.role()),
        }
    }

    #[test]
    fn non_route_releases_latch_when_anchor_reverts_to_seeking() {
        let mut rng = rng_for(6);
        // A ping with no destination means the anchored route node lost its
        // next hop; the latched node must rejoin the search race.
        let (st, acts) = step(
            6,
            NodeState::NonRoute(non_route_state(true)),
            ev(10, 30, SubPhase::Response, Some(ping(4, NodeId::NONE, true, false))),
            &mut rng,
        );
        match st {
            NodeState::Searching(s) => {
                assert!(s.window_start >= 1 && s.window_start <= timing().slots_per_frame);
            }
            other => panic!("expected searching, got {:?}", other.role()),
        }
        assert!(acts
            .iter()
            .any(|a| matches!(a, Action::WakeNextFrameAt(_))));
        assert!(transmitted(&acts).is_empty());
    }

    #[test]
    fn non_route_rescans_after_quiet_frames() {
        let mut rng = rng_for(6);
        let mut st = NodeState::NonRoute(non_route_state(true));
        for frame in 0..proto().rq_max {
            let (s, _) = step(6, st, ev(frame, 30, SubPhase::SlotEnd, None), &mut rng);
            st = s;
        }
        assert!(matches!(st, NodeState::Searching(_)));
    }

    #[test]
    fn non_route_shift_mode_walks_window_with_route_growth() {
        let mut rng = rng_for(6);
        let mut nr = NonRouteState::new(30, NodeId(4), false, 29, NonRouteMode::Shift);
        nr.heard_this_frame = true;
        // Heard something this frame: the window advances by stl.
        let (st, _) = step(
            6,
            NodeState::NonRoute(nr),
            ev(3, 32, SubPhase::SlotEnd, None),
            &mut rng,
        );
        let nr = match st {
            NodeState::NonRoute(nr) => nr,
            other => panic!("expected non-route, got {:?}", other.role()),
        };
        assert_eq!(nr.window_start, 33);
        // Quiet frame: loop back to the remembered start.
        let mut nr = nr;
        nr.heard_this_frame = false;
        let (st, _) = step(
            6,
            NodeState::NonRoute(nr),
            ev(4, 36, SubPhase::SlotEnd, None),
            &mut rng,
        );
        match st {
            NodeState::NonRoute(nr) => assert_eq!(nr.window_start, 29),
            other => panic!("expected non-route, got {:?}", other.role()),
        }
    }

    // ----- end base -----

    #[test]
    fn end_base_anchors_and_acks_seeking_ping() {
        let mut rng = rng_for(10);
        let st = NodeState::EndBase(EndBaseState {
            mode: EndBaseMode::Scanning { window_start: 40 },
        });
        let (st, acts) = step(
            10,
            st,
            ev(8, 42, SubPhase::Response, Some(ping(7, NodeId::NONE, false, false))),
            &mut rng,
        );
        assert_eq!(transmitted(&acts)[0].kind, PacketKind::Ack);
        match st {
            NodeState::EndBase(e) => match e.mode {
                EndBaseMode::Anchored { slot, .. } => assert_eq!(slot, 42),
                other => panic!("expected anchored, got {:?}", other),
            },
            other => panic!("expected end base, got {:?}", other.role()),
        }
    }

    #[test]
    fn end_base_keeps_scanning_past_overheard_route_traffic() {
        let mut rng = rng_for(10);
        let st = NodeState::EndBase(EndBaseState {
            mode: EndBaseMode::Scanning { window_start: 40 },
        });
        let (st, acts) = step(
            10,
            st,
            ev(8, 42, SubPhase::Response, Some(ping(7, NodeId(8), false, false))),
            &mut rng,
        );
        assert!(transmitted(&acts).is_empty());
        match st {
            NodeState::EndBase(e) => {
                assert!(matches!(e.mode, EndBaseMode::Scanning { .. }))
            }
            other => panic!("expected end base, got {:?}", other.role()),
        }
    }

    #[test]
    fn end_base_rescans_after_quiet_anchor() {
        let mut rng = rng_for(10);
        let mut st = NodeState::EndBase(EndBaseState {
            mode: EndBaseMode::Anchored {
                slot: 42,
                quiet: 0,
                heard: false,
            },
        });
        for frame in 0..proto().rq_max {
            let (s, _) = step(10, st, ev(frame, 42, SubPhase::SlotEnd, None), &mut rng);
            st = s;
        }
        match st {
            NodeState::EndBase(e) => {
                assert!(matches!(e.mode, EndBaseMode::Scanning { .. }))
            }
            other => panic!("expected end base, got {:?}", other.role()),
        }
    }

    // ----- roles and wake plans -----

    #[test]
    fn route_roles_cover_four_contiguous_slots() {
        let t = timing();
        let st = NodeState::Route(route_state());
        assert_eq!(roles_at(&st, 20, &t), Some(SlotRole::AnchorListen));
        assert_eq!(roles_at(&st, 21, &t), Some(SlotRole::IdleListen));
        assert_eq!(roles_at(&st, 22, &t), Some(SlotRole::TxPing));
        assert_eq!(roles_at(&st, 23, &t), Some(SlotRole::ReportListen));
        assert_eq!(roles_at(&st, 24, &t), None);
        assert_eq!(roles_at(&st, 19, &t), None);
    }

    #[test]
    fn route_roles_wrap_across_frame_boundary() {
        let t = timing();
        let mut r = route_state();
        r.rx_slot = 399;
        let st = NodeState::Route(r);
        assert_eq!(roles_at(&st, 399, &t), Some(SlotRole::AnchorListen));
        assert_eq!(roles_at(&st, 400, &t), Some(SlotRole::IdleListen));
        assert_eq!(roles_at(&st, 1, &t), Some(SlotRole::TxPing));
        assert_eq!(roles_at(&st, 2, &t), Some(SlotRole::ReportListen));
    }

    #[test]
    fn searching_roles_match_window() {
        let t = timing();
        let st = NodeState::Searching(SearchingState::new(399));
        assert_eq!(roles_at(&st, 399, &t), Some(SlotRole::ScanListen));
        assert_eq!(roles_at(&st, 2, &t), Some(SlotRole::ScanListen));
        assert_eq!(roles_at(&st, 3, &t), None);
    }

    #[test]
    fn wake_plan_matches_roles() {
        let t = timing();
        let mut plan = Vec::new();
        for st in [
            NodeState::OriginBase(OriginBaseState::new()),
            NodeState::Searching(SearchingState::new(17)),
            NodeState::Route(route_state()),
            NodeState::RouteEnd(route_end_state()),
            NodeState::NonRoute(non_route_state(true)),
        ] {
            wake_plan(&st, &t, &mut plan);
            assert!(!plan.is_empty());
            // Every exact role appears in the plan (the plan may hold extra
            // worst-case slots on top).
            for slot in 1..=t.slots_per_frame {
                if roles_at(&st, slot, &t).is_some() {
                    assert!(
                        plan.iter().any(|(s, _)| *s == slot),
                        "slot {} missing from plan of {:?}",
                        slot,
                        st.role()
                    );
                }
            }
        }
    }

    #[test]
    fn dead_nodes_do_nothing() {
        let mut rng = rng_for(9);
        let t = timing();
        let (st, acts) = step(
            9,
            NodeState::Dead,
            ev(0, 1, SubPhase::Response, Some(ping(1, NodeId::NONE, false, false))),
            &mut rng,
        );
        assert!(matches!(st, NodeState::Dead));
        assert!(acts.is_empty());
        assert_eq!(roles_at(&NodeState::Dead, 1, &t), None);
    }
}
