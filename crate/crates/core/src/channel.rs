//! Radio impairments: disc connectivity, stochastic packet loss, and
//! clock drift with guard-time gating.
//!
//! Loss processes run in reception-count space: the gap between
//! consecutive loss events is a number of receptions, drawn so its mean
//! is `1/rate`. That pins the long-run loss fraction to `rate` exactly,
//! regardless of how bursty the traffic is. The engine feeds a single
//! process from the whole network's reception stream; interleaving many
//! receivers keeps one node's back-to-back receptions uncorrelated, the
//! way short independent channel bursts behave.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::protocol::NodeId;
use crate::rng::{substream, Purpose};
use crate::topology::Topology;

/// Disc model: two nodes hear each other iff within `range_km`.
pub fn in_range(a: NodeId, b: NodeId, topo: &Topology) -> bool {
    topo.distance_km(a.0, b.0) <= topo.range_km
}

// ===== Packet loss =====

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossModelKind {
    None,
    /// Independent coin per reception.
    Bernoulli,
    /// Inter-loss gaps uniform on 1..=2*mean-1 receptions.
    UniformGap,
    /// Inter-loss gaps geometric (the discrete exponential).
    ExponentialGap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub model: LossModelKind,
    /// Expected fraction of receptions lost.
    pub rate: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            model: LossModelKind::None,
            rate: 0.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..1.0).contains(&self.rate) {
            return Err(format!("loss rate must be in [0, 1) (got {})", self.rate));
        }
        if self.model != LossModelKind::None && self.rate == 0.0 {
            return Err("loss rate must be positive for a stochastic model".into());
        }
        Ok(())
    }
}

/// Renewal state of one loss sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct LossProcess {
    kind: LossModelKind,
    rate: f64,
    /// Receptions until the next loss (gap models).
    countdown: u64,
}

impl LossProcess {
    pub fn new(cfg: &LossConfig, rng: &mut ChaCha8Rng) -> Self {
        let countdown = match cfg.model {
            LossModelKind::UniformGap | LossModelKind::ExponentialGap => {
                draw_gap(cfg.model, cfg.rate, rng)
            }
            _ => 0,
        };
        LossProcess {
            kind: cfg.model,
            rate: cfg.rate,
            countdown,
        }
    }

    /// Whether this (lone, in-range) reception is lost. Consumes one
    /// reception from the gap countdown.
    pub fn reception_lost(&mut self, rng: &mut ChaCha8Rng) -> bool {
        match self.kind {
            LossModelKind::None => false,
            LossModelKind::Bernoulli => rng.gen_bool(self.rate),
            LossModelKind::UniformGap | LossModelKind::ExponentialGap => {
                self.countdown -= 1;
                if self.countdown == 0 {
                    self.countdown = draw_gap(self.kind, self.rate, rng);
                    true
                } else {
                    false
                }
            }
        }
    }
}

fn draw_gap(kind: LossModelKind, rate: f64, rng: &mut ChaCha8Rng) -> u64 {
    match kind {
        LossModelKind::UniformGap => {
            // Mean (1 + 2m - 1) / 2 = m receptions per loss.
            let m = (1.0 / rate).round().max(1.0) as u64;
            rng.gen_range(1..=2 * m - 1)
        }
        LossModelKind::ExponentialGap => {
            // Geometric on {1, 2, ...} with mean 1/rate.
            let u: f64 = rng.gen();
            let gap = ((1.0 - u).ln() / (1.0 - rate).ln()).ceil();
            (gap as u64).max(1)
        }
        _ => unreachable!("gap draw for a gapless model"),
    }
}

// ===== Clock drift =====

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriftConfig {
    /// Clock error in parts per million; every node drifts at this
    /// magnitude with a per-node random sign.
    pub ppm: f64,
}

impl Default for DriftConfig {
    fn default() -> Self {
        DriftConfig { ppm: 0.0 }
    }
}

impl DriftConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.ppm < 0.0 {
            return Err("drift ppm must be non-negative".into());
        }
        Ok(())
    }
}

/// Per-node clock offsets relative to true time. The origin base station
/// is the network's time reference and never drifts.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftState {
    offsets_ms: Vec<f64>,
    signs: Vec<f64>,
    ppm: f64,
}

impl DriftState {
    pub fn new(cfg: &DriftConfig, n_nodes: u16, origin: NodeId, seed: u64) -> Self {
        let signs = (0..n_nodes)
            .map(|id| {
                if NodeId(id) == origin {
                    0.0
                } else {
                    let mut rng = substream(seed, id, Purpose::Drift);
                    if rng.gen_bool(0.5) {
                        1.0
                    } else {
                        -1.0
                    }
                }
            })
            .collect();
        DriftState {
            offsets_ms: vec![0.0; n_nodes as usize],
            signs,
            ppm: cfg.ppm,
        }
    }

    pub fn is_active(&self) -> bool {
        self.ppm > 0.0
    }

    /// Accrue one frame's worth of drift on every clock.
    pub fn accrue_frame(&mut self, frame_ms: f64) {
        if !self.is_active() {
            return;
        }
        let step = self.ppm * 1e-6 * frame_ms;
        for (off, sign) in self.offsets_ms.iter_mut().zip(&self.signs) {
            *off += sign * step;
        }
    }

    /// Decoding a ping aligns the listener's clock with the sender's.
    pub fn resync(&mut self, listener: NodeId, sender: NodeId) {
        self.offsets_ms[listener.0 as usize] = self.offsets_ms[sender.0 as usize];
    }

    pub fn offset_gap_ms(&self, a: NodeId, b: NodeId) -> f64 {
        (self.offsets_ms[a.0 as usize] - self.offsets_ms[b.0 as usize]).abs()
    }

    /// A scheduled single-slot wake misses the packet once the clocks
    /// disagree by more than the guard time.
    pub fn blocked(&self, listener: NodeId, sender: NodeId, guard_ms: f64) -> bool {
        self.is_active() && self.offset_gap_ms(listener, sender) > guard_ms
    }
}
