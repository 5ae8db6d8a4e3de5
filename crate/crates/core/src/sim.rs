//! Trace replay: the link model, the departure and event logs, and the
//! behavioral driver. The mesh and hardware modes reuse the same driver with
//! a different engine.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::packet::PacketRecord;
use crate::pifo::{BlockId, LogicalPifoId};
use crate::scalar::{Fixed, TxnScalar};
use crate::tree::{SchedTree, SchedTreeState};
use crate::txn::TxnError;

/// One transmitted packet. `departure_tick` is the tick its transmission
/// starts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Departure {
    pub packet_id: u64,
    pub flow_id: u64,
    pub arrival_tick: u64,
    pub departure_tick: u64,
    pub length_bytes: u32,
}

impl Departure {
    fn of(pkt: &PacketRecord, tick: u64) -> Self {
        Self {
            packet_id: pkt.id,
            flow_id: pkt.flow_id,
            arrival_tick: pkt.arrival,
            departure_tick: tick,
            length_bytes: pkt.length,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Event {
    Drop { tick: u64, packet_id: u64, reason: String },
    /// A resumed walk failed and was completed with last-place ranks.
    Fault { tick: u64, packet_id: u64 },
    /// A shaping release due at `due` could not run this cycle.
    Defer { tick: u64, block: BlockId, due: u64 },
    NonMonotoneRank { tick: u64, block: BlockId, lp: LogicalPifoId, flow: u64 },
    WrapHazard { tick: u64, block: BlockId, rank: u64 },
    HorizonExceeded { tick: u64, buffered: usize },
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Event::Drop { tick, packet_id, reason } => {
                write!(f, "{tick} drop packet={packet_id} reason={reason}")
            }
            Event::Fault { tick, packet_id } => write!(f, "{tick} fault packet={packet_id}"),
            Event::Defer { tick, block, due } => write!(f, "{tick} defer block={block} due={due}"),
            Event::NonMonotoneRank { tick, block, lp, flow } => {
                write!(f, "{tick} non_monotone_rank block={block} lp={lp} flow={flow}")
            }
            Event::WrapHazard { tick, block, rank } => {
                write!(f, "{tick} wrap_hazard block={block} rank={rank}")
            }
            Event::HorizonExceeded { tick, buffered } => {
                write!(f, "{tick} horizon_exceeded buffered={buffered}")
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RunOutput {
    pub departures: Vec<Departure>,
    pub events: Vec<Event>,
    /// Packets were still buffered or not yet arrived at the horizon.
    pub horizon_exceeded: bool,
    /// Longest delay of a shaping release past the tick it was first
    /// deferred.
    pub max_deferral: u64,
}

impl RunOutput {
    pub fn drops(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e, Event::Drop { .. }))
            .count()
    }

    pub fn departure_order(&self) -> Vec<u64> {
        self.departures.iter().map(|d| d.packet_id).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("trace is not sorted by arrival tick at packet {0}")]
    Unsorted(u64),
    #[error("more than one arrival at tick {0}")]
    ArrivalsPerTick(u64),
    #[error("line rate must be positive")]
    BadLineRate,
    #[error("mesh cannot run: {0}")]
    InvalidMesh(String),
    #[error(transparent)]
    Txn(#[from] TxnError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SimConfig {
    /// Bytes per tick.
    pub line_rate: Fixed,
    /// Last tick simulated.
    pub horizon: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            line_rate: Fixed::ONE,
            horizon: u64::MAX,
        }
    }
}

impl SimConfig {
    pub fn with_line_rate(mut self, bytes_per_tick: Fixed) -> Self {
        self.line_rate = bytes_per_tick;
        self
    }

    pub fn with_horizon(mut self, horizon: u64) -> Self {
        self.horizon = horizon;
        self
    }
}

/// Output link: a packet occupies it for `length / rate` ticks from the
/// tick it is dequeued.
#[derive(Clone, Copy, Debug)]
pub struct Link {
    rate: Fixed,
    free_at: Fixed,
}

impl Link {
    pub fn new(rate: Fixed) -> Result<Self, SimError> {
        if rate <= Fixed::ZERO {
            return Err(SimError::BadLineRate);
        }
        Ok(Self {
            rate,
            free_at: Fixed::ZERO,
        })
    }

    pub fn is_free(&self, tick: u64) -> bool {
        self.free_at <= Fixed::from_int(tick as i64)
    }

    /// First tick at which the link is free.
    pub fn next_free(&self) -> u64 {
        self.free_at.ceil_i64().max(0) as u64
    }

    pub fn send(&mut self, tick: u64, length: u32) {
        let busy = Fixed::from_int(length as i64) / self.rate;
        self.free_at = Fixed::from_int(tick as i64) + busy;
    }
}

/// What the driver needs from a scheduler implementation.
pub(crate) trait Engine {
    /// Work done before arrivals at tick `t`. `arrival` is the first packet
    /// arriving this tick; `link_free` says whether a dequeue will follow.
    fn begin_tick(
        &mut self,
        t: u64,
        arrival: Option<&PacketRecord>,
        link_free: bool,
        events: &mut Vec<Event>,
    );
    fn enqueue(&mut self, pkt: PacketRecord, t: u64, events: &mut Vec<Event>);
    /// Work done after arrivals and before the dequeue decision at `t`.
    fn before_dequeue(&mut self, _t: u64, _events: &mut Vec<Event>) {}
    /// Dequeue one packet if the scheduler can produce one at `t`.
    fn dequeue(&mut self, t: u64, events: &mut Vec<Event>) -> Option<PacketRecord>;
    /// Work done after the dequeue at tick `t`.
    fn end_tick(&mut self, _t: u64, _events: &mut Vec<Event>) {}
    /// True when a dequeue could succeed now or once pending internal work
    /// matures.
    fn has_packets(&self) -> bool;
    fn buffered(&self) -> usize;
    /// Earliest tick after `t` at which internal work becomes due, ignoring
    /// the link.
    fn next_internal(&self, t: u64) -> Option<u64>;
    /// Whether a dequeue is possible at `t` apart from the link.
    fn ready(&self, t: u64) -> bool;
    fn max_deferral(&self) -> u64 {
        0
    }
}

/// Replay `trace` through `engine`. Each tick runs releases, then arrivals,
/// then releases again, then at most one dequeue if the link is free. The
/// second release pass lets an element that is eligible on arrival cross its
/// shaper in the same tick.
pub(crate) fn drive<E: Engine>(
    engine: &mut E,
    trace: &[PacketRecord],
    cfg: &SimConfig,
    one_arrival_per_tick: bool,
) -> Result<RunOutput, SimError> {
    for w in trace.windows(2) {
        if w[1].arrival < w[0].arrival {
            return Err(SimError::Unsorted(w[1].id));
        }
        if one_arrival_per_tick && w[1].arrival == w[0].arrival {
            return Err(SimError::ArrivalsPerTick(w[1].arrival));
        }
    }
    let mut link = Link::new(cfg.line_rate)?;
    let mut out = RunOutput::default();
    let Some(first) = trace.first() else {
        return Ok(out);
    };
    let mut t = first.arrival;
    let mut next = 0;
    loop {
        if t > cfg.horizon {
            let buffered = engine.buffered() + (trace.len() - next);
            if buffered > 0 {
                out.horizon_exceeded = true;
                out.events.push(Event::HorizonExceeded {
                    tick: cfg.horizon,
                    buffered,
                });
            }
            break;
        }
        let arrival = trace.get(next).filter(|p| p.arrival == t);
        engine.begin_tick(t, arrival, link.is_free(t), &mut out.events);
        while let Some(p) = trace.get(next).filter(|p| p.arrival == t) {
            engine.enqueue(p.clone(), t, &mut out.events);
            next += 1;
        }
        engine.before_dequeue(t, &mut out.events);
        if link.is_free(t) {
            if let Some(p) = engine.dequeue(t, &mut out.events) {
                link.send(t, p.length);
                out.departures.push(Departure::of(&p, t));
            }
        }
        engine.end_tick(t, &mut out.events);

        let mut wake = trace.get(next).map_or(u64::MAX, |p| p.arrival);
        if let Some(w) = engine.next_internal(t) {
            wake = wake.min(w);
        }
        if engine.has_packets() {
            let mut w = link.next_free().max(t + 1);
            if !engine.ready(w) {
                w = t + 1;
            }
            wake = wake.min(w);
        }
        if wake == u64::MAX {
            break;
        }
        t = wake;
    }
    out.max_deferral = engine.max_deferral();
    Ok(out)
}

/// The behavioral tree model as a driver engine.
struct Behavioral<V> {
    st: SchedTreeState<V>,
    faults: u64,
}

impl<V: TxnScalar> Engine for Behavioral<V> {
    fn begin_tick(&mut self, t: u64, _: Option<&PacketRecord>, _: bool, events: &mut Vec<Event>) {
        self.st.release_shaped(t);
        self.note_faults(t, u64::MAX, events);
    }

    fn enqueue(&mut self, pkt: PacketRecord, t: u64, events: &mut Vec<Event>) {
        let id = pkt.id;
        if let Err(e) = self.st.enqueue_packet(pkt, t) {
            events.push(Event::Drop {
                tick: t,
                packet_id: id,
                reason: e.to_string(),
            });
        }
    }

    fn before_dequeue(&mut self, t: u64, events: &mut Vec<Event>) {
        self.st.release_shaped(t);
        self.note_faults(t, u64::MAX, events);
    }

    fn dequeue(&mut self, t: u64, events: &mut Vec<Event>) -> Option<PacketRecord> {
        if !self.st.can_dequeue() {
            return None;
        }
        let p = self
            .st
            .dequeue_packet(t)
            .expect("root reference chains always end in a packet");
        self.note_faults(t, p.id, events);
        Some(p)
    }

    fn has_packets(&self) -> bool {
        self.st.can_dequeue()
    }

    fn buffered(&self) -> usize {
        self.st.buffered()
    }

    fn next_internal(&self, t: u64) -> Option<u64> {
        self.st.next_release().map(|r| r.max(t + 1))
    }

    fn ready(&self, _t: u64) -> bool {
        true
    }
}

impl<V: TxnScalar> Behavioral<V> {
    fn note_faults(&mut self, t: u64, packet_id: u64, events: &mut Vec<Event>) {
        while self.faults < self.st.faults() {
            self.faults += 1;
            events.push(Event::Fault { tick: t, packet_id });
        }
    }
}

/// Replay a trace through the behavioral tree model.
pub fn run_behavioral(
    tree: &Arc<SchedTree>,
    trace: &[PacketRecord],
    cfg: &SimConfig,
) -> Result<RunOutput, SimError> {
    run_behavioral_with::<Fixed>(tree, trace, cfg)
}

/// As [`run_behavioral`] with transactions computing in `V`.
pub fn run_behavioral_with<V: TxnScalar>(
    tree: &Arc<SchedTree>,
    trace: &[PacketRecord],
    cfg: &SimConfig,
) -> Result<RunOutput, SimError> {
    let mut engine = Behavioral::<V> {
        st: SchedTreeState::new(Arc::clone(tree))?,
        faults: 0,
    };
    drive(&mut engine, trace, cfg, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::TreeSpec;

    fn tree(text: &str) -> Arc<SchedTree> {
        Arc::new(TreeSpec::load(text).unwrap())
    }

    const FIFO: &str = "node Root\n  sched fifo\n";

    #[test]
    fn empty_trace_gives_empty_log() {
        let out = run_behavioral(&tree(FIFO), &[], &SimConfig::default()).unwrap();
        assert_eq!(out, RunOutput::default());
    }

    #[test]
    fn link_spaces_departures_by_transmission_time() {
        let trace: Vec<_> = (0..3).map(|i| PacketRecord::new(i, 0, 0, 10)).collect();
        let cfg = SimConfig::default().with_line_rate(Fixed::from_int(4));
        let out = run_behavioral(&tree(FIFO), &trace, &cfg).unwrap();
        let ticks: Vec<u64> = out.departures.iter().map(|d| d.departure_tick).collect();
        // 10 bytes at 4 bytes/tick: busy 2.5 ticks, and sends start on a tick.
        assert_eq!(ticks, vec![0, 3, 6]);
    }

    #[test]
    fn horizon_flags_leftovers() {
        let trace: Vec<_> = (0..5).map(|i| PacketRecord::new(i, i, 0, 100)).collect();
        let cfg = SimConfig::default().with_horizon(150);
        let out = run_behavioral(&tree(FIFO), &trace, &cfg).unwrap();
        assert!(out.horizon_exceeded);
        assert_eq!(out.departures.len(), 2);
        assert_eq!(
            out.events.last(),
            Some(&Event::HorizonExceeded {
                tick: 150,
                buffered: 3
            })
        );
    }

    #[test]
    fn rejects_unsorted_trace() {
        let trace = vec![PacketRecord::new(0, 5, 0, 1), PacketRecord::new(1, 4, 0, 1)];
        assert_eq!(
            run_behavioral(&tree(FIFO), &trace, &SimConfig::default()),
            Err(SimError::Unsorted(1))
        );
    }

    #[test]
    fn shaped_packets_wait_for_release() {
        let t = tree(
            "node Root\n  sched fifo\nnode Leaf parent=Root\n  sched fifo\n  shaping stop_and_go T=10\n",
        );
        let trace: Vec<_> = (0..4).map(|i| PacketRecord::new(i, i * 4, 0, 1)).collect();
        let cfg = SimConfig::default().with_line_rate(Fixed::from_int(100));
        let out = run_behavioral(&t, &trace, &cfg).unwrap();
        let ticks: Vec<u64> = out.departures.iter().map(|d| d.departure_tick).collect();
        // Arrivals 0, 4, 8 share the frame ending at 10; 12 waits for 20.
        assert_eq!(ticks, vec![10, 11, 12, 20]);
        assert_eq!(out.departure_order(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn drops_are_logged() {
        let t = tree("domain flow_id 0..1\nnode Root\n  match p.flow_id == 0\n  sched fifo\n");
        let trace = vec![PacketRecord::new(0, 0, 0, 1), PacketRecord::new(1, 1, 3, 1)];
        let out = run_behavioral(&t, &trace, &SimConfig::default()).unwrap();
        assert_eq!(out.drops(), 1);
        assert_eq!(out.departure_order(), vec![0]);
        assert!(out.events[0].to_string().starts_with("1 drop packet=1"));
    }
}
