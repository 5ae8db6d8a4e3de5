//! Micro-architectural model of one PIFO block: a flow scheduler holding the
//! head element of every backlogged flow in a sorted array, and a rank store
//! holding the rest of each flow in linked-list FIFOs.
//!
//! Timing, in cycles:
//! * a push into the flow scheduler takes two cycles, so an element pushed at
//!   `t` can be popped from `t + 2`;
//! * a dequeue pops the flow's head and, if the flow is still backlogged,
//!   reads its next element from the rank store and reinserts it, visible
//!   from `t + 3`;
//! * hence a logical PIFO may be dequeued at most once every 3 cycles, while
//!   dequeues to distinct logical PIFOs may happen every cycle.
//!
//! The array is ordered by `(rank, seq)` across all logical PIFOs. `seq` is the
//! element's enqueue order and travels with it through the rank store, so
//! ties break exactly as in a behavioral PIFO.
//!
//! Ranks are kept at full width. `rank_bits` is the width real hardware
//! would store; an enqueue whose rank is at least half that range away from
//! the current minimum raises a wrap hazard, since a wrapping comparator
//! would misorder it.

use std::collections::HashMap;

use thiserror::Error;

use crate::pifo::LogicalPifoId;

/// Flow-scheduler size that still meets timing.
pub const MAX_FLOWS_LIMIT: usize = 2048;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HwConfig {
    /// Flow-scheduler entries.
    pub max_flows: usize,
    pub rank_store_capacity: usize,
    pub rank_bits: u32,
    /// Cycles from push issue until the element can be popped.
    pub push_latency: u64,
    /// Minimum cycles between dequeues of one logical PIFO.
    pub dequeue_gap: u64,
}

impl Default for HwConfig {
    fn default() -> Self {
        Self {
            max_flows: 1024,
            rank_store_capacity: 65_536,
            rank_bits: 16,
            push_latency: 2,
            dequeue_gap: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum HwError {
    #[error("logical PIFO {lp} dequeued at cycle {tick}, last dequeue at {last}")]
    DequeueTooSoon { lp: LogicalPifoId, last: u64, tick: u64 },
    #[error("logical PIFO {0} has no poppable element")]
    EmptyLogicalPifo(LogicalPifoId),
    #[error("flow scheduler is full")]
    FlowTableFull,
    #[error("rank store is full")]
    RankStoreFull,
    #[error("second enqueue in cycle {0}")]
    EnqueueBudget(u64),
    #[error("second dequeue in cycle {0}")]
    DequeueBudget(u64),
    #[error("cycle {tick} is before cycle {now}")]
    TimeWentBack { tick: u64, now: u64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum HwEvent {
    /// A flow's arriving rank is below a rank it already has resident; the
    /// element leaves in FIFO order within the flow, not in rank order.
    NonMonotoneRank { tick: u64, lp: LogicalPifoId, flow: u64 },
    WrapHazard { tick: u64, rank: u64 },
    /// A push found both push slots of its cycle taken and was issued a
    /// cycle later.
    PushStall { tick: u64 },
}

/// An element as stored in the block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HwElement {
    pub flow: u64,
    pub lp: LogicalPifoId,
    pub rank: u64,
    pub metadata: u32,
    pub seq: u64,
}

impl HwElement {
    fn key(&self) -> (u64, u64) {
        (self.rank, self.seq)
    }
}

const NIL: u32 = u32::MAX;

#[derive(Clone, Copy, Debug, Default)]
struct Fifo {
    head: u32,
    tail: u32,
    count: u32,
}

/// SRAM bank of per-flow FIFOs sharing one pool of entries through a free
/// list.
#[derive(Clone, Debug)]
struct RankStore {
    rank: Vec<u64>,
    seq: Vec<u64>,
    meta: Vec<u32>,
    next: Vec<u32>,
    free_head: u32,
    free: usize,
}

impl RankStore {
    fn new(capacity: usize) -> Self {
        let next = (0..capacity as u32)
            .map(|i| if i + 1 < capacity as u32 { i + 1 } else { NIL })
            .collect();
        Self {
            rank: vec![0; capacity],
            seq: vec![0; capacity],
            meta: vec![0; capacity],
            next,
            free_head: if capacity > 0 { 0 } else { NIL },
            free: capacity,
        }
    }

    fn capacity(&self) -> usize {
        self.rank.len()
    }

    fn push_back(&mut self, q: &mut Fifo, e: &HwElement) -> Result<(), HwError> {
        let i = self.free_head;
        if i == NIL {
            return Err(HwError::RankStoreFull);
        }
        let iu = i as usize;
        self.free_head = self.next[iu];
        self.free -= 1;
        self.rank[iu] = e.rank;
        self.seq[iu] = e.seq;
        self.meta[iu] = e.metadata;
        self.next[iu] = NIL;
        if q.count == 0 {
            q.head = i;
        } else {
            self.next[q.tail as usize] = i;
        }
        q.tail = i;
        q.count += 1;
        Ok(())
    }

    fn pop_front(&mut self, q: &mut Fifo) -> Option<(u64, u64, u32)> {
        if q.count == 0 {
            return None;
        }
        let i = q.head as usize;
        q.head = self.next[i];
        q.count -= 1;
        self.next[i] = self.free_head;
        self.free_head = i as u32;
        self.free += 1;
        Some((self.rank[i], self.seq[i], self.meta[i]))
    }
}

#[derive(Clone, Copy, Debug, Default)]
struct FlowState {
    /// Head is in the flow scheduler or in flight towards it.
    head_resident: bool,
    queue: Fifo,
    /// Rank of the most recent resident element.
    last_rank: u64,
}

/// One PIFO block as a flow scheduler plus rank store.
#[derive(Clone, Debug)]
pub struct HwBlock {
    cfg: HwConfig,
    /// Visible heads, sorted by `(rank, seq)`.
    sched: Vec<HwElement>,
    /// Pushes in the pipeline: `(visible_at, element)`.
    in_flight: Vec<(u64, HwElement)>,
    store: RankStore,
    flows: HashMap<(u64, LogicalPifoId), FlowState>,
    resident_flows: usize,
    last_dequeue: HashMap<LogicalPifoId, u64>,
    /// Push slots used per issue cycle, for the two-pushes-per-cycle limit.
    push_slots: HashMap<u64, u8>,
    now: u64,
    enq_at: Option<u64>,
    deq_at: Option<u64>,
    next_seq: u64,
    elements: usize,
    events: Vec<HwEvent>,
}

impl HwBlock {
    pub fn new(cfg: HwConfig) -> Result<Self, HwError> {
        if cfg.max_flows == 0 || cfg.max_flows > MAX_FLOWS_LIMIT {
            return Err(HwError::InvalidConfig(format!(
                "max_flows must be in 1..={MAX_FLOWS_LIMIT}"
            )));
        }
        if !(2..=64).contains(&cfg.rank_bits) || cfg.push_latency == 0 || cfg.dequeue_gap == 0 {
            return Err(HwError::InvalidConfig("bad rank width or timing".into()));
        }
        if cfg.rank_store_capacity >= NIL as usize {
            return Err(HwError::InvalidConfig("rank store too large".into()));
        }
        Ok(Self {
            cfg,
            sched: Vec::with_capacity(cfg.max_flows),
            in_flight: Vec::new(),
            store: RankStore::new(cfg.rank_store_capacity),
            flows: HashMap::new(),
            resident_flows: 0,
            last_dequeue: HashMap::new(),
            push_slots: HashMap::new(),
            now: 0,
            enq_at: None,
            deq_at: None,
            next_seq: 0,
            elements: 0,
            events: Vec::new(),
        })
    }

    pub fn config(&self) -> &HwConfig {
        &self.cfg
    }

    /// Advance to cycle `tick`: pushes whose pipeline has finished become
    /// visible.
    pub fn hw_cycle(&mut self, tick: u64) -> Result<(), HwError> {
        if tick < self.now {
            return Err(HwError::TimeWentBack { tick, now: self.now });
        }
        if tick > self.now {
            self.push_slots.retain(|&c, _| c >= tick);
        }
        self.now = tick;
        if self.in_flight.iter().any(|&(at, _)| at <= tick) {
            let mut i = 0;
            while i < self.in_flight.len() {
                if self.in_flight[i].0 <= tick {
                    let (_, e) = self.in_flight.swap_remove(i);
                    let pos = self.sched.partition_point(|x| x.key() < e.key());
                    self.sched.insert(pos, e);
                } else {
                    i += 1;
                }
            }
        }
        debug_assert!(self.sched.len() <= self.cfg.max_flows);
        Ok(())
    }

    /// Issue a push into the flow scheduler no earlier than `issue`. At most
    /// two pushes are issued per cycle.
    fn issue_push(&mut self, mut issue: u64, e: HwElement, extra_latency: u64) {
        loop {
            let used = self.push_slots.entry(issue).or_insert(0);
            if *used < 2 {
                *used += 1;
                break;
            }
            self.events.push(HwEvent::PushStall { tick: issue });
            issue += 1;
        }
        let at = issue + self.cfg.push_latency + extra_latency;
        self.in_flight.push((at, e));
    }

    /// Enqueue an element for `flow` into logical PIFO `lp` at cycle `tick`.
    ///
    /// The first element of a flow bypasses the rank store and goes straight
    /// to the flow scheduler; later ones are appended to the flow's FIFO.
    pub fn hw_enqueue(
        &mut self,
        flow: u64,
        lp: LogicalPifoId,
        rank: u64,
        metadata: u32,
        tick: u64,
    ) -> Result<(), HwError> {
        self.hw_cycle(tick)?;
        if self.enq_at == Some(tick) {
            return Err(HwError::EnqueueBudget(tick));
        }
        let mut st = self.flows.get(&(flow, lp)).copied().unwrap_or_default();
        if !st.head_resident && self.resident_flows >= self.cfg.max_flows {
            return Err(HwError::FlowTableFull);
        }
        let e = HwElement {
            flow,
            lp,
            rank,
            metadata,
            seq: self.next_seq,
        };
        self.check_wrap(rank, tick);
        if st.head_resident {
            self.store.push_back(&mut st.queue, &e)?;
            if rank < st.last_rank {
                self.events.push(HwEvent::NonMonotoneRank { tick, lp, flow });
            }
        } else {
            st.head_resident = true;
            self.resident_flows += 1;
            // A reinsert issued this cycle has priority for the push slots.
            self.issue_push(tick, e, 0);
        }
        st.last_rank = rank;
        self.flows.insert((flow, lp), st);
        self.next_seq += 1;
        self.elements += 1;
        self.enq_at = Some(tick);
        Ok(())
    }

    fn check_wrap(&mut self, rank: u64, tick: u64) {
        let min = self
            .sched
            .first()
            .map(|e| e.rank)
            .into_iter()
            .chain(self.in_flight.iter().map(|(_, e)| e.rank))
            .min();
        let half = 1u64 << (self.cfg.rank_bits - 1);
        if let Some(m) = min {
            if rank.abs_diff(m) >= half {
                self.events.push(HwEvent::WrapHazard { tick, rank });
            }
        }
    }

    /// Whether `lp` may be dequeued at `tick` under the same-PIFO gap.
    pub fn gap_ok(&self, lp: LogicalPifoId, tick: u64) -> bool {
        self.last_dequeue
            .get(&lp)
            .is_none_or(|&last| tick >= last + self.cfg.dequeue_gap)
    }

    /// The element a dequeue of `lp` at the current cycle would return.
    pub fn head(&self, lp: LogicalPifoId) -> Option<&HwElement> {
        self.sched.iter().find(|e| e.lp == lp)
    }

    /// The element a dequeue of `lp` at cycle `tick` would return, counting
    /// pushes that will have completed by then; `None` if that dequeue
    /// would fail.
    pub fn head_at(&self, lp: LogicalPifoId, tick: u64) -> Option<&HwElement> {
        if !self.gap_ok(lp, tick) {
            return None;
        }
        let landed = self
            .in_flight
            .iter()
            .filter(|(at, e)| *at <= tick && e.lp == lp)
            .map(|(_, e)| e);
        self.head(lp).into_iter().chain(landed).min_by_key(|e| e.key())
    }

    /// Pop the minimum-rank visible element of `lp` at cycle `tick`.
    pub fn hw_dequeue(&mut self, lp: LogicalPifoId, tick: u64) -> Result<HwElement, HwError> {
        self.hw_cycle(tick)?;
        if self.deq_at == Some(tick) {
            return Err(HwError::DequeueBudget(tick));
        }
        if let Some(&last) = self.last_dequeue.get(&lp) {
            if tick < last + self.cfg.dequeue_gap {
                return Err(HwError::DequeueTooSoon { lp, last, tick });
            }
        }
        let i = self
            .sched
            .iter()
            .position(|e| e.lp == lp)
            .ok_or(HwError::EmptyLogicalPifo(lp))?;
        let e = self.sched.remove(i);
        let key = (e.flow, lp);
        let mut st = self.flows[&key];
        match self.store.pop_front(&mut st.queue) {
            Some((rank, seq, metadata)) => {
                let next = HwElement {
                    flow: e.flow,
                    lp,
                    rank,
                    metadata,
                    seq,
                };
                // Pop (2 cycles) then rank-store read (1 cycle); the push
                // slot is taken in the cycle after the pop starts.
                let extra = self.cfg.dequeue_gap.saturating_sub(1 + self.cfg.push_latency);
                self.issue_push(tick + 1, next, extra);
                self.flows.insert(key, st);
            }
            None => {
                self.resident_flows -= 1;
                self.flows.remove(&key);
            }
        }
        self.elements -= 1;
        self.deq_at = Some(tick);
        self.last_dequeue.insert(lp, tick);
        Ok(e)
    }

    /// Elements held, including pushes in flight and rank-store entries.
    pub fn len(&self) -> usize {
        self.elements
    }

    pub fn is_empty(&self) -> bool {
        self.elements == 0
    }

    /// Elements of `lp` held anywhere in the block.
    pub fn len_of(&self, lp: LogicalPifoId) -> usize {
        self.flows
            .iter()
            .filter(|((_, l), _)| *l == lp)
            .map(|(_, st)| st.queue.count as usize + 1)
            .sum()
    }

    pub fn flow_scheduler_len(&self) -> usize {
        self.sched.len()
    }

    pub fn resident_flows(&self) -> usize {
        self.resident_flows
    }

    pub fn rank_store_used(&self) -> usize {
        self.store.capacity() - self.store.free
    }

    /// Rank-store entries in use plus free entries; always the capacity.
    pub fn rank_store_accounted(&self) -> usize {
        let used: usize = self.flows.values().map(|s| s.queue.count as usize).sum();
        let mut free = 0;
        let mut i = self.store.free_head;
        while i != NIL {
            free += 1;
            i = self.store.next[i as usize];
        }
        used + free
    }

    /// Room for `n` more elements whichever path they take.
    pub fn has_room(&self, n: usize) -> bool {
        self.resident_flows + n <= self.cfg.max_flows && self.store.free >= n
    }

    /// Earliest pending pipeline completion after the current cycle.
    pub fn next_visible(&self) -> Option<u64> {
        self.in_flight.iter().map(|&(at, _)| at).min()
    }

    pub fn take_events(&mut self) -> Vec<HwEvent> {
        std::mem::take(&mut self.events)
    }
}
