//! Cycle-driven simulation of a compiled PIFO mesh.
//!
//! Each block offers one enqueue port and one dequeue port per cycle. A cycle
//! serves, in priority order:
//!
//! 1. the arriving packet's enqueues along its path up to the first shaping
//!    PIFO;
//! 2. the dequeue chain from the root to a leaf when the link is free;
//! 3. shaping releases, each needing the shaping block's dequeue port and the
//!    enqueue ports of every block on the rest of its walk. A release that
//!    cannot get its ports is deferred to a later cycle.
//!
//! Operations are applied release first so that, when nothing is deferred,
//! transactions see packets in the same order as the behavioral model.
//!
//! With `overclock` set the mesh runs 5 cycles per 4 ticks. The extra cycle
//! has no arrival and no dequeue, so it only serves deferred releases.

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use slab::Slab;

use crate::compiler::{check_config, MeshConfig, NextHop, PifoLoc, Popped};
use crate::hw::{HwBlock, HwConfig, HwError, HwEvent};
use crate::packet::PacketRecord;
use crate::pifo::{BlockId, FlowId, LogicalPifoId, PacketHandle, PifoBlock, PifoElement, DEFAULT_BLOCK_CAPACITY};
use crate::scalar::Fixed;
use crate::sim::{drive, Engine, Event, RunOutput, SimConfig, SimError};
use crate::tree::{Hook, NodeId, PifoSlot, PushKind, Resume, SchedTree, Segment, TreeExec};

/// Storage behind one block of the mesh. Elements are addressed by their
/// 32-bit metadata; the mesh keeps what the metadata stands for.
pub trait Backend {
    /// Enter cycle `cycle`.
    fn begin_cycle(&mut self, cycle: u64);
    fn push(&mut self, lp: LogicalPifoId, flow: u64, rank: u64, metadata: u32, cycle: u64) -> Result<(), String>;
    /// Metadata of the element a pop of `lp` at `cycle` would return, or
    /// `None` if that pop would not succeed.
    fn head(&self, lp: LogicalPifoId, cycle: u64) -> Option<u32>;
    fn pop(&mut self, lp: LogicalPifoId, cycle: u64) -> Result<u32, String>;
    /// Elements of `lp`, visible or not.
    fn len_of(&self, lp: LogicalPifoId) -> usize;
    fn has_room(&self, n: usize) -> bool;
    /// True while internal work is still in flight.
    fn busy(&self) -> bool {
        false
    }
    fn drain_events(&mut self, _block: BlockId, _out: &mut Vec<Event>) {}
}

impl Backend for PifoBlock<u64> {
    fn begin_cycle(&mut self, _cycle: u64) {}

    fn push(&mut self, lp: LogicalPifoId, flow: u64, rank: u64, metadata: u32, _cycle: u64) -> Result<(), String> {
        let e = PifoElement::packet(PacketHandle(metadata as u64), rank)
            .with_metadata(metadata)
            .with_flow(FlowId(flow));
        self.enqueue(lp, e).map(|_| ()).map_err(|e| e.to_string())
    }

    fn head(&self, lp: LogicalPifoId, _cycle: u64) -> Option<u32> {
        self.peek(lp).map(|e| e.metadata)
    }

    fn pop(&mut self, lp: LogicalPifoId, _cycle: u64) -> Result<u32, String> {
        self.dequeue(lp).map(|e| e.metadata).map_err(|e| e.to_string())
    }

    fn len_of(&self, lp: LogicalPifoId) -> usize {
        PifoBlock::len_of(self, lp)
    }

    fn has_room(&self, n: usize) -> bool {
        self.free() >= n
    }
}

impl Backend for HwBlock {
    fn begin_cycle(&mut self, cycle: u64) {
        self.hw_cycle(cycle).expect("mesh cycles only move forward");
    }

    fn push(&mut self, lp: LogicalPifoId, flow: u64, rank: u64, metadata: u32, cycle: u64) -> Result<(), String> {
        self.hw_enqueue(flow, lp, rank, metadata, cycle)
            .map_err(|e: HwError| e.to_string())
    }

    fn head(&self, lp: LogicalPifoId, cycle: u64) -> Option<u32> {
        self.head_at(lp, cycle).map(|e| e.metadata)
    }

    fn pop(&mut self, lp: LogicalPifoId, cycle: u64) -> Result<u32, String> {
        self.hw_dequeue(lp, cycle).map(|e| e.metadata).map_err(|e| e.to_string())
    }

    fn len_of(&self, lp: LogicalPifoId) -> usize {
        HwBlock::len_of(self, lp)
    }

    fn has_room(&self, n: usize) -> bool {
        HwBlock::has_room(self, n)
    }

    fn busy(&self) -> bool {
        self.next_visible().is_some()
    }

    fn drain_events(&mut self, block: BlockId, out: &mut Vec<Event>) {
        for e in self.take_events() {
            out.push(match e {
                HwEvent::NonMonotoneRank { tick, lp, flow } => Event::NonMonotoneRank { tick, block, lp, flow },
                HwEvent::WrapHazard { tick, rank } => Event::WrapHazard { tick, block, rank },
                // Stalls cannot arise with one enqueue and one dequeue per
                // cycle; they would show up as later visibility.
                HwEvent::PushStall { .. } => continue,
            });
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BackendKind {
    Behavioral,
    Hardware(HwConfig),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MeshOptions {
    pub backend: BackendKind,
    /// Run 5 cycles per 4 ticks.
    pub overclock: bool,
    /// Element budget of each behavioral block.
    pub block_capacity: usize,
}

impl Default for MeshOptions {
    fn default() -> Self {
        Self {
            backend: BackendKind::Behavioral,
            overclock: false,
            block_capacity: DEFAULT_BLOCK_CAPACITY,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Carried {
    Packet(u64),
    Ref(NodeId),
}

#[derive(Clone, Debug)]
struct Suspended {
    pkt: PacketRecord,
    resume: Resume,
    /// Index of the enqueue segment the walk continues with.
    segment: usize,
    order: u64,
    due: u64,
    /// Tick of the first cycle that had to pass this entry over.
    deferred: Option<u64>,
}

#[derive(Clone, Debug)]
struct Elem {
    carried: Carried,
    hook: Option<Hook<Fixed>>,
    suspended: Option<Box<Suspended>>,
}

/// Port use within one cycle.
#[derive(Clone, Debug, Default)]
struct Ports {
    cycle: u64,
    enq: Vec<bool>,
    deq: Vec<bool>,
    /// Enqueue ports promised to this cycle's arrival.
    arrival: Vec<bool>,
    /// Dequeue ports promised to this cycle's dequeue chain.
    chain: Vec<bool>,
}

/// A running mesh.
pub struct MeshSim<B> {
    cfg: MeshConfig,
    tree: Arc<SchedTree>,
    locs: HashMap<PifoSlot, PifoLoc>,
    /// Position of each block id in `blocks`.
    index: HashMap<BlockId, usize>,
    blocks: Vec<B>,
    exec: TreeExec<Fixed>,
    elems: Slab<Elem>,
    packets: HashMap<u64, PacketRecord>,
    next_handle: u64,
    /// Slots promised to admitted packets, per block.
    reserved: Vec<usize>,
    shaping: Vec<PifoLoc>,
    ports: Ports,
    overclock: bool,
    next_order: u64,
    faults: u64,
    max_deferral: u64,
}

impl MeshSim<PifoBlock<u64>> {
    pub fn behavioral(cfg: &MeshConfig, opts: &MeshOptions) -> Result<Self, SimError> {
        let blocks = cfg
            .blocks
            .iter()
            .map(|b| PifoBlock::with_capacity(b.id, opts.block_capacity, b.pifos.iter().map(|p| p.lp)))
            .collect();
        Self::with_blocks(cfg, blocks, opts.overclock)
    }
}

impl MeshSim<HwBlock> {
    pub fn hardware(cfg: &MeshConfig, hw: HwConfig, opts: &MeshOptions) -> Result<Self, SimError> {
        let blocks = cfg
            .blocks
            .iter()
            .map(|_| HwBlock::new(hw).map_err(|e| SimError::InvalidMesh(e.to_string())))
            .collect::<Result<_, _>>()?;
        Self::with_blocks(cfg, blocks, opts.overclock)
    }
}

impl<B: Backend> MeshSim<B> {
    fn with_blocks(cfg: &MeshConfig, blocks: Vec<B>, overclock: bool) -> Result<Self, SimError> {
        if let Some(d) = check_config(cfg).first() {
            return Err(SimError::InvalidMesh(d.to_string()));
        }
        let tree = Arc::clone(cfg.tree());
        let locs = cfg.locations();
        let index: HashMap<BlockId, usize> = cfg.blocks.iter().enumerate().map(|(i, b)| (b.id, i)).collect();
        let mut shaping: Vec<(NodeId, PifoLoc)> = locs
            .iter()
            .filter_map(|(s, l)| match s {
                PifoSlot::Shaping(n) => Some((*n, *l)),
                PifoSlot::Sched(_) => None,
            })
            .collect();
        shaping.sort();
        let n = blocks.len();
        Ok(Self {
            exec: TreeExec::new(Arc::clone(&tree))?,
            cfg: cfg.clone(),
            tree,
            locs,
            index,
            blocks,
            elems: Slab::new(),
            packets: HashMap::new(),
            next_handle: 0,
            reserved: vec![0; n],
            shaping: shaping.into_iter().map(|(_, l)| l).collect(),
            ports: Ports {
                cycle: u64::MAX,
                enq: vec![false; n],
                deq: vec![false; n],
                arrival: vec![false; n],
                chain: vec![false; n],
            },
            overclock,
            next_order: 0,
            faults: 0,
            max_deferral: 0,
        })
    }

    pub fn config(&self) -> &MeshConfig {
        &self.cfg
    }

    pub fn buffered(&self) -> usize {
        self.packets.len()
    }

    pub fn max_deferral(&self) -> u64 {
        self.max_deferral
    }

    pub fn block(&self, id: BlockId) -> &B {
        &self.blocks[self.index[&id]]
    }

    fn cycle_of(&self, tick: u64) -> u64 {
        if self.overclock {
            tick + tick / 4
        } else {
            tick
        }
    }

    fn bi(&self, loc: PifoLoc) -> usize {
        self.index[&loc.block]
    }

    fn enter_cycle(&mut self, cycle: u64) {
        for b in &mut self.blocks {
            b.begin_cycle(cycle);
        }
        let p = &mut self.ports;
        p.cycle = cycle;
        for v in [&mut p.enq, &mut p.deq, &mut p.arrival, &mut p.chain] {
            v.iter_mut().for_each(|x| *x = false);
        }
    }

    fn use_enq(&mut self, b: usize) {
        assert!(
            !self.ports.enq[b],
            "second enqueue on block {b} in cycle {}",
            self.ports.cycle
        );
        self.ports.enq[b] = true;
    }

    fn use_deq(&mut self, b: usize) {
        assert!(
            !self.ports.deq[b],
            "second dequeue on block {b} in cycle {}",
            self.ports.cycle
        );
        self.ports.deq[b] = true;
    }

    fn root_loc(&self) -> PifoLoc {
        self.locs[&PifoSlot::Sched(self.tree.root())]
    }

    fn root_len(&self) -> usize {
        let root = self.root_loc();
        self.blocks[self.bi(root)].len_of(root.lp)
    }

    /// Blocks the enqueue segments of `leaf` from index `from` on touch.
    fn segment_blocks(&self, leaf: NodeId, from: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self.cfg.enqueue[&leaf][from..]
            .iter()
            .flatten()
            .map(|l| self.bi(*l))
            .collect();
        out.sort();
        out.dedup();
        out
    }

    /// Start the cycle for tick `t`: promise ports to the arrival and the
    /// dequeue chain, then run whatever releases still fit.
    pub fn begin(&mut self, t: u64, arrival: Option<&PacketRecord>, link_free: bool, events: &mut Vec<Event>) {
        let cycle = self.cycle_of(t);
        self.enter_cycle(cycle);
        if let Some(p) = arrival {
            if let Ok(leaf) = self.tree.leaf_for(p) {
                for l in &self.cfg.enqueue[&leaf][0] {
                    let b = self.bi(*l);
                    self.ports.arrival[b] = true;
                }
            }
        }
        if link_free && self.root_len() > 0 {
            for n in self.tree.nodes() {
                let b = self.bi(self.locs[&PifoSlot::Sched(n.id)]);
                self.ports.chain[b] = true;
            }
        }
        self.releases(t, events);
    }

    /// Extra cycle after tick `t` when overclocked.
    pub fn end(&mut self, t: u64, events: &mut Vec<Event>) {
        if self.overclock && t % 4 == 3 {
            self.enter_cycle(self.cycle_of(t) + 1);
            self.releases(t, events);
        }
    }

    /// Shaping heads due at `t`, oldest first.
    fn due(&self, t: u64) -> Vec<(u64, u64, PifoLoc, u32)> {
        let mut out = Vec::new();
        for &loc in &self.shaping {
            let block = &self.blocks[self.bi(loc)];
            let Some(tok) = block.head(loc.lp, self.ports.cycle) else {
                continue;
            };
            let s = self.elems[tok as usize].suspended.as_ref().expect("shaping entry");
            if s.due <= t {
                out.push((s.due, s.order, loc, tok));
            }
        }
        out.sort();
        out
    }

    fn releases(&mut self, t: u64, events: &mut Vec<Event>) {
        for (due, _, loc, tok) in self.due(t) {
            let sb = self.bi(loc);
            let s = self.elems[tok as usize].suspended.as_ref().unwrap();
            let need = self.segment_blocks(s.resume.leaf, s.segment);
            let blocked = self.ports.deq[sb]
                || self.ports.chain[sb]
                || need.iter().any(|&b| self.ports.enq[b] || self.ports.arrival[b]);
            if blocked {
                let s = self.elems[tok as usize].suspended.as_mut().unwrap();
                if s.deferred.is_none() {
                    s.deferred = Some(t);
                    events.push(Event::Defer {
                        tick: t,
                        block: loc.block,
                        due,
                    });
                }
                continue;
            }
            self.use_deq(sb);
            let cycle = self.ports.cycle;
            let got = self.blocks[sb].pop(loc.lp, cycle).expect("head was poppable");
            debug_assert_eq!(got, tok);
            self.blocks[sb].drain_events(loc.block, events);
            let elem = self.elems.remove(tok as usize);
            let mut s = *elem.suspended.unwrap();
            let parent = self.tree.node(s.resume.leaf).parent;
            debug_assert!(parent.is_some());
            let Carried::Ref(node) = elem.carried else {
                unreachable!("shaping entries carry references")
            };
            debug_assert!(matches!(
                self.cfg.next_hop.get(&(loc, Popped::Ref(self.locs[&PifoSlot::Sched(node)].lp))),
                Some(NextHop::EnqueueTo(_))
            ));
            if let Some(first) = s.deferred {
                self.max_deferral = self.max_deferral.max(t - first);
            }
            let seg = match self.exec.run_segment(&mut s.pkt, s.resume, t) {
                Ok(seg) => seg,
                Err(_) => {
                    self.faults += 1;
                    events.push(Event::Fault {
                        tick: t,
                        packet_id: s.pkt.id,
                    });
                    self.exec.fallback_segment(s.resume)
                }
            };
            if seg.suspend.is_none() {
                // A fallback walk skips shaping PIFOs; give back what they
                // had reserved.
                let mut left = vec![0usize; self.blocks.len()];
                for l in self.cfg.enqueue[&s.resume.leaf][s.segment..].iter().flatten() {
                    left[self.bi(*l)] += 1;
                }
                for p in &seg.pushes {
                    left[self.bi(self.locs[&p.slot])] -= 1;
                }
                for (b, n) in left.into_iter().enumerate() {
                    self.reserved[b] -= n;
                }
            }
            self.apply(seg, None, &s.pkt, s.segment + 1, s.order, events);
        }
    }

    /// Push a segment's elements. `handle` is the packet handle for a leaf
    /// push.
    fn apply(
        &mut self,
        seg: Segment<Fixed>,
        handle: Option<u64>,
        pkt: &PacketRecord,
        next_segment: usize,
        order: u64,
        events: &mut Vec<Event>,
    ) {
        let cycle = self.ports.cycle;
        let last = seg.pushes.len().saturating_sub(1);
        for (i, push) in seg.pushes.into_iter().enumerate() {
            let loc = self.locs[&push.slot];
            let b = self.bi(loc);
            self.use_enq(b);
            self.reserved[b] -= 1;
            let (carried, flow) = match push.kind {
                PushKind::Packet => (Carried::Packet(handle.expect("leaf push carries the packet")), pkt.flow_id),
                PushKind::Ref(child) => (Carried::Ref(child), child.0 as u64),
            };
            let suspended = match seg.suspend {
                Some(resume) if i == last => Some(Box::new(Suspended {
                    pkt: pkt.clone(),
                    resume,
                    segment: next_segment,
                    order,
                    due: push.rank,
                    deferred: None,
                })),
                _ => None,
            };
            let tok = self.elems.insert(Elem {
                carried,
                hook: push.hook,
                suspended,
            }) as u32;
            self.blocks[b]
                .push(loc.lp, flow, push.rank, tok, cycle)
                .expect("room was reserved for every push");
            self.blocks[b].drain_events(loc.block, events);
        }
    }

    /// Admit and enqueue an arriving packet.
    pub fn enqueue(&mut self, mut pkt: PacketRecord, t: u64, events: &mut Vec<Event>) {
        let id = pkt.id;
        let drop = |events: &mut Vec<Event>, reason: String| {
            events.push(Event::Drop {
                tick: t,
                packet_id: id,
                reason,
            })
        };
        let leaf = match self.exec.classify(&pkt) {
            Ok(l) => l,
            Err(e) => return drop(events, e.to_string()),
        };
        let mut need = vec![0usize; self.blocks.len()];
        for l in self.cfg.enqueue[&leaf].iter().flatten() {
            need[self.bi(*l)] += 1;
        }
        for (b, &n) in need.iter().enumerate() {
            if n > 0 && !self.blocks[b].has_room(self.reserved[b] + n) {
                return drop(events, format!("block {} is full", self.cfg.blocks[b].id));
            }
        }
        let seg = match self.exec.run_segment(&mut pkt, Resume { leaf, pos: 0 }, t) {
            Ok(s) => s,
            Err(e) => return drop(events, e.to_string()),
        };
        for (b, n) in need.into_iter().enumerate() {
            self.reserved[b] += n;
        }
        let handle = self.next_handle;
        self.next_handle += 1;
        let order = self.next_order;
        self.next_order += 1;
        self.apply(seg, Some(handle), &pkt, 1, order, events);
        self.packets.insert(handle, pkt);
    }

    /// Run the dequeue chain if every hop can pop this cycle.
    pub fn dequeue(&mut self, t: u64, events: &mut Vec<Event>) -> Option<PacketRecord> {
        let cycle = self.ports.cycle;
        debug_assert_eq!(cycle, self.cycle_of(t));
        let mut chain = Vec::new();
        let mut loc = self.root_loc();
        loop {
            let tok = self.blocks[self.bi(loc)].head(loc.lp, cycle)?;
            chain.push((loc, tok));
            match self.elems[tok as usize].carried {
                Carried::Packet(_) => break,
                Carried::Ref(child) => {
                    let key = (loc, Popped::Ref(self.locs[&PifoSlot::Sched(child)].lp));
                    match self.cfg.next_hop.get(&key) {
                        Some(NextHop::DequeueFrom(next)) => loc = *next,
                        other => panic!("next hop for {key:?} is {other:?}"),
                    }
                }
            }
        }
        let mut out = None;
        let mut faulted = false;
        for (loc, tok) in chain {
            let b = self.bi(loc);
            self.use_deq(b);
            let got = self.blocks[b].pop(loc.lp, cycle).expect("head was poppable");
            debug_assert_eq!(got, tok);
            self.blocks[b].drain_events(loc.block, events);
            let elem = self.elems.remove(tok as usize);
            let node = match self.cfg.hosted(loc) {
                Some(h) => h.node,
                None => unreachable!("chain only visits hosted PIFOs"),
            };
            if let Some(h) = &elem.hook {
                if self.exec.fire_hook(node, h, t).is_err() {
                    self.faults += 1;
                    faulted = true;
                }
            }
            if let Carried::Packet(h) = elem.carried {
                out = Some(self.packets.remove(&h).expect("buffered packet"));
            }
        }
        if let (true, Some(p)) = (faulted, &out) {
            events.push(Event::Fault { tick: t, packet_id: p.id });
        }
        out
    }

    fn next_due(&self) -> Option<u64> {
        self.shaping
            .iter()
            .filter_map(|&loc| {
                let block = &self.blocks[self.bi(loc)];
                // Peek far ahead so a head held by the hardware gap counts.
                let tok = block.head(loc.lp, u64::MAX)?;
                Some(self.elems[tok as usize].suspended.as_ref()?.due)
            })
            .min()
    }
}

/// Shaping entries still pending across the mesh, for tests.
impl<B: Backend> MeshSim<B> {
    pub fn pending_shaping(&self) -> usize {
        self.shaping
            .iter()
            .map(|&loc| self.blocks[self.bi(loc)].len_of(loc.lp))
            .sum()
    }
}

impl<B: Backend> Engine for MeshSim<B> {
    fn begin_tick(&mut self, t: u64, arrival: Option<&PacketRecord>, link_free: bool, events: &mut Vec<Event>) {
        self.begin(t, arrival, link_free, events);
    }

    fn enqueue(&mut self, pkt: PacketRecord, t: u64, events: &mut Vec<Event>) {
        MeshSim::enqueue(self, pkt, t, events);
    }

    fn before_dequeue(&mut self, t: u64, events: &mut Vec<Event>) {
        self.releases(t, events);
    }

    fn dequeue(&mut self, t: u64, events: &mut Vec<Event>) -> Option<PacketRecord> {
        MeshSim::dequeue(self, t, events)
    }

    fn end_tick(&mut self, t: u64, events: &mut Vec<Event>) {
        self.end(t, events);
    }

    fn has_packets(&self) -> bool {
        self.root_len() > 0
    }

    fn buffered(&self) -> usize {
        self.packets.len()
    }

    fn next_internal(&self, t: u64) -> Option<u64> {
        let mut next = self.next_due().map(|d| d.max(t + 1));
        if self.blocks.iter().any(Backend::busy) {
            next = Some(t + 1);
        }
        next
    }

    fn ready(&self, t: u64) -> bool {
        let cycle = self.cycle_of(t);
        let mut loc = self.root_loc();
        let mut seen = HashSet::new();
        loop {
            if !seen.insert(loc) {
                return false;
            }
            let Some(tok) = self.blocks[self.bi(loc)].head(loc.lp, cycle) else {
                return false;
            };
            match self.elems[tok as usize].carried {
                Carried::Packet(_) => return true,
                Carried::Ref(child) => {
                    let key = (loc, Popped::Ref(self.locs[&PifoSlot::Sched(child)].lp));
                    match self.cfg.next_hop.get(&key) {
                        Some(NextHop::DequeueFrom(next)) => loc = *next,
                        _ => return false,
                    }
                }
            }
        }
    }

    fn max_deferral(&self) -> u64 {
        self.max_deferral
    }
}

/// Replay a trace through a compiled mesh. At most one packet may arrive per
/// tick.
pub fn run_mesh(
    cfg: &MeshConfig,
    trace: &[PacketRecord],
    sim: &SimConfig,
    opts: &MeshOptions,
) -> Result<RunOutput, SimError> {
    match opts.backend {
        BackendKind::Behavioral => {
            let mut m = MeshSim::behavioral(cfg, opts)?;
            drive(&mut m, trace, sim, true)
        }
        BackendKind::Hardware(hw) => {
            let mut m = MeshSim::hardware(cfg, hw, opts)?;
            drive(&mut m, trace, sim, true)
        }
    }
}
