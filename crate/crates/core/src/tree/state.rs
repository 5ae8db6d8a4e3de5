use std::collections::HashMap;
use std::sync::Arc;

use slab::Slab;
use thiserror::Error;

use super::{ClassifyError, Hook, NodeId, PifoSlot, PushKind, Resume, SchedTree, Segment, TreeExec};
use crate::packet::PacketRecord;
use crate::pifo::{
    BlockId, ElementKind, FlowId, LogicalPifoId, PacketHandle, PifoBlock, PifoElement, PifoError,
    DEFAULT_BLOCK_CAPACITY,
};
use crate::scalar::{Fixed, TxnScalar};
use crate::txn::TxnError;

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum EnqueueError {
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error(transparent)]
    Capacity(#[from] PifoError),
    #[error(transparent)]
    Txn(#[from] TxnError),
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum DequeueError {
    #[error("root PIFO is empty")]
    EmptyPifo,
    #[error("reference to empty PIFO of node {0}")]
    BrokenChain(NodeId),
}

/// A walk stopped at a shaping node.
#[derive(Clone, Debug)]
struct Suspended {
    pkt: PacketRecord,
    resume: Resume,
    /// Global enqueue order, breaking ties between shaping PIFOs.
    order: u64,
    /// Capacity still held for the rest of the walk.
    reserved: usize,
}

#[derive(Clone, Debug)]
enum Side<V> {
    Hook(Hook<V>),
    Suspended(Suspended),
}

const NO_SIDE: u32 = u32::MAX;

/// Behavioral model of a scheduling tree. All logical PIFOs share one block:
/// node `i`'s scheduling PIFO is logical PIFO `i` and its shaping PIFO is
/// `n + i` for a tree of `n` nodes.
///
/// Capacity for a packet's whole walk is reserved when it arrives, so a
/// suspended walk never fails for lack of space when it resumes.
#[derive(Clone, Debug)]
pub struct SchedTreeState<V = Fixed> {
    exec: TreeExec<V>,
    block: PifoBlock<u64>,
    packets: HashMap<u64, PacketRecord>,
    next_handle: u64,
    side: Slab<Side<V>>,
    reserved: usize,
    next_order: u64,
    drops: u64,
    faults: u64,
    pending_shaping: usize,
}

impl<V: TxnScalar> SchedTreeState<V> {
    pub fn new(tree: Arc<SchedTree>) -> Result<Self, TxnError> {
        Self::with_capacity(tree, DEFAULT_BLOCK_CAPACITY)
    }

    pub fn with_capacity(tree: Arc<SchedTree>, capacity: usize) -> Result<Self, TxnError> {
        let n = tree.len();
        let mut lps: Vec<LogicalPifoId> = (0..n).map(|i| LogicalPifoId(i as u32)).collect();
        for node in tree.nodes() {
            if node.shaping.is_some() {
                lps.push(LogicalPifoId((n + node.id.0) as u32));
            }
        }
        Ok(Self {
            exec: TreeExec::new(tree)?,
            block: PifoBlock::with_capacity(BlockId(0), capacity, lps),
            packets: HashMap::new(),
            next_handle: 0,
            side: Slab::new(),
            reserved: 0,
            next_order: 0,
            drops: 0,
            faults: 0,
            pending_shaping: 0,
        })
    }

    pub fn tree(&self) -> &Arc<SchedTree> {
        self.exec.tree()
    }

    pub fn exec(&self) -> &TreeExec<V> {
        &self.exec
    }

    pub fn block(&self) -> &PifoBlock<u64> {
        &self.block
    }

    pub fn sched_lp(&self, node: NodeId) -> LogicalPifoId {
        LogicalPifoId(node.0 as u32)
    }

    pub fn shaping_lp(&self, node: NodeId) -> LogicalPifoId {
        LogicalPifoId((self.tree().len() + node.0) as u32)
    }

    fn lp(&self, slot: PifoSlot) -> LogicalPifoId {
        match slot {
            PifoSlot::Sched(n) => self.sched_lp(n),
            PifoSlot::Shaping(n) => self.shaping_lp(n),
        }
    }

    /// Packets held anywhere in the tree.
    pub fn buffered(&self) -> usize {
        self.packets.len()
    }

    /// True when the root has something to dequeue.
    pub fn can_dequeue(&self) -> bool {
        self.block.len_of(self.sched_lp(self.tree().root())) > 0
    }

    /// Walks waiting in shaping PIFOs.
    pub fn pending_shaping(&self) -> usize {
        self.pending_shaping
    }

    /// Packets dropped for lack of space or because a transaction failed.
    pub fn drops(&self) -> u64 {
        self.drops
    }

    /// Resumed walks whose transactions failed and were completed with
    /// last-place ranks.
    pub fn faults(&self) -> u64 {
        self.faults
    }

    /// Earliest release time among shaping PIFO heads.
    pub fn next_release(&self) -> Option<u64> {
        self.tree()
            .nodes()
            .iter()
            .filter(|n| n.shaping.is_some())
            .filter_map(|n| self.block.peek(self.shaping_lp(n.id)).map(|e| e.rank))
            .min()
    }

    /// Number of elements currently in `node`'s scheduling PIFO.
    pub fn sched_len(&self, node: NodeId) -> usize {
        self.block.len_of(self.sched_lp(node))
    }

    pub fn shaping_len(&self, node: NodeId) -> usize {
        self.block.len_of(self.shaping_lp(node))
    }

    /// Ranks in `node`'s scheduling PIFO, in dequeue order.
    pub fn sched_ranks(&self, node: NodeId) -> Vec<u64> {
        self.block
            .pifo(self.sched_lp(node))
            .map(|p| p.iter().map(|e| e.rank).collect())
            .unwrap_or_default()
    }

    /// Classify `pkt`, run its walk and push the resulting elements.
    ///
    /// On error nothing is pushed and no transaction state changes.
    pub fn enqueue_packet(&mut self, mut pkt: PacketRecord, now: u64) -> Result<(), EnqueueError> {
        let leaf = match self.exec.classify(&pkt) {
            Ok(l) => l,
            Err(e) => {
                self.drops += 1;
                return Err(e.into());
            }
        };
        let need = self.tree().path_elements(leaf);
        let capacity = self.block.capacity();
        if self.block.occupancy() + self.reserved + need > capacity {
            self.drops += 1;
            return Err(PifoError::CapacityExceeded {
                block: self.block.id(),
                capacity,
            }
            .into());
        }
        let seg = match self.exec.run_segment(&mut pkt, Resume { leaf, pos: 0 }, now) {
            Ok(s) => s,
            Err(e) => {
                self.drops += 1;
                return Err(e.into());
            }
        };
        let handle = self.next_handle;
        self.next_handle += 1;
        let held = need - seg.pushes.len();
        self.reserved += need;
        self.apply(seg, handle, &pkt, held);
        self.packets.insert(handle, pkt);
        Ok(())
    }

    /// Push a segment's elements, drawing on reserved capacity. `held` is
    /// the reservation left for the packet once these pushes are done.
    fn apply(&mut self, seg: Segment<V>, handle: u64, pkt: &PacketRecord, held: usize) {
        self.reserved -= seg.pushes.len();
        let last = seg.pushes.len().saturating_sub(1);
        for (i, push) in seg.pushes.into_iter().enumerate() {
            let side = match (push.hook, seg.suspend) {
                (_, Some(resume)) if i == last => {
                    let order = self.next_order;
                    self.next_order += 1;
                    self.pending_shaping += 1;
                    Side::Suspended(Suspended {
                        pkt: pkt.clone(),
                        resume,
                        order,
                        reserved: held,
                    })
                }
                (Some(h), _) => Side::Hook(h),
                (None, _) => {
                    self.push(push.slot, push.kind, push.rank, handle, pkt.flow_id, NO_SIDE);
                    continue;
                }
            };
            let key = self.side.insert(side) as u32;
            self.push(push.slot, push.kind, push.rank, handle, pkt.flow_id, key);
        }
        if seg.suspend.is_none() {
            self.reserved -= held;
        }
    }

    fn push(&mut self, slot: PifoSlot, kind: PushKind, rank: u64, handle: u64, flow: u64, side: u32) {
        let lp = self.lp(slot);
        let elem = match kind {
            PushKind::Packet => PifoElement::packet(PacketHandle(handle), rank),
            PushKind::Ref(child) => PifoElement::pifo_ref(self.sched_lp(child), rank),
        }
        .with_metadata(side)
        .with_flow(FlowId(flow));
        self.block
            .enqueue(lp, elem)
            .expect("capacity was reserved for every push");
    }

    /// Release every shaping entry due at or before `now`, in order of
    /// release time and then arrival. A released walk resumes at the shaping
    /// node's parent with `now` as its clock. Returns the number released.
    pub fn release_shaped(&mut self, now: u64) -> usize {
        let mut released = 0;
        loop {
            let due = self
                .tree()
                .nodes()
                .iter()
                .filter(|n| n.shaping.is_some())
                .filter_map(|n| {
                    let e = self.block.peek(self.shaping_lp(n.id))?;
                    if e.rank > now {
                        return None;
                    }
                    let Some(Side::Suspended(s)) = self.side.get(e.metadata as usize) else {
                        unreachable!("shaping entries carry a suspended walk");
                    };
                    Some(((e.rank, s.order), n.id))
                })
                .min();
            let Some((_, node)) = due else {
                return released;
            };
            self.release_one(node, now);
            released += 1;
        }
    }

    /// Pop the head of `node`'s shaping PIFO and resume its walk.
    fn release_one(&mut self, node: NodeId, now: u64) {
        let e = self
            .block
            .dequeue(self.shaping_lp(node))
            .expect("caller saw a head");
        let Side::Suspended(mut s) = self.side.remove(e.metadata as usize) else {
            unreachable!("shaping entries carry a suspended walk");
        };
        self.pending_shaping -= 1;
        let seg = match self.exec.run_segment(&mut s.pkt, s.resume, now) {
            Ok(seg) => seg,
            Err(_) => {
                self.faults += 1;
                self.exec.fallback_segment(s.resume)
            }
        };
        // The shaping entry's slot is free again; the rest comes from the
        // packet's own reservation.
        self.reserved += 1;
        let held = s.reserved + 1 - seg.pushes.len();
        // A resumed walk pushes references only, so no packet handle.
        self.apply(seg, u64::MAX, &s.pkt, held);
    }

    /// Pop the root and follow references down to a packet, running dequeue
    /// hooks along the way.
    pub fn dequeue_packet(&mut self, now: u64) -> Result<PacketRecord, DequeueError> {
        let root = self.tree().root();
        let mut node = root;
        let mut elem = self
            .block
            .dequeue(self.sched_lp(root))
            .map_err(|_| DequeueError::EmptyPifo)?;
        loop {
            self.after_pop(node, elem.metadata, now);
            match elem.kind {
                ElementKind::Packet(h) => {
                    let pkt = self
                        .packets
                        .remove(&h.0)
                        .expect("every packet element has a stored packet");
                    return Ok(pkt);
                }
                ElementKind::PifoRef(lp) => {
                    node = NodeId(lp.0 as usize);
                    elem = self
                        .block
                        .dequeue(lp)
                        .map_err(|_| DequeueError::BrokenChain(node))?;
                }
            }
        }
    }

    fn after_pop(&mut self, node: NodeId, side: u32, now: u64) {
        if side == NO_SIDE {
            return;
        }
        if let Side::Hook(h) = self.side.remove(side as usize) {
            if self.exec.fire_hook(node, &h, now).is_err() {
                self.faults += 1;
            }
        }
    }
}
