//! Behavioral push-in first-out queues and PIFO blocks.
//!
//! A [`Pifo`] orders elements by `(rank, seq)`: lower ranks leave first and
//! equal ranks leave in the order they were pushed. A [`PifoBlock`] hosts many
//! independently addressable logical PIFOs under one shared element budget.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::scalar::RankValue;

/// Default element budget of one block.
pub const DEFAULT_BLOCK_CAPACITY: usize = 65_536;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LogicalPifoId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BlockId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FlowId(pub u64);

/// Handle to a buffered packet; the packet itself lives outside the PIFO.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PacketHandle(pub u64);

impl fmt::Display for LogicalPifoId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ElementKind {
    Packet(PacketHandle),
    PifoRef(LogicalPifoId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PifoElement<R> {
    pub kind: ElementKind,
    pub rank: R,
    /// Assigned by the PIFO on push.
    pub seq: u64,
    pub metadata: u32,
    pub flow_id: FlowId,
}

impl<R: RankValue> PifoElement<R> {
    pub fn packet(handle: PacketHandle, rank: R) -> Self {
        Self {
            kind: ElementKind::Packet(handle),
            rank,
            seq: 0,
            metadata: 0,
            flow_id: FlowId(0),
        }
    }

    /// A reference to another logical PIFO; the target id is also carried as
    /// metadata.
    pub fn pifo_ref(target: LogicalPifoId, rank: R) -> Self {
        Self {
            kind: ElementKind::PifoRef(target),
            rank,
            seq: 0,
            metadata: target.0,
            flow_id: FlowId(0),
        }
    }

    pub fn with_metadata(mut self, metadata: u32) -> Self {
        self.metadata = metadata;
        self
    }

    pub fn with_flow(mut self, flow: FlowId) -> Self {
        self.flow_id = flow;
        self
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PifoError {
    #[error("PIFO block {block} is full ({capacity} elements)")]
    CapacityExceeded { block: BlockId, capacity: usize },
    #[error("logical PIFO {0} is empty")]
    EmptyPifo(LogicalPifoId),
    #[error("logical PIFO {lp} does not exist in block {block}")]
    UnknownLogicalPifo { block: BlockId, lp: LogicalPifoId },
}

/// One logical PIFO.
#[derive(Clone, Debug)]
pub struct Pifo<R> {
    id: LogicalPifoId,
    next_seq: u64,
    elements: BTreeMap<(R, u64), PifoElement<R>>,
}

impl<R: RankValue> Pifo<R> {
    pub fn new(id: LogicalPifoId) -> Self {
        Self {
            id,
            next_seq: 0,
            elements: BTreeMap::new(),
        }
    }

    pub fn id(&self) -> LogicalPifoId {
        self.id
    }

    /// Insert by rank. Returns the sequence number given to the element.
    pub fn push(&mut self, mut elem: PifoElement<R>) -> u64 {
        let seq = self.next_seq;
        self.next_seq += 1;
        elem.seq = seq;
        self.elements.insert((elem.rank, seq), elem);
        seq
    }

    pub fn pop(&mut self) -> Result<PifoElement<R>, PifoError> {
        self.elements
            .pop_first()
            .map(|(_, e)| e)
            .ok_or(PifoError::EmptyPifo(self.id))
    }

    pub fn peek(&self) -> Option<&PifoElement<R>> {
        self.elements.values().next()
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// Elements in dequeue order.
    pub fn iter(&self) -> impl Iterator<Item = &PifoElement<R>> {
        self.elements.values()
    }
}

/// Physical block hosting several logical PIFOs.
#[derive(Clone, Debug)]
pub struct PifoBlock<R> {
    id: BlockId,
    capacity: usize,
    pifos: BTreeMap<LogicalPifoId, Pifo<R>>,
    occupancy: usize,
    pushes: u64,
    pops: u64,
    drops: u64,
}

impl<R: RankValue> PifoBlock<R> {
    pub fn new(id: BlockId, lps: impl IntoIterator<Item = LogicalPifoId>) -> Self {
        Self::with_capacity(id, DEFAULT_BLOCK_CAPACITY, lps)
    }

    pub fn with_capacity(
        id: BlockId,
        capacity: usize,
        lps: impl IntoIterator<Item = LogicalPifoId>,
    ) -> Self {
        Self {
            id,
            capacity,
            pifos: lps.into_iter().map(|lp| (lp, Pifo::new(lp))).collect(),
            occupancy: 0,
            pushes: 0,
            pops: 0,
            drops: 0,
        }
    }

    pub fn id(&self) -> BlockId {
        self.id
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn add_logical_pifo(&mut self, lp: LogicalPifoId) {
        self.pifos.entry(lp).or_insert_with(|| Pifo::new(lp));
    }

    pub fn contains(&self, lp: LogicalPifoId) -> bool {
        self.pifos.contains_key(&lp)
    }

    /// Enqueue into logical PIFO `lp`. A full block tail-drops the arriving
    /// element and counts the drop. Returns the element's sequence number.
    pub fn enqueue(&mut self, lp: LogicalPifoId, elem: PifoElement<R>) -> Result<u64, PifoError> {
        let (block, capacity) = (self.id, self.capacity);
        let pifo = self
            .pifos
            .get_mut(&lp)
            .ok_or(PifoError::UnknownLogicalPifo { block, lp })?;
        self.pushes += 1;
        if self.occupancy >= capacity {
            self.drops += 1;
            return Err(PifoError::CapacityExceeded { block, capacity });
        }
        self.occupancy += 1;
        Ok(pifo.push(elem))
    }

    pub fn dequeue(&mut self, lp: LogicalPifoId) -> Result<PifoElement<R>, PifoError> {
        let block = self.id;
        let pifo = self
            .pifos
            .get_mut(&lp)
            .ok_or(PifoError::UnknownLogicalPifo { block, lp })?;
        let e = pifo.pop()?;
        self.occupancy -= 1;
        self.pops += 1;
        Ok(e)
    }

    pub fn peek(&self, lp: LogicalPifoId) -> Option<&PifoElement<R>> {
        self.pifos.get(&lp).and_then(Pifo::peek)
    }

    pub fn pifo(&self, lp: LogicalPifoId) -> Option<&Pifo<R>> {
        self.pifos.get(&lp)
    }

    pub fn logical_pifos(&self) -> impl Iterator<Item = &Pifo<R>> {
        self.pifos.values()
    }

    pub fn len_of(&self, lp: LogicalPifoId) -> usize {
        self.pifos.get(&lp).map_or(0, Pifo::len)
    }

    pub fn occupancy(&self) -> usize {
        self.occupancy
    }

    pub fn free(&self) -> usize {
        self.capacity - self.occupancy
    }

    /// Attempted pushes, including dropped ones.
    pub fn pushes(&self) -> u64 {
        self.pushes
    }

    pub fn pops(&self) -> u64 {
        self.pops
    }

    pub fn drops(&self) -> u64 {
        self.drops
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pkt(id: u64, rank: u64) -> PifoElement<u64> {
        PifoElement::packet(PacketHandle(id), rank)
    }

    fn handle(e: &PifoElement<u64>) -> u64 {
        match e.kind {
            ElementKind::Packet(h) => h.0,
            ElementKind::PifoRef(lp) => lp.0 as u64,
        }
    }

    #[test]
    fn push_orders_by_rank_then_arrival() {
        let mut p = Pifo::new(LogicalPifoId(0));
        p.push(pkt(b'a' as u64, 5));
        p.push(pkt(b'b' as u64, 3));
        p.push(pkt(b'c' as u64, 5));
        let order: Vec<u8> = p.iter().map(|e| handle(e) as u8).collect();
        assert_eq!(order, b"bac");
    }

    #[test]
    fn pops_break_ties_in_push_order() {
        let mut p = Pifo::new(LogicalPifoId(0));
        p.push(pkt(1, 7));
        p.push(pkt(2, 2));
        p.push(pkt(3, 2));
        let popped: Vec<(u64, u64)> = (0..3)
            .map(|_| p.pop().unwrap())
            .map(|e| (e.rank, handle(&e)))
            .collect();
        assert_eq!(popped, vec![(2, 2), (2, 3), (7, 1)]);
    }

    #[test]
    fn pop_on_empty_is_an_error() {
        let mut p: Pifo<u64> = Pifo::new(LogicalPifoId(4));
        assert_eq!(p.pop(), Err(PifoError::EmptyPifo(LogicalPifoId(4))));
    }

    #[test]
    fn full_block_tail_drops() {
        let mut b = PifoBlock::with_capacity(BlockId(0), 2, [LogicalPifoId(0)]);
        b.enqueue(LogicalPifoId(0), pkt(1, 1)).unwrap();
        b.enqueue(LogicalPifoId(0), pkt(2, 1)).unwrap();
        let err = b.enqueue(LogicalPifoId(0), pkt(3, 0)).unwrap_err();
        assert!(matches!(err, PifoError::CapacityExceeded { capacity: 2, .. }));
        assert_eq!(b.drops(), 1);
        assert_eq!(b.occupancy(), 2);
        assert_eq!(b.pushes() - b.pops() - b.drops(), b.occupancy() as u64);
    }

    #[test]
    fn block_isolates_logical_pifos() {
        let lps = (1..=8).map(LogicalPifoId);
        let mut b = PifoBlock::new(BlockId(0), lps);
        b.enqueue(LogicalPifoId(3), pkt(10, 1)).unwrap();
        for lp in 1..=8 {
            assert_eq!(b.len_of(LogicalPifoId(lp)), usize::from(lp == 3));
        }
        let err = b.enqueue(LogicalPifoId(9), pkt(11, 1)).unwrap_err();
        assert!(matches!(err, PifoError::UnknownLogicalPifo { .. }));

        b.enqueue(LogicalPifoId(1), pkt(12, 5)).unwrap();
        b.enqueue(LogicalPifoId(2), pkt(13, 5)).unwrap();
        assert_eq!(b.len_of(LogicalPifoId(1)), 1);
        assert_eq!(b.len_of(LogicalPifoId(2)), 1);
    }

    #[test]
    fn block_dequeue_uses_the_named_pifo_head() {
        let mut b = PifoBlock::new(BlockId(0), [LogicalPifoId(1), LogicalPifoId(2)]);
        b.enqueue(LogicalPifoId(1), pkt(1, 4)).unwrap();
        b.enqueue(LogicalPifoId(1), pkt(2, 9)).unwrap();
        b.enqueue(LogicalPifoId(2), pkt(3, 1)).unwrap();
        assert_eq!(b.dequeue(LogicalPifoId(1)).unwrap().rank, 4);
        let mut empty = PifoBlock::<u64>::new(BlockId(0), [LogicalPifoId(5)]);
        assert_eq!(
            empty.dequeue(LogicalPifoId(5)),
            Err(PifoError::EmptyPifo(LogicalPifoId(5)))
        );
    }

    #[test]
    fn ref_carries_target_as_metadata() {
        let e = PifoElement::<u64>::pifo_ref(LogicalPifoId(6), 1);
        assert_eq!(e.metadata, 6);
    }

    /// Stable sort of the inputs by rank is the reference order.
    fn stable_sorted(items: &[(u64, u64)]) -> Vec<(u64, u64)> {
        let mut v = items.to_vec();
        v.sort_by_key(|&(rank, _)| rank);
        v
    }

    #[test]
    fn ten_thousand_pushes_match_stable_sort() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let items: Vec<(u64, u64)> = (0..10_000).map(|i| (rng.gen_range(0..500), i)).collect();
        let mut p = Pifo::new(LogicalPifoId(0));
        for &(rank, id) in &items {
            p.push(pkt(id, rank));
        }
        let got: Vec<(u64, u64)> = p.iter().map(|e| (e.rank, handle(e))).collect();
        assert_eq!(got, stable_sorted(&items));
    }

    #[test]
    fn interleaved_ops_match_resort_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut p = Pifo::new(LogicalPifoId(0));
        // Oracle: arrival-ordered list, fully re-sorted before every pop.
        let mut resident: Vec<(u64, u64)> = Vec::new();
        for id in 0..1_000u64 {
            if rng.gen_bool(0.6) || resident.is_empty() {
                let rank = rng.gen_range(0..50);
                p.push(pkt(id, rank));
                resident.push((rank, id));
            } else {
                resident = stable_sorted(&resident);
                let expect = resident.remove(0);
                let got = p.pop().unwrap();
                assert_eq!((got.rank, handle(&got)), expect);
            }
        }
    }

    #[test]
    fn multi_pifo_workload_matches_per_id_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let n = 8u32;
        let mut b = PifoBlock::new(BlockId(0), (0..n).map(LogicalPifoId));
        let mut oracle: Vec<Vec<(u64, u64)>> = vec![Vec::new(); n as usize];
        for id in 0..5_000u64 {
            let lp = rng.gen_range(0..n);
            if rng.gen_bool(0.55) {
                let rank = rng.gen_range(0..20);
                b.enqueue(LogicalPifoId(lp), pkt(id, rank)).unwrap();
                oracle[lp as usize].push((rank, id));
            } else {
                let res = b.dequeue(LogicalPifoId(lp));
                let o = &mut oracle[lp as usize];
                if o.is_empty() {
                    assert!(res.is_err());
                } else {
                    *o = stable_sorted(o);
                    let e = res.unwrap();
                    assert_eq!((e.rank, handle(&e)), o.remove(0));
                }
            }
            let resident: usize = oracle.iter().map(Vec::len).sum();
            assert_eq!(b.occupancy(), resident);
        }
    }

    proptest! {
        #[test]
        fn equal_ranks_pop_in_seq_order(ranks in proptest::collection::vec(0u64..4, 1..200)) {
            let mut p = Pifo::new(LogicalPifoId(0));
            for (i, r) in ranks.iter().enumerate() {
                p.push(pkt(i as u64, *r));
            }
            let mut last: Option<(u64, u64)> = None;
            while let Ok(e) = p.pop() {
                if let Some((lr, ls)) = last {
                    prop_assert!(lr < e.rank || (lr == e.rank && ls < e.seq));
                }
                last = Some((e.rank, e.seq));
            }
        }
    }
}
