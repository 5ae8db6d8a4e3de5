//! Compilation of a scheduling tree onto a mesh of PIFO blocks.
//!
//! Every tree level becomes one block, root first. Each shaping PIFO gets a
//! block of its own: it is dequeued whenever a release falls due, so sharing
//! a block would compete with scheduling dequeues and enqueues for the one
//! port of each kind a block has per cycle. Logical PIFO ids are dense per
//! block, in node order.
//!
//! The canonical text form, parsed back by [`MeshConfig::from_text`]:
//!
//! ```text
//! blocks 3
//! block 0
//!   lp 0 sched WFQ_Root
//! block 1
//!   lp 0 sched WFQ_Left
//!   lp 1 sched WFQ_Right
//! block 2
//!   lp 0 shaping WFQ_Right
//! next_hop
//!   0:0 ref 0 -> dequeue 1:0
//!   0:0 ref 1 -> dequeue 1:1
//!   1:0 packet -> transmit
//!   1:1 packet -> transmit
//!   2:0 ref 1 -> enqueue 0:0
//! enqueue
//!   WFQ_Left 1:0 0:0
//!   WFQ_Right 1:1 2:0 | 0:0
//! ```
//!
//! An `enqueue` line lists where a packet entering at that leaf pushes, in
//! walk order; `|` marks where the walk suspends until a shaping release.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::{self, Write as _};
use std::sync::Arc;

use thiserror::Error;

use crate::pifo::{BlockId, LogicalPifoId};
use crate::tree::{NodeId, PifoSlot, SchedTree};

/// Largest number of blocks a compiled mesh may use by default.
pub const DEFAULT_MAX_BLOCKS: usize = 5;

/// A logical PIFO's address in the mesh.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PifoLoc {
    pub block: BlockId,
    pub lp: LogicalPifoId,
}

impl PifoLoc {
    pub fn new(block: u32, lp: u32) -> Self {
        Self {
            block: BlockId(block),
            lp: LogicalPifoId(lp),
        }
    }
}

impl fmt::Display for PifoLoc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.block, self.lp)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    Sched,
    Shaping,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HostedPifo {
    pub lp: LogicalPifoId,
    pub role: Role,
    pub node: NodeId,
}

impl HostedPifo {
    pub fn slot(&self) -> PifoSlot {
        match self.role {
            Role::Sched => PifoSlot::Sched(self.node),
            Role::Shaping => PifoSlot::Shaping(self.node),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockDesc {
    pub id: BlockId,
    pub pifos: Vec<HostedPifo>,
}

/// Kind of element popped, the key of a next-hop lookup together with the
/// PIFO it was popped from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Popped {
    Packet,
    /// Reference to this logical PIFO id; the table supplies its block.
    Ref(LogicalPifoId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NextHop {
    EnqueueTo(PifoLoc),
    DequeueFrom(PifoLoc),
    Transmit,
}

#[derive(Clone, Debug)]
pub struct MeshConfig {
    tree: Arc<SchedTree>,
    pub blocks: Vec<BlockDesc>,
    pub next_hop: BTreeMap<(PifoLoc, Popped), NextHop>,
    /// Per leaf, the locations a walk pushes to, split at suspensions.
    pub enqueue: BTreeMap<NodeId, Vec<Vec<PifoLoc>>>,
}

impl PartialEq for MeshConfig {
    fn eq(&self, other: &Self) -> bool {
        self.blocks == other.blocks && self.next_hop == other.next_hop && self.enqueue == other.enqueue
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum CompileError {
    #[error("tree needs {needed} PIFO blocks, at most {max} allowed")]
    TooManyBlocks { needed: usize, max: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CompileOptions {
    pub max_blocks: usize,
}

impl Default for CompileOptions {
    fn default() -> Self {
        Self {
            max_blocks: DEFAULT_MAX_BLOCKS,
        }
    }
}

/// Compile with default options.
pub fn compile(tree: &Arc<SchedTree>) -> Result<MeshConfig, CompileError> {
    compile_with(tree, &CompileOptions::default())
}

pub fn compile_with(tree: &Arc<SchedTree>, opts: &CompileOptions) -> Result<MeshConfig, CompileError> {
    let levels = tree.depth();
    let shaping: Vec<NodeId> = tree
        .nodes()
        .iter()
        .filter(|n| n.shaping.is_some())
        .map(|n| n.id)
        .collect();
    let needed = levels + shaping.len();
    if needed > opts.max_blocks {
        return Err(CompileError::TooManyBlocks {
            needed,
            max: opts.max_blocks,
        });
    }
    let mut blocks: Vec<BlockDesc> = (0..needed)
        .map(|b| BlockDesc {
            id: BlockId(b as u32),
            pifos: Vec::new(),
        })
        .collect();
    for n in tree.nodes() {
        let pifos = &mut blocks[n.depth].pifos;
        pifos.push(HostedPifo {
            lp: LogicalPifoId(pifos.len() as u32),
            role: Role::Sched,
            node: n.id,
        });
    }
    for (i, &n) in shaping.iter().enumerate() {
        blocks[levels + i].pifos.push(HostedPifo {
            lp: LogicalPifoId(0),
            role: Role::Shaping,
            node: n,
        });
    }
    let mut cfg = MeshConfig {
        tree: Arc::clone(tree),
        blocks,
        next_hop: BTreeMap::new(),
        enqueue: BTreeMap::new(),
    };
    cfg.build_tables();
    Ok(cfg)
}

/// Problems [`check_config`] reports.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Diagnostic {
    /// Some cycle can need two operations of one kind on `block`.
    PortBudgetConflict { block: BlockId, port: Port, detail: String },
    /// Popping this kind of element from `at` has no next hop.
    MissingNextHop { at: PifoLoc, popped: Popped },
    /// A next hop names a PIFO no block hosts.
    DanglingTarget { at: PifoLoc, target: PifoLoc },
    /// Dequeue next hops loop back to `at`.
    DequeueCycle { at: PifoLoc },
    /// A tree PIFO is hosted nowhere or more than once.
    Placement { pifo: String, count: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Port {
    Enqueue,
    Dequeue,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::PortBudgetConflict { block, port, detail } => {
                let p = match port {
                    Port::Enqueue => "enqueue",
                    Port::Dequeue => "dequeue",
                };
                write!(f, "port budget conflict on block {block} ({p}): {detail}")
            }
            Diagnostic::MissingNextHop { at, popped } => {
                write!(f, "no next hop for {} popped from {at}", popped_text(*popped))
            }
            Diagnostic::DanglingTarget { at, target } => {
                write!(f, "next hop from {at} names unhosted PIFO {target}")
            }
            Diagnostic::DequeueCycle { at } => write!(f, "dequeue next hops loop through {at}"),
            Diagnostic::Placement { pifo, count } => {
                write!(f, "PIFO {pifo} is hosted {count} times")
            }
        }
    }
}

fn popped_text(p: Popped) -> String {
    match p {
        Popped::Packet => "packet".into(),
        Popped::Ref(lp) => format!("ref {lp}"),
    }
}

impl MeshConfig {
    pub fn tree(&self) -> &Arc<SchedTree> {
        &self.tree
    }

    /// Where each tree PIFO lives.
    pub fn locations(&self) -> HashMap<PifoSlot, PifoLoc> {
        let mut out = HashMap::new();
        for b in &self.blocks {
            for p in &b.pifos {
                out.insert(p.slot(), PifoLoc { block: b.id, lp: p.lp });
            }
        }
        out
    }

    pub fn hosted(&self, loc: PifoLoc) -> Option<&HostedPifo> {
        self.blocks
            .iter()
            .find(|b| b.id == loc.block)?
            .pifos
            .iter()
            .find(|p| p.lp == loc.lp)
    }

    fn pifo_name(&self, slot: PifoSlot) -> String {
        match slot {
            PifoSlot::Sched(n) => self.tree.node(n).name.clone(),
            PifoSlot::Shaping(n) => format!("shaping({})", self.tree.node(n).name),
        }
    }

    /// Move a tree PIFO into another block, appending it with the next free
    /// logical id there, and rebuild the tables. Used to study hand-made
    /// placements.
    pub fn relocate(&mut self, slot: PifoSlot, block: BlockId) {
        let Some(src) = self.blocks.iter_mut().find(|b| b.pifos.iter().any(|p| p.slot() == slot)) else {
            return;
        };
        let i = src.pifos.iter().position(|p| p.slot() == slot).unwrap();
        let hosted = src.pifos.remove(i);
        let dst = self.blocks.iter_mut().find(|b| b.id == block).unwrap();
        let lp = LogicalPifoId(dst.pifos.iter().map(|p| p.lp.0 + 1).max().unwrap_or(0));
        dst.pifos.push(HostedPifo { lp, ..hosted });
        self.blocks.retain(|b| !b.pifos.is_empty());
        self.build_tables();
    }

    /// Next hops and enqueue paths implied by the current placement.
    fn build_tables(&mut self) {
        let tree = Arc::clone(&self.tree);
        let locs = self.locations();
        self.next_hop.clear();
        self.enqueue.clear();
        for n in tree.nodes() {
            let here = locs[&PifoSlot::Sched(n.id)];
            if n.is_leaf() {
                self.next_hop.insert((here, Popped::Packet), NextHop::Transmit);
            }
            for &c in &n.children {
                let child = locs[&PifoSlot::Sched(c)];
                self.next_hop
                    .insert((here, Popped::Ref(child.lp)), NextHop::DequeueFrom(child));
            }
            if n.shaping.is_some() {
                let at = locs[&PifoSlot::Shaping(n.id)];
                let parent = locs[&PifoSlot::Sched(n.parent.expect("validated: no shaping at root"))];
                self.next_hop
                    .insert((at, Popped::Ref(here.lp)), NextHop::EnqueueTo(parent));
            }
        }
        for &leaf in tree.leaves() {
            let mut segs = vec![Vec::new()];
            for &n in tree.path(leaf) {
                let seg = segs.last_mut().unwrap();
                seg.push(locs[&PifoSlot::Sched(n)]);
                if tree.node(n).shaping.is_some() {
                    seg.push(locs[&PifoSlot::Shaping(n)]);
                    segs.push(Vec::new());
                }
            }
            segs.retain(|s| !s.is_empty());
            self.enqueue.insert(leaf, segs);
        }
    }

    /// Canonical text form.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "blocks {}", self.blocks.len()).unwrap();
        for b in &self.blocks {
            writeln!(out, "block {}", b.id).unwrap();
            for p in &b.pifos {
                let role = match p.role {
                    Role::Sched => "sched",
                    Role::Shaping => "shaping",
                };
                writeln!(out, "  lp {} {role} {}", p.lp, self.tree.node(p.node).name).unwrap();
            }
        }
        writeln!(out, "next_hop").unwrap();
        for ((at, popped), hop) in &self.next_hop {
            let hop = match hop {
                NextHop::EnqueueTo(l) => format!("enqueue {l}"),
                NextHop::DequeueFrom(l) => format!("dequeue {l}"),
                NextHop::Transmit => "transmit".into(),
            };
            writeln!(out, "  {at} {} -> {hop}", popped_text(*popped)).unwrap();
        }
        writeln!(out, "enqueue").unwrap();
        for (leaf, segs) in &self.enqueue {
            let segs: Vec<String> = segs
                .iter()
                .map(|s| s.iter().map(ToString::to_string).collect::<Vec<_>>().join(" "))
                .collect();
            writeln!(out, "  {} {}", self.tree.node(*leaf).name, segs.join(" | ")).unwrap();
        }
        out
    }

    /// Parse the canonical text form against `tree`.
    pub fn from_text(text: &str, tree: &Arc<SchedTree>) -> Result<Self, MeshParseError> {
        let mut cfg = MeshConfig {
            tree: Arc::clone(tree),
            blocks: Vec::new(),
            next_hop: BTreeMap::new(),
            enqueue: BTreeMap::new(),
        };
        let mut section = "";
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |msg: &str| MeshParseError {
                line,
                msg: msg.to_string(),
            };
            let l = raw.split('#').next().unwrap().trim();
            if l.is_empty() {
                continue;
            }
            let words: Vec<&str> = l.split_whitespace().collect();
            match words.as_slice() {
                ["blocks", _] => section = "blocks",
                ["block", id] => {
                    let id = id.parse().map_err(|_| err("bad block id"))?;
                    cfg.blocks.push(BlockDesc {
                        id: BlockId(id),
                        pifos: Vec::new(),
                    });
                    section = "block";
                }
                ["lp", lp, role, name] if section == "block" => {
                    let lp = LogicalPifoId(lp.parse().map_err(|_| err("bad lp id"))?);
                    let role = match *role {
                        "sched" => Role::Sched,
                        "shaping" => Role::Shaping,
                        _ => return Err(err("role must be sched or shaping")),
                    };
                    let node = tree.find(name).ok_or_else(|| err("unknown node"))?;
                    cfg.blocks.last_mut().unwrap().pifos.push(HostedPifo { lp, role, node });
                }
                ["next_hop"] => section = "next_hop",
                ["enqueue"] => section = "enqueue",
                [at, rest @ ..] if section == "next_hop" => {
                    let at = parse_loc(at).ok_or_else(|| err("bad location"))?;
                    let (popped, rest) = match rest {
                        ["packet", rest @ ..] => (Popped::Packet, rest),
                        ["ref", lp, rest @ ..] => (
                            Popped::Ref(LogicalPifoId(lp.parse().map_err(|_| err("bad ref id"))?)),
                            rest,
                        ),
                        _ => return Err(err("expected packet or ref <lp>")),
                    };
                    let hop = match rest {
                        ["->", "transmit"] => NextHop::Transmit,
                        ["->", "dequeue", l] => {
                            NextHop::DequeueFrom(parse_loc(l).ok_or_else(|| err("bad location"))?)
                        }
                        ["->", "enqueue", l] => {
                            NextHop::EnqueueTo(parse_loc(l).ok_or_else(|| err("bad location"))?)
                        }
                        _ => return Err(err("expected -> transmit|dequeue <loc>|enqueue <loc>")),
                    };
                    cfg.next_hop.insert((at, popped), hop);
                }
                [name, rest @ ..] if section == "enqueue" => {
                    let leaf = tree.find(name).ok_or_else(|| err("unknown node"))?;
                    let mut segs = vec![Vec::new()];
                    for w in rest {
                        if *w == "|" {
                            segs.push(Vec::new());
                        } else {
                            let l = parse_loc(w).ok_or_else(|| err("bad location"))?;
                            segs.last_mut().unwrap().push(l);
                        }
                    }
                    cfg.enqueue.insert(leaf, segs);
                }
                _ => return Err(err("unrecognized line")),
            }
        }
        Ok(cfg)
    }
}

fn parse_loc(s: &str) -> Option<PifoLoc> {
    let (b, l) = s.split_once(':')?;
    Some(PifoLoc::new(b.parse().ok()?, l.parse().ok()?))
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("line {line}: {msg}")]
pub struct MeshParseError {
    pub line: usize,
    pub msg: String,
}

/// Static checks on a mesh configuration, empty when it is sound.
pub fn check_config(cfg: &MeshConfig) -> Vec<Diagnostic> {
    let tree = cfg.tree();
    let mut out = Vec::new();

    let mut counts: HashMap<PifoSlot, usize> = HashMap::new();
    for b in &cfg.blocks {
        for p in &b.pifos {
            *counts.entry(p.slot()).or_default() += 1;
        }
    }
    let mut wanted: Vec<PifoSlot> = Vec::new();
    for n in tree.nodes() {
        wanted.push(PifoSlot::Sched(n.id));
        if n.shaping.is_some() {
            wanted.push(PifoSlot::Shaping(n.id));
        }
    }
    for s in &wanted {
        let c = counts.get(s).copied().unwrap_or(0);
        if c != 1 {
            out.push(Diagnostic::Placement {
                pifo: cfg.pifo_name(*s),
                count: c,
            });
        }
    }
    if !out.is_empty() {
        return out;
    }
    let locs = cfg.locations();

    // Table closure: every element a PIFO can hold has somewhere to go.
    for n in tree.nodes() {
        let here = locs[&PifoSlot::Sched(n.id)];
        let mut keys: Vec<(PifoLoc, Popped)> = n
            .children
            .iter()
            .map(|c| (here, Popped::Ref(locs[&PifoSlot::Sched(*c)].lp)))
            .collect();
        if n.is_leaf() {
            keys.push((here, Popped::Packet));
        }
        if n.shaping.is_some() {
            keys.push((locs[&PifoSlot::Shaping(n.id)], Popped::Ref(here.lp)));
        }
        for k in keys {
            if !cfg.next_hop.contains_key(&k) {
                out.push(Diagnostic::MissingNextHop {
                    at: k.0,
                    popped: k.1,
                });
            }
        }
    }
    let hosted: HashSet<PifoLoc> = locs.values().copied().collect();
    for ((at, _), hop) in &cfg.next_hop {
        if let NextHop::EnqueueTo(t) | NextHop::DequeueFrom(t) = hop {
            if !hosted.contains(t) {
                out.push(Diagnostic::DanglingTarget { at: *at, target: *t });
            }
        }
    }

    // Dequeue chains must terminate.
    let mut edges: HashMap<PifoLoc, Vec<PifoLoc>> = HashMap::new();
    for ((at, _), hop) in &cfg.next_hop {
        if let NextHop::DequeueFrom(t) = hop {
            edges.entry(*at).or_default().push(*t);
        }
    }
    let mut state: HashMap<PifoLoc, u8> = HashMap::new();
    let mut starts: Vec<PifoLoc> = edges.keys().copied().collect();
    starts.sort();
    for s in starts {
        if let Some(at) = find_cycle(s, &edges, &mut state) {
            out.push(Diagnostic::DequeueCycle { at });
        }
    }

    // Port budget.
    let block_of = |s: PifoSlot| locs[&s].block;
    for (leaf, segs) in &cfg.enqueue {
        for seg in segs {
            if let Some(b) = first_repeat(seg.iter().map(|l| l.block)) {
                out.push(Diagnostic::PortBudgetConflict {
                    block: b,
                    port: Port::Enqueue,
                    detail: format!("one walk from {} enqueues twice", tree.node(*leaf).name),
                });
            }
        }
        let chain = tree.path(*leaf).iter().rev().map(|&n| block_of(PifoSlot::Sched(n)));
        if let Some(b) = first_repeat(chain) {
            out.push(Diagnostic::PortBudgetConflict {
                block: b,
                port: Port::Dequeue,
                detail: format!("the dequeue chain to {} visits it twice", tree.node(*leaf).name),
            });
        }
    }
    for b in &cfg.blocks {
        for p in b.pifos.iter().filter(|p| p.role == Role::Shaping) {
            let name = cfg.pifo_name(p.slot());
            if let Some(other) = b.pifos.iter().find(|q| q.slot() != p.slot()) {
                out.push(Diagnostic::PortBudgetConflict {
                    block: b.id,
                    port: Port::Dequeue,
                    detail: format!(
                        "{name} is dequeued at arbitrary release times, so is {}",
                        cfg.pifo_name(other.slot())
                    ),
                });
            }
            let parent = tree.node(p.node).parent.expect("validated: no shaping at root");
            if block_of(PifoSlot::Sched(parent)) == b.id {
                out.push(Diagnostic::PortBudgetConflict {
                    block: b.id,
                    port: Port::Enqueue,
                    detail: format!(
                        "releases from {name} enqueue into {} in the same block that arrivals enqueue into",
                        tree.node(parent).name
                    ),
                });
            }
        }
    }
    out
}

fn first_repeat(it: impl Iterator<Item = BlockId>) -> Option<BlockId> {
    let mut seen = HashSet::new();
    it.into_iter().find(|b| !seen.insert(*b))
}

/// Depth-first search; 1 = on stack, 2 = done.
fn find_cycle(
    at: PifoLoc,
    edges: &HashMap<PifoLoc, Vec<PifoLoc>>,
    state: &mut HashMap<PifoLoc, u8>,
) -> Option<PifoLoc> {
    match state.get(&at) {
        Some(1) => return Some(at),
        Some(_) => return None,
        None => {}
    }
    state.insert(at, 1);
    for &t in edges.get(&at).into_iter().flatten() {
        if let Some(c) = find_cycle(t, edges, state) {
            state.insert(at, 2);
            return Some(c);
        }
    }
    state.insert(at, 2);
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::TreeSpec;

    const HPFQ: &str = include_str!("../../../configs/hpfq.tree");
    const HSHAPING: &str = include_str!("../../../configs/hshaping.tree");

    fn load(text: &str) -> Arc<SchedTree> {
        Arc::new(TreeSpec::load(text).unwrap())
    }

    #[test]
    fn hpfq_uses_two_blocks() {
        let tree = load(HPFQ);
        let cfg = compile(&tree).unwrap();
        assert_eq!(cfg.blocks.len(), 2);
        assert_eq!(cfg.blocks[0].pifos.len(), 1);
        assert_eq!(cfg.blocks[1].pifos.len(), 2);
        assert_eq!(
            cfg.next_hop[&(PifoLoc::new(0, 0), Popped::Ref(LogicalPifoId(1)))],
            NextHop::DequeueFrom(PifoLoc::new(1, 1))
        );
        assert_eq!(
            cfg.next_hop[&(PifoLoc::new(1, 0), Popped::Packet)],
            NextHop::Transmit
        );
        assert!(check_config(&cfg).is_empty());
    }

    #[test]
    fn shaping_gets_own_block() {
        let tree = load(HSHAPING);
        let cfg = compile(&tree).unwrap();
        assert_eq!(cfg.blocks.len(), 3);
        let right = tree.find("WFQ_Right").unwrap();
        assert_eq!(cfg.locations()[&PifoSlot::Shaping(right)], PifoLoc::new(2, 0));
        assert_eq!(
            cfg.next_hop[&(PifoLoc::new(2, 0), Popped::Ref(LogicalPifoId(1)))],
            NextHop::EnqueueTo(PifoLoc::new(0, 0))
        );
        assert!(check_config(&cfg).is_empty());
    }

    #[test]
    fn single_node_tree() {
        let tree = load("node Root\n  sched stfq\n");
        let cfg = compile(&tree).unwrap();
        assert_eq!(cfg.blocks.len(), 1);
        assert_eq!(
            cfg.next_hop.values().copied().collect::<Vec<_>>(),
            vec![NextHop::Transmit]
        );
    }

    #[test]
    fn block_limit() {
        let tree = load(HSHAPING);
        let opts = CompileOptions { max_blocks: 2 };
        assert_eq!(
            compile_with(&tree, &opts).unwrap_err(),
            CompileError::TooManyBlocks { needed: 3, max: 2 }
        );
    }

    #[test]
    fn text_round_trip() {
        for text in [HPFQ, HSHAPING] {
            let tree = load(text);
            let cfg = compile(&tree).unwrap();
            let back = MeshConfig::from_text(&cfg.to_text(), &tree).unwrap();
            assert_eq!(back, cfg);
        }
        let tree = load(HPFQ);
        let err = MeshConfig::from_text("blocks 1\nblock 0\n  lp 0 sched Nobody\n", &tree).unwrap_err();
        assert_eq!(err.line, 3);
    }

    #[test]
    fn missing_next_hop_reported() {
        let tree = load(HPFQ);
        let mut cfg = compile(&tree).unwrap();
        cfg.next_hop.remove(&(PifoLoc::new(0, 0), Popped::Ref(LogicalPifoId(1))));
        assert_eq!(
            check_config(&cfg),
            vec![Diagnostic::MissingNextHop {
                at: PifoLoc::new(0, 0),
                popped: Popped::Ref(LogicalPifoId(1)),
            }]
        );
    }

    #[test]
    fn dequeue_cycle_reported() {
        let tree = load(HPFQ);
        let mut cfg = compile(&tree).unwrap();
        cfg.next_hop.insert(
            (PifoLoc::new(1, 0), Popped::Ref(LogicalPifoId(0))),
            NextHop::DequeueFrom(PifoLoc::new(0, 0)),
        );
        assert!(check_config(&cfg)
            .iter()
            .any(|d| matches!(d, Diagnostic::DequeueCycle { .. })));
    }

    #[test]
    fn colocated_shaping_conflicts() {
        let tree = load(HSHAPING);
        let mut cfg = compile(&tree).unwrap();
        let right = tree.find("WFQ_Right").unwrap();
        cfg.relocate(PifoSlot::Shaping(right), BlockId(0));
        assert_eq!(cfg.blocks.len(), 2);
        assert_eq!(cfg.locations()[&PifoSlot::Shaping(right)], PifoLoc::new(0, 1));
        let diags = check_config(&cfg);
        let ports: Vec<Port> = diags
            .iter()
            .filter_map(|d| match d {
                Diagnostic::PortBudgetConflict { block, port, .. } if *block == BlockId(0) => Some(*port),
                _ => None,
            })
            .collect();
        assert_eq!(ports, vec![Port::Dequeue, Port::Enqueue]);
        assert_eq!(diags.len(), 2, "{diags:?}");
    }
}
