//! Scheduling trees: nodes pairing a packet predicate with a scheduling
//! transaction and an optional shaping transaction.
//!
//! A packet enters at the leaf whose predicate it matches and walks up to the
//! root. Each node on the walk runs its scheduling transaction and pushes one
//! element into its scheduling PIFO: the packet itself at the leaf, a
//! reference to the child's PIFO above it. A node with a shaping transaction
//! also pushes a reference to itself into its shaping PIFO, and the rest of
//! the walk is suspended until that reference's release time.
//!
//! [`TreeExec`] runs the transactions and decides what to push. Where the
//! elements live is up to the caller: [`SchedTreeState`] keeps them in one
//! behavioral PIFO block, the mesh simulator in compiled blocks.

mod config;
mod state;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::packet::PacketRecord;
use crate::scalar::{Fixed, TxnScalar};
use crate::txn::{Decimal, ExecCtx, FlowKey, Predicate, Program, TxnError, TxnKind, TxnState, UndoLog};

pub use config::{parse_tree_spec, ConfigError, TxnSpec};
pub use state::{DequeueError, EnqueueError, SchedTreeState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A node as written in a tree description, before validation.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeSpec {
    pub name: String,
    pub parent: Option<String>,
    pub predicate: Predicate,
    pub sched: TxnSpec,
    pub shaping: Option<TxnSpec>,
    /// Child name to weight at internal nodes; flow id to weight at leaves.
    pub weights: Vec<(String, Decimal)>,
}

impl NodeSpec {
    pub fn new(name: &str, sched: TxnSpec) -> Self {
        Self {
            name: name.to_string(),
            parent: None,
            predicate: Predicate::always(),
            sched,
            shaping: None,
            weights: Vec::new(),
        }
    }

    pub fn parent(mut self, parent: &str) -> Self {
        self.parent = Some(parent.to_string());
        self
    }

    pub fn predicate(mut self, p: Predicate) -> Self {
        self.predicate = p;
        self
    }

    pub fn shaping(mut self, s: TxnSpec) -> Self {
        self.shaping = Some(s);
        self
    }

    pub fn weight(mut self, key: impl ToString, w: Decimal) -> Self {
        self.weights.push((key.to_string(), w));
        self
    }
}

/// Half-open range `lo..hi` of values a packet field takes; used to check
/// that the leaves partition the packet space.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FieldDomain {
    pub field: String,
    pub lo: i64,
    pub hi: i64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TreeSpec {
    pub nodes: Vec<NodeSpec>,
    pub domain: Vec<FieldDomain>,
    /// Free-form `option` lines, such as a default line rate.
    pub options: BTreeMap<String, String>,
}

/// Largest packet space [`validate_tree`] will enumerate.
pub const MAX_DOMAIN_POINTS: u64 = 1 << 20;

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum TreeError {
    #[error("tree has no nodes")]
    Empty,
    #[error("node '{0}' is declared more than once")]
    DuplicateNode(String),
    #[error("node '{node}' names unknown parent '{parent}'")]
    UnknownParent { node: String, parent: String },
    #[error("node '{0}' is on a cycle")]
    Cycle(String),
    #[error("tree has more than one root: {0:?}")]
    MultipleRoots(Vec<String>),
    #[error("root node '{0}' cannot have a shaping transaction")]
    ShapingAtRoot(String),
    #[error("node '{node}' needs a {expected} transaction")]
    WrongTransactionKind { node: String, expected: TxnKind },
    #[error("node '{node}' has a weight for unknown key '{key}'")]
    UnknownWeightKey { node: String, key: String },
    #[error("domain of field '{0}' is empty or declared twice")]
    BadDomain(String),
    #[error("packet space has more than {MAX_DOMAIN_POINTS} points")]
    DomainTooLarge,
    #[error("packet {packet} matches several leaves: {leaves:?}")]
    MultipleLeafMatch { packet: String, leaves: Vec<String> },
    #[error("packet {packet} matches no leaf")]
    NoLeafMatch { packet: String },
    #[error("packet {packet} matches leaf '{leaf}' but not its ancestor '{ancestor}'")]
    PredicateNotNested {
        packet: String,
        leaf: String,
        ancestor: String,
    },
}

/// Why a packet could not be placed at a leaf.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ClassifyError {
    #[error("packet matches no leaf")]
    NoLeafMatch,
    #[error("packet matches several leaves")]
    MultipleLeafMatch,
}

#[derive(Clone, Debug)]
pub struct Node {
    pub id: NodeId,
    pub name: String,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    pub depth: usize,
    pub predicate: Predicate,
    pub sched: Program,
    pub shaping: Option<Program>,
    /// Parallel to `children`.
    pub child_weights: Vec<Decimal>,
    pub flow_weights: BTreeMap<u64, Decimal>,
    pub sched_text: String,
    pub shaping_text: Option<String>,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// A validated scheduling tree. Node ids are declaration order.
#[derive(Clone, Debug)]
pub struct SchedTree {
    nodes: Vec<Node>,
    root: NodeId,
    leaves: Vec<NodeId>,
    /// Leaf-to-root path per leaf; empty for internal nodes.
    paths: Vec<Vec<NodeId>>,
    domain: Vec<FieldDomain>,
    options: BTreeMap<String, String>,
    /// Leaf predicates read only `flow_id`, so classification can be cached
    /// per flow.
    flow_classified: bool,
}

impl SchedTree {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn leaves(&self) -> &[NodeId] {
        &self.leaves
    }

    pub fn find(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.name == name).map(NodeId)
    }

    /// Nodes from `leaf` up to the root.
    pub fn path(&self, leaf: NodeId) -> &[NodeId] {
        &self.paths[leaf.0]
    }

    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0) + 1
    }

    pub fn has_shaping(&self) -> bool {
        self.nodes.iter().any(|n| n.shaping.is_some())
    }

    pub fn domain(&self) -> &[FieldDomain] {
        &self.domain
    }

    pub fn options(&self) -> &BTreeMap<String, String> {
        &self.options
    }

    pub fn option(&self, key: &str) -> Option<&str> {
        self.options.get(key).map(String::as_str)
    }

    /// PIFO elements a packet entering at `leaf` occupies at once when its
    /// whole path has executed: one per node plus one per shaping node.
    pub fn path_elements(&self, leaf: NodeId) -> usize {
        self.path(leaf)
            .iter()
            .map(|&n| 1 + usize::from(self.node(n).shaping.is_some()))
            .sum()
    }

    /// Leaf-to-root path table, one line per leaf.
    pub fn path_table(&self) -> String {
        let mut out = String::new();
        for &leaf in &self.leaves {
            let names: Vec<&str> = self
                .path(leaf)
                .iter()
                .map(|&n| self.node(n).name.as_str())
                .collect();
            out.push_str(&names.join(" -> "));
            out.push('\n');
        }
        out
    }

    /// The unique leaf whose predicate `pkt` satisfies.
    pub fn leaf_for(&self, pkt: &PacketRecord) -> Result<NodeId, ClassifyError> {
        let mut found = None;
        for &leaf in &self.leaves {
            if predicate_holds(&self.node(leaf).predicate, pkt) {
                if found.is_some() {
                    return Err(ClassifyError::MultipleLeafMatch);
                }
                found = Some(leaf);
            }
        }
        found.ok_or(ClassifyError::NoLeafMatch)
    }
}

/// Predicates that cannot be evaluated, for instance because the packet lacks
/// a field they read, do not match.
fn predicate_holds(p: &Predicate, pkt: &PacketRecord) -> bool {
    p.matches::<Fixed>(pkt).unwrap_or(false)
}

/// Check a tree description and build the validated tree.
pub fn validate_tree(spec: &TreeSpec) -> Result<SchedTree, TreeError> {
    if spec.nodes.is_empty() {
        return Err(TreeError::Empty);
    }
    let mut index: HashMap<&str, usize> = HashMap::new();
    for (i, n) in spec.nodes.iter().enumerate() {
        if index.insert(n.name.as_str(), i).is_some() {
            return Err(TreeError::DuplicateNode(n.name.clone()));
        }
    }
    let mut parents = Vec::with_capacity(spec.nodes.len());
    for n in &spec.nodes {
        parents.push(match &n.parent {
            None => None,
            Some(p) => Some(*index.get(p.as_str()).ok_or_else(|| TreeError::UnknownParent {
                node: n.name.clone(),
                parent: p.clone(),
            })?),
        });
    }
    let count = spec.nodes.len();
    let mut depth = vec![0usize; count];
    for i in 0..count {
        let (mut cur, mut d) = (i, 0);
        while let Some(p) = parents[cur] {
            d += 1;
            if d > count {
                return Err(TreeError::Cycle(spec.nodes[i].name.clone()));
            }
            cur = p;
        }
        depth[i] = d;
    }
    let roots: Vec<usize> = (0..count).filter(|&i| parents[i].is_none()).collect();
    if roots.len() > 1 {
        return Err(TreeError::MultipleRoots(
            roots.iter().map(|&i| spec.nodes[i].name.clone()).collect(),
        ));
    }
    let root = roots[0];

    let mut children = vec![Vec::new(); count];
    for (i, p) in parents.iter().enumerate() {
        if let Some(p) = p {
            children[*p].push(NodeId(i));
        }
    }

    let mut nodes = Vec::with_capacity(count);
    for (i, n) in spec.nodes.iter().enumerate() {
        if n.sched.program.kind != TxnKind::Scheduling {
            return Err(TreeError::WrongTransactionKind {
                node: n.name.clone(),
                expected: TxnKind::Scheduling,
            });
        }
        if let Some(s) = &n.shaping {
            if s.program.kind != TxnKind::Shaping {
                return Err(TreeError::WrongTransactionKind {
                    node: n.name.clone(),
                    expected: TxnKind::Shaping,
                });
            }
            if i == root {
                return Err(TreeError::ShapingAtRoot(n.name.clone()));
            }
        }
        let kids = &children[i];
        let mut child_weights = vec![Decimal::int(1); kids.len()];
        let mut flow_weights = BTreeMap::new();
        for (key, w) in &n.weights {
            let unknown = || TreeError::UnknownWeightKey {
                node: n.name.clone(),
                key: key.clone(),
            };
            if kids.is_empty() {
                let flow: u64 = key.parse().map_err(|_| unknown())?;
                flow_weights.insert(flow, *w);
            } else {
                let pos = kids
                    .iter()
                    .position(|c| spec.nodes[c.0].name == *key)
                    .ok_or_else(unknown)?;
                child_weights[pos] = *w;
            }
        }
        nodes.push(Node {
            id: NodeId(i),
            name: n.name.clone(),
            parent: parents[i].map(NodeId),
            children: kids.clone(),
            depth: depth[i],
            predicate: n.predicate.clone(),
            sched: n.sched.program.clone(),
            shaping: n.shaping.as_ref().map(|s| s.program.clone()),
            child_weights,
            flow_weights,
            sched_text: n.sched.text.clone(),
            shaping_text: n.shaping.as_ref().map(|s| s.text.clone()),
        });
    }

    let leaves: Vec<NodeId> = (0..count)
        .filter(|&i| children[i].is_empty())
        .map(NodeId)
        .collect();
    let mut paths = vec![Vec::new(); count];
    for &leaf in &leaves {
        let mut path = vec![leaf];
        let mut cur = leaf.0;
        while let Some(p) = parents[cur] {
            path.push(NodeId(p));
            cur = p;
        }
        paths[leaf.0] = path;
    }
    let flow_classified = leaves
        .iter()
        .all(|l| nodes[l.0].predicate.fields.iter().all(|f| f == "flow_id"));

    let tree = SchedTree {
        nodes,
        root: NodeId(root),
        leaves,
        paths,
        domain: spec.domain.clone(),
        options: spec.options.clone(),
        flow_classified,
    };
    check_domain(&tree)?;
    Ok(tree)
}

fn domain_packet(domain: &[FieldDomain], values: &[i64]) -> PacketRecord {
    let mut pkt = PacketRecord::new(0, 0, 0, 1);
    for (d, &v) in domain.iter().zip(values) {
        match d.field.as_str() {
            "flow_id" => pkt.flow_id = v as u64,
            "length" => pkt.length = v as u32,
            "arrival" => pkt.arrival = v as u64,
            "id" => pkt.id = v as u64,
            name => pkt.set(name, v),
        }
    }
    pkt
}

fn describe(domain: &[FieldDomain], values: &[i64]) -> String {
    let parts: Vec<String> = domain
        .iter()
        .zip(values)
        .map(|(d, v)| format!("{}={}", d.field, v))
        .collect();
    format!("({})", parts.join(", "))
}

fn check_domain(tree: &SchedTree) -> Result<(), TreeError> {
    let domain = &tree.domain;
    if domain.is_empty() {
        return Ok(());
    }
    let mut points: u64 = 1;
    for (i, d) in domain.iter().enumerate() {
        if d.hi <= d.lo || domain[..i].iter().any(|o| o.field == d.field) {
            return Err(TreeError::BadDomain(d.field.clone()));
        }
        if d.field == "flow_id" && d.lo < 0 {
            return Err(TreeError::BadDomain(d.field.clone()));
        }
        points = points
            .checked_mul((d.hi - d.lo) as u64)
            .filter(|&p| p <= MAX_DOMAIN_POINTS)
            .ok_or(TreeError::DomainTooLarge)?;
    }
    let mut values: Vec<i64> = domain.iter().map(|d| d.lo).collect();
    for _ in 0..points {
        let pkt = domain_packet(domain, &values);
        let matching: Vec<NodeId> = tree
            .leaves
            .iter()
            .copied()
            .filter(|&l| predicate_holds(&tree.node(l).predicate, &pkt))
            .collect();
        match matching.as_slice() {
            [] => {
                return Err(TreeError::NoLeafMatch {
                    packet: describe(domain, &values),
                })
            }
            [leaf] => {
                for &anc in &tree.path(*leaf)[1..] {
                    if !predicate_holds(&tree.node(anc).predicate, &pkt) {
                        return Err(TreeError::PredicateNotNested {
                            packet: describe(domain, &values),
                            leaf: tree.node(*leaf).name.clone(),
                            ancestor: tree.node(anc).name.clone(),
                        });
                    }
                }
            }
            many => {
                return Err(TreeError::MultipleLeafMatch {
                    packet: describe(domain, &values),
                    leaves: many.iter().map(|l| tree.node(*l).name.clone()).collect(),
                })
            }
        }
        // Odometer increment, last field fastest.
        for (v, d) in values.iter_mut().zip(domain).rev() {
            *v += 1;
            if *v < d.hi {
                break;
            }
            *v = d.lo;
        }
    }
    Ok(())
}

/// Which PIFO of a node an element goes into.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PifoSlot {
    Sched(NodeId),
    Shaping(NodeId),
}

/// What a planned push carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PushKind {
    /// The packet itself (leaf scheduling PIFO).
    Packet,
    /// A reference to this node's scheduling PIFO.
    Ref(NodeId),
}

/// Inputs a dequeue hook needs: the field values its transaction left and
/// the flow context it ran in.
#[derive(Clone, Debug, PartialEq)]
pub struct Hook<V> {
    pub fields: Vec<Option<V>>,
    pub flow: FlowKey,
    pub weight: V,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlannedPush<V> {
    pub slot: PifoSlot,
    pub kind: PushKind,
    pub rank: u64,
    /// Present when the node's scheduling transaction has a dequeue hook.
    pub hook: Option<Hook<V>>,
}

/// Where a suspended walk continues: `pos` indexes the leaf's path.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Resume {
    pub leaf: NodeId,
    pub pos: usize,
}

/// The pushes of one uninterrupted stretch of a packet's walk.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment<V> {
    pub pushes: Vec<PlannedPush<V>>,
    /// Set when the walk stopped at a shaping node; the last push is then the
    /// shaping PIFO entry.
    pub suspend: Option<Resume>,
}

/// Transaction state of every node of a tree and the logic that walks
/// packets up the tree.
#[derive(Clone, Debug)]
pub struct TreeExec<V = Fixed> {
    tree: Arc<SchedTree>,
    sched: Vec<TxnState<V>>,
    shaping: Vec<Option<TxnState<V>>>,
    leaf_cache: HashMap<u64, NodeId>,
}

impl<V: TxnScalar> TreeExec<V> {
    pub fn new(tree: Arc<SchedTree>) -> Result<Self, TxnError> {
        let mut sched = Vec::with_capacity(tree.len());
        let mut shaping = Vec::with_capacity(tree.len());
        for n in tree.nodes() {
            sched.push(TxnState::new(&n.sched)?);
            shaping.push(n.shaping.as_ref().map(TxnState::new).transpose()?);
        }
        Ok(Self {
            tree,
            sched,
            shaping,
            leaf_cache: HashMap::new(),
        })
    }

    pub fn tree(&self) -> &Arc<SchedTree> {
        &self.tree
    }

    pub fn sched_state(&self, node: NodeId) -> &TxnState<V> {
        &self.sched[node.0]
    }

    pub fn shaping_state(&self, node: NodeId) -> Option<&TxnState<V>> {
        self.shaping[node.0].as_ref()
    }

    pub fn classify(&mut self, pkt: &PacketRecord) -> Result<NodeId, ClassifyError> {
        if !self.tree.flow_classified {
            return self.tree.leaf_for(pkt);
        }
        if let Some(&leaf) = self.leaf_cache.get(&pkt.flow_id) {
            return Ok(leaf);
        }
        let leaf = self.tree.leaf_for(pkt)?;
        self.leaf_cache.insert(pkt.flow_id, leaf);
        Ok(leaf)
    }

    /// Flow key and `f.weight` for the transaction at position `pos` of a
    /// path.
    fn flow_ctx(&self, path: &[NodeId], pos: usize, pkt: &PacketRecord) -> Result<(FlowKey, V), TxnError> {
        let node = self.tree.node(path[pos]);
        let (key, w) = if pos == 0 {
            let w = node.flow_weights.get(&pkt.flow_id).copied().or_else(|| {
                pkt.fields.get("weight").map(|&w| Decimal::int(w))
            });
            (pkt.flow_id, w.unwrap_or(Decimal::int(1)))
        } else {
            let child = path[pos - 1];
            let i = node.children.iter().position(|&c| c == child).unwrap();
            (child.0 as FlowKey, node.child_weights[i])
        };
        let w = w
            .to_scalar()
            .ok_or_else(|| TxnError::Arithmetic("weight out of range".into()))?;
        Ok((key, w))
    }

    /// Walk `pkt` from position `pos` of `leaf`'s path toward the root,
    /// stopping after the first shaping node.
    ///
    /// All or nothing: on error no transaction state changes and `pkt` is
    /// untouched.
    pub fn run_segment(
        &mut self,
        pkt: &mut PacketRecord,
        resume: Resume,
        now: u64,
    ) -> Result<Segment<V>, TxnError> {
        let tree = Arc::clone(&self.tree);
        let path = tree.path(resume.leaf);
        let mut work = pkt.clone();
        let mut logs: Vec<(PifoSlot, UndoLog<V>)> = Vec::new();
        let mut pushes = Vec::new();
        let mut suspend = None;
        let result = (|| -> Result<(), TxnError> {
            for pos in resume.pos..path.len() {
                let id = path[pos];
                let node = tree.node(id);
                let (flow, weight) = self.flow_ctx(path, pos, &work)?;
                let ctx = ExecCtx::new(now, flow).with_weight(weight);
                let (e, log) = node
                    .sched
                    .execute_logged(&mut self.sched[id.0], &mut work, ctx)?;
                logs.push((PifoSlot::Sched(id), log));
                pushes.push(PlannedPush {
                    slot: PifoSlot::Sched(id),
                    kind: if pos == 0 { PushKind::Packet } else { PushKind::Ref(path[pos - 1]) },
                    rank: e.rank,
                    hook: node.sched.has_dequeue_hook().then(|| Hook {
                        fields: e.fields,
                        flow,
                        weight,
                    }),
                });
                if let Some(shaping) = &node.shaping {
                    let state = self.shaping[id.0].as_mut().unwrap();
                    let (e, log) = shaping.execute_logged(state, &mut work, ctx)?;
                    logs.push((PifoSlot::Shaping(id), log));
                    pushes.push(PlannedPush {
                        slot: PifoSlot::Shaping(id),
                        kind: PushKind::Ref(id),
                        rank: e.rank,
                        hook: None,
                    });
                    suspend = Some(Resume {
                        leaf: resume.leaf,
                        pos: pos + 1,
                    });
                    break;
                }
            }
            Ok(())
        })();
        if let Err(e) = result {
            for (slot, log) in logs.into_iter().rev() {
                match slot {
                    PifoSlot::Sched(n) => self.sched[n.0].rollback(log),
                    PifoSlot::Shaping(n) => self.shaping[n.0].as_mut().unwrap().rollback(log),
                }
            }
            return Err(e);
        }
        *pkt = work;
        Ok(Segment { pushes, suspend })
    }

    /// Pushes that complete a walk without running transactions, each ranked
    /// last. Used when a resumed walk fails so the buffered elements below
    /// stay reachable from the root.
    pub fn fallback_segment(&self, resume: Resume) -> Segment<V> {
        let path = self.tree.path(resume.leaf);
        let pushes = (resume.pos.max(1)..path.len())
            .map(|pos| PlannedPush {
                slot: PifoSlot::Sched(path[pos]),
                kind: PushKind::Ref(path[pos - 1]),
                rank: u64::MAX,
                hook: None,
            })
            .collect();
        Segment {
            pushes,
            suspend: None,
        }
    }

    /// Run `node`'s dequeue hook for an element it ranked.
    pub fn fire_hook(&mut self, node: NodeId, hook: &Hook<V>, now: u64) -> Result<(), TxnError> {
        let ctx = ExecCtx::new(now, hook.flow).with_weight(hook.weight);
        let prog = &self.tree.nodes[node.0].sched;
        prog.run_dequeue_hook(&mut self.sched[node.0], &hook.fields, ctx)
    }
}
