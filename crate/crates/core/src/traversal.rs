//! Stage 2: depth-first traversal from each source node.
//!
//! The walk carries a current path-id (the branching nodes crossed so far)
//! and a running annotation (the product of edge multiplicities since the
//! last branching node). Reaching a group node records the pair into that
//! node's c-pair list. Crossing into a branching node folds the running
//! annotation into the path-id's count and resets it to one; a branching
//! node reached again under the same path-id only updates the count — the
//! subtree below it has already been explored for this source.
//!
//! With caching disabled (a test-only mode) repeat arrivals re-walk the
//! subtree into a scratch recorder and assert it reproduces the first
//! walk's recordings, so the pruned and unpruned traversals provably agree.

use std::collections::{BTreeMap, HashMap};

use crate::aggregates::{annot_merge, annot_sequential, Annotation};
use crate::datagraph::{DataGraph, NodeId, NodeType};
use crate::error::{Error, Result};
use crate::value::tuple_display;

/// Interned path-id: an ordered list of branching nodes, stored as a parent
/// chain so extending a path never copies it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PathRef(pub u32);

pub const EMPTY_PATH: PathRef = PathRef(0);

#[derive(Clone, Debug)]
struct PathEntry {
    parent: PathRef,
    last: NodeId,
    len: u32,
}

/// Per-traversal table of distinct path-ids.
#[derive(Clone, Debug, Default)]
pub struct PathTable {
    entries: Vec<PathEntry>,
    lookup: HashMap<(PathRef, NodeId), PathRef>,
}

impl PathTable {
    pub fn new() -> PathTable {
        PathTable {
            entries: vec![PathEntry {
                parent: EMPTY_PATH,
                last: NodeId(u32::MAX),
                len: 0,
            }],
            lookup: HashMap::new(),
        }
    }

    /// The path `p ++ [b]`, interned.
    pub fn child(&mut self, p: PathRef, b: NodeId) -> PathRef {
        if let Some(&r) = self.lookup.get(&(p, b)) {
            return r;
        }
        let r = PathRef(self.entries.len() as u32);
        self.entries.push(PathEntry {
            parent: p,
            last: b,
            len: self.entries[p.0 as usize].len + 1,
        });
        self.lookup.insert((p, b), r);
        r
    }

    pub fn len(&self, p: PathRef) -> u32 {
        self.entries[p.0 as usize].len
    }

    pub fn is_empty(&self, p: PathRef) -> bool {
        self.len(p) == 0
    }

    pub fn parent(&self, p: PathRef) -> PathRef {
        self.entries[p.0 as usize].parent
    }

    /// Branching-node sequence, source-first.
    pub fn resolve(&self, p: PathRef) -> Vec<NodeId> {
        let mut seq = Vec::with_capacity(self.len(p) as usize);
        let mut cur = p;
        while self.len(cur) > 0 {
            seq.push(self.entries[cur.0 as usize].last);
            cur = self.parent(cur);
        }
        seq.reverse();
        seq
    }

    /// All nonempty prefixes of `p`, including `p` itself.
    pub fn prefixes(&self, p: PathRef) -> Vec<PathRef> {
        let mut out = Vec::with_capacity(self.len(p) as usize);
        let mut cur = p;
        while self.len(cur) > 0 {
            out.push(cur);
            cur = self.parent(cur);
        }
        out.reverse();
        out
    }

    /// `true` when `prefix` is a (non-strict) prefix of `p`.
    pub fn is_prefix_of(&self, prefix: PathRef, p: PathRef) -> bool {
        let mut cur = p;
        while self.len(cur) > self.len(prefix) {
            cur = self.parent(cur);
        }
        cur == prefix
    }

    /// Ordering used everywhere path-ids are sorted: by length, then
    /// lexicographically over the node sequence.
    pub fn cmp_paths(&self, a: PathRef, b: PathRef) -> std::cmp::Ordering {
        self.len(a)
            .cmp(&self.len(b))
            .then_with(|| self.resolve(a).cmp(&self.resolve(b)))
    }
}

/// A (path-id, group-node annotation) pair recorded at a group node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CPair {
    pub path: PathRef,
    pub annot: Annotation,
}

/// Everything one source traversal learned.
#[derive(Clone, Debug)]
pub struct TraversalOutcome {
    pub source: NodeId,
    /// Per reached group node: c-pairs sorted by path-id, duplicates merged.
    pub cpairs: BTreeMap<NodeId, Vec<CPair>>,
    pub paths: PathTable,
    /// Count per path-id, indexed by `PathRef`; entry 0 is the empty-path
    /// convention C = 1.
    pub path_counts: Vec<Annotation>,
    /// Which non-source group relations were reached.
    pub reached: Vec<bool>,
    pub visits: u64,
    pub edges_walked: u64,
    pub trace: Vec<String>,
}

impl TraversalOutcome {
    pub fn path_count(&self, p: PathRef) -> &Annotation {
        &self.path_counts[p.0 as usize]
    }

    /// Looks up C_p by branching-node value sequence; test convenience.
    pub fn path_count_by_values(&self, g: &DataGraph, seq: &[&[crate::value::Value]]) -> Option<&Annotation> {
        for (i, _) in self.path_counts.iter().enumerate() {
            let r = PathRef(i as u32);
            let nodes = self.paths.resolve(r);
            if nodes.len() == seq.len()
                && nodes
                    .iter()
                    .zip(seq)
                    .all(|(n, vals)| g.node(*n).values.as_ref() == *vals)
            {
                return Some(self.path_count(r));
            }
        }
        None
    }

    /// Canonical view for equality checks across traversals: interning order
    /// does not matter, resolved sequences do.
    pub fn normalized(
        &self,
    ) -> (
        BTreeMap<Vec<NodeId>, Annotation>,
        BTreeMap<NodeId, Vec<(Vec<NodeId>, Annotation)>>,
        Vec<bool>,
    ) {
        let counts = self
            .path_counts
            .iter()
            .enumerate()
            .skip(1)
            .map(|(i, a)| (self.paths.resolve(PathRef(i as u32)), a.clone()))
            .collect();
        let cpairs = self
            .cpairs
            .iter()
            .map(|(n, list)| {
                (
                    *n,
                    list.iter()
                        .map(|cp| (self.paths.resolve(cp.path), cp.annot.clone()))
                        .collect(),
                )
            })
            .collect();
        (counts, cpairs, self.reached.clone())
    }

    /// COUNT-mode conservation check: the number of join-result tuples that
    /// contain this source value, derived from one group relation's bucket.
    pub fn bucket_total(&self, bucket: u16, g: &DataGraph) -> u64 {
        let mut total = 0u64;
        for (&node, list) in &self.cpairs {
            if g.node(node).group_bucket != Some(bucket) {
                continue;
            }
            for cp in list {
                let mut t = cp.annot.count;
                for q in self.paths.prefixes(cp.path) {
                    t *= self.path_count(q).count;
                }
                total += t;
            }
        }
        total
    }
}

#[derive(Clone, Debug)]
pub struct TraversalOptions {
    /// Path-id caching: skip re-walking a subtree already explored under the
    /// same path-id. Disabled only by tests proving the skip is sound.
    pub cache: bool,
    pub trace: bool,
}

impl Default for TraversalOptions {
    fn default() -> Self {
        TraversalOptions {
            cache: true,
            trace: false,
        }
    }
}

/// What a walk records. Fragment sinks capture the recordings of one
/// subtree walk so a replay can be compared against the original.
#[derive(Default)]
struct Sink {
    counts: HashMap<PathRef, Annotation>,
    cpairs: HashMap<(NodeId, PathRef), Annotation>,
    /// First-walk snapshots per path-id; populated only when caching is off.
    snapshots: HashMap<PathRef, Snapshot>,
}

type Snapshot = (
    BTreeMap<PathRef, Annotation>,
    BTreeMap<(NodeId, PathRef), Annotation>,
);

impl Sink {
    fn snapshot(&self) -> Snapshot {
        (
            self.counts.iter().map(|(k, v)| (*k, v.clone())).collect(),
            self.cpairs.iter().map(|(k, v)| (*k, v.clone())).collect(),
        )
    }

    fn absorb(&mut self, frag: Sink) {
        for (k, v) in frag.counts {
            debug_assert!(!self.counts.contains_key(&k), "fragment count collision");
            self.counts.insert(k, v);
        }
        for (k, v) in frag.cpairs {
            debug_assert!(!self.cpairs.contains_key(&k), "fragment c-pair collision");
            self.cpairs.insert(k, v);
        }
    }
}

struct Walker<'g> {
    g: &'g DataGraph,
    paths: PathTable,
    visits: u64,
    edges_walked: u64,
    trace: Vec<String>,
    opts: TraversalOptions,
}

impl<'g> Walker<'g> {
    fn walk(
        &mut self,
        start: NodeId,
        start_path: PathRef,
        start_annot: Annotation,
        sink: &mut Sink,
    ) -> Result<()> {
        let mut stack: Vec<(NodeId, PathRef, Annotation, u32)> = Vec::new();
        stack.push((start, start_path, start_annot, 0));
        while let Some((node, path, annot, depth)) = stack.pop() {
            if depth as usize > self.g.nodes.len() {
                return Err(Error::Internal("cycle detected during traversal".into()));
            }
            self.visits += 1;
            if self.opts.trace {
                let seq = self.paths.resolve(path);
                let rendered: Vec<String> = seq
                    .iter()
                    .map(|n| tuple_display(&self.g.node(*n).values))
                    .collect();
                self.trace.push(format!(
                    "visit({}, [{}], {})",
                    tuple_display(&self.g.node(node).values),
                    rendered.join(","),
                    annot.count
                ));
            }

            let info = self.g.node(node);
            if info.node_type == NodeType::Group {
                sink.cpairs
                    .entry((node, path))
                    .and_modify(|a| *a = annot_merge(a, &annot))
                    .or_insert(annot);
                continue;
            }

            let kind = self.g.agg_kind;
            let first = info.offset as usize;
            // reversed so the explicit stack visits edges in block order
            for k in (0..info.degree as usize).rev() {
                let edge_idx = first + k;
                let edge = self.g.edges[edge_idx];
                self.edges_walked += 1;
                let weight = self.g.edge_annotation(edge_idx, kind);
                let stepped = annot_sequential(&annot, &weight);
                if self.g.node(edge.target).node_type == NodeType::Branching {
                    let p2 = self.paths.child(path, edge.target);
                    if let Some(c) = sink.counts.get_mut(&p2) {
                        *c = annot_merge(c, &stepped);
                        if !self.opts.cache {
                            // replay the already-explored subtree and check it
                            // reproduces the first walk exactly
                            let mut frag = Sink::default();
                            self.walk(edge.target, p2, Annotation::one(kind), &mut frag)?;
                            let replay = frag.snapshot();
                            let original = sink
                                .snapshots
                                .get(&p2)
                                .expect("repeat arrival without first-walk snapshot");
                            assert_eq!(
                                &replay, original,
                                "uncached replay diverged from cached subtree"
                            );
                        }
                    } else {
                        sink.counts.insert(p2, stepped);
                        if self.opts.cache {
                            stack.push((edge.target, p2, Annotation::one(kind), depth + 1));
                        } else {
                            let mut frag = Sink::default();
                            self.walk(edge.target, p2, Annotation::one(kind), &mut frag)?;
                            sink.snapshots.insert(p2, frag.snapshot());
                            sink.absorb(frag);
                        }
                    }
                } else {
                    stack.push((edge.target, path, stepped, depth + 1));
                }
            }
        }
        Ok(())
    }
}

/// Runs one full traversal from a source node.
pub fn traverse_from_source(
    g: &DataGraph,
    source: NodeId,
    opts: &TraversalOptions,
) -> Result<TraversalOutcome> {
    assert_eq!(
        g.node(source).node_type,
        NodeType::Source,
        "traversal must start at a source node"
    );
    let kind = g.agg_kind;
    let mut walker = Walker {
        g,
        paths: PathTable::new(),
        visits: 0,
        edges_walked: 0,
        trace: Vec::new(),
        opts: opts.clone(),
    };
    let mut sink = Sink::default();
    walker.walk(source, EMPTY_PATH, Annotation::one(kind), &mut sink)?;

    let mut path_counts = vec![Annotation::one(kind); walker.paths.entries.len()];
    for (p, a) in sink.counts {
        path_counts[p.0 as usize] = a;
    }

    let mut cpairs: BTreeMap<NodeId, Vec<CPair>> = BTreeMap::new();
    for ((node, path), annot) in sink.cpairs {
        cpairs
            .entry(node)
            .or_default()
            .push(CPair { path, annot });
    }
    let mut reached = vec![false; g.group_relation_count];
    for (&node, list) in &mut cpairs {
        list.sort_by(|a, b| walker.paths.cmp_paths(a.path, b.path));
        if let Some(b) = g.node(node).group_bucket {
            reached[b as usize] = true;
        }
    }

    Ok(TraversalOutcome {
        source,
        cpairs,
        paths: walker.paths,
        path_counts,
        reached,
        visits: walker.visits,
        edges_walked: walker.edges_walked,
        trace: walker.trace,
    })
}

/// Source nodes in deterministic (ascending value) order.
pub fn all_sources(g: &DataGraph) -> impl Iterator<Item = NodeId> + '_ {
    g.source_ids.iter().copied()
}
