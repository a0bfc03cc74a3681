//! Stage 1: compiling pre-aggregated relations into the data graph.
//!
//! Every relation contributes one node per distinct x_l value tuple and one
//! per distinct x_r value tuple (multi-attribute tuples become multi-nodes),
//! plus an intra-relation edge per distinct (x_l, x_r) pair whose
//! multiplicity is the number of duplicate rows it absorbs. Join edges with
//! multiplicity 1 connect a parent relation's child-facing nodes to the
//! child's x_l nodes wherever the shared attribute values agree.
//!
//! The finished graph is a DAG in CSR layout: group nodes are sinks, source
//! nodes have no in-edges, and each node's out-edges occupy one contiguous
//! block (intra-relation targets first, then join edges, in ascending
//! target order).

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;

use crate::aggregates::{AggKind, Annotation};
use crate::error::{Error, Result};
use crate::query_model::{parent_join_side, QueryPlan, RelType, Side};
use crate::relstore::{preaggregate_annotated, Relation};
use crate::sqlfront::Aggregate;
use crate::value::{tuple_display, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn idx(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeType {
    Source,
    Group,
    Intermediate,
    Branching,
}

impl NodeType {
    pub fn label(self) -> &'static str {
        match self {
            NodeType::Source => "SOURCE",
            NodeType::Group => "GROUP",
            NodeType::Intermediate => "INTERMEDIATE",
            NodeType::Branching => "BRANCHING",
        }
    }
}

#[derive(Clone, Debug)]
pub struct GraphNode {
    /// Value tuple, ordered by the owning side's attribute order.
    pub values: Box<[Value]>,
    /// Relation index in the plan.
    pub rel: u16,
    pub side: Side,
    pub node_type: NodeType,
    /// For GROUP nodes: index into the non-source group-relation order,
    /// i.e. the result-generation bucket this sink belongs to.
    pub group_bucket: Option<u16>,
    pub offset: u32,
    pub degree: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GraphEdge {
    pub target: NodeId,
    pub multiplicity: u64,
}

/// The compiled join: typed value nodes and multiplicity-weighted edges.
#[derive(Clone, Debug)]
pub struct DataGraph {
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<GraphEdge>,
    /// Fold of the aggregated attribute on the agg relation's intra edges,
    /// keyed by edge index. Empty for COUNT.
    pub edge_annotations: HashMap<u32, Annotation>,
    /// SOURCE nodes in ascending value order.
    pub source_ids: Vec<NodeId>,
    /// Number of non-source group relations (= result buckets per source).
    pub group_relation_count: usize,
    pub aliases: Vec<String>,
    pub agg_kind: AggKind,
    intra_edge_count: u64,
    join_edge_count: u64,
    pruned_nodes: u64,
}

impl DataGraph {
    pub fn out_edges(&self, n: NodeId) -> &[GraphEdge] {
        let node = &self.nodes[n.idx()];
        &self.edges[node.offset as usize..(node.offset + node.degree) as usize]
    }

    pub fn node(&self, n: NodeId) -> &GraphNode {
        &self.nodes[n.idx()]
    }

    /// Annotation-valued weight of an edge (by index into `edges`).
    pub fn edge_annotation(&self, edge_idx: usize, kind: AggKind) -> Annotation {
        match self.edge_annotations.get(&(edge_idx as u32)) {
            Some(a) => a.clone(),
            None => Annotation::from_multiplicity(self.edges[edge_idx].multiplicity, kind),
        }
    }

    /// Linear-scan lookup by origin and values; intended for tests and
    /// debugging, not the hot path.
    pub fn find_node(&self, alias: &str, side: Side, values: &[Value]) -> Option<NodeId> {
        let rel = self.aliases.iter().position(|a| a == alias)? as u16;
        self.nodes
            .iter()
            .position(|n| n.rel == rel && n.side == side && n.values.as_ref() == values)
            .map(|i| NodeId(i as u32))
    }

    /// One line per edge: `srcvalues -> dstvalues [m=K] (SRC->DST)`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (i, node) in self.nodes.iter().enumerate() {
            for e in self.out_edges(NodeId(i as u32)) {
                let dst = self.node(e.target);
                out.push_str(&format!(
                    "{} -> {} [m={}] ({}->{})\n",
                    tuple_display(&node.values),
                    tuple_display(&dst.values),
                    e.multiplicity,
                    node.node_type.label(),
                    dst.node_type.label(),
                ));
            }
        }
        out
    }

    pub fn stats(&self) -> GraphStats {
        graph_stats(self)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GraphStats {
    pub nodes: u64,
    pub edges: u64,
    pub intra_edges: u64,
    pub join_edges: u64,
    pub nodes_by_type: BTreeMap<String, u64>,
    pub pruned_nodes: u64,
    /// nodes + edges at fixed record sizes, plus value storage.
    pub estimated_bytes: u64,
}

pub fn graph_stats(g: &DataGraph) -> GraphStats {
    let mut by_type: BTreeMap<String, u64> = BTreeMap::new();
    let mut value_bytes = 0u64;
    for n in &g.nodes {
        *by_type.entry(n.node_type.label().to_owned()).or_insert(0) += 1;
        value_bytes += (n.values.len() * std::mem::size_of::<Value>()) as u64;
    }
    GraphStats {
        nodes: g.nodes.len() as u64,
        edges: g.edges.len() as u64,
        intra_edges: g.intra_edge_count,
        join_edges: g.join_edge_count,
        nodes_by_type: by_type,
        pruned_nodes: g.pruned_nodes,
        estimated_bytes: (g.nodes.len() * std::mem::size_of::<GraphNode>()
            + g.edges.len() * std::mem::size_of::<GraphEdge>()) as u64
            + value_bytes,
    }
}

/// Builds the data graph for a multi-relation query. Relations are loaded
/// in BFS order so every join edge points at an already-known child the
/// moment the child relation is processed.
pub fn build_graph(
    rels: &BTreeMap<String, Relation>,
    plan: &QueryPlan,
    aggregate: &Aggregate,
) -> Result<DataGraph> {
    let h = &plan.hypergraph;
    let kind = aggregate.kind();
    let agg_rel: Option<usize> = aggregate
        .attr()
        .map(|a| {
            h.aliases
                .iter()
                .position(|al| al == a.alias())
                .ok_or_else(|| Error::UnknownAlias(a.alias().to_owned()))
        })
        .transpose()?;

    let mut nodes: Vec<GraphNode> = Vec::new();
    let mut out: Vec<Vec<(GraphEdge, Option<Annotation>)>> = Vec::new();
    // node index per relation and side, keyed by value tuple
    let mut l_index: Vec<BTreeMap<Vec<Value>, NodeId>> = vec![BTreeMap::new(); h.aliases.len()];
    let mut r_index: Vec<BTreeMap<Vec<Value>, NodeId>> = vec![BTreeMap::new(); h.aliases.len()];
    let mut intra_edge_count = 0u64;
    let mut join_edge_count = 0u64;

    for &rel in &plan.tree.bfs_order {
        let split = &plan.split.rels[rel];
        if split.x_l.is_empty() || split.x_r.is_empty() {
            return Err(Error::Plan(format!(
                "relation `{}` has an empty attribute side; single-relation \
                 queries bypass the graph",
                h.aliases[rel]
            )));
        }
        let relation = rels
            .get(&h.aliases[rel])
            .ok_or_else(|| Error::UnknownAlias(h.aliases[rel].clone()))?;

        let col_of = |v: usize| -> Result<String> {
            h.column_of(v, rel)
                .map(str::to_owned)
                .ok_or_else(|| Error::Plan(format!(
                    "vertex `{}` has no column in relation `{}`",
                    h.display(v),
                    h.aliases[rel]
                )))
        };
        let mut cols: Vec<String> = Vec::with_capacity(split.x_l.len() + split.x_r.len());
        for &v in split.x_l.iter().chain(split.x_r.iter()) {
            cols.push(col_of(v)?);
        }
        let fold_col = match agg_rel {
            Some(ar) if ar == rel => Some(aggregate.attr().unwrap().column.clone()),
            _ => None,
        };
        let counted = preaggregate_annotated(relation, &cols, fold_col.as_deref(), kind)?;

        let nl = split.x_l.len();
        let (l_type, r_type) = node_types(plan, rel);
        let bucket = group_bucket(plan, rel);

        // create nodes, each side in ascending value order
        let mut l_vals: BTreeSet<&[Value]> = BTreeSet::new();
        let mut r_vals: BTreeSet<&[Value]> = BTreeSet::new();
        for (row, _) in &counted {
            l_vals.insert(&row[..nl]);
            r_vals.insert(&row[nl..]);
        }
        for vals in l_vals {
            let id = NodeId(nodes.len() as u32);
            nodes.push(GraphNode {
                values: vals.to_vec().into_boxed_slice(),
                rel: rel as u16,
                side: Side::L,
                node_type: l_type,
                group_bucket: None,
                offset: 0,
                degree: 0,
            });
            out.push(Vec::new());
            l_index[rel].insert(vals.to_vec(), id);
        }
        for vals in r_vals {
            let id = NodeId(nodes.len() as u32);
            nodes.push(GraphNode {
                values: vals.to_vec().into_boxed_slice(),
                rel: rel as u16,
                side: Side::R,
                node_type: r_type,
                group_bucket: (r_type == NodeType::Group).then_some(bucket),
                offset: 0,
                degree: 0,
            });
            out.push(Vec::new());
            r_index[rel].insert(vals.to_vec(), id);
        }

        // intra-relation edges carry the pre-aggregated duplicate count
        let is_agg_rel = fold_col.is_some();
        for (row, annot) in &counted {
            let l = l_index[rel][&row[..nl]];
            let r = r_index[rel][&row[nl..]];
            let edge = GraphEdge {
                target: r,
                multiplicity: annot.count,
            };
            let payload = (is_agg_rel && kind != AggKind::Count).then(|| annot.clone());
            out[l.idx()].push((edge, payload));
            intra_edge_count += 1;
        }

        // join edges from the parent's child-facing side, multiplicity 1
        if let Some(parent) = plan.tree.parent[rel] {
            let shared: Vec<usize> = {
                let mut s: Vec<usize> = h.edges[rel]
                    .intersection(&h.edges[parent])
                    .copied()
                    .collect();
                s.sort_by(|&a, &b| h.display(a).cmp(h.display(b)));
                s
            };
            let pside = parent_join_side(&plan.split.rels[parent]);
            let parent_attrs = match pside {
                Side::L => &plan.split.rels[parent].x_l,
                Side::R => &plan.split.rels[parent].x_r,
            };
            let ppos = positions_of(&shared, parent_attrs, h, rel)?;
            let cpos = positions_of(&shared, &split.x_l, h, rel)?;

            let mut by_key: HashMap<Vec<Value>, Vec<NodeId>> = HashMap::new();
            for (vals, &id) in &l_index[rel] {
                let key: Vec<Value> = cpos.iter().map(|&i| vals[i].clone()).collect();
                by_key.entry(key).or_default().push(id);
            }
            let parent_nodes = match pside {
                Side::L => &l_index[parent],
                Side::R => &r_index[parent],
            };
            for (vals, &pid) in parent_nodes {
                let key: Vec<Value> = ppos.iter().map(|&i| vals[i].clone()).collect();
                if let Some(targets) = by_key.get(&key) {
                    for &t in targets {
                        out[pid.idx()].push((
                            GraphEdge {
                                target: t,
                                multiplicity: 1,
                            },
                            None,
                        ));
                        join_edge_count += 1;
                    }
                }
            }
        }
    }

    // CSR finalization. Each buffer already holds intra edges first (in
    // ascending target-value order) followed by join edges appended in child
    // BFS order, which is ascending target id since children get larger ids.
    let mut edges: Vec<GraphEdge> = Vec::new();
    let mut edge_annotations: HashMap<u32, Annotation> = HashMap::new();
    for (i, buf) in out.iter_mut().enumerate() {
        let node = &mut nodes[i];
        node.offset = edges.len() as u32;
        node.degree = buf.len() as u32;
        for (e, annot) in buf.drain(..) {
            if let Some(a) = annot {
                edge_annotations.insert(edges.len() as u32, a);
            }
            edges.push(e);
        }
    }

    let source_ids: Vec<NodeId> = nodes
        .iter()
        .enumerate()
        .filter(|(_, n)| n.node_type == NodeType::Source)
        .map(|(i, _)| NodeId(i as u32))
        .collect();

    Ok(DataGraph {
        nodes,
        edges,
        edge_annotations,
        source_ids,
        group_relation_count: plan.split.group_rels.len() - 1,
        aliases: h.aliases.clone(),
        agg_kind: kind,
        intra_edge_count,
        join_edge_count,
        pruned_nodes: 0,
    })
}

fn positions_of(
    shared: &[usize],
    attrs: &[usize],
    h: &crate::query_model::QueryHypergraph,
    rel: usize,
) -> Result<Vec<usize>> {
    shared
        .iter()
        .map(|v| {
            attrs.iter().position(|a| a == v).ok_or_else(|| {
                Error::Plan(format!(
                    "shared attribute `{}` missing from node values of `{}`'s parent",
                    h.display(*v),
                    h.aliases[rel]
                ))
            })
        })
        .collect()
}

fn node_types(plan: &QueryPlan, rel: usize) -> (NodeType, NodeType) {
    let split = &plan.split.rels[rel];
    let is_root = rel == plan.tree.root;
    let l = if is_root {
        NodeType::Source
    } else if split.branch_side == Some(Side::L) {
        NodeType::Branching
    } else {
        NodeType::Intermediate
    };
    let r = if !is_root && split.types.contains(&RelType::Group) {
        NodeType::Group
    } else if split.branch_side == Some(Side::R) {
        NodeType::Branching
    } else {
        NodeType::Intermediate
    };
    (l, r)
}

fn group_bucket(plan: &QueryPlan, rel: usize) -> u16 {
    plan.split
        .group_rels
        .iter()
        .position(|&r| r == rel)
        .map(|p| p.saturating_sub(1) as u16)
        .unwrap_or(u16::MAX)
}

/// Removes nodes unreachable from any source. Sources themselves are always
/// kept. Result-invariant: unreachable nodes can never contribute a group.
pub fn prune(g: &DataGraph) -> DataGraph {
    let mut reachable = vec![false; g.nodes.len()];
    let mut stack: Vec<NodeId> = g.source_ids.clone();
    for s in &stack {
        reachable[s.idx()] = true;
    }
    while let Some(n) = stack.pop() {
        for e in g.out_edges(n) {
            if !reachable[e.target.idx()] {
                reachable[e.target.idx()] = true;
                stack.push(e.target);
            }
        }
    }

    let mut remap: Vec<Option<NodeId>> = vec![None; g.nodes.len()];
    let mut kept = 0u32;
    for (i, &r) in reachable.iter().enumerate() {
        if r {
            remap[i] = Some(NodeId(kept));
            kept += 1;
        }
    }

    let mut nodes = Vec::with_capacity(kept as usize);
    let mut edges = Vec::new();
    let mut edge_annotations = HashMap::new();
    let mut intra = 0u64;
    let mut join = 0u64;
    for (i, node) in g.nodes.iter().enumerate() {
        if remap[i].is_none() {
            continue;
        }
        let mut n = node.clone();
        n.offset = edges.len() as u32;
        n.degree = node.degree;
        for (k, e) in g.out_edges(NodeId(i as u32)).iter().enumerate() {
            let old_idx = node.offset as usize + k;
            let target = remap[e.target.idx()].expect("edge into pruned node");
            if let Some(a) = g.edge_annotations.get(&(old_idx as u32)) {
                edge_annotations.insert(edges.len() as u32, a.clone());
            }
            if g.nodes[e.target.idx()].rel == node.rel {
                intra += 1;
            } else {
                join += 1;
            }
            edges.push(GraphEdge {
                target,
                multiplicity: e.multiplicity,
            });
        }
        nodes.push(n);
    }
    let source_ids = g
        .source_ids
        .iter()
        .map(|s| remap[s.idx()].expect("source pruned"))
        .collect();

    DataGraph {
        nodes,
        edges,
        edge_annotations,
        source_ids,
        group_relation_count: g.group_relation_count,
        aliases: g.aliases.clone(),
        agg_kind: g.agg_kind,
        intra_edge_count: intra,
        join_edge_count: join,
        pruned_nodes: g.pruned_nodes + (g.nodes.len() as u64 - kept as u64),
    }
}
