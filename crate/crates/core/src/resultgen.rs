//! Stage 3: turning per-source traversal outcomes into output groups.
//!
//! Reached group nodes are bucketed per group relation (a source that
//! missed a whole relation contributes nothing), each bucket's c-pair
//! lists are k-way merged into one path-ordered list, the lists are
//! prefix-joined pairwise — two tuples combine when one path-id is a
//! prefix of the other — and every surviving combination becomes an output
//! group once each distinct path-id's count has been multiplied in exactly
//! once.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::time::Instant;

use crate::aggregates::{annot_merge, annot_parallel, finalize, AggValue, Annotation};
use crate::baseline;
use crate::datagraph::{build_graph, prune, DataGraph, NodeId};
use crate::error::{Error, Result};
use crate::query_model::{plan_query, QueryPlan};
use crate::relstore::{preaggregate_annotated, Relation};
use crate::sqlfront::QuerySpec;
use crate::stats::RunStats;
use crate::traversal::{traverse_from_source, PathRef, TraversalOptions, TraversalOutcome};
use crate::value::Value;

/// A partial output tuple flowing through the prefix-join.
#[derive(Clone, Debug)]
pub struct FTuple {
    /// Contributing group nodes, at most one per group relation.
    pub nodes: Vec<NodeId>,
    /// Representative path-id: the shortest surviving one.
    pub path: PathRef,
    pub annot: Annotation,
    /// Full path-ids of every c-pair merged in.
    pub constituents: Vec<PathRef>,
    /// Path-ids whose count has already been multiplied into `annot`.
    pub consumed: Vec<PathRef>,
}

/// One output group.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupResult {
    /// Group values in the query's GROUP BY order.
    pub group_values: Vec<Value>,
    pub value: AggValue,
}

impl GroupResult {
    pub fn count(&self) -> Option<i64> {
        match self.value {
            AggValue::Int(i) => Some(i),
            _ => None,
        }
    }
}

/// Splits the reached group nodes into one bucket per non-source group
/// relation. Returns `None` when some group relation was never reached: no
/// complete combination exists and the whole source is skipped.
pub fn bucketize(outcome: &TraversalOutcome, g: &DataGraph) -> Option<Vec<Vec<NodeId>>> {
    if outcome.reached.iter().any(|r| !r) {
        return None;
    }
    let mut buckets: Vec<Vec<NodeId>> = vec![Vec::new(); g.group_relation_count];
    for &node in outcome.cpairs.keys() {
        let b = g.node(node).group_bucket.expect("c-pair at non-group node");
        buckets[b as usize].push(node);
    }
    Some(buckets)
}

#[derive(PartialEq, Eq, PartialOrd, Ord)]
struct MergeKey {
    path_len: u32,
    path_seq: Vec<NodeId>,
    node: NodeId,
}

/// K-way-merges the bucket's per-node c-pair lists (each already sorted by
/// path-id) into one globally ordered `FTuple` list. Tuples from different
/// nodes with equal path-ids stay distinct.
pub fn merge_bucket(bucket: &[NodeId], outcome: &TraversalOutcome) -> Vec<FTuple> {
    let mut heap: BinaryHeap<Reverse<(MergeKey, usize, usize)>> = BinaryHeap::new();
    let lists: Vec<&[crate::traversal::CPair]> = bucket
        .iter()
        .map(|n| outcome.cpairs[n].as_slice())
        .collect();
    let key = |list_idx: usize, pos: usize| -> MergeKey {
        let cp = &lists[list_idx][pos];
        MergeKey {
            path_len: outcome.paths.len(cp.path),
            path_seq: outcome.paths.resolve(cp.path),
            node: bucket[list_idx],
        }
    };
    for (i, list) in lists.iter().enumerate() {
        if !list.is_empty() {
            heap.push(Reverse((key(i, 0), i, 0)));
        }
    }
    let mut out = Vec::new();
    while let Some(Reverse((_, list_idx, pos))) = heap.pop() {
        let cp = &lists[list_idx][pos];
        out.push(FTuple {
            nodes: vec![bucket[list_idx]],
            path: cp.path,
            annot: cp.annot.clone(),
            constituents: vec![cp.path],
            consumed: Vec::new(),
        });
        if pos + 1 < lists[list_idx].len() {
            heap.push(Reverse((key(list_idx, pos + 1), list_idx, pos + 1)));
        }
    }
    out
}

fn consume(t: &mut FTuple, p: PathRef, outcome: &TraversalOutcome) {
    if outcome.paths.is_empty(p) || t.consumed.contains(&p) {
        return;
    }
    t.annot = annot_parallel(&t.annot, outcome.path_count(p));
    t.consumed.push(p);
}

/// Prefix-joins the per-bucket lists pairwise, longest path-ids first, then
/// multiplies in any still-unconsumed prefix counts.
pub fn prefix_join(mut lists: Vec<Vec<FTuple>>, outcome: &TraversalOutcome) -> Vec<FTuple> {
    if lists.iter().any(|l| l.is_empty()) {
        return Vec::new();
    }
    // join order: path-id length decreasing, then list size increasing
    lists.sort_by(|a, b| {
        let la = outcome.paths.len(a[0].path);
        let lb = outcome.paths.len(b[0].path);
        lb.cmp(&la).then(a.len().cmp(&b.len()))
    });

    let mut acc = lists.remove(0);
    for next in lists {
        acc = join_pair(acc, next, outcome);
        if acc.is_empty() {
            return acc;
        }
    }
    for t in &mut acc {
        for p in t.constituents.clone() {
            for q in outcome.paths.prefixes(p) {
                consume(t, q, outcome);
            }
        }
        debug_assert!(single_consumption_holds(t, outcome));
    }
    acc
}

/// Every nonempty prefix of every constituent path-id was consumed exactly
/// once. Checked in debug builds after finalization.
fn single_consumption_holds(t: &FTuple, outcome: &TraversalOutcome) -> bool {
    let mut want: Vec<PathRef> = t
        .constituents
        .iter()
        .flat_map(|&p| outcome.paths.prefixes(p))
        .collect();
    want.sort();
    want.dedup();
    let mut got = t.consumed.clone();
    got.sort();
    let deduped_len = {
        let mut d = got.clone();
        d.dedup();
        d.len()
    };
    deduped_len == got.len() && got == want
}

fn join_pair(a: Vec<FTuple>, b: Vec<FTuple>, outcome: &TraversalOutcome) -> Vec<FTuple> {
    // the side with longer path-ids gets truncated down to the other's length
    let (long, short) = if outcome.paths.len(a[0].path) >= outcome.paths.len(b[0].path) {
        (a, b)
    } else {
        (b, a)
    };
    let short_len = outcome.paths.len(short[0].path);

    let mut short_by_path: BTreeMap<Vec<NodeId>, Vec<&FTuple>> = BTreeMap::new();
    for t in &short {
        debug_assert_eq!(outcome.paths.len(t.path), short_len);
        short_by_path
            .entry(outcome.paths.resolve(t.path))
            .or_default()
            .push(t);
    }

    let mut out = Vec::new();
    for t in &long {
        let mut p = t.path;
        while outcome.paths.len(p) > short_len {
            p = outcome.paths.parent(p);
        }
        let Some(matches) = short_by_path.get(&outcome.paths.resolve(p)) else {
            continue;
        };
        for m in matches {
            debug_assert!(
                t.nodes.iter().all(|n| !m.nodes.contains(n)),
                "two nodes from one group relation in a combination"
            );
            let mut combined = FTuple {
                nodes: t.nodes.iter().chain(&m.nodes).copied().collect(),
                path: m.path, // the shorter path-id survives
                annot: annot_parallel(&t.annot, &m.annot),
                constituents: t.constituents.iter().chain(&m.constituents).copied().collect(),
                consumed: t.consumed.iter().chain(&m.consumed).copied().collect(),
            };
            combined.consumed.sort();
            combined.consumed.dedup();
            combined.nodes.sort();
            consume(&mut combined, t.path, outcome);
            consume(&mut combined, m.path, outcome);
            out.push(combined);
        }
    }
    out.sort_by(|x, y| {
        outcome
            .paths
            .cmp_paths(x.path, y.path)
            .then_with(|| x.nodes.cmp(&y.nodes))
    });
    out
}

/// Where each GROUP BY column lives: which relation's node, and at which
/// position inside that node's value tuple.
struct GroupLayout {
    /// (relation index, value position); the root relation reads from the
    /// source node.
    slots: Vec<(usize, usize)>,
    root: usize,
}

fn group_layout(spec: &QuerySpec, plan: &QueryPlan) -> Result<GroupLayout> {
    let h = &plan.hypergraph;
    let mut slots = Vec::with_capacity(spec.group_by.len());
    for gref in &spec.group_by {
        let rel = h
            .aliases
            .iter()
            .position(|a| a == gref.alias())
            .ok_or_else(|| Error::UnknownAlias(gref.alias().to_owned()))?;
        let vertex = h
            .vertices
            .iter()
            .position(|v| {
                v.group_owner == Some(rel)
                    && v.members
                        .iter()
                        .any(|(a, c)| a == gref.alias() && c == &gref.column)
            })
            .ok_or_else(|| Error::Plan(format!("group attribute {gref} has no vertex")))?;
        let side = if rel == plan.tree.root {
            &plan.split.rels[rel].x_l
        } else {
            &plan.split.rels[rel].x_r
        };
        let pos = side
            .iter()
            .position(|&v| v == vertex)
            .ok_or_else(|| Error::Plan(format!("group attribute {gref} not on its sink side")))?;
        slots.push((rel, pos));
    }
    Ok(GroupLayout {
        slots,
        root: plan.tree.root,
    })
}

/// Combines joined tuples into final groups for one source: combinations
/// with equal group values merge, groups come out value-sorted.
fn emit_groups(
    source: NodeId,
    joined: Vec<FTuple>,
    layout: &GroupLayout,
    g: &DataGraph,
) -> Vec<GroupResult> {
    let mut groups: BTreeMap<Vec<Value>, Annotation> = BTreeMap::new();
    let source_node = g.node(source);
    for t in joined {
        let values: Vec<Value> = layout
            .slots
            .iter()
            .map(|&(rel, pos)| {
                if rel == layout.root {
                    source_node.values[pos].clone()
                } else {
                    let node = t
                        .nodes
                        .iter()
                        .find(|&&n| g.node(n).rel as usize == rel)
                        .expect("combination missing a group relation");
                    g.node(*node).values[pos].clone()
                }
            })
            .collect();
        groups
            .entry(values)
            .and_modify(|a| *a = annot_merge(a, &t.annot))
            .or_insert(t.annot);
    }
    groups
        .into_iter()
        .map(|(group_values, annot)| {
            debug_assert!(annot.count > 0, "zero-count group emitted");
            GroupResult {
                value: finalize(&annot, g.agg_kind),
                group_values,
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Engine entry points
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Engine {
    JoinAgg,
    Naive,
    PreAgg,
}

impl Engine {
    pub fn parse(s: &str) -> Result<Engine> {
        match s.to_ascii_lowercase().as_str() {
            "joinagg" => Ok(Engine::JoinAgg),
            "naive" => Ok(Engine::Naive),
            "preagg" => Ok(Engine::PreAgg),
            other => Err(Error::InvalidQuery(format!("unknown engine `{other}`"))),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Engine::JoinAgg => "joinagg",
            Engine::Naive => "naive",
            Engine::PreAgg => "preagg",
        }
    }
}

#[derive(Clone, Debug)]
pub struct EngineOptions {
    /// Decomposition root override (must name a group relation).
    pub root: Option<String>,
    /// Per-source parallelism; 1 keeps everything on the calling thread.
    pub threads: usize,
    pub trace: bool,
    /// Path-id caching, on in production; tests turn it off to prove the
    /// pruned traversal is equivalent.
    pub cache: bool,
    /// Drop nodes unreachable from any source after loading.
    pub prune: bool,
}

impl Default for EngineOptions {
    fn default() -> Self {
        EngineOptions {
            root: None,
            threads: 1,
            trace: false,
            cache: true,
            prune: true,
        }
    }
}

/// Binds the spec against the loaded relations and applies its implicit
/// column copies, yielding the catalog the executors consume.
pub fn prepare(
    spec: &QuerySpec,
    rels: &BTreeMap<String, Relation>,
) -> Result<(QuerySpec, BTreeMap<String, Relation>)> {
    let mut spec = spec.clone();
    let schemas: BTreeMap<String, Vec<String>> = rels
        .iter()
        .map(|(alias, r)| (alias.clone(), r.columns.clone()))
        .collect();
    spec.bind(&schemas)?;
    let mut catalog = BTreeMap::new();
    for decl in &spec.relations {
        let rel = rels
            .get(&decl.alias)
            .ok_or_else(|| Error::UnknownAlias(decl.alias.clone()))?;
        catalog.insert(decl.alias.clone(), rel.with_alias(decl.alias.clone()));
    }
    for cc in &spec.column_copies {
        let rel = catalog.get_mut(&cc.alias).expect("copy on unknown alias");
        *rel = rel.with_copied_column(&cc.source_column, &cc.copy_column)?;
    }
    Ok((spec, catalog))
}

/// A query over a single relation needs no graph: it is exactly a
/// pre-aggregation over the group columns.
fn run_single_relation(
    spec: &QuerySpec,
    rels: &BTreeMap<String, Relation>,
    stats: &mut RunStats,
) -> Result<Vec<GroupResult>> {
    let alias = &spec.relations[0].alias;
    let rel = rels
        .get(alias)
        .ok_or_else(|| Error::UnknownAlias(alias.clone()))?;
    let cols: Vec<String> = spec.group_by.iter().map(|g| g.column.clone()).collect();
    let kind = spec.aggregate.kind();
    let fold = spec.aggregate.attr().map(|a| a.column.clone());
    let started = Instant::now();
    let rows = preaggregate_annotated(rel, &cols, fold.as_deref(), kind)?;
    let results: Vec<GroupResult> = rows
        .into_iter()
        .map(|(group_values, annot)| GroupResult {
            value: finalize(&annot, kind),
            group_values,
        })
        .collect();
    stats.stage("preaggregate", started, Some(results.len() as u64));
    stats.set("output_groups", results.len() as u64);
    Ok(results)
}

/// Runs the three-stage graph engine end to end: plan, load the data graph,
/// then per source traverse / bucket / merge / prefix-join / emit. Results
/// are sorted by the full group value tuple.
pub fn run_query(
    spec: &QuerySpec,
    rels: &BTreeMap<String, Relation>,
    opts: &EngineOptions,
) -> Result<(Vec<GroupResult>, RunStats)> {
    let mut stats = RunStats::new("joinagg");
    let (spec, catalog) = prepare(spec, rels)?;

    if spec.relations.len() == 1 {
        let results = run_single_relation(&spec, &catalog, &mut stats)?;
        return Ok((results, stats));
    }

    let started = Instant::now();
    let plan = plan_query(&spec, opts.root.as_deref())?;
    stats.stage("plan", started, None);

    let started = Instant::now();
    let mut graph = build_graph(&catalog, &plan, &spec.aggregate)?;
    stats.stage("build_graph", started, Some(graph.nodes.len() as u64));
    if opts.prune {
        let started = Instant::now();
        graph = prune(&graph);
        stats.stage("prune", started, Some(graph.nodes.len() as u64));
    }
    let gs = graph.stats();
    stats.set("nodes", gs.nodes);
    stats.set("edges", gs.edges);
    stats.set("intra_edges", gs.intra_edges);
    stats.set("join_edges", gs.join_edges);
    stats.set("pruned_nodes", gs.pruned_nodes);
    stats.set("graph_bytes", gs.estimated_bytes);

    let layout = group_layout(&spec, &plan)?;
    let topts = TraversalOptions {
        cache: opts.cache,
        trace: opts.trace,
    };

    let started = Instant::now();
    let per_source = |s: NodeId| -> Result<(Vec<GroupResult>, u64, u64, u64, Vec<String>)> {
        let outcome = traverse_from_source(&graph, s, &topts)?;
        let live_cpairs: u64 = outcome.cpairs.values().map(|l| l.len() as u64).sum();
        let results = match bucketize(&outcome, &graph) {
            Some(buckets) => {
                let lists: Vec<Vec<FTuple>> = buckets
                    .iter()
                    .map(|b| merge_bucket(b, &outcome))
                    .collect();
                let joined = prefix_join(lists, &outcome);
                emit_groups(s, joined, &layout, &graph)
            }
            None => Vec::new(),
        };
        Ok((
            results,
            live_cpairs,
            outcome.visits,
            outcome.edges_walked,
            outcome.trace,
        ))
    };

    let sources: Vec<NodeId> = crate::traversal::all_sources(&graph).collect();
    let outcomes: Vec<_> = if opts.threads > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.threads)
            .build()
            .map_err(|e| Error::Internal(format!("thread pool: {e}")))?;
        pool.install(|| sources.par_iter().map(|&s| per_source(s)).collect())
    } else {
        sources.iter().map(|&s| per_source(s)).collect()
    };

    let mut results = Vec::new();
    let mut cpair_peak = 0u64;
    let mut visits = 0u64;
    let mut edges_walked = 0u64;
    let mut skipped = 0u64;
    let mut traces = Vec::new();
    for outcome in outcomes {
        let (rs, live, v, ew, trace) = outcome?;
        cpair_peak = cpair_peak.max(live);
        visits += v;
        edges_walked += ew;
        if rs.is_empty() {
            skipped += 1;
        }
        results.extend(rs);
        traces.extend(trace);
    }
    stats.stage("traverse_and_generate", started, Some(results.len() as u64));

    let started = Instant::now();
    results.sort_by(|a, b| a.group_values.cmp(&b.group_values));
    stats.stage("sort_output", started, None);

    stats.set("sources", sources.len() as u64);
    stats.set("sources_without_output", skipped);
    stats.set("visits", visits);
    stats.set("edges_walked", edges_walked);
    stats.set("cpair_peak", cpair_peak);
    stats.set("peak_structure", gs.nodes + gs.edges + cpair_peak);
    stats.set("output_groups", results.len() as u64);
    stats.trace = traces;
    Ok((results, stats))
}

/// Dispatches a query to the selected executor.
pub fn execute(
    spec: &QuerySpec,
    rels: &BTreeMap<String, Relation>,
    engine: Engine,
    opts: &EngineOptions,
) -> Result<(Vec<GroupResult>, RunStats)> {
    match engine {
        Engine::JoinAgg => run_query(spec, rels, opts),
        Engine::Naive => baseline::execute_plan(spec, rels, baseline::BaselineMode::Naive, opts),
        Engine::PreAgg => baseline::execute_plan(spec, rels, baseline::BaselineMode::PreAgg, opts),
    }
}
