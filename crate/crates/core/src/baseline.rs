//! Instrumented reference executors: a naive binary hash-join pipeline with
//! one final hash aggregate, and an eager pre-aggregation variant that
//! shrinks its inputs and every join output down to the attributes still
//! needed. Both produce exactly the same groups as the graph engine — the
//! naive path is the correctness oracle, the eager path is the strongest
//! conventional baseline for the memory comparisons.

use std::collections::{BTreeMap, HashMap};
use std::time::Instant;

use crate::aggregates::{annot_merge, annot_parallel, finalize, AggKind, AggValue, Annotation};
use crate::error::{Error, Result};
use crate::query_model::plan_query;
use crate::relstore::{preaggregate_annotated, project_bag, Relation};
use crate::resultgen::{prepare, EngineOptions, GroupResult};
use crate::sqlfront::QuerySpec;
use crate::stats::RunStats;
use crate::value::Value;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaselineMode {
    Naive,
    PreAgg,
}

/// A materialized bag with named columns; the working set of the naive plan.
#[derive(Clone, Debug)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

/// A pre-aggregated table: distinct rows annotated with counts (and the
/// aggregate fold).
#[derive(Clone, Debug)]
pub struct CountedTable {
    pub columns: Vec<String>,
    pub rows: Vec<(Vec<Value>, Annotation)>,
}

fn shared_columns(l: &[String], r: &[String]) -> Vec<String> {
    l.iter().filter(|c| r.contains(c)).cloned().collect()
}

fn col_positions(cols: &[String], names: &[String]) -> Vec<usize> {
    names
        .iter()
        .map(|n| cols.iter().position(|c| c == n).expect("missing column"))
        .collect()
}

/// Bag equijoin: hash the smaller input on the join columns, probe with the
/// larger. Shared columns appear once, left side first.
pub fn hash_join(l: &Table, r: &Table, on: &[String]) -> Table {
    let columns: Vec<String> = l
        .columns
        .iter()
        .cloned()
        .chain(r.columns.iter().filter(|c| !on.contains(c)).cloned())
        .collect();
    let l_key = col_positions(&l.columns, on);
    let r_key = col_positions(&r.columns, on);
    let r_rest: Vec<usize> = (0..r.columns.len())
        .filter(|i| !r_key.contains(i))
        .collect();

    // swap so the hash table is built on the smaller input
    let build_left = l.rows.len() <= r.rows.len();
    let (build, build_key, probe, probe_key) = if build_left {
        (&l.rows, &l_key, &r.rows, &r_key)
    } else {
        (&r.rows, &r_key, &l.rows, &l_key)
    };
    let mut index: HashMap<Vec<Value>, Vec<usize>> = HashMap::new();
    for (i, row) in build.iter().enumerate() {
        let key: Vec<Value> = build_key.iter().map(|&k| row[k].clone()).collect();
        index.entry(key).or_default().push(i);
    }

    let mut rows = Vec::new();
    for probe_row in probe {
        let key: Vec<Value> = probe_key.iter().map(|&k| probe_row[k].clone()).collect();
        if let Some(matches) = index.get(&key) {
            for &bi in matches {
                let (lrow, rrow) = if build_left {
                    (&build[bi], probe_row)
                } else {
                    (probe_row, &build[bi])
                };
                let mut out = lrow.clone();
                out.extend(r_rest.iter().map(|&i| rrow[i].clone()));
                rows.push(out);
            }
        }
    }
    Table { columns, rows }
}

/// Counted equijoin: output annotations are the product of the input
/// annotations.
pub fn hash_join_counted(l: &CountedTable, r: &CountedTable, on: &[String]) -> CountedTable {
    let columns: Vec<String> = l
        .columns
        .iter()
        .cloned()
        .chain(r.columns.iter().filter(|c| !on.contains(c)).cloned())
        .collect();
    let l_key = col_positions(&l.columns, on);
    let r_key = col_positions(&r.columns, on);
    let r_rest: Vec<usize> = (0..r.columns.len())
        .filter(|i| !r_key.contains(i))
        .collect();
    let mut index: HashMap<Vec<Value>, Vec<usize>> = HashMap::new();
    for (i, (row, _)) in r.rows.iter().enumerate() {
        let key: Vec<Value> = r_key.iter().map(|&k| row[k].clone()).collect();
        index.entry(key).or_default().push(i);
    }
    let mut rows = Vec::new();
    for (lrow, lannot) in &l.rows {
        let key: Vec<Value> = l_key.iter().map(|&k| lrow[k].clone()).collect();
        if let Some(matches) = index.get(&key) {
            for &ri in matches {
                let (rrow, rannot) = &r.rows[ri];
                let mut out = lrow.clone();
                out.extend(r_rest.iter().map(|&i| rrow[i].clone()));
                rows.push((out, annot_parallel(lannot, rannot)));
            }
        }
    }
    CountedTable { columns, rows }
}

/// Counted join fused with re-aggregation onto `keep`: join outputs fold
/// straight into a hash table, so the unreduced result is never held.
fn hash_join_counted_fold(
    l: &CountedTable,
    r: &CountedTable,
    on: &[String],
    keep: &[String],
) -> CountedTable {
    let joined_columns: Vec<String> = l
        .columns
        .iter()
        .cloned()
        .chain(r.columns.iter().filter(|c| !on.contains(c)).cloned())
        .collect();
    let keep_pos = col_positions(&joined_columns, keep);
    let l_key = col_positions(&l.columns, on);
    let r_key = col_positions(&r.columns, on);
    let r_rest: Vec<usize> = (0..r.columns.len())
        .filter(|i| !r_key.contains(i))
        .collect();
    let mut index: HashMap<Vec<Value>, Vec<usize>> = HashMap::new();
    for (i, (row, _)) in r.rows.iter().enumerate() {
        let key: Vec<Value> = r_key.iter().map(|&k| row[k].clone()).collect();
        index.entry(key).or_default().push(i);
    }
    let mut folded: BTreeMap<Vec<Value>, Annotation> = BTreeMap::new();
    let mut joined_row = Vec::with_capacity(joined_columns.len());
    for (lrow, lannot) in &l.rows {
        let key: Vec<Value> = l_key.iter().map(|&k| lrow[k].clone()).collect();
        if let Some(matches) = index.get(&key) {
            for &ri in matches {
                let (rrow, rannot) = &r.rows[ri];
                joined_row.clear();
                joined_row.extend(lrow.iter().cloned());
                joined_row.extend(r_rest.iter().map(|&i| rrow[i].clone()));
                let kept: Vec<Value> = keep_pos.iter().map(|&i| joined_row[i].clone()).collect();
                let annot = annot_parallel(lannot, rannot);
                folded
                    .entry(kept)
                    .and_modify(|a| *a = annot_merge(a, &annot))
                    .or_insert(annot);
            }
        }
    }
    CountedTable {
        columns: keep.to_vec(),
        rows: folded.into_iter().collect(),
    }
}

/// Hash aggregation straight over materialized rows. This path is kept
/// independent of the annotation algebra on purpose: it is the oracle the
/// other executors are checked against.
pub fn hash_aggregate(t: &Table, group: &[String], aggregate: &AggSpec) -> Vec<GroupResult> {
    let group_pos = col_positions(&t.columns, group);
    let agg_pos = aggregate.column.as_ref().map(|c| {
        t.columns
            .iter()
            .position(|x| x == c)
            .expect("aggregate column missing")
    });
    #[derive(Clone)]
    struct Acc {
        count: u64,
        sum: i64,
        min: Option<Value>,
        max: Option<Value>,
    }
    let mut groups: BTreeMap<Vec<Value>, Acc> = BTreeMap::new();
    for row in &t.rows {
        let key: Vec<Value> = group_pos.iter().map(|&i| row[i].clone()).collect();
        let acc = groups.entry(key).or_insert(Acc {
            count: 0,
            sum: 0,
            min: None,
            max: None,
        });
        acc.count += 1;
        if let Some(ai) = agg_pos {
            let v = &row[ai];
            if matches!(aggregate.kind, AggKind::Sum | AggKind::Avg) {
                acc.sum += v.as_int().expect("sum over non-integer");
            }
            acc.min = match acc.min.take() {
                Some(m) => Some(m.min(v.clone())),
                None => Some(v.clone()),
            };
            acc.max = match acc.max.take() {
                Some(m) => Some(m.max(v.clone())),
                None => Some(v.clone()),
            };
        }
    }
    groups
        .into_iter()
        .map(|(group_values, acc)| {
            let value = match aggregate.kind {
                AggKind::Count => AggValue::Int(acc.count as i64),
                AggKind::Sum => AggValue::Int(acc.sum),
                AggKind::Min => AggValue::Scalar(acc.min.expect("min of empty group")),
                AggKind::Max => AggValue::Scalar(acc.max.expect("max of empty group")),
                AggKind::Avg => AggValue::Ratio {
                    sum: acc.sum,
                    count: acc.count,
                },
            };
            GroupResult {
                group_values,
                value,
            }
        })
        .collect()
}

/// Aggregation over a pre-aggregated table: annotations merge per group.
pub fn hash_aggregate_counted(
    t: &CountedTable,
    group: &[String],
    kind: AggKind,
) -> Vec<GroupResult> {
    let group_pos = col_positions(&t.columns, group);
    let mut groups: BTreeMap<Vec<Value>, Annotation> = BTreeMap::new();
    for (row, annot) in &t.rows {
        let key: Vec<Value> = group_pos.iter().map(|&i| row[i].clone()).collect();
        groups
            .entry(key)
            .and_modify(|a| *a = annot_merge(a, annot))
            .or_insert_with(|| annot.clone());
    }
    groups
        .into_iter()
        .map(|(group_values, annot)| GroupResult {
            value: finalize(&annot, kind),
            group_values,
        })
        .collect()
}

/// What to aggregate, resolved to canonical column names.
pub struct AggSpec {
    pub kind: AggKind,
    pub column: Option<String>,
}

const AGG_COL: &str = "#agg";

/// Runs the conventional plan: binary hash joins in decomposition BFS
/// order, then one aggregation. `PreAgg` additionally re-aggregates after
/// loading and after every join onto the attributes still needed downstream
/// (group columns plus attributes of not-yet-joined relations).
pub fn execute_plan(
    spec: &QuerySpec,
    rels: &BTreeMap<String, Relation>,
    mode: BaselineMode,
    opts: &EngineOptions,
) -> Result<(Vec<GroupResult>, RunStats)> {
    let mut stats = RunStats::new(match mode {
        BaselineMode::Naive => "naive",
        BaselineMode::PreAgg => "preagg",
    });
    let (spec, catalog) = prepare(spec, rels)?;
    let started = Instant::now();
    let plan = plan_query(&spec, opts.root.as_deref())?;
    stats.stage("plan", started, None);
    let h = &plan.hypergraph;
    let kind = spec.aggregate.kind();

    // canonical projections: columns renamed to vertex display names
    let project = |rel: usize| -> Result<(Vec<String>, Vec<String>)> {
        let mut src = Vec::new();
        let mut dst = Vec::new();
        for &v in &h.edges[rel] {
            src.push(
                h.column_of(v, rel)
                    .expect("relation misses its vertex column")
                    .to_owned(),
            );
            dst.push(h.display(v).to_owned());
        }
        Ok((src, dst))
    };
    let agg_rel: Option<usize> = spec
        .aggregate
        .attr()
        .map(|a| {
            h.aliases
                .iter()
                .position(|al| al == a.alias())
                .ok_or_else(|| Error::UnknownAlias(a.alias().to_owned()))
        })
        .transpose()?;

    let group_cols: Vec<String> = group_columns(&spec, &plan)?;
    let mut max_intermediate = 0u64;
    let mut peak_live = 0u64;

    let bfs = &plan.tree.bfs_order;
    let results = match mode {
        BaselineMode::Naive => {
            let load = |rel: usize| -> Result<Table> {
                let relation = &catalog[&h.aliases[rel]];
                let (mut src, mut dst) = project(rel)?;
                // the aggregated attribute rides along as an extra column
                if agg_rel == Some(rel) {
                    src.push(spec.aggregate.attr().unwrap().column.clone());
                    dst.push(AGG_COL.to_owned());
                }
                let projected = project_bag(relation, &src)?;
                Ok(Table {
                    columns: dst,
                    rows: projected.rows().to_vec(),
                })
            };
            let mut acc = load(bfs[0])?;
            peak_live = peak_live.max(acc.rows.len() as u64);
            for &rel in &bfs[1..] {
                let started = Instant::now();
                let next = load(rel)?;
                let on = shared_columns(&acc.columns, &next.columns);
                let joined = hash_join(&acc, &next, &on);
                max_intermediate = max_intermediate.max(joined.rows.len() as u64);
                peak_live = peak_live.max(
                    (acc.rows.len() + next.rows.len() + joined.rows.len()) as u64,
                );
                stats.stage(
                    format!("join {}", h.aliases[rel]),
                    started,
                    Some(joined.rows.len() as u64),
                );
                acc = joined;
            }
            let started = Instant::now();
            let agg = AggSpec {
                kind,
                column: spec.aggregate.attr().map(|_| AGG_COL.to_owned()),
            };
            let out = hash_aggregate(&acc, &group_cols, &agg);
            stats.stage("aggregate", started, Some(out.len() as u64));
            out
        }
        BaselineMode::PreAgg => {
            // needed downstream after joining the first i relations: group
            // columns plus any attribute of a not-yet-joined relation
            let needed_after = |i: usize| -> Vec<String> {
                let mut keep: Vec<String> = Vec::new();
                for &rel in &bfs[..=i] {
                    for &v in &h.edges[rel] {
                        let name = h.display(v).to_owned();
                        if keep.contains(&name) {
                            continue;
                        }
                        let is_group = group_cols.contains(&name);
                        let pending = bfs[i + 1..]
                            .iter()
                            .any(|&later| h.edges[later].contains(&v));
                        if is_group || pending {
                            keep.push(name);
                        }
                    }
                }
                keep
            };
            let load = |rel: usize, keep: &[String]| -> Result<CountedTable> {
                let relation = &catalog[&h.aliases[rel]];
                let src: Vec<String> = keep
                    .iter()
                    .map(|name| {
                        let v = h
                            .vertices
                            .iter()
                            .position(|x| &x.display == name)
                            .expect("unknown canonical column");
                        h.column_of(v, rel).expect("missing column").to_owned()
                    })
                    .collect();
                let fold = (agg_rel == Some(rel))
                    .then(|| spec.aggregate.attr().unwrap().column.clone());
                let rows = preaggregate_annotated(relation, &src, fold.as_deref(), kind)?;
                Ok(CountedTable {
                    columns: keep.to_vec(),
                    rows,
                })
            };
            let own_keep = |rel: usize| -> Vec<String> {
                // at load time everything this relation shares or groups by
                // is still needed
                h.edges[rel]
                    .iter()
                    .map(|&v| h.display(v).to_owned())
                    .collect()
            };
            let started = Instant::now();
            let mut acc = load(bfs[0], &own_keep(bfs[0]))?;
            max_intermediate = max_intermediate.max(acc.rows.len() as u64);
            peak_live = peak_live.max(acc.rows.len() as u64);
            stats.stage(
                format!("load+preagg {}", h.aliases[bfs[0]]),
                started,
                Some(acc.rows.len() as u64),
            );
            for (i, &rel) in bfs.iter().enumerate().skip(1) {
                let started = Instant::now();
                let next = load(rel, &own_keep(rel))?;
                let on = shared_columns(&acc.columns, &next.columns);
                let keep = needed_after(i);
                let folded = hash_join_counted_fold(&acc, &next, &on, &keep);
                max_intermediate = max_intermediate.max(folded.rows.len() as u64);
                peak_live = peak_live.max(
                    (acc.rows.len() + next.rows.len() + folded.rows.len()) as u64,
                );
                stats.stage(
                    format!("join+preagg {}", h.aliases[rel]),
                    started,
                    Some(folded.rows.len() as u64),
                );
                acc = folded;
            }
            let started = Instant::now();
            let out = hash_aggregate_counted(&acc, &group_cols, kind);
            stats.stage("aggregate", started, Some(out.len() as u64));
            out
        }
    };

    stats.set("max_intermediate_rows", max_intermediate);
    stats.set("peak_live_rows", peak_live);
    stats.set("output_groups", results.len() as u64);
    Ok((results, stats))
}

/// GROUP BY columns as canonical vertex names, in query order.
fn group_columns(spec: &QuerySpec, plan: &crate::query_model::QueryPlan) -> Result<Vec<String>> {
    let h = &plan.hypergraph;
    spec.group_by
        .iter()
        .map(|g| {
            let rel = h
                .aliases
                .iter()
                .position(|a| a == g.alias())
                .ok_or_else(|| Error::UnknownAlias(g.alias().to_owned()))?;
            h.vertices
                .iter()
                .find(|v| {
                    v.group_owner == Some(rel)
                        && v.members.iter().any(|(a, c)| a == g.alias() && c == &g.column)
                })
                .map(|v| v.display.clone())
                .ok_or_else(|| Error::Plan(format!("group attribute {g} has no vertex")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sqlfront::parse_sql;

    fn table(cols: &[&str], rows: &[&[i64]]) -> Table {
        Table {
            columns: cols.iter().map(|c| c.to_string()).collect(),
            rows: rows
                .iter()
                .map(|r| r.iter().map(|&v| Value::Int(v)).collect())
                .collect(),
        }
    }

    #[test]
    fn hash_join_basic() {
        let l = table(&["g", "p"], &[&[1, 7]]);
        let r = table(&["p", "q"], &[&[7, 9]]);
        let out = hash_join(&l, &r, &["p".into()]);
        assert_eq!(out.columns, vec!["g", "p", "q"]);
        assert_eq!(
            out.rows,
            vec![vec![Value::Int(1), Value::Int(7), Value::Int(9)]]
        );
    }

    #[test]
    fn hash_join_counted_multiplies() {
        let l = CountedTable {
            columns: vec!["g".into(), "p".into()],
            rows: vec![(
                vec![Value::Int(1), Value::Int(7)],
                Annotation::from_multiplicity(2, AggKind::Count),
            )],
        };
        let r = CountedTable {
            columns: vec!["p".into(), "q".into()],
            rows: vec![(
                vec![Value::Int(7), Value::Int(9)],
                Annotation::from_multiplicity(3, AggKind::Count),
            )],
        };
        let out = hash_join_counted(&l, &r, &["p".into()]);
        assert_eq!(out.rows.len(), 1);
        assert_eq!(out.rows[0].1.count, 6);
    }

    #[test]
    fn hash_aggregate_counts() {
        let t = table(&["a", "b"], &[&[1, 10], &[1, 20], &[2, 10]]);
        let out = hash_aggregate(
            &t,
            &["a".into()],
            &AggSpec {
                kind: AggKind::Count,
                column: None,
            },
        );
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].group_values, vec![Value::Int(1)]);
        assert_eq!(out[0].value, AggValue::Int(2));
        assert_eq!(out[1].value, AggValue::Int(1));
    }

    #[test]
    fn hash_aggregate_counted_respects_multiplicity() {
        let t = CountedTable {
            columns: vec!["a".into()],
            rows: vec![(
                vec![Value::Int(1)],
                Annotation::from_multiplicity(5, AggKind::Count),
            )],
        };
        let out = hash_aggregate_counted(&t, &["a".into()], AggKind::Count);
        assert_eq!(out[0].value, AggValue::Int(5));
    }

    #[test]
    fn key_joins_never_expand() {
        // chain over distinct keys: every intermediate stays at n rows
        let mut rels = BTreeMap::new();
        let n = 50i64;
        let mk = |alias: &str, c0: &str, c1: &str| {
            Relation::new(
                alias,
                vec![c0.into(), c1.into()],
                (0..n).map(|i| vec![Value::Int(i), Value::Int(i)]).collect(),
            )
            .unwrap()
        };
        rels.insert("R1".to_string(), mk("R1", "g1", "p0"));
        rels.insert("R2".to_string(), mk("R2", "p0", "p1"));
        rels.insert("R3".to_string(), mk("R3", "p1", "p2"));
        rels.insert("R4".to_string(), mk("R4", "p2", "g2"));
        let spec = parse_sql(
            "SELECT R1.g1, R4.g2, COUNT(*) FROM R1, R2, R3, R4 \
             WHERE R1.p0 = R2.p0 AND R2.p1 = R3.p1 AND R3.p2 = R4.p2 \
             GROUP BY R1.g1, R4.g2",
        )
        .unwrap();
        let (out, stats) =
            execute_plan(&spec, &rels, BaselineMode::Naive, &EngineOptions::default()).unwrap();
        assert_eq!(out.len(), n as usize);
        assert_eq!(stats.get("max_intermediate_rows"), n as u64);
    }

    #[test]
    fn preagg_never_beats_naive_on_rows() {
        let mut rels = BTreeMap::new();
        let rows: Vec<Vec<Value>> = (0..60)
            .map(|i| vec![Value::Int(i % 3), Value::Int(i % 5)])
            .collect();
        rels.insert(
            "R".to_string(),
            Relation::new("R", vec!["g".into(), "p".into()], rows).unwrap(),
        );
        let spec = parse_sql(
            "SELECT R1.g, R2.g, COUNT(*) FROM R R1, R R2 WHERE R1.p = R2.p \
             GROUP BY R1.g, R2.g",
        )
        .unwrap();
        let mut rels2 = BTreeMap::new();
        rels2.insert("R1".to_string(), rels["R"].with_alias("R1"));
        rels2.insert("R2".to_string(), rels["R"].with_alias("R2"));
        let (naive, ns) =
            execute_plan(&spec, &rels2, BaselineMode::Naive, &EngineOptions::default()).unwrap();
        let (pre, ps) =
            execute_plan(&spec, &rels2, BaselineMode::PreAgg, &EngineOptions::default()).unwrap();
        assert_eq!(naive, pre);
        assert!(ps.get("max_intermediate_rows") <= ns.get("max_intermediate_rows"));
        // brute-force join cardinality: sum over p of count^2
        let mut per_p = BTreeMap::new();
        for row in rels["R"].rows() {
            *per_p.entry(row[1].clone()).or_insert(0u64) += 1;
        }
        let join_size: u64 = per_p.values().map(|c| c * c).sum();
        assert_eq!(ns.get("max_intermediate_rows"), join_size);
        let total: i64 = naive.iter().map(|g| g.count().unwrap()).sum();
        assert_eq!(total as u64, join_size);
    }
}
