//! Query planning: the attribute hypergraph, the acyclicity test, the
//! breadth-first decomposition tree, relation typing, and the per-relation
//! (x_l, x_r) attribute split that turns each relation into graph edges.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde_json::json;

use crate::error::{Error, Result};
use crate::sqlfront::QuerySpec;

/// One vertex of the query hypergraph: a join equivalence class (all
/// attributes equated through join conditions) or a single group attribute.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vertex {
    /// Canonical name used in plans, dumps and explain output.
    pub display: String,
    /// (alias, column) members, sorted. Join classes have one member per
    /// participating relation; group vertices have exactly one.
    pub members: Vec<(String, String)>,
    /// Owning relation index when this is a group attribute.
    pub group_owner: Option<usize>,
}

/// Hypergraph over join and group attributes with one hyperedge per relation.
#[derive(Clone, Debug)]
pub struct QueryHypergraph {
    pub aliases: Vec<String>,
    pub vertices: Vec<Vertex>,
    /// Vertex sets per relation, indexed like `aliases`.
    pub edges: Vec<BTreeSet<usize>>,
    /// Group vertices per relation.
    pub group_vertices: Vec<Vec<usize>>,
}

impl QueryHypergraph {
    pub fn display(&self, v: usize) -> &str {
        &self.vertices[v].display
    }

    /// The column that feeds vertex `v` in relation `rel`.
    pub fn column_of(&self, v: usize, rel: usize) -> Option<&str> {
        let alias = &self.aliases[rel];
        self.vertices[v]
            .members
            .iter()
            .find(|(a, _)| a == alias)
            .map(|(_, c)| c.as_str())
    }

    pub fn is_group_relation(&self, rel: usize) -> bool {
        !self.group_vertices[rel].is_empty()
    }
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> UnionFind {
        UnionFind((0..n).collect())
    }
    fn find(&mut self, x: usize) -> usize {
        if self.0[x] != x {
            let r = self.find(self.0[x]);
            self.0[x] = r;
        }
        self.0[x]
    }
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Builds the hypergraph of a bound query: join conditions are collapsed
/// into equivalence classes (natural-join style) and every group attribute
/// becomes its own vertex.
pub fn build_hypergraph(spec: &QuerySpec) -> Result<QueryHypergraph> {
    if !spec.is_bound() {
        return Err(Error::InvalidQuery(
            "query has unresolved column references".into(),
        ));
    }
    let aliases: Vec<String> = spec.relations.iter().map(|r| r.alias.clone()).collect();

    // Join attributes, unioned into classes.
    let mut attr_ids: BTreeMap<(String, String), usize> = BTreeMap::new();
    let id_of = |attr_ids: &mut BTreeMap<(String, String), usize>, a: &str, c: &str| {
        let next = attr_ids.len();
        *attr_ids.entry((a.to_owned(), c.to_owned())).or_insert(next)
    };
    let mut pairs = Vec::new();
    for (l, r) in &spec.join_conditions {
        let li = id_of(&mut attr_ids, l.alias(), &l.column);
        let ri = id_of(&mut attr_ids, r.alias(), &r.column);
        pairs.push((li, ri));
    }
    let mut uf = UnionFind::new(attr_ids.len());
    for (l, r) in pairs {
        uf.union(l, r);
    }

    let mut class_members: BTreeMap<usize, Vec<(String, String)>> = BTreeMap::new();
    for ((alias, col), id) in &attr_ids {
        class_members
            .entry(uf.find(*id))
            .or_default()
            .push((alias.clone(), col.clone()));
    }

    let mut vertices = Vec::new();
    for (_, mut members) in class_members {
        members.sort();
        vertices.push(Vertex {
            display: String::new(),
            members,
            group_owner: None,
        });
    }
    for g in &spec.group_by {
        let owner = spec
            .alias_index(g.alias())
            .ok_or_else(|| Error::UnknownAlias(g.alias().to_owned()))?;
        let member = (g.alias().to_owned(), g.column.clone());
        let duplicate = vertices
            .iter()
            .any(|v| v.group_owner == Some(owner) && v.members.contains(&member));
        if !duplicate {
            vertices.push(Vertex {
                display: String::new(),
                members: vec![member],
                group_owner: Some(owner),
            });
        }
    }

    // Canonical names: the smallest member column, qualified on collision.
    let mut by_candidate: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, v) in vertices.iter().enumerate() {
        let candidate = v
            .members
            .iter()
            .map(|(_, c)| c.clone())
            .min()
            .expect("vertex without members");
        by_candidate.entry(candidate).or_default().push(i);
    }
    for (candidate, ids) in by_candidate {
        if ids.len() == 1 {
            vertices[ids[0]].display = candidate;
        } else {
            for i in ids {
                let (a, c) = &vertices[i].members[0];
                vertices[i].display = format!("{a}.{c}");
            }
        }
    }

    let mut edges: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); aliases.len()];
    let mut group_vertices: Vec<Vec<usize>> = vec![Vec::new(); aliases.len()];
    for (vi, v) in vertices.iter().enumerate() {
        match v.group_owner {
            Some(rel) => {
                edges[rel].insert(vi);
                group_vertices[rel].push(vi);
            }
            None => {
                for (alias, _) in &v.members {
                    let rel = aliases.iter().position(|a| a == alias).unwrap();
                    edges[rel].insert(vi);
                }
            }
        }
    }
    for gs in &mut group_vertices {
        gs.sort_by(|&a, &b| vertices[a].display.cmp(&vertices[b].display));
    }

    Ok(QueryHypergraph {
        aliases,
        vertices,
        edges,
        group_vertices,
    })
}

/// GYO ear removal: repeatedly delete vertices appearing in a single
/// hyperedge and hyperedges contained in another. The hypergraph is acyclic
/// iff this empties it.
pub fn check_acyclic(h: &QueryHypergraph) -> bool {
    gyo_acyclic(&h.edges)
}

pub(crate) fn gyo_acyclic(edges: &[BTreeSet<usize>]) -> bool {
    let mut edges: Vec<BTreeSet<usize>> = edges.to_vec();
    loop {
        let mut changed = false;

        let mut occurrences: BTreeMap<usize, usize> = BTreeMap::new();
        for e in &edges {
            for &v in e {
                *occurrences.entry(v).or_insert(0) += 1;
            }
        }
        for e in &mut edges {
            let before = e.len();
            e.retain(|v| occurrences[v] > 1);
            changed |= e.len() != before;
        }

        let mut keep = vec![true; edges.len()];
        for i in 0..edges.len() {
            if !keep[i] {
                continue;
            }
            if edges[i].is_empty() {
                keep[i] = false;
                changed = true;
                continue;
            }
            for j in 0..edges.len() {
                if i != j && keep[j] && edges[i].is_subset(&edges[j]) {
                    keep[i] = false;
                    changed = true;
                    break;
                }
            }
        }
        let mut it = keep.iter();
        edges.retain(|_| *it.next().unwrap());

        if !changed {
            return edges.is_empty();
        }
    }
}

/// Rooted decomposition tree over the relations, built breadth-first.
#[derive(Clone, Debug)]
pub struct DecompositionTree {
    pub root: usize,
    pub parent: Vec<Option<usize>>,
    /// Children ordered by alias, for determinism.
    pub children: Vec<Vec<usize>>,
    pub bfs_order: Vec<usize>,
    pub bfs_index: Vec<usize>,
}

impl DecompositionTree {
    pub fn is_leaf(&self, rel: usize) -> bool {
        self.children[rel].is_empty()
    }

    pub fn is_ancestor(&self, anc: usize, mut rel: usize) -> bool {
        while let Some(p) = self.parent[rel] {
            if p == anc {
                return true;
            }
            rel = p;
        }
        false
    }
}

/// Builds the BFS decomposition tree rooted at `root` (an alias), or at the
/// lexicographically smallest group relation when `root` is `None`. Each
/// non-root relation's parent is the relation through which BFS first
/// discovered it.
pub fn build_decomposition(
    h: &QueryHypergraph,
    root: Option<&str>,
) -> Result<DecompositionTree> {
    let n = h.aliases.len();
    let root_rel = match root {
        Some(alias) => {
            let rel = h
                .aliases
                .iter()
                .position(|a| a == alias)
                .ok_or_else(|| Error::UnknownAlias(alias.to_owned()))?;
            if !h.is_group_relation(rel) {
                return Err(Error::Plan(format!(
                    "root `{alias}` is not a group relation"
                )));
            }
            rel
        }
        None => (0..n)
            .filter(|&r| h.is_group_relation(r))
            .min_by(|&a, &b| h.aliases[a].cmp(&h.aliases[b]))
            .ok_or_else(|| Error::Plan("query has no group relation".into()))?,
    };

    let mut parent = vec![None; n];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut visited = vec![false; n];
    let mut bfs_order = Vec::with_capacity(n);
    let mut queue = VecDeque::new();
    visited[root_rel] = true;
    queue.push_back(root_rel);
    while let Some(cur) = queue.pop_front() {
        bfs_order.push(cur);
        let mut neighbors: Vec<usize> = (0..n)
            .filter(|&j| !visited[j] && !h.edges[cur].is_disjoint(&h.edges[j]))
            .collect();
        neighbors.sort_by(|&a, &b| h.aliases[a].cmp(&h.aliases[b]));
        for nb in neighbors {
            visited[nb] = true;
            parent[nb] = Some(cur);
            children[cur].push(nb);
            queue.push_back(nb);
        }
    }
    if bfs_order.len() != n {
        return Err(Error::DisconnectedJoinGraph);
    }

    let mut bfs_index = vec![0; n];
    for (i, &r) in bfs_order.iter().enumerate() {
        bfs_index[r] = i;
    }
    let tree = DecompositionTree {
        root: root_rel,
        parent,
        children,
        bfs_order,
        bfs_index,
    };

    // The BFS tree must be a proper join tree: the relations containing any
    // vertex have to form a connected subtree, otherwise an equality
    // constraint would be silently dropped.
    for (vi, _) in h.vertices.iter().enumerate() {
        let holders: BTreeSet<usize> = (0..n).filter(|&r| h.edges[r].contains(&vi)).collect();
        let links = holders
            .iter()
            .filter(|&&r| tree.parent[r].is_some_and(|p| holders.contains(&p)))
            .count();
        if holders.len() - links != 1 {
            return Err(Error::Plan(format!(
                "attribute `{}` is shared by relations that are not adjacent in the \
                 decomposition tree; this query shape is unsupported",
                h.display(vi)
            )));
        }
    }
    for &rel in &tree.bfs_order {
        if tree.is_leaf(rel) && rel != tree.root && !h.is_group_relation(rel) {
            return Err(Error::Plan(format!(
                "relation `{}` contributes no group attribute and joins nothing \
                 downstream; unsupported",
                h.aliases[rel]
            )));
        }
    }
    Ok(tree)
}

/// Roles a relation plays during execution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum RelType {
    Source,
    Group,
    Branching,
    Intermediate,
}

impl RelType {
    pub fn label(self) -> &'static str {
        match self {
            RelType::Source => "SOURCE",
            RelType::Group => "GROUP",
            RelType::Branching => "BRANCHING",
            RelType::Intermediate => "INTERMEDIATE",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    L,
    R,
}

#[derive(Clone, Debug)]
pub struct RelSplit {
    /// Vertex ids, sorted by display name; the node value layout follows
    /// this order.
    pub x_l: Vec<usize>,
    pub x_r: Vec<usize>,
    pub types: BTreeSet<RelType>,
    /// Which side holds this relation's branching nodes, when any.
    pub branch_side: Option<Side>,
}

#[derive(Clone, Debug)]
pub struct SplitPlan {
    pub rels: Vec<RelSplit>,
    /// Group relations in BFS order; the first entry is the source relation.
    pub group_rels: Vec<usize>,
}

/// Classifies relations and splits each relation's relevant attributes into
/// the (x_l, x_r) pair that becomes its edges in the data graph.
pub fn classify_and_split(tree: &DecompositionTree, h: &QueryHypergraph) -> Result<SplitPlan> {
    let n = h.aliases.len();
    let mut rels: Vec<RelSplit> = Vec::with_capacity(n);
    let sort_by_display = |set: BTreeSet<usize>| -> Vec<usize> {
        let mut v: Vec<usize> = set.into_iter().collect();
        v.sort_by(|&a, &b| h.display(a).cmp(h.display(b)));
        v
    };

    for rel in 0..n {
        let groups: BTreeSet<usize> = h.group_vertices[rel].iter().copied().collect();
        let child_union: BTreeSet<usize> = tree.children[rel]
            .iter()
            .flat_map(|&c| h.edges[rel].intersection(&h.edges[c]).copied())
            .collect();
        let is_root = rel == tree.root;
        let is_group = !groups.is_empty();

        let (x_l, x_r) = if is_root {
            (groups.clone(), child_union)
        } else if is_group {
            let rest: BTreeSet<usize> = h.edges[rel].difference(&groups).copied().collect();
            (rest, groups.clone())
        } else {
            let p = tree.parent[rel].expect("non-root without parent");
            let shared: BTreeSet<usize> =
                h.edges[rel].intersection(&h.edges[p]).copied().collect();
            (shared, child_union)
        };

        let mut types = BTreeSet::new();
        if is_root {
            types.insert(RelType::Source);
        }
        if is_group {
            types.insert(RelType::Group);
        }
        let type_b = !is_root && !tree.is_leaf(rel) && is_group;
        if tree.children[rel].len() > 1 || type_b {
            types.insert(RelType::Branching);
        }
        if !is_root && !is_group && tree.children[rel].len() == 1 {
            types.insert(RelType::Intermediate);
        }
        if types.is_empty() {
            return Err(Error::Plan(format!(
                "relation `{}` has no role in the plan",
                h.aliases[rel]
            )));
        }
        let branch_side = types.contains(&RelType::Branching).then(|| {
            if type_b {
                Side::L
            } else {
                Side::R
            }
        });

        rels.push(RelSplit {
            x_l: sort_by_display(x_l),
            x_r: sort_by_display(x_r),
            types,
            branch_side,
        });
    }

    // Join edges require the shared attributes to be present on the parent's
    // child-facing side.
    for &rel in &tree.bfs_order {
        if let Some(p) = tree.parent[rel] {
            let shared: BTreeSet<usize> =
                h.edges[rel].intersection(&h.edges[p]).copied().collect();
            if shared.is_empty() {
                return Err(Error::Plan(format!(
                    "relation `{}` shares no attribute with its parent",
                    h.aliases[rel]
                )));
            }
            let side = parent_join_side(&rels[p]);
            let parent_attrs: BTreeSet<usize> = match side {
                Side::L => rels[p].x_l.iter().copied().collect(),
                Side::R => rels[p].x_r.iter().copied().collect(),
            };
            if !shared.is_subset(&parent_attrs) {
                return Err(Error::Plan(format!(
                    "child `{}` joins on attributes absent from its parent's nodes",
                    h.aliases[rel]
                )));
            }
        }
    }

    // The prefix-join can only recombine path-ids that nest, so branching
    // relations must sit on a single root-to-leaf path.
    let branching: Vec<usize> = (0..n)
        .filter(|&r| rels[r].types.contains(&RelType::Branching))
        .collect();
    for (i, &a) in branching.iter().enumerate() {
        for &b in &branching[i + 1..] {
            if !tree.is_ancestor(a, b) && !tree.is_ancestor(b, a) {
                return Err(Error::Plan(format!(
                    "branching relations `{}` and `{}` lie in parallel subtrees; \
                     this query shape is unsupported",
                    h.aliases[a], h.aliases[b]
                )));
            }
        }
    }

    let group_rels: Vec<usize> = tree
        .bfs_order
        .iter()
        .copied()
        .filter(|&r| h.is_group_relation(r))
        .collect();
    debug_assert_eq!(group_rels.first(), Some(&tree.root));

    Ok(SplitPlan { rels, group_rels })
}

/// The side of a parent relation that join edges to its children leave from:
/// x_r, except for non-root group relations whose x_r is their group sink.
pub fn parent_join_side(split: &RelSplit) -> Side {
    if split.types.contains(&RelType::Group) && !split.types.contains(&RelType::Source) {
        Side::L
    } else {
        Side::R
    }
}

/// Everything the execution stages need to know about a query.
#[derive(Clone, Debug)]
pub struct QueryPlan {
    pub hypergraph: QueryHypergraph,
    pub tree: DecompositionTree,
    pub split: SplitPlan,
}

pub fn plan_query(spec: &QuerySpec, root: Option<&str>) -> Result<QueryPlan> {
    let hypergraph = build_hypergraph(spec)?;
    if !check_acyclic(&hypergraph) {
        return Err(Error::CyclicQuery);
    }
    let tree = build_decomposition(&hypergraph, root)?;
    let split = classify_and_split(&tree, &hypergraph)?;
    Ok(QueryPlan {
        hypergraph,
        tree,
        split,
    })
}

/// Parse-time structural validation: connected join graph, acyclic
/// hypergraph.
pub fn validate_structure(spec: &QuerySpec) -> Result<()> {
    let h = build_hypergraph(spec)?;
    let n = h.aliases.len();
    let mut visited = vec![false; n];
    let mut queue = VecDeque::from([0usize]);
    visited[0] = true;
    while let Some(cur) = queue.pop_front() {
        for j in 0..n {
            if !visited[j] && !h.edges[cur].is_disjoint(&h.edges[j]) {
                visited[j] = true;
                queue.push_back(j);
            }
        }
    }
    if visited.iter().any(|v| !v) {
        return Err(Error::DisconnectedJoinGraph);
    }
    if !check_acyclic(&h) {
        return Err(Error::CyclicQuery);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Explain rendering
// ---------------------------------------------------------------------------

pub fn explain_text(plan: &QueryPlan) -> String {
    let h = &plan.hypergraph;
    let mut out = String::from("hypergraph:\n");
    for (i, alias) in h.aliases.iter().enumerate() {
        let attrs: Vec<&str> = h.edges[i].iter().map(|&v| h.display(v)).collect();
        out.push_str(&format!("  {alias}: {{{}}}\n", attrs.join(", ")));
    }
    out.push_str("decomposition tree:\n");
    fn walk(plan: &QueryPlan, rel: usize, depth: usize, out: &mut String) {
        let h = &plan.hypergraph;
        let s = &plan.split.rels[rel];
        let fmt = |vs: &[usize]| {
            vs.iter()
                .map(|&v| h.display(v))
                .collect::<Vec<_>>()
                .join(",")
        };
        let types: Vec<&str> = s.types.iter().map(|t| t.label()).collect();
        out.push_str(&format!(
            "{}{} x_l=[{}] x_r=[{}] {}\n",
            "  ".repeat(depth + 1),
            h.aliases[rel],
            fmt(&s.x_l),
            fmt(&s.x_r),
            types.join("+"),
        ));
        for &c in &plan.tree.children[rel] {
            walk(plan, c, depth + 1, out);
        }
    }
    walk(plan, plan.tree.root, 0, &mut out);
    out
}

pub fn explain_json(plan: &QueryPlan) -> serde_json::Value {
    let h = &plan.hypergraph;
    fn node(plan: &QueryPlan, rel: usize) -> serde_json::Value {
        let h = &plan.hypergraph;
        let s = &plan.split.rels[rel];
        let names = |vs: &[usize]| -> Vec<String> {
            vs.iter().map(|&v| h.display(v).to_owned()).collect()
        };
        json!({
            "alias": h.aliases[rel],
            "x_l": names(&s.x_l),
            "x_r": names(&s.x_r),
            "types": s.types.iter().map(|t| t.label()).collect::<Vec<_>>(),
            "children": plan.tree.children[rel]
                .iter()
                .map(|&c| node(plan, c))
                .collect::<Vec<_>>(),
        })
    }
    let mut edges = serde_json::Map::new();
    for (i, alias) in h.aliases.iter().enumerate() {
        edges.insert(
            alias.clone(),
            json!(h.edges[i]
                .iter()
                .map(|&v| h.display(v).to_owned())
                .collect::<Vec<_>>()),
        );
    }
    json!({
        "hypergraph": {
            "vertices": h.vertices.iter().map(|v| v.display.clone()).collect::<Vec<_>>(),
            "edges": edges,
        },
        "tree": { "root": node(plan, plan.tree.root) },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sqlfront::parse_sql;

    fn vertex_names(h: &QueryHypergraph) -> BTreeSet<String> {
        h.vertices.iter().map(|v| v.display.clone()).collect()
    }

    fn edge_names(h: &QueryHypergraph, alias: &str) -> BTreeSet<String> {
        let rel = h.aliases.iter().position(|a| a == alias).unwrap();
        h.edges[rel]
            .iter()
            .map(|&v| h.display(v).to_owned())
            .collect()
    }

    const Q3: &str = "SELECT A.a, B.b, C.c, COUNT(*) \
         FROM R1 A, R2 J, R3 B, R4 C \
         WHERE A.j1 = J.j1 AND J.j2 = B.j2 AND J.j3 = C.j3 \
         GROUP BY A.a, B.b, C.c";

    #[test]
    fn q3_hypergraph() {
        let spec = parse_sql(Q3).unwrap();
        let h = build_hypergraph(&spec).unwrap();
        let names: BTreeSet<String> = vertex_names(&h);
        let want: BTreeSet<String> = ["a", "b", "c", "j1", "j2", "j3"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(names, want);
        assert_eq!(
            edge_names(&h, "A"),
            ["a", "j1"].iter().map(|s| s.to_string()).collect()
        );
        assert_eq!(
            edge_names(&h, "J"),
            ["j1", "j2", "j3"].iter().map(|s| s.to_string()).collect()
        );
        assert_eq!(
            edge_names(&h, "B"),
            ["b", "j2"].iter().map(|s| s.to_string()).collect()
        );
        assert_eq!(
            edge_names(&h, "C"),
            ["c", "j3"].iter().map(|s| s.to_string()).collect()
        );
    }

    #[test]
    fn single_relation_hypergraph() {
        let spec = parse_sql("SELECT a, COUNT(*) FROM R GROUP BY a").unwrap();
        let h = build_hypergraph(&spec).unwrap();
        assert_eq!(h.vertices.len(), 1);
        assert_eq!(edge_names(&h, "R"), BTreeSet::from(["a".to_string()]));
    }

    #[test]
    fn self_join_hypergraph() {
        let spec = parse_sql(
            "SELECT R1.g, R2.g, COUNT(*) FROM R R1, R R2 \
             WHERE R1.p = R2.p GROUP BY R1.g, R2.g",
        )
        .unwrap();
        let h = build_hypergraph(&spec).unwrap();
        assert_eq!(h.vertices.len(), 3); // p class + two group vertices
        assert_eq!(edge_names(&h, "R1").len(), 2);
        assert_eq!(edge_names(&h, "R2").len(), 2);
    }

    #[test]
    fn chain_is_acyclic_triangle_is_not() {
        let chain = parse_sql(
            "SELECT R1.g1, R4.g2, COUNT(*) FROM R1, R2, R3, R4 \
             WHERE R1.p0 = R2.p0 AND R2.p1 = R3.p1 AND R3.p2 = R4.p2 \
             GROUP BY R1.g1, R4.g2",
        )
        .unwrap();
        assert!(check_acyclic(&build_hypergraph(&chain).unwrap()));

        // triangle, built directly so it does not bounce off parse validation
        let tri = vec![
            BTreeSet::from([0usize, 1]),
            BTreeSet::from([1, 2]),
            BTreeSet::from([2, 0]),
        ];
        assert!(!gyo_acyclic(&tri));

        let single = vec![BTreeSet::from([0usize, 1, 2])];
        assert!(gyo_acyclic(&single));
    }

    fn fig2_spec() -> QuerySpec {
        // A(g1,j) B(j,jc,jd) C(jc,g2) D(jd,je) E(je,g3) F(je,g4)
        parse_sql(
            "SELECT A.g1, C.g2, E.g3, F.g4, COUNT(*) FROM A, B, C, D, E, F \
             WHERE A.j = B.j AND B.jc = C.jc AND B.jd = D.jd \
             AND D.je = E.je AND D.je = F.je \
             GROUP BY A.g1, C.g2, E.g3, F.g4",
        )
        .unwrap()
    }

    #[test]
    fn fig2_tree_rooted_at_a() {
        let spec = fig2_spec();
        let h = build_hypergraph(&spec).unwrap();
        let tree = build_decomposition(&h, Some("A")).unwrap();
        let alias = |r: usize| h.aliases[r].as_str();
        assert_eq!(alias(tree.root), "A");
        let kids: Vec<&str> = tree.children[tree.root].iter().map(|&c| alias(c)).collect();
        assert_eq!(kids, vec!["B"]);
        let b = tree.children[tree.root][0];
        let kids: Vec<&str> = tree.children[b].iter().map(|&c| alias(c)).collect();
        assert_eq!(kids, vec!["C", "D"]);
        let d = tree.children[b][1];
        let kids: Vec<&str> = tree.children[d].iter().map(|&c| alias(c)).collect();
        assert_eq!(kids, vec!["E", "F"]);
    }

    #[test]
    fn fig2_splits_and_types() {
        let spec = fig2_spec();
        let plan = plan_query(&spec, Some("A")).unwrap();
        let h = &plan.hypergraph;
        let idx = |a: &str| h.aliases.iter().position(|x| x == a).unwrap();
        let names = |vs: &[usize]| -> Vec<&str> { vs.iter().map(|&v| h.display(v)).collect() };

        let d = &plan.split.rels[idx("D")];
        assert_eq!(names(&d.x_l), vec!["jd"]);
        assert_eq!(names(&d.x_r), vec!["je"]);
        assert!(d.types.contains(&RelType::Branching));
        assert_eq!(d.branch_side, Some(Side::R));

        let b = &plan.split.rels[idx("B")];
        assert_eq!(names(&b.x_l), vec!["j"]);
        assert_eq!(names(&b.x_r), vec!["jc", "jd"]);
        assert!(b.types.contains(&RelType::Branching));

        let a = &plan.split.rels[idx("A")];
        assert_eq!(names(&a.x_l), vec!["g1"]);
        assert_eq!(names(&a.x_r), vec!["j"]);
        assert_eq!(
            a.types,
            BTreeSet::from([RelType::Source, RelType::Group])
        );

        let e = &plan.split.rels[idx("E")];
        assert_eq!(names(&e.x_l), vec!["je"]);
        assert_eq!(names(&e.x_r), vec!["g3"]);
        assert_eq!(e.types, BTreeSet::from([RelType::Group]));
    }

    #[test]
    fn internal_group_relation_is_type_b_branching() {
        let spec = parse_sql(
            "SELECT R1.g1, R2.g2, R3.g3, COUNT(*) FROM R1, R2, R3 \
             WHERE R1.j0 = R2.j0 AND R2.j1 = R3.j1 \
             GROUP BY R1.g1, R2.g2, R3.g3",
        )
        .unwrap();
        let plan = plan_query(&spec, None).unwrap();
        let h = &plan.hypergraph;
        let r2 = h.aliases.iter().position(|a| a == "R2").unwrap();
        let s = &plan.split.rels[r2];
        let names = |vs: &[usize]| -> Vec<&str> { vs.iter().map(|&v| h.display(v)).collect() };
        assert_eq!(names(&s.x_r), vec!["g2"]);
        assert_eq!(names(&s.x_l), vec!["j0", "j1"]);
        assert_eq!(
            s.types,
            BTreeSet::from([RelType::Group, RelType::Branching])
        );
        assert_eq!(s.branch_side, Some(Side::L));
    }

    #[test]
    fn chain_has_unique_tree_and_self_join_rooted() {
        let chain = parse_sql(
            "SELECT R1.g1, R4.g2, COUNT(*) FROM R1, R2, R3, R4 \
             WHERE R1.p0 = R2.p0 AND R2.p1 = R3.p1 AND R3.p2 = R4.p2 \
             GROUP BY R1.g1, R4.g2",
        )
        .unwrap();
        let plan = plan_query(&chain, Some("R1")).unwrap();
        let order: Vec<&str> = plan
            .tree
            .bfs_order
            .iter()
            .map(|&r| plan.hypergraph.aliases[r].as_str())
            .collect();
        assert_eq!(order, vec!["R1", "R2", "R3", "R4"]);
        let r2 = plan
            .hypergraph
            .aliases
            .iter()
            .position(|a| a == "R2")
            .unwrap();
        assert_eq!(
            plan.split.rels[r2].types,
            BTreeSet::from([RelType::Intermediate])
        );

        let selfjoin = parse_sql(
            "SELECT R1.g, R2.g, COUNT(*) FROM R R1, R R2 \
             WHERE R1.p = R2.p GROUP BY R1.g, R2.g",
        )
        .unwrap();
        let plan = plan_query(&selfjoin, None).unwrap(); // AUTO picks R1
        assert_eq!(plan.hypergraph.aliases[plan.tree.root], "R1");
        assert_eq!(plan.tree.children[plan.tree.root].len(), 1);
    }

    #[test]
    fn root_must_be_group_relation() {
        let spec = parse_sql(
            "SELECT R1.g1, R4.g2, COUNT(*) FROM R1, R2, R3, R4 \
             WHERE R1.p0 = R2.p0 AND R2.p1 = R3.p1 AND R3.p2 = R4.p2 \
             GROUP BY R1.g1, R4.g2",
        )
        .unwrap();
        let h = build_hypergraph(&spec).unwrap();
        let err = build_decomposition(&h, Some("R2")).unwrap_err();
        assert!(err.to_string().contains("not a group relation"));
    }

    #[test]
    fn bfs_is_deterministic() {
        let spec = fig2_spec();
        let h = build_hypergraph(&spec).unwrap();
        let t1 = build_decomposition(&h, Some("A")).unwrap();
        let t2 = build_decomposition(&h, Some("A")).unwrap();
        assert_eq!(t1.bfs_order, t2.bfs_order);
        assert_eq!(t1.parent, t2.parent);
    }

    #[test]
    fn source_is_unique_and_groups_covered() {
        for text in [
            Q3,
            "SELECT R1.g, R2.g, COUNT(*) FROM R R1, R R2 WHERE R1.p = R2.p GROUP BY R1.g, R2.g",
        ] {
            let spec = parse_sql(text).unwrap();
            let plan = plan_query(&spec, None).unwrap();
            let sources = plan
                .split
                .rels
                .iter()
                .filter(|r| r.types.contains(&RelType::Source))
                .count();
            assert_eq!(sources, 1);
            // every group vertex is the x_r (or root x_l) of exactly one relation
            for (vi, v) in plan.hypergraph.vertices.iter().enumerate() {
                if v.group_owner.is_none() {
                    continue;
                }
                let holders = plan
                    .split
                    .rels
                    .iter()
                    .enumerate()
                    .filter(|(rel, s)| {
                        let side = if *rel == plan.tree.root {
                            &s.x_l
                        } else {
                            &s.x_r
                        };
                        side.contains(&vi)
                    })
                    .count();
                assert_eq!(holders, 1, "group vertex {vi} held by {holders} relations");
            }
        }
    }

    #[test]
    fn parallel_branching_subtrees_rejected() {
        // star root with two branching children
        let spec = parse_sql(
            "SELECT R0.g0, L1.ga, L2.gb, L3.gc, L4.gd, COUNT(*) \
             FROM R0, B1, B2, L1, L2, L3, L4 \
             WHERE R0.x = B1.x AND R0.y = B2.y \
             AND B1.u = L1.u AND B1.v = L2.v AND B2.s = L3.s AND B2.t = L4.t \
             GROUP BY R0.g0, L1.ga, L2.gb, L3.gc, L4.gd",
        )
        .unwrap();
        let err = plan_query(&spec, Some("R0")).unwrap_err();
        assert!(
            err.to_string().contains("parallel"),
            "expected parallel-branching rejection, got {err}"
        );
        // rooted at a leaf instead, the branching relations nest and the
        // same query plans fine
        assert!(plan_query(&spec, Some("L1")).is_ok());
    }

    // Independent acyclicity oracle: the classic maximum-weight spanning
    // tree construction. A hypergraph is acyclic iff a maximum-weight
    // spanning forest of its intersection graph (edge weight = |e_i ∩ e_j|)
    // has total weight Σ_v (occurrences(v) - 1).
    fn mst_acyclic(edges: &[BTreeSet<usize>]) -> bool {
        let n = edges.len();
        let mut weights = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let w = edges[i].intersection(&edges[j]).count();
                if w > 0 {
                    weights.push((w, i, j));
                }
            }
        }
        weights.sort_by(|a, b| b.0.cmp(&a.0));
        let mut uf = UnionFind::new(n);
        let mut total = 0usize;
        for (w, i, j) in weights {
            if uf.find(i) != uf.find(j) {
                uf.union(i, j);
                total += w;
            }
        }
        let mut occ: BTreeMap<usize, usize> = BTreeMap::new();
        for e in edges {
            for &v in e {
                *occ.entry(v).or_insert(0) += 1;
            }
        }
        let target: usize = occ.values().map(|&c| c - 1).sum();
        total == target
    }

    #[test]
    fn gyo_matches_mst_oracle_on_random_hypergraphs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x9a7_2024);
        let mut cyclic_seen = 0;
        let mut acyclic_seen = 0;
        for case in 0..100 {
            let n_edges = rng.gen_range(2..=5);
            let n_verts = rng.gen_range(3..=8usize);
            let edges: Vec<BTreeSet<usize>> = (0..n_edges)
                .map(|_| {
                    let k = rng.gen_range(1..=4usize.min(n_verts));
                    let mut e = BTreeSet::new();
                    while e.len() < k {
                        e.insert(rng.gen_range(0..n_verts));
                    }
                    e
                })
                .collect();
            let gyo = gyo_acyclic(&edges);
            let mst = mst_acyclic(&edges);
            assert_eq!(gyo, mst, "case {case} disagreed on {edges:?}");
            if gyo {
                acyclic_seen += 1;
            } else {
                cyclic_seen += 1;
            }
        }
        assert!(cyclic_seen > 0 && acyclic_seen > 0, "degenerate sample");
    }

    #[test]
    fn explain_renders_both_forms() {
        let spec = parse_sql(Q3).unwrap();
        let plan = plan_query(&spec, None).unwrap();
        let text = explain_text(&plan);
        assert!(text.contains("A x_l=[a] x_r=[j1] SOURCE+GROUP"), "{text}");
        let js = explain_json(&plan);
        assert_eq!(js["tree"]["root"]["alias"], "A");
        assert_eq!(js["tree"]["root"]["x_l"][0], "a");
        assert!(js["tree"]["root"]["children"].is_array());
    }
}
