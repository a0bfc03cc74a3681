//! Parses the supported SQL subset into a [`QuerySpec`]:
//!
//! ```sql
//! SELECT <group cols>, <aggregate> FROM <rel [alias]>, ...
//! WHERE a.x = b.y AND ... GROUP BY <group cols>
//! ```
//!
//! One aggregate per query, conjunctive equality predicates only. Keywords
//! are case-insensitive, identifiers are not. A JSON document with fields
//! `relations`, `joins`, `group_by`, `aggregate` is accepted as a parser
//! bypass.
//!
//! Column references may be unqualified; with a single relation in scope
//! they resolve immediately, otherwise [`QuerySpec::bind`] resolves them
//! against loaded schemas before planning.

use std::collections::{BTreeMap, BTreeSet};

use crate::aggregates::AggKind;
use crate::error::{Error, Result};
use crate::query_model;
use crate::relstore::AttributeRef;

/// Suffix appended to a column that is implicitly copied so a group-by
/// attribute never participates in a join condition.
pub const COPY_SUFFIX: &str = "#g";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RelationDecl {
    /// Table name or file stem the relation is loaded from.
    pub source: String,
    pub alias: String,
}

/// A column duplicated at load time under a fresh name.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ColumnCopy {
    pub alias: String,
    pub source_column: String,
    pub copy_column: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Aggregate {
    CountStar,
    Sum(AttributeRef),
    Min(AttributeRef),
    Max(AttributeRef),
    Avg(AttributeRef),
}

impl Aggregate {
    pub fn kind(&self) -> AggKind {
        match self {
            Aggregate::CountStar => AggKind::Count,
            Aggregate::Sum(_) => AggKind::Sum,
            Aggregate::Min(_) => AggKind::Min,
            Aggregate::Max(_) => AggKind::Max,
            Aggregate::Avg(_) => AggKind::Avg,
        }
    }

    pub fn attr(&self) -> Option<&AttributeRef> {
        match self {
            Aggregate::CountStar => None,
            Aggregate::Sum(a) | Aggregate::Min(a) | Aggregate::Max(a) | Aggregate::Avg(a) => {
                Some(a)
            }
        }
    }

    fn attr_mut(&mut self) -> Option<&mut AttributeRef> {
        match self {
            Aggregate::CountStar => None,
            Aggregate::Sum(a) | Aggregate::Min(a) | Aggregate::Max(a) | Aggregate::Avg(a) => {
                Some(a)
            }
        }
    }
}

/// A validated join-aggregate query: the engine's input.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuerySpec {
    pub relations: Vec<RelationDecl>,
    pub join_conditions: Vec<(AttributeRef, AttributeRef)>,
    pub group_by: Vec<AttributeRef>,
    pub aggregate: Aggregate,
    /// Implicit copies decoupling group attributes from join conditions.
    pub column_copies: Vec<ColumnCopy>,
}

impl QuerySpec {
    pub fn alias_index(&self, alias: &str) -> Option<usize> {
        self.relations.iter().position(|r| r.alias == alias)
    }

    fn refs_mut(&mut self) -> Vec<&mut AttributeRef> {
        let mut out = Vec::new();
        for (l, r) in &mut self.join_conditions {
            out.push(l);
            out.push(r);
        }
        out.extend(self.group_by.iter_mut());
        if let Some(a) = self.aggregate.attr_mut() {
            out.push(a);
        }
        out
    }

    fn refs(&self) -> Vec<&AttributeRef> {
        let mut out = Vec::new();
        for (l, r) in &self.join_conditions {
            out.push(l);
            out.push(r);
        }
        out.extend(self.group_by.iter());
        if let Some(a) = self.aggregate.attr() {
            out.push(a);
        }
        out
    }

    /// True once every attribute reference carries a relation alias.
    pub fn is_bound(&self) -> bool {
        self.refs().iter().all(|r| r.alias.is_some())
    }

    /// Resolves unqualified column references against loaded schemas
    /// (alias -> column list), then validates the query structurally.
    pub fn bind(&mut self, schemas: &BTreeMap<String, Vec<String>>) -> Result<()> {
        for decl in &self.relations {
            if !schemas.contains_key(&decl.alias) {
                return Err(Error::UnknownAlias(decl.alias.clone()));
            }
        }
        let aliases: Vec<String> = self.relations.iter().map(|r| r.alias.clone()).collect();
        for r in self.refs_mut() {
            if r.alias.is_some() {
                continue;
            }
            let owners: Vec<&String> = aliases
                .iter()
                .filter(|a| schemas[a.as_str()].iter().any(|c| c == &r.column))
                .collect();
            match owners.len() {
                0 => {
                    return Err(Error::InvalidQuery(format!(
                        "column `{}` not found in any relation",
                        r.column
                    )))
                }
                1 => r.alias = Some(owners[0].clone()),
                _ => {
                    return Err(Error::InvalidQuery(format!(
                        "column `{}` is ambiguous (in {})",
                        r.column,
                        owners
                            .iter()
                            .map(|s| s.as_str())
                            .collect::<Vec<_>>()
                            .join(", ")
                    )))
                }
            }
        }
        for r in self.refs() {
            let alias = r.alias.as_ref().unwrap();
            let cols = schemas
                .get(alias.as_str())
                .ok_or_else(|| Error::UnknownAlias(alias.clone()))?;
            let known = cols.iter().any(|c| c == &r.column)
                || self
                    .column_copies
                    .iter()
                    .any(|cc| &cc.alias == alias && cc.copy_column == r.column);
            if !known {
                return Err(Error::UnknownColumn {
                    alias: alias.clone(),
                    column: r.column.clone(),
                });
            }
        }
        self.finish()
    }

    /// Normalizes and validates a fully-resolved spec. Idempotent.
    pub fn finish(&mut self) -> Result<()> {
        for r in self.refs() {
            let alias = r.alias.as_ref().ok_or_else(|| {
                Error::InvalidQuery(format!(
                    "column `{}` is unresolved; bind against schemas first",
                    r.column
                ))
            })?;
            if self.alias_index(alias).is_none() {
                return Err(Error::UnknownAlias(alias.clone()));
            }
        }
        for (l, r) in &self.join_conditions {
            if l.alias == r.alias {
                return Err(Error::InvalidQuery(format!(
                    "equality within a single relation ({l} = {r}) is not a join"
                )));
            }
        }
        // A group-by attribute that also joins gets an implicit column copy,
        // so group attributes never sit inside a join condition.
        let join_attrs: BTreeSet<(String, String)> = self
            .join_conditions
            .iter()
            .flat_map(|(l, r)| [l, r])
            .map(|a| (a.alias().to_owned(), a.column.clone()))
            .collect();
        for g in &mut self.group_by {
            let key = (g.alias().to_owned(), g.column.clone());
            if join_attrs.contains(&key) {
                let copy = format!("{}{}", g.column, COPY_SUFFIX);
                if !self
                    .column_copies
                    .iter()
                    .any(|c| c.alias == key.0 && c.copy_column == copy)
                {
                    self.column_copies.push(ColumnCopy {
                        alias: key.0,
                        source_column: g.column.clone(),
                        copy_column: copy.clone(),
                    });
                }
                g.column = copy;
            }
        }
        query_model::validate_structure(self)
    }

    /// The group-by list with implicit copies mapped back to the columns
    /// the user wrote. Used for printing and output headers.
    pub fn group_by_display(&self) -> Vec<AttributeRef> {
        self.group_by
            .iter()
            .map(|g| {
                let original = self
                    .column_copies
                    .iter()
                    .find(|c| Some(&c.alias) == g.alias.as_ref() && c.copy_column == g.column)
                    .map(|c| c.source_column.clone())
                    .unwrap_or_else(|| g.column.clone());
                AttributeRef {
                    alias: g.alias.clone(),
                    column: original,
                }
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Lexer
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Comma,
    Dot,
    Eq,
    LParen,
    RParen,
    Star,
    Cmp(char),
    Eof,
}

struct Lexer {
    toks: Vec<(usize, Tok)>,
    at: usize,
}

impl Lexer {
    fn new(text: &str) -> Result<Lexer> {
        let bytes: Vec<char> = text.chars().collect();
        let mut toks = Vec::new();
        let mut i = 0;
        while i < bytes.len() {
            let c = bytes[i];
            let pos = i;
            match c {
                ' ' | '\t' | '\n' | '\r' => {
                    i += 1;
                    continue;
                }
                ',' => toks.push((pos, Tok::Comma)),
                '.' => toks.push((pos, Tok::Dot)),
                '=' => toks.push((pos, Tok::Eq)),
                '(' => toks.push((pos, Tok::LParen)),
                ')' => toks.push((pos, Tok::RParen)),
                '*' => toks.push((pos, Tok::Star)),
                '<' | '>' | '!' => toks.push((pos, Tok::Cmp(c))),
                ';' => {
                    // a single trailing statement terminator is tolerated
                    i += 1;
                    continue;
                }
                _ if c.is_alphanumeric() || c == '_' => {
                    let start = i;
                    while i < bytes.len() && (bytes[i].is_alphanumeric() || bytes[i] == '_') {
                        i += 1;
                    }
                    toks.push((pos, Tok::Ident(bytes[start..i].iter().collect())));
                    continue;
                }
                other => {
                    return Err(Error::syntax(pos, format!("unexpected character `{other}`")));
                }
            }
            i += 1;
        }
        toks.push((bytes.len(), Tok::Eof));
        Ok(Lexer { toks, at: 0 })
    }

    fn peek(&self) -> &(usize, Tok) {
        &self.toks[self.at]
    }

    fn next(&mut self) -> (usize, Tok) {
        let t = self.toks[self.at].clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn peek_is_kw(&self, kw: &str) -> bool {
        matches!(&self.peek().1, Tok::Ident(s) if s.eq_ignore_ascii_case(kw))
    }

    fn expect_kw(&mut self, kw: &str) -> Result<()> {
        let (pos, t) = self.next();
        match t {
            Tok::Ident(s) if s.eq_ignore_ascii_case(kw) => Ok(()),
            other => Err(Error::syntax(pos, format!("expected {kw}, found {other:?}"))),
        }
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<usize> {
        let (pos, t) = self.next();
        if t == want {
            Ok(pos)
        } else {
            Err(Error::syntax(pos, format!("expected {what}, found {t:?}")))
        }
    }

    fn ident(&mut self, what: &str) -> Result<(usize, String)> {
        let (pos, t) = self.next();
        match t {
            Tok::Ident(s) => Ok((pos, s)),
            other => Err(Error::syntax(pos, format!("expected {what}, found {other:?}"))),
        }
    }
}

const KEYWORDS: &[&str] = &["select", "from", "where", "group", "by", "and", "or", "as"];

fn is_keyword(s: &str) -> bool {
    KEYWORDS.iter().any(|k| s.eq_ignore_ascii_case(k))
}

const AGG_NAMES: &[&str] = &["count", "sum", "min", "max", "avg"];

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

/// Parses a single statement of the supported SQL subset. Structural
/// validation (connectivity, acyclicity) runs immediately when every column
/// reference is qualified; otherwise it is deferred to [`QuerySpec::bind`].
pub fn parse_sql(text: &str) -> Result<QuerySpec> {
    let mut lx = Lexer::new(text)?;
    lx.expect_kw("SELECT")?;

    let mut select_cols: Vec<AttributeRef> = Vec::new();
    let mut aggregate: Option<Aggregate> = None;
    loop {
        let (pos, name) = lx.ident("column or aggregate")?;
        if lx.peek().1 == Tok::LParen {
            lx.next();
            let agg = parse_aggregate(&mut lx, pos, &name)?;
            if aggregate.replace(agg).is_some() {
                return Err(Error::InvalidQuery(
                    "exactly one aggregate per query".into(),
                ));
            }
        } else {
            select_cols.push(finish_ref(&mut lx, pos, name)?);
        }
        if lx.peek().1 == Tok::Comma {
            lx.next();
        } else {
            break;
        }
    }
    let aggregate = aggregate.ok_or_else(|| {
        Error::InvalidQuery("SELECT list must contain exactly one aggregate".into())
    })?;

    lx.expect_kw("FROM")?;
    let mut relations = Vec::new();
    loop {
        let (_, source) = lx.ident("relation name")?;
        let alias = match &lx.peek().1 {
            Tok::Ident(s) if s.eq_ignore_ascii_case("as") => {
                lx.next();
                lx.ident("alias")?.1
            }
            Tok::Ident(s) if !is_keyword(s) => lx.next().1.ident_text(),
            _ => source.clone(),
        };
        relations.push(RelationDecl { source, alias });
        if lx.peek().1 == Tok::Comma {
            lx.next();
        } else {
            break;
        }
    }
    let mut seen = BTreeSet::new();
    for r in &relations {
        if !seen.insert(&r.alias) {
            return Err(Error::InvalidQuery(format!(
                "duplicate relation alias `{}`",
                r.alias
            )));
        }
    }

    let mut join_conditions = Vec::new();
    if lx.peek_is_kw("WHERE") {
        lx.next();
        loop {
            let (pos, name) = lx.ident("column reference")?;
            if is_keyword(&name) {
                return Err(Error::syntax(pos, format!("unexpected keyword `{name}`")));
            }
            if lx.peek().1 == Tok::LParen {
                return Err(Error::syntax(
                    pos,
                    "function calls are not supported in WHERE",
                ));
            }
            let left = finish_ref(&mut lx, pos, name)?;
            match lx.next() {
                (_, Tok::Eq) => {}
                (p, Tok::Cmp(c)) => {
                    return Err(Error::syntax(
                        p,
                        format!("non-equality predicate `{c}`: only equijoins are supported"),
                    ))
                }
                (p, other) => {
                    return Err(Error::syntax(p, format!("expected `=`, found {other:?}")))
                }
            }
            let (rpos, rname) = lx.ident("column reference")?;
            let right = finish_ref(&mut lx, rpos, rname)?;
            join_conditions.push((left, right));
            match &lx.peek().1 {
                Tok::Ident(s) if s.eq_ignore_ascii_case("AND") => {
                    lx.next();
                }
                Tok::Ident(s) if s.eq_ignore_ascii_case("OR") => {
                    return Err(Error::syntax(
                        lx.peek().0,
                        "OR is not supported: predicates must be conjunctive",
                    ));
                }
                _ => break,
            }
        }
    }

    lx.expect_kw("GROUP")?;
    lx.expect_kw("BY")?;
    let mut group_by = Vec::new();
    loop {
        let (pos, name) = lx.ident("group column")?;
        group_by.push(finish_ref(&mut lx, pos, name)?);
        if lx.peek().1 == Tok::Comma {
            lx.next();
        } else {
            break;
        }
    }
    let (pos, trailing) = lx.next();
    if trailing != Tok::Eof {
        return Err(Error::syntax(pos, format!("trailing input {trailing:?}")));
    }

    let sel: BTreeSet<_> = select_cols.iter().collect();
    let grp: BTreeSet<_> = group_by.iter().collect();
    if sel != grp {
        return Err(Error::InvalidQuery(
            "SELECT columns must equal GROUP BY columns".into(),
        ));
    }

    let mut spec = QuerySpec {
        relations,
        join_conditions,
        group_by,
        aggregate,
        column_copies: Vec::new(),
    };
    resolve_or_defer(&mut spec)?;
    Ok(spec)
}

impl Tok {
    fn ident_text(self) -> String {
        match self {
            Tok::Ident(s) => s,
            _ => unreachable!(),
        }
    }
}

fn parse_aggregate(lx: &mut Lexer, pos: usize, name: &str) -> Result<Aggregate> {
    let lower = name.to_ascii_lowercase();
    if !AGG_NAMES.contains(&lower.as_str()) {
        return Err(Error::syntax(pos, format!("unsupported function `{name}`")));
    }
    if lower == "count" {
        lx.expect(Tok::Star, "`*`")?;
        lx.expect(Tok::RParen, "`)`")?;
        return Ok(Aggregate::CountStar);
    }
    let (apos, aname) = lx.ident("aggregated column")?;
    let attr = finish_ref(lx, apos, aname)?;
    lx.expect(Tok::RParen, "`)`")?;
    Ok(match lower.as_str() {
        "sum" => Aggregate::Sum(attr),
        "min" => Aggregate::Min(attr),
        "max" => Aggregate::Max(attr),
        "avg" => Aggregate::Avg(attr),
        _ => unreachable!(),
    })
}

fn finish_ref(lx: &mut Lexer, pos: usize, first: String) -> Result<AttributeRef> {
    if is_keyword(&first) {
        return Err(Error::syntax(pos, format!("unexpected keyword `{first}`")));
    }
    if lx.peek().1 == Tok::Dot {
        lx.next();
        let (_, col) = lx.ident("column name")?;
        Ok(AttributeRef::new(first, col))
    } else {
        Ok(AttributeRef::bare(first))
    }
}

/// Qualifies bare references where that is unambiguous without schemas
/// (single-relation queries, or an alias that happens to match), then
/// finishes validation if everything resolved.
fn resolve_or_defer(spec: &mut QuerySpec) -> Result<()> {
    let aliases: Vec<String> = spec.relations.iter().map(|r| r.alias.clone()).collect();
    if aliases.len() == 1 {
        let only = aliases[0].clone();
        for r in spec.refs_mut() {
            if r.alias.is_none() {
                r.alias = Some(only.clone());
            }
        }
    }
    for r in spec.refs() {
        if let Some(a) = &r.alias {
            if !aliases.contains(a) {
                return Err(Error::UnknownAlias(a.clone()));
            }
        }
    }
    if spec.is_bound() {
        spec.finish()?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// JSON bypass and dispatch
// ---------------------------------------------------------------------------

/// Accepts either the SQL subset or the JSON query document.
pub fn parse_query(text: &str) -> Result<QuerySpec> {
    if text.trim_start().starts_with('{') {
        parse_query_json(text)
    } else {
        parse_sql(text)
    }
}

/// Parses the JSON query document:
///
/// ```json
/// {"relations": [{"source": "R1", "alias": "A"}],
///  "joins": [["A.x", "B.y"]],
///  "group_by": ["A.a"],
///  "aggregate": "count"}
/// ```
///
/// `aggregate` is `"count"` or `{"op": "sum|min|max|avg", "attr": "A.x"}`.
pub fn parse_query_json(text: &str) -> Result<QuerySpec> {
    let doc: serde_json::Value = serde_json::from_str(text)
        .map_err(|e| Error::InvalidQuery(format!("invalid query JSON: {e}")))?;
    let obj = doc
        .as_object()
        .ok_or_else(|| Error::InvalidQuery("query JSON must be an object".into()))?;

    let mut relations = Vec::new();
    for r in field(obj, "relations")?
        .as_array()
        .ok_or_else(|| Error::InvalidQuery("`relations` must be an array".into()))?
    {
        if let Some(o) = r.as_object() {
            let source = str_field(o, "source")?;
            let alias = o
                .get("alias")
                .and_then(|v| v.as_str())
                .unwrap_or(&source)
                .to_owned();
            relations.push(RelationDecl { source, alias });
        } else if let Some(arr) = r.as_array() {
            let source = arr
                .first()
                .and_then(|v| v.as_str())
                .ok_or_else(|| Error::InvalidQuery("relation entry needs a source".into()))?
                .to_owned();
            let alias = arr
                .get(1)
                .and_then(|v| v.as_str())
                .unwrap_or(&source)
                .to_owned();
            relations.push(RelationDecl { source, alias });
        } else {
            return Err(Error::InvalidQuery(
                "relation entries must be objects or [source, alias] pairs".into(),
            ));
        }
    }

    let mut join_conditions = Vec::new();
    for j in field(obj, "joins")?
        .as_array()
        .ok_or_else(|| Error::InvalidQuery("`joins` must be an array".into()))?
    {
        let pair = j
            .as_array()
            .filter(|a| a.len() == 2)
            .ok_or_else(|| Error::InvalidQuery("each join must be a [left, right] pair".into()))?;
        let l = ref_from_str(pair[0].as_str().ok_or_else(bad_ref)?);
        let r = ref_from_str(pair[1].as_str().ok_or_else(bad_ref)?);
        join_conditions.push((l, r));
    }

    let mut group_by = Vec::new();
    for g in field(obj, "group_by")?
        .as_array()
        .ok_or_else(|| Error::InvalidQuery("`group_by` must be an array".into()))?
    {
        group_by.push(ref_from_str(g.as_str().ok_or_else(bad_ref)?));
    }

    let aggregate = match field(obj, "aggregate")? {
        serde_json::Value::String(s) => {
            let s = s.to_ascii_lowercase();
            if s == "count" || s == "count(*)" {
                Aggregate::CountStar
            } else {
                return Err(Error::InvalidQuery(format!(
                    "aggregate `{s}` needs an attr: use {{\"op\": \"{s}\", \"attr\": ...}}"
                )));
            }
        }
        serde_json::Value::Object(o) => {
            let op = str_field(o, "op")?.to_ascii_lowercase();
            if op == "count" {
                Aggregate::CountStar
            } else {
                let attr = ref_from_str(&str_field(o, "attr")?);
                match op.as_str() {
                    "sum" => Aggregate::Sum(attr),
                    "min" => Aggregate::Min(attr),
                    "max" => Aggregate::Max(attr),
                    "avg" => Aggregate::Avg(attr),
                    other => {
                        return Err(Error::InvalidQuery(format!("unknown aggregate `{other}`")))
                    }
                }
            }
        }
        _ => {
            return Err(Error::InvalidQuery(
                "`aggregate` must be a string or object".into(),
            ))
        }
    };

    let mut spec = QuerySpec {
        relations,
        join_conditions,
        group_by,
        aggregate,
        column_copies: Vec::new(),
    };
    resolve_or_defer(&mut spec)?;
    Ok(spec)
}

fn bad_ref() -> Error {
    Error::InvalidQuery("attribute references must be strings like \"alias.column\"".into())
}

fn field<'a>(
    obj: &'a serde_json::Map<String, serde_json::Value>,
    name: &str,
) -> Result<&'a serde_json::Value> {
    obj.get(name)
        .ok_or_else(|| Error::InvalidQuery(format!("query JSON is missing `{name}`")))
}

fn str_field(obj: &serde_json::Map<String, serde_json::Value>, name: &str) -> Result<String> {
    field(obj, name)?
        .as_str()
        .map(str::to_owned)
        .ok_or_else(|| Error::InvalidQuery(format!("`{name}` must be a string")))
}

fn ref_from_str(s: &str) -> AttributeRef {
    match s.split_once('.') {
        Some((a, c)) => AttributeRef::new(a, c),
        None => AttributeRef::bare(s),
    }
}

// ---------------------------------------------------------------------------
// Canonical printer
// ---------------------------------------------------------------------------

/// Renders a spec back into the SQL subset. `parse . print . parse` is a
/// fixpoint.
pub fn print_sql(spec: &QuerySpec) -> String {
    let mut out = String::from("SELECT ");
    let groups = spec.group_by_display();
    for g in &groups {
        out.push_str(&g.to_string());
        out.push_str(", ");
    }
    match &spec.aggregate {
        Aggregate::CountStar => out.push_str("COUNT(*)"),
        Aggregate::Sum(a) => out.push_str(&format!("SUM({a})")),
        Aggregate::Min(a) => out.push_str(&format!("MIN({a})")),
        Aggregate::Max(a) => out.push_str(&format!("MAX({a})")),
        Aggregate::Avg(a) => out.push_str(&format!("AVG({a})")),
    }
    out.push_str(" FROM ");
    for (i, r) in spec.relations.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push_str(&r.source);
        if r.alias != r.source {
            out.push(' ');
            out.push_str(&r.alias);
        }
    }
    if !spec.join_conditions.is_empty() {
        out.push_str(" WHERE ");
        for (i, (l, r)) in spec.join_conditions.iter().enumerate() {
            if i > 0 {
                out.push_str(" AND ");
            }
            out.push_str(&format!("{l} = {r}"));
        }
    }
    out.push_str(" GROUP BY ");
    for (i, g) in groups.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push_str(&g.to_string());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const Q1: &str = "SELECT ps_suppkey, c_zipcode, COUNT(*) \
         FROM partsupp, lineitem, orders, customer \
         WHERE ps_partkey = l_partkey AND o_orderkey = l_orderkey AND o_custkey = c_custkey \
         GROUP BY ps_suppkey, c_zipcode";

    const Q2: &str = "SELECT n1.label, n2.label, COUNT(*) \
         FROM Nodes n1, Edges e1, Edges e2, Nodes n2 \
         WHERE n1.id = e1.src AND e1.dst = e2.src AND n2.id = e2.dst \
         GROUP BY n1.label, n2.label";

    const Q3: &str = "SELECT A.a, B.b, C.c, COUNT(*) \
         FROM R1 A, R2 J, R3 B, R4 C \
         WHERE A.j1 = J.j1 AND J.j2 = B.j2 AND J.j3 = C.j3 \
         GROUP BY A.a, B.b, C.c";

    fn q1_schemas() -> BTreeMap<String, Vec<String>> {
        let mut m = BTreeMap::new();
        m.insert(
            "partsupp".into(),
            vec!["ps_partkey".into(), "ps_suppkey".into()],
        );
        m.insert(
            "lineitem".into(),
            vec!["l_partkey".into(), "l_orderkey".into()],
        );
        m.insert(
            "orders".into(),
            vec!["o_orderkey".into(), "o_custkey".into()],
        );
        m.insert(
            "customer".into(),
            vec!["c_custkey".into(), "c_zipcode".into()],
        );
        m
    }

    #[test]
    fn q3_parses_to_documented_spec() {
        let q = parse_sql(Q3).unwrap();
        let aliases: Vec<&str> = q.relations.iter().map(|r| r.alias.as_str()).collect();
        assert_eq!(aliases, vec!["A", "J", "B", "C"]);
        assert_eq!(
            q.join_conditions,
            vec![
                (AttributeRef::new("A", "j1"), AttributeRef::new("J", "j1")),
                (AttributeRef::new("J", "j2"), AttributeRef::new("B", "j2")),
                (AttributeRef::new("J", "j3"), AttributeRef::new("C", "j3")),
            ]
        );
        assert_eq!(
            q.group_by,
            vec![
                AttributeRef::new("A", "a"),
                AttributeRef::new("B", "b"),
                AttributeRef::new("C", "c"),
            ]
        );
        assert_eq!(q.aggregate, Aggregate::CountStar);
        assert!(q.column_copies.is_empty());
    }

    #[test]
    fn q2_parses_with_self_reference() {
        let q = parse_sql(Q2).unwrap();
        let decls: Vec<(&str, &str)> = q
            .relations
            .iter()
            .map(|r| (r.source.as_str(), r.alias.as_str()))
            .collect();
        assert_eq!(
            decls,
            vec![
                ("Nodes", "n1"),
                ("Edges", "e1"),
                ("Edges", "e2"),
                ("Nodes", "n2")
            ]
        );
        assert_eq!(
            q.join_conditions,
            vec![
                (
                    AttributeRef::new("n1", "id"),
                    AttributeRef::new("e1", "src")
                ),
                (
                    AttributeRef::new("e1", "dst"),
                    AttributeRef::new("e2", "src")
                ),
                (
                    AttributeRef::new("n2", "id"),
                    AttributeRef::new("e2", "dst")
                ),
            ]
        );
    }

    #[test]
    fn q1_parses_and_binds() {
        let mut q = parse_sql(Q1).unwrap();
        assert!(!q.is_bound());
        q.bind(&q1_schemas()).unwrap();
        assert_eq!(
            q.join_conditions[0],
            (
                AttributeRef::new("partsupp", "ps_partkey"),
                AttributeRef::new("lineitem", "l_partkey")
            )
        );
        assert_eq!(
            q.group_by,
            vec![
                AttributeRef::new("partsupp", "ps_suppkey"),
                AttributeRef::new("customer", "c_zipcode"),
            ]
        );
    }

    #[test]
    fn single_relation_no_join() {
        let q = parse_sql("SELECT a, COUNT(*) FROM R GROUP BY a").unwrap();
        assert_eq!(q.relations.len(), 1);
        assert_eq!(q.relations[0].alias, "R");
        assert!(q.join_conditions.is_empty());
        assert_eq!(q.group_by, vec![AttributeRef::new("R", "a")]);
    }

    #[test]
    fn triangle_rejected_as_cyclic() {
        let err = parse_sql(
            "SELECT R.g, COUNT(*) FROM R, S, T \
             WHERE R.a = S.a AND S.b = T.b AND T.c = R.c GROUP BY R.g",
        )
        .unwrap_err();
        assert!(matches!(err, Error::CyclicQuery));
        assert_eq!(err.to_string(), "cyclic query unsupported");
    }

    #[test]
    fn rejects_inequality_or_and_functions() {
        let base = "SELECT A.g, COUNT(*) FROM R A, S B ";
        for (frag, needle) in [
            ("WHERE A.x < B.y GROUP BY A.g", "non-equality"),
            ("WHERE A.x = B.y OR A.z = B.w GROUP BY A.g", "OR"),
            ("WHERE lower(A.x) = B.y GROUP BY A.g", "function"),
        ] {
            let err = parse_sql(&format!("{base}{frag}")).unwrap_err();
            assert!(
                err.to_string().contains(needle),
                "expected `{needle}` in `{err}`"
            );
        }
    }

    #[test]
    fn rejects_disconnected_join_graph() {
        let err = parse_sql(
            "SELECT A.g, B.h, COUNT(*) FROM R A, S B GROUP BY A.g, B.h",
        )
        .unwrap_err();
        assert!(matches!(err, Error::DisconnectedJoinGraph), "{err}");
    }

    #[test]
    fn rejects_multiple_aggregates() {
        let err =
            parse_sql("SELECT a, COUNT(*), SUM(b) FROM R GROUP BY a").unwrap_err();
        assert!(err.to_string().contains("one aggregate"), "{err}");
    }

    #[test]
    fn rejects_unknown_alias() {
        let err = parse_sql(
            "SELECT A.g, COUNT(*) FROM R A WHERE A.x = Z.y GROUP BY A.g",
        )
        .unwrap_err();
        assert!(matches!(err, Error::UnknownAlias(a) if a == "Z"));
    }

    #[test]
    fn select_must_match_group_by() {
        let err = parse_sql("SELECT a, COUNT(*) FROM R GROUP BY b").unwrap_err();
        assert!(err.to_string().contains("GROUP BY"), "{err}");
    }

    #[test]
    fn group_attr_in_join_gets_copied() {
        let q = parse_sql(
            "SELECT A.x, COUNT(*) FROM R A, S B WHERE A.x = B.x GROUP BY A.x",
        )
        .unwrap();
        assert_eq!(q.column_copies.len(), 1);
        assert_eq!(q.column_copies[0].source_column, "x");
        assert_eq!(q.group_by[0].column, format!("x{COPY_SUFFIX}"));
        // the join condition still references the original column
        assert_eq!(q.join_conditions[0].0.column, "x");
        // printing shows what the user wrote
        assert!(print_sql(&q).contains("GROUP BY A.x"));
    }

    #[test]
    fn print_parse_fixpoint() {
        for text in [Q2, Q3, "SELECT a, COUNT(*) FROM R GROUP BY a"] {
            let once = parse_sql(text).unwrap();
            let twice = parse_sql(&print_sql(&once)).unwrap();
            assert_eq!(once, twice, "fixpoint failed for {text}");
        }
    }

    #[test]
    fn json_bypass_roundtrip() {
        let doc = r#"{
            "relations": [["R1", "A"], ["R2", "B"]],
            "joins": [["A.j", "B.j"]],
            "group_by": ["A.g", "B.h"],
            "aggregate": {"op": "sum", "attr": "B.x"}
        }"#;
        let q = parse_query(doc).unwrap();
        assert_eq!(q.relations[1].alias, "B");
        assert_eq!(q.aggregate, Aggregate::Sum(AttributeRef::new("B", "x")));
        let sql = parse_query(&print_sql(&q)).unwrap();
        assert_eq!(q, sql);
    }

    #[test]
    fn json_missing_field_is_error() {
        let err = parse_query_json(r#"{"relations": []}"#).unwrap_err();
        assert!(err.to_string().contains("joins"), "{err}");
    }

    #[test]
    fn case_insensitive_keywords() {
        let q = parse_sql("select a, count(*) from R group by a").unwrap();
        assert_eq!(q.aggregate, Aggregate::CountStar);
    }
}
