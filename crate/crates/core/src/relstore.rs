//! Loading, projecting and pre-aggregating base relations.
//!
//! Relations are bags (duplicates carry meaning) of scalar tuples. CSV
//! loading is deliberately simple: comma-separated UTF-8, optional header,
//! no quoting, and a column is typed as integer only when every one of its
//! fields parses as one. Empty fields are rejected — there is no NULL.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use crate::aggregates::{AggKind, Annotation};
use crate::error::{Error, Result};
use crate::value::Value;

/// A qualified attribute reference `alias.column`. The alias is absent when
/// the query text used a bare column name and more than one relation was in
/// scope; binding against loaded schemas fills it in.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AttributeRef {
    pub alias: Option<String>,
    pub column: String,
}

impl AttributeRef {
    pub fn new(alias: impl Into<String>, column: impl Into<String>) -> AttributeRef {
        AttributeRef {
            alias: Some(alias.into()),
            column: column.into(),
        }
    }

    pub fn bare(column: impl Into<String>) -> AttributeRef {
        AttributeRef {
            alias: None,
            column: column.into(),
        }
    }

    pub fn alias(&self) -> &str {
        self.alias.as_deref().unwrap_or("")
    }
}

impl std::fmt::Display for AttributeRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.alias {
            Some(a) => write!(f, "{}.{}", a, self.column),
            None => write!(f, "{}", self.column),
        }
    }
}

/// A named bag of rows. Row order carries no meaning; duplicates are kept.
/// Rows are shared so that aliasing the same file twice is free.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Relation {
    pub alias: String,
    pub columns: Vec<String>,
    rows: Arc<Vec<Vec<Value>>>,
}

impl Relation {
    pub fn new(
        alias: impl Into<String>,
        columns: Vec<String>,
        rows: Vec<Vec<Value>>,
    ) -> Result<Relation> {
        let alias = alias.into();
        for row in &rows {
            if row.len() != columns.len() {
                return Err(Error::Internal(format!(
                    "relation {alias}: row arity {} != {} columns",
                    row.len(),
                    columns.len()
                )));
            }
        }
        Ok(Relation {
            alias,
            columns,
            rows: Arc::new(rows),
        })
    }

    pub fn rows(&self) -> &[Vec<Value>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn arity(&self) -> usize {
        self.columns.len()
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::UnknownColumn {
                alias: self.alias.clone(),
                column: name.to_owned(),
            })
    }

    /// Same rows under a different alias.
    pub fn with_alias(&self, alias: impl Into<String>) -> Relation {
        Relation {
            alias: alias.into(),
            columns: self.columns.clone(),
            rows: Arc::clone(&self.rows),
        }
    }

    /// Appends a copy of `source` under the name `copy`. Used to decouple a
    /// group-by attribute from a join attribute over the same column.
    pub fn with_copied_column(&self, source: &str, copy: &str) -> Result<Relation> {
        let idx = self.column_index(source)?;
        let mut columns = self.columns.clone();
        columns.push(copy.to_owned());
        let rows = self
            .rows
            .iter()
            .map(|r| {
                let mut row = r.clone();
                row.push(r[idx].clone());
                row
            })
            .collect();
        Ok(Relation {
            alias: self.alias.clone(),
            columns,
            rows: Arc::new(rows),
        })
    }
}

/// A pre-aggregated relation: each distinct row once, with its bag count
/// (and, when requested, the fold of an aggregated attribute).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CountedRelation {
    pub alias: String,
    pub columns: Vec<String>,
    /// Distinct rows in sorted order.
    pub rows: Vec<(Vec<Value>, u64)>,
}

impl CountedRelation {
    /// Sum of multiplicities, i.e. the cardinality of the bag it summarizes.
    pub fn total(&self) -> u64 {
        self.rows.iter().map(|(_, m)| m).sum()
    }

    /// Expands back to the bag it summarizes.
    pub fn expand(&self) -> Relation {
        let mut rows = Vec::new();
        for (row, m) in &self.rows {
            for _ in 0..*m {
                rows.push(row.clone());
            }
        }
        Relation {
            alias: self.alias.clone(),
            columns: self.columns.clone(),
            rows: Arc::new(rows),
        }
    }
}

/// Loads a CSV file. With `header`, the first line names the columns;
/// otherwise they are `c0..c(k-1)`. A column is parsed as integers only if
/// every field in it is an integer.
pub fn load_csv(path: &Path, alias: &str, header: bool) -> Result<Relation> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let path_str = path.display().to_string();
    let mut lines = text.lines().enumerate();

    let (columns, first_data): (Vec<String>, Option<(usize, &str)>) = if header {
        match lines.next() {
            Some((_, line)) => (
                split_fields(line).map(str::to_owned).collect(),
                lines.next(),
            ),
            None => return Err(Error::EmptyRelation(alias.to_owned())),
        }
    } else {
        match lines.next() {
            Some((i, line)) => {
                let k = split_fields(line).count();
                ((0..k).map(|j| format!("c{j}")).collect(), Some((i, line)))
            }
            None => return Err(Error::EmptyRelation(alias.to_owned())),
        }
    };

    let arity = columns.len();
    let mut raw: Vec<Vec<String>> = Vec::new();
    let mut push_line = |lineno: usize, line: &str| -> Result<()> {
        let fields: Vec<&str> = split_fields(line).collect();
        if fields.len() != arity {
            return Err(Error::Csv {
                path: path_str.clone(),
                line: lineno + 1,
                msg: format!("expected {arity} fields, found {}", fields.len()),
            });
        }
        for f in &fields {
            if f.is_empty() {
                return Err(Error::Csv {
                    path: path_str.clone(),
                    line: lineno + 1,
                    msg: "empty field (NULLs are not supported)".to_owned(),
                });
            }
        }
        raw.push(fields.into_iter().map(str::to_owned).collect());
        Ok(())
    };

    if let Some((i, line)) = first_data {
        push_line(i, line)?;
    }
    for (i, line) in lines {
        push_line(i, line)?;
    }
    if raw.is_empty() {
        return Err(Error::EmptyRelation(alias.to_owned()));
    }

    // Column-wise type inference: all-integral columns become Int.
    let mut integral = vec![true; arity];
    for row in &raw {
        for (j, f) in row.iter().enumerate() {
            if integral[j] && f.parse::<i64>().is_err() {
                integral[j] = false;
            }
        }
    }
    let rows = raw
        .into_iter()
        .map(|row| {
            row.into_iter()
                .enumerate()
                .map(|(j, f)| {
                    if integral[j] {
                        Value::Int(f.parse().unwrap())
                    } else {
                        Value::Str(f)
                    }
                })
                .collect()
        })
        .collect();
    Relation::new(alias, columns, rows)
}

fn split_fields(line: &str) -> impl Iterator<Item = &str> {
    line.strip_suffix('\r').unwrap_or(line).split(',')
}

/// Bag projection: keeps duplicates, so the row count never changes.
pub fn project_bag(r: &Relation, attrs: &[String]) -> Result<Relation> {
    let idx: Vec<usize> = attrs
        .iter()
        .map(|a| r.column_index(a))
        .collect::<Result<_>>()?;
    let rows = r
        .rows()
        .iter()
        .map(|row| idx.iter().map(|&i| row[i].clone()).collect())
        .collect();
    Relation::new(r.alias.clone(), attrs.to_vec(), rows)
}

/// Distinct rows of the bag projection, each with its duplicate count.
/// The sum of counts always equals the input row count.
pub fn preaggregate(r: &Relation, attrs: &[String]) -> Result<CountedRelation> {
    let idx: Vec<usize> = attrs
        .iter()
        .map(|a| r.column_index(a))
        .collect::<Result<_>>()?;
    let mut counts: BTreeMap<Vec<Value>, u64> = BTreeMap::new();
    for row in r.rows() {
        let key: Vec<Value> = idx.iter().map(|&i| row[i].clone()).collect();
        *counts.entry(key).or_insert(0) += 1;
    }
    Ok(CountedRelation {
        alias: r.alias.clone(),
        columns: attrs.to_vec(),
        rows: counts.into_iter().collect(),
    })
}

/// Pre-aggregation that also folds an aggregated attribute per distinct row:
/// the sum (and min/max) of `fold_col` over the duplicates each row absorbs.
pub fn preaggregate_annotated(
    r: &Relation,
    attrs: &[String],
    fold_col: Option<&str>,
    kind: AggKind,
) -> Result<Vec<(Vec<Value>, Annotation)>> {
    let idx: Vec<usize> = attrs
        .iter()
        .map(|a| r.column_index(a))
        .collect::<Result<_>>()?;
    let fold_idx = fold_col.map(|c| r.column_index(c)).transpose()?;
    let mut acc: BTreeMap<Vec<Value>, Annotation> = BTreeMap::new();
    for row in r.rows() {
        let key: Vec<Value> = idx.iter().map(|&i| row[i].clone()).collect();
        let mut unit = Annotation::one(kind);
        if let Some(fi) = fold_idx {
            let v = &row[fi];
            if kind.needs_sum() {
                let i = v.as_int().ok_or_else(|| {
                    Error::InvalidQuery(format!(
                        "cannot {} over non-integer value `{v}`",
                        kind.label()
                    ))
                })?;
                unit.sum = Some(i);
            }
            if kind.needs_minmax() {
                unit.min = Some(v.clone());
                unit.max = Some(v.clone());
            }
        }
        acc.entry(key)
            .and_modify(|a| *a = crate::aggregates::annot_merge(a, &unit))
            .or_insert(unit);
    }
    Ok(acc.into_iter().collect())
}
