//! The annotation algebra that generalizes tuple counting to SUM, MIN, MAX
//! and AVG.
//!
//! Every partial result in the engine carries an [`Annotation`]: a tuple
//! count plus, depending on the aggregate, a running sum or a running
//! min/max. Three operations move annotations through the pipeline:
//!
//! * [`annot_sequential`] — extend a partial result along a graph edge
//!   (multiplying by the edge multiplicity),
//! * [`annot_parallel`] — combine two independent partial results whose
//!   tuples pair up (cross product of counts),
//! * [`annot_merge`] — add up alternatives that land in the same group.
//!
//! `(count, sum)` under (merge, parallel) behaves like a commutative
//! semiring, which is what makes the factorized evaluation legal.

use crate::value::Value;

/// Which aggregate a query computes. Fixed once per query.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AggKind {
    Count,
    Sum,
    Min,
    Max,
    Avg,
}

impl AggKind {
    pub fn needs_sum(self) -> bool {
        matches!(self, AggKind::Sum | AggKind::Avg)
    }

    pub fn needs_minmax(self) -> bool {
        matches!(self, AggKind::Min | AggKind::Max)
    }

    pub fn label(self) -> &'static str {
        match self {
            AggKind::Count => "count",
            AggKind::Sum => "sum",
            AggKind::Min => "min",
            AggKind::Max => "max",
            AggKind::Avg => "avg",
        }
    }
}

/// Running aggregate state attached to edges, path counts, c-pairs and
/// partial result tuples.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Annotation {
    pub count: u64,
    /// Present for SUM/AVG; zero until the aggregated attribute is folded in.
    pub sum: Option<i64>,
    pub min: Option<Value>,
    pub max: Option<Value>,
}

impl Annotation {
    /// Multiplicative identity: one tuple carrying nothing.
    pub fn one(kind: AggKind) -> Annotation {
        Annotation {
            count: 1,
            sum: kind.needs_sum().then_some(0),
            min: None,
            max: None,
        }
    }

    /// A bare multiplicity, e.g. a join edge or an edge of a relation that
    /// does not own the aggregated attribute.
    pub fn from_multiplicity(m: u64, kind: AggKind) -> Annotation {
        Annotation {
            count: m,
            sum: kind.needs_sum().then_some(0),
            min: None,
            max: None,
        }
    }
}

fn opt_min(a: Option<Value>, b: Option<Value>) -> Option<Value> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.min(y)),
        (x, None) => x,
        (None, y) => y,
    }
}

fn opt_max(a: Option<Value>, b: Option<Value>) -> Option<Value> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.max(y)),
        (x, None) => x,
        (None, y) => y,
    }
}

/// Combines two independent partials: every tuple of `a` pairs with every
/// tuple of `b`. At most one side carries sum/min/max content because the
/// aggregated attribute lives in a single relation.
pub fn annot_parallel(a: &Annotation, b: &Annotation) -> Annotation {
    debug_assert!(
        a.min.is_none() || b.min.is_none(),
        "min content on both sides of a parallel combine"
    );
    debug_assert!(
        a.max.is_none() || b.max.is_none(),
        "max content on both sides of a parallel combine"
    );
    let sum = match (a.sum, b.sum) {
        (Some(sa), Some(sb)) => Some(sa * b.count as i64 + sb * a.count as i64),
        (Some(sa), None) => Some(sa * b.count as i64),
        (None, Some(sb)) => Some(sb * a.count as i64),
        (None, None) => None,
    };
    Annotation {
        count: a.count * b.count,
        sum,
        min: opt_min(a.min.clone(), b.min.clone()),
        max: opt_max(a.max.clone(), b.max.clone()),
    }
}

/// Extends a partial along an edge. The edge is itself annotation-valued:
/// plain edges are a bare multiplicity, while the intra-relation edges of
/// the relation owning the aggregated attribute also carry the per-edge
/// fold of that attribute.
pub fn annot_sequential(a: &Annotation, edge: &Annotation) -> Annotation {
    annot_parallel(a, edge)
}

/// Adds alternatives reaching the same group under the same path.
pub fn annot_merge(a: &Annotation, b: &Annotation) -> Annotation {
    let sum = match (a.sum, b.sum) {
        (Some(sa), Some(sb)) => Some(sa + sb),
        (x, None) => x,
        (None, y) => y,
    };
    Annotation {
        count: a.count + b.count,
        sum,
        min: opt_min(a.min.clone(), b.min.clone()),
        max: opt_max(a.max.clone(), b.max.clone()),
    }
}

/// Finalized aggregate value of one output group.
#[derive(Clone, Debug)]
pub enum AggValue {
    Int(i64),
    Scalar(Value),
    /// Exact rational; rendered at six decimal places.
    Ratio { sum: i64, count: u64 },
}

impl AggValue {
    pub fn render(&self) -> String {
        match self {
            AggValue::Int(i) => i.to_string(),
            AggValue::Scalar(v) => v.to_string(),
            AggValue::Ratio { sum, count } => render_ratio(*sum, *count),
        }
    }
}

impl PartialEq for AggValue {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (AggValue::Int(a), AggValue::Int(b)) => a == b,
            (AggValue::Scalar(a), AggValue::Scalar(b)) => a == b,
            (AggValue::Ratio { sum: s1, count: c1 }, AggValue::Ratio { sum: s2, count: c2 }) => {
                // cross-multiply so 1/2 == 2/4
                (*s1 as i128) * (*c2 as i128) == (*s2 as i128) * (*c1 as i128)
            }
            _ => false,
        }
    }
}

impl Eq for AggValue {}

/// Fixed six-decimal rendering of sum/count, round half away from zero.
fn render_ratio(sum: i64, count: u64) -> String {
    debug_assert!(count > 0);
    let neg = sum < 0;
    let num = (sum as i128).unsigned_abs() * 1_000_000;
    let den = count as u128;
    let scaled = (num + den / 2) / den;
    let whole = scaled / 1_000_000;
    let frac = scaled % 1_000_000;
    let sign = if neg && scaled > 0 { "-" } else { "" };
    format!("{sign}{whole}.{frac:06}")
}

/// Final scalar for a group. Never called on a zero count: groups with no
/// contributing tuples are not emitted at all.
pub fn finalize(a: &Annotation, kind: AggKind) -> AggValue {
    assert!(a.count > 0, "finalize on empty annotation");
    match kind {
        AggKind::Count => AggValue::Int(a.count as i64),
        AggKind::Sum => AggValue::Int(a.sum.expect("sum mode without sum")),
        AggKind::Min => AggValue::Scalar(a.min.clone().expect("min mode without value")),
        AggKind::Max => AggValue::Scalar(a.max.clone().expect("max mode without value")),
        AggKind::Avg => AggValue::Ratio {
            sum: a.sum.expect("avg mode without sum"),
            count: a.count,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn count(c: u64) -> Annotation {
        Annotation::from_multiplicity(c, AggKind::Count)
    }

    fn sum(c: u64, s: i64) -> Annotation {
        Annotation {
            count: c,
            sum: Some(s),
            min: None,
            max: None,
        }
    }

    #[test]
    fn sequential_count_multiplies() {
        let a = count(2);
        let e = Annotation::from_multiplicity(3, AggKind::Count);
        assert_eq!(annot_sequential(&a, &e).count, 6);
    }

    #[test]
    fn sequential_sum_weights_by_count() {
        // edge folded from two duplicate rows with attribute values summing to 5
        let a = sum(1, 0);
        let edge = sum(2, 5);
        let step = annot_sequential(&a, &edge);
        assert_eq!((step.count, step.sum), (2, Some(5)));
        // then a plain multiplicity-3 edge
        let m3 = Annotation::from_multiplicity(3, AggKind::Sum);
        let out = annot_sequential(&step, &m3);
        assert_eq!((out.count, out.sum), (6, Some(15)));
    }

    #[test]
    fn min_ignores_multiplicity() {
        let a = Annotation {
            count: 1,
            sum: None,
            min: Some(Value::Int(4)),
            max: None,
        };
        let e = Annotation::from_multiplicity(100, AggKind::Min);
        assert_eq!(annot_sequential(&a, &e).min, Some(Value::Int(4)));
    }

    #[test]
    fn parallel_examples() {
        assert_eq!(annot_parallel(&count(2), &count(3)).count, 6);
        let combined = annot_parallel(&sum(2, 10), &sum(3, 0));
        assert_eq!((combined.count, combined.sum), (6, Some(30)));
        let m = Annotation {
            count: 2,
            sum: None,
            min: Some(Value::Int(7)),
            max: None,
        };
        let other = count(3);
        let out = annot_parallel(&m, &other);
        assert_eq!((out.count, out.min), (6, Some(Value::Int(7))));
    }

    #[test]
    fn merge_examples() {
        assert_eq!(annot_merge(&count(2), &count(3)).count, 5);
        let s = annot_merge(&sum(2, 4), &sum(1, 9));
        assert_eq!((s.count, s.sum), (3, Some(13)));
        let m1 = Annotation {
            count: 1,
            sum: None,
            min: Some(Value::Int(5)),
            max: None,
        };
        let m2 = Annotation {
            count: 1,
            sum: None,
            min: Some(Value::Int(2)),
            max: None,
        };
        assert_eq!(annot_merge(&m1, &m2).min, Some(Value::Int(2)));
    }

    #[test]
    fn finalize_examples() {
        assert_eq!(finalize(&sum(3, 10), AggKind::Avg).render(), "3.333333");
        assert_eq!(finalize(&count(7), AggKind::Count).render(), "7");
        let m = Annotation {
            count: 1,
            sum: None,
            min: Some(Value::Int(2)),
            max: None,
        };
        assert_eq!(finalize(&m, AggKind::Min).render(), "2");
    }

    #[test]
    fn ratio_eq_cross_multiplies() {
        let a = AggValue::Ratio { sum: 1, count: 2 };
        let b = AggValue::Ratio { sum: 2, count: 4 };
        assert_eq!(a, b);
    }

    #[test]
    fn ratio_render_negative() {
        assert_eq!(render_ratio(-10, 4), "-2.500000");
        assert_eq!(render_ratio(-1, 3), "-0.333333");
    }

    proptest! {
        // (count, sum) is a commutative semiring action: parallel distributes
        // over merge.
        #[test]
        fn parallel_distributes_over_merge(
            (ca, sa) in (1u64..50, -100i64..100),
            (cb, sb) in (1u64..50, -100i64..100),
            (cc, sc) in (1u64..50, -100i64..100),
        ) {
            let a = sum(ca, sa);
            let b = sum(cb, sb);
            let c = sum(cc, sc);
            let lhs = annot_parallel(&a, &annot_merge(&b, &c));
            let rhs = annot_merge(&annot_parallel(&a, &b), &annot_parallel(&a, &c));
            prop_assert_eq!(lhs, rhs);
        }

        #[test]
        fn parallel_commutes(
            (ca, sa) in (1u64..50, -100i64..100),
            (cb, sb) in (1u64..50, -100i64..100),
        ) {
            let a = sum(ca, sa);
            let b = sum(cb, sb);
            prop_assert_eq!(annot_parallel(&a, &b), annot_parallel(&b, &a));
        }
    }
}
