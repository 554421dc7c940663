//! Propositions over encoded attributes and the leaf spaces of the three
//! discretization schemes.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bits::Bits;
use crate::dataset::{AttributeValues, EncodedDataset};
use crate::Error;

/// A leaf predicate.
///
/// Propositions are totally ordered by attribute index, then variant
/// (`Bool < Pivot < Interval`), then thresholds. Formula canonicalization and
/// the search tie-break both rely on this order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Proposition {
    Bool {
        attr: usize,
    },
    /// `value(attr) ≥ threshold`
    Pivot {
        attr: usize,
        threshold: i64,
    },
    /// `lo ≤ value(attr) ≤ hi`, endpoints inclusive.
    Interval {
        attr: usize,
        lo: i64,
        hi: i64,
    },
}

impl Proposition {
    pub fn attr(&self) -> usize {
        match *self {
            Proposition::Bool { attr }
            | Proposition::Pivot { attr, .. }
            | Proposition::Interval { attr, .. } => attr,
        }
    }

    fn rank(&self) -> u8 {
        match self {
            Proposition::Bool { .. } => 0,
            Proposition::Pivot { .. } => 1,
            Proposition::Interval { .. } => 2,
        }
    }

    fn thresholds(&self) -> (i64, i64) {
        match *self {
            Proposition::Bool { .. } => (0, 0),
            Proposition::Pivot { threshold, .. } => (threshold, 0),
            Proposition::Interval { lo, hi, .. } => (lo, hi),
        }
    }

    /// Checks that the proposition fits the attribute kinds of `ds`.
    pub fn validate(&self, ds: &EncodedDataset) -> crate::Result<()> {
        let attr = self.attr();
        if attr >= ds.num_attributes() {
            return Err(Error::Malformed(format!(
                "attribute index {attr} out of range"
            )));
        }
        let numeric = ds.attribute(attr).is_numeric();
        match *self {
            Proposition::Bool { .. } if numeric => Err(Error::Malformed(format!(
                "attribute `{}` is numeric",
                ds.attribute(attr).name
            ))),
            Proposition::Pivot { .. } | Proposition::Interval { .. } if !numeric => {
                Err(Error::Malformed(format!(
                    "attribute `{}` is Boolean",
                    ds.attribute(attr).name
                )))
            }
            Proposition::Interval { lo, hi, .. } if lo > hi => {
                Err(Error::Malformed(format!("interval [{lo}, {hi}] is empty")))
            }
            _ => Ok(()),
        }
    }

    /// Truth value at every point of `ds`.
    pub fn mask(&self, ds: &EncodedDataset) -> Bits {
        match (*self, &ds.attribute(self.attr()).values) {
            (Proposition::Bool { .. }, AttributeValues::Boolean(v)) => {
                Bits::from_fn(v.len(), |i| v[i])
            }
            (Proposition::Pivot { threshold, .. }, AttributeValues::Numeric(v)) => {
                Bits::from_fn(v.len(), |i| v[i] >= threshold)
            }
            (Proposition::Interval { lo, hi, .. }, AttributeValues::Numeric(v)) => {
                Bits::from_fn(v.len(), |i| lo <= v[i] && v[i] <= hi)
            }
            _ => panic!("proposition {self:?} does not match its attribute kind"),
        }
    }
}

impl Ord for Proposition {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.attr(), self.rank(), self.thresholds()).cmp(&(
            other.attr(),
            other.rank(),
            other.thresholds(),
        ))
    }
}

impl PartialOrd for Proposition {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Evaluates `p` at the point in position `pos` of `ds`.
pub fn eval_prop(p: &Proposition, ds: &EncodedDataset, pos: usize) -> bool {
    match *p {
        Proposition::Bool { attr } => ds.boolean(attr, pos),
        Proposition::Pivot { attr, threshold } => ds.numeric(attr, pos) >= threshold,
        Proposition::Interval { attr, lo, hi } => {
            let v = ds.numeric(attr, pos);
            lo <= v && v <= hi
        }
    }
}

/// Discretization scheme for numeric attributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// One fixed `x ≥ median(x)` proposition per attribute.
    Median,
    /// `x ≥ r` with `r` chosen by the search.
    Pivot,
    /// `x ∈ [l, u]` with `l ≤ u` chosen by the search.
    Interval,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Median, Scheme::Pivot, Scheme::Interval];

    pub fn as_str(&self) -> &'static str {
        match self {
            Scheme::Median => "median",
            Scheme::Pivot => "pivot",
            Scheme::Interval => "interval",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "median" => Ok(Scheme::Median),
            "pivot" => Ok(Scheme::Pivot),
            "interval" => Ok(Scheme::Interval),
            other => Err(Error::Usage(format!("unknown scheme `{other}`"))),
        }
    }
}

/// Sorted distinct observed values of every numeric attribute.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateGrid {
    values: Vec<Option<Vec<i64>>>,
}

impl CandidateGrid {
    /// Grid of numeric attribute `attr`; empty for Boolean attributes.
    pub fn values(&self, attr: usize) -> &[i64] {
        self.values[attr].as_deref().unwrap_or(&[])
    }

    pub fn min(&self, attr: usize) -> Option<i64> {
        self.values(attr).first().copied()
    }

    pub fn max(&self, attr: usize) -> Option<i64> {
        self.values(attr).last().copied()
    }

    pub fn is_numeric(&self, attr: usize) -> bool {
        self.values[attr].is_some()
    }

    pub fn num_attributes(&self) -> usize {
        self.values.len()
    }
}

pub fn candidate_grid(ds: &EncodedDataset) -> CandidateGrid {
    let values = (0..ds.num_attributes())
        .map(|a| {
            ds.numeric_column(a).map(|col| {
                let mut v = col.to_vec();
                v.sort_unstable();
                v.dedup();
                v
            })
        })
        .collect();
    CandidateGrid { values }
}

/// Lower median: the element at 1-based position ⌈n/2⌉ of the sorted values.
///
/// Panics if `attr` is not numeric or `ds` is empty.
pub fn median_of(ds: &EncodedDataset, attr: usize) -> i64 {
    let mut v = ds
        .numeric_column(attr)
        .expect("median of a non-numeric attribute")
        .to_vec();
    assert!(!v.is_empty(), "median of an empty dataset");
    v.sort_unstable();
    v[(v.len() - 1) / 2]
}

/// Admissible leaf propositions, grouped per attribute and sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeafSpace {
    pub per_attr: Vec<Vec<Proposition>>,
}

impl LeafSpace {
    /// All leaves in proposition order.
    pub fn all(&self) -> impl Iterator<Item = &Proposition> + '_ {
        self.per_attr.iter().flatten()
    }

    pub fn len(&self) -> usize {
        self.per_attr.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Leaves a scheme admits on data whose grid is `grid`.
///
/// Boolean attributes contribute their own proposition under every scheme.
/// Numeric attributes contribute their median pivot (median), one pivot
/// per grid value (pivot), or one interval per grid pair `l ≤ u`
/// (interval).
pub fn scheme_leaf_space(scheme: Scheme, grid: &CandidateGrid, ds: &EncodedDataset) -> LeafSpace {
    let per_attr = (0..grid.num_attributes())
        .map(|attr| {
            if !grid.is_numeric(attr) {
                return vec![Proposition::Bool { attr }];
            }
            let g = grid.values(attr);
            match scheme {
                Scheme::Median => vec![Proposition::Pivot {
                    attr,
                    threshold: median_of(ds, attr),
                }],
                Scheme::Pivot => g
                    .iter()
                    .map(|&threshold| Proposition::Pivot { attr, threshold })
                    .collect(),
                Scheme::Interval => g
                    .iter()
                    .enumerate()
                    .flat_map(|(i, &lo)| {
                        g[i..]
                            .iter()
                            .map(move |&hi| Proposition::Interval { attr, lo, hi })
                    })
                    .collect(),
            }
        })
        .collect();
    LeafSpace { per_attr }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn num(values: Vec<i64>) -> EncodedDataset {
        let n = values.len();
        EncodedDataset::from_columns(vec![], vec![("x", values)], vec![false; n]).unwrap()
    }

    #[test]
    fn grid_sorts_and_dedups() {
        let g = candidate_grid(&num(vec![27, 21, 81, 27]));
        assert_eq!(g.values(0), &[21, 27, 81]);
        assert_eq!((g.min(0), g.max(0)), (Some(21), Some(81)));
        assert_eq!(candidate_grid(&num(vec![5, 5, 5])).values(0), &[5]);
        assert_eq!(candidate_grid(&num(vec![3, 1, 2])).values(0), &[1, 2, 3]);
    }

    #[test]
    fn lower_median() {
        assert_eq!(median_of(&num(vec![1, 2, 3]), 0), 2);
        assert_eq!(median_of(&num(vec![4, 3, 2, 1]), 0), 2);
        assert_eq!(median_of(&num(vec![7]), 0), 7);
    }

    #[test]
    fn pivot_and_interval_semantics() {
        let ds = num(vec![27, 5, 6, 1]);
        assert!(eval_prop(
            &Proposition::Pivot {
                attr: 0,
                threshold: 27
            },
            &ds,
            0
        ));
        let iv = Proposition::Interval {
            attr: 0,
            lo: 1,
            hi: 5,
        };
        assert!(eval_prop(&iv, &ds, 1));
        assert!(!eval_prop(&iv, &ds, 2));
        assert!(eval_prop(&iv, &ds, 3));
        let low = Proposition::Pivot {
            attr: 0,
            threshold: 1,
        };
        assert!((0..4).all(|p| eval_prop(&low, &ds, p)));
        assert_eq!(low.mask(&ds).count_ones(), 4);
    }

    #[test]
    fn leaf_space_sizes() {
        let ds = EncodedDataset::from_columns(
            vec![("b", vec![true, false])],
            vec![("x", vec![1, 2]), ("y", vec![3, 3]), ("z", vec![1, 9])],
            vec![true, false],
        )
        .unwrap();
        let g = candidate_grid(&ds);
        let median = scheme_leaf_space(Scheme::Median, &g, &ds);
        assert_eq!(median.per_attr[1..].iter().map(Vec::len).sum::<usize>(), 3);
        assert_eq!(median.per_attr[0], vec![Proposition::Bool { attr: 0 }]);
        let pivot = scheme_leaf_space(Scheme::Pivot, &g, &ds);
        assert_eq!(pivot.per_attr[1].len(), 2);
        let interval = scheme_leaf_space(Scheme::Interval, &g, &ds);
        assert_eq!(
            interval.per_attr[1],
            vec![
                Proposition::Interval {
                    attr: 1,
                    lo: 1,
                    hi: 1
                },
                Proposition::Interval {
                    attr: 1,
                    lo: 1,
                    hi: 2
                },
                Proposition::Interval {
                    attr: 1,
                    lo: 2,
                    hi: 2
                },
            ]
        );
        let mut sorted: Vec<_> = interval.all().copied().collect();
        sorted.sort();
        assert_eq!(sorted, interval.all().copied().collect::<Vec<_>>());
    }

    #[test]
    fn pivot_grid_of_four_values() {
        let ds = num(vec![4, 1, 3, 2, 2]);
        let g = candidate_grid(&ds);
        assert_eq!(scheme_leaf_space(Scheme::Pivot, &g, &ds).len(), 4);
    }

    #[test]
    fn proposition_order() {
        let a = Proposition::Bool { attr: 1 };
        let b = Proposition::Pivot {
            attr: 0,
            threshold: 9,
        };
        let c = Proposition::Pivot {
            attr: 1,
            threshold: 0,
        };
        let d = Proposition::Interval {
            attr: 1,
            lo: -5,
            hi: 0,
        };
        let mut v = vec![d, c, a, b];
        v.sort();
        assert_eq!(v, vec![b, a, c, d]);
    }

    #[test]
    fn validate_rejects_kind_mismatch() {
        let ds = num(vec![1, 2]);
        assert!(Proposition::Bool { attr: 0 }.validate(&ds).is_err());
        assert!(Proposition::Interval {
            attr: 0,
            lo: 3,
            hi: 2
        }
        .validate(&ds)
        .is_err());
        assert!(Proposition::Pivot {
            attr: 1,
            threshold: 0
        }
        .validate(&ds)
        .is_err());
        assert!(Proposition::Pivot {
            attr: 0,
            threshold: 0
        }
        .validate(&ds)
        .is_ok());
    }
}
