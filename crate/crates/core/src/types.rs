//! Shared domain vocabulary: ratings, datasets, feature groups and sparse rows.

use std::collections::HashSet;
use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

/// One observed rating.
///
/// Ids are kept exactly as they appear in the source file; contiguous
/// column indices are assigned later by [`crate::featurize::Vocabulary`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub user_id: i64,
    pub item_id: i64,
    pub rating: f64,
    /// Seconds since the Unix epoch.
    pub timestamp: i64,
}

impl RatingRecord {
    pub fn new(user_id: i64, item_id: i64, rating: f64, timestamp: i64) -> Self {
        RatingRecord {
            user_id,
            item_id,
            rating,
            timestamp,
        }
    }
}

/// An ordered collection of ratings.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    records: Vec<RatingRecord>,
    n_users: usize,
    n_items: usize,
}

impl Dataset {
    pub fn new(records: Vec<RatingRecord>) -> Self {
        let n_users = records
            .iter()
            .map(|r| r.user_id)
            .collect::<HashSet<_>>()
            .len();
        let n_items = records
            .iter()
            .map(|r| r.item_id)
            .collect::<HashSet<_>>()
            .len();
        Dataset {
            records,
            n_users,
            n_items,
        }
    }

    pub fn records(&self) -> &[RatingRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn ratings(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.rating).collect()
    }

    /// The records at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset::new(indices.iter().map(|&i| self.records[i]).collect())
    }
}

impl FromIterator<RatingRecord> for Dataset {
    fn from_iter<I: IntoIterator<Item = RatingRecord>>(iter: I) -> Self {
        Dataset::new(iter.into_iter().collect())
    }
}

/// A broken invariant found by [`validate_dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    /// Index of the offending record, `None` for dataset-level rules.
    pub record: Option<usize>,
    pub rule: &'static str,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.record {
            Some(i) => write!(f, "record {i}: {}", self.rule),
            None => write!(f, "dataset: {}", self.rule),
        }
    }
}

pub const RULE_RATING_FINITE: &str = "rating finite";
pub const RULE_TIMESTAMP_NON_NEGATIVE: &str = "timestamp ≥ 0";
pub const RULE_NON_EMPTY: &str = "records non-empty";

/// Lists every record and dataset invariant that does not hold.
pub fn validate_dataset(d: &Dataset) -> Vec<Violation> {
    let mut out = Vec::new();
    if d.is_empty() {
        out.push(Violation {
            record: None,
            rule: RULE_NON_EMPTY,
        });
    }
    for (i, r) in d.records().iter().enumerate() {
        if !r.rating.is_finite() {
            out.push(Violation {
                record: Some(i),
                rule: RULE_RATING_FINITE,
            });
        }
        if r.timestamp < 0 {
            out.push(Violation {
                record: Some(i),
                rule: RULE_TIMESTAMP_NON_NEGATIVE,
            });
        }
    }
    out
}

/// Feature families. The declaration order is the column layout order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum GroupKind {
    User,
    Item,
    Day,
    ImplicitUser,
    ImplicitItem,
    Other,
}

impl GroupKind {
    pub const ALL: [GroupKind; 6] = [
        GroupKind::User,
        GroupKind::Item,
        GroupKind::Day,
        GroupKind::ImplicitUser,
        GroupKind::ImplicitItem,
        GroupKind::Other,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GroupKind::User => "USER",
            GroupKind::Item => "ITEM",
            GroupKind::Day => "DAY",
            GroupKind::ImplicitUser => "IMPLICIT_USER",
            GroupKind::ImplicitItem => "IMPLICIT_ITEM",
            GroupKind::Other => "OTHER",
        }
    }

    pub fn from_name(name: &str) -> Option<GroupKind> {
        GroupKind::ALL.into_iter().find(|g| g.name() == name)
    }

    pub(crate) fn code(self) -> u8 {
        self as u8
    }

    pub(crate) fn from_code(code: u8) -> Option<GroupKind> {
        GroupKind::ALL.get(code as usize).copied()
    }
}

impl fmt::Display for GroupKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A family of columns occupying a half-open index range.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureGroup {
    pub kind: GroupKind,
    pub start: usize,
    pub end: usize,
}

impl FeatureGroup {
    pub fn new(kind: GroupKind, range: Range<usize>) -> Self {
        FeatureGroup {
            kind,
            start: range.start,
            end: range.end,
        }
    }

    pub fn range(&self) -> Range<usize> {
        self.start..self.end
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn contains(&self, column: usize) -> bool {
        self.start <= column && column < self.end
    }
}

/// Checks that `groups` tile `[0, p)` contiguously and returns `p`.
pub fn check_partition(groups: &[FeatureGroup]) -> Result<usize, String> {
    let mut next = 0;
    for g in groups {
        if g.start != next || g.end < g.start {
            return Err(format!(
                "group {} covers {}..{}, expected start {next}",
                g.kind, g.start, g.end
            ));
        }
        next = g.end;
    }
    Ok(next)
}

/// Index of the group containing `column`.
pub fn group_of(groups: &[FeatureGroup], column: usize) -> Option<usize> {
    // Groups are sorted and contiguous.
    let idx = groups.partition_point(|g| g.end <= column);
    (idx < groups.len() && groups[idx].contains(column)).then_some(idx)
}

/// A weighted sparse feature vector with its regression target.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseRow {
    pub target: f64,
    /// `(column, weight)` pairs, strictly increasing in column.
    pub entries: Vec<(usize, f64)>,
}

impl SparseRow {
    pub fn new(target: f64, entries: Vec<(usize, f64)>) -> Self {
        SparseRow { target, entries }
    }

    /// Checks ordering, weight and group-membership invariants.
    pub fn check(&self, groups: &[FeatureGroup]) -> Result<(), String> {
        for pair in self.entries.windows(2) {
            if pair[0].0 >= pair[1].0 {
                return Err(format!(
                    "columns not strictly increasing: {} then {}",
                    pair[0].0, pair[1].0
                ));
            }
        }
        for &(c, w) in &self.entries {
            if !w.is_finite() || w == 0.0 {
                return Err(format!("column {c} has weight {w}"));
            }
            if group_of(groups, c).is_none() {
                return Err(format!("column {c} outside every feature group"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn well_formed_dataset_has_no_violations() {
        let d = Dataset::new(vec![
            RatingRecord::new(1, 10, 4.0, 0),
            RatingRecord::new(2, 10, 3.5, 86_400),
            RatingRecord::new(1, 11, 1.0, 5),
        ]);
        assert!(validate_dataset(&d).is_empty());
        assert_eq!(d.n_users(), 2);
        assert_eq!(d.n_items(), 2);
    }

    #[test]
    fn nan_rating_is_reported() {
        let d = Dataset::new(vec![
            RatingRecord::new(1, 10, 4.0, 0),
            RatingRecord::new(1, 11, f64::NAN, 0),
        ]);
        assert_eq!(
            validate_dataset(&d),
            vec![Violation {
                record: Some(1),
                rule: RULE_RATING_FINITE
            }]
        );
    }

    #[test]
    fn negative_timestamp_is_reported() {
        let d = Dataset::new(vec![RatingRecord::new(1, 10, 4.0, -1)]);
        let v = validate_dataset(&d);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule, RULE_TIMESTAMP_NON_NEGATIVE);
        assert_eq!(v[0].to_string(), "record 0: timestamp ≥ 0");
    }

    #[test]
    fn empty_dataset_is_reported() {
        assert_eq!(validate_dataset(&Dataset::default())[0].rule, RULE_NON_EMPTY);
    }

    #[test]
    fn group_lookup_and_partition() {
        let groups = vec![
            FeatureGroup::new(GroupKind::User, 0..2),
            FeatureGroup::new(GroupKind::Item, 2..5),
            FeatureGroup::new(GroupKind::Day, 5..5),
            FeatureGroup::new(GroupKind::ImplicitUser, 5..8),
        ];
        assert_eq!(check_partition(&groups), Ok(8));
        assert_eq!(group_of(&groups, 0), Some(0));
        assert_eq!(group_of(&groups, 4), Some(1));
        assert_eq!(group_of(&groups, 5), Some(3));
        assert_eq!(group_of(&groups, 8), None);

        let gap = vec![
            FeatureGroup::new(GroupKind::User, 0..2),
            FeatureGroup::new(GroupKind::Item, 3..5),
        ];
        assert!(check_partition(&gap).is_err());
    }

    #[test]
    fn sparse_row_invariants() {
        let groups = vec![FeatureGroup::new(GroupKind::Other, 0..6)];
        assert!(SparseRow::new(1.0, vec![(0, 1.0), (5, 0.5)]).check(&groups).is_ok());
        assert!(SparseRow::new(1.0, vec![(5, 1.0), (0, 0.5)]).check(&groups).is_err());
        assert!(SparseRow::new(1.0, vec![(0, 0.0)]).check(&groups).is_err());
        assert!(SparseRow::new(1.0, vec![(6, 1.0)]).check(&groups).is_err());
    }

    #[test]
    fn group_names_round_trip() {
        for g in GroupKind::ALL {
            assert_eq!(GroupKind::from_name(g.name()), Some(g));
            assert_eq!(GroupKind::from_code(g.code()), Some(g));
        }
    }
}
