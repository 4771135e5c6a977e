//! Feature engineering for the model ladder.
//!
//! Five feature families are available:
//!
//! | family | meaning                                   | columns      |
//! |--------|-------------------------------------------|--------------|
//! | `u`    | user id, one-hot                          | `n_users`    |
//! | `i`    | item id, one-hot                          | `n_items`    |
//! | `t`    | calendar day of the rating (UTC), one-hot | `n_days`     |
//! | `iu`   | set of items the user rated, bag of words | `n_items`    |
//! | `ii`   | set of users who rated the item           | `n_users`    |
//!
//! Columns are laid out family by family in the order above. Matrix
//! factorization uses `{u, i}`; SVD++ adds `iu`; the time-aware variants
//! add `t`, and the "flipped" variant adds `ii` on top.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::design::{BlockRelation, BlockTable, DesignMatrix};
use crate::error::{Error, Result};
use crate::types::{Dataset, FeatureGroup, GroupKind};

pub const SECONDS_PER_DAY: i64 = 86_400;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    U,
    I,
    T,
    Iu,
    Ii,
}

impl Family {
    pub const ALL: [Family; 5] = [Family::U, Family::I, Family::T, Family::Iu, Family::Ii];

    pub fn group_kind(self) -> GroupKind {
        match self {
            Family::U => GroupKind::User,
            Family::I => GroupKind::Item,
            Family::T => GroupKind::Day,
            Family::Iu => GroupKind::ImplicitUser,
            Family::Ii => GroupKind::ImplicitItem,
        }
    }

    fn label(self) -> &'static str {
        match self {
            Family::U => "u",
            Family::I => "i",
            Family::T => "t",
            Family::Iu => "iu",
            Family::Ii => "ii",
        }
    }
}

/// A set of feature families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModelVariant {
    bits: u8,
}

impl ModelVariant {
    pub const MF: ModelVariant = ModelVariant::from_bits(&[Family::U, Family::I]);
    pub const SVDPP: ModelVariant = ModelVariant::from_bits(&[Family::U, Family::I, Family::Iu]);
    pub const TIME_SVD: ModelVariant = ModelVariant::from_bits(&[Family::U, Family::I, Family::T]);
    pub const TIME_SVDPP: ModelVariant =
        ModelVariant::from_bits(&[Family::U, Family::I, Family::T, Family::Iu]);
    pub const TIME_SVDPP_FLIPPED: ModelVariant =
        ModelVariant::from_bits(&[Family::U, Family::I, Family::T, Family::Iu, Family::Ii]);

    /// The registered variants with their command-line names.
    pub const NAMED: [(&'static str, ModelVariant); 5] = [
        ("mf", Self::MF),
        ("svdpp", Self::SVDPP),
        ("timesvd", Self::TIME_SVD),
        ("timesvdpp", Self::TIME_SVDPP),
        ("timesvdpp-flipped", Self::TIME_SVDPP_FLIPPED),
    ];

    const fn from_bits(families: &[Family]) -> ModelVariant {
        let mut bits = 0;
        let mut i = 0;
        while i < families.len() {
            bits |= 1 << families[i] as u8;
            i += 1;
        }
        ModelVariant { bits }
    }

    /// Builds a variant from a family list. Sets other than the registered
    /// five require `allow_custom`.
    pub fn from_families(families: &[Family], allow_custom: bool) -> Result<ModelVariant> {
        let v = ModelVariant::from_bits(families);
        if !v.contains(Family::U) || !v.contains(Family::I) {
            return Err(Error::InvalidVariant(format!(
                "{v} must contain both u and i"
            )));
        }
        if !allow_custom && v.name().is_none() {
            return Err(Error::InvalidVariant(format!(
                "{v} is not a registered variant (custom feature sets need to be enabled)"
            )));
        }
        Ok(v)
    }

    pub fn contains(self, f: Family) -> bool {
        self.bits & (1 << f as u8) != 0
    }

    pub fn families(self) -> impl Iterator<Item = Family> {
        Family::ALL.into_iter().filter(move |&f| self.contains(f))
    }

    /// Registered name, if this is one of the five named variants.
    pub fn name(self) -> Option<&'static str> {
        Self::NAMED.iter().find(|(_, v)| *v == self).map(|(n, _)| *n)
    }

    /// Parses a registered name or a comma-separated family list such as
    /// `u,i,ii`.
    pub fn parse(s: &str, allow_custom: bool) -> Result<ModelVariant> {
        let key = s.trim().to_ascii_lowercase();
        if let Some((_, v)) = Self::NAMED.iter().find(|(n, _)| *n == key) {
            return Ok(*v);
        }
        let aliases = [
            ("svd++", Self::SVDPP),
            ("timesvd++", Self::TIME_SVDPP),
            ("timesvd++-flipped", Self::TIME_SVDPP_FLIPPED),
            ("timesvdppflipped", Self::TIME_SVDPP_FLIPPED),
        ];
        if let Some((_, v)) = aliases.iter().find(|(n, _)| *n == key) {
            return Ok(*v);
        }
        let mut families = Vec::new();
        for part in key.split(',') {
            let f = Family::ALL
                .into_iter()
                .find(|f| f.label() == part.trim())
                .ok_or_else(|| Error::InvalidVariant(format!("unknown model {s:?}")))?;
            families.push(f);
        }
        Self::from_families(&families, allow_custom)
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(name) = self.name() {
            return f.write_str(name);
        }
        let labels: Vec<_> = self.families().map(Family::label).collect();
        write!(f, "{{{}}}", labels.join(","))
    }
}

impl FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelVariant::parse(s, false)
    }
}

impl Serialize for ModelVariant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self.name() {
            Some(n) => s.serialize_str(n),
            None => {
                let labels: Vec<_> = self.families().map(Family::label).collect();
                s.serialize_str(&labels.join(","))
            }
        }
    }
}

impl<'de> Deserialize<'de> for ModelVariant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        ModelVariant::parse(&s, true).map_err(serde::de::Error::custom)
    }
}

/// Contiguous indices for users, items and days.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    variant: ModelVariant,
    users: BTreeMap<i64, u32>,
    items: BTreeMap<i64, u32>,
    days: BTreeMap<i64, u32>,
    groups: Vec<FeatureGroup>,
}

/// Day category of a timestamp: whole days since the epoch, UTC.
pub fn day_index(timestamp: i64) -> i64 {
    timestamp.div_euclid(SECONDS_PER_DAY)
}

fn index_sorted(ids: BTreeSet<i64>) -> BTreeMap<i64, u32> {
    ids.into_iter().enumerate().map(|(i, id)| (id, i as u32)).collect()
}

/// Fits a vocabulary over every user, item and day in `train` and
/// `implicit_corpus`. Ids are numbered in increasing raw-id order, so the
/// result does not depend on record order.
pub fn fit_vocabulary(train: &Dataset, variant: ModelVariant, implicit_corpus: &Dataset) -> Vocabulary {
    let all = || train.records().iter().chain(implicit_corpus.records());
    let users = index_sorted(all().map(|r| r.user_id).collect());
    let items = index_sorted(all().map(|r| r.item_id).collect());
    let days = if variant.contains(Family::T) {
        index_sorted(all().map(|r| day_index(r.timestamp)).collect())
    } else {
        BTreeMap::new()
    };
    let mut groups = Vec::new();
    let mut start = 0;
    for family in variant.families() {
        let len = match family {
            Family::U | Family::Ii => users.len(),
            Family::I | Family::Iu => items.len(),
            Family::T => days.len(),
        };
        groups.push(FeatureGroup::new(family.group_kind(), start..start + len));
        start += len;
    }
    Vocabulary {
        variant,
        users,
        items,
        days,
        groups,
    }
}

impl Vocabulary {
    pub fn variant(&self) -> ModelVariant {
        self.variant
    }

    pub fn groups(&self) -> &[FeatureGroup] {
        &self.groups
    }

    pub fn n_cols(&self) -> usize {
        self.groups.last().map_or(0, |g| g.end)
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn n_days(&self) -> usize {
        self.days.len()
    }

    pub fn user_index(&self, id: i64) -> Option<usize> {
        self.users.get(&id).map(|&i| i as usize)
    }

    pub fn item_index(&self, id: i64) -> Option<usize> {
        self.items.get(&id).map(|&i| i as usize)
    }

    pub fn day_category(&self, timestamp: i64) -> Option<usize> {
        self.days.get(&day_index(timestamp)).map(|&i| i as usize)
    }

    /// First column of `kind`, if the variant uses it.
    pub fn offset(&self, kind: GroupKind) -> Option<usize> {
        self.groups.iter().find(|g| g.kind == kind).map(|g| g.start)
    }
}

/// Which interactions count as implicit feedback.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImplicitMode {
    /// Which items each user rated, from training and test records alike.
    /// Test ratings are never used, only the fact that a rating exists.
    #[default]
    Prize,
    /// Training records only.
    Strict,
}

/// How the entries of a bag-of-words block are weighted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImplicitWeighting {
    /// `1/sqrt(n)` for a set of size `n`.
    #[default]
    InvSqrt,
    /// `1/n`.
    Inverse,
    /// `1`.
    Unit,
}

impl ImplicitWeighting {
    pub fn weight(self, n: usize) -> f64 {
        match self {
            ImplicitWeighting::InvSqrt => 1.0 / (n as f64).sqrt(),
            ImplicitWeighting::Inverse => 1.0 / n as f64,
            ImplicitWeighting::Unit => 1.0,
        }
    }
}

/// Deduplicated interaction sets keyed by raw ids.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ImplicitIndex {
    pub items_of_user: BTreeMap<i64, BTreeSet<i64>>,
    pub users_of_item: BTreeMap<i64, BTreeSet<i64>>,
}

pub fn build_implicit_index(corpus: &Dataset) -> ImplicitIndex {
    let mut idx = ImplicitIndex::default();
    for r in corpus.records() {
        idx.items_of_user.entry(r.user_id).or_default().insert(r.item_id);
        idx.users_of_item.entry(r.item_id).or_default().insert(r.user_id);
    }
    idx
}

impl ImplicitIndex {
    /// The index for `mode`: `train` alone when strict, `full` when prize.
    pub fn for_mode(mode: ImplicitMode, train: &Dataset, full: &Dataset) -> ImplicitIndex {
        match mode {
            ImplicitMode::Strict => build_implicit_index(train),
            ImplicitMode::Prize => build_implicit_index(full),
        }
    }

    pub fn contains(&self, user: i64, item: i64) -> bool {
        self.items_of_user
            .get(&user)
            .is_some_and(|s| s.contains(&item))
    }
}

/// Builds design matrices that share implicit-feedback blocks.
///
/// Train and test matrices built by the same builder reference the same
/// block tables.
#[derive(Debug, Clone)]
pub struct FeatureBuilder {
    vocab: Vocabulary,
    user_blocks: Option<Arc<BlockTable>>,
    item_blocks: Option<Arc<BlockTable>>,
}

impl FeatureBuilder {
    pub fn new(
        vocab: Vocabulary,
        implicit: &ImplicitIndex,
        weighting: ImplicitWeighting,
    ) -> Result<Self> {
        let user_blocks = match vocab.offset(GroupKind::ImplicitUser) {
            Some(off) => Some(Arc::new(implicit_table(
                GroupKind::ImplicitUser,
                &vocab.users,
                &implicit.items_of_user,
                |id| vocab.item_index(id),
                off,
                weighting,
                GroupKind::Item,
            )?)),
            None => None,
        };
        let item_blocks = match vocab.offset(GroupKind::ImplicitItem) {
            Some(off) => Some(Arc::new(implicit_table(
                GroupKind::ImplicitItem,
                &vocab.items,
                &implicit.users_of_item,
                |id| vocab.user_index(id),
                off,
                weighting,
                GroupKind::User,
            )?)),
            None => None,
        };
        Ok(FeatureBuilder {
            vocab,
            user_blocks,
            item_blocks,
        })
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    /// One row per record: unit weights on the user, item and day columns
    /// plus references to the user's and item's implicit blocks.
    pub fn build(&self, data: &Dataset) -> Result<DesignMatrix> {
        let v = &self.vocab;
        let variant = v.variant;
        let user_off = v.offset(GroupKind::User);
        let item_off = v.offset(GroupKind::Item);
        let day_off = v.offset(GroupKind::Day);
        let n = data.len();
        let mut targets = Vec::with_capacity(n);
        let mut direct = Vec::with_capacity(n);
        let mut user_keys = Vec::with_capacity(n);
        let mut item_keys = Vec::with_capacity(n);
        for (rec_idx, r) in data.records().iter().enumerate() {
            let unknown = |family: GroupKind, id: i64| Error::UnknownId {
                record: rec_idx,
                family,
                id,
            };
            let u = v.user_index(r.user_id).ok_or_else(|| unknown(GroupKind::User, r.user_id))?;
            let i = v.item_index(r.item_id).ok_or_else(|| unknown(GroupKind::Item, r.item_id))?;
            let mut entries = Vec::with_capacity(3);
            if let Some(off) = user_off {
                entries.push((off + u, 1.0));
            }
            if let Some(off) = item_off {
                entries.push((off + i, 1.0));
            }
            if let Some(off) = day_off {
                let d = v
                    .day_category(r.timestamp)
                    .ok_or_else(|| unknown(GroupKind::Day, day_index(r.timestamp)))?;
                entries.push((off + d, 1.0));
            }
            targets.push(r.rating);
            direct.push(entries);
            user_keys.push(u as u32);
            item_keys.push(i as u32);
        }
        let mut relations = Vec::new();
        if variant.contains(Family::Iu) {
            relations.push(BlockRelation {
                table: Arc::clone(self.user_blocks.as_ref().expect("built in new")),
                keys: user_keys,
            });
        }
        if variant.contains(Family::Ii) {
            relations.push(BlockRelation {
                table: Arc::clone(self.item_blocks.as_ref().expect("built in new")),
                keys: item_keys,
            });
        }
        DesignMatrix::from_parts(v.groups.clone(), targets, direct, relations)
    }
}

fn implicit_table(
    kind: GroupKind,
    keys: &BTreeMap<i64, u32>,
    sets: &BTreeMap<i64, BTreeSet<i64>>,
    member_index: impl Fn(i64) -> Option<usize>,
    offset: usize,
    weighting: ImplicitWeighting,
    member_family: GroupKind,
) -> Result<BlockTable> {
    let mut blocks = vec![Vec::new(); keys.len()];
    for (id, &key) in keys {
        let Some(set) = sets.get(id) else { continue };
        let w = weighting.weight(set.len());
        let block = &mut blocks[key as usize];
        for &member in set {
            let idx = member_index(member).ok_or(Error::UnknownId {
                record: 0,
                family: member_family,
                id: member,
            })?;
            block.push((offset + idx, w));
        }
    }
    Ok(BlockTable::new(kind, blocks))
}

/// Builds one design matrix for `data`, with a fresh set of block tables.
pub fn build_rows(
    data: &Dataset,
    vocab: &Vocabulary,
    implicit: &ImplicitIndex,
    weighting: ImplicitWeighting,
) -> Result<DesignMatrix> {
    FeatureBuilder::new(vocab.clone(), implicit, weighting)?.build(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::RatingRecord;

    fn small() -> Dataset {
        // 2 users, 3 items, 2 days.
        Dataset::new(vec![
            RatingRecord::new(10, 100, 4.0, 0),
            RatingRecord::new(10, 101, 3.0, 86_399),
            RatingRecord::new(20, 102, 5.0, 86_400),
            RatingRecord::new(20, 100, 2.0, 100_000),
        ])
    }

    #[test]
    fn mf_vocabulary_counts_columns() {
        let d = small();
        let v = fit_vocabulary(&d, ModelVariant::MF, &d);
        assert_eq!(v.n_cols(), 5);
        assert_eq!(v.groups().len(), 2);
    }

    #[test]
    fn days_are_floor_of_timestamp() {
        let d = Dataset::new(vec![
            RatingRecord::new(1, 1, 1.0, 0),
            RatingRecord::new(1, 1, 1.0, 86_399),
            RatingRecord::new(1, 1, 1.0, 86_400),
        ]);
        let v = fit_vocabulary(&d, ModelVariant::TIME_SVD, &d);
        assert_eq!(v.n_days(), 2);
        assert_eq!(v.day_category(86_399), Some(0));
        assert_eq!(v.day_category(86_400), Some(1));
    }

    #[test]
    fn flipped_layout() {
        let d = small();
        let v = fit_vocabulary(&d, ModelVariant::TIME_SVDPP_FLIPPED, &d);
        let kinds: Vec<_> = v.groups().iter().map(|g| (g.kind, g.len())).collect();
        assert_eq!(
            kinds,
            vec![
                (GroupKind::User, 2),
                (GroupKind::Item, 3),
                (GroupKind::Day, 2),
                (GroupKind::ImplicitUser, 3),
                (GroupKind::ImplicitItem, 2),
            ]
        );
        assert_eq!(v.n_cols(), 12);
    }

    #[test]
    fn mf_row_has_unit_user_and_item() {
        let d = small();
        let v = fit_vocabulary(&d, ModelVariant::MF, &d);
        let m = build_rows(&d, &v, &build_implicit_index(&d), ImplicitWeighting::InvSqrt).unwrap();
        // record (u=10 -> 0, i=101 -> 1): columns 0 and 2 + 1.
        assert_eq!(m.row(1).entries, vec![(0, 1.0), (3, 1.0)]);
    }

    #[test]
    fn svdpp_weights_are_inverse_sqrt() {
        let records: Vec<_> = (0..4).map(|i| RatingRecord::new(1, i, 3.0, 0)).collect();
        let d = Dataset::new(records);
        let v = fit_vocabulary(&d, ModelVariant::SVDPP, &d);
        let m = build_rows(&d, &v, &build_implicit_index(&d), ImplicitWeighting::InvSqrt).unwrap();
        let row = m.row(0);
        let iu: Vec<_> = row.entries.iter().filter(|e| e.0 >= 5).collect();
        assert_eq!(iu.len(), 4);
        assert!(iu.iter().all(|e| e.1 == 0.5));

        let single = Dataset::new(vec![RatingRecord::new(1, 1, 3.0, 0)]);
        let v = fit_vocabulary(&single, ModelVariant::SVDPP, &single);
        let m = build_rows(&single, &v, &build_implicit_index(&single), Default::default()).unwrap();
        assert_eq!(m.row(0).entries, vec![(0, 1.0), (1, 1.0), (2, 1.0)]);
    }

    #[test]
    fn implicit_sets_are_deduplicated() {
        let d = Dataset::new(vec![
            RatingRecord::new(0, 1, 1.0, 0),
            RatingRecord::new(0, 2, 1.0, 0),
            RatingRecord::new(1, 1, 1.0, 0),
            RatingRecord::new(0, 1, 2.0, 5),
        ]);
        let idx = build_implicit_index(&d);
        assert_eq!(idx.items_of_user[&0], BTreeSet::from([1, 2]));
        assert_eq!(idx.items_of_user[&1], BTreeSet::from([1]));
        assert_eq!(idx.users_of_item[&1], BTreeSet::from([0, 1]));
        assert_eq!(idx.users_of_item[&2], BTreeSet::from([0]));
    }

    #[test]
    fn strict_mode_excludes_test_interactions() {
        let full = small();
        let train = full.subset(&[0, 1, 2]);
        let strict = ImplicitIndex::for_mode(ImplicitMode::Strict, &train, &full);
        let prize = ImplicitIndex::for_mode(ImplicitMode::Prize, &train, &full);
        assert!(!strict.contains(20, 100));
        assert!(prize.contains(20, 100));
    }

    #[test]
    fn unknown_ids_are_reported() {
        let d = small();
        let v = fit_vocabulary(&d, ModelVariant::MF, &d);
        let other = Dataset::new(vec![RatingRecord::new(99, 100, 1.0, 0)]);
        let err = build_rows(&other, &v, &ImplicitIndex::default(), Default::default());
        assert!(matches!(
            err,
            Err(Error::UnknownId {
                record: 0,
                family: GroupKind::User,
                id: 99
            })
        ));
    }

    #[test]
    fn empty_implicit_set_leaves_family_out_of_row() {
        let d = small();
        let v = fit_vocabulary(&d, ModelVariant::SVDPP, &d);
        let m = build_rows(&d, &v, &ImplicitIndex::default(), Default::default()).unwrap();
        assert_eq!(m.row(0).entries.len(), 2);
    }

    #[test]
    fn variant_parsing() {
        assert_eq!("timesvdpp".parse::<ModelVariant>().unwrap(), ModelVariant::TIME_SVDPP);
        assert_eq!("u,i,iu".parse::<ModelVariant>().unwrap(), ModelVariant::SVDPP);
        assert!("u,i,ii".parse::<ModelVariant>().is_err());
        let custom = ModelVariant::parse("u,i,ii", true).unwrap();
        assert_eq!(custom.to_string(), "{u,i,ii}");
        assert!(ModelVariant::parse("u,t", true).is_err());
        assert!(ModelVariant::parse("bogus", true).is_err());
    }
}
