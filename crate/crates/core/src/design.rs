//! Design matrices: per-row sparse entries plus optional shared blocks.
//!
//! Bag-of-words families (the implicit user/item sets) repeat the same
//! block of entries on every row of a user or item. Instead of copying the
//! block into each row, a [`BlockRelation`] stores one key per row that
//! points into a shared [`BlockTable`]. Materializing a matrix expands the
//! blocks into plain rows; predictions are identical either way.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::types::{check_partition, FeatureGroup, GroupKind, SparseRow};

/// Sparse blocks addressed by key, stored in compressed row form.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockTable {
    kind: GroupKind,
    offsets: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl BlockTable {
    /// `blocks[key]` lists that key's `(column, weight)` entries.
    pub fn new(kind: GroupKind, blocks: Vec<Vec<(usize, f64)>>) -> Self {
        let mut offsets = Vec::with_capacity(blocks.len() + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        offsets.push(0);
        for mut block in blocks {
            block.sort_by_key(|e| e.0);
            for (c, w) in block {
                cols.push(c as u32);
                vals.push(w);
            }
            offsets.push(cols.len());
        }
        BlockTable {
            kind,
            offsets,
            cols,
            vals,
        }
    }

    pub fn kind(&self) -> GroupKind {
        self.kind
    }

    pub fn n_keys(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn block(&self, key: usize) -> (&[u32], &[f64]) {
        let r = self.offsets[key]..self.offsets[key + 1];
        (&self.cols[r.clone()], &self.vals[r])
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }
}

/// Per-row references into a shared [`BlockTable`].
#[derive(Debug, Clone, PartialEq)]
pub struct BlockRelation {
    pub table: Arc<BlockTable>,
    pub keys: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    n_cols: usize,
    groups: Vec<FeatureGroup>,
    targets: Vec<f64>,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
    relations: Vec<BlockRelation>,
}

impl DesignMatrix {
    /// Assembles a matrix from per-row direct entries and block relations.
    pub(crate) fn from_parts(
        groups: Vec<FeatureGroup>,
        targets: Vec<f64>,
        direct: Vec<Vec<(usize, f64)>>,
        relations: Vec<BlockRelation>,
    ) -> Result<Self> {
        let n_cols = check_partition(&groups).map_err(Error::Dimension)?;
        let mut row_ptr = Vec::with_capacity(direct.len() + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for entries in direct {
            for (c, w) in entries {
                cols.push(c as u32);
                vals.push(w);
            }
            row_ptr.push(cols.len());
        }
        for rel in &relations {
            if rel.keys.len() != targets.len() {
                return Err(Error::Dimension(format!(
                    "relation has {} keys for {} rows",
                    rel.keys.len(),
                    targets.len()
                )));
            }
        }
        Ok(DesignMatrix {
            n_cols,
            groups,
            targets,
            row_ptr,
            cols,
            vals,
            relations,
        })
    }

    /// Builds a fully materialized matrix, validating every row.
    pub fn from_rows(rows: Vec<SparseRow>, groups: Vec<FeatureGroup>) -> Result<Self> {
        let mut targets = Vec::with_capacity(rows.len());
        let mut direct = Vec::with_capacity(rows.len());
        for (i, row) in rows.into_iter().enumerate() {
            row.check(&groups)
                .map_err(|e| Error::Dimension(format!("row {i}: {e}")))?;
            targets.push(row.target);
            direct.push(row.entries);
        }
        Self::from_parts(groups, targets, direct, Vec::new())
    }

    /// Adds a shared block relation. The table's columns must lie in the
    /// group of the table's kind, and no direct entry may use that group.
    pub fn with_relation(mut self, rel: BlockRelation) -> Result<Self> {
        let kind = rel.table.kind();
        let group = self
            .groups
            .iter()
            .find(|g| g.kind == kind)
            .ok_or_else(|| Error::Dimension(format!("no {kind} group for block relation")))?
            .clone();
        if self.relations.iter().any(|r| r.table.kind() == kind) {
            return Err(Error::Dimension(format!("duplicate {kind} relation")));
        }
        if rel.keys.len() != self.n_rows() {
            return Err(Error::Dimension(format!(
                "relation has {} keys for {} rows",
                rel.keys.len(),
                self.n_rows()
            )));
        }
        if rel.keys.iter().any(|&k| k as usize >= rel.table.n_keys()) {
            return Err(Error::Dimension("relation key beyond table".into()));
        }
        if rel.table.cols.iter().any(|&c| !group.contains(c as usize)) {
            return Err(Error::Dimension(format!("block column outside the {kind} group")));
        }
        if self.cols.iter().any(|&c| group.contains(c as usize)) {
            return Err(Error::Dimension(format!("direct entries overlap the {kind} group")));
        }
        self.relations.push(rel);
        Ok(self)
    }

    /// Wraps rows with no group structure in a single `OTHER` group.
    pub fn from_ungrouped_rows(rows: Vec<SparseRow>, n_cols: usize) -> Result<Self> {
        Self::from_rows(rows, vec![FeatureGroup::new(GroupKind::Other, 0..n_cols)])
    }

    pub fn n_rows(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn groups(&self) -> &[FeatureGroup] {
        &self.groups
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn relations(&self) -> &[BlockRelation] {
        &self.relations
    }

    pub fn direct_row(&self, i: usize) -> (&[u32], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.cols[r.clone()], &self.vals[r])
    }

    /// Non-zeros counting block entries once per row that references them.
    pub fn nnz(&self) -> usize {
        let blocks: usize = self
            .relations
            .iter()
            .map(|rel| {
                rel.keys
                    .iter()
                    .map(|&k| rel.table.block(k as usize).0.len())
                    .sum::<usize>()
            })
            .sum();
        self.cols.len() + blocks
    }

    /// Appends row `i`'s entries (direct and block) to `buf`, sorted by column.
    pub fn row_entries(&self, i: usize, buf: &mut Vec<(usize, f64)>) {
        buf.clear();
        let (cols, vals) = self.direct_row(i);
        buf.extend(cols.iter().map(|&c| c as usize).zip(vals.iter().copied()));
        if self.relations.is_empty() {
            return;
        }
        for rel in &self.relations {
            let (cols, vals) = rel.table.block(rel.keys[i] as usize);
            buf.extend(cols.iter().map(|&c| c as usize).zip(vals.iter().copied()));
        }
        buf.sort_by_key(|e| e.0);
    }

    pub fn row(&self, i: usize) -> SparseRow {
        let mut entries = Vec::new();
        self.row_entries(i, &mut entries);
        SparseRow::new(self.targets[i], entries)
    }

    pub fn rows(&self) -> impl Iterator<Item = SparseRow> + '_ {
        (0..self.n_rows()).map(|i| self.row(i))
    }

    /// Expands all blocks into plain rows.
    pub fn materialize(&self) -> DesignMatrix {
        let direct = (0..self.n_rows()).map(|i| self.row(i).entries).collect();
        Self::from_parts(self.groups.clone(), self.targets.clone(), direct, Vec::new())
            .expect("layout already validated")
    }

    /// The rows at `indices`, in order, sharing block tables with `self`.
    pub fn subset(&self, indices: &[usize]) -> DesignMatrix {
        let targets = indices.iter().map(|&i| self.targets[i]).collect();
        let direct = indices
            .iter()
            .map(|&i| {
                let (c, v) = self.direct_row(i);
                c.iter().map(|&c| c as usize).zip(v.iter().copied()).collect()
            })
            .collect();
        let relations = self
            .relations
            .iter()
            .map(|rel| BlockRelation {
                table: Arc::clone(&rel.table),
                keys: indices.iter().map(|&i| rel.keys[i]).collect(),
            })
            .collect();
        Self::from_parts(self.groups.clone(), targets, direct, relations)
            .expect("layout already validated")
    }

    pub(crate) fn check_model_dims(&self, n_cols: usize) -> Result<()> {
        if self.n_cols != n_cols {
            return Err(Error::Dimension(format!(
                "design matrix has {} columns, model has {n_cols}",
                self.n_cols
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blocked() -> DesignMatrix {
        let groups = vec![
            FeatureGroup::new(GroupKind::User, 0..2),
            FeatureGroup::new(GroupKind::ImplicitUser, 2..5),
        ];
        let table = Arc::new(BlockTable::new(
            GroupKind::ImplicitUser,
            vec![vec![(4, 0.5), (2, 0.5)], vec![]],
        ));
        DesignMatrix::from_parts(
            groups,
            vec![1.0, 2.0, 3.0],
            vec![vec![(0, 1.0)], vec![(1, 1.0)], vec![(0, 1.0)]],
            vec![BlockRelation {
                table,
                keys: vec![0, 1, 0],
            }],
        )
        .unwrap()
    }

    #[test]
    fn rows_expand_blocks_in_column_order() {
        let m = blocked();
        assert_eq!(m.row(0).entries, vec![(0, 1.0), (2, 0.5), (4, 0.5)]);
        assert_eq!(m.row(1).entries, vec![(1, 1.0)]);
        assert_eq!(m.nnz(), 7);
    }

    #[test]
    fn materialize_preserves_rows() {
        let m = blocked();
        let flat = m.materialize();
        assert!(flat.relations().is_empty());
        assert_eq!(m.rows().collect::<Vec<_>>(), flat.rows().collect::<Vec<_>>());
    }

    #[test]
    fn subset_shares_tables() {
        let m = blocked();
        let s = m.subset(&[2, 1]);
        assert_eq!(s.targets(), &[3.0, 2.0]);
        assert_eq!(s.row(0), m.row(2));
        assert!(Arc::ptr_eq(&s.relations()[0].table, &m.relations()[0].table));
    }

    #[test]
    fn from_rows_rejects_bad_rows() {
        let groups = vec![FeatureGroup::new(GroupKind::Other, 0..3)];
        let bad = vec![SparseRow::new(1.0, vec![(2, 1.0), (1, 1.0)])];
        assert!(DesignMatrix::from_rows(bad, groups.clone()).is_err());
        let out = vec![SparseRow::new(1.0, vec![(3, 1.0)])];
        assert!(DesignMatrix::from_rows(out, groups).is_err());
    }
}
