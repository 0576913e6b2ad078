use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Region id carried by a pixel. Ids need not be contiguous or start at 0.
pub type Label = u32;

/// An `rows x cols` grid of labels stored row-major.
///
/// Arrays cannot be mutated once built; perturbations return new arrays.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabeledArray {
    rows: usize,
    cols: usize,
    labels: Vec<Label>,
}

impl LabeledArray {
    pub fn new(rows: usize, cols: usize, labels: Vec<Label>) -> Result<Self> {
        if rows == 0 || cols == 0 || rows.checked_mul(cols) != Some(labels.len()) {
            return Err(Error::InvalidShape {
                rows,
                cols,
                len: labels.len(),
            });
        }
        Ok(Self { rows, cols, labels })
    }

    /// Array with every pixel set to `label`.
    pub fn filled(rows: usize, cols: usize, label: Label) -> Result<Self> {
        Self::new(rows, cols, vec![label; rows.saturating_mul(cols)])
    }

    /// Builds an array from nested rows; all rows must have the same length.
    pub fn from_rows<R: AsRef<[Label]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut labels = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            let row = row.as_ref();
            if row.len() != cols {
                return Err(Error::InvalidShape {
                    rows: rows.len(),
                    cols,
                    len: labels.len() + row.len(),
                });
            }
            labels.extend_from_slice(row);
        }
        Self::new(rows.len(), cols, labels)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Number of pixels, `rows * cols`.
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> Option<Label> {
        if row < self.rows && col < self.cols {
            Some(self.labels[row * self.cols + col])
        } else {
            None
        }
    }

    pub fn to_rows(&self) -> Vec<Vec<Label>> {
        self.labels.chunks(self.cols).map(<[Label]>::to_vec).collect()
    }

    pub fn max_label(&self) -> Label {
        self.labels.iter().copied().max().unwrap_or(0)
    }

    pub fn distinct_labels(&self) -> BTreeSet<Label> {
        self.labels.iter().copied().collect()
    }

    pub fn inventory(&self) -> LabelInventory {
        let mut counts = BTreeMap::new();
        for &label in &self.labels {
            *counts.entry(label).or_insert(0usize) += 1;
        }
        LabelInventory { counts }
    }

    /// Applies `f` to every label, producing a new array of the same shape.
    pub fn map_labels(&self, f: impl Fn(Label) -> Label) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            labels: self.labels.iter().map(|&l| f(l)).collect(),
        }
    }

    pub(crate) fn with_labels(&self, labels: Vec<Label>) -> Self {
        debug_assert_eq!(labels.len(), self.labels.len());
        Self {
            rows: self.rows,
            cols: self.cols,
            labels,
        }
    }

    pub(crate) fn ensure_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch(
                self.rows, self.cols, other.rows, other.cols,
            ));
        }
        Ok(())
    }

    /// Fails unless every label is one of `a` or `b`.
    pub(crate) fn ensure_labels_within(&self, a: Label, b: Label) -> Result<()> {
        match self.labels.iter().find(|&&l| l != a && l != b) {
            Some(l) => Err(Error::NotBinary(format!(
                "found label {l}, expected only {a} and {b}"
            ))),
            None => Ok(()),
        }
    }
}

/// Distinct labels of an array together with their pixel counts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LabelInventory {
    counts: BTreeMap<Label, usize>,
}

impl LabelInventory {
    /// Number of distinct labels (U for a ground truth, V for a candidate).
    pub fn distinct(&self) -> usize {
        self.counts.len()
    }

    pub fn labels(&self) -> impl Iterator<Item = Label> + '_ {
        self.counts.keys().copied()
    }

    pub fn count(&self, label: Label) -> usize {
        self.counts.get(&label).copied().unwrap_or(0)
    }

    pub fn counts(&self) -> &BTreeMap<Label, usize> {
        &self.counts
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(LabeledArray::new(0, 2, vec![]).is_err());
        assert!(LabeledArray::new(2, 2, vec![0, 1, 2]).is_err());
        assert!(LabeledArray::from_rows(&[vec![0, 0], vec![0]]).is_err());
    }

    #[test]
    fn inventory_counts() {
        let a = LabeledArray::from_rows(&[[0, 0], [0, 1]]).unwrap();
        let inv = a.inventory();
        assert_eq!(inv.distinct(), 2);
        assert_eq!(inv.count(0), 3);
        assert_eq!(inv.count(1), 1);

        let uniform = LabeledArray::from_rows(&[[5, 5], [5, 5]]).unwrap();
        assert_eq!(uniform.inventory().distinct(), 1);
        assert_eq!(uniform.inventory().count(5), 4);

        let unique = LabeledArray::from_rows(&[[0, 1], [2, 3]]).unwrap();
        let inv = unique.inventory();
        assert_eq!(inv.distinct(), 4);
        assert!(inv.labels().all(|l| inv.count(l) == 1));
        assert_eq!(inv.total(), 4);
    }

    #[test]
    fn get_and_rows() {
        let a = LabeledArray::from_rows(&[[1, 2, 3], [4, 5, 6]]).unwrap();
        assert_eq!(a.get(1, 0), Some(4));
        assert_eq!(a.get(2, 0), None);
        assert_eq!(a.to_rows(), vec![vec![1, 2, 3], vec![4, 5, 6]]);
    }
}
