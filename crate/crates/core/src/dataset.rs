//! Labelled feature vectors and their grouping into classes or cells.

use std::collections::BTreeMap;

use nalgebra::DVector;

use crate::error::{Error, Result};

/// One feature with a view-A label (e.g. speaker) and a view-B label (e.g. phrase).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledVector {
    pub features: DVector<f64>,
    pub label_a: usize,
    pub label_b: usize,
}

/// A set of labelled vectors sharing one dimension.
///
/// Labels are dense (`0..num_a`, `0..num_b`). `ids_a` / `ids_b` map a dense
/// label back to the identifier it was read or generated with.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    vectors: Vec<LabeledVector>,
    ids_a: Vec<u64>,
    ids_b: Vec<u64>,
}

impl Dataset {
    /// Builds a dataset whose labels are already dense; ids default to the labels.
    pub fn new(dim: usize, vectors: Vec<LabeledVector>) -> Result<Self> {
        let num_a = vectors.iter().map(|v| v.label_a + 1).max().unwrap_or(0);
        let num_b = vectors.iter().map(|v| v.label_b + 1).max().unwrap_or(0);
        Self::with_ids(dim, vectors, (0..num_a as u64).collect(), (0..num_b as u64).collect())
    }

    /// Builds a dataset with explicit original ids for each dense label.
    pub fn with_ids(dim: usize, vectors: Vec<LabeledVector>, ids_a: Vec<u64>, ids_b: Vec<u64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("feature dimension must be > 0".into()));
        }
        let mut seen_a = vec![false; ids_a.len()];
        let mut seen_b = vec![false; ids_b.len()];
        for v in &vectors {
            if v.features.len() != dim {
                return Err(Error::DimensionMismatch {
                    context: "dataset vector",
                    expected: dim,
                    found: v.features.len(),
                });
            }
            if v.features.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("dataset vector"));
            }
            if v.label_a >= ids_a.len() || v.label_b >= ids_b.len() {
                return Err(Error::InvalidConfig("label outside the id map".into()));
            }
            seen_a[v.label_a] = true;
            seen_b[v.label_b] = true;
        }
        if seen_a.iter().chain(&seen_b).any(|s| !s) {
            return Err(Error::InvalidConfig("labels are not dense".into()));
        }
        Ok(Dataset {
            dim,
            vectors,
            ids_a,
            ids_b,
        })
    }

    /// Re-indexes arbitrary label ids densely, in increasing id order.
    pub fn from_raw(dim: usize, rows: Vec<(u64, u64, DVector<f64>)>) -> Result<Self> {
        let dense = |ids: Vec<u64>| -> (Vec<u64>, BTreeMap<u64, usize>) {
            let map: BTreeMap<u64, usize> = ids.iter().copied().map(|id| (id, 0)).collect();
            let order: Vec<u64> = map.keys().copied().collect();
            let map = order.iter().enumerate().map(|(i, id)| (*id, i)).collect();
            (order, map)
        };
        let (ids_a, map_a) = dense(rows.iter().map(|r| r.0).collect());
        let (ids_b, map_b) = dense(rows.iter().map(|r| r.1).collect());
        let vectors = rows
            .into_iter()
            .map(|(a, b, features)| LabeledVector {
                features,
                label_a: map_a[&a],
                label_b: map_b[&b],
            })
            .collect();
        Self::with_ids(dim, vectors, ids_a, ids_b)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vectors(&self) -> &[LabeledVector] {
        &self.vectors
    }

    pub fn num_a(&self) -> usize {
        self.ids_a.len()
    }

    pub fn num_b(&self) -> usize {
        self.ids_b.len()
    }

    pub fn ids_a(&self) -> &[u64] {
        &self.ids_a
    }

    pub fn ids_b(&self) -> &[u64] {
        &self.ids_b
    }

    pub fn global_mean(&self) -> Result<DVector<f64>> {
        if self.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut acc = DVector::zeros(self.dim);
        for v in &self.vectors {
            acc += &v.features;
        }
        Ok(acc / self.len() as f64)
    }

    /// Per-coordinate (biased) variance around `mean`.
    pub fn diag_variance(&self, mean: &DVector<f64>) -> Result<DVector<f64>> {
        if self.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut acc = DVector::zeros(self.dim);
        for v in &self.vectors {
            acc += (&v.features - mean).map(|x| x * x);
        }
        Ok(acc / self.len() as f64)
    }
}

/// Which labels define a group of samples that share one latent draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Grouping {
    /// Joint (A, B) label: one group per cell.
    #[default]
    Cell,
    /// View-A label only.
    LabelA,
    /// View-B label only.
    LabelB,
}

impl Grouping {
    pub fn key(self, v: &LabeledVector) -> (usize, usize) {
        match self {
            Grouping::Cell => (v.label_a, v.label_b),
            Grouping::LabelA => (v.label_a, 0),
            Grouping::LabelB => (0, v.label_b),
        }
    }
}

/// Sufficient statistics of one group around a fixed mean.
#[derive(Debug, Clone)]
pub(crate) struct Group {
    pub key: (usize, usize),
    pub count: usize,
    /// `Σ_k (x_k − μ)`
    pub sum: DVector<f64>,
    /// `Σ_k (x_k − μ)²`, per coordinate.
    pub sumsq: DVector<f64>,
}

/// Groups sorted by key; members are accumulated in dataset order.
pub(crate) fn group_stats(data: &Dataset, grouping: Grouping, mu: &DVector<f64>) -> Vec<Group> {
    let mut groups: BTreeMap<(usize, usize), Group> = BTreeMap::new();
    for v in data.vectors() {
        let key = grouping.key(v);
        let r = &v.features - mu;
        let g = groups.entry(key).or_insert_with(|| Group {
            key,
            count: 0,
            sum: DVector::zeros(data.dim()),
            sumsq: DVector::zeros(data.dim()),
        });
        g.count += 1;
        g.sumsq += r.map(|x| x * x);
        g.sum += r;
    }
    groups.into_values().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lv(a: usize, b: usize, x: &[f64]) -> LabeledVector {
        LabeledVector {
            features: DVector::from_column_slice(x),
            label_a: a,
            label_b: b,
        }
    }

    #[test]
    fn rejects_sparse_labels_and_bad_dims() {
        assert!(Dataset::new(1, vec![lv(0, 0, &[1.0]), lv(2, 0, &[1.0])]).is_err());
        assert!(Dataset::new(2, vec![lv(0, 0, &[1.0])]).is_err());
        assert!(Dataset::new(1, vec![lv(0, 0, &[f64::NAN])]).is_err());
    }

    #[test]
    fn from_raw_reindexes_in_id_order() {
        let d = Dataset::from_raw(
            1,
            vec![
                (70, 5, DVector::from_element(1, 1.0)),
                (3, 9, DVector::from_element(1, 2.0)),
            ],
        )
        .unwrap();
        assert_eq!(d.ids_a(), &[3, 70]);
        assert_eq!(d.ids_b(), &[5, 9]);
        assert_eq!(d.vectors()[0].label_a, 1);
        assert_eq!(d.vectors()[1].label_b, 1);
    }

    #[test]
    fn grouping_by_cell_and_label() {
        let d = Dataset::new(
            1,
            vec![lv(0, 0, &[1.0]), lv(0, 1, &[3.0]), lv(1, 0, &[5.0]), lv(0, 0, &[2.0])],
        )
        .unwrap();
        let mu = DVector::from_element(1, 0.0);
        let cells = group_stats(&d, Grouping::Cell, &mu);
        assert_eq!(cells.len(), 3);
        assert_eq!(cells[0].key, (0, 0));
        assert_eq!(cells[0].count, 2);
        assert_eq!(cells[0].sum[0], 3.0);
        assert_eq!(cells[0].sumsq[0], 5.0);
        let by_a = group_stats(&d, Grouping::LabelA, &mu);
        assert_eq!(by_a.len(), 2);
        assert_eq!(by_a[0].count, 3);
        assert_eq!(d.global_mean().unwrap()[0], 11.0 / 4.0);
    }
}
