//! Row-major sparse matrix with column membership sets.

use std::collections::BTreeSet;

use crate::scalar::Scalar;
use crate::support::normalize_row;

/// Sparse matrix whose rows are sorted `(column, value)` lists and whose
/// columns record which rows hold a non-zero there. Stored entries are never
/// zero, and the row and column views always agree.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix<T> {
    rows: Vec<Vec<(usize, T)>>,
    cols: Vec<BTreeSet<usize>>,
}

impl<T: Scalar> SparseMatrix<T> {
    pub fn new(ncols: usize) -> Self {
        SparseMatrix {
            rows: Vec::new(),
            cols: vec![BTreeSet::new(); ncols],
        }
    }

    /// Appends a row; entries may be unsorted and contain duplicates or zeros.
    pub fn push_row(&mut self, entries: Vec<(usize, T)>) -> usize {
        let row = normalize_row(entries);
        let i = self.rows.len();
        for (j, _) in &row {
            assert!(*j < self.cols.len(), "column {j} out of range");
            self.cols[*j].insert(i);
        }
        self.rows.push(row);
        i
    }

    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    pub fn ncols(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, i: usize) -> &[(usize, T)] {
        &self.rows[i]
    }

    /// Rows holding a non-zero in column `j`, ascending.
    pub fn col(&self, j: usize) -> impl Iterator<Item = usize> + '_ {
        self.cols[j].iter().copied()
    }

    pub fn row_nnz(&self, i: usize) -> usize {
        self.rows[i].len()
    }

    pub fn col_nnz(&self, j: usize) -> usize {
        self.cols[j].len()
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn get(&self, i: usize, j: usize) -> Option<&T> {
        let r = &self.rows[i];
        r.binary_search_by_key(&j, |e| e.0).ok().map(|k| &r[k].1)
    }

    /// Multiplies row `i` by a non-zero scalar.
    pub fn scale_row(&mut self, i: usize, s: &T) {
        assert!(!s.is_zero(), "scaling by zero");
        for (_, v) in &mut self.rows[i] {
            *v = v.clone() * s.clone();
        }
    }

    /// `row_target -= f · row_source`. Returns the columns whose non-zero
    /// count changed.
    pub fn sub_scaled_row(&mut self, target: usize, source: usize, f: &T) -> Vec<usize> {
        assert_ne!(target, source);
        let a = std::mem::take(&mut self.rows[target]);
        let b = &self.rows[source];
        let mut out = Vec::with_capacity(a.len() + b.len());
        let mut changed = Vec::new();
        let (mut p, mut q) = (0, 0);
        while p < a.len() || q < b.len() {
            let ja = a.get(p).map_or(usize::MAX, |e| e.0);
            let jb = b.get(q).map_or(usize::MAX, |e| e.0);
            if ja < jb {
                out.push(a[p].clone());
                p += 1;
            } else if jb < ja {
                out.push((jb, -(f.clone() * b[q].1.clone())));
                self.cols[jb].insert(target);
                changed.push(jb);
                q += 1;
            } else {
                let v = a[p].1.clone() - f.clone() * b[q].1.clone();
                if v.is_zero() {
                    self.cols[ja].remove(&target);
                    changed.push(ja);
                } else {
                    out.push((ja, v));
                }
                p += 1;
                q += 1;
            }
        }
        self.rows[target] = out;
        changed
    }

    /// Dense copy, for tests and small reports.
    pub fn to_dense(&self) -> Vec<Vec<T>> {
        self.rows
            .iter()
            .map(|r| {
                let mut d = vec![T::zero(); self.ncols()];
                for (j, v) in r {
                    d[*j] = v.clone();
                }
                d
            })
            .collect()
    }
}
