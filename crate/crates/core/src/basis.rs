//! Elimination of equality constraints by a sparse integer-preserving basis.
//!
//! The equalities `DX = E` are solved for a set of basic variables `X_B` by
//! Gauss-Jordan elimination with Markowitz pivoting, giving the affine lift
//! `X = V + M X_N` from the remaining non-basic variables. Pivots on integer
//! columns are only taken when they divide their whole row, so integral `X_N`
//! always lifts to integral `X`.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sparse::SparseMatrix;
use crate::support::{LinearConstraint, MixedIntegerPolyhedron};

/// Splits constraints into equalities (`lower == upper`) and the rest,
/// preserving order within each part.
pub fn split_equalities<T: Scalar>(
    constraints: &[LinearConstraint<T>],
) -> (Vec<LinearConstraint<T>>, Vec<LinearConstraint<T>>) {
    constraints.iter().cloned().partition(LinearConstraint::is_equality)
}

/// `(|W_j|₀ − 1)(|W^i|₀ − 1)`, an upper bound on the fill-in of pivoting on
/// `W^i_j`.
pub fn markowitz_cost<T: Scalar>(w: &SparseMatrix<T>, i: usize, j: usize) -> Result<usize> {
    if w.get(i, j).is_none() {
        return Err(Error::ZeroPivot { row: i, col: j });
    }
    Ok((w.col_nnz(j) - 1) * (w.row_nnz(i) - 1))
}

/// Whether `W^i_j` may be pivoted on: any non-zero in a real column, or in an
/// integer column when the row has no real entries and the pivot divides
/// every entry of the row and its right-hand side.
pub fn is_valid_pivot<T: Scalar>(
    w: &SparseMatrix<T>,
    rhs: &[T],
    integer_mask: &[bool],
    i: usize,
    j: usize,
) -> bool {
    let Some(a) = w.get(i, j) else {
        return false;
    };
    if !integer_mask[j] {
        return true;
    }
    w.row(i).iter().all(|(k, v)| integer_mask[*k] && a.divides(v)) && a.divides(&rhs[i])
}

/// All valid pivots among the first `num_equalities` rows of `W` that are
/// not yet reduced, restricted to non-basic columns.
pub fn valid_pivots<T: Scalar>(
    w: &SparseMatrix<T>,
    rhs: &[T],
    integer_mask: &[bool],
    num_equalities: usize,
    reduced_rows: &[bool],
    basic_cols: &[bool],
) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in (0..num_equalities).filter(|&i| !reduced_rows[i]) {
        for (j, _) in w.row(i) {
            if !basic_cols[*j] && is_valid_pivot(w, rhs, integer_mask, i, *j) {
                out.push((i, *j));
            }
        }
    }
    out
}

/// Result of eliminating the equalities of a polyhedron.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisReduction<T> {
    /// Basic variables in pivot order.
    pub basic: Vec<usize>,
    /// Non-basic variables, ascending; position `k` is coordinate `k` of `X_N`.
    pub nonbasic: Vec<usize>,
    /// `V`, one entry per original variable.
    pub offset: Vec<T>,
    /// `M`, one row per original variable and one column per `X_N` coordinate.
    pub lift_matrix: SparseMatrix<T>,
    /// Constraints over `X_N`: transformed inequalities, residual equalities
    /// and the box of the basic variables.
    pub reduced_constraints: Vec<LinearConstraint<T>>,
    /// `H_N`, the box upper corner for `X_N`.
    pub box_nonbasic: Vec<T>,
    /// `H_B`, the box upper corner of the basic variables in `basic` order.
    pub box_basic: Vec<T>,
    /// Integrality of each `X_N` coordinate.
    pub integer_mask: Vec<bool>,
    /// Equalities that could not be pivoted on.
    pub residual_equalities: usize,
    /// Number of pivots performed.
    pub steps: usize,
}

/// Summary written alongside experiment output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReductionReport {
    pub basic: usize,
    pub nonbasic: usize,
    pub residual_equalities: usize,
    pub reduced_constraints: usize,
    pub lift_nnz: usize,
    pub lift_density: f64,
    pub steps: usize,
}

impl<T: Scalar> BasisReduction<T> {
    pub fn total_dims(&self) -> usize {
        self.offset.len()
    }

    pub fn num_nonbasic(&self) -> usize {
        self.nonbasic.len()
    }

    /// `X = V + M X_N`.
    pub fn lift(&self, xn: &[T]) -> Vec<T> {
        assert_eq!(xn.len(), self.num_nonbasic());
        (0..self.total_dims())
            .map(|d| {
                self.lift_matrix
                    .row(d)
                    .iter()
                    .fold(self.offset[d].clone(), |acc, (k, m)| acc + m.clone() * xn[*k].clone())
            })
            .collect()
    }

    pub fn lift_int(&self, xn: &[i64]) -> Vec<T> {
        let xn: Vec<T> = xn.iter().map(|&v| T::from_int(v)).collect();
        self.lift(&xn)
    }

    /// Reads the non-basic coordinates of a full point.
    pub fn project<V: Clone>(&self, x: &[V]) -> Vec<V> {
        self.nonbasic.iter().map(|&d| x[d].clone()).collect()
    }

    /// Rewrites `Σ c_i X_i` as `offset + Σ z_k X_N,k`.
    pub fn compose(&self, coeffs: &[(usize, T)]) -> (Vec<(usize, T)>, T) {
        let mut row = Vec::new();
        let mut offset = T::zero();
        for (i, c) in coeffs {
            offset = offset + c.clone() * self.offset[*i].clone();
            row.extend(self.lift_matrix.row(*i).iter().map(|(k, m)| (*k, c.clone() * m.clone())));
        }
        (crate::support::normalize_row(row), offset)
    }

    /// Whether `X_N` satisfies its box and every reduced constraint.
    pub fn contains(&self, xn: &[T]) -> bool {
        xn.iter()
            .zip(&self.box_nonbasic)
            .all(|(v, h)| !v.is_negative() && v <= h)
            && self.reduced_constraints.iter().all(|c| c.is_satisfied(xn))
    }

    pub fn report(&self) -> ReductionReport {
        let nnz = self.lift_matrix.nnz();
        let size = (self.total_dims() * self.num_nonbasic()).max(1);
        ReductionReport {
            basic: self.basic.len(),
            nonbasic: self.num_nonbasic(),
            residual_equalities: self.residual_equalities,
            reduced_constraints: self.reduced_constraints.len(),
            lift_nnz: nnz,
            lift_density: nnz as f64 / size as f64,
            steps: self.steps,
        }
    }
}

/// Working state of the elimination over `W = (D; C)`.
struct Eliminator<T> {
    w: SparseMatrix<T>,
    /// `E` for equality rows; the accumulated shift for inequality rows.
    rhs: Vec<T>,
    num_equalities: usize,
    integer_mask: Vec<bool>,
    reduced: Vec<bool>,
    basic: Vec<bool>,
    pivots: Vec<(usize, usize)>,
    heap: BinaryHeap<Reverse<(usize, usize, usize)>>,
}

impl<T: Scalar> Eliminator<T> {
    fn new(equalities: &[LinearConstraint<T>], inequalities: &[LinearConstraint<T>], integer_mask: Vec<bool>) -> Self {
        let dims = integer_mask.len();
        let mut w = SparseMatrix::new(dims);
        let mut rhs = Vec::with_capacity(equalities.len() + inequalities.len());
        for c in equalities {
            w.push_row(c.coeffs.clone());
            rhs.push(c.lower.clone().expect("equality has bounds"));
        }
        for c in inequalities {
            w.push_row(c.coeffs.clone());
            rhs.push(T::zero());
        }
        let rows = w.nrows();
        let mut e = Eliminator {
            w,
            rhs,
            num_equalities: equalities.len(),
            integer_mask,
            reduced: vec![false; rows],
            basic: vec![false; dims],
            pivots: Vec::new(),
            heap: BinaryHeap::new(),
        };
        for i in 0..e.num_equalities {
            e.push_row_candidates(i);
        }
        e
    }

    fn push_candidate(&mut self, i: usize, j: usize) {
        if i >= self.num_equalities || self.reduced[i] || self.basic[j] {
            return;
        }
        if is_valid_pivot(&self.w, &self.rhs, &self.integer_mask, i, j) {
            let mu = (self.w.col_nnz(j) - 1) * (self.w.row_nnz(i) - 1);
            self.heap.push(Reverse((mu, j, i)));
        }
    }

    fn push_row_candidates(&mut self, i: usize) {
        let cols: Vec<usize> = self.w.row(i).iter().map(|e| e.0).collect();
        for j in cols {
            self.push_candidate(i, j);
        }
    }

    /// Cheapest currently valid pivot. Heap entries whose cost or validity
    /// went stale are discarded; fresh ones were pushed when they changed.
    fn next_pivot(&mut self) -> Option<(usize, usize)> {
        while let Some(Reverse((mu, j, i))) = self.heap.pop() {
            if self.reduced[i] || self.basic[j] || self.w.get(i, j).is_none() {
                continue;
            }
            if (self.w.col_nnz(j) - 1) * (self.w.row_nnz(i) - 1) != mu {
                continue;
            }
            if is_valid_pivot(&self.w, &self.rhs, &self.integer_mask, i, j) {
                return Some((i, j));
            }
        }
        None
    }

    fn pivot(&mut self, i: usize, j: usize) {
        let a = self.w.get(i, j).cloned().expect("pivot entry is non-zero");
        let inv = T::one() / a;
        self.w.scale_row(i, &inv);
        self.rhs[i] = self.rhs[i].clone() * inv;
        let rows: Vec<usize> = self.w.col(j).filter(|&r| r != i).collect();
        let mut changed = Vec::new();
        for &r in &rows {
            let f = self.w.get(r, j).cloned().expect("column view agrees with rows");
            changed.extend(self.w.sub_scaled_row(r, i, &f));
            self.rhs[r] = self.rhs[r].clone() - f * self.rhs[i].clone();
        }
        self.reduced[i] = true;
        self.basic[j] = true;
        self.pivots.push((i, j));

        for &r in &rows {
            self.push_row_candidates(r);
        }
        changed.sort_unstable();
        changed.dedup();
        for c in changed {
            let rows: Vec<usize> = self.w.col(c).collect();
            for r in rows {
                self.push_candidate(r, c);
            }
        }
    }

    fn run(&mut self) {
        while let Some((i, j)) = self.next_pivot() {
            self.pivot(i, j);
        }
    }
}

/// Eliminates as many equalities as the pivot rule allows and builds the
/// lift map and the constraints on `X_N`.
pub fn reduce<T: Scalar>(poly: &MixedIntegerPolyhedron<T>) -> Result<BasisReduction<T>> {
    poly.validate()?;
    let (eqs, ineqs) = split_equalities(&poly.constraints);
    let mut elim = Eliminator::new(&eqs, &ineqs, poly.indexer.integer_mask());
    elim.run();
    assemble_reduction(poly, &ineqs, elim)
}

fn assemble_reduction<T: Scalar>(
    poly: &MixedIntegerPolyhedron<T>,
    ineqs: &[LinearConstraint<T>],
    elim: Eliminator<T>,
) -> Result<BasisReduction<T>> {
    let dims = poly.dims();
    let mut row_of_basic = vec![None; dims];
    for &(i, j) in &elim.pivots {
        row_of_basic[j] = Some(i);
    }
    let nonbasic: Vec<usize> = (0..dims).filter(|&d| row_of_basic[d].is_none()).collect();
    let mut position = vec![usize::MAX; dims];
    for (k, &d) in nonbasic.iter().enumerate() {
        position[d] = k;
    }
    let to_xn = |row: &[(usize, T)]| -> Vec<(usize, T)> {
        row.iter()
            .map(|(d, v)| {
                debug_assert_ne!(position[*d], usize::MAX, "basic column survived elimination");
                (position[*d], v.clone())
            })
            .collect()
    };

    let mut offset = vec![T::zero(); dims];
    let mut lift_matrix = SparseMatrix::new(nonbasic.len());
    for d in 0..dims {
        match row_of_basic[d] {
            Some(i) => {
                offset[d] = elim.rhs[i].clone();
                let row: Vec<(usize, T)> = elim
                    .w
                    .row(i)
                    .iter()
                    .filter(|(k, _)| *k != d)
                    .map(|(k, v)| (position[*k], -v.clone()))
                    .collect();
                lift_matrix.push_row(row);
            }
            None => {
                lift_matrix.push_row(vec![(position[d], T::one())]);
            }
        }
    }

    let mut reduced = Vec::new();
    let infeasible = |what: &str| Error::Infeasible(what.to_string());
    for (r, c) in ineqs.iter().enumerate() {
        let i = elim.num_equalities + r;
        let shift = elim.rhs[i].clone();
        let lower = c.lower.clone().map(|l| l + shift.clone());
        let upper = c.upper.clone().map(|u| u + shift.clone());
        let row = elim.w.row(i);
        if row.is_empty() {
            let zero = T::zero();
            if lower.as_ref().is_some_and(|l| l > &zero) || upper.as_ref().is_some_and(|u| u < &zero) {
                return Err(infeasible("inequality violated by every point"));
            }
            continue;
        }
        reduced.push(LinearConstraint::new(to_xn(row), lower, upper));
    }
    let mut residual = 0;
    for i in (0..elim.num_equalities).filter(|&i| !elim.reduced[i]) {
        let row = elim.w.row(i);
        if row.is_empty() {
            if !elim.rhs[i].is_zero() {
                return Err(infeasible("inconsistent equality system"));
            }
            continue;
        }
        residual += 1;
        reduced.push(LinearConstraint::equality(to_xn(row), elim.rhs[i].clone()));
    }
    let basic: Vec<usize> = elim.pivots.iter().map(|p| p.1).collect();
    for &d in &basic {
        let v = offset[d].clone();
        let h = poly.upper[d].clone();
        let row = lift_matrix.row(d).to_vec();
        if row.is_empty() {
            if v.is_negative() || v > h {
                return Err(infeasible("basic variable fixed outside its box"));
            }
            continue;
        }
        reduced.push(LinearConstraint::new(row, Some(-v.clone()), Some(h - v)));
    }

    let mask = poly.indexer.integer_mask();
    Ok(BasisReduction {
        box_nonbasic: nonbasic.iter().map(|&d| poly.upper[d].clone()).collect(),
        box_basic: basic.iter().map(|&d| poly.upper[d].clone()).collect(),
        integer_mask: nonbasic.iter().map(|&d| mask[d]).collect(),
        basic,
        nonbasic,
        offset,
        lift_matrix,
        reduced_constraints: reduced,
        residual_equalities: residual,
        steps: elim.pivots.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abm::enumerate_posterior;
    use crate::models::cat_mouse;
    use crate::support::{assemble, SupportOptions, VariableIndexer};
    use num_rational::Ratio;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    type R = Ratio<i64>;

    fn r(v: i64) -> R {
        R::from_integer(v)
    }

    fn matrix(rows: &[&[i64]]) -> SparseMatrix<R> {
        let mut m = SparseMatrix::new(rows[0].len());
        for row in rows {
            m.push_row(row.iter().enumerate().map(|(j, &v)| (j, r(v))).collect());
        }
        m
    }

    fn poly(dims: usize, h: i64, constraints: Vec<LinearConstraint<R>>) -> MixedIntegerPolyhedron<R> {
        MixedIntegerPolyhedron {
            constraints,
            indexer: VariableIndexer::new(1, 1, dims),
            upper: vec![r(h); dims],
        }
    }

    #[test]
    fn markowitz_examples() {
        let m = matrix(&[&[1, 1, 1], &[1, 0, 0]]);
        assert_eq!(markowitz_cost(&m, 0, 0).unwrap(), 2);
        let m = matrix(&[&[1, 0], &[0, 1]]);
        assert_eq!(markowitz_cost(&m, 1, 1).unwrap(), 0);
        assert!(matches!(markowitz_cost(&m, 0, 1), Err(Error::ZeroPivot { .. })));
        let m = matrix(&[&[1, 1, 1], &[1, 1, 1], &[1, 1, 1]]);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(markowitz_cost(&m, i, j).unwrap(), 4);
            }
        }
    }

    #[test]
    fn divisibility_rule() {
        let m = matrix(&[&[2, 4, 0]]);
        let rhs = [r(6)];
        let mask = [true; 3];
        assert!(is_valid_pivot(&m, &rhs, &mask, 0, 0));
        assert!(!is_valid_pivot(&m, &rhs, &mask, 0, 1));
        assert_eq!(valid_pivots(&m, &rhs, &mask, 1, &[false], &[false; 3]), vec![(0, 0)]);
        // an odd right-hand side blocks the 2 as well
        assert!(valid_pivots(&m, &[r(5)], &mask, 1, &[false], &[false; 3]).is_empty());
    }

    #[test]
    fn real_column_forces_real_pivot() {
        let m = matrix(&[&[1, 3, 1]]);
        let mask = [true, true, false];
        assert_eq!(valid_pivots(&m, &[r(1)], &mask, 1, &[false], &[false; 3]), vec![(0, 2)]);
    }

    #[test]
    fn unit_entries_always_valid() {
        let m = matrix(&[&[1, -1, 2, -1]]);
        let piv = valid_pivots(&m, &[r(7)], &[true; 4], 1, &[false], &[false; 4]);
        assert_eq!(piv, vec![(0, 0), (0, 1), (0, 3)]);
    }

    #[test]
    fn identity_equality() {
        let p = poly(2, 5, vec![LinearConstraint::from_ints(&[(0, 1)], Some(3), Some(3)), LinearConstraint::from_ints(&[(0, 1), (1, 1)], None, Some(4))]);
        let red = reduce(&p).unwrap();
        assert_eq!(red.basic, vec![0]);
        assert_eq!(red.nonbasic, vec![1]);
        assert_eq!(red.offset[0], r(3));
        assert!(red.lift_matrix.row(0).is_empty());
        assert_eq!(red.lift_int(&[1]), vec![r(3), r(1)]);
        // x0 + x1 ≤ 4 becomes x1 ≤ 1
        assert_eq!(red.reduced_constraints, vec![LinearConstraint::from_ints(&[(0, 1)], None, Some(1))]);
    }

    #[test]
    fn no_equalities_keeps_all_dims() {
        let p = poly(3, 1, vec![LinearConstraint::from_ints(&[(0, 1), (2, 1)], None, Some(1))]);
        let red = reduce(&p).unwrap();
        assert_eq!(red.nonbasic, vec![0, 1, 2]);
        assert_eq!(red.lift_int(&[1, 0, 1]), vec![r(1), r(0), r(1)]);
    }

    #[test]
    fn inconsistent_system_is_infeasible() {
        let p = poly(2, 5, vec![
            LinearConstraint::from_ints(&[(0, 1), (1, 1)], Some(1), Some(1)),
            LinearConstraint::from_ints(&[(0, 2), (1, 2)], Some(3), Some(3)),
        ]);
        assert!(matches!(reduce(&p), Err(Error::Infeasible(_))));
    }

    #[test]
    fn ties_break_on_lowest_column() {
        let p = poly(3, 5, vec![LinearConstraint::from_ints(&[(0, 1), (1, 1), (2, 1)], Some(2), Some(2))]);
        let red = reduce(&p).unwrap();
        assert_eq!(red.basic, vec![0]);
    }

    #[test]
    fn divisibility_choice_preserves_integers() {
        let p = poly(3, 5, vec![LinearConstraint::from_ints(&[(0, 2), (1, 4)], Some(6), Some(6))]);
        let red = reduce(&p).unwrap();
        assert_eq!(red.basic, vec![0]);
        for x1 in 0..5 {
            let x = red.lift_int(&[x1, 0]);
            assert_eq!(x[0], r(3 - 2 * x1));
        }
    }

    fn worked() -> MixedIntegerPolyhedron<R> {
        assemble(
            &cat_mouse::spec(),
            &cat_mouse::boundary(),
            &cat_mouse::left_cat_observation(),
            2,
            SupportOptions { fermionic: true, count_cap: None },
        )
        .unwrap()
    }

    #[test]
    fn worked_example_dimensions() {
        let p = worked();
        let (eqs, ineqs) = split_equalities(&p.constraints);
        assert_eq!(eqs.len(), 5);
        assert_eq!(eqs.len() + ineqs.len(), p.constraints.len());
        let red = reduce(&p).unwrap();
        assert_eq!(red.residual_equalities, 0);
        assert_eq!(red.basic.len(), 5);
        assert_eq!(red.num_nonbasic(), 11);
        let mut all: Vec<usize> = red.basic.iter().chain(&red.nonbasic).copied().collect();
        all.sort();
        assert_eq!(all, (0..16).collect::<Vec<_>>());
    }

    #[test]
    fn fixpoint_after_reduction() {
        let p = worked();
        let (eqs, ineqs) = split_equalities(&p.constraints);
        let mut elim = Eliminator::new(&eqs, &ineqs, p.indexer.integer_mask());
        elim.run();
        assert!(valid_pivots(&elim.w, &elim.rhs, &elim.integer_mask, elim.num_equalities, &elim.reduced, &elim.basic).is_empty());
    }

    #[test]
    fn round_trip_on_support() {
        let p = worked();
        let red = reduce(&p).unwrap();
        let post = enumerate_posterior(&cat_mouse::spec(), &cat_mouse::boundary(), &cat_mouse::left_cat_observation(), 2, true, 1_000_000).unwrap();
        assert!(!post.is_empty());
        for (traj, _) in post {
            let x: Vec<R> = traj.as_flat().iter().map(|&v| r(v)).collect();
            let xn = red.project(&x);
            assert!(red.contains(&xn));
            assert_eq!(red.lift(&xn), x);
        }
    }

    #[test]
    fn bijection_with_original_points() {
        let p = worked();
        let red = reduce(&p).unwrap();
        let before: HashSet<Vec<i64>> = (0u32..1 << 16)
            .map(|bits| (0..16).map(|i| i64::from((bits >> i) & 1)).collect::<Vec<i64>>())
            .filter(|x| p.contains_int(x))
            .collect();
        let n = red.num_nonbasic();
        let mut after = HashSet::new();
        for bits in 0u32..1 << n {
            let xn: Vec<R> = (0..n).map(|i| r(i64::from((bits >> i) & 1))).collect();
            if !red.contains(&xn) {
                continue;
            }
            let x = red.lift(&xn);
            assert!(x.iter().all(|v| v.is_integer()));
            assert!(after.insert(x.iter().map(|v| v.to_integer()).collect::<Vec<i64>>()));
        }
        assert_eq!(before, after);
    }

    #[test]
    fn compose_matches_lift() {
        let red = reduce(&worked()).unwrap();
        let coeffs = vec![(0, r(2)), (5, r(-1)), (13, r(3))];
        let (row, off) = red.compose(&coeffs);
        let xn: Vec<R> = (0..red.num_nonbasic()).map(|k| r((k % 2) as i64)).collect();
        let x = red.lift(&xn);
        let direct = coeffs.iter().fold(r(0), |a, (i, c)| a + c * x[*i]);
        let via = row.iter().fold(off, |a, (k, z)| a + z * xn[*k]);
        assert_eq!(direct, via);
    }

    #[test]
    fn report_counts() {
        let rep = reduce(&worked()).unwrap().report();
        assert_eq!((rep.basic, rep.nonbasic, rep.residual_equalities, rep.steps), (5, 11, 0, 5));
        let json = serde_json::to_string(&rep).unwrap();
        assert!(json.contains("\"lift_nnz\""));
    }

    fn random_system() -> impl Strategy<Value = (usize, Vec<Vec<i64>>, Vec<i64>)> {
        (3usize..7).prop_flat_map(|dims| {
            (
                Just(dims),
                prop::collection::vec(prop::collection::vec(prop::sample::select(vec![-2i64, -1, 0, 0, 0, 1, 2, 3]), dims), 1..4),
                prop::collection::vec(0i64..3, dims),
            )
        })
    }

    proptest! {
        /// Equalities built around a known integer point: every lift is
        /// integral, and satisfies them exactly once the residual equalities
        /// hold.
        #[test]
        fn integer_preservation((dims, rows, x0) in random_system(), seed in 0u64..1000) {
            let cs: Vec<LinearConstraint<R>> = rows.iter().filter(|row| row.iter().any(|&v| v != 0)).map(|row| {
                let e: i64 = row.iter().zip(&x0).map(|(a, b)| a * b).sum();
                let coeffs: Vec<(usize, i64)> = row.iter().copied().enumerate().collect();
                LinearConstraint::from_ints(&coeffs, Some(e), Some(e))
            }).collect();
            let p = poly(dims, 2, cs.clone());
            let red = reduce(&p).unwrap();
            let x0r: Vec<R> = x0.iter().map(|&v| r(v)).collect();
            prop_assert_eq!(red.lift(&red.project(&x0r)), x0r);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..50 {
                let xn: Vec<i64> = (0..red.num_nonbasic()).map(|_| rng.random_range(-2..=2)).collect();
                let x = red.lift_int(&xn);
                prop_assert!(x.iter().all(|v| v.is_integer()));
                let xnr: Vec<R> = xn.iter().map(|&v| r(v)).collect();
                let residual_ok = red.reduced_constraints.iter().filter(|c| c.is_equality()).all(|c| c.is_satisfied(&xnr));
                if !residual_ok {
                    continue;
                }
                for c in &cs {
                    prop_assert_eq!(c.evaluate(&x), c.lower.unwrap());
                }
            }
        }
    }
}
