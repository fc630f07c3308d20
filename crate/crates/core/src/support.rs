//! Mixed-integer polyhedra that bound the support of the posterior.
//!
//! The posterior support is an intersection of simple sets: valid
//! trajectories, the start-state support, observation supports, and one
//! "action possible or not taken" set per `(t, ψ, a)`. Intersections are
//! plain concatenation of constraints; the "or not taken" unions are turned
//! into intersections with an indicator variable, or with the variable itself
//! under the Fermionic assumption (at most one agent per `(t, ψ, a)`).

use std::fmt::Write as _;
use std::io::Write;

use crate::abm::{AbmSpec, BoundaryConditions, CountDistribution, Observation};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Linear constraint on the occupancy vector `Ψ^t`, used by model authors to
/// describe action supports.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OccupancyConstraint {
    pub coeffs: Vec<(usize, i64)>,
    pub lower: Option<i64>,
    pub upper: Option<i64>,
}

impl OccupancyConstraint {
    pub fn at_most(coeffs: Vec<(usize, i64)>, upper: i64) -> Self {
        OccupancyConstraint {
            coeffs,
            lower: None,
            upper: Some(upper),
        }
    }

    pub fn at_least(coeffs: Vec<(usize, i64)>, lower: i64) -> Self {
        OccupancyConstraint {
            coeffs,
            lower: Some(lower),
            upper: None,
        }
    }

    pub fn is_satisfied(&self, occupancy: &[i64]) -> bool {
        let v: i64 = self.coeffs.iter().map(|&(s, c)| c * occupancy[s]).sum();
        self.lower.is_none_or(|l| v >= l) && self.upper.is_none_or(|u| v <= u)
    }
}

/// What a flat variable index refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    /// `T^t_{ψa}`.
    Trajectory { t: usize, psi: usize, action: usize },
    /// Model parameter `θ_j`.
    Param(usize),
    /// Union indicator `z_k`.
    Aux(usize),
}

/// Bijection between `(t, ψ, a)` / `θ_j` / `z_k` and flat indices of `X`.
///
/// Trajectory entries come first (`t`-major), then parameters, then
/// indicators, so trajectory indices do not depend on how many indicators a
/// build introduces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VariableIndexer {
    steps: usize,
    states: usize,
    actions: usize,
    params: usize,
    param_is_integer: Vec<bool>,
    aux: usize,
}

impl VariableIndexer {
    pub fn new(steps: usize, states: usize, actions: usize) -> Self {
        VariableIndexer {
            steps,
            states,
            actions,
            params: 0,
            param_is_integer: Vec::new(),
            aux: 0,
        }
    }

    pub fn for_spec(spec: &AbmSpec, steps: usize) -> Self {
        Self::new(steps, spec.num_states(), spec.num_actions())
    }

    /// Adds real-valued parameter variables. Must happen before any
    /// indicators are pushed.
    pub fn with_params(mut self, integer: Vec<bool>) -> Self {
        assert_eq!(self.aux, 0, "parameters precede indicators");
        self.params = integer.len();
        self.param_is_integer = integer;
        self
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn num_trajectory_vars(&self) -> usize {
        self.steps * self.states * self.actions
    }

    pub fn num_params(&self) -> usize {
        self.params
    }

    pub fn num_aux(&self) -> usize {
        self.aux
    }

    pub fn total_dims(&self) -> usize {
        self.num_trajectory_vars() + self.params + self.aux
    }

    #[inline]
    pub fn traj(&self, t: usize, psi: usize, a: usize) -> usize {
        debug_assert!(t < self.steps && psi < self.states && a < self.actions);
        (t * self.states + psi) * self.actions + a
    }

    pub fn param(&self, j: usize) -> usize {
        assert!(j < self.params);
        self.num_trajectory_vars() + j
    }

    pub fn aux(&self, k: usize) -> usize {
        assert!(k < self.aux);
        self.num_trajectory_vars() + self.params + k
    }

    /// Allocates a new indicator variable and returns its flat index.
    pub fn push_aux(&mut self) -> usize {
        self.aux += 1;
        self.total_dims() - 1
    }

    pub fn kind(&self, i: usize) -> VarKind {
        let nt = self.num_trajectory_vars();
        if i < nt {
            VarKind::Trajectory {
                t: i / (self.states * self.actions),
                psi: (i / self.actions) % self.states,
                action: i % self.actions,
            }
        } else if i < nt + self.params {
            VarKind::Param(i - nt)
        } else {
            assert!(i < self.total_dims());
            VarKind::Aux(i - nt - self.params)
        }
    }

    pub fn is_integer(&self, i: usize) -> bool {
        match self.kind(i) {
            VarKind::Param(j) => self.param_is_integer[j],
            _ => true,
        }
    }

    pub fn integer_mask(&self) -> Vec<bool> {
        (0..self.total_dims()).map(|i| self.is_integer(i)).collect()
    }

    /// `Σ_b T^t_{ψb}` as a sparse row (`t < N`).
    pub fn row_sum(&self, t: usize, psi: usize) -> Vec<(usize, i64)> {
        (0..self.actions).map(|a| (self.traj(t, psi, a), 1)).collect()
    }

    /// `Σ_s c_s Σ_b T^t_{sb}` for `t < N`.
    pub fn occupancy_row(&self, t: usize, weights: &[(usize, i64)]) -> Vec<(usize, i64)> {
        let mut row = Vec::new();
        for &(s, c) in weights {
            row.extend(self.row_sum(t, s).into_iter().map(|(i, v)| (i, v * c)));
        }
        row
    }

    /// `Σ_s c_s Ψ^t_s` as a sparse row plus a constant. For `t < N` this uses
    /// row sums of `T^t`; for `t = N` it applies the action function to
    /// `T^{N-1}` and adds `I^N`.
    pub fn occupancy_expr(
        &self,
        spec: &AbmSpec,
        bc: &BoundaryConditions,
        t: usize,
        weights: &[(usize, i64)],
    ) -> (Vec<(usize, i64)>, i64) {
        let mut row = Vec::new();
        let mut constant = 0;
        if t < self.steps {
            row = self.occupancy_row(t, weights);
        } else {
            assert_eq!(t, self.steps);
            let mut target = vec![0i64; self.states];
            for &(s, c) in weights {
                target[s] += c;
                constant += c * bc.injection(t, s);
            }
            for psi in 0..self.states {
                for a in 0..self.actions {
                    let coef: i64 = spec.effect(psi, a).iter().map(|&(s, f)| f * target[s]).sum();
                    if coef != 0 {
                        row.push((self.traj(t - 1, psi, a), coef));
                    }
                }
            }
        }
        (row, constant)
    }
}

/// `lower ≤ Σ c_i x_i ≤ upper`; `None` bounds are infinite.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint<T> {
    /// Sorted by index, no duplicates, no zeros.
    pub coeffs: Vec<(usize, T)>,
    pub lower: Option<T>,
    pub upper: Option<T>,
}

impl<T: Scalar> LinearConstraint<T> {
    /// Normalizes `coeffs`: sorts, merges duplicates and drops zeros.
    pub fn new(coeffs: Vec<(usize, T)>, lower: Option<T>, upper: Option<T>) -> Self {
        if let (Some(l), Some(u)) = (&lower, &upper) {
            assert!(l <= u, "constraint lower bound exceeds upper bound");
        }
        LinearConstraint {
            coeffs: normalize_row(coeffs),
            lower,
            upper,
        }
    }

    pub fn equality(coeffs: Vec<(usize, T)>, value: T) -> Self {
        Self::new(coeffs, Some(value.clone()), Some(value))
    }

    pub fn at_most(coeffs: Vec<(usize, T)>, upper: T) -> Self {
        Self::new(coeffs, None, Some(upper))
    }

    pub fn at_least(coeffs: Vec<(usize, T)>, lower: T) -> Self {
        Self::new(coeffs, Some(lower), None)
    }

    /// From small-integer coefficients.
    pub fn from_ints(coeffs: &[(usize, i64)], lower: Option<i64>, upper: Option<i64>) -> Self {
        Self::new(
            coeffs.iter().map(|&(i, c)| (i, T::from_int(c))).collect(),
            lower.map(T::from_int),
            upper.map(T::from_int),
        )
    }

    /// Exact test `lower == upper`.
    pub fn is_equality(&self) -> bool {
        matches!((&self.lower, &self.upper), (Some(l), Some(u)) if l == u)
    }

    /// Single-variable constraint, which can be folded into a box.
    pub fn is_bound(&self) -> bool {
        self.coeffs.len() == 1
    }

    pub fn evaluate(&self, x: &[T]) -> T {
        self.coeffs
            .iter()
            .fold(T::zero(), |acc, (i, c)| acc + c.clone() * x[*i].clone())
    }

    pub fn is_satisfied(&self, x: &[T]) -> bool {
        let v = self.evaluate(x);
        self.lower.as_ref().is_none_or(|l| &v >= l) && self.upper.as_ref().is_none_or(|u| &v <= u)
    }

    /// Integer-point test used by brute-force oracles.
    pub fn is_satisfied_int(&self, x: &[i64]) -> bool {
        let v = self
            .coeffs
            .iter()
            .fold(T::zero(), |acc, (i, c)| acc + c.clone() * T::from_int(x[*i]));
        self.lower.as_ref().is_none_or(|l| &v >= l) && self.upper.as_ref().is_none_or(|u| &v <= u)
    }

    pub fn max_index(&self) -> Option<usize> {
        self.coeffs.last().map(|c| c.0)
    }

    /// Bounds of `C x` over `0 ≤ x ≤ H`: `((C − |C|)H/2, (C + |C|)H/2)`.
    pub fn box_range(&self, upper: &[T]) -> (T, T) {
        let mut lo = T::zero();
        let mut hi = T::zero();
        for (i, c) in &self.coeffs {
            let term = c.clone() * upper[*i].clone();
            if c.is_positive() {
                hi = hi + term;
            } else {
                lo = lo + term;
            }
        }
        (lo, hi)
    }
}

pub(crate) fn normalize_row<T: Scalar>(mut coeffs: Vec<(usize, T)>) -> Vec<(usize, T)> {
    coeffs.sort_by_key(|c| c.0);
    let mut out: Vec<(usize, T)> = Vec::with_capacity(coeffs.len());
    for (i, c) in coeffs {
        match out.last_mut() {
            Some(last) if last.0 == i => last.1 = last.1.clone() + c,
            _ => out.push((i, c)),
        }
    }
    out.retain(|c| !c.1.is_zero());
    out
}

fn format_bound<T: Scalar>(b: &Option<T>, neg: bool) -> String {
    match b {
        Some(v) => v.to_string(),
        None if neg => "-inf".into(),
        None => "inf".into(),
    }
}

/// `{X ∈ Z^n × R^m : L ≤ CX ≤ U, 0 ≤ X ≤ H}`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedIntegerPolyhedron<T> {
    pub constraints: Vec<LinearConstraint<T>>,
    pub indexer: VariableIndexer,
    /// Box upper corner `H`; the lower corner is the origin.
    pub upper: Vec<T>,
}

impl<T: Scalar> MixedIntegerPolyhedron<T> {
    pub fn dims(&self) -> usize {
        self.indexer.total_dims()
    }

    pub fn validate(&self) -> Result<()> {
        let dims = self.dims();
        if self.upper.len() != dims {
            return Err(Error::Config(format!(
                "box has {} entries for {dims} variables",
                self.upper.len()
            )));
        }
        for (var, h) in self.upper.iter().enumerate() {
            if h.is_negative() {
                return Err(Error::BoxNotAtOrigin { var });
            }
        }
        for c in &self.constraints {
            if let Some(var) = c.max_index().filter(|&v| v >= dims) {
                return Err(Error::VariableOutOfRange { var, dims });
            }
        }
        Ok(())
    }

    /// Box, integrality and every constraint.
    pub fn contains(&self, x: &[T]) -> bool {
        x.len() == self.dims()
            && x.iter().zip(&self.upper).enumerate().all(|(i, (v, h))| {
                !v.is_negative() && v <= h && (!self.indexer.is_integer(i) || v.is_integral())
            })
            && self.constraints.iter().all(|c| c.is_satisfied(x))
    }

    /// Integer-point membership for brute-force oracles.
    pub fn contains_int(&self, x: &[i64]) -> bool {
        x.len() == self.dims()
            && x
                .iter()
                .zip(&self.upper)
                .all(|(&v, h)| v >= 0 && &T::from_int(v) <= h)
            && self.constraints.iter().all(|c| c.is_satisfied_int(x))
    }

    /// Concatenation of constraints.
    pub fn intersect(mut self, other: Vec<LinearConstraint<T>>) -> Self {
        self.constraints.extend(other);
        self
    }

    pub fn num_equalities(&self) -> usize {
        self.constraints.iter().filter(|c| c.is_equality()).count()
    }

    /// One constraint per line `lower <= c1*x_i1 + ... <= upper`, then a
    /// blank line and the variable table `index,kind,H`.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for c in &self.constraints {
            let terms: Vec<String> = c.coeffs.iter().map(|(i, v)| format!("{v}*x_{i}")).collect();
            let body = if terms.is_empty() { "0".to_string() } else { terms.join(" + ") };
            let _ = writeln!(
                s,
                "{} <= {} <= {}",
                format_bound(&c.lower, true),
                body,
                format_bound(&c.upper, false)
            );
        }
        s.push('\n');
        s.push_str("index,kind,H\n");
        for (i, h) in self.upper.iter().enumerate() {
            let kind = if self.indexer.is_integer(i) { "int" } else { "real" };
            let _ = writeln!(s, "{i},{kind},{h}");
        }
        s
    }

    pub fn write_dump<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(self.dump().as_bytes())?;
        Ok(())
    }
}

/// Non-negativity bounds on every `T^t_{ψa}` and the continuity equalities
/// `F^{ψa}_φ T^{t-1}_{ψa} + I^t_φ = T^t_{φb} 1^b` for `t ≥ 1`.
///
/// At `t = 0` an equality `T^0_{φb} 1^b = I^0_φ + k` is emitted only for
/// states whose start count is fixed at `k`; random start counts are bounded
/// by [`start_support_constraints`] instead.
pub fn trajectory_constraints<T: Scalar>(
    spec: &AbmSpec,
    bc: &BoundaryConditions,
    indexer: &VariableIndexer,
) -> Vec<LinearConstraint<T>> {
    let (steps, s, na) = (indexer.steps(), indexer.states(), indexer.actions());
    let mut out = Vec::with_capacity(indexer.num_trajectory_vars() + steps * s);
    for i in 0..indexer.num_trajectory_vars() {
        out.push(LinearConstraint::at_least(vec![(i, T::one())], T::zero()));
    }
    for phi in 0..s {
        if let CountDistribution::Fixed(k) = bc.start.marginal(phi) {
            out.push(LinearConstraint::from_ints(
                &indexer.row_sum(0, phi),
                Some(bc.injection(0, phi) + k),
                Some(bc.injection(0, phi) + k),
            ));
        }
    }
    // incoming[φ] = every (ψ, a, F^{ψa}_φ) with a non-zero effect on φ
    let mut incoming: Vec<Vec<(usize, usize, i64)>> = vec![Vec::new(); s];
    for psi in 0..s {
        for a in 0..na {
            for &(phi, f) in spec.effect(psi, a) {
                incoming[phi].push((psi, a, f));
            }
        }
    }
    for t in 1..steps {
        for (phi, inc) in incoming.iter().enumerate() {
            let mut row: Vec<(usize, i64)> =
                inc.iter().map(|&(psi, a, f)| (indexer.traj(t - 1, psi, a), f)).collect();
            row.extend(indexer.row_sum(t, phi).into_iter().map(|(i, _)| (i, -1)));
            let rhs = -bc.injection(t, phi);
            out.push(LinearConstraint::from_ints(&row, Some(rhs), Some(rhs)));
        }
    }
    out
}

/// `0 ≤ T^t_{ψa} ≤ 1` for every trajectory variable.
pub fn fermionic_constraints<T: Scalar>(indexer: &VariableIndexer) -> Vec<LinearConstraint<T>> {
    (0..indexer.num_trajectory_vars())
        .map(|i| LinearConstraint::new(vec![(i, T::one())], Some(T::zero()), Some(T::one())))
        .collect()
}

/// Bounds on `T^0_{φb} 1^b − I^0_φ` from each random start marginal.
pub fn start_support_constraints<T: Scalar>(
    bc: &BoundaryConditions,
    indexer: &VariableIndexer,
) -> Vec<LinearConstraint<T>> {
    let mut out = Vec::new();
    for phi in 0..indexer.states() {
        let marginal = bc.start.marginal(phi);
        if matches!(marginal, CountDistribution::Fixed(_)) {
            continue;
        }
        let (lo, hi) = marginal.range();
        let inj = bc.injection(0, phi);
        // a lower bound of zero is already implied by non-negativity
        let lower = (lo + inj > 0).then_some(lo + inj);
        out.push(LinearConstraint::from_ints(&indexer.row_sum(0, phi), lower, Some(hi + inj)));
    }
    out
}

/// Support of each observation as bounds on its linear statistic.
pub fn observation_constraints<T: Scalar>(
    spec: &AbmSpec,
    bc: &BoundaryConditions,
    observations: &[Observation],
    indexer: &VariableIndexer,
) -> Vec<LinearConstraint<T>> {
    observations
        .iter()
        .map(|obs| {
            let weights: Vec<(usize, i64)> = obs.states.iter().map(|&s| (s, 1)).collect();
            let (row, constant) = indexer.occupancy_expr(spec, bc, obs.time, &weights);
            let (lo, hi) = obs.support;
            LinearConstraint::from_ints(&row, Some(lo - constant), Some(hi - constant))
        })
        .collect()
}

/// Rewrites `{L ≤ CX ≤ U} ∪ {X^i = 0}` (both within `0 ≤ X ≤ H`) as an
/// intersection.
///
/// With `fermionic` the indicator is `X^i` itself, otherwise a fresh binary
/// indicator `z` is allocated in `indexer` and its bound appended to `upper`:
///
/// ```text
/// CX + (B̄ − U) z ≤ B̄
/// B̲ ≤ CX + (B̲ − L) z
/// 0 ≤ H^i z − X^i
/// z − X^i ≤ 0
/// ```
///
/// where `B̄`, `B̲` bound `CX` over the box. Rows that hold everywhere in the
/// box are dropped.
pub fn union_with_zero<T: Scalar>(
    constraints: &[LinearConstraint<T>],
    var: usize,
    upper: &mut Vec<T>,
    indexer: &mut VariableIndexer,
    fermionic: bool,
) -> Result<Vec<LinearConstraint<T>>> {
    let dims = upper.len();
    if var >= dims {
        return Err(Error::VariableOutOfRange { var, dims });
    }
    for c in constraints {
        if let Some(v) = c.max_index().filter(|&v| v >= dims) {
            return Err(Error::UnboundedConstraint { var: v });
        }
    }
    let z = if fermionic {
        var
    } else {
        let z = indexer.push_aux();
        upper.push(T::one());
        debug_assert_eq!(z + 1, upper.len());
        z
    };
    let mut out = Vec::new();
    for c in constraints {
        let (b_lo, b_hi) = c.box_range(upper);
        if let Some(u) = &c.upper {
            let coef = b_hi.clone() - u.clone();
            if !coef.is_zero() {
                let mut row = c.coeffs.clone();
                row.push((z, coef));
                out.push(LinearConstraint::at_most(row, b_hi.clone()));
            }
        }
        if let Some(l) = &c.lower {
            let coef = b_lo.clone() - l.clone();
            if !coef.is_zero() {
                let mut row = c.coeffs.clone();
                row.push((z, coef));
                out.push(LinearConstraint::at_least(row, b_lo));
            }
        }
    }
    if !fermionic {
        out.push(LinearConstraint::at_least(
            vec![(z, upper[var].clone()), (var, -T::one())],
            T::zero(),
        ));
        out.push(LinearConstraint::at_most(vec![(z, T::one()), (var, -T::one())], T::zero()));
    }
    Ok(out)
}

/// Unions every restricted action support with `{T^t_{ψa} = 0}`.
pub fn action_support_constraints<T: Scalar>(
    spec: &AbmSpec,
    indexer: &mut VariableIndexer,
    upper: &mut Vec<T>,
    fermionic: bool,
) -> Result<Vec<LinearConstraint<T>>> {
    let mut out = Vec::new();
    for psi in 0..indexer.states() {
        for a in 0..indexer.actions() {
            let support = spec.action_support(psi, a);
            if support.is_empty() {
                continue;
            }
            for t in 0..indexer.steps() {
                let rows: Vec<LinearConstraint<T>> = support
                    .iter()
                    .map(|oc| {
                        LinearConstraint::from_ints(&indexer.occupancy_row(t, &oc.coeffs), oc.lower, oc.upper)
                    })
                    .collect();
                let var = indexer.traj(t, psi, a);
                out.extend(union_with_zero(&rows, var, upper, indexer, fermionic)?);
            }
        }
    }
    Ok(out)
}

/// How the bounding box is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SupportOptions {
    /// At most one agent per `(t, ψ, a)`; the box becomes all-ones.
    pub fermionic: bool,
    /// Upper bound on every `T^t_{ψa}` when not Fermionic.
    pub count_cap: Option<i64>,
}

/// Builds the polyhedron bounding the posterior support: trajectory,
/// Fermionic, start-state, observation and action-support constraints
/// concatenated. Single-variable bounds are folded into the box.
pub fn assemble<T: Scalar>(
    spec: &AbmSpec,
    bc: &BoundaryConditions,
    observations: &[Observation],
    steps: usize,
    options: SupportOptions,
) -> Result<MixedIntegerPolyhedron<T>> {
    if !spec.has_action_support() {
        return Err(Error::Config("model has no action support provider".into()));
    }
    let mut indexer = VariableIndexer::for_spec(spec, steps);
    let cap = if options.fermionic {
        1
    } else {
        match options.count_cap {
            Some(c) => c,
            None => return Err(Error::InfiniteBox { var: 0 }),
        }
    };
    let mut upper: Vec<T> = vec![T::from_int(cap); indexer.total_dims()];

    let mut pieces: Vec<LinearConstraint<T>> = trajectory_constraints(spec, bc, &indexer);
    if options.fermionic {
        pieces.extend(fermionic_constraints(&indexer));
    }
    pieces.extend(start_support_constraints(bc, &indexer));
    pieces.extend(observation_constraints(spec, bc, observations, &indexer));

    let mut constraints = Vec::with_capacity(pieces.len());
    for c in pieces {
        if c.is_bound() {
            fold_bound(&c, &mut upper)?;
        } else {
            constraints.push(c);
        }
    }
    let actions = action_support_constraints(spec, &mut indexer, &mut upper, options.fermionic)?;
    constraints.extend(actions);

    let poly = MixedIntegerPolyhedron {
        constraints,
        indexer,
        upper,
    };
    poly.validate()?;
    Ok(poly)
}

/// Tightens the box with `l ≤ c x_i ≤ u`. Only lower bounds at or below the
/// origin are representable.
fn fold_bound<T: Scalar>(c: &LinearConstraint<T>, upper: &mut [T]) -> Result<()> {
    let (var, coef) = (c.coeffs[0].0, c.coeffs[0].1.clone());
    let (lo, hi) = if coef.is_positive() {
        (c.lower.clone().map(|l| l / coef.clone()), c.upper.clone().map(|u| u / coef))
    } else {
        (c.upper.clone().map(|u| u / coef.clone()), c.lower.clone().map(|l| l / coef))
    };
    if lo.as_ref().is_some_and(|l| l.is_positive()) {
        return Err(Error::BoxNotAtOrigin { var });
    }
    if let Some(h) = hi {
        if h.is_negative() {
            return Err(Error::BoxNotAtOrigin { var });
        }
        if h < upper[var] {
            upper[var] = h;
        }
    }
    Ok(())
}
