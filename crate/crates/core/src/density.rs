//! The linearly factorized approximation `P̃` of the posterior over `X_N` and
//! the exact/hybrid probability of a Markov state.
//!
//! `P̃` is a product of univariate factors of linear functions of `X_N`:
//! Boltzmann factors `exp(−ι/τ)` for every reduced constraint, and
//! approximations of each multiplicative term of the posterior (start
//! marginals, per-state multinomials, observation likelihoods). The Markov
//! state probability uses a term's exact value where it is defined and
//! non-zero, and its approximation elsewhere, plus every Boltzmann factor.

use std::io::Write;

use rand::Rng;

use crate::abm::{
    ln_factorial, multinomial_log_term, posterior_log_prob, simulate, AbmSpec, BoundaryConditions,
    Observation, Trajectory,
};
use crate::basis::BasisReduction;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::support::{LinearConstraint, MixedIntegerPolyhedron, VarKind};

/// Log-rate assigned to actions never taken in any prior sample.
pub const DEFAULT_LOG_RATE_FLOOR: f64 = -13.815510557964274; // ln 1e-6
/// Prior draws used to calibrate the multinomial approximation.
pub const DEFAULT_PRIOR_SAMPLES: usize = 10_000;
/// Boltzmann temperature.
pub const DEFAULT_TEMPERATURE: f64 = 0.1;

/// Distance from `x` to `[lower, upper]`.
pub fn infeasibility(lower: Option<f64>, x: f64, upper: Option<f64>) -> f64 {
    if let Some(u) = upper.filter(|&u| x > u) {
        x - u
    } else if let Some(l) = lower.filter(|&l| x < l) {
        l - x
    } else {
        0.0
    }
}

/// Univariate log-valued function of a factor's argument.
#[derive(Debug, Clone, PartialEq)]
pub enum FactorKind {
    /// `−ι(lower, x, upper)/τ`.
    Constraint {
        lower: Option<f64>,
        upper: Option<f64>,
        inv_tau: f64,
    },
    /// `ln(x!)` on `[0, max]`.
    LogFactorial { max: f64 },
    /// `x ln π̃ − ln(x!)` on `[0, max]`.
    ActionCount { log_rate: f64, max: f64 },
    /// `values[x − first]` at integer `x`; the domain is the table's span.
    Table { first: i64, values: Vec<f64> },
}

impl FactorKind {
    /// Log value; outside the domain the nearest endpoint is used.
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            FactorKind::Constraint { lower, upper, inv_tau } => -infeasibility(*lower, x, *upper) * inv_tau,
            FactorKind::LogFactorial { max } => ln_factorial(x.clamp(0.0, *max)),
            FactorKind::ActionCount { log_rate, max } => {
                let x = x.clamp(0.0, *max);
                if x == 0.0 {
                    0.0
                } else {
                    x * log_rate - ln_factorial(x)
                }
            }
            FactorKind::Table { first, values } => {
                let last = first + values.len() as i64 - 1;
                let k = (x.round_ties_even() as i64).clamp(*first, last);
                values[(k - first) as usize]
            }
        }
    }

    pub fn is_constraint(&self) -> bool {
        matches!(self, FactorKind::Constraint { .. })
    }
}

/// `kind(offset + row · X_N)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Factor {
    pub row: Vec<(usize, f64)>,
    pub offset: f64,
    pub kind: FactorKind,
}

impl Factor {
    pub fn argument(&self, xn: &[f64]) -> f64 {
        self.row.iter().fold(self.offset, |acc, (k, z)| acc + z * xn[*k])
    }

    pub fn eval(&self, xn: &[f64]) -> f64 {
        self.kind.eval(self.argument(xn))
    }
}

/// Product of factors together with, for each `X_N` coordinate, the factors
/// that read it.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorizedDistribution {
    pub factors: Vec<Factor>,
    /// `touch[k]` lists `(factor, coefficient)` for every factor reading `X_N,k`.
    pub touch: Vec<Vec<(u32, f64)>>,
}

impl FactorizedDistribution {
    pub fn new(dims: usize, factors: Vec<Factor>) -> Self {
        let mut touch = vec![Vec::new(); dims];
        for (f, factor) in factors.iter().enumerate() {
            for (k, z) in &factor.row {
                touch[*k].push((f as u32, *z));
            }
        }
        FactorizedDistribution { factors, touch }
    }

    pub fn dims(&self) -> usize {
        self.touch.len()
    }

    /// `ln P̃(X_N)`; always finite.
    pub fn log_tilde_p(&self, xn: &[f64]) -> f64 {
        self.factors.iter().map(|f| f.eval(xn)).sum()
    }

    pub fn arguments(&self, xn: &[f64]) -> Vec<f64> {
        self.factors.iter().map(|f| f.argument(xn)).collect()
    }

    /// `ln P̃(X + b e_k) − ln P̃(X + a e_k)` from cached arguments at `X`.
    #[inline]
    pub fn delta(&self, args: &[f64], k: usize, a: f64, b: f64) -> f64 {
        let mut d = 0.0;
        for &(f, z) in &self.touch[k] {
            let f = f as usize;
            let kind = &self.factors[f].kind;
            d += kind.eval(args[f] + z * b) - kind.eval(args[f] + z * a);
        }
        d
    }

    /// Every `X_N` coordinate sharing a factor with `k`, including `k`.
    pub fn neighbours(&self, k: usize) -> Vec<u32> {
        let mut out: Vec<u32> = self.touch[k]
            .iter()
            .flat_map(|&(f, _)| self.factors[f as usize].row.iter().map(|e| e.0 as u32))
            .collect();
        out.push(k as u32);
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// Calibrated `ln π̃^t_{ψa}` for the multinomial approximation.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibratedLogRates {
    steps: usize,
    states: usize,
    actions: usize,
    log_rates: Vec<f64>,
}

impl CalibratedLogRates {
    /// The same rate array for every timestep.
    pub fn from_values(steps: usize, states: usize, actions: usize, log_rates: Vec<f64>) -> Self {
        assert_eq!(log_rates.len(), steps * states * actions);
        CalibratedLogRates {
            steps,
            states,
            actions,
            log_rates,
        }
    }

    pub fn get(&self, t: usize, psi: usize, a: usize) -> f64 {
        self.log_rates[(t * self.states + psi) * self.actions + a]
    }

    /// CSV `t,psi,a,log_pi_tilde`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "psi", "a", "log_pi_tilde"])?;
        for t in 0..self.steps {
            for psi in 0..self.states {
                for a in 0..self.actions {
                    w.write_record([
                        t.to_string(),
                        psi.to_string(),
                        a.to_string(),
                        self.get(t, psi, a).to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Monte Carlo estimate of the count-weighted mean `ln π` per `(t, ψ, a)`
/// over prior trajectories. Cells no sample visits get `floor`.
pub fn calibrate_multinomial<R: Rng + ?Sized>(
    spec: &AbmSpec,
    bc: &BoundaryConditions,
    steps: usize,
    samples: usize,
    floor: f64,
    rng: &mut R,
) -> Result<CalibratedLogRates> {
    if samples == 0 {
        return Err(Error::Config("calibration needs at least one prior sample".into()));
    }
    let (s, na) = (spec.num_states(), spec.num_actions());
    let mut weighted = vec![0.0; steps * s * na];
    let mut visits = vec![0.0; steps * s * na];
    // a cell that only ever saw one value reports it exactly
    let mut seen: Vec<Option<f64>> = vec![None; steps * s * na];
    let mut constant = vec![true; steps * s * na];
    for _ in 0..samples {
        let traj = simulate(spec, bc, steps, rng)?;
        for t in 0..steps {
            let occ = traj.occupancy_at(t);
            for psi in (0..s).filter(|&psi| occ[psi] > 0) {
                for a in 0..na {
                    let c = traj.get(t, psi, a);
                    if c > 0 {
                        let i = traj.index(t, psi, a);
                        let lp = spec.timestep(psi, &occ, a).ln();
                        weighted[i] += c as f64 * lp;
                        visits[i] += c as f64;
                        match seen[i] {
                            None => seen[i] = Some(lp),
                            Some(v) if v != lp => constant[i] = false,
                            _ => {}
                        }
                    }
                }
            }
        }
    }
    let log_rates = (0..weighted.len())
        .map(|i| match seen[i] {
            None => floor,
            Some(v) if constant[i] => v,
            Some(_) => weighted[i] / visits[i],
        })
        .collect();
    Ok(CalibratedLogRates::from_values(steps, s, na, log_rates))
}

fn to_f64_row<T: Scalar>(row: &[(usize, T)]) -> Vec<(usize, f64)> {
    row.iter().map(|(k, v)| (*k, v.as_f64())).collect()
}

/// One Boltzmann factor per constraint over `X_N`.
pub fn constraint_factors<T: Scalar>(constraints: &[LinearConstraint<T>], tau: f64) -> Vec<Factor> {
    assert!(tau > 0.0, "temperature must be positive");
    constraints
        .iter()
        .map(|c| Factor {
            row: to_f64_row(&c.coeffs),
            offset: 0.0,
            kind: FactorKind::Constraint {
                lower: c.lower.as_ref().map(Scalar::as_f64),
                upper: c.upper.as_ref().map(Scalar::as_f64),
                inv_tau: 1.0 / tau,
            },
        })
        .collect()
}

fn composed<T: Scalar>(red: &BasisReduction<T>, coeffs: &[(usize, T)]) -> (Vec<(usize, f64)>, f64) {
    let (row, offset) = red.compose(coeffs);
    (to_f64_row(&row), offset.as_f64())
}

/// Multinomial approximation for one `(t, ψ)`: `ln n!` over the row sum
/// followed by `T ln π̃ − ln T!` for each action.
pub fn multinomial_factors<T: Scalar>(
    rates: &CalibratedLogRates,
    poly: &MixedIntegerPolyhedron<T>,
    red: &BasisReduction<T>,
    t: usize,
    psi: usize,
) -> Vec<Factor> {
    let idx = &poly.indexer;
    let cells: Vec<usize> = (0..idx.actions()).map(|a| idx.traj(t, psi, a)).collect();
    let row_max: f64 = cells.iter().map(|&d| poly.upper[d].as_f64()).sum();
    let sum: Vec<(usize, T)> = cells.iter().map(|&d| (d, T::one())).collect();
    let (row, offset) = composed(red, &sum);
    let mut out = vec![Factor {
        row,
        offset,
        kind: FactorKind::LogFactorial { max: row_max },
    }];
    for (a, &d) in cells.iter().enumerate() {
        let (row, offset) = composed(red, &[(d, T::one())]);
        out.push(Factor {
            row,
            offset,
            kind: FactorKind::ActionCount {
                log_rate: rates.get(t, psi, a),
                max: poly.upper[d].as_f64(),
            },
        });
    }
    out
}

/// One multiplicative term of the posterior.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Term {
    /// Start marginal `P(Ψ^0_ψ)`.
    Start(usize),
    /// Multinomial term for the agents in state `ψ` at timestep `t`.
    Multinomial { t: usize, psi: usize },
    /// Likelihood of observation `o`.
    Observation(usize),
}

/// Everything a chain needs to evaluate `P̃` and the Markov state probability
/// on `X_N`. Immutable and shareable across chains.
#[derive(Debug, Clone)]
pub struct Target {
    pub spec: AbmSpec,
    pub bc: BoundaryConditions,
    pub observations: Vec<Observation>,
    pub steps: usize,
    /// `H_N`.
    pub upper: Vec<f64>,
    pub integer: Vec<bool>,
    /// Original-variable indices of the `X_N` coordinates.
    pub nonbasic: Vec<usize>,
    /// Number of original variables.
    pub total_dims: usize,
    /// Lift of trajectory entries: offset per `(t, ψ, a)`.
    pub(crate) traj_offset: Vec<i64>,
    /// For each `X_N` coordinate, the trajectory entries it moves.
    pub(crate) lift_cols: Vec<Vec<(u32, i64)>>,
    pub dist: FactorizedDistribution,
    /// Factors `0..num_constraint_factors` are Boltzmann factors.
    pub num_constraint_factors: usize,
    pub terms: Vec<Term>,
    /// Factor range approximating each term.
    pub(crate) term_factors: Vec<(u32, u32)>,
    /// Terms whose exact value can change with each `X_N` coordinate.
    pub(crate) dim_terms: Vec<Vec<u32>>,
    pub(crate) neighbours: Vec<Vec<u32>>,
    /// Observed statistic as a row over trajectory entries plus a constant.
    pub(crate) obs_rows: Vec<(Vec<(u32, i64)>, i64)>,
    pub tau: f64,
}

impl Target {
    /// Builds `P̃` and the term bookkeeping from a reduced polyhedron.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        spec: &AbmSpec,
        bc: &BoundaryConditions,
        observations: &[Observation],
        poly: &MixedIntegerPolyhedron<T>,
        red: &BasisReduction<T>,
        rates: &CalibratedLogRates,
        tau: f64,
    ) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(Error::Config(format!("temperature must be positive, got {tau}")));
        }
        let idx = &poly.indexer;
        let steps = idx.steps();
        let (s, na) = (idx.states(), idx.actions());
        let nt = idx.num_trajectory_vars();
        let dims = red.num_nonbasic();

        let mut traj_offset = Vec::with_capacity(nt);
        let mut lift_cols: Vec<Vec<(u32, i64)>> = vec![Vec::new(); dims];
        for d in 0..nt {
            let v = &red.offset[d];
            if !v.is_integral() {
                return Err(Error::Config(format!("lift offset of trajectory entry {d} is not integral")));
            }
            traj_offset.push(v.as_f64() as i64);
            for (k, m) in red.lift_matrix.row(d) {
                if !red.integer_mask[*k] || !m.is_integral() {
                    return Err(Error::Config(format!(
                        "trajectory entry {d} depends on coordinate {k} by a non-integer coefficient"
                    )));
                }
                lift_cols[*k].push((d as u32, m.as_f64() as i64));
            }
        }

        let mut factors = constraint_factors(&red.reduced_constraints, tau);
        let num_constraint_factors = factors.len();
        let mut terms = Vec::new();
        let mut term_factors = Vec::new();
        let mut push_term = |term: Term, fs: Vec<Factor>, factors: &mut Vec<Factor>| {
            let start = factors.len() as u32;
            factors.extend(fs);
            terms.push(term);
            term_factors.push((start, factors.len() as u32));
        };

        for psi in 0..s {
            let marginal = bc.start.marginal(psi);
            let (lo, hi) = marginal.range();
            let sum: Vec<(usize, T)> = (0..na).map(|a| (idx.traj(0, psi, a), T::one())).collect();
            let (row, offset) = composed(red, &sum);
            let table = Factor {
                row,
                offset: offset - bc.injection(0, psi) as f64,
                kind: FactorKind::Table {
                    first: lo,
                    values: (lo..=hi).map(|k| marginal.log_prob(k)).collect(),
                },
            };
            push_term(Term::Start(psi), vec![table], &mut factors);
        }
        for t in 0..steps {
            for psi in 0..s {
                let fs = multinomial_factors(rates, poly, red, t, psi);
                push_term(Term::Multinomial { t, psi }, fs, &mut factors);
            }
        }
        let mut obs_rows: Vec<(Vec<(u32, i64)>, i64)> = Vec::with_capacity(observations.len());
        for (o, obs) in observations.iter().enumerate() {
            if obs.time > steps {
                return Err(Error::Config(format!("observation {o} is after the final timestep")));
            }
            let weights: Vec<(usize, i64)> = obs.states.iter().map(|&p| (p, 1)).collect();
            let (row, constant) = idx.occupancy_expr(spec, bc, obs.time, &weights);
            let typed: Vec<(usize, T)> = row.iter().map(|&(d, c)| (d, T::from_int(c))).collect();
            let (frow, foffset) = composed(red, &typed);

            let (lo, hi) = obs.support;
            let table = Factor {
                row: frow,
                offset: foffset + constant as f64,
                kind: FactorKind::Table {
                    first: lo,
                    values: (lo..=hi).map(|v| obs.log_likelihood_of(v)).collect(),
                },
            };
            push_term(Term::Observation(o), vec![table], &mut factors);
            let merged = crate::support::normalize_row(typed);
            obs_rows.push((merged.iter().map(|(d, c)| (*d as u32, c.as_f64() as i64)).collect(), constant));
        }

        // terms reading each trajectory entry
        let deps = spec.dependents();
        let mut obs_of_entry: Vec<Vec<u32>> = vec![Vec::new(); nt];
        for (o, (row, _)) in obs_rows.iter().enumerate() {
            for (d, _) in row {
                obs_of_entry[*d as usize].push(o as u32);
            }
        }
        let start_terms = s as u32;
        let multinomial_term = |t: usize, psi: usize| start_terms + (t * s + psi) as u32;
        let obs_term = |o: u32| start_terms + (steps * s) as u32 + o;
        let entry_terms = |d: usize| -> Vec<u32> {
            let VarKind::Trajectory { t, psi, .. } = idx.kind(d) else { unreachable!() };
            let mut out = vec![multinomial_term(t, psi)];
            out.extend(deps[psi].iter().map(|&q| multinomial_term(t, q)));
            if t == 0 {
                out.push(psi as u32);
            }
            out.extend(obs_of_entry[d].iter().map(|&o| obs_term(o)));
            out
        };
        let dim_terms: Vec<Vec<u32>> = lift_cols
            .iter()
            .map(|col| {
                let mut ts: Vec<u32> = col.iter().flat_map(|(d, _)| entry_terms(*d as usize)).collect();
                ts.sort_unstable();
                ts.dedup();
                ts
            })
            .collect();

        let dist = FactorizedDistribution::new(dims, factors);
        let neighbours = (0..dims).map(|k| dist.neighbours(k)).collect();
        Ok(Target {
            spec: spec.clone(),
            bc: bc.clone(),
            observations: observations.to_vec(),
            steps,
            upper: red.box_nonbasic.iter().map(Scalar::as_f64).collect(),
            integer: red.integer_mask.clone(),
            nonbasic: red.nonbasic.clone(),
            total_dims: red.total_dims(),
            traj_offset,
            lift_cols,
            dist,
            num_constraint_factors,
            terms,
            term_factors,
            dim_terms,
            neighbours,
            obs_rows,
            tau,
        })
    }

    pub fn dims(&self) -> usize {
        self.upper.len()
    }

    pub fn num_states(&self) -> usize {
        self.spec.num_states()
    }

    pub fn num_actions(&self) -> usize {
        self.spec.num_actions()
    }

    pub fn log_tilde_p(&self, xn: &[f64]) -> f64 {
        self.dist.log_tilde_p(xn)
    }

    /// Trajectory entries of the lift of `X_N`.
    pub fn lift_trajectory(&self, xn: &[f64]) -> Vec<i64> {
        let mut x = self.traj_offset.clone();
        for (k, col) in self.lift_cols.iter().enumerate() {
            let v = xn[k].round_ties_even() as i64;
            if v != 0 {
                for &(d, m) in col {
                    x[d as usize] += m * v;
                }
            }
        }
        x
    }

    /// `X_N` coordinates of a full original-variable point.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        self.nonbasic.iter().map(|&d| x[d]).collect()
    }

    /// Row sums `Ψ^t_ψ` of a flat trajectory, `t`-major.
    pub(crate) fn row_sums(&self, traj: &[i64]) -> Vec<i64> {
        traj.chunks(self.num_actions()).map(|c| c.iter().sum()).collect()
    }

    /// Exact log value of a term, `None` when undefined or zero.
    pub(crate) fn exact_term(&self, term: Term, traj: &[i64], occ: &[i64]) -> Option<f64> {
        let (s, na) = (self.num_states(), self.num_actions());
        let v = match term {
            Term::Start(psi) => self.bc.start.marginal(psi).log_prob(occ[psi] - self.bc.injection(0, psi)),
            Term::Multinomial { t, psi } => {
                let base = (t * s + psi) * na;
                let counts = &traj[base..base + na];
                if counts.iter().any(|&c| c < 0) {
                    return None;
                }
                if counts.iter().all(|&c| c == 0) {
                    return Some(0.0);
                }
                let occ_t = &occ[t * s..(t + 1) * s];
                let context_ok = match self.spec.context(psi) {
                    Some(ctx) => ctx.iter().all(|&q| occ_t[q] >= 0),
                    None => occ_t.iter().all(|&q| q >= 0),
                };
                if !context_ok {
                    return None;
                }
                multinomial_log_term(&self.spec, psi, occ_t, counts)
            }
            Term::Observation(o) => {
                let (row, constant) = &self.obs_rows[o];
                let stat = row.iter().fold(*constant, |acc, &(d, c)| acc + c * traj[d as usize]);
                self.observations[o].log_likelihood_of(stat)
            }
        };
        v.is_finite().then_some(v)
    }

    /// Approximate log value of a term from cached factor arguments.
    pub(crate) fn approx_term(&self, term: usize, args: &[f64]) -> f64 {
        let (a, b) = self.term_factors[term];
        (a..b)
            .map(|f| self.dist.factors[f as usize].kind.eval(args[f as usize]))
            .sum()
    }

    /// Markov state log probability and feasibility of `X_N`, from scratch.
    ///
    /// Feasible states (every reduced constraint satisfied and a finite
    /// posterior) get the exact posterior. Otherwise each term uses its exact
    /// value if defined and finite, else its approximation, and every
    /// Boltzmann factor is added.
    pub fn markov_log_prob(&self, xn: &[f64]) -> (f64, bool) {
        let args = self.dist.arguments(xn);
        let traj = self.lift_trajectory(xn);
        let occ = self.row_sums(&traj);
        let mut penalty = 0.0;
        let mut violated = false;
        for f in 0..self.num_constraint_factors {
            let v = self.dist.factors[f].kind.eval(args[f]);
            violated |= v < 0.0;
            penalty += v;
        }
        let mut total = penalty;
        let mut all_exact = true;
        for (i, &term) in self.terms.iter().enumerate() {
            match self.exact_term(term, &traj, &occ) {
                Some(v) => total += v,
                None => {
                    all_exact = false;
                    total += self.approx_term(i, &args);
                }
            }
        }
        if !violated && all_exact {
            let t = Trajectory::from_flat(self.steps, self.num_states(), self.num_actions(), traj);
            (posterior_log_prob(&self.spec, &t, &self.observations, &self.bc), true)
        } else {
            (total, false)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abm::enumerate_posterior;
    use crate::basis::reduce;
    use crate::models::cat_mouse;
    use crate::support::{assemble, SupportOptions};
    use crate::Rational;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn infeasibility_examples() {
        assert_eq!(infeasibility(Some(0.0), 0.5, Some(1.0)), 0.0);
        assert_eq!(infeasibility(Some(0.0), -2.0, Some(1.0)), 2.0);
        assert_eq!(infeasibility(Some(0.0), 3.0, Some(1.0)), 2.0);
        assert_eq!(infeasibility(None, -5.0, Some(1.0)), 0.0);
    }

    #[test]
    fn factor_kinds() {
        let c = FactorKind::Constraint { lower: Some(0.0), upper: Some(1.0), inv_tau: 10.0 };
        assert_eq!(c.eval(1.0), 0.0);
        assert_eq!(c.eval(2.0), -10.0);
        let a = FactorKind::ActionCount { log_rate: 0.5f64.ln(), max: 4.0 };
        assert_eq!(a.eval(0.0), 0.0);
        assert!((a.eval(2.0) - (2.0 * 0.5f64.ln() - 2f64.ln())).abs() < 1e-15);
        // clamped to the nearest domain point
        assert_eq!(a.eval(-3.0), 0.0);
        assert_eq!(a.eval(7.0), a.eval(4.0));
        let t = FactorKind::Table { first: 0, values: vec![-1.0, -2.0] };
        assert_eq!(t.eval(-1.0), -1.0);
        assert_eq!(t.eval(5.0), -2.0);
        let lf = FactorKind::LogFactorial { max: 3.0 };
        assert_eq!(lf.eval(10.0), 6f64.ln());
    }

    #[test]
    fn boltzmann_slope_is_total_infeasibility() {
        let cs = vec![
            LinearConstraint::<Rational>::from_ints(&[(0, 1)], None, Some(0)),
            LinearConstraint::from_ints(&[(0, 1), (1, 1)], Some(3), None),
        ];
        let x = [2.0, 0.0];
        // violations: 2 and 1
        for tau in [1.0, 0.1, 0.01] {
            let fd = FactorizedDistribution::new(2, constraint_factors(&cs, tau));
            assert!((fd.log_tilde_p(&x) + 3.0 / tau).abs() < 1e-9);
            assert_eq!(fd.log_tilde_p(&[0.0, 3.0]), -0.0 / tau - 0.0);
        }
    }

    #[test]
    fn delta_matches_full_evaluation() {
        let cs = vec![
            LinearConstraint::<Rational>::from_ints(&[(0, 1), (1, -2)], Some(-1), Some(1)),
            LinearConstraint::from_ints(&[(1, 1), (2, 1)], None, Some(1)),
        ];
        let mut factors = constraint_factors(&cs, 0.1);
        factors.push(Factor {
            row: vec![(2, 1.0)],
            offset: 1.0,
            kind: FactorKind::LogFactorial { max: 5.0 },
        });
        let fd = FactorizedDistribution::new(3, factors);
        let x = [1.0, 2.0, 0.0];
        let args = fd.arguments(&x);
        for k in 0..3 {
            for d in [-1.0, 1.0] {
                let mut y = x;
                y[k] += d;
                let direct = fd.log_tilde_p(&y) - fd.log_tilde_p(&x);
                assert!((fd.delta(&args, k, 0.0, d) - direct).abs() < 1e-9);
            }
        }
        assert_eq!(fd.neighbours(2), vec![1, 2]);
        assert_eq!(fd.neighbours(0), vec![0, 1]);
    }

    fn worked_target(tau: f64) -> (Target, crate::Reduction) {
        let spec = cat_mouse::spec();
        let bc = cat_mouse::boundary();
        let obs = cat_mouse::left_cat_observation();
        let poly: MixedIntegerPolyhedron<Rational> =
            assemble(&spec, &bc, &obs, 2, SupportOptions { fermionic: true, count_cap: None }).unwrap();
        let red = reduce(&poly).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rates = calibrate_multinomial(&spec, &bc, 2, 2000, DEFAULT_LOG_RATE_FLOOR, &mut rng).unwrap();
        (Target::new(&spec, &bc, &obs, &poly, &red, &rates, tau).unwrap(), red)
    }

    #[test]
    fn calibration_of_constant_rates() {
        let spec = cat_mouse::spec();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rates = calibrate_multinomial(&spec, &cat_mouse::boundary(), 2, 500, DEFAULT_LOG_RATE_FLOOR, &mut rng).unwrap();
        for t in 0..2 {
            for psi in 0..2 {
                for a in 0..2 {
                    assert_eq!(rates.get(t, psi, a), 0.5f64.ln());
                }
            }
        }
        // a mouse only ever takes actions with probability one
        for psi in 2..4 {
            for a in 0..2 {
                let r = rates.get(0, psi, a);
                assert!(r == 0.0 || r == DEFAULT_LOG_RATE_FLOOR, "{r}");
            }
        }
        // no agents ever: floor everywhere
        let empty = BoundaryConditions::new(crate::abm::StartState::empty(4));
        let rates = calibrate_multinomial(&spec, &empty, 2, 3, DEFAULT_LOG_RATE_FLOOR, &mut rng).unwrap();
        assert_eq!(rates.get(1, 2, 0), DEFAULT_LOG_RATE_FLOOR);
        let mut buf = Vec::new();
        rates.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,psi,a,log_pi_tilde\n0,0,0,"));
        assert_eq!(text.lines().count(), 1 + 16);
    }

    #[test]
    fn single_agent_cell_matches_multinomial() {
        // one agent, exact rates: approximation equals the true term
        let rates = CalibratedLogRates::from_values(1, 1, 2, vec![0.3f64.ln(), 0.7f64.ln()]);
        let poly = MixedIntegerPolyhedron::<Rational> {
            constraints: vec![],
            indexer: crate::support::VariableIndexer::new(1, 1, 2),
            upper: vec![Rational::from_integer(1); 2],
        };
        let red = reduce(&poly).unwrap();
        let fs = multinomial_factors(&rates, &poly, &red, 0, 0);
        let x = [0.0, 1.0];
        let approx: f64 = fs.iter().map(|f| f.eval(&x)).sum();
        assert!((approx - 0.7f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn feasible_states_are_exact() {
        let (target, red) = worked_target(0.1);
        let post = enumerate_posterior(&target.spec, &target.bc, &target.observations, 2, true, 1_000_000).unwrap();
        for (traj, _) in post {
            let x: Vec<f64> = traj.as_flat().iter().map(|&v| v as f64).collect();
            let xn = red.project(&x);
            let (lp, feasible) = target.markov_log_prob(&xn);
            assert!(feasible);
            assert_eq!(lp, posterior_log_prob(&target.spec, &traj, &target.observations, &target.bc));
            assert_eq!(target.lift_trajectory(&xn), traj.as_flat());
        }
    }

    #[test]
    fn feasibility_is_conjunction() {
        let (target, _) = worked_target(0.1);
        let n = target.dims();
        for bits in 0u32..1 << n {
            let xn: Vec<f64> = (0..n).map(|i| f64::from((bits >> i) & 1)).collect();
            let (_, feasible) = target.markov_log_prob(&xn);
            let args = target.dist.arguments(&xn);
            let satisfied = (0..target.num_constraint_factors).all(|f| target.dist.factors[f].kind.eval(args[f]) == 0.0);
            let traj = Trajectory::from_flat(2, 4, 2, target.lift_trajectory(&xn));
            let finite = posterior_log_prob(&target.spec, &traj, &target.observations, &target.bc).is_finite();
            assert_eq!(feasible, satisfied && finite);
        }
    }

    /// A state violating one basic-variable bound by 1 pays exactly 1/τ on
    /// top of the per-term hybrid value.
    #[test]
    fn hybrid_value_on_infeasible_state() {
        let (target, _) = worked_target(0.1);
        let n = target.dims();
        let mut checked = 0;
        for bits in 0u32..1 << n {
            let xn: Vec<f64> = (0..n).map(|i| f64::from((bits >> i) & 1)).collect();
            let args = target.dist.arguments(&xn);
            let penalty: f64 = (0..target.num_constraint_factors).map(|f| target.dist.factors[f].kind.eval(args[f])).sum();
            if penalty != -10.0 {
                continue;
            }
            let traj = target.lift_trajectory(&xn);
            let occ = target.row_sums(&traj);
            let terms: f64 = target
                .terms
                .iter()
                .enumerate()
                .map(|(i, &t)| target.exact_term(t, &traj, &occ).unwrap_or_else(|| target.approx_term(i, &args)))
                .sum();
            let (lp, feasible) = target.markov_log_prob(&xn);
            assert!(!feasible);
            assert!((lp - (terms - 10.0)).abs() < 1e-12);
            checked += 1;
        }
        assert!(checked > 0);
    }

    #[test]
    fn temperature_must_be_positive() {
        let spec = cat_mouse::spec();
        let bc = cat_mouse::boundary();
        let poly: MixedIntegerPolyhedron<Rational> =
            assemble(&spec, &bc, &[], 2, SupportOptions { fermionic: true, count_cap: None }).unwrap();
        let red = reduce(&poly).unwrap();
        let rates = CalibratedLogRates::from_values(2, 4, 2, vec![0.0; 16]);
        assert!(Target::new(&spec, &bc, &[], &poly, &red, &rates, 0.0).is_err());
    }
}
