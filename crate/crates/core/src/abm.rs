//! Finite-state, timestepping agent-based models.
//!
//! An [`AbmSpec`] describes agents with `S` internal states and `A` mutually
//! exclusive actions. A [`Trajectory`] counts, for every timestep, how many
//! agents in each state performed each action. Agents are updated in parallel,
//! so the occupancy at the start of timestep `t` is fully determined by the
//! actions taken during `t - 1` plus any injections.

use std::fmt;
use std::io::{Read, Write};
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::support::OccupancyConstraint;

/// Occupancy vector: number of agents in each state.
pub type Occupancy = Vec<i64>;

/// Agent timestep `π(ψ, Ψ, a)`.
pub type TimestepFn = dyn Fn(usize, &[i64], usize) -> f64 + Send + Sync;

/// Support of `π(ψ, ·, a)` as constraints on the occupancy vector. An empty
/// list means the action is possible in every context.
pub type ActionSupportFn = dyn Fn(usize, usize) -> Vec<OccupancyConstraint> + Send + Sync;

/// Tolerance on `Σ_a π(ψ, Ψ, a) = 1`.
pub const NORMALIZATION_TOL: f64 = 1e-9;

/// `ln(x!)` for non-negative `x`, via log-gamma above a small table.
pub fn ln_factorial(x: f64) -> f64 {
    const TABLE_LEN: usize = 64;
    static TABLE: std::sync::OnceLock<[f64; TABLE_LEN]> = std::sync::OnceLock::new();
    if x >= 0.0 && x < TABLE_LEN as f64 && x.fract() == 0.0 {
        let table = TABLE.get_or_init(|| {
            let mut t = [0.0; TABLE_LEN];
            for k in 1..TABLE_LEN {
                t[k] = t[k - 1] + (k as f64).ln();
            }
            t
        });
        return table[x as usize];
    }
    libm::lgamma(x + 1.0)
}

/// The model: states, actions, agent timestep and action function.
#[derive(Clone)]
pub struct AbmSpec {
    num_states: usize,
    num_actions: usize,
    timestep: Arc<TimestepFn>,
    /// `F(ψ, a)` as sparse `(state, count)` lists, indexed `ψ * A + a`.
    effects: Vec<Vec<(usize, i64)>>,
    /// States whose occupancy `π(ψ, ·, ·)` reads; `None` means all of them.
    context: Option<Vec<Vec<usize>>>,
    action_support: Option<Arc<ActionSupportFn>>,
}

impl fmt::Debug for AbmSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AbmSpec")
            .field("num_states", &self.num_states)
            .field("num_actions", &self.num_actions)
            .finish_non_exhaustive()
    }
}

impl AbmSpec {
    /// Builds a spec from `π` and a dense-or-sparse action function
    /// `effect(ψ, a) -> [(state, count)]`. Duplicate target states are merged
    /// and zero counts dropped.
    pub fn new<P, E>(num_states: usize, num_actions: usize, timestep: P, effect: E) -> Self
    where
        P: Fn(usize, &[i64], usize) -> f64 + Send + Sync + 'static,
        E: Fn(usize, usize) -> Vec<(usize, i64)>,
    {
        assert!(num_states > 0 && num_actions > 0);
        let mut effects = Vec::with_capacity(num_states * num_actions);
        for psi in 0..num_states {
            for a in 0..num_actions {
                let mut e = effect(psi, a);
                e.sort_unstable_by_key(|&(s, _)| s);
                let mut merged: Vec<(usize, i64)> = Vec::with_capacity(e.len());
                for (s, c) in e {
                    assert!(s < num_states, "action effect targets state {s}");
                    assert!(c >= 0, "action effects are agent counts");
                    match merged.last_mut() {
                        Some(last) if last.0 == s => last.1 += c,
                        _ => merged.push((s, c)),
                    }
                }
                merged.retain(|&(_, c)| c != 0);
                effects.push(merged);
            }
        }
        AbmSpec {
            num_states,
            num_actions,
            timestep: Arc::new(timestep),
            effects,
            context: None,
            action_support: None,
        }
    }

    /// Declares which occupancies `π(ψ, ·, ·)` depends on. Lets the sampler
    /// re-evaluate only the affected multinomial terms after a move.
    pub fn with_context(mut self, context: Vec<Vec<usize>>) -> Self {
        assert_eq!(context.len(), self.num_states);
        self.context = Some(context);
        self
    }

    /// Attaches the per-action support provider used to bound the posterior.
    pub fn with_action_support<F>(mut self, support: F) -> Self
    where
        F: Fn(usize, usize) -> Vec<OccupancyConstraint> + Send + Sync + 'static,
    {
        self.action_support = Some(Arc::new(support));
        self
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    /// `π(ψ, Ψ, a)`.
    #[inline]
    pub fn timestep(&self, psi: usize, occupancy: &[i64], action: usize) -> f64 {
        (self.timestep)(psi, occupancy, action)
    }

    /// `F(ψ, a)` as sparse `(state, count)` pairs.
    #[inline]
    pub fn effect(&self, psi: usize, action: usize) -> &[(usize, i64)] {
        &self.effects[psi * self.num_actions + action]
    }

    /// Dense `F(ψ, a)`.
    pub fn effect_dense(&self, psi: usize, action: usize) -> Vec<i64> {
        let mut v = vec![0; self.num_states];
        for &(s, c) in self.effect(psi, action) {
            v[s] += c;
        }
        v
    }

    pub fn context(&self, psi: usize) -> Option<&[usize]> {
        self.context.as_ref().map(|c| c[psi].as_slice())
    }

    /// Support constraints for action `a` of state `ψ`; empty when unrestricted.
    pub fn action_support(&self, psi: usize, action: usize) -> Vec<OccupancyConstraint> {
        match &self.action_support {
            Some(f) => f(psi, action),
            None => Vec::new(),
        }
    }

    pub fn has_action_support(&self) -> bool {
        self.action_support.is_some()
    }

    /// For each state `φ`, the states whose timestep reads `Ψ_φ`.
    pub fn dependents(&self) -> Vec<Vec<usize>> {
        let s = self.num_states;
        match &self.context {
            Some(ctx) => {
                let mut deps = vec![Vec::new(); s];
                for (psi, reads) in ctx.iter().enumerate() {
                    for &phi in reads {
                        deps[phi].push(psi);
                    }
                }
                for d in &mut deps {
                    d.sort_unstable();
                    d.dedup();
                }
                deps
            }
            None => vec![(0..s).collect(); s],
        }
    }
}

/// Trajectory tensor `T^t_{ψa}`: counts of agents in state `ψ` performing
/// action `a` during timestep `t`.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Trajectory {
    steps: usize,
    states: usize,
    actions: usize,
    counts: Vec<i64>,
}

impl fmt::Debug for Trajectory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Trajectory[{}x{}x{}]{{", self.steps, self.states, self.actions)?;
        let mut first = true;
        for (t, psi, a, c) in self.nonzero() {
            if !first {
                write!(f, ", ")?;
            }
            first = false;
            write!(f, "({t},{psi},{a}):{c}")?;
        }
        write!(f, "}}")
    }
}

impl Trajectory {
    pub fn zeros(steps: usize, states: usize, actions: usize) -> Self {
        Trajectory {
            steps,
            states,
            actions,
            counts: vec![0; steps * states * actions],
        }
    }

    /// Wraps a flat `t`-major, then `ψ`, then `a` array.
    pub fn from_flat(steps: usize, states: usize, actions: usize, counts: Vec<i64>) -> Self {
        assert_eq!(counts.len(), steps * states * actions);
        Trajectory {
            steps,
            states,
            actions,
            counts,
        }
    }

    pub fn for_spec(spec: &AbmSpec, steps: usize) -> Self {
        Self::zeros(steps, spec.num_states(), spec.num_actions())
    }

    pub fn num_timesteps(&self) -> usize {
        self.steps
    }

    pub fn num_states(&self) -> usize {
        self.states
    }

    pub fn num_actions(&self) -> usize {
        self.actions
    }

    #[inline]
    pub fn index(&self, t: usize, psi: usize, a: usize) -> usize {
        (t * self.states + psi) * self.actions + a
    }

    #[inline]
    pub fn get(&self, t: usize, psi: usize, a: usize) -> i64 {
        self.counts[self.index(t, psi, a)]
    }

    pub fn set(&mut self, t: usize, psi: usize, a: usize, count: i64) {
        let i = self.index(t, psi, a);
        self.counts[i] = count;
    }

    pub fn as_flat(&self) -> &[i64] {
        &self.counts
    }

    /// `T^t_{ψ*}`.
    pub fn actions_of(&self, t: usize, psi: usize) -> &[i64] {
        let i = self.index(t, psi, 0);
        &self.counts[i..i + self.actions]
    }

    /// `T^t_{ψb} 1^b`.
    pub fn row_sum(&self, t: usize, psi: usize) -> i64 {
        self.actions_of(t, psi).iter().sum()
    }

    /// Row sums of timestep `t`.
    pub fn occupancy_at(&self, t: usize) -> Occupancy {
        (0..self.states).map(|psi| self.row_sum(t, psi)).collect()
    }

    /// Every entry is non-negative.
    pub fn is_non_negative(&self) -> bool {
        self.counts.iter().all(|&c| c >= 0)
    }

    /// At most one agent per (t, ψ, a).
    pub fn is_fermionic(&self) -> bool {
        self.counts.iter().all(|&c| (0..=1).contains(&c))
    }

    /// Iterates non-zero entries as `(t, ψ, a, count)`.
    pub fn nonzero(&self) -> impl Iterator<Item = (usize, usize, usize, i64)> + '_ {
        let (s, a) = (self.states, self.actions);
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c != 0)
            .map(move |(i, &c)| (i / (s * a), (i / a) % s, i % a, c))
    }

    /// CSV `t,psi,a,count` with header, zero entries omitted.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "psi", "a", "count"])?;
        for (t, psi, a, c) in self.nonzero() {
            w.write_record(&[t.to_string(), psi.to_string(), a.to_string(), c.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Parses the `t,psi,a,count` format for a trajectory of known shape.
    pub fn read_csv<R: Read>(
        input: R,
        steps: usize,
        states: usize,
        actions: usize,
    ) -> Result<Trajectory> {
        let mut traj = Trajectory::zeros(steps, states, actions);
        let mut r = csv::Reader::from_reader(input);
        for rec in r.deserialize::<(usize, usize, usize, i64)>() {
            let (t, psi, a, c) = rec?;
            if t >= steps || psi >= states || a >= actions {
                return Err(Error::Config(format!("trajectory entry ({t},{psi},{a}) out of shape")));
            }
            traj.set(t, psi, a, c);
        }
        Ok(traj)
    }
}

/// Distribution of the number of agents starting in one state.
#[derive(Debug, Clone, PartialEq)]
pub enum CountDistribution {
    /// Always exactly this many agents.
    Fixed(i64),
    /// Zero or one agent, present with probability `p`.
    Bernoulli(f64),
    /// `probs[k]` is the probability of `k` agents.
    Categorical(Vec<f64>),
}

impl CountDistribution {
    pub fn log_prob(&self, count: i64) -> f64 {
        match *self {
            CountDistribution::Fixed(k) => {
                if count == k {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
            CountDistribution::Bernoulli(p) => match count {
                0 => (1.0 - p).ln(),
                1 => p.ln(),
                _ => f64::NEG_INFINITY,
            },
            CountDistribution::Categorical(ref probs) => {
                if count < 0 || count as usize >= probs.len() {
                    f64::NEG_INFINITY
                } else {
                    probs[count as usize].ln()
                }
            }
        }
    }

    /// Smallest and largest count with non-zero probability.
    pub fn range(&self) -> (i64, i64) {
        match *self {
            CountDistribution::Fixed(k) => (k, k),
            CountDistribution::Bernoulli(p) => {
                let lo = if p >= 1.0 { 1 } else { 0 };
                let hi = if p <= 0.0 { 0 } else { 1 };
                (lo, hi)
            }
            CountDistribution::Categorical(ref probs) => {
                let lo = probs.iter().position(|&p| p > 0.0).unwrap_or(0);
                let hi = probs.iter().rposition(|&p| p > 0.0).unwrap_or(0);
                (lo as i64, hi as i64)
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> i64 {
        match *self {
            CountDistribution::Fixed(k) => k,
            CountDistribution::Bernoulli(p) => i64::from(rng.random::<f64>() < p),
            CountDistribution::Categorical(ref probs) => {
                let total: f64 = probs.iter().sum();
                let mut u = rng.random::<f64>() * total;
                for (k, &p) in probs.iter().enumerate() {
                    if u < p {
                        return k as i64;
                    }
                    u -= p;
                }
                self.range().1
            }
        }
    }
}

/// Start-state distribution `P(Ψ^0)` as independent per-state marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct StartState {
    marginals: Vec<CountDistribution>,
}

impl StartState {
    pub fn new(marginals: Vec<CountDistribution>) -> Self {
        StartState { marginals }
    }

    /// No randomly placed agents.
    pub fn empty(num_states: usize) -> Self {
        StartState::new(vec![CountDistribution::Fixed(0); num_states])
    }

    /// Every state independently occupied by one agent with probability `p`.
    pub fn bernoulli(num_states: usize, p: f64) -> Self {
        StartState::new(vec![CountDistribution::Bernoulli(p); num_states])
    }

    pub fn marginal(&self, psi: usize) -> &CountDistribution {
        &self.marginals[psi]
    }

    pub fn len(&self) -> usize {
        self.marginals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.marginals.is_empty()
    }

    /// True when every marginal is a point mass.
    pub fn is_deterministic(&self) -> bool {
        self.marginals
            .iter()
            .all(|m| matches!(m, CountDistribution::Fixed(_)))
    }

    pub fn log_prob(&self, occupancy: &[i64]) -> f64 {
        let mut total = 0.0;
        for (m, &c) in self.marginals.iter().zip(occupancy) {
            total += m.log_prob(c);
            if total == f64::NEG_INFINITY {
                break;
            }
        }
        total
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Occupancy {
        self.marginals.iter().map(|m| m.sample(rng)).collect()
    }
}

/// Boundary conditions: the random start state plus deterministic injections.
///
/// Row sums of `T^0` equal the drawn start occupancy plus `I^0`; for `t ≥ 1`
/// injections `I^t` add agents to the result of timestep `t - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryConditions {
    pub start: StartState,
    /// `I^t` for `t = 0..=N`; missing timesteps inject nothing.
    pub injections: Vec<Occupancy>,
}

impl BoundaryConditions {
    pub fn new(start: StartState) -> Self {
        BoundaryConditions {
            start,
            injections: Vec::new(),
        }
    }

    pub fn with_injection(mut self, t: usize, injection: Occupancy) -> Self {
        let s = self.start.len();
        assert_eq!(injection.len(), s);
        if self.injections.len() <= t {
            self.injections.resize(t + 1, vec![0; s]);
        }
        self.injections[t] = injection;
        self
    }

    /// `I^t_φ`.
    #[inline]
    pub fn injection(&self, t: usize, phi: usize) -> i64 {
        self.injections.get(t).map_or(0, |v| v[phi])
    }
}

/// A stochastic observation of a linear occupancy statistic: the total number
/// of agents in `states` at the start of timestep `time` (`time == N` reads
/// the state after the final timestep).
#[derive(Clone)]
pub struct Observation {
    pub time: usize,
    pub states: Vec<usize>,
    /// Observed value `v`.
    pub value: i64,
    /// Inclusive range of statistic values with non-zero likelihood.
    pub support: (i64, i64),
    log_likelihood: Arc<dyn Fn(i64) -> f64 + Send + Sync>,
}

impl fmt::Debug for Observation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Observation")
            .field("time", &self.time)
            .field("states", &self.states)
            .field("value", &self.value)
            .field("support", &self.support)
            .finish()
    }
}

impl Observation {
    /// Noiseless count: the statistic must equal `value`.
    pub fn count(time: usize, states: Vec<usize>, value: i64) -> Self {
        Observation {
            time,
            states,
            value,
            support: (value, value),
            log_likelihood: Arc::new(move |x| if x == value { 0.0 } else { f64::NEG_INFINITY }),
        }
    }

    /// Arbitrary likelihood `P(ω(T) = v)` as a function of the statistic.
    /// The likelihood must be `-∞` outside `support`.
    pub fn with_likelihood<F>(
        time: usize,
        states: Vec<usize>,
        value: i64,
        support: (i64, i64),
        log_likelihood: F,
    ) -> Self
    where
        F: Fn(i64) -> f64 + Send + Sync + 'static,
    {
        Observation {
            time,
            states,
            value,
            support,
            log_likelihood: Arc::new(move |x| {
                if x < support.0 || x > support.1 {
                    f64::NEG_INFINITY
                } else {
                    log_likelihood(x)
                }
            }),
        }
    }

    /// Log-likelihood as a function of the observed statistic.
    #[inline]
    pub fn log_likelihood_of(&self, statistic: i64) -> f64 {
        (self.log_likelihood)(statistic)
    }

    /// Value of the observed statistic on a trajectory. Before the last
    /// timestep the occupancy is read from the row sums of `T^t`, which at
    /// `t = 0` include the random start.
    pub fn statistic(&self, spec: &AbmSpec, traj: &Trajectory, bc: &BoundaryConditions) -> i64 {
        let occ = if self.time < traj.num_timesteps() {
            traj.occupancy_at(self.time)
        } else {
            state_after(spec, traj, bc, self.time)
        };
        self.states.iter().map(|&s| occ[s]).sum()
    }

    pub fn log_likelihood(&self, spec: &AbmSpec, traj: &Trajectory, bc: &BoundaryConditions) -> f64 {
        self.log_likelihood_of(self.statistic(spec, traj, bc))
    }
}

/// Occupancy at the start of timestep `t`: `F^{ψa}_φ T^{t-1}_{ψa} + I^t_φ`;
/// for `t = 0` this is `I^0`.
pub fn state_after(spec: &AbmSpec, traj: &Trajectory, bc: &BoundaryConditions, t: usize) -> Occupancy {
    assert!(t <= traj.num_timesteps());
    let s = spec.num_states();
    let mut occ: Occupancy = (0..s).map(|phi| bc.injection(t, phi)).collect();
    if t > 0 {
        for psi in 0..s {
            for a in 0..spec.num_actions() {
                let c = traj.get(t - 1, psi, a);
                if c != 0 {
                    for &(phi, f) in spec.effect(psi, a) {
                        occ[phi] += f * c;
                    }
                }
            }
        }
    }
    occ
}

/// Continuity: every agent produced at `t - 1` (plus injections) acts at `t`.
/// At `t = 0` the row sums minus `I^0` must lie in the start-state support.
pub fn is_continuous(spec: &AbmSpec, traj: &Trajectory, bc: &BoundaryConditions) -> bool {
    let s = spec.num_states();
    for phi in 0..s {
        let (lo, hi) = bc.start.marginal(phi).range();
        let random = traj.row_sum(0, phi) - bc.injection(0, phi);
        if random < lo || random > hi {
            return false;
        }
    }
    for t in 1..traj.num_timesteps() {
        let occ = state_after(spec, traj, bc, t);
        if (0..s).any(|phi| occ[phi] != traj.row_sum(t, phi)) {
            return false;
        }
    }
    true
}

/// Log of the multinomial factor for one `(t, ψ)`:
/// `ln(n!) + Σ_a (T_a ln π(ψ, Ψ, a) − ln T_a!)`, `-∞` when an action with
/// `π = 0` is used. Counts are assumed non-negative.
pub fn multinomial_log_term(spec: &AbmSpec, psi: usize, occupancy: &[i64], counts: &[i64]) -> f64 {
    let n: i64 = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let mut total = ln_factorial(n as f64);
    for (a, &c) in counts.iter().enumerate() {
        if c == 0 {
            continue;
        }
        let p = spec.timestep(psi, occupancy, a);
        if p <= 0.0 {
            return f64::NEG_INFINITY;
        }
        total += c as f64 * p.ln() - ln_factorial(c as f64);
    }
    total
}

/// Log start-state factor `ln P(Ψ^0 = T^0 1 − I^0)`.
pub fn start_log_prob(traj: &Trajectory, bc: &BoundaryConditions) -> f64 {
    let random: Occupancy = (0..traj.num_states())
        .map(|phi| traj.row_sum(0, phi) - bc.injection(0, phi))
        .collect();
    bc.start.log_prob(&random)
}

/// `ln P(T)`: `-∞` outside the set of valid trajectories.
pub fn forecast_log_prob(spec: &AbmSpec, traj: &Trajectory, bc: &BoundaryConditions) -> f64 {
    if !traj.is_non_negative() || !is_continuous(spec, traj, bc) {
        return f64::NEG_INFINITY;
    }
    let mut total = start_log_prob(traj, bc);
    if total == f64::NEG_INFINITY {
        return total;
    }
    for t in 0..traj.num_timesteps() {
        let occ = traj.occupancy_at(t);
        for psi in 0..spec.num_states() {
            total += multinomial_log_term(spec, psi, &occ, traj.actions_of(t, psi));
            if total == f64::NEG_INFINITY {
                return total;
            }
        }
    }
    total
}

/// Unnormalized `ln P(T | Ω)`: forecast plus observation log-likelihoods.
pub fn posterior_log_prob(
    spec: &AbmSpec,
    traj: &Trajectory,
    observations: &[Observation],
    bc: &BoundaryConditions,
) -> f64 {
    let mut total = forecast_log_prob(spec, traj, bc);
    if total == f64::NEG_INFINITY {
        return total;
    }
    for obs in observations {
        total += obs.log_likelihood(spec, traj, bc);
        if total == f64::NEG_INFINITY {
            return total;
        }
    }
    total
}

/// Forward simulation of `steps` timesteps from a freshly drawn start state.
pub fn simulate<R: Rng + ?Sized>(
    spec: &AbmSpec,
    bc: &BoundaryConditions,
    steps: usize,
    rng: &mut R,
) -> Result<Trajectory> {
    assert!(steps >= 1);
    let s = spec.num_states();
    let na = spec.num_actions();
    let mut traj = Trajectory::for_spec(spec, steps);
    let mut occ = bc.start.sample(rng);
    for (phi, o) in occ.iter_mut().enumerate() {
        *o += bc.injection(0, phi);
    }
    let mut probs = vec![0.0; na];
    for t in 0..steps {
        let mut next: Occupancy = (0..s).map(|phi| bc.injection(t + 1, phi)).collect();
        for psi in 0..s {
            let n = occ[psi];
            if n == 0 {
                continue;
            }
            let mut total = 0.0;
            for (a, p) in probs.iter_mut().enumerate() {
                *p = spec.timestep(psi, &occ, a);
                total += *p;
            }
            if (total - 1.0).abs() > NORMALIZATION_TOL || probs.iter().any(|&p| p < 0.0) {
                return Err(Error::UnnormalizedTimestep { psi, total });
            }
            for _ in 0..n {
                let a = draw_categorical(&probs, rng);
                let i = traj.index(t, psi, a);
                traj.counts[i] += 1;
                for &(phi, f) in spec.effect(psi, a) {
                    next[phi] += f;
                }
            }
        }
        occ = next;
    }
    Ok(traj)
}

fn draw_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let mut u = rng.random::<f64>();
    let mut last = 0;
    for (a, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            if u < p {
                return a;
            }
            u -= p;
            last = a;
        }
    }
    last
}

/// Exhaustively enumerates every trajectory with non-zero posterior and
/// returns them with normalized probabilities.
///
/// Branches whose action has `π = 0` are pruned. `ceiling` bounds the number
/// of partial trajectories visited; exceeding it is an error rather than a
/// silent truncation.
pub fn enumerate_posterior(
    spec: &AbmSpec,
    bc: &BoundaryConditions,
    observations: &[Observation],
    steps: usize,
    fermionic: bool,
    ceiling: u64,
) -> Result<Vec<(Trajectory, f64)>> {
    let s = spec.num_states();
    let mut enumerator = Enumerator {
        spec,
        steps,
        fermionic,
        ceiling,
        visited: 0,
        out: Vec::new(),
        bc,
    };
    let ranges: Vec<(i64, i64)> = (0..s).map(|psi| bc.start.marginal(psi).range()).collect();
    let mut start = vec![0i64; s];
    enumerator.starts(&ranges, 0, &mut start)?;

    let mut weighted: Vec<(Trajectory, f64)> = enumerator
        .out
        .into_iter()
        .filter_map(|traj| {
            let lp = posterior_log_prob(spec, &traj, observations, bc);
            (lp > f64::NEG_INFINITY).then_some((traj, lp))
        })
        .collect();
    if weighted.is_empty() {
        return Ok(weighted);
    }
    let max = weighted.iter().map(|w| w.1).fold(f64::NEG_INFINITY, f64::max);
    let norm: f64 = weighted.iter().map(|w| (w.1 - max).exp()).sum();
    let log_norm = max + norm.ln();
    for w in &mut weighted {
        w.1 = (w.1 - log_norm).exp();
    }
    Ok(weighted)
}

struct Enumerator<'a> {
    spec: &'a AbmSpec,
    bc: &'a BoundaryConditions,
    steps: usize,
    fermionic: bool,
    ceiling: u64,
    visited: u64,
    out: Vec<Trajectory>,
}

impl Enumerator<'_> {
    fn tick(&mut self) -> Result<()> {
        self.visited += 1;
        if self.visited > self.ceiling {
            return Err(Error::EnumerationCeiling {
                size: self.visited as f64,
                ceiling: self.ceiling as f64,
            });
        }
        Ok(())
    }

    fn starts(&mut self, ranges: &[(i64, i64)], psi: usize, start: &mut Vec<i64>) -> Result<()> {
        if psi == ranges.len() {
            let occ: Occupancy = start
                .iter()
                .enumerate()
                .map(|(phi, &c)| c + self.bc.injection(0, phi))
                .collect();
            let mut traj = Trajectory::for_spec(self.spec, self.steps);
            return self.timestep(&mut traj, 0, &occ);
        }
        let (lo, hi) = ranges[psi];
        for c in lo..=hi {
            start[psi] = c;
            self.starts(ranges, psi + 1, start)?;
        }
        Ok(())
    }

    fn timestep(&mut self, traj: &mut Trajectory, t: usize, occ: &Occupancy) -> Result<()> {
        self.tick()?;
        if t == self.steps {
            self.out.push(traj.clone());
            return Ok(());
        }
        if self.fermionic && occ.iter().any(|&n| n > self.spec.num_actions() as i64) {
            return Ok(());
        }
        let mut next: Occupancy = (0..self.spec.num_states())
            .map(|phi| self.bc.injection(t + 1, phi))
            .collect();
        self.split_state(traj, t, occ, 0, &mut next)
    }

    /// Distributes the agents of state `psi` over actions, then recurses.
    fn split_state(
        &mut self,
        traj: &mut Trajectory,
        t: usize,
        occ: &Occupancy,
        psi: usize,
        next: &mut Occupancy,
    ) -> Result<()> {
        if psi == self.spec.num_states() {
            let next = next.clone();
            return self.timestep(traj, t + 1, &next);
        }
        let allowed: Vec<usize> = (0..self.spec.num_actions())
            .filter(|&a| occ[psi] == 0 || self.spec.timestep(psi, occ, a) > 0.0)
            .collect();
        self.compose(traj, t, occ, psi, &allowed, 0, occ[psi], next)
    }

    #[allow(clippy::too_many_arguments)]
    fn compose(
        &mut self,
        traj: &mut Trajectory,
        t: usize,
        occ: &Occupancy,
        psi: usize,
        allowed: &[usize],
        k: usize,
        remaining: i64,
        next: &mut Occupancy,
    ) -> Result<()> {
        if k == allowed.len() {
            if remaining == 0 {
                return self.split_state(traj, t, occ, psi + 1, next);
            }
            return Ok(());
        }
        let a = allowed[k];
        let max = if self.fermionic { remaining.min(1) } else { remaining };
        for c in 0..=max {
            traj.set(t, psi, a, c);
            for &(phi, f) in self.spec.effect(psi, a) {
                next[phi] += f * c;
            }
            let r = self.compose(traj, t, occ, psi, allowed, k + 1, remaining - c, next);
            for &(phi, f) in self.spec.effect(psi, a) {
                next[phi] -= f * c;
            }
            traj.set(t, psi, a, 0);
            r?;
        }
        Ok(())
    }
}

/// CSV `t,psi,count` of occupancies at `t = 0..=N`, zeros omitted.
pub fn write_occupancy_csv<W: Write>(
    spec: &AbmSpec,
    traj: &Trajectory,
    bc: &BoundaryConditions,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "psi", "count"])?;
    for t in 0..=traj.num_timesteps() {
        let occ = if t < traj.num_timesteps() {
            traj.occupancy_at(t)
        } else {
            state_after(spec, traj, bc, t)
        };
        for (psi, c) in occ.into_iter().enumerate() {
            if c != 0 {
                w.write_record(&[t.to_string(), psi.to_string(), c.to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::cat_mouse;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fig1(steps: usize) -> Trajectory {
        let mut t = Trajectory::zeros(steps, 4, 2);
        t.set(0, 1, 0, 1);
        t.set(0, 2, 1, 1);
        t
    }

    #[test]
    fn state_after_examples() {
        let spec = cat_mouse::spec();
        let bc = BoundaryConditions::new(StartState::empty(4)).with_injection(0, vec![0, 1, 0, 0]);
        let mut traj = Trajectory::zeros(1, 4, 2);
        traj.set(0, 1, 0, 1);
        assert_eq!(state_after(&spec, &traj, &bc, 1), vec![1, 0, 0, 0]);
        assert_eq!(state_after(&spec, &traj, &bc, 0), vec![0, 1, 0, 0]);

        let empty_bc = BoundaryConditions::new(StartState::empty(4));
        let empty = Trajectory::zeros(1, 4, 2);
        assert_eq!(state_after(&spec, &empty, &empty_bc, 0), vec![0; 4]);

        let bc = BoundaryConditions::new(StartState::empty(4)).with_injection(0, vec![0, 1, 1, 0]);
        assert_eq!(state_after(&spec, &fig1(1), &bc, 1), vec![1, 0, 1, 0]);
    }

    #[test]
    fn continuity_examples() {
        let spec = cat_mouse::spec();
        let bc = BoundaryConditions::new(StartState::empty(4)).with_injection(0, vec![0, 1, 1, 0]);
        assert!(is_continuous(&spec, &fig1(1), &bc));

        let mut two = fig1(2);
        two.set(1, 0, 1, 1);
        two.set(1, 2, 0, 1);
        assert!(is_continuous(&spec, &two, &bc));
        assert!(!is_continuous(&spec, &fig1(2), &bc));
    }

    #[test]
    fn forecast_examples() {
        let spec = cat_mouse::spec();
        let bc = cat_mouse::boundary();
        let mut traj = Trajectory::zeros(1, 4, 2);
        traj.set(0, 1, 0, 1);
        let lp = forecast_log_prob(&spec, &traj, &bc);
        assert!((lp - 0.03125f64.ln()).abs() < 1e-12, "{lp}");

        // agents vanish between timesteps
        assert_eq!(forecast_log_prob(&spec, &fig1(2), &bc), f64::NEG_INFINITY);

        // two cats in the same state, one moves and one stays
        let occ = vec![2, 0, 0, 0];
        let term = multinomial_log_term(&spec, 0, &occ, &[1, 1]);
        assert!((term - 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn posterior_adds_observation_likelihood() {
        let spec = cat_mouse::spec();
        let bc = cat_mouse::boundary();
        let mut traj = Trajectory::zeros(2, 4, 2);
        traj.set(0, 1, 0, 1);
        traj.set(1, 0, 1, 1);
        let forecast = forecast_log_prob(&spec, &traj, &bc);
        assert!(forecast.is_finite());
        assert_eq!(posterior_log_prob(&spec, &traj, &[], &bc), forecast);
        let matching = Observation::count(1, vec![0], 1);
        assert_eq!(posterior_log_prob(&spec, &traj, &[matching], &bc), forecast);
        let violated = Observation::count(1, vec![0], 0);
        assert_eq!(posterior_log_prob(&spec, &traj, &[violated], &bc), f64::NEG_INFINITY);
    }

    #[test]
    fn simulate_empty_start_is_empty() {
        let spec = cat_mouse::spec();
        let bc = BoundaryConditions::new(StartState::empty(4));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let traj = simulate(&spec, &bc, 3, &mut rng).unwrap();
        assert_eq!(traj, Trajectory::zeros(3, 4, 2));
    }

    #[test]
    fn simulate_cat_moves_half_the_time() {
        let spec = cat_mouse::spec();
        let bc = BoundaryConditions::new(StartState::empty(4)).with_injection(0, vec![0, 1, 0, 0]);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let runs = 10_000;
        let moved = (0..runs)
            .filter(|_| simulate(&spec, &bc, 1, &mut rng).unwrap().get(0, 1, 0) == 1)
            .count();
        let freq = moved as f64 / runs as f64;
        assert!((freq - 0.5).abs() < 0.015, "{freq}");
    }

    #[test]
    fn simulate_rejects_unnormalized_timestep() {
        let spec = AbmSpec::new(1, 2, |_, _, _| 0.3, |_, _| vec![(0, 1)]);
        let bc = BoundaryConditions::new(StartState::new(vec![CountDistribution::Fixed(1)]));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            simulate(&spec, &bc, 1, &mut rng),
            Err(Error::UnnormalizedTimestep { .. })
        ));
    }

    #[test]
    fn enumeration_respects_observation() {
        let spec = cat_mouse::spec();
        let bc = cat_mouse::boundary();
        let obs = cat_mouse::left_cat_observation();
        let post = enumerate_posterior(&spec, &bc, &obs, 2, true, 1_000_000).unwrap();
        assert!(!post.is_empty());
        let total: f64 = post.iter().map(|p| p.1).sum();
        assert!((total - 1.0).abs() < 1e-12);
        for (traj, _) in &post {
            assert_eq!(traj.get(1, 0, 0) + traj.get(1, 0, 1), 1);
        }
    }

    #[test]
    fn enumeration_of_impossible_observation_is_empty() {
        let spec = cat_mouse::spec();
        let bc = cat_mouse::boundary();
        let obs = vec![Observation::count(1, vec![0, 1], 5)];
        let post = enumerate_posterior(&spec, &bc, &obs, 2, true, 1_000_000).unwrap();
        assert!(post.is_empty());
    }

    #[test]
    fn enumeration_ceiling_is_enforced() {
        let spec = cat_mouse::spec();
        let bc = cat_mouse::boundary();
        let err = enumerate_posterior(&spec, &bc, &[], 2, false, 10).unwrap_err();
        assert!(matches!(err, Error::EnumerationCeiling { .. }));
    }

    #[test]
    fn enumeration_is_proportional_to_posterior() {
        let spec = cat_mouse::spec();
        let bc = cat_mouse::boundary();
        let obs = cat_mouse::left_cat_observation();
        let post = enumerate_posterior(&spec, &bc, &obs, 2, false, 10_000_000).unwrap();
        let offsets: Vec<f64> = post
            .iter()
            .map(|(t, p)| p.ln() - posterior_log_prob(&spec, t, &obs, &bc))
            .collect();
        for o in &offsets {
            assert!((o - offsets[0]).abs() < 1e-9);
        }
    }

    #[test]
    fn trajectory_csv_round_trip() {
        let traj = fig1(2);
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text, "t,psi,a,count\n0,1,0,1\n0,2,1,1\n");
        let back = Trajectory::read_csv(buf.as_slice(), 2, 4, 2).unwrap();
        assert_eq!(back, traj);
    }

    #[test]
    fn occupancy_csv_lists_every_timestep() {
        let spec = cat_mouse::spec();
        let bc = cat_mouse::boundary();
        let mut traj = Trajectory::zeros(1, 4, 2);
        traj.set(0, 1, 0, 1);
        let mut buf = Vec::new();
        write_occupancy_csv(&spec, &traj, &bc, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "t,psi,count\n0,1,1\n1,0,1\n");
    }

    #[test]
    fn ln_factorial_matches_product() {
        let mut acc = 0.0f64;
        for k in 1..100 {
            acc += (k as f64).ln();
            assert!((ln_factorial(k as f64) - acc).abs() < 1e-9 * acc.max(1.0));
        }
        assert_eq!(ln_factorial(0.0), 0.0);
    }
}
