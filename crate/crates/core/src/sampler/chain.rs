//! Metropolis-Hastings chain over `X_N` with `P̃`-weighted single-coordinate
//! perturbations.
//!
//! Every state caches the factor arguments, the exact or approximate value of
//! each posterior term, the Boltzmann penalty and the proposal weight of every
//! perturbation. A proposal is applied speculatively: the caches touched by
//! the perturbed coordinate are updated with an undo log, the weights of the
//! coordinates sharing a factor with it are recomputed into a pending list,
//! and the step either commits the pending weights or rolls the caches back.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::abm::simulate;
use crate::density::{Target, DEFAULT_TEMPERATURE};
use crate::error::{Error, Result};
use crate::sampler::sumtree::SumTree;

/// Smallest proposal weight of a perturbation inside the box, `e^-50`.
pub const WEIGHT_FLOOR: f64 = 1.928749847963918e-22;
/// Default cap on forced proposals while searching for a feasible start.
pub const DEFAULT_INIT_CAP: u64 = 10_000_000;
/// Default steps without progress before initialization redraws its start.
pub const DEFAULT_INIT_STALL: u64 = 100_000;

/// Run parameters for one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainConfig {
    /// Boltzmann temperature used to build the target.
    pub tau: f64,
    pub burn_in: u64,
    /// Post-burn-in steps.
    pub samples: u64,
    /// Stop early once this many samples have been recorded.
    pub max_recorded: Option<u64>,
    /// Record every `thin`-th post-burn-in step.
    pub thin: u64,
    pub seed: u64,
    /// Stream of the per-chain generator.
    pub chain: u64,
    /// Also record infeasible states.
    pub record_infeasible: bool,
    /// Total initialization steps before giving up.
    pub init_cap: u64,
    /// Initialization restarts from a new prior draw after this many steps
    /// without progress (0 never restarts).
    pub init_stall: u64,
    /// Cached sums are recomputed from scratch this often (0 disables).
    pub resync_every: u64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            tau: DEFAULT_TEMPERATURE,
            burn_in: 0,
            samples: 0,
            max_recorded: None,
            thin: 1,
            seed: 0,
            chain: 0,
            record_infeasible: false,
            init_cap: DEFAULT_INIT_CAP,
            init_stall: DEFAULT_INIT_STALL,
            resync_every: 100_000,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.tau)));
        }
        if self.thin == 0 {
            return Err(Error::Config("thinning stride must be at least 1".into()));
        }
        Ok(())
    }

    /// Per-chain generator: the master seed with the chain index as stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.chain);
        rng
    }
}

/// Linear functionals of the occupancy after the final timestep.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FinalStatistics {
    pub names: Vec<String>,
    /// Per statistic, `(state, weight)` pairs.
    pub weights: Vec<Vec<(usize, f64)>>,
}

/// Every `(i, δ)` with `⌊X_N⌉_i + δ` inside `[0, H_i]`.
pub fn valid_perturbations(xn: &[f64], upper: &[f64]) -> Vec<(usize, i8)> {
    let mut out = Vec::new();
    for (i, (&x, &h)) in xn.iter().zip(upper).enumerate() {
        let r = x.round_ties_even();
        if r - 1.0 >= 0.0 {
            out.push((i, -1));
        }
        if r + 1.0 <= h {
            out.push((i, 1));
        }
    }
    out
}

#[inline]
fn leaf_of(k: usize, delta: f64) -> usize {
    2 * k + usize::from(delta > 0.0)
}

/// Result of one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub coordinate: usize,
    pub delta: f64,
    pub accepted: bool,
    pub feasible: bool,
}

/// Differences between cached and from-scratch values.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Coherence {
    pub max_weight_error: f64,
    pub total_error: f64,
    pub log_prob_error: f64,
    pub argument_error: f64,
}

impl Coherence {
    pub fn max(&self) -> f64 {
        self.max_weight_error
            .max(self.total_error)
            .max(self.log_prob_error)
            .max(self.argument_error)
    }
}

#[derive(Debug, Clone, Copy)]
struct Saved {
    x: f64,
    penalty: f64,
    violated: usize,
    inexact: usize,
    log_prob: f64,
}

/// Mutable Markov state with its caches.
#[derive(Debug, Clone)]
pub struct Chain<'a> {
    target: &'a Target,
    xn: Vec<f64>,
    traj: Vec<i64>,
    occ: Vec<i64>,
    final_occ: Vec<i64>,
    args: Vec<f64>,
    term_vals: Vec<f64>,
    term_exact: Vec<bool>,
    inexact: usize,
    penalty: f64,
    violated: usize,
    log_prob: f64,
    tree: SumTree,
    // statistics over the final occupancy
    stat_vals: Vec<f64>,
    stat_of_state: Vec<Vec<(u32, f64)>>,
    occ_acc: Vec<f64>,
    occ_last: Vec<u64>,
    recorded: u64,
    // speculative step scratch
    undo_args: Vec<(u32, f64)>,
    undo_terms: Vec<(u32, f64, bool)>,
    pending: Vec<(usize, f64)>,
    steps_since_resync: u64,
}

impl<'a> Chain<'a> {
    /// Chain at `xn` with every cache built from scratch.
    pub fn new(target: &'a Target, xn: Vec<f64>, stats: &FinalStatistics) -> Self {
        assert_eq!(xn.len(), target.dims());
        let s = target.num_states();
        let mut stat_of_state = vec![Vec::new(); s];
        for (i, w) in stats.weights.iter().enumerate() {
            for &(phi, c) in w {
                stat_of_state[phi].push((i as u32, c));
            }
        }
        let mut chain = Chain {
            target,
            xn,
            traj: Vec::new(),
            occ: Vec::new(),
            final_occ: vec![0; s],
            args: Vec::new(),
            term_vals: vec![0.0; target.terms.len()],
            term_exact: vec![false; target.terms.len()],
            inexact: 0,
            penalty: 0.0,
            violated: 0,
            log_prob: 0.0,
            tree: SumTree::new(2 * target.dims()),
            stat_vals: vec![0.0; stats.weights.len()],
            stat_of_state,
            occ_acc: vec![0.0; s],
            occ_last: vec![0; s],
            recorded: 0,
            undo_args: Vec::new(),
            undo_terms: Vec::new(),
            pending: Vec::new(),
            steps_since_resync: 0,
        };
        chain.rebuild();
        chain
    }

    /// Recomputes every cache from `X_N`.
    pub fn rebuild(&mut self) {
        let t = self.target;
        self.traj = t.lift_trajectory(&self.xn);
        self.occ = t.row_sums(&self.traj);
        self.args = t.dist.arguments(&self.xn);
        self.penalty = 0.0;
        self.violated = 0;
        for f in 0..t.num_constraint_factors {
            let v = t.dist.factors[f].kind.eval(self.args[f]);
            self.penalty += v;
            self.violated += usize::from(v < 0.0);
        }
        self.inexact = 0;
        for i in 0..t.terms.len() {
            self.refresh_term(i);
            self.inexact += usize::from(!self.term_exact[i]);
        }
        self.log_prob = self.penalty + self.term_vals.iter().sum::<f64>();

        let flush_n = self.recorded;
        for phi in 0..self.final_occ.len() {
            self.flush_occupancy(phi, flush_n);
        }
        self.final_occ = self.compute_final_occupancy();
        for v in &mut self.stat_vals {
            *v = 0.0;
        }
        for (phi, &c) in self.final_occ.iter().enumerate() {
            for &(i, w) in &self.stat_of_state[phi] {
                self.stat_vals[i as usize] += w * c as f64;
            }
        }

        let weights: Vec<f64> = (0..2 * t.dims())
            .map(|leaf| self.weight(leaf / 2, if leaf % 2 == 0 { -1.0 } else { 1.0 }))
            .collect();
        self.tree = SumTree::from_weights(&weights);
        self.steps_since_resync = 0;
    }

    fn compute_final_occupancy(&self) -> Vec<i64> {
        let t = self.target;
        let (s, na, n) = (t.num_states(), t.num_actions(), t.steps);
        let mut out: Vec<i64> = (0..s).map(|phi| t.bc.injection(n, phi)).collect();
        let base = (n - 1) * s * na;
        for psi in 0..s {
            for a in 0..na {
                let c = self.traj[base + psi * na + a];
                if c != 0 {
                    for &(phi, f) in t.spec.effect(psi, a) {
                        out[phi] += f * c;
                    }
                }
            }
        }
        out
    }

    /// Sets term `i` to its exact value if defined, else its approximation.
    #[inline]
    fn refresh_term(&mut self, i: usize) {
        let t = self.target;
        match t.exact_term(t.terms[i], &self.traj, &self.occ) {
            Some(v) => {
                self.term_vals[i] = v;
                self.term_exact[i] = true;
            }
            None => {
                self.term_vals[i] = t.approx_term(i, &self.args);
                self.term_exact[i] = false;
            }
        }
    }

    /// Proposal weight `min(1, P̃(⌊X⌉_k + δ e_k)/P̃(⌊X⌉_k))`, floored, or 0
    /// when the perturbation leaves the box.
    #[inline]
    fn weight(&self, k: usize, delta: f64) -> f64 {
        let x = self.xn[k];
        let r = x.round_ties_even();
        let dest = r + delta;
        if dest < 0.0 || dest > self.target.upper[k] {
            return 0.0;
        }
        let a = r - x;
        let d = self.target.dist.delta(&self.args, k, a, a + delta);
        if d >= 0.0 {
            1.0
        } else {
            d.exp().max(WEIGHT_FLOOR)
        }
    }

    fn flush_occupancy(&mut self, phi: usize, n: u64) {
        self.occ_acc[phi] += self.final_occ[phi] as f64 * (n - self.occ_last[phi]) as f64;
        self.occ_last[phi] = n;
    }

    /// Moves `X_N,k` to `value`, updating every cache and logging what is
    /// needed to undo it.
    fn apply(&mut self, k: usize, value: f64) {
        let t = self.target;
        let old = self.xn[k];
        let change = value - old;
        self.xn[k] = value;
        let (s, na, n) = (t.num_states(), t.num_actions(), t.steps);
        let di = change.round_ties_even() as i64;
        if di != 0 {
            let last = (n - 1) * s * na;
            for &(d, m) in &t.lift_cols[k] {
                let d = d as usize;
                let c = m * di;
                self.traj[d] += c;
                self.occ[d / na] += c;
                if d >= last {
                    let (psi, a) = ((d - last) / na, d % na);
                    for &(phi, f) in t.spec.effect(psi, a) {
                        self.flush_occupancy(phi, self.recorded);
                        self.final_occ[phi] += f * c;
                        for &(i, w) in &self.stat_of_state[phi] {
                            self.stat_vals[i as usize] += w * (f * c) as f64;
                        }
                    }
                }
            }
        }
        for &(f, z) in &t.dist.touch[k] {
            let fi = f as usize;
            let before = self.args[fi];
            self.undo_args.push((f, before));
            let after = before + z * change;
            self.args[fi] = after;
            if fi < t.num_constraint_factors {
                let kind = &t.dist.factors[fi].kind;
                let (vb, va) = (kind.eval(before), kind.eval(after));
                self.penalty += va - vb;
                self.log_prob += va - vb;
                self.violated = self.violated + usize::from(va < 0.0) - usize::from(vb < 0.0);
            }
        }
        for &i in &t.dim_terms[k] {
            let i = i as usize;
            let (vb, eb) = (self.term_vals[i], self.term_exact[i]);
            self.undo_terms.push((i as u32, vb, eb));
            self.refresh_term(i);
            self.log_prob += self.term_vals[i] - vb;
            self.inexact = self.inexact + usize::from(!self.term_exact[i]) - usize::from(!eb);
        }
    }

    fn undo(&mut self, k: usize, saved: Saved) {
        let t = self.target;
        let change = saved.x - self.xn[k];
        self.xn[k] = saved.x;
        let di = change.round_ties_even() as i64;
        if di != 0 {
            let (s, na, n) = (t.num_states(), t.num_actions(), t.steps);
            let last = (n - 1) * s * na;
            for &(d, m) in &t.lift_cols[k] {
                let d = d as usize;
                let c = m * di;
                self.traj[d] += c;
                self.occ[d / na] += c;
                if d >= last {
                    let (psi, a) = ((d - last) / na, d % na);
                    for &(phi, f) in t.spec.effect(psi, a) {
                        self.flush_occupancy(phi, self.recorded);
                        self.final_occ[phi] += f * c;
                        for &(i, w) in &self.stat_of_state[phi] {
                            self.stat_vals[i as usize] += w * (f * c) as f64;
                        }
                    }
                }
            }
        }
        for &(f, v) in self.undo_args.iter().rev() {
            self.args[f as usize] = v;
        }
        for &(i, v, e) in self.undo_terms.iter().rev() {
            self.term_vals[i as usize] = v;
            self.term_exact[i as usize] = e;
        }
        self.penalty = saved.penalty;
        self.violated = saved.violated;
        self.inexact = saved.inexact;
        self.log_prob = saved.log_prob;
    }

    /// One Metropolis-Hastings step; with `force` every proposal is accepted.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R, force: bool) -> Result<StepOutcome> {
        let t = self.target;
        let leaf = self.tree.draw(rng.random::<f64>())?;
        let k = leaf / 2;
        let delta = if leaf % 2 == 0 { -1.0 } else { 1.0 };
        let w_forward = self.tree.get(leaf);
        let eps = if t.integer[k] { 0.0 } else { rng.random_range(-0.5..=0.5) };
        let value = self.xn[k].round_ties_even() + delta + eps;

        let saved = Saved {
            x: self.xn[k],
            penalty: self.penalty,
            violated: self.violated,
            inexact: self.inexact,
            log_prob: self.log_prob,
        };
        let total_before = self.tree.total();
        self.undo_args.clear();
        self.undo_terms.clear();
        self.apply(k, value);

        self.pending.clear();
        let mut total_after = total_before;
        let mut w_reverse = 0.0;
        let reverse_leaf = leaf_of(k, -delta);
        for &j in &t.neighbours[k] {
            let j = j as usize;
            for (l, d) in [(2 * j, -1.0), (2 * j + 1, 1.0)] {
                let w = self.weight(j, d);
                total_after += w - self.tree.get(l);
                if l == reverse_leaf {
                    w_reverse = w;
                }
                self.pending.push((l, w));
            }
        }

        let accepted = force || {
            let log_alpha = (self.log_prob - saved.log_prob) + w_reverse.ln() - w_forward.ln() + total_before.ln()
                - total_after.ln();
            log_alpha >= 0.0 || rng.random::<f64>().ln() < log_alpha
        };
        if accepted {
            for &(l, w) in &self.pending {
                self.tree.set(l, w);
            }
        } else {
            self.undo(k, saved);
        }
        self.steps_since_resync += 1;
        Ok(StepOutcome {
            coordinate: k,
            delta,
            accepted,
            feasible: self.is_feasible(),
        })
    }

    /// Every reduced constraint satisfied and every posterior term exact.
    pub fn is_feasible(&self) -> bool {
        self.violated == 0 && self.inexact == 0
    }

    /// Number of reduced constraints currently violated.
    pub fn violated(&self) -> usize {
        self.violated
    }

    pub fn log_prob(&self) -> f64 {
        self.log_prob
    }

    pub fn state(&self) -> &[f64] {
        &self.xn
    }

    /// Trajectory entries of the lifted state, `(t, ψ, a)` flattened.
    pub fn trajectory(&self) -> &[i64] {
        &self.traj
    }

    pub fn final_occupancy(&self) -> &[i64] {
        &self.final_occ
    }

    pub fn statistics(&self) -> &[f64] {
        &self.stat_vals
    }

    /// `S(X_N)`.
    pub fn total_weight(&self) -> f64 {
        self.tree.total()
    }

    pub fn weight_of(&self, k: usize, delta: i8) -> f64 {
        self.tree.get(leaf_of(k, f64::from(delta)))
    }

    /// Counts the current state towards the occupancy expectation.
    pub fn record(&mut self) {
        self.recorded += 1;
    }

    pub fn recorded(&self) -> u64 {
        self.recorded
    }

    /// Mean final occupancy over recorded states.
    pub fn occupancy_mean(&mut self) -> Vec<f64> {
        let n = self.recorded;
        for phi in 0..self.final_occ.len() {
            self.flush_occupancy(phi, n);
        }
        self.occ_acc.iter().map(|a| if n == 0 { 0.0 } else { a / n as f64 }).collect()
    }

    /// Compares every cache with a from-scratch recomputation.
    pub fn coherence(&self) -> Coherence {
        let t = self.target;
        let args = t.dist.arguments(&self.xn);
        let argument_error = args
            .iter()
            .zip(&self.args)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let mut fresh = self.clone();
        fresh.args = args;
        let mut max_weight_error: f64 = 0.0;
        let mut total = 0.0;
        for leaf in 0..2 * t.dims() {
            let w = fresh.weight(leaf / 2, if leaf % 2 == 0 { -1.0 } else { 1.0 });
            total += w;
            max_weight_error = max_weight_error.max((w - self.tree.get(leaf)).abs());
        }
        let (lp, _) = t.markov_log_prob(&self.xn);
        Coherence {
            max_weight_error,
            total_error: (total - self.tree.total()).abs() / total.max(1.0),
            log_prob_error: (lp - self.log_prob).abs() / lp.abs().max(1.0),
            argument_error,
        }
    }

    /// Recomputes cached sums when the resync interval has elapsed.
    pub fn maybe_resync(&mut self, every: u64) {
        if every > 0 && self.steps_since_resync >= every {
            self.rebuild();
        }
    }
}

/// Builds a chain from a prior draw and walks, accepting every proposal,
/// until the state is feasible. A walk that goes `stall` steps without
/// lowering its fewest-violations mark restarts from a fresh prior draw
/// (0 never restarts). `cap` bounds the total steps over all walks.
pub fn initialize<'a, R: Rng + ?Sized>(
    target: &'a Target,
    stats: &FinalStatistics,
    cap: u64,
    stall: u64,
    rng: &mut R,
) -> Result<(Chain<'a>, u64)> {
    let mut steps = 0;
    loop {
        let mut chain = Chain::new(target, prior_state(target, rng)?, stats);
        let (mut best, mut since_best) = (usize::MAX, 0);
        while !chain.is_feasible() {
            if steps >= cap {
                return Err(Error::InitializationFailed(steps));
            }
            let v = chain.violated + chain.inexact;
            if v < best {
                (best, since_best) = (v, 0);
            } else if stall > 0 && since_best >= stall {
                break;
            }
            chain.step(rng, true)?;
            steps += 1;
            since_best += 1;
        }
        if chain.is_feasible() {
            chain.rebuild();
            return Ok((chain, steps));
        }
    }
}

/// Non-basic coordinates of a prior trajectory, clamped into the box.
fn prior_state<R: Rng + ?Sized>(target: &Target, rng: &mut R) -> Result<Vec<f64>> {
    let traj = simulate(&target.spec, &target.bc, target.steps, rng)?;
    let mut x = vec![0.0; target.total_dims];
    for (d, &c) in traj.as_flat().iter().enumerate() {
        x[d] = c as f64;
    }
    Ok(target
        .project(&x)
        .iter()
        .zip(&target.upper)
        .map(|(&v, &h)| v.clamp(0.0, h))
        .collect())
}

/// Counters for one chain run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainStats {
    pub chain: u64,
    pub seed: u64,
    pub init_steps: u64,
    pub proposals: u64,
    pub accepted: u64,
    pub infeasible_steps: u64,
    pub recorded_samples: u64,
    pub acceptance_rate: f64,
    pub infeasible_fraction: f64,
    /// Time spent reaching a feasible start and burning in.
    pub setup_seconds: f64,
    /// Time spent in post-burn-in steps.
    pub wall_seconds: f64,
    pub feasible_samples_per_second: f64,
}

/// Recorded statistic traces and counters of a finished chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput {
    pub stats: ChainStats,
    /// `traces[s][i]`: statistic `s` at the `i`-th recorded state.
    pub traces: Vec<Vec<f64>>,
    /// Post-burn-in step of each recorded state.
    pub steps: Vec<u64>,
    pub occupancy_mean: Vec<f64>,
}

/// Initializes, burns in, then runs `samples` steps, recording every
/// `thin`-th state that is feasible (or every one with `record_infeasible`).
/// `sink` sees each recorded state.
pub fn run_chain(
    target: &Target,
    config: &ChainConfig,
    stats: &FinalStatistics,
    sink: &mut dyn FnMut(&Chain<'_>),
) -> Result<ChainOutput> {
    config.validate()?;
    let mut rng = config.rng();
    let start = Instant::now();
    let (mut chain, init_steps) = initialize(target, stats, config.init_cap, config.init_stall, &mut rng)?;
    for _ in 0..config.burn_in {
        chain.step(&mut rng, false)?;
        chain.maybe_resync(config.resync_every);
    }
    let setup = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let mut traces = vec![Vec::new(); stats.weights.len()];
    let mut steps = Vec::new();
    let (mut accepted, mut infeasible) = (0u64, 0u64);
    let mut proposals = 0u64;
    for i in 0..config.samples {
        if config.max_recorded.is_some_and(|m| chain.recorded() >= m) {
            break;
        }
        proposals += 1;
        let out = chain.step(&mut rng, false)?;
        chain.maybe_resync(config.resync_every);
        accepted += u64::from(out.accepted);
        infeasible += u64::from(!out.feasible);
        if (i + 1) % config.thin == 0 && (out.feasible || config.record_infeasible) {
            chain.record();
            for (trace, v) in traces.iter_mut().zip(chain.statistics()) {
                trace.push(*v);
            }
            steps.push(i);
            sink(&chain);
        }
    }
    let wall = start.elapsed().as_secs_f64();
    let recorded = chain.recorded();
    let rate = |a: u64| if proposals == 0 { 0.0 } else { a as f64 / proposals as f64 };
    Ok(ChainOutput {
        stats: ChainStats {
            chain: config.chain,
            seed: config.seed,
            init_steps,
            proposals,
            accepted,
            infeasible_steps: infeasible,
            recorded_samples: recorded,
            acceptance_rate: rate(accepted),
            infeasible_fraction: rate(infeasible),
            setup_seconds: setup,
            wall_seconds: wall,
            feasible_samples_per_second: if wall > 0.0 { (proposals - infeasible) as f64 / wall } else { 0.0 },
        },
        traces,
        steps,
        occupancy_mean: chain.occupancy_mean(),
    })
}
