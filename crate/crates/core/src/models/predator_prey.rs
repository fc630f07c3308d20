//! Spatial predator-prey model on a torus.
//!
//! Agent state is `(species, cell)`; actions are a move to one of the four
//! adjacent cells, a birth onto one of them, or death. Behaviour depends on
//! whether an agent of the other species occupies an adjacent cell at the
//! start of the timestep. Aggregate move and birth probabilities are split
//! evenly over the four directions.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::abm::{simulate, AbmSpec, BoundaryConditions, Observation, StartState, Trajectory, NORMALIZATION_TOL};
use crate::error::{Error, Result};
use crate::support::OccupancyConstraint;

pub const PREDATOR: usize = 0;
pub const PREY: usize = 1;

/// Number of actions: four moves, four births, death.
pub const NUM_ACTIONS: usize = 9;
pub const DIE: usize = 8;

/// Up, down, left, right as `(dx, dy)`.
pub const DIRECTIONS: [(i64, i64); 4] = [(0, -1), (0, 1), (-1, 0), (1, 0)];

pub fn move_action(direction: usize) -> usize {
    direction
}

pub fn birth_action(direction: usize) -> usize {
    4 + direction
}

/// Aggregate probabilities of one behaviour row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Behaviour {
    pub die: f64,
    pub birth: f64,
    pub r#move: f64,
}

impl Behaviour {
    pub const fn new(die: f64, birth: f64, r#move: f64) -> Self {
        Behaviour { die, birth, r#move }
    }

    /// Probability of action `a`, with moves and births split over the four
    /// directions.
    pub fn action_prob(&self, a: usize) -> f64 {
        match a {
            0..4 => self.r#move / 4.0,
            4..8 => self.birth / 4.0,
            _ => self.die,
        }
    }
}

/// Behaviour per species and adjacency condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BehaviourTable {
    pub prey_alone: Behaviour,
    pub prey_threatened: Behaviour,
    pub predator_hungry: Behaviour,
    pub predator_fed: Behaviour,
}

impl Default for BehaviourTable {
    fn default() -> Self {
        BehaviourTable {
            prey_alone: Behaviour::new(0.1, 0.156, 0.744),
            prey_threatened: Behaviour::new(0.4, 0.156, 0.444),
            predator_hungry: Behaviour::new(0.1, 0.0, 0.9),
            predator_fed: Behaviour::new(0.1, 0.3, 0.6),
        }
    }
}

impl BehaviourTable {
    fn rows(&self) -> [(&'static str, Behaviour); 4] {
        [
            ("prey without adjacent predators", self.prey_alone),
            ("prey with adjacent predators", self.prey_threatened),
            ("predator without adjacent prey", self.predator_hungry),
            ("predator with adjacent prey", self.predator_fed),
        ]
    }

    /// Row for a species given whether the other species is adjacent.
    pub fn row(&self, species: usize, other_adjacent: bool) -> Behaviour {
        match (species, other_adjacent) {
            (PREY, false) => self.prey_alone,
            (PREY, true) => self.prey_threatened,
            (_, false) => self.predator_hungry,
            (_, true) => self.predator_fed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredatorPreyParams {
    pub grid_width: usize,
    pub grid_height: usize,
    pub behaviour: BehaviourTable,
    /// Per-state Bernoulli probability at `t = 0`.
    pub start_prob: f64,
    /// Per-(time, cell, species) probability of an observation.
    pub obs_prob: f64,
    pub steps: usize,
}

impl Default for PredatorPreyParams {
    fn default() -> Self {
        PredatorPreyParams {
            grid_width: 32,
            grid_height: 32,
            behaviour: BehaviourTable::default(),
            start_prob: 0.05,
            obs_prob: 0.05,
            steps: 16,
        }
    }
}

impl PredatorPreyParams {
    pub fn validate(&self) -> Result<()> {
        if self.grid_width == 0 || self.grid_height == 0 || self.steps == 0 {
            return Err(Error::Config("grid dimensions and step count must be positive".into()));
        }
        for (name, b) in self.behaviour.rows() {
            let total = b.die + b.birth + b.r#move;
            if (total - 1.0).abs() > NORMALIZATION_TOL || b.die < 0.0 || b.birth < 0.0 || b.r#move < 0.0 {
                return Err(Error::Config(format!("behaviour of {name} sums to {total}, expected 1")));
            }
        }
        for (name, p) in [("start", self.start_prob), ("observation", self.obs_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} probability {p} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Grid geometry and state numbering: `ψ = species·W·H + y·W + x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid {
    pub width: usize,
    pub height: usize,
}

impl Grid {
    pub fn cells(&self) -> usize {
        self.width * self.height
    }

    pub fn num_states(&self) -> usize {
        2 * self.cells()
    }

    pub fn state(&self, species: usize, x: usize, y: usize) -> usize {
        species * self.cells() + y * self.width + x
    }

    /// `(species, x, y)` of a state.
    pub fn locate(&self, psi: usize) -> (usize, usize, usize) {
        let c = psi % self.cells();
        (psi / self.cells(), c % self.width, c / self.width)
    }

    /// Cell reached from `(x, y)` in a direction, wrapping at the edges.
    pub fn step(&self, x: usize, y: usize, direction: usize) -> (usize, usize) {
        let (dx, dy) = DIRECTIONS[direction];
        let w = self.width as i64;
        let h = self.height as i64;
        (((x as i64 + dx).rem_euclid(w)) as usize, ((y as i64 + dy).rem_euclid(h)) as usize)
    }

    /// States of `species` in the four cells adjacent to that of `psi`.
    pub fn adjacent(&self, psi: usize, species: usize) -> [usize; 4] {
        let (_, x, y) = self.locate(psi);
        std::array::from_fn(|d| {
            let (nx, ny) = self.step(x, y, d);
            self.state(species, nx, ny)
        })
    }

    /// Both species' states in a cell.
    pub fn states_in_cell(&self, x: usize, y: usize) -> Vec<usize> {
        vec![self.state(PREDATOR, x, y), self.state(PREY, x, y)]
    }

    pub fn species_name(species: usize) -> &'static str {
        if species == PREDATOR {
            "predator"
        } else {
            "prey"
        }
    }
}

/// Builds the model and its Bernoulli start state.
pub fn build(params: &PredatorPreyParams) -> Result<(AbmSpec, BoundaryConditions, Grid)> {
    params.validate()?;
    let grid = Grid { width: params.grid_width, height: params.grid_height };
    let table = params.behaviour;
    let timestep = move |psi: usize, occ: &[i64], a: usize| {
        let (species, _, _) = grid.locate(psi);
        let other = 1 - species;
        let adjacent = grid.adjacent(psi, other).iter().any(|&s| occ[s] > 0);
        table.row(species, adjacent).action_prob(a)
    };
    let effect = move |psi: usize, a: usize| {
        let (species, x, y) = grid.locate(psi);
        match a {
            0..4 => {
                let (nx, ny) = grid.step(x, y, a);
                vec![(grid.state(species, nx, ny), 1)]
            }
            4..8 => {
                let (nx, ny) = grid.step(x, y, a - 4);
                vec![(psi, 1), (grid.state(species, nx, ny), 1)]
            }
            _ => Vec::new(),
        }
    };
    let context = (0..grid.num_states())
        .map(|psi| {
            let mut c = grid.adjacent(psi, 1 - grid.locate(psi).0).to_vec();
            c.sort_unstable();
            c.dedup();
            c
        })
        .collect();
    let hungry_birth_impossible = table.predator_hungry.birth == 0.0;
    let support = move |psi: usize, a: usize| {
        let (species, _, _) = grid.locate(psi);
        if species == PREDATOR && (4..8).contains(&a) && hungry_birth_impossible {
            let coeffs = grid.adjacent(psi, PREY).iter().map(|&s| (s, 1)).collect();
            vec![OccupancyConstraint::at_least(coeffs, 1)]
        } else {
            Vec::new()
        }
    };
    let spec = AbmSpec::new(grid.num_states(), NUM_ACTIONS, timestep, effect)
        .with_context(context)
        .with_action_support(support);
    let bc = BoundaryConditions::new(StartState::bernoulli(grid.num_states(), params.start_prob));
    Ok((spec, bc, grid))
}

/// Default cap on whole-trajectory redraws while waiting for a Fermionic one.
pub const DEFAULT_RETRY_CAP: usize = 100_000;

/// Draws a "real" trajectory (redrawn until Fermionic when requested) and
/// noiseless count observations: for each timestep `t < N` and state, with
/// probability `q` the count in that state at the start of `t` is observed.
pub fn generate_observations<R: Rng + ?Sized>(
    spec: &AbmSpec,
    bc: &BoundaryConditions,
    steps: usize,
    q: f64,
    rng: &mut R,
    fermionic_retry: bool,
    retry_cap: usize,
) -> Result<(Trajectory, Vec<Observation>)> {
    if !(0.0..1.0).contains(&q) {
        return Err(Error::Config(format!("observation probability {q} outside [0, 1)")));
    }
    let mut attempts = 0;
    let real = loop {
        let traj = simulate(spec, bc, steps, rng)?;
        if !fermionic_retry || traj.is_fermionic() {
            break traj;
        }
        attempts += 1;
        if attempts >= retry_cap {
            return Err(Error::RetryCapExceeded(attempts));
        }
    };
    let mut observations = Vec::new();
    for t in 0..steps {
        let occ = real.occupancy_at(t);
        for (psi, &count) in occ.iter().enumerate() {
            if rng.random::<f64>() < q {
                observations.push(Observation::count(t, vec![psi], count));
            }
        }
    }
    Ok((real, observations))
}

#[derive(Debug, Serialize, Deserialize)]
struct ObservationRow {
    t: usize,
    x: usize,
    y: usize,
    species: String,
    count: i64,
}

/// Observation CSV `t,x,y,species,count`. Only single-state count
/// observations can be written.
pub fn write_observations<W: Write>(grid: &Grid, observations: &[Observation], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for o in observations {
        let [psi] = o.states[..] else {
            return Err(Error::Config("only single-state observations can be serialized".into()));
        };
        let (species, x, y) = grid.locate(psi);
        w.serialize(ObservationRow { t: o.time, x, y, species: Grid::species_name(species).into(), count: o.value })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_observations<R: Read>(grid: &Grid, input: R) -> Result<Vec<Observation>> {
    let mut r = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for row in r.deserialize() {
        let row: ObservationRow = row?;
        let species = match row.species.as_str() {
            "predator" => PREDATOR,
            "prey" => PREY,
            other => return Err(Error::Config(format!("unknown species {other:?}"))),
        };
        if row.x >= grid.width || row.y >= grid.height {
            return Err(Error::Config(format!("observation cell ({}, {}) outside the grid", row.x, row.y)));
        }
        out.push(Observation::count(row.t, vec![grid.state(species, row.x, row.y)], row.count));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abm::{posterior_log_prob, state_after};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> PredatorPreyParams {
        PredatorPreyParams { grid_width: 8, grid_height: 8, steps: 4, ..PredatorPreyParams::default() }
    }

    #[test]
    fn table_rows() {
        let t = BehaviourTable::default();
        assert_eq!(t.row(PREY, true), Behaviour::new(0.4, 0.156, 0.444));
        assert_eq!(t.row(PREDATOR, false).birth, 0.0);
        assert!((t.row(PREY, false).action_prob(move_action(0)) - 0.186).abs() < 1e-15);
    }

    #[test]
    fn torus_wraps() {
        let g = Grid { width: 8, height: 4 };
        assert_eq!(g.step(0, 2, 2), (7, 2));
        assert_eq!(g.step(7, 2, 3), (0, 2));
        assert_eq!(g.step(3, 0, 0), (3, 3));
        assert_eq!(g.locate(g.state(PREY, 5, 3)), (PREY, 5, 3));
    }

    #[test]
    fn timestep_follows_adjacency() {
        let (spec, _, g) = build(&small()).unwrap();
        let mut occ = vec![0; g.num_states()];
        let prey = g.state(PREY, 2, 2);
        occ[prey] = 1;
        let die = |occ: &[i64]| spec.timestep(prey, occ, DIE);
        assert_eq!(die(&occ), 0.1);
        occ[g.state(PREDATOR, 3, 2)] = 1;
        assert_eq!(die(&occ), 0.4);
        let pred = g.state(PREDATOR, 3, 2);
        assert_eq!(spec.timestep(pred, &occ, birth_action(2)), 0.075);
        occ[prey] = 0;
        assert_eq!(spec.timestep(pred, &occ, birth_action(2)), 0.0);
    }

    #[test]
    fn effects() {
        let (spec, _, g) = build(&small()).unwrap();
        let psi = g.state(PREDATOR, 0, 0);
        assert_eq!(spec.effect(psi, move_action(2)), &[(g.state(PREDATOR, 7, 0), 1)]);
        let mut birth = spec.effect(psi, birth_action(1)).to_vec();
        birth.sort();
        assert_eq!(birth, vec![(psi, 1), (g.state(PREDATOR, 0, 1), 1)]);
        assert!(spec.effect(psi, DIE).is_empty());
    }

    #[test]
    fn timestep_normalized_on_random_contexts() {
        let (spec, _, g) = build(&small()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10_000 {
            let occ: Vec<i64> = (0..g.num_states()).map(|_| i64::from(rng.random::<f64>() < 0.2)).collect();
            let psi = rng.random_range(0..g.num_states());
            let total: f64 = (0..NUM_ACTIONS).map(|a| spec.timestep(psi, &occ, a)).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn birth_support_matches_rates() {
        let (spec, _, g) = build(&small()).unwrap();
        let pred = g.state(PREDATOR, 4, 4);
        let cons = spec.action_support(pred, birth_action(0));
        assert_eq!(cons.len(), 1);
        let mut occ = vec![0; g.num_states()];
        assert!(!cons[0].is_satisfied(&occ));
        occ[g.state(PREY, 4, 5)] = 1;
        assert!(cons[0].is_satisfied(&occ));
        assert!(spec.action_support(pred, DIE).is_empty());
        assert!(spec.action_support(g.state(PREY, 1, 1), birth_action(0)).is_empty());
    }

    #[test]
    fn observations_are_noiseless_and_reproducible() {
        let (spec, bc, _) = build(&small()).unwrap();
        let draw = || {
            let mut rng = ChaCha8Rng::seed_from_u64(31);
            generate_observations(&spec, &bc, 4, 0.05, &mut rng, true, DEFAULT_RETRY_CAP).unwrap()
        };
        let (real, obs) = draw();
        assert!(real.is_fermionic());
        for o in &obs {
            assert_eq!(o.statistic(&spec, &real, &bc), o.value);
            assert_eq!(real.occupancy_at(o.time)[o.states[0]], o.value);
            if o.time > 0 {
                assert_eq!(state_after(&spec, &real, &bc, o.time)[o.states[0]], o.value);
            }
        }
        assert!(posterior_log_prob(&spec, &real, &obs, &bc).is_finite());
        let (real2, obs2) = draw();
        assert_eq!(real, real2);
        assert_eq!(obs.iter().map(|o| (o.time, o.value)).collect::<Vec<_>>(), obs2.iter().map(|o| (o.time, o.value)).collect::<Vec<_>>());
    }

    #[test]
    fn observation_rate_and_zero_probability() {
        let (spec, bc, g) = build(&small()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (_, none) = generate_observations(&spec, &bc, 4, 0.0, &mut rng, false, 1).unwrap();
        assert!(none.is_empty());
        let mut total = 0;
        for _ in 0..50 {
            total += generate_observations(&spec, &bc, 4, 0.05, &mut rng, false, 1).unwrap().1.len();
        }
        // mean 2·N·cells·q = 25.6 per draw; sd of the 50-draw mean ≈ 0.7
        let mean = total as f64 / 50.0;
        let expected = 2.0 * 4.0 * g.cells() as f64 * 0.05;
        assert!((mean - expected).abs() < 3.0, "{mean}");
    }

    #[test]
    fn observation_csv_round_trip() {
        let g = Grid { width: 4, height: 3 };
        let obs = vec![Observation::count(2, vec![g.state(PREY, 3, 1)], 1), Observation::count(0, vec![g.state(PREDATOR, 0, 2)], 0)];
        let mut buf = Vec::new();
        write_observations(&g, &obs, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text, "t,x,y,species,count\n2,3,1,prey,1\n0,0,2,predator,0\n");
        let back = read_observations(&g, &buf[..]).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!((back[0].states.clone(), back[0].value), (obs[0].states.clone(), 1));
        assert!(read_observations(&g, "t,x,y,species,count\n0,9,0,prey,1\n".as_bytes()).is_err());
    }

    #[test]
    fn invalid_params_rejected() {
        let mut p = small();
        p.behaviour.prey_alone.die = 0.5;
        assert!(p.validate().is_err());
    }
}
