//! Two-square cat and mouse model.
//!
//! States: left-cat, right-cat, left-mouse, right-mouse. Actions: move, stay.
//! Cats move or stay with probability 0.5; a mouse moves exactly when a cat
//! shares its square and stays otherwise.

use crate::abm::{AbmSpec, BoundaryConditions, Observation, StartState};
use crate::support::OccupancyConstraint;

pub const LEFT_CAT: usize = 0;
pub const RIGHT_CAT: usize = 1;
pub const LEFT_MOUSE: usize = 2;
pub const RIGHT_MOUSE: usize = 3;

pub const MOVE: usize = 0;
pub const STAY: usize = 1;

/// Cat sharing the square of the given mouse state.
fn predator_of(mouse: usize) -> usize {
    mouse - 2
}

fn timestep(psi: usize, occ: &[i64], a: usize) -> f64 {
    match psi {
        LEFT_CAT | RIGHT_CAT => 0.5,
        _ => {
            let cat_present = occ[predator_of(psi)] > 0;
            match (cat_present, a) {
                (true, MOVE) | (false, STAY) => 1.0,
                _ => 0.0,
            }
        }
    }
}

fn effect(psi: usize, a: usize) -> Vec<(usize, i64)> {
    // move flips the square, stay keeps it
    let target = match a {
        MOVE => psi ^ 1,
        _ => psi,
    };
    vec![(target, 1)]
}

fn support(psi: usize, a: usize) -> Vec<OccupancyConstraint> {
    if psi < 2 {
        return Vec::new();
    }
    let cat = predator_of(psi);
    match a {
        // moving needs a cat on the square
        MOVE => vec![OccupancyConstraint::at_most(vec![(cat, -1)], -1)],
        // staying needs no cat
        _ => vec![OccupancyConstraint::at_most(vec![(cat, 1)], 0)],
    }
}

pub fn spec() -> AbmSpec {
    AbmSpec::new(4, 2, timestep, effect)
        .with_context(vec![vec![], vec![], vec![LEFT_CAT], vec![RIGHT_CAT]])
        .with_action_support(support)
}

/// Fair coin per state at `t = 0`.
pub fn boundary() -> BoundaryConditions {
    BoundaryConditions::new(StartState::bernoulli(4, 0.5))
}

/// A cat is seen in the left square at `t = 1`.
pub fn left_cat_observation() -> Vec<Observation> {
    vec![Observation::count(1, vec![LEFT_CAT], 1)]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn action_function_table() {
        let s = spec();
        assert_eq!(s.effect_dense(1, 0), vec![1, 0, 0, 0]);
        assert_eq!(s.effect_dense(0, 0), vec![0, 1, 0, 0]);
        assert_eq!(s.effect_dense(2, 0), vec![0, 0, 0, 1]);
        assert_eq!(s.effect_dense(3, 0), vec![0, 0, 1, 0]);
        for psi in 0..4 {
            let mut stay = vec![0; 4];
            stay[psi] = 1;
            assert_eq!(s.effect_dense(psi, 1), stay);
        }
    }

    #[test]
    fn timestep_values() {
        let s = spec();
        assert_eq!(s.timestep(2, &[0, 0, 1, 0], STAY), 1.0);
        assert_eq!(s.timestep(2, &[0, 0, 1, 0], MOVE), 0.0);
        assert_eq!(s.timestep(2, &[1, 0, 1, 0], MOVE), 1.0);
        assert_eq!(s.timestep(3, &[0, 1, 0, 1], MOVE), 1.0);
        for occ in [[0, 0, 0, 0], [3, 1, 0, 2]] {
            assert_eq!(s.timestep(0, &occ, MOVE), 0.5);
            assert_eq!(s.timestep(1, &occ, STAY), 0.5);
        }
    }

    #[test]
    fn timestep_normalized() {
        let s = spec();
        for psi in 0..4 {
            for occ in [[0, 0, 1, 1], [1, 1, 1, 1], [1, 0, 1, 1], [0, 2, 1, 1]] {
                let total: f64 = (0..2).map(|a| s.timestep(psi, &occ, a)).sum();
                assert_eq!(total, 1.0);
            }
        }
    }
}
