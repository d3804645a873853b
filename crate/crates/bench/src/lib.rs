//! Shared fixtures for the criterion benchmarks in `benches/`.

use arc_lab::actdist::{compute_matrix, ActionableDistanceMatrix, ExpectationMode, KlMode, DEFAULT_OP_BUDGET};
use arc_lab::gridworld::{build_four_rooms, GridMdp};
use arc_lab::softgcp::{SoftGoalPolicy, SoftViParams};

pub fn four_rooms(side: usize) -> GridMdp {
    build_four_rooms(side, side).expect("valid four-rooms size")
}

pub fn policy(mdp: &GridMdp) -> SoftGoalPolicy {
    SoftGoalPolicy::solve(mdp, SoftViParams::default()).expect("soft VI converges")
}

pub fn exact_matrix(policy: &SoftGoalPolicy) -> ActionableDistanceMatrix {
    compute_matrix(policy, &ExpectationMode::ExactAllStates, KlMode::Symmetric, DEFAULT_OP_BUDGET)
        .expect("within the op budget")
}
