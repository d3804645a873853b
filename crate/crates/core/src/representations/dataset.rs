use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridworld::{ActionId, GridMdp, StateId};
use crate::hashing::content_hash;
use crate::rng::Rng;
use crate::softgcp::{rollout, SoftGoalPolicy, Trajectory};

/// Fraction of trajectories held out for validation.
pub const VALIDATION_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSource {
    pub alpha: f64,
    pub gamma: f64,
    pub env_hash: String,
    pub n_traj: usize,
    pub horizon: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transition {
    pub state: StateId,
    pub action: ActionId,
    pub next: StateId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryDataset {
    pub trajectories: Vec<Trajectory>,
    /// Parallel to `trajectories`.
    pub validation: Vec<bool>,
    pub source: DatasetSource,
    hash: String,
}

/// Rolls out the soft policy from uniformly drawn `(start, goal)` pairs.
pub fn collect_dataset(
    policy: &SoftGoalPolicy,
    mdp: &GridMdp,
    n_traj: usize,
    horizon: usize,
    seed: u64,
) -> Result<TrajectoryDataset> {
    if n_traj == 0 {
        return Err(Error::InvalidParameter("n_traj must be at least 1".into()));
    }
    let mut rng = Rng::new(seed);
    let n = mdp.num_states();
    let mut trajectories = Vec::with_capacity(n_traj);
    for _ in 0..n_traj {
        let s0 = StateId(rng.below(n));
        let g = StateId(rng.below(n));
        trajectories.push(rollout(policy, mdp, s0, g, horizon, &mut rng)?);
    }
    let mut order: Vec<usize> = (0..n_traj).collect();
    rng.shuffle(&mut order);
    let n_val = (VALIDATION_FRACTION * n_traj as f64).round() as usize;
    let mut validation = vec![false; n_traj];
    for &i in &order[..n_val] {
        validation[i] = true;
    }
    let params = policy.params();
    TrajectoryDataset::new(
        trajectories,
        validation,
        DatasetSource {
            alpha: params.alpha,
            gamma: params.gamma,
            env_hash: mdp.env_hash().to_string(),
            n_traj,
            horizon,
            seed,
        },
    )
}

impl TrajectoryDataset {
    pub fn new(trajectories: Vec<Trajectory>, validation: Vec<bool>, source: DatasetSource) -> Result<Self> {
        if validation.len() != trajectories.len() {
            return Err(Error::DimensionMismatch {
                expected: trajectories.len(),
                got: validation.len(),
            });
        }
        let hash = content_hash(&(&trajectories, &validation, &source))?;
        Ok(Self {
            trajectories,
            validation,
            source,
            hash,
        })
    }

    /// Content hash; every report trained on this dataset records it.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    fn in_split(&self, i: usize, split: Split) -> bool {
        match split {
            Split::All => true,
            Split::Train => !self.validation[i],
            Split::Validation => self.validation[i],
        }
    }

    pub fn trajectories_in(&self, split: Split) -> impl Iterator<Item = &Trajectory> {
        self.trajectories
            .iter()
            .enumerate()
            .filter(move |(i, _)| self.in_split(*i, split))
            .map(|(_, t)| t)
    }

    pub fn transitions(&self, split: Split) -> Vec<Transition> {
        self.trajectories_in(split)
            .flat_map(|t| {
                t.actions.iter().enumerate().map(|(k, &a)| Transition {
                    state: t.states[k],
                    action: a,
                    next: t.states[k + 1],
                })
            })
            .collect()
    }

    /// Distinct visited states, sorted.
    pub fn states(&self, split: Split) -> Vec<StateId> {
        let mut v: Vec<StateId> = self.trajectories_in(split).flat_map(|t| t.states.iter().copied()).collect();
        v.sort();
        v.dedup();
        v
    }

    /// Checks every transition against the environment.
    pub fn validate(&self, mdp: &GridMdp) -> Result<()> {
        for t in self.transitions(Split::All) {
            if mdp.transition(t.state, t.action)? != t.next {
                return Err(Error::InvalidEnvironment(format!(
                    "transition {:?} --{:?}--> {:?} disagrees with the environment",
                    t.state, t.action, t.next
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::build_wall_world;
    use crate::softgcp::SoftViParams;

    fn wall() -> (GridMdp, SoftGoalPolicy) {
        let mdp = build_wall_world(7, 7, 3).unwrap();
        let policy = SoftGoalPolicy::solve(&mdp, SoftViParams::default()).unwrap();
        (mdp, policy)
    }

    #[test]
    fn single_empty_trajectory() {
        let (mdp, policy) = wall();
        let ds = collect_dataset(&policy, &mdp, 1, 0, 3).unwrap();
        assert_eq!(ds.states(Split::All).len(), 1);
        assert!(ds.transitions(Split::All).is_empty());
        assert!(collect_dataset(&policy, &mdp, 0, 10, 3).is_err());
    }

    #[test]
    fn defaults_cover_wall_world_and_hold_out_a_fifth() {
        let (mdp, policy) = wall();
        let ds = collect_dataset(&policy, &mdp, 500, 100, 11).unwrap();
        ds.validate(&mdp).unwrap();
        assert_eq!(ds.states(Split::All).len(), mdp.num_states());
        assert_eq!(ds.validation.iter().filter(|&&v| v).count(), 100);
    }

    #[test]
    fn deterministic_given_seed() {
        let (mdp, policy) = wall();
        let a = collect_dataset(&policy, &mdp, 40, 30, 5).unwrap();
        let b = collect_dataset(&policy, &mdp, 40, 30, 5).unwrap();
        let c = collect_dataset(&policy, &mdp, 40, 30, 6).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn tampered_transition_detected() {
        let (mdp, policy) = wall();
        let mut ds = collect_dataset(&policy, &mdp, 5, 20, 2).unwrap();
        let t = ds.trajectories.iter_mut().find(|t| !t.is_empty()).unwrap();
        let s0 = t.states[0];
        let a = (0..4).map(ActionId).find(|&a| mdp.step(s0, a) != s0).unwrap();
        t.actions[0] = a;
        t.states[1] = s0;
        assert!(ds.validate(&mdp).is_err());
    }
}
