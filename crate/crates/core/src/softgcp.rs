//! Exact maximum-entropy goal-conditioned policies by soft value iteration.
//!
//! Every goal gets its own stochastic-shortest-path problem: each step costs
//! `step_reward` (default −1) and the goal is absorbing with value
//! `goal_reward` (default 0). Backups are
//!
//! ```text
//! Q(s, a) = r + γ·V(s')        V(s) = α·log Σ_a exp(Q(s, a) / α)
//! ```
//!
//! iterated synchronously from `V = 0` until the sup-norm change drops below
//! `tol`. The resulting policy `π(a|s,g) = exp((Q − V) / α)` is strictly
//! positive; at `s = g` it is uniform by convention.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridworld::{ActionId, DeterministicMdp, GridMdp, StateId};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftViParams {
    /// Entropy temperature.
    pub alpha: f64,
    pub gamma: f64,
    pub tol: f64,
    pub max_iters: usize,
    pub step_reward: f64,
    /// Value held fixed at the absorbing goal.
    pub goal_reward: f64,
}

impl Default for SoftViParams {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            gamma: 0.95,
            tol: 1e-9,
            max_iters: 100_000,
            step_reward: -1.0,
            goal_reward: 0.0,
        }
    }
}

impl SoftViParams {
    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "temperature must be positive, got {}",
                self.alpha
            )));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "discount must lie in (0, 1), got {}",
                self.gamma
            )));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidParameter("tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// Soft Q and V tables for one goal, plus the induced policy.
#[derive(Debug, Clone, PartialEq)]
pub struct GoalTables {
    pub goal: usize,
    /// `|S| x |A|`, row-major.
    pub q: Vec<f64>,
    pub v: Vec<f64>,
    /// `π(a|s, goal)`, row-major; the goal row is uniform.
    pub policy: Vec<f64>,
    pub log_policy: Vec<f64>,
    pub iterations: usize,
}

#[inline]
fn logsumexp_scaled(q: &[f64], alpha: f64) -> f64 {
    let m = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = q.iter().map(|&x| ((x - m) / alpha).exp()).sum();
    m + alpha * s.ln()
}

fn check_goal<M: DeterministicMdp>(mdp: &M, goal: usize) -> Result<()> {
    if goal >= mdp.num_states() {
        return Err(Error::StateOutOfRange {
            index: goal,
            num_states: mdp.num_states(),
        });
    }
    Ok(())
}

/// Solves the soft Bellman fixed point for `goal` starting from `V = 0`.
pub fn soft_value_iteration<M: DeterministicMdp>(
    mdp: &M,
    goal: usize,
    params: &SoftViParams,
) -> Result<GoalTables> {
    soft_value_iteration_from(mdp, goal, params, vec![0.0; mdp.num_states()])
}

/// Same as [`soft_value_iteration`] from an arbitrary initial `V`.
pub fn soft_value_iteration_from<M: DeterministicMdp>(
    mdp: &M,
    goal: usize,
    params: &SoftViParams,
    mut v: Vec<f64>,
) -> Result<GoalTables> {
    params.validate()?;
    check_goal(mdp, goal)?;
    let ns = mdp.num_states();
    let na = mdp.num_actions();
    if v.len() != ns {
        return Err(Error::DimensionMismatch {
            expected: ns,
            got: v.len(),
        });
    }
    v[goal] = params.goal_reward;
    let mut next_v = v.clone();
    let mut q_row = vec![0.0; na];
    let mut residual = f64::INFINITY;
    for iter in 1..=params.max_iters {
        residual = 0.0;
        for s in 0..ns {
            if s == goal {
                continue;
            }
            for (a, q) in q_row.iter_mut().enumerate() {
                *q = params.step_reward + params.gamma * v[mdp.next_state(s, a)];
            }
            let nv = logsumexp_scaled(&q_row, params.alpha);
            residual = f64::max(residual, (nv - v[s]).abs());
            next_v[s] = nv;
        }
        std::mem::swap(&mut v, &mut next_v);
        if !residual.is_finite() {
            break;
        }
        if residual < params.tol {
            return Ok(tables_from_values(mdp, goal, params, v, iter));
        }
    }
    Err(Error::NonConvergence {
        goal,
        iters: params.max_iters,
        residual,
    })
}

fn tables_from_values<M: DeterministicMdp>(
    mdp: &M,
    goal: usize,
    params: &SoftViParams,
    v: Vec<f64>,
    iterations: usize,
) -> GoalTables {
    let ns = mdp.num_states();
    let na = mdp.num_actions();
    let mut q = vec![0.0; ns * na];
    let mut policy = vec![0.0; ns * na];
    let mut log_policy = vec![0.0; ns * na];
    let uniform = 1.0 / na as f64;
    for s in 0..ns {
        let row = s * na..(s + 1) * na;
        for a in 0..na {
            q[s * na + a] = params.step_reward + params.gamma * v[mdp.next_state(s, a)];
        }
        if s == goal {
            policy[row.clone()].fill(uniform);
            log_policy[row].fill(uniform.ln());
            continue;
        }
        // Normalize against the row's own log-sum-exp so rows sum to one even
        // though V(s) is only a tol-accurate fixed point.
        let lse = logsumexp_scaled(&q[row.clone()], params.alpha);
        for a in 0..na {
            let lp = (q[s * na + a] - lse) / params.alpha;
            log_policy[s * na + a] = lp;
            policy[s * na + a] = lp.exp();
        }
    }
    GoalTables {
        goal,
        q,
        v,
        policy,
        log_policy,
        iterations,
    }
}

/// Largest violation of the soft Bellman equations over non-goal states:
/// `|V(s) − α·logsumexp(Q(s,·)/α)|` and `|Q(s,a) − r − γ·V(s')|`.
pub fn bellman_residual<M: DeterministicMdp>(
    mdp: &M,
    params: &SoftViParams,
    tables: &GoalTables,
) -> f64 {
    let na = mdp.num_actions();
    let mut worst: f64 = 0.0;
    for s in 0..mdp.num_states() {
        if s == tables.goal {
            worst = worst.max((tables.v[s] - params.goal_reward).abs());
            continue;
        }
        let row = &tables.q[s * na..(s + 1) * na];
        for (a, &q) in row.iter().enumerate() {
            let target = params.step_reward + params.gamma * tables.v[mdp.next_state(s, a)];
            worst = worst.max((q - target).abs());
        }
        worst = worst.max((tables.v[s] - logsumexp_scaled(row, params.alpha)).abs());
    }
    worst
}

/// Soft tables for a set of goals on one environment.
#[derive(Debug, Clone)]
pub struct SoftGoalPolicy {
    params: SoftViParams,
    num_states: usize,
    num_actions: usize,
    env_hash: String,
    tables: Vec<Option<GoalTables>>,
}

impl SoftGoalPolicy {
    /// Solves every goal of `mdp` (in parallel; each goal is independent).
    pub fn solve(mdp: &GridMdp, params: SoftViParams) -> Result<Self> {
        let goals: Vec<StateId> = mdp.states().collect();
        Self::solve_goals(mdp, params, &goals)
    }

    pub fn solve_goals(mdp: &GridMdp, params: SoftViParams, goals: &[StateId]) -> Result<Self> {
        params.validate()?;
        let solved: Vec<GoalTables> = goals
            .par_iter()
            .map(|g| soft_value_iteration(mdp, g.0, &params))
            .collect::<Result<_>>()?;
        let mut tables = vec![None; mdp.num_states()];
        for t in solved {
            let g = t.goal;
            tables[g] = Some(t);
        }
        Ok(Self {
            params,
            num_states: mdp.num_states(),
            num_actions: mdp.num_actions(),
            env_hash: mdp.env_hash().to_string(),
            tables,
        })
    }

    /// Rebuilds tables from persisted value vectors.
    pub fn from_values(mdp: &GridMdp, params: SoftViParams, values: Vec<(usize, Vec<f64>)>) -> Result<Self> {
        params.validate()?;
        let mut tables = vec![None; mdp.num_states()];
        for (goal, v) in values {
            check_goal(mdp, goal)?;
            if v.len() != mdp.num_states() {
                return Err(Error::DimensionMismatch {
                    expected: mdp.num_states(),
                    got: v.len(),
                });
            }
            tables[goal] = Some(tables_from_values(mdp, goal, &params, v, 0));
        }
        Ok(Self {
            params,
            num_states: mdp.num_states(),
            num_actions: mdp.num_actions(),
            env_hash: mdp.env_hash().to_string(),
            tables,
        })
    }

    pub fn params(&self) -> &SoftViParams {
        &self.params
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn env_hash(&self) -> &str {
        &self.env_hash
    }

    pub fn goals(&self) -> impl Iterator<Item = StateId> + '_ {
        self.tables
            .iter()
            .enumerate()
            .filter(|(_, t)| t.is_some())
            .map(|(g, _)| StateId(g))
    }

    pub fn tables(&self, goal: StateId) -> Result<&GoalTables> {
        self.tables
            .get(goal.0)
            .and_then(Option::as_ref)
            .ok_or(Error::MissingGoal(goal.0))
    }

    pub fn value(&self, s: StateId, g: StateId) -> Result<f64> {
        Ok(self.tables(g)?.v[s.0])
    }

    /// `π(·|s, g)`.
    pub fn action_distribution(&self, s: StateId, g: StateId) -> Result<&[f64]> {
        if s.0 >= self.num_states {
            return Err(Error::StateOutOfRange {
                index: s.0,
                num_states: self.num_states,
            });
        }
        let na = self.num_actions;
        Ok(&self.tables(g)?.policy[s.0 * na..(s.0 + 1) * na])
    }

    pub fn log_action_distribution(&self, s: StateId, g: StateId) -> Result<&[f64]> {
        let na = self.num_actions;
        Ok(&self.tables(g)?.log_policy[s.0 * na..(s.0 + 1) * na])
    }

    /// Shannon entropy (nats) of `π(·|s, g)`.
    pub fn entropy(&self, s: StateId, g: StateId) -> Result<f64> {
        let p = self.action_distribution(s, g)?;
        let lp = self.log_action_distribution(s, g)?;
        Ok(-p.iter().zip(lp).map(|(p, l)| p * l).sum::<f64>())
    }

    pub fn max_bellman_residual(&self, mdp: &GridMdp) -> f64 {
        self.tables
            .iter()
            .flatten()
            .map(|t| bellman_residual(mdp, &self.params, t))
            .fold(0.0, f64::max)
    }

    pub fn to_artifact(&self) -> PolicyArtifact {
        PolicyArtifact {
            version: POLICY_ARTIFACT_VERSION,
            env_hash: self.env_hash.clone(),
            params: self.params,
            num_states: self.num_states,
            num_actions: self.num_actions,
            values: self
                .tables
                .iter()
                .flatten()
                .map(|t| GoalValues {
                    goal: t.goal,
                    v: t.v.clone(),
                })
                .collect(),
        }
    }

    pub fn from_artifact(mdp: &GridMdp, artifact: PolicyArtifact) -> Result<Self> {
        if artifact.version != POLICY_ARTIFACT_VERSION {
            return Err(Error::Config(format!(
                "policy artifact version {} unsupported",
                artifact.version
            )));
        }
        if artifact.env_hash != mdp.env_hash() {
            return Err(Error::Config(
                "policy artifact was computed for a different environment".into(),
            ));
        }
        Self::from_values(
            mdp,
            artifact.params,
            artifact.values.into_iter().map(|g| (g.goal, g.v)).collect(),
        )
    }
}

pub const POLICY_ARTIFACT_VERSION: u32 = 1;

/// Persisted form of a [`SoftGoalPolicy`]: the value vectors, from which Q
/// and π are recomputed exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyArtifact {
    pub version: u32,
    pub env_hash: String,
    pub params: SoftViParams,
    pub num_states: usize,
    pub num_actions: usize,
    pub values: Vec<GoalValues>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalValues {
    pub goal: usize,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<StateId>,
    pub actions: Vec<ActionId>,
    pub goal: StateId,
    pub reached: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Samples actions from `π(·|s, g)` for at most `horizon` steps, stopping as
/// soon as the goal is reached.
pub fn rollout(
    policy: &SoftGoalPolicy,
    mdp: &GridMdp,
    s0: StateId,
    g: StateId,
    horizon: usize,
    rng: &mut Rng,
) -> Result<Trajectory> {
    policy.tables(g)?;
    let mut states = vec![s0];
    let mut actions = Vec::new();
    let mut s = s0;
    let mut reached = s == g;
    while !reached && actions.len() < horizon {
        let a = ActionId(rng.categorical(policy.action_distribution(s, g)?));
        s = mdp.transition(s, a)?;
        actions.push(a);
        states.push(s);
        reached = s == g;
    }
    Ok(Trajectory {
        states,
        actions,
        goal: g,
        reached,
    })
}

/// Fraction of `trials` rollouts that reach their goal, over uniformly drawn
/// `(s0, g)` pairs with `s0 != g` (whenever the world has two states).
pub fn success_rate(
    policy: &SoftGoalPolicy,
    mdp: &GridMdp,
    trials: usize,
    horizon: usize,
    rng: &mut Rng,
) -> Result<f64> {
    if trials == 0 {
        return Err(Error::InvalidParameter("success_rate needs trials >= 1".into()));
    }
    let n = mdp.num_states();
    let mut hits = 0usize;
    for _ in 0..trials {
        let g = StateId(rng.below(n));
        let s0 = loop {
            let s = StateId(rng.below(n));
            if s != g || n == 1 {
                break s;
            }
        };
        if rollout(policy, mdp, s0, g, horizon, rng)?.reached {
            hits += 1;
        }
    }
    Ok(hits as f64 / trials as f64)
}
