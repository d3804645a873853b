use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::analysis::euclidean;
use crate::error::{Error, Result};
use crate::gridworld::{ActionId, Cell, GridMdp, StateId};
use crate::representations::Encoder;
use crate::rng::Rng;

/// Sparse goal reward plus `−α_scale·‖φ(s) − φ(g)‖`.
#[derive(Debug, Clone)]
pub struct ShapedRewardSpec {
    pub encoder: Encoder,
    pub alpha_scale: f64,
    pub sparse_bonus: f64,
    /// Embedding of every state of the environment, by state id.
    embedding: Vec<Vec<f64>>,
}

impl ShapedRewardSpec {
    pub fn new(encoder: Encoder, mdp: &GridMdp, alpha_scale: f64) -> Result<Self> {
        if !(alpha_scale >= 0.0) {
            return Err(Error::InvalidParameter(format!("alpha_scale {alpha_scale} must be >= 0")));
        }
        let embedding = encoder.embed_all(mdp)?;
        Ok(Self {
            encoder,
            alpha_scale,
            sparse_bonus: 1.0,
            embedding,
        })
    }

    pub fn embedding(&self, s: StateId) -> &[f64] {
        &self.embedding[s.0]
    }
}

pub fn shaped_reward(spec: &ShapedRewardSpec, s: StateId, g: StateId) -> f64 {
    let sparse = if s == g { spec.sparse_bonus } else { 0.0 };
    if spec.alpha_scale == 0.0 {
        return sparse;
    }
    sparse - spec.alpha_scale * euclidean(spec.embedding(s), spec.embedding(g))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct QLearnerConfig {
    pub learning_rate: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub horizon: usize,
    pub q_init: f64,
}

impl Default for QLearnerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1.0,
            gamma: 0.3,
            epsilon: 0.0,
            horizon: 100,
            q_init: 0.0,
        }
    }
}

impl QLearnerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon)
            || !(self.learning_rate > 0.0 && self.learning_rate <= 1.0)
            || !(0.0..1.0).contains(&self.gamma)
            || self.horizon == 0
        {
            return Err(Error::InvalidParameter(
                "Q-learner needs epsilon in [0,1], learning_rate in (0,1], gamma in [0,1), horizon >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Goal-conditioned navigation on a large grid: goals are fixed cells, starts
/// are drawn at least `min_start_distance` (Manhattan) from the goal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapingTask {
    pub goals: Vec<StateId>,
    pub min_start_distance: usize,
    pub eval_episodes: usize,
    pub eval_seed: u64,
}

impl ShapingTask {
    /// The four corners of an open grid.
    pub fn corners(mdp: &GridMdp, min_start_distance: usize) -> Result<Self> {
        let (w, h) = (mdp.width(), mdp.height());
        let goals = [(0, 0), (w - 1, 0), (0, h - 1), (w - 1, h - 1)]
            .iter()
            .map(|&(x, y)| {
                mdp.state_at(Cell::new(x, y), None)
                    .ok_or_else(|| Error::InvalidEnvironment(format!("corner ({x},{y}) is blocked")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            goals,
            min_start_distance,
            eval_episodes: 100,
            eval_seed: 999,
        })
    }

    fn far_start(&self, mdp: &GridMdp, g: StateId, rng: &mut Rng) -> Result<StateId> {
        let gc = mdp.cell_of(g);
        let candidates: Vec<StateId> = mdp
            .states()
            .filter(|&s| {
                let c = mdp.cell_of(s);
                c.x.abs_diff(gc.x) + c.y.abs_diff(gc.y) >= self.min_start_distance
            })
            .collect();
        if candidates.is_empty() {
            return Err(Error::InvalidParameter("no start state far enough from the goal".into()));
        }
        Ok(candidates[rng.below(candidates.len())])
    }
}

/// Tabular Q over `(goal, state, action)`.
#[derive(Debug, Clone)]
pub struct TabularQLearner {
    pub config: QLearnerConfig,
    q: Vec<f64>,
    num_states: usize,
    num_actions: usize,
}

impl TabularQLearner {
    pub fn new(config: QLearnerConfig, num_goals: usize, num_states: usize, num_actions: usize) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            q: vec![config.q_init; num_goals * num_states * num_actions],
            config,
            num_states,
            num_actions,
        })
    }

    fn row(&self, gi: usize, s: StateId) -> &[f64] {
        let o = (gi * self.num_states + s.0) * self.num_actions;
        &self.q[o..o + self.num_actions]
    }

    /// ε-greedy with uniformly random tie-breaking.
    fn behave(&self, gi: usize, s: StateId, rng: &mut Rng) -> usize {
        if self.config.epsilon > 0.0 && rng.bernoulli(self.config.epsilon) {
            return rng.below(self.num_actions);
        }
        let q = self.row(gi, s);
        let m = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let ties: Vec<usize> = (0..q.len()).filter(|&a| q[a] == m).collect();
        ties[rng.below(ties.len())]
    }

    /// Greedy action, ties to the lowest index.
    pub fn greedy(&self, gi: usize, s: StateId) -> usize {
        let q = self.row(gi, s);
        (0..q.len()).fold(0, |b, a| if q[a] > q[b] { a } else { b })
    }

    fn update(&mut self, gi: usize, s: StateId, a: usize, target: f64) {
        let o = (gi * self.num_states + s.0) * self.num_actions + a;
        self.q[o] += self.config.learning_rate * (target - self.q[o]);
    }

    pub fn max_q(&self, gi: usize, s: StateId) -> f64 {
        self.row(gi, s).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: usize,
    pub mean_return: f64,
    pub success_rate: f64,
}

/// Greedy evaluation on the sparse criterion only: fraction of episodes that
/// reach their goal within the horizon.
pub fn evaluate_greedy(learner: &TabularQLearner, mdp: &GridMdp, task: &ShapingTask) -> Result<f64> {
    let mut rng = Rng::new(task.eval_seed);
    let mut hits = 0;
    for i in 0..task.eval_episodes {
        let gi = i % task.goals.len();
        let g = task.goals[gi];
        let mut s = task.far_start(mdp, g, &mut rng)?;
        for _ in 0..learner.config.horizon {
            s = mdp.step(s, ActionId(learner.greedy(gi, s)));
            if s == g {
                hits += 1;
                break;
            }
        }
    }
    Ok(hits as f64 / task.eval_episodes.max(1) as f64)
}

/// Q-learning with the shaped reward; evaluated every `eval_every` episodes
/// (and after the last one).
pub fn train_shaped(
    mdp: &GridMdp,
    spec: &ShapedRewardSpec,
    task: &ShapingTask,
    config: &QLearnerConfig,
    episodes: usize,
    eval_every: usize,
    seed: u64,
) -> Result<Vec<CurvePoint>> {
    if task.goals.is_empty() {
        return Err(Error::InvalidParameter("shaping task has no goals".into()));
    }
    if spec.embedding.len() != mdp.num_states() {
        return Err(Error::DimensionMismatch {
            expected: mdp.num_states(),
            got: spec.embedding.len(),
        });
    }
    let mut learner = TabularQLearner::new(config.clone(), task.goals.len(), mdp.num_states(), mdp.num_actions())?;
    let mut rng = Rng::derive(seed, "train-shaped");
    let mut curve = Vec::new();
    let mut block_return = 0.0;
    let mut block_len = 0usize;
    for ep in 0..episodes {
        let gi = rng.below(task.goals.len());
        let g = task.goals[gi];
        let mut s = task.far_start(mdp, g, &mut rng)?;
        let mut ret = 0.0;
        for _ in 0..config.horizon {
            let a = learner.behave(gi, s, &mut rng);
            let n = mdp.step(s, ActionId(a));
            let done = n == g;
            let r = shaped_reward(spec, n, g);
            ret += r;
            let target = if done { r } else { r + config.gamma * learner.max_q(gi, n) };
            learner.update(gi, s, a, target);
            s = n;
            if done {
                break;
            }
        }
        if !learner.is_finite() {
            return Err(Error::TrainingDiverged {
                epoch: ep,
                detail: "Q table became non-finite".into(),
            });
        }
        block_return += ret;
        block_len += 1;
        if (eval_every > 0 && (ep + 1) % eval_every == 0) || ep + 1 == episodes {
            curve.push(CurvePoint {
                iteration: ep + 1,
                mean_return: block_return / block_len as f64,
                success_rate: evaluate_greedy(&learner, mdp, task)?,
            });
            block_return = 0.0;
            block_len = 0;
        }
    }
    Ok(curve)
}
