use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::shaping::CurvePoint;
use crate::error::{Error, Result};
use crate::gridworld::{ActionId, Cell, GridMdp, StateId};
use crate::representations::Encoder;
use crate::rng::Rng;

/// Reach a goal cell while avoiding a disk around the grid centre. The reward
/// is collected on arrival: `−‖s − goal‖ − penalty·1{‖s − centre‖ < r}`, both
/// distances in cells. Reaching the goal ends the episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTask {
    pub start: StateId,
    pub goal: StateId,
    pub danger_radius: f64,
    pub danger_penalty: f64,
    pub horizon: usize,
}

impl FeatureTask {
    /// Start at (1,1), goal at (w−2,h−2), horizon 4·max(w,h).
    pub fn reach_avoid(mdp: &GridMdp, danger_radius: f64) -> Result<Self> {
        let (w, h) = (mdp.width(), mdp.height());
        if w < 5 || h < 5 || mdp.is_directed() {
            return Err(Error::InvalidEnvironment("reach-avoid needs an undirected grid of at least 5×5".into()));
        }
        let at = |x, y| {
            mdp.state_at(Cell::new(x, y), None)
                .ok_or_else(|| Error::InvalidEnvironment(format!("cell ({x},{y}) is blocked")))
        };
        Ok(Self {
            start: at(1, 1)?,
            goal: at(w - 2, h - 2)?,
            danger_radius,
            danger_penalty: 4.0,
            horizon: 4 * w.max(h),
        })
    }

    pub fn in_danger(&self, mdp: &GridMdp, s: StateId) -> bool {
        let c = mdp.cell_of(s);
        let cx = (mdp.width() as f64 - 1.0) / 2.0;
        let cy = (mdp.height() as f64 - 1.0) / 2.0;
        (c.x as f64 - cx).hypot(c.y as f64 - cy) < self.danger_radius
    }

    pub fn reward(&self, mdp: &GridMdp, s: StateId) -> f64 {
        let (c, g) = (mdp.cell_of(s), mdp.cell_of(self.goal));
        let d = (c.x as f64 - g.x as f64).hypot(c.y as f64 - g.y as f64);
        -d - if self.in_danger(mdp, s) { self.danger_penalty } else { 0.0 }
    }

    fn rewards(&self, mdp: &GridMdp) -> Vec<f64> {
        mdp.states().map(|s| self.reward(mdp, s)).collect()
    }

    /// Undiscounted return of the deterministic `policy` from the start.
    pub fn rollout_return(&self, mdp: &GridMdp, mut policy: impl FnMut(StateId) -> usize) -> f64 {
        let mut s = self.start;
        let mut total = 0.0;
        for _ in 0..self.horizon {
            s = mdp.step(s, ActionId(policy(s)));
            total += self.reward(mdp, s);
            if s == self.goal {
                break;
            }
        }
        total
    }

    /// Best achievable return within the horizon, by backward induction.
    pub fn optimal_return(&self, mdp: &GridMdp) -> f64 {
        self.backward(mdp, |q| q.iter().copied().fold(f64::NEG_INFINITY, f64::max))
    }

    /// Expected return of the uniform random policy, by backward induction.
    pub fn random_return(&self, mdp: &GridMdp) -> f64 {
        self.backward(mdp, |q| q.iter().sum::<f64>() / q.len() as f64)
    }

    fn backward(&self, mdp: &GridMdp, combine: impl Fn(&[f64]) -> f64) -> f64 {
        let r = self.rewards(mdp);
        let mut v = vec![0.0; mdp.num_states()];
        let mut q = vec![0.0; mdp.num_actions()];
        for _ in 0..self.horizon {
            v = mdp
                .states()
                .map(|s| {
                    if s == self.goal {
                        return 0.0;
                    }
                    for (a, qa) in q.iter_mut().enumerate() {
                        let n = mdp.step(s, ActionId(a));
                        *qa = r[n.0] + v[n.0];
                    }
                    combine(&q)
                })
                .collect();
        }
        v[self.start.0]
    }

    /// `(R − R_random) / (R_optimal − R_random)`.
    pub fn normalized_score(&self, ret: f64, optimal: f64, random: f64) -> f64 {
        (ret - random) / (optimal - random)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct LinearQConfig {
    pub learning_rate: f64,
    pub gamma: f64,
    pub epsilon: f64,
}

impl Default for LinearQConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            gamma: 0.95,
            epsilon: 0.1,
        }
    }
}

/// Embeds every state and rescales so the largest absolute coordinate is 1,
/// then appends a constant bias feature.
pub fn normalized_features(encoder: &Encoder, mdp: &GridMdp) -> Result<Vec<Vec<f64>>> {
    let mut z = encoder.embed_all(mdp)?;
    let scale = z.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    if !scale.is_finite() {
        return Err(Error::NonFinite("encoder output".into()));
    }
    for row in &mut z {
        if scale > 0.0 {
            row.iter_mut().for_each(|v| *v /= scale);
        }
        row.push(1.0);
    }
    Ok(z)
}

fn dot(w: &[f64], x: &[f64]) -> f64 {
    w.iter().zip(x).map(|(a, b)| a * b).sum()
}

fn argmax(q: &[f64]) -> usize {
    (0..q.len()).fold(0, |b, a| if q[a] > q[b] { a } else { b })
}

/// Semi-gradient Q-learning with one weight vector per action over the frozen,
/// normalized embedding. After each episode the greedy policy is rolled out;
/// `mean_return` is its return and `success_rate` its normalized score.
pub fn train_feature_policy(
    mdp: &GridMdp,
    task: &FeatureTask,
    encoder: &Encoder,
    config: &LinearQConfig,
    episodes: usize,
    seed: u64,
) -> Result<Vec<CurvePoint>> {
    if !(0.0..=1.0).contains(&config.epsilon) || !(config.learning_rate > 0.0) || !(0.0..=1.0).contains(&config.gamma) {
        return Err(Error::InvalidParameter("linear Q needs epsilon, gamma in [0,1] and a positive rate".into()));
    }
    let x = normalized_features(encoder, mdp)?;
    let rewards = task.rewards(mdp);
    let (opt, rand) = (task.optimal_return(mdp), task.random_return(mdp));
    let na = mdp.num_actions();
    let dim = x[0].len();
    let mut w = vec![vec![0.0; dim]; na];
    let q_of = |w: &[Vec<f64>], s: StateId| -> Vec<f64> { w.iter().map(|wa| dot(wa, &x[s.0])).collect() };
    let mut rng = Rng::derive(seed, "train-features");
    let mut curve = Vec::with_capacity(episodes);
    for ep in 0..episodes {
        let mut s = task.start;
        for _ in 0..task.horizon {
            let a = if rng.bernoulli(config.epsilon) {
                rng.below(na)
            } else {
                argmax(&q_of(&w, s))
            };
            let n = mdp.step(s, ActionId(a));
            let done = n == task.goal;
            let next_max = if done {
                0.0
            } else {
                q_of(&w, n).into_iter().fold(f64::NEG_INFINITY, f64::max)
            };
            let td = rewards[n.0] + config.gamma * next_max - dot(&w[a], &x[s.0]);
            for (wi, xi) in w[a].iter_mut().zip(&x[s.0]) {
                *wi += config.learning_rate * td * xi;
            }
            s = n;
            if done {
                break;
            }
        }
        if w.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::TrainingDiverged {
                epoch: ep,
                detail: "linear Q weights became non-finite".into(),
            });
        }
        let ret = task.rollout_return(mdp, |s| argmax(&q_of(&w, s)));
        curve.push(CurvePoint {
            iteration: ep + 1,
            mean_return: ret,
            success_rate: task.normalized_score(ret, opt, rand),
        });
    }
    Ok(curve)
}
