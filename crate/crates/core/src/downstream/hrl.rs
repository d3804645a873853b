use rayon::prelude::*;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::clustering::KMeansModel;
use crate::error::{Error, Result};
use crate::gridworld::{ActionId, GridMdp, StateId};
use crate::nn::{log_softmax, softmax, Activation, AdamConfig, AdamState, Mlp};
use crate::representations::{Decoder, Encoder};
use crate::rng::{derive_seed, Rng};
use crate::softgcp::SoftGoalPolicy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Checkpoint {
    Room(usize),
    Cell(StateId),
}

impl Checkpoint {
    fn reached(self, mdp: &GridMdp, s: StateId) -> bool {
        match self {
            Checkpoint::Room(r) => mdp.room_of(s) == Some(r),
            Checkpoint::Cell(c) => s == c,
        }
    }
}

/// Visit checkpoints in order; +1 each time the current one is entered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HrlTask {
    pub checkpoints: Vec<Checkpoint>,
    /// Meta-steps per episode.
    pub meta_steps: usize,
}

impl HrlTask {
    /// `len` rooms drawn uniformly with no room repeated back to back.
    pub fn room_sequence(mdp: &GridMdp, len: usize, meta_steps: usize, seed: u64) -> Result<Self> {
        let rooms = mdp.num_rooms();
        if rooms < 2 {
            return Err(Error::InvalidEnvironment("room sequence needs at least two rooms".into()));
        }
        let mut rng = Rng::derive(seed, "room-sequence");
        let mut seq: Vec<usize> = Vec::with_capacity(len);
        while seq.len() < len {
            let r = rng.below(rooms);
            if seq.last() != Some(&r) {
                seq.push(r);
            }
        }
        Ok(Self {
            checkpoints: seq.into_iter().map(Checkpoint::Room).collect(),
            meta_steps,
        })
    }

    /// `len` distinct cells, consecutive ones at least `min_gap` BFS steps apart.
    pub fn waypoints(mdp: &GridMdp, len: usize, min_gap: usize, meta_steps: usize, seed: u64) -> Result<Self> {
        let mut rng = Rng::derive(seed, "waypoints");
        let mut seq: Vec<StateId> = Vec::with_capacity(len);
        let mut tries = 0;
        while seq.len() < len {
            tries += 1;
            if tries > 100_000 {
                return Err(Error::InvalidParameter(format!("cannot place {len} waypoints {min_gap} apart")));
            }
            let s = StateId(rng.below(mdp.num_states()));
            let far = match seq.last() {
                Some(&p) => mdp.bfs_distances(p)[s.0].is_some_and(|d| d >= min_gap),
                None => true,
            };
            if far && !seq.contains(&s) {
                seq.push(s);
            }
        }
        Ok(Self {
            checkpoints: seq.into_iter().map(Checkpoint::Cell).collect(),
            meta_steps,
        })
    }

    fn validate(&self, mdp: &GridMdp) -> Result<()> {
        if self.checkpoints.is_empty() {
            return Err(Error::InvalidParameter("HRL task has no checkpoints".into()));
        }
        for (i, c) in self.checkpoints.iter().enumerate() {
            match *c {
                Checkpoint::Room(r) if r >= mdp.num_rooms() => {
                    return Err(Error::InvalidParameter(format!("room {r} out of range")))
                }
                Checkpoint::Room(r) if i > 0 && self.checkpoints[i - 1] == Checkpoint::Room(r) => {
                    return Err(Error::InvalidParameter("consecutive room checkpoints repeat".into()))
                }
                Checkpoint::Cell(s) if s.0 >= mdp.num_states() => {
                    return Err(Error::StateOutOfRange {
                        index: s.0,
                        num_states: mdp.num_states(),
                    })
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Width of the checkpoint part of the meta-policy input.
    pub fn context_dim(&self) -> usize {
        self.checkpoints.len()
    }

    /// One-hot of the index of the checkpoint being sought.
    fn context(&self, index: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.context_dim()];
        v[index] = 1.0;
        v
    }

    /// Episodes start uniformly outside the first checkpoint.
    fn sample_start(&self, mdp: &GridMdp, rng: &mut Rng) -> StateId {
        loop {
            let s = StateId(rng.below(mdp.num_states()));
            if !self.checkpoints[0].reached(mdp, s) {
                return s;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum MetaKind {
    LatentGaussian,
    ClusterCategorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MetaAction {
    Cluster(usize),
    /// Standardized latent sample `u`; the command is `center + scale·u`.
    Latent(Vec<f64>),
}

/// High-level policy over `features(s) ⊕ checkpoint context`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaPolicy {
    pub kind: MetaKind,
    pub net: Mlp,
    pub meta_horizon: usize,
    /// Number of clusters, or latent dimension.
    pub choices: usize,
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
}

impl MetaPolicy {
    /// Linear, zero-initialized: uniform over clusters.
    pub fn categorical(input_dim: usize, k: usize, meta_horizon: usize) -> Result<Self> {
        Ok(Self {
            kind: MetaKind::ClusterCategorical,
            net: Mlp::zeros(&[input_dim, k], Activation::Linear)?,
            meta_horizon,
            choices: k,
            center: Vec::new(),
            scale: Vec::new(),
        })
    }

    /// Linear, zero-initialized: standard normal in a latent frame that
    /// centres and scales the embedded states to unit half-range.
    pub fn gaussian(input_dim: usize, embedded: &[Vec<f64>], meta_horizon: usize) -> Result<Self> {
        let d = embedded.first().map(|z| z.len()).unwrap_or(0);
        if d == 0 {
            return Err(Error::InvalidParameter("latent meta-policy needs embedded states".into()));
        }
        let mut center = vec![0.0; d];
        let mut scale = vec![0.0; d];
        for j in 0..d {
            let lo = embedded.iter().map(|z| z[j]).fold(f64::INFINITY, f64::min);
            let hi = embedded.iter().map(|z| z[j]).fold(f64::NEG_INFINITY, f64::max);
            center[j] = 0.5 * (lo + hi);
            scale[j] = (0.5 * (hi - lo)).max(1e-6);
        }
        Ok(Self {
            kind: MetaKind::LatentGaussian,
            net: Mlp::zeros(&[input_dim, 2 * d], Activation::Linear)?,
            meta_horizon,
            choices: d,
            center,
            scale,
        })
    }

    pub fn sample(&self, input: &[f64], rng: &mut Rng) -> Result<MetaAction> {
        let out = self.net.forward(input)?;
        Ok(match self.kind {
            MetaKind::ClusterCategorical => MetaAction::Cluster(rng.categorical(&softmax(&out))),
            MetaKind::LatentGaussian => {
                let d = self.choices;
                MetaAction::Latent((0..d).map(|j| out[j] + out[d + j].exp() * rng.normal()).collect())
            }
        })
    }

    /// `log π(action | input)` and its gradient with respect to the parameters.
    pub fn log_prob_grad(&self, input: &[f64], action: &MetaAction) -> Result<(f64, Vec<f64>)> {
        let (out, tape) = self.net.forward_tape(input)?;
        let (lp, upstream) = match (self.kind, action) {
            (MetaKind::ClusterCategorical, MetaAction::Cluster(c)) => {
                if *c >= self.choices {
                    return Err(Error::InvalidParameter(format!("cluster {c} out of range")));
                }
                let ls = log_softmax(&out);
                let p = softmax(&out);
                let up: Vec<f64> = (0..out.len()).map(|i| (i == *c) as u8 as f64 - p[i]).collect();
                (ls[*c], up)
            }
            (MetaKind::LatentGaussian, MetaAction::Latent(u)) => {
                let d = self.choices;
                if u.len() != d {
                    return Err(Error::DimensionMismatch { expected: d, got: u.len() });
                }
                let mut up = vec![0.0; 2 * d];
                let mut lp = 0.0;
                for j in 0..d {
                    let (mu, log_sigma) = (out[j], out[d + j]);
                    let t = (u[j] - mu) / log_sigma.exp();
                    lp += -0.5 * t * t - log_sigma - 0.5 * (std::f64::consts::TAU).ln();
                    up[j] = t / log_sigma.exp();
                    up[d + j] = t * t - 1.0;
                }
                (lp, up)
            }
            _ => return Err(Error::InvalidParameter("meta action does not match the policy kind".into())),
        };
        if !lp.is_finite() {
            return Err(Error::NonFinite("meta-policy log-probability".into()));
        }
        let mut grads = vec![0.0; self.net.param_count()];
        self.net.backward(&tape, &upstream, &mut grads)?;
        Ok((lp, grads))
    }
}

/// Turns a meta-action into a low-level goal state.
#[derive(Debug, Clone)]
pub enum Commander {
    Clusters(Vec<Vec<StateId>>),
    Latent { decoder: Decoder, lo: Vec<f64>, hi: Vec<f64> },
}

impl Commander {
    /// `ids[i]` is the state of clustered point `i`.
    pub fn from_kmeans(model: &KMeansModel, ids: &[StateId]) -> Result<Self> {
        if ids.len() != model.assignment.len() {
            return Err(Error::DimensionMismatch {
                expected: model.assignment.len(),
                got: ids.len(),
            });
        }
        Ok(Commander::Clusters(
            (0..model.k).map(|c| model.members(c).into_iter().map(|i| ids[i]).collect()).collect(),
        ))
    }

    /// Decoded features are clamped to the range spanned by the real states.
    pub fn from_decoder(decoder: Decoder, mdp: &GridMdp) -> Self {
        let table = mdp.feature_table();
        let d = mdp.feature_dim();
        let lo = (0..d).map(|j| table.iter().map(|f| f[j]).fold(f64::INFINITY, f64::min)).collect();
        let hi = (0..d).map(|j| table.iter().map(|f| f[j]).fold(f64::NEG_INFINITY, f64::max)).collect();
        Commander::Latent { decoder, lo, hi }
    }

    /// Goal for `action`, and whether decoding had to clamp.
    fn goal(&self, meta: &MetaPolicy, mdp: &GridMdp, action: &MetaAction, rng: &mut Rng) -> Result<(StateId, bool)> {
        match (self, action) {
            (Commander::Clusters(members), MetaAction::Cluster(c)) => {
                let m = members.get(*c).filter(|m| !m.is_empty()).ok_or_else(|| {
                    Error::InvalidParameter(format!("cluster {c} has no members"))
                })?;
                Ok((m[rng.below(m.len())], false))
            }
            (Commander::Latent { decoder, lo, hi }, MetaAction::Latent(u)) => {
                let z: Vec<f64> = u.iter().enumerate().map(|(j, v)| meta.center[j] + meta.scale[j] * v).collect();
                let mut f = decoder.decode(&z)?;
                let mut clamped = false;
                for (j, v) in f.iter_mut().enumerate() {
                    let c = v.clamp(lo[j], hi[j]);
                    clamped |= c != *v;
                    *v = c;
                }
                Ok((mdp.nearest_state(&f), clamped))
            }
            _ => Err(Error::InvalidParameter("meta action does not match the commander".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetaEpisode {
    /// Per meta-step: policy input, sampled action, log-probability, reward.
    pub inputs: Vec<Vec<f64>>,
    pub actions: Vec<MetaAction>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub episode_return: f64,
    pub clamped: usize,
    pub low_level_steps: usize,
}

/// Everything a meta-episode needs besides the meta-policy itself.
#[derive(Clone, Copy)]
pub struct HrlEnv<'a> {
    pub mdp: &'a GridMdp,
    pub gcp: &'a SoftGoalPolicy,
    pub commander: &'a Commander,
    pub task: &'a HrlTask,
}

pub fn run_meta_episode(meta: &MetaPolicy, env: HrlEnv<'_>, rng: &mut Rng) -> Result<MetaEpisode> {
    let HrlEnv { mdp, gcp, commander, task } = env;
    task.validate(mdp)?;
    let mut ep = MetaEpisode {
        inputs: Vec::new(),
        actions: Vec::new(),
        log_probs: Vec::new(),
        rewards: Vec::new(),
        episode_return: 0.0,
        clamped: 0,
        low_level_steps: 0,
    };
    if meta.meta_horizon == 0 {
        return Ok(ep);
    }
    let mut s = task.sample_start(mdp, rng);
    let mut next = 0;
    for _ in 0..task.meta_steps {
        if next == task.checkpoints.len() {
            break;
        }
        let mut input = mdp.features(s);
        input.extend(task.context(next));
        let action = meta.sample(&input, rng)?;
        let (lp, _) = meta.log_prob_grad(&input, &action)?;
        let (g, clamped) = commander.goal(meta, mdp, &action, rng)?;
        ep.clamped += clamped as usize;
        let mut reward = 0.0;
        for _ in 0..meta.meta_horizon {
            if s == g || next == task.checkpoints.len() {
                break;
            }
            let a = rng.categorical(gcp.action_distribution(s, g)?);
            s = mdp.step(s, ActionId(a));
            ep.low_level_steps += 1;
            if task.checkpoints[next].reached(mdp, s) {
                reward += 1.0;
                next += 1;
            }
        }
        ep.inputs.push(input);
        ep.actions.push(action);
        ep.log_probs.push(lp);
        ep.rewards.push(reward);
    }
    ep.episode_return = ep.rewards.iter().sum();
    Ok(ep)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct ReinforceConfig {
    pub learning_rate: f64,
    pub batch_episodes: usize,
    /// Weight of the newest batch in the moving-average baseline.
    pub baseline_rate: f64,
}

impl Default for ReinforceConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            batch_episodes: 16,
            baseline_rate: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaCurvePoint {
    pub iteration: usize,
    pub mean_return: f64,
    pub clamped: usize,
}

/// Score-function gradient `Σ advantage·∇log π`, summed in sample order.
pub fn policy_gradient(meta: &MetaPolicy, samples: &[(&[f64], &MetaAction, f64)]) -> Result<Vec<f64>> {
    let mut total = vec![0.0; meta.net.param_count()];
    for &(input, action, adv) in samples {
        if adv == 0.0 {
            continue;
        }
        let (_, g) = meta.log_prob_grad(input, action)?;
        for (t, gi) in total.iter_mut().zip(g) {
            *t += adv * gi;
        }
    }
    Ok(total)
}

/// Adam ascent step on `gradient` (already averaged).
pub(crate) fn ascend(meta: &mut MetaPolicy, adam: &mut AdamState, gradient: &[f64], iteration: usize) -> Result<()> {
    let neg: Vec<f64> = gradient.iter().map(|g| -g).collect();
    adam.step(meta.net.params_mut(), &neg).map_err(|e| Error::TrainingDiverged {
        epoch: iteration,
        detail: e.to_string(),
    })
}

/// REINFORCE on reward-to-go with a per-meta-step moving-average baseline.
/// Episodes of a batch run in parallel; each has its own derived stream.
pub fn train_meta(
    meta: &mut MetaPolicy,
    env: HrlEnv<'_>,
    iters: usize,
    config: &ReinforceConfig,
    seed: u64,
) -> Result<Vec<MetaCurvePoint>> {
    if config.batch_episodes == 0 || !(0.0..=1.0).contains(&config.baseline_rate) {
        return Err(Error::InvalidParameter("REINFORCE needs batch_episodes >= 1 and baseline_rate in [0,1]".into()));
    }
    env.task.validate(env.mdp)?;
    let mut adam = AdamState::new(meta.net.param_count(), AdamConfig::default().with_learning_rate(config.learning_rate));
    let mut baseline: Option<Vec<f64>> = None;
    let mut curve = Vec::with_capacity(iters);
    let stream = derive_seed(seed, "train-meta");
    for it in 0..iters {
        let episodes: Vec<MetaEpisode> = (0..config.batch_episodes)
            .into_par_iter()
            .map(|e| {
                let mut rng = Rng::new(derive_seed(stream, &format!("{it}/{e}")));
                run_meta_episode(meta, env, &mut rng)
            })
            .collect::<Result<_>>()?;
        let steps = env.task.meta_steps;
        let to_go: Vec<Vec<f64>> = episodes
            .iter()
            .map(|ep| {
                let mut g = vec![0.0; steps];
                let mut acc = 0.0;
                for t in (0..ep.rewards.len()).rev() {
                    acc += ep.rewards[t];
                    g[t] = acc;
                }
                g
            })
            .collect();
        let batch_mean: Vec<f64> = (0..steps)
            .map(|t| to_go.iter().map(|g| g[t]).sum::<f64>() / episodes.len() as f64)
            .collect();
        let b = baseline.get_or_insert_with(|| batch_mean.clone()).clone();
        let samples: Vec<(&[f64], &MetaAction, f64)> = episodes
            .iter()
            .zip(&to_go)
            .flat_map(|(ep, g)| {
                let b = &b;
                (0..ep.actions.len()).map(move |t| (ep.inputs[t].as_slice(), &ep.actions[t], g[t] - b[t]))
            })
            .collect();
        let mut grad = policy_gradient(meta, &samples)?;
        grad.iter_mut().for_each(|g| *g /= episodes.len() as f64);
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::TrainingDiverged {
                epoch: it,
                detail: "non-finite policy gradient".into(),
            });
        }
        ascend(meta, &mut adam, &grad, it)?;
        if let Some(b) = baseline.as_mut() {
            for (bt, m) in b.iter_mut().zip(&batch_mean) {
                *bt += config.baseline_rate * (m - *bt);
            }
        }
        curve.push(MetaCurvePoint {
            iteration: it + 1,
            mean_return: episodes.iter().map(|e| e.episode_return).sum::<f64>() / episodes.len() as f64,
            clamped: episodes.iter().map(|e| e.clamped).sum(),
        });
    }
    Ok(curve)
}

/// Monte-Carlo mean return of `meta` (without training) over `episodes`.
pub fn mean_return(meta: &MetaPolicy, env: HrlEnv<'_>, episodes: usize, seed: u64) -> Result<f64> {
    let stream = derive_seed(seed, "meta-eval");
    let returns: Vec<f64> = (0..episodes)
        .into_par_iter()
        .map(|e| {
            let mut rng = Rng::new(derive_seed(stream, &e.to_string()));
            run_meta_episode(meta, env, &mut rng).map(|ep| ep.episode_return)
        })
        .collect::<Result<_>>()?;
    Ok(returns.iter().sum::<f64>() / episodes.max(1) as f64)
}

/// Embeds every state and clusters the embedding; returns the commander and
/// the model.
pub fn cluster_commander(encoder: &Encoder, mdp: &GridMdp, k: usize, seed: u64) -> Result<(Commander, KMeansModel)> {
    let points = encoder.embed_all(mdp)?;
    let model = crate::clustering::kmeans_fit(&points, k, seed, 300)?;
    let ids: Vec<StateId> = mdp.states().collect();
    Ok((Commander::from_kmeans(&model, &ids)?, model))
}
