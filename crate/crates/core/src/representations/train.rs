use std::time::Instant;

use super::dataset::{Split, TrajectoryDataset, Transition};
use super::losses::{loss_arc, loss_inverse, loss_predictive, loss_slowness, loss_vae};
use super::model::{Decoder, Encoder, RepKind, TrainConfig, TrainReport};
use crate::actdist::ActionableDistanceMatrix;
use crate::error::{Error, Result};
use crate::gridworld::{GridMdp, StateId};
use crate::hashing::hash_f64s;
use crate::nn::{Activation, AdamConfig, AdamState, Mlp};
use crate::rng::Rng;

/// Encoder plus the auxiliary networks trained with it (decoder, latent
/// dynamics, inverse model), in the order the loss uses them.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub encoder: Encoder,
    pub aux: Vec<Mlp>,
    pub report: TrainReport,
}

const MAX_VALIDATION_SAMPLES: usize = 4000;

fn param_hash(nets: &[Mlp]) -> String {
    let all: Vec<f64> = nets.iter().flat_map(|n| n.params().iter().copied()).collect();
    hash_f64s(&all)
}

struct Curves {
    train: Vec<f64>,
    val: Vec<f64>,
}

/// Mini-batch Adam over per-sample losses. Gradients are summed in sample
/// order and divided by the batch size, so results do not depend on
/// scheduling.
fn optimize<S>(
    nets: &mut [Mlp],
    cfg: &TrainConfig,
    rng: &mut Rng,
    mut epoch_samples: impl FnMut(&mut Rng) -> Vec<S>,
    loss: impl Fn(&[Mlp], &S, &mut Rng, &mut [Vec<f64>]) -> Result<f64>,
    mut validate: impl FnMut(&[Mlp]) -> Result<f64>,
) -> Result<Curves> {
    let adam = AdamConfig::default().with_learning_rate(cfg.learning_rate);
    let mut opts: Vec<AdamState> = nets.iter().map(|n| AdamState::new(n.param_count(), adam)).collect();
    let mut curves = Curves {
        train: Vec::with_capacity(cfg.epochs),
        val: Vec::with_capacity(cfg.epochs),
    };
    let diverged = |epoch: usize, e: Error| Error::TrainingDiverged {
        epoch,
        detail: e.to_string(),
    };
    for epoch in 0..cfg.epochs {
        let samples = epoch_samples(rng);
        if samples.is_empty() {
            return Err(Error::InvalidParameter("no training samples".into()));
        }
        let mut total = 0.0;
        for batch in samples.chunks(cfg.batch_size) {
            let mut grads: Vec<Vec<f64>> = nets.iter().map(|n| n.zero_grads()).collect();
            for s in batch {
                let l = loss(nets, s, rng, &mut grads)?;
                if !l.is_finite() {
                    return Err(Error::TrainingDiverged {
                        epoch,
                        detail: format!("loss became {l}"),
                    });
                }
                total += l;
            }
            let scale = 1.0 / batch.len() as f64;
            for ((net, opt), g) in nets.iter_mut().zip(&mut opts).zip(&mut grads) {
                g.iter_mut().for_each(|v| *v *= scale);
                opt.step(net.params_mut(), g).map_err(|e| diverged(epoch, e))?;
            }
        }
        curves.train.push(total / samples.len() as f64);
        let v = validate(nets)?;
        if !v.is_finite() {
            return Err(Error::TrainingDiverged {
                epoch,
                detail: format!("validation loss became {v}"),
            });
        }
        curves.val.push(v);
    }
    Ok(curves)
}

fn distinct_pairs(idx: &[usize], cap: usize, rng: &mut Rng) -> Vec<(usize, usize)> {
    let n = idx.len();
    if n * n.saturating_sub(1) / 2 <= cap {
        let mut v = Vec::new();
        for a in 0..n {
            for b in (a + 1)..n {
                v.push((idx[a], idx[b]));
            }
        }
        v
    } else {
        (0..cap).map(|_| sample_pair(idx, rng)).collect()
    }
}

fn sample_pair(idx: &[usize], rng: &mut Rng) -> (usize, usize) {
    let a = rng.below(idx.len());
    let mut b = rng.below(idx.len() - 1);
    if b >= a {
        b += 1;
    }
    (idx[a], idx[b])
}

/// Fits an encoder whose Euclidean distances match `dist(i, j)` over points
/// with the given features. `train` and `val` index into `features`.
pub fn fit_arc(
    features: &[Vec<f64>],
    dist: impl Fn(usize, usize) -> f64,
    train: &[usize],
    val: &[usize],
    cfg: &TrainConfig,
    dataset_hash: &str,
) -> Result<TrainedModel> {
    cfg.validate()?;
    if train.len() < 2 {
        return Err(Error::InvalidParameter("ARC training needs at least two states".into()));
    }
    let input = features[train[0]].len();
    let start = Instant::now();
    let mut rng = Rng::derive(cfg.seed, "train-arc");
    let mut nets = vec![Mlp::new(&cfg.layers(input, cfg.latent_dim), cfg.activation, &mut rng)?];
    let val_idx = if val.len() >= 2 { val } else { train };
    let val_pairs = distinct_pairs(val_idx, MAX_VALIDATION_SAMPLES, &mut Rng::derive(cfg.seed, "arc-val"));
    let per_epoch = cfg.pairs_per_state * train.len();
    let curves = optimize(
        &mut nets,
        cfg,
        &mut rng,
        |rng| (0..per_epoch).map(|_| sample_pair(train, rng)).collect(),
        |n, &(i, j), _, g| loss_arc(&n[0], &features[i], &features[j], dist(i, j), &mut g[0]),
        |n| {
            let mut scratch = n[0].zero_grads();
            let mut total = 0.0;
            for &(i, j) in &val_pairs {
                total += loss_arc(&n[0], &features[i], &features[j], dist(i, j), &mut scratch)?;
            }
            Ok(total / val_pairs.len() as f64)
        },
    )?;
    let report = TrainReport {
        kind: RepKind::Arc,
        epochs: cfg.epochs,
        train_loss: curves.train,
        val_loss: curves.val,
        dataset_hash: dataset_hash.to_string(),
        config: cfg.clone(),
        param_hash: param_hash(&nets),
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    let net = nets.pop().unwrap();
    Ok(TrainedModel {
        encoder: Encoder::from_net(RepKind::Arc, net)?,
        aux: Vec::new(),
        report,
    })
}

fn matrix_positions(states: &[StateId], matrix: &ActionableDistanceMatrix) -> Result<Vec<usize>> {
    states
        .iter()
        .map(|&s| {
            matrix.index_of(s).ok_or_else(|| {
                Error::InvalidParameter(format!("state {} is missing from the distance matrix", s.0))
            })
        })
        .collect()
}

/// Trains a representation of `kind` on `dataset`. ARC additionally needs the
/// precomputed distance matrix covering the dataset's states.
pub fn train(
    kind: RepKind,
    dataset: &TrajectoryDataset,
    mdp: &GridMdp,
    matrix: Option<&ActionableDistanceMatrix>,
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    cfg.validate()?;
    if dataset.source.env_hash != mdp.env_hash() {
        return Err(Error::InvalidParameter("dataset was collected on a different environment".into()));
    }
    let start = Instant::now();
    let features = mdp.feature_table();
    match kind {
        RepKind::Identity => Ok(TrainedModel {
            encoder: Encoder::identity(mdp.feature_dim()),
            aux: Vec::new(),
            report: TrainReport {
                kind,
                epochs: 0,
                train_loss: Vec::new(),
                val_loss: Vec::new(),
                dataset_hash: dataset.hash().to_string(),
                config: cfg.clone(),
                param_hash: String::new(),
                wall_clock_secs: 0.0,
            },
        }),
        RepKind::Arc => {
            let matrix = matrix.ok_or_else(|| Error::InvalidParameter("ARC training needs a distance matrix".into()))?;
            // Features are looked up by matrix position.
            let pos_features: Vec<Vec<f64>> = matrix.states().iter().map(|&s| features[s.0].clone()).collect();
            let train_pos = matrix_positions(&dataset.states(Split::Train), matrix)?;
            let val_pos = matrix_positions(&dataset.states(Split::Validation), matrix)?;
            fit_arc(&pos_features, |i, j| matrix.get(i, j), &train_pos, &val_pos, cfg, dataset.hash())
        }
        _ => {
            let train_t = dataset.transitions(Split::Train);
            let mut val_t = dataset.transitions(Split::Validation);
            if val_t.is_empty() {
                val_t = train_t.clone();
            }
            val_t.truncate(MAX_VALIDATION_SAMPLES);
            train_baseline(kind, &train_t, &val_t, &features, mdp.num_actions(), cfg, dataset.hash(), start)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn train_baseline(
    kind: RepKind,
    train_t: &[Transition],
    val_t: &[Transition],
    features: &[Vec<f64>],
    num_actions: usize,
    cfg: &TrainConfig,
    dataset_hash: &str,
    start: Instant,
) -> Result<TrainedModel> {
    if train_t.is_empty() {
        return Err(Error::InvalidParameter(format!("{} training needs transitions", kind.name())));
    }
    let feat = features[0].len();
    let d = cfg.latent_dim;
    let mut rng = Rng::derive(cfg.seed, &format!("train-{}", kind.name()));
    let act = cfg.activation;
    let mut nets = match kind {
        RepKind::Vae | RepKind::Slowness => vec![
            Mlp::new(&cfg.layers(feat, 2 * d), act, &mut rng)?,
            Mlp::new(&cfg.layers(d, feat), act, &mut rng)?,
        ],
        RepKind::Predictive => vec![
            Mlp::new(&cfg.layers(feat, d), act, &mut rng)?,
            Mlp::new(&cfg.layers(d + num_actions, d), act, &mut rng)?,
            Mlp::new(&cfg.layers(d, feat), act, &mut rng)?,
        ],
        RepKind::Inverse => vec![
            Mlp::new(&cfg.layers(feat, d), act, &mut rng)?,
            Mlp::new(&cfg.layers(d + num_actions, d), act, &mut rng)?,
            Mlp::new(&cfg.layers(2 * d, num_actions), act, &mut rng)?,
        ],
        RepKind::Arc | RepKind::Identity => unreachable!("handled by train"),
    };
    let (beta, alpha_slow) = (cfg.beta, cfg.alpha_slow);
    let sample_loss = move |n: &[Mlp], t: &Transition, rng: &mut Rng, g: &mut [Vec<f64>]| -> Result<f64> {
        let (x0, x1, a) = (&features[t.state.0], &features[t.next.0], t.action.0);
        match kind {
            RepKind::Vae | RepKind::Slowness => {
                let noise: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
                let (ge, gd) = g.split_at_mut(1);
                if kind == RepKind::Vae {
                    loss_vae(&n[0], &n[1], x0, beta, &noise, &mut ge[0], &mut gd[0])
                } else {
                    loss_slowness(&n[0], &n[1], x0, x1, alpha_slow, beta, &noise, &mut ge[0], &mut gd[0])
                }
            }
            _ => {
                let (g0, rest) = g.split_at_mut(1);
                let (g1, g2) = rest.split_at_mut(1);
                if kind == RepKind::Predictive {
                    loss_predictive(&n[0], &n[1], &n[2], x0, a, num_actions, x1, &mut g0[0], &mut g1[0], &mut g2[0])
                } else {
                    loss_inverse(&n[0], &n[1], &n[2], x0, a, num_actions, x1, beta, &mut g0[0], &mut g1[0], &mut g2[0])
                }
            }
        }
    };
    let cap = cfg.max_samples_per_epoch.unwrap_or(usize::MAX);
    let mut order: Vec<Transition> = train_t.to_vec();
    let curves = optimize(
        &mut nets,
        cfg,
        &mut rng,
        |rng| {
            rng.shuffle(&mut order);
            order.iter().take(cap).copied().collect()
        },
        sample_loss,
        |n| {
            let mut vrng = Rng::derive(cfg.seed, "val-noise");
            let mut scratch: Vec<Vec<f64>> = n.iter().map(|m| m.zero_grads()).collect();
            let mut total = 0.0;
            for t in val_t {
                total += sample_loss(n, t, &mut vrng, &mut scratch)?;
            }
            Ok(total / val_t.len() as f64)
        },
    )?;
    let report = TrainReport {
        kind,
        epochs: cfg.epochs,
        train_loss: curves.train,
        val_loss: curves.val,
        dataset_hash: dataset_hash.to_string(),
        config: cfg.clone(),
        param_hash: param_hash(&nets),
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    let enc = nets.remove(0);
    Ok(TrainedModel {
        encoder: Encoder::from_net(kind, enc)?,
        aux: nets,
        report,
    })
}

/// Mean over states of the per-component squared reconstruction error.
pub fn reconstruction_error(encoder: &Encoder, decoder: &Decoder, features: &[Vec<f64>]) -> Result<f64> {
    let mut total = 0.0;
    for x in features {
        let y = decoder.decode(&encoder.encode(x)?)?;
        total += y.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64;
    }
    Ok(total / features.len() as f64)
}

/// Fits `ψ` so that `ψ(φ(s)) ≈ features(s)` with the encoder held fixed.
pub fn train_decoder(
    encoder: &Encoder,
    dataset: &TrajectoryDataset,
    mdp: &GridMdp,
    cfg: &TrainConfig,
) -> Result<(Decoder, TrainReport)> {
    let features = mdp.feature_table();
    let train: Vec<Vec<f64>> = dataset.states(Split::Train).iter().map(|s| features[s.0].clone()).collect();
    let mut val: Vec<Vec<f64>> = dataset.states(Split::Validation).iter().map(|s| features[s.0].clone()).collect();
    if val.is_empty() {
        val = train.clone();
    }
    fit_decoder(encoder, &train, &val, cfg, dataset.hash())
}

/// Decoder fit on explicit feature vectors.
pub fn fit_decoder(
    encoder: &Encoder,
    train: &[Vec<f64>],
    val: &[Vec<f64>],
    cfg: &TrainConfig,
    dataset_hash: &str,
) -> Result<(Decoder, TrainReport)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidParameter("decoder training needs states".into()));
    }
    let start = Instant::now();
    let latents = |xs: &[Vec<f64>]| -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
        xs.iter().map(|x| Ok((encoder.encode(x)?, x.clone()))).collect()
    };
    let train_pairs = latents(train)?;
    let val_pairs = latents(val)?;
    let feat = train[0].len();
    let mut rng = Rng::derive(cfg.seed, "train-decoder");
    let mut nets = vec![Mlp::new(&cfg.layers(encoder.latent_dim(), feat), cfg.activation, &mut rng)?];
    let mse = |net: &Mlp, (z, x): &(Vec<f64>, Vec<f64>), g: &mut [f64]| -> Result<f64> {
        let (y, tape) = net.forward_tape(z)?;
        let n = x.len() as f64;
        let up: Vec<f64> = y.iter().zip(x).map(|(a, b)| 2.0 * (a - b) / n).collect();
        net.backward(&tape, &up, g)?;
        Ok(y.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n)
    };
    // Small state sets: repeat each state so an epoch has a useful number of
    // updates.
    let reps = (cfg.pairs_per_state).max(1);
    let mut order: Vec<usize> = (0..train_pairs.len()).flat_map(|i| std::iter::repeat_n(i, reps)).collect();
    let curves = optimize(
        &mut nets,
        cfg,
        &mut rng,
        |rng| {
            rng.shuffle(&mut order);
            order.clone()
        },
        |n, &i, _, g| mse(&n[0], &train_pairs[i], &mut g[0]),
        |n| {
            let mut scratch = n[0].zero_grads();
            let mut total = 0.0;
            for p in &val_pairs {
                total += mse(&n[0], p, &mut scratch)?;
            }
            Ok(total / val_pairs.len() as f64)
        },
    )?;
    let report = TrainReport {
        kind: encoder.kind(),
        epochs: cfg.epochs,
        train_loss: curves.train,
        val_loss: curves.val,
        dataset_hash: dataset_hash.to_string(),
        config: cfg.clone(),
        param_hash: param_hash(&nets),
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    Ok((Decoder::new(nets.pop().unwrap()), report))
}

/// Linear-output encoder used when a fixed, known map is wanted (tests,
/// decoder sanity checks).
pub fn linear_encoder(kind: RepKind, weights: &[f64], input: usize, output: usize) -> Result<Encoder> {
    let mut net = Mlp::zeros(&[input, output], Activation::Linear)?;
    net.set_params(&[weights, &vec![0.0; output][..]].concat())?;
    Encoder::from_net(kind, net)
}
