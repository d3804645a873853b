//! Acceptance suite. Each test prints one `criterion N ... PASS|FAIL` line.
//! Run with `cargo test -p arc-lab-core --test acceptance -- --nocapture`.

use arc_lab::actdist::{compute_matrix, ActionableDistanceMatrix, ExpectationMode, KlMode, DEFAULT_OP_BUDGET};
use arc_lab::analysis::{euclidean, perturbation_spread, Factor};
use arc_lab::clustering::{kmeans_fit, purity};
use arc_lab::gridworld::{
    build_directed_grid, build_four_rooms, build_wall_world, Cell, DeterministicMdp, EnvSpec,
    GridMdp, StateId, TableMdp,
};
use arc_lab::nn::{Activation, Mlp};
use arc_lab::representations::{
    fit_arc, loss_arc, loss_inverse, loss_predictive, loss_slowness, loss_vae, Encoder, TrainConfig,
};
use arc_lab::rng::Rng;
use arc_lab::softgcp::{soft_value_iteration, SoftGoalPolicy, SoftViParams};
use nalgebra::{DMatrix, DVector};

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn report(n: usize, name: &str, pass: bool, detail: String) {
    println!("criterion {n:>2} {name:<28} {} ({detail})", if pass { "PASS" } else { "FAIL" });
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn exact_matrix(mdp: &GridMdp, alpha: f64) -> ActionableDistanceMatrix {
    let gcp = SoftGoalPolicy::solve(mdp, SoftViParams::default().with_alpha(alpha)).unwrap();
    compute_matrix(&gcp, &ExpectationMode::ExactAllStates, KlMode::Symmetric, DEFAULT_OP_BUDGET).unwrap()
}

/// ARC encoder fit to the exact matrix over every state of `mdp`.
fn arc_encoder(mdp: &GridMdp, d: &ActionableDistanceMatrix, cfg: &TrainConfig) -> Encoder {
    let features = mdp.feature_table();
    let all: Vec<usize> = (0..mdp.num_states()).collect();
    fit_arc(&features, |i, j| d.get(i, j), &all, &all, cfg, "exact").unwrap().encoder
}

fn arc_config(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        ..TrainConfig::default()
    }
}

// ---------------------------------------------------------------- criterion 1

/// Newton's method on `F(V) = V − α·lse((r + γV')/α)`, independent of the
/// library's Jacobi sweep.
fn newton_oracle<M: DeterministicMdp>(mdp: &M, goal: usize, p: &SoftViParams) -> Vec<f64> {
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    // Warm start with plain damped iteration so Newton is in its basin.
    let mut v = vec![0.0; ns];
    for _ in 0..200 {
        let old = v.clone();
        for s in (0..ns).filter(|&s| s != goal) {
            let q: Vec<f64> = (0..na).map(|a| p.step_reward + p.gamma * old[mdp.next_state(s, a)]).collect();
            let m = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            v[s] = m + p.alpha * q.iter().map(|x| ((x - m) / p.alpha).exp()).sum::<f64>().ln();
        }
    }
    for _ in 0..50 {
        let mut f = DVector::zeros(ns);
        let mut jac = DMatrix::identity(ns, ns);
        for s in 0..ns {
            if s == goal {
                f[s] = v[s] - p.goal_reward;
                continue;
            }
            let q: Vec<f64> = (0..na).map(|a| p.step_reward + p.gamma * v[mdp.next_state(s, a)]).collect();
            let m = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = q.iter().map(|x| ((x - m) / p.alpha).exp()).collect();
            let z: f64 = w.iter().sum();
            f[s] = v[s] - (m + p.alpha * z.ln());
            for a in 0..na {
                jac[(s, mdp.next_state(s, a))] -= p.gamma * w[a] / z;
            }
        }
        let step = jac.lu().solve(&f).unwrap();
        for s in 0..ns {
            v[s] -= step[s];
        }
        if step.amax() < 1e-14 {
            break;
        }
    }
    v
}

/// Every successor table with `ns` states and `na` actions.
fn all_tables(ns: usize, na: usize) -> impl Iterator<Item = TableMdp> {
    let cells = ns * na;
    (0..ns.pow(cells as u32)).map(move |mut code| {
        let next = (0..cells)
            .map(|_| {
                let s = code % ns;
                code /= ns;
                s
            })
            .collect();
        TableMdp::new(ns, na, next).unwrap()
    })
}

#[test]
fn criterion_01_soft_vi_exactness() {
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for alpha in [0.1, 1.0] {
        let p = SoftViParams::default().with_alpha(alpha);
        for (ns, na) in [(1, 1), (1, 2), (2, 1), (2, 2), (2, 3), (3, 1), (3, 2), (3, 3), (4, 1), (4, 2)] {
            // Goal fixed to state 0: any other goal is a relabelling.
            for mdp in all_tables(ns, na) {
                let t = soft_value_iteration(&mdp, 0, &p).unwrap();
                let oracle = newton_oracle(&mdp, 0, &p);
                for s in 0..ns {
                    worst = worst.max((t.v[s] - oracle[s]).abs());
                }
                count += 1;
            }
        }
    }
    let mut residual: f64 = 0.0;
    for name in ["wall", "four_rooms", "directed", "open"] {
        let mdp = EnvSpec::by_name(name).unwrap().build().unwrap();
        let alpha = if mdp.is_directed() { 0.5 } else { 0.1 };
        let gcp = SoftGoalPolicy::solve(&mdp, SoftViParams::default().with_alpha(alpha)).unwrap();
        residual = residual.max(gcp.max_bellman_residual(&mdp));
    }
    let pass = worst < 1e-6 && residual < 1e-9;
    report(
        1,
        "soft VI exactness",
        pass,
        format!("{count} MDPs, max |V − oracle| {worst:.2e}, max Bellman residual {residual:.2e}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 2

/// Norm-wise relative error between the analytic gradient and central
/// differences of `loss` over every parameter of every net.
fn gradient_error<F>(nets: &[Mlp], loss: F) -> f64
where
    F: Fn(&[Mlp], &mut [Vec<f64>]) -> f64,
{
    let mut grads: Vec<Vec<f64>> = nets.iter().map(|n| n.zero_grads()).collect();
    loss(nets, &mut grads);
    let h = 1e-6;
    let mut diff = 0.0f64;
    for k in 0..nets.len() {
        for i in 0..nets[k].param_count() {
            let mut p = nets.to_vec();
            let mut scratch: Vec<Vec<f64>> = nets.iter().map(|n| n.zero_grads()).collect();
            p[k].params_mut()[i] += h;
            let up = loss(&p, &mut scratch);
            p[k].params_mut()[i] -= 2.0 * h;
            let down = loss(&p, &mut scratch);
            let fd = (up - down) / (2.0 * h);
            diff += (fd - grads[k][i]).powi(2);
        }
    }
    let norm: f64 = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
    diff.sqrt() / norm.max(1e-12)
}

fn rand_vec(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect()
}

#[test]
fn criterion_02_gradient_fidelity() {
    use arc_lab::downstream::MetaPolicy;
    let mut rng = Rng::new(2024);
    let (feat, d, na) = (3, 2, 4);
    let mut worst = [0.0f64; 6];
    let net = |sizes: &[usize], rng: &mut Rng| Mlp::new(sizes, Activation::Tanh, rng).unwrap();
    for _ in 0..10 {
        let x0 = rand_vec(&mut rng, feat);
        let x1 = rand_vec(&mut rng, feat);
        let noise = rand_vec(&mut rng, d);
        let target = rng.uniform_range(0.0, 3.0);
        let a = rng.below(na);

        let phi = net(&[feat, 8, 8, d], &mut rng);
        worst[0] = worst[0].max(gradient_error(&[phi], |n, g| {
            loss_arc(&n[0], &x0, &x1, target, &mut g[0]).unwrap()
        }));

        let nets = [net(&[feat, 8, 2 * d], &mut rng), net(&[d, 8, feat], &mut rng)];
        worst[1] = worst[1].max(gradient_error(&nets, |n, g| {
            let (ge, gd) = g.split_at_mut(1);
            loss_vae(&n[0], &n[1], &x0, 0.7, &noise, &mut ge[0], &mut gd[0]).unwrap()
        }));
        worst[2] = worst[2].max(gradient_error(&nets, |n, g| {
            let (ge, gd) = g.split_at_mut(1);
            loss_slowness(&n[0], &n[1], &x0, &x1, 1.3, 0.7, &noise, &mut ge[0], &mut gd[0]).unwrap()
        }));

        let nets = [net(&[feat, 8, d], &mut rng), net(&[d + na, 8, d], &mut rng), net(&[d, 8, feat], &mut rng)];
        worst[3] = worst[3].max(gradient_error(&nets, |n, g| {
            let [g0, g1, g2] = g else { unreachable!() };
            loss_predictive(&n[0], &n[1], &n[2], &x0, a, na, &x1, g0, g1, g2).unwrap()
        }));

        let nets = [net(&[feat, 8, d], &mut rng), net(&[d + na, 8, d], &mut rng), net(&[2 * d, 8, na], &mut rng)];
        worst[4] = worst[4].max(gradient_error(&nets, |n, g| {
            let [g0, g1, g2] = g else { unreachable!() };
            loss_inverse(&n[0], &n[1], &n[2], &x0, a, na, &x1, 0.5, g0, g1, g2).unwrap()
        }));

        let input = rand_vec(&mut rng, 6);
        let embedded = vec![rand_vec(&mut rng, 2), rand_vec(&mut rng, 2)];
        for mut meta in [MetaPolicy::categorical(6, 4, 10).unwrap(), MetaPolicy::gaussian(6, &embedded, 10).unwrap()] {
            let p = rand_vec(&mut rng, meta.net.param_count());
            meta.net.set_params(&p).unwrap();
            let action = meta.sample(&input, &mut rng).unwrap();
            let template = meta.clone();
            let err = gradient_error(&[meta.net.clone()], |n, g| {
                let mut m = template.clone();
                m.net = n[0].clone();
                let (lp, grad) = m.log_prob_grad(&input, &action).unwrap();
                g[0].iter_mut().zip(grad).for_each(|(a, b)| *a += b);
                lp
            });
            worst[5] = worst[5].max(err);
        }
    }
    let pass = worst.iter().all(|&e| e < 1e-4);
    let names = ["arc", "vae", "slowness", "predictive", "inverse", "meta"];
    let detail: Vec<String> = names.iter().zip(worst).map(|(n, e)| format!("{n} {e:.1e}")).collect();
    report(2, "gradient fidelity", pass, detail.join(", "));
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 3

/// Mean embedding distance of horizontally two-apart pairs straddling the
/// wall, divided by the same for pairs with a free cell between them.
fn wall_ratio(mdp: &GridMdp, z: &[Vec<f64>]) -> f64 {
    let cx = mdp.width() / 2;
    let (mut cross, mut open) = (Vec::new(), Vec::new());
    for y in 0..mdp.height() {
        for x in 0..mdp.width().saturating_sub(2) {
            let (a, m, b) = (Cell::new(x, y), Cell::new(x + 1, y), Cell::new(x + 2, y));
            let (Some(sa), Some(sb)) = (mdp.state_at(a, None), mdp.state_at(b, None)) else {
                continue;
            };
            let d = euclidean(&z[sa.0], &z[sb.0]);
            if x + 1 == cx && !mdp.is_free(m) {
                cross.push(d);
            } else if x + 1 != cx && x != cx && x + 2 != cx && mdp.is_free(m) {
                open.push(d);
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    mean(&cross) / mean(&open)
}

#[test]
fn criterion_03_wall_separation() {
    let mdp = build_wall_world(9, 9, 0).unwrap();
    let d = exact_matrix(&mdp, 0.1);
    let ratios: Vec<f64> = SEEDS
        .iter()
        .map(|&s| wall_ratio(&mdp, &arc_encoder(&mdp, &d, &arc_config(s)).embed_all(&mdp).unwrap()))
        .collect();
    let identity = wall_ratio(&mdp, &Encoder::identity(2).embed_all(&mdp).unwrap());
    let arc = median(ratios.clone());
    let pass = arc >= 2.0 && (identity - 1.0).abs() <= 0.01;
    report(3, "wall separation", pass, format!("ARC median {arc:.3} {ratios:.3?}, identity {identity:.4}"));
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 4

#[test]
fn criterion_04_room_decomposition() {
    let mdp = build_four_rooms(9, 9).unwrap();
    let d = exact_matrix(&mdp, 0.1);
    let labelled: Vec<StateId> = mdp.states().filter(|&s| mdp.room_of(s).is_some()).collect();
    let labels: Vec<usize> = labelled.iter().map(|&s| mdp.room_of(s).unwrap()).collect();
    let purities: Vec<f64> = SEEDS
        .iter()
        .map(|&s| {
            let z = arc_encoder(&mdp, &d, &arc_config(s)).embed_all(&mdp).unwrap();
            let points: Vec<Vec<f64>> = labelled.iter().map(|s| z[s.0].clone()).collect();
            let model = kmeans_fit(&points, 4, s, 300).unwrap();
            purity(&model.assignment, &labels).unwrap()
        })
        .collect();
    let m = median(purities.clone());
    let pass = m >= 0.85;
    report(4, "room decomposition", pass, format!("median purity {m:.3} {purities:.3?}"));
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 5

#[test]
fn criterion_05_perturbation_spread() {
    let mdp = build_directed_grid(5, 5).unwrap();
    let d = exact_matrix(&mdp, 0.5);
    let bases: Vec<StateId> = mdp.states().collect();
    let spread = |enc: &Encoder| {
        perturbation_spread(enc, &mdp, &bases, Factor::Position, Factor::Heading)
            .unwrap()
            .ratio
            .unwrap()
    };
    let ratios: Vec<f64> = SEEDS.iter().map(|&s| spread(&arc_encoder(&mdp, &d, &arc_config(s)))).collect();
    let identity = spread(&Encoder::identity(mdp.feature_dim()));
    let arc = median(ratios.clone());
    let pass = arc >= 2.0 && (0.5..=1.5).contains(&identity);
    report(5, "perturbation spread", pass, format!("ARC median {arc:.3} {ratios:.3?}, identity {identity:.3}"));
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 7

#[test]
fn criterion_07_chain_fit() {
    let n = 8;
    let features: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64 / (n - 1) as f64]).collect();
    let all: Vec<usize> = (0..n).collect();
    let dist = |i: usize, j: usize| (i as f64 - j as f64).abs();
    let cfg = TrainConfig {
        epochs: 600,
        learning_rate: 3e-3,
        ..TrainConfig::default()
    };
    let enc = fit_arc(&features, dist, &all, &all, &cfg, "chain").unwrap().encoder;
    let z: Vec<Vec<f64>> = features.iter().map(|f| enc.encode(f).unwrap()).collect();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            worst = worst.max((euclidean(&z[i], &z[j]) - dist(i, j)).abs());
        }
    }
    let bound = 0.05 * (n - 1) as f64;
    let pass = worst < bound;
    report(7, "chain embedding fit", pass, format!("max residual {worst:.4} < {bound:.3}"));
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 6

/// Episodes at which sparse-only Q-learning is still below 0.2 success
/// (median 0.12 over the five seeds when frozen).
const SHAPING_BUDGET: usize = 500;

#[test]
fn criterion_06_reward_shaping() {
    use arc_lab::downstream::{train_shaped, QLearnerConfig, ShapedRewardSpec, ShapingTask};
    use arc_lab::gridworld::{build_open_grid, FeatureFrame};
    let large = build_open_grid(15, 15).unwrap();
    let frame = FeatureFrame {
        offset_x: 4,
        offset_y: 4,
        extent_width: 15,
        extent_height: 15,
    };
    let small = build_open_grid(7, 7).unwrap().with_frame(frame).unwrap();
    let d = exact_matrix(&small, 0.1);
    let task = ShapingTask::corners(&large, 10).unwrap();
    let q = QLearnerConfig::default();
    let success = |spec: &ShapedRewardSpec, seed: u64| {
        train_shaped(&large, spec, &task, &q, SHAPING_BUDGET, 0, seed).unwrap().last().unwrap().success_rate
    };
    let sparse_spec = ShapedRewardSpec::new(Encoder::identity(2), &large, 0.0).unwrap();
    let hand_spec = ShapedRewardSpec::new(Encoder::identity(2), &large, 1.0).unwrap();
    let (mut sparse, mut arc, mut hand) = (Vec::new(), Vec::new(), Vec::new());
    for &seed in &SEEDS {
        let cfg = TrainConfig {
            activation: Activation::Relu,
            ..arc_config(seed)
        };
        let enc = arc_encoder(&small, &d, &cfg);
        arc.push(success(&ShapedRewardSpec::new(enc, &large, 1.0).unwrap(), seed));
        sparse.push(success(&sparse_spec, seed));
        hand.push(success(&hand_spec, seed));
    }
    let (ms, ma, mh) = (median(sparse.clone()), median(arc.clone()), median(hand));
    let pass = ms < 0.2 && ma >= 0.8;
    report(
        6,
        "reward shaping",
        pass,
        format!("{SHAPING_BUDGET} episodes: sparse {ms:.2} {sparse:.2?}, ARC {ma:.2} {arc:.2?}, hand-designed {mh:.2}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 8

const HRL_ITERS: usize = 200;
const HRL_CLUSTERS: usize = 8;
const HRL_META_STEPS: usize = 8;
const HRL_META_HORIZON: usize = 10;

#[test]
fn criterion_08_hrl_cluster_space() {
    use arc_lab::downstream::{cluster_commander, mean_return, train_meta, HrlEnv, HrlTask, MetaPolicy, ReinforceConfig};
    let mdp = build_four_rooms(9, 9).unwrap();
    let gcp = SoftGoalPolicy::solve(&mdp, SoftViParams::default()).unwrap();
    let d = exact_matrix(&mdp, 0.1);
    let (mut ratios, mut detail) = (Vec::new(), Vec::new());
    for &seed in &SEEDS {
        let enc = arc_encoder(&mdp, &d, &arc_config(seed));
        let (commander, _) = cluster_commander(&enc, &mdp, HRL_CLUSTERS, seed).unwrap();
        let task = HrlTask::room_sequence(&mdp, 8, HRL_META_STEPS, seed).unwrap();
        let env = HrlEnv {
            mdp: &mdp,
            gcp: &gcp,
            commander: &commander,
            task: &task,
        };
        let mut meta =
            MetaPolicy::categorical(mdp.feature_dim() + task.context_dim(), HRL_CLUSTERS, HRL_META_HORIZON).unwrap();
        let random = mean_return(&meta, env, 2000, seed).unwrap();
        train_meta(&mut meta, env, HRL_ITERS, &ReinforceConfig::default(), seed).unwrap();
        let trained = mean_return(&meta, env, 2000, seed + 1000).unwrap();
        ratios.push(trained / random);
        detail.push(format!("{trained:.2}/{random:.2}"));
    }
    let m = median(ratios.clone());
    let pass = m >= 3.0;
    report(8, "HRL cluster space", pass, format!("median ratio {m:.2} {ratios:.2?}, trained/random {detail:?}"));
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 9

/// Episodes at which the raw-feature learner's best greedy score is still
/// below 0.75 (median 0.45 over the five seeds when frozen).
const FEATURE_BUDGET: usize = 100;

#[test]
fn criterion_09_features_for_policies() {
    use arc_lab::downstream::{train_feature_policy, FeatureTask, LinearQConfig};
    use arc_lab::gridworld::build_open_grid;
    let mdp = build_open_grid(9, 9).unwrap();
    let d = exact_matrix(&mdp, 0.1);
    let task = FeatureTask::reach_avoid(&mdp, 2.0).unwrap();
    let cfg = LinearQConfig::default();
    // Best normalized score of the greedy policy over the budget.
    let best = |enc: &Encoder, seed: u64| {
        train_feature_policy(&mdp, &task, enc, &cfg, FEATURE_BUDGET, seed)
            .unwrap()
            .iter()
            .map(|p| p.success_rate)
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let (mut raw, mut arc) = (Vec::new(), Vec::new());
    for &seed in &SEEDS {
        raw.push(best(&Encoder::identity(2), seed));
        arc.push(best(&arc_encoder(&mdp, &d, &arc_config(seed)), seed));
    }
    let (mr, ma) = (median(raw.clone()), median(arc.clone()));
    let pass = mr < 0.75 && ma >= 0.9;
    report(
        9,
        "features for policies",
        pass,
        format!("{FEATURE_BUDGET} episodes: raw {mr:.2} {raw:.2?}, ARC {ma:.2} {arc:.2?} of oracle"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 10

fn output_files(dir: &std::path::Path) -> std::collections::BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv" || x == "svg"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}

#[test]
fn criterion_10_determinism() {
    use arc_lab::harness::{run, Cache, ExperimentConfig, FeaturesConfig, HrlConfig, RunOptions, ShapingConfig};
    let cfg = ExperimentConfig {
        shaping: Some(ShapingConfig::default()),
        features: Some(FeaturesConfig::default()),
        hrl: Some(HrlConfig::default()),
        ..ExperimentConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let mut secs = Vec::new();
    let mut reports = Vec::new();
    for name in ["a", "b"] {
        let opts = RunOptions {
            out_dir: dir.path().join(name),
            cache: Cache::disabled(),
        };
        let t = std::time::Instant::now();
        reports.push(run(&cfg, &opts, &[]).unwrap());
        secs.push(t.elapsed().as_secs_f64());
    }
    let (a, b) = (output_files(&dir.path().join("a")), output_files(&dir.path().join("b")));
    let differing: Vec<&String> = a.keys().filter(|k| a.get(*k) != b.get(*k)).collect();
    let metrics_equal = reports[0].stages.iter().zip(&reports[1].stages).all(|(x, y)| x.metrics == y.metrics);
    let pass = !a.is_empty() && a.len() == b.len() && differing.is_empty() && metrics_equal;
    report(
        10,
        "determinism",
        pass,
        format!("{} files, {} differ, runs took {:.1}s and {:.1}s", a.len(), differing.len(), secs[0], secs[1]),
    );
    assert!(pass, "differing outputs: {differing:?}");
}
