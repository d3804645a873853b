use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cache::{Cache, CODE_VERSION};
use super::config::{DactMode, ExperimentConfig, HrlTaskKind, RepresentationConfig};
use crate::actdist::{compute_matrix, ActionableDistanceMatrix, ExpectationMode};
use crate::analysis::{
    classical_mds, export_scatter, gap_statistic, perturbation_spread, plot_coordinates, sample_base_states, stress,
    ColorBy, Factor,
};
use crate::clustering::{kmeans_fit, purity};
use crate::downstream::{
    cluster_commander, mean_return, train_feature_policy, train_meta, train_shaped, Commander, CurvePoint,
    FeatureTask, HrlEnv, HrlTask, MetaKind, MetaPolicy, ShapedRewardSpec, ShapingTask,
};
use crate::error::{Error, Result};
use crate::gridworld::{build_open_grid, FeatureFrame, GridMdp};
use crate::representations::{
    collect_dataset, train, train_decoder, write_embedding_csv, Encoder, RepKind, Split, TrainConfig, TrainReport,
    TrajectoryDataset,
};
use crate::rng::{derive_seed, Rng, RNG_ALGORITHM};
use crate::softgcp::{bellman_residual, success_rate, PolicyArtifact, SoftGoalPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Gcp,
    Dataset,
    Dact,
    Representations,
    Cluster,
    Analyze,
    Shaping,
    Features,
    Hrl,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Gcp,
        Stage::Dataset,
        Stage::Dact,
        Stage::Representations,
        Stage::Cluster,
        Stage::Analyze,
        Stage::Shaping,
        Stage::Features,
        Stage::Hrl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Gcp => "gcp",
            Stage::Dataset => "dataset",
            Stage::Dact => "dact",
            Stage::Representations => "representations",
            Stage::Cluster => "cluster",
            Stage::Analyze => "analyze",
            Stage::Shaping => "shaping",
            Stage::Features => "features",
            Stage::Hrl => "hrl",
        }
    }

    fn needs_dact(cfg: &ExperimentConfig) -> bool {
        cfg.representations.iter().any(|r| r.kind == RepKind::Arc)
    }

    fn deps(self, cfg: &ExperimentConfig) -> Vec<Stage> {
        match self {
            Stage::Gcp | Stage::Shaping => vec![],
            Stage::Dataset => vec![Stage::Gcp],
            Stage::Dact => match cfg.dact.mode {
                DactMode::Exact => vec![Stage::Gcp],
                DactMode::Dataset => vec![Stage::Gcp, Stage::Dataset],
            },
            Stage::Representations if Self::needs_dact(cfg) => vec![Stage::Dataset, Stage::Dact],
            Stage::Representations => vec![Stage::Dataset],
            Stage::Cluster | Stage::Features => vec![Stage::Representations],
            Stage::Analyze => vec![Stage::Representations, Stage::Dact],
            Stage::Hrl => vec![Stage::Gcp, Stage::Representations],
        }
    }

    /// Stages a full run executes: the core chain plus every configured
    /// downstream task.
    pub fn configured(cfg: &ExperimentConfig) -> Vec<Stage> {
        Stage::ALL
            .into_iter()
            .filter(|s| match s {
                Stage::Shaping => cfg.shaping.is_some(),
                Stage::Features => cfg.features.is_some(),
                Stage::Hrl => cfg.hrl.is_some(),
                _ => true,
            })
            .collect()
    }

    fn closure(targets: &[Stage], cfg: &ExperimentConfig) -> BTreeSet<Stage> {
        let mut out = BTreeSet::new();
        let mut todo: Vec<Stage> = targets.to_vec();
        while let Some(s) = todo.pop() {
            if out.insert(s) {
                todo.extend(s.deps(cfg));
            }
        }
        out
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: Stage,
    /// True when every artifact of the stage came from the cache.
    pub cache_hit: bool,
    pub seconds: f64,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub seed: u64,
    pub tool_version: String,
    pub rng_algorithm: String,
    pub stages: Vec<StageReport>,
    /// Files written, relative to the output directory.
    pub outputs: Vec<String>,
    pub wall_clock_secs: f64,
}

impl RunReport {
    pub fn stage(&self, stage: Stage) -> Option<&StageReport> {
        self.stages.iter().find(|s| s.stage == stage)
    }

    pub fn metric(&self, stage: Stage, name: &str) -> Option<f64> {
        self.stage(stage).and_then(|s| s.metrics.get(name).copied())
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub cache: Cache,
}

struct Writer<'a> {
    dir: &'a Path,
    outputs: Vec<String>,
}

impl Writer<'_> {
    fn path(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.dir.join(name)
    }

    fn csv<R, I>(&mut self, name: &str, header: &[&str], rows: I) -> Result<()>
    where
        I: IntoIterator<Item = R>,
        R: IntoIterator,
        R::Item: AsRef<[u8]>,
    {
        let path = self.path(name);
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(header)?;
        for row in rows {
            w.write_record(row)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))
    }

    fn with_file(&mut self, name: &str, f: impl FnOnce(fs::File) -> Result<()>) -> Result<()> {
        let path = self.path(name);
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        f(file)
    }
}

/// Output of one cached computation.
struct Cached<T> {
    key: String,
    value: T,
    hit: bool,
}

fn cached_json<T, F>(cache: &Cache, stage: &str, key: String, compute: F) -> Result<Cached<T>>
where
    T: Serialize + for<'de> Deserialize<'de>,
    F: FnOnce() -> Result<T>,
{
    if let Some(bytes) = cache.get(stage, &key, "json")? {
        if let Ok(value) = serde_json::from_slice(&bytes) {
            return Ok(Cached { key, value, hit: true });
        }
    }
    let value = compute()?;
    cache.put(stage, &key, "json", &serde_json::to_vec(&value)?)?;
    Ok(Cached { key, value, hit: false })
}

fn gcp_artifact(mdp: &GridMdp, cfg: &ExperimentConfig, cache: &Cache) -> Result<Cached<SoftGoalPolicy>> {
    let params = cfg.gcp.params();
    let key = Cache::key("gcp", &(mdp.env_hash(), params))?;
    let art: Cached<PolicyArtifact> =
        cached_json(cache, "gcp", key, || Ok(SoftGoalPolicy::solve(mdp, params)?.to_artifact()))?;
    Ok(Cached {
        value: SoftGoalPolicy::from_artifact(mdp, art.value)?,
        key: art.key,
        hit: art.hit,
    })
}

fn dataset_artifact(
    mdp: &GridMdp,
    gcp: &Cached<SoftGoalPolicy>,
    cfg: &ExperimentConfig,
    seed: u64,
    cache: &Cache,
) -> Result<Cached<TrajectoryDataset>> {
    let d = &cfg.dataset;
    let key = Cache::key("dataset", &(&gcp.key, d.n_traj, d.horizon, seed))?;
    cached_json(cache, "dataset", key, || collect_dataset(&gcp.value, mdp, d.n_traj, d.horizon, seed))
}

fn dact_artifact(
    gcp: &Cached<SoftGoalPolicy>,
    dataset: Option<&Cached<TrajectoryDataset>>,
    cfg: &ExperimentConfig,
    cache: &Cache,
) -> Result<Cached<ActionableDistanceMatrix>> {
    let (mode, data_key) = match (cfg.dact.mode, dataset) {
        (DactMode::Exact, _) => (ExpectationMode::ExactAllStates, None),
        (DactMode::Dataset, Some(d)) => {
            let mut states = d.value.states(Split::All);
            states.sort();
            states.dedup();
            (ExpectationMode::DatasetStates(states), Some(d.key.as_str()))
        }
        (DactMode::Dataset, None) => return Err(Error::InvalidParameter("dataset mode needs a dataset".into())),
    };
    let key = Cache::key("dact", &(&gcp.key, cfg.dact.mode, data_key, cfg.dact.kl))?;
    if let Some(bytes) = cache.get("dact", &key, "bin")? {
        if let Ok(value) = ActionableDistanceMatrix::from_cache_bytes(&bytes) {
            return Ok(Cached { key, value, hit: true });
        }
    }
    let value = compute_matrix(&gcp.value, &mode, cfg.dact.kl, cfg.dact.op_budget)?;
    cache.put("dact", &key, "bin", &value.to_cache_bytes()?)?;
    Ok(Cached { key, value, hit: false })
}

struct TrainedRep {
    kind: RepKind,
    encoder: Encoder,
    report: TrainReport,
    hit: bool,
}

fn rep_artifact(
    mdp: &GridMdp,
    rep: &RepresentationConfig,
    seed: u64,
    dataset: &Cached<TrajectoryDataset>,
    dact: Option<&Cached<ActionableDistanceMatrix>>,
    cache: &Cache,
) -> Result<TrainedRep> {
    let train_cfg = TrainConfig {
        seed,
        ..rep.train.clone()
    };
    let dact = if rep.kind == RepKind::Arc {
        Some(dact.ok_or_else(|| Error::InvalidParameter("ARC needs an actionable distance matrix".into()))?)
    } else {
        None
    };
    let key = Cache::key(
        "representations",
        &(rep.kind, &train_cfg, &dataset.key, dact.map(|d| d.key.as_str())),
    )?;
    let stem = cache.stem("representations", &key)?;
    if let Some(stem) = &stem {
        let report_path = stem.with_extension("report.json");
        if let (Ok((encoder, _)), Ok(text)) = (Encoder::load(stem), fs::read(&report_path)) {
            if let Ok(report) = serde_json::from_slice(&text) {
                return Ok(TrainedRep {
                    kind: rep.kind,
                    encoder,
                    report,
                    hit: true,
                });
            }
        }
    }
    let model = train(rep.kind, &dataset.value, mdp, dact.map(|d| &d.value), &train_cfg)?;
    if let Some(stem) = &stem {
        model.encoder.save(stem, dataset.value.hash(), Some(&train_cfg))?;
        let report_path = stem.with_extension("report.json");
        fs::write(&report_path, serde_json::to_vec(&model.report)?).map_err(|e| Error::io(&report_path, e))?;
    }
    Ok(TrainedRep {
        kind: rep.kind,
        encoder: model.encoder,
        report: model.report,
        hit: false,
    })
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn curve_rows(label: &str, seed: u64, curve: &[CurvePoint]) -> Vec<Vec<String>> {
    curve
        .iter()
        .map(|p| {
            vec![
                label.to_string(),
                seed.to_string(),
                p.iteration.to_string(),
                p.mean_return.to_string(),
                p.success_rate.to_string(),
            ]
        })
        .collect()
}

const CURVE_HEADER: [&str; 5] = ["representation", "seed", "iteration", "mean_return", "success_rate"];

/// Everything computed so far in a run.
#[derive(Default)]
struct State {
    gcp: Option<Cached<SoftGoalPolicy>>,
    dataset: Option<Cached<TrajectoryDataset>>,
    dact: Option<Cached<ActionableDistanceMatrix>>,
    reps: Vec<TrainedRep>,
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    mdp: GridMdp,
    cache: &'a Cache,
    state: State,
}

type Metrics = BTreeMap<String, f64>;

impl Ctx<'_> {
    fn seed(&self, scope: &str) -> u64 {
        derive_seed(self.cfg.seed, scope)
    }

    fn gcp(&self) -> &Cached<SoftGoalPolicy> {
        self.state.gcp.as_ref().expect("gcp stage ran")
    }

    fn run_gcp(&mut self, out: &mut Writer<'_>, m: &mut Metrics) -> Result<bool> {
        let gcp = gcp_artifact(&self.mdp, self.cfg, self.cache)?;
        let params = *gcp.value.params();
        let mut rows = Vec::new();
        let mut worst: f64 = 0.0;
        for g in self.mdp.states() {
            let r = bellman_residual(&self.mdp, &params, gcp.value.tables(g)?);
            worst = worst.max(r);
            rows.push([g.0.to_string(), r.to_string()]);
        }
        out.csv("gcp_residuals.csv", &["goal", "bellman_residual"], rows)?;
        let horizon = 4 * (self.mdp.width() + self.mdp.height());
        let mut rng = Rng::derive(self.cfg.seed, "gcp-success");
        m.insert("max_bellman_residual".into(), worst);
        m.insert("goals".into(), self.mdp.num_states() as f64);
        m.insert("success_rate".into(), success_rate(&gcp.value, &self.mdp, 200, horizon, &mut rng)?);
        let hit = gcp.hit;
        self.state.gcp = Some(gcp);
        Ok(hit)
    }

    fn run_dataset(&mut self, m: &mut Metrics) -> Result<bool> {
        let ds = dataset_artifact(&self.mdp, self.gcp(), self.cfg, self.seed(&format!("dataset/{}", self.cfg.dataset.seed)), self.cache)?;
        let mut distinct = ds.value.states(Split::All);
        distinct.sort();
        distinct.dedup();
        m.insert("trajectories".into(), ds.value.len() as f64);
        m.insert("transitions".into(), ds.value.transitions(Split::All).len() as f64);
        m.insert("distinct_states".into(), distinct.len() as f64);
        m.insert("coverage".into(), distinct.len() as f64 / self.mdp.num_states() as f64);
        let hit = ds.hit;
        self.state.dataset = Some(ds);
        Ok(hit)
    }

    fn run_dact(&mut self, out: &mut Writer<'_>, m: &mut Metrics) -> Result<bool> {
        let d = dact_artifact(self.gcp(), self.state.dataset.as_ref(), self.cfg, self.cache)?;
        out.with_file("dact.csv", |f| d.value.write_csv(f))?;
        m.insert("states".into(), d.value.len() as f64);
        m.insert("off_diagonal_mean".into(), d.value.off_diagonal_mean());
        m.insert("max".into(), d.value.max());
        m.insert("triangle_violation_rate".into(), d.value.triangle_violation_rate(1e-9));
        let hit = d.hit;
        self.state.dact = Some(d);
        Ok(hit)
    }

    fn run_representations(&mut self, out: &mut Writer<'_>, m: &mut Metrics) -> Result<bool> {
        let dataset = self.state.dataset.as_ref().expect("dataset stage ran");
        let reps: Vec<TrainedRep> = self
            .cfg
            .representations
            .iter()
            .map(|r| {
                let seed = self.seed(&format!("representations/{}/{}", r.kind.name(), r.train.seed));
                rep_artifact(&self.mdp, r, seed, dataset, self.state.dact.as_ref(), self.cache)
            })
            .collect::<Result<_>>()?;
        for rep in &reps {
            let name = rep.kind.name();
            out.with_file(&format!("embedding_{name}.csv"), |f| write_embedding_csv(&self.mdp, &rep.encoder, f))?;
            let r = &rep.report;
            out.csv(
                &format!("training_{name}.csv"),
                &["epoch", "train_loss", "val_loss"],
                r.train_loss.iter().enumerate().map(|(i, t)| {
                    let v = r.val_loss.get(i).map_or(String::new(), f64::to_string);
                    [(i + 1).to_string(), t.to_string(), v]
                }),
            )?;
            if let Some(t) = r.train_loss.last() {
                m.insert(format!("{name}.final_train_loss"), *t);
            }
            if let Some(v) = r.val_loss.last() {
                m.insert(format!("{name}.final_val_loss"), *v);
            }
            m.insert(format!("{name}.latent_dim"), rep.encoder.latent_dim() as f64);
        }
        let hit = reps.iter().all(|r| r.hit);
        self.state.reps = reps;
        Ok(hit)
    }

    fn room_labels(&self) -> Option<Vec<usize>> {
        if self.mdp.num_rooms() < 2 {
            return None;
        }
        self.mdp.states().map(|s| self.mdp.room_of(s)).collect()
    }

    fn run_cluster(&mut self, out: &mut Writer<'_>, m: &mut Metrics) -> Result<()> {
        let ids: Vec<usize> = self.mdp.states().map(|s| s.0).collect();
        let labels = self.room_labels();
        for rep in &self.state.reps {
            let name = rep.kind.name();
            let points = rep.encoder.embed_all(&self.mdp)?;
            for &k in &self.cfg.analysis.clusters {
                let model = kmeans_fit(&points, k, self.seed(&format!("cluster/{name}/{k}")), 300)?;
                out.with_file(&format!("clusters_{name}_k{k}.csv"), |f| model.write_assignment_csv(&ids, f))?;
                m.insert(format!("{name}.k{k}.inertia"), model.inertia);
                if let Some(labels) = &labels {
                    m.insert(format!("{name}.k{k}.room_purity"), purity(&model.assignment, labels)?);
                }
            }
        }
        Ok(())
    }

    fn run_analyze(&mut self, out: &mut Writer<'_>, m: &mut Metrics) -> Result<()> {
        let mdp = &self.mdp;
        let color = self.cfg.analysis.color_by.unwrap_or(if mdp.num_rooms() > 0 { ColorBy::Room } else { ColorBy::X });
        if let Some(d) = &self.state.dact {
            let n = d.value.len();
            let coords = classical_mds(d.value.values(), n, 2)?;
            m.insert("dact.mds_stress".into(), stress(d.value.values(), &coords));
            out.csv(
                "dact_mds.csv",
                &["state_index", "u", "v"],
                d.value.states().iter().zip(&coords).map(|(s, c)| [s.0.to_string(), c[0].to_string(), c[1].to_string()]),
            )?;
        }
        let labels = self.room_labels();
        let mut spread_rows = Vec::new();
        let bases = mdp.is_directed().then(|| {
            let mut rng = Rng::derive(self.cfg.seed, "spread-bases");
            sample_base_states(mdp, self.cfg.analysis.spread_bases, &mut rng)
        });
        for rep in &self.state.reps {
            let name = rep.kind.name();
            if matches!(rep.encoder.latent_dim(), 2 | 3) {
                let coords = plot_coordinates(&rep.encoder, mdp)?;
                out.csv(
                    &format!("coords_{name}.csv"),
                    &["state_index", "u", "v"],
                    mdp.states().zip(&coords).map(|(s, c)| [s.0.to_string(), c[0].to_string(), c[1].to_string()]),
                )?;
                let path = out.path(&format!("scatter_{name}.svg"));
                export_scatter(&rep.encoder, mdp, color, &path)?;
            }
            if let Some(labels) = &labels {
                let points = rep.encoder.embed_all(mdp)?;
                let (cross, within) = gap_statistic(&points, labels)?;
                m.insert(format!("{name}.cross_room_min"), cross);
                m.insert(format!("{name}.within_room_median"), within);
            }
            if let Some(bases) = &bases {
                let r = perturbation_spread(&rep.encoder, mdp, bases, Factor::Position, Factor::Heading)?;
                let ratio = r.ratio.unwrap_or(f64::INFINITY);
                m.insert(format!("{name}.spread_ratio"), ratio);
                spread_rows.push([
                    name.to_string(),
                    r.important_spread.to_string(),
                    r.secondary_spread.to_string(),
                    ratio.to_string(),
                ]);
            }
        }
        if bases.is_some() {
            out.csv(
                "spread.csv",
                &["representation", "position_spread", "heading_spread", "ratio"],
                spread_rows,
            )?;
        }
        Ok(())
    }

    fn run_shaping(&mut self, out: &mut Writer<'_>, m: &mut Metrics) -> Result<bool> {
        let sc = self.cfg.shaping.as_ref().expect("shaping configured");
        let large = build_open_grid(sc.large_size, sc.large_size)?;
        let offset = (sc.large_size - sc.region_size) / 2;
        let region = build_open_grid(sc.region_size, sc.region_size)?.with_frame(FeatureFrame {
            offset_x: offset,
            offset_y: offset,
            extent_width: sc.large_size,
            extent_height: sc.large_size,
        })?;
        // The region gets its own exact matrix regardless of the main dact mode.
        let region_cfg = ExperimentConfig {
            dact: super::config::DactConfig {
                mode: DactMode::Exact,
                ..self.cfg.dact.clone()
            },
            ..self.cfg.clone()
        };
        let gcp = gcp_artifact(&region, &region_cfg, self.cache)?;
        let dataset = dataset_artifact(&region, &gcp, &region_cfg, self.seed(&format!("shaping/dataset/{}", self.cfg.dataset.seed)), self.cache)?;
        let needs_dact = sc.representations.iter().any(|r| r.kind == RepKind::Arc);
        let dact = needs_dact.then(|| dact_artifact(&gcp, None, &region_cfg, self.cache)).transpose()?;
        let mut hit = gcp.hit && dataset.hit && dact.as_ref().map_or(true, |d| d.hit);

        let task = ShapingTask::corners(&large, sc.min_start_distance)?;
        let dim = large.feature_dim();
        let mut rows = Vec::new();
        let mut finals: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for &s in &sc.seeds {
            let learner_seed = self.seed(&format!("shaping/learner/{s}"));
            let mut specs = vec![
                ("sparse".to_string(), ShapedRewardSpec::new(Encoder::identity(dim), &large, 0.0)?),
                ("hand".to_string(), ShapedRewardSpec::new(Encoder::identity(dim), &large, sc.alpha_scale)?),
            ];
            for r in &sc.representations {
                let seed = self.seed(&format!("shaping/{}/{s}", r.kind.name()));
                let rep = rep_artifact(&region, r, seed, &dataset, dact.as_ref(), self.cache)?;
                hit &= rep.hit;
                specs.push((r.kind.name().to_string(), ShapedRewardSpec::new(rep.encoder, &large, sc.alpha_scale)?));
            }
            for (label, spec) in &specs {
                let curve = train_shaped(&large, spec, &task, &sc.learner, sc.episodes, sc.eval_every, learner_seed)?;
                finals.entry(label.clone()).or_default().push(curve.last().map_or(0.0, |p| p.success_rate));
                rows.extend(curve_rows(label, s, &curve));
            }
        }
        out.csv("shaping_curve.csv", &CURVE_HEADER, rows)?;
        for (label, v) in finals {
            m.insert(format!("{label}.final_success"), median(v));
        }
        Ok(hit)
    }

    fn run_features(&mut self, out: &mut Writer<'_>, m: &mut Metrics) -> Result<()> {
        let fc = self.cfg.features.as_ref().expect("features configured");
        let mdp = &self.mdp;
        let task = FeatureTask::reach_avoid(mdp, fc.danger_radius)?;
        m.insert("optimal_return".into(), task.optimal_return(mdp));
        m.insert("random_return".into(), task.random_return(mdp));
        let mut rows = Vec::new();
        for rep in &self.state.reps {
            let name = rep.kind.name();
            let (mut best, mut last) = (Vec::new(), Vec::new());
            for &s in &fc.seeds {
                let seed = self.seed(&format!("features/{s}"));
                let curve = train_feature_policy(mdp, &task, &rep.encoder, &fc.learner, fc.episodes, seed)?;
                best.push(curve.iter().map(|p| p.success_rate).fold(f64::NEG_INFINITY, f64::max));
                last.push(curve.last().map_or(f64::NAN, |p| p.success_rate));
                rows.extend(curve_rows(name, s, &curve));
            }
            m.insert(format!("{name}.best_score"), median(best));
            m.insert(format!("{name}.final_score"), median(last));
        }
        out.csv("features_curve.csv", &CURVE_HEADER, rows)
    }

    fn run_hrl(&mut self, out: &mut Writer<'_>, m: &mut Metrics) -> Result<()> {
        let hc = self.cfg.hrl.as_ref().expect("hrl configured");
        let mdp = &self.mdp;
        let gcp = &self.gcp().value;
        let mut curve_out = Vec::new();
        let mut summary = Vec::new();
        for rep in &self.state.reps {
            let name = rep.kind.name();
            let mut ratios = Vec::new();
            for &s in &hc.seeds {
                let seed = |scope: &str| self.seed(&format!("hrl/{scope}/{name}/{s}"));
                let task = match hc.task {
                    HrlTaskKind::Rooms => HrlTask::room_sequence(mdp, hc.length, hc.meta_steps, seed("task"))?,
                    HrlTaskKind::Waypoints => {
                        HrlTask::waypoints(mdp, hc.length, hc.waypoint_gap, hc.meta_steps, seed("task"))?
                    }
                };
                let input_dim = mdp.feature_dim() + task.context_dim();
                let (commander, mut meta) = match hc.meta {
                    MetaKind::ClusterCategorical => {
                        let (c, _) = cluster_commander(&rep.encoder, mdp, hc.clusters, seed("kmeans"))?;
                        (c, MetaPolicy::categorical(input_dim, hc.clusters, hc.meta_horizon)?)
                    }
                    MetaKind::LatentGaussian => {
                        let dataset = &self.state.dataset.as_ref().expect("dataset stage ran").value;
                        let dcfg = TrainConfig {
                            seed: seed("decoder"),
                            ..hc.decoder.clone()
                        };
                        let (decoder, _) = train_decoder(&rep.encoder, dataset, mdp, &dcfg)?;
                        let embedded = rep.encoder.embed_all(mdp)?;
                        (
                            Commander::from_decoder(decoder, mdp),
                            MetaPolicy::gaussian(input_dim, &embedded, hc.meta_horizon)?,
                        )
                    }
                };
                let env = HrlEnv {
                    mdp,
                    gcp,
                    commander: &commander,
                    task: &task,
                };
                let random = mean_return(&meta, env, hc.eval_episodes, seed("eval-random"))?;
                let curve = train_meta(&mut meta, env, hc.iters, &hc.reinforce, seed("train"))?;
                let trained = mean_return(&meta, env, hc.eval_episodes, seed("eval-trained"))?;
                let ratio = trained / random;
                ratios.push(ratio);
                for p in &curve {
                    curve_out.push([
                        name.to_string(),
                        s.to_string(),
                        p.iteration.to_string(),
                        p.mean_return.to_string(),
                        p.clamped.to_string(),
                    ]);
                }
                summary.push([
                    name.to_string(),
                    s.to_string(),
                    random.to_string(),
                    trained.to_string(),
                    ratio.to_string(),
                ]);
            }
            m.insert(format!("{name}.median_ratio"), median(ratios));
        }
        out.csv(
            "hrl_curve.csv",
            &["representation", "seed", "iteration", "mean_return", "clamped"],
            curve_out,
        )?;
        out.csv(
            "hrl_summary.csv",
            &["representation", "seed", "random_return", "trained_return", "ratio"],
            summary,
        )
    }
}

/// Runs `targets` and everything they depend on (every configured stage when
/// `targets` is empty), writing CSVs, SVGs, `metrics.csv` and `report.json`
/// into `opts.out_dir`.
pub fn run(config: &ExperimentConfig, opts: &RunOptions, targets: &[Stage]) -> Result<RunReport> {
    let start = Instant::now();
    config.validate()?;
    let targets = if targets.is_empty() { Stage::configured(config) } else { targets.to_vec() };
    for t in &targets {
        let missing = match t {
            Stage::Shaping => config.shaping.is_none(),
            Stage::Features => config.features.is_none(),
            Stage::Hrl => config.hrl.is_none(),
            _ => false,
        };
        if missing {
            return Err(Error::Config(format!("stage `{}` has no section in the config", t.name())));
        }
    }
    let stages = Stage::closure(&targets, config);
    fs::create_dir_all(&opts.out_dir).map_err(|e| Error::io(&opts.out_dir, e))?;
    let mut out = Writer {
        dir: &opts.out_dir,
        outputs: Vec::new(),
    };
    let mut ctx = Ctx {
        cfg: config,
        mdp: config.env.build()?,
        cache: &opts.cache,
        state: State::default(),
    };
    let mut reports = Vec::new();
    for stage in stages {
        let t0 = Instant::now();
        let mut metrics = Metrics::new();
        let m = &mut metrics;
        let o = &mut out;
        let hit = match stage {
            Stage::Gcp => ctx.run_gcp(o, m),
            Stage::Dataset => ctx.run_dataset(m),
            Stage::Dact => ctx.run_dact(o, m),
            Stage::Representations => ctx.run_representations(o, m),
            Stage::Cluster => ctx.run_cluster(o, m).map(|_| false),
            Stage::Analyze => ctx.run_analyze(o, m).map(|_| false),
            Stage::Shaping => ctx.run_shaping(o, m),
            Stage::Features => ctx.run_features(o, m).map(|_| false),
            Stage::Hrl => ctx.run_hrl(o, m).map(|_| false),
        }
        .map_err(|e| e.in_stage(stage.name()))?;
        reports.push(StageReport {
            stage,
            cache_hit: hit,
            seconds: t0.elapsed().as_secs_f64(),
            metrics,
        });
    }
    out.csv(
        "metrics.csv",
        &["stage", "metric", "value"],
        reports.iter().flat_map(|r| {
            r.metrics.iter().map(|(k, v)| [r.stage.name().to_string(), k.clone(), v.to_string()])
        }),
    )?;
    out.outputs.push("report.json".into());
    let report = RunReport {
        name: config.name.clone(),
        config_hash: config.hash()?,
        config: config.clone(),
        seed: config.seed,
        tool_version: CODE_VERSION.to_string(),
        rng_algorithm: RNG_ALGORITHM.to_string(),
        stages: reports,
        outputs: out.outputs,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    let path = opts.out_dir.join("report.json");
    fs::write(&path, serde_json::to_vec_pretty(&report)?).map_err(|e| Error::io(&path, e))?;
    Ok(report)
}

/// One point of a sweep grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub name: String,
    pub alpha: Option<f64>,
    pub clusters: Option<usize>,
    pub alpha_scale: Option<f64>,
    pub latent_dim: Option<usize>,
}

impl SweepCell {
    fn grid(cfg: &ExperimentConfig) -> Vec<SweepCell> {
        fn axis<T: Copy>(v: &[T]) -> Vec<Option<T>> {
            if v.is_empty() {
                vec![None]
            } else {
                v.iter().copied().map(Some).collect()
            }
        }
        let s = &cfg.sweep;
        let mut cells = Vec::new();
        for &alpha in &axis(&s.alpha) {
            for &clusters in &axis(&s.clusters) {
                for &alpha_scale in &axis(&s.alpha_scale) {
                    for &latent_dim in &axis(&s.latent_dim) {
                        let mut parts = Vec::new();
                        if let Some(a) = alpha {
                            parts.push(format!("alpha={a}"));
                        }
                        if let Some(k) = clusters {
                            parts.push(format!("k={k}"));
                        }
                        if let Some(a) = alpha_scale {
                            parts.push(format!("alpha_scale={a}"));
                        }
                        if let Some(d) = latent_dim {
                            parts.push(format!("latent_dim={d}"));
                        }
                        cells.push(SweepCell {
                            name: if parts.is_empty() { "base".into() } else { parts.join("_") },
                            alpha,
                            clusters,
                            alpha_scale,
                            latent_dim,
                        });
                    }
                }
            }
        }
        cells
    }

    fn apply(&self, base: &ExperimentConfig) -> ExperimentConfig {
        let mut cfg = base.clone();
        cfg.sweep = Default::default();
        cfg.name = format!("{}/{}", base.name, self.name);
        if let Some(a) = self.alpha {
            cfg.gcp.alpha = a;
        }
        if let Some(k) = self.clusters {
            cfg.analysis.clusters = vec![k];
            if let Some(h) = &mut cfg.hrl {
                h.clusters = k;
            }
        }
        if let Some(a) = self.alpha_scale {
            if let Some(s) = &mut cfg.shaping {
                s.alpha_scale = a;
            }
        }
        if let Some(d) = self.latent_dim {
            let reps = cfg.representations.iter_mut().chain(cfg.shaping.iter_mut().flat_map(|s| &mut s.representations));
            for r in reps.filter(|r| r.kind != RepKind::Identity) {
                r.train.latent_dim = d;
            }
        }
        cfg
    }
}

/// Runs every cell of the config's sweep grid in parallel under
/// `out_dir/sweep/<cell>` and writes `sweep.csv` with one row per metric.
pub fn run_sweep(config: &ExperimentConfig, opts: &RunOptions) -> Result<Vec<(SweepCell, RunReport)>> {
    config.validate()?;
    let cells = SweepCell::grid(config);
    let results: Vec<(SweepCell, RunReport)> = cells
        .into_par_iter()
        .map(|cell| {
            let cfg = cell.apply(config);
            let cell_opts = RunOptions {
                out_dir: opts.out_dir.join("sweep").join(&cell.name),
                cache: opts.cache.clone(),
            };
            let report = run(&cfg, &cell_opts, &[])?;
            Ok((cell, report))
        })
        .collect::<Result<_>>()?;
    let opt = |v: Option<String>| v.unwrap_or_default();
    let mut rows = Vec::new();
    for (cell, report) in &results {
        for st in &report.stages {
            for (k, v) in &st.metrics {
                rows.push([
                    cell.name.clone(),
                    opt(cell.alpha.map(|a| a.to_string())),
                    opt(cell.clusters.map(|a| a.to_string())),
                    opt(cell.alpha_scale.map(|a| a.to_string())),
                    opt(cell.latent_dim.map(|a| a.to_string())),
                    st.stage.name().to_string(),
                    k.clone(),
                    v.to_string(),
                ]);
            }
        }
    }
    fs::create_dir_all(&opts.out_dir).map_err(|e| Error::io(&opts.out_dir, e))?;
    let mut w = Writer {
        dir: &opts.out_dir,
        outputs: Vec::new(),
    };
    w.csv(
        "sweep.csv",
        &["cell", "alpha", "k", "alpha_scale", "latent_dim", "stage", "metric", "value"],
        rows,
    )?;
    Ok(results)
}
