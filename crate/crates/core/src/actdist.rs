//! Actionable distance between goals: the average divergence between the
//! action distributions a soft goal-conditioned policy uses for two goals.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridworld::StateId;
use crate::hashing::content_hash;
use crate::softgcp::SoftGoalPolicy;

/// Default cap on `|S|^3 * |A|` for exact matrices.
pub const DEFAULT_OP_BUDGET: u64 = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum KlMode {
    #[default]
    Symmetric,
    Forward,
}

/// Which states the expectation over initial states runs over.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "states")]
pub enum ExpectationMode {
    ExactAllStates,
    /// Uniform over the distinct states of a dataset. The matrix is indexed
    /// by the same states.
    DatasetStates(Vec<StateId>),
}

impl ExpectationMode {
    pub fn name(&self) -> &'static str {
        match self {
            ExpectationMode::ExactAllStates => "exact_all_states",
            ExpectationMode::DatasetStates(_) => "dataset_states",
        }
    }
}

fn check_simplex(p: &[f64]) -> Result<()> {
    if let Some(index) = p.iter().position(|&x| x <= 0.0 || !x.is_finite()) {
        return Err(Error::ZeroProbability { index });
    }
    Ok(())
}

/// `KL(p || q)` in nats.
pub fn forward_kl(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            got: q.len(),
        });
    }
    check_simplex(p)?;
    check_simplex(q)?;
    Ok(p.iter().zip(q).map(|(p, q)| p * (p / q).ln()).sum())
}

pub fn symmetric_kl(p: &[f64], q: &[f64]) -> Result<f64> {
    Ok(forward_kl(p, q)? + forward_kl(q, p)?)
}

#[inline]
fn divergence_from_logs(lp: &[f64], lq: &[f64], mode: KlMode) -> f64 {
    match mode {
        KlMode::Symmetric => lp
            .iter()
            .zip(lq)
            .map(|(&a, &b)| (a.exp() - b.exp()) * (a - b))
            .sum(),
        KlMode::Forward => lp.iter().zip(lq).map(|(&a, &b)| a.exp() * (a - b)).sum(),
    }
}

fn pair_distance(
    lp1: &[f64],
    lp2: &[f64],
    na: usize,
    eval_states: &[StateId],
    mode: KlMode,
) -> f64 {
    let total: f64 = eval_states
        .iter()
        .map(|s| {
            let r = s.0 * na..(s.0 + 1) * na;
            divergence_from_logs(&lp1[r.clone()], &lp2[r], mode)
        })
        .sum();
    // Rounding can leave a tiny negative on identical rows.
    (total / eval_states.len() as f64).max(0.0)
}

/// Mean over `eval_states` of the divergence between `π(·|s, s1)` and
/// `π(·|s, s2)`.
pub fn actionable_distance(
    policy: &SoftGoalPolicy,
    s1: StateId,
    s2: StateId,
    eval_states: &[StateId],
    mode: KlMode,
) -> Result<f64> {
    if eval_states.is_empty() {
        return Err(Error::InvalidParameter("empty evaluation state set".into()));
    }
    let t1 = policy.tables(s1)?;
    let t2 = policy.tables(s2)?;
    if s1 == s2 {
        return Ok(0.0);
    }
    for s in eval_states {
        if s.0 >= policy.num_states() {
            return Err(Error::StateOutOfRange {
                index: s.0,
                num_states: policy.num_states(),
            });
        }
    }
    Ok(pair_distance(
        &t1.log_policy,
        &t2.log_policy,
        policy.num_actions(),
        eval_states,
        mode,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixMeta {
    pub alpha: f64,
    pub gamma: f64,
    pub env_hash: String,
    pub expectation: String,
    pub kl_mode: KlMode,
    pub eval_states: usize,
}

impl MatrixMeta {
    /// Key under which the binary cache is stored.
    pub fn cache_key(&self) -> Result<String> {
        content_hash(self)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionableDistanceMatrix {
    states: Vec<StateId>,
    d: Vec<f64>,
    meta: MatrixMeta,
}

/// Builds the pairwise matrix over the goal set implied by `mode`.
/// `op_budget` caps `n^2 * |eval| * |A|` in exact mode.
pub fn compute_matrix(
    policy: &SoftGoalPolicy,
    mode: &ExpectationMode,
    kl_mode: KlMode,
    op_budget: u64,
) -> Result<ActionableDistanceMatrix> {
    let states: Vec<StateId> = match mode {
        ExpectationMode::ExactAllStates => {
            let n = policy.num_states() as u64;
            let required = n.saturating_mul(n).saturating_mul(n).saturating_mul(policy.num_actions() as u64);
            if required > op_budget {
                return Err(Error::BudgetExceeded {
                    required,
                    budget: op_budget,
                });
            }
            (0..policy.num_states()).map(StateId).collect()
        }
        ExpectationMode::DatasetStates(ds) => {
            let mut v = ds.clone();
            v.sort();
            v.dedup();
            if v.is_empty() {
                return Err(Error::InvalidParameter("dataset mode with no states".into()));
            }
            v
        }
    };
    let tables = states
        .iter()
        .map(|&s| policy.tables(s).map(|t| t.log_policy.as_slice()))
        .collect::<Result<Vec<_>>>()?;
    for s in &states {
        if s.0 >= policy.num_states() {
            return Err(Error::StateOutOfRange {
                index: s.0,
                num_states: policy.num_states(),
            });
        }
    }
    let n = states.len();
    let na = policy.num_actions();
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            ((i + 1)..n)
                .map(|j| pair_distance(tables[i], tables[j], na, &states, kl_mode))
                .collect()
        })
        .collect();
    let mut d = vec![0.0; n * n];
    for (i, row) in upper.iter().enumerate() {
        for (k, &v) in row.iter().enumerate() {
            let j = i + 1 + k;
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    if let Some(k) = d.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!(
            "distance between goals {} and {}",
            states[k / n].0,
            states[k % n].0
        )));
    }
    let params = policy.params();
    Ok(ActionableDistanceMatrix {
        meta: MatrixMeta {
            alpha: params.alpha,
            gamma: params.gamma,
            env_hash: policy.env_hash().to_string(),
            expectation: mode.name().to_string(),
            kl_mode,
            eval_states: n,
        },
        states,
        d,
    })
}

const CACHE_MAGIC: &[u8; 8] = b"ARCDIST1";

impl ActionableDistanceMatrix {
    /// Matrix from raw values; checks symmetry, zero diagonal and sign.
    pub fn from_parts(states: Vec<StateId>, d: Vec<f64>, meta: MatrixMeta) -> Result<Self> {
        let n = states.len();
        if d.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                got: d.len(),
            });
        }
        for i in 0..n {
            if d[i * n + i] != 0.0 {
                return Err(Error::InvalidParameter(format!("nonzero diagonal at {i}")));
            }
            for j in 0..n {
                let v = d[i * n + j];
                if !v.is_finite() || v < 0.0 || v != d[j * n + i] {
                    return Err(Error::InvalidParameter(format!(
                        "entry ({i},{j}) = {v} breaks symmetry/nonnegativity"
                    )));
                }
            }
        }
        Ok(Self { states, d, meta })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[StateId] {
        &self.states
    }

    pub fn meta(&self) -> &MatrixMeta {
        &self.meta
    }

    /// Entry by matrix position (not state id).
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.len() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.len();
        &self.d[i * n..(i + 1) * n]
    }

    pub fn values(&self) -> &[f64] {
        &self.d
    }

    /// Position of a state in the matrix.
    pub fn index_of(&self, s: StateId) -> Option<usize> {
        self.states.binary_search(&s).ok()
    }

    pub fn distance(&self, a: StateId, b: StateId) -> Option<f64> {
        Some(self.get(self.index_of(a)?, self.index_of(b)?))
    }

    /// Mean of the off-diagonal entries.
    pub fn off_diagonal_mean(&self) -> f64 {
        let n = self.len();
        if n < 2 {
            return 0.0;
        }
        self.d.iter().sum::<f64>() / (n * (n - 1)) as f64
    }

    pub fn max(&self) -> f64 {
        self.d.iter().copied().fold(0.0, f64::max)
    }

    /// Fraction of unordered triples for which some triangle inequality
    /// fails by more than `tol`.
    pub fn triangle_violation_rate(&self, tol: f64) -> f64 {
        let n = self.len();
        let mut triples = 0u64;
        let mut bad = 0u64;
        for i in 0..n {
            for j in (i + 1)..n {
                let dij = self.get(i, j);
                for k in (j + 1)..n {
                    let (dik, djk) = (self.get(i, k), self.get(j, k));
                    triples += 1;
                    if dij > dik + djk + tol || dik > dij + djk + tol || djk > dij + dik + tol {
                        bad += 1;
                    }
                }
            }
        }
        if triples == 0 {
            0.0
        } else {
            bad as f64 / triples as f64
        }
    }

    /// CSV with a header row of state indices and one row per state.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["state".to_string()];
        header.extend(self.states.iter().map(|s| s.0.to_string()));
        out.write_record(&header)?;
        for (i, s) in self.states.iter().enumerate() {
            let mut rec = vec![s.0.to_string()];
            rec.extend(self.row(i).iter().map(|v| v.to_string()));
            out.write_record(&rec)?;
        }
        out.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn to_cache_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.meta)?;
        let mut buf = Vec::with_capacity(24 + meta.len() + 8 * (self.len() + self.d.len()));
        buf.extend_from_slice(CACHE_MAGIC);
        buf.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        buf.extend_from_slice(&meta);
        buf.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for s in &self.states {
            buf.extend_from_slice(&(s.0 as u64).to_le_bytes());
        }
        for v in &self.d {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        Ok(buf)
    }

    pub fn from_cache_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = || Error::Config("malformed distance cache".into());
        let mut r = bytes;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad())?;
        if &magic != CACHE_MAGIC {
            return Err(bad());
        }
        let read_u64 = |r: &mut &[u8]| -> Result<u64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b).map_err(|_| bad())?;
            Ok(u64::from_le_bytes(b))
        };
        let meta_len = read_u64(&mut r)? as usize;
        if r.len() < meta_len {
            return Err(bad());
        }
        let meta: MatrixMeta = serde_json::from_slice(&r[..meta_len])?;
        r = &r[meta_len..];
        let n = read_u64(&mut r)? as usize;
        if r.len() != 8 * (n + n * n) {
            return Err(bad());
        }
        let states = (0..n)
            .map(|_| read_u64(&mut r).map(|v| StateId(v as usize)))
            .collect::<Result<Vec<_>>>()?;
        let d = (0..n * n)
            .map(|_| read_u64(&mut r).map(f64::from_bits))
            .collect::<Result<Vec<_>>>()?;
        Self::from_parts(states, d, meta)
    }

    /// Stores the matrix under `dir/<cache key>.dact`.
    pub fn save_cache(&self, dir: &Path) -> Result<std::path::PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(format!("{}.dact", self.meta.cache_key()?));
        fs::write(&path, self.to_cache_bytes()?).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn load_cache(dir: &Path, meta: &MatrixMeta) -> Result<Option<Self>> {
        let path = dir.join(format!("{}.dact", meta.cache_key()?));
        match fs::read(&path) {
            Ok(bytes) => {
                let m = Self::from_cache_bytes(&bytes)?;
                Ok((m.meta == *meta).then_some(m))
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::{build_four_rooms, build_open_grid, build_wall_world, Cell, GridMdp, GridSpec};
    use crate::rng::Rng;
    use crate::softgcp::SoftViParams;
    use proptest::prelude::*;

    fn exact(policy: &SoftGoalPolicy) -> ActionableDistanceMatrix {
        compute_matrix(policy, &ExpectationMode::ExactAllStates, KlMode::Symmetric, DEFAULT_OP_BUDGET).unwrap()
    }

    #[test]
    fn kl_hand_value() {
        let v = symmetric_kl(&[0.5, 0.5], &[0.9, 0.1]).unwrap();
        assert!((v - 0.8789).abs() < 1e-3, "{v}");
        assert_eq!(symmetric_kl(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
    }

    #[test]
    fn kl_rejects_zero_entries() {
        assert!(matches!(
            symmetric_kl(&[1.0, 0.0], &[0.5, 0.5]),
            Err(Error::ZeroProbability { index: 1 })
        ));
    }

    fn simplex(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.01f64..1.0, n).prop_map(|v| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect()
        })
    }

    proptest! {
        #[test]
        fn symmetric_kl_is_symmetric_and_nonnegative((p, q) in (simplex(4), simplex(4))) {
            let a = symmetric_kl(&p, &q).unwrap();
            let b = symmetric_kl(&q, &p).unwrap();
            prop_assert!(a >= 0.0);
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a));
        }
    }

    #[test]
    fn log_form_matches_direct_form() {
        let p = [0.1, 0.2, 0.3, 0.4];
        let q = [0.25, 0.25, 0.4, 0.1];
        let lp: Vec<f64> = p.iter().map(|x: &f64| x.ln()).collect();
        let lq: Vec<f64> = q.iter().map(|x: &f64| x.ln()).collect();
        let a = divergence_from_logs(&lp, &lq, KlMode::Symmetric);
        assert!((a - symmetric_kl(&p, &q).unwrap()).abs() < 1e-14);
        let f = divergence_from_logs(&lp, &lq, KlMode::Forward);
        assert!((f - forward_kl(&p, &q).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn two_state_world() {
        let mut spec = GridSpec::open(2, 1);
        spec.walls.clear();
        let mdp = GridMdp::from_spec(crate::gridworld::EnvKind::Custom, spec).unwrap();
        let policy = SoftGoalPolicy::solve(&mdp, SoftViParams::default()).unwrap();
        let m = exact(&policy);
        assert_eq!(m.len(), 2);
        assert_eq!(m.get(0, 0), 0.0);
        assert_eq!(m.get(0, 1), m.get(1, 0));
        assert!(m.get(0, 1) > 0.0);
    }

    #[test]
    fn pair_function_agrees_with_matrix_and_is_symmetric() {
        let mdp = build_four_rooms(9, 9).unwrap();
        let policy = SoftGoalPolicy::solve(&mdp, SoftViParams::default()).unwrap();
        let m = exact(&policy);
        let all: Vec<StateId> = mdp.states().collect();
        let mut rng = Rng::new(3);
        for _ in 0..20 {
            let a = StateId(rng.below(mdp.num_states()));
            let b = StateId(rng.below(mdp.num_states()));
            let ab = actionable_distance(&policy, a, b, &all, KlMode::Symmetric).unwrap();
            let ba = actionable_distance(&policy, b, a, &all, KlMode::Symmetric).unwrap();
            assert!((ab - ba).abs() < 1e-12);
            assert!((ab - m.distance(a, b).unwrap()).abs() < 1e-12);
        }
        assert_eq!(actionable_distance(&policy, StateId(4), StateId(4), &all, KlMode::Symmetric).unwrap(), 0.0);
        assert!(actionable_distance(&policy, StateId(0), StateId(1), &[], KlMode::Symmetric).is_err());
    }

    #[test]
    fn matrix_invariants_hold_exactly() {
        let mdp = build_wall_world(7, 7, 3).unwrap();
        let policy = SoftGoalPolicy::solve(&mdp, SoftViParams::default()).unwrap();
        let m = exact(&policy);
        let n = m.len();
        for i in 0..n {
            assert_eq!(m.get(i, i), 0.0);
            for j in 0..n {
                assert_eq!(m.get(i, j), m.get(j, i));
                assert!(m.get(i, j) >= 0.0 && m.get(i, j).is_finite());
            }
        }
        let rate = m.triangle_violation_rate(1e-12);
        assert!((0.0..=1.0).contains(&rate));
    }

    #[test]
    fn dataset_mode_with_full_coverage_equals_exact() {
        let mdp = build_wall_world(7, 7, 3).unwrap();
        let policy = SoftGoalPolicy::solve(&mdp, SoftViParams::default()).unwrap();
        let mut visits: Vec<StateId> = mdp.states().chain(mdp.states()).collect();
        Rng::new(1).shuffle(&mut visits);
        let ds = compute_matrix(&policy, &ExpectationMode::DatasetStates(visits), KlMode::Symmetric, 0).unwrap();
        let ex = exact(&policy);
        for (a, b) in ds.values().iter().zip(ex.values()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn budget_guard() {
        let mdp = build_open_grid(9, 9).unwrap();
        let policy = SoftGoalPolicy::solve(&mdp, SoftViParams::default()).unwrap();
        let r = compute_matrix(&policy, &ExpectationMode::ExactAllStates, KlMode::Symmetric, 1000);
        assert!(matches!(r, Err(Error::BudgetExceeded { budget: 1000, .. })));
    }

    /// Room structure: goals in the same room are closer than goals in
    /// different rooms. Means recorded from the enumeration.
    #[test]
    fn four_rooms_within_room_closer_than_across() {
        let mdp = build_four_rooms(9, 9).unwrap();
        let policy = SoftGoalPolicy::solve(&mdp, SoftViParams::default()).unwrap();
        let m = exact(&policy);
        let (mut within, mut across) = ((0.0, 0), (0.0, 0));
        for i in 0..m.len() {
            for j in (i + 1)..m.len() {
                let same = mdp.room_of(StateId(i)) == mdp.room_of(StateId(j));
                let acc = if same { &mut within } else { &mut across };
                acc.0 += m.get(i, j);
                acc.1 += 1;
            }
        }
        let (w, a) = (within.0 / within.1 as f64, across.0 / across.1 as f64);
        assert!((w - FOUR_ROOMS_WITHIN).abs() < 1e-9, "{w} {a}");
        assert!((a - FOUR_ROOMS_ACROSS).abs() < 1e-9, "{a}");
        assert!(w < a);
    }

    const FOUR_ROOMS_WITHIN: f64 = 3.355358075306603;
    const FOUR_ROOMS_ACROSS: f64 = 9.239368561274885;

    fn wall_ratio(mdp: &GridMdp, alpha: f64, gap_row: usize) -> (f64, f64) {
        let policy = SoftGoalPolicy::solve(mdp, SoftViParams::default().with_alpha(alpha)).unwrap();
        let m = exact(&policy);
        let cx = mdp.width() / 2;
        let at = |x, y| mdp.state_at(Cell { x, y }, None).unwrap();
        let far = if gap_row == 0 { mdp.height() - 1 } else { 0 };
        let cross = m.distance(at(cx - 1, far), at(cx + 1, far)).unwrap();
        let open = m.distance(at(1, far), at(3.min(cx - 1), far)).unwrap();
        (cross, open)
    }

    #[test]
    fn wall_cross_pair_far_exceeds_open_pair() {
        let mdp = build_wall_world(7, 7, 0).unwrap();
        let (cross, open) = wall_ratio(&mdp, 0.1, 0);
        assert!((cross - WALL_CROSS).abs() < 1e-9, "{cross} {open}");
        assert!((open - WALL_OPEN).abs() < 1e-9, "{open}");
        assert!(cross > 3.0 * open, "{cross} {open}");
    }

    const WALL_CROSS: f64 = 18.072601748174602;
    const WALL_OPEN: f64 = 1.6715243473087362;

    /// Below `α = 1 / ln|A|` the goal attracts and larger α means more uniform
    /// policies. Above it the entropy bonus outweighs the step cost and states
    /// near the goal start avoiding it, so distances grow again.
    #[test]
    fn mean_shrinks_as_temperature_grows() {
        let mdp = build_four_rooms(9, 9).unwrap();
        let means: Vec<f64> = [0.05, 0.1, 0.2, 0.4]
            .iter()
            .map(|&a| exact(&SoftGoalPolicy::solve(&mdp, SoftViParams::default().with_alpha(a)).unwrap()).off_diagonal_mean())
            .collect();
        assert!(means.windows(2).all(|w| w[1] < w[0]), "{means:?}");
    }

    #[test]
    fn mean_rises_again_past_critical_temperature() {
        let mdp = build_four_rooms(9, 9).unwrap();
        let means: Vec<f64> = [1.0, 2.0, 4.0]
            .iter()
            .map(|&a| exact(&SoftGoalPolicy::solve(&mdp, SoftViParams::default().with_alpha(a)).unwrap()).off_diagonal_mean())
            .collect();
        assert!(means.windows(2).all(|w| w[1] > w[0]), "{means:?}");
    }

    #[test]
    fn forward_mode_differs_and_is_nonnegative() {
        let mdp = build_wall_world(7, 7, 3).unwrap();
        let policy = SoftGoalPolicy::solve(&mdp, SoftViParams::default()).unwrap();
        let f = compute_matrix(&policy, &ExpectationMode::ExactAllStates, KlMode::Forward, DEFAULT_OP_BUDGET).unwrap();
        let s = exact(&policy);
        assert!(f.values().iter().all(|&x| x >= 0.0));
        assert!(f.off_diagonal_mean() < s.off_diagonal_mean());
    }

    #[test]
    fn csv_and_cache_round_trip() {
        let mdp = build_wall_world(7, 7, 3).unwrap();
        let policy = SoftGoalPolicy::solve(&mdp, SoftViParams::default()).unwrap();
        let m = exact(&policy);
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("state,0,1,2"));
        assert_eq!(text.lines().count(), m.len() + 1);

        let dir = tempfile::tempdir().unwrap();
        m.save_cache(dir.path()).unwrap();
        let back = ActionableDistanceMatrix::load_cache(dir.path(), m.meta()).unwrap().unwrap();
        assert_eq!(back, m);
        let mut other = m.meta().clone();
        other.alpha = 0.7;
        assert!(ActionableDistanceMatrix::load_cache(dir.path(), &other).unwrap().is_none());
        assert!(ActionableDistanceMatrix::from_cache_bytes(b"nope").is_err());
    }
}
