//! k-means over embedded states and cluster/label agreement.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansModel {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    pub inertia: f64,
    pub seed: u64,
    pub iterations: usize,
    /// Inertia after each assignment step.
    #[serde(default)]
    pub inertia_trace: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid, ties to the lowest index.
fn nearest(centroids: &[Vec<f64>], p: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, mu) in centroids.iter().enumerate() {
        let d = sq_dist(mu, p);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn count_distinct(points: &[Vec<f64>]) -> usize {
    let mut keys: Vec<Vec<u64>> = points.iter().map(|p| p.iter().map(|v| v.to_bits()).collect()).collect();
    keys.sort();
    keys.dedup();
    keys.len()
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.below(points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let next = points[rng.categorical(&d2)].clone();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &next));
        }
        centroids.push(next);
    }
    centroids
}

fn recompute_centroids(points: &[Vec<f64>], assignment: &[usize], k: usize, dim: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &c) in points.iter().zip(assignment) {
        counts[c] += 1;
        for (s, v) in sums[c].iter_mut().zip(p) {
            *s += v;
        }
    }
    for (s, &n) in sums.iter_mut().zip(&counts) {
        if n > 0 {
            s.iter_mut().for_each(|v| *v /= n as f64);
        }
    }
    (sums, counts)
}

/// k-means++ seeding followed by Lloyd iterations until the assignment stops
/// changing or `max_iters` is reached.
pub fn kmeans_fit(points: &[Vec<f64>], k: usize, seed: u64, max_iters: usize) -> Result<KMeansModel> {
    if k == 0 || points.is_empty() {
        return Err(Error::InvalidParameter("k-means needs k >= 1 and at least one point".into()));
    }
    let dim = points[0].len();
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::DimensionMismatch { expected: dim, got: p.len() });
    }
    let distinct = count_distinct(points);
    if k > distinct {
        return Err(Error::InvalidParameter(format!("k = {k} exceeds the {distinct} distinct points")));
    }
    let mut rng = Rng::new(seed);
    let mut centroids = plus_plus_init(points, k, &mut rng);
    let mut assignment = vec![usize::MAX; points.len()];
    let mut trace = Vec::new();
    let mut iterations = 0;
    while iterations < max_iters.max(1) {
        iterations += 1;
        let mut changed = false;
        let mut inertia = 0.0;
        for (p, a) in points.iter().zip(assignment.iter_mut()) {
            let (c, d) = nearest(&centroids, p);
            inertia += d;
            if *a != c {
                *a = c;
                changed = true;
            }
        }
        trace.push(inertia);
        if !changed {
            break;
        }
        let (mut next, mut counts) = recompute_centroids(points, &assignment, k, dim);
        // Repair empty clusters: move the point farthest from its centroid.
        while let Some(empty) = counts.iter().position(|&n| n == 0) {
            let (far, _) = points
                .iter()
                .enumerate()
                .filter(|(i, _)| counts[assignment[*i]] > 1)
                .map(|(i, p)| (i, sq_dist(p, &next[assignment[i]])))
                .fold((usize::MAX, f64::NEG_INFINITY), |b, x| if x.1 > b.1 { x } else { b });
            counts[assignment[far]] -= 1;
            assignment[far] = empty;
            counts[empty] = 1;
            let (fixed, _) = recompute_centroids(points, &assignment, k, dim);
            next = fixed;
        }
        centroids = next;
    }
    // Centroids consistent with the final assignment (only differs from the
    // loop's when max_iters cut it short).
    let (fresh, counts) = recompute_centroids(points, &assignment, k, dim);
    let centroids: Vec<Vec<f64>> = fresh
        .into_iter()
        .zip(centroids)
        .zip(counts)
        .map(|((new, old), n)| if n > 0 { new } else { old })
        .collect();
    let inertia = points.iter().zip(&assignment).map(|(p, &c)| sq_dist(p, &centroids[c])).sum();
    Ok(KMeansModel {
        k,
        centroids,
        assignment,
        inertia,
        seed,
        iterations,
        inertia_trace: trace,
    })
}

impl KMeansModel {
    pub fn predict(&self, p: &[f64]) -> usize {
        nearest(&self.centroids, p).0
    }

    pub fn recompute_inertia(&self, points: &[Vec<f64>]) -> f64 {
        points
            .iter()
            .zip(&self.assignment)
            .map(|(p, &c)| sq_dist(p, &self.centroids[c]))
            .sum()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut n = vec![0; self.k];
        for &c in &self.assignment {
            n[c] += 1;
        }
        n
    }

    /// Members of cluster `c`, as point indices.
    pub fn members(&self, c: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] == c).collect()
    }

    /// Rows `state_index, cluster`; `ids[i]` names point `i`.
    pub fn write_assignment_csv<W: Write>(&self, ids: &[usize], w: W) -> Result<()> {
        if ids.len() != self.assignment.len() {
            return Err(Error::DimensionMismatch {
                expected: self.assignment.len(),
                got: ids.len(),
            });
        }
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["state_index", "cluster"])?;
        for (id, c) in ids.iter().zip(&self.assignment) {
            out.write_record([id.to_string(), c.to_string()])?;
        }
        out.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Fraction of points whose cluster's majority label equals their own.
pub fn purity(assignment: &[usize], labels: &[usize]) -> Result<f64> {
    if assignment.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: assignment.len(),
            got: labels.len(),
        });
    }
    if assignment.is_empty() {
        return Err(Error::InvalidParameter("purity of an empty assignment".into()));
    }
    let mut table: BTreeMap<usize, BTreeMap<usize, usize>> = BTreeMap::new();
    for (&c, &l) in assignment.iter().zip(labels) {
        *table.entry(c).or_default().entry(l).or_default() += 1;
    }
    let majority: usize = table.values().map(|m| m.values().copied().max().unwrap_or(0)).sum();
    Ok(majority as f64 / assignment.len() as f64)
}
