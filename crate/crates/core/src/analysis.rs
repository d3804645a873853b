//! Structure of learned representations: classical MDS, perturbation spread
//! and scatter exports.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridworld::{Cell, GridMdp, Heading, StateId};
use crate::representations::Encoder;
use crate::rng::Rng;

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues in decreasing order and the matching unit
/// eigenvectors (`vectors[k]` belongs to `values[k]`), each signed so that its
/// largest-magnitude component is positive.
pub fn jacobi_eigen(a: &[f64], n: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    if a.len() != n * n {
        return Err(Error::DimensionMismatch { expected: n * n, got: a.len() });
    }
    let mut m = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale: f64 = m.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * n + j] * m[i * n + j])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (m[k * n + p], m[k * n + q]);
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (m[p * n + k], m[q * n + k]);
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j * n + j].total_cmp(&m[i * n + i]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| m[i * n + i]).collect();
    let vectors = order
        .iter()
        .map(|&i| {
            let mut col: Vec<f64> = (0..n).map(|k| v[k * n + i]).collect();
            let big = col.iter().copied().fold(0.0f64, |b, x| if x.abs() > b.abs() { x } else { b });
            if big < 0.0 {
                col.iter_mut().for_each(|x| *x = -*x);
            }
            col
        })
        .collect();
    Ok((values, vectors))
}

fn check_distance_matrix(d: &[f64], n: usize) -> Result<()> {
    if d.len() != n * n {
        return Err(Error::DimensionMismatch { expected: n * n, got: d.len() });
    }
    for i in 0..n {
        if d[i * n + i] != 0.0 {
            return Err(Error::InvalidParameter(format!("distance matrix diagonal ({i},{i}) is nonzero")));
        }
        for j in 0..i {
            if (d[i * n + j] - d[j * n + i]).abs() > 1e-12 * (1.0 + d[i * n + j].abs()) {
                return Err(Error::InvalidParameter(format!("distance matrix not symmetric at ({i},{j})")));
            }
        }
    }
    Ok(())
}

/// Torgerson MDS: coordinates from the top eigenpairs of `−½ J D² J`.
pub fn classical_mds(d: &[f64], n: usize, out_dim: usize) -> Result<Vec<Vec<f64>>> {
    if n < out_dim {
        return Err(Error::InvalidParameter(format!("cannot embed {n} points in {out_dim} dimensions")));
    }
    check_distance_matrix(d, n)?;
    let sq: Vec<f64> = d.iter().map(|x| x * x).collect();
    let row_mean: Vec<f64> = (0..n).map(|i| sq[i * n..(i + 1) * n].iter().sum::<f64>() / n as f64).collect();
    let grand = row_mean.iter().sum::<f64>() / n as f64;
    let mut b = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            b[i * n + j] = -0.5 * (sq[i * n + j] - row_mean[i] - row_mean[j] + grand);
        }
    }
    let (values, vectors) = jacobi_eigen(&b, n)?;
    let mut coords = vec![vec![0.0; out_dim]; n];
    for k in 0..out_dim {
        let s = values[k].max(0.0).sqrt();
        for (i, c) in coords.iter_mut().enumerate() {
            c[k] = vectors[k][i] * s;
        }
    }
    Ok(coords)
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Kruskal stress-1 of `coords` against the target distances.
pub fn stress(d: &[f64], coords: &[Vec<f64>]) -> f64 {
    let n = coords.len();
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..n {
        for j in (i + 1)..n {
            let e = euclidean(&coords[i], &coords[j]) - d[i * n + j];
            num += e * e;
            den += d[i * n + j] * d[i * n + j];
        }
    }
    if den == 0.0 {
        0.0
    } else {
        (num / den).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Factor {
    Position,
    Heading,
}

impl Factor {
    pub fn name(self) -> &'static str {
        match self {
            Factor::Position => "position",
            Factor::Heading => "heading",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpreadReport {
    pub important: Factor,
    pub secondary: Factor,
    pub important_spread: f64,
    pub secondary_spread: f64,
    /// `None` when the secondary spread is zero.
    pub ratio: Option<f64>,
    pub base_states: usize,
}

/// States that differ from `base` only in `factor`, `base` included.
pub fn orbit(mdp: &GridMdp, base: StateId, factor: Factor) -> Result<Vec<StateId>> {
    let cell = mdp.cell_of(base);
    let heading = mdp.heading_of(base);
    match factor {
        Factor::Heading => {
            if !mdp.is_directed() {
                return Err(Error::FactorNotApplicable("heading".into()));
            }
            Ok((0..4)
                .filter_map(|h| mdp.state_at(cell, Some(Heading::from_index(h))))
                .collect())
        }
        Factor::Position => {
            let mut out = vec![base];
            let (x, y) = (cell.x as isize, cell.y as isize);
            for (dx, dy) in [(0, -1), (0, 1), (-1, 0), (1, 0)] {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 {
                    continue;
                }
                if let Some(s) = mdp.state_at(Cell::new(nx as usize, ny as usize), heading) {
                    out.push(s);
                }
            }
            Ok(out)
        }
    }
}

fn mean_pairwise(points: &[Vec<f64>]) -> Option<f64> {
    let n = points.len();
    if n < 2 {
        return None;
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            total += euclidean(&points[i], &points[j]);
        }
    }
    Some(total / (n * (n - 1) / 2) as f64)
}

fn factor_spread(encoder: &Encoder, mdp: &GridMdp, bases: &[StateId], factor: Factor) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for &b in bases {
        let pts = orbit(mdp, b, factor)?
            .into_iter()
            .map(|s| encoder.encode_state(mdp, s))
            .collect::<Result<Vec<_>>>()?;
        if let Some(m) = mean_pairwise(&pts) {
            total += m;
            count += 1;
        }
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// Mean within-orbit embedding distance for each factor, averaged over
/// `base_states`.
pub fn perturbation_spread(
    encoder: &Encoder,
    mdp: &GridMdp,
    base_states: &[StateId],
    important: Factor,
    secondary: Factor,
) -> Result<SpreadReport> {
    if base_states.is_empty() {
        return Err(Error::InvalidParameter("perturbation spread needs base states".into()));
    }
    let important_spread = factor_spread(encoder, mdp, base_states, important)?;
    let secondary_spread = factor_spread(encoder, mdp, base_states, secondary)?;
    Ok(SpreadReport {
        important,
        secondary,
        important_spread,
        secondary_spread,
        ratio: (secondary_spread > 0.0).then(|| important_spread / secondary_spread),
        base_states: base_states.len(),
    })
}

/// `n` distinct base states drawn uniformly (all states when `n` is larger).
pub fn sample_base_states(mdp: &GridMdp, n: usize, rng: &mut Rng) -> Vec<StateId> {
    let mut all: Vec<StateId> = mdp.states().collect();
    rng.shuffle(&mut all);
    all.truncate(n);
    all.sort();
    all
}

/// Smallest distance between the two groups and median distance within
/// groups. `group[i]` is 0 or 1.
pub fn gap_statistic(points: &[Vec<f64>], group: &[usize]) -> Result<(f64, f64)> {
    if points.len() != group.len() {
        return Err(Error::DimensionMismatch { expected: points.len(), got: group.len() });
    }
    let mut cross_min = f64::INFINITY;
    let mut within = Vec::new();
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            let d = euclidean(&points[i], &points[j]);
            if group[i] == group[j] {
                within.push(d);
            } else {
                cross_min = cross_min.min(d);
            }
        }
    }
    if within.is_empty() || !cross_min.is_finite() {
        return Err(Error::InvalidParameter("gap statistic needs two non-trivial groups".into()));
    }
    within.sort_by(f64::total_cmp);
    let mid = within.len() / 2;
    let median = if within.len() % 2 == 0 {
        0.5 * (within[mid - 1] + within[mid])
    } else {
        within[mid]
    };
    Ok((cross_min, median))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum ColorBy {
    X,
    Y,
    Room,
}

impl ColorBy {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "x" => Ok(ColorBy::X),
            "y" => Ok(ColorBy::Y),
            "room" => Ok(ColorBy::Room),
            _ => Err(Error::Config(format!("unknown color attribute `{s}`"))),
        }
    }
}

const ROOM_COLORS: [&str; 8] = [
    "#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666",
];

/// Blue-to-yellow ramp for `t ∈ [0, 1]`.
fn ramp(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let stops = [(68.0, 1.0, 84.0), (59.0, 82.0, 139.0), (33.0, 145.0, 140.0), (94.0, 201.0, 98.0), (253.0, 231.0, 37.0)];
    let x = t * (stops.len() - 1) as f64;
    let i = (x.floor() as usize).min(stops.len() - 2);
    let f = x - i as f64;
    let lerp = |a: f64, b: f64| (a + (b - a) * f).round() as u8;
    let (a, b) = (stops[i], stops[i + 1]);
    format!("#{:02x}{:02x}{:02x}", lerp(a.0, b.0), lerp(a.1, b.1), lerp(a.2, b.2))
}

/// 2-D coordinates for plotting: the embedding itself, or its MDS projection
/// when it is 3-D.
pub fn plot_coordinates(encoder: &Encoder, mdp: &GridMdp) -> Result<Vec<Vec<f64>>> {
    let z = encoder.embed_all(mdp)?;
    match encoder.latent_dim() {
        2 => Ok(z),
        3 => {
            let n = z.len();
            let mut d = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    d[i * n + j] = euclidean(&z[i], &z[j]);
                }
            }
            classical_mds(&d, n, 2)
        }
        k => Err(Error::InvalidParameter(format!("scatter needs a 2- or 3-D embedding, got {k}"))),
    }
}

/// SVG scatter of every state, colored by `color_by`. Output depends only on
/// the inputs.
pub fn scatter_svg(encoder: &Encoder, mdp: &GridMdp, color_by: ColorBy) -> Result<String> {
    let coords = plot_coordinates(encoder, mdp)?;
    let (size, margin) = (480.0, 24.0);
    let bound = |k: usize| {
        let lo = coords.iter().map(|c| c[k]).fold(f64::INFINITY, f64::min);
        let hi = coords.iter().map(|c| c[k]).fold(f64::NEG_INFINITY, f64::max);
        (lo, (hi - lo).max(1e-12))
    };
    let ((x0, xs), (y0, ys)) = (bound(0), bound(1));
    let span = xs.max(ys);
    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">"#
    )
    .unwrap();
    writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    for (s, c) in mdp.states().zip(&coords) {
        let cell = mdp.cell_of(s);
        let fill = match color_by {
            ColorBy::X => ramp(cell.x as f64 / (mdp.width() - 1).max(1) as f64),
            ColorBy::Y => ramp(cell.y as f64 / (mdp.height() - 1).max(1) as f64),
            ColorBy::Room => mdp
                .room_of(s)
                .map_or("#000000", |r| ROOM_COLORS[r % ROOM_COLORS.len()])
                .to_string(),
        };
        let px = margin + (c[0] - x0) / span * (size - 2.0 * margin);
        let py = margin + (c[1] - y0) / span * (size - 2.0 * margin);
        writeln!(svg, r#"<circle cx="{px:.3}" cy="{py:.3}" r="5" fill="{fill}"><title>{}</title></circle>"#, s.0).unwrap();
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn export_scatter(encoder: &Encoder, mdp: &GridMdp, color_by: ColorBy, path: &Path) -> Result<()> {
    let svg = scatter_svg(encoder, mdp, color_by)?;
    fs::write(path, svg).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::{build_directed_grid, build_open_grid, build_wall_world};
    use crate::nn::{Activation, Mlp};
    use crate::representations::{linear_encoder, RepKind};
    use nalgebra::DMatrix;

    fn dist_matrix(pts: &[Vec<f64>]) -> Vec<f64> {
        let n = pts.len();
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                d[i * n + j] = euclidean(&pts[i], &pts[j]);
            }
        }
        d
    }

    fn random_cloud(rng: &mut Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..dim).map(|_| rng.uniform_range(-1.0, 1.0)).collect()).collect()
    }

    #[test]
    fn jacobi_reconstructs_matrix() {
        let mut rng = Rng::new(5);
        for n in [1, 2, 5, 12] {
            let mut a = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..=i {
                    let v = rng.uniform_range(-2.0, 2.0);
                    a[i * n + j] = v;
                    a[j * n + i] = v;
                }
            }
            let (vals, vecs) = jacobi_eigen(&a, n).unwrap();
            let mut err = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let r: f64 = (0..n).map(|k| vals[k] * vecs[k][i] * vecs[k][j]).sum();
                    err += (r - a[i * n + j]).powi(2);
                }
            }
            let norm: f64 = a.iter().map(|x| x * x).sum();
            assert!((err / norm).sqrt() < 1e-8);
            assert!(vals.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn mds_recovers_planar_points() {
        let pts = random_cloud(&mut Rng::new(1), 12, 2);
        let d = dist_matrix(&pts);
        let coords = classical_mds(&d, 12, 2).unwrap();
        let back = dist_matrix(&coords);
        for (a, b) in d.iter().zip(&back) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn mds_collinear_three() {
        let d = vec![0.0, 1.0, 2.0, 1.0, 0.0, 1.0, 2.0, 1.0, 0.0];
        let c = classical_mds(&d, 3, 2).unwrap();
        assert!((euclidean(&c[0], &c[2]) - 2.0).abs() < 1e-6);
        let cross = (c[1][0] - c[0][0]) * (c[2][1] - c[0][1]) - (c[1][1] - c[0][1]) * (c[2][0] - c[0][0]);
        assert!(cross.abs() < 1e-6);
        assert!(classical_mds(&d, 3, 4).is_err());
    }

    #[test]
    fn mds_stress_matches_reference_eigensolver() {
        let mut rng = Rng::new(9);
        let pts = random_cloud(&mut rng, 10, 5);
        let n = 10;
        let d = dist_matrix(&pts);
        let ours = stress(&d, &classical_mds(&d, n, 2).unwrap());

        let sq = DMatrix::from_fn(n, n, |i, j| d[i * n + j] * d[i * n + j]);
        let j = DMatrix::identity(n, n) - DMatrix::from_element(n, n, 1.0 / n as f64);
        let b = (&j * sq * &j) * -0.5;
        let eig = b.symmetric_eigen();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &c| eig.eigenvalues[c].total_cmp(&eig.eigenvalues[a]));
        let coords: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                idx[..2]
                    .iter()
                    .map(|&k| eig.eigenvectors[(i, k)] * eig.eigenvalues[k].max(0.0).sqrt())
                    .collect()
            })
            .collect();
        let reference = stress(&d, &coords);
        assert!((ours - reference).abs() < 1e-6, "{ours} vs {reference}");
    }

    #[test]
    fn rejects_asymmetric_input() {
        assert!(classical_mds(&[0.0, 1.0, 2.0, 0.0], 2, 1).is_err());
    }

    #[test]
    fn identity_spread_tracks_feature_geometry() {
        let mdp = build_directed_grid(5, 5).unwrap();
        let enc = Encoder::identity(mdp.feature_dim());
        let bases: Vec<StateId> = mdp.states().collect();
        let r = perturbation_spread(&enc, &mdp, &bases, Factor::Position, Factor::Heading).unwrap();
        let ratio = r.ratio.unwrap();
        assert!((0.5..=1.5).contains(&ratio), "{ratio}");
        // Interior orbit: center-neighbour 1 step, opposite 2, diagonal √2,
        // against √2 for every pair of headings.
        let center = mdp.state_at(Cell::new(2, 2), Some(Heading::North)).unwrap();
        let r = perturbation_spread(&enc, &mdp, &[center], Factor::Position, Factor::Heading).unwrap();
        let expected = (4.0 + 4.0 + 4.0 * 2f64.sqrt()) / 10.0 / 2f64.sqrt();
        assert!((r.ratio.unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn constant_encoder_has_no_ratio() {
        let mdp = build_directed_grid(5, 5).unwrap();
        let enc = Encoder::from_net(RepKind::Arc, Mlp::zeros(&[6, 2], Activation::Tanh).unwrap()).unwrap();
        let bases: Vec<StateId> = mdp.states().collect();
        let r = perturbation_spread(&enc, &mdp, &bases, Factor::Position, Factor::Heading).unwrap();
        assert_eq!((r.important_spread, r.secondary_spread, r.ratio), (0.0, 0.0, None));
    }

    #[test]
    fn heading_factor_needs_directed_grid() {
        let mdp = build_open_grid(5, 5).unwrap();
        let enc = Encoder::identity(2);
        let r = perturbation_spread(&enc, &mdp, &[StateId(0)], Factor::Position, Factor::Heading);
        assert!(matches!(r, Err(Error::FactorNotApplicable(_))));
    }

    #[test]
    fn spread_invariant_to_rigid_motion() {
        let mdp = build_directed_grid(5, 5).unwrap();
        let mut net = Mlp::new(&[6, 8, 2], Activation::Tanh, &mut Rng::new(3)).unwrap();
        let a = Encoder::from_net(RepKind::Arc, net.clone()).unwrap();
        // Rotate and translate the output layer.
        let (c, s) = (0.6f64, 0.8f64);
        let l = net.num_layers() - 1;
        let (w, b) = net.layer_mut(l);
        let cols = w.len() / 2;
        let (r0, r1) = (w[..cols].to_vec(), w[cols..].to_vec());
        for k in 0..cols {
            w[k] = c * r0[k] - s * r1[k];
            w[cols + k] = s * r0[k] + c * r1[k];
        }
        let (b0, b1) = (b[0], b[1]);
        b[0] = c * b0 - s * b1 + 3.0;
        b[1] = s * b0 + c * b1 - 7.0;
        let rotated = Encoder::from_net(RepKind::Arc, net).unwrap();
        let bases: Vec<StateId> = mdp.states().collect();
        let ra = perturbation_spread(&a, &mdp, &bases, Factor::Position, Factor::Heading).unwrap();
        let rb = perturbation_spread(&rotated, &mdp, &bases, Factor::Position, Factor::Heading).unwrap();
        assert!((ra.important_spread - rb.important_spread).abs() < 1e-12);
        assert!((ra.secondary_spread - rb.secondary_spread).abs() < 1e-12);
    }

    #[test]
    fn identity_scatter_is_the_grid_and_deterministic() {
        let mdp = build_open_grid(4, 3).unwrap();
        let enc = Encoder::identity(2);
        let svg = scatter_svg(&enc, &mdp, ColorBy::X).unwrap();
        assert_eq!(svg.matches("<circle").count(), 12);
        // Corner states land on the corners of the plotting square's x range.
        assert!(svg.contains(r#"cx="24.000" cy="24.000""#));
        assert!(svg.contains(r#"cx="456.000""#));
        let dir = tempfile::tempdir().unwrap();
        let (p1, p2) = (dir.path().join("a.svg"), dir.path().join("b.svg"));
        export_scatter(&enc, &mdp, ColorBy::Room, &p1).unwrap();
        export_scatter(&enc, &mdp, ColorBy::Room, &p2).unwrap();
        assert_eq!(fs::read(p1).unwrap(), fs::read(p2).unwrap());
    }

    #[test]
    fn three_d_embedding_is_projected() {
        let mdp = build_wall_world(7, 7, 3).unwrap();
        let enc = linear_encoder(RepKind::Arc, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0], 2, 3).unwrap();
        let coords = plot_coordinates(&enc, &mdp).unwrap();
        assert_eq!(coords[0].len(), 2);
        let six = linear_encoder(RepKind::Arc, &[0.0; 8], 2, 4).unwrap();
        assert!(scatter_svg(&six, &mdp, ColorBy::Y).is_err());
    }

    #[test]
    fn gap_statistic_on_separated_groups() {
        let pts = vec![vec![0.0], vec![1.0], vec![10.0], vec![11.0]];
        let (cross, within) = gap_statistic(&pts, &[0, 0, 1, 1]).unwrap();
        assert_eq!((cross, within), (9.0, 1.0));
    }
}
