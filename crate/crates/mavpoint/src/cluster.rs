//! SimPoint-style k-means clustering and representative selection.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MavError, Result};
use crate::numfmt::g17;
use crate::pipeline::{FeatureMatrix, Stage};

const MAX_ITERS: usize = 100;
const REL_TOL: f64 = 1e-6;
pub const DEFAULT_RESTARTS: usize = 5;

/// Result of one k-means run: per-window assignments, centroids (row-major
/// k x D), and the within-cluster sum of squared distances.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Clustering {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    pub k: usize,
    pub seed: u64,
}

/// Selected representative windows, one per cluster, with weights that sum
/// to 1.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimPointSet {
    pub points: Vec<SimPoint>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimPoint {
    pub window_index: usize,
    pub cluster_id: usize,
    pub weight: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid by squared Euclidean distance. Exact ties prefer the
/// point's current assignment (keeps duplicate-heavy inputs stable), then
/// the lowest centroid index.
fn nearest(row: &[f64], centroids: &[Vec<f64>], current: Option<usize>) -> usize {
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(row, c);
        if d < best_d {
            best_d = d;
            best = j;
        } else if d == best_d {
            if let Some(cur) = current {
                if j == cur && best != cur {
                    best = j;
                }
            }
        }
    }
    best
}

fn kmeans_pp_init(m: &FeatureMatrix, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = m.n_windows();
    let first = rng.gen_range(0..n);
    let mut centroids: Vec<Vec<f64>> = vec![m.row(first).to_vec()];
    let mut min_d: Vec<f64> = (0..n).map(|i| sq_dist(m.row(i), &centroids[0])).collect();

    while centroids.len() < k {
        let total: f64 = min_d.iter().sum();
        let pick = if total > 0.0 {
            let target: f64 = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, d) in min_d.iter().enumerate() {
                acc += d;
                if acc > target {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            // Every remaining point coincides with a centroid; any pick works.
            rng.gen_range(0..n)
        };
        let row = m.row(pick).to_vec();
        for (i, d) in min_d.iter_mut().enumerate() {
            let nd = sq_dist(m.row(i), &row);
            if nd < *d {
                *d = nd;
            }
        }
        centroids.push(row);
    }
    centroids
}

/// Moves each empty cluster's centroid onto the point currently farthest
/// from its own centroid and reassigns that point. Ties break toward the
/// lowest window index.
fn repair_empty_clusters(
    m: &FeatureMatrix,
    assignments: &mut [usize],
    centroids: &mut [Vec<f64>],
) {
    let k = centroids.len();
    let mut counts = vec![0usize; k];
    for &a in assignments.iter() {
        counts[a] += 1;
    }
    let mut stolen = vec![false; assignments.len()];
    for e in 0..k {
        if counts[e] > 0 {
            continue;
        }
        let mut far = None;
        let mut far_d = -1.0;
        for i in 0..assignments.len() {
            if stolen[i] || counts[assignments[i]] <= 1 {
                continue;
            }
            let d = sq_dist(m.row(i), &centroids[assignments[i]]);
            if d > far_d {
                far_d = d;
                far = Some(i);
            }
        }
        if let Some(i) = far {
            counts[assignments[i]] -= 1;
            assignments[i] = e;
            counts[e] = 1;
            centroids[e] = m.row(i).to_vec();
            stolen[i] = true;
        }
    }
}

fn update_centroids(m: &FeatureMatrix, assignments: &[usize], k: usize) -> Vec<Vec<f64>> {
    let d = m.dim();
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (i, &a) in assignments.iter().enumerate() {
        counts[a] += 1;
        for (s, v) in sums[a].iter_mut().zip(m.row(i)) {
            *s += v;
        }
    }
    for (sum, &c) in sums.iter_mut().zip(&counts) {
        if c > 0 {
            for s in sum.iter_mut() {
                *s /= c as f64;
            }
        }
    }
    sums
}

fn compute_inertia(m: &FeatureMatrix, assignments: &[usize], centroids: &[Vec<f64>]) -> f64 {
    (0..m.n_windows())
        .into_par_iter()
        .map(|i| sq_dist(m.row(i), &centroids[assignments[i]]))
        .sum()
}

fn lloyd(m: &FeatureMatrix, k: usize, rng: &mut ChaCha8Rng, trace: Option<&mut Vec<f64>>) -> (Vec<usize>, Vec<Vec<f64>>, f64) {
    let n = m.n_windows();
    let mut centroids = kmeans_pp_init(m, k, rng);
    let mut assignments: Vec<usize> = vec![usize::MAX; n];
    let mut prev_inertia = f64::INFINITY;
    let mut trace = trace;

    for _ in 0..MAX_ITERS {
        let cur: Vec<usize> = (0..n)
            .into_par_iter()
            .map(|i| {
                let current = if assignments[i] == usize::MAX {
                    None
                } else {
                    Some(assignments[i])
                };
                nearest(m.row(i), &centroids, current)
            })
            .collect();
        assignments = cur;
        repair_empty_clusters(m, &mut assignments, &mut centroids);
        centroids = update_centroids(m, &assignments, k);
        let inertia = compute_inertia(m, &assignments, &centroids);
        if let Some(t) = trace.as_deref_mut() {
            t.push(inertia);
        }
        if prev_inertia.is_finite()
            && (prev_inertia == 0.0 || (prev_inertia - inertia) / prev_inertia < REL_TOL)
        {
            break;
        }
        prev_inertia = inertia;
    }

    // Stabilization: make assignments consistent with the final centroids.
    // Sticky ties plus repair terminate within k passes even when the input
    // holds fewer distinct rows than clusters.
    for _ in 0..k {
        let cur: Vec<usize> = (0..n)
            .into_par_iter()
            .map(|i| nearest(m.row(i), &centroids, Some(assignments[i])))
            .collect();
        assignments = cur;
        let mut counts = vec![0usize; k];
        for &a in &assignments {
            counts[a] += 1;
        }
        if counts.iter().all(|&c| c > 0) {
            break;
        }
        repair_empty_clusters(m, &mut assignments, &mut centroids);
    }
    let inertia = compute_inertia(m, &assignments, &centroids);
    (assignments, centroids, inertia)
}

/// Lloyd's algorithm with k-means++ initialization. Runs `restarts`
/// independent seeded starts and keeps the lowest-inertia result (ties go
/// to the earliest restart). Empty clusters are repaired by reseeding with
/// the point farthest from its centroid.
pub fn kmeans(m: &FeatureMatrix, k: usize, seed: u64, restarts: usize) -> Result<Clustering> {
    let n = m.n_windows();
    const CLUSTERABLE: [Stage; 4] = [
        Stage::Combined,
        Stage::BbvProjected,
        Stage::MavProjected,
        Stage::MavWeighted,
    ];
    if !CLUSTERABLE.contains(&m.stage()) {
        return Err(MavError::Clustering(format!(
            "cannot cluster a {} matrix; finish the pipeline first",
            m.stage()
        )));
    }
    if k == 0 {
        return Err(MavError::Clustering("k must be positive".into()));
    }
    if k > n {
        return Err(MavError::Clustering(format!(
            "k exceeds window count ({k} > {n})"
        )));
    }
    if restarts == 0 {
        return Err(MavError::Clustering("restarts must be positive".into()));
    }

    let mut best: Option<(Vec<usize>, Vec<Vec<f64>>, f64)> = None;
    for restart in 0..restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(restart as u64);
        let run = lloyd(m, k, &mut rng, None);
        let better = match &best {
            None => true,
            Some((_, _, best_inertia)) => run.2 < *best_inertia,
        };
        if better {
            best = Some(run);
        }
    }
    let (assignments, centroids, inertia) = best.expect("restarts >= 1");
    Ok(Clustering {
        assignments,
        centroids,
        inertia,
        k,
        seed,
    })
}

#[cfg(test)]
pub(crate) fn kmeans_single_with_trace(
    m: &FeatureMatrix,
    k: usize,
    seed: u64,
) -> (Clustering, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    let mut trace = Vec::new();
    let (assignments, centroids, inertia) = lloyd(m, k, &mut rng, Some(&mut trace));
    (
        Clustering {
            assignments,
            centroids,
            inertia,
            k,
            seed,
        },
        trace,
    )
}

/// Picks each cluster's representative: the member nearest its centroid,
/// ties broken by the smaller window index. Weight = cluster share of N.
pub fn select_simpoints(c: &Clustering, m: &FeatureMatrix) -> Result<SimPointSet> {
    let n = m.n_windows();
    if c.assignments.len() != n {
        return Err(MavError::Clustering(format!(
            "clustering covers {} windows, matrix has {n}",
            c.assignments.len()
        )));
    }
    let mut points = Vec::with_capacity(c.k);
    for cluster in 0..c.k {
        let mut rep = None;
        let mut rep_d = f64::INFINITY;
        let mut count = 0usize;
        for (i, &a) in c.assignments.iter().enumerate() {
            if a != cluster {
                continue;
            }
            count += 1;
            let d = sq_dist(m.row(i), &c.centroids[cluster]);
            if d < rep_d {
                rep_d = d;
                rep = Some(i);
            }
        }
        let rep = rep.ok_or_else(|| {
            MavError::Clustering(format!("cluster {cluster} has no members"))
        })?;
        points.push(SimPoint {
            window_index: rep,
            cluster_id: cluster,
            weight: count as f64 / n as f64,
        });
    }
    Ok(SimPointSet { points })
}

impl SimPointSet {
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.points.iter().map(|p| p.weight).sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(MavError::Clustering(format!("weights sum to {sum}, expected 1")));
        }
        let mut seen = std::collections::BTreeSet::new();
        for p in &self.points {
            if p.weight <= 0.0 {
                return Err(MavError::Clustering(format!(
                    "cluster {} has non-positive weight {}",
                    p.cluster_id, p.weight
                )));
            }
            if !seen.insert(p.window_index) {
                return Err(MavError::Clustering(format!(
                    "window {} selected twice",
                    p.window_index
                )));
            }
        }
        Ok(())
    }
}

/// Spherical-Gaussian BIC of a clustering, pooled-variance form.
pub fn bic_score(m: &FeatureMatrix, c: &Clustering) -> f64 {
    let n = m.n_windows() as f64;
    let d = m.dim() as f64;
    let k = c.k as f64;
    let mut counts = vec![0usize; c.k];
    for &a in &c.assignments {
        counts[a] += 1;
    }
    let variance = if m.n_windows() > c.k {
        (c.inertia / (d * (n - k))).max(1e-12)
    } else {
        1e-12
    };
    let mut loglik = 0.0;
    for &cnt in &counts {
        if cnt > 0 {
            loglik += cnt as f64 * ((cnt as f64 / n).ln());
        }
    }
    loglik -= n * d / 2.0 * (2.0 * std::f64::consts::PI * variance).ln();
    loglik -= d * (n - k) / 2.0;
    let params = (k - 1.0) + d * k + 1.0;
    loglik - params / 2.0 * n.ln()
}

/// Smallest k in 1..=k_max whose BIC reaches 90% of the way from the lowest
/// to the highest score over the range: the established SimPoint heuristic.
pub fn choose_k(m: &FeatureMatrix, k_max: usize, seed: u64) -> Result<usize> {
    choose_k_with_threshold(m, k_max, seed, DEFAULT_RESTARTS, 0.9)
}

pub fn choose_k_with_threshold(
    m: &FeatureMatrix,
    k_max: usize,
    seed: u64,
    restarts: usize,
    threshold: f64,
) -> Result<usize> {
    if k_max == 0 || k_max > m.n_windows() {
        return Err(MavError::Clustering(format!(
            "k_max {k_max} outside 1..={}",
            m.n_windows()
        )));
    }
    let scores: Vec<f64> = (1..=k_max)
        .map(|k| {
            let c = kmeans(m, k, seed, restarts)?;
            Ok(bic_score(m, &c))
        })
        .collect::<Result<_>>()?;
    let lo = scores.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let cut = lo + threshold * (hi - lo);
    for (idx, &s) in scores.iter().enumerate() {
        if s >= cut {
            return Ok(idx + 1);
        }
    }
    Ok(k_max)
}

/// Writes `<base>.simpoints` ("window_index cluster_id" lines) and
/// `<base>.weights` ("weight cluster_id" lines), mirroring the SimPoint
/// tool's output conventions.
pub fn write_simpoint_files(sp: &SimPointSet, base: &Path) -> Result<(PathBuf, PathBuf)> {
    sp.validate()?;
    let sp_path = base.with_extension("simpoints");
    let w_path = base.with_extension("weights");
    let mut f = BufWriter::new(File::create(&sp_path).map_err(|e| MavError::io(&sp_path, e))?);
    for p in &sp.points {
        writeln!(f, "{} {}", p.window_index, p.cluster_id).map_err(|e| MavError::io(&sp_path, e))?;
    }
    f.flush().map_err(|e| MavError::io(&sp_path, e))?;
    let mut f = BufWriter::new(File::create(&w_path).map_err(|e| MavError::io(&w_path, e))?);
    for p in &sp.points {
        writeln!(f, "{} {}", g17(p.weight), p.cluster_id).map_err(|e| MavError::io(&w_path, e))?;
    }
    f.flush().map_err(|e| MavError::io(&w_path, e))?;
    Ok((sp_path, w_path))
}
