//! Analysis artifacts: recurrence grids, phase timelines, and
//! projection-accuracy reports against the trace's oracle metric.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::{Clustering, SimPointSet};
use crate::error::{MavError, Result};
use crate::numfmt::g17;
use crate::pipeline::{FeatureMatrix, Metric, Stage};
use crate::synth::{ground_truth_labels, WorkloadSpec};
use crate::trace::WindowSeries;

/// Block-averaged pairwise-distance matrix over a feature matrix's rows.
#[derive(Debug, Clone)]
pub struct RecurrenceGrid {
    /// Row-major M x M distances, symmetric.
    pub values: Vec<f64>,
    pub m: usize,
    pub source_stage: Stage,
    pub n_windows: usize,
    pub metric: Metric,
}

impl RecurrenceGrid {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.m + j]
    }
}

/// Computes the N x N pairwise distance matrix and block-averages it into
/// an M x M grid, M = min(N, max_dim), block boundaries at floor(i*N/M).
pub fn recurrence(m: &FeatureMatrix, metric: Metric, max_dim: usize) -> Result<RecurrenceGrid> {
    let n = m.n_windows();
    if n == 0 {
        return Err(MavError::Report("recurrence needs at least one window".into()));
    }
    if max_dim == 0 {
        return Err(MavError::Report("max_dim must be positive".into()));
    }
    let grid_dim = n.min(max_dim);
    let bound = |i: usize| i * n / grid_dim;

    let dist: Vec<f64> = (0..n * n)
        .into_par_iter()
        .map(|idx| {
            let (i, j) = (idx / n, idx % n);
            if i <= j {
                metric.distance(m.row(i), m.row(j))
            } else {
                0.0 // filled from the transpose below
            }
        })
        .collect();

    let full = |i: usize, j: usize| if i <= j { dist[i * n + j] } else { dist[j * n + i] };

    let mut values = vec![0.0; grid_dim * grid_dim];
    for bi in 0..grid_dim {
        for bj in bi..grid_dim {
            let (r0, r1) = (bound(bi), bound(bi + 1));
            let (c0, c1) = (bound(bj), bound(bj + 1));
            let mut sum = 0.0;
            for i in r0..r1 {
                for j in c0..c1 {
                    sum += full(i, j);
                }
            }
            let avg = sum / ((r1 - r0) * (c1 - c0)) as f64;
            values[bi * grid_dim + bj] = avg;
            values[bj * grid_dim + bi] = avg;
        }
    }
    Ok(RecurrenceGrid {
        values,
        m: grid_dim,
        source_stage: m.stage(),
        n_windows: n,
        metric,
    })
}

/// Writes the grid as a binary PGM (P5, maxval 255). Pixels scale linearly
/// with distance: fully self-similar regions render black, the most
/// dissimilar pair renders white. An all-zero grid is all black.
pub fn emit_pgm(grid: &RecurrenceGrid, path: &Path) -> Result<()> {
    let max = grid.values.iter().cloned().fold(0.0f64, f64::max);
    let mut out = Vec::with_capacity(grid.m * grid.m + 32);
    out.extend_from_slice(format!("P5\n{} {}\n255\n", grid.m, grid.m).as_bytes());
    for v in &grid.values {
        let pixel = if max == 0.0 {
            0u8
        } else {
            (255.0 * v / max).round().clamp(0.0, 255.0) as u8
        };
        out.push(pixel);
    }
    std::fs::write(path, out).map_err(|e| MavError::io(path, e))
}

/// Writes the grid as CSV for external plotting.
pub fn write_grid_csv(grid: &RecurrenceGrid, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| MavError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for row in grid.values.chunks_exact(grid.m) {
        let line = row.iter().map(|v| g17(*v)).collect::<Vec<_>>().join(",");
        writeln!(w, "{line}").map_err(|e| MavError::io(path, e))?;
    }
    w.flush().map_err(|e| MavError::io(path, e))
}

/// Accuracy of simpoint-weighted projection against the full-trace oracle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProjectionReport {
    /// Instruction-weighted mean of truth_ipc over every window.
    pub true_metric: f64,
    /// Weighted sum of the representatives' truth_ipc.
    pub estimated_metric: f64,
    /// estimated / true.
    pub accuracy: f64,
    pub per_cluster: Vec<ClusterContribution>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterContribution {
    pub cluster_id: usize,
    pub representative_index: usize,
    pub weight: f64,
    pub representative_metric: f64,
}

/// Projects the oracle metric from the simpoint set and compares it with
/// the instruction-weighted full-trace value.
pub fn evaluate_projection(series: &WindowSeries, sp: &SimPointSet) -> Result<ProjectionReport> {
    sp.validate()?;
    let mut weighted = 0.0;
    let mut instr = 0.0;
    for w in &series.windows {
        let ipc = w.truth_ipc.ok_or_else(|| {
            MavError::Report(format!("window {} lacks truth_ipc", w.index))
        })?;
        weighted += ipc * w.instr_count as f64;
        instr += w.instr_count as f64;
    }
    let true_metric = weighted / instr;

    let mut estimated = 0.0;
    let mut per_cluster = Vec::with_capacity(sp.points.len());
    for p in &sp.points {
        let w = series.windows.get(p.window_index).ok_or_else(|| {
            MavError::Report(format!(
                "representative index {} outside series of {}",
                p.window_index,
                series.len()
            ))
        })?;
        let metric = w.truth_ipc.expect("checked above");
        estimated += p.weight * metric;
        per_cluster.push(ClusterContribution {
            cluster_id: p.cluster_id,
            representative_index: p.window_index,
            weight: p.weight,
            representative_metric: metric,
        });
    }
    Ok(ProjectionReport {
        true_metric,
        estimated_metric: estimated,
        accuracy: estimated / true_metric,
        per_cluster,
    })
}

pub fn write_report_json(report: &ProjectionReport, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(report)
        .map_err(|e| MavError::Report(format!("serialize report: {e}")))?;
    std::fs::write(path, json + "\n").map_err(|e| MavError::io(path, e))
}

/// Adjusted Rand index between two labelings of the same windows.
/// 1 means identical partitions, ~0 means chance agreement.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings must cover the same windows");
    let n = a.len();
    if n == 0 {
        return 0.0;
    }
    let ka = a.iter().max().map_or(0, |&m| m + 1);
    let kb = b.iter().max().map_or(0, |&m| m + 1);
    let mut table = vec![0u64; ka * kb];
    let mut rows = vec![0u64; ka];
    let mut cols = vec![0u64; kb];
    for (&x, &y) in a.iter().zip(b) {
        table[x * kb + y] += 1;
        rows[x] += 1;
        cols[y] += 1;
    }
    let c2 = |x: u64| (x * x.saturating_sub(1)) as f64 / 2.0;
    let sum_ij: f64 = table.iter().map(|&x| c2(x)).sum();
    let sum_a: f64 = rows.iter().map(|&x| c2(x)).sum();
    let sum_b: f64 = cols.iter().map(|&x| c2(x)).sum();
    let total = c2(n as u64);
    let expected = sum_a * sum_b / total;
    let max = (sum_a + sum_b) / 2.0;
    if max == expected {
        // Degenerate: both partitions trivial.
        return if sum_ij == expected { 1.0 } else { 0.0 };
    }
    (sum_ij - expected) / (max - expected)
}

/// ARI between a clustering and the workload's ground-truth phase labels.
/// Fails when the series does not line up with the workload that
/// generated it.
pub fn phase_alignment(
    series: &WindowSeries,
    spec: &WorkloadSpec,
    clustering: &Clustering,
) -> Result<f64> {
    let labels = ground_truth_labels(spec);
    if labels.len() != series.len() || clustering.assignments.len() != series.len() {
        return Err(MavError::Report(format!(
            "labels unavailable: spec covers {} windows, series {}, clustering {}",
            labels.len(),
            series.len(),
            clustering.assignments.len()
        )));
    }
    let mut ids = std::collections::BTreeMap::new();
    let truth: Vec<usize> = labels
        .iter()
        .map(|name| {
            let next = ids.len();
            *ids.entry(name.clone()).or_insert(next)
        })
        .collect();
    Ok(adjusted_rand_index(&truth, &clustering.assignments))
}

/// Per-window cluster sequence plus each cluster's representative window.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhaseTimeline {
    pub cluster_ids: Vec<usize>,
    /// (cluster_id, representative window index) pairs.
    pub representatives: Vec<(usize, usize)>,
}

impl PhaseTimeline {
    pub fn new(clustering: &Clustering, sp: &SimPointSet) -> Self {
        PhaseTimeline {
            cluster_ids: clustering.assignments.clone(),
            representatives: sp
                .points
                .iter()
                .map(|p| (p.cluster_id, p.window_index))
                .collect(),
        }
    }
}

/// Writes `timeline.csv`: window_index, cluster_id, is_representative,
/// truth_ipc (empty when absent).
pub fn write_timeline_csv(
    series: &WindowSeries,
    timeline: &PhaseTimeline,
    path: &Path,
) -> Result<()> {
    if timeline.cluster_ids.len() != series.len() {
        return Err(MavError::Report(format!(
            "timeline covers {} windows, series has {}",
            timeline.cluster_ids.len(),
            series.len()
        )));
    }
    let reps: std::collections::BTreeSet<usize> =
        timeline.representatives.iter().map(|&(_, w)| w).collect();
    let file = File::create(path).map_err(|e| MavError::io(path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "window_index,cluster_id,is_representative,truth_ipc")
        .map_err(|e| MavError::io(path, e))?;
    for (i, rec) in series.windows.iter().enumerate() {
        let ipc = rec.truth_ipc.map(g17).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{}",
            i,
            timeline.cluster_ids[i],
            u8::from(reps.contains(&i)),
            ipc
        )
        .map_err(|e| MavError::io(path, e))?;
    }
    w.flush().map_err(|e| MavError::io(path, e))
}
