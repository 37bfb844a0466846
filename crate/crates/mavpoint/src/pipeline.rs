//! Feature pipeline: BBV and MAV featurization of a window series.
//!
//! The MAV side runs transform -> pad -> matrix-normalize -> decay ->
//! project -> weight; the BBV side runs raw -> row-normalize -> project.
//! Both halves end 15-dimensional by default and concatenate into the
//! combined matrix fed to clustering. Each matrix carries a provenance
//! stage tag and operations check it, so stages cannot be skipped or
//! reordered silently.

use std::collections::BTreeSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MavError, Result};
use crate::numfmt::g17;
use crate::trace::{WindowRecord, WindowSeries};

/// Provenance of a feature matrix within the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    BbvRaw,
    BbvNormalized,
    BbvProjected,
    MavTransformed,
    MavNormalized,
    MavDecayed,
    MavProjected,
    MavWeighted,
    Combined,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::BbvRaw,
        Stage::BbvNormalized,
        Stage::BbvProjected,
        Stage::MavTransformed,
        Stage::MavNormalized,
        Stage::MavDecayed,
        Stage::MavProjected,
        Stage::MavWeighted,
        Stage::Combined,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::BbvRaw => "bbv_raw",
            Stage::BbvNormalized => "bbv_normalized",
            Stage::BbvProjected => "bbv_projected",
            Stage::MavTransformed => "mav_transformed",
            Stage::MavNormalized => "mav_normalized",
            Stage::MavDecayed => "mav_decayed",
            Stage::MavProjected => "mav_projected",
            Stage::MavWeighted => "mav_weighted",
            Stage::Combined => "combined",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = MavError;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .iter()
            .copied()
            .find(|st| st.name() == s)
            .ok_or_else(|| MavError::Pipeline(format!("unknown stage {s:?}")))
    }
}

/// Dense row-major N x D real matrix with a pipeline stage tag.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Vec<f64>,
    n: usize,
    d: usize,
    stage: Stage,
}

impl FeatureMatrix {
    /// Builds from rectangular rows; every entry must be finite.
    pub fn from_rows(rows: Vec<Vec<f64>>, stage: Stage) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(n * d);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != d {
                return Err(MavError::Pipeline(format!(
                    "row {i} has length {}, expected {d}",
                    row.len()
                )));
            }
            data.extend(row);
        }
        Self::from_flat(data, n, d, stage)
    }

    pub fn from_flat(data: Vec<f64>, n: usize, d: usize, stage: Stage) -> Result<Self> {
        if data.len() != n * d {
            return Err(MavError::Pipeline(format!(
                "flat data length {} does not match {n}x{d}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(MavError::Pipeline(format!("non-finite entry {bad} in {stage} matrix")));
        }
        Ok(FeatureMatrix { data, n, d, stage })
    }

    pub fn n_windows(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.d.max(1)).take(self.n)
    }

    /// Reinterprets the matrix under a different stage tag without copying.
    /// Intended for loading externally produced matrices.
    pub fn with_stage(mut self, stage: Stage) -> Self {
        self.stage = stage;
        self
    }

    fn expect_stage(&self, wanted: &[Stage], op: &str) -> Result<()> {
        if wanted.contains(&self.stage) {
            Ok(())
        } else {
            Err(MavError::Pipeline(format!(
                "{op} expects stage {:?}, got {}",
                wanted.iter().map(|s| s.name()).collect::<Vec<_>>(),
                self.stage
            )))
        }
    }
}

/// Knobs for the feature pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Exponential decay factor applied over prior windows.
    #[serde(default = "default_decay_lambda")]
    pub decay_lambda: f64,
    /// How many prior windows the decay reaches back over.
    #[serde(default = "default_decay_horizon")]
    pub decay_horizon: usize,
    /// Output dimensionality of the random projection.
    #[serde(default = "default_projected_dim")]
    pub projected_dim: usize,
    /// Seed for the projection matrices. Mandatory: runs must be reproducible.
    pub projection_seed: u64,
    #[serde(default)]
    pub distance_metric: Metric,
    /// Optional cap on the padded MAV vector length.
    #[serde(default)]
    pub mav_length_cap: Option<usize>,
}

fn default_decay_lambda() -> f64 {
    0.95
}

fn default_decay_horizon() -> usize {
    10
}

fn default_projected_dim() -> usize {
    15
}

impl PipelineConfig {
    pub fn new(projection_seed: u64) -> Self {
        PipelineConfig {
            decay_lambda: default_decay_lambda(),
            decay_horizon: default_decay_horizon(),
            projected_dim: default_projected_dim(),
            projection_seed,
            distance_metric: Metric::Euclidean,
            mav_length_cap: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.decay_lambda > 0.0 && self.decay_lambda < 1.0) {
            return Err(MavError::Pipeline(format!(
                "decay_lambda {} outside (0,1)",
                self.decay_lambda
            )));
        }
        if self.projected_dim == 0 {
            return Err(MavError::Pipeline("projected_dim must be >= 1".into()));
        }
        if self.mav_length_cap == Some(0) {
            return Err(MavError::Pipeline("mav_length_cap must be >= 1".into()));
        }
        Ok(())
    }
}

/// Distance measure used for clustering and recurrence grids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Euclidean,
    Manhattan,
}

impl Metric {
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::Euclidean => a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt(),
            Metric::Manhattan => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
        }
    }
}

impl FromStr for Metric {
    type Err = MavError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(Metric::Euclidean),
            "manhattan" => Ok(Metric::Manhattan),
            other => Err(MavError::Pipeline(format!("unknown metric {other:?}"))),
        }
    }
}

/// Turns one window's MAV histogram into its inverse-frequency signature:
/// entry j is 1/count of the region with the j-th largest inverse frequency.
/// Region labels are discarded; the result is non-increasing and in (0,1].
pub fn transform_mav(record: &WindowRecord) -> Vec<f64> {
    let mut inv: Vec<f64> = record.mav.values().map(|&c| 1.0 / c as f64).collect();
    inv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    inv
}

/// Right-pads variable-length vectors with zeros into an N x D matrix,
/// D = min(cap, longest vector), floored at 1. Longer vectors keep their
/// first D entries: the largest inverse frequencies, i.e. the rarest
/// regions.
pub fn pad_to_matrix(vectors: Vec<Vec<f64>>, cap: Option<usize>) -> Result<FeatureMatrix> {
    let n = vectors.len();
    let longest = vectors.iter().map(|v| v.len()).max().unwrap_or(0);
    let d = cap.map_or(longest, |c| c.min(longest)).max(1);
    let mut data = vec![0.0; n * d];
    for (i, v) in vectors.into_iter().enumerate() {
        let take = v.len().min(d);
        data[i * d..i * d + take].copy_from_slice(&v[..take]);
    }
    FeatureMatrix::from_flat(data, n, d, Stage::MavTransformed)
}

/// MAV transform applied to every window of a series, padded into a matrix.
pub fn mav_transformed_matrix(series: &WindowSeries, cfg: &PipelineConfig) -> Result<FeatureMatrix> {
    let vectors = series.windows.iter().map(transform_mav).collect();
    pad_to_matrix(vectors, cfg.mav_length_cap)
}

/// Builds the raw BBV count matrix: one column per distinct block id across
/// the series, ordered lexicographically.
pub fn bbv_raw_matrix(series: &WindowSeries) -> Result<FeatureMatrix> {
    let blocks: BTreeSet<&str> = series
        .windows
        .iter()
        .flat_map(|w| w.bbv.keys().map(String::as_str))
        .collect();
    let index: Vec<&str> = blocks.into_iter().collect();
    let n = series.len();
    let d = index.len().max(1);
    let mut data = vec![0.0; n * d];
    for (i, w) in series.windows.iter().enumerate() {
        for (j, block) in index.iter().enumerate() {
            if let Some(&c) = w.bbv.get(*block) {
                data[i * d + j] = c as f64;
            }
        }
    }
    FeatureMatrix::from_flat(data, n, d, Stage::BbvRaw)
}

/// Divides every row by the mean row L2 norm, preserving the relative
/// intensity of memory traffic across windows. An all-zero matrix passes
/// through unchanged.
pub fn normalize_mav_matrix(m: &FeatureMatrix) -> Result<FeatureMatrix> {
    m.expect_stage(&[Stage::MavTransformed], "normalize_mav_matrix")?;
    let n = m.n_windows();
    let mean_norm = m
        .rows()
        .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
        .sum::<f64>()
        / n.max(1) as f64;
    let data = if mean_norm == 0.0 {
        m.data.clone()
    } else {
        m.data.iter().map(|v| v / mean_norm).collect()
    };
    FeatureMatrix::from_flat(data, n, m.dim(), Stage::MavNormalized)
}

/// Divides each row by its own L1 norm; zero rows pass through.
pub fn normalize_bbv_rows(m: &FeatureMatrix) -> Result<FeatureMatrix> {
    m.expect_stage(&[Stage::BbvRaw], "normalize_bbv_rows")?;
    let mut data = Vec::with_capacity(m.data.len());
    for row in m.rows() {
        let sum: f64 = row.iter().map(|v| v.abs()).sum();
        if sum == 0.0 {
            data.extend_from_slice(row);
        } else {
            data.extend(row.iter().map(|v| v / sum));
        }
    }
    FeatureMatrix::from_flat(data, m.n_windows(), m.dim(), Stage::BbvNormalized)
}

/// Exponentially decayed sliding mean: output row i is
/// `sum_{k=0..min(i,H)} lambda^k * row_{i-k}` renormalized by the weight sum,
/// so each output row is a convex combination of rows i-H..i.
pub fn apply_decay(m: &FeatureMatrix, cfg: &PipelineConfig) -> Result<FeatureMatrix> {
    m.expect_stage(&[Stage::MavNormalized], "apply_decay")?;
    cfg.validate()?;
    let n = m.n_windows();
    let d = m.dim();
    let horizon = cfg.decay_horizon;
    let lambda = cfg.decay_lambda;
    let weights: Vec<f64> = (0..=horizon).map(|k| lambda.powi(k as i32)).collect();

    let data: Vec<f64> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let reach = i.min(horizon);
            let total: f64 = weights[..=reach].iter().sum();
            let mut acc = vec![0.0; d];
            for (k, weight) in weights[..=reach].iter().enumerate() {
                let w = weight / total;
                for (a, v) in acc.iter_mut().zip(m.row(i - k)) {
                    *a += w * v;
                }
            }
            acc
        })
        .collect();
    FeatureMatrix::from_flat(data, n, d, Stage::MavDecayed)
}

fn projection_stream(stage: Stage) -> Result<u64> {
    // Distinct ChaCha streams keep the BBV and MAV projection matrices
    // independent under one seed.
    match stage {
        Stage::BbvNormalized => Ok(1),
        Stage::MavDecayed => Ok(2),
        other => Err(MavError::Pipeline(format!(
            "gaussian_project expects bbv_normalized or mav_decayed, got {other}"
        ))),
    }
}

/// Gaussian random projection to `projected_dim` columns. The projection
/// matrix has i.i.d. N(0, 1/projected_dim) entries drawn deterministically
/// from (projection_seed, stage), so distances are preserved in expectation
/// and the map is exactly linear.
pub fn gaussian_project(m: &FeatureMatrix, cfg: &PipelineConfig) -> Result<FeatureMatrix> {
    let stream = projection_stream(m.stage())?;
    cfg.validate()?;
    let d = m.dim();
    if d == 0 {
        return Err(MavError::Pipeline("cannot project a zero-dimension matrix".into()));
    }
    let k = cfg.projected_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.projection_seed);
    rng.set_stream(stream);
    let scale = 1.0 / (k as f64).sqrt();
    let proj: Vec<f64> = (0..d * k)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * scale
        })
        .collect();

    let out_stage = if m.stage() == Stage::BbvNormalized {
        Stage::BbvProjected
    } else {
        Stage::MavProjected
    };
    let data: Vec<f64> = (0..m.n_windows())
        .into_par_iter()
        .flat_map_iter(|i| {
            let row = m.row(i);
            let mut out = vec![0.0; k];
            for (x, prow) in row.iter().zip(proj.chunks_exact(k)) {
                if *x != 0.0 {
                    for (o, p) in out.iter_mut().zip(prow) {
                        *o += x * p;
                    }
                }
            }
            out
        })
        .collect();
    FeatureMatrix::from_flat(data, m.n_windows(), k, out_stage)
}

/// Share of instructions that are memory operations, over the whole series.
pub fn mem_fraction(series: &WindowSeries) -> Result<f64> {
    if series.total_instr == 0 {
        return Err(MavError::Pipeline("mem_fraction undefined: total_instr is 0".into()));
    }
    Ok(series.total_mem_ops as f64 / series.total_instr as f64)
}

/// Scales the projected MAV matrix by the application's memory-operation
/// fraction, so memory behavior only dominates clustering when the workload
/// is actually memory-intensive.
pub fn adaptive_weight(m: &FeatureMatrix, fraction: f64) -> Result<FeatureMatrix> {
    m.expect_stage(&[Stage::MavProjected], "adaptive_weight")?;
    if !(fraction.is_finite() && (0.0..=1.0).contains(&fraction)) {
        return Err(MavError::Pipeline(format!("weight fraction {fraction} outside [0,1]")));
    }
    let data = m.data.iter().map(|v| v * fraction).collect();
    FeatureMatrix::from_flat(data, m.n_windows(), m.dim(), Stage::MavWeighted)
}

/// Row-wise concatenation, BBV columns first.
pub fn combine(bbv: &FeatureMatrix, mav: &FeatureMatrix) -> Result<FeatureMatrix> {
    bbv.expect_stage(&[Stage::BbvProjected], "combine (bbv half)")?;
    mav.expect_stage(&[Stage::MavWeighted], "combine (mav half)")?;
    if bbv.n_windows() != mav.n_windows() {
        return Err(MavError::Pipeline(format!(
            "window count mismatch: bbv {} vs mav {}",
            bbv.n_windows(),
            mav.n_windows()
        )));
    }
    let n = bbv.n_windows();
    let d = bbv.dim() + mav.dim();
    let mut data = Vec::with_capacity(n * d);
    for i in 0..n {
        data.extend_from_slice(bbv.row(i));
        data.extend_from_slice(mav.row(i));
    }
    FeatureMatrix::from_flat(data, n, d, Stage::Combined)
}

/// All intermediate stages of one pipeline run; stages a mode does not
/// produce stay `None`.
#[derive(Default)]
pub struct PipelineStages {
    pub bbv_raw: Option<FeatureMatrix>,
    pub bbv_normalized: Option<FeatureMatrix>,
    pub bbv_projected: Option<FeatureMatrix>,
    pub mav_transformed: Option<FeatureMatrix>,
    pub mav_normalized: Option<FeatureMatrix>,
    pub mav_decayed: Option<FeatureMatrix>,
    pub mav_projected: Option<FeatureMatrix>,
    pub mav_weighted: Option<FeatureMatrix>,
    pub combined: Option<FeatureMatrix>,
    pub mem_fraction: f64,
}

impl PipelineStages {
    pub fn get(&self, stage: Stage) -> Option<&FeatureMatrix> {
        match stage {
            Stage::BbvRaw => self.bbv_raw.as_ref(),
            Stage::BbvNormalized => self.bbv_normalized.as_ref(),
            Stage::BbvProjected => self.bbv_projected.as_ref(),
            Stage::MavTransformed => self.mav_transformed.as_ref(),
            Stage::MavNormalized => self.mav_normalized.as_ref(),
            Stage::MavDecayed => self.mav_decayed.as_ref(),
            Stage::MavProjected => self.mav_projected.as_ref(),
            Stage::MavWeighted => self.mav_weighted.as_ref(),
            Stage::Combined => self.combined.as_ref(),
        }
    }
}

/// Runs the BBV half only (the classic SimPoint baseline).
pub fn run_bbv(series: &WindowSeries, cfg: &PipelineConfig) -> Result<PipelineStages> {
    cfg.validate()?;
    let bbv_raw = bbv_raw_matrix(series)?;
    let bbv_normalized = normalize_bbv_rows(&bbv_raw)?;
    let bbv_projected = gaussian_project(&bbv_normalized, cfg)?;
    Ok(PipelineStages {
        bbv_raw: Some(bbv_raw),
        bbv_normalized: Some(bbv_normalized),
        bbv_projected: Some(bbv_projected),
        mem_fraction: mem_fraction(series)?,
        ..PipelineStages::default()
    })
}

/// Runs the MAV half only: transform, pad, normalize, decay, project, weight.
pub fn run_mav(series: &WindowSeries, cfg: &PipelineConfig) -> Result<PipelineStages> {
    cfg.validate()?;
    let fraction = mem_fraction(series)?;
    let mav_transformed = mav_transformed_matrix(series, cfg)?;
    let mav_normalized = normalize_mav_matrix(&mav_transformed)?;
    let mav_decayed = apply_decay(&mav_normalized, cfg)?;
    let mav_projected = gaussian_project(&mav_decayed, cfg)?;
    let mav_weighted = adaptive_weight(&mav_projected, fraction)?;
    Ok(PipelineStages {
        mav_transformed: Some(mav_transformed),
        mav_normalized: Some(mav_normalized),
        mav_decayed: Some(mav_decayed),
        mav_projected: Some(mav_projected),
        mav_weighted: Some(mav_weighted),
        mem_fraction: fraction,
        ..PipelineStages::default()
    })
}

/// Runs both halves and the combination.
pub fn run_combined(series: &WindowSeries, cfg: &PipelineConfig) -> Result<PipelineStages> {
    let mut stages = run_bbv(series, cfg)?;
    let mav = run_mav(series, cfg)?;
    let combined = combine(
        stages.bbv_projected.as_ref().expect("bbv half present"),
        mav.mav_weighted.as_ref().expect("mav half present"),
    )?;
    stages.mav_transformed = mav.mav_transformed;
    stages.mav_normalized = mav.mav_normalized;
    stages.mav_decayed = mav.mav_decayed;
    stages.mav_projected = mav.mav_projected;
    stages.mav_weighted = mav.mav_weighted;
    stages.combined = Some(combined);
    Ok(stages)
}

/// Writes a matrix as CSV, one row per window, 17-significant-digit reals.
pub fn write_matrix_csv(m: &FeatureMatrix, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| MavError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for row in m.rows() {
        let line = row.iter().map(|v| g17(*v)).collect::<Vec<_>>().join(",");
        writeln!(w, "{line}").map_err(|e| MavError::io(path, e))?;
    }
    w.flush().map_err(|e| MavError::io(path, e))?;
    Ok(())
}

/// Reads a CSV matrix back under the given stage tag.
pub fn read_matrix_csv(path: &Path, stage: Stage) -> Result<FeatureMatrix> {
    let file = File::open(path).map_err(|e| MavError::io(path, e))?;
    let reader = BufReader::new(file);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| MavError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|tok| tok.trim().parse::<f64>()).collect();
        rows.push(row.map_err(|e| MavError::MalformedLine {
            path: path.into(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    FeatureMatrix::from_rows(rows, stage)
}
