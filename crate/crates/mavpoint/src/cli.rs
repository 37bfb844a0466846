//! Command-line interface: reproducible workflows over the library modules.
//!
//! Exit codes: 0 success, 1 internal error (failed output writes and other
//! unexpected conditions), 2 usage or validation error (bad flags, missing
//! or malformed inputs, impossible parameters).

use std::fmt;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Parser, Subcommand, ValueEnum};

use crate::cluster::{kmeans, select_simpoints, write_simpoint_files, Clustering, SimPointSet};
use crate::config::{RecurrenceConfig, RunConfig};
use crate::error::{MavError, Result};
use crate::pipeline::{read_matrix_csv, write_matrix_csv, PipelineStages, Stage};
use crate::report::{
    emit_pgm, evaluate_projection, phase_alignment, recurrence, write_grid_csv,
    write_report_json, write_timeline_csv, PhaseTimeline,
};
use crate::synth::generate;
use crate::trace::{read_series, write_series, WindowSeries};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Parser)]
#[command(
    name = "mavpoint",
    version,
    about = "BBV+MAV phase analysis: synthetic traces, feature pipeline, simpoint selection, projection evaluation"
)]
pub struct Cli {
    /// Bound internal parallelism (default: machine parallelism). Results
    /// do not depend on the thread count.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate a synthetic trace from a workload + oracle config.
    Synth {
        /// Config file holding "workload" and "oracle" sections.
        #[arg(long)]
        spec: PathBuf,
        /// Output trace path (.jsonl, or .jsonl.gz for compressed).
        #[arg(long)]
        out: PathBuf,
    },
    /// Featurize a trace into matrices.
    Pipeline {
        #[arg(long)]
        trace: PathBuf,
        /// Config file holding a "pipeline" section.
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long = "out-dir")]
        out_dir: PathBuf,
        /// Dump an intermediate stage as CSV: --dump-stage <stage> <path>.
        /// May repeat.
        #[arg(long = "dump-stage", num_args = 2, value_names = ["STAGE", "PATH"], action = ArgAction::Append)]
        dump_stage: Vec<String>,
    },
    /// K-means over a matrix CSV; writes simpoints, weights, and a JSON
    /// result bundle.
    Cluster {
        #[arg(long)]
        matrix: PathBuf,
        /// Config file holding a "clustering" section (seed, restarts, k).
        #[arg(long)]
        config: PathBuf,
        /// Override the cluster count from the config.
        #[arg(long)]
        k: Option<usize>,
        /// Stage tag of the input matrix.
        #[arg(long, default_value = "combined")]
        stage: String,
        #[arg(long = "out-dir")]
        out_dir: PathBuf,
        /// Basename for the output files.
        #[arg(long, default_value = "run")]
        name: String,
    },
    /// Recurrence (self-similarity) grid of a matrix CSV, as CSV + PGM.
    Recplot {
        #[arg(long)]
        matrix: PathBuf,
        /// Optional config file with a "recurrence" section.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "max-dim")]
        max_dim: Option<usize>,
        /// euclidean or manhattan.
        #[arg(long)]
        metric: Option<String>,
        /// Stage tag of the input matrix.
        #[arg(long, default_value = "combined")]
        stage: String,
        #[arg(long = "out-dir")]
        out_dir: PathBuf,
    },
    /// Project the oracle metric from a cluster bundle and report accuracy.
    Eval {
        #[arg(long)]
        trace: PathBuf,
        /// Cluster bundle JSON produced by `cluster` or `run-all`.
        #[arg(long)]
        clusters: PathBuf,
        /// Optional config with a "workload" section for phase-alignment ARI.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output report path; timeline.csv is written next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// synth -> pipeline (bbv + combined) -> cluster -> eval, then print a
    /// two-row accuracy table.
    RunAll {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "out-dir")]
        out_dir: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Bbv,
    Mav,
    Combined,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Bbv => "bbv",
            Mode::Mav => "mav",
            Mode::Combined => "combined",
        })
    }
}

/// A failure routed to an exit code.
enum Failure {
    Usage(String),
    Internal(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Internal(_) => EXIT_INTERNAL,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Internal(m) => m,
        }
    }
}

/// Input problems are usage errors: the caller handed us a bad or missing
/// file or impossible parameters.
fn usage<T>(r: Result<T>) -> std::result::Result<T, Failure> {
    r.map_err(|e| Failure::Usage(e.to_string()))
}

/// Output problems are internal errors.
fn internal<T>(r: Result<T>) -> std::result::Result<T, Failure> {
    r.map_err(|e| Failure::Internal(e.to_string()))
}

/// The JSON bundle tying a clustering to its simpoint selection.
#[derive(serde::Serialize, serde::Deserialize)]
pub struct ClusterBundle {
    pub clustering: Clustering,
    pub simpoints: SimPointSet,
}

impl ClusterBundle {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| MavError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| MavError::MalformedLine {
            path: path.into(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| MavError::Report(format!("serialize bundle: {e}")))?;
        std::fs::write(path, json + "\n").map_err(|e| MavError::io(path, e))
    }
}

pub fn run(cli: Cli) -> i32 {
    if let Some(threads) = cli.threads {
        // Ignore failure: the global pool may already exist (e.g. in tests).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    let result = match cli.command {
        Command::Synth { spec, out } => cmd_synth(&spec, &out),
        Command::Pipeline {
            trace,
            config,
            mode,
            out_dir,
            dump_stage,
        } => cmd_pipeline(&trace, &config, mode, &out_dir, &dump_stage),
        Command::Cluster {
            matrix,
            config,
            k,
            stage,
            out_dir,
            name,
        } => cmd_cluster(&matrix, &config, k, &stage, &out_dir, &name),
        Command::Recplot {
            matrix,
            config,
            max_dim,
            metric,
            stage,
            out_dir,
        } => cmd_recplot(&matrix, config.as_deref(), max_dim, metric.as_deref(), &stage, &out_dir),
        Command::Eval {
            trace,
            clusters,
            config,
            out,
        } => cmd_eval(&trace, &clusters, config.as_deref(), &out),
        Command::RunAll { config, out_dir } => cmd_run_all(&config, &out_dir),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("mavpoint: {}", f.message());
            f.code()
        }
    }
}

fn ensure_out_dir(dir: &Path) -> std::result::Result<(), Failure> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Failure::Internal(format!("{}: {e}", dir.display())))
}

fn cmd_synth(spec: &Path, out: &Path) -> std::result::Result<(), Failure> {
    let cfg = usage(RunConfig::load(spec))?;
    let workload = usage(cfg.require_workload())?;
    let oracle = usage(cfg.require_oracle())?;
    let series = usage(generate(workload, oracle))?;
    internal(write_series(&series, out))?;
    println!(
        "wrote {} windows ({} instructions) to {}",
        series.len(),
        series.total_instr,
        out.display()
    );
    Ok(())
}

fn run_mode(series: &WindowSeries, cfg: &RunConfig, mode: Mode) -> Result<PipelineStages> {
    let pcfg = cfg.require_pipeline()?;
    match mode {
        Mode::Bbv => crate::pipeline::run_bbv(series, pcfg),
        Mode::Mav => crate::pipeline::run_mav(series, pcfg),
        Mode::Combined => crate::pipeline::run_combined(series, pcfg),
    }
}

fn final_stage(mode: Mode) -> Stage {
    match mode {
        Mode::Bbv => Stage::BbvProjected,
        Mode::Mav => Stage::MavWeighted,
        Mode::Combined => Stage::Combined,
    }
}

fn cmd_pipeline(
    trace: &Path,
    config: &Path,
    mode: Mode,
    out_dir: &Path,
    dump_stage: &[String],
) -> std::result::Result<(), Failure> {
    let series = usage(read_series(trace))?;
    let cfg = usage(RunConfig::load(config))?;
    let stages = usage(run_mode(&series, &cfg, mode))?;
    if mode != Mode::Bbv && stages.mem_fraction == 0.0 {
        eprintln!("warning: trace has no memory operations; weighted MAV matrix is all zeros");
    }
    ensure_out_dir(out_dir)?;
    let out_matrix = stages.get(final_stage(mode)).expect("mode output present");
    let out_path = out_dir.join(format!("matrix_{mode}.csv"));
    internal(write_matrix_csv(out_matrix, &out_path))?;
    println!(
        "wrote {}x{} {} matrix to {}",
        out_matrix.n_windows(),
        out_matrix.dim(),
        out_matrix.stage(),
        out_path.display()
    );
    for pair in dump_stage.chunks_exact(2) {
        let stage: Stage = usage(pair[0].parse())?;
        let m = stages.get(stage).ok_or_else(|| {
            Failure::Usage(format!("stage {stage} is not produced in mode {mode}"))
        })?;
        internal(write_matrix_csv(m, Path::new(&pair[1])))?;
        println!("dumped {stage} to {}", pair[1]);
    }
    Ok(())
}

fn cmd_cluster(
    matrix: &Path,
    config: &Path,
    k_flag: Option<usize>,
    stage: &str,
    out_dir: &Path,
    name: &str,
) -> std::result::Result<(), Failure> {
    let stage: Stage = usage(stage.parse())?;
    let m = usage(read_matrix_csv(matrix, stage))?;
    let cfg = usage(RunConfig::load(config))?;
    let cc = usage(cfg.require_clustering())?;
    let k = k_flag.unwrap_or(cc.k);
    let clustering = usage(kmeans(&m, k, cc.seed, cc.restarts))?;
    let simpoints = usage(select_simpoints(&clustering, &m))?;
    ensure_out_dir(out_dir)?;
    let base = out_dir.join(name);
    internal(write_simpoint_files(&simpoints, &base))?;
    let bundle = ClusterBundle {
        clustering,
        simpoints,
    };
    internal(bundle.save(&out_dir.join(format!("{name}.cluster.json"))))?;
    println!(
        "clustered {} windows into k={} (inertia {:.6e})",
        m.n_windows(),
        k,
        bundle.clustering.inertia
    );
    Ok(())
}

fn cmd_recplot(
    matrix: &Path,
    config: Option<&Path>,
    max_dim: Option<usize>,
    metric: Option<&str>,
    stage: &str,
    out_dir: &Path,
) -> std::result::Result<(), Failure> {
    let stage: Stage = usage(stage.parse())?;
    let m = usage(read_matrix_csv(matrix, stage))?;
    // Metric precedence: flag, then the recurrence section, then the
    // pipeline's distance metric.
    let rc = match config {
        Some(path) => {
            let cfg = usage(RunConfig::load(path))?;
            cfg.recurrence.clone().unwrap_or_else(|| RecurrenceConfig {
                metric: cfg
                    .pipeline
                    .as_ref()
                    .map(|p| p.distance_metric)
                    .unwrap_or_default(),
                ..RecurrenceConfig::default()
            })
        }
        None => RecurrenceConfig::default(),
    };
    let max_dim = max_dim.unwrap_or(rc.max_dim);
    let metric = match metric {
        Some(s) => usage(s.parse())?,
        None => rc.metric,
    };
    let grid = usage(recurrence(&m, metric, max_dim))?;
    ensure_out_dir(out_dir)?;
    internal(write_grid_csv(&grid, &out_dir.join("grid.csv")))?;
    internal(emit_pgm(&grid, &out_dir.join("grid.pgm")))?;
    println!(
        "wrote {m_dim}x{m_dim} recurrence grid (from {} windows) to {}",
        grid.n_windows,
        out_dir.display(),
        m_dim = grid.m
    );
    Ok(())
}

fn cmd_eval(
    trace: &Path,
    clusters: &Path,
    config: Option<&Path>,
    out: &Path,
) -> std::result::Result<(), Failure> {
    let series = usage(read_series(trace))?;
    let bundle = usage(ClusterBundle::load(clusters))?;
    let report = usage(evaluate_projection(&series, &bundle.simpoints))?;
    internal(write_report_json(&report, out))?;
    let timeline = PhaseTimeline::new(&bundle.clustering, &bundle.simpoints);
    let timeline_path = out
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join("timeline.csv");
    internal(write_timeline_csv(&series, &timeline, &timeline_path))?;
    println!(
        "true {:.6} estimated {:.6} accuracy {:.4}",
        report.true_metric, report.estimated_metric, report.accuracy
    );
    if let Some(path) = config {
        let cfg = usage(RunConfig::load(path))?;
        if let Some(workload) = &cfg.workload {
            let ari = usage(phase_alignment(&series, workload, &bundle.clustering))?;
            println!("phase ARI {ari:.4}");
        }
    }
    Ok(())
}

fn cmd_run_all(config: &Path, out_dir: &Path) -> std::result::Result<(), Failure> {
    let cfg = usage(RunConfig::load(config))?;
    let workload = usage(cfg.require_workload())?;
    let oracle = usage(cfg.require_oracle())?;
    let cc = usage(cfg.require_clustering())?;
    ensure_out_dir(out_dir)?;

    let series = usage(generate(workload, oracle))?;
    internal(write_series(&series, &out_dir.join("trace.jsonl")))?;

    let stages = usage(run_mode(&series, &cfg, Mode::Combined))?;
    let bbv = stages.bbv_projected.as_ref().expect("combined mode fills bbv");
    let combined = stages.combined.as_ref().expect("combined mode output");
    internal(write_matrix_csv(bbv, &out_dir.join("matrix_bbv.csv")))?;
    internal(write_matrix_csv(combined, &out_dir.join("matrix_combined.csv")))?;

    let mut rows = Vec::new();
    for (label, matrix, file_base) in [
        ("BBV only", bbv, "bbv"),
        ("BBV+MAV", combined, "combined"),
    ] {
        let clustering = usage(kmeans(matrix, cc.k, cc.seed, cc.restarts))?;
        let simpoints = usage(select_simpoints(&clustering, matrix))?;
        internal(write_simpoint_files(&simpoints, &out_dir.join(file_base)))?;
        let report = usage(evaluate_projection(&series, &simpoints))?;
        internal(write_report_json(
            &report,
            &out_dir.join(format!("report_{file_base}.json")),
        ))?;
        let timeline = PhaseTimeline::new(&clustering, &simpoints);
        internal(write_timeline_csv(
            &series,
            &timeline,
            &out_dir.join(format!("timeline_{file_base}.csv")),
        ))?;
        let ari = phase_alignment(&series, workload, &clustering).ok();
        let bundle = ClusterBundle {
            clustering,
            simpoints,
        };
        internal(bundle.save(&out_dir.join(format!("{file_base}.cluster.json"))))?;
        rows.push((label, report.accuracy, ari));
    }

    println!("{:<22} {:>9} {:>9}", "sampling technique", "accuracy", "ARI");
    for (label, accuracy, ari) in rows {
        match ari {
            Some(a) => println!("{label:<22} {accuracy:>9.4} {a:>9.4}"),
            None => println!("{label:<22} {accuracy:>9.4} {:>9}", "-"),
        }
    }
    Ok(())
}
