//! Acceptance suite: one test per release criterion, each printing a
//! `[PASS]` line with the measured values (visible with `--nocapture`).
//!
//! The headline workload is generated once and shared across tests.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mavpoint::cluster::{kmeans, select_simpoints, Clustering};
use mavpoint::config::{bundled_xalanc_config, RunConfig};
use mavpoint::pipeline::{
    adaptive_weight, apply_decay, gaussian_project, mem_fraction, normalize_bbv_rows,
    normalize_mav_matrix, run_combined, transform_mav, FeatureMatrix, Metric, PipelineConfig,
    Stage,
};
use mavpoint::report::{evaluate_projection, phase_alignment, recurrence, ProjectionReport};
use mavpoint::synth::{generate, ground_truth_labels, AccessPattern, PhaseSpec, WorkloadSpec};
use mavpoint::trace::{WindowRecord, WindowSeries};

const SEED: u64 = 2024;

struct Headline {
    series: WindowSeries,
    workload: WorkloadSpec,
    bbv_clustering: Clustering,
    combined_clustering: Clustering,
    bbv_report: ProjectionReport,
    combined_report: ProjectionReport,
    bbv_ari: f64,
    combined_ari: f64,
}

fn headline() -> &'static Headline {
    static CELL: OnceLock<Headline> = OnceLock::new();
    CELL.get_or_init(|| {
        let cfg = bundled_xalanc_config(SEED);
        let workload = cfg.workload.clone().unwrap();
        let series = generate(&workload, cfg.oracle.as_ref().unwrap()).unwrap();
        let stages = run_combined(&series, cfg.pipeline.as_ref().unwrap()).unwrap();
        let cc = cfg.clustering.as_ref().unwrap();
        assert_eq!(cc.k, 30);

        let bbv = stages.bbv_projected.as_ref().unwrap();
        let combined = stages.combined.as_ref().unwrap();
        let bbv_clustering = kmeans(bbv, cc.k, cc.seed, cc.restarts).unwrap();
        let combined_clustering = kmeans(combined, cc.k, cc.seed, cc.restarts).unwrap();
        let bbv_sp = select_simpoints(&bbv_clustering, bbv).unwrap();
        let combined_sp = select_simpoints(&combined_clustering, combined).unwrap();
        let bbv_report = evaluate_projection(&series, &bbv_sp).unwrap();
        let combined_report = evaluate_projection(&series, &combined_sp).unwrap();
        let bbv_ari = phase_alignment(&series, &workload, &bbv_clustering).unwrap();
        let combined_ari = phase_alignment(&series, &workload, &combined_clustering).unwrap();
        Headline {
            series,
            workload,
            bbv_clustering,
            combined_clustering,
            bbv_report,
            combined_report,
            bbv_ari,
            combined_ari,
        }
    })
}

/// Headline behavior on the bundled same-code/different-data workload:
/// combined sampling must project within 3% while the BBV-only baseline
/// misses by at least 10%.
#[test]
fn criterion_headline_analog() {
    let h = headline();

    // Workload shape guards: enough windows, >= 4 same-code sub-phases,
    // >= 20% oracle IPC spread across them.
    assert!(h.series.len() >= 2000, "only {} windows", h.series.len());
    let parser: Vec<&PhaseSpec> = h
        .workload
        .phases
        .iter()
        .filter(|p| p.name.starts_with("parser/"))
        .collect();
    assert!(parser.len() >= 4);
    for p in &parser[1..] {
        assert_eq!(p.code_profile, parser[0].code_profile, "sub-phases must share code");
    }
    let labels = ground_truth_labels(&h.workload);
    let mut ipc_by_phase: BTreeMap<&str, (f64, u64)> = BTreeMap::new();
    for (w, l) in h.series.windows.iter().zip(&labels) {
        if l.starts_with("parser/") {
            let e = ipc_by_phase.entry(l).or_insert((0.0, 0));
            e.0 += w.truth_ipc.unwrap();
            e.1 += 1;
        }
    }
    let means: Vec<f64> = ipc_by_phase.values().map(|(s, n)| s / *n as f64).collect();
    let hi = means.iter().cloned().fold(f64::MIN, f64::max);
    let lo = means.iter().cloned().fold(f64::MAX, f64::min);
    assert!(
        (hi - lo) / hi >= 0.20,
        "same-code IPC spread {:.3} below 20%",
        (hi - lo) / hi
    );

    let bbv_err = (h.bbv_report.accuracy - 1.0).abs();
    let combined_err = (h.combined_report.accuracy - 1.0).abs();
    assert!(
        combined_err <= 0.03,
        "combined accuracy {} misses by {combined_err:.4} (> 0.03)",
        h.combined_report.accuracy
    );
    assert!(
        bbv_err >= 0.10,
        "bbv-only accuracy {} misses by only {bbv_err:.4} (< 0.10)",
        h.bbv_report.accuracy
    );
    assert!(combined_err < bbv_err);
    println!(
        "[PASS] headline analog: accuracy bbv-only {:.4} (|err| {:.4}) vs combined {:.4} (|err| {:.4})",
        h.bbv_report.accuracy, bbv_err, h.combined_report.accuracy, combined_err
    );
}

/// Combined clustering must recover the ground-truth phases; BBV alone
/// must not.
#[test]
fn criterion_phase_separation() {
    let h = headline();
    // The BBV matrix holds fewer distinct rows than clusters (all parser
    // windows collapse to one point); repair must still fill every cluster.
    for clustering in [&h.bbv_clustering, &h.combined_clustering] {
        let mut counts = vec![0usize; clustering.k];
        for &a in &clustering.assignments {
            counts[a] += 1;
        }
        assert!(counts.iter().all(|&c| c > 0), "empty cluster survived");
    }
    assert!(
        h.combined_ari >= 0.8,
        "combined ARI {:.4} below 0.8",
        h.combined_ari
    );
    assert!(
        h.combined_ari - h.bbv_ari >= 0.3,
        "ARI gap {:.4} below 0.3 (combined {:.4}, bbv {:.4})",
        h.combined_ari - h.bbv_ari,
        h.combined_ari,
        h.bbv_ari
    );
    println!(
        "[PASS] phase separation: ARI combined {:.4} vs bbv-only {:.4}",
        h.combined_ari, h.bbv_ari
    );
}

/// With one simpoint per window the projection is exact.
#[test]
fn criterion_exactness_k_equals_n() {
    let spec = WorkloadSpec {
        phases: vec![PhaseSpec {
            name: "p".into(),
            duration_windows: 60,
            code_profile: [("a".to_string(), 0.5), ("b".to_string(), 0.5)].into(),
            mem_op_fraction: 0.25,
            access_pattern: AccessPattern::Uniform {
                working_set_regions: 32,
                base_region: 0,
            },
        }],
        window_size: 2000,
        granularity_bytes: 4096,
        seed: 5,
    };
    let series = generate(&spec, &Default::default()).unwrap();
    let stages = run_combined(&series, &PipelineConfig::new(9)).unwrap();
    let combined = stages.combined.as_ref().unwrap();
    let n = combined.n_windows();
    let clustering = kmeans(combined, n, 13, 1).unwrap();
    let sp = select_simpoints(&clustering, combined).unwrap();
    let report = evaluate_projection(&series, &sp).unwrap();
    let rel = (report.accuracy - 1.0).abs();
    assert!(rel <= 1e-12, "relative error {rel:e} above 1e-12");
    println!("[PASS] exactness: k = N = {n} gives accuracy 1 within {rel:e}");
}

/// transform_mav output is non-increasing, bounded in (0,1], and as long
/// as the window's distinct-region count.
#[test]
fn criterion_unit_transform_mav() {
    let h = headline();
    for w in h.series.windows.iter().take(200) {
        let v = transform_mav(w);
        assert_eq!(v.len(), w.mav.len());
        for pair in v.windows(2) {
            assert!(pair[0] >= pair[1]);
        }
        assert!(v.iter().all(|x| *x > 0.0 && *x <= 1.0));
    }
    println!("[PASS] transform_mav: sorted, bounded, length = distinct regions");
}

/// normalize_mav_matrix leaves the mean row norm at 1 and preserves the
/// ratios between row norms.
#[test]
fn criterion_unit_normalize_mav() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let rows: Vec<Vec<f64>> = (0..40)
        .map(|_| (0..12).map(|_| rng.gen_range(0.0..1.0)).collect())
        .collect();
    let m = FeatureMatrix::from_rows(rows, Stage::MavTransformed).unwrap();
    let norm = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>().sqrt();
    let before: Vec<f64> = m.rows().map(norm).collect();
    let normalized = normalize_mav_matrix(&m).unwrap();
    let after: Vec<f64> = normalized.rows().map(norm).collect();
    let mean_after = after.iter().sum::<f64>() / after.len() as f64;
    assert!((mean_after - 1.0).abs() <= 1e-9);
    for i in 1..before.len() {
        let r0 = before[i] / before[0];
        let r1 = after[i] / after[0];
        assert!((r0 - r1).abs() <= 1e-9 * r0.abs().max(1.0));
    }
    println!("[PASS] normalize_mav_matrix: mean row norm 1 +/- 1e-9, ratios preserved");
}

/// normalize_bbv_rows is idempotent on its own output and scale invariant.
#[test]
fn criterion_unit_normalize_bbv() {
    let raw = FeatureMatrix::from_rows(vec![vec![2.0, 6.0, 12.0]], Stage::BbvRaw).unwrap();
    let scaled = FeatureMatrix::from_rows(vec![vec![20.0, 60.0, 120.0]], Stage::BbvRaw).unwrap();
    let n1 = normalize_bbv_rows(&raw).unwrap();
    let n2 = normalize_bbv_rows(&scaled).unwrap();
    assert_eq!(n1.row(0), n2.row(0));
    let again = FeatureMatrix::from_rows(vec![n1.row(0).to_vec()], Stage::BbvRaw).unwrap();
    assert_eq!(normalize_bbv_rows(&again).unwrap().row(0), n1.row(0));
    println!("[PASS] normalize_bbv_rows: idempotent and scale invariant");
}

/// apply_decay is the identity at horizon 0 and a fixed point on constant
/// matrices.
#[test]
fn criterion_unit_apply_decay() {
    let m = FeatureMatrix::from_rows(
        vec![vec![0.2, 0.8], vec![0.9, 0.1], vec![0.4, 0.4]],
        Stage::MavNormalized,
    )
    .unwrap();
    let mut cfg = PipelineConfig::new(0);
    cfg.decay_horizon = 0;
    let out = apply_decay(&m, &cfg).unwrap();
    for i in 0..3 {
        assert_eq!(out.row(i), m.row(i));
    }
    let constant =
        FeatureMatrix::from_rows(vec![vec![0.25, 0.5]; 16], Stage::MavNormalized).unwrap();
    let decayed = apply_decay(&constant, &PipelineConfig::new(0)).unwrap();
    for row in decayed.rows() {
        assert!((row[0] - 0.25).abs() < 1e-12 && (row[1] - 0.5).abs() < 1e-12);
    }
    println!("[PASS] apply_decay: identity at H=0, fixed point on constant rows");
}

/// gaussian_project is linear and a pure function of its seed.
#[test]
fn criterion_unit_gaussian_project() {
    let cfg = PipelineConfig::new(77);
    let x = FeatureMatrix::from_rows(vec![vec![0.5, -1.5, 2.0]], Stage::MavDecayed).unwrap();
    let y = FeatureMatrix::from_rows(vec![vec![1.0, 1.0, -1.0]], Stage::MavDecayed).unwrap();
    let combo = FeatureMatrix::from_rows(
        vec![vec![0.5 * 2.0 + 3.0, -1.5 * 2.0 + 3.0, 2.0 * 2.0 - 3.0]],
        Stage::MavDecayed,
    )
    .unwrap();
    let px = gaussian_project(&x, &cfg).unwrap();
    let py = gaussian_project(&y, &cfg).unwrap();
    let pc = gaussian_project(&combo, &cfg).unwrap();
    for j in 0..px.dim() {
        let lin = 2.0 * px.row(0)[j] + 3.0 * py.row(0)[j];
        assert!((lin - pc.row(0)[j]).abs() < 1e-9);
    }
    assert_eq!(
        gaussian_project(&x, &cfg).unwrap().row(0),
        px.row(0),
        "projection must be deterministic"
    );
    println!("[PASS] gaussian_project: linear, deterministic per (seed, stage)");
}

/// Simpoint weights always sum to 1 within 1e-12, and adaptive weighting
/// respects its bounds.
#[test]
fn criterion_unit_simpoint_weights() {
    let h = headline();
    let stages = run_combined(&h.series, &bundled_xalanc_config(SEED).pipeline.unwrap()).unwrap();
    let sp = select_simpoints(&h.combined_clustering, stages.combined.as_ref().unwrap()).unwrap();
    let sum: f64 = sp.points.iter().map(|p| p.weight).sum();
    assert!((sum - 1.0).abs() <= 1e-12);
    assert!(sp.points.iter().all(|p| p.weight > 0.0));

    let pcfg = PipelineConfig::new(23);
    let w = adaptive_weight(
        &gaussian_project(
            &apply_decay(
                &normalize_mav_matrix(
                    &FeatureMatrix::from_rows(vec![vec![1.0, 0.5]], Stage::MavTransformed)
                        .unwrap(),
                )
                .unwrap(),
                &pcfg,
            )
            .unwrap(),
            &pcfg,
        )
        .unwrap(),
        0.0,
    )
    .unwrap();
    assert!(w.row(0).iter().all(|v| *v == 0.0));
    println!("[PASS] simpoint weights: sum 1 +/- 1e-12, all positive");
}

/// With no memory operations the combined matrix clusters exactly like the
/// BBV matrix under the same seed: the zeroed MAV half changes no distances.
#[test]
fn criterion_unit_bbv_equivalence() {
    let mut phases = Vec::new();
    for i in 0..4u64 {
        phases.push(PhaseSpec {
            name: format!("c{i}"),
            duration_windows: 30,
            code_profile: [(format!("blk{i}"), 0.7), (format!("blk{}", i + 1), 0.3)].into(),
            mem_op_fraction: 0.0,
            access_pattern: AccessPattern::Uniform {
                working_set_regions: 1,
                base_region: 0,
            },
        });
    }
    let spec = WorkloadSpec {
        phases,
        window_size: 1000,
        granularity_bytes: 4096,
        seed: 17,
    };
    let series = generate(&spec, &Default::default()).unwrap();
    assert_eq!(mem_fraction(&series).unwrap(), 0.0);
    let stages = run_combined(&series, &PipelineConfig::new(23)).unwrap();
    let combined = stages.combined.as_ref().unwrap();
    let bbv = stages.bbv_projected.as_ref().unwrap();
    assert!(combined
        .rows()
        .all(|r| r[bbv.dim()..].iter().all(|v| *v == 0.0)));
    let ca = kmeans(combined, 4, 99, 3).unwrap();
    let cb = kmeans(bbv, 4, 99, 3).unwrap();
    assert_eq!(ca.assignments, cb.assignments);
    println!("[PASS] bbv-equivalence: zero mem fraction gives identical partitions");
}

/// Johnson-Lindenstrauss sanity: 500 -> 15 dims preserves >= 90% of
/// pairwise distances within +/- 35%.
#[test]
fn criterion_johnson_lindenstrauss() {
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    let n = 200;
    let d = 500;
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            (0..d)
                .map(|_| rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng))
                .collect()
        })
        .collect();
    let m = FeatureMatrix::from_rows(rows, Stage::MavDecayed).unwrap();
    let projected = gaussian_project(&m, &PipelineConfig::new(4242)).unwrap();
    assert_eq!(projected.dim(), 15);

    let dist = |m: &FeatureMatrix, i: usize, j: usize| Metric::Euclidean.distance(m.row(i), m.row(j));
    let mut total = 0usize;
    let mut preserved = 0usize;
    for i in 0..n {
        for j in (i + 1)..n {
            let before = dist(&m, i, j);
            let after = dist(&projected, i, j);
            total += 1;
            if (after / before - 1.0).abs() <= 0.35 {
                preserved += 1;
            }
        }
    }
    let frac = preserved as f64 / total as f64;
    assert!(
        frac >= 0.90,
        "only {frac:.3} of pairwise distances preserved within 35%"
    );
    println!(
        "[PASS] johnson-lindenstrauss: {preserved}/{total} pairwise distances within 35% ({:.1}%)",
        frac * 100.0
    );
}

/// Constructed two-super-phase trace with jittered code: the combined grid
/// must expose the same-code sub-phases (contrast >= 1.5) where the BBV
/// grid sees nothing (contrast <= 1.1).
#[test]
fn criterion_recurrence_fidelity() {
    let series = two_super_phase_trace(7777);
    let pcfg = PipelineConfig::new(555);
    let stages = run_combined(&series, &pcfg).unwrap();
    let combined_grid = recurrence(
        stages.combined.as_ref().unwrap(),
        Metric::Euclidean,
        series.len(),
    )
    .unwrap();
    let bbv_grid = recurrence(
        stages.bbv_projected.as_ref().unwrap(),
        Metric::Euclidean,
        series.len(),
    )
    .unwrap();

    // Same-code region: windows 0..200, four sub-phases of 50.
    let sub = |w: usize| w / 50;
    let ratio = |grid: &mavpoint::report::RecurrenceGrid| {
        let mut within = (0.0, 0usize);
        let mut cross = (0.0, 0usize);
        for i in 0..200 {
            for j in (i + 1)..200 {
                let d = grid.at(i, j);
                if sub(i) == sub(j) {
                    within.0 += d;
                    within.1 += 1;
                } else {
                    cross.0 += d;
                    cross.1 += 1;
                }
            }
        }
        let mean_within = within.0 / within.1 as f64;
        let mean_cross = cross.0 / cross.1 as f64;
        mean_cross / mean_within
    };

    let combined_ratio = ratio(&combined_grid);
    let bbv_ratio = ratio(&bbv_grid);
    assert!(
        combined_ratio >= 1.5,
        "combined cross/within contrast {combined_ratio:.3} below 1.5"
    );
    assert!(
        bbv_ratio <= 1.1,
        "bbv cross/within contrast {bbv_ratio:.3} above 1.1"
    );
    println!(
        "[PASS] recurrence fidelity: contrast combined {combined_ratio:.2} vs bbv-only {bbv_ratio:.3}"
    );
}

/// Hand-built trace: one super-phase of four same-code sub-phases with
/// different working sets, then one super-phase of four code-distinct
/// sub-phases. The BBV histograms carry per-window sampling jitter drawn
/// from one distribution, so code distances are nonzero but uninformative.
fn two_super_phase_trace(seed: u64) -> WindowSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let instr = 10_000u64;
    let mem = 3_000u64;
    let mut windows = Vec::new();
    let mut index = 0u64;

    let mut push_window = |rng: &mut ChaCha8Rng, profile: &[(&str, f64)], regions: u64, base: u64| {
        let mut bbv = BTreeMap::new();
        let mut assigned = 0u64;
        for (block, freq) in profile {
            let jitter = 1.0 + rng.gen_range(-0.02..0.02);
            let count = ((freq * jitter) * instr as f64).floor().max(1.0) as u64;
            bbv.insert(block.to_string(), count);
            assigned += count;
        }
        // Fix the total on the first block so every window sums to instr.
        let first = profile[0].0.to_string();
        let c = bbv.get_mut(&first).unwrap();
        *c = (*c + instr).saturating_sub(assigned);
        let mut mav: BTreeMap<u64, u64> = BTreeMap::new();
        for _ in 0..mem {
            let region = base + rng.gen_range(0..regions);
            *mav.entry(region).or_insert(0) += 1;
        }
        windows.push(WindowRecord {
            index,
            instr_count: instr,
            mem_op_count: mem,
            bbv,
            mav,
            truth_ipc: None,
        });
        index += 1;
    };

    let parser_profile: [(&str, f64); 4] =
        [("scan", 0.4), ("token", 0.3), ("attr", 0.2), ("pool", 0.1)];
    for (s, regions) in [32u64, 96, 160, 288].into_iter().enumerate() {
        for _ in 0..50 {
            push_window(&mut rng, &parser_profile, regions, s as u64 * 10_000);
        }
    }
    for t in 0..4 {
        let names: [String; 4] = std::array::from_fn(|b| format!("xf{t}.b{b}"));
        let profile: [(&str, f64); 4] = [
            (names[0].as_str(), 0.4),
            (names[1].as_str(), 0.3),
            (names[2].as_str(), 0.2),
            (names[3].as_str(), 0.1),
        ];
        for _ in 0..50 {
            push_window(&mut rng, &profile, 64, 100_000 + t * 10_000);
        }
    }
    WindowSeries::new(windows, instr, 4096).unwrap()
}

/// Two identical `run-all` invocations must produce byte-identical
/// artifacts: trace, matrices, simpoints, weights, reports, timelines.
#[test]
fn criterion_determinism() {
    let exe = env!("CARGO_BIN_EXE_mavpoint");
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/xalanc_like.json");
    assert!(config.exists(), "bundled config missing at {}", config.display());

    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out in [&out_a, &out_b] {
        let status = std::process::Command::new(exe)
            .args(["run-all", "--config"])
            .arg(&config)
            .arg("--out-dir")
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success(), "run-all exited with {status}");
    }

    let mut names: Vec<String> = std::fs::read_dir(&out_a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert!(
        names.contains(&"trace.jsonl".to_string())
            && names.contains(&"matrix_bbv.csv".to_string())
            && names.contains(&"matrix_combined.csv".to_string())
            && names.contains(&"bbv.simpoints".to_string())
            && names.contains(&"combined.weights".to_string())
            && names.contains(&"report_combined.json".to_string()),
        "unexpected artifact set: {names:?}"
    );
    for name in &names {
        let a = std::fs::read(out_a.join(name)).unwrap();
        let b = std::fs::read(out_b.join(name)).unwrap();
        assert_eq!(a, b, "artifact {name} differs between runs");
    }
    println!(
        "[PASS] determinism: {} artifacts byte-identical across two run-all invocations",
        names.len()
    );
}

/// The committed bundled config stays in sync with the library constructor.
#[test]
fn bundled_config_matches_source() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/xalanc_like.json");
    let loaded = RunConfig::load(&path).unwrap();
    assert_eq!(loaded, bundled_xalanc_config(SEED));
}
