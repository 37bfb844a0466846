//! Deterministic synthetic workload generation.
//!
//! A [`WorkloadSpec`] is an ordered list of phases; each phase emits a fixed
//! basic-block mix every window and draws its memory accesses from a
//! configurable pattern. Every generated access runs through an LRU cache
//! model whose miss rate yields the per-window ground-truth IPC, so a trace
//! carries its own oracle. Generation is a pure function of
//! `(spec, oracle)`: the RNG is ChaCha8 seeded from the workload's seed.

mod cache;
mod zipf;

pub use cache::{CacheOracleConfig, LruCache};
pub use zipf::ZipfTable;

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MavError, Result};
use crate::trace::{WindowRecord, WindowSeries};

/// Distribution of memory accesses over region ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AccessPattern {
    /// Uniform draw over `working_set_regions` regions from `base_region`.
    Uniform {
        working_set_regions: u64,
        base_region: u64,
    },
    /// Zipf-distributed draw; rank 0 (most popular) sits at `base_region`.
    Zipf {
        working_set_regions: u64,
        exponent: f64,
        base_region: u64,
    },
    /// Deterministic strided sweep over a fixed footprint.
    Stride {
        stride_regions: u64,
        footprint_regions: u64,
        base_region: u64,
    },
}

impl AccessPattern {
    fn span(&self) -> (u64, u64) {
        match *self {
            AccessPattern::Uniform {
                working_set_regions,
                base_region,
            }
            | AccessPattern::Zipf {
                working_set_regions,
                base_region,
                ..
            } => (base_region, working_set_regions),
            AccessPattern::Stride {
                footprint_regions,
                base_region,
                ..
            } => (base_region, footprint_regions),
        }
    }
}

/// One phase: a fixed code signature plus a memory access pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSpec {
    pub name: String,
    pub duration_windows: u64,
    /// Block id -> relative frequency; frequencies sum to 1.
    pub code_profile: BTreeMap<String, f64>,
    /// Fraction of instructions that are memory operations.
    pub mem_op_fraction: f64,
    pub access_pattern: AccessPattern,
}

/// A full synthetic workload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub phases: Vec<PhaseSpec>,
    pub window_size: u64,
    pub granularity_bytes: u64,
    pub seed: u64,
}

impl WorkloadSpec {
    pub fn total_windows(&self) -> u64 {
        self.phases.iter().map(|p| p.duration_windows).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.phases.is_empty() {
            return Err(MavError::InvalidSpec("at least one phase required".into()));
        }
        if self.window_size == 0 {
            return Err(MavError::InvalidSpec("window_size must be positive".into()));
        }
        if self.granularity_bytes == 0 {
            return Err(MavError::InvalidSpec("granularity_bytes must be positive".into()));
        }
        for (i, phase) in self.phases.iter().enumerate() {
            let ctx = format!("phase {i} ({:?})", phase.name);
            if phase.duration_windows == 0 {
                return Err(MavError::InvalidSpec(format!("{ctx}: zero duration")));
            }
            if phase.code_profile.is_empty() {
                return Err(MavError::InvalidSpec(format!("{ctx}: empty code_profile")));
            }
            let mut sum = 0.0;
            for (block, &freq) in &phase.code_profile {
                if !(freq.is_finite() && freq > 0.0) {
                    return Err(MavError::InvalidSpec(format!(
                        "{ctx}: block {block:?} has non-positive frequency {freq}"
                    )));
                }
                sum += freq;
            }
            if (sum - 1.0).abs() > 1e-9 {
                return Err(MavError::InvalidSpec(format!(
                    "{ctx}: code_profile sums to {sum}, expected 1 within 1e-9"
                )));
            }
            if !(phase.mem_op_fraction.is_finite()
                && (0.0..=1.0).contains(&phase.mem_op_fraction))
            {
                return Err(MavError::InvalidSpec(format!(
                    "{ctx}: mem_op_fraction {} outside [0,1]",
                    phase.mem_op_fraction
                )));
            }
            match phase.access_pattern {
                AccessPattern::Uniform {
                    working_set_regions, ..
                } => {
                    if working_set_regions == 0 {
                        return Err(MavError::InvalidSpec(format!("{ctx}: empty working set")));
                    }
                }
                AccessPattern::Zipf {
                    working_set_regions,
                    exponent,
                    ..
                } => {
                    if working_set_regions == 0 {
                        return Err(MavError::InvalidSpec(format!("{ctx}: empty working set")));
                    }
                    if !(exponent.is_finite() && exponent > 0.0) {
                        return Err(MavError::InvalidSpec(format!(
                            "{ctx}: zipf exponent {exponent} must be positive"
                        )));
                    }
                }
                AccessPattern::Stride {
                    stride_regions,
                    footprint_regions,
                    ..
                } => {
                    if stride_regions == 0 || footprint_regions == 0 {
                        return Err(MavError::InvalidSpec(format!(
                            "{ctx}: stride and footprint must be positive"
                        )));
                    }
                }
            }
            let (base, span) = phase.access_pattern.span();
            let top = base
                .checked_add(span)
                .and_then(|r| r.checked_mul(self.granularity_bytes));
            if top.is_none() {
                return Err(MavError::InvalidSpec(format!(
                    "{ctx}: region range {base}+{span} overflows the address space"
                )));
            }
        }
        Ok(())
    }
}

/// Per-window ground-truth phase names, expanded from phase durations.
/// Phases sharing a name share a label.
pub fn ground_truth_labels(spec: &WorkloadSpec) -> Vec<String> {
    let mut labels = Vec::with_capacity(spec.total_windows() as usize);
    for phase in &spec.phases {
        for _ in 0..phase.duration_windows {
            labels.push(phase.name.clone());
        }
    }
    labels
}

enum Sampler {
    Uniform { regions: u64, base: u64 },
    Zipf { table: ZipfTable, base: u64 },
    Stride { stride: u64, footprint: u64, base: u64, counter: u64 },
}

impl Sampler {
    fn new(pattern: &AccessPattern) -> Result<Self> {
        Ok(match *pattern {
            AccessPattern::Uniform {
                working_set_regions,
                base_region,
            } => Sampler::Uniform {
                regions: working_set_regions,
                base: base_region,
            },
            AccessPattern::Zipf {
                working_set_regions,
                exponent,
                base_region,
            } => Sampler::Zipf {
                table: ZipfTable::new(working_set_regions, exponent)?,
                base: base_region,
            },
            AccessPattern::Stride {
                stride_regions,
                footprint_regions,
                base_region,
            } => Sampler::Stride {
                stride: stride_regions,
                footprint: footprint_regions,
                base: base_region,
                counter: 0,
            },
        })
    }

    fn next(&mut self, rng: &mut ChaCha8Rng) -> u64 {
        match self {
            Sampler::Uniform { regions, base } => *base + rng.gen_range(0..*regions),
            Sampler::Zipf { table, base } => *base + table.sample(rng),
            Sampler::Stride {
                stride,
                footprint,
                base,
                counter,
            } => {
                let region = *base + (*counter * *stride) % *footprint;
                *counter += 1;
                region
            }
        }
    }
}

/// Scales a code profile to `instr` instructions: counts are floored and the
/// remainder goes to the lexicographically smallest block id, so the counts
/// sum to `instr` exactly.
fn scale_profile(profile: &BTreeMap<String, f64>, instr: u64) -> BTreeMap<String, u64> {
    let mut out = BTreeMap::new();
    let mut assigned = 0u64;
    for (block, &freq) in profile {
        let count = (freq * instr as f64).floor() as u64;
        if count > 0 {
            out.insert(block.clone(), count);
        }
        assigned += count;
    }
    let remainder = instr.saturating_sub(assigned);
    if remainder > 0 {
        let first = profile.keys().next().expect("validated non-empty").clone();
        *out.entry(first).or_insert(0) += remainder;
    }
    out
}

/// Generates the full trace for a workload, including per-window oracle IPC.
///
/// Cache state persists across windows and phases. Within each window the
/// IPC model is `1 / (base_cpi + miss_rate * miss_penalty_cpi)` where
/// `miss_rate` is the per-instruction miss fraction (misses per memory op
/// scaled by the window's memory-op share).
pub fn generate(spec: &WorkloadSpec, oracle: &CacheOracleConfig) -> Result<WindowSeries> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut cache = LruCache::new(oracle)?;
    // Per-region cursor over line-sized offsets, so accesses inside one
    // region walk its cache lines deterministically.
    let mut offset_cursor: HashMap<u64, u64> = HashMap::new();
    let mut windows = Vec::with_capacity(spec.total_windows() as usize);
    let mut index = 0u64;

    for phase in &spec.phases {
        let bbv = scale_profile(&phase.code_profile, spec.window_size);
        let mem_ops = (phase.mem_op_fraction * spec.window_size as f64).round() as u64;
        let mut sampler = Sampler::new(&phase.access_pattern)?;
        for _ in 0..phase.duration_windows {
            let mut mav: BTreeMap<u64, u64> = BTreeMap::new();
            let mut misses = 0u64;
            for _ in 0..mem_ops {
                let region = sampler.next(&mut rng);
                *mav.entry(region).or_insert(0) += 1;
                let cursor = offset_cursor.entry(region).or_insert(0);
                let offset = (*cursor * oracle.line_bytes) % spec.granularity_bytes;
                *cursor += 1;
                let addr = region * spec.granularity_bytes + offset;
                if !cache.access(addr) {
                    misses += 1;
                }
            }
            let miss_rate = misses as f64 / spec.window_size as f64;
            let ipc = 1.0 / (oracle.base_cpi + miss_rate * oracle.miss_penalty_cpi);
            windows.push(WindowRecord {
                index,
                instr_count: spec.window_size,
                mem_op_count: mem_ops,
                bbv: bbv.clone(),
                mav,
                truth_ipc: Some(ipc),
            });
            index += 1;
        }
    }

    WindowSeries::new(windows, spec.window_size, spec.granularity_bytes)
}

fn profile_from_weights(pairs: &[(&str, u64)]) -> BTreeMap<String, f64> {
    let total: u64 = pairs.iter().map(|(_, w)| w).sum();
    pairs
        .iter()
        .map(|(name, w)| (name.to_string(), *w as f64 / total as f64))
        .collect()
}

/// Canned workload reproducing the same-code/different-data pathology: a
/// "parser" super-phase whose sub-phases share one code profile and differ
/// only in working-set size and placement, followed by a "transformer"
/// super-phase of code-varied phases. Ground-truth phase labels are the
/// phase names.
///
/// Working sets straddle the default oracle's capacity (4096 lines =
/// 64 regions at 4 KiB granularity), so same-code sub-phases span steady
/// IPC from ~2.0 down to ~0.91. Per-region access counts stay high enough
/// that the inverse-frequency signatures are low-noise and every phase is
/// separable in MAV space.
pub fn xalanc_like_spec(seed: u64) -> WorkloadSpec {
    let parser_profile = profile_from_weights(&[
        ("xerces.scan", 18),
        ("xerces.token", 15),
        ("xerces.attr", 13),
        ("xerces.isdup", 12),
        ("xerces.contains", 10),
        ("xerces.ns", 9),
        ("xerces.valid", 8),
        ("xerces.pool", 6),
        ("xerces.dtd", 5),
        ("xerces.buf", 4),
    ]);

    // (working set, duration). The two fast sub-phases are cache-resident;
    // the long sub-phases thrash. The wide gap from 48 to 192 regions keeps
    // fast and slow sub-phases far apart in MAV space, so a clustering that
    // confuses them pays a large inertia price.
    let parser_subphases: [(u64, u64); 4] =
        [(24, 125), (48, 125), (192, 375), (384, 375)];

    let mut phases = Vec::new();
    for (i, (regions, duration)) in parser_subphases.into_iter().enumerate() {
        phases.push(PhaseSpec {
            name: format!("parser/u{regions}"),
            duration_windows: duration,
            code_profile: parser_profile.clone(),
            mem_op_fraction: 0.3,
            access_pattern: AccessPattern::Uniform {
                working_set_regions: regions,
                base_region: i as u64 * 20_000,
            },
        });
    }

    for i in 0..16u64 {
        let profile = profile_from_weights(&[
            ("xalan.apply", 12),
            (&format!("xalan.t{i:02}.gen"), 10 + (i % 5) * 3),
            (&format!("xalan.t{i:02}.fmt"), 8 + (i % 7)),
            (&format!("xalan.t{i:02}.out"), 6 + (i % 4) * 2),
            (&format!("xalan.t{i:02}.idx"), 5 + (i % 3)),
            (&format!("xalan.t{i:02}.buf"), 4),
        ]);
        let pattern = match i % 4 {
            0 => uniform(24 + 16 * i),
            1 => zipf(96 + 16 * i, 0.7),
            2 => stride(1 + i % 3, 40 + 20 * i),
            _ => uniform(200 + 12 * i),
        };
        phases.push(PhaseSpec {
            name: format!("xform/t{i:02}"),
            duration_windows: 72,
            code_profile: profile,
            mem_op_fraction: 0.2 + 0.015 * i as f64,
            access_pattern: rebase(pattern, 400_000 + i * 25_000),
        });
    }

    WorkloadSpec {
        phases,
        window_size: 20_000,
        granularity_bytes: 4096,
        seed,
    }
}

fn uniform(regions: u64) -> AccessPattern {
    AccessPattern::Uniform {
        working_set_regions: regions,
        base_region: 0,
    }
}

fn zipf(regions: u64, exponent: f64) -> AccessPattern {
    AccessPattern::Zipf {
        working_set_regions: regions,
        exponent,
        base_region: 0,
    }
}

fn stride(stride_regions: u64, footprint: u64) -> AccessPattern {
    AccessPattern::Stride {
        stride_regions,
        footprint_regions: footprint,
        base_region: 0,
    }
}

fn rebase(pattern: AccessPattern, base: u64) -> AccessPattern {
    match pattern {
        AccessPattern::Uniform {
            working_set_regions, ..
        } => AccessPattern::Uniform {
            working_set_regions,
            base_region: base,
        },
        AccessPattern::Zipf {
            working_set_regions,
            exponent,
            ..
        } => AccessPattern::Zipf {
            working_set_regions,
            exponent,
            base_region: base,
        },
        AccessPattern::Stride {
            stride_regions,
            footprint_regions,
            ..
        } => AccessPattern::Stride {
            stride_regions,
            footprint_regions,
            base_region: base,
        },
    }
}
