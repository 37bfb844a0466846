//! Canonical window-record data model and its JSON-lines trace format.
//!
//! A trace is one header object followed by one object per instruction
//! window. Every producer and consumer in the crate goes through
//! [`WindowSeries`]; files ending in `.gz` are compressed transparently.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};

use crate::error::{MavError, Result};
use crate::numfmt::g17;

pub const TRACE_SCHEMA: &str = "mavpoint-trace-v1";

/// One instruction window: basic-block and memory-region histograms plus
/// the optional oracle IPC.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowRecord {
    /// Window ordinal, consecutive from 0.
    pub index: u64,
    /// Instructions executed in this window.
    pub instr_count: u64,
    /// Loads + stores executed in this window.
    pub mem_op_count: u64,
    /// Basic-block id -> execution count; zero-count entries are omitted.
    pub bbv: BTreeMap<String, u64>,
    /// Region id (address divided by granularity) -> access count.
    pub mav: BTreeMap<u64, u64>,
    /// Oracle instructions-per-cycle for this window, when known.
    pub truth_ipc: Option<f64>,
}

/// An ordered trace of windows plus global metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSeries {
    pub windows: Vec<WindowRecord>,
    pub window_size: u64,
    pub granularity_bytes: u64,
    pub total_instr: u64,
    pub total_mem_ops: u64,
}

impl WindowSeries {
    /// Builds a series from records, computing the totals and validating
    /// every invariant.
    pub fn new(windows: Vec<WindowRecord>, window_size: u64, granularity_bytes: u64) -> Result<Self> {
        let total_instr = windows.iter().map(|w| w.instr_count).sum();
        let total_mem_ops = windows.iter().map(|w| w.mem_op_count).sum();
        let series = WindowSeries {
            windows,
            window_size,
            granularity_bytes,
            total_instr,
            total_mem_ops,
        };
        series.validate()?;
        Ok(series)
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// Checks every series- and window-level invariant.
    pub fn validate(&self) -> Result<()> {
        if self.windows.is_empty() {
            return Err(MavError::EmptySeries);
        }
        if self.window_size == 0 {
            return Err(MavError::TotalsMismatch("window_size must be positive".into()));
        }
        if self.granularity_bytes == 0 {
            return Err(MavError::TotalsMismatch(
                "granularity_bytes must be positive".into(),
            ));
        }
        let last = self.windows.len() - 1;
        let mut sum_instr = 0u64;
        let mut sum_mem = 0u64;
        for (pos, w) in self.windows.iter().enumerate() {
            validate_record(w)?;
            if w.index != pos as u64 {
                return Err(MavError::InvariantViolation {
                    index: w.index,
                    message: format!("expected consecutive index {pos}"),
                });
            }
            if pos != last && w.instr_count != self.window_size {
                return Err(MavError::InvariantViolation {
                    index: w.index,
                    message: format!(
                        "instr_count {} differs from window_size {} in a non-final window",
                        w.instr_count, self.window_size
                    ),
                });
            }
            sum_instr += w.instr_count;
            sum_mem += w.mem_op_count;
        }
        if sum_instr != self.total_instr {
            return Err(MavError::TotalsMismatch(format!(
                "total_instr {} but windows sum to {sum_instr}",
                self.total_instr
            )));
        }
        if sum_mem != self.total_mem_ops {
            return Err(MavError::TotalsMismatch(format!(
                "total_mem_ops {} but windows sum to {sum_mem}",
                self.total_mem_ops
            )));
        }
        Ok(())
    }
}

fn validate_record(w: &WindowRecord) -> Result<()> {
    if w.mem_op_count > w.instr_count {
        return Err(MavError::InvariantViolation {
            index: w.index,
            message: format!(
                "mem_op_count {} exceeds instr_count {}",
                w.mem_op_count, w.instr_count
            ),
        });
    }
    if w.bbv.values().any(|&c| c == 0) {
        return Err(MavError::InvariantViolation {
            index: w.index,
            message: "bbv holds a zero count; zero-count entries must be omitted".into(),
        });
    }
    if w.mav.values().any(|&c| c == 0) {
        return Err(MavError::InvariantViolation {
            index: w.index,
            message: "mav holds a zero count; zero-count entries must be omitted".into(),
        });
    }
    let mav_sum: u64 = w.mav.values().sum();
    if mav_sum > w.mem_op_count {
        return Err(MavError::InvariantViolation {
            index: w.index,
            message: format!("mav counts sum to {mav_sum}, above mem_op_count {}", w.mem_op_count),
        });
    }
    if let Some(ipc) = w.truth_ipc {
        if !(ipc.is_finite() && ipc > 0.0) {
            return Err(MavError::InvariantViolation {
                index: w.index,
                message: format!("truth_ipc {ipc} is not a positive real"),
            });
        }
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct HeaderLine {
    schema: String,
    window_size: u64,
    granularity_bytes: u64,
    total_instr: u64,
    total_mem_ops: u64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    index: u64,
    instr_count: u64,
    mem_op_count: u64,
    bbv: BTreeMap<String, u64>,
    mav: BTreeMap<u64, u64>,
    #[serde(default)]
    truth_ipc: Option<f64>,
}

/// Reads and validates a trace file. Totals are recomputed from the body
/// and cross-checked against the header.
pub fn read_series(path: &Path) -> Result<WindowSeries> {
    let file = File::open(path).map_err(|e| MavError::io(path, e))?;
    let reader: Box<dyn Read> = if is_gz(path) {
        Box::new(GzDecoder::new(file))
    } else {
        Box::new(file)
    };
    let mut lines = BufReader::new(reader).lines().enumerate();

    let header: HeaderLine = match lines.next() {
        None => return Err(MavError::EmptySeries),
        Some((_, line)) => {
            let line = line.map_err(|e| MavError::io(path, e))?;
            serde_json::from_str(&line).map_err(|e| MavError::MalformedLine {
                path: path.into(),
                line: 1,
                message: format!("bad header: {e}"),
            })?
        }
    };
    if header.schema != TRACE_SCHEMA {
        return Err(MavError::MalformedLine {
            path: path.into(),
            line: 1,
            message: format!("unknown schema {:?}, expected {TRACE_SCHEMA:?}", header.schema),
        });
    }

    let mut windows = Vec::new();
    for (idx, line) in lines {
        let line = line.map_err(|e| MavError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RecordLine = serde_json::from_str(&line).map_err(|e| MavError::MalformedLine {
            path: path.into(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        windows.push(WindowRecord {
            index: rec.index,
            instr_count: rec.instr_count,
            mem_op_count: rec.mem_op_count,
            bbv: rec.bbv,
            mav: rec.mav,
            truth_ipc: rec.truth_ipc,
        });
    }

    let series = WindowSeries::new(windows, header.window_size, header.granularity_bytes)?;
    if series.total_instr != header.total_instr {
        return Err(MavError::TotalsMismatch(format!(
            "header total_instr {} but body sums to {}",
            header.total_instr, series.total_instr
        )));
    }
    if series.total_mem_ops != header.total_mem_ops {
        return Err(MavError::TotalsMismatch(format!(
            "header total_mem_ops {} but body sums to {}",
            header.total_mem_ops, series.total_mem_ops
        )));
    }
    Ok(series)
}

/// Writes a validated series. Integers are emitted exactly; reals with 17
/// significant digits, so `read_series(write_series(s)) == s`.
pub fn write_series(series: &WindowSeries, path: &Path) -> Result<()> {
    series.validate()?;
    let file = File::create(path).map_err(|e| MavError::io(path, e))?;
    let mut writer: Box<dyn Write> = if is_gz(path) {
        Box::new(BufWriter::new(GzEncoder::new(file, Compression::default())))
    } else {
        Box::new(BufWriter::new(file))
    };
    let header = HeaderLine {
        schema: TRACE_SCHEMA.to_string(),
        window_size: series.window_size,
        granularity_bytes: series.granularity_bytes,
        total_instr: series.total_instr,
        total_mem_ops: series.total_mem_ops,
    };
    let header_json =
        serde_json::to_string(&header).map_err(|e| MavError::TotalsMismatch(e.to_string()))?;
    writeln!(writer, "{header_json}").map_err(|e| MavError::io(path, e))?;
    for rec in &series.windows {
        writeln!(writer, "{}", record_line(rec)).map_err(|e| MavError::io(path, e))?;
    }
    writer.flush().map_err(|e| MavError::io(path, e))?;
    Ok(())
}

fn record_line(rec: &WindowRecord) -> String {
    // Maps hold only integers, so serde_json emits them exactly; the one
    // real field is formatted by hand to pin its digit count.
    let bbv = serde_json::to_string(&rec.bbv).expect("integer map serializes");
    let mav = serde_json::to_string(&rec.mav).expect("integer map serializes");
    let mut line = format!(
        "{{\"index\":{},\"instr_count\":{},\"mem_op_count\":{},\"bbv\":{},\"mav\":{}",
        rec.index, rec.instr_count, rec.mem_op_count, bbv, mav
    );
    if let Some(ipc) = rec.truth_ipc {
        line.push_str(",\"truth_ipc\":");
        line.push_str(&g17(ipc));
    }
    line.push('}');
    line
}

fn is_gz(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}
