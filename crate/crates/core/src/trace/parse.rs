use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DurationStats, FunctionProfile, TraceError, PERCENTILE_COLUMNS};

const ID_COLUMN: &str = "HashFunction";
const AVERAGE_COLUMN: &str = "Average";
const MEMORY_COLUMN: &str = "AverageAllocatedMb";

/// Locations of the three trace files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TracePaths {
    pub invocations: PathBuf,
    pub durations: PathBuf,
    pub memory: PathBuf,
}

impl TracePaths {
    /// `invocations.csv`, `durations.csv` and `memory.csv` inside `dir`.
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        Self {
            invocations: dir.join("invocations.csv"),
            durations: dir.join("durations.csv"),
            memory: dir.join("memory.csv"),
        }
    }

    pub fn resolve_against(&self, base: &Path) -> Self {
        let fix = |p: &PathBuf| if p.is_relative() { base.join(p) } else { p.clone() };
        Self {
            invocations: fix(&self.invocations),
            durations: fix(&self.durations),
            memory: fix(&self.memory),
        }
    }
}

pub fn parse_trace(paths: &TracePaths) -> Result<Vec<FunctionProfile>, TraceError> {
    parse_trace_readers(
        File::open(&paths.invocations)?,
        File::open(&paths.durations)?,
        File::open(&paths.memory)?,
    )
}

fn column(headers: &csv::StringRecord, file: &str, name: &str) -> Result<usize, TraceError> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| TraceError::MissingColumn { file: file.to_owned(), column: name.to_owned() })
}

fn field(record: &csv::StringRecord, idx: usize) -> &str {
    record.get(idx).unwrap_or("").trim()
}

fn parse_f64(file: &str, line: usize, what: &str, raw: &str) -> Result<f64, TraceError> {
    raw.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| TraceError::InvalidValue {
            file: file.to_owned(),
            line,
            message: format!("{what}: `{raw}` is not a finite number"),
        })
}

fn line_of(record: &csv::StringRecord) -> usize {
    record.position().map_or(0, |p| p.line() as usize)
}

fn duplicate(file: &str, line: usize, id: &str) -> TraceError {
    TraceError::InvalidValue {
        file: file.to_owned(),
        line,
        message: format!("duplicate function `{id}`"),
    }
}

struct InvocationRow {
    id: String,
    line: usize,
    counts: Vec<u32>,
}

fn read_invocations<R: Read>(reader: R) -> Result<Vec<InvocationRow>, TraceError> {
    const FILE: &str = "invocations";
    let mut rdr = csv::ReaderBuilder::new().flexible(false).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let id_col = column(&headers, FILE, ID_COLUMN)?;
    let minute_cols: HashMap<usize, usize> = headers
        .iter()
        .enumerate()
        .filter_map(|(idx, h)| h.trim().parse::<usize>().ok().map(|m| (m, idx)))
        .collect();
    let minutes = minute_cols.len();
    if minutes == 0 {
        return Err(TraceError::MissingColumn { file: FILE.into(), column: "1".into() });
    }
    let mut order = Vec::with_capacity(minutes);
    for m in 1..=minutes {
        let idx = minute_cols.get(&m).ok_or_else(|| TraceError::MissingColumn {
            file: FILE.into(),
            column: m.to_string(),
        })?;
        order.push(*idx);
    }

    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for record in rdr.records() {
        let record = record?;
        let line = line_of(&record);
        let id = field(&record, id_col).to_owned();
        if !seen.insert(id.clone()) {
            return Err(duplicate(FILE, line, &id));
        }
        let mut counts = Vec::with_capacity(minutes);
        for (minute, &idx) in order.iter().enumerate() {
            let raw = field(&record, idx);
            let value: i64 = raw.parse().map_err(|_| TraceError::InvalidValue {
                file: FILE.into(),
                line,
                message: format!("minute {}: `{raw}` is not an integer", minute + 1),
            })?;
            if value < 0 {
                return Err(TraceError::NegativeCount {
                    file: FILE.into(),
                    line,
                    id,
                    minute: minute + 1,
                    value,
                });
            }
            let value = u32::try_from(value).map_err(|_| TraceError::InvalidValue {
                file: FILE.into(),
                line,
                message: format!("minute {}: count {value} too large", minute + 1),
            })?;
            counts.push(value);
        }
        rows.push(InvocationRow { id, line, counts });
    }
    Ok(rows)
}

fn read_durations<R: Read>(reader: R) -> Result<HashMap<String, (usize, DurationStats)>, TraceError> {
    const FILE: &str = "durations";
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let id_col = column(&headers, FILE, ID_COLUMN)?;
    let avg_col = column(&headers, FILE, AVERAGE_COLUMN)?;
    let pct_cols = PERCENTILE_COLUMNS
        .iter()
        .map(|name| column(&headers, FILE, name))
        .collect::<Result<Vec<_>, _>>()?;

    let mut out = HashMap::new();
    for record in rdr.records() {
        let record = record?;
        let line = line_of(&record);
        let id = field(&record, id_col).to_owned();
        let average_ms = parse_f64(FILE, line, AVERAGE_COLUMN, field(&record, avg_col))?;
        let mut percentiles_ms = [0.0; 7];
        for (slot, (&col, name)) in percentiles_ms.iter_mut().zip(pct_cols.iter().zip(PERCENTILE_COLUMNS)) {
            *slot = parse_f64(FILE, line, name, field(&record, col))?;
        }
        let stats = DurationStats { average_ms, percentiles_ms };
        if !stats.is_monotone() {
            return Err(TraceError::NonMonotonePercentiles { file: FILE.into(), line, id });
        }
        if stats.min_ms() < 0.0 || average_ms < stats.min_ms() || average_ms > stats.max_ms() {
            return Err(TraceError::InvalidValue {
                file: FILE.into(),
                line,
                message: format!("average {average_ms} of `{id}` outside [p0, p100]"),
            });
        }
        if out.insert(id.clone(), (line, stats)).is_some() {
            return Err(duplicate(FILE, line, &id));
        }
    }
    Ok(out)
}

fn read_memory<R: Read>(reader: R) -> Result<HashMap<String, (usize, u32)>, TraceError> {
    const FILE: &str = "memory";
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let id_col = column(&headers, FILE, ID_COLUMN)?;
    let mem_col = column(&headers, FILE, MEMORY_COLUMN)?;
    let mut out = HashMap::new();
    for record in rdr.records() {
        let record = record?;
        let line = line_of(&record);
        let id = field(&record, id_col).to_owned();
        let mb = parse_f64(FILE, line, MEMORY_COLUMN, field(&record, mem_col))?.round();
        if !(mb >= 1.0 && mb <= f64::from(u32::MAX)) {
            return Err(TraceError::InvalidValue {
                file: FILE.into(),
                line,
                message: format!("memory of `{id}` must be a positive number of MB"),
            });
        }
        if out.insert(id.clone(), (line, mb as u32)).is_some() {
            return Err(duplicate(FILE, line, &id));
        }
    }
    Ok(out)
}

/// Parses the three-file trace schema from arbitrary readers. Profiles are
/// returned in invocations-file order.
pub fn parse_trace_readers<A: Read, B: Read, C: Read>(
    invocations: A,
    durations: B,
    memory: C,
) -> Result<Vec<FunctionProfile>, TraceError> {
    let rows = read_invocations(invocations)?;
    let mut durations = read_durations(durations)?;
    let mut memory = read_memory(memory)?;

    let mut profiles = Vec::with_capacity(rows.len());
    for row in rows {
        let unknown = |missing_from: &str| TraceError::UnknownFunctionId {
            file: "invocations".into(),
            line: row.line,
            id: row.id.clone(),
            missing_from: missing_from.into(),
        };
        let (_, stats) = durations.remove(&row.id).ok_or_else(|| unknown("durations"))?;
        let (_, memory_mb) = memory.remove(&row.id).ok_or_else(|| unknown("memory"))?;
        profiles.push(FunctionProfile {
            function_id: row.id,
            memory_mb,
            durations: stats,
            per_minute_counts: row.counts,
        });
    }
    // Anything left over appears in durations or memory but not invocations.
    let leftover = durations
        .into_iter()
        .map(|(id, (line, _))| ("durations", line, id))
        .chain(memory.into_iter().map(|(id, (line, _))| ("memory", line, id)))
        .min_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    if let Some((file, line, id)) = leftover {
        return Err(TraceError::UnknownFunctionId {
            file: file.into(),
            line,
            id,
            missing_from: "invocations".into(),
        });
    }
    Ok(profiles)
}

/// Writes profiles back out in the three-file schema.
pub fn write_trace(profiles: &[FunctionProfile], paths: &TracePaths) -> Result<(), TraceError> {
    for path in [&paths.invocations, &paths.durations, &paths.memory] {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let minutes = profiles.first().map_or(0, |p| p.per_minute_counts.len());

    let mut inv = csv::Writer::from_writer(File::create(&paths.invocations)?);
    let mut header = vec![ID_COLUMN.to_owned()];
    header.extend((1..=minutes).map(|m| m.to_string()));
    inv.write_record(&header)?;
    for p in profiles {
        if p.per_minute_counts.len() != minutes {
            return Err(TraceError::Precondition(format!(
                "function `{}` has {} minutes, expected {minutes}",
                p.function_id,
                p.per_minute_counts.len()
            )));
        }
        let mut row = vec![p.function_id.clone()];
        row.extend(p.per_minute_counts.iter().map(u32::to_string));
        inv.write_record(&row)?;
    }
    inv.flush()?;

    let mut dur = csv::Writer::from_writer(File::create(&paths.durations)?);
    let mut header = vec![ID_COLUMN, AVERAGE_COLUMN];
    header.extend(PERCENTILE_COLUMNS);
    dur.write_record(&header)?;
    for p in profiles {
        let mut row = vec![p.function_id.clone(), p.durations.average_ms.to_string()];
        row.extend(p.durations.percentiles_ms.iter().map(f64::to_string));
        dur.write_record(&row)?;
    }
    dur.flush()?;

    let mut mem = File::create(&paths.memory)?;
    writeln!(mem, "{ID_COLUMN},{MEMORY_COLUMN}")?;
    for p in profiles {
        writeln!(mem, "{},{}", p.function_id, p.memory_mb)?;
    }
    Ok(())
}
