//! CSV trajectories and JSON run summaries.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use gapctl_core::{ControlTrajectory, Grid, StateTrajectory};
use serde::Serialize;

/// Decimal text with 17 significant digits, enough to reproduce any `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w)
}

/// Writes `t, uA_1..uA_m, uB_1..uB_m, v_1..v_m` with one row per control
/// interval, stamped with its left node time.
pub fn write_trajectory<W: Write>(
    out: W,
    ua: &ControlTrajectory,
    ub: &ControlTrajectory,
    v: &ControlTrajectory,
) -> Result<(), String> {
    ua.check_same_shape(ub).map_err(|e| e.to_string())?;
    ua.check_same_shape(v).map_err(|e| e.to_string())?;
    let m = ua.channels();
    let mut w = writer(out);
    let mut header = vec!["t".to_string()];
    for prefix in ["uA", "uB", "v"] {
        header.extend((1..=m).map(|i| format!("{prefix}_{i}")));
    }
    w.write_record(&header).map_err(|e| e.to_string())?;
    let grid = ua.grid();
    for k in 0..grid.steps() {
        let mut row = vec![fmt_f64(grid.node(k))];
        for traj in [ua, ub, v] {
            row.extend((0..m).map(|i| fmt_f64(traj.value(k, i))));
        }
        w.write_record(&row).map_err(|e| e.to_string())?;
    }
    w.flush().map_err(|e| e.to_string())
}

/// Writes `t, x_1..x_n` at every grid node.
pub fn write_states<W: Write>(out: W, states: &StateTrajectory) -> Result<(), String> {
    let grid = states.grid();
    let n = states.dim();
    let mut w = writer(out);
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("x_{i}")));
    w.write_record(&header).map_err(|e| e.to_string())?;
    for k in 0..=grid.steps() {
        let mut row = vec![fmt_f64(grid.node(k))];
        row.extend(states.state(k).iter().map(|x| fmt_f64(*x)));
        w.write_record(&row).map_err(|e| e.to_string())?;
    }
    w.flush().map_err(|e| e.to_string())
}

/// A trajectory file read back into memory.
#[derive(Debug, Clone)]
pub struct TrajectoryFile {
    pub times: Vec<f64>,
    pub ua: ControlTrajectory,
    pub ub: ControlTrajectory,
    pub v: ControlTrajectory,
}

/// Parses a file written by [`write_trajectory`]. The grid is recovered from
/// the time column: `t0` is the first stamp, `h` the spacing and the horizon
/// ends one interval after the last row, unless `horizon` is given.
pub fn read_trajectory<R: Read>(
    input: R,
    horizon: Option<(f64, f64)>,
) -> Result<TrajectoryFile, String> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input);
    let header = rdr.headers().map_err(|e| e.to_string())?.clone();
    let cols = header.len();
    if cols < 4 || (cols - 1) % 3 != 0 || &header[0] != "t" {
        return Err(format!(
            "unexpected trajectory header: {}",
            header.iter().collect::<Vec<_>>().join(",")
        ));
    }
    let m = (cols - 1) / 3;
    for (idx, prefix) in ["uA", "uB", "v"].iter().enumerate() {
        for i in 0..m {
            let want = format!("{prefix}_{}", i + 1);
            if header[1 + idx * m + i] != want {
                return Err(format!(
                    "expected column '{want}', found '{}'",
                    &header[1 + idx * m + i]
                ));
            }
        }
    }
    let mut times = Vec::new();
    let mut cols_data: [Vec<f64>; 3] = Default::default();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| e.to_string())?;
        let parse = |j: usize| -> Result<f64, String> {
            rec[j]
                .trim()
                .parse::<f64>()
                .map_err(|e| format!("row {}: column {}: {e}", line + 2, j + 1))
        };
        times.push(parse(0)?);
        for (idx, data) in cols_data.iter_mut().enumerate() {
            for i in 0..m {
                data.push(parse(1 + idx * m + i)?);
            }
        }
    }
    let steps = times.len();
    if steps < 1 {
        return Err("trajectory file has no data rows".into());
    }
    let (t0, tf) = match horizon {
        Some(hz) => hz,
        None if steps >= 2 => {
            let h = (times[steps - 1] - times[0]) / (steps - 1) as f64;
            (times[0], times[0] + steps as f64 * h)
        }
        None => return Err("cannot infer the horizon from a single row".into()),
    };
    let grid = Grid::new(t0, tf, steps).map_err(|e| e.to_string())?;
    let h = grid.h();
    for (k, t) in times.iter().enumerate() {
        if (t - grid.node(k)).abs() > 1e-9 * (1.0 + t.abs()) + 1e-6 * h {
            return Err(format!("row {}: time {t} is off the uniform grid", k + 2));
        }
    }
    let [ua, ub, v] = cols_data;
    let mk = |vals| ControlTrajectory::new(grid, m, vals).map_err(|e| e.to_string());
    Ok(TrajectoryFile {
        times,
        ua: mk(ua)?,
        ub: mk(ub)?,
        v: mk(v)?,
    })
}

/// One machine-readable record per run.
#[derive(Debug, Clone, Serialize, PartialEq, Default)]
pub struct SummaryRecord {
    pub command: String,
    pub instance: String,
    #[serde(rename = "N")]
    pub nodes: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solver: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gap_norm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gap_lower_bound: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a_c: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bracket: Option<(f64, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub evaluations: Option<usize>,
    pub switch_times: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Command-specific extras (ranks, residuals, oracle comparison).
    #[serde(skip_serializing_if = "serde_json::Map::is_empty")]
    pub details: serde_json::Map<String, serde_json::Value>,
    pub wall_time_seconds: f64,
}

impl SummaryRecord {
    pub fn detail(&mut self, key: &str, value: impl Into<serde_json::Value>) {
        self.details.insert(key.to_string(), value.into());
    }

    /// Every reported number is finite.
    pub fn is_finite(&self) -> bool {
        let opt = |x: Option<f64>| x.is_none_or(f64::is_finite);
        opt(self.a)
            && opt(self.gap_norm)
            && opt(self.gap_lower_bound)
            && opt(self.a_c)
            && self
                .bracket
                .is_none_or(|(l, h)| l.is_finite() && h.is_finite())
            && self.switch_times.iter().all(|t| t.is_finite())
            && self.wall_time_seconds.is_finite()
            && self.details.values().all(finite_json)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }
}

fn finite_json(v: &serde_json::Value) -> bool {
    match v {
        serde_json::Value::Null => false,
        serde_json::Value::Array(a) => a.iter().all(finite_json),
        serde_json::Value::Object(o) => o.values().all(finite_json),
        _ => true,
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<(), String> {
    let mut f = File::create(path).map_err(|e| format!("cannot create {}: {e}", path.display()))?;
    f.write_all(text.as_bytes())
        .map_err(|e| format!("cannot write {}: {e}", path.display()))
}

pub fn create(path: &Path) -> Result<File, String> {
    File::create(path).map_err(|e| format!("cannot create {}: {e}", path.display()))
}
