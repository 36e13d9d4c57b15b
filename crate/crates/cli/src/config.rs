//! Problem instances from builtin names or JSON configuration files.
//!
//! A configuration file is a single JSON object:
//!
//! ```json
//! {
//!   "label": "my_system",
//!   "system": { "A": [[0, 1], [0, 0]], "B": [[0], [1]] },
//!   "t0": 0, "tf": 1,
//!   "x0": [0, 1], "xf": [0, 0],
//!   "nodes": 2000,
//!   "bound": 1.5
//! }
//! ```
//!
//! `system` may instead name a builtin benchmark, in which case the remaining
//! keys are optional overrides. `A` and `B` are either one matrix (rows of
//! numbers) or one matrix per grid node. Instead of `bound`, per-node bounds
//! are given as `"bounds": {"lower": ..., "upper": ...}` where each side is a
//! number, a flat row-major list, or a list of rows.

use std::fs;
use std::path::Path;

use gapctl_core::model::BUILTIN_NAMES;
use gapctl_core::{
    builtin_instance, BoundarySpec, Bounds, LinearSystem, MatrixSchedule, ProblemInstance,
};
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub label: Option<String>,
    pub system: SystemSpec,
    pub t0: Option<f64>,
    pub tf: Option<f64>,
    pub x0: Option<Vec<f64>>,
    pub xf: Option<Vec<f64>>,
    pub nodes: Option<usize>,
    pub bound: Option<f64>,
    pub bounds: Option<BoundsSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum SystemSpec {
    Builtin(String),
    Matrices {
        #[serde(rename = "A")]
        a: MatrixSpec,
        #[serde(rename = "B")]
        b: MatrixSpec,
    },
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Constant(Vec<Vec<f64>>),
    Sampled(Vec<Vec<Vec<f64>>>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSpec {
    pub lower: BoundValues,
    pub upper: BoundValues,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum BoundValues {
    Scalar(f64),
    Flat(Vec<f64>),
    Rows(Vec<Vec<f64>>),
}

/// Instance together with the node count requested by its source.
#[derive(Debug, Clone)]
pub struct LoadedInstance {
    pub instance: ProblemInstance,
    pub nodes: Option<usize>,
    /// Per-node bounds from the configuration; resolved once the grid is known.
    pending_bounds: Option<(Vec<f64>, Vec<f64>)>,
    pending_scalars: Option<(f64, f64)>,
}

impl LoadedInstance {
    /// Bounds for a grid with `steps` intervals, with `--bound` taking
    /// precedence over anything in the configuration.
    pub fn bounds(&self, steps: usize, flag: Option<f64>) -> Result<Option<Bounds>, String> {
        let m = self.instance.system.m();
        if let Some(a) = flag {
            return Bounds::symmetric(a, m).map(Some).map_err(|e| e.to_string());
        }
        if let Some((lo, hi)) = self.pending_scalars {
            let lower = vec![lo; steps * m];
            let upper = vec![hi; steps * m];
            return Bounds::sampled(lower, upper, m)
                .map(Some)
                .map_err(|e| e.to_string());
        }
        if let Some((lo, hi)) = &self.pending_bounds {
            let b = Bounds::sampled(lo.clone(), hi.clone(), m).map_err(|e| e.to_string())?;
            b.check_shape(steps, m).map_err(|e| e.to_string())?;
            return Ok(Some(b));
        }
        Ok(self.instance.bounds.clone())
    }
}

pub fn load_builtin(name: &str) -> Result<LoadedInstance, String> {
    let instance = builtin_instance(name).map_err(|_| {
        format!(
            "unknown system '{name}' (available: {})",
            BUILTIN_NAMES.join(", ")
        )
    })?;
    Ok(LoadedInstance {
        instance,
        nodes: None,
        pending_bounds: None,
        pending_scalars: None,
    })
}

pub fn load_config(path: &Path) -> Result<LoadedInstance, String> {
    let text =
        fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    parse_config(&text).map_err(|e| format!("{}: {e}", path.display()))
}

pub fn parse_config(text: &str) -> Result<LoadedInstance, String> {
    let cfg: ConfigFile =
        serde_json::from_str(text).map_err(|e| format!("invalid configuration: {e}"))?;
    let (system, boundary, label) = match &cfg.system {
        SystemSpec::Builtin(name) => {
            let base = load_builtin(name)?.instance;
            let t0 = cfg.t0.unwrap_or(base.system.t0());
            let tf = cfg.tf.unwrap_or(base.system.tf());
            let system =
                LinearSystem::new(base.system.a().clone(), base.system.b().clone(), t0, tf)
                    .map_err(|e| e.to_string())?;
            let x0 = cfg
                .x0
                .clone()
                .map(DVector::from_vec)
                .unwrap_or(base.boundary.x0.clone());
            let xf = cfg
                .xf
                .clone()
                .map(DVector::from_vec)
                .unwrap_or(base.boundary.xf.clone());
            (
                system,
                BoundarySpec::new(x0, xf).map_err(|e| e.to_string())?,
                name.clone(),
            )
        }
        SystemSpec::Matrices { a, b } => {
            let missing = |k: &str| format!("key '{k}' is required for a custom system");
            let t0 = cfg.t0.ok_or_else(|| missing("t0"))?;
            let tf = cfg.tf.ok_or_else(|| missing("tf"))?;
            let x0 = cfg.x0.clone().ok_or_else(|| missing("x0"))?;
            let xf = cfg.xf.clone().ok_or_else(|| missing("xf"))?;
            let system = LinearSystem::new(schedule(a, "A")?, schedule(b, "B")?, t0, tf)
                .map_err(|e| e.to_string())?;
            let boundary = BoundarySpec::new(DVector::from_vec(x0), DVector::from_vec(xf))
                .map_err(|e| e.to_string())?;
            (system, boundary, "custom".to_string())
        }
    };
    let label = cfg.label.clone().unwrap_or(label);
    let m = system.m();
    let mut nodes = cfg.nodes;
    if nodes.is_none() {
        nodes = system
            .a()
            .sample_count()
            .or(system.b().sample_count())
            .map(|s| s.saturating_sub(1));
    }
    let mut pending_bounds = None;
    let mut pending_scalars = None;
    let mut bounds = None;
    match (&cfg.bound, &cfg.bounds) {
        (Some(_), Some(_)) => return Err("give either 'bound' or 'bounds', not both".into()),
        (Some(a), None) => bounds = Some(Bounds::symmetric(*a, m).map_err(|e| e.to_string())?),
        (None, Some(spec)) => match (&spec.lower, &spec.upper) {
            (BoundValues::Scalar(lo), BoundValues::Scalar(hi)) => {
                if !(lo < hi) {
                    return Err(format!("lower bound {lo} must be below upper bound {hi}"));
                }
                pending_scalars = Some((*lo, *hi));
            }
            (lo, hi) => pending_bounds = Some((flatten(lo, m, "lower")?, flatten(hi, m, "upper")?)),
        },
        (None, None) => {}
    }
    let instance =
        ProblemInstance::new(system, boundary, bounds, label).map_err(|e| e.to_string())?;
    Ok(LoadedInstance {
        instance,
        nodes,
        pending_bounds,
        pending_scalars,
    })
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>, String> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(format!("{what}: expected a nonempty rectangular matrix"));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn schedule(spec: &MatrixSpec, what: &str) -> Result<MatrixSchedule, String> {
    match spec {
        MatrixSpec::Constant(rows) => Ok(MatrixSchedule::Constant(matrix(rows, what)?)),
        MatrixSpec::Sampled(samples) => samples
            .iter()
            .map(|rows| matrix(rows, what))
            .collect::<Result<Vec<_>, _>>()
            .map(MatrixSchedule::Sampled),
    }
}

fn flatten(values: &BoundValues, m: usize, what: &str) -> Result<Vec<f64>, String> {
    match values {
        BoundValues::Scalar(_) => Err(format!(
            "bounds.{what}: cannot mix a scalar with per-node values"
        )),
        BoundValues::Flat(v) => Ok(v.clone()),
        BoundValues::Rows(rows) => {
            if rows.iter().any(|r| r.len() != m) {
                return Err(format!("bounds.{what}: every row needs {m} entries"));
            }
            Ok(rows.concat())
        }
    }
}
