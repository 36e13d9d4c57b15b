//! Systems, grids, control bounds and the builtin benchmark instances.
//!
//! Everything here is an immutable value once constructed. Time-varying
//! matrices and bounds are carried as per-node samples on a [`Grid`].

use nalgebra::{DMatrix, DVector};

use crate::error::{ensure_finite, Error, Result};

/// Uniform Euler grid on `[t0, tf]` with `steps` intervals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    t0: f64,
    tf: f64,
    steps: usize,
}

impl Grid {
    pub fn new(t0: f64, tf: f64, steps: usize) -> Result<Self> {
        if !(t0.is_finite() && tf.is_finite()) {
            return Err(Error::NonFinite("grid horizon"));
        }
        if tf <= t0 {
            return Err(Error::InvalidHorizon { t0, tf });
        }
        if steps == 0 {
            return Err(Error::InvalidArgument(
                "grid needs at least one step".into(),
            ));
        }
        Ok(Self { t0, tf, steps })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn tf(&self) -> f64 {
        self.tf
    }

    /// Number of Euler steps `N`; there are `N + 1` nodes.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn h(&self) -> f64 {
        (self.tf - self.t0) / self.steps as f64
    }

    /// Node time `t_k = t0 + k h`. The last node is pinned to `tf` exactly.
    pub fn node(&self, k: usize) -> f64 {
        if k == self.steps {
            self.tf
        } else {
            self.t0 + k as f64 * self.h()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.node(k)).collect()
    }
}

/// A matrix that is either constant in time or sampled once per grid node.
#[derive(Debug, Clone, PartialEq)]
pub enum MatrixSchedule {
    Constant(DMatrix<f64>),
    Sampled(Vec<DMatrix<f64>>),
}

impl MatrixSchedule {
    fn shape(&self) -> Option<(usize, usize)> {
        match self {
            MatrixSchedule::Constant(m) => Some(m.shape()),
            MatrixSchedule::Sampled(v) => v.first().map(|m| m.shape()),
        }
    }

    fn validate(&self, rows: usize, cols: usize, what: &'static str) -> Result<()> {
        let mats: &[DMatrix<f64>] = match self {
            MatrixSchedule::Constant(m) => std::slice::from_ref(m),
            MatrixSchedule::Sampled(v) => {
                if v.is_empty() {
                    return Err(Error::InvalidArgument(format!("{what}: empty sample list")));
                }
                v
            }
        };
        for m in mats {
            if m.nrows() != rows {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: rows,
                    actual: m.nrows(),
                });
            }
            if m.ncols() != cols {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: cols,
                    actual: m.ncols(),
                });
            }
            ensure_finite(m.as_slice(), what)?;
        }
        Ok(())
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, MatrixSchedule::Constant(_))
    }

    /// Number of node samples, `None` for a constant matrix.
    pub fn sample_count(&self) -> Option<usize> {
        match self {
            MatrixSchedule::Constant(_) => None,
            MatrixSchedule::Sampled(v) => Some(v.len()),
        }
    }

    /// Matrix at grid node `k`.
    pub fn at_node(&self, k: usize) -> &DMatrix<f64> {
        match self {
            MatrixSchedule::Constant(m) => m,
            MatrixSchedule::Sampled(v) => &v[k],
        }
    }

    /// Matrix at an arbitrary time, linearly interpolated between nodes of
    /// `grid`. Returns `None` outside the horizon.
    pub fn at_time(&self, grid: &Grid, t: f64) -> Option<DMatrix<f64>> {
        match self {
            MatrixSchedule::Constant(m) => Some(m.clone()),
            MatrixSchedule::Sampled(v) => {
                let tol = 1e-12 * (grid.tf() - grid.t0());
                if t < grid.t0() - tol || t > grid.tf() + tol {
                    return None;
                }
                let s = ((t - grid.t0()) / grid.h()).clamp(0.0, grid.steps() as f64);
                let k = (s.floor() as usize).min(grid.steps() - 1);
                let w = s - k as f64;
                Some(&v[k] * (1.0 - w) + &v[k + 1] * w)
            }
        }
    }
}

/// Linear dynamics `x' = A(t) x + B(t) u` on `[t0, tf]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    a: MatrixSchedule,
    b: MatrixSchedule,
    n: usize,
    m: usize,
    t0: f64,
    tf: f64,
}

impl LinearSystem {
    pub fn new(a: MatrixSchedule, b: MatrixSchedule, t0: f64, tf: f64) -> Result<Self> {
        if !(t0.is_finite() && tf.is_finite()) {
            return Err(Error::NonFinite("horizon"));
        }
        if tf <= t0 {
            return Err(Error::InvalidHorizon { t0, tf });
        }
        let (n, n2) = a
            .shape()
            .ok_or_else(|| Error::InvalidArgument("A: empty sample list".into()))?;
        if n == 0 {
            return Err(Error::InvalidArgument(
                "state dimension must be >= 1".into(),
            ));
        }
        if n2 != n {
            return Err(Error::DimensionMismatch {
                what: "A columns",
                expected: n,
                actual: n2,
            });
        }
        a.validate(n, n, "A")?;
        let (bn, m) = b
            .shape()
            .ok_or_else(|| Error::InvalidArgument("B: empty sample list".into()))?;
        if bn != n {
            return Err(Error::DimensionMismatch {
                what: "B rows",
                expected: n,
                actual: bn,
            });
        }
        if m == 0 {
            return Err(Error::InvalidArgument(
                "control dimension must be >= 1".into(),
            ));
        }
        b.validate(n, m, "B")?;
        if let (Some(ka), Some(kb)) = (a.sample_count(), b.sample_count()) {
            if ka != kb {
                return Err(Error::DimensionMismatch {
                    what: "B sample count",
                    expected: ka,
                    actual: kb,
                });
            }
        }
        Ok(Self { a, b, n, m, t0, tf })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn tf(&self) -> f64 {
        self.tf
    }

    pub fn a(&self) -> &MatrixSchedule {
        &self.a
    }

    pub fn b(&self) -> &MatrixSchedule {
        &self.b
    }

    pub fn is_time_invariant(&self) -> bool {
        self.a.is_constant() && self.b.is_constant()
    }

    /// Euler grid with `steps` intervals over this system's horizon.
    pub fn grid(&self, steps: usize) -> Result<Grid> {
        Grid::new(self.t0, self.tf, steps)
    }

    /// Checks that sampled matrices carry exactly one sample per node of `grid`
    /// and that the grid spans the system horizon.
    pub fn check_grid(&self, grid: &Grid) -> Result<()> {
        let tol = 1e-12 * (self.tf - self.t0).abs().max(1.0);
        if (grid.t0() - self.t0).abs() > tol || (grid.tf() - self.tf).abs() > tol {
            return Err(Error::InvalidArgument(format!(
                "grid horizon [{}, {}] differs from system horizon [{}, {}]",
                grid.t0(),
                grid.tf(),
                self.t0,
                self.tf
            )));
        }
        for (sched, what) in [(&self.a, "A sample count"), (&self.b, "B sample count")] {
            if let Some(count) = sched.sample_count() {
                if count != grid.steps() + 1 {
                    return Err(Error::DimensionMismatch {
                        what,
                        expected: grid.steps() + 1,
                        actual: count,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Constant-matrix system on `[t0, tf]`.
pub fn make_lti_system(a: DMatrix<f64>, b: DMatrix<f64>, t0: f64, tf: f64) -> Result<LinearSystem> {
    LinearSystem::new(
        MatrixSchedule::Constant(a),
        MatrixSchedule::Constant(b),
        t0,
        tf,
    )
}

/// Fixed initial and terminal states.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundarySpec {
    pub x0: DVector<f64>,
    pub xf: DVector<f64>,
}

impl BoundarySpec {
    pub fn new(x0: DVector<f64>, xf: DVector<f64>) -> Result<Self> {
        if x0.len() != xf.len() {
            return Err(Error::DimensionMismatch {
                what: "xf",
                expected: x0.len(),
                actual: xf.len(),
            });
        }
        ensure_finite(x0.as_slice(), "x0")?;
        ensure_finite(xf.as_slice(), "xf")?;
        Ok(Self { x0, xf })
    }

    pub fn check_dim(&self, n: usize) -> Result<()> {
        if self.x0.len() != n {
            return Err(Error::DimensionMismatch {
                what: "boundary state",
                expected: n,
                actual: self.x0.len(),
            });
        }
        Ok(())
    }
}

/// Per-channel, per-node control bounds `lower <= u <= upper`.
#[derive(Debug, Clone, PartialEq)]
pub enum Bounds {
    /// `-a <= u_i(t) <= a` for every channel and node.
    Symmetric { a: f64, channels: usize },
    /// Node samples stored row-major (`k * channels + i`), one row per node.
    Sampled {
        lower: Vec<f64>,
        upper: Vec<f64>,
        channels: usize,
    },
}

impl Bounds {
    pub fn symmetric(a: f64, channels: usize) -> Result<Self> {
        if !a.is_finite() {
            return Err(Error::NonFinite("bound"));
        }
        if a <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "symmetric bound must be positive, got {a}"
            )));
        }
        if channels == 0 {
            return Err(Error::InvalidArgument(
                "bounds need at least one channel".into(),
            ));
        }
        Ok(Bounds::Symmetric { a, channels })
    }

    /// Sampled bounds; `lower.len()` must be a multiple of `channels`. Either
    /// `N` rows (control nodes) or `N + 1` rows (all grid nodes) are accepted
    /// when the bounds are applied to a control.
    pub fn sampled(lower: Vec<f64>, upper: Vec<f64>, channels: usize) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InvalidArgument(
                "bounds need at least one channel".into(),
            ));
        }
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                what: "upper bound samples",
                expected: lower.len(),
                actual: upper.len(),
            });
        }
        if lower.is_empty() || !lower.len().is_multiple_of(channels) {
            return Err(Error::InvalidArgument(format!(
                "{} bound samples do not divide into {channels} channels",
                lower.len()
            )));
        }
        ensure_finite(&lower, "lower bound")?;
        ensure_finite(&upper, "upper bound")?;
        if let Some(j) = lower.iter().zip(&upper).position(|(l, u)| l >= u) {
            return Err(Error::InvalidArgument(format!(
                "lower bound {} not below upper bound {} at sample {j}",
                lower[j], upper[j]
            )));
        }
        Ok(Bounds::Sampled {
            lower,
            upper,
            channels,
        })
    }

    /// Samples `lower(t)` and `upper(t)` on every grid node.
    pub fn from_fn(
        grid: &Grid,
        channels: usize,
        mut f: impl FnMut(f64, usize) -> (f64, f64),
    ) -> Result<Self> {
        let mut lower = Vec::with_capacity((grid.steps() + 1) * channels);
        let mut upper = Vec::with_capacity(lower.capacity());
        for k in 0..=grid.steps() {
            let t = grid.node(k);
            for i in 0..channels {
                let (l, u) = f(t, i);
                lower.push(l);
                upper.push(u);
            }
        }
        Self::sampled(lower, upper, channels)
    }

    pub fn channels(&self) -> usize {
        match self {
            Bounds::Symmetric { channels, .. } | Bounds::Sampled { channels, .. } => *channels,
        }
    }

    /// Checks that the bounds can be applied to a control with `steps` rows.
    pub fn check_shape(&self, steps: usize, channels: usize) -> Result<()> {
        if self.channels() != channels {
            return Err(Error::DimensionMismatch {
                what: "bound channels",
                expected: channels,
                actual: self.channels(),
            });
        }
        if let Bounds::Sampled { lower, .. } = self {
            let rows = lower.len() / channels;
            if rows != steps && rows != steps + 1 {
                return Err(Error::DimensionMismatch {
                    what: "bound rows",
                    expected: steps,
                    actual: rows,
                });
            }
        }
        Ok(())
    }

    /// Lower and upper bound of flat control coordinate `j = k * channels + i`.
    #[inline]
    pub fn interval(&self, j: usize) -> (f64, f64) {
        match self {
            Bounds::Symmetric { a, .. } => (-a, *a),
            Bounds::Sampled { lower, upper, .. } => (lower[j], upper[j]),
        }
    }

    /// The symmetric scalar, if these bounds are symmetric.
    pub fn symmetric_value(&self) -> Option<f64> {
        match self {
            Bounds::Symmetric { a, .. } => Some(*a),
            Bounds::Sampled { .. } => None,
        }
    }

    /// Bounds multiplied by `s > 0`.
    pub fn scaled(&self, s: f64) -> Result<Self> {
        match self {
            Bounds::Symmetric { a, channels } => Self::symmetric(a * s, *channels),
            Bounds::Sampled {
                lower,
                upper,
                channels,
            } => Self::sampled(
                lower.iter().map(|l| l * s).collect(),
                upper.iter().map(|u| u * s).collect(),
                *channels,
            ),
        }
    }
}

/// One benchmark experiment: dynamics, boundary states and (optionally) bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    pub system: LinearSystem,
    pub boundary: BoundarySpec,
    pub bounds: Option<Bounds>,
    pub label: String,
}

impl ProblemInstance {
    pub fn new(
        system: LinearSystem,
        boundary: BoundarySpec,
        bounds: Option<Bounds>,
        label: impl Into<String>,
    ) -> Result<Self> {
        boundary.check_dim(system.n())?;
        if let Some(b) = &bounds {
            if b.channels() != system.m() {
                return Err(Error::DimensionMismatch {
                    what: "bound channels",
                    expected: system.m(),
                    actual: b.channels(),
                });
            }
        }
        Ok(Self {
            system,
            boundary,
            bounds,
            label: label.into(),
        })
    }

    pub fn with_bound(mut self, a: f64) -> Result<Self> {
        self.bounds = Some(Bounds::symmetric(a, self.system.m())?);
        Ok(self)
    }
}

pub const BUILTIN_NAMES: [&str; 3] = ["double_integrator", "damped_oscillator", "machine_tool"];

/// Natural frequency and damping ratio of the damped oscillator benchmark.
pub const OSCILLATOR_OMEGA: f64 = 20.0;
pub const OSCILLATOR_ZETA: f64 = 0.1;

/// Builtin benchmark by name. Bounds are left unset.
pub fn builtin_instance(name: &str) -> Result<ProblemInstance> {
    match name {
        "double_integrator" => {
            let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
            let b = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
            ProblemInstance::new(
                make_lti_system(a, b, 0.0, 1.0)?,
                BoundarySpec::new(DVector::from_vec(vec![0.0, 1.0]), DVector::zeros(2))?,
                None,
                name,
            )
        }
        "damped_oscillator" => {
            let (w, z) = (OSCILLATOR_OMEGA, OSCILLATOR_ZETA);
            let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -w * w, -2.0 * z * w]);
            let b = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
            ProblemInstance::new(
                make_lti_system(a, b, 0.0, 1.0)?,
                BoundarySpec::new(DVector::from_vec(vec![0.0, 1.0]), DVector::zeros(2))?,
                None,
                name,
            )
        }
        "machine_tool" => {
            let mut a = DMatrix::zeros(7, 7);
            a[(0, 3)] = 1.0;
            a[(1, 4)] = 1.0;
            a[(2, 5)] = 1.0;
            a[(3, 0)] = -4.441e7 / 450.0;
            a[(3, 3)] = -8500.0 / 450.0;
            a[(3, 6)] = -1.0 / 450.0;
            a[(4, 6)] = 1.0 / 750.0;
            a[(5, 2)] = -8.2e6 / 40.0;
            a[(5, 5)] = -1800.0 / 40.0;
            a[(5, 6)] = 0.25 / 40.0;
            a[(6, 6)] = -1.0 / 0.0025;
            let mut b = DMatrix::zeros(7, 1);
            b[(6, 0)] = 1.0 / 0.0025;
            let xf = DVector::from_vec(vec![0.0, 0.0027, 0.0, 0.0, 0.1, 0.0, 0.0]);
            ProblemInstance::new(
                make_lti_system(a, b, 0.0, 0.0522)?,
                BoundarySpec::new(DVector::zeros(7), xf)?,
                None,
                name,
            )
        }
        other => Err(Error::UnknownInstance(other.to_string())),
    }
}
