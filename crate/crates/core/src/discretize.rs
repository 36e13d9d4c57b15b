//! Forward-Euler transcription of the boundary-value constraint.
//!
//! Controls are piecewise constant: row `k` of a [`ControlTrajectory`] acts on
//! `[t_k, t_{k+1})`. Under the Euler update the terminal state is an affine
//! function of the flattened control, `x_N = Phi x0 + G u`, so the set of
//! controls meeting the boundary conditions is `{u : G u = xi}` with
//! `xi = xf - Phi x0`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{ensure_finite, Error, Result};
use crate::model::{BoundarySpec, Grid, LinearSystem};

/// Relative eigenvalue floor below which the equilibrated Gram matrix is
/// treated as singular.
const GRAM_SINGULAR_TOL: f64 = 1e-13;

/// Grid-sampled control, `N` rows of `m` channels, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlTrajectory {
    grid: Grid,
    channels: usize,
    values: Vec<f64>,
}

impl ControlTrajectory {
    pub fn new(grid: Grid, channels: usize, values: Vec<f64>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InvalidArgument(
                "control needs at least one channel".into(),
            ));
        }
        if values.len() != grid.steps() * channels {
            return Err(Error::DimensionMismatch {
                what: "control values",
                expected: grid.steps() * channels,
                actual: values.len(),
            });
        }
        ensure_finite(&values, "control")?;
        Ok(Self {
            grid,
            channels,
            values,
        })
    }

    pub fn zeros(grid: Grid, channels: usize) -> Self {
        Self {
            grid,
            channels,
            values: vec![0.0; grid.steps() * channels],
        }
    }

    pub fn constant(grid: Grid, channels: usize, value: f64) -> Self {
        Self {
            grid,
            channels,
            values: vec![value; grid.steps() * channels],
        }
    }

    /// Samples `f(t_k, i)` at the left node of every interval.
    pub fn from_fn(
        grid: Grid,
        channels: usize,
        mut f: impl FnMut(f64, usize) -> f64,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(grid.steps() * channels);
        for k in 0..grid.steps() {
            let t = grid.node(k);
            for i in 0..channels {
                values.push(f(t, i));
            }
        }
        Self::new(grid, channels, values)
    }

    // Unchecked constructor for solver internals that already hold a
    // correctly sized buffer.
    pub(crate) fn from_raw(grid: Grid, channels: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.steps() * channels);
        Self {
            grid,
            channels,
            values,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn steps(&self) -> usize {
        self.grid.steps()
    }

    pub fn value(&self, k: usize, i: usize) -> f64 {
        self.values[k * self.channels + i]
    }

    /// Flattened values, index `k * m + i`.
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn channel(&self, i: usize) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().skip(i).step_by(self.channels).copied()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_raw(
            self.grid,
            self.channels,
            self.values.iter().map(|v| f(*v)).collect(),
        )
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other)?;
        Ok(Self::from_raw(
            self.grid,
            self.channels,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
        ))
    }

    pub fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.channels != other.channels {
            return Err(Error::DimensionMismatch {
                what: "control channels",
                expected: self.channels,
                actual: other.channels,
            });
        }
        if self.values.len() != other.values.len() {
            return Err(Error::DimensionMismatch {
                what: "control rows",
                expected: self.steps(),
                actual: other.steps(),
            });
        }
        Ok(())
    }
}

/// State values at all `N + 1` grid nodes, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTrajectory {
    grid: Grid,
    dim: usize,
    values: Vec<f64>,
}

impl StateTrajectory {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn last(&self) -> DVector<f64> {
        DVector::from_column_slice(self.state(self.grid.steps()))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }
}

/// h-weighted discrete L2 norm, `sqrt(h * sum |u_k|^2)`.
pub fn l2_norm(u: &ControlTrajectory) -> f64 {
    weighted_norm(u.as_slice(), u.grid().h())
}

pub(crate) fn weighted_norm(u: &[f64], h: f64) -> f64 {
    (h * u.iter().map(|x| x * x).sum::<f64>()).sqrt()
}

pub(crate) fn weighted_dist(a: &[f64], b: &[f64], h: f64) -> f64 {
    (h * a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()).sqrt()
}

/// Forward Euler: `x_{k+1} = x_k + h (A_k x_k + B_k u_k)`.
pub fn simulate(
    system: &LinearSystem,
    grid: &Grid,
    x0: &DVector<f64>,
    u: &ControlTrajectory,
) -> Result<StateTrajectory> {
    system.check_grid(grid)?;
    let (n, m) = (system.n(), system.m());
    if x0.len() != n {
        return Err(Error::DimensionMismatch {
            what: "x0",
            expected: n,
            actual: x0.len(),
        });
    }
    if u.channels() != m {
        return Err(Error::DimensionMismatch {
            what: "control channels",
            expected: m,
            actual: u.channels(),
        });
    }
    if u.steps() != grid.steps() {
        return Err(Error::DimensionMismatch {
            what: "control rows",
            expected: grid.steps(),
            actual: u.steps(),
        });
    }
    let h = grid.h();
    let mut values = Vec::with_capacity((grid.steps() + 1) * n);
    values.extend_from_slice(x0.as_slice());
    let mut x = x0.clone();
    for k in 0..grid.steps() {
        let uk = DVector::from_column_slice(&u.as_slice()[k * m..(k + 1) * m]);
        let dx = system.a().at_node(k) * &x + system.b().at_node(k) * uk;
        x += dx * h;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Overflow { step: k + 1 });
        }
        values.extend_from_slice(x.as_slice());
    }
    Ok(StateTrajectory {
        grid: *grid,
        dim: n,
        values,
    })
}

/// Discrete reachability data `(G, xi, Phi)` plus the factored Gram matrix.
#[derive(Debug, Clone)]
pub struct AffineData {
    grid: Grid,
    n: usize,
    m: usize,
    g: DMatrix<f64>,
    xi: DVector<f64>,
    phi: DMatrix<f64>,
    w: DMatrix<f64>,
    // W = D^{-1} What D^{-1} with D = diag(scale); What has unit diagonal.
    scale: DVector<f64>,
    chol: Option<Cholesky<f64, Dyn>>,
    min_eigenvalue: f64,
}

impl AffineData {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Reachability map, `n x (N m)`.
    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn xi(&self) -> &DVector<f64> {
        &self.xi
    }

    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }

    /// `G G^T` (unweighted).
    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    /// Smallest eigenvalue of the diagonally equilibrated Gram matrix.
    pub fn equilibrated_min_eigenvalue(&self) -> f64 {
        self.min_eigenvalue
    }

    /// Whether `G G^T` is invertible, i.e. the grid system is controllable.
    pub fn is_controllable(&self) -> bool {
        self.chol.is_some()
    }

    pub fn require_controllable(&self) -> Result<()> {
        if self.chol.is_some() {
            Ok(())
        } else {
            Err(Error::Uncontrollable {
                min_eigenvalue: self.min_eigenvalue,
            })
        }
    }

    pub fn coords(&self) -> usize {
        self.g.ncols()
    }

    /// `G u` for a flat control.
    pub fn apply_g(&self, u: &[f64]) -> DVector<f64> {
        let n = self.n;
        let mut out = DVector::zeros(n);
        for (col, uj) in self.g.as_slice().chunks_exact(n).zip(u) {
            for (o, c) in out.iter_mut().zip(col) {
                *o += c * uj;
            }
        }
        out
    }

    /// `out = G^T mu`.
    pub fn apply_gt(&self, mu: &DVector<f64>, out: &mut [f64]) {
        let n = self.n;
        for (col, o) in self.g.as_slice().chunks_exact(n).zip(out.iter_mut()) {
            *o = col.iter().zip(mu.iter()).map(|(c, m)| c * m).sum();
        }
    }

    /// `G u - xi`.
    pub fn residual(&self, u: &[f64]) -> DVector<f64> {
        self.apply_g(u) - &self.xi
    }

    /// Solves `G G^T mu = r`.
    pub fn gram_solve(&self, r: &DVector<f64>) -> Result<DVector<f64>> {
        let chol = self.chol.as_ref().ok_or(Error::Uncontrollable {
            min_eigenvalue: self.min_eigenvalue,
        })?;
        let scaled = r.component_mul(&self.scale);
        Ok(chol.solve(&scaled).component_mul(&self.scale))
    }
}

/// Builds `(G, xi, Phi)` by a backward sweep over the Euler step matrices and
/// factors `G G^T`. A singular Gram matrix is not an error here; it is
/// reported through [`AffineData::is_controllable`] and surfaces as
/// [`Error::Uncontrollable`] when a projection is requested.
pub fn build_affine(
    system: &LinearSystem,
    grid: &Grid,
    boundary: &BoundarySpec,
) -> Result<AffineData> {
    system.check_grid(grid)?;
    boundary.check_dim(system.n())?;
    let (n, m, steps) = (system.n(), system.m(), grid.steps());
    let h = grid.h();
    let mut g = DMatrix::zeros(n, steps * m);
    // running product of step matrices (I + h A_j) for j > k
    let mut tail = DMatrix::<f64>::identity(n, n);
    for k in (0..steps).rev() {
        let block = &tail * (system.b().at_node(k) * h);
        g.columns_mut(k * m, m).copy_from(&block);
        let step = DMatrix::<f64>::identity(n, n) + system.a().at_node(k) * h;
        tail *= step;
    }
    ensure_finite(g.as_slice(), "reachability map")?;
    let phi = tail;
    ensure_finite(phi.as_slice(), "state transition product")?;
    let xi = &boundary.xf - &phi * &boundary.x0;

    let w = &g * g.transpose();
    let diag_max = w.diagonal().max();
    let mut scale = DVector::from_element(n, 1.0);
    let mut degenerate = false;
    for i in 0..n {
        let d = w[(i, i)];
        if d > 0.0 && d > diag_max * 1e-300 {
            scale[i] = 1.0 / d.sqrt();
        } else {
            degenerate = true;
        }
    }
    let w_hat = DMatrix::from_fn(n, n, |i, j| w[(i, j)] * scale[i] * scale[j]);
    let eig = SymmetricEigen::new(w_hat.clone());
    let min_eigenvalue = if degenerate {
        0.0
    } else {
        eig.eigenvalues.min()
    };
    let chol = if degenerate || min_eigenvalue < GRAM_SINGULAR_TOL * n as f64 {
        None
    } else {
        Cholesky::new(w_hat)
    };

    Ok(AffineData {
        grid: *grid,
        n,
        m,
        g,
        xi,
        phi,
        w,
        scale,
        chol,
        min_eigenvalue,
    })
}
