//! Controllability tests: the Kalman rank condition for constant systems, the
//! `K_j` recursion rank test for time-varying systems, and the discrete
//! Gramian of an Euler grid.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::discretize::AffineData;
use crate::error::{Error, Result};
use crate::model::{Grid, LinearSystem};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CtrbTest {
    Kalman,
    LtvRecursion,
    Gramian,
}

impl CtrbTest {
    pub fn name(&self) -> &'static str {
        match self {
            CtrbTest::Kalman => "kalman",
            CtrbTest::LtvRecursion => "ltv_recursion",
            CtrbTest::Gramian => "gramian",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Controllable,
    Uncontrollable,
    /// The rank test is only sufficient for time-varying systems.
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CtrbReport {
    pub rank: usize,
    pub required: usize,
    pub controllable: bool,
    pub verdict: Verdict,
    pub test: CtrbTest,
    /// Smallest-to-largest singular value ratio of the equilibrated test matrix.
    pub conditioning: f64,
}

/// Diagonal row/column equilibration. Rank is invariant under nonsingular
/// diagonal scaling, and the Kalman matrix of a stiff system mixes columns
/// whose norms differ by 20 orders of magnitude.
fn equilibrate(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for _ in 0..8 {
        for mut col in out.column_iter_mut() {
            let n = col.norm();
            if n > 0.0 && n.is_finite() {
                col /= n;
            }
        }
        for mut row in out.row_iter_mut() {
            let n = row.norm();
            if n > 0.0 && n.is_finite() {
                row /= n;
            }
        }
    }
    out
}

/// Rank with tolerance `rows * eps * sigma_max` after equilibration, and the
/// singular value ratio.
pub fn numerical_rank(m: &DMatrix<f64>) -> (usize, f64) {
    if m.is_empty() {
        return (0, 0.0);
    }
    let sv = equilibrate(m).singular_values();
    let smax = sv.max();
    if smax == 0.0 {
        return (0, 0.0);
    }
    let tol = m.nrows() as f64 * f64::EPSILON * smax;
    let rank = sv.iter().filter(|s| **s >= tol).count();
    let expected = m.nrows().min(m.ncols());
    let smin = if sv.len() < expected { 0.0 } else { sv.min() };
    (rank, smin / smax)
}

fn report(test_matrix: &DMatrix<f64>, n: usize, test: CtrbTest, time_varying: bool) -> CtrbReport {
    let (rank, conditioning) = numerical_rank(test_matrix);
    let controllable = rank == n;
    let verdict = match (controllable, time_varying) {
        (true, _) => Verdict::Controllable,
        (false, false) => Verdict::Uncontrollable,
        (false, true) => Verdict::Inconclusive,
    };
    CtrbReport {
        rank,
        required: n,
        controllable,
        verdict,
        test,
        conditioning,
    }
}

/// `[B | AB | ... | A^{n-1} B]`.
pub fn kalman_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch {
            what: "A columns",
            expected: n,
            actual: a.ncols(),
        });
    }
    if b.nrows() != n {
        return Err(Error::DimensionMismatch {
            what: "B rows",
            expected: n,
            actual: b.nrows(),
        });
    }
    let m = b.ncols();
    let mut q = DMatrix::zeros(n, n * m);
    let mut block = b.clone();
    for k in 0..n {
        q.columns_mut(k * m, m).copy_from(&block);
        block = a * block;
    }
    Ok(q)
}

/// Kalman rank condition for constant `(A, B)`.
pub fn kalman_rank(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<CtrbReport> {
    let q = kalman_matrix(a, b)?;
    Ok(report(&q, a.nrows(), CtrbTest::Kalman, false))
}

/// Kalman test against a single input column `b_i` (controllability with
/// respect to `u_i` alone).
pub fn kalman_rank_channel(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    channel: usize,
) -> Result<CtrbReport> {
    if channel >= b.ncols() {
        return Err(Error::InvalidArgument(format!(
            "channel {channel} out of range for {} inputs",
            b.ncols()
        )));
    }
    kalman_rank(a, &b.columns(channel, 1).into_owned())
}

/// Rank test on `[K_0(tc) | ... | K_q(tc)]` with `K_0 = B` and
/// `K_j = -A K_{j-1} + d/dt K_{j-1}`. Time derivatives are central differences
/// of step `fd_step` on the (linearly interpolated) node samples.
pub fn ltv_rank(
    system: &LinearSystem,
    grid: &Grid,
    tc: f64,
    q: usize,
    fd_step: f64,
) -> Result<CtrbReport> {
    if q < 1 {
        return Err(Error::InvalidArgument("ltv_rank needs q >= 1".into()));
    }
    if !(fd_step > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "fd_step must be positive, got {fd_step}"
        )));
    }
    system.check_grid(grid)?;
    let time_varying = !system.is_time_invariant();
    let (lo, hi) = (tc - q as f64 * fd_step, tc + q as f64 * fd_step);
    if time_varying {
        let slack = 1e-12 * (grid.tf() - grid.t0());
        if lo < grid.t0() - slack || hi > grid.tf() + slack {
            return Err(Error::InsufficientWindow { lo, hi });
        }
    }
    let n = system.n();
    let m = system.m();
    let mut stacked = DMatrix::zeros(n, (q + 1) * m);
    for j in 0..=q {
        let kj = k_matrix(system, grid, j, tc, fd_step)?;
        stacked.columns_mut(j * m, m).copy_from(&kj);
    }
    Ok(report(&stacked, n, CtrbTest::LtvRecursion, time_varying))
}

fn k_matrix(system: &LinearSystem, grid: &Grid, j: usize, t: f64, d: f64) -> Result<DMatrix<f64>> {
    let at = |sched: &crate::model::MatrixSchedule, t: f64| {
        sched
            .at_time(grid, t)
            .ok_or(Error::InsufficientWindow { lo: t, hi: t })
    };
    if j == 0 {
        return at(system.b(), t);
    }
    let prev = k_matrix(system, grid, j - 1, t, d)?;
    let fwd = k_matrix(system, grid, j - 1, t + d, d)?;
    let bwd = k_matrix(system, grid, j - 1, t - d, d)?;
    Ok(-at(system.a(), t)? * prev + (fwd - bwd) / (2.0 * d))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GramianReport {
    /// `G G^T / h`, the Riemann-sum approximation of the reachability Gramian
    /// `int Phi(tf, t) B B^T Phi(tf, t)^T dt`.
    pub matrix: DMatrix<f64>,
    pub min_eigenvalue: f64,
    pub invertible: bool,
    pub rank: usize,
}

/// Discrete Gramian of the Euler grid.
pub fn discrete_gramian(aff: &AffineData) -> GramianReport {
    let h = aff.grid().h();
    let matrix = aff.w() / h;
    let eig = SymmetricEigen::new(matrix.clone());
    let (rank, _) = numerical_rank(&matrix);
    GramianReport {
        min_eigenvalue: eig.eigenvalues.min(),
        invertible: aff.is_controllable(),
        rank,
        matrix,
    }
}

impl GramianReport {
    pub fn as_ctrb_report(&self) -> CtrbReport {
        let n = self.matrix.nrows();
        let (rank, conditioning) = numerical_rank(&self.matrix);
        CtrbReport {
            rank,
            required: n,
            controllable: self.invertible,
            verdict: if self.invertible {
                Verdict::Controllable
            } else {
                Verdict::Uncontrollable
            },
            test: CtrbTest::Gramian,
            conditioning,
        }
    }
}
