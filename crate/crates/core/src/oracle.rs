//! Independent reference solutions for small instances.
//!
//! [`brute_force_gap`] enumerates every lower/free/upper pattern of the box
//! constraints and solves each pattern's equality-constrained least-squares
//! problem directly, without any projection iteration. It is exact up to
//! linear-algebra rounding and only usable for at most [`ORACLE_LIMIT`]
//! control coordinates.

use nalgebra::{DMatrix, DVector};

use crate::discretize::{weighted_dist, weighted_norm, AffineData, ControlTrajectory};
use crate::error::{Error, Result};
use crate::gapsolve::{lower_bound_from_normal, GapResult, Solver, StopReason};
use crate::model::Bounds;
use crate::project::{affine_project_into, clamp_in_place};

pub const ORACLE_LIMIT: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Activity {
    Lower,
    Free,
    Upper,
}

#[derive(Debug, Clone)]
pub struct ActiveSetSolution {
    pub pattern: Vec<Activity>,
    pub ub: Vec<f64>,
    pub ua: Vec<f64>,
    pub v: Vec<f64>,
    /// `1/2 |v|^2`, h-weighted.
    pub objective: f64,
    /// Free coordinates inside their bounds and fixed coordinates with a gap
    /// component of the matching sign (within rounding).
    pub complementarity: bool,
    pub patterns_checked: usize,
}

fn decode(mut code: usize, len: usize) -> Vec<Activity> {
    // most significant digit first, so increasing codes are lexicographic
    let mut out = vec![Activity::Lower; len];
    for slot in out.iter_mut().rev() {
        *slot = match code % 3 {
            0 => Activity::Lower,
            1 => Activity::Free,
            _ => Activity::Upper,
        };
        code /= 3;
    }
    out
}

/// Global minimizer of `1/2 |uA - uB|^2` over the affine set and the box by
/// exhaustive enumeration of active sets.
pub fn brute_force_active_set(aff: &AffineData, bounds: &Bounds) -> Result<ActiveSetSolution> {
    let len = aff.coords();
    if len > ORACLE_LIMIT {
        return Err(Error::OracleTooLarge {
            size: len,
            limit: ORACLE_LIMIT,
        });
    }
    aff.require_controllable()?;
    bounds.check_shape(aff.grid().steps(), aff.m())?;
    let h = aff.grid().h();
    let n = aff.n();
    let g = aff.g();
    // metric M = W^{-1}: dist(u, A)^2 = (G u - xi)^T W^{-1} (G u - xi)
    let w_inv = {
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            let mut e = DVector::zeros(n);
            e[i] = 1.0;
            m.set_column(i, &aff.gram_solve(&e)?);
        }
        (&m + m.transpose()) * 0.5
    };
    let scale = (0..len)
        .map(|j| {
            let (lo, hi) = bounds.interval(j);
            lo.abs().max(hi.abs())
        })
        .fold(1.0_f64, f64::max);
    let feas_tol = 1e-10 * scale;

    let total = 3usize.pow(len as u32);
    let mut best: Option<(f64, Vec<Activity>, Vec<f64>)> = None;
    let mut ua = vec![0.0; len];
    for code in 0..total {
        let pattern = decode(code, len);
        let Some(ub) = solve_pattern(aff, g, &w_inv, bounds, &pattern, feas_tol) else {
            continue;
        };
        affine_project_into(aff, &ub, &mut ua)?;
        let obj = 0.5 * weighted_dist(&ua, &ub, h).powi(2);
        let better = match &best {
            None => true,
            Some((b, _, _)) => obj < *b - 1e-14 * (1.0 + b.abs()),
        };
        if better {
            best = Some((obj, pattern, ub));
        }
    }
    let (objective, pattern, ub) = best.ok_or_else(|| {
        Error::PreconditionViolated("no active-set pattern produced a feasible point".into())
    })?;
    affine_project_into(aff, &ub, &mut ua)?;
    let v: Vec<f64> = ua.iter().zip(&ub).map(|(a, b)| a - b).collect();
    let vtol = 1e-9 * (1.0 + v.iter().fold(0.0_f64, |m, x| m.max(x.abs())));
    let complementarity = pattern.iter().enumerate().all(|(j, act)| {
        let (lo, hi) = bounds.interval(j);
        match act {
            Activity::Free => {
                ub[j] >= lo - feas_tol && ub[j] <= hi + feas_tol && v[j].abs() <= vtol
            }
            Activity::Upper => v[j] >= -vtol,
            Activity::Lower => v[j] <= vtol,
        }
    });
    Ok(ActiveSetSolution {
        pattern,
        ub,
        ua: ua.clone(),
        v,
        objective,
        complementarity,
        patterns_checked: total,
    })
}

/// Minimizes the distance to the affine set over the free coordinates with
/// the others pinned to their bounds. Returns `None` when the minimizer leaves
/// the box.
fn solve_pattern(
    aff: &AffineData,
    g: &DMatrix<f64>,
    w_inv: &DMatrix<f64>,
    bounds: &Bounds,
    pattern: &[Activity],
    feas_tol: f64,
) -> Option<Vec<f64>> {
    let len = pattern.len();
    let mut ub = vec![0.0; len];
    let mut free = Vec::new();
    for (j, act) in pattern.iter().enumerate() {
        let (lo, hi) = bounds.interval(j);
        match act {
            Activity::Lower => ub[j] = lo,
            Activity::Upper => ub[j] = hi,
            Activity::Free => free.push(j),
        }
    }
    if !free.is_empty() {
        let c = aff.apply_g(&ub) - aff.xi();
        let gf = DMatrix::from_fn(g.nrows(), free.len(), |r, k| g[(r, free[k])]);
        let lhs = gf.transpose() * w_inv * &gf;
        let rhs = -(gf.transpose() * w_inv * c);
        let svd = lhs.svd(true, true);
        let smax = svd.singular_values.max();
        let eps = (free.len() as f64 * f64::EPSILON * smax).max(f64::MIN_POSITIVE);
        let x = svd.solve(&rhs, eps).ok()?;
        for (k, &j) in free.iter().enumerate() {
            ub[j] = x[k];
        }
    }
    ub.iter()
        .enumerate()
        .all(|(j, u)| {
            let (lo, hi) = bounds.interval(j);
            u.is_finite() && *u >= lo - feas_tol && *u <= hi + feas_tol
        })
        .then(|| {
            clamp_in_place(&mut ub, bounds);
            ub
        })
}

/// [`brute_force_active_set`] packaged as a [`GapResult`].
pub fn brute_force_gap(aff: &AffineData, bounds: &Bounds) -> Result<GapResult> {
    let sol = brute_force_active_set(aff, bounds)?;
    let h = aff.grid().h();
    let grid = *aff.grid();
    let m = aff.m();
    let mut shifted: Vec<f64> = sol.ub.iter().zip(&sol.v).map(|(b, v)| b + v).collect();
    clamp_in_place(&mut shifted, bounds);
    Ok(GapResult {
        gap_norm: weighted_norm(&sol.v, h),
        gap_lower_bound: lower_bound_from_normal(&sol.ua, &sol.v, bounds, h).max(0.0),
        kkt_residual: weighted_dist(&sol.ub, &shifted, h),
        iterations: sol.patterns_checked,
        converged: true,
        stop: StopReason::Converged,
        solver: Solver::Oracle,
        drift: None,
        history: Vec::new(),
        ua: ControlTrajectory::from_raw(grid, m, sol.ua),
        ub: ControlTrajectory::from_raw(grid, m, sol.ub),
        v: ControlTrajectory::from_raw(grid, m, sol.v),
    })
}

/// Unconstrained minimum-energy control of the double integrator on `[0, 1]`,
/// `u(t) = c1 t + c0`, from the two moment conditions
/// `int u = vf - v0` and `int x2 = sf - s0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearControl {
    pub c0: f64,
    pub c1: f64,
}

impl LinearControl {
    pub fn at(&self, t: f64) -> f64 {
        self.c1 * t + self.c0
    }
}

pub fn di_unconstrained_energy(s0: f64, sf: f64, v0: f64, vf: f64) -> LinearControl {
    let dv = vf - v0;
    let c1 = 12.0 * (0.5 * (v0 + vf) - (sf - s0));
    let c0 = dv - 0.5 * c1;
    LinearControl { c0, c1 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::build_affine;
    use crate::model::{builtin_instance, make_lti_system, BoundarySpec};

    fn scalar_affine(steps: usize) -> AffineData {
        let sys = make_lti_system(
            DMatrix::zeros(1, 1),
            DMatrix::from_element(1, 1, 1.0),
            0.0,
            1.0,
        )
        .unwrap();
        let grid = sys.grid(steps).unwrap();
        let bc = BoundarySpec::new(DVector::zeros(1), DVector::from_element(1, 1.0)).unwrap();
        build_affine(&sys, &grid, &bc).unwrap()
    }

    #[test]
    fn patterns_are_lexicographic() {
        assert_eq!(decode(0, 2), vec![Activity::Lower, Activity::Lower]);
        assert_eq!(decode(1, 2), vec![Activity::Lower, Activity::Free]);
        assert_eq!(decode(3, 2), vec![Activity::Free, Activity::Lower]);
        assert_eq!(decode(8, 2), vec![Activity::Upper, Activity::Upper]);
    }

    #[test]
    fn scalar_two_step_regression() {
        let aff = scalar_affine(2);
        let b = Bounds::symmetric(0.3, 1).unwrap();
        let sol = brute_force_active_set(&aff, &b).unwrap();
        assert_eq!(sol.pattern, vec![Activity::Upper, Activity::Upper]);
        for (u, v) in sol.ub.iter().zip(&sol.v) {
            assert!((u - 0.3).abs() < 1e-12);
            assert!((v - 0.7).abs() < 1e-12);
        }
        assert!((sol.objective - 0.245).abs() < 1e-12);
        assert!(sol.complementarity);
    }

    #[test]
    fn feasible_toy_has_zero_gap() {
        let aff = scalar_affine(3);
        let b = Bounds::symmetric(2.0, 1).unwrap();
        let r = brute_force_gap(&aff, &b).unwrap();
        assert!(r.gap_norm < 1e-12);
    }

    #[test]
    fn rejects_large_instances() {
        let aff = scalar_affine(9);
        let b = Bounds::symmetric(2.0, 1).unwrap();
        assert!(matches!(
            brute_force_gap(&aff, &b),
            Err(Error::OracleTooLarge { size: 9, .. })
        ));
    }

    #[test]
    fn unconstrained_energy_examples() {
        let u = di_unconstrained_energy(0.0, 0.0, 1.0, 0.0);
        assert_eq!((u.c1, u.c0), (6.0, -4.0));
        let u = di_unconstrained_energy(0.0, 0.0, 0.0, 0.0);
        assert_eq!((u.c1, u.c0), (0.0, 0.0));
        let u = di_unconstrained_energy(0.0, 1.0, 1.0, 1.0);
        assert_eq!((u.c1, u.c0), (0.0, 0.0));
    }

    #[test]
    fn unconstrained_energy_meets_boundary_by_simulation() {
        let inst = builtin_instance("double_integrator").unwrap();
        let grid = inst.system.grid(20_000).unwrap();
        let lc = di_unconstrained_energy(0.0, 0.0, 1.0, 0.0);
        let u = ControlTrajectory::from_fn(grid, 1, |t, _| lc.at(t + 0.5 * grid.h())).unwrap();
        let xs = crate::discretize::simulate(&inst.system, &grid, &inst.boundary.x0, &u).unwrap();
        let xn = xs.last();
        assert!(xn.norm() < 1e-3, "{xn}");
    }
}
