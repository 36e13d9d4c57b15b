//! Projections onto the box of admissible controls and onto the affine set of
//! controls that meet the boundary conditions, plus Dykstra's method for the
//! nearest point of their intersection.

use nalgebra::DVector;

use crate::discretize::{weighted_dist, weighted_norm, AffineData, ControlTrajectory};
use crate::error::{Error, Result};
use crate::model::Bounds;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ProjectionStats {
    /// h-weighted distance between the input and the returned point.
    pub input_distance: f64,
    /// h-weighted distance from the returned point to the affine set.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub(crate) fn clamp_in_place(u: &mut [f64], bounds: &Bounds) {
    match bounds {
        Bounds::Symmetric { a, .. } => {
            let a = *a;
            for x in u.iter_mut() {
                *x = x.clamp(-a, a);
            }
        }
        Bounds::Sampled { lower, upper, .. } => {
            for ((x, l), h) in u.iter_mut().zip(lower).zip(upper) {
                *x = x.clamp(*l, *h);
            }
        }
    }
}

/// Writes `P_A(src)` into `dst`: `src - G^T (G G^T)^{-1} (G src - xi)`.
pub(crate) fn affine_project_into(aff: &AffineData, src: &[f64], dst: &mut [f64]) -> Result<()> {
    let r = aff.residual(src);
    let mu = aff.gram_solve(&r)?;
    aff.apply_gt(&mu, dst);
    for (d, s) in dst.iter_mut().zip(src) {
        *d = s - *d;
    }
    Ok(())
}

pub(crate) fn affine_distance(aff: &AffineData, u: &[f64]) -> Result<f64> {
    let mut p = vec![0.0; u.len()];
    affine_project_into(aff, u, &mut p)?;
    Ok(weighted_dist(u, &p, aff.grid().h()))
}

fn check_control(u: &ControlTrajectory, aff: &AffineData) -> Result<()> {
    if u.channels() != aff.m() {
        return Err(Error::DimensionMismatch {
            what: "control channels",
            expected: aff.m(),
            actual: u.channels(),
        });
    }
    if u.steps() != aff.grid().steps() {
        return Err(Error::DimensionMismatch {
            what: "control rows",
            expected: aff.grid().steps(),
            actual: u.steps(),
        });
    }
    Ok(())
}

/// Clamps every entry to its bound interval.
pub fn project_box(u: &ControlTrajectory, bounds: &Bounds) -> Result<ControlTrajectory> {
    bounds.check_shape(u.steps(), u.channels())?;
    let mut out = u.as_slice().to_vec();
    clamp_in_place(&mut out, bounds);
    Ok(ControlTrajectory::from_raw(*u.grid(), u.channels(), out))
}

/// Nearest control satisfying `G u = xi`.
pub fn project_affine(u: &ControlTrajectory, aff: &AffineData) -> Result<ControlTrajectory> {
    Ok(project_affine_with_stats(u, aff)?.0)
}

pub fn project_affine_with_stats(
    u: &ControlTrajectory,
    aff: &AffineData,
) -> Result<(ControlTrajectory, ProjectionStats)> {
    check_control(u, aff)?;
    let mut out = vec![0.0; u.as_slice().len()];
    affine_project_into(aff, u.as_slice(), &mut out)?;
    let h = aff.grid().h();
    let stats = ProjectionStats {
        input_distance: weighted_dist(u.as_slice(), &out, h),
        residual: aff.residual(&out).norm(),
        iterations: 1,
        converged: true,
    };
    Ok((
        ControlTrajectory::from_raw(*u.grid(), u.channels(), out),
        stats,
    ))
}

/// Dykstra's alternating projections from `start` onto the intersection of
/// the affine set and the box. Converges to the nearest point of the
/// intersection when it is nonempty.
pub fn dykstra_project(
    start: &ControlTrajectory,
    aff: &AffineData,
    bounds: &Bounds,
    tol: f64,
    max_iter: usize,
) -> Result<(ControlTrajectory, ProjectionStats)> {
    check_control(start, aff)?;
    bounds.check_shape(start.steps(), start.channels())?;
    aff.require_controllable()?;
    if !(tol > 0.0) || max_iter == 0 {
        return Err(Error::InvalidArgument(
            "Dykstra needs tol > 0 and max_iter >= 1".into(),
        ));
    }
    let h = aff.grid().h();
    let len = start.as_slice().len();
    let mut x = start.as_slice().to_vec();
    let mut p = vec![0.0; len];
    let mut q = vec![0.0; len];
    let mut y = vec![0.0; len];
    let mut buf = vec![0.0; len];

    let mut scale_probe = vec![0.0; len];
    affine_project_into(aff, &x, &mut scale_probe)?;
    let limit = 1e6 * (aff.xi().norm() + weighted_norm(&scale_probe, h)).max(f64::MIN_POSITIVE);

    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        for ((b, xi), pi) in buf.iter_mut().zip(&x).zip(&p) {
            *b = xi + pi;
        }
        affine_project_into(aff, &buf, &mut y)?;
        for ((pi, b), yi) in p.iter_mut().zip(&buf).zip(&y) {
            *pi = b - yi;
        }
        for ((b, yi), qi) in buf.iter_mut().zip(&y).zip(&q) {
            *b = yi + qi;
        }
        let mut change = 0.0;
        let mut next = buf.clone();
        clamp_in_place(&mut next, bounds);
        for (((qi, b), nx), xi) in q.iter_mut().zip(&buf).zip(&next).zip(&x) {
            *qi = b - nx;
            change += (nx - xi) * (nx - xi);
        }
        x = next;
        let correction = weighted_norm(&p, h).max(weighted_norm(&q, h));
        if !correction.is_finite() || correction > limit {
            return Err(Error::LikelyInfeasible {
                correction_norm: correction,
                limit,
            });
        }
        if (h * change).sqrt() <= tol {
            converged = true;
            break;
        }
    }
    let residual = affine_distance(aff, &x)?;
    let stats = ProjectionStats {
        input_distance: weighted_dist(start.as_slice(), &x, h),
        residual,
        iterations,
        converged,
    };
    Ok((
        ControlTrajectory::from_raw(*start.grid(), start.channels(), x),
        stats,
    ))
}

/// Minimum-norm feasible control: Dykstra started from the zero control.
pub fn dykstra_min_energy(
    aff: &AffineData,
    bounds: &Bounds,
    tol: f64,
    max_iter: usize,
) -> Result<(ControlTrajectory, ProjectionStats)> {
    let zero = ControlTrajectory::zeros(*aff.grid(), aff.m());
    dykstra_project(&zero, aff, bounds, tol, max_iter)
}

/// Least-squares multiplier `mu` with `G^T mu` closest to `v`.
pub(crate) fn range_multiplier(aff: &AffineData, v: &[f64]) -> Result<DVector<f64>> {
    aff.gram_solve(&aff.apply_g(v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::build_affine;
    use crate::model::{builtin_instance, make_lti_system, BoundarySpec, Grid};
    use nalgebra::DMatrix;

    #[test]
    fn box_clamps_and_is_idempotent() {
        let grid = Grid::new(0.0, 1.0, 2).unwrap();
        let u = ControlTrajectory::new(grid, 1, vec![3.0, -2.0]).unwrap();
        let b = Bounds::symmetric(1.0, 1).unwrap();
        let p = project_box(&u, &b).unwrap();
        assert_eq!(p.as_slice(), &[1.0, -1.0]);
        assert_eq!(project_box(&p, &b).unwrap(), p);
    }

    #[test]
    fn box_with_time_varying_bounds() {
        let grid = Grid::new(0.0, 1.0, 4).unwrap();
        let b = Bounds::from_fn(&grid, 1, |t, _| (-t - 1e-3, t + 1e-3)).unwrap();
        // strict bounds need a tiny margin at t = 0
        let u = ControlTrajectory::constant(grid, 1, 1.0);
        let p = project_box(&u, &b).unwrap();
        for k in 0..4 {
            assert!((p.value(k, 0) - (grid.node(k) + 1e-3)).abs() < 1e-15);
        }
    }

    #[test]
    fn scalar_least_norm_correction() {
        let sys = make_lti_system(
            DMatrix::zeros(1, 1),
            DMatrix::from_element(1, 1, 1.0),
            0.0,
            1.0,
        )
        .unwrap();
        let grid = sys.grid(4).unwrap();
        let bc = BoundarySpec::new(DVector::zeros(1), DVector::from_element(1, 1.0)).unwrap();
        let aff = build_affine(&sys, &grid, &bc).unwrap();
        let out = project_affine(&ControlTrajectory::zeros(grid, 1), &aff).unwrap();
        for v in out.as_slice() {
            assert!((v - 1.0).abs() < 1e-14);
        }
        let again = project_affine(&out, &aff).unwrap();
        for (a, b) in again.as_slice().iter().zip(out.as_slice()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn affine_projection_on_singular_grid_errors() {
        let inst = builtin_instance("double_integrator").unwrap();
        let grid = inst.system.grid(1).unwrap();
        let aff = build_affine(&inst.system, &grid, &inst.boundary).unwrap();
        let err = project_affine(&ControlTrajectory::zeros(grid, 1), &aff).unwrap_err();
        assert!(matches!(err, Error::Uncontrollable { .. }));
    }

    #[test]
    fn dykstra_with_huge_box_matches_affine_projection() {
        let inst = builtin_instance("double_integrator").unwrap();
        let grid = inst.system.grid(200).unwrap();
        let aff = build_affine(&inst.system, &grid, &inst.boundary).unwrap();
        let b = Bounds::symmetric(1e9, 1).unwrap();
        let (u, stats) = dykstra_min_energy(&aff, &b, 1e-12, 100).unwrap();
        assert!(stats.converged);
        let pa = project_affine(&ControlTrajectory::zeros(grid, 1), &aff).unwrap();
        for (x, y) in u.as_slice().iter().zip(pa.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn dykstra_flags_infeasible_or_unconverged() {
        let inst = builtin_instance("double_integrator").unwrap();
        let grid = inst.system.grid(50).unwrap();
        let aff = build_affine(&inst.system, &grid, &inst.boundary).unwrap();
        let b = Bounds::symmetric(0.5, 1).unwrap();
        match dykstra_min_energy(&aff, &b, 1e-12, 2000) {
            Err(Error::LikelyInfeasible { .. }) => {}
            Ok((_, stats)) => {
                assert!(!stats.converged || stats.residual > 1e-3);
            }
            Err(e) => panic!("unexpected error {e}"),
        }
    }
}
