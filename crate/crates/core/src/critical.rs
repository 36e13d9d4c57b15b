//! Critical bound: the smallest symmetric control bound `a` for which the
//! boundary-value problem admits a feasible control.
//!
//! The gap between the affine set and the box `[-a, a]` is nonincreasing in
//! `a` and vanishes exactly from `a_c` onwards, so `a_c` is found by
//! bracketing and bisection on the gap. For the double integrator on `[0, 1]`
//! the critical control is known in closed form ([`di_critical_analytic`]).

use crate::analyze::{
    default_min_len, default_tau, extract_switchings, SignalKind, SwitchingProfile,
};
use crate::discretize::{build_affine, AffineData, ControlTrajectory};
use crate::error::{Error, Result};
use crate::gapsolve::{solve_gap, GapResult, SolveOptions, Solver, StopReason};
use crate::model::{BoundarySpec, Bounds, Grid, LinearSystem};

#[derive(Debug, Clone)]
pub struct CriticalOptions {
    /// Bisection stops when `a_hi - a_lo <= tol_a * (1 + a_hi)`.
    pub tol_a: f64,
    /// Gap at or below which a probe counts as feasible. Defaults to
    /// `1e-6 * (1 + |xi|)`.
    pub feas_tol: Option<f64>,
    pub a_init: f64,
    /// Options for each gap solve; the decision threshold is filled in.
    pub solve: SolveOptions,
}

impl Default for CriticalOptions {
    fn default() -> Self {
        Self {
            tol_a: 1e-4,
            feas_tol: None,
            a_init: 1.0,
            solve: SolveOptions::with_solver(Solver::Fast),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    pub a: f64,
    pub gap_norm: f64,
    pub gap_lower_bound: f64,
    pub feasible: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct CriticalResult {
    pub a_c: f64,
    /// Box-side control of the converged gap solve at `a_hi`.
    pub u_c: ControlTrajectory,
    pub switch_times: Vec<f64>,
    pub switching: SwitchingProfile,
    pub bracket: (f64, f64),
    pub evaluations: usize,
    pub feas_tol: f64,
    pub probes: Vec<Probe>,
    /// Every probe pair is consistent with a nonincreasing gap.
    pub monotone: bool,
    /// Gap solve at `a_hi`, run to convergence from the feasible probe.
    pub final_gap: GapResult,
}

const EXPANSION_LIMIT: f64 = 1e6;

/// Critical bound for `system` on `grid` with the given boundary states.
pub fn critical_bound(
    system: &LinearSystem,
    grid: &Grid,
    boundary: &BoundarySpec,
    opts: &CriticalOptions,
) -> Result<CriticalResult> {
    let aff = build_affine(system, grid, boundary)?;
    critical_bound_affine(&aff, opts)
}

struct Prober<'a> {
    aff: &'a AffineData,
    opts: &'a CriticalOptions,
    feas_tol: f64,
    probes: Vec<Probe>,
    warm: Option<ControlTrajectory>,
}

impl Prober<'_> {
    fn eval(&mut self, a: f64) -> Result<(bool, GapResult)> {
        let bounds = Bounds::symmetric(a, self.aff.m())?;
        let solve = SolveOptions {
            warm_start: self
                .warm
                .take()
                .or_else(|| self.opts.solve.warm_start.clone()),
            decide_threshold: Some(self.feas_tol),
            ..self.opts.solve.clone()
        };
        let res = solve_gap(self.aff, &bounds, &solve)?;
        let feasible = match res.stop {
            StopReason::Feasible => true,
            StopReason::Separated => false,
            StopReason::Converged => res.gap_norm <= self.feas_tol,
            StopReason::MaxIterations => {
                return Err(Error::ProbeUnconverged {
                    a,
                    iterations: res.iterations,
                })
            }
        };
        log::debug!(
            "probe a = {a:.6e}: gap {:.3e} (lower {:.3e}), {} iterations, {}",
            res.gap_norm,
            res.gap_lower_bound,
            res.iterations,
            if feasible { "feasible" } else { "infeasible" }
        );
        self.probes.push(Probe {
            a,
            gap_norm: res.gap_norm,
            gap_lower_bound: res.gap_lower_bound,
            feasible,
            iterations: res.iterations,
        });
        self.warm = Some(res.ub.clone());
        Ok((feasible, res))
    }
}

/// [`critical_bound`] on prebuilt affine data.
pub fn critical_bound_affine(aff: &AffineData, opts: &CriticalOptions) -> Result<CriticalResult> {
    aff.require_controllable()?;
    if !(opts.a_init > 0.0 && opts.a_init.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "a_init must be positive, got {}",
            opts.a_init
        )));
    }
    if !(opts.tol_a > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tol_a must be positive, got {}",
            opts.tol_a
        )));
    }
    let feas_tol = opts.feas_tol.unwrap_or(1e-6 * (1.0 + aff.xi().norm()));
    if !(feas_tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "feas_tol must be positive, got {feas_tol}"
        )));
    }
    let mut prober = Prober {
        aff,
        opts,
        feas_tol,
        probes: Vec::new(),
        warm: None,
    };

    let (mut lo, mut hi);
    let mut hi_result;
    let (feasible, res) = prober.eval(opts.a_init)?;
    if feasible {
        hi = opts.a_init;
        hi_result = res;
        lo = 0.0;
        let floor = opts.a_init * 1e-12;
        loop {
            let a = hi * 0.5;
            if a < floor {
                break;
            }
            let (feasible, res) = prober.eval(a)?;
            if feasible {
                hi = a;
                hi_result = res;
            } else {
                lo = a;
                break;
            }
        }
    } else {
        lo = opts.a_init;
        let limit = opts.a_init * EXPANSION_LIMIT;
        loop {
            let a = lo * 2.0;
            if a > limit {
                return Err(Error::UnboundedBracket { limit });
            }
            let (feasible, res) = prober.eval(a)?;
            if feasible {
                hi = a;
                hi_result = res;
                break;
            }
            lo = a;
        }
    }

    while hi - lo > opts.tol_a * (1.0 + hi) {
        let mid = 0.5 * (lo + hi);
        let (feasible, res) = prober.eval(mid)?;
        if feasible {
            hi = mid;
            hi_result = res;
        } else {
            lo = mid;
        }
    }

    let monotone = probes_monotone(&prober.probes, feas_tol);
    if !monotone {
        log::warn!("probe history is not consistent with a nonincreasing gap");
    }
    let polish = SolveOptions {
        warm_start: Some(hi_result.ub.clone()),
        decide_threshold: None,
        ..opts.solve.clone()
    };
    let final_gap = solve_gap(aff, &Bounds::symmetric(hi, aff.m())?, &polish)?;
    if !final_gap.converged {
        log::warn!(
            "gap solve at a = {hi:.6e} stopped after {} iterations",
            final_gap.iterations
        );
    }
    let u_c = final_gap.ub.clone();
    let switching = extract_switchings(
        &u_c,
        SignalKind::Control,
        default_tau(&u_c),
        default_min_len(aff.grid()),
    )?;
    Ok(CriticalResult {
        a_c: hi,
        switch_times: switching.all_times(),
        switching,
        u_c,
        bracket: (lo, hi),
        evaluations: prober.probes.len(),
        feas_tol,
        monotone,
        final_gap,
        probes: prober.probes,
    })
}

/// For `a < a'` the certified lower bound at `a'` may not exceed the gap
/// found at `a`, and feasibility may not be lost when `a` grows.
pub fn probes_monotone(probes: &[Probe], feas_tol: f64) -> bool {
    let slack = 1e-9 * (1.0 + feas_tol);
    probes.iter().all(|p| {
        probes
            .iter()
            .filter(|q| q.a > p.a)
            .all(|q| q.gap_lower_bound <= p.gap_norm + slack && !(p.feasible && !q.feasible))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiCase {
    /// `v0 != vf`: switching time from a quadratic.
    AI,
    /// `v0 == vf`: switch at the midpoint.
    AII,
    /// `sf - s0 = (v0 + vf) / 2`: constant control, no switch.
    B,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiCriticalSolution {
    pub case_tag: DiCase,
    pub a_c: f64,
    pub t_c: f64,
    /// Signed level: the control is `r` before `t_c` and `-r` after.
    pub r: f64,
    pub u_before: f64,
    pub u_after: f64,
    /// Case AI with two verified roots: the other `(t_c, r)`.
    pub alternative: Option<(f64, f64)>,
}

impl DiCriticalSolution {
    pub fn at(&self, t: f64) -> f64 {
        if t < self.t_c {
            self.u_before
        } else {
            self.u_after
        }
    }

    /// Samples the control at the left node of each interval of `grid`.
    pub fn sample(&self, grid: Grid) -> Result<ControlTrajectory> {
        ControlTrajectory::from_fn(grid, 1, |t, _| self.at(t))
    }
}

/// Terminal state `(x1(1), x2(1))` of the double integrator on `[0, 1]` under
/// `r` on `[0, tc)` and `-r` on `[tc, 1]`, integrated exactly.
fn two_piece_terminal(s0: f64, v0: f64, r: f64, tc: f64) -> (f64, f64) {
    let x2c = v0 + r * tc;
    let x1c = s0 + v0 * tc + 0.5 * r * tc * tc;
    let rest = 1.0 - tc;
    (x1c + x2c * rest - 0.5 * r * rest * rest, x2c - r * rest)
}

/// Closed-form critical bound and control of the double integrator on
/// `[0, 1]` from `x(0) = (s0, v0)` to `x(1) = (sf, vf)`.
pub fn di_critical_analytic(s0: f64, sf: f64, v0: f64, vf: f64) -> Result<DiCriticalSolution> {
    if ![s0, sf, v0, vf].iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("boundary data"));
    }
    let ds = sf - s0;
    let dv = vf - v0;
    let scale = 1.0 + s0.abs() + sf.abs() + v0.abs() + vf.abs();
    let degenerate = 1e-12 * scale;
    if (ds - 0.5 * (v0 + vf)).abs() <= degenerate {
        // t_c = 1 branch; the t_c = 0 branch has r = v0 - vf and the same control.
        return Ok(DiCriticalSolution {
            case_tag: DiCase::B,
            a_c: dv.abs(),
            t_c: 1.0,
            r: dv,
            u_before: dv,
            u_after: dv,
            alternative: Some((0.0, -dv)),
        });
    }
    if dv.abs() <= degenerate {
        let r = 4.0 * (ds - v0);
        return Ok(DiCriticalSolution {
            case_tag: DiCase::AII,
            a_c: r.abs(),
            t_c: 0.5,
            r,
            u_before: r,
            u_after: -r,
            alternative: None,
        });
    }

    // dv t^2 + 2 (ds - vf) t + (v0 + vf)/2 - ds = 0
    let qa = dv;
    let qb = 2.0 * (ds - vf);
    let qc = 0.5 * (v0 + vf) - ds;
    let disc = qb * qb - 4.0 * qa * qc;
    if disc < 0.0 {
        return Err(Error::PreconditionViolated(format!(
            "switching-time quadratic has no real root (discriminant {disc:e})"
        )));
    }
    let sq = disc.sqrt();
    let q = -0.5 * (qb + if qb >= 0.0 { sq } else { -sq });
    let mut roots = Vec::with_capacity(2);
    if q != 0.0 {
        roots.push(q / qa);
        roots.push(qc / q);
    } else {
        roots.push(0.0);
    }
    let tol = 1e-9 * scale;
    let mut verified: Vec<(f64, f64)> = roots
        .into_iter()
        .filter(|t| *t > 0.0 && *t < 1.0 && (2.0 * t - 1.0).abs() > 1e-12)
        .map(|t| (t, dv / (2.0 * t - 1.0)))
        .filter(|(t, r)| {
            let (x1, x2) = two_piece_terminal(s0, v0, *r, *t);
            (x1 - sf).abs() <= tol * (1.0 + r.abs()) && (x2 - vf).abs() <= tol * (1.0 + r.abs())
        })
        .collect();
    verified.sort_by(|a, b| a.1.abs().total_cmp(&b.1.abs()));
    verified.dedup_by(|a, b| (a.0 - b.0).abs() <= 1e-14);
    let Some(&(t_c, r)) = verified.first() else {
        return Err(Error::PreconditionViolated(
            "no root of the switching-time quadratic in (0, 1) reproduces the boundary data".into(),
        ));
    };
    Ok(DiCriticalSolution {
        case_tag: DiCase::AI,
        a_c: r.abs(),
        t_c,
        r,
        u_before: r,
        u_after: -r,
        alternative: verified.get(1).copied(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::simulate;
    use crate::model::builtin_instance;
    use nalgebra::DVector;
    use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};

    #[test]
    fn classic_instance_closed_form() {
        let sol = di_critical_analytic(0.0, 0.0, 1.0, 0.0).unwrap();
        assert_eq!(sol.case_tag, DiCase::AI);
        assert!((sol.t_c - FRAC_1_SQRT_2).abs() <= 2.0 * f64::EPSILON);
        assert!((sol.a_c - (1.0 + SQRT_2)).abs() <= 8.0 * f64::EPSILON);
        assert!(sol.u_before < 0.0 && sol.u_after > 0.0);
        assert_eq!(sol.a_c, sol.r.abs());
    }

    #[test]
    fn midpoint_case() {
        let sol = di_critical_analytic(0.0, 1.0, 0.0, 0.0).unwrap();
        assert_eq!(sol.case_tag, DiCase::AII);
        assert_eq!((sol.r, sol.t_c), (4.0, 0.5));
    }

    #[test]
    fn constant_control_case() {
        let sol = di_critical_analytic(0.0, 0.5, 0.0, 1.0).unwrap();
        assert_eq!(sol.case_tag, DiCase::B);
        assert_eq!(sol.a_c, 1.0);
        assert_eq!((sol.u_before, sol.u_after), (1.0, 1.0));
    }

    #[test]
    fn analytic_control_meets_boundary() {
        let inst = builtin_instance("double_integrator").unwrap();
        let grid = inst.system.grid(4000).unwrap();
        let h = grid.h();
        for (s0, sf, v0, vf) in [
            (0.0, 0.0, 1.0, 0.0),
            (0.2, -0.3, 0.5, -0.7),
            (0.0, 1.0, 0.0, 0.0),
            (0.0, 0.5, 0.0, 1.0),
        ] {
            let sol = di_critical_analytic(s0, sf, v0, vf).unwrap();
            let u = sol.sample(grid).unwrap();
            let x0 = DVector::from_vec(vec![s0, v0]);
            let xs = simulate(&inst.system, &grid, &x0, &u).unwrap();
            let xf = DVector::from_vec(vec![sf, vf]);
            assert!(
                (xs.last() - &xf).norm() <= 10.0 * h * (1.0 + xf.norm()),
                "{:?}",
                (s0, sf, v0, vf)
            );
        }
    }

    #[test]
    fn monotonicity_check_flags_inconsistency() {
        let p = |a, gap, lb, feasible| Probe {
            a,
            gap_norm: gap,
            gap_lower_bound: lb,
            feasible,
            iterations: 1,
        };
        assert!(probes_monotone(
            &[p(1.0, 0.5, 0.5, false), p(2.0, 0.0, 0.0, true)],
            1e-6
        ));
        assert!(!probes_monotone(
            &[p(1.0, 0.1, 0.1, false), p(2.0, 0.3, 0.3, false)],
            1e-6
        ));
        assert!(!probes_monotone(
            &[p(1.0, 0.0, 0.0, true), p(2.0, 0.3, 0.3, false)],
            1e-6
        ));
    }

    #[test]
    fn small_grid_critical_bound_brackets() {
        let inst = builtin_instance("double_integrator").unwrap();
        let grid = inst.system.grid(500).unwrap();
        let res = critical_bound(
            &inst.system,
            &grid,
            &inst.boundary,
            &CriticalOptions::default(),
        )
        .unwrap();
        assert!(res.bracket.0 <= res.a_c && res.a_c == res.bracket.1);
        assert!(res.bracket.1 - res.bracket.0 <= 1e-4 * (1.0 + res.a_c));
        assert!(res.monotone);
        assert!((res.a_c - (1.0 + SQRT_2)).abs() < 0.02);
        assert_eq!(res.switch_times.len(), 1);
        let lo = res.probes.iter().find(|p| p.a == res.bracket.0).unwrap();
        assert!(!lo.feasible && lo.gap_norm > res.feas_tol);
    }

    #[test]
    fn already_feasible_boundary_gives_tiny_bound() {
        let inst = builtin_instance("double_integrator").unwrap();
        let grid = inst.system.grid(50).unwrap();
        let bc = crate::model::BoundarySpec::new(DVector::zeros(2), DVector::zeros(2)).unwrap();
        let res = critical_bound(&inst.system, &grid, &bc, &CriticalOptions::default()).unwrap();
        assert!(res.a_c < 1e-11);
    }
}
