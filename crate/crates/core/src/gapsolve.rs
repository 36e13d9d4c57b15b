//! Best-approximation pair between the affine set `A = {u : G u = xi}` and the
//! control box `B`.
//!
//! All three solvers return a pair `(uA, uB)` with `uB` exactly inside the box,
//! `uA = P_A(uB)` and gap vector `v = uA - uB`. The gap vector is unique even
//! when `uB` is not, so stopping is based on the change in `v`.

use std::fmt;

use crate::discretize::{weighted_dist, weighted_norm, AffineData, ControlTrajectory};
use crate::error::{Error, Result};
use crate::model::Bounds;
use crate::project::{affine_project_into, clamp_in_place};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Solver {
    /// Alternating projections.
    #[default]
    Map,
    /// Douglas-Rachford splitting on the pair (box, affine).
    Dr,
    /// Projected gradient with Nesterov momentum and function-value restart.
    Fast,
    /// Exhaustive active-set enumeration; tiny instances only.
    Oracle,
}

impl Solver {
    pub fn name(&self) -> &'static str {
        match self {
            Solver::Map => "map",
            Solver::Dr => "dr",
            Solver::Fast => "fast",
            Solver::Oracle => "oracle",
        }
    }
}

impl fmt::Display for Solver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Solver {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "map" => Ok(Solver::Map),
            "dr" => Ok(Solver::Dr),
            "fast" => Ok(Solver::Fast),
            other => Err(Error::InvalidArgument(format!("unknown solver `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    /// Stop once successive gap vectors differ by at most this (h-weighted).
    pub tol: f64,
    pub max_iter: usize,
    pub solver: Solver,
    pub warm_start: Option<ControlTrajectory>,
    /// Momentum multiplier for [`Solver::Fast`]; `0` reduces it to MAP.
    pub momentum: f64,
    /// When set, stop as soon as the pair proves `gap <= threshold` or a
    /// separating hyperplane proves `gap > threshold`.
    pub decide_threshold: Option<f64>,
    /// Record the gap norm after every iteration.
    pub record_history: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 2_000_000,
            solver: Solver::Map,
            warm_start: None,
            momentum: 1.0,
            decide_threshold: None,
            record_history: false,
        }
    }
}

impl SolveOptions {
    pub fn with_solver(solver: Solver) -> Self {
        Self {
            solver,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
        }
        if !(self.momentum >= 0.0 && self.momentum <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "momentum must lie in [0, 1], got {}",
                self.momentum
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// Successive gap vectors agreed to within `tol`.
    Converged,
    /// The gap dropped to the decision threshold.
    Feasible,
    /// A separating hyperplane certified a gap above the decision threshold.
    Separated,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct GapResult {
    pub ua: ControlTrajectory,
    pub ub: ControlTrajectory,
    pub v: ControlTrajectory,
    pub gap_norm: f64,
    /// Certified lower bound on the distance between the two sets.
    pub gap_lower_bound: f64,
    pub iterations: usize,
    pub converged: bool,
    pub stop: StopReason,
    pub solver: Solver,
    /// Projected-gradient fixed-point residual `|uB - P_B(uB + v)|`.
    pub kkt_residual: f64,
    /// Douglas-Rachford only: length of the last governing-sequence step.
    pub drift: Option<f64>,
    pub history: Vec<f64>,
}

/// Dispatches on `opts.solver`.
pub fn solve_gap(aff: &AffineData, bounds: &Bounds, opts: &SolveOptions) -> Result<GapResult> {
    match opts.solver {
        Solver::Map => solve_gap_map(aff, bounds, opts),
        Solver::Dr => solve_gap_dr(aff, bounds, opts),
        Solver::Fast => solve_gap_fast(aff, bounds, opts),
        Solver::Oracle => crate::oracle::brute_force_gap(aff, bounds),
    }
}

struct Workspace<'a> {
    aff: &'a AffineData,
    bounds: &'a Bounds,
    h: f64,
}

impl<'a> Workspace<'a> {
    fn new(aff: &'a AffineData, bounds: &'a Bounds, opts: &SolveOptions) -> Result<Self> {
        opts.validate()?;
        aff.require_controllable()?;
        bounds.check_shape(aff.grid().steps(), aff.m())?;
        if let Some(ws) = &opts.warm_start {
            if ws.as_slice().len() != aff.coords() || ws.channels() != aff.m() {
                return Err(Error::DimensionMismatch {
                    what: "warm start",
                    expected: aff.coords(),
                    actual: ws.as_slice().len(),
                });
            }
        }
        Ok(Self {
            aff,
            bounds,
            h: aff.grid().h(),
        })
    }

    fn initial(&self, opts: &SolveOptions) -> Vec<f64> {
        opts.warm_start
            .as_ref()
            .map(|w| w.as_slice().to_vec())
            .unwrap_or_else(|| vec![0.0; self.aff.coords()])
    }

    fn project_affine(&self, src: &[f64], dst: &mut [f64]) -> Result<()> {
        affine_project_into(self.aff, src, dst)
    }

    /// Lower bound on dist(A, B) from the hyperplane with normal `v`, where
    /// `ua` lies in A.
    fn separation(&self, ua: &[f64], v: &[f64]) -> f64 {
        lower_bound_from_normal(ua, v, self.bounds, self.h)
    }

    fn finish(
        &self,
        ub: Vec<f64>,
        solver: Solver,
        iterations: usize,
        stop: StopReason,
        drift: Option<f64>,
        history: Vec<f64>,
    ) -> Result<GapResult> {
        let mut ua = vec![0.0; ub.len()];
        self.project_affine(&ub, &mut ua)?;
        let v: Vec<f64> = ua.iter().zip(&ub).map(|(a, b)| a - b).collect();
        let gap_norm = weighted_norm(&v, self.h);
        let gap_lower_bound = self.separation(&ua, &v).max(0.0);
        let mut shifted: Vec<f64> = ub.iter().zip(&v).map(|(b, vi)| b + vi).collect();
        clamp_in_place(&mut shifted, self.bounds);
        let kkt_residual = weighted_dist(&ub, &shifted, self.h);
        let grid = *self.aff.grid();
        let m = self.aff.m();
        Ok(GapResult {
            ua: ControlTrajectory::from_raw(grid, m, ua),
            ub: ControlTrajectory::from_raw(grid, m, ub),
            v: ControlTrajectory::from_raw(grid, m, v),
            gap_norm,
            gap_lower_bound,
            iterations,
            converged: stop != StopReason::MaxIterations,
            stop,
            solver,
            kkt_residual,
            drift,
            history,
        })
    }
}

pub(crate) fn lower_bound_from_normal(ua: &[f64], v: &[f64], bounds: &Bounds, h: f64) -> f64 {
    let norm = weighted_norm(v, h);
    if norm == 0.0 {
        return 0.0;
    }
    let mut inner = 0.0;
    let mut support = 0.0;
    for (j, (a, vi)) in ua.iter().zip(v).enumerate() {
        inner += vi * a;
        let (lo, hi) = bounds.interval(j);
        support += (vi * hi).max(vi * lo);
    }
    h * (inner - support) / norm
}

const LOG_EVERY: usize = 100_000;
const SEPARATION_EVERY: usize = 8;

fn decide(
    threshold: Option<f64>,
    gap: f64,
    lower: impl FnOnce() -> f64,
    it: usize,
) -> Option<StopReason> {
    let thr = threshold?;
    if gap <= thr {
        return Some(StopReason::Feasible);
    }
    if it.is_multiple_of(SEPARATION_EVERY) && lower() > thr {
        return Some(StopReason::Separated);
    }
    None
}

/// Method of alternating projections: `uB <- P_B(P_A(uB))`.
pub fn solve_gap_map(aff: &AffineData, bounds: &Bounds, opts: &SolveOptions) -> Result<GapResult> {
    let ws = Workspace::new(aff, bounds, opts)?;
    let h = ws.h;
    let mut ub = ws.initial(opts);
    clamp_in_place(&mut ub, bounds);
    let mut ua = vec![0.0; ub.len()];
    ws.project_affine(&ub, &mut ua)?;
    let mut v: Vec<f64> = ua.iter().zip(&ub).map(|(a, b)| a - b).collect();
    let mut history = Vec::new();
    if opts.record_history {
        history.push(weighted_norm(&v, h));
    }

    let mut stop = StopReason::MaxIterations;
    let mut iterations = 0;
    let mut next_ua = vec![0.0; ub.len()];
    while iterations < opts.max_iter {
        if let Some(reason) = decide(
            opts.decide_threshold,
            weighted_norm(&v, h),
            || ws.separation(&ua, &v),
            iterations,
        ) {
            stop = reason;
            break;
        }
        iterations += 1;
        ub.copy_from_slice(&ua);
        clamp_in_place(&mut ub, bounds);
        ws.project_affine(&ub, &mut next_ua)?;
        let mut change = 0.0;
        for ((vi, a), b) in v.iter_mut().zip(&next_ua).zip(&ub) {
            let nv = a - b;
            change += (nv - *vi) * (nv - *vi);
            *vi = nv;
        }
        std::mem::swap(&mut ua, &mut next_ua);
        if opts.record_history {
            history.push(weighted_norm(&v, h));
        }
        if iterations % LOG_EVERY == 0 {
            log::debug!(
                "map iteration {iterations}: gap {:.3e}",
                weighted_norm(&v, h)
            );
        }
        if (h * change).sqrt() <= opts.tol {
            stop = StopReason::Converged;
            break;
        }
    }
    ws.finish(ub, Solver::Map, iterations, stop, None, history)
}

/// Douglas-Rachford: `z <- z + P_A(2 P_B(z) - z) - P_B(z)`. The returned pair
/// is built from the shadow `uB = P_B(z)`.
pub fn solve_gap_dr(aff: &AffineData, bounds: &Bounds, opts: &SolveOptions) -> Result<GapResult> {
    let ws = Workspace::new(aff, bounds, opts)?;
    let h = ws.h;
    let len = aff.coords();
    let mut z = ws.initial(opts);
    let mut b = vec![0.0; len];
    let mut r = vec![0.0; len];
    let mut a = vec![0.0; len];
    let mut v_prev: Option<Vec<f64>> = None;
    let mut history = Vec::new();
    let mut stop = StopReason::MaxIterations;
    let mut iterations = 0;
    let mut drift = 0.0;
    let mut shadow_a = vec![0.0; len];

    while iterations < opts.max_iter {
        iterations += 1;
        b.copy_from_slice(&z);
        clamp_in_place(&mut b, bounds);
        for ((ri, bi), zi) in r.iter_mut().zip(&b).zip(&z) {
            *ri = 2.0 * bi - zi;
        }
        ws.project_affine(&r, &mut a)?;
        let mut change = 0.0;
        let mut step = 0.0;
        let v_now = v_prev.get_or_insert_with(|| vec![f64::INFINITY; len]);
        for (((zi, ai), bi), vi) in z.iter_mut().zip(&a).zip(&b).zip(v_now.iter_mut()) {
            let nv = ai - bi;
            let d = nv - *vi;
            change += d * d;
            step += nv * nv;
            *vi = nv;
            *zi += nv;
        }
        drift = (h * step).sqrt();
        if opts.record_history {
            history.push(drift);
        }
        if iterations % LOG_EVERY == 0 {
            log::debug!("dr iteration {iterations}: drift {drift:.3e}");
        }
        if (h * change).sqrt() <= opts.tol {
            stop = StopReason::Converged;
            break;
        }
        if opts.decide_threshold.is_some() && iterations % SEPARATION_EVERY == 0 {
            b.copy_from_slice(&z);
            clamp_in_place(&mut b, bounds);
            ws.project_affine(&b, &mut shadow_a)?;
            let sv: Vec<f64> = shadow_a.iter().zip(&b).map(|(x, y)| x - y).collect();
            let gap = weighted_norm(&sv, h);
            if let Some(reason) = decide(
                opts.decide_threshold,
                gap,
                || ws.separation(&shadow_a, &sv),
                0,
            ) {
                stop = reason;
                break;
            }
        }
    }
    let mut ub = z;
    clamp_in_place(&mut ub, bounds);
    ws.finish(ub, Solver::Dr, iterations, stop, Some(drift), history)
}

/// Accelerated projected gradient on `q(uB) = 1/2 dist(uB, A)^2` over the box.
///
/// The gradient of `q` is `uB - P_A(uB)` with Lipschitz constant 1, so a unit
/// step reproduces MAP. Because `P_A` is affine, the projection of the
/// extrapolated point is the same extrapolation of already-projected iterates
/// and costs no extra solve.
pub fn solve_gap_fast(aff: &AffineData, bounds: &Bounds, opts: &SolveOptions) -> Result<GapResult> {
    let ws = Workspace::new(aff, bounds, opts)?;
    let h = ws.h;
    let len = aff.coords();
    let mut x = ws.initial(opts);
    clamp_in_place(&mut x, bounds);
    let mut ax = vec![0.0; len];
    ws.project_affine(&x, &mut ax)?;
    let mut ax_prev = ax.clone();
    let mut v: Vec<f64> = ax.iter().zip(&x).map(|(a, b)| a - b).collect();
    let mut q = 0.5 * h * v.iter().map(|t| t * t).sum::<f64>();
    let mut t = 1.0_f64;
    let mut history = Vec::new();
    if opts.record_history {
        history.push((2.0 * q).sqrt());
    }

    let mut x_new = vec![0.0; len];
    let mut ax_new = vec![0.0; len];
    let mut stop = StopReason::MaxIterations;
    let mut iterations = 0;
    let mut restarts = 0usize;
    while iterations < opts.max_iter {
        if let Some(reason) = decide(
            opts.decide_threshold,
            (2.0 * q).sqrt(),
            || ws.separation(&ax, &v),
            iterations,
        ) {
            stop = reason;
            break;
        }
        iterations += 1;
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = opts.momentum * (t - 1.0) / t_next;
        for ((xn, a), ap) in x_new.iter_mut().zip(&ax).zip(&ax_prev) {
            *xn = a + beta * (a - ap);
        }
        clamp_in_place(&mut x_new, bounds);
        ws.project_affine(&x_new, &mut ax_new)?;
        let mut q_new = 0.5
            * h
            * ax_new
                .iter()
                .zip(&x_new)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
        let mut t_after = t_next;
        if q_new > q {
            restarts += 1;
            t_after = 1.0;
            if beta != 0.0 {
                x_new.copy_from_slice(&ax);
                clamp_in_place(&mut x_new, bounds);
                ws.project_affine(&x_new, &mut ax_new)?;
                q_new = 0.5
                    * h
                    * ax_new
                        .iter()
                        .zip(&x_new)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>();
            }
        }
        let mut change = 0.0;
        for ((vi, a), b) in v.iter_mut().zip(&ax_new).zip(&x_new) {
            let nv = a - b;
            change += (nv - *vi) * (nv - *vi);
            *vi = nv;
        }
        std::mem::swap(&mut ax_prev, &mut ax);
        std::mem::swap(&mut ax, &mut ax_new);
        std::mem::swap(&mut x, &mut x_new);
        q = q_new;
        t = t_after;
        if opts.record_history {
            history.push((2.0 * q).sqrt());
        }
        if iterations % LOG_EVERY == 0 {
            log::debug!(
                "fast iteration {iterations}: gap {:.3e}, {restarts} restarts",
                (2.0 * q).sqrt()
            );
        }
        if (h * change).sqrt() <= opts.tol {
            stop = StopReason::Converged;
            break;
        }
    }
    ws.finish(x, Solver::Fast, iterations, stop, None, history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::build_affine;
    use crate::model::{builtin_instance, make_lti_system, BoundarySpec};
    use nalgebra::{DMatrix, DVector};

    fn di_affine(steps: usize) -> AffineData {
        let inst = builtin_instance("double_integrator").unwrap();
        let grid = inst.system.grid(steps).unwrap();
        build_affine(&inst.system, &grid, &inst.boundary).unwrap()
    }

    #[test]
    fn scalar_gap_is_constant_shortfall() {
        let sys = make_lti_system(
            DMatrix::zeros(1, 1),
            DMatrix::from_element(1, 1, 1.0),
            0.0,
            1.0,
        )
        .unwrap();
        let grid = sys.grid(3).unwrap();
        let bc = BoundarySpec::new(DVector::zeros(1), DVector::from_element(1, 1.0)).unwrap();
        let aff = build_affine(&sys, &grid, &bc).unwrap();
        let bounds = Bounds::symmetric(0.1, 1).unwrap();
        for solver in [Solver::Map, Solver::Dr, Solver::Fast] {
            let res = solve_gap(&aff, &bounds, &SolveOptions::with_solver(solver)).unwrap();
            assert!(res.converged, "{solver}");
            assert!(
                (res.gap_norm - 0.9).abs() < 1e-9,
                "{solver}: {}",
                res.gap_norm
            );
            for x in res.ub.as_slice() {
                assert!((x - 0.1).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_momentum_reproduces_map() {
        let aff = di_affine(100);
        let bounds = Bounds::symmetric(1.0, 1).unwrap();
        let mut opts = SolveOptions {
            max_iter: 50,
            record_history: true,
            ..SolveOptions::default()
        };
        let map = solve_gap_map(&aff, &bounds, &opts).unwrap();
        opts.momentum = 0.0;
        let fast = solve_gap_fast(&aff, &bounds, &opts).unwrap();
        assert_eq!(map.iterations, fast.iterations);
        assert_eq!(map.history, fast.history);
        assert_eq!(map.ub.as_slice(), fast.ub.as_slice());
    }

    #[test]
    fn separation_bound_never_exceeds_gap() {
        let aff = di_affine(200);
        let bounds = Bounds::symmetric(1.0, 1).unwrap();
        for max_iter in [1, 5, 50, 5000] {
            let res = solve_gap_map(
                &aff,
                &bounds,
                &SolveOptions {
                    max_iter,
                    ..SolveOptions::default()
                },
            )
            .unwrap();
            assert!(res.gap_lower_bound <= res.gap_norm + 1e-12);
        }
    }

    #[test]
    fn decision_threshold_stops_early() {
        let aff = di_affine(500);
        let infeasible = Bounds::symmetric(1.0, 1).unwrap();
        let opts = SolveOptions {
            decide_threshold: Some(1e-6),
            ..SolveOptions::with_solver(Solver::Fast)
        };
        let res = solve_gap(&aff, &infeasible, &opts).unwrap();
        assert_eq!(res.stop, StopReason::Separated);
        assert!(res.gap_lower_bound > 1e-6);
        let feasible = Bounds::symmetric(3.0, 1).unwrap();
        let res = solve_gap(&aff, &feasible, &opts).unwrap();
        assert_eq!(res.stop, StopReason::Feasible);
        assert!(res.gap_norm <= 1e-6);
    }

    #[test]
    fn rejects_bad_options_and_shapes() {
        let aff = di_affine(10);
        let bounds = Bounds::symmetric(1.0, 1).unwrap();
        let opts = SolveOptions {
            tol: 0.0,
            ..SolveOptions::default()
        };
        assert!(solve_gap(&aff, &bounds, &opts).is_err());
        let two = Bounds::symmetric(1.0, 2).unwrap();
        assert!(solve_gap(&aff, &two, &SolveOptions::default()).is_err());
        let singular = di_affine(1);
        assert!(matches!(
            solve_gap(&singular, &bounds, &SolveOptions::default()),
            Err(Error::Uncontrollable { .. })
        ));
    }

    #[test]
    fn unconverged_result_is_populated() {
        let aff = di_affine(400);
        let bounds = Bounds::symmetric(1.0, 1).unwrap();
        let res = solve_gap_map(
            &aff,
            &bounds,
            &SolveOptions {
                max_iter: 2,
                ..SolveOptions::default()
            },
        )
        .unwrap();
        assert!(!res.converged);
        assert_eq!(res.stop, StopReason::MaxIterations);
        assert_eq!(res.ub.as_slice().len(), 400);
        assert!(res.gap_norm.is_finite());
    }
}
