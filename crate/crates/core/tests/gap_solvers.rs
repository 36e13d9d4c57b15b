use gapctl_core::analyze::{adjoint_range_residual, check_bang_bang, default_tau};
use gapctl_core::oracle::{brute_force_active_set, brute_force_gap};
use gapctl_core::{
    build_affine, builtin_instance, l2_norm, make_lti_system, project_affine, solve_gap,
    AffineData, BoundarySpec, Bounds, ControlTrajectory, GapResult, SolveOptions, Solver,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BENCHMARKS: [(&str, f64); 3] = [
    ("double_integrator", 1.0),
    ("damped_oscillator", 0.3),
    ("machine_tool", 1500.0),
];

fn affine(name: &str, steps: usize) -> AffineData {
    let inst = builtin_instance(name).unwrap();
    let grid = inst.system.grid(steps).unwrap();
    build_affine(&inst.system, &grid, &inst.boundary).unwrap()
}

fn solve(aff: &AffineData, a: f64, solver: Solver, tol: f64) -> GapResult {
    let bounds = Bounds::symmetric(a, aff.m()).unwrap();
    let opts = SolveOptions {
        tol,
        ..SolveOptions::with_solver(solver)
    };
    solve_gap(aff, &bounds, &opts).unwrap()
}

#[test]
fn map_gap_is_monotone_and_box_side_feasible() {
    let aff = affine("double_integrator", 500);
    let bounds = Bounds::symmetric(1.0, 1).unwrap();
    let opts = SolveOptions {
        record_history: true,
        tol: 1e-11,
        ..SolveOptions::default()
    };
    let r = solve_gap(&aff, &bounds, &opts).unwrap();
    assert!(r.converged);
    assert!(r.history.windows(2).all(|w| w[1] <= w[0] + 1e-14));
    assert!(r.ub.as_slice().iter().all(|u| u.abs() <= 1.0));
}

#[test]
fn solvers_agree_on_benchmarks() {
    for (name, a) in BENCHMARKS {
        let aff = affine(name, 2000);
        let map = solve(&aff, a, Solver::Map, 1e-9);
        let dr = solve(&aff, a, Solver::Dr, 1e-9);
        let fast = solve(&aff, a, Solver::Fast, 1e-9);
        for r in [&map, &dr, &fast] {
            assert!(r.converged, "{name} {}", r.solver);
            assert!(
                (r.gap_norm - map.gap_norm).abs() <= 1e-6 * (1.0 + map.gap_norm),
                "{name}: {} {} vs map {}",
                r.solver,
                r.gap_norm,
                map.gap_norm
            );
            assert!(
                adjoint_range_residual(&r.v, &aff).unwrap() <= 1e-6,
                "{name} {}",
                r.solver
            );
            assert!(r.gap_lower_bound <= r.gap_norm * (1.0 + 1e-12));
        }
    }
}

#[test]
fn box_side_follows_gap_sign() {
    for (name, a) in BENCHMARKS {
        let aff = affine(name, 2000);
        let r = solve(&aff, a, Solver::Fast, 1e-11);
        let bounds = Bounds::symmetric(a, 1).unwrap();
        let bb = check_bang_bang(&r.ub, &r.v, &bounds, default_tau(&r.v)).unwrap();
        assert_eq!(bb.agreement, 1.0, "{name}");
        assert!(bb.tested > 1900, "{name}");
    }
}

#[test]
fn douglas_rachford_matches_map_and_drift_tends_to_gap() {
    let aff = affine("double_integrator", 2000);
    let map = solve(&aff, 1.0, Solver::Map, 1e-10);
    let dr = solve(&aff, 1.0, Solver::Dr, 1e-10);
    let diff = l2_norm(&map.ub.sub(&dr.ub).unwrap());
    assert!(diff <= 1e-5, "{diff}");
    let drift = dr.drift.unwrap();
    assert!((drift - dr.gap_norm).abs() <= 1e-6 * (1.0 + dr.gap_norm));
}

#[test]
fn accelerated_solver_is_faster_on_machine_tool() {
    let aff = affine("machine_tool", 2000);
    let map = solve(&aff, 1500.0, Solver::Map, 1e-9);
    let fast = solve(&aff, 1500.0, Solver::Fast, 1e-9);
    assert!(map.converged && fast.converged);
    assert!((map.gap_norm - fast.gap_norm).abs() <= 1e-5);
    assert!(fast.iterations < map.iterations);
}

#[test]
fn gap_is_positively_homogeneous() {
    let inst = builtin_instance("double_integrator").unwrap();
    let grid = inst.system.grid(1000).unwrap();
    let base_aff = build_affine(&inst.system, &grid, &inst.boundary).unwrap();
    let base = solve(&base_aff, 1.0, Solver::Fast, 1e-12);
    let tau = default_tau(&base.v);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..5 {
        let s: f64 = rng.gen_range(0.1..10.0);
        let bc = BoundarySpec::new(&inst.boundary.x0 * s, &inst.boundary.xf * s).unwrap();
        let aff = build_affine(&inst.system, &grid, &bc).unwrap();
        let r = solve(&aff, s, Solver::Fast, 1e-12 * s);
        assert!(
            (r.gap_norm - s * base.gap_norm).abs() <= 1e-8 * s,
            "s = {s}"
        );
        for (b, v) in base.v.as_slice().iter().zip(r.v.as_slice()) {
            if b.abs() > tau {
                assert_eq!(b.signum(), v.signum());
            }
        }
    }
}

fn random_tiny(rng: &mut ChaCha8Rng) -> (AffineData, Bounds) {
    loop {
        let n: usize = rng.gen_range(1..=2);
        let m: usize = rng.gen_range(1..=2);
        let steps = rng.gen_range(n.div_ceil(m).max(1)..=8 / m);
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-2.0..2.0));
        let b = DMatrix::from_fn(n, m, |_, _| rng.gen_range(-1.0..1.0));
        let tf = rng.gen_range(0.5..2.0);
        let Ok(sys) = make_lti_system(a, b, 0.0, tf) else {
            continue;
        };
        let grid = sys.grid(steps).unwrap();
        let x0 = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let xf = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let aff = build_affine(&sys, &grid, &BoundarySpec::new(x0, xf).unwrap()).unwrap();
        if !aff.is_controllable() || aff.equilibrated_min_eigenvalue() < 1e-6 {
            continue;
        }
        let bounds = if rng.gen_bool(0.5) {
            Bounds::symmetric(rng.gen_range(0.05..1.5), m).unwrap()
        } else {
            let lower: Vec<f64> = (0..steps * m).map(|_| rng.gen_range(-1.0..0.2)).collect();
            let upper: Vec<f64> = lower.iter().map(|l| l + rng.gen_range(0.05..1.0)).collect();
            Bounds::sampled(lower, upper, m).unwrap()
        };
        return (aff, bounds);
    }
}

#[test]
fn solvers_match_exhaustive_oracle_on_tiny_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..25 {
        let (aff, bounds) = random_tiny(&mut rng);
        let oracle = brute_force_active_set(&aff, &bounds).unwrap();
        assert!(oracle.complementarity, "case {case}");
        for solver in [Solver::Map, Solver::Fast] {
            let opts = SolveOptions {
                tol: 1e-15,
                ..SolveOptions::with_solver(solver)
            };
            let r = solve_gap(&aff, &bounds, &opts).unwrap();
            let obj = 0.5 * r.gap_norm * r.gap_norm;
            assert!(
                (obj - oracle.objective).abs() <= 1e-9,
                "case {case} {solver}: {obj} vs {}",
                oracle.objective
            );
        }
    }
}

#[test]
fn oracle_matches_map_on_small_double_integrator() {
    let aff = affine("double_integrator", 4);
    let bounds = Bounds::symmetric(0.5, 1).unwrap();
    let orc = brute_force_gap(&aff, &bounds).unwrap();
    let opts = SolveOptions {
        tol: 1e-15,
        ..SolveOptions::default()
    };
    let map = solve_gap(&aff, &bounds, &opts).unwrap();
    assert!((0.5 * orc.gap_norm.powi(2) - 0.5 * map.gap_norm.powi(2)).abs() <= 1e-9);
    assert_eq!(orc.solver, Solver::Oracle);
    let via_dispatch =
        solve_gap(&aff, &bounds, &SolveOptions::with_solver(Solver::Oracle)).unwrap();
    assert_eq!(via_dispatch.gap_norm, orc.gap_norm);
}

#[test]
fn oracle_beats_random_feasible_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (aff, bounds) = random_tiny(&mut rng);
    let grid = *aff.grid();
    let m = aff.m();
    let best = brute_force_active_set(&aff, &bounds).unwrap().objective;
    for _ in 0..1000 {
        let len = grid.steps() * m;
        let ub: Vec<f64> = (0..len)
            .map(|j| {
                let (lo, hi) = bounds.interval(j);
                rng.gen_range(lo..=hi)
            })
            .collect();
        let raw = ControlTrajectory::from_fn(grid, m, |_, _| rng.gen_range(-5.0..5.0)).unwrap();
        let ua = project_affine(&raw, &aff).unwrap();
        let ub = ControlTrajectory::new(grid, m, ub).unwrap();
        let obj = 0.5 * l2_norm(&ua.sub(&ub).unwrap()).powi(2);
        assert!(best <= obj + 1e-12);
    }
}

#[test]
fn scalar_toy_matches_oracle() {
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
    let orc = brute_force_gap(&aff, &bounds).unwrap();
    for solver in [Solver::Map, Solver::Dr, Solver::Fast] {
        let r = solve_gap(&aff, &bounds, &SolveOptions::with_solver(solver)).unwrap();
        assert!((r.gap_norm - orc.gap_norm).abs() <= 1e-9);
        assert!((r.gap_norm - 0.9).abs() <= 1e-9);
    }
}
