use std::fs;
use std::path::Path;

use clap::Parser;
use gapctl::output::{read_trajectory, write_trajectory, SummaryRecord};
use gapctl::{execute, run, Cli};
use gapctl_core::{
    build_affine, builtin_instance, solve_gap, Bounds, ControlTrajectory, Grid, SolveOptions,
    Solver,
};
use proptest::prelude::*;
use serde_json::Value;

fn exec(args: &[&str]) -> SummaryRecord {
    let cli = Cli::try_parse_from(std::iter::once("gapctl").chain(args.iter().copied())).unwrap();
    execute(&cli.command).unwrap_or_else(|e| panic!("{args:?}: {e:?}"))
}

fn code(args: &[&str]) -> i32 {
    run(std::iter::once("gapctl").chain(args.iter().copied()))
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn gap_trajectory_round_trips_through_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let s = exec(&[
        "gap",
        "--system",
        "double_integrator",
        "--bound",
        "1",
        "--nodes",
        "400",
        "--out",
        out,
    ]);
    assert!(s.converged);

    let inst = builtin_instance("double_integrator").unwrap();
    let grid = inst.system.grid(400).unwrap();
    let aff = build_affine(&inst.system, &grid, &inst.boundary).unwrap();
    let opts = SolveOptions {
        tol: 1e-8,
        ..SolveOptions::with_solver(Solver::Map)
    };
    let r = solve_gap(&aff, &Bounds::symmetric(1.0, 1).unwrap(), &opts).unwrap();

    let file = read_trajectory(
        fs::File::open(dir.path().join("trajectory.csv")).unwrap(),
        Some((0.0, 1.0)),
    )
    .unwrap();
    for (a, b) in [(&file.ua, &r.ua), (&file.ub, &r.ub), (&file.v, &r.v)] {
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() <= 1e-12 * (1.0 + y.abs()));
        }
    }
    assert_eq!(s.gap_norm, Some(r.gap_norm));
    let states = fs::read_to_string(dir.path().join("states.csv")).unwrap();
    assert_eq!(states.lines().count(), 402);
    let summary = read_json(&dir.path().join("summary.json"));
    assert_eq!(summary["N"], 400);
    assert_eq!(summary["command"], "gap");
}

#[test]
fn repeated_runs_are_identical() {
    let strip = |mut s: SummaryRecord| {
        s.wall_time_seconds = 0.0;
        s
    };
    let args = [
        "critical",
        "--system",
        "double_integrator",
        "--nodes",
        "500",
        "--out",
    ];
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    let a = exec(&[&args[..], &[d1.path().to_str().unwrap()]].concat());
    let b = exec(&[&args[..], &[d2.path().to_str().unwrap()]].concat());
    assert_eq!(strip(a), strip(b));
    assert_eq!(
        fs::read(d1.path().join("trajectory.csv")).unwrap(),
        fs::read(d2.path().join("trajectory.csv")).unwrap()
    );
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["gap", "--bound", "1", "--out", out]), 1);
    assert_eq!(
        code(&[
            "gap",
            "--system",
            "no_such_system",
            "--bound",
            "1",
            "--out",
            out
        ]),
        1
    );
    assert_eq!(
        code(&["gap", "--system", "double_integrator", "--out", out]),
        1
    );
    assert_eq!(
        code(&[
            "gap",
            "--system",
            "double_integrator",
            "--bound=-1",
            "--out",
            out
        ]),
        1
    );
    assert_eq!(
        code(&[
            "gap",
            "--system",
            "double_integrator",
            "--nodes",
            "1",
            "--bound",
            "1",
            "--out",
            out
        ]),
        1
    );
    let unconverged = [
        "gap",
        "--system",
        "double_integrator",
        "--bound",
        "1",
        "--max-iter",
        "3",
        "--out",
        out,
    ];
    assert_eq!(code(&unconverged), 2);
    assert_eq!(
        read_json(&dir.path().join("summary.json"))["converged"],
        false
    );
    assert_eq!(
        code(&[
            "gap",
            "--system",
            "double_integrator",
            "--bound",
            "1",
            "--nodes",
            "100",
            "--out",
            out
        ]),
        0
    );
}

#[test]
fn configuration_file_matches_builtin() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("di.json");
    fs::write(
        &cfg,
        r#"{"label": "di", "system": {"A": [[0, 1], [0, 0]], "B": [[0], [1]]},
            "t0": 0, "tf": 1, "x0": [0, 1], "xf": [0, 0], "nodes": 300, "bound": 1.5}"#,
    )
    .unwrap();
    let out = dir.path().join("cfg");
    let from_cfg = exec(&[
        "gap",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(from_cfg.instance, "di");
    assert_eq!(from_cfg.nodes, 300);
    let out2 = dir.path().join("builtin");
    let builtin = exec(&[
        "gap",
        "--system",
        "double_integrator",
        "--bound",
        "1.5",
        "--nodes",
        "300",
        "--out",
        out2.to_str().unwrap(),
    ]);
    assert!((from_cfg.gap_norm.unwrap() - builtin.gap_norm.unwrap()).abs() <= 1e-12);

    fs::write(&cfg, r#"{"system": "double_integrator", "surprise": 1}"#).unwrap();
    assert_eq!(
        code(&[
            "gap",
            "--config",
            cfg.to_str().unwrap(),
            "--bound",
            "1",
            "--out",
            out.to_str().unwrap()
        ]),
        1
    );
}

#[test]
fn oracle_flag_reports_agreement() {
    let dir = tempfile::tempdir().unwrap();
    let s = exec(&[
        "gap",
        "--system",
        "double_integrator",
        "--bound",
        "0.5",
        "--nodes",
        "6",
        "--tol",
        "1e-14",
        "--oracle",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    let diff = s.details["oracle_objective_difference"].as_f64().unwrap();
    assert!(diff <= 1e-9, "{diff}");
    let orc = s.details["oracle_gap_norm"].as_f64().unwrap();
    assert!((orc - s.gap_norm.unwrap()).abs() <= 1e-6);
}

#[test]
fn analyze_confirms_gap_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let gap = exec(&[
        "gap",
        "--system",
        "double_integrator",
        "--bound",
        "1",
        "--solver",
        "fast",
        "--tol",
        "1e-11",
        "--out",
        out,
    ]);
    let input = dir.path().join("trajectory.csv");
    let an_dir = dir.path().join("analysis");
    let s = exec(&[
        "analyze",
        "--input",
        input.to_str().unwrap(),
        "--system",
        "double_integrator",
        "--bound",
        "1",
        "--out",
        an_dir.to_str().unwrap(),
    ]);
    assert_eq!(s.details["bang_bang_agreement"].as_f64(), Some(1.0));
    assert!(s.details["reconstruction_max_deviation"].as_f64().unwrap() <= 1e-9);
    assert!(s.details["range_residual"].as_f64().unwrap() <= 1e-6);
    assert_eq!(s.switch_times.len(), 1);
    assert!((s.switch_times[0] - gap.switch_times[0]).abs() <= 1e-12);
    assert!(an_dir.join("summary.json").exists());
}

#[test]
fn ctrb_reports_full_rank() {
    for (name, n) in [
        ("double_integrator", 2),
        ("damped_oscillator", 2),
        ("machine_tool", 7),
    ] {
        let dir = tempfile::tempdir().unwrap();
        let s = exec(&[
            "ctrb",
            "--system",
            name,
            "--out",
            dir.path().to_str().unwrap(),
        ]);
        assert_eq!(s.details["kalman_rank"], n, "{name}");
        assert_eq!(s.details["ltv_rank"], n, "{name}");
        assert_eq!(s.details["gramian_rank"], n, "{name}");
        assert_eq!(s.details["controllable"], true);
    }
}

#[test]
fn min_energy_and_svg_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let s = exec(&[
        "min-energy",
        "--system",
        "double_integrator",
        "--bound",
        "10",
        "--nodes",
        "500",
        "--svg",
        "--out",
        out,
    ]);
    assert!(s.converged);
    let svg = fs::read_to_string(dir.path().join("figure.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("<polyline"));
    let traj = read_trajectory(
        fs::File::open(dir.path().join("trajectory.csv")).unwrap(),
        None,
    )
    .unwrap();
    let h = traj.ub.grid().h();
    for (k, u) in traj.ub.as_slice().iter().enumerate() {
        let mid = traj.times[k] + 0.5 * h;
        assert!((u - (6.0 * mid - 4.0)).abs() <= 5.0 * h);
    }
}

#[test]
fn systems_lists_builtins() {
    let dir = tempfile::tempdir().unwrap();
    let s = exec(&["systems", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(s.instance, "builtin");
    for name in ["double_integrator", "damped_oscillator", "machine_tool"] {
        assert!(s.details.contains_key(name));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn csv_round_trip_is_exact(
        steps in 2usize..50,
        m in 1usize..4,
        values in prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::ZERO, 450),
    ) {
        let grid = Grid::new(-0.5, 2.0, steps).unwrap();
        let len = steps * m;
        let traj = |i: usize| ControlTrajectory::new(grid, m, values[i * len..(i + 1) * len].to_vec()).unwrap();
        let (ua, ub, v) = (traj(0), traj(1), traj(2));
        let mut buf = Vec::new();
        write_trajectory(&mut buf, &ua, &ub, &v).unwrap();
        let back = read_trajectory(buf.as_slice(), Some((-0.5, 2.0))).unwrap();
        prop_assert_eq!(back.ua, ua);
        prop_assert_eq!(back.ub, ub);
        prop_assert_eq!(back.v, v);
    }
}
