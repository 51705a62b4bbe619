//! End-to-end acceptance checks, one status line each. Exits nonzero when any
//! check fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use heatdbc::calculus::{
    l2h_dot, verify_product_rules, verify_sbp_space, verify_sbp_time, verify_square_identities,
};
use heatdbc::carleman::{per_run_spread, seeded_terminal, sweep_level, SweepSettings};
use heatdbc::hum::{
    decay_report, eval_j, grad_j, minimize_j, observation_weight, verify_control_theorem, Gramian,
    HumConfig,
};
use heatdbc::mesh::{GridFunction, Region, RegionRole, SpaceMesh, SpaceSet, TimeFunction, TimeMesh, TimeSet};
use heatdbc::rng::Lcg64;
use heatdbc::solver::{
    adjoint_solve, duality_residual, forward_solve, stability_check, tilt_potential, Potentials,
    Propagator, SpaceTimeField,
};
use heatdbc::weights::{
    build_psi, probe_space_estimate, probe_theta_bounds, probe_time_estimate, AuditGrid,
    CarlemanParams, TimeProbeLevels,
};

type Outcome = Result<String, String>;

fn grid(space: SpaceMesh, set: SpaceSet, rng: &mut Lcg64) -> GridFunction {
    GridFunction::new(space, set, rng.symmetric_vec(space.count(set))).unwrap()
}

fn times(time: TimeMesh, set: TimeSet, rng: &mut Lcg64) -> TimeFunction {
    TimeFunction::new(time, set, rng.symmetric_vec(time.count(set))).unwrap()
}

fn random_potentials(space: &SpaceMesh, time: &TimeMesh, rng: &mut Lcg64, bound: f64) -> Potentials {
    let values = (0..space.len() * time.steps()).map(|_| rng.range(-bound, bound)).collect();
    Potentials::from_slices(space.len(), values).unwrap()
}

fn source(space: SpaceMesh, time: TimeMesh, rng: &mut Lcg64) -> SpaceTimeField {
    let values = rng.symmetric_vec(space.interior() * time.steps());
    SpaceTimeField::new(space, time, SpaceSet::Primal, TimeSet::Dual, values).unwrap()
}

fn observation() -> Region {
    Region::new(0.3, 0.7, RegionRole::Observation).unwrap()
}

fn weight_core() -> Region {
    Region::new(0.4, 0.6, RegionRole::WeightCore).unwrap()
}

fn identities() -> Outcome {
    let tol = 1e-12;
    let mut worst: f64 = 0.0;
    for case in 0..1000u64 {
        let mut rng = Lcg64::new(0x1d).fork(case);
        let m = 2 + (rng.next_u64() % 63) as usize;
        let n = 2 + (rng.next_u64() % 63) as usize;
        let (space, time) = (SpaceMesh::new(m).unwrap(), TimeMesh::new(n, rng.range(0.5, 2.0)).unwrap());
        let (u, v) = (grid(space, SpaceSet::PrimalClosed, &mut rng), grid(space, SpaceSet::PrimalClosed, &mut rng));
        let w = grid(space, SpaceSet::Dual, &mut rng);
        let (f0, f1) = (times(time, TimeSet::PrimalClosed, &mut rng), times(time, TimeSet::PrimalClosed, &mut rng));
        let (g0, g1) = (times(time, TimeSet::DualClosed, &mut rng), times(time, TimeSet::DualClosed, &mut rng));
        let reports = verify_product_rules(&u, &v, tol)
            .unwrap()
            .into_iter()
            .chain(verify_sbp_space(&u, &w, tol).unwrap())
            .chain(verify_sbp_time([&f0, &f1], [&g0, &g1], tol).unwrap())
            .chain(verify_square_identities(&f0, tol).unwrap())
            .chain(verify_square_identities(&g0, tol).unwrap());
        for r in reports {
            worst = worst.max(r.residual);
            if !r.passed() {
                return Err(format!("case {case} (M={m}, N={n}): {} residual {:e}", r.name, r.residual));
            }
        }
    }
    Ok(format!("1000 cases x 12 identities, max residual {worst:.2e}"))
}

fn duality() -> Outcome {
    let mut worst: f64 = 0.0;
    for case in 0..100u64 {
        let mut rng = Lcg64::new(0xd0).fork(case);
        let m = 8 + (rng.next_u64() % 25) as usize;
        let (space, time) = (SpaceMesh::new(m).unwrap(), TimeMesh::new(m, 1.0).unwrap());
        let pot = random_potentials(&space, &time, &mut rng, 1.0);
        let g = grid(space, SpaceSet::PrimalClosed, &mut rng);
        let f = source(space, time, &mut rng);
        let q_t = grid(space, SpaceSet::PrimalClosed, &mut rng);
        let r = duality_residual(&g, Some(&f), &q_t, &time, &pot).map_err(|e| e.to_string())?;
        worst = worst.max(r.residual);
    }
    if worst <= 1e-12 {
        Ok(format!("100 cases, max residual {worst:.2e}"))
    } else {
        Err(format!("max residual {worst:.2e}"))
    }
}

fn stability() -> Outcome {
    let mut worst: f64 = 0.0;
    for b in [0.0, 1.0] {
        for case in 0..50u64 {
            let mut rng = Lcg64::new(0x5b).fork(case + 100 * b as u64);
            let m = 4 + (rng.next_u64() % 29) as usize;
            let n = 4 + (rng.next_u64() % 37) as usize;
            let (space, time) = (SpaceMesh::new(m).unwrap(), TimeMesh::new(n, 1.0).unwrap());
            let pot = Potentials::constant(&space, b, b, b);
            let g = grid(space, SpaceSet::PrimalClosed, &mut rng);
            let f = source(space, time, &mut rng);
            let y = forward_solve(&g, Some(&f), &time, &pot).map_err(|e| e.to_string())?;
            let r = stability_check(&y, &g, Some(&f), &pot).map_err(|e| e.to_string())?;
            worst = worst.max(r.max_ratio / r.bound);
            if !r.passed() {
                return Err(format!("b={b} case {case}: ratio {} > bound {}", r.max_ratio, r.bound));
            }
        }
    }
    Ok(format!("100 runs, worst ratio/bound {worst:.3}"))
}

fn dissipativity() -> Outcome {
    let mut worst = f64::NEG_INFINITY;
    for case in 0..50u64 {
        let mut rng = Lcg64::new(0xd1).fork(case);
        let m = 4 + (rng.next_u64() % 29) as usize;
        let n = 4 + (rng.next_u64() % 37) as usize;
        let (space, time) = (SpaceMesh::new(m).unwrap(), TimeMesh::new(n, 1.0).unwrap());
        let pot = random_potentials(&space, &time, &mut rng, 2.0);
        let tilt = tilt_potential(&pot, &time).map_err(|e| e.to_string())?;
        let q_t = tilt.apply_terminal(&grid(space, SpaceSet::PrimalClosed, &mut rng));
        let q = adjoint_solve(&q_t, &time, &tilt.potentials).map_err(|e| e.to_string())?;
        let h = space.h();
        let norms: Vec<f64> = (0..q.slices()).map(|k| l2h_dot(h, q.slice(k), q.slice(k)).sqrt()).collect();
        for w in norms.windows(2) {
            worst = worst.max(w[0] - w[1]);
        }
    }
    if worst <= 1e-12 {
        Ok(format!("50 tilted runs, worst step increase {:.2e}", worst.max(0.0)))
    } else {
        Err(format!("norm decreased by {worst:.2e} in one step"))
    }
}

fn conservation() -> Outcome {
    let mut worst: f64 = 0.0;
    for case in 0..50u64 {
        let mut rng = Lcg64::new(0xc0).fork(case);
        let m = 2 + (rng.next_u64() % 40) as usize;
        let n = 2 + (rng.next_u64() % 40) as usize;
        let (space, time) = (SpaceMesh::new(m).unwrap(), TimeMesh::new(n, 1.0).unwrap());
        let g = grid(space, SpaceSet::PrimalClosed, &mut rng);
        let y = forward_solve(&g, None, &time, &Potentials::zero(&space)).map_err(|e| e.to_string())?;
        let ones = vec![1.0; space.len()];
        let mass0 = l2h_dot(space.h(), g.values(), &ones);
        for k in 0..y.slices() {
            worst = worst.max((l2h_dot(space.h(), y.slice(k), &ones) - mass0).abs());
        }
    }
    if worst <= 1e-12 {
        Ok(format!("50 runs, max drift {worst:.2e}"))
    } else {
        Err(format!("drift {worst:.2e}"))
    }
}

fn hum_optimality() -> Outcome {
    let err = |e: heatdbc::Error| e.to_string();
    let (space, time) = (SpaceMesh::new(20).unwrap(), TimeMesh::new(40, 1.0).unwrap());
    let config = HumConfig::new(observation());
    let pot = Potentials::from_fn(&space, &time, |x, t| 0.5 * x - t, |_| 0.3, |t| 0.2 * t);
    let h = space.h();
    let mut worst_fd: f64 = 0.0;
    let mut worst_adjoint: f64 = 0.0;
    let mut worst_opt: f64 = 0.0;
    for case in 0..5u64 {
        let mut rng = Lcg64::new(0x4a).fork(case);
        let (q, g, d) = (
            grid(space, SpaceSet::PrimalClosed, &mut rng),
            grid(space, SpaceSet::PrimalClosed, &mut rng),
            grid(space, SpaceSet::PrimalClosed, &mut rng),
        );
        let grad = grad_j(&q, &g, &time, &pot, &config).map_err(err)?;
        let eps = 1e-5;
        let shifted = |s: f64| q.zip_with(&d, |a, b| a + s * b).unwrap();
        let fd = (eval_j(&shifted(eps), &g, &time, &pot, &config).map_err(err)?
            - eval_j(&shifted(-eps), &g, &time, &pot, &config).map_err(err)?)
            / (2.0 * eps);
        let exact = l2h_dot(h, grad.values(), d.values());
        worst_fd = worst_fd.max((fd - exact).abs() / exact.abs());

        let weight = observation_weight(&space, &config.region);
        let gram = Gramian::stepping(Propagator::new(&space, &time, &pot).map_err(err)?, weight);
        let (la, lb) = (gram.apply(q.values()).map_err(err)?, gram.apply(d.values()).map_err(err)?);
        worst_adjoint = worst_adjoint.max((l2h_dot(h, &la, d.values()) - l2h_dot(h, q.values(), &lb)).abs());

        let result = minimize_j(&g, &time, &pot, &config).map_err(err)?;
        let report = verify_control_theorem(&result, &g).map_err(err)?;
        worst_opt = worst_opt.max(report.optimality_residual);
    }
    if worst_fd <= 1e-6 && worst_opt <= 1e-9 && worst_adjoint <= 1e-12 {
        Ok(format!(
            "gradient rel. err {worst_fd:.2e}, optimality residual {worst_opt:.2e}, Gramian asymmetry {worst_adjoint:.2e}"
        ))
    } else {
        Err(format!(
            "gradient rel. err {worst_fd:.2e}, optimality residual {worst_opt:.2e}, Gramian asymmetry {worst_adjoint:.2e}"
        ))
    }
}

fn penalty_decay() -> Outcome {
    let start = Instant::now();
    let mut config = HumConfig::new(observation());
    config.accept_unconverged = true;
    let mut steps = Vec::new();
    let mut ratios = Vec::new();
    for m in [9usize, 19, 39] {
        let space = SpaceMesh::new(m).unwrap();
        let h = space.h();
        let time = TimeMesh::new((1.0 / h.powi(4)).round() as usize, 1.0).unwrap();
        let g = GridFunction::new(space, SpaceSet::PrimalClosed, seeded_terminal(&space, 2024, 0, 8)).unwrap();
        let result = minimize_j(&g, &time, &Potentials::zero(&space), &config).map_err(|e| e.to_string())?;
        let report = verify_control_theorem(&result, &g).map_err(|e| e.to_string())?;
        steps.push(h);
        ratios.push(report.terminal_ratio);
    }
    let decay = decay_report(&steps, &ratios, config.c1, config.mu);
    let elapsed = start.elapsed().as_secs_f64();
    let detail = format!(
        "ratios {:.3e}, {:.3e}, {:.3e}; slope {:.3} vs reference {:.3}; {elapsed:.1} s",
        ratios[0], ratios[1], ratios[2], decay.slope, decay.reference
    );
    if decay.passed() && elapsed <= 300.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn weight_probes() -> Outcome {
    let psi = build_psi(weight_core()).unwrap();
    let params = CarlemanParams::new(psi, 1.0, 1.0, 0.4, psi.sup_norm() + 0.1, 1.0).unwrap();
    let audit = AuditGrid::default();
    let h_levels = [1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0];
    let mut slopes = Vec::new();
    for (m, n, a) in [(1, 1, 0), (2, 1, 0), (1, 0, 1)] {
        let space = probe_space_estimate(m, n, a, &params, &h_levels, &audit, 0.25).map_err(|e| e.to_string())?;
        let time = probe_time_estimate(m, n, a, &params, &TimeProbeLevels::default(), &audit, 0.3)
            .map_err(|e| e.to_string())?;
        for r in [&space, &time.space, &time.time] {
            if !r.passed() {
                return Err(format!("{}: slope {:.3}, expected {}", r.label, r.slope, r.expected));
            }
            slopes.push(r.slope);
        }
    }
    let theta = probe_theta_bounds(&params, &[1, 2, 3], &[50, 100, 200], 2.0).map_err(|e| e.to_string())?;
    if !theta.passed() {
        return Err(format!("theta bound constants unstable: {theta:?}"));
    }
    let (lo, hi) = slopes.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &s| (l.min(s), h.max(s)));
    Ok(format!("9 order fits in [{lo:.3}, {hi:.3}], theta constants stable"))
}

fn carleman_and_observability() -> (Outcome, Outcome) {
    let settings = SweepSettings::new(weight_core(), observation());
    let mut ratios = Vec::new();
    let mut constants = Vec::new();
    let mut dissipative = true;
    let mut admissible = true;
    for m in [9usize, 19, 39] {
        let level = match sweep_level(m, |s, _| Potentials::zero(s), 2024, 20, &settings) {
            Ok(level) => level,
            Err(e) => return (Err(e.to_string()), Err(e.to_string())),
        };
        admissible &= level.admissibility.passed();
        dissipative &= level.observability.iter().all(|o| o.dissipative());
        ratios.push(level.breakdowns.iter().map(|b| b.ratio()).collect::<Vec<_>>());
        constants.push(level.observability.iter().map(|o| o.implied_constant()).collect::<Vec<_>>());
    }
    let ratio_spread = per_run_spread(&ratios);
    let const_spread = per_run_spread(&constants);
    let max_of = |v: &[Vec<Option<f64>>]| v.iter().flatten().flatten().cloned().fold(0.0, f64::max);
    let carleman = match ratio_spread {
        Some(s) if s <= 10.0 && admissible => Ok(format!(
            "20 runs x 3 levels, worst per-run spread {s:.2}, largest ratio {:.2}",
            max_of(&ratios)
        )),
        other => Err(format!("spread {other:?}, admissible {admissible}")),
    };
    let observability = match const_spread {
        Some(s) if s <= 10.0 && dissipative => Ok(format!(
            "worst per-run spread {s:.2}, largest implied constant {:.2}, all runs dissipative",
            max_of(&constants)
        )),
        other => Err(format!("spread {other:?}, dissipative {dissipative}")),
    };
    (carleman, observability)
}

fn run_cli(args: &[&str], dir: &Path, workers: &str) -> Result<i32, String> {
    let status = Command::new(env!("CARGO_BIN_EXE_heatdbc"))
        .args(args)
        .env("HEATDBC_WORKERS", workers)
        .current_dir(dir)
        .output()
        .map_err(|e| e.to_string())?
        .status;
    status.code().ok_or_else(|| "terminated by signal".into())
}

fn tables(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv") || p.file_name().is_some_and(|n| n == "summary.txt"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    Ok(files)
}

fn cli_determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    std::fs::write(dir.join("run.cfg"), "mesh.M = 16\nmesh.N = 30\ncarleman.runs = 4\nsweep.levels = 1/10,1/11,1/12\n")
        .map_err(|e| e.to_string())?;
    let mut compared = 0;
    for command in ["check", "solve", "adjoint", "hum", "carleman", "sweep"] {
        let mut outputs = Vec::new();
        for (k, workers) in ["1", "3"].iter().enumerate() {
            let out = format!("{command}-{k}");
            let code = run_cli(&[command, "--config", "run.cfg", "--seed", "7", "--out", &out], dir, workers)?;
            if code != 0 {
                return Err(format!("{command} exited with {code}"));
            }
            outputs.push(tables(&dir.join(&out))?);
        }
        if outputs[0] != outputs[1] || outputs[0].is_empty() {
            return Err(format!("{command} output differs between identical runs"));
        }
        compared += outputs[0].len();
    }
    std::fs::write(dir.join("typo.cfg"), "mesh.M = 8\nhum.tolerence = 1e-9\n").unwrap();
    std::fs::write(dir.join("gronwall.cfg"), "mesh.N = 40\ncheck.gronwall_gamma = 24\ncheck.cases = 5\n").unwrap();
    std::fs::write(dir.join("capped.cfg"), "hum.max_iter = 2\n").unwrap();
    let induced = [
        (vec!["hum", "--config", "typo.cfg", "--out", "e1"], 2),
        (vec!["sweep", "--levels", "1/10", "--out", "e2"], 2),
        (vec!["solve", "--config", "missing.cfg", "--out", "e3"], 2),
        (vec!["check", "--config", "gronwall.cfg", "--out", "e4"], 1),
        (vec!["hum", "--config", "capped.cfg", "--out", "e5"], 1),
        (vec!["bogus"], 2),
    ];
    for (args, expected) in &induced {
        let code = run_cli(args, dir, "1")?;
        if code != *expected {
            return Err(format!("`{}` exited with {code}, expected {expected}", args.join(" ")));
        }
    }
    Ok(format!(
        "{compared} output files byte-identical across reruns and worker counts; {} induced failures exit as expected",
        induced.len()
    ))
}

fn main() {
    let mut failed = 0;
    let mut report = |index: usize, name: &str, outcome: Outcome| {
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("[{index:>2}] {tag} {name}: {detail}");
    };
    report(1, "discrete identities", identities());
    report(2, "duality", duality());
    report(3, "energy stability", stability());
    report(4, "tilted dissipativity", dissipativity());
    report(5, "lumped mass conservation", conservation());
    report(6, "HUM optimality", hum_optimality());
    report(7, "penalty decay", penalty_decay());
    report(8, "weight probes", weight_probes());
    let (carleman, observability) = carleman_and_observability();
    report(9, "Carleman ratio band", carleman);
    report(10, "relaxed observability", observability);
    report(11, "CLI determinism and exit codes", cli_determinism());
    if failed > 0 {
        println!("{failed} acceptance check(s) failed");
        std::process::exit(1);
    }
}
