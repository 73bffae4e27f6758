//! Acceptance criteria, run as a plain binary so that every criterion prints
//! exactly one `criterion N: PASS|FAIL` line. Exits non-zero if any fails.

mod common;

use std::time::{Duration, Instant};

use common::*;
use nalgebra::DMatrix;
use rand::Rng;

use rhg_core::battery::BatteryScenario;
use rhg_core::certificates::{
    feasibility_region, lyapunov_decrease, scalar_certificate, search_lmi, search_local_certificates, RegionSpec,
    ScalarCertificateInput, SearchOptions,
};
use rhg_core::exec::Execution;
use rhg_core::game::{condense, Mode};
use rhg_core::matrix::{norm2, Matrix};
use rhg_core::scenario::{illustrative_doc, load_builtin, Model, ILLUSTRATIVE_X0};
use rhg_core::simulator::{simulate, simulate_batch, solve_steady_state, SimulationOptions};
use rhg_core::vi::{eval_phi, solve_projected_gradient, solve_vgne, SolverConfig};

struct Outcome {
    checks: Vec<(bool, String)>,
    elapsed: Duration,
    limit: Option<Duration>,
}

fn finish(checks: Vec<(bool, String)>, start: Instant, limit: Option<Duration>) -> Outcome {
    Outcome {
        checks,
        elapsed: start.elapsed(),
        limit,
    }
}

fn run(n: usize, f: fn() -> Outcome) -> bool {
    let (pass, detail) = match std::panic::catch_unwind(f) {
        Ok(o) => {
            let in_time = o.limit.is_none_or(|l| o.elapsed <= l);
            let mut parts: Vec<String> = o
                .checks
                .iter()
                .map(|(ok, msg)| format!("{}{msg}", if *ok { "" } else { "[x] " }))
                .collect();
            parts.push(match o.limit {
                Some(l) => format!(
                    "{}runtime {:.2?} (limit {l:?})",
                    if in_time { "" } else { "[x] " },
                    o.elapsed
                ),
                None => format!("runtime {:.2?}", o.elapsed),
            });
            (in_time && o.checks.iter().all(|(ok, _)| *ok), parts.join("; "))
        }
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("[x] panicked: {msg}"))
        }
    };
    println!("criterion {n:>2}: {} | {detail}", if pass { "PASS" } else { "FAIL" });
    pass
}

fn main() {
    let criteria: [fn() -> Outcome; 11] = [
        criterion_01_spectral_radii,
        criterion_02_monotonicity_constants,
        criterion_03_destabilization,
        criterion_04_equilibrium_matches_steady_state,
        criterion_05_battery_properties,
        criterion_06_solver_oracles,
        criterion_07_phi_cocoercive_and_lipschitz,
        criterion_08_scalar_certificate_cross_validation,
        criterion_09_certified_implies_stable,
        criterion_10_gradient_consistency,
        criterion_11_feasibility_region,
    ];
    println!("running {} acceptance criteria", criteria.len());
    let failed: Vec<usize> = criteria
        .iter()
        .enumerate()
        .filter(|(i, f)| !run(i + 1, **f))
        .map(|(i, _)| i + 1)
        .collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", criteria.len());
    } else {
        println!(
            "acceptance: {} of {} criteria failed: {failed:?}",
            failed.len(),
            criteria.len()
        );
        std::process::exit(1);
    }
}

fn illustrative(weight: f64) -> rhg_core::game::GameSpec {
    illustrative_doc(weight).to_spec().unwrap()
}

fn criterion_01_spectral_radii() -> Outcome {
    let t = Instant::now();
    let spec = illustrative(1.0);
    let mut checks = Vec::new();
    for (v, want) in [(0, 0.954), (1, 0.727)] {
        let a = &spec.agents[v].dynamics.a;
        let got = rhg_core::numerics::spectral_radius(a).unwrap();
        // Closed form for a 2×2 matrix: roots of λ² − tr·λ + det.
        let (tr, det) = (a[(0, 0)] + a[(1, 1)], a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)]);
        let disc = tr * tr - 4.0 * det;
        let oracle = if disc >= 0.0 {
            (tr.abs() + disc.sqrt()) / 2.0
        } else {
            det.sqrt()
        };
        checks.push((
            (got - want).abs() <= 1e-3 && (got - oracle).abs() <= 1e-9,
            format!(
                "ρ(A{}) = {got:.4} (expected {want} ± 0.001, closed form differs by {:.1e})",
                v + 1,
                (got - oracle).abs()
            ),
        ));
    }
    finish(checks, t, Some(Duration::from_secs(1)))
}

fn criterion_02_monotonicity_constants() -> Outcome {
    let t = Instant::now();
    let mut checks = Vec::new();
    for (weight, want) in [(20.0, 0.498), (1.0, 0.125)] {
        let game = condense(&illustrative(weight)).unwrap();
        let oracle = min_sym_eig(&game.g_mat);
        checks.push((
            (game.mu - want).abs() <= 5e-3 && (game.mu - oracle).abs() < 1e-9,
            format!("W weight {weight}: μ = {:.4} (expected {want} ± 0.005)", game.mu),
        ));
    }
    finish(checks, t, Some(Duration::from_secs(5)))
}

fn criterion_03_destabilization() -> Outcome {
    let t = Instant::now();
    let mut checks = Vec::new();

    let unstable = load_builtin("illustrative_unstable", None).unwrap();
    let opts = SimulationOptions::with_steps(200);
    let traj = simulate(unstable.source(), &ILLUSTRATIVE_X0, &opts).unwrap();
    let peak = traj.states.iter().map(|x| norm2(x)).fold(0.0, f64::max);
    checks.push((
        traj.diverged && peak > 1e6,
        format!(
            "unstable: diverged = {}, max ‖x_t‖ = {peak:.3e}, final ‖x‖ = {:.3e}",
            traj.diverged,
            norm2(traj.final_state())
        ),
    ));

    let stable = load_builtin("illustrative_stable", None).unwrap();
    let mut r = rng(3);
    let mut x0s = vec![ILLUSTRATIVE_X0.to_vec()];
    x0s.extend((0..4).map(|_| random_vec(&mut r, 4, 10.0)));
    let runs = simulate_batch(
        stable.source(),
        &x0s,
        &SimulationOptions::with_steps(100),
        Execution::default(),
    );
    let worst = runs
        .iter()
        .map(|r| r.as_ref().map(|t| norm2(t.final_state())).unwrap_or(f64::INFINITY))
        .fold(0.0, f64::max);
    checks.push((
        worst <= 1e-3,
        format!("stable: worst ‖x_100‖ = {worst:.3e} over {} initial states", x0s.len()),
    ));
    finish(checks, t, Some(Duration::from_secs(30)))
}

fn criterion_04_equilibrium_matches_steady_state() -> Outcome {
    let t = Instant::now();
    let scen = load_builtin("illustrative_stable", None).unwrap();
    let spec = scen.nominal_spec();
    let ss = solve_steady_state(&spec, &SolverConfig::default()).unwrap();
    let traj = simulate(scen.source(), &ILLUSTRATIVE_X0, &SimulationOptions::with_steps(100)).unwrap();
    let x = traj.final_state();
    let mut checks = vec![(
        ss.x_s.iter().all(|v| v.abs() < 1e-12),
        format!(
            "x_s = {:?}",
            ss.x_s.iter().map(|v| format!("{v:.1e}")).collect::<Vec<_>>()
        ),
    )];
    for v in 0..2 {
        let d = norm2(&[x[2 * v] - ss.x_s[2 * v], x[2 * v + 1] - ss.x_s[2 * v + 1]]);
        checks.push((d <= 1e-3, format!("agent {}: ‖x_100 − x_s‖ = {d:.3e}", v + 1)));
    }
    finish(checks, t, Some(Duration::from_secs(30)))
}

fn criterion_05_battery_properties() -> Outcome {
    let t = Instant::now();
    let scen = load_builtin("battery_charging", None).unwrap();
    let Model::Battery(bat) = &scen.model else {
        panic!("battery builtin")
    };
    let bat: &BatteryScenario = bat;
    let n = bat.num_agents();
    let mut checks = Vec::new();

    let nominal = condense(&bat.nominal_spec()).unwrap();
    let certs = search_local_certificates(&nominal, &SearchOptions::default(), Execution::default()).unwrap();
    let eigs: Vec<String> = certs
        .agents
        .iter()
        .map(|a| format!("{:.3}", a.achieved_max_eig))
        .collect();
    checks.push((
        certs.agents.len() == 3 && certs.all_feasible,
        format!(
            "local LMIs feasible = {} (λ_max per agent {})",
            certs.all_feasible,
            eigs.join(", ")
        ),
    ));

    let x0 = scen.simulation.x0.clone().unwrap();
    let steps = scen.simulation.steps;
    let traj = simulate(bat, &x0, &SimulationOptions::with_steps(steps)).unwrap();
    let mut worst = 0.0_f64;
    for (tt, u) in traj.inputs.iter().enumerate() {
        let load = bat.aggregate_load(tt, u);
        let limit = bat
            .schedule
            .overrides
            .iter()
            .filter(|o| o.t == tt)
            .find_map(|o| o.grid_limit)
            .unwrap_or(bat.grid_limit);
        worst = worst.max(-load).max(load - limit);
    }
    checks.push((
        worst <= 1e-8,
        format!("coupling 0 ≤ Σl ≤ L_max over {steps} steps: worst violation {worst:.2e}"),
    ));

    let ss = solve_steady_state(&bat.nominal_spec(), &SolverConfig::default()).unwrap();
    let shock = bat.schedule.shock.as_ref().expect("builtin has a shock");
    let windows = [
        ("pre-shock", shock.start - 6, shock.start),
        ("post-shock", steps - 6, steps),
    ];
    for (name, lo, hi) in windows {
        let mut ok = true;
        let mut detail = Vec::new();
        for v in 0..n {
            let d: Vec<f64> = (lo..=hi).map(|tt| (traj.states[tt][v] - ss.x_s[v]).abs()).collect();
            let dec = d.windows(2).all(|w| w[1] < w[0]);
            ok &= dec;
            detail.push(format!(
                "agent {} {}",
                v + 1,
                if dec { "decreasing" } else { "not decreasing" }
            ));
        }
        checks.push((ok, format!("{name} window x_{lo}..x_{hi}: {}", detail.join(", "))));
    }
    finish(checks, t, Some(Duration::from_secs(120)))
}

fn criterion_06_solver_oracles() -> Outcome {
    let t = Instant::now();
    let cfg = SolverConfig::default();
    let mut r = rng(606);
    let mut worst_as = 0.0_f64;
    let mut active_rows = 0;
    let mut failures = 0;
    for case in 0..50 {
        let mode = if case % 3 == 0 { Mode::Coupled } else { Mode::Decoupled };
        let (spec, game) = random_game(
            &mut r,
            &GenOptions {
                mode,
                ..GenOptions::default()
            },
        );
        let x = random_vec(&mut r, game.n_x(), 8.0);
        let (rows, rhs) = dense_constraints(&spec);
        let oracle = active_set_solutions(&game.g_mat, &game.offset(&x), &rows, &rhs);
        let sol = solve_vgne(&game, &x, &cfg, None).unwrap();
        if oracle.is_empty() || !sol.converged() {
            failures += 1;
            continue;
        }
        active_rows += rows
            .iter()
            .zip(&rhs)
            .filter(|(row, c)| (dot(row, &oracle[0]) - *c).abs() < 1e-9)
            .count();
        worst_as = worst_as.max(max_abs_diff(&sol.u_star, &oracle[0]));
    }
    let mut worst_pg = 0.0_f64;
    for _ in 0..20 {
        let (_, game) = random_game(
            &mut r,
            &GenOptions {
                coupling: false,
                ..GenOptions::default()
            },
        );
        let x = random_vec(&mut r, game.n_x(), 4.0);
        let a = solve_vgne(&game, &x, &cfg, None).unwrap();
        let b = solve_projected_gradient(&game, &x, &cfg).unwrap();
        if !(a.converged() && b.converged()) {
            failures += 1;
            continue;
        }
        worst_pg = worst_pg.max(max_abs_diff(&a.u_star, &b.u_star));
    }
    let checks = vec![
        (failures == 0, format!("{failures} non-converged or oracle-less cases")),
        (
            worst_as <= 1e-7,
            format!(
                "50 games vs active-set enumeration: max |Δu| = {worst_as:.2e} ({active_rows} active rows in total)"
            ),
        ),
        (
            worst_pg <= 1e-6,
            format!("20 box-only games vs projected gradient: max |Δu| = {worst_pg:.2e}"),
        ),
    ];
    finish(checks, t, Some(Duration::from_secs(60)))
}

fn criterion_07_phi_cocoercive_and_lipschitz() -> Outcome {
    let t = Instant::now();
    let cfg = SolverConfig::default();
    let mut r = rng(707);
    let mut worst_coco = f64::INFINITY;
    let mut worst_lip = f64::INFINITY;
    let mut evals = 0;
    for _ in 0..5 {
        let (_, game) = random_game(&mut r, &GenOptions::default());
        for _ in 0..100 {
            let z1 = random_vec(&mut r, game.n_vars(), 6.0);
            let z2 = random_vec(&mut r, game.n_vars(), 6.0);
            let p1 = eval_phi(&game, &z1, &cfg).unwrap();
            let p2 = eval_phi(&game, &z2, &cfg).unwrap();
            evals += 2;
            let dz: Vec<f64> = z1.iter().zip(&z2).map(|(a, b)| a - b).collect();
            let dp: Vec<f64> = p1.iter().zip(&p2).map(|(a, b)| a - b).collect();
            worst_coco = worst_coco.min(dot(&dz, &dp) - game.mu * dot(&dp, &dp));
            worst_lip = worst_lip.min(norm(&dz) / game.mu - norm(&dp));
        }
    }
    let checks = vec![
        (worst_coco >= -1e-7, format!("min ⟨Δz, Δφ⟩ − μ‖Δφ‖² = {worst_coco:.3e}")),
        (worst_lip >= -1e-7, format!("min ‖Δz‖/μ − ‖Δφ‖ = {worst_lip:.3e}")),
        (evals >= 500, format!("{evals} φ evaluations over 5 games")),
    ];
    finish(checks, t, None)
}

fn criterion_08_scalar_certificate_cross_validation() -> Outcome {
    let t = Instant::now();
    let mut r = rng(808);
    let grid: Vec<f64> = std::iter::once(0.0)
        .chain((0..61).map(|i| 10f64.powf(-3.0 + 7.0 * i as f64 / 60.0)))
        .collect();
    let mut witnessed = 0;
    let mut disagreements = Vec::new();
    let mut scalar_hits = 0;
    for case in 0..30 {
        let inp = ScalarCertificateInput {
            a: r.gen_range(-0.95..0.95),
            b: r.gen_range(0.2..2.0) * if r.gen_bool(0.5) { 1.0 } else { -1.0 },
            w: r.gen_range(0.0..1.2f64).powi(2),
            mu: r.gen_range(0.2..4.0),
            k: r.gen_range(2..=10),
        };
        let mut best = f64::INFINITY;
        for &l1 in &grid {
            for &l2 in &grid {
                if l1 + l2 > 0.0 {
                    best = best.min(max_eig(&scalar_lmi(inp.a, inp.b, inp.w, inp.mu, inp.k, l1, l2)));
                }
            }
        }
        // The closed-form matrix must coincide with the library's assembly.
        let lib = inp
            .lmi_data()
            .unwrap()
            .assemble(&Matrix::identity(1), 0.7, 0.3)
            .unwrap();
        let ours = scalar_lmi(inp.a, inp.b, inp.w, inp.mu, inp.k, 0.7, 0.3);
        let lib = DMatrix::from_fn(lib.rows(), lib.cols(), |i, j| lib[(i, j)]);
        assert!(
            (lib - ours).abs().max() < 1e-10,
            "case {case}: assembled matrix differs"
        );
        if best < -1e-9 {
            witnessed += 1;
            let sc = scalar_certificate(&inp, 400).unwrap();
            if sc.feasible {
                scalar_hits += 1;
                continue;
            }
            let lmi = search_lmi(&inp.lmi_data().unwrap(), &SearchOptions::default()).unwrap();
            if !lmi.feasible {
                disagreements.push(case);
            }
        }
    }
    let checks = vec![
        (
            witnessed > 0,
            format!("{witnessed}/30 instances with a strict grid witness ({scalar_hits} certified in closed form)"),
        ),
        (
            disagreements.is_empty(),
            format!("grid-feasible but uncertified: {disagreements:?}"),
        ),
    ];
    finish(checks, t, Some(Duration::from_secs(120)))
}

fn criterion_09_certified_implies_stable() -> Outcome {
    let t = Instant::now();
    let mut r = rng(909);
    let opts = GenOptions {
        zero_linear: true,
        state_weight: 1.0,
        a_scale: 0.8,
        max_vars: 8,
        max_rows: 32,
        ..GenOptions::default()
    };
    let search = SearchOptions::default();
    let sim = SimulationOptions::with_steps(2000);
    let (mut certified, mut attempts, mut runs, mut violations) = (0, 0, 0, Vec::new());
    let mut worst_final = 0.0_f64;
    while certified < 20 && attempts < 400 {
        attempts += 1;
        let (spec, game) = random_game(&mut r, &opts);
        let Ok(certs) = search_local_certificates(&game, &search, Execution::default()) else {
            continue;
        };
        if !certs.all_feasible {
            continue;
        }
        certified += 1;
        let blocks: Vec<Matrix> = certs.agents.iter().map(|a| a.p.clone()).collect();
        let p = Matrix::block_diag(&blocks);
        let x_bar = vec![0.0; game.n_x()];
        let x0s: Vec<Vec<f64>> = (0..5).map(|_| random_vec(&mut r, game.n_x(), 5.0)).collect();
        for (i, res) in simulate_batch(&spec, &x0s, &sim, Execution::default())
            .into_iter()
            .enumerate()
        {
            runs += 1;
            let traj = match res {
                Ok(tr) => tr,
                Err(e) => {
                    violations.push(format!("game {certified} run {i}: {e}"));
                    continue;
                }
            };
            let fin = norm2(traj.final_state());
            worst_final = worst_final.max(fin);
            if traj.diverged || fin > 1e-6 {
                violations.push(format!("game {certified} run {i}: ‖x_T‖ = {fin:.2e}"));
            }
            let dv = lyapunov_decrease(&traj.states, &p, &x_bar).unwrap();
            // Steps whose value is already at rounding level are not informative.
            let bad = dv
                .iter()
                .enumerate()
                .filter(|(tt, d)| p.quad_form(&traj.states[*tt]) > 1e-10 && **d >= 0.0)
                .count();
            if bad > 0 {
                violations.push(format!("game {certified} run {i}: {bad} non-negative ΔV"));
            }
        }
    }
    let checks = vec![
        (
            certified == 20,
            format!("{certified} certified games out of {attempts} drawn"),
        ),
        (
            violations.is_empty(),
            format!(
                "{runs} runs, worst ‖x_T‖ = {worst_final:.2e}, violations: {:?}",
                violations
            ),
        ),
    ];
    finish(checks, t, None)
}

fn criterion_10_gradient_consistency() -> Outcome {
    let t = Instant::now();
    let mut r = rng(1010);
    let mut worst = 0.0_f64;
    for case in 0..10 {
        let mode = if case % 2 == 0 { Mode::Decoupled } else { Mode::Coupled };
        let opts = GenOptions {
            mode,
            max_vars: 12,
            max_rows: 64,
            max_horizon: 5,
            ..GenOptions::default()
        };
        let (spec, game) = random_game(&mut r, &opts);
        let x = random_vec(&mut r, game.n_x(), 3.0);
        let u = random_vec(&mut r, game.n_vars(), 2.0);
        let an = game.pseudo_gradient(&u, &x);
        let fd = fd_pseudo_gradient(&spec, &x, &u, 1e-3);
        let scale = an.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        worst = worst.max(max_abs_diff(&an, &fd) / scale);
    }
    let checks = vec![(worst <= 1e-6, format!("10 games: max relative error {worst:.2e}"))];
    finish(checks, t, None)
}

fn criterion_11_feasibility_region() -> Outcome {
    let t = Instant::now();
    let spec = RegionSpec::fig3b();
    let grid = feasibility_region(&spec, Execution::default()).unwrap();
    let [na, nw, nm, nl] = grid.shape;
    let frac = grid.feasible_fraction();
    let mut w_breaks = 0;
    let mut a_breaks = 0;
    for ia in 0..na {
        for iw in 0..nw {
            for im in 0..nm {
                for il in 0..nl {
                    let here = grid.get(ia, iw, im, il).feasible;
                    if iw + 1 < nw && !here && grid.get(ia, iw + 1, im, il).feasible {
                        w_breaks += 1;
                    }
                    if ia + 1 < na && !here && grid.get(ia + 1, iw, im, il).feasible {
                        a_breaks += 1;
                    }
                }
            }
        }
    }
    let checks = vec![
        (
            frac > 0.0 && frac < 1.0,
            format!("feasible fraction {frac:.4} over {} points", grid.points.len()),
        ),
        (w_breaks == 0, format!("{w_breaks} increases along W")),
        (a_breaks == 0, format!("{a_breaks} increases along A")),
    ];
    finish(checks, t, None)
}
