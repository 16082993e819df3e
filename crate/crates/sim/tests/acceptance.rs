//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. The optional ε = 0.05 study runs only with
//! SURFCH_ACCEPTANCE_SLOW=1 or `--include-ignored`.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use surfch::config::{RawConfig, RunConfig};
use surfch::experiments::{run_convergence, run_on, Problem};
use surfch_core::assembly::CsrMatrix;
use surfch_core::geometry::LevelSet;
use surfch_core::mesh::{build_surface_mesh, Aabb};
use surfch_core::sav::{SchemeCoefficients, TimeController};
use surfch_core::solver::{apply_operator, solve_rank_one_system, BlockSystem, RankOne, SolverConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> anyhow::Result<Outcome> {
    Ok(Outcome { pass, detail: detail.into() })
}

fn config(text: &str) -> anyhow::Result<RunConfig> {
    Ok(RawConfig::parse(text)?.resolve()?)
}

fn manufactured(scheme: &str, eps: f64, levels: &str) -> anyhow::Result<RunConfig> {
    config(&format!(
        "surface = sphere\nscheme = {scheme}\nepsilon = {eps}\nrho = 1\nc_shift = 1\n\
         ic = manufactured\nforcing = manufactured\nt_end = 1\nlevels = {levels}\ndt_coarse = 0.02\n"
    ))
}

fn phase_separation(scheme: &str, level: u32, fraction: f64, extra: &str) -> anyhow::Result<RunConfig> {
    config(&format!(
        "surface = sphere\nlevel = {level}\nscheme = {scheme}\nepsilon = 0.05\nrho = 1\nc_shift = 0\n\
         ic = bernoulli\nic_fraction = {fraction}\nic_seed = 7\n{extra}"
    ))
}

// ---------------------------------------------------------------------------

const RATES: [f64; 2] = [2.18, 2.07];
const TABLE_BDF1: [f64; 3] = [0.3453e-2, 0.0765e-2, 0.0181e-2];
const TABLE_BDF2: [f64; 3] = [0.3474e-2, 0.0767e-2, 0.0181e-2];

/// Returns (rates check, absolute error check).
fn convergence_eps1() -> anyhow::Result<(Outcome, Outcome)> {
    let mut rate_ok = true;
    let mut abs_ok = true;
    let mut rate_detail = Vec::new();
    let mut abs_detail = Vec::new();
    for (scheme, table) in [("sav_bdf1", TABLE_BDF1), ("sav_bdf2", TABLE_BDF2)] {
        let rows = run_convergence(&manufactured(scheme, 1.0, "3,4,5")?)?;
        let rates: Vec<f64> = rows.iter().filter_map(|r| r.rate).collect();
        for (got, want) in rates.iter().zip(RATES) {
            rate_ok &= (got - want).abs() <= 0.4;
        }
        rate_detail.push(format!("{scheme} {:.2}/{:.2}", rates[0], rates[1]));
        let ratios: Vec<f64> = rows.iter().zip(table).map(|(r, t)| r.l2_error / t).collect();
        abs_ok &= ratios.iter().all(|&q| (0.5..=2.0).contains(&q));
        abs_detail.push(format!(
            "{scheme} errors {} ratio to table {}",
            rows.iter().map(|r| format!("{:.3e}", r.l2_error)).collect::<Vec<_>>().join(","),
            ratios.iter().map(|q| format!("{q:.2}")).collect::<Vec<_>>().join(",")
        ));
    }
    Ok((
        Outcome { pass: rate_ok, detail: format!("rates {} (targets 2.18/2.07 ± 0.4)", rate_detail.join("; ")) },
        Outcome { pass: abs_ok, detail: abs_detail.join("; ") },
    ))
}

fn convergence_eps005() -> anyhow::Result<Outcome> {
    let rows = run_convergence(&manufactured("sav_bdf1", 0.05, "3,4")?)?;
    let rate = rows[1].rate.unwrap();
    outcome((rate - 1.54).abs() <= 0.4, format!("errors {:.3e},{:.3e} rate {rate:.2} (target 1.54 ± 0.4)", rows[0].l2_error, rows[1].l2_error))
}

fn energy_balance() -> anyhow::Result<Outcome> {
    let cfg = phase_separation("sav_bdf1", 3, 0.5, "")?;
    let problem = Problem::build(&cfg)?;
    let stepper = problem.stepper(&cfg)?;
    let mut state = stepper.initial_state(problem.initial_condition(&cfg)?, 0.0)?;
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let next = stepper.bdf1_step(&state, cfg.dt)?;
        worst = worst.max(stepper.energy_balance_residual_bdf1(&state, &next, cfg.dt).relative());
        state = next;
    }
    outcome(worst <= 1e-9, format!("max relative residual {worst:.2e} over 50 steps"))
}

/// Criteria 3 and 4 share their runs.
fn monotone_energy_and_mass() -> anyhow::Result<(Outcome, Outcome)> {
    let (mut mono_ok, mut mass_ok) = (true, true);
    let (mut worst_rise, mut worst_drift): (f64, f64) = (f64::NEG_INFINITY, 0.0);
    let mut problem: Option<Problem> = None;
    for scheme in ["sav_bdf1", "sav_bdf2"] {
        for a in [0.3, 0.5, 0.7] {
            let cfg = phase_separation(scheme, 4, a, "dt = 0.005\nt_end = 1\n")?;
            let p = match problem.take() {
                Some(p) => p,
                None => Problem::build(&cfg)?,
            };
            let run = run_on(&p, &cfg, false)?;
            anyhow::ensure!(run.reports.len() == 201, "expected 200 steps, got {}", run.reports.len() - 1);
            // BDF2 is started with one BDF1 step; its two-level energy is defined from there on
            let skip = usize::from(scheme == "sav_bdf2");
            for w in run.reports[skip..].windows(2) {
                let rise = (w[1].modified_energy - w[0].modified_energy) / w[0].modified_energy.abs();
                worst_rise = worst_rise.max(rise);
                mono_ok &= rise <= 1e-9;
            }
            let m0 = run.reports[0].mass;
            for r in &run.reports {
                let drift = ((r.mass - m0) / m0).abs();
                worst_drift = worst_drift.max(drift);
                mass_ok &= drift <= 1e-8;
            }
            problem = Some(p);
        }
    }
    Ok((
        Outcome { pass: mono_ok, detail: format!("largest relative step change {worst_rise:.2e} (6 runs x 200 steps)") },
        Outcome { pass: mass_ok, detail: format!("largest relative mass drift {worst_drift:.2e}") },
    ))
}

fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let m = b.len();
    for k in 0..m {
        let p = (k..m).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap();
        a.swap(k, p);
        b.swap(k, p);
        for i in k + 1..m {
            let f = a[i][k] / a[k][k];
            for j in k..m {
                a[i][j] -= f * a[k][j];
            }
            b[i] -= f * b[k];
        }
    }
    let mut x = vec![0.0; m];
    for i in (0..m).rev() {
        let s: f64 = (i + 1..m).map(|j| a[i][j] * x[j]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    x
}

fn random_block(rng: &mut ChaCha8Rng, n: usize, diag: f64) -> CsrMatrix {
    let mut t: Vec<_> = (0..n).map(|i| (i, i, diag)).collect();
    for _ in 0..4 * n {
        t.push((rng.random_range(0..n), rng.random_range(0..n), rng.random_range(-1.0..1.0)));
    }
    CsrMatrix::from_triplets(n, n, t)
}

fn woodbury() -> anyhow::Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let n = rng.random_range(2..=200);
        let vec = |rng: &mut ChaCha8Rng| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let sys = BlockSystem {
            cc: random_block(&mut rng, n, 6.0),
            cmu: random_block(&mut rng, n, 0.5),
            muc: random_block(&mut rng, n, -0.5),
            mumu: random_block(&mut rng, n, 6.0),
            rank_one: RankOne { sigma: rng.random_range(-2.0..2.0), u: vec(&mut rng), v: vec(&mut rng) },
            rhs: (0..2 * n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        };
        let cols: Vec<Vec<f64>> = (0..2 * n)
            .map(|j| {
                let mut e = vec![0.0; 2 * n];
                e[j] = 1.0;
                apply_operator(&sys, &e)
            })
            .collect();
        let a = (0..2 * n).map(|i| (0..2 * n).map(|j| cols[j][i]).collect()).collect();
        let oracle = dense_solve(a, sys.rhs.clone());
        let (c, mu, _) = solve_rank_one_system(&sys, &SolverConfig::default())?;
        let num: f64 = c.iter().chain(&mu).zip(&oracle).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let den: f64 = oracle.iter().map(|b| b * b).sum::<f64>().sqrt();
        worst = worst.max(num / den);
    }
    outcome(worst <= 1e-10, format!("20 systems with N <= 200, max relative difference {worst:.2e}"))
}

fn variable_step_reduction() -> anyhow::Result<Outcome> {
    let c1 = SchemeCoefficients::variable(1.0)?;
    let c2 = SchemeCoefficients::variable(2.0)?;
    let coeff_ok = (c1.alpha, c1.beta, c1.gamma) == (1.5, 2.0, 0.5)
        && (c2.alpha - 5.0 / 3.0).abs() < 1e-15
        && c2.beta == 3.0
        && (c2.gamma - 4.0 / 3.0).abs() < 1e-15;

    let cfg = phase_separation("sav_bdf2", 3, 0.5, "")?;
    let problem = Problem::build(&cfg)?;
    let stepper = problem.stepper(&cfg)?;
    let dt = cfg.dt;
    let s0 = stepper.initial_state(problem.initial_condition(&cfg)?, 0.0)?;
    let s1 = stepper.bdf1_step(&s0, dt)?;
    let (mut prev2, mut prev1) = (s0, s1);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let uniform = stepper.bdf2_step(&prev2, &prev1, dt)?;
        let variable = stepper.bdf2_variable_step(&prev2, &prev1, dt, dt)?;
        let scale = uniform.c.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let diff = uniform.c.iter().zip(&variable.c).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale;
        worst = worst.max(diff).max((uniform.r - variable.r).abs() / uniform.r.abs());
        prev2 = std::mem::replace(&mut prev1, uniform);
    }
    outcome(coeff_ok && worst <= 1e-12, format!("coefficients {}, max per-step difference {worst:.2e}", if coeff_ok { "ok" } else { "wrong" }))
}

fn adaptive() -> anyhow::Result<Outcome> {
    let extra = "dt = 0.005\nt_end = 5\nadaptive = true\nadaptive_tol = 1e-3\nadaptive_zeta = 0.9\n";
    let cfg = phase_separation("sav_bdf2", 3, 0.5, extra)?;
    let ctrl: TimeController = cfg.adaptive.expect("adaptive config");
    let run = run_on(&Problem::build(&cfg)?, &cfg, false)?;
    let final_dt = run.final_state.dt_used;
    let reached = run.final_state.t >= 5.0 * (1.0 - 1e-12);
    let rejections_ok = run.rejections.iter().all(|r| {
        let expected = ctrl.zeta * (ctrl.tol / r.estimate).sqrt() * r.dt;
        r.estimate > ctrl.tol && r.retry_dt < r.dt && (r.retry_dt - expected).abs() <= 1e-14 * expected
    });
    outcome(
        reached && final_dt >= 10.0 * 0.005 && rejections_ok,
        format!(
            "t = {:.3}, {} accepted steps, final dt = {final_dt:.3e}, {} rejections{}",
            run.final_state.t,
            run.reports.len() - 1,
            run.rejections.len(),
            if rejections_ok { "" } else { " (a rejection did not follow the update rule)" }
        ),
    )
}

fn geometry() -> anyhow::Result<Outcome> {
    let errs: Vec<f64> = (2..=4)
        .map(|l| {
            let (_, active) = build_surface_mesh(Aabb::sphere_box(), l, &LevelSet::unit_sphere())?;
            Ok((active.surface_area() - 4.0 * std::f64::consts::PI).abs())
        })
        .collect::<anyhow::Result<_>>()?;
    let orders: Vec<f64> = errs.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/cell_a05.cfg");
    let cell = RunConfig::load(std::path::Path::new(path), &[])?;
    let (_, active) = build_surface_mesh(cell.domain, cell.level, &cell.surface.levelset())?;
    let dofs = active.num_dofs();
    let dof_ok = (dofs as f64 - 14298.0).abs() <= 0.2 * 14298.0;
    outcome(
        orders.iter().all(|&o| o >= 1.8) && dof_ok,
        format!("sphere area orders {:.2}/{:.2}, cell DOFs {dofs} at level {}", orders[0], orders[1], cell.level),
    )
}

// ---------------------------------------------------------------------------

fn report(label: &str, start: Instant, result: anyhow::Result<Outcome>, failures: &mut usize) {
    let secs = start.elapsed().as_secs_f64();
    match result {
        Ok(o) => {
            println!("{} {label}: {} [{secs:.1}s]", if o.pass { "PASS" } else { "FAIL" }, o.detail);
            *failures += usize::from(!o.pass);
        }
        Err(e) => {
            println!("FAIL {label}: error {e:#} [{secs:.1}s]");
            *failures += 1;
        }
    }
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    // `cargo test -- --list` and similar probes
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return ExitCode::SUCCESS;
    }
    let slow = std::env::var("SURFCH_ACCEPTANCE_SLOW").is_ok_and(|v| v == "1") || args.iter().any(|a| a == "--include-ignored" || a == "--ignored");

    let mut failures = 0;

    let t = Instant::now();
    match convergence_eps1() {
        Ok((rates, abs)) => {
            report("1a convergence rates, eps = 1", t, Ok(rates), &mut failures);
            report("1b absolute errors within 2x of tables, eps = 1", t, Ok(abs), &mut failures);
        }
        Err(e) => report("1 convergence, eps = 1", t, Err(e), &mut failures),
    }
    if slow {
        let t = Instant::now();
        report("1c convergence rate, eps = 0.05 (slow)", t, convergence_eps005(), &mut failures);
    } else {
        println!("SKIP 1c convergence rate, eps = 0.05 (set SURFCH_ACCEPTANCE_SLOW=1)");
    }

    let t = Instant::now();
    report("2 BDF1 energy balance identity", t, energy_balance(), &mut failures);

    let t = Instant::now();
    match monotone_energy_and_mass() {
        Ok((mono, mass)) => {
            report("3 modified energy non-increasing", t, Ok(mono), &mut failures);
            report("4 mass conservation", t, Ok(mass), &mut failures);
        }
        Err(e) => report("3/4 phase separation runs", t, Err(e), &mut failures),
    }

    let t = Instant::now();
    report("5 rank-one solver vs dense solve", t, woodbury(), &mut failures);
    let t = Instant::now();
    report("6 variable-step BDF2 at q = 1", t, variable_step_reduction(), &mut failures);
    let t = Instant::now();
    report("7 adaptive controller", t, adaptive(), &mut failures);
    let t = Instant::now();
    report("8 geometry", t, geometry(), &mut failures);

    println!("acceptance: {failures} failed");
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
