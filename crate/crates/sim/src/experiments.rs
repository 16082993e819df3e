//! Experiment drivers: manufactured-solution convergence study, phase
//! separation from random initial data, and adaptive runs.

use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Context;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use surfch_core::assembly::GeometricForms;
use surfch_core::mesh::{build_surface_mesh, ActiveMesh, BackgroundMesh};
use surfch_core::physics::{f0_prime, mobility, Mobility};
use surfch_core::sav::{adapt_step, EnergyReport, Rejection, SavStepper, StateSnapshot};
use surfch_core::Point;

use crate::config::{ForcingKind, InitialCondition, RunConfig};
use crate::output::{write_vtk, EnergyCsv};

/// c*(x) = ½(1 + tanh(x₃ / (2√2 ε)))
pub fn manufactured_solution(x: &Point, epsilon: f64) -> f64 {
    0.5 * (1.0 + (x[2] / (2.0 * std::f64::consts::SQRT_2 * epsilon)).tanh())
}

/// Derivatives of c* as a function of z = x₃: [c, c', c'', c''', c''''].
fn profile(z: f64, epsilon: f64) -> [f64; 5] {
    let k = 1.0 / (2.0 * std::f64::consts::SQRT_2 * epsilon);
    let t = (k * z).tanh();
    let s = 1.0 - t * t;
    [
        0.5 * (1.0 + t),
        0.5 * k * s,
        -k * k * t * s,
        -k.powi(3) * s * (1.0 - 3.0 * t * t),
        4.0 * k.powi(4) * t * s * (2.0 - 3.0 * t * t),
    ]
}

/// Source term that makes c* a steady solution on the unit sphere,
/// f = −div_Γ(M(c*) ∇_Γ μ*) with μ* = f0'(c*) − ε² Δ_Γ c*.
///
/// Everything depends on z = x₃ only, so with Δ_Γ g = (1 − z²) g'' − 2z g' and
/// div_Γ(A ∇_Γ g) = A Δ_Γ g + (1 − z²) A' g' the expression is one-dimensional.
/// Off the sphere the point is first projected radially. c* is static, so ρ
/// does not enter.
pub fn manufactured_forcing(x: &Point, epsilon: f64, _rho: f64) -> f64 {
    let z = x[2] / x.norm();
    let [c, c1, c2, c3, c4] = profile(z, epsilon);
    let w = 1.0 - z * z;
    let eps2 = epsilon * epsilon;
    let lap = w * c2 - 2.0 * z * c1;
    let lap1 = w * c3 - 4.0 * z * c2 - 2.0 * c1;
    let lap2 = w * c4 - 6.0 * z * c3 - 6.0 * c2;
    let (d2, d3) = (0.5 * (1.0 - 6.0 * c + 6.0 * c * c), 6.0 * c - 3.0);
    let _mu = f0_prime(c) - eps2 * lap;
    let mu1 = d2 * c1 - eps2 * lap1;
    let mu2 = d3 * c1 * c1 + d2 * c2 - eps2 * lap2;
    let lap_mu = w * mu2 - 2.0 * z * mu1;
    let m = mobility(Mobility::Degenerate, c);
    let m1 = (1.0 - 2.0 * c) * c1;
    -(m * lap_mu + w * m1 * mu1)
}

/// Independent Bernoulli(a) draws, one per DOF in DOF order, from ChaCha8
/// seeded with `seed`.
pub fn bernoulli_ic(active: &ActiveMesh, fraction: f64, seed: u64) -> anyhow::Result<Vec<f64>> {
    anyhow::ensure!(fraction > 0.0 && fraction < 1.0, "Bernoulli fraction must lie in (0, 1), got {fraction}");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..active.num_dofs()).map(|_| if rng.random_bool(fraction) { 1.0 } else { 0.0 }).collect())
}

/// ‖c_h − u‖_{L²(Γ_h)} with u evaluated at the surface quadrature points.
pub fn compute_l2_error<F: Fn(&Point) -> f64>(active: &ActiveMesh, c_h: &[f64], exact: F) -> f64 {
    let mut sum = 0.0;
    for e in &active.elements {
        for ((w, ch), x) in e.surface_values(c_h).zip(&e.surface_rule.points) {
            let d = ch - exact(x);
            sum += w * d * d;
        }
    }
    sum.sqrt()
}

/// ‖c_h − I_h u‖_{L²(Γ_h)} against the nodal interpolant of u.
pub fn interpolant_l2_error<F: Fn(&Point) -> f64>(active: &ActiveMesh, c_h: &[f64], exact: F) -> f64 {
    let iu = active.interpolate(exact);
    let d: Vec<f64> = c_h.iter().zip(&iu).map(|(a, b)| a - b).collect();
    surfch_core::assembly::l2_norm_gamma(active, &d)
}

/// log₂(coarse/fine); +∞ when the fine error vanishes.
pub fn observed_rate(err_coarse: f64, err_fine: f64) -> f64 {
    if err_fine == 0.0 {
        f64::INFINITY
    } else {
        (err_coarse / err_fine).log2()
    }
}

/// Mesh and matrices shared by every run on the same surface and level.
pub struct Problem {
    pub background: BackgroundMesh,
    pub active: ActiveMesh,
    pub forms: GeometricForms,
}

impl Problem {
    pub fn build(cfg: &RunConfig) -> anyhow::Result<Self> {
        let (background, active) = build_surface_mesh(cfg.domain, cfg.level, &cfg.surface.levelset())
            .with_context(|| format!("building the level-{} mesh", cfg.level))?;
        let forms = GeometricForms::assemble(&active);
        log::info!(
            "level {} h = {:.5} cut elements = {} DOFs = {}",
            cfg.level,
            active.h,
            active.elements.len(),
            active.num_dofs()
        );
        Ok(Self { background, active, forms })
    }

    pub fn initial_condition(&self, cfg: &RunConfig) -> anyhow::Result<Vec<f64>> {
        Ok(match cfg.ic {
            InitialCondition::Manufactured => {
                let eps = cfg.physics.epsilon;
                self.active.interpolate(|x| manufactured_solution(x, eps))
            }
            InitialCondition::Bernoulli { fraction, seed } => bernoulli_ic(&self.active, fraction, seed)?,
            InitialCondition::Constant(v) => vec![v; self.active.num_dofs()],
        })
    }

    pub fn stepper(&self, cfg: &RunConfig) -> anyhow::Result<SavStepper<'_>> {
        let st = SavStepper::new(&self.active, &self.forms, cfg.physics, cfg.solver)?;
        Ok(match cfg.forcing {
            ForcingKind::None => st,
            ForcingKind::Manufactured => {
                let (eps, rho) = (cfg.physics.epsilon, cfg.physics.rho);
                st.with_forcing(Arc::new(move |x: &Point, _t| manufactured_forcing(x, eps, rho)))
            }
        })
    }
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    /// One report per state, starting with the initial one.
    pub reports: Vec<EnergyReport>,
    pub final_state: StateSnapshot,
    pub num_dofs: usize,
    /// Adaptive runs only.
    pub rejections: Vec<Rejection>,
    /// Files written (CSV first, then snapshots).
    pub files: Vec<PathBuf>,
}

impl RunSummary {
    pub fn accepted_dts(&self) -> impl Iterator<Item = f64> + '_ {
        self.reports.iter().skip(1).map(|r| r.dt)
    }
}

struct Sink<'a> {
    cfg: &'a RunConfig,
    active: &'a ActiveMesh,
    csv: Option<EnergyCsv>,
    step: usize,
    files: Vec<PathBuf>,
    reports: Vec<EnergyReport>,
}

impl<'a> Sink<'a> {
    fn new(cfg: &'a RunConfig, active: &'a ActiveMesh, write: bool) -> anyhow::Result<Self> {
        let mut files = Vec::new();
        let csv = if write {
            let path = cfg.output.csv_path();
            let csv = EnergyCsv::create(&path).with_context(|| format!("creating {}", path.display()))?;
            files.push(path);
            if cfg.output.vtk_every > 0 {
                std::fs::create_dir_all(cfg.output.vtk_path())?;
            }
            Some(csv)
        } else {
            None
        };
        Ok(Self { cfg, active, csv, step: 0, files, reports: Vec::new() })
    }

    fn push(&mut self, state: &StateSnapshot, report: &EnergyReport) -> anyhow::Result<()> {
        if let Some(csv) = &mut self.csv {
            csv.push(report)?;
            let every = self.cfg.output.vtk_every;
            if every > 0 && self.step % every == 0 {
                let path = self.cfg.output.vtk_path().join(format!("c_{:06}.vtk", self.step));
                write_vtk(&path, self.active, &state.c, state.t)?;
                self.files.push(path);
            }
        }
        self.reports.push(*report);
        self.step += 1;
        Ok(())
    }
}

/// Runs `cfg` on a prebuilt problem. With `write = true` the energy history
/// and snapshots go to `cfg.output`; rows are flushed as they are produced so
/// an aborted run keeps its partial history.
pub fn run_on(problem: &Problem, cfg: &RunConfig, write: bool) -> anyhow::Result<RunSummary> {
    let stepper = problem.stepper(cfg)?;
    let initial = stepper.initial_state(problem.initial_condition(cfg)?, 0.0)?;
    let mut sink = Sink::new(cfg, &problem.active, write)?;
    let mut rejections = Vec::new();

    let final_state = match cfg.adaptive {
        None => {
            let n = (cfg.t_end / cfg.dt).round().max(1.0) as usize;
            if (n as f64 * cfg.dt - cfg.t_end).abs() > 1e-9 * cfg.t_end {
                log::warn!("t_end = {} is not a multiple of dt = {}; stopping at {}", cfg.t_end, cfg.dt, n as f64 * cfg.dt);
            }
            let mut sink_err = None;
            let out = stepper.run_fixed(cfg.scheme, initial, cfg.dt, n, |s, r| {
                sink.push(s, r).map_err(|e| {
                    let msg = e.to_string();
                    sink_err = Some(e);
                    surfch_core::Error::Io(std::io::Error::other(msg))
                })
            });
            if let Some(e) = sink_err {
                return Err(e);
            }
            out?
        }
        Some(mut ctrl) => {
            // the first step has no history for the error estimate; take it with BDF1
            let e0 = stepper.modified_energy_bdf2(&initial, &initial);
            sink.push(&initial, &stepper.report(&initial, e0, 0.0))?;
            let first = stepper.bdf1_step(&initial, ctrl.dt)?;
            let e1 = stepper.modified_energy_bdf2(&initial, &first);
            sink.push(&first, &stepper.report(&first, e1, 0.0))?;
            let (mut prev2, mut prev1) = (initial, first);
            while prev1.t < cfg.t_end * (1.0 - 1e-12) {
                let out = adapt_step(&stepper, &mut ctrl, &prev2, &prev1)
                    .with_context(|| format!("adaptive step at t = {}", prev1.t))?;
                rejections.extend(out.rejections);
                let energy = stepper.modified_energy_bdf2(&prev1, &out.state);
                sink.push(&out.state, &stepper.report(&out.state, energy, 0.0))?;
                log::debug!("t = {:.5} dt = {:.4e} e = {:.3e}", out.state.t, out.state.dt_used, out.estimate);
                prev2 = std::mem::replace(&mut prev1, out.state);
            }
            prev1
        }
    };

    Ok(RunSummary {
        reports: sink.reports,
        final_state,
        num_dofs: problem.active.num_dofs(),
        rejections,
        files: sink.files,
    })
}

/// Builds the problem and runs it, writing output.
pub fn run_phase_separation(cfg: &RunConfig) -> anyhow::Result<RunSummary> {
    let problem = Problem::build(cfg)?;
    run_on(&problem, cfg, true)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvergenceRow {
    pub level: u32,
    pub dt: f64,
    pub num_dofs: usize,
    pub l2_error: f64,
    /// Against the previous row; `None` for the first.
    pub rate: Option<f64>,
}

/// Manufactured-solution study over `cfg.levels` with dt halving per level,
/// starting from `cfg.dt_coarse`. The error at `cfg.t_end` is measured
/// against the nodal interpolant of c*.
pub fn run_convergence(cfg: &RunConfig) -> anyhow::Result<Vec<ConvergenceRow>> {
    let mut rows: Vec<ConvergenceRow> = Vec::new();
    let first = cfg.levels[0];
    for &level in &cfg.levels {
        let dt = cfg.dt_coarse * 0.5f64.powi((level - first) as i32);
        let run_cfg = RunConfig {
            level,
            dt,
            adaptive: None,
            ic: InitialCondition::Manufactured,
            forcing: ForcingKind::Manufactured,
            ..cfg.clone()
        };
        let problem = Problem::build(&run_cfg)?;
        let summary = run_on(&problem, &run_cfg, false)?;
        let eps = cfg.physics.epsilon;
        let err = interpolant_l2_error(&problem.active, &summary.final_state.c, |x| manufactured_solution(x, eps));
        let rate = rows.last().map(|p| observed_rate(p.l2_error, err));
        log::info!("level {level} dt {dt} error {err:.4e} rate {rate:?}");
        rows.push(ConvergenceRow { level, dt, num_dofs: problem.active.num_dofs(), l2_error: err, rate });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use surfch_core::geometry::LevelSet;
    use surfch_core::mesh::{build_surface_mesh, Aabb};

    /// Eighth-order central first derivative.
    fn d_theta<F: Fn(f64) -> f64>(f: F, th: f64, h: f64) -> f64 {
        const C: [f64; 4] = [4.0 / 5.0, -1.0 / 5.0, 4.0 / 105.0, -1.0 / 280.0];
        C.iter()
            .enumerate()
            .map(|(i, c)| {
                let k = (i + 1) as f64;
                c * (f(th + k * h) - f(th - k * h))
            })
            .sum::<f64>()
            / h
    }

    /// Forcing built purely from finite differences in θ on the sphere:
    /// div_Γ(A ∇_Γ g) = (1/sin θ) d/dθ (sin θ A dg/dθ) for axisymmetric fields.
    fn forcing_oracle(z: f64, eps: f64, h: f64) -> f64 {
        let c = |th: f64| 0.5 * (1.0 + (th.cos() / (2.0 * std::f64::consts::SQRT_2 * eps)).tanh());
        let lap_c = |th: f64| d_theta(|s| s.sin() * d_theta(c, s, h), th, h) / th.sin();
        let mu = |th: f64| f0_prime(c(th)) - eps * eps * lap_c(th);
        let m = |th: f64| c(th) * (1.0 - c(th));
        let th = z.acos();
        -d_theta(|s| s.sin() * m(s) * d_theta(mu, s, h), th, h) / th.sin()
    }

    #[test]
    fn manufactured_solution_values() {
        assert_eq!(manufactured_solution(&Point::new(0.3, 0.2, 0.0), 0.05), 0.5);
        assert_relative_eq!(manufactured_solution(&Point::new(0.0, 0.0, 1.0), 1.0), 0.669_761_549, epsilon = 1e-9);
        assert_relative_eq!(manufactured_solution(&Point::new(0.0, 0.0, 1e3), 1.0), 1.0, epsilon = 1e-15);
        assert_relative_eq!(manufactured_solution(&Point::new(0.0, 0.0, -1e3), 1.0), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn forcing_matches_finite_difference_oracle() {
        for z in [0.0f64, 0.5, -0.3, 0.8, -0.9] {
            let x = Point::new((1.0 - z * z).sqrt(), 0.0, z);
            let f = manufactured_forcing(&x, 1.0, 1.0);
            let oracle = forcing_oracle(z, 1.0, 0.06);
            assert!(f.is_finite());
            assert!((f - oracle).abs() < 1e-8, "z = {z}: {f} vs {oracle}");
        }
        // steeper profile needs a finer stencil
        for z in [0.05f64, 0.2] {
            let x = Point::new((1.0 - z * z).sqrt(), 0.0, z);
            let f = manufactured_forcing(&x, 0.3, 1.0);
            let oracle = forcing_oracle(z, 0.3, 0.02);
            assert!((f - oracle).abs() < 1e-6 * oracle.abs().max(1.0), "z = {z}: {f} vs {oracle}");
        }
    }

    #[test]
    fn forcing_is_radially_constant_and_odd() {
        let x = Point::new(0.3, -0.4, 0.5).normalize();
        assert_relative_eq!(manufactured_forcing(&(x * 1.1), 0.5, 1.0), manufactured_forcing(&x, 0.5, 1.0), epsilon = 1e-14);
        let mirrored = Point::new(x[0], x[1], -x[2]);
        assert_relative_eq!(manufactured_forcing(&mirrored, 0.5, 1.0), -manufactured_forcing(&x, 0.5, 1.0), epsilon = 1e-12);
    }

    #[test]
    fn bernoulli_statistics_and_determinism() {
        let (_, active) = build_surface_mesh(Aabb::sphere_box(), 4, &LevelSet::unit_sphere()).unwrap();
        let a = bernoulli_ic(&active, 0.5, 42).unwrap();
        let b = bernoulli_ic(&active, 0.5, 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, bernoulli_ic(&active, 0.5, 43).unwrap());
        assert!(a.iter().all(|&v| v == 0.0 || v == 1.0));
        let n = a.len() as f64;
        let mean = a.iter().sum::<f64>() / n;
        assert!((mean - 0.5).abs() <= 1.5 / n.sqrt(), "mean {mean} with N = {n}");
        assert!(bernoulli_ic(&active, 0.0, 1).is_err());
        assert!(bernoulli_ic(&active, 1.0, 1).is_err());
    }

    #[test]
    fn rates() {
        assert_relative_eq!(observed_rate(2.8247e-2, 0.9720e-2), 1.54, epsilon = 5e-3);
        assert_eq!(observed_rate(1e-3, 1e-3), 0.0);
        assert_eq!(observed_rate(4e-2, 1e-2), 2.0);
        assert_eq!(observed_rate(1e-3, 0.0), f64::INFINITY);
    }

    #[test]
    fn errors_vanish_for_representable_fields() {
        for level in [2, 3] {
            let (_, active) = build_surface_mesh(Aabb::sphere_box(), level, &LevelSet::unit_sphere()).unwrap();
            let c = vec![0.7; active.num_dofs()];
            assert!(compute_l2_error(&active, &c, |_| 0.7) < 1e-14);
            let lin = active.interpolate(|x| 2.0 * x[0] - x[2]);
            assert!(compute_l2_error(&active, &lin, |x| 2.0 * x[0] - x[2]) < 1e-13);
            assert!(interpolant_l2_error(&active, &lin, |x| 2.0 * x[0] - x[2]) < 1e-14);
        }
    }
}
