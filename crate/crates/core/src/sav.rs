//! SAV time stepping: BDF1, uniform and variable-step BDF2, the modified
//! energies with their discrete balance laws, and the adaptive controller.
//!
//! Every step solves one linear system of the form
//!
//! ```text
//! (ρα/Δt) M c + (A_M + S_h) μ                  = (ρ/Δt) M (β cⁿ − γ cⁿ⁻¹) + F
//! −ε² (A + S_h⁻¹) c + M μ − (1/2S²) w wᵀ c     = w [ (β rⁿ − γ rⁿ⁻¹)/(αS) − wᵀ(β cⁿ − γ cⁿ⁻¹)/(2αS²) ]
//! ```
//!
//! where w = (f0'(c_ref), ψ), S = √(E1(c_ref) + C), A_M is the mobility
//! stiffness at c_ref, and c_ref is cⁿ for BDF1 and 2cⁿ − cⁿ⁻¹ for BDF2.
//! The auxiliary variable then follows from
//! α r − β rⁿ + γ rⁿ⁻¹ = wᵀ(α c − β cⁿ + γ cⁿ⁻¹)/(2S).

use std::sync::{Arc, Mutex};

use crate::assembly::{
    assemble_f0prime_load, assemble_load, assemble_mobility_stiffness, compute_e1, l2_norm_gamma, CsrMatrix,
    GeometricForms,
};
use crate::mesh::ActiveMesh;
use crate::physics::{r_init, PhysicsParams};
use crate::solver::{BlockSystem, RankOne, RankOneSolver, SolveStats, SolverConfig};
use crate::{Error, Point, Result};

/// Solution at one time level.
#[derive(Clone, Debug, PartialEq)]
pub struct StateSnapshot {
    pub c: Vec<f64>,
    /// Chemical potential; zero for an initial state.
    pub mu: Vec<f64>,
    pub r: f64,
    pub t: f64,
    /// Step that produced this state (0 for an initial state).
    pub dt_used: f64,
}

impl StateSnapshot {
    fn check_finite(&self) -> Result<()> {
        if !self.r.is_finite() || self.c.iter().chain(&self.mu).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("state"));
        }
        Ok(())
    }
}

/// BDF coefficients α, β, γ for the step ratio q = Δtⁿ/Δtⁿ⁻¹.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SchemeCoefficients {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub q: f64,
}

impl SchemeCoefficients {
    pub fn bdf1() -> Self {
        Self { alpha: 1.0, beta: 1.0, gamma: 0.0, q: 1.0 }
    }

    pub fn bdf2_uniform() -> Self {
        Self { alpha: 1.5, beta: 2.0, gamma: 0.5, q: 1.0 }
    }

    pub fn variable(q: f64) -> Result<Self> {
        if !(q > 0.0 && q.is_finite()) {
            return Err(Error::InvalidParameter(format!("step ratio must be positive, got {q}")));
        }
        Ok(Self { alpha: (1.0 + 2.0 * q) / (1.0 + q), beta: 1.0 + q, gamma: q * q / (1.0 + q), q })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    Bdf1,
    Bdf2,
}

/// Diagnostics for one state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyReport {
    pub t: f64,
    pub dt: f64,
    pub modified_energy: f64,
    pub e1: f64,
    pub r: f64,
    /// |r² − (E1 + C)|
    pub r_consistency: f64,
    pub mass: f64,
    /// Absolute energy-balance residual of the step that produced the state
    /// (0 where no balance law applies).
    pub balance_residual: f64,
}

/// Termwise evaluation of a discrete energy balance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BalanceCheck {
    pub residual: f64,
    /// Magnitude of the largest term in the identity.
    pub scale: f64,
}

impl BalanceCheck {
    pub fn relative(&self) -> f64 {
        if self.scale > 0.0 {
            self.residual / self.scale
        } else {
            self.residual
        }
    }
}

/// Load f(x, t) on the c-equation.
pub type Forcing = Arc<dyn Fn(&Point, f64) -> f64 + Send + Sync>;

/// Everything a step needs that does not change between steps.
pub struct SavStepper<'a> {
    active: &'a ActiveMesh,
    forms: &'a GeometricForms,
    physics: PhysicsParams,
    forcing: Option<Forcing>,
    /// −ε² (A + S_h⁻¹)
    elastic: CsrMatrix,
    /// A + S_h⁻¹, used by the energies
    energy_form: CsrMatrix,
    solver: Mutex<RankOneSolver>,
}

impl<'a> SavStepper<'a> {
    pub fn new(active: &'a ActiveMesh, forms: &'a GeometricForms, physics: PhysicsParams, solver: SolverConfig) -> Result<Self> {
        physics.validate()?;
        solver.validate()?;
        if forms.num_dofs() != active.num_dofs() {
            return Err(Error::Dimension("forms and active mesh disagree on the DOF count".into()));
        }
        let energy_form = CsrMatrix::linear_combination(&[(1.0, &forms.stiffness), (1.0, &forms.stab_hinv)]);
        let eps2 = physics.epsilon * physics.epsilon;
        Ok(Self {
            active,
            forms,
            physics,
            forcing: None,
            elastic: energy_form.scaled(-eps2),
            energy_form,
            solver: Mutex::new(RankOneSolver::new(solver)),
        })
    }

    pub fn with_forcing(mut self, forcing: Forcing) -> Self {
        self.forcing = Some(forcing);
        self
    }

    pub fn active(&self) -> &ActiveMesh {
        self.active
    }

    pub fn forms(&self) -> &GeometricForms {
        self.forms
    }

    pub fn physics(&self) -> &PhysicsParams {
        &self.physics
    }

    fn check_len(&self, c: &[f64]) -> Result<()> {
        if c.len() != self.active.num_dofs() {
            return Err(Error::Dimension(format!("{} values for {} DOFs", c.len(), self.active.num_dofs())));
        }
        Ok(())
    }

    /// State at t with r = √(E1(c0) + C) and μ = 0.
    pub fn initial_state(&self, c0: Vec<f64>, t: f64) -> Result<StateSnapshot> {
        self.check_len(&c0)?;
        let r = r_init(compute_e1(self.active, &c0), self.physics.c_shift)?;
        let n = c0.len();
        let s = StateSnapshot { c: c0, mu: vec![0.0; n], r, t, dt_used: 0.0 };
        s.check_finite()?;
        Ok(s)
    }

    fn forcing_load(&self, t: f64) -> Option<Vec<f64>> {
        self.forcing.as_ref().map(|f| assemble_load(self.active, |x| f(x, t)))
    }

    fn mobility_operator(&self, c_ref: &[f64]) -> CsrMatrix {
        let amob = assemble_mobility_stiffness(self.active, c_ref, self.physics.mobility);
        CsrMatrix::linear_combination(&[(1.0, &amob), (1.0, &self.forms.stab_h)])
    }

    /// One step of the generic scheme. `hist_r` = β rⁿ − γ rⁿ⁻¹, `hist_c` = β cⁿ − γ cⁿ⁻¹.
    fn step(
        &self,
        coef: SchemeCoefficients,
        c_ref: &[f64],
        hist_c: Vec<f64>,
        hist_r: f64,
        dt: f64,
        t_new: f64,
    ) -> Result<(StateSnapshot, SolveStats)> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("time step must be positive, got {dt}")));
        }
        let PhysicsParams { rho, .. } = self.physics;
        let s = self.physics.sav_scale(compute_e1(self.active, c_ref))?;
        let w = assemble_f0prime_load(self.active, c_ref);
        let alpha = coef.alpha;

        let mut rhs = self.forms.mass.mul_vec(&hist_c);
        rhs.iter_mut().for_each(|v| *v *= rho / dt);
        if let Some(load) = self.forcing_load(t_new) {
            rhs.iter_mut().zip(&load).for_each(|(a, b)| *a += b);
        }
        let w_hist = dot(&w, &hist_c);
        let k = hist_r / (alpha * s) - w_hist / (2.0 * alpha * s * s);
        rhs.extend(w.iter().map(|wi| wi * k));

        let sys = BlockSystem {
            cc: self.forms.mass.scaled(rho * alpha / dt),
            cmu: self.mobility_operator(c_ref),
            muc: self.elastic.clone(),
            mumu: self.forms.mass.clone(),
            rank_one: RankOne { sigma: -1.0 / (2.0 * s * s), u: w.clone(), v: w.clone() },
            rhs,
        };
        let (c, mu, stats) = self.solver.lock().expect("solver lock poisoned").solve(&sys)?;
        let r = (hist_r + (alpha * dot(&w, &c) - w_hist) / (2.0 * s)) / alpha;
        let state = StateSnapshot { c, mu, r, t: t_new, dt_used: dt };
        state.check_finite()?;
        log::debug!("t = {t_new:.6} dt = {dt:.3e} residual = {:.2e}", stats.residual);
        Ok((state, stats))
    }

    /// Implicit Euler SAV step; mobility, w and S are taken at cⁿ.
    pub fn bdf1_step(&self, prev: &StateSnapshot, dt: f64) -> Result<StateSnapshot> {
        self.check_len(&prev.c)?;
        let coef = SchemeCoefficients::bdf1();
        Ok(self.step(coef, &prev.c, prev.c.clone(), prev.r, dt, prev.t + dt)?.0)
    }

    /// Uniform BDF2 SAV step; both history states must come from steps of size `dt`.
    pub fn bdf2_step(&self, prev2: &StateSnapshot, prev1: &StateSnapshot, dt: f64) -> Result<StateSnapshot> {
        if (prev1.dt_used - dt).abs() > 1e-12 * dt {
            return Err(Error::History(format!(
                "uniform BDF2 needs the last step to have size {dt}, got {}",
                prev1.dt_used
            )));
        }
        self.bdf2_with(SchemeCoefficients::bdf2_uniform(), prev2, prev1, dt)
    }

    /// Variable-step BDF2 with q = dt_n / dt_nm1.
    pub fn bdf2_variable_step(
        &self,
        prev2: &StateSnapshot,
        prev1: &StateSnapshot,
        dt_n: f64,
        dt_nm1: f64,
    ) -> Result<StateSnapshot> {
        if !(dt_nm1 > 0.0) {
            return Err(Error::History(format!("previous step must be positive, got {dt_nm1}")));
        }
        self.bdf2_with(SchemeCoefficients::variable(dt_n / dt_nm1)?, prev2, prev1, dt_n)
    }

    fn bdf2_with(&self, coef: SchemeCoefficients, prev2: &StateSnapshot, prev1: &StateSnapshot, dt: f64) -> Result<StateSnapshot> {
        self.check_len(&prev1.c)?;
        self.check_len(&prev2.c)?;
        if !(prev1.t > prev2.t) {
            return Err(Error::History("history states are not in time order".into()));
        }
        let c_ref = extrapolate(&prev1.c, &prev2.c);
        let hist_c: Vec<f64> = prev1.c.iter().zip(&prev2.c).map(|(a, b)| coef.beta * a - coef.gamma * b).collect();
        let hist_r = coef.beta * prev1.r - coef.gamma * prev2.r;
        Ok(self.step(coef, &c_ref, hist_c, hist_r, dt, prev1.t + dt)?.0)
    }

    /// (ε²/2)‖c‖²_{A+S_h⁻¹} + r²
    pub fn modified_energy_bdf1(&self, state: &StateSnapshot) -> f64 {
        let eps2 = self.physics.epsilon.powi(2);
        0.5 * eps2 * self.energy_form.quad_form(&state.c) + state.r * state.r
    }

    /// (ε²/2)(‖c‖² + ‖2c − cⁿ‖²)_{A+S_h⁻¹} + r² + (2r − rⁿ)² for the pair (cⁿ, c).
    pub fn modified_energy_bdf2(&self, prev: &StateSnapshot, state: &StateSnapshot) -> f64 {
        let eps2 = self.physics.epsilon.powi(2);
        let lifted = extrapolate(&state.c, &prev.c);
        let rl = 2.0 * state.r - prev.r;
        0.5 * eps2 * (self.energy_form.quad_form(&state.c) + self.energy_form.quad_form(&lifted)) + state.r * state.r + rl * rl
    }

    /// Dissipation (Δt/ρ) μᵀ(A_M + S_h)μ minus forcing work (Δt/ρ) μᵀF.
    fn dissipation(&self, c_ref: &[f64], next: &StateSnapshot, dt: f64) -> (f64, f64) {
        let k = dt / self.physics.rho;
        let diss = k * self.mobility_operator(c_ref).quad_form(&next.mu);
        let work = self.forcing_load(next.t).map_or(0.0, |f| k * dot(&f, &next.mu));
        (diss, work)
    }

    /// Residual of
    /// E(c) − E(cⁿ) + (ε²/2)‖d‖²_{A+S_h⁻¹} + (r − rⁿ)² + (Δt/ρ)μᵀ(A_M + S_h)μ − (Δt/ρ)μᵀF = 0,
    /// d = c − cⁿ, for a step produced by [`Self::bdf1_step`].
    pub fn energy_balance_residual_bdf1(&self, prev: &StateSnapshot, next: &StateSnapshot, dt: f64) -> BalanceCheck {
        let eps2 = self.physics.epsilon.powi(2);
        let d: Vec<f64> = next.c.iter().zip(&prev.c).map(|(a, b)| a - b).collect();
        let e_new = self.modified_energy_bdf1(next);
        let e_old = self.modified_energy_bdf1(prev);
        let t1 = 0.5 * eps2 * self.energy_form.quad_form(&d);
        let t2 = (next.r - prev.r).powi(2);
        let (t3, t4) = self.dissipation(&prev.c, next, dt);
        let terms = [e_new, e_old, t1, t2, t3, t4];
        BalanceCheck {
            residual: (e_new - e_old + t1 + t2 + t3 - t4).abs(),
            scale: terms.iter().fold(0.0, |m: f64, v| m.max(v.abs())),
        }
    }

    /// Uniform BDF2 analogue with e = c − 2cⁿ + cⁿ⁻¹:
    /// E(cⁿ, c) − E(cⁿ⁻¹, cⁿ) + (ε²/2)‖e‖² + (r − 2rⁿ + rⁿ⁻¹)² + (2Δt/ρ)(μᵀ(A_M + S_h)μ − μᵀF) = 0.
    pub fn energy_balance_residual_bdf2(
        &self,
        prev2: &StateSnapshot,
        prev1: &StateSnapshot,
        next: &StateSnapshot,
        dt: f64,
    ) -> BalanceCheck {
        let eps2 = self.physics.epsilon.powi(2);
        let e: Vec<f64> = (0..next.c.len()).map(|i| next.c[i] - 2.0 * prev1.c[i] + prev2.c[i]).collect();
        let e_new = self.modified_energy_bdf2(prev1, next);
        let e_old = self.modified_energy_bdf2(prev2, prev1);
        let t1 = 0.5 * eps2 * self.energy_form.quad_form(&e);
        let t2 = (next.r - 2.0 * prev1.r + prev2.r).powi(2);
        let (diss, work) = self.dissipation(&extrapolate(&prev1.c, &prev2.c), next, dt);
        let (t3, t4) = (2.0 * diss, 2.0 * work);
        let terms = [e_new, e_old, t1, t2, t3, t4];
        BalanceCheck {
            residual: (e_new - e_old + t1 + t2 + t3 - t4).abs(),
            scale: terms.iter().fold(0.0, |m: f64, v| m.max(v.abs())),
        }
    }

    /// Diagnostics for `state`; `modified_energy` and `balance_residual` are
    /// supplied by the caller because they depend on the scheme and history.
    pub fn report(&self, state: &StateSnapshot, modified_energy: f64, balance_residual: f64) -> EnergyReport {
        let e1 = compute_e1(self.active, &state.c);
        EnergyReport {
            t: state.t,
            dt: state.dt_used,
            modified_energy,
            e1,
            r: state.r,
            r_consistency: (state.r * state.r - (e1 + self.physics.c_shift)).abs(),
            mass: self.forms.mass_of(&state.c),
            balance_residual,
        }
    }

    /// Fixed-step run of `n_steps` steps. BDF2 is started with one BDF1 step.
    /// `observer` sees the initial state (with `None` as previous state) and
    /// every new state; an error from it aborts the run.
    pub fn run_fixed<O>(&self, scheme: Scheme, initial: StateSnapshot, dt: f64, n_steps: usize, mut observer: O) -> Result<StateSnapshot>
    where
        O: FnMut(&StateSnapshot, &EnergyReport) -> Result<()>,
    {
        let e0 = match scheme {
            Scheme::Bdf1 => self.modified_energy_bdf1(&initial),
            // no history yet: the pair (c⁰, c⁰)
            Scheme::Bdf2 => self.modified_energy_bdf2(&initial, &initial),
        };
        observer(&initial, &self.report(&initial, e0, 0.0))?;
        let mut prev2: Option<StateSnapshot> = None;
        let mut prev1 = initial;
        for _ in 0..n_steps {
            let (next, energy, balance) = match (scheme, &prev2) {
                (Scheme::Bdf2, Some(p2)) => {
                    let next = self.bdf2_step(p2, &prev1, dt)?;
                    let b = self.energy_balance_residual_bdf2(p2, &prev1, &next, dt);
                    let energy = self.modified_energy_bdf2(&prev1, &next);
                    (next, energy, b.residual)
                }
                _ => {
                    let next = self.bdf1_step(&prev1, dt)?;
                    let b = self.energy_balance_residual_bdf1(&prev1, &next, dt);
                    let energy = match scheme {
                        Scheme::Bdf1 => self.modified_energy_bdf1(&next),
                        Scheme::Bdf2 => self.modified_energy_bdf2(&prev1, &next),
                    };
                    (next, energy, b.residual)
                }
            };
            observer(&next, &self.report(&next, energy, balance))?;
            prev2 = Some(std::mem::replace(&mut prev1, next));
        }
        Ok(prev1)
    }
}

/// 2a − b
fn extrapolate(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| 2.0 * x - y).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Step-size controller of the adaptive BDF1/BDF2 pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeController {
    pub dt: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    pub tol: f64,
    pub zeta: f64,
    pub ratio_max: f64,
    pub max_retries: usize,
}

impl TimeController {
    pub fn new(dt: f64) -> Self {
        Self { dt, dt_min: 1e-7, dt_max: 10.0, tol: 1e-3, zeta: 0.9, ratio_max: 3.5, max_retries: 10 }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.dt_min > 0.0
            && self.dt_min <= self.dt
            && self.dt <= self.dt_max
            && self.zeta > 0.0
            && self.zeta <= 1.0
            && self.tol > 0.0
            && self.ratio_max >= 1.0;
        if !ok {
            return Err(Error::InvalidParameter(format!("inconsistent time controller {self:?}")));
        }
        Ok(())
    }

    /// ζ √(tol/e) Δt
    pub fn proposal(&self, estimate: f64, dt: f64) -> f64 {
        if estimate > 0.0 {
            self.zeta * (self.tol / estimate).sqrt() * dt
        } else {
            f64::INFINITY
        }
    }

    /// Step after an acceptance with the given estimate.
    pub fn grow(&self, estimate: f64, dt: f64) -> f64 {
        self.proposal(estimate, dt).min(self.ratio_max * dt).min(self.dt_max)
    }
}

/// A trial step that failed the error test.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rejection {
    pub dt: f64,
    pub estimate: f64,
    pub retry_dt: f64,
}

#[derive(Clone, Debug)]
pub struct AdaptiveOutcome {
    /// Accepted second-order state.
    pub state: StateSnapshot,
    pub estimate: f64,
    pub next_dt: f64,
    pub rejections: Vec<Rejection>,
}

/// Relative L²(Γ_h) distance between the first- and second-order solutions.
pub fn error_indicator(active: &ActiveMesh, c1: &[f64], c2: &[f64]) -> f64 {
    let diff: Vec<f64> = c1.iter().zip(c2).map(|(a, b)| a - b).collect();
    let denom = l2_norm_gamma(active, c2);
    let num = l2_norm_gamma(active, &diff);
    if denom > 0.0 {
        num / denom
    } else {
        num
    }
}

/// One accepted step of the adaptive scheme starting from the history
/// (prev2, prev1) with trial step `ctrl.dt`. On return `ctrl.dt` holds the
/// step proposed for the next call.
pub fn adapt_step(
    stepper: &SavStepper<'_>,
    ctrl: &mut TimeController,
    prev2: &StateSnapshot,
    prev1: &StateSnapshot,
) -> Result<AdaptiveOutcome> {
    ctrl.validate()?;
    let mut rejections = Vec::new();
    let mut dt = ctrl.dt;
    loop {
        if dt < ctrl.dt_min {
            return Err(Error::StepTooSmall { dt, dt_min: ctrl.dt_min });
        }
        let c1 = stepper.bdf1_step(prev1, dt)?;
        let c2 = stepper.bdf2_variable_step(prev2, prev1, dt, prev1.dt_used)?;
        let estimate = error_indicator(stepper.active(), &c1.c, &c2.c);
        if !estimate.is_finite() {
            return Err(Error::NonFinite("error indicator"));
        }
        if estimate <= ctrl.tol {
            let next_dt = ctrl.grow(estimate, dt);
            ctrl.dt = next_dt;
            return Ok(AdaptiveOutcome { state: c2, estimate, next_dt, rejections });
        }
        let retry_dt = ctrl.proposal(estimate, dt);
        log::debug!("rejected dt = {dt:.3e} (e = {estimate:.3e}), retrying with {retry_dt:.3e}");
        rejections.push(Rejection { dt, estimate, retry_dt });
        if rejections.len() > ctrl.max_retries {
            return Err(Error::TooManyRetries { retries: rejections.len(), t: prev1.t, estimate });
        }
        dt = retry_dt;
    }
}
