//! Minimizing movements: the incremental problems
//! `P^n ∈ argmin_P τ Ψ_{P^{n−1}}((P − P^{n−1})/τ) + E(t^n, P)`, the
//! piecewise-constant and piecewise-linear interpolants, De Giorgi's
//! variational interpolant, and trajectory production.
//!
//! # Incremental solver
//!
//! A step with time weight `r` (τ for a full step, `t − t^{n−1}` for a De
//! Giorgi sample) is solved in the reduced rates `U_a = V_a P_prev,a⁻¹`, where
//! `P_a = P_prev,a + r U_a P_prev,a`. In these coordinates the dissipation is
//! the separable sum `Σ_a m_a R_a(U_a)` and the smooth part is `E(t, P)/r` with
//! metric gradient `g_a = Ξ_a P_prev,aᵀ`. The iteration is proximal gradient,
//! `U⁺_a = prox_{s R_a}(U_a − s g_a)`, with Barzilai-Borwein step sizes
//! safeguarded by the majorization test
//! `E(U⁺)/r ≤ E(U)/r + ⟨g, U⁺ − U⟩_m + ‖U⁺ − U‖²_m / (2s)`.
//! Each accepted iterate decreases the incremental functional, and the
//! iteration starts at `U = 0` (the competitor `P = P_prev`), which is what
//! the comparison-slack certificate relies on.
//!
//! The stopping criterion is the Fenchel gap
//! `Ψ(V) + Ψ*(−Ξ) + ⟨Ξ, V⟩ = Σ_a m_a [R_a(U_a) + R*_a(−g_a) + g_a : U_a]`,
//! which vanishes exactly when `−Ξ ∈ ∂Ψ_{P_prev}(V)`.
//!
//! # Energy accounting
//!
//! For exact minimizers the value `φ(r)` of the rescaled problem satisfies
//! `φ'(r) = −Ψ*(−Ξ̃(r)) + 𝔓(t^{n−1} + r, P̃(r), Ξ̃(r))`, so each step obeys
//! `E(t^n, P^n) + τΨ(V^n) + ∫ Ψ*(−Ξ̃) = E(t^{n−1}, P^{n−1}) + ∫ 𝔓`.
//! The two integrals are approximated with [`EdiQuadrature`].

use serde::{Deserialize, Serialize};
use thiserror::Error as ThisError;

use crate::discretization::{DeformationField, PlasticField};
use crate::error::{Error, Result};
use crate::gradient_system::{GeneralizedGradientSystem, SubdiffSelection};
use crate::tensor::Mat;

/// Uniform partition of `[0, T]` into `N` steps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t_final: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(t_final: f64, n_steps: usize) -> Result<Self> {
        if !(t_final > 0.0 && t_final.is_finite()) {
            return Err(Error::Config(format!("final time must be positive, got {t_final}")));
        }
        if n_steps == 0 {
            return Err(Error::Config("number of time steps must be positive".into()));
        }
        Ok(Self { t_final, n_steps })
    }

    pub fn tau(&self) -> f64 {
        self.t_final / self.n_steps as f64
    }

    /// `t^n = n τ`, with `t^N = T` exactly.
    pub fn node(&self, n: usize) -> f64 {
        if n == self.n_steps {
            self.t_final
        } else {
            n as f64 * self.tau()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|n| self.node(n)).collect()
    }

    /// The step `n ≥ 1` with `t ∈ (t^{n−1}, t^n]`; `t = 0` maps to step 1.
    pub fn step_containing(&self, t: f64) -> Result<usize> {
        if !(t >= 0.0 && t <= self.t_final) {
            return Err(Error::TimeOutOfRange { t });
        }
        let mut n = ((t / self.tau()).ceil() as usize).clamp(1, self.n_steps);
        while n < self.n_steps && t > self.node(n) {
            n += 1;
        }
        while n > 1 && t <= self.node(n - 1) {
            n -= 1;
        }
        Ok(n)
    }
}

/// Quadrature of the per-step integrals of `Ψ*(−Ξ̃)` and `𝔓` over the De
/// Giorgi interpolant.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdiQuadrature {
    /// Right endpoint; uses the step solution itself, no extra solves.
    Endpoint,
    /// One sample at the step midpoint.
    #[default]
    Midpoint,
    /// Three-point Gauss-Legendre.
    Gauss3,
    /// Five-point Gauss-Legendre.
    Gauss5,
}

impl EdiQuadrature {
    /// `(θ, w)` pairs on `(0, 1]` with `Σ w = 1`.
    pub fn rule(self) -> Vec<(f64, f64)> {
        match self {
            EdiQuadrature::Endpoint => vec![(1.0, 1.0)],
            EdiQuadrature::Midpoint => vec![(0.5, 1.0)],
            EdiQuadrature::Gauss3 => {
                let a = 0.5 * (0.6f64).sqrt();
                vec![(0.5 - a, 5.0 / 18.0), (0.5, 8.0 / 18.0), (0.5 + a, 5.0 / 18.0)]
            }
            EdiQuadrature::Gauss5 => {
                let x1 = (5.0 - 2.0 * (10.0f64 / 7.0).sqrt()).sqrt() / 3.0;
                let x2 = (5.0 + 2.0 * (10.0f64 / 7.0).sqrt()).sqrt() / 3.0;
                let w1 = (322.0 + 13.0 * 70f64.sqrt()) / 900.0;
                let w2 = (322.0 - 13.0 * 70f64.sqrt()) / 900.0;
                vec![
                    (0.5 * (1.0 - x2), 0.5 * w2),
                    (0.5 * (1.0 - x1), 0.5 * w1),
                    (0.5, 0.5 * 128.0 / 225.0),
                    (0.5 * (1.0 + x1), 0.5 * w1),
                    (0.5 * (1.0 + x2), 0.5 * w2),
                ]
            }
        }
    }
}

/// Acceptance thresholds of the incremental solver.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepOptions {
    /// Fenchel gap tolerance, relative to `1 + |E|`.
    pub gap_tol: f64,
    /// Allowed violation of the comparison inequality, relative to `1 + |E|`.
    pub slack_tol: f64,
    pub max_iter: usize,
}

impl Default for StepOptions {
    fn default() -> Self {
        Self { gap_tol: 1e-6, slack_tol: 1e-10, max_iter: 10_000 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub step: StepOptions,
    pub quadrature: EdiQuadrature,
}

/// Certificates of one solved incremental problem.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepDiagnostics {
    /// `E(t, P)` at the solution.
    pub energy: f64,
    /// `E(t, P_prev)`, the value of the competitor.
    pub energy_prev: f64,
    /// `r Ψ_{P_prev}(V)`.
    pub psi_inc: f64,
    pub fenchel_gap: f64,
    /// `E(t, P_prev) − E(t, P) − r Ψ_{P_prev}(V)`.
    pub comparison_slack: f64,
    pub iterations: usize,
    pub inner_grad_norm: f64,
}

#[derive(Clone, Debug)]
pub struct StepSolution {
    pub p: PlasticField,
    /// Reduced rates `U_a = V_a P_prev,a⁻¹`.
    pub u: Vec<Mat>,
    /// Rates `V = (P − P_prev)/r`.
    pub v: Vec<Mat>,
    pub selection: SubdiffSelection,
    pub diagnostics: StepDiagnostics,
}

struct Iterate {
    u: Vec<Mat>,
    p: PlasticField,
    sel: SubdiffSelection,
    energy: f64,
    g: Vec<Mat>,
}

fn weighted_dot(w: &[f64], a: &[Mat], b: &[Mat]) -> f64 {
    w.iter().zip(a).zip(b).map(|((wi, x), y)| wi * x.frobenius_inner(y)).sum()
}

fn plastic_from_rates(p_prev: &PlasticField, u: &[Mat], r: f64) -> PlasticField {
    PlasticField { values: p_prev.values.iter().zip(u).map(|(pp, ua)| *pp + (*ua * *pp) * r).collect() }
}

// Infeasible or unsolvable trial points are rejected, not fatal.
fn is_trial_rejection(e: &Error) -> bool {
    matches!(
        e,
        Error::NonPositiveDeterminant { .. } | Error::InfiniteEnergyState | Error::InnerSolverDiverged { .. }
    )
}

fn evaluate<S: GeneralizedGradientSystem>(
    system: &mut S,
    t: f64,
    p_prev: &PlasticField,
    u: Vec<Mat>,
    r: f64,
) -> Result<Iterate> {
    let p = plastic_from_rates(p_prev, &u, r);
    let sel = system.subdifferential_select(t, &p)?;
    let g = sel.xi.iter().zip(&p_prev.values).map(|(x, pp)| *x * pp.transpose()).collect();
    Ok(Iterate { energy: sel.energy.value, u, p, sel, g })
}

fn fenchel_gap_reduced<S: GeneralizedGradientSystem>(system: &S, u: &[Mat], g: &[Mat]) -> f64 {
    let w = system.weights();
    (0..u.len())
        .map(|a| {
            w[a] * (system.reduced_density(a, &u[a]) + system.reduced_density_conj(a, &(-g[a]))
                + g[a].frobenius_inner(&u[a]))
        })
        .sum()
}

/// Solves the rescaled incremental problem
/// `min_P r Ψ_{P_prev}((P − P_prev)/r) + E(t, P)` starting from the reduced
/// rates `u0` (zero when `None`).
pub fn solve_incremental<S: GeneralizedGradientSystem>(
    system: &mut S,
    t: f64,
    p_prev: &PlasticField,
    r: f64,
    u0: Option<&[Mat]>,
    opts: &StepOptions,
    step: usize,
) -> Result<StepSolution> {
    let reject = |reason: String| Error::StepRejected { step, reason };
    let dim = system.dim();
    let n = p_prev.len();
    let w = system.weights().to_vec();
    let zero = vec![Mat::zeros(dim); n];

    let start = evaluate(system, t, p_prev, zero.clone(), r)?;
    let energy_prev = start.energy;
    let mut cur = match u0 {
        Some(u) if u.iter().any(|m| m.norm_sq() > 0.0) => match evaluate(system, t, p_prev, u.to_vec(), r) {
            Ok(it) if it.energy + r * dissipation_sum(system, &it.u) <= energy_prev => it,
            Ok(_) => start,
            Err(e) if is_trial_rejection(&e) => start,
            Err(e) => return Err(e),
        },
        _ => start,
    };

    let mut s = 1.0;
    let mut iterations = 0;
    loop {
        let gap = fenchel_gap_reduced(system, &cur.u, &cur.g);
        let scale = 1.0 + cur.energy.abs();
        if gap <= opts.gap_tol * scale {
            let psi_inc = r * dissipation_sum(system, &cur.u);
            let slack = energy_prev - cur.energy - psi_inc;
            if slack < -opts.slack_tol * scale {
                return Err(reject(format!("comparison slack {slack:e} below tolerance")));
            }
            let v = cur.u.iter().zip(&p_prev.values).map(|(ua, pp)| *ua * *pp).collect();
            let inner_grad_norm = cur.sel.energy.grad_norm;
            return Ok(StepSolution {
                diagnostics: StepDiagnostics {
                    energy: cur.energy,
                    energy_prev,
                    psi_inc,
                    fenchel_gap: gap,
                    comparison_slack: slack,
                    iterations,
                    inner_grad_norm,
                },
                p: cur.p,
                u: cur.u,
                v,
                selection: cur.sel,
            });
        }
        if iterations >= opts.max_iter {
            return Err(reject(format!("Fenchel gap {gap:e} above tolerance after {iterations} iterations")));
        }

        let noise = 4.0 * f64::EPSILON * cur.energy.abs() / r;
        let next = loop {
            if s < 1e-30 {
                return Err(reject(format!("proximal line search stalled at Fenchel gap {gap:e}")));
            }
            let trial_u: Vec<Mat> = (0..n).map(|a| system.prox_reduced(a, &(cur.u[a] - cur.g[a] * s), s)).collect();
            let du: Vec<Mat> = trial_u.iter().zip(&cur.u).map(|(a, b)| *a - *b).collect();
            let du_sq = weighted_dot(&w, &du, &du);
            if du_sq == 0.0 {
                return Err(reject(format!("proximal step vanished at Fenchel gap {gap:e}")));
            }
            match evaluate(system, t, p_prev, trial_u, r) {
                Ok(trial) => {
                    let model = cur.energy / r + weighted_dot(&w, &cur.g, &du) + du_sq / (2.0 * s);
                    if trial.energy / r <= model + noise {
                        break trial;
                    }
                }
                Err(e) if is_trial_rejection(&e) => {}
                Err(e) => return Err(e),
            }
            s *= 0.5;
        };

        let du: Vec<Mat> = next.u.iter().zip(&cur.u).map(|(a, b)| *a - *b).collect();
        let dg: Vec<Mat> = next.g.iter().zip(&cur.g).map(|(a, b)| *a - *b).collect();
        let curv = weighted_dot(&w, &du, &dg);
        s = if curv > 0.0 { (weighted_dot(&w, &du, &du) / curv).clamp(1e-12, 1e12) } else { (2.0 * s).min(1e12) };
        cur = next;
        iterations += 1;
    }
}

fn dissipation_sum<S: GeneralizedGradientSystem>(system: &S, u: &[Mat]) -> f64 {
    let w = system.weights();
    u.iter().enumerate().map(|(a, ua)| w[a] * system.reduced_density(a, ua)).sum()
}

/// One step of the scheme: time weight τ, energy time `t_n`, started from the
/// competitor `P = P_prev`.
pub fn incremental_step<S: GeneralizedGradientSystem>(
    system: &mut S,
    t_n: f64,
    p_prev: &PlasticField,
    tau: f64,
    opts: &StepOptions,
    step: usize,
) -> Result<StepSolution> {
    solve_incremental(system, t_n, p_prev, tau, None, opts, step)
}

/// `Ψ_{P_prev}(V) + Ψ*_{P_prev}(−Ξ) + ⟨Ξ, V⟩` with `V = (P_n − P_prev)/τ`.
pub fn euler_lagrange_residual<S: GeneralizedGradientSystem>(
    system: &S,
    p_prev: &PlasticField,
    p_n: &PlasticField,
    tau: f64,
    xi_n: &[Mat],
) -> Result<f64> {
    if p_n.len() != p_prev.len() {
        return Err(Error::DimensionMismatch { expected: p_prev.len(), found: p_n.len() });
    }
    let v: Vec<Mat> = p_n.values.iter().zip(&p_prev.values).map(|(a, b)| (*a - *b) * (1.0 / tau)).collect();
    let neg: Vec<Mat> = xi_n.iter().map(|x| -*x).collect();
    let pairing = weighted_dot(system.weights(), xi_n, &v);
    Ok(system.dissipation(p_prev, &v)? + system.dual_dissipation(p_prev, &neg)? + pairing)
}

/// State and certificates at one time node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub p: PlasticField,
    pub phi: DeformationField,
    pub xi: Vec<Mat>,
    /// `E(t^n, P^n)`.
    pub energy: f64,
    /// `τ Ψ_{P^{n−1}}(V^n)`.
    pub psi_inc: f64,
    /// Quadrature of `∫ Ψ*_{P^{n−1}}(−Ξ̃)` over the step.
    pub psi_star_inc: f64,
    /// Quadrature of `∫ 𝔓(r, P̃, Ξ̃)` over the step.
    pub power_inc: f64,
    /// `τ Ψ*_{P^{n−1}}(−Ξ^n)`.
    pub psi_star_end: f64,
    /// `τ 𝔓(t^n, P^n, Ξ^n)`.
    pub power_end: f64,
    pub fenchel_gap: f64,
    pub comparison_slack: f64,
    pub inner_grad_norm: f64,
    pub min_det_p: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub grid: TimeGrid,
    pub quadrature: EdiQuadrature,
    pub config_hash: String,
    /// Record `n` belongs to `t^n`; record 0 holds the initial datum.
    pub records: Vec<StepRecord>,
}

impl Trajectory {
    pub fn p0(&self) -> &PlasticField {
        &self.records[0].p
    }

    /// Index of the last stored node.
    pub fn last_index(&self) -> usize {
        self.records.len() - 1
    }

    pub fn is_complete(&self) -> bool {
        self.records.len() == self.grid.n_steps + 1
    }

    /// Approximate-EDI residual on `[t^s, t^t]` with the stored quadrature:
    /// `E(t^t) + Σ (ψ + ψ*) − E(t^s) − Σ 𝔓`.
    pub fn edi_residual(&self, s: usize, t: usize) -> f64 {
        if s >= t {
            return 0.0;
        }
        let body: f64 = self.records[s + 1..=t]
            .iter()
            .map(|r| r.psi_inc + r.psi_star_inc - r.power_inc)
            .sum();
        self.records[t].energy + body - self.records[s].energy
    }

    /// The same balance with endpoint values `ψ*_end`, `𝔓_end`.
    pub fn endpoint_residual(&self, s: usize, t: usize) -> f64 {
        if s >= t {
            return 0.0;
        }
        let body: f64 = self.records[s + 1..=t]
            .iter()
            .map(|r| r.psi_inc + r.psi_star_end - r.power_end)
            .sum();
        self.records[t].energy + body - self.records[s].energy
    }

    /// `edi_residual(0, n)` for every stored `n`.
    pub fn edi_prefix_residuals(&self) -> Vec<f64> {
        (0..self.records.len()).map(|n| self.edi_residual(0, n)).collect()
    }

    /// `Σ_n (ψ_inc + ψ*_inc)`.
    pub fn dissipation_sum(&self) -> f64 {
        self.records.iter().skip(1).map(|r| r.psi_inc + r.psi_star_inc).sum()
    }

    /// `Σ_n power_inc`.
    pub fn work_sum(&self) -> f64 {
        self.records.iter().skip(1).map(|r| r.power_inc).sum()
    }

    /// Stored rates `V^n = (P^n − P^{n−1})/τ`.
    pub fn rate(&self, n: usize) -> Vec<Mat> {
        let inv = 1.0 / self.grid.tau();
        self.records[n].p.values.iter().zip(&self.records[n - 1].p.values).map(|(a, b)| (*a - *b) * inv).collect()
    }

    pub fn interpolants(&self) -> Interpolants<'_> {
        Interpolants { traj: self }
    }
}

/// A run that stopped early; the trajectory holds every accepted step.
#[derive(Clone, Debug, ThisError)]
#[error("{error}")]
pub struct RunFailure {
    pub error: Error,
    pub partial: Option<Trajectory>,
}

fn initial_record<S: GeneralizedGradientSystem>(system: &mut S, p0: &PlasticField) -> Result<StepRecord> {
    let sel = system.subdifferential_select(0.0, p0)?;
    Ok(StepRecord {
        t: 0.0,
        p: p0.clone(),
        phi: sel.phi_star.clone(),
        xi: sel.xi.clone(),
        energy: sel.energy.value,
        psi_inc: 0.0,
        psi_star_inc: 0.0,
        power_inc: 0.0,
        psi_star_end: 0.0,
        power_end: 0.0,
        fenchel_gap: 0.0,
        comparison_slack: 0.0,
        inner_grad_norm: sel.energy.grad_norm,
        min_det_p: system.min_det(p0),
        iterations: 0,
    })
}

impl From<Error> for RunFailure {
    fn from(error: Error) -> Self {
        RunFailure { error, partial: None }
    }
}

/// Runs the scheme on `grid` from `p0`.
pub fn run<S: GeneralizedGradientSystem>(
    p0: &PlasticField,
    grid: TimeGrid,
    system: &mut S,
    opts: &RunOptions,
) -> std::result::Result<Trajectory, RunFailure> {
    let first = initial_record(system, p0).map_err(|error| RunFailure { error, partial: None })?;
    let mut traj = Trajectory { grid, quadrature: opts.quadrature, config_hash: String::new(), records: vec![first] };
    for n in 1..=grid.n_steps {
        match advance(system, &traj, n, opts) {
            Ok(rec) => traj.records.push(rec),
            Err(error) => return Err(RunFailure { error, partial: Some(traj) }),
        }
    }
    Ok(traj)
}

fn advance<S: GeneralizedGradientSystem>(
    system: &mut S,
    traj: &Trajectory,
    n: usize,
    opts: &RunOptions,
) -> Result<StepRecord> {
    let grid = traj.grid;
    let tau = grid.tau();
    let (t_prev, t_n) = (grid.node(n - 1), grid.node(n));
    let p_prev = traj.records[n - 1].p.clone();
    let sol = incremental_step(system, t_n, &p_prev, tau, &opts.step, n)?;

    let neg_xi: Vec<Mat> = sol.selection.xi.iter().map(|x| -*x).collect();
    let psi_star_end = tau * system.dual_dissipation(&p_prev, &neg_xi)?;
    let power_end = tau * system.power(t_n, &sol.selection);

    let (mut psi_star_inc, mut power_inc) = (0.0, 0.0);
    for (theta, weight) in opts.quadrature.rule() {
        let (psi_star, power) = if theta == 1.0 {
            (psi_star_end / tau, power_end / tau)
        } else {
            let r = theta * tau;
            let t = t_prev + r;
            let sample = solve_incremental(system, t, &p_prev, r, Some(&sol.u), &opts.step, n)?;
            let neg: Vec<Mat> = sample.selection.xi.iter().map(|x| -*x).collect();
            (system.dual_dissipation(&p_prev, &neg)?, system.power(t, &sample.selection))
        };
        psi_star_inc += weight * tau * psi_star;
        power_inc += weight * tau * power;
    }
    system.set_warm_start(sol.selection.phi_star.clone());

    Ok(StepRecord {
        t: t_n,
        min_det_p: system.min_det(&sol.p),
        phi: sol.selection.phi_star.clone(),
        xi: sol.selection.xi.clone(),
        energy: sol.diagnostics.energy,
        psi_inc: sol.diagnostics.psi_inc,
        psi_star_inc,
        power_inc,
        psi_star_end,
        power_end,
        fenchel_gap: sol.diagnostics.fenchel_gap,
        comparison_slack: sol.diagnostics.comparison_slack,
        inner_grad_norm: sol.diagnostics.inner_grad_norm,
        iterations: sol.diagnostics.iterations,
        p: sol.p,
    })
}

/// Piecewise-constant and piecewise-linear interpolants of a trajectory.
#[derive(Clone, Copy, Debug)]
pub struct Interpolants<'a> {
    traj: &'a Trajectory,
}

impl Interpolants<'_> {
    fn locate(&self, t: f64) -> Result<usize> {
        let n = self.traj.grid.step_containing(t)?;
        if n > self.traj.last_index() {
            return Err(Error::TimeOutOfRange { t });
        }
        Ok(n)
    }

    /// `P̄(t) = P^n` on `(t^{n−1}, t^n]`, `P̄(0) = P^0`.
    pub fn right_constant(&self, t: f64) -> Result<&PlasticField> {
        let n = self.locate(t)?;
        Ok(if t == 0.0 { &self.traj.records[0].p } else { &self.traj.records[n].p })
    }

    /// `P̲(t) = P^{n−1}` on `[t^{n−1}, t^n)`, `P̲(T) = P^N`.
    pub fn left_constant(&self, t: f64) -> Result<&PlasticField> {
        let n = self.locate(t)?;
        Ok(if t == self.traj.grid.node(n) { &self.traj.records[n].p } else { &self.traj.records[n - 1].p })
    }

    /// `P̂(t)`, linear between nodes.
    pub fn linear(&self, t: f64) -> Result<PlasticField> {
        let n = self.locate(t)?;
        let grid = self.traj.grid;
        if t == grid.node(n) {
            return Ok(self.traj.records[n].p.clone());
        }
        let lam = (t - grid.node(n - 1)) / grid.tau();
        let (a, b) = (&self.traj.records[n - 1].p, &self.traj.records[n].p);
        Ok(PlasticField { values: a.values.iter().zip(&b.values).map(|(x, y)| *x * (1.0 - lam) + *y * lam).collect() })
    }

    /// `P̂'(t) = (P^n − P^{n−1})/τ` on `(t^{n−1}, t^n]`.
    pub fn derivative(&self, t: f64) -> Result<Vec<Mat>> {
        Ok(self.traj.rate(self.locate(t)?))
    }
}

/// One evaluation of De Giorgi's variational interpolant.
#[derive(Clone, Debug)]
pub struct DeGiorgiSample {
    pub t: f64,
    pub step: usize,
    pub p: PlasticField,
    pub xi: Vec<Mat>,
    /// `Ψ_{P^{n−1}}((P̃ − P^{n−1})/(t − t^{n−1}))`.
    pub psi: f64,
    /// `Ψ*_{P^{n−1}}(−Ξ̃)`.
    pub psi_star: f64,
    pub power: f64,
    pub fenchel_gap: f64,
}

/// `P̃(t) ∈ argmin_P (t − t^{n−1}) Ψ_{P^{n−1}}((P − P^{n−1})/(t − t^{n−1})) + E(t, P)`.
pub fn de_giorgi_interpolant<S: GeneralizedGradientSystem>(
    traj: &Trajectory,
    t: f64,
    system: &mut S,
    opts: &StepOptions,
) -> Result<DeGiorgiSample> {
    let n = traj.interpolants().locate(t)?;
    let t_prev = traj.grid.node(n - 1);
    let r = t - t_prev;
    if !(r > 0.0) {
        return Err(Error::TimeOutOfRange { t });
    }
    let p_prev = &traj.records[n - 1].p;
    let u0: Vec<Mat> = traj.rate(n).iter().zip(&p_prev.values).map(|(v, pp)| *v * pp.inv().unwrap_or(Mat::identity(pp.dim()))).collect();
    system.set_warm_start(traj.records[n].phi.clone());
    let sol = solve_incremental(system, t, p_prev, r, Some(&u0), opts, n)?;
    let neg: Vec<Mat> = sol.selection.xi.iter().map(|x| -*x).collect();
    Ok(DeGiorgiSample {
        t,
        step: n,
        psi: sol.diagnostics.psi_inc / r,
        psi_star: system.dual_dissipation(p_prev, &neg)?,
        power: system.power(t, &sol.selection),
        fenchel_gap: sol.diagnostics.fenchel_gap,
        xi: sol.selection.xi,
        p: sol.p,
    })
}
