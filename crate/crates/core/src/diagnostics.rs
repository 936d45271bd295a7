//! Numerical certificates: energy-dissipation residuals, the chain-rule
//! defect, duality checks, stress-control surveys, finite-difference gradient
//! checks, and τ-refinement studies.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constitutive::{
    d_elastic_w, d_hardening_k, d_regularizer_wtilde, dissipation_r, dissipation_r_conj, elastic_w, gradient_term_h,
    hardening_k, mandel_stress, regularizer_wtilde, stress_control_bound, stress_control_ratio, subdiff_r,
    DissipationParams, ElasticParams, Subgradient,
};
use crate::discretization::{DeformationField, Model, PlasticField};
use crate::gradient_system::GeneralizedGradientSystem;
use crate::minimizing_movements::{RunFailure, Trajectory};
use crate::tensor::{Mat, Tensor3};

/// Random matrices for surveys.
pub mod sampling {
    use rand::Rng;

    use crate::tensor::Mat;

    /// Uniformly distributed rotation (Haar measure) in dimension 2 or 3.
    pub fn rotation<R: Rng>(dim: usize, rng: &mut R) -> Mat {
        if dim == 2 {
            let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            return Mat::from_rows([[a.cos(), -a.sin()], [a.sin(), a.cos()]]);
        }
        let q = loop {
            let q: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
            let n2: f64 = q.iter().map(|x| x * x).sum();
            if n2 > 1e-6 && n2 <= 1.0 {
                let n = n2.sqrt();
                break q.map(|x| x / n);
            }
        };
        let [w, x, y, z] = q;
        Mat::from_rows([
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - z * w), 2.0 * (x * z + y * w)],
            [2.0 * (x * y + z * w), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - x * w)],
            [2.0 * (x * z - y * w), 2.0 * (y * z + x * w), 1.0 - 2.0 * (x * x + y * y)],
        ])
    }

    /// `Q₁ diag(λ) Q₂` with `log λ_i` uniform in `[−spread, spread]`.
    pub fn glplus<R: Rng>(dim: usize, spread: f64, rng: &mut R) -> Mat {
        let lambdas: Vec<f64> = (0..dim).map(|_| rng.gen_range(-spread..=spread).exp()).collect();
        rotation(dim, rng) * Mat::diag(&lambdas) * rotation(dim, rng)
    }

    /// Matrix with independent entries uniform in `[−a, a]`.
    pub fn uniform<R: Rng>(dim: usize, a: f64, rng: &mut R) -> Mat {
        let mut m = Mat::zeros(dim);
        for i in 0..dim {
            for j in 0..dim {
                m.set(i, j, rng.gen_range(-a..=a));
            }
        }
        m
    }
}

/// One checked quantity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub name: String,
    /// The identity or inequality the value certifies.
    pub anchor: String,
    pub value: f64,
    pub tolerance: f64,
    /// `true` when the check is `value ≥ tolerance` rather than `≤`.
    pub lower_bound: bool,
    pub passed: bool,
    /// Steps, samples or levels the value was evaluated on.
    pub scope: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub schema: String,
    pub entries: Vec<ReportEntry>,
}

impl DiagnosticsReport {
    pub fn new() -> Self {
        Self { schema: crate::io::JSON_SCHEMA.to_string(), entries: Vec::new() }
    }

    /// Adds `value ≤ tolerance`.
    pub fn upper(&mut self, name: &str, anchor: &str, value: f64, tolerance: f64, scope: impl Into<String>) -> &mut ReportEntry {
        self.push(name, anchor, value, tolerance, false, scope.into())
    }

    /// Adds `value ≥ tolerance`.
    pub fn lower(&mut self, name: &str, anchor: &str, value: f64, tolerance: f64, scope: impl Into<String>) -> &mut ReportEntry {
        self.push(name, anchor, value, tolerance, true, scope.into())
    }

    fn push(&mut self, name: &str, anchor: &str, value: f64, tolerance: f64, lower_bound: bool, scope: String) -> &mut ReportEntry {
        let passed = if lower_bound { value >= tolerance } else { value <= tolerance };
        self.entries.push(ReportEntry {
            name: name.into(),
            anchor: anchor.into(),
            value,
            tolerance,
            lower_bound,
            passed,
            scope,
            note: None,
        });
        self.entries.last_mut().expect("just pushed")
    }

    pub fn all_passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_table(&self) -> String {
        let width = self.entries.iter().map(|e| e.name.len()).max().unwrap_or(4).max(4);
        let mut out = format!("{:<width$}  {:>12}  {:>2}  {:>12}  {:<4}  scope\n", "name", "value", "", "tolerance", "ok");
        for e in &self.entries {
            let op = if e.lower_bound { ">=" } else { "<=" };
            let ok = if e.passed { "pass" } else { "FAIL" };
            let _ = writeln!(out, "{:<width$}  {:>12.4e}  {op}  {:>12.4e}  {ok:<4}  {}", e.name, e.value, e.tolerance, e.scope);
            if let Some(note) = &e.note {
                let _ = writeln!(out, "{:<width$}  note: {note}", "");
            }
        }
        out
    }
}

/// `E(t, P(t)) + Σ (ψ + ψ*) − E(s, P(s)) − Σ 𝔓` over the steps in `(s, t]`.
pub fn edi_residual(traj: &Trajectory, s_index: usize, t_index: usize) -> f64 {
    traj.edi_residual(s_index, t_index)
}

/// `max_n |E(t^n) + Σ (ψ + τ R*(−Ξ^k)) − E(0) − Σ τ 𝔓(t^k)|`: the two-sided
/// balance defect over every prefix, with the piecewise-constant dual and
/// power terms taken at the step endpoints. It is `O(τ)` and vanishes only in
/// the time-continuous limit.
pub fn edb_residual(traj: &Trajectory) -> f64 {
    (0..traj.records.len()).map(|n| traj.endpoint_residual(0, n).abs()).fold(0.0, f64::max)
}

/// Result of [`chain_rule_check`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainRuleReport {
    pub max_defect: f64,
    /// `(n, relative defect)` for every checked interior step.
    pub defects: Vec<(usize, f64)>,
    /// Interior steps skipped because a node changed yield state.
    pub excluded: Vec<usize>,
    /// Whether the chain rule is known to hold (regularized energy).
    pub guaranteed: bool,
    pub label: String,
}

fn yielding<S: GeneralizedGradientSystem>(system: &S, traj: &Trajectory, n: usize) -> Vec<bool> {
    let rec = &traj.records[n];
    rec.xi
        .iter()
        .zip(&rec.p.values)
        .enumerate()
        .map(|(a, (x, p))| (*x * p.transpose()).norm() > system.yield_radius(a))
        .collect()
}

/// Compares the central difference of `n ↦ E(t^n, P^n)` with
/// `⟨Ξ^n, (P^{n+1} − P^{n−1})/(2τ)⟩ + 𝔓(t^n, P^n, Ξ^n)` at interior steps.
/// The relative defect is `|lhs − rhs| / max(|lhs|, |rhs|, floor)` with
/// `floor = 1e-8 (1 + |E(0)|)/T`.
pub fn chain_rule_check<S: GeneralizedGradientSystem>(traj: &Trajectory, system: &S, eta: f64) -> ChainRuleReport {
    let tau = traj.grid.tau();
    let floor = 1e-8 * (1.0 + traj.records[0].energy.abs()) / traj.grid.t_final;
    let w = system.weights();
    let mut defects = Vec::new();
    let mut excluded = Vec::new();
    let last = traj.last_index();
    for n in 1..last {
        let states: Vec<Vec<bool>> = (n - 1..=n + 1).map(|k| yielding(system, traj, k)).collect();
        if states[0] != states[1] || states[1] != states[2] {
            excluded.push(n);
            continue;
        }
        let (prev, cur, next) = (&traj.records[n - 1], &traj.records[n], &traj.records[n + 1]);
        let lhs = (next.energy - prev.energy) / (2.0 * tau);
        let pairing: f64 = (0..cur.xi.len())
            .map(|a| w[a] * cur.xi[a].frobenius_inner(&((next.p.values[a] - prev.p.values[a]) * (0.5 / tau))))
            .sum();
        let rhs = pairing + cur.power_end / tau;
        let denom = lhs.abs().max(rhs.abs()).max(floor);
        defects.push((n, (lhs - rhs).abs() / denom));
    }
    let max_defect = defects.iter().map(|d| d.1).fold(0.0, f64::max);
    let guaranteed = eta > 0.0;
    let label = if guaranteed { "regularized energy" } else { "chain rule not guaranteed" };
    ChainRuleReport { max_defect, defects, excluded, guaranteed, label: label.into() }
}

/// Sample grid of [`stress_control_survey`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurveySpec {
    pub dim: usize,
    /// Log-spaced stretches per principal direction on `[10⁻³, 10³]`.
    pub n_lambda: usize,
    pub n_rotations: usize,
    /// Perturbations `N` with `|N − I| < 0.1` per state for the variation survey.
    pub n_variations: usize,
    pub seed: u64,
}

impl SurveySpec {
    pub fn standard(dim: usize) -> Self {
        Self { dim, n_lambda: if dim == 2 { 25 } else { 9 }, n_rotations: 4, n_variations: 4, seed: 7 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StressSample {
    pub lambdas: Vec<f64>,
    pub ratio: f64,
    pub variation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StressSurvey {
    pub max_ratio: f64,
    pub bound: f64,
    /// Empirical `sup |M(F) − M(FN)| / (|N − I| (W(F) + 1))`.
    pub c5: f64,
    pub samples: Vec<StressSample>,
}

fn lambda_grid(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n).map(|i| 10f64.powf(-3.0 + 6.0 * i as f64 / (n - 1) as f64)).collect()
}

/// Mandel ratio `|M(F)|/(W(F) + 1)` and its variation over
/// `F = Q diag(λ) Qᵀ`, against the analytic bound `q_F + η_W √d`.
pub fn stress_control_survey(ep: &ElasticParams, q_f: f64, spec: &SurveySpec) -> StressSurvey {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let grid = lambda_grid(spec.n_lambda);
    let mut combos: Vec<Vec<f64>> = vec![Vec::new()];
    for _ in 0..spec.dim {
        combos = combos.into_iter().flat_map(|c| grid.iter().map(move |&l| [c.clone(), vec![l]].concat())).collect();
    }
    let mut samples = Vec::with_capacity(combos.len() * spec.n_rotations);
    for lambdas in combos {
        for _ in 0..spec.n_rotations {
            let q = sampling::rotation(spec.dim, &mut rng);
            let f = q * Mat::diag(&lambdas) * q.transpose();
            let ratio = stress_control_ratio(&f, ep, q_f).unwrap_or(f64::NAN);
            let m = mandel_stress(&f, ep, q_f).expect("F is in GL+");
            let w1 = elastic_w(&f, ep, q_f).to_f64() + 1.0;
            let mut variation = 0.0f64;
            for _ in 0..spec.n_variations {
                let dir = sampling::uniform(spec.dim, 1.0, &mut rng);
                let size = 0.1 * rng.gen_range(0.01..0.99);
                let delta = dir * (size / dir.norm());
                let fnn = f * (Mat::identity(spec.dim) + delta);
                let mn = mandel_stress(&fnn, ep, q_f).expect("N keeps det > 0");
                variation = variation.max((m - mn).norm() / (delta.norm() * w1));
            }
            samples.push(StressSample { lambdas: lambdas.clone(), ratio, variation });
        }
    }
    let max_ratio = samples.iter().map(|s| s.ratio).fold(f64::NEG_INFINITY, f64::max);
    let c5 = samples.iter().map(|s| s.variation).fold(0.0, f64::max);
    StressSurvey { max_ratio, bound: stress_control_bound(ep, q_f, spec.dim), c5, samples }
}

/// Maximum relative errors of the analytic derivatives against central
/// differences.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FdReport {
    pub phi_gradient: f64,
    pub p_gradient: f64,
    /// `(density, error)` for each pointwise derivative.
    pub densities: Vec<(String, f64)>,
    pub samples: usize,
}

impl FdReport {
    pub fn max_error(&self) -> f64 {
        self.densities.iter().map(|d| d.1).fold(self.phi_gradient.max(self.p_gradient), f64::max)
    }

    pub fn passed(&self, tol: f64) -> bool {
        self.max_error() < tol
    }
}

/// Options of [`gradient_fd_suite`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FdOptions {
    pub n_samples: usize,
    pub seed: u64,
    /// Size of random perturbations of `φ` and `P` away from the affine,
    /// plastically undeformed state; 0 gives constant fields.
    pub amplitude: f64,
    /// Added to the first free entry of every analytic gradient; nonzero only
    /// for negative controls.
    pub corruption: f64,
}

impl FdOptions {
    pub fn new(n_samples: usize, seed: u64) -> Self {
        Self { n_samples, seed, amplitude: 0.05, corruption: 0.0 }
    }
}

struct Fd {
    value: f64,
    grad: Vec<f64>,
}

// max_i |fd_i − g_i| / max(‖g‖_∞, |f(x)|, 1); the value term keeps rounding
// noise of large densities at critical points from reading as an error.
fn relative_error(fd: &Fd, analytic: &[f64]) -> f64 {
    let scale = analytic.iter().fold(fd.value.abs().max(1.0), |m, v| m.max(v.abs()));
    fd.grad.iter().zip(analytic).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale
}

// Fourth-order five-point central differences with h = 10⁻⁴ max(|x_i|, 1).
fn central_difference(x: &[f64], idx: &[usize], f: &mut dyn FnMut(&[f64]) -> f64) -> Fd {
    let value = f(x);
    let mut work = x.to_vec();
    let grad = idx
        .iter()
        .map(|&i| {
            let h = 1e-4 * x[i].abs().max(1.0);
            let mut at = |k: f64| {
                work[i] = x[i] + k * h;
                let v = f(&work);
                work[i] = x[i];
                v
            };
            (8.0 * (at(1.0) - at(-1.0)) - (at(2.0) - at(-2.0))) / (12.0 * h)
        })
        .collect();
    Fd { value, grad }
}

fn mat_fd(m: &Mat, f: &dyn Fn(&Mat) -> f64) -> Fd {
    let x = m.to_vec();
    let idx: Vec<usize> = (0..x.len()).collect();
    central_difference(&x, &idx, &mut |v| f(&Mat::from_row_slice(v)))
}

fn corrupt(g: &mut [f64], c: f64) {
    if let Some(first) = g.first_mut() {
        *first += c;
    }
}

/// Finite-difference check of the assembled `φ`- and `P`-gradients of `model`
/// and of every pointwise density derivative, on random admissible states.
pub fn gradient_fd_suite(model: &Model, opts: &FdOptions) -> FdReport {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mesh = &model.mesh;
    let dim = mesh.dim();
    let mat = model.material;
    let q_f = mat.exponents.q_f;
    let p_exp = mat.exponents.p;
    let mut report = FdReport { samples: opts.n_samples, ..FdReport::default() };
    let mut dens = [0.0f64; 6];
    let free = mesh.free_dofs();
    let t = 0.3;

    for _ in 0..opts.n_samples {
        let (phi, p) = loop {
            let mut phi = model.reference.clone();
            for &i in &free {
                phi.dofs[i] += opts.amplitude * rng.gen_range(-1.0..1.0);
            }
            let values =
                (0..mesh.n_p_nodes()).map(|_| Mat::identity(dim) + sampling::uniform(dim, opts.amplitude, &mut rng)).collect();
            let p = PlasticField { values };
            if model.assemble_energy(t, &phi, &p).map(|e| e.is_finite()).unwrap_or(false) {
                break (phi, p);
            }
        };
        let energy = |phi: &DeformationField, p: &PlasticField| model.assemble_energy(t, phi, p).map(|e| e.to_f64()).unwrap_or(f64::NAN);

        if !free.is_empty() {
            let mut g = model.grad_phi_energy(t, &phi, &p).expect("finite state");
            let mut analytic: Vec<f64> = free.iter().map(|&i| g[i]).collect();
            corrupt(&mut analytic, opts.corruption);
            let mut work = phi.clone();
            let fd = central_difference(&phi.dofs, &free, &mut |x| {
                work.dofs.copy_from_slice(x);
                energy(&work, &p)
            });
            report.phi_gradient = report.phi_gradient.max(relative_error(&fd, &analytic));
            g.clear();
        }

        let mut analytic: Vec<f64> = model.grad_p_energy(t, &phi, &p).expect("finite state").total().iter().flat_map(Mat::to_vec).collect();
        corrupt(&mut analytic, opts.corruption);
        let flat: Vec<f64> = p.values.iter().flat_map(Mat::to_vec).collect();
        let idx: Vec<usize> = (0..flat.len()).collect();
        let fd = central_difference(&flat, &idx, &mut |x| {
            let values = x.chunks(dim * dim).map(Mat::from_row_slice).collect();
            energy(&phi, &PlasticField { values })
        });
        report.p_gradient = report.p_gradient.max(relative_error(&fd, &analytic));

        // Pointwise densities at random matrices of the same kind.
        let f = Mat::identity(dim) + sampling::uniform(dim, 3.0 * opts.amplitude, &mut rng);
        let pm = p.values[0];
        let mut check = |k: usize, m: &Mat, an: Mat, func: &dyn Fn(&Mat) -> f64| {
            let mut a = an.to_vec();
            corrupt(&mut a, opts.corruption);
            dens[k] = dens[k].max(relative_error(&mat_fd(m, func), &a));
        };
        check(0, &f, d_elastic_w(&f, &mat.elastic, q_f).unwrap(), &|m| elastic_w(m, &mat.elastic, q_f).to_f64());
        check(1, &pm, d_hardening_k(&pm, &mat.hardening).unwrap(), &|m| hardening_k(m, &mat.hardening).to_f64());
        check(2, &f, d_regularizer_wtilde(&f, &mat.regularizer, p_exp).unwrap(), &|m| {
            regularizer_wtilde(m, &mat.regularizer, p_exp).to_f64()
        });
        let v = sampling::uniform(dim, 1.0, &mut rng);
        let dp = mat.dissipation;
        if let Subgradient::Unique(s) = subdiff_r(&v, &dp) {
            check(3, &v, s, &|m| dissipation_r(m, &dp));
        }
        let xi = v * (2.0 * dp.sigma_yield / v.norm());
        let d_conj = xi * ((xi.norm() - dp.sigma_yield).powf(dp.p_conj() - 1.0) / (dp.nu.powf(dp.p_conj() - 1.0) * xi.norm()));
        check(4, &xi, d_conj, &|m| dissipation_r_conj(m, &dp));

        let mut a = Tensor3::zeros(dim);
        for i in 0..dim {
            for j in 0..dim {
                for k in 0..dim {
                    a.set(i, j, k, rng.gen_range(-0.5..0.5));
                }
            }
        }
        let hp = mat.hardening;
        let q_g = mat.exponents.q_g;
        let h = gradient_term_h(&pm, &a, &hp, q_g).unwrap();
        let a_flat: Vec<f64> = (0..dim * dim * dim).map(|l| a.get(l / (dim * dim), (l / dim) % dim, l % dim)).collect();
        let mut an_a: Vec<f64> = (0..dim * dim * dim).map(|l| h.d_a.get(l / (dim * dim), (l / dim) % dim, l % dim)).collect();
        corrupt(&mut an_a, opts.corruption);
        let idx: Vec<usize> = (0..a_flat.len()).collect();
        let fd_a = central_difference(&a_flat, &idx, &mut |x| {
            let mut b = Tensor3::zeros(dim);
            for (l, v) in x.iter().enumerate() {
                b.set(l / (dim * dim), (l / dim) % dim, l % dim, *v);
            }
            gradient_term_h(&pm, &b, &hp, q_g).map(|r| r.value).unwrap_or(f64::NAN)
        });
        dens[5] = dens[5].max(relative_error(&fd_a, &an_a));
    }
    let names = ["elastic W", "hardening K", "regularizer W~", "dissipation R", "conjugate R*", "gradient term |A|^qG/qG"];
    report.densities = names.iter().zip(dens).map(|(n, e)| (n.to_string(), e)).collect();
    report
}

/// One row of a τ-refinement table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinementLevel {
    pub n_steps: usize,
    pub tau: f64,
    /// `‖P_τ(T) − P_{τ/2}(T)‖_{L^p}` against the next level, if any.
    pub cauchy_difference: Option<f64>,
    pub max_edi_residual: f64,
    pub edb_residual: f64,
    pub final_energy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinementTable {
    pub levels: Vec<RefinementLevel>,
    pub monotone_decrease: bool,
}

fn worker_threads() -> usize {
    std::env::var("VPMM_THREADS").ok().and_then(|v| v.parse().ok()).filter(|&n| n > 0).unwrap_or(1)
}

/// Runs `runner(N)` for `N = n0, 2 n0, …` (`levels` values) and tabulates the
/// Cauchy differences of the final plastic states in the lumped `L^p` norm.
/// Levels run on up to `VPMM_THREADS` worker threads.
pub fn tau_refinement_study<F>(
    n0: usize,
    levels: usize,
    weights: &[f64],
    p: f64,
    runner: F,
) -> Result<RefinementTable, RunFailure>
where
    F: Fn(usize) -> Result<Trajectory, RunFailure> + Sync,
{
    let ns: Vec<usize> = (0..levels).map(|k| n0 << k).collect();
    let threads = worker_threads().min(levels.max(1));
    let mut results: Vec<Option<Result<Trajectory, RunFailure>>> = (0..levels).map(|_| None).collect();
    if threads <= 1 {
        for (slot, &n) in results.iter_mut().zip(&ns) {
            *slot = Some(runner(n));
        }
    } else {
        let runner = &runner;
        std::thread::scope(|scope| {
            for chunk in results.chunks_mut(threads).zip(ns.chunks(threads)) {
                let handles: Vec<_> = chunk.1.iter().map(|&n| scope.spawn(move || runner(n))).collect();
                for (slot, h) in chunk.0.iter_mut().zip(handles) {
                    *slot = Some(h.join().expect("refinement worker panicked"));
                }
            }
        });
    }
    let trajs: Vec<Trajectory> = results.into_iter().map(|r| r.expect("every level ran")).collect::<Result<_, _>>()?;

    let mut rows = Vec::with_capacity(levels);
    for (k, traj) in trajs.iter().enumerate() {
        let last = &traj.records[traj.last_index()];
        let cauchy_difference = trajs.get(k + 1).map(|next| {
            let other = &next.records[next.last_index()].p;
            last.p
                .values
                .iter()
                .zip(&other.values)
                .zip(weights)
                .map(|((a, b), w)| w * (*a - *b).norm().powf(p))
                .sum::<f64>()
                .powf(1.0 / p)
        });
        rows.push(RefinementLevel {
            n_steps: traj.grid.n_steps,
            tau: traj.grid.tau(),
            cauchy_difference,
            max_edi_residual: traj.edi_prefix_residuals().into_iter().fold(f64::NEG_INFINITY, f64::max),
            edb_residual: edb_residual(traj),
            final_energy: last.energy,
        });
    }
    let diffs: Vec<f64> = rows.iter().filter_map(|r| r.cauchy_difference).collect();
    let monotone_decrease = diffs.windows(2).all(|w| w[1] < w[0]);
    Ok(RefinementTable { levels: rows, monotone_decrease })
}

/// `sup_{r ≥ 0} (s − σ) r − (ν/p) r^p` by bracketing the stationary point and
/// safeguarded Newton on the derivative.
pub fn brute_force_conjugate(s: f64, dp: &DissipationParams) -> f64 {
    let slope = s - dp.sigma_yield;
    if slope <= 0.0 {
        return 0.0;
    }
    let obj = |r: f64| slope * r - dp.nu / dp.p * r.powf(dp.p);
    let d = |r: f64| slope - dp.nu * r.powf(dp.p - 1.0);
    let dd = |r: f64| -dp.nu * (dp.p - 1.0) * r.powf(dp.p - 2.0);
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while d(hi) > 0.0 {
        lo = hi;
        hi *= 2.0;
    }
    let mut r = 0.5 * (lo + hi);
    for _ in 0..200 {
        let g = d(r);
        if g > 0.0 {
            lo = r;
        } else {
            hi = r;
        }
        let mut next = r - g / dd(r);
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (next - r).abs() <= 1e-15 * r.max(1e-300) {
            r = next;
            break;
        }
        r = next;
    }
    obj(r).max(0.0)
}

/// Maximum `|R*(Ξ) − brute force|` over seeded samples with `|Ξ|` spread
/// across and beyond the yield ball.
pub fn conjugate_oracle(dp: &DissipationParams, n_samples: usize, seed: u64, dim: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_samples)
        .map(|_| {
            let dir = sampling::uniform(dim, 1.0, &mut rng);
            let xi = dir * (rng.gen_range(0.0..4.0) * dp.sigma_yield / dir.norm());
            (dissipation_r_conj(&xi, dp) - brute_force_conjugate(xi.norm(), dp)).abs()
        })
        .fold(0.0, f64::max)
}

/// Fenchel–Young survey of `R`: the smallest `R(V) + R*(Ξ) − Ξ:V` over random
/// pairs, and the largest `|R(V) + R*(Ξ) − Ξ:V|` over subdifferential pairs.
pub fn fenchel_young_survey(dp: &DissipationParams, n_samples: usize, seed: u64, dim: usize) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gap = |v: &Mat, xi: &Mat| dissipation_r(v, dp) + dissipation_r_conj(xi, dp) - xi.frobenius_inner(v);
    let mut min_gap = f64::INFINITY;
    let mut max_eq = 0.0f64;
    for k in 0..n_samples {
        let v = sampling::uniform(dim, 2.0, &mut rng);
        let xi = sampling::uniform(dim, 2.0 * dp.sigma_yield, &mut rng);
        min_gap = min_gap.min(gap(&v, &xi));
        let pair = if k % 4 == 0 {
            // V = 0 with Ξ in the yield ball.
            let d = sampling::uniform(dim, 1.0, &mut rng);
            (Mat::zeros(dim), d * (rng.gen_range(0.0..1.0) * dp.sigma_yield / d.norm()))
        } else {
            match subdiff_r(&v, dp) {
                Subgradient::Unique(s) => (v, s),
                Subgradient::YieldBall { .. } => (v, Mat::zeros(dim)),
            }
        };
        max_eq = max_eq.max(gap(&pair.0, &pair.1).abs() / (1.0 + pair.1.frobenius_inner(&pair.0).abs()));
    }
    (min_gap, max_eq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constitutive::Material;
    use crate::discretization::{DirichletSet, LoadShape, LoadSpec, Mesh};

    #[test]
    fn identity_ratio_matches_closed_form() {
        let ep = Material::example(2).elastic;
        let r = stress_control_ratio(&Mat::identity(2), &ep, 6.0).unwrap();
        assert!((r - 22.0 * 2f64.sqrt() / 10.0).abs() < 1e-12);
        assert!((stress_control_bound(&ep, 6.0, 2) - (6.0 + 2.0 * 2f64.sqrt())).abs() < 1e-15);
    }

    #[test]
    fn survey_respects_bound_and_reports_finite_c5() {
        let ep = Material::example(2).elastic;
        let s = stress_control_survey(&ep, 6.0, &SurveySpec::standard(2));
        assert!(s.max_ratio <= s.bound);
        assert!(s.c5.is_finite() && s.c5 > 0.0);
        let extreme = s.samples.iter().find(|x| x.lambdas[0] == 1e-3).unwrap();
        assert!(extreme.ratio <= s.bound);
    }

    #[test]
    fn conjugate_oracle_examples() {
        let dp = DissipationParams { sigma_yield: 1.0, nu: 1.0, p: 2.0 };
        assert!(conjugate_oracle(&dp, 100, 1, 2) < 1e-8);
        let dp15 = DissipationParams { p: 1.5, ..dp };
        assert!(conjugate_oracle(&dp15, 100, 1, 2) < 1e-6);
        let inside = Mat::identity(2) * 0.5;
        assert_eq!(dissipation_r_conj(&inside, &dp), 0.0);
        assert_eq!(brute_force_conjugate(inside.norm(), &dp), 0.0);
    }

    #[test]
    fn fenchel_young_holds() {
        let dp = DissipationParams { sigma_yield: 1.5, nu: 0.5, p: 2.0 };
        let (min_gap, eq) = fenchel_young_survey(&dp, 2000, 3, 3);
        assert!(min_gap >= -1e-12);
        assert!(eq <= 1e-10);
    }

    #[test]
    fn fd_suite_passes_and_negative_control_fails() {
        let mat = Material::example(2);
        let mesh = Mesh::fem2d(2, DirichletSet::Left).unwrap();
        let load = LoadSpec { force: vec![1.0, 0.5], shape: LoadShape::Ramp { rate: 1.0 } };
        let model = Model::new(mesh, mat, load, &Mat::identity(2), 0.1).unwrap();
        let ok = gradient_fd_suite(&model, &FdOptions::new(3, 5));
        assert!(ok.passed(1e-5), "{ok:?}");
        let broken = gradient_fd_suite(&model, &FdOptions { corruption: 1.0, ..FdOptions::new(1, 5) });
        assert!(!broken.passed(1e-5));
        assert!(broken.phi_gradient > 1e-2 && broken.p_gradient > 1e-2);
    }

    fn reference(name: &str) -> (crate::config::RunConfig, Trajectory) {
        let cfg = crate::config::RunConfig::reference(name).unwrap();
        let traj = cfg.execute().unwrap();
        (cfg, traj)
    }

    #[test]
    fn stationary_trajectory_certificates_vanish() {
        let (cfg, traj) = reference("point_stationary");
        assert_eq!(edi_residual(&traj, 3, 3), 0.0);
        assert!(traj.edi_prefix_residuals().iter().all(|r| r.abs() <= 1e-12));
        assert_eq!(edb_residual(&traj), 0.0);
        let chain = chain_rule_check(&traj, &cfg.system().unwrap(), cfg.eta);
        assert_eq!(chain.max_defect, 0.0);
        assert!(!chain.guaranteed);
        assert_eq!(chain.label, "chain rule not guaranteed");
    }

    #[test]
    fn stationary_refinement_differences_vanish() {
        let cfg = crate::config::RunConfig::reference("point_stationary").unwrap();
        let w = cfg.mesh().unwrap().nodal_weights().to_vec();
        let table =
            tau_refinement_study(4, 3, &w, 2.0, |n| cfg.clone().with_overrides(None, Some(n)).unwrap().execute()).unwrap();
        assert!(table.levels.iter().filter_map(|l| l.cauchy_difference).all(|d| d == 0.0));
        assert!(!table.monotone_decrease);
    }

    #[test]
    fn one_sided_residual_below_balance_defect() {
        let (cfg, traj) = reference("fem2d_regularized");
        let edi = traj.edi_prefix_residuals().into_iter().fold(f64::NEG_INFINITY, f64::max);
        assert!(edi <= edb_residual(&traj));
        let chain = chain_rule_check(&traj, &cfg.system().unwrap(), cfg.eta);
        assert!(chain.guaranteed && chain.max_defect <= 1e-3);
    }

    #[test]
    fn constant_fields_have_exact_gradients() {
        let mesh = Mesh::fem2d(3, DirichletSet::Left).unwrap();
        let load = LoadSpec { force: vec![0.5, 0.0], shape: LoadShape::Constant };
        let model = Model::new(mesh, Material::example(2), load, &Mat::identity(2), 0.1).unwrap();
        let rep = gradient_fd_suite(&model, &FdOptions { amplitude: 0.0, ..FdOptions::new(1, 2) });
        assert!(rep.max_error() < 1e-9, "{rep:?}");
    }

    #[test]
    fn report_renders() {
        let mut r = DiagnosticsReport::new();
        r.upper("a", "energy-dissipation inequality", 1e-9, 1e-6, "steps 1..=4");
        r.lower("b", "comparison inequality", -1.0, 0.0, "steps 1..=4").note = Some("negative".into());
        assert!(!r.all_passed());
        let table = r.to_table();
        assert!(table.contains("FAIL") && table.contains("pass"));
        let back: DiagnosticsReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }
}
