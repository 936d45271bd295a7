//! Acceptance suite: one pass/fail line per criterion, with its runtime budget.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vpmm::config::RunConfig;
use vpmm::constitutive::{
    d_elastic_w, dissipation_r, dissipation_r_conj, elastic_w, hardening_k, kirchhoff_stress, mandel_stress,
    DissipationParams, Material,
};
use vpmm::diagnostics::{
    chain_rule_check, conjugate_oracle, edb_residual, gradient_fd_suite, sampling, stress_control_survey,
    tau_refinement_study, FdOptions, SurveySpec,
};
use vpmm::discretization::{DirichletSet, LoadShape, LoadSpec, Mesh, Model, PlasticField};
use vpmm::gradient_system::{GeneralizedGradientSystem, InnerOptions, ViscoplasticSystem};
use vpmm::io::{trajectory_from_csv, trajectory_to_csv};
use vpmm::minimizing_movements::Trajectory;
use vpmm::tensor::{subsets, Mat};

type Check = Result<String, String>;

fn ensure(ok: bool, msg: String) -> Check {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

// sup_r (s − σ) r − (ν/p) r^p by ternary search on a concave function
fn conjugate_by_search(s: f64, dp: &DissipationParams) -> f64 {
    let f = |r: f64| (s - dp.sigma_yield) * r - dp.nu / dp.p * r.powf(dp.p);
    let (mut lo, mut hi) = (0.0, 1.0);
    while f(hi) > f(0.5 * hi) {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let (a, b) = (lo + (hi - lo) / 3.0, hi - (hi - lo) / 3.0);
        if f(a) < f(b) {
            lo = a;
        } else {
            hi = b;
        }
    }
    f(0.5 * (lo + hi)).max(0.0)
}

fn random_matrix(dim: usize, rng: &mut ChaCha8Rng, a: f64) -> Mat {
    sampling::uniform(dim, a, rng)
}

fn c1_conjugate() -> Check {
    let mut worst = [0.0f64; 2];
    for (k, p) in [2.0, 1.5].into_iter().enumerate() {
        for sigma in [0.5, 1.0, 2.0] {
            for nu in [0.5, 1.0] {
                let dp = DissipationParams { sigma_yield: sigma, nu, p };
                let mut rng = ChaCha8Rng::seed_from_u64(11);
                for _ in 0..100 {
                    let d = random_matrix(2, &mut rng, 1.0);
                    let xi = d * (rng.gen_range(0.0..4.0) * sigma / d.norm());
                    let err = (dissipation_r_conj(&xi, &dp) - conjugate_by_search(xi.norm(), &dp)).abs();
                    worst[k] = worst[k].max(err);
                }
                worst[k] = worst[k].max(conjugate_oracle(&dp, 100, 13, 2));
            }
        }
    }
    let inside = Mat::identity(2) * 0.3;
    let zero_inside = dissipation_r_conj(&inside, &DissipationParams { sigma_yield: 1.0, nu: 1.0, p: 2.0 }) == 0.0;
    ensure(
        worst[0] < 1e-8 && worst[1] < 1e-6 && zero_inside,
        format!("max error p=2 {:.2e} (< 1e-8), p=1.5 {:.2e} (< 1e-6)", worst[0], worst[1]),
    )
}

fn c2_fenchel_young() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (mut min_gap, mut max_eq) = (f64::INFINITY, 0.0f64);
    for k in 0..10_000 {
        let p = if k % 2 == 0 { 2.0 } else { 1.5 };
        let dp = DissipationParams { sigma_yield: rng.gen_range(0.2..2.0), nu: rng.gen_range(0.2..2.0), p };
        let dim = 2 + k % 2;
        let gap = |v: &Mat, xi: &Mat| dissipation_r(v, &dp) + dissipation_r_conj(xi, &dp) - xi.frobenius_inner(v);
        let v = random_matrix(dim, &mut rng, 2.0);
        let xi = random_matrix(dim, &mut rng, 3.0);
        min_gap = min_gap.min(gap(&v, &xi));
        // Subdifferential pair: Ξ = σ V/|V| + ν |V|^{p−2} V.
        let n = v.norm();
        let xi_v = v * (dp.sigma_yield / n + dp.nu * n.powf(dp.p - 2.0));
        max_eq = max_eq.max(gap(&v, &xi_v).abs() / (1.0 + xi_v.frobenius_inner(&v)));
        // V = 0 with Ξ in the yield ball.
        let ball = xi * (rng.gen_range(0.0..1.0) * dp.sigma_yield / xi.norm());
        max_eq = max_eq.max(gap(&Mat::zeros(dim), &ball).abs());
    }
    ensure(
        min_gap >= -1e-12 && max_eq <= 1e-10,
        format!("min gap {min_gap:.2e} (>= -1e-12), equality defect {max_eq:.2e} (<= 1e-10)"),
    )
}

// Determinant by cofactor expansion along the first row.
fn det_laplace(rows: &[Vec<f64>]) -> f64 {
    let n = rows.len();
    if n == 1 {
        return rows[0][0];
    }
    (0..n)
        .map(|j| {
            let sub: Vec<Vec<f64>> = rows[1..]
                .iter()
                .map(|r| r.iter().enumerate().filter(|(k, _)| *k != j).map(|(_, v)| *v).collect())
                .collect();
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            sign * rows[0][j] * det_laplace(&sub)
        })
        .sum()
}

fn compound_oracle(m: &Mat, s: usize) -> Vec<Vec<f64>> {
    let d = m.dim();
    let idx = subsets(d, s);
    idx.iter()
        .map(|r| idx.iter().map(|c| det_laplace(&r.iter().map(|&i| c.iter().map(|&j| m.get(i, j)).collect()).collect::<Vec<_>>())).collect())
        .collect()
}

fn mat_mul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    (0..a.len()).map(|i| (0..b[0].len()).map(|j| (0..b.len()).map(|k| a[i][k] * b[k][j]).sum()).collect()).collect()
}

fn frob(a: &[Vec<f64>]) -> f64 {
    a.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
}

fn diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn c3_algebra() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let ep = Material::example(3).elastic;
    let (mut cb, mut minors, mut cof, mut inv, mut ms, mut frame, mut plastic) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mesh = Mesh::fem2d(2, DirichletSet::Left).map_err(|e| e.to_string())?;
    let model = Model::new(mesh.clone(), Material::example(2), LoadSpec::zero(2), &Mat::identity(2), 0.0).map_err(|e| e.to_string())?;
    let system = ViscoplasticSystem::new(model, InnerOptions::fem2d());
    for k in 0..400 {
        let dim = 2 + k % 2;
        let a = sampling::glplus(dim, 1.0, &mut rng);
        let b = sampling::glplus(dim, 1.0, &mut rng);
        let (ma, mb, mab) = (a.minors_all(), b.minors_all(), (a * b).minors_all());
        for s in 1..=dim {
            let (ca, cbm) = (ma.compound(s), mb.compound(s));
            cb = cb.max(diff(&mab.compound(s), &mat_mul(&ca, &cbm)) / (frob(&ca) * frob(&cbm)));
            let oracle = compound_oracle(&a, s);
            minors = minors.max(diff(&ca, &oracle) / frob(&oracle));
        }
        let id = Mat::identity(dim);
        let scale = a.norm().powi(dim as i32);
        cof = cof.max((a * a.cofactor().transpose() - id * a.det()).norm() / scale);
        let ai = a.inv().map_err(|e| e.to_string())?;
        inv = inv.max((ai * a - id).norm().max((a * ai - id).norm()) / (a.norm() * ai.norm()));

        let f = sampling::glplus(3, 0.4, &mut rng);
        let m = mandel_stress(&f, &ep, 8.0).map_err(|e| e.to_string())?;
        let s = kirchhoff_stress(&f, &ep, 8.0).map_err(|e| e.to_string())?;
        let via_s = f.transpose() * s * f.inv_transpose().map_err(|e| e.to_string())?;
        ms = ms.max((m - via_s).norm() / (f.norm() * d_elastic_w(&f, &ep, 8.0).unwrap().norm() * f.norm() * f.inv().unwrap().norm()));
        let q = sampling::rotation(3, &mut rng);
        let w = elastic_w(&f, &ep, 8.0).to_f64();
        frame = frame.max((elastic_w(&(q * f), &ep, 8.0).to_f64() - w).abs() / w.max(1.0));

        let p = PlasticField { values: (0..mesh.n_p_nodes()).map(|_| sampling::glplus(2, 0.3, &mut rng)).collect() };
        let v: Vec<Mat> = (0..mesh.n_p_nodes()).map(|_| random_matrix(2, &mut rng, 1.0)).collect();
        let pt = sampling::glplus(2, 0.3, &mut rng);
        let p2 = PlasticField { values: p.values.iter().map(|m| *m * pt).collect() };
        let v2: Vec<Mat> = v.iter().map(|m| *m * pt).collect();
        let d1 = system.dissipation(&p, &v).map_err(|e| e.to_string())?;
        let d2 = system.dissipation(&p2, &v2).map_err(|e| e.to_string())?;
        plastic = plastic.max((d1 - d2).abs() / d1.max(1.0));
    }
    let ok = cb <= 1e-10 && minors <= 1e-10 && cof <= 1e-11 && inv <= 1e-11 && ms <= 1e-10 && frame <= 1e-12 && plastic <= 1e-12;
    ensure(
        ok,
        format!(
            "Cauchy-Binet {cb:.1e}, minors {minors:.1e}, cofactor {cof:.1e}, inverse {inv:.1e}, M-S {ms:.1e}, frame {frame:.1e}, plastic {plastic:.1e}"
        ),
    )
}

fn c4_gradients() -> Check {
    let load = |d: usize| LoadSpec { force: (0..d).map(|i| 1.0 - 0.5 * i as f64).collect(), shape: LoadShape::Ramp { rate: 2.0 } };
    let models = [
        ("point d=2", Model::new(Mesh::unit_point(2, false), Material::example(2), load(2), &Mat::identity(2), 0.1)),
        ("point d=3", Model::new(Mesh::unit_point(3, false), Material::example(3), load(3), &Mat::identity(3), 0.1)),
        (
            "fem2d",
            Model::new(Mesh::fem2d(4, DirichletSet::Left).unwrap(), Material::example(2), load(2), &Mat::identity(2), 0.1),
        ),
    ];
    let mut parts = Vec::new();
    let mut ok = true;
    for (name, model) in models {
        let model = model.map_err(|e| e.to_string())?;
        let rep = gradient_fd_suite(&model, &FdOptions::new(20, 41));
        let broken = gradient_fd_suite(&model, &FdOptions { corruption: 1.0, ..FdOptions::new(1, 41) });
        let constant = gradient_fd_suite(&model, &FdOptions { amplitude: 0.0, ..FdOptions::new(1, 41) });
        ok &= rep.passed(1e-5) && !broken.passed(1e-5) && constant.max_error() < 1e-9;
        parts.push(format!(
            "{name} {:.1e} (control {:.1e}, constant fields {:.1e})",
            rep.max_error(),
            broken.max_error(),
            constant.max_error()
        ));
    }
    ensure(ok, parts.join("; "))
}

fn c5_quasiconvexity() -> Check {
    let f0 = Mat::diag(&[1.1, 0.95]);
    let mesh = Mesh::fem2d(4, DirichletSet::Boundary).map_err(|e| e.to_string())?;
    let mat = Material::example(2);
    let model = Model::new(mesh.clone(), mat, LoadSpec::zero(2), &f0, 0.0).map_err(|e| e.to_string())?;
    let system = ViscoplasticSystem::new(model, InnerOptions { grad_tol: 1e-10, max_iter: 2000 });
    let p = PlasticField::uniform(&mesh, Mat::identity(2));
    let mut start = system.model.reference.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    for v in start.dofs.iter_mut() {
        *v += rng.gen_range(-0.03..0.03);
    }
    let res = system.inner_minimize(0.0, &p, &start).map_err(|e| e.to_string())?;
    let area = mesh.area();
    let hardening = area * hardening_k(&Mat::identity(2), &mat.hardening).to_f64();
    let expected = area * elastic_w(&f0, &mat.elastic, mat.exponents.q_f).to_f64();
    let rel = (res.value - hardening - expected).abs() / expected;
    ensure(rel <= 1e-8, format!("inner minimum vs |Ω| W(F0): relative difference {rel:.2e} (<= 1e-8)"))
}

fn run(name: &str) -> Result<(RunConfig, Trajectory), String> {
    let cfg = RunConfig::reference(name).map_err(|e| e.to_string())?;
    let traj = cfg.execute().map_err(|e| e.to_string())?;
    Ok((cfg, traj))
}

fn step_certificates(traj: &Trajectory) -> (f64, f64) {
    let recs = &traj.records[1..];
    let gap = recs.iter().map(|r| r.fenchel_gap / (1.0 + r.energy.abs())).fold(0.0, f64::max);
    let slack = recs.iter().map(|r| r.comparison_slack / (1.0 + r.energy.abs())).fold(0.0, f64::min);
    (gap, slack)
}

fn c6_c7_reference_runs() -> (Check, Check) {
    let mut c6 = Vec::new();
    let mut c7 = Vec::new();
    let (mut ok6, mut ok7) = (true, true);
    for name in ["point_ramp", "fem2d_ramp"] {
        let (cfg, traj) = match run(name) {
            Ok(r) => r,
            Err(e) => return (Err(format!("{name}: {e}")), Err(format!("{name}: {e}"))),
        };
        let (gap, slack) = step_certificates(&traj);
        ok6 &= traj.is_complete() && gap <= 1e-6 && slack >= -1e-10;
        c6.push(format!("{name} N={} relative gap {gap:.1e}, slack {slack:.1e}", cfg.time.n_steps));
        let edi = traj.edi_prefix_residuals().into_iter().fold(f64::NEG_INFINITY, f64::max);
        let tol = 1e-6 * (1.0 + traj.records[0].energy.abs());
        ok7 &= edi <= tol;
        c7.push(format!("{name} max prefix residual {edi:.2e} (<= {tol:.2e})"));
    }
    (ensure(ok6, c6.join("; ")), ensure(ok7, c7.join("; ")))
}

fn c8_refinement() -> Check {
    let cfg = RunConfig::reference("point_ramp").map_err(|e| e.to_string())?;
    let mesh = cfg.mesh().map_err(|e| e.to_string())?;
    let runner = |n: usize| cfg.clone().with_overrides(None, Some(n)).map_err(vpmm::minimizing_movements::RunFailure::from)?.execute();
    let table = tau_refinement_study(16, 3, mesh.nodal_weights(), cfg.exponents.p, runner).map_err(|e| e.to_string())?;
    let diffs: Vec<String> = table.levels.iter().filter_map(|l| l.cauchy_difference).map(|d| format!("{d:.3e}")).collect();
    ensure(table.monotone_decrease && diffs.len() == 2, format!("N = 16, 32, 64: Cauchy differences {}", diffs.join(" > ")))
}

fn c9_regularized() -> Check {
    let base = RunConfig::reference("fem2d_regularized").map_err(|e| e.to_string())?;
    let mut edb = Vec::new();
    let mut defects = Vec::new();
    let mut excluded = 0;
    let mut scales = Vec::new();
    for n in [16, 32] {
        let cfg = base.clone().with_overrides(None, Some(n)).map_err(|e| e.to_string())?;
        let traj = cfg.execute().map_err(|e| e.to_string())?;
        let system = cfg.system().map_err(|e| e.to_string())?;
        let report = chain_rule_check(&traj, &system, cfg.eta);
        if !report.guaranteed {
            return Err("regularized run not labelled as guaranteed".into());
        }
        excluded += report.excluded.len();
        defects.push((report.max_defect, traj.grid.tau()));
        edb.push(edb_residual(&traj));
        scales.push(1.0 + traj.records[0].energy.abs());
    }
    let chain_ok = defects.iter().all(|(d, _)| *d <= 1e-3);
    let edb_ok = edb[1] < edb[0] && edb[1] <= 1e-3 * scales[1];
    ensure(
        chain_ok && edb_ok,
        format!(
            "chain-rule defect {:.1e} (N=16), {:.1e} (N=32) (<= 1e-3; {excluded} yield-switch steps excluded); EDB {:.2e} -> {:.2e} (<= {:.2e})",
            defects[0].0,
            defects[1].0,
            edb[0],
            edb[1],
            1e-3 * scales[1]
        ),
    )
}

fn c10_stress_survey() -> Check {
    let mut parts = Vec::new();
    let mut ok = true;
    for dim in [2, 3] {
        let ep = Material::example(dim).elastic;
        let q_f = Material::example(dim).exponents.q_f;
        let s = stress_control_survey(&ep, q_f, &SurveySpec::standard(dim));
        ok &= s.max_ratio <= s.bound && s.c5.is_finite() && s.samples.iter().all(|x| x.ratio.is_finite());
        parts.push(format!("d={dim}: max ratio {:.3} <= {:.3}, C5 {:.2} ({} states)", s.max_ratio, s.bound, s.c5, s.samples.len()));
    }
    ensure(ok, parts.join("; "))
}

fn c11_determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut bytes = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("run{k}"));
        let args = ["vpmm", "run", "--config", "point_ramp", "--out", out.to_str().unwrap()];
        let code = vpmm::cli::main_from(args);
        if code != 0 {
            return Err(format!("run exited with {code}"));
        }
        let csv = std::fs::read(out.join("point_ramp.csv")).map_err(|e| e.to_string())?;
        let json = std::fs::read(out.join("point_ramp.json")).map_err(|e| e.to_string())?;
        bytes.push((csv, json));
    }
    let identical = bytes[0] == bytes[1];
    let mut round_trips = true;
    for name in ["point_ramp", "fem2d_ramp"] {
        let (_, traj) = run(name)?;
        let text = trajectory_to_csv(&traj);
        let back = trajectory_from_csv(&text).map_err(|e| e.to_string())?;
        round_trips &= back == traj && trajectory_to_csv(&back) == text;
    }
    ensure(identical && round_trips, format!("identical outputs {identical}, lossless round trips {round_trips}"))
}

type Outcome = (usize, &'static str, Duration, Duration, Check);

fn timed(results: &mut Vec<Outcome>, id: usize, title: &'static str, budget: u64, f: fn() -> Check) {
    let t = Instant::now();
    let r = f();
    results.push((id, title, t.elapsed(), Duration::from_secs(budget), r));
}

fn main() {
    let start = Instant::now();
    let mut results = Vec::new();
    timed(&mut results, 1, "conjugate correctness", 5, c1_conjugate);
    timed(&mut results, 2, "Fenchel-Young", 5, c2_fenchel_young);
    timed(&mut results, 3, "algebraic identities", 5, c3_algebra);
    timed(&mut results, 4, "gradient suite", 30, c4_gradients);
    timed(&mut results, 5, "quasiconvexity baseline", 30, c5_quasiconvexity);
    let t = Instant::now();
    let (c6, c7) = c6_c7_reference_runs();
    let elapsed = t.elapsed();
    results.push((6, "per-step certificates", elapsed, Duration::from_secs(120), c6));
    results.push((7, "discrete EDI", elapsed, Duration::from_secs(120), c7));
    timed(&mut results, 8, "tau refinement", 120, c8_refinement);
    timed(&mut results, 9, "regularized chain rule and EDB", 300, c9_regularized);
    timed(&mut results, 10, "stress-control survey", 10, c10_stress_survey);
    timed(&mut results, 11, "determinism and serialization", 10, c11_determinism);

    let mut failures = 0;
    for (id, title, elapsed, budget, r) in &results {
        let in_time = elapsed <= budget;
        let (ok, msg) = match r {
            Ok(m) => (in_time, m.as_str()),
            Err(m) => (false, m.as_str()),
        };
        if !ok {
            failures += 1;
        }
        println!(
            "criterion {id:>2} {} {title}: {msg} [{:.2} s of {} s]",
            if ok { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    println!("acceptance: {} of {} criteria passed in {:.1} s", results.len() - failures, results.len(), start.elapsed().as_secs_f64());
    if failures > 0 {
        std::process::exit(1);
    }
}
