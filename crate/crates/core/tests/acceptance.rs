//! End-to-end acceptance checks. Runs without the libtest harness so every
//! check prints its own PASS/FAIL line; the process fails if any check does.

use std::time::Instant;

use bifactor_alm::alm::{alm_fit, random_init};
use bifactor_alm::cli;
use bifactor_alm::model::{cholesky_factor_recursive, n_gamma};
use bifactor_alm::objective::{augmented_gradient, augmented_objective, AugLagCoefficients};
use bifactor_alm::seed::derive_seed;
use bifactor_alm::selection::masked_fit;
use bifactor_alm::simlab::{
    emc, generate_bifactor_truth, mse_lambda, run_study, sample_covariance, BlockBoundary, StudyKind, StudyReport,
    StudySpec,
};
use bifactor_alm::*;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BASE_SEED: u64 = 20240101;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn study(kind: StudyKind, j: usize, g: usize, n: usize, reps: usize) -> StudyReport {
    let spec = StudySpec {
        kind,
        j,
        g,
        n,
        candidates: None,
        boundary: BlockBoundary::Disjoint,
    };
    run_study(&spec, reps, BASE_SEED, &AlmConfig::default()).expect("study runs")
}

fn noiseless_recovery() -> Outcome {
    let truth = generate_bifactor_truth(15, 3, BASE_SEED).unwrap();
    let data = truth.population_cov(2000).unwrap();
    let config = AlmConfig {
        delta1: 1e-4,
        delta2: 1e-4,
        seed: BASE_SEED,
        ..AlmConfig::default()
    };
    let fit = multi_start_fit(&data, &bifactor_constraint_pairs(3), &config).unwrap();
    let e = emc(&fit.structure.groups, &truth.partition);
    let mse = mse_lambda(&fit.params.lambda, &truth.lambda).unwrap();
    outcome(
        e == 1.0 && fit.loss < 1e-6 && mse < 1e-6,
        format!("EMC {e}, loss {:.2e}, MSE {mse:.2e}", fit.loss),
    )
}

fn mask_of(groups: &[usize], g: usize) -> DMatrix<bool> {
    DMatrix::from_fn(groups.len(), g + 1, |i, c| c == 0 || groups[i] == c)
}

fn oracle_equivalence() -> Outcome {
    let mut agree = 0;
    for t in 0..10u64 {
        let truth = generate_bifactor_truth(6, 2, derive_seed(BASE_SEED, 100 + t)).unwrap();
        let data = sample_covariance(&truth, 5000, derive_seed(BASE_SEED, 200 + t)).unwrap();
        let config = AlmConfig {
            seed: derive_seed(BASE_SEED, 300 + t),
            ..AlmConfig::default()
        };
        let fit = multi_start_fit(&data, &bifactor_constraint_pairs(2), &config).unwrap();

        // exhaustive confirmatory fits over all 2^6 assignments
        let oracle_config = AlmConfig { n_starts: 10, ..config.clone() };
        let mut best: Option<(f64, Vec<usize>)> = None;
        for code in 0..64u32 {
            let assign: Vec<usize> = (0..6).map(|i| 1 + (code >> i & 1) as usize).collect();
            let Ok(m) = masked_fit(&data, &mask_of(&assign, 2), FactorCorrelation::Oblique, &oracle_config) else {
                continue;
            };
            if best.as_ref().is_none_or(|(l, _)| m.loss < *l) {
                best = Some((m.loss, assign));
            }
        }
        let (_, assign) = best.expect("some confirmatory fit succeeds");
        let oracle: Vec<Vec<usize>> = (1..=2).map(|g| (0..6).filter(|&i| assign[i] == g).collect()).collect();
        if emc(&fit.structure.groups, &oracle) == 1.0 {
            agree += 1;
        }
    }
    outcome(agree >= 9, format!("{agree}/10 structures agree with the exhaustive oracle"))
}

fn study1_checks(low: &StudyReport, high: &StudyReport) -> Vec<(usize, &'static str, Outcome)> {
    let (a, b) = (&low.aggregate, &high.aggregate);
    let (e5, e2) = (a.emc.unwrap_or(0.0), b.emc.unwrap_or(0.0));
    let (c5, c2) = (a.acc.unwrap_or(0.0), b.acc.unwrap_or(0.0));
    let (m5, m2) = (a.mse_lambda.unwrap_or(f64::INFINITY), b.mse_lambda.unwrap_or(f64::INFINITY));
    vec![
        (
            3,
            "study I EMC at (15,3)",
            outcome(
                e5 >= 0.75 && e2 >= 0.90,
                format!("EMC {e5:.2} at N=500 (need 0.75), {e2:.2} at N=2000 (need 0.90)"),
            ),
        ),
        (
            4,
            "study I ACC at (15,3)",
            outcome(c5 >= 0.97 && c2 >= 0.97, format!("ACC {c5:.4} at N=500, {c2:.4} at N=2000 (need 0.97)")),
        ),
        (
            5,
            "study I MSE decreases with N",
            outcome(m2 < m5, format!("MSE {m5:.5} at N=500, {m2:.5} at N=2000")),
        ),
    ]
}

fn study2_selection() -> Outcome {
    let small = study(StudyKind::Study2, 15, 3, 2000, 20);
    let large = study(StudyKind::Study2, 30, 5, 500, 10);
    let (sa, se) = (small.aggregate.sc.unwrap_or(0.0), small.aggregate.sc_efa.unwrap_or(0.0));
    let (la, le) = (large.aggregate.sc.unwrap_or(0.0), large.aggregate.sc_efa.unwrap_or(0.0));
    outcome(
        sa >= 0.95 && se >= 0.95 && la >= le - 0.1,
        format!("(15,3) N=2000: ALM SC {sa:.2}, EFA SC {se:.2}; (30,5) N=500: ALM SC {la:.2}, EFA SC {le:.2}"),
    )
}

fn hierarchical_recovery() -> Outcome {
    let a = study(StudyKind::Hier, 20, 6, 2000, 10).aggregate;
    let b = study(StudyKind::Hier, 40, 6, 2000, 5).aggregate;
    let (e20, e40) = (a.emc.unwrap_or(0.0), b.emc.unwrap_or(0.0));
    outcome(
        e20 >= 0.7 && e40 >= 0.8 && a.failed == 0 && b.failed == 0,
        format!("EMC {e20:.2} at J=20 (need 0.7), {e40:.2} at J=40 (need 0.8)"),
    )
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / scale.max(1e-8)
}

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(BASE_SEED);
    let mut worst: f64 = 0.0;
    let instances = 120;
    for inst in 0..instances {
        let g = rng.random_range(1..=3usize);
        let j = rng.random_range((g + 2).max(3)..=10usize);
        let j = j - j % g;
        let truth = generate_bifactor_truth(j, g, rng.random()).unwrap();
        let data = sample_covariance(&truth, 200, rng.random()).unwrap();
        let constraints = bifactor_constraint_pairs(g);
        let params = FactorParams {
            lambda: DMatrix::from_fn(j, g + 1, |_, _| rng.random_range(-1.0..1.0)),
            gamma: DVector::from_fn(n_gamma(g), |_, _| rng.random_range(-1.0..1.0)),
            psi: DVector::from_fn(j, |_, _| rng.random_range(0.5..1.5)),
            correlation: FactorCorrelation::Oblique,
        };
        let beta = DMatrix::from_fn(j, constraints.len(), |_, _| rng.random_range(-2.0..2.0));
        let coeffs = AugLagCoefficients::new(beta, rng.random_range(0.1..10.0)).unwrap();
        let grad = augmented_gradient(&params, &coeffs, &constraints, &data).unwrap();
        let f = |p: &FactorParams| augmented_objective(p, &coeffs, &constraints, &data).unwrap();
        let fd = |get: &dyn Fn(&mut FactorParams) -> &mut f64| {
            let mut up = params.clone();
            let mut dn = params.clone();
            let x = *get(&mut up);
            let h = 1e-6 * x.abs().max(1.0);
            *get(&mut up) = x + h;
            *get(&mut dn) = x - h;
            (f(&up) - f(&dn)) / (2.0 * h)
        };
        let lam: Vec<f64> = (0..j * (g + 1)).map(|k| fd(&|p: &mut FactorParams| &mut p.lambda[k])).collect();
        let gam: Vec<f64> = (0..n_gamma(g)).map(|k| fd(&|p: &mut FactorParams| &mut p.gamma[k])).collect();
        let psi: Vec<f64> = (0..j).map(|k| fd(&|p: &mut FactorParams| &mut p.psi[k])).collect();
        for (fd, an) in [(lam, grad.lambda.as_slice()), (psi, grad.psi.as_slice())] {
            worst = worst.max(rel_err(an, &fd));
        }
        if g > 1 {
            worst = worst.max(rel_err(grad.gamma.as_slice(), &gam));
        }
        let _ = inst;
    }
    outcome(worst < 1e-5, format!("{instances} instances, worst blockwise relative error {worst:.2e}"))
}

fn reparameterization_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(BASE_SEED);
    let mut failures = 0;
    let mut compared = 0;
    let mut worst_gap: f64 = 0.0;
    let trials = 1200;
    for _ in 0..trials {
        let g = rng.random_range(1..=6usize);
        let gamma: Vec<f64> = (0..n_gamma(g)).map(|_| rng.random_range(-3.0..3.0)).collect();
        let phi = build_phi(&gamma, g).unwrap().into_matrix();
        let unit = (0..=g).all(|k| phi[(k, k)] == 1.0);
        let sym = phi == phi.transpose();
        let general = (1..=g).all(|k| phi[(0, k)] == 0.0 && phi[(k, 0)] == 0.0);
        let pd = phi.clone().symmetric_eigen().eigenvalues.min() > 0.0;
        if !(unit && sym && general && pd) {
            failures += 1;
        }
        if let Some(rec) = cholesky_factor_recursive(&gamma, g).unwrap() {
            compared += 1;
            let prod = bifactor_alm::model::cholesky_factor(&gamma, g).unwrap();
            worst_gap = worst_gap.max((rec - prod).amax());
        }
    }
    outcome(
        failures == 0 && worst_gap < 1e-12,
        format!("{trials} draws, {failures} property failures, {compared} recursive comparisons, max gap {worst_gap:.1e}"),
    )
}

fn alm_mechanics() -> Outcome {
    let config = AlmConfig {
        record_trace: true,
        ..AlmConfig::default()
    };
    let mut problems = Vec::new();
    let mut steps = 0;
    let mut jumps = 0;
    let mut converged = 0;
    for run in 0..12u64 {
        let g = 2 + (run % 3) as usize;
        let truth = generate_bifactor_truth(5 * g, g, derive_seed(BASE_SEED, 400 + run)).unwrap();
        let data = sample_covariance(&truth, 500, derive_seed(BASE_SEED, 500 + run)).unwrap();
        let cons = bifactor_constraint_pairs(g);
        let fit = alm_fit(&data, &cons, &config, random_init(&data, &cons, run)).unwrap();
        let trace = fit.trace.as_ref().unwrap();
        for (k, s) in trace.iter().enumerate() {
            steps += 1;
            if s.c_next != s.c && s.c_next != s.c * config.c_sigma {
                problems.push(format!("run {run} step {k}: c {} -> {}", s.c, s.c_next));
            }
            if s.c_next != s.c {
                jumps += 1;
            }
            if let Some(next) = trace.get(k + 1) {
                if next.restart == s.restart && next.c != s.c_next {
                    problems.push(format!("run {run} step {k}: penalty not carried forward"));
                }
            }
            if s.beta_next != &s.beta + &s.residuals * s.c {
                problems.push(format!("run {run} step {k}: multiplier update"));
            }
        }
        if fit.converged {
            converged += 1;
            let last = trace.last().unwrap();
            if !(last.param_change < config.delta1 && last.criterion < config.delta2 && fit.max_second_largest < config.delta2)
            {
                problems.push(format!("run {run}: converged without meeting the stopping rule"));
            }
        }
    }
    outcome(
        problems.is_empty() && converged > 0,
        format!(
            "{steps} outer steps, {jumps} penalty increases, {converged}/12 converged{}",
            if problems.is_empty() { String::new() } else { format!("; {}", problems.join("; ")) }
        ),
    )
}

fn determinism() -> Outcome {
    let args = [
        "bifactor", "simulate", "--study", "study1", "--j", "6", "--g", "2", "--n", "300", "--reps", "4", "--starts", "8",
        "--seed", "17",
    ];
    let run = |fmt: &str| {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let mut a: Vec<&str> = args.to_vec();
        a.extend(["--out-format", fmt]);
        let code = cli::run(a, &mut out, &mut err);
        (code, out)
    };
    let (c1, csv1) = run("csv");
    let (c2, csv2) = run("csv");
    let (c3, json1) = run("json");
    let (c4, json2) = run("json");
    let ok = [c1, c2, c3, c4].iter().all(|&c| c == 0) && csv1 == csv2 && json1 == json2 && !csv1.is_empty();
    outcome(ok, format!("CSV {} bytes, JSON {} bytes, identical across runs: {ok}", csv1.len(), json1.len()))
}

fn print_line(n: usize, name: &str, o: &Outcome, timing: &str) {
    println!("criterion {n:>2} {}: {name}: {} ({timing})", if o.pass { "PASS" } else { "FAIL" }, o.detail);
}

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |n: usize| filter.is_empty() || filter.iter().any(|f| f == &n.to_string());
    let mut results: Vec<(usize, Outcome)> = Vec::new();
    let checks: [(usize, &str, fn() -> Outcome); 2] = [
        (1, "noiseless exact recovery", noiseless_recovery),
        (2, "oracle equivalence at (6,2)", oracle_equivalence),
    ];
    let later: [(usize, &str, fn() -> Outcome); 6] = [
        (6, "study II selection by BIC", study2_selection),
        (7, "hierarchical recovery", hierarchical_recovery),
        (8, "gradient matches finite differences", gradient_check),
        (9, "correlation reparameterization", reparameterization_check),
        (10, "ALM penalty and multiplier mechanics", alm_mechanics),
        (11, "simulate is deterministic", determinism),
    ];
    let run = |list: &[(usize, &str, fn() -> Outcome)], results: &mut Vec<(usize, Outcome)>| {
        for &(n, name, f) in list {
            if wanted(n) {
                let t = Instant::now();
                let o = f();
                print_line(n, name, &o, &format!("{:.0}s", t.elapsed().as_secs_f64()));
                results.push((n, o));
            }
        }
    };

    run(&checks, &mut results);
    if wanted(3) || wanted(4) || wanted(5) {
        let t = Instant::now();
        let low = study(StudyKind::Study1, 15, 3, 500, 20);
        let high = study(StudyKind::Study1, 15, 3, 2000, 20);
        let timing = format!("{:.0}s shared", t.elapsed().as_secs_f64());
        for (n, name, o) in study1_checks(&low, &high) {
            if wanted(n) {
                print_line(n, name, &o, &timing);
                results.push((n, o));
            }
        }
    }
    run(&later, &mut results);

    let failed: Vec<usize> = results.iter().filter(|r| !r.1.pass).map(|r| r.0).collect();
    println!(
        "acceptance: {} passed, {} failed{}",
        results.len() - failed.len(),
        failed.len(),
        if failed.is_empty() { String::new() } else { format!(" {failed:?}") }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
