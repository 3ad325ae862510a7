//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.

use std::time::{Duration, Instant};

use lgb_cli::means::{duality_residual, loewner_chain};
use lgb_core::closed_form::{
    expected_p_opt, expected_p_pess, expected_sqrt_p_opt, expected_sqrt_p_pess,
    mean_squared_distance, riemannian_mean_bound, SERIES_TOL,
};
use lgb_core::ifs::{
    average_contractivity, companion_stationary_samples, estimate_lipschitz, run_companion,
    run_ifs, sample_arrivals, stationary_samples, CompanionKind, RiccatiMap,
};
use lgb_core::means::{euclidean_mean, harmonic_mean, karcher_mean, sqrt_mean, KarcherOptions};
use lgb_core::metrics::{check_monotonicity, distance, geodesic};
use lgb_core::spd::{congruence, loewner_leq, random_invertible, random_spd, spd_inv};
use lgb_core::stats::mean_and_stderr;
use lgb_core::system::{steady_state, validate};
use lgb_core::{MetricKind, ScalarSystem, SpdMatrix, Symmetric, SystemModel};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Seed of every stochastic criterion, fixed before any run.
const SEED: u64 = 42;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn scalar_sys() -> ScalarSystem {
    ScalarSystem::new(2.0, 1.0, 1.0)
}

fn scalar_model() -> SystemModel {
    SystemModel::scalar(2.0, 1.0, 1.0)
}

fn rel_frobenius(a: &SpdMatrix, b: &SpdMatrix) -> f64 {
    (a.matrix() - b.matrix()).norm() / b.frobenius_norm()
}

fn thresholds() -> Outcome {
    let sys = scalar_sys();
    let mut grid: Vec<f64> = (0..12).map(|k| (40 + 5 * k) as f64 / 100.0).collect();
    grid.extend([0.75, 0.5]);
    let mut mismatches = Vec::new();
    for &g in &grid {
        let cov = [expected_p_opt(&sys, g), expected_p_pess(&sys, g)];
        let abs = [
            expected_sqrt_p_opt(&sys, g, SERIES_TOL),
            expected_sqrt_p_pess(&sys, g, SERIES_TOL),
        ];
        for r in cov {
            if r.map(|r| r.converged).unwrap_or(false) != (g > 0.75) {
                mismatches.push(format!("E{{P}}@{g}"));
            }
        }
        for r in abs {
            if r.map(|r| r.converged).unwrap_or(false) != (g > 0.5) {
                mismatches.push(format!("E{{sqrtP}}@{g}"));
            }
        }
    }
    outcome(
        mismatches.is_empty(),
        format!("{} grid points, mismatches: {:?}", grid.len(), mismatches),
    )
}

fn monte_carlo_vs_closed_form() -> Outcome {
    let sys = scalar_sys();
    let gamma = 0.8;
    let draws = match companion_stationary_samples(
        CompanionKind::Optimist,
        &sys,
        gamma,
        1000,
        100_000,
        10,
        SEED,
    ) {
        Ok(d) => d,
        Err(e) => return outcome(false, format!("sampling failed: {e}")),
    };
    let (mean, se) = mean_and_stderr(&draws);
    let target = 4.23608;
    let roots: Vec<f64> = draws.iter().map(|p| p.sqrt()).collect();
    let (root_mean, root_se) = mean_and_stderr(&roots);
    let root_target = expected_sqrt_p_opt(&sys, gamma, SERIES_TOL)
        .ok()
        .and_then(|r| r.value.finite())
        .unwrap_or(f64::NAN);
    let z = (mean - target).abs() / se;
    let z_root = (root_mean - root_target).abs() / root_se;
    outcome(
        z <= 3.0 && z_root <= 3.0,
        format!(
            "E{{P}}: mean {mean:.5} vs {target} ({z:.2} SE); E{{sqrtP}}: mean {root_mean:.6} vs {root_target:.6} ({z_root:.2} SE)"
        ),
    )
}

fn pathwise_sandwich() -> Outcome {
    let sys = scalar_sys();
    let model = scalar_model();
    let slack = 1e-9;
    let run = || -> lgb_core::Result<(usize, usize, f64)> {
        let arrivals = sample_arrivals(0.8, 100_000, SEED)?;
        let p_inf = steady_state(&model)?;
        let chain = run_ifs(&model, &arrivals, &p_inf)?;
        let p0 = p_inf.matrix()[(0, 0)];
        let opt = run_companion(CompanionKind::Optimist, &sys, &arrivals, p0)?;
        let pess = run_companion(CompanionKind::Pessimist, &sys, &arrivals, p0)?;
        let steps = chain
            .covariances
            .len()
            .min(opt.values.len())
            .min(pess.values.len());
        let mut violations = 0;
        let mut worst = f64::NEG_INFINITY;
        for k in 0..steps {
            let p = chain.covariances[k].matrix()[(0, 0)];
            let gap = (opt.values[k] - p).max(p - pess.values[k]);
            worst = worst.max(gap);
            if gap > slack {
                violations += 1;
            }
        }
        Ok((steps, violations, worst))
    };
    match run() {
        Ok((steps, violations, worst)) => outcome(
            steps == 100_001 && violations == 0,
            format!("{steps} states, {violations} violations, worst excess {worst:.3e}"),
        ),
        Err(e) => outcome(false, format!("run failed: {e}")),
    }
}

fn riemannian_mean_not_critical() -> Outcome {
    let model = scalar_model();
    let gamma = 0.3;
    let run = || -> lgb_core::Result<Outcome> {
        let set = stationary_samples(&model, gamma, 1000, 100_000, 10, SEED)?;
        if set.len() < 100_000 {
            return Ok(outcome(
                false,
                format!("overflow after {} draws", set.len()),
            ));
        }
        let small = &set.draws[..10_000];
        let options = KarcherOptions::default();
        let k_small = karcher_mean(small, options)?.mean;
        let k_large = karcher_mean(&set.draws, options)?.mean;
        let change = distance(MetricKind::AffineInvariant, &k_small, &k_large)?;
        let growth = euclidean_mean(&set.draws)?.mean.trace() / euclidean_mean(small)?.mean.trace();
        let bound = riemannian_mean_bound(&model, 1, gamma, SERIES_TOL)?;
        let p_inf = steady_state(&model)?;
        let (msd, se) = mean_squared_distance(&p_inf, &set.draws)?;
        let bound_value = bound.value.finite().unwrap_or(f64::INFINITY);
        let pass = change < 0.05
            && growth > 5.0
            && bound.converged
            && bound_value.is_finite()
            && bound_value >= msd - 3.0 * se;
        Ok(outcome(
            pass,
            format!(
                "Karcher change {change:.4}; flat-cov trace growth x{growth:.3e}; bound {bound_value:.4} vs E{{d^2}} {msd:.4} (SE {se:.4})"
            ),
        ))
    };
    run().unwrap_or_else(|e| outcome(false, format!("run failed: {e}")))
}

fn metric_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let run = |rng: &mut ChaCha8Rng| -> lgb_core::Result<Outcome> {
        let (mut asym, mut ident, mut tri, mut inv_err, mut cong_err) =
            (0.0f64, 0.0f64, f64::NEG_INFINITY, 0.0f64, 0.0f64);
        for i in 0..1000 {
            let dim = 2 + i % 4;
            let p = [
                random_spd(rng, dim, 1e4),
                random_spd(rng, dim, 1e4),
                random_spd(rng, dim, 1e4),
            ];
            for kind in MetricKind::ALL {
                let d01 = distance(kind, &p[0], &p[1])?;
                asym = asym.max((d01 - distance(kind, &p[1], &p[0])?).abs());
                ident = ident.max(distance(kind, &p[0], &p[0])?);
                tri = tri.max(distance(kind, &p[0], &p[2])? - d01 - distance(kind, &p[1], &p[2])?);
            }
            let d = distance(MetricKind::AffineInvariant, &p[0], &p[1])?;
            let t = random_invertible(rng, dim, 1e3);
            let moved = distance(
                MetricKind::AffineInvariant,
                &congruence(&t, &p[0])?,
                &congruence(&t, &p[1])?,
            )?;
            cong_err = cong_err.max((moved - d).abs() / d);
            let inverted = distance(
                MetricKind::AffineInvariant,
                &spd_inv(&p[0])?,
                &spd_inv(&p[1])?,
            )?;
            inv_err = inv_err.max((inverted - d).abs() / d);
        }
        let mut chain_failures = 0;
        for i in 0..1000 {
            let dim = 2 + i % 4;
            let p1 = random_spd(rng, dim, 1e4);
            let p2 = SpdMatrix::new(p1.matrix() + random_spd(rng, dim, 1e4).matrix())?;
            let p3 = SpdMatrix::new(p2.matrix() + random_spd(rng, dim, 1e4).matrix())?;
            if !check_monotonicity(&p1, &p2, &p3)? {
                chain_failures += 1;
            }
        }
        let pass = asym == 0.0
            && ident <= 1e-10
            && tri <= 1e-9
            && cong_err <= 1e-8
            && inv_err <= 1e-8
            && chain_failures == 0;
        Ok(outcome(
            pass,
            format!(
                "asymmetry {asym:.1e}, identity {ident:.1e}, triangle excess {tri:.2e}, congruence {cong_err:.1e}, inversion {inv_err:.1e}, monotonicity failures {chain_failures}"
            ),
        ))
    };
    run(&mut rng).unwrap_or_else(|e| outcome(false, format!("run failed: {e}")))
}

/// Random 2×2 system with invertible `A`, observable `(A, C)` and `Q > 0`.
fn random_system(rng: &mut ChaCha8Rng) -> SystemModel {
    loop {
        let scale: f64 = rng.random_range(0.5..1.5);
        let a = random_invertible(rng, 2, 10.0) * scale;
        let b = random_invertible(rng, 2, 10.0);
        let c = DMatrix::from_fn(1, 2, |_, _| rng.random_range(-1.0..1.0));
        let Ok(model) = SystemModel::new(a, b, c) else {
            continue;
        };
        let report = validate(&model);
        if report.a_invertible
            && report.observable
            && report.controllable
            && steady_state(&model).is_ok()
        {
            return model;
        }
    }
}

fn contraction_audit() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let model = random_system(&mut rng);
    let n = validate(&model).observability_index.expect("observable");
    let metric = MetricKind::AffineInvariant;
    let h = estimate_lipschitz(&RiccatiMap::H, &model, metric, 1000, SEED);
    let g = estimate_lipschitz(&RiccatiMap::G, &model, metric, 1000, SEED);
    let gn = estimate_lipschitz(&RiccatiMap::GPower(n), &model, metric, 1000, SEED);
    let avg: Vec<f64> = [0.1, 0.5, 0.9]
        .iter()
        .map(|&gamma| {
            average_contractivity(&model, gamma, metric, 1000, SEED, n).unwrap_or(f64::NAN)
        })
        .collect();
    let pass = h <= 1.0 + 1e-10 && g <= 1.0 + 1e-10 && gn < 1.0 && avg.iter().all(|v| *v < 0.0);
    outcome(
        pass,
        format!("n={n}; Lip(h) {h:.6}, Lip(g) {g:.6}, Lip(g^n) {gn:.6}; average log contraction {avg:.4?}"),
    )
}

fn mean_solver_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let options = KarcherOptions::default();
    let run = |rng: &mut ChaCha8Rng| -> lgb_core::Result<Outcome> {
        let mut midpoint = 0.0f64;
        for i in 0..200 {
            let dim = 2 + i % 4;
            let pair = [random_spd(rng, dim, 1e3), random_spd(rng, dim, 1e3)];
            let k = karcher_mean(&pair, options)?.mean;
            midpoint = midpoint.max(rel_frobenius(&k, &geodesic(&pair[0], &pair[1], 0.5)?));
        }

        let mut scalar = 0.0f64;
        for _ in 0..200 {
            let values: Vec<f64> = (0..rng.random_range(1..20))
                .map(|_| 10f64.powf(rng.random_range(-3.0..3.0)))
                .collect();
            let samples = values
                .iter()
                .map(|&v| SpdMatrix::scalar(v))
                .collect::<lgb_core::Result<Vec<_>>>()?;
            let expected = (values.iter().map(|v| v.ln()).sum::<f64>() / values.len() as f64).exp();
            let k = karcher_mean(&samples, options)?.mean.matrix()[(0, 0)];
            scalar = scalar.max((k - expected).abs() / expected);
        }

        let random_sets: Vec<Vec<SpdMatrix>> = (0..100)
            .map(|i| {
                let dim = 2 + i % 4;
                (0..rng.random_range(2..30))
                    .map(|_| random_spd(rng, dim, 1e3))
                    .collect()
            })
            .collect();
        let sample_sets = stationary_sample_sets(rng)?;

        let mut duality = 0.0f64;
        let mut jensen_failures = 0;
        for set in random_sets.iter().chain(&sample_sets) {
            let k = karcher_mean(set, options)?.mean;
            duality = duality.max(duality_residual(set, &k, options)?);
            if !loewner_leq(&sqrt_mean(set)?.mean, &euclidean_mean(set)?.mean, 1e-9)? {
                jensen_failures += 1;
            }
        }
        let (chain_failures, chain_margin) = count_chain_failures(&sample_sets)?;
        // Informational: harmonic ≤ sqrt can fail for arbitrary non-commuting sets.
        let (random_chain_failures, _) = count_chain_failures(&random_sets)?;
        let pass = midpoint <= 1e-10
            && scalar <= 1e-12
            && duality <= 1e-8
            && chain_failures == 0
            && jensen_failures == 0;
        Ok(outcome(
            pass,
            format!(
                "midpoint {midpoint:.1e}, scalar {scalar:.1e}, duality {duality:.1e}, chain failures {chain_failures}/{} sample sets (worst relative margin {chain_margin:.2e}), Jensen failures {jensen_failures}/{}; chain on arbitrary random sets {random_chain_failures}/{} (not a sample set)",
                sample_sets.len(),
                sample_sets.len() + random_sets.len(),
                random_sets.len()
            ),
        ))
    };
    run(&mut rng).unwrap_or_else(|e| outcome(false, format!("run failed: {e}")))
}

/// Sets failing harmonic ≤ sqrt ≤ arithmetic, and the worst relative margin
/// `λ_min(upper − lower) / ‖upper‖_F` over both links.
fn count_chain_failures(sets: &[Vec<SpdMatrix>]) -> lgb_core::Result<(usize, f64)> {
    let margin = |lower: &SpdMatrix, upper: &SpdMatrix| {
        let gap = nalgebra::SymmetricEigen::new(upper.matrix() - lower.matrix())
            .eigenvalues
            .min();
        gap / upper.frobenius_norm()
    };
    let mut failures = 0;
    let mut worst = f64::INFINITY;
    for set in sets {
        let (h, r, a) = (
            harmonic_mean(set)?.mean,
            sqrt_mean(set)?.mean,
            euclidean_mean(set)?.mean,
        );
        failures += usize::from(!loewner_chain(&h, &r, &a)?);
        worst = worst.min(margin(&h, &r)).min(margin(&r, &a));
    }
    Ok((failures, worst))
}

/// Stationary draws from the scalar system, the default 2×2 system and random
/// 2×2 systems over a range of arrival rates.
fn stationary_sample_sets(rng: &mut ChaCha8Rng) -> lgb_core::Result<Vec<Vec<SpdMatrix>>> {
    let mut models = vec![scalar_model(), lgb_cli::config::default_model()];
    models.extend((0..8).map(|_| random_system(rng)));
    let mut sets = Vec::new();
    for (m, model) in models.iter().enumerate() {
        for (g, gamma) in [0.3, 0.5, 0.7, 0.9, 1.0].into_iter().enumerate() {
            let seed = SEED ^ (10 * m + g) as u64;
            let set = stationary_samples(model, gamma, 1000, 2000, 10, seed)?;
            if set.overflow.is_none() {
                sets.push(set.draws);
            }
        }
    }
    Ok(sets)
}

fn sweep_output(workers: &str) -> (i32, Vec<u8>) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = lgb_cli::run(
        [
            "lgb",
            "sweep",
            "--gamma",
            "0.5,0.8,1",
            "--samples",
            "4000",
            "--seed",
            "7",
            "--workers",
            workers,
        ],
        &mut out,
        &mut err,
    );
    (code, out)
}

fn determinism() -> Outcome {
    let (c1, first) = sweep_output("1");
    let (c2, second) = sweep_output("1");
    let (c3, parallel) = sweep_output("4");
    let pass =
        c1 == 0 && c2 == 0 && c3 == 0 && first == second && first == parallel && !first.is_empty();
    outcome(
        pass,
        format!(
            "{} bytes; repeat identical: {}; 1 vs 4 workers identical: {}",
            first.len(),
            first == second,
            first == parallel
        ),
    )
}

type Criterion = (&'static str, Duration, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 8] = [
        (
            "1 critical-probability flags",
            Duration::from_secs(1),
            thresholds,
        ),
        (
            "2 Monte Carlo vs closed form",
            Duration::from_secs(10),
            monte_carlo_vs_closed_form,
        ),
        ("3 pathwise sandwich", Duration::MAX, pathwise_sandwich),
        (
            "4 Riemannian mean not critical",
            Duration::from_secs(60),
            riemannian_mean_not_critical,
        ),
        ("5 metric property suite", Duration::MAX, metric_suite),
        ("6 contraction audit", Duration::MAX, contraction_audit),
        ("7 mean-solver oracles", Duration::MAX, mean_solver_oracles),
        ("8 sweep determinism", Duration::MAX, determinism),
    ];
    let mut failures = 0;
    for (name, limit, check) in criteria {
        let start = Instant::now();
        let result = check();
        let elapsed = start.elapsed();
        let in_time = elapsed < limit;
        let pass = result.pass && in_time;
        if !pass {
            failures += 1;
        }
        let timing = if limit == Duration::MAX {
            format!("{:.2}s", elapsed.as_secs_f64())
        } else {
            format!("{:.2}s of {}s", elapsed.as_secs_f64(), limit.as_secs())
        };
        println!(
            "criterion {name}: {} ({timing}) {}",
            if pass { "PASS" } else { "FAIL" },
            result.detail
        );
    }
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}
