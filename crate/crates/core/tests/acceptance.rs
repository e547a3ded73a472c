//! Acceptance suite: one test per criterion, each printing a single
//! pass/fail line to stderr.

use std::io::Write;
use std::time::{Duration, Instant};

use poissonize_core::cumulants::{accumulate_stream, analytic_ica_cumulant, empirical_cumulant, DEFAULT_CHUNK_LEN};
use poissonize_core::distributions::{poisson_pmf, poisson_split, sample_poisson, truncated_poisson_tv, GmmParams};
use poissonize_core::hardness::{
    build_close_pair, embed_as_ica, pigeonhole_pair, PairOptions, PigeonholeOptions, PointSet, TauPolicy,
};
use poissonize_core::ica::{align_columns, ica_from_cumulants, IcaOptions};
use poissonize_core::learner::{
    evaluate_recovery, learn_means, random_separated_means, recover_weights, LearnSettings, MixtureBounds,
    ThresholdChoice,
};
use poissonize_core::linalg::{khatri_rao_power, normalize_columns, sigma_k};
use poissonize_core::poissonization::{desk_threshold, sample_approx_ica, ReductionPolicy, ReductionSource};
use poissonize_core::smoothed::{base_matrix, rv_check, smoothed_trial, BaseFamily};
use poissonize_core::{RealMatrix, SeededRng};

fn report(criterion: usize, pass: bool, elapsed: Duration, limit: Duration, detail: String) {
    let pass = pass && elapsed < limit;
    // Written past the test harness capture so the line shows in every run.
    let _ = writeln!(
        std::io::stderr().lock(),
        "criterion {criterion}: {} ({detail}; {:.2} s of {} s)",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        limit.as_secs()
    );
    assert!(pass, "criterion {criterion} failed: {detail}");
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

/// Half the L¹ distance between empirical counts and `Poisson(rate)`.
fn count_tv(counts: &[u64], rate: f64) -> f64 {
    let n = counts.len() as f64;
    let top = *counts.iter().max().unwrap() as usize;
    let mut hist = vec![0.0; top + 1];
    for &c in counts {
        hist[c as usize] += 1.0;
    }
    let inside: f64 = (0..=top).map(|k| (hist[k] / n - poisson_pmf(k as u64, rate)).abs()).sum();
    let mass: f64 = (0..=top).map(|k| poisson_pmf(k as u64, rate)).sum();
    0.5 * (inside + (1.0 - mass).max(0.0))
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

#[test]
fn criterion_01_poisson_splitting() {
    let start = Instant::now();
    let (lambda, probs, n) = (5.0, [0.2, 0.3, 0.5], 100_000);
    let mut rng = SeededRng::new(1);
    let draws: Vec<Vec<u64>> = (0..n).map(|_| poisson_split(lambda, &probs, &mut rng)).collect();
    let column = |i: usize| draws.iter().map(|d| d[i]).collect::<Vec<_>>();
    let tvs: Vec<f64> = (0..3).map(|i| count_tv(&column(i), probs[i] * lambda)).collect();
    let real = |i: usize| column(i).iter().map(|&c| c as f64).collect::<Vec<_>>();
    let rhos = [correlation(&real(0), &real(1)), correlation(&real(0), &real(2)), correlation(&real(1), &real(2))];
    let pass = tvs.iter().all(|&t| t < 0.02) && rhos.iter().all(|r| r.abs() < 0.02);
    report(1, pass, start.elapsed(), secs(5), format!("tv {tvs:.4?}, rho {rhos:.4?}"));
}

#[test]
fn criterion_02_cumulant_estimates() {
    let start = Instant::now();
    let mut rng = SeededRng::new(2);
    let poisson: Vec<f64> = (0..1_000_000).map(|_| sample_poisson(2.0, &mut rng) as f64).collect();
    let k3 = empirical_cumulant(&poisson, 3).unwrap();
    let k4 = empirical_cumulant(&poisson, 4).unwrap();
    let gauss: Vec<f64> = (0..1_000_000).map(|_| rng.standard_normal()).collect();
    let g4 = empirical_cumulant(&gauss, 4).unwrap();
    let pass = (k3 - 2.0).abs() < 0.2 && (k4 - 2.0).abs() < 0.2 && g4.abs() < 0.05;
    report(2, pass, start.elapsed(), secs(10), format!("poisson k3 {k3:.4}, k4 {k4:.4}; gaussian k4 {g4:.4}"));
}

/// `Σ_j c_j A_j^{⊗ℓ}` entry by entry, decoding each flat position in base
/// `n` with the first index most significant.
fn brute_force_cumulant(a: &RealMatrix, c: &[f64], ell: usize) -> Vec<f64> {
    let n = a.nrows();
    let len = n.pow(ell as u32);
    (0..len)
        .map(|pos| {
            let mut idx = vec![0; ell];
            let mut rest = pos;
            for k in (0..ell).rev() {
                idx[k] = rest % n;
                rest /= n;
            }
            (0..a.ncols()).map(|j| c[j] * idx.iter().map(|&i| a[(i, j)]).product::<f64>()).sum()
        })
        .collect()
}

#[test]
fn criterion_03_analytic_cumulant_matches_brute_force() {
    let start = Instant::now();
    let mut rng = SeededRng::new(3);
    let mut worst = 0.0f64;
    for n in 1..=4 {
        for m in 1..=6 {
            for ell in [3, 4] {
                let a = RealMatrix::from_fn(n, m, |_, _| rng.standard_normal());
                let c: Vec<f64> = (0..m).map(|_| rng.uniform() * 3.0).collect();
                let got = analytic_ica_cumulant(&a, &c, ell).unwrap();
                let want = brute_force_cumulant(&a, &c, ell);
                assert_eq!(got.data().len(), want.len());
                for (x, y) in got.data().iter().zip(&want) {
                    worst = worst.max((x - y).abs());
                }
            }
        }
    }
    report(3, worst <= 1e-12, start.elapsed(), secs(1), format!("max abs diff {worst:.2e}"));
}

#[test]
fn criterion_04_exact_cumulant_ica() {
    let start = Instant::now();
    let (n, m, d) = (4, 6, 4);
    let mut rng = SeededRng::new(4);
    let mut errors = Vec::new();
    while errors.len() < 20 {
        let a = normalize_columns(&RealMatrix::from_fn(n, m, |_, _| rng.standard_normal()));
        if sigma_k(&khatri_rao_power(&a, d / 2).unwrap(), m) <= 1e-3 {
            continue;
        }
        let rates: Vec<f64> = (0..m).map(|i| 1.0 + 0.25 * i as f64).collect();
        let even = analytic_ica_cumulant(&a, &rates, d).unwrap();
        let odd = analytic_ica_cumulant(&a, &rates, d + 1).unwrap();
        let est = ica_from_cumulants(&even, &odd, m, &IcaOptions::default(), &mut rng).unwrap();
        errors.push(align_columns(&est.columns, &a).unwrap().max_error);
    }
    let worst = errors.iter().copied().fold(0.0, f64::max);
    report(4, worst < 1e-6, start.elapsed(), secs(10), format!("worst aligned error {worst:.2e} over 20 matrices"));
}

#[test]
fn criterion_05_end_to_end_learning() {
    let start = Instant::now();
    let settings = LearnSettings {
        m: 6,
        d: 4,
        delta: 0.1,
        eps: 0.1,
        bounds: MixtureBounds {
            w: 1.0,
            u: 2.0,
            r: 3.0,
            b: 1e-4,
        },
        samples: 10_000_000,
        threshold: ThresholdChoice::Certified,
        policy: ReductionPolicy::default(),
        weight_order: None,
        ica: IcaOptions::default(),
    };
    let mut errors = Vec::new();
    let mut good = 0;
    for seed in 0..10u64 {
        let mut rng = SeededRng::new(1000 + seed);
        let means = random_separated_means(6, 6, 1.0, 2.0, 30.0, 10_000, &mut rng).unwrap();
        let cov = RealMatrix::identity(6, 6) * 0.01;
        let gmm = GmmParams::uniform(means, cov.clone()).unwrap();
        let mut report = learn_means(&gmm, &cov, &settings, Some(&gmm), &mut rng).unwrap();
        let certified = report.tv_gap < settings.delta / 2.0;
        let err = if report.failed {
            f64::INFINITY
        } else {
            evaluate_recovery(&mut report, &gmm).unwrap().max_error
        };
        if certified && err < 0.3 {
            good += 1;
        }
        errors.push(err);
    }
    report(5, good >= 8, start.elapsed(), secs(600), format!("{good}/10 runs below 0.3, errors {errors:.3?}"));
}

#[test]
fn criterion_06_weight_recovery() {
    let start = Instant::now();
    let mut rng = SeededRng::new(6);

    let means = random_separated_means(3, 3, 1.0, 2.0, 30.0, 10_000, &mut rng).unwrap();
    let weights = [0.2, 0.3, 0.5];
    let lambda = 3.0;
    let exact = analytic_ica_cumulant(&means, &weights.map(|w| w * lambda), 3).unwrap();
    let got = recover_weights(&means, lambda, &exact).unwrap();
    let exact_err = got.iter().zip(weights).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    let cov = RealMatrix::identity(3, 3) * 0.01;
    let gmm = GmmParams::new(means.clone(), weights.to_vec(), cov.clone()).unwrap();
    let samples = 1_000_000;
    let tau = desk_threshold(lambda, 0.1, samples as u64).unwrap();
    let source = ReductionSource::new(&gmm, &cov, lambda, tau).unwrap();
    let sampler = |r: &mut SeededRng, x: &mut [f64]| source.draw_into(r, x).map(|_| ());
    let acc = accumulate_stream(sampler, 4, 3, samples, rng.next_seed(), DEFAULT_CHUNK_LEN).unwrap();
    let kappa = acc.leading_flat_cumulant(3, 3).unwrap();
    let est = recover_weights(&means, lambda, &kappa).unwrap();
    let emp_err = est.iter().zip(weights).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    let pass = exact_err <= 1e-8 && emp_err < 0.05;
    report(6, pass, start.elapsed(), secs(60), format!("exact error {exact_err:.2e}, empirical error {emp_err:.4} ({est:.4?})"));
}

/// `½ Σ_k |P(k) − P(k | k ≤ τ)|` with the masses built by the product recursion.
fn direct_truncation_tv(lambda: f64, tau: u64) -> f64 {
    let kmax = tau.max(lambda as u64) + 400;
    let mut pmf = Vec::with_capacity(kmax as usize + 1);
    let mut term = (-lambda).exp();
    for k in 0..=kmax {
        if k > 0 {
            term *= lambda / k as f64;
        }
        pmf.push(term);
    }
    let kept: f64 = pmf[..=tau as usize].iter().sum();
    let mut sum = 0.0;
    for (k, &p) in pmf.iter().enumerate() {
        let truncated = if k as u64 <= tau { p / kept } else { 0.0 };
        sum += (p - truncated).abs();
    }
    0.5 * sum
}

#[test]
fn criterion_07_truncation_formula() {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for lambda in 1..=8 {
        for tau in 0..=20 {
            let lambda = lambda as f64;
            worst = worst.max((truncated_poisson_tv(lambda, tau) - direct_truncation_tv(lambda, tau)).abs());
        }
    }
    report(7, worst <= 1e-12, start.elapsed(), secs(1), format!("max abs diff {worst:.2e}"));
}

#[test]
fn criterion_08_smoothed_conditioning() {
    let start = Instant::now();
    let mut counts = Vec::new();
    for (f, family) in BaseFamily::ALL.into_iter().enumerate() {
        let passed = (0..50u64)
            .filter(|&t| {
                let mut rng = SeededRng::for_trial(8, f as u64 * 50 + t);
                let base = base_matrix(family, 10, &mut rng);
                smoothed_trial(&base, 0.1, &mut rng).unwrap().passed
            })
            .count();
        counts.push((family.name(), passed));
    }
    let pass = counts.iter().all(|&(_, c)| c >= 49);
    report(8, pass, start.elapsed(), secs(120), format!("passes per family {counts:?}"));
}

#[test]
fn criterion_09_column_distance_bound() {
    let start = Instant::now();
    let mut rng = SeededRng::new(9);
    let holds = (0..100)
        .filter(|_| {
            let a = RealMatrix::from_fn(6, 10, |_, _| rng.standard_normal());
            rv_check(&a).unwrap().holds
        })
        .count();
    report(9, holds == 100, start.elapsed(), secs(5), format!("{holds}/100 matrices"));
}

#[test]
fn criterion_10_hardness_decay() {
    let start = Instant::now();
    let spacings = [0.1, 0.05, 0.025];
    let mut l1 = Vec::new();
    let mut separated = true;
    for h in spacings {
        let (x, y) = PointSet::interleaved_1d(h).unwrap();
        let pair = build_close_pair(&x, &y, &PairOptions::default()).unwrap();
        separated &= pair.min_center_distance >= h / 2.0;
        l1.push(pair.l1.value);
    }
    let decays = l1.windows(2).all(|w| w[1] <= w[0] / 10.0 || w[1] <= 1e-12);

    let mut rng = SeededRng::new(10);
    let mut equal = 0;
    for _ in 0..10 {
        let points = PointSet::random(100, 1, &mut rng).unwrap();
        let out = pigeonhole_pair(&points, &PigeonholeOptions::default(), &mut rng).unwrap();
        if out.pair.p.components() == out.pair.q.components() {
            equal += 1;
        }
    }
    let pass = decays && separated && equal == 10;
    report(
        10,
        pass,
        start.elapsed(),
        secs(120),
        format!(
            "l1 [{}], min distance ok {separated}, equal counts {equal}/10",
            l1.iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>().join(", ")
        ),
    );
}

#[test]
fn criterion_11_ica_embedding() {
    let start = Instant::now();
    let (x, y) = PointSet::interleaved_1d(0.05).unwrap();
    let pair = build_close_pair(&x, &y, &PairOptions::default()).unwrap();
    let policy = TauPolicy {
        delta: 0.1,
        samples: 10_000,
    };
    let emb = embed_as_ica(&pair, &policy).unwrap();
    let mut pass = emb.p.rates.len() == emb.q.rates.len() && pair.p.components() == pair.q.components();
    let mut rng = SeededRng::new(11);
    let mut failures = 0;
    for (model, g) in [(&emb.p, &pair.p), (&emb.q, &pair.q)] {
        let m = g.components() as f64;
        let floor = g.weights().iter().copied().fold(f64::INFINITY, f64::min) * m;
        pass &= model.lambda == m;
        pass &= (model.rates.iter().sum::<f64>() - m).abs() < 1e-10;
        pass &= floor > 0.0 && model.rates.iter().all(|&r| r >= floor - 1e-15);
        for _ in 0..policy.samples {
            if sample_approx_ica(g, model.lambda, model.tau, &mut rng).is_err() {
                failures += 1;
            }
        }
    }
    pass &= failures == 0;
    report(
        11,
        pass,
        start.elapsed(),
        secs(60),
        format!(
            "{} vs {} signals, tau {} / {}, {failures} sampling failures",
            emb.p.rates.len(),
            emb.q.rates.len(),
            emb.p.tau,
            emb.q.tau
        ),
    );
}
