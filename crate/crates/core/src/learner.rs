//! End-to-end mean learning through the Poissonized reduction, and weight
//! recovery from an order-`ℓ` cumulant.

use serde::{Deserialize, Serialize};

use crate::cumulants::{accumulate_stream, FlatCumulant};
use crate::distributions::{GmmParams, MixtureSource};
use crate::error::{Error, Result};
use crate::ica::{bottleneck_assignment, ica_from_moments, IcaOptions};
use crate::linalg::{khatri_rao_power, pseudo_inverse, singular_values, RealMatrix};
use crate::poissonization::{
    compute_reduction_params, desk_threshold, mean_conditioning, tv_gap, ReductionInputs, ReductionParams,
    ReductionPolicy, ReductionSource,
};
use crate::rng::SeededRng;

/// Weight entries below `-WEIGHT_TOLERANCE` are flagged before clipping.
pub const WEIGHT_TOLERANCE: f64 = 0.05;

/// A-priori bounds on the mixture.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureBounds {
    /// Upper bound on `max w_i / min w_i`.
    pub w: f64,
    /// Upper bound on `max ‖μ_i‖`.
    pub u: f64,
    /// Upper bound on `(max ‖μ_i‖ + 1) / min ‖μ_i‖`.
    pub r: f64,
    /// Lower bound on `σ_m(B^{⊙d/2})` for the mean matrix `B`.
    pub b: f64,
}

/// How the truncation threshold is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "value")]
pub enum ThresholdChoice {
    /// The worst-case schedule. Usually far too large to run.
    Schedule,
    /// Smallest `τ` whose union-bound TV gap over the sample budget is below `δ/2`.
    Certified,
    /// A fixed value; the TV gap is still computed and reported.
    Fixed(u64),
}

/// Everything [`learn_means`] needs besides the sampler.
#[derive(Debug, Clone)]
pub struct LearnSettings {
    pub m: usize,
    pub d: usize,
    pub delta: f64,
    pub eps: f64,
    pub bounds: MixtureBounds,
    pub samples: usize,
    pub threshold: ThresholdChoice,
    pub policy: ReductionPolicy,
    /// Order of the cumulant used for weight recovery; `None` skips it.
    pub weight_order: Option<usize>,
    pub ica: IcaOptions,
}

/// Outcome of one learning run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LearnReport {
    /// `n × m`; absent when the run failed.
    #[serde(with = "optional_rows")]
    pub estimated_means: Option<RealMatrix>,
    pub estimated_weights: Option<Vec<f64>>,
    /// Set when some recovered weight was below `-WEIGHT_TOLERANCE` before clipping.
    pub weights_clipped: bool,
    /// Filled in by [`evaluate_recovery`] when ground truth is known.
    pub aligned_error: Option<f64>,
    pub params: ReductionParams,
    pub tau_used: u64,
    pub tv_gap: f64,
    pub samples_used: u64,
    pub failed: bool,
    pub failure: Option<String>,
    pub eigengap: Option<f64>,
    /// `σ_m(B^{⊙d/2})` of the true means when known.
    pub mean_conditioning: Option<f64>,
}

mod optional_rows {
    use crate::linalg::{matrix_from_rows, matrix_to_rows, RealMatrix};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Option<RealMatrix>, s: S) -> Result<S::Ok, S::Error> {
        m.as_ref().map(matrix_to_rows).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<RealMatrix>, D::Error> {
        Option::<Vec<Vec<f64>>>::deserialize(d)?
            .map(|rows| matrix_from_rows(&rows).map_err(serde::de::Error::custom))
            .transpose()
    }
}

/// Divides each lifted column by its last entry and drops the last row,
/// turning unit columns of `A'` (any sign) into means.
pub fn unlift_columns(lifted: &RealMatrix) -> Result<RealMatrix> {
    let (rows, m) = lifted.shape();
    if rows < 2 {
        return Err(Error::Shape("lifted columns need at least two rows".into()));
    }
    let n = rows - 1;
    let mut out = RealMatrix::zeros(n, m);
    for j in 0..m {
        let last = lifted[(n, j)];
        if last == 0.0 {
            return Err(Error::Degenerate(format!("lifted column {j} has a zero last entry")));
        }
        for i in 0..n {
            out[(i, j)] = lifted[(i, j)] / last;
        }
    }
    Ok(out)
}

/// `(1/λ) (A^{⊙ℓ})† vec(κ)`: the mixing weights given the means and the
/// order-`ℓ` cumulant of the basic reduction's observation.
pub fn recover_weights(means: &RealMatrix, lambda: f64, cumulant: &FlatCumulant) -> Result<Vec<f64>> {
    let ell = cumulant.order();
    if ell <= 2 {
        return Err(Error::Domain(format!("weight recovery needs order > 2, got {ell}")));
    }
    if cumulant.dimension() != means.nrows() {
        return Err(Error::Shape(format!(
            "cumulant dimension {} but means have {} rows",
            cumulant.dimension(),
            means.nrows()
        )));
    }
    let power = khatri_rao_power(means, ell)?;
    let sv = singular_values(&power);
    let m = means.ncols();
    let cutoff = power.nrows().max(m) as f64 * sv[0] * 1e-12;
    if sv.len() < m || sv[m - 1] <= cutoff {
        return Err(Error::IllConditioned(format!(
            "A^{{⊙{ell}}} is rank deficient (σ_m = {:.3e})",
            sv.get(m - 1).copied().unwrap_or(0.0)
        )));
    }
    let kappa = nalgebra::DVector::from_column_slice(cumulant.data());
    let w = pseudo_inverse(&power) * kappa / lambda;
    Ok(w.iter().copied().collect())
}

/// Clips negative weights to zero and renormalizes; the flag reports whether
/// any entry was below `-WEIGHT_TOLERANCE`.
pub fn clean_weights(raw: &[f64]) -> (Vec<f64>, bool) {
    let flagged = raw.iter().any(|&w| w < -WEIGHT_TOLERANCE);
    let clipped: Vec<f64> = raw.iter().map(|&w| w.max(0.0)).collect();
    let total: f64 = clipped.iter().sum();
    if total > 0.0 {
        (clipped.iter().map(|w| w / total).collect(), flagged)
    } else {
        (clipped, true)
    }
}

/// Learns the means (and optionally the weights) of a mixture with known
/// covariance `covariance`, drawing from `source` through the single-sample
/// reduction. Ground truth, when given, is only used to check the
/// conditioning precondition; use [`evaluate_recovery`] for errors.
pub fn learn_means<S: MixtureSource>(
    source: &S,
    covariance: &RealMatrix,
    settings: &LearnSettings,
    truth: Option<&GmmParams>,
    rng: &mut SeededRng,
) -> Result<LearnReport> {
    let n = source.dim();
    let m = settings.m;
    let d = settings.d;
    let sigma = crate::linalg::symmetric_eigen_desc(covariance).0[0].max(0.0).sqrt();
    let params = compute_reduction_params(
        &ReductionInputs {
            n,
            m,
            d,
            delta: settings.delta,
            eps: settings.eps,
            w: settings.bounds.w,
            u: settings.bounds.u,
            r: settings.bounds.r,
            b: settings.bounds.b,
            sigma,
        },
        &settings.policy,
    )?;
    let count = settings.samples as u64;
    let tau = match settings.threshold {
        ThresholdChoice::Schedule => {
            if params.tau > u64::MAX as f64 / 2.0 {
                return Err(Error::Parameter(format!("scheduled threshold {:.3e} is not representable", params.tau)));
            }
            params.tau as u64
        }
        ThresholdChoice::Certified => desk_threshold(params.lambda, settings.delta, count)?,
        ThresholdChoice::Fixed(t) => t,
    };
    let gap = tv_gap(params.lambda, tau, count);

    let conditioning = match truth {
        Some(t) => {
            let c = mean_conditioning(t.means(), d)?;
            if c < settings.bounds.b {
                return Err(Error::Parameter(format!(
                    "σ_m(B^{{⊙{}}}) = {c:.3e} is below the stated bound b = {:.3e}",
                    d / 2,
                    settings.bounds.b
                )));
            }
            Some(c)
        }
        None => None,
    };

    let reduction = ReductionSource::new(source, covariance, params.lambda, tau)?;
    let max_order = (d + 1).max(settings.weight_order.unwrap_or(0));
    let sampler = |r: &mut SeededRng, x: &mut [f64]| reduction.draw_into(r, x).map(|_| ());
    let base = LearnReport {
        estimated_means: None,
        estimated_weights: None,
        weights_clipped: false,
        aligned_error: None,
        params: params.clone(),
        tau_used: tau,
        tv_gap: gap,
        samples_used: 0,
        failed: false,
        failure: None,
        eigengap: None,
        mean_conditioning: conditioning,
    };
    let acc = match accumulate_stream(sampler, n + 1, max_order, settings.samples, rng.next_seed(), settings.ica.chunk_len) {
        Ok(acc) => acc,
        Err(e @ Error::ReductionFailure { .. }) => {
            return Ok(LearnReport {
                failed: true,
                failure: Some(e.to_string()),
                ..base
            })
        }
        Err(e) => return Err(e),
    };
    let estimate = ica_from_moments(&acc, m, d, &settings.ica, rng)?;
    let means = unlift_columns(&estimate.columns)?;
    let (weights, clipped) = match settings.weight_order {
        Some(ell) => {
            let kappa = acc.leading_flat_cumulant(ell, n)?;
            let raw = recover_weights(&means, params.lambda, &kappa)?;
            let (w, flag) = clean_weights(&raw);
            (Some(w), flag)
        }
        None => (None, false),
    };
    Ok(LearnReport {
        estimated_means: Some(means),
        estimated_weights: weights,
        weights_clipped: clipped,
        samples_used: acc.count(),
        eigengap: Some(estimate.eigengap),
        ..base
    })
}

/// `m` random means in `R^n` with Gaussian directions, norms uniform in
/// `[norm_lo, norm_hi]`, and every pairwise angle above `min_angle_deg`.
/// Rejection sampling; gives up after `max_tries` draws of the whole set.
pub fn random_separated_means(
    n: usize,
    m: usize,
    norm_lo: f64,
    norm_hi: f64,
    min_angle_deg: f64,
    max_tries: usize,
    rng: &mut SeededRng,
) -> Result<RealMatrix> {
    if n == 0 || m == 0 || !(norm_lo > 0.0 && norm_hi >= norm_lo) {
        return Err(Error::Parameter(format!(
            "need n, m ≥ 1 and 0 < norm_lo ≤ norm_hi, got n={n}, m={m}, [{norm_lo}, {norm_hi}]"
        )));
    }
    let max_cos = min_angle_deg.to_radians().cos();
    for _ in 0..max_tries.max(1) {
        let mut a = RealMatrix::zeros(n, m);
        for j in 0..m {
            let v: Vec<f64> = (0..n).map(|_| rng.standard_normal()).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let radius = norm_lo + (norm_hi - norm_lo) * rng.uniform();
            for (i, x) in v.iter().enumerate() {
                a[(i, j)] = x / norm * radius;
            }
        }
        let separated = (0..m).all(|i| {
            (0..i).all(|j| {
                let c = a.column(i).dot(&a.column(j)) / (a.column(i).norm() * a.column(j).norm());
                c < max_cos
            })
        });
        if separated {
            return Ok(a);
        }
    }
    Err(Error::Parameter(format!(
        "no {m} means in R^{n} with pairwise angles above {min_angle_deg}° after {max_tries} tries"
    )))
}

/// Errors of a learned mixture against the truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryMetrics {
    pub max_error: f64,
    pub mean_error: f64,
    /// `permutation[j]` is the estimated mean matched to true mean `j`.
    pub permutation: Vec<usize>,
    /// Largest absolute weight error under the same matching.
    pub weight_error: Option<f64>,
}

/// Matches estimated means to true means (signed, no sign freedom) with the
/// assignment minimizing the largest distance.
pub fn match_means(estimate: &RealMatrix, truth: &RealMatrix) -> Result<(Vec<usize>, Vec<f64>)> {
    if estimate.shape() != truth.shape() {
        return Err(Error::Shape(format!(
            "estimate is {:?} but truth is {:?}",
            estimate.shape(),
            truth.shape()
        )));
    }
    let m = truth.ncols();
    let cost = RealMatrix::from_fn(m, m, |j, i| (estimate.column(i) - truth.column(j)).norm());
    let perm = bottleneck_assignment(&cost);
    let errors = perm.iter().enumerate().map(|(j, &i)| cost[(j, i)]).collect();
    Ok((perm, errors))
}

/// Compares a report against the truth and records the aligned mean error
/// in the report.
pub fn evaluate_recovery(report: &mut LearnReport, truth: &GmmParams) -> Result<RecoveryMetrics> {
    let est = report
        .estimated_means
        .as_ref()
        .ok_or_else(|| Error::Input("the run failed; there are no means to evaluate".into()))?;
    let (permutation, errors) = match_means(est, truth.means())?;
    let max_error = errors.iter().copied().fold(0.0, f64::max);
    let mean_error = errors.iter().sum::<f64>() / errors.len() as f64;
    let weight_error = report.estimated_weights.as_ref().map(|w| {
        permutation
            .iter()
            .enumerate()
            .map(|(j, &i)| (w[i] - truth.weights()[j]).abs())
            .fold(0.0, f64::max)
    });
    report.aligned_error = Some(max_error);
    Ok(RecoveryMetrics {
        max_error,
        mean_error,
        permutation,
        weight_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cumulants::analytic_ica_cumulant;
    use crate::ica::ica_from_cumulants;
    use crate::poissonization::LiftedIcaModel;
    use approx::assert_abs_diff_eq;

    fn settings(m: usize, samples: usize) -> LearnSettings {
        LearnSettings {
            m,
            d: 4,
            delta: 0.1,
            eps: 0.1,
            bounds: MixtureBounds {
                w: 1.0,
                u: 3.0,
                r: 4.0,
                b: 1e-6,
            },
            samples,
            threshold: ThresholdChoice::Certified,
            policy: ReductionPolicy::default(),
            weight_order: Some(3),
            ica: IcaOptions::default(),
        }
    }

    #[test]
    fn separated_means_respect_norms_and_angles() {
        let mut rng = SeededRng::new(8);
        let a = random_separated_means(6, 6, 1.0, 2.0, 30.0, 1000, &mut rng).unwrap();
        for i in 0..6 {
            let ni = a.column(i).norm();
            assert!((1.0..=2.0).contains(&ni));
            for j in 0..i {
                let c = a.column(i).dot(&a.column(j)) / (ni * a.column(j).norm());
                assert!(c < 30f64.to_radians().cos());
            }
        }
        assert!(random_separated_means(2, 12, 1.0, 2.0, 30.0, 50, &mut rng).is_err());
    }

    #[test]
    fn unlift_recovers_signed_means() {
        let gmm = GmmParams::uniform(
            RealMatrix::from_row_slice(2, 3, &[1.0, -2.0, 0.0, 0.5, 0.0, -3.0]),
            RealMatrix::identity(2, 2),
        )
        .unwrap();
        let model = LiftedIcaModel::new(&gmm, 3.0, 20).unwrap();
        let mut flipped = model.mixing.clone();
        flipped.column_mut(1).neg_mut();
        let means = unlift_columns(&flipped).unwrap();
        assert_abs_diff_eq!(means, gmm.means().clone(), epsilon = 1e-12);
    }

    #[test]
    fn oracle_pipeline_is_exact() {
        let means = RealMatrix::from_row_slice(3, 4, &[1.0, -0.5, 0.3, 1.2, 0.2, 1.1, -0.8, 0.4, -0.6, 0.0, 0.9, 1.0]);
        let weights = vec![0.1, 0.2, 0.3, 0.4];
        let gmm = GmmParams::new(means.clone(), weights.clone(), RealMatrix::identity(3, 3) * 0.3).unwrap();
        let model = LiftedIcaModel::new(&gmm, 4.0, 30).unwrap();
        let even = analytic_ica_cumulant(&model.mixing, &model.source_cumulants(4), 4).unwrap();
        let odd = analytic_ica_cumulant(&model.mixing, &model.source_cumulants(5), 5).unwrap();
        let mut rng = SeededRng::new(1);
        let est = ica_from_cumulants(&even, &odd, 4, &IcaOptions::default(), &mut rng).unwrap();
        let learned = unlift_columns(&est.columns).unwrap();
        let (perm, errors) = match_means(&learned, &means).unwrap();
        assert!(errors.iter().all(|&e| e < 1e-8));
        let kappa = analytic_ica_cumulant(&learned, &[0.0; 4], 3).unwrap();
        assert!(kappa.data().iter().all(|&x| x == 0.0));
        let k3 = analytic_ica_cumulant(&means, &weights.iter().map(|w| w * 4.0).collect::<Vec<_>>(), 3).unwrap();
        let w = recover_weights(&learned, 4.0, &k3).unwrap();
        for (j, &i) in perm.iter().enumerate() {
            assert_abs_diff_eq!(w[i], weights[j], epsilon = 1e-8);
        }
    }

    #[test]
    fn exact_weight_recovery() {
        let means = RealMatrix::from_row_slice(2, 3, &[1.0, 0.0, -1.0, 0.5, 1.0, 0.7]);
        let w = [0.5, 0.3, 0.2];
        let lambda = 3.0;
        let k = analytic_ica_cumulant(&means, &w.map(|x| x * lambda), 3).unwrap();
        let got = recover_weights(&means, lambda, &k).unwrap();
        for (a, b) in got.iter().zip(w) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-10);
        }
        let uniform = analytic_ica_cumulant(&means, &[1.0; 3], 3).unwrap();
        for x in recover_weights(&means, 3.0, &uniform).unwrap() {
            assert_abs_diff_eq!(x, 1.0 / 3.0, epsilon = 1e-10);
        }
        let two = FlatCumulant::new(2, 2, vec![0.0; 4]).unwrap();
        assert!(recover_weights(&means, 3.0, &two).is_err());
    }

    #[test]
    fn rank_deficient_weights_are_rejected() {
        let means = RealMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 0.0]);
        let k = analytic_ica_cumulant(&means, &[1.0, 1.0], 3).unwrap();
        assert!(matches!(recover_weights(&means, 2.0, &k), Err(Error::IllConditioned(_))));
    }

    #[test]
    fn noiseless_two_component_learning() {
        let means = RealMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 3.0]);
        let gmm = GmmParams::uniform(means, RealMatrix::zeros(2, 2)).unwrap();
        let mut rng = SeededRng::new(2);
        let mut report = learn_means(&gmm, gmm.covariance(), &settings(2, 1_000_000), Some(&gmm), &mut rng).unwrap();
        assert!(!report.failed);
        assert!(report.tv_gap < 0.05);
        let metrics = evaluate_recovery(&mut report, &gmm).unwrap();
        assert!(metrics.max_error < 0.1, "{}", metrics.max_error);
        assert!(metrics.weight_error.unwrap() < 0.05);
    }

    #[test]
    fn failure_is_reported_not_raised() {
        let gmm = GmmParams::uniform(RealMatrix::from_row_slice(1, 2, &[1.0, -1.0]), RealMatrix::identity(1, 1)).unwrap();
        let mut s = settings(2, 100_000);
        s.threshold = ThresholdChoice::Fixed(3);
        s.bounds.b = 1e-9;
        let mut rng = SeededRng::new(3);
        let report = learn_means(&gmm, gmm.covariance(), &s, None, &mut rng).unwrap();
        assert!(report.failed);
        assert!(report.estimated_means.is_none());
        assert!(report.tv_gap > 1.0);
    }

    #[test]
    fn precondition_is_checked() {
        let gmm = GmmParams::uniform(RealMatrix::from_row_slice(1, 2, &[1.0, 2.0]), RealMatrix::identity(1, 1)).unwrap();
        let mut s = settings(2, 1000);
        s.bounds.b = 10.0;
        let mut rng = SeededRng::new(4);
        assert!(matches!(
            learn_means(&gmm, gmm.covariance(), &s, Some(&gmm), &mut rng),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn evaluation_examples() {
        let truth = GmmParams::uniform(
            RealMatrix::from_row_slice(2, 3, &[1.0, 0.0, -1.0, 0.0, 1.0, 1.0]),
            RealMatrix::identity(2, 2),
        )
        .unwrap();
        let mut report = LearnReport {
            estimated_means: Some(truth.means().clone()),
            estimated_weights: Some(vec![1.0 / 3.0; 3]),
            weights_clipped: false,
            aligned_error: None,
            params: compute_reduction_params(
                &ReductionInputs {
                    n: 2,
                    m: 3,
                    d: 4,
                    delta: 0.1,
                    eps: 0.1,
                    w: 1.0,
                    u: 2.0,
                    r: 2.0,
                    b: 0.1,
                    sigma: 1.0,
                },
                &ReductionPolicy::default(),
            )
            .unwrap(),
            tau_used: 10,
            tv_gap: 0.0,
            samples_used: 0,
            failed: false,
            failure: None,
            eigengap: None,
            mean_conditioning: None,
        };
        let m = evaluate_recovery(&mut report, &truth).unwrap();
        assert_eq!(m.max_error, 0.0);
        assert_eq!(m.permutation, vec![0, 1, 2]);

        let mut permuted = truth.means().clone();
        permuted.swap_columns(0, 2);
        report.estimated_means = Some(permuted);
        let m = evaluate_recovery(&mut report, &truth).unwrap();
        assert_eq!(m.max_error, 0.0);
        assert_eq!(m.permutation, vec![2, 1, 0]);

        let noisy = truth.means().map(|x| x + 0.05 / 2f64.sqrt());
        report.estimated_means = Some(noisy);
        assert!(evaluate_recovery(&mut report, &truth).unwrap().max_error <= 0.1);
        assert!(report.aligned_error.is_some());
    }

    #[test]
    fn weight_cleaning() {
        let (w, flag) = clean_weights(&[0.5, 0.52, -0.02]);
        assert!(!flag);
        assert_abs_diff_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
        assert_eq!(w[2], 0.0);
        assert!(clean_weights(&[0.9, 0.3, -0.2]).1);
    }
}
