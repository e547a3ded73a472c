//! The mixture-to-ICA reduction: lifting, the single-sample reduction with a
//! Poisson number of mixture draws, and the parameter schedule of the
//! learning algorithm.

use serde::{Deserialize, Serialize};

use crate::distributions::{
    covariance_factor, poisson_tail_threshold, sample_poisson, truncated_poisson_tv, GmmParams, MixtureSource,
};
use crate::error::{Error, Result};
use crate::linalg::{sigma_k, khatri_rao_power, RealMatrix};
use crate::rng::SeededRng;

/// Appends the constant coordinate 1.
pub fn lift(sample: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(sample.len() + 1);
    out.extend_from_slice(sample);
    out.push(1.0);
    out
}

/// The noisy ICA model `X' = A'S' + η'(τ)` induced by a mixture.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LiftedIcaModel {
    /// `A'`: lifted means scaled to unit norm, `(n+1) × m`.
    #[serde(with = "crate::linalg::serde_rows")]
    pub mixing: RealMatrix,
    /// Poisson rates `w_i λ` of the component counts.
    pub rates: Vec<f64>,
    /// `‖μ'_i‖`, so that `S'_i = ‖μ'_i‖ · Poisson(w_i λ)`.
    pub scales: Vec<f64>,
    /// `Σ'`: `Σ` padded with a zero last row and column.
    #[serde(with = "crate::linalg::serde_rows")]
    pub lifted_covariance: RealMatrix,
    pub tau: u64,
    pub lambda: f64,
}

impl LiftedIcaModel {
    pub fn new(gmm: &GmmParams, lambda: f64, tau: u64) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(Error::Parameter(format!("Poisson rate must be positive, got {lambda}")));
        }
        let (n, m) = (gmm.dim(), gmm.components());
        let mut mixing = RealMatrix::zeros(n + 1, m);
        let mut scales = Vec::with_capacity(m);
        for i in 0..m {
            let col = lift(gmm.means().column(i).as_slice());
            let norm = col.iter().map(|x| x * x).sum::<f64>().sqrt();
            for (r, x) in col.iter().enumerate() {
                mixing[(r, i)] = x / norm;
            }
            scales.push(norm);
        }
        let mut lifted_covariance = RealMatrix::zeros(n + 1, n + 1);
        lifted_covariance.view_mut((0, 0), (n, n)).copy_from(gmm.covariance());
        Ok(Self {
            mixing,
            rates: gmm.weights().iter().map(|w| w * lambda).collect(),
            scales,
            lifted_covariance,
            tau,
            lambda,
        })
    }

    /// `cum_ℓ(S'_i) = ‖μ'_i‖^ℓ w_i λ` for each source.
    pub fn source_cumulants(&self, ell: usize) -> Vec<f64> {
        self.rates
            .iter()
            .zip(&self.scales)
            .map(|(r, s)| r * s.powi(ell as i32))
            .collect()
    }
}

/// The single-sample reduction over an arbitrary mixture source with known
/// covariance: `R ~ Poisson(λ)`, then `R` lifted source draws plus lifted
/// noise `N(0, (τ − R)Σ')`.
#[derive(Debug, Clone)]
pub struct ReductionSource<'a, S: MixtureSource> {
    source: &'a S,
    noise_factor: RealMatrix,
    lambda: f64,
    tau: u64,
}

impl<'a, S: MixtureSource> ReductionSource<'a, S> {
    pub fn new(source: &'a S, covariance: &RealMatrix, lambda: f64, tau: u64) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(Error::Parameter(format!("Poisson rate must be positive, got {lambda}")));
        }
        if covariance.shape() != (source.dim(), source.dim()) {
            return Err(Error::Shape(format!(
                "covariance is {:?} for a dim-{} source",
                covariance.shape(),
                source.dim()
            )));
        }
        Ok(Self {
            source,
            noise_factor: covariance_factor(covariance)?,
            lambda,
            tau,
        })
    }

    pub fn lifted_dim(&self) -> usize {
        self.source.dim() + 1
    }

    /// Writes one lifted sample into `out` and returns `R`, or
    /// [`Error::ReductionFailure`] when `R > τ`; the caller must then stop
    /// the whole run.
    pub fn draw_into(&self, rng: &mut SeededRng, out: &mut [f64]) -> Result<u64> {
        let n = self.source.dim();
        let count = sample_poisson(self.lambda, rng);
        if count > self.tau {
            return Err(Error::ReductionFailure { count, tau: self.tau });
        }
        out.iter_mut().for_each(|x| *x = 0.0);
        let mut z = [0.0f64; 64];
        let mut heap;
        let z: &mut [f64] = if n <= 64 {
            &mut z[..n]
        } else {
            heap = vec![0.0; n];
            &mut heap
        };
        for _ in 0..count {
            self.source.draw_into(rng, z);
            for (o, zi) in out.iter_mut().zip(z.iter()) {
                *o += zi;
            }
        }
        out[n] = count as f64;
        let scale = ((self.tau - count) as f64).sqrt();
        if scale > 0.0 {
            for zi in z.iter_mut() {
                *zi = rng.standard_normal();
            }
            for (i, o) in out.iter_mut().take(n).enumerate() {
                let row = self.noise_factor.row(i);
                *o += scale * row.iter().zip(z.iter()).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        Ok(count)
    }
}

/// One sample of the truncated lifted model of `gmm`; see [`ReductionSource`].
pub fn sample_approx_ica(gmm: &GmmParams, lambda: f64, tau: u64, rng: &mut SeededRng) -> Result<Vec<f64>> {
    let source = ReductionSource::new(gmm, gmm.covariance(), lambda, tau)?;
    let mut out = vec![0.0; gmm.dim() + 1];
    source.draw_into(rng, &mut out)?;
    Ok(out)
}

/// Draws from the same law as [`sample_approx_ica`] with one noise draw per
/// sample: the `R` mixture noises and the padding noise add up to
/// `N(0, τΣ)` independently of `R` and of the chosen components.
#[derive(Debug, Clone)]
pub struct ReductionSampler {
    gmm: GmmParams,
    lambda: f64,
    tau: u64,
    noise_scale: f64,
}

impl ReductionSampler {
    pub fn new(gmm: GmmParams, lambda: f64, tau: u64) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(Error::Parameter(format!("Poisson rate must be positive, got {lambda}")));
        }
        Ok(Self {
            gmm,
            lambda,
            tau,
            noise_scale: (tau as f64).sqrt(),
        })
    }

    pub fn lifted_dim(&self) -> usize {
        self.gmm.dim() + 1
    }

    pub fn tau(&self) -> u64 {
        self.tau
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn gmm(&self) -> &GmmParams {
        &self.gmm
    }

    /// Writes one lifted sample into `out` and returns the Poisson count `R`.
    pub fn draw_into(&self, rng: &mut SeededRng, out: &mut [f64]) -> Result<u64> {
        let n = self.gmm.dim();
        let count = sample_poisson(self.lambda, rng);
        if count > self.tau {
            return Err(Error::ReductionFailure { count, tau: self.tau });
        }
        out.iter_mut().for_each(|x| *x = 0.0);
        let means = self.gmm.means();
        for _ in 0..count {
            let i = self.gmm.draw_component(rng);
            for (r, o) in out.iter_mut().take(n).enumerate() {
                *o += means[(r, i)];
            }
        }
        out[n] = count as f64;
        self.gmm.add_noise(self.noise_scale, rng, &mut out[..n]);
        Ok(count)
    }
}

/// Which of the two published moment-bound formulas to use for `M`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MomentBoundFormula {
    /// `max((τσ)^{d+1}, (w/√(1+u²))^{d+1}) (d+1)^{d+1}`, as stated in the
    /// algorithm listing.
    Listing,
    /// `max((τσ)^{d+1}, (√(1+u²)·w)^{d+1}) (d+1)^{d+1}`, which bounds the
    /// moments of `S'` by `‖μ'_max‖ w_max/w_min`.
    #[default]
    Derivation,
}

/// Overridable constants of the parameter schedule.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReductionPolicy {
    /// The universal constant `C` in the threshold formula.
    pub c_policy: f64,
    /// Replaces the computed `ln q(Θ)`.
    pub log_q_theta: Option<f64>,
    pub moment_formula: MomentBoundFormula,
}

impl Default for ReductionPolicy {
    fn default() -> Self {
        Self {
            c_policy: 1.0,
            log_q_theta: None,
            moment_formula: MomentBoundFormula::default(),
        }
    }
}

/// Inputs of the parameter schedule: problem size, accuracy targets and the
/// a-priori bounds on the mixture.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReductionInputs {
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub delta: f64,
    pub eps: f64,
    /// Upper bound on `max w_i / min w_i`.
    pub w: f64,
    /// Upper bound on `max ‖μ_i‖`.
    pub u: f64,
    /// Upper bound on `(max ‖μ_i‖ + 1) / min ‖μ_i‖`.
    pub r: f64,
    /// Lower bound on `σ_m(A^{⊙d/2})`.
    pub b: f64,
    /// `√λ_max(Σ)`.
    pub sigma: f64,
}

/// The internal parameters of the learning algorithm.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReductionParams {
    pub delta1: f64,
    pub delta2: f64,
    pub sigma: f64,
    pub lambda: f64,
    /// Truncation threshold. Kept as a float because the worst-case
    /// schedule routinely exceeds the integer range.
    pub tau: f64,
    pub eps_star: f64,
    pub moment_bound: f64,
    pub cumulant_order: usize,
    pub cumulant_bound: f64,
    pub q_theta: f64,
    pub log_q_theta: f64,
    pub c_policy: f64,
}

/// `ln q(Θ)` for `q(Θ) = n^d m^{d²} σ^{d²} u^{d²} w^{d²} (d+1)^{d²} r^{d²} / (b^d δ₁ ε)`,
/// clamped at 0 so the threshold never drops below its `δ`-only part.
pub fn log_q_theta(inputs: &ReductionInputs, delta1: f64) -> f64 {
    let d = inputs.d as f64;
    let d2 = d * d;
    let ln = |x: f64| if x > 0.0 { x.ln() } else { f64::NEG_INFINITY };
    let v = d * ln(inputs.n as f64)
        + d2 * (ln(inputs.m as f64) + ln(inputs.sigma) + ln(inputs.u) + ln(inputs.w) + ln(d + 1.0) + ln(inputs.r))
        - d * ln(inputs.b)
        - ln(delta1)
        - ln(inputs.eps);
    if v.is_nan() {
        0.0
    } else {
        v.max(0.0)
    }
}

pub fn compute_reduction_params(inputs: &ReductionInputs, policy: &ReductionPolicy) -> Result<ReductionParams> {
    let ReductionInputs {
        n,
        m,
        d,
        delta,
        eps,
        w,
        u,
        r,
        b,
        sigma,
    } = *inputs;
    if d < 4 || d % 2 != 0 {
        return Err(Error::Parameter(format!("tensor order d must be even and ≥ 4, got {d}")));
    }
    if n == 0 || m == 0 {
        return Err(Error::Parameter("n and m must be positive".into()));
    }
    if !(delta > 0.0 && delta < 0.5) || !(eps > 0.0 && eps < 0.5) {
        return Err(Error::Parameter(format!("need 0 < δ, ε < 1/2, got δ={delta}, ε={eps}")));
    }
    if !(w >= 1.0) || !(u > 0.0) || !(r > 0.0) || !(b > 0.0) || !(sigma >= 0.0) {
        return Err(Error::Parameter("bounds must satisfy w ≥ 1, u, r, b > 0, σ ≥ 0".into()));
    }
    if !(policy.c_policy > 0.0) {
        return Err(Error::Parameter("C must be positive".into()));
    }
    let delta1 = delta / 2.0;
    let delta2 = delta / 2.0;
    let lambda = m as f64;
    let log_q = match policy.log_q_theta {
        Some(v) => v,
        None => log_q_theta(inputs, delta1),
    };
    let df = d as f64;
    let spread = (std::f64::consts::E * lambda).powi(2).max(4.0 * policy.c_policy * df * df);
    let raw_tau = 4.0 * ((1.0 / delta2).ln() + log_q) * spread;
    // the reduction also needs τ > eλ and τ ≥ 1
    let tau = raw_tau.ceil().max((std::f64::consts::E * lambda).floor() + 1.0);
    let lifted_norm = (1.0 + u * u).sqrt();
    let eps_star = eps / (lifted_norm + 2.0 * (1.0 + u * u));
    let source_term = match policy.moment_formula {
        MomentBoundFormula::Listing => w / lifted_norm,
        MomentBoundFormula::Derivation => lifted_norm * w,
    };
    let k = d + 1;
    let moment_bound = (tau * sigma).powi(k as i32).max(source_term.powi(k as i32)) * (k as f64).powi(k as i32);
    Ok(ReductionParams {
        delta1,
        delta2,
        sigma,
        lambda,
        tau,
        eps_star,
        moment_bound,
        cumulant_order: k,
        cumulant_bound: w,
        q_theta: log_q.exp(),
        log_q_theta: log_q,
        c_policy: policy.c_policy,
    })
}

/// Union bound on the total variation between `count` ideal and `count`
/// truncated reduction samples: `count · (1 − F(τ))`.
pub fn tv_gap(lambda: f64, tau: u64, count: u64) -> f64 {
    count as f64 * truncated_poisson_tv(lambda, tau)
}

/// Smallest threshold whose [`tv_gap`] over `count` samples is below `delta / 2`.
pub fn desk_threshold(lambda: f64, delta: f64, count: u64) -> Result<u64> {
    poisson_tail_threshold(delta / (2.0 * count.max(1) as f64), lambda)
}

/// `σ_m(B^{⊙d/2})` for the means `B`, the condition number the learner needs
/// bounded away from zero.
pub fn mean_conditioning(means: &RealMatrix, d: usize) -> Result<f64> {
    let power = khatri_rao_power(means, d / 2)?;
    Ok(sigma_k(&power, means.ncols()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cumulants::empirical_cumulant;
    use crate::distributions::poisson_cdf;
    use approx::assert_abs_diff_eq;

    fn inputs() -> ReductionInputs {
        ReductionInputs {
            n: 6,
            m: 6,
            d: 4,
            delta: 0.1,
            eps: 0.1,
            w: 1.0,
            u: 2.0,
            r: 3.0,
            b: 0.1,
            sigma: 0.1,
        }
    }

    #[test]
    fn lift_examples() {
        assert_eq!(lift(&[0.0, 0.0]), vec![0.0, 0.0, 1.0]);
        let x = [0.3, -1.2, 2.0];
        let y = lift(&x);
        let nx: f64 = x.iter().map(|v| v * v).sum();
        let ny: f64 = y.iter().map(|v| v * v).sum();
        assert_abs_diff_eq!(ny, nx + 1.0, epsilon = 1e-15);
        assert_ne!(lift(&[1.0]), lift(&[2.0]));
    }

    #[test]
    fn lifted_model_invariants() {
        let means = RealMatrix::from_row_slice(2, 3, &[1.0, -2.0, 0.0, 0.5, 0.0, 3.0]);
        let gmm = GmmParams::new(means, vec![0.2, 0.3, 0.5], RealMatrix::identity(2, 2)).unwrap();
        let model = LiftedIcaModel::new(&gmm, 3.0, 12).unwrap();
        for (j, col) in model.mixing.column_iter().enumerate() {
            assert_abs_diff_eq!(col.norm(), 1.0, epsilon = 1e-12);
            assert!(col[2] > 0.0);
            // μ_i = A'_i(1:n) / A'_i(n+1)
            assert_abs_diff_eq!(col[0] / col[2], gmm.means()[(0, j)], epsilon = 1e-12);
        }
        assert!(model.lifted_covariance.row(2).iter().all(|&x| x == 0.0));
        assert!(model.lifted_covariance.column(2).iter().all(|&x| x == 0.0));
        assert_abs_diff_eq!(model.rates.iter().sum::<f64>(), 3.0, epsilon = 1e-12);
    }

    #[test]
    fn empty_draw_is_pure_noise() {
        // with λ tiny, R = 0 nearly always
        let gmm = GmmParams::new(RealMatrix::from_row_slice(1, 1, &[5.0]), vec![1.0], RealMatrix::identity(1, 1)).unwrap();
        let mut rng = SeededRng::new(1);
        let mut seen = 0;
        for _ in 0..100 {
            let s = sample_approx_ica(&gmm, 1e-9, 4, &mut rng).unwrap();
            if s[1] == 0.0 {
                seen += 1;
                assert!(s[0].abs() < 20.0);
            }
        }
        assert_eq!(seen, 100);
    }

    #[test]
    fn deterministic_components_give_counts() {
        let gmm = GmmParams::new(RealMatrix::from_row_slice(1, 1, &[1.0]), vec![1.0], RealMatrix::zeros(1, 1)).unwrap();
        let mut rng = SeededRng::new(2);
        let sampler = ReductionSampler::new(gmm.clone(), 2.0, 30).unwrap();
        for _ in 0..200 {
            let s = sample_approx_ica(&gmm, 2.0, 30, &mut rng).unwrap();
            assert_eq!(s[0], s[1]);
            assert_eq!(s[1].fract(), 0.0);
            let mut t = [0.0; 2];
            let r = sampler.draw_into(&mut rng, &mut t).unwrap();
            assert_eq!(t, [r as f64, r as f64]);
        }
    }

    #[test]
    fn last_coordinate_is_a_bounded_count() {
        let gmm = GmmParams::uniform(RealMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]), RealMatrix::identity(2, 2) * 0.5).unwrap();
        let mut rng = SeededRng::new(3);
        for _ in 0..2000 {
            match sample_approx_ica(&gmm, 2.0, 5, &mut rng) {
                Ok(s) => assert!(s[2] >= 0.0 && s[2] <= 5.0 && s[2].fract() == 0.0),
                Err(Error::ReductionFailure { count, tau }) => assert!(count > tau),
                Err(e) => panic!("{e}"),
            }
        }
    }

    #[test]
    fn accepted_fraction_matches_cdf() {
        let gmm = GmmParams::new(RealMatrix::zeros(1, 1), vec![1.0], RealMatrix::zeros(1, 1)).unwrap();
        let mut rng = SeededRng::new(4);
        let trials = 20_000;
        let ok = (0..trials).filter(|_| sample_approx_ica(&gmm, 4.0, 5, &mut rng).is_ok()).count();
        let p = poisson_cdf(5, 4.0);
        let se = (p * (1.0 - p) / trials as f64).sqrt();
        assert!((ok as f64 / trials as f64 - p).abs() < 3.0 * se);
    }

    #[test]
    fn noise_is_tau_sigma_regardless_of_count() {
        let cov = RealMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5]);
        let gmm = GmmParams::new(RealMatrix::zeros(2, 1), vec![1.0], cov.clone()).unwrap();
        let tau = 16;
        let mut rng = SeededRng::new(5);
        let n = 40_000;
        let mut acc = RealMatrix::zeros(2, 2);
        for _ in 0..n {
            let s = sample_approx_ica(&gmm, 2.0, tau, &mut rng).unwrap();
            let v = nalgebra::DVector::from_column_slice(&s[..2]);
            acc += &v * v.transpose();
        }
        acc /= n as f64;
        let target = cov * tau as f64;
        for (a, t) in acc.iter().zip(target.iter()) {
            assert!((a - t).abs() < 0.05 * target.amax(), "{a} vs {t}");
        }
    }

    #[test]
    fn literal_and_aggregated_samplers_agree_in_law() {
        let means = RealMatrix::from_row_slice(2, 2, &[1.0, -0.5, 0.5, 1.0]);
        let gmm = GmmParams::uniform(means, RealMatrix::identity(2, 2) * 0.2).unwrap();
        let sampler = ReductionSampler::new(gmm.clone(), 2.0, 12).unwrap();
        let mut r1 = SeededRng::new(6);
        let mut r2 = SeededRng::new(7);
        let n = 100_000;
        let mut a: Vec<Vec<f64>> = vec![Vec::new(); 3];
        let mut b: Vec<Vec<f64>> = vec![Vec::new(); 3];
        for _ in 0..n {
            let s = sample_approx_ica(&gmm, 2.0, 12, &mut r1).unwrap();
            let mut t = [0.0; 3];
            sampler.draw_into(&mut r2, &mut t).unwrap();
            for c in 0..3 {
                a[c].push(s[c]);
                b[c].push(t[c]);
            }
        }
        for c in 0..3 {
            for l in 1..=3 {
                let x = empirical_cumulant(&a[c], l).unwrap();
                let y = empirical_cumulant(&b[c], l).unwrap();
                assert!((x - y).abs() < 0.1 * x.abs().max(1.0), "coord {c} order {l}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn last_coordinate_has_poisson_signature() {
        let gmm = GmmParams::uniform(RealMatrix::from_row_slice(1, 2, &[1.0, 2.0]), RealMatrix::identity(1, 1)).unwrap();
        let sampler = ReductionSampler::new(gmm, 3.0, 40).unwrap();
        let mut rng = SeededRng::new(8);
        let mut x = [0.0; 2];
        let counts: Vec<f64> = (0..200_000)
            .map(|_| {
                sampler.draw_into(&mut rng, &mut x).unwrap();
                x[1]
            })
            .collect();
        assert!((empirical_cumulant(&counts, 1).unwrap() - 3.0).abs() < 0.03);
        assert!((empirical_cumulant(&counts, 2).unwrap() - 3.0).abs() < 0.06);
    }

    #[test]
    fn schedule_examples() {
        let p = compute_reduction_params(&inputs(), &ReductionPolicy::default()).unwrap();
        assert_eq!(p.lambda, 6.0);
        assert_eq!(p.cumulant_order, 5);
        assert_eq!(p.cumulant_bound, 1.0);
        assert_eq!(p.delta1, 0.05);
        assert!(p.tau > std::f64::consts::E * p.lambda);
        assert_abs_diff_eq!(p.eps_star, 0.1 / (5f64.sqrt() + 10.0), epsilon = 1e-15);
        let listing = compute_reduction_params(
            &inputs(),
            &ReductionPolicy {
                moment_formula: MomentBoundFormula::Listing,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(listing.moment_bound <= p.moment_bound);
    }

    #[test]
    fn smaller_delta_raises_tau() {
        let mut prev = 0.0;
        for &delta in &[0.4, 0.2, 0.1, 0.01, 1e-4, 1e-8] {
            let p = compute_reduction_params(&ReductionInputs { delta, ..inputs() }, &ReductionPolicy::default()).unwrap();
            assert!(p.tau > prev);
            prev = p.tau;
        }
    }

    #[test]
    fn schedule_rejects_bad_inputs() {
        let pol = ReductionPolicy::default();
        assert!(compute_reduction_params(&ReductionInputs { d: 3, ..inputs() }, &pol).is_err());
        assert!(compute_reduction_params(&ReductionInputs { d: 2, ..inputs() }, &pol).is_err());
        assert!(compute_reduction_params(&ReductionInputs { delta: 0.7, ..inputs() }, &pol).is_err());
        assert!(compute_reduction_params(&ReductionInputs { eps: 0.0, ..inputs() }, &pol).is_err());
        assert!(compute_reduction_params(&ReductionInputs { b: 0.0, ..inputs() }, &pol).is_err());
    }

    #[test]
    fn tv_gap_examples() {
        assert_eq!(tv_gap(3.0, 500, 1_000_000), 0.0);
        assert_eq!(tv_gap(2.0, 4, 1), truncated_poisson_tv(2.0, 4));
        for &n in &[1u64, 100, 10_000_000] {
            let delta = 0.1;
            let tau = poisson_tail_threshold(delta / (2.0 * n as f64), 4.0).unwrap();
            assert!(tv_gap(4.0, tau, n) < delta / 2.0);
            assert_eq!(desk_threshold(4.0, delta, n).unwrap(), tau);
        }
    }
}
