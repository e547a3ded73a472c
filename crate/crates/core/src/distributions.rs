//! Poisson and Gaussian samplers, closed-form moment and tail formulas, and
//! the shared-covariance Gaussian mixture.

use std::io::{Read, Write};

use nalgebra::{Cholesky, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{matrix_from_rows, matrix_to_rows, symmetric_eigen_desc, RealMatrix};
use crate::rng::SeededRng;

/// Largest moment order evaluated through Stirling numbers; past this the
/// table entries stop being exact in double precision.
pub const MAX_MOMENT_ORDER: usize = 20;

/// Rates up to this use sequential-search inversion, larger ones PTRS.
const INVERSION_MAX_RATE: f64 = 30.0;

/// Negative eigenvalues of a covariance down to `-PSD_TOLERANCE` are clipped.
const PSD_TOLERANCE: f64 = 1e-10;

// ---------------------------------------------------------------------------
// Poisson sampling

/// Draws from `Poisson(lambda)`.
pub fn sample_poisson(lambda: f64, rng: &mut SeededRng) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    if lambda <= INVERSION_MAX_RATE {
        poisson_inversion(lambda, rng)
    } else {
        poisson_ptrs(lambda, rng)
    }
}

fn poisson_inversion(lambda: f64, rng: &mut SeededRng) -> u64 {
    let u = rng.uniform();
    let mut k = 0u64;
    let mut p = (-lambda).exp();
    let mut cdf = p;
    while u > cdf {
        k += 1;
        p *= lambda / k as f64;
        if p == 0.0 {
            break;
        }
        cdf += p;
    }
    k
}

// Hörmann's transformed rejection with squeeze.
fn poisson_ptrs(lambda: f64, rng: &mut SeededRng) -> u64 {
    let slam = lambda.sqrt();
    let loglam = lambda.ln();
    let b = 0.931 + 2.53 * slam;
    let a = -0.059 + 0.02483 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let vr = 0.9277 - 3.6224 / (b - 2.0);
    loop {
        let u = rng.uniform() - 0.5;
        let v = rng.uniform();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + lambda + 0.43).floor();
        if us >= 0.07 && v <= vr {
            return k as u64;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        let lhs = v.ln() + inv_alpha.ln() - (a / (us * us) + b).ln();
        let rhs = -lambda + k * loglam - libm::lgamma(k + 1.0);
        if lhs <= rhs {
            return k as u64;
        }
    }
}

/// Poissonized multinomial split: draws `X ~ Poisson(lambda)` and assigns each
/// of the `X` events to a category with probabilities `probs`.
pub fn poisson_split(lambda: f64, probs: &[f64], rng: &mut SeededRng) -> Vec<u64> {
    let total = sample_poisson(lambda, rng);
    let mut counts = vec![0u64; probs.len()];
    for _ in 0..total {
        counts[categorical(probs, rng)] += 1;
    }
    counts
}

fn categorical(cumulative_or_probs: &[f64], rng: &mut SeededRng) -> usize {
    let u = rng.uniform();
    let mut acc = 0.0;
    for (i, &p) in cumulative_or_probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    cumulative_or_probs.len() - 1
}

// ---------------------------------------------------------------------------
// Closed forms

/// `cum_ℓ(Poisson(λ)) = λ` for every order.
pub fn poisson_cumulant(ell: usize, lambda: f64) -> Result<f64> {
    if ell == 0 {
        return Err(Error::Domain("cumulant order must be ≥ 1".into()));
    }
    if !(lambda > 0.0) {
        return Err(Error::Parameter(format!("Poisson rate must be positive, got {lambda}")));
    }
    Ok(lambda)
}

/// Stirling numbers of the second kind `S(ℓ, i)` for `0 ≤ i ≤ ℓ`.
pub fn stirling2_row(ell: usize) -> Vec<f64> {
    let mut row = vec![1.0];
    for n in 1..=ell {
        let mut next = vec![0.0; n + 1];
        for k in 1..=n {
            let carry = if k < n { k as f64 * row[k] } else { 0.0 };
            next[k] = carry + row[k - 1];
        }
        row = next;
    }
    row
}

/// Raw moment `E[Y^ℓ]` of `Y ~ Poisson(λ)`, `Σ_i λ^i S(ℓ, i)`.
pub fn poisson_moment(ell: usize, lambda: f64) -> Result<f64> {
    if ell == 0 {
        return Err(Error::Domain("moment order must be ≥ 1".into()));
    }
    if ell > MAX_MOMENT_ORDER {
        return Err(Error::Domain(format!(
            "moment order {ell} exceeds cap {MAX_MOMENT_ORDER}"
        )));
    }
    let row = stirling2_row(ell);
    Ok((1..=ell).map(|i| lambda.powi(i as i32) * row[i]).sum())
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// `E|η|^ℓ` for `η ~ N(0, σ²)`.
pub fn gaussian_abs_moment(ell: usize, sigma: f64) -> Result<f64> {
    if ell == 0 {
        return Err(Error::Domain("moment order must be ≥ 1".into()));
    }
    let scale = sigma.powi(ell as i32);
    let half = ell / 2;
    if ell.is_multiple_of(2) {
        Ok(scale * factorial(ell) / (2f64.powi(half as i32) * factorial(half)))
    } else {
        Ok(scale * 2f64.powf(ell as f64 / 2.0) * factorial((ell - 1) / 2) / std::f64::consts::PI.sqrt())
    }
}

/// Poisson probability mass at `k`.
pub fn poisson_pmf(k: u64, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    let kf = k as f64;
    (kf * lambda.ln() - lambda - libm::lgamma(kf + 1.0)).exp()
}

/// `P(Poisson(λ) ≤ τ)`.
pub fn poisson_cdf(tau: u64, lambda: f64) -> f64 {
    1.0 - poisson_upper_tail(tau, lambda)
}

/// `P(Poisson(λ) > τ)` without cancellation in the far tail.
pub fn poisson_upper_tail(tau: u64, lambda: f64) -> f64 {
    if (tau as f64) >= lambda {
        // Terms decrease past the mode; sum upward until negligible.
        let mut k = tau + 1;
        let mut term = poisson_pmf(k, lambda);
        let mut sum = 0.0;
        let mut comp = 0.0;
        while term > 0.0 {
            let y = term - comp;
            let t = sum + y;
            comp = (t - sum) - y;
            sum = t;
            if term < 1e-18 * sum {
                break;
            }
            k += 1;
            term *= lambda / k as f64;
        }
        sum.min(1.0)
    } else {
        let mut term = (-lambda).exp();
        let mut sum = term;
        for k in 1..=tau {
            term *= lambda / k as f64;
            sum += term;
        }
        (1.0 - sum).max(0.0)
    }
}

/// Total variation between `Poisson(λ)` and the same law truncated to
/// `[0, τ]` and renormalized: `1 − F(τ)`.
pub fn truncated_poisson_tv(lambda: f64, tau: u64) -> f64 {
    poisson_upper_tail(tau, lambda)
}

/// Smallest integer `τ` with `τ > eλ`, `τ ≥ 1`, `τ ≥ ln(1/δ) − λ` and an
/// exact upper tail `P(Poisson(λ) > τ) < δ`.
pub fn poisson_tail_threshold(delta: f64, lambda: f64) -> Result<u64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Parameter(format!("δ must lie in (0, 1), got {delta}")));
    }
    if !(lambda > 0.0) {
        return Err(Error::Parameter(format!("Poisson rate must be positive, got {lambda}")));
    }
    let above_mean = (std::f64::consts::E * lambda).floor() as u64 + 1;
    let log_term = ((1.0 / delta).ln() - lambda).ceil();
    let mut tau = above_mean.max(1).max(if log_term > 0.0 { log_term as u64 } else { 0 });
    while poisson_upper_tail(tau, lambda) >= delta {
        tau += 1;
    }
    Ok(tau)
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

// ---------------------------------------------------------------------------
// Gaussian mixtures

/// `Σ_i w_i N(μ_i, Σ)` with a shared covariance.
#[derive(Debug, Clone)]
pub struct GmmParams {
    means: RealMatrix,
    weights: Vec<f64>,
    covariance: RealMatrix,
    noise_factor: RealMatrix,
}

/// JSON layout of [`GmmParams`]: row-major means (`n` rows, `m` columns).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GmmParamsJson {
    pub means: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
}

impl GmmParams {
    pub fn new(means: RealMatrix, weights: Vec<f64>, covariance: RealMatrix) -> Result<Self> {
        let (n, m) = means.shape();
        if n == 0 || m == 0 {
            return Err(Error::Parameter("mixture needs n ≥ 1 and m ≥ 1".into()));
        }
        if weights.len() != m {
            return Err(Error::Shape(format!("{} weights for {m} components", weights.len())));
        }
        if covariance.shape() != (n, n) {
            return Err(Error::Shape(format!(
                "covariance is {:?}, expected {n}×{n}",
                covariance.shape()
            )));
        }
        if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::Parameter("weights must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Parameter(format!("weights sum to {total}, not 1")));
        }
        if means.iter().chain(covariance.iter()).any(|x| !x.is_finite()) {
            return Err(Error::Parameter("non-finite parameter entry".into()));
        }
        let noise_factor = covariance_factor(&covariance)?;
        Ok(Self {
            means,
            weights,
            covariance,
            noise_factor,
        })
    }

    /// Equal weights `1/m`. The last weight absorbs rounding so the sum is exact to 1e-12.
    pub fn uniform(means: RealMatrix, covariance: RealMatrix) -> Result<Self> {
        let m = means.ncols();
        let weights = vec![1.0 / m as f64; m];
        Self::new(means, weights, covariance)
    }

    pub fn dim(&self) -> usize {
        self.means.nrows()
    }

    pub fn components(&self) -> usize {
        self.means.ncols()
    }

    pub fn means(&self) -> &RealMatrix {
        &self.means
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn covariance(&self) -> &RealMatrix {
        &self.covariance
    }

    /// A factor `L` with `L Lᵀ = Σ`.
    pub fn noise_factor(&self) -> &RealMatrix {
        &self.noise_factor
    }

    /// `√λ_max(Σ)`, the largest directional standard deviation.
    pub fn sigma(&self) -> f64 {
        let (vals, _) = symmetric_eigen_desc(&self.covariance);
        vals[0].max(0.0).sqrt()
    }

    /// Picks a component by weight.
    #[inline]
    pub fn draw_component(&self, rng: &mut SeededRng) -> usize {
        categorical(&self.weights, rng)
    }

    /// Adds `scale · N(0, Σ)` to `out`, where `scale` multiplies the standard deviation.
    #[inline]
    pub fn add_noise(&self, scale: f64, rng: &mut SeededRng, out: &mut [f64]) {
        if scale == 0.0 {
            return;
        }
        let n = self.dim();
        let mut z = [0.0f64; 32];
        let mut heap;
        let z: &mut [f64] = if n <= 32 {
            &mut z[..n]
        } else {
            heap = vec![0.0; n];
            &mut heap
        };
        for zi in z.iter_mut() {
            *zi = rng.standard_normal();
        }
        for (i, o) in out.iter_mut().enumerate().take(n) {
            let mut acc = 0.0;
            for (j, &zj) in z.iter().enumerate().take(i + 1) {
                acc += self.noise_factor[(i, j)] * zj;
            }
            // non-triangular factors from the PSD repair path
            for (j, &zj) in z.iter().enumerate().skip(i + 1) {
                acc += self.noise_factor[(i, j)] * zj;
            }
            *o += scale * acc;
        }
    }

    /// One draw from the mixture written into `out`; returns the component.
    pub fn draw_into(&self, rng: &mut SeededRng, out: &mut [f64]) -> usize {
        let i = self.draw_component(rng);
        for (r, o) in out.iter_mut().enumerate() {
            *o = self.means[(r, i)];
        }
        self.add_noise(1.0, rng, out);
        i
    }

    pub fn to_json(&self) -> GmmParamsJson {
        GmmParamsJson {
            means: matrix_to_rows(&self.means),
            weights: self.weights.clone(),
            covariance: matrix_to_rows(&self.covariance),
        }
    }

    pub fn from_json(json: &GmmParamsJson) -> Result<Self> {
        Self::new(
            matrix_from_rows(&json.means)?,
            json.weights.clone(),
            matrix_from_rows(&json.covariance)?,
        )
    }
}

/// Anything that draws samples of a fixed dimension, such as a mixture.
pub trait MixtureSource: Sync {
    fn dim(&self) -> usize;

    fn draw_into(&self, rng: &mut SeededRng, out: &mut [f64]);
}

impl MixtureSource for GmmParams {
    fn dim(&self) -> usize {
        GmmParams::dim(self)
    }

    fn draw_into(&self, rng: &mut SeededRng, out: &mut [f64]) {
        GmmParams::draw_into(self, rng, out);
    }
}

/// Factor `L` with `L Lᵀ = Σ`: Cholesky when positive definite, otherwise
/// the eigen square root after clipping tiny negative eigenvalues.
pub fn covariance_factor(cov: &RealMatrix) -> Result<RealMatrix> {
    let asym = (cov - cov.transpose()).amax();
    if asym > 1e-12 * cov.amax().max(1.0) {
        return Err(Error::Parameter("covariance is not symmetric".into()));
    }
    if let Some(ch) = Cholesky::new(cov.clone()) {
        return Ok(ch.l());
    }
    let (vals, vecs) = symmetric_eigen_desc(cov);
    let tol = PSD_TOLERANCE * cov.amax().max(1.0);
    if let Some(bad) = vals.iter().find(|&&v| v < -tol) {
        return Err(Error::Parameter(format!(
            "covariance is not positive semidefinite (eigenvalue {bad})"
        )));
    }
    let roots = DVector::from_iterator(vals.len(), vals.iter().map(|v| v.max(0.0).sqrt()));
    Ok(&vecs * RealMatrix::from_diagonal(&roots))
}

/// `count` independent draws from the mixture.
pub fn sample_gmm(params: &GmmParams, rng: &mut SeededRng, count: usize) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| {
            let mut x = vec![0.0; params.dim()];
            params.draw_into(rng, &mut x);
            x
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Sample dumps: "GMMS", n: u32, N: u32, reserved: u32, then N·n f64, all little endian.

const DUMP_MAGIC: &[u8; 4] = b"GMMS";

pub fn write_sample_dump<W: Write>(mut w: W, dim: usize, samples: &[Vec<f64>]) -> Result<()> {
    let n = u32::try_from(dim).map_err(|_| Error::Input("dimension exceeds u32".into()))?;
    let count =
        u32::try_from(samples.len()).map_err(|_| Error::Input("sample count exceeds u32".into()))?;
    w.write_all(DUMP_MAGIC)?;
    w.write_all(&n.to_le_bytes())?;
    w.write_all(&count.to_le_bytes())?;
    w.write_all(&0u32.to_le_bytes())?;
    for s in samples {
        if s.len() != dim {
            return Err(Error::Shape(format!("sample of length {} in a dim-{dim} dump", s.len())));
        }
        for x in s {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_sample_dump<R: Read>(mut r: R) -> Result<(usize, Vec<Vec<f64>>)> {
    let mut header = [0u8; 16];
    r.read_exact(&mut header)?;
    if &header[0..4] != DUMP_MAGIC {
        return Err(Error::Input("bad sample dump magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().expect("4 bytes")) as usize;
    let (n, count) = (word(4), word(8));
    let mut buf = [0u8; 8];
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut s = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut buf)?;
            s.push(f64::from_le_bytes(buf));
        }
        out.push(s);
    }
    Ok((n, out))
}
