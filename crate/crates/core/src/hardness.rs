//! Hard instances in low dimension: Gaussian kernel interpolation of a smooth
//! target on two point sets, the sign split of the interpolant difference
//! into two nearly identical mixtures, the pigeonhole pairing that equalizes
//! component counts, and the embedding of a pair as two noisy ICA models.

pub mod precision;
pub mod quadrature;

use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{normal_cdf, GmmParams};
use crate::error::{Error, Result};
use crate::linalg::{symmetric_eigen_desc, RealMatrix};
use crate::poissonization::{desk_threshold, LiftedIcaModel};
use crate::rng::SeededRng;
use precision::{smallest_eigenvalue, solve_spd, Constants, Fixed, FixedMatrix};

/// Interpolants whose relative solve residual exceeds this are rejected.
pub const RESIDUAL_TOLERANCE: f64 = 1e-8;
/// Margin around the centers covered by 1D quadrature.
pub const QUADRATURE_MARGIN: f64 = 8.0;
/// Monte Carlo estimates with a larger relative standard error are flagged.
pub const MC_RELATIVE_ERROR_LIMIT: f64 = 0.5;

const REFINEMENT_STEPS: usize = 2;
const INVERSE_ITERATIONS: usize = 40;

fn constants() -> &'static Constants {
    static CONSTANTS: OnceLock<Constants> = OnceLock::new();
    CONSTANTS.get_or_init(Constants::new)
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Points in the unit cube together with their fill (covering radius).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSet {
    pub points: Vec<Vec<f64>>,
    pub fill: f64,
}

/// A grid fine enough for the fill estimate while keeping about 2·10⁶ grid points.
pub fn default_grid_resolution(n: usize) -> usize {
    let per_axis = (2.0e6f64).powf(1.0 / n.max(1) as f64).floor() as usize;
    per_axis.saturating_sub(1).clamp(10, 2000)
}

/// Upper bound on the fill of `points`: the largest distance from a grid
/// point of `[0,1]^n` to the set, plus half the grid cell diagonal.
pub fn compute_fill(points: &[Vec<f64>], grid_resolution: usize) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::Domain("fill of an empty point set".into()));
    }
    if grid_resolution < 10 {
        return Err(Error::Parameter(format!(
            "grid resolution must be at least 10 per axis, got {grid_resolution}"
        )));
    }
    let n = points[0].len();
    if n == 0 || points.iter().any(|p| p.len() != n) {
        return Err(Error::Shape("points must share a positive dimension".into()));
    }
    let step = 1.0 / grid_resolution as f64;
    let mut index = vec![0usize; n];
    let mut grid = vec![0.0; n];
    let mut worst: f64 = 0.0;
    loop {
        for (g, &i) in grid.iter_mut().zip(&index) {
            *g = i as f64 * step;
        }
        let nearest = points
            .iter()
            .map(|p| distance(p, &grid))
            .fold(f64::INFINITY, f64::min);
        worst = worst.max(nearest);
        let mut axis = 0;
        loop {
            if axis == n {
                return Ok(worst + 0.5 * step * (n as f64).sqrt());
            }
            index[axis] += 1;
            if index[axis] <= grid_resolution {
                break;
            }
            index[axis] = 0;
            axis += 1;
        }
    }
}

impl PointSet {
    /// Validates that every point lies in the unit cube and computes the fill.
    pub fn new(points: Vec<Vec<f64>>, grid_resolution: usize) -> Result<Self> {
        if points
            .iter()
            .flatten()
            .any(|x| !x.is_finite() || !(0.0..=1.0).contains(x))
        {
            return Err(Error::Domain("points must lie in the unit cube".into()));
        }
        let n = points.first().map_or(1, |p| p.len());
        let grid = if grid_resolution == 0 { default_grid_resolution(n) } else { grid_resolution };
        let fill = compute_fill(&points, grid)?;
        Ok(Self { points, fill })
    }

    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, |p| p.len())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `k` points at `(i − ½)/k`, whose fill is `1/(2k)`.
    pub fn equispaced_1d(k: usize) -> Result<Self> {
        let pts = (1..=k).map(|i| vec![(i as f64 - 0.5) / k as f64]).collect();
        Self::new(pts, 0)
    }

    /// The interleaved design at spacing `h`: with `k = 1/(2h)`, `X` holds
    /// `(i − ½)/k` and `Y` holds `i/k` for `i = 1..k`. Neighbouring points of
    /// `X ∪ Y` are `h` apart.
    pub fn interleaved_1d(h: f64) -> Result<(Self, Self)> {
        if !(h > 0.0 && h <= 0.5) {
            return Err(Error::Parameter(format!("spacing must lie in (0, 1/2], got {h}")));
        }
        let k = (1.0 / (2.0 * h)).round() as usize;
        let x = (1..=k).map(|i| vec![(i as f64 - 0.5) / k as f64]).collect();
        let y = (1..=k).map(|i| vec![i as f64 / k as f64]).collect();
        Ok((Self::new(x, 0)?, Self::new(y, 0)?))
    }

    /// `count` points uniform on `[0,1]^n`.
    pub fn random(count: usize, n: usize, rng: &mut SeededRng) -> Result<Self> {
        let pts = (0..count).map(|_| (0..n).map(|_| rng.uniform()).collect()).collect();
        Self::new(pts, 0)
    }
}

/// The convolution of the unit Gaussian kernel with the uniform density on
/// the cube: `∏_j (Φ(x_j) − Φ(x_j − 1))`.
pub fn target_f(x: &[f64]) -> f64 {
    x.iter().map(|&t| normal_cdf(t) - normal_cdf(t - 1.0)).product()
}

fn target_f_fixed(x: &[f64]) -> Fixed {
    let c = constants();
    let mut acc = Fixed::from_int(1);
    for &t in x {
        let a = Fixed::from_f64(t);
        let b = &a - &Fixed::from_int(1);
        acc = &acc * &(&c.normal_cdf(&a) - &c.normal_cdf(&b));
    }
    acc
}

fn kernel_fixed(a: &[f64], b: &[f64]) -> Fixed {
    let c = constants();
    let mut d2 = Fixed::zero();
    for (x, y) in a.iter().zip(b) {
        let diff = &Fixed::from_f64(*x) - &Fixed::from_f64(*y);
        d2 = &d2 + &(&diff * &diff);
    }
    let mut k = (-&d2).div_int(2).exp();
    for _ in 0..a.len() {
        k = &k * &c.inv_sqrt_2pi;
    }
    k
}

/// `K(x, y) = (2π)^{−n/2} exp(−‖x − y‖²/2)`.
pub fn gaussian_kernel(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    (2.0 * std::f64::consts::PI).powf(-n / 2.0) * (-0.5 * distance(x, y).powi(2)).exp()
}

/// `Σ_i w_i K(x_i, ·)` with possibly negative coefficients.
#[derive(Debug, Clone)]
pub struct SignedMixture {
    pub centers: Vec<Vec<f64>>,
    /// Coefficients rounded to `f64`.
    pub coefficients: Vec<f64>,
    /// Relative residual `‖K_X w − f(X)‖/‖f(X)‖` of the extended-precision solve.
    pub residual: f64,
    /// `λ_max/λ_min` of the kernel matrix.
    pub kernel_condition: f64,
    exact: Vec<Fixed>,
}

impl SignedMixture {
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        self.centers
            .iter()
            .zip(&self.coefficients)
            .map(|(c, w)| w * gaussian_kernel(c, x))
            .sum()
    }

    /// Evaluation in extended precision, rounded at the end.
    pub fn evaluate_precise(&self, x: &[f64]) -> f64 {
        let mut acc = Fixed::zero();
        for (c, w) in self.centers.iter().zip(&self.exact) {
            acc = &acc + &(w * &kernel_fixed(c, x));
        }
        acc.to_f64()
    }
}

fn check_distinct(points: &[Vec<f64>]) -> Result<()> {
    for i in 0..points.len() {
        for j in 0..i {
            if distance(&points[i], &points[j]) == 0.0 {
                return Err(Error::Degenerate(format!("points {j} and {i} coincide")));
            }
        }
    }
    Ok(())
}

/// Solves `K_X w = f(X)` in extended precision.
pub fn interpolate(x: &PointSet) -> Result<SignedMixture> {
    if x.is_empty() {
        return Err(Error::Domain("cannot interpolate on an empty point set".into()));
    }
    check_distinct(&x.points)?;
    let k = x.len();
    let mut data = vec![Fixed::zero(); k * k];
    for i in 0..k {
        for j in 0..=i {
            let v = kernel_fixed(&x.points[i], &x.points[j]);
            data[j * k + i] = v.clone();
            data[i * k + j] = v;
        }
    }
    let kx = FixedMatrix { n: k, data };
    let rhs: Vec<Fixed> = x.points.iter().map(|p| target_f_fixed(p)).collect();
    let (w, ldl, residual) = solve_spd(&kx, &rhs, REFINEMENT_STEPS)?;
    if residual > RESIDUAL_TOLERANCE {
        return Err(Error::IllConditioned(format!(
            "interpolation residual {residual:.3e} exceeds {RESIDUAL_TOLERANCE:e}"
        )));
    }
    let approx = RealMatrix::from_fn(k, k, |i, j| kx.get(i, j).to_f64());
    let lambda_max = symmetric_eigen_desc(&approx).0[0];
    let lambda_min = smallest_eigenvalue(&ldl, INVERSE_ITERATIONS)?;
    Ok(SignedMixture {
        centers: x.points.clone(),
        coefficients: w.iter().map(Fixed::to_f64).collect(),
        residual,
        kernel_condition: lambda_max / lambda_min,
        exact: w,
    })
}

/// How [`l1_distance`] integrates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum L1Method {
    /// Adaptive Gauss–Kronrod over the centers ± 8; 1D only.
    Quadrature,
    /// Importance sampling from `(p + q)/2`.
    MonteCarlo { samples: usize, seed: u64 },
}

impl L1Method {
    /// Quadrature in 1D, Monte Carlo otherwise.
    pub fn auto(dim: usize, samples: usize, seed: u64) -> Self {
        if dim == 1 {
            L1Method::Quadrature
        } else {
            L1Method::MonteCarlo { samples, seed }
        }
    }
}

/// An estimate of `∫|p − q|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct L1Estimate {
    pub value: f64,
    /// Quadrature error plus tail bound, or one Monte Carlo standard error.
    pub error: f64,
    /// Set when the Monte Carlo relative error exceeds [`MC_RELATIVE_ERROR_LIMIT`].
    pub unreliable: bool,
}

fn unit_gmm_check(p: &GmmParams) -> Result<()> {
    let n = p.dim();
    let cov = p.covariance();
    for i in 0..n {
        for j in 0..n {
            let want = if i == j { 1.0 } else { 0.0 };
            if (cov[(i, j)] - want).abs() > 1e-12 {
                return Err(Error::Parameter("L1 distance needs unit covariance mixtures".into()));
            }
        }
    }
    Ok(())
}

fn unit_density(p: &GmmParams, x: &[f64]) -> f64 {
    let means = p.means();
    let n = x.len();
    let norm = (2.0 * std::f64::consts::PI).powf(-(n as f64) / 2.0);
    p.weights()
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let d2: f64 = (0..n).map(|r| (x[r] - means[(r, i)]).powi(2)).sum();
            w * (-0.5 * d2).exp()
        })
        .sum::<f64>()
        * norm
}

/// `‖p − q‖_{L¹}` for two mixtures of unit-covariance Gaussians.
pub fn l1_distance(p: &GmmParams, q: &GmmParams, method: L1Method) -> Result<L1Estimate> {
    if p.dim() != q.dim() {
        return Err(Error::Shape(format!("dimensions {} and {} differ", p.dim(), q.dim())));
    }
    unit_gmm_check(p)?;
    unit_gmm_check(q)?;
    match method {
        L1Method::Quadrature => {
            if p.dim() != 1 {
                return Err(Error::Parameter("quadrature L1 is only available in 1D".into()));
            }
            let centers: Vec<f64> = p.means().iter().chain(q.means().iter()).copied().collect();
            let signed: Vec<f64> = p
                .weights()
                .iter()
                .copied()
                .chain(q.weights().iter().map(|w| -w))
                .collect();
            let lo = centers.iter().copied().fold(f64::INFINITY, f64::min) - QUADRATURE_MARGIN;
            let hi = centers.iter().copied().fold(f64::NEG_INFINITY, f64::max) + QUADRATURE_MARGIN;
            let norm = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
            let integrand = |x: f64| {
                centers
                    .iter()
                    .zip(&signed)
                    .map(|(c, w)| w * (-0.5 * (x - c) * (x - c)).exp())
                    .sum::<f64>()
                    .abs()
                    * norm
            };
            let q = quadrature::integrate(integrand, lo, hi, 1e-18, 1e-10, 4000);
            // Each unit mixture puts at most 2Φ(−8) outside the range.
            let tail = 4.0 * normal_cdf(-QUADRATURE_MARGIN);
            Ok(L1Estimate {
                value: q.value,
                error: q.error + tail,
                unreliable: false,
            })
        }
        L1Method::MonteCarlo { samples, seed } => {
            if samples < 2 {
                return Err(Error::Parameter("Monte Carlo L1 needs at least 2 samples".into()));
            }
            let mut rng = SeededRng::new(seed);
            let n = p.dim();
            let mut x = vec![0.0; n];
            let (mut sum, mut sum_sq) = (0.0, 0.0);
            for _ in 0..samples {
                if rng.uniform() < 0.5 {
                    p.draw_into(&mut rng, &mut x);
                } else {
                    q.draw_into(&mut rng, &mut x);
                }
                let (dp, dq) = (unit_density(p, &x), unit_density(q, &x));
                let ratio = 2.0 * (dp - dq).abs() / (dp + dq);
                sum += ratio;
                sum_sq += ratio * ratio;
            }
            let count = samples as f64;
            let mean = sum / count;
            let var = ((sum_sq / count - mean * mean) * count / (count - 1.0)).max(0.0);
            let error = (var / count).sqrt();
            Ok(L1Estimate {
                value: mean,
                error,
                unreliable: mean == 0.0 || error / mean > MC_RELATIVE_ERROR_LIMIT,
            })
        }
    }
}

/// Two normalized positive mixtures on disjoint center sets.
#[derive(Debug, Clone)]
pub struct MixturePair {
    pub p: GmmParams,
    pub q: GmmParams,
    pub l1: L1Estimate,
    /// Smallest distance between a center of `p` and a center of `q`.
    pub min_center_distance: f64,
    pub fill: f64,
    pub kernel_condition: f64,
    /// `α = Σ` positive coefficients, when built from interpolants.
    pub alpha: Option<f64>,
    /// `β = Σ` negated negative coefficients, when built from interpolants.
    pub beta: Option<f64>,
}

/// Options for building a pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairOptions {
    /// Monte Carlo draws for the L1 estimate in dimension ≥ 2.
    pub mc_samples: usize,
    pub seed: u64,
}

impl Default for PairOptions {
    fn default() -> Self {
        Self {
            mc_samples: 200_000,
            seed: 0,
        }
    }
}

fn columns_to_points(m: &RealMatrix) -> Vec<Vec<f64>> {
    m.column_iter().map(|c| c.iter().copied().collect()).collect()
}

fn points_to_columns(points: &[Vec<f64>]) -> Result<RealMatrix> {
    let n = points.first().map_or(0, |p| p.len());
    if n == 0 || points.iter().any(|p| p.len() != n) {
        return Err(Error::Shape("centers must share a positive dimension".into()));
    }
    Ok(RealMatrix::from_fn(n, points.len(), |r, c| points[c][r]))
}

fn unit_mixture(centers: &[Vec<f64>], weights: Vec<f64>) -> Result<GmmParams> {
    let means = points_to_columns(centers)?;
    let n = means.nrows();
    GmmParams::new(means, weights, RealMatrix::identity(n, n))
}

impl MixturePair {
    /// Assembles a pair from explicit mixtures, measuring the L1 distance.
    pub fn from_mixtures(p: GmmParams, q: GmmParams, fill: f64, kernel_condition: f64, opts: &PairOptions) -> Result<Self> {
        let l1 = l1_distance(&p, &q, L1Method::auto(p.dim(), opts.mc_samples, opts.seed))?;
        let cp = columns_to_points(p.means());
        let cq = columns_to_points(q.means());
        let min_center_distance = cp
            .iter()
            .flat_map(|a| cq.iter().map(move |b| distance(a, b)))
            .fold(f64::INFINITY, f64::min);
        Ok(Self {
            p,
            q,
            l1,
            min_center_distance,
            fill,
            kernel_condition,
            alpha: None,
            beta: None,
        })
    }

    pub fn l1_distance(&self) -> f64 {
        self.l1.value
    }

    pub fn to_instance(&self) -> HardInstance {
        HardInstance {
            centers_p: columns_to_points(self.p.means()),
            weights_p: self.p.weights().to_vec(),
            centers_q: columns_to_points(self.q.means()),
            weights_q: self.q.weights().to_vec(),
            l1_distance: self.l1.value,
            fill: self.fill,
            kernel_condition: self.kernel_condition,
        }
    }

    /// Rebuilds a pair from an exported instance. The stored L1 distance is
    /// kept; its error estimate is unknown and reported as NaN.
    pub fn from_instance(inst: &HardInstance) -> Result<Self> {
        let p = unit_mixture(&inst.centers_p, inst.weights_p.clone())?;
        let q = unit_mixture(&inst.centers_q, inst.weights_q.clone())?;
        if p.dim() != q.dim() {
            return Err(Error::Shape("mixtures of different dimensions".into()));
        }
        let min_center_distance = inst
            .centers_p
            .iter()
            .flat_map(|a| inst.centers_q.iter().map(move |b| distance(a, b)))
            .fold(f64::INFINITY, f64::min);
        if min_center_distance == 0.0 {
            return Err(Error::Degenerate("the two center sets overlap".into()));
        }
        Ok(Self {
            p,
            q,
            l1: L1Estimate {
                value: inst.l1_distance,
                error: f64::NAN,
                unreliable: false,
            },
            min_center_distance,
            fill: inst.fill,
            kernel_condition: inst.kernel_condition,
            alpha: None,
            beta: None,
        })
    }
}

/// JSON form of a hard pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardInstance {
    pub centers_p: Vec<Vec<f64>>,
    pub weights_p: Vec<f64>,
    pub centers_q: Vec<Vec<f64>>,
    pub weights_q: Vec<f64>,
    pub l1_distance: f64,
    pub fill: f64,
    pub kernel_condition: f64,
}

impl HardInstance {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("instance serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Input(format!("hard instance: {e}")))
    }
}

/// Splits `f_X − f_Y` by coefficient sign into `p₁ − p₂` and normalizes both parts.
pub fn build_close_pair(x: &PointSet, y: &PointSet, opts: &PairOptions) -> Result<MixturePair> {
    if x.dim() != y.dim() {
        return Err(Error::Shape(format!("dimensions {} and {} differ", x.dim(), y.dim())));
    }
    for a in &x.points {
        if y.points.iter().any(|b| distance(a, b) == 0.0) {
            return Err(Error::Degenerate("the two point sets share a point".into()));
        }
    }
    let fx = interpolate(x)?;
    let fy = interpolate(y)?;
    let terms: Vec<(&Vec<f64>, Fixed)> = fx
        .centers
        .iter()
        .zip(fx.exact.iter().cloned())
        .chain(fy.centers.iter().zip(fy.exact.iter().map(|w| -w)))
        .collect();
    let (mut alpha, mut beta) = (Fixed::zero(), Fixed::zero());
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for (c, w) in &terms {
        if w.is_positive() {
            alpha = &alpha + w;
            pos.push((*c, w.clone()));
        } else if !w.is_zero() {
            let a = w.abs();
            beta = &beta + &a;
            neg.push((*c, a));
        }
    }
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Degenerate(
            "all coefficients of the interpolant difference share one sign".into(),
        ));
    }
    let normalize = |parts: &[(&Vec<f64>, Fixed)], total: &Fixed| -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        let centers = parts.iter().map(|(c, _)| (*c).clone()).collect();
        let weights = parts
            .iter()
            .map(|(_, w)| w.div(total).map(|v| v.to_f64()))
            .collect::<Result<Vec<f64>>>()?;
        Ok((centers, weights))
    };
    let (cp, wp) = normalize(&pos, &alpha)?;
    let (cq, wq) = normalize(&neg, &beta)?;
    let p = unit_mixture(&cp, wp)?;
    let q = unit_mixture(&cq, wq)?;
    let mut pair = MixturePair::from_mixtures(
        p,
        q,
        x.fill.max(y.fill),
        fx.kernel_condition.max(fy.kernel_condition),
        opts,
    )?;
    pair.alpha = Some(alpha.to_f64());
    pair.beta = Some(beta.to_f64());
    Ok(pair)
}

/// Options for [`pigeonhole_pair`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PigeonholeOptions {
    /// Fresh random partitions tried before giving up.
    pub max_retries: usize,
    pub pair: PairOptions,
}

impl Default for PigeonholeOptions {
    fn default() -> Self {
        Self {
            max_retries: 8,
            pair: PairOptions::default(),
        }
    }
}

/// A pair with equal component counts and the distances of the pairs it came from.
#[derive(Debug, Clone)]
pub struct PigeonholeOutcome {
    pub pair: MixturePair,
    /// L1 distances of the one or two sign-split pairs that were combined.
    pub source_l1: Vec<f64>,
    /// Partitions tried, including the successful one.
    pub partitions: usize,
}

fn average(a: &GmmParams, b: &GmmParams) -> Result<GmmParams> {
    let mut centers = columns_to_points(a.means());
    centers.extend(columns_to_points(b.means()));
    let weights = a.weights().iter().chain(b.weights()).map(|w| 0.5 * w).collect();
    unit_mixture(&centers, weights)
}

/// `p = ½(p₁ + q₂)`, `q = ½(p₂ + q₁)` for pairs `(p₁, q₁)` and `(p₂, q₂)`.
/// When `q_i` has `d` more components than `p_i` for both pairs, the
/// result has equal component counts.
pub fn average_pairs(first: &MixturePair, second: &MixturePair, opts: &PairOptions) -> Result<MixturePair> {
    let p = average(&first.p, &second.q)?;
    let q = average(&second.p, &first.q)?;
    MixturePair::from_mixtures(
        p,
        q,
        first.fill.max(second.fill),
        first.kernel_condition.max(second.kernel_condition),
        opts,
    )
}

/// From `4k²` points, builds `2k` sign-split pairs on disjoint `2k`-subsets
/// and returns either a pair with equal component counts or the average
/// `p = ½(p₁ + q₂)`, `q = ½(p₂ + q₁)` of two pairs whose count differences
/// agree, which has equal counts.
pub fn pigeonhole_pair(points: &PointSet, opts: &PigeonholeOptions, rng: &mut SeededRng) -> Result<PigeonholeOutcome> {
    if points.len() < 8 {
        return Err(Error::Parameter(format!("need at least 8 points, got {}", points.len())));
    }
    let k = ((points.len() / 4) as f64).sqrt().floor() as usize;
    let used = 4 * k * k;
    let grid = default_grid_resolution(points.dim());
    for attempt in 0..opts.max_retries.max(1) {
        let mut order: Vec<usize> = (0..points.len()).collect();
        for i in (1..order.len()).rev() {
            let j = (rng.uniform() * (i + 1) as f64) as usize;
            order.swap(i, j.min(i));
        }
        let pairs: Vec<Option<MixturePair>> = (0..2 * k)
            .into_par_iter()
            .map(|s| {
                let subset = &order[s * 2 * k..(s + 1) * 2 * k];
                let take = |ids: &[usize]| -> Result<PointSet> {
                    PointSet::new(ids.iter().map(|&i| points.points[i].clone()).collect(), grid)
                };
                let x = take(&subset[..k]).ok()?;
                let y = take(&subset[k..]).ok()?;
                let pair_opts = PairOptions {
                    seed: SeededRng::trial_seed(opts.pair.seed, s as u64),
                    ..opts.pair
                };
                build_close_pair(&x, &y, &pair_opts).ok()
            })
            .collect();
        debug_assert!(used <= points.len());
        let built: Vec<MixturePair> = pairs.into_iter().flatten().collect();
        // Orient so that p has no more components than q.
        let oriented: Vec<(MixturePair, usize)> = built
            .into_iter()
            .map(|mut pr| {
                if pr.p.components() > pr.q.components() {
                    std::mem::swap(&mut pr.p, &mut pr.q);
                    std::mem::swap(&mut pr.alpha, &mut pr.beta);
                }
                let diff = pr.q.components() - pr.p.components();
                (pr, diff)
            })
            .collect();
        if let Some((pr, _)) = oriented
            .iter()
            .filter(|(_, d)| *d == 0)
            .min_by(|a, b| a.0.l1.value.total_cmp(&b.0.l1.value))
        {
            return Ok(PigeonholeOutcome {
                source_l1: vec![pr.l1.value],
                pair: pr.clone(),
                partitions: attempt + 1,
            });
        }
        let mut best: Option<(usize, usize, f64)> = None;
        for i in 0..oriented.len() {
            for j in i + 1..oriented.len() {
                if oriented[i].1 == oriented[j].1 {
                    let worst = oriented[i].0.l1.value.max(oriented[j].0.l1.value);
                    if best.is_none_or(|(_, _, w)| worst < w) {
                        best = Some((i, j, worst));
                    }
                }
            }
        }
        if let Some((i, j, _)) = best {
            let (a, b) = (&oriented[i].0, &oriented[j].0);
            return Ok(PigeonholeOutcome {
                pair: average_pairs(a, b, &opts.pair)?,
                source_l1: vec![a.l1.value, b.l1.value],
                partitions: attempt + 1,
            });
        }
    }
    Err(Error::Degenerate(format!(
        "no two sign-split pairs with equal component-count difference after {} partitions",
        opts.max_retries.max(1)
    )))
}

/// The two noisy ICA models obtained by Poissonizing each mixture of a pair
/// with `λ` equal to its component count.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IcaEmbedding {
    pub p: LiftedIcaModel,
    pub q: LiftedIcaModel,
}

/// Truncation policy for [`embed_as_ica`]: `τ` keeps the union-bound total
/// variation over `samples` draws below `δ/2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TauPolicy {
    pub delta: f64,
    pub samples: u64,
}

/// Lifts each mixture of `pair` into an ICA model with rates `w_i λ`,
/// `λ = m`, and a certified truncation threshold.
pub fn embed_as_ica(pair: &MixturePair, policy: &TauPolicy) -> Result<IcaEmbedding> {
    let embed = |g: &GmmParams| -> Result<LiftedIcaModel> {
        let lambda = g.components() as f64;
        let tau = desk_threshold(lambda, policy.delta, policy.samples)?;
        LiftedIcaModel::new(g, lambda, tau)
    };
    Ok(IcaEmbedding {
        p: embed(&pair.p)?,
        q: embed(&pair.q)?,
    })
}
