//! Experiments on the conditioning of perturbed Khatri–Rao squares: the
//! least singular value after a Gaussian perturbation, the column-distance
//! lower bound on σ_min, and anticoncentration of the distance polynomial.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{khatri_rao_power, multilinear_kr_square, sigma_min, RealMatrix};
use crate::rng::SeededRng;

/// Slack allowed when comparing the column-distance bound with σ_min.
pub const RV_SLACK: f64 = 1e-10;

/// Base matrices probed by the perturbation experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaseFamily {
    Zero,
    Gaussian,
    RankOne,
}

impl BaseFamily {
    pub const ALL: [BaseFamily; 3] = [BaseFamily::Zero, BaseFamily::Gaussian, BaseFamily::RankOne];

    pub fn name(self) -> &'static str {
        match self {
            BaseFamily::Zero => "zero",
            BaseFamily::Gaussian => "gaussian",
            BaseFamily::RankOne => "rank-one",
        }
    }
}

/// `n(n−1)/2`.
pub fn pair_count(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// An `n × C(n,2)` base matrix from `family`. The rank-one family is
/// `v wᵀ` with independent standard Gaussian `v`, `w`, so every column is a
/// multiple of one direction.
pub fn base_matrix(family: BaseFamily, n: usize, rng: &mut SeededRng) -> RealMatrix {
    let cols = pair_count(n);
    match family {
        BaseFamily::Zero => RealMatrix::zeros(n, cols),
        BaseFamily::Gaussian => RealMatrix::from_fn(n, cols, |_, _| rng.standard_normal()),
        BaseFamily::RankOne => {
            let v: Vec<f64> = (0..n).map(|_| rng.standard_normal()).collect();
            let w: Vec<f64> = (0..cols).map(|_| rng.standard_normal()).collect();
            RealMatrix::from_fn(n, cols, |i, j| v[i] * w[j])
        }
    }
}

/// One perturbation trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothedTrial {
    pub n: usize,
    pub sigma: f64,
    pub seed: u64,
    /// `σ_min((M+N)^{⊖2})`.
    pub sigma_min_kr2: f64,
    /// `σ_min((M+N)^{⊙2})`, never below the multilinear value.
    pub sigma_min_kr_odot2: f64,
    /// `σ²/n⁷`.
    pub bound: f64,
    pub passed: bool,
}

/// Perturbs `base` (shape `n × C(n,2)`) by iid `N(0, σ²)` entries and
/// compares `σ_min` of the multilinear Khatri–Rao square with `σ²/n⁷`.
pub fn smoothed_trial(base: &RealMatrix, sigma: f64, rng: &mut SeededRng) -> Result<SmoothedTrial> {
    let n = base.nrows();
    if n < 2 || base.ncols() != pair_count(n) {
        return Err(Error::Shape(format!(
            "base matrix must be n × n(n−1)/2, got {:?}",
            base.shape()
        )));
    }
    if !(sigma > 0.0) {
        return Err(Error::Parameter(format!("perturbation scale must be positive, got {sigma}")));
    }
    let seed = rng.seed();
    let perturbed = RealMatrix::from_fn(n, base.ncols(), |i, j| base[(i, j)] + sigma * rng.standard_normal());
    let kr2 = multilinear_kr_square(&perturbed)?;
    let odot2 = khatri_rao_power(&perturbed, 2)?;
    let sigma_min_kr2 = sigma_min(&kr2);
    let bound = sigma * sigma / (n as f64).powi(7);
    Ok(SmoothedTrial {
        n,
        sigma,
        seed,
        sigma_min_kr2,
        sigma_min_kr_odot2: sigma_min(&odot2),
        bound,
        passed: sigma_min_kr2 > bound,
    })
}

/// Both sides of the column-distance bound `min_i dist(C_i, C_{−i})/√m ≤ σ_min(A)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RvCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Distance from column `i` of `a` to the span of the other columns.
pub fn column_distance(a: &RealMatrix, i: usize) -> f64 {
    let m = a.ncols();
    let col = a.column(i).into_owned();
    if m == 1 {
        return col.norm();
    }
    let others = a.clone().remove_column(i);
    let (rows, cols) = others.shape();
    let svd = others.svd(true, false);
    let u = svd.u.expect("requested U");
    let s = &svd.singular_values;
    let smax = s.iter().copied().fold(0.0, f64::max);
    let tol = rows.max(cols) as f64 * smax * f64::EPSILON;
    let mut residual = col.clone();
    for (k, &sv) in s.iter().enumerate() {
        if sv > tol {
            let basis = u.column(k);
            residual -= basis * basis.dot(&col);
        }
    }
    residual.norm()
}

pub fn rv_check(a: &RealMatrix) -> Result<RvCheck> {
    let m = a.ncols();
    if m < 2 {
        return Err(Error::Shape("need at least two columns".into()));
    }
    let lhs = (0..m).map(|i| column_distance(a, i)).fold(f64::INFINITY, f64::min) / (m as f64).sqrt();
    let rhs = sigma_min(a);
    Ok(RvCheck {
        lhs,
        rhs,
        holds: lhs <= rhs + RV_SLACK,
    })
}

/// The column-distance polynomial `P(x) = Σ_{|S|=d} u_S Π_{i∈S}(b_i + x_i)`
/// for a fixed base vector `b` and unit coefficient vector `u`, scaled so
/// that `Var P(x) = 1` under `x ~ N(0, I)`.
#[derive(Debug, Clone)]
pub struct DistancePolynomial {
    subsets: Vec<Vec<usize>>,
    coefficients: Vec<f64>,
    base: Vec<f64>,
    scale: f64,
}

fn subsets_of_size(n: usize, d: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, d: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == d {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, d, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, d, &mut Vec::new(), &mut out);
    out
}

impl DistancePolynomial {
    /// Random instance in `n` variables of degree `d`.
    pub fn random(n: usize, d: usize, rng: &mut SeededRng) -> Result<Self> {
        if d == 0 || d > n {
            return Err(Error::Parameter(format!("degree must lie in [1, {n}], got {d}")));
        }
        let subsets = subsets_of_size(n, d);
        let raw: Vec<f64> = subsets.iter().map(|_| rng.standard_normal()).collect();
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        let coefficients = raw.iter().map(|x| x / norm).collect();
        let base = (0..n).map(|_| rng.standard_normal()).collect();
        let mut p = Self {
            subsets,
            coefficients,
            base,
            scale: 1.0,
        };
        let var = p.variance();
        if !(var > 0.0) {
            return Err(Error::Degenerate("distance polynomial has zero variance".into()));
        }
        p.scale = 1.0 / var.sqrt();
        Ok(p)
    }

    /// Variance under standard Gaussian inputs: the sum of squared
    /// coefficients of every non-constant monomial.
    pub fn variance(&self) -> f64 {
        let mut coeff: std::collections::HashMap<u64, f64> = std::collections::HashMap::new();
        for (s, &u) in self.subsets.iter().zip(&self.coefficients) {
            let d = s.len();
            for mask in 1u64..(1 << d) {
                let mut key = 0u64;
                let mut c = u;
                for (k, &i) in s.iter().enumerate() {
                    if mask & (1 << k) != 0 {
                        key |= 1 << i;
                    } else {
                        c *= self.base[i];
                    }
                }
                *coeff.entry(key).or_insert(0.0) += c;
            }
        }
        self.scale * self.scale * coeff.values().map(|c| c * c).sum::<f64>()
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        let sum: f64 = self
            .subsets
            .iter()
            .zip(&self.coefficients)
            .map(|(s, &u)| u * s.iter().map(|&i| self.base[i] + x[i]).product::<f64>())
            .sum();
        self.scale * sum
    }

    pub fn variables(&self) -> usize {
        self.base.len()
    }
}

/// Empirical small-ball probability of a unit-variance distance polynomial
/// next to the bound `C d ε^{1/d}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnticoncentrationEstimate {
    pub degree: usize,
    pub eps: f64,
    pub trials: usize,
    pub probability: f64,
    pub bound: f64,
}

/// Fraction of `trials` standard Gaussian inputs with `|P(x)| ≤ eps` for a
/// random degree-`d` distance polynomial in `variables` variables.
pub fn anticoncentration_estimate(
    degree: usize,
    eps: f64,
    trials: usize,
    variables: usize,
    c_policy: f64,
    rng: &mut SeededRng,
) -> Result<AnticoncentrationEstimate> {
    if !(eps >= 0.0) {
        return Err(Error::Parameter(format!("ε must be nonnegative, got {eps}")));
    }
    if trials == 0 {
        return Err(Error::Parameter("need at least one trial".into()));
    }
    let poly = DistancePolynomial::random(variables, degree, rng)?;
    let mut x = vec![0.0; variables];
    let mut hits = 0usize;
    for _ in 0..trials {
        x.iter_mut().for_each(|v| *v = rng.standard_normal());
        if poly.evaluate(&x).abs() <= eps {
            hits += 1;
        }
    }
    Ok(AnticoncentrationEstimate {
        degree,
        eps,
        trials,
        probability: hits as f64 / trials as f64,
        bound: c_policy * degree as f64 * eps.powf(1.0 / degree as f64),
    })
}
