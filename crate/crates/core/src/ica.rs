//! Underdetermined ICA by simultaneous diagonalization of two flattened
//! cumulant tensors.
//!
//! For `X = AS + η` with independent non-Gaussian sources, the order-`d`
//! cumulant viewed as an `n^{d/2} × n^{d/2}` matrix is
//! `A^{⊙d/2} diag(cum_d(S)) (A^{⊙d/2})ᵀ`, and the order-`d+1` cumulant
//! contracted with a vector `u` has the same form with the diagonal scaled
//! by `cum_{d+1}(S_i)⟨u, A_i⟩`. Whitening with the first and
//! diagonalizing the second recovers the columns of `A^{⊙d/2}`, which are
//! then collapsed back to the columns of `A`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::cumulants::{accumulate_stream, FlatCumulant, MomentAccumulator, DEFAULT_CHUNK_LEN};
use crate::error::{Error, Result};
use crate::linalg::{rank1_deflatten, symmetric_eigen_desc, RealMatrix};
use crate::rng::SeededRng;

/// Recovered mixing directions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IcaEstimate {
    /// Unit-norm columns, each up to sign.
    #[serde(with = "crate::linalg::serde_rows")]
    pub columns: RealMatrix,
    /// Smallest gap between the eigenvalues of the whitened contracted
    /// cumulant, relative to the largest eigenvalue magnitude.
    pub eigengap: f64,
    pub order_used: usize,
}

/// Solver knobs.
#[derive(Debug, Clone)]
pub struct IcaOptions {
    /// Random contraction vectors tried; the one with the largest eigengap wins.
    pub contraction_draws: usize,
    /// Explicit contraction vectors, used before any random ones.
    pub contractions: Vec<Vec<f64>>,
    /// The `m`-th whitening eigenvalue must exceed this fraction of the trace.
    pub rank_tolerance: f64,
    /// Smallest acceptable relative eigengap.
    pub min_eigengap: f64,
    /// Samples per parallel chunk when drawing from a sampler.
    pub chunk_len: usize,
}

impl Default for IcaOptions {
    fn default() -> Self {
        Self {
            contraction_draws: 5,
            contractions: Vec::new(),
            rank_tolerance: 1e-10,
            min_eigengap: 1e-10,
            chunk_len: DEFAULT_CHUNK_LEN,
        }
    }
}

/// Smallest even order `d ≥ 4` with `m ≤ n^{d/2}` rank room, preferring 4.
pub fn default_order(n: usize, m: usize) -> usize {
    if m <= n * n {
        4
    } else {
        6
    }
}

fn random_unit(n: usize, rng: &mut SeededRng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.standard_normal()).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn check_order(d: usize) -> Result<()> {
    if d < 4 || !d.is_multiple_of(2) {
        return Err(Error::Parameter(format!("ICA order must be even and ≥ 4, got {d}")));
    }
    Ok(())
}

/// Steps 3–5 of the pipeline on given cumulant tensors of orders `d` and `d+1`.
pub fn ica_from_cumulants(
    even: &FlatCumulant,
    odd: &FlatCumulant,
    m: usize,
    opts: &IcaOptions,
    rng: &mut SeededRng,
) -> Result<IcaEstimate> {
    let d = even.order();
    check_order(d)?;
    let n = even.dimension();
    if odd.order() != d + 1 || odd.dimension() != n {
        return Err(Error::Shape(format!(
            "need cumulants of orders {d} and {} in one dimension, got order {} in dimension {}",
            d + 1,
            odd.order(),
            odd.dimension()
        )));
    }
    let side = n.pow((d / 2) as u32);
    if m == 0 || m > side {
        return Err(Error::Parameter(format!(
            "cannot recover {m} columns from {side}×{side} cumulant matrices"
        )));
    }

    let m0 = even.as_matrix()?;
    let (vals, vecs) = symmetric_eigen_desc(&m0);
    let trace: f64 = vals.iter().map(|v| v.abs()).sum();
    if !(vals[m - 1] > opts.rank_tolerance * trace) {
        return Err(Error::RankDeficient(format!(
            "order-{d} cumulant has eigenvalue {:.3e} at rank {m} (trace {trace:.3e}); too few samples or a degenerate model",
            vals[m - 1]
        )));
    }
    let u_m = vecs.columns(0, m).into_owned();
    let inv_sqrt = DVector::from_iterator(m, vals[..m].iter().map(|v| 1.0 / v.sqrt()));
    let sqrt = DVector::from_iterator(m, vals[..m].iter().map(|v| v.sqrt()));
    let whitener = &u_m * RealMatrix::from_diagonal(&inv_sqrt);
    let colorer = &u_m * RealMatrix::from_diagonal(&sqrt);

    let mut candidates = opts.contractions.clone();
    for _ in 0..opts.contraction_draws {
        candidates.push(random_unit(n, rng));
    }
    if candidates.is_empty() {
        return Err(Error::Parameter("no contraction vectors to try".into()));
    }
    let mut best: Option<(f64, RealMatrix)> = None;
    for u in &candidates {
        let m1 = odd.contract_last(u)?.as_matrix()?;
        let t = whitener.transpose() * m1 * &whitener;
        let (evals, q) = symmetric_eigen_desc(&t);
        let scale = evals.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let gap = if m == 1 {
            1.0
        } else if scale == 0.0 {
            0.0
        } else {
            evals.windows(2).map(|w| w[0] - w[1]).fold(f64::INFINITY, f64::min) / scale
        };
        if best.as_ref().is_none_or(|(g, _)| gap > *g) {
            best = Some((gap, q));
        }
    }
    let (gap, q) = best.expect("at least one candidate");
    if !(gap >= opts.min_eigengap) {
        return Err(Error::IllConditioned(format!(
            "contracted cumulant eigengap {gap:.3e} after {} contractions",
            candidates.len()
        )));
    }

    let lifted = colorer * q;
    let mut columns = RealMatrix::zeros(n, m);
    for (j, col) in lifted.column_iter().enumerate() {
        let v = rank1_deflatten(col.as_slice(), n, d / 2)?;
        columns.set_column(j, &v);
    }
    Ok(IcaEstimate {
        columns,
        eigengap: gap,
        order_used: d,
    })
}

/// Runs the pipeline on the cumulants held by a moment accumulator tracking
/// orders up to at least `d + 1`.
pub fn ica_from_moments(
    acc: &MomentAccumulator,
    m: usize,
    d: usize,
    opts: &IcaOptions,
    rng: &mut SeededRng,
) -> Result<IcaEstimate> {
    check_order(d)?;
    let even = acc.flat_cumulant(d)?;
    let odd = acc.flat_cumulant(d + 1)?;
    ica_from_cumulants(&even, &odd, m, opts, rng)
}

/// Estimates `m` mixing directions from `count` draws of `sampler` in `R^dim`.
///
/// The sampler may fail (for example on a truncation overflow); the first
/// failure ends the run and is returned unchanged.
pub fn underdetermined_ica<F>(
    sampler: F,
    dim: usize,
    m: usize,
    d: usize,
    count: usize,
    opts: &IcaOptions,
    rng: &mut SeededRng,
) -> Result<IcaEstimate>
where
    F: Fn(&mut SeededRng, &mut [f64]) -> Result<()> + Sync,
{
    check_order(d)?;
    let acc = accumulate_stream(sampler, dim, d + 1, count, rng.next_seed(), opts.chunk_len)?;
    ica_from_moments(&acc, m, d, opts, rng)
}

// ---------------------------------------------------------------------------
// Column alignment

/// Matching of estimated columns to true columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    /// `permutation[j]` is the estimated column matched to true column `j`.
    pub permutation: Vec<usize>,
    /// Sign applied to the matched estimate.
    pub signs: Vec<f64>,
    /// Distance per true column after sign correction.
    pub errors: Vec<f64>,
    pub max_error: f64,
}

/// Minimum-sum assignment on a square cost matrix; returns the column
/// assigned to each row.
pub fn min_cost_assignment(cost: &RealMatrix) -> Vec<usize> {
    let n = cost.nrows();
    assert_eq!(n, cost.ncols(), "assignment needs a square cost matrix");
    // Potentials-based Hungarian method with 1-based sentinel row/column 0.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    row_to_col
}

/// Assignment minimizing the largest cost, ties broken by the smallest
/// total cost among bottleneck-optimal assignments.
pub fn bottleneck_assignment(cost: &RealMatrix) -> Vec<usize> {
    let n = cost.nrows();
    if n == 0 {
        return Vec::new();
    }
    let mut levels: Vec<f64> = cost.iter().copied().collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let feasible = |t: f64| {
        let masked = cost.map(|c| if c <= t { c } else { 1e300 });
        let a = min_cost_assignment(&masked);
        a.iter().enumerate().all(|(i, &j)| cost[(i, j)] <= t).then_some(a)
    };
    let (mut lo, mut hi) = (0usize, levels.len() - 1);
    let mut best = feasible(levels[hi]).expect("the largest cost admits every assignment");
    while lo < hi {
        let mid = (lo + hi) / 2;
        match feasible(levels[mid]) {
            Some(a) => {
                best = a;
                hi = mid;
            }
            None => lo = mid + 1,
        }
    }
    best
}

/// Matches estimated unit columns to true columns up to sign and
/// permutation, minimizing the largest column distance.
pub fn align_columns(estimate: &RealMatrix, truth: &RealMatrix) -> Result<Alignment> {
    if estimate.shape() != truth.shape() {
        return Err(Error::Shape(format!(
            "estimate is {:?} but truth is {:?}",
            estimate.shape(),
            truth.shape()
        )));
    }
    let m = truth.ncols();
    let cost = RealMatrix::from_fn(m, m, |j, i| {
        let t = truth.column(j);
        let e = estimate.column(i);
        (e - t).norm().min((e + t).norm())
    });
    let assignment = bottleneck_assignment(&cost);
    let mut signs = Vec::with_capacity(m);
    let mut errors = Vec::with_capacity(m);
    for (j, &i) in assignment.iter().enumerate() {
        let t = truth.column(j);
        let e = estimate.column(i);
        let (plus, minus) = ((e - t).norm(), (e + t).norm());
        if plus <= minus {
            signs.push(1.0);
            errors.push(plus);
        } else {
            signs.push(-1.0);
            errors.push(minus);
        }
    }
    let max_error = errors.iter().copied().fold(0.0, f64::max);
    Ok(Alignment {
        permutation: assignment,
        signs,
        errors,
        max_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cumulants::analytic_ica_cumulant;
    use crate::distributions::sample_poisson;
    use crate::linalg::{khatri_rao_power, normalize_columns, sigma_k};
    use approx::assert_abs_diff_eq;

    fn random_matrix(n: usize, m: usize, rng: &mut SeededRng) -> RealMatrix {
        RealMatrix::from_fn(n, m, |_, _| rng.standard_normal())
    }

    fn oracle(a: &RealMatrix, cums_d: &[f64], cums_d1: &[f64], d: usize, rng: &mut SeededRng) -> Result<IcaEstimate> {
        let even = analytic_ica_cumulant(a, cums_d, d)?;
        let odd = analytic_ica_cumulant(a, cums_d1, d + 1)?;
        ica_from_cumulants(&even, &odd, a.ncols(), &IcaOptions::default(), rng)
    }

    #[test]
    fn oracle_recovers_overcomplete_columns() {
        let mut rng = SeededRng::new(1);
        let mut done = 0;
        while done < 10 {
            let a = normalize_columns(&random_matrix(4, 6, &mut rng));
            if sigma_k(&khatri_rao_power(&a, 2).unwrap(), 6) < 1e-3 {
                continue;
            }
            let c: Vec<f64> = (0..6).map(|i| 1.0 + i as f64 * 0.3).collect();
            let est = oracle(&a, &c, &c, 4, &mut rng).unwrap();
            let al = align_columns(&est.columns, &a).unwrap();
            assert!(al.max_error < 1e-8, "{}", al.max_error);
            for col in est.columns.column_iter() {
                assert_abs_diff_eq!(col.norm(), 1.0, epsilon = 1e-10);
            }
            done += 1;
        }
    }

    #[test]
    fn oracle_recovers_order_six() {
        let mut rng = SeededRng::new(2);
        let a = normalize_columns(&random_matrix(3, 8, &mut rng));
        let c = vec![1.0; 8];
        let est = oracle(&a, &c, &c, 6, &mut rng).unwrap();
        assert_eq!(est.order_used, 6);
        assert!(align_columns(&est.columns, &a).unwrap().max_error < 1e-7);
    }

    #[test]
    fn degenerate_contraction_is_skipped() {
        // u orthogonal to every column gives a zero contracted matrix
        let a = RealMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let c = [1.0, 2.0];
        let even = analytic_ica_cumulant(&a, &c, 4).unwrap();
        let odd = analytic_ica_cumulant(&a, &c, 5).unwrap();
        let mut rng = SeededRng::new(3);
        let only_bad = IcaOptions {
            contraction_draws: 0,
            contractions: vec![vec![0.0, 0.0, 1.0]],
            ..Default::default()
        };
        assert!(matches!(
            ica_from_cumulants(&even, &odd, 2, &only_bad, &mut rng),
            Err(Error::IllConditioned(_))
        ));
        let retry = IcaOptions {
            contraction_draws: 2,
            ..only_bad
        };
        let est = ica_from_cumulants(&even, &odd, 2, &retry, &mut rng).unwrap();
        assert!(est.eigengap > 0.0);
        assert!(align_columns(&est.columns, &a).unwrap().max_error < 1e-10);
    }

    #[test]
    fn rank_deficiency_is_reported() {
        let a = RealMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let even = analytic_ica_cumulant(&a, &[1.0, 1.0], 4).unwrap();
        let odd = analytic_ica_cumulant(&a, &[1.0, 1.0], 5).unwrap();
        let mut rng = SeededRng::new(4);
        assert!(matches!(
            ica_from_cumulants(&even, &odd, 3, &IcaOptions::default(), &mut rng),
            Err(Error::RankDeficient(_))
        ));
    }

    #[test]
    fn noiseless_identity_mixing_from_samples() {
        let mut rng = SeededRng::new(5);
        let sampler = |r: &mut SeededRng, x: &mut [f64]| {
            for (i, xi) in x.iter_mut().enumerate() {
                *xi = sample_poisson((i + 1) as f64, r) as f64;
            }
            Ok(())
        };
        let est = underdetermined_ica(sampler, 3, 3, 4, 1_000_000, &IcaOptions::default(), &mut rng).unwrap();
        let al = align_columns(&est.columns, &RealMatrix::identity(3, 3)).unwrap();
        assert!(al.max_error < 0.05, "{}", al.max_error);
    }

    #[test]
    fn noisy_identity_mixing_from_samples() {
        let mut rng = SeededRng::new(6);
        let sampler = |r: &mut SeededRng, x: &mut [f64]| {
            for (i, xi) in x.iter_mut().enumerate() {
                *xi = sample_poisson((i + 1) as f64, r) as f64 + 0.5 * r.standard_normal();
            }
            Ok(())
        };
        let est = underdetermined_ica(sampler, 3, 3, 4, 1_000_000, &IcaOptions::default(), &mut rng).unwrap();
        let al = align_columns(&est.columns, &RealMatrix::identity(3, 3)).unwrap();
        assert!(al.max_error < 0.1, "{}", al.max_error);
    }

    #[test]
    fn sampler_failure_propagates() {
        let mut rng = SeededRng::new(7);
        let sampler = |r: &mut SeededRng, x: &mut [f64]| {
            x[0] = r.uniform();
            if x[0] > 0.999 {
                Err(Error::ReductionFailure { count: 9, tau: 8 })
            } else {
                Ok(())
            }
        };
        let opts = IcaOptions {
            chunk_len: 1000,
            ..Default::default()
        };
        let r = underdetermined_ica(sampler, 1, 1, 4, 100_000, &opts, &mut rng);
        assert!(matches!(r, Err(Error::ReductionFailure { .. })));
    }

    #[test]
    fn alignment_examples() {
        let t = normalize_columns(&RealMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.0, 0.0, 1.0, 0.3, 0.5, 0.0, 1.0]));
        let same = align_columns(&t, &t).unwrap();
        assert_eq!(same.permutation, vec![0, 1, 2]);
        assert_eq!(same.signs, vec![1.0; 3]);
        assert_eq!(same.max_error, 0.0);

        let mut swapped = t.clone();
        swapped.swap_columns(0, 2);
        let mut c = swapped.column_mut(1);
        c.neg_mut();
        let al = align_columns(&swapped, &t).unwrap();
        assert_eq!(al.permutation, vec![2, 1, 0]);
        assert_eq!(al.signs, vec![1.0, -1.0, 1.0]);
        assert_abs_diff_eq!(al.max_error, 0.0, epsilon = 1e-15);

        let mut rng = SeededRng::new(8);
        let noisy = RealMatrix::from_fn(3, 3, |i, j| t[(i, j)] + 0.01 / 3f64.sqrt() * if rng.uniform() < 0.5 { 1.0 } else { -1.0 });
        assert!(align_columns(&noisy, &t).unwrap().max_error <= 0.02);
    }

    #[test]
    fn bottleneck_beats_min_sum_when_they_differ() {
        let cost = RealMatrix::from_row_slice(2, 2, &[0.0, 0.6, 0.6, 1.0]);
        // min-sum picks the diagonal (total 1.0, max 1.0); bottleneck the anti-diagonal (max 0.6)
        assert_eq!(min_cost_assignment(&cost), vec![0, 1]);
        assert_eq!(bottleneck_assignment(&cost), vec![1, 0]);
    }

    #[test]
    fn hungarian_matches_brute_force() {
        let mut rng = SeededRng::new(9);
        for _ in 0..30 {
            let cost = RealMatrix::from_fn(4, 4, |_, _| rng.uniform());
            let a = min_cost_assignment(&cost);
            let total = |p: &[usize]| p.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum::<f64>();
            let mut best = f64::INFINITY;
            let mut perm = vec![0, 1, 2, 3];
            permute(&mut perm, 0, &mut |p| best = best.min(total(p)));
            assert_abs_diff_eq!(total(&a), best, epsilon = 1e-12);
        }
    }

    fn permute(p: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
        if k == p.len() {
            f(p);
            return;
        }
        for i in k..p.len() {
            p.swap(k, i);
            permute(p, k + 1, f);
            p.swap(k, i);
        }
    }

    #[test]
    fn random_contractions_have_distinct_eigenvalues() {
        let mut rng = SeededRng::new(10);
        for _ in 0..100 {
            let a = normalize_columns(&random_matrix(3, 4, &mut rng));
            let c = vec![1.0; 4];
            let even = analytic_ica_cumulant(&a, &c, 4).unwrap();
            let odd = analytic_ica_cumulant(&a, &c, 5).unwrap();
            let opts = IcaOptions {
                contraction_draws: 1,
                ..Default::default()
            };
            let est = ica_from_cumulants(&even, &odd, 4, &opts, &mut rng).unwrap();
            assert!(est.eigengap > 0.0);
        }
    }

    #[test]
    fn estimate_json_roundtrip() {
        let est = IcaEstimate {
            columns: RealMatrix::identity(2, 2),
            eigengap: 0.5,
            order_used: 4,
        };
        let s = serde_json::to_string(&est).unwrap();
        assert!(s.contains("\"columns\":[[1.0,0.0],[0.0,1.0]]"));
        let back: IcaEstimate = serde_json::from_str(&s).unwrap();
        assert_eq!(back.columns, est.columns);
    }
}
