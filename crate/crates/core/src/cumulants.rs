//! Empirical and analytic cumulants.
//!
//! Mixed moments are accumulated once per sample over every sorted index
//! tuple (monomial) up to the largest order needed; cumulants are then read
//! off through the moment-cumulant relation over set partitions. Moments are
//! taken about a fixed shift, which leaves every cumulant of order ≥ 2
//! unchanged and keeps the power sums well scaled.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{khatri_rao_power, FlatIndexMap, RealMatrix};

/// Largest order accepted by the univariate estimator.
pub const MAX_UNIVARIATE_ORDER: usize = 6;

/// Largest order the multivariate accumulator will track.
pub const MAX_TENSOR_ORDER: usize = 7;

/// Samples folded into a plain block sum before it is added, compensated, to
/// the running totals.
const BLOCK_LEN: usize = 256;

// ---------------------------------------------------------------------------
// Compensated summation

/// Neumaier running sum.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn merge(&mut self, other: &CompensatedSum) {
        self.add(other.sum);
        self.add(other.comp);
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

// ---------------------------------------------------------------------------
// Univariate

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Converts raw moments `m[1..=L]` (with `m[0] = 1`) to cumulants `κ[1..=L]`.
pub fn moments_to_cumulants(m: &[f64]) -> Vec<f64> {
    let order = m.len() - 1;
    let mut k = vec![0.0; order + 1];
    for n in 1..=order {
        let mut acc = m[n];
        for j in 1..n {
            acc -= binomial(n - 1, j - 1) * k[j] * m[n - j];
        }
        k[n] = acc;
    }
    k
}

/// Plug-in estimate of `cum_ℓ` from scalar samples.
///
/// Moments are taken about the sample mean. This is not a k-statistic, so
/// it carries an `O(1/N)` bias.
pub fn empirical_cumulant(samples: &[f64], ell: usize) -> Result<f64> {
    if ell == 0 || ell > MAX_UNIVARIATE_ORDER {
        return Err(Error::UnsupportedOrder(ell));
    }
    if samples.len() < ell + 1 {
        return Err(Error::Input(format!(
            "{} samples are too few for an order-{ell} cumulant",
            samples.len()
        )));
    }
    let n = samples.len() as f64;
    let mut mean_sum = CompensatedSum::default();
    samples.iter().for_each(|&x| mean_sum.add(x));
    let mean = mean_sum.value() / n;
    if ell == 1 {
        return Ok(mean);
    }
    let mut sums = vec![CompensatedSum::default(); ell + 1];
    for &x in samples {
        let y = x - mean;
        let mut p = 1.0;
        for s in sums.iter_mut().skip(1) {
            p *= y;
            s.add(p);
        }
    }
    let mut m = vec![1.0; ell + 1];
    for j in 1..=ell {
        m[j] = sums[j].value() / n;
    }
    Ok(moments_to_cumulants(&m)[ell])
}

// ---------------------------------------------------------------------------
// Set partitions

/// All set partitions of `{0, …, size−1}`, each a list of blocks with
/// increasing elements.
pub fn set_partitions(size: usize) -> Vec<Vec<Vec<usize>>> {
    let mut out = Vec::new();
    let mut labels = vec![0usize; size];
    fn rec(pos: usize, max_label: usize, labels: &mut [usize], out: &mut Vec<Vec<Vec<usize>>>) {
        let size = labels.len();
        if pos == size {
            let blocks = if size == 0 { 0 } else { max_label + 1 };
            let mut parts = vec![Vec::new(); blocks];
            for (i, &l) in labels.iter().enumerate() {
                parts[l].push(i);
            }
            out.push(parts);
            return;
        }
        let limit = if pos == 0 { 0 } else { max_label + 1 };
        for l in 0..=limit {
            labels[pos] = l;
            rec(pos + 1, max_label.max(l), labels, out);
        }
    }
    rec(0, 0, &mut labels, &mut out);
    out
}

/// `(−1)^{b−1} (b−1)!`, the weight of a partition with `b` blocks.
fn partition_weight(blocks: usize) -> f64 {
    let f: f64 = (1..blocks).map(|i| i as f64).product();
    if blocks % 2 == 1 {
        f
    } else {
        -f
    }
}

// ---------------------------------------------------------------------------
// Monomial table

/// Every sorted index tuple of length `0..=max_order` over `n` variables,
/// ordered so that each tuple follows the tuple obtained by dropping its
/// last index.
#[derive(Debug, Clone)]
struct MonomialTable {
    n: usize,
    parent: Vec<u32>,
    var: Vec<u32>,
    degree_start: Vec<usize>,
    /// `child[idx * n + v]`: the tuple `idx` extended by `v`, or `u32::MAX`
    /// when `v` is smaller than the last index of `idx`.
    child: Vec<u32>,
}

impl MonomialTable {
    fn new(n: usize, max_order: usize) -> Self {
        let mut parent = vec![0u32];
        let mut var = vec![0u32];
        let mut last = vec![0usize];
        let mut degree_start = vec![0, 1];
        for _ in 1..=max_order {
            let (lo, hi) = (degree_start[degree_start.len() - 2], degree_start[degree_start.len() - 1]);
            for p in lo..hi {
                let from = if p == 0 { 0 } else { last[p] };
                for v in from..n {
                    parent.push(p as u32);
                    var.push(v as u32);
                    last.push(v);
                }
            }
            degree_start.push(parent.len());
        }
        let total = parent.len();
        let mut child = vec![u32::MAX; total * n];
        for idx in 1..total {
            child[parent[idx] as usize * n + var[idx] as usize] = idx as u32;
        }
        Self {
            n,
            parent,
            var,
            degree_start,
            child,
        }
    }

    fn len(&self) -> usize {
        self.parent.len()
    }

    fn degree_range(&self, degree: usize) -> std::ops::Range<usize> {
        self.degree_start[degree]..self.degree_start[degree + 1]
    }

    /// Index of a sorted 0-based tuple.
    #[inline]
    fn lookup(&self, sorted: &[usize]) -> usize {
        sorted
            .iter()
            .fold(0usize, |idx, &v| self.child[idx * self.n + v] as usize)
    }

    fn tuple(&self, mut idx: usize) -> Vec<usize> {
        let mut out = Vec::new();
        while idx != 0 {
            out.push(self.var[idx] as usize);
            idx = self.parent[idx] as usize;
        }
        out.reverse();
        out
    }
}

// ---------------------------------------------------------------------------
// Multivariate accumulator

/// Streaming mixed-moment accumulator for vectors in `R^n`.
#[derive(Debug, Clone)]
pub struct MomentAccumulator {
    table: MonomialTable,
    max_order: usize,
    shift: Vec<f64>,
    totals: Vec<CompensatedSum>,
    block: Vec<f64>,
    block_fill: usize,
    values: Vec<f64>,
    centered: Vec<f64>,
    count: u64,
}

impl MomentAccumulator {
    /// Tracks every mixed moment up to `max_order` of `x − shift`.
    pub fn new(shift: Vec<f64>, max_order: usize) -> Result<Self> {
        let n = shift.len();
        if n == 0 {
            return Err(Error::Domain("dimension must be ≥ 1".into()));
        }
        if max_order == 0 || max_order > MAX_TENSOR_ORDER {
            return Err(Error::UnsupportedOrder(max_order));
        }
        let table = MonomialTable::new(n, max_order);
        let len = table.len();
        let mut values = vec![0.0; len];
        values[0] = 1.0;
        Ok(Self {
            table,
            max_order,
            shift,
            totals: vec![CompensatedSum::default(); len],
            block: vec![0.0; len],
            block_fill: 0,
            values,
            centered: vec![0.0; n],
            count: 0,
        })
    }

    /// Accumulates `samples` about their mean.
    pub fn from_samples(samples: &[Vec<f64>], max_order: usize) -> Result<Self> {
        let n = samples
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::Input("no samples".into()))?;
        let mut mean = vec![CompensatedSum::default(); n];
        for s in samples {
            if s.len() != n {
                return Err(Error::Shape("samples of unequal length".into()));
            }
            mean.iter_mut().zip(s).for_each(|(m, &x)| m.add(x));
        }
        let shift = mean.iter().map(|m| m.value() / samples.len() as f64).collect();
        let mut acc = Self::new(shift, max_order)?;
        samples.iter().for_each(|s| acc.push(s));
        Ok(acc)
    }

    pub fn dimension(&self) -> usize {
        self.shift.len()
    }

    pub fn max_order(&self) -> usize {
        self.max_order
    }

    pub fn shift(&self) -> &[f64] {
        &self.shift
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Number of tracked monomials, including the empty one.
    pub fn monomial_count(&self) -> usize {
        self.table.len()
    }

    #[inline]
    pub fn push(&mut self, x: &[f64]) {
        debug_assert_eq!(x.len(), self.shift.len());
        for ((c, &xi), &s) in self.centered.iter_mut().zip(x).zip(&self.shift) {
            *c = xi - s;
        }
        let parent = &self.table.parent;
        let var = &self.table.var;
        let values = &mut self.values;
        let block = &mut self.block;
        for k in 1..values.len() {
            let v = values[parent[k] as usize] * self.centered[var[k] as usize];
            values[k] = v;
            block[k] += v;
        }
        self.count += 1;
        self.block_fill += 1;
        if self.block_fill == BLOCK_LEN {
            self.flush();
        }
    }

    fn flush(&mut self) {
        for (t, b) in self.totals.iter_mut().zip(self.block.iter_mut()) {
            t.add(*b);
            *b = 0.0;
        }
        self.block_fill = 0;
    }

    /// Folds `other` into `self`. Both must share dimension, order and shift.
    pub fn merge(&mut self, mut other: MomentAccumulator) -> Result<()> {
        if other.shift != self.shift || other.max_order != self.max_order {
            return Err(Error::Shape("cannot merge accumulators with different layouts".into()));
        }
        self.flush();
        other.flush();
        for (t, o) in self.totals.iter_mut().zip(&other.totals) {
            t.merge(o);
        }
        self.count += other.count;
        Ok(())
    }

    fn raw_moments(&self) -> Vec<f64> {
        let n = self.count as f64;
        let mut m: Vec<f64> = self
            .totals
            .iter()
            .zip(&self.block)
            .map(|(t, &b)| {
                let mut s = *t;
                s.add(b);
                s.value() / n
            })
            .collect();
        m[0] = 1.0;
        m
    }

    /// Empirical mixed moment `E[Π (X_{i_j} − shift_{i_j})]` for a 0-based tuple.
    pub fn shifted_moment(&self, indices: &[usize]) -> Result<f64> {
        let sorted = self.checked_sort(indices)?;
        Ok(self.raw_moments()[self.table.lookup(&sorted)])
    }

    fn checked_sort(&self, indices: &[usize]) -> Result<Vec<usize>> {
        if indices.len() > self.max_order {
            return Err(Error::UnsupportedOrder(indices.len()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.dimension()) {
            return Err(Error::Domain(format!("index {bad} outside [0, {})", self.dimension())));
        }
        let mut s = indices.to_vec();
        s.sort_unstable();
        Ok(s)
    }

    /// Joint cumulants of every sorted tuple of length `order`, indexed by
    /// monomial position.
    fn cumulants_of_degree(&self, order: usize, coords: usize, moments: &[f64]) -> HashMap<usize, f64> {
        let partitions = set_partitions(order);
        let mut out = HashMap::new();
        let mut block_idx = Vec::with_capacity(order);
        for idx in self.table.degree_range(order) {
            let t = self.table.tuple(idx);
            if t.last().is_some_and(|&v| v >= coords) {
                continue;
            }
            let mut kappa = 0.0;
            for p in &partitions {
                let mut prod = partition_weight(p.len());
                for b in p {
                    block_idx.clear();
                    block_idx.extend(b.iter().map(|&i| t[i]));
                    prod *= moments[self.table.lookup(&block_idx)];
                }
                kappa += prod;
            }
            if order == 1 {
                kappa += self.shift[t[0]];
            }
            out.insert(idx, kappa);
        }
        out
    }

    /// Joint cumulant `κ(X_{i_1}, …, X_{i_ℓ})` for a 0-based tuple.
    pub fn cumulant(&self, indices: &[usize]) -> Result<f64> {
        let sorted = self.checked_sort(indices)?;
        if sorted.is_empty() {
            return Err(Error::UnsupportedOrder(0));
        }
        self.require_samples(sorted.len())?;
        let moments = self.raw_moments();
        let partitions = set_partitions(sorted.len());
        let mut kappa = 0.0;
        for p in &partitions {
            let mut prod = partition_weight(p.len());
            for b in p {
                let blk: Vec<usize> = b.iter().map(|&i| sorted[i]).collect();
                prod *= moments[self.table.lookup(&blk)];
            }
            kappa += prod;
        }
        if sorted.len() == 1 {
            kappa += self.shift[sorted[0]];
        }
        Ok(kappa)
    }

    fn require_samples(&self, order: usize) -> Result<()> {
        if self.count < order as u64 + 1 {
            return Err(Error::Input(format!(
                "{} samples are too few for an order-{order} cumulant",
                self.count
            )));
        }
        Ok(())
    }

    /// The full flattened order-`order` cumulant tensor, symmetric by
    /// construction.
    pub fn flat_cumulant(&self, order: usize) -> Result<FlatCumulant> {
        self.leading_flat_cumulant(order, self.dimension())
    }

    /// The flattened order-`order` cumulant tensor of the first `coords`
    /// coordinates.
    pub fn leading_flat_cumulant(&self, order: usize, coords: usize) -> Result<FlatCumulant> {
        if order == 0 || order > self.max_order {
            return Err(Error::UnsupportedOrder(order));
        }
        if coords == 0 || coords > self.dimension() {
            return Err(Error::Domain(format!(
                "cannot take {coords} leading coordinates of {}",
                self.dimension()
            )));
        }
        self.require_samples(order)?;
        let n = coords;
        let map = FlatIndexMap::new(n, order)?;
        let moments = self.raw_moments();
        let kappas = self.cumulants_of_degree(order, coords, &moments);
        let mut data = vec![0.0; map.len()];
        let mut tuple = vec![0usize; order];
        for (off, slot) in data.iter_mut().enumerate() {
            map.tuple_at(off, &mut tuple);
            tuple.sort_unstable();
            *slot = kappas[&self.table.lookup(&tuple)];
        }
        Ok(FlatCumulant {
            order,
            dimension: n,
            data,
        })
    }
}

/// Samples per chunk in [`accumulate_stream`].
pub const DEFAULT_CHUNK_LEN: usize = 1 << 16;

/// Draws `count` vectors from `sampler` and accumulates their mixed moments
/// up to `max_order`.
///
/// Chunk `c` (of `chunk_len` samples) draws from stream `c + 1` of `seed`, so
/// the result does not depend on the thread count. The first chunk is drawn
/// before the others and its mean becomes the moment shift. The first sampler
/// error stops all chunks and is returned.
pub fn accumulate_stream<F>(
    sampler: F,
    dim: usize,
    max_order: usize,
    count: usize,
    seed: u64,
    chunk_len: usize,
) -> Result<MomentAccumulator>
where
    F: Fn(&mut crate::rng::SeededRng, &mut [f64]) -> Result<()> + Sync,
{
    use rayon::prelude::*;
    use std::sync::atomic::{AtomicBool, Ordering};

    if count == 0 {
        return Err(Error::Input("sample budget must be positive".into()));
    }
    let chunk_len = chunk_len.max(1);
    let root = crate::rng::SeededRng::new(seed);
    let chunks = count.div_ceil(chunk_len);
    let len_of = |c: usize| chunk_len.min(count - c * chunk_len);

    let mut pilot_rng = root.chunk(0);
    let mut pilot = Vec::with_capacity(len_of(0));
    for _ in 0..len_of(0) {
        let mut x = vec![0.0; dim];
        sampler(&mut pilot_rng, &mut x)?;
        pilot.push(x);
    }
    let mut first = MomentAccumulator::from_samples(&pilot, max_order)?;
    drop(pilot);
    let shift = first.shift().to_vec();

    let aborted = AtomicBool::new(false);
    let parts: Vec<Result<Option<MomentAccumulator>>> = (1..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = root.chunk(c as u64);
            let mut acc = MomentAccumulator::new(shift.clone(), max_order)?;
            let mut x = vec![0.0; dim];
            for _ in 0..len_of(c) {
                if aborted.load(Ordering::Relaxed) {
                    return Ok(None);
                }
                if let Err(e) = sampler(&mut rng, &mut x) {
                    aborted.store(true, Ordering::Relaxed);
                    return Err(e);
                }
                acc.push(&x);
            }
            Ok(Some(acc))
        })
        .collect();
    let mut pending = Vec::with_capacity(parts.len());
    for p in parts {
        match p? {
            Some(acc) => pending.push(acc),
            None => continue,
        }
    }
    for acc in pending {
        first.merge(acc)?;
    }
    Ok(first)
}

// ---------------------------------------------------------------------------
// Flat cumulant tensors

/// An order-`ℓ` cumulant tensor of a random vector in `R^n`, flattened under
/// the 1-based δ convention (last index varies fastest).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FlatCumulantWire", into = "FlatCumulantWire")]
pub struct FlatCumulant {
    order: usize,
    dimension: usize,
    data: Vec<f64>,
}

const CONVENTION: &str = "delta-1based";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FlatCumulantWire {
    order: usize,
    dimension: usize,
    data: Vec<f64>,
    convention: String,
}

impl TryFrom<FlatCumulantWire> for FlatCumulant {
    type Error = Error;

    fn try_from(w: FlatCumulantWire) -> Result<Self> {
        if w.convention != CONVENTION {
            return Err(Error::Input(format!("unknown flattening convention {:?}", w.convention)));
        }
        FlatCumulant::new(w.order, w.dimension, w.data)
    }
}

impl From<FlatCumulant> for FlatCumulantWire {
    fn from(f: FlatCumulant) -> Self {
        FlatCumulantWire {
            order: f.order,
            dimension: f.dimension,
            data: f.data,
            convention: CONVENTION.to_string(),
        }
    }
}

impl FlatCumulant {
    pub fn new(order: usize, dimension: usize, data: Vec<f64>) -> Result<Self> {
        let map = FlatIndexMap::new(dimension, order)?;
        if data.len() != map.len() {
            return Err(Error::Shape(format!(
                "{} entries for an order-{order} tensor in dimension {dimension}",
                data.len()
            )));
        }
        Ok(Self {
            order,
            dimension,
            data,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Entry at a 1-based index tuple.
    pub fn get(&self, indices: &[usize]) -> Result<f64> {
        let pos = FlatIndexMap::new(self.dimension, self.order)?.position(indices)?;
        Ok(self.data[pos - 1])
    }

    /// The `n^{ℓ/2} × n^{ℓ/2}` matrix view of an even-order tensor: rows are
    /// indexed by the first half of the tuple.
    pub fn as_matrix(&self) -> Result<RealMatrix> {
        if !self.order.is_multiple_of(2) {
            return Err(Error::UnsupportedOrder(self.order));
        }
        let side = self.dimension.pow((self.order / 2) as u32);
        Ok(RealMatrix::from_row_slice(side, side, &self.data))
    }

    /// Contracts the last index against `u`, giving an order `ℓ−1` tensor.
    pub fn contract_last(&self, u: &[f64]) -> Result<FlatCumulant> {
        if u.len() != self.dimension {
            return Err(Error::Shape(format!(
                "contraction vector of length {} in dimension {}",
                u.len(),
                self.dimension
            )));
        }
        if self.order < 2 {
            return Err(Error::UnsupportedOrder(self.order));
        }
        let data = self
            .data
            .chunks_exact(self.dimension)
            .map(|c| c.iter().zip(u).map(|(a, b)| a * b).sum())
            .collect();
        FlatCumulant::new(self.order - 1, self.dimension, data)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plain numeric struct")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Input(e.to_string()))
    }
}

/// Flattened order-`ℓ` cumulant tensor of vector samples, for `ℓ ∈ {4, 6}`.
///
/// Other orders go through [`MomentAccumulator::flat_cumulant`].
pub fn empirical_cumulant_flat(samples: &[Vec<f64>], ell: usize) -> Result<FlatCumulant> {
    if ell != 4 && ell != 6 {
        return Err(Error::UnsupportedOrder(ell));
    }
    MomentAccumulator::from_samples(samples, ell)?.flat_cumulant(ell)
}

/// `vec(κ_X) = A^{⊙ℓ} · (cum_ℓ(S_1), …, cum_ℓ(S_m))ᵀ` for `X = AS + η` with
/// independent sources and Gaussian `η`.
pub fn analytic_ica_cumulant(a: &RealMatrix, source_cumulants: &[f64], ell: usize) -> Result<FlatCumulant> {
    if ell <= 2 {
        return Err(Error::Domain(format!("analytic cumulants need order > 2, got {ell}")));
    }
    if source_cumulants.len() != a.ncols() {
        return Err(Error::Shape(format!(
            "{} source cumulants for {} columns",
            source_cumulants.len(),
            a.ncols()
        )));
    }
    let power = khatri_rao_power(a, ell)?;
    let c = nalgebra::DVector::from_column_slice(source_cumulants);
    FlatCumulant::new(ell, a.nrows(), (power * c).as_slice().to_vec())
}
