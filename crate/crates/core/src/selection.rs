//! Receive-antenna subsets: counting, the class-index bijection used as the
//! classifier label, selection matrices, exhaustive search and the random
//! baseline.
//!
//! Subsets are ranked lexicographically (combinadic order), so for
//! `C(4, 2)` class 0 is `{0, 1}` and class 5 is `{2, 3}`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::exec;
use crate::linalg::{hermitian_eigen, CMatrix, C64};

/// Default cap on the number of subsets an exhaustive search may visit.
pub const DEFAULT_BUDGET: u64 = 1_000_000;

/// Classes per work unit when the search is split across workers.
const CHUNK: u64 = 256;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct AntennaSubset {
    indices: Vec<usize>,
    class_index: u64,
    n_total: usize,
}

impl AntennaSubset {
    pub fn from_indices(indices: Vec<usize>, n_total: usize) -> Result<Self> {
        let class_index = class_from_subset(&indices, n_total)?;
        Ok(AntennaSubset { indices, class_index, n_total })
    }

    /// All antennas, in order.
    pub fn full(n_total: usize) -> Self {
        AntennaSubset { indices: (0..n_total).collect(), class_index: 0, n_total }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn class_index(&self) -> u64 {
        self.class_index
    }

    pub fn n_total(&self) -> usize {
        self.n_total
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// `C(n_total, n_sel)` in exact integer arithmetic.
pub fn subset_count(n_total: usize, n_sel: usize) -> Result<u64> {
    if n_sel == 0 || n_sel > n_total {
        return Err(Error::contract(format!("cannot choose {n_sel} of {n_total} antennas")));
    }
    binomial(n_total, n_sel).ok_or(Error::Overflow { n: n_total, k: n_sel })
}

/// Binomial coefficient, `None` on 64-bit overflow. `C(n, k) = 0` for `k > n`.
fn binomial(n: usize, k: usize) -> Option<u64> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) / (i + 1) stays integral at every step.
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return None;
        }
    }
    Some(acc as u64)
}

/// Lexicographic unranking.
pub fn subset_from_class(class_index: u64, n_total: usize, n_sel: usize) -> Result<AntennaSubset> {
    let count = subset_count(n_total, n_sel)?;
    if class_index >= count {
        return Err(Error::contract(format!("class {class_index} out of range for C({n_total}, {n_sel}) = {count}")));
    }
    let mut rest = class_index;
    let mut indices = Vec::with_capacity(n_sel);
    let mut next = 0;
    for slot in 0..n_sel {
        let remaining = n_sel - slot - 1;
        let mut x = next;
        loop {
            // Subsets whose `slot`-th element is `x`.
            let block = binomial(n_total - x - 1, remaining).expect("bounded by count");
            if rest < block {
                break;
            }
            rest -= block;
            x += 1;
        }
        indices.push(x);
        next = x + 1;
    }
    Ok(AntennaSubset { indices, class_index, n_total })
}

/// Lexicographic rank of a strictly increasing index list.
pub fn class_from_subset(indices: &[usize], n_total: usize) -> Result<u64> {
    if indices.is_empty() || indices.len() > n_total {
        return Err(Error::contract(format!("subset of size {} from {n_total} antennas", indices.len())));
    }
    if indices.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::contract("subset indices must be strictly increasing"));
    }
    if indices[indices.len() - 1] >= n_total {
        return Err(Error::contract(format!(
            "antenna index {} out of range for {n_total}",
            indices[indices.len() - 1]
        )));
    }
    let n_sel = indices.len();
    subset_count(n_total, n_sel)?;
    let mut rank = 0u64;
    let mut next = 0;
    for (slot, &idx) in indices.iter().enumerate() {
        let remaining = n_sel - slot - 1;
        for x in next..idx {
            rank += binomial(n_total - x - 1, remaining).expect("bounded by count");
        }
        next = idx + 1;
    }
    Ok(rank)
}

/// The `N_r x N_R` 0/1 matrix `Q` with `Q H` = the selected rows of `H`.
pub fn selection_matrix(subset: &AntennaSubset) -> CMatrix {
    let mut q = CMatrix::zeros(subset.len(), subset.n_total);
    for (row, &idx) in subset.indices.iter().enumerate() {
        q[(row, idx)] = C64::new(1.0, 0.0);
    }
    q
}

/// The selected rows of `h`, in subset order (equal to `Q H`).
pub fn apply_selection(h: &CMatrix, subset: &AntennaSubset) -> Result<CMatrix> {
    h.select_rows(&subset.indices)
}

/// Rate of the unconstrained optimal precoder on a channel whose Gram matrix
/// `H Hᴴ` is given: `Σ_{i < n_s} log2(1 + snr/n_s · λ_i)`.
pub fn optimal_rate_from_gram(gram: &CMatrix, snr: f64, n_s: usize) -> Result<f64> {
    let eig = hermitian_eigen(gram)?;
    let per_stream = snr / n_s as f64;
    Ok(eig.values.iter().take(n_s).map(|&l| (1.0 + per_stream * l.max(0.0)).log2()).sum())
}

/// Subset-ranking rate: `R(q)` evaluated with the unconstrained optimum
/// (top-`n_s` right singular vectors of the selected channel, equal power).
pub fn subset_rate(h: &CMatrix, subset: &AntennaSubset, snr: f64, n_s: usize) -> Result<f64> {
    let hs = apply_selection(h, subset)?;
    optimal_rate_from_gram(&hs.matmul(&hs.adjoint())?, snr, n_s)
}

/// Exhaustive argmax of `rate` over all `C(n_total, n_sel)` subsets. Ties go to
/// the smallest class index.
pub fn exhaustive_search<F>(n_total: usize, n_sel: usize, budget: u64, rate: F) -> Result<(AntennaSubset, f64)>
where
    F: Fn(&AntennaSubset) -> Result<f64> + Sync + Send,
{
    let count = subset_count(n_total, n_sel)?;
    if count > budget {
        return Err(Error::Budget { count, budget });
    }
    let chunks = count.div_ceil(CHUNK) as usize;
    let partial = exec::try_map_indexed(chunks, |chunk| -> Result<(u64, f64)> {
        let start = chunk as u64 * CHUNK;
        let end = (start + CHUNK).min(count);
        let mut subset = subset_from_class(start, n_total, n_sel)?;
        let mut best = (start, f64::NEG_INFINITY);
        for class in start..end {
            if class > start {
                advance(&mut subset);
            }
            let r = rate(&subset)?;
            if r > best.1 {
                best = (class, r);
            }
        }
        Ok(best)
    })?;
    // Chunks are in ascending class order, so strict `>` keeps the smallest
    // class among equal rates.
    let (class, best_rate) =
        partial.into_iter().fold((0, f64::NEG_INFINITY), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
    Ok((subset_from_class(class, n_total, n_sel)?, best_rate))
}

/// Steps to the lexicographic successor in place.
fn advance(subset: &mut AntennaSubset) {
    let n = subset.n_total;
    let k = subset.indices.len();
    let idx = &mut subset.indices;
    let mut i = k;
    while i > 0 {
        i -= 1;
        if idx[i] < n - k + i {
            idx[i] += 1;
            for j in i + 1..k {
                idx[j] = idx[j - 1] + 1;
            }
            subset.class_index += 1;
            return;
        }
    }
    unreachable!("advance past the last subset");
}

/// Best `n_sel`-row subset of `h` under the optimal-precoder rate at linear
/// `snr` with `n_s` streams.
pub fn exhaustive_best_subset(h: &CMatrix, n_sel: usize, snr: f64, n_s: usize) -> Result<(AntennaSubset, f64)> {
    exhaustive_best_subset_with_budget(h, n_sel, snr, n_s, DEFAULT_BUDGET)
}

pub fn exhaustive_best_subset_with_budget(
    h: &CMatrix,
    n_sel: usize,
    snr: f64,
    n_s: usize,
    budget: u64,
) -> Result<(AntennaSubset, f64)> {
    if n_sel > h.rows() {
        return Err(Error::contract(format!("cannot select {n_sel} of {} rows", h.rows())));
    }
    if n_s == 0 || n_s > n_sel {
        return Err(Error::contract(format!("{n_s} streams over {n_sel} selected antennas")));
    }
    let gram = h.matmul(&h.adjoint())?;
    exhaustive_search(h.rows(), n_sel, budget, |s| {
        let idx = s.indices();
        let sub = CMatrix::from_fn(idx.len(), idx.len(), |r, c| gram[(idx[r], idx[c])]);
        optimal_rate_from_gram(&sub, snr, n_s)
    })
}

/// Uniformly random subset (uniform over class indices).
pub fn random_subset(n_total: usize, n_sel: usize, rng: &mut impl Rng) -> Result<AntennaSubset> {
    let count = subset_count(n_total, n_sel)?;
    subset_from_class(rng.random_range(0..count), n_total, n_sel)
}
