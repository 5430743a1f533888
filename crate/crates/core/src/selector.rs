//! Submodular image selection.
//!
//! Cosines are mapped to `[0, 1]` and the selector maximizes
//!
//! ```text
//! F(A) = lambda_rel * sum_{i in A} r_i + lambda_cov * sum_j r_j * max_{i in A} d_ij
//! ```
//!
//! under `|A| <= K`. `F` is monotone submodular for non-negative weights, so the
//! greedy below is within `1 - 1/e` of the optimum. The greedy keeps
//! `m_j = max_{p in A} d_pj` cached, which makes one round `O(N^2)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{cosine, EmbeddingMatrix};

const SYMMETRY_TOL: f64 = 1e-9;
const RANGE_SLACK: f64 = 1e-6;

/// Largest ground set [`brute_force_select`] will enumerate.
pub const BRUTE_FORCE_MAX_N: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityBundle {
    r_tilde: Vec<f64>,
    /// Row-major `N x N`.
    d_tilde: Vec<f64>,
}

impl SimilarityBundle {
    pub fn len(&self) -> usize {
        self.r_tilde.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r_tilde.is_empty()
    }

    pub fn relevance(&self) -> &[f64] {
        &self.r_tilde
    }

    pub fn diversity(&self, i: usize, j: usize) -> f64 {
        self.d_tilde[i * self.len() + j]
    }

    /// Builds the bundle straight from a query and the image vectors.
    pub fn from_query<Q, G>(q: &[Q], globals: &[G]) -> Result<Self>
    where
        Q: Copy + Into<f64>,
        G: AsRef<[f32]>,
    {
        let n = globals.len();
        let mut r = Vec::with_capacity(n);
        for (i, g) in globals.iter().enumerate() {
            if g.as_ref().len() != q.len() {
                return Err(Error::contract(format!(
                    "image {i} has dim {}, query has {}",
                    g.as_ref().len(),
                    q.len()
                )));
            }
            r.push(cosine(q, g.as_ref()));
        }
        let mut d = vec![vec![1.0; n]; n];
        for i in 0..n {
            for j in (i + 1)..n {
                let c = cosine(globals[i].as_ref(), globals[j].as_ref());
                d[i][j] = c;
                d[j][i] = c;
            }
        }
        rescale(&r, &d)
    }
}

/// `r~ = (1 + r) / 2`, `d~ = (1 + d) / 2`, with the diagonal snapped to 1.
#[allow(clippy::needless_range_loop)]
pub fn rescale(r: &[f64], d: &[Vec<f64>]) -> Result<SimilarityBundle> {
    let n = r.len();
    if d.len() != n || d.iter().any(|row| row.len() != n) {
        return Err(Error::contract(format!(
            "similarity matrix must be {n}x{n}"
        )));
    }
    let in_range = |v: f64| v.is_finite() && (-1.0 - RANGE_SLACK..=1.0 + RANGE_SLACK).contains(&v);
    if let Some(i) = r.iter().position(|&v| !in_range(v)) {
        return Err(Error::contract(format!(
            "relevance {i} = {} outside [-1, 1]",
            r[i]
        )));
    }
    let mut d_tilde = Vec::with_capacity(n * n);
    for i in 0..n {
        if (d[i][i] - 1.0).abs() > SYMMETRY_TOL {
            return Err(Error::contract(format!(
                "diagonal entry {i} = {} is not 1",
                d[i][i]
            )));
        }
        for j in 0..n {
            let v = d[i][j];
            if !in_range(v) {
                return Err(Error::contract(format!(
                    "similarity ({i},{j}) = {v} outside [-1, 1]"
                )));
            }
            if (v - d[j][i]).abs() > SYMMETRY_TOL {
                return Err(Error::contract(format!(
                    "similarity matrix not symmetric at ({i},{j})"
                )));
            }
            d_tilde.push(if i == j {
                1.0
            } else {
                ((1.0 + v) / 2.0).clamp(0.0, 1.0)
            });
        }
    }
    let r_tilde = r
        .iter()
        .map(|&v| ((1.0 + v) / 2.0).clamp(0.0, 1.0))
        .collect();
    Ok(SimilarityBundle { r_tilde, d_tilde })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SisWeights {
    pub lambda_rel: f64,
    pub lambda_cov: f64,
}

impl Default for SisWeights {
    fn default() -> Self {
        Self {
            lambda_rel: 1.0,
            lambda_cov: 1.0,
        }
    }
}

impl SisWeights {
    pub fn new(lambda_rel: f64, lambda_cov: f64) -> Result<Self> {
        let w = Self {
            lambda_rel,
            lambda_cov,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.lambda_rel) || !ok(self.lambda_cov) {
            return Err(Error::contract(
                "SIS weights must be finite and non-negative",
            ));
        }
        if self.lambda_rel == 0.0 && self.lambda_cov == 0.0 {
            return Err(Error::contract("SIS weights cannot both be zero"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceSelection {
    /// Chosen image indices (0-based) in selection order.
    pub chosen: Vec<usize>,
    /// Marginal gain of each pick.
    pub gains: Vec<f64>,
    pub objective: f64,
    pub budget: usize,
}

impl EvidenceSelection {
    pub fn empty(budget: usize) -> Self {
        Self {
            chosen: Vec::new(),
            gains: Vec::new(),
            objective: 0.0,
            budget,
        }
    }
}

pub fn sis_objective(set: &[usize], bundle: &SimilarityBundle, w: &SisWeights) -> Result<f64> {
    let n = bundle.len();
    if let Some(&i) = set.iter().find(|&&i| i >= n) {
        return Err(Error::contract(format!(
            "image index {i} out of range for {n} images"
        )));
    }
    let mut members = set.to_vec();
    members.sort_unstable();
    members.dedup();
    if members.is_empty() {
        return Ok(0.0);
    }
    let r = &bundle.r_tilde;
    let relevance: f64 = members.iter().map(|&i| r[i]).sum();
    let coverage: f64 = (0..n)
        .map(|j| {
            let best = members
                .iter()
                .map(|&i| bundle.diversity(i, j))
                .fold(f64::NEG_INFINITY, f64::max);
            r[j] * best
        })
        .sum();
    Ok(w.lambda_rel * relevance + w.lambda_cov * coverage)
}

/// Marginal gain of `i` given cached maxima `m_j(A)`.
fn cached_gain(i: usize, cache: &[f64], bundle: &SimilarityBundle, w: &SisWeights) -> f64 {
    let r = &bundle.r_tilde;
    let cov: f64 = (0..bundle.len())
        .map(|j| r[j] * (bundle.diversity(i, j) - cache[j]).max(0.0))
        .sum();
    w.lambda_rel * r[i] + w.lambda_cov * cov
}

/// Greedy maximization with cached maxima. Ties go to the lowest index; stops
/// after `k` picks or when the best gain is not positive.
pub fn greedy_select(
    bundle: &SimilarityBundle,
    w: &SisWeights,
    k: usize,
) -> Result<EvidenceSelection> {
    if k == 0 {
        return Err(Error::contract("selection budget K must be at least 1"));
    }
    w.validate()?;
    let n = bundle.len();
    let mut cache = vec![0.0; n];
    let mut taken = vec![false; n];
    let mut chosen = Vec::with_capacity(k.min(n));
    let mut gains = Vec::with_capacity(k.min(n));
    while chosen.len() < k {
        let mut best: Option<(usize, f64)> = None;
        for i in (0..n).filter(|&i| !taken[i]) {
            let g = cached_gain(i, &cache, bundle, w);
            if best.is_none_or(|(_, bg)| g > bg) {
                best = Some((i, g));
            }
        }
        let Some((i, g)) = best else { break };
        if g <= 0.0 {
            break;
        }
        taken[i] = true;
        chosen.push(i);
        gains.push(g);
        for (j, m) in cache.iter_mut().enumerate() {
            *m = m.max(bundle.diversity(i, j));
        }
    }
    let objective = sis_objective(&chosen, bundle, w)?;
    Ok(EvidenceSelection {
        chosen,
        gains,
        objective,
        budget: k,
    })
}

/// Exact maximizer over all subsets of size at most `k`; ties go to the
/// lexicographically smallest sorted index set. Only for `N <= 20`.
pub fn brute_force_select(
    bundle: &SimilarityBundle,
    w: &SisWeights,
    k: usize,
) -> Result<EvidenceSelection> {
    let n = bundle.len();
    if n > BRUTE_FORCE_MAX_N {
        return Err(Error::Guard(format!(
            "brute force over {n} images exceeds the limit of {BRUTE_FORCE_MAX_N}"
        )));
    }
    w.validate()?;
    // the empty set (F = 0) is a candidate too
    let mut best_set: Vec<usize> = Vec::new();
    let mut best = 0.0;
    for mask in 1u32..(1u32 << n) {
        if mask.count_ones() as usize > k {
            continue;
        }
        let set: Vec<usize> = (0..n).filter(|&i| mask & (1 << i) != 0).collect();
        let value = sis_objective(&set, bundle, w)?;
        if value > best || (value == best && set < best_set) {
            best = value;
            best_set = set;
        }
    }
    Ok(EvidenceSelection {
        gains: Vec::new(),
        objective: best,
        chosen: best_set,
        budget: k,
    })
}

/// Indices of the `k` regions most similar to `q`, most similar first; ties by index.
pub fn top_k_regions<Q: Copy + Into<f64>>(
    q: &[Q],
    regions: &EmbeddingMatrix,
    k: usize,
) -> Result<Vec<usize>> {
    if regions.dim() != q.len() {
        return Err(Error::contract(format!(
            "regions have dim {}, query has {}",
            regions.dim(),
            q.len()
        )));
    }
    let sims: Vec<f64> = regions.iter_rows().map(|r| cosine(q, r)).collect();
    let mut order: Vec<usize> = (0..sims.len()).collect();
    order.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]).then(a.cmp(&b)));
    order.truncate(k);
    Ok(order)
}
