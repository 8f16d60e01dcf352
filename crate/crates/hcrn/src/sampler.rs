//! Subset-selection plans: for each tuple size `k`, pick `t` distinct
//! size-`k` index subsets of `n` objects, uniformly without replacement and
//! reproducibly from a seed.

use std::collections::HashSet;
use std::fmt::Write as _;

use rand::seq::index;
use rand::Rng;
use thiserror::Error;

use crate::seed;

#[derive(Debug, Error, PartialEq)]
pub enum SamplerError {
    #[error("tuple size k={k} out of range for n={n}")]
    KOutOfRange { n: usize, k: usize },
    #[error("k_max={k_max} must satisfy 1 <= k_max <= n-1 for n={n}")]
    BadKMax { n: usize, k_max: usize },
    #[error("need at least two objects, got n={n}")]
    TooFewObjects { n: usize },
}

/// Exact binomial coefficient C(n, k).
pub fn count_subsets(n: usize, k: usize) -> Result<u128, SamplerError> {
    if k > n {
        return Err(SamplerError::KOutOfRange { n, k });
    }
    let k = k.min(n - k);
    let mut result: u128 = 1;
    for i in 1..=k {
        // multiply before dividing keeps every intermediate integral
        result = result * (n - k + i) as u128 / i as u128;
    }
    Ok(result)
}

/// The combination with the given colexicographic-free rank in the
/// lexicographic enumeration of size-`k` subsets of `[0, n)`.
fn unrank_combination(n: usize, k: usize, mut rank: u128) -> Vec<usize> {
    let mut combo = Vec::with_capacity(k);
    let mut next = 0usize;
    for i in 0..k {
        let mut c = next;
        loop {
            let below = count_subsets(n - c - 1, k - i - 1).expect("in range");
            if below <= rank {
                rank -= below;
                c += 1;
            } else {
                combo.push(c);
                next = c + 1;
                break;
            }
        }
    }
    combo
}

/// Draw `min(t, C(n,k))` distinct sorted size-`k` subsets of `[0, n)`,
/// uniformly without replacement, deterministically from the seed.
///
/// Small spaces (`C(n,k) <= 1024`) are enumerated and sampled by index;
/// larger ones are rejection-sampled until `t` distinct subsets are found.
pub fn sample_subsets(
    n: usize,
    k: usize,
    t: usize,
    rng_seed: u64,
) -> Result<Vec<Vec<usize>>, SamplerError> {
    if k == 0 || k > n {
        return Err(SamplerError::KOutOfRange { n, k });
    }
    let total = count_subsets(n, k)?;
    let take = (t as u128).min(total) as usize;
    let mut rng = seed::rng(rng_seed);

    if total <= 1024 {
        let picked = index::sample(&mut rng, total as usize, take);
        let mut out: Vec<Vec<usize>> = picked
            .into_iter()
            .map(|r| unrank_combination(n, k, r as u128))
            .collect();
        out.sort();
        return Ok(out);
    }

    let mut seen: HashSet<Vec<usize>> = HashSet::with_capacity(take);
    let mut out = Vec::with_capacity(take);
    while out.len() < take {
        let mut subset: Vec<usize> = index::sample(&mut rng, n, k).into_iter().collect();
        subset.sort_unstable();
        if seen.insert(subset.clone()) {
            out.push(subset);
        }
    }
    out.sort();
    Ok(out)
}

/// Selected subsets per tuple size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubsetPlan {
    pub n: usize,
    pub k_max: usize,
    pub t: usize,
    /// `(k, subsets)` pairs in ascending `k`; each subset is sorted and
    /// subsets within a `k` are pairwise distinct.
    pub selected: Vec<(usize, Vec<Vec<usize>>)>,
}

impl SubsetPlan {
    pub fn subsets_for(&self, k: usize) -> Option<&[Vec<usize>]> {
        self.selected
            .iter()
            .find(|(kk, _)| *kk == k)
            .map(|(_, s)| s.as_slice())
    }

    pub fn tuple_sizes(&self) -> Vec<usize> {
        self.selected.iter().map(|(k, _)| *k).collect()
    }

    /// Human-readable listing, one subset per line, `k=<k>: i j ...`.
    pub fn to_listing(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "n={} k_max={} t={}", self.n, self.k_max, self.t);
        for (k, subsets) in &self.selected {
            for s in subsets {
                let idx: Vec<String> = s.iter().map(|i| i.to_string()).collect();
                let _ = writeln!(out, "k={}: {}", k, idx.join(" "));
            }
        }
        out
    }
}

/// Tuple sizes a plan will contain for a given `n` and `k_max`.
///
/// Mirrors the degenerate cases: `n == 2` keeps the single pair under
/// `k = 2`, and `k_max == 1` switches to singleton subsets (the
/// no-relations ablation).
pub fn tuple_sizes(n: usize, k_max: usize) -> Result<Vec<usize>, SamplerError> {
    if n == 0 {
        return Err(SamplerError::TooFewObjects { n });
    }
    if n == 1 {
        // degenerate single-object array, e.g. stacked no-relation units;
        // only the singleton is available and |R| stays 1
        return Ok(vec![1]);
    }
    if n == 2 {
        // the pair {0,1} is the only relation available
        return Ok(vec![2]);
    }
    if k_max == 1 {
        return Ok(vec![1]);
    }
    if k_max >= n {
        return Err(SamplerError::BadKMax { n, k_max });
    }
    Ok((2..=k_max).collect())
}

/// Build the full plan for `k` in `tuple_sizes(n, k_max)`.
pub fn build_plan(
    n: usize,
    k_max: usize,
    t: usize,
    rng_seed: u64,
) -> Result<SubsetPlan, SamplerError> {
    let sizes = tuple_sizes(n, k_max)?;
    let mut selected = Vec::with_capacity(sizes.len());
    for k in sizes {
        let subsets = sample_subsets(n, k, t, seed::derive(rng_seed, &[k as u64]))?;
        selected.push((k, subsets));
    }
    Ok(SubsetPlan {
        n,
        k_max,
        t,
        selected,
    })
}

/// Uniform random integer helper used by generators; lives here so that the
/// sampling module owns all direct `Rng` use.
pub fn pick_index<R: Rng>(rng: &mut R, n: usize) -> usize {
    rng.random_range(0..n)
}
