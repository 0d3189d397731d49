//! Mixup candidate pool.
//!
//! A candidate is a `(pair, λ)` triple standing for the virtual image
//! `λ·x_i + (1−λ)·x_j`. Candidates are never stored as pixels; they are
//! materialised on demand when scored or sent to the teacher.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Image};
use crate::error::{Error, Result};

/// Pair enumeration stays exhaustive up to `C(1500, 2)` pairs.
pub const DEFAULT_PAIR_CAP: usize = 1500 * 1499 / 2;

/// Strictly increasing mixing coefficients in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct LambdaGrid(Vec<f64>);

impl LambdaGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::input("lambda grid is empty"));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::input("lambda values must lie in [0, 1]"));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::input("lambda grid must be strictly increasing"));
        }
        Ok(LambdaGrid(values))
    }

    /// `start, start + step, …` up to and including `stop` (within rounding).
    pub fn stepped(start: f64, stop: f64, step: f64) -> Result<Self> {
        if !(step > 0.0) || stop < start {
            return Err(Error::input(
                "stepped grid needs step > 0 and stop >= start",
            ));
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize;
        let values = (0..=count)
            .map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12)
            .collect();
        Self::new(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, lambda: f64) -> bool {
        self.0.iter().any(|&v| v == lambda)
    }
}

/// `0.30, 0.34, …, 0.70`: eleven points, endpoints included.
impl Default for LambdaGrid {
    fn default() -> Self {
        LambdaGrid((0..=10).map(|i| (30 + 4 * i) as f64 / 100.0).collect())
    }
}

impl TryFrom<Vec<f64>> for LambdaGrid {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<LambdaGrid> for Vec<f64> {
    fn from(g: LambdaGrid) -> Self {
        g.0
    }
}

/// Unordered pair of source-image indices, stored canonically with `i < j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "(usize, usize)", into = "(usize, usize)")]
pub struct PairId {
    i: usize,
    j: usize,
}

impl PairId {
    pub fn new(a: usize, b: usize) -> Result<Self> {
        match a.cmp(&b) {
            std::cmp::Ordering::Less => Ok(PairId { i: a, j: b }),
            std::cmp::Ordering::Greater => Ok(PairId { i: b, j: a }),
            std::cmp::Ordering::Equal => {
                Err(Error::input(format!("pair ({a}, {b}) repeats an index")))
            }
        }
    }

    pub fn i(&self) -> usize {
        self.i
    }

    pub fn j(&self) -> usize {
        self.j
    }
}

impl TryFrom<(usize, usize)> for PairId {
    type Error = Error;
    fn try_from((a, b): (usize, usize)) -> Result<Self> {
        PairId::new(a, b)
    }
}

impl From<PairId> for (usize, usize) {
    fn from(p: PairId) -> Self {
        (p.i, p.j)
    }
}

/// The virtual image `lambda·x_i + (1−lambda)·x_j` for `pair = (i, j)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixupCandidate {
    pub pair: PairId,
    pub lambda: f64,
}

/// Weights `(w_first, w_second)` summing to one.
///
/// Both are derived from the larger coefficient, whose complement is exact in
/// floating point, so `weights(λ)` and `weights(1 − λ)` are mirror images bit
/// for bit.
fn weights(lambda: f64) -> (f64, f64) {
    if lambda >= 0.5 {
        (lambda, 1.0 - lambda)
    } else {
        let second = 1.0 - lambda;
        (1.0 - second, second)
    }
}

/// Pixelwise convex combination `lambda·a + (1−lambda)·b`.
///
/// Exact at the endpoints, symmetric under `(a, b, λ) ↔ (b, a, 1−λ)`, and
/// every output pixel lies between its two source pixels.
pub fn synthesize(a: &Image, b: &Image, lambda: f64) -> Result<Image> {
    if a.shape() != b.shape() {
        return Err(Error::input(format!(
            "cannot mix shapes {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::input(format!("lambda {lambda} outside [0, 1]")));
    }
    let (wa, wb) = weights(lambda);
    let px = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(&p, &q)| (wa * p + wb * q).clamp(p.min(q), p.max(q)))
        .collect();
    Ok(Image::from_trusted(a.shape(), px))
}

/// Serializable pool state, independent of the source images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolState {
    pub grid: LambdaGrid,
    pub pairs: Vec<PairId>,
    pub removed: Vec<PairId>,
}

/// Eligible image pairs over a source dataset, with the λ grid they are mixed on.
#[derive(Debug, Clone)]
pub struct CandidatePool {
    source: Dataset,
    grid: LambdaGrid,
    /// Sorted, still eligible.
    pairs: Vec<PairId>,
    removed: BTreeSet<PairId>,
}

/// All `C(n, 2)` pairs of `source`, or `pair_cap` of them sampled uniformly
/// (deterministic in `seed`) when the full enumeration is larger.
pub fn build_pool(
    source: Dataset,
    grid: LambdaGrid,
    pair_cap: Option<usize>,
    seed: u64,
) -> Result<CandidatePool> {
    let n = source.len();
    if n < 2 {
        return Err(Error::input(format!(
            "candidate pool needs at least 2 source images, got {n}"
        )));
    }
    let total = n * (n - 1) / 2;
    let pairs = match pair_cap {
        Some(cap) if cap < total => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut picked = sample(&mut rng, total, cap).into_vec();
            picked.sort_unstable();
            decode_pairs(n, &picked)
        }
        _ => (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| PairId { i, j }))
            .collect(),
    };
    Ok(CandidatePool {
        source,
        grid,
        pairs,
        removed: BTreeSet::new(),
    })
}

/// Maps sorted linear indices over the row-major upper triangle to pairs.
fn decode_pairs(n: usize, sorted: &[usize]) -> Vec<PairId> {
    let mut out = Vec::with_capacity(sorted.len());
    let (mut i, mut row_start) = (0usize, 0usize);
    for &idx in sorted {
        while idx >= row_start + (n - 1 - i) {
            row_start += n - 1 - i;
            i += 1;
        }
        out.push(PairId {
            i,
            j: i + 1 + (idx - row_start),
        });
    }
    out
}

impl CandidatePool {
    pub fn source(&self) -> &Dataset {
        &self.source
    }

    pub fn grid(&self) -> &LambdaGrid {
        &self.grid
    }

    pub fn pairs(&self) -> &[PairId] {
        &self.pairs
    }

    pub fn removed(&self) -> &BTreeSet<PairId> {
        &self.removed
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn contains(&self, pair: PairId) -> bool {
        self.pairs.binary_search(&pair).is_ok()
    }

    /// `|pairs| × |grid|`.
    pub fn candidate_count(&self) -> usize {
        self.pairs.len() * self.grid.len()
    }

    pub fn image(&self, candidate: &MixupCandidate) -> Result<Image> {
        let PairId { i, j } = candidate.pair;
        if j >= self.source.len() {
            return Err(Error::input(format!("pair ({i}, {j}) out of range")));
        }
        synthesize(self.source.image(i), self.source.image(j), candidate.lambda)
    }

    /// Drops `selected` from the eligible set; they can never be chosen again.
    ///
    /// Every pair must currently be eligible and appear once, otherwise the
    /// pool is left untouched and a logic error is returned.
    pub fn remove_pairs(&mut self, selected: &[PairId]) -> Result<()> {
        let mut set = BTreeSet::new();
        for &p in selected {
            if !self.contains(p) {
                return Err(Error::logic(format!(
                    "pair ({}, {}) is not eligible in the pool",
                    p.i, p.j
                )));
            }
            if !set.insert(p) {
                return Err(Error::logic(format!(
                    "pair ({}, {}) removed twice",
                    p.i, p.j
                )));
            }
        }
        self.pairs.retain(|p| !set.contains(p));
        self.removed.extend(set);
        Ok(())
    }

    pub fn state(&self) -> PoolState {
        PoolState {
            grid: self.grid.clone(),
            pairs: self.pairs.clone(),
            removed: self.removed.iter().copied().collect(),
        }
    }

    /// Rebuilds a pool from saved state over the same source images.
    pub fn from_state(source: Dataset, state: PoolState) -> Result<Self> {
        let n = source.len();
        let removed: BTreeSet<PairId> = state.removed.into_iter().collect();
        let mut pairs = state.pairs;
        if pairs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::format(
                "pool.pairs",
                "pairs must be sorted and unique",
            ));
        }
        if pairs.iter().chain(&removed).any(|p| p.j >= n) {
            return Err(Error::format(
                "pool.pairs",
                "pair index exceeds the source size",
            ));
        }
        if pairs.iter().any(|p| removed.contains(p)) {
            return Err(Error::format(
                "pool.removed",
                "a pair is both eligible and removed",
            ));
        }
        pairs.shrink_to_fit();
        Ok(CandidatePool {
            source,
            grid: state.grid,
            pairs,
            removed,
        })
    }
}
