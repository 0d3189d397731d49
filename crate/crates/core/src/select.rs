//! Choosing which mixup candidates to send to the teacher.
//!
//! The student's confidence on an image is its top class probability. A pair's
//! confidence is the minimum over the λ grid, attained at `λ*`. Active mixup
//! takes the `k` least-confident pairs and queries one image per pair. Two
//! baselines are provided: model-free random pairs at λ = 0.5, and "vanilla"
//! per-image ranking that ignores the one-image-per-pair rule.
//!
//! All ties are broken lexicographically so selections are reproducible.

use std::cmp::Ordering;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Image;
use crate::error::{Error, Result};
use crate::mixup::{CandidatePool, MixupCandidate, PairId};
use crate::nn::Model;

/// Mixing coefficient used by the random-search baseline.
pub const RANDOM_SEARCH_LAMBDA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selector {
    ActiveMixup,
    RandomSearch,
    VanillaAl,
}

impl std::fmt::Display for Selector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Selector::ActiveMixup => "active_mixup",
            Selector::RandomSearch => "random_search",
            Selector::VanillaAl => "vanilla_al",
        })
    }
}

impl std::str::FromStr for Selector {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "active_mixup" => Ok(Selector::ActiveMixup),
            "random_search" => Ok(Selector::RandomSearch),
            "vanilla_al" => Ok(Selector::VanillaAl),
            other => Err(Error::input(format!("unknown selector `{other}`"))),
        }
    }
}

/// Pair-level confidence and the coefficient that attains it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub pair: PairId,
    pub lambda_star: f64,
    pub c2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub selector: Selector,
    pub chosen: Vec<MixupCandidate>,
    /// Student confidence behind each choice (pair-level for active mixup,
    /// per-image for vanilla); `None` for random search.
    pub confidences: Vec<Option<f64>>,
}

impl SelectionResult {
    pub fn len(&self) -> usize {
        self.chosen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chosen.is_empty()
    }

    /// Distinct pairs touched, in first-seen order.
    pub fn pairs(&self) -> Vec<PairId> {
        let mut seen = std::collections::HashSet::new();
        self.chosen
            .iter()
            .map(|c| c.pair)
            .filter(|p| seen.insert(*p))
            .collect()
    }
}

/// Student confidence: the largest class probability.
pub fn c1(model: &Model, image: &Image) -> Result<f64> {
    let p = model.probabilities(image.pixels())?;
    Ok(p.into_iter().fold(f64::NEG_INFINITY, f64::max))
}

/// Confidence at every grid λ for one pair, in grid order.
fn grid_confidences(model: &Model, pool: &CandidatePool, pair: PairId) -> Result<Vec<f64>> {
    let src = pool.source();
    let (a, b) = (src.image(pair.i()), src.image(pair.j()));
    pool.grid()
        .values()
        .iter()
        .map(|&lambda| c1(model, &crate::mixup::synthesize(a, b, lambda)?))
        .collect()
}

fn min_over_grid(pair: PairId, grid: &[f64], conf: &[f64]) -> PairScore {
    let mut best = 0;
    for (idx, &c) in conf.iter().enumerate().skip(1) {
        if c < conf[best] {
            best = idx;
        }
    }
    PairScore {
        pair,
        lambda_star: grid[best],
        c2: conf[best],
    }
}

/// Minimum confidence over the grid for `pair`; ties go to the smallest λ.
pub fn c2(model: &Model, pool: &CandidatePool, pair: PairId) -> Result<PairScore> {
    if !pool.contains(pair) {
        return Err(Error::logic(format!(
            "pair ({}, {}) is not eligible in the pool",
            pair.i(),
            pair.j()
        )));
    }
    let conf = grid_confidences(model, pool, pair)?;
    Ok(min_over_grid(pair, pool.grid().values(), &conf))
}

/// Scores every eligible pair; output follows the pool's pair order.
pub fn score_pairs(model: &Model, pool: &CandidatePool) -> Result<Vec<PairScore>> {
    let grid = pool.grid().values();
    pool.pairs()
        .par_iter()
        .map(|&pair| {
            let conf = grid_confidences(model, pool, pair)?;
            Ok(min_over_grid(pair, grid, &conf))
        })
        .collect()
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::input("selection size k must be at least 1"));
    }
    Ok(())
}

/// Sorts the `k` smallest items (under `cmp`) to the front and truncates.
fn take_lowest<T, F>(mut items: Vec<T>, k: usize, cmp: F) -> Vec<T>
where
    F: Fn(&T, &T) -> Ordering,
{
    if k < items.len() {
        items.select_nth_unstable_by(k - 1, &cmp);
        items.truncate(k);
    }
    items.sort_by(cmp);
    items
}

/// The `k` pairs with the lowest pair confidence, one candidate `x̂_ij(λ*)` each.
pub fn select_active(model: &Model, pool: &CandidatePool, k: usize) -> Result<SelectionResult> {
    check_k(k)?;
    let scores = score_pairs(model, pool)?;
    let chosen = take_lowest(scores, k, |a, b| {
        a.c2.total_cmp(&b.c2).then(a.pair.cmp(&b.pair))
    });
    Ok(SelectionResult {
        selector: Selector::ActiveMixup,
        confidences: chosen.iter().map(|s| Some(s.c2)).collect(),
        chosen: chosen
            .iter()
            .map(|s| MixupCandidate {
                pair: s.pair,
                lambda: s.lambda_star,
            })
            .collect(),
    })
}

/// `k` distinct pairs drawn uniformly (seeded), each mixed at λ = 0.5.
pub fn select_random(pool: &CandidatePool, k: usize, seed: u64) -> Result<SelectionResult> {
    check_k(k)?;
    let n = pool.pairs().len();
    let take = k.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, n, take).into_vec();
    idx.sort_unstable();
    Ok(SelectionResult {
        selector: Selector::RandomSearch,
        chosen: idx
            .into_iter()
            .map(|i| MixupCandidate {
                pair: pool.pairs()[i],
                lambda: RANDOM_SEARCH_LAMBDA,
            })
            .collect(),
        confidences: vec![None; take],
    })
}

/// The `k` individual candidates with the lowest confidence, with no per-pair limit.
pub fn select_vanilla(model: &Model, pool: &CandidatePool, k: usize) -> Result<SelectionResult> {
    check_k(k)?;
    let grid = pool.grid().values();
    let per_pair: Vec<Vec<f64>> = pool
        .pairs()
        .par_iter()
        .map(|&pair| grid_confidences(model, pool, pair))
        .collect::<Result<_>>()?;
    let all: Vec<(f64, PairId, f64)> = pool
        .pairs()
        .iter()
        .zip(&per_pair)
        .flat_map(|(&pair, conf)| grid.iter().zip(conf).map(move |(&l, &c)| (c, pair, l)))
        .collect();
    let chosen = take_lowest(all, k, |a, b| {
        a.0.total_cmp(&b.0)
            .then(a.1.cmp(&b.1))
            .then(a.2.total_cmp(&b.2))
    });
    Ok(SelectionResult {
        selector: Selector::VanillaAl,
        confidences: chosen.iter().map(|c| Some(c.0)).collect(),
        chosen: chosen
            .iter()
            .map(|&(_, pair, lambda)| MixupCandidate { pair, lambda })
            .collect(),
    })
}

/// Dispatches to the selector named in `selector`.
pub fn select(
    selector: Selector,
    model: &Model,
    pool: &CandidatePool,
    k: usize,
    seed: u64,
) -> Result<SelectionResult> {
    match selector {
        Selector::ActiveMixup => select_active(model, pool, k),
        Selector::RandomSearch => select_random(pool, k, seed),
        Selector::VanillaAl => select_vanilla(model, pool, k),
    }
}
