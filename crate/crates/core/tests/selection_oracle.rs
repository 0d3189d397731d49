//! Selection checked against exhaustive scoring with explicit tie rules.

use std::collections::BTreeMap;

use activemix::data::synth_blobs;
use activemix::mixup::{build_pool, synthesize, CandidatePool, LambdaGrid, PairId};
use activemix::nn::{NetworkSpec, WeightInit};
use activemix::select::{c2, select_active, select_random, select_vanilla};
use activemix::Model;
use proptest::prelude::*;

/// Every `(pair, λ, confidence)` in the pool, scored one by one.
fn brute_force(model: &Model, pool: &CandidatePool) -> Vec<(PairId, f64, f64)> {
    let mut out = Vec::new();
    for &p in pool.pairs() {
        for &l in pool.grid().values() {
            let im = synthesize(pool.source().image(p.i()), pool.source().image(p.j()), l).unwrap();
            let probs = model.probabilities(im.pixels()).unwrap();
            let conf = probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            out.push((p, l, conf));
        }
    }
    out
}

/// Pair minimum, first λ (in grid order) on ties.
fn oracle_c2(all: &[(PairId, f64, f64)]) -> BTreeMap<PairId, (f64, f64)> {
    let mut best: BTreeMap<PairId, (f64, f64)> = BTreeMap::new();
    for &(p, l, c) in all {
        match best.get(&p) {
            Some(&(bc, _)) if bc <= c => {}
            _ => {
                best.insert(p, (c, l));
            }
        }
    }
    best
}

fn setup(seed: u64, n: usize) -> (Model, CandidatePool) {
    let ds = synth_blobs(3, 4, 5, seed % 13).truncated(n);
    let spec = NetworkSpec::mlp([5, 5, 1], &[6], 3);
    let model = Model::init(&spec, seed, WeightInit::FanInUniform).unwrap();
    (
        model,
        build_pool(ds, LambdaGrid::default(), None, 0).unwrap(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn active_and_c2_match_oracle(seed in any::<u64>(), n in 2usize..11, k in 1usize..60) {
        let (model, pool) = setup(seed, n);
        let all = brute_force(&model, &pool);
        let per_pair = oracle_c2(&all);
        for (&p, &(c, l)) in &per_pair {
            let s = c2(&model, &pool, p).unwrap();
            prop_assert_eq!((s.c2, s.lambda_star), (c, l));
        }
        let mut ranked: Vec<(f64, PairId, f64)> = per_pair.iter().map(|(&p, &(c, l))| (c, p, l)).collect();
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        ranked.truncate(k);
        let got = select_active(&model, &pool, k).unwrap();
        let got: Vec<(f64, PairId, f64)> = got
            .chosen
            .iter()
            .zip(&got.confidences)
            .map(|(c, conf)| (conf.unwrap(), c.pair, c.lambda))
            .collect();
        prop_assert_eq!(got, ranked);
    }

    #[test]
    fn vanilla_matches_oracle(seed in any::<u64>(), n in 2usize..11, k in 1usize..200) {
        let (model, pool) = setup(seed, n);
        let mut all: Vec<(f64, PairId, f64)> = brute_force(&model, &pool).into_iter().map(|(p, l, c)| (c, p, l)).collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.total_cmp(&b.2)));
        all.truncate(k);
        let got = select_vanilla(&model, &pool, k).unwrap();
        let got: Vec<(f64, PairId, f64)> = got
            .chosen
            .iter()
            .zip(&got.confidences)
            .map(|(c, conf)| (conf.unwrap(), c.pair, c.lambda))
            .collect();
        prop_assert_eq!(got, all);
    }
}

/// Each pair should be picked with probability k / |pairs|. Checked with a
/// chi-squared statistic over all pairs, since 28 separate 3σ checks would
/// trip on chance alone.
#[test]
fn random_selection_is_uniform_over_pairs() {
    let (_, pool) = setup(1, 8);
    let pairs = pool.pairs().len();
    let (k, trials) = (7usize, 4000u64);
    let mut hits: BTreeMap<PairId, u64> = BTreeMap::new();
    for seed in 0..trials {
        for c in select_random(&pool, k, seed).unwrap().chosen {
            *hits.entry(c.pair).or_default() += 1;
        }
    }
    assert_eq!(hits.len(), pairs);
    let expected = trials as f64 * k as f64 / pairs as f64;
    let chi2: f64 = hits
        .values()
        .map(|&h| (h as f64 - expected).powi(2) / expected)
        .sum();
    // Hits are hypergeometric per trial, so the statistic runs slightly below
    // chi2(df); mean + 3 sd of chi2(df) is a safe ceiling.
    let df = (pairs - 1) as f64;
    let ceiling = df + 3.0 * (2.0 * df).sqrt();
    assert!(
        chi2 <= ceiling,
        "chi2 {chi2:.2} above {ceiling:.2}: {hits:?}"
    );
}
