//! Pairwise Hamming-distance statistics.
//!
//! A population split into isolated clusters shows a multimodal distance
//! histogram; a population following a product law shows the Poisson-binomial
//! histogram predicted from its site marginals.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mutation::MutationModel;
use crate::population::PopulationState;
use crate::state_space::{AlphabetSpec, Distribution};

/// Probabilities of pairwise distances `0..=n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HammingHistogram {
    probs: Vec<f64>,
}

impl HammingHistogram {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::validation("histogram needs at least one bin"));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::validation("histogram has a negative or non-finite bin"));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::validation(format!("histogram sums to {sum}")));
        }
        Ok(HammingHistogram { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Largest representable distance.
    pub fn max_distance(&self) -> usize {
        self.probs.len() - 1
    }

    pub fn mean(&self) -> f64 {
        self.probs.iter().enumerate().map(|(d, p)| d as f64 * p).sum()
    }

    /// Bin-wise average of histograms over the same support.
    pub fn average(hists: &[HammingHistogram]) -> Result<Self> {
        let first = hists
            .first()
            .ok_or_else(|| Error::validation("nothing to average"))?;
        let mut probs = vec![0.0; first.probs.len()];
        for h in hists {
            if h.probs.len() != probs.len() {
                return Err(Error::validation("histograms over different supports"));
            }
            for (acc, p) in probs.iter_mut().zip(&h.probs) {
                *acc += p;
            }
        }
        for p in &mut probs {
            *p /= hists.len() as f64;
        }
        Ok(HammingHistogram { probs })
    }
}

/// Law of `d_H(x, y)` for `x`, `y` drawn independently from `mu`.
pub fn hamming_histogram(mu: &Distribution) -> Result<HammingHistogram> {
    let spec = AlphabetSpec::new(mu.k(), mu.sites())?;
    let support: Vec<(usize, f64)> = mu
        .probs()
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .map(|(x, &p)| (x, p))
        .collect();
    let n = spec.n();
    let probs = support
        .par_iter()
        .map(|&(x, px)| {
            let mut row = vec![0.0; n + 1];
            for &(y, py) in &support {
                row[spec.hamming(x, y)] += px * py;
            }
            row
        })
        .reduce(
            || vec![0.0; n + 1],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                a
            },
        );
    Ok(HammingHistogram { probs })
}

/// Distances over all unordered pairs of distinct individuals. A population
/// of one has no pairs; its histogram is the point mass at 0.
pub fn population_hamming_histogram(state: &PopulationState, spec: &AlphabetSpec) -> HammingHistogram {
    counts_hamming_histogram(state.counts(), spec)
}

pub fn counts_hamming_histogram(counts: &BTreeMap<usize, u64>, spec: &AlphabetSpec) -> HammingHistogram {
    let mut pairs = vec![0.0f64; spec.n() + 1];
    let entries: Vec<(usize, f64)> = counts.iter().map(|(&g, &c)| (g, c as f64)).collect();
    for (i, &(g, cg)) in entries.iter().enumerate() {
        pairs[0] += cg * (cg - 1.0) / 2.0;
        for &(h, ch) in &entries[i + 1..] {
            pairs[spec.hamming(g, h)] += cg * ch;
        }
    }
    let total: f64 = pairs.iter().sum();
    if total == 0.0 {
        pairs[0] = 1.0;
    } else {
        for p in &mut pairs {
            *p /= total;
        }
    }
    HammingHistogram { probs: pairs }
}

/// Distance law under the product stationary law: site `i` differs with
/// probability `1 - sum_a q_i(a)^2`, independently across sites.
pub fn product_law_hamming_prediction(mutation: &MutationModel) -> HammingHistogram {
    let mismatch: Vec<f64> = mutation
        .site_laws()
        .iter()
        .map(|q| 1.0 - q.probs().iter().map(|p| p * p).sum::<f64>())
        .collect();
    poisson_binomial(&mismatch)
}

/// Law of a sum of independent Bernoulli variables, by convolution.
pub fn poisson_binomial(success: &[f64]) -> HammingHistogram {
    let mut probs = vec![1.0];
    for &p in success {
        let mut next = vec![0.0; probs.len() + 1];
        for (d, &w) in probs.iter().enumerate() {
            next[d] += w * (1.0 - p);
            next[d + 1] += w * p;
        }
        probs = next;
    }
    HammingHistogram { probs }
}

/// Total variation between two histograms over the same distances.
pub fn structure_score(observed: &HammingHistogram, predicted: &HammingHistogram) -> Result<f64> {
    if observed.probs.len() != predicted.probs.len() {
        return Err(Error::validation(format!(
            "histogram supports differ: 0..={} vs 0..={}",
            observed.max_distance(),
            predicted.max_distance()
        )));
    }
    let tv: f64 = 0.5
        * observed
            .probs
            .iter()
            .zip(&predicted.probs)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>();
    Ok(tv.clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state_space::product_measure;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn law_histogram_examples() {
        let point = Distribution::point_mass(2, 3, 5).unwrap();
        assert_eq!(hamming_histogram(&point).unwrap().probs(), &[1.0, 0.0, 0.0, 0.0]);
        let uniform = Distribution::uniform(2, 2).unwrap();
        assert!(close(hamming_histogram(&uniform).unwrap().probs(), &[0.25, 0.5, 0.25], 1e-15));
        let split = Distribution::new(2, 2, vec![0.5, 0.0, 0.0, 0.5]).unwrap();
        assert!(close(hamming_histogram(&split).unwrap().probs(), &[0.5, 0.0, 0.5], 1e-15));
    }

    #[test]
    fn population_histogram_counts_unordered_pairs() {
        let spec = AlphabetSpec::new(2, 2).unwrap();
        // AA, AA, BB: pairs (AA,AA) d=0, two (AA,BB) d=2
        let st = PopulationState::new(&spec, vec![0, 0, 3]).unwrap();
        let h = population_hamming_histogram(&st, &spec);
        assert!(close(h.probs(), &[1.0 / 3.0, 0.0, 2.0 / 3.0], 1e-15));
        let one = PopulationState::new(&spec, vec![2]).unwrap();
        assert_eq!(population_hamming_histogram(&one, &spec).probs(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn prediction_examples() {
        let spec = AlphabetSpec::new(2, 4).unwrap();
        let m = MutationModel::replicated(spec, crate::mutation::SiteRateMatrix::symmetric(2, 1.0).unwrap()).unwrap();
        let h = product_law_hamming_prediction(&m);
        assert!(close(h.probs(), &[1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0], 1e-15));

        // q = (1/3, 2/3)
        let spec = AlphabetSpec::new(2, 1).unwrap();
        let m = MutationModel::replicated(spec, crate::mutation::SiteRateMatrix::two_state(2.0, 1.0).unwrap()).unwrap();
        let h = product_law_hamming_prediction(&m);
        assert!(close(h.probs(), &[5.0 / 9.0, 4.0 / 9.0], 1e-12));
    }

    #[test]
    fn prediction_matches_double_sum_over_q_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for (k, n) in [(2, 3), (3, 2), (4, 3), (2, 6)] {
            let spec = AlphabetSpec::new(k, n).unwrap();
            let m = MutationModel::random(spec, 0.1, 2.0, &mut rng).unwrap();
            let exact = hamming_histogram(m.q_lambda()).unwrap();
            let predicted = product_law_hamming_prediction(&m);
            assert!(close(exact.probs(), predicted.probs(), 1e-12));
        }
    }

    #[test]
    fn score_examples() {
        let a = HammingHistogram::new(vec![0.2, 0.3, 0.5]).unwrap();
        assert_eq!(structure_score(&a, &a).unwrap(), 0.0);
        let b = HammingHistogram::new(vec![1.0, 0.0]).unwrap();
        let c = HammingHistogram::new(vec![0.0, 1.0]).unwrap();
        assert_eq!(structure_score(&b, &c).unwrap(), 1.0);
        assert!(structure_score(&a, &b).is_err());
        assert!(HammingHistogram::new(vec![0.5, 0.6]).is_err());
    }

    fn site_law(k: usize) -> impl Strategy<Value = Distribution> {
        prop::collection::vec(0.01f64..1.0, k).prop_map(move |w| Distribution::from_weights(k, 1, w).unwrap())
    }

    proptest! {
        #[test]
        fn product_measure_histogram_is_poisson_binomial(
            laws in (2usize..4).prop_flat_map(|k| prop::collection::vec(site_law(k), 1..5)),
        ) {
            let mu = product_measure(&laws).unwrap();
            let mismatch: Vec<f64> = laws
                .iter()
                .map(|q| 1.0 - q.probs().iter().map(|p| p * p).sum::<f64>())
                .collect();
            let exact = hamming_histogram(&mu).unwrap();
            prop_assert!(close(exact.probs(), poisson_binomial(&mismatch).probs(), 1e-12));
        }

        #[test]
        fn score_is_symmetric_and_bounded(
            a in prop::collection::vec(0.0f64..1.0, 4),
            b in prop::collection::vec(0.0f64..1.0, 4),
        ) {
            let norm = |v: Vec<f64>| {
                let s: f64 = v.iter().sum::<f64>() + 1e-9;
                HammingHistogram::new(v.iter().map(|x| (x + 2.5e-10) / s).collect()).unwrap()
            };
            let (ha, hb) = (norm(a), norm(b));
            let s = structure_score(&ha, &hb).unwrap();
            prop_assert_eq!(s, structure_score(&hb, &ha).unwrap());
            prop_assert!((0.0..=1.0).contains(&s));
            prop_assert_eq!(structure_score(&ha, &ha).unwrap(), 0.0);
        }
    }
}
