//! Seeded random instances and a batch runner for the entropy checks.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::kinetics::{relative_entropy_rate_mutation, verify_entropy_chain, verify_lemma1};
use crate::mutation::MutationModel;
use crate::population::replicate_rng;
use crate::recombination::{FamilySpec, RecombinationModel, SimilaritySpec};
use crate::state_space::{l1_distance, AlphabetSpec, Distribution, SubsetMask};
use crate::stochastic::StochasticMatrix;

/// Closed-form and finite-difference entropy rates must agree to this
/// relative error.
pub const RATE_REL_TOL: f64 = 1e-6;
/// Below this `l1` distance from `q` the sign of the rate is not checked.
pub const RATE_SIGN_MIN_L1: f64 = 1e-6;

/// Strictly positive law with i.i.d. uniform weights.
pub fn random_distribution<R: Rng + ?Sized>(k: usize, n: usize, rng: &mut R) -> Result<Distribution> {
    let size = crate::state_space::checked_pow(k, n)
        .ok_or_else(|| crate::error::Error::validation("state space too large"))?;
    let w = (0..size).map(|_| 0.01 + rng.random::<f64>()).collect();
    Distribution::from_weights(k, n, w)
}

/// Random reversible stochastic matrix together with its invariant law.
/// Off-diagonal flows `pi(i) P(i, j)` are symmetric, and every diagonal entry
/// is at least one third.
pub fn random_reversible_chain<R: Rng + ?Sized>(
    size: usize,
    rng: &mut R,
) -> Result<(StochasticMatrix, Distribution)> {
    let pi = random_distribution(size, 1, rng)?;
    let mut flow = vec![vec![0.0; size]; size];
    for i in 0..size {
        for j in i + 1..size {
            let v: f64 = rng.random();
            flow[i][j] = v;
            flow[j][i] = v;
        }
    }
    let scale = (0..size)
        .map(|i| flow[i].iter().sum::<f64>() / pi[i])
        .fold(0.0, f64::max)
        * 1.5;
    let rows = (0..size)
        .map(|i| {
            let mut row: Vec<f64> = (0..size)
                .map(|j| if scale > 0.0 { flow[i][j] / (pi[i] * scale) } else { 0.0 })
                .collect();
            row[i] = 1.0 - row.iter().sum::<f64>();
            row
        })
        .collect();
    Ok((StochasticMatrix::from_rows(rows)?, pi))
}

/// Uniformly random non-empty subset of `0..n`.
pub fn random_mask<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<SubsetMask> {
    let bits = rng.random_range(1..(1u64 << n));
    SubsetMask::new(bits, n)
}

/// `dD/dt` along the pure mutation flow by a centered difference of two
/// classical Runge-Kutta steps of size `h`.
pub fn mutation_rate_finite_difference(p: &Distribution, mutation: &MutationModel, h: f64) -> Result<f64> {
    mutation.check_distribution(p)?;
    let q = mutation.q_lambda().probs();
    let rhs = |v: &[f64]| {
        let mut out = vec![0.0; v.len()];
        mutation.accumulate_rhs(v, &mut out);
        out
    };
    let d_after = |dt: f64| {
        let x = p.probs();
        let axpy = |k: &[f64], c: f64| -> Vec<f64> { x.iter().zip(k).map(|(a, b)| a + c * b).collect() };
        let k1 = rhs(x);
        let k2 = rhs(&axpy(&k1, 0.5 * dt));
        let k3 = rhs(&axpy(&k2, 0.5 * dt));
        let k4 = rhs(&axpy(&k3, dt));
        (0..x.len())
            .map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
            .zip(q)
            .filter(|(a, _)| *a > 0.0)
            .map(|(a, b)| a * (a / b).ln())
            .sum::<f64>()
    };
    Ok((d_after(h) - d_after(-h)) / (2.0 * h))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct VerifyConfig {
    pub seed: u64,
    pub lemma1_instances: usize,
    pub chain_instances: usize,
    pub rate_instances: usize,
    /// Largest chain size for the stochastic-matrix checks.
    pub max_chain_size: usize,
    /// Time step of the recombination kernels.
    pub chain_dt: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            seed: 2024,
            lemma1_instances: 100,
            chain_instances: 100,
            rate_instances: 100,
            max_chain_size: 16,
            chain_dt: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckKind {
    Lemma1,
    EntropyChain,
    MutationRate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckRecord {
    pub kind: CheckKind,
    pub instance: usize,
    pub passed: bool,
    /// Slack of the inequality, or relative error of the rate.
    pub value: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub config: VerifyConfig,
    pub passed: usize,
    pub failed: usize,
    pub checks: Vec<CheckRecord>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.failed == 0
    }
}

/// Runs every check of the suite. Instance `i` of each kind draws from its
/// own generator stream, so results do not depend on scheduling.
pub fn run_verify_suite(cfg: &VerifyConfig) -> Result<VerifyReport> {
    let lemma1: Vec<CheckRecord> = (0..cfg.lemma1_instances)
        .into_par_iter()
        .map(|i| lemma1_check(cfg, i))
        .collect::<Result<_>>()?;
    let chains: Vec<CheckRecord> = (0..cfg.chain_instances)
        .into_par_iter()
        .map(|i| chain_check(cfg, i))
        .collect::<Result<_>>()?;
    let rates: Vec<CheckRecord> = (0..cfg.rate_instances)
        .into_par_iter()
        .map(|i| rate_check(cfg, i))
        .collect::<Result<_>>()?;
    let checks: Vec<CheckRecord> = lemma1.into_iter().chain(chains).chain(rates).collect();
    let passed = checks.iter().filter(|c| c.passed).count();
    Ok(VerifyReport {
        config: cfg.clone(),
        failed: checks.len() - passed,
        passed,
        checks,
    })
}

fn stream(kind: CheckKind, instance: usize) -> u64 {
    ((kind as u64) << 32) | instance as u64
}

fn lemma1_check(cfg: &VerifyConfig, i: usize) -> Result<CheckRecord> {
    let mut rng = replicate_rng(cfg.seed, stream(CheckKind::Lemma1, i));
    let size = rng.random_range(2..=cfg.max_chain_size.max(2));
    let (p, pi) = random_reversible_chain(size, &mut rng)?;
    let mu = random_distribution(size, 1, &mut rng)?;
    let r = verify_lemma1(&p, &pi, &mu)?;
    Ok(CheckRecord {
        kind: CheckKind::Lemma1,
        instance: i,
        passed: r.passed,
        value: r.slack,
        detail: format!("size {size}: D(mu P) = {:e}, D(mu) = {:e}", r.lhs, r.rhs),
    })
}

fn chain_check(cfg: &VerifyConfig, i: usize) -> Result<CheckRecord> {
    let mut rng = replicate_rng(cfg.seed, stream(CheckKind::EntropyChain, i));
    let n = rng.random_range(1..=3);
    let spec = AlphabetSpec::new(2, n)?;
    let rate = rng.random_range(0.0..2.0);
    let rec = RecombinationModel::with_family(
        spec,
        1.0,
        &FamilySpec::AllSubsets,
        SimilaritySpec::ExponentialDecay { rate },
    )?;
    let mu = random_distribution(2, n, &mut rng)?;
    let mask = random_mask(n, &mut rng)?;
    let r = verify_entropy_chain(&mu, mask, &rec, cfg.chain_dt)?;
    Ok(CheckRecord {
        kind: CheckKind::EntropyChain,
        instance: i,
        passed: r.passed,
        value: r.h_slack,
        detail: format!(
            "n {n}, I {mask}: cross residual {:e}, marginal defect {:e}",
            r.cross_residual, r.marginal_defect
        ),
    })
}

fn rate_check(cfg: &VerifyConfig, i: usize) -> Result<CheckRecord> {
    let mut rng = replicate_rng(cfg.seed, stream(CheckKind::MutationRate, i));
    let k = rng.random_range(2..=3);
    let n = rng.random_range(1..=3);
    let spec = AlphabetSpec::new(k, n)?;
    let model = MutationModel::random(spec, 0.1, 2.0, &mut rng)?;
    let p = random_distribution(k, n, &mut rng)?;
    let rate = relative_entropy_rate_mutation(&p, &model)?;
    let fd = mutation_rate_finite_difference(&p, &model, 1e-5)?;
    let rel = ((rate - fd) / fd).abs();
    let far = l1_distance(&p, model.q_lambda())? > RATE_SIGN_MIN_L1;
    Ok(CheckRecord {
        kind: CheckKind::MutationRate,
        instance: i,
        passed: rel < RATE_REL_TOL && (!far || rate < 0.0),
        value: rel,
        detail: format!("k {k}, n {n}: closed form {rate:e}, difference quotient {fd:e}"),
    })
}
