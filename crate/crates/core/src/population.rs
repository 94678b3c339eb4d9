//! Event-driven simulation of a finite population of genomes.
//!
//! Mutation events change one letter of one individual. Recombination comes
//! in two flavors:
//!
//! * [`RecombinationMode::Donor`]: the recipient takes the donor's
//!   `I`-substring, the donor is unchanged. Every ordered pair `(u, v)`,
//!   self-pairs included, fires at rate `kappa * w_I * phi(u_I, v_I) / N`, so
//!   the per-capita replacement law is exactly the empirical `mu_I`.
//! * [`RecombinationMode::PairExchange`]: two distinct individuals swap their
//!   `I`-substrings. Every ordered pair of distinct individuals fires at rate
//!   `kappa * w_I * phi(u_I, v_I) / N`.
//!
//! The `1/N` pair scaling makes the population a density-dependent jump
//! process whose large-`N` limit is the mean-field equation with the same
//! `kappa`.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution as _;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mutation::MutationModel;
use crate::recombination::RecombinationModel;
use crate::state_space::{AlphabetSpec, Distribution};

/// Incremental rate sums are recomputed from scratch this often.
const REFRESH_EVERY: u64 = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RecombinationMode {
    /// Recipient takes the donor's substring (`I`-recombination).
    #[serde(rename = "I")]
    Donor,
    /// Two individuals swap substrings (`I/I`-recombination).
    #[serde(rename = "I/I")]
    PairExchange,
}

/// How total event rates are maintained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateBookkeeping {
    /// Incrementally updated substring counts and pair sums.
    #[default]
    Cached,
    /// Full `O(N^2 |family|)` recomputation before every event.
    Reference,
}

/// A population of `N` genomes. Individuals are kept in a vector; the count
/// table is maintained alongside.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationState {
    genomes: Vec<usize>,
    counts: BTreeMap<usize, u64>,
    t: f64,
}

impl PopulationState {
    pub fn new(spec: &AlphabetSpec, genomes: Vec<usize>) -> Result<Self> {
        if genomes.is_empty() {
            return Err(Error::validation("population must have at least one individual"));
        }
        let mut counts = BTreeMap::new();
        for &g in &genomes {
            spec.check_index(g)?;
            *counts.entry(g).or_insert(0) += 1;
        }
        Ok(PopulationState {
            genomes,
            counts,
            t: 0.0,
        })
    }

    pub fn from_counts(spec: &AlphabetSpec, counts: &BTreeMap<usize, u64>) -> Result<Self> {
        let genomes = counts
            .iter()
            .flat_map(|(&g, &c)| std::iter::repeat_n(g, c as usize))
            .collect();
        Self::new(spec, genomes)
    }

    pub fn monomorphic(spec: &AlphabetSpec, genome: usize, size: usize) -> Result<Self> {
        Self::new(spec, vec![genome; size])
    }

    /// `size` independent draws from `law`.
    pub fn sample<R: Rng + ?Sized>(law: &Distribution, size: usize, rng: &mut R) -> Result<Self> {
        if size == 0 {
            return Err(Error::validation("population must have at least one individual"));
        }
        let index = WeightedIndex::new(law.probs())
            .map_err(|e| Error::validation(format!("cannot sample from law: {e}")))?;
        let genomes: Vec<usize> = (0..size).map(|_| index.sample(rng)).collect();
        let mut counts = BTreeMap::new();
        for &g in &genomes {
            *counts.entry(g).or_insert(0) += 1;
        }
        Ok(PopulationState {
            genomes,
            counts,
            t: 0.0,
        })
    }

    /// Population size `N`.
    pub fn size(&self) -> usize {
        self.genomes.len()
    }

    pub fn genomes(&self) -> &[usize] {
        &self.genomes
    }

    pub fn counts(&self) -> &BTreeMap<usize, u64> {
        &self.counts
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    fn set_genome(&mut self, individual: usize, genome: usize) {
        let old = std::mem::replace(&mut self.genomes[individual], genome);
        if old == genome {
            return;
        }
        if let Some(c) = self.counts.get_mut(&old) {
            *c -= 1;
            if *c == 0 {
                self.counts.remove(&old);
            }
        }
        *self.counts.entry(genome).or_insert(0) += 1;
    }

    /// Empirical law `f_N(x) = count(x) / N`.
    pub fn empirical_distribution(&self, spec: &AlphabetSpec) -> Distribution {
        empirical_from_counts(spec, &self.counts, self.size())
    }
}

pub(crate) fn empirical_from_counts(
    spec: &AlphabetSpec,
    counts: &BTreeMap<usize, u64>,
    size: usize,
) -> Distribution {
    let mut probs = vec![0.0; spec.size()];
    for (&g, &c) in counts {
        probs[g] = c as f64 / size as f64;
    }
    Distribution::from_raw(spec.k(), spec.n(), probs)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SimConfig {
    pub seed: u64,
    pub t_max: f64,
    pub mode: RecombinationMode,
    /// Time before the first sample.
    pub burn_in: f64,
    pub sample_every: f64,
    pub replicates: usize,
    #[serde(default)]
    pub bookkeeping: RateBookkeeping,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_max.is_finite() && self.t_max > 0.0) {
            return Err(Error::validation(format!("t_max must be positive, got {}", self.t_max)));
        }
        if !(self.burn_in >= 0.0 && self.burn_in <= self.t_max) {
            return Err(Error::validation(format!(
                "burn_in {} must lie in [0, t_max = {}]",
                self.burn_in, self.t_max
            )));
        }
        if !(self.sample_every.is_finite() && self.sample_every > 0.0) {
            return Err(Error::validation("sample_every must be positive"));
        }
        if self.replicates == 0 {
            return Err(Error::validation("replicates must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateSummary {
    pub mutation: f64,
    pub recombination: f64,
    /// Recombination rate contributed by each family member, in family order.
    pub per_member: Vec<f64>,
}

impl RateSummary {
    pub fn total(&self) -> f64 {
        self.mutation + self.recombination
    }
}

/// Event rates of a population computed from its substring counts.
pub fn event_rates(
    state: &PopulationState,
    mutation: &MutationModel,
    rec: &RecombinationModel,
    mode: RecombinationMode,
) -> Result<RateSummary> {
    check_models(mutation, rec)?;
    let cache = RateCache::build(state, mutation, rec, mode);
    Ok(cache.summary(rec, state.size()))
}

/// Event rates by explicit enumeration of all ordered pairs. Quadratic in
/// `N`; used as the reference for the cached bookkeeping.
pub fn event_rates_pairwise(
    state: &PopulationState,
    mutation: &MutationModel,
    rec: &RecombinationModel,
    mode: RecombinationMode,
) -> Result<RateSummary> {
    check_models(mutation, rec)?;
    let spec = mutation.spec();
    let n = state.size();
    let mut mutation_rate = 0.0;
    for &g in state.genomes() {
        for (pos, alpha) in mutation.sites().iter().enumerate() {
            mutation_rate += alpha.outflow(spec.digit(g, pos));
        }
    }
    let per_member: Vec<f64> = rec
        .members()
        .iter()
        .map(|m| {
            let mut sum = 0.0;
            for (u, &gu) in state.genomes().iter().enumerate() {
                for (v, &gv) in state.genomes().iter().enumerate() {
                    if u == v && mode == RecombinationMode::PairExchange {
                        continue;
                    }
                    sum += m.phi(m.project(gu), m.project(gv));
                }
            }
            rec.kappa() * m.weight() * sum / n as f64
        })
        .collect();
    Ok(RateSummary {
        mutation: mutation_rate,
        recombination: per_member.iter().sum(),
        per_member,
    })
}

fn check_models(mutation: &MutationModel, rec: &RecombinationModel) -> Result<()> {
    if mutation.spec() != rec.spec() {
        return Err(Error::validation("mutation and recombination models use different genome spaces"));
    }
    Ok(())
}

/// Substring counts and pair sums of one family member.
#[derive(Debug, Clone)]
struct MemberCache {
    counts: Vec<u64>,
    /// `sum_{a,b} c(a) c(b) phi(a, b)` over ordered pairs, self-pairs included.
    pair_sum: f64,
    /// `sum_a c(a) phi(a, a)`, the self-pair part of `pair_sum`.
    diag_sum: f64,
}

#[derive(Debug, Clone)]
struct RateCache {
    mode: RecombinationMode,
    /// Per-individual mutation rate.
    individual_rate: Vec<f64>,
    mutation_total: f64,
    /// Upper bound of any individual's mutation rate.
    individual_rate_max: f64,
    /// `outflow[site][letter]`.
    outflow: Vec<Vec<f64>>,
    members: Vec<MemberCache>,
    updates: u64,
}

impl RateCache {
    fn build(
        state: &PopulationState,
        mutation: &MutationModel,
        rec: &RecombinationModel,
        mode: RecombinationMode,
    ) -> Self {
        let spec = mutation.spec();
        let outflow: Vec<Vec<f64>> = mutation
            .sites()
            .iter()
            .map(|alpha| (0..spec.k()).map(|a| alpha.outflow(a)).collect())
            .collect();
        let individual_rate_max = outflow
            .iter()
            .map(|row| row.iter().copied().fold(0.0, f64::max))
            .sum();
        let mut cache = RateCache {
            mode,
            individual_rate: Vec::new(),
            mutation_total: 0.0,
            individual_rate_max,
            outflow,
            members: Vec::new(),
            updates: 0,
        };
        cache.refresh(state, spec, rec);
        cache
    }

    fn genome_rate(&self, spec: &AlphabetSpec, g: usize) -> f64 {
        self.outflow
            .iter()
            .enumerate()
            .map(|(pos, row)| row[spec.digit(g, pos)])
            .sum()
    }

    fn refresh(&mut self, state: &PopulationState, spec: &AlphabetSpec, rec: &RecombinationModel) {
        self.individual_rate = state.genomes().iter().map(|&g| self.genome_rate(spec, g)).collect();
        self.mutation_total = self.individual_rate.iter().sum();
        self.members = rec
            .members()
            .iter()
            .map(|m| {
                let mut counts = vec![0u64; m.substring_count()];
                for &g in state.genomes() {
                    counts[m.project(g)] += 1;
                }
                let present: Vec<usize> = (0..counts.len()).filter(|&a| counts[a] > 0).collect();
                let mut pair_sum = 0.0;
                let mut diag_sum = 0.0;
                for &a in &present {
                    for &b in &present {
                        pair_sum += counts[a] as f64 * counts[b] as f64 * m.phi(a, b);
                    }
                    diag_sum += counts[a] as f64 * m.phi(a, a);
                }
                MemberCache {
                    counts,
                    pair_sum,
                    diag_sum,
                }
            })
            .collect();
    }

    fn member_rate(&self, rec: &RecombinationModel, idx: usize, n: usize) -> f64 {
        let m = &rec.members()[idx];
        let c = &self.members[idx];
        let pairs = match self.mode {
            RecombinationMode::Donor => c.pair_sum,
            RecombinationMode::PairExchange => c.pair_sum - c.diag_sum,
        };
        (rec.kappa() * m.weight() * pairs / n as f64).max(0.0)
    }

    fn summary(&self, rec: &RecombinationModel, n: usize) -> RateSummary {
        let per_member: Vec<f64> = (0..self.members.len())
            .map(|i| self.member_rate(rec, i, n))
            .collect();
        RateSummary {
            mutation: self.mutation_total,
            recombination: per_member.iter().sum(),
            per_member,
        }
    }

    /// Records that one individual changed genome from `old` to `new`.
    fn apply_change(
        &mut self,
        individual: usize,
        old: usize,
        new: usize,
        spec: &AlphabetSpec,
        rec: &RecombinationModel,
    ) {
        if old == new {
            return;
        }
        let rate = self.genome_rate(spec, new);
        self.mutation_total += rate - self.individual_rate[individual];
        self.individual_rate[individual] = rate;
        for (m, c) in rec.members().iter().zip(self.members.iter_mut()) {
            let a = m.project(old);
            let b = m.project(new);
            if a == b {
                continue;
            }
            // S' - S = d^T Phi c + c^T Phi d + d^T Phi d, with d = e_b - e_a
            let mut delta = 0.0;
            for (s, &cnt) in c.counts.iter().enumerate() {
                if cnt > 0 {
                    let cnt = cnt as f64;
                    delta += cnt * (m.phi(b, s) - m.phi(a, s) + m.phi(s, b) - m.phi(s, a));
                }
            }
            delta += m.phi(b, b) - m.phi(b, a) - m.phi(a, b) + m.phi(a, a);
            c.pair_sum += delta;
            c.diag_sum += m.phi(b, b) - m.phi(a, a);
            c.counts[a] -= 1;
            c.counts[b] += 1;
        }
        self.updates += 1;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Event {
    Mutation {
        individual: usize,
        site: usize,
        from: usize,
        to: usize,
    },
    /// `recipient` took the `I`-substring of `donor` (family member index).
    Recombination {
        member: usize,
        recipient: usize,
        donor: usize,
    },
    /// `first` and `second` swapped their `I`-substrings.
    Exchange {
        member: usize,
        first: usize,
        second: usize,
    },
}

impl Event {
    pub fn is_mutation(&self) -> bool {
        matches!(self, Event::Mutation { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepOutcome {
    Fired { event: Event, elapsed: f64 },
    /// All rates vanish; nothing will ever happen.
    NoEvent,
}

impl StepOutcome {
    pub fn elapsed(&self) -> f64 {
        match self {
            StepOutcome::Fired { elapsed, .. } => *elapsed,
            StepOutcome::NoEvent => f64::INFINITY,
        }
    }
}

/// A population together with its rate bookkeeping.
#[derive(Debug, Clone)]
pub struct Simulator<'a> {
    mutation: &'a MutationModel,
    rec: &'a RecombinationModel,
    state: PopulationState,
    cache: RateCache,
    bookkeeping: RateBookkeeping,
    events: u64,
}

impl<'a> Simulator<'a> {
    pub fn new(
        state: PopulationState,
        mutation: &'a MutationModel,
        rec: &'a RecombinationModel,
        mode: RecombinationMode,
        bookkeeping: RateBookkeeping,
    ) -> Result<Self> {
        check_models(mutation, rec)?;
        for &g in state.genomes() {
            mutation.spec().check_index(g)?;
        }
        let cache = RateCache::build(&state, mutation, rec, mode);
        Ok(Simulator {
            mutation,
            rec,
            state,
            cache,
            bookkeeping,
            events: 0,
        })
    }

    pub fn state(&self) -> &PopulationState {
        &self.state
    }

    pub fn into_state(self) -> PopulationState {
        self.state
    }

    pub fn mode(&self) -> RecombinationMode {
        self.cache.mode
    }

    /// Number of events fired so far.
    pub fn events(&self) -> u64 {
        self.events
    }

    /// Current rates from the cached bookkeeping.
    pub fn rates(&self) -> RateSummary {
        self.cache.summary(self.rec, self.state.size())
    }

    fn current_rates(&self) -> RateSummary {
        match self.bookkeeping {
            RateBookkeeping::Cached => self.rates(),
            RateBookkeeping::Reference => {
                event_rates_pairwise(&self.state, self.mutation, self.rec, self.cache.mode)
                    .expect("models checked at construction")
            }
        }
    }

    /// Advances by one event: exponential waiting time at the total rate,
    /// then an event chosen proportionally to its rate.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> StepOutcome {
        let rates = self.current_rates();
        let total = rates.total();
        if !(total > 0.0) {
            return StepOutcome::NoEvent;
        }
        let elapsed = self.draw_wait(total, rng);
        self.state.t += elapsed;
        let event = self.fire(&rates, rng);
        StepOutcome::Fired { event, elapsed }
    }

    fn draw_wait<R: Rng + ?Sized>(&self, total: f64, rng: &mut R) -> f64 {
        let e: f64 = Exp1.sample(rng);
        e / total
    }

    fn fire<R: Rng + ?Sized>(&mut self, rates: &RateSummary, rng: &mut R) -> Event {
        let mut u = rng.random::<f64>() * rates.total();
        let event = if u < rates.mutation || rates.recombination <= 0.0 {
            self.fire_mutation(rng)
        } else {
            u -= rates.mutation;
            let mut member = rates.per_member.len() - 1;
            for (i, &r) in rates.per_member.iter().enumerate() {
                if u < r {
                    member = i;
                    break;
                }
                u -= r;
            }
            // rounding can land on a zero-rate tail member
            while rates.per_member[member] <= 0.0 && member > 0 {
                member -= 1;
            }
            self.fire_recombination(member, rng)
        };
        self.events += 1;
        if self.cache.updates >= REFRESH_EVERY {
            self.cache.refresh(&self.state, self.mutation.spec(), self.rec);
            self.cache.updates = 0;
        }
        debug_assert_eq!(
            self.state.counts.values().sum::<u64>(),
            self.state.size() as u64,
            "population size changed"
        );
        event
    }

    fn fire_mutation<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Event {
        let spec = self.mutation.spec();
        let n = self.state.size();
        // individual proportional to its mutation rate, by rejection
        let individual = loop {
            let cand = rng.random_range(0..n);
            if rng.random::<f64>() * self.cache.individual_rate_max < self.cache.individual_rate[cand] {
                break cand;
            }
        };
        let genome = self.state.genomes[individual];
        let site_rates: Vec<f64> = self
            .cache
            .outflow
            .iter()
            .enumerate()
            .map(|(pos, row)| row[spec.digit(genome, pos)])
            .collect();
        let site = pick(&site_rates, rng);
        let from = spec.digit(genome, site);
        let alpha = &self.mutation.sites()[site];
        let targets: Vec<f64> = (0..spec.k())
            .map(|b| if b == from { 0.0 } else { alpha.rate(from, b) })
            .collect();
        let to = pick(&targets, rng);
        let new = spec.with_digit(genome, site, to);
        self.change(individual, new);
        Event::Mutation {
            individual,
            site,
            from,
            to,
        }
    }

    fn fire_recombination<R: Rng + ?Sized>(&mut self, member: usize, rng: &mut R) -> Event {
        let m = &self.rec.members()[member];
        let n = self.state.size();
        let phi_max = m.phi_max();
        let exchange = self.cache.mode == RecombinationMode::PairExchange;
        // ordered pair proportional to phi, by rejection
        let (u, v) = loop {
            let u = rng.random_range(0..n);
            let v = rng.random_range(0..n);
            if exchange && u == v {
                continue;
            }
            let phi = m.phi(m.project(self.state.genomes[u]), m.project(self.state.genomes[v]));
            if rng.random::<f64>() * phi_max < phi {
                break (u, v);
            }
        };
        let (gu, gv) = (self.state.genomes[u], self.state.genomes[v]);
        let (su, sv) = (m.project(gu), m.project(gv));
        if exchange {
            self.change(u, m.replace(gu, sv));
            self.change(v, m.replace(gv, su));
            Event::Exchange {
                member,
                first: u,
                second: v,
            }
        } else {
            self.change(u, m.replace(gu, sv));
            Event::Recombination {
                member,
                recipient: u,
                donor: v,
            }
        }
    }

    fn change(&mut self, individual: usize, genome: usize) {
        let old = self.state.genomes[individual];
        self.cache
            .apply_change(individual, old, genome, self.mutation.spec(), self.rec);
        self.state.set_genome(individual, genome);
    }
}

fn pick<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            if u < w {
                return i;
            }
            u -= w;
            last = i;
        }
    }
    last
}

/// A recorded population state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PopulationSample {
    pub t: f64,
    pub counts: BTreeMap<usize, u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimRun {
    pub replicate: u64,
    pub size: usize,
    pub samples: Vec<PopulationSample>,
    pub events: u64,
    pub final_state: PopulationState,
}

impl SimRun {
    /// Average of `f_N` over the recorded samples.
    pub fn time_averaged_law(&self, spec: &AlphabetSpec) -> Option<Distribution> {
        if self.samples.is_empty() {
            return None;
        }
        let mut probs = vec![0.0; spec.size()];
        let weight = 1.0 / (self.samples.len() as f64 * self.size as f64);
        for s in &self.samples {
            for (&g, &c) in &s.counts {
                probs[g] += c as f64 * weight;
            }
        }
        Some(Distribution::from_raw(spec.k(), spec.n(), probs))
    }
}

/// Generator for replicate `replicate` of a run seeded with `seed`: one
/// independent ChaCha stream per replicate.
pub fn replicate_rng(seed: u64, replicate: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    rng
}

/// Runs one trajectory to `t_max`, recording the state in force at times
/// `burn_in + j * sample_every` for `j >= 1`.
pub fn simulate(
    state0: &PopulationState,
    mutation: &MutationModel,
    rec: &RecombinationModel,
    cfg: &SimConfig,
) -> Result<SimRun> {
    let mut rng = replicate_rng(cfg.seed, 0);
    simulate_with(state0.clone(), mutation, rec, cfg, 0, &mut rng)
}

fn simulate_with(
    state0: PopulationState,
    mutation: &MutationModel,
    rec: &RecombinationModel,
    cfg: &SimConfig,
    replicate: u64,
    rng: &mut ChaCha8Rng,
) -> Result<SimRun> {
    cfg.validate()?;
    let size = state0.size();
    let mut sim = Simulator::new(state0, mutation, rec, cfg.mode, cfg.bookkeeping)?;
    let mut samples = Vec::new();
    let mut sample_index = 1u64;
    let sample_time = |j: u64| cfg.burn_in + j as f64 * cfg.sample_every;

    loop {
        let rates = sim.current_rates();
        let total = rates.total();
        let wait = if total > 0.0 {
            sim.draw_wait(total, rng)
        } else {
            f64::INFINITY
        };
        let next_t = sim.state.t + wait;
        while sample_time(sample_index) <= cfg.t_max && sample_time(sample_index) < next_t {
            samples.push(PopulationSample {
                t: sample_time(sample_index),
                counts: sim.state.counts.clone(),
            });
            sample_index += 1;
        }
        if next_t > cfg.t_max {
            sim.state.t = cfg.t_max;
            break;
        }
        sim.state.t = next_t;
        sim.fire(&rates, rng);
    }
    Ok(SimRun {
        replicate,
        size,
        events: sim.events,
        samples,
        final_state: sim.into_state(),
    })
}

/// Runs `cfg.replicates` independent trajectories in parallel. Replicate `r`
/// draws its initial population of `size` genomes from `initial` and then
/// evolves, all from stream `r` of the seeded generator.
pub fn simulate_replicates(
    initial: &Distribution,
    size: usize,
    mutation: &MutationModel,
    rec: &RecombinationModel,
    cfg: &SimConfig,
) -> Result<Vec<SimRun>> {
    cfg.validate()?;
    mutation.check_distribution(initial)?;
    (0..cfg.replicates as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = replicate_rng(cfg.seed, r);
            let state0 = PopulationState::sample(initial, size, &mut rng)?;
            simulate_with(state0, mutation, rec, cfg, r, &mut rng)
        })
        .collect()
}
