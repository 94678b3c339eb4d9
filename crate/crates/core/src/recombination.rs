//! Similarity-dependent homologous recombination.
//!
//! For each subset `I` of the recombination family, a genome `x` takes the
//! substring `y_I` of a donor drawn from the marginal law `mu_I`, at rate
//! `kappa * w_I * phi(x_I, y_I)`. The mean-field derivative of one `I` term is
//!
//! ```text
//! sum_{y_I} phi(y_I, x_I) mu_I(x_I) mu(x_{-I}, y_I) - phi(x_I, y_I) mu_I(y_I) mu(x)
//! ```
//!
//! `phi` is always read as `phi(recipient substring, donor substring)`.
//!
//! Constant and Hamming-decay similarities factor into per-site `k x k`
//! matrices, so applying them to a dense table costs `O(k^n * |I| * k)`
//! instead of `O(k^(n + |I|))`. Explicit tables are applied densely.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::state_space::{
    marginal_table, AlphabetSpec, Distribution, Projection, SubsetMask,
};
use crate::stochastic::StochasticMatrix;

/// Largest genome length for the all-subsets family.
pub const ALL_SUBSETS_MAX_LEN: usize = 12;
/// Largest state space for which dense transition matrices are built.
pub const MAX_DENSE_CHAIN_STATES: usize = 4096;
/// Largest substring space for which an explicit table kernel is expanded.
const MAX_TABLE_KERNEL: usize = 1 << 24;

/// Explicit similarity values keyed by substring pairs (symbol indices).
#[derive(Debug, Clone, PartialEq)]
pub struct PhiTable {
    entries: HashMap<(Vec<usize>, Vec<usize>), f64>,
    symmetric: bool,
    allow_asymmetric: bool,
}

impl PhiTable {
    /// Asymmetric tables are rejected unless `allow_asymmetric` is set.
    pub fn new(
        entries: impl IntoIterator<Item = (Vec<usize>, Vec<usize>, f64)>,
        allow_asymmetric: bool,
    ) -> Result<Self> {
        let mut map = HashMap::new();
        for (x, y, v) in entries {
            if x.len() != y.len() {
                return Err(Error::validation(format!(
                    "similarity entry {x:?}/{y:?} pairs substrings of different lengths"
                )));
            }
            if !v.is_finite() || v < 0.0 {
                return Err(Error::validation(format!(
                    "similarity entry {x:?}/{y:?} is {v}, must be finite and non-negative"
                )));
            }
            if map.insert((x.clone(), y.clone()), v).is_some() {
                return Err(Error::validation(format!("duplicate similarity entry {x:?}/{y:?}")));
            }
        }
        let mut asymmetric_pair = None;
        for ((x, y), v) in &map {
            match map.get(&(y.clone(), x.clone())) {
                Some(w) if w == v => {}
                _ => {
                    asymmetric_pair = Some((x.clone(), y.clone()));
                    break;
                }
            }
        }
        if let (Some((x, y)), false) = (&asymmetric_pair, allow_asymmetric) {
            return Err(Error::validation(format!(
                "similarity table is asymmetric at {x:?}/{y:?}; set allow-asymmetric to accept it"
            )));
        }
        Ok(PhiTable {
            entries: map,
            symmetric: asymmetric_pair.is_none(),
            allow_asymmetric,
        })
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn allow_asymmetric(&self) -> bool {
        self.allow_asymmetric
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, x: &[usize], y: &[usize]) -> Result<f64> {
        self.entries
            .get(&(x.to_vec(), y.to_vec()))
            .copied()
            .ok_or_else(|| Error::validation(format!("no similarity entry for {x:?}/{y:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SimilaritySpec {
    /// `phi = c`.
    Constant(f64),
    /// `phi = exp(-rate * d_H(x_I, y_I))`.
    ExponentialDecay { rate: f64 },
    Table(PhiTable),
}

impl SimilaritySpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            SimilaritySpec::Constant(c) if !c.is_finite() || *c < 0.0 => Err(Error::validation(
                format!("constant similarity {c} must be finite and non-negative"),
            )),
            SimilaritySpec::ExponentialDecay { rate } if !rate.is_finite() || *rate < 0.0 => {
                Err(Error::validation(format!(
                    "decay rate {rate} must be finite and non-negative"
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn is_symmetric(&self) -> bool {
        match self {
            SimilaritySpec::Table(t) => t.is_symmetric(),
            _ => true,
        }
    }

    /// True when the configuration opted into asymmetric similarities. Theorem
    /// checks refuse to certify such models.
    pub fn allows_asymmetric(&self) -> bool {
        matches!(self, SimilaritySpec::Table(t) if t.allow_asymmetric())
    }

    /// `phi(x_I, y_I)` for substrings given as symbol indices.
    pub fn eval(&self, x: &[usize], y: &[usize]) -> Result<f64> {
        if x.len() != y.len() {
            return Err(Error::validation("substrings of different lengths"));
        }
        match self {
            SimilaritySpec::Constant(c) => Ok(*c),
            SimilaritySpec::ExponentialDecay { rate } => {
                let d = x.iter().zip(y).filter(|(a, b)| a != b).count();
                Ok((-rate * d as f64).exp())
            }
            SimilaritySpec::Table(t) => t.get(x, y),
        }
    }

    fn kernel(&self, k: usize, sites: usize) -> Result<Kernel> {
        Ok(match self {
            SimilaritySpec::Constant(c) => Kernel::Separable {
                scale: *c,
                site: vec![1.0; k * k],
            },
            SimilaritySpec::ExponentialDecay { rate } => {
                let off = (-rate).exp();
                let site = (0..k * k)
                    .map(|i| if i / k == i % k { 1.0 } else { off })
                    .collect();
                Kernel::Separable { scale: 1.0, site }
            }
            SimilaritySpec::Table(t) => {
                let size = k.pow(sites as u32);
                if size.checked_mul(size).is_none_or(|s| s > MAX_TABLE_KERNEL) {
                    return Err(Error::validation(format!(
                        "explicit similarity table over {size} substrings is too large"
                    )));
                }
                let digits = |a: usize| -> Vec<usize> {
                    (0..sites)
                        .map(|j| (a / k.pow((sites - 1 - j) as u32)) % k)
                        .collect()
                };
                let mut table = vec![0.0; size * size];
                for a in 0..size {
                    for b in 0..size {
                        table[a * size + b] = t.get(&digits(a), &digits(b))?;
                    }
                }
                Kernel::Dense { size, table }
            }
        })
    }
}

/// `phi` restricted to one subset, as an operator on substring indices.
#[derive(Debug, Clone)]
enum Kernel {
    /// `phi(a, b) = scale * prod_j site[a_j][b_j]`.
    Separable { scale: f64, site: Vec<f64> },
    Dense { size: usize, table: Vec<f64> },
}

/// Applies the `k x k` matrix `m` along one axis of a dense table:
/// `v'[.., a, ..] = sum_b m[b][a] v[.., b, ..]` or, with `by_row`,
/// `sum_b m[a][b] v[.., b, ..]`.
fn apply_axis(table: &mut [f64], k: usize, stride: usize, m: &[f64], by_row: bool) {
    let mut gathered = vec![0.0; k];
    let block = stride * k;
    for hi in (0..table.len()).step_by(block) {
        for lo in 0..stride {
            let base = hi + lo;
            for (b, g) in gathered.iter_mut().enumerate() {
                *g = table[base + b * stride];
            }
            for a in 0..k {
                table[base + a * stride] = (0..k)
                    .map(|b| {
                        let coef = if by_row { m[a * k + b] } else { m[b * k + a] };
                        coef * gathered[b]
                    })
                    .sum();
            }
        }
    }
}

/// One subset `I` of the recombination family with its precomputed kernel.
#[derive(Debug, Clone)]
pub struct FamilyMember {
    mask: SubsetMask,
    weight: f64,
    proj: Projection,
    /// Full-space strides of the positions of `I`.
    strides: Vec<usize>,
    /// Full-space offset of each substring index.
    offsets: Vec<usize>,
    kernel: Kernel,
    phi_max: f64,
    k: usize,
}

impl FamilyMember {
    fn new(spec: &AlphabetSpec, mask: SubsetMask, weight: f64, sim: &SimilaritySpec) -> Result<Self> {
        let proj = Projection::new(spec, mask);
        let strides: Vec<usize> = mask.positions().map(|p| spec.stride(p)).collect();
        let k = spec.k();
        let offsets = (0..proj.size())
            .map(|a| {
                let m = strides.len();
                strides
                    .iter()
                    .enumerate()
                    .map(|(j, s)| ((a / k.pow((m - 1 - j) as u32)) % k) * s)
                    .sum()
            })
            .collect();
        let kernel = sim.kernel(k, mask.len())?;
        let phi_max = match &kernel {
            Kernel::Separable { scale, site } => {
                scale * site.iter().copied().fold(0.0, f64::max).powi(mask.len() as i32)
            }
            Kernel::Dense { table, .. } => table.iter().copied().fold(0.0, f64::max),
        };
        Ok(FamilyMember {
            mask,
            weight,
            proj,
            strides,
            offsets,
            kernel,
            phi_max,
            k,
        })
    }

    pub fn mask(&self) -> SubsetMask {
        self.mask
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    /// Number of substrings, `k^|I|`.
    pub fn substring_count(&self) -> usize {
        self.proj.size()
    }

    /// Substring index of genome `x` on this subset.
    #[inline]
    pub fn project(&self, x: usize) -> usize {
        self.proj.project(x)
    }

    /// Genome `x` with its `I`-substring replaced by substring `a`.
    #[inline]
    pub fn replace(&self, x: usize, a: usize) -> usize {
        x - self.offsets[self.proj.project(x)] + self.offsets[a]
    }

    /// `phi(a, b)` for substring indices.
    pub fn phi(&self, a: usize, b: usize) -> f64 {
        match &self.kernel {
            Kernel::Separable { scale, site } => {
                let k = self.k;
                let (mut a, mut b) = (a, b);
                let mut v = *scale;
                for _ in 0..self.strides.len() {
                    v *= site[(a % k) * k + b % k];
                    a /= k;
                    b /= k;
                }
                v
            }
            Kernel::Dense { size, table } => table[a * size + b],
        }
    }

    /// Upper bound of `phi` over all substring pairs.
    pub fn phi_max(&self) -> f64 {
        self.phi_max
    }

    /// `sum_b phi(b, x_I) table(x_{-I}, b)` for every `x`.
    fn donor_contract(&self, table: &[f64]) -> Vec<f64> {
        match &self.kernel {
            Kernel::Separable { scale, site } => {
                let mut out = table.to_vec();
                for &s in &self.strides {
                    apply_axis(&mut out, self.k, s, site, false);
                }
                if *scale != 1.0 {
                    out.iter_mut().for_each(|v| *v *= scale);
                }
                out
            }
            Kernel::Dense { size, table: phi } => (0..table.len())
                .map(|x| {
                    let a = self.proj.project(x);
                    let base = x - self.offsets[a];
                    (0..*size)
                        .map(|b| table[base + self.offsets[b]] * phi[b * size + a])
                        .sum()
                })
                .collect(),
        }
    }

    /// `sum_b phi(a, b) v(b)` on a substring-space vector.
    fn recipient_contract(&self, v: &[f64]) -> Vec<f64> {
        match &self.kernel {
            Kernel::Separable { scale, site } => {
                let mut out = v.to_vec();
                let m = self.strides.len();
                for j in 0..m {
                    apply_axis(&mut out, self.k, self.k.pow((m - 1 - j) as u32), site, true);
                }
                if *scale != 1.0 {
                    out.iter_mut().for_each(|x| *x *= scale);
                }
                out
            }
            Kernel::Dense { size, table } => (0..*size)
                .map(|a| (0..*size).map(|b| table[a * size + b] * v[b]).sum())
                .collect(),
        }
    }

    /// Adds `scale` times this subset's mean-field term into `out`.
    fn accumulate_rhs(&self, probs: &[f64], scale: f64, out: &mut [f64]) {
        let marginal = marginal_table(probs, &self.proj);
        let loss_rate = self.recipient_contract(&marginal);
        let gain = self.donor_contract(probs);
        for (x, slot) in out.iter_mut().enumerate() {
            let a = self.proj.project(x);
            *slot += scale * (marginal[a] * gain[x] - loss_rate[a] * probs[x]);
        }
    }
}

/// How the subsets `I` are chosen.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FamilySpec {
    /// All contiguous intervals with length in `min_len..=max_len`.
    Intervals { min_len: usize, max_len: usize },
    /// Every non-empty subset of positions (`n <= 12`).
    AllSubsets,
    Explicit(Vec<SubsetMask>),
}

impl FamilySpec {
    /// Parses `"intervals:MIN..MAX"` or `"all-subsets"`.
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        if text == "all-subsets" {
            return Ok(FamilySpec::AllSubsets);
        }
        let range = text.strip_prefix("intervals:").ok_or_else(|| {
            Error::validation(format!(
                "family descriptor {text:?} is neither \"intervals:MIN..MAX\" nor \"all-subsets\""
            ))
        })?;
        let (lo, hi) = range
            .split_once("..")
            .ok_or_else(|| Error::validation(format!("malformed interval range {range:?}")))?;
        let parse = |s: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::validation(format!("bad interval length {s:?}")))
        };
        Ok(FamilySpec::Intervals {
            min_len: parse(lo)?,
            max_len: parse(hi.trim_start_matches('='))?,
        })
    }

    pub fn masks(&self, n: usize) -> Result<Vec<SubsetMask>> {
        match self {
            FamilySpec::Intervals { min_len, max_len } => {
                if *min_len == 0 || min_len > max_len || *max_len > n {
                    return Err(Error::validation(format!(
                        "interval lengths {min_len}..{max_len} invalid for genome length {n}"
                    )));
                }
                let mut out = Vec::new();
                for len in *min_len..=*max_len {
                    for start in 0..=n - len {
                        out.push(SubsetMask::interval(start, len, n)?);
                    }
                }
                Ok(out)
            }
            FamilySpec::AllSubsets => {
                if n > ALL_SUBSETS_MAX_LEN {
                    return Err(Error::validation(format!(
                        "all-subsets family requires n <= {ALL_SUBSETS_MAX_LEN}, got {n}"
                    )));
                }
                (1..(1u64 << n)).map(|bits| SubsetMask::new(bits, n)).collect()
            }
            FamilySpec::Explicit(masks) => Ok(masks.clone()),
        }
    }
}

/// Recombination process: global intensity, weighted subset family and
/// similarity function.
#[derive(Debug, Clone)]
pub struct RecombinationModel {
    spec: AlphabetSpec,
    kappa: f64,
    similarity: SimilaritySpec,
    /// Sorted by ascending mask bits; empty masks are dropped.
    members: Vec<FamilyMember>,
    warnings: Vec<String>,
}

impl RecombinationModel {
    pub fn new(
        spec: AlphabetSpec,
        kappa: f64,
        family: Vec<(SubsetMask, f64)>,
        similarity: SimilaritySpec,
    ) -> Result<Self> {
        if !kappa.is_finite() || kappa < 0.0 {
            return Err(Error::validation(format!("kappa {kappa} must be finite and non-negative")));
        }
        similarity.validate()?;
        let mut family = family;
        family.sort_by_key(|(m, _)| m.bits());
        let mut warnings = Vec::new();
        let mut members = Vec::with_capacity(family.len());
        for (i, &(mask, weight)) in family.iter().enumerate() {
            spec.check_mask(mask)?;
            if !weight.is_finite() || weight <= 0.0 {
                return Err(Error::validation(format!(
                    "family weight {weight} for {mask} must be positive"
                )));
            }
            if i > 0 && family[i - 1].0 == mask {
                return Err(Error::validation(format!("duplicate family mask {mask}")));
            }
            if mask.is_empty() {
                warnings.push("empty subset in family contributes nothing and is skipped".into());
                continue;
            }
            if mask.is_full() {
                warnings.push(format!(
                    "full subset {mask} replaces whole genomes and is dynamically inert for symmetric phi"
                ));
            }
            members.push(FamilyMember::new(&spec, mask, weight, &similarity)?);
        }
        Ok(RecombinationModel {
            spec,
            kappa,
            similarity,
            members,
            warnings,
        })
    }

    /// Family from a descriptor with uniform weights.
    pub fn with_family(
        spec: AlphabetSpec,
        kappa: f64,
        family: &FamilySpec,
        similarity: SimilaritySpec,
    ) -> Result<Self> {
        let masks = family.masks(spec.n())?;
        let family = masks.into_iter().map(|m| (m, 1.0)).collect();
        Self::new(spec, kappa, family, similarity)
    }

    /// A model with no recombination at all.
    pub fn none(spec: AlphabetSpec) -> Self {
        RecombinationModel {
            spec,
            kappa: 0.0,
            similarity: SimilaritySpec::Constant(0.0),
            members: Vec::new(),
            warnings: Vec::new(),
        }
    }

    /// Same family and similarity at a different intensity.
    pub fn with_kappa(&self, kappa: f64) -> Result<Self> {
        if !kappa.is_finite() || kappa < 0.0 {
            return Err(Error::validation(format!("kappa {kappa} must be finite and non-negative")));
        }
        Ok(RecombinationModel {
            kappa,
            ..self.clone()
        })
    }

    pub fn spec(&self) -> &AlphabetSpec {
        &self.spec
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn similarity(&self) -> &SimilaritySpec {
        &self.similarity
    }

    pub fn members(&self) -> &[FamilyMember] {
        &self.members
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn is_symmetric(&self) -> bool {
        self.similarity.is_symmetric()
    }

    /// Whether theorem checks may certify this model.
    pub fn certifiable(&self) -> bool {
        self.is_symmetric() && !self.similarity.allows_asymmetric()
    }

    fn check_distribution(&self, mu: &Distribution) -> Result<()> {
        if mu.k() != self.spec.k() || mu.sites() != self.spec.n() {
            return Err(Error::validation("distribution does not live on the model's genome space"));
        }
        Ok(())
    }

    /// Nonlinear recombination part of the kinetic equation, summed over the
    /// family in ascending mask order with each term scaled by `kappa * w_I`.
    pub fn recombination_rhs(&self, mu: &Distribution) -> Result<Vec<f64>> {
        self.check_distribution(mu)?;
        let mut out = vec![0.0; mu.len()];
        self.accumulate_rhs(mu.probs(), &mut out);
        Ok(out)
    }

    /// The term of a single family member, scaled by `kappa * w_I`.
    pub fn member_rhs(&self, mu: &Distribution, member: usize) -> Result<Vec<f64>> {
        self.check_distribution(mu)?;
        let m = self
            .members
            .get(member)
            .ok_or_else(|| Error::validation(format!("no family member {member}")))?;
        let mut out = vec![0.0; mu.len()];
        m.accumulate_rhs(mu.probs(), self.kappa * m.weight, &mut out);
        Ok(out)
    }

    pub(crate) fn accumulate_rhs(&self, probs: &[f64], out: &mut [f64]) {
        if self.kappa == 0.0 {
            return;
        }
        for m in &self.members {
            m.accumulate_rhs(probs, self.kappa * m.weight, out);
        }
    }

    fn member_for(&self, mask: SubsetMask) -> Result<(FamilyMember, f64)> {
        self.spec.check_mask(mask)?;
        Ok(match self.members.iter().find(|m| m.mask == mask) {
            Some(m) => (m.clone(), m.weight),
            None => (FamilyMember::new(&self.spec, mask, 1.0, &self.similarity)?, 1.0),
        })
    }

    /// Discrete-time kernel of recombination on `I` over a step `dt`:
    /// `P(x -> y) = kappa w_I phi(x_I, y_I) mu_I(y_I) dt` when `y` differs
    /// from `x` only on `I`, and the diagonal makes rows sum to one. Subsets
    /// outside the family use weight one.
    pub fn transition_matrix(
        &self,
        mu: &Distribution,
        mask: SubsetMask,
        dt: f64,
    ) -> Result<StochasticMatrix> {
        self.check_distribution(mu)?;
        let size = self.spec.size();
        if size > MAX_DENSE_CHAIN_STATES {
            return Err(Error::validation(format!(
                "dense transition matrix over {size} states exceeds {MAX_DENSE_CHAIN_STATES}"
            )));
        }
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::validation(format!("step {dt} must be positive")));
        }
        let (member, weight) = self.member_for(mask)?;
        let marginal = marginal_table(mu.probs(), &member.proj);
        let rate = self.kappa * weight;
        let mut entries = vec![0.0; size * size];
        let mut max_exit: f64 = 0.0;
        for x in 0..size {
            let a = member.project(x);
            let mut exit = 0.0;
            for b in (0..member.substring_count()).filter(|&b| b != a) {
                let y = member.replace(x, b);
                let p = rate * member.phi(a, b) * marginal[b] * dt;
                entries[x * size + y] = p;
                exit += p;
            }
            entries[x * size + x] = 1.0 - exit;
            max_exit = max_exit.max(exit / dt);
        }
        if max_exit * dt > 1.0 {
            return Err(Error::StepTooLarge {
                dt,
                max_dt: 1.0 / max_exit,
            });
        }
        Ok(StochasticMatrix::from_raw(size, entries))
    }

    /// `mu_{-I}(x_{-I}) mu_I(x_I)`, the measure left invariant by
    /// [`Self::transition_matrix`] for symmetric `phi`.
    pub fn split_product(&self, mu: &Distribution, mask: SubsetMask) -> Result<Distribution> {
        self.check_distribution(mu)?;
        split_product(&self.spec, mu, mask)
    }

    /// `|| mu_hat P - mu_hat ||_1` for the kernel on `I`. Zero up to rounding
    /// for symmetric `phi`; measures the violation otherwise.
    pub fn invariance_violation(&self, mu: &Distribution, mask: SubsetMask, dt: f64) -> Result<f64> {
        let p = self.transition_matrix(mu, mask, dt)?;
        let hat = self.split_product(mu, mask)?;
        let moved = p.left_multiply(hat.probs())?;
        Ok(crate::state_space::l1_raw(&moved, hat.probs()))
    }
}

pub(crate) fn split_product(
    spec: &AlphabetSpec,
    mu: &Distribution,
    mask: SubsetMask,
) -> Result<Distribution> {
    spec.check_mask(mask)?;
    let inside = Projection::new(spec, mask);
    let outside = Projection::new(spec, mask.complement());
    let mi = marginal_table(mu.probs(), &inside);
    let mo = marginal_table(mu.probs(), &outside);
    let probs = (0..spec.size())
        .map(|x| mi[inside.project(x)] * mo[outside.project(x)])
        .collect();
    Ok(Distribution::from_raw(spec.k(), spec.n(), probs))
}
