//! Genome-space combinatorics.
//!
//! A genome of length `n` over an alphabet of size `k` is stored as a single
//! index into a dense table of `k^n` entries. The codec is big-endian:
//! position 0 is the most significant digit, so
//! `index = sum_i symbol[i] * k^(n-1-i)`.
//!
//! Sub-spaces `K^I` for a position subset `I` use the same convention with
//! the positions of `I` taken in ascending order.

use std::fmt;

use crate::error::{Error, Result};

/// Largest genome length supported by [`SubsetMask`].
pub const MAX_GENOME_LEN: usize = 64;

/// Drift above which a distribution is silently renormalized.
pub const RENORM_TOL: f64 = 1e-12;
/// Drift above which a distribution is rejected outright.
pub const HARD_NORM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlphabetSpec {
    k: usize,
    n: usize,
    symbols: Vec<String>,
    strides: Vec<usize>,
    size: usize,
}

impl AlphabetSpec {
    /// Alphabet with default labels `A, B, C, ...` (or `s0, s1, ...` past 26).
    pub fn new(k: usize, n: usize) -> Result<Self> {
        let symbols = if k <= 26 {
            (0..k).map(|a| ((b'A' + a as u8) as char).to_string()).collect()
        } else {
            (0..k).map(|a| format!("s{a}")).collect()
        };
        Self::with_symbols(symbols, n)
    }

    pub fn with_symbols(symbols: Vec<String>, n: usize) -> Result<Self> {
        let k = symbols.len();
        if k < 2 {
            return Err(Error::validation(format!("alphabet size must be >= 2, got {k}")));
        }
        if n == 0 {
            return Err(Error::validation("genome length must be >= 1"));
        }
        if n > MAX_GENOME_LEN {
            return Err(Error::validation(format!(
                "genome length {n} exceeds the supported maximum {MAX_GENOME_LEN}"
            )));
        }
        for (i, s) in symbols.iter().enumerate() {
            if s.is_empty() {
                return Err(Error::validation(format!("symbol {i} has an empty label")));
            }
            if symbols[..i].contains(s) {
                return Err(Error::validation(format!("duplicate symbol label {s:?}")));
            }
        }
        let size = checked_pow(k, n).ok_or_else(|| {
            Error::validation(format!("state space {k}^{n} overflows the index range"))
        })?;
        let strides = (0..n).map(|i| k.pow((n - 1 - i) as u32)).collect();
        Ok(AlphabetSpec {
            k,
            n,
            symbols,
            strides,
            size,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of genomes, `k^n`.
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    /// Index weight of `pos`, i.e. `k^(n-1-pos)`.
    #[inline]
    pub fn stride(&self, pos: usize) -> usize {
        self.strides[pos]
    }

    pub fn full_mask(&self) -> SubsetMask {
        SubsetMask::full(self.n)
    }

    pub fn encode(&self, genome: &[usize]) -> Result<usize> {
        if genome.len() != self.n {
            return Err(Error::validation(format!(
                "genome has {} symbols, expected {}",
                genome.len(),
                self.n
            )));
        }
        let mut index = 0;
        for (pos, &s) in genome.iter().enumerate() {
            if s >= self.k {
                return Err(Error::validation(format!(
                    "symbol index {s} at position {pos} out of range [0, {})",
                    self.k
                )));
            }
            index = index * self.k + s;
        }
        Ok(index)
    }

    pub fn decode(&self, index: usize) -> Result<Vec<usize>> {
        self.check_index(index)?;
        Ok((0..self.n).map(|pos| self.digit(index, pos)).collect())
    }

    pub fn check_index(&self, index: usize) -> Result<()> {
        if index >= self.size {
            return Err(Error::validation(format!(
                "genome index {index} out of range [0, {})",
                self.size
            )));
        }
        Ok(())
    }

    /// Symbol at `pos` of genome `index`.
    #[inline]
    pub fn digit(&self, index: usize, pos: usize) -> usize {
        (index / self.strides[pos]) % self.k
    }

    /// Genome `index` with the symbol at `pos` replaced by `symbol`.
    #[inline]
    pub fn with_digit(&self, index: usize, pos: usize, symbol: usize) -> usize {
        let stride = self.strides[pos];
        index - self.digit(index, pos) * stride + symbol * stride
    }

    /// Genome equal to `y` on the positions of `mask` and to `x` elsewhere.
    pub fn splice(&self, x: usize, y: usize, mask: SubsetMask) -> Result<usize> {
        self.check_index(x)?;
        self.check_index(y)?;
        self.check_mask(mask)?;
        Ok(self.splice_unchecked(x, y, mask))
    }

    #[inline]
    pub(crate) fn splice_unchecked(&self, x: usize, y: usize, mask: SubsetMask) -> usize {
        mask.positions()
            .fold(x, |acc, pos| self.with_digit(acc, pos, self.digit(y, pos)))
    }

    pub fn hamming(&self, x: usize, y: usize) -> usize {
        (0..self.n)
            .filter(|&pos| self.digit(x, pos) != self.digit(y, pos))
            .count()
    }

    pub fn check_mask(&self, mask: SubsetMask) -> Result<()> {
        if mask.n() != self.n {
            return Err(Error::validation(format!(
                "mask is over {} positions, genome length is {}",
                mask.n(),
                self.n
            )));
        }
        Ok(())
    }

    /// Parses a genome from its labels. Single-character alphabets accept a
    /// plain word (`"ABBA"`); otherwise labels are separated by whitespace or
    /// commas.
    pub fn parse(&self, text: &str) -> Result<usize> {
        let single_char = self.symbols.iter().all(|s| s.chars().count() == 1);
        let tokens: Vec<String> = if single_char && !text.contains([',', ' ']) {
            text.chars().map(|c| c.to_string()).collect()
        } else {
            text.split([',', ' '])
                .filter(|t| !t.is_empty())
                .map(str::to_string)
                .collect()
        };
        let digits = tokens
            .iter()
            .map(|t| {
                self.symbols
                    .iter()
                    .position(|s| s == t)
                    .ok_or_else(|| Error::validation(format!("unknown symbol {t:?} in {text:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        self.encode(&digits)
    }

    pub fn format(&self, index: usize) -> String {
        let single_char = self.symbols.iter().all(|s| s.chars().count() == 1);
        let sep = if single_char { "" } else { "," };
        (0..self.n)
            .map(|pos| self.symbols[self.digit(index, pos)].as_str())
            .collect::<Vec<_>>()
            .join(sep)
    }
}

pub(crate) fn checked_pow(base: usize, exp: usize) -> Option<usize> {
    let exp = u32::try_from(exp).ok()?;
    base.checked_pow(exp)
}

/// A subset `I` of genome positions. Bit `i` stands for position `i`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SubsetMask {
    bits: u64,
    n: u8,
}

impl SubsetMask {
    pub fn new(bits: u64, n: usize) -> Result<Self> {
        if n == 0 || n > MAX_GENOME_LEN {
            return Err(Error::validation(format!("mask length {n} out of range [1, 64]")));
        }
        if n < 64 && bits >> n != 0 {
            return Err(Error::validation(format!(
                "mask {bits:#b} has bits set at positions >= {n}"
            )));
        }
        Ok(SubsetMask { bits, n: n as u8 })
    }

    pub fn from_positions(positions: &[usize], n: usize) -> Result<Self> {
        let mut bits = 0u64;
        for &p in positions {
            if p >= n {
                return Err(Error::validation(format!(
                    "position {p} out of range for genome length {n}"
                )));
            }
            if bits & (1 << p) != 0 {
                return Err(Error::validation(format!("position {p} listed twice")));
            }
            bits |= 1 << p;
        }
        Self::new(bits, n)
    }

    /// Contiguous positions `start .. start + len`.
    pub fn interval(start: usize, len: usize, n: usize) -> Result<Self> {
        if start + len > n {
            return Err(Error::validation(format!(
                "interval {start}..{} exceeds genome length {n}",
                start + len
            )));
        }
        let positions: Vec<usize> = (start..start + len).collect();
        Self::from_positions(&positions, n)
    }

    pub fn empty(n: usize) -> Self {
        SubsetMask { bits: 0, n: n as u8 }
    }

    pub fn full(n: usize) -> Self {
        let bits = if n >= 64 { u64::MAX } else { (1u64 << n) - 1 };
        SubsetMask { bits, n: n as u8 }
    }

    pub fn bits(self) -> u64 {
        self.bits
    }

    /// Genome length the mask refers to.
    pub fn n(self) -> usize {
        self.n as usize
    }

    /// `|I|`.
    pub fn len(self) -> usize {
        self.bits.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.bits == 0
    }

    pub fn is_full(self) -> bool {
        self == Self::full(self.n())
    }

    pub fn contains(self, pos: usize) -> bool {
        pos < self.n() && self.bits & (1 << pos) != 0
    }

    pub fn complement(self) -> Self {
        SubsetMask {
            bits: !self.bits & Self::full(self.n()).bits,
            n: self.n,
        }
    }

    /// Positions in ascending order.
    pub fn positions(self) -> impl Iterator<Item = usize> {
        let mut rest = self.bits;
        std::iter::from_fn(move || {
            if rest == 0 {
                None
            } else {
                let p = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                Some(p)
            }
        })
    }
}

impl fmt::Debug for SubsetMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.positions()).finish()
    }
}

impl fmt::Display for SubsetMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.positions().map(|p| p.to_string()).collect();
        write!(f, "{{{}}}", parts.join(","))
    }
}

/// Maps genome indices to sub-space indices over the positions of a mask.
#[derive(Debug, Clone)]
pub struct Projection {
    k: usize,
    /// Full-space strides of the selected positions, ascending position order.
    strides: Vec<usize>,
}

impl Projection {
    pub fn new(spec: &AlphabetSpec, mask: SubsetMask) -> Self {
        Projection {
            k: spec.k(),
            strides: mask.positions().map(|p| spec.stride(p)).collect(),
        }
    }

    /// Number of positions projected onto.
    pub fn sites(&self) -> usize {
        self.strides.len()
    }

    /// Size of the sub-space, `k^|I|`.
    pub fn size(&self) -> usize {
        self.k.pow(self.strides.len() as u32)
    }

    #[inline]
    pub fn project(&self, x: usize) -> usize {
        self.strides
            .iter()
            .fold(0, |acc, &s| acc * self.k + (x / s) % self.k)
    }
}

/// A probability law over `K^sites`, stored densely in codec order.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    k: usize,
    sites: usize,
    probs: Vec<f64>,
}

impl Distribution {
    /// Validates and normalizes `probs`. Entries must be finite and
    /// non-negative; the total must be within [`HARD_NORM_TOL`] of one.
    pub fn new(k: usize, sites: usize, probs: Vec<f64>) -> Result<Self> {
        Self::check_shape(k, sites, probs.len())?;
        let mut sum = 0.0;
        for (i, &p) in probs.iter().enumerate() {
            if !p.is_finite() || p < 0.0 {
                return Err(Error::validation(format!("probability entry {i} is {p}")));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > HARD_NORM_TOL {
            return Err(Error::validation(format!(
                "probabilities sum to {sum}, which is not within {HARD_NORM_TOL:e} of 1"
            )));
        }
        let mut d = Distribution { k, sites, probs };
        if (sum - 1.0).abs() > RENORM_TOL {
            d.probs.iter_mut().for_each(|p| *p /= sum);
        }
        Ok(d)
    }

    /// Distribution proportional to non-negative `weights`.
    pub fn from_weights(k: usize, sites: usize, weights: Vec<f64>) -> Result<Self> {
        Self::check_shape(k, sites, weights.len())?;
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::validation("weights must be finite and non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::validation("weights sum to zero"));
        }
        let probs = weights.into_iter().map(|w| w / total).collect();
        Ok(Distribution { k, sites, probs })
    }

    pub fn on(spec: &AlphabetSpec, probs: Vec<f64>) -> Result<Self> {
        Self::new(spec.k(), spec.n(), probs)
    }

    pub fn uniform(k: usize, sites: usize) -> Result<Self> {
        let len = checked_pow(k, sites)
            .ok_or_else(|| Error::validation("state space overflows the index range"))?;
        Ok(Distribution {
            k,
            sites,
            probs: vec![1.0 / len as f64; len],
        })
    }

    pub fn point_mass(k: usize, sites: usize, index: usize) -> Result<Self> {
        let len = checked_pow(k, sites)
            .ok_or_else(|| Error::validation("state space overflows the index range"))?;
        if index >= len {
            return Err(Error::validation(format!("index {index} out of range [0, {len})")));
        }
        let mut probs = vec![0.0; len];
        probs[index] = 1.0;
        Ok(Distribution { k, sites, probs })
    }

    fn check_shape(k: usize, sites: usize, len: usize) -> Result<usize> {
        let expected = checked_pow(k, sites)
            .ok_or_else(|| Error::validation("state space overflows the index range"))?;
        if len != expected {
            return Err(Error::validation(format!(
                "table has {len} entries, expected {k}^{sites} = {expected}"
            )));
        }
        Ok(expected)
    }

    /// Trusted constructor for tables produced by in-crate arithmetic.
    pub(crate) fn from_raw(k: usize, sites: usize, probs: Vec<f64>) -> Self {
        debug_assert_eq!(probs.len(), k.pow(sites as u32));
        Distribution { k, sites, probs }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.probs
    }

    pub fn same_space(&self, other: &Distribution) -> bool {
        self.k == other.k && self.sites == other.sites
    }

    fn ensure_same_space(&self, other: &Distribution) -> Result<()> {
        if !self.same_space(other) {
            return Err(Error::validation(format!(
                "space mismatch: {}^{} vs {}^{}",
                self.k, self.sites, other.k, other.sites
            )));
        }
        Ok(())
    }

    pub fn min(&self) -> f64 {
        self.probs.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

impl std::ops::Index<usize> for Distribution {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.probs[i]
    }
}

/// Marginal law of `mu` on the positions of `mask`.
pub fn marginalize(mu: &Distribution, spec: &AlphabetSpec, mask: SubsetMask) -> Result<Distribution> {
    if mu.k() != spec.k() || mu.sites() != spec.n() {
        return Err(Error::validation("distribution does not live on the given genome space"));
    }
    spec.check_mask(mask)?;
    let proj = Projection::new(spec, mask);
    Ok(Distribution::from_raw(
        spec.k(),
        proj.sites(),
        marginal_table(mu.probs(), &proj),
    ))
}

pub(crate) fn marginal_table(probs: &[f64], proj: &Projection) -> Vec<f64> {
    let mut out = vec![0.0; proj.size()];
    for (x, &p) in probs.iter().enumerate() {
        out[proj.project(x)] += p;
    }
    out
}

/// Product law `prod_i laws[i](x_i)` over `K^n`.
pub fn product_measure(laws: &[Distribution]) -> Result<Distribution> {
    let first = laws
        .first()
        .ok_or_else(|| Error::validation("product of an empty list of site laws"))?;
    let k = first.k();
    for (i, law) in laws.iter().enumerate() {
        if law.k() != k || law.sites() != 1 {
            return Err(Error::validation(format!(
                "site law {i} is not a distribution over a single {k}-letter site"
            )));
        }
    }
    let n = laws.len();
    let size = checked_pow(k, n)
        .ok_or_else(|| Error::validation("state space overflows the index range"))?;
    let mut probs = vec![1.0];
    probs.reserve(size);
    for law in laws {
        probs = probs
            .iter()
            .flat_map(|&p| law.probs().iter().map(move |&a| p * a))
            .collect();
    }
    Ok(Distribution::from_raw(k, n, probs))
}

/// `g ln g - g + 1`, the non-negative integrand of relative entropies.
/// Uses a series near `g = 1` to avoid cancellation.
pub fn log_excess(g: f64) -> f64 {
    let u = g - 1.0;
    if u.abs() < 1e-2 {
        // sum_{m>=2} (-1)^m u^m / (m (m - 1))
        let mut term = u * u;
        let mut sum = 0.0;
        for m in 2..=10 {
            let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
            sum += sign * term / (m * (m - 1)) as f64;
            term *= u;
        }
        sum
    } else if g == 0.0 {
        1.0
    } else {
        g * g.ln() - g + 1.0
    }
}

/// Negative Shannon entropy `sum_x mu(x) ln mu(x)`, with `0 ln 0 = 0`.
pub fn neg_entropy(mu: &Distribution) -> f64 {
    mu.probs()
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum()
}

/// Kullback-Leibler divergence `D(mu | q)`. Requires `q > 0` everywhere.
///
/// Evaluated as `sum_x q(x) h(mu(x)/q(x))` with `h(g) = g ln g - g + 1`,
/// which equals `sum_x mu ln(mu/q)` for normalized arguments and is
/// non-negative term by term.
pub fn relative_entropy(mu: &Distribution, q: &Distribution) -> Result<f64> {
    mu.ensure_same_space(q)?;
    if let Some(i) = q.probs().iter().position(|&v| v <= 0.0) {
        return Err(Error::Domain(format!(
            "reference law has a non-positive entry at index {i}"
        )));
    }
    Ok(mu
        .probs()
        .iter()
        .zip(q.probs())
        .map(|(&p, &r)| r * log_excess(p / r))
        .sum())
}

/// `sum_x |mu(x) - nu(x)|`.
pub fn l1_distance(mu: &Distribution, nu: &Distribution) -> Result<f64> {
    mu.ensure_same_space(nu)?;
    Ok(l1_raw(mu.probs(), nu.probs()))
}

/// Total variation distance, half the l1 distance.
pub fn total_variation(mu: &Distribution, nu: &Distribution) -> Result<f64> {
    Ok(0.5 * l1_distance(mu, nu)?)
}

pub(crate) fn l1_raw(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}
