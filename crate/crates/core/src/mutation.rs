//! Per-site continuous-time mutation chains and their product stationary law.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::state_space::{product_measure, AlphabetSpec, Distribution};

/// Row sums of a generator must vanish to this tolerance.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Infinitesimal generator of the mutation chain at one site. Entry `(a, b)`
/// with `a != b` is the rate of `a -> b`; the diagonal holds minus the row's
/// off-diagonal sum.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteRateMatrix {
    k: usize,
    rates: Vec<f64>,
}

impl SiteRateMatrix {
    /// Takes a full generator as given. Only the shape is checked here; use
    /// [`validate`] for the generator properties.
    pub fn from_generator(rows: Vec<Vec<f64>>) -> Result<Self> {
        let k = rows.len();
        if k < 2 {
            return Err(Error::validation("rate matrix must be at least 2x2"));
        }
        if let Some(r) = rows.iter().position(|row| row.len() != k) {
            return Err(Error::validation(format!("rate matrix row {r} is not of length {k}")));
        }
        let rates: Vec<f64> = rows.into_iter().flatten().collect();
        if rates.iter().any(|r| !r.is_finite()) {
            return Err(Error::validation("rate matrix has a non-finite entry"));
        }
        Ok(SiteRateMatrix { k, rates })
    }

    /// Builds a generator from its off-diagonal rates; diagonal entries of
    /// `rows` are ignored and recomputed.
    pub fn from_off_diagonal(rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut m = Self::from_generator(rows)?;
        for a in 0..m.k {
            m.rates[a * m.k + a] = 0.0;
            let out: f64 = (0..m.k).filter(|&b| b != a).map(|b| m.rate(a, b)).sum();
            m.rates[a * m.k + a] = -out;
        }
        Ok(m)
    }

    /// Every letter mutates to every other letter at `rate`.
    pub fn symmetric(k: usize, rate: f64) -> Result<Self> {
        Self::from_off_diagonal(vec![vec![rate; k]; k])
    }

    pub fn two_state(a_to_b: f64, b_to_a: f64) -> Result<Self> {
        Self::from_off_diagonal(vec![vec![0.0, a_to_b], vec![b_to_a, 0.0]])
    }

    /// Off-diagonal rates drawn uniformly from `[low, high]`, so the chain is
    /// connected whenever `low > 0`.
    pub fn random<R: Rng + ?Sized>(k: usize, low: f64, high: f64, rng: &mut R) -> Result<Self> {
        let rows = (0..k)
            .map(|_| (0..k).map(|_| rng.random_range(low..=high)).collect())
            .collect();
        Self::from_off_diagonal(rows)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn rate(&self, a: usize, b: usize) -> f64 {
        self.rates[a * self.k + b]
    }

    /// Total rate of leaving letter `a`.
    pub fn outflow(&self, a: usize) -> f64 {
        (0..self.k).filter(|&b| b != a).map(|b| self.rate(a, b)).sum()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.rates.chunks(self.k).map(<[f64]>::to_vec).collect()
    }

    fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        for a in 0..self.k {
            for b in 0..self.k {
                if a != b && self.rate(a, b) < 0.0 {
                    out.push(format!("negative rate {} for {a}->{b}", self.rate(a, b)));
                }
            }
            let row_sum: f64 = (0..self.k).map(|b| self.rate(a, b)).sum();
            if row_sum.abs() > ROW_SUM_TOL {
                out.push(format!("row {a} sums to {row_sum:e}"));
            }
        }
        if !self.strongly_connected() {
            out.push("transition graph is not strongly connected".to_string());
        }
        out
    }

    fn strongly_connected(&self) -> bool {
        // Everything reachable from letter 0, forwards and backwards.
        let reach = |forward: bool| {
            let mut seen = vec![false; self.k];
            let mut stack = vec![0];
            seen[0] = true;
            while let Some(a) = stack.pop() {
                for b in 0..self.k {
                    let r = if forward { self.rate(a, b) } else { self.rate(b, a) };
                    if b != a && r > 0.0 && !seen[b] {
                        seen[b] = true;
                        stack.push(b);
                    }
                }
            }
            seen.into_iter().all(|s| s)
        };
        reach(true) && reach(false)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SiteFailure {
    pub site: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub passed: bool,
    pub failures: Vec<SiteFailure>,
}

/// Checks non-negativity, zero row sums and strong connectivity of every
/// site's generator.
pub fn validate(sites: &[SiteRateMatrix]) -> ValidationReport {
    let failures: Vec<SiteFailure> = sites
        .iter()
        .enumerate()
        .flat_map(|(site, m)| {
            m.problems()
                .into_iter()
                .map(move |reason| SiteFailure { site, reason })
        })
        .collect();
    ValidationReport {
        passed: failures.is_empty(),
        failures,
    }
}

/// Unique stationary law `q` with `q A = 0` of a connected generator.
///
/// Solves `A^T q = 0` with the last equation replaced by `sum q = 1`, then
/// applies one round of iterative refinement.
pub fn site_stationary(alpha: &SiteRateMatrix) -> Result<Distribution> {
    let k = alpha.k();
    let mut system = vec![0.0; k * k];
    for row in 0..k {
        for col in 0..k {
            system[row * k + col] = if row == k - 1 { 1.0 } else { alpha.rate(col, row) };
        }
    }
    let mut rhs = vec![0.0; k];
    rhs[k - 1] = 1.0;
    let mut q = solve_dense(&system, &rhs, k)?;

    let residual: Vec<f64> = (0..k)
        .map(|row| rhs[row] - (0..k).map(|col| system[row * k + col] * q[col]).sum::<f64>())
        .collect();
    let correction = solve_dense(&system, &residual, k)?;
    q.iter_mut().zip(&correction).for_each(|(v, c)| *v += c);

    let scale = alpha.rates.iter().fold(1.0f64, |m, r| m.max(r.abs()));
    let worst = (0..k)
        .map(|b| (0..k).map(|a| q[a] * alpha.rate(a, b)).sum::<f64>().abs())
        .fold(0.0, f64::max);
    if worst > ROW_SUM_TOL * scale || q.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Numeric(format!(
            "stationary solve failed: residual {worst:e}, law {q:?}"
        )));
    }
    Distribution::new(k, 1, q)
}

/// Gaussian elimination with partial pivoting on a dense `k x k` system.
fn solve_dense(matrix: &[f64], rhs: &[f64], k: usize) -> Result<Vec<f64>> {
    let mut a = matrix.to_vec();
    let mut b = rhs.to_vec();
    for col in 0..k {
        let pivot = (col..k)
            .max_by(|&i, &j| a[i * k + col].abs().total_cmp(&a[j * k + col].abs()))
            .unwrap_or(col);
        if a[pivot * k + col].abs() < f64::MIN_POSITIVE {
            return Err(Error::Numeric("singular stationary system".to_string()));
        }
        if pivot != col {
            for j in 0..k {
                a.swap(pivot * k + j, col * k + j);
            }
            b.swap(pivot, col);
        }
        for row in col + 1..k {
            let factor = a[row * k + col] / a[col * k + col];
            if factor != 0.0 {
                for j in col..k {
                    a[row * k + j] -= factor * a[col * k + j];
                }
                b[row] -= factor * b[col];
            }
        }
    }
    let mut x = vec![0.0; k];
    for row in (0..k).rev() {
        let tail: f64 = (row + 1..k).map(|j| a[row * k + j] * x[j]).sum();
        x[row] = (b[row] - tail) / a[row * k + row];
    }
    Ok(x)
}

/// Mutation process on `K^n`: independent per-site chains. Stationary laws
/// are computed once at construction.
#[derive(Debug, Clone)]
pub struct MutationModel {
    spec: AlphabetSpec,
    sites: Vec<SiteRateMatrix>,
    site_laws: Vec<Distribution>,
    q_lambda: Distribution,
}

impl MutationModel {
    pub fn new(spec: AlphabetSpec, sites: Vec<SiteRateMatrix>) -> Result<Self> {
        if sites.len() != spec.n() {
            return Err(Error::validation(format!(
                "{} site rate matrices for genome length {}",
                sites.len(),
                spec.n()
            )));
        }
        if let Some(i) = sites.iter().position(|m| m.k() != spec.k()) {
            return Err(Error::validation(format!(
                "site {i} rate matrix is {0}x{0}, alphabet size is {1}",
                sites[i].k(),
                spec.k()
            )));
        }
        let report = validate(&sites);
        if let Some(f) = report.failures.first() {
            return Err(Error::validation(format!("site {}: {}", f.site, f.reason)));
        }
        let site_laws = sites.iter().map(site_stationary).collect::<Result<Vec<_>>>()?;
        let q_lambda = product_measure(&site_laws)?;
        Ok(MutationModel {
            spec,
            sites,
            site_laws,
            q_lambda,
        })
    }

    /// The same generator at every site.
    pub fn replicated(spec: AlphabetSpec, site: SiteRateMatrix) -> Result<Self> {
        let sites = vec![site; spec.n()];
        Self::new(spec, sites)
    }

    /// Mutation switched off: all rates zero. Every law is stationary, so
    /// there is no unique `q`; the uniform law stands in as the reference for
    /// entropy and distance monitoring.
    pub fn off(spec: AlphabetSpec) -> Result<Self> {
        let zero = SiteRateMatrix::symmetric(spec.k(), 0.0)?;
        let site_laws = vec![Distribution::uniform(spec.k(), 1)?; spec.n()];
        let q_lambda = product_measure(&site_laws)?;
        Ok(MutationModel {
            sites: vec![zero; spec.n()],
            spec,
            site_laws,
            q_lambda,
        })
    }

    /// Whether every rate is zero.
    pub fn is_off(&self) -> bool {
        self.sites.iter().all(|s| (0..s.k()).all(|a| s.outflow(a) == 0.0))
    }

    /// Independent random generators per site with off-diagonal rates in
    /// `[low, high]`.
    pub fn random<R: Rng + ?Sized>(
        spec: AlphabetSpec,
        low: f64,
        high: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let sites = (0..spec.n())
            .map(|_| SiteRateMatrix::random(spec.k(), low, high, rng))
            .collect::<Result<Vec<_>>>()?;
        Self::new(spec, sites)
    }

    pub fn spec(&self) -> &AlphabetSpec {
        &self.spec
    }

    pub fn sites(&self) -> &[SiteRateMatrix] {
        &self.sites
    }

    pub fn site_law(&self, site: usize) -> &Distribution {
        &self.site_laws[site]
    }

    pub fn site_laws(&self) -> &[Distribution] {
        &self.site_laws
    }

    /// Product stationary law `q(x) = prod_i q_i(x_i)`.
    pub fn q_lambda(&self) -> &Distribution {
        &self.q_lambda
    }

    pub fn validate(&self) -> ValidationReport {
        validate(&self.sites)
    }

    /// Mutation part of the kinetic equation: for every genome `x`,
    /// `sum_i sum_{b != x_i} alpha_i(b, x_i) mu(x with b at i) - alpha_i(x_i, b) mu(x)`.
    pub fn mutation_rhs(&self, mu: &Distribution) -> Result<Vec<f64>> {
        self.check_distribution(mu)?;
        let mut out = vec![0.0; mu.len()];
        self.accumulate_rhs(mu.probs(), &mut out);
        Ok(out)
    }

    pub(crate) fn check_distribution(&self, mu: &Distribution) -> Result<()> {
        if mu.k() != self.spec.k() || mu.sites() != self.spec.n() {
            return Err(Error::validation(format!(
                "distribution over {}^{} does not match genome space {}^{}",
                mu.k(),
                mu.sites(),
                self.spec.k(),
                self.spec.n()
            )));
        }
        Ok(())
    }

    /// Adds the mutation derivative of `probs` into `out`.
    pub(crate) fn accumulate_rhs(&self, probs: &[f64], out: &mut [f64]) {
        let k = self.spec.k();
        for (pos, alpha) in self.sites.iter().enumerate() {
            let stride = self.spec.stride(pos);
            let outflow: Vec<f64> = (0..k).map(|a| alpha.outflow(a)).collect();
            for (x, slot) in out.iter_mut().enumerate() {
                let a = (x / stride) % k;
                let base = x - a * stride;
                let mut gain = 0.0;
                for b in (0..k).filter(|&b| b != a) {
                    gain += alpha.rate(b, a) * probs[base + b * stride];
                }
                *slot += gain - outflow[a] * probs[x];
            }
        }
    }
}
