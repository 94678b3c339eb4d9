//! Deterministic kinetics of the mutation-recombination equation, entropy
//! monitoring and numerical checks of the entropy inequalities.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mutation::MutationModel;
use crate::recombination::{split_product, RecombinationModel};
use crate::state_space::{
    l1_raw, log_excess, marginal_table, neg_entropy, relative_entropy, Distribution, Projection,
    SubsetMask, HARD_NORM_TOL,
};
use crate::stochastic::StochasticMatrix;

/// Negative entries above this are rounding noise and get clamped to zero.
pub const NEGATIVITY_TOL: f64 = 1e-13;
/// Per-record increase of `D` tolerated by the monotonicity audit at the
/// reference step [`AUDIT_REFERENCE_DT`]; scales linearly with `dt`.
pub const AUDIT_BUDGET: f64 = 1e-10;
pub const AUDIT_REFERENCE_DT: f64 = 1e-3;
/// Slack below which an entropy inequality counts as violated.
pub const INEQUALITY_TOL: f64 = 1e-12;
/// Tolerance on the equality of the cross-entropy identity.
pub const CROSS_ENTROPY_TOL: f64 = 1e-10;
/// Tolerance on `mu_hat P = mu_hat` in Lemma-type checks.
pub const INVARIANCE_TOL: f64 = 1e-10;
/// Tolerance on marginal preservation under one kernel step.
pub const MARGINAL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub t_max: f64,
    /// Steps between trajectory records.
    pub record_every: usize,
    /// Threshold on `||rhs||_1` below which the state counts as a fixed point.
    pub fixed_point_eps: f64,
    /// Normalization drift tolerated before renormalizing.
    pub renorm_tol: f64,
    pub keep_snapshots: bool,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            dt: 1e-3,
            t_max: 100.0,
            record_every: 100,
            fixed_point_eps: 1e-10,
            renorm_tol: 1e-12,
            keep_snapshots: false,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::validation(format!("{name} must be positive, got {v}")))
            }
        };
        positive("dt", self.dt)?;
        positive("t_max", self.t_max)?;
        positive("fixed_point_eps", self.fixed_point_eps)?;
        positive("renorm_tol", self.renorm_tol)?;
        if self.record_every == 0 {
            return Err(Error::validation("record_every must be at least 1"));
        }
        Ok(())
    }
}

/// Recorded observables of an integration run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    /// Negative entropy `sum mu ln mu` per record.
    pub neg_entropy: Vec<f64>,
    /// `D(mu | q)` per record.
    pub relative_entropy: Vec<f64>,
    pub l1_to_q: Vec<f64>,
    /// One per record when snapshots are kept, otherwise empty.
    pub snapshots: Vec<Distribution>,
    pub converged: bool,
    pub convergence_time: Option<f64>,
    pub final_state: Distribution,
    pub dt: f64,
    pub steps: usize,
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_l1(&self) -> f64 {
        self.l1_to_q.last().copied().unwrap_or(f64::NAN)
    }
}

/// Right-hand side of the full kinetic equation: mutation plus recombination.
pub fn total_rhs(
    mu: &Distribution,
    mutation: &MutationModel,
    recombination: &RecombinationModel,
) -> Result<Vec<f64>> {
    check_models(mutation, recombination)?;
    mutation.check_distribution(mu)?;
    let mut out = vec![0.0; mu.len()];
    rhs_into(mu.probs(), mutation, recombination, &mut out);
    Ok(out)
}

fn rhs_into(probs: &[f64], mutation: &MutationModel, rec: &RecombinationModel, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    mutation.accumulate_rhs(probs, out);
    rec.accumulate_rhs(probs, out);
}

fn check_models(mutation: &MutationModel, rec: &RecombinationModel) -> Result<()> {
    if mutation.spec() != rec.spec() {
        return Err(Error::validation("mutation and recombination models use different genome spaces"));
    }
    Ok(())
}

/// A recombination model in force from `start` on.
#[derive(Debug, Clone)]
pub struct ScheduleSegment {
    pub start: f64,
    pub model: RecombinationModel,
}

/// Integrates the kinetic equation from `mu0` with the classical fixed-step
/// fourth-order Runge-Kutta scheme.
pub fn integrate(
    mu0: &Distribution,
    mutation: &MutationModel,
    recombination: &RecombinationModel,
    cfg: &IntegratorConfig,
) -> Result<TrajectoryRecord> {
    let schedule = [ScheduleSegment {
        start: 0.0,
        model: recombination.clone(),
    }];
    integrate_schedule(mu0, mutation, &schedule, cfg)
}

/// Like [`integrate`], with a piecewise-constant recombination schedule.
/// Switches take effect at the first step boundary at or after `start`.
pub fn integrate_schedule(
    mu0: &Distribution,
    mutation: &MutationModel,
    schedule: &[ScheduleSegment],
    cfg: &IntegratorConfig,
) -> Result<TrajectoryRecord> {
    cfg.validate()?;
    mutation.check_distribution(mu0)?;
    let first = schedule
        .first()
        .ok_or_else(|| Error::validation("empty recombination schedule"))?;
    if first.start != 0.0 {
        return Err(Error::validation("recombination schedule must start at t = 0"));
    }
    for pair in schedule.windows(2) {
        if !(pair[1].start > pair[0].start) {
            return Err(Error::validation("schedule segment starts must increase"));
        }
    }
    for seg in schedule {
        check_models(mutation, &seg.model)?;
    }

    let q = mutation.q_lambda();
    let n_steps = (cfg.t_max / cfg.dt).round() as usize;
    let len = mu0.len();
    let (k, sites) = (mu0.k(), mu0.sites());

    let mut state = mu0.probs().to_vec();
    let mut k1 = vec![0.0; len];
    let mut k2 = vec![0.0; len];
    let mut k3 = vec![0.0; len];
    let mut k4 = vec![0.0; len];
    let mut stage = vec![0.0; len];

    let mut rec = Recorder::new(cfg.keep_snapshots);
    let mut converged = false;
    let mut convergence_time = None;
    let mut segment = 0;
    let mut step = 0;

    loop {
        let t = step as f64 * cfg.dt;
        while segment + 1 < schedule.len() && schedule[segment + 1].start <= t + 1e-12 * cfg.dt {
            segment += 1;
        }
        let model = &schedule[segment].model;

        rhs_into(&state, mutation, model, &mut k1);
        if k1.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite derivative at t={t}")));
        }
        let residual: f64 = k1.iter().map(|v| v.abs()).sum();
        if residual < cfg.fixed_point_eps {
            converged = true;
            convergence_time = Some(t);
            rec.push(t, &state, q, k, sites)?;
            break;
        }
        if step % cfg.record_every == 0 {
            rec.push(t, &state, q, k, sites)?;
        }
        if step == n_steps {
            rec.push(t, &state, q, k, sites)?;
            break;
        }

        let h = cfg.dt;
        axpy(&state, 0.5 * h, &k1, &mut stage);
        rhs_into(&stage, mutation, model, &mut k2);
        axpy(&state, 0.5 * h, &k2, &mut stage);
        rhs_into(&stage, mutation, model, &mut k3);
        axpy(&state, h, &k3, &mut stage);
        rhs_into(&stage, mutation, model, &mut k4);
        for i in 0..len {
            state[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        step += 1;
        settle(&mut state, step as f64 * h, cfg.renorm_tol)?;
    }

    let final_state = Distribution::from_raw(k, sites, state);
    Ok(TrajectoryRecord {
        times: rec.times,
        neg_entropy: rec.h,
        relative_entropy: rec.d,
        l1_to_q: rec.l1,
        snapshots: rec.snapshots,
        converged,
        convergence_time,
        final_state,
        dt: cfg.dt,
        steps: step,
    })
}

fn axpy(x: &[f64], a: f64, y: &[f64], out: &mut [f64]) {
    for ((o, &xi), &yi) in out.iter_mut().zip(x).zip(y) {
        *o = xi + a * yi;
    }
}

/// Clamps rounding-level negativity and renormalizes after a step.
fn settle(state: &mut [f64], t: f64, renorm_tol: f64) -> Result<()> {
    let mut sum = 0.0;
    for v in state.iter_mut() {
        if !v.is_finite() {
            return Err(Error::Numeric(format!("non-finite probability at t={t}")));
        }
        if *v < 0.0 {
            if *v < -NEGATIVITY_TOL {
                return Err(Error::Unstable { t, value: *v });
            }
            *v = 0.0;
        }
        sum += *v;
    }
    let drift = (sum - 1.0).abs();
    if drift > HARD_NORM_TOL {
        return Err(Error::Numeric(format!(
            "probability mass drifted to {sum} at t={t}; reduce dt"
        )));
    }
    if drift > renorm_tol {
        state.iter_mut().for_each(|v| *v /= sum);
    }
    Ok(())
}

struct Recorder {
    times: Vec<f64>,
    h: Vec<f64>,
    d: Vec<f64>,
    l1: Vec<f64>,
    snapshots: Vec<Distribution>,
    keep: bool,
}

impl Recorder {
    fn new(keep: bool) -> Self {
        Recorder {
            times: Vec::new(),
            h: Vec::new(),
            d: Vec::new(),
            l1: Vec::new(),
            snapshots: Vec::new(),
            keep,
        }
    }

    fn push(&mut self, t: f64, state: &[f64], q: &Distribution, k: usize, sites: usize) -> Result<()> {
        if self.times.last().is_some_and(|&last| last >= t) {
            return Ok(());
        }
        let mu = Distribution::from_raw(k, sites, state.to_vec());
        self.times.push(t);
        self.h.push(neg_entropy(&mu));
        self.d.push(relative_entropy(&mu, q)?);
        self.l1.push(l1_raw(state, q.probs()));
        if self.keep {
            self.snapshots.push(mu);
        }
        Ok(())
    }
}

/// Closed-form time derivative of `D(p | q)` under the pure mutation flow,
///
/// ```text
/// dD/dt = - sum_{x != y} (g ln g - g + 1) q(x) a(x, y) f(y),   f = p / q,  g = f(x) / f(y)
/// ```
///
/// where `a(x, y)` are the genome-level mutation rates. The value is `<= 0`
/// and vanishes only at `p = q`. It is `-inf` when some genome with zero mass
/// is fed by a genome with positive mass.
pub fn relative_entropy_rate_mutation(p: &Distribution, mutation: &MutationModel) -> Result<f64> {
    mutation.check_distribution(p)?;
    let spec = mutation.spec();
    let q = mutation.q_lambda().probs();
    let f: Vec<f64> = p.probs().iter().zip(q).map(|(a, b)| a / b).collect();
    let k = spec.k();
    let mut total = 0.0;
    for (pos, alpha) in mutation.sites().iter().enumerate() {
        let stride = spec.stride(pos);
        for x in 0..spec.size() {
            let a = (x / stride) % k;
            let base = x - a * stride;
            for b in (0..k).filter(|&b| b != a) {
                let y = base + b * stride;
                let weight = q[x] * alpha.rate(a, b);
                if weight == 0.0 {
                    continue;
                }
                if f[y] == 0.0 {
                    if f[x] > 0.0 {
                        return Ok(f64::NEG_INFINITY);
                    }
                    continue;
                }
                total += weight * f[y] * log_excess(f[x] / f[y]);
            }
        }
    }
    Ok(-total)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Lemma1Report {
    /// `D(mu P | mu_hat)`.
    pub lhs: f64,
    /// `D(mu | mu_hat)`.
    pub rhs: f64,
    pub slack: f64,
    pub passed: bool,
}

/// Checks `D(mu P | mu_hat) <= D(mu | mu_hat)` for a stochastic matrix `P`
/// with strictly positive invariant law `mu_hat`.
pub fn verify_lemma1(
    p: &StochasticMatrix,
    mu_hat: &Distribution,
    mu: &Distribution,
) -> Result<Lemma1Report> {
    if mu_hat.len() != p.size() || mu.len() != p.size() {
        return Err(Error::validation("matrix and distributions have different sizes"));
    }
    if mu_hat.min() <= 0.0 {
        return Err(Error::Precondition("invariant law must be strictly positive".into()));
    }
    if p.max_row_defect() > 1e-12 {
        return Err(Error::Precondition("matrix is not row-stochastic".into()));
    }
    let moved_hat = p.left_multiply(mu_hat.probs())?;
    let defect = moved_hat
        .iter()
        .zip(mu_hat.probs())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if defect > INVARIANCE_TOL {
        return Err(Error::Precondition(format!(
            "mu_hat is not invariant under P (defect {defect:e})"
        )));
    }
    let moved = Distribution::new(mu.k(), mu.sites(), p.left_multiply(mu.probs())?)?;
    let lhs = relative_entropy(&moved, mu_hat)?;
    let rhs = relative_entropy(mu, mu_hat)?;
    let slack = rhs - lhs;
    Ok(Lemma1Report {
        lhs,
        rhs,
        slack,
        passed: slack >= -INEQUALITY_TOL,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntropyChainReport {
    /// `sum ln mu_hat (mu P)`.
    pub cross_after: f64,
    /// `sum ln mu_hat mu`.
    pub cross_before: f64,
    pub cross_residual: f64,
    /// Negative entropy of `mu P`.
    pub h_after: f64,
    /// Negative entropy of `mu`.
    pub h_before: f64,
    /// `h_before - h_after`, non-negative when the inequality holds.
    pub h_slack: f64,
    /// Largest change of the `I` and complement marginals under `P`.
    pub marginal_defect: f64,
    pub passed: bool,
}

/// Checks, for the recombination kernel `P` on `I`: the cross entropy against
/// `mu_hat = mu_{-I} mu_I` is unchanged by `P`, the negative entropy does not
/// increase, and both marginals are preserved.
pub fn verify_entropy_chain(
    mu: &Distribution,
    mask: SubsetMask,
    rec: &RecombinationModel,
    dt: f64,
) -> Result<EntropyChainReport> {
    if !rec.certifiable() {
        return Err(Error::Precondition(
            "entropy inequalities are only certified for symmetric similarity".into(),
        ));
    }
    let spec = rec.spec();
    let p = rec.transition_matrix(mu, mask, dt)?;
    let hat = split_product(spec, mu, mask)?;
    let moved = p.left_multiply(mu.probs())?;

    let cross = |w: &[f64]| -> f64 {
        w.iter()
            .zip(hat.probs())
            .filter(|(&m, _)| m > 0.0)
            .map(|(&m, &h)| m * h.ln())
            .sum()
    };
    let cross_after = cross(&moved);
    let cross_before = cross(mu.probs());
    let cross_residual = (cross_after - cross_before).abs();

    let moved_dist = Distribution::from_raw(spec.k(), spec.n(), moved);
    let h_after = neg_entropy(&moved_dist);
    let h_before = neg_entropy(mu);
    let h_slack = h_before - h_after;

    let marginal_defect = [mask, mask.complement()]
        .into_iter()
        .map(|m| {
            let proj = Projection::new(spec, m);
            let before = marginal_table(mu.probs(), &proj);
            let after = marginal_table(moved_dist.probs(), &proj);
            before
                .iter()
                .zip(&after)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max);

    Ok(EntropyChainReport {
        cross_after,
        cross_before,
        cross_residual,
        h_after,
        h_before,
        h_slack,
        marginal_defect,
        passed: cross_residual < CROSS_ENTROPY_TOL
            && h_slack >= -INEQUALITY_TOL
            && marginal_defect < MARGINAL_TOL,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotonicityReport {
    pub passed: bool,
    /// Largest increase of `D` between consecutive records (0 if none).
    pub max_increase: f64,
    /// Record index at which the largest increase ends.
    pub at_record: Option<usize>,
    pub budget: f64,
    /// Whether `D` strictly decreases between all records where it is above
    /// rounding level.
    pub strictly_decreasing: bool,
}

/// Audits that `D(mu(t) | q)` never increases beyond the noise budget.
pub fn lyapunov_monotonicity_audit(traj: &TrajectoryRecord) -> MonotonicityReport {
    let budget = AUDIT_BUDGET * (traj.dt / AUDIT_REFERENCE_DT);
    let mut max_increase = 0.0;
    let mut at_record = None;
    let mut strictly_decreasing = true;
    for (j, w) in traj.relative_entropy.windows(2).enumerate() {
        let inc = w[1] - w[0];
        if inc > max_increase {
            max_increase = inc;
            at_record = Some(j + 1);
        }
        if w[0] > 1e-13 && w[1] >= w[0] {
            strictly_decreasing = false;
        }
    }
    MonotonicityReport {
        passed: max_increase <= budget,
        max_increase,
        at_record,
        budget,
        strictly_decreasing,
    }
}
