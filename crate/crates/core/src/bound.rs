//! Deterministic regret analysis of the mixture.
//!
//! The guarantee is built from a per-step potential argument. With the
//! comparator weights `u = [beta, 1 - beta]`, the algorithm weights
//! `w(t) = [lambda(t), 1 - lambda(t)]` and `d` the Kullback-Leibler
//! divergence, every unclipped step satisfies
//!
//! ```text
//! a * e(t)^2 - b * e_beta(t)^2 <= d(u, w(t)) - d(u, w(t+1))
//! ```
//!
//! for the constants produced by [`derive_constants`]. Summing over `t`
//! gives `L_n(mixture) <= (b/a) L_n(beta) + d(u, w(1)) / a` for every
//! prefix `n` and every fixed `beta`.
//!
//! This module materializes the constants, audits the inequality step by
//! step on recorded runs, checks the telescoped bound, and evaluates the
//! intermediate quantities of the argument (the majorant `G` and the
//! quadratic `H(k)`) as well as the two necessity instances that show the
//! constants cannot be improved within this potential.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hindsight::ComparatorSums;
use crate::mixture::{combine, multiplicative_step, MixtureConfig, MixtureState, SampleRecord, Update};
use crate::run::Trace;

/// Per-step slack tolerance.
pub const STEP_TOLERANCE: f64 = 1e-9;
/// Tolerance on telescoped sums.
pub const REGRET_TOLERANCE: f64 = 1e-6;
/// Relative tolerance on closed-form constant identities.
pub const CONSTANTS_TOLERANCE: f64 = 1e-12;

/// Number of points kept in decimated gap trajectories.
pub const GAP_POINTS: usize = 256;

/// Constants of the regret guarantee for a given `epsilon`, `Y` and
/// `lambda_plus`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoremConstants {
    pub epsilon: f64,
    pub y_bound: f64,
    pub lambda_plus: f64,
    /// `(1 - 4 k) / (1 + 4 k)` with `k = lambda_plus (1 - lambda_plus)`.
    pub z: f64,
    /// `Y^2 / 2 + 1 / (4 b)`.
    pub s: f64,
    pub a: f64,
    pub b: f64,
    pub mu: f64,
    /// Multiplier on the comparator loss, `b / a = (2 eps + 1) / (1 - z^2)`.
    pub regret_slope: f64,
    /// Additive term `ln 2 / a`, the largest `d(u, w(1)) / a` from the
    /// uniform start `lambda(1) = 1/2`.
    pub regret_offset: f64,
}

/// Evaluates the constants and cross-checks the two expressions for the
/// learning rate.
pub fn derive_constants(epsilon: f64, y_bound: f64, lambda_plus: f64) -> Result<TheoremConstants> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::field("epsilon", format!("must be positive, got {epsilon}")));
    }
    if !(y_bound.is_finite() && y_bound > 0.0) {
        return Err(Error::field("y_bound", format!("must be positive, got {y_bound}")));
    }
    if !(lambda_plus > 0.0 && lambda_plus < 0.5) {
        return Err(Error::field(
            "lambda_plus",
            format!("must lie in (0, 1/2), got {lambda_plus}"),
        ));
    }
    let y2 = y_bound * y_bound;
    let corner = lambda_plus * (1.0 - lambda_plus);
    // 1 - 4k = (1 - 2 lambda_plus)^2, which stays accurate near 1/2.
    let z = (1.0 - 2.0 * lambda_plus).powi(2) / (1.0 + 4.0 * corner);
    let one_minus_z2 = (1.0 - z) * (1.0 + z);
    let b = epsilon / y2;
    let a = one_minus_z2 * epsilon / (y2 * (2.0 * epsilon + 1.0));
    let s = y2 / 2.0 + 1.0 / (4.0 * b);

    let mu_closed = 4.0 * epsilon / (2.0 * epsilon + 1.0) * (2.0 + 2.0 * z) / y2;
    let mu_roots = largest_learning_rate(a, s)?;
    // sqrt(1 - 4as) loses about eps_mach / z in relative terms as z -> 0.
    let tol = CONSTANTS_TOLERANCE + 8.0 * f64::EPSILON / z.max(f64::MIN_POSITIVE);
    if ((mu_roots - mu_closed) / mu_closed).abs() > tol {
        return Err(Error::InvalidConstants(format!(
            "learning-rate forms disagree: {mu_closed} vs {mu_roots}"
        )));
    }

    Ok(TheoremConstants {
        epsilon,
        y_bound,
        lambda_plus,
        z,
        s,
        a,
        b,
        mu: mu_closed,
        regret_slope: (2.0 * epsilon + 1.0) / one_minus_z2,
        regret_offset: std::f64::consts::LN_2 / a,
    })
}

/// `(2 + 2 sqrt(1 - 4as)) / s`: the largest rate keeping the upper root of
/// `H` at or above `1/4`.
pub fn largest_learning_rate(a: f64, s: f64) -> Result<f64> {
    Ok((2.0 + 2.0 * discriminant_root(a, s)?) / s)
}

fn discriminant_root(a: f64, s: f64) -> Result<f64> {
    let disc = (-4.0 * a).mul_add(s, 1.0);
    if disc < -CONSTANTS_TOLERANCE {
        return Err(Error::InvalidConstants(format!(
            "1 - 4as = {disc} is negative (a = {a}, s = {s})"
        )));
    }
    Ok(disc.max(0.0).sqrt())
}

impl TheoremConstants {
    /// `lambda_plus (1 - lambda_plus)`, the smallest reachable `lambda (1 - lambda)`.
    pub fn corner_curvature(&self) -> f64 {
        self.lambda_plus * (1.0 - self.lambda_plus)
    }

    /// Mixture configuration running at the derived learning rate.
    pub fn mixture_config(&self) -> Result<MixtureConfig> {
        MixtureConfig::new(self.y_bound, self.lambda_plus, self.mu)
    }

    /// Normalized additive term of the bound at horizon `n`,
    /// `Y^2 (2 eps + 1) ln 2 / (n eps (1 - z^2))`.
    pub fn additive_term(&self, n: usize) -> f64 {
        self.regret_offset / n as f64
    }

    /// `H(k) = k^2 mu^2 s - mu k + a`.
    pub fn quadratic(&self, k: f64) -> f64 {
        let mk = self.mu * k;
        mk * mk * self.s - mk + self.a
    }
}

/// The `epsilon` whose derived learning rate equals `mu`, if any.
///
/// The derived rate is `4 eps / (2 eps + 1) * (2 + 2z) / Y^2`, increasing in
/// `eps` with supremum `2 (2 + 2z) / Y^2`; rates at or above it have no
/// matching `epsilon`.
pub fn epsilon_for_learning_rate(mu: f64, y_bound: f64, lambda_plus: f64) -> Option<f64> {
    if !(mu > 0.0 && y_bound > 0.0 && lambda_plus > 0.0 && lambda_plus < 0.5) {
        return None;
    }
    let corner = lambda_plus * (1.0 - lambda_plus);
    let z = (1.0 - 2.0 * lambda_plus).powi(2) / (1.0 + 4.0 * corner);
    let c = mu * y_bound * y_bound / (2.0 + 2.0 * z);
    (c < 2.0).then(|| c / (4.0 - 2.0 * c))
}

/// `d(u, w) = sum_i u_i ln(u_i / w_i)` on the 2-simplex, with `0 ln 0 = 0`.
pub fn kl_divergence(u: [f64; 2], w: [f64; 2]) -> Result<f64> {
    for (name, p) in [("u", u), ("w", w)] {
        if p.iter().any(|&x| !(0.0..=1.0).contains(&x)) || (p[0] + p[1] - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("{name} = {p:?} is not on the 2-simplex")));
        }
    }
    let mut total = 0.0;
    for (ui, wi) in u.into_iter().zip(w) {
        if ui == 0.0 {
            continue;
        }
        if wi == 0.0 {
            return Err(Error::InfiniteDivergence { mass: ui });
        }
        total += ui * (ui / wi).ln();
    }
    Ok(total.max(0.0))
}

fn comparator(beta: f64) -> [f64; 2] {
    [beta, 1.0 - beta]
}

/// Per-step audit of the progress inequality for one comparator weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepAudit {
    pub t: u64,
    pub beta: f64,
    /// `exp(mu e(t) lambda(t) (1 - lambda(t)))`.
    pub zeta: f64,
    pub kl_before: f64,
    pub kl_after: f64,
    /// `a e(t)^2 - b e_beta(t)^2`.
    pub lhs: f64,
    /// `kl_before - kl_after`, against the stored post-step state.
    pub progress: f64,
    /// `progress - lhs`.
    pub slack: f64,
    /// Slack against the pre-projection weight. Equal to `slack` when the
    /// step was not clipped.
    pub unclipped_slack: f64,
    pub clipped: bool,
}

impl StepAudit {
    /// Whether the step violates the inequality. Clipped steps are outside
    /// the scope of the guarantee and never count.
    pub fn is_violation(&self) -> bool {
        !self.clipped && self.slack < -STEP_TOLERANCE
    }
}

/// `beta ln(l1 / l0) + (1 - beta) ln((1 - l1) / (1 - l0))`, the KL decrease
/// written without subtracting two divergences.
fn kl_progress(beta: f64, before: f64, after: f64) -> f64 {
    let mut total = 0.0;
    if beta > 0.0 {
        total += beta * (after.ln() - before.ln());
    }
    if beta < 1.0 {
        total += (1.0 - beta) * ((1.0 - after).ln() - (1.0 - before).ln());
    }
    total
}

fn check_step(before: &MixtureState, update: &Update, rec: &SampleRecord) -> Result<()> {
    before.check_consistency(CONSTANTS_TOLERANCE)?;
    update.state.check_consistency(CONSTANTS_TOLERANCE)?;
    let expected = combine(before, rec.yhat1, rec.yhat2);
    let scale = rec.yhat1.abs().max(rec.yhat2.abs()).max(1.0);
    if (expected - rec.yhat).abs() > CONSTANTS_TOLERANCE * scale {
        return Err(Error::Integrity(format!(
            "step {}: recorded yhat {} but lambda {} gives {expected}",
            rec.t, rec.yhat, before.lambda
        )));
    }
    if (rec.y - rec.yhat - rec.e).abs() > CONSTANTS_TOLERANCE * scale {
        return Err(Error::Integrity(format!("step {}: e != y - yhat", rec.t)));
    }
    Ok(())
}

/// Evaluates both sides of the progress inequality for one step.
pub fn audit_step(
    before: &MixtureState,
    update: &Update,
    rec: &SampleRecord,
    beta: f64,
    consts: &TheoremConstants,
) -> Result<StepAudit> {
    check_step(before, update, rec)?;
    Ok(audit_unchecked(before, update, rec, beta, consts))
}

fn audit_unchecked(
    before: &MixtureState,
    update: &Update,
    rec: &SampleRecord,
    beta: f64,
    consts: &TheoremConstants,
) -> StepAudit {
    let lambda = before.lambda;
    let after = update.state.lambda;
    let u = comparator(beta);
    let e_beta = rec.y - (beta * rec.yhat1 + (1.0 - beta) * rec.yhat2);
    let lhs = consts.a * rec.e * rec.e - consts.b * e_beta * e_beta;
    let progress = kl_progress(beta, lambda, after);
    let unclipped_progress = kl_progress(beta, lambda, update.unclipped_lambda);
    StepAudit {
        t: rec.t,
        beta,
        zeta: (consts.mu * rec.e * lambda * (1.0 - lambda)).exp(),
        kl_before: kl_divergence(u, before.weights()).unwrap_or(f64::INFINITY),
        kl_after: kl_divergence(u, update.state.weights()).unwrap_or(f64::INFINITY),
        lhs,
        progress,
        slack: progress - lhs,
        unclipped_slack: unclipped_progress - lhs,
        clipped: update.clipped,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditSummary {
    pub steps: usize,
    pub clipped_steps: usize,
    /// Number of (step, beta) pairs checked on unclipped steps.
    pub checks: usize,
    /// Smallest slack over unclipped steps; `+inf` if there were none.
    pub min_slack: f64,
    /// `max(0, -min_slack)`.
    pub max_slack_violation: f64,
    /// Pairs with slack below `-STEP_TOLERANCE`.
    pub violations: usize,
    pub worst: Option<StepAudit>,
}

impl AuditSummary {
    pub fn holds(&self) -> bool {
        self.violations == 0
    }
}

/// Audits every step of a trace against every weight in `betas`.
pub fn audit_trace(trace: &Trace, consts: &TheoremConstants, betas: &[f64]) -> Result<AuditSummary> {
    let mut summary = AuditSummary {
        steps: trace.len(),
        clipped_steps: trace.clip_events(),
        checks: 0,
        min_slack: f64::INFINITY,
        max_slack_violation: 0.0,
        violations: 0,
        worst: None,
    };
    for (i, rec) in trace.records.iter().enumerate() {
        let before = &trace.states[i];
        let update = Update {
            state: trace.states[i + 1],
            unclipped_lambda: trace.unclipped_lambda[i],
            clipped: trace.clipped[i],
        };
        check_step(before, &update, rec)?;
        if update.clipped {
            continue;
        }
        for &beta in betas {
            let audit = audit_unchecked(before, &update, rec, beta, consts);
            summary.checks += 1;
            if audit.is_violation() {
                summary.violations += 1;
            }
            if audit.slack < summary.min_slack {
                summary.min_slack = audit.slack;
                summary.worst = Some(audit);
            }
        }
    }
    summary.max_slack_violation = (-summary.min_slack).max(0.0);
    Ok(summary)
}

/// Default comparator grid `{0, 0.1, ..., 1}`.
pub fn default_audit_betas() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

/// One point of the normalized regret trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapPoint {
    pub n: usize,
    /// `L_n(mixture)/n - slope * L_n(beta*)/n`.
    pub normalized_gap: f64,
    /// `d(u*, w(1)) / (a n)`.
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretReport {
    pub n: usize,
    pub beta_star: f64,
    /// `d(u*, w(1))` for `u* = [beta*, 1 - beta*]`.
    pub initial_divergence: f64,
    pub slope: f64,
    /// `d(u*, w(1)) / a`.
    pub offset: f64,
    /// Largest `L_n(mixture) - slope L_n(beta*) - offset` over all prefixes.
    pub max_violation: f64,
    /// Largest normalized excess over the uniform-start bound, using the
    /// minimizing weight of each prefix:
    /// `(L_n(mixture) - slope min_beta L_n(beta) - cap / a) / n` with
    /// `cap = max_u d(u, w(1))`.
    pub max_headline_violation: f64,
    pub clip_events: usize,
    pub holds: bool,
    pub gap_by_n: Vec<GapPoint>,
}

/// Checks the telescoped bound on every prefix of a run against the fixed
/// comparator `beta_star`.
pub fn verify_regret_bound(trace: &Trace, beta_star: f64, consts: &TheoremConstants) -> Result<RegretReport> {
    if trace.is_empty() {
        return Err(Error::invalid("cannot verify an empty run"));
    }
    let start = trace.states[0].weights();
    let initial_divergence = kl_divergence(comparator(beta_star), start)?;
    let offset = initial_divergence / consts.a;
    let cap = -start[0].min(start[1]).ln();
    let slope = consts.regret_slope;

    let n_total = trace.len();
    let stride = n_total.div_ceil(GAP_POINTS).max(1);
    let mut loss_mixture = 0.0;
    let mut loss_fixed = 0.0;
    let mut sums = ComparatorSums::default();
    let mut max_violation = f64::NEG_INFINITY;
    let mut max_headline = f64::NEG_INFINITY;
    let mut gap_by_n = Vec::with_capacity(GAP_POINTS + 1);

    for (i, rec) in trace.records.iter().enumerate() {
        let n = i + 1;
        loss_mixture += rec.e * rec.e;
        let e_fixed = rec.y - (beta_star * rec.yhat1 + (1.0 - beta_star) * rec.yhat2);
        loss_fixed += e_fixed * e_fixed;
        sums.push(rec.y, rec.yhat1, rec.yhat2);

        max_violation = max_violation.max(loss_mixture - slope * loss_fixed - offset);
        let headline = (loss_mixture - slope * sums.min_loss() - cap / consts.a) / n as f64;
        max_headline = max_headline.max(headline);

        if n % stride == 0 || n == n_total {
            gap_by_n.push(GapPoint {
                n,
                normalized_gap: (loss_mixture - slope * loss_fixed) / n as f64,
                bound: offset / n as f64,
            });
        }
    }

    Ok(RegretReport {
        n: n_total,
        beta_star,
        initial_divergence,
        slope,
        offset,
        max_violation,
        max_headline_violation: max_headline,
        clip_events: trace.clip_events(),
        holds: max_violation <= REGRET_TOLERANCE,
        gap_by_n,
    })
}

/// Majorant of the per-step deficit used in the analysis:
///
/// `G = -(yb + Y) ln z + (yh + Y) ln z + Y^2 (ln z)^2 / 2 + a (y - yh)^2 - b (y - yb)^2`
///
/// where `yh` is the mixture output, `yb` the comparator output and `z = zeta`.
pub fn majorant(y: f64, yhat: f64, yhat_beta: f64, zeta: f64, consts: &TheoremConstants) -> f64 {
    let big_y = consts.y_bound;
    let lz = zeta.ln();
    -(yhat_beta + big_y) * lz + (yhat + big_y) * lz + big_y * big_y * lz * lz / 2.0
        + consts.a * (y - yhat).powi(2)
        - consts.b * (y - yhat_beta).powi(2)
}

/// Comparator output maximizing [`majorant`]: `y - ln(zeta) / (2b)`.
pub fn majorant_maximizer(y: f64, zeta: f64, consts: &TheoremConstants) -> f64 {
    y - zeta.ln() / (2.0 * consts.b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticDiagnostics {
    /// Upper root of `H`.
    pub k1: f64,
    /// Lower root of `H`.
    pub k2: f64,
    /// `lambda_plus (1 - lambda_plus)`.
    pub corner: f64,
    pub h_at_corner: f64,
    pub h_at_quarter: f64,
    /// `k1 >= 1/4` and `k2 <= corner`, i.e. `H <= 0` on the reachable range.
    pub covers_interval: bool,
}

/// Roots of `H(k) = k^2 mu^2 s - mu k + a` and its values at the ends of
/// `[lambda_plus (1 - lambda_plus), 1/4]`.
pub fn quadratic_diagnostics(consts: &TheoremConstants) -> Result<QuadraticDiagnostics> {
    let root = discriminant_root(consts.a, consts.s)?;
    let denom = 2.0 * consts.mu * consts.s;
    let k1 = (1.0 + root) / denom;
    let k2 = (1.0 - root) / denom;
    let corner = consts.corner_curvature();
    let tol = CONSTANTS_TOLERANCE;
    Ok(QuadraticDiagnostics {
        k1,
        k2,
        corner,
        h_at_corner: consts.quadratic(corner),
        h_at_quarter: consts.quadratic(0.25),
        covers_interval: k1 >= 0.25 * (1.0 - tol) && k2 <= corner * (1.0 + tol),
    })
}

/// One necessity instance: a single mixture step on hand-picked inputs with
/// both sides of the progress inequality evaluated exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LemmaInstance {
    pub y: f64,
    pub yhat1: f64,
    pub yhat2: f64,
    pub beta: f64,
    pub lambda: f64,
    pub next_lambda: f64,
    /// `a e^2 - b e_beta^2`.
    pub lhs: f64,
    /// KL progress towards `[beta, 1 - beta]`.
    pub rhs: f64,
    /// Jensen upper bound on `rhs` used to derive the necessary condition.
    pub rhs_jensen_bound: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub a: f64,
    pub b: f64,
    pub mu: f64,
    pub lambda_plus: f64,
    pub y_bound: f64,
    /// `y = yhat1 = Y`, `yhat2 = 0`, `beta = 1`, `lambda = lambda_plus`.
    pub instance1: LemmaInstance,
    /// `yhat1 = Y`, `y = yhat2 = 0`, `beta = 1`, `lambda = 1/2`.
    pub instance2: LemmaInstance,
    /// `mu >= a / (lambda_plus (1 - lambda_plus))`.
    pub rate_condition: bool,
    /// `b >= a/4 + mu/16`.
    pub margin_condition: bool,
    /// `b >= a/4 + a / (16 lambda_plus (1 - lambda_plus))`.
    pub combined_condition: bool,
    /// `b >= a/4 + 1 / (16 lambda_plus (1 - lambda_plus))`, the variant
    /// without the factor `a`; reported for comparison only.
    pub unscaled_condition: bool,
}

impl LemmaReport {
    /// Both instances satisfy the progress inequality.
    pub fn consistent(&self) -> bool {
        self.instance1.holds && self.instance2.holds
    }
}

fn lemma_instance(
    a: f64,
    b: f64,
    mu: f64,
    (y, yhat1, yhat2): (f64, f64, f64),
    beta: f64,
    lambda: f64,
    rhs_jensen_bound: f64,
) -> Result<LemmaInstance> {
    let state = MixtureState::from_lambda(lambda)?;
    let rec = SampleRecord::observe(&state, y, yhat1, yhat2);
    let next = multiplicative_step(&state, mu, &rec);
    let e_beta = y - (beta * yhat1 + (1.0 - beta) * yhat2);
    let lhs = a * rec.e * rec.e - b * e_beta * e_beta;
    let rhs = kl_progress(beta, lambda, next.lambda);
    Ok(LemmaInstance {
        y,
        yhat1,
        yhat2,
        beta,
        lambda,
        next_lambda: next.lambda,
        lhs,
        rhs,
        rhs_jensen_bound,
        holds: lhs <= rhs + CONSTANTS_TOLERANCE * (1.0 + lhs.abs()),
    })
}

/// Evaluates the two instances that any universally valid `(a, b, mu)`
/// must satisfy, and the conditions they imply.
pub fn lemma_necessity_check(a: f64, b: f64, mu: f64, lambda_plus: f64, y_bound: f64) -> Result<LemmaReport> {
    if !(a.is_finite() && a >= 0.0) {
        return Err(Error::field("a", format!("must be non-negative, got {a}")));
    }
    if !(b.is_finite() && b > 0.0) {
        return Err(Error::field("b", format!("must be positive, got {b}")));
    }
    if !(mu.is_finite() && mu > 0.0) {
        return Err(Error::field("mu", format!("must be positive, got {mu}")));
    }
    if !(lambda_plus > 0.0 && lambda_plus < 0.5) {
        return Err(Error::field("lambda_plus", format!("must lie in (0, 1/2), got {lambda_plus}")));
    }
    if !(y_bound.is_finite() && y_bound > 0.0) {
        return Err(Error::field("y_bound", format!("must be positive, got {y_bound}")));
    }
    let big_y = y_bound;
    let corner = lambda_plus * (1.0 - lambda_plus);

    let instance1 = lemma_instance(
        a,
        b,
        mu,
        (big_y, big_y, 0.0),
        1.0,
        lambda_plus,
        mu * (1.0 - lambda_plus).powi(3) * lambda_plus * big_y * big_y,
    )?;
    let instance2 = lemma_instance(a, b, mu, (0.0, big_y, 0.0), 1.0, 0.5, -mu * big_y * big_y / 16.0)?;

    Ok(LemmaReport {
        a,
        b,
        mu,
        lambda_plus,
        y_bound,
        instance1,
        instance2,
        rate_condition: mu >= a / corner,
        margin_condition: b >= a / 4.0 + mu / 16.0,
        combined_condition: b >= a / 4.0 + a / (16.0 * corner),
        unscaled_condition: b >= a / 4.0 + 1.0 / (16.0 * corner),
    })
}
