//! End-to-end experiment pipeline behind the `cmix` binary.
//!
//! A run generates (or reads) a bounded signal, feeds it to two constituent
//! filters, mixes their outputs, and then audits the recorded trajectory:
//! per-step progress inequality, telescoped regret bound, best convex
//! weight in hindsight. Results go to a CSV trace and a JSON report.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bound::{
    audit_trace, default_audit_betas, derive_constants, epsilon_for_learning_rate, quadratic_diagnostics,
    verify_regret_bound, AuditSummary, GapPoint, QuadraticDiagnostics, RegretReport, TheoremConstants,
};
use crate::error::{Error, Result};
use crate::filters::{DelayLine, Filter, FilterKind, FilterSpec};
use crate::hindsight::{hindsight_with_mixture, HindsightResult};
use crate::mixture::{update_lambda_direct, update_rho, MixtureConfig, MixtureState, SampleRecord, Update, UpdateRule};
use crate::run::{run_mixture, Trace};
use crate::signals::{generate, SignalKind, SignalSpec};

/// Header of the per-step trace CSV.
pub const TRACE_HEADER: [&str; 10] = [
    "t",
    "y",
    "yhat1",
    "yhat2",
    "lambda",
    "yhat",
    "e",
    "cum_loss",
    "cum_loss_beta_star",
    "clipped",
];

/// Header of the sweep summary CSV.
pub const SWEEP_HEADER: [&str; 6] = [
    "epsilon",
    "lambda_plus",
    "mu",
    "final_regret_gap",
    "bound_rhs",
    "clip_events",
];

/// Learning rate source: either derived from `epsilon`, or given directly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateChoice {
    Epsilon(f64),
    Mu(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub signal: SignalSpec,
    pub filters: [FilterKind; 2],
    pub y_bound: f64,
    pub lambda_plus: f64,
    #[serde(default = "default_initial_lambda")]
    pub initial_lambda: f64,
    pub rate: RateChoice,
    #[serde(default = "default_audit_betas")]
    pub audit_betas: Vec<f64>,
    #[serde(default)]
    pub rule: UpdateRule,
    /// Trace CSV whose `y,yhat1,yhat2` columns are replayed instead of
    /// running the filters.
    #[serde(default)]
    pub replay: Option<PathBuf>,
}

fn default_initial_lambda() -> f64 {
    0.5
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            signal: SignalSpec::new(SignalKind::logistic(), 10_000, 1, 1.0),
            filters: [
                FilterKind::Nlms { step_size: 0.5, order: 4 },
                FilterKind::DelayedCopy,
            ],
            y_bound: 1.0,
            lambda_plus: 0.25,
            initial_lambda: 0.5,
            rate: RateChoice::Epsilon(1.0),
            audit_betas: default_audit_betas(),
            rule: UpdateRule::Gradient,
            replay: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_reader(file).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.y_bound.is_finite() && self.y_bound > 0.0) {
            return Err(Error::field("y_bound", format!("must be positive, got {}", self.y_bound)));
        }
        if self.audit_betas.iter().any(|b| !(0.0..=1.0).contains(b)) {
            return Err(Error::field("audit_betas", "every weight must lie in [0, 1]"));
        }
        match self.rate {
            RateChoice::Epsilon(eps) if !(eps.is_finite() && eps > 0.0) => {
                return Err(Error::field("epsilon", format!("must be positive, got {eps}")))
            }
            RateChoice::Mu(mu) if !(mu.is_finite() && mu > 0.0) => {
                return Err(Error::field("mu", format!("must be positive, got {mu}")))
            }
            _ => {}
        }
        self.mixture_config()?;
        if self.replay.is_none() {
            self.signal.validate(self.y_bound)?;
            for kind in &self.filters {
                FilterSpec::new(kind.clone(), self.y_bound)?;
            }
        }
        Ok(())
    }

    /// Constants of the guarantee, when the learning rate corresponds to
    /// some `epsilon`.
    pub fn constants(&self) -> Result<Option<TheoremConstants>> {
        let eps = match self.rate {
            RateChoice::Epsilon(eps) => Some(eps),
            RateChoice::Mu(mu) => epsilon_for_learning_rate(mu, self.y_bound, self.lambda_plus),
        };
        eps.map(|eps| derive_constants(eps, self.y_bound, self.lambda_plus))
            .transpose()
    }

    pub fn learning_rate(&self) -> Result<f64> {
        match self.rate {
            RateChoice::Mu(mu) => Ok(mu),
            RateChoice::Epsilon(eps) => Ok(derive_constants(eps, self.y_bound, self.lambda_plus)?.mu),
        }
    }

    pub fn mixture_config(&self) -> Result<MixtureConfig> {
        MixtureConfig::new(self.y_bound, self.lambda_plus, self.learning_rate()?)?
            .with_initial_lambda(self.initial_lambda)
    }
}

/// Produces the `(y, yhat1, yhat2)` triples a run mixes.
pub fn constituent_samples(cfg: &ExperimentConfig) -> Result<Vec<(f64, f64, f64)>> {
    if let Some(path) = &cfg.replay {
        let mut triples = read_replay_csv(path)?;
        if cfg.signal.length > 0 && !matches!(cfg.signal.kind, SignalKind::Csv { .. }) {
            triples.truncate(cfg.signal.length);
        }
        return Ok(triples);
    }
    let ys = generate(&cfg.signal, cfg.y_bound)?;
    let mut filters = cfg
        .filters
        .iter()
        .map(|k| Filter::new(FilterSpec::new(k.clone(), cfg.y_bound)?))
        .collect::<Result<Vec<_>>>()?;
    let orders: Vec<usize> = filters.iter().map(|f| f.spec().order()).collect();
    let mut line = DelayLine::new(orders.iter().copied().max().unwrap_or(0));
    let mut out = Vec::with_capacity(ys.len());
    for &y in &ys {
        let a = filters[0].step(line.window(orders[0]), y)?;
        let b = filters[1].step(line.window(orders[1]), y)?;
        out.push((y, a, b));
        line.push(y);
    }
    Ok(out)
}

/// Everything computed for one run.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub mixture: MixtureConfig,
    pub trace: Trace,
    pub constants: Option<TheoremConstants>,
    pub hindsight: HindsightResult,
    pub audit: Option<AuditSummary>,
    pub regret: Option<RegretReport>,
    pub quadratic: Option<QuadraticDiagnostics>,
}

impl Experiment {
    /// A per-step violation on an unclipped step, or a telescoped-bound
    /// violation on a run without clip events.
    pub fn violation_detected(&self) -> bool {
        let step = self.audit.as_ref().is_some_and(|a| !a.holds());
        let regret = self
            .regret
            .as_ref()
            .is_some_and(|r| r.clip_events == 0 && !r.holds);
        step || regret
    }

    pub fn report(&self) -> RunReport {
        RunReport {
            n: self.trace.len(),
            mixture: self.mixture,
            constants: self.constants,
            hindsight: self.hindsight,
            max_slack_violation: self.audit.as_ref().map(|a| a.max_slack_violation),
            regret_gap_by_n: self
                .regret
                .as_ref()
                .map(|r| r.gap_by_n.clone())
                .unwrap_or_default(),
            clip_events: self.trace.clip_events(),
            audit: self.audit.clone(),
            regret: self.regret.as_ref().map(RegretSummary::from),
            quadratic: self.quadratic,
            violation_detected: self.violation_detected(),
        }
    }
}

/// Runs the full pipeline for one configuration.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Experiment> {
    cfg.validate()?;
    let mixture = cfg.mixture_config()?;
    let samples = constituent_samples(cfg)?;
    let trace = run_mixture(mixture, cfg.rule, samples)?;
    if trace.is_empty() {
        return Err(Error::field("steps", "the run produced no samples"));
    }
    let hindsight = hindsight_with_mixture(&trace.ys(), &trace.yhat1s(), &trace.yhat2s(), &trace.yhats())?;
    let constants = cfg.constants()?;
    let (audit, regret, quadratic) = match &constants {
        Some(c) => (
            Some(audit_trace(&trace, c, &audit_betas_with(&cfg.audit_betas, hindsight.beta_star))?),
            Some(verify_regret_bound(&trace, hindsight.beta_star, c)?),
            Some(quadratic_diagnostics(c)?),
        ),
        None => (None, None, None),
    };
    Ok(Experiment {
        config: cfg.clone(),
        mixture,
        trace,
        constants,
        hindsight,
        audit,
        regret,
        quadratic,
    })
}

fn audit_betas_with(betas: &[f64], beta_star: f64) -> Vec<f64> {
    let mut all = betas.to_vec();
    if !all.contains(&beta_star) {
        all.push(beta_star);
    }
    all
}

/// The telescoped-bound check without its trajectory, which the report
/// carries separately under `regret_gap_by_n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegretSummary {
    pub beta_star: f64,
    pub initial_divergence: f64,
    pub slope: f64,
    pub offset: f64,
    pub max_violation: f64,
    pub max_headline_violation: f64,
    pub holds: bool,
}

impl From<&RegretReport> for RegretSummary {
    fn from(r: &RegretReport) -> Self {
        RegretSummary {
            beta_star: r.beta_star,
            initial_divergence: r.initial_divergence,
            slope: r.slope,
            offset: r.offset,
            max_violation: r.max_violation,
            max_headline_violation: r.max_headline_violation,
            holds: r.holds,
        }
    }
}

/// JSON report of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub n: usize,
    pub mixture: MixtureConfig,
    pub constants: Option<TheoremConstants>,
    pub hindsight: HindsightResult,
    pub max_slack_violation: Option<f64>,
    pub regret_gap_by_n: Vec<GapPoint>,
    pub clip_events: usize,
    pub audit: Option<AuditSummary>,
    pub regret: Option<RegretSummary>,
    pub quadratic: Option<QuadraticDiagnostics>,
    pub violation_detected: bool,
}

/// Formats a float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    serde_json::to_writer_pretty(&mut out, value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    out.write_all(b"\n").map_err(io_err)?;
    out.flush().map_err(io_err)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).map_err(|source| Error::Csv {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes the per-step trace of an experiment.
pub fn write_trace_csv(path: &Path, exp: &Experiment) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv_writer(path)?;
    w.write_record(TRACE_HEADER).map_err(csv_err)?;
    let beta = exp.hindsight.beta_star;
    let mut cum = 0.0;
    let mut cum_beta = 0.0;
    for (i, rec) in exp.trace.records.iter().enumerate() {
        cum += rec.e * rec.e;
        cum_beta += (rec.y - (beta * rec.yhat1 + (1.0 - beta) * rec.yhat2)).powi(2);
        w.write_record([
            rec.t.to_string(),
            fmt_f64(rec.y),
            fmt_f64(rec.yhat1),
            fmt_f64(rec.yhat2),
            fmt_f64(exp.trace.states[i].lambda),
            fmt_f64(rec.yhat),
            fmt_f64(rec.e),
            fmt_f64(cum),
            fmt_f64(cum_beta),
            u8::from(exp.trace.clipped[i]).to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// One row of a trace CSV.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct TraceRow {
    pub t: u64,
    pub y: f64,
    pub yhat1: f64,
    pub yhat2: f64,
    pub lambda: f64,
    pub yhat: f64,
    pub e: f64,
    pub cum_loss: f64,
    pub cum_loss_beta_star: f64,
    pub clipped: u8,
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<TraceRow>> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    let rows = reader
        .deserialize()
        .collect::<std::result::Result<Vec<TraceRow>, _>>()
        .map_err(csv_err)?;
    if rows.is_empty() {
        return Err(Error::field("input-csv", format!("{} holds no rows", path.display())));
    }
    Ok(rows)
}

/// Whether a CSV file has the `y,yhat1,yhat2` columns of a trace.
pub fn is_trace_csv(path: &Path) -> Result<bool> {
    let mut reader = csv::Reader::from_path(path).map_err(|source| Error::Csv {
        path: path.to_path_buf(),
        source,
    })?;
    let headers = reader.headers().map_err(|source| Error::Csv {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(["y", "yhat1", "yhat2"].iter().all(|h| headers.iter().any(|x| x == *h)))
}

/// Reads the `(y, yhat1, yhat2)` columns of a trace CSV.
pub fn read_replay_csv(path: &Path) -> Result<Vec<(f64, f64, f64)>> {
    #[derive(Deserialize)]
    struct Columns {
        y: f64,
        yhat1: f64,
        yhat2: f64,
    }
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    let rows = reader
        .deserialize()
        .map(|r| r.map(|c: Columns| (c.y, c.yhat1, c.yhat2)))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(csv_err)?;
    if rows.is_empty() {
        return Err(Error::field("input-csv", format!("{} holds no rows", path.display())));
    }
    Ok(rows)
}

/// Rebuilds a [`Trace`] from recorded rows, re-deriving each update from the
/// recorded weight. Fails if the recorded weights do not follow from the
/// given mixture settings.
pub fn trace_from_rows(rows: &[TraceRow], cfg: &MixtureConfig, rule: UpdateRule) -> Result<Trace> {
    let mut trace = Trace::default();
    let mut state = MixtureState::from_lambda(rows[0].lambda)?;
    trace.states.push(state);
    for (i, row) in rows.iter().enumerate() {
        let rec = SampleRecord {
            t: row.t,
            y: row.y,
            yhat1: row.yhat1,
            yhat2: row.yhat2,
            yhat: row.yhat,
            e: row.e,
        };
        let update: Update = match rule {
            UpdateRule::Gradient => update_rho(&state, cfg, &rec),
            UpdateRule::Multiplicative => update_lambda_direct(&state, cfg, &rec),
        };
        let next = match rows.get(i + 1) {
            Some(next_row) => {
                if (update.state.lambda - next_row.lambda).abs() > 1e-9 {
                    return Err(Error::Integrity(format!(
                        "row t={}: recorded next lambda {} but the update gives {}",
                        row.t, next_row.lambda, update.state.lambda
                    )));
                }
                MixtureState {
                    step_index: update.state.step_index,
                    ..MixtureState::from_lambda(next_row.lambda)?
                }
            }
            None => update.state,
        };
        trace.records.push(rec);
        trace.states.push(next);
        trace.clipped.push(update.clipped);
        trace.unclipped_lambda.push(update.unclipped_lambda);
        state = next;
    }
    Ok(trace)
}

/// Result of re-auditing a stored trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub n: usize,
    pub constants: TheoremConstants,
    pub hindsight: HindsightResult,
    pub max_slack_violation: f64,
    pub regret_gap_by_n: Vec<GapPoint>,
    pub clip_events: usize,
    pub audit: AuditSummary,
    pub regret: RegretSummary,
    pub violation_detected: bool,
}

/// Re-audits a trace CSV under the constants for `(epsilon, Y, lambda_plus)`.
pub fn verify_trace(
    path: &Path,
    constants: &TheoremConstants,
    rule: UpdateRule,
    betas: &[f64],
) -> Result<VerifyReport> {
    let rows = read_trace_csv(path)?;
    let first = rows[0].lambda;
    let cfg = MixtureConfig::new(constants.y_bound, constants.lambda_plus, constants.mu)?.with_initial_lambda(first)?;
    let trace = trace_from_rows(&rows, &cfg, rule)?;
    let hindsight = hindsight_with_mixture(&trace.ys(), &trace.yhat1s(), &trace.yhat2s(), &trace.yhats())?;
    let audit = audit_trace(&trace, constants, &audit_betas_with(betas, hindsight.beta_star))?;
    let regret = verify_regret_bound(&trace, hindsight.beta_star, constants)?;
    let violation_detected = !audit.holds() || (regret.clip_events == 0 && !regret.holds);
    Ok(VerifyReport {
        n: trace.len(),
        constants: *constants,
        hindsight,
        max_slack_violation: audit.max_slack_violation,
        regret_gap_by_n: regret.gap_by_n.clone(),
        clip_events: trace.clip_events(),
        audit,
        regret: RegretSummary::from(&regret),
        violation_detected,
    })
}

/// One cell of an `(epsilon, lambda_plus)` sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub lambda_plus: f64,
    pub mu: f64,
    /// `(2 eps + 1) / (1 - z^2)`.
    pub slope: f64,
    /// `L_n(mixture)/n - slope L_n(beta*)/n` at the end of the run.
    pub final_regret_gap: f64,
    /// Additive bound term `Y^2 (2 eps + 1) ln 2 / (n eps (1 - z^2))`.
    pub bound_rhs: f64,
    pub clip_events: usize,
    /// Per-step inequality violations on unclipped steps.
    pub step_violations: usize,
}

/// Runs `base` once per `(epsilon, lambda_plus)` pair, in parallel. Rows
/// come back in grid order, epsilon-major.
pub fn sweep(base: &ExperimentConfig, epsilons: &[f64], lambda_pluses: &[f64]) -> Result<Vec<SweepRow>> {
    if epsilons.is_empty() || lambda_pluses.is_empty() {
        return Err(Error::field("sweep", "parameter lists must be non-empty"));
    }
    let cells: Vec<(f64, f64)> = epsilons
        .iter()
        .flat_map(|&e| lambda_pluses.iter().map(move |&l| (e, l)))
        .collect();
    cells
        .par_iter()
        .map(|&(epsilon, lambda_plus)| {
            let cfg = ExperimentConfig {
                rate: RateChoice::Epsilon(epsilon),
                lambda_plus,
                ..base.clone()
            };
            let exp = run_experiment(&cfg)?;
            let consts = exp.constants.expect("epsilon-driven runs always have constants");
            let gap = exp
                .regret
                .as_ref()
                .and_then(|r| r.gap_by_n.last())
                .map_or(f64::NAN, |p| p.normalized_gap);
            Ok(SweepRow {
                epsilon,
                lambda_plus,
                mu: consts.mu,
                slope: consts.regret_slope,
                final_regret_gap: gap,
                bound_rhs: consts.additive_term(exp.trace.len()),
                clip_events: exp.trace.clip_events(),
                step_violations: exp.audit.as_ref().map_or(0, |a| a.violations),
            })
        })
        .collect()
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv_writer(path)?;
    w.write_record(SWEEP_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            fmt_f64(r.epsilon),
            fmt_f64(r.lambda_plus),
            fmt_f64(r.mu),
            fmt_f64(r.final_regret_gap),
            fmt_f64(r.bound_rhs),
            r.clip_events.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}
