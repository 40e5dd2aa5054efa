//! The convexly constrained mixture of two constituent estimates.
//!
//! The combination weight `lambda` is the logistic image of an auxiliary
//! variable `rho`. Each step emits `yhat = lambda * yhat1 + (1 - lambda) * yhat2`,
//! observes the error `e = y - yhat`, and moves `rho` along the negative
//! gradient of `e^2`. The same step can be written as a multiplicative
//! (exponentiated-gradient) update on `lambda` directly; both forms are
//! provided and kept numerically interchangeable.
//!
//! After every update `lambda` is projected onto `[lambda_plus, 1 - lambda_plus]`
//! and `rho` is recomputed from the projected weight.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// `rho` is saturated to `[-RHO_LIMIT, RHO_LIMIT]`. The logistic function is
/// within 1e-21 of its limits there, and the corner constraint keeps reachable
/// states far inside this range anyway.
pub const RHO_LIMIT: f64 = 50.0;

/// Default initial weight: the uniform prior `lambda(1) = 1/2`.
pub const DEFAULT_INITIAL_LAMBDA: f64 = 0.5;

/// Logistic function `1 / (1 + exp(-rho))`.
pub fn sigmoid(rho: f64) -> Result<f64> {
    ensure_finite("rho", rho)?;
    Ok(logistic(rho))
}

pub(crate) fn logistic(rho: f64) -> f64 {
    if rho >= 0.0 {
        1.0 / (1.0 + (-rho).exp())
    } else {
        let e = rho.exp();
        e / (1.0 + e)
    }
}

/// Inverse of the logistic function, `ln(lambda / (1 - lambda))`.
pub fn logit(lambda: f64) -> f64 {
    lambda.ln() - (1.0 - lambda).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureConfig {
    /// Amplitude bound `Y` on the desired signal and both constituent outputs.
    pub y_bound: f64,
    /// Corner parameter: `lambda` is kept in `[lambda_plus, 1 - lambda_plus]`.
    pub lambda_plus: f64,
    /// Step size `mu` of the gradient update on `rho`.
    pub learning_rate: f64,
    pub initial_lambda: f64,
}

impl MixtureConfig {
    /// Config starting from the uniform weight `lambda(1) = 1/2`.
    pub fn new(y_bound: f64, lambda_plus: f64, learning_rate: f64) -> Result<Self> {
        let cfg = MixtureConfig {
            y_bound,
            lambda_plus,
            learning_rate,
            initial_lambda: DEFAULT_INITIAL_LAMBDA,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_initial_lambda(mut self, initial_lambda: f64) -> Result<Self> {
        self.initial_lambda = initial_lambda;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.y_bound.is_finite() && self.y_bound > 0.0) {
            return Err(Error::field("y_bound", format!("must be positive, got {}", self.y_bound)));
        }
        if !(self.lambda_plus > 0.0 && self.lambda_plus < 0.5) {
            return Err(Error::field(
                "lambda_plus",
                format!("must lie in (0, 1/2), got {}", self.lambda_plus),
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::field(
                "learning_rate",
                format!("must be positive, got {}", self.learning_rate),
            ));
        }
        let (lo, hi) = self.lambda_range();
        if !(self.initial_lambda >= lo && self.initial_lambda <= hi) {
            return Err(Error::field(
                "initial_lambda",
                format!("must lie in [{lo}, {hi}], got {}", self.initial_lambda),
            ));
        }
        Ok(())
    }

    /// The feasible weight interval `[lambda_plus, 1 - lambda_plus]`.
    pub fn lambda_range(&self) -> (f64, f64) {
        (self.lambda_plus, 1.0 - self.lambda_plus)
    }
}

/// Weight state at the start of step `step_index + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureState {
    pub rho: f64,
    pub lambda: f64,
    /// Number of updates applied so far.
    pub step_index: u64,
}

impl MixtureState {
    pub fn from_lambda(lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(Error::invalid(format!("lambda must lie in (0, 1), got {lambda}")));
        }
        Ok(MixtureState {
            rho: logit(lambda),
            lambda,
            step_index: 0,
        })
    }

    pub fn from_rho(rho: f64) -> Result<Self> {
        Ok(MixtureState {
            rho,
            lambda: sigmoid(rho)?,
            step_index: 0,
        })
    }

    pub fn initial(cfg: &MixtureConfig) -> Self {
        MixtureState {
            rho: logit(cfg.initial_lambda),
            lambda: cfg.initial_lambda,
            step_index: 0,
        }
    }

    /// Weight vector `w = [lambda, 1 - lambda]` on the 2-simplex.
    pub fn weights(&self) -> [f64; 2] {
        [self.lambda, 1.0 - self.lambda]
    }

    /// Checks that `lambda` and `sigmoid(rho)` agree within `tol`.
    pub fn check_consistency(&self, tol: f64) -> Result<()> {
        let implied = sigmoid(self.rho)?;
        if (implied - self.lambda).abs() > tol {
            return Err(Error::Integrity(format!(
                "lambda = {} but sigmoid(rho = {}) = {implied}",
                self.lambda, self.rho
            )));
        }
        Ok(())
    }
}

/// One time step as seen by the mixture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub t: u64,
    pub y: f64,
    pub yhat1: f64,
    pub yhat2: f64,
    pub yhat: f64,
    pub e: f64,
}

impl SampleRecord {
    /// Forms the mixture prediction with the current weight and the error
    /// against `y`.
    pub fn observe(state: &MixtureState, y: f64, yhat1: f64, yhat2: f64) -> Self {
        let yhat = combine(state, yhat1, yhat2);
        SampleRecord {
            t: state.step_index + 1,
            y,
            yhat1,
            yhat2,
            yhat,
            e: y - yhat,
        }
    }
}

/// `lambda * yhat1 + (1 - lambda) * yhat2`.
pub fn combine(state: &MixtureState, yhat1: f64, yhat2: f64) -> f64 {
    state.lambda * yhat1 + (1.0 - state.lambda) * yhat2
}

/// Which of the two algebraically equivalent update forms drives the weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateRule {
    /// Gradient step on `rho`, then `lambda = sigmoid(rho)`.
    #[default]
    Gradient,
    /// Exponentiated-gradient step on `lambda` directly.
    Multiplicative,
}

/// Outcome of one clipped update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Update {
    pub state: MixtureState,
    /// `lambda(t+1)` before projection onto the feasible interval.
    pub unclipped_lambda: f64,
    pub clipped: bool,
}

fn saturate_rho(rho: f64) -> f64 {
    if rho.is_nan() {
        rho
    } else {
        rho.clamp(-RHO_LIMIT, RHO_LIMIT)
    }
}

/// Unprojected gradient step:
/// `rho(t+1) = rho(t) + mu * e * lambda * (1 - lambda) * (yhat1 - yhat2)`.
pub fn gradient_step(state: &MixtureState, mu: f64, rec: &SampleRecord) -> MixtureState {
    let k = state.lambda * (1.0 - state.lambda);
    let increment = mu * rec.e * k * (rec.yhat1 - rec.yhat2);
    if increment == 0.0 {
        return MixtureState {
            step_index: state.step_index + 1,
            ..*state
        };
    }
    let rho = saturate_rho(state.rho + increment);
    MixtureState {
        rho,
        lambda: logistic(rho),
        step_index: state.step_index + 1,
    }
}

/// Unprojected multiplicative step:
///
/// `lambda(t+1) = lambda * exp(c * yhat1) / (lambda * exp(c * yhat1) + (1 - lambda) * exp(c * yhat2))`
///
/// with `c = mu * e * lambda * (1 - lambda)`. The larger exponent is factored
/// out before exponentiating.
pub fn multiplicative_step(state: &MixtureState, mu: f64, rec: &SampleRecord) -> MixtureState {
    let lambda = state.lambda;
    let c = mu * rec.e * lambda * (1.0 - lambda);
    let (x1, x2) = (c * rec.yhat1, c * rec.yhat2);
    if x1 == x2 {
        return MixtureState {
            step_index: state.step_index + 1,
            ..*state
        };
    }
    let top = x1.max(x2);
    let first = lambda * (x1 - top).exp();
    let second = (1.0 - lambda) * (x2 - top).exp();
    let total = first + second;
    let next = first / total;
    let complement = second / total;

    // rho from both normalized weights, so no precision is lost in 1 - next.
    let rho = next.ln() - complement.ln();
    let saturated = saturate_rho(rho);
    let lambda = if saturated == rho { next } else { logistic(saturated) };
    MixtureState {
        rho: saturated,
        lambda,
        step_index: state.step_index + 1,
    }
}

/// Projects `lambda` onto `[lambda_plus, 1 - lambda_plus]` and recomputes
/// `rho`. The flag reports whether the projection moved `lambda`.
pub fn clip_lambda(state: &MixtureState, cfg: &MixtureConfig) -> (MixtureState, bool) {
    let (lo, hi) = cfg.lambda_range();
    let projected = state.lambda.clamp(lo, hi);
    if projected == state.lambda {
        return (*state, false);
    }
    let clipped = MixtureState {
        rho: logit(projected),
        lambda: projected,
        step_index: state.step_index,
    };
    (clipped, true)
}

fn finish(raw: MixtureState, cfg: &MixtureConfig) -> Update {
    let (state, clipped) = clip_lambda(&raw, cfg);
    Update {
        state,
        unclipped_lambda: raw.lambda,
        clipped,
    }
}

/// Gradient update on `rho` followed by corner clipping.
pub fn update_rho(state: &MixtureState, cfg: &MixtureConfig, rec: &SampleRecord) -> Update {
    finish(gradient_step(state, cfg.learning_rate, rec), cfg)
}

/// Multiplicative update on `lambda` followed by corner clipping.
pub fn update_lambda_direct(state: &MixtureState, cfg: &MixtureConfig, rec: &SampleRecord) -> Update {
    finish(multiplicative_step(state, cfg.learning_rate, rec), cfg)
}

/// Stateful driver: predict with the current weight, then update on the
/// observed error.
#[derive(Debug, Clone)]
pub struct Mixture {
    config: MixtureConfig,
    state: MixtureState,
    rule: UpdateRule,
}

impl Mixture {
    pub fn new(config: MixtureConfig) -> Result<Self> {
        config.validate()?;
        Ok(Mixture {
            state: MixtureState::initial(&config),
            config,
            rule: UpdateRule::default(),
        })
    }

    pub fn with_rule(mut self, rule: UpdateRule) -> Self {
        self.rule = rule;
        self
    }

    pub fn config(&self) -> &MixtureConfig {
        &self.config
    }

    pub fn state(&self) -> &MixtureState {
        &self.state
    }

    pub fn predict(&self, yhat1: f64, yhat2: f64) -> f64 {
        combine(&self.state, yhat1, yhat2)
    }

    /// Runs one full step. Inputs must be finite and the constituent
    /// outputs must lie in `[-Y, Y]`.
    pub fn step(&mut self, y: f64, yhat1: f64, yhat2: f64) -> Result<(SampleRecord, Update)> {
        ensure_finite("y", y)?;
        let bound = self.config.y_bound;
        for (name, v) in [("yhat1", yhat1), ("yhat2", yhat2)] {
            ensure_finite(name, v)?;
            if v.abs() > bound {
                return Err(Error::invalid(format!("{name} = {v} exceeds the bound Y = {bound}")));
            }
        }
        let rec = SampleRecord::observe(&self.state, y, yhat1, yhat2);
        let update = match self.rule {
            UpdateRule::Gradient => update_rho(&self.state, &self.config, &rec),
            UpdateRule::Multiplicative => update_lambda_direct(&self.state, &self.config, &rec),
        };
        self.state = update.state;
        Ok((rec, update))
    }
}
