//! Constituent filters that feed the mixture.
//!
//! Every filter emits its prediction hard-clipped to `[-Y, Y]`. Adaptive
//! filters update their taps with the unclipped output, so clipping never
//! changes their dynamics.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Regularizer added to the NLMS normalization.
pub const NLMS_DELTA: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FilterKind {
    Lms { step_size: f64, order: usize },
    Nlms { step_size: f64, order: usize },
    Constant { value: f64 },
    /// Predicts the previous desired sample.
    DelayedCopy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    #[serde(flatten)]
    pub kind: FilterKind,
    pub clip_bound: f64,
}

impl FilterSpec {
    pub fn new(kind: FilterKind, clip_bound: f64) -> Result<Self> {
        let spec = FilterSpec { kind, clip_bound };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.clip_bound.is_finite() && self.clip_bound > 0.0) {
            return Err(Error::field("clip_bound", format!("must be positive, got {}", self.clip_bound)));
        }
        match self.kind {
            FilterKind::Lms { step_size, order } | FilterKind::Nlms { step_size, order } => {
                if !(step_size.is_finite() && step_size >= 0.0) {
                    return Err(Error::field("step_size", format!("must be non-negative, got {step_size}")));
                }
                if order == 0 {
                    return Err(Error::field("order", "must be at least 1"));
                }
            }
            FilterKind::Constant { value } => {
                if value.is_nan() || value.abs() > self.clip_bound {
                    return Err(Error::field(
                        "constant_value",
                        format!("{value} is outside [-{b}, {b}]", b = self.clip_bound),
                    ));
                }
            }
            FilterKind::DelayedCopy => {}
        }
        Ok(())
    }

    /// Number of past samples the filter reads.
    pub fn order(&self) -> usize {
        match self.kind {
            FilterKind::Lms { order, .. } | FilterKind::Nlms { order, .. } => order,
            FilterKind::Constant { .. } | FilterKind::DelayedCopy => 0,
        }
    }
}

/// Compact form used on the command line: `lms:<step>:<order>`,
/// `nlms:<step>:<order>`, `constant:<value>` or `delayed-copy`. The clip
/// bound is attached separately.
impl FromStr for FilterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let num = |i: usize| -> Result<f64> {
            parts
                .get(i)
                .ok_or_else(|| Error::field("filters", format!("`{s}` is missing a parameter")))?
                .parse::<f64>()
                .map_err(|e| Error::field("filters", format!("`{s}`: {e}")))
        };
        let order = |i: usize| -> Result<usize> {
            parts
                .get(i)
                .ok_or_else(|| Error::field("filters", format!("`{s}` is missing the order")))?
                .parse::<usize>()
                .map_err(|e| Error::field("filters", format!("`{s}`: {e}")))
        };
        let kind = match parts[0] {
            "lms" if parts.len() == 3 => FilterKind::Lms { step_size: num(1)?, order: order(2)? },
            "nlms" if parts.len() == 3 => FilterKind::Nlms { step_size: num(1)?, order: order(2)? },
            "constant" if parts.len() == 2 => FilterKind::Constant { value: num(1)? },
            "delayed-copy" if parts.len() == 1 => FilterKind::DelayedCopy,
            _ => return Err(Error::field("filters", format!("unrecognized filter `{s}`"))),
        };
        Ok(kind)
    }
}

impl fmt::Display for FilterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FilterKind::Lms { step_size, order } => write!(f, "lms:{step_size}:{order}"),
            FilterKind::Nlms { step_size, order } => write!(f, "nlms:{step_size}:{order}"),
            FilterKind::Constant { value } => write!(f, "constant:{value}"),
            FilterKind::DelayedCopy => f.write_str("delayed-copy"),
        }
    }
}

/// A running constituent filter.
#[derive(Debug, Clone)]
pub struct Filter {
    spec: FilterSpec,
    taps: Vec<f64>,
    previous: f64,
}

impl Filter {
    pub fn new(spec: FilterSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Filter {
            taps: vec![0.0; spec.order()],
            spec,
            previous: 0.0,
        })
    }

    /// Starts an adaptive filter from the given taps.
    pub fn with_taps(spec: FilterSpec, taps: Vec<f64>) -> Result<Self> {
        let mut filter = Filter::new(spec)?;
        if taps.len() != filter.taps.len() {
            return Err(Error::invalid(format!(
                "expected {} taps, got {}",
                filter.taps.len(),
                taps.len()
            )));
        }
        filter.taps = taps;
        Ok(filter)
    }

    pub fn spec(&self) -> &FilterSpec {
        &self.spec
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    /// Emits the clipped prediction for this step, then adapts on `desired`.
    ///
    /// For LMS/NLMS `regressor` must hold exactly `order` values; other
    /// kinds ignore it.
    pub fn step(&mut self, regressor: &[f64], desired: f64) -> Result<f64> {
        let raw = match self.spec.kind {
            FilterKind::Lms { step_size, .. } => {
                self.check_len(regressor)?;
                let out = dot(&self.taps, regressor);
                let gain = step_size * (desired - out);
                axpy(&mut self.taps, gain, regressor);
                out
            }
            FilterKind::Nlms { step_size, .. } => {
                self.check_len(regressor)?;
                let out = dot(&self.taps, regressor);
                let power = dot(regressor, regressor);
                let gain = step_size * (desired - out) / (NLMS_DELTA + power);
                axpy(&mut self.taps, gain, regressor);
                out
            }
            FilterKind::Constant { value } => value,
            FilterKind::DelayedCopy => {
                let out = self.previous;
                self.previous = desired;
                out
            }
        };
        let b = self.spec.clip_bound;
        Ok(raw.clamp(-b, b))
    }

    fn check_len(&self, regressor: &[f64]) -> Result<()> {
        if regressor.len() != self.taps.len() {
            return Err(Error::invalid(format!(
                "regressor has {} entries, filter order is {}",
                regressor.len(),
                self.taps.len()
            )));
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(acc: &mut [f64], scale: f64, x: &[f64]) {
    for (a, v) in acc.iter_mut().zip(x) {
        *a += scale * v;
    }
}

/// Tapped delay line: holds `[s(t-1), s(t-2), ...]`, zero-filled at start.
#[derive(Debug, Clone)]
pub struct DelayLine {
    values: Vec<f64>,
}

impl DelayLine {
    pub fn new(len: usize) -> Self {
        DelayLine { values: vec![0.0; len] }
    }

    pub fn window(&self, order: usize) -> &[f64] {
        &self.values[..order]
    }

    pub fn push(&mut self, sample: f64) {
        if self.values.is_empty() {
            return;
        }
        self.values.rotate_right(1);
        self.values[0] = sample;
    }
}
