//! Complete mixture runs kept in memory for auditing.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::mixture::{Mixture, MixtureConfig, MixtureState, SampleRecord, UpdateRule};

/// History of one run: `records[i]` was produced from `states[i]`, and
/// `states[i + 1]` is the (possibly clipped) state after it.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Trace {
    pub records: Vec<SampleRecord>,
    pub states: Vec<MixtureState>,
    pub clipped: Vec<bool>,
    /// Pre-projection weight of each update.
    pub unclipped_lambda: Vec<f64>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn clip_events(&self) -> usize {
        self.clipped.iter().filter(|&&c| c).count()
    }

    pub fn ys(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.y).collect()
    }

    pub fn yhat1s(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.yhat1).collect()
    }

    pub fn yhat2s(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.yhat2).collect()
    }

    pub fn yhats(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.yhat).collect()
    }
}

/// Drives a fresh mixture over `(y, yhat1, yhat2)` triples.
pub fn run_mixture<I>(config: MixtureConfig, rule: UpdateRule, samples: I) -> Result<Trace>
where
    I: IntoIterator<Item = (f64, f64, f64)>,
{
    let mut mixture = Mixture::new(config)?.with_rule(rule);
    let samples = samples.into_iter();
    let mut trace = Trace {
        records: Vec::with_capacity(samples.size_hint().0),
        ..Trace::default()
    };
    trace.states.push(*mixture.state());
    for (y, yhat1, yhat2) in samples {
        let (rec, update) = mixture.step(y, yhat1, yhat2)?;
        trace.records.push(rec);
        trace.states.push(update.state);
        trace.clipped.push(update.clipped);
        trace.unclipped_lambda.push(update.unclipped_lambda);
    }
    Ok(trace)
}
